use spdelab_harness::uniqueness::{run_uniqueness_mollification, run_uniqueness_refinement};
use spdelab_harness::{ExperimentConfig, HarnessError, RawConfig};

const BASE: &str = "\
experiment = uniqueness
grid.n_points = 63
grid.n_modes = 32
solver.dt = 1e-3
solver.T = 1
reaction.kind = cubic
drift.variant = running_max
drift.b = power_sign
drift.alpha = 0.5
noise.levels = 4
mollification.ms = 4,8,16,32
";

fn config(overrides: &[&str]) -> ExperimentConfig {
    let mut raw = RawConfig::parse(BASE).unwrap();
    for o in overrides {
        raw.apply_override(o).unwrap();
    }
    ExperimentConfig::from_raw(raw).unwrap()
}

fn sup_gaps(gaps: &[spdelab_harness::uniqueness::GapPoint]) -> Vec<f64> {
    gaps.iter().map(|g| g.sup_gap).collect()
}

#[test]
fn zero_drift_refines_at_first_order() {
    let r = run_uniqueness_refinement(&config(&["drift.b=constant", "drift.value=0"])).unwrap();
    let slope = r.slope.unwrap();
    assert!(r.strictly_decreasing(), "{:?}", sup_gaps(&r.gaps));
    assert!((0.8..=1.2).contains(&slope), "{slope}");
}

#[test]
fn running_max_refinement_converges() {
    let r = run_uniqueness_refinement(&config(&["noise.paths=8"])).unwrap();
    assert_eq!(r.gaps.len(), 3);
    assert!(r.strictly_decreasing(), "{:?}", sup_gaps(&r.gaps));
    assert!(r.slope.unwrap() > 0.4);
    assert!(r.shared_noise());
    assert_eq!(r.seeds.len(), 8);
    assert!(r.curves.iter().all(|c| c.y >= 0.0));
    for (row, gap) in r.provenance.iter().zip(&r.seeds) {
        assert!(row.iter().all(|p| p.starts_with(&format!("seed={gap}|"))), "{row:?}");
    }
}

#[test]
fn distinct_seeds_give_distinct_gaps() {
    let a = run_uniqueness_refinement(&config(&["noise.seed=1"])).unwrap();
    let b = run_uniqueness_refinement(&config(&["noise.seed=2"])).unwrap();
    assert_ne!(sup_gaps(&a.gaps), sup_gaps(&b.gaps));
}

#[test]
fn constant_drift_is_untouched_by_mollification() {
    let r = run_uniqueness_mollification(&config(&["drift.b=constant", "drift.value=0.4"])).unwrap();
    assert!(r.gaps.iter().chain(&r.reference_gaps).all(|g| g.sup_gap == 0.0 && g.h_moment == 0.0));
    assert_eq!(r.slope, None);
}

#[test]
fn point_eval_mollification_gap_shrinks_with_m() {
    let cfg = config(&["drift.variant=point_eval"]);
    let r = run_uniqueness_mollification(&cfg).unwrap();
    assert!(r.strictly_decreasing(), "{:?}", sup_gaps(&r.reference_gaps));
    assert!(r.slope.unwrap() < 0.0);
    assert!(r.shared_noise());

    // at m = n_modes the gap is within 10x of the solver's own error at dt,
    // measured as the dt vs dt/2 refinement gap on the same path
    let at_full = r.reference_gaps.last().unwrap();
    assert_eq!(at_full.abscissa, 32.0);
    let solver = run_uniqueness_refinement(&cfg).unwrap().gaps[0].sup_gap;
    assert!(at_full.sup_gap < 10.0 * solver, "{} vs {solver}", at_full.sup_gap);
}

#[test]
fn blow_up_names_the_level() {
    let err = run_uniqueness_refinement(&config(&[
        "solver.blow_up_threshold=0.5",
        "initial.kind=mode",
        "initial.value=0.45",
    ]))
    .unwrap_err();
    assert!(matches!(err, HarnessError::BlowUp { .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("level"), "{err}");
}

#[test]
fn mollification_indices_must_increase() {
    let err = run_uniqueness_mollification(&config(&["mollification.ms=8,4"])).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}

#[test]
fn missing_drift_is_a_config_error() {
    let err = run_uniqueness_refinement(&config(&["drift.variant=none"])).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}
