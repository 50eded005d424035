//! Experiment dispatch. Every experiment renders its outputs in memory as
//! `(file name, bytes)` pairs; writing them is a separate step, which keeps
//! replay comparisons free of the file system.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use spdelab_core::noise::NoisePath;
use spdelab_core::parallel::map_indexed;
use spdelab_core::rng::sample_seed;
use spdelab_core::semigroup::{
    bismut_elworthy_derivative, estimate_pt, estimate_resolvent, smoothing_rate_fit, vectorial_pt,
    EstimatorResult, ResolventOptions,
};
use spdelab_core::solver::{kernel_square_sum, moment_estimates, solve_mild, SolverConfig};
use spdelab_core::spectral::gaussian_peak;
use spdelab_core::{stats, Trajectory};

use crate::config::{ConfigError, EstimatorOp, Experiment, ExperimentConfig, OutputFormat, UniquenessRoute};
use crate::emit::{long_csv, render_table, results_csv, verify_csv, write_file, LongRow, ResultRow, VerifyRow};
use crate::error::{core_err, Result};
use crate::uniqueness::{run_uniqueness_mollification, run_uniqueness_refinement, UniquenessReport};
use crate::verify::{hard_failures, run_verify_suite};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
    pub results: Vec<ResultRow>,
    pub verify: Vec<VerifyRow>,
    /// One human-readable line per headline number.
    pub summary: Vec<String>,
}

impl Artifacts {
    pub fn hard_failures(&self) -> usize {
        hard_failures(&self.verify)
    }

    pub fn file(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        self.files
            .iter()
            .map(|(name, bytes)| {
                let p = dir.join(name);
                write_file(&p, bytes).map(|_| p)
            })
            .collect()
    }

    fn long(&mut self, stem: &str, rows: &[LongRow], format: OutputFormat) {
        self.files.extend(render_table(stem, || long_csv(rows), &rows, format));
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) {
        self.files.push((name.to_string(), crate::emit::to_json(value).into_bytes()));
    }
}

struct Ledger<'a> {
    cfg: &'a ExperimentConfig,
    rows: Vec<ResultRow>,
}

impl Ledger<'_> {
    fn push(&mut self, op: &str, mean: f64, stderr: f64, n: usize, seed: u64, wall_time: f64) {
        self.rows.push(ResultRow {
            experiment_id: self.cfg.experiment.name().to_string(),
            op: op.to_string(),
            params_digest: self.cfg.digest(),
            mean,
            stderr,
            n,
            seed,
            wall_time: self.cfg.output.record_wall_time.then_some(wall_time),
        });
    }

    fn estimate(&mut self, op: &str, r: &EstimatorResult) {
        self.push(op, r.mean, r.stderr, r.n_samples, r.seed, r.wall_time);
    }
}

/// Runs the configured experiment.
pub fn execute(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let mut art = Artifacts::default();
    let mut ledger = Ledger {
        cfg,
        rows: Vec::new(),
    };
    match cfg.experiment {
        Experiment::Simulate => simulate(cfg, &mut art, &mut ledger)?,
        Experiment::Uniqueness => uniqueness(cfg, &mut art, &mut ledger)?,
        Experiment::Estimate => estimate(cfg, &mut art, &mut ledger)?,
        Experiment::Verify => verify(cfg, &mut art),
        Experiment::Kernels => kernels(cfg, &mut art, &mut ledger)?,
    }
    let rows = ledger.rows;
    art.files
        .extend(render_table("results", || results_csv(&rows), &rows, cfg.output.format));
    art.results = rows;
    art.files
        .push(("config.resolved".into(), cfg.raw.canonical().into_bytes()));
    Ok(art)
}

fn path_seed(cfg: &ExperimentConfig, i: usize) -> u64 {
    if i == 0 {
        cfg.noise.seed
    } else {
        sample_seed(cfg.noise.seed, i as u64)
    }
}

fn simulate(cfg: &ExperimentConfig, art: &mut Artifacts, ledger: &mut Ledger) -> Result<()> {
    let start = Instant::now();
    let op = cfg.operator();
    let drift = cfg.drift(&op)?;
    let paths = cfg.noise_paths;
    let ensemble: Vec<Trajectory> = map_indexed(cfg.workers, paths, |i| {
        let path = NoisePath::sample(&cfg.noise.with_seed(path_seed(cfg, i)), &op)?;
        solve_mild(&op, &cfg.x0, &cfg.reaction, drift.as_ref(), &path, &cfg.solver)
    })
    .map_err(core_err("simulate"))?;

    let mut rows = Vec::new();
    for (i, traj) in ensemble.iter().enumerate() {
        if matches!(cfg.output.format, OutputFormat::Csv | OutputFormat::Both) {
            let mut csv = Vec::new();
            traj.write_csv(&mut csv).expect("in-memory write");
            art.files.push((format!("trajectory_{i}.csv"), csv));
        }
        let mut bin = Vec::new();
        traj.write_binary(&mut bin).expect("in-memory write");
        art.files.push((format!("trajectory_{i}.bin"), bin));
        for (t, x) in traj.times.iter().zip(&traj.states) {
            rows.push(LongRow::new(format!("sup_norm[{i}]"), *t, x.sup_norm()));
            rows.push(LongRow::new(format!("h_norm[{i}]"), *t, x.h_norm()));
        }
    }
    art.long("norms", &rows, cfg.output.format);

    let sups: Vec<f64> = ensemble.iter().map(Trajectory::sup_norm).collect();
    let (mean, se) = stats::mean_stderr(&sups);
    let elapsed = start.elapsed().as_secs_f64();
    ledger.push("sup_norm", mean, se, paths, cfg.noise.seed, elapsed);
    art.summary.push(format!("mean sup_t |X|_E over {paths} path(s): {mean:.6e} (stderr {se:.2e})"));
    if paths >= 100 {
        let report = moment_estimates(&ensemble, &[1.0, 2.0, 4.0]).map_err(core_err("moments"))?;
        for (p, m) in &report.moments {
            ledger.push(&format!("moment_p{p}"), *m, f64::NAN, paths, cfg.noise.seed, elapsed);
        }
    }
    Ok(())
}

fn uniqueness(cfg: &ExperimentConfig, art: &mut Artifacts, ledger: &mut Ledger) -> Result<()> {
    let mut report = |name: &str, r: UniquenessReport, art: &mut Artifacts| {
        art.long(&format!("uniqueness_{name}"), &r.rows(), cfg.output.format);
        let gaps: Vec<String> = r.gaps.iter().map(|g| format!("{:.3e}", g.sup_gap)).collect();
        art.summary.push(format!(
            "{name}: gaps [{}], slope {}, strictly decreasing: {}",
            gaps.join(", "),
            r.slope.map_or("n/a".into(), |s| format!("{s:.3}")),
            r.strictly_decreasing()
        ));
        ledger.push(
            &format!("{name}_slope"),
            r.slope.unwrap_or(f64::NAN),
            r.slope_stderr.unwrap_or(f64::NAN),
            r.seeds.len(),
            cfg.noise.seed,
            0.0,
        );
        art.json(&format!("uniqueness_{name}_report.json"), &r);
    };
    if matches!(cfg.route, UniquenessRoute::Refinement | UniquenessRoute::Both) {
        report("refinement", run_uniqueness_refinement(cfg)?, art);
    }
    if matches!(cfg.route, UniquenessRoute::Mollification | UniquenessRoute::Both) {
        report("mollification", run_uniqueness_mollification(cfg)?, art);
    }
    Ok(())
}

fn estimate(cfg: &ExperimentConfig, art: &mut Artifacts, ledger: &mut Ledger) -> Result<()> {
    let model = cfg.model()?;
    let p = &cfg.estimator;
    let x = &cfg.x0;
    let op = &model.op;
    let direction = || {
        op.position_of(p.direction_mode)
            .map(|pos| op.eigenfunction(pos))
            .ok_or_else(|| ConfigError::Invalid(format!("mode {} is not retained", p.direction_mode)))
    };
    match p.op {
        EstimatorOp::Pt => {
            let r = estimate_pt(&model, &p.functional, x, p.t, p.n).map_err(core_err("estimate pt"))?;
            art.summary.push(format!("P_t phi(x) = {:.6e} +- {:.2e}", r.mean, r.stderr));
            ledger.estimate("pt", &r);
        }
        EstimatorOp::Derivative => {
            let h = direction()?;
            let r = bismut_elworthy_derivative(&model, &p.functional, x, &h, p.t, p.n)
                .map_err(core_err("estimate derivative"))?;
            art.summary.push(format!("<D P_t phi(x), h> = {:.6e} +- {:.2e}", r.mean, r.stderr));
            ledger.estimate("derivative", &r);
        }
        EstimatorOp::Resolvent => {
            let opts = ResolventOptions {
                tol: p.tol,
                phi_bound: p.phi_bound,
                ..Default::default()
            };
            let r = estimate_resolvent(&model, &p.functional, x, p.lambda, &opts, p.n)
                .map_err(core_err("estimate resolvent"))?;
            art.summary.push(format!(
                "R(lambda) phi(x) = {:.6e}, budget {:.2e}",
                r.estimate.mean, r.budget
            ));
            ledger.estimate("resolvent", &r.estimate);
            let rows = vec![
                LongRow::new("tail", p.lambda, r.tail),
                LongRow::new("quadrature_error", p.lambda, r.quadrature_error),
                LongRow::new("budget", p.lambda, r.budget),
                LongRow::new("t_max", p.lambda, r.t_max),
            ];
            art.long("resolvent", &rows, cfg.output.format);
        }
        EstimatorOp::Vectorial => {
            let big_phi = cfg
                .base_drift
                .as_ref()
                .ok_or_else(|| ConfigError::Invalid("vectorial estimate needs drift.variant as Phi".into()))?;
            let model = model.clone().with_drift(None);
            let r = vectorial_pt(&model, big_phi, x, p.t, p.n).map_err(core_err("estimate vectorial"))?;
            let nodes = op.grid().nodes();
            let mut rows = Vec::new();
            for (i, xi) in nodes.iter().enumerate() {
                rows.push(LongRow::new("mean", *xi, r.mean.values()[i]));
                rows.push(LongRow::new("stderr", *xi, r.stderr.values()[i]));
            }
            art.long("vectorial", &rows, cfg.output.format);
            let worst = r.stderr.sup_norm();
            art.summary.push(format!("|E Phi(X_t)|_E = {:.6e}", r.mean.sup_norm()));
            ledger.push("vectorial_sup", r.mean.sup_norm(), worst, r.n_samples, r.seed, r.wall_time);
        }
        EstimatorOp::Smoothing => {
            let start = Instant::now();
            let fit = smoothing_rate_fit(&model, &p.functional, x, &p.times, &[direction()?], p.n)
                .map_err(core_err("smoothing fit"))?;
            let rows: Vec<LongRow> = fit
                .points
                .iter()
                .flat_map(|q| [LongRow::new("derivative", q.t, q.value), LongRow::new("stderr", q.t, q.stderr)])
                .collect();
            art.long("smoothing", &rows, cfg.output.format);
            art.summary.push(format!("smoothing slope {:.3} +- {:.3}", fit.slope, fit.slope_stderr));
            ledger.push("smoothing_slope", fit.slope, fit.slope_stderr, p.n, model.seed, start.elapsed().as_secs_f64());
        }
    }
    Ok(())
}

fn verify(cfg: &ExperimentConfig, art: &mut Artifacts) {
    let rows = run_verify_suite(cfg);
    for r in &rows {
        art.summary.push(format!(
            "[{}] {} ({:?}): observed {} vs {}",
            if r.pass { "pass" } else { "FAIL" },
            r.check,
            r.kind,
            r.observed,
            r.bound
        ));
    }
    art.files
        .extend(render_table("verify", || verify_csv(&rows), &rows, cfg.output.format));
    art.verify = rows;
}

/// Heat-kernel peak against the Gaussian bound on `kernels.times`, and the
/// square sum of the linearized flow along one path of the configured model.
fn kernels(cfg: &ExperimentConfig, art: &mut Artifacts, ledger: &mut Ledger) -> Result<()> {
    let start = Instant::now();
    let op = cfg.operator();
    let mut rows = Vec::new();
    let mut worst = 0.0_f64;
    for &t in &cfg.kernel_times {
        let k = op.heat_kernel(t).map_err(core_err(format!("heat kernel at t = {t}")))?;
        let ratio = k.max() / gaussian_peak(t);
        worst = worst.max(ratio);
        rows.push(LongRow::new("kernel_max", t, k.max()));
        rows.push(LongRow::new("kernel_min", t, k.min()));
        rows.push(LongRow::new("gaussian_peak", t, gaussian_peak(t)));
        rows.push(LongRow::new("ratio", t, ratio));
    }
    art.summary.push(format!("max K_t / (4 pi t)^(-1/2) = {worst:.9}"));
    ledger.push("kernel_ratio_max", worst, 0.0, cfg.kernel_times.len(), 0, start.elapsed().as_secs_f64());

    let path = NoisePath::sample(&cfg.noise, &op).map_err(core_err("square sum"))?;
    let dense = SolverConfig {
        record_stride: 1,
        ..cfg.solver.clone()
    };
    let base = solve_mild(&op, &cfg.x0, &cfg.reaction, None, &path, &dense).map_err(core_err("square sum"))?;
    let s = kernel_square_sum(&op, &base, &cfg.reaction).map_err(core_err("square sum"))?;
    let stride = cfg.solver.record_stride.max(1);
    for (j, (t, v)) in s.iter().enumerate() {
        if j % stride == 0 || j + 1 == s.len() {
            rows.push(LongRow::new("square_sum", *t, *v));
        }
    }
    let window: Vec<(f64, f64)> = s.iter().copied().filter(|(t, _)| *t >= 0.01 - 1e-12 && *t <= 1.0 + 1e-12).collect();
    if window.len() >= 2 {
        let fit = stats::loglog_fit(
            &window.iter().map(|p| p.0).collect::<Vec<_>>(),
            &window.iter().map(|p| p.1).collect::<Vec<_>>(),
        );
        art.summary.push(format!("square-sum t-exponent on [0.01, 1]: {:.3}", fit.slope));
        ledger.push("square_sum_exponent", fit.slope, fit.slope_stderr, window.len(), cfg.noise.seed, start.elapsed().as_secs_f64());
    }
    art.long("kernels", &rows, cfg.output.format);
    Ok(())
}
