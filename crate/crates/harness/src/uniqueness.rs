//! Shared-noise convergence experiments.
//!
//! Both routes solve the perturbed equation several times on one Brownian
//! path and measure how far the solutions drift apart. Gaps that shrink under
//! refinement (or as the mollified drift approaches `B`) show the numerical
//! solutions forming a Cauchy family on that path. This is evidence for a
//! single pathwise limit, not a proof of uniqueness.

use serde::Serialize;

use spdelab_core::noise::{NoisePath, NoisePathSpec};
use spdelab_core::parallel::map_indexed;
use spdelab_core::rng::sample_seed;
use spdelab_core::solver::{solve_mild, SolverConfig};
use spdelab_core::{mollify_drift, stats, Error as CoreError, HolderDrift, Trajectory};

use crate::config::{ConfigError, ExperimentConfig};
use crate::emit::LongRow;
use crate::error::{core_err, Result};

/// Power of the `H` gap moment.
pub const GAP_POWER: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Refinement,
    Mollification,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapPoint {
    pub label: String,
    /// `dt` of the coarser run, or the larger `m`.
    pub abscissa: f64,
    /// `sup_t |Y1 - Y2|_E`, averaged over paths.
    pub sup_gap: f64,
    /// `sup_t |Y1 - Y2|_H^p`, averaged over paths.
    pub h_moment: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub route: Route,
    pub seeds: Vec<u64>,
    /// Noise provenance of every run, one row per path.
    pub provenance: Vec<Vec<String>>,
    /// Gaps between neighbouring runs.
    pub gaps: Vec<GapPoint>,
    /// Gaps against the reference run: the finest level, or the unmollified drift.
    pub reference_gaps: Vec<GapPoint>,
    /// Running `sup_{s <= t} |Y1 - Y2|_E` on the first path, one curve per neighbour pair.
    pub curves: Vec<LongRow>,
    /// Log-log slope of the neighbour gaps (refinement) or reference gaps
    /// (mollification) against the abscissa. `None` when a gap is zero.
    pub slope: Option<f64>,
    pub slope_stderr: Option<f64>,
}

impl UniquenessReport {
    pub fn strictly_decreasing(&self) -> bool {
        let g: Vec<f64> = match self.route {
            // coarse pairs come first
            Route::Refinement => self.gaps.iter().map(|g| g.sup_gap).collect(),
            Route::Mollification => self.reference_gaps.iter().map(|g| g.sup_gap).collect(),
        };
        g.windows(2).all(|w| w[1] < w[0])
    }

    /// Every compared run was driven by the same Brownian path.
    pub fn shared_noise(&self) -> bool {
        let seed = |s: &String| s.split('|').next().map(str::to_string);
        self.provenance
            .iter()
            .all(|runs| runs.windows(2).all(|w| seed(&w[0]) == seed(&w[1])))
    }

    /// Long-format rows for emission: gap tables first, then curves.
    pub fn rows(&self) -> Vec<LongRow> {
        let mut rows = Vec::new();
        for (name, set) in [("gap", &self.gaps), ("reference_gap", &self.reference_gaps)] {
            for g in set {
                rows.push(LongRow::new(format!("{name}_sup_e[{}]", g.label), g.abscissa, g.sup_gap));
                rows.push(LongRow::new(format!("{name}_h_pow[{}]", g.label), g.abscissa, g.h_moment));
            }
        }
        if let (Some(s), Some(se)) = (self.slope, self.slope_stderr) {
            rows.push(LongRow::new("slope", 0.0, s));
            rows.push(LongRow::new("slope_stderr", 0.0, se));
        }
        rows.extend(self.curves.iter().cloned());
        rows
    }
}

fn provenance(spec: &NoisePathSpec) -> String {
    format!("seed={}|level={}|dt={}", spec.seed, spec.level, spec.dt)
}

fn path_seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.noise_paths)
        .map(|i| {
            if i == 0 {
                cfg.noise.seed
            } else {
                sample_seed(cfg.noise.seed, i as u64)
            }
        })
        .collect()
}

fn gap_stats(a: &Trajectory, b: &Trajectory) -> (f64, f64) {
    let mut sup_e = 0.0_f64;
    let mut sup_h = 0.0_f64;
    for (x, y) in a.states.iter().zip(&b.states) {
        let d = x - y;
        sup_e = sup_e.max(d.sup_norm());
        sup_h = sup_h.max(d.h_norm());
    }
    (sup_e, sup_h.powf(GAP_POWER))
}

fn running_sup(a: &Trajectory, b: &Trajectory, label: &str) -> Vec<LongRow> {
    let mut run = 0.0_f64;
    a.times
        .iter()
        .zip(a.states.iter().zip(&b.states))
        .map(|(&t, (x, y))| {
            run = run.max((x - y).sup_norm());
            LongRow::new(format!("running_sup[{label}]"), t, run)
        })
        .collect()
}

/// Runs `jobs` (path index, run index) and returns trajectories indexed
/// `[path][run]`. A failure names the first failing run.
fn run_grid<F>(
    cfg: &ExperimentConfig,
    runs: usize,
    describe: impl Fn(usize) -> String,
    job: F,
) -> Result<Vec<Vec<Trajectory>>>
where
    F: Fn(u64, usize) -> std::result::Result<Trajectory, CoreError> + Sync,
{
    let seeds = path_seeds(cfg);
    let total = seeds.len() * runs;
    let out = map_indexed(cfg.workers, total, |i| Ok(job(seeds[i / runs], i % runs)))
        .map_err(core_err("uniqueness"))?;
    let mut grid = vec![Vec::with_capacity(runs); seeds.len()];
    for (i, r) in out.into_iter().enumerate() {
        let traj = r.map_err(core_err(format!(
            "path {} ({}), {}",
            i / runs,
            seeds[i / runs],
            describe(i % runs)
        )))?;
        grid[i / runs].push(traj);
    }
    Ok(grid)
}

fn averaged(grid: &[Vec<Trajectory>], i: usize, j: usize) -> (f64, f64) {
    let (e, h): (Vec<f64>, Vec<f64>) = grid.iter().map(|runs| gap_stats(&runs[i], &runs[j])).unzip();
    (stats::mean(&e), stats::mean(&h))
}

fn fit(x: &[f64], y: &[f64]) -> (Option<f64>, Option<f64>) {
    if y.len() < 2 || y.iter().any(|&v| !(v > 0.0)) {
        return (None, None);
    }
    let f = stats::loglog_fit(x, y);
    (Some(f.slope), Some(f.slope_stderr))
}

fn require_drift(cfg: &ExperimentConfig) -> Result<&HolderDrift> {
    cfg.base_drift.as_ref().ok_or_else(|| {
        ConfigError::Invalid("uniqueness experiments need a drift (drift.variant)".into()).into()
    })
}

/// Solves at `dt, dt/2, ..., dt/2^(L-1)` (`L = noise.levels`) on one
/// bridge-refined Brownian path and compares neighbouring levels at the
/// coarse time grid.
pub fn run_uniqueness_refinement(cfg: &ExperimentConfig) -> Result<UniquenessReport> {
    require_drift(cfg)?;
    let op = cfg.operator();
    let drift = cfg.drift(&op)?;
    let levels = cfg.noise_levels as usize;
    let dt_of = |l: usize| cfg.solver.dt / (1u64 << l) as f64;
    let grid = run_grid(
        cfg,
        levels,
        |l| format!("refinement level {l} (dt = {})", dt_of(l)),
        |seed, l| {
            let mut path = NoisePath::sample(&cfg.noise.with_seed(seed), &op)?;
            for _ in 0..l {
                path = path.refine();
            }
            let solver = SolverConfig {
                dt: dt_of(l),
                record_stride: 1 << l,
                ..cfg.solver.clone()
            };
            solve_mild(&op, &cfg.x0, &cfg.reaction, drift.as_ref(), &path, &solver)
        },
    )?;

    let mut gaps = Vec::new();
    let mut curves = Vec::new();
    for l in 0..levels - 1 {
        let label = format!("dt={}|dt={}", dt_of(l), dt_of(l + 1));
        let (sup_gap, h_moment) = averaged(&grid, l, l + 1);
        curves.extend(running_sup(&grid[0][l], &grid[0][l + 1], &label));
        gaps.push(GapPoint {
            label,
            abscissa: dt_of(l),
            sup_gap,
            h_moment,
        });
    }
    let reference_gaps = (0..levels - 1)
        .map(|l| {
            let (sup_gap, h_moment) = averaged(&grid, l, levels - 1);
            GapPoint {
                label: format!("dt={}|finest", dt_of(l)),
                abscissa: dt_of(l),
                sup_gap,
                h_moment,
            }
        })
        .collect();
    let (slope, slope_stderr) = fit(
        &gaps.iter().map(|g| g.abscissa).collect::<Vec<_>>(),
        &gaps.iter().map(|g| g.sup_gap).collect::<Vec<_>>(),
    );
    Ok(UniquenessReport {
        route: Route::Refinement,
        seeds: path_seeds(cfg),
        provenance: grid
            .iter()
            .map(|runs| runs.iter().map(|t| provenance(&t.noise_provenance)).collect())
            .collect(),
        gaps,
        reference_gaps,
        curves,
        slope,
        slope_stderr,
    })
}

/// Solves with `B_m` for every `m` in `mollification.ms` and with `B` itself,
/// all on one noise path at the base step.
pub fn run_uniqueness_mollification(cfg: &ExperimentConfig) -> Result<UniquenessReport> {
    let base = require_drift(cfg)?;
    let op = cfg.operator();
    let ms = &cfg.mollification_ms;
    if ms.is_empty() || ms.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ConfigError::Invalid("mollification.ms must be strictly increasing".into()).into());
    }
    let drifts: Vec<HolderDrift> = ms
        .iter()
        .map(|&m| mollify_drift(base, &op, m, cfg.quadrature_samples, cfg.drift_seed))
        .chain(std::iter::once(Ok(base.clone())))
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let runs = drifts.len();
    let grid = run_grid(
        cfg,
        runs,
        |r| match ms.get(r) {
            Some(m) => format!("mollification m = {m}"),
            None => "unmollified drift".to_string(),
        },
        |seed, r| {
            let path = NoisePath::sample(&cfg.noise.with_seed(seed), &op)?;
            let solver = SolverConfig {
                record_stride: 1,
                ..cfg.solver.clone()
            };
            solve_mild(&op, &cfg.x0, &cfg.reaction, Some(&drifts[r]), &path, &solver)
        },
    )?;

    let mut gaps = Vec::new();
    let mut curves = Vec::new();
    for r in 0..ms.len() - 1 {
        let label = format!("m={}|m={}", ms[r], ms[r + 1]);
        let (sup_gap, h_moment) = averaged(&grid, r, r + 1);
        curves.extend(running_sup(&grid[0][r], &grid[0][r + 1], &label));
        gaps.push(GapPoint {
            label,
            abscissa: ms[r + 1] as f64,
            sup_gap,
            h_moment,
        });
    }
    let reference_gaps: Vec<GapPoint> = (0..ms.len())
        .map(|r| {
            let (sup_gap, h_moment) = averaged(&grid, r, runs - 1);
            GapPoint {
                label: format!("m={}|B", ms[r]),
                abscissa: ms[r] as f64,
                sup_gap,
                h_moment,
            }
        })
        .collect();
    let (slope, slope_stderr) = fit(
        &reference_gaps.iter().map(|g| g.abscissa).collect::<Vec<_>>(),
        &reference_gaps.iter().map(|g| g.sup_gap).collect::<Vec<_>>(),
    );
    Ok(UniquenessReport {
        route: Route::Mollification,
        seeds: path_seeds(cfg),
        provenance: grid
            .iter()
            .map(|runs| runs.iter().map(|t| provenance(&t.noise_provenance)).collect())
            .collect(),
        gaps,
        reference_gaps,
        curves,
        slope,
        slope_stderr,
    })
}
