//! The verification registry.
//!
//! Every invariant of the library appears here exactly once (flagged
//! `invariant: true`); a few further checks of the quantitative estimates
//! ride along. Hard checks are exact or deterministic and gate the exit
//! code. Statistical checks use 3-sigma style gates and are expected to
//! flake at a low rate, so they are reported but never fail the run.

use std::f64::consts::PI;

use spdelab_core::drift::{fejer_projection, running_max, MollifiedDrift, ScalarHolder};
use spdelab_core::noise::{sample_noise, stochastic_convolution, NoisePath, NoisePathSpec};
use spdelab_core::rng::{keyed_normal, KeyedStream};
use spdelab_core::semigroup::{
    bismut_elworthy_derivative, chapman_kolmogorov, estimate_pt, estimate_resolvent,
    smoothing_rate_fit, ResolventOptions, ScalarMap, TestFunctional,
};
use spdelab_core::solver::{
    first_variation, kernel_square_sum, moment_estimates, solve_final, solve_mild, SolverConfig,
};
use spdelab_core::spectral::{gaussian_peak, Boundary, Field, GridSpec, SpectralOperator};
use spdelab_core::{
    empirical_holder_seminorm, mollify_drift, stats, HolderDrift, Model, PolynomialReaction,
    Result as CoreResult,
};

use crate::config::{ExperimentConfig, RawConfig};
use crate::emit::{CheckKind, VerifyRow};
use crate::run::execute;

/// Invariant count per module; the registry must match it exactly.
pub const MODULE_INVARIANTS: &[(&str, usize)] = &[
    ("spectral-core", 3),
    ("noise-engine", 3),
    ("drift-library", 4),
    ("spde-solver", 4),
    ("semigroup-lab", 4),
    ("harness-cli", 2),
];

pub struct VerifyContext<'a> {
    pub cfg: &'a ExperimentConfig,
    pub n: usize,
    pub full: bool,
    pub seed: u64,
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub observed: f64,
    pub bound: String,
    pub pass: bool,
}

impl Outcome {
    fn at_most(observed: f64, bound: f64) -> Self {
        Outcome {
            observed,
            bound: format!("<= {bound}"),
            pass: observed <= bound,
        }
    }

    fn at_least(observed: f64, bound: f64) -> Self {
        Outcome {
            observed,
            bound: format!(">= {bound}"),
            pass: observed >= bound,
        }
    }

    fn within(observed: f64, lo: f64, hi: f64) -> Self {
        Outcome {
            observed,
            bound: format!("[{lo}, {hi}]"),
            pass: (lo..=hi).contains(&observed),
        }
    }
}

type CheckFn = fn(&VerifyContext) -> CoreResult<Outcome>;

pub struct Check {
    pub name: &'static str,
    pub module: &'static str,
    /// Short name of the property or estimate being checked.
    pub anchor: &'static str,
    pub kind: CheckKind,
    pub invariant: bool,
    pub run: CheckFn,
}

macro_rules! check {
    ($name:literal, $module:literal, $anchor:literal, $kind:ident, $inv:literal, $f:path) => {
        Check {
            name: $name,
            module: $module,
            anchor: $anchor,
            kind: CheckKind::$kind,
            invariant: $inv,
            run: $f,
        }
    };
}

pub fn registry() -> Vec<Check> {
    vec![
        check!("spectral.semigroup_law", "spectral-core", "semigroup law", Hard, true, semigroup_law),
        check!("spectral.sup_contraction", "spectral-core", "sup-norm contraction", Hard, true, sup_contraction),
        check!("spectral.ultracontractivity", "spectral-core", "E-H smoothing exponent", Hard, true, ultracontractivity),
        check!("noise.linear_exactness", "noise-engine", "solver = convolution + heat flow", Hard, true, linear_exactness),
        check!("noise.normality", "noise-engine", "fourth-moment ratio", Statistical, true, normality),
        check!("noise.shared_path", "noise-engine", "read-only shared path", Hard, true, shared_path),
        check!("drift.max_inequality", "drift-library", "prefix max is 1-Lipschitz", Hard, true, max_inequality),
        check!("drift.equi_holder", "drift-library", "uniform Holder bound of B_m", Hard, true, equi_holder),
        check!("drift.reaction_structure", "drift-library", "oddness and dissipativity", Hard, true, reaction_structure),
        check!("drift.boundedness", "drift-library", "|B(x)|_E bound", Hard, true, boundedness),
        check!("solver.determinism", "spde-solver", "bitwise replay", Hard, true, determinism),
        check!("solver.convergence_order", "spde-solver", "strong order in dt", Statistical, true, convergence_order),
        check!("solver.first_variation", "spde-solver", "tangent vs finite difference", Hard, true, first_variation_fd),
        check!("solver.square_sum", "spde-solver", "square-sum t-exponent", Statistical, true, square_sum),
        check!("semigroup.chapman_kolmogorov", "semigroup-lab", "two-stage re-simulation", Statistical, true, chapman),
        check!("semigroup.contraction", "semigroup-lab", "|P_t phi| <= sup|phi|", Hard, true, pt_contraction),
        check!("semigroup.derivative_linearity", "semigroup-lab", "linearity in h", Hard, true, derivative_linearity),
        check!("semigroup.resolvent_identity", "semigroup-lab", "(lambda - mu_k) R e_k", Statistical, true, resolvent_identity),
        check!("harness.replay", "harness-cli", "byte-identical outputs", Hard, true, replay),
        check!("harness.ledger_completeness", "harness-cli", "one entry per invariant", Hard, true, ledger_completeness),
        check!("extra.kernel_bound", "spectral-core", "K_t <= (4 pi t)^(-1/2)", Hard, false, kernel_bound),
        check!("extra.moments", "spde-solver", "moment ordering of sup_t |X|_E", Hard, false, moments),
        check!("extra.holder_seminorms", "drift-library", "M |g|_E and M", Hard, false, holder_seminorms),
        check!("extra.fejer_shift", "drift-library", "shift radius bound", Hard, false, fejer_shift),
        check!("extra.smoothing_rate", "semigroup-lab", "derivative slope in t", Statistical, false, smoothing_rate),
        check!("extra.resolvent_bound", "semigroup-lab", "|R phi| <= sup|phi| / lambda", Statistical, false, resolvent_bound),
    ]
}

/// Runs every registered check. Errors inside a check become failed rows.
pub fn run_verify_suite(cfg: &ExperimentConfig) -> Vec<VerifyRow> {
    let ctx = VerifyContext {
        cfg,
        n: cfg.verify_n,
        full: cfg.verify_full,
        seed: cfg.noise.seed,
        workers: cfg.workers,
    };
    registry()
        .into_iter()
        .map(|c| {
            log::info!("verify: {}", c.name);
            let outcome = (c.run)(&ctx).unwrap_or_else(|e| Outcome {
                observed: f64::NAN,
                bound: format!("error: {e}"),
                pass: false,
            });
            VerifyRow {
                check: c.name.to_string(),
                anchor: c.anchor.to_string(),
                kind: c.kind,
                observed: outcome.observed,
                bound: outcome.bound,
                pass: outcome.pass,
            }
        })
        .collect()
}

pub fn hard_failures(rows: &[VerifyRow]) -> usize {
    rows.iter().filter(|r| r.kind == CheckKind::Hard && !r.pass).count()
}

// ---- helpers ----

fn operator(n_points: usize, boundary: Boundary, n_modes: usize) -> CoreResult<SpectralOperator> {
    SpectralOperator::new(&GridSpec::new(n_points, boundary, n_modes)?)
}

/// The configured grid in the full profile, a 31-point / 16-mode grid otherwise.
fn mc_operator(ctx: &VerifyContext, boundary: Boundary) -> CoreResult<SpectralOperator> {
    if ctx.full {
        operator(ctx.cfg.grid.n_points, boundary, ctx.cfg.grid.n_modes)
    } else {
        operator(31, boundary, 16)
    }
}

fn cfg_operator(ctx: &VerifyContext, boundary: Boundary) -> CoreResult<SpectralOperator> {
    operator(ctx.cfg.grid.n_points, boundary, ctx.cfg.grid.n_modes)
}

/// Smooth random field with coefficients `N(0, 1) / (1 + k)` on the retained modes.
fn random_field(op: &SpectralOperator, seed: u64, q: u64) -> Field {
    let c: Vec<f64> = (0..op.n_modes())
        .map(|k| keyed_normal(seed, &[q, k as u64]) / (1.0 + k as f64))
        .collect();
    op.synthesize(&c)
}

/// Rough field with independent uniform nodal values in `[-scale, scale]`.
fn rough_field(nodes: usize, stream: &mut KeyedStream, scale: f64) -> Field {
    Field::new((0..nodes).map(|_| scale * (2.0 * stream.uniform() - 1.0)).collect())
        .expect("finite values")
}

fn drift_variants(op: &SpectralOperator) -> Vec<HolderDrift> {
    let g = Field::from_fn(op.grid(), |s| (PI * s).sin());
    vec![
        HolderDrift::PointEval {
            b: ScalarHolder::PowerSign { alpha: 0.5 },
            xi0: 0.5,
            g,
        },
        HolderDrift::RunningMax {
            b: ScalarHolder::PowerSign { alpha: 0.5 },
        },
        HolderDrift::RunningMaxAbs {
            b: ScalarHolder::DistToIntegers { alpha: 0.7 },
        },
        HolderDrift::Pointwise {
            b: ScalarHolder::ClampedSine,
        },
    ]
}

/// Pairs at distances spread over six decades, so small-scale Holder
/// behaviour is probed as well as large jumps.
fn holder_pairs(op: &SpectralOperator, seed: u64, count: usize) -> Vec<(Field, Field)> {
    (0..count)
        .map(|q| {
            let x = random_field(op, seed, 2 * q as u64).scale(2.0);
            let z = random_field(op, seed, 2 * q as u64 + 1);
            let delta = 10f64.powf(-6.0 * q as f64 / count as f64);
            let y = &x + &z.scale(delta);
            (x, y)
        })
        .collect()
}

/// Sup-norm operator norm of the Fejer mean on the grid, `max_i sum_j |P_ij|`.
fn fejer_norm(op: &SpectralOperator, m: usize) -> CoreResult<f64> {
    let n = op.n_nodes();
    let mut rows = vec![0.0; n];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = fejer_projection(op, m, &Field::new(e)?)?;
        for (r, v) in rows.iter_mut().zip(col.values()) {
            *r += v.abs();
        }
    }
    Ok(rows.into_iter().fold(0.0, f64::max))
}

fn z_score(a: f64, sa: f64, b: f64, sb: f64) -> f64 {
    let s = sa.hypot(sb);
    if s == 0.0 {
        if a == b { 0.0 } else { f64::INFINITY }
    } else {
        (a - b).abs() / s
    }
}

// ---- spectral-core ----

fn semigroup_law(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let op = cfg_operator(ctx, ctx.cfg.grid.boundary)?;
    let mut worst = 0.0_f64;
    for q in 0..5 {
        let x = random_field(&op, ctx.seed, q);
        for t in [1e-3, 0.01, 0.1, 0.5] {
            for s in [1e-4, 0.02, 0.3] {
                let two = op.apply_semigroup(t, &op.apply_semigroup(s, &x)?)?;
                let one = op.apply_semigroup(t + s, &x)?;
                worst = worst.max((&two - &one).sup_norm());
            }
        }
    }
    Ok(Outcome::at_most(worst, 1e-10))
}

fn sup_contraction(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let op = cfg_operator(ctx, ctx.cfg.grid.boundary)?;
    let mut worst = 0.0_f64;
    for q in 0..50 {
        let x = random_field(&op, ctx.seed, 100 + q);
        for t in [1e-6, 1e-4, 1e-2, 0.1, 1.0] {
            worst = worst.max(op.apply_semigroup(t, &x)?.sup_norm() / x.sup_norm());
        }
    }
    Ok(Outcome::at_most(worst, 1.0))
}

/// `sup_{|x|_H = 1} |e^{tA} x|_E = max_i |K_t(xi_i, .)|_H`, fitted against `t`
/// in a window where the retained modes resolve the kernel.
fn ultracontractivity(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let op = cfg_operator(ctx, Boundary::Dirichlet)?;
    let m = op.n_modes() as f64;
    let lo = (10.0 / (PI * PI * m * m)).max(1e-3);
    let ts: Vec<f64> = (0..=10).map(|i| lo * 10f64.powf(i as f64 / 10.0)).collect();
    let r: Vec<f64> = ts
        .iter()
        .map(|&t| {
            let decay: Vec<f64> = op.eigenvalues().iter().map(|mu| (mu * t).exp()).collect();
            (0..op.n_nodes())
                .map(|i| {
                    (0..op.n_modes())
                        .map(|k| (decay[k] * op.basis_row(k)[i]).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let h_ok = (0..5).all(|q| {
        let x = random_field(&op, ctx.seed, 200 + q);
        ts.iter().all(|&t| {
            op.apply_semigroup(t, &x)
                .map(|y| y.h_norm() <= x.h_norm())
                .unwrap_or(false)
        })
    });
    let mut out = Outcome::within(stats::loglog_fit(&ts, &r).slope, -0.35, -0.15);
    out.pass &= h_ok;
    Ok(out)
}

fn kernel_bound(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let op = cfg_operator(ctx, Boundary::Dirichlet)?;
    let mut ratio = 0.0_f64;
    let mut positive = true;
    for &t in &ctx.cfg.kernel_times {
        let k = op.heat_kernel(t)?;
        ratio = ratio.max(k.max() / gaussian_peak(t));
        // zero entries at the boundary nodes come out as +-1e-20 after rounding
        positive &= k.min() >= -(k.tail + 1e-12 * k.max());
    }
    let mut out = Outcome::at_most(ratio, 1.0 + 1e-6);
    out.pass &= positive;
    Ok(out)
}

// ---- noise-engine ----

fn linear_exactness(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let mut worst = 0.0_f64;
    for boundary in [Boundary::Dirichlet, Boundary::Neumann] {
        let op = mc_operator(ctx, boundary)?;
        let dt = 1e-3;
        let cfg = SolverConfig::new(dt, 0.1);
        let path = sample_noise(&NoisePathSpec::new(ctx.seed, dt, 100, op.n_modes()), &op)?;
        let x0 = random_field(&op, ctx.seed, 300);
        let traj = solve_mild(&op, &x0, &PolynomialReaction::zero(), None, &path, &cfg)?;
        let conv = stochastic_convolution(&op, &path)?;
        for ((t, x), w) in traj.times.iter().zip(&traj.states).zip(&conv.states) {
            let expect = &op.apply_semigroup(*t, &x0)? + w;
            worst = worst.max((x - &expect).sup_norm());
        }
    }
    Ok(Outcome::at_most(worst, 1e-12))
}

/// Kurtosis of the first mode of `W_A(t)` over `1e5` independent paths.
fn normality(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let op = operator(15, Boundary::Dirichlet, 4)?;
    let dt = 0.01;
    let steps = 5;
    let decay = (op.eigenvalues()[0] * dt).exp();
    let samples: Vec<f64> = (0..100_000u64)
        .map(|i| {
            let spec = NoisePathSpec::new(spdelab_core::rng::sample_seed(ctx.seed, i), dt, steps, 4);
            let path = NoisePath::sample(&spec, &op)?;
            Ok((0..steps).fold(0.0, |a, j| decay * a + path.innovation(0, j)))
        })
        .collect::<CoreResult<_>>()?;
    Ok(Outcome::within(stats::kurtosis(&samples), 2.9, 3.1))
}

/// Two readers traverse one path in different orders, and two solves share
/// it; any difference counts as a violation.
fn shared_path(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let op = mc_operator(ctx, Boundary::Dirichlet)?;
    let spec = NoisePathSpec::new(ctx.seed, 1e-3, 200, op.n_modes());
    let path = sample_noise(&spec, &op)?;
    let again = sample_noise(&spec, &op)?;
    let mut forward = Vec::new();
    for k in 0..path.n_modes() {
        for j in 0..path.n_steps() {
            forward.push((path.increment(k, j), path.innovation(k, j)));
        }
    }
    let mut mismatches = 0usize;
    for j in (0..path.n_steps()).rev() {
        for k in (0..path.n_modes()).rev() {
            let f = forward[k * path.n_steps() + j];
            let b = (path.increment(k, j), path.innovation(k, j));
            let c = (again.increment(k, j), again.innovation(k, j));
            mismatches += usize::from(f.0.to_bits() != b.0.to_bits() || f.1.to_bits() != b.1.to_bits());
            mismatches += usize::from(c.0.to_bits() != b.0.to_bits() || c.1.to_bits() != b.1.to_bits());
        }
    }
    let cfg = SolverConfig::new(1e-3, 0.2);
    let f = PolynomialReaction::cubic();
    let x0 = random_field(&op, ctx.seed, 400);
    let a = solve_final(&op, &x0, &f, None, &path, &cfg)?;
    let b = solve_final(&op, &x0, &f, None, &path, &cfg)?;
    mismatches += usize::from(a != b);
    Ok(Outcome::at_most(mismatches as f64, 0.0))
}

// ---- drift-library ----

fn max_inequality(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let nodes = ctx.cfg.grid.n_nodes();
    let pairs = if ctx.full { 100_000 } else { 10_000 };
    let mut stream = KeyedStream::new(ctx.seed, &[0x3A7]);
    let mut violations = 0usize;
    for q in 0..pairs {
        let scale = 10f64.powi((q % 7) as i32 - 3);
        let x = rough_field(nodes, &mut stream, scale);
        let y = if q % 2 == 0 {
            rough_field(nodes, &mut stream, scale)
        } else {
            &x + &rough_field(nodes, &mut stream, scale * 1e-6)
        };
        let lhs = (&running_max(&x) - &running_max(&y)).sup_norm();
        violations += usize::from(lhs > (&x - &y).sup_norm());
    }
    Ok(Outcome::at_most(violations as f64, 0.0))
}

fn equi_holder(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let op = mc_operator(ctx, Boundary::Dirichlet)?;
    let pairs = holder_pairs(&op, ctx.seed, 60);
    let ms: Vec<usize> = [2, 4, 8, 16].into_iter().filter(|&m| m <= op.n_modes()).collect();
    let mut constant = 1.0_f64;
    for &m in &ms {
        constant = constant.max(fejer_norm(&op, m)?);
    }
    let mut worst = 0.0_f64;
    for b in drift_variants(&op) {
        for &m in &ms {
            let bm = mollify_drift(&b, &op, m, 16, ctx.seed)?;
            let est = empirical_holder_seminorm(&bm, &pairs, b.exponent())?;
            worst = worst.max(est.value / (b.holder_bound() * constant));
        }
    }
    Ok(Outcome::at_most(worst, 1.1))
}

fn reaction_structure(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let mut reactions = vec![
        PolynomialReaction::cubic(),
        PolynomialReaction::constant_coefficients(2, 0.5, &[0.0, 1.0, 0.0, 3.0, 0.0])?,
    ];
    if ctx.cfg.reaction.m > 0 {
        reactions.push(ctx.cfg.reaction.clone());
    }
    let mut stream = KeyedStream::new(ctx.seed, &[0xD155]);
    let mut violations = 0usize;
    for (r, f) in reactions.iter().enumerate() {
        let Some(d) = f.dissipativity() else { continue };
        for _ in 0..20_000 {
            let mag = |s: &mut KeyedStream| {
                let sign = if s.uniform() < 0.5 { -1.0 } else { 1.0 };
                sign * 10f64.powf(6.0 * s.uniform() - 3.0)
            };
            let s = mag(&mut stream);
            let h = mag(&mut stream);
            let lhs = (f.f(0, s + h) - f.f(0, s)) * h;
            let rhs = -d.alpha0 * h.abs().powf(d.gamma) + d.c * (1.0 + s.abs().powf(d.gamma));
            violations += usize::from(lhs > rhs);
            // the first two reactions have odd coefficient patterns
            if r < 2 {
                violations += usize::from(f.f(0, -s).to_bits() != (-f.f(0, s)).to_bits());
            }
        }
    }
    Ok(Outcome::at_most(violations as f64, 0.0))
}

fn boundedness(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let op = mc_operator(ctx, Boundary::Dirichlet)?;
    let mut stream = KeyedStream::new(ctx.seed, &[0xB0]);
    let mut variants = drift_variants(&op);
    variants.push(mollify_drift(&variants[0], &op, 4, 8, ctx.seed)?);
    variants.push(mollify_drift(&variants[1], &op, 8, 8, ctx.seed)?);
    let mut worst = 0.0_f64;
    for b in &variants {
        let g_norm = match b {
            HolderDrift::PointEval { g, .. } => g.sup_norm(),
            HolderDrift::Mollified(m) => match &m.inner {
                HolderDrift::PointEval { g, .. } => g.sup_norm(),
                _ => 1.0,
            },
            _ => 1.0,
        };
        let bound = b.scalar().sup() * g_norm.max(1.0);
        for q in 0..200 {
            let scale = 10f64.powi(q % 6 - 2);
            let x = rough_field(op.n_nodes(), &mut stream, scale);
            worst = worst.max(b.apply(&x).sup_norm() / bound);
        }
    }
    Ok(Outcome::at_most(worst, 1.0))
}

fn holder_seminorms(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let op = mc_operator(ctx, Boundary::Dirichlet)?;
    let pairs = holder_pairs(&op, ctx.seed ^ 0x51, 200);
    let mut worst = 0.0_f64;
    for b in drift_variants(&op) {
        let est = empirical_holder_seminorm(&b, &pairs, b.exponent())?;
        worst = worst.max(est.value / b.holder_bound());
    }
    Ok(Outcome::at_most(worst, 1.0))
}

fn fejer_shift(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let op = cfg_operator(ctx, Boundary::Dirichlet)?;
    let b = HolderDrift::Pointwise {
        b: ScalarHolder::ClampedSine,
    };
    let mut worst = 0.0_f64;
    for &m in ctx.cfg.mollification_ms.iter().filter(|&&m| m <= op.n_modes()) {
        let bm = MollifiedDrift::new(b.clone(), &op, m, 64, ctx.seed)?;
        worst = worst.max(bm.max_shift() / bm.shift_bound());
    }
    Ok(Outcome::at_most(worst, 1.0))
}

// ---- spde-solver ----

fn determinism(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let op = mc_operator(ctx, Boundary::Dirichlet)?;
    let spec = NoisePathSpec::new(ctx.seed, 1e-3, 300, op.n_modes());
    let cfg = SolverConfig::new(1e-3, 0.3).with_stride(7);
    let f = PolynomialReaction::cubic();
    let b = drift_variants(&op).remove(1);
    let x0 = random_field(&op, ctx.seed, 500);
    let run = || -> CoreResult<Vec<u8>> {
        let path = sample_noise(&spec, &op)?;
        let traj = solve_mild(&op, &x0, &f, Some(&b), &path, &cfg)?;
        let mut bytes = Vec::new();
        traj.write_binary(&mut bytes).expect("in-memory write");
        Ok(bytes)
    };
    let mismatches = usize::from(run()? != run()?);
    Ok(Outcome::at_most(mismatches as f64, 0.0))
}

/// RMS error at `T` against a `dt/16` reference on the same Brownian path.
fn convergence_order(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let op = operator(31, Boundary::Dirichlet, 16)?;
    let f = PolynomialReaction::constant_coefficients(1, 1.0, &[0.0, 1.0, 0.0])?;
    let base = 4e-3;
    let horizon = 0.256;
    let x0 = Field::from_fn(op.grid(), |s| (PI * s).sin());
    let paths = 20u64;
    let mut errs = vec![0.0; 4];
    for p in 0..paths {
        let spec = NoisePathSpec::new(ctx.seed.wrapping_add(p), base, 64, 16);
        let reference = solve_final(&op, &x0, &f, None, &sample_noise(&spec.with_level(4), &op)?, &SolverConfig::new(base / 16.0, horizon))?;
        for (l, e) in errs.iter_mut().enumerate() {
            let dt = base / (1u64 << l) as f64;
            let path = sample_noise(&spec.with_level(l as u32), &op)?;
            let y = solve_final(&op, &x0, &f, None, &path, &SolverConfig::new(dt, horizon))?;
            *e += (&y - &reference).sup_norm().powi(2) / paths as f64;
        }
    }
    let rms: Vec<f64> = errs.iter().map(|e| e.sqrt()).collect();
    let dts: Vec<f64> = (0..4).map(|l| base / (1u64 << l) as f64).collect();
    Ok(Outcome::at_least(stats::loglog_fit(&dts, &rms).slope, 0.9))
}

/// Relative `H` error of the tangent against a shared-noise centered
/// difference, worst over 20 random `(x, h)`.
fn first_variation_fd(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let op = mc_operator(ctx, Boundary::Dirichlet)?;
    let dt: f64 = 1e-4;
    let horizon = 0.05;
    let eps = 1e-4;
    let steps = (horizon / dt as f64).round() as usize;
    let cfg = SolverConfig::new(dt, horizon);
    let f = PolynomialReaction::cubic();
    let mut worst = 0.0_f64;
    for q in 0..20u64 {
        let path = sample_noise(&NoisePathSpec::new(ctx.seed.wrapping_add(q), dt, steps, op.n_modes()), &op)?;
        let x = random_field(&op, ctx.seed, 600 + 2 * q).scale(2.0);
        let h = random_field(&op, ctx.seed, 601 + 2 * q);
        let base = solve_mild(&op, &x, &f, None, &path, &cfg)?;
        let eta = first_variation(&op, &base, &f, &h, 0.0)?;
        let xp = solve_final(&op, &(&x + &h.scale(eps)), &f, None, &path, &cfg)?;
        let xm = solve_final(&op, &(&x - &h.scale(eps)), &f, None, &path, &cfg)?;
        let fd = (&xp - &xm).scale(0.5 / eps);
        worst = worst.max((eta.last() - &fd).h_norm() / fd.h_norm());
    }
    Ok(Outcome::at_most(worst, 0.05))
}

/// Ensemble mean of `S(t)` over Neumann paths from `x = 0`, fitted on 21
/// log-spaced times in `[0.01, 1]`. With Dirichlet data the spectral gap
/// makes `S` decay exponentially on this window, so the power law is read
/// off the Neumann problem, where the constant mode carries no decay.
fn square_sum(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let fit = square_sum_fit(Boundary::Neumann, ctx.seed, 16, ctx.workers)?;
    Ok(Outcome::within(fit, -0.65, -0.35))
}

pub fn square_sum_fit(boundary: Boundary, seed: u64, paths: usize, workers: usize) -> CoreResult<f64> {
    let op = operator(63, boundary, 32)?;
    let f = PolynomialReaction::cubic();
    let dt: f64 = 1e-4;
    let ts: Vec<f64> = (0..=20).map(|i| 0.01 * 100f64.powf(i as f64 / 20.0)).collect();
    let per_path = spdelab_core::parallel::map_indexed(workers, paths, |p| {
        let path = sample_noise(&NoisePathSpec::new(seed.wrapping_add(p as u64), dt, 10_000, 32), &op)?;
        let traj = solve_mild(&op, &op.zero_field(), &f, None, &path, &SolverConfig::new(dt, 1.0))?;
        let s = kernel_square_sum(&op, &traj, &f)?;
        Ok(ts.iter().map(|t| s[(t / dt).round() as usize].1).collect::<Vec<f64>>())
    })?;
    let mean: Vec<f64> = (0..ts.len())
        .map(|i| stats::mean(&per_path.iter().map(|v| v[i]).collect::<Vec<_>>()))
        .collect();
    Ok(stats::loglog_fit(&ts, &mean).slope)
}

fn moments(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let op = operator(31, Boundary::Dirichlet, 16)?;
    let f = PolynomialReaction::cubic();
    let dt = 1e-3;
    let cfg = SolverConfig::new(dt, 0.2).with_stride(10);
    let x0 = op.eigenfunction(0);
    let ensemble = spdelab_core::parallel::map_indexed(ctx.workers, 100, |p| {
        let path = sample_noise(&NoisePathSpec::new(ctx.seed.wrapping_add(p as u64), dt, 200, 16), &op)?;
        solve_mild(&op, &x0, &f, None, &path, &cfg)
    })?;
    let ps = [1.0, 2.0, 4.0, 8.0];
    let report = moment_estimates(&ensemble, &ps)?;
    // Lyapunov: p -> E[S^p]^(1/p) is nondecreasing for any measure.
    let norms: Vec<f64> = report.moments.iter().map(|(p, m)| m.powf(1.0 / p)).collect();
    let worst = norms
        .windows(2)
        .map(|w| w[1] / w[0])
        .fold(f64::INFINITY, f64::min);
    let mut out = Outcome::at_least(worst, 1.0 - 1e-12);
    out.pass &= report.quantiles[0] <= report.quantiles[1] && report.quantiles[1] <= report.quantiles[2];
    Ok(out)
}

// ---- semigroup-lab ----

fn model(op: SpectralOperator, f: PolynomialReaction, dt: f64, ctx: &VerifyContext) -> Model {
    Model::new(op, f, dt, ctx.seed).with_workers(ctx.workers)
}

fn chapman(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let op = mc_operator(ctx, Boundary::Dirichlet)?;
    let x = op.eigenfunction(0).scale(0.5);
    let phi = TestFunctional::BoundedComposite {
        map: ScalarMap::Tanh { scale: 2.0 },
        k: 1,
    };
    let mut worst = 0.0_f64;
    for f in [PolynomialReaction::linear(0.5), PolynomialReaction::cubic()] {
        let m = model(op.clone(), f, 1e-3, ctx);
        let (direct, staged) = chapman_kolmogorov(&m, &phi, &x, 0.05, 0.05, ctx.n)?;
        worst = worst.max(z_score(direct.mean, direct.stderr, staged.mean, staged.stderr));
    }
    Ok(Outcome::at_most(worst, 3.0))
}

fn pt_contraction(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let op = mc_operator(ctx, Boundary::Dirichlet)?;
    let m = model(op.clone(), PolynomialReaction::cubic(), 1e-3, ctx);
    let mut worst = 0.0_f64;
    for phi in [
        TestFunctional::BoundedComposite {
            map: ScalarMap::Tanh { scale: 5.0 },
            k: 1,
        },
        TestFunctional::BoundedComposite {
            map: ScalarMap::Sign,
            k: 2,
        },
    ] {
        let bound = phi.sup_bound().expect("bounded functional");
        for amp in [0.0, 1.0, 5.0] {
            let x = op.eigenfunction(0).scale(amp);
            let r = estimate_pt(&m, &phi, &x, 0.05, ctx.n.min(500))?;
            worst = worst.max(r.mean.abs() / bound);
        }
    }
    Ok(Outcome::at_most(worst, 1.0))
}

/// Scaling `h` by 2 and by -1 must scale the estimate bit-for-bit.
fn derivative_linearity(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let op = mc_operator(ctx, Boundary::Dirichlet)?;
    let m = model(op.clone(), PolynomialReaction::cubic(), 1e-3, ctx);
    let phi = TestFunctional::BoundedComposite {
        map: ScalarMap::Tanh { scale: 1.0 },
        k: 1,
    };
    let x = op.eigenfunction(0).scale(0.8);
    let h = random_field(&op, ctx.seed, 700);
    let n = ctx.n.min(200);
    let base = bismut_elworthy_derivative(&m, &phi, &x, &h, 0.05, n)?.mean;
    let mut mismatches = 0usize;
    for c in [2.0, -1.0, 0.5] {
        let scaled = bismut_elworthy_derivative(&m, &phi, &x, &h.scale(c), 0.05, n)?.mean;
        mismatches += usize::from(scaled.to_bits() != (c * base).to_bits());
    }
    Ok(Outcome::at_most(mismatches as f64, 0.0))
}

/// `F = 0`, `phi = <x, e_1>`: `R(lambda) phi(x) = <x, e_1> / (lambda - mu_1)`.
fn resolvent_identity(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let op = mc_operator(ctx, Boundary::Dirichlet)?;
    let m = model(op.clone(), PolynomialReaction::zero(), 1e-3, ctx);
    let x = op.eigenfunction(0).scale(0.7);
    let phi = TestFunctional::ModeCoefficient { k: 1 };
    let mu = op.eigenvalues()[0];
    let mut worst = 0.0_f64;
    for lambda in [1.0, 10.0, 100.0] {
        let opts = ResolventOptions {
            tol: 1e-3,
            phi_bound: Some(0.7),
            ..Default::default()
        };
        let r = estimate_resolvent(&m, &phi, &x, lambda, &opts, ctx.n.min(2000))?;
        let residual = ((lambda - mu) * r.estimate.mean - 0.7).abs();
        worst = worst.max(residual / ((lambda - mu) * r.budget));
    }
    Ok(Outcome::at_most(worst, 1.0))
}

fn smoothing_rate(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let op = operator(31, Boundary::Dirichlet, 16)?;
    let dt: f64 = 1e-4;
    let m = model(op.clone(), PolynomialReaction::cubic(), dt, ctx);
    let ts: Vec<f64> = (0..5)
        .map(|i| 0.002 * 10f64.powf(i as f64 / 4.0))
        .map(|t| (t / dt).round() * dt)
        .collect();
    let phi = TestFunctional::BoundedComposite {
        map: ScalarMap::Tanh { scale: 200.0 },
        k: 1,
    };
    let fit = smoothing_rate_fit(&m, &phi, &op.zero_field(), &ts, &[op.eigenfunction(0)], ctx.n)?;
    Ok(Outcome::within(fit.slope, -0.7, -0.3))
}

fn resolvent_bound(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let op = mc_operator(ctx, Boundary::Dirichlet)?;
    let m = model(op.clone(), PolynomialReaction::cubic(), 1e-3, ctx);
    let phi = TestFunctional::BoundedComposite {
        map: ScalarMap::Tanh { scale: 3.0 },
        k: 1,
    };
    let x = op.eigenfunction(0);
    let mut worst = 0.0_f64;
    for lambda in [10.0, 100.0] {
        let opts = ResolventOptions {
            tol: 1e-2,
            ..Default::default()
        };
        let r = estimate_resolvent(&m, &phi, &x, lambda, &opts, ctx.n.min(1000))?;
        worst = worst.max(r.estimate.mean.abs() / (1.0 / lambda + r.budget));
    }
    Ok(Outcome::at_most(worst, 1.0))
}

// ---- harness-cli ----

fn tiny_config(experiment: &str, workers: usize, seed: u64) -> RawConfig {
    let mut raw = RawConfig::default();
    for (k, v) in [
        ("grid.n_points", "31"),
        ("grid.n_modes", "16"),
        ("solver.dt", "1e-3"),
        ("solver.T", "0.05"),
        ("solver.record_stride", "10"),
        ("estimator.n", "40"),
        ("estimator.t", "0.02"),
        ("noise.paths", "2"),
    ] {
        raw.set(k, v).expect("registered key");
    }
    raw.set("experiment", experiment).expect("registered key");
    raw.set("workers", &workers.to_string()).expect("registered key");
    raw.set("noise.seed", &seed.to_string()).expect("registered key");
    raw
}

fn replay(ctx: &VerifyContext) -> CoreResult<Outcome> {
    let mut mismatches = 0usize;
    for experiment in ["simulate", "estimate"] {
        let mut outputs = Vec::new();
        for workers in [1, 2, 1] {
            let cfg = ExperimentConfig::from_raw(tiny_config(experiment, workers, ctx.seed))
                .map_err(|e| spdelab_core::Error::InvalidArgument(e.to_string()))?;
            let art = execute(&cfg).map_err(|e| spdelab_core::Error::InvalidArgument(e.to_string()))?;
            outputs.push(art.files);
        }
        mismatches += outputs.windows(2).filter(|w| w[0] != w[1]).count();
    }
    Ok(Outcome::at_most(mismatches as f64, 0.0))
}

fn ledger_completeness(_ctx: &VerifyContext) -> CoreResult<Outcome> {
    let reg = registry();
    let mut off = 0usize;
    for &(module, expected) in MODULE_INVARIANTS {
        let got = reg.iter().filter(|c| c.invariant && c.module == module).count();
        off += got.abs_diff(expected);
    }
    let mut names: Vec<&str> = reg.iter().map(|c| c.name).collect();
    names.sort_unstable();
    names.dedup();
    off += reg.len() - names.len();
    off += reg
        .iter()
        .filter(|c| !MODULE_INVARIANTS.iter().any(|(m, _)| *m == c.module))
        .count();
    Ok(Outcome::at_most(off as f64, 0.0))
}
