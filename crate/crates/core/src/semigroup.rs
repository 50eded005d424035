//! Monte Carlo estimators for the transition semigroup, its derivative and
//! its resolvent.
//!
//! Sample `i` of an ensemble is driven by the noise path keyed by
//! `sample_seed(seed, i)`, so two estimators with the same model seed share
//! their random numbers sample by sample.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::drift::{HolderDrift, PolynomialReaction};
use crate::error::{Error, Result};
use crate::noise::{NoisePath, NoisePathSpec};
use crate::parallel::map_indexed;
use crate::rng::{mix64, sample_seed};
use crate::solver::{run, steps_for, SolverConfig, Stepper};
use crate::spectral::{Field, SpectralOperator};
use crate::stats;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarMap {
    /// `tanh(scale s)`.
    Tanh { scale: f64 },
    /// `sign(s)`, with `sign(0) = 0`.
    Sign,
}

impl ScalarMap {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            ScalarMap::Tanh { scale } => (scale * s).tanh(),
            ScalarMap::Sign => {
                if s == 0.0 {
                    0.0
                } else {
                    s.signum()
                }
            }
        }
    }
}

/// Scalar observables `phi: E -> R`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunctional {
    /// `<x, e_k>_H` for eigen-index `k`.
    ModeCoefficient { k: usize },
    SupNorm,
    PointValue { xi: f64 },
    /// `map(<x, e_k>_H)`.
    BoundedComposite { map: ScalarMap, k: usize },
}

impl TestFunctional {
    pub fn validate(&self, op: &SpectralOperator) -> Result<()> {
        match *self {
            TestFunctional::ModeCoefficient { k } | TestFunctional::BoundedComposite { k, .. } => {
                op.position_of(k).map(|_| ()).ok_or_else(|| {
                    Error::InvalidArgument(format!("mode {k} is not retained by the operator"))
                })
            }
            TestFunctional::PointValue { xi } if !(0.0..=1.0).contains(&xi) => Err(
                Error::InvalidArgument(format!("point {xi} lies outside [0, 1]")),
            ),
            _ => Ok(()),
        }
    }

    /// Evaluate on a state given by node values and mode coefficients.
    pub fn eval(&self, op: &SpectralOperator, values: &[f64], coeffs: &[f64]) -> f64 {
        match *self {
            TestFunctional::ModeCoefficient { k } => coeffs[op.position_of(k).unwrap()],
            TestFunctional::SupNorm => values.iter().fold(0.0, |m, v| m.max(v.abs())),
            TestFunctional::PointValue { xi } => {
                Field::from_vec_unchecked(values.to_vec()).interpolate(xi)
            }
            TestFunctional::BoundedComposite { map, k } => {
                map.eval(coeffs[op.position_of(k).unwrap()])
            }
        }
    }

    pub fn eval_field(&self, op: &SpectralOperator, x: &Field) -> f64 {
        self.eval(op, x.values(), &op.analyze(x))
    }

    /// `sup |phi|` for bounded functionals.
    pub fn sup_bound(&self) -> Option<f64> {
        match self {
            TestFunctional::BoundedComposite { .. } => Some(1.0),
            _ => None,
        }
    }

    /// `(theta, [phi]_theta)` with respect to `|.|_E`, when known.
    pub fn holder(&self) -> Option<(f64, f64)> {
        match *self {
            TestFunctional::ModeCoefficient { .. } => Some((1.0, 2f64.sqrt())),
            TestFunctional::SupNorm | TestFunctional::PointValue { .. } => Some((1.0, 1.0)),
            TestFunctional::BoundedComposite {
                map: ScalarMap::Tanh { scale },
                ..
            } => Some((1.0, scale.abs() * 2f64.sqrt())),
            TestFunctional::BoundedComposite {
                map: ScalarMap::Sign,
                ..
            } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub wall_time: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldEstimate {
    pub mean: Field,
    pub stderr: Field,
    pub n_samples: usize,
    pub seed: u64,
    pub wall_time: f64,
}

/// Everything an ensemble needs besides the observable.
#[derive(Clone, Debug)]
pub struct Model {
    pub op: SpectralOperator,
    pub reaction: PolynomialReaction,
    pub drift: Option<HolderDrift>,
    pub dt: f64,
    /// Number of noise-driven modes (at most `op.n_modes()`).
    pub noise_modes: usize,
    pub blow_up_threshold: f64,
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    pub workers: usize,
}

impl Model {
    pub fn new(op: SpectralOperator, reaction: PolynomialReaction, dt: f64, seed: u64) -> Self {
        let noise_modes = op.n_modes();
        Model {
            op,
            reaction,
            drift: None,
            dt,
            noise_modes,
            blow_up_threshold: 1e6,
            seed,
            workers: 1,
        }
    }

    pub fn with_drift(mut self, drift: Option<HolderDrift>) -> Self {
        self.drift = drift;
        self
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Model {
            seed,
            ..self.clone()
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn path_spec(&self, index: usize, steps: usize) -> NoisePathSpec {
        NoisePathSpec::new(
            sample_seed(self.seed, index as u64),
            self.dt,
            steps.max(1),
            self.noise_modes,
        )
    }

    pub fn sample_path(&self, index: usize, steps: usize) -> Result<NoisePath> {
        NoisePath::sample(&self.path_spec(index, steps), &self.op)
    }

    fn config(&self, steps: usize) -> SolverConfig {
        SolverConfig {
            blow_up_threshold: self.blow_up_threshold,
            ..SolverConfig::new(self.dt, steps as f64 * self.dt)
        }
    }

    /// Runs sample `index` from `x` for `steps` steps, observing every step.
    pub fn simulate<O>(&self, index: usize, x: &Field, steps: usize, observe: O) -> Result<()>
    where
        O: FnMut(usize, &[f64], &[f64]) -> Result<()>,
    {
        let path = self.sample_path(index, steps)?;
        run(
            &self.op,
            x,
            &self.reaction,
            self.drift.as_ref(),
            &path,
            &self.config(steps),
            observe,
        )
        .map_err(|e| tag_sample(e, index))
    }

    /// Final state of sample `index`.
    pub fn endpoint(&self, index: usize, x: &Field, steps: usize) -> Result<Field> {
        let mut last = Vec::new();
        self.simulate(index, x, steps, |j, _, v| {
            if j == steps {
                last = v.to_vec();
            }
            Ok(())
        })?;
        Ok(Field::from_vec_unchecked(last))
    }
}

fn tag_sample(e: Error, index: usize) -> Error {
    match e {
        Error::BlowUp { t, norm } => Error::SampleBlowUp { index, t, norm },
        other => other,
    }
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {n}")));
    }
    Ok(())
}

fn summarize(values: &[f64], seed: u64, start: Instant) -> EstimatorResult {
    let (mean, stderr) = stats::mean_stderr(values);
    EstimatorResult {
        mean,
        stderr,
        n_samples: values.len(),
        seed,
        wall_time: start.elapsed().as_secs_f64(),
    }
}

/// `P_t phi(x) = E phi(X(t, x))`, or `Q_t phi(x)` when the model has a drift.
pub fn estimate_pt(
    model: &Model,
    phi: &TestFunctional,
    x: &Field,
    t: f64,
    n: usize,
) -> Result<EstimatorResult> {
    let start = Instant::now();
    check_n(n)?;
    phi.validate(&model.op)?;
    let steps = steps_for(t, model.dt)?;
    if steps == 0 {
        let v = phi.eval_field(&model.op, x);
        return Ok(EstimatorResult {
            mean: v,
            stderr: 0.0,
            n_samples: n,
            seed: model.seed,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    let values = map_indexed(model.workers, n, |i| {
        let mut v = 0.0;
        model.simulate(i, x, steps, |j, a, s| {
            if j == steps {
                v = phi.eval(&model.op, s, a);
            }
            Ok(())
        })?;
        Ok(v)
    })?;
    Ok(summarize(&values, model.seed, start))
}

/// Centered difference `(P_t phi(x + eps h) - P_t phi(x - eps h)) / 2 eps`
/// with common random numbers; the stderr is that of the per-sample
/// difference.
pub fn finite_difference_pt(
    model: &Model,
    phi: &TestFunctional,
    x: &Field,
    h: &Field,
    eps: f64,
    t: f64,
    n: usize,
) -> Result<EstimatorResult> {
    let start = Instant::now();
    check_n(n)?;
    phi.validate(&model.op)?;
    let steps = steps_for(t, model.dt)?;
    let xp = x + &h.scale(eps);
    let xm = x - &h.scale(eps);
    let values = map_indexed(model.workers, n, |i| {
        let p = model.endpoint(i, &xp, steps)?;
        let m = model.endpoint(i, &xm, steps)?;
        Ok((phi.eval_field(&model.op, &p) - phi.eval_field(&model.op, &m)) / (2.0 * eps))
    })?;
    Ok(summarize(&values, model.seed, start))
}

/// Bismut-Elworthy estimate of `<D P_t phi(x), h>`:
/// `(1/t) E[phi(X_n) sum_j <eta_{j+1} / phi1(dt A), dW_j>]`.
///
/// `eta` is the first variation of the scheme and is adapted (it depends on
/// the noise only up to step `j`). The weight `1 / phi1(mu_k dt)` turns the
/// perturbation of the OU innovation into the Brownian increment it came
/// from, which makes the identity exact for the discrete chain.
pub fn bismut_elworthy_derivative(
    model: &Model,
    phi: &TestFunctional,
    x: &Field,
    h: &Field,
    t: f64,
    n: usize,
) -> Result<EstimatorResult> {
    let start = Instant::now();
    check_n(n)?;
    phi.validate(&model.op)?;
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("derivative needs t > 0, got {t}")));
    }
    if h.sup_norm() == 0.0 {
        return Err(Error::InvalidArgument("direction h must be nonzero".into()));
    }
    if model.drift.is_some() {
        return Err(Error::InvalidArgument(
            "the derivative estimator needs a differentiable drift; remove B".into(),
        ));
    }
    if model.noise_modes != model.op.n_modes() {
        return Err(Error::ModeMismatch {
            operator: model.op.n_modes(),
            path: model.noise_modes,
        });
    }
    let steps = steps_for(t, model.dt)?;
    if steps == 0 {
        return Err(Error::InvalidArgument(format!("t = {t} is below one step")));
    }
    let op = &model.op;
    let eta0 = op.analyze(h);
    let x0 = op.analyze(x);
    let values = map_indexed(model.workers, n, |i| {
        let path = model.sample_path(i, steps)?;
        let mut stepper =
            Stepper::new(op, &model.reaction, None, model.dt, model.blow_up_threshold)?;
        let weight: Vec<f64> = stepper.gain.iter().map(|g| model.dt / g).collect();
        let mut a = x0.clone();
        let mut xv = vec![0.0; op.n_nodes()];
        op.synthesize_into(&a, &mut xv);
        let mut eta = eta0.clone();
        let mut ev = vec![0.0; op.n_nodes()];
        op.synthesize_into(&eta, &mut ev);
        let mut integral = 0.0;
        for j in 0..steps {
            stepper.tangent_step(&mut eta, &xv, &ev, None);
            for k in 0..eta.len() {
                integral += eta[k] * weight[k] * path.increment(k, j);
            }
            stepper.step(&mut a, &xv, Some(&path), j);
            op.synthesize_into(&a, &mut xv);
            op.synthesize_into(&eta, &mut ev);
            stepper
                .check((j + 1) as f64 * model.dt, &xv)
                .map_err(|e| tag_sample(e, i))?;
        }
        Ok(phi.eval(op, &xv, &a) * integral / t)
    })?;
    let r = summarize(&values, model.seed, start);
    if r.stderr > r.mean.abs() {
        log::warn!(
            "derivative estimate at t = {t}: stderr {:e} exceeds |mean| {:e}",
            r.stderr,
            r.mean.abs()
        );
    }
    Ok(r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmoothingPoint {
    pub t: f64,
    /// Largest `|<D P_t phi, h>|` over the direction set.
    pub value: f64,
    pub stderr: f64,
    pub direction: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmoothingFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub points: Vec<SmoothingPoint>,
}

/// Relative stderr above which a point refuses to enter the fit.
pub const SMOOTHING_GATE: f64 = 0.3;

/// Log-log regression of the derivative size against `t`.
pub fn smoothing_rate_fit(
    model: &Model,
    phi: &TestFunctional,
    x: &Field,
    ts: &[f64],
    directions: &[Field],
    n: usize,
) -> Result<SmoothingFit> {
    if ts.len() < 2 || directions.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least two times and one direction".into(),
        ));
    }
    let lo = ts.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ts.iter().copied().fold(0.0, f64::max);
    if !(lo > 0.0) || hi > 1.0 || hi / lo < 10.0 {
        return Err(Error::InvalidArgument(format!(
            "time grid [{lo}, {hi}] must span a decade inside (0, 1]"
        )));
    }
    let mut points = Vec::with_capacity(ts.len());
    for &t in ts {
        let mut best: Option<SmoothingPoint> = None;
        for (d, h) in directions.iter().enumerate() {
            let r = bismut_elworthy_derivative(model, phi, x, h, t, n)?;
            if best.as_ref().map_or(true, |b| r.mean.abs() > b.value) {
                best = Some(SmoothingPoint {
                    t,
                    value: r.mean.abs(),
                    stderr: r.stderr,
                    direction: d,
                });
            }
        }
        let p = best.expect("non-empty direction set");
        if p.stderr > SMOOTHING_GATE * p.value {
            return Err(Error::VarianceGate {
                t,
                mean: p.value,
                stderr: p.stderr,
                limit: SMOOTHING_GATE,
            });
        }
        points.push(p);
    }
    let fit = stats::loglog_fit(
        &points.iter().map(|p| p.t).collect::<Vec<_>>(),
        &points.iter().map(|p| p.value).collect::<Vec<_>>(),
    );
    Ok(SmoothingFit {
        slope: fit.slope,
        intercept: fit.intercept,
        slope_stderr: fit.slope_stderr,
        points,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResolventOptions {
    /// Truncation time; chosen from `tol` when absent.
    pub t_max: Option<f64>,
    /// Tolerance for the truncation tail `e^{-lambda t_max} sup|phi| / lambda`.
    pub tol: f64,
    /// Even number of Simpson intervals; about `10 lambda t_max` when absent.
    pub intervals: Option<usize>,
    /// Bound on `|phi|` along trajectories, required for unbounded `phi`.
    pub phi_bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolventResult {
    /// `stderr` is the conservative `sum_i |w_i| stderr_i`.
    pub estimate: EstimatorResult,
    pub tail: f64,
    /// `|Simpson - trapezoid|` on the node means.
    pub quadrature_error: f64,
    /// `3 stderr + tail + quadrature_error`.
    pub budget: f64,
    pub t_max: f64,
    pub nodes: Vec<f64>,
}

/// `R(lambda) phi(x) = int_0^inf e^{-lambda t} P_t phi(x) dt` by composite
/// Simpson on `[0, t_max]`, all nodes read off one ensemble.
pub fn estimate_resolvent(
    model: &Model,
    phi: &TestFunctional,
    x: &Field,
    lambda: f64,
    opts: &ResolventOptions,
    n: usize,
) -> Result<ResolventResult> {
    let start = Instant::now();
    check_n(n)?;
    phi.validate(&model.op)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {lambda}")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("resolvent tolerance must be positive".into()));
    }
    let bound = opts.phi_bound.or(phi.sup_bound()).ok_or_else(|| {
        Error::InvalidArgument("unbounded functional: supply an explicit bound on |phi|".into())
    })?;
    let wanted = match opts.t_max {
        Some(t) => {
            let tail = (-lambda * t).exp() * bound / lambda;
            if tail > opts.tol {
                return Err(Error::TailTooLarge { tail, tol: opts.tol });
            }
            t
        }
        None => ((bound / (lambda * opts.tol)).ln() / lambda).max(model.dt),
    };
    let mut intervals = opts
        .intervals
        .unwrap_or_else(|| (10.0 * lambda * wanted).ceil() as usize)
        .max(2);
    intervals += intervals % 2;
    let node_steps = ((wanted / intervals as f64) / model.dt).ceil().max(1.0) as usize;
    let h = node_steps as f64 * model.dt;
    let t_max = h * intervals as f64;
    let tail = (-lambda * t_max).exp() * bound / lambda;
    let total = node_steps * intervals;
    let samples = map_indexed(model.workers, n, |i| {
        let mut row = Vec::with_capacity(intervals + 1);
        model.simulate(i, x, total, |j, a, s| {
            if j % node_steps == 0 {
                row.push(phi.eval(&model.op, s, a));
            }
            Ok(())
        })?;
        Ok(row)
    })?;
    let nodes: Vec<f64> = (0..=intervals).map(|i| i as f64 * h).collect();
    let mut simpson = 0.0;
    let mut trapezoid = 0.0;
    let mut stderr = 0.0;
    for (i, &t) in nodes.iter().enumerate() {
        let column: Vec<f64> = samples.iter().map(|r| r[i]).collect();
        let (m, se) = stats::mean_stderr(&column);
        let e = (-lambda * t).exp();
        let ws = h / 3.0
            * if i == 0 || i == intervals {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
        let wt = h * if i == 0 || i == intervals { 0.5 } else { 1.0 };
        simpson += ws * e * m;
        trapezoid += wt * e * m;
        stderr += ws * e * se;
    }
    let quadrature_error = (simpson - trapezoid).abs();
    Ok(ResolventResult {
        estimate: EstimatorResult {
            mean: simpson,
            stderr,
            n_samples: n,
            seed: model.seed,
            wall_time: start.elapsed().as_secs_f64(),
        },
        tail,
        quadrature_error,
        budget: 3.0 * stderr + tail + quadrature_error,
        t_max,
        nodes,
    })
}

/// `E Phi(X(t, x))` componentwise on the grid.
pub fn vectorial_pt(
    model: &Model,
    big_phi: &HolderDrift,
    x: &Field,
    t: f64,
    n: usize,
) -> Result<FieldEstimate> {
    let start = Instant::now();
    check_n(n)?;
    let steps = steps_for(t, model.dt)?;
    if steps == 0 {
        return Ok(FieldEstimate {
            mean: big_phi.apply(x),
            stderr: Field::zeros(x.len()),
            n_samples: n,
            seed: model.seed,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    let samples = map_indexed(model.workers, n, |i| {
        Ok(big_phi.apply(&model.endpoint(i, x, steps)?).into_values())
    })?;
    let nodes = x.len();
    let mut mean = vec![0.0; nodes];
    let mut stderr = vec![0.0; nodes];
    for q in 0..nodes {
        let column: Vec<f64> = samples.iter().map(|s| s[q]).collect();
        let (m, se) = stats::mean_stderr(&column);
        mean[q] = m;
        stderr[q] = se;
    }
    Ok(FieldEstimate {
        mean: Field::from_vec_unchecked(mean),
        stderr: Field::from_vec_unchecked(stderr),
        n_samples: n,
        seed: model.seed,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// `P_{t1 + t2} phi(x)` estimated directly and by restarting one fresh
/// continuation from each time-`t1` endpoint. The three stages use
/// independent seeds derived from the model seed.
pub fn chapman_kolmogorov(
    model: &Model,
    phi: &TestFunctional,
    x: &Field,
    t1: f64,
    t2: f64,
    n: usize,
) -> Result<(EstimatorResult, EstimatorResult)> {
    let start = Instant::now();
    check_n(n)?;
    let s1 = steps_for(t1, model.dt)?;
    let s2 = steps_for(t2, model.dt)?;
    let direct_model = model.with_seed(mix64(model.seed ^ 0xC0));
    let first = model.with_seed(mix64(model.seed ^ 0xC1));
    let second = model.with_seed(mix64(model.seed ^ 0xC2));
    let direct = estimate_pt(&direct_model, phi, x, t1 + t2, n)?;
    let values = map_indexed(model.workers, n, |i| {
        let mid = first.endpoint(i, x, s1)?;
        let end = second.endpoint(i, &mid, s2)?;
        Ok(phi.eval_field(&model.op, &end))
    })?;
    Ok((direct, summarize(&values, second.seed, start)))
}
