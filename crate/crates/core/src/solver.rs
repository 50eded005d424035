//! Exponential-Euler integration of the mild equation, the first and second
//! variation along a recorded path, and the variation-of-constants check.
//!
//! In mode coordinates one step reads
//! `a_{j+1} = e^{mu dt} a_j + dt phi1(mu dt) <F(X_j) + B(X_j), e_k> + I_j`,
//! where `I_j` is the exact OU innovation stored in the noise path. The
//! variations are the exact linearization of this map, so they agree with
//! shared-noise finite differences up to `O(eps)` at any `dt`.

use serde::{Deserialize, Serialize};

use crate::drift::{HolderDrift, PolynomialReaction};
use crate::error::{Error, Result};
use crate::noise::NoisePath;
use crate::spectral::{phi1, Field, SpectralOperator};
use crate::stats;
use crate::trajectory::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    ExponentialEuler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default)]
    pub scheme: Scheme,
    pub blow_up_threshold: f64,
    pub record_stride: usize,
}

impl SolverConfig {
    pub fn new(dt: f64, horizon: f64) -> Self {
        SolverConfig {
            dt,
            horizon,
            scheme: Scheme::ExponentialEuler,
            blow_up_threshold: 1e6,
            record_stride: 1,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "horizon must be non-negative, got {}",
                self.horizon
            )));
        }
        let ratio = self.horizon / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "T / dt = {ratio} is not an integer"
            )));
        }
        if !(self.blow_up_threshold > 0.0) {
            return Err(Error::InvalidArgument("blow-up threshold must be positive".into()));
        }
        if self.record_stride == 0 {
            return Err(Error::InvalidArgument("record stride must be at least 1".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Number of whole steps of size `dt` in `t`, or an error if `t` is not a multiple.
pub fn steps_for(t: f64, dt: f64) -> Result<usize> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::NegativeTime(t));
    }
    let r = t / dt;
    if (r - r.round()).abs() > 1e-9 * r.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "time {t} is not a multiple of dt = {dt}"
        )));
    }
    Ok(r.round() as usize)
}

/// One-step machinery shared by the solver, the variations and the estimators.
pub(crate) struct Stepper<'a> {
    pub op: &'a SpectralOperator,
    pub reaction: &'a PolynomialReaction,
    pub drift: Option<&'a HolderDrift>,
    pub decay: Vec<f64>,
    pub gain: Vec<f64>,
    pub threshold: f64,
    force: Vec<f64>,
    extra: Vec<f64>,
    fc: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(
        op: &'a SpectralOperator,
        reaction: &'a PolynomialReaction,
        drift: Option<&'a HolderDrift>,
        dt: f64,
        threshold: f64,
    ) -> Result<Self> {
        reaction.check_grid(op.n_nodes())?;
        let decay = op.eigenvalues().iter().map(|mu| (mu * dt).exp()).collect();
        let gain = op.eigenvalues().iter().map(|mu| dt * phi1(mu * dt)).collect();
        let n = op.n_nodes();
        Ok(Stepper {
            op,
            reaction,
            drift,
            decay,
            gain,
            threshold,
            force: vec![0.0; n],
            extra: vec![0.0; n],
            fc: vec![0.0; op.n_modes()],
        })
    }

    /// `a <- e^{dt A} a + dt phi1(dt A) (F + B)(x) + I_j`, `x` the state of `a`.
    pub fn step(&mut self, a: &mut [f64], x: &[f64], path: Option<&NoisePath>, j: usize) {
        self.reaction.eval_into(x, &mut self.force);
        if let Some(b) = self.drift {
            b.apply_into(x, &mut self.extra);
            for (f, e) in self.force.iter_mut().zip(&self.extra) {
                *f += e;
            }
        }
        self.op.analyze_into(&self.force, &mut self.fc);
        for k in 0..a.len() {
            a[k] = self.decay[k] * a[k] + self.gain[k] * self.fc[k];
        }
        if let Some(p) = path {
            for (k, ak) in a.iter_mut().enumerate().take(p.n_modes()) {
                *ak += p.innovation(k, j);
            }
        }
    }

    /// `eta <- e^{dt A} eta + dt phi1(dt A) (F'(x) eta_values + source)`.
    pub fn tangent_step(
        &mut self,
        eta: &mut [f64],
        x: &[f64],
        eta_values: &[f64],
        source: Option<&[f64]>,
    ) {
        self.reaction.df_into(x, &mut self.force);
        for (f, v) in self.force.iter_mut().zip(eta_values) {
            *f *= v;
        }
        if let Some(s) = source {
            for (f, v) in self.force.iter_mut().zip(s) {
                *f += v;
            }
        }
        self.op.analyze_into(&self.force, &mut self.fc);
        for k in 0..eta.len() {
            eta[k] = self.decay[k] * eta[k] + self.gain[k] * self.fc[k];
        }
    }

    pub fn check(&self, t: f64, x: &[f64]) -> Result<()> {
        let norm = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if !(norm <= self.threshold) {
            return Err(Error::BlowUp { t, norm });
        }
        Ok(())
    }
}

fn check_inputs(
    op: &SpectralOperator,
    x0: &Field,
    path: &NoisePath,
    cfg: &SolverConfig,
) -> Result<usize> {
    cfg.validate()?;
    path.check_operator(op)?;
    if x0.len() != op.n_nodes() {
        return Err(Error::InvalidArgument(format!(
            "initial field has {} values, grid has {} nodes",
            x0.len(),
            op.n_nodes()
        )));
    }
    if (path.dt() - cfg.dt).abs() > 1e-12 * cfg.dt {
        return Err(Error::InvalidArgument(format!(
            "noise path step {} differs from solver dt {}",
            path.dt(),
            cfg.dt
        )));
    }
    let n = cfg.n_steps();
    if path.n_steps() < n {
        return Err(Error::InvalidArgument(format!(
            "noise path covers {} steps, solver needs {n}",
            path.n_steps()
        )));
    }
    Ok(n)
}

/// Drives the scheme and calls `observe(j, a_j, X_j)` for `j = 0..=n`.
pub(crate) fn run<O>(
    op: &SpectralOperator,
    x0: &Field,
    f: &PolynomialReaction,
    b: Option<&HolderDrift>,
    path: &NoisePath,
    cfg: &SolverConfig,
    mut observe: O,
) -> Result<()>
where
    O: FnMut(usize, &[f64], &[f64]) -> Result<()>,
{
    let n = check_inputs(op, x0, path, cfg)?;
    let mut stepper = Stepper::new(op, f, b, cfg.dt, cfg.blow_up_threshold)?;
    let mut a = op.analyze(x0);
    let mut x = vec![0.0; op.n_nodes()];
    op.synthesize_into(&a, &mut x);
    stepper.check(0.0, &x)?;
    observe(0, &a, &x)?;
    for j in 0..n {
        stepper.step(&mut a, &x, Some(path), j);
        op.synthesize_into(&a, &mut x);
        stepper.check((j + 1) as f64 * cfg.dt, &x)?;
        observe(j + 1, &a, &x)?;
    }
    Ok(())
}

pub(crate) fn drift_digest(f: &PolynomialReaction, b: Option<&HolderDrift>) -> String {
    format!(
        "F:{}|B:{}",
        f.digest(),
        b.map_or_else(|| "none".to_string(), HolderDrift::digest)
    )
}

/// Mild solution on `[0, T]` driven by `path`. States are recorded at
/// `t = 0`, every `record_stride` steps, and at `T`. The recorded initial
/// state is the projection of `x0` onto the retained modes.
pub fn solve_mild(
    op: &SpectralOperator,
    x0: &Field,
    f: &PolynomialReaction,
    b: Option<&HolderDrift>,
    path: &NoisePath,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    let mut traj = Trajectory::new(path.spec().clone(), drift_digest(f, b), cfg.dt);
    traj.stride = cfg.record_stride;
    let n = cfg.n_steps();
    run(op, x0, f, b, path, cfg, |j, a, x| {
        if j % cfg.record_stride == 0 || j == n {
            traj.push(j as f64 * cfg.dt, Field::from_vec_unchecked(x.to_vec()), a.to_vec());
        }
        Ok(())
    })?;
    Ok(traj)
}

/// Final state only.
pub fn solve_final(
    op: &SpectralOperator,
    x0: &Field,
    f: &PolynomialReaction,
    b: Option<&HolderDrift>,
    path: &NoisePath,
    cfg: &SolverConfig,
) -> Result<Field> {
    let mut last = Vec::new();
    let n = cfg.n_steps();
    run(op, x0, f, b, path, cfg, |j, _, x| {
        if j == n {
            last = x.to_vec();
        }
        Ok(())
    })?;
    Ok(Field::from_vec_unchecked(last))
}

fn require_dense(base: &Trajectory) -> Result<()> {
    if base.stride != 1 || base.is_empty() {
        return Err(Error::InvalidArgument(
            "variations need a base trajectory recorded at every step".into(),
        ));
    }
    Ok(())
}

/// `eta(t) = U_{t,s} h`: the linearized flow along `base`, started at a
/// recorded time `s` with `eta(s) = P_M h`.
pub fn first_variation(
    op: &SpectralOperator,
    base: &Trajectory,
    f: &PolynomialReaction,
    h: &Field,
    s: f64,
) -> Result<Trajectory> {
    require_dense(base)?;
    let start = base
        .index_of(s)
        .ok_or_else(|| Error::InvalidArgument(format!("{s} is not a recorded time")))?;
    let mut stepper = Stepper::new(op, f, None, base.dt, f.blow_up_threshold)?;
    let mut eta = op.analyze(h);
    let mut vals = vec![0.0; op.n_nodes()];
    op.synthesize_into(&eta, &mut vals);
    let mut out = Trajectory::new(
        base.noise_provenance.clone(),
        format!("first-variation[{}]", base.drift_provenance),
        base.dt,
    );
    out.push(base.times[start], Field::from_vec_unchecked(vals.clone()), eta.clone());
    for j in start..base.len() - 1 {
        stepper.tangent_step(&mut eta, base.states[j].values(), &vals, None);
        op.synthesize_into(&eta, &mut vals);
        stepper.check(base.times[j + 1], &vals)?;
        out.push(base.times[j + 1], Field::from_vec_unchecked(vals.clone()), eta.clone());
    }
    Ok(out)
}

/// `zeta(t) = int_0^t U_{t,s} F''(X(s)) (eta_h(s) eta_k(s)) ds`, propagated
/// in one forward pass together with `eta_h` and `eta_k`.
pub fn second_variation(
    op: &SpectralOperator,
    base: &Trajectory,
    f: &PolynomialReaction,
    h: &Field,
    k: &Field,
) -> Result<Trajectory> {
    require_dense(base)?;
    let nodes = op.n_nodes();
    let mut stepper = Stepper::new(op, f, None, base.dt, f.blow_up_threshold)?;
    let mut eh = op.analyze(h);
    let mut ek = op.analyze(k);
    let mut zeta = vec![0.0; op.n_modes()];
    let mut vh = vec![0.0; nodes];
    let mut vk = vec![0.0; nodes];
    let mut vz = vec![0.0; nodes];
    let mut d2 = vec![0.0; nodes];
    op.synthesize_into(&eh, &mut vh);
    op.synthesize_into(&ek, &mut vk);
    let mut out = Trajectory::new(
        base.noise_provenance.clone(),
        format!("second-variation[{}]", base.drift_provenance),
        base.dt,
    );
    out.push(base.times[0], Field::zeros(nodes), zeta.clone());
    for j in 0..base.len() - 1 {
        let x = base.states[j].values();
        f.d2f_into(x, &mut d2);
        // symmetric in (h, k): the product is formed before any rounding
        // depends on the order of the inputs.
        for ((s, a), b) in d2.iter_mut().zip(&vh).zip(&vk) {
            *s *= a * b;
        }
        stepper.tangent_step(&mut zeta, x, &vz, Some(&d2));
        stepper.tangent_step(&mut eh, x, &vh, None);
        stepper.tangent_step(&mut ek, x, &vk, None);
        op.synthesize_into(&zeta, &mut vz);
        op.synthesize_into(&eh, &mut vh);
        op.synthesize_into(&ek, &mut vk);
        stepper.check(base.times[j + 1], &vz)?;
        out.push(base.times[j + 1], Field::from_vec_unchecked(vz.clone()), zeta.clone());
    }
    Ok(out)
}

/// `S(t) = sum_i |U_{t,0} e_i|_H^2` over every retained mode, at every
/// recorded time of `base`. The `M` tangents are propagated together.
pub fn kernel_square_sum(
    op: &SpectralOperator,
    base: &Trajectory,
    f: &PolynomialReaction,
) -> Result<Vec<(f64, f64)>> {
    require_dense(base)?;
    let m = op.n_modes();
    let nodes = op.n_nodes();
    let mut stepper = Stepper::new(op, f, None, base.dt, f.blow_up_threshold)?;
    let mut etas: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut e = vec![0.0; m];
            e[i] = 1.0;
            e
        })
        .collect();
    let mut vals = vec![0.0; nodes];
    let sum = |etas: &[Vec<f64>]| -> f64 {
        etas.iter().flat_map(|e| e.iter().map(|v| v * v)).sum()
    };
    let mut out = vec![(base.times[0], sum(&etas))];
    for j in 0..base.len() - 1 {
        for eta in etas.iter_mut() {
            op.synthesize_into(eta, &mut vals);
            stepper.tangent_step(eta, base.states[j].values(), &vals, None);
        }
        out.push((base.times[j + 1], sum(&etas)));
    }
    Ok(out)
}

/// Residuals of `Y(t) = X(t) + int_0^t U^Y_{t,s} B(Y(s)) ds` on every step.
#[derive(Clone, Debug, PartialEq)]
pub struct VcfReport {
    pub times: Vec<f64>,
    pub residual_h: Vec<f64>,
    pub residual_e: Vec<f64>,
    pub max_h: f64,
    pub max_e: f64,
    /// `sup_t |Y - X|_E`, the size of the quantity being reconstructed.
    pub perturbation_size: f64,
}

/// Evaluates both sides of the nonlinear variation-of-constants formula.
///
/// `U^Y_{t,s}` is the derivative of the unperturbed flow from time `s` to `t`
/// at the starting point `Y(s)`: for every step `s = t_j` the unperturbed
/// dynamics are restarted from `Y(t_j)` on the same noise and the tangent
/// started from `dt phi1(dt A) B(Y(t_j))` is carried along them. Cost is
/// quadratic in the step count.
pub fn variation_of_constants_check(
    op: &SpectralOperator,
    x0: &Field,
    f: &PolynomialReaction,
    b: &HolderDrift,
    path: &NoisePath,
    cfg: &SolverConfig,
) -> Result<VcfReport> {
    let dense = SolverConfig {
        record_stride: 1,
        ..cfg.clone()
    };
    let x = solve_mild(op, x0, f, None, path, &dense)?;
    let y = solve_mild(op, x0, f, Some(b), path, &dense)?;
    let n = dense.n_steps();
    let m = op.n_modes();
    let nodes = op.n_nodes();
    let mut stepper = Stepper::new(op, f, None, dense.dt, dense.blow_up_threshold)?;
    let mut integral = vec![vec![0.0; m]; n + 1];
    let mut z = vec![0.0; m];
    let mut zv = vec![0.0; nodes];
    let mut nu = vec![0.0; m];
    let mut nuv = vec![0.0; nodes];
    let mut bv = vec![0.0; nodes];
    let mut bc = vec![0.0; m];
    for j in 0..n {
        let yj = y.states[j].values();
        b.apply_into(yj, &mut bv);
        op.analyze_into(&bv, &mut bc);
        for k in 0..m {
            nu[k] = stepper.gain[k] * bc[k];
        }
        z.copy_from_slice(&y.coefficients[j]);
        stepper.step(&mut z, yj, Some(path), j);
        op.synthesize_into(&z, &mut zv);
        for l in j + 1..=n {
            for (acc, v) in integral[l].iter_mut().zip(&nu) {
                *acc += v;
            }
            if l == n {
                break;
            }
            op.synthesize_into(&nu, &mut nuv);
            stepper.tangent_step(&mut nu, &zv, &nuv, None);
            stepper.step(&mut z, &zv, Some(path), l);
            op.synthesize_into(&z, &mut zv);
            stepper.check(l as f64 * dense.dt, &zv)?;
        }
    }
    let mut report = VcfReport {
        times: Vec::with_capacity(n + 1),
        residual_h: Vec::with_capacity(n + 1),
        residual_e: Vec::with_capacity(n + 1),
        max_h: 0.0,
        max_e: 0.0,
        perturbation_size: 0.0,
    };
    for i in 0..=n {
        let r: Vec<f64> = (0..m)
            .map(|k| y.coefficients[i][k] - x.coefficients[i][k] - integral[i][k])
            .collect();
        let rh = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let re = op.synthesize(&r).sup_norm();
        report.times.push(x.times[i]);
        report.residual_h.push(rh);
        report.residual_e.push(re);
        report.max_h = report.max_h.max(rh);
        report.max_e = report.max_e.max(re);
        report.perturbation_size = report
            .perturbation_size
            .max((&y.states[i] - &x.states[i]).sup_norm());
    }
    Ok(report)
}

/// Ensemble statistics of `sup_t |X(t)|_E`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentReport {
    pub n: usize,
    /// `(p, E[(sup_t |X|_E)^p])`.
    pub moments: Vec<(f64, f64)>,
    /// 5%, 50%, 95% quantiles of `sup_t |X|_E`.
    pub quantiles: [f64; 3],
}

pub fn moment_estimates(ensemble: &[Trajectory], ps: &[f64]) -> Result<MomentReport> {
    if ensemble.len() < 100 {
        return Err(Error::InvalidArgument(format!(
            "moment estimates need at least 100 trajectories, got {}",
            ensemble.len()
        )));
    }
    let sups: Vec<f64> = ensemble.iter().map(Trajectory::sup_norm).collect();
    let moments = ps
        .iter()
        .map(|&p| {
            let v: Vec<f64> = sups.iter().map(|s| s.powf(p)).collect();
            (p, stats::mean(&v))
        })
        .collect();
    Ok(MomentReport {
        n: sups.len(),
        moments,
        quantiles: [
            stats::quantile(&sups, 0.05),
            stats::quantile(&sups, 0.5),
            stats::quantile(&sups, 0.95),
        ],
    })
}

/// `E|X(t, a)|_E / E|X(t, b)|_E` from two ensembles sharing noise seeds.
pub fn collapse_ratio(a: &[Trajectory], b: &[Trajectory], t: f64) -> Result<f64> {
    let at = |ens: &[Trajectory]| -> Result<f64> {
        let v = ens
            .iter()
            .map(|tr| {
                tr.index_of(t)
                    .map(|i| tr.states[i].sup_norm())
                    .ok_or_else(|| Error::InvalidArgument(format!("{t} is not a recorded time")))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(stats::mean(&v))
    };
    Ok(at(a)? / at(b)?)
}

/// `max_t |X(t,x) - X(t,y)|_H / |x - y|_H` for a pair of runs on one path.
pub fn lipschitz_ratio(x: &Trajectory, y: &Trajectory) -> f64 {
    let d0 = (&x.states[0] - &y.states[0]).h_norm();
    x.states
        .iter()
        .zip(&y.states)
        .map(|(a, b)| (a - b).h_norm() / d0)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{sample_noise, NoisePathSpec};
    use crate::spectral::{Boundary, GridSpec};

    fn setup(boundary: Boundary) -> SpectralOperator {
        SpectralOperator::new(&GridSpec::new(31, boundary, 16).unwrap()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::new(0.0, 1.0).validate().is_err());
        assert!(SolverConfig::new(0.3, 1.0).validate().is_err());
        assert!(SolverConfig::new(0.25, 1.0).validate().is_ok());
        assert_eq!(SolverConfig::new(1e-3, 1.0).n_steps(), 1000);
        assert!(SolverConfig::new(0.1, 1.0).with_stride(0).validate().is_err());
    }

    #[test]
    fn zero_noise_zero_drift_is_heat_flow() {
        let op = setup(Boundary::Dirichlet);
        let x0 = op.project(&Field::from_fn(op.grid(), |s| s * (1.0 - s)));
        let cfg = SolverConfig::new(0.01, 0.1);
        let path = NoisePath::zero(&NoisePathSpec::new(0, 0.01, 10, 16), &op).unwrap();
        let traj = solve_mild(&op, &x0, &PolynomialReaction::zero(), None, &path, &cfg).unwrap();
        let exact = op.apply_semigroup(0.1, &x0).unwrap();
        assert!((traj.last() - &exact).sup_norm() < 1e-12);
        assert_eq!(traj.len(), 11);
    }

    #[test]
    fn deterministic_replay() {
        let op = setup(Boundary::Neumann);
        let spec = NoisePathSpec::new(3, 1e-3, 100, 16);
        let path = sample_noise(&spec, &op).unwrap();
        let x0 = Field::from_fn(op.grid(), |s| (3.0 * s).cos());
        let cfg = SolverConfig::new(1e-3, 0.1);
        let a = solve_mild(&op, &x0, &PolynomialReaction::cubic(), None, &path, &cfg).unwrap();
        let b = solve_mild(&op, &x0, &PolynomialReaction::cubic(), None, &path, &cfg).unwrap();
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn blow_up_is_reported() {
        let op = setup(Boundary::Neumann);
        let f = PolynomialReaction::linear(200.0);
        let cfg = SolverConfig::new(0.01, 1.0);
        let path = NoisePath::zero(&NoisePathSpec::new(0, 0.01, 100, 16), &op).unwrap();
        let err = solve_mild(&op, &Field::constant(33, 1.0), &f, None, &path, &cfg).unwrap_err();
        assert!(matches!(err, Error::BlowUp { .. }));
    }

    #[test]
    fn path_mismatch_rejected() {
        let op = setup(Boundary::Dirichlet);
        let path = NoisePath::zero(&NoisePathSpec::new(0, 0.02, 5, 16), &op).unwrap();
        let x0 = op.zero_field();
        let f = PolynomialReaction::zero();
        assert!(solve_mild(&op, &x0, &f, None, &path, &SolverConfig::new(0.01, 0.05)).is_err());
        assert!(solve_mild(&op, &x0, &f, None, &path, &SolverConfig::new(0.02, 0.2)).is_err());
    }

    #[test]
    fn linear_first_variation_is_scaled_heat_flow() {
        let op = setup(Boundary::Dirichlet);
        let rho = 0.7;
        let dt = 1e-3;
        let f = PolynomialReaction::linear(rho);
        let path = sample_noise(&NoisePathSpec::new(1, dt, 200, 16), &op).unwrap();
        let x0 = op.eigenfunction(1);
        let base = solve_mild(&op, &x0, &f, None, &path, &SolverConfig::new(dt, 0.2)).unwrap();
        let h = op.eigenfunction(0);
        let eta = first_variation(&op, &base, &f, &h, 0.1).unwrap();
        let mu = op.eigenvalues()[0];
        // one-step factor of the scheme on mode 0
        let factor = (mu * dt).exp() + dt * phi1(mu * dt) * rho;
        let expected = factor.powi(100);
        assert!((eta.coefficients.last().unwrap()[0] - expected).abs() < 1e-12);
        let continuum = ((mu + rho) * 0.1).exp();
        assert!((expected - continuum).abs() < 5.0 * dt * continuum);
        assert_eq!(eta.times[0], base.times[100]);
    }

    #[test]
    fn second_variation_linear_is_zero_and_symmetric() {
        let op = setup(Boundary::Neumann);
        let dt = 1e-3;
        let path = sample_noise(&NoisePathSpec::new(2, dt, 50, 16), &op).unwrap();
        let x0 = Field::from_fn(op.grid(), |s| 0.5 + s);
        let h = op.eigenfunction(1);
        let k = Field::from_fn(op.grid(), |s| s * s);
        let cfg = SolverConfig::new(dt, 0.05);
        let lin = PolynomialReaction::linear(1.0);
        let base = solve_mild(&op, &x0, &lin, None, &path, &cfg).unwrap();
        let z = second_variation(&op, &base, &lin, &h, &k).unwrap();
        assert!(z.states.iter().all(|s| s.sup_norm() == 0.0));
        let cubic = PolynomialReaction::cubic();
        let base = solve_mild(&op, &x0, &cubic, None, &path, &cfg).unwrap();
        let a = second_variation(&op, &base, &cubic, &h, &k).unwrap();
        let b = second_variation(&op, &base, &cubic, &k, &h).unwrap();
        assert_eq!(a.states, b.states);
        assert!(a.last().sup_norm() > 0.0);
    }

    #[test]
    fn vcf_zero_drift_has_zero_residual() {
        let op = setup(Boundary::Dirichlet);
        let dt = 0.01;
        let path = sample_noise(&NoisePathSpec::new(4, dt, 20, 16), &op).unwrap();
        let b = HolderDrift::Pointwise {
            b: crate::drift::ScalarHolder::Constant { value: 0.0 },
        };
        let r = variation_of_constants_check(
            &op,
            &op.eigenfunction(0),
            &PolynomialReaction::cubic(),
            &b,
            &path,
            &SolverConfig::new(dt, 0.2),
        )
        .unwrap();
        assert_eq!(r.max_e, 0.0);
    }

    #[test]
    fn vcf_linear_constant_drift_is_exact() {
        let op = setup(Boundary::Neumann);
        let dt = 0.01;
        let path = sample_noise(&NoisePathSpec::new(4, dt, 20, 16), &op).unwrap();
        let b = HolderDrift::Pointwise {
            b: crate::drift::ScalarHolder::Constant { value: 0.4 },
        };
        let r = variation_of_constants_check(
            &op,
            &op.zero_field(),
            &PolynomialReaction::linear(-0.5),
            &b,
            &path,
            &SolverConfig::new(dt, 0.2),
        )
        .unwrap();
        assert!(r.max_e < 1e-12, "{}", r.max_e);
        assert!(r.perturbation_size > 0.05);
    }

    #[test]
    fn moment_report_needs_ensemble() {
        assert!(moment_estimates(&[], &[1.0]).is_err());
    }
}
