//! Reaction term `F` (polynomial Nemytskii operator) and the bounded Hölder
//! perturbations `B`, including their Fejér-mollified approximations `B_m`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::KeyedStream;
use crate::spectral::{Field, SpectralOperator};

/// A coefficient function on the grid: one value (constant) or one per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile(Vec<f64>);

impl Profile {
    pub fn constant(c: f64) -> Self {
        Profile(vec![c])
    }

    pub fn per_node(values: Vec<f64>) -> Self {
        Profile(values)
    }

    #[inline]
    pub fn at(&self, i: usize) -> f64 {
        if self.0.len() == 1 {
            self.0[0]
        } else {
            self.0[i]
        }
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    fn len_ok(&self, n_nodes: usize) -> bool {
        self.0.len() == 1 || self.0.len() == n_nodes
    }

    fn n_profiles(&self) -> usize {
        self.0.len()
    }
}

/// Constants of the one-sided dissipativity bound
/// `(f(xi, s + h) - f(xi, s)) h <= -alpha0 h^{2(m+1)} + c (1 + |s|^gamma)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dissipativity {
    pub alpha0: f64,
    pub gamma: f64,
    pub c: f64,
}

/// `f(xi, s) = -alpha(xi) s^{2m+1} + sum_{j <= 2m} c_j(xi) s^j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialReaction {
    pub m: usize,
    pub alpha: Profile,
    /// `c_0, ..., c_{2m}`.
    pub coefficients: Vec<Profile>,
    /// `apply` refuses states with `|x|_E` above this.
    pub blow_up_threshold: f64,
}

impl PolynomialReaction {
    pub fn new(m: usize, alpha: Profile, coefficients: Vec<Profile>) -> Result<Self> {
        if coefficients.len() != 2 * m + 1 {
            return Err(Error::InvalidArgument(format!(
                "degree parameter m = {m} needs {} lower coefficients, got {}",
                2 * m + 1,
                coefficients.len()
            )));
        }
        if m >= 1 && !(alpha.min() > 0.0) {
            return Err(Error::InvalidArgument(
                "leading coefficient alpha must be positive everywhere when m >= 1".into(),
            ));
        }
        Ok(PolynomialReaction {
            m,
            alpha,
            coefficients,
            blow_up_threshold: 1e6,
        })
    }

    /// `F = 0`.
    pub fn zero() -> Self {
        Self::linear(0.0)
    }

    /// `f(s) = rho s`.
    pub fn linear(rho: f64) -> Self {
        PolynomialReaction::new(0, Profile::constant(-rho), vec![Profile::constant(0.0)]).unwrap()
    }

    /// `f(s) = -s^3`.
    pub fn cubic() -> Self {
        Self::constant_coefficients(1, 1.0, &[0.0, 0.0, 0.0]).unwrap()
    }

    /// `f(s) = -alpha s^{2m+1} + sum_j c[j] s^j` with constant coefficients.
    pub fn constant_coefficients(m: usize, alpha: f64, c: &[f64]) -> Result<Self> {
        PolynomialReaction::new(
            m,
            Profile::constant(alpha),
            c.iter().map(|&v| Profile::constant(v)).collect(),
        )
    }

    pub fn check_grid(&self, n_nodes: usize) -> Result<()> {
        if !self.alpha.len_ok(n_nodes) || !self.coefficients.iter().all(|c| c.len_ok(n_nodes)) {
            return Err(Error::InvalidArgument(format!(
                "reaction profiles do not match a grid of {n_nodes} nodes"
            )));
        }
        Ok(())
    }

    /// True when `f` is affine in `s` (`m = 0`).
    pub fn is_affine(&self) -> bool {
        self.m == 0
    }

    pub fn is_zero(&self) -> bool {
        self.alpha.is_zero() && self.coefficients.iter().all(Profile::is_zero)
    }

    #[inline]
    pub fn f(&self, i: usize, s: f64) -> f64 {
        let mut acc = -self.alpha.at(i);
        for j in (0..=2 * self.m).rev() {
            acc = acc * s + self.coefficients[j].at(i);
        }
        acc
    }

    #[inline]
    pub fn df(&self, i: usize, s: f64) -> f64 {
        let top = 2 * self.m + 1;
        let mut acc = -(top as f64) * self.alpha.at(i);
        for j in (1..top).rev() {
            acc = acc * s + j as f64 * self.coefficients[j].at(i);
        }
        acc
    }

    #[inline]
    pub fn d2f(&self, i: usize, s: f64) -> f64 {
        let top = 2 * self.m + 1;
        if top < 2 {
            return 0.0;
        }
        let mut acc = -((top * (top - 1)) as f64) * self.alpha.at(i);
        for j in (2..top).rev() {
            acc = acc * s + (j * (j - 1)) as f64 * self.coefficients[j].at(i);
        }
        acc
    }

    fn guard(&self, x: &[f64]) -> Result<()> {
        let norm = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if !(norm <= self.blow_up_threshold) {
            return Err(Error::ReactionOverflow {
                norm,
                threshold: self.blow_up_threshold,
            });
        }
        Ok(())
    }

    /// `F(x)(xi) = f(xi, x(xi))` at every node.
    pub fn apply(&self, x: &Field) -> Result<Field> {
        self.guard(x.values())?;
        let mut out = vec![0.0; x.len()];
        self.eval_into(x.values(), &mut out);
        Ok(Field::from_vec_unchecked(out))
    }

    /// Pointwise `D_s f` (`order = 1`) or `D_s^2 f` (`order = 2`) at `x`.
    pub fn apply_derivative(&self, x: &Field, order: u8) -> Result<Field> {
        self.guard(x.values())?;
        let mut out = vec![0.0; x.len()];
        match order {
            1 => self.df_into(x.values(), &mut out),
            2 => self.d2f_into(x.values(), &mut out),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "derivative order must be 1 or 2, got {order}"
                )))
            }
        }
        Ok(Field::from_vec_unchecked(out))
    }

    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, (o, &s)) in out.iter_mut().zip(x).enumerate() {
            *o = self.f(i, s);
        }
    }

    #[inline]
    pub fn df_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, (o, &s)) in out.iter_mut().zip(x).enumerate() {
            *o = self.df(i, s);
        }
    }

    #[inline]
    pub fn d2f_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, (o, &s)) in out.iter_mut().zip(x).enumerate() {
            *o = self.d2f(i, s);
        }
    }

    fn node_count(&self) -> usize {
        std::iter::once(&self.alpha)
            .chain(&self.coefficients)
            .map(Profile::n_profiles)
            .max()
            .unwrap_or(1)
    }

    /// `rho = sup_{xi, s} D_s f(xi, s)`.
    pub fn rho(&self) -> f64 {
        let nodes = self.node_count();
        let mut best = f64::NEG_INFINITY;
        for i in 0..nodes {
            if self.m == 0 {
                best = best.max(self.df(i, 0.0));
                continue;
            }
            let lower: f64 = (1..=2 * self.m)
                .map(|j| j as f64 * self.coefficients[j].at(i).abs())
                .sum();
            let lead = (2 * self.m + 1) as f64 * self.alpha.at(i);
            let span = (2.0 * lower / lead).max(1.0) * 1.5;
            let n = 4000;
            let mut arg = 0.0;
            let mut val = f64::NEG_INFINITY;
            for k in 0..=n {
                let s = -span + 2.0 * span * k as f64 / n as f64;
                let v = self.df(i, s);
                if v > val {
                    val = v;
                    arg = s;
                }
            }
            // golden-section polish around the lattice maximum
            let h = 2.0 * span / n as f64;
            let (mut a, mut b) = (arg - h, arg + h);
            let g = 0.5 * (5f64.sqrt() - 1.0);
            for _ in 0..80 {
                let c = b - g * (b - a);
                let d = a + g * (b - a);
                if self.df(i, c) > self.df(i, d) {
                    b = d;
                } else {
                    a = c;
                }
            }
            val = val.max(self.df(i, 0.5 * (a + b)));
            best = best.max(val);
        }
        best
    }

    /// Dissipativity constants by lattice maximization: `alpha0` is half the
    /// infimum of the leading coefficient, `gamma = 2(m + 1)`, and `c` is the
    /// largest ratio found over an `(s, h)` lattice plus a polar sweep at
    /// large radius, inflated by 5%. Returns `None` for `m = 0`.
    pub fn dissipativity(&self) -> Option<Dissipativity> {
        if self.m == 0 {
            return None;
        }
        let alpha0 = 0.5 * self.alpha.min();
        let gamma = 2.0 * (self.m + 1) as f64;
        let p = 2 * (self.m + 1);
        let nodes = self.node_count();
        let ratio = |i: usize, s: f64, h: f64| {
            ((self.f(i, s + h) - self.f(i, s)) * h + alpha0 * h.powi(p as i32))
                / (1.0 + s.abs().powf(gamma))
        };
        let mut c = 0.0_f64;
        for i in 0..nodes {
            let n = 400;
            let span = 25.0;
            for a in 0..=n {
                let s = -span + 2.0 * span * a as f64 / n as f64;
                for b in 0..=n {
                    let h = -span + 2.0 * span * b as f64 / n as f64;
                    c = c.max(ratio(i, s, h));
                }
            }
            for r in [1e2, 1e3] {
                for a in 0..4000 {
                    let th = std::f64::consts::TAU * a as f64 / 4000.0;
                    c = c.max(ratio(i, r * th.cos(), r * th.sin()));
                }
            }
        }
        Some(Dissipativity {
            alpha0,
            gamma,
            c: 1.05 * c + 1e-9,
        })
    }

    pub fn digest(&self) -> String {
        digest_of(&format!("{self:?}"))
    }
}

pub(crate) fn digest_of(text: &str) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    hex::encode(&h.finalize()[..8])
}

/// Scalar Hölder functions `b` with documented `(M, alpha)` and sup bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarHolder {
    /// `sin(clamp(s, -pi/2, pi/2))`, Lipschitz: `(M, alpha) = (1, 1)`.
    ClampedSine,
    /// `sign(s) min(1, |s|^alpha)`, `(M, alpha) = (2^{1 - alpha}, alpha)`.
    PowerSign { alpha: f64 },
    /// `dist(s, Z)^alpha`, `(M, alpha) = (1, alpha)`.
    DistToIntegers { alpha: f64 },
    /// Constant `b`.
    Constant { value: f64 },
}

impl ScalarHolder {
    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            ScalarHolder::ClampedSine => {
                s.clamp(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2).sin()
            }
            ScalarHolder::PowerSign { alpha } => s.signum() * s.abs().min(1.0).powf(alpha),
            ScalarHolder::DistToIntegers { alpha } => (s - s.round()).abs().powf(alpha),
            ScalarHolder::Constant { value } => value,
        }
    }

    pub fn exponent(&self) -> f64 {
        match *self {
            ScalarHolder::ClampedSine | ScalarHolder::Constant { .. } => 1.0,
            ScalarHolder::PowerSign { alpha } | ScalarHolder::DistToIntegers { alpha } => alpha,
        }
    }

    /// Hölder constant `M`.
    pub fn holder_constant(&self) -> f64 {
        match *self {
            ScalarHolder::ClampedSine => 1.0,
            ScalarHolder::PowerSign { alpha } => 2f64.powf(1.0 - alpha),
            ScalarHolder::DistToIntegers { .. } => 1.0,
            ScalarHolder::Constant { .. } => 0.0,
        }
    }

    /// `||b||_inf`.
    pub fn sup(&self) -> f64 {
        match *self {
            ScalarHolder::ClampedSine | ScalarHolder::PowerSign { .. } => 1.0,
            ScalarHolder::DistToIntegers { alpha } => 0.5f64.powf(alpha),
            ScalarHolder::Constant { value } => value.abs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ScalarHolder::PowerSign { alpha } | ScalarHolder::DistToIntegers { alpha }
                if !(alpha > 0.0 && alpha <= 1.0) =>
            {
                Err(Error::InvalidArgument(format!(
                    "Hölder exponent must lie in (0, 1], got {alpha}"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Bounded Hölder perturbations `B: E -> E`.
#[derive(Clone, Debug)]
pub enum HolderDrift {
    /// `B(x)(xi) = b(x(xi0)) g(xi)`.
    PointEval { b: ScalarHolder, xi0: f64, g: Field },
    /// `B(x)(xi) = b(max_{s <= xi} x(s))`.
    RunningMax { b: ScalarHolder },
    /// `B(x)(xi) = b(max_{s <= xi} |x(s)|)`.
    RunningMaxAbs { b: ScalarHolder },
    /// `B(x)(xi) = b(x(xi))`.
    Pointwise { b: ScalarHolder },
    /// `B_m`, see [`mollify_drift`].
    Mollified(Arc<MollifiedDrift>),
}

impl HolderDrift {
    pub fn scalar(&self) -> ScalarHolder {
        match self {
            HolderDrift::PointEval { b, .. }
            | HolderDrift::RunningMax { b }
            | HolderDrift::RunningMaxAbs { b }
            | HolderDrift::Pointwise { b } => *b,
            HolderDrift::Mollified(m) => m.inner.scalar(),
        }
    }

    pub fn is_mollified(&self) -> bool {
        matches!(self, HolderDrift::Mollified(_))
    }

    pub fn apply(&self, x: &Field) -> Field {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x.values(), &mut out);
        Field::from_vec_unchecked(out)
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            HolderDrift::PointEval { b, xi0, g } => {
                let field = Field::from_vec_unchecked(x.to_vec());
                let v = b.eval(field.interpolate(*xi0));
                for (o, gi) in out.iter_mut().zip(g.values()) {
                    *o = v * gi;
                }
            }
            HolderDrift::RunningMax { b } => {
                let mut run = f64::NEG_INFINITY;
                for (o, &s) in out.iter_mut().zip(x) {
                    run = run.max(s);
                    *o = b.eval(run);
                }
            }
            HolderDrift::RunningMaxAbs { b } => {
                let mut run = 0.0_f64;
                for (o, &s) in out.iter_mut().zip(x) {
                    run = run.max(s.abs());
                    *o = b.eval(run);
                }
            }
            HolderDrift::Pointwise { b } => {
                for (o, &s) in out.iter_mut().zip(x) {
                    *o = b.eval(s);
                }
            }
            HolderDrift::Mollified(m) => m.apply_into(x, out),
        }
    }

    /// `||B||_{C_b(E, E)}` bound `||b||_inf * (|g|_E or 1)`.
    pub fn sup_bound(&self) -> f64 {
        match self {
            HolderDrift::PointEval { b, g, .. } => b.sup() * g.sup_norm(),
            HolderDrift::Mollified(m) => m.inner.sup_bound(),
            _ => self.scalar().sup(),
        }
    }

    /// Hölder-seminorm bound: `M |g|_E` for point evaluation, `M` otherwise.
    /// For `B_m` this is the bound of the underlying `B`.
    pub fn holder_bound(&self) -> f64 {
        match self {
            HolderDrift::PointEval { b, g, .. } => b.holder_constant() * g.sup_norm(),
            HolderDrift::Mollified(m) => m.inner.holder_bound(),
            _ => self.scalar().holder_constant(),
        }
    }

    pub fn exponent(&self) -> f64 {
        self.scalar().exponent()
    }

    pub fn digest(&self) -> String {
        match self {
            HolderDrift::Mollified(m) => digest_of(&format!(
                "mollified[{}|m={}|q={}|seed={}]",
                m.inner.digest(),
                m.m,
                m.samples,
                m.seed
            )),
            other => digest_of(&format!("{other:?}")),
        }
    }
}

/// `P_hat_m x = (1/m) sum_{k=1}^m P_k x`, i.e. the multiplier
/// `(m - i + 1) / m` on the `i`-th retained mode, `i = 1..m`.
pub fn fejer_projection(op: &SpectralOperator, m: usize, x: &Field) -> Result<Field> {
    let c = fejer_coefficients(op, m, &op.analyze(x))?;
    Ok(op.synthesize(&c))
}

pub(crate) fn fejer_coefficients(op: &SpectralOperator, m: usize, coeffs: &[f64]) -> Result<Vec<f64>> {
    if m == 0 || m > op.n_modes() {
        return Err(Error::InvalidArgument(format!(
            "Fejér index m = {m} must lie in 1..={}",
            op.n_modes()
        )));
    }
    let mut c = vec![0.0; m];
    for (i, ci) in c.iter_mut().enumerate() {
        *ci = coeffs[i] * (m - i) as f64 / m as f64;
    }
    Ok(c)
}

/// Draw one coordinate from the bump density `~ exp(-1 / (1 - u^2))` on (-1, 1).
fn bump_coordinate(stream: &mut KeyedStream) -> f64 {
    loop {
        let u = 2.0 * stream.uniform() - 1.0;
        let q = 1.0 - u * u;
        if q <= 0.0 {
            continue;
        }
        if stream.uniform() <= (1.0 - 1.0 / q).exp() {
            return u;
        }
    }
}

/// `B_m(x) = int B(P_hat_m (x - T_m xi)) rho_m(xi) d xi`, estimated with a
/// fixed set of `samples` draws of `xi`, so `B_m` is a deterministic map.
/// The density is a product of one-dimensional bumps, each supported on
/// `|xi_i| <= 1 / m^2`.
#[derive(Debug)]
pub struct MollifiedDrift {
    pub inner: HolderDrift,
    pub m: usize,
    pub samples: usize,
    pub seed: u64,
    op: SpectralOperator,
    /// Coefficients of `P_hat_m T_m xi_q`, one row per draw.
    shifts: Vec<Vec<f64>>,
}

impl MollifiedDrift {
    pub fn new(
        inner: HolderDrift,
        op: &SpectralOperator,
        m: usize,
        samples: usize,
        seed: u64,
    ) -> Result<Self> {
        if inner.is_mollified() {
            return Err(Error::InvalidArgument(
                "drift is already mollified".into(),
            ));
        }
        if samples == 0 {
            return Err(Error::InvalidArgument(
                "mollification needs at least one quadrature sample".into(),
            ));
        }
        if m == 0 || m > op.n_modes() {
            return Err(Error::InvalidArgument(format!(
                "mollification index m = {m} must lie in 1..={}",
                op.n_modes()
            )));
        }
        let radius = 1.0 / (m * m) as f64;
        let shifts = (0..samples)
            .map(|q| {
                let mut s = KeyedStream::new(seed, &[m as u64, q as u64]);
                (0..m)
                    .map(|i| radius * bump_coordinate(&mut s) * (m - i) as f64 / m as f64)
                    .collect()
            })
            .collect();
        Ok(MollifiedDrift {
            inner,
            m,
            samples,
            seed,
            op: op.clone(),
            shifts,
        })
    }

    pub fn radius(&self) -> f64 {
        1.0 / (self.m * self.m) as f64
    }

    /// `sqrt(2) (m + 1) / (2 m^2)`: bound on `|P_hat_m T_m xi|_E` over the support.
    pub fn shift_bound(&self) -> f64 {
        let m = self.m as f64;
        2f64.sqrt() * (m + 1.0) / (2.0 * m * m)
    }

    /// Largest `|P_hat_m T_m xi_q|_E` among the drawn samples.
    pub fn max_shift(&self) -> f64 {
        self.shifts
            .iter()
            .map(|s| self.op.synthesize(s).sup_norm())
            .fold(0.0, f64::max)
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        // B does not depend on x, so the average is B itself; skipping the
        // quadrature keeps it bit-exact.
        if matches!(self.inner.scalar(), ScalarHolder::Constant { .. }) {
            self.inner.apply_into(x, out);
            return;
        }
        let n = x.len();
        let mut coeffs = vec![0.0; self.op.n_modes()];
        self.op.analyze_into(x, &mut coeffs);
        let base = fejer_coefficients(&self.op, self.m, &coeffs).expect("validated m");
        let mut shifted = vec![0.0; self.m];
        let mut y = vec![0.0; n];
        let mut b = vec![0.0; n];
        out.iter_mut().for_each(|o| *o = 0.0);
        for shift in &self.shifts {
            for ((s, c), d) in shifted.iter_mut().zip(&base).zip(shift) {
                *s = c - d;
            }
            self.op.synthesize_into(&shifted_full(&shifted, self.op.n_modes()), &mut y);
            self.inner.apply_into(&y, &mut b);
            for (o, v) in out.iter_mut().zip(&b) {
                *o += v;
            }
        }
        let inv = 1.0 / self.samples as f64;
        out.iter_mut().for_each(|o| *o *= inv);
    }

    /// `B(P_hat_m x)`, the mollified map without the random shift.
    pub fn apply_unshifted(&self, x: &Field) -> Field {
        let base = fejer_coefficients(&self.op, self.m, &self.op.analyze(x)).expect("validated m");
        self.inner
            .apply(&self.op.synthesize(&shifted_full(&base, self.op.n_modes())))
    }
}

fn shifted_full(c: &[f64], n_modes: usize) -> Vec<f64> {
    let mut full = vec![0.0; n_modes];
    full[..c.len()].copy_from_slice(c);
    full
}

/// Build `B_m` from `B`.
pub fn mollify_drift(
    b: &HolderDrift,
    op: &SpectralOperator,
    m: usize,
    quadrature_samples: usize,
    seed: u64,
) -> Result<HolderDrift> {
    Ok(HolderDrift::Mollified(Arc::new(MollifiedDrift::new(
        b.clone(),
        op,
        m,
        quadrature_samples,
        seed,
    )?)))
}

/// Empirical Hölder seminorm over field pairs (a lower bound of the true one).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HolderEstimate {
    pub value: f64,
    pub used: usize,
    pub skipped: usize,
}

pub fn empirical_holder_seminorm(
    b: &HolderDrift,
    pairs: &[(Field, Field)],
    alpha: f64,
) -> Result<HolderEstimate> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no field pairs supplied".into()));
    }
    let mut value = 0.0_f64;
    let mut skipped = 0;
    for (x, y) in pairs {
        let d = (x - y).sup_norm();
        if d < 1e-12 {
            log::warn!("skipping degenerate pair with |x - y|_E = {d:e}");
            skipped += 1;
            continue;
        }
        let num = (&b.apply(x) - &b.apply(y)).sup_norm();
        value = value.max(num / d.powf(alpha));
    }
    Ok(HolderEstimate {
        value,
        used: pairs.len() - skipped,
        skipped,
    })
}

/// Prefix maximum `xi -> max_{s <= xi} x(s)` on the grid.
pub fn running_max(x: &Field) -> Field {
    let mut run = f64::NEG_INFINITY;
    Field::from_vec_unchecked(
        x.values()
            .iter()
            .map(|&v| {
                run = run.max(v);
                run
            })
            .collect(),
    )
}

/// Spatial Hölder seminorm `[x]_eps = max_{i < j} |x_i - x_j| / |xi_i - xi_j|^eps`.
pub fn spatial_holder_seminorm(x: &Field, eps: f64) -> f64 {
    let h = 1.0 / (x.len() - 1) as f64;
    let v = x.values();
    let mut best = 0.0_f64;
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            let d = ((j - i) as f64 * h).powf(eps);
            best = best.max((v[i] - v[j]).abs() / d);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{Boundary, GridSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn op() -> SpectralOperator {
        SpectralOperator::new(&GridSpec::new(63, Boundary::Dirichlet, 32).unwrap()).unwrap()
    }

    fn random_field(op: &SpectralOperator, rng: &mut ChaCha8Rng, modes: usize) -> Field {
        let c: Vec<f64> = (0..op.n_modes())
            .map(|k| {
                if k < modes {
                    rng.gen_range(-1.0..1.0) / (1.0 + k as f64)
                } else {
                    0.0
                }
            })
            .collect();
        op.synthesize(&c)
    }

    #[test]
    fn cubic_on_constant() {
        let f = PolynomialReaction::cubic();
        let x = Field::constant(10, 2.0);
        assert!(f.apply(&x).unwrap().values().iter().all(|&v| v == -8.0));
        let d = f.apply_derivative(&Field::constant(10, 1.0), 1).unwrap();
        assert!(d.values().iter().all(|&v| v == -3.0));
        assert_eq!(f.rho(), 0.0);
    }

    #[test]
    fn odd_reaction_is_odd() {
        let f = PolynomialReaction::constant_coefficients(2, 1.5, &[0.0, 2.0, 0.0, -1.0, 0.0]).unwrap();
        let x = Field::new(vec![0.3, -1.2, 2.0, 0.0]).unwrap();
        let a = f.apply(&x).unwrap();
        let b = f.apply(&x.scale(-1.0)).unwrap();
        for (u, v) in a.values().iter().zip(b.values()) {
            assert_eq!(*u, -*v);
        }
    }

    #[test]
    fn horner_matches_naive_polynomial() {
        let c = [0.5, -1.0, 0.25, 2.0, -0.75];
        let f = PolynomialReaction::constant_coefficients(2, 1.3, &c).unwrap();
        for s in [-2.0f64, -0.3, 0.0, 0.7, 1.9] {
            let naive = -1.3 * s.powi(5) + c.iter().enumerate().map(|(j, cj)| cj * s.powi(j as i32)).sum::<f64>();
            let dnaive = -6.5 * s.powi(4) + c.iter().enumerate().skip(1).map(|(j, cj)| j as f64 * cj * s.powi(j as i32 - 1)).sum::<f64>();
            let d2naive = -26.0 * s.powi(3) + c.iter().enumerate().skip(2).map(|(j, cj)| (j * (j - 1)) as f64 * cj * s.powi(j as i32 - 2)).sum::<f64>();
            assert!((f.f(0, s) - naive).abs() < 1e-12);
            assert!((f.df(0, s) - dnaive).abs() < 1e-12);
            assert!((f.d2f(0, s) - d2naive).abs() < 1e-11);
        }
    }

    #[test]
    fn derivative_growth_is_bounded() {
        let f = PolynomialReaction::constant_coefficients(1, 1.0, &[0.3, 1.0, -0.5]).unwrap();
        let worst = (0..=2000)
            .map(|k| -50.0 + 0.05 * k as f64)
            .map(|s| f.df(0, s).abs() / (1.0 + s.abs().powi(2)))
            .fold(0.0, f64::max);
        assert!(worst < 4.0, "{worst}");
        // allen-cahn f = s - s^3 has rho = 1
        let ac = PolynomialReaction::constant_coefficients(1, 1.0, &[0.0, 1.0, 0.0]).unwrap();
        assert!((ac.rho() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dissipativity_lattice_check() {
        let f = PolynomialReaction::constant_coefficients(1, 1.0, &[0.5, 1.0, -0.3]).unwrap();
        let d = f.dissipativity().unwrap();
        let mut violations = 0;
        for a in 0..22 {
            for b in 0..22 {
                for i in 0..21 {
                    let s = -30.0 + 60.0 * a as f64 / 21.0 + 0.013 * i as f64;
                    let h = -30.0 + 60.0 * b as f64 / 21.0 - 0.007 * i as f64;
                    let lhs = (f.f(0, s + h) - f.f(0, s)) * h;
                    let rhs = -d.alpha0 * h.powi(4) + d.c * (1.0 + s.abs().powf(d.gamma));
                    if lhs > rhs {
                        violations += 1;
                    }
                }
            }
        }
        assert_eq!(violations, 0);
        assert!(PolynomialReaction::linear(1.0).dissipativity().is_none());
    }

    #[test]
    fn reaction_rejects_overflow() {
        let f = PolynomialReaction::cubic();
        assert!(matches!(
            f.apply(&Field::constant(4, 2e6)),
            Err(Error::ReactionOverflow { .. })
        ));
        assert!(f.apply_derivative(&Field::constant(4, 1.0), 3).is_err());
    }

    #[test]
    fn reaction_validation() {
        assert!(PolynomialReaction::constant_coefficients(1, -1.0, &[0.0; 3]).is_err());
        assert!(PolynomialReaction::constant_coefficients(1, 1.0, &[0.0; 2]).is_err());
    }

    #[test]
    fn running_max_of_monotone_field() {
        let b = ScalarHolder::PowerSign { alpha: 0.5 };
        let x = Field::new((0..20).map(|i| i as f64 * 0.1 - 0.5).collect()).unwrap();
        let y = HolderDrift::RunningMax { b }.apply(&x);
        let z = HolderDrift::Pointwise { b }.apply(&x);
        assert_eq!(y, z);
    }

    #[test]
    fn fejer_keeps_first_mode() {
        let op = op();
        let e1 = op.eigenfunction(0);
        let y = fejer_projection(&op, 3, &e1).unwrap();
        assert!((&y - &e1).sup_norm() < 1e-13);
        assert!(fejer_projection(&op, 33, &e1).is_err());
    }

    #[test]
    fn fejer_norm_ratio_on_random_fields() {
        let op = op();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut worst = 0.0_f64;
        for _ in 0..200 {
            let x = random_field(&op, &mut rng, 32);
            for m in [1, 2, 4, 8, 16, 32] {
                let y = fejer_projection(&op, m, &x).unwrap();
                worst = worst.max(y.sup_norm() / x.sup_norm());
            }
        }
        assert!(worst <= 1.1, "{worst}");
    }

    #[test]
    fn fejer_converges_on_holder_field() {
        let op = SpectralOperator::new(&GridSpec::new(255, Boundary::Dirichlet, 128).unwrap()).unwrap();
        let x = op.project(&Field::from_fn(op.grid(), |s| (s * (1.0 - s)).sqrt() * (3.0 * s).sin()));
        let errs: Vec<f64> = [4, 8, 16, 32, 64, 128]
            .iter()
            .map(|&m| (&fejer_projection(&op, m, &x).unwrap() - &x).sup_norm())
            .collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    }

    #[test]
    fn constant_b_mollifies_to_itself() {
        let op = op();
        let b = HolderDrift::Pointwise {
            b: ScalarHolder::Constant { value: 0.7 },
        };
        let bm = mollify_drift(&b, &op, 8, 16, 1).unwrap();
        let x = op.eigenfunction(2);
        assert!((&bm.apply(&x) - &b.apply(&x)).sup_norm() < 1e-15);
        assert!(mollify_drift(&bm, &op, 8, 16, 1).is_err());
        assert!(mollify_drift(&b, &op, 8, 0, 1).is_err());
    }

    #[test]
    fn mollified_stays_within_shift_bound() {
        let op = op();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = Field::from_fn(op.grid(), |s| 1.0 - s);
        let b = HolderDrift::PointEval {
            b: ScalarHolder::PowerSign { alpha: 0.5 },
            xi0: 0.5,
            g,
        };
        for m in [2, 4, 8, 16] {
            let bm = mollify_drift(&b, &op, m, 64, 5).unwrap();
            let HolderDrift::Mollified(inner) = &bm else { unreachable!() };
            assert!(inner.max_shift() <= inner.shift_bound());
            let bound = b.holder_bound() * inner.shift_bound().powf(0.5);
            for _ in 0..20 {
                let x = random_field(&op, &mut rng, 8);
                let gap = (&bm.apply(&x) - &inner.apply_unshifted(&x)).sup_norm();
                assert!(gap <= bound, "m = {m}: {gap} > {bound}");
            }
        }
    }

    #[test]
    fn point_eval_seminorm_respects_bound() {
        let op = op();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Field::from_fn(op.grid(), |s| (2.0 * s).cos());
        let b = HolderDrift::PointEval {
            b: ScalarHolder::ClampedSine,
            xi0: 0.3,
            g,
        };
        let pairs: Vec<(Field, Field)> = (0..100)
            .map(|_| (random_field(&op, &mut rng, 10), random_field(&op, &mut rng, 10)))
            .collect();
        let est = empirical_holder_seminorm(&b, &pairs, 1.0).unwrap();
        assert!(est.value <= b.holder_bound() * (1.0 + 1e-12));
        assert_eq!(est.skipped, 0);
        let same = vec![(pairs[0].0.clone(), pairs[0].0.clone())];
        assert_eq!(empirical_holder_seminorm(&b, &same, 1.0).unwrap().skipped, 1);
        assert!(empirical_holder_seminorm(&b, &[], 1.0).is_err());
    }

    #[test]
    fn point_eval_spatial_regularity_inherited_from_g() {
        let op = op();
        let eps = 0.3;
        let g = Field::from_fn(op.grid(), |s| s.powf(eps));
        let b = HolderDrift::PointEval {
            b: ScalarHolder::DistToIntegers { alpha: 0.5 },
            xi0: 0.2,
            g: g.clone(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = random_field(&op, &mut rng, 6).scale(3.0);
            let lhs = spatial_holder_seminorm(&b.apply(&x), eps);
            assert!(lhs <= b.scalar().sup() * spatial_holder_seminorm(&g, eps) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn running_max_maps_holder_into_holder() {
        // [B(x)]_{eps alpha} <= M [x]_eps^alpha
        let op = op();
        let b = ScalarHolder::PowerSign { alpha: 0.5 };
        let drift = HolderDrift::RunningMax { b };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let eps = 0.5;
        for _ in 0..20 {
            let x = random_field(&op, &mut rng, 12);
            let lhs = spatial_holder_seminorm(&drift.apply(&x), eps * 0.5);
            let rhs = b.holder_constant() * spatial_holder_seminorm(&x, eps).powf(0.5);
            assert!(lhs <= rhs * (1.0 + 1e-12), "{lhs} > {rhs}");
        }
    }

    #[test]
    fn scalar_holder_constants_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for b in [
            ScalarHolder::ClampedSine,
            ScalarHolder::PowerSign { alpha: 0.5 },
            ScalarHolder::PowerSign { alpha: 0.25 },
            ScalarHolder::DistToIntegers { alpha: 0.5 },
        ] {
            for _ in 0..20_000 {
                let s: f64 = rng.gen_range(-3.0..3.0);
                let t: f64 = s + rng.gen_range(-1.0..1.0) * 10f64.powi(rng.gen_range(-6..1));
                let lhs = (b.eval(s) - b.eval(t)).abs();
                let rhs = b.holder_constant() * (s - t).abs().powf(b.exponent());
                assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-15, "{b:?} at {s}, {t}");
                assert!(b.eval(s).abs() <= b.sup() + 1e-15);
            }
        }
    }
}
