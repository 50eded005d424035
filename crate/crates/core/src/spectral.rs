//! Uniform grid on [0, 1], the Laplacian with Dirichlet or Neumann boundary
//! conditions in its eigenbasis, and the operators built from it: heat
//! semigroup, Yosida smoothing `n R(n, A)` and the heat kernel.
//!
//! The grid has `n_points` interior nodes plus the two endpoints, so the
//! spacing is `1 / (n_points + 1)`. All L² inner products use the trapezoidal
//! rule on these nodes. With at most `n_points` modes the sampled sine (or
//! cosine) basis is exactly orthonormal under that rule, which is what makes
//! analysis followed by synthesis an exact projection.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Dirichlet,
    Neumann,
}

impl std::fmt::Display for Boundary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Boundary::Dirichlet => write!(f, "dirichlet"),
            Boundary::Neumann => write!(f, "neumann"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    /// Interior node count `N`; the grid carries `N + 2` nodes.
    pub n_points: usize,
    pub boundary: Boundary,
    /// Spectral truncation `M`.
    pub n_modes: usize,
}

impl GridSpec {
    pub fn new(n_points: usize, boundary: Boundary, n_modes: usize) -> Result<Self> {
        let grid = GridSpec {
            n_points,
            boundary,
            n_modes,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_modes == 0 {
            return Err(Error::InvalidGrid("n_modes must be at least 1".into()));
        }
        if self.n_points == 0 {
            return Err(Error::InvalidGrid("n_points must be at least 1".into()));
        }
        if self.n_modes > self.n_points {
            return Err(Error::InvalidGrid(format!(
                "n_modes = {} exceeds n_points = {} (aliasing)",
                self.n_modes, self.n_points
            )));
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.n_points + 2
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.n_points + 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.n_nodes()).map(|j| j as f64 * h).collect()
    }
}

/// Trapezoidal weights for `n_nodes` uniform nodes on [0, 1].
pub fn trapezoid_weights(n_nodes: usize) -> Vec<f64> {
    assert!(n_nodes >= 2, "a grid needs both endpoints");
    let h = 1.0 / (n_nodes - 1) as f64;
    let mut w = vec![h; n_nodes];
    w[0] = 0.5 * h;
    w[n_nodes - 1] = 0.5 * h;
    w
}

/// A real function on [0, 1] sampled on the uniform grid (endpoints included).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field {
    values: Vec<f64>,
}

impl Field {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidArgument(
                "a field needs at least the two endpoints".into(),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite field value at node {i}"
            )));
        }
        Ok(Field { values })
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Field { values }
    }

    pub fn zeros(n_nodes: usize) -> Self {
        Field {
            values: vec![0.0; n_nodes],
        }
    }

    pub fn constant(n_nodes: usize, c: f64) -> Self {
        Field {
            values: vec![c; n_nodes],
        }
    }

    pub fn from_fn(grid: &GridSpec, f: impl Fn(f64) -> f64) -> Self {
        Field {
            values: grid.nodes().into_iter().map(f).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Node coordinates implied by the field length.
    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        let h = 1.0 / (self.values.len() - 1) as f64;
        (0..self.values.len()).map(move |j| j as f64 * h)
    }

    /// `|x|_E`, the maximum over grid nodes.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Trapezoidal `<x, y>_H`.
    pub fn inner(&self, other: &Field) -> f64 {
        assert_eq!(self.len(), other.len(), "fields live on different grids");
        let w = trapezoid_weights(self.len());
        self.values
            .iter()
            .zip(&other.values)
            .zip(&w)
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    /// `|x|_H` under the trapezoidal rule.
    pub fn h_norm(&self) -> f64 {
        self.inner(self).max(0.0).sqrt()
    }

    /// Linear interpolation at `xi` in [0, 1].
    pub fn interpolate(&self, xi: f64) -> f64 {
        let n = self.values.len() - 1;
        let s = (xi.clamp(0.0, 1.0)) * n as f64;
        let i = (s.floor() as usize).min(n - 1);
        let frac = s - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    pub fn abs(&self) -> Field {
        self.map(f64::abs)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        assert_eq!(self.len(), rhs.len());
        Field {
            values: self.values.iter().zip(&rhs.values).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        assert_eq!(self.len(), rhs.len());
        Field {
            values: self.values.iter().zip(&rhs.values).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, rhs: f64) -> Field {
        self.scale(rhs)
    }
}

/// `(e^z - 1) / z`, continuous at zero.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 + 0.5 * z
    } else {
        z.exp_m1() / z
    }
}

/// The Laplacian on [0, 1] with the grid's boundary condition, represented by
/// its first `n_modes` eigenpairs sampled on the grid.
#[derive(Clone, Debug)]
pub struct SpectralOperator {
    grid: GridSpec,
    /// Eigen-index `k` of each retained mode (Dirichlet from 1, Neumann from 0).
    indices: Vec<usize>,
    eigenvalues: Vec<f64>,
    /// Row-major `n_modes x n_nodes`.
    basis: Vec<f64>,
    /// Basis rows multiplied by the trapezoidal weights.
    weighted: Vec<f64>,
}

impl SpectralOperator {
    pub fn new(grid: &GridSpec) -> Result<Self> {
        grid.validate()?;
        let n_nodes = grid.n_nodes();
        let nodes = grid.nodes();
        let weights = trapezoid_weights(n_nodes);
        let first = match grid.boundary {
            Boundary::Dirichlet => 1,
            Boundary::Neumann => 0,
        };
        let indices: Vec<usize> = (first..first + grid.n_modes).collect();
        let eigenvalues = indices
            .iter()
            .map(|&k| -((k * k) as f64) * PI * PI)
            .collect();
        let mut basis = Vec::with_capacity(grid.n_modes * n_nodes);
        for &k in &indices {
            let kpi = k as f64 * PI;
            for &xi in &nodes {
                let v = match (grid.boundary, k) {
                    (Boundary::Neumann, 0) => 1.0,
                    (Boundary::Neumann, _) => 2f64.sqrt() * (kpi * xi).cos(),
                    (Boundary::Dirichlet, _) => 2f64.sqrt() * (kpi * xi).sin(),
                };
                basis.push(v);
            }
        }
        let weighted = basis
            .chunks(n_nodes)
            .flat_map(|row| row.iter().zip(&weights).map(|(b, w)| b * w))
            .collect();
        Ok(SpectralOperator {
            grid: grid.clone(),
            indices,
            eigenvalues,
            basis,
            weighted,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.grid.n_nodes()
    }

    /// Eigenvalues `mu_k`, strictly decreasing, all `<= 0`.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigen_index(&self, position: usize) -> usize {
        self.indices[position]
    }

    /// Position of eigen-index `k` in the retained list.
    pub fn position_of(&self, k: usize) -> Option<usize> {
        self.indices.iter().position(|&i| i == k)
    }

    pub fn basis_row(&self, position: usize) -> &[f64] {
        let n = self.n_nodes();
        &self.basis[position * n..(position + 1) * n]
    }

    pub fn eigenfunction(&self, position: usize) -> Field {
        Field::from_vec_unchecked(self.basis_row(position).to_vec())
    }

    pub fn zero_field(&self) -> Field {
        Field::zeros(self.n_nodes())
    }

    /// Coefficients `<x, e_k>_H` for every retained mode.
    pub fn analyze(&self, x: &Field) -> Vec<f64> {
        let mut out = vec![0.0; self.n_modes()];
        self.analyze_into(x.values(), &mut out);
        out
    }

    pub fn analyze_into(&self, values: &[f64], out: &mut [f64]) {
        let n = self.n_nodes();
        debug_assert_eq!(values.len(), n);
        for (c, row) in out.iter_mut().zip(self.weighted.chunks(n)) {
            *c = row.iter().zip(values).map(|(a, b)| a * b).sum();
        }
    }

    pub fn synthesize(&self, coeffs: &[f64]) -> Field {
        let mut values = vec![0.0; self.n_nodes()];
        self.synthesize_into(coeffs, &mut values);
        Field::from_vec_unchecked(values)
    }

    pub fn synthesize_into(&self, coeffs: &[f64], out: &mut [f64]) {
        let n = self.n_nodes();
        debug_assert_eq!(out.len(), n);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (&c, row) in coeffs.iter().zip(self.basis.chunks(n)) {
            if c == 0.0 {
                continue;
            }
            for (o, b) in out.iter_mut().zip(row) {
                *o += c * b;
            }
        }
    }

    /// Orthogonal projection onto the retained modes.
    pub fn project(&self, x: &Field) -> Field {
        self.synthesize(&self.analyze(x))
    }

    fn spectral_multiply(&self, x: &Field, multiplier: impl Fn(f64) -> f64) -> Field {
        let mut c = self.analyze(x);
        for (ck, &mu) in c.iter_mut().zip(&self.eigenvalues) {
            *ck *= multiplier(mu);
        }
        self.synthesize(&c)
    }

    /// `e^{tA} x`. At `t = 0` the input is returned untouched; for `t > 0`
    /// the result lies in the span of the retained modes.
    pub fn apply_semigroup(&self, t: f64, x: &Field) -> Result<Field> {
        if t < 0.0 || t.is_nan() {
            return Err(Error::NegativeTime(t));
        }
        if t == 0.0 {
            return Ok(x.clone());
        }
        Ok(self.spectral_multiply(x, |mu| (mu * t).exp()))
    }

    /// `J_n x = n R(n, A) x`, the mode-wise multiplier `n / (n - mu_k)`.
    pub fn yosida_smooth(&self, n: f64, x: &Field) -> Result<Field> {
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "Yosida parameter must be positive and finite, got {n}"
            )));
        }
        Ok(self.spectral_multiply(x, |mu| n / (n - mu)))
    }

    /// Upper bound on `sum_{k not retained} |e_k(xi) e_k(theta)| e^{mu_k t}`.
    pub fn kernel_tail(&self, t: f64) -> f64 {
        let next = (*self.indices.last().unwrap() + 1) as f64;
        let a = PI * PI * t;
        2.0 * (-next * next * a).exp() / (-(2.0 * next + 1.0) * a).exp_m1().abs()
    }

    /// `K_t(xi_i, xi_j) = sum_k e^{mu_k t} e_k(xi_i) e_k(xi_j)` on all node pairs.
    pub fn heat_kernel(&self, t: f64) -> Result<HeatKernel> {
        if !(t > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "heat kernel needs t > 0, got {t}"
            )));
        }
        let tail = self.kernel_tail(t);
        if !(tail <= 1e-8) {
            return Err(Error::UnconvergedKernel { t, tail });
        }
        let n = self.n_nodes();
        let decay: Vec<f64> = self.eigenvalues.iter().map(|mu| (mu * t).exp()).collect();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for (p, d) in decay.iter().enumerate() {
                    let row = self.basis_row(p);
                    s += d * row[i] * row[j];
                }
                values[i * n + j] = s;
                values[j * n + i] = s;
            }
        }
        Ok(HeatKernel { t, n, values, tail })
    }
}

/// Construct the operator for a grid.
pub fn build_operator(grid: &GridSpec) -> Result<SpectralOperator> {
    SpectralOperator::new(grid)
}

/// Heat kernel sampled on node pairs.
#[derive(Clone, Debug)]
pub struct HeatKernel {
    pub t: f64,
    n: usize,
    values: Vec<f64>,
    pub tail: f64,
}

impl HeatKernel {
    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `xi -> int K_t(xi, theta) x(theta) d theta` by the trapezoidal rule.
    pub fn integrate(&self, x: &Field) -> Field {
        assert_eq!(x.len(), self.n);
        let w = trapezoid_weights(self.n);
        let values = (0..self.n)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(x.values())
                    .zip(&w)
                    .map(|((k, v), w)| k * v * w)
                    .sum()
            })
            .collect();
        Field::from_vec_unchecked(values)
    }

    /// Largest deviation from symmetry.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.n {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Free-space Gaussian kernel peak `(4 pi t)^{-1/2}`.
pub fn gaussian_peak(t: f64) -> f64 {
    (4.0 * PI * t).powf(-0.5)
}
