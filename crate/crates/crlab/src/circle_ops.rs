//! Spectral primitives on the unit circle: uniform grids, Fourier analysis,
//! the normalized harmonic-conjugate operator `T₁`, holomorphic interior
//! extension from boundary data, and discrete Hölder norms.
//!
//! Sign conventions are fixed so that `x + i·Tx` is the boundary value of a
//! holomorphic function on the unit disc: `T(cos kθ) = sin kθ`,
//! `T(sin kθ) = −cos kθ`, constants are annihilated. `T₁f = Tf − (Tf)(1)`
//! vanishes at `ζ = 1` and satisfies the involution `T₁(T₁f) = −f + f(1)`.

use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

/// Errors produced by circle-grid operations.
#[derive(Debug, Error)]
pub enum CircleError {
    #[error("grid size must be a power of two and at least 8, got {0}")]
    BadGridSize(usize),
    #[error("grid mismatch: {0} vs {1} samples")]
    GridMismatch(usize, usize),
    #[error("component count mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error(
        "boundary data is not holomorphic: negative-frequency energy {neg:.3e} exceeds {tol:.3e}"
    )]
    NotHolomorphic { neg: f64, tol: f64 },
    #[error("insufficient resolution for derivative order {order}: need at least {need} samples")]
    InsufficientResolution { order: usize, need: usize },
    #[error("Holder exponent must lie in (0,1), got {0}")]
    BadAlpha(f64),
    #[error("derivative order must be at most 2, got {0}")]
    BadOrder(usize),
    #[error("non-finite sample encountered")]
    NonFinite,
}

/// Uniform grid `θ_j = 2πj/N` on the unit circle, `N` a power of two.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CircleGrid {
    n: usize,
}

impl CircleGrid {
    /// Default sample count used throughout the crate.
    pub const DEFAULT_N: usize = 512;

    pub fn new(n: usize) -> Result<Self, CircleError> {
        if n < 8 || !n.is_power_of_two() {
            return Err(CircleError::BadGridSize(n));
        }
        Ok(Self { n })
    }

    /// The default 512-point grid.
    pub fn default512() -> Self {
        Self { n: Self::DEFAULT_N }
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Angle of the `j`-th node, in `[0, 2π)`.
    pub fn theta(&self, j: usize) -> f64 {
        2.0 * std::f64::consts::PI * (j as f64) / (self.n as f64)
    }

    /// All node angles in increasing order.
    pub fn thetas(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |j| self.theta(j))
    }

    /// The node `e^{iθ_j}` on the unit circle.
    pub fn zeta(&self, j: usize) -> Complex64 {
        Complex64::from_polar(1.0, self.theta(j))
    }
}

/// Vector-valued sampled function on a [`CircleGrid`]; all components share
/// the grid. Component `i` is the slice `component(i)`, sample `j` sits at
/// angle `θ_j`.
#[derive(Clone, Debug)]
pub struct CircleFn {
    grid: CircleGrid,
    comps: Vec<Vec<f64>>,
}

impl CircleFn {
    pub fn from_components(grid: CircleGrid, comps: Vec<Vec<f64>>) -> Result<Self, CircleError> {
        for c in &comps {
            if c.len() != grid.len() {
                return Err(CircleError::GridMismatch(c.len(), grid.len()));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(CircleError::NonFinite);
            }
        }
        Ok(Self { grid, comps })
    }

    /// Sample a vector-valued closure of the angle.
    pub fn from_fn(grid: CircleGrid, dim: usize, f: impl Fn(f64) -> Vec<f64>) -> Self {
        let mut comps = vec![vec![0.0; grid.len()]; dim];
        for j in 0..grid.len() {
            let v = f(grid.theta(j));
            assert_eq!(v.len(), dim, "closure returned wrong dimension");
            for (i, comp) in comps.iter_mut().enumerate() {
                comp[j] = v[i];
            }
        }
        Self { grid, comps }
    }

    /// Sample a scalar closure of the angle as a 1-component function.
    pub fn scalar_from_fn(grid: CircleGrid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid,
            comps: vec![grid.thetas().map(f).collect()],
        }
    }

    pub fn zeros(grid: CircleGrid, dim: usize) -> Self {
        Self {
            grid,
            comps: vec![vec![0.0; grid.len()]; dim],
        }
    }

    pub fn grid(&self) -> CircleGrid {
        self.grid
    }

    /// Number of vector components.
    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.comps[i]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.comps
    }

    /// The vector value at sample index `j`.
    pub fn value_at(&self, j: usize) -> Vec<f64> {
        self.comps.iter().map(|c| c[j]).collect()
    }

    /// The value at `ζ = 1` (sample index 0).
    pub fn at_one(&self) -> Vec<f64> {
        self.value_at(0)
    }

    /// Pointwise map over vector samples (dimension may change).
    pub fn map_samples(&self, out_dim: usize, f: impl Fn(usize, &[f64]) -> Vec<f64>) -> Self {
        let mut comps = vec![vec![0.0; self.grid.len()]; out_dim];
        let mut buf = vec![0.0; self.dim()];
        for j in 0..self.grid.len() {
            for (i, c) in self.comps.iter().enumerate() {
                buf[i] = c[j];
            }
            let v = f(j, &buf);
            assert_eq!(v.len(), out_dim, "map closure returned wrong dimension");
            for (i, comp) in comps.iter_mut().enumerate() {
                comp[j] = v[i];
            }
        }
        Self {
            grid: self.grid,
            comps,
        }
    }

    /// Componentwise linear combination `a·self + b·other`.
    pub fn axpby(&self, a: f64, other: &Self, b: f64) -> Result<Self, CircleError> {
        if self.grid != other.grid {
            return Err(CircleError::GridMismatch(self.grid.len(), other.grid.len()));
        }
        if self.dim() != other.dim() {
            return Err(CircleError::DimMismatch(self.dim(), other.dim()));
        }
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(x, y)| x.iter().zip(y).map(|(u, v)| a * u + b * v).collect())
            .collect();
        Ok(Self {
            grid: self.grid,
            comps,
        })
    }

    /// Sup over samples of the Euclidean norm of the vector value.
    pub fn sup_norm(&self) -> f64 {
        (0..self.grid.len())
            .map(|j| self.comps.iter().map(|c| c[j] * c[j]).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Sup-distance to another function on the same grid.
    pub fn sup_distance(&self, other: &Self) -> Result<f64, CircleError> {
        Ok(self.axpby(1.0, other, -1.0)?.sup_norm())
    }

    /// Spectral derivative `∂/∂θ`, applied componentwise.
    pub fn derivative_theta(&self) -> Self {
        let comps = self.comps.iter().map(|c| spectral_derivative(c)).collect();
        Self {
            grid: self.grid,
            comps,
        }
    }
}

/// Discrete Hölder-norm estimate: the sum of sup-norms of derivatives of
/// orders `0..=k` plus the Hölder seminorm of the order-`k` derivative.
#[derive(Clone, Debug)]
pub struct HolderNorm {
    pub k: usize,
    pub alpha: f64,
    /// Total norm value.
    pub value: f64,
    /// Sup-norm of each derivative order `0..=k`.
    pub sup_parts: Vec<f64>,
    /// Hölder seminorm of the top derivative.
    pub seminorm: f64,
}

pub(crate) fn forward_fft(samples: &[Complex64]) -> Vec<Complex64> {
    let mut buf = samples.to_vec();
    FftPlanner::new()
        .plan_fft_forward(buf.len())
        .process(&mut buf);
    buf
}

fn inverse_fft(coeffs: &[Complex64]) -> Vec<Complex64> {
    let mut buf = coeffs.to_vec();
    FftPlanner::new()
        .plan_fft_inverse(buf.len())
        .process(&mut buf);
    let scale = 1.0 / (buf.len() as f64);
    for v in &mut buf {
        *v *= scale;
    }
    buf
}

/// Unnormalized DFT coefficients of a real sample vector (divide by `N` for
/// Fourier coefficients). Index `k < N/2` is frequency `k`; index `k > N/2`
/// is frequency `k − N`; index `N/2` is the Nyquist bin.
pub(crate) fn dft_real(samples: &[f64]) -> Vec<Complex64> {
    let buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    forward_fft(&buf)
}

/// Conjugate-function operator `T` on one real component: multiplies the
/// frequency-`k` coefficient by `−i·sign(k)`; DC and Nyquist bins are zeroed
/// (the sampled Nyquist conjugate `sin(Nθ/2)` vanishes on the grid).
fn conjugate_samples(samples: &[f64]) -> Vec<f64> {
    let n = samples.len();
    let mut coeffs = dft_real(samples);
    coeffs[0] = Complex64::new(0.0, 0.0);
    coeffs[n / 2] = Complex64::new(0.0, 0.0);
    for (k, c) in coeffs.iter_mut().enumerate().take(n).skip(1) {
        if k == n / 2 {
            continue;
        }
        let sign = if k < n / 2 { 1.0 } else { -1.0 };
        // multiply by −i·sign
        *c = Complex64::new(0.0, -sign) * *c;
    }
    inverse_fft(&coeffs).iter().map(|v| v.re).collect()
}

fn spectral_derivative(samples: &[f64]) -> Vec<f64> {
    let n = samples.len();
    let mut coeffs = dft_real(samples);
    for (k, c) in coeffs.iter_mut().enumerate() {
        let freq = if k <= n / 2 {
            k as f64
        } else {
            k as f64 - n as f64
        };
        // Nyquist derivative of the real interpolant is taken as 0.
        let f = if k == n / 2 { 0.0 } else { freq };
        *c = Complex64::new(0.0, f) * *c;
    }
    inverse_fft(&coeffs).iter().map(|v| v.re).collect()
}

/// Normalized harmonic conjugate `T₁f = Tf − (Tf)(1)`, componentwise.
///
/// `T` maps `cos kθ ↦ sin kθ`, `sin kθ ↦ −cos kθ`, constants to `0`; the
/// normalization makes the result vanish at `θ = 0`, and
/// `T₁(T₁f) = −f + f(1)`.
pub fn hilbert_t1(f: &CircleFn) -> CircleFn {
    let comps = f
        .comps
        .iter()
        .map(|c| {
            let mut t = conjugate_samples(c);
            let t0 = t[0];
            for v in &mut t {
                *v -= t0;
            }
            t
        })
        .collect();
    CircleFn {
        grid: f.grid,
        comps,
    }
}

/// Result of the negative-frequency energy test on complex boundary data.
pub(crate) fn split_frequency_energy(coeffs: &[Complex64]) -> (f64, f64) {
    let n = coeffs.len();
    let mut neg = 0.0;
    let mut total = 0.0;
    for (k, c) in coeffs.iter().enumerate() {
        let e = c.norm_sqr();
        total += e;
        if k > n / 2 || k == n / 2 {
            // Nyquist counted as negative: holomorphic data should not load it.
            if k != 0 {
                neg += e;
            }
        }
    }
    ((neg / n as f64).sqrt(), (total / n as f64).sqrt())
}

/// Evaluate the holomorphic extension of boundary data `x + iy` at a point
/// `ζ` of the closed disc, returning one complex value per component.
///
/// Requires `y` to be the harmonic conjugate of `x` up to constants: the
/// negative-frequency energy of `x + iy` must be below `1e−8·‖f‖`.
pub fn holomorphic_extension(
    x: &CircleFn,
    y: &CircleFn,
    zeta: Complex64,
) -> Result<Vec<Complex64>, CircleError> {
    if x.grid != y.grid {
        return Err(CircleError::GridMismatch(x.grid.len(), y.grid.len()));
    }
    if x.dim() != y.dim() {
        return Err(CircleError::DimMismatch(x.dim(), y.dim()));
    }
    let n = x.grid.len();
    let mut out = Vec::with_capacity(x.dim());
    for i in 0..x.dim() {
        let samples: Vec<Complex64> = (0..n)
            .map(|j| Complex64::new(x.comps[i][j], y.comps[i][j]))
            .collect();
        let coeffs = forward_fft(&samples);
        let (neg, total) = split_frequency_energy(&coeffs);
        let tol = 1e-8 * total + 1e-14;
        if neg > tol {
            return Err(CircleError::NotHolomorphic { neg, tol });
        }
        // Horner evaluation of Σ_{k=0}^{N/2−1} (c_k/N) ζ^k.
        let mut acc = Complex64::new(0.0, 0.0);
        for k in (0..n / 2).rev() {
            acc = acc * zeta + coeffs[k] / (n as f64);
        }
        out.push(acc);
    }
    Ok(out)
}

fn circle_distance(t1: f64, t2: f64) -> f64 {
    let d = (t1 - t2).abs() % (2.0 * std::f64::consts::PI);
    d.min(2.0 * std::f64::consts::PI - d)
}

/// Discrete Hölder norm of a circle function: sup-norms of spectral
/// derivatives of orders `0..=k` plus the Hölder seminorm of the top
/// derivative over sampled pairs (all pairs for `N ≤ 1024`, strided beyond).
pub fn holder_norm_circle(f: &CircleFn, k: usize, alpha: f64) -> Result<HolderNorm, CircleError> {
    if k > 2 {
        return Err(CircleError::BadOrder(k));
    }
    if !(0.0..1.0).contains(&alpha) || alpha <= 0.0 {
        return Err(CircleError::BadAlpha(alpha));
    }
    let n = f.grid.len();
    if n < 4 * (k + 1) {
        return Err(CircleError::InsufficientResolution {
            order: k,
            need: 4 * (k + 1),
        });
    }
    let mut current = f.clone();
    let mut sup_parts = Vec::with_capacity(k + 1);
    for _ in 0..k {
        sup_parts.push(current.sup_norm());
        current = current.derivative_theta();
    }
    sup_parts.push(current.sup_norm());

    let stride = if n <= 1024 { 1 } else { n / 1024 };
    let idx: Vec<usize> = (0..n).step_by(stride).collect();
    let mut seminorm: f64 = 0.0;
    for (a, &i) in idx.iter().enumerate() {
        for &j in idx.iter().skip(a + 1) {
            let d = circle_distance(f.grid.theta(i), f.grid.theta(j));
            if d < 1e-14 {
                continue;
            }
            let diff: f64 = current
                .comps
                .iter()
                .map(|c| (c[i] - c[j]).powi(2))
                .sum::<f64>()
                .sqrt();
            seminorm = seminorm.max(diff / d.powf(alpha));
        }
    }
    Ok(HolderNorm {
        k,
        alpha,
        value: sup_parts.iter().sum::<f64>() + seminorm,
        sup_parts,
        seminorm,
    })
}

/// Discrete Hölder norm of a function sampled on a uniform 1-D interval grid.
///
/// Derivatives are computed by second-order finite differences (exact on
/// quadratics), so e.g. `x²` on `|x| ≤ 1` with `k = 2` evaluates to
/// `1 + 2 + 2 + 0 = 5` up to grid error.
pub fn holder_norm_interval(
    xs: &[f64],
    vals: &[f64],
    k: usize,
    alpha: f64,
) -> Result<HolderNorm, CircleError> {
    if k > 2 {
        return Err(CircleError::BadOrder(k));
    }
    if !(0.0..1.0).contains(&alpha) || alpha <= 0.0 {
        return Err(CircleError::BadAlpha(alpha));
    }
    let n = xs.len();
    if n != vals.len() {
        return Err(CircleError::GridMismatch(n, vals.len()));
    }
    if n < 5 {
        return Err(CircleError::InsufficientResolution { order: k, need: 5 });
    }
    let h = xs[1] - xs[0];
    let deriv = |v: &[f64]| -> Vec<f64> {
        let m = v.len();
        let mut d = vec![0.0; m];
        d[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
        d[m - 1] = (3.0 * v[m - 1] - 4.0 * v[m - 2] + v[m - 3]) / (2.0 * h);
        for i in 1..m - 1 {
            d[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
        }
        d
    };
    let second = |v: &[f64]| -> Vec<f64> {
        let m = v.len();
        let mut d = vec![0.0; m];
        for i in 1..m - 1 {
            d[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h);
        }
        d[0] = d[1];
        d[m - 1] = d[m - 2];
        d
    };
    let sup = |v: &[f64]| v.iter().fold(0.0_f64, |m, &x| m.max(x.abs()));

    let mut sup_parts = vec![sup(vals)];
    let mut top: Vec<f64> = vals.to_vec();
    if k >= 1 {
        top = deriv(vals);
        sup_parts.push(sup(&top));
    }
    if k == 2 {
        top = second(vals);
        sup_parts.push(sup(&top));
    }

    let stride = if n <= 2048 { 1 } else { n / 2048 };
    let idx: Vec<usize> = (0..n).step_by(stride).collect();
    let mut seminorm: f64 = 0.0;
    for (a, &i) in idx.iter().enumerate() {
        for &j in idx.iter().skip(a + 1) {
            let d = (xs[i] - xs[j]).abs();
            if d < 1e-14 {
                continue;
            }
            seminorm = seminorm.max((top[i] - top[j]).abs() / d.powf(alpha));
        }
    }
    Ok(HolderNorm {
        k,
        alpha,
        value: sup_parts.iter().sum::<f64>() + seminorm,
        sup_parts,
        seminorm,
    })
}
