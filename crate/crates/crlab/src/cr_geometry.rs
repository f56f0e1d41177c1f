//! Graphed representations of generic and maximally real submanifolds of C^n,
//! characteristic directions, complex-tangency detection with Bishop-invariant
//! classification, and the coordinate normalizations used by the disc
//! construction machinery.
//!
//! All submanifolds are represented by graphing closures over real cubes:
//! a hypersurface-with-CR-dimension-one `M ⊂ C^n` is `y' = φ'(x, y₁)`,
//! a maximally real `M¹ ⊂ M` is `y = h(x)`, a real surface `S` inside a
//! hypersurface `M ⊂ C²` is `u = g(x, y)` with `M: v = φ(x, y, u)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::sync::Arc;
use thiserror::Error;

/// Shared closure type: `R^k → R^m` sampled maps.
pub type RealMap = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
/// Shared closure type: scalar-valued maps.
pub type ScalarMap = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("the tangent plane of the surface is complex at the queried point (defect {0:.3e})")]
    ComplexTangency(f64),
    #[error("straightening matrix is singular (generic position fails)")]
    SingularMatrix,
    #[error("Newton iteration failed to converge (residual {0:.3e})")]
    NewtonFailed(f64),
    #[error("point escapes the graph domain of radius {0}")]
    OutOfDomain(f64),
    #[error("second-order jet is degenerate; tangency unclassifiable")]
    DegenerateJet,
    #[error("characteristic direction is numerically undefined (nullspace dim {0})")]
    BadNullspace(usize),
}

// ---------------------------------------------------------------------------
// finite-difference helpers
// ---------------------------------------------------------------------------

pub(crate) const FD_STEP: f64 = 1e-5;

/// Central-difference partial derivative of a scalar closure.
pub(crate) fn partial(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Central-difference second partial derivative.
pub(crate) fn partial2(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, j: usize, h: f64) -> f64 {
    if i == j {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        (f(&xp) - 2.0 * f(x) + f(&xm)) / (h * h)
    } else {
        let mut xpp = x.to_vec();
        let mut xpm = x.to_vec();
        let mut xmp = x.to_vec();
        let mut xmm = x.to_vec();
        xpp[i] += h;
        xpp[j] += h;
        xpm[i] += h;
        xpm[j] -= h;
        xmp[i] -= h;
        xmp[j] += h;
        xmm[i] -= h;
        xmm[j] -= h;
        (f(&xpp) - f(&xpm) - f(&xmp) + f(&xmm)) / (4.0 * h * h)
    }
}

/// Damped Newton solve of `f(u) = 0`, `f: R^d → R^d`, with finite-difference
/// Jacobian. Returns the solution or the last residual on failure.
pub(crate) fn newton_solve(
    f: &dyn Fn(&[f64]) -> Vec<f64>,
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, GeometryError> {
    let d = start.len();
    let mut u = start.to_vec();
    let mut res_norm = f64::INFINITY;
    for _ in 0..max_iter {
        let r = f(&u);
        res_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if res_norm < tol {
            return Ok(u);
        }
        let mut jac = DMatrix::zeros(d, d);
        for j in 0..d {
            let mut up = u.clone();
            let mut um = u.clone();
            up[j] += FD_STEP;
            um[j] -= FD_STEP;
            let rp = f(&up);
            let rm = f(&um);
            for i in 0..d {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * FD_STEP);
            }
        }
        let rhs = DVector::from_vec(r);
        // Least-squares step: tolerates rank-deficient Jacobians (zero sets of
        // positive dimension) by taking the minimum-norm correction.
        let step = jac
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|_| GeometryError::SingularMatrix)?;
        for i in 0..d {
            u[i] -= step[i];
        }
    }
    // One last residual check: quadratic convergence may land exactly on tol.
    let r = f(&u);
    res_norm = res_norm.min(r.iter().map(|v| v * v).sum::<f64>().sqrt());
    if res_norm < tol {
        Ok(u)
    } else {
        Err(GeometryError::NewtonFailed(res_norm))
    }
}

// ---------------------------------------------------------------------------
// domain types
// ---------------------------------------------------------------------------

/// Generic submanifold `M ⊂ C^n` of CR dimension 1 graphed as
/// `y_j = φ_j(x, y₁)` for `j = 2..=n`.
#[derive(Clone)]
pub struct GenericGraph {
    pub n: usize,
    pub crdim: usize,
    /// `(x ∈ R^n, y₁) ↦ (φ₂, …, φ_n)`.
    pub phi: Arc<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>,
    pub rho1: f64,
    pub normalized: bool,
}

impl GenericGraph {
    /// The flat model `y' = 0`.
    pub fn flat(n: usize, rho1: f64) -> Self {
        Self {
            n,
            crdim: 1,
            phi: Arc::new(move |_x, _y1| vec![0.0; n - 1]),
            rho1,
            normalized: true,
        }
    }

    pub fn phi_at(&self, x: &[f64], y1: f64) -> Vec<f64> {
        (self.phi)(x, y1)
    }
}

/// Maximally real submanifold `M¹ ⊂ C^n` graphed as `y = h(x)`.
#[derive(Clone)]
pub struct MaximallyRealGraph {
    pub n: usize,
    /// `x ∈ R^n ↦ (h₁, …, h_n)`.
    pub h: RealMap,
    pub rho1: f64,
    /// Order to which `h` vanishes at 0: 0 (none), 1 (value+gradient), 2 (+Hessian).
    pub normalization_order: u8,
}

impl MaximallyRealGraph {
    /// The flat model `R^n ⊂ C^n`.
    pub fn flat(n: usize, rho1: f64) -> Self {
        Self {
            n,
            h: Arc::new(move |_x| vec![0.0; n]),
            rho1,
            normalization_order: 2,
        }
    }

    pub fn h_at(&self, x: &[f64]) -> Vec<f64> {
        (self.h)(x)
    }
}

/// A real surface `S` inside a hypersurface `M ⊂ C²`, both graphed:
/// `M: v = φ(x, y, u)` and `S: u = g(x, y)` (so `S ⊂ M` automatically).
#[derive(Clone)]
pub struct SurfaceInHypersurface {
    /// `(x, y, u) ↦ v`.
    pub phi: Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>,
    /// `(x, y) ↦ u`.
    pub g: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub rho1: f64,
}

impl SurfaceInHypersurface {
    /// Surface `u = g(x,y)` inside the flat hypersurface `v = 0`.
    pub fn in_flat_hypersurface(
        g: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        rho1: f64,
    ) -> Self {
        Self {
            phi: Arc::new(|_, _, _| 0.0),
            g: Arc::new(g),
            rho1,
        }
    }
}

/// Normalized supporting-hypersurface data: `H¹: x₁ = g(x')` with lift
/// `y = k(x')`, transversal-wall graph `ψ`, and coefficients `a₂..a_n`
/// with `Σ a_j = 1`.
#[derive(Clone)]
pub struct SupportModel {
    pub n: usize,
    /// `x' ∈ R^{n−1} ↦ x₁`.
    pub g: ScalarMap,
    /// `x' ∈ R^{n−1} ↦ y ∈ R^n`.
    pub k: RealMap,
    /// `(x ∈ R^n, y' ∈ R^{n−1}) ↦ ψ`, the wall graph for
    /// `y₁ + a₂y₂ + … + a_ny_n > ψ(x, y')`.
    pub psi: Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>,
    /// Coefficients `a₂..a_n`, summing to 1.
    pub a: Vec<f64>,
}

impl SupportModel {
    /// The fully normalized quadric model: `g(x') = −Σ x_j'²`, `k = 0`,
    /// `ψ = 0`, `a_j = 1/(n−1)`.
    pub fn quadric(n: usize) -> Self {
        Self {
            n,
            g: Arc::new(|xp: &[f64]| -xp.iter().map(|v| v * v).sum::<f64>()),
            k: Arc::new(move |_xp: &[f64]| vec![0.0; n]),
            psi: Arc::new(|_x: &[f64], _yp: &[f64]| 0.0),
            a: vec![1.0 / (n as f64 - 1.0); n - 1],
        }
    }

    /// The strictly concave comparison graph `−Σ x_j² + K₉(Σ x_j²)^{(2+α)/2}`.
    pub fn concave_comparison(&self, k9: f64, alpha: f64) -> ScalarMap {
        Arc::new(move |xp: &[f64]| {
            let s: f64 = xp.iter().map(|v| v * v).sum();
            -s + k9 * s.powf((2.0 + alpha) / 2.0)
        })
    }
}

/// Classification of a complex tangency by its Bishop invariant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum TangencyKind {
    Elliptic,
    Parabolic,
    Hyperbolic,
    Unclassifiable,
}

/// A located complex tangency of a surface, with its Bishop invariant `λ`
/// read from the normal form `w = zz̄ + λ(z² + z̄²) + o(|z|²)`.
#[derive(Clone, Debug, serde::Serialize)]
pub struct TangencyReport {
    pub point: [f64; 2],
    /// Bishop invariant; `f64::INFINITY` when the `zz̄` coefficient vanishes.
    pub lambda: f64,
    pub kind: TangencyKind,
}

// ---------------------------------------------------------------------------
// characteristic directions
// ---------------------------------------------------------------------------

/// The tangency defect of `S` at `p = (x, y)`: the pair
/// `(n·J t₁, n·J t₂)` where `n` is the ambient normal of `M`, `t₁, t₂` span
/// `T_pS`, and `J` is the complex structure. Both components vanish exactly
/// at complex tangencies.
pub fn tangency_defect(s: &SurfaceInHypersurface, p: [f64; 2]) -> [f64; 2] {
    let g = |v: &[f64]| (s.g)(v[0], v[1]);
    let gx = partial(&g, &p, 0, FD_STEP);
    let gy = partial(&g, &p, 1, FD_STEP);
    let u = (s.g)(p[0], p[1]);
    let phi = |v: &[f64]| (s.phi)(v[0], v[1], v[2]);
    let q = [p[0], p[1], u];
    let phix = partial(&phi, &q, 0, FD_STEP);
    let phiy = partial(&phi, &q, 1, FD_STEP);
    let phiu = partial(&phi, &q, 2, FD_STEP);
    // Ambient coordinates (x, y, u, v); J∂x = ∂y, J∂y = −∂x, J∂u = ∂v, J∂v = −∂u.
    // Normal of M = {v − φ = 0}: n = (−φx, −φy, −φu, 1).
    let nvec = [-phix, -phiy, -phiu, 1.0];
    // Tangents of S: tᵢ = ∂ᵢ + g_i ∂u + (φ_i + φ_u g_i) ∂v.
    let t1 = [1.0, 0.0, gx, phix + phiu * gx];
    let t2 = [0.0, 1.0, gy, phiy + phiu * gy];
    let jdot = |t: [f64; 4]| -> f64 {
        // J t = (−t[1], t[0], −t[3], t[2])
        let jt = [-t[1], t[0], -t[3], t[2]];
        nvec.iter().zip(jt.iter()).map(|(a, b)| a * b).sum()
    };
    [jdot(t1), jdot(t2)]
}

/// Unit characteristic direction of `S ⊂ M` at a totally real point, in the
/// `(x, y)` chart of `S`. The sign is fixed by the stored orientation: the
/// representative with angle in `[0, π)` is returned.
pub fn characteristic_direction_surface(
    s: &SurfaceInHypersurface,
    p: [f64; 2],
) -> Result<[f64; 2], GeometryError> {
    let d = tangency_defect(s, p);
    let norm = (d[0] * d[0] + d[1] * d[1]).sqrt();
    if norm < 1e-9 {
        return Err(GeometryError::ComplexTangency(norm));
    }
    // Solve a·d₁ + b·d₂ = 0: direction ∝ (−d₂, d₁) in the (t₁, t₂) basis,
    // which projects to (−d₂, d₁) in the (x, y) chart.
    let mut v = [-d[1] / norm, d[0] / norm];
    if v[1] < 0.0 || (v[1] == 0.0 && v[0] < 0.0) {
        v = [-v[0], -v[1]];
    }
    Ok(v)
}

/// Unit characteristic direction of `M¹ ⊂ M` at the chart point `x`,
/// returned as a tangent vector in the `x`-chart of `M¹` (its `y`-components
/// follow from `dh`). Computed as the nullspace of the stacked constraints
/// `w ∈ TM¹` and `w, Jw ⊥ ∇r_j` for the defining functions of `M`.
pub fn characteristic_direction_pair(
    m: &GenericGraph,
    m1: &MaximallyRealGraph,
    x: &[f64],
) -> Result<Vec<f64>, GeometryError> {
    let n = m.n;
    let h = m1.h_at(x);
    // Ambient coordinates (x₁..x_n, y₁..y_n).
    let mut ambient = x.to_vec();
    ambient.extend_from_slice(&h);
    // Defining functions: M¹: ρ_k = y_k − h_k(x); M: r_j = y_j − φ_j(x, y₁), j ≥ 2.
    let h_map = m1.h.clone();
    let phi_map = m.phi.clone();
    let rho = move |k: usize, z: &[f64]| -> f64 { z[n + k] - h_map(&z[..n])[k] };
    let rr = move |j: usize, z: &[f64]| -> f64 { z[n + j] - phi_map(&z[..n], z[n])[j - 1] };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let grad = |f: &dyn Fn(&[f64]) -> f64, z: &[f64]| -> Vec<f64> {
        (0..2 * n).map(|i| partial(f, z, i, FD_STEP)).collect()
    };
    for k in 0..n {
        let f = |z: &[f64]| rho(k, z);
        rows.push(grad(&f, &ambient));
    }
    for j in 1..n {
        let f = |z: &[f64]| rr(j, z);
        let gr = grad(&f, &ambient);
        // w ⊥ ∇r and Jw ⊥ ∇r; (∇r)·(Jw) = −(J∇r)·w with J(a,b) = (−b, a) blockwise:
        // for w = (wx, wy): Jw = (−wy, wx), so ∇r·Jw = −gr_x·wy + gr_y·wx.
        let mut jrow = vec![0.0; 2 * n];
        for i in 0..n {
            jrow[i] = gr[n + i];
            jrow[n + i] = -gr[i];
        }
        rows.push(gr);
        rows.push(jrow);
    }
    let mat = DMatrix::from_fn(rows.len(), 2 * n, |i, j| rows[i][j]);
    let svd = mat.svd(true, true);
    let v_t = svd.v_t.as_ref().expect("svd requested");
    let sing = &svd.singular_values;
    // Count near-zero singular values (relative threshold).
    let smax = sing.iter().cloned().fold(0.0_f64, f64::max).max(1e-300);
    let null_dims: Vec<usize> = (0..v_t.nrows().min(2 * n))
        .filter(|&i| i >= sing.len() || sing[i] < 1e-7 * smax)
        .collect();
    let extra = 2 * n - v_t.nrows().min(2 * n);
    let total_null = null_dims.len() + extra;
    if total_null != 1 {
        return Err(GeometryError::BadNullspace(total_null));
    }
    let row = null_dims[0];
    let w: Vec<f64> = (0..2 * n).map(|j| v_t[(row, j)]).collect();
    // Project to the x-chart of M¹ and normalize.
    let mut dir: Vec<f64> = w[..n].to_vec();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-10 {
        return Err(GeometryError::BadNullspace(0));
    }
    for v in &mut dir {
        *v /= norm;
    }
    // Orientation: first component of largest magnitude made positive.
    let lead = dir
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    if dir[lead] < 0.0 {
        for v in &mut dir {
            *v = -*v;
        }
    }
    Ok(dir)
}

// ---------------------------------------------------------------------------
// complex tangencies and Bishop invariants
// ---------------------------------------------------------------------------

/// Rectangular search region in the `(x, y)` chart of a surface.
#[derive(Clone, Copy, Debug)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

/// Classify the 2-jet of the graphing function at a tangency point: fit
/// `u ≈ c₀ + c₁dx + c₂dy + A dx² + B dxdy + C dy²` on two concentric
/// circles of radii `1e−2` and `5e−3` (a single circle leaves the fit
/// rank-deficient since `dx² + dy²` is constant there), convert to the
/// normal form `w = μ zz̄ + ν z² + ν̄ z̄²`, and read `λ = |ν| / |μ|`.
fn classify_tangency(
    s: &SurfaceInHypersurface,
    p: [f64; 2],
) -> Result<TangencyReport, GeometryError> {
    let radii = [1e-2, 5e-3];
    let per_circle = 32usize;
    let m = radii.len() * per_circle;
    let mut a_mat = DMatrix::zeros(m, 6);
    let mut rhs = DVector::zeros(m);
    for (c, &r) in radii.iter().enumerate() {
        for i in 0..per_circle {
            let t = 2.0 * std::f64::consts::PI * i as f64 / per_circle as f64;
            let dx = r * t.cos();
            let dy = r * t.sin();
            let row = c * per_circle + i;
            a_mat[(row, 0)] = 1.0;
            a_mat[(row, 1)] = dx;
            a_mat[(row, 2)] = dy;
            a_mat[(row, 3)] = dx * dx;
            a_mat[(row, 4)] = dx * dy;
            a_mat[(row, 5)] = dy * dy;
            rhs[row] = (s.g)(p[0] + dx, p[1] + dy);
        }
    }
    let coef = a_mat
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|_| GeometryError::SingularMatrix)?;
    let (aa, bb, cc) = (coef[3], coef[4], coef[5]);
    // x² = (z² + 2zz̄ + z̄²)/4, y² = (−z² + 2zz̄ − z̄²)/4, xy = (z² − z̄²)/(4i):
    let mu = (aa + cc) / 2.0;
    let nu = (((aa - cc) / 4.0).powi(2) + (bb / 4.0).powi(2)).sqrt();
    if mu.abs() < 1e-8 && nu < 1e-8 {
        return Err(GeometryError::DegenerateJet);
    }
    let lambda = if mu.abs() < 1e-6 * nu.max(1.0) {
        f64::INFINITY
    } else {
        nu / mu.abs()
    };
    let kind = if (lambda - 0.5).abs() <= 1e-6 {
        TangencyKind::Parabolic
    } else if lambda < 0.5 {
        TangencyKind::Elliptic
    } else {
        TangencyKind::Hyperbolic
    };
    Ok(TangencyReport {
        point: p,
        lambda,
        kind,
    })
}

/// Locate and classify the complex tangencies of `S` in a region: grid scan
/// of the tangency defect at pitch `rho1/64`, sign-change bracketing, Newton
/// refinement, and Bishop-invariant classification of each zero.
pub fn find_complex_tangencies(
    s: &SurfaceInHypersurface,
    region: Region,
) -> Result<Vec<TangencyReport>, GeometryError> {
    let pitch = s.rho1 / 64.0;
    let nx = (((region.x_max - region.x_min) / pitch).ceil() as usize).max(2);
    let ny = (((region.y_max - region.y_min) / pitch).ceil() as usize).max(2);
    let xat = |i: usize| region.x_min + (region.x_max - region.x_min) * i as f64 / nx as f64;
    let yat = |j: usize| region.y_min + (region.y_max - region.y_min) * j as f64 / ny as f64;
    let mut defect = vec![[0.0_f64; 2]; (nx + 1) * (ny + 1)];
    for i in 0..=nx {
        for j in 0..=ny {
            defect[i * (ny + 1) + j] = tangency_defect(s, [xat(i), yat(j)]);
        }
    }
    let mut found: Vec<TangencyReport> = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            let corners = [
                defect[i * (ny + 1) + j],
                defect[(i + 1) * (ny + 1) + j],
                defect[(i + 1) * (ny + 1) + j + 1],
                defect[i * (ny + 1) + j + 1],
            ];
            // Zero crossing of component k within the cell: allow grid points
            // landing exactly on the zero set.
            let sign_change = |k: usize| {
                corners.iter().any(|c| c[k] >= 0.0) && corners.iter().any(|c| c[k] <= 0.0)
            };
            let tiny = corners
                .iter()
                .all(|c| (c[0].powi(2) + c[1].powi(2)).sqrt() < 4.0 * pitch);
            if !(sign_change(0) && sign_change(1)) && !tiny {
                continue;
            }
            // Newton refinement from the cell center.
            let start = [0.5 * (xat(i) + xat(i + 1)), 0.5 * (yat(j) + yat(j + 1))];
            let f = |v: &[f64]| tangency_defect(s, [v[0], v[1]]).to_vec();
            let root = match newton_solve(&f, &start, 1e-12, 50) {
                Ok(r) => r,
                Err(_) => continue,
            };
            let p = [root[0], root[1]];
            if p[0] < region.x_min - pitch
                || p[0] > region.x_max + pitch
                || p[1] < region.y_min - pitch
                || p[1] > region.y_max + pitch
            {
                continue;
            }
            if found
                .iter()
                .any(|t| (t.point[0] - p[0]).hypot(t.point[1] - p[1]) < 0.5 * pitch)
            {
                continue;
            }
            found.push(classify_tangency(s, p)?);
        }
    }
    Ok(found)
}

// ---------------------------------------------------------------------------
// straightening and second-order normalization
// ---------------------------------------------------------------------------

/// Result of a simultaneous first-order straightening of `(M, M¹)` at a point.
pub struct Straightened {
    pub m: GenericGraph,
    pub m1: MaximallyRealGraph,
    /// The linear factor `A` of the change `ẑ = A·(z − p)`.
    pub a_matrix: DMatrix<Complex64>,
    /// Largest of `|dφ̂(0)|`, `|dĥ(0)|` after the transform.
    pub residual: f64,
}

fn apply_complex_matrix(a: &DMatrix<Complex64>, z: &[Complex64]) -> Vec<Complex64> {
    let n = z.len();
    (0..n)
        .map(|i| (0..n).map(|j| a[(i, j)] * z[j]).sum())
        .collect()
}

/// Simultaneously straighten the tangent planes of `M` at `p` and of
/// `M¹ ⊂ M` at `p` (given by its chart coordinate `x_p`): after the affine
/// change `ẑ = A·(z − p)` with `A = 2i·(∂r_j/∂z_k)`, the transformed graphs
/// satisfy `T₀M = {y' = 0}` and `T₀M¹ = {y = 0}`. Graphs are re-fitted by
/// Newton solves of the transformed defining functions.
pub fn straighten(
    m: &GenericGraph,
    m1: &MaximallyRealGraph,
    x_p: &[f64],
) -> Result<Straightened, GeometryError> {
    let n = m.n;
    let h_p = m1.h_at(x_p);
    let mut p_ambient = x_p.to_vec();
    p_ambient.extend_from_slice(&h_p);

    // Defining functions in ambient coordinates (x, y):
    // r₁ = y₁ − h₁(x); r_j = y_j − φ_{j}(x, y₁) for j = 2..n.
    let h_map = m1.h.clone();
    let phi_map = m.phi.clone();
    let r_fun = move |j: usize, z: &[f64]| -> f64 {
        if j == 0 {
            z[n] - h_map(&z[..n])[0]
        } else {
            z[n + j] - phi_map(&z[..n], z[n])[j - 1]
        }
    };
    let r_fun = Arc::new(r_fun);

    // A = 2i (∂r_j/∂z_k)(p), with ∂/∂z_k = (∂x_k − i∂y_k)/2.
    let mut a = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for j in 0..n {
        let rf = r_fun.clone();
        let f = move |z: &[f64]| rf(j, z);
        for k in 0..n {
            let dx = partial(&f, &p_ambient, k, FD_STEP);
            let dy = partial(&f, &p_ambient, n + k, FD_STEP);
            let dz = Complex64::new(dx, -dy) * 0.5;
            a[(j, k)] = Complex64::new(0.0, 2.0) * dz;
        }
    }
    let a_inv = a
        .clone()
        .try_inverse()
        .ok_or(GeometryError::SingularMatrix)?;

    // Transformed defining functions r̂_j(ẑ) = r_j(p + A⁻¹ẑ).
    let p_arc: Arc<Vec<f64>> = Arc::new(p_ambient.clone());
    let a_inv_arc = Arc::new(a_inv);
    let rhat = {
        let r_fun = r_fun.clone();
        let p_arc = p_arc.clone();
        let a_inv = a_inv_arc.clone();
        Arc::new(move |j: usize, xh: &[f64], yh: &[f64]| -> f64 {
            let zh: Vec<Complex64> = (0..n).map(|i| Complex64::new(xh[i], yh[i])).collect();
            let z = apply_complex_matrix(&a_inv, &zh);
            let amb: Vec<f64> = (0..n)
                .map(|i| p_arc[i] + z[i].re)
                .chain((0..n).map(|i| p_arc[n + i] + z[i].im))
                .collect();
            r_fun(j, &amb)
        })
    };

    // New generic graph: given (x̂, ŷ₁) solve r̂_j = 0, j = 1..n−1 unknowns ŷ'.
    let rho1_new = m.rho1 / 4.0;
    let m_new = {
        let rhat = rhat.clone();
        GenericGraph {
            n,
            crdim: m.crdim,
            phi: Arc::new(move |xh: &[f64], y1h: f64| {
                let f = |yp: &[f64]| -> Vec<f64> {
                    let mut yh = vec![y1h];
                    yh.extend_from_slice(yp);
                    (1..n).map(|j| rhat(j, xh, &yh)).collect()
                };
                newton_solve(&f, &vec![0.0; n - 1], 1e-13, 60)
                    .unwrap_or_else(|_| vec![f64::NAN; n - 1])
            }),
            rho1: rho1_new,
            normalized: true,
        }
    };
    // New maximally real graph: given x̂ solve all n equations for ŷ.
    let m1_new = {
        let rhat = rhat.clone();
        MaximallyRealGraph {
            n,
            h: Arc::new(move |xh: &[f64]| {
                let f = |yh: &[f64]| -> Vec<f64> { (0..n).map(|j| rhat(j, xh, yh)).collect() };
                newton_solve(&f, &vec![0.0; n], 1e-13, 60).unwrap_or_else(|_| vec![f64::NAN; n])
            }),
            rho1: rho1_new,
            normalization_order: 1,
        }
    };

    // Residual: first-order terms of the new graphs at 0.
    let mut residual: f64 = 0.0;
    let h_new = m1_new.h_at(&vec![0.0; n]);
    residual = residual.max(h_new.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
    for i in 0..n {
        let f = |x: &[f64]| m1_new.h_at(x);
        let mut xp = vec![0.0; n];
        let mut xm = vec![0.0; n];
        xp[i] += FD_STEP;
        xm[i] -= FD_STEP;
        let (fp, fm) = (f(&xp), f(&xm));
        for k in 0..n {
            residual = residual.max(((fp[k] - fm[k]) / (2.0 * FD_STEP)).abs());
        }
    }
    let phi0 = m_new.phi_at(&vec![0.0; n], 0.0);
    residual = residual.max(phi0.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
    for i in 0..=n {
        let f = |u: &[f64]| m_new.phi_at(&u[..n], u[n]);
        let mut up = vec![0.0; n + 1];
        let mut um = vec![0.0; n + 1];
        up[i] += FD_STEP;
        um[i] -= FD_STEP;
        let (fp, fm) = (f(&up), f(&um));
        for k in 0..n - 1 {
            residual = residual.max(((fp[k] - fm[k]) / (2.0 * FD_STEP)).abs());
        }
    }

    Ok(Straightened {
        m: m_new,
        m1: m1_new,
        a_matrix: a,
        residual,
    })
}

/// Second-order normalization of a first-order-normalized `M¹` (and its
/// optional support model): a quadratic tangent-to-identity holomorphic
/// change kills the Hessian of `h` at 0; a second change gives the support
/// graph `g` Hessian `−identity` at 0. The transformed graphs are re-fitted
/// through Newton solves of the parametrized images.
pub struct SecondOrderNormalized {
    pub m1: MaximallyRealGraph,
    pub support: Option<SupportModel>,
    /// `|∂²ĥ(0)|` after the transform.
    pub h_residual: f64,
}

pub fn normalize_second_order(
    m1: &MaximallyRealGraph,
    support: Option<&SupportModel>,
) -> Result<SecondOrderNormalized, GeometryError> {
    let n = m1.n;
    // Hessians a_{k₁k₂} = ½ ∂²h(0), vectors in R^n.
    let h_map = m1.h.clone();
    let zero = vec![0.0; n];
    let mut hess = vec![vec![vec![0.0; n]; n]; n]; // hess[comp][k1][k2]
    for comp in 0..n {
        let hm = h_map.clone();
        let f = move |x: &[f64]| hm(x)[comp];
        for k1 in 0..n {
            for k2 in 0..n {
                hess[comp][k1][k2] = 0.5 * partial2(&f, &zero, k1, k2, 1e-4);
            }
        }
    }
    // First transform: ẑ = z − i Σ a_{k₁k₂} z_{k₁} z_{k₂}.
    let hess_arc = Arc::new(hess);
    let phi1 = {
        let hess = hess_arc.clone();
        Arc::new(move |z: &[Complex64]| -> Vec<Complex64> {
            (0..n)
                .map(|comp| {
                    let mut q = Complex64::new(0.0, 0.0);
                    for k1 in 0..n {
                        for k2 in 0..n {
                            q += hess[comp][k1][k2] * z[k1] * z[k2];
                        }
                    }
                    z[comp] - Complex64::new(0.0, 1.0) * q
                })
                .collect()
        })
    };

    // Second transform (support only): ẑ₁ = z₁ − Σ b z z − Σ_{k≥2} z_k².
    let phi2: Arc<dyn Fn(&[Complex64]) -> Vec<Complex64> + Send + Sync> = if let Some(sup) = support
    {
        let g_map = sup.g.clone();
        let zerop = vec![0.0; n - 1];
        let mut b = vec![vec![0.0; n - 1]; n - 1];
        for k1 in 0..n - 1 {
            for k2 in 0..n - 1 {
                let gm = g_map.clone();
                let f = move |xp: &[f64]| gm(xp);
                b[k1][k2] = 0.5 * partial2(&f, &zerop, k1, k2, 1e-4);
            }
        }
        let b = Arc::new(b);
        Arc::new(move |z: &[Complex64]| -> Vec<Complex64> {
            let mut out = z.to_vec();
            let mut q = Complex64::new(0.0, 0.0);
            for k1 in 0..n - 1 {
                for k2 in 0..n - 1 {
                    q += b[k1][k2] * z[k1 + 1] * z[k2 + 1];
                }
            }
            for zk in z.iter().skip(1) {
                q += zk * zk;
            }
            out[0] = z[0] - q;
            out
        })
    } else {
        Arc::new(|z: &[Complex64]| z.to_vec())
    };

    let full_map = {
        let phi1 = phi1.clone();
        let phi2 = phi2.clone();
        Arc::new(move |z: &[Complex64]| phi2(&phi1(z)))
    };

    // Re-fit M¹ as a graph: parametrize by x, map, solve Re ẑ(x) = x̂ for x.
    let m1_new = {
        let h_map = m1.h.clone();
        let full = full_map.clone();
        MaximallyRealGraph {
            n,
            h: Arc::new(move |xh: &[f64]| {
                let hm = h_map.clone();
                let fl = full.clone();
                let param = move |x: &[f64]| -> Vec<Complex64> {
                    let h = hm(x);
                    let z: Vec<Complex64> =
                        (0..x.len()).map(|i| Complex64::new(x[i], h[i])).collect();
                    fl(&z)
                };
                let f = |x: &[f64]| -> Vec<f64> {
                    param(x)
                        .iter()
                        .zip(xh.iter())
                        .map(|(z, t)| z.re - t)
                        .collect()
                };
                match newton_solve(&f, xh, 1e-13, 60) {
                    Ok(x) => param(&x).iter().map(|z| z.im).collect(),
                    Err(_) => vec![f64::NAN; xh.len()],
                }
            }),
            rho1: m1.rho1 / 2.0,
            normalization_order: 2,
        }
    };

    // Re-fit the support model.
    let support_new = support.map(|sup| {
        let g_map = sup.g.clone();
        let k_map = sup.k.clone();
        let full = full_map.clone();
        let param = Arc::new(move |xp: &[f64]| -> Vec<Complex64> {
            let g1 = g_map(xp);
            let kv = k_map(xp);
            let mut z = vec![Complex64::new(g1, kv[0])];
            for i in 0..xp.len() {
                z.push(Complex64::new(xp[i], kv[i + 1]));
            }
            full(&z)
        });
        let g_new: ScalarMap = {
            let param = param.clone();
            Arc::new(move |xhp: &[f64]| {
                let pm = param.clone();
                let f = |xp: &[f64]| -> Vec<f64> {
                    let z = pm(xp);
                    (0..xp.len()).map(|i| z[i + 1].re - xhp[i]).collect()
                };
                match newton_solve(&f, xhp, 1e-13, 60) {
                    Ok(xp) => param(&xp)[0].re,
                    Err(_) => f64::NAN,
                }
            })
        };
        let k_new: RealMap = {
            let param = param.clone();
            Arc::new(move |xhp: &[f64]| {
                let pm = param.clone();
                let f = |xp: &[f64]| -> Vec<f64> {
                    let z = pm(xp);
                    (0..xp.len()).map(|i| z[i + 1].re - xhp[i]).collect()
                };
                match newton_solve(&f, xhp, 1e-13, 60) {
                    Ok(xp) => param(&xp).iter().map(|z| z.im).collect(),
                    Err(_) => vec![f64::NAN; xhp.len() + 1],
                }
            })
        };
        SupportModel {
            n,
            g: g_new,
            k: k_new,
            psi: sup.psi.clone(),
            a: sup.a.clone(),
        }
    });

    // Residual: Hessian of the new h at 0.
    let mut h_residual: f64 = 0.0;
    for comp in 0..n {
        let hm = m1_new.h.clone();
        let f = move |x: &[f64]| hm(x)[comp];
        for k1 in 0..n {
            for k2 in 0..n {
                h_residual = h_residual.max(partial2(&f, &zero, k1, k2, 1e-4).abs());
            }
        }
    }

    Ok(SecondOrderNormalized {
        m1: m1_new,
        support: support_new,
        h_residual,
    })
}

/// Max residual of the compatibility identities `h_j(x) = φ_j(x, h₁(x))`
/// over sample points.
pub fn compatibility_residual(
    m: &GenericGraph,
    m1: &MaximallyRealGraph,
    samples: &[Vec<f64>],
) -> f64 {
    let mut worst: f64 = 0.0;
    for x in samples {
        let h = m1.h_at(x);
        let phi = m.phi_at(x, h[0]);
        for j in 0..m.n - 1 {
            worst = worst.max((h[j + 1] - phi[j]).abs());
        }
    }
    worst
}
