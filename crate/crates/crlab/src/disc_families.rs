//! Parametrized families of analytic discs half-attached to maximally real
//! submanifolds, and the cones of boundary directions they sweep out.
//!
//! The basic building block is a conformal map `Ψ` from the unit disc onto a
//! smoothed half-plane-like region `C⁺ ⊂ {Im w ≥ 0}` whose boundary contains
//! the real segment `[−1, 1]`; `Ψ` sends the right half-circle `∂⁺Δ` onto
//! that segment.  Composing with the disc self-maps
//! `Φ_c(ζ) = (i − cΨ(ζ))/(i + cΨ(ζ))` concentrates a disc near its
//! attachment point and turns fully solved boundary problems into
//! half-attached families with controlled size `O(c²)` and a prescribed
//! boundary tangent at the attachment point.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{self, Write};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::bishop_solver::{
    solve_bishop, solve_functional, solve_linearized, BishopError, BishopProblem, SolverConfig,
    TargetFn,
};
use crate::circle_ops::{
    forward_fft, hilbert_t1, split_frequency_energy, CircleError, CircleFn, CircleGrid,
};
use crate::cr_geometry::{GenericGraph, MaximallyRealGraph, SupportModel};

#[derive(Debug, Error)]
pub enum FamilyError {
    #[error("conformal boundary iteration did not converge (last change {0:.3e})")]
    MapIteration(f64),
    #[error("normalization failure: {0}")]
    Normalization(String),
    #[error("parameter block `{name}` out of range: norm {value:.3e} exceeds {bound:.3e}")]
    ParameterOutOfRange {
        name: String,
        value: f64,
        bound: f64,
    },
    #[error("tangent adjustment did not converge after {steps} steps (residual {residual:.3e})")]
    TangentAdjust { steps: usize, residual: f64 },
    #[error("pivot tangency solve did not converge (residual {0:.3e})")]
    PivotTangency(f64),
    #[error("boundary data fails the holomorphy test: relative negative-frequency energy {0:.3e}")]
    NotHolomorphic(f64),
    #[error("direction family is rank deficient (normalized singular value {0:.3e})")]
    RankDeficient(f64),
    #[error(transparent)]
    Solver(#[from] BishopError),
    #[error(transparent)]
    Circle(#[from] CircleError),
}

// ---------------------------------------------------------------------------
// geometry of the model region C⁺
// ---------------------------------------------------------------------------

/// Quintic Hermite interpolant on `[a, b]` matching value, first and second
/// derivative at both ends.
fn quintic_hermite(
    a: f64,
    b: f64,
    f0: f64,
    d0: f64,
    dd0: f64,
    f1: f64,
    d1: f64,
    dd1: f64,
    s: f64,
) -> f64 {
    let h = b - a;
    let u = (s - a) / h;
    let u2 = u * u;
    let u3 = u2 * u;
    let u4 = u3 * u;
    let u5 = u4 * u;
    // Standard quintic Hermite basis functions.
    let h00 = 1.0 - 10.0 * u3 + 15.0 * u4 - 6.0 * u5;
    let h10 = u - 6.0 * u3 + 8.0 * u4 - 3.0 * u5;
    let h20 = 0.5 * u2 - 1.5 * u3 + 1.5 * u4 - 0.5 * u5;
    let h01 = 10.0 * u3 - 15.0 * u4 + 6.0 * u5;
    let h11 = -4.0 * u3 + 7.0 * u4 - 3.0 * u5;
    let h21 = 0.5 * u3 - u4 + 0.5 * u5;
    f0 * h00 + d0 * h * h10 + dd0 * h * h * h20 + f1 * h01 + d1 * h * h11 + dd1 * h * h * h21
}

const SQRT3: f64 = 1.732_050_807_568_877_3;

/// Height of the lower boundary of the model region over the real axis:
/// flat on `|s| ≤ 1`, circular (`√3 − √(4 − s²)`, the circle of radius 2
/// centred at `i√3`) on `√3 ≤ |s| ≤ 2`, and a monotone quintic bridge in
/// between so that the whole boundary is C².
fn lower_height(s: f64) -> f64 {
    let a = s.abs();
    if a <= 1.0 {
        0.0
    } else if a >= SQRT3 {
        SQRT3 - (4.0 - s * s).max(0.0).sqrt()
    } else {
        // Bridge data: flat to second order at |s| = 1, circle values at √3.
        quintic_hermite(1.0, SQRT3, 0.0, 0.0, 0.0, SQRT3 - 1.0, SQRT3, 4.0, a)
    }
}

/// Star centre of the model region.
const STAR_CENTER: Complex64 = Complex64::new(0.0, SQRT3);

/// Polar angle, about the star centre, at which the lower curve leaves the
/// circular part: `atan2(−1, √3)` on the right.
const PHI_RIGHT: f64 = -PI / 6.0;
const PHI_LEFT: f64 = -5.0 * PI / 6.0;

fn wrap_angle(phi: f64) -> f64 {
    let mut p = phi % (2.0 * PI);
    if p > PI {
        p -= 2.0 * PI;
    }
    if p <= -PI {
        p += 2.0 * PI;
    }
    p
}

/// Polar angle about the star centre of the lower-curve point `(s, μ(s))`.
fn lower_phi(s: f64) -> f64 {
    (lower_height(s) - SQRT3).atan2(s)
}

/// Invert `s ↦ atan2(μ(s) − √3, s)` on `[−√3, √3]` by bisection.
fn lower_param_from_phi(phi: f64) -> f64 {
    let mut lo = -SQRT3;
    let mut hi = SQRT3;
    for _ in 0..70 {
        let mid = 0.5 * (lo + hi);
        if lower_phi(mid) < phi {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Boundary point of the model region at polar angle `phi` about the star
/// centre.  Points of the flat part `[−1, 1]` come out exactly real.
fn boundary_point(phi: f64) -> Complex64 {
    let p = wrap_angle(phi);
    if p > PHI_LEFT && p < PHI_RIGHT {
        let s = lower_param_from_phi(p);
        Complex64::new(s, lower_height(s))
    } else {
        STAR_CENTER + 2.0 * Complex64::new(p.cos(), p.sin())
    }
}

fn boundary_radius(phi: f64) -> f64 {
    let p = wrap_angle(phi);
    if p > PHI_LEFT && p < PHI_RIGHT {
        let s = lower_param_from_phi(p);
        let h = lower_height(s) - SQRT3;
        (s * s + h * h).sqrt()
    } else {
        2.0
    }
}

// ---------------------------------------------------------------------------
// trigonometric interpolation helpers
// ---------------------------------------------------------------------------

/// Evaluates the band-limited interpolant of a real periodic sample vector at
/// arbitrary angles.
struct TrigInterp {
    coeffs: Vec<Complex64>,
}

impl TrigInterp {
    fn new(samples: &[f64]) -> Self {
        Self {
            coeffs: crate::circle_ops::dft_real(samples),
        }
    }

    fn eval(&self, theta: f64) -> f64 {
        let n = self.coeffs.len();
        let half = n / 2;
        let z = Complex64::new(0.0, theta).exp();
        // Horner over positive frequencies, doubled by conjugate symmetry.
        let mut acc = Complex64::new(0.0, 0.0);
        for k in (1..half).rev() {
            acc = (acc + self.coeffs[k]) * z;
        }
        let nyquist = self.coeffs[half].re * (half as f64 * theta).cos();
        (self.coeffs[0].re + 2.0 * acc.re + nyquist) / n as f64
    }
}

/// Local polynomial interpolation of a boundary table at an off-node angle.
/// A nine-point Lagrange stencil on the uniform grid keeps the error local to
/// the stencil, which matters when the table is much smoother near the
/// evaluation point than globally.
fn lagrange_boundary(f: &CircleFn, theta: f64) -> Vec<f64> {
    let grid = f.grid();
    let n = grid.len() as i64;
    let dtheta = 2.0 * PI / n as f64;
    let k0 = (theta / dtheta).round() as i64;
    let t0 = k0 as f64 * dtheta;
    if (theta - t0).abs() < 1e-13 {
        return f.value_at(k0.rem_euclid(n) as usize);
    }
    let offs: Vec<i64> = (-4..=4).collect();
    // Barycentric weights for 9 equispaced nodes: (−1)^i · C(8, i).
    let w = [1.0, -8.0, 28.0, -56.0, 70.0, -56.0, 28.0, -8.0, 1.0];
    let mut num = vec![0.0; f.dim()];
    let mut den = 0.0;
    for (i, off) in offs.iter().enumerate() {
        let t = (k0 + off) as f64 * dtheta;
        let idx = (k0 + off).rem_euclid(n) as usize;
        let coef = w[i] / (theta - t);
        den += coef;
        let v = f.value_at(idx);
        for (acc, vv) in num.iter_mut().zip(v.iter()) {
            *acc += coef * vv;
        }
    }
    num.into_iter().map(|v| v / den).collect()
}

// ---------------------------------------------------------------------------
// Möbius transformations
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
struct Mobius {
    a: Complex64,
    b: Complex64,
    c: Complex64,
    d: Complex64,
}

impl Mobius {
    /// The transformation sending `(z1, z2, z3)` to `(0, 1, ∞)`.
    fn to_standard(z1: Complex64, z2: Complex64, z3: Complex64) -> Self {
        Self {
            a: z2 - z3,
            b: -z1 * (z2 - z3),
            c: z2 - z1,
            d: -z3 * (z2 - z1),
        }
    }

    fn inverse(self) -> Self {
        Self {
            a: self.d,
            b: -self.b,
            c: -self.c,
            d: self.a,
        }
    }

    fn compose(self, other: Self) -> Self {
        Self {
            a: self.a * other.a + self.b * other.c,
            b: self.a * other.b + self.b * other.d,
            c: self.c * other.a + self.d * other.c,
            d: self.c * other.b + self.d * other.d,
        }
    }

    fn eval(&self, z: Complex64) -> Complex64 {
        (self.a * z + self.b) / (self.c * z + self.d)
    }
}

// ---------------------------------------------------------------------------
// the conformal half-map Ψ
// ---------------------------------------------------------------------------

/// Riemann map `Ψ: Δ → C⁺` with `Ψ(1) = 0`, `Ψ(±i) = ±1`, sending the right
/// half-circle onto the real segment `[−1, 1]` with positive angular speed.
pub struct ConformalHalfMap {
    boundary: CircleFn,
    derivative: CircleFn,
    coeffs: Vec<Complex64>,
    /// Angular derivative `dΨ/dθ` at `θ = 0` (real and positive).
    pub c1: f64,
    /// Sup of `|Ψ| + |Ψ'| + |Ψ''|` over the boundary, a crude C² bound.
    pub c2: f64,
    /// Relative negative-frequency energy of the boundary table.
    pub holomorphy_defect: f64,
}

impl ConformalHalfMap {
    pub fn grid(&self) -> CircleGrid {
        self.boundary.grid()
    }

    /// Boundary table `[Re Ψ, Im Ψ]` on the grid.
    pub fn boundary(&self) -> &CircleFn {
        &self.boundary
    }

    /// Spectral derivative table `[Re Ψ', Im Ψ']` (with respect to `θ`).
    pub fn derivative(&self) -> &CircleFn {
        &self.derivative
    }

    pub fn boundary_value(&self, j: usize) -> Complex64 {
        let v = self.boundary.value_at(j);
        Complex64::new(v[0], v[1])
    }

    /// Evaluate `Ψ` anywhere on the closed disc by its power series.
    pub fn eval(&self, zeta: Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for c in self.coeffs.iter().rev() {
            acc = acc * zeta + c;
        }
        acc
    }
}

/// Build the conformal half-map on an `n`-point grid.
///
/// The boundary correspondence for the star-shaped model region is found by
/// the classical conjugate-function iteration: writing the boundary point at
/// disc angle `θ` as `center + R(φ(θ))·e^{iφ(θ)}`, the lift `φ − θ` is the
/// harmonic conjugate of `log R ∘ φ`, which is iterated to a fixed point on a
/// fine internal grid.  The three-point normalization is then imposed by a
/// Möbius automorphism of the disc through anchor angles located on the
/// interpolated correspondence.
pub fn build_psi(n: usize) -> Result<ConformalHalfMap, FamilyError> {
    let grid = CircleGrid::new(n)?;
    let nc = 4096.max(n);
    let grid_c = CircleGrid::new(nc)?;

    // --- boundary correspondence iteration -------------------------------
    let mut corr = vec![0.0; nc]; // φ(θ) − θ
    let mut last_change = f64::INFINITY;
    let mut converged = false;
    for _ in 0..400 {
        // Log-radius samples with the current correspondence.
        let logr: Vec<f64> = (0..nc)
            .map(|j| boundary_radius(grid_c.theta(j) + corr[j]).ln())
            .collect();
        let logr_fn = CircleFn::from_components(grid_c, vec![logr])?;
        let conj = hilbert_t1(&logr_fn);
        let mut change: f64 = 0.0;
        for j in 0..nc {
            let next = conj.component(0)[j];
            change = change.max((next - corr[j]).abs());
            corr[j] = next;
        }
        last_change = change;
        if change < 1e-13 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(FamilyError::MapIteration(last_change));
    }

    // --- anchors for the three-point normalization ------------------------
    let interp = TrigInterp::new(&corr);
    let lift = |theta: f64| theta + interp.eval(theta);
    // Target angles of the boundary points 0, 1, −1 about the star centre.
    let targets = [
        (-PI / 2.0, "zero"),
        (lower_phi(1.0), "plus"),
        (lower_phi(-1.0), "minus"),
    ];
    let mut anchors = [0.0f64; 3];
    for (slot, (target, name)) in targets.iter().enumerate() {
        let mut found = None;
        'search: for j in 0..nc {
            let a = grid_c.theta(j) + corr[j];
            let b = grid_c.theta(j) + 2.0 * PI / nc as f64 + corr[(j + 1) % nc];
            for k in [-1.0f64, 0.0, 1.0] {
                let t = target + 2.0 * PI * k;
                if (a - t) * (b - t) <= 0.0 && b > a {
                    // Bisection for lift(θ) = t on [θ_j, θ_{j+1}].
                    let mut lo = grid_c.theta(j);
                    let mut hi = lo + 2.0 * PI / nc as f64;
                    for _ in 0..100 {
                        let mid = 0.5 * (lo + hi);
                        if lift(mid) < t {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    found = Some(0.5 * (lo + hi));
                    break 'search;
                }
            }
        }
        anchors[slot] = found
            .ok_or_else(|| FamilyError::Normalization(format!("anchor `{name}` not bracketed")))?;
    }
    let zeta = |t: f64| Complex64::new(0.0, t).exp();
    let (z0, zp, zm) = (zeta(anchors[0]), zeta(anchors[1]), zeta(anchors[2]));
    let s1 = Mobius::to_standard(
        Complex64::new(1.0, 0.0),
        Complex64::new(0.0, 1.0),
        Complex64::new(0.0, -1.0),
    );
    let s2 = Mobius::to_standard(z0, zp, zm);
    let m = s2.inverse().compose(s1);
    let center_image = m.eval(Complex64::new(0.0, 0.0));
    if center_image.norm() >= 1.0 {
        return Err(FamilyError::Normalization(format!(
            "disc automorphism sends 0 to modulus {:.3}",
            center_image.norm()
        )));
    }

    // --- output tables ----------------------------------------------------
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for j in 0..n {
        let w = m.eval(grid.zeta(j));
        let w = w / w.norm();
        let theta_p = w.arg();
        let phi = theta_p + interp.eval(theta_p);
        let bp = boundary_point(phi);
        re[j] = bp.re;
        im[j] = bp.im;
    }
    let boundary = CircleFn::from_components(grid, vec![re.clone(), im.clone()])?;
    let derivative = boundary.derivative_theta();
    let second = derivative.derivative_theta();
    let c1 = derivative.component(0)[0];
    if c1 <= 0.0 {
        return Err(FamilyError::Normalization(format!(
            "angular derivative at the base point is {c1:.3e}"
        )));
    }
    let mut c2: f64 = 0.0;
    for j in 0..n {
        let b = boundary.value_at(j);
        let d = derivative.value_at(j);
        let s = second.value_at(j);
        c2 = c2.max(b[0].hypot(b[1]) + d[0].hypot(d[1]) + s[0].hypot(s[1]));
    }
    let samples: Vec<Complex64> = (0..n).map(|j| Complex64::new(re[j], im[j])).collect();
    let fft = forward_fft(&samples);
    let (neg, total) = split_frequency_energy(&fft);
    let defect = if total > 0.0 {
        (neg / total).powi(2)
    } else {
        0.0
    };
    let coeffs: Vec<Complex64> = fft[..n / 2].iter().map(|c| c / n as f64).collect();
    Ok(ConformalHalfMap {
        boundary,
        derivative,
        coeffs,
        c1,
        c2,
        holomorphy_defect: defect,
    })
}

/// Process-wide cache of conformal half-maps by grid size: the construction
/// is deterministic, so sharing one instance per size is sound.
pub fn shared_psi(n: usize) -> Result<Arc<ConformalHalfMap>, FamilyError> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<ConformalHalfMap>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    {
        let guard = cache.lock().expect("psi cache lock");
        if let Some(hit) = guard.get(&n) {
            return Ok(hit.clone());
        }
    }
    let built = Arc::new(build_psi(n)?);
    cache
        .lock()
        .expect("psi cache lock")
        .insert(n, built.clone());
    Ok(built)
}

/// The concentrating disc self-map `Φ_c(ζ) = (i − cΨ(ζ))/(i + cΨ(ζ))`.
///
/// It fixes `ζ = 1`, maps the right half-circle into a short boundary arc
/// around 1, and maps the rest of the closed disc into a neighbourhood of 1
/// of radius `O(c)` inside the open disc.
pub fn phi_c(
    psi: &Arc<ConformalHalfMap>,
    c: f64,
) -> Arc<dyn Fn(Complex64) -> Complex64 + Send + Sync> {
    assert!(c > 0.0, "the concentration scale must be positive");
    let psi = psi.clone();
    let i = Complex64::new(0.0, 1.0);
    Arc::new(move |zeta: Complex64| {
        let w = psi.eval(zeta);
        (i - c * w) / (i + c * w)
    })
}

// ---------------------------------------------------------------------------
// analytic discs
// ---------------------------------------------------------------------------

/// An analytic disc `Δ̄ → C^n` represented by its boundary values
/// `X + iY` on a circle grid together with its power-series coefficients.
#[derive(Clone)]
pub struct AnalyticDisc {
    x: CircleFn,
    y: CircleFn,
    coeffs: Vec<Vec<Complex64>>,
    defect: f64,
}

/// Relative negative-frequency energy above which boundary data is rejected
/// as non-holomorphic.
pub const HOLOMORPHY_TOL: f64 = 1e-8;

impl AnalyticDisc {
    /// Wrap boundary data, verifying that `X + iY` extends holomorphically:
    /// the relative negative-frequency energy must stay below
    /// [`HOLOMORPHY_TOL`].
    pub fn from_boundary(x: CircleFn, y: CircleFn) -> Result<Self, FamilyError> {
        if x.grid() != y.grid() {
            return Err(CircleError::GridMismatch(x.grid().len(), y.grid().len()).into());
        }
        if x.dim() != y.dim() {
            return Err(CircleError::DimMismatch(x.dim(), y.dim()).into());
        }
        let n = x.grid().len();
        let mut coeffs = Vec::with_capacity(x.dim());
        let mut neg_energy = 0.0;
        let mut total_energy = 0.0;
        for i in 0..x.dim() {
            let samples: Vec<Complex64> = (0..n)
                .map(|j| Complex64::new(x.component(i)[j], y.component(i)[j]))
                .collect();
            let fft = forward_fft(&samples);
            let (neg, total) = split_frequency_energy(&fft);
            neg_energy += neg * neg;
            total_energy += total * total;
            coeffs.push(fft[..n / 2].iter().map(|c| c / n as f64).collect());
        }
        let defect = if total_energy > 0.0 {
            neg_energy / total_energy
        } else {
            0.0
        };
        if defect > HOLOMORPHY_TOL {
            return Err(FamilyError::NotHolomorphic(defect));
        }
        Ok(Self {
            x,
            y,
            coeffs,
            defect,
        })
    }

    pub fn grid(&self) -> CircleGrid {
        self.x.grid()
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    pub fn boundary_x(&self) -> &CircleFn {
        &self.x
    }

    pub fn boundary_y(&self) -> &CircleFn {
        &self.y
    }

    pub fn holomorphy_defect(&self) -> f64 {
        self.defect
    }

    /// Evaluate the disc at any point of the closed disc.
    pub fn eval(&self, zeta: Complex64) -> Vec<Complex64> {
        self.coeffs
            .iter()
            .map(|comp| {
                let mut acc = Complex64::new(0.0, 0.0);
                for c in comp.iter().rev() {
                    acc = acc * zeta + c;
                }
                acc
            })
            .collect()
    }

    /// Complex boundary value at `ζ = 1` (grid node 0).
    pub fn value_at_one(&self) -> Vec<Complex64> {
        let xv = self.x.at_one();
        let yv = self.y.at_one();
        xv.into_iter()
            .zip(yv)
            .map(|(a, b)| Complex64::new(a, b))
            .collect()
    }

    /// Real part of the boundary value at `ζ = 1`.
    pub fn x_at_one(&self) -> Vec<f64> {
        self.x.at_one()
    }

    /// Spectral angular derivative of the real boundary part at `ζ = 1`.
    pub fn x_derivative_at_one(&self) -> Vec<f64> {
        self.x.derivative_theta().at_one()
    }

    /// Sup of `|Z|` over the boundary (which bounds the whole disc by the
    /// maximum principle).
    pub fn sup_abs(&self) -> f64 {
        let n = self.grid().len();
        let mut worst: f64 = 0.0;
        for j in 0..n {
            let xv = self.x.value_at(j);
            let yv = self.y.value_at(j);
            let norm: f64 = xv
                .iter()
                .zip(yv.iter())
                .map(|(a, b)| a * a + b * b)
                .sum::<f64>()
                .sqrt();
            worst = worst.max(norm);
        }
        worst
    }
}

// ---------------------------------------------------------------------------
// disc families
// ---------------------------------------------------------------------------

/// One named block of real parameters with a Euclidean norm bound.
#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub dim: usize,
    pub max_norm: f64,
}

/// A deterministic parametrized family of analytic discs.  Parameter vectors
/// are flattened block-by-block in the order of `params`; the builder rejects
/// out-of-range blocks rather than extrapolating.
#[derive(Clone)]
pub struct DiscFamily {
    pub params: Vec<ParamSpec>,
    /// Concentration scale of the family.
    pub scale: f64,
    /// Tangent-correction vector applied to the leading direction, if the
    /// family was built with one.
    pub tangent_adjustment: Option<Vec<f64>>,
    builder: Arc<dyn Fn(&[f64]) -> Result<AnalyticDisc, FamilyError> + Send + Sync>,
}

impl DiscFamily {
    pub fn new(
        params: Vec<ParamSpec>,
        scale: f64,
        builder: Arc<dyn Fn(&[f64]) -> Result<AnalyticDisc, FamilyError> + Send + Sync>,
    ) -> Self {
        Self {
            params,
            scale,
            tangent_adjustment: None,
            builder,
        }
    }

    pub fn total_dim(&self) -> usize {
        self.params.iter().map(|p| p.dim).sum()
    }

    /// Build the disc at a parameter vector, enforcing the per-block norm
    /// bounds.
    pub fn disc(&self, parameters: &[f64]) -> Result<AnalyticDisc, FamilyError> {
        if parameters.len() != self.total_dim() {
            return Err(FamilyError::ParameterOutOfRange {
                name: "length".into(),
                value: parameters.len() as f64,
                bound: self.total_dim() as f64,
            });
        }
        let mut offset = 0;
        for spec in &self.params {
            let block = &parameters[offset..offset + spec.dim];
            let norm = block.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > spec.max_norm * (1.0 + 1e-9) + 1e-15 {
                return Err(FamilyError::ParameterOutOfRange {
                    name: spec.name.clone(),
                    value: norm,
                    bound: spec.max_norm,
                });
            }
            offset += spec.dim;
        }
        (self.builder)(parameters)
    }

    /// Export sampled family members as a CSV point cloud: one row per
    /// boundary node per parameter vector, columns `params…, theta,
    /// re_z1, im_z1, …`.
    pub fn write_csv<W: Write>(&self, samples: &[Vec<f64>], out: &mut W) -> io::Result<()> {
        let mut header: Vec<String> = Vec::new();
        for spec in &self.params {
            if spec.dim == 1 {
                header.push(spec.name.clone());
            } else {
                for i in 1..=spec.dim {
                    header.push(format!("{}_{i}", spec.name));
                }
            }
        }
        header.push("theta".into());
        let mut wrote_header = false;
        for sample in samples {
            let disc = self
                .disc(sample)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
            if !wrote_header {
                for i in 1..=disc.dim() {
                    header.push(format!("re_z{i}"));
                    header.push(format!("im_z{i}"));
                }
                writeln!(out, "{}", header.join(","))?;
                wrote_header = true;
            }
            let grid = disc.grid();
            for j in 0..grid.len() {
                let mut row: Vec<String> = sample.iter().map(|v| format!("{v:.12e}")).collect();
                row.push(format!("{:.12e}", grid.theta(j)));
                let xv = disc.boundary_x().value_at(j);
                let yv = disc.boundary_y().value_at(j);
                for i in 0..disc.dim() {
                    row.push(format!("{:.12e}", xv[i]));
                    row.push(format!("{:.12e}", yv[i]));
                }
                writeln!(out, "{}", row.join(","))?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// the flat family
// ---------------------------------------------------------------------------

/// The explicit flat-model disc `Z(ζ) = x + c·v·Ψ(ζ)`, half-attached to
/// `R^n`: its right half-boundary lies in `R^n`, its centre value at `ζ = 1`
/// is `x`, and its image lies in the complex line `x + C·v`.
pub fn flat_family(
    c: f64,
    x: &[f64],
    v: &[f64],
    psi: &ConformalHalfMap,
) -> Result<AnalyticDisc, FamilyError> {
    if x.len() != v.len() {
        return Err(FamilyError::ParameterOutOfRange {
            name: "direction".into(),
            value: v.len() as f64,
            bound: x.len() as f64,
        });
    }
    let norm = |s: &[f64]| s.iter().map(|t| t * t).sum::<f64>().sqrt();
    let checks = [
        ("center", norm(x), c),
        ("direction", norm(v), 2.0),
        ("scale", c, 1.0 / 9.0),
    ];
    for (name, value, bound) in checks {
        if value > bound * (1.0 + 1e-9) + 1e-15 {
            return Err(FamilyError::ParameterOutOfRange {
                name: name.into(),
                value,
                bound,
            });
        }
    }
    let grid = psi.grid();
    let n = grid.len();
    let re = psi.boundary().component(0);
    let im = psi.boundary().component(1);
    let dim = x.len();
    let mut xc = vec![vec![0.0; n]; dim];
    let mut yc = vec![vec![0.0; n]; dim];
    for j in 0..n {
        for k in 0..dim {
            xc[k][j] = x[k] + c * v[k] * re[j];
            yc[k][j] = c * v[k] * im[j];
        }
    }
    AnalyticDisc::from_boundary(
        CircleFn::from_components(grid, xc)?,
        CircleFn::from_components(grid, yc)?,
    )
}

// ---------------------------------------------------------------------------
// tangent adjustment and the half-attached family
// ---------------------------------------------------------------------------

fn seed_from_direction(psi: &ConformalHalfMap, base: &[f64], w: &[f64], c: f64) -> CircleFn {
    let grid = psi.grid();
    let n = grid.len();
    let re = psi.boundary().component(0);
    let mut comps = vec![vec![0.0; n]; base.len()];
    for j in 0..n {
        for k in 0..base.len() {
            comps[k][j] = base[k] + c * w[k] * re[j];
        }
    }
    CircleFn::from_components(grid, comps).expect("consistent seed components")
}

/// Solve for the correction `v(c)` that restores the boundary tangent of the
/// solved disc through `base` in direction `v1` to the exact flat-model value
/// `c·C₁·v1`, by damped Newton with Jacobian columns from the linearized
/// solver.
pub fn adjust_tangent(
    m1: &MaximallyRealGraph,
    psi: &ConformalHalfMap,
    base: &[f64],
    v1: &[f64],
    c: f64,
    cfg: &SolverConfig,
) -> Result<Vec<f64>, FamilyError> {
    let n = m1.n;
    let target: Vec<f64> = v1.iter().map(|t| c * psi.c1 * t).collect();
    let eval = |v: &[f64]| -> Result<(Vec<f64>, CircleFn, BishopProblem), FamilyError> {
        let w: Vec<f64> = v1.iter().zip(v.iter()).map(|(a, b)| a + b).collect();
        let p = BishopProblem {
            h: m1.h.clone(),
            d: 1.0,
            x0: seed_from_direction(psi, base, &w, c),
            config: cfg.clone(),
        };
        let rep = solve_bishop(&p)?;
        let d = rep.x.derivative_theta().at_one();
        let f: Vec<f64> = d.iter().zip(target.iter()).map(|(a, b)| a - b).collect();
        Ok((f, rep.x, p))
    };
    let mut v = vec![0.0; n];
    let newton_tol = (100.0 * cfg.tol).max(1e-12);
    let mut last_residual = f64::INFINITY;
    for step in 0..50 {
        let (f, x, p) = eval(&v)?;
        let fnorm = f.iter().map(|t| t * t).sum::<f64>().sqrt();
        last_residual = fnorm;
        if fnorm < newton_tol {
            return Ok(v);
        }
        // Jacobian of the tangent map with respect to the direction shift.
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            let grid = psi.grid();
            let re = psi.boundary().component(0);
            let mut comps = vec![vec![0.0; grid.len()]; n];
            for (j, r) in re.iter().enumerate() {
                comps[k][j] = c * r;
            }
            let s = CircleFn::from_components(grid, comps)?;
            let chi = solve_linearized(&p, &x, &s)?;
            let col = chi.derivative_theta().at_one();
            for r in 0..n {
                jac[(r, k)] = col[r];
            }
        }
        let rhs = DVector::from_column_slice(&f);
        let delta = jac.lu().solve(&rhs).ok_or(FamilyError::TangentAdjust {
            steps: step,
            residual: fnorm,
        })?;
        for k in 0..n {
            v[k] -= delta[k];
        }
    }
    if last_residual < 1e-9 {
        Ok(v)
    } else {
        Err(FamilyError::TangentAdjust {
            steps: 50,
            residual: last_residual,
        })
    }
}

/// Build the concentrated half-attached family
/// `A_{x,v}(ζ) = Z_{base+x, v1+v(c)+v}(Φ_c(ζ))` over the solved discs through
/// `M¹ = graph(h)`.  Centres range over `|x| ≤ c²` and direction shifts over
/// `|v| ≤ c`; the tangent correction `v(c)` is solved once and recorded.
pub fn half_attached_family(
    m1: &MaximallyRealGraph,
    base: &[f64],
    v1: &[f64],
    c: f64,
    psi: &Arc<ConformalHalfMap>,
    cfg: &SolverConfig,
) -> Result<DiscFamily, FamilyError> {
    let n = m1.n;
    let vc = adjust_tangent(m1, psi, base, v1, c, cfg)?;
    let w0: Vec<f64> = v1.iter().zip(vc.iter()).map(|(a, b)| a + b).collect();
    let grid = psi.grid();
    let ng = grid.len();
    // Precompute Φ_c on the boundary grid from the boundary table, so that
    // the right half-circle lands exactly on the unit circle.
    let i = Complex64::new(0.0, 1.0);
    let mut phi_nodes = Vec::with_capacity(ng);
    for j in 0..ng {
        let w = {
            let v = psi.boundary().value_at(j);
            Complex64::new(v[0], v[1])
        };
        phi_nodes.push((i - c * w) / (i + c * w));
    }
    let m1c = m1.clone();
    let base_v = base.to_vec();
    let cfg_c = cfg.clone();
    let psi_c = psi.clone();
    let builder = Arc::new(move |p: &[f64]| -> Result<AnalyticDisc, FamilyError> {
        let x = &p[..n];
        let v = &p[n..2 * n];
        let w: Vec<f64> = w0.iter().zip(v.iter()).map(|(a, b)| a + b).collect();
        let center: Vec<f64> = base_v.iter().zip(x.iter()).map(|(a, b)| a + b).collect();
        let problem = BishopProblem {
            h: m1c.h.clone(),
            d: 1.0,
            x0: seed_from_direction(&psi_c, &center, &w, c),
            config: cfg_c.clone(),
        };
        let rep = solve_bishop(&problem)?;
        let z1 = AnalyticDisc::from_boundary(rep.x, rep.y)?;
        // Compose with the concentrating self-map.  On the right
        // half-circle the image stays on the unit circle, so local
        // interpolation of the solved boundary table keeps the error local
        // (the table is analytic near the attachment arc); elsewhere the
        // power series is used.
        let mut xc = vec![vec![0.0; ng]; n];
        let mut yc = vec![vec![0.0; ng]; n];
        for j in 0..ng {
            let zeta = phi_nodes[j];
            if (zeta.norm() - 1.0).abs() < 1e-12 {
                let theta_p = zeta.arg();
                let xv = lagrange_boundary(z1.boundary_x(), theta_p);
                let yv = lagrange_boundary(z1.boundary_y(), theta_p);
                for k in 0..n {
                    xc[k][j] = xv[k];
                    yc[k][j] = yv[k];
                }
            } else {
                let zv = z1.eval(zeta);
                for k in 0..n {
                    xc[k][j] = zv[k].re;
                    yc[k][j] = zv[k].im;
                }
            }
        }
        AnalyticDisc::from_boundary(
            CircleFn::from_components(grid, xc)?,
            CircleFn::from_components(grid, yc)?,
        )
    });
    let mut family = DiscFamily::new(
        vec![
            ParamSpec {
                name: "x".into(),
                dim: n,
                max_norm: c * c,
            },
            ParamSpec {
                name: "v".into(),
                dim: n,
                max_norm: c,
            },
        ],
        c,
        builder,
    );
    family.tangent_adjustment = Some(vc);
    Ok(family)
}

// ---------------------------------------------------------------------------
// the pivoted attached family
// ---------------------------------------------------------------------------

fn smooth_bump(u: f64) -> f64 {
    if u.abs() < 1.0 {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    } else {
        0.0
    }
}

/// Fully attached discs with an explicit "round" first component
/// `ir(1 − ζ)(1 + iτ)` pivoting at `ζ = 1`, remaining components solved
/// against the ambient graph `M: y' = φ'(x, y₁)` deformed by a bump of size
/// `t` concentrated near `ζ = −1`.  The pivot slope `τ` is solved per member
/// so that the disc is tangent to `M¹ = graph(h)` at its attachment point;
/// the translation block `χ` and the normal offset `ν` move the attachment
/// point along and off `M¹`.
///
/// Parameter layout: `[r, t (n−1), chi (n), nu]`, all blocks bounded by
/// `r_max`.
pub fn attached_pivot_family(
    m: &GenericGraph,
    m1: &MaximallyRealGraph,
    base: &[f64],
    r_max: f64,
    grid: CircleGrid,
    cfg: &SolverConfig,
) -> Result<DiscFamily, FamilyError> {
    let n = m.n;
    if m1.n != n {
        return Err(FamilyError::Normalization(format!(
            "ambient dimension {} does not match the submanifold dimension {}",
            n, m1.n
        )));
    }
    let m = m.clone();
    let m1 = m1.clone();
    let base = base.to_vec();
    let cfg = cfg.clone();
    let ng = grid.len();
    let bump_width = (4.0 * r_max).max(0.2);
    let builder = Arc::new(move |p: &[f64]| -> Result<AnalyticDisc, FamilyError> {
        let r = p[0];
        let t = &p[1..n];
        let chi = &p[n..2 * n];
        let nu = p[2 * n];
        let chi_abs: Vec<f64> = base.iter().zip(chi.iter()).map(|(a, b)| a + b).collect();
        let h1 = m1.h_at(&chi_abs)[0];

        // Circle bump concentrated near ζ = −1.
        let mu: Vec<f64> = (0..ng)
            .map(|j| smooth_bump((grid.theta(j) - PI) / (0.5 * PI)))
            .collect();
        let mu = Arc::new(mu);

        // Explicit first component at pivot slope τ.
        let first = |tau: f64| -> (Vec<f64>, Vec<f64>) {
            let mut x1 = vec![0.0; ng];
            let mut y1 = vec![0.0; ng];
            for j in 0..ng {
                let th = grid.theta(j);
                x1[j] = r * (th.sin() - tau * (1.0 - th.cos())) + chi_abs[0];
                y1[j] = r * ((1.0 - th.cos()) + tau * th.sin()) + h1 + nu;
            }
            (x1, y1)
        };

        // Solve the remaining components for a given pivot slope and
        // deformation, returning the boundary solution.
        let solve_rest = |tau: f64,
                          tvec: &[f64],
                          eta_center: Option<&(Vec<f64>, f64)>|
         -> Result<CircleFn, FamilyError> {
            let (x1, y1) = first(tau);
            let x1 = Arc::new(x1);
            let y1 = Arc::new(y1);
            let phi = m.phi.clone();
            let tvec = tvec.to_vec();
            let mu = mu.clone();
            let eta = eta_center.cloned();
            let dtheta = 2.0 * PI / ng as f64;
            let width = bump_width;
            let target: TargetFn = Arc::new(move |theta: f64, xp: &[f64]| {
                let j = ((theta / dtheta).round() as usize) % x1.len();
                let mut xfull = Vec::with_capacity(xp.len() + 1);
                xfull.push(x1[j]);
                xfull.extend_from_slice(xp);
                let mut out = phi(&xfull, y1[j]);
                if !tvec.is_empty() && mu[j] != 0.0 {
                    let eta_val = match &eta {
                        Some((cx, cy)) => {
                            let mut d2 = (y1[j] - cy) * (y1[j] - cy);
                            for (a, b) in xfull.iter().zip(cx.iter()) {
                                d2 += (a - b) * (a - b);
                            }
                            smooth_bump(d2.sqrt() / width)
                        }
                        None => 1.0,
                    };
                    for (o, tk) in out.iter_mut().zip(tvec.iter()) {
                        *o += tk * mu[j] * eta_val;
                    }
                }
                out
            });
            let x0 = CircleFn::from_fn(grid, n - 1, |_| chi_abs[1..].to_vec());
            let rep = solve_functional(&x0, &target, &cfg)?;
            Ok(rep.x)
        };

        // Locate the spatial bump at the far point of the undeformed disc.
        let xp0 = solve_rest(0.0, &[], None)?;
        let half = ng / 2;
        let (x1_0, y1_0) = first(0.0);
        let mut eta_cx = vec![x1_0[half]];
        eta_cx.extend(xp0.value_at(half));
        let eta_center = (eta_cx, y1_0[half]);

        // Pivot slope from the tangency condition
        //   r·τ = Σ_k ∂h₁/∂x_k (χ) · ∂_θ X_k(1).
        let fd = 1e-6;
        let mut grad_h1 = vec![0.0; n];
        for k in 0..n {
            let mut xp = chi_abs.clone();
            let mut xm = chi_abs.clone();
            xp[k] += fd;
            xm[k] -= fd;
            grad_h1[k] = (m1.h_at(&xp)[0] - m1.h_at(&xm)[0]) / (2.0 * fd);
        }
        let tangency = |tau: f64| -> Result<(f64, CircleFn), FamilyError> {
            let xp = solve_rest(tau, t, Some(&eta_center))?;
            let dxp = xp.derivative_theta().at_one();
            let mut rhs = grad_h1[0] * r;
            for k in 1..n {
                rhs += grad_h1[k] * dxp[k - 1];
            }
            Ok((r * tau - rhs, xp))
        };
        let grad_norm: f64 = grad_h1.iter().map(|g| g * g).sum::<f64>().sqrt();
        let (tau, xprime) = if r == 0.0 || grad_norm == 0.0 {
            (0.0, solve_rest(0.0, t, Some(&eta_center))?)
        } else {
            let mut tau0 = 0.0;
            let (mut g0, mut sol) = tangency(tau0)?;
            let mut tau1 = tau0 - g0 / r;
            let mut done = g0.abs() < 1e-12;
            if !done {
                for _ in 0..40 {
                    let (g1, sol1) = tangency(tau1)?;
                    sol = sol1;
                    if g1.abs() < 1e-12 {
                        tau0 = tau1;
                        done = true;
                        break;
                    }
                    let denom = g1 - g0;
                    let next = if denom.abs() > 1e-300 {
                        tau1 - g1 * (tau1 - tau0) / denom
                    } else {
                        tau1
                    };
                    tau0 = tau1;
                    g0 = g1;
                    tau1 = next;
                }
                if !done {
                    return Err(FamilyError::PivotTangency(g0));
                }
            }
            (tau0, sol)
        };

        // Assemble the full boundary values.
        let (x1, y1) = first(tau);
        let yprime = hilbert_t1(&xprime);
        // Complete Y' with its value at ζ = 1, where the circle bump
        // vanishes and the attachment point sits over χ.
        let y1_at_one = h1 + nu;
        let offset = m.phi_at(&chi_abs, y1_at_one);
        let mut xc = vec![x1];
        let mut yc = vec![y1];
        for k in 0..n - 1 {
            xc.push(xprime.component(k).to_vec());
            yc.push(yprime.component(k).iter().map(|v| v + offset[k]).collect());
        }
        AnalyticDisc::from_boundary(
            CircleFn::from_components(grid, xc)?,
            CircleFn::from_components(grid, yc)?,
        )
    });
    Ok(DiscFamily::new(
        vec![
            ParamSpec {
                name: "r".into(),
                dim: 1,
                max_norm: r_max,
            },
            ParamSpec {
                name: "t".into(),
                dim: n - 1,
                max_norm: r_max,
            },
            ParamSpec {
                name: "chi".into(),
                dim: n,
                max_norm: r_max,
            },
            ParamSpec {
                name: "nu".into(),
                dim: 1,
                max_norm: r_max,
            },
        ],
        r_max,
        builder,
    ))
}

// ---------------------------------------------------------------------------
// cone fields
// ---------------------------------------------------------------------------

fn vec_norm(v: &[f64]) -> f64 {
    v.iter().map(|t| t * t).sum::<f64>().sqrt()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = vec_norm(v);
    v.iter().map(|t| t / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Threshold on normalized singular values below which a direction family is
/// considered rank deficient.
pub const RANK_TOL: f64 = 1e-3;

/// Smallest of the leading `take` singular values of the matrix with the
/// given columns, after normalizing each column to unit length.
fn normalized_singular_value(cols: &[Vec<f64>], take: usize) -> f64 {
    if cols.is_empty() || take == 0 {
        return 0.0;
    }
    let n = cols[0].len();
    let mut mat = DMatrix::<f64>::zeros(n, cols.len());
    for (j, col) in cols.iter().enumerate() {
        let norm = vec_norm(col);
        if norm > 0.0 {
            for i in 0..n {
                mat[(i, j)] = col[i] / norm;
            }
        }
    }
    let sv = mat.svd(false, false).singular_values;
    if sv.len() < take {
        0.0
    } else {
        sv[take - 1]
    }
}

/// A field of open cones of boundary directions over base points, generated
/// by sampled tangent directions of a disc family.
#[derive(Clone, Debug)]
pub struct ConeField {
    pub base_points: Vec<Vec<f64>>,
    /// Unit generating directions per base point; the first generator is the
    /// central direction of the unperturbed disc.
    pub generators: Vec<Vec<Vec<f64>>>,
    /// Openness margin per base point: the `(n−1)`-th normalized singular
    /// value of the deviations from the central direction.
    pub openness: Vec<f64>,
    pub filled: bool,
}

impl ConeField {
    /// Blend every generator toward a prescribed direction field:
    /// for each blending weight `λ` the directions
    /// `λ·X_p + (1 − λ)·g` are appended, so `λ = 0` keeps the original
    /// generators and `λ → 1` approaches the prescribed field.
    pub fn fill(&mut self, field: &[Vec<f64>], lambdas: &[f64]) {
        for (gens, xp) in self.generators.iter_mut().zip(field.iter()) {
            let snapshot = gens.clone();
            for &lambda in lambdas {
                for g in &snapshot {
                    let blended: Vec<f64> = xp
                        .iter()
                        .zip(g.iter())
                        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                        .collect();
                    if vec_norm(&blended) > 0.0 {
                        gens.push(unit(&blended));
                    }
                }
            }
        }
        self.filled = true;
    }

    /// Whether a direction lies within the sampled cone up to the given
    /// angular slack: compares against the best aligned generator.
    pub fn contains_direction(&self, point_index: usize, dir: &[f64], cos_slack: f64) -> bool {
        let d = unit(dir);
        self.generators[point_index]
            .iter()
            .any(|g| dot(g, &d) >= 1.0 - cos_slack)
    }
}

/// Sample the cone of boundary directions `∂_θ(real part)(1)` of a family:
/// the central disc at each base parameter vector gives the cone axis, and
/// perturbing the listed parameter indices by `±eps` gives the generators.
/// Errors if the deviations do not span an `(n−1)`-dimensional set of
/// directions.
pub fn cone_field_from_family(
    family: &DiscFamily,
    base_params: &[Vec<f64>],
    deform_indices: &[usize],
    eps: f64,
) -> Result<ConeField, FamilyError> {
    let mut base_points = Vec::new();
    let mut generators = Vec::new();
    let mut openness = Vec::new();
    for params in base_params {
        let central = family.disc(params)?;
        let n = central.dim();
        let g0 = unit(&central.x_derivative_at_one());
        let mut gens = vec![g0.clone()];
        let mut deviations = Vec::new();
        for &idx in deform_indices {
            for sign in [1.0, -1.0] {
                let mut q = params.clone();
                q[idx] += sign * eps;
                let disc = family.disc(&q)?;
                let g = unit(&disc.x_derivative_at_one());
                let proj = dot(&g, &g0);
                let dev: Vec<f64> = g.iter().zip(g0.iter()).map(|(a, b)| a - proj * b).collect();
                deviations.push(dev);
                gens.push(g);
            }
        }
        let margin = normalized_singular_value(&deviations, n - 1);
        if margin <= RANK_TOL {
            return Err(FamilyError::RankDeficient(margin));
        }
        base_points.push(central.x_at_one());
        generators.push(gens);
        openness.push(margin);
    }
    Ok(ConeField {
        base_points,
        generators,
        openness,
        filled: false,
    })
}

// ---------------------------------------------------------------------------
// property verification
// ---------------------------------------------------------------------------

/// One verified family property with its measured margin.
#[derive(Clone, Debug, serde::Serialize)]
pub struct PropertyCheck {
    pub name: String,
    pub pass: bool,
    pub margin: f64,
}

/// Aggregated pass/fail report for a disc family.
#[derive(Clone, Debug, serde::Serialize)]
pub struct PropertyReport {
    pub checks: Vec<PropertyCheck>,
}

impl PropertyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Geometric context against which a family with parameter layout
/// `[x (n), v (n)]` is verified.
#[derive(Clone)]
pub struct FamilyContext {
    pub n: usize,
    /// Leading direction of the family.
    pub v1: Vec<f64>,
    /// Expected attachment point of the central disc.
    pub base_point: Vec<f64>,
    /// Scale against which disc size is measured (`c²` for concentrated
    /// families, `c` for flat ones).
    pub size_scale: f64,
    /// Tolerance of the family's solver; attachment must be within ten times
    /// this value.
    pub solver_tol: f64,
    /// Supporting-hypersurface model for the side/wedge checks, if any.
    pub support: Option<SupportModel>,
    /// Ambient graph supplying the wedge floor functions, if any.
    pub ambient: Option<GenericGraph>,
    /// Coefficient of the strictly concave comparison graph.
    pub concavity_constant: f64,
    pub alpha: f64,
}

fn support_margin(
    disc: &AnalyticDisc,
    base: &[f64],
    gtilde: &dyn Fn(&[f64]) -> f64,
    min_theta: f64,
) -> f64 {
    let grid = disc.grid();
    let mut margin = f64::INFINITY;
    for j in 0..grid.len() {
        let theta = {
            let t = grid.theta(j);
            if t > PI {
                t - 2.0 * PI
            } else {
                t
            }
        };
        if theta.cos() < 0.0 || theta.abs() < min_theta {
            continue;
        }
        let xv = disc.boundary_x().value_at(j);
        let u: Vec<f64> = xv.iter().zip(base.iter()).map(|(a, b)| a - b).collect();
        margin = margin.min(u[0] - gtilde(&u[1..]));
    }
    margin
}

/// Check the family properties against the context: attachment-point
/// pinning, size and embedding bounds, half-attachment, the tangent
/// direction, rank of the centre and direction maps, and — when a support
/// model is supplied — one-sidedness of the upper boundary, of the
/// transversal slice, and interior containment in the half-wedge.
pub fn verify_family_properties(
    family: &DiscFamily,
    m1: &MaximallyRealGraph,
    ctx: &FamilyContext,
) -> PropertyReport {
    let n = ctx.n;
    let mut checks = Vec::new();
    let xmax = family.params[0].max_norm;
    let vmax = family.params[1].max_norm;
    let zeros = vec![0.0; 2 * n];
    let mut push = |name: &str, pass: bool, margin: f64| {
        checks.push(PropertyCheck {
            name: name.into(),
            pass,
            margin,
        });
    };
    let fail = f64::NEG_INFINITY;

    let central = family.disc(&zeros);
    let central = match central {
        Ok(d) => d,
        Err(_) => {
            push("center_pinning", false, fail);
            return PropertyReport { checks };
        }
    };

    // --- attachment-point pinning -----------------------------------------
    {
        let mut err: f64 = 0.0;
        let d0 = central.x_at_one();
        err = err.max(
            d0.iter()
                .zip(ctx.base_point.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
        // The attachment point must not move with the direction shift.
        let mut pv = zeros.clone();
        pv[n + 1] = 0.5 * vmax;
        if let Ok(d) = family.disc(&pv) {
            let dv = d.x_at_one();
            err = err.max(
                dv.iter()
                    .zip(ctx.base_point.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
            );
        } else {
            err = f64::INFINITY;
        }
        // And it must follow the centre shift exactly.
        let mut px = zeros.clone();
        px[0] = 0.5 * xmax;
        if let Ok(d) = family.disc(&px) {
            let dx = d.x_at_one();
            let mut expect = ctx.base_point.clone();
            expect[0] += 0.5 * xmax;
            err = err.max(
                dx.iter()
                    .zip(expect.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
            );
        } else {
            err = f64::INFINITY;
        }
        push("center_pinning", err < 1e-8, 1e-8 - err);
    }

    // --- size and embedding -----------------------------------------------
    let sample_params: Vec<Vec<f64>> = {
        let mut s = vec![zeros.clone()];
        let mut px = zeros.clone();
        px[0] = xmax;
        s.push(px);
        let mut pv = zeros.clone();
        let vhat = unit(&ctx.v1);
        for k in 0..n {
            pv[n + k] = vmax * vhat[k];
        }
        s.push(pv);
        s
    };
    {
        let mut lambda: f64 = 0.0;
        let mut ok = true;
        for p in &sample_params {
            match family.disc(p) {
                Ok(d) => {
                    let basep: Vec<f64> = ctx.base_point.clone();
                    let grid = d.grid();
                    for j in 0..grid.len() {
                        let xv = d.boundary_x().value_at(j);
                        let yv = d.boundary_y().value_at(j);
                        let mut dist2 = 0.0;
                        for k in 0..n {
                            dist2 += (xv[k] - basep[k]) * (xv[k] - basep[k]) + yv[k] * yv[k];
                        }
                        lambda = lambda.max(dist2.sqrt() / ctx.size_scale);
                    }
                }
                Err(_) => ok = false,
            }
        }
        push(
            "size_bound",
            ok && lambda.is_finite() && lambda < 1e6,
            lambda,
        );
    }
    {
        // Sampled bi-Lipschitz ratio of the central boundary embedding.
        let grid = central.grid();
        let ng = grid.len();
        let stride = (ng / 64).max(1);
        let mut cmin = f64::INFINITY;
        let mut cmax: f64 = 0.0;
        let nodes: Vec<usize> = (0..ng).step_by(stride).collect();
        for (ai, &a) in nodes.iter().enumerate() {
            for &b in nodes.iter().skip(ai + 1) {
                let za = grid.zeta(a);
                let zb = grid.zeta(b);
                let denom = (za - zb).norm();
                if denom < 1e-12 {
                    continue;
                }
                let xa = central.boundary_x().value_at(a);
                let ya = central.boundary_y().value_at(a);
                let xb = central.boundary_x().value_at(b);
                let yb = central.boundary_y().value_at(b);
                let mut d2 = 0.0;
                for k in 0..n {
                    d2 += (xa[k] - xb[k]) * (xa[k] - xb[k]) + (ya[k] - yb[k]) * (ya[k] - yb[k]);
                }
                let ratio = d2.sqrt() / denom;
                cmin = cmin.min(ratio);
                cmax = cmax.max(ratio);
            }
        }
        let margin = if cmax > 0.0 { cmin / cmax } else { 0.0 };
        push("bilipschitz", margin > 0.0 && margin.is_finite(), margin);
    }

    // --- half-attachment ---------------------------------------------------
    {
        let mut worst: f64 = 0.0;
        for p in &sample_params {
            if let Ok(d) = family.disc(p) {
                let grid = d.grid();
                for j in 0..grid.len() {
                    if grid.theta(j).cos() < 0.0 {
                        continue;
                    }
                    let xv = d.boundary_x().value_at(j);
                    let yv = d.boundary_y().value_at(j);
                    let hv = m1.h_at(&xv);
                    for k in 0..n {
                        worst = worst.max((yv[k] - hv[k]).abs());
                    }
                }
            } else {
                worst = f64::INFINITY;
            }
        }
        let bound = 10.0 * ctx.solver_tol;
        push("half_attachment", worst < bound, bound - worst);
    }

    // --- tangent direction --------------------------------------------------
    {
        let d = central.x_derivative_at_one();
        let dn = vec_norm(&d);
        let cosine = if dn > 0.0 {
            dot(&d, &ctx.v1) / (dn * vec_norm(&ctx.v1))
        } else {
            -1.0
        };
        let margin = cosine - (1.0 - 1e-6);
        push("tangent_multiple", margin > 0.0 && dn > 0.0, margin);
    }

    // --- rank of the centre map ---------------------------------------------
    {
        let delta = 0.25 * xmax;
        let mut cols = Vec::new();
        let mut ok = true;
        for k in 0..n {
            let mut pp = zeros.clone();
            let mut pm = zeros.clone();
            pp[k] = delta;
            pm[k] = -delta;
            match (family.disc(&pp), family.disc(&pm)) {
                (Ok(dp), Ok(dm)) => {
                    let a = dp.x_at_one();
                    let b = dm.x_at_one();
                    cols.push(
                        a.iter()
                            .zip(b.iter())
                            .map(|(x, y)| (x - y) / (2.0 * delta))
                            .collect(),
                    );
                }
                _ => ok = false,
            }
        }
        let sv = if ok {
            normalized_singular_value(&cols, n)
        } else {
            0.0
        };
        push("center_rank", sv > RANK_TOL, sv - RANK_TOL);
    }

    // --- openness of the direction cone -------------------------------------
    {
        let delta = 0.25 * vmax;
        let g0 = unit(&central.x_derivative_at_one());
        let mut devs = Vec::new();
        let mut ok = true;
        for k in 0..n {
            for sign in [1.0, -1.0] {
                let mut p = zeros.clone();
                p[n + k] = sign * delta;
                match family.disc(&p) {
                    Ok(d) => {
                        let g = unit(&d.x_derivative_at_one());
                        let proj = dot(&g, &g0);
                        devs.push(g.iter().zip(g0.iter()).map(|(a, b)| a - proj * b).collect());
                    }
                    _ => ok = false,
                }
            }
        }
        let sv = if ok {
            normalized_singular_value(&devs, n - 1)
        } else {
            0.0
        };
        push("direction_cone", sv > RANK_TOL, sv - RANK_TOL);
    }

    // --- support-side and wedge checks ---------------------------------------
    if let Some(support) = &ctx.support {
        let gtilde = support.concave_comparison(ctx.concavity_constant, ctx.alpha);
        let min_theta = PI / 128.0;
        {
            let margin = support_margin(&central, &ctx.base_point, &*gtilde, min_theta);
            push("boundary_support_side", margin > 0.0, margin);
        }
        {
            let mut margin = f64::INFINITY;
            let mut ok = true;
            for frac in [0.25, 0.5, 0.75, 1.0] {
                let mut p = zeros.clone();
                p[0] = frac * xmax;
                match family.disc(&p) {
                    Ok(d) => {
                        margin = margin.min(support_margin(&d, &ctx.base_point, &*gtilde, 0.0));
                    }
                    Err(_) => ok = false,
                }
            }
            push("transversal_support_side", ok && margin > 0.0, margin);
        }
        {
            // Interior containment in the half-wedge: the weighted conjugate
            // sum stays above the wall and every trailing conjugate
            // component stays above its floor.
            let floor = ctx.ambient.clone();
            let mut margin = f64::INFINITY;
            let mut points: Vec<Complex64> = Vec::new();
            for rho in [0.0, 0.3, 0.6, 0.9, 0.99] {
                for j in 0..64 {
                    let th = 2.0 * PI * j as f64 / 64.0;
                    points.push(Complex64::new(rho * th.cos(), rho * th.sin()));
                    if rho == 0.0 {
                        break;
                    }
                }
            }
            // Left half-boundary nodes, excluding a small collar around the
            // corners ±π/2 where the containment gap falls below the
            // spectral resolution of the composed evaluation.
            let grid = central.grid();
            for j in 0..grid.len() {
                if grid.theta(j).cos() < -(PI / 32.0).sin() {
                    points.push(grid.zeta(j));
                }
            }
            for zeta in points {
                let z = central.eval(zeta);
                let x: Vec<f64> = z.iter().map(|w| w.re).collect();
                let y: Vec<f64> = z.iter().map(|w| w.im).collect();
                let xrel: Vec<f64> = x
                    .iter()
                    .zip(ctx.base_point.iter())
                    .map(|(a, b)| a - b)
                    .collect();
                let mut weighted = y[0];
                for k in 1..n {
                    weighted += support.a[k - 1] * y[k];
                }
                let wall = (support.psi)(&xrel, &y[1..]);
                margin = margin.min(weighted - wall);
                if let Some(g) = &floor {
                    let fl = g.phi_at(&xrel, y[0]);
                    for k in 1..n {
                        margin = margin.min(y[k] - fl[k - 1]);
                    }
                } else {
                    for k in 1..n {
                        margin = margin.min(y[k]);
                    }
                }
            }
            push("interior_half_wedge", margin > 0.0, margin);
        }
    }

    PropertyReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(c: f64) -> SolverConfig {
        SolverConfig {
            c,
            alpha: 0.5,
            rho1: 1.0,
            tol: 1e-13,
            max_iter: 300,
        }
    }

    /// A maximally real graph with vanishing 2-jet at the origin.
    fn cubic_m1() -> MaximallyRealGraph {
        MaximallyRealGraph {
            n: 3,
            h: Arc::new(|x: &[f64]| {
                vec![
                    0.3 * x[1].powi(3) + 0.2 * x[1] * x[2] * x[2],
                    0.25 * x[0].powi(3) - 0.1 * x[0] * x[2] * x[2],
                    0.15 * x[0] * x[0] * x[1] + 0.2 * x[2].powi(3),
                ]
            }),
            rho1: 1.0,
            normalization_order: 2,
        }
    }

    #[test]
    fn psi_three_point_normalization() {
        let psi = shared_psi(512).unwrap();
        let at = |j: usize| psi.boundary_value(j);
        let n = psi.grid().len();
        assert!(at(0).norm() < 1e-8, "Ψ(1) = {}", at(0));
        assert!((at(n / 4) - 1.0).norm() < 1e-8, "Ψ(i) = {}", at(n / 4));
        assert!(
            (at(3 * n / 4) + 1.0).norm() < 1e-8,
            "Ψ(−i) = {}",
            at(3 * n / 4)
        );
        assert!(psi.c1 > 0.0);
        assert!(psi.c2.is_finite());
    }

    #[test]
    fn psi_real_and_monotone_on_right_half_circle() {
        let psi = shared_psi(512).unwrap();
        let grid = psi.grid();
        for j in 0..grid.len() {
            if grid.theta(j).cos() < 0.0 {
                continue;
            }
            let v = psi.boundary.value_at(j);
            assert!(v[1].abs() < 1e-10, "Im Ψ = {} at node {j}", v[1]);
            let d = psi.derivative.value_at(j);
            assert!(d[0] > 0.0, "dΨ/dθ = {} at node {j}", d[0]);
            assert!(v[0].abs() <= 1.0 + 1e-8);
        }
    }

    #[test]
    fn psi_maps_interior_to_upper_half_plane() {
        let psi = shared_psi(512).unwrap();
        assert!(
            psi.holomorphy_defect < 1e-8,
            "defect {}",
            psi.holomorphy_defect
        );
        for rho in [0.0, 0.25, 0.5, 0.8, 0.95] {
            for j in 0..32 {
                let th = 2.0 * PI * j as f64 / 32.0;
                let z = Complex64::new(rho * th.cos(), rho * th.sin());
                let w = psi.eval(z);
                assert!(w.im > 0.0, "Ψ({z}) = {w}");
                if rho == 0.0 {
                    break;
                }
            }
        }
    }

    #[test]
    fn phi_c_fixes_one_and_concentrates() {
        let psi = shared_psi(512).unwrap();
        let c = 0.05;
        let phi = phi_c(&psi, c);
        assert!((phi(Complex64::new(1.0, 0.0)) - 1.0).norm() < 1e-8);
        // The closed disc minus the right half-circle lands within 8c of 1,
        // strictly inside the closed disc.
        let mut worst: f64 = 0.0;
        for rho in [0.0, 0.4, 0.8, 0.999, 1.0] {
            for j in 0..128 {
                let th = 2.0 * PI * j as f64 / 128.0;
                if rho == 1.0 && th.cos() >= 0.0 {
                    continue;
                }
                let z = Complex64::new(rho * th.cos(), rho * th.sin());
                let w = phi(z);
                // The power-series evaluation resolves the boundary to the
                // coefficient tail, so allow that much modulus overshoot.
                assert!(w.norm() <= 1.0 + 2e-6, "|Φ_c| = {}", w.norm());
                worst = worst.max((w - 1.0).norm());
                if rho == 0.0 {
                    break;
                }
            }
        }
        assert!(worst < 8.0 * c, "sup |Φ_c − 1| = {worst}");
        // As c shrinks the map degenerates to the constant 1.
        let tiny = phi_c(&psi, 1e-4);
        assert!((tiny(Complex64::new(-0.3, 0.2)) - 1.0).norm() < 8.0 * 1e-4);
    }

    #[test]
    fn flat_family_pins_center_and_stays_in_a_complex_line() {
        let psi = shared_psi(512).unwrap();
        let c = 0.05;
        let x = [0.01, -0.02, 0.005];
        let v = [0.5, -1.0, 0.25];
        let disc = flat_family(c, &x, &v, &psi).unwrap();
        let z1 = disc.value_at_one();
        for k in 0..3 {
            assert!((z1[k] - x[k]).norm() < 1e-10);
        }
        // Image within the complex line x + C·v: cross products vanish.
        for rho in [0.3, 0.9] {
            let z = disc.eval(Complex64::new(rho * 0.6, rho * 0.4));
            for a in 0..3 {
                for b in (a + 1)..3 {
                    let cross = (z[a] - x[a]) * v[b] - (z[b] - x[b]) * v[a];
                    assert!(cross.norm() < 1e-10, "cross = {cross}");
                }
            }
        }
        // Zero direction gives the constant disc.
        let constant = flat_family(c, &x, &[0.0; 3], &psi).unwrap();
        assert!(constant.sup_abs() <= vec_norm(&x) + 1e-12);
        // Out-of-range centres are rejected.
        assert!(flat_family(c, &[2.0 * c, 0.0, 0.0], &v, &psi).is_err());
    }

    #[test]
    fn tangent_adjustment_vanishes_on_the_flat_model() {
        let psi = shared_psi(512).unwrap();
        let m1 = MaximallyRealGraph::flat(3, 1.0);
        let vc = adjust_tangent(&m1, &psi, &[0.0; 3], &[0.0, 1.0, 1.0], 0.05, &cfg(0.05)).unwrap();
        assert!(vec_norm(&vc) < 1e-10, "v(c) = {vc:?}");
    }

    #[test]
    fn half_attached_over_flat_graph_reduces_to_the_flat_family() {
        let psi = shared_psi(512).unwrap();
        let m1 = MaximallyRealGraph::flat(3, 1.0);
        let c = 0.05;
        let v1 = [0.0, 1.0, 1.0];
        let family = half_attached_family(&m1, &[0.0; 3], &v1, c, &psi, &cfg(c)).unwrap();
        assert!(vec_norm(family.tangent_adjustment.as_ref().unwrap()) < 1e-10);
        let x = [c * c / 2.0, 0.0, -c * c / 2.0];
        let v = [0.0, c / 2.0, 0.0];
        let mut p = x.to_vec();
        p.extend_from_slice(&v);
        let disc = family.disc(&p).unwrap();
        // Reference: the explicit flat disc composed with the same self-map.
        let w: Vec<f64> = v1.iter().zip(v.iter()).map(|(a, b)| a + b).collect();
        let i = Complex64::new(0.0, 1.0);
        let grid = disc.grid();
        let mut worst: f64 = 0.0;
        for j in 0..grid.len() {
            let bv = psi.boundary_value(j);
            let zeta = (i - c * bv) / (i + c * bv);
            let pv = psi.eval(zeta);
            let xv = disc.boundary_x().value_at(j);
            let yv = disc.boundary_y().value_at(j);
            for k in 0..3 {
                let reference = Complex64::new(x[k], 0.0) + c * w[k] * pv;
                worst = worst.max((Complex64::new(xv[k], yv[k]) - reference).norm());
            }
        }
        assert!(worst < 1e-9, "sup deviation from the flat model = {worst}");
    }

    #[test]
    fn tangent_correction_scales_superlinearly_in_c() {
        let psi = shared_psi(512).unwrap();
        let m1 = cubic_m1();
        let v1 = [0.0, 1.0, 1.0];
        let cs = [0.02, 0.04, 0.08];
        let mut norms = Vec::new();
        for &c in &cs {
            let vc = adjust_tangent(&m1, &psi, &[0.0; 3], &v1, c, &cfg(c)).unwrap();
            norms.push(vec_norm(&vc));
        }
        assert!(norms.iter().all(|n| *n > 0.0));
        let slope = (norms[2] / norms[0]).ln() / (cs[2] / cs[0]).ln();
        assert!(
            slope > 1.4 && slope < 4.5,
            "|v(c)| = {norms:?}, slope = {slope}"
        );
        // Adjacent corrections vary continuously: one octave in c moves the
        // norm by a bounded factor.
        assert!(norms[1] < 20.0 * norms[0] + 1e-12);
    }

    #[test]
    fn half_attached_center_map_has_full_rank() {
        let psi = shared_psi(512).unwrap();
        let m1 = cubic_m1();
        let c = 0.02;
        let family =
            half_attached_family(&m1, &[0.0; 3], &[0.0, 1.0, 1.0], c, &psi, &cfg(c)).unwrap();
        let delta = 0.25 * c * c;
        let mut cols = Vec::new();
        for k in 0..3 {
            let mut pp = vec![0.0; 6];
            let mut pm = vec![0.0; 6];
            pp[k] = delta;
            pm[k] = -delta;
            let a = family.disc(&pp).unwrap().x_at_one();
            let b = family.disc(&pm).unwrap().x_at_one();
            cols.push(
                a.iter()
                    .zip(b.iter())
                    .map(|(x, y)| (x - y) / (2.0 * delta))
                    .collect::<Vec<f64>>(),
            );
        }
        let sv = normalized_singular_value(&cols, 3);
        assert!(sv > 0.5, "normalized smallest singular value {sv}");
    }

    #[test]
    fn half_attached_boundary_tangent_is_a_positive_multiple() {
        let psi = shared_psi(512).unwrap();
        let m1 = cubic_m1();
        let c = 0.02;
        let v1 = [0.0, 1.0, 1.0];
        let family = half_attached_family(&m1, &[0.0; 3], &v1, c, &psi, &cfg(c)).unwrap();
        let d = family.disc(&vec![0.0; 6]).unwrap().x_derivative_at_one();
        let dn = vec_norm(&d);
        let cosine = dot(&d, &v1) / (dn * vec_norm(&v1));
        assert!(cosine > 1.0 - 1e-6, "cosine = {cosine}");
        // The multiple matches the chain-rule prediction 2c²C₁² |v1|.
        let predicted = 2.0 * c * c * psi.c1 * psi.c1 * vec_norm(&v1);
        assert!(
            (dn - predicted).abs() < 0.1 * predicted,
            "|∂_θA(1)| = {dn}, predicted {predicted}"
        );
    }

    /// Ambient graph and compatible maximally real graph for pivot tests.
    fn pivot_model() -> (GenericGraph, MaximallyRealGraph) {
        let phi = |x: &[f64], y1: f64| {
            vec![
                0.1 * (x[0] * x[0] - y1 * x[1]),
                0.05 * x[0] * x[2] + 0.08 * y1 * y1,
            ]
        };
        let h1 = |x: &[f64]| 0.1 * x[0] * x[0] + 0.05 * x[1] * x[2];
        let m = GenericGraph {
            n: 3,
            crdim: 1,
            phi: Arc::new(phi),
            rho1: 1.0,
            normalized: true,
        };
        let m1 = MaximallyRealGraph {
            n: 3,
            h: Arc::new(move |x: &[f64]| {
                let first = h1(x);
                let rest = phi(x, first);
                vec![first, rest[0], rest[1]]
            }),
            rho1: 1.0,
            normalization_order: 1,
        };
        (m, m1)
    }

    #[test]
    fn pivot_family_degenerates_to_a_point_at_zero_radius() {
        let (m, m1) = pivot_model();
        let family = attached_pivot_family(
            &m,
            &m1,
            &[0.0; 3],
            0.05,
            CircleGrid::default512(),
            &cfg(0.05),
        )
        .unwrap();
        let disc = family.disc(&vec![0.0; 7]).unwrap();
        assert!(disc.sup_abs() < 1e-12, "sup |Z| = {}", disc.sup_abs());
    }

    #[test]
    fn pivot_family_attachment_point_and_tangency() {
        let (m, m1) = pivot_model();
        let r_max = 0.05;
        let family = attached_pivot_family(
            &m,
            &m1,
            &[0.0; 3],
            r_max,
            CircleGrid::default512(),
            &cfg(r_max),
        )
        .unwrap();
        let r = 0.03;
        let chi = [0.02, -0.01, 0.015];
        let nu = 0.01;
        let p = vec![r, 0.01, -0.02, chi[0], chi[1], chi[2], nu];
        let disc = family.disc(&p).unwrap();
        // The value at ζ = 1 is the prescribed attachment point.
        let z1 = disc.value_at_one();
        let h1 = m1.h_at(&chi)[0];
        let yp = m.phi_at(&chi, h1 + nu);
        let expected = [
            Complex64::new(chi[0], h1 + nu),
            Complex64::new(chi[1], yp[0]),
            Complex64::new(chi[2], yp[1]),
        ];
        for k in 0..3 {
            assert!(
                (z1[k] - expected[k]).norm() < 1e-10,
                "Z(1)[{k}] = {}, expected {}",
                z1[k],
                expected[k]
            );
        }
        // The boundary speed of the first component at the attachment point
        // is the pivot radius, and the conjugate speed encodes the solved
        // pivot slope, which satisfies the tangency equation.
        let dx = disc.x_derivative_at_one();
        assert!((dx[0] - r).abs() < 1e-10, "∂_θX₁(1) = {}", dx[0]);
        let dy1 = disc.boundary_y().derivative_theta().at_one()[0];
        let tau = dy1 / r;
        let fd = 1e-6;
        let mut rhs = 0.0;
        for k in 0..3 {
            let mut xp = chi.to_vec();
            let mut xm = chi.to_vec();
            xp[k] += fd;
            xm[k] -= fd;
            let dh = (m1.h_at(&xp)[0] - m1.h_at(&xm)[0]) / (2.0 * fd);
            rhs += dh * dx[k];
        }
        assert!(
            (r * tau - rhs).abs() < 1e-9,
            "tangency residual {}",
            (r * tau - rhs).abs()
        );
    }

    #[test]
    fn pivot_family_boundary_stays_on_the_positive_side() {
        let (m, m1) = pivot_model();
        let r_max = 0.05;
        let grid = CircleGrid::default512();
        let family = attached_pivot_family(&m, &m1, &[0.0; 3], r_max, grid, &cfg(r_max)).unwrap();
        // Undeformed disc: the boundary minus the attachment point lies
        // strictly above the graph of the first component.
        let disc = family
            .disc(&vec![r_max, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
            .unwrap();
        let mut min_gap = f64::INFINITY;
        for j in 1..grid.len() {
            let xv = disc.boundary_x().value_at(j);
            let y1 = disc.boundary_y().value_at(j)[0];
            min_gap = min_gap.min(y1 - m1.h_at(&xv)[0]);
        }
        assert!(min_gap > 0.0, "minimal gap {min_gap}");
        // A positive normal offset pushes the whole boundary off the graph.
        let nu = 0.01;
        let pushed = family
            .disc(&vec![r_max, 0.0, 0.0, 0.0, 0.0, 0.0, nu])
            .unwrap();
        let mut min_all = f64::INFINITY;
        for j in 0..grid.len() {
            let xv = pushed.boundary_x().value_at(j);
            let y1 = pushed.boundary_y().value_at(j)[0];
            min_all = min_all.min(y1 - m1.h_at(&xv)[0]);
        }
        assert!(min_all > 0.5 * nu, "offset gap {min_all}");
    }

    #[test]
    fn pivot_normal_deformations_have_full_transverse_rank() {
        let (m, m1) = pivot_model();
        let r_max = 0.05;
        let family = attached_pivot_family(
            &m,
            &m1,
            &[0.0; 3],
            r_max,
            CircleGrid::default512(),
            &cfg(r_max),
        )
        .unwrap();
        let delta = 0.005;
        let mut cols = Vec::new();
        for k in 0..2 {
            let mut pp = vec![0.03, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
            let mut pm = pp.clone();
            pp[1 + k] = delta;
            pm[1 + k] = -delta;
            let a = family.disc(&pp).unwrap().x_derivative_at_one();
            let b = family.disc(&pm).unwrap().x_derivative_at_one();
            cols.push(
                a[1..]
                    .iter()
                    .zip(b[1..].iter())
                    .map(|(x, y)| (x - y) / (2.0 * delta))
                    .collect::<Vec<f64>>(),
            );
        }
        let sv = normalized_singular_value(&cols, 2);
        assert!(sv > RANK_TOL, "normalized singular value {sv}");
    }

    #[test]
    fn cone_field_of_the_flat_family_is_open_and_fillable() {
        let psi = shared_psi(512).unwrap();
        let m1 = MaximallyRealGraph::flat(3, 1.0);
        let c = 0.05;
        let v1 = [0.0, 1.0, 1.0];
        let family = half_attached_family(&m1, &[0.0; 3], &v1, c, &psi, &cfg(c)).unwrap();
        let mut cone =
            cone_field_from_family(&family, &[vec![0.0; 6]], &[3, 4, 5], 0.25 * c).unwrap();
        assert!(cone.openness[0] > RANK_TOL);
        assert!(cone.contains_direction(0, &v1, 1e-6));
        assert!(!cone.filled);
        let gens_before = cone.generators[0].len();
        let characteristic = vec![vec![1.0, 0.0, 0.0]];
        cone.fill(&characteristic, &[0.0, 0.5, 0.999]);
        assert!(cone.filled);
        assert!(cone.generators[0].len() > gens_before);
        // λ → 1 blends generators toward the prescribed field.
        assert!(cone.contains_direction(0, &[1.0, 0.0, 0.0], 1e-2));
        // λ = 0 keeps the original generators.
        assert!(cone.contains_direction(0, &v1, 1e-6));
    }

    #[test]
    fn flat_family_passes_all_generic_properties() {
        let psi = shared_psi(512).unwrap();
        let m1 = MaximallyRealGraph::flat(3, 1.0);
        let c = 0.05;
        let v1 = vec![0.0, 1.0, 1.0];
        let family = half_attached_family(&m1, &[0.0; 3], &v1, c, &psi, &cfg(c)).unwrap();
        let ctx = FamilyContext {
            n: 3,
            v1,
            base_point: vec![0.0; 3],
            size_scale: c * c,
            solver_tol: 1e-10,
            support: None,
            ambient: None,
            concavity_constant: 1.0,
            alpha: 0.5,
        };
        let report = verify_family_properties(&family, &m1, &ctx);
        for check in &report.checks {
            assert!(
                check.pass,
                "{} failed with margin {}",
                check.name, check.margin
            );
        }
    }

    #[test]
    fn normalized_model_passes_support_and_wedge_checks() {
        let psi = shared_psi(512).unwrap();
        let m1 = cubic_m1();
        let c = 0.02;
        let v1 = vec![0.0, 1.0, 1.0];
        let family = half_attached_family(&m1, &[0.0; 3], &v1, c, &psi, &cfg(c)).unwrap();
        let ctx = FamilyContext {
            n: 3,
            v1,
            base_point: vec![0.0; 3],
            size_scale: c * c,
            solver_tol: 1e-10,
            support: Some(SupportModel::quadric(3)),
            ambient: Some(GenericGraph::flat(3, 1.0)),
            concavity_constant: 1.0,
            alpha: 0.5,
        };
        let report = verify_family_properties(&family, &m1, &ctx);
        for check in &report.checks {
            assert!(
                check.pass && check.margin > 0.0 || check.name == "size_bound" && check.pass,
                "{} failed with margin {}",
                check.name,
                check.margin
            );
        }
    }

    #[test]
    fn direction_outside_the_cone_breaks_the_wedge_containment() {
        let psi = shared_psi(512).unwrap();
        let m1 = cubic_m1();
        let c = 0.02;
        let v1 = vec![0.0, -1.0, -1.0];
        let family = half_attached_family(&m1, &[0.0; 3], &v1, c, &psi, &cfg(c)).unwrap();
        let ctx = FamilyContext {
            n: 3,
            v1,
            base_point: vec![0.0; 3],
            size_scale: c * c,
            solver_tol: 1e-10,
            support: Some(SupportModel::quadric(3)),
            ambient: Some(GenericGraph::flat(3, 1.0)),
            concavity_constant: 1.0,
            alpha: 0.5,
        };
        let report = verify_family_properties(&family, &m1, &ctx);
        let wedge = report.get("interior_half_wedge").unwrap();
        assert!(!wedge.pass && wedge.margin < 0.0, "margin {}", wedge.margin);
    }

    #[test]
    fn csv_export_is_deterministic() {
        let psi = shared_psi(512).unwrap();
        let m1 = MaximallyRealGraph::flat(2, 1.0);
        let c = 0.05;
        let family = half_attached_family(&m1, &[0.0; 2], &[1.0, 0.0], c, &psi, &cfg(c)).unwrap();
        let samples = vec![vec![0.0; 4], vec![c * c, 0.0, 0.0, c / 2.0]];
        let mut first = Vec::new();
        family.write_csv(&samples, &mut first).unwrap();
        let mut second = Vec::new();
        family.write_csv(&samples, &mut second).unwrap();
        assert_eq!(first, second);
        let text = String::from_utf8(first).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "x_1,x_2,v_1,v_2,theta,re_z1,im_z1,re_z2,im_z2"
        );
        assert_eq!(text.lines().count(), 1 + 2 * 512);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn flat_family_always_pins_its_center(
            x0 in -0.02f64..0.02,
            x1 in -0.02f64..0.02,
            v0 in -1.0f64..1.0,
            v1 in -1.0f64..1.0,
        ) {
            let psi = shared_psi(512).unwrap();
            let c = 0.05;
            let disc = flat_family(c, &[x0, x1], &[v0, v1], &psi).unwrap();
            let z1 = disc.value_at_one();
            prop_assert!((z1[0] - x0).norm() < 1e-10);
            prop_assert!((z1[1] - x1).norm() < 1e-10);
            // Right half-boundary stays real.
            let grid = disc.grid();
            for j in 0..grid.len() {
                if grid.theta(j).cos() >= 0.0 {
                    let yv = disc.boundary_y().value_at(j);
                    prop_assert!(yv[0].abs() < 1e-10 && yv[1].abs() < 1e-10);
                }
            }
        }
    }
}
