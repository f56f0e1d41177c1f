//! Holomorphic-extension experiments at desk scale: certified coverage of
//! envelope points by the continuity principle along analytic-disc
//! isotopies, and CR approximation by Gauss-kernel convolution with its
//! truncated polynomial series.
//!
//! The coverage harness follows the classical scheme: if a one-parameter
//! family of embedded analytic discs keeps its boundaries inside a domain,
//! every disc is surrounded by a polydisc neighborhood of radius
//! `σ_τ = ρ_τ·c_τ / (2·C_τ)` to which holomorphic functions extend, where
//! `ρ_τ` is the boundary clearance and `c_τ ≤ C_τ` are the bi-Lipschitz
//! constants of the disc.  The harness measures these constants by
//! sampling, applies an extra safety factor to the measured values, and
//! emits the certified points with full provenance.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::circle_ops::CircleFn;
use crate::disc_families::{AnalyticDisc, FamilyError};

/// Errors raised by the coverage harness and the Gauss quadrature.
#[derive(Debug, Error)]
pub enum ExtensionError {
    #[error("disc boundary leaves the domain at parameter {tau:.4}")]
    BoundaryEscape { tau: f64 },
    #[error("disc at parameter {tau:.4} is degenerate (lower Lipschitz constant {c:.3e})")]
    DegenerateDisc { tau: f64, c: f64 },
    #[error(
        "isotopy jump {jump:.3e} between parameters {tau:.4} and the next sample exceeds the \
         continuity bound {bound:.3e}"
    )]
    IsotopyDiscontinuous { tau: f64, jump: f64, bound: f64 },
    #[error("quadrature grid would need {nodes} nodes (cap {cap}); grid too coarse for this τ")]
    QuadratureTooFine { nodes: usize, cap: usize },
    #[error(transparent)]
    Family(#[from] FamilyError),
}

// ---------------------------------------------------------------------------
// ambient domains
// ---------------------------------------------------------------------------

/// An ambient domain in C^n: a (closed) membership predicate plus a
/// boundary-distance oracle.  The oracle must never overestimate the
/// distance from an interior point to the boundary, so that every certified
/// radius is sound; outside the domain it returns `0`.
pub trait Domain: Send + Sync {
    fn dim(&self) -> usize;
    /// Closed containment: boundary points count as inside (a disc touching
    /// the boundary gets clearance zero, not an escape).
    fn contains(&self, z: &[Complex64]) -> bool;
    fn boundary_distance(&self, z: &[Complex64]) -> f64;
}

/// All of C^n; the boundary clearance is capped at a large finite value.
pub struct FullSpace {
    pub n: usize,
}

/// Clearance cap used for boundaryless domains.
pub const CLEARANCE_CAP: f64 = 1.0e3;

impl Domain for FullSpace {
    fn dim(&self) -> usize {
        self.n
    }
    fn contains(&self, _z: &[Complex64]) -> bool {
        true
    }
    fn boundary_distance(&self, _z: &[Complex64]) -> f64 {
        CLEARANCE_CAP
    }
}

/// The Euclidean ball of radius `radius` about `center`; the oracle
/// returns the radial gap `R − |z − center|`.
pub struct Ball {
    pub center: Vec<Complex64>,
    pub radius: f64,
}

impl Domain for Ball {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn contains(&self, z: &[Complex64]) -> bool {
        euclid(z, &self.center) <= self.radius + 1e-14
    }
    fn boundary_distance(&self, z: &[Complex64]) -> f64 {
        (self.radius - euclid(z, &self.center)).max(0.0)
    }
}

/// The classical two-piece figure in C²: the union of
/// `{|z₁| < 1, 1/2 < |z₂| < 1}` and `{|z₁| < 1/2, |z₂| < 1}`.  Every
/// function holomorphic here extends to the full bidisc, which the
/// coverage harness reproduces with a shrinking-disc isotopy.  The oracle
/// returns the larger of the two per-piece coordinate slacks; each piece
/// is a product region, so its slack is exact, and the maximum is a sound
/// lower bound for the distance to the complement of the union.
pub struct TwoPieceFigure;

impl Domain for TwoPieceFigure {
    fn dim(&self) -> usize {
        2
    }
    fn contains(&self, z: &[Complex64]) -> bool {
        self.boundary_distance(z) > 0.0
            || (z[0].norm() <= 1.0 && 0.5 <= z[1].norm() && z[1].norm() <= 1.0)
            || (z[0].norm() <= 0.5 && z[1].norm() <= 1.0)
    }
    fn boundary_distance(&self, z: &[Complex64]) -> f64 {
        let (a1, a2) = (z[0].norm(), z[1].norm());
        let piece_a = (1.0 - a1).min(a2 - 0.5).min(1.0 - a2);
        let piece_b = (0.5 - a1).min(1.0 - a2);
        piece_a.max(piece_b).max(0.0)
    }
}

fn euclid(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Coordinatewise (polydisc) distance between two points of C^n.
fn polydisc_dist(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0_f64, f64::max)
}

// ---------------------------------------------------------------------------
// disc isotopies
// ---------------------------------------------------------------------------

/// A sampled one-parameter family of analytic discs `τ ↦ A_τ` inside an
/// ambient domain, with `τ` running over a uniform grid on `[0, 1]`.
/// Construction verifies sampled continuity in `τ` and a nondegeneracy
/// floor for each disc.
pub struct DiscIsotopy {
    discs: Vec<AnalyticDisc>,
    pub domain: Arc<dyn Domain>,
}

/// Lower floor for the sampled bi-Lipschitz constant of an embedded disc.
pub const EMBEDDING_FLOOR: f64 = 1e-8;

impl DiscIsotopy {
    /// Wrap a sampled family.  `continuity_bound` limits the sup-distance
    /// of adjacent boundary data per unit `τ`.
    pub fn new(
        discs: Vec<AnalyticDisc>,
        domain: Arc<dyn Domain>,
        continuity_bound: f64,
    ) -> Result<Self, ExtensionError> {
        assert!(discs.len() >= 2, "an isotopy needs at least two samples");
        let m = discs.len();
        let dtau = 1.0 / (m - 1) as f64;
        for (k, pair) in discs.windows(2).enumerate() {
            let jump = pair[0]
                .boundary_x()
                .sup_distance(pair[1].boundary_x())
                .map_err(FamilyError::from)?
                .max(
                    pair[0]
                        .boundary_y()
                        .sup_distance(pair[1].boundary_y())
                        .map_err(FamilyError::from)?,
                );
            if jump > continuity_bound * dtau {
                return Err(ExtensionError::IsotopyDiscontinuous {
                    tau: k as f64 * dtau,
                    jump,
                    bound: continuity_bound * dtau,
                });
            }
        }
        for (k, disc) in discs.iter().enumerate() {
            let (c, _) = embedding_constants(disc, 512);
            if c < EMBEDDING_FLOOR {
                return Err(ExtensionError::DegenerateDisc {
                    tau: k as f64 * dtau,
                    c,
                });
            }
        }
        Ok(Self { discs, domain })
    }

    /// Build from a closure sampled at `m` parameter values.
    pub fn from_fn(
        m: usize,
        f: impl Fn(f64) -> Result<AnalyticDisc, FamilyError>,
        domain: Arc<dyn Domain>,
        continuity_bound: f64,
    ) -> Result<Self, ExtensionError> {
        let discs = (0..m)
            .map(|k| f(k as f64 / (m - 1) as f64))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(discs, domain, continuity_bound)
    }

    pub fn len(&self) -> usize {
        self.discs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tau(&self, index: usize) -> f64 {
        index as f64 / (self.discs.len() - 1) as f64
    }

    pub fn disc(&self, index: usize) -> &AnalyticDisc {
        &self.discs[index]
    }
}

/// Boundary point of a disc as a vector in C^n, read from the sample
/// tables.
fn boundary_point(disc: &AnalyticDisc, j: usize) -> Vec<Complex64> {
    let x = disc.boundary_x().value_at(j);
    let y = disc.boundary_y().value_at(j);
    x.into_iter()
        .zip(y)
        .map(|(a, b)| Complex64::new(a, b))
        .collect()
}

/// Sampled bi-Lipschitz constants `(c, C)` of a disc: difference-quotient
/// ratios over all adjacent boundary-grid pairs plus `pairs` random pairs
/// in the closed disc.
pub fn embedding_constants(disc: &AnalyticDisc, pairs: usize) -> (f64, f64) {
    let n = disc.grid().len();
    let mut cmin = f64::INFINITY;
    let mut cmax = 0.0_f64;
    let mut push = |z1: &[Complex64], z2: &[Complex64], zeta1: Complex64, zeta2: Complex64| {
        let dz = (zeta1 - zeta2).norm();
        if dz < 1e-9 {
            return;
        }
        let ratio = euclid(z1, z2) / dz;
        cmin = cmin.min(ratio);
        cmax = cmax.max(ratio);
    };
    for j in 0..n {
        let k = (j + 1) % n;
        let z1 = boundary_point(disc, j);
        let z2 = boundary_point(disc, k);
        push(&z1, &z2, disc.grid().zeta(j), disc.grid().zeta(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..pairs {
        let mut sample = || {
            let r = rng.gen::<f64>().sqrt() * 0.995;
            let t = rng.gen::<f64>() * std::f64::consts::TAU;
            Complex64::from_polar(r, t)
        };
        let zeta1 = sample();
        let zeta2 = sample();
        push(&disc.eval(zeta1), &disc.eval(zeta2), zeta1, zeta2);
    }
    (cmin, cmax)
}

// ---------------------------------------------------------------------------
// the continuity-principle radius
// ---------------------------------------------------------------------------

/// Direct substitution of the extension-radius formula
/// `σ = ρ·c / (2·C)`.
pub fn sigma_formula(rho: f64, c: f64, big_c: f64) -> f64 {
    rho * c / (2.0 * big_c)
}

/// Measured extension data of one disc of an isotopy.
#[derive(Clone, Debug)]
pub struct SigmaReport {
    pub tau: f64,
    /// Boundary clearance of `A_τ(∂Δ)` inside the domain.
    pub rho: f64,
    /// Sampled lower bi-Lipschitz constant.
    pub c: f64,
    /// Sampled upper bi-Lipschitz constant.
    pub big_c: f64,
    /// `ρ·c / (2C)` with the sampled constants.
    pub sigma: f64,
    /// `sigma` with an extra 2× safety factor: the sampled constants are
    /// only statistically sound, so certified output uses this value.
    pub sigma_safe: f64,
}

/// Measure the extension radius of disc `index` of the isotopy: clearance
/// from the boundary-distance oracle over all boundary nodes, bi-Lipschitz
/// constants by pair sampling, then the radius formula.
pub fn continuity_sigma(
    isotopy: &DiscIsotopy,
    index: usize,
) -> Result<SigmaReport, ExtensionError> {
    let tau = isotopy.tau(index);
    let disc = isotopy.disc(index);
    let n = disc.grid().len();
    let mut rho = f64::INFINITY;
    for j in 0..n {
        let z = boundary_point(disc, j);
        if !isotopy.domain.contains(&z) {
            return Err(ExtensionError::BoundaryEscape { tau });
        }
        rho = rho.min(isotopy.domain.boundary_distance(&z));
    }
    rho = rho.min(CLEARANCE_CAP);
    let (c, big_c) = embedding_constants(disc, 10_000);
    if c < EMBEDDING_FLOOR {
        return Err(ExtensionError::DegenerateDisc { tau, c });
    }
    let sigma = sigma_formula(rho, c, big_c);
    Ok(SigmaReport {
        tau,
        rho,
        c,
        big_c,
        sigma,
        sigma_safe: 0.5 * sigma,
    })
}

// ---------------------------------------------------------------------------
// coverage
// ---------------------------------------------------------------------------

/// One certified envelope point with its provenance.
#[derive(Clone, Debug)]
pub struct CoveragePoint {
    pub z: Vec<Complex64>,
    pub tau: f64,
    pub zeta: Complex64,
    /// Certified polydisc radius around `z`.
    pub sigma: f64,
}

/// The certified part of the envelope: sampled points of the swept discs,
/// each carrying the radius of the polydisc to which holomorphic functions
/// on the domain extend.
pub struct CoverageCloud {
    pub points: Vec<CoveragePoint>,
}

impl CoverageCloud {
    /// Whether `z` lies inside some certified polydisc.
    pub fn covers(&self, z: &[Complex64]) -> bool {
        self.points.iter().any(|p| polydisc_dist(&p.z, z) < p.sigma)
    }

    /// CSV export: `tau,re_zeta,im_zeta,sigma,re_z1,im_z1,…`.
    pub fn write_csv(&self, path: &std::path::Path) -> std::io::Result<()> {
        use std::io::Write;
        let d = self.points.first().map(|p| p.z.len()).unwrap_or(0);
        let mut out = String::from("tau,re_zeta,im_zeta,sigma");
        for k in 0..d {
            out.push_str(&format!(",re_z{0},im_z{0}", k + 1));
        }
        out.push('\n');
        for p in &self.points {
            out.push_str(&format!(
                "{:.6},{:.12e},{:.12e},{:.12e}",
                p.tau, p.zeta.re, p.zeta.im, p.sigma
            ));
            for z in &p.z {
                out.push_str(&format!(",{:.12e},{:.12e}", z.re, z.im));
            }
            out.push('\n');
        }
        std::fs::File::create(path)?.write_all(out.as_bytes())
    }
}

/// Disc parameters sampled for coverage output: a radial/angular grid of
/// the closed disc plus a stride over the boundary nodes.
fn coverage_zetas(disc: &AnalyticDisc) -> Vec<Complex64> {
    let mut zetas = vec![Complex64::new(0.0, 0.0)];
    for &r in &[0.3, 0.6, 0.9] {
        for a in 0..16 {
            let t = std::f64::consts::TAU * a as f64 / 16.0;
            zetas.push(Complex64::from_polar(r, t));
        }
    }
    let n = disc.grid().len();
    for j in (0..n).step_by(n / 32) {
        zetas.push(disc.grid().zeta(j));
    }
    zetas
}

/// Sweep the isotopy and emit every certified envelope point: for each
/// parameter the extension radius is measured, and the sampled points of
/// that disc are certified with it.  Requires the final disc to lie
/// entirely inside the domain; rejects (with the offending parameter) as
/// soon as any disc boundary escapes.
pub fn extension_coverage(isotopy: &DiscIsotopy) -> Result<CoverageCloud, ExtensionError> {
    let last = isotopy.len() - 1;
    let final_disc = isotopy.disc(last);
    for zeta in coverage_zetas(final_disc) {
        if !isotopy.domain.contains(&final_disc.eval(zeta)) {
            return Err(ExtensionError::BoundaryEscape { tau: 1.0 });
        }
    }
    let reports = (0..isotopy.len())
        .into_par_iter()
        .map(|k| continuity_sigma(isotopy, k))
        .collect::<Result<Vec<_>, _>>()?;
    let mut points = Vec::new();
    for (k, report) in reports.iter().enumerate() {
        if report.sigma_safe <= 0.0 {
            continue;
        }
        let disc = isotopy.disc(k);
        for zeta in coverage_zetas(disc) {
            points.push(CoveragePoint {
                z: disc.eval(zeta),
                tau: report.tau,
                zeta,
                sigma: report.sigma_safe,
            });
        }
    }
    Ok(CoverageCloud { points })
}

/// The built-in two-piece-figure scenario: horizontal-slice discs
/// `A_τ(ζ) = (0.7·(1−τ), 0.95·ζ)` whose boundaries stay in the outer
/// shell while the disc slides into the thin piece; the coverage of this
/// isotopy certifies bidisc points far outside the figure.
pub fn two_piece_scenario(m: usize) -> Result<DiscIsotopy, ExtensionError> {
    let grid = crate::circle_ops::CircleGrid::new(128).expect("valid grid");
    DiscIsotopy::from_fn(
        m,
        |tau| {
            let a = 0.7 * (1.0 - tau);
            let x = CircleFn::from_fn(grid, 2, |theta| vec![a, 0.95 * theta.cos()]);
            let y = CircleFn::from_fn(grid, 2, |theta| vec![0.0, 0.95 * theta.sin()]);
            AnalyticDisc::from_boundary(x, y)
        },
        Arc::new(TwoPieceFigure),
        5.0,
    )
}

// ---------------------------------------------------------------------------
// Gauss-kernel approximation
// ---------------------------------------------------------------------------

/// A maximally real slice graphed over a real cube: `x ↦ x + i·l(x)` with
/// small C¹ tilt `l`, for `x` in `[−half_width, half_width]^n`.
pub struct RealSlice {
    pub n: usize,
    pub l: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
    pub half_width: f64,
}

impl RealSlice {
    /// The untilted slice `R^n` restricted to the cube.
    pub fn flat(n: usize, half_width: f64) -> Self {
        Self {
            n,
            l: Arc::new(move |_x: &[f64]| vec![0.0; n]),
            half_width,
        }
    }

    pub fn point(&self, x: &[f64]) -> Vec<Complex64> {
        let im = (self.l)(x);
        x.iter()
            .zip(im)
            .map(|(&a, b)| Complex64::new(a, b))
            .collect()
    }

    /// Complex volume element along the slice: `det(I + i·∂l/∂x)`.
    fn volume_factor(&self, x: &[f64]) -> Complex64 {
        let n = self.n;
        let fd = 1e-6;
        let mut m = DMatrix::<Complex64>::identity(n, n);
        for col in 0..n {
            let mut hi = x.to_vec();
            let mut lo = x.to_vec();
            hi[col] += fd;
            lo[col] -= fd;
            let lh = (self.l)(&hi);
            let ll = (self.l)(&lo);
            for row in 0..n {
                m[(row, col)] += Complex64::new(0.0, (lh[row] - ll[row]) / (2.0 * fd));
            }
        }
        m.determinant()
    }
}

/// A boundary-value sample: a function of the slice point in C^n.
pub type SliceFunction = Arc<dyn Fn(&[Complex64]) -> Complex64 + Send + Sync>;

const QUADRATURE_NODE_CAP: usize = 20_000_000;

/// Odometer over a tensor grid.
fn tensor_nodes(per_axis: usize, n: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = per_axis.pow(n as u32);
    (0..total).map(move |mut flat| {
        let mut idx = vec![0usize; n];
        for k in (0..n).rev() {
            idx[k] = flat % per_axis;
            flat /= per_axis;
        }
        idx
    })
}

/// Convolution of `f` with the Gauss kernel over the slice:
/// `(τ/π)^{n/2} ∫ exp(−τ·Σ(z_j − ẑ_j)²) f(z) dz`, where the complex
/// squares (not moduli) appear in the phase and
/// `dz = det(I + i·∂l/∂x) dx`.  Tensor-trapezoid quadrature with pitch at
/// most `(2τ)^{−1/2}/4` on a window of half-width `10/√τ` around `Re ẑ`
/// (clipped to the cube).
pub fn gauss_approximation(
    f: &SliceFunction,
    slice: &RealSlice,
    zhat: &[Complex64],
    tau: f64,
) -> Result<Complex64, ExtensionError> {
    let n = slice.n;
    let pitch = ((2.0 * tau).sqrt().recip() / 4.0).min(slice.half_width / 64.0);
    let window = (10.0 / tau.sqrt()).min(slice.half_width);
    let per_axis = 2 * (window / pitch).ceil() as usize + 1;
    let nodes = per_axis.pow(n as u32);
    if nodes > QUADRATURE_NODE_CAP {
        return Err(ExtensionError::QuadratureTooFine {
            nodes,
            cap: QUADRATURE_NODE_CAP,
        });
    }
    // Window center: the real part of ẑ, pushed inside the cube.
    let center: Vec<f64> = (0..n)
        .map(|k| {
            zhat[k]
                .re
                .clamp(-slice.half_width + window, slice.half_width - window)
        })
        .collect();
    let h = 2.0 * window / (per_axis - 1) as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for idx in tensor_nodes(per_axis, n) {
        let x: Vec<f64> = (0..n)
            .map(|k| center[k] - window + h * idx[k] as f64)
            .collect();
        let mut weight = 1.0;
        for &i in &idx {
            if i == 0 || i + 1 == per_axis {
                weight *= 0.5;
            }
        }
        let z = slice.point(&x);
        let phase: Complex64 = z.iter().zip(zhat).map(|(a, b)| (a - b) * (a - b)).sum();
        let kernel = (-tau * phase).exp();
        acc += kernel * f(&z) * slice.volume_factor(&x) * weight;
    }
    Ok(acc * (tau / std::f64::consts::PI).powf(n as f64 / 2.0) * h.powi(n as i32))
}

/// A polynomial in `ẑ ∈ C^n`, stored as monomial coefficients.
#[derive(Clone, Debug)]
pub struct GaussPolynomial {
    pub n: usize,
    pub coeffs: BTreeMap<Vec<usize>, Complex64>,
}

impl GaussPolynomial {
    pub fn eval(&self, zhat: &[Complex64]) -> Complex64 {
        self.coeffs
            .iter()
            .map(|(powers, c)| {
                let mono: Complex64 = powers
                    .iter()
                    .enumerate()
                    .map(|(k, &p)| zhat[k].powu(p as u32))
                    .product();
                c * mono
            })
            .sum()
    }

    pub fn degree(&self) -> usize {
        self.coeffs
            .keys()
            .map(|p| p.iter().sum())
            .max()
            .unwrap_or(0)
    }
}

/// The truncated Gauss series: expand the kernel exponential termwise to
/// order `nu` and integrate against `f` over the slice, producing a
/// genuine polynomial in `ẑ` that converges to the Gauss convolution as
/// `nu → ∞`.  The slice moments `∫ z^β f(z) dz` are computed once on a
/// uniform tensor grid.
pub fn polynomial_sequence(
    f: &SliceFunction,
    slice: &RealSlice,
    tau: f64,
    nu: usize,
) -> Result<GaussPolynomial, ExtensionError> {
    let n = slice.n;
    let per_axis: usize = 129;
    let nodes = per_axis.pow(n as u32);
    if nodes > QUADRATURE_NODE_CAP {
        return Err(ExtensionError::QuadratureTooFine {
            nodes,
            cap: QUADRATURE_NODE_CAP,
        });
    }
    let h = 2.0 * slice.half_width / (per_axis - 1) as f64;
    // Moments for every per-coordinate power profile bounded by 2ν.
    let mut moments: BTreeMap<Vec<usize>, Complex64> = BTreeMap::new();
    let mut profiles: Vec<Vec<usize>> = Vec::new();
    collect_even_profiles(n, nu, &mut vec![0; n], 0, &mut profiles);
    let mut monomials: std::collections::BTreeSet<Vec<usize>> = std::collections::BTreeSet::new();
    for profile in &profiles {
        collect_sub_powers(profile, &mut vec![0; n], 0, &mut monomials);
    }
    for idx in tensor_nodes(per_axis, n) {
        let x: Vec<f64> = (0..n)
            .map(|k| -slice.half_width + h * idx[k] as f64)
            .collect();
        let mut weight = 1.0;
        for &i in &idx {
            if i == 0 || i + 1 == per_axis {
                weight *= 0.5;
            }
        }
        let z = slice.point(&x);
        let base = f(&z) * slice.volume_factor(&x) * weight;
        for powers in &monomials {
            let mono: Complex64 = powers
                .iter()
                .enumerate()
                .map(|(k, &p)| z[k].powu(p as u32))
                .product();
            *moments
                .entry(powers.clone())
                .or_insert(Complex64::new(0.0, 0.0)) += base * mono;
        }
    }
    for v in moments.values_mut() {
        *v *= h.powi(n as i32);
    }
    // Assemble coefficients of ẑ^γ from the termwise expansion of the
    // kernel: Σ_k (−τ)^k/k! (Σ_j (z_j−ẑ_j)²)^k, multinomial over the
    // coordinates and binomial per coordinate.
    let prefactor = (tau / std::f64::consts::PI).powf(n as f64 / 2.0);
    let mut coeffs: BTreeMap<Vec<usize>, Complex64> = BTreeMap::new();
    for profile in &profiles {
        let k: usize = profile.iter().sum();
        // (−τ)^k / ∏ K_j!  (the multinomial k!/∏K_j! cancels the 1/k!).
        let mut scale = (-tau).powi(k as i32);
        for &kj in profile {
            scale /= factorial(kj);
        }
        let mut subs: std::collections::BTreeSet<Vec<usize>> = std::collections::BTreeSet::new();
        collect_sub_powers(profile, &mut vec![0; n], 0, &mut subs);
        for m in subs {
            let mut binom = 1.0;
            let mut gamma = vec![0usize; n];
            for j in 0..n {
                binom *= binomial(2 * profile[j], m[j]);
                gamma[j] = 2 * profile[j] - m[j];
            }
            let sign = if gamma.iter().sum::<usize>() % 2 == 0 {
                1.0
            } else {
                -1.0
            };
            let moment = moments[&m];
            *coeffs.entry(gamma).or_insert(Complex64::new(0.0, 0.0)) +=
                moment * (prefactor * scale * binom * sign);
        }
    }
    coeffs.retain(|_, v| v.norm() > 0.0);
    Ok(GaussPolynomial { n, coeffs })
}

/// All per-coordinate order profiles `(K₁,…,K_n)` with `ΣK_j ≤ nu`.
fn collect_even_profiles(
    n: usize,
    nu: usize,
    current: &mut Vec<usize>,
    axis: usize,
    out: &mut Vec<Vec<usize>>,
) {
    if axis == n {
        out.push(current.clone());
        return;
    }
    let used: usize = current[..axis].iter().sum();
    for k in 0..=(nu - used) {
        current[axis] = k;
        collect_even_profiles(n, nu, current, axis + 1, out);
    }
    current[axis] = 0;
}

/// All monomial powers `m` with `m_j ≤ 2·K_j`.
fn collect_sub_powers(
    profile: &[usize],
    current: &mut Vec<usize>,
    axis: usize,
    out: &mut std::collections::BTreeSet<Vec<usize>>,
) {
    if axis == profile.len() {
        out.insert(current.clone());
        return;
    }
    for m in 0..=(2 * profile[axis]) {
        current[axis] = m;
        collect_sub_powers(profile, current, axis + 1, out);
    }
    current[axis] = 0;
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

fn binomial(n: usize, k: usize) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

// ===========================================================================
// tests
// ===========================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circle_ops::CircleGrid;

    fn grid() -> CircleGrid {
        CircleGrid::new(128).unwrap()
    }

    /// The round flat disc `ζ ↦ (center + r·ζ, 0)` in C².
    fn flat_disc(center: Complex64, r: f64) -> AnalyticDisc {
        let x = CircleFn::from_fn(grid(), 2, |t| vec![center.re + r * t.cos(), 0.0]);
        let y = CircleFn::from_fn(grid(), 2, |t| vec![center.im + r * t.sin(), 0.0]);
        AnalyticDisc::from_boundary(x, y).unwrap()
    }

    fn unit_ball(n: usize) -> Arc<dyn Domain> {
        Arc::new(Ball {
            center: vec![Complex64::new(0.0, 0.0); n],
            radius: 1.0,
        })
    }

    #[test]
    fn sigma_formula_direct_substitution() {
        assert!((sigma_formula(0.1, 1.0, 2.0) - 0.025).abs() < 1e-15);
    }

    #[test]
    fn round_flat_disc_sigma_matches_the_hand_computation() {
        // Radius-r disc centered in the radius-R ball: c = C = r and
        // ρ = R − r, so σ = (R − r)/2.
        let r = 0.5;
        let discs = vec![flat_disc(Complex64::new(0.0, 0.0), r); 2];
        let iso = DiscIsotopy::new(discs, unit_ball(2), 5.0).unwrap();
        let report = continuity_sigma(&iso, 0).unwrap();
        let hand = (1.0 - r) / 2.0;
        assert!((report.c - r).abs() < 0.01 * r);
        assert!((report.big_c - r).abs() < 0.01 * r);
        assert!((report.rho - (1.0 - r)).abs() < 1e-10);
        assert!(
            (report.sigma - hand).abs() < 0.01 * hand,
            "sigma {} vs hand value {}",
            report.sigma,
            hand
        );
        assert!((report.sigma_safe - 0.5 * report.sigma).abs() < 1e-15);
    }

    #[test]
    fn disc_touching_the_boundary_has_empty_coverage() {
        let discs = vec![flat_disc(Complex64::new(0.0, 0.0), 1.0); 2];
        let iso = DiscIsotopy::new(discs, unit_ball(2), 5.0).unwrap();
        let report = continuity_sigma(&iso, 0).unwrap();
        assert!(report.rho.abs() < 1e-12);
        assert!(report.sigma.abs() < 1e-12);
        let cloud = extension_coverage(&iso).unwrap();
        assert!(cloud.points.is_empty());
    }

    #[test]
    fn full_space_coverage_contains_every_disc_point() {
        let discs = vec![flat_disc(Complex64::new(0.2, 0.1), 0.4); 3];
        let iso = DiscIsotopy::new(discs, Arc::new(FullSpace { n: 2 }), 5.0).unwrap();
        let cloud = extension_coverage(&iso).unwrap();
        // The clearance cap makes σ large, so the whole disc is covered.
        for zeta in [
            Complex64::new(0.0, 0.0),
            Complex64::new(0.5, 0.3),
            Complex64::new(-0.7, 0.2),
        ] {
            let z = iso.disc(0).eval(zeta);
            assert!(cloud.covers(&z), "point at ζ = {zeta} not covered");
        }
    }

    #[test]
    fn two_piece_figure_coverage_reaches_outside_the_domain() {
        let iso = two_piece_scenario(21).unwrap();
        let cloud = extension_coverage(&iso).unwrap();
        let domain = TwoPieceFigure;
        // The slice center (0.6, 0) lies outside the figure but inside
        // the certified envelope; the bidisc center is covered as well.
        let outside = vec![Complex64::new(0.6, 0.0), Complex64::new(0.0, 0.0)];
        assert!(!domain.contains(&outside));
        assert!(cloud.covers(&outside), "extension point not covered");
        let center = vec![Complex64::new(0.0, 0.0); 2];
        assert!(cloud.covers(&center), "bidisc center not covered");
    }

    #[test]
    fn boundary_escape_is_rejected_with_the_offending_parameter() {
        let mut discs = vec![flat_disc(Complex64::new(0.0, 0.0), 0.5); 5];
        discs[2] = flat_disc(Complex64::new(0.8, 0.0), 0.5);
        let iso = DiscIsotopy::new(discs, unit_ball(2), 1e6).unwrap();
        match extension_coverage(&iso) {
            Err(ExtensionError::BoundaryEscape { tau }) => {
                assert!((tau - 0.5).abs() < 1e-12, "offending parameter {tau}")
            }
            other => panic!(
                "expected a boundary escape, got {other:?}",
                other = other.map(|c| c.points.len())
            ),
        }
    }

    #[test]
    fn isotopy_discontinuity_is_rejected() {
        let discs = vec![
            flat_disc(Complex64::new(0.0, 0.0), 0.3),
            flat_disc(Complex64::new(0.5, 0.0), 0.3),
        ];
        match DiscIsotopy::new(discs, unit_ball(2), 0.1) {
            Err(ExtensionError::IsotopyDiscontinuous { jump, bound, .. }) => {
                assert!(jump > bound);
            }
            _ => panic!("expected a continuity rejection"),
        }
    }

    #[test]
    fn shrinking_isotopy_endpoint_reduces_to_a_polydisc_around_the_point() {
        let iso = DiscIsotopy::from_fn(
            11,
            |tau| {
                let r = 0.95 - 0.94 * tau;
                let x = CircleFn::from_fn(grid(), 2, |t| vec![r * t.cos(), 0.0]);
                let y = CircleFn::from_fn(grid(), 2, |t| vec![r * t.sin(), 0.0]);
                AnalyticDisc::from_boundary(x, y)
            },
            unit_ball(2),
            5.0,
        )
        .unwrap();
        let cloud = extension_coverage(&iso).unwrap();
        let final_points: Vec<&CoveragePoint> =
            cloud.points.iter().filter(|p| p.tau == 1.0).collect();
        assert!(!final_points.is_empty());
        let origin = vec![Complex64::new(0.0, 0.0); 2];
        for p in &final_points {
            assert!(polydisc_dist(&p.z, &origin) <= 0.011);
        }
        // σ₁ ≈ ρ/2 with one extra safety halving: (1 − 0.01)/4.
        let sigma1 = final_points[0].sigma;
        assert!((sigma1 - (1.0 - 0.01) / 4.0).abs() < 0.02, "sigma {sigma1}");
    }

    #[test]
    fn coverage_is_sound_under_recheck() {
        let iso = two_piece_scenario(9).unwrap();
        let cloud = extension_coverage(&iso).unwrap();
        assert!(!cloud.points.is_empty());
        let m = iso.len() - 1;
        for p in cloud.points.iter().step_by(17) {
            let index = (p.tau * m as f64).round() as usize;
            let report = continuity_sigma(&iso, index).unwrap();
            assert!((report.sigma_safe - p.sigma).abs() < 1e-12);
            // The provenance disc re-passes the boundary check and the
            // point is on it.
            let z = iso.disc(index).eval(p.zeta);
            assert!(polydisc_dist(&z, &p.z) < 1e-12);
        }
    }

    #[test]
    fn shrinking_the_domain_never_enlarges_the_coverage() {
        let make = |radius: f64| {
            let discs = vec![flat_disc(Complex64::new(0.0, 0.0), 0.5); 4];
            let iso = DiscIsotopy::new(
                discs,
                Arc::new(Ball {
                    center: vec![Complex64::new(0.0, 0.0); 2],
                    radius,
                }),
                5.0,
            )
            .unwrap();
            extension_coverage(&iso).unwrap()
        };
        let big = make(1.2);
        let small = make(0.9);
        assert!(small.points.len() <= big.points.len());
        for (s, b) in small.points.iter().zip(big.points.iter()) {
            assert!(s.sigma <= b.sigma + 1e-12);
        }
    }

    #[test]
    fn gauss_kernel_recovers_the_constant_function() {
        let slice = RealSlice::flat(2, 0.5);
        let f: SliceFunction = Arc::new(|_z: &[Complex64]| Complex64::new(1.0, 0.0));
        let zhat = vec![Complex64::new(0.0, 0.0); 2];
        let v = gauss_approximation(&f, &slice, &zhat, 1e4).unwrap();
        assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-6, "value {v}");
    }

    #[test]
    fn gauss_kernel_kills_odd_functions() {
        let slice = RealSlice::flat(2, 0.5);
        let f: SliceFunction = Arc::new(|z: &[Complex64]| z[0]);
        let zhat = vec![Complex64::new(0.0, 0.0); 2];
        let v = gauss_approximation(&f, &slice, &zhat, 1e4).unwrap();
        assert!(v.norm() < 1e-10, "value {v}");
    }

    #[test]
    fn gauss_kernel_recovers_a_quadratic_off_center() {
        let slice = RealSlice::flat(2, 0.5);
        let f: SliceFunction = Arc::new(|z: &[Complex64]| z[0] * z[0]);
        let zhat = vec![Complex64::new(0.1, 0.0), Complex64::new(0.0, 0.0)];
        let v = gauss_approximation(&f, &slice, &zhat, 1e4).unwrap();
        let exact = Complex64::new(0.01, 0.0);
        assert!((v - exact).norm() < 1e-3, "value {v}");
    }

    #[test]
    fn gauss_error_decreases_monotonically_in_tau() {
        let slice = RealSlice::flat(1, 0.6);
        let f: SliceFunction = Arc::new(|z: &[Complex64]| z[0] * z[0]);
        let zhat = vec![Complex64::new(0.1, 0.0)];
        let exact = Complex64::new(0.01, 0.0);
        let mut last = f64::INFINITY;
        for tau in [1e2, 1e3, 1e4] {
            let v = gauss_approximation(&f, &slice, &zhat, tau).unwrap();
            let err = (v - exact).norm();
            assert!(err < last, "error {err:.3e} did not decrease at τ = {tau}");
            last = err;
        }
    }

    #[test]
    fn tilted_slice_volume_factor_matters() {
        // On a tilted line z = x(1 + iε) the volume factor is 1 + iε; the
        // Gauss value of the constant function still converges to 1.
        let eps = 0.05;
        let slice = RealSlice {
            n: 1,
            l: Arc::new(move |x: &[f64]| vec![eps * x[0]]),
            half_width: 0.5,
        };
        let f: SliceFunction = Arc::new(|_z: &[Complex64]| Complex64::new(1.0, 0.0));
        let zhat = vec![Complex64::new(0.0, 0.0)];
        let v = gauss_approximation(&f, &slice, &zhat, 1e4).unwrap();
        assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-5, "value {v}");
    }

    #[test]
    fn truncated_series_converges_to_the_gauss_value() {
        let slice = RealSlice::flat(1, 0.5);
        let f: SliceFunction = Arc::new(|z: &[Complex64]| z[0] * z[0]);
        let tau = 10.0;
        let zhat = vec![Complex64::new(0.05, 0.0)];
        let reference = gauss_approximation(&f, &slice, &zhat, tau).unwrap();
        let mut errors = Vec::new();
        for nu in [2usize, 6, 12, 20] {
            let p = polynomial_sequence(&f, &slice, tau, nu).unwrap();
            errors.push((p.eval(&zhat) - reference).norm());
        }
        assert!(
            errors.windows(2).all(|w| w[1] <= w[0] + 1e-12),
            "errors {errors:?}"
        );
        assert!(
            *errors.last().unwrap() < 1e-4,
            "final truncation error {:.3e}",
            errors.last().unwrap()
        );
        let p = polynomial_sequence(&f, &slice, tau, 20).unwrap();
        assert!(p.degree() <= 40);
    }

    #[test]
    fn coverage_csv_export_is_deterministic() {
        let iso = two_piece_scenario(5).unwrap();
        let cloud = extension_coverage(&iso).unwrap();
        let dir = std::env::temp_dir().join("crlab_extension_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("cov1.csv");
        let p2 = dir.join("cov2.csv");
        cloud.write_csv(&p1).unwrap();
        cloud.write_csv(&p2).unwrap();
        let a = std::fs::read(&p1).unwrap();
        let b = std::fs::read(&p2).unwrap();
        assert_eq!(a, b);
        assert!(String::from_utf8(a)
            .unwrap()
            .starts_with("tau,re_zeta,im_zeta,sigma,re_z1,im_z1,re_z2,im_z2\n"));
        std::fs::remove_file(&p1).unwrap();
        std::fs::remove_file(&p2).unwrap();
    }
}
