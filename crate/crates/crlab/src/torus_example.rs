//! Desk-scale verification of an engineered nonremovable-torus scenario in
//! C³: a smooth unit field orthogonal to a spiral foliation of the solid
//! torus, an orthonormal completion, a two-equation family of generic
//! submanifolds bent by a large constant `P`, the induced CR vector field,
//! nested Lie brackets to length four, and the rank / quartic-positivity
//! checks that certify finite type 4 on a ball.
//!
//! All derivatives of the smooth frame inputs are taken by
//! Richardson-extrapolated central differences; the polynomial dependence
//! on the transverse variables is differentiated exactly.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TorusError {
    #[error("frame degeneracy at sample {point:?}: {what}")]
    FrameDegenerate { point: [f64; 3], what: String },
    #[error(
        "bracket differentiation unstable at {point:?}: relative step-halving \
         disagreement {disagreement:.3e} exceeds {tolerance:.1e}"
    )]
    DifferentiationUnstable {
        point: [f64; 3],
        disagreement: f64,
        tolerance: f64,
    },
}

// ---------------------------------------------------------------------------
// small real-vector helpers
// ---------------------------------------------------------------------------

type V3 = [f64; 3];

fn dot3(a: &V3, b: &V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: &V3, b: &V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm3(a: &V3) -> f64 {
    dot3(a, a).sqrt()
}

fn scale3(a: &V3, t: f64) -> V3 {
    [a[0] * t, a[1] * t, a[2] * t]
}

fn add3(a: &V3, b: &V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Rotation of `v` about the unit axis `n` by the angle with the given
/// cosine/sine pair (Rodrigues).
fn rotate3(v: &V3, n: &V3, cos_t: f64, sin_t: f64) -> V3 {
    let nxv = cross3(n, v);
    let ndv = dot3(n, v);
    [
        v[0] * cos_t + nxv[0] * sin_t + n[0] * ndv * (1.0 - cos_t),
        v[1] * cos_t + nxv[1] * sin_t + n[1] * ndv * (1.0 - cos_t),
        v[2] * cos_t + nxv[2] * sin_t + n[2] * ndv * (1.0 - cos_t),
    ]
}

/// Minimal rotation taking the unit vector `from` to the unit vector `to`
/// applied to `v`; smooth as long as the vectors are not antipodal.
fn rotate_between3(v: &V3, from: &V3, to: &V3) -> V3 {
    let c = dot3(from, to);
    let axis = cross3(from, to);
    let s = norm3(&axis);
    if s < 1e-14 {
        return *v;
    }
    let n = scale3(&axis, 1.0 / s);
    rotate3(v, &n, c, s)
}

// ---------------------------------------------------------------------------
// the frame orthogonal to the spiral foliation
// ---------------------------------------------------------------------------

/// Smooth step: identically 0 for `t ≤ 0`, identically 1 for `t ≥ 1`,
/// strictly increasing in between, with all derivatives vanishing at both
/// ends.
pub fn smoothstep(t: f64) -> f64 {
    fn bump(t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            (-1.0 / t).exp()
        }
    }
    let a = bump(t);
    let b = bump(1.0 - t);
    a / (a + b)
}

/// Slope angle of the spiral leaves over the meridian radius `s` of the
/// solid torus: flat 0 near the core (`s ≤ 0.2`), flat π/2 at the boundary
/// leaf (`s ≥ 1`), so the leaf graphs become vertical exactly on the
/// boundary torus.
pub fn leaf_slope_angle(s: f64) -> f64 {
    FRAC_PI_2 * smoothstep((s - 0.2) / 0.8)
}

/// Values of the orthonormal frame at a point: the leaf-orthogonal unit
/// field and its two completions.
#[derive(Clone, Copy, Debug)]
pub struct FrameValue {
    /// Leaf-orthogonal field coefficients `(a₁,a₂,a₃)`.
    pub a: V3,
    /// First completion `K¹ = (ρ₁,ρ₂,ρ₃)`.
    pub k1: V3,
    /// Second completion `K² = (r₁,r₂,r₃)`.
    pub k2: V3,
}

/// The smooth orthonormal frame `(L, K¹, K²)` on the radius-5 ball:
/// `L` is the unit normal of the spiral foliation of the solid torus
/// `(√(x₁²+x₂²)−2)² + x₃² < 1`, continued outside as the inward meridian
/// normal and blended to the constant `−e₃` near the vertical axis; the
/// completions are carried along by the same explicit rotations, so the
/// triple is exactly orthonormal and direct at every point.
pub struct ReebFrame;

/// Minimum distance to the vertical axis at which the completion fields
/// are smooth (the trivialization twists on the axis itself).
pub const AXIS_MARGIN: f64 = 0.05;

impl ReebFrame {
    pub fn eval(&self, x: &V3) -> FrameValue {
        let r_ax = x[0].hypot(x[1]);
        let (cos_phi, sin_phi) = if r_ax > 1e-300 {
            (x[0] / r_ax, x[1] / r_ax)
        } else {
            (1.0, 0.0)
        };
        let u_r = [cos_phi, sin_phi, 0.0];
        let e_phi = [-sin_phi, cos_phi, 0.0];
        let e3 = [0.0, 0.0, 1.0];
        // Meridian coordinates of the solid torus with core circle of
        // radius 2 in the horizontal plane.
        let w = [r_ax - 2.0, x[2]];
        let s = w[0].hypot(w[1]);
        let (cos_psi, sin_psi) = if s > 1e-300 {
            (w[0] / s, w[1] / s)
        } else {
            (1.0, 0.0)
        };
        let e_psi = add3(&scale3(&u_r, -sin_psi), &scale3(&e3, cos_psi));
        // Normal of the spiral leaf graph: rotate the core direction e_φ
        // toward −e_s by the graph slope corrected for the core radius.
        let beta = leaf_slope_angle(s);
        let b = (r_ax * beta.sin()).atan2(beta.cos());
        let (sin_b, cos_b) = b.sin_cos();
        let n1 = scale3(&e_psi, -1.0);
        let l_core = rotate3(&e_phi, &n1, cos_b, sin_b);
        let k1_core = rotate3(&e3, &n1, cos_b, sin_b);
        let k2_core = rotate3(&u_r, &n1, cos_b, sin_b);
        // Near the vertical axis, blend the normal to the constant −e₃;
        // the blend never passes through antipodal pairs because the
        // meridian normal keeps a horizontal component there.
        let sigma = smoothstep((1.0 - r_ax) / 0.5);
        if sigma == 0.0 {
            return FrameValue {
                a: l_core,
                k1: k1_core,
                k2: k2_core,
            };
        }
        let mut blended = add3(
            &scale3(&l_core, 1.0 - sigma),
            &scale3(&[0.0, 0.0, -1.0], sigma),
        );
        let nb = norm3(&blended);
        blended = scale3(&blended, 1.0 / nb);
        FrameValue {
            a: blended,
            k1: rotate_between3(&k1_core, &l_core, &blended),
            k2: rotate_between3(&k2_core, &l_core, &blended),
        }
    }

    /// Richardson-extrapolated partial derivative of the nine frame
    /// coefficients in the coordinate direction `k`.
    pub fn partial(&self, x: &V3, k: usize, h: f64) -> FrameValue {
        let diff = |step: f64| -> FrameValue {
            let mut hi = *x;
            let mut lo = *x;
            hi[k] += step;
            lo[k] -= step;
            let fh = self.eval(&hi);
            let fl = self.eval(&lo);
            let d = |a: &V3, b: &V3| scale3(&add3(a, &scale3(b, -1.0)), 0.5 / step);
            FrameValue {
                a: d(&fh.a, &fl.a),
                k1: d(&fh.k1, &fl.k1),
                k2: d(&fh.k2, &fl.k2),
            }
        };
        let coarse = diff(h);
        let fine = diff(0.5 * h);
        let rich = |c: &V3, f: &V3| scale3(&add3(&scale3(f, 4.0), &scale3(c, -1.0)), 1.0 / 3.0);
        FrameValue {
            a: rich(&coarse.a, &fine.a),
            k1: rich(&coarse.k1, &fine.k1),
            k2: rich(&coarse.k2, &fine.k2),
        }
    }
}

/// Build the frame and verify its invariants (unit norms, orthogonality,
/// orientation, normality to the compact leaf) at `samples` random points
/// of the radius-5 ball away from the axis.
pub fn build_reeb_frame(samples: usize, seed: u64) -> Result<ReebFrame, TorusError> {
    let frame = ReebFrame;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = 1e-10;
    for _ in 0..samples {
        let x = random_ball_point(&mut rng, 5.0, AXIS_MARGIN);
        let f = frame.eval(&x);
        let checks = [
            (norm3(&f.a) - 1.0, "|L| != 1"),
            (norm3(&f.k1) - 1.0, "|K1| != 1"),
            (norm3(&f.k2) - 1.0, "|K2| != 1"),
            (dot3(&f.a, &f.k1), "L not orthogonal to K1"),
            (dot3(&f.a, &f.k2), "L not orthogonal to K2"),
            (dot3(&f.k1, &f.k2), "K1 not orthogonal to K2"),
            (dot3(&f.a, &cross3(&f.k1, &f.k2)) - 1.0, "frame not direct"),
        ];
        for (value, what) in checks {
            if value.abs() > tol {
                return Err(TorusError::FrameDegenerate {
                    point: x,
                    what: format!("{what} (residual {value:.3e})"),
                });
            }
        }
    }
    // Normality to the compact leaf: on the torus the frame field must be
    // parallel to the gradient of the defining polynomial.
    for p in torus_samples(64, 32) {
        let f = frame.eval(&p);
        let g = torus_gradient(&p);
        let n = scale3(&g, 1.0 / norm3(&g));
        if (dot3(&f.a, &n).abs() - 1.0).abs() > 1e-8 {
            return Err(TorusError::FrameDegenerate {
                point: p,
                what: "L not normal to the compact leaf".into(),
            });
        }
    }
    Ok(frame)
}

fn random_ball_point(rng: &mut ChaCha8Rng, radius: f64, axis_margin: f64) -> V3 {
    loop {
        let x = [
            rng.gen_range(-radius..radius),
            rng.gen_range(-radius..radius),
            rng.gen_range(-radius..radius),
        ];
        if norm3(&x) <= radius && x[0].hypot(x[1]) > axis_margin {
            return x;
        }
    }
}

// ---------------------------------------------------------------------------
// the torus and the bent submanifold family
// ---------------------------------------------------------------------------

/// Polynomial defining the standard torus of core radius 2 and meridian
/// radius 1: zero set `(√(x₁²+x₂²)−2)² + x₃² = 1` without the square root.
pub fn torus_defining(x: &V3) -> f64 {
    let q = x[0] * x[0] + x[1] * x[1] + x[2] * x[2] + 3.0;
    q * q - 16.0 * (x[0] * x[0] + x[1] * x[1])
}

/// Gradient of the torus polynomial.
pub fn torus_gradient(x: &V3) -> V3 {
    let q = x[0] * x[0] + x[1] * x[1] + x[2] * x[2] + 3.0;
    [
        4.0 * q * x[0] - 32.0 * x[0],
        4.0 * q * x[1] - 32.0 * x[1],
        4.0 * q * x[2],
    ]
}

/// Parametric samples of the torus: `nu` core angles by `nv` meridian
/// angles.
pub fn torus_samples(nu: usize, nv: usize) -> Vec<V3> {
    let mut out = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let phi = TAU * i as f64 / nu as f64;
        for j in 0..nv {
            let t = TAU * j as f64 / nv as f64;
            let r = 2.0 + t.cos();
            out.push([r * phi.cos(), r * phi.sin(), t.sin()]);
        }
    }
    out
}

/// The bent two-equation family: the generic submanifold
/// `{Σ y_j ρ_j(x) + P·Σ y_j² = 0, Σ y_j r_j(x) + P³·Σ y_j^d = 0}` with
/// bending constant `P` and transverse power `d` (4 for the quartic model,
/// 3 for the cubic variant).
pub struct TorusModel {
    pub frame: Arc<ReebFrame>,
    pub p: f64,
    pub transverse_power: u32,
    /// Base step for the frame finite differences.
    pub frame_step: f64,
}

impl TorusModel {
    pub fn rho(&self, x: &V3, y: &V3) -> f64 {
        let f = self.frame.eval(x);
        dot3(y, &f.k1) + self.p * dot3(y, y)
    }

    pub fn r(&self, x: &V3, y: &V3) -> f64 {
        let f = self.frame.eval(x);
        let d = self.transverse_power as i32;
        dot3(y, &f.k2) + self.p.powi(3) * (y[0].powi(d) + y[1].powi(d) + y[2].powi(d))
    }
}

/// Assemble the family at bending constant `p` and verify the tangency
/// prerequisites along the real slice: both equations vanish at `y = 0`
/// and the frame orthogonality makes the rotated field tangent there.
pub fn build_mp(frame: Arc<ReebFrame>, p: f64) -> Result<TorusModel, TorusError> {
    assert!(p > 0.0, "the bending constant must be positive");
    let model = TorusModel {
        frame,
        p,
        transverse_power: 4,
        frame_step: 1e-4,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let x = random_ball_point(&mut rng, 5.0, AXIS_MARGIN);
        let f = model.frame.eval(&x);
        // Derivative of each defining function along the rotated frame
        // direction at y = 0 reduces to the orthogonality relations.
        let t1 = dot3(&f.a, &f.k1);
        let t2 = dot3(&f.a, &f.k2);
        if t1.abs() > 1e-10 || t2.abs() > 1e-10 {
            return Err(TorusError::FrameDegenerate {
                point: x,
                what: format!("tangency prerequisite fails ({t1:.3e}, {t2:.3e})"),
            });
        }
    }
    Ok(model)
}

// ---------------------------------------------------------------------------
// the CR vector field and its coefficients
// ---------------------------------------------------------------------------

/// A point of C³ split into real and imaginary parts
/// `(x₁,x₂,x₃,y₁,y₂,y₃)`.
pub type Point6 = [f64; 6];

fn xy(z: &Point6) -> (V3, V3) {
    ([z[0], z[1], z[2]], [z[3], z[4], z[5]])
}

/// Holomorphic partials `(∂ρ/∂z_k, ∂r/∂z_k)` of the defining pair: the
/// transverse polynomial part is differentiated exactly, the frame part by
/// Richardson finite differences.
fn defining_partials(model: &TorusModel, z: &Point6) -> ([Complex64; 3], [Complex64; 3]) {
    let (x, y) = xy(z);
    let f = model.frame.eval(&x);
    let mut rho_z = [Complex64::new(0.0, 0.0); 3];
    let mut r_z = [Complex64::new(0.0, 0.0); 3];
    let d = model.transverse_power as i32;
    for k in 0..3 {
        let fp = model.frame.partial(&x, k, model.frame_step);
        let rho_x = dot3(&y, &fp.k1);
        let r_x = dot3(&y, &fp.k2);
        let rho_y = f.k1[k] + 2.0 * model.p * y[k];
        let r_y = f.k2[k] + d as f64 * model.p.powi(3) * y[k].powi(d - 1);
        rho_z[k] = Complex64::new(0.5 * rho_x, -0.5 * rho_y);
        r_z[k] = Complex64::new(0.5 * r_x, -0.5 * r_y);
    }
    (rho_z, r_z)
}

/// Coefficients `(A₁,A₂,A₃)` of the generating CR vector field
/// `Σ A_j ∂/∂z_j`: four times the pairwise minors of the two holomorphic
/// gradients.
pub fn cr_field_coeffs(model: &TorusModel, z: &Point6) -> [Complex64; 3] {
    let (rho_z, r_z) = defining_partials(model, z);
    [
        4.0 * (rho_z[2] * r_z[1] - rho_z[1] * r_z[2]),
        4.0 * (rho_z[0] * r_z[2] - rho_z[2] * r_z[0]),
        4.0 * (rho_z[1] * r_z[0] - rho_z[0] * r_z[1]),
    ]
}

// ---------------------------------------------------------------------------
// truncated transverse jets
// ---------------------------------------------------------------------------

/// Number of monomials of degree at most 3 in three variables.
pub const JET_LEN: usize = 20;

/// Monomial exponent triples of degree at most 3, grouped by total degree.
pub const JET_MONOS: [[usize; 3]; JET_LEN] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
    [2, 0, 0],
    [1, 1, 0],
    [1, 0, 1],
    [0, 2, 0],
    [0, 1, 1],
    [0, 0, 2],
    [3, 0, 0],
    [2, 1, 0],
    [2, 0, 1],
    [1, 2, 0],
    [1, 1, 1],
    [1, 0, 2],
    [0, 3, 0],
    [0, 2, 1],
    [0, 1, 2],
    [0, 0, 3],
];

/// Flat index of the monomial `y₁^i y₂^j y₃^k` with `i+j+k ≤ 3`.
fn mono_index(i: usize, j: usize, k: usize) -> usize {
    let d = i + j + k;
    debug_assert!(d <= 3);
    let block = [0usize, 1, 4, 10][d];
    let rest = d - i;
    block + rest * (rest + 1) / 2 + (rest - j)
}

/// A polynomial in the transverse variables `(y₁,y₂,y₃)` truncated at
/// total degree 3, with complex coefficients.  The iterated brackets are
/// restricted to `y = 0` after at most three differentiations, so degree-3
/// truncation is exact for every reported value while discarding the
/// large-degree terms that make plain finite differences blow up.
#[derive(Clone, Copy, Debug)]
pub struct Jet {
    pub c: [Complex64; JET_LEN],
}

impl Default for Jet {
    fn default() -> Self {
        Jet {
            c: [Complex64::new(0.0, 0.0); JET_LEN],
        }
    }
}

impl Jet {
    pub fn constant(v: Complex64) -> Self {
        let mut out = Jet::default();
        out.c[0] = v;
        out
    }

    fn axpy(&mut self, t: Complex64, other: &Jet) {
        for i in 0..JET_LEN {
            self.c[i] += t * other.c[i];
        }
    }

    fn scaled(&self, t: f64) -> Jet {
        let mut out = Jet::default();
        out.axpy(Complex64::new(t, 0.0), self);
        out
    }

    fn minus(&self, other: &Jet) -> Jet {
        let mut out = *self;
        out.axpy(Complex64::new(-1.0, 0.0), other);
        out
    }

    /// Truncated product.
    pub fn mul(&self, other: &Jet) -> Jet {
        let mut out = Jet::default();
        for (m, cm) in self.c.iter().enumerate() {
            if cm.norm_sqr() == 0.0 {
                continue;
            }
            let a = JET_MONOS[m];
            for (n, cn) in other.c.iter().enumerate() {
                if cn.norm_sqr() == 0.0 {
                    continue;
                }
                let b = JET_MONOS[n];
                let (i, j, k) = (a[0] + b[0], a[1] + b[1], a[2] + b[2]);
                if i + j + k <= 3 {
                    out.c[mono_index(i, j, k)] += cm * cn;
                }
            }
        }
        out
    }

    /// Exact derivative in the transverse variable `k`.
    pub fn dy(&self, k: usize) -> Jet {
        let mut out = Jet::default();
        for (m, cm) in self.c.iter().enumerate() {
            let mut a = JET_MONOS[m];
            if a[k] == 0 {
                continue;
            }
            let factor = a[k] as f64;
            a[k] -= 1;
            out.c[mono_index(a[0], a[1], a[2])] += factor * cm;
        }
        out
    }

    /// Complex conjugate of the represented function (the transverse
    /// variables are real).
    pub fn conj(&self) -> Jet {
        let mut out = Jet::default();
        for i in 0..JET_LEN {
            out.c[i] = self.c[i].conj();
        }
        out
    }

    pub fn at_zero(&self) -> Complex64 {
        self.c[0]
    }

    /// Polynomial evaluation (used by validation tests).
    pub fn eval(&self, y: &V3) -> Complex64 {
        let mut out = Complex64::new(0.0, 0.0);
        for (m, cm) in self.c.iter().enumerate() {
            let a = JET_MONOS[m];
            out += cm * y[0].powi(a[0] as i32) * y[1].powi(a[1] as i32) * y[2].powi(a[2] as i32);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// complex vector fields and nested Lie brackets
// ---------------------------------------------------------------------------

/// Coefficients of a complex vector field
/// `Σ dz_j ∂/∂z_j + Σ dzbar_j ∂/∂z̄_j` on C³, each a transverse jet over
/// the base point `x`.
#[derive(Clone, Copy, Debug, Default)]
pub struct FieldJet {
    pub dz: [Jet; 3],
    pub dzbar: [Jet; 3],
}

impl FieldJet {
    fn axpy(&mut self, t: f64, other: &FieldJet) {
        let t = Complex64::new(t, 0.0);
        for j in 0..3 {
            self.dz[j].axpy(t, &other.dz[j]);
            self.dzbar[j].axpy(t, &other.dzbar[j]);
        }
    }

    fn minus(&self, other: &FieldJet) -> FieldJet {
        let mut out = *self;
        out.axpy(-1.0, other);
        out
    }

    fn scaled(&self, t: f64) -> FieldJet {
        let mut out = FieldJet::default();
        out.axpy(t, self);
        out
    }
}

/// A complex vector field as a function of the base point of the real
/// slice, carrying its transverse dependence as degree-3 jets.
pub type ComplexField = Arc<dyn Fn(&V3) -> FieldJet + Send + Sync>;

/// Jets of the CR field coefficients: the transverse polynomial structure
/// is written out exactly (truncated at degree 3) while the frame inputs
/// are differentiated by Richardson finite differences.
pub fn cr_field_jets(model: &TorusModel, x: &V3) -> [Jet; 3] {
    let f = model.frame.eval(x);
    let d = model.transverse_power as i32;
    let mut rho_z = [Jet::default(); 3];
    let mut r_z = [Jet::default(); 3];
    for k in 0..3 {
        let fp = model.frame.partial(x, k, model.frame_step);
        let mut rj = Jet::constant(Complex64::new(0.0, -0.5 * f.k1[k]));
        let mut sj = Jet::constant(Complex64::new(0.0, -0.5 * f.k2[k]));
        for j in 0..3 {
            let lin = mono_index(
                usize::from(j == 0),
                usize::from(j == 1),
                usize::from(j == 2),
            );
            rj.c[lin] += Complex64::new(0.5 * fp.k1[j], 0.0);
            sj.c[lin] += Complex64::new(0.5 * fp.k2[j], 0.0);
        }
        // Transverse bending terms: −iP·y_k and −(i/2)·d·P³·y_k^(d−1).
        rj.c[mono_index(
            usize::from(k == 0),
            usize::from(k == 1),
            usize::from(k == 2),
        )] += Complex64::new(0.0, -model.p);
        let pow = (d - 1) as usize;
        sj.c[mono_index(
            pow * usize::from(k == 0),
            pow * usize::from(k == 1),
            pow * usize::from(k == 2),
        )] += Complex64::new(0.0, -0.5 * d as f64 * model.p.powi(3));
        rho_z[k] = rj;
        r_z[k] = sj;
    }
    let minor = |a: &Jet, b: &Jet, c: &Jet, d: &Jet| a.mul(b).minus(&c.mul(d)).scaled(4.0);
    [
        minor(&rho_z[2], &r_z[1], &rho_z[1], &r_z[2]),
        minor(&rho_z[0], &r_z[2], &rho_z[2], &r_z[0]),
        minor(&rho_z[1], &r_z[0], &rho_z[0], &r_z[1]),
    ]
}

/// The CR field of the model.
pub fn l_field(model: Arc<TorusModel>) -> ComplexField {
    Arc::new(move |x| FieldJet {
        dz: cr_field_jets(&model, x),
        dzbar: [Jet::default(); 3],
    })
}

/// Its conjugate.
pub fn l_bar_field(model: Arc<TorusModel>) -> ComplexField {
    Arc::new(move |x| {
        let a = cr_field_jets(&model, x);
        FieldJet {
            dz: [Jet::default(); 3],
            dzbar: [a[0].conj(), a[1].conj(), a[2].conj()],
        }
    })
}

/// Richardson central derivative of a jet-valued field map along base
/// coordinate `k`.
fn field_partial(f: &ComplexField, x: &V3, k: usize, h: f64) -> FieldJet {
    let diff = |step: f64| {
        let mut hi = *x;
        let mut lo = *x;
        hi[k] += step;
        lo[k] -= step;
        f(&hi).minus(&f(&lo)).scaled(0.5 / step)
    };
    let coarse = diff(h);
    let fine = diff(0.5 * h);
    fine.scaled(4.0 / 3.0).minus(&coarse.scaled(1.0 / 3.0))
}

/// All six Wirtinger derivatives of a jet-valued field map: index `k`
/// holds `(∂/∂z_k, ∂/∂z̄_k)` applied componentwise; the base derivative is
/// numerical, the transverse one exact.
fn wirtinger_jacobian(f: &ComplexField, x: &V3, h: f64) -> Vec<(FieldJet, FieldJet)> {
    let value = f(x);
    (0..3)
        .map(|k| {
            let dx = field_partial(f, x, k, h);
            let mut dy = FieldJet::default();
            for j in 0..3 {
                dy.dz[j] = value.dz[j].dy(k);
                dy.dzbar[j] = value.dzbar[j].dy(k);
            }
            let combine = |sign: f64| {
                let mut out = FieldJet::default();
                for j in 0..3 {
                    let mut z = dx.dz[j].scaled(0.5);
                    z.axpy(Complex64::new(0.0, sign * 0.5), &dy.dz[j]);
                    out.dz[j] = z;
                    let mut zb = dx.dzbar[j].scaled(0.5);
                    zb.axpy(Complex64::new(0.0, sign * 0.5), &dy.dzbar[j]);
                    out.dzbar[j] = zb;
                }
                out
            };
            (combine(-1.0), combine(1.0))
        })
        .collect()
}

/// Lie bracket `[V, W]` of two complex vector fields; the returned field
/// closes over both inputs, so brackets nest.  `h` is the base-coordinate
/// differentiation step.
pub fn lie_bracket(v: ComplexField, w: ComplexField, h: f64) -> ComplexField {
    Arc::new(move |x| {
        let vv = v(x);
        let ww = w(x);
        let jw = wirtinger_jacobian(&w, x, h);
        let jv = wirtinger_jacobian(&v, x, h);
        let mut out = FieldJet::default();
        for k in 0..3 {
            for j in 0..3 {
                let mut term = vv.dz[k].mul(&jw[k].0.dz[j]);
                term.axpy(Complex64::new(1.0, 0.0), &vv.dzbar[k].mul(&jw[k].1.dz[j]));
                term.axpy(Complex64::new(-1.0, 0.0), &ww.dz[k].mul(&jv[k].0.dz[j]));
                term.axpy(Complex64::new(-1.0, 0.0), &ww.dzbar[k].mul(&jv[k].1.dz[j]));
                out.dz[j].axpy(Complex64::new(1.0, 0.0), &term);
                let mut termb = vv.dz[k].mul(&jw[k].0.dzbar[j]);
                termb.axpy(
                    Complex64::new(1.0, 0.0),
                    &vv.dzbar[k].mul(&jw[k].1.dzbar[j]),
                );
                termb.axpy(Complex64::new(-1.0, 0.0), &ww.dz[k].mul(&jv[k].0.dzbar[j]));
                termb.axpy(
                    Complex64::new(-1.0, 0.0),
                    &ww.dzbar[k].mul(&jv[k].1.dzbar[j]),
                );
                out.dzbar[j].axpy(Complex64::new(1.0, 0.0), &termb);
            }
        }
        out
    })
}

// ---------------------------------------------------------------------------
// rank and positivity report
// ---------------------------------------------------------------------------

/// Numerical verdict at one base point of the real slice: the four
/// iterated fields, the 4×6 matrix, its singular values, the lower-left
/// 3×3 determinant, and the quartic prediction it should track for large
/// bending constants.
#[derive(Clone, Debug, Serialize)]
pub struct BracketReport {
    pub point: V3,
    pub a: V3,
    /// Length-two bracket coefficients, split into real and imaginary
    /// parts.
    pub c_re: V3,
    pub c_im: V3,
    /// Length-four bracket holomorphic coefficients.
    pub f_re: V3,
    pub f_im: V3,
    pub singular_values: [f64; 4],
    pub det_re: f64,
    pub det_im: f64,
    /// `3·P⁴·(a₁⁴+a₂⁴+a₃⁴)`.
    pub quartic_prediction: f64,
    pub det_ratio: f64,
    /// Relative disagreement under halving of every differentiation step.
    pub step_stability: f64,
    pub rank4: bool,
}

/// Base steps of the three bracket levels.
const BRACKET_STEPS: [f64; 3] = [4e-3, 3e-3, 2e-3];

/// Tolerance of the step-halving consistency check.
pub const STABILITY_TOL: f64 = 1e-5;

/// Relative singular-value threshold of the rank-4 verdict.
pub const RANK_TOL: f64 = 1e-7;

fn iterated_fields(model: Arc<TorusModel>, scale: f64) -> (ComplexField, ComplexField) {
    let l = l_field(model.clone());
    let lb = l_bar_field(model);
    let b1 = lie_bracket(lb.clone(), l, BRACKET_STEPS[0] * scale);
    let b2 = lie_bracket(lb.clone(), b1.clone(), BRACKET_STEPS[1] * scale);
    let b3 = lie_bracket(lb, b2, BRACKET_STEPS[2] * scale);
    (b1, b3)
}

/// Evaluate the four iterated fields on the real slice at `x`, assemble
/// the rank matrix and the determinant comparison, and require the whole
/// computation to be stable under halving of every differentiation step.
pub fn bracket_rank_report(model: &Arc<TorusModel>, x: &V3) -> Result<BracketReport, TorusError> {
    let run = |scale: f64| {
        let scaled = Arc::new(TorusModel {
            frame: model.frame.clone(),
            p: model.p,
            transverse_power: model.transverse_power,
            frame_step: model.frame_step * scale,
        });
        let (b1, b3) = iterated_fields(scaled, scale);
        (b1(x), b3(x))
    };
    let (c_jet, f_jet) = run(1.0);
    let (c_half, f_half) = run(0.5);
    // Restrict the bracket jets to the real slice; the stability check
    // compares the restricted coefficients, which are the only values the
    // verdict uses.
    let restrict = |fj: &FieldJet| {
        let dz: [Complex64; 3] = std::array::from_fn(|j| fj.dz[j].at_zero());
        let dzbar: [Complex64; 3] = std::array::from_fn(|j| fj.dzbar[j].at_zero());
        (dz, dzbar)
    };
    let (c_dz, c_dzbar) = restrict(&c_jet);
    let (f_dz, f_dzbar) = restrict(&f_jet);
    let restricted_gap = |full: &(FieldJet, FieldJet), halved: &(FieldJet, FieldJet)| {
        let mut scale: f64 = 1.0;
        let mut gap: f64 = 0.0;
        for (a, b) in [(&full.0, &halved.0), (&full.1, &halved.1)] {
            for j in 0..3 {
                for (ja, jb) in [(&a.dz[j], &b.dz[j]), (&a.dzbar[j], &b.dzbar[j])] {
                    scale = scale.max(ja.at_zero().norm());
                    gap = gap.max((ja.at_zero() - jb.at_zero()).norm());
                }
            }
        }
        gap / scale
    };
    let disagreement = restricted_gap(&(c_jet, f_jet), &(c_half, f_half));
    if disagreement > STABILITY_TOL {
        return Err(TorusError::DifferentiationUnstable {
            point: *x,
            disagreement,
            tolerance: STABILITY_TOL,
        });
    }
    let f = model.frame.eval(x);
    let a = f.a;
    // Rows: conjugate field, field, length-two bracket, length-four
    // bracket, in the (∂z, ∂z̄) coordinate basis.
    let mut mat = DMatrix::<Complex64>::zeros(4, 6);
    for j in 0..3 {
        mat[(0, 3 + j)] = Complex64::new(a[j], 0.0);
        mat[(1, j)] = Complex64::new(a[j], 0.0);
        mat[(2, j)] = c_dz[j];
        mat[(2, 3 + j)] = c_dzbar[j];
        mat[(3, j)] = f_dz[j];
        mat[(3, 3 + j)] = f_dzbar[j];
    }
    // Normalize the rows before the rank test: they carry different
    // powers of the bending constant, and the verdict should reflect
    // directions, not magnitudes.
    for i in 0..4 {
        let norm: f64 = (0..6).map(|j| mat[(i, j)].norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            for j in 0..6 {
                mat[(i, j)] /= Complex64::new(norm, 0.0);
            }
        }
    }
    let svd = mat.clone().svd(false, false);
    let mut sv = [0.0; 4];
    for (i, s) in svd.singular_values.iter().enumerate().take(4) {
        sv[i] = *s;
    }
    let rank4 = sv[3] > RANK_TOL * sv[0];
    // Lower-left 3×3 determinant and its quartic prediction.
    let d3 = |r0: [Complex64; 3], r1: [Complex64; 3], r2: [Complex64; 3]| {
        r0[0] * (r1[1] * r2[2] - r1[2] * r2[1]) - r0[1] * (r1[0] * r2[2] - r1[2] * r2[0])
            + r0[2] * (r1[0] * r2[1] - r1[1] * r2[0])
    };
    let det = d3(
        [
            Complex64::new(a[0], 0.0),
            Complex64::new(a[1], 0.0),
            Complex64::new(a[2], 0.0),
        ],
        c_dz,
        f_dz,
    );
    let quartic = quartic_prediction(model.p, &a);
    Ok(BracketReport {
        point: *x,
        a,
        c_re: [c_dz[0].re, c_dz[1].re, c_dz[2].re],
        c_im: [c_dz[0].im, c_dz[1].im, c_dz[2].im],
        f_re: [f_dz[0].re, f_dz[1].re, f_dz[2].re],
        f_im: [f_dz[0].im, f_dz[1].im, f_dz[2].im],
        singular_values: sv,
        det_re: det.re,
        det_im: det.im,
        quartic_prediction: quartic,
        det_ratio: det.norm() / quartic,
        step_stability: disagreement,
        rank4,
    })
}

/// Predicted leading size of the determinant: `3P⁴(a₁⁴+a₂⁴+a₃⁴)`.
pub fn quartic_prediction(p: f64, a: &V3) -> f64 {
    3.0 * p.powi(4) * (a[0].powi(4) + a[1].powi(4) + a[2].powi(4))
}

/// Leading coefficient of the cubic-variant determinant, reduced by the
/// frame cross-product identities to `3(a₁³+a₂³+a₃³)`; unlike the quartic
/// it vanishes on a circle of the torus.
pub fn cubic_leading_coefficient(f: &FrameValue) -> f64 {
    let (a, rho, r) = (&f.a, &f.k1, &f.k2);
    3.0 * (r[2] * (a[0] * a[0] * rho[1] - a[1] * a[1] * rho[0])
        + r[1] * (a[2] * a[2] * rho[0] - a[0] * a[0] * rho[2])
        + r[0] * (a[1] * a[1] * rho[2] - a[2] * a[2] * rho[1]))
}

/// The analogous reduction of the quartic leading coefficient to
/// `3(a₁⁴+a₂⁴+a₃⁴)` (without the `P⁴` factor).
pub fn quartic_leading_coefficient(f: &FrameValue) -> f64 {
    let (a, rho, r) = (&f.a, &f.k1, &f.k2);
    3.0 * (r[2] * (a[0].powi(3) * rho[1] - a[1].powi(3) * rho[0])
        + r[1] * (a[2].powi(3) * rho[0] - a[0].powi(3) * rho[2])
        + r[0] * (a[1].powi(3) * rho[2] - a[2].powi(3) * rho[1]))
}

// ---------------------------------------------------------------------------
// bending-constant search and transversality
// ---------------------------------------------------------------------------

/// Offset sample grid in the ball of radius `radius`: `per_axis`³ cube
/// nodes shifted off the coordinate planes, restricted to the ball and to
/// points away from the vertical axis.
pub fn ball_grid(radius: f64, per_axis: usize) -> Vec<V3> {
    let mut out = Vec::new();
    for i in 0..per_axis {
        for j in 0..per_axis {
            for k in 0..per_axis {
                let t = |n: usize| -radius + 2.0 * radius * (n as f64 + 0.37) / per_axis as f64;
                let x = [t(i), t(j), t(k)];
                if norm3(&x) <= radius && x[0].hypot(x[1]) > AXIS_MARGIN {
                    out.push(x);
                }
            }
        }
    }
    out
}

/// Result of the doubling search for the bending constant.
#[derive(Clone, Debug, Serialize)]
pub struct MinPReport {
    pub radius: f64,
    pub samples: usize,
    /// First constant (in the doubling ladder) whose rank check passes at
    /// every sample; `None` when the budget ran out.
    pub p_star: Option<f64>,
    pub doublings_used: usize,
    pub min_singular_ratio: f64,
}

/// Double the bending constant until the four iterated fields have rank 4
/// at every grid sample of the radius-`radius` ball, within `budget`
/// doublings from `P = 1`.
pub fn find_min_p(
    frame: Arc<ReebFrame>,
    radius: f64,
    per_axis: usize,
    budget: usize,
) -> Result<MinPReport, TorusError> {
    let grid = ball_grid(radius, per_axis);
    let mut p = 1.0;
    for doubling in 0..budget {
        let model = Arc::new(TorusModel {
            frame: frame.clone(),
            p,
            transverse_power: 4,
            frame_step: 1e-4,
        });
        let reports = grid
            .par_iter()
            .map(|x| bracket_rank_report(&model, x))
            .collect::<Result<Vec<_>, _>>()?;
        let min_ratio = reports
            .iter()
            .map(|r| r.singular_values[3] / r.singular_values[0])
            .fold(f64::INFINITY, f64::min);
        if reports.iter().all(|r| r.rank4) {
            return Ok(MinPReport {
                radius,
                samples: grid.len(),
                p_star: Some(p),
                doublings_used: doubling + 1,
                min_singular_ratio: min_ratio,
            });
        }
        p *= 2.0;
    }
    Ok(MinPReport {
        radius,
        samples: grid.len(),
        p_star: None,
        doublings_used: budget,
        min_singular_ratio: 0.0,
    })
}

/// Transversality of the complexified torus hypersurface and the bent
/// submanifold along the torus: the two tangent spaces must together span
/// all of C³ (real dimension 6) at every sample.
#[derive(Clone, Debug, Serialize)]
pub struct TransversalityReport {
    pub samples: usize,
    pub min_spanning_singular_value: f64,
    pub holds: bool,
}

pub fn transversality_check(model: &TorusModel, nu: usize, nv: usize) -> TransversalityReport {
    let threshold = 1e-3;
    let min_sv = torus_samples(nu, nv)
        .par_iter()
        .map(|x| {
            // Complex tangent space of the hypersurface: the complex
            // kernel of the holomorphic gradient, realified.
            let g = torus_gradient(x);
            let idx = (0..3)
                .max_by(|&i, &j| g[i].abs().partial_cmp(&g[j].abs()).unwrap())
                .unwrap();
            let (i1, i2) = ((idx + 1) % 3, (idx + 2) % 3);
            let mut v1 = [0.0; 3];
            let mut v2 = [0.0; 3];
            v1[idx] = -g[i1];
            v1[i1] = g[idx];
            v2[idx] = -g[i2];
            v2[i2] = g[idx];
            let f = model.frame.eval(x);
            // Rows: v1, i·v1, v2, i·v2 (hypersurface), the three real
            // coordinate directions and the rotated frame direction (the
            // bent submanifold).
            let mut rows: Vec<[f64; 6]> = Vec::with_capacity(8);
            rows.push([v1[0], v1[1], v1[2], 0.0, 0.0, 0.0]);
            rows.push([0.0, 0.0, 0.0, v1[0], v1[1], v1[2]]);
            rows.push([v2[0], v2[1], v2[2], 0.0, 0.0, 0.0]);
            rows.push([0.0, 0.0, 0.0, v2[0], v2[1], v2[2]]);
            rows.push([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
            rows.push([0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
            rows.push([0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
            rows.push([0.0, 0.0, 0.0, f.a[0], f.a[1], f.a[2]]);
            let mut m = DMatrix::<f64>::zeros(8, 6);
            for (r, row) in rows.iter().enumerate() {
                let scale = row.iter().map(|t| t * t).sum::<f64>().sqrt();
                for c in 0..6 {
                    m[(r, c)] = row[c] / scale;
                }
            }
            let svd = m.svd(false, false);
            svd.singular_values[5]
        })
        .reduce(|| f64::INFINITY, f64::min);
    TransversalityReport {
        samples: nu * nv,
        min_spanning_singular_value: min_sv,
        holds: min_sv > threshold,
    }
}

/// CSV summary of a batch of bracket reports:
/// `x1,x2,x3,det_ratio,sv4,rank4`.
pub fn write_report_csv(reports: &[BracketReport], path: &std::path::Path) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = String::from("x1,x2,x3,det_ratio,smallest_singular_value,rank4\n");
    for r in reports {
        out.push_str(&format!(
            "{:.6},{:.6},{:.6},{:.12e},{:.12e},{}\n",
            r.point[0], r.point[1], r.point[2], r.det_ratio, r.singular_values[3], r.rank4
        ));
    }
    std::fs::File::create(path)?.write_all(out.as_bytes())
}

// ===========================================================================
// tests
// ===========================================================================
