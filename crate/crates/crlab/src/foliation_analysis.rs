//! Characteristic foliations: leaf integration, separatrix trees at
//! hyperbolic complex tangencies, and the removability-condition checkers
//! (leaf-boundary contact, orbit escape, and the special-point sweep).
//!
//! The characteristic line field of a surface `S` inside a hypersurface `M`
//! is the intersection of the complex tangent plane of `M` with `TS`; its
//! integral curves (leaves) and their contact with a prescribed closed set
//! drive every checker in this module.  Leaves are polylines produced by
//! fourth-order Runge–Kutta integration with orientation continuation, so
//! the non-orientability of a line field never flips a trajectory mid-run.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cr_geometry::{
    characteristic_direction_pair, characteristic_direction_surface, find_complex_tangencies,
    tangency_defect, GenericGraph, GeometryError, MaximallyRealGraph, Region,
    SurfaceInHypersurface, TangencyKind, TangencyReport,
};
use crate::disc_families::ConeField;

/// Errors raised by foliation construction and the condition checkers.
#[derive(Debug, Error)]
pub enum FoliationError {
    #[error("characteristic field is singular near the requested point (defect {0:.3e})")]
    SingularField(f64),
    #[error("non-hyperbolic complex tangency at ({x:.4}, {y:.4}), invariant {lambda}")]
    NonHyperbolic { x: f64, y: f64, lambda: f64 },
    #[error("chart too small: {0}")]
    ChartTooSmall(String),
    #[error("flow-box chart is ill-conditioned (condition number {0:.3e})")]
    IllConditioned(f64),
    #[error("no integral curve of the blended field touches the closed set inside the chart")]
    NoTouchingCurve,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

// ---------------------------------------------------------------------------
// small vector helpers
// ---------------------------------------------------------------------------

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    v.iter().map(|a| a / n).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn axpy(p: &[f64], h: f64, d: &[f64]) -> Vec<f64> {
    p.iter().zip(d).map(|(a, b)| a + h * b).collect()
}

/// Flip `d` if needed so that it points into the half-space of `reference`.
fn align(mut d: Vec<f64>, reference: &[f64]) -> Vec<f64> {
    if dot(&d, reference) < 0.0 {
        for v in &mut d {
            *v = -*v;
        }
    }
    d
}

// ---------------------------------------------------------------------------
// the leaf field
// ---------------------------------------------------------------------------

/// A characteristic line field on a chart: a unit-direction evaluator plus
/// the located singular points (complex tangencies) where no direction
/// exists.  Directions carry a canonical sign; integration realigns them by
/// continuation.
#[derive(Clone)]
pub struct LeafField {
    dim: usize,
    direction: Arc<dyn Fn(&[f64]) -> Result<Vec<f64>, GeometryError> + Send + Sync>,
    pub singular_points: Vec<Vec<f64>>,
}

impl LeafField {
    /// Characteristic field of a graphed surface inside a hypersurface in
    /// C²; the singular set is located by a tangency scan over `region`.
    pub fn from_surface(s: &SurfaceInHypersurface, region: Region) -> Result<Self, FoliationError> {
        let tangencies = find_complex_tangencies(s, region)?;
        let surface = s.clone();
        Ok(Self {
            dim: 2,
            direction: Arc::new(move |p: &[f64]| {
                characteristic_direction_surface(&surface, [p[0], p[1]]).map(|d| d.to_vec())
            }),
            singular_points: tangencies.iter().map(|t| t.point.to_vec()).collect(),
        })
    }

    /// Characteristic field of a maximally real submanifold inside a generic
    /// hypersurface-like graph, in the `x`-chart of the submanifold.
    pub fn from_pair(m: &GenericGraph, m1: &MaximallyRealGraph) -> Self {
        let m = m.clone();
        let m1 = m1.clone();
        let dim = m1.n;
        Self {
            dim,
            direction: Arc::new(move |x: &[f64]| characteristic_direction_pair(&m, &m1, x)),
            singular_points: Vec::new(),
        }
    }

    /// Wrap an explicit direction function (normalized internally); useful
    /// for model foliations given by a submersion or a closed one-form.
    pub fn from_fn(dim: usize, f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self {
            dim,
            direction: Arc::new(move |p: &[f64]| {
                let d = f(p);
                let n = norm(&d);
                if n < 1e-12 {
                    return Err(GeometryError::ComplexTangency(n));
                }
                Ok(d.iter().map(|v| v / n).collect())
            }),
            singular_points: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Unit direction at `p` in the canonical sign convention.
    pub fn direction_at(&self, p: &[f64]) -> Result<Vec<f64>, FoliationError> {
        if p.len() != self.dim {
            return Err(FoliationError::DimMismatch {
                expected: self.dim,
                got: p.len(),
            });
        }
        let d = (self.direction)(p)?;
        Ok(unit(&d))
    }

    /// Unit direction at `p`, sign-aligned with `reference`.
    pub fn oriented_direction(
        &self,
        p: &[f64],
        reference: &[f64],
    ) -> Result<Vec<f64>, FoliationError> {
        Ok(align(self.direction_at(p)?, reference))
    }

    /// Sampled modulus of continuity: the largest aligned direction change
    /// over steps of size `delta` along each coordinate axis from each
    /// sample point.  Small values certify continuity away from the
    /// singular set at the sampled scale.
    pub fn continuity_modulus(&self, samples: &[Vec<f64>], delta: f64) -> f64 {
        let mut worst = 0.0_f64;
        for p in samples {
            let d0 = match self.direction_at(p) {
                Ok(d) => d,
                Err(_) => continue,
            };
            for k in 0..self.dim {
                let mut q = p.clone();
                q[k] += delta;
                if let Ok(d1) = self.oriented_direction(&q, &d0) {
                    let dev = d1
                        .iter()
                        .zip(&d0)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    worst = worst.max(dev);
                }
            }
        }
        worst
    }
}

// ---------------------------------------------------------------------------
// leaf integration
// ---------------------------------------------------------------------------

/// Why a leaf integration stopped.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub enum LeafStop {
    /// The requested arclength was exhausted.
    Completed,
    /// The trajectory entered the guard ball of a singular point (or the
    /// direction evaluator degenerated); the reported point is the last one
    /// reached.  Informational, not an error.
    NearSingular(Vec<f64>),
}

/// An integrated leaf: a polyline at uniform arclength pitch plus the stop
/// reason.
#[derive(Clone, Debug, serde::Serialize)]
pub struct Leaf {
    pub points: Vec<Vec<f64>>,
    pub stop: LeafStop,
}

impl Leaf {
    pub fn arclength(&self) -> f64 {
        self.points.windows(2).map(|w| dist(&w[0], &w[1])).sum()
    }

    /// Write the polyline as CSV with header `index,x_1,…,x_d`.
    pub fn write_csv(&self, path: &std::path::Path) -> std::io::Result<()> {
        write_polyline_csv(path, &self.points)
    }
}

/// Write a polyline as CSV with header `index,x_1,…,x_d`.
pub fn write_polyline_csv(path: &std::path::Path, points: &[Vec<f64>]) -> std::io::Result<()> {
    use std::io::Write;
    let mut out = String::new();
    let d = points.first().map(|p| p.len()).unwrap_or(0);
    out.push_str("index");
    for k in 0..d {
        out.push_str(&format!(",x_{}", k + 1));
    }
    out.push('\n');
    for (i, p) in points.iter().enumerate() {
        out.push_str(&format!("{i}"));
        for v in p {
            out.push_str(&format!(",{v:.12e}"));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())
}

/// Integrate the leaf of `field` through `p` for the given `arclength` at
/// step size `step`, by classical fourth-order Runge–Kutta on the unit
/// direction with orientation continuation.  Stops early (without error)
/// when the trajectory enters the guard ball of radius `4·step` around a
/// singular point.
pub fn integrate_leaf(
    field: &LeafField,
    p: &[f64],
    arclength: f64,
    step: f64,
) -> Result<Leaf, FoliationError> {
    let initial = field.direction_at(p)?;
    integrate_leaf_oriented(field, p, &initial, arclength, step)
}

/// Like [`integrate_leaf`] but with a prescribed initial orientation, so
/// the two half-leaves through a point can be traced separately.
pub fn integrate_leaf_oriented(
    field: &LeafField,
    p: &[f64],
    initial_direction: &[f64],
    arclength: f64,
    step: f64,
) -> Result<Leaf, FoliationError> {
    let guard = 4.0 * step;
    let near_singular = |q: &[f64]| field.singular_points.iter().any(|s| dist(q, s) < guard);
    let mut points = vec![p.to_vec()];
    let mut prev = field.oriented_direction(p, initial_direction)?;
    let steps = (arclength / step).round() as usize;
    let mut stop = LeafStop::Completed;
    for _ in 0..steps {
        let q = points.last().unwrap().clone();
        if near_singular(&q) {
            stop = LeafStop::NearSingular(q);
            break;
        }
        let stage = |pt: &[f64], reference: &[f64]| field.oriented_direction(pt, reference);
        let k1 = match stage(&q, &prev) {
            Ok(k) => k,
            Err(_) => {
                stop = LeafStop::NearSingular(q);
                break;
            }
        };
        let r = (|| -> Result<Vec<f64>, FoliationError> {
            let k2 = stage(&axpy(&q, 0.5 * step, &k1), &k1)?;
            let k3 = stage(&axpy(&q, 0.5 * step, &k2), &k2)?;
            let k4 = stage(&axpy(&q, step, &k3), &k3)?;
            Ok(q.iter()
                .enumerate()
                .map(|(i, v)| v + step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect())
        })();
        let next = match r {
            Ok(next) => next,
            Err(_) => {
                stop = LeafStop::NearSingular(q);
                break;
            }
        };
        match field.oriented_direction(&next, &k1) {
            Ok(d) => prev = d,
            Err(_) => {
                stop = LeafStop::NearSingular(next.clone());
                points.push(next);
                break;
            }
        }
        points.push(next);
    }
    Ok(Leaf { points, stop })
}

// ---------------------------------------------------------------------------
// closed-set samples
// ---------------------------------------------------------------------------

/// A closed subset of a chart, given by a membership predicate together
/// with a representative point cloud and a thickening radius `epsilon`.
/// Membership queries are conservative: within `epsilon` of the cloud
/// counts as inside.
#[derive(Clone)]
pub struct ClosedSetSample {
    pub predicate: Arc<dyn Fn(&[f64]) -> bool + Send + Sync>,
    pub points: Vec<Vec<f64>>,
    pub epsilon: f64,
}

impl ClosedSetSample {
    pub fn new(
        predicate: impl Fn(&[f64]) -> bool + Send + Sync + 'static,
        points: Vec<Vec<f64>>,
        epsilon: f64,
    ) -> Self {
        Self {
            predicate: Arc::new(predicate),
            points,
            epsilon,
        }
    }

    /// A closed set described by its point cloud only: the predicate is
    /// "within `epsilon` of some sample".
    pub fn from_points(points: Vec<Vec<f64>>, epsilon: f64) -> Self {
        let cloud = points.clone();
        Self {
            predicate: Arc::new(move |p: &[f64]| cloud.iter().any(|q| dist(p, q) <= epsilon)),
            points,
            epsilon,
        }
    }

    /// Conservative membership: the predicate holds or the point is within
    /// `epsilon` of the representative cloud.
    pub fn contains(&self, p: &[f64]) -> bool {
        (self.predicate)(p) || self.points.iter().any(|q| dist(p, q) <= self.epsilon)
    }

    /// Check that the stored cloud is consistent with the predicate at the
    /// sample scale (every representative point is a member).
    pub fn validate(&self) -> bool {
        self.points.iter().all(|p| self.contains(p))
    }
}

// ---------------------------------------------------------------------------
// separatrices and the hyperbolic tree
// ---------------------------------------------------------------------------

/// One separatrix: launched from hyperbolic point `from` along a saddle
/// eigen-direction, ending either at hyperbolic point `to` or on the chart
/// boundary (`to = None`).
#[derive(Clone, Debug, serde::Serialize)]
pub struct Separatrix {
    pub from: usize,
    pub to: Option<usize>,
    pub points: Vec<Vec<f64>>,
}

/// The separatrix graph of a surface whose complex tangencies are all
/// hyperbolic: the saddle points, the four separatrices of each, the
/// saddle-to-saddle adjacency, and the acyclicity flag.
#[derive(Clone, Debug, serde::Serialize)]
pub struct HyperbolicTree {
    pub points: Vec<TangencyReport>,
    pub separatrices: Vec<Separatrix>,
    /// Undirected saddle-connection edges `(i, j)` with `i ≤ j`, after
    /// merging the two traced copies of each connection.
    pub adjacency: Vec<(usize, usize)>,
    pub is_tree: bool,
}

impl HyperbolicTree {
    /// Write every separatrix as CSV rows `separatrix,index,x,y`.
    pub fn write_csv(&self, path: &std::path::Path) -> std::io::Result<()> {
        use std::io::Write;
        let mut out = String::from("separatrix,index,x,y\n");
        for (s, sep) in self.separatrices.iter().enumerate() {
            for (i, p) in sep.points.iter().enumerate() {
                out.push_str(&format!("{s},{i},{:.12e},{:.12e}\n", p[0], p[1]));
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(out.as_bytes())
    }
}

/// Assemble a [`HyperbolicTree`] from located saddles and traced
/// separatrices: saddle-to-saddle connections are merged pairwise (each
/// connection is traced once from each end), and a cycle exists when some
/// connection is homoclinic, two saddles are joined by more than one
/// connection, or the connection graph contains a loop.
pub fn assemble_tree(points: Vec<TangencyReport>, separatrices: Vec<Separatrix>) -> HyperbolicTree {
    let mut pair_count: std::collections::BTreeMap<(usize, usize), usize> =
        std::collections::BTreeMap::new();
    for sep in &separatrices {
        if let Some(j) = sep.to {
            let key = (sep.from.min(j), sep.from.max(j));
            *pair_count.entry(key).or_insert(0) += 1;
        }
    }
    // Each saddle connection appears twice in the trace (once per end);
    // homoclinic loops launched from two eigen-directions also appear twice.
    let mut adjacency = Vec::new();
    let mut cycle = false;
    let mut parent: Vec<usize> = (0..points.len()).collect();
    fn root(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (&(i, j), &count) in &pair_count {
        let edges = count.div_ceil(2);
        for e in 0..edges {
            adjacency.push((i, j));
            if i == j || e > 0 {
                cycle = true;
                continue;
            }
            let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
            if ri == rj {
                cycle = true;
            } else {
                parent[ri] = rj;
            }
        }
    }
    HyperbolicTree {
        points,
        separatrices,
        adjacency,
        is_tree: !cycle,
    }
}

/// Eigen-directions of a 2×2 matrix with real spectrum; requires a saddle
/// (negative determinant).
fn saddle_eigenvectors(a: [[f64; 2]; 2]) -> Option<[[f64; 2]; 2]> {
    let tr = a[0][0] + a[1][1];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det >= 0.0 {
        return None;
    }
    let disc = (tr * tr - 4.0 * det).sqrt();
    let mut vecs = [[0.0; 2]; 2];
    for (slot, lambda) in [(0, 0.5 * (tr + disc)), (1, 0.5 * (tr - disc))] {
        // Rows of (A − λI) are both orthogonal to the eigenvector; use the
        // better-conditioned one.
        let r1 = [a[0][0] - lambda, a[0][1]];
        let r2 = [a[1][0], a[1][1] - lambda];
        let v = if norm(&r1) > norm(&r2) {
            [-r1[1], r1[0]]
        } else {
            [-r2[1], r2[0]]
        };
        let n = norm(&v);
        vecs[slot] = [v[0] / n, v[1] / n];
    }
    Some(vecs)
}

/// Trace the separatrix structure of the surface `s` over `region`: every
/// complex tangency must be hyperbolic; from each saddle the four
/// separatrices are launched along the eigen-directions of the linearized
/// rotated-defect field and integrated until they leave the region or reach
/// another saddle.
pub fn separatrix_tree(
    s: &SurfaceInHypersurface,
    region: Region,
) -> Result<HyperbolicTree, FoliationError> {
    let reports = find_complex_tangencies(s, region)?;
    for r in &reports {
        if r.kind != TangencyKind::Hyperbolic {
            return Err(FoliationError::NonHyperbolic {
                x: r.point[0],
                y: r.point[1],
                lambda: r.lambda,
            });
        }
    }
    let field = LeafField {
        dim: 2,
        direction: {
            let surface = s.clone();
            Arc::new(move |p: &[f64]| {
                characteristic_direction_surface(&surface, [p[0], p[1]]).map(|d| d.to_vec())
            })
        },
        singular_points: reports.iter().map(|r| r.point.to_vec()).collect(),
    };
    // Rotated-defect field V = (−d₂, d₁): the (unnormalized) characteristic
    // field, smooth through the saddle.
    let raw = |p: [f64; 2]| -> [f64; 2] {
        let d = tangency_defect(s, p);
        [-d[1], d[0]]
    };
    let diag =
        ((region.x_max - region.x_min).powi(2) + (region.y_max - region.y_min).powi(2)).sqrt();
    let step = diag / 2048.0;
    // Launch just outside the guard ball of the launching saddle; on a
    // quadric model the eigen-directions lie exactly on the separatrices,
    // so the offset point is on the traced leaf to high accuracy.
    let launch_offset = 8.0 * step;
    let mut separatrices = Vec::new();
    for (idx, report) in reports.iter().enumerate() {
        let p0 = report.point;
        let fd = 1e-5;
        let mut jac = [[0.0; 2]; 2];
        for col in 0..2 {
            let mut hi = p0;
            let mut lo = p0;
            hi[col] += fd;
            lo[col] -= fd;
            let vh = raw(hi);
            let vl = raw(lo);
            for row in 0..2 {
                jac[row][col] = (vh[row] - vl[row]) / (2.0 * fd);
            }
        }
        let eigen = saddle_eigenvectors(jac).ok_or(FoliationError::NonHyperbolic {
            x: p0[0],
            y: p0[1],
            lambda: report.lambda,
        })?;
        for v in eigen {
            for sign in [1.0, -1.0] {
                let dir = [sign * v[0], sign * v[1]];
                let start = [
                    p0[0] + launch_offset * dir[0],
                    p0[1] + launch_offset * dir[1],
                ];
                let leaf =
                    integrate_leaf_truncated(&field, &start, &dir, 2.0 * diag, step, region)?;
                let endpoint = leaf
                    .points
                    .last()
                    .cloned()
                    .unwrap_or_else(|| start.to_vec());
                let to = reports
                    .iter()
                    .enumerate()
                    .filter(|(j, r)| {
                        // Ignore the guard ball of the launching saddle while
                        // the trajectory is still short.
                        let d = dist(&endpoint, &r.point);
                        d < 8.0 * step && (*j != idx || leaf.arclength() > 32.0 * step)
                    })
                    .map(|(j, _)| j)
                    .next();
                let mut points = vec![p0.to_vec()];
                points.extend(leaf.points);
                separatrices.push(Separatrix {
                    from: idx,
                    to,
                    points,
                });
            }
        }
    }
    Ok(assemble_tree(reports, separatrices))
}

/// Leaf integration clipped to a rectangular region (2D charts).
fn integrate_leaf_truncated(
    field: &LeafField,
    p: &[f64],
    initial_direction: &[f64],
    arclength: f64,
    step: f64,
    region: Region,
) -> Result<Leaf, FoliationError> {
    let mut leaf = integrate_leaf_oriented(field, p, initial_direction, arclength, step)?;
    let inside = |q: &[f64]| {
        q[0] >= region.x_min && q[0] <= region.x_max && q[1] >= region.y_min && q[1] <= region.y_max
    };
    if let Some(cut) = leaf.points.iter().position(|q| !inside(q)) {
        leaf.points.truncate(cut + 1);
        leaf.stop = LeafStop::Completed;
    }
    Ok(leaf)
}

// ---------------------------------------------------------------------------
// flow boxes
// ---------------------------------------------------------------------------

/// A straightened chart for a nonsingular piece of the foliation: leaves
/// are traced from a transversal seed grid, so the pair (seed index, step
/// index) is a chart in which the leaves are parallel coordinate lines.
pub struct FlowBox {
    pub dim: usize,
    pub center: Vec<f64>,
    /// Leaf direction at the chart center.
    pub axis: Vec<f64>,
    /// Orthonormal basis of the transversal at the center (`dim − 1`
    /// vectors).
    pub basis: Vec<Vec<f64>>,
    pub half_width: f64,
    /// Offsets along each transversal basis vector.
    pub s_axes: Vec<Vec<f64>>,
    /// Transversal coordinates of each seed, flattened in row-major order.
    pub s_points: Vec<Vec<f64>>,
    /// The leaf through each seed, as a polyline of `2·steps + 1` points
    /// at uniform arclength pitch (seed in the middle).
    pub leaves: Vec<Vec<Vec<f64>>>,
    pub step: f64,
    pub condition_number: f64,
}

impl FlowBox {
    fn grid_shape(&self) -> Vec<usize> {
        self.s_axes.iter().map(|a| a.len()).collect()
    }

    fn unflatten(&self, mut idx: usize) -> Vec<usize> {
        let shape = self.grid_shape();
        let mut multi = vec![0; shape.len()];
        for k in (0..shape.len()).rev() {
            multi[k] = idx % shape[k];
            idx /= shape[k];
        }
        multi
    }

    fn flatten(&self, multi: &[usize]) -> usize {
        let shape = self.grid_shape();
        let mut idx = 0;
        for k in 0..shape.len() {
            idx = idx * shape[k] + multi[k];
        }
        idx
    }

    fn neighbors(&self, idx: usize) -> Vec<usize> {
        let shape = self.grid_shape();
        let multi = self.unflatten(idx);
        let mut out = Vec::new();
        for k in 0..shape.len() {
            if multi[k] > 0 {
                let mut m = multi.clone();
                m[k] -= 1;
                out.push(self.flatten(&m));
            }
            if multi[k] + 1 < shape[k] {
                let mut m = multi.clone();
                m[k] += 1;
                out.push(self.flatten(&m));
            }
        }
        out
    }

    /// Ambient seed point of leaf `i`.
    pub fn seed(&self, i: usize) -> Vec<f64> {
        let mut p = self.center.clone();
        for (k, b) in self.basis.iter().enumerate() {
            for (pc, bc) in p.iter_mut().zip(b) {
                *pc += self.s_points[i][k] * bc;
            }
        }
        p
    }

    /// The transversal seed line through the chart center along the first
    /// basis vector, as a polyline (used as the reported transversal).
    pub fn transversal_polyline(&self) -> Vec<Vec<f64>> {
        self.s_axes[0]
            .iter()
            .map(|&s| axpy(&self.center, s, &self.basis[0]))
            .collect()
    }
}

/// Build a flow box of the foliation around `center`: leaves are traced to
/// arclength `half_width` on both sides of a transversal seed grid, and
/// the chart is accepted only if its Jacobian is well-conditioned
/// (condition number below `1e3`).
pub fn build_flow_box(
    field: &LeafField,
    center: &[f64],
    half_width: f64,
    steps: usize,
) -> Result<FlowBox, FoliationError> {
    let dim = field.dim();
    let axis = field.direction_at(center)?;
    // Orthonormal transversal basis: Gram–Schmidt of the coordinate axes
    // against the leaf direction.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for k in 0..dim {
        let mut v = vec![0.0; dim];
        v[k] = 1.0;
        let mut w = v.clone();
        let a = dot(&w, &axis);
        for (wc, ac) in w.iter_mut().zip(&axis) {
            *wc -= a * ac;
        }
        for b in &basis {
            let c = dot(&w, b);
            for (wc, bc) in w.iter_mut().zip(b) {
                *wc -= c * bc;
            }
        }
        if norm(&w) > 1e-6 {
            basis.push(unit(&w));
        }
        if basis.len() == dim - 1 {
            break;
        }
    }
    if basis.len() != dim - 1 {
        return Err(FoliationError::ChartTooSmall(
            "could not complete a transversal basis".into(),
        ));
    }
    let per_axis = match dim - 1 {
        1 => 65,
        2 => 17,
        _ => 9,
    };
    let s_axes: Vec<Vec<f64>> = (0..dim - 1)
        .map(|_| {
            (0..per_axis)
                .map(|i| -half_width + 2.0 * half_width * i as f64 / (per_axis - 1) as f64)
                .collect()
        })
        .collect();
    let mut s_points = vec![Vec::new()];
    for axis_vals in &s_axes {
        let mut next = Vec::new();
        for prefix in &s_points {
            for &v in axis_vals {
                let mut p = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        s_points = next;
    }
    let step = half_width / steps as f64;
    let mut leaves = Vec::with_capacity(s_points.len());
    for s in &s_points {
        let mut seed = center.to_vec();
        for (k, b) in basis.iter().enumerate() {
            for (pc, bc) in seed.iter_mut().zip(b) {
                *pc += s[k] * bc;
            }
        }
        let d0 = field.oriented_direction(&seed, &axis)?;
        let fwd = integrate_leaf_oriented(field, &seed, &d0, half_width, step)?;
        let neg: Vec<f64> = d0.iter().map(|v| -v).collect();
        let bwd = integrate_leaf_oriented(field, &seed, &neg, half_width, step)?;
        if fwd.stop != LeafStop::Completed || bwd.stop != LeafStop::Completed {
            return Err(FoliationError::SingularField(0.0));
        }
        let mut poly: Vec<Vec<f64>> = bwd.points.iter().skip(1).rev().cloned().collect();
        poly.extend(fwd.points);
        leaves.push(poly);
    }
    let mut bx = FlowBox {
        dim,
        center: center.to_vec(),
        axis,
        basis,
        half_width,
        s_axes,
        s_points,
        leaves,
        step,
        condition_number: 0.0,
    };
    bx.condition_number = flow_box_condition(&bx)?;
    if bx.condition_number > 1e3 {
        return Err(FoliationError::IllConditioned(bx.condition_number));
    }
    Ok(bx)
}

/// Condition number of the straightening Jacobian, sampled at interior
/// chart nodes: columns are the leaf tangent and the transversal
/// difference quotients.
fn flow_box_condition(bx: &FlowBox) -> Result<f64, FoliationError> {
    let dim = bx.dim;
    let shape = bx.grid_shape();
    let mid_leaf = bx.leaves[0].len() / 2;
    let mut worst: f64 = 1.0;
    let probes = [mid_leaf / 2, mid_leaf, mid_leaf + mid_leaf / 2];
    for leaf_idx in 0..bx.leaves.len() {
        let multi = bx.unflatten(leaf_idx);
        if multi
            .iter()
            .zip(&shape)
            .any(|(&m, &s)| m == 0 || m + 1 >= s)
        {
            continue;
        }
        // Keep the cost bounded: probe a subsample of interior leaves.
        if leaf_idx % 7 != 0 && leaf_idx != bx.leaves.len() / 2 {
            continue;
        }
        for &j in &probes {
            if j == 0 || j + 1 >= bx.leaves[leaf_idx].len() {
                continue;
            }
            let mut mat = DMatrix::zeros(dim, dim);
            let tangent: Vec<f64> = (0..dim)
                .map(|r| {
                    (bx.leaves[leaf_idx][j + 1][r] - bx.leaves[leaf_idx][j - 1][r])
                        / (2.0 * bx.step)
                })
                .collect();
            for r in 0..dim {
                mat[(r, 0)] = tangent[r];
            }
            for k in 0..dim - 1 {
                let mut up = multi.clone();
                let mut dn = multi.clone();
                up[k] += 1;
                dn[k] -= 1;
                let iu = bx.flatten(&up);
                let id = bx.flatten(&dn);
                let ds = bx.s_axes[k][up[k]] - bx.s_axes[k][dn[k]];
                for r in 0..dim {
                    mat[(r, k + 1)] = (bx.leaves[iu][j][r] - bx.leaves[id][j][r]) / ds;
                }
            }
            let svd = mat.svd(false, false);
            let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
            let smin = svd
                .singular_values
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            if smin <= 0.0 {
                return Err(FoliationError::IllConditioned(f64::INFINITY));
            }
            worst = worst.max(smax / smin);
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// condition verdicts
// ---------------------------------------------------------------------------

/// Three-valued outcome of a condition checker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum VerdictStatus {
    Holds,
    Fails,
    Inconclusive,
}

/// A re-checkable witness: a curve in a single leaf touching the closed
/// set at `touch_point`, the transversal it was found over, and the
/// projected contact point on that transversal.
#[derive(Clone, Debug, serde::Serialize)]
pub struct Witness {
    pub curve: Vec<Vec<f64>>,
    pub transversal: Vec<Vec<f64>>,
    pub boundary_point: Vec<f64>,
    pub touch_point: Vec<f64>,
}

/// Outcome of a removability-condition check, with a witness when the
/// condition holds and diagnostics describing the violating structure when
/// it fails.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ConditionVerdict {
    pub status: VerdictStatus,
    pub witness: Option<Witness>,
    pub diagnostics: Vec<String>,
}

impl ConditionVerdict {
    pub fn holds(&self) -> bool {
        self.status == VerdictStatus::Holds
    }
}

/// Tunables for the flow-box contact search.
#[derive(Clone, Debug)]
pub struct ConditionConfig {
    /// Chart center; defaults to the cloud centroid.
    pub center: Option<Vec<f64>>,
    /// Chart half width; defaults to 1.5× the cloud radius about the center.
    pub half_width: Option<f64>,
    /// Leaf integration steps per half width.
    pub leaf_steps: usize,
}

impl Default for ConditionConfig {
    fn default() -> Self {
        Self {
            center: None,
            half_width: None,
            leaf_steps: 96,
        }
    }
}

struct ContactScan {
    bx: FlowBox,
    occupied: Vec<bool>,
    /// Index of the first occupied leaf reached from the largest free
    /// region, and the free leaf it was reached from.
    contact: Option<(usize, usize)>,
    /// Leaf indices of the largest free connected component.
    free_component: Vec<usize>,
}

fn scan_contacts(
    field: &LeafField,
    c: &ClosedSetSample,
    cfg: &ConditionConfig,
) -> Result<ContactScan, FoliationError> {
    if c.points.is_empty() {
        return Err(FoliationError::ChartTooSmall(
            "closed set has no representative points".into(),
        ));
    }
    let dim = field.dim();
    let centroid: Vec<f64> = (0..dim)
        .map(|k| c.points.iter().map(|p| p[k]).sum::<f64>() / c.points.len() as f64)
        .collect();
    let center = match &cfg.center {
        Some(p) => p.clone(),
        None => {
            // The centroid may be singular; fall back to cloud points.
            if field.direction_at(&centroid).is_ok() {
                centroid.clone()
            } else {
                c.points
                    .iter()
                    .find(|p| field.direction_at(p).is_ok())
                    .cloned()
                    .ok_or(FoliationError::SingularField(0.0))?
            }
        }
    };
    let radius = c
        .points
        .iter()
        .map(|p| dist(p, &center))
        .fold(0.0_f64, f64::max);
    let half_width = cfg.half_width.unwrap_or((1.5 * radius).max(0.5));
    let bx = build_flow_box(field, &center, half_width, cfg.leaf_steps)?;
    let occupied: Vec<bool> = bx
        .leaves
        .par_iter()
        .map(|leaf| leaf.iter().any(|p| c.contains(p)))
        .collect();
    if !occupied.iter().any(|&o| o) {
        return Err(FoliationError::ChartTooSmall(
            "no leaf of the flow box meets the closed set".into(),
        ));
    }
    // Connected components of the free region on the transversal grid.
    let total = occupied.len();
    let mut component = vec![usize::MAX; total];
    let mut components: Vec<Vec<usize>> = Vec::new();
    for start in 0..total {
        if occupied[start] || component[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut queue = vec![start];
        component[start] = id;
        let mut members = Vec::new();
        while let Some(i) = queue.pop() {
            members.push(i);
            for j in bx.neighbors(i) {
                if !occupied[j] && component[j] == usize::MAX {
                    component[j] = id;
                    queue.push(j);
                }
            }
        }
        components.push(members);
    }
    let free_component = components
        .into_iter()
        .max_by_key(|m| m.len())
        .unwrap_or_default();
    // First contact: an occupied leaf adjacent to the largest free
    // component, in deterministic grid order.
    let mut contact = None;
    'outer: for &i in &free_component {
        for j in bx.neighbors(i) {
            if occupied[j] {
                contact = Some((j, i));
                break 'outer;
            }
        }
    }
    Ok(ContactScan {
        bx,
        occupied,
        contact,
        free_component,
    })
}

/// Check the leaf-contact condition for the closed set `C`: straighten the
/// foliation on a flow box, project `C` along the leaves to the
/// transversal, and sweep from a `C`-free region until first contact.  On
/// success the witness is a curve inside a single leaf whose interior
/// point touches `C` while its endpoints stay outside; the check fails
/// when every leaf of the box meets `C` (no free region to sweep from).
pub fn check_characteristic_condition(
    field: &LeafField,
    c: &ClosedSetSample,
    cfg: &ConditionConfig,
) -> Result<ConditionVerdict, FoliationError> {
    let scan = scan_contacts(field, c, cfg)?;
    let bx = &scan.bx;
    if scan.free_component.is_empty() {
        return Ok(ConditionVerdict {
            status: VerdictStatus::Fails,
            witness: None,
            diagnostics: vec![
                "every leaf of the flow box meets the closed set; the projection to the \
                 transversal has no free region to sweep from"
                    .into(),
                format!(
                    "flow box: center {:?}, half width {:.3}, {} leaves, condition number {:.2}",
                    bx.center,
                    bx.half_width,
                    bx.leaves.len(),
                    bx.condition_number
                ),
            ],
        });
    }
    let (contact_leaf, free_leaf) = match scan.contact {
        Some(pair) => pair,
        None => {
            return Ok(ConditionVerdict {
                status: VerdictStatus::Inconclusive,
                witness: None,
                diagnostics: vec![
                    "the free region is not adjacent to any occupied leaf (occupied set \
                     disconnected from the swept region)"
                        .into(),
                ],
            })
        }
    };
    let leaf = &bx.leaves[contact_leaf];
    let touch_idx = leaf
        .iter()
        .position(|p| c.contains(p))
        .expect("contact leaf meets the set");
    // Trim the witness so its endpoints are outside the set.
    let left = (0..touch_idx).rev().find(|&i| !c.contains(&leaf[i]));
    let right = (touch_idx + 1..leaf.len()).find(|&i| !c.contains(&leaf[i]));
    let (lo, hi) = match (left, right) {
        (Some(l), Some(r)) => (l, r),
        _ => {
            return Ok(ConditionVerdict {
                status: VerdictStatus::Inconclusive,
                witness: None,
                diagnostics: vec![
                    "the contact leaf is covered by the set up to the chart boundary; no \
                     witness curve with free endpoints exists in this chart"
                        .into(),
                ],
            })
        }
    };
    let witness = Witness {
        curve: leaf[lo..=hi].to_vec(),
        transversal: bx.transversal_polyline(),
        boundary_point: bx.seed(contact_leaf),
        touch_point: leaf[touch_idx].clone(),
    };
    let mut diagnostics = vec![format!(
        "first contact at leaf {} swept from free leaf {}; {} of {} leaves meet the set",
        contact_leaf,
        free_leaf,
        scan.occupied.iter().filter(|&&o| o).count(),
        scan.occupied.len()
    )];
    if field.dim() == 2 {
        // On a 1-dimensional transversal, record when the projection lies
        // entirely on one closed side of the contact leaf.
        let one_side = scan
            .occupied
            .iter()
            .enumerate()
            .filter(|(_, &o)| o)
            .all(|(i, _)| i >= contact_leaf)
            || scan
                .occupied
                .iter()
                .enumerate()
                .filter(|(_, &o)| o)
                .all(|(i, _)| i <= contact_leaf);
        if one_side {
            diagnostics.push("the set lies on one closed side of the witness leaf".into());
        }
    }
    // Re-validate the witness independently.
    debug_assert!(c.contains(&witness.touch_point));
    debug_assert!(!c.contains(&witness.curve[0]));
    debug_assert!(!c.contains(witness.curve.last().unwrap()));
    Ok(ConditionVerdict {
        status: VerdictStatus::Holds,
        witness: Some(witness),
        diagnostics,
    })
}

// ---------------------------------------------------------------------------
// orbit condition
// ---------------------------------------------------------------------------

/// A smooth ambient vector field given by its chart components.
pub type VectorField = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Budgets for the randomized orbit search.
#[derive(Clone, Debug)]
pub struct OrbitConfig {
    /// Random orbits attempted from each sample point.
    pub trials: usize,
    /// Integration steps per orbit.
    pub max_steps: usize,
    /// Steps between random re-selections of field and direction.
    pub segment_steps: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for OrbitConfig {
    fn default() -> Self {
        Self {
            trials: 16,
            max_steps: 400,
            segment_steps: 25,
            step: 0.02,
            seed: 7,
        }
    }
}

/// Check the orbit condition for `C` against a frame of complex-tangent
/// vector fields: from every sample point of `C`, random piecewise
/// integral curves of the frame try to escape `C`.  Holds when every
/// sample escapes within budget; fails with a trapped-orbit certificate
/// (an orbit hull contained in `C`) when some sample cannot escape but its
/// orbits do move; inconclusive when the trapped orbits never leave the
/// sample scale (the budget cannot distinguish a trap from a degenerate
/// frame).
pub fn check_orbit_condition(
    frame: &[VectorField],
    c: &ClosedSetSample,
    cfg: &OrbitConfig,
) -> ConditionVerdict {
    if frame.is_empty() || c.points.is_empty() {
        return ConditionVerdict {
            status: VerdictStatus::Inconclusive,
            witness: None,
            diagnostics: vec!["empty frame or empty sample cloud".into()],
        };
    }
    #[derive(Clone)]
    enum PointOutcome {
        Escaped(usize),
        Trapped { orbit: Vec<Vec<f64>>, moved: f64 },
    }
    let outcomes: Vec<PointOutcome> = c
        .points
        .par_iter()
        .enumerate()
        .map(|(pi, start)| {
            let mut best: Option<usize> = None;
            let mut trapped_orbit: Vec<Vec<f64>> = Vec::new();
            let mut moved = 0.0_f64;
            for trial in 0..cfg.trials {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(cfg.seed ^ ((pi as u64) << 24) ^ trial as u64);
                let mut p = start.clone();
                let mut orbit = vec![p.clone()];
                let mut escaped_at = None;
                let mut field_idx = 0usize;
                let mut sign = 1.0;
                for step_no in 0..cfg.max_steps {
                    if step_no % cfg.segment_steps == 0 {
                        field_idx = rng.gen_range(0..frame.len());
                        sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    }
                    let f = |q: &[f64]| -> Vec<f64> {
                        frame[field_idx](q).iter().map(|v| sign * v).collect()
                    };
                    let k1 = f(&p);
                    let k2 = f(&axpy(&p, 0.5 * cfg.step, &k1));
                    let k3 = f(&axpy(&p, 0.5 * cfg.step, &k2));
                    let k4 = f(&axpy(&p, cfg.step, &k3));
                    p = p
                        .iter()
                        .enumerate()
                        .map(|(i, v)| {
                            v + cfg.step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                        })
                        .collect();
                    orbit.push(p.clone());
                    if !c.contains(&p) {
                        escaped_at = Some(step_no + 1);
                        break;
                    }
                }
                moved = moved.max(orbit.iter().map(|q| dist(q, start)).fold(0.0_f64, f64::max));
                match escaped_at {
                    Some(s) => {
                        best = Some(best.map_or(s, |b: usize| b.min(s)));
                        break;
                    }
                    None => trapped_orbit = orbit,
                }
            }
            match best {
                Some(s) => PointOutcome::Escaped(s),
                None => PointOutcome::Trapped {
                    orbit: trapped_orbit,
                    moved,
                },
            }
        })
        .collect();
    let mut max_escape = 0usize;
    let mut trapped: Option<(usize, Vec<Vec<f64>>, f64)> = None;
    for (i, o) in outcomes.iter().enumerate() {
        match o {
            PointOutcome::Escaped(s) => max_escape = max_escape.max(*s),
            PointOutcome::Trapped { orbit, moved } => {
                let keep = match &trapped {
                    Some((_, _, m)) => *moved > *m,
                    None => true,
                };
                if keep {
                    trapped = Some((i, orbit.clone(), *moved));
                }
            }
        }
    }
    match trapped {
        None => ConditionVerdict {
            status: VerdictStatus::Holds,
            witness: None,
            diagnostics: vec![format!(
                "all {} sample points escaped; slowest escape took {} steps",
                c.points.len(),
                max_escape
            )],
        },
        Some((i, orbit, moved)) => {
            if moved < c.epsilon {
                ConditionVerdict {
                    status: VerdictStatus::Inconclusive,
                    witness: None,
                    diagnostics: vec![format!(
                        "sample point {i} never escaped, but its orbits stayed within {moved:.3e} \
                         (below the sample scale {:.3e}); the budget cannot separate a trap from \
                         a degenerate frame",
                        c.epsilon
                    )],
                }
            } else {
                // Certificate: the trapped orbit hull is inside the set.
                debug_assert!(orbit.iter().all(|p| c.contains(p)));
                ConditionVerdict {
                    status: VerdictStatus::Fails,
                    witness: Some(Witness {
                        curve: orbit,
                        transversal: Vec::new(),
                        boundary_point: c.points[i].clone(),
                        touch_point: c.points[i].clone(),
                    }),
                    diagnostics: vec![format!(
                        "trapped orbit from sample point {i}: explored up to distance {moved:.3e} \
                         without leaving the set"
                    )],
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// the special point
// ---------------------------------------------------------------------------

/// Output of the special-point sweep: the first contact point of the
/// blended flow with the closed set, the blended tangent there, and the
/// verified supporting data.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SpecialPoint {
    pub point: Vec<f64>,
    /// Unit blended tangent at the contact point.
    pub direction: Vec<f64>,
    /// Blending weight actually used.
    pub lambda: f64,
    /// The touching integral curve (the local supporting curve lives on it).
    pub curve: Vec<Vec<f64>>,
    /// Fraction of nearby set samples on the expected closed side of the
    /// supporting curve.
    pub side_fraction: f64,
    /// Best cone-membership cosine of `direction`, minus the acceptance
    /// threshold.
    pub cone_margin: f64,
}

/// Tunables for the special-point sweep.
#[derive(Clone, Debug)]
pub struct SweepConfig {
    /// Initial blending weight toward the characteristic direction.
    pub lambda: f64,
    pub bisection_iters: usize,
    /// Cosine threshold for the cone-membership margin.
    pub cone_threshold: f64,
    pub condition: ConditionConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lambda: 0.9,
            bisection_iters: 40,
            cone_threshold: 0.95,
            condition: ConditionConfig::default(),
        }
    }
}

/// Find a special contact point of the closed set: blend the
/// characteristic field toward the central cone direction
/// (`v^λ = λ·X + (1−λ)·v`), integrate the blended flow lines from the
/// `C`-free side of the flow box, and bisect the transversal offset to the
/// first line touching `C`.  The returned tangent is checked against the
/// filled cone and the touching line is checked to locally support `C` on
/// one side.
pub fn find_special_point(
    field: &LeafField,
    c: &ClosedSetSample,
    cone: &ConeField,
    cfg: &SweepConfig,
) -> Result<SpecialPoint, FoliationError> {
    let scan = scan_contacts(field, c, &cfg.condition)?;
    let bx = &scan.bx;
    let (contact_leaf, free_leaf) = scan.contact.ok_or(FoliationError::NoTouchingCurve)?;
    if scan.free_component.is_empty() {
        return Err(FoliationError::NoTouchingCurve);
    }
    // Sweep direction in transversal coordinates: from the far end of the
    // free component straight toward the contact leaf.
    let s_contact = &bx.s_points[contact_leaf];
    let far_free = scan
        .free_component
        .iter()
        .max_by(|&&a, &&b| {
            let da: f64 = bx.s_points[a]
                .iter()
                .zip(s_contact)
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            let db: f64 = bx.s_points[b]
                .iter()
                .zip(s_contact)
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            da.partial_cmp(&db).unwrap()
        })
        .copied()
        .unwrap_or(free_leaf);
    let s_start = bx.s_points[far_free].clone();
    let e: Vec<f64> = unit(
        &s_contact
            .iter()
            .zip(&s_start)
            .map(|(a, b)| a - b)
            .collect::<Vec<f64>>(),
    );
    let o_max = dist(s_contact, &s_start);
    // Central cone direction nearest to a point.
    let cone_direction = |p: &[f64]| -> Vec<f64> {
        let idx = cone
            .base_points
            .iter()
            .enumerate()
            .min_by(|a, b| dist(a.1, p).partial_cmp(&dist(b.1, p)).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        cone.generators[idx][0].clone()
    };
    // Trace one blended flow line from transversal offset `o` (both
    // directions), returning the polyline and the first point inside the
    // set together with the blended direction there.
    let trace = |o: f64,
                 lambda: f64|
     -> Result<(Vec<Vec<f64>>, Option<(usize, Vec<f64>)>), FoliationError> {
        let mut seed = bx.center.clone();
        for (k, b) in bx.basis.iter().enumerate() {
            let s = s_start[k] + o * e[k];
            for (pc, bc) in seed.iter_mut().zip(b) {
                *pc += s * bc;
            }
        }
        let blended = |p: &[f64], reference: &[f64]| -> Result<Vec<f64>, FoliationError> {
            let x = field.oriented_direction(p, reference)?;
            let v = cone_direction(p);
            let w: Vec<f64> = x
                .iter()
                .zip(&v)
                .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
                .collect();
            let n = norm(&w);
            if n < 1e-9 {
                return Err(FoliationError::SingularField(n));
            }
            Ok(w.iter().map(|a| a / n).collect())
        };
        let mut poly = Vec::new();
        for orient in [1.0_f64, -1.0] {
            let reference: Vec<f64> = bx.axis.iter().map(|a| orient * a).collect();
            let mut p = seed.clone();
            let mut prev = blended(&p, &reference)?;
            let mut branch = vec![p.clone()];
            let steps = (bx.half_width / bx.step).round() as usize;
            for _ in 0..steps {
                let k1 = prev.clone();
                let k2 = blended(&axpy(&p, 0.5 * bx.step, &k1), &k1)?;
                let k3 = blended(&axpy(&p, 0.5 * bx.step, &k2), &k2)?;
                let k4 = blended(&axpy(&p, bx.step, &k3), &k3)?;
                p = p
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v + bx.step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                    .collect();
                if dist(&p, &bx.center) > 2.5 * bx.half_width {
                    break;
                }
                prev = blended(&p, &k1)?;
                branch.push(p.clone());
            }
            if orient < 0.0 {
                branch.reverse();
                branch.pop();
                branch.extend(poly);
                poly = branch;
            } else {
                poly = branch;
            }
        }
        let touch = poly.iter().position(|q| c.contains(q)).map(|i| {
            let reference = if i + 1 < poly.len() {
                poly[i + 1]
                    .iter()
                    .zip(&poly[i])
                    .map(|(a, b)| a - b)
                    .collect::<Vec<f64>>()
            } else {
                bx.axis.clone()
            };
            let d = blended(&poly[i], &reference).unwrap_or(unit(&reference));
            (i, d)
        });
        Ok((poly, touch))
    };
    // Raise λ toward 1 until the blended flow stays inside the chart for
    // the probe line.
    let ladder = [cfg.lambda, 0.95, 0.975, 0.99, 0.999];
    let mut lambda = *ladder.last().unwrap();
    for &l in ladder.iter().filter(|&&l| l >= cfg.lambda) {
        if let Ok((poly, _)) = trace(0.0, l) {
            let max_excursion = poly
                .iter()
                .map(|p| dist(p, &bx.center))
                .fold(0.0_f64, f64::max);
            if max_excursion <= 2.2 * bx.half_width {
                lambda = l;
                break;
            }
        }
    }
    // Scan offsets from the free side for a bracket, then bisect.
    let scan_steps = 96;
    let mut o_free = 0.0_f64;
    let mut o_touch = None;
    for i in 0..=scan_steps {
        let o = o_max * (1.1 * i as f64 / scan_steps as f64);
        let (_, touch) = trace(o, lambda)?;
        if touch.is_some() {
            o_touch = Some(o);
            break;
        }
        o_free = o;
    }
    let mut o_touch = o_touch.ok_or(FoliationError::NoTouchingCurve)?;
    for _ in 0..cfg.bisection_iters {
        let mid = 0.5 * (o_free + o_touch);
        let (_, touch) = trace(mid, lambda)?;
        if touch.is_some() {
            o_touch = mid;
        } else {
            o_free = mid;
        }
        if o_touch - o_free < 1e-9 * bx.half_width {
            break;
        }
    }
    let (curve, touch) = trace(o_touch, lambda)?;
    let (touch_idx, direction) = touch.ok_or(FoliationError::NoTouchingCurve)?;
    let point = curve[touch_idx].clone();
    // Cone membership of the blended tangent, against the nearest cone
    // base point.
    let nearest = cone
        .base_points
        .iter()
        .enumerate()
        .min_by(|a, b| dist(a.1, &point).partial_cmp(&dist(b.1, &point)).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    let dhat = unit(&direction);
    let best = cone.generators[nearest]
        .iter()
        .map(|g| dot(g, &dhat))
        .fold(f64::NEG_INFINITY, f64::max);
    let cone_margin = best - cfg.cone_threshold;
    // One-sidedness of the set near the contact point, against the sweep
    // direction in ambient coordinates.
    let mut w = vec![0.0; bx.dim];
    for (k, b) in bx.basis.iter().enumerate() {
        for (wc, bc) in w.iter_mut().zip(b) {
            *wc += e[k] * bc;
        }
    }
    let radius = 0.25 * bx.half_width;
    let tol = 0.1 * radius;
    let nearby: Vec<&Vec<f64>> = c
        .points
        .iter()
        .filter(|q| dist(q, &point) <= radius)
        .collect();
    let side_fraction = if nearby.is_empty() {
        1.0
    } else {
        nearby
            .iter()
            .filter(|q| {
                let rel: Vec<f64> = q.iter().zip(&point).map(|(a, b)| a - b).collect();
                dot(&rel, &w) >= -tol
            })
            .count() as f64
            / nearby.len() as f64
    };
    Ok(SpecialPoint {
        point,
        direction: dhat,
        lambda,
        curve,
        side_fraction,
        cone_margin,
    })
}

// ===========================================================================
// tests
// ===========================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cr_geometry::TangencyKind;
    use std::f64::consts::PI;

    fn saddle_surface() -> SurfaceInHypersurface {
        SurfaceInHypersurface::in_flat_hypersurface(|x, y| 3.0 * x * x - y * y, 1.0)
    }

    fn region(r: f64) -> Region {
        Region {
            x_min: -r,
            x_max: r,
            y_min: -r,
            y_max: r,
        }
    }

    #[test]
    fn leaf_integration_conserves_the_graphing_level() {
        let s = saddle_surface();
        let field = LeafField::from_surface(&s, region(1.0)).unwrap();
        let g = |p: &[f64]| 3.0 * p[0] * p[0] - p[1] * p[1];
        let start = vec![0.7, 0.2];
        let leaf = integrate_leaf(&field, &start, 1.0, 1e-3).unwrap();
        assert_eq!(leaf.stop, LeafStop::Completed);
        let g0 = g(&start);
        for p in &leaf.points {
            assert!(
                (g(p) - g0).abs() < 1e-8,
                "level drift {:e}",
                (g(p) - g0).abs()
            );
        }
    }

    #[test]
    fn elliptic_model_leaf_closes_into_a_circle() {
        let s = SurfaceInHypersurface::in_flat_hypersurface(|x, y| x * x + y * y, 1.0);
        let field = LeafField::from_surface(&s, region(1.0)).unwrap();
        let start = vec![0.5, 0.0];
        // The leaf through (0.5, 0) is the circle of radius 0.5: length π.
        // Pick a step dividing the circumference so the endpoint lands on
        // the start.
        let leaf = integrate_leaf(&field, &start, PI, PI / 3000.0).unwrap();
        assert_eq!(leaf.stop, LeafStop::Completed);
        let ret = dist(leaf.points.last().unwrap(), &start);
        assert!(ret < 1e-4, "return distance {ret:e}");
    }

    #[test]
    fn flat_graph_leaves_are_straight_lines() {
        let s = SurfaceInHypersurface::in_flat_hypersurface(|x, _y| x, 1.0);
        let field = LeafField::from_surface(&s, region(1.0)).unwrap();
        assert!(field.singular_points.is_empty());
        let leaf = integrate_leaf(&field, &[0.25, -0.5], 1.0, 1e-2).unwrap();
        for p in &leaf.points {
            assert!((p[0] - 0.25).abs() < 1e-12);
        }
        assert!((leaf.arclength() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn leaf_stops_inside_the_guard_ball_of_a_saddle() {
        let s = saddle_surface();
        let field = LeafField::from_surface(&s, region(1.0)).unwrap();
        // Start just off the stable separatrix: the leaf passes within
        // √(g/3) ≈ 3.5e−3 of the saddle, inside the 4·step guard ball.
        let start = vec![0.1, 0.1 * 3.0_f64.sqrt() - 1e-4];
        // Head toward the saddle (the canonical orientation points away).
        let leaf = integrate_leaf_oriented(&field, &start, &[-1.0, -1.7], 1.0, 1e-3).unwrap();
        match &leaf.stop {
            LeafStop::NearSingular(p) => {
                assert!(norm(p) < 2e-2, "stopped at distance {:e}", norm(p))
            }
            other => panic!("expected a singular stop, got {other:?}"),
        }
    }

    #[test]
    fn direction_field_is_unit_and_continuous_off_the_singular_set() {
        let s = saddle_surface();
        let field = LeafField::from_surface(&s, region(1.0)).unwrap();
        let mut samples = Vec::new();
        for i in 0..8 {
            for j in 0..8 {
                let p = vec![-0.8 + 0.2 * i as f64 + 0.05, -0.8 + 0.2 * j as f64 + 0.07];
                if norm(&p) > 0.2 {
                    samples.push(p);
                }
            }
        }
        for p in &samples {
            let d = field.direction_at(p).unwrap();
            assert!((norm(&d) - 1.0).abs() < 1e-12);
        }
        let modulus = field.continuity_modulus(&samples, 1e-4);
        assert!(modulus < 1e-2, "modulus {modulus:e}");
    }

    #[test]
    fn saddle_separatrices_leave_along_the_level_set_slopes() {
        let s = saddle_surface();
        let tree = separatrix_tree(&s, region(0.8)).unwrap();
        assert_eq!(tree.points.len(), 1);
        assert_eq!(tree.points[0].kind, TangencyKind::Hyperbolic);
        assert_eq!(tree.separatrices.len(), 4);
        assert!(tree.is_tree);
        assert!(tree.adjacency.is_empty());
        // Level-set oracle: the zero set of 3x² − y² has slopes ±√3.
        let oracle = 3.0_f64.sqrt();
        for sep in &tree.separatrices {
            assert_eq!(sep.from, 0);
            assert!(sep.to.is_none());
            let probe = sep
                .points
                .iter()
                .find(|p| norm(p) > 0.05)
                .expect("separatrix leaves the saddle");
            let slope = (probe[1] / probe[0]).abs();
            assert!((slope - oracle).abs() < 1e-3, "slope {slope} vs {oracle}");
            // The last point reaches the chart boundary.
            let last = sep.points.last().unwrap();
            assert!(last[0].abs() > 0.79 - 1e-6 || last[1].abs() > 0.79 - 1e-6);
        }
    }

    #[test]
    fn engineered_two_saddle_loop_is_detected_as_a_cycle() {
        // Two saddles joined by two distinct connections (each traced once
        // from each end, as the tracer produces them).  A graphed surface
        // over a rectangle cannot realize this without an extra tangency
        // inside the loop, so the cycle search is exercised directly.
        let saddle = |x: f64| TangencyReport {
            point: [x, 0.0],
            lambda: 1.0,
            kind: TangencyKind::Hyperbolic,
        };
        let arc = |up: f64| -> Vec<Vec<f64>> {
            (0..=32)
                .map(|i| {
                    let t = PI * (1.0 - i as f64 / 32.0);
                    vec![t.cos(), up * t.sin()]
                })
                .collect()
        };
        let mut seps = Vec::new();
        for up in [1.0, -1.0] {
            let mut fwd = arc(up);
            seps.push(Separatrix {
                from: 0,
                to: Some(1),
                points: fwd.clone(),
            });
            fwd.reverse();
            seps.push(Separatrix {
                from: 1,
                to: Some(0),
                points: fwd,
            });
        }
        let tree = assemble_tree(vec![saddle(-1.0), saddle(1.0)], seps);
        assert_eq!(tree.adjacency, vec![(0, 1), (0, 1)]);
        assert!(!tree.is_tree);

        // A single connection (still traced twice) stays a tree.
        let one = assemble_tree(
            vec![saddle(-1.0), saddle(1.0)],
            vec![
                Separatrix {
                    from: 0,
                    to: Some(1),
                    points: arc(1.0),
                },
                Separatrix {
                    from: 1,
                    to: Some(0),
                    points: arc(1.0),
                },
            ],
        );
        assert_eq!(one.adjacency, vec![(0, 1)]);
        assert!(one.is_tree);
    }

    #[test]
    fn single_point_in_a_trivially_foliated_ball_satisfies_the_condition() {
        let field = LeafField::from_fn(2, |_| vec![1.0, 0.0]);
        let c = ClosedSetSample::from_points(vec![vec![0.2, -0.1]], 0.02);
        let cfg = ConditionConfig {
            half_width: Some(0.5),
            ..ConditionConfig::default()
        };
        let verdict = check_characteristic_condition(&field, &c, &cfg).unwrap();
        assert!(verdict.holds());
        let w = verdict.witness.expect("witness");
        // Independent re-validation of the witness.
        assert!(c.contains(&w.touch_point));
        assert!(!c.contains(&w.curve[0]));
        assert!(!c.contains(w.curve.last().unwrap()));
        assert!(dist(&w.touch_point, &[0.2, -0.1]) < 0.05);
    }

    #[test]
    fn compact_set_in_a_submersion_foliation_satisfies_the_condition() {
        // Nonsingular field with curved leaves (a submersion foliation).
        let field = LeafField::from_fn(2, |p| vec![1.0, 0.3 * (p[0]).cos()]);
        let mut cloud = Vec::new();
        for i in 0..24 {
            for j in 0..24 {
                let x = -0.3 + 0.6 * i as f64 / 23.0;
                let y = -0.3 + 0.6 * j as f64 / 23.0;
                if x * x + y * y <= 0.09 {
                    cloud.push(vec![x, y]);
                }
            }
        }
        let c = ClosedSetSample::new(|p: &[f64]| p[0] * p[0] + p[1] * p[1] <= 0.09, cloud, 0.03);
        assert!(c.validate());
        let verdict =
            check_characteristic_condition(&field, &c, &ConditionConfig::default()).unwrap();
        assert!(verdict.holds());
        let w = verdict.witness.unwrap();
        assert!(c.contains(&w.touch_point));
        assert!(!c.contains(&w.curve[0]));
    }

    #[test]
    fn closed_curve_transversal_to_all_leaves_fails_the_condition() {
        // Radial foliation of an annulus; the unit circle crosses every
        // leaf of any flow box along it.
        let field = LeafField::from_fn(2, |p| {
            let n = norm(p).max(1e-9);
            vec![p[0] / n, p[1] / n]
        });
        let cloud: Vec<Vec<f64>> = (0..256)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / 256.0;
                vec![t.cos(), t.sin()]
            })
            .collect();
        let c = ClosedSetSample::new(|p: &[f64]| (norm(p) - 1.0).abs() <= 1e-9, cloud, 0.05);
        let cfg = ConditionConfig {
            center: Some(vec![1.0, 0.0]),
            half_width: Some(0.4),
            ..ConditionConfig::default()
        };
        let verdict = check_characteristic_condition(&field, &c, &cfg).unwrap();
        assert_eq!(verdict.status, VerdictStatus::Fails);
        assert!(verdict.witness.is_none());
        assert!(verdict.diagnostics.iter().any(|d| d.contains("every leaf")));
    }

    #[test]
    fn orbit_escapes_immediately_from_a_single_point() {
        let frame: Vec<VectorField> = vec![Arc::new(|_: &[f64]| vec![1.0, 0.0, 0.0, 0.0])];
        let c = ClosedSetSample::from_points(vec![vec![0.0; 4]], 0.05);
        let verdict = check_orbit_condition(&frame, &c, &OrbitConfig::default());
        assert!(verdict.holds());
    }

    #[test]
    fn levi_flat_leaf_trap_fails_the_orbit_condition() {
        // Chart (x₁, y₁, x₂, y₂); the frame is tangent to the complex
        // leaves {x₁, y₁ fixed} and degenerates at the unit circle of the
        // leaf, so orbits starting inside the closed unit disc never leave
        // it: the set traps a full orbit.
        let shrink = |p: &[f64]| (1.0 - (p[2] * p[2] + p[3] * p[3])).max(0.0);
        let frame: Vec<VectorField> = vec![
            Arc::new(move |p: &[f64]| vec![0.0, 0.0, shrink(p), 0.0]),
            Arc::new(move |p: &[f64]| vec![0.0, 0.0, 0.0, shrink(p)]),
        ];
        let mut cloud = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                let x = -0.75 + 0.3 * i as f64;
                let y = -0.75 + 0.3 * j as f64;
                if x * x + y * y <= 0.81 {
                    cloud.push(vec![0.0, 0.0, x, y]);
                }
            }
        }
        let c = ClosedSetSample::new(
            |p: &[f64]| {
                p[0].abs() <= 0.1 && p[1].abs() <= 0.1 && p[2] * p[2] + p[3] * p[3] <= 1.0 + 1e-3
            },
            cloud,
            0.05,
        );
        let verdict = check_orbit_condition(&frame, &c, &OrbitConfig::default());
        assert_eq!(verdict.status, VerdictStatus::Fails);
        let w = verdict.witness.expect("trapped-orbit certificate");
        assert!(w.curve.iter().all(|p| c.contains(p)));
        // The orbit really moved (this is a trap, not a degenerate frame).
        let start = &w.curve[0];
        let moved = w
            .curve
            .iter()
            .map(|p| dist(p, start))
            .fold(0.0_f64, f64::max);
        assert!(moved > c.epsilon);
    }

    #[test]
    fn perturbed_generic_frame_escapes_quickly() {
        let frame: Vec<VectorField> = vec![
            Arc::new(|p: &[f64]| vec![1.0, 0.1 * p[2], 0.2 * p[1], 0.0]),
            Arc::new(|p: &[f64]| vec![0.1 * p[3], 1.0, 0.0, 0.2 * p[0]]),
        ];
        let mut cloud = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                cloud.push(vec![
                    -0.15 + 0.1 * i as f64,
                    -0.15 + 0.1 * j as f64,
                    0.0,
                    0.0,
                ]);
            }
        }
        let c = ClosedSetSample::new(
            |p: &[f64]| p.iter().map(|v| v * v).sum::<f64>() <= 0.09,
            cloud,
            0.02,
        );
        let verdict = check_orbit_condition(&frame, &c, &OrbitConfig::default());
        assert!(verdict.holds());
        let diag = &verdict.diagnostics[0];
        let steps: usize = diag
            .split("took ")
            .nth(1)
            .and_then(|s| s.split(' ').next())
            .and_then(|s| s.parse().ok())
            .unwrap();
        assert!(steps < 100, "slowest escape took {steps} steps");
    }

    fn horizontal_cone(base_points: Vec<Vec<f64>>) -> ConeField {
        let n = base_points.len();
        let mut cone = ConeField {
            base_points,
            generators: vec![vec![vec![1.0, 0.0]]; n],
            openness: vec![1.0; n],
            filled: false,
        };
        // Fill with the (horizontal) characteristic directions so the
        // blended tangent is itself a generator.
        let field: Vec<Vec<f64>> = vec![vec![1.0, 0.0]; n];
        cone.fill(&field, &[0.9, 0.95, 0.99]);
        cone
    }

    #[test]
    fn special_point_of_a_singleton_is_the_point() {
        let field = LeafField::from_fn(2, |_| vec![1.0, 0.0]);
        let target = vec![0.2, -0.1];
        let c = ClosedSetSample::from_points(vec![target.clone()], 0.02);
        let cone = horizontal_cone(vec![vec![0.0, 0.0]]);
        let cfg = SweepConfig {
            condition: ConditionConfig {
                half_width: Some(0.5),
                ..ConditionConfig::default()
            },
            ..SweepConfig::default()
        };
        let sp = find_special_point(&field, &c, &cone, &cfg).unwrap();
        assert!(dist(&sp.point, &target) < 0.05, "contact at {:?}", sp.point);
        assert!(sp.cone_margin > 0.0, "cone margin {}", sp.cone_margin);
        assert!(sp.side_fraction >= 0.99);
    }

    #[test]
    fn convex_blob_is_touched_on_its_extremal_set() {
        let field = LeafField::from_fn(2, |_| vec![1.0, 0.0]);
        let mut cloud = Vec::new();
        for i in 0..40 {
            for j in 0..40 {
                let x = -0.3 + 0.6 * i as f64 / 39.0;
                let y = -0.8 + 0.6 * j as f64 / 39.0;
                if x * x + (y + 0.5) * (y + 0.5) <= 0.09 {
                    cloud.push(vec![x, y]);
                }
            }
        }
        let c = ClosedSetSample::new(
            |p: &[f64]| p[0] * p[0] + (p[1] + 0.5) * (p[1] + 0.5) <= 0.09,
            cloud.clone(),
            0.02,
        );
        let cone = horizontal_cone(vec![vec![0.0, -0.5]]);
        let cfg = SweepConfig {
            condition: ConditionConfig {
                center: Some(vec![0.0, -0.5]),
                half_width: Some(0.6),
                ..ConditionConfig::default()
            },
            ..SweepConfig::default()
        };
        let sp = find_special_point(&field, &c, &cone, &cfg).unwrap();
        // First touching horizontal line meets the disc at a pole
        // (0, −0.2) or (0, −0.8); brute-force extremal oracle.
        let y_top = cloud.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let y_bot = cloud.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let at_pole = (sp.point[1] - y_top).abs() < 0.05 || (sp.point[1] - y_bot).abs() < 0.05;
        assert!(at_pole, "contact at {:?}", sp.point);
        assert!(sp.point[0].abs() < 0.2);
        assert!(
            sp.side_fraction >= 0.99,
            "side fraction {}",
            sp.side_fraction
        );
        assert!(sp.cone_margin > 0.0);
    }

    #[test]
    fn half_plane_region_is_touched_on_its_bounding_leaf() {
        let field = LeafField::from_fn(2, |_| vec![1.0, 0.0]);
        let mut cloud = Vec::new();
        for i in 0..24 {
            for j in 0..12 {
                cloud.push(vec![
                    -0.6 + 1.2 * i as f64 / 23.0,
                    -0.8 + 0.6 * j as f64 / 11.0,
                ]);
            }
        }
        let c = ClosedSetSample::new(|p: &[f64]| p[1] <= -0.2, cloud, 0.03);
        let cone = horizontal_cone(vec![vec![0.0, -0.2]]);
        let cfg = SweepConfig {
            condition: ConditionConfig {
                center: Some(vec![0.0, -0.2]),
                half_width: Some(0.7),
                ..ConditionConfig::default()
            },
            ..SweepConfig::default()
        };
        let sp = find_special_point(&field, &c, &cone, &cfg).unwrap();
        assert!(
            (sp.point[1] + 0.2).abs() < 0.04,
            "contact at {:?}",
            sp.point
        );
        assert!(sp.side_fraction >= 0.99);
    }

    #[test]
    fn verdicts_and_trees_serialize_and_export() {
        let field = LeafField::from_fn(2, |_| vec![1.0, 0.0]);
        let c = ClosedSetSample::from_points(vec![vec![0.0, 0.0]], 0.02);
        let cfg = ConditionConfig {
            half_width: Some(0.4),
            ..ConditionConfig::default()
        };
        let verdict = check_characteristic_condition(&field, &c, &cfg).unwrap();
        let a = serde_json::to_string(&verdict).unwrap();
        let b = serde_json::to_string(&verdict).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("\"status\":\"Holds\""));
        assert!(a.contains("touch_point"));

        let s = saddle_surface();
        let tree = separatrix_tree(&s, region(0.8)).unwrap();
        let dir = std::env::temp_dir().join("crlab_foliation_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("tree.csv");
        tree.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("separatrix,index,x,y\n"));
        assert!(text.lines().count() > 4);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn flow_box_straightening_is_well_conditioned() {
        let field = LeafField::from_fn(2, |p| vec![1.0, 0.2 * p[0].sin()]);
        let bx = build_flow_box(&field, &[0.0, 0.0], 0.5, 64).unwrap();
        assert!(bx.condition_number < 10.0, "cond {}", bx.condition_number);
        assert_eq!(bx.leaves.len(), 65);
        // Seeds sit in the middle of each leaf polyline.
        for (i, leaf) in bx.leaves.iter().enumerate() {
            let mid = leaf.len() / 2;
            assert!(dist(&leaf[mid], &bx.seed(i)) < 1e-12);
        }
    }
}
