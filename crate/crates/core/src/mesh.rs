//! Discretisation of `Ω`, of the exterior, and of the cross domain
//! `Q(Ω) = (ℝⁿ×ℝⁿ) \ (Ωᶜ×Ωᶜ)`.
//!
//! Interior nodes are cell midpoints. The exterior is a uniform band that
//! continues the interior grid, then graded cells out to `r_ext`, then a far
//! field. In 1D the far field is mapped to a finite interval by
//! `r = r_ext·σ^{-m}` and nodes are placed in `±` pairs about the centre of
//! `Ω`, so odd tails cancel symmetrically.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::gauss;
use crate::lagrangian::{dist, standard_constant, PointFn};
use crate::par;
use crate::Point;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("tail unbounded: {0}")]
    TailUnbounded(String),
    #[error("nonfinite integrand at x = {x:?}, y = {y:?}")]
    NonfiniteIntegrand { x: Point, y: Point },
    #[error("insufficient smoothness at {0:?}")]
    InsufficientSmoothness(Point),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExteriorLayout {
    /// Uniform cells per side continuing the interior grid.
    pub band_cells: usize,
    /// Width ratio of successive graded cells.
    pub grading: f64,
    pub gauss_per_cell: usize,
    /// Gauss nodes per side in the mapped far field (1D).
    pub far_nodes: usize,
    /// Outer radius of the graded 2D frames, as a multiple of `r_ext`.
    pub far_reach: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    pub dim: usize,
    pub lo: Point,
    pub hi: Point,
    pub cells: [usize; 2],
    /// Radius about the centre of `Ω` beyond which the far field starts.
    pub r_ext: f64,
    pub layout: ExteriorLayout,
}

impl Domain {
    pub fn interval(lo: f64, hi: f64, cells: usize) -> Self {
        let diam = hi - lo;
        Domain {
            dim: 1,
            lo: [lo, 0.0],
            hi: [hi, 0.0],
            cells: [cells, 1],
            r_ext: 3.0 * diam,
            layout: ExteriorLayout {
                band_cells: cells,
                grading: 1.12,
                gauss_per_cell: 4,
                far_nodes: 32,
                far_reach: 1e6,
            },
        }
    }

    pub fn rect(lo: Point, hi: Point, cells: [usize; 2]) -> Self {
        let diam = dist(&lo, &hi);
        Domain {
            dim: 2,
            lo,
            hi,
            cells,
            r_ext: 3.0 * diam,
            layout: ExteriorLayout {
                band_cells: (cells[0].max(cells[1]) / 4).max(2),
                grading: 1.3,
                gauss_per_cell: 2,
                far_nodes: 0,
                far_reach: 1e6,
            },
        }
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let bad = |m: &str| Err(MeshError::InvalidParameter(m.into()));
        if self.dim != 1 && self.dim != 2 {
            return bad("dimension must be 1 or 2");
        }
        for k in 0..self.dim {
            if !(self.hi[k] > self.lo[k]) || self.cells[k] == 0 {
                return bad("empty box");
            }
        }
        if !(self.r_ext > 2.0 * self.diam()) {
            return bad("r_ext must exceed 2·diam(Ω)");
        }
        if !(self.layout.grading > 1.0) {
            return bad("grading must exceed 1");
        }
        Ok(())
    }

    pub fn diam(&self) -> f64 {
        dist(&self.lo, &self.hi)
    }

    pub fn measure(&self) -> f64 {
        (0..self.dim).map(|k| self.hi[k] - self.lo[k]).product()
    }

    pub fn center(&self) -> Point {
        [0.5 * (self.lo[0] + self.hi[0]), 0.5 * (self.lo[1] + self.hi[1])]
    }

    pub fn h(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.cells[axis] as f64
    }

    pub fn min_h(&self) -> f64 {
        (0..self.dim).map(|k| self.h(k)).fold(f64::INFINITY, f64::min)
    }

    pub fn node_count(&self) -> usize {
        (0..self.dim).map(|k| self.cells[k]).product()
    }

    /// Midpoint of cell `(i, j)`.
    pub fn node(&self, i: i64, j: i64) -> Point {
        let x = self.lo[0] + (i as f64 + 0.5) * self.h(0);
        let y = if self.dim == 2 { self.lo[1] + (j as f64 + 0.5) * self.h(1) } else { 0.0 };
        [x, y]
    }

    /// Interior nodes in storage order (`j` major in 2D).
    pub fn interior_nodes(&self) -> Vec<Point> {
        let (nx, ny) = (self.cells[0], if self.dim == 2 { self.cells[1] } else { 1 });
        let mut v = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                v.push(self.node(i as i64, j as i64));
            }
        }
        v
    }

    pub fn contains(&self, p: &Point) -> bool {
        (0..self.dim).all(|k| p[k] > self.lo[k] && p[k] < self.hi[k])
    }

    pub fn refine(&self, factor: usize) -> Result<Domain, MeshError> {
        if ![2, 4, 8].contains(&factor) {
            return Err(MeshError::InvalidParameter(format!("refine factor {factor}")));
        }
        let mut d = self.clone();
        d.cells[0] *= factor;
        if self.dim == 2 {
            d.cells[1] *= factor;
        }
        d.layout.band_cells *= factor;
        Ok(d)
    }
}

/// Growth of a function at infinity, used to decide how tails are summed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Growth {
    Bounded(f64),
    /// At most linear growth. `odd = true` declares `u` to be affine plus a
    /// bounded function, so symmetric second differences stay bounded.
    Linear { odd: bool },
    Unknown,
}

#[derive(Clone)]
pub enum ExteriorRule {
    Constant(f64),
    Closure(PointFn),
}

impl fmt::Debug for ExteriorRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExteriorRule::Constant(c) => write!(f, "Constant({c})"),
            ExteriorRule::Closure(_) => write!(f, "Closure"),
        }
    }
}

impl ExteriorRule {
    pub fn eval(&self, p: &Point) -> f64 {
        match self {
            ExteriorRule::Constant(c) => *c,
            ExteriorRule::Closure(f) => f(p),
        }
    }
}

/// Closed form valid on all of `ℝⁿ`, `C²` away from the listed kinks.
#[derive(Clone)]
pub struct ClosedForm {
    pub f: PointFn,
    pub kinks: Vec<Point>,
}

/// Node values on `Ω` plus an exterior rule on `Ωᶜ`.
#[derive(Clone)]
pub struct DiscreteFunction {
    pub domain: Domain,
    pub values: Vec<f64>,
    pub exterior: ExteriorRule,
    pub growth: Growth,
    pub closed: Option<ClosedForm>,
}

impl fmt::Debug for DiscreteFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscreteFunction")
            .field("nodes", &self.values.len())
            .field("exterior", &self.exterior)
            .field("growth", &self.growth)
            .finish()
    }
}

impl DiscreteFunction {
    /// Sample a global closed form; it also serves as the exterior rule.
    pub fn from_closed<F>(domain: &Domain, f: F, growth: Growth, kinks: Vec<Point>) -> Self
    where
        F: Fn(&Point) -> f64 + Send + Sync + 'static,
    {
        let f: PointFn = Arc::new(f);
        let values = domain.interior_nodes().iter().map(|p| f(p)).collect();
        DiscreteFunction {
            domain: domain.clone(),
            values,
            exterior: ExteriorRule::Closure(f.clone()),
            growth,
            closed: Some(ClosedForm { f, kinks }),
        }
    }

    pub fn from_values(domain: &Domain, values: Vec<f64>, exterior: ExteriorRule, growth: Growth) -> Self {
        assert_eq!(values.len(), domain.node_count());
        DiscreteFunction { domain: domain.clone(), values, exterior, growth, closed: None }
    }

    pub fn constant(domain: &Domain, c: f64) -> Self {
        Self::from_closed(domain, move |_| c, Growth::Bounded(c.abs()), vec![])
    }

    pub fn check_finite(&self) -> Result<(), MeshError> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => {
                let p = self.domain.interior_nodes()[i];
                Err(MeshError::NonfiniteIntegrand { x: p, y: p })
            }
        }
    }

    /// Value at an arbitrary point: closed form when present, otherwise
    /// linear interpolation of node values in `Ω` and the exterior rule
    /// outside.
    pub fn eval(&self, p: &Point) -> f64 {
        if let Some(c) = &self.closed {
            return (c.f)(p);
        }
        if !self.domain.contains(p) {
            return self.exterior.eval(p);
        }
        self.interpolate(p)
    }

    fn interpolate(&self, p: &Point) -> f64 {
        let d = &self.domain;
        let coord = |k: usize| -> (usize, f64) {
            let n = d.cells[k];
            if n == 1 {
                return (0, 0.0);
            }
            let s = (p[k] - d.lo[k]) / d.h(k) - 0.5;
            let i0 = (s.floor().max(0.0) as usize).min(n - 2);
            (i0, s - i0 as f64)
        };
        let (i0, fx) = coord(0);
        if d.dim == 1 {
            let v0 = self.values[i0];
            let v1 = if d.cells[0] > 1 { self.values[i0 + 1] } else { v0 };
            return v0 + fx * (v1 - v0);
        }
        let (j0, fy) = coord(1);
        let nx = d.cells[0];
        let at = |i: usize, j: usize| self.values[j.min(d.cells[1] - 1) * nx + i.min(nx - 1)];
        let a = at(i0, j0) + fx * (at(i0 + 1, j0) - at(i0, j0));
        let b = at(i0, j0 + 1) + fx * (at(i0 + 1, j0 + 1) - at(i0, j0 + 1));
        a + fy * (b - a)
    }

    /// Tail decay exponent of the fractional integrand `(u(x) - u(y))K`.
    pub fn fractional_tail_decay(&self, s: f64) -> Result<f64, MeshError> {
        match self.growth {
            Growth::Bounded(_) | Growth::Linear { odd: true } => Ok(2.0 * s),
            Growth::Linear { odd: false } if 2.0 * s > 1.0 => Ok(2.0 * s - 1.0),
            Growth::Linear { odd: false } => Err(MeshError::TailUnbounded(format!(
                "linear growth with s = {s} is not integrable against the kernel"
            ))),
            Growth::Unknown => Err(MeshError::TailUnbounded("no growth metadata".into())),
        }
    }
}

/// How pairs near the diagonal are weighted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SingularPolicy {
    IncludeDiagonal,
    /// Drop the diagonal; with an exponent `q` (integrand `~|x-y|^q` near
    /// the diagonal) the missing self-cell mass is returned on nearest
    /// neighbour pairs of the uniform grid.
    SymmetricDifference { exponent: Option<f64> },
    /// Drop pairs closer than `eps`.
    Truncation { eps: f64 },
}

impl SingularPolicy {
    fn gamma(&self, dim: usize) -> f64 {
        match self {
            SingularPolicy::SymmetricDifference { exponent: Some(q) } if dim == 1 && *q > -1.0 => {
                2.0 / ((q + 1.0) * (q + 2.0))
            }
            _ => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    /// `None` picks the policy from the Lagrangian.
    pub singular: Option<SingularPolicy>,
    pub exterior: bool,
    /// Decreasing truncation radii, as multiples of `diam(Ω)`.
    pub eps_schedule: Vec<f64>,
}

impl Default for QuadratureRule {
    fn default() -> Self {
        QuadratureRule {
            singular: None,
            exterior: true,
            eps_schedule: vec![0.1, 0.05, 0.025, 0.0125],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NodeKind {
    Interior,
    Band,
    Graded,
    Far,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Node {
    pub x: Point,
    pub w: f64,
    pub grid: Option<[i64; 2]>,
    pub kind: NodeKind,
}

/// Node set for one domain. Interior nodes come first.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub domain: Domain,
    pub nodes: Vec<Node>,
    pub n_interior: usize,
    /// Number of uniform-grid neighbours of each node.
    neighbours: Vec<u8>,
    /// Upper bound on the 2D tail beyond the frames, per unit oscillation.
    pub tail_kernel_mass: f64,
}

fn graded_cells(start: f64, end: f64, w0: f64, ratio: f64) -> Vec<(f64, f64)> {
    // cells from `start` towards `end` (either direction), widths w0·ratio^k
    let dir = (end - start).signum();
    let total = (end - start).abs();
    let mut cells = Vec::new();
    let mut pos = 0.0;
    let mut w = w0;
    while pos < total - 1e-14 * total.max(1.0) {
        let mut next = (pos + w).min(total);
        if total - next < 0.5 * w * ratio {
            next = total;
        }
        cells.push((start + dir * pos, start + dir * next));
        pos = next;
        w *= ratio;
    }
    cells
}

impl Mesh {
    /// Build the node set. `decay` is the algebraic decay of the pair
    /// integrand; `None` omits the far field.
    pub fn build(domain: &Domain, exterior: bool, decay: Option<f64>) -> Result<Mesh, MeshError> {
        domain.validate()?;
        let mut nodes: Vec<Node> = Vec::new();
        let h0 = domain.h(0);
        let cell_w = (0..domain.dim).map(|k| domain.h(k)).product::<f64>();
        let (nx, ny) = (domain.cells[0] as i64, if domain.dim == 2 { domain.cells[1] as i64 } else { 1 });
        for j in 0..ny {
            for i in 0..nx {
                nodes.push(Node {
                    x: domain.node(i, j),
                    w: cell_w,
                    grid: Some([i, j]),
                    kind: NodeKind::Interior,
                });
            }
        }
        let n_interior = nodes.len();
        let mut tail_kernel_mass = 0.0;
        if exterior {
            let b = domain.layout.band_cells as i64;
            let c = domain.center();
            if domain.dim == 1 {
                for k in 1..=b {
                    for i in [-k, nx - 1 + k] {
                        nodes.push(Node { x: domain.node(i, 0), w: h0, grid: Some([i, 0]), kind: NodeKind::Band });
                    }
                }
                let (gx, gw) = gauss::rule(domain.layout.gauss_per_cell);
                let left = domain.lo[0] - b as f64 * h0;
                let right = domain.hi[0] + b as f64 * h0;
                let reach = domain.r_ext.max((c[0] - left) + h0).max((right - c[0]) + h0);
                for (start, end) in [(left, c[0] - reach), (right, c[0] + reach)] {
                    for (a, e) in graded_cells(start, end, h0 * domain.layout.grading, domain.layout.grading) {
                        let (lo, hi) = (a.min(e), a.max(e));
                        for k in 0..gx.len() {
                            nodes.push(Node {
                                x: [0.5 * (lo + hi) + 0.5 * (hi - lo) * gx[k], 0.0],
                                w: 0.5 * (hi - lo) * gw[k],
                                grid: None,
                                kind: NodeKind::Graded,
                            });
                        }
                    }
                }
                if let Some(alpha) = decay {
                    let m = (1.0 / alpha).max(1.0);
                    let (sx, sw) = gauss::rule(domain.layout.far_nodes);
                    for k in 0..sx.len() {
                        let sigma = 0.5 * (sx[k] + 1.0);
                        let r = reach * sigma.powf(-m);
                        let w = 0.5 * sw[k] * reach * m * sigma.powf(-m - 1.0);
                        for sign in [-1.0, 1.0] {
                            nodes.push(Node { x: [c[0] + sign * r, 0.0], w, grid: None, kind: NodeKind::Far });
                        }
                    }
                }
            } else {
                Self::exterior_2d(domain, &mut nodes, decay.is_some(), &mut tail_kernel_mass);
            }
        }
        let neighbours = Self::count_neighbours(&nodes, domain.dim);
        Ok(Mesh { domain: domain.clone(), nodes, n_interior, neighbours, tail_kernel_mass })
    }

    fn exterior_2d(domain: &Domain, nodes: &mut Vec<Node>, far: bool, tail: &mut f64) {
        let b = domain.layout.band_cells as i64;
        let (nx, ny) = (domain.cells[0] as i64, domain.cells[1] as i64);
        let cell_w = domain.h(0) * domain.h(1);
        for j in -b..ny + b {
            for i in -b..nx + b {
                if i >= 0 && i < nx && j >= 0 && j < ny {
                    continue;
                }
                nodes.push(Node { x: domain.node(i, j), w: cell_w, grid: Some([i, j]), kind: NodeKind::Band });
            }
        }
        let c = domain.center();
        let mut ax = 0.5 * (domain.hi[0] - domain.lo[0]) + b as f64 * domain.h(0);
        let mut ay = 0.5 * (domain.hi[1] - domain.lo[1]) + b as f64 * domain.h(1);
        let outer = if far { domain.r_ext * domain.layout.far_reach } else { domain.r_ext };
        let (gx, gw) = gauss::rule(domain.layout.gauss_per_cell);
        let g = domain.layout.grading;
        while ax.min(ay) < outer {
            let (bx, by) = (ax * g, ay * g);
            let kind = if ax.min(ay) >= domain.r_ext { NodeKind::Far } else { NodeKind::Graded };
            // four strips: top, bottom (full width), left, right (inner height)
            let strips = [
                ([-bx, ay], [bx, by]),
                ([-bx, -by], [bx, -ay]),
                ([-bx, -ay], [-ax, ay]),
                ([ax, -ay], [bx, ay]),
            ];
            for (lo, hi) in strips {
                let (wx, wy) = (hi[0] - lo[0], hi[1] - lo[1]);
                let (mx, my) = if wx > wy {
                    ((wx / wy).ceil() as usize, 1)
                } else {
                    (1, (wy / wx).ceil() as usize)
                };
                let (dx, dy) = (wx / mx as f64, wy / my as f64);
                for p in 0..mx {
                    for q in 0..my {
                        let (x0, y0) = (lo[0] + p as f64 * dx, lo[1] + q as f64 * dy);
                        for a in 0..gx.len() {
                            for bb in 0..gx.len() {
                                nodes.push(Node {
                                    x: [
                                        c[0] + x0 + 0.5 * dx * (1.0 + gx[a]),
                                        c[1] + y0 + 0.5 * dy * (1.0 + gx[bb]),
                                    ],
                                    w: 0.25 * dx * dy * gw[a] * gw[bb],
                                    grid: None,
                                    kind,
                                });
                            }
                        }
                    }
                }
            }
            ax = bx;
            ay = by;
        }
        // ∫_{|z| > R} |z|^{-2-α} dz per unit α, reported for bounded data
        *tail = 2.0 * std::f64::consts::PI / ax.min(ay);
    }

    fn count_neighbours(nodes: &[Node], dim: usize) -> Vec<u8> {
        if dim != 1 {
            return vec![0; nodes.len()];
        }
        let idx: std::collections::HashSet<i64> =
            nodes.iter().filter_map(|n| n.grid.map(|g| g[0])).collect();
        nodes
            .iter()
            .map(|n| match n.grid {
                Some(g) => idx.contains(&(g[0] - 1)) as u8 + idx.contains(&(g[0] + 1)) as u8,
                None => 0,
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn interior(&self) -> &[Node] {
        &self.nodes[..self.n_interior]
    }

    /// Quadrature weight of the ordered pair `(i, j)`, `i` interior.
    #[inline]
    pub fn pair_weight(&self, i: usize, j: usize, policy: &SingularPolicy) -> f64 {
        let (a, b) = (&self.nodes[i], &self.nodes[j]);
        let base = a.w * b.w;
        match policy {
            SingularPolicy::IncludeDiagonal => base,
            SingularPolicy::Truncation { eps } => {
                if i == j || dist(&a.x, &b.x) < *eps {
                    0.0
                } else {
                    base
                }
            }
            SingularPolicy::SymmetricDifference { .. } => {
                if i == j {
                    return 0.0;
                }
                let gamma = policy.gamma(self.domain.dim);
                if gamma > 0.0 {
                    if let (Some(ga), Some(gb)) = (a.grid, b.grid) {
                        if (ga[0] - gb[0]).abs() == 1 {
                            let (na, nb) = (self.neighbours[i] as f64, self.neighbours[j] as f64);
                            return base * (1.0 + 0.5 * gamma * (1.0 / na + 1.0 / nb));
                        }
                    }
                }
                base
            }
        }
    }

    /// Values of `u` at every node.
    pub fn sample(&self, u: &DiscreteFunction) -> Vec<f64> {
        let mut v = u.values.clone();
        v.extend(self.nodes[self.n_interior..].iter().map(|n| u.exterior.eval(&n.x)));
        v
    }

    /// Values of `f` at every node.
    pub fn sample_fn<F: Fn(&Point) -> f64 + Sync + Send>(&self, f: F) -> Vec<f64> {
        par::map_indexed(self.nodes.len(), |k| f(&self.nodes[k].x))
    }

    /// Row sums `Σ_j μ_ij f(i, j)` split into interior, near exterior and
    /// far parts, for every interior `i`.
    pub fn row_sums<F>(&self, policy: &SingularPolicy, f: F) -> Result<Vec<[f64; 3]>, MeshError>
    where
        F: Fn(usize, usize) -> f64 + Sync + Send,
    {
        let rows = par::map_indexed(self.n_interior, |i| {
            let mut acc = [0.0; 3];
            for j in 0..self.nodes.len() {
                let mu = self.pair_weight(i, j, policy);
                if mu == 0.0 {
                    continue;
                }
                let v = f(i, j);
                if !v.is_finite() {
                    return Err(MeshError::NonfiniteIntegrand { x: self.nodes[i].x, y: self.nodes[j].x });
                }
                let slot = match self.nodes[j].kind {
                    NodeKind::Interior => 0,
                    NodeKind::Far => 2,
                    _ => 1,
                };
                acc[slot] += mu * v;
            }
            Ok(acc)
        });
        rows.into_iter().collect()
    }
}

/// Split value of a `Q(Ω)` integral.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QuadValue {
    pub interior: f64,
    pub cross: f64,
    pub tail: f64,
}

impl QuadValue {
    pub fn total(&self) -> f64 {
        self.interior + self.cross + self.tail
    }

    pub fn scale(&self, k: f64) -> QuadValue {
        QuadValue { interior: k * self.interior, cross: k * self.cross, tail: k * self.tail }
    }
}

/// Reduce row sums into `Ω×Ω + 2·(Ω×Ωᶜ)`.
pub fn reduce_rows(rows: &[[f64; 3]]) -> QuadValue {
    let col = |k: usize| par::pairwise_sum(&rows.iter().map(|r| r[k]).collect::<Vec<_>>());
    QuadValue { interior: col(0), cross: 2.0 * col(1), tail: 2.0 * col(2) }
}

/// `∬_{Q(Ω)} f(x, y)` for a symmetric integrand, using the split
/// `Ω×Ω ∪ 2·(Ω×Ωᶜ)`.
pub fn double_integral_q<F>(mesh: &Mesh, policy: &SingularPolicy, f: F) -> Result<QuadValue, MeshError>
where
    F: Fn(&Point, &Point) -> f64 + Sync + Send,
{
    let rows = mesh.row_sums(policy, |i, j| f(&mesh.nodes[i].x, &mesh.nodes[j].x))?;
    Ok(reduce_rows(&rows))
}

/// Radial breakpoints at which `r ↦ u(x ± r)` may lose smoothness.
fn radial_breaks(u: &DiscreteFunction, x: &Point, lo: f64) -> Vec<f64> {
    let d = &u.domain;
    let mut b = vec![];
    for k in 0..d.dim {
        b.push((x[k] - d.lo[k]).abs());
        b.push((d.hi[k] - x[k]).abs());
    }
    if let Some(c) = &u.closed {
        for p in &c.kinks {
            b.push(dist(p, x));
        }
    }
    b.retain(|r| *r > lo * (1.0 + 1e-12));
    b.sort_by(|a, c| a.partial_cmp(c).unwrap());
    b.dedup_by(|a, c| (*a - *c).abs() < 1e-14);
    b
}

/// Symmetric second difference `Σ_θ [2u(x) - u(x+rθ) - u(x-rθ)]` averaged
/// over half the unit circle (2D) or at `θ = 0` (1D).
fn second_difference(u: &DiscreteFunction, x: &Point, r: f64) -> f64 {
    let ux = u.eval(x);
    if u.domain.dim == 1 {
        return 2.0 * ux - u.eval(&[x[0] + r, 0.0]) - u.eval(&[x[0] - r, 0.0]);
    }
    const M: usize = 48;
    let mut acc = 0.0;
    for k in 0..M {
        let th = std::f64::consts::PI * k as f64 / M as f64;
        let (c, s) = (th.cos(), th.sin());
        acc += 2.0 * ux - u.eval(&[x[0] + r * c, x[1] + r * s]) - u.eval(&[x[0] - r * c, x[1] - r * s]);
    }
    acc * std::f64::consts::PI / M as f64
}

/// `∫_lo^∞ D(r) r^{-1-2s} dr` with `D` the symmetric second difference
/// (times `r^{n-1}` and the angular measure in 2D).
fn radial_integral(u: &DiscreteFunction, x: &Point, s: f64, lo: f64, decay: f64) -> f64 {
    let f = |r: f64| second_difference(u, x, r) * r.powf(-1.0 - 2.0 * s);
    let big = 4.0 * (u.domain.diam() + dist(x, &u.domain.center())).max(lo * 4.0);
    let mut knots = vec![lo];
    knots.extend(radial_breaks(u, x, lo).into_iter().filter(|r| *r < big));
    knots.push(big);
    let mut acc = 0.0;
    for w in knots.windows(2) {
        // geometric sub-panels keep each panel's ratio at most 2
        let (mut a, b) = (w[0], w[1]);
        while a < b {
            let e = (2.0 * a).min(b);
            let e = if b - e < 0.25 * (e - a) { b } else { e };
            acc += gauss::integrate(16, a, e, f);
            a = e;
        }
    }
    let m = (1.0 / decay).max(1.0);
    acc += gauss::integrate_composite(16, 2, 0.0, 1.0, |sigma| {
        let r = big * sigma.powf(-m);
        f(r) * big * m * sigma.powf(-m - 1.0)
    });
    acc
}

/// `c_{n,s} ∫_{|x-y|>ε} (u(x) - u(y)) |x-y|^{-n-2s} dy`.
pub fn truncated_fractional_laplacian(
    u: &DiscreteFunction,
    x: &Point,
    s: f64,
    eps: f64,
) -> Result<f64, MeshError> {
    truncated_fractional_laplacian_scaled(u, x, s, eps, standard_constant(u.domain.dim, s))
}

pub fn truncated_fractional_laplacian_scaled(
    u: &DiscreteFunction,
    x: &Point,
    s: f64,
    eps: f64,
    c: f64,
) -> Result<f64, MeshError> {
    if !(eps > 0.0) {
        return Err(MeshError::InvalidParameter("eps must be positive".into()));
    }
    let decay = u.fractional_tail_decay(s)?;
    Ok(c * radial_integral(u, x, s, eps, decay))
}

/// `½c_{n,s} ∫ (2u(x) - u(x+z) - u(x-z)) |z|^{-n-2s} dz` for `u` that is
/// `C²` near `x`.
pub fn fractional_laplacian_pv(u: &DiscreteFunction, x: &Point, s: f64) -> Result<f64, MeshError> {
    fractional_laplacian_pv_scaled(u, x, s, standard_constant(u.domain.dim, s))
}

pub fn fractional_laplacian_pv_scaled(
    u: &DiscreteFunction,
    x: &Point,
    s: f64,
    c: f64,
) -> Result<f64, MeshError> {
    let closed = u.closed.as_ref().ok_or(MeshError::InsufficientSmoothness(*x))?;
    let near_kink = closed.kinks.iter().map(|p| dist(p, x)).fold(f64::INFINITY, f64::min);
    if near_kink < 1e-9 {
        return Err(MeshError::InsufficientSmoothness(*x));
    }
    let decay = u.fractional_tail_decay(s)?;
    let r0 = (1e-4 * u.domain.diam()).min(0.25 * near_kink);
    // below r0 the second difference is -Δu·r²/n to high order
    let lap = second_difference(u, x, r0) / (r0 * r0);
    let near = lap * r0.powf(2.0 - 2.0 * s) / (2.0 - 2.0 * s);
    Ok(c * (near + radial_integral(u, x, s, r0, decay)))
}
