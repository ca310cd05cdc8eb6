//! Nonlocal total variation, perimeter, mean curvature and the perimeter
//! calibration, with the coarea and three-form calibration checks.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::certificate::Certificate;
use crate::field::Field;
use crate::functional::{Calibrator, Discretization, FunctionalError};
use crate::gauss;
use crate::lagrangian::{make_lagrangian, Family, Kernel, LagrangianError, LagrangianParams, LagrangianSpec};
use crate::mesh::{self, DiscreteFunction, Domain, ExteriorRule, Growth, Mesh, QuadratureRule};
use crate::par;
use crate::Point;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NltvError {
    #[error("perimeter is infinite for {0}")]
    PerimeterInfinite(String),
    #[error("{0:?} is not on the boundary of the set")]
    NotOnBoundary(Point),
    #[error("competitor leaves the field region at {0:?}")]
    OutOfRegion(Point),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error(transparent)]
    Lagrangian(#[from] LagrangianError),
}

pub type Result<T> = std::result::Result<T, NltvError>;

/// Membership outside `Ω`.
#[derive(Clone)]
pub enum SetRule {
    Constant(bool),
    /// `{x_axis < at}` when `below`, else `{x_axis > at}`.
    HalfSpace { axis: usize, at: f64, below: bool },
    Closure { tag: String, f: Arc<dyn Fn(&Point) -> bool + Send + Sync> },
}

impl SetRule {
    pub fn contains(&self, p: &Point) -> bool {
        match self {
            SetRule::Constant(b) => *b,
            SetRule::HalfSpace { axis, at, below } => {
                if *below {
                    p[*axis] < *at
                } else {
                    p[*axis] > *at
                }
            }
            SetRule::Closure { f, .. } => f(p),
        }
    }

    pub fn tag(&self) -> String {
        match self {
            SetRule::Constant(b) => format!("constant:{}", *b as u8),
            SetRule::HalfSpace { axis, at, below } => {
                format!("halfspace:axis={axis},at={at:e},{}", if *below { "below" } else { "above" })
            }
            SetRule::Closure { tag, .. } => format!("closure:{tag}"),
        }
    }

    fn complement(&self) -> SetRule {
        match self {
            SetRule::Constant(b) => SetRule::Constant(!b),
            SetRule::HalfSpace { axis, at, below } => {
                // closed complement differs only on the hyperplane
                SetRule::HalfSpace { axis: *axis, at: *at, below: !below }
            }
            SetRule::Closure { tag, f } => {
                let f = f.clone();
                SetRule::Closure { tag: format!("not {tag}"), f: Arc::new(move |p| !f(p)) }
            }
        }
    }
}

impl fmt::Debug for SetRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

/// A set given by a cell mask on `Ω` and a rule on `Ωᶜ`.
#[derive(Clone, Debug)]
pub struct NodeSet {
    pub domain: Domain,
    pub mask: Vec<bool>,
    pub exterior: SetRule,
}

impl NodeSet {
    pub fn from_fn(domain: &Domain, inside: impl Fn(&Point) -> bool, exterior: SetRule) -> NodeSet {
        NodeSet { domain: domain.clone(), mask: domain.interior_nodes().iter().map(inside).collect(), exterior }
    }

    pub fn empty(domain: &Domain) -> NodeSet {
        NodeSet::from_fn(domain, |_| false, SetRule::Constant(false))
    }

    pub fn full(domain: &Domain) -> NodeSet {
        NodeSet::from_fn(domain, |_| true, SetRule::Constant(true))
    }

    pub fn half_space(domain: &Domain, axis: usize, at: f64, below: bool) -> NodeSet {
        let rule = SetRule::HalfSpace { axis, at, below };
        let r = rule.clone();
        NodeSet::from_fn(domain, move |p| r.contains(p), rule)
    }

    /// `{w < λ}` on nodes and on the exterior data.
    pub fn sublevel(w: &DiscreteFunction, lambda: f64) -> NodeSet {
        let ext = w.exterior.clone();
        NodeSet {
            domain: w.domain.clone(),
            mask: w.values.iter().map(|v| *v < lambda).collect(),
            exterior: SetRule::Closure { tag: format!("sublevel<{lambda:e}"), f: Arc::new(move |p| ext.eval(p) < lambda) },
        }
    }

    pub fn complement(&self) -> NodeSet {
        NodeSet { domain: self.domain.clone(), mask: self.mask.iter().map(|b| !b).collect(), exterior: self.exterior.complement() }
    }

    /// Membership at any point; inside `Ω` the cell containing `p` decides.
    pub fn contains(&self, p: &Point) -> bool {
        let d = &self.domain;
        if !d.contains(p) {
            return self.exterior.contains(p);
        }
        let cell = |k: usize| (((p[k] - d.lo[k]) / d.h(k)).floor() as usize).min(d.cells[k] - 1);
        let j = if d.dim == 2 { cell(1) } else { 0 };
        self.mask[j * d.cells[0] + cell(0)]
    }

    pub fn indicator(&self) -> DiscreteFunction {
        let rule = self.exterior.clone();
        let values = self.mask.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect();
        let ext = ExteriorRule::Closure(Arc::new(move |p: &Point| if rule.contains(p) { 1.0 } else { 0.0 }));
        DiscreteFunction::from_values(&self.domain, values, ext, Growth::Bounded(1.0))
    }

    /// One `node,x0,x1,member` row per node after an `# exterior:` tag line.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# exterior: {}\nnode,x0,x1,member\n", self.exterior.tag());
        for (k, (p, b)) in self.domain.interior_nodes().iter().zip(&self.mask).enumerate() {
            s.push_str(&format!("{k},{:.17e},{:.17e},{}\n", p[0], p[1], *b as u8));
        }
        s
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The total-variation Lagrangian `|a - b| K(x - y)`.
pub fn tv_lagrangian(kernel: &Kernel, dim: usize) -> Result<LagrangianSpec> {
    Ok(make_lagrangian(
        Family::NonlocalTotalVariation,
        LagrangianParams { dim, kernel: Some(kernel.clone()), ..Default::default() },
    )?)
}

fn discretize(kernel: &Kernel, domain: &Domain, growth: Growth) -> Result<Discretization> {
    let spec = tv_lagrangian(kernel, domain.dim)?;
    Ok(Discretization::new(&spec, domain, &QuadratureRule::default(), growth)?)
}

fn require_indicator_integrable(kernel: &Kernel) -> Result<()> {
    if let Kernel::Fractional { s, .. } = kernel {
        if *s >= 0.5 {
            return Err(NltvError::PerimeterInfinite(format!("fractional kernel with s = {s} ≥ 1/2")));
        }
    }
    Ok(())
}

/// `½∬_Q |w(x) - w(y)| K(x - y)`.
pub fn nltv_energy(kernel: &Kernel, domain: &Domain, w: &DiscreteFunction) -> Result<f64> {
    Ok(discretize(kernel, domain, w.growth)?.energy(w)?.value)
}

/// `½∬_Q |1_E(x) - 1_E(y)| K(x - y)`, evaluated as the total variation of `1_E`.
pub fn nonlocal_perimeter(kernel: &Kernel, domain: &Domain, set: &NodeSet) -> Result<f64> {
    require_indicator_integrable(kernel)?;
    nltv_energy(kernel, domain, &set.indicator())
}

fn sign0(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `½∬_Q sign(φ(x) - φ(y)) (f(x) - f(y)) K` on node samples.
fn perimeter_calibration_sampled(mesh: &Mesh, disc: &Discretization, kernel: &Kernel, phi: &[f64], f: &[f64]) -> Result<f64> {
    let nodes = &mesh.nodes;
    let dim = mesh.domain.dim;
    let rows = mesh
        .row_sums(&disc.policy, |i, j| {
            if i == j || f[i] == f[j] {
                return 0.0;
            }
            let z = [nodes[i].x[0] - nodes[j].x[0], nodes[i].x[1] - nodes[j].x[1]];
            sign0(phi[i] - phi[j]) * (f[i] - f[j]) * kernel.eval(&z, dim)
        })
        .map_err(FunctionalError::from)?;
    Ok(mesh::reduce_rows(&rows).scale(0.5).total())
}

/// `½∬_Q sign(φ(x) - φ(y)) (1_F(x) - 1_F(y)) K(x - y)` with `sign(0) = 0`.
pub fn perimeter_calibration(kernel: &Kernel, domain: &Domain, phi: &DiscreteFunction, set: &NodeSet) -> Result<f64> {
    require_indicator_integrable(kernel)?;
    let disc = discretize(kernel, domain, Growth::Bounded(1.0))?;
    let p = disc.mesh.sample(phi);
    let f = disc.mesh.sample(&set.indicator());
    perimeter_calibration_sampled(&disc.mesh, &disc, kernel, &p, &f)
}

fn kernel_tail(kernel: &Kernel, r: f64, dim: usize) -> f64 {
    // ∫_{|z|>r} K per unit solid angle measure of the direction set
    match kernel {
        Kernel::Fractional { s, c } => {
            let _ = dim;
            c * r.powf(-2.0 * s) / (2.0 * s)
        }
        _ => 0.0,
    }
}

/// `H[E](x) = ∫ (1_{Eᶜ}(y) - 1_E(y)) K(x - y) dy` by radial quadrature.
pub fn nonlocal_mean_curvature(kernel: &Kernel, domain: &Domain, set: &NodeSet, x: &Point) -> Result<f64> {
    let dim = domain.dim;
    let on_boundary = (0..dim).any(|k| {
        let (mut a, mut b) = (*x, *x);
        a[k] += domain.h(k);
        b[k] -= domain.h(k);
        set.contains(&a) != set.contains(&b)
    });
    if !on_boundary {
        return Err(NltvError::NotOnBoundary(*x));
    }
    let signed = |p: &Point| if set.contains(p) { -1.0 } else { 1.0 };
    let h = domain.min_h();
    let r_far = 1e4 * domain.diam();
    // breakpoints: cell faces, kernel cutoff and exterior half-space planes
    let mut breaks = vec![];
    if dim == 1 {
        for i in 0..=domain.cells[0] {
            breaks.push((domain.lo[0] + i as f64 * domain.h(0) - x[0]).abs());
        }
        if let SetRule::HalfSpace { at, .. } = set.exterior {
            breaks.push((at - x[0]).abs());
        }
    }
    if let Kernel::Truncated { radius, .. } = kernel {
        breaks.push(*radius);
    }
    let mut r = 1e-9 * h;
    while r < r_far {
        breaks.push(r);
        r *= if r < h { 2.0 } else { 1.1 };
    }
    breaks.push(r_far);
    breaks.retain(|b| *b > 0.0 && *b <= r_far);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs());
    let n_theta = 512;
    let profile = |r: f64| -> f64 {
        if dim == 1 {
            signed(&[x[0] + r, 0.0]) + signed(&[x[0] - r, 0.0])
        } else {
            let mut acc = 0.0;
            for k in 0..n_theta {
                let th = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / n_theta as f64;
                acc += signed(&[x[0] + r * th.cos(), x[1] + r * th.sin()]);
            }
            acc * 2.0 * std::f64::consts::PI / n_theta as f64 * r
        }
    };
    let (gx, gw) = gauss::rule(4);
    let parts = par::map_indexed(breaks.len() - 1, |k| {
        let (a, b) = (breaks[k], breaks[k + 1]);
        let (m, half) = (0.5 * (a + b), 0.5 * (b - a));
        (0..gx.len())
            .map(|q| {
                let r = m + half * gx[q];
                let z = [r, 0.0];
                gw[q] * half * profile(r) * kernel.eval(&z, dim)
            })
            .sum::<f64>()
    });
    let far = profile(r_far) / if dim == 1 { 1.0 } else { r_far };
    Ok(par::pairwise_sum(&parts) + far * kernel_tail(kernel, r_far, dim))
}

/// Cell midpoints of a uniform `points`-cell partition of `[lo, hi]`.
pub fn lambda_grid(lo: f64, hi: f64, points: usize) -> Vec<(f64, f64)> {
    let n = points.max(1);
    let d = (hi - lo) / n as f64;
    (0..n).map(|k| (lo + (k as f64 + 0.5) * d, d)).collect()
}

fn sample_range(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)))
}

/// `E_NTV(w)` against `∫ P({w < λ}) dλ` on a `points`-level grid.
pub fn coarea_check(kernel: &Kernel, domain: &Domain, w: &DiscreteFunction, points: usize) -> Result<Certificate> {
    let disc = discretize(kernel, domain, w.growth)?;
    let energy = disc.energy(w)?.value;
    let v = disc.mesh.sample(w);
    let (lo, hi) = sample_range(&v);
    let mut cert = Certificate::new("coarea", 1e-2);
    let integral = if hi > lo {
        let grid = lambda_grid(lo, hi, points);
        let levels: Vec<Result<f64>> = par::map_slice(&grid, |(lambda, wt)| {
            let set = NodeSet::sublevel(w, *lambda);
            Ok(wt * disc.energy(&set.indicator())?.value)
        });
        let levels: Vec<f64> = levels.into_iter().collect::<Result<_>>()?;
        par::pairwise_sum(&levels)
    } else {
        0.0
    };
    let gap = relative_gap(energy, integral);
    cert.margin = -gap;
    Ok(cert
        .with_detail("energy", energy)
        .with_detail("level_integral", integral)
        .with_detail("relative_gap", gap)
        .with_detail("levels", points as f64)
        .decide())
}

fn relative_gap(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// `t(x, λ)` extended by the end parameters outside the field's range.
fn clamped_parameter(field: &Field, x: &Point, lambda: f64) -> f64 {
    let (lo, hi) = field.bounds(x);
    if lambda <= lo {
        field.t_min
    } else if lambda >= hi {
        field.t_max
    } else {
        field.leaf_parameter(x, lambda).unwrap_or(if lambda < 0.5 * (lo + hi) { field.t_min } else { field.t_max })
    }
}

/// The three forms of the total-variation calibration at `w`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NltvForms {
    pub generic: f64,
    pub sign_form: f64,
    pub level_form: f64,
}

impl NltvForms {
    pub fn worst_gap(&self) -> f64 {
        relative_gap(self.generic, self.sign_form)
            .max(relative_gap(self.generic, self.level_form))
            .max(relative_gap(self.sign_form, self.level_form))
    }
}

pub fn nltv_calibration_forms(
    kernel: &Kernel,
    domain: &Domain,
    field: &Field,
    t0: f64,
    w: &DiscreteFunction,
    points: usize,
) -> Result<NltvForms> {
    let disc = discretize(kernel, domain, field.growth)?;
    let nodes = &disc.mesh.nodes;
    for (x, v) in domain.interior_nodes().iter().zip(&w.values) {
        if field.leaf_parameter(x, *v).is_err() {
            return Err(NltvError::OutOfRegion(*x));
        }
    }
    let generic = Calibrator::new(&disc, field, t0)?.defining(w)?.value;

    let v = disc.mesh.sample(w);
    let dim = domain.dim;
    let (gx, gw) = gauss::rule(4);
    let panels = 4;
    let rows = disc
        .mesh
        .row_sums(&disc.policy, |i, j| {
            if i == j || v[i] == v[j] {
                return 0.0;
            }
            let (x, y) = (&nodes[i].x, &nodes[j].x);
            let (a, b) = (v[j], v[i]);
            let step = (b - a) / panels as f64;
            let mut acc = 0.0;
            for p in 0..panels {
                let m = a + (p as f64 + 0.5) * step;
                for q in 0..gx.len() {
                    let lambda = m + 0.5 * step * gx[q];
                    let t = clamped_parameter(field, x, lambda);
                    acc += gw[q] * 0.5 * step * sign0(field.leaf(t, x) - field.leaf(t, y));
                }
            }
            let z = [x[0] - y[0], x[1] - y[1]];
            acc * kernel.eval(&z, dim)
        })
        .map_err(FunctionalError::from)?;
    let sign_form = mesh::reduce_rows(&rows).scale(0.5).total();

    let (lo, hi) = sample_range(&v);
    let level_form = if hi > lo {
        let grid = lambda_grid(lo, hi, points);
        let levels: Vec<Result<f64>> = par::map_slice(&grid, |(lambda, wt)| {
            let phi: Vec<f64> = nodes.iter().map(|n| clamped_parameter(field, &n.x, *lambda)).collect();
            let f: Vec<f64> = v.iter().map(|x| if *x < *lambda { 1.0 } else { 0.0 }).collect();
            Ok(wt * perimeter_calibration_sampled(&disc.mesh, &disc, kernel, &phi, &f)?)
        });
        par::pairwise_sum(&levels.into_iter().collect::<Result<Vec<_>>>()?)
    } else {
        0.0
    };
    Ok(NltvForms { generic, sign_form, level_form })
}

/// Pairwise agreement of the three forms within `1e-2` relative.
pub fn nltv_calibration_crosscheck(
    kernel: &Kernel,
    domain: &Domain,
    field: &Field,
    t0: f64,
    w: &DiscreteFunction,
    points: usize,
) -> Result<Certificate> {
    let f = nltv_calibration_forms(kernel, domain, field, t0, w, points)?;
    let mut cert = Certificate::new("nltv-calibration-forms", 1e-2);
    let gap = f.worst_gap();
    cert.margin = -gap;
    Ok(cert
        .with_detail("generic", f.generic)
        .with_detail("sign_form", f.sign_form)
        .with_detail("level_form", f.level_form)
        .with_detail("worst_relative_gap", gap)
        .with_detail("levels", points as f64)
        .decide())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_kernel(radius: f64) -> Kernel {
        Kernel::Truncated { radius, height: 1.0 }
    }

    #[test]
    fn trivial_sets_have_zero_perimeter() {
        let d = Domain::interval(-1.0, 1.0, 40);
        let k = box_kernel(1.0);
        assert_eq!(nonlocal_perimeter(&k, &d, &NodeSet::empty(&d)).unwrap(), 0.0);
        assert_eq!(nonlocal_perimeter(&k, &d, &NodeSet::full(&d)).unwrap(), 0.0);
    }

    #[test]
    fn halfline_perimeter_closed_form() {
        // pairs x < 0 < y with y - x < 1 have measure 1/2
        let d = Domain::interval(-1.0, 1.0, 200);
        let e = NodeSet::half_space(&d, 0, 0.0, true);
        let p = nonlocal_perimeter(&box_kernel(1.0), &d, &e).unwrap();
        assert!((p - 0.5).abs() < 1e-2, "{p}");
    }

    #[test]
    fn complement_and_indicator_are_bit_equal() {
        let d = Domain::interval(-1.0, 1.0, 64);
        let k = Kernel::Fractional { s: 0.25, c: 1.0 };
        let e = NodeSet::from_fn(&d, |p| p[0].abs() < 0.3, SetRule::Constant(false));
        let p = nonlocal_perimeter(&k, &d, &e).unwrap();
        assert_eq!(p, nonlocal_perimeter(&k, &d, &e.complement()).unwrap());
        assert_eq!(p, nltv_energy(&k, &d, &e.indicator()).unwrap());
    }

    #[test]
    fn singular_kernel_rejected_for_sets() {
        let d = Domain::interval(-1.0, 1.0, 16);
        let k = Kernel::Fractional { s: 0.5, c: 1.0 };
        assert!(matches!(nonlocal_perimeter(&k, &d, &NodeSet::empty(&d)), Err(NltvError::PerimeterInfinite(_))));
    }

    #[test]
    fn mean_curvature_closed_forms() {
        let d = Domain::interval(-1.0, 1.0, 40);
        let half = NodeSet::half_space(&d, 0, 0.0, true);
        let k = Kernel::Fractional { s: 0.25, c: 1.0 };
        assert!(nonlocal_mean_curvature(&k, &d, &half, &[0.0, 0.0]).unwrap().abs() < 1e-8);
        // interval (-a, a) at a with a box kernel of radius R > 2a: 2R - 4a
        let e = NodeSet::from_fn(&d, |p| p[0].abs() < 0.25, SetRule::Constant(false));
        let h = nonlocal_mean_curvature(&box_kernel(1.0), &d, &e, &[0.25, 0.0]).unwrap();
        assert!((h - 1.0).abs() < 1e-9, "{h}");
        assert!(matches!(
            nonlocal_mean_curvature(&k, &d, &e, &[0.7, 0.0]),
            Err(NltvError::NotOnBoundary(_))
        ));
    }

    #[test]
    fn step_collapses_to_one_level() {
        let d = Domain::interval(-1.0, 1.0, 50);
        let e = NodeSet::half_space(&d, 0, 0.0, false);
        let c = coarea_check(&box_kernel(0.5), &d, &e.indicator(), 2).unwrap();
        assert!(c.detail("relative_gap").unwrap() < 1e-12, "{:?}", c.details);
    }

    #[test]
    fn perimeter_calibration_on_superlevel() {
        let d = Domain::interval(-1.0, 1.0, 60);
        let k = box_kernel(0.7);
        let phi = DiscreteFunction::from_closed(&d, |p| p[0] + 0.1 * p[0].powi(3), Growth::Linear { odd: true }, vec![]);
        let f = NodeSet::half_space(&d, 0, 0.2, false);
        let c = perimeter_calibration(&k, &d, &phi, &f).unwrap();
        assert_eq!(c, nonlocal_perimeter(&k, &d, &f).unwrap());
        assert_eq!(perimeter_calibration(&k, &d, &phi, &NodeSet::empty(&d)).unwrap(), 0.0);
        let g = NodeSet::from_fn(&d, |p| (3.0 * p[0]).sin() > 0.2, SetRule::HalfSpace { axis: 0, at: 0.2, below: false });
        assert!(perimeter_calibration(&k, &d, &phi, &g).unwrap() <= nonlocal_perimeter(&k, &d, &g).unwrap() + 1e-12);
    }

    #[test]
    fn forms_collapse_on_anchor() {
        let d = Domain::interval(0.0, 1.0, 40);
        let k = box_kernel(0.5);
        let field = Field::affine([1.0, 0.0], 0.0, -1.0, 1.0);
        let u = field.leaf_function(&d, 0.0);
        let f = nltv_calibration_forms(&k, &d, &field, 0.0, &u, 64).unwrap();
        let e = nltv_energy(&k, &d, &u).unwrap();
        assert!(relative_gap(f.generic, e) < 1e-12);
        assert!(relative_gap(f.sign_form, e) < 1e-12, "{f:?} {e}");
        assert!(relative_gap(f.level_form, e) < 1e-2, "{f:?} {e}");
    }
}
