//! One-parameter families of leaves `t ↦ uᵗ`: strict fields, the leaf
//! parameter `t(x, λ)`, translation fields and sliding weak fields.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::certificate::Certificate;
use crate::mesh::{Domain, DiscreteFunction, Growth};
use crate::Point;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("(x, λ) = ({x:?}, {lambda}) outside the field region [{lo}, {hi}]")]
    OutOfRegion { x: Point, lambda: f64, lo: f64, hi: f64 },
    #[error("profile not monotone along the axis near {0:?}")]
    NotMonotone(Point),
    #[error("T = {t} exceeds min(u - φ) = {bound} off the inner ball")]
    TTooLarge { t: f64, bound: f64 },
    #[error("probe does not touch: φ(x₀) - u(x₀) = {0:e}")]
    NoTouch(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type LeafFn = Arc<dyn Fn(f64, &Point) -> f64 + Send + Sync>;
pub type LeafGrad = Arc<dyn Fn(f64, &Point) -> Point + Send + Sync>;
pub type InverseFn = Arc<dyn Fn(&Point, f64) -> f64 + Send + Sync>;

/// Root tolerance of the leaf-parameter inversion, on `|uᵗ(x) - λ|`.
pub const LEAF_TOL: f64 = 1e-10;
/// Minimal `∂ₜuᵗ` for a family to count as a strict field.
pub const STRICTNESS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Affine,
    Translation,
    Custom,
}

/// A strict field: leaves increasing in `t` on `[t_min, t_max]`.
#[derive(Clone)]
pub struct Field {
    pub kind: FieldKind,
    pub t_min: f64,
    pub t_max: f64,
    leaf: LeafFn,
    dt: LeafFn,
    grad: Option<LeafGrad>,
    inverse: Option<InverseFn>,
    /// Growth of every leaf at infinity.
    pub growth: Growth,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Field({:?}, [{}, {}])", self.kind, self.t_min, self.t_max)
    }
}

impl Field {
    pub fn custom(t_min: f64, t_max: f64, leaf: LeafFn, dt: LeafFn, growth: Growth) -> Field {
        Field { kind: FieldKind::Custom, t_min, t_max, leaf, dt, grad: None, inverse: None, growth }
    }

    pub fn with_inverse(mut self, inv: InverseFn) -> Field {
        self.inverse = Some(inv);
        self
    }

    pub fn with_grad(mut self, grad: LeafGrad) -> Field {
        self.grad = Some(grad);
        self
    }

    /// `uᵗ(x) = slope·x + offset + t`.
    pub fn affine(slope: Point, offset: f64, t_min: f64, t_max: f64) -> Field {
        let lin = move |x: &Point| slope[0] * x[0] + slope[1] * x[1] + offset;
        Field {
            kind: FieldKind::Affine,
            t_min,
            t_max,
            leaf: Arc::new(move |t, x| lin(x) + t),
            dt: Arc::new(|_, _| 1.0),
            grad: Some(Arc::new(move |_, _| slope)),
            inverse: Some(Arc::new(move |x, l| l - lin(x))),
            growth: Growth::Linear { odd: true },
        }
    }

    /// Translates of the layer `(2/π) arctan` along the first axis.
    pub fn arctan_layer(t_min: f64, t_max: f64) -> Field {
        use std::f64::consts::PI;
        Field {
            kind: FieldKind::Translation,
            t_min,
            t_max,
            leaf: Arc::new(|t, x| 2.0 / PI * (x[0] + t).atan()),
            dt: Arc::new(|t, x| 2.0 / PI / (1.0 + (x[0] + t).powi(2))),
            grad: Some(Arc::new(|t, x| [2.0 / PI / (1.0 + (x[0] + t).powi(2)), 0.0])),
            inverse: Some(Arc::new(|x, l| (0.5 * PI * l).tan() - x[0])),
            growth: Growth::Bounded(1.0),
        }
    }

    pub fn leaf(&self, t: f64, x: &Point) -> f64 {
        (self.leaf)(t, x)
    }

    pub fn dt(&self, t: f64, x: &Point) -> f64 {
        (self.dt)(t, x)
    }

    pub fn has_inverse(&self) -> bool {
        self.inverse.is_some()
    }

    /// Spatial gradient of a leaf; centred differences without a closed form.
    pub fn grad(&self, t: f64, x: &Point) -> Point {
        if let Some(g) = &self.grad {
            return g(t, x);
        }
        let h = 1e-6 * (1.0 + x[0].abs().max(x[1].abs()));
        let d = |k: usize| {
            let (mut a, mut b) = (*x, *x);
            a[k] += h;
            b[k] -= h;
            (self.leaf(t, &a) - self.leaf(t, &b)) / (2.0 * h)
        };
        [d(0), d(1)]
    }

    pub fn bounds(&self, x: &Point) -> (f64, f64) {
        (self.leaf(self.t_min, x), self.leaf(self.t_max, x))
    }

    /// `t(x, λ)` with `u^{t(x,λ)}(x) = λ`.
    pub fn leaf_parameter(&self, x: &Point, lambda: f64) -> Result<f64, FieldError> {
        self.leaf_parameter_hint(x, lambda, None)
    }

    /// As [`Field::leaf_parameter`]; when `λ` equals the leaf through `hint`
    /// at `x` bit for bit, returns `hint` itself.
    pub fn leaf_parameter_hint(&self, x: &Point, lambda: f64, hint: Option<f64>) -> Result<f64, FieldError> {
        if let Some(t0) = hint {
            if self.leaf(t0, x) == lambda {
                return Ok(t0);
            }
        }
        let (lo, hi) = self.bounds(x);
        let slack = LEAF_TOL;
        if !(lambda >= lo - slack && lambda <= hi + slack) {
            return Err(FieldError::OutOfRegion { x: *x, lambda, lo, hi });
        }
        if let Some(inv) = &self.inverse {
            return Ok(inv(x, lambda).clamp(self.t_min, self.t_max));
        }
        let (mut a, mut b) = (self.t_min, self.t_max);
        let mut t = 0.5 * (a + b);
        for _ in 0..200 {
            let r = self.leaf(t, x) - lambda;
            if r.abs() <= 1e-13 * (1.0 + lambda.abs()) {
                return Ok(t);
            }
            if r > 0.0 {
                b = t;
            } else {
                a = t;
            }
            // safeguarded Newton step, bisection otherwise
            let d = self.dt(t, x);
            let newton = t - r / d;
            t = if d > 0.0 && newton > a && newton < b { newton } else { 0.5 * (a + b) };
            if b - a < 1e-15 * (1.0 + t.abs()) {
                break;
            }
        }
        Ok(t)
    }

    /// Leaf `u^t` as a function on `domain`.
    pub fn leaf_function(&self, domain: &Domain, t: f64) -> DiscreteFunction {
        let leaf = self.leaf.clone();
        DiscreteFunction::from_closed(domain, move |p| leaf(t, p), self.growth, vec![])
    }

    /// Sampled check of the field axioms on `domain`.
    pub fn check(&self, domain: &Domain, t_samples: usize) -> Certificate {
        let mut cert = Certificate::new("field-monotone", 1e-6);
        let pts = domain.interior_nodes();
        let n = t_samples.max(2);
        for p in pts.iter().step_by((pts.len() / 64).max(1)) {
            for k in 0..n {
                let t = self.t_min + (self.t_max - self.t_min) * k as f64 / (n - 1) as f64;
                let d = self.dt(t, p);
                cert.observe(d - STRICTNESS, &[("x0", p[0]), ("t", t)], "∂ₜuᵗ below strictness");
                let h = 1e-5 * (1.0 + t.abs());
                let fd = (self.leaf(t + h, p) - self.leaf(t - h, p)) / (2.0 * h);
                let rel = (fd - d).abs() / d.abs().max(1e-300);
                cert.observe(-rel, &[("x0", p[0]), ("t", t)], "∂ₜuᵗ differs from difference quotient");
            }
        }
        if cert.margin > 0.0 {
            cert.margin = 0.0;
        }
        cert.decide()
    }
}

/// Profile for a translation field: `u` and, optionally, its derivative
/// along the translation axis.
#[derive(Clone)]
pub struct Profile {
    pub u: Arc<dyn Fn(&Point) -> f64 + Send + Sync>,
    pub du: Option<Arc<dyn Fn(&Point) -> f64 + Send + Sync>>,
    pub growth: Growth,
}

/// Leaves `u(x + t e_axis)`.
pub fn translation_field(
    profile: &Profile,
    axis: usize,
    t_min: f64,
    t_max: f64,
    domain: &Domain,
) -> Result<Field, FieldError> {
    if axis >= domain.dim || !(t_max > t_min) {
        return Err(FieldError::InvalidParameter("axis or interval".into()));
    }
    let u = profile.u.clone();
    let shift = move |x: &Point, t: f64| {
        let mut y = *x;
        y[axis] += t;
        y
    };
    let du: Arc<dyn Fn(&Point) -> f64 + Send + Sync> = match &profile.du {
        Some(d) => d.clone(),
        None => {
            let u = u.clone();
            Arc::new(move |x: &Point| {
                let h = 1e-6 * (1.0 + x[axis].abs());
                let (mut a, mut b) = (*x, *x);
                a[axis] += h;
                b[axis] -= h;
                (u(&a) - u(&b)) / (2.0 * h)
            })
        }
    };
    // sampled monotonicity over the swept region
    for p in domain.interior_nodes() {
        for k in 0..=8 {
            let t = t_min + (t_max - t_min) * k as f64 / 8.0;
            let q = shift(&p, t);
            if !(du(&q) > 0.0) {
                return Err(FieldError::NotMonotone(q));
            }
        }
    }
    let (u1, du1) = (u.clone(), du.clone());
    Ok(Field {
        kind: FieldKind::Translation,
        t_min,
        t_max,
        leaf: Arc::new(move |t, x| u1(&shift(x, t))),
        dt: Arc::new(move |t, x| du1(&shift(x, t))),
        grad: None,
        inverse: None,
        growth: profile.growth,
    })
}

/// Quadratic probe `φ(x) = value + slope·(x - x₀) - ½q|x - x₀|²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Paraboloid {
    pub center: Point,
    pub value: f64,
    pub slope: Point,
    pub opening: f64,
}

impl Paraboloid {
    pub fn eval(&self, x: &Point) -> f64 {
        let d = [x[0] - self.center[0], x[1] - self.center[1]];
        self.value + self.slope[0] * d[0] + self.slope[1] * d[1]
            - 0.5 * self.opening * (d[0] * d[0] + d[1] * d[1])
    }

    /// Lower bound on the Hessian eigenvalues.
    pub fn hessian_lower(&self) -> f64 {
        -self.opening
    }
}

/// Touching function for a weak field: `ψ_t` below `uᵗ`.
#[derive(Clone)]
pub struct Witness {
    pub f: LeafFn,
    pub hessian_lower: f64,
}

/// Nondecreasing family with `u⁰ = u`, `uᵗ = u` off `Ω`.
#[derive(Clone)]
pub struct WeakField {
    pub base: DiscreteFunction,
    pub t_max: f64,
    pub c0: f64,
    leaf: LeafFn,
    dt: LeafFn,
    pub witness: Option<Witness>,
    pub probe: Option<Paraboloid>,
    pub neighbourhood: Option<(Point, Point)>,
    pub delta: f64,
}

impl fmt::Debug for WeakField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WeakField(T = {}, C₀ = {}, probe = {:?})", self.t_max, self.c0, self.probe)
    }
}

fn in_box(b: &(Point, Point), x: &Point, dim: usize) -> bool {
    (0..dim).all(|k| x[k] > b.0[k] && x[k] < b.1[k])
}

impl WeakField {
    pub fn custom(
        base: DiscreteFunction,
        t_max: f64,
        c0: f64,
        leaf: LeafFn,
        dt: LeafFn,
        witness: Option<Witness>,
    ) -> WeakField {
        WeakField { base, t_max, c0, leaf, dt, witness, probe: None, neighbourhood: None, delta: 0.0 }
    }

    pub fn leaf(&self, t: f64, x: &Point) -> f64 {
        (self.leaf)(t, x)
    }

    pub fn dt(&self, t: f64, x: &Point) -> f64 {
        (self.dt)(t, x)
    }

    /// Mask of `Ω_t = {uᵗ > u}` on the interior nodes.
    pub fn active_mask(&self, t: f64) -> Vec<bool> {
        let d = &self.base.domain;
        d.interior_nodes()
            .iter()
            .map(|p| self.leaf(t, p) > self.base.eval(p))
            .collect()
    }

    /// Leaf `uᵗ` on the mesh, with exterior rule that of `u`.
    pub fn leaf_function(&self, t: f64) -> DiscreteFunction {
        let d = &self.base.domain;
        let values = d.interior_nodes().iter().map(|p| self.leaf(t, p)).collect();
        DiscreteFunction::from_values(d, values, self.base.exterior.clone(), self.base.growth)
    }

    /// `t(x, λ)` on `{uᵗ(x) > u(x)}` by bisection; `λ ≤ u(x)` maps to the
    /// infimum of `I_x` and points never activated map to `T`.
    pub fn leaf_parameter(&self, x: &Point, lambda: f64) -> f64 {
        let u = self.base.eval(x);
        if self.leaf(self.t_max, x) <= u {
            return self.t_max;
        }
        let (mut a, mut b) = (0.0, self.t_max);
        if lambda <= u {
            // infimum of I_x
            while b - a > 1e-14 {
                let m = 0.5 * (a + b);
                if self.leaf(m, x) > u {
                    b = m;
                } else {
                    a = m;
                }
            }
            return b;
        }
        while b - a > 1e-14 {
            let m = 0.5 * (a + b);
            if self.leaf(m, x) >= lambda {
                b = m;
            } else {
                a = m;
            }
        }
        0.5 * (a + b)
    }
}

/// `uᵗ = max{u, φ + t}` in the neighbourhood `n_box`, `u` elsewhere.
pub fn sliding_weak_field(
    u: &DiscreteFunction,
    phi: Paraboloid,
    n_box: (Point, Point),
    delta: f64,
    t_max: f64,
) -> Result<WeakField, FieldError> {
    let dim = u.domain.dim;
    let gap0 = phi.eval(&phi.center) - u.eval(&phi.center);
    if gap0.abs() > 1e-12 {
        return Err(FieldError::NoTouch(gap0));
    }
    if t_max < 0.0 || !(delta > 0.0) {
        return Err(FieldError::InvalidParameter("T ≥ 0 and δ > 0 required".into()));
    }
    // min(u - φ) over the closed box minus B_δ(x₀), scanned on a fine grid
    let m = 400usize;
    let mut bound = f64::INFINITY;
    let (lo, hi) = n_box;
    let ny = if dim == 2 { m } else { 0 };
    for i in 0..=m {
        for j in 0..=ny {
            let p = [
                lo[0] + (hi[0] - lo[0]) * i as f64 / m as f64,
                if dim == 2 { lo[1] + (hi[1] - lo[1]) * j as f64 / m as f64 } else { 0.0 },
            ];
            if crate::lagrangian::dist(&p, &phi.center) >= delta {
                bound = bound.min(u.eval(&p) - phi.eval(&p));
            }
        }
    }
    for p in u.domain.interior_nodes() {
        if in_box(&n_box, &p, dim) && crate::lagrangian::dist(&p, &phi.center) >= delta {
            bound = bound.min(u.eval(&p) - phi.eval(&p));
        }
    }
    if t_max > bound {
        return Err(FieldError::TTooLarge { t: t_max, bound });
    }
    let base = u.clone();
    let b2 = u.clone();
    let leaf: LeafFn = Arc::new(move |t, x| {
        let ux = base.eval(x);
        if in_box(&n_box, x, dim) && base.domain.contains(x) {
            ux.max(phi.eval(x) + t)
        } else {
            ux
        }
    });
    let dt: LeafFn = Arc::new(move |t, x| {
        if in_box(&n_box, x, dim) && b2.domain.contains(x) && phi.eval(x) + t > b2.eval(x) {
            1.0
        } else {
            0.0
        }
    });
    let witness = Witness { f: Arc::new(move |t, x| phi.eval(x) + t), hessian_lower: phi.hessian_lower() };
    Ok(WeakField {
        base: u.clone(),
        t_max,
        c0: 1f64.max(phi.opening),
        leaf,
        dt,
        witness: Some(witness),
        probe: Some(phi),
        neighbourhood: Some(n_box),
        delta,
    })
}

/// Clause-by-clause check of the weak-field axioms on sampled points.
pub fn check_weak_field(wf: &WeakField, samples: usize) -> Certificate {
    let tol = 1e-12;
    let mut cert = Certificate::new("weak-field", tol);
    cert.margin = 0.0;
    let d = &wf.base.domain;
    let pts = d.interior_nodes();
    let diam = d.diam();
    let ext: Vec<Point> = (0..16)
        .map(|k| {
            let r = diam * (0.05 + 0.3 * k as f64);
            let sgn = if k % 2 == 0 { -1.0 } else { 1.0 };
            let c = d.center();
            if d.dim == 1 {
                [if sgn < 0.0 { d.lo[0] - r } else { d.hi[0] + r }, 0.0]
            } else {
                [c[0] + sgn * (0.5 * (d.hi[0] - d.lo[0]) + r), c[1]]
            }
        })
        .collect();
    let nt = samples.max(2);
    let ts: Vec<f64> = (0..nt).map(|k| wf.t_max * k as f64 / (nt - 1) as f64).collect();
    let clause = |cert: &mut Certificate, id: &str, m: f64, x: &Point, t: f64| {
        if m < -tol && cert.margin >= -tol {
            cert.notes.push(format!("first violated clause: {id}"));
        }
        cert.observe(m, &[("x0", x[0]), ("x1", x[1]), ("t", t)], id);
    };
    // (i) u⁰ = u
    for p in &pts {
        let m = -(wf.leaf(0.0, p) - wf.base.eval(p)).abs();
        clause(&mut cert, "(i) u^0 = u", m, p, 0.0);
    }
    // (ii) uᵗ = u off Ω
    for p in &ext {
        for &t in &ts {
            let m = -(wf.leaf(t, p) - wf.base.eval(p)).abs();
            clause(&mut cert, "(ii) exterior equality", m, p, t);
        }
    }
    // (iii) continuity: t-modulus by C₀ and spatial jumps by those of u and
    // the witness
    let h = d.min_h();
    let jump_u = pts
        .windows(2)
        .map(|w| (wf.base.eval(&w[0]) - wf.base.eval(&w[1])).abs())
        .fold(0.0, f64::max);
    for (k, &t) in ts.iter().enumerate() {
        let jump_w = match &wf.witness {
            Some(w) => pts.windows(2).map(|p| ((w.f)(t, &p[0]) - (w.f)(t, &p[1])).abs()).fold(0.0, f64::max),
            None => f64::INFINITY,
        };
        for w in pts.windows(2) {
            if crate::lagrangian::dist(&w[0], &w[1]) > 1.5 * h {
                continue;
            }
            let j = (wf.leaf(t, &w[0]) - wf.leaf(t, &w[1])).abs();
            clause(&mut cert, "(iii) spatial continuity", jump_u.max(jump_w) - j, &w[0], t);
        }
        if k > 0 {
            let dt = ts[k] - ts[k - 1];
            for p in &pts {
                let inc = wf.leaf(t, p) - wf.leaf(ts[k - 1], p);
                clause(&mut cert, "(iii) monotone in t", inc, p, t);
                clause(&mut cert, "(iii) t-modulus", wf.c0 * dt * (1.0 + 1e-12) - inc, p, t);
            }
        }
    }
    // (iv) 0 ≤ ∂ₜuᵗ ≤ C₀ on I_x
    for p in &pts {
        for &t in &ts {
            if wf.leaf(t, p) > wf.base.eval(p) {
                let v = wf.dt(t, p);
                clause(&mut cert, "(iv) derivative bounds", v.min(wf.c0 - v), p, t);
            }
        }
    }
    // (v) touching witness with D²ψ ≥ -C₀
    match &wf.witness {
        None => {
            let p = d.center();
            clause(&mut cert, "(v) witness missing", -1.0, &p, 0.0);
        }
        Some(w) => {
            let p = d.center();
            clause(&mut cert, "(v) witness Hessian bound", w.hessian_lower + wf.c0, &p, 0.0);
            for p in &pts {
                for &t in &ts {
                    let (ut, psi) = (wf.leaf(t, p), (w.f)(t, p));
                    if ut > wf.base.eval(p) {
                        clause(&mut cert, "(v) witness touches on the active set", -(ut - psi).abs(), p, t);
                    }
                }
            }
        }
    }
    // active sets nested
    let mut prev = wf.active_mask(0.0);
    for &t in ts.iter().skip(1) {
        let cur = wf.active_mask(t);
        for (i, (a, b)) in prev.iter().zip(&cur).enumerate() {
            if *a && !*b {
                clause(&mut cert, "active sets nested", -1.0, &pts[i], t);
            }
        }
        prev = cur;
    }
    cert.decide()
}
