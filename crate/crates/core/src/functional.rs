//! Energies, first-variation operators and calibration functionals.
//!
//! All quantities share one [`Discretization`]: a Lagrangian, a node set
//! and a pair-weight policy. With `μ` the symmetric pair weights,
//!
//! ```text
//! E(w) = ½ Σ_{Ω×Ω} μ g(w_i, w_j) + Σ_{Ω×Ωᶜ} μ g(w_i, w_k) + κ Σ_Ω h F(w_i)
//! ```
//!
//! When the exterior data grows linearly, far-field terms are renormalised
//! by subtracting `g(x_i, y_k, r_i, w_k)`, where `r` is the exterior rule
//! continued into `Ω`. The subtracted constant depends on the exterior data
//! only, so energy differences between competitors are unaffected.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Field, FieldError};
use crate::gauss;
use crate::lagrangian::{LagrangianSpec, LocalLagrangian, PairCtx, Support};
use crate::mesh::{self, Domain, DiscreteFunction, Growth, Mesh, MeshError, NodeKind, QuadratureRule, SingularPolicy};
use crate::par;
use crate::Point;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FunctionalError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("competitor differs from the anchor leaf outside Ω at {0:?}")]
    ExteriorMismatch(Point),
    #[error("nonfinite energy")]
    NonfiniteEnergy,
    #[error("{0:?} is not a mesh node")]
    NotANode(Point),
    #[error("not applicable: {0}")]
    NotApplicable(String),
}

pub type Result<T> = std::result::Result<T, FunctionalError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub value: f64,
    pub breakdown: BTreeMap<String, f64>,
    /// `"half-double-integral"`: `E = ½∬ G`.
    pub convention: String,
    /// `2E` for the fractional-quadratic family, the `c/4`-normalised
    /// semilinear energy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fractional_semilinear: Option<f64>,
    pub nodes: usize,
    pub cells: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationPath {
    Defining,
    DefiningLevel,
    Alternative,
    Local,
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub value: f64,
    pub anchor_t0: f64,
    pub path: CalibrationPath,
    /// Estimated error of the inner parameter integrals.
    pub inner_error: f64,
    pub inner_evaluations: u64,
    pub minus_infinity: bool,
    pub breakdown: BTreeMap<String, f64>,
}

/// Lagrangian, nodes and pair policy shared by every functional.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub spec: LagrangianSpec,
    pub mesh: Mesh,
    pub policy: SingularPolicy,
    pub omega_measure: f64,
    pub renormalise: bool,
}

impl Discretization {
    /// `growth` is that of the exterior data of the functions to be
    /// evaluated.
    pub fn new(spec: &LagrangianSpec, domain: &Domain, rule: &QuadratureRule, growth: Growth) -> Result<Self> {
        if spec.dim != domain.dim {
            return Err(FunctionalError::NotApplicable("dimension mismatch".into()));
        }
        let exterior = rule.exterior && spec.support == Support::Full;
        let family_decay = spec.tail_decay();
        let decay = match (growth, family_decay) {
            (_, None) => None,
            (Growth::Bounded(_), Some(a)) | (Growth::Linear { odd: true }, Some(a)) => Some(a),
            (Growth::Linear { odd: false }, Some(a)) if a > 1.0 => Some(a - 1.0),
            (Growth::Linear { odd: false }, Some(_)) | (Growth::Unknown, Some(_)) if exterior => {
                return Err(MeshError::TailUnbounded(format!("{growth:?} exterior data for {}", spec.id())).into())
            }
            _ => None,
        };
        if exterior && domain.dim == 2 && matches!(growth, Growth::Linear { .. }) && family_decay.is_some() {
            return Err(MeshError::TailUnbounded("2D tails need bounded exterior data".into()).into());
        }
        let mesh = Mesh::build(domain, exterior, decay)?;
        let policy = rule.singular.unwrap_or(match spec.diag_exponent() {
            Some(q) => SingularPolicy::SymmetricDifference { exponent: Some(q) },
            None => SingularPolicy::IncludeDiagonal,
        });
        Ok(Discretization {
            spec: spec.clone(),
            mesh,
            policy,
            omega_measure: domain.measure(),
            renormalise: matches!(growth, Growth::Linear { .. }),
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.mesh.domain
    }

    #[inline]
    fn ctx(&self, j: usize) -> PairCtx {
        PairCtx::new(j < self.mesh.n_interior, self.omega_measure)
    }

    #[inline]
    fn far(&self, j: usize) -> bool {
        self.renormalise && self.mesh.nodes[j].kind == NodeKind::Far
    }

    fn node_index(&self, x: &Point) -> Result<usize> {
        let d = self.domain();
        let idx = |k: usize| ((x[k] - d.lo[k]) / d.h(k) - 0.5).round();
        let i = idx(0);
        let j = if d.dim == 2 { idx(1) } else { 0.0 };
        if i < 0.0 || j < 0.0 || i >= d.cells[0] as f64 || (d.dim == 2 && j >= d.cells[1] as f64) {
            return Err(FunctionalError::NotANode(*x));
        }
        let k = j as usize * d.cells[0] + i as usize;
        if crate::lagrangian::dist(&self.mesh.nodes[k].x, x) > 1e-9 * d.min_h() {
            return Err(FunctionalError::NotANode(*x));
        }
        Ok(k)
    }

    /// Node values plus the renormalisation reference at interior nodes.
    fn samples(&self, w: &DiscreteFunction) -> Result<(Vec<f64>, Vec<f64>)> {
        w.check_finite()?;
        let v = self.mesh.sample(w);
        let r = if self.renormalise {
            self.mesh.interior().iter().map(|n| w.exterior.eval(&n.x)).collect()
        } else {
            vec![]
        };
        Ok((v, r))
    }

    /// Pair part of the energy as (interior, cross, tail), already halved.
    fn pair_energy(&self, v: &[f64], r: &[f64]) -> Result<mesh::QuadValue> {
        let s = &self.spec;
        let nodes = &self.mesh.nodes;
        let rows = self.mesh.row_sums(&self.policy, |i, j| {
            let (x, y, ctx) = (&nodes[i].x, &nodes[j].x, self.ctx(j));
            let g = s.pair_g(x, y, v[i], v[j], &ctx);
            if self.far(j) {
                g - s.pair_g(x, y, r[i], v[j], &ctx)
            } else {
                g
            }
        })?;
        Ok(mesh::reduce_rows(&rows).scale(0.5))
    }

    fn reaction_energy(&self, v: &[f64]) -> f64 {
        let k = self.spec.reaction_coef();
        if k == 0.0 {
            return 0.0;
        }
        let nodes = self.mesh.interior();
        k * par::sum_indexed(nodes.len(), |i| nodes[i].w * self.spec.reaction.f(v[i], &nodes[i].x))
    }

    /// Nonlocal plus local energy.
    pub fn energy(&self, w: &DiscreteFunction) -> Result<EnergyReport> {
        let (v, r) = self.samples(w)?;
        let pair = self.pair_energy(&v, &r)?;
        let reaction = self.reaction_energy(&v);
        let local = match &self.spec.local {
            Some(l) => local_energy(l, self.domain(), &v[..self.mesh.n_interior])?,
            None => 0.0,
        };
        let value = pair.interior + pair.cross + pair.tail + reaction + local;
        if !value.is_finite() {
            return Err(FunctionalError::NonfiniteEnergy);
        }
        let breakdown = BTreeMap::from([
            ("interior".to_string(), pair.interior),
            ("cross".to_string(), pair.cross),
            ("tail".to_string(), pair.tail),
            ("reaction".to_string(), reaction),
            ("local".to_string(), local),
        ]);
        let semilinear = (self.spec.family == crate::lagrangian::Family::FractionalQuadratic
            && self.spec.local.is_none())
        .then_some(2.0 * value);
        let d = self.domain();
        Ok(EnergyReport {
            value,
            breakdown,
            convention: "half-double-integral".into(),
            fractional_semilinear: semilinear,
            nodes: self.mesh.len(),
            cells: d.cells[..d.dim].to_vec(),
        })
    }

    /// Nonlocal Euler-Lagrange operator at every interior node.
    pub fn euler_lagrange_nodes(&self, w: &DiscreteFunction) -> Result<Vec<f64>> {
        let (v, _) = self.samples(w)?;
        self.euler_lagrange_values(&v)
    }

    fn euler_lagrange_values(&self, v: &[f64]) -> Result<Vec<f64>> {
        let s = &self.spec;
        let nodes = &self.mesh.nodes;
        let rows = self.mesh.row_sums(&self.policy, |i, j| {
            s.pair_da(&nodes[i].x, &nodes[j].x, v[i], v[j], &self.ctx(j))
        })?;
        let k = s.reaction_coef();
        let mut out: Vec<f64> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r[0] + r[1] + r[2]) / nodes[i].w + k * s.reaction.df(v[i], &nodes[i].x))
            .collect();
        if let Some(l) = &s.local {
            let ll = local_euler_lagrange(l, self.domain(), &v[..self.mesh.n_interior])?;
            for (o, a) in out.iter_mut().zip(ll) {
                *o += a;
            }
        }
        Ok(out)
    }

    /// `L(w)(x)` at an interior node.
    pub fn euler_lagrange(&self, w: &DiscreteFunction, x: &Point) -> Result<f64> {
        let i = self.node_index(x)?;
        Ok(self.euler_lagrange_nodes(w)?[i])
    }

    /// Neumann operator at every exterior node, with the energy's weights.
    pub fn neumann_nodes(&self, w: &DiscreteFunction) -> Result<Vec<f64>> {
        let (v, _) = self.samples(w)?;
        let n = self.mesh.n_interior;
        let nodes = &self.mesh.nodes;
        let s = &self.spec;
        Ok(par::map_indexed(nodes.len() - n, |k| {
            let kk = n + k;
            let mut acc = 0.0;
            for i in 0..n {
                let mu = self.mesh.pair_weight(i, kk, &self.policy);
                acc += mu * s.pair_da(&nodes[kk].x, &nodes[i].x, v[kk], v[i], &PairCtx::new(false, self.omega_measure));
            }
            acc / nodes[kk].w
        }))
    }

    /// `∫_Ω ∂_a G(x, y, w(x), w(y)) dy` at an exterior point, by 4-point
    /// Gauss per cell on the interpolated data.
    pub fn neumann_operator(&self, w: &DiscreteFunction, x: &Point) -> Result<f64> {
        let d = self.domain();
        if d.contains(x) {
            return Err(FunctionalError::NotApplicable("Neumann operator lives on Ωᶜ".into()));
        }
        let wx = w.eval(x);
        let s = &self.spec;
        let (gx, gw) = gauss::rule(4);
        let ctx = PairCtx::new(false, self.omega_measure);
        let cells = d.interior_nodes();
        let hx = d.h(0);
        let hy = if d.dim == 2 { d.h(1) } else { 1.0 };
        let parts = par::map_indexed(cells.len(), |c| {
            let m = cells[c];
            let mut acc = 0.0;
            let ny = if d.dim == 2 { gx.len() } else { 1 };
            for a in 0..gx.len() {
                for b in 0..ny {
                    let y = [
                        m[0] + 0.5 * hx * gx[a],
                        if d.dim == 2 { m[1] + 0.5 * hy * gx[b] } else { 0.0 },
                    ];
                    let wt = 0.5 * hx * gw[a] * if d.dim == 2 { 0.5 * hy * gw[b] } else { 1.0 };
                    acc += wt * s.pair_da(x, &y, wx, w.eval(&y), &ctx);
                }
            }
            acc
        });
        Ok(par::pairwise_sum(&parts))
    }
}

/// Centred differences on the midpoint grid, one-sided at the ends; the
/// end stencils integrate to the linearly extrapolated boundary trace.
fn gradient_1d(v: &[f64], h: f64) -> Vec<f64> {
    let n = v.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| {
            if i == 0 {
                (v[1] - v[0]) / h
            } else if i == n - 1 {
                (v[n - 1] - v[n - 2]) / h
            } else {
                (v[i + 1] - v[i - 1]) / (2.0 * h)
            }
        })
        .collect()
}

fn require_1d(d: &Domain) -> Result<()> {
    if d.dim != 1 {
        return Err(FunctionalError::NotApplicable("local terms are implemented in 1D".into()));
    }
    Ok(())
}

/// `∫_Ω G_L(x, w, ∇w)`.
pub fn local_energy(l: &LocalLagrangian, d: &Domain, v: &[f64]) -> Result<f64> {
    require_1d(d)?;
    let h = d.h(0);
    let g = gradient_1d(v, h);
    let nodes = d.interior_nodes();
    Ok(par::pairwise_sum(
        &(0..v.len()).map(|i| h * l.g(&nodes[i], v[i], &[g[i], 0.0])).collect::<Vec<_>>(),
    ))
}

/// `-div ∂_q G_L + ∂_λ G_L` by differences of the flux.
pub fn local_euler_lagrange(l: &LocalLagrangian, d: &Domain, v: &[f64]) -> Result<Vec<f64>> {
    require_1d(d)?;
    let h = d.h(0);
    let g = gradient_1d(v, h);
    let nodes = d.interior_nodes();
    let flux: Vec<f64> = (0..v.len()).map(|i| l.d_q(&nodes[i], v[i], &[g[i], 0.0])[0]).collect();
    let div = gradient_1d(&flux, h);
    Ok((0..v.len()).map(|i| -div[i] + l.d_lambda(&nodes[i], v[i], &[g[i], 0.0])).collect())
}

/// `L_L(uᵗ)(x)` for a leaf with closed-form gradient.
fn local_operator_on_leaf(l: &LocalLagrangian, field: &Field, t: f64, x: &Point) -> f64 {
    let eta = 1e-4;
    let flux = |y: &Point| l.d_q(y, field.leaf(t, y), &field.grad(t, y))[0];
    let div = (flux(&[x[0] + eta, 0.0]) - flux(&[x[0] - eta, 0.0])) / (2.0 * eta);
    -div + l.d_lambda(x, field.leaf(t, x), &field.grad(t, x))
}

/// Gauss rules used for the inner parameter integrals.
const INNER_ORDER: usize = 8;
const CHECK_ORDER: usize = 5;

/// Calibration functionals of one field, anchored at `u^{t₀}`.
pub struct Calibrator<'a> {
    pub disc: &'a Discretization,
    pub field: &'a Field,
    pub t0: f64,
    anchor: Vec<f64>,
    anchor_ref: Vec<f64>,
    anchor_energy: EnergyReport,
    /// Evaluate the inner integral in `λ` with `t(x, λ)` at every node
    /// instead of in the leaf parameter.
    pub level_variable: bool,
}

impl<'a> Calibrator<'a> {
    pub fn new(disc: &'a Discretization, field: &'a Field, t0: f64) -> Result<Self> {
        let u0 = field.leaf_function(disc.domain(), t0);
        let (anchor, anchor_ref) = disc.samples(&u0)?;
        let anchor_energy = disc.energy(&u0)?;
        Ok(Calibrator { disc, field, t0, anchor, anchor_ref, anchor_energy, level_variable: false })
    }

    pub fn anchor_energy(&self) -> f64 {
        self.anchor_energy.value
    }

    pub fn anchor_function(&self) -> DiscreteFunction {
        self.field.leaf_function(self.disc.domain(), self.t0)
    }

    /// Node values of `w` and leaf parameters through them; outside `Ω`
    /// the values must coincide with the anchor leaf.
    fn parameters(&self, w: &DiscreteFunction) -> Result<(Vec<f64>, Vec<f64>)> {
        let (v, _) = self.disc.samples(w)?;
        let nodes = &self.disc.mesh.nodes;
        let n = self.disc.mesh.n_interior;
        for k in n..nodes.len() {
            let (a, b) = (v[k], self.anchor[k]);
            if (a - b).abs() > 1e-12 * (1.0 + b.abs()) {
                return Err(FunctionalError::ExteriorMismatch(nodes[k].x));
            }
        }
        let mut ts = vec![self.t0; nodes.len()];
        for i in 0..n {
            ts[i] = self.field.leaf_parameter_hint(&nodes[i].x, v[i], Some(self.t0))?;
        }
        Ok((v, ts))
    }

    fn report(&self, path: CalibrationPath, value: f64, err: f64, evals: u64, parts: &[(&str, f64)]) -> CalibrationReport {
        CalibrationReport {
            value,
            anchor_t0: self.t0,
            path,
            inner_error: err,
            inner_evaluations: evals,
            minus_infinity: value == f64::NEG_INFINITY,
            breakdown: parts.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    fn reaction_increment(&self, v: &[f64]) -> f64 {
        let s = &self.disc.spec;
        let k = s.reaction_coef();
        if k == 0.0 {
            return 0.0;
        }
        let nodes = self.disc.mesh.interior();
        k * par::sum_indexed(nodes.len(), |i| {
            nodes[i].w * (s.reaction.f(v[i], &nodes[i].x) - s.reaction.f(self.anchor[i], &nodes[i].x))
        })
    }

    /// Row integrand `Σ_j μ_ij ∂_a g(x_i, x_j, uᵗ(x_i), uᵗ(x_j))`.
    fn row_da(&self, i: usize, t: f64, a: f64) -> f64 {
        let d = self.disc;
        let nodes = &d.mesh.nodes;
        let xi = &nodes[i].x;
        let mut acc = 0.0;
        for j in 0..nodes.len() {
            let mu = d.mesh.pair_weight(i, j, &d.policy);
            if mu == 0.0 {
                continue;
            }
            let b = self.field.leaf(t, &nodes[j].x);
            acc += mu * d.spec.pair_da(xi, &nodes[j].x, a, b, &d.ctx(j));
        }
        acc
    }

    /// Defining form: `E(u^{t₀}) + Σ_i ∫_{t₀}^{t_i} [Σ_j μ_ij ∂_a g] ∂ₜuᵗ(x_i) dt`
    /// plus the exact reaction increment.
    pub fn defining(&self, w: &DiscreteFunction) -> Result<CalibrationReport> {
        self.reject_local()?;
        let (v, ts) = self.parameters(w)?;
        let n = self.disc.mesh.n_interior;
        let nodes = &self.disc.mesh.nodes;
        let (g8, w8) = gauss::rule(INNER_ORDER);
        let (g5, w5) = gauss::rule(CHECK_ORDER);
        let rows = par::map_indexed(n, |i| {
            let (a, b) = (self.t0, ts[i]);
            if a == b {
                return (0.0, 0.0, 0.0, 0u64);
            }
            let xi = &nodes[i].x;
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            let mut evals = 0u64;
            let mut at = |t: f64| {
                evals += nodes.len() as u64;
                if self.level_variable {
                    self.row_da_level(i, t)
                } else {
                    self.row_da(i, t, self.field.leaf(t, xi)) * self.field.dt(t, xi)
                }
            };
            let (mut q8, mut q5, mut mag) = (0.0, 0.0, 0.0);
            for k in 0..g8.len() {
                let f = at(mid + half * g8[k]);
                q8 += w8[k] * f;
                mag += w8[k] * f.abs();
            }
            for k in 0..g5.len() {
                q5 += w5[k] * at(mid + half * g5[k]);
            }
            (q8 * half, (q8 - q5).abs() * half.abs(), mag * half.abs(), evals)
        });
        let inner = par::pairwise_sum(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
        let quad_err: f64 = rows.iter().map(|r| r.1).sum();
        let mag: f64 = rows.iter().map(|r| r.2).sum();
        let evals = rows.iter().map(|r| r.3).sum();
        let floor = 4.0 * f64::EPSILON * (mag + self.anchor_energy.value.abs()) * (nodes.len() as f64).log2();
        let reaction = self.reaction_increment(&v);
        let value = self.anchor_energy.value + inner + reaction;
        let path = if self.level_variable { CalibrationPath::DefiningLevel } else { CalibrationPath::Defining };
        Ok(self.report(
            path,
            value,
            quad_err + floor,
            evals,
            &[("anchor_energy", self.anchor_energy.value), ("inner", inner), ("reaction", reaction)],
        ))
    }

    /// Integrand of the `λ`-variable path at the `t`-node mapped to `λ`.
    fn row_da_level(&self, i: usize, t: f64) -> f64 {
        // λ runs over [u^{t₀}(x), w(x)]; map the Gauss node back through
        // the leaf parameter so both paths share abscissae in t
        let xi = &self.disc.mesh.nodes[i].x;
        let lambda = self.field.leaf(t, xi);
        let tt = self.field.leaf_parameter(xi, lambda).unwrap_or(t);
        self.row_da(i, tt, lambda) * self.field.dt(t, xi)
    }

    fn reject_local(&self) -> Result<()> {
        if self.disc.spec.local.is_some() {
            return Err(FunctionalError::NotApplicable(
                "spec has a local part; use the mixed calibration".into(),
            ));
        }
        Ok(())
    }

    /// Alternative form: `½∬ G(x, y, w(x), u^{t(x,w(x))}(y))` plus
    /// `½∬ ∫_{t(x,w(x))}^{t(y,w(y))} ∂_b G ∂ₜuᵗ(y) dt`, with a composite
    /// midpoint rule in `t` whose panel count follows the mesh width.
    pub fn alternative(&self, w: &DiscreteFunction) -> Result<CalibrationReport> {
        self.reject_local()?;
        let (v, ts) = self.parameters(w)?;
        let d = self.disc;
        let s = &d.spec;
        let nodes = &d.mesh.nodes;
        let n = d.mesh.n_interior;
        let h = d.domain().min_h();
        let field = self.field;
        let ctx_q = PairCtx::new(false, d.omega_measure);
        // ∫_{ta}^{tb} ∂_b g(x, y, uᵗ(x), uᵗ(y)) ∂ₜuᵗ(y) dt, midpoint with
        // m and 2m panels
        let inner = |x: &Point, y: &Point, ta: f64, tb: f64, ctx: &PairCtx| -> (f64, f64, u64) {
            if ta == tb {
                return (0.0, 0.0, 0);
            }
            let m = ((tb - ta).abs() / h).ceil().max(1.0) as usize;
            let mid = |panels: usize| {
                let dt = (tb - ta) / panels as f64;
                let mut acc = 0.0;
                for p in 0..panels {
                    let t = ta + (p as f64 + 0.5) * dt;
                    acc += s.pair_db(x, y, field.leaf(t, x), field.leaf(t, y), ctx) * field.dt(t, y);
                }
                acc * dt
            };
            let (q1, q2) = (mid(m), mid(2 * m));
            (q2, (q2 - q1).abs() / 3.0, 3 * m as u64)
        };
        let rows = par::map_indexed(n, |i| {
            let xi = &nodes[i].x;
            let (mut first, mut second, mut err, mut evals) = (0.0, 0.0, 0.0, 0u64);
            for j in 0..nodes.len() {
                let mu = d.mesh.pair_weight(i, j, &d.policy);
                if mu == 0.0 {
                    continue;
                }
                let yj = &nodes[j].x;
                let inside = j < n;
                let ctx = d.ctx(j);
                // ordered pair (i, j)
                let mut g = s.pair_g(xi, yj, v[i], field.leaf(ts[i], yj), &ctx);
                let (q, e, c) = inner(xi, yj, ts[i], ts[j], &ctx);
                if inside {
                    first += 0.5 * mu * g;
                    second += 0.5 * mu * q;
                    err += 0.5 * mu.abs() * e;
                    evals += c;
                    continue;
                }
                // exterior j: also the reversed pair (j, i) of Q(Ω)
                g += s.pair_g(yj, xi, v[j], field.leaf(ts[j], xi), &ctx_q);
                if d.far(j) {
                    g -= 2.0 * s.pair_g(xi, yj, self.anchor_ref[i], v[j], &ctx);
                }
                let (q2, e2, c2) = inner(yj, xi, ts[j], ts[i], &ctx_q);
                first += 0.5 * mu * g;
                second += 0.5 * mu * (q + q2);
                err += 0.5 * mu.abs() * (e + e2);
                evals += c + c2;
            }
            (first, second, err, evals)
        });
        let first = par::pairwise_sum(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
        let second = par::pairwise_sum(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
        let err: f64 = rows.iter().map(|r| r.2).sum();
        let evals = rows.iter().map(|r| r.3).sum();
        // separable reaction part collapses to κ∫F(w)
        let reaction = d.reaction_energy(&v);
        let value = first + second + reaction;
        Ok(self.report(
            CalibrationPath::Alternative,
            value,
            err,
            evals,
            &[("first", first), ("second", second), ("reaction", reaction)],
        ))
    }

    /// Local calibration through the split form: interior `dλ` integral of
    /// `L_L` on leaves, boundary flux integrals, and `E_L(u^{t₀})`.
    pub fn local(&self, w: &DiscreteFunction) -> Result<CalibrationReport> {
        let l = self.local_part()?;
        let d = self.disc.domain();
        require_1d(d)?;
        let (v, ts) = self.parameters_interior(w)?;
        let nodes = d.interior_nodes();
        let n = nodes.len();
        let h = d.h(0);
        let el0 = local_energy(l, d, &self.anchor[..n])?;
        let interior = par::sum_indexed(n, |i| {
            let x = &nodes[i];
            h * gauss::integrate(INNER_ORDER, self.t0, ts[i], |t| {
                local_operator_on_leaf(l, self.field, t, x) * self.field.dt(t, x)
            })
        });
        // traces by linear extrapolation to the end points
        let trace = |a: f64, b: f64| 1.5 * a - 0.5 * b;
        let ends = [
            (d.lo, -1.0, trace(v[0], v[1.min(n - 1)])),
            (d.hi, 1.0, trace(v[n - 1], v[n.saturating_sub(2)])),
        ];
        let mut boundary = 0.0;
        for (xb, normal, wb) in ends {
            let tb = self.field.leaf_parameter_hint(&xb, wb, Some(self.t0))?;
            boundary += normal
                * gauss::integrate(INNER_ORDER, self.t0, tb, |t| {
                    l.d_q(&xb, self.field.leaf(t, &xb), &self.field.grad(t, &xb))[0] * self.field.dt(t, &xb)
                });
        }
        let value = el0 + interior + boundary;
        Ok(self.report(
            CalibrationPath::Local,
            value,
            0.0,
            (n * INNER_ORDER) as u64,
            &[("anchor_energy", el0), ("interior", interior), ("boundary", boundary)],
        ))
    }

    /// Pointwise form `∫ ∂_q G_L(uᵗ, ∇uᵗ)(∇w - ∇uᵗ) + G_L(uᵗ, ∇uᵗ)` with
    /// `t = t(x, w(x))`.
    pub fn local_pointwise(&self, w: &DiscreteFunction) -> Result<f64> {
        let l = self.local_part()?;
        let d = self.disc.domain();
        require_1d(d)?;
        let (v, ts) = self.parameters_interior(w)?;
        let nodes = d.interior_nodes();
        let h = d.h(0);
        let gw = gradient_1d(&v, h);
        Ok(par::sum_indexed(nodes.len(), |i| {
            let x = &nodes[i];
            let (ut, gu) = (self.field.leaf(ts[i], x), self.field.grad(ts[i], x));
            h * (l.d_q(x, ut, &gu)[0] * (gw[i] - gu[0]) + l.g(x, ut, &gu))
        }))
    }

    fn local_part(&self) -> Result<&LocalLagrangian> {
        self.disc
            .spec
            .local
            .as_ref()
            .ok_or_else(|| FunctionalError::NotApplicable("no local part".into()))
    }

    fn parameters_interior(&self, w: &DiscreteFunction) -> Result<(Vec<f64>, Vec<f64>)> {
        let nodes = self.disc.domain().interior_nodes();
        let ts = nodes
            .iter()
            .zip(&w.values)
            .map(|(x, l)| self.field.leaf_parameter_hint(x, *l, Some(self.t0)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok((w.values.clone(), ts))
    }

    /// `C_N + C_L`; either part may be absent.
    pub fn mixed(&self, w: &DiscreteFunction) -> Result<CalibrationReport> {
        let local = match &self.disc.spec.local {
            Some(_) => Some(self.local(w)?),
            None => None,
        };
        let nonlocal = {
            let mut bare = self.disc.clone();
            bare.spec.local = None;
            let cal = Calibrator::new(&bare, self.field, self.t0)?;
            cal.defining(w)?
        };
        let lv = local.as_ref().map(|r| r.value).unwrap_or(0.0);
        let value = nonlocal.value + lv;
        Ok(self.report(
            CalibrationPath::Mixed,
            value,
            nonlocal.inner_error,
            nonlocal.inner_evaluations,
            &[("nonlocal", nonlocal.value), ("local", lv)],
        ))
    }
}

pub fn energy_nonlocal(spec: &LagrangianSpec, domain: &Domain, w: &DiscreteFunction, rule: &QuadratureRule) -> Result<EnergyReport> {
    Discretization::new(spec, domain, rule, w.growth)?.energy(w)
}

pub fn euler_lagrange(spec: &LagrangianSpec, domain: &Domain, w: &DiscreteFunction, x: &Point) -> Result<f64> {
    Discretization::new(spec, domain, &QuadratureRule::default(), w.growth)?.euler_lagrange(w, x)
}

pub fn neumann_operator(spec: &LagrangianSpec, domain: &Domain, w: &DiscreteFunction, x: &Point) -> Result<f64> {
    Discretization::new(spec, domain, &QuadratureRule::default(), w.growth)?.neumann_operator(w, x)
}

pub fn calibration_defining(
    spec: &LagrangianSpec,
    field: &Field,
    t0: f64,
    domain: &Domain,
    w: &DiscreteFunction,
    rule: &QuadratureRule,
) -> Result<CalibrationReport> {
    let disc = Discretization::new(spec, domain, rule, field.growth)?;
    Calibrator::new(&disc, field, t0)?.defining(w)
}

/// The alternative form does not depend on the anchor; `t₀` only fixes the
/// exterior data.
pub fn calibration_alternative(
    spec: &LagrangianSpec,
    field: &Field,
    t0: f64,
    domain: &Domain,
    w: &DiscreteFunction,
    rule: &QuadratureRule,
) -> Result<CalibrationReport> {
    let disc = Discretization::new(spec, domain, rule, field.growth)?;
    Calibrator::new(&disc, field, t0)?.alternative(w)
}

pub fn calibration_local(
    spec: &LagrangianSpec,
    field: &Field,
    t0: f64,
    domain: &Domain,
    w: &DiscreteFunction,
) -> Result<CalibrationReport> {
    let disc = Discretization::new(spec, domain, &QuadratureRule { exterior: false, ..Default::default() }, field.growth)?;
    Calibrator::new(&disc, field, t0)?.local(w)
}

pub fn calibration_mixed(
    spec: &LagrangianSpec,
    field: &Field,
    t0: f64,
    domain: &Domain,
    w: &DiscreteFunction,
) -> Result<CalibrationReport> {
    let disc = Discretization::new(spec, domain, &QuadratureRule::default(), field.growth)?;
    Calibrator::new(&disc, field, t0)?.mixed(w)
}
