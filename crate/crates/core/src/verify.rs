//! Numerical certifiers: calibration properties, minimality, energy
//! comparison on weak fields, viscosity probes, comparison oracles and a
//! 1D layer solver.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificate::{Certificate, Counterexample};
use crate::field::{Field, FieldError, Paraboloid, WeakField};
use crate::functional::{Calibrator, Discretization, EnergyReport, FunctionalError};
use crate::lagrangian::{self, Family, LagrangianSpec, Reaction};
use crate::mesh::{self, Domain, DiscreteFunction, ExteriorRule, Growth, MeshError, QuadratureRule};
use crate::par;
use crate::Point;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("Lagrangian is not convex: {0}")]
    NotConvex(String),
    #[error("weak field has no touching witness")]
    WitnessMissing,
    #[error("u ≤ v fails at {0:?}")]
    OrderingViolated(Point),
    #[error("no convergence after {iterations} iterations, residual {residual:e}")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("profile not increasing near {0:?}")]
    MonotonicityLost(Point),
    #[error("not applicable: {0}")]
    NotApplicable(String),
}

pub type Result<T> = std::result::Result<T, VerifyError>;

/// Truncation radii as multiples of `diam(Ω)`.
pub const DEFAULT_EPS_SCHEDULE: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];

fn scale_of(r: &EnergyReport) -> f64 {
    r.breakdown.values().map(|v| v.abs()).sum::<f64>().max(1e-300)
}

pub fn node_csv(w: &DiscreteFunction) -> String {
    let mut s = String::from("node,x0,x1,value\n");
    for (k, (p, v)) in w.domain.interior_nodes().iter().zip(&w.values).enumerate() {
        s.push_str(&format!("{k},{:.17e},{:.17e},{:.17e}\n", p[0], p[1], v));
    }
    s
}

/// Smooth bump `(1 - |x-c|²/r²)³₊`.
fn bump(x: &Point, c: &Point, r: f64) -> f64 {
    let d = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)) / (r * r);
    if d >= 1.0 {
        0.0
    } else {
        (1.0 - d).powi(3)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    Bumps,
    LeafBlends,
    ClampedShifts,
    Mixed,
}

#[derive(Clone, Debug)]
pub struct Competitor {
    pub label: String,
    pub function: DiscreteFunction,
}

/// Seeded admissible competitors sharing the exterior data of `u^{t₀}`.
#[derive(Clone, Debug)]
pub struct CompetitorSet {
    pub recipe: Recipe,
    pub seed: u64,
    pub t0: f64,
    pub members: Vec<Competitor>,
}

impl CompetitorSet {
    /// `amplitude` bounds bump heights and the clamp width; members whose
    /// graph leaves the field region are shrunk until they fit.
    pub fn generate(
        field: &Field,
        t0: f64,
        domain: &Domain,
        recipe: Recipe,
        count: usize,
        seed: u64,
        amplitude: f64,
    ) -> CompetitorSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchor = field.leaf_function(domain, t0);
        let nodes = domain.interior_nodes();
        let diam = domain.diam();
        let span = 0.5 * (t0 - field.t_min).min(field.t_max - t0);
        let mut members = Vec::with_capacity(count);
        let point = |rng: &mut ChaCha8Rng| -> Point {
            let mut p = [0.0; 2];
            for k in 0..domain.dim {
                p[k] = rng.gen_range(domain.lo[k]..domain.hi[k]);
            }
            p
        };
        for k in 0..count {
            let kind = match recipe {
                Recipe::Mixed => [Recipe::Bumps, Recipe::LeafBlends, Recipe::ClampedShifts][k % 3],
                r => r,
            };
            let (label, mut delta): (String, Vec<f64>) = match kind {
                Recipe::Bumps => {
                    let m = rng.gen_range(1..=3);
                    let spec: Vec<(Point, f64, f64)> = (0..m)
                        .map(|_| {
                            (point(&mut rng), rng.gen_range(0.1..0.5) * diam, rng.gen_range(-amplitude..amplitude))
                        })
                        .collect();
                    let d = nodes.iter().map(|x| spec.iter().map(|(c, r, a)| a * bump(x, c, *r)).sum()).collect();
                    (format!("bumps({m})"), d)
                }
                Recipe::LeafBlends => {
                    let (c, r) = (point(&mut rng), rng.gen_range(0.2..0.8) * diam);
                    let t1 = t0 + rng.gen_range(-span..span);
                    let d = nodes
                        .iter()
                        .zip(&anchor.values)
                        .map(|(x, u)| field.leaf(t0 + (t1 - t0) * bump(x, &c, r), x) - u)
                        .collect();
                    (format!("leaf-blend(t1 = {t1:.4})"), d)
                }
                _ => {
                    let (c, r) = (point(&mut rng), rng.gen_range(0.3..1.0) * diam);
                    let t1 = t0 + rng.gen_range(-span..span);
                    let beta = amplitude * rng.gen_range(0.2..1.0);
                    let d = nodes
                        .iter()
                        .zip(&anchor.values)
                        .map(|(x, u)| {
                            let plateau = bump(x, &c, r).powf(0.25);
                            plateau * (field.leaf(t1, x) - u).clamp(-beta, beta)
                        })
                        .collect();
                    (format!("clamped-shift(t1 = {t1:.4}, β = {beta:.4})"), d)
                }
            };
            let inside = |d: &[f64]| {
                nodes.iter().zip(anchor.values.iter().zip(d)).all(|(x, (u, e))| {
                    let (lo, hi) = field.bounds(x);
                    let v = u + e;
                    v > lo && v < hi
                })
            };
            let mut shrink = 0;
            while !inside(&delta) && shrink < 40 {
                delta.iter_mut().for_each(|e| *e *= 0.5);
                shrink += 1;
            }
            let values = anchor.values.iter().zip(&delta).map(|(u, e)| u + e).collect();
            members.push(Competitor {
                label: if shrink > 0 { format!("{label} shrunk×2^-{shrink}") } else { label },
                function: DiscreteFunction::from_values(domain, values, anchor.exterior.clone(), anchor.growth),
            });
        }
        CompetitorSet { recipe, seed, t0, members }
    }

    /// `(1 - ε) w + ε u` for every member.
    pub fn blended_toward(&self, anchor: &DiscreteFunction, eps: f64) -> CompetitorSet {
        let members = self
            .members
            .iter()
            .map(|c| {
                let values = c.function.values.iter().zip(&anchor.values).map(|(w, u)| (1.0 - eps) * w + eps * u).collect();
                Competitor {
                    label: format!("{} blended {eps}", c.label),
                    function: DiscreteFunction::from_values(&c.function.domain, values, c.function.exterior.clone(), c.function.growth),
                }
            })
            .collect();
        CompetitorSet { members, ..self.clone() }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

fn inconclusive(property: &str, why: String) -> Certificate {
    let mut c = Certificate::new(property, 0.0);
    c.margin = f64::NAN;
    c.notes.push(why);
    c.decide()
}

/// Tolerances of the calibration checks.
pub const LEAF_GAP_TOL: f64 = 1e-12;
pub const BOUND_TOL: f64 = 1e-10;
pub const NULL_TOL: f64 = 1e-3;

/// Leaf identity on sampled leaves, lower bound `C ≤ E` and the null property on competitors.
/// The margin is in multiples of each sub-check's tolerance; raw values
/// land in the details.
pub fn certify_calibration(
    spec: &LagrangianSpec,
    field: &Field,
    t0: f64,
    domain: &Domain,
    competitors: &CompetitorSet,
    rule: &QuadratureRule,
) -> Certificate {
    let property = "calibration";
    let fc = field.check(domain, 9);
    if !fc.passed() {
        return inconclusive(property, format!("field check failed: {:?}", fc.counterexample));
    }
    let disc = match Discretization::new(spec, domain, rule, field.growth) {
        Ok(d) => d,
        Err(e) => return inconclusive(property, e.to_string()),
    };
    let mut cert = Certificate::new(property, 1.0);
    match lagrangian::check_ellipticity(spec, 64) {
        Ok(c) if c.passed() => {}
        _ => cert.notes.push("Lagrangian not elliptic: C ≤ E may fail".into()),
    }
    // leaf identity on five leaves around t₀
    let span = 0.5 * (t0 - field.t_min).min(field.t_max - t0);
    let mut leaf_worst: f64 = 0.0;
    let mut leaf_inner: f64 = 0.0;
    for k in 0..5 {
        let t = t0 + span * (k as f64 - 2.0) / 2.0;
        let run = || -> std::result::Result<(f64, f64), FunctionalError> {
            let cal = Calibrator::new(&disc, field, t)?;
            let leaf = field.leaf_function(domain, t);
            let c = cal.defining(&leaf)?;
            let e = disc.energy(&leaf)?;
            Ok(((c.value - e.value).abs() / scale_of(&e), c.breakdown["inner"].abs() + c.breakdown["reaction"].abs()))
        };
        match run() {
            Ok((gap, inner)) => {
                leaf_worst = leaf_worst.max(gap);
                leaf_inner = leaf_inner.max(inner);
                cert.observe(-gap / LEAF_GAP_TOL, &[("t", t)], "leaf identity gap");
            }
            Err(e) => {
                cert.notes.push(format!("leaf identity at t = {t}: {e}"));
                cert.observe(f64::NEG_INFINITY, &[("t", t)], "leaf identity evaluation failed");
            }
        }
    }
    let cal = match Calibrator::new(&disc, field, t0) {
        Ok(c) => c,
        Err(e) => return inconclusive(property, e.to_string()),
    };
    let e0 = cal.anchor_energy();
    let anchor_scale = match disc.energy(&cal.anchor_function()) {
        Ok(r) => scale_of(&r),
        Err(e) => return inconclusive(property, e.to_string()),
    };
    let results = par::map_slice(&competitors.members, |c| -> std::result::Result<(f64, f64, f64, f64), FunctionalError> {
        let cr = cal.defining(&c.function)?;
        let er = disc.energy(&c.function)?;
        Ok((cr.value, er.value, scale_of(&er), cr.inner_error))
    });
    let mut bound_worst = f64::INFINITY;
    let mut cvals = Vec::new();
    for (k, (c, r)) in competitors.members.iter().zip(&results).enumerate() {
        match r {
            Ok((cv, ev, sc, err)) => {
                let raw = (ev - cv) / sc;
                let tol = BOUND_TOL + err / sc;
                bound_worst = bound_worst.min(raw);
                cvals.push(*cv);
                let before = cert.margin;
                cert.observe(raw / tol, &[("competitor", k as f64), ("E", *ev), ("C", *cv)], &format!("C > E on {}", c.label));
                if raw < -tol {
                    cert.notes.push(format!("C > E for competitor {k}"));
                    if cert.margin < before {
                        if let Some(ce) = cert.counterexample.as_mut() {
                            ce.csv = Some(node_csv(&c.function));
                        }
                    }
                }
                let null = -(cv - e0).abs() / anchor_scale;
                cert.observe(null / NULL_TOL, &[("competitor", k as f64), ("C", *cv)], &format!("C(w) differs from C(u) on {}", c.label));
            }
            Err(e) => cert.notes.push(format!("competitor {k} skipped: {e}")),
        }
    }
    if cert.margin > 0.0 && cert.margin.is_finite() {
        cert.margin = cert.margin.min(1.0);
    }
    let spread = relative_spread(&cvals);
    let mut cert = cert
        .with_detail("leaf_worst_relative_gap", leaf_worst)
        .with_detail("leaf_calibration_term", leaf_inner)
        .with_detail("bound_worst_relative_margin", bound_worst)
        .with_detail("null_spread", spread)
        .with_detail("anchor_energy", e0)
        .with_detail("competitors", competitors.len() as f64);
    cert.notes.push("margin in multiples of each sub-check tolerance".into());
    cert.decide()
}

/// Defining and alternative calibrations agree within twice their summed
/// error estimates on every competitor.
pub fn certify_calibration_equivalence(
    spec: &LagrangianSpec,
    field: &Field,
    t0: f64,
    domain: &Domain,
    competitors: &CompetitorSet,
    rule: &QuadratureRule,
) -> Certificate {
    let property = "calibration-equivalence";
    let disc = match Discretization::new(spec, domain, rule, field.growth) {
        Ok(d) => d,
        Err(e) => return inconclusive(property, e.to_string()),
    };
    let cal = match Calibrator::new(&disc, field, t0) {
        Ok(c) => c,
        Err(e) => return inconclusive(property, e.to_string()),
    };
    let mut cert = Certificate::new(property, 0.0);
    let (mut worst_gap, mut worst_rel) = (0.0f64, 0.0f64);
    for (k, c) in competitors.members.iter().enumerate() {
        let pair = cal.defining(&c.function).and_then(|d| Ok((d, cal.alternative(&c.function)?)));
        match pair {
            Ok((d, a)) => {
                let gap = (d.value - a.value).abs();
                let budget = 2.0 * (d.inner_error + a.inner_error) + 1e-14 * d.value.abs().max(a.value.abs());
                worst_gap = worst_gap.max(gap);
                worst_rel = worst_rel.max(gap / budget);
                cert.observe(budget - gap, &[("competitor", k as f64), ("defining", d.value), ("alternative", a.value)], &format!("forms disagree on {}", c.label));
            }
            Err(e) => {
                cert.notes.push(format!("competitor {k}: {e}"));
                cert.observe(f64::NEG_INFINITY, &[("competitor", k as f64)], "evaluation failed");
            }
        }
    }
    if competitors.is_empty() {
        cert.margin = 0.0;
    }
    cert.with_detail("worst_gap", worst_gap).with_detail("worst_gap_over_budget", worst_rel).decide()
}

/// `‖(-Δ)^{1/2} u - sin(πu)/π‖_∞` for `u = (2/π) atan` on the nodes of
/// `domain`.
pub fn layer_identity_check(domain: &Domain, tolerance: f64) -> Result<Certificate> {
    let u = DiscreteFunction::from_closed(domain, |p| 2.0 / PI * p[0].atan(), Growth::Bounded(1.0), vec![]);
    let nodes = domain.interior_nodes();
    let res = par::map_slice(&nodes, |x| -> Result<f64> {
        let lap = mesh::fractional_laplacian_pv_scaled(&u, x, 0.5, 1.0 / PI)?;
        Ok(lap - (PI * u.eval(x)).sin() / PI)
    });
    let mut cert = Certificate::new("layer-identity", tolerance);
    let mut worst = 0.0f64;
    for (x, r) in nodes.iter().zip(res) {
        let r = r?;
        worst = worst.max(r.abs());
        cert.observe(-r.abs(), &[("x0", x[0])], "layer identity residual");
    }
    let f = |p: &Point| 2.0 / PI * p[0].atan();
    let dense = dense_fractional_laplacian(&f, &[1.0, 0.0], 1, 0.5, 1.0 / PI, 4);
    Ok(cert
        .with_detail("residual_sup", worst)
        .with_detail("dense_oracle_at_1", dense)
        .with_detail("dense_oracle_gap", (dense - 1.0 / PI).abs())
        .decide())
}

/// `(max - min) / |mean|`.
pub fn relative_spread(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (hi - lo) / mean.abs().max(1e-300)
}

/// Energy-only oracle: `E(u^{t₀}) ≤ E(w) + tol·scale`.
pub fn certify_minimality(
    spec: &LagrangianSpec,
    field: &Field,
    t0: f64,
    domain: &Domain,
    competitors: &CompetitorSet,
    rule: &QuadratureRule,
) -> Certificate {
    let property = "minimality";
    let disc = match Discretization::new(spec, domain, rule, field.growth) {
        Ok(d) => d,
        Err(e) => return inconclusive(property, e.to_string()),
    };
    let e0 = match disc.energy(&field.leaf_function(domain, t0)) {
        Ok(r) => r.value,
        Err(e) => return inconclusive(property, e.to_string()),
    };
    let mut cert = Certificate::new(property, BOUND_TOL);
    let results = par::map_slice(&competitors.members, |c| disc.energy(&c.function));
    for (k, (c, r)) in competitors.members.iter().zip(results).enumerate() {
        match r {
            Ok(er) => {
                let raw = (er.value - e0) / scale_of(&er);
                let before = cert.margin;
                cert.observe(raw, &[("competitor", k as f64), ("E", er.value), ("E0", e0)], &format!("lower energy: {}", c.label));
                if raw < -BOUND_TOL {
                    cert.notes.push(format!("energy below the anchor for competitor {k}"));
                    if cert.margin < before {
                        if let Some(ce) = cert.counterexample.as_mut() {
                            ce.csv = Some(node_csv(&c.function));
                        }
                    }
                }
            }
            Err(e) => cert.notes.push(format!("competitor {k} skipped: {e}")),
        }
    }
    cert.with_detail("anchor_energy", e0).decide()
}

/// Sign of `L(uᵗ)` on leaves above and below `t₀`.
pub fn sub_super_field_check(spec: &LagrangianSpec, field: &Field, t0: f64, domain: &Domain) -> Certificate {
    let tol = 1e-5;
    let property = "sub-super-field";
    let disc = match Discretization::new(spec, domain, &QuadratureRule::default(), field.growth) {
        Ok(d) => d,
        Err(e) => return inconclusive(property, e.to_string()),
    };
    let nodes = disc.mesh.interior().to_vec();
    let mut cert = Certificate::new(property, tol);
    let (mut above_min, mut below_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for side in [1.0, -1.0] {
        let room = if side > 0.0 { field.t_max - t0 } else { t0 - field.t_min };
        for k in 1..=4 {
            let t = t0 + side * room * k as f64 / 4.0 * 0.9;
            let l = match disc.euler_lagrange_nodes(&field.leaf_function(domain, t)) {
                Ok(l) => l,
                Err(e) => return inconclusive(property, e.to_string()),
            };
            for (x, v) in nodes.iter().zip(l) {
                let m = side * v;
                if side > 0.0 {
                    above_min = above_min.min(v);
                } else {
                    below_max = below_max.max(v);
                }
                let what = if side > 0.0 { "leaf above t₀ is not a supersolution" } else { "leaf below t₀ is not a subsolution" };
                cert.observe(m, &[("t", t), ("x0", x.x[0]), ("x1", x.x[1])], what);
            }
        }
    }
    cert.notes.push(format!("supersolutions above: {}", above_min >= -tol));
    cert.notes.push(format!("subsolutions below: {}", below_max <= tol));
    if cert.margin > 0.0 {
        cert.margin = 0.0;
    }
    cert.with_detail("above_min", above_min).with_detail("below_max", below_max).decide()
}

/// Crossings of `φ + t` with `u` inside the box, and the box ends (1D).
fn sliding_kinks(wf: &WeakField, t: f64) -> Vec<Point> {
    let (Some(phi), Some((lo, hi))) = (wf.probe, wf.neighbourhood) else { return vec![] };
    if wf.base.domain.dim != 1 {
        return vec![];
    }
    let d = &wf.base.domain;
    let (a, b) = (lo[0].max(d.lo[0]), hi[0].min(d.hi[0]));
    let mut kinks = vec![[a, 0.0], [b, 0.0]];
    let gap = |x: f64| phi.eval(&[x, 0.0]) + t - wf.base.eval(&[x, 0.0]);
    let m = 2000;
    for i in 0..m {
        let (mut x0, mut x1) = (a + (b - a) * i as f64 / m as f64, a + (b - a) * (i + 1) as f64 / m as f64);
        if gap(x0).signum() != gap(x1).signum() {
            for _ in 0..80 {
                let mid = 0.5 * (x0 + x1);
                if gap(mid).signum() == gap(x0).signum() {
                    x0 = mid;
                } else {
                    x1 = mid;
                }
            }
            kinks.push([0.5 * (x0 + x1), 0.0]);
        }
    }
    kinks
}

fn weak_leaf(wf: &WeakField, t: f64) -> DiscreteFunction {
    let w = wf.clone();
    DiscreteFunction::from_closed(&wf.base.domain, move |p| w.leaf(t, p), wf.base.growth, sliding_kinks(wf, t))
}

/// `L(ε)` extrapolated to `ε = 0` from the last two radii (ratio 2).
fn extrapolate(values: &[f64], s: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return values[0];
    }
    let k = 2f64.powf(2.0 - 2.0 * s) - 1.0;
    values[n - 1] + (values[n - 1] - values[n - 2]) / k
}

/// `(-Δ)^s_ε v(x)` on the schedule, scaled by the Lagrangian constant.
fn truncated_schedule(spec: &LagrangianSpec, v: &DiscreteFunction, x: &Point, eps: &[f64]) -> Result<Vec<f64>> {
    let diam = v.domain.diam();
    eps.iter()
        .map(|e| Ok(mesh::truncated_fractional_laplacian_scaled(v, x, spec.s, e * diam, spec.c)?))
        .collect()
}

fn require_semilinear(spec: &LagrangianSpec) -> Result<()> {
    if spec.family != Family::FractionalQuadratic || spec.local.is_some() {
        return Err(VerifyError::NotApplicable("needs the fractional-quadratic family".into()));
    }
    Ok(())
}

/// `φ̄ = φ` on the box, `u` elsewhere.
fn probe_extension(u: &DiscreteFunction, phi: Paraboloid, n_box: (Point, Point)) -> DiscreteFunction {
    let dim = u.domain.dim;
    let base = u.clone();
    let inside = move |x: &Point| (0..dim).all(|k| x[k] > n_box.0[k] && x[k] < n_box.1[k]);
    let kinks = if dim == 1 { vec![[n_box.0[0], 0.0], [n_box.1[0], 0.0]] } else { vec![] };
    DiscreteFunction::from_closed(&u.domain, move |p| if inside(p) { phi.eval(p) } else { base.eval(p) }, u.growth, kinks)
}

/// `(-Δ)^s φ̄(x₀) - F'(φ̄(x₀))` in the semilinear normalisation.
pub fn probe_residual(spec: &LagrangianSpec, u: &DiscreteFunction, phi: Paraboloid, n_box: (Point, Point)) -> Result<f64> {
    require_semilinear(spec)?;
    let ext = probe_extension(u, phi, n_box);
    let x0 = phi.center;
    let lap = mesh::fractional_laplacian_pv_scaled(&ext, &x0, spec.s, spec.c)?;
    Ok(lap - spec.reaction.df(phi.value, &x0))
}

/// Integrand `[(-Δ)^s uᵗ - F'(uᵗ)] ∂ₜuᵗ` at `(x, t)`, with its value at
/// each truncation radius.
fn comparison_integrand(spec: &LagrangianSpec, wf: &WeakField, x: &Point, t: f64, eps: &[f64]) -> Result<Vec<f64>> {
    let leaf = weak_leaf(wf, t);
    let lt = leaf.eval(x);
    let f = spec.reaction.df(lt, x);
    let dt = wf.dt(t, x);
    Ok(truncated_schedule(spec, &leaf, x, eps)?.into_iter().map(|l| (l - f) * dt).collect())
}

/// Both sides of `E(u^T) ≤ E(u) + ∫∫ [(-Δ)^s uᵗ - F'(uᵗ)] dλ dx` in the
/// semilinear normalisation `E_{s,F} = 2E`.
pub fn energy_comparison_check(spec: &LagrangianSpec, wf: &WeakField, eps_schedule: &[f64]) -> Result<Certificate> {
    require_semilinear(spec)?;
    if wf.witness.is_none() {
        return Err(VerifyError::WitnessMissing);
    }
    let d = &wf.base.domain;
    let disc = Discretization::new(spec, d, &QuadratureRule::default(), wf.base.growth)?;
    let eu = 2.0 * disc.energy(&wf.base)?.value;
    let mut cert = Certificate::new("energy-comparison", 0.0);
    if wf.t_max == 0.0 {
        cert.margin = 0.0;
        return Ok(cert.with_detail("lhs", eu).with_detail("rhs", eu).with_detail("energy_drop", 0.0).decide());
    }
    let t_max = wf.t_max;
    let leaf_t = weak_leaf(wf, t_max);
    let e_t = 2.0 * disc.energy(&leaf_t)?.value;
    let nodes = disc.mesh.interior().to_vec();
    let active: Vec<usize> = (0..nodes.len()).filter(|&i| leaf_t.values[i] > wf.base.values[i]).collect();
    let (gx, gw) = crate::gauss::rule(8);
    let eps = if eps_schedule.is_empty() { &DEFAULT_EPS_SCHEDULE[..] } else { eps_schedule };
    // per node: ∫_{I_x} integrand dt at every radius, and sup of the integrand
    let rows = par::map_indexed(active.len(), |k| -> Result<(Vec<f64>, f64, f64)> {
        let i = active[k];
        let x = &nodes[i].x;
        let ta = wf.leaf_parameter(x, wf.base.values[i]);
        let (mid, half) = (0.5 * (ta + t_max), 0.5 * (t_max - ta));
        let mut acc = vec![0.0; eps.len()];
        let mut sup = f64::NEG_INFINITY;
        for q in 0..gx.len() {
            let t = mid + half * gx[q];
            let v = comparison_integrand(spec, wf, x, t, eps)?;
            sup = sup.max(extrapolate(&v, spec.s) / wf.dt(t, x).max(1e-300));
            for (a, b) in acc.iter_mut().zip(v) {
                *a += gw[q] * half * b * nodes[i].w;
            }
        }
        let graph = nodes[i].w * (leaf_t.values[i] - wf.base.values[i]);
        Ok((acc, sup, graph))
    });
    let rows: Vec<(Vec<f64>, f64, f64)> = rows.into_iter().collect::<Result<_>>()?;
    let per_eps: Vec<f64> = (0..eps.len()).map(|e| par::pairwise_sum(&rows.iter().map(|r| r.0[e]).collect::<Vec<_>>())).collect();
    let integral = extrapolate(&per_eps, spec.s);
    let sup = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let graph: f64 = rows.iter().map(|r| r.2).sum();
    let lhs = e_t;
    let rhs = eu + integral;
    let scale = eu.abs() + e_t.abs() + integral.abs();
    let uncertainty = if per_eps.len() > 1 { (per_eps[per_eps.len() - 1] - per_eps[per_eps.len() - 2]).abs() } else { 0.0 };
    cert.tolerance = 1e-8 * scale + uncertainty;
    cert.margin = rhs - lhs;
    cert.trend = per_eps.clone();
    cert.trend.push(integral);
    // downward divergence of the truncated integrals
    let diverging = per_eps.len() > 2 && {
        let n = per_eps.len();
        let (d1, d2) = (per_eps[n - 2] - per_eps[n - 3], per_eps[n - 1] - per_eps[n - 2]);
        d1 < 0.0 && d2 < 0.0 && d2.abs() > d1.abs()
    };
    if diverging {
        cert.notes.push("truncated integrals diverge downward: right side may be -∞".into());
    }
    if cert.margin < -cert.tolerance {
        cert.counterexample = Some(Counterexample {
            description: "E(u^T) exceeds the right side".into(),
            location: [("T".to_string(), t_max)].into_iter().collect(),
            csv: Some(node_csv(&leaf_t)),
        });
    }
    let mut cert = cert
        .with_detail("lhs", lhs)
        .with_detail("rhs", rhs)
        .with_detail("energy_u", eu)
        .with_detail("energy_uT", e_t)
        .with_detail("energy_drop", eu - e_t)
        .with_detail("rhs_integral", integral)
        .with_detail("integrand_sup", sup)
        .with_detail("active_graph_measure", graph)
        .with_detail("active_nodes", active.len() as f64)
        .with_detail("T", t_max)
        .with_detail("minus_infinity", if diverging { 1.0 } else { 0.0 });
    if let (Some(phi), Some(nb)) = (wf.probe, wf.neighbourhood) {
        let m0 = -probe_residual(spec, &wf.base, phi, nb)?;
        cert = cert.with_detail("probe_margin", m0);
        if m0 > 0.0 && graph > 0.0 {
            cert = cert.with_detail("drop_ratio", (eu - e_t) / (m0 * graph));
        }
    }
    Ok(cert.decide())
}

/// Sliding weak field under `u` along the probe: `T` starts from the
/// admissible bound and halves until the integrand is at most
/// `-fraction·c₀` on the active set, `c₀` being the probe margin.
pub fn fit_sliding_field(
    spec: &LagrangianSpec,
    u: &DiscreteFunction,
    phi: Paraboloid,
    n_box: (Point, Point),
    delta: f64,
    fraction: f64,
) -> Result<(WeakField, f64)> {
    let c0 = -probe_residual(spec, u, phi, n_box)?;
    if !(c0 > 0.0) {
        return Err(VerifyError::NotApplicable(format!("probe is not a strict subsolution: margin {c0:e}")));
    }
    let bound = match crate::field::sliding_weak_field(u, phi, n_box, delta, f64::MAX) {
        Err(FieldError::TTooLarge { bound, .. }) => bound,
        Err(e) => return Err(e.into()),
        Ok(_) => unreachable!("T = MAX is never admissible"),
    };
    let mut t = 0.9 * bound;
    let eps = &DEFAULT_EPS_SCHEDULE[..];
    for _ in 0..30 {
        let wf = crate::field::sliding_weak_field(u, phi, n_box, delta, t)?;
        let d = &u.domain;
        let ok = d.interior_nodes().iter().all(|x| {
            [t, 0.5 * t].iter().all(|&tt| {
                if wf.leaf(tt, x) <= u.eval(x) {
                    return true;
                }
                match comparison_integrand(spec, &wf, x, tt, eps) {
                    Ok(v) => extrapolate(&v, spec.s) <= -fraction * c0,
                    Err(_) => false,
                }
            })
        });
        if ok {
            return Ok((wf, c0));
        }
        t *= 0.5;
    }
    Err(VerifyError::NotApplicable("no sliding time satisfies the sign condition".into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Below,
    Above,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub points: Vec<Point>,
    /// Sampled points when `points` is empty.
    pub count: usize,
    pub gradients: usize,
    pub openings: usize,
    pub min_opening: f64,
    /// Neighbourhood half-width as a multiple of `diam(Ω)`.
    pub radius: f64,
    pub tolerance: f64,
    /// Re-evaluate the worst probe with a quadrature this many times denser.
    pub oracle_density: Option<usize>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            points: vec![],
            count: 20,
            gradients: 11,
            openings: 8,
            min_opening: 0.125,
            radius: 0.1,
            tolerance: 1e-6,
            oracle_density: None,
        }
    }
}

fn probe_points(domain: &Domain, cfg: &ProbeConfig) -> Vec<Point> {
    if !cfg.points.is_empty() {
        return cfg.points.clone();
    }
    let r = cfg.radius * domain.diam();
    let n = cfg.count.max(1);
    (0..n)
        .map(|k| {
            let f = (k as f64 + 0.5) / n as f64;
            let mut p = domain.center();
            p[0] = domain.lo[0] + r + f * (domain.hi[0] - domain.lo[0] - 2.0 * r);
            if domain.dim == 2 {
                let g = ((k as f64 * 0.618_033_988_75) % 1.0 + 0.5 / n as f64) % 1.0;
                p[1] = domain.lo[1] + r + g * (domain.hi[1] - domain.lo[1] - 2.0 * r);
            }
            p
        })
        .collect()
}

/// Composite midpoint over geometric radial panels and a trapezoid in
/// angle; an independent check of the principal value.
pub fn dense_fractional_laplacian(f: &(dyn Fn(&Point) -> f64 + Sync), x: &Point, dim: usize, s: f64, c: f64, density: usize) -> f64 {
    let (r_min, r_max, ratio) = (1e-10f64, 1e8f64, 1.02f64);
    let n_theta = if dim == 2 { 64 * density } else { 1 };
    let fx = f(x);
    let d = |r: f64| -> f64 {
        if dim == 1 {
            2.0 * fx - f(&[x[0] + r, 0.0]) - f(&[x[0] - r, 0.0])
        } else {
            let mut acc = 0.0;
            for k in 0..n_theta {
                let th = PI * (k as f64 + 0.5) / n_theta as f64;
                let z = [r * th.cos(), r * th.sin()];
                acc += 2.0 * fx - f(&[x[0] + z[0], x[1] + z[1]]) - f(&[x[0] - z[0], x[1] - z[1]]);
            }
            acc * PI / n_theta as f64
        }
    };
    let panels = ((r_max / r_min).ln() / ratio.ln()).ceil() as usize;
    let parts = par::map_indexed(panels, |p| {
        let a = r_min * ratio.powi(p as i32);
        let b = a * ratio;
        let h = (b - a) / density as f64;
        (0..density)
            .map(|k| {
                let r = a + (k as f64 + 0.5) * h;
                d(r) * r.powf(-1.0 - 2.0 * s) * h
            })
            .sum::<f64>()
    });
    let body = par::pairwise_sum(&parts);
    // quadratic behaviour below r_min, flat second difference beyond r_max
    let inner = d(r_min) * r_min.powf(-2.0 * s) / (2.0 - 2.0 * s);
    let outer = d(r_max) * r_max.powf(-2.0 * s) / (2.0 * s);
    c * (inner + body + outer)
}

fn viscosity_test(spec: &LagrangianSpec, domain: &Domain, u: &DiscreteFunction, cfg: &ProbeConfig, side: Side) -> Result<Certificate> {
    require_semilinear(spec)?;
    let property = match side {
        Side::Below => "viscosity-supersolution",
        Side::Above => "viscosity-subsolution",
    };
    let sign = match side {
        Side::Below => 1.0,
        Side::Above => -1.0,
    };
    let dim = domain.dim;
    let h = domain.min_h();
    let r = cfg.radius * domain.diam();
    let nodes = domain.interior_nodes();
    let points = probe_points(domain, cfg);
    let openings: Vec<f64> = (0..cfg.openings).map(|m| cfg.min_opening * 2f64.powi(m as i32)).collect();
    // (value, gradient, opening, probes tried, probes admissible)
    type Outcome = (Option<(f64, Point, f64)>, usize, usize);
    let outcomes: Vec<Result<Outcome>> = par::map_slice(&points, |x0| -> Result<Outcome> {
        let u0 = u.eval(x0);
        let eta = 1e-6 * (1.0 + x0[0].abs());
        let ghat = |k: usize| {
            let (mut a, mut b) = (*x0, *x0);
            a[k] += eta;
            b[k] -= eta;
            (u.eval(&a) - u.eval(&b)) / (2.0 * eta)
        };
        let g0 = [ghat(0), if dim == 2 { ghat(1) } else { 0.0 }];
        let mut lo = [x0[0] - r, x0[1] - r];
        let mut hi = [x0[0] + r, x0[1] + r];
        for k in 0..dim {
            lo[k] = lo[k].max(domain.lo[k]);
            hi[k] = hi[k].min(domain.hi[k]);
        }
        if dim == 1 {
            lo[1] = -1.0;
            hi[1] = 1.0;
        }
        let n_box = (lo, hi);
        let local: Vec<&Point> = nodes.iter().filter(|p| (0..dim).all(|k| p[k] > lo[k] && p[k] < hi[k])).collect();
        let half = (cfg.gradients / 2) as i64;
        let step = 0.2 * h;
        let mut best: Option<(f64, Point, f64)> = None;
        let (mut tried, mut admissible) = (0, 0);
        for gi in -half..=half {
            for gj in if dim == 2 { -half..=half } else { 0..=0 } {
                let g = [g0[0] + gi as f64 * step, g0[1] + gj as f64 * step];
                for &q in &openings {
                    tried += 1;
                    let phi = Paraboloid { center: *x0, value: u0, slope: g, opening: sign * q };
                    // touch from the chosen side on the nodes, strictly off B_h
                    let touches = local.iter().all(|p| {
                        let gap = sign * (u.eval(p) - phi.eval(p));
                        let far = lagrangian::dist(p, x0) > h * (1.0 + 1e-9);
                        if far {
                            gap > 0.0
                        } else {
                            gap >= -1e-12 * (1.0 + u0.abs()) || lagrangian::dist(p, x0) > 0.0
                        }
                    });
                    if !touches {
                        continue;
                    }
                    admissible += 1;
                    let v = sign * probe_residual(spec, u, phi, n_box)?;
                    if best.is_none_or(|b| v < b.0) {
                        best = Some((v, g, q));
                    }
                }
            }
        }
        Ok((best, tried, admissible))
    });
    let mut cert = Certificate::new(property, cfg.tolerance);
    let (mut skipped, mut tried, mut admissible) = (0usize, 0usize, 0usize);
    let mut worst: Option<(Point, Point, f64)> = None;
    for (x0, o) in points.iter().zip(outcomes) {
        let (best, t, a) = o?;
        tried += t;
        admissible += a;
        match best {
            None => skipped += 1,
            Some((v, g, q)) => {
                let before = cert.margin;
                cert.observe(v, &[("x0", x0[0]), ("x1", x0[1]), ("g0", g[0]), ("g1", g[1]), ("q", q)], "probe violates the inequality");
                if cert.margin < before {
                    worst = Some((*x0, g, q));
                }
            }
        }
    }
    if let (Some(density), Some((x0, g, q))) = (cfg.oracle_density, worst) {
        let mut lo = [x0[0] - r, x0[1] - r];
        let mut hi = [x0[0] + r, x0[1] + r];
        for k in 0..dim {
            lo[k] = lo[k].max(domain.lo[k]);
            hi[k] = hi[k].min(domain.hi[k]);
        }
        if dim == 1 {
            lo[1] = -1.0;
            hi[1] = 1.0;
        }
        let phi = Paraboloid { center: x0, value: u.eval(&x0), slope: g, opening: sign * q };
        let ext = probe_extension(u, phi, (lo, hi));
        let f = |p: &Point| ext.eval(p);
        let dense = dense_fractional_laplacian(&f, &x0, dim, spec.s, spec.c, density);
        let oracle = sign * (dense - spec.reaction.df(phi.value, &x0));
        let gap = (oracle - cert.margin).abs() / cert.margin.abs().max(1e-300);
        cert = cert.with_detail("oracle_value", oracle).with_detail("oracle_relative_gap", gap);
    }
    if admissible == 0 {
        cert.margin = 0.0;
        cert.notes.push("vacuous: no probe touches".into());
    }
    let margin = cert.margin;
    cert.notes.push(format!("probe-limited: quadratic probes, {admissible} of {tried} touched"));
    Ok(cert
        .with_detail("worst_value", margin)
        .with_detail("skipped_points", skipped as f64)
        .with_detail("probes_tried", tried as f64)
        .with_detail("probes_admissible", admissible as f64)
        .decide())
}

/// Paraboloids touching from below must satisfy `(-Δ)^s φ̄ - F'(φ̄) ≥ 0`.
pub fn viscosity_supersolution_test(spec: &LagrangianSpec, domain: &Domain, u: &DiscreteFunction, cfg: &ProbeConfig) -> Result<Certificate> {
    viscosity_test(spec, domain, u, cfg, Side::Below)
}

/// Paraboloids touching from above must satisfy `(-Δ)^s φ̄ - F'(φ̄) ≤ 0`.
pub fn viscosity_subsolution_test(spec: &LagrangianSpec, domain: &Domain, u: &DiscreteFunction, cfg: &ProbeConfig) -> Result<Certificate> {
    viscosity_test(spec, domain, u, cfg, Side::Above)
}

/// `E(v) ≥ E(u) - tol` for competitors on one side of `u`.
pub fn one_sided_minimizer_check(
    spec: &LagrangianSpec,
    domain: &Domain,
    u: &DiscreteFunction,
    direction: Side,
    competitors: &[DiscreteFunction],
) -> Result<Certificate> {
    let disc = Discretization::new(spec, domain, &QuadratureRule::default(), u.growth)?;
    let eu = disc.energy(u)?;
    let mut cert = Certificate::new("one-sided-minimizer", BOUND_TOL);
    cert.margin = f64::INFINITY;
    let sign = if direction == Side::Above { 1.0 } else { -1.0 };
    let mut skipped = 0;
    for (k, v) in competitors.iter().enumerate() {
        if v.values.iter().zip(&u.values).any(|(a, b)| sign * (a - b) < 0.0) {
            skipped += 1;
            continue;
        }
        let ev = disc.energy(v)?;
        let raw = (ev.value - eu.value) / scale_of(&ev);
        let before = cert.margin;
        cert.observe(raw, &[("competitor", k as f64), ("E", ev.value)], "energy decreases");
        if cert.margin < before && raw < -BOUND_TOL {
            if let Some(ce) = cert.counterexample.as_mut() {
                ce.csv = Some(node_csv(v));
            }
        }
    }
    if competitors.is_empty() || skipped == competitors.len() {
        cert.margin = 0.0;
    }
    Ok(cert.with_detail("skipped", skipped as f64).with_detail("energy_u", eu.value).decide())
}

/// The chain `∫(u - v) L(v) ≤ ½∬[G(u) - G(v)] = E(u) - E(v)` for a convex
/// Lagrangian and a leaf `v`.
pub fn barron_jensen_oracle(spec: &LagrangianSpec, domain: &Domain, u: &DiscreteFunction, leaf: &DiscreteFunction) -> Result<Certificate> {
    let conv = lagrangian::check_convexity(spec, 96).map_err(|e| VerifyError::NotConvex(e.to_string()))?;
    if !conv.passed() {
        return Err(VerifyError::NotConvex(format!("{:?}", conv.counterexample.map(|c| c.description))));
    }
    if let Some(l) = &spec.local {
        if !l.is_convex() {
            return Err(VerifyError::NotConvex("local part".into()));
        }
    }
    let k = spec.reaction_coef();
    let reaction_convex = (0..64).all(|i| {
        let a = -3.0 + 6.0 * i as f64 / 63.0;
        k * spec.reaction.d2f(a, &domain.center()) >= -1e-12
    });
    if !reaction_convex {
        return Err(VerifyError::NotConvex("reaction term".into()));
    }
    let disc = Discretization::new(spec, domain, &QuadratureRule::default(), u.growth)?;
    let nodes = disc.mesh.interior();
    let lv = disc.euler_lagrange_nodes(leaf)?;
    let a = par::pairwise_sum(&(0..nodes.len()).map(|i| nodes[i].w * (u.values[i] - leaf.values[i]) * lv[i]).collect::<Vec<_>>());
    // pairwise differences in one sum, then the local and reaction parts
    let uv = disc.mesh.sample(u);
    let vv = disc.mesh.sample(leaf);
    let all = &disc.mesh.nodes;
    let rows = disc.mesh.row_sums(&disc.policy, |i, j| {
        let ctx = lagrangian::PairCtx::new(j < nodes.len(), disc.omega_measure);
        spec.pair_g(&all[i].x, &all[j].x, uv[i], uv[j], &ctx) - spec.pair_g(&all[i].x, &all[j].x, vv[i], vv[j], &ctx)
    })?;
    let pair = 0.5 * mesh::reduce_rows(&rows).total();
    let reaction = k * par::sum_indexed(nodes.len(), |i| {
        nodes[i].w * (spec.reaction.f(uv[i], &nodes[i].x) - spec.reaction.f(vv[i], &nodes[i].x))
    });
    let local = match &spec.local {
        Some(l) => {
            crate::functional::local_energy(l, domain, &u.values)? - crate::functional::local_energy(l, domain, &leaf.values)?
        }
        None => 0.0,
    };
    let b = pair + reaction + local;
    let c = disc.energy(u)?.value - disc.energy(leaf)?.value;
    let scale = a.abs().max(b.abs()).max(c.abs()).max(1e-300);
    let mut cert = Certificate::new("barron-jensen", 1e-10);
    cert.margin = 0.0;
    cert.observe((b - a) / scale, &[("A", a), ("B", b)], "first-order term exceeds the energy increment");
    cert.observe(-(b - c).abs() / scale, &[("B", b), ("C", c)], "pairwise sum differs from energy difference");
    if a > 0.0 {
        cert.notes.push("strict-subsolution hypothesis holds: A > 0".into());
    }
    Ok(cert.with_detail("A", a).with_detail("B", b).with_detail("C", c).decide())
}

/// Replace the reaction by the linear term `g(x)·w` with `g = F'(u)`.
pub fn freeze_lower_order(spec: &LagrangianSpec, u: &DiscreteFunction) -> LagrangianSpec {
    let mut out = spec.clone();
    if spec.reaction.is_none() {
        return out;
    }
    let (r, u) = (spec.reaction.clone(), u.clone());
    out.reaction = Reaction::Frozen(Arc::new(move |x| r.df(u.eval(x), x)));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Touch {
    /// `w` coincides with the anchor leaf.
    None,
    Interior { t: f64, x: Point, side: Side },
    /// Only exterior contact: no leaf in range separates.
    Exterior { t: f64 },
}

/// First leaf touching `v`, scanning down from above where `v` rises over
/// `u^{t₀}`, and up from below otherwise.
pub fn first_touching_leaf(field: &Field, t0: f64, v: &DiscreteFunction, domain: &Domain) -> Touch {
    let nodes = domain.interior_nodes();
    let anchor: Vec<f64> = nodes.iter().map(|x| field.leaf(t0, x)).collect();
    let up = v.values.iter().zip(&anchor).any(|(a, b)| a > b);
    let down = v.values.iter().zip(&anchor).any(|(a, b)| a < b);
    if !up && !down {
        return Touch::None;
    }
    let side = if up { Side::Above } else { Side::Below };
    let sign = if up { 1.0 } else { -1.0 };
    // gap(t) = min sign·(uᵗ - v), nondecreasing in sign·t
    let gap = |t: f64| {
        nodes
            .iter()
            .zip(&v.values)
            .map(|(x, vv)| sign * (field.leaf(t, x) - vv))
            .fold(f64::INFINITY, f64::min)
    };
    let (mut a, mut b) = if up { (t0, field.t_max) } else { (field.t_min, t0) };
    let far = if up { b } else { a };
    if gap(far) < 0.0 {
        return Touch::Exterior { t: far };
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let inside = gap(m) >= 0.0;
        if up == inside {
            b = m;
        } else {
            a = m;
        }
        if b - a <= 1e-15 * (1.0 + m.abs()) {
            break;
        }
    }
    let t = if up { b } else { a };
    let (i, _) = nodes
        .iter()
        .zip(&v.values)
        .map(|(x, vv)| sign * (field.leaf(t, x) - vv))
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, g)| if g < acc.1 { (i, g) } else { acc });
    Touch::Interior { t, x: nodes[i], side }
}

/// `L(u)(x₀) ≥ L(v)(x₀) - tol` for `u ≤ v` touching at the node `x₀`.
pub fn strong_comparison_probe(
    spec: &LagrangianSpec,
    domain: &Domain,
    u: &DiscreteFunction,
    v: &DiscreteFunction,
    x0: &Point,
) -> Result<Certificate> {
    let disc = Discretization::new(spec, domain, &QuadratureRule::default(), u.growth)?;
    let su = disc.mesh.sample(u);
    let sv = disc.mesh.sample(v);
    for (k, (a, b)) in su.iter().zip(&sv).enumerate() {
        if a > b {
            return Err(VerifyError::OrderingViolated(disc.mesh.nodes[k].x));
        }
    }
    let nodes = disc.mesh.interior();
    let i = nodes
        .iter()
        .position(|n| lagrangian::dist(&n.x, x0) <= 1e-9 * domain.min_h())
        .ok_or(FunctionalError::NotANode(*x0))?;
    if su[i] != sv[i] {
        return Err(VerifyError::NotApplicable(format!("u(x₀) ≠ v(x₀): {} vs {}", su[i], sv[i])));
    }
    let lu = disc.euler_lagrange_nodes(u)?[i];
    let lv = disc.euler_lagrange_nodes(v)?[i];
    let scale = lu.abs().max(lv.abs()).max(1.0);
    let mut cert = Certificate::new("strong-comparison", 1e-12 * scale);
    cert.margin = lu - lv;
    if cert.margin < -cert.tolerance {
        cert.counterexample = Some(Counterexample {
            description: "L(u)(x₀) < L(v)(x₀)".into(),
            location: [("x0".to_string(), x0[0]), ("x1".to_string(), x0[1])].into_iter().collect(),
            csv: Some(node_csv(v)),
        });
    }
    Ok(cert.with_detail("L_u", lu).with_detail("L_v", lv).decide())
}

/// Seeded pairs `u ≤ v` with `v = u` at an interior node `x₀` and on `Ωᶜ`.
pub fn ordered_touching_pairs(u: &DiscreteFunction, count: usize, seed: u64, amplitude: f64) -> Vec<(DiscreteFunction, Point)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = &u.domain;
    let nodes = d.interior_nodes();
    (0..count)
        .map(|_| {
            let x0 = nodes[rng.gen_range(0..nodes.len())];
            let a = rng.gen_range(0.1..1.0) * amplitude;
            let r = rng.gen_range(0.05..0.5) * d.diam();
            let values = nodes
                .iter()
                .zip(&u.values)
                .map(|(x, v)| v + a * (lagrangian::dist(x, &x0) / r).powi(2).min(1.0))
                .collect();
            (DiscreteFunction::from_values(d, values, u.exterior.clone(), u.growth), x0)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialGuess {
    Odd,
    Even,
}

#[derive(Clone, Debug)]
pub struct LayerSolution {
    pub profile: DiscreteFunction,
    pub residual: f64,
    pub iterations: usize,
}

/// Damped iteration `w ← w - τ L(w)` on `grid`, starting from a profile
/// between the stable states `states`; outside `grid` the data equal the
/// initial guess's limits.
pub fn solve_layer_1d(
    spec: &LagrangianSpec,
    grid: &Domain,
    damping: f64,
    max_iter: usize,
    states: (f64, f64),
    initial: InitialGuess,
) -> Result<LayerSolution> {
    if grid.dim != 1 {
        return Err(VerifyError::NotApplicable("1D grids only".into()));
    }
    let (lo, hi) = states;
    let c = 0.5 * (grid.lo[0] + grid.hi[0]);
    let width = 0.1 * (grid.hi[0] - grid.lo[0]);
    let (exterior, guess): (ExteriorRule, Box<dyn Fn(f64) -> f64>) = match initial {
        InitialGuess::Odd => (
            ExteriorRule::Closure(Arc::new(move |p: &Point| if p[0] < c { lo } else { hi })),
            Box::new(move |x| 0.5 * (lo + hi) + 0.5 * (hi - lo) * ((x - c) / width).tanh()),
        ),
        InitialGuess::Even => (
            ExteriorRule::Constant(hi),
            Box::new(move |x| hi - (hi - lo) * (-((x - c) / width).powi(2)).exp()),
        ),
    };
    let growth = Growth::Bounded(lo.abs().max(hi.abs()));
    let disc = Discretization::new(spec, grid, &QuadratureRule::default(), growth)?;
    let xs = grid.interior_nodes();
    let mut w: Vec<f64> = xs.iter().map(|p| guess(p[0])).collect();
    let make = |w: &[f64]| DiscreteFunction::from_values(grid, w.to_vec(), exterior.clone(), growth);
    let tol = 1e-3;
    let mut residual = f64::INFINITY;
    let mut first = None;
    for it in 0..max_iter {
        let l = disc.euler_lagrange_nodes(&make(&w))?;
        residual = l.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let r0 = *first.get_or_insert(residual);
        if !residual.is_finite() || residual > 1e3 * r0.max(1.0) {
            return Err(VerifyError::NoConvergence { iterations: it, residual });
        }
        if residual <= tol {
            let profile = make(&w);
            for k in 1..w.len() {
                if !(w[k] > w[k - 1]) {
                    return Err(VerifyError::MonotonicityLost(xs[k]));
                }
            }
            return Ok(LayerSolution { profile, residual, iterations: it });
        }
        for (wi, li) in w.iter_mut().zip(&l) {
            *wi -= damping * li;
        }
    }
    Err(VerifyError::NoConvergence { iterations: max_iter, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::{make_lagrangian, LagrangianParams};

    fn gagliardo(dim: usize) -> LagrangianSpec {
        make_lagrangian(Family::FractionalQuadratic, LagrangianParams::fractional(dim, 0.5)).unwrap()
    }

    #[test]
    fn competitors_respect_exterior_and_region() {
        let d = Domain::interval(0.0, 1.0, 40);
        let f = Field::arctan_layer(-3.0, 3.0);
        let set = CompetitorSet::generate(&f, 0.0, &d, Recipe::Mixed, 12, 7, 0.6);
        let anchor = f.leaf_function(&d, 0.0);
        for c in &set.members {
            for y in [-5.0, -0.2, 1.3, 40.0] {
                assert_eq!(c.function.eval(&[y, 0.0]), anchor.eval(&[y, 0.0]));
            }
            for (x, v) in d.interior_nodes().iter().zip(&c.function.values) {
                assert!(f.leaf_parameter(x, *v).is_ok());
            }
        }
        let again = CompetitorSet::generate(&f, 0.0, &d, Recipe::Mixed, 12, 7, 0.6);
        assert_eq!(set.members[5].function.values, again.members[5].function.values);
    }

    #[test]
    fn comparison_with_zero_time_is_exact() {
        let d = Domain::interval(-1.0, 1.0, 40);
        let u = DiscreteFunction::from_closed(&d, |p| 2.0 / PI * p[0].atan(), Growth::Bounded(1.0), vec![]);
        let phi = Paraboloid { center: [0.0, 0.0], value: 0.0, slope: [2.0 / PI, 0.0], opening: 1.0 };
        let wf = crate::field::sliding_weak_field(&u, phi, ([-0.5, -1.0], [0.5, 1.0]), 0.2, 0.0).unwrap();
        let c = energy_comparison_check(&gagliardo(1), &wf, &DEFAULT_EPS_SCHEDULE).unwrap();
        assert_eq!(c.margin, 0.0);
        assert!(c.passed());
    }

    #[test]
    fn strong_comparison_on_equal_functions() {
        let d = Domain::interval(0.0, 1.0, 20);
        let u = DiscreteFunction::from_closed(&d, |p| p[0] * p[0], Growth::Unknown, vec![]);
        let spec = make_lagrangian(
            Family::FractionalQuadratic,
            LagrangianParams { ..LagrangianParams::fractional(1, 0.5) },
        )
        .unwrap();
        let mut sp = spec.clone();
        sp.support = crate::lagrangian::Support::OmegaOmega;
        let c = strong_comparison_probe(&sp, &d, &u, &u, &d.node(4, 0)).unwrap();
        assert_eq!(c.margin, 0.0);
    }

    #[test]
    fn frozen_reaction_keeps_operator() {
        let d = Domain::interval(-1.0, 1.0, 40);
        let spec = make_lagrangian(
            Family::FractionalQuadratic,
            LagrangianParams::fractional(1, 0.5).with_reaction(Reaction::SineLayer),
        )
        .unwrap();
        let u = DiscreteFunction::from_closed(&d, |p| 2.0 / PI * p[0].atan(), Growth::Bounded(1.0), vec![]);
        let frozen = freeze_lower_order(&spec, &u);
        let disc = Discretization::new(&spec, &d, &QuadratureRule::default(), u.growth).unwrap();
        let dfz = Discretization::new(&frozen, &d, &QuadratureRule::default(), u.growth).unwrap();
        let a = disc.euler_lagrange_nodes(&u).unwrap();
        let b = dfz.euler_lagrange_nodes(&u).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!(lagrangian::check_convexity(&frozen, 32).unwrap().passed());
    }

    #[test]
    fn dense_oracle_on_gaussian() {
        // (-Δ)^{1/2} e^{-x²} at 0 with c = 1/π equals 2/√π
        let f = |p: &Point| (-p[0] * p[0]).exp();
        let v = dense_fractional_laplacian(&f, &[0.0, 0.0], 1, 0.5, 1.0 / PI, 4);
        assert!((v - 2.0 / PI.sqrt()).abs() < 1e-4, "{v}");
    }

    #[test]
    fn dense_oracle_is_dimension_consistent() {
        let f = |p: &Point| (-p[0] * p[0]).exp();
        let one = dense_fractional_laplacian(&f, &[0.3, 0.0], 1, 0.4, lagrangian::standard_constant(1, 0.4), 2);
        let two = dense_fractional_laplacian(&f, &[0.3, 0.7], 2, 0.4, lagrangian::standard_constant(2, 0.4), 2);
        assert!((one - two).abs() < 1e-3 * one.abs(), "{one} {two}");
    }

    #[test]
    fn dense_oracle_matches_arctan_layer() {
        // (-Δ)^{1/2} (2/π) atan = sin(π u)/π at x = 1 with c = 1/π
        let f = |p: &Point| 2.0 / PI * p[0].atan();
        let v = dense_fractional_laplacian(&f, &[1.0, 0.0], 1, 0.5, 1.0 / PI, 4);
        assert!((v - 1.0 / PI).abs() < 1e-6, "{v}");
    }
}
