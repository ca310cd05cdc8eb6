//! Catalog of nonlocal Lagrangians `G(x, y, a, b)` with analytic partials,
//! plus local Lagrangians `G_L(x, λ, q)` for mixed functionals.
//!
//! A density is split into a *pair* part, which carries the interaction
//! kernel, and an optional separable reaction part supported on `Ω × Ω`,
//!
//! ```text
//! G = pair(x, y, a, b) + 1_{Ω×Ω} · (κ / |Ω|) · (F(a, x) + F(b, y)),
//! ```
//!
//! so that `½∬ G` contributes exactly `κ ∫_Ω F(w)`. The reaction
//! coefficient `κ` is `-½` for the fractional families and `+½` for the
//! convolution family.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificate::Certificate;
use crate::Point;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LagrangianError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("kernel parity violation: K({0:?}) != K(-z)")]
    KernelParityViolation(Point),
    #[error("check not applicable: {0}")]
    NotApplicable(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    FractionalQuadratic,
    FractionalPDirichletWithReaction,
    SubgraphPerimeter,
    PeridynamicDifference,
    ConvolutionReaction,
    NonlocalTotalVariation,
    CustomTable,
}

impl Family {
    pub fn id(&self) -> &'static str {
        match self {
            Family::FractionalQuadratic => "fractional-quadratic",
            Family::FractionalPDirichletWithReaction => "fractional-p-dirichlet-with-reaction",
            Family::SubgraphPerimeter => "subgraph-perimeter",
            Family::PeridynamicDifference => "peridynamic-difference",
            Family::ConvolutionReaction => "convolution-reaction",
            Family::NonlocalTotalVariation => "nonlocal-total-variation",
            Family::CustomTable => "custom-table",
        }
    }

    pub fn from_id(id: &str) -> Option<Family> {
        [
            Family::FractionalQuadratic,
            Family::FractionalPDirichletWithReaction,
            Family::SubgraphPerimeter,
            Family::PeridynamicDifference,
            Family::ConvolutionReaction,
            Family::NonlocalTotalVariation,
            Family::CustomTable,
        ]
        .into_iter()
        .find(|f| f.id() == id)
    }
}

/// Evaluation context supplied by the domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairCtx {
    /// Both points lie in `Ω`.
    pub inside: bool,
    pub omega_measure: f64,
}

impl PairCtx {
    pub fn new(inside: bool, omega_measure: f64) -> Self {
        Self { inside, omega_measure }
    }
}

pub type PointFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;

/// Reaction potential `F(a, x)`.
#[derive(Clone)]
pub enum Reaction {
    None,
    /// `coef · a^degree`.
    Power { coef: f64, degree: i32 },
    /// `-(1 + cos πa) / π²`, so `F'(a) = sin(πa) / π`.
    SineLayer,
    /// `base(a) + slope · a`.
    Tilted { base: Box<Reaction>, slope: f64 },
    /// Linear in `a` with a spatial coefficient: `g(x) · a`.
    Frozen(PointFn),
}

impl fmt::Debug for Reaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reaction::None => write!(f, "None"),
            Reaction::Power { coef, degree } => write!(f, "Power({coef}·a^{degree})"),
            Reaction::SineLayer => write!(f, "SineLayer"),
            Reaction::Tilted { base, slope } => write!(f, "Tilted({base:?} + {slope}·a)"),
            Reaction::Frozen(_) => write!(f, "Frozen"),
        }
    }
}

impl Reaction {
    pub fn is_none(&self) -> bool {
        matches!(self, Reaction::None)
    }

    pub fn f(&self, a: f64, x: &Point) -> f64 {
        match self {
            Reaction::None => 0.0,
            Reaction::Power { coef, degree } => coef * a.powi(*degree),
            Reaction::SineLayer => {
                let pi = std::f64::consts::PI;
                -(1.0 + (pi * a).cos()) / (pi * pi)
            }
            Reaction::Tilted { base, slope } => base.f(a, x) + slope * a,
            Reaction::Frozen(g) => g(x) * a,
        }
    }

    pub fn df(&self, a: f64, x: &Point) -> f64 {
        match self {
            Reaction::None => 0.0,
            Reaction::Power { coef, degree } => {
                if *degree == 0 {
                    0.0
                } else {
                    coef * *degree as f64 * a.powi(degree - 1)
                }
            }
            Reaction::SineLayer => {
                let pi = std::f64::consts::PI;
                (pi * a).sin() / pi
            }
            Reaction::Tilted { base, slope } => base.df(a, x) + slope,
            Reaction::Frozen(g) => g(x),
        }
    }

    pub fn d2f(&self, a: f64, x: &Point) -> f64 {
        match self {
            Reaction::None | Reaction::Frozen(_) => 0.0,
            Reaction::Power { coef, degree } => {
                if *degree < 2 {
                    0.0
                } else {
                    coef * (*degree * (degree - 1)) as f64 * a.powi(degree - 2)
                }
            }
            Reaction::SineLayer => (std::f64::consts::PI * a).cos(),
            Reaction::Tilted { base, .. } => base.d2f(a, x),
        }
    }
}

/// Interaction kernel `K(z)`.
#[derive(Clone)]
pub enum Kernel {
    /// `c |z|^{-n-2s}`.
    Fractional { s: f64, c: f64 },
    /// `height · 1_{|z| < radius}`.
    Truncated { radius: f64, height: f64 },
    /// `height · exp(-|z|² / (2σ²))`.
    Gaussian { sigma: f64, height: f64 },
    Custom { f: PointFn, name: String },
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Fractional { s, c } => write!(f, "Fractional(s={s}, c={c})"),
            Kernel::Truncated { radius, height } => write!(f, "Truncated(r={radius}, h={height})"),
            Kernel::Gaussian { sigma, height } => write!(f, "Gaussian(σ={sigma}, h={height})"),
            Kernel::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl Kernel {
    pub fn eval(&self, z: &Point, dim: usize) -> f64 {
        let r = norm(z);
        match self {
            Kernel::Fractional { s, c } => c * r.powf(-(dim as f64) - 2.0 * s),
            Kernel::Truncated { radius, height } => {
                if r < *radius {
                    *height
                } else {
                    0.0
                }
            }
            Kernel::Gaussian { sigma, height } => height * (-r * r / (2.0 * sigma * sigma)).exp(),
            Kernel::Custom { f, .. } => f(z),
        }
    }

    pub fn is_singular(&self) -> bool {
        matches!(self, Kernel::Fractional { .. })
    }

    /// Algebraic decay exponent `α` with `K(z) ≲ |z|^{-n-α}`; `None` for
    /// compactly supported or faster-than-algebraic kernels.
    pub fn decay(&self) -> Option<f64> {
        match self {
            Kernel::Fractional { s, .. } => Some(2.0 * s),
            Kernel::Custom { .. } => Some(1.0),
            _ => None,
        }
    }

    /// Sampled parity and sign check.
    pub fn check_even(&self, dim: usize) -> Result<bool, LagrangianError> {
        let mut nonneg = true;
        for k in 1..64 {
            let t = k as f64 / 16.0;
            let z = if dim == 1 { [t, 0.0] } else { [t * 0.6, -t * 0.8] };
            let m = [-z[0], -z[1]];
            let (a, b) = (self.eval(&z, dim), self.eval(&m, dim));
            if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1e-300) {
                return Err(LagrangianError::KernelParityViolation(z));
            }
            nonneg &= a >= 0.0;
        }
        Ok(nonneg)
    }
}

pub fn norm(z: &Point) -> f64 {
    (z[0] * z[0] + z[1] * z[1]).sqrt()
}

pub fn dist(x: &Point, y: &Point) -> f64 {
    norm(&[x[0] - y[0], x[1] - y[1]])
}

/// Standard normalisation `c_{n,s}` of the fractional Laplacian.
pub fn standard_constant(n: usize, s: f64) -> f64 {
    use statrs::function::gamma::gamma;
    let nf = n as f64;
    s * 4f64.powf(s) * gamma(nf / 2.0 + s)
        / (std::f64::consts::PI.powf(nf / 2.0) * gamma(1.0 - s))
}

pub type Density = Arc<dyn Fn(&Point, &Point, f64, f64, &PairCtx) -> f64 + Send + Sync>;

/// Programmatic Lagrangian. Second partials are optional.
#[derive(Clone)]
pub struct CustomParts {
    pub name: String,
    pub g: Density,
    pub da: Density,
    pub db: Density,
    pub daa: Option<Density>,
    pub dbb: Option<Density>,
    pub dab: Option<Density>,
    /// Near-diagonal exponent when the density is undefined on `x = y`.
    pub diag_exponent: Option<f64>,
    /// Replace `g` by `½(g(x,y,a,b) + g(y,x,b,a))`.
    pub symmetrize: bool,
}

/// Local Lagrangian `G_L(x, λ, q)`.
#[derive(Clone, Debug)]
pub enum LocalLagrangian {
    /// `coef/2 · |q|² - F(λ, x)`.
    Dirichlet { coef: f64, reaction: Reaction },
}

impl LocalLagrangian {
    pub fn g(&self, x: &Point, lambda: f64, q: &Point) -> f64 {
        match self {
            LocalLagrangian::Dirichlet { coef, reaction } => {
                0.5 * coef * (q[0] * q[0] + q[1] * q[1]) - reaction.f(lambda, x)
            }
        }
    }

    pub fn d_lambda(&self, x: &Point, lambda: f64, _q: &Point) -> f64 {
        match self {
            LocalLagrangian::Dirichlet { reaction, .. } => -reaction.df(lambda, x),
        }
    }

    pub fn d_q(&self, _x: &Point, _lambda: f64, q: &Point) -> Point {
        match self {
            LocalLagrangian::Dirichlet { coef, .. } => [coef * q[0], coef * q[1]],
        }
    }

    pub fn is_convex(&self) -> bool {
        match self {
            LocalLagrangian::Dirichlet { coef, reaction } => {
                *coef >= 0.0
                    && matches!(reaction, Reaction::None | Reaction::Frozen(_))
            }
        }
    }
}

/// Support of the pair part.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Support {
    Full,
    OmegaOmega,
}

/// Construction parameters; unused fields are ignored by each family.
#[derive(Clone, Debug)]
pub struct LagrangianParams {
    pub dim: usize,
    pub s: Option<f64>,
    pub p: Option<f64>,
    /// Normalisation of the singular families; defaults to `c_{n,s}`
    /// (fractional-quadratic) or 1.
    pub c: Option<f64>,
    pub kernel: Option<Kernel>,
    pub reaction: Reaction,
    pub horizon: f64,
    pub stiffness: f64,
    pub delta_sign: f64,
    pub custom: Option<CustomParts>,
    pub local: Option<LocalLagrangian>,
}

impl fmt::Debug for CustomParts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomParts({})", self.name)
    }
}

impl Default for LagrangianParams {
    fn default() -> Self {
        Self {
            dim: 1,
            s: None,
            p: None,
            c: None,
            kernel: None,
            reaction: Reaction::None,
            horizon: 1.0,
            stiffness: 1.0,
            delta_sign: 1e-9,
            custom: None,
            local: None,
        }
    }
}

impl LagrangianParams {
    pub fn fractional(dim: usize, s: f64) -> Self {
        Self { dim, s: Some(s), ..Default::default() }
    }

    pub fn with_reaction(mut self, r: Reaction) -> Self {
        self.reaction = r;
        self
    }

    pub fn with_kernel(mut self, k: Kernel) -> Self {
        self.kernel = Some(k);
        self
    }
}

/// Second mixed partial, or its absence for sign-type densities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MixedPartial {
    Value(f64),
    Distributional,
    Unavailable,
}

/// An immutable nonlocal Lagrangian.
#[derive(Clone, Debug)]
pub struct LagrangianSpec {
    pub family: Family,
    pub dim: usize,
    pub s: f64,
    pub p: f64,
    pub c: f64,
    pub kernel: Option<Kernel>,
    pub reaction: Reaction,
    pub support: Support,
    pub horizon: f64,
    pub stiffness: f64,
    pub delta_sign: f64,
    pub custom: Option<CustomParts>,
    pub local: Option<LocalLagrangian>,
    /// `β = (n + s + 1) / 2` for the subgraph-perimeter profile.
    perim_beta: f64,
}

fn check_s(s: Option<f64>) -> Result<f64, LagrangianError> {
    let s = s.ok_or_else(|| LagrangianError::InvalidParameter("s is required".into()))?;
    if !(s > 0.0 && s < 1.0) {
        return Err(LagrangianError::InvalidParameter(format!("s = {s} outside (0,1)")));
    }
    Ok(s)
}

/// Build a catalog Lagrangian.
pub fn make_lagrangian(
    family: Family,
    params: LagrangianParams,
) -> Result<LagrangianSpec, LagrangianError> {
    let dim = params.dim;
    if dim != 1 && dim != 2 {
        return Err(LagrangianError::InvalidParameter(format!("dimension {dim}")));
    }
    if !(params.delta_sign > 0.0) {
        return Err(LagrangianError::InvalidParameter("delta_sign must be positive".into()));
    }
    let mut spec = LagrangianSpec {
        family,
        dim,
        s: params.s.unwrap_or(0.5),
        p: params.p.unwrap_or(2.0),
        c: 1.0,
        kernel: params.kernel.clone(),
        reaction: params.reaction.clone(),
        support: Support::Full,
        horizon: params.horizon,
        stiffness: params.stiffness,
        delta_sign: params.delta_sign,
        custom: None,
        local: params.local.clone(),
        perim_beta: 0.0,
    };
    match family {
        Family::FractionalQuadratic => {
            spec.s = check_s(params.s)?;
            spec.c = params.c.unwrap_or_else(|| standard_constant(dim, spec.s));
            spec.kernel = None;
        }
        Family::FractionalPDirichletWithReaction => {
            spec.s = check_s(params.s)?;
            let p = params.p.unwrap_or(2.0);
            if !(p >= 1.0) {
                return Err(LagrangianError::InvalidParameter(format!("p = {p} < 1")));
            }
            spec.p = p;
            spec.c = params.c.unwrap_or(1.0);
            spec.kernel = None;
        }
        Family::SubgraphPerimeter => {
            spec.s = check_s(params.s)?;
            spec.c = params.c.unwrap_or(1.0);
            spec.perim_beta = (dim as f64 + spec.s + 1.0) / 2.0;
            spec.kernel = None;
            spec.reaction = Reaction::None;
        }
        Family::PeridynamicDifference => {
            if !(params.horizon > 0.0 && params.stiffness > 0.0) {
                return Err(LagrangianError::InvalidParameter(
                    "horizon and stiffness must be positive".into(),
                ));
            }
            spec.support = Support::OmegaOmega;
            spec.kernel = None;
            spec.reaction = Reaction::None;
        }
        Family::ConvolutionReaction => {
            let k = params.kernel.clone().ok_or_else(|| {
                LagrangianError::InvalidParameter("convolution family needs a kernel".into())
            })?;
            if k.is_singular() {
                return Err(LagrangianError::InvalidParameter(
                    "convolution kernel must be bounded".into(),
                ));
            }
            k.check_even(dim)?;
            spec.support = Support::OmegaOmega;
        }
        Family::NonlocalTotalVariation => {
            let k = params.kernel.clone().ok_or_else(|| {
                LagrangianError::InvalidParameter("total variation needs a kernel".into())
            })?;
            k.check_even(dim)?;
            if let Kernel::Fractional { s, .. } = k {
                check_s(Some(s))?;
                spec.s = s;
            }
            spec.reaction = Reaction::None;
        }
        Family::CustomTable => {
            let parts = params.custom.clone().ok_or_else(|| {
                LagrangianError::InvalidParameter("custom family needs parts".into())
            })?;
            spec.custom = Some(parts);
            spec.reaction = Reaction::None;
        }
    }
    Ok(spec)
}

/// Smoothed sign `d / max(|d|, δ)`, exactly 0 at 0.
pub fn smooth_sign(d: f64, delta: f64) -> f64 {
    d / d.abs().max(delta)
}

impl LagrangianSpec {
    pub fn id(&self) -> String {
        match &self.custom {
            Some(c) => format!("{}:{}", self.family.id(), c.name),
            None => self.family.id().to_string(),
        }
    }

    /// `κ` in the separable reaction part.
    pub fn reaction_coef(&self) -> f64 {
        if self.reaction.is_none() {
            return 0.0;
        }
        match self.family {
            Family::ConvolutionReaction => 0.5,
            _ => -0.5,
        }
    }

    /// Exponent `q` with `pair(x, x+z, w, w + ∇w·z) ~ |z|^q` when the pair
    /// part is undefined on the diagonal; `None` when it is regular there.
    pub fn diag_exponent(&self) -> Option<f64> {
        let n = self.dim as f64;
        match self.family {
            Family::FractionalQuadratic => Some(2.0 - n - 2.0 * self.s),
            Family::FractionalPDirichletWithReaction => Some(self.p - n - self.p * self.s),
            Family::SubgraphPerimeter => Some(1.0 - n - self.s),
            Family::PeridynamicDifference => Some(1.0),
            Family::ConvolutionReaction => None,
            Family::NonlocalTotalVariation => match &self.kernel {
                Some(Kernel::Fractional { s, .. }) => Some(1.0 - n - 2.0 * s),
                _ => None,
            },
            Family::CustomTable => self.custom.as_ref().and_then(|c| c.diag_exponent),
        }
    }

    /// Decay exponent of the pair part for bounded data, used to map the
    /// far field; `None` when the pair part has compact support in `x - y`.
    pub fn tail_decay(&self) -> Option<f64> {
        match self.family {
            Family::FractionalQuadratic => Some(2.0 * self.s),
            Family::FractionalPDirichletWithReaction => Some(self.p * self.s),
            Family::SubgraphPerimeter => Some(self.s),
            Family::PeridynamicDifference | Family::ConvolutionReaction => None,
            Family::NonlocalTotalVariation => self.kernel.as_ref().and_then(|k| k.decay()),
            Family::CustomTable => Some(0.5),
        }
    }

    pub fn has_exterior_interaction(&self) -> bool {
        self.support == Support::Full
    }

    fn active(&self, ctx: &PairCtx) -> bool {
        self.support == Support::Full || ctx.inside
    }

    fn perim_dphi(&self, tau: f64) -> f64 {
        // Φ'(τ) = ∫_0^{atan τ} cos^{n+s-1}θ dθ
        let e = 2.0 * self.perim_beta - 2.0;
        let th = tau.atan();
        crate::gauss::integrate(24, 0.0, th, |t| t.cos().powf(e))
    }

    fn perim_phi(&self, tau: f64) -> f64 {
        let b = self.perim_beta;
        tau * self.perim_dphi(tau) - ((1.0 + tau * tau).powf(1.0 - b) - 1.0) / (2.0 * (1.0 - b))
    }

    fn perim_d2phi(&self, tau: f64) -> f64 {
        (1.0 + tau * tau).powf(-self.perim_beta)
    }

    /// Pair part of the density.
    pub fn pair_g(&self, x: &Point, y: &Point, a: f64, b: f64, ctx: &PairCtx) -> f64 {
        if !self.active(ctx) {
            return 0.0;
        }
        let n = self.dim as f64;
        let r = dist(x, y);
        let d = a - b;
        match self.family {
            Family::FractionalQuadratic => 0.25 * self.c * d * d * r.powf(-n - 2.0 * self.s),
            Family::FractionalPDirichletWithReaction => {
                self.c * d.abs().powf(self.p) / (2.0 * self.p) * r.powf(-n - self.p * self.s)
            }
            Family::SubgraphPerimeter => {
                self.c * self.perim_phi(d / r) * r.powf(1.0 - n - self.s)
            }
            Family::PeridynamicDifference => {
                if r < self.horizon {
                    0.5 * self.stiffness * d * d / r
                } else {
                    0.0
                }
            }
            Family::ConvolutionReaction => {
                let k = self.kernel.as_ref().unwrap().eval(&sub(x, y), self.dim);
                -k * a * b
            }
            Family::NonlocalTotalVariation => {
                d.abs() * self.kernel.as_ref().unwrap().eval(&sub(x, y), self.dim)
            }
            Family::CustomTable => {
                let c = self.custom.as_ref().unwrap();
                if c.symmetrize {
                    0.5 * ((c.g)(x, y, a, b, ctx) + (c.g)(y, x, b, a, ctx))
                } else {
                    (c.g)(x, y, a, b, ctx)
                }
            }
        }
    }

    /// `∂_a` of the pair part.
    pub fn pair_da(&self, x: &Point, y: &Point, a: f64, b: f64, ctx: &PairCtx) -> f64 {
        if !self.active(ctx) {
            return 0.0;
        }
        let n = self.dim as f64;
        let r = dist(x, y);
        let d = a - b;
        match self.family {
            Family::FractionalQuadratic => 0.5 * self.c * d * r.powf(-n - 2.0 * self.s),
            Family::FractionalPDirichletWithReaction => {
                let m = if d == 0.0 { 0.0 } else { d.abs().powf(self.p - 2.0) * d };
                0.5 * self.c * m * r.powf(-n - self.p * self.s)
            }
            Family::SubgraphPerimeter => self.c * self.perim_dphi(d / r) * r.powf(-n - self.s),
            Family::PeridynamicDifference => {
                if r < self.horizon {
                    self.stiffness * d / r
                } else {
                    0.0
                }
            }
            Family::ConvolutionReaction => {
                -self.kernel.as_ref().unwrap().eval(&sub(x, y), self.dim) * b
            }
            Family::NonlocalTotalVariation => {
                smooth_sign(d, self.delta_sign)
                    * self.kernel.as_ref().unwrap().eval(&sub(x, y), self.dim)
            }
            Family::CustomTable => {
                let c = self.custom.as_ref().unwrap();
                if c.symmetrize {
                    0.5 * ((c.da)(x, y, a, b, ctx) + (c.db)(y, x, b, a, ctx))
                } else {
                    (c.da)(x, y, a, b, ctx)
                }
            }
        }
    }

    /// `∂_b` of the pair part, obtained from `∂_a` by pairwise symmetry.
    pub fn pair_db(&self, x: &Point, y: &Point, a: f64, b: f64, ctx: &PairCtx) -> f64 {
        match (&self.custom, self.family) {
            (Some(c), Family::CustomTable) if !c.symmetrize => {
                if !self.active(ctx) {
                    0.0
                } else {
                    (c.db)(x, y, a, b, ctx)
                }
            }
            _ => self.pair_da(y, x, b, a, ctx),
        }
    }

    /// Full density including the separable reaction.
    pub fn g(&self, x: &Point, y: &Point, a: f64, b: f64, ctx: &PairCtx) -> f64 {
        let mut v = self.pair_g(x, y, a, b, ctx);
        if ctx.inside && !self.reaction.is_none() {
            let k = self.reaction_coef() / ctx.omega_measure;
            v += k * (self.reaction.f(a, x) + self.reaction.f(b, y));
        }
        v
    }

    pub fn da(&self, x: &Point, y: &Point, a: f64, b: f64, ctx: &PairCtx) -> f64 {
        let mut v = self.pair_da(x, y, a, b, ctx);
        if ctx.inside && !self.reaction.is_none() {
            v += self.reaction_coef() / ctx.omega_measure * self.reaction.df(a, x);
        }
        v
    }

    pub fn db(&self, x: &Point, y: &Point, a: f64, b: f64, ctx: &PairCtx) -> f64 {
        let mut v = self.pair_db(x, y, a, b, ctx);
        if ctx.inside && !self.reaction.is_none() {
            v += self.reaction_coef() / ctx.omega_measure * self.reaction.df(b, y);
        }
        v
    }

    fn reaction_second(&self, a: f64, x: &Point, ctx: &PairCtx) -> f64 {
        if ctx.inside && !self.reaction.is_none() {
            self.reaction_coef() / ctx.omega_measure * self.reaction.d2f(a, x)
        } else {
            0.0
        }
    }

    /// `∂²_{aa}` of the full density, if available.
    pub fn daa(&self, x: &Point, y: &Point, a: f64, b: f64, ctx: &PairCtx) -> Option<f64> {
        let pair = if !self.active(ctx) {
            Some(0.0)
        } else {
            let n = self.dim as f64;
            let r = dist(x, y);
            let d = a - b;
            match self.family {
                Family::FractionalQuadratic => Some(0.5 * self.c * r.powf(-n - 2.0 * self.s)),
                Family::FractionalPDirichletWithReaction => {
                    let m = if d == 0.0 && self.p < 2.0 {
                        f64::INFINITY
                    } else if self.p == 2.0 {
                        1.0
                    } else {
                        d.abs().powf(self.p - 2.0)
                    };
                    Some(0.5 * self.c * (self.p - 1.0) * m * r.powf(-n - self.p * self.s))
                }
                Family::SubgraphPerimeter => {
                    Some(self.c * self.perim_d2phi(d / r) * r.powf(-n - self.s - 1.0))
                }
                Family::PeridynamicDifference => {
                    Some(if r < self.horizon { self.stiffness / r } else { 0.0 })
                }
                Family::ConvolutionReaction => Some(0.0),
                Family::NonlocalTotalVariation => None,
                Family::CustomTable => {
                    let c = self.custom.as_ref().unwrap();
                    match (&c.daa, &c.dbb, c.symmetrize) {
                        (Some(f), _, false) => Some(f(x, y, a, b, ctx)),
                        (Some(f), Some(g), true) => {
                            Some(0.5 * (f(x, y, a, b, ctx) + g(y, x, b, a, ctx)))
                        }
                        _ => None,
                    }
                }
            }
        };
        pair.map(|v| v + self.reaction_second(a, x, ctx))
    }

    pub fn dbb(&self, x: &Point, y: &Point, a: f64, b: f64, ctx: &PairCtx) -> Option<f64> {
        match (&self.custom, self.family) {
            (Some(c), Family::CustomTable) if !c.symmetrize => {
                let f = c.dbb.as_ref()?;
                Some(if self.active(ctx) { f(x, y, a, b, ctx) } else { 0.0 })
            }
            _ => self.daa(y, x, b, a, ctx),
        }
    }

    /// `∂²_{ab}` of the full density.
    pub fn dab(&self, x: &Point, y: &Point, a: f64, b: f64, ctx: &PairCtx) -> MixedPartial {
        if !self.active(ctx) {
            return MixedPartial::Value(0.0);
        }
        match self.family {
            Family::NonlocalTotalVariation => MixedPartial::Distributional,
            Family::ConvolutionReaction => MixedPartial::Value(
                -self.kernel.as_ref().unwrap().eval(&sub(x, y), self.dim),
            ),
            Family::CustomTable => {
                let c = self.custom.as_ref().unwrap();
                match &c.dab {
                    Some(f) if c.symmetrize => {
                        MixedPartial::Value(0.5 * (f(x, y, a, b, ctx) + f(y, x, b, a, ctx)))
                    }
                    Some(f) => MixedPartial::Value(f(x, y, a, b, ctx)),
                    None => MixedPartial::Unavailable,
                }
            }
            _ => {
                // difference-type: ∂_ab = -∂_aa of the pair part
                let pair_aa = self
                    .daa(x, y, a, b, &PairCtx { inside: false, omega_measure: 1.0 })
                    .unwrap_or(f64::NAN);
                MixedPartial::Value(-pair_aa)
            }
        }
    }
}

fn sub(x: &Point, y: &Point) -> Point {
    [x[0] - y[0], x[1] - y[1]]
}

/// The square example `1_{Ω×Ω}(a + b)²`: convex but not elliptic.
pub fn nonelliptic_square(dim: usize) -> LagrangianSpec {
    let on = |ctx: &PairCtx| if ctx.inside { 1.0 } else { 0.0 };
    let parts = CustomParts {
        name: "nonelliptic-square".into(),
        g: Arc::new(move |_, _, a, b, c| on(c) * (a + b) * (a + b)),
        da: Arc::new(move |_, _, a, b, c| on(c) * 2.0 * (a + b)),
        db: Arc::new(move |_, _, a, b, c| on(c) * 2.0 * (a + b)),
        daa: Some(Arc::new(move |_, _, _, _, c| on(c) * 2.0)),
        dbb: Some(Arc::new(move |_, _, _, _, c| on(c) * 2.0)),
        dab: Some(Arc::new(move |_, _, _, _, c| on(c) * 2.0)),
        diag_exponent: None,
        symmetrize: false,
    };
    make_lagrangian(
        Family::CustomTable,
        LagrangianParams { dim, custom: Some(parts), ..Default::default() },
    )
    .expect("valid custom parts")
}

/// `a / |x - y|`, deliberately not pairwise symmetric; `symmetrize` applies
/// the symmetrisation `½(g(x,y,a,b) + g(y,x,b,a))`.
pub fn asymmetric_linear(dim: usize, symmetrize: bool) -> LagrangianSpec {
    let parts = CustomParts {
        name: if symmetrize { "asymmetric-linear-sym".into() } else { "asymmetric-linear".into() },
        g: Arc::new(|x, y, a, _, _| a / dist(x, y)),
        da: Arc::new(|x, y, _, _, _| 1.0 / dist(x, y)),
        db: Arc::new(|_, _, _, _, _| 0.0),
        daa: Some(Arc::new(|_, _, _, _, _| 0.0)),
        dbb: Some(Arc::new(|_, _, _, _, _| 0.0)),
        dab: Some(Arc::new(|_, _, _, _, _| 0.0)),
        diag_exponent: Some(-1.0),
        symmetrize,
    };
    make_lagrangian(
        Family::CustomTable,
        LagrangianParams { dim, custom: Some(parts), ..Default::default() },
    )
    .expect("valid custom parts")
}

/// The six shipped elliptic families with desk-scale parameters.
pub fn elliptic_catalog(dim: usize) -> Vec<LagrangianSpec> {
    let s = 0.5;
    vec![
        make_lagrangian(Family::FractionalQuadratic, LagrangianParams::fractional(dim, s)).unwrap(),
        make_lagrangian(
            Family::FractionalPDirichletWithReaction,
            LagrangianParams {
                p: Some(3.0),
                reaction: Reaction::Power { coef: 0.5, degree: 2 },
                ..LagrangianParams::fractional(dim, 0.4)
            },
        )
        .unwrap(),
        make_lagrangian(Family::SubgraphPerimeter, LagrangianParams::fractional(dim, 0.5)).unwrap(),
        make_lagrangian(
            Family::PeridynamicDifference,
            LagrangianParams { dim, horizon: 0.5, stiffness: 1.0, ..Default::default() },
        )
        .unwrap(),
        make_lagrangian(
            Family::ConvolutionReaction,
            LagrangianParams {
                dim,
                kernel: Some(Kernel::Gaussian { sigma: 0.3, height: 1.0 }),
                reaction: Reaction::Power { coef: 1.0, degree: 2 },
                ..Default::default()
            },
        )
        .unwrap(),
        make_lagrangian(
            Family::NonlocalTotalVariation,
            LagrangianParams {
                dim,
                kernel: Some(Kernel::Truncated { radius: 0.5, height: 1.0 }),
                ..Default::default()
            },
        )
        .unwrap(),
    ]
}

/// Quasi-random sample `(x, y, a, b, ctx)` from a Halton sequence.
fn sample(i: usize, dim: usize) -> (Point, Point, f64, f64, PairCtx) {
    fn halton(mut i: usize, base: usize) -> f64 {
        let mut f = 1.0;
        let mut r = 0.0;
        while i > 0 {
            f /= base as f64;
            r += f * (i % base) as f64;
            i /= base;
        }
        r
    }
    let k = i + 1;
    let u = |b| 3.0 * halton(k, b) - 1.5;
    let mut x = [u(2), 0.0];
    let mut y = [u(3), 0.0];
    if dim == 2 {
        x[1] = u(5);
        y[1] = u(7);
    }
    if dist(&x, &y) < 1e-3 {
        y[0] += 0.25;
    }
    let a = 4.0 * halton(k, 11) - 2.0;
    let b = 4.0 * halton(k, 13) - 2.0;
    (x, y, a, b, PairCtx::new(i.is_multiple_of(2), 1.0))
}

/// Sampled check of `g(x,y,a,b) = g(y,x,b,a)`.
pub fn check_pairwise_symmetry(spec: &LagrangianSpec, sample_count: usize) -> Certificate {
    let mut cert = Certificate::new("pairwise-symmetry", 1e-12);
    let mut worst = 0.0f64;
    let mut worst_rel = 0.0f64;
    for i in 0..sample_count.max(1) {
        let (x, y, a, b, ctx) = sample(i, spec.dim);
        let g1 = spec.g(&x, &y, a, b, &ctx);
        let g2 = spec.g(&y, &x, b, a, &ctx);
        let dev = (g1 - g2).abs();
        let rel = dev / g1.abs().max(g2.abs()).max(1.0);
        worst = worst.max(dev);
        if rel > worst_rel {
            worst_rel = rel;
            cert.observe(
                -rel,
                &[("x0", x[0]), ("y0", y[0]), ("a", a), ("b", b)],
                "g(x,y,a,b) != g(y,x,b,a)",
            );
        }
    }
    cert.margin = -worst_rel;
    cert.details.insert("max_deviation".into(), worst);
    cert.details.insert("samples".into(), sample_count as f64);
    cert.decide()
}

/// Sampled check of `∂²_{ab} g ≤ 0`, or of monotonicity of `∂_a g` in `b`
/// for sign-type densities.
pub fn check_ellipticity(
    spec: &LagrangianSpec,
    sample_count: usize,
) -> Result<Certificate, LagrangianError> {
    let tol = 1e-12;
    let mut cert = Certificate::new("ellipticity", tol);
    cert.margin = f64::INFINITY;
    let mut distributional = false;
    for i in 0..sample_count.max(1) {
        let (x, y, a, b, ctx) = sample(i, spec.dim);
        match spec.dab(&x, &y, a, b, &ctx) {
            MixedPartial::Value(v) => {
                let scale = spec
                    .daa(&x, &y, a, b, &ctx)
                    .map(|d| d.abs())
                    .unwrap_or(0.0)
                    .max(v.abs())
                    .max(1.0);
                cert.observe(
                    -v / scale,
                    &[("x0", x[0]), ("y0", y[0]), ("a", a), ("b", b)],
                    "positive mixed partial",
                );
            }
            MixedPartial::Distributional => {
                distributional = true;
                let mut prev = spec.da(&x, &y, a, -3.0, &ctx);
                for k in 1..=60 {
                    let bb = -3.0 + 0.1 * k as f64;
                    let cur = spec.da(&x, &y, a, bb, &ctx);
                    let scale = prev.abs().max(cur.abs()).max(1.0);
                    cert.observe(
                        (prev - cur) / scale,
                        &[("x0", x[0]), ("y0", y[0]), ("a", a), ("b", bb)],
                        "∂_a g increasing in b",
                    );
                    prev = cur;
                }
            }
            MixedPartial::Unavailable => {
                return Err(LagrangianError::NotApplicable(
                    "no mixed partial and no monotonicity fallback".into(),
                ));
            }
        }
    }
    if cert.margin > 0.0 {
        cert.margin = 0.0;
    }
    if distributional {
        cert.notes.push("sign-type density: monotonicity of ∂_a g in b".into());
    }
    Ok(cert.decide())
}

/// Sampled check of the Hessian conditions `g_aa ≥ 0`, `g_aa g_bb ≥ g_ab²`.
pub fn check_convexity(
    spec: &LagrangianSpec,
    sample_count: usize,
) -> Result<Certificate, LagrangianError> {
    let tol = 1e-10;
    let mut cert = Certificate::new("convexity", tol);
    for i in 0..sample_count.max(1) {
        let (x, y, a, b, ctx) = sample(i, spec.dim);
        let (aa, bb) = match (spec.daa(&x, &y, a, b, &ctx), spec.dbb(&x, &y, a, b, &ctx)) {
            (Some(aa), Some(bb)) => (aa, bb),
            _ => {
                if spec.family == Family::NonlocalTotalVariation {
                    // |a - b| K is convex as a composition of a norm with a
                    // linear map and a nonnegative weight.
                    let k = spec.kernel.as_ref().unwrap().eval(&sub(&x, &y), spec.dim);
                    cert.observe(k / k.abs().max(1.0), &[("x0", x[0])], "negative kernel");
                    continue;
                }
                return Err(LagrangianError::NotApplicable("second partials unavailable".into()));
            }
        };
        let ab = match spec.dab(&x, &y, a, b, &ctx) {
            MixedPartial::Value(v) => v,
            _ => return Err(LagrangianError::NotApplicable("mixed partial unavailable".into())),
        };
        let scale = aa.abs().max(bb.abs()).max(ab.abs()).max(1e-300);
        let m1 = aa / scale;
        let m2 = if aa.is_infinite() { 0.0 } else { (aa * bb - ab * ab) / (scale * scale) };
        let loc = [("x0", x[0]), ("y0", y[0]), ("a", a), ("b", b)];
        cert.observe(m1, &loc, "g_aa < 0");
        cert.observe(m2, &loc, "g_aa g_bb < g_ab²");
    }
    if cert.margin > 0.0 {
        cert.margin = 0.0;
    }
    Ok(cert.decide())
}

/// Centred finite-difference check of `∂_a g` and `∂_b g`.
pub fn check_partials(spec: &LagrangianSpec, sample_count: usize) -> Certificate {
    let mut cert = Certificate::new("partial-consistency", 1e-6);
    cert.margin = 0.0;
    for i in 0..sample_count.max(1) {
        let (x, y, a, b, ctx) = sample(i, spec.dim);
        let h = 1e-5 * (1.0 + a.abs());
        if (a - b).abs() < 1000.0 * h {
            continue;
        }
        let fd = (spec.g(&x, &y, a + h, b, &ctx) - spec.g(&x, &y, a - h, b, &ctx)) / (2.0 * h);
        let an = spec.da(&x, &y, a, b, &ctx);
        let hb = 1e-5 * (1.0 + b.abs());
        let fdb = (spec.g(&x, &y, a, b + hb, &ctx) - spec.g(&x, &y, a, b - hb, &ctx)) / (2.0 * hb);
        let anb = spec.db(&x, &y, a, b, &ctx);
        let gs = spec.g(&x, &y, a, b, &ctx).abs();
        let floor = 1e-9 * (gs + 1.0);
        let ea = (fd - an).abs() / (an.abs().max(fd.abs()) + floor);
        let eb = (fdb - anb).abs() / (anb.abs().max(fdb.abs()) + floor);
        let loc = [("x0", x[0]), ("y0", y[0]), ("a", a), ("b", b)];
        cert.observe(-ea, &loc, "∂_a g differs from finite difference");
        cert.observe(-eb, &loc, "∂_b g differs from finite difference");
    }
    cert.decide()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx_in() -> PairCtx {
        PairCtx::new(true, 2.0)
    }

    #[test]
    fn standard_constant_half_laplacian() {
        let c = standard_constant(1, 0.5);
        assert!((c - 1.0 / std::f64::consts::PI).abs() < 1e-14);
        // n = 2, s = 1/2: Γ(3/2)·2·½ / (π Γ(1/2)) = 1/(2π)
        let c2 = standard_constant(2, 0.5);
        assert!((c2 - 0.5 / std::f64::consts::PI).abs() < 1e-14);
    }

    #[test]
    fn fractional_quadratic_closed_form() {
        let spec =
            make_lagrangian(Family::FractionalQuadratic, LagrangianParams::fractional(1, 0.5))
                .unwrap();
        let c = 1.0 / std::f64::consts::PI;
        let (x, y) = ([0.2, 0.0], [0.7, 0.0]);
        let g = spec.g(&x, &y, 1.0, 0.25, &ctx_in());
        assert!((g - c / 4.0 * 0.5625 / 0.25).abs() < 1e-14);
        let da = spec.da(&x, &y, 1.0, 0.25, &ctx_in());
        assert!((da - c / 2.0 * 0.75 / 0.25).abs() < 1e-14);
        assert_eq!(spec.g(&x, &y, 0.3, 0.3, &ctx_in()), 0.0);
        assert_eq!(spec.da(&x, &y, 0.3, 0.3, &ctx_in()), 0.0);
    }

    #[test]
    fn invalid_s_rejected() {
        let e = make_lagrangian(Family::FractionalQuadratic, LagrangianParams::fractional(1, 1.2));
        assert!(matches!(e, Err(LagrangianError::InvalidParameter(_))));
    }

    #[test]
    fn odd_kernel_rejected_for_convolution() {
        let k = Kernel::Custom { f: Arc::new(|z| z[0].exp()), name: "odd".into() };
        let e = make_lagrangian(
            Family::ConvolutionReaction,
            LagrangianParams { kernel: Some(k), ..Default::default() },
        );
        assert!(matches!(e, Err(LagrangianError::KernelParityViolation(_))));
    }

    #[test]
    fn tv_density_closed_form() {
        let k = Kernel::Truncated { radius: 1.0, height: 2.0 };
        let spec = make_lagrangian(
            Family::NonlocalTotalVariation,
            LagrangianParams { kernel: Some(k), ..Default::default() },
        )
        .unwrap();
        let g = spec.g(&[0.0, 0.0], &[0.5, 0.0], 1.0, -0.5, &ctx_in());
        assert!((g - 3.0).abs() < 1e-15);
    }

    #[test]
    fn convolution_density_closed_form() {
        let k = Kernel::Truncated { radius: 1.0, height: 1.5 };
        let spec = make_lagrangian(
            Family::ConvolutionReaction,
            LagrangianParams {
                kernel: Some(k),
                reaction: Reaction::Power { coef: 1.0, degree: 2 },
                ..Default::default()
            },
        )
        .unwrap();
        let ctx = PairCtx::new(true, 2.0);
        let g = spec.g(&[0.0, 0.0], &[0.5, 0.0], 1.0, 2.0, &ctx);
        let expect = -1.5 * 2.0 + (1.0 / 4.0) * (1.0 + 4.0);
        assert!((g - expect).abs() < 1e-14);
        let out = PairCtx::new(false, 2.0);
        assert_eq!(spec.g(&[0.0, 0.0], &[0.5, 0.0], 1.0, 2.0, &out), 0.0);
    }

    #[test]
    fn catalog_symmetric_and_elliptic() {
        for dim in [1, 2] {
            for spec in elliptic_catalog(dim) {
                let c = check_pairwise_symmetry(&spec, 500);
                assert!(c.passed(), "{} {:?}", spec.id(), c);
                let e = check_ellipticity(&spec, 300).unwrap();
                assert!(e.passed(), "{} {:?}", spec.id(), e);
                let pc = check_partials(&spec, 300);
                assert!(pc.passed(), "{} {:?}", spec.id(), pc);
            }
        }
    }

    #[test]
    fn square_example_convex_not_elliptic() {
        let spec = nonelliptic_square(1);
        assert!(check_ellipticity(&spec, 100).unwrap().failed());
        assert!(check_convexity(&spec, 100).unwrap().passed());
    }

    #[test]
    fn asymmetric_custom_detected_and_symmetrized() {
        assert!(check_pairwise_symmetry(&asymmetric_linear(1, false), 100).failed());
        assert!(check_pairwise_symmetry(&asymmetric_linear(1, true), 100).passed());
    }

    #[test]
    fn quartic_reaction_breaks_convexity() {
        let spec = make_lagrangian(
            Family::FractionalQuadratic,
            LagrangianParams::fractional(1, 0.5)
                .with_reaction(Reaction::Power { coef: 1.0, degree: 4 }),
        )
        .unwrap();
        assert!(check_convexity(&spec, 200).unwrap().failed());
        let plain =
            make_lagrangian(Family::FractionalQuadratic, LagrangianParams::fractional(1, 0.5))
                .unwrap();
        assert!(check_convexity(&plain, 200).unwrap().passed());
    }

    #[test]
    fn perimeter_profile_properties() {
        let spec =
            make_lagrangian(Family::SubgraphPerimeter, LagrangianParams::fractional(1, 0.5))
                .unwrap();
        assert_eq!(spec.perim_phi(0.0), 0.0);
        assert_eq!(spec.perim_dphi(0.0), 0.0);
        // Φ'' by differencing Φ'
        let t = 0.7;
        let h = 1e-5;
        let fd = (spec.perim_dphi(t + h) - spec.perim_dphi(t - h)) / (2.0 * h);
        assert!((fd - spec.perim_d2phi(t)).abs() < 1e-8);
        let fd1 = (spec.perim_phi(t + h) - spec.perim_phi(t - h)) / (2.0 * h);
        assert!((fd1 - spec.perim_dphi(t)).abs() < 1e-8);
    }

    #[test]
    fn no_mixed_partial_is_not_applicable() {
        let parts = CustomParts {
            name: "bare".into(),
            g: Arc::new(|_, _, a, b, _| (a - b).powi(2)),
            da: Arc::new(|_, _, a, b, _| 2.0 * (a - b)),
            db: Arc::new(|_, _, a, b, _| -2.0 * (a - b)),
            daa: None,
            dbb: None,
            dab: None,
            diag_exponent: None,
            symmetrize: false,
        };
        let spec = make_lagrangian(
            Family::CustomTable,
            LagrangianParams { custom: Some(parts), ..Default::default() },
        )
        .unwrap();
        assert!(matches!(check_ellipticity(&spec, 10), Err(LagrangianError::NotApplicable(_))));
    }
}
