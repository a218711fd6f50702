//! Scale-critical coefficient functions, the radiation-field transform, and the
//! (H1)/(H3) assumption checkers.
//!
//! The wave equation is
//!
//! ```text
//! □_g φ = r⁻² ( (εw₀ + W₀) φ + (εw₁ + W₁) ∂_u φ + (εq + Q) r ∂_v φ )
//! ```
//!
//! and for `ψ = rφ` it becomes
//!
//! ```text
//! ∂_u∂_v ψ = (Ω²/4) r⁻² Δ_S² ψ + r⁻² ( s0 ψ + s1 ∂_u ψ + sq r ∂_v ψ )
//! ```
//!
//! with `s0 = εw̌₀ + W̌₀`, `s1 = εw̌₁ + W̌₁`, `sq = εq̌ + Q̌` (see [`tilde_transform`]).

pub mod expr;

use serde::Serialize;

use crate::background::{Background, Geometry, SamplePoint, SampleRegion};
use crate::error::PotentialError;
use crate::scalar::Real;

pub use expr::{parse_potential, EvalPoint, Expr, PotentialExpression};

/// Closed-form coefficient families with analytic partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Builtin<T> {
    /// `sin(u + log r)`
    SinUPlusLogR,
    /// `sin(log u + log r)`, intended for `u > 0`.
    SinLogUPlusLogR,
    /// `amplitude · r^exponent`
    RadialPower { amplitude: T, exponent: T },
    /// `(1 + r)^(-decay) · sin(u + log r)`
    DampedOscillation { decay: T },
}

impl<T: Real> Builtin<T> {
    /// Value and partials `(f, ∂f/∂u, ∂f/∂r)` with `u, r` as independent variables.
    fn eval_ur(&self, u: T, r: T) -> (T, T, T) {
        match *self {
            Builtin::SinUPlusLogR => {
                let phase = u + r.ln();
                let c = phase.cos();
                (phase.sin(), c, c / r)
            }
            Builtin::SinLogUPlusLogR => {
                let phase = u.ln() + r.ln();
                let c = phase.cos();
                (phase.sin(), c / u, c / r)
            }
            Builtin::RadialPower { amplitude, exponent } => {
                let f = amplitude * r.powf(exponent);
                (f, T::zero(), exponent * f / r)
            }
            Builtin::DampedOscillation { decay } => {
                let phase = u + r.ln();
                let (s, c) = (phase.sin(), phase.cos());
                let env = (T::one() + r).powf(-decay);
                let d_env = -decay * env / (T::one() + r);
                (env * s, env * c, d_env * s + env * c / r)
            }
        }
    }

    fn radial_only(&self) -> bool {
        matches!(self, Builtin::RadialPower { .. })
    }
}

/// One coefficient function `(u, v) ↦ value`, with null partial derivatives.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient<T> {
    Zero,
    Constant(T),
    Builtin(Builtin<T>),
    Expression(PotentialExpression),
}

impl<T: Real> Default for Coefficient<T> {
    fn default() -> Self {
        Coefficient::Zero
    }
}

/// Finite-difference step for parsed expressions.
fn fd_step<T: Real>(x: T) -> T {
    T::lit(1e-6).max(T::lit(1e-8) * x.abs())
}

impl<T: Real> Coefficient<T> {
    /// Parses a coefficient; variable-free expressions fold to constants.
    pub fn parse(name: &str, text: &str) -> Result<Self, PotentialError> {
        let e = parse_potential(text).map_err(|source| PotentialError::Parse { name: name.to_string(), source })?;
        Ok(match e.ast.constant_value() {
            Some(c) if c == 0.0 => Coefficient::Zero,
            Some(c) => Coefficient::Constant(T::lit(c)),
            None => Coefficient::Expression(e),
        })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Coefficient::Zero)
    }

    /// True when the value depends on the point only through `r`.
    pub fn radial_only(&self) -> bool {
        match self {
            Coefficient::Zero | Coefficient::Constant(_) => true,
            Coefficient::Builtin(b) => b.radial_only(),
            Coefficient::Expression(e) => e.radial_only(),
        }
    }

    pub fn value(&self, u: T, v: T, r: T) -> T {
        match self {
            Coefficient::Zero => T::zero(),
            Coefficient::Constant(c) => *c,
            Coefficient::Builtin(b) => b.eval_ur(u, r).0,
            Coefficient::Expression(e) => e.eval(u, v, r),
        }
    }

    /// `∂_u` at fixed `v`.
    pub fn du(&self, bg: &dyn Background<T>, u: T, v: T) -> T {
        match self {
            Coefficient::Zero | Coefficient::Constant(_) => T::zero(),
            Coefficient::Builtin(b) => {
                let g = bg.geometry(u, v);
                let (_, fu, fr) = b.eval_ur(u, g.r);
                fu + fr * g.dr_du
            }
            Coefficient::Expression(e) => {
                let h = fd_step(u);
                let (a, b) = (u - h, u + h);
                (e.eval(b, v, bg.r(b, v)) - e.eval(a, v, bg.r(a, v))) / (b - a)
            }
        }
    }

    /// `∂_v` at fixed `u`.
    pub fn dv(&self, bg: &dyn Background<T>, u: T, v: T) -> T {
        match self {
            Coefficient::Zero | Coefficient::Constant(_) => T::zero(),
            Coefficient::Builtin(b) => {
                let g = bg.geometry(u, v);
                let (_, _, fr) = b.eval_ur(u, g.r);
                fr * g.dr_dv
            }
            Coefficient::Expression(e) => {
                let h = fd_step(v);
                let (a, b) = (v - h, v + h);
                (e.eval(u, b, bg.r(u, b)) - e.eval(u, a, bg.r(u, a))) / (b - a)
            }
        }
    }
}

/// Names of the six coefficients, in storage order.
pub const COEFFICIENT_NAMES: [&str; 6] = ["w0", "w1", "q", "W0", "W1", "Q"];

/// The amplitude `ε` and the six coefficient functions.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSet<T> {
    pub epsilon: T,
    pub w0: Coefficient<T>,
    pub w1: Coefficient<T>,
    pub q: Coefficient<T>,
    pub big_w0: Coefficient<T>,
    pub big_w1: Coefficient<T>,
    pub big_q: Coefficient<T>,
}

impl<T: Real> PotentialSet<T> {
    pub fn zero() -> Self {
        PotentialSet {
            epsilon: T::zero(),
            w0: Coefficient::Zero,
            w1: Coefficient::Zero,
            q: Coefficient::Zero,
            big_w0: Coefficient::Zero,
            big_w1: Coefficient::Zero,
            big_q: Coefficient::Zero,
        }
    }

    /// `w₀ = 1`, everything else zero: the exact inverse-square potential.
    pub fn inverse_square(epsilon: T) -> Self {
        PotentialSet { epsilon, w0: Coefficient::Constant(T::one()), ..Self::zero() }
    }

    pub fn with_w0(epsilon: T, w0: Coefficient<T>) -> Self {
        PotentialSet { epsilon, w0, ..Self::zero() }
    }

    /// Builds a set from expression strings in the order of [`COEFFICIENT_NAMES`].
    pub fn from_expressions(epsilon: T, texts: [&str; 6]) -> Result<Self, PotentialError> {
        let c = |i: usize| Coefficient::parse(COEFFICIENT_NAMES[i], texts[i]);
        Ok(PotentialSet {
            epsilon,
            w0: c(0)?,
            w1: c(1)?,
            q: c(2)?,
            big_w0: c(3)?,
            big_w1: c(4)?,
            big_q: c(5)?,
        })
    }

    pub fn coefficients(&self) -> [&Coefficient<T>; 6] {
        [&self.w0, &self.w1, &self.q, &self.big_w0, &self.big_w1, &self.big_q]
    }

    /// True when every coefficient depends only on `r`.
    pub fn radial_only(&self) -> bool {
        self.coefficients().iter().all(|c| c.radial_only())
    }

    /// True when the source term of the radiation-field equation carries no potential part.
    pub fn is_trivial(&self) -> bool {
        let small_zero = self.epsilon == T::zero()
            || (self.w0.is_zero() && self.w1.is_zero() && self.q.is_zero());
        small_zero && self.big_w0.is_zero() && self.big_w1.is_zero() && self.big_q.is_zero()
    }
}

/// Transformed coefficients of the radiation-field equation at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TildeCoefficients<T> {
    pub epsilon: T,
    pub w_check0: T,
    pub w_check1: T,
    pub q_check: T,
    pub big_w_check0: T,
    pub big_w_check1: T,
    pub big_q_check: T,
    pub s0: T,
    pub s1: T,
    pub sq: T,
}

impl<T: Real> TildeCoefficients<T> {
    /// `w̃₀ = s0 / ε`; `None` when `ε = 0`.
    pub fn wtilde0(&self) -> Option<T> {
        self.per_epsilon(self.s0)
    }

    pub fn wtilde1(&self) -> Option<T> {
        self.per_epsilon(self.s1)
    }

    pub fn qtilde(&self) -> Option<T> {
        self.per_epsilon(self.sq)
    }

    fn per_epsilon(&self, s: T) -> Option<T> {
        (self.epsilon != T::zero()).then(|| s / self.epsilon)
    }
}

/// Raw coefficient values at one point, the input of the transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientValues<T> {
    pub w0: T,
    pub w1: T,
    pub q: T,
    pub big_w0: T,
    pub big_w1: T,
    pub big_q: T,
}

impl<T: Real> PotentialSet<T> {
    pub fn values(&self, u: T, v: T, r: T) -> CoefficientValues<T> {
        CoefficientValues {
            w0: self.w0.value(u, v, r),
            w1: self.w1.value(u, v, r),
            q: self.q.value(u, v, r),
            big_w0: self.big_w0.value(u, v, r),
            big_w1: self.big_w1.value(u, v, r),
            big_q: self.big_q.value(u, v, r),
        }
    }
}

/// The transform from the `φ` equation to the `ψ = rφ` equation, given geometry.
///
/// `w̌₀ = -(Ω²/4) w₀ + (Ω²/4)(∂_u r / r) w₁ + (Ω²/4)(∂_v r) q`, likewise for
/// `W̌₀` with the extra curvature term `r ∂_u∂_v r`; the `1/r` on the `w₁`
/// term comes from `∂_u φ = (∂_u ψ - ψ ∂_u r / r) / r`.
pub fn tilde_from_values<T: Real>(epsilon: T, c: &CoefficientValues<T>, g: &Geometry<T>) -> TildeCoefficients<T> {
    let k = g.omega2 * T::lit(0.25);
    let ur = g.dr_du / g.r;
    let w_check0 = -k * c.w0 + k * ur * c.w1 + k * g.dr_dv * c.q;
    let w_check1 = -k * c.w1;
    let q_check = -k * c.q;
    let big_w_check0 = -k * c.big_w0 + k * ur * c.big_w1 + k * g.dr_dv * c.big_q + g.r * g.d2r_dudv;
    let big_w_check1 = -k * c.big_w1;
    let big_q_check = -k * c.big_q;
    TildeCoefficients {
        epsilon,
        w_check0,
        w_check1,
        q_check,
        big_w_check0,
        big_w_check1,
        big_q_check,
        s0: epsilon * w_check0 + big_w_check0,
        s1: epsilon * w_check1 + big_w_check1,
        sq: epsilon * q_check + big_q_check,
    }
}

pub fn tilde_transform<T: Real>(ps: &PotentialSet<T>, bg: &dyn Background<T>, u: T, v: T) -> TildeCoefficients<T> {
    let g = bg.geometry(u, v);
    tilde_from_values(ps.epsilon, &ps.values(u, v, g.r), &g)
}

/// Whether a clause asks for boundedness or for `o(1)` decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClauseKind {
    Bounded,
    Vanishing,
}

/// Supremum of one weighted quantity over the sample region and its two outermost dyadic r-bands.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClauseReport<T> {
    pub quantity: String,
    pub kind: ClauseKind,
    pub sup: T,
    pub sup_inner_band: T,
    pub sup_outer_band: T,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport<T> {
    pub assumption: String,
    pub ceiling: T,
    pub clauses: Vec<ClauseReport<T>>,
    pub pass: bool,
    pub failure: Option<SamplePoint<T>>,
    /// Always true: sampled suprema can only falsify growth and `o(1)` behaviour.
    pub heuristic: bool,
}

impl<T: Real> AssumptionReport<T> {
    pub fn clause(&self, quantity: &str) -> Option<&ClauseReport<T>> {
        self.clauses.iter().find(|c| c.quantity == quantity)
    }
}

/// Default ceiling for (H1)/(H3) suprema.
pub const DEFAULT_POTENTIAL_CEILING: f64 = 100.0;

/// Relative slack allowed between the outer and inner band suprema.
const BAND_SLACK: f64 = 1.05;

type Sampler<'a, T> = Box<dyn Fn(&SamplePoint<T>, &Geometry<T>) -> T + 'a>;

fn run_clauses<T: Real>(
    name: &str,
    bg: &dyn Background<T>,
    region: &SampleRegion<T>,
    ceiling: T,
    clauses: Vec<(String, ClauseKind, Sampler<'_, T>)>,
) -> Result<AssumptionReport<T>, PotentialError> {
    region.validate().map_err(|e| PotentialError::InvalidRegion(e.to_string()))?;
    let points = region.points();
    let geoms: Vec<Geometry<T>> = points.iter().map(|p| bg.geometry(p.u, p.v)).collect();
    let r_hi = geoms.iter().map(|g| g.r).fold(T::zero(), T::max);
    let outer_lo = r_hi * T::lit(0.5);
    let inner_lo = r_hi * T::lit(0.25);

    let mut report = AssumptionReport {
        assumption: name.to_string(),
        ceiling,
        clauses: Vec::new(),
        pass: true,
        failure: None,
        heuristic: true,
    };
    for (quantity, kind, f) in clauses {
        let (mut sup, mut inner, mut outer) = (T::zero(), T::zero(), T::zero());
        for (p, g) in points.iter().zip(&geoms) {
            let x = f(p, g).abs();
            if !x.is_finite() {
                report.pass = false;
                report.failure = Some(*p);
                report.clauses.push(ClauseReport {
                    quantity,
                    kind,
                    sup: T::infinity(),
                    sup_inner_band: inner,
                    sup_outer_band: outer,
                    pass: false,
                });
                return Ok(report);
            }
            sup = sup.max(x);
            if g.r >= outer_lo {
                outer = outer.max(x);
            } else if g.r >= inner_lo {
                inner = inner.max(x);
            }
        }
        let tiny = T::epsilon() * T::lit(64.0) * ceiling;
        let not_growing = outer <= T::lit(BAND_SLACK) * inner + tiny;
        let pass = match kind {
            ClauseKind::Bounded => sup <= ceiling && not_growing,
            ClauseKind::Vanishing => sup <= ceiling && outer <= T::lit(0.5) * ceiling && not_growing,
        };
        report.pass &= pass;
        report.clauses.push(ClauseReport { quantity, kind, sup, sup_inner_band: inner, sup_outer_band: outer, pass });
    }
    Ok(report)
}

fn value_sampler<T: Real>(c: &Coefficient<T>) -> Sampler<'_, T> {
    Box::new(move |p, g| c.value(p.u, p.v, g.r))
}

fn dv_sampler<'a, T: Real>(c: &'a Coefficient<T>, bg: &'a dyn Background<T>, power: i32) -> Sampler<'a, T> {
    Box::new(move |p, g| g.r.powi(power) * c.dv(bg, p.u, p.v))
}

fn du_sampler<'a, T: Real>(c: &'a Coefficient<T>, bg: &'a dyn Background<T>) -> Sampler<'a, T> {
    Box::new(move |p, g| g.r * c.du(bg, p.u, p.v))
}

/// Samples (H1): boundedness of `w_i, q` and their weighted `∂_v` derivatives,
/// `o(1)` behaviour of `W_i, Q` and theirs.
///
/// A bounded clause fails if its supremum exceeds `ceiling` or the outermost
/// dyadic r-band supremum exceeds the next band's by more than 5%; an `o(1)`
/// clause additionally needs the outer-band supremum below half the ceiling.
pub fn verify_h1<T: Real>(
    ps: &PotentialSet<T>,
    bg: &dyn Background<T>,
    region: &SampleRegion<T>,
    ceiling: T,
) -> Result<AssumptionReport<T>, PotentialError> {
    use ClauseKind::{Bounded, Vanishing};
    let value = value_sampler::<T>;
    let dv = |c, power| dv_sampler(c, bg, power);
    let clauses = vec![
        ("|w0|".to_string(), Bounded, value(&ps.w0)),
        ("|w1|".to_string(), Bounded, value(&ps.w1)),
        ("|q|".to_string(), Bounded, value(&ps.q)),
        ("r|dv w0|".to_string(), Bounded, dv(&ps.w0, 1)),
        ("r^2|dv q|".to_string(), Bounded, dv(&ps.q, 2)),
        ("|W0|".to_string(), Vanishing, value(&ps.big_w0)),
        ("|W1|".to_string(), Vanishing, value(&ps.big_w1)),
        ("|Q|".to_string(), Vanishing, value(&ps.big_q)),
        ("r|dv W0|".to_string(), Vanishing, dv(&ps.big_w0, 1)),
        ("r^2|dv W1|".to_string(), Vanishing, dv(&ps.big_w1, 2)),
        ("r^2|dv Q|".to_string(), Vanishing, dv(&ps.big_q, 2)),
    ];
    run_clauses("H1", bg, region, ceiling, clauses)
}

/// Samples (H3): `r|∂_u w_i|`, `r|∂_u q|` bounded and `r|∂_u W_i|`, `r|∂_u Q|` `o(1)`.
pub fn verify_h3<T: Real>(
    ps: &PotentialSet<T>,
    bg: &dyn Background<T>,
    region: &SampleRegion<T>,
    ceiling: T,
) -> Result<AssumptionReport<T>, PotentialError> {
    use ClauseKind::{Bounded, Vanishing};
    let du = |c| du_sampler(c, bg);
    let clauses = vec![
        ("r|du w0|".to_string(), Bounded, du(&ps.w0)),
        ("r|du w1|".to_string(), Bounded, du(&ps.w1)),
        ("r|du q|".to_string(), Bounded, du(&ps.q)),
        ("r|du W0|".to_string(), Vanishing, du(&ps.big_w0)),
        ("r|du W1|".to_string(), Vanishing, du(&ps.big_w1)),
        ("r|du Q|".to_string(), Vanishing, du(&ps.big_q)),
    ];
    run_clauses("H3", bg, region, ceiling, clauses)
}
