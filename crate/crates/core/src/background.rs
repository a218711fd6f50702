//! Spherically symmetric backgrounds in double-null gauge.
//!
//! Coordinates follow `t = u + v`, `r* = v - u`, so the flat metric reads
//! `-4 du dv + r^2 dσ` with `r = v - u` and the interface curve `r* = R` is
//! `v_R(u) = u + R`.

use std::fmt::Debug;

use serde::Serialize;

use crate::error::BackgroundError;
use crate::scalar::Real;

/// Metric data and the null derivatives of `r` and `Ω²` at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Geometry<T> {
    pub r: T,
    pub omega2: T,
    pub dr_du: T,
    pub dr_dv: T,
    pub d2r_dudv: T,
    pub d2r_dvdv: T,
    pub d3r_dudvdv: T,
    pub domega2_du: T,
    pub domega2_dv: T,
}

impl<T: Real> Geometry<T> {
    /// Flat values at areal radius `r`.
    pub fn flat(r: T) -> Self {
        Geometry {
            r,
            omega2: T::lit(4.0),
            dr_du: -T::one(),
            dr_dv: T::one(),
            d2r_dudv: T::zero(),
            d2r_dvdv: T::zero(),
            d3r_dudvdv: T::zero(),
            domega2_du: T::zero(),
            domega2_dv: T::zero(),
        }
    }

    /// `T r = ∂_u r + ∂_v r`.
    #[inline]
    pub fn t_r(&self) -> T {
        self.dr_du + self.dr_dv
    }
}

/// A fixed spherically symmetric spacetime sampled in double-null coordinates.
pub trait Background<T: Real>: Send + Sync + Debug {
    fn name(&self) -> String;

    fn geometry(&self, u: T, v: T) -> Geometry<T>;

    /// Value of `v - u` at a regular center (`r = 0`), if the spacetime has one.
    ///
    /// Grids that reach this diagonal impose `ψ = 0` there.
    fn center_offset(&self) -> Option<T> {
        None
    }

    /// True when every geometric quantity depends on `v - u` only.
    fn is_static(&self) -> bool {
        false
    }

    /// Preferred inner end `v - u` of ingoing segments when no regular center
    /// exists: far enough in that the potential barrier lies outside it.
    fn inner_cutoff(&self) -> Option<T> {
        None
    }

    fn r(&self, u: T, v: T) -> T {
        self.geometry(u, v).r
    }

    fn omega2(&self, u: T, v: T) -> T {
        self.geometry(u, v).omega2
    }

    fn dr_du(&self, u: T, v: T) -> T {
        self.geometry(u, v).dr_du
    }

    fn dr_dv(&self, u: T, v: T) -> T {
        self.geometry(u, v).dr_dv
    }
}

/// Minkowski space: `r = v - u`, `Ω² = 4`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Minkowski;

pub fn minkowski() -> Minkowski {
    Minkowski
}

impl<T: Real> Background<T> for Minkowski {
    fn name(&self) -> String {
        "minkowski".to_string()
    }

    fn geometry(&self, u: T, v: T) -> Geometry<T> {
        Geometry::flat(v - u)
    }

    fn center_offset(&self) -> Option<T> {
        Some(T::zero())
    }

    fn is_static(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy)]
enum Horizon<T> {
    /// `M = 0`: flat space written in tortoise form.
    Flat,
    /// `|e| < M`: `k_± = r_±² / (r_+ - r_-)`.
    NonExtremal { k_plus: T, k_minus: T },
    Extremal,
}

/// Reissner–Nordström exterior with `D(r) = 1 - 2M/r + e²/r²`, `Ω² = 4D`,
/// `∂_v r = -∂_u r = D`, and tortoise coordinate normalized by `r*(3M) = 3M`.
#[derive(Debug, Clone, Copy)]
pub struct ReissnerNordstrom<T> {
    mass: T,
    charge: T,
    r_plus: T,
    r_minus: T,
    horizon: Horizon<T>,
    offset: T,
}

/// Builds the Reissner–Nordström background; `M = 0, e = 0` is flat space.
pub fn reissner_nordstrom<T: Real>(mass: T, charge: T) -> Result<ReissnerNordstrom<T>, BackgroundError> {
    ReissnerNordstrom::new(mass, charge)
}

impl<T: Real> ReissnerNordstrom<T> {
    pub fn new(mass: T, charge: T) -> Result<Self, BackgroundError> {
        if !(mass.is_finite() && charge.is_finite()) || mass < T::zero() {
            return Err(BackgroundError::InvalidParameters(format!(
                "mass must be finite and non-negative, got M = {mass}, e = {charge}"
            )));
        }
        if charge.abs() > mass {
            return Err(BackgroundError::InvalidParameters(format!(
                "|e| = {} exceeds M = {mass}: no exterior region",
                charge.abs()
            )));
        }
        let disc = (mass * mass - charge * charge).max(T::zero()).sqrt();
        let r_plus = mass + disc;
        let r_minus = mass - disc;
        let horizon = if mass == T::zero() {
            Horizon::Flat
        } else if disc <= T::lit(1e-7) * mass {
            Horizon::Extremal
        } else {
            let gap = r_plus - r_minus;
            Horizon::NonExtremal { k_plus: r_plus * r_plus / gap, k_minus: r_minus * r_minus / gap }
        };
        let mut bg = ReissnerNordstrom { mass, charge, r_plus, r_minus, horizon, offset: T::zero() };
        if mass > T::zero() {
            let three_m = T::lit(3.0) * mass;
            let y = bg.log_gap(three_m);
            bg.offset = three_m - bg.tortoise_from_log_gap(y);
        }
        Ok(bg)
    }

    pub fn mass(&self) -> T {
        self.mass
    }

    pub fn charge(&self) -> T {
        self.charge
    }

    /// Outer horizon radius `r_+ = M + sqrt(M² - e²)`.
    pub fn r_plus(&self) -> T {
        self.r_plus
    }

    pub fn lapse(&self, r: T) -> T {
        let m = self.mass;
        let e2 = self.charge * self.charge;
        T::one() - T::lit(2.0) * m / r + e2 / (r * r)
    }

    fn lapse_derivatives(&self, r: T) -> (T, T) {
        let m = self.mass;
        let e2 = self.charge * self.charge;
        let r2 = r * r;
        let d1 = T::lit(2.0) * m / r2 - T::lit(2.0) * e2 / (r2 * r);
        let d2 = -T::lit(4.0) * m / (r2 * r) + T::lit(6.0) * e2 / (r2 * r2);
        (d1, d2)
    }

    /// `y = ln(r - r_+)` (or `ln(r - M)` when extremal); unused for flat space.
    fn log_gap(&self, r: T) -> T {
        (r - self.r_plus).ln()
    }

    fn radius_from_log_gap(&self, y: T) -> T {
        self.r_plus + y.exp()
    }

    fn tortoise_from_log_gap(&self, y: T) -> T {
        let r = self.radius_from_log_gap(y);
        match self.horizon {
            Horizon::Flat => r,
            Horizon::NonExtremal { k_plus, k_minus } => {
                let below = (self.r_plus - self.r_minus) + y.exp();
                r + k_plus * y - k_minus * below.ln() + self.offset
            }
            Horizon::Extremal => {
                let m = self.mass;
                r + T::lit(2.0) * m * y - m * m * (-y).exp() + self.offset
            }
        }
    }

    /// `d r* / d y`, strictly positive.
    fn tortoise_log_gap_slope(&self, y: T) -> T {
        let gap = y.exp();
        match self.horizon {
            Horizon::Flat => gap,
            Horizon::NonExtremal { .. } => {
                let r = self.r_plus + gap;
                r * r / ((self.r_plus - self.r_minus) + gap)
            }
            Horizon::Extremal => {
                let s = gap + self.mass;
                s * s / gap
            }
        }
    }

    /// Tortoise coordinate `r*(r)`; rejects `r <= r_+`.
    pub fn tortoise(&self, r: T) -> Result<T, BackgroundError> {
        if let Horizon::Flat = self.horizon {
            return Ok(r);
        }
        if !(r > self.r_plus) {
            return Err(BackgroundError::InsideHorizon { r: r.as_f64(), r_plus: self.r_plus.as_f64() });
        }
        Ok(self.tortoise_from_log_gap(self.log_gap(r)))
    }

    /// Inverts `r*(r) = x`, returning `(r, ln(r - r_+))`.
    ///
    /// Safeguarded Newton iteration in the log-gap variable, with bisection
    /// whenever a Newton step leaves the current bracket. Working in the log
    /// gap keeps `D(r)` resolvable arbitrarily close to the horizon.
    fn invert(&self, x: T) -> (T, T) {
        let guess = self.initial_log_gap(x);
        let f = |y: T| self.tortoise_from_log_gap(y) - x;

        let step = T::lit(2.0);
        let (mut lo, mut hi) = (guess, guess);
        let mut f_lo = f(lo);
        let mut f_hi = f_lo;
        let mut width = step;
        while f_lo > T::zero() {
            lo = lo - width;
            width = width * T::lit(2.0);
            f_lo = f(lo);
        }
        width = step;
        while f_hi < T::zero() {
            hi = hi + width;
            width = width * T::lit(2.0);
            f_hi = f(hi);
        }
        if f_lo == T::zero() {
            return (self.radius_from_log_gap(lo), lo);
        }
        if f_hi == T::zero() {
            return (self.radius_from_log_gap(hi), hi);
        }

        let tol = T::epsilon() * T::lit(8.0);
        let mut y = if guess > lo && guess < hi { guess } else { T::lit(0.5) * (lo + hi) };
        for _ in 0..200 {
            let fy = f(y);
            if fy == T::zero() {
                break;
            }
            if fy < T::zero() {
                lo = y;
            } else {
                hi = y;
            }
            let newton = y - fy / self.tortoise_log_gap_slope(y);
            let next = if newton > lo && newton < hi { newton } else { T::lit(0.5) * (lo + hi) };
            let done = (next - y).abs() <= tol * y.abs().max(T::one());
            y = next;
            if done || hi - lo <= tol * y.abs().max(T::one()) {
                break;
            }
        }
        (self.radius_from_log_gap(y), y)
    }

    fn initial_log_gap(&self, x: T) -> T {
        let m = self.mass;
        let three_m = T::lit(3.0) * m;
        if x >= three_m {
            // r ≈ r*, slightly reduced by the logarithmic correction.
            (x - self.r_plus).max(m).ln()
        } else {
            match self.horizon {
                Horizon::NonExtremal { k_plus, k_minus } => {
                    let y = (x - self.r_plus - self.offset + k_minus * (self.r_plus - self.r_minus).ln()) / k_plus;
                    y.min(three_m.ln())
                }
                Horizon::Extremal => {
                    let depth = ((three_m - x) / (m * m)).max(T::lit(1e-3));
                    -depth.ln()
                }
                Horizon::Flat => x.max(T::epsilon()).ln(),
            }
        }
    }

    /// Areal radius at tortoise coordinate `x`.
    pub fn radius(&self, x: T) -> T {
        match self.horizon {
            Horizon::Flat => x,
            _ => self.invert(x).0,
        }
    }

    fn geometry_at_tortoise(&self, x: T) -> Geometry<T> {
        if let Horizon::Flat = self.horizon {
            return Geometry::flat(x);
        }
        let (r, y) = self.invert(x);
        let gap = y.exp();
        let d = match self.horizon {
            Horizon::Extremal => gap * gap / (r * r),
            _ => gap * (r - self.r_minus) / (r * r),
        };
        let (d1, d2) = self.lapse_derivatives(r);
        Geometry {
            r,
            omega2: T::lit(4.0) * d,
            dr_du: -d,
            dr_dv: d,
            d2r_dudv: -d * d1,
            d2r_dvdv: d * d1,
            d3r_dudvdv: -d * (d1 * d1 + d * d2),
            domega2_du: -T::lit(4.0) * d1 * d,
            domega2_dv: T::lit(4.0) * d1 * d,
        }
    }
}

impl<T: Real> Background<T> for ReissnerNordstrom<T> {
    fn name(&self) -> String {
        format!("reissner-nordstrom(M={}, e={})", self.mass, self.charge)
    }

    fn geometry(&self, u: T, v: T) -> Geometry<T> {
        self.geometry_at_tortoise(v - u)
    }

    fn center_offset(&self) -> Option<T> {
        match self.horizon {
            Horizon::Flat => Some(T::zero()),
            _ => None,
        }
    }

    fn is_static(&self) -> bool {
        true
    }

    /// A quarter of the way from the horizon to the photon sphere.
    fn inner_cutoff(&self) -> Option<T> {
        if let Horizon::Flat = self.horizon {
            return None;
        }
        let (m, e) = (self.mass, self.charge);
        let photon = (T::lit(3.0) * m + (T::lit(9.0) * m * m - T::lit(8.0) * e * e).sqrt()) * T::lit(0.5);
        self.tortoise(self.r_plus + (photon - self.r_plus) * T::lit(0.25)).ok()
    }
}

/// A lattice of sample points `(u, v = u + ρ)` with `ρ` log-spaced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRegion<T> {
    pub u_min: T,
    pub u_max: T,
    pub rho_min: T,
    pub rho_max: T,
    pub n_u: usize,
    pub n_rho: usize,
    /// Optional restriction `ρ <= cap · u` (cone-shaped region).
    pub rho_cap: Option<T>,
}

/// One point of a [`SampleRegion`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SamplePoint<T> {
    pub u: T,
    pub v: T,
    pub rho: T,
}

impl<T: Real> SampleRegion<T> {
    pub fn new(u: (T, T), rho: (T, T), n_u: usize, n_rho: usize) -> Self {
        SampleRegion { u_min: u.0, u_max: u.1, rho_min: rho.0, rho_max: rho.1, n_u, n_rho, rho_cap: None }
    }

    pub fn with_cone(mut self, cap: T) -> Self {
        self.rho_cap = Some(cap);
        self
    }

    pub fn validate(&self) -> Result<(), BackgroundError> {
        let ok = self.u_min.is_finite()
            && self.u_max >= self.u_min
            && self.rho_min > T::zero()
            && self.rho_max >= self.rho_min
            && self.n_u >= 1
            && self.n_rho >= 2;
        if ok {
            Ok(())
        } else {
            Err(BackgroundError::InvalidRegion(format!("{self:?}")))
        }
    }

    pub fn points(&self) -> Vec<SamplePoint<T>> {
        let mut out = Vec::with_capacity(self.n_u * self.n_rho);
        let ratio = (self.rho_max / self.rho_min).ln();
        for a in 0..self.n_u {
            let u = if self.n_u == 1 {
                self.u_min
            } else {
                self.u_min + (self.u_max - self.u_min) * T::from_index(a) / T::from_index(self.n_u - 1)
            };
            for b in 0..self.n_rho {
                let rho = self.rho_min * (ratio * T::from_index(b) / T::from_index(self.n_rho - 1)).exp();
                if let Some(cap) = self.rho_cap {
                    if rho > cap * u {
                        continue;
                    }
                }
                out.push(SamplePoint { u, v: u + rho, rho });
            }
        }
        out
    }
}

/// Names of the weighted (H0) quantities, in [`H0Report::suprema`] order.
pub const H0_QUANTITIES: [&str; 7] = [
    "r|1-dv r|",
    "r|1+du r|",
    "r|omega2-4|",
    "r^2|dv omega2|",
    "r^2|dv^2 r|",
    "r^2|du dv r|",
    "r^2|du dv^2 r|",
];

/// Suprema of the weighted asymptotic-flatness quantities over a sample region.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H0Report<T> {
    /// `sup r |1 - ∂_v r|`
    pub one_minus_dr_dv: T,
    /// `sup r |1 + ∂_u r|`
    pub one_plus_dr_du: T,
    /// `sup r |Ω² - 4|`
    pub omega2_minus_four: T,
    /// `sup r · r |∂_v Ω²|`
    pub domega2_dv: T,
    /// `sup r² |∂_v² r|`
    pub d2r_dvdv: T,
    /// `sup r² |∂_u ∂_v r|`
    pub d2r_dudv: T,
    /// `sup r² |∂_u ∂_v² r|`
    pub d3r_dudvdv: T,
    pub ceiling: T,
    /// Quantities whose supremum over the outermost dyadic r-band exceeds the
    /// next band's by more than 5%, i.e. that still grow at the sampled radii.
    pub growing: Vec<String>,
    pub pass: bool,
    /// First sample where a sampler returned a non-finite value.
    pub failure: Option<SamplePoint<T>>,
}

impl<T: Real> H0Report<T> {
    pub fn suprema(&self) -> [T; 7] {
        [
            self.one_minus_dr_dv,
            self.one_plus_dr_du,
            self.omega2_minus_four,
            self.domega2_dv,
            self.d2r_dvdv,
            self.d2r_dudv,
            self.d3r_dudvdv,
        ]
    }
}

/// Default ceiling for the weighted suprema.
pub const DEFAULT_H0_CEILING: f64 = 100.0;

/// Relative slack allowed between the outer and inner band suprema.
pub const BAND_SLACK: f64 = 1.05;

/// Samples the asymptotic-flatness conditions over `region`.
///
/// The region must lie where `v - u >= R`. Pass requires every supremum to be
/// at most `ceiling` and none of the weighted quantities to grow between the
/// two outermost dyadic r-bands.
pub fn verify_h0<T: Real>(
    bg: &dyn Background<T>,
    region: &SampleRegion<T>,
    ceiling: T,
) -> Result<H0Report<T>, BackgroundError> {
    region.validate()?;
    let mut sup = [T::zero(); 7];
    let mut samples = Vec::new();
    let mut failure = None;
    for p in region.points() {
        let g = bg.geometry(p.u, p.v);
        let r = g.r;
        let r2 = r * r;
        let values = [
            r * (T::one() - g.dr_dv).abs(),
            r * (T::one() + g.dr_du).abs(),
            r * (g.omega2 - T::lit(4.0)).abs(),
            r2 * g.domega2_dv.abs(),
            r2 * g.d2r_dvdv.abs(),
            r2 * g.d2r_dudv.abs(),
            r2 * g.d3r_dudvdv.abs(),
        ];
        if !(r > T::zero()) || values.iter().any(|x| !x.is_finite()) {
            failure = Some(p);
            break;
        }
        for (s, x) in sup.iter_mut().zip(values) {
            *s = s.max(x);
        }
        samples.push((r, values));
    }

    let r_hi = samples.iter().map(|s| s.0).fold(T::zero(), T::max);
    let mut inner = [T::zero(); 7];
    let mut outer = [T::zero(); 7];
    for (r, values) in &samples {
        let band = if *r >= r_hi * T::lit(0.5) {
            &mut outer
        } else if *r >= r_hi * T::lit(0.25) {
            &mut inner
        } else {
            continue;
        };
        for (b, &x) in band.iter_mut().zip(values) {
            *b = b.max(x);
        }
    }
    let tiny = T::epsilon() * T::lit(64.0) * ceiling;
    let growing: Vec<String> = (0..7)
        .filter(|&k| outer[k] > T::lit(BAND_SLACK) * inner[k] + tiny)
        .map(|k| H0_QUANTITIES[k].to_string())
        .collect();
    let pass = failure.is_none() && growing.is_empty() && sup.iter().all(|&s| s <= ceiling);
    Ok(H0Report {
        one_minus_dr_dv: sup[0],
        one_plus_dr_du: sup[1],
        omega2_minus_four: sup[2],
        domega2_dv: sup[3],
        d2r_dvdv: sup[4],
        d2r_dudv: sup[5],
        d3r_dudvdv: sup[6],
        ceiling,
        growing,
        pass,
        failure,
    })
}
