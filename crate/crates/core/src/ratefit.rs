//! Power-law decay exponents from time series and their comparison with the
//! theorem targets.
//!
//! Exponents are least-squares slopes of `log y` against `log u`. The theorem
//! bounds are one-sided: a fit *meets* a bound when it decays at least as fast
//! as the target allows. Only the two sharp claims are two-sided.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diagnostics::EnergySeries;
use crate::error::FitError;
use crate::scalar::Real;

/// Fewest points accepted in a fit window.
pub const MIN_FIT_POINTS: usize = 8;

/// Largest plateau deviation for which a fit is treated as a power law.
pub const PLATEAU_THRESHOLD: f64 = 0.25;

/// Default coefficient of `√ε` in the theorem tolerance.
pub const DEFAULT_C_TOL: f64 = 1.0;

/// Multiple of the fit's standard error added to every one-sided tolerance.
pub const STDERR_BUDGET: f64 = 2.0;

/// Symmetric tolerance of the sharp claim at fixed `r`.
pub const SHARP_POINTWISE_TOLERANCE: f64 = 0.1;

/// Symmetric tolerance of the sharp claim for the radiation field.
pub const SHARP_RADIATION_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    MeetsBound,
    SaturatesSharp,
    Fails,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::MeetsBound => "meets-bound",
            Verdict::SaturatesSharp => "saturates-sharp",
            Verdict::Fails => "fails",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// The decay statement a fitted exponent is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Claim {
    /// `E[φ](u) ≲ u^{-3+η}`
    Energy,
    /// `|ψ_I|(u) ≲ u^{-1+η/2}`
    Radiation,
    /// `|φ|(u, v) ≲ u^{-2+η/2}` on `v ≥ u + R`.
    PointwiseR,
    /// `r|φ|(u, v) ≲ u^{-1+η/2}` on `v ≥ u + R`.
    PointwiseBulk,
    /// `E[Tφ₀](u) ≲ u^{-5+η}`
    #[serde(rename = "T_energy", alias = "t_energy")]
    TEnergy,
    /// `E[φ_{≥1}](u) ≲ u^{-2p_low}`
    HigherModes,
    /// `|φ|(u, v_R(u)) ~ u^{-2β}` on Minkowski with `w₀ = 1`.
    Sharp,
    /// `|ψ_I|(u) ~ u^{-β}` on Minkowski with `w₀ = 1`.
    SharpRadiation,
}

impl Claim {
    pub const ALL: [Claim; 8] = [
        Claim::Energy,
        Claim::Radiation,
        Claim::PointwiseR,
        Claim::PointwiseBulk,
        Claim::TEnergy,
        Claim::HigherModes,
        Claim::Sharp,
        Claim::SharpRadiation,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Claim::Energy => "energy",
            Claim::Radiation => "radiation",
            Claim::PointwiseR => "pointwise_r",
            Claim::PointwiseBulk => "pointwise_bulk",
            Claim::TEnergy => "T_energy",
            Claim::HigherModes => "higher_modes",
            Claim::Sharp => "sharp",
            Claim::SharpRadiation => "sharp_radiation",
        }
    }

    pub fn is_sharp(self) -> bool {
        matches!(self, Claim::Sharp | Claim::SharpRadiation)
    }

    /// Exponent the claim is measured against at `ε`, without the `O(√ε)` loss.
    pub fn target<T: Real>(self, epsilon: T) -> T {
        match self {
            Claim::Energy => -T::lit(3.0),
            Claim::Radiation | Claim::PointwiseBulk => -T::one(),
            Claim::PointwiseR => -T::lit(2.0),
            Claim::TEnergy => -T::lit(5.0),
            Claim::HigherModes => -T::lit(4.0),
            Claim::Sharp => -T::lit(2.0) * beta(epsilon),
            Claim::SharpRadiation => -beta(epsilon),
        }
    }
}

impl fmt::Display for Claim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Claim {
    type Err = FitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().replace('-', "_").to_ascii_lowercase();
        Claim::ALL
            .into_iter()
            .find(|c| c.label().to_ascii_lowercase() == key)
            .ok_or_else(|| FitError::UnknownClaim(s.to_string()))
    }
}

/// `β(ε) = (1 + √(1 + 4ε)) / 2`.
pub fn beta<T: Real>(epsilon: T) -> T {
    (T::one() + (T::one() + T::lit(4.0) * epsilon).sqrt()) * T::lit(0.5)
}

/// Rates implied by the theorem at `ε`, with every unspecified `O(√ε)` loss
/// set to `c_tol √|ε|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoremRates<T> {
    pub eta: T,
    pub eta_t: T,
    pub delta: T,
    pub p_low: T,
    pub p_high: T,
}

impl<T: Real> TheoremRates<T> {
    pub fn new(epsilon: T, c_tol: T) -> Self {
        let loss = c_tol * epsilon.abs().sqrt();
        TheoremRates {
            eta: loss,
            eta_t: loss,
            delta: loss,
            p_low: T::lit(2.0) - loss,
            p_high: T::lit(3.0) - loss,
        }
    }
}

/// A fitted exponent and, once compared, the claim it was judged against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult<T> {
    pub exponent: T,
    pub stderr: T,
    pub window: (T, T),
    pub points: usize,
    /// Largest deviation of the sliding local log-derivative from `exponent`.
    pub plateau_quality: T,
    pub claim: Option<Claim>,
    pub target: Option<T>,
    pub tolerance: Option<T>,
    /// `None` until compared, except for fits that fail the plateau test.
    pub verdict: Option<Verdict>,
}

impl<T: Real> FitResult<T> {
    pub fn is_power_law(&self) -> bool {
        self.plateau_quality <= T::lit(PLATEAU_THRESHOLD)
    }
}

/// Least-squares slope, intercept and slope standard error.
fn least_squares<T: Real>(x: &[T], y: &[T]) -> (T, T, T) {
    let n = T::from_index(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    for (&a, &b) in x.iter().zip(y) {
        sxx = sxx + (a - mx) * (a - mx);
        sxy = sxy + (a - mx) * (b - my);
    }
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    if x.len() <= 2 {
        return (slope, icpt, T::zero());
    }
    let ssr: T = x.iter().zip(y).map(|(&a, &b)| (b - icpt - slope * a).powi(2)).sum();
    let stderr = (ssr / (n - T::lit(2.0)) / sxx).sqrt();
    (slope, icpt, stderr)
}

/// Largest deviation from `slope` of the local slopes over sub-windows spanning
/// a quarter of the window in `log u` (and at least three points).
fn plateau<T: Real>(x: &[T], y: &[T], slope: T) -> T {
    let n = x.len();
    let width = (x[n - 1] - x[0]) * T::lit(0.25);
    let mut worst = T::zero();
    for k in 0..n {
        let mut m = k + 1;
        while m < n && (m - k < 3 || x[m - 1] - x[k] < width) {
            m += 1;
        }
        if m - k < 3 || x[m - 1] - x[k] < width {
            break;
        }
        let (s, _, _) = least_squares(&x[k..m], &y[k..m]);
        worst = worst.max((s - slope).abs());
    }
    worst
}

/// Fits `y ~ u^exponent` on `window`, or on the last decade of `u` when `None`.
///
/// Points are `(u, y)` with `u > 0`; every `y` inside the window must be
/// positive. The reported window is the span of the points actually used.
pub fn fit_exponent<T: Real>(points: &[(T, T)], window: Option<(T, T)>) -> Result<FitResult<T>, FitError> {
    let positive_u = points.iter().filter(|p| p.0 > T::zero());
    let u_max = positive_u.clone().map(|p| p.0).fold(T::neg_infinity(), T::max);
    let u_min = positive_u.map(|p| p.0).fold(T::infinity(), T::min);
    if !u_max.is_finite() {
        return Err(FitError::TooFewPoints { got: 0, need: MIN_FIT_POINTS });
    }
    let (lo, hi) = match window {
        Some((lo, hi)) => {
            if !(lo > T::zero() && hi > lo && hi.is_finite()) {
                return Err(FitError::InvalidWindow(lo.as_f64(), hi.as_f64()));
            }
            (lo, hi)
        }
        None => ((u_max * T::lit(0.1)).max(u_min), u_max),
    };

    let mut sel: Vec<(T, T)> = points.iter().copied().filter(|&(u, _)| u > T::zero() && u >= lo && u <= hi).collect();
    sel.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    if let Some(&(u, y)) = sel.iter().find(|p| !(p.1 > T::zero()) || !p.1.is_finite()) {
        return Err(FitError::NonPositive { u: u.as_f64(), y: y.as_f64() });
    }
    if sel.len() < MIN_FIT_POINTS {
        return Err(FitError::TooFewPoints { got: sel.len(), need: MIN_FIT_POINTS });
    }

    let x: Vec<T> = sel.iter().map(|p| p.0.ln()).collect();
    let y: Vec<T> = sel.iter().map(|p| p.1.ln()).collect();
    let (exponent, _, stderr) = least_squares(&x, &y);
    let plateau_quality = plateau(&x, &y, exponent);
    let mut fit = FitResult {
        exponent,
        stderr,
        window: (sel[0].0, sel[sel.len() - 1].0),
        points: sel.len(),
        plateau_quality,
        claim: None,
        target: None,
        tolerance: None,
        verdict: None,
    };
    if !fit.is_power_law() {
        fit.verdict = Some(Verdict::Inconclusive);
    }
    Ok(fit)
}

/// How the tolerance of a comparison is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Tolerance<T> {
    /// `c_tol √|ε| + 2 stderr` for bounds; the fixed sharp tolerances for sharp claims.
    Theorem { c_tol: T },
    /// A fixed tolerance regardless of claim or `ε`.
    Fixed(T),
}

impl<T: Real> Default for Tolerance<T> {
    fn default() -> Self {
        Tolerance::Theorem { c_tol: T::lit(DEFAULT_C_TOL) }
    }
}

/// Judges `fit` against `claim` at `ε` with the default tolerance.
pub fn compare_to_theorem<T: Real>(fit: &FitResult<T>, claim: Claim, epsilon: T) -> FitResult<T> {
    compare_with(fit, claim, epsilon, Tolerance::default())
}

pub fn compare_with<T: Real>(fit: &FitResult<T>, claim: Claim, epsilon: T, tolerance: Tolerance<T>) -> FitResult<T> {
    let target = claim.target(epsilon);
    let tol = match tolerance {
        Tolerance::Fixed(t) => t,
        Tolerance::Theorem { .. } if claim == Claim::Sharp => T::lit(SHARP_POINTWISE_TOLERANCE),
        Tolerance::Theorem { .. } if claim == Claim::SharpRadiation => T::lit(SHARP_RADIATION_TOLERANCE),
        Tolerance::Theorem { c_tol } => c_tol * epsilon.abs().sqrt() + T::lit(STDERR_BUDGET) * fit.stderr,
    };
    let verdict = if !fit.is_power_law() {
        Verdict::Inconclusive
    } else if claim.is_sharp() {
        if (fit.exponent - target).abs() <= tol {
            Verdict::SaturatesSharp
        } else {
            Verdict::Fails
        }
    } else if fit.exponent <= target + tol {
        Verdict::MeetsBound
    } else {
        Verdict::Fails
    };
    FitResult { claim: Some(claim), target: Some(target), tolerance: Some(tol), verdict: Some(verdict), ..fit.clone() }
}

/// Running supremum of `|y|` from the right: `M(u) = max_{u' ≥ u} |y(u')|`.
///
/// For oscillating or sign-changing series this is the quantity an upper
/// bound `|y| ≲ u^a` constrains. Points must be sorted by `u`.
pub fn upper_envelope<T: Real>(points: &[(T, T)]) -> Vec<(T, T)> {
    let mut out: Vec<(T, T)> = points.iter().map(|&(u, y)| (u, y.abs())).collect();
    let mut m = T::zero();
    for p in out.iter_mut().rev() {
        m = m.max(p.1);
        p.1 = m;
    }
    out
}

/// A time series that can be extracted from an [`EnergySeries`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Quantity<T> {
    /// `E[φ](u)`
    Energy,
    /// `E_p[ψ](u)` for a recorded `p`.
    WeightedEnergy(T),
    /// `E[Tφ](u)`
    TEnergy,
    /// `|φ|(u, v_R(u))`
    PointwiseAtR,
    /// `|ψ|(u, v_max)`
    RadiationField,
    /// `|ψ_I|(u)` extrapolated in `1/r`.
    RadiationExtrapolated,
}

impl<T: Real> Quantity<T> {
    pub fn label(&self) -> String {
        match self {
            Quantity::Energy => "E".into(),
            Quantity::WeightedEnergy(p) => format!("E_p{p}"),
            Quantity::TEnergy => "E_T".into(),
            Quantity::PointwiseAtR => "phi_at_R".into(),
            Quantity::RadiationField => "psi_vmax".into(),
            Quantity::RadiationExtrapolated => "psi_scri".into(),
        }
    }
}

/// `(u, value)` for `quantity`, dropping energy records whose estimated
/// `v > v_max` tail exceeds `tail_share` of the value.
pub fn series_points<T: Real>(
    series: &EnergySeries<T>,
    quantity: Quantity<T>,
    tail_share: T,
) -> Result<Vec<(T, T)>, FitError> {
    let gated = |value: T, tail: T| tail <= tail_share * value;
    let out = match quantity {
        Quantity::Energy => series.records.iter().filter(|r| gated(r.e, r.tail.e)).map(|r| (r.u, r.e)).collect(),
        Quantity::WeightedEnergy(p) => {
            let k = series.p_index(p).ok_or_else(|| FitError::MissingQuantity(format!("E_p with p = {p}")))?;
            series
                .records
                .iter()
                .filter(|r| gated(r.ep[k], r.tail.ep[k]))
                .map(|r| (r.u, r.ep[k]))
                .collect()
        }
        Quantity::TEnergy => {
            if series.records.iter().any(|r| r.e_t.is_none()) {
                return Err(FitError::MissingQuantity("E[T phi]".into()));
            }
            series
                .records
                .iter()
                .filter_map(|r| Some((r.u, r.e_t?, r.tail.e_t?)))
                .filter(|&(_, e, t)| gated(e, t))
                .map(|(u, e, _)| (u, e))
                .collect()
        }
        Quantity::PointwiseAtR => series.pointwise.iter().map(|s| (s.u, s.phi_at_r.abs())).collect(),
        Quantity::RadiationField => series.pointwise.iter().map(|s| (s.u, s.psi_vmax.abs())).collect(),
        Quantity::RadiationExtrapolated => series.pointwise.iter().map(|s| (s.u, s.psi_extrapolated.abs())).collect(),
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|k| {
                let u = lo * (hi / lo).powf(k as f64 / (n - 1) as f64);
                (u, f(u))
            })
            .collect()
    }

    #[test]
    fn pure_power_law_is_exact() {
        let pts = sample(|u| u.powi(-3), 10.0, 1000.0, 60);
        let fit = fit_exponent(&pts, None).unwrap();
        assert!((fit.exponent + 3.0).abs() < 1e-12, "{}", fit.exponent);
        assert!(fit.stderr < 1e-12 && fit.plateau_quality < 1e-10);
        assert!(fit.window.0 >= 100.0 && fit.window.0 < 110.0 && fit.window.1 == 1000.0);
        assert_eq!(fit.verdict, None);
    }

    #[test]
    fn log_oscillation_is_within_a_tenth() {
        let f = |u: f64| u.powi(-3) * (1.0 + 0.1 * u.ln().sin());
        let fit = fit_exponent(&sample(f, 1.0, 1e4, 400), Some((1.0, 1e4))).unwrap();
        assert!((fit.exponent + 3.0).abs() < 0.1, "{}", fit.exponent);
        // Local log-derivative is -3 + 0.1 cos(log u) / (1 + 0.1 sin(log u)).
        assert!(fit.plateau_quality > 0.02 && fit.plateau_quality < 0.15, "{}", fit.plateau_quality);
        assert!(fit.is_power_law());
    }

    #[test]
    fn exponential_is_inconclusive() {
        let fit = fit_exponent(&sample(|u| (-u).exp(), 1.0, 50.0, 100), None).unwrap();
        assert_eq!(fit.verdict, Some(Verdict::Inconclusive));
        let judged = compare_to_theorem(&fit, Claim::Energy, 0.05);
        assert_eq!(judged.verdict, Some(Verdict::Inconclusive));
    }

    #[test]
    fn rejects_bad_input() {
        let pts = sample(|u| u.powi(-2), 1.0, 10.0, 7);
        assert!(matches!(fit_exponent(&pts, None), Err(FitError::TooFewPoints { .. })));
        let mut pts = sample(|u| u.powi(-2), 1.0, 10.0, 20);
        pts[15].1 = 0.0;
        assert!(matches!(fit_exponent(&pts, Some((1.0, 10.0))), Err(FitError::NonPositive { .. })));
        assert!(fit_exponent(&pts, Some((1.0, 5.0))).is_ok());
        assert!(matches!(fit_exponent(&pts, Some((5.0, 1.0))), Err(FitError::InvalidWindow(..))));
    }

    fn fit_with(exponent: f64, stderr: f64) -> FitResult<f64> {
        FitResult {
            exponent,
            stderr,
            window: (100.0, 1000.0),
            points: 50,
            plateau_quality: 0.01,
            claim: None,
            target: None,
            tolerance: None,
            verdict: None,
        }
    }

    #[test]
    fn theorem_comparisons() {
        let v = |e: f64, c: Claim, eps: f64| compare_to_theorem(&fit_with(e, 0.0), c, eps).verdict.unwrap();
        assert_eq!(v(-3.05, Claim::Energy, 0.05), Verdict::MeetsBound);
        assert_eq!(v(-2.0, Claim::Energy, 0.01), Verdict::Fails);
        assert_eq!(v(-2.34, Claim::Sharp, 0.2), Verdict::SaturatesSharp);
        assert_eq!(v(-2.0, Claim::Sharp, 0.2), Verdict::Fails);
        assert_eq!(v(-2.6, Claim::Sharp, 0.2), Verdict::Fails);
        assert_eq!(v(-1.17, Claim::SharpRadiation, 0.2), Verdict::SaturatesSharp);
        assert_eq!(v(-4.9, Claim::TEnergy, 0.05), Verdict::MeetsBound);
        let j = compare_to_theorem(&fit_with(-2.9, 0.1), Claim::Energy, 0.0);
        assert_eq!(j.verdict, Some(Verdict::MeetsBound));
        assert!((j.tolerance.unwrap() - 0.2).abs() < 1e-15);
        let fixed = compare_with(&fit_with(-2.75, 0.0), Claim::Energy, 0.05, Tolerance::Fixed(0.3));
        assert_eq!(fixed.verdict, Some(Verdict::MeetsBound));
    }

    #[test]
    fn sharp_targets_follow_beta() {
        assert!((Claim::Sharp.target(0.2f64) + 2.341640786499874).abs() < 1e-12);
        assert!((Claim::SharpRadiation.target(0.05f64) + 1.0477225575051661).abs() < 1e-12);
        assert_eq!(Claim::Sharp.target(0.0f64), -2.0);
    }

    #[test]
    fn claims_parse() {
        for c in Claim::ALL {
            assert_eq!(c.label().parse::<Claim>().unwrap(), c);
        }
        assert_eq!("t-energy".parse::<Claim>().unwrap(), Claim::TEnergy);
        assert!(matches!("decay".parse::<Claim>(), Err(FitError::UnknownClaim(_))));
    }

    #[test]
    fn envelope_of_sign_changing_series() {
        let pts: Vec<(f64, f64)> = (1..=6).map(|k| (k as f64, [3.0, -1.0, 2.0, 0.5, -0.7, 0.1][k - 1])).collect();
        let env: Vec<f64> = upper_envelope(&pts).iter().map(|p| p.1).collect();
        assert_eq!(env, vec![3.0, 2.0, 2.0, 0.7, 0.7, 0.1]);
        let decay = sample(|u| u.powi(-2), 1.0, 100.0, 30);
        assert_eq!(upper_envelope(&decay), decay);
    }

    #[test]
    fn theorem_rates() {
        let r = TheoremRates::new(0.04f64, 1.0);
        assert!((r.p_low - 1.8).abs() < 1e-15 && (r.p_high - 2.8).abs() < 1e-15 && (r.eta - 0.2).abs() < 1e-15);
    }
}
