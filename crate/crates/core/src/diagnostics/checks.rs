//! Hardy, integrated-decay, boundedness and pointwise-from-energy checks.

use super::series::inner_end;
use super::{angular, energy_record, row_of, sq, EnergySeries, InequalityReport, NodeGeometry, SeriesOptions};
use crate::background::Background;
use crate::error::DiagnosticsError;
use crate::evolve::ModeField;
use crate::potential::PotentialSet;
use crate::scalar::Real;

/// Default calibration constant for the outgoing Hardy inequality.
pub const HARDY_OUTGOING_CONSTANT: f64 = 4.0;
/// Default calibration constant for the ingoing Hardy inequality.
pub const HARDY_INGOING_CONSTANT: f64 = 4.0;
/// Default ceiling for the integrated-decay ratio.
pub const ILED_CEILING: f64 = 100.0;
/// Default ceiling for energy growth ratios.
pub const BOUNDEDNESS_CEILING: f64 = 2.0;
/// Default ceiling for the pointwise-from-energy ratio.
pub const POINTWISE_CEILING: f64 = 10.0;
/// Largest share of the outgoing Hardy left side that the boundary term at
/// `v_max` may reach before the check is inconclusive.
pub const HARDY_PREMISE_SHARE: f64 = 0.25;

fn check_window<T: Real>(field: &ModeField<T>, u1: T, u2: T) -> Result<(usize, usize), DiagnosticsError> {
    let i1 = row_of(&field.grid, u1)?;
    let i2 = row_of(&field.grid, u2)?;
    if i2 <= i1 {
        return Err(DiagnosticsError::InvalidInput(format!("need u1 < u2, got {u1} and {u2}")));
    }
    Ok((i1, i2))
}

fn check_q<T: Real>(q: T) -> Result<(), DiagnosticsError> {
    if q < T::lit(2.0) && q.is_finite() {
        Ok(())
    } else {
        Err(DiagnosticsError::InvalidInput(format!("q = {q} must be below 2")))
    }
}

/// Trapezoid in `u` of per-row values on rows `i1..=i2`.
fn rows_trapezoid<T: Real>(vals: &[T], h: T) -> T {
    super::trapezoid(vals, h)
}

/// Weight of column `j` in the trapezoid over `jr..n`.
#[inline]
fn col_weight<T: Real>(j: usize, jr: usize, n: usize, h: T) -> T {
    if j == jr || j + 1 == n {
        h * T::lit(0.5)
    } else {
        h
    }
}

/// `∬ r^{q-3} f² ≤ C (|2-q|⁻² ∬ r^{q-1} |∂_v f|² + R^{q-2} |2-q|⁻¹ ∫ f²(u, v_R(u)) du)`
/// over `D_R(u1, u2) = {u1 ≤ u ≤ u2, v_R(u) ≤ v ≤ v_max}`.
///
/// `f` is the field's values. The report is inconclusive when the boundary
/// term `r^{q-2} f²` at `v_max` is not small against the left side.
pub fn hardy_check_outgoing<T: Real>(
    field: &ModeField<T>,
    bg: &dyn Background<T>,
    u1: T,
    u2: T,
    q: T,
    constant: T,
) -> Result<InequalityReport<T>, DiagnosticsError> {
    check_q(q)?;
    let (i1, i2) = check_window(field, u1, u2)?;
    let geo = NodeGeometry::new(bg, field.grid);
    let h = field.grid.h;
    let n = field.cols();
    let (mut a, mut b, mut c, mut d) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let three = T::lit(3.0);
    for i in i1..=i2 {
        let jr = field.grid.interface_column(i);
        let (mut sa, mut sb) = (T::zero(), T::zero());
        for j in jr..n {
            let r = geo.get(i, j).r;
            let f = field.psi(i, j);
            let w = col_weight(j, jr, n, h);
            sa = sa + w * r.powf(q - three) * f * f;
            sb = sb + w * r.powf(q - T::one()) * sq(field.dpsi_dv(i, j));
        }
        a.push(sa);
        b.push(sb);
        c.push(sq(field.psi(i, jr)));
        d.push(geo.get(i, n - 1).r.powf(q - T::lit(2.0)) * sq(field.psi(i, n - 1)));
    }
    let two_q = T::lit(2.0) - q;
    let big_r = geo.get(i1, field.grid.interface_column(i1)).r;
    let lhs = rows_trapezoid(&a, h);
    let rhs = rows_trapezoid(&b, h) / (two_q * two_q) + big_r.powf(q - T::lit(2.0)) * rows_trapezoid(&c, h) / two_q;
    let far = rows_trapezoid(&d, h) / two_q;
    let mut rep = InequalityReport::new("hardy-outgoing", lhs, rhs, constant);
    rep.inconclusive = far > T::lit(HARDY_PREMISE_SHARE) * lhs && far > T::zero();
    rep.note = format!("q = {q}, boundary term at v_max = {far}");
    Ok(rep)
}

/// The ingoing-derivative Hardy inequality for a solution:
///
/// ```text
/// ∬ r^{q-3} |∂_uψ|² ≤ C [ ε² (2-q)⁻¹ ∬ (r^{q-3} |∂_vψ|² + r^{q-5} ℓ(ℓ+1) ψ²)
///     + (2-q)⁻¹ ( ∫_{C_{u1}} r^{q-4} ℓ(ℓ+1) ψ²
///     + R^{q-4} ∫ (R² |∂_uψ|² + ψ² + ℓ(ℓ+1) ψ²)(u, v_R(u)) du ) ]
/// ```
pub fn hardy_check_ingoing<T: Real>(
    field: &ModeField<T>,
    ps: &PotentialSet<T>,
    bg: &dyn Background<T>,
    u1: T,
    u2: T,
    q: T,
    constant: T,
) -> Result<InequalityReport<T>, DiagnosticsError> {
    if !field.is_solution() {
        return Err(DiagnosticsError::Unsupported(
            "the ingoing Hardy inequality holds only for evolved solutions".into(),
        ));
    }
    check_q(q)?;
    let (i1, i2) = check_window(field, u1, u2)?;
    let geo = NodeGeometry::new(bg, field.grid);
    let h = field.grid.h;
    let n = field.cols();
    let lf = angular::<T>(field.ell);
    let (mut a, mut bulk, mut bdry) = (Vec::new(), Vec::new(), Vec::new());
    let big_r = geo.get(i1, field.grid.interface_column(i1)).r;
    let mut cone = T::zero();
    for i in i1..=i2 {
        let jr = field.grid.interface_column(i);
        let (mut sa, mut sb, mut sc) = (T::zero(), T::zero(), T::zero());
        for j in jr..n {
            let r = geo.get(i, j).r;
            let w = col_weight(j, jr, n, h);
            let psi = field.psi(i, j);
            let rq3 = r.powf(q - T::lit(3.0));
            sa = sa + w * rq3 * sq(field.dpsi_du(i, j));
            sb = sb + w * (rq3 * sq(field.dpsi_dv(i, j)) + rq3 / (r * r) * lf * psi * psi);
            if i == i1 {
                sc = sc + w * rq3 / r * lf * psi * psi;
            }
        }
        if i == i1 {
            cone = sc;
        }
        a.push(sa);
        bulk.push(sb);
        let psi = field.psi(i, jr);
        bdry.push(big_r * big_r * sq(field.dpsi_du(i, jr)) + (T::one() + lf) * psi * psi);
    }
    let two_q = T::lit(2.0) - q;
    let eps2 = ps.epsilon * ps.epsilon;
    let lhs = rows_trapezoid(&a, h);
    let rhs = eps2 / two_q * rows_trapezoid(&bulk, h)
        + (cone + big_r.powf(q - T::lit(4.0)) * rows_trapezoid(&bdry, h)) / two_q;
    let mut rep = InequalityReport::new("hardy-ingoing", lhs, rhs, constant);
    rep.note = format!("q = {q}, epsilon = {}", ps.epsilon);
    Ok(rep)
}

/// Integrated local decay: for each `u1`, the bulk integral of
/// `(|φ|² + r²|∂_uφ|² + r²|∂_vφ|²)/(1+r)^σ` over `{u ≥ u1, v ≥ v_R(u1), v - u ≥ ρ_in}`
/// against `E(u1)`.
///
/// The empirical constant `C_σ` is the largest ratio over the sweep; the check
/// passes when it is finite and at most `ceiling`. Samples with `E(u1) = 0` are
/// skipped (reported as a `0/0` note when all are).
pub fn iled_check<T: Real>(
    field: &ModeField<T>,
    bg: &dyn Background<T>,
    u1s: &[T],
    sigma: T,
    ceiling: T,
) -> Result<InequalityReport<T>, DiagnosticsError> {
    if !(sigma > T::one()) {
        return Err(DiagnosticsError::InvalidInput(format!("sigma = {sigma} must exceed 1")));
    }
    let geo = NodeGeometry::new(bg, field.grid);
    let rho_in = inner_end(bg, &field.grid, None)?;
    let grid = field.grid;
    let h = grid.h;
    let n = field.cols();
    let lay = &field.layout;
    let mut best: Option<(T, T, T)> = None;
    let mut samples = Vec::new();
    let opts = SeriesOptions { p_values: Vec::new(), ..SeriesOptions::default() };
    for &u1 in u1s {
        let i1 = row_of(&grid, u1)?;
        let e = energy_record(field, bg, u1, opts.clone())?.e;
        let j1 = grid.interface_column(i1);
        let mut bulk = T::zero();
        for i in i1..field.rows() {
            let u = grid.u(i);
            for j in j1.max(lay.first_valid[i])..n {
                if grid.v(j) - u < rho_in - h * T::lit(1e-6) {
                    continue;
                }
                let g = geo.get(i, j);
                let psi = field.psi(i, j);
                let f = if lay.axis[i] && j == lay.first_valid[i] {
                    if j + 1 < n {
                        sq(field.psi(i, j + 1) / geo.get(i, j + 1).r)
                    } else {
                        T::zero()
                    }
                } else {
                    let ir = g.r.recip();
                    sq(psi * ir)
                        + sq(field.dpsi_du(i, j) - psi * g.dr_du * ir)
                        + sq(field.dpsi_dv(i, j) - psi * g.dr_dv * ir)
                };
                bulk = bulk + f / (T::one() + g.r).powf(sigma);
            }
        }
        bulk = bulk * h * h;
        if e > T::zero() {
            let ratio = bulk / e;
            samples.push((u1, ratio));
            if best.map_or(true, |(_, _, r)| ratio > r) {
                best = Some((bulk, e, ratio));
            }
        }
    }
    let (lhs, rhs) = best.map_or((T::zero(), T::zero()), |(b, e, _)| (b, e));
    let mut rep = InequalityReport::new("iled", lhs, rhs, ceiling);
    rep.pass = rep.pass && samples.iter().all(|s| s.1.is_finite());
    rep.note = match ratio_spread(&samples) {
        Some(s) => format!("sigma = {sigma}, C_sigma = {}, spread max/min = {s}", rep.ratio()),
        None => format!("sigma = {sigma}, 0/0: E(u1) vanishes on every sample"),
    };
    rep.samples = samples;
    Ok(rep)
}

/// Largest over smallest ratio in a sweep.
pub fn ratio_spread<T: Real>(samples: &[(T, T)]) -> Option<T> {
    let lo = samples.iter().map(|s| s.1).fold(T::infinity(), T::min);
    let hi = samples.iter().map(|s| s.1).fold(T::zero(), T::max);
    (!samples.is_empty() && lo > T::zero()).then(|| hi / lo)
}

/// `sup_{u1 < u2} num(u2) / den(u1)` over records, skipping zero denominators.
fn growth<T: Real>(u: &[T], num: &[T], den: &[T]) -> (T, T, T, Vec<(T, T)>) {
    let mut best = (T::zero(), T::zero(), T::zero());
    let mut samples = Vec::new();
    let mut min_den: Option<T> = None;
    for k in 0..u.len() {
        if let Some(d) = min_den {
            let ratio = num[k] / d;
            samples.push((u[k], ratio));
            if ratio > best.2 || !ratio.is_finite() {
                best = (num[k], d, ratio);
            }
        }
        if den[k] > T::zero() {
            min_den = Some(min_den.map_or(den[k], |m: T| m.min(den[k])));
        }
    }
    (best.0, best.1, best.2, samples)
}

/// Energy boundedness: the empirical `D = sup_{u1<u2} E(u2)/E(u1)`.
pub fn energy_boundedness_check<T: Real>(series: &EnergySeries<T>, ceiling: T) -> Result<InequalityReport<T>, DiagnosticsError> {
    if series.records.len() < 2 {
        return Err(DiagnosticsError::InvalidInput("need at least 2 records".into()));
    }
    let u: Vec<T> = series.records.iter().map(|r| r.u).collect();
    let e: Vec<T> = series.records.iter().map(|r| r.e).collect();
    let (num, den, d, samples) = growth(&u, &e, &e);
    let mut rep = InequalityReport::new("boundedness", num, den, ceiling);
    rep.pass = d.is_finite() && d <= ceiling;
    rep.note = format!("D = {d}");
    rep.samples = samples;
    Ok(rep)
}

/// T-commuted boundedness ratio `E[Tφ](u2) / (E[Tφ](u1) + u1⁻² E[φ](u1))`
/// (records with `u1 ≤ 0` are not used as denominators).
pub fn t_boundedness_check<T: Real>(series: &EnergySeries<T>, ceiling: T) -> Result<InequalityReport<T>, DiagnosticsError> {
    let recs: Vec<_> = series.records.iter().filter(|r| r.e_t.is_some()).collect();
    if recs.len() < 2 {
        return Err(DiagnosticsError::InvalidInput("need at least 2 records with E[Tφ]".into()));
    }
    let u: Vec<T> = recs.iter().map(|r| r.u).collect();
    let num: Vec<T> = recs.iter().map(|r| r.e_t.unwrap_or_else(T::zero)).collect();
    let den: Vec<T> = recs
        .iter()
        .map(|r| if r.u > T::zero() { r.e_t.unwrap_or_else(T::zero) + r.e / (r.u * r.u) } else { T::zero() })
        .collect();
    let (a, b, d, samples) = growth(&u, &num, &den);
    let mut rep = InequalityReport::new("boundedness-T", a, b, ceiling);
    rep.pass = d.is_finite() && d <= ceiling;
    rep.note = format!("D' = {d}");
    rep.samples = samples;
    Ok(rep)
}

/// `sup_v r^{1/2+γ}|φ|(u, v) ≤ C (Ẽ_{2γ}(u))^{1/2}` on every record.
///
/// Needs `γ` among the series' gammas and `2γ` among its `p` values.
pub fn pointwise_from_energy_check<T: Real>(
    series: &EnergySeries<T>,
    gamma: T,
    ceiling: T,
) -> Result<InequalityReport<T>, DiagnosticsError> {
    let kg = series
        .gamma_index(gamma)
        .ok_or_else(|| DiagnosticsError::InvalidInput(format!("gamma = {gamma} was not recorded")))?;
    let kp = series
        .p_index(gamma + gamma)
        .ok_or_else(|| DiagnosticsError::InvalidInput(format!("p = 2 gamma = {} was not recorded", gamma + gamma)))?;
    let mut best = (T::zero(), T::zero(), T::zero());
    let mut samples = Vec::new();
    for r in &series.records {
        let num = r.weighted_sup[kg];
        let den = r.ep_tilde[kp].sqrt();
        let ratio = if num == T::zero() { T::zero() } else { num / den };
        samples.push((r.u, ratio));
        if ratio > best.2 || !ratio.is_finite() {
            best = (num, den, ratio);
        }
    }
    let mut rep = InequalityReport::new("pointwise-from-energy", best.0, best.1, ceiling);
    rep.note = format!("gamma = {gamma}, sup ratio = {}", best.2);
    rep.samples = samples;
    Ok(rep)
}
