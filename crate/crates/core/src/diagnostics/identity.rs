//! Residuals of the `r^p ∂_v` multiplier identities.
//!
//! Per mode, with `L = ℓ(ℓ+1)` and `F = ∂_u∂_vψ + (Ω²/4) L ψ / r²` taken from
//! the equation's coefficients,
//!
//! ```text
//! (rp1)  ∂_u(r^p (∂_vψ)²/2) + ∂_v(L Ω² r^{p-2} ψ²/8) + (p/2)(-∂_u r) r^{p-1} (∂_vψ)²
//!        + (L/8) Ω² ((2-p) ∂_v r - r ∂_v log Ω²) r^{p-3} ψ² = r^p ∂_vψ F
//! ```
//!
//! and with `Ψ₁ = Ω⁻² r² ∂_vψ`, `X = ∂_vΨ₁`, `κ = 2 ∂_u r / r - ∂_u log Ω²`,
//! `G = r² F / Ω²`,
//!
//! ```text
//! (rp2)  ∂_u(r^p X²/2) + ((-∂_u r)(2 + p/2) r^{p-1} + r^p ∂_u log Ω²) X²
//!        + ∂_v(L Ω² r^{p-2} Ψ₁²/8) + (L/8) Ω² ((2-p) ∂_v r - r ∂_v log Ω²) r^{p-3} Ψ₁²
//!        - ∂_v(∂_vκ r^p Ψ₁²/2) + ∂_v(∂_vκ r^p) Ψ₁²/2 = r^p X ∂_v G.
//! ```
//!
//! Each term is evaluated at cell centers from the four corners and summed
//! over the cells of `D_R(u1, u2)`.

use serde::Serialize;

use super::{angular, check_exponent, row_of, NodeGeometry};
use crate::background::Background;
use crate::error::DiagnosticsError;
use crate::evolve::{cell_coefficients, dv_in_row, ModeField};
use crate::potential::PotentialSet;
use crate::scalar::Real;

/// Which multiplier identity to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Identity {
    Rp1,
    Rp2,
}

/// Integrated identity: every term over the region and the mismatch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityResidual<T> {
    pub identity: Identity,
    pub p: T,
    /// `(name, region integral)` for each term; the last is the source pairing.
    pub terms: Vec<(String, T)>,
    /// `|Σ left-hand terms - source pairing|`.
    pub residual: T,
    /// `residual / max |term|`.
    pub relative: T,
}

/// Per-node values entering the identities on one row.
struct NodeRow<T> {
    /// Flux differentiated in `u`.
    flux_u: Vec<T>,
    /// Flux differentiated in `v`.
    flux_v: Vec<T>,
    bulk: Vec<T>,
    source: Vec<T>,
}

/// `∂_vκ` by central differences of the background.
fn kappa_v<T: Real>(bg: &dyn Background<T>, u: T, v: T, d: T) -> T {
    let kappa = |v: T| {
        let g = bg.geometry(u, v);
        T::lit(2.0) * g.dr_du / g.r - g.domega2_du / g.omega2
    };
    (kappa(v + d) - kappa(v - d)) / (d + d)
}

struct Builder<'a, T: Real> {
    field: &'a ModeField<T>,
    ps: &'a PotentialSet<T>,
    bg: &'a dyn Background<T>,
    geo: NodeGeometry<'a, T>,
    p: T,
    lf: T,
}

impl<'a, T: Real> Builder<'a, T> {
    fn coefficients(&self, i: usize, j: usize) -> (T, T, T) {
        let g = self.geo.get(i, j);
        let (u, v) = (self.field.grid.u(i), self.field.grid.v(j));
        let k = cell_coefficients(self.ps, &g, u, v, self.field.ell);
        (k.a + g.omega2 * T::lit(0.25) * self.lf / (g.r * g.r), k.b, k.c)
    }

    /// Node values on row `i` for columns `j0..n` (entries below `j0` unused).
    fn rp1_row(&self, i: usize, j0: usize) -> NodeRow<T> {
        let f = self.field;
        let n = f.cols();
        let (p, lf) = (self.p, self.lf);
        let half = T::lit(0.5);
        let mut row = NodeRow {
            flux_u: vec![T::zero(); n],
            flux_v: vec![T::zero(); n],
            bulk: vec![T::zero(); n],
            source: vec![T::zero(); n],
        };
        for j in j0..n {
            let g = self.geo.get(i, j);
            let r = g.r;
            let rp = r.powf(p);
            let psi = f.psi(i, j);
            let dv = f.dpsi_dv(i, j);
            let du = f.dpsi_du(i, j);
            let (a, b, c) = self.coefficients(i, j);
            let src = a * psi + b * du + c * dv;
            row.flux_u[j] = rp * dv * dv * half;
            row.flux_v[j] = lf * g.omega2 * rp / (r * r) * psi * psi / T::lit(8.0);
            row.bulk[j] = p * half * (-g.dr_du) * rp / r * dv * dv
                + lf / T::lit(8.0)
                    * g.omega2
                    * ((T::lit(2.0) - p) * g.dr_dv - r * g.domega2_dv / g.omega2)
                    * rp
                    / (r * r * r)
                    * psi
                    * psi;
            row.source[j] = rp * dv * src;
        }
        row
    }

    fn rp2_row(&self, i: usize, j0: usize) -> NodeRow<T> {
        let f = self.field;
        let n = f.cols();
        let h = f.grid.h;
        let (p, lf) = (self.p, self.lf);
        let half = T::lit(0.5);
        let lo = j0 - 1;
        let mut psi1 = vec![T::zero(); n];
        let mut gsrc = vec![T::zero(); n];
        for j in lo..n {
            let g = self.geo.get(i, j);
            let dv = f.dpsi_dv(i, j);
            let (a, b, c) = self.coefficients(i, j);
            let src = a * f.psi(i, j) + b * f.dpsi_du(i, j) + c * dv;
            psi1[j] = g.r * g.r / g.omega2 * dv;
            gsrc[j] = g.r * g.r / g.omega2 * src;
        }
        let mut row = NodeRow {
            flux_u: vec![T::zero(); n],
            flux_v: vec![T::zero(); n],
            bulk: vec![T::zero(); n],
            source: vec![T::zero(); n],
        };
        let u = f.grid.u(i);
        for j in j0..n {
            let g = self.geo.get(i, j);
            let r = g.r;
            let v = f.grid.v(j);
            let rp = r.powf(p);
            let x = dv_in_row(&psi1, lo, j, h);
            let dg = dv_in_row(&gsrc, lo, j, h);
            let y = psi1[j];
            let d = T::lit(1e-3) * T::one().max(r);
            let kv = kappa_v(self.bg, u, v, d);
            let kv_rp = |v: T| kappa_v(self.bg, u, v, d) * self.bg.r(u, v).powf(p);
            let dkv_rp = (kv_rp(v + d) - kv_rp(v - d)) / (d + d);
            row.flux_u[j] = rp * x * x * half;
            row.flux_v[j] = lf * g.omega2 * rp / (r * r) * y * y / T::lit(8.0) - kv * rp * y * y * half;
            row.bulk[j] = ((-g.dr_du) * (T::lit(2.0) + p * half) * rp / r + rp * g.domega2_du / g.omega2) * x * x
                + lf / T::lit(8.0)
                    * g.omega2
                    * ((T::lit(2.0) - p) * g.dr_dv - r * g.domega2_dv / g.omega2)
                    * rp
                    / (r * r * r)
                    * y
                    * y
                + dkv_rp * y * y * half;
            row.source[j] = rp * x * dg;
        }
        row
    }
}

/// Integrates the chosen identity over the cells of `D_R(u1, u2)` that lie
/// between `v_R(u)` and the last column but one.
pub fn multiplier_identity_residual<T: Real>(
    field: &ModeField<T>,
    bg: &dyn Background<T>,
    ps: &PotentialSet<T>,
    u1: T,
    u2: T,
    p: T,
    which: Identity,
) -> Result<IdentityResidual<T>, DiagnosticsError> {
    check_exponent(p, "p")?;
    let grid = field.grid;
    let i1 = row_of(&grid, u1)?;
    let i2 = row_of(&grid, u2)?;
    if i2 <= i1 {
        return Err(DiagnosticsError::InvalidInput(format!("need u1 < u2, got {u1} and {u2}")));
    }
    let n = field.cols();
    let b = Builder { field, ps, bg, geo: NodeGeometry::new(bg, grid), p, lf: angular(field.ell) };
    let node_row = |i: usize| {
        let j0 = grid.interface_column(i).max(field.layout.first_valid[i] + 1);
        match which {
            Identity::Rp1 => b.rp1_row(i, j0),
            Identity::Rp2 => b.rp2_row(i, j0),
        }
    };
    let h = grid.h;
    let quarter = T::lit(0.25);
    let (mut t_u, mut t_v, mut t_bulk, mut t_src) = (T::zero(), T::zero(), T::zero(), T::zero());
    let mut lower = node_row(i1);
    for i in i1..i2 {
        let upper = node_row(i + 1);
        // Cells with south corner (i, j): the west corner (i+1, j) must have r ≥ R.
        let j_start = grid.interface_column(i + 1);
        for j in j_start..n - 2 {
            let (s, e) = (j, j + 1);
            // ∂_u at the center: ((W + N) - (S + E)) / 2h, times the cell area h².
            t_u = t_u + (upper.flux_u[s] + upper.flux_u[e] - lower.flux_u[s] - lower.flux_u[e]) * h * T::lit(0.5);
            t_v = t_v + (lower.flux_v[e] + upper.flux_v[e] - lower.flux_v[s] - upper.flux_v[s]) * h * T::lit(0.5);
            t_bulk = t_bulk + (lower.bulk[s] + lower.bulk[e] + upper.bulk[s] + upper.bulk[e]) * quarter * h * h;
            t_src = t_src + (lower.source[s] + lower.source[e] + upper.source[s] + upper.source[e]) * quarter * h * h;
        }
        lower = upper;
    }
    let residual = (t_u + t_v + t_bulk - t_src).abs();
    let scale = [t_u, t_v, t_bulk, t_src].iter().fold(T::zero(), |m, x| m.max(x.abs()));
    let relative = if scale > T::zero() { residual / scale } else { T::zero() };
    Ok(IdentityResidual {
        identity: which,
        p,
        terms: vec![
            ("du-flux".to_string(), t_u),
            ("dv-flux".to_string(), t_v),
            ("bulk".to_string(), t_bulk),
            ("source".to_string(), t_src),
        ],
        residual,
        relative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::minkowski;
    use crate::evolve::{evolve_mode, InitialData, NullGrid};

    #[test]
    fn zero_field_has_zero_residual() {
        let bg = minkowski();
        let grid = NullGrid::new(0.0, 10.0, 0.0, 30.0, 0.1, 4.0).unwrap();
        let f = ModeField::from_fn(1, grid, &bg, |_, _| 0.0).unwrap();
        let ps = PotentialSet::inverse_square(0.05);
        for which in [Identity::Rp1, Identity::Rp2] {
            let r = multiplier_identity_residual(&f, &bg, &ps, 1.0, 5.0, 1.0, which).unwrap();
            assert_eq!((r.residual, r.relative), (0.0, 0.0));
        }
    }

    fn residual_at(h: f64, ell: u32, eps: f64, p: f64, which: Identity) -> f64 {
        let bg = minkowski();
        let grid = NullGrid::new(0.0, 12.0, 30.0, 70.0, h, 30.0).unwrap();
        let ps = PotentialSet::inverse_square(eps);
        let f = evolve_mode(&bg, &ps, grid, InitialData::gaussian(1.0, 40.0, 2.0), ell).unwrap();
        multiplier_identity_residual(&f, &bg, &ps, 2.0, 10.0, p, which).unwrap().relative
    }

    #[test]
    fn residuals_shrink_quadratically() {
        for (ell, eps, p, which) in [(0, 0.05, 1.0, Identity::Rp1), (2, 0.0, 1.5, Identity::Rp2)] {
            let a = residual_at(0.1, ell, eps, p, which);
            let b = residual_at(0.05, ell, eps, p, which);
            assert!(a < 1e-2 && (3.2..=4.8).contains(&(a / b)), "{which:?}: {a} -> {b}");
        }
    }
}
