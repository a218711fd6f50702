//! Energies, commuted quantities, inequality checks and identity residuals
//! computed from evolved modes.
//!
//! The foliation `Σ_u` is the outgoing cone `C_u = {u, v ≥ v_R(u)}` joined to
//! the ingoing segment `C̲_u = {u' ≥ u, v = v_R(u)}`, which runs inward from
//! `r = R` to the regular center (or to `v - u = ρ_in` on spacetimes without
//! one). Per mode, `r²|∂φ|²` is written through `ψ = rφ` as
//! `(∂ψ - ψ ∂r / r)²` and the angular term as `ℓ(ℓ+1) ψ² / r²`.

mod checks;
mod identity;
mod series;

pub use checks::*;
pub use identity::*;
pub use series::*;

use serde::Serialize;

use crate::background::{Background, Geometry};
use crate::error::DiagnosticsError;
use crate::evolve::{dv_in_row, ModeField, NullGrid};
use crate::scalar::Real;

/// Upper guard on weight exponents `p`.
pub const MAX_WEIGHT_EXPONENT: f64 = 3.5;

/// Outcome of one inequality or ratio check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityReport<T> {
    pub name: String,
    pub lhs: T,
    pub rhs: T,
    /// Calibration constant multiplying `rhs`.
    pub constant: T,
    /// `constant · rhs - lhs`.
    pub margin: T,
    pub pass: bool,
    /// Set when a premise of the inequality could not be confirmed numerically.
    pub inconclusive: bool,
    /// Per-window ratios `(u, lhs/rhs)` where the check sweeps a parameter.
    pub samples: Vec<(T, T)>,
    pub note: String,
}

impl<T: Real> InequalityReport<T> {
    pub(crate) fn new(name: &str, lhs: T, rhs: T, constant: T) -> Self {
        let margin = constant * rhs - lhs;
        InequalityReport {
            name: name.to_string(),
            lhs,
            rhs,
            constant,
            margin,
            pass: lhs.is_finite() && rhs.is_finite() && margin >= T::zero(),
            inconclusive: false,
            samples: Vec::new(),
            note: String::new(),
        }
    }

    /// `lhs / rhs`, or zero when both vanish.
    pub fn ratio(&self) -> T {
        if self.lhs == T::zero() {
            T::zero()
        } else {
            self.lhs / self.rhs
        }
    }
}

/// Closed form of `∫_{u1}^{u2} du / (a √u + b)`.
pub fn gronwall_integral<T: Real>(a: T, b: T, u1: T, u2: T) -> Result<T, DiagnosticsError> {
    if !(a > T::zero()) || !(b >= T::zero()) || !(u1 > T::zero()) || !(u2 > u1) {
        return Err(DiagnosticsError::InvalidInput(format!(
            "need a > 0, b >= 0, 0 < u1 < u2; got a = {a}, b = {b}, u1 = {u1}, u2 = {u2}"
        )));
    }
    let k = b / a;
    let prim = |u: T| u.sqrt() - k * (u.sqrt() + k).ln();
    Ok((prim(u2) - prim(u1)) * T::lit(2.0) / a)
}

/// Composite trapezoid rule on uniformly spaced samples.
pub fn trapezoid<T: Real>(values: &[T], h: T) -> T {
    match values.len() {
        0 | 1 => T::zero(),
        n => {
            let inner: T = values[1..n - 1].iter().copied().sum();
            h * (inner + (values[0] + values[n - 1]) * T::lit(0.5))
        }
    }
}

#[inline]
pub(crate) fn sq<T: Real>(x: T) -> T {
    x * x
}

pub(crate) fn angular<T: Real>(ell: u32) -> T {
    T::from_index((ell * (ell + 1)) as usize)
}

/// Geometry at grid nodes, tabulated per diagonal on static backgrounds.
pub(crate) struct NodeGeometry<'a, T: Real> {
    bg: &'a dyn Background<T>,
    grid: NullGrid<T>,
    offset: usize,
    table: Option<Vec<Geometry<T>>>,
}

impl<'a, T: Real> NodeGeometry<'a, T> {
    pub fn new(bg: &'a dyn Background<T>, grid: NullGrid<T>) -> Self {
        let (nu1, nv1) = grid.dims();
        let offset = nu1;
        let table = bg.is_static().then(|| {
            let half = grid.h * T::lit(0.5);
            (0..offset + nv1)
                .map(|d| {
                    let rho = grid.v0 - grid.u0 + (T::from_index(d) - T::from_index(offset)) * grid.h;
                    match bg.center_offset() {
                        Some(c) if rho < c - half => Geometry::flat(T::nan()),
                        Some(c) if rho < c + half => bg.geometry(grid.u0, grid.u0 + c),
                        _ => bg.geometry(grid.u0, grid.u0 + rho),
                    }
                })
                .collect()
        });
        NodeGeometry { bg, grid, offset, table }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Geometry<T> {
        match &self.table {
            Some(t) => t[j + self.offset - i],
            None => self.bg.geometry(self.grid.u(i), self.grid.v(j)),
        }
    }

    /// `∂_u² r` at a node, which [`Geometry`] does not carry.
    pub fn d2r_dudu(&self, i: usize, j: usize, g: &Geometry<T>) -> T {
        if self.bg.is_static() {
            return g.d2r_dvdv;
        }
        let (u, v) = (self.grid.u(i), self.grid.v(j));
        let d = T::lit(1e-4) * T::one().max(u.abs());
        (self.bg.dr_du(u + d, v) - self.bg.dr_du(u - d, v)) / (d + d)
    }
}

/// Second `v`-derivative of a row at column `j`, with valid entries `lo..row.len()`.
pub(crate) fn d2v_in_row<T: Real>(row: &[T], lo: usize, j: usize, h: T) -> T {
    let n = row.len();
    let h2 = h * h;
    if j > lo && j + 1 < n {
        (row[j + 1] - row[j] - row[j] + row[j - 1]) / h2
    } else if j + 2 < n {
        (row[j] - row[j + 1] - row[j + 1] + row[j + 2]) / h2
    } else if j >= lo + 2 {
        (row[j] - row[j - 1] - row[j - 1] + row[j - 2]) / h2
    } else {
        T::zero()
    }
}

/// Values and finite-difference derivatives of `ψ` at one node.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Jet<T> {
    pub psi: T,
    pub du: T,
    pub dv: T,
    pub duu: T,
    pub duv: T,
    pub dvv: T,
}

/// Three consecutive rows around the row being evaluated (`rows[c]`).
#[derive(Clone, Copy)]
pub(crate) struct Window<'r, T> {
    pub rows: [&'r [T]; 3],
    pub lo: [usize; 3],
    pub c: usize,
    pub h: T,
}

impl<'r, T: Real> Window<'r, T> {
    /// Window around row `i` of a stored field: centered in the interior,
    /// one-sided on the first and last rows.
    pub fn of_field(field: &'r ModeField<T>, i: usize) -> Result<Self, DiagnosticsError> {
        let n = field.rows();
        if n < 3 {
            return Err(DiagnosticsError::InvalidInput(format!("need at least 3 rows, got {n}")));
        }
        let (first, c) = match i {
            0 => (0, 0),
            _ if i + 1 == n => (n - 3, 2),
            _ => (i - 1, 1),
        };
        let lo = &field.layout.first_valid;
        Ok(Window {
            rows: [field.row(first), field.row(first + 1), field.row(first + 2)],
            lo: [lo[first], lo[first + 1], lo[first + 2]],
            c,
            h: field.grid.h,
        })
    }

    fn u_weights(&self, j: usize) -> [T; 3] {
        let ok = |k: usize| j >= self.lo[k];
        let (h, h2) = (self.h, self.h + self.h);
        let (z, one) = (T::zero(), T::one());
        match self.c {
            0 if ok(1) && ok(2) => [-T::lit(3.0) / h2, T::lit(4.0) / h2, -one / h2],
            0 if ok(1) => [-one / h, one / h, z],
            1 if ok(0) && ok(2) => [-one / h2, z, one / h2],
            1 if ok(2) => [z, -one / h, one / h],
            1 if ok(0) => [-one / h, one / h, z],
            2 if ok(0) && ok(1) => [one / h2, -T::lit(4.0) / h2, T::lit(3.0) / h2],
            2 if ok(1) => [z, -one / h, one / h],
            _ => [z, z, z],
        }
    }

    fn uu_weights(&self, j: usize) -> [T; 3] {
        if self.lo.iter().all(|&l| j >= l) {
            let h2 = self.h * self.h;
            [T::one() / h2, -T::lit(2.0) / h2, T::one() / h2]
        } else {
            [T::zero(); 3]
        }
    }

    pub fn jet(&self, j: usize) -> Jet<T> {
        let row = self.rows[self.c];
        let lo = self.lo[self.c];
        let wu = self.u_weights(j);
        let wuu = self.uu_weights(j);
        let mut jet = Jet {
            psi: row[j],
            dv: dv_in_row(row, lo, j, self.h),
            dvv: d2v_in_row(row, lo, j, self.h),
            ..Jet::default()
        };
        for k in 0..3 {
            if wu[k] == T::zero() && wuu[k] == T::zero() {
                continue;
            }
            let f = self.rows[k][j];
            jet.du = jet.du + wu[k] * f;
            jet.duu = jet.duu + wuu[k] * f;
            jet.duv = jet.duv + wu[k] * dv_in_row(self.rows[k], self.lo[k], j, self.h);
        }
        jet
    }
}

pub(crate) fn check_exponent<T: Real>(p: T, what: &str) -> Result<(), DiagnosticsError> {
    if p >= T::zero() && p <= T::lit(MAX_WEIGHT_EXPONENT) {
        Ok(())
    } else {
        Err(DiagnosticsError::InvalidInput(format!("{what} = {p} outside [0, {MAX_WEIGHT_EXPONENT}]")))
    }
}

pub(crate) fn row_of<T: Real>(grid: &NullGrid<T>, u: T) -> Result<usize, DiagnosticsError> {
    grid.row_of(u).ok_or(DiagnosticsError::OutOfRange(u.as_f64()))
}
