//! Characteristic evolution of one spherical-harmonic mode of the radiation field.
//!
//! The per-mode equation is
//!
//! ```text
//! ∂_u∂_v ψ = A ψ + B ∂_u ψ + C ∂_v ψ,
//! A = (s0 - (Ω²/4) ℓ(ℓ+1)) / r²,   B = s1 / r²,   C = sq / r,
//! ```
//!
//! integrated with the second-order diamond scheme on a uniform null grid.

use serde::Serialize;

use crate::background::{Background, Geometry};
use crate::error::EvolveError;
use crate::potential::{tilde_from_values, PotentialSet};
use crate::scalar::Real;

/// Uniform null grid `u_i = u0 + i h`, `v_j = v0 + j h`, with interface radius
/// `R` defining `v_R(u) = u + R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NullGrid<T> {
    pub u0: T,
    pub u_f: T,
    pub v0: T,
    pub v_max: T,
    pub h: T,
    pub r_interface: T,
}

fn steps<T: Real>(span: T, h: T, what: &str) -> Result<usize, EvolveError> {
    let n = (span / h).round();
    let tol = T::lit(1e-9) * n.max(T::one());
    if !(span / h - n).abs().le(&tol) || n < T::zero() {
        return Err(EvolveError::InvalidGrid(format!("{what} = {span} is not a multiple of h = {h}")));
    }
    n.to_usize().ok_or_else(|| EvolveError::InvalidGrid(format!("{what} = {span} too large")))
}

impl<T: Real> NullGrid<T> {
    pub fn new(u0: T, u_f: T, v0: T, v_max: T, h: T, r_interface: T) -> Result<Self, EvolveError> {
        let g = NullGrid { u0, u_f, v0, v_max, h, r_interface };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), EvolveError> {
        let all = [self.u0, self.u_f, self.v0, self.v_max, self.h, self.r_interface];
        if all.iter().any(|x| !x.is_finite()) || !(self.h > T::zero()) {
            return Err(EvolveError::InvalidGrid(format!("non-finite bounds or h <= 0: {self:?}")));
        }
        if !(self.u_f > self.u0) || !(self.v_max > self.v0) {
            return Err(EvolveError::InvalidGrid("need u_f > u0 and v_max > v0".into()));
        }
        self.nu()?;
        self.nv()?;
        steps(self.u0 + self.r_interface - self.v0, self.h, "u0 + R - v0")?;
        if self.u_f + self.r_interface > self.v_max + self.h * T::lit(1e-9) {
            return Err(EvolveError::InvalidGrid(format!(
                "v_R(u_f) = {} exceeds v_max = {}",
                self.u_f + self.r_interface,
                self.v_max
            )));
        }
        Ok(())
    }

    pub fn nu(&self) -> Result<usize, EvolveError> {
        steps(self.u_f - self.u0, self.h, "u_f - u0")
    }

    pub fn nv(&self) -> Result<usize, EvolveError> {
        steps(self.v_max - self.v0, self.h, "v_max - v0")
    }

    /// Number of rows and columns; only valid after [`NullGrid::validate`].
    pub fn dims(&self) -> (usize, usize) {
        (self.nu().unwrap_or(0) + 1, self.nv().unwrap_or(0) + 1)
    }

    #[inline]
    pub fn u(&self, i: usize) -> T {
        self.u0 + T::from_index(i) * self.h
    }

    #[inline]
    pub fn v(&self, j: usize) -> T {
        self.v0 + T::from_index(j) * self.h
    }

    /// Column of the interface point `v_R(u_i)` on row `i`.
    pub fn interface_column(&self, i: usize) -> usize {
        let k = ((self.u0 + self.r_interface - self.v0) / self.h).round().to_usize().unwrap_or(0);
        i + k
    }

    /// Row index of `u`, if `u` is on the grid.
    pub fn row_of(&self, u: T) -> Option<usize> {
        let x = (u - self.u0) / self.h;
        let i = x.round();
        if (x - i).abs() > T::lit(1e-6) || i < T::zero() {
            return None;
        }
        let i = i.to_usize()?;
        (i < self.dims().0).then_some(i)
    }

    /// Column index of `v`, if `v` is on the grid.
    pub fn column_of(&self, v: T) -> Option<usize> {
        let x = (v - self.v0) / self.h;
        let j = x.round();
        if (x - j).abs() > T::lit(1e-6) || j < T::zero() {
            return None;
        }
        let j = j.to_usize()?;
        (j < self.dims().1).then_some(j)
    }

    /// The same bounds with spacing `h / factor`.
    pub fn refined(&self, factor: usize) -> Self {
        NullGrid { h: self.h / T::from_index(factor), ..*self }
    }
}

/// A one-dimensional data profile along a null cone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Profile<T> {
    Zero,
    /// `A exp(-((x - c)/s)²)`
    Gaussian { amplitude: T, center: T, width: T },
    /// `A (1 - ((x - c)/s)²)⁴` on `|x - c| < s`, zero elsewhere.
    CompactPolynomial { amplitude: T, center: T, width: T },
}

impl<T: Real> Profile<T> {
    pub fn eval(&self, x: T) -> T {
        match *self {
            Profile::Zero => T::zero(),
            Profile::Gaussian { amplitude, center, width } => {
                let z = (x - center) / width;
                amplitude * (-z * z).exp()
            }
            Profile::CompactPolynomial { amplitude, center, width } => {
                let z = (x - center) / width;
                if z.abs() >= T::one() {
                    T::zero()
                } else {
                    let w = T::one() - z * z;
                    let w2 = w * w;
                    amplitude * w2 * w2
                }
            }
        }
    }

    /// Derivative of the profile.
    pub fn derivative(&self, x: T) -> T {
        match *self {
            Profile::Zero => T::zero(),
            Profile::Gaussian { amplitude, center, width } => {
                let z = (x - center) / width;
                -T::lit(2.0) * z / width * amplitude * (-z * z).exp()
            }
            Profile::CompactPolynomial { amplitude, center, width } => {
                let z = (x - center) / width;
                if z.abs() >= T::one() {
                    T::zero()
                } else {
                    let w = T::one() - z * z;
                    -T::lit(8.0) * amplitude * z * w * w * w / width
                }
            }
        }
    }

    /// Closed interval outside which the profile vanishes identically, if any.
    pub fn support(&self) -> Option<(T, T)> {
        match *self {
            Profile::Zero => Some((T::zero(), T::zero())),
            Profile::CompactPolynomial { center, width, .. } => Some((center - width, center + width)),
            Profile::Gaussian { .. } => None,
        }
    }

    fn validate(&self) -> Result<(), EvolveError> {
        match *self {
            Profile::Zero => Ok(()),
            Profile::Gaussian { amplitude, center, width } | Profile::CompactPolynomial { amplitude, center, width } => {
                if amplitude.is_finite() && center.is_finite() && width.is_finite() && width > T::zero() {
                    Ok(())
                } else {
                    Err(EvolveError::InvalidData(format!("bad profile {self:?}")))
                }
            }
        }
    }
}

/// Characteristic data for `ψ`: outgoing on `u = u0` (function of `v`) and
/// ingoing on `v = v0` (function of `u`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitialData<T> {
    pub outgoing: Profile<T>,
    pub ingoing: Profile<T>,
}

impl<T: Real> InitialData<T> {
    pub fn outgoing(profile: Profile<T>) -> Self {
        InitialData { outgoing: profile, ingoing: Profile::Zero }
    }

    pub fn gaussian(amplitude: T, center: T, width: T) -> Self {
        Self::outgoing(Profile::Gaussian { amplitude, center, width })
    }

    pub fn compact(amplitude: T, center: T, width: T) -> Self {
        Self::outgoing(Profile::CompactPolynomial { amplitude, center, width })
    }

    pub fn zero() -> Self {
        Self::outgoing(Profile::Zero)
    }
}

/// Per-cell coefficients of `∂_u∂_v ψ = a ψ + b ∂_u ψ + c ∂_v ψ`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CellCoefficients<T> {
    pub a: T,
    pub b: T,
    pub c: T,
}

pub fn cell_coefficients<T: Real>(ps: &PotentialSet<T>, g: &Geometry<T>, u: T, v: T, ell: u32) -> CellCoefficients<T> {
    let tc = tilde_from_values(ps.epsilon, &ps.values(u, v, g.r), g);
    let angular = T::from_index((ell * (ell + 1)) as usize) * g.omega2 * T::lit(0.25);
    let r2 = g.r * g.r;
    CellCoefficients { a: (tc.s0 - angular) / r2, b: tc.s1 / r2, c: tc.sq / g.r }
}

/// The one-pass predictor-corrector update of a cell, `N = s·S + e·E + w·W`.
///
/// Predictor: `N⁰ = E + W - S + h²(a (E+W)/2 + b (W-S)/h + c (E-S)/h)`.
/// Corrector: `N = E + W - S + h²(a ψ_c + b ∂_uψ_c + c ∂_vψ_c)` with
/// `ψ_c = (S+E+W+N⁰)/4`, `∂_uψ_c = (W+N⁰-S-E)/2h`, `∂_vψ_c = (E+N⁰-S-W)/2h`.
/// Both steps are linear in the corner values, so the update folds into three weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellWeights<T> {
    pub s: T,
    pub e: T,
    pub w: T,
}

impl<T: Real> CellWeights<T> {
    pub fn new(k: &CellCoefficients<T>, h: T) -> Self {
        let one = T::one();
        let half = T::lit(0.5);
        let p = h * h * k.a * T::lit(0.25);
        let bq = h * k.b * half;
        let cq = h * k.c * half;
        // Predictor weights.
        let n0_s = -one - h * (k.b + k.c);
        let n0_e = one + h * h * k.a * half + h * k.c;
        let n0_w = one + h * h * k.a * half + h * k.b;
        let kn = p + bq + cq;
        CellWeights {
            s: -one + p - bq - cq + kn * n0_s,
            e: one + p - bq + cq + kn * n0_e,
            w: one + p + bq - cq + kn * n0_w,
        }
    }

    #[inline]
    pub fn apply(&self, s: T, e: T, w: T) -> T {
        (self.e * e + self.s * s) + self.w * w
    }
}

/// Source of per-cell weights, cached along diagonals when possible.
struct CoefficientSource<'a, T: Real> {
    bg: &'a dyn Background<T>,
    ps: &'a PotentialSet<T>,
    grid: NullGrid<T>,
    ell: u32,
    /// Offset so that `diag = j + offset - i` is non-negative.
    offset: usize,
    geometry: Option<Vec<Geometry<T>>>,
    coefficients: Option<Vec<CellCoefficients<T>>>,
    weights: Option<Vec<CellWeights<T>>>,
}

impl<'a, T: Real> CoefficientSource<'a, T> {
    fn new(bg: &'a dyn Background<T>, ps: &'a PotentialSet<T>, grid: NullGrid<T>, ell: u32) -> Self {
        let (nu1, nv1) = grid.dims();
        let offset = nu1;
        let half = grid.h * T::lit(0.5);
        let mut src = CoefficientSource { bg, ps, grid, ell, offset, geometry: None, coefficients: None, weights: None };
        if bg.is_static() {
            let center = bg.center_offset();
            let geo: Vec<Geometry<T>> = (0..offset + nv1)
                .map(|d| {
                    let rho = grid.v0 - grid.u0 + (T::from_index(d) - T::from_index(offset)) * grid.h;
                    match center {
                        Some(c) if rho < c + half => Geometry::flat(T::nan()),
                        _ => bg.geometry(grid.u0 + half, grid.u0 + half + rho),
                    }
                })
                .collect();
            if ps.radial_only() {
                let u = grid.u0 + half;
                let coef = geo
                    .iter()
                    .map(|g| {
                        if g.r.is_nan() {
                            CellCoefficients::default()
                        } else {
                            cell_coefficients(ps, g, u, u + (g.r), ell)
                        }
                    })
                    .collect::<Vec<_>>();
                src.weights = Some(coef.iter().map(|k| CellWeights::new(k, grid.h)).collect());
                src.coefficients = Some(coef);
            }
            src.geometry = Some(geo);
        }
        src
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> CellCoefficients<T> {
        let d = j + self.offset - i;
        if let Some(c) = &self.coefficients {
            return c[d];
        }
        let half = self.grid.h * T::lit(0.5);
        let (u, v) = (self.grid.u(i) + half, self.grid.v(j) + half);
        let g = match &self.geometry {
            Some(geo) => geo[d],
            None => self.bg.geometry(u, v),
        };
        cell_coefficients(self.ps, &g, u, v, self.ell)
    }

    #[inline]
    fn weights(&self, i: usize, j: usize) -> CellWeights<T> {
        match &self.weights {
            Some(w) => w[j + self.offset - i],
            None => CellWeights::new(&self.at(i, j), self.grid.h),
        }
    }
}

/// Layout of valid points: rows are `u`, columns `v`; with a regular center,
/// row `i` starts at its axis column.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Layout {
    /// First valid column of each row.
    pub first_valid: Vec<usize>,
    /// Whether the first valid column of each row is a regular-center point (`ψ = 0`).
    pub axis: Vec<bool>,
}

fn layout<T: Real>(bg: &dyn Background<T>, grid: &NullGrid<T>) -> Result<Layout, EvolveError> {
    let (nu1, nv1) = grid.dims();
    let mut first_valid = vec![0; nu1];
    let mut axis = vec![false; nu1];
    if let Some(c) = bg.center_offset() {
        // Axis column on row i: v - u = c, i.e. j = i + (u0 + c - v0)/h.
        let k = (grid.u0 + c - grid.v0) / grid.h;
        let kr = k.round();
        if (k - kr).abs() > T::lit(1e-9) * kr.abs().max(T::one()) {
            return Err(EvolveError::InvalidGrid(format!(
                "the regular center v - u = {c} does not fall on grid diagonals (u0 + {c} - v0 not a multiple of h)"
            )));
        }
        let k = kr.to_isize().unwrap_or(0);
        for i in 0..nu1 {
            let j = i as isize + k;
            if j >= nv1 as isize {
                return Err(EvolveError::InvalidGrid(format!("row {i} lies entirely inside the center")));
            }
            if j >= 0 {
                first_valid[i] = j as usize;
                axis[i] = true;
            }
        }
    }
    Ok(Layout { first_valid, axis })
}

/// Everything needed to march one mode.
pub struct Evolution<'a, T: Real> {
    pub bg: &'a dyn Background<T>,
    pub ps: &'a PotentialSet<T>,
    pub grid: NullGrid<T>,
    pub data: InitialData<T>,
    pub ell: u32,
}

impl<'a, T: Real> Evolution<'a, T> {
    pub fn new(
        bg: &'a dyn Background<T>,
        ps: &'a PotentialSet<T>,
        grid: NullGrid<T>,
        data: InitialData<T>,
        ell: u32,
    ) -> Self {
        Evolution { bg, ps, grid, data, ell }
    }

    pub fn layout(&self) -> Result<Layout, EvolveError> {
        self.grid.validate()?;
        layout(self.bg, &self.grid)
    }

    /// Data sampled on the grid: `(ψ(u0, v_j), ψ(u_i, v0))`.
    pub fn sample_data(&self) -> Result<(Vec<T>, Vec<T>), EvolveError> {
        self.grid.validate()?;
        self.data.outgoing.validate()?;
        self.data.ingoing.validate()?;
        let (nu1, nv1) = self.grid.dims();
        let outgoing = (0..nv1).map(|j| self.data.outgoing.eval(self.grid.v(j))).collect();
        let ingoing = (0..nu1).map(|i| self.data.ingoing.eval(self.grid.u(i))).collect();
        Ok((outgoing, ingoing))
    }

    /// Marches row by row, handing each completed row to `on_row(i, row)`.
    ///
    /// Entries before the row's first valid column are zero. Only two rows are
    /// held in memory.
    pub fn run_streaming<F>(&self, on_row: F) -> Result<Layout, EvolveError>
    where
        F: FnMut(usize, &[T]) -> Result<(), EvolveError>,
    {
        let (outgoing, ingoing) = self.sample_data()?;
        self.run_streaming_with(&outgoing, &ingoing, on_row)
    }

    /// As [`Evolution::run_streaming`], with explicit samples of the data on
    /// `u = u0` (one per column) and `v = v0` (one per row).
    pub fn run_streaming_with<F>(&self, outgoing: &[T], ingoing: &[T], mut on_row: F) -> Result<Layout, EvolveError>
    where
        F: FnMut(usize, &[T]) -> Result<(), EvolveError>,
    {
        self.grid.validate()?;
        let lay = layout(self.bg, &self.grid)?;
        let grid = self.grid;
        let (nu1, nv1) = grid.dims();
        if outgoing.len() != nv1 || ingoing.len() != nu1 {
            return Err(EvolveError::InvalidData(format!(
                "expected {nv1} outgoing and {nu1} ingoing samples, got {} and {}",
                outgoing.len(),
                ingoing.len()
            )));
        }
        if outgoing.iter().chain(ingoing).any(|x| !x.is_finite()) {
            return Err(EvolveError::InvalidData("non-finite data sample".into()));
        }

        let corner_out = outgoing[0];
        let corner_in = ingoing[0];
        let scale = T::one().max(corner_out.abs()).max(corner_in.abs());
        if !lay.axis[0] && (corner_out - corner_in).abs() > T::lit(1e-10) * scale {
            return Err(EvolveError::InvalidData(format!(
                "data disagree at the corner (u0, v0): outgoing {corner_out}, ingoing {corner_in}"
            )));
        }

        let src = CoefficientSource::new(self.bg, self.ps, grid, self.ell);
        let inner = lay.first_valid[0] + 1;
        if inner < nv1 {
            let c = src.at(0, inner.min(nv1 - 2));
            let rho = grid.v(inner) - grid.u0;
            if grid.h * c.b.abs() * rho > T::lit(0.5) {
                log::warn!("h·|s1|/r = {} exceeds 0.5 at the inner edge", grid.h * c.b.abs() * rho);
            }
        }

        let mut prev = vec![T::zero(); nv1];
        prev[lay.first_valid[0]..].copy_from_slice(&outgoing[lay.first_valid[0]..]);
        if lay.axis[0] {
            prev[lay.first_valid[0]] = T::zero();
        }
        on_row(0, &prev)?;

        let mut next = vec![T::zero(); nv1];
        for i in 0..nu1 - 1 {
            let start = lay.first_valid[i + 1];
            for x in next[..start].iter_mut() {
                *x = T::zero();
            }
            next[start] = if lay.axis[i + 1] { T::zero() } else { ingoing[i + 1] };
            let mut w = next[start];
            for j in start..nv1 - 1 {
                w = src.weights(i, j).apply(prev[j], prev[j + 1], w);
                next[j + 1] = w;
            }
            if let Some(j) = next[start..].iter().position(|x| !x.is_finite()) {
                return Err(EvolveError::NonFinite {
                    u: grid.u(i + 1).as_f64(),
                    v: grid.v(start + j).as_f64(),
                    l: self.ell,
                });
            }
            on_row(i + 1, &next)?;
            std::mem::swap(&mut prev, &mut next);
        }
        Ok(lay)
    }

    /// Marches the full rectangle, storing every row.
    pub fn run(&self) -> Result<ModeField<T>, EvolveError> {
        let (nu1, nv1) = {
            self.grid.validate()?;
            self.grid.dims()
        };
        let mut psi = Vec::with_capacity(nu1 * nv1);
        let lay = self.run_streaming(|_, row| {
            psi.extend_from_slice(row);
            Ok(())
        })?;
        Ok(ModeField { ell: self.ell, grid: self.grid, layout: lay, psi, cols: nv1, evolved: true })
    }
}

/// Evolves one mode over the full grid.
pub fn evolve_mode<T: Real>(
    bg: &dyn Background<T>,
    ps: &PotentialSet<T>,
    grid: NullGrid<T>,
    data: InitialData<T>,
    ell: u32,
) -> Result<ModeField<T>, EvolveError> {
    Evolution::new(bg, ps, grid, data, ell).run()
}

/// The radiation field `ψ_ℓ = rφ_ℓ` of one mode on the full grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeField<T> {
    pub ell: u32,
    pub grid: NullGrid<T>,
    pub layout: Layout,
    psi: Vec<T>,
    cols: usize,
    evolved: bool,
}

impl<T: Real> ModeField<T> {
    /// Wraps arbitrary grid values (row-major, `rows × cols`), e.g. a test function.
    ///
    /// Such a field is not marked as a solution, so checks that use the
    /// equation refuse it.
    pub fn from_values(ell: u32, grid: NullGrid<T>, layout: Layout, psi: Vec<T>) -> Result<Self, EvolveError> {
        grid.validate()?;
        let (nu1, nv1) = grid.dims();
        if layout.first_valid.len() != nu1 || layout.axis.len() != nu1 || psi.len() != nu1 * nv1 {
            return Err(EvolveError::InvalidData(format!(
                "expected {nu1} layout rows and {} values, got {} and {}",
                nu1 * nv1,
                layout.first_valid.len(),
                psi.len()
            )));
        }
        Ok(ModeField { ell, grid, layout, psi, cols: nv1, evolved: false })
    }

    /// Builds a synthetic field by evaluating `f(u, v)` on the valid points of
    /// the layout that `bg` induces on `grid`.
    pub fn from_fn(
        ell: u32,
        grid: NullGrid<T>,
        bg: &dyn Background<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Self, EvolveError> {
        grid.validate()?;
        let lay = layout(bg, &grid)?;
        let (nu1, nv1) = grid.dims();
        let mut psi = vec![T::zero(); nu1 * nv1];
        for i in 0..nu1 {
            for j in lay.first_valid[i]..nv1 {
                psi[i * nv1 + j] = f(grid.u(i), grid.v(j));
            }
        }
        Self::from_values(ell, grid, lay, psi)
    }

    /// True when the values come from [`Evolution::run`].
    pub fn is_solution(&self) -> bool {
        self.evolved
    }

    pub fn rows(&self) -> usize {
        self.layout.first_valid.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        i < self.rows() && j < self.cols && j >= self.layout.first_valid[i]
    }

    /// `ψ` at grid point `(i, j)`; zero outside the valid region.
    #[inline]
    pub fn psi(&self, i: usize, j: usize) -> T {
        self.psi[i * self.cols + j]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        self.is_valid(i, j).then(|| self.psi(i, j))
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.psi[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[T] {
        &self.psi
    }

    /// `∂_u ψ` by centered differences, second-order one-sided where a neighbour is missing.
    pub fn dpsi_du(&self, i: usize, j: usize) -> T {
        let h = self.grid.h;
        let up = i + 1 < self.rows() && self.is_valid(i + 1, j);
        let down = i >= 1 && self.is_valid(i - 1, j);
        match (down, up) {
            (true, true) => (self.psi(i + 1, j) - self.psi(i - 1, j)) / (h + h),
            (false, true) if i + 2 < self.rows() => {
                (-T::lit(3.0) * self.psi(i, j) + T::lit(4.0) * self.psi(i + 1, j) - self.psi(i + 2, j)) / (h + h)
            }
            (true, false) if i >= 2 && self.is_valid(i - 2, j) => {
                (T::lit(3.0) * self.psi(i, j) - T::lit(4.0) * self.psi(i - 1, j) + self.psi(i - 2, j)) / (h + h)
            }
            (false, true) => (self.psi(i + 1, j) - self.psi(i, j)) / h,
            (true, false) => (self.psi(i, j) - self.psi(i - 1, j)) / h,
            (false, false) => T::zero(),
        }
    }

    /// `∂_v ψ` by centered differences, second-order one-sided at the ends of a row.
    pub fn dpsi_dv(&self, i: usize, j: usize) -> T {
        let row = self.row(i);
        let lo = self.layout.first_valid[i];
        dv_in_row(row, lo, j, self.grid.h)
    }
}

/// `∂_v` of a row at column `j`, with valid entries `lo..row.len()`.
pub fn dv_in_row<T: Real>(row: &[T], lo: usize, j: usize, h: T) -> T {
    let n = row.len();
    if j > lo && j + 1 < n {
        (row[j + 1] - row[j - 1]) / (h + h)
    } else if j == lo && j + 2 < n {
        (-T::lit(3.0) * row[j] + T::lit(4.0) * row[j + 1] - row[j + 2]) / (h + h)
    } else if j + 1 == n && j >= lo + 2 {
        (T::lit(3.0) * row[j] - T::lit(4.0) * row[j - 1] + row[j - 2]) / (h + h)
    } else if j + 1 < n {
        (row[j + 1] - row[j]) / h
    } else if j > lo {
        (row[j] - row[j - 1]) / h
    } else {
        T::zero()
    }
}

/// Richardson estimate from solutions at `h`, `h/2`, `h/4`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport<T> {
    pub probes: Vec<(T, T)>,
    /// Order at each probe; `None` when the differences are at rounding level.
    pub probe_orders: Vec<Option<T>>,
    /// Order from max-norm differences over the coarse lattice.
    pub norm_order: Option<T>,
    /// Max-norm differences `|ψ_h - ψ_{h/2}|` and `|ψ_{h/2} - ψ_{h/4}|`.
    pub differences: (T, T),
    pub inconclusive: bool,
}

impl<T: Real> ConvergenceReport<T> {
    /// Minimum and maximum of the conclusive per-probe orders and the norm order.
    pub fn order_range(&self) -> Option<(T, T)> {
        let all: Vec<T> = self.probe_orders.iter().flatten().copied().chain(self.norm_order).collect();
        if all.is_empty() {
            return None;
        }
        let lo = all.iter().copied().fold(T::infinity(), T::min);
        let hi = all.iter().copied().fold(T::neg_infinity(), T::max);
        Some((lo, hi))
    }
}

/// Values of `ψ` on the coarse lattice (every `stride`-th coarse point) for one level.
fn coarse_lattice<T: Real>(evo: &Evolution<'_, T>, factor: usize, stride: usize) -> Result<Vec<Vec<T>>, EvolveError> {
    let step = factor * stride;
    let mut out = Vec::new();
    evo.run_streaming(|i, row| {
        if i % step == 0 {
            out.push(row.iter().step_by(step).copied().collect());
        }
        Ok(())
    })?;
    Ok(out)
}

/// Runs the evolution at `h`, `h/2`, `h/4` and estimates the order of convergence.
///
/// `probes` are `(u, v)` points on the coarse lattice; `stride` thins the
/// lattice used for the max-norm estimate.
pub fn convergence_order<T: Real>(
    evo: &Evolution<'_, T>,
    probes: &[(T, T)],
    stride: usize,
) -> Result<ConvergenceReport<T>, EvolveError> {
    let stride = stride.max(1);
    let levels: Vec<Vec<Vec<T>>> = [1usize, 2, 4]
        .iter()
        .map(|&f| {
            let e = Evolution { grid: evo.grid.refined(f), ..*evo };
            coarse_lattice(&e, f, stride)
        })
        .collect::<Result<_, _>>()?;
    let lay = evo.layout()?;

    let mut d1 = T::zero();
    let mut d2 = T::zero();
    let mut scale = T::zero();
    for (a, row) in levels[0].iter().enumerate() {
        let first = lay.first_valid[a * stride];
        for (b, &x) in row.iter().enumerate() {
            if b * stride < first {
                continue;
            }
            let y = levels[1][a][b];
            let z = levels[2][a][b];
            d1 = d1.max((x - y).abs());
            d2 = d2.max((y - z).abs());
            scale = scale.max(z.abs());
        }
    }
    let rounding = T::epsilon() * T::lit(1e4) * scale.max(T::min_positive_value());
    let order = |e1: T, e2: T| -> Option<T> {
        if e1 <= rounding || e2 <= rounding || e1 <= e2 {
            None
        } else {
            Some((e1 / e2).log2())
        }
    };
    let norm_order = order(d1, d2);

    let mut probe_orders = Vec::with_capacity(probes.len());
    for &(u, v) in probes {
        let i = evo.grid.row_of(u).filter(|i| i % stride == 0);
        let j = evo.grid.column_of(v).filter(|j| j % stride == 0);
        let (Some(i), Some(j)) = (i, j) else {
            return Err(EvolveError::InvalidGrid(format!("probe ({u}, {v}) is not on the coarse lattice")));
        };
        let (a, b) = (i / stride, j / stride);
        let x = levels[0][a][b];
        let y = levels[1][a][b];
        let z = levels[2][a][b];
        probe_orders.push(order((x - y).abs(), (y - z).abs()));
    }
    let inconclusive = norm_order.is_none() || probe_orders.iter().any(Option::is_none);
    Ok(ConvergenceReport { probes: probes.to_vec(), probe_orders, norm_order, differences: (d1, d2), inconclusive })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::background::{reissner_nordstrom, Minkowski};
    use proptest::prelude::*;

    fn flat_grid(h: f64) -> NullGrid<f64> {
        NullGrid::new(0.0, 20.0, 0.0, 60.0, h, 10.0).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(NullGrid::new(0.0, 20.0, 0.0, 60.0, 0.3, 10.0).is_err());
        assert!(NullGrid::new(0.0, 20.0, 0.0, 25.0, 0.5, 10.0).is_err());
        assert!(NullGrid::new(0.0, 20.0, 0.0, 60.0, -0.5, 10.0).is_err());
        let g = flat_grid(0.5);
        assert_eq!(g.dims(), (41, 121));
        assert_eq!(g.interface_column(3), 23);
        assert_eq!(g.row_of(1.5), Some(3));
        assert_eq!(g.column_of(1.25), None);
    }

    #[test]
    fn compact_profile_support_and_derivative() {
        let p = Profile::CompactPolynomial { amplitude: 2.0f64, center: 5.0, width: 1.5 };
        assert_eq!(p.eval(3.5), 0.0);
        assert_eq!(p.eval(6.6), 0.0);
        assert_eq!(p.eval(5.0), 2.0);
        let x: f64 = 5.4;
        let fd = (p.eval(x + 1e-6) - p.eval(x - 1e-6)) / 2e-6;
        assert!((fd - p.derivative(x)).abs() < 1e-7);
        let g = Profile::Gaussian { amplitude: 1.0f64, center: 0.0, width: 2.0 };
        let fd = (g.eval(0.7 + 1e-6) - g.eval(0.7 - 1e-6)) / 2e-6;
        assert!((fd - g.derivative(0.7)).abs() < 1e-8);
    }

    #[derive(Debug)]
    struct FarFlat;
    impl Background<f64> for FarFlat {
        fn name(&self) -> String {
            "flat, no center".into()
        }
        fn geometry(&self, u: f64, v: f64) -> Geometry<f64> {
            Geometry::flat(v - u)
        }
        fn is_static(&self) -> bool {
            true
        }
    }

    #[test]
    fn free_wave_is_exact_on_rectangle() {
        let grid = NullGrid::new(0.0, 10.0, 40.0, 60.0, 0.25, 40.0).unwrap();
        let f = |v: f64| (-((v - 48.0) / 3.0).powi(2)).exp() + 0.1 * (v / 7.0).sin();
        let g = |u: f64| 0.5 * (u / 3.0).cos() - 0.5 + f(40.0);
        let (nu1, nv1) = grid.dims();
        let out: Vec<f64> = (0..nv1).map(|j| f(grid.v(j))).collect();
        let inn: Vec<f64> = (0..nu1).map(|i| g(grid.u(i))).collect();
        let ps = PotentialSet::zero();
        let evo = Evolution::new(&FarFlat, &ps, grid, InitialData::zero(), 0);
        let mut worst = 0.0f64;
        evo.run_streaming_with(&out, &inn, |i, row| {
            for (j, &x) in row.iter().enumerate() {
                worst = worst.max((x - (f(grid.v(j)) + g(grid.u(i)) - f(40.0))).abs());
            }
            Ok(())
        })
        .unwrap();
        assert!(worst < 1e-13, "{worst}");
    }

    #[test]
    fn zero_rhs_cells_satisfy_discrete_dalembert() {
        let ps = PotentialSet::zero();
        let field = evolve_mode(&Minkowski, &ps, flat_grid(0.5), InitialData::gaussian(1.0, 25.0, 3.0), 0).unwrap();
        for i in 0..field.rows() - 1 {
            for j in field.layout.first_valid[i + 1]..field.cols() - 1 {
                let r = field.psi(i + 1, j + 1) - field.psi(i, j + 1) - field.psi(i + 1, j) + field.psi(i, j);
                assert!(r.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn flat_free_wave_matches_reflection_at_center() {
        // ψ = F(v) - F(u) solves ψ = 0 at v = u.
        let ps = PotentialSet::zero();
        let data = InitialData::compact(1.0, 20.0, 4.0);
        let field = evolve_mode(&Minkowski, &ps, flat_grid(0.25), data, 0).unwrap();
        let f = |x: f64| data.outgoing.eval(x);
        let mut worst = 0.0f64;
        for i in 0..field.rows() {
            for j in field.layout.first_valid[i]..field.cols() {
                let want = f(field.grid.v(j)) - f(field.grid.u(i));
                worst = worst.max((field.psi(i, j) - want).abs());
            }
        }
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn corner_mismatch_rejected() {
        let grid = NullGrid::new(0.0, 10.0, 40.0, 60.0, 0.5, 40.0).unwrap();
        let rn = reissner_nordstrom::<f64>(1.0, 0.5).unwrap();
        let data = InitialData::gaussian(1.0, 40.0, 3.0);
        let ps = PotentialSet::zero();
        assert!(matches!(evolve_mode(&rn, &ps, grid, data, 0), Err(EvolveError::InvalidData(_))));
    }

    #[test]
    fn blow_up_is_reported() {
        let grid = NullGrid::new(0.0, 10.0, 20.0, 40.0, 0.5, 20.0).unwrap();
        let rn = reissner_nordstrom::<f64>(1.0, 0.5).unwrap();
        let ps = PotentialSet::inverse_square(-1e300);
        let err = evolve_mode(&rn, &ps, grid, InitialData::compact(1.0, 30.0, 3.0), 0).unwrap_err();
        assert!(matches!(err, EvolveError::NonFinite { .. }), "{err:?}");
    }

    #[test]
    fn misaligned_center_rejected() {
        let grid = NullGrid::new(0.25, 10.25, 0.5, 30.5, 0.5, 10.25).unwrap();
        let ps = PotentialSet::zero();
        let err = evolve_mode(&Minkowski, &ps, grid, InitialData::zero(), 0).unwrap_err();
        assert!(matches!(err, EvolveError::InvalidGrid(_)));
    }

    #[test]
    fn derivative_accessors() {
        let ps = PotentialSet::zero();
        let data = InitialData::gaussian(1.0, 25.0, 3.0);
        let field = evolve_mode(&Minkowski, &ps, flat_grid(0.125), data, 0).unwrap();
        let f = |x: f64| data.outgoing.eval(x);
        let fp = |x: f64| data.outgoing.derivative(x);
        for &(i, j) in &[(0usize, 200usize), (40, 300), (160, 400), (80, 479)] {
            let (u, v) = (field.grid.u(i), field.grid.v(j));
            assert!((field.dpsi_dv(i, j) - fp(v)).abs() < 2e-3, "v at {i},{j}");
            assert!((field.dpsi_du(i, j) + fp(u)).abs() < 2e-3, "u at {i},{j}");
            assert!((field.psi(i, j) - (f(v) - f(u))).abs() < 1e-12);
        }
    }

    fn run_samples(ps: &PotentialSet<f64>, grid: NullGrid<f64>, out: &[f64], ell: u32) -> Vec<f64> {
        let evo = Evolution::new(&Minkowski, ps, grid, InitialData::zero(), ell);
        let inn = vec![0.0; grid.dims().0];
        let mut all = Vec::new();
        evo.run_streaming_with(out, &inn, |_, row| {
            all.extend_from_slice(row);
            Ok(())
        })
        .unwrap();
        all
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn linearity(alpha in -3.0f64..3.0, beta in -3.0f64..3.0, c1 in 15.0f64..30.0, c2 in 15.0f64..30.0) {
            let ps = PotentialSet::inverse_square(0.1);
            let grid = flat_grid(0.5);
            let d1 = Profile::Gaussian { amplitude: 1.0, center: c1, width: 2.0 };
            let d2 = Profile::CompactPolynomial { amplitude: 1.0, center: c2, width: 3.0 };
            let s1: Vec<f64> = (0..grid.dims().1).map(|j| d1.eval(grid.v(j))).collect();
            let s2: Vec<f64> = (0..grid.dims().1).map(|j| d2.eval(grid.v(j))).collect();
            let mix: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| alpha * a + beta * b).collect();
            let f1 = run_samples(&ps, grid, &s1, 1);
            let f2 = run_samples(&ps, grid, &s2, 1);
            let fm = run_samples(&ps, grid, &mix, 1);
            let scale = fm.iter().fold(1e-300f64, |m, x| m.max(x.abs()));
            for ((a, b), m) in f1.iter().zip(&f2).zip(&fm) {
                prop_assert!((alpha * a + beta * b - m).abs() <= 1e-12 * scale.max(alpha.abs() + beta.abs()));
            }
        }

        #[test]
        fn domain_of_dependence(cut in 20usize..100, bump in -1.0f64..1.0) {
            let ps = PotentialSet::inverse_square(0.1);
            let grid = flat_grid(0.5);
            let d = Profile::Gaussian { amplitude: 1.0, center: 25.0, width: 4.0 };
            let base: Vec<f64> = (0..grid.dims().1).map(|j| d.eval(grid.v(j))).collect();
            let mut pert = base.clone();
            for x in pert[cut..].iter_mut() {
                *x += bump;
            }
            let a = run_samples(&ps, grid, &base, 2);
            let b = run_samples(&ps, grid, &pert, 2);
            let cols = grid.dims().1;
            for (k, (x, y)) in a.iter().zip(&b).enumerate() {
                if k % cols < cut {
                    prop_assert_eq!(x, y);
                }
            }
        }
    }
}
