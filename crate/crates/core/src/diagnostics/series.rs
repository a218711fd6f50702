//! Energy time series along the foliation, built while a mode is marched.

use std::collections::VecDeque;

use serde::Serialize;

use super::{angular, check_exponent, row_of, sq, NodeGeometry, Window};
use crate::background::Background;
use crate::error::DiagnosticsError;
use crate::evolve::{Evolution, Layout, ModeField, NullGrid};
use crate::scalar::Real;

/// What to record along the foliation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesOptions<T> {
    /// Weights `p` for `E_p` (and the commuted hierarchies).
    pub p_values: Vec<T>,
    /// Exponents `γ` for the supremum of `r^{1/2+γ}|φ|` along `C_u`.
    pub gammas: Vec<T>,
    /// Rows between samples.
    pub stride: usize,
    /// Compute foliation energies; without them only pointwise samples are taken.
    pub energies: bool,
    /// Compute `E_p[Ψ₁]` and `E_p[Θ₀]`.
    pub commuted: bool,
    /// Compute `E[Tφ]` and `E_p[Tψ]`.
    pub t_energy: bool,
    /// Inner end `v - u = ρ_in` of the ingoing segment. Defaults to the
    /// regular center, or to a point inside the potential barrier without one.
    pub rho_in: Option<T>,
}

impl<T: Real> Default for SeriesOptions<T> {
    fn default() -> Self {
        SeriesOptions {
            p_values: vec![T::zero(), T::one(), T::lit(2.0)],
            gammas: Vec::new(),
            stride: 1,
            energies: true,
            commuted: false,
            t_energy: false,
            rho_in: None,
        }
    }
}

impl<T: Real> SeriesOptions<T> {
    pub fn pointwise_only(stride: usize) -> Self {
        SeriesOptions { p_values: Vec::new(), energies: false, stride, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), DiagnosticsError> {
        for &p in &self.p_values {
            check_exponent(p, "p")?;
        }
        for &g in &self.gammas {
            if !(g > T::zero() && g < T::lit(0.5)) {
                return Err(DiagnosticsError::InvalidInput(format!("gamma = {g} outside (0, 1/2)")));
            }
        }
        if self.stride == 0 {
            return Err(DiagnosticsError::InvalidInput("stride must be positive".into()));
        }
        Ok(())
    }
}

/// Estimated contribution of `v > v_max` to each outgoing integral.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailEstimates<T> {
    pub e: T,
    pub ep: Vec<T>,
    pub ep_psi1: Vec<T>,
    pub ep_theta0: Vec<T>,
    pub e_t: Option<T>,
}

/// All foliation quantities at one retarded time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyRecord<T> {
    pub u: T,
    /// `E[φ](u)`.
    pub e: T,
    pub e_outgoing: T,
    pub e_ingoing: T,
    /// `E_p[ψ](u)`, one per requested `p`.
    pub ep: Vec<T>,
    /// `Ẽ_p = E_p + E`.
    pub ep_tilde: Vec<T>,
    /// `E_p[Ψ₁](u)` with `Ψ₁ = Ω⁻² r² ∂_v ψ` (empty unless requested).
    pub ep_psi1: Vec<T>,
    /// `E_p[Θ₀](u)` with `Θ₀ = r ∂_v ψ` (empty unless requested).
    pub ep_theta0: Vec<T>,
    /// `E_p[Tψ](u)` (empty unless requested).
    pub ep_tpsi: Vec<T>,
    /// `E[Tφ](u)`.
    pub e_t: Option<T>,
    /// `φ(u, v_R(u))`.
    pub pointwise_at_r: T,
    /// `ψ(u, v_max)`.
    pub radiation_field: T,
    /// Two-radius extrapolation of `ψ` to `r = ∞`, linear in `1/r`.
    pub radiation_extrapolated: T,
    /// `sup_{C_u} r^{1/2+γ}|φ|`, one per requested `γ`.
    pub weighted_sup: Vec<T>,
    pub tail: TailEstimates<T>,
}

/// Pointwise samples on one row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointwiseSample<T> {
    pub u: T,
    /// `φ(u, v_R(u))`.
    pub phi_at_r: T,
    /// `ψ(u, v_max)`.
    pub psi_vmax: T,
    /// Extrapolation of `ψ(u, ·)` to `r = ∞` from `v_max` and a mid column.
    pub psi_extrapolated: T,
}

/// The quantity whose `r^p`-weighted energy is requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WeightTarget {
    Psi,
    Psi1,
    Theta0,
    TPsi,
}

/// Records for one mode; `records` holds the samples whose ingoing segment
/// fits in the grid, `pointwise` every sampled row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergySeries<T> {
    pub ell: u32,
    pub p_values: Vec<T>,
    pub gammas: Vec<T>,
    pub records: Vec<EnergyRecord<T>>,
    pub pointwise: Vec<PointwiseSample<T>>,
}

impl<T: Real> EnergySeries<T> {
    /// Index of `p` in `p_values`.
    pub fn p_index(&self, p: T) -> Option<usize> {
        self.p_values.iter().position(|&q| (q - p).abs() <= T::lit(1e-9))
    }

    pub fn gamma_index(&self, gamma: T) -> Option<usize> {
        self.gammas.iter().position(|&g| (g - gamma).abs() <= T::lit(1e-9))
    }

    /// `(u, f(record))` over all records.
    pub fn column(&self, f: impl Fn(&EnergyRecord<T>) -> T) -> Vec<(T, T)> {
        self.records.iter().map(|r| (r.u, f(r))).collect()
    }
}

/// Powers `r^e` of node radii, tabulated per diagonal on static backgrounds.
struct Powers<T> {
    exps: Vec<T>,
    offset: usize,
    table: Option<Vec<T>>,
}

impl<T: Real> Powers<T> {
    fn new(exps: Vec<T>, geo: &NodeGeometry<T>, grid: &NullGrid<T>, is_static: bool) -> Self {
        let (nu1, nv1) = grid.dims();
        let n = exps.len();
        let table = (is_static && n > 0).then(|| {
            let mut t = vec![T::zero(); (nu1 + nv1) * n];
            for d in 0..nu1 + nv1 {
                // Node (0, d - nu1) lies on diagonal d when d >= nu1; otherwise use (nu1 - d, 0).
                let (i, j) = if d >= nu1 { (0, d - nu1) } else { (nu1 - d, 0) };
                if i >= nu1 {
                    continue;
                }
                let r = geo.get(i, j).r;
                for (k, &e) in exps.iter().enumerate() {
                    t[d * n + k] = r.powf(e);
                }
            }
            t
        });
        Powers { exps, offset: nu1, table }
    }

    #[inline]
    fn fill(&self, i: usize, j: usize, r: T, out: &mut [T]) {
        let n = self.exps.len();
        match &self.table {
            Some(t) => {
                let d = j + self.offset - i;
                out.copy_from_slice(&t[d * n..(d + 1) * n]);
            }
            None => {
                for (o, &e) in out.iter_mut().zip(&self.exps) {
                    *o = r.powf(e);
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Outgoing<T> {
    e: T,
    ep: Vec<T>,
    psi1: Vec<T>,
    theta0: Vec<T>,
    tpsi: Vec<T>,
    e_t: T,
    sup: Vec<T>,
    tail: TailEstimates<T>,
}

/// Inner end `ρ_in` of the ingoing segment: the explicit value, else the
/// regular center, else the background's cutoff below its potential barrier,
/// else `R/2` (or `R - 1` when `R <= 0`).
pub(crate) fn inner_end<T: Real>(bg: &dyn Background<T>, grid: &NullGrid<T>, rho_in: Option<T>) -> Result<T, DiagnosticsError> {
    let rho_r = grid.r_interface;
    let x = match (rho_in, bg.center_offset(), bg.inner_cutoff()) {
        (Some(x), _, _) => x,
        (None, Some(c), _) => c,
        (None, None, Some(c)) if c < rho_r => c,
        _ if rho_r > T::zero() => rho_r * T::lit(0.5),
        _ => rho_r - T::one(),
    };
    if x < rho_r {
        Ok(x)
    } else {
        Err(DiagnosticsError::InvalidInput(format!("rho_in = {x} must be below R = {rho_r}")))
    }
}

/// Shared state for computing records on one grid.
struct Kernel<'a, T: Real> {
    grid: NullGrid<T>,
    layout: Layout,
    lf: T,
    opts: SeriesOptions<T>,
    geo: NodeGeometry<'a, T>,
    powers: Powers<T>,
    /// Rows spanned by the ingoing segment.
    n_in: usize,
}

impl<'a, T: Real> Kernel<'a, T> {
    fn new(
        bg: &'a dyn Background<T>,
        grid: NullGrid<T>,
        layout: Layout,
        ell: u32,
        opts: SeriesOptions<T>,
    ) -> Result<Self, DiagnosticsError> {
        opts.validate()?;
        grid.validate().map_err(|e| DiagnosticsError::InvalidInput(e.to_string()))?;
        let geo = NodeGeometry::new(bg, grid);
        let half = T::lit(0.5);
        let exps: Vec<T> = opts.p_values.iter().copied().chain(opts.gammas.iter().map(|&g| g - half)).collect();
        let powers = Powers::new(exps, &geo, &grid, bg.is_static());
        let rho_in = inner_end(bg, &grid, opts.rho_in)?;
        let n_in = ((grid.r_interface - rho_in) / grid.h).round().to_usize().unwrap_or(0).max(1);
        Ok(Kernel { grid, layout, lf: angular(ell), opts, geo, powers, n_in })
    }

    fn pointwise(&self, i: usize, row: &[T]) -> PointwiseSample<T> {
        let n = row.len();
        let jr = self.grid.interface_column(i).min(n - 1);
        let jm = (jr + n - 1) / 2;
        let (r_r, r1, r2) = (self.geo.get(i, jr).r, self.geo.get(i, jm).r, self.geo.get(i, n - 1).r);
        let (p1, p2) = (row[jm], row[n - 1]);
        let extrapolated = if r2 > r1 { (p2 * r2 - p1 * r1) / (r2 - r1) } else { p2 };
        PointwiseSample { u: self.grid.u(i), phi_at_r: row[jr] / r_r, psi_vmax: p2, psi_extrapolated: extrapolated }
    }

    fn outgoing(&self, w: &Window<T>, i: usize) -> Outgoing<T> {
        let n = w.rows[w.c].len();
        let jr = self.grid.interface_column(i);
        let np = self.opts.p_values.len();
        let ng = self.opts.gammas.len();
        let (com, tq) = (self.opts.commuted, self.opts.t_energy);
        let zeros = |on: bool| if on { vec![T::zero(); np] } else { Vec::new() };
        let mut out = Outgoing {
            e: T::zero(),
            ep: vec![T::zero(); np],
            psi1: zeros(com),
            theta0: zeros(com),
            tpsi: zeros(tq),
            e_t: T::zero(),
            sup: vec![T::zero(); ng],
            tail: TailEstimates {
                e: T::zero(),
                ep: vec![T::zero(); np],
                ep_psi1: zeros(com),
                ep_theta0: zeros(com),
                e_t: tq.then(T::zero),
            },
        };
        let mut pw = vec![T::zero(); np + ng];
        let h = self.grid.h;
        let lf = self.lf;
        let two = T::lit(2.0);
        for j in jr..n {
            let wt = if j == jr || j + 1 == n { h * T::lit(0.5) } else { h };
            let g = self.geo.get(i, j);
            let jet = w.jet(j);
            let ir = g.r.recip();
            self.powers.fill(i, j, g.r, &mut pw);
            let fe = sq(jet.dv - jet.psi * g.dr_dv * ir) + lf * sq(jet.psi * ir);
            out.e = out.e + wt * fe;
            let dv2 = sq(jet.dv);
            let x1 = g.r * g.r / g.omega2 * ((two * g.dr_dv * ir - g.domega2_dv / g.omega2) * jet.dv + jet.dvv);
            let x0 = g.dr_dv * jet.dv + g.r * jet.dvv;
            let dt = jet.duv + jet.dvv;
            for k in 0..np {
                out.ep[k] = out.ep[k] + wt * pw[k] * dv2;
                if com {
                    out.psi1[k] = out.psi1[k] + wt * pw[k] * sq(x1);
                    out.theta0[k] = out.theta0[k] + wt * pw[k] * sq(x0);
                }
                if tq {
                    out.tpsi[k] = out.tpsi[k] + wt * pw[k] * sq(dt);
                }
            }
            for k in 0..ng {
                out.sup[k] = out.sup[k].max(pw[np + k] * jet.psi.abs());
            }
            let mut ft = T::zero();
            if tq {
                let tr = g.t_r();
                let chi = jet.du + jet.dv - jet.psi * tr * ir;
                let dtr = g.d2r_dudv + g.d2r_dvdv;
                let dchi = dt - jet.dv * tr * ir - jet.psi * (dtr * ir - tr * g.dr_dv * ir * ir);
                ft = sq(dchi - chi * g.dr_dv * ir) + lf * sq(chi * ir);
                out.e_t = out.e_t + wt * ft;
            }
            if j + 1 == n {
                let rmax = g.r;
                let p_eff = |p: T| (T::lit(3.0) - p).max(T::lit(0.25));
                out.tail.e = fe * rmax;
                for k in 0..np {
                    let scale = rmax / p_eff(self.opts.p_values[k]);
                    out.tail.ep[k] = pw[k] * dv2 * scale;
                    if com {
                        out.tail.ep_psi1[k] = pw[k] * sq(x1) * scale;
                        out.tail.ep_theta0[k] = pw[k] * sq(x0) * scale;
                    }
                }
                if tq {
                    out.tail.e_t = Some(ft * rmax);
                }
            }
        }
        out
    }

    /// Integrands of `E` and `E[Tφ]` on the ingoing segment at node `(i, j)`.
    fn ingoing(&self, w: &Window<T>, i: usize, j: usize) -> (T, T) {
        if self.layout.axis[i] && j == self.layout.first_valid[i] {
            return (T::zero(), T::zero());
        }
        let g = self.geo.get(i, j);
        let jet = w.jet(j);
        let ir = g.r.recip();
        let lf = self.lf;
        let e = sq(jet.du - jet.psi * g.dr_du * ir) + lf * sq(jet.psi * ir);
        let et = if self.opts.t_energy {
            let tr = g.t_r();
            let chi = jet.du + jet.dv - jet.psi * tr * ir;
            let dtr = self.geo.d2r_dudu(i, j, &g) + g.d2r_dudv;
            let dchi = jet.duu + jet.duv - jet.du * tr * ir - jet.psi * (dtr * ir - tr * g.dr_du * ir * ir);
            sq(dchi - chi * g.dr_du * ir) + lf * sq(chi * ir)
        } else {
            T::zero()
        };
        (e, et)
    }

    fn finish_record(&self, i: usize, row: &[T], out: Outgoing<T>, e_in: T, et_in: T) -> EnergyRecord<T> {
        let pt = self.pointwise(i, row);
        let e = out.e + e_in;
        EnergyRecord {
            u: self.grid.u(i),
            e,
            e_outgoing: out.e,
            e_ingoing: e_in,
            ep_tilde: out.ep.iter().map(|&x| x + e).collect(),
            ep: out.ep,
            ep_psi1: out.psi1,
            ep_theta0: out.theta0,
            ep_tpsi: out.tpsi,
            e_t: self.opts.t_energy.then(|| out.e_t + et_in),
            pointwise_at_r: pt.phi_at_r,
            radiation_field: pt.psi_vmax,
            radiation_extrapolated: pt.psi_extrapolated,
            weighted_sup: out.sup,
            tail: out.tail,
        }
    }
}

struct Pending<T> {
    i0: usize,
    i_end: usize,
    jc: usize,
    row: Vec<T>,
    out: Outgoing<T>,
    e_in: T,
    et_in: T,
}

/// Accumulates an [`EnergySeries`] from rows delivered in order, holding at
/// most three rows plus the records whose ingoing segment is still open.
pub struct SeriesBuilder<'a, T: Real> {
    k: Kernel<'a, T>,
    ell: u32,
    last_row: usize,
    buf: VecDeque<Vec<T>>,
    next_row: usize,
    pending: VecDeque<Pending<T>>,
    records: Vec<EnergyRecord<T>>,
    pointwise: Vec<PointwiseSample<T>>,
}

impl<'a, T: Real> SeriesBuilder<'a, T> {
    pub fn new(
        bg: &'a dyn Background<T>,
        grid: NullGrid<T>,
        layout: Layout,
        ell: u32,
        opts: SeriesOptions<T>,
    ) -> Result<Self, DiagnosticsError> {
        let k = Kernel::new(bg, grid, layout, ell, opts)?;
        let last_row = grid.dims().0 - 1;
        if k.opts.energies && last_row < 2 {
            return Err(DiagnosticsError::InvalidInput("energies need at least 3 rows".into()));
        }
        Ok(SeriesBuilder {
            k,
            ell,
            last_row,
            buf: VecDeque::with_capacity(3),
            next_row: 0,
            pending: VecDeque::new(),
            records: Vec::new(),
            pointwise: Vec::new(),
        })
    }

    /// Feeds row `i`; rows must arrive as `0, 1, 2, …`.
    pub fn push_row(&mut self, i: usize, row: &[T]) -> Result<(), DiagnosticsError> {
        if i != self.next_row || i > self.last_row {
            return Err(DiagnosticsError::InvalidInput(format!("row {i} out of order")));
        }
        self.next_row += 1;
        if i % self.k.opts.stride == 0 {
            self.pointwise.push(self.k.pointwise(i, row));
        }
        if !self.k.opts.energies {
            return Ok(());
        }
        let mut slot = if self.buf.len() == 3 { self.buf.pop_front().unwrap_or_default() } else { Vec::new() };
        slot.clear();
        slot.extend_from_slice(row);
        self.buf.push_back(slot);
        if i >= 2 {
            if i == 2 {
                self.process(0, 0);
            }
            self.process(i - 1, 1);
        }
        Ok(())
    }

    /// Processes the last row and returns the series.
    pub fn finish(mut self) -> Result<EnergySeries<T>, DiagnosticsError> {
        if self.next_row != self.last_row + 1 {
            return Err(DiagnosticsError::InvalidInput(format!(
                "received {} of {} rows",
                self.next_row,
                self.last_row + 1
            )));
        }
        if self.k.opts.energies {
            self.process(self.last_row, 2);
        }
        Ok(EnergySeries {
            ell: self.ell,
            p_values: self.k.opts.p_values.clone(),
            gammas: self.k.opts.gammas.clone(),
            records: self.records,
            pointwise: self.pointwise,
        })
    }

    fn process(&mut self, i: usize, c: usize) {
        let first = i - c;
        let lo = &self.k.layout.first_valid;
        let w = Window {
            rows: [&self.buf[0], &self.buf[1], &self.buf[2]],
            lo: [lo[first], lo[first + 1], lo[first + 2]],
            c,
            h: self.k.grid.h,
        };
        let half = self.k.grid.h * T::lit(0.5);
        let h = self.k.grid.h;
        for p in self.pending.iter_mut() {
            let (e, et) = self.k.ingoing(&w, i, p.jc);
            let wt = if i == p.i_end { half } else { h };
            p.e_in = p.e_in + wt * e;
            p.et_in = p.et_in + wt * et;
        }
        if i % self.k.opts.stride == 0 && i + self.k.n_in <= self.last_row {
            let jc = self.k.grid.interface_column(i);
            let (e, et) = self.k.ingoing(&w, i, jc);
            self.pending.push_back(Pending {
                i0: i,
                i_end: i + self.k.n_in,
                jc,
                row: w.rows[c].to_vec(),
                out: self.k.outgoing(&w, i),
                e_in: half * e,
                et_in: half * et,
            });
        }
        while self.pending.front().is_some_and(|p| p.i_end == i) {
            if let Some(p) = self.pending.pop_front() {
                debug_assert!(p.i0 < i);
                let rec = self.k.finish_record(p.i0, &p.row, p.out, p.e_in, p.et_in);
                self.records.push(rec);
            }
        }
    }
}

/// Marches `evo` while accumulating its energy series.
pub fn energy_series<T: Real>(evo: &Evolution<T>, opts: SeriesOptions<T>) -> Result<EnergySeries<T>, DiagnosticsError> {
    let layout = evo.layout()?;
    let mut b = SeriesBuilder::new(evo.bg, evo.grid, layout, evo.ell, opts)?;
    let mut failure = None;
    evo.run_streaming(|i, row| {
        if let Err(e) = b.push_row(i, row) {
            failure = Some(e);
        }
        Ok(())
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    b.finish()
}

/// The energy series of a stored field.
pub fn energy_series_from_field<T: Real>(
    field: &ModeField<T>,
    bg: &dyn Background<T>,
    opts: SeriesOptions<T>,
) -> Result<EnergySeries<T>, DiagnosticsError> {
    let mut b = SeriesBuilder::new(bg, field.grid, field.layout.clone(), field.ell, opts)?;
    for i in 0..field.rows() {
        b.push_row(i, field.row(i))?;
    }
    b.finish()
}

/// All foliation quantities at one on-grid `u` of a stored field.
pub fn energy_record<T: Real>(
    field: &ModeField<T>,
    bg: &dyn Background<T>,
    u: T,
    opts: SeriesOptions<T>,
) -> Result<EnergyRecord<T>, DiagnosticsError> {
    let i0 = row_of(&field.grid, u)?;
    let k = Kernel::new(bg, field.grid, field.layout.clone(), field.ell, SeriesOptions { energies: true, ..opts })?;
    let i_end = i0 + k.n_in;
    if i_end >= field.rows() {
        return Err(DiagnosticsError::InvalidInput(format!(
            "the ingoing segment from u = {u} leaves the grid (needs row {i_end})"
        )));
    }
    let jc = field.grid.interface_column(i0);
    let half = field.grid.h * T::lit(0.5);
    let (mut e_in, mut et_in) = (T::zero(), T::zero());
    for i in i0..=i_end {
        let w = Window::of_field(field, i)?;
        let (e, et) = k.ingoing(&w, i, jc);
        let wt = if i == i0 || i == i_end { half } else { field.grid.h };
        e_in = e_in + wt * e;
        et_in = et_in + wt * et;
    }
    let out = k.outgoing(&Window::of_field(field, i0)?, i0);
    Ok(k.finish_record(i0, field.row(i0), out, e_in, et_in))
}

/// The unweighted foliation energy `E[φ](u)`.
pub fn foliation_energy<T: Real>(field: &ModeField<T>, bg: &dyn Background<T>, u: T) -> Result<T, DiagnosticsError> {
    let opts = SeriesOptions { p_values: Vec::new(), ..SeriesOptions::default() };
    Ok(energy_record(field, bg, u, opts)?.e)
}

/// `E_p[target](u) = ∫_{C_u} r^p |∂_v target|² dv`, with its tail estimate.
pub fn weighted_energy<T: Real>(
    field: &ModeField<T>,
    bg: &dyn Background<T>,
    u: T,
    p: T,
    target: WeightTarget,
) -> Result<(T, T), DiagnosticsError> {
    check_exponent(p, "p")?;
    let i = row_of(&field.grid, u)?;
    let opts = SeriesOptions {
        p_values: vec![p],
        commuted: matches!(target, WeightTarget::Psi1 | WeightTarget::Theta0),
        t_energy: target == WeightTarget::TPsi,
        ..SeriesOptions::default()
    };
    let k = Kernel::new(bg, field.grid, field.layout.clone(), field.ell, opts)?;
    let out = k.outgoing(&Window::of_field(field, i)?, i);
    Ok(match target {
        WeightTarget::Psi => (out.ep[0], out.tail.ep[0]),
        WeightTarget::Psi1 => (out.psi1[0], out.tail.ep_psi1[0]),
        WeightTarget::Theta0 => (out.theta0[0], out.tail.ep_theta0[0]),
        WeightTarget::TPsi => (out.tpsi[0], out.tail.ep[0]),
    })
}
