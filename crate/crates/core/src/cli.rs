//! Run configuration, orchestration and persistence behind the `nullwave` binary.
//!
//! A run is described by one TOML file ([`RunConfig`]). Outputs go to
//! `output.dir`, or to `$NULLWAVE_OUT` when that is set:
//!
//! * `series_l{ℓ}.csv`: one row per energy record,
//! * `pointwise_l{ℓ}.csv`: one row per sampled `u`,
//! * `report.json`: assumption reports, fits, inequality checks and identities,
//! * `field_l{ℓ}.f64` + `field_l{ℓ}.txt` when `output.dump_field` is set.
//!
//! Every file is written once, to a temporary name that is then renamed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::background::{
    verify_h0, Background, H0Report, Minkowski, ReissnerNordstrom, SampleRegion, DEFAULT_H0_CEILING,
};
use crate::diagnostics::{
    energy_boundedness_check, energy_series, energy_series_from_field, hardy_check_ingoing, hardy_check_outgoing,
    iled_check, multiplier_identity_residual, pointwise_from_energy_check, t_boundedness_check, EnergySeries,
    Identity, IdentityResidual, InequalityReport, SeriesOptions, BOUNDEDNESS_CEILING, HARDY_INGOING_CONSTANT,
    HARDY_OUTGOING_CONSTANT, ILED_CEILING, MAX_WEIGHT_EXPONENT, POINTWISE_CEILING,
};
use crate::error::{CliError, FitError};
use crate::evolve::{convergence_order, evolve_mode, ConvergenceReport, Evolution, InitialData, ModeField, NullGrid, Profile};
use crate::potential::{
    verify_h1, verify_h3, AssumptionReport, Builtin, Coefficient, PotentialSet, COEFFICIENT_NAMES,
    DEFAULT_POTENTIAL_CEILING,
};
use crate::ratefit::{
    beta, compare_with, fit_exponent, upper_envelope, Claim, FitResult, Tolerance, Verdict, DEFAULT_C_TOL,
};

/// First line of every series CSV.
pub const CSV_SCHEMA: &str = "# nullwave-series v1";

/// First line of every field-dump header.
pub const FIELD_SCHEMA: &str = "# nullwave-field v1";

pub const REPORT_SCHEMA: &str = "nullwave-report v1";

/// Environment variable overriding `output.dir`.
pub const OUTPUT_ENV: &str = "NULLWAVE_OUT";

/// Largest `|ε|` accepted: beyond it the potential is no longer perturbative.
pub const MAX_EPSILON: f64 = 0.5;

/// Largest grid (in nodes) that is held in memory for field-based checks or dumps.
pub const MAX_STORED_NODES: usize = 60_000_000;

/// Accepted band for measured convergence orders.
pub const ORDER_BAND: (f64, f64) = (1.8, 2.2);

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackgroundSpec {
    Minkowski,
    Rn { mass: f64, charge: f64 },
}

impl BackgroundSpec {
    pub fn build(&self) -> Result<Box<dyn Background<f64>>, CliError> {
        Ok(match *self {
            BackgroundSpec::Minkowski => Box::new(Minkowski),
            BackgroundSpec::Rn { mass, charge } => Box::new(ReissnerNordstrom::new(mass, charge)?),
        })
    }
}

/// A closed-form coefficient with analytic derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builtin", rename_all = "snake_case", deny_unknown_fields)]
pub enum BuiltinSpec {
    SinUPlusLogR,
    SinLogUPlusLogR,
    RadialPower { amplitude: f64, exponent: f64 },
    DampedOscillation { decay: f64 },
}

/// One coefficient: a number, an expression in `u, v, r, t`, or a built-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefficientSpec {
    Constant(f64),
    Expression(String),
    Builtin(BuiltinSpec),
}

impl Default for CoefficientSpec {
    fn default() -> Self {
        CoefficientSpec::Constant(0.0)
    }
}

impl CoefficientSpec {
    fn build(&self, name: &str) -> Result<Coefficient<f64>, CliError> {
        Ok(match self {
            CoefficientSpec::Constant(c) if *c == 0.0 => Coefficient::Zero,
            CoefficientSpec::Constant(c) => Coefficient::Constant(*c),
            CoefficientSpec::Expression(text) => Coefficient::parse(name, text)?,
            CoefficientSpec::Builtin(b) => Coefficient::Builtin(match *b {
                BuiltinSpec::SinUPlusLogR => Builtin::SinUPlusLogR,
                BuiltinSpec::SinLogUPlusLogR => Builtin::SinLogUPlusLogR,
                BuiltinSpec::RadialPower { amplitude, exponent } => Builtin::RadialPower { amplitude, exponent },
                BuiltinSpec::DampedOscillation { decay } => Builtin::DampedOscillation { decay },
            }),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub epsilon: f64,
    #[serde(default)]
    pub w0: CoefficientSpec,
    #[serde(default)]
    pub w1: CoefficientSpec,
    #[serde(default)]
    pub q: CoefficientSpec,
    #[serde(default, rename = "W0")]
    pub big_w0: CoefficientSpec,
    #[serde(default, rename = "W1")]
    pub big_w1: CoefficientSpec,
    #[serde(default, rename = "Q")]
    pub big_q: CoefficientSpec,
}

impl PotentialSpec {
    pub fn build(&self) -> Result<PotentialSet<f64>, CliError> {
        let specs = [&self.w0, &self.w1, &self.q, &self.big_w0, &self.big_w1, &self.big_q];
        let mut c = Vec::with_capacity(6);
        for (spec, name) in specs.into_iter().zip(COEFFICIENT_NAMES) {
            c.push(spec.build(name)?);
        }
        let mut c = c.into_iter();
        let mut next = || c.next().unwrap_or_default();
        Ok(PotentialSet {
            epsilon: self.epsilon,
            w0: next(),
            w1: next(),
            q: next(),
            big_w0: next(),
            big_w1: next(),
            big_q: next(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "defaults::u0")]
    pub u0: f64,
    #[serde(default = "defaults::u_f", rename = "uF")]
    pub u_f: f64,
    #[serde(default = "defaults::v0")]
    pub v0: f64,
    #[serde(default = "defaults::vmax")]
    pub vmax: f64,
    #[serde(default = "defaults::h")]
    pub h: f64,
    #[serde(default = "defaults::r", rename = "R")]
    pub r: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            u0: defaults::u0(),
            u_f: defaults::u_f(),
            v0: defaults::v0(),
            vmax: defaults::vmax(),
            h: defaults::h(),
            r: defaults::r(),
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<NullGrid<f64>, CliError> {
        Ok(NullGrid::new(self.u0, self.u_f, self.v0, self.vmax, self.h, self.r)?)
    }

    fn nodes(&self) -> usize {
        let n = |a: f64, b: f64| ((b - a) / self.h).round().max(0.0) as usize + 1;
        n(self.u0, self.u_f).saturating_mul(n(self.v0, self.vmax))
    }

    /// `x` moved to the nearest grid row.
    fn snap(&self, x: f64) -> f64 {
        self.u0 + ((x - self.u0) / self.h).round() * self.h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Zero,
    Gaussian,
    CompactPolynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub family: Family,
    #[serde(default = "defaults::one")]
    pub amplitude: f64,
    #[serde(default)]
    pub center: f64,
    #[serde(default = "defaults::one")]
    pub width: f64,
}

impl ProfileSpec {
    fn build(&self) -> Profile<f64> {
        let (amplitude, center, width) = (self.amplitude, self.center, self.width);
        match self.family {
            Family::Zero => Profile::Zero,
            Family::Gaussian => Profile::Gaussian { amplitude, center, width },
            Family::CompactPolynomial => Profile::CompactPolynomial { amplitude, center, width },
        }
    }
}

/// Outgoing data on `u = u0`, optionally with ingoing data on `v = v0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub family: Family,
    #[serde(default = "defaults::one")]
    pub amplitude: f64,
    #[serde(default)]
    pub center: f64,
    #[serde(default = "defaults::one")]
    pub width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingoing: Option<ProfileSpec>,
}

impl DataSpec {
    pub fn build(&self) -> InitialData<f64> {
        let outgoing =
            ProfileSpec { family: self.family, amplitude: self.amplitude, center: self.center, width: self.width };
        InitialData {
            outgoing: outgoing.build(),
            ingoing: self.ingoing.map(|p| p.build()).unwrap_or(Profile::Zero),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSpec {
    #[serde(default = "defaults::p_values")]
    pub p: Vec<f64>,
    #[serde(default)]
    pub gammas: Vec<f64>,
    /// Rows between samples.
    #[serde(default = "defaults::stride")]
    pub stride: usize,
    #[serde(default = "defaults::yes")]
    pub energies: bool,
    #[serde(default)]
    pub commuted: bool,
    #[serde(default)]
    pub t_energy: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_in: Option<f64>,
    /// Records whose `v > v_max` tail estimate exceeds this share of the value are not fitted.
    #[serde(default = "defaults::tail_share")]
    pub tail_share: f64,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        DiagnosticsSpec {
            p: defaults::p_values(),
            gammas: Vec::new(),
            stride: defaults::stride(),
            energies: true,
            commuted: false,
            t_energy: false,
            rho_in: None,
            tail_share: defaults::tail_share(),
        }
    }
}

impl DiagnosticsSpec {
    pub fn series_options(&self) -> SeriesOptions<f64> {
        SeriesOptions {
            p_values: if self.energies { self.p.clone() } else { Vec::new() },
            gammas: if self.energies { self.gammas.clone() } else { Vec::new() },
            stride: self.stride,
            energies: self.energies,
            commuted: self.commuted,
            t_energy: self.t_energy,
            rho_in: self.rho_in,
        }
    }

    /// Column names of the per-record CSV, in order.
    pub fn record_columns(&self) -> Vec<String> {
        let mut c: Vec<String> = ["u", "E", "E_out", "E_in"].iter().map(|s| s.to_string()).collect();
        if !self.energies {
            return c;
        }
        let ps = |prefix: &str, suffix: &str| -> Vec<String> {
            self.p.iter().map(|p| format!("{prefix}{p}{suffix}")).collect()
        };
        c.extend(ps("E_p", ""));
        c.extend(ps("Etilde_p", ""));
        if self.commuted {
            c.extend(ps("E_p", "_Psi1"));
            c.extend(ps("E_p", "_Theta0"));
        }
        if self.t_energy {
            c.extend(ps("E_p", "_Tpsi"));
            c.push("E_T".into());
        }
        c.extend(["phi_R", "psi_vmax", "psi_scri"].iter().map(|s| s.to_string()));
        c.extend(self.gammas.iter().map(|g| format!("sup_g{g}")));
        c.push("tail_E".into());
        c.extend(ps("tail_E_p", ""));
        if self.commuted {
            c.extend(ps("tail_E_p", "_Psi1"));
            c.extend(ps("tail_E_p", "_Theta0"));
        }
        if self.t_energy {
            c.push("tail_E_T".into());
        }
        c
    }
}

pub const POINTWISE_COLUMNS: [&str; 4] = ["u", "phi_R", "psi_vmax", "psi_scri"];

/// A decay fit requested in the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    /// A column of the series or pointwise CSV, e.g. `E`, `E_T`, `phi_R`, `psi_scri`.
    pub quantity: String,
    pub claim: Claim,
    /// Modes to fit; all configured modes when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    /// Fit the running supremum of `|y|` from the right instead of `|y|`.
    #[serde(default)]
    pub envelope: bool,
    /// Fixed tolerance replacing the theorem tolerance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksSpec {
    #[serde(default)]
    pub hardy: bool,
    #[serde(default)]
    pub hardy_in: bool,
    #[serde(default)]
    pub iled: bool,
    #[serde(default = "defaults::yes")]
    pub boundedness: bool,
    #[serde(default)]
    pub boundedness_t: bool,
    #[serde(default)]
    pub pointwise: bool,
    #[serde(default)]
    pub identities: bool,
    /// Grid for the checks that need the stored field; the run grid when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    /// `[u1, u2]` for the Hardy checks and identities; the middle 80% of the grid when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    #[serde(default = "defaults::hardy_q")]
    pub q: Vec<f64>,
    #[serde(default = "defaults::hardy_constant")]
    pub hardy_constant: f64,
    #[serde(default = "defaults::hardy_in_constant")]
    pub hardy_in_constant: f64,
    #[serde(default = "defaults::iled_sigma")]
    pub iled_sigma: f64,
    /// Start times for the ILED sweep; four evenly spaced rows in the first half when empty.
    #[serde(default)]
    pub iled_u1: Vec<f64>,
    #[serde(default = "defaults::iled_ceiling")]
    pub iled_ceiling: f64,
    #[serde(default = "defaults::boundedness_ceiling")]
    pub boundedness_ceiling: f64,
    #[serde(default = "defaults::pointwise_ceiling")]
    pub pointwise_ceiling: f64,
    #[serde(default = "defaults::identity_p")]
    pub identity_p: Vec<f64>,
    #[serde(default = "defaults::identity_tolerance")]
    pub identity_tolerance: f64,
}

impl Default for ChecksSpec {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

impl ChecksSpec {
    fn needs_field(&self) -> bool {
        self.hardy || self.hardy_in || self.iled || self.identities
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssumptionsSpec {
    /// Count failed assumption checks as failed checks of the run.
    #[serde(default)]
    pub enforce: bool,
    #[serde(default = "defaults::h0_ceiling")]
    pub h0_ceiling: f64,
    #[serde(default = "defaults::potential_ceiling")]
    pub ceiling: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<[f64; 2]>,
    #[serde(default = "defaults::n_u")]
    pub n_u: usize,
    #[serde(default = "defaults::n_rho")]
    pub n_rho: usize,
    /// Restrict samples to `ρ ≤ cone · u`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cone: Option<f64>,
}

impl Default for AssumptionsSpec {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSpec {
    /// `(u, v)` probes on the coarse lattice.
    #[serde(default)]
    pub probes: Vec<[f64; 2]>,
    /// Coarse-lattice thinning for the max-norm estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    /// Mode whose pointwise series is fitted.
    #[serde(default)]
    pub mode: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Output directory; `out/<name>` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default)]
    pub dump_field: bool,
}

/// A complete, deterministic description of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    /// Theorem-tolerance coefficient of `√ε`.
    #[serde(default = "defaults::c_tol")]
    pub c_tol: f64,
    #[serde(default = "defaults::modes")]
    pub modes: Vec<u32>,
    pub background: BackgroundSpec,
    pub potential: PotentialSpec,
    #[serde(default)]
    pub grid: GridSpec,
    pub data: DataSpec,
    #[serde(default)]
    pub diagnostics: DiagnosticsSpec,
    #[serde(default)]
    pub fits: Vec<FitSpec>,
    #[serde(default)]
    pub checks: ChecksSpec,
    #[serde(default)]
    pub assumptions: AssumptionsSpec,
    #[serde(default)]
    pub convergence: ConvergenceSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

mod defaults {
    pub fn u0() -> f64 {
        1.0
    }
    pub fn u_f() -> f64 {
        401.0
    }
    pub fn v0() -> f64 {
        11.0
    }
    pub fn vmax() -> f64 {
        2001.0
    }
    pub fn h() -> f64 {
        0.05
    }
    pub fn r() -> f64 {
        10.0
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn yes() -> bool {
        true
    }
    pub fn p_values() -> Vec<f64> {
        vec![0.0, 1.0, 2.0]
    }
    pub fn stride() -> usize {
        1
    }
    pub fn tail_share() -> f64 {
        0.05
    }
    pub fn modes() -> Vec<u32> {
        vec![0]
    }
    pub fn c_tol() -> f64 {
        super::DEFAULT_C_TOL
    }
    pub fn hardy_q() -> Vec<f64> {
        vec![0.5, 1.0, 1.5]
    }
    pub fn hardy_constant() -> f64 {
        super::HARDY_OUTGOING_CONSTANT
    }
    pub fn hardy_in_constant() -> f64 {
        super::HARDY_INGOING_CONSTANT
    }
    pub fn iled_sigma() -> f64 {
        1.5
    }
    pub fn iled_ceiling() -> f64 {
        super::ILED_CEILING
    }
    pub fn boundedness_ceiling() -> f64 {
        super::BOUNDEDNESS_CEILING
    }
    pub fn pointwise_ceiling() -> f64 {
        super::POINTWISE_CEILING
    }
    pub fn identity_p() -> Vec<f64> {
        vec![1.0]
    }
    pub fn identity_tolerance() -> f64 {
        1e-2
    }
    pub fn h0_ceiling() -> f64 {
        super::DEFAULT_H0_CEILING
    }
    pub fn potential_ceiling() -> f64 {
        super::DEFAULT_POTENTIAL_CEILING
    }
    pub fn n_u() -> usize {
        41
    }
    pub fn n_rho() -> usize {
        64
    }
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => config_error(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let eps = self.potential.epsilon;
        if !eps.is_finite() || eps.abs() > MAX_EPSILON {
            return Err(config_error(format!("epsilon = {eps} outside [-{MAX_EPSILON}, {MAX_EPSILON}]")));
        }
        if let Some(&p) = self.diagnostics.p.iter().find(|&&p| !(p >= 0.0 && p <= MAX_WEIGHT_EXPONENT)) {
            return Err(config_error(format!("p = {p} outside [0, {MAX_WEIGHT_EXPONENT}]")));
        }
        self.diagnostics.series_options().validate().map_err(|e| config_error(e.to_string()))?;
        if !(self.diagnostics.tail_share > 0.0) {
            return Err(config_error("diagnostics.tail_share must be positive"));
        }
        if !(self.c_tol >= 0.0 && self.c_tol.is_finite()) {
            return Err(config_error(format!("c_tol = {} must be non-negative", self.c_tol)));
        }
        if self.modes.is_empty() {
            return Err(config_error("modes must not be empty"));
        }
        let mut modes = self.modes.clone();
        modes.sort_unstable();
        modes.dedup();
        if modes.len() != self.modes.len() {
            return Err(config_error("modes must be distinct"));
        }
        self.grid.build()?;
        self.background.build()?;
        self.potential.build()?;
        let data = self.data.build();
        for p in [data.outgoing, data.ingoing] {
            if let Profile::Gaussian { width, .. } | Profile::CompactPolynomial { width, .. } = p {
                if !(width > 0.0) {
                    return Err(config_error(format!("data width {width} must be positive")));
                }
            }
        }

        let columns = self.diagnostics.record_columns();
        for f in &self.fits {
            if !columns.contains(&f.quantity) && !POINTWISE_COLUMNS.contains(&f.quantity.as_str()) {
                return Err(config_error(format!("fit quantity '{}' is not a recorded column", f.quantity)));
            }
            if let Some([lo, hi]) = f.window {
                if !(lo > 0.0 && hi > lo) {
                    return Err(config_error(format!("fit window [{lo}, {hi}] is invalid")));
                }
            }
            if let Some(ms) = &f.modes {
                if let Some(m) = ms.iter().find(|m| !self.modes.contains(m)) {
                    return Err(config_error(format!("fit mode {m} is not among the evolved modes")));
                }
            }
        }

        let c = &self.checks;
        if c.needs_field() {
            let g = c.grid.unwrap_or(self.grid);
            g.build()?;
            if g.nodes() > MAX_STORED_NODES {
                return Err(config_error(format!(
                    "field-based checks need the stored field: {} nodes exceed {MAX_STORED_NODES}; set checks.grid",
                    g.nodes()
                )));
            }
            if let Some(&q) = c.q.iter().find(|&&q| !(q < 2.0)) {
                return Err(config_error(format!("Hardy exponent q = {q} must be below 2")));
            }
        }
        if self.output.dump_field && self.grid.nodes() > MAX_STORED_NODES {
            return Err(config_error(format!("field dump of {} nodes exceeds {MAX_STORED_NODES}", self.grid.nodes())));
        }
        if (c.boundedness_t) && !self.diagnostics.t_energy {
            return Err(config_error("checks.boundedness_t needs diagnostics.t_energy"));
        }
        if c.pointwise {
            for g in &self.diagnostics.gammas {
                if !self.diagnostics.p.iter().any(|p| (p - 2.0 * g).abs() < 1e-9) {
                    return Err(config_error(format!("checks.pointwise needs p = 2 gamma = {} in diagnostics.p", 2.0 * g)));
                }
            }
        }
        let a = &self.assumptions;
        if a.n_u == 0 || a.n_rho < 2 {
            return Err(config_error("assumptions need n_u >= 1 and n_rho >= 2"));
        }
        Ok(())
    }

    /// The output directory: `$NULLWAVE_OUT` if set, else `output.dir`, else `out/<name>`.
    pub fn output_dir(&self) -> PathBuf {
        if let Some(dir) = std::env::var_os(OUTPUT_ENV).filter(|d| !d.is_empty()) {
            return PathBuf::from(dir);
        }
        match &self.output.dir {
            Some(d) => PathBuf::from(d),
            None => PathBuf::from("out").join(&self.name),
        }
    }

    /// Default sample region for the assumption checkers, derived from the grid.
    pub fn sample_region(&self) -> SampleRegion<f64> {
        let a = &self.assumptions;
        let g = &self.grid;
        let u = a.u.unwrap_or([g.u0.max(1.0), g.u_f.max(g.u0.max(1.0))]);
        let rho_lo = g.r.max(1.0);
        let rho = a.rho.unwrap_or([rho_lo, (g.vmax - g.u0).max(100.0 * rho_lo)]);
        let region = SampleRegion::new((u[0], u[1]), (rho[0], rho[1]), a.n_u, a.n_rho);
        match a.cone {
            Some(c) => region.with_cone(c),
            None => region,
        }
    }
}

// ---------------------------------------------------------------------------
// Tables and CSV
// ---------------------------------------------------------------------------

/// Named columns of `f64` with `# key = value` metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn records(series: &EnergySeries<f64>, spec: &DiagnosticsSpec, meta: Vec<(String, String)>) -> Table {
        let columns = spec.record_columns();
        let rows = series
            .records
            .iter()
            .map(|r| {
                let mut row = vec![r.u, r.e, r.e_outgoing, r.e_ingoing];
                if spec.energies {
                    row.extend(&r.ep);
                    row.extend(&r.ep_tilde);
                    if spec.commuted {
                        row.extend(&r.ep_psi1);
                        row.extend(&r.ep_theta0);
                    }
                    if spec.t_energy {
                        row.extend(&r.ep_tpsi);
                        row.push(r.e_t.unwrap_or(f64::NAN));
                    }
                    row.extend([r.pointwise_at_r, r.radiation_field, r.radiation_extrapolated]);
                    row.extend(&r.weighted_sup);
                    row.push(r.tail.e);
                    row.extend(&r.tail.ep);
                    if spec.commuted {
                        row.extend(&r.tail.ep_psi1);
                        row.extend(&r.tail.ep_theta0);
                    }
                    if spec.t_energy {
                        row.push(r.tail.e_t.unwrap_or(f64::NAN));
                    }
                }
                row
            })
            .collect();
        Table { meta, columns, rows }
    }

    pub fn pointwise(series: &EnergySeries<f64>, meta: Vec<(String, String)>) -> Table {
        Table {
            meta,
            columns: POINTWISE_COLUMNS.iter().map(|s| s.to_string()).collect(),
            rows: series.pointwise.iter().map(|s| vec![s.u, s.phi_at_r, s.psi_vmax, s.psi_extrapolated]).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_SCHEMA}\n");
        for (k, v) in &self.meta {
            out.push_str(&format!("# {k} = {v}\n"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(|x| format!("{x:e}"))).expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv"));
        out
    }

    pub fn from_csv(text: &str) -> Result<Table, CliError> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CSV_SCHEMA) {
            return Err(config_error(format!("missing '{CSV_SCHEMA}' header")));
        }
        let mut meta = Vec::new();
        for line in text.lines().skip(1).take_while(|l| l.starts_with('#')) {
            if let Some((k, v)) = line.trim_start_matches('#').split_once('=') {
                meta.push((k.trim().to_string(), v.trim().to_string()));
            }
        }
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let columns: Vec<String> =
            r.headers().map_err(|e| config_error(e.to_string()))?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| config_error(e.to_string()))?;
            let row = rec
                .iter()
                .map(|x| x.trim().parse::<f64>().map_err(|e| config_error(format!("bad number '{x}': {e}"))))
                .collect::<Result<Vec<f64>, _>>()?;
            rows.push(row);
        }
        Ok(Table { meta, columns, rows })
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// `(u, value)` for column `name`, dropping rows whose `tail_<name>`
    /// column exceeds `tail_share · value`.
    pub fn column(&self, name: &str, tail_share: f64) -> Option<Vec<(f64, f64)>> {
        let k = self.index(name)?;
        let t = self.index(&format!("tail_{name}"));
        Some(
            self.rows
                .iter()
                .filter(|row| t.map_or(true, |t| row[t] <= tail_share * row[k]))
                .map(|row| (row[0], row[k]))
                .collect(),
        )
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionsReport {
    pub h0: H0Report<f64>,
    pub h1: AssumptionReport<f64>,
    pub h3: AssumptionReport<f64>,
}

impl AssumptionsReport {
    pub fn pass(&self) -> bool {
        self.h0.pass && self.h1.pass && self.h3.pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitEntry {
    pub quantity: String,
    pub envelope: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<FitResult<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityEntry {
    pub residual: IdentityResidual<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeReport {
    pub ell: u32,
    pub records: usize,
    pub samples: usize,
    pub fits: Vec<FitEntry>,
    pub checks: Vec<InequalityReport<f64>>,
    pub identities: Vec<IdentityEntry>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub schema: &'static str,
    pub name: String,
    pub epsilon: f64,
    pub background: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assumptions: Option<AssumptionsReport>,
    pub modes: Vec<ModeReport>,
    pub pass: bool,
}

/// Everything a run produced, before or after it was written.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: RunReport,
    pub series: Vec<EnergySeries<f64>>,
    pub files: Vec<PathBuf>,
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |source| CliError::Io { path: path.display().to_string(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io(e)
    })
}

/// Runs (H0), (H1) and (H3) over the configured sample region.
pub fn check_assumptions(cfg: &RunConfig) -> Result<AssumptionsReport, CliError> {
    let bg = cfg.background.build()?;
    let ps = cfg.potential.build()?;
    let region = cfg.sample_region();
    let a = &cfg.assumptions;
    Ok(AssumptionsReport {
        h0: verify_h0(bg.as_ref(), &region, a.h0_ceiling)?,
        h1: verify_h1(&ps, bg.as_ref(), &region, a.ceiling)?,
        h3: verify_h3(&ps, bg.as_ref(), &region, a.ceiling)?,
    })
}

fn fit_entry(
    records: &Table,
    pointwise: &Table,
    spec: &FitSpec,
    epsilon: f64,
    c_tol: f64,
    tail_share: f64,
) -> FitEntry {
    let attempt = || -> Result<FitResult<f64>, FitError> {
        let mut pts = records
            .column(&spec.quantity, tail_share)
            .or_else(|| pointwise.column(&spec.quantity, tail_share))
            .ok_or_else(|| FitError::MissingQuantity(spec.quantity.clone()))?;
        if spec.envelope {
            pts = upper_envelope(&pts);
        } else {
            pts.iter_mut().for_each(|p| p.1 = p.1.abs());
        }
        let fit = fit_exponent(&pts, spec.window.map(|[a, b]| (a, b)))?;
        let tol = match spec.tolerance {
            Some(t) => Tolerance::Fixed(t),
            None => Tolerance::Theorem { c_tol },
        };
        Ok(compare_with(&fit, spec.claim, epsilon, tol))
    };
    let gated_out = || {
        let all = records.column(&spec.quantity, f64::MAX).map_or(0, |c| c.len());
        let kept = records.column(&spec.quantity, tail_share).map_or(0, |c| c.len());
        all - kept
    };
    match attempt() {
        Err(e @ FitError::TooFewPoints { .. }) if gated_out() > 0 => FitEntry {
            quantity: spec.quantity.clone(),
            envelope: spec.envelope,
            result: None,
            error: Some(format!(
                "{e}; {} records dropped because the tail beyond vmax exceeds {tail_share} of the value (increase vmax)",
                gated_out()
            )),
            pass: false,
        },
        Ok(r) => {
            let pass = matches!(r.verdict, Some(Verdict::MeetsBound | Verdict::SaturatesSharp));
            FitEntry { quantity: spec.quantity.clone(), envelope: spec.envelope, result: Some(r), error: None, pass }
        }
        Err(e) => FitEntry {
            quantity: spec.quantity.clone(),
            envelope: spec.envelope,
            result: None,
            error: Some(e.to_string()),
            pass: false,
        },
    }
}

fn table_meta(cfg: &RunConfig, ell: u32) -> Vec<(String, String)> {
    vec![
        ("name".into(), cfg.name.clone()),
        ("ell".into(), ell.to_string()),
        ("epsilon".into(), format!("{:e}", cfg.potential.epsilon)),
        ("background".into(), format!("{:?}", cfg.background)),
        ("h".into(), format!("{:e}", cfg.grid.h)),
        ("R".into(), format!("{:e}", cfg.grid.r)),
        ("vmax".into(), format!("{:e}", cfg.grid.vmax)),
    ]
}

fn field_checks(
    cfg: &RunConfig,
    field: &ModeField<f64>,
    bg: &dyn Background<f64>,
    ps: &PotentialSet<f64>,
) -> Result<(Vec<InequalityReport<f64>>, Vec<IdentityEntry>), CliError> {
    let c = &cfg.checks;
    let g = c.grid.unwrap_or(cfg.grid);
    let span = g.u_f - g.u0;
    let [u1, u2] = c.window.unwrap_or([g.u0 + 0.1 * span, g.u_f - 0.1 * span]);
    let (u1, u2) = (g.snap(u1), g.snap(u2));
    let mut checks = Vec::new();
    if c.hardy {
        for &q in &c.q {
            checks.push(hardy_check_outgoing(field, bg, u1, u2, q, c.hardy_constant)?);
        }
    }
    if c.hardy_in {
        for &q in &c.q {
            checks.push(hardy_check_ingoing(field, ps, bg, u1, u2, q, c.hardy_in_constant)?);
        }
    }
    if c.iled {
        let u1s: Vec<f64> = if c.iled_u1.is_empty() {
            (0..4).map(|k| g.snap(g.u0 + span * (0.05 + 0.15 * k as f64))).collect()
        } else {
            c.iled_u1.iter().map(|&u| g.snap(u)).collect()
        };
        checks.push(iled_check(field, bg, &u1s, c.iled_sigma, c.iled_ceiling)?);
    }
    let mut identities = Vec::new();
    if c.identities {
        for &p in &c.identity_p {
            for which in [Identity::Rp1, Identity::Rp2] {
                let residual = multiplier_identity_residual(field, bg, ps, u1, u2, p, which)?;
                let pass = residual.relative <= c.identity_tolerance;
                identities.push(IdentityEntry { residual, tolerance: c.identity_tolerance, pass });
            }
        }
    }
    Ok((checks, identities))
}

struct ModeOutput {
    report: ModeReport,
    series: EnergySeries<f64>,
    records: Table,
    pointwise: Table,
    field: Option<ModeField<f64>>,
}

fn run_mode(
    cfg: &RunConfig,
    bg: &dyn Background<f64>,
    ps: &PotentialSet<f64>,
    ell: u32,
) -> Result<ModeOutput, CliError> {
    let grid = cfg.grid.build()?;
    let data = cfg.data.build();
    let opts = cfg.diagnostics.series_options();
    let c = &cfg.checks;
    let field_on_run_grid = cfg.output.dump_field || (c.needs_field() && c.grid.is_none());

    log::info!("{}: evolving mode l = {ell}", cfg.name);
    let (series, field) = if field_on_run_grid {
        let field = evolve_mode(bg, ps, grid, data, ell)?;
        (energy_series_from_field(&field, bg, opts)?, Some(field))
    } else {
        (energy_series(&Evolution::new(bg, ps, grid, data, ell), opts)?, None)
    };

    let meta = table_meta(cfg, ell);
    let records = Table::records(&series, &cfg.diagnostics, meta.clone());
    let pointwise = Table::pointwise(&series, meta);

    let eps = cfg.potential.epsilon;
    let fits: Vec<FitEntry> = cfg
        .fits
        .iter()
        .filter(|f| f.modes.as_ref().map_or(true, |m| m.contains(&ell)))
        .map(|f| fit_entry(&records, &pointwise, f, eps, cfg.c_tol, cfg.diagnostics.tail_share))
        .collect();

    let mut checks = Vec::new();
    if cfg.diagnostics.energies && c.boundedness {
        checks.push(energy_boundedness_check(&series, c.boundedness_ceiling)?);
    }
    if c.boundedness_t {
        checks.push(t_boundedness_check(&series, c.boundedness_ceiling)?);
    }
    if c.pointwise {
        for &g in &cfg.diagnostics.gammas {
            checks.push(pointwise_from_energy_check(&series, g, c.pointwise_ceiling)?);
        }
    }
    let mut identities = Vec::new();
    if c.needs_field() {
        let (more, ids) = match (&field, c.grid) {
            (Some(f), None) => field_checks(cfg, f, bg, ps)?,
            (_, g) => {
                let g = g.unwrap_or(cfg.grid).build()?;
                let f = evolve_mode(bg, ps, g, data, ell)?;
                field_checks(cfg, &f, bg, ps)?
            }
        };
        checks.extend(more);
        identities = ids;
    }

    let pass = fits.iter().all(|f| f.pass)
        && checks.iter().all(|c| c.pass && !c.inconclusive)
        && identities.iter().all(|i| i.pass);
    let report = ModeReport {
        ell,
        records: series.records.len(),
        samples: series.pointwise.len(),
        fits,
        checks,
        identities,
        pass,
    };
    Ok(ModeOutput { report, series, records, pointwise, field: if cfg.output.dump_field { field } else { None } })
}

/// Raw little-endian `f64` dump of a field, row-major in `u`, plus its text header.
pub fn field_dump(field: &ModeField<f64>) -> (Vec<u8>, String) {
    let g = field.grid;
    let mut bytes = Vec::with_capacity(field.values().len() * 8);
    for x in field.values() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    let header = format!(
        "{FIELD_SCHEMA}\nrows = {}\ncols = {}\nu0 = {:e}\nuF = {:e}\nv0 = {:e}\nvmax = {:e}\nh = {:e}\nR = {:e}\nell = {}\n\
         dtype = f64-le\nlayout = row-major, row i is u = u0 + i h, column j is v = v0 + j h\n\
         invalid = entries left of each row's first valid column are 0\n",
        field.rows(),
        field.cols(),
        g.u0,
        g.u_f,
        g.v0,
        g.v_max,
        g.h,
        g.r_interface,
        field.ell
    );
    (bytes, header)
}

/// Executes a run without touching the file system.
pub fn execute(cfg: &RunConfig) -> Result<(RunReport, Vec<ModeOutputs>), CliError> {
    cfg.validate()?;
    let bg = cfg.background.build()?;
    let ps = cfg.potential.build()?;
    let assumptions = check_assumptions(cfg)?;
    for (name, pass) in [("H0", assumptions.h0.pass), ("H1", assumptions.h1.pass), ("H3", assumptions.h3.pass)] {
        if !pass {
            log::warn!("{}: assumption {name} fails on the sample region", cfg.name);
        }
    }
    let outputs: Vec<ModeOutput> = cfg
        .modes
        .par_iter()
        .map(|&ell| run_mode(cfg, bg.as_ref(), &ps, ell))
        .collect::<Result<_, _>>()?;
    let pass = outputs.iter().all(|o| o.report.pass) && (!cfg.assumptions.enforce || assumptions.pass());
    let report = RunReport {
        schema: REPORT_SCHEMA,
        name: cfg.name.clone(),
        epsilon: cfg.potential.epsilon,
        background: bg.name(),
        assumptions: Some(assumptions),
        modes: outputs.iter().map(|o| o.report.clone()).collect(),
        pass,
    };
    let outs = outputs
        .into_iter()
        .map(|o| ModeOutputs { series: o.series, records: o.records, pointwise: o.pointwise, field: o.field })
        .collect();
    Ok((report, outs))
}

/// Per-mode data produced by [`execute`].
pub struct ModeOutputs {
    pub series: EnergySeries<f64>,
    pub records: Table,
    pub pointwise: Table,
    pub field: Option<ModeField<f64>>,
}

fn to_json<S: Serialize>(value: &S) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

/// Executes a run and writes its artifacts under `out`.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<RunArtifacts, CliError> {
    let (report, modes) = execute(cfg)?;
    let mut files = Vec::new();
    let mut put = |name: String, bytes: &[u8]| -> Result<(), CliError> {
        let path = out.join(name);
        write_atomic(&path, bytes)?;
        files.push(path);
        Ok(())
    };
    for m in &modes {
        let ell = m.series.ell;
        if cfg.diagnostics.energies {
            put(format!("series_l{ell}.csv"), m.records.to_csv().as_bytes())?;
        }
        put(format!("pointwise_l{ell}.csv"), m.pointwise.to_csv().as_bytes())?;
        if let Some(f) = &m.field {
            let (bytes, header) = field_dump(f);
            put(format!("field_l{ell}.f64"), &bytes)?;
            put(format!("field_l{ell}.txt"), header.as_bytes())?;
        }
    }
    put("report.json".into(), &to_json(&report))?;
    Ok(RunArtifacts { report, series: modes.into_iter().map(|m| m.series).collect(), files })
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub beta: f64,
    pub target_pointwise: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pointwise: Option<FitResult<f64>>,
    pub target_radiation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radiation: Option<FitResult<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_pass: Option<bool>,
    pub errors: Vec<String>,
}

impl SweepPoint {
    pub fn pass(&self) -> bool {
        let ok = |f: &Option<FitResult<f64>>| f.as_ref().and_then(|f| f.verdict) == Some(Verdict::SaturatesSharp);
        self.errors.is_empty() && ok(&self.pointwise) && ok(&self.radiation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub schema: &'static str,
    pub name: String,
    pub points: Vec<SweepPoint>,
    pub pass: bool,
}

/// Removes repeated values, keeping the first occurrence; returns the repeats.
pub fn dedup_epsilons(eps: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut kept: Vec<f64> = Vec::new();
    let mut dropped = Vec::new();
    for &e in eps {
        if kept.iter().any(|&k| k == e) {
            dropped.push(e);
        } else {
            kept.push(e);
        }
    }
    (kept, dropped)
}

fn sweep_point(base: &RunConfig, eps: f64, out: &Path) -> SweepPoint {
    let b = beta(eps);
    let mut point = SweepPoint {
        epsilon: eps,
        beta: b,
        target_pointwise: -2.0 * b,
        pointwise: None,
        target_radiation: -b,
        radiation: None,
        run_pass: None,
        errors: Vec::new(),
    };
    let mut cfg = base.clone();
    cfg.name = format!("{}_eps{eps}", base.name);
    cfg.potential.epsilon = eps;
    if !cfg.modes.contains(&cfg.sweep.mode) {
        point.errors.push(format!("sweep mode {} is not evolved", cfg.sweep.mode));
        return point;
    }
    let artifacts = match run(&cfg, &out.join(format!("eps_{eps}"))) {
        Ok(a) => a,
        Err(e) => {
            point.errors.push(e.to_string());
            return point;
        }
    };
    point.run_pass = Some(artifacts.report.pass);
    let Some(series) = artifacts.series.iter().find(|s| s.ell == cfg.sweep.mode) else {
        point.errors.push("sweep mode missing from the run".into());
        return point;
    };
    let table = Table::pointwise(series, Vec::new());
    let empty = Table { meta: Vec::new(), columns: Vec::new(), rows: Vec::new() };
    for (column, claim) in [("phi_R", Claim::Sharp), ("psi_scri", Claim::SharpRadiation)] {
        let spec = FitSpec {
            quantity: column.into(),
            claim,
            modes: None,
            window: cfg.sweep.window,
            envelope: false,
            tolerance: None,
        };
        let entry = fit_entry(&empty, &table, &spec, eps, cfg.c_tol, cfg.diagnostics.tail_share);
        if let Some(e) = entry.error {
            point.errors.push(format!("{column}: {e}"));
        }
        match claim {
            Claim::Sharp => point.pointwise = entry.result,
            _ => point.radiation = entry.result,
        }
    }
    point
}

/// Runs `base` at every `ε` in parallel and tabulates the sharp-exponent fits.
///
/// Per-run failures are recorded in the point and do not stop the sweep.
pub fn sweep(base: &RunConfig, epsilons: &[f64], out: &Path) -> Result<SweepReport, CliError> {
    base.validate()?;
    let (eps, dropped) = dedup_epsilons(epsilons);
    if !dropped.is_empty() {
        log::warn!("duplicate epsilon values ignored: {dropped:?}");
    }
    if eps.len() < 2 {
        return Err(config_error(format!("a sweep needs at least two distinct epsilon values, got {eps:?}")));
    }
    if let Some(e) = eps.iter().find(|e| !e.is_finite() || e.abs() > MAX_EPSILON) {
        return Err(config_error(format!("epsilon = {e} outside [-{MAX_EPSILON}, {MAX_EPSILON}]")));
    }
    let points: Vec<SweepPoint> = eps.par_iter().map(|&e| sweep_point(base, e, out)).collect();
    let report = SweepReport {
        schema: REPORT_SCHEMA,
        name: base.name.clone(),
        pass: points.iter().all(SweepPoint::pass),
        points,
    };

    let mut w = csv::Writer::from_writer(Vec::new());
    let head = ["epsilon", "target_pointwise", "fit_pointwise", "verdict_pointwise", "target_radiation", "fit_radiation", "verdict_radiation"];
    w.write_record(head).expect("in-memory write");
    for p in &report.points {
        let fit = |f: &Option<FitResult<f64>>| f.as_ref().map_or("".into(), |f| format!("{:e}", f.exponent));
        let verdict = |f: &Option<FitResult<f64>>| {
            f.as_ref().and_then(|f| f.verdict).map_or("error".into(), |v| v.to_string())
        };
        w.write_record([
            format!("{:e}", p.epsilon),
            format!("{:e}", p.target_pointwise),
            fit(&p.pointwise),
            verdict(&p.pointwise),
            format!("{:e}", p.target_radiation),
            fit(&p.radiation),
            verdict(&p.radiation),
        ])
        .expect("in-memory write");
    }
    let mut csv_text = format!("{CSV_SCHEMA}\n# sweep = {}\n", base.name);
    csv_text.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("ascii"));
    write_atomic(&out.join("sweep.csv"), csv_text.as_bytes())?;
    write_atomic(&out.join("sweep.json"), &to_json(&report))?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Convergence
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeConvergence {
    pub ell: u32,
    pub report: ConvergenceReport<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceSummary {
    pub schema: &'static str,
    pub name: String,
    pub levels: [f64; 3],
    pub band: (f64, f64),
    pub modes: Vec<ModeConvergence>,
    pub pass: bool,
}

/// Measures the order of convergence of every mode over `h, h/2, h/4`.
///
/// A mode passes when its measured orders lie in [`ORDER_BAND`], or when the
/// differences are at rounding level (reported as inconclusive).
pub fn convergence(cfg: &RunConfig) -> Result<ConvergenceSummary, CliError> {
    cfg.validate()?;
    let bg = cfg.background.build()?;
    let ps = cfg.potential.build()?;
    let grid = cfg.grid.build()?;
    let data = cfg.data.build();
    let (nu1, nv1) = grid.dims();
    let stride = cfg.convergence.stride.unwrap_or(((nu1.max(nv1)) / 200).max(1));
    let probes: Vec<(f64, f64)> = cfg.convergence.probes.iter().map(|p| (p[0], p[1])).collect();
    let modes: Vec<ModeConvergence> = cfg
        .modes
        .par_iter()
        .map(|&ell| {
            let evo = Evolution::new(bg.as_ref(), &ps, grid, data, ell);
            let report = convergence_order(&evo, &probes, stride)?;
            let pass = report.inconclusive
                || report.order_range().is_some_and(|(lo, hi)| lo >= ORDER_BAND.0 && hi <= ORDER_BAND.1);
            Ok(ModeConvergence { ell, report, pass })
        })
        .collect::<Result<_, CliError>>()?;
    let h = cfg.grid.h;
    Ok(ConvergenceSummary {
        schema: REPORT_SCHEMA,
        name: cfg.name.clone(),
        levels: [h, h / 2.0, h / 4.0],
        band: ORDER_BAND,
        pass: modes.iter().all(|m| m.pass),
        modes,
    })
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    write_atomic(path, &to_json(value))
}

// ---------------------------------------------------------------------------
// Fitting stored series
// ---------------------------------------------------------------------------

/// Options of the `fit` subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRequest {
    pub claim: Claim,
    pub column: Option<String>,
    pub epsilon: Option<f64>,
    pub window: Option<(f64, f64)>,
    pub envelope: bool,
    pub tail_share: f64,
    pub c_tol: f64,
    pub tolerance: Option<f64>,
}

/// Column fitted for `claim` when none is named.
pub fn default_column(claim: Claim) -> &'static str {
    match claim {
        Claim::Energy | Claim::HigherModes => "E",
        Claim::TEnergy => "E_T",
        Claim::Radiation | Claim::SharpRadiation => "psi_scri",
        Claim::PointwiseR | Claim::Sharp => "phi_R",
        Claim::PointwiseBulk => "psi_vmax",
    }
}

/// Fits one column of a series CSV and compares it against `req.claim`.
pub fn fit_csv(text: &str, req: &FitRequest) -> Result<FitEntry, CliError> {
    let table = Table::from_csv(text)?;
    let column = req.column.clone().unwrap_or_else(|| default_column(req.claim).to_string());
    if table.index(&column).is_none() {
        return Err(config_error(format!("column '{column}' not in the CSV (have {:?})", table.columns)));
    }
    let epsilon = match req.epsilon {
        Some(e) => e,
        None => table
            .meta("epsilon")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| config_error("no epsilon given and none recorded in the CSV"))?,
    };
    let spec = FitSpec {
        quantity: column,
        claim: req.claim,
        modes: None,
        window: req.window.map(|(a, b)| [a, b]),
        envelope: req.envelope,
        tolerance: req.tolerance,
    };
    let empty = Table { meta: Vec::new(), columns: Vec::new(), rows: Vec::new() };
    Ok(fit_entry(&table, &empty, &spec, epsilon, req.c_tol, req.tail_share))
}

/// Summary lines for a finished run, one per fit and check.
pub fn summary_lines(report: &RunReport) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(a) = &report.assumptions {
        let m: BTreeMap<&str, bool> = [("H0", a.h0.pass), ("H1", a.h1.pass), ("H3", a.h3.pass)].into();
        out.push(format!("assumptions {m:?}"));
    }
    for m in &report.modes {
        for f in &m.fits {
            match &f.result {
                Some(r) => out.push(format!(
                    "l={} fit {} ({}): exponent {:.4} ± {:.1e}, target {:.4} ± {:.3}, {}",
                    m.ell,
                    f.quantity,
                    r.claim.map_or("-".into(), |c| c.to_string()),
                    r.exponent,
                    r.stderr,
                    r.target.unwrap_or(f64::NAN),
                    r.tolerance.unwrap_or(f64::NAN),
                    r.verdict.map_or("-".into(), |v| v.to_string())
                )),
                None => out.push(format!("l={} fit {}: {}", m.ell, f.quantity, f.error.as_deref().unwrap_or("?"))),
            }
        }
        for c in &m.checks {
            out.push(format!(
                "l={} check {}: lhs {:.4e} rhs {:.4e} C {} {}{}",
                m.ell,
                c.name,
                c.lhs,
                c.rhs,
                c.constant,
                if c.pass { "pass" } else { "FAIL" },
                if c.inconclusive { " (inconclusive)" } else { "" }
            ));
        }
        for i in &m.identities {
            out.push(format!(
                "l={} identity {:?} p={}: relative residual {:.2e} {}",
                m.ell,
                i.residual.identity,
                i.residual.p,
                i.residual.relative,
                if i.pass { "pass" } else { "FAIL" }
            ));
        }
    }
    out.push(format!("overall: {}", if report.pass { "pass" } else { "FAIL" }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
name = "small"
modes = [0, 1]

[background]
kind = "minkowski"

[potential]
epsilon = 0.05
w0 = 1.0

[grid]
u0 = 0.0
uF = 20.0
v0 = 0.0
vmax = 200.0
h = 0.1
R = 2.0

[data]
family = "compact-polynomial"
amplitude = 1.0
center = 3.0
width = 2.0

[diagnostics]
stride = 10

[[fits]]
quantity = "E"
claim = "energy"
window = [5.0, 19.0]

[checks]
hardy = true
hardy_in = true
iled = true
"#;

    #[test]
    fn config_round_trips() {
        let cfg = RunConfig::from_toml(SMALL).unwrap();
        let again = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.modes, vec![0, 1]);
        assert_eq!(cfg.checks.q, vec![0.5, 1.0, 1.5]);
        assert!(!cfg.checks.identities);
    }

    #[test]
    fn coefficient_forms() {
        let text = SMALL.replace("w0 = 1.0", "w0 = \"sin(u + log(r))\"\nW0 = { builtin = \"damped_oscillation\", decay = 0.5 }");
        let cfg = RunConfig::from_toml(&text).unwrap();
        let ps = cfg.potential.build().unwrap();
        assert!(matches!(ps.w0, Coefficient::Expression(_)));
        assert!(matches!(ps.big_w0, Coefficient::Builtin(Builtin::DampedOscillation { .. })));
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn validation_rejects() {
        let bad = |from: &str, to: &str| {
            let e = RunConfig::from_toml(&SMALL.replace(from, to)).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{e}");
            e.to_string()
        };
        assert!(bad("epsilon = 0.05", "epsilon = 0.6").contains("epsilon"));
        bad("stride = 10", "stride = 10\np = [0.0, 3.6]");
        bad("h = 0.1", "h = -0.1");
        bad("modes = [0, 1]", "modes = []");
        bad("quantity = \"E\"", "quantity = \"E_p7\"");
        bad("claim = \"energy\"", "claim = \"decay\"");
        bad("w0 = 1.0", "w0 = \"sin(\"");
        let msg = bad("[grid]", "[grid\n");
        assert!(msg.contains("line"), "{msg}");
        bad("kind = \"minkowski\"", "kind = \"rn\"\nmass = 1.0\ncharge = 2.0");
        bad("hardy = true", "hardy = true\nbogus = 1");
    }

    #[test]
    fn csv_round_trip_and_gating() {
        let t = Table {
            meta: vec![("epsilon".into(), "5e-2".into())],
            columns: vec!["u".into(), "E".into(), "tail_E".into()],
            rows: vec![vec![1.0, 2.0, 0.01], vec![2.0, 0.5, 0.4], vec![3.0, 0.25, 1e-300]],
        };
        let text = t.to_csv();
        assert!(text.starts_with(CSV_SCHEMA));
        let back = Table::from_csv(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.meta("epsilon"), Some("5e-2"));
        assert_eq!(back.column("E", 0.1).unwrap(), vec![(1.0, 2.0), (3.0, 0.25)]);
        assert!(Table::from_csv("u,E\n1,2\n").is_err());
    }

    #[test]
    fn epsilon_dedup_keeps_order() {
        let (kept, dropped) = dedup_epsilons(&[0.2, 0.05, 0.2, 0.0, 0.05]);
        assert_eq!(kept, vec![0.2, 0.05, 0.0]);
        assert_eq!(dropped, vec![0.2, 0.05]);
    }

    #[test]
    fn small_run_is_deterministic() {
        let cfg = RunConfig::from_toml(SMALL).unwrap();
        let dir = std::env::temp_dir().join(format!("nullwave-cli-test-{}", std::process::id()));
        let a = run(&cfg, &dir.join("a")).unwrap();
        let b = run(&cfg, &dir.join("b")).unwrap();
        assert_eq!(a.files.len(), 5);
        for (x, y) in a.files.iter().zip(&b.files) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
        }
        let m0 = &a.report.modes[0];
        assert_eq!(m0.checks.len(), 1 + 3 + 3 + 1);
        assert!(m0.checks.iter().all(|c| c.lhs.is_finite() && c.rhs.is_finite()), "{m0:?}");
        fs::remove_dir_all(&dir).ok();
    }
}
