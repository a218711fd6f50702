//! Characteristic evolution of spherically symmetric wave equations with
//! scale-critical inverse-square potentials, plus the energy, inequality and
//! decay-rate diagnostics used to study them.
//!
//! The numerical kernels are generic over the scalar type ([`scalar::Real`],
//! implemented for `f32` and `f64`); the aliases below fix `f64`, which is what
//! the command-line tool uses.

pub mod background;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod evolve;
pub mod potential;
pub mod ratefit;
pub mod scalar;

pub use background::{minkowski, reissner_nordstrom, verify_h0, Background, Minkowski, SampleRegion};
pub use potential::{parse_potential, tilde_transform, verify_h1, verify_h3, Coefficient};
pub use diagnostics::{energy_series, foliation_energy, gronwall_integral, weighted_energy};
pub use evolve::{evolve_mode, Evolution};
pub use ratefit::{compare_to_theorem, fit_exponent, Claim, Verdict};
pub use scalar::Real;

pub type Geometry = background::Geometry<f64>;
pub type ReissnerNordstrom = background::ReissnerNordstrom<f64>;
pub type H0Report = background::H0Report<f64>;
pub type PotentialSet = potential::PotentialSet<f64>;
pub type TildeCoefficients = potential::TildeCoefficients<f64>;
pub type AssumptionReport = potential::AssumptionReport<f64>;
pub type NullGrid = evolve::NullGrid<f64>;
pub type Profile = evolve::Profile<f64>;
pub type InitialData = evolve::InitialData<f64>;
pub type ModeField = evolve::ModeField<f64>;
pub type ConvergenceReport = evolve::ConvergenceReport<f64>;
pub type EnergyRecord = diagnostics::EnergyRecord<f64>;
pub type EnergySeries = diagnostics::EnergySeries<f64>;
pub type SeriesOptions = diagnostics::SeriesOptions<f64>;
pub type InequalityReport = diagnostics::InequalityReport<f64>;
pub type IdentityResidual = diagnostics::IdentityResidual<f64>;
pub type FitResult = ratefit::FitResult<f64>;
