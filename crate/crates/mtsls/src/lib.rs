//! Multivalued-treatment 2SLS: population weights, estimation, simulation and
//! specification tests.
//!
//! A [`Population`] is a finite mixture of response types over a discrete
//! instrument design. [`weights::identification_report`] computes the exact
//! weights each type's effects receive in the 2SLS estimand and checks that
//! they are proper. [`estimator::tsls_estimate`] fits 2SLS on data, and the
//! [`spec_tests`] module implements the refutable implications on samples.

pub mod design;
pub mod dgp;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod projection;
pub mod regression;
pub mod spec_tests;
pub mod weights;

pub use design::{
    CellPopulation, Dataset, InstrumentDesign, Population, ResponseType, TreatmentCoding,
    TypeComponent,
};
pub use error::{Error, Result};
pub use estimator::{tsls_estimate, tsls_population, EstimationResult};
pub use weights::{identification_report, IdentificationReport, WeightMatrix};
