//! Clustered-loss reinsurance: a marked Hawkes loss model, the closed-form
//! mean-variance criterion of an insurer buying per-claim reinsurance, and
//! solvers for the optimal contract.

pub mod contracts;
pub mod criterion;
pub mod error;
pub mod hawkes;
pub mod marks;
pub mod moments;
pub mod optimizer;
pub mod quadrature;
pub mod roots;
pub mod sampling;

pub use error::{Error, Result};
pub use marks::{ergodicity_margin, Atom, ImpactSpec, MarkFamily, MarkLaw};
pub use hawkes::{EventPath, HawkesParams};
pub use moments::MomentBundle;
pub use contracts::{Contract, ContractStats};
pub use criterion::{CriterionReport, EconomicParams};
