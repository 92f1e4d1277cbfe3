//! Empirical c.d.f. of informatively selected samples from a finite population:
//! superpopulation models, selection designs, inclusion functionals, the
//! weighted limit c.d.f., condition checkers and the coupling construction.

pub mod conditions;
pub mod coupling;
pub mod designs;
pub mod ecdf;
pub mod error;
pub mod harness;
pub mod quad;
pub mod rng;
pub mod superpop;
pub mod weights;

pub use conditions::{ConditionEntry, ConditionReport, Verdict, VerdictRule};
pub use coupling::{CouplingPartition, HTarget};
pub use designs::{CutOffMode, DesignSpec, IndicatorVector, SizeRule};
pub use ecdf::{ContinuousCdf, StepCdf};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, Mode};
pub use superpop::{ModelSpec, Population, SuperpopModel};
pub use weights::{InclusionEstimates, LimitCdf, MValue, WeightFn, WeightSpec};
