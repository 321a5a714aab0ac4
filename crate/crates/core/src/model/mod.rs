//! Default system, reference measure, density family, observation schemes and
//! the joint measure of environment and defaults.

pub mod density;
mod integrate;
pub mod joint;
pub mod payoff;
pub mod reference;
pub mod scheme;
pub mod tree;
pub mod validate;

pub use density::{AlphaFamily, AlphaFn, DensityModel};
pub use joint::{build_joint_measure, JointMeasure};
pub use payoff::PayoffSpec;
pub use reference::{Axis, GridPoints, Pins, ReferenceKind, ReferenceMeasure, Window};
pub use scheme::{observation_partition, AtomKey, ObservationScheme, Partition};
pub use tree::{NodeId, ScenarioTree};
pub use validate::{validate_density_model, ValidationReport};
