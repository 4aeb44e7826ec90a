pub mod convex;
pub mod curvature;
pub mod error;
pub mod fixed_point;
pub mod instance;
pub mod mdp;
pub mod numerics;
pub mod probes;
pub mod polyhedral;
pub mod regularized;
pub mod report;
pub mod robust;
pub mod uncertainty;

pub use error::{Result, RmdpError};
pub use fixed_point::FixedPoint;
pub use mdp::{Mdp, Policy, ValueVector};
pub use robust::{Rectangularity, Rmdp};
pub use uncertainty::{SRectangularSet, UncertaintySet};
pub use report::{Certificate, SolveReport, SolveStatus};
