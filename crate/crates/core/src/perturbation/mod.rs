mod bump;
mod distance;
mod field;

pub use bump::{make_bump, smoothstep_coefficients, BranchWeights, BumpProfile};
pub use distance::{cr_distance, verify_closure, ClosureReport, Constants, CrDistanceReport, OrderVerdict};
pub use field::{
    perturb_autonomous, perturb_homoclinic, perturb_nonautonomous, slowest_parameter, Homoclinic, Mode,
    PerturbedField,
};
