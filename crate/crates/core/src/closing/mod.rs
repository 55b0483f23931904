//! Closing near-returns into periodic curves and the tube around them.

mod flowbox;
mod orbit;

pub use flowbox::{build_flowbox, Branch, FlowBox, FlowBoxSummary, Overlap, Projection};
pub use orbit::{
    default_window, hermite_close, interpolation_residual, orbit_region, residual_at, ArcTable, ClosedOrbit,
    ResidualProfile, RC_CAP,
};
