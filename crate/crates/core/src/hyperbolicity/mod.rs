//! Linearized return maps on cross-sections: multipliers, splittings and
//! margins, the multiplier surgery, Gronwall and splitting-continuity checks.

mod adjust;
mod gronwall;
mod section;

pub use adjust::{eigenvalue_adjuster, AdjustReport, AdjustedField};
pub use gronwall::{gronwall_check, splitting_continuity, GronwallReport, SplittingReport};
pub use section::{
    check_hyperbolic_margin, section_monodromy, section_monodromy_with, CrossSection, Eigenvalue, Liouville,
    MarginCheck, MonodromyReport, SplittingDims, CENTER_TOL,
};
