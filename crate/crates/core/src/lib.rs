// `!(a < b)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod closing;
pub mod error;
pub mod expr;
pub mod field;
pub mod flow;
pub mod geometry;
pub mod hyperbolicity;
pub mod jet;
pub mod ode;
pub mod perturbation;
pub mod pipeline;
pub mod scenario;

pub use error::{Error, Result};

// The book's listings run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    pub struct Intro;
    #[doc = include_str!("../../../book/src/fields.md")]
    pub struct Fields;
    #[doc = include_str!("../../../book/src/geometry.md")]
    pub struct Geometry;
    #[doc = include_str!("../../../book/src/closing.md")]
    pub struct Closing;
    #[doc = include_str!("../../../book/src/perturbation.md")]
    pub struct Perturbation;
    #[doc = include_str!("../../../book/src/hyperbolicity.md")]
    pub struct Hyperbolicity;
    #[doc = include_str!("../../../book/src/scenarios.md")]
    pub struct Scenarios;
}
