//! Edge-featured graph attention networks on a sparse reverse-mode tape.
//!
//! The guide in `book/` walks through the crate; its code blocks are
//! compiled and run as doc-tests through the modules at the bottom of this
//! file.

pub mod autodiff;
pub mod baseline;
pub mod bench;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layer;
pub mod matrix;
pub mod model;
pub mod sparse;
pub mod train;

pub use error::{EgatError, Result};
pub use matrix::{FeatureMatrix, Matrix};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/structures.md")]
    mod structures {}
    #[doc = include_str!("../../../book/src/attention.md")]
    mod attention {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
