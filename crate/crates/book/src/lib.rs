//! Every listing in `book/src` runs as a doc-test of this crate.
//! One module per chapter so a failure names its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/problems.md")]
pub mod problems {}
#[doc = include_str!("../../../book/src/graphs.md")]
pub mod graphs {}
#[doc = include_str!("../../../book/src/algorithm.md")]
pub mod algorithm {}
#[doc = include_str!("../../../book/src/privacy.md")]
pub mod privacy {}
#[doc = include_str!("../../../book/src/tuning.md")]
pub mod tuning {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
#[doc = include_str!("../../../book/src/streams.md")]
pub mod streams {}
#[doc = include_str!("../../../README.md")]
pub mod readme {}
