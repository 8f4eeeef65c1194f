//! The guide in `book/` compiled as doc comments, so `cargo test` runs every
//! listing.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/quantum.md")]
pub mod quantum {}
#[doc = include_str!("../../../book/src/cavity.md")]
pub mod cavity {}
#[doc = include_str!("../../../book/src/closed-forms.md")]
pub mod closed_forms {}
#[doc = include_str!("../../../book/src/detection.md")]
pub mod detection {}
#[doc = include_str!("../../../book/src/tomography.md")]
pub mod tomography {}
#[doc = include_str!("../../../book/src/running.md")]
pub mod running {}
