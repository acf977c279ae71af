//! The guide's chapters, compiled so every listing runs as a doc-test.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/fields_and_norms.md")]
pub mod fields_and_norms {}
#[doc = include_str!("../../../book/src/stokes.md")]
pub mod stokes {}
#[doc = include_str!("../../../book/src/evolution.md")]
pub mod evolution {}
#[doc = include_str!("../../../book/src/monitoring.md")]
pub mod monitoring {}
#[doc = include_str!("../../../book/src/inequalities.md")]
pub mod inequalities {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
