//! The guide in `book/` has no way to run its listings against this
//! workspace, so each chapter is included here as module docs and checked by
//! `cargo test --doc`. A failing doc-test names the module, which names the
//! chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/populations-and-designs.md")]
pub mod populations_and_designs {}
#[doc = include_str!("../../../book/src/horvitz-thompson.md")]
pub mod horvitz_thompson {}
#[doc = include_str!("../../../book/src/greg.md")]
pub mod greg {}
#[doc = include_str!("../../../book/src/optimal.md")]
pub mod optimal {}
#[doc = include_str!("../../../book/src/choosing-c.md")]
pub mod choosing_c {}
#[doc = include_str!("../../../book/src/two-samples.md")]
pub mod two_samples {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
#[doc = include_str!("../../../book/src/command-line.md")]
pub mod command_line {}
