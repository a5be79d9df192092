//! Compiles the code listings of the guide in `book/` as doctests.

// mdbook can build the book but cannot test its listings against this
// workspace, so every chapter is pulled in as the docs of an empty module
// and `cargo test --doc` runs the code blocks. One module per chapter keeps
// the failing chapter visible in the test name.

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/transport.md")]
pub mod transport {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/projections.md")]
pub mod projections {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/curves.md")]
pub mod curves {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/optimization.md")]
pub mod optimization {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/oracle.md")]
pub mod oracle {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/configuration.md")]
pub mod configuration {}
