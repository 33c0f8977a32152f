//! Regularised off-policy temporal-difference learning written as stochastic
//! convex-concave saddle-point iterations.
//!
//! * [`features`]: basis functions.
//! * [`environments`]: benchmark problems and sample collection.
//! * [`solvers`]: TD, TDC, GQ(lambda), RO-TD, RO-GQ(lambda) and the prox-free variant.
//! * [`oracle`]: exact expectations, MSPBE, diagnostics and reference solvers.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]

extern crate alloc;

pub mod environments;
pub mod features;
pub mod oracle;
pub mod solvers;
