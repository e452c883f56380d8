//! Numerical construction of multi-soliton solutions of the generalized
//! Korteweg-de Vries equation `u_t + (u_xx + u^p)_x = 0` for `p > 5`.

// `!(x > 0.0)` style checks reject NaN on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod coercivity;
pub mod config;
pub mod dense;
pub mod error;
pub mod evolver;
pub mod fit;
pub mod golden;
pub mod grid;
pub mod linop;
pub mod modulation;
pub mod shooting;
pub mod snapshot;
pub mod soliton;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{derivative, inner_l2, norm_h1, norm_l2, Field, Grid1D};
