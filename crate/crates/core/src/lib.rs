//! Numerical lab for the Ricci-DeTurck flow on structured grid charts.
//!
//! The crate is organized bottom-up: [`grid`] provides charts and sampled
//! fields, [`curvature`] the pointwise geometry, [`flow`] the h-flow engine,
//! [`gauge`] the diffeomorphism ODEs and pullbacks, [`singular`] the singular
//! initial data, [`diagnostics`] the trajectory measurements, [`afmass`] the
//! asymptotically flat mass tools, and [`scenario`] the config-driven pipeline.

// Index loops mirror the tensor notation; negated comparisons reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

/// Call `f::<N>(args)` for the chart dimension, rejecting unsupported ones.
#[macro_export]
#[doc(hidden)]
macro_rules! dispatch_dim {
    ($dim:expr, $func:ident :: < N > ( $($arg:expr),* $(,)? )) => {
        match $dim {
            3 => $func::<3>($($arg),*),
            4 => $func::<4>($($arg),*),
            d => Err($crate::error::Error::UnsupportedDim(d)),
        }
    };
}

pub mod afmass;
pub mod curvature;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod gauge;
pub mod grid;
pub mod linalg;
pub mod metrics;
pub mod par;
pub mod scenario;
pub mod singular;

pub use error::{Error, Result};
