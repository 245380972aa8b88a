//! Charts, sampled tensor fields, stencils, interpolation, quadrature and the
//! on-disk field format.

mod chart;
mod field;
pub mod io;

pub use chart::{make_chart, ChartKind, ChartSpec, GridChart, Stencil, MAX_DIM, MIN_POINTS};
pub use field::{
    christoffel_index, integrate_scalar, interpolate, partial_derivative, CellMask, Christoffel,
    ChristoffelField, Field, IntegralRecord, MetricField, Rank, Scalar, ScalarField, SymTensor,
    SymTensorField, Vector, VectorField,
};
pub(crate) use field::interpolate_into;
