//! Run storage and the rendered artifacts: transfer matrices, depth curves,
//! filter grids and kernel clustering.

pub mod cluster;
pub mod curve;
pub mod grid;
pub mod matrix;
pub mod store;

pub use cluster::{cluster_filters, normalize_kernel, purity, Assignment, ClusterReport, KernelRef, LayerHistogram};
pub use curve::{curve_data, curve_plot, render_svg, CurvePoint, CurveData, CurveSeries, CurveY};
pub use grid::{filter_grid, filter_triptych, render_grid, GridData, LayerSelector, TILE_SCALE};
pub use matrix::{matrix_table, Change, MatrixCell, MatrixTable, CHANGE_THRESHOLD};
pub use store::ResultStore;
