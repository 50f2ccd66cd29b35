//! Desk-scale depthwise-separable architectures and their canonical layer order.
//!
//! Depthwise layers are numbered depth-first (stage-major, block-minor), one per
//! block. Pointwise layers are numbered block by block in forward order. The
//! patchify stem and the stage downsamplers are dense and never enumerated.

mod forward;
mod model;
mod params;
mod spec;

pub use forward::{Gradients, Tape};
pub use model::{build_model, DepthwiseLayer, LayerEntry, LayerKind, Model, PointwiseLayer};
pub use params::ParamStore;
pub use spec::{filter_inventory, ArchSpec, BlockKind, FilterInventory, InputSpec, StageSpec, StemSpec};

use crate::scalar::Scalar;

pub fn depthwise_layers<T: Scalar>(model: &Model<T>) -> Vec<DepthwiseLayer> {
    model.depthwise_layers()
}

pub fn pointwise_layers<T: Scalar>(model: &Model<T>) -> Vec<PointwiseLayer> {
    model.pointwise_layers()
}
