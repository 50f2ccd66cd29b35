//! Filter extraction, transfer plans, transplantation and freeze masks.
//!
//! Depthwise biases travel (and freeze) with their kernels, pointwise biases
//! with their matrices. Normalization, stem, downsampling and head
//! parameters are never transferred.

mod bank;
mod plan;
mod transplant;

pub use bank::{extract_depthwise, extract_pointwise, flatten_stack, BankEntry, FilterBank, FlatStack, Provenance};
pub use plan::{Depth, Direction, TransferMode, TransferPlan, DEFAULT_REPEAT_K};
pub use transplant::{
    resize_kernel, transplant, verify_frozen, FreezeMask, FrozenCheck, FrozenReport, SlotOrigin, Transplanted,
};
