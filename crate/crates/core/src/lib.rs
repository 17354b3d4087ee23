//! Graph residual point-cloud networks built from scratch: kNN graph
//! construction, residual edge-convolution blocks, classification and
//! segmentation heads, a small reverse-mode autodiff engine and a training
//! harness.

pub mod autodiff;
pub mod blocks;
pub mod data;
pub mod graph;
pub mod models;
pub mod train;
