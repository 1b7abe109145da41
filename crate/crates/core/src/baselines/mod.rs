//! Slab-allocator caches used as comparison points.

pub mod slab;

pub use slab::{
    class_for_size, SlabCache, SlabMode, SlabSet, UtilizationReport, DEFAULT_SLAB_SIZE,
    SLAB_ITEM_HEADER,
};
