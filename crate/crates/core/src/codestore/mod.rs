//! Compressed storage: bit-packed codes, binary file formats and space accounting.

mod format;
mod pack;
mod space;

pub use format::*;
pub use pack::{pack_codes, packed_len, unpack_codes};
pub use space::{becr_ratio, space_report, SpaceModel, SpaceReport};
