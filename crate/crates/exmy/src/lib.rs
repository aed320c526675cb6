//! Emulation, packing and analysis for arbitrary-width floating-point and
//! integer formats.
//!
//! A format `eXmY` has one sign bit, `x` exponent bits (0..=8) and `y`
//! mantissa bits (0..=23), laid out sign, exponent, mantissa from the most
//! significant bit. Codes decode exactly against an [`ExponentOffset`] that
//! pins the top exponent code to an fp32 binade; `x = 0` yields linear
//! (integer-like) grids on the subnormal formula.
//!
//! The crate splits into:
//!
//! * [`format`]: code-level encode/decode with round-to-nearest-even and a
//!   two's-complement view of `e0` formats.
//! * [`block`]: block-wise quantization against one byte of per-block
//!   metadata (max exponent before or after rounding, or an fp32 scale),
//!   with NaN/Inf carried out of band.
//! * [`bitpack`]: lossless sub-byte packing that splits a k-bit code into
//!   power-of-two-width segments over groups of 8 values, plus rectangular
//!   shard views of the packed form.
//! * [`codec`]: quantize + pack round trip for whole tensors.
//! * [`container`]: a checksummed multi-tensor file format with lazy
//!   per-tensor reads.
//! * [`analysis`]: exponent histograms, coverage statistics and format
//!   recommendations.
//!
//! The `parallel` feature (on by default) runs the data-parallel paths on
//! rayon; disabling it runs the same code sequentially with bit-identical
//! results.

pub mod analysis;
pub mod bitpack;
pub mod block;
pub mod codec;
pub mod container;
pub mod error;
pub mod format;
mod par;
pub mod tensor;

pub use analysis::{
    flush_report, recommend_format, AnalysisReport, ExponentHistogram, ExponentStats,
    FlushReport, FormatRecommendation, DEFAULT_MANTISSA_CANDIDATES, METADATA_GRANULARITY_NOTE,
};
pub use bitpack::{decompose, pack, pack_rows, PackedSegments, GROUP_ROWS};
pub use block::{
    classify_blocks, classify_tensor, dequantize_blocks, emulate_tensor, quantize_tensor,
    BlockGrid, BlockMetadata, BlockShape, ClassCounts, QuantizedBlocks, Scheme,
};
pub use codec::{decode_tensor, encode_tensor, PackedTensor};
pub use container::{open_file, write_container, write_file, ContainerReader, EntryInfo};
pub use error::{Error, Result};
pub use format::{
    classify, decode, encode, grid_values, largest_finite, round_mantissa_rtne,
    twos_complement_view, ExmyCode, ExponentOffset, FormatSpec, ValueClass,
};
pub use tensor::Tensor;
