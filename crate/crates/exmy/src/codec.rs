//! Whole-tensor codec: block quantization composed with lossless packing.
//!
//! Encoding quantizes exactly like [`crate::block::emulate_tensor`] and then
//! packs the codes without loss, so decoding a packed tensor is bitwise
//! identical to emulating the original. The 8-row packing groups impose the
//! only extra requirement: the 2D view's row count must be a multiple of 8.

use crate::bitpack::{pack_rows, PackedSegments, GROUP_ROWS};
use crate::block::{
    dequantize_blocks, quantize_tensor, BlockGrid, BlockMetadata, BlockShape, QuantizedBlocks,
    Scheme,
};
use crate::error::{Error, Result};
use crate::format::FormatSpec;
use crate::tensor::Tensor;

/// A quantized and packed tensor, with everything needed to reconstruct the
/// emulated fp32 values.
#[derive(Clone, PartialEq, Debug)]
pub struct PackedTensor {
    pub fmt: FormatSpec,
    pub scheme: Scheme,
    pub shape: BlockShape,
    /// Original tensor dimensions (the 2D packing view flattens these).
    pub dims: Vec<usize>,
    pub meta: BlockMetadata,
    pub segments: PackedSegments,
    /// (flat index, original fp32 bits) of NaN/Inf elements, ascending.
    pub specials: Vec<(u64, u32)>,
}

impl PackedTensor {
    pub fn num_elements(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn num_blocks(&self) -> usize {
        self.meta.max_biased_exponents.len()
    }

    /// Total payload bytes: packed codes, one metadata byte per block, four
    /// scale bytes per block under float scaling, and twelve bytes per
    /// special.
    pub fn payload_bytes(&self) -> usize {
        self.segments.packed_len_bytes()
            + self.num_blocks()
            + self.meta.scales.as_ref().map_or(0, |s| 4 * s.len())
            + 12 * self.specials.len()
    }

    /// Size advantage over raw fp32 storage of the same elements.
    pub fn compression_ratio(&self) -> f64 {
        (self.num_elements() * 4) as f64 / self.payload_bytes() as f64
    }
}

/// Quantizes and packs a tensor. The 2D view's rows must be a multiple of 8
/// (the packing group height) and the code width must not exceed 15 bits.
pub fn encode_tensor(
    tensor: &Tensor,
    fmt: FormatSpec,
    shape: BlockShape,
    scheme: Scheme,
) -> Result<PackedTensor> {
    let (rows, cols) = tensor.view_2d();
    if rows % GROUP_ROWS != 0 {
        return Err(Error::RowsNotMultipleOf8(rows));
    }
    let q = quantize_tensor(tensor, fmt, shape, scheme)?;
    let segments = pack_rows(&q.codes, rows, cols, fmt.bit_width())?;
    Ok(PackedTensor {
        fmt,
        scheme,
        shape,
        dims: tensor.shape().to_vec(),
        meta: q.meta,
        segments,
        specials: q.specials,
    })
}

/// Unpacks and dequantizes, restoring specials bit for bit.
pub fn decode_tensor(packed: &PackedTensor) -> Result<Tensor> {
    let n: usize = packed.num_elements();
    let (rows, cols) = packed.segments.code_dims();
    if n != rows * cols || packed.dims.last().copied() != Some(cols) {
        return Err(Error::SizeMismatch(format!(
            "dims {:?} do not match the packed {rows}x{cols} code grid",
            packed.dims
        )));
    }
    let grid = BlockGrid::new(packed.shape, rows, cols)?;
    if packed.meta.max_biased_exponents.len() != grid.num_blocks() {
        return Err(Error::SizeMismatch(format!(
            "{} metadata entries for {} blocks",
            packed.meta.max_biased_exponents.len(),
            grid.num_blocks()
        )));
    }
    if let Some(scales) = &packed.meta.scales {
        if scales.len() != grid.num_blocks() {
            return Err(Error::SizeMismatch(format!(
                "{} scales for {} blocks",
                scales.len(),
                grid.num_blocks()
            )));
        }
    }
    if packed.scheme.uses_scale() != packed.meta.scales.is_some() {
        return Err(Error::SizeMismatch(
            "scale array presence does not match the scheme".into(),
        ));
    }
    if let Some((i, _)) = packed.specials.iter().find(|(i, _)| *i >= n as u64) {
        return Err(Error::SizeMismatch(format!(
            "special index {i} outside tensor of {n} elements"
        )));
    }
    let q = QuantizedBlocks {
        fmt: packed.fmt,
        scheme: packed.scheme,
        shape: packed.shape,
        grid,
        meta: packed.meta.clone(),
        codes: packed.segments.unpack(),
        specials: packed.specials.clone(),
    };
    Tensor::new(packed.dims.clone(), dequantize_blocks(&q))
}
