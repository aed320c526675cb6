//! Block-wise quantization: partition a tensor into blocks, anchor each
//! block's grid with one byte of metadata, then encode elements against that
//! grid.
//!
//! Three metadata schemes are supported:
//!
//! * [`Scheme::MaxExpBeforeRounding`]: the block's largest fp32 biased
//!   exponent. Values whose mantissa would round up across the top binade
//!   boundary saturate instead.
//! * [`Scheme::MaxExpAfterRounding`]: the largest biased exponent after
//!   mantissa rounding to y bits, so a value like 3.9 at one mantissa bit
//!   anchors the grid a binade higher and lands on 4.0.
//! * [`Scheme::FloatScaling`]: the grid stays anchored at biased exponent
//!   127 and a per-block fp32 scale maps it onto the data. The scale is
//!   chosen so that re-quantizing the output reproduces it bit for bit.
//!
//! NaN and Inf are never encoded. They are recorded out of band as
//! (flat index, original bits) pairs with a zero placeholder code, and
//! restored verbatim on dequantization, so special positions and payloads
//! survive every scheme unchanged.

use crate::error::{Error, Result};
use crate::format::{
    self, f32_exponent_field, largest_finite, round_mantissa_rtne, ExmyCode, ExponentOffset,
    FormatSpec, ValueClass,
};
use crate::par;
use crate::tensor::Tensor;
use std::fmt;
use std::str::FromStr;

/// How a block's one-byte exponent anchor (and optional scale) is derived.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Scheme {
    MaxExpBeforeRounding,
    MaxExpAfterRounding,
    FloatScaling,
}

impl Scheme {
    pub fn uses_scale(self) -> bool {
        self == Scheme::FloatScaling
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::MaxExpBeforeRounding => "max-before",
            Scheme::MaxExpAfterRounding => "max-after",
            Scheme::FloatScaling => "float-scale",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "max-before" => Ok(Scheme::MaxExpBeforeRounding),
            "max-after" => Ok(Scheme::MaxExpAfterRounding),
            "float-scale" => Ok(Scheme::FloatScaling),
            _ => Err(Error::InvalidScheme(format!(
                "unknown scheme '{s}', expected max-before, max-after or float-scale"
            ))),
        }
    }
}

/// Block partitioning of the canonical 2D tensor view. Every variant is a
/// rectangular tile; the named ones are the common special cases.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BlockShape {
    WholeTensor,
    PerRow,
    PerColumn,
    SubRow(usize),
    Tile(usize, usize),
}

impl fmt::Display for BlockShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockShape::WholeTensor => f.write_str("tensor"),
            BlockShape::PerRow => f.write_str("row"),
            BlockShape::PerColumn => f.write_str("col"),
            BlockShape::SubRow(l) => write!(f, "subrow:{l}"),
            BlockShape::Tile(r, c) => write!(f, "tile:{r}x{c}"),
        }
    }
}

/// Serializes as the display string ("tensor", "row", "subrow:64", ...).
impl serde::Serialize for BlockShape {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl FromStr for BlockShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidBlockShape(format!(
            "unknown block shape '{s}', expected tensor, row, col, subrow:L or tile:RxC"
        ));
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "tensor" => return Ok(BlockShape::WholeTensor),
            "row" => return Ok(BlockShape::PerRow),
            "col" => return Ok(BlockShape::PerColumn),
            _ => {}
        }
        if let Some(l) = lower.strip_prefix("subrow:") {
            let l: usize = l.parse().map_err(|_| bad())?;
            if l == 0 {
                return Err(bad());
            }
            return Ok(BlockShape::SubRow(l));
        }
        if let Some(rc) = lower.strip_prefix("tile:") {
            let (r, c) = rc.split_once('x').ok_or_else(bad)?;
            let r: usize = r.parse().map_err(|_| bad())?;
            let c: usize = c.parse().map_err(|_| bad())?;
            if r == 0 || c == 0 {
                return Err(bad());
            }
            return Ok(BlockShape::Tile(r, c));
        }
        Err(bad())
    }
}

/// A block shape resolved against concrete tensor dimensions. Blocks are
/// scanned row-major: block b covers rows `(b / grid_cols) * block_rows ..`
/// and columns `(b % grid_cols) * block_cols ..`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct BlockGrid {
    rows: usize,
    cols: usize,
    block_rows: usize,
    block_cols: usize,
}

impl BlockGrid {
    pub fn new(shape: BlockShape, rows: usize, cols: usize) -> Result<Self> {
        let (block_rows, block_cols) = match shape {
            BlockShape::WholeTensor => (rows, cols),
            BlockShape::PerRow => (1, cols),
            BlockShape::PerColumn => (rows, 1),
            BlockShape::SubRow(l) => (1, l),
            BlockShape::Tile(r, c) => (r, c),
        };
        if block_rows == 0 || block_cols == 0 {
            return Err(Error::InvalidBlockShape(
                "block dimensions must be nonzero".into(),
            ));
        }
        if !rows.is_multiple_of(block_rows) || !cols.is_multiple_of(block_cols) {
            return Err(Error::BlockShapeMismatch(format!(
                "{block_rows}x{block_cols} blocks ({shape}) do not tile a {rows}x{cols} tensor"
            )));
        }
        Ok(BlockGrid {
            rows,
            cols,
            block_rows,
            block_cols,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn block_dims(&self) -> (usize, usize) {
        (self.block_rows, self.block_cols)
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        (self.rows / self.block_rows, self.cols / self.block_cols)
    }

    pub fn num_blocks(&self) -> usize {
        let (gr, gc) = self.grid_dims();
        gr * gc
    }

    pub fn block_len(&self) -> usize {
        self.block_rows * self.block_cols
    }

    /// Flat offset of a block's top-left element.
    fn block_base(&self, b: usize) -> usize {
        let gc = self.cols / self.block_cols;
        let (bi, bj) = (b / gc, b % gc);
        bi * self.block_rows * self.cols + bj * self.block_cols
    }

    /// Iterates one block's elements row-major out of the flat tensor slice.
    fn block_values<'a>(&self, data: &'a [f32], b: usize) -> impl Iterator<Item = f32> + 'a {
        let base = self.block_base(b);
        let (cols, br, bc) = (self.cols, self.block_rows, self.block_cols);
        (0..br).flat_map(move |r| data[base + r * cols..base + r * cols + bc].iter().copied())
    }
}

/// Per-block grid anchors: one biased exponent per block, plus one fp32
/// scale per block under float scaling.
#[derive(Clone, PartialEq, Debug)]
pub struct BlockMetadata {
    pub max_biased_exponents: Vec<u8>,
    pub scales: Option<Vec<f32>>,
}

impl BlockMetadata {
    fn offset(&self, b: usize) -> ExponentOffset {
        ExponentOffset::new(self.max_biased_exponents[b])
    }

    fn scale(&self, b: usize) -> Option<f32> {
        self.scales.as_ref().map(|s| s[b])
    }
}

/// A fully quantized tensor view: one code per element plus the metadata
/// needed to decode, with specials carried out of band.
#[derive(Clone, PartialEq, Debug)]
pub struct QuantizedBlocks {
    pub fmt: FormatSpec,
    pub scheme: Scheme,
    pub shape: BlockShape,
    pub grid: BlockGrid,
    pub meta: BlockMetadata,
    /// One code per element, tensor row-major, right-aligned bits.
    pub codes: Vec<u32>,
    /// (flat index, original fp32 bits) of NaN/Inf elements, ascending.
    pub specials: Vec<(u64, u32)>,
}

/// Metadata for one block. Specials never contribute; an all-zero or
/// all-special block anchors at 0 (or scale 0 under float scaling).
fn block_meta(values: impl Iterator<Item = f32>, f: FormatSpec, scheme: Scheme) -> (u8, Option<f32>) {
    match scheme {
        Scheme::MaxExpBeforeRounding => {
            let mbe = values
                .filter(|v| v.is_finite())
                .map(f32_exponent_field)
                .max()
                .unwrap_or(0);
            (mbe, None)
        }
        Scheme::MaxExpAfterRounding => {
            let y = u32::from(f.mantissa_bits());
            let mbe = values
                .filter(|v| v.is_finite())
                .map(|v| f32_exponent_field(f32::from_bits(round_mantissa_rtne(v.to_bits(), y))))
                .max()
                .unwrap_or(0);
            // Rounding can carry out of the fp32 finite range; cap the
            // anchor so the decoded grid stays finite in fp32.
            (mbe.min(254), None)
        }
        Scheme::FloatScaling => {
            let vmax = values
                .filter(|v| v.is_finite())
                .fold(0.0f32, |m, v| m.max(v.abs()));
            let l = largest_finite(f, ExponentOffset::new(127));
            (127, Some(choose_scale(vmax, l)))
        }
    }
}

/// Rounded product of the grid top `l` and a candidate scale. `l` and the
/// scale each carry at most 24 significand bits, so the f64 product is exact
/// and only the final fp32 conversion rounds.
fn scale_product(l: f64, s: f32) -> f32 {
    (l * f64::from(s)) as f32
}

fn nudge_bits(v: f32, j: i32) -> Option<f32> {
    let bits = if j >= 0 {
        v.to_bits().checked_add(j as u32)?
    } else {
        v.to_bits().checked_sub(j.unsigned_abs())?
    };
    Some(f32::from_bits(bits))
}

/// Scales within two ulps of `target / l`, nearest first.
fn scan_scale(target: f32, l: f64) -> Option<f32> {
    let center = (f64::from(target) / l) as f32;
    [0, 1, -1, 2, -2].into_iter().find_map(|j| {
        let s = nudge_bits(center, j)?;
        (scale_product(l, s) == target).then_some(s)
    })
}

/// Picks the block scale for float scaling: the scale whose rounded product
/// with the grid top reproduces `vmax` exactly. When fp32 has no such scale
/// (the products can skip over `vmax`), the target is re-anchored to the
/// nearest reachable product, which keeps the choice a fixed point: feeding
/// the quantized output's maximum back in yields the same scale again.
pub(crate) fn choose_scale(vmax: f32, l: f64) -> f32 {
    if vmax == 0.0 || l == 0.0 {
        return 0.0;
    }
    if let Some(s) = scan_scale(vmax, l) {
        return s;
    }
    let center = (f64::from(vmax) / l) as f32;
    let target = scale_product(l, center);
    scan_scale(target, l).expect("center scale reaches its own product")
}

/// Encodes one finite value against a block's grid.
pub(crate) fn quantize_value(
    v: f32,
    f: FormatSpec,
    off: ExponentOffset,
    scale: Option<f32>,
) -> ExmyCode {
    debug_assert!(v.is_finite());
    let t = match scale {
        // Multiplying keeps the sign when the scale is zero; dividing would
        // produce an infinity.
        Some(0.0) => f64::from(v) * 0.0,
        Some(s) => f64::from(v) / f64::from(s),
        None => f64::from(v),
    };
    format::encode_finite(t, f, off)
}

/// Decodes one code back to fp32 under a block's grid.
pub(crate) fn dequantize_value(
    code: ExmyCode,
    f: FormatSpec,
    off: ExponentOffset,
    scale: Option<f32>,
) -> f32 {
    let g = format::decode(code, f, off);
    match scale {
        // Exact product: the grid value and the scale are both 24-bit.
        Some(s) => (g * f64::from(s)) as f32,
        None => g as f32,
    }
}

fn classify_value(
    v: f32,
    code: ExmyCode,
    f: FormatSpec,
    off: ExponentOffset,
    scale: Option<f32>,
) -> ValueClass {
    let t = match scale {
        Some(s) if s != 0.0 => f64::from(v) / f64::from(s),
        _ => f64::from(v),
    };
    format::classify(t, code, f, off)
}

fn view_grid(tensor: &Tensor, shape: BlockShape) -> Result<BlockGrid> {
    let (rows, cols) = tensor.view_2d();
    BlockGrid::new(shape, rows, cols)
}

/// Quantizes a tensor: computes per-block metadata, encodes every finite
/// element, and records NaN/Inf out of band with zero placeholder codes.
pub fn quantize_tensor(
    tensor: &Tensor,
    f: FormatSpec,
    shape: BlockShape,
    scheme: Scheme,
) -> Result<QuantizedBlocks> {
    let grid = view_grid(tensor, shape)?;
    let data = tensor.data();
    let gc = grid.grid_dims().1;
    let (br, bc) = grid.block_dims();
    let cols = grid.dims().1;

    let per_block: Vec<(u8, Option<f32>)> =
        par::map_collect(grid.num_blocks(), |b| block_meta(grid.block_values(data, b), f, scheme));
    let max_biased_exponents: Vec<u8> = per_block.iter().map(|(m, _)| *m).collect();
    let scales: Option<Vec<f32>> = scheme
        .uses_scale()
        .then(|| per_block.iter().map(|(_, s)| s.unwrap()).collect());
    let meta = BlockMetadata {
        max_biased_exponents,
        scales,
    };

    // One band per block row: bands are contiguous in the flat tensor, so
    // every write lands in the band's own chunk.
    let band = br * cols;
    let mut codes = vec![0u32; data.len()];
    par::for_each_chunk_zip(data, &mut codes, band, |bi, src, dst| {
        for bj in 0..gc {
            let b = bi * gc + bj;
            let off = meta.offset(b);
            let scale = meta.scale(b);
            for r in 0..br {
                let at = r * cols + bj * bc;
                for (s, d) in src[at..at + bc].iter().zip(&mut dst[at..at + bc]) {
                    if s.is_finite() {
                        *d = quantize_value(*s, f, off, scale).to_bits();
                    }
                }
            }
        }
    });

    let specials: Vec<(u64, u32)> = data
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_finite())
        .map(|(i, v)| (i as u64, v.to_bits()))
        .collect();

    Ok(QuantizedBlocks {
        fmt: f,
        scheme,
        shape,
        grid,
        meta,
        codes,
        specials,
    })
}

/// Reverses [`quantize_tensor`]: decodes every code and splats the recorded
/// specials back over their positions, bit for bit.
pub fn dequantize_blocks(q: &QuantizedBlocks) -> Vec<f32> {
    let gc = q.grid.grid_dims().1;
    let (br, bc) = q.grid.block_dims();
    let cols = q.grid.dims().1;
    let band = br * cols;
    let mut out = vec![0.0f32; q.codes.len()];
    par::for_each_chunk_zip(&q.codes, &mut out, band, |bi, src, dst| {
        for bj in 0..gc {
            let b = bi * gc + bj;
            let off = q.meta.offset(b);
            let scale = q.meta.scale(b);
            for r in 0..br {
                let at = r * cols + bj * bc;
                for (s, d) in src[at..at + bc].iter().zip(&mut dst[at..at + bc]) {
                    *d = dequantize_value(ExmyCode::from_bits_truncated(*s), q.fmt, off, scale);
                }
            }
        }
    });
    for (i, bits) in &q.specials {
        out[*i as usize] = f32::from_bits(*bits);
    }
    out
}

/// Quantize-dequantize in one call: what the tensor would look like after a
/// round trip through the format. NaN/Inf pass through unchanged.
pub fn emulate_tensor(
    tensor: &Tensor,
    f: FormatSpec,
    shape: BlockShape,
    scheme: Scheme,
) -> Result<Tensor> {
    let q = quantize_tensor(tensor, f, shape, scheme)?;
    let data = dequantize_blocks(&q);
    Tensor::new(tensor.shape().to_vec(), data)
}

/// Outcome counts of quantizing a tensor, one increment per element.
#[derive(Clone, Copy, PartialEq, Eq, Default, Debug)]
pub struct ClassCounts {
    pub rounded: u64,
    pub saturated: u64,
    pub subnormal: u64,
    pub flushed: u64,
    pub specials: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.rounded + self.saturated + self.subnormal + self.flushed + self.specials
    }

    pub fn flushed_fraction(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.flushed as f64 / self.total() as f64
        }
    }

    fn add(&mut self, class: ValueClass) {
        match class {
            ValueClass::Rounded => self.rounded += 1,
            ValueClass::Saturated => self.saturated += 1,
            ValueClass::Subnormal => self.subnormal += 1,
            ValueClass::Flushed => self.flushed += 1,
        }
    }
}

impl std::ops::AddAssign for ClassCounts {
    fn add_assign(&mut self, c: ClassCounts) {
        self.rounded += c.rounded;
        self.saturated += c.saturated;
        self.subnormal += c.subnormal;
        self.flushed += c.flushed;
        self.specials += c.specials;
    }
}

/// Quantizes and reports how each element fared, one count set per block in
/// block-scan order. Under float scaling the classification applies to the
/// scaled value, i.e. saturation means the value exceeded the grid even
/// after scaling.
pub fn classify_blocks(
    tensor: &Tensor,
    f: FormatSpec,
    shape: BlockShape,
    scheme: Scheme,
) -> Result<Vec<ClassCounts>> {
    let q = quantize_tensor(tensor, f, shape, scheme)?;
    let data = tensor.data();
    Ok(par::map_collect(q.grid.num_blocks(), |b| {
        let mut counts = ClassCounts::default();
        let off = q.meta.offset(b);
        let scale = q.meta.scale(b);
        let base = q.grid.block_base(b);
        let (bc, cols) = (q.grid.block_dims().1, q.grid.dims().1);
        for (i, v) in q.grid.block_values(data, b).enumerate() {
            let at = base + (i / bc) * cols + i % bc;
            if !v.is_finite() {
                counts.specials += 1;
            } else {
                let code = ExmyCode::from_bits_truncated(q.codes[at]);
                counts.add(classify_value(v, code, f, off, scale));
            }
        }
        counts
    }))
}

/// Aggregate of [`classify_blocks`] over the whole tensor.
pub fn classify_tensor(
    tensor: &Tensor,
    f: FormatSpec,
    shape: BlockShape,
    scheme: Scheme,
) -> Result<ClassCounts> {
    let mut total = ClassCounts::default();
    for c in classify_blocks(tensor, f, shape, scheme)? {
        total += c;
    }
    Ok(total)
}
