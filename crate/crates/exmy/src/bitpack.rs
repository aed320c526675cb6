//! Lossless sub-byte packing of k-bit codes, k in 1..=15.
//!
//! A k-bit width rarely divides a byte, so packing splits k into its binary
//! decomposition (e.g. 7 = 4 + 2 + 1) and stores one *segment* per power of
//! two. Each segment is byte-aligned on groups of 8 codes: 8 lanes of w bits
//! make exactly w bytes. Split and concatenation are pure bit moves, so the
//! round trip is exact for every code and the total size is exactly k bits
//! per code.
//!
//! Codes are packed from a row-major (rows x cols) grid. A *group* is 8
//! vertically consecutive codes of one column; groups form a
//! (rows/8 x cols) grid scanned row-major. Grouping along rows keeps every
//! row boundary byte-aligned in all segments, which is what makes sharding
//! on row blocks a pure byte-slice copy.
//!
//! Within a group, lane `j` (the j-th of the 8 codes) occupies container
//! bits `[w*j, w*(j+1))`, and the container is serialized little-endian.
//! Segments take code bits most-significant-first in decreasing width order:
//! for k = 3, the w = 2 segment holds each code's top two bits and the w = 1
//! segment the lowest bit.

use crate::error::{Error, Result};
use crate::par;
use std::ops::Range;

pub const GROUP_ROWS: usize = 8;

/// Splits a code width into its power-of-two components, descending.
pub fn decompose(k: u8) -> Result<Vec<u8>> {
    if k == 0 || k > 15 {
        return Err(Error::UnsupportedWidth(k));
    }
    Ok((0..4).rev().filter(|b| k >> b & 1 == 1).map(|b| 1 << b).collect())
}

/// Shift that brings segment `s`'s field to the bottom of a code.
fn field_shifts(widths: &[u8], k: u8) -> Vec<u32> {
    let mut rem = u32::from(k);
    widths
        .iter()
        .map(|w| {
            rem -= u32::from(*w);
            rem
        })
        .collect()
}

/// Packed representation of a (grid_rows * 8) x grid_cols code grid: one
/// byte vector per power-of-two width, group-major.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PackedSegments {
    k: u8,
    widths: Vec<u8>,
    segments: Vec<Vec<u8>>,
    grid_rows: usize,
    grid_cols: usize,
}

impl PackedSegments {
    pub fn k(&self) -> u8 {
        self.k
    }

    /// Segment widths, descending powers of two summing to k.
    pub fn widths(&self) -> &[u8] {
        &self.widths
    }

    /// Raw segment bytes, parallel to `widths()`.
    pub fn segments(&self) -> &[Vec<u8>] {
        &self.segments
    }

    /// Group grid dimensions: (rows / 8, cols).
    pub fn grid(&self) -> (usize, usize) {
        (self.grid_rows, self.grid_cols)
    }

    /// Code grid dimensions: (rows, cols).
    pub fn code_dims(&self) -> (usize, usize) {
        (self.grid_rows * GROUP_ROWS, self.grid_cols)
    }

    /// Total payload bytes across all segments: exactly k bits per code.
    pub fn packed_len_bytes(&self) -> usize {
        self.segments.iter().map(Vec::len).sum()
    }

    /// Rebuilds from raw segment bytes, validating lengths against the grid.
    pub fn from_bytes(
        k: u8,
        grid_rows: usize,
        grid_cols: usize,
        segments: Vec<Vec<u8>>,
    ) -> Result<Self> {
        let widths = decompose(k)?;
        if segments.len() != widths.len() {
            return Err(Error::SizeMismatch(format!(
                "width {k} decomposes into {} segments, got {}",
                widths.len(),
                segments.len()
            )));
        }
        let groups = grid_rows * grid_cols;
        for (w, seg) in widths.iter().zip(&segments) {
            let want = groups * usize::from(*w);
            if seg.len() != want {
                return Err(Error::SizeMismatch(format!(
                    "segment of width {w} should hold {want} bytes for a \
                     {grid_rows}x{grid_cols} group grid, got {}",
                    seg.len()
                )));
            }
        }
        Ok(PackedSegments {
            k,
            widths,
            segments,
            grid_rows,
            grid_cols,
        })
    }

    /// Recovers the codes, row-major over the full (rows x cols) grid.
    pub fn unpack(&self) -> Vec<u32> {
        let cols = self.grid_cols;
        let shifts = field_shifts(&self.widths, self.k);
        let mut codes = vec![0u32; self.grid_rows * GROUP_ROWS * cols];
        par::for_each_chunk_mut(&mut codes, GROUP_ROWS * cols, |gr, chunk| {
            for c in 0..cols {
                let g = gr * cols + c;
                for (s, w) in self.widths.iter().enumerate() {
                    let w = usize::from(*w);
                    let mut container = [0u8; 8];
                    container[..w].copy_from_slice(&self.segments[s][g * w..(g + 1) * w]);
                    let container = u64::from_le_bytes(container);
                    for (j, slot) in chunk[c..].iter_mut().step_by(cols).take(GROUP_ROWS).enumerate()
                    {
                        let field = (container >> (w * j)) & ((1u64 << w) - 1);
                        *slot |= (field as u32) << shifts[s];
                    }
                }
            }
        });
        codes
    }

    /// Cuts out a rectangle of whole groups: `row_groups` in units of 8-row
    /// groups, `cols` in columns. Pure byte copies, no re-bit-packing.
    pub fn shard_view(&self, row_groups: Range<usize>, cols: Range<usize>) -> Result<Self> {
        if row_groups.start >= row_groups.end
            || cols.start >= cols.end
            || row_groups.end > self.grid_rows
            || cols.end > self.grid_cols
        {
            return Err(Error::UnalignedShard(format!(
                "groups {row_groups:?} x cols {cols:?} do not fit the \
                 {}x{} group grid",
                self.grid_rows, self.grid_cols
            )));
        }
        let out_cols = cols.end - cols.start;
        let segments = self
            .widths
            .iter()
            .zip(&self.segments)
            .map(|(w, seg)| {
                let w = usize::from(*w);
                let mut out = Vec::with_capacity((row_groups.end - row_groups.start) * out_cols * w);
                for gr in row_groups.clone() {
                    let start = (gr * self.grid_cols + cols.start) * w;
                    out.extend_from_slice(&seg[start..start + out_cols * w]);
                }
                out
            })
            .collect();
        Ok(PackedSegments {
            k: self.k,
            widths: self.widths.clone(),
            segments,
            grid_rows: row_groups.end - row_groups.start,
            grid_cols: out_cols,
        })
    }
}

/// Packs a flat code sequence (treated as a column of length `codes.len()`).
pub fn pack(codes: &[u32], k: u8) -> Result<PackedSegments> {
    if !codes.len().is_multiple_of(GROUP_ROWS) {
        return Err(Error::LengthNotMultipleOf8(codes.len()));
    }
    pack_rows(codes, codes.len(), 1, k)
}

/// Packs a row-major (rows x cols) code grid. `rows` must be a multiple of
/// 8 so every column splits into whole groups.
pub fn pack_rows(codes: &[u32], rows: usize, cols: usize, k: u8) -> Result<PackedSegments> {
    let widths = decompose(k)?;
    if !rows.is_multiple_of(GROUP_ROWS) {
        return Err(Error::RowsNotMultipleOf8(rows));
    }
    if rows * cols != codes.len() {
        return Err(Error::SizeMismatch(format!(
            "{rows}x{cols} grid does not match {} codes",
            codes.len()
        )));
    }
    let limit = 1u32 << k;
    for (index, code) in codes.iter().enumerate() {
        if *code >= limit {
            return Err(Error::CodeOutOfRange {
                index,
                code: *code,
                width: k,
            });
        }
    }
    let grid_rows = rows / GROUP_ROWS;
    let shifts = field_shifts(&widths, k);
    let segments = widths
        .iter()
        .zip(&shifts)
        .map(|(w, shift)| {
            let w = usize::from(*w);
            let mask = (1u64 << w) - 1;
            let mut seg = vec![0u8; grid_rows * cols * w];
            // One chunk per grid row of groups: w bytes per group, cols groups.
            par::for_each_chunk_mut(&mut seg, w * cols, |gr, row_bytes| {
                for c in 0..cols {
                    let mut container = 0u64;
                    for j in 0..GROUP_ROWS {
                        let code = u64::from(codes[(gr * GROUP_ROWS + j) * cols + c]);
                        container |= ((code >> shift) & mask) << (w * j);
                    }
                    row_bytes[c * w..(c + 1) * w]
                        .copy_from_slice(&container.to_le_bytes()[..w]);
                }
            });
            seg
        })
        .collect();
    Ok(PackedSegments {
        k,
        widths,
        segments,
        grid_rows,
        grid_cols: cols,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decompose_is_binary_expansion() {
        assert_eq!(decompose(7).unwrap(), vec![4, 2, 1]);
        assert_eq!(decompose(8).unwrap(), vec![8]);
        assert_eq!(decompose(10).unwrap(), vec![8, 2]);
        assert_eq!(decompose(1).unwrap(), vec![1]);
        assert_eq!(decompose(15).unwrap(), vec![8, 4, 2, 1]);
        assert!(matches!(decompose(0), Err(Error::UnsupportedWidth(0))));
        assert!(matches!(decompose(16), Err(Error::UnsupportedWidth(16))));
    }

    #[test]
    fn frozen_three_bit_example() {
        // Codes 0..=7 packed at k = 3: the two-bit segment interleaves the
        // top bits into 0xFA50 and the one-bit segment collects the parity
        // bits into 0xAA. Total is 3 bytes = 24 bits for 8 codes.
        let codes: Vec<u32> = (0..8).collect();
        let p = pack(&codes, 3).unwrap();
        assert_eq!(p.widths(), &[2, 1]);
        assert_eq!(p.segments()[0], vec![0x50, 0xFA]);
        assert_eq!(p.segments()[1], vec![0xAA]);
        assert_eq!(p.packed_len_bytes() * 8, codes.len() * 3);
        assert_eq!(p.unpack(), codes);
    }

    #[test]
    fn seven_bit_group_is_56_bits() {
        let codes: Vec<u32> = (0..8).map(|i| i * 16 + 5).collect();
        let p = pack(&codes, 7).unwrap();
        assert_eq!(p.packed_len_bytes(), 7);
        assert_eq!(p.unpack(), codes);
    }

    /// Bit-by-bit oracle: lays out each segment as an explicit boolean
    /// vector (lane j's field at positions w*j..w*j+w, LSB first) and
    /// serializes 8 booleans per byte.
    fn oracle_segment_bytes(group: &[u32], w: usize, shift: u32) -> Vec<u8> {
        assert_eq!(group.len(), 8);
        let mut bits = vec![false; 8 * w];
        for (j, code) in group.iter().enumerate() {
            let field = (code >> shift) & ((1u32 << w) - 1);
            for b in 0..w {
                bits[w * j + b] = field >> b & 1 == 1;
            }
        }
        bits.chunks(8)
            .map(|byte| byte.iter().enumerate().map(|(b, x)| u8::from(*x) << b).sum())
            .collect()
    }

    #[test]
    fn pack_matches_bit_oracle_for_every_width() {
        let mut state = 0xDEAD_BEEFu32;
        for k in 1..=15u8 {
            let widths = decompose(k).unwrap();
            let shifts = field_shifts(&widths, k);
            for _ in 0..20 {
                let group: Vec<u32> = (0..8)
                    .map(|_| {
                        state = state.wrapping_mul(1664525).wrapping_add(1013904223);
                        state >> (32 - u32::from(k))
                    })
                    .collect();
                let p = pack(&group, k).unwrap();
                for ((w, shift), seg) in widths.iter().zip(&shifts).zip(p.segments()) {
                    assert_eq!(
                        seg,
                        &oracle_segment_bytes(&group, usize::from(*w), *shift),
                        "k {k} width {w}"
                    );
                }
                assert_eq!(p.unpack(), group);
            }
        }
    }

    #[test]
    fn grid_segment_shapes() {
        // 8x3 at k = 7: one group row, three columns, segments 4/2/1 bytes
        // per group.
        let codes = vec![0u32; 24];
        let p = pack_rows(&codes, 8, 3, 7).unwrap();
        assert_eq!(p.grid(), (1, 3));
        let lens: Vec<usize> = p.segments().iter().map(Vec::len).collect();
        assert_eq!(lens, vec![12, 6, 3]);
        // 16x1 at k = 5: two group rows, segments 4+1 bytes per group.
        let codes = vec![0u32; 16];
        let p = pack_rows(&codes, 16, 1, 5).unwrap();
        assert_eq!(p.grid(), (2, 1));
        let lens: Vec<usize> = p.segments().iter().map(Vec::len).collect();
        assert_eq!(lens, vec![8, 2]);
    }

    #[test]
    fn pack_validates_inputs() {
        assert!(matches!(
            pack(&[0; 12], 3),
            Err(Error::LengthNotMultipleOf8(12))
        ));
        assert!(matches!(
            pack_rows(&[0; 12], 12, 1, 3),
            Err(Error::RowsNotMultipleOf8(12))
        ));
        assert!(matches!(
            pack_rows(&[0; 12], 8, 2, 3),
            Err(Error::SizeMismatch(_))
        ));
        let mut codes = vec![0u32; 8];
        codes[5] = 8;
        assert!(matches!(
            pack(&codes, 3),
            Err(Error::CodeOutOfRange { index: 5, code: 8, width: 3 })
        ));
    }

    #[test]
    fn shard_is_byte_slice_of_parent() {
        // 32x4 grid at k = 3: shard group rows 1..3, columns 1..3, and check
        // the shard unpacks to exactly the corresponding code rectangle.
        let codes: Vec<u32> = (0..128).map(|i| i % 8).collect();
        let p = pack_rows(&codes, 32, 4, 3).unwrap();
        let s = p.shard_view(1..3, 1..3).unwrap();
        assert_eq!(s.grid(), (2, 2));
        let got = s.unpack();
        let mut want = Vec::new();
        for r in 8..24 {
            for c in 1..3 {
                want.push(codes[r * 4 + c]);
            }
        }
        assert_eq!(got, want);
        assert!(p.shard_view(1..5, 0..4).is_err());
        assert!(p.shard_view(1..1, 0..4).is_err());
        assert!(p.shard_view(0..1, 3..5).is_err());
    }

    #[test]
    fn from_bytes_checks_segment_lengths() {
        let codes: Vec<u32> = (0..16).map(|i| i % 4).collect();
        let p = pack_rows(&codes, 16, 1, 3).unwrap();
        let rebuilt = PackedSegments::from_bytes(3, 2, 1, p.segments().to_vec()).unwrap();
        assert_eq!(rebuilt, p);
        assert!(matches!(
            PackedSegments::from_bytes(3, 2, 1, vec![vec![0; 4]]),
            Err(Error::SizeMismatch(_))
        ));
        assert!(matches!(
            PackedSegments::from_bytes(3, 2, 1, vec![vec![0; 4], vec![0; 3]]),
            Err(Error::SizeMismatch(_))
        ));
    }
}
