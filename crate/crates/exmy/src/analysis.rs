//! Exponent-distribution analysis: histogram a tensor's fp32 exponent
//! fields, summarize where the mass sits, and recommend narrow formats that
//! keep a requested fraction of it on grid.
//!
//! The 256 bins mirror the fp32 biased exponent field: bin 0 holds zeros and
//! fp32 subnormals, bin b >= 1 the binade `[2^(b-127), 2^(b-126))`. NaN and
//! Inf never occupy a bin; they are tallied separately, matching the
//! quantizer, which carries them out of band rather than on the exponent
//! axis.

use crate::block::{self, BlockShape, ClassCounts, Scheme};
use crate::error::{Error, Result};
use crate::format::{f32_exponent_field, pow2, FormatSpec};
use crate::par;
use crate::tensor::Tensor;
use serde::ser::SerializeStruct;
use serde::Serialize;
use std::fmt::Write as _;

/// Elements per parallel histogram chunk. Bin increments are integer adds,
/// so the merge order cannot change the result.
const HIST_CHUNK: usize = 1 << 16;

/// Mantissa widths ranked by default when no candidates are given.
pub const DEFAULT_MANTISSA_CANDIDATES: &[u8] = &[1, 2, 3, 4];

/// Caveat attached to every recommendation. The exponent window is judged
/// against the whole tensor's histogram; when rows live at different scales,
/// per-row or sub-row metadata re-anchors the window locally and recovers
/// coverage a single shared anchor would lose.
pub const METADATA_GRANULARITY_NOTE: &str =
    "window coverage is measured over the whole histogram; tensors whose rows \
     span different scales need per-row or sub-row metadata blocks to realize \
     the modeled coverage";

/// Histogram over the 256 fp32 biased-exponent fields. Finite values never
/// produce field 255, so bin 255 stays empty and specials are counted apart.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ExponentHistogram {
    counts: Box<[u64; 256]>,
    total: u64,
    specials: u64,
}

#[derive(Clone)]
struct HistAcc {
    counts: Box<[u64; 256]>,
    specials: u64,
}

impl ExponentHistogram {
    pub fn from_values(values: &[f32]) -> Self {
        let acc = par::fold_chunks(
            values,
            HIST_CHUNK,
            HistAcc {
                counts: Box::new([0; 256]),
                specials: 0,
            },
            |mut acc, chunk| {
                for &v in chunk {
                    if v.is_finite() {
                        acc.counts[f32_exponent_field(v) as usize] += 1;
                    } else {
                        acc.specials += 1;
                    }
                }
                acc
            },
            |mut a, b| {
                for (x, y) in a.counts.iter_mut().zip(b.counts.iter()) {
                    *x += y;
                }
                a.specials += b.specials;
                a
            },
        );
        ExponentHistogram {
            counts: acc.counts,
            total: values.len() as u64,
            specials: acc.specials,
        }
    }

    pub fn from_tensor(tensor: &Tensor) -> Self {
        Self::from_values(tensor.data())
    }

    pub fn counts(&self) -> &[u64; 256] {
        &self.counts
    }

    /// Every value seen, finite or not. Always `specials + sum(counts)`.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn specials(&self) -> u64 {
        self.specials
    }

    /// Finite values, i.e. the mass that landed in bins.
    pub fn binned(&self) -> u64 {
        self.total - self.specials
    }

    /// Fraction of the finite mass inside the k bins ending at the highest
    /// populated bin (contiguous top range, not the k largest counts).
    /// Nondecreasing in k; vacuously 1.0 when no finite values exist.
    pub fn top_k_coverage(&self, k: usize) -> f64 {
        let binned = self.binned();
        if binned == 0 {
            return 1.0;
        }
        if k == 0 {
            return 0.0;
        }
        let maxbin = (0..256).rev().find(|&b| self.counts[b] > 0).unwrap();
        let lo = maxbin.saturating_sub(k - 1);
        let covered: u64 = self.counts[lo..=maxbin].iter().sum();
        covered as f64 / binned as f64
    }

    /// Fraction of the finite mass at or below `max_field`, i.e. what a grid
    /// whose reach ends just above that binade would flush or keep subnormal.
    /// Nondecreasing in `max_field`; vacuously 1.0 when no finite values
    /// exist.
    pub fn flush_fraction(&self, max_field: u8) -> f64 {
        let binned = self.binned();
        if binned == 0 {
            return 1.0;
        }
        let low: u64 = self.counts[..=max_field as usize].iter().sum();
        low as f64 / binned as f64
    }

    /// Summary statistics. Errs only when the histogram saw no values at
    /// all; a histogram of pure specials yields empty optional fields.
    pub fn stats(&self) -> Result<ExponentStats> {
        if self.total == 0 {
            return Err(Error::EmptyHistogram);
        }
        let mut used_min = None;
        let mut used_max = None;
        let mut peak: Option<(u8, u64)> = None;
        let mut populated = 0u32;
        for (b, &n) in self.counts.iter().enumerate() {
            if n == 0 {
                continue;
            }
            populated += 1;
            let b = b as u8;
            used_min.get_or_insert(b);
            used_max = Some(b);
            // Strict > keeps the lowest bin on a tie.
            if peak.is_none_or(|(_, best)| n > best) {
                peak = Some((b, n));
            }
        }
        Ok(ExponentStats {
            used_min,
            used_max,
            peak_exponent: peak.map(|(b, _)| b),
            populated_bins: populated,
            lossless_exponent_bits: populated.next_power_of_two().ilog2(),
        })
    }

    /// Two columns, a header line and one line per bin.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(8 * 257);
        out.push_str("bin,count\n");
        for (b, n) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{b},{n}");
        }
        out
    }
}

/// Serializes as `{"bins": [..256 counts..], "total": .., "specials": ..}`.
impl Serialize for ExponentHistogram {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("ExponentHistogram", 3)?;
        s.serialize_field("bins", &self.counts[..])?;
        s.serialize_field("total", &self.total)?;
        s.serialize_field("specials", &self.specials)?;
        s.end()
    }
}

/// Shape of the populated part of a histogram. The optional fields are None
/// exactly when no finite values were seen.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
pub struct ExponentStats {
    pub used_min: Option<u8>,
    pub used_max: Option<u8>,
    /// Most populated bin, lowest bin on a tie.
    pub peak_exponent: Option<u8>,
    pub populated_bins: u32,
    /// Bits needed to index the populated bins: ceil(log2(populated_bins)).
    pub lossless_exponent_bits: u32,
}

impl ExponentStats {
    /// Inclusive span of populated bins.
    pub fn used_range(&self) -> Option<(u8, u8)> {
        self.used_min.zip(self.used_max)
    }
}

/// One ranked format suggestion. `modeled_rmse` is the coarse proxy used for
/// ranking, not a measured error: values are assumed uniform within each
/// binade and the grid anchored at the histogram maximum.
#[derive(Clone, Copy, PartialEq, Debug, Serialize)]
pub struct FormatRecommendation {
    pub format: FormatSpec,
    pub block_hint: BlockShape,
    pub modeled_rmse: f64,
}

/// Wider exponent windows tolerate a coarse anchor; narrow ones need the
/// anchor to track local scale.
fn block_hint(exponent_bits: u8) -> BlockShape {
    match exponent_bits {
        0..=2 => BlockShape::SubRow(64),
        3 => BlockShape::PerRow,
        _ => BlockShape::WholeTensor,
    }
}

/// Picks the smallest exponent width whose window, ending at the highest
/// populated nonzero bin, misses at most `exceedance_budget` of the nonzero
/// finite mass, then ranks `mantissa_candidates` under it by modeled error.
///
/// The window spans the `2^x - 1` normal binades of an x-bit exponent; bin 0
/// is excluded from the requirement because zeros sit on every grid. Eight
/// exponent bits span the whole axis, so any budget in `[0, 1)` is
/// satisfiable; a budget outside that range (or NaN) is the only
/// [`Error::BudgetUnsatisfiable`] case.
pub fn recommend_format(
    hist: &ExponentHistogram,
    exceedance_budget: f64,
    mantissa_candidates: &[u8],
) -> Result<Vec<FormatRecommendation>> {
    if !(0.0..1.0).contains(&exceedance_budget) {
        return Err(Error::BudgetUnsatisfiable);
    }
    let counts = hist.counts();
    let nonzero: u64 = counts[1..].iter().sum();
    let maxnz = (1..256).rev().find(|&b| counts[b] > 0);
    let x = match maxnz {
        // Only zeros (or nothing finite): the smallest window works.
        None => 1u8,
        Some(maxbin) => {
            let mut chosen = None;
            for x in 1..=8u8 {
                let lo = maxbin.saturating_sub((1usize << x) - 2).max(1);
                let covered: u64 = counts[lo..=maxbin].iter().sum();
                // Comparing the uncovered tail keeps a zero budget exact.
                let uncovered = nonzero - covered;
                if uncovered as f64 <= exceedance_budget * nonzero as f64 {
                    chosen = Some(x);
                    break;
                }
            }
            chosen.ok_or(Error::BudgetUnsatisfiable)?
        }
    };

    let mut widths: Vec<u8> = mantissa_candidates.to_vec();
    widths.sort_unstable();
    widths.dedup();

    let binned = hist.binned();
    let mut recs = Vec::with_capacity(widths.len());
    for y in widths {
        let format = FormatSpec::new(x, y)?;
        let rmse = match maxnz {
            None => 0.0,
            Some(maxbin) => {
                let lo = maxbin as i32 - (1i32 << x) + 2;
                let yi = i32::from(y);
                let mut sum = 0.0f64;
                for (b, &n) in counts.iter().enumerate().take(255).skip(1) {
                    if n == 0 {
                        continue;
                    }
                    let bi = b as i32;
                    let err = if bi >= lo {
                        // On-window binade: uniform rounding error at step
                        // 2^(b-127-y) has mean square step^2/12.
                        pow2(2 * (bi - 127 - yi)) / 12.0
                    } else if bi >= lo - yi {
                        // Subnormal reach below the window: the step is the
                        // fixed bottom-binade substep.
                        pow2(2 * (lo - 127 - yi)) / 12.0
                    } else {
                        // Flushed to zero: E[v^2] for v uniform in the
                        // binade [2^(b-127), 2^(b-126)) is (7/3) 4^(b-127).
                        pow2(2 * (bi - 127)) * (7.0 / 3.0)
                    };
                    sum += n as f64 * err;
                }
                if binned == 0 {
                    0.0
                } else {
                    (sum / binned as f64).sqrt()
                }
            }
        };
        recs.push(FormatRecommendation {
            format,
            block_hint: block_hint(x),
            modeled_rmse: rmse,
        });
    }
    recs.sort_by(|a, b| {
        a.modeled_rmse
            .total_cmp(&b.modeled_rmse)
            .then_with(|| a.format.bit_width().cmp(&b.format.bit_width()))
    });
    Ok(recs)
}

/// Histogram, summary statistics and ranked format suggestions in one
/// serializable bundle.
#[derive(Clone, Debug, Serialize)]
pub struct AnalysisReport {
    pub histogram: ExponentHistogram,
    pub stats: ExponentStats,
    pub recommendations: Vec<FormatRecommendation>,
    pub note: &'static str,
}

impl AnalysisReport {
    pub fn new(
        histogram: ExponentHistogram,
        exceedance_budget: f64,
        mantissa_candidates: &[u8],
    ) -> Result<Self> {
        let stats = histogram.stats()?;
        let recommendations = recommend_format(&histogram, exceedance_budget, mantissa_candidates)?;
        Ok(AnalysisReport {
            histogram,
            stats,
            recommendations,
            note: METADATA_GRANULARITY_NOTE,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Per-block and aggregate quantization outcomes for one format, blocking
/// and scheme choice. `per_block` follows block-scan order.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FlushReport {
    pub per_block: Vec<ClassCounts>,
    pub aggregate: ClassCounts,
}

pub fn flush_report(
    tensor: &Tensor,
    format: FormatSpec,
    shape: BlockShape,
    scheme: Scheme,
) -> Result<FlushReport> {
    let per_block = block::classify_blocks(tensor, format, shape, scheme)?;
    let mut aggregate = ClassCounts::default();
    for c in &per_block {
        aggregate += *c;
    }
    Ok(FlushReport {
        per_block,
        aggregate,
    })
}
