//! Arbitrary-width minifloat formats: 1 sign bit, `x` exponent bits and `y`
//! mantissa bits, laid out MSB→LSB as `[sign | exponent | mantissa]`.
//!
//! A format alone does not fix where its values sit on the number line. The
//! anchor is an [`ExponentOffset`]: a stored 8-bit biased exponent (fp32
//! convention, bias 127) that the format's top exponent code maps to. Keeping
//! the anchor out of the format is what lets one code stream serve blocks of
//! wildly different magnitude.
//!
//! All arithmetic here is exact: decode builds values as
//! `integer_significand * 2^n` from bits, and encode rounds in f64 where every
//! intermediate (power-of-two division, subtraction of 1 within a binade,
//! `round_ties_even`) is exact for fp32-derived inputs.

use crate::error::{Error, Result};
use std::fmt;
use std::str::FromStr;

const F32_SIGN_MASK: u32 = 0x8000_0000;
const F32_EXP_MASK: u32 = 0x7F80_0000;
const F32_MANTISSA_BITS: u32 = 23;

/// A format descriptor: `exponent_bits` (x) in 0..=8, `mantissa_bits` (y) in
/// 0..=23. Total code width is `1 + x + y`.
///
/// `x = 0` degenerates to a sign-magnitude linear grid; `x = 1` is equivalent
/// to a symmetric integer range. `supports_specials` reserves the IEEE-style
/// top-exponent encodings for Inf/NaN (experimental; off by default, since
/// specials normally travel out of band through the block quantizer).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct FormatSpec {
    exponent_bits: u8,
    mantissa_bits: u8,
    supports_specials: bool,
}

impl FormatSpec {
    pub fn new(exponent_bits: u8, mantissa_bits: u8) -> Result<Self> {
        if exponent_bits > 8 {
            return Err(Error::InvalidFormat(format!(
                "exponent bits {exponent_bits} out of range 0..=8"
            )));
        }
        if mantissa_bits > 23 {
            return Err(Error::InvalidFormat(format!(
                "mantissa bits {mantissa_bits} out of range 0..=23"
            )));
        }
        Ok(FormatSpec {
            exponent_bits,
            mantissa_bits,
            supports_specials: false,
        })
    }

    /// Reserve the top-exponent encodings for Inf/NaN. Requires at least one
    /// exponent bit; a linear format has no binade to give up.
    pub fn with_specials(mut self) -> Result<Self> {
        if self.exponent_bits == 0 {
            return Err(Error::InvalidFormat(
                "specials need at least one exponent bit".into(),
            ));
        }
        self.supports_specials = true;
        Ok(self)
    }

    pub fn exponent_bits(&self) -> u8 {
        self.exponent_bits
    }

    pub fn mantissa_bits(&self) -> u8 {
        self.mantissa_bits
    }

    pub fn supports_specials(&self) -> bool {
        self.supports_specials
    }

    /// Total code width k = 1 + x + y.
    pub fn bit_width(&self) -> u8 {
        1 + self.exponent_bits + self.mantissa_bits
    }

    /// Largest exponent field value that denotes a finite number.
    fn max_finite_exponent(&self) -> u32 {
        let top = (1u32 << self.exponent_bits) - 1;
        if self.supports_specials && self.exponent_bits > 0 {
            top - 1
        } else {
            top
        }
    }
}

impl fmt::Display for FormatSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}m{}", self.exponent_bits, self.mantissa_bits)
    }
}

/// Serializes as the "eXmY" display string so reports stay human-readable.
impl serde::Serialize for FormatSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl FromStr for FormatSpec {
    type Err = Error;

    /// Parses "eXmY" (case-insensitive), e.g. "e3m2" or "E2M23".
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidFormat(format!("'{s}' is not of the form eXmY"));
        let rest = s.strip_prefix(['e', 'E']).ok_or_else(bad)?;
        let m_pos = rest.find(['m', 'M']).ok_or_else(bad)?;
        let (x_str, y_str) = (&rest[..m_pos], &rest[m_pos + 1..]);
        let x: u8 = x_str.parse().map_err(|_| bad())?;
        let y: u8 = y_str.parse().map_err(|_| bad())?;
        FormatSpec::new(x, y)
    }
}

/// A single k-bit code, stored right-aligned in a u32.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ExmyCode(u32);

impl ExmyCode {
    pub fn from_bits(bits: u32, fmt: FormatSpec) -> Result<Self> {
        let k = fmt.bit_width();
        if k < 32 && bits >> k != 0 {
            return Err(Error::CodeOutOfRange {
                index: 0,
                code: bits,
                width: k,
            });
        }
        Ok(ExmyCode(bits))
    }

    pub fn to_bits(self) -> u32 {
        self.0
    }

    /// Internal constructor for bits already known to fit the width.
    pub(crate) fn from_bits_truncated(bits: u32) -> Self {
        ExmyCode(bits)
    }

    fn split(self, fmt: FormatSpec) -> (bool, u32, u32) {
        let y = u32::from(fmt.mantissa_bits);
        let x = u32::from(fmt.exponent_bits);
        let sign = (self.0 >> (x + y)) & 1 == 1;
        let e = (self.0 >> y) & ((1 << x) - 1);
        let m = self.0 & ((1 << y) - 1);
        (sign, e, m)
    }
}

fn assemble(sign: bool, e: u32, m: u32, fmt: FormatSpec) -> ExmyCode {
    let y = u32::from(fmt.mantissa_bits);
    let x = u32::from(fmt.exponent_bits);
    debug_assert!(e < (1 << x) && m < (1 << y));
    ExmyCode((u32::from(sign) << (x + y)) | (e << y) | m)
}

/// Anchors a format on the fp32 exponent axis: the stored biased exponent is
/// the binade of the format's top exponent code.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ExponentOffset {
    pub max_biased_exponent: u8,
}

impl ExponentOffset {
    pub fn new(max_biased_exponent: u8) -> Self {
        ExponentOffset {
            max_biased_exponent,
        }
    }

    /// Additive shift applied to an exponent field value:
    /// `max_biased_exponent - (2^x - 1)`. For x = 0 this is the stored value
    /// itself, which keeps the linear grid on the subnormal formula.
    fn shift(&self, fmt: FormatSpec) -> i32 {
        i32::from(self.max_biased_exponent) - ((1i32 << fmt.exponent_bits) - 1)
    }
}

/// fp32 biased exponent field: 0 for zeros and subnormals, 255 for NaN/Inf.
pub(crate) fn f32_exponent_field(v: f32) -> u8 {
    ((v.to_bits() >> F32_MANTISSA_BITS) & 0xFF) as u8
}

/// Exact power of two as f64. `n` stays well inside the normal f64 range for
/// every reachable code/offset combination (roughly -430..=390).
pub(crate) fn pow2(n: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&n));
    f64::from_bits(((n + 1023) as u64) << 52)
}

/// Decodes a code to its exact value. Always finite unless the format
/// reserves specials and `code` carries the top exponent.
pub fn decode(code: ExmyCode, fmt: FormatSpec, off: ExponentOffset) -> f64 {
    let (sign, e, m) = code.split(fmt);
    if fmt.supports_specials
        && fmt.exponent_bits > 0
        && e == (1 << fmt.exponent_bits) - 1
    {
        if m != 0 {
            return f64::NAN;
        }
        return if sign { f64::NEG_INFINITY } else { f64::INFINITY };
    }
    let shift = off.shift(fmt);
    let y = i32::from(fmt.mantissa_bits);
    // Both branches are integer_significand * 2^n, computed exactly.
    let mag = if e == 0 {
        f64::from(m) * pow2(1 + shift - 127 - y)
    } else {
        f64::from((1u32 << y) + m) * pow2(e as i32 + shift - 127 - y)
    };
    if sign {
        -mag
    } else {
        mag
    }
}

/// Largest finite decoded magnitude of (fmt, off). Zero only for e0m0.
pub fn largest_finite(fmt: FormatSpec, off: ExponentOffset) -> f64 {
    let shift = off.shift(fmt);
    let y = i32::from(fmt.mantissa_bits);
    let e_max = fmt.max_finite_exponent();
    if e_max == 0 {
        // Linear/subnormal-only top: (2^y - 1) steps.
        f64::from((1u32 << y) - 1) * pow2(1 + shift - 127 - y)
    } else {
        f64::from((2u32 << y) - 1) * pow2(e_max as i32 + shift - 127 - y)
    }
}

/// Smallest positive decoded magnitude step (one subnormal step).
pub(crate) fn subnormal_step(fmt: FormatSpec, off: ExponentOffset) -> f64 {
    pow2(1 + off.shift(fmt) - 127 - i32::from(fmt.mantissa_bits))
}

/// Encodes a value to the nearest grid point, round-to-nearest ties-to-even.
/// Values beyond the largest finite magnitude saturate to it; values that
/// round below half the smallest subnormal step flush to signed zero.
pub fn encode(value: f32, fmt: FormatSpec, off: ExponentOffset) -> Result<ExmyCode> {
    encode_f64(f64::from(value), fmt, off)
}

/// f64 entry point so block scaling can divide by its scale without an
/// intermediate fp32 rounding step.
pub(crate) fn encode_f64(value: f64, fmt: FormatSpec, off: ExponentOffset) -> Result<ExmyCode> {
    if !value.is_finite() {
        return encode_special(value, fmt);
    }
    Ok(encode_finite(value, fmt, off))
}

/// Encode path for values already known finite; cannot fail.
pub(crate) fn encode_finite(value: f64, fmt: FormatSpec, off: ExponentOffset) -> ExmyCode {
    debug_assert!(value.is_finite());
    let sign = value.is_sign_negative();
    let a = value.abs();
    let y = i32::from(fmt.mantissa_bits);
    let shift = off.shift(fmt);
    let e_max = fmt.max_finite_exponent();
    let mantissa_top = (1u32 << y) - 1;

    if a > largest_finite(fmt, off) {
        return assemble(sign, e_max, mantissa_top, fmt);
    }
    if e_max == 0 || a < pow2(1 + shift - 127) {
        // Subnormal/linear region: uniform grid of subnormal steps. The
        // division is by a power of two and therefore exact.
        let t = (a / subnormal_step(fmt, off)).round_ties_even() as u32;
        if t > mantissa_top {
            // Rounded up to the smallest normal (only reachable when e_max >= 1).
            return assemble(sign, 1, 0, fmt);
        }
        return assemble(sign, 0, t, fmt);
    }
    // Normal range: locate the binade, then round the mantissa fraction.
    // a * 2^-eu is exact and lies in [1, 2); subtracting 1 is exact there.
    let eu = ((a.to_bits() >> 52) & 0x7FF) as i32 - 1023;
    let e = (eu + 127 - shift) as u32;
    debug_assert!(e >= 1 && e <= e_max);
    let m = ((a * pow2(-eu) - 1.0) * pow2(y)).round_ties_even() as u32;
    if m > mantissa_top {
        // Mantissa carry into the next binade; a <= largest_finite
        // guarantees e < e_max here.
        debug_assert!(e < e_max);
        return assemble(sign, e + 1, 0, fmt);
    }
    assemble(sign, e, m, fmt)
}

fn encode_special(value: f64, fmt: FormatSpec) -> Result<ExmyCode> {
    if !fmt.supports_specials {
        return Err(Error::SpecialsNotRepresentable(value as f32));
    }
    let y = u32::from(fmt.mantissa_bits);
    let e_top = (1u32 << fmt.exponent_bits) - 1;
    if value.is_nan() {
        if y == 0 {
            // The sole top-exponent code already means Inf.
            return Err(Error::SpecialsNotRepresentable(value as f32));
        }
        return Ok(assemble(value.is_sign_negative(), e_top, (1 << y) - 1, fmt));
    }
    Ok(assemble(value.is_sign_negative(), e_top, 0, fmt))
}

/// All 2^k decoded values, sorted ascending (-0 sorts just below +0). For a
/// specials-reserving format the Inf/NaN codes are skipped, so fewer than 2^k
/// values come back.
pub fn grid_values(fmt: FormatSpec, off: ExponentOffset) -> Vec<f64> {
    let k = fmt.bit_width();
    let mut out = Vec::with_capacity(1usize << k);
    for bits in 0..1u64 << k {
        let v = decode(ExmyCode(bits as u32), fmt, off);
        if v.is_finite() {
            out.push(v);
        }
    }
    out.sort_by(|a, b| a.total_cmp(b));
    out
}

/// Reinterprets each code of a linear (x = 0) format as a k-bit
/// two's-complement integer, e.g. e0m3 covers [-8, 7].
pub fn twos_complement_view(codes: &[ExmyCode], fmt: FormatSpec) -> Result<Vec<i32>> {
    if fmt.exponent_bits != 0 {
        return Err(Error::FormatMismatch(format!(
            "two's-complement view needs x = 0, format is {fmt}"
        )));
    }
    let k = u32::from(fmt.bit_width());
    Ok(codes
        .iter()
        .map(|c| ((c.0 << (32 - k)) as i32) >> (32 - k))
        .collect())
}

/// Rounds an fp32 bit pattern to `mantissa_bits` mantissa bits, ties to even,
/// with exponent carry. NaN and Inf patterns pass through unchanged.
pub fn round_mantissa_rtne(bits: u32, mantissa_bits: u32) -> u32 {
    assert!(mantissa_bits <= F32_MANTISSA_BITS);
    let drop = F32_MANTISSA_BITS - mantissa_bits;
    if drop == 0 {
        return bits;
    }
    let mag = bits & !F32_SIGN_MASK;
    if mag >= F32_EXP_MASK {
        return bits;
    }
    // Add-and-truncate RTNE: the bias is half the dropped range, minus one
    // when the kept LSB is even so that exact halves round toward even.
    // Mantissa overflow carries into the exponent field, which is the
    // correct binade promotion (and IEEE overflow to Inf at the very top).
    let lsb = (mag >> drop) & 1;
    let rounded = (mag + ((1 << (drop - 1)) - 1 + lsb)) & !((1u32 << drop) - 1);
    (bits & F32_SIGN_MASK) | rounded
}

/// How quantization treated one value: exactly-or-nearest rounded, clamped at
/// the top of the grid, landed among subnormal steps, or flushed to zero.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ValueClass {
    Rounded,
    Saturated,
    Subnormal,
    Flushed,
}

/// Classifies a finite value against the code it quantized to. `value` must
/// be the value that was actually encoded (already divided by any block
/// scale).
pub fn classify(value: f64, code: ExmyCode, fmt: FormatSpec, off: ExponentOffset) -> ValueClass {
    let (_, e, m) = code.split(fmt);
    if value != 0.0 && e == 0 && m == 0 {
        return ValueClass::Flushed;
    }
    if value.abs() > largest_finite(fmt, off) {
        return ValueClass::Saturated;
    }
    if fmt.exponent_bits > 0 && e == 0 && m != 0 {
        return ValueClass::Subnormal;
    }
    ValueClass::Rounded
}
