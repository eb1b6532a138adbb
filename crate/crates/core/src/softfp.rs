//! Parametric binary floating-point formats, bit-level encode/decode, and
//! guard/round/sticky rounding.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exactnum::Dyadic;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("unknown floating-point format `{0}`")]
    UnknownFormat(String),
    #[error("bit pattern {bits:#x} does not fit a {width}-bit container")]
    Oversized { bits: u64, width: u32 },
    #[error("malformed hex element `{0}`")]
    BadHex(String),
    #[error("value is not finite")]
    NotFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatName {
    Fp16,
    Fp32,
    Fp64,
    Bf16,
    Tf32,
}

impl FormatName {
    pub const ALL: [FormatName; 5] = [
        FormatName::Fp16,
        FormatName::Bf16,
        FormatName::Tf32,
        FormatName::Fp32,
        FormatName::Fp64,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FormatName::Fp16 => "fp16",
            FormatName::Fp32 => "fp32",
            FormatName::Fp64 => "fp64",
            FormatName::Bf16 => "bf16",
            FormatName::Tf32 => "tf32",
        }
    }

    pub fn format(self) -> FpFormat {
        FpFormat::from_name(self)
    }

    /// Format the matrix unit accumulates in for this input format.
    pub fn default_accumulator(self) -> FormatName {
        match self {
            FormatName::Fp64 => FormatName::Fp64,
            _ => FormatName::Fp32,
        }
    }
}

impl fmt::Display for FormatName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str().to_uppercase())
    }
}

impl FromStr for FormatName {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fp16" | "f16" | "half" => Ok(FormatName::Fp16),
            "fp32" | "f32" | "single" => Ok(FormatName::Fp32),
            "fp64" | "f64" | "double" => Ok(FormatName::Fp64),
            "bf16" | "bfloat16" => Ok(FormatName::Bf16),
            "tf32" => Ok(FormatName::Tf32),
            _ => Err(FormatError::UnknownFormat(s.to_string())),
        }
    }
}

/// A binary interchange-style format with an implicit leading bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FpFormat {
    pub name: FormatName,
    pub exp_bits: u32,
    /// Explicit fraction bits.
    pub mant_bits: u32,
    pub e_min: i32,
    pub e_max: i32,
    pub storage_bits: u32,
}

impl FpFormat {
    pub const FP16: FpFormat = FpFormat::ieee(FormatName::Fp16, 5, 10, 16);
    pub const FP32: FpFormat = FpFormat::ieee(FormatName::Fp32, 8, 23, 32);
    pub const FP64: FpFormat = FpFormat::ieee(FormatName::Fp64, 11, 52, 64);
    pub const BF16: FpFormat = FpFormat::ieee(FormatName::Bf16, 8, 7, 16);
    pub const TF32: FpFormat = FpFormat::ieee(FormatName::Tf32, 8, 10, 32);

    const fn ieee(name: FormatName, exp_bits: u32, mant_bits: u32, storage_bits: u32) -> Self {
        let bias = (1i32 << (exp_bits - 1)) - 1;
        FpFormat {
            name,
            exp_bits,
            mant_bits,
            e_min: 1 - bias,
            e_max: bias,
            storage_bits,
        }
    }

    pub fn from_name(name: FormatName) -> Self {
        match name {
            FormatName::Fp16 => Self::FP16,
            FormatName::Fp32 => Self::FP32,
            FormatName::Fp64 => Self::FP64,
            FormatName::Bf16 => Self::BF16,
            FormatName::Tf32 => Self::TF32,
        }
    }

    pub fn bias(&self) -> i32 {
        self.e_max
    }

    /// Significand width including the hidden bit.
    pub fn precision(&self) -> u32 {
        self.mant_bits + 1
    }

    /// `log2 ulp(1)`.
    pub fn ulp_exponent(&self) -> i64 {
        -(self.mant_bits as i64)
    }

    pub fn ulp(&self) -> Dyadic {
        Dyadic::pow2(self.ulp_exponent())
    }

    /// Exponent range as printed in the published format table; only BF16
    /// differs from the range implied by its exponent width.
    pub fn printed_exponent_range(&self) -> (i32, i32) {
        match self.name {
            FormatName::Bf16 => (-63, 63),
            _ => (self.e_min, self.e_max),
        }
    }

    pub fn hex_width(&self) -> usize {
        (self.storage_bits / 4) as usize
    }

    /// Unused low bits in the storage container (TF32 keeps its 10 fraction
    /// bits at the top of an FP32-shaped word).
    fn pad_bits(&self) -> u32 {
        self.storage_bits - 1 - self.exp_bits - self.mant_bits
    }

    pub fn largest_finite(&self) -> SoftFloat {
        SoftFloat {
            format: *self,
            negative: false,
            class: FpClass::Normal,
            exponent: self.e_max,
            significand: (1u64 << self.precision()) - 1,
        }
    }

    pub fn largest_subnormal(&self) -> SoftFloat {
        SoftFloat {
            format: *self,
            negative: false,
            class: FpClass::Subnormal,
            exponent: self.e_min,
            significand: (1u64 << self.mant_bits) - 1,
        }
    }

    pub fn min_normal(&self) -> SoftFloat {
        SoftFloat {
            format: *self,
            negative: false,
            class: FpClass::Normal,
            exponent: self.e_min,
            significand: 1u64 << self.mant_bits,
        }
    }
}

impl fmt::Display for FpFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.name.fmt(f)
    }
}

/// Look up one of the five supported formats by name.
pub fn make_format(name: &str) -> Result<FpFormat, FormatError> {
    name.parse::<FormatName>().map(FpFormat::from_name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FpClass {
    Zero,
    Subnormal,
    Normal,
    Infinity,
    Nan,
}

/// One decoded datum. `value = (-1)^negative · significand · 2^(exponent - mant_bits)`
/// for finite classes; the hidden bit is explicit in `significand`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SoftFloat {
    pub format: FpFormat,
    pub negative: bool,
    pub class: FpClass,
    pub exponent: i32,
    pub significand: u64,
}

impl SoftFloat {
    pub fn zero(format: FpFormat, negative: bool) -> Self {
        SoftFloat {
            format,
            negative,
            class: FpClass::Zero,
            exponent: format.e_min,
            significand: 0,
        }
    }

    pub fn infinity(format: FpFormat, negative: bool) -> Self {
        SoftFloat {
            format,
            negative,
            class: FpClass::Infinity,
            exponent: format.e_max + 1,
            significand: 0,
        }
    }

    pub fn nan(format: FpFormat) -> Self {
        SoftFloat {
            format,
            negative: false,
            class: FpClass::Nan,
            exponent: format.e_max + 1,
            significand: 0,
        }
    }

    pub fn decode(bits: u64, format: FpFormat) -> Result<Self, FormatError> {
        if format.storage_bits < 64 && bits >> format.storage_bits != 0 {
            return Err(FormatError::Oversized {
                bits,
                width: format.storage_bits,
            });
        }
        let word = bits >> format.pad_bits();
        let frac = word & ((1u64 << format.mant_bits) - 1);
        let biased = ((word >> format.mant_bits) & ((1u64 << format.exp_bits) - 1)) as i32;
        let negative = (bits >> (format.storage_bits - 1)) & 1 == 1;
        let all_ones = (1i32 << format.exp_bits) - 1;
        Ok(if biased == all_ones {
            if frac == 0 {
                Self::infinity(format, negative)
            } else {
                Self::nan(format)
            }
        } else if biased == 0 {
            if frac == 0 {
                Self::zero(format, negative)
            } else {
                SoftFloat {
                    format,
                    negative,
                    class: FpClass::Subnormal,
                    exponent: format.e_min,
                    significand: frac,
                }
            }
        } else {
            SoftFloat {
                format,
                negative,
                class: FpClass::Normal,
                exponent: biased - format.bias(),
                significand: frac | (1u64 << format.mant_bits),
            }
        })
    }

    pub fn encode(&self) -> u64 {
        let f = self.format;
        let frac_mask = (1u64 << f.mant_bits) - 1;
        let all_ones = (1u64 << f.exp_bits) - 1;
        let (biased, frac) = match self.class {
            FpClass::Zero => (0, 0),
            FpClass::Subnormal => (0, self.significand & frac_mask),
            FpClass::Normal => ((self.exponent + f.bias()) as u64, self.significand & frac_mask),
            FpClass::Infinity => (all_ones, 0),
            FpClass::Nan => (all_ones, 1u64 << (f.mant_bits - 1)),
        };
        let sign = u64::from(self.negative && self.class != FpClass::Nan);
        let word = (sign << (f.exp_bits + f.mant_bits)) | (biased << f.mant_bits) | frac;
        word << f.pad_bits()
    }

    pub fn to_hex(&self) -> String {
        format!("{:0width$x}", self.encode(), width = self.format.hex_width())
    }

    pub fn from_hex(s: &str, format: FpFormat) -> Result<Self, FormatError> {
        let t = s.trim();
        let t = t.strip_prefix("0x").unwrap_or(t);
        if t.len() != format.hex_width() {
            return Err(FormatError::BadHex(s.to_string()));
        }
        let bits = u64::from_str_radix(t, 16).map_err(|_| FormatError::BadHex(s.to_string()))?;
        Self::decode(bits, format)
    }

    pub fn is_finite(&self) -> bool {
        !matches!(self.class, FpClass::Infinity | FpClass::Nan)
    }

    pub fn is_zero(&self) -> bool {
        self.class == FpClass::Zero
    }

    pub fn is_subnormal(&self) -> bool {
        self.class == FpClass::Subnormal
    }

    pub fn negate(&self) -> Self {
        if self.class == FpClass::Nan {
            return *self;
        }
        SoftFloat {
            negative: !self.negative,
            ..*self
        }
    }

    /// Exact value; fails for infinities and NaN. `-0` maps to the canonical zero.
    pub fn to_dyadic(&self) -> Result<Dyadic, FormatError> {
        match self.class {
            FpClass::Zero => Ok(Dyadic::zero()),
            FpClass::Subnormal | FpClass::Normal => Ok(Dyadic::new(
                self.negative,
                BigUint::from(self.significand),
                self.exponent as i64 - self.format.mant_bits as i64,
            )),
            FpClass::Infinity | FpClass::Nan => Err(FormatError::NotFinite),
        }
    }

    /// Exact conversion when `x` is representable in `format`, otherwise `None`.
    pub fn exact(x: &Dyadic, format: FpFormat) -> Option<Self> {
        let r = round_dyadic(x, format, RoundingMode::NearestEven);
        match r.to_dyadic() {
            Ok(v) if &v == x => Some(r),
            _ => None,
        }
    }

    pub fn from_f64(v: f64, format: FpFormat, mode: RoundingMode) -> Self {
        match Dyadic::from_f64(v) {
            Some(d) => {
                let mut r = round_dyadic(&d, format, mode);
                if d.is_zero() && v.is_sign_negative() {
                    r.negative = true;
                }
                r
            }
            None if v.is_nan() => Self::nan(format),
            None => Self::infinity(format, v < 0.0),
        }
    }

    /// Nearest `f64`, for display.
    pub fn to_f64(&self) -> f64 {
        match self.class {
            FpClass::Nan => f64::NAN,
            FpClass::Infinity => {
                if self.negative {
                    f64::NEG_INFINITY
                } else {
                    f64::INFINITY
                }
            }
            FpClass::Zero => {
                if self.negative {
                    -0.0
                } else {
                    0.0
                }
            }
            _ => self.to_dyadic().map(|d| d.to_f64()).unwrap_or(f64::NAN),
        }
    }

    /// Same value, different format, when exactly representable.
    pub fn convert_exact(&self, format: FpFormat) -> Option<Self> {
        match self.class {
            FpClass::Nan => Some(Self::nan(format)),
            FpClass::Infinity => Some(Self::infinity(format, self.negative)),
            FpClass::Zero => Some(Self::zero(format, self.negative)),
            _ => Self::exact(&self.to_dyadic().ok()?, format),
        }
    }
}

impl fmt::Display for SoftFloat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.class {
            FpClass::Nan => write!(f, "NaN"),
            FpClass::Infinity => write!(f, "{}inf", if self.negative { "-" } else { "+" }),
            FpClass::Zero => write!(f, "{}0", if self.negative { "-" } else { "" }),
            _ => write!(f, "{}", self.to_dyadic().expect("finite")),
        }
    }
}

/// The four directed/nearest rules of the rounding table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoundingMode {
    #[serde(rename = "toward_pos")]
    TowardPositive,
    #[serde(rename = "toward_neg")]
    TowardNegative,
    #[serde(rename = "rtn_te")]
    NearestEven,
    #[serde(rename = "truncate")]
    TowardZero,
}

impl RoundingMode {
    pub const ALL: [RoundingMode; 4] = [
        RoundingMode::TowardPositive,
        RoundingMode::TowardNegative,
        RoundingMode::NearestEven,
        RoundingMode::TowardZero,
    ];

    pub fn label(self) -> &'static str {
        match self {
            RoundingMode::TowardPositive => "toward_pos",
            RoundingMode::TowardNegative => "toward_neg",
            RoundingMode::NearestEven => "rtn_te",
            RoundingMode::TowardZero => "truncate",
        }
    }
}

impl fmt::Display for RoundingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoundingMode::TowardPositive => "toward +inf",
            RoundingMode::TowardNegative => "toward -inf",
            RoundingMode::NearestEven => "RTN-TE",
            RoundingMode::TowardZero => "truncate",
        })
    }
}

impl FromStr for RoundingMode {
    type Err = FormatError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "toward_pos" | "up" | "rtp" => Ok(RoundingMode::TowardPositive),
            "toward_neg" | "down" | "rtn_neg" => Ok(RoundingMode::TowardNegative),
            "rtn_te" | "rne" | "nearest" => Ok(RoundingMode::NearestEven),
            "truncate" | "rtz" | "toward_zero" => Ok(RoundingMode::TowardZero),
            _ => Err(FormatError::UnknownFormat(s.to_string())),
        }
    }
}

/// Guard, round and sticky bits below the target LSB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GrsSnapshot {
    pub guard: bool,
    pub round: bool,
    /// OR of every bit below the round position.
    pub sticky: bool,
}

impl GrsSnapshot {
    pub fn new(guard: bool, round: bool, sticky: bool) -> Self {
        Self { guard, round, sticky }
    }

    pub fn any(&self) -> bool {
        self.guard || self.round || self.sticky
    }
}

/// Apply one column of the rounding table to a `width`-bit significand whose
/// LSB is the target LSB. Returns the new significand and whether the
/// increment overflowed `width` bits (the caller renormalizes).
pub fn round_grs(negative: bool, significand: u64, width: u32, grs: GrsSnapshot, mode: RoundingMode) -> (u64, bool) {
    let increment = match mode {
        RoundingMode::TowardZero => false,
        RoundingMode::NearestEven => grs.guard && (grs.round || grs.sticky || significand & 1 == 1),
        RoundingMode::TowardPositive => !negative && grs.any(),
        RoundingMode::TowardNegative => negative && grs.any(),
    };
    if !increment {
        return (significand, false);
    }
    let next = significand + 1;
    if width < 64 && next >> width != 0 {
        (next & ((1u64 << width) - 1), true)
    } else {
        (next, false)
    }
}

fn bit(n: &BigUint, i: u64) -> bool {
    n.bit(i)
}

/// Round an exact value into `format` under `mode`, handling gradual
/// underflow and overflow.
pub fn round_dyadic(x: &Dyadic, format: FpFormat, mode: RoundingMode) -> SoftFloat {
    let Some(lead) = x.lead_exponent() else {
        return SoftFloat::zero(format, false);
    };
    let negative = x.is_negative();
    let mant = format.mant_bits as i64;
    let e_min = format.e_min as i64;
    // LSB weight of the destination at this magnitude.
    let quantum = lead.max(e_min) - mant;

    // Integer part at the quantum grid plus GRS from the discarded tail.
    let (kept, grs) = if x.exponent() >= quantum {
        let q = x.mantissa() << (x.exponent() - quantum) as u64;
        (q, GrsSnapshot::default())
    } else {
        let shift = (quantum - x.exponent()) as u64;
        let m = x.mantissa();
        let kept = m >> shift;
        let guard = bit(m, shift - 1);
        let round = shift >= 2 && bit(m, shift - 2);
        let sticky = shift >= 3 && {
            let mask = (BigUint::one() << (shift - 2)) - BigUint::one();
            !(m & mask).is_zero()
        };
        (kept, GrsSnapshot::new(guard, round, sticky))
    };
    let kept = kept.to_u64().expect("significand fits the format");
    let width = format.precision();
    let (mut sig, carry) = round_grs(negative, kept, width, grs, mode);
    let mut exp = quantum + mant;
    if carry {
        // 1.111.. + 1 ulp = 10.000..: shift back into range.
        sig = 1u64 << format.mant_bits;
        exp += 1;
    }
    if exp > format.e_max as i64 {
        return overflow(format, negative, mode);
    }
    if sig == 0 {
        return SoftFloat::zero(format, negative);
    }
    let class = if sig >> format.mant_bits != 0 {
        FpClass::Normal
    } else {
        FpClass::Subnormal
    };
    SoftFloat {
        format,
        negative,
        class,
        exponent: if class == FpClass::Subnormal {
            format.e_min
        } else {
            exp as i32
        },
        significand: sig,
    }
}

fn overflow(format: FpFormat, negative: bool, mode: RoundingMode) -> SoftFloat {
    let to_inf = match mode {
        RoundingMode::NearestEven => true,
        RoundingMode::TowardZero => false,
        RoundingMode::TowardPositive => !negative,
        RoundingMode::TowardNegative => negative,
    };
    if to_inf {
        SoftFloat::infinity(format, negative)
    } else {
        let mut m = format.largest_finite();
        m.negative = negative;
        m
    }
}

/// Sign of an exact-zero sum under IEEE rules. `zero_signs` are the signs of
/// the addends when every addend is a zero; `cancelled` marks a zero produced
/// by nonzero addends (`x + -x`), which is `+0` except toward -inf.
pub fn zero_sum_is_negative(zero_signs: &[bool], cancelled: bool, mode: RoundingMode) -> bool {
    let toward_neg = mode == RoundingMode::TowardNegative;
    if cancelled {
        return toward_neg;
    }
    let any = zero_signs.iter().any(|&n| n);
    let all = !zero_signs.is_empty() && zero_signs.iter().all(|&n| n);
    all || (any && toward_neg)
}
