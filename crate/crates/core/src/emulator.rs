//! Block-FMA model of a matrix accelerator.
//!
//! A dot product of length K is cut into consecutive blocks. Each block fuses
//! the carried accumulator with up to W exact products: addends are aligned
//! to the block's largest exponent, truncated to the retained window
//! (accumulator mantissa plus `extra_bits`), summed, and rounded once back to
//! the accumulator format.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exactnum::Dyadic;
use crate::softfp::{round_dyadic, zero_sum_is_negative, FormatName, FpClass, FpFormat, RoundingMode, SoftFloat};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EmulatorError {
    #[error("invalid accelerator config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("format mismatch: expected {expected}, got {got}")]
    Format { expected: FormatName, got: FormatName },
}

/// How addends inside one block are brought to a common exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IntraBlockOrder {
    /// Every addend is aligned to the block maximum before summation; slot
    /// order cannot matter.
    #[serde(rename = "ascending_index")]
    AlignToBlockMax,
    /// Addends enter one at a time in slot order, each step aligning to the
    /// larger of the running partial and the incoming addend.
    #[serde(rename = "given_permutation")]
    SlotOrder,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AcceleratorConfig {
    pub input_format: FormatName,
    pub accumulate_format: FormatName,
    pub output_format: FormatName,
    pub extra_bits: u8,
    pub sticky_on_last: bool,
    pub acc_rounding: RoundingMode,
    pub block_width: usize,
    pub flush_subnormal_inputs: bool,
    pub flush_subnormal_outputs: bool,
    pub normalize_once: bool,
    pub intra_block_order: IntraBlockOrder,
    /// The carried accumulator occupies one of the W slots of the first
    /// block, so that block fuses only W-1 products.
    #[serde(default)]
    pub carry_takes_slot: bool,
    pub product_rounding: RoundingMode,
    pub output_conversion_rounding: RoundingMode,
}

impl AcceleratorConfig {
    /// A baseline config: truncating single FMA chain, no extra bits, no
    /// flushing, output in the accumulate format.
    pub fn baseline(input: FormatName) -> Self {
        let acc = input.default_accumulator();
        AcceleratorConfig {
            input_format: input,
            accumulate_format: acc,
            output_format: acc,
            extra_bits: 0,
            sticky_on_last: false,
            acc_rounding: RoundingMode::TowardZero,
            block_width: 1,
            flush_subnormal_inputs: false,
            flush_subnormal_outputs: false,
            normalize_once: true,
            intra_block_order: IntraBlockOrder::AlignToBlockMax,
            carry_takes_slot: false,
            product_rounding: RoundingMode::NearestEven,
            output_conversion_rounding: RoundingMode::NearestEven,
        }
    }

    /// Infinitely precise block of width `width`, rounded once with RTN-TE.
    pub fn ideal(input: FormatName, width: usize) -> Self {
        AcceleratorConfig {
            extra_bits: 3,
            sticky_on_last: true,
            acc_rounding: RoundingMode::NearestEven,
            block_width: width.max(1),
            ..Self::baseline(input)
        }
    }

    pub fn validate(&self) -> Result<(), EmulatorError> {
        let bad = |m: &str| Err(EmulatorError::InvalidConfig(m.to_string()));
        if self.extra_bits > 3 {
            return bad("extra_bits must be in 0..=3");
        }
        if self.sticky_on_last && self.extra_bits != 3 {
            return bad("sticky_on_last requires extra_bits = 3");
        }
        if self.block_width == 0 {
            return bad("block_width must be positive");
        }
        let acc = self.accumulate_format.format();
        if self.input_format.format().precision() > acc.precision() {
            return bad("accumulate format narrower than input format");
        }
        if self.output_format.format().precision() > acc.precision() {
            return bad("output format wider than accumulate format");
        }
        Ok(())
    }

    pub fn input(&self) -> FpFormat {
        self.input_format.format()
    }

    pub fn acc(&self) -> FpFormat {
        self.accumulate_format.format()
    }

    pub fn output(&self) -> FpFormat {
        self.output_format.format()
    }

    fn first_block_len(&self) -> usize {
        if self.carry_takes_slot && self.block_width > 1 {
            self.block_width - 1
        } else {
            self.block_width
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub format: FpFormat,
    pub data: Vec<SoftFloat>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, format: FpFormat, data: Vec<SoftFloat>) -> Result<Self, EmulatorError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(EmulatorError::Dimension(format!(
                "{rows}x{cols} matrix with {} elements",
                data.len()
            )));
        }
        if let Some(x) = data.iter().find(|x| x.format != format) {
            return Err(EmulatorError::Format {
                expected: format.name,
                got: x.format.name,
            });
        }
        Ok(Matrix {
            rows,
            cols,
            format,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize, format: FpFormat) -> Self {
        Matrix {
            rows,
            cols,
            format,
            data: vec![SoftFloat::zero(format, false); rows * cols],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> SoftFloat {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, x: SoftFloat) {
        self.data[i * self.cols + j] = x;
    }

    pub fn row(&self, i: usize) -> Vec<SoftFloat> {
        self.data[i * self.cols..(i + 1) * self.cols].to_vec()
    }

    pub fn col(&self, j: usize) -> Vec<SoftFloat> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }
}

/// An addend with its sign kept even when it is zero.
#[derive(Debug, Clone)]
struct Addend {
    value: Dyadic,
    negative: bool,
}

impl Addend {
    fn from_dyadic(value: Dyadic) -> Self {
        let negative = value.is_negative();
        Addend { value, negative }
    }
}

fn lead(x: &Dyadic) -> i64 {
    x.lead_exponent().expect("nonzero")
}

/// Truncate `x` toward zero to `window` fraction bits below its own lead.
fn renormalize(x: Dyadic, window: i64) -> Dyadic {
    match x.lead_exponent() {
        Some(l) => x.truncate_to_grid(l - window).0,
        None => x,
    }
}

/// The value the block hands to the final rounding step: the sum of the
/// addends as retained by the alignment hardware.
fn retained_sum(terms: &[&Dyadic], cfg: &AcceleratorConfig) -> Dyadic {
    if cfg.sticky_on_last {
        // Three extra bits whose last one ORs everything shifted out carry
        // exactly the evidence needed for a correct rounding of the true sum.
        return Dyadic::sum(terms.iter().copied());
    }
    let window = cfg.acc().mant_bits as i64 + cfg.extra_bits as i64;
    match cfg.intra_block_order {
        IntraBlockOrder::AlignToBlockMax => {
            let e = terms.iter().map(|t| lead(t)).max().expect("nonempty");
            let grid = e - window;
            let mut partial = Dyadic::zero();
            for t in terms {
                partial = partial + t.truncate_to_grid(grid).0;
                if !cfg.normalize_once {
                    partial = renormalize(partial, window);
                }
            }
            partial
        }
        IntraBlockOrder::SlotOrder => {
            let mut partial = Dyadic::zero();
            for t in terms {
                let top = match partial.lead_exponent() {
                    Some(p) => p.max(lead(t)),
                    None => lead(t),
                };
                let grid = top - window;
                partial = partial.truncate_to_grid(grid).0 + t.truncate_to_grid(grid).0;
                if !cfg.normalize_once {
                    partial = renormalize(partial, window);
                }
            }
            partial
        }
    }
}

fn block_step(c: &SoftFloat, products: &[Addend], cfg: &AcceleratorConfig) -> SoftFloat {
    let acc = cfg.acc();
    let c_value = c.to_dyadic().expect("finite carry");
    let mut nonzero: Vec<&Dyadic> = Vec::with_capacity(products.len() + 1);
    if !c_value.is_zero() {
        nonzero.push(&c_value);
    }
    nonzero.extend(products.iter().map(|p| &p.value).filter(|v| !v.is_zero()));
    if nonzero.is_empty() {
        let signs: Vec<bool> = std::iter::once(c.negative)
            .chain(products.iter().map(|p| p.negative))
            .collect();
        return SoftFloat::zero(acc, zero_sum_is_negative(&signs, false, cfg.acc_rounding));
    }
    let s = retained_sum(&nonzero, cfg);
    if s.is_zero() {
        return SoftFloat::zero(acc, zero_sum_is_negative(&[], true, cfg.acc_rounding));
    }
    round_dyadic(&s, acc, cfg.acc_rounding)
}

/// One block: the carried accumulator `c` fused with `products`.
pub fn block_fma_step(c: &SoftFloat, products: &[Dyadic], cfg: &AcceleratorConfig) -> SoftFloat {
    let addends: Vec<Addend> = products.iter().cloned().map(Addend::from_dyadic).collect();
    block_step(c, &addends, cfg)
}

fn flush(x: SoftFloat, on: bool) -> SoftFloat {
    if on && x.class == FpClass::Subnormal {
        SoftFloat::zero(x.format, x.negative)
    } else {
        x
    }
}

/// Bring a C element (output or accumulate format) into the accumulator.
fn carry_in(c: &SoftFloat, acc: FpFormat) -> SoftFloat {
    c.convert_exact(acc)
        .unwrap_or_else(|| round_dyadic(&c.to_dyadic().expect("finite"), acc, RoundingMode::NearestEven))
}

/// IEEE-style result when any input is NaN or infinite; `None` otherwise.
fn special_result(
    a_row: &[SoftFloat],
    b_col: &[SoftFloat],
    products: &[SoftFloat],
    c: &SoftFloat,
    acc: FpFormat,
) -> Option<SoftFloat> {
    let any_nan = a_row.iter().chain(b_col).any(|x| x.class == FpClass::Nan)
        || c.class == FpClass::Nan
        || a_row.iter().zip(b_col).any(|(a, b)| {
            (a.class == FpClass::Infinity && b.is_zero()) || (a.is_zero() && b.class == FpClass::Infinity)
        });
    if any_nan {
        return Some(SoftFloat::nan(acc));
    }
    let infs: Vec<bool> = products
        .iter()
        .chain(std::iter::once(c))
        .filter(|x| x.class == FpClass::Infinity)
        .map(|x| x.negative)
        .collect();
    match (infs.iter().any(|&n| n), infs.iter().any(|&n| !n)) {
        (true, true) => Some(SoftFloat::nan(acc)),
        (true, false) => Some(SoftFloat::infinity(acc, true)),
        (false, true) => Some(SoftFloat::infinity(acc, false)),
        (false, false) => None,
    }
}

/// Form one product in the accumulate format: exact when representable,
/// otherwise rounded with `product_rounding`.
fn form_product(a: &SoftFloat, b: &SoftFloat, cfg: &AcceleratorConfig) -> (SoftFloat, Addend) {
    let negative = a.negative ^ b.negative;
    let acc = cfg.acc();
    if !a.is_finite() || !b.is_finite() {
        let x = if a.class == FpClass::Nan || b.class == FpClass::Nan || a.is_zero() || b.is_zero() {
            SoftFloat::nan(acc)
        } else {
            SoftFloat::infinity(acc, negative)
        };
        return (
            x,
            Addend {
                value: Dyadic::zero(),
                negative,
            },
        );
    }
    let exact = &a.to_dyadic().expect("finite") * &b.to_dyadic().expect("finite");
    if exact.is_zero() {
        return (SoftFloat::zero(acc, negative), Addend { value: exact, negative });
    }
    let rounded = round_dyadic(&exact, acc, cfg.product_rounding);
    // Narrow-input products fit the accumulator's significand and enter the
    // block unrounded, even where they underflow its exponent range.
    let exact_products = 2 * cfg.input().precision() <= acc.precision();
    let value = match rounded.to_dyadic() {
        Ok(_) if exact_products => exact,
        Ok(v) => v,
        Err(_) => Dyadic::zero(),
    };
    (rounded, Addend { value, negative })
}

/// `Σ a_i·b_i + c` through the block-FMA model; result in the accumulate format.
pub fn dot_accumulate(
    a_row: &[SoftFloat],
    b_col: &[SoftFloat],
    c: &SoftFloat,
    cfg: &AcceleratorConfig,
) -> Result<SoftFloat, EmulatorError> {
    cfg.validate()?;
    if a_row.len() != b_col.len() {
        return Err(EmulatorError::Dimension(format!(
            "row length {} vs column length {}",
            a_row.len(),
            b_col.len()
        )));
    }
    let input = cfg.input();
    if let Some(x) = a_row.iter().chain(b_col).find(|x| x.format != input) {
        return Err(EmulatorError::Format {
            expected: input.name,
            got: x.format.name,
        });
    }
    let acc = cfg.acc();
    let fin = cfg.flush_subnormal_inputs;
    let a: Vec<SoftFloat> = a_row.iter().map(|&x| flush(x, fin)).collect();
    let b: Vec<SoftFloat> = b_col.iter().map(|&x| flush(x, fin)).collect();
    let c = flush(*c, fin);

    let (rounded, addends): (Vec<SoftFloat>, Vec<Addend>) =
        a.iter().zip(&b).map(|(x, y)| form_product(x, y, cfg)).unzip();
    if let Some(special) = special_result(&a, &b, &rounded, &c, acc) {
        return Ok(special);
    }

    let mut carry = flush(carry_in(&c, acc), fin);
    let mut rest: &[Addend] = &addends;
    let mut len = cfg.first_block_len();
    while !rest.is_empty() {
        let take = len.min(rest.len());
        let (block, tail) = rest.split_at(take);
        carry = block_step(&carry, block, cfg);
        if !carry.is_finite() {
            return Ok(carry);
        }
        rest = tail;
        len = cfg.block_width;
    }
    Ok(flush(carry, cfg.flush_subnormal_outputs))
}

/// Round an accumulator value into the output format.
pub fn convert_output(x: &SoftFloat, cfg: &AcceleratorConfig) -> SoftFloat {
    let out = cfg.output();
    let y = if x.format == out {
        *x
    } else {
        match x.class {
            FpClass::Nan => SoftFloat::nan(out),
            FpClass::Infinity => SoftFloat::infinity(out, x.negative),
            FpClass::Zero => SoftFloat::zero(out, x.negative),
            _ => {
                let r = round_dyadic(&x.to_dyadic().expect("finite"), out, cfg.output_conversion_rounding);
                if r.is_zero() {
                    SoftFloat::zero(out, x.negative)
                } else {
                    r
                }
            }
        }
    };
    flush(y, cfg.flush_subnormal_outputs)
}

fn check_shapes(a: &Matrix, b: &Matrix, c: &Matrix) -> Result<(), EmulatorError> {
    if a.cols != b.rows || c.rows != a.rows || c.cols != b.cols {
        return Err(EmulatorError::Dimension(format!(
            "A {}x{}, B {}x{}, C {}x{}",
            a.rows, a.cols, b.rows, b.cols, c.rows, c.cols
        )));
    }
    Ok(())
}

/// `D = A·B + C` with C entering the first block of every dot product.
pub fn matmul(a: &Matrix, b: &Matrix, c: &Matrix, cfg: &AcceleratorConfig) -> Result<Matrix, EmulatorError> {
    check_shapes(a, b, c)?;
    let mut d = Matrix::zeros(a.rows, b.cols, cfg.output());
    let cols: Vec<Vec<SoftFloat>> = (0..b.cols).map(|j| b.col(j)).collect();
    for i in 0..a.rows {
        let row = a.row(i);
        for (j, col) in cols.iter().enumerate() {
            let acc = dot_accumulate(&row, col, &c.get(i, j), cfg)?;
            d.set(i, j, convert_output(&acc, cfg));
        }
    }
    Ok(d)
}

/// `D = α·(A·B) + β·C`: the product is accumulated from zero, then scaled
/// and combined with C in one correctly rounded step before output
/// conversion.
pub fn matmul_with_epilogue(
    a: &Matrix,
    b: &Matrix,
    c: &Matrix,
    alpha: &SoftFloat,
    beta: &SoftFloat,
    cfg: &AcceleratorConfig,
) -> Result<Matrix, EmulatorError> {
    check_shapes(a, b, c)?;
    let acc_fmt = cfg.acc();
    let zero = SoftFloat::zero(acc_fmt, false);
    let mut d = Matrix::zeros(a.rows, b.cols, cfg.output());
    let cols: Vec<Vec<SoftFloat>> = (0..b.cols).map(|j| b.col(j)).collect();
    for i in 0..a.rows {
        let row = a.row(i);
        for (j, col) in cols.iter().enumerate() {
            let acc = dot_accumulate(&row, col, &zero, cfg)?;
            let e = epilogue(&acc, &c.get(i, j), alpha, beta, acc_fmt);
            d.set(i, j, convert_output(&e, cfg));
        }
    }
    Ok(d)
}

/// `round(α·acc + β·c)` in the accumulate format.
pub fn epilogue(acc: &SoftFloat, c: &SoftFloat, alpha: &SoftFloat, beta: &SoftFloat, fmt: FpFormat) -> SoftFloat {
    let parts = [acc, c, alpha, beta];
    if parts.iter().all(|x| x.is_finite()) {
        let v = &(&alpha.to_dyadic().unwrap() * &acc.to_dyadic().unwrap())
            + &(&beta.to_dyadic().unwrap() * &c.to_dyadic().unwrap());
        if v.is_zero() {
            let signs = [alpha.negative ^ acc.negative, beta.negative ^ c.negative];
            let all_zero = acc.is_zero() || alpha.is_zero();
            let all_zero = all_zero && (c.is_zero() || beta.is_zero());
            let neg = zero_sum_is_negative(&signs, !all_zero, RoundingMode::NearestEven);
            return SoftFloat::zero(fmt, neg);
        }
        round_dyadic(&v, fmt, RoundingMode::NearestEven)
    } else {
        let v = alpha.to_f64() * acc.to_f64() + beta.to_f64() * c.to_f64();
        SoftFloat::from_f64(v, fmt, RoundingMode::NearestEven)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: i64, e: i64) -> Dyadic {
        Dyadic::from_parts(v, e)
    }

    fn fp32(x: &Dyadic) -> SoftFloat {
        SoftFloat::exact(x, FpFormat::FP32).unwrap()
    }

    fn fp16(x: &Dyadic) -> SoftFloat {
        SoftFloat::exact(x, FpFormat::FP16).unwrap()
    }

    fn val(x: &SoftFloat) -> Dyadic {
        x.to_dyadic().unwrap()
    }

    fn cfg(extra: u8, mode: RoundingMode, w: usize) -> AcceleratorConfig {
        AcceleratorConfig {
            extra_bits: extra,
            acc_rounding: mode,
            block_width: w,
            ..AcceleratorConfig::baseline(FormatName::Fp16)
        }
    }

    #[test]
    fn half_ulps_in_one_block_survive() {
        let h = d(1, -24);
        let one = fp32(&Dyadic::one());
        for extra in 1..=3 {
            for mode in [RoundingMode::NearestEven, RoundingMode::TowardZero] {
                let r = block_fma_step(&one, &[h.clone(), h.clone(), h.clone()], &cfg(extra, mode, 4));
                // 1 + 1.5 ulp: truncates to 1 + ulp, ties to even at 1 + 2 ulp.
                let want = match mode {
                    RoundingMode::TowardZero => Dyadic::one() + d(1, -23),
                    _ => Dyadic::one() + d(1, -22),
                };
                assert_eq!(val(&r), want, "extra={extra} {mode}");
            }
        }
    }

    #[test]
    fn half_ulps_in_separate_steps_vanish() {
        let h = d(1, -24);
        for extra in 0..=3 {
            for mode in [RoundingMode::NearestEven, RoundingMode::TowardZero] {
                let c = cfg(extra, mode, 1);
                let mut acc = fp32(&Dyadic::one());
                for _ in 0..3 {
                    acc = block_fma_step(&acc, std::slice::from_ref(&h), &c);
                }
                assert_eq!(val(&acc), Dyadic::one());
            }
        }
    }

    #[test]
    fn small_mass_rounds_up_with_three_bits() {
        let c = fp32(&Dyadic::pow2(20));
        let prods = [d(1, -5), d(1, -6), d(1, -5), d(1, -6)];
        let r = block_fma_step(&c, &prods, &cfg(3, RoundingMode::NearestEven, 4));
        assert_eq!(val(&r), Dyadic::pow2(20) + d(1, -3));
    }

    #[test]
    fn one_extra_bit_keeps_half_ulp() {
        let one = fp16(&Dyadic::one());
        let a = vec![fp16(&d(-1, -12)), fp16(&Dyadic::zero())];
        let b = vec![fp16(&d(1, -12)), fp16(&Dyadic::zero())];
        // Product -2^-24 against c = 1 in FP32.
        let zero_bits = dot_accumulate(&a, &b, &one, &cfg(0, RoundingMode::TowardZero, 4)).unwrap();
        assert_eq!(val(&zero_bits), Dyadic::one());
        let c1 = cfg(1, RoundingMode::TowardZero, 4);
        let r = dot_accumulate(&a, &b, &one, &c1).unwrap();
        assert_eq!(val(&r), Dyadic::one() - d(1, -24));
    }

    #[test]
    fn subnormal_carry_passes_through() {
        let s = FpFormat::FP32.largest_subnormal();
        let z = SoftFloat::zero(FpFormat::FP16, false);
        let r = dot_accumulate(&[z, z], &[z, z], &s, &cfg(0, RoundingMode::TowardZero, 2)).unwrap();
        assert_eq!(r, s);
        let mut f = cfg(0, RoundingMode::TowardZero, 2);
        f.flush_subnormal_inputs = true;
        assert!(dot_accumulate(&[z], &[z], &s, &f).unwrap().is_zero());
    }

    #[test]
    fn flushed_subnormal_input() {
        let a = FpFormat::FP16.largest_subnormal();
        let b = fp16(&Dyadic::from_int(4));
        let zero = SoftFloat::zero(FpFormat::FP32, false);
        let mut c = cfg(0, RoundingMode::TowardZero, 1);
        let kept = dot_accumulate(&[a], &[b], &zero, &c).unwrap();
        assert_eq!(val(&kept), &val(&a) * &Dyadic::from_int(4));
        c.flush_subnormal_inputs = true;
        assert!(dot_accumulate(&[a], &[b], &zero, &c).unwrap().is_zero());
    }

    #[test]
    fn convert_output_examples() {
        let mut c = cfg(0, RoundingMode::TowardZero, 1);
        c.output_format = FormatName::Fp16;
        let tie = fp32(&(Dyadic::one() + d(1, -11)));
        assert_eq!(val(&convert_output(&tie, &c)), Dyadic::one());
        let above = fp32(&(Dyadic::one() + d(1, -11) + d(1, -23)));
        assert_eq!(val(&convert_output(&above, &c)), Dyadic::one() + d(1, -10));
        let same = cfg(0, RoundingMode::TowardZero, 1);
        assert_eq!(convert_output(&above, &same), above);
    }

    #[test]
    fn short_final_block_and_first_slot() {
        // K = 5, W = 4: blocks {4, 1}; with the carry in a slot: {3, 2}.
        let h = d(1, -24);
        let one = fp32(&Dyadic::one());
        let prods = vec![h.clone(); 5];
        let base = cfg(1, RoundingMode::TowardZero, 4);
        let manual = block_fma_step(&block_fma_step(&one, &prods[..4], &base), &prods[4..], &base);
        let a: Vec<SoftFloat> = (0..5).map(|_| fp16(&d(1, -12))).collect();
        let r = dot_accumulate(&a, &a, &one, &base).unwrap();
        assert_eq!(r, manual);
        assert_eq!(val(&r), Dyadic::one() + d(1, -22));
        let slot = AcceleratorConfig {
            carry_takes_slot: true,
            ..base.clone()
        };
        let r = dot_accumulate(&a, &a, &one, &slot).unwrap();
        let manual = block_fma_step(&block_fma_step(&one, &prods[..3], &base), &prods[3..], &base);
        assert_eq!(r, manual);
    }

    #[test]
    fn slot_order_depends_on_position() {
        // 1 first swamps the small terms; small terms first accumulate.
        let q = d(1, -25);
        let mut c = cfg(1, RoundingMode::TowardZero, 5);
        c.intra_block_order = IntraBlockOrder::SlotOrder;
        let zero = fp32(&Dyadic::zero());
        let big_first = block_fma_step(&zero, &[Dyadic::one(), q.clone(), q.clone(), q.clone(), q.clone()], &c);
        let big_last = block_fma_step(&zero, &[q.clone(), q.clone(), q.clone(), q.clone(), Dyadic::one()], &c);
        assert_eq!(val(&big_first), Dyadic::one());
        assert_eq!(val(&big_last), Dyadic::one() + d(1, -23));
        c.intra_block_order = IntraBlockOrder::AlignToBlockMax;
        let a = block_fma_step(&zero, &[Dyadic::one(), q.clone(), q.clone(), q.clone(), q.clone()], &c);
        let b = block_fma_step(&zero, &[q.clone(), q.clone(), q.clone(), q.clone(), Dyadic::one()], &c);
        assert_eq!(a, b);
    }

    #[test]
    fn special_values() {
        let inf = SoftFloat::infinity(FpFormat::FP16, false);
        let one = fp16(&Dyadic::one());
        let z = SoftFloat::zero(FpFormat::FP32, false);
        let c = cfg(0, RoundingMode::TowardZero, 2);
        assert_eq!(dot_accumulate(&[inf], &[one], &z, &c).unwrap().class, FpClass::Infinity);
        let zh = SoftFloat::zero(FpFormat::FP16, false);
        assert_eq!(dot_accumulate(&[inf], &[zh], &z, &c).unwrap().class, FpClass::Nan);
        let ninf = inf.negate();
        assert_eq!(
            dot_accumulate(&[inf, ninf], &[one, one], &z, &c).unwrap().class,
            FpClass::Nan
        );
    }

    #[test]
    fn signed_zero_results() {
        let nz = SoftFloat::zero(FpFormat::FP32, true);
        let zh = SoftFloat::zero(FpFormat::FP16, true);
        let pos = SoftFloat::zero(FpFormat::FP16, false);
        let c = cfg(0, RoundingMode::NearestEven, 2);
        // (-0)·(+0) + (-0) = -0
        assert!(dot_accumulate(&[zh], &[pos], &nz, &c).unwrap().negative);
        // (+0)·(+0) + (-0) = +0
        assert!(!dot_accumulate(&[pos], &[pos], &nz, &c).unwrap().negative);
        let down = cfg(0, RoundingMode::TowardNegative, 2);
        assert!(dot_accumulate(&[pos], &[pos], &nz, &down).unwrap().negative);
        let one = fp16(&Dyadic::one());
        let m1 = fp32(&Dyadic::from_int(-1));
        assert!(!dot_accumulate(&[one], &[one], &m1, &c).unwrap().negative);
        assert!(dot_accumulate(&[one], &[one], &m1, &down).unwrap().negative);
    }

    #[test]
    fn matmul_shapes() {
        let f = FpFormat::FP16;
        let a = Matrix::zeros(2, 3, f);
        let b = Matrix::zeros(3, 4, f);
        let c = Matrix::zeros(2, 4, FpFormat::FP32);
        let d = matmul(&a, &b, &c, &cfg(0, RoundingMode::TowardZero, 4)).unwrap();
        assert_eq!((d.rows, d.cols), (2, 4));
        assert!(d.data.iter().all(|x| x.is_zero()));
        let bad = Matrix::zeros(2, 4, f);
        assert!(matmul(&a, &bad, &c, &cfg(0, RoundingMode::TowardZero, 4)).is_err());
    }

    #[test]
    fn validation() {
        let mut c = cfg(2, RoundingMode::NearestEven, 4);
        c.sticky_on_last = true;
        assert!(c.validate().is_err());
        c.extra_bits = 3;
        assert!(c.validate().is_ok());
        c.block_width = 0;
        assert!(c.validate().is_err());
    }
}
