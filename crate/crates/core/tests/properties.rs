use matprobe::emulator::{block_fma_step, dot_accumulate, matmul, AcceleratorConfig, IntraBlockOrder, Matrix};
use matprobe::exactnum::Dyadic;
use matprobe::softfp::{round_dyadic, FormatName, FpClass, FpFormat, RoundingMode, SoftFloat};
use proptest::prelude::*;

const FORMATS: [FpFormat; 5] = [
    FpFormat::FP16,
    FpFormat::BF16,
    FpFormat::TF32,
    FpFormat::FP32,
    FpFormat::FP64,
];

fn format() -> impl Strategy<Value = FpFormat> {
    prop::sample::select(FORMATS.to_vec())
}

fn mode() -> impl Strategy<Value = RoundingMode> {
    prop::sample::select(RoundingMode::ALL.to_vec())
}

/// Bit pattern of a finite value (zeros and subnormals included).
fn finite_bits(f: FpFormat) -> impl Strategy<Value = u64> {
    let all_ones = (1u64 << f.exp_bits) - 1;
    (any::<bool>(), 0..all_ones, 0..(1u64 << f.mant_bits)).prop_map(move |(s, e, m)| {
        let word = (u64::from(s) << (f.exp_bits + f.mant_bits)) | (e << f.mant_bits) | m;
        word << (f.storage_bits - 1 - f.exp_bits - f.mant_bits)
    })
}

fn dyadic() -> impl Strategy<Value = Dyadic> {
    (any::<i64>(), -200i64..200).prop_map(|(m, e)| Dyadic::from_parts(m >> (m.unsigned_abs() % 50), e))
}

fn ordered(x: &SoftFloat) -> Option<Dyadic> {
    x.to_dyadic().ok()
}

/// Compare two rounded values as extended reals: -inf < finite < +inf.
fn le(x: &SoftFloat, y: &SoftFloat) -> bool {
    let rank = |v: &SoftFloat| match v.class {
        FpClass::Infinity if v.negative => 0,
        FpClass::Infinity => 2,
        _ => 1,
    };
    match (rank(x), rank(y)) {
        (1, 1) => ordered(x).unwrap() <= ordered(y).unwrap(),
        (a, b) => a <= b,
    }
}

/// Small normal FP16 values, so FP32 products and sums stay in range.
fn small_fp16() -> impl Strategy<Value = SoftFloat> {
    (any::<bool>(), -6i32..6, 0u64..1024).prop_map(|(s, e, m)| SoftFloat {
        format: FpFormat::FP16,
        negative: s,
        class: FpClass::Normal,
        exponent: e,
        significand: m | 1024,
    })
}

fn block_config() -> impl Strategy<Value = AcceleratorConfig> {
    (
        0u8..4,
        any::<bool>(),
        prop::sample::select(vec![1usize, 2, 3, 4, 8, 16]),
        mode(),
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(x, sticky, w, m, once, slot_order)| AcceleratorConfig {
            extra_bits: x,
            sticky_on_last: sticky && x == 3,
            acc_rounding: m,
            block_width: w,
            normalize_once: once,
            intra_block_order: if slot_order {
                IntraBlockOrder::SlotOrder
            } else {
                IntraBlockOrder::AlignToBlockMax
            },
            ..AcceleratorConfig::baseline(FormatName::Fp16)
        })
}

fn same_value(x: &SoftFloat, y: &SoftFloat) -> bool {
    x == y || (x.is_zero() && y.is_zero())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn encode_decode_round_trip((f, b) in format().prop_flat_map(|f| (Just(f), finite_bits(f)))) {
        let x = SoftFloat::decode(b, f).unwrap();
        prop_assert_eq!(x.encode(), b);
        prop_assert_eq!(SoftFloat::from_hex(&x.to_hex(), f).unwrap(), x);
    }

    #[test]
    fn normal_class_invariant((f, b) in format().prop_flat_map(|f| (Just(f), finite_bits(f)))) {
        let x = SoftFloat::decode(b, f).unwrap();
        let hidden = x.significand >> f.mant_bits & 1 == 1;
        match x.class {
            FpClass::Normal => prop_assert!(hidden && f.e_min <= x.exponent && x.exponent <= f.e_max),
            FpClass::Subnormal | FpClass::Zero => prop_assert!(!hidden),
            _ => prop_assert!(false, "finite pattern decoded as {:?}", x.class),
        }
    }

    #[test]
    fn representable_values_round_to_themselves((f, b) in format().prop_flat_map(|f| (Just(f), finite_bits(f))), m in mode()) {
        let x = SoftFloat::decode(b, f).unwrap();
        let r = round_dyadic(&x.to_dyadic().unwrap(), f, m);
        prop_assert!(same_value(&r, &x));
    }

    #[test]
    fn rounding_is_monotone(f in format(), m in mode(), a in dyadic(), b in dyadic()) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(le(&round_dyadic(&lo, f, m), &round_dyadic(&hi, f, m)));
    }

    #[test]
    fn truncation_matches_directed_modes(f in format(), x in dyadic()) {
        let t = round_dyadic(&x, f, RoundingMode::TowardZero);
        if x.is_negative() {
            prop_assert_eq!(t, round_dyadic(&x, f, RoundingMode::TowardPositive));
        } else if !x.is_zero() {
            prop_assert_eq!(t, round_dyadic(&x, f, RoundingMode::TowardNegative));
        }
    }

    #[test]
    fn directed_modes_bracket(f in format(), x in dyadic()) {
        let down = round_dyadic(&x, f, RoundingMode::TowardNegative);
        let up = round_dyadic(&x, f, RoundingMode::TowardPositive);
        if let (Ok(d), Ok(u)) = (down.to_dyadic(), up.to_dyadic()) {
            prop_assert!(d <= x && x <= u);
        }
    }

    #[test]
    fn nearest_error_within_half_ulp(f in format(), x in dyadic()) {
        let r = round_dyadic(&x, f, RoundingMode::NearestEven);
        if let Ok(v) = r.to_dyadic() {
            let err = (&v - &x).abs();
            let lead = x.lead_exponent().unwrap_or(0).max(f.e_min as i64);
            prop_assert!(err <= Dyadic::pow2(lead - f.mant_bits as i64 - 1));
        }
    }

    #[test]
    fn dyadic_add_mul_commute(a in dyadic(), b in dyadic()) {
        prop_assert_eq!(&a + &b, &b + &a);
        prop_assert_eq!(&a * &b, &b * &a);
    }

    #[test]
    fn dyadic_add_mul_associate(a in dyadic(), b in dyadic(), c in dyadic()) {
        prop_assert_eq!(&(&a + &b) + &c, &a + &(&b + &c));
        prop_assert_eq!(&(&a * &b) * &c, &a * &(&b * &c));
        prop_assert_eq!(&a * &(&b + &c), &(&a * &b) + &(&a * &c));
    }

    #[test]
    fn dyadic_is_canonical(a in dyadic(), b in dyadic()) {
        let s = &a + &b;
        if s.is_zero() {
            prop_assert!(!s.is_negative() && s.exponent() == 0);
        } else {
            prop_assert!(s.mantissa().bit(0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn zero_products_are_neutral(
        cfg in block_config(),
        terms in prop::collection::vec((small_fp16(), small_fp16()), 1..24),
        c in small_fp16(),
        zeros in 1usize..20,
    ) {
        let (a, b): (Vec<_>, Vec<_>) = terms.into_iter().unzip();
        let c = c.convert_exact(FpFormat::FP32).unwrap();
        let base = dot_accumulate(&a, &b, &c, &cfg).unwrap();
        let z = SoftFloat::zero(FpFormat::FP16, false);
        let mut a2 = a.clone();
        let mut b2 = b.clone();
        a2.extend(std::iter::repeat_n(z, zeros));
        b2.extend(std::iter::repeat_n(z, zeros));
        let padded = dot_accumulate(&a2, &b2, &c, &cfg).unwrap();
        prop_assert!(same_value(&base, &padded), "{} vs {}", base, padded);
    }

    #[test]
    fn blocks_compose(
        cfg in block_config(),
        terms in prop::collection::vec((small_fp16(), small_fp16()), 1..40),
        c in small_fp16(),
    ) {
        let (a, b): (Vec<_>, Vec<_>) = terms.into_iter().unzip();
        let c = c.convert_exact(FpFormat::FP32).unwrap();
        let direct = dot_accumulate(&a, &b, &c, &cfg).unwrap();
        let products: Vec<Dyadic> = a
            .iter()
            .zip(&b)
            .map(|(x, y)| &x.to_dyadic().unwrap() * &y.to_dyadic().unwrap())
            .collect();
        let folded = products
            .chunks(cfg.block_width)
            .fold(c, |acc, block| block_fma_step(&acc, block, &cfg));
        prop_assert_eq!(direct, folded);
    }

    #[test]
    fn row_permutation_commutes(
        cfg in block_config(),
        data in prop::collection::vec(small_fp16(), 4 * 6 + 6 * 3),
        shift in 1usize..4,
    ) {
        let (m, k, n) = (4, 6, 3);
        let a = Matrix::new(m, k, FpFormat::FP16, data[..m * k].to_vec()).unwrap();
        let b = Matrix::new(k, n, FpFormat::FP16, data[m * k..].to_vec()).unwrap();
        let c = Matrix::zeros(m, n, FpFormat::FP32);
        let d = matmul(&a, &b, &c, &cfg).unwrap();
        let perm: Vec<usize> = (0..m).map(|i| (i + shift) % m).collect();
        let pa_data: Vec<SoftFloat> = perm.iter().flat_map(|&i| a.row(i)).collect();
        let pa = Matrix::new(m, k, FpFormat::FP16, pa_data).unwrap();
        let pd = matmul(&pa, &b, &c, &cfg).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            prop_assert_eq!(pd.row(i), d.row(src));
        }
    }
}

/// The emulator's FP32 baseline (one product, round to nearest) against the host FPU.
#[test]
fn fp32_products_match_native() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let cfg = AcceleratorConfig {
        acc_rounding: RoundingMode::NearestEven,
        ..AcceleratorConfig::baseline(FormatName::Fp32)
    };
    let zero = SoftFloat::zero(FpFormat::FP32, false);
    for _ in 0..10_000 {
        let x = f32::from_bits(rng.gen::<u32>());
        let y = f32::from_bits(rng.gen::<u32>());
        if !(x.is_finite() && y.is_finite()) {
            continue;
        }
        let native = x * y;
        let sx = SoftFloat::decode(u64::from(x.to_bits()), FpFormat::FP32).unwrap();
        let sy = SoftFloat::decode(u64::from(y.to_bits()), FpFormat::FP32).unwrap();
        let emulated = dot_accumulate(&[sx], &[sy], &zero, &cfg).unwrap();
        if native.is_nan() {
            assert_eq!(emulated.class, FpClass::Nan);
        } else if native == 0.0 {
            assert!(emulated.is_zero(), "{x:e} * {y:e}");
        } else {
            assert_eq!(emulated.encode(), u64::from(native.to_bits()), "{x:e} * {y:e}");
        }
    }
}
