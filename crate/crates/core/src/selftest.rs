//! Self-checks shared by the `selftest` subcommand and the acceptance suite:
//! config recovery over an emulator grid, preset soundness, and two rounding
//! oracles that do not go through the code they check.

use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backends::BackendDescriptor;
use crate::detector::{run_pipeline, Budget, FeatureReport, Finding, Normalization};
use crate::emulator::{dot_accumulate, AcceleratorConfig};
use crate::exactnum::Dyadic;
use crate::presets::{all_presets, check_expected, Bound};
use crate::softfp::{round_dyadic, FormatName, FpClass, FpFormat, RoundingMode, SoftFloat};

pub const GRID_WIDTHS: [usize; 5] = [1, 2, 4, 8, 16];
const GRID_MODES: [RoundingMode; 2] = [RoundingMode::TowardZero, RoundingMode::NearestEven];

/// Emulator configs the detector must recover: extra bits 0..=3, truncate
/// or RTN-TE, five widths, four flush combinations, and sticky on/off where
/// three bits make it meaningful. FP16 in and out.
pub fn recovery_grid() -> Vec<AcceleratorConfig> {
    let mut out = Vec::new();
    for bits in 0..=3u8 {
        let stickies: &[bool] = if bits == 3 { &[false, true] } else { &[false] };
        for &sticky in stickies {
            for mode in GRID_MODES {
                for width in GRID_WIDTHS {
                    for (fin, fout) in [(false, false), (true, false), (false, true), (true, true)] {
                        out.push(AcceleratorConfig {
                            output_format: FormatName::Fp16,
                            extra_bits: bits,
                            sticky_on_last: sticky,
                            acc_rounding: mode,
                            block_width: width,
                            flush_subnormal_inputs: fin,
                            flush_subnormal_outputs: fout,
                            ..AcceleratorConfig::baseline(FormatName::Fp16)
                        });
                    }
                }
            }
        }
    }
    out
}

pub fn config_label(cfg: &AcceleratorConfig) -> String {
    format!(
        "x{}{} {} W{} flush_in={} flush_out={}",
        cfg.extra_bits,
        if cfg.sticky_on_last { "+sticky" } else { "" },
        cfg.acc_rounding.label(),
        cfg.block_width,
        cfg.flush_subnormal_inputs,
        cfg.flush_subnormal_outputs
    )
}

/// A mismatch between a known config and what the detector reported.
#[derive(Debug, Clone, Serialize)]
pub struct Mismatch {
    pub subject: String,
    pub field: String,
    pub expected: String,
    pub observed: String,
    pub fixtures: Vec<String>,
}

fn evidence_ids(report: &FeatureReport, test: &str) -> Vec<String> {
    report
        .outcome(test)
        .map(|o| o.evidence.iter().map(|e| e.fixture_id.clone()).collect())
        .unwrap_or_default()
}

/// Compare a report with the features of the config that produced it.
/// Normalization is checked only where the report claims to know it, and
/// order control only by value: sticky configs sum blocks exactly, which
/// leaves both unobservable.
pub fn recovery_mismatches(cfg: &AcceleratorConfig, report: &FeatureReport) -> Vec<Mismatch> {
    let subject = config_label(cfg);
    let mut out = Vec::new();
    let mut check = |field: &str, test: &str, expected: String, observed: String| {
        if expected != observed {
            out.push(Mismatch {
                subject: subject.clone(),
                field: field.to_string(),
                expected,
                observed,
                fixtures: evidence_ids(report, test),
            });
        }
    };
    let s = |f: Finding<bool>| f.to_string();
    check(
        "subnormal_inputs",
        "t_si_no",
        Finding::Known(!cfg.flush_subnormal_inputs).to_string(),
        s(report.subnormal_inputs_ok),
    );
    check(
        "subnormal_outputs",
        "t_ni_so",
        Finding::Known(!cfg.flush_subnormal_outputs).to_string(),
        s(report.subnormal_outputs_ok),
    );
    check(
        "subnormal_accum",
        "t_sa",
        Finding::Known(!(cfg.flush_subnormal_inputs || cfg.flush_subnormal_outputs)).to_string(),
        s(report.subnormal_accum_ok),
    );
    check(
        "extra_bits",
        "t_3_bits_fin_rnd",
        Finding::Known(Bound::Exactly(cfg.extra_bits as u32)).to_string(),
        report.extra_bits.to_string(),
    );
    check(
        "acc_rounding",
        "t_rnd_dir",
        Finding::Known(cfg.acc_rounding).to_string(),
        report.acc_rounding.to_string(),
    );
    let sticky = if cfg.extra_bits == 3 {
        Finding::Known(cfg.sticky_on_last)
    } else {
        Finding::NotApplicable
    };
    check("sticky", "t_tie_sticky", sticky.to_string(), report.sticky.to_string());
    check(
        "fma_width",
        "t_blk_fma_width",
        Finding::Known(Bound::Exactly(cfg.block_width as u32)).to_string(),
        report.fma_width.to_string(),
    );
    let order = if cfg.block_width == 1 {
        Finding::NotApplicable
    } else {
        Finding::Known(false)
    };
    check(
        "order_controllable",
        "t_acc_order",
        order.to_string(),
        report.order_controllable.to_string(),
    );
    if !matches!(
        report.normalize_once,
        Finding::Known(Normalization::OnceAtEnd) | Finding::NotApplicable
    ) {
        check(
            "normalize_once",
            "t_norm_once",
            "once_at_end".into(),
            format!("{:?}", report.normalize_once),
        );
    }
    check(
        "output_conversion_rounding",
        "t_out_cvt",
        Finding::Known(cfg.output_conversion_rounding).to_string(),
        report.output_conversion_rounding.to_string(),
    );
    check(
        "product_rounding",
        "t_prod",
        "N.A.".into(),
        report.product_rounding.to_string(),
    );
    for a in &report.anomalies {
        out.push(Mismatch {
            subject: subject.clone(),
            field: "anomaly".into(),
            expected: String::new(),
            observed: a.clone(),
            fixtures: Vec::new(),
        });
    }
    out
}

pub fn run_recovery(budget: Budget) -> (usize, Vec<Mismatch>) {
    let grid = recovery_grid();
    let mut bad = Vec::new();
    for cfg in &grid {
        let b = BackendDescriptor::emulator(config_label(cfg), cfg.clone());
        match run_pipeline(&b, FormatName::Fp16, budget) {
            Ok(r) => bad.extend(recovery_mismatches(cfg, &r)),
            Err(e) => bad.push(Mismatch {
                subject: config_label(cfg),
                field: "pipeline".into(),
                expected: String::new(),
                observed: e.to_string(),
                fixtures: Vec::new(),
            }),
        }
    }
    (grid.len(), bad)
}

/// Every preset row checked against its expected cells.
pub fn preset_soundness(budget: Budget) -> Vec<Mismatch> {
    let mut out = Vec::new();
    let rows = match all_presets() {
        Ok(r) => r,
        Err(e) => {
            return vec![Mismatch {
                subject: "presets".into(),
                field: "construction".into(),
                expected: String::new(),
                observed: e.to_string(),
                fixtures: Vec::new(),
            }]
        }
    };
    for row in rows {
        let b = BackendDescriptor::emulator(row.key(), row.config.clone());
        let report = match run_pipeline(&b, row.input_format, budget) {
            Ok(r) => r,
            Err(e) => {
                out.push(Mismatch {
                    subject: row.key(),
                    field: "pipeline".into(),
                    expected: String::new(),
                    observed: e.to_string(),
                    fixtures: Vec::new(),
                });
                continue;
            }
        };
        for c in check_expected(&row, &report) {
            if !c.ok {
                out.push(Mismatch {
                    subject: row.key(),
                    field: c.column.to_string(),
                    expected: c.expected,
                    observed: c.observed,
                    fixtures: Vec::new(),
                });
            }
        }
    }
    out
}

/// A rounded value as the neighbor oracle sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rounded {
    Finite { negative: bool, magnitude: Dyadic },
    Infinite { negative: bool },
}

impl Rounded {
    pub fn matches(&self, x: &SoftFloat) -> bool {
        match self {
            Rounded::Infinite { negative } => x.class == FpClass::Infinity && x.negative == *negative,
            Rounded::Finite { negative, magnitude } => {
                x.is_finite() && x.negative == *negative && x.to_dyadic().map(|d| d.abs()) == Ok(magnitude.clone())
            }
        }
    }
}

/// Non-negative values of a format indexed by bit pattern without the sign
/// (ordinal), up to and including infinity.
struct Ordinals {
    fmt: FpFormat,
}

impl Ordinals {
    fn inf(&self) -> u64 {
        ((1u64 << self.fmt.exp_bits) - 1) << self.fmt.mant_bits
    }

    /// Value of an ordinal; infinity stands at 2^(e_max+1).
    fn value(&self, n: u64) -> Dyadic {
        let m = self.fmt.mant_bits;
        let be = (n >> m) as i64;
        let frac = (n & ((1u64 << m) - 1)) as i64;
        let bias = self.fmt.bias() as i64;
        if be == 0 {
            Dyadic::from_parts(frac, self.fmt.e_min as i64 - m as i64)
        } else {
            let sig = Dyadic::from_int((1i64 << m) + frac);
            sig.scale(be - bias - m as i64)
        }
    }

    /// A nearby ordinal for a positive magnitude, from integer truncation.
    fn estimate(&self, mag: &Dyadic) -> u64 {
        let m = self.fmt.mant_bits as i64;
        let floor_at = |g: i64| {
            let (t, _) = mag.truncate_to_grid(g);
            if t.is_zero() {
                0
            } else {
                (t.mantissa() << (t.exponent() - g) as usize)
                    .to_u64()
                    .unwrap_or(u64::MAX)
            }
        };
        let lead = mag.lead_exponent().expect("nonzero");
        if lead < self.fmt.e_min as i64 {
            floor_at(self.fmt.e_min as i64 - m)
        } else if lead > self.fmt.e_max as i64 {
            self.inf()
        } else {
            let be = (lead + self.fmt.bias() as i64) as u64;
            (be << m) | (floor_at(lead - m) - (1u64 << m))
        }
    }
}

/// Reference rounding by enumerating representable neighbors of `x` and
/// picking by each mode's definition.
pub fn neighbor_round(x: &Dyadic, fmt: FpFormat, mode: RoundingMode) -> Rounded {
    if x.is_zero() {
        return Rounded::Finite {
            negative: false,
            magnitude: Dyadic::zero(),
        };
    }
    let negative = x.is_negative();
    let mag = x.abs();
    let ord = Ordinals { fmt };
    let inf = ord.inf();
    let n0 = ord.estimate(&mag);
    let cands: Vec<(u64, Dyadic)> = (n0.saturating_sub(3)..=(n0 + 3).min(inf))
        .map(|n| (n, ord.value(n)))
        .collect();
    let below = cands
        .iter()
        .filter(|(n, v)| *n < inf && *v <= mag)
        .max_by(|a, b| a.1.cmp(&b.1))
        .cloned();
    let above = cands
        .iter()
        .filter(|(_, v)| *v >= mag)
        .min_by(|a, b| a.1.cmp(&b.1))
        .cloned();
    let (below, above) = match (below, above) {
        (Some(b), Some(a)) => (b, a),
        (Some(b), None) => (b, (inf, ord.value(inf))),
        _ => unreachable!("zero is always a candidate below small values"),
    };
    let pick = match mode {
        RoundingMode::TowardZero => below.clone(),
        RoundingMode::TowardPositive if negative => below.clone(),
        RoundingMode::TowardPositive => above.clone(),
        RoundingMode::TowardNegative if negative => above.clone(),
        RoundingMode::TowardNegative => below.clone(),
        RoundingMode::NearestEven => {
            let db = &mag - &below.1;
            let da = &above.1 - &mag;
            match db.cmp(&da) {
                std::cmp::Ordering::Less => below.clone(),
                std::cmp::Ordering::Greater => above.clone(),
                std::cmp::Ordering::Equal => {
                    if below.0 % 2 == 0 {
                        below.clone()
                    } else {
                        above.clone()
                    }
                }
            }
        }
    };
    if pick.0 == inf {
        Rounded::Infinite { negative }
    } else {
        Rounded::Finite {
            negative,
            magnitude: pick.1,
        }
    }
}

/// A random dyadic spread over a format's range (subnormal through
/// overflow), a quarter of them exact halfway cases.
pub fn random_dyadic(rng: &mut impl Rng, fmt: FpFormat) -> Dyadic {
    use num_bigint::BigUint;
    let p = fmt.precision() as u64;
    let bits = if rng.gen_ratio(1, 4) {
        p + 1
    } else {
        rng.gen_range(1..=p + 16)
    };
    let mut m = BigUint::from(1u8) << (bits - 1) as usize;
    for i in 0..bits.saturating_sub(1) {
        if rng.gen::<bool>() {
            m |= BigUint::from(1u8) << i as usize;
        }
    }
    if bits == p + 1 {
        m |= BigUint::from(1u8);
    }
    let lo = fmt.e_min as i64 - fmt.mant_bits as i64 - 2;
    let hi = fmt.e_max as i64 + 1;
    let lead = rng.gen_range(lo..=hi);
    Dyadic::new(rng.gen(), m, lead - (bits as i64 - 1))
}

pub const ROUNDING_FORMATS: [FpFormat; 5] = [
    FpFormat::FP16,
    FpFormat::BF16,
    FpFormat::TF32,
    FpFormat::FP32,
    FpFormat::FP64,
];

/// `round_dyadic` against [`neighbor_round`] on `n` random values per
/// format and mode. Returns (comparisons, mismatch descriptions).
pub fn rounding_equivalence(n: usize, seed: u64) -> (usize, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = Vec::new();
    let mut count = 0;
    for fmt in ROUNDING_FORMATS {
        for _ in 0..n {
            let x = random_dyadic(&mut rng, fmt);
            for mode in RoundingMode::ALL {
                count += 1;
                let got = round_dyadic(&x, fmt, mode);
                let want = neighbor_round(&x, fmt, mode);
                if !want.matches(&got) && bad.len() < 20 {
                    bad.push(format!("{fmt} {mode}: {x:?} -> {} (oracle {want:?})", got.to_hex()));
                }
            }
        }
    }
    (count, bad)
}

fn random_finite(rng: &mut impl Rng, fmt: FpFormat, max_biased: u64) -> SoftFloat {
    let m = fmt.mant_bits;
    let pad = fmt.storage_bits - 1 - fmt.exp_bits - m;
    let be = rng.gen_range(0..=max_biased.min((1u64 << fmt.exp_bits) - 2));
    let frac = rng.gen_range(0..(1u64 << m));
    let sign = (rng.gen::<bool>() as u64) << (fmt.storage_bits - 1);
    let bits = sign | (((be << m) | frac) << pad);
    SoftFloat::decode(bits, fmt).expect("finite pattern")
}

/// The ideal config (3 bits, sticky, RTN-TE, one block) against exact
/// dot products rounded once. Zero results compare by value only.
pub fn ideal_fma_equivalence(n: usize, seed: u64) -> (usize, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = Vec::new();
    for t in 0..n {
        let input = if t % 2 == 0 { FormatName::Fp16 } else { FormatName::Bf16 };
        let fin = input.format();
        let acc = FpFormat::FP32;
        let k = rng.gen_range(1..=64);
        // Keep BF16 exponents moderate so products stay inside FP32.
        let max_be = if input == FormatName::Bf16 { 127 + 40 } else { 30 };
        let a: Vec<SoftFloat> = (0..k).map(|_| random_finite(&mut rng, fin, max_be)).collect();
        let b: Vec<SoftFloat> = (0..k).map(|_| random_finite(&mut rng, fin, max_be)).collect();
        let c = random_finite(&mut rng, acc, 127 + 40);
        let cfg = AcceleratorConfig::ideal(input, 64);
        let got = match dot_accumulate(&a, &b, &c, &cfg) {
            Ok(v) => v,
            Err(e) => {
                bad.push(format!("case {t}: {e}"));
                continue;
            }
        };
        let terms: Vec<(Dyadic, Dyadic)> = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x.to_dyadic().unwrap(), y.to_dyadic().unwrap()))
            .collect();
        let exact = Dyadic::exact_dot(&terms, &c.to_dyadic().unwrap());
        let want = round_dyadic(&exact, acc, RoundingMode::NearestEven);
        let same = if want.is_zero() && got.is_zero() {
            true
        } else {
            got == want
        };
        if !same && bad.len() < 20 {
            bad.push(format!(
                "case {t} (k={k}, {input}): got {} want {}",
                got.to_hex(),
                want.to_hex()
            ));
        }
    }
    (n, bad)
}

#[derive(Debug, Clone, Serialize)]
pub struct SelftestSummary {
    pub grid_size: usize,
    pub recovery_failures: Vec<Mismatch>,
    pub preset_failures: Vec<Mismatch>,
    pub rounding_checks: usize,
    pub rounding_failures: Vec<String>,
    pub ideal_checks: usize,
    pub ideal_failures: Vec<String>,
}

impl SelftestSummary {
    pub fn passed(&self) -> bool {
        self.recovery_failures.is_empty()
            && self.preset_failures.is_empty()
            && self.rounding_failures.is_empty()
            && self.ideal_failures.is_empty()
    }
}

pub fn run_selftest(rounding_samples: usize, ideal_samples: usize, seed: u64) -> SelftestSummary {
    let budget = Budget::default();
    let (grid_size, recovery_failures) = run_recovery(budget);
    let preset_failures = preset_soundness(budget);
    let (rounding_checks, rounding_failures) = rounding_equivalence(rounding_samples, seed);
    let (ideal_checks, ideal_failures) = ideal_fma_equivalence(ideal_samples, seed ^ 0x5eed);
    SelftestSummary {
        grid_size,
        recovery_failures,
        preset_failures,
        rounding_checks,
        rounding_failures,
        ideal_checks,
        ideal_failures,
    }
}
