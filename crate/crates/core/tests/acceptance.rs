//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if any fails.

use std::time::{Duration, Instant};

use matprobe::backends::BackendDescriptor;
use matprobe::demo::{demo_alpha, demo_beta, demo_c, demo_col, demo_row, run_demo};
use matprobe::detector::{run_pipeline, Budget, Confidence};
use matprobe::exactnum::Dyadic;
use matprobe::presets::{
    all_presets, check_expected, distinguishability_matrix, mi100_sweep, preset, Gpu, MI100_DEMO_TARGET,
};
use matprobe::selftest::{ideal_fma_equivalence, recovery_grid, recovery_mismatches, rounding_equivalence};
use matprobe::softfp::{round_grs, FormatName, GrsSnapshot, RoundingMode};

const TABLE_LIMIT: Duration = Duration::from_secs(5);
const DEMO_LIMIT_PER_PRESET: Duration = Duration::from_secs(1);
const RECOVERY_LIMIT: Duration = Duration::from_secs(60);
const RECOVERY_MIN_CONFIGS: usize = 160;
const ROUNDING_LIMIT: Duration = Duration::from_secs(30);
const ROUNDING_SAMPLES: usize = 100_000;
const IDEAL_LIMIT: Duration = Duration::from_secs(10);
const IDEAL_SAMPLES: usize = 10_000;
const SEED: u64 = 2024;

/// Tests whose verdicts are counts; a bounded verdict there is a lost feature.
const COUNT_TESTS: [&str; 3] = ["t_1_bit", "t_3_bits_fin_rnd", "t_blk_fma_width"];

struct Verdict {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

fn timed(limit: Duration, f: impl FnOnce() -> Verdict) -> Verdict {
    let t = Instant::now();
    let mut v = f();
    let elapsed = t.elapsed();
    if elapsed > limit {
        v.pass = false;
        v.details.push(format!("runtime {elapsed:.2?} exceeds {limit:?}"));
    }
    v.summary = format!("{} [{elapsed:.2?}, limit {limit:?}]", v.summary);
    v
}

fn table_reproduction() -> Verdict {
    let mut details = Vec::new();
    let mut cells = 0;
    let rows = match all_presets() {
        Ok(r) => r,
        Err(e) => {
            return Verdict {
                pass: false,
                summary: "presets unavailable".into(),
                details: vec![e.to_string()],
            }
        }
    };
    for row in &rows {
        let b = BackendDescriptor::emulator(row.key(), row.config.clone());
        match run_pipeline(&b, row.input_format, Budget::default()) {
            Ok(report) => {
                for c in check_expected(row, &report) {
                    cells += 1;
                    if !c.ok {
                        details.push(format!(
                            "{} {}: expected {} observed {}",
                            row.key(),
                            c.column,
                            c.expected,
                            c.observed
                        ));
                    }
                }
            }
            Err(e) => details.push(format!("{}: {e}", row.key())),
        }
    }
    Verdict {
        pass: details.is_empty() && rows.len() == 16,
        summary: format!("{} rows, {}/{} cells match", rows.len(), cells - details.len(), cells),
        details,
    }
}

/// 2^7 + 2^6 - 2^-6, recomputed from the demo operands.
fn demo_oracle() -> Dyadic {
    let terms: Vec<(Dyadic, Dyadic)> = demo_row()
        .iter()
        .zip(demo_col())
        .map(|(a, b)| (a.to_dyadic().unwrap(), b.to_dyadic().unwrap()))
        .collect();
    let ab = Dyadic::exact_dot(&terms, &Dyadic::zero());
    let alpha = demo_alpha().to_dyadic().unwrap();
    let beta = demo_beta().to_dyadic().unwrap();
    &(&alpha * &ab) + &(&beta * &demo_c().to_dyadic().unwrap())
}

fn demo_values() -> Verdict {
    let mut details = Vec::new();
    let mut slowest = Duration::ZERO;
    let expected_exact = &(&Dyadic::pow2(7) + &Dyadic::pow2(6)) - &Dyadic::pow2(-6);
    let exact = demo_oracle();
    if exact.abs() != expected_exact {
        details.push(format!("exact value {exact} is not 191.984375 in magnitude"));
    }
    let sweep = mi100_sweep();
    if sweep.chosen.is_none() {
        details.push(format!("MI100 sweep found no point giving {MI100_DEMO_TARGET}"));
    }
    let cases = [
        (Gpu::V100, "0"),
        (Gpu::A100, "0"),
        (Gpu::Mi250x, "0"),
        (Gpu::Mi100, MI100_DEMO_TARGET),
        (Gpu::H100, "191.875"),
    ];
    for (gpu, want) in cases {
        let t = Instant::now();
        let got = preset(gpu, FormatName::Fp16)
            .map_err(|e| e.to_string())
            .and_then(|row| run_demo(&BackendDescriptor::emulator(row.key(), row.config)).map_err(|e| e.to_string()));
        let elapsed = t.elapsed();
        slowest = slowest.max(elapsed);
        match got {
            Ok(o) if o.magnitude == want => {}
            Ok(o) => details.push(format!(
                "{}: |D11| = {} (0x{}), expected {want}",
                gpu.label(),
                o.magnitude,
                o.d11_hex
            )),
            Err(e) => details.push(format!("{}: {e}", gpu.label())),
        }
        if elapsed > DEMO_LIMIT_PER_PRESET {
            details.push(format!(
                "{}: {elapsed:.2?} exceeds {DEMO_LIMIT_PER_PRESET:?}",
                gpu.label()
            ));
        }
    }
    let t = Instant::now();
    match run_demo(&BackendDescriptor::oracle(FormatName::Fp32)) {
        Ok(o) if o.magnitude == "191.984375" => {}
        Ok(o) => details.push(format!("oracle: |D11| = {}, expected 191.984375", o.magnitude)),
        Err(e) => details.push(format!("oracle: {e}")),
    }
    slowest = slowest.max(t.elapsed());
    Verdict {
        pass: details.is_empty(),
        summary: format!("5 presets + oracle, slowest {slowest:.2?} (limit {DEMO_LIMIT_PER_PRESET:?} each)"),
        details,
    }
}

fn config_recovery() -> Verdict {
    let grid = recovery_grid();
    let mut details = Vec::new();
    let mut bounded_unobservable = 0;
    for cfg in &grid {
        let label = matprobe::selftest::config_label(cfg);
        let report = match run_pipeline(
            &BackendDescriptor::emulator(label.clone(), cfg.clone()),
            cfg.input_format,
            Budget::default(),
        ) {
            Ok(r) => r,
            Err(e) => {
                details.push(format!("{label}: {e}"));
                continue;
            }
        };
        for m in recovery_mismatches(cfg, &report) {
            details.push(format!(
                "{}: {} expected {} observed {}",
                m.subject, m.field, m.expected, m.observed
            ));
        }
        for o in &report.outcomes {
            if o.confidence == Confidence::Bounded {
                if COUNT_TESTS.contains(&o.test.as_str()) {
                    details.push(format!("{label}: {} bounded under an uncapped budget", o.test));
                } else {
                    bounded_unobservable += 1;
                }
            }
        }
    }
    if grid.len() < RECOVERY_MIN_CONFIGS {
        details.push(format!("grid has {} configs, need {RECOVERY_MIN_CONFIGS}", grid.len()));
    }
    Verdict {
        pass: details.is_empty(),
        summary: format!(
            "{} configs, {} mismatches, {bounded_unobservable} bounded verdicts on unobservable features",
            grid.len(),
            details.len()
        ),
        details,
    }
}

fn rounding_oracle() -> Verdict {
    let (checks, bad) = rounding_equivalence(ROUNDING_SAMPLES, SEED);
    Verdict {
        pass: bad.is_empty() && checks == ROUNDING_SAMPLES * 5 * 4,
        summary: format!("{checks} comparisons ({ROUNDING_SAMPLES} x 5 formats x 4 modes)"),
        details: bad,
    }
}

fn worked_example() -> Verdict {
    let grs = GrsSnapshot::new(true, false, false);
    // Significand 1, G R S = 1 0 0; a carry renormalizes to 1 x 2^1.
    let value = |(sig, carry): (u64, bool)| if carry { 2u64 } else { sig };
    let nearest = value(round_grs(false, 1, 1, grs, RoundingMode::NearestEven));
    let truncated = value(round_grs(false, 1, 1, grs, RoundingMode::TowardZero));
    let mut details = Vec::new();
    if nearest != 2 {
        details.push(format!("RTN-TE gave {nearest}"));
    }
    if truncated != 1 {
        details.push(format!("truncate gave {truncated}"));
    }
    Verdict {
        pass: details.is_empty(),
        summary: format!("RTN-TE -> {nearest}, truncate -> {truncated}"),
        details,
    }
}

fn ideal_fma() -> Verdict {
    let (checks, bad) = ideal_fma_equivalence(IDEAL_SAMPLES, SEED);
    Verdict {
        pass: bad.is_empty() && checks == IDEAL_SAMPLES,
        summary: format!("{checks} dot products of length <= 64"),
        details: bad,
    }
}

fn distinguishability() -> Verdict {
    let mut details = Vec::new();
    let mut pairs = 0;
    for f in FormatName::ALL {
        match distinguishability_matrix(f, Budget::default()) {
            Ok(m) => {
                let n = m.presets.len();
                pairs += n * n.saturating_sub(1) / 2;
                for (a, b) in m.empty_pairs() {
                    details.push(format!("{f}: {a} vs {b} not separated by any test"));
                }
            }
            Err(e) => details.push(format!("{f}: {e}")),
        }
    }
    Verdict {
        pass: details.is_empty(),
        summary: format!("{pairs} preset pairs, {} empty cells", details.len()),
        details,
    }
}

type Criterion = (&'static str, Box<dyn FnOnce() -> Verdict>);

fn main() {
    let criteria: [Criterion; 7] = [
        (
            "table reproduction",
            Box::new(|| timed(TABLE_LIMIT, table_reproduction)),
        ),
        ("demo values", Box::new(demo_values)),
        ("config recovery", Box::new(|| timed(RECOVERY_LIMIT, config_recovery))),
        ("rounding oracle", Box::new(|| timed(ROUNDING_LIMIT, rounding_oracle))),
        ("worked rounding example", Box::new(worked_example)),
        ("ideal FMA", Box::new(|| timed(IDEAL_LIMIT, ideal_fma))),
        ("distinguishability", Box::new(distinguishability)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let v = run();
        println!(
            "criterion {}: {} {name}: {}",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.summary
        );
        for d in &v.details {
            println!("    {d}");
        }
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {} of 7 criteria pass", 7 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
