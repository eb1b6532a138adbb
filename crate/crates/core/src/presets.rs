//! Accelerator presets: one emulator config per (GPU, input format) pair,
//! each paired with the feature cells it is expected to exhibit.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendDescriptor;
use crate::demo;
use crate::detector::{run_pipeline, Budget, FeatureReport, Finding};
use crate::emulator::{AcceleratorConfig, IntraBlockOrder};
use crate::exactnum::Dyadic;
use crate::softfp::{FormatName, RoundingMode};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PresetError {
    #[error("{gpu} does not support {format} inputs")]
    NotSupported { gpu: Gpu, format: FormatName },
    #[error("unknown GPU `{0}`")]
    UnknownGpu(String),
    #[error("no point of the MI100 sweep reproduces 255.875")]
    SweepFailed,
    #[error("detection failed: {0}")]
    Detection(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gpu {
    #[serde(rename = "v100")]
    V100,
    #[serde(rename = "a100")]
    A100,
    #[serde(rename = "h100")]
    H100,
    #[serde(rename = "mi100")]
    Mi100,
    #[serde(rename = "mi250x")]
    Mi250x,
}

impl Gpu {
    pub const ALL: [Gpu; 5] = [Gpu::V100, Gpu::A100, Gpu::H100, Gpu::Mi100, Gpu::Mi250x];

    pub fn label(self) -> &'static str {
        match self {
            Gpu::V100 => "V100",
            Gpu::A100 => "A100",
            Gpu::H100 => "H100",
            Gpu::Mi100 => "MI100",
            Gpu::Mi250x => "MI250X",
        }
    }
}

impl fmt::Display for Gpu {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Gpu {
    type Err = PresetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "v100" => Ok(Gpu::V100),
            "a100" => Ok(Gpu::A100),
            "h100" => Ok(Gpu::H100),
            "mi100" => Ok(Gpu::Mi100),
            "mi250x" | "mi250" => Ok(Gpu::Mi250x),
            _ => Err(PresetError::UnknownGpu(s.to_string())),
        }
    }
}

/// A table cell that is either exact or a lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Exactly(u32),
    AtLeast(u32),
}

impl Bound {
    /// Whether an observed bound satisfies this cell.
    pub fn admits(&self, observed: Bound) -> bool {
        match (*self, observed) {
            (Bound::Exactly(a), Bound::Exactly(b)) => a == b,
            (Bound::AtLeast(a), Bound::Exactly(b)) | (Bound::AtLeast(a), Bound::AtLeast(b)) => b >= a,
            (Bound::Exactly(_), Bound::AtLeast(_)) => false,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Exactly(n) => write!(f, "{n}"),
            Bound::AtLeast(n) => write!(f, ">={n}"),
        }
    }
}

/// Order-control cell: ✗ or N.A. (no row of the table shows ✓).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderCell {
    Yes,
    No,
    NotApplicable,
}

impl fmt::Display for OrderCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OrderCell::Yes => "yes",
            OrderCell::No => "no",
            OrderCell::NotApplicable => "N.A.",
        })
    }
}

/// The literal cells of one table row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedFeatures {
    pub subnormal_inputs: bool,
    pub subnormal_outputs: bool,
    pub extra_bits: Bound,
    pub rounding: RoundingMode,
    /// Verbatim cell text, including footnote markers.
    pub rounding_cell: String,
    pub fma_width: Bound,
    pub order_controllable: OrderCell,
    /// Output-conversion mode (FP16/BF16 inputs) or product mode (FP32/FP64).
    pub last_column: Option<RoundingMode>,
    pub last_column_cell: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PresetRow {
    pub gpu: Gpu,
    pub input_format: FormatName,
    pub config: AcceleratorConfig,
    pub expected_features: ExpectedFeatures,
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

impl PresetRow {
    pub fn key(&self) -> String {
        format!(
            "{}/{}",
            self.gpu.label().to_ascii_lowercase(),
            self.input_format.as_str()
        )
    }
}

/// All supported (GPU, format) pairs in table order.
pub const TABLE_ROWS: [(Gpu, FormatName); 16] = [
    (Gpu::V100, FormatName::Fp16),
    (Gpu::A100, FormatName::Fp16),
    (Gpu::H100, FormatName::Fp16),
    (Gpu::Mi100, FormatName::Fp16),
    (Gpu::Mi250x, FormatName::Fp16),
    (Gpu::A100, FormatName::Bf16),
    (Gpu::H100, FormatName::Bf16),
    (Gpu::Mi100, FormatName::Bf16),
    (Gpu::Mi250x, FormatName::Bf16),
    (Gpu::A100, FormatName::Tf32),
    (Gpu::H100, FormatName::Tf32),
    (Gpu::Mi100, FormatName::Fp32),
    (Gpu::Mi250x, FormatName::Fp32),
    (Gpu::A100, FormatName::Fp64),
    (Gpu::H100, FormatName::Fp64),
    (Gpu::Mi250x, FormatName::Fp64),
];

const RNE: RoundingMode = RoundingMode::NearestEven;
const RTZ: RoundingMode = RoundingMode::TowardZero;

struct Row {
    sub_in: bool,
    sub_out: bool,
    extra: Bound,
    rounding: RoundingMode,
    rounding_cell: &'static str,
    width: Bound,
    order: OrderCell,
    last: Option<RoundingMode>,
    last_cell: &'static str,
}

fn expected_row(gpu: Gpu, format: FormatName) -> Option<Row> {
    use Bound::{AtLeast, Exactly};
    use FormatName::*;
    use Gpu::*;
    use OrderCell::{No, NotApplicable as Na};
    let r = |sub: bool, extra, rounding, rounding_cell, width, order, last: Option<RoundingMode>, last_cell| Row {
        sub_in: sub,
        sub_out: sub,
        extra,
        rounding,
        rounding_cell,
        width,
        order,
        last,
        last_cell,
    };
    Some(match (gpu, format) {
        (V100, Fp16) => r(true, Exactly(0), RTZ, "truncate", Exactly(4), No, Some(RNE), "RTN-TE"),
        (A100, Fp16) => r(true, Exactly(1), RTZ, "truncate", Exactly(8), No, Some(RNE), "RTN-TE"),
        (H100, Fp16) => r(true, AtLeast(2), RTZ, "truncate", AtLeast(16), No, Some(RNE), "RTN-TE"),
        (Mi100, Fp16) => r(true, Exactly(3), RNE, "RTN-TE*", Exactly(4), No, Some(RNE), "RTN-TE"),
        (Mi250x, Fp16) => r(false, Exactly(3), RNE, "RTN-TE", Exactly(1), Na, Some(RNE), "RTN-TE"),
        (A100, Bf16) => r(true, Exactly(1), RTZ, "truncate", Exactly(8), No, None, "N.A.**"),
        (H100, Bf16) => r(true, AtLeast(2), RTZ, "truncate", AtLeast(16), No, Some(RNE), "RTN-TE"),
        (Mi100, Bf16) => r(true, Exactly(3), RNE, "RTN-TE", Exactly(2), No, Some(RNE), "RTN-TE"),
        (Mi250x, Bf16) => r(false, Exactly(3), RNE, "RTN-TE", Exactly(1), Na, Some(RNE), "RTN-TE"),
        (A100, Tf32) => r(true, Exactly(1), RNE, "RTN-TE", Exactly(4), No, None, "N.A."),
        (H100, Tf32) => r(true, AtLeast(2), RTZ, "truncate", Exactly(4), No, None, "N.A."),
        (Mi100, Fp32) => r(true, Exactly(3), RNE, "RTN-TE", Exactly(1), Na, Some(RNE), "RTN-TE"),
        (Mi250x, Fp32) => r(true, Exactly(3), RNE, "RTN-TE", Exactly(1), Na, Some(RNE), "RTN-TE"),
        (A100, Fp64) => r(true, Exactly(3), RNE, "RTN-TE", Exactly(1), No, Some(RNE), "RTN-TE"),
        (H100, Fp64) => r(true, Exactly(3), RNE, "RTN-TE", Exactly(1), No, Some(RNE), "RTN-TE"),
        (Mi250x, Fp64) => r(true, Exactly(3), RNE, "RTN-TE", Exactly(1), Na, Some(RNE), "RTN-TE"),
        _ => return None,
    })
}

/// Narrow-input rows emit their own format except where the table says the
/// GPU cannot (A100 has no BF16 output).
fn output_format(gpu: Gpu, format: FormatName) -> FormatName {
    match (gpu, format) {
        (Gpu::A100, FormatName::Bf16) => FormatName::Fp32,
        (_, FormatName::Fp16 | FormatName::Bf16) => format,
        _ => format.default_accumulator(),
    }
}

fn base_config(gpu: Gpu, format: FormatName, row: &Row) -> AcceleratorConfig {
    let extra = match row.extra {
        Bound::Exactly(n) => n as u8,
        // The smallest count that reproduces the demo value (see demo tests).
        Bound::AtLeast(_) => 3,
    };
    let width = match row.width {
        Bound::Exactly(n) | Bound::AtLeast(n) => n as usize,
    };
    let rne = row.rounding == RNE;
    AcceleratorConfig {
        input_format: format,
        accumulate_format: format.default_accumulator(),
        output_format: output_format(gpu, format),
        extra_bits: extra,
        sticky_on_last: extra == 3 && rne,
        acc_rounding: row.rounding,
        block_width: width,
        flush_subnormal_inputs: !row.sub_in,
        flush_subnormal_outputs: !row.sub_out,
        normalize_once: true,
        intra_block_order: IntraBlockOrder::AlignToBlockMax,
        carry_takes_slot: false,
        product_rounding: RNE,
        output_conversion_rounding: RNE,
    }
}

/// One evaluated point of the MI100 micro-semantics sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SweepPoint {
    pub sticky_on_last: bool,
    pub carry_takes_slot: bool,
    pub normalize_once: bool,
    /// |D₁₁| of the demo under this point, as an exact decimal.
    pub demo_magnitude: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Mi100Sweep {
    pub points: Vec<SweepPoint>,
    /// Index into `points` of the first point reproducing 255.875.
    pub chosen: Option<usize>,
}

pub const MI100_DEMO_TARGET: &str = "255.875";

/// Evaluate the sweep over sticky semantics, whether the carry occupies a
/// first-block slot, and normalization timing, in that priority order.
pub fn run_mi100_sweep() -> Mi100Sweep {
    let row = expected_row(Gpu::Mi100, FormatName::Fp16).expect("row exists");
    let base = base_config(Gpu::Mi100, FormatName::Fp16, &row);
    let mut points = Vec::new();
    for sticky in [true, false] {
        for slot in [false, true] {
            for once in [true, false] {
                let cfg = AcceleratorConfig {
                    sticky_on_last: sticky,
                    carry_takes_slot: slot,
                    normalize_once: once,
                    ..base.clone()
                };
                let mag = demo::demo_d11(&cfg)
                    .ok()
                    .and_then(|d| d.to_dyadic().ok())
                    .map(|v| v.abs().to_string())
                    .unwrap_or_else(|| "n/a".into());
                points.push(SweepPoint {
                    sticky_on_last: sticky,
                    carry_takes_slot: slot,
                    normalize_once: once,
                    demo_magnitude: mag,
                });
            }
        }
    }
    let chosen = points.iter().position(|p| p.demo_magnitude == MI100_DEMO_TARGET);
    Mi100Sweep { points, chosen }
}

/// The sweep, evaluated once per process.
pub fn mi100_sweep() -> &'static Mi100Sweep {
    static SWEEP: OnceLock<Mi100Sweep> = OnceLock::new();
    SWEEP.get_or_init(run_mi100_sweep)
}

pub fn preset(gpu: Gpu, format: FormatName) -> Result<PresetRow, PresetError> {
    let row = expected_row(gpu, format).ok_or(PresetError::NotSupported { gpu, format })?;
    let mut config = base_config(gpu, format, &row);
    let mut metadata = serde_json::Map::new();
    if row.rounding_cell.ends_with('*') {
        metadata.insert(
            "rounding_footnote".into(),
            "RTN-TE = round to nearest and round to even when tie.".into(),
        );
    }
    if row.last_cell.ends_with("**") {
        metadata.insert(
            "last_column_footnote".into(),
            "A100 doesn't support BF16 output.".into(),
        );
    }
    if matches!(row.extra, Bound::AtLeast(_)) {
        metadata.insert(
            "extra_bits_choice".into(),
            "3: fewest bits that keep the 2^-6 demo products alive".into(),
        );
    }
    if (gpu, format) == (Gpu::Mi100, FormatName::Fp16) {
        let sweep = mi100_sweep();
        let chosen = sweep.chosen.ok_or(PresetError::SweepFailed)?;
        let p = &sweep.points[chosen];
        config.sticky_on_last = p.sticky_on_last;
        config.carry_takes_slot = p.carry_takes_slot;
        config.normalize_once = p.normalize_once;
        metadata.insert("micro_semantics_sweep".into(), serde_json::to_value(sweep).unwrap());
    }
    let expected_features = ExpectedFeatures {
        subnormal_inputs: row.sub_in,
        subnormal_outputs: row.sub_out,
        extra_bits: row.extra,
        rounding: row.rounding,
        rounding_cell: row.rounding_cell.to_string(),
        fma_width: row.width,
        order_controllable: row.order,
        last_column: row.last,
        last_column_cell: row.last_cell.to_string(),
    };
    Ok(PresetRow {
        gpu,
        input_format: format,
        config,
        expected_features,
        metadata,
    })
}

pub fn all_presets() -> Result<Vec<PresetRow>, PresetError> {
    TABLE_ROWS.iter().map(|&(g, f)| preset(g, f)).collect()
}

/// Parse `gpu` or `gpu/format` (format defaults to FP16).
pub fn parse_preset_name(s: &str, default_format: FormatName) -> Result<(Gpu, FormatName), String> {
    let (g, f) = match s.split_once(['/', ':', '-']) {
        Some((g, f)) => (g, f.parse::<FormatName>().map_err(|e| e.to_string())?),
        None => (s, default_format),
    };
    Ok((g.parse::<Gpu>().map_err(|e| e.to_string())?, f))
}

/// Exact magnitude of the demo residue between a value and the exact answer.
pub fn demo_residue(cfg: &AcceleratorConfig) -> Option<Dyadic> {
    let d = demo::demo_d11(cfg).ok()?.to_dyadic().ok()?;
    Some(demo::demo_exact().abs() - d.abs())
}

/// One compared cell: expected text, detected text, and whether they agree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CellCheck {
    pub column: &'static str,
    pub expected: String,
    pub observed: String,
    pub ok: bool,
}

fn bool_cell(expected: bool, observed: Finding<bool>) -> (String, String, bool) {
    let yn = |b: bool| if b { "yes" } else { "no" }.to_string();
    (yn(expected), observed.to_string(), observed == Finding::Known(expected))
}

/// Compare a detector report with the expected cells of a preset row.
/// `≥` cells accept any detected value the bound admits.
pub fn check_expected(row: &PresetRow, report: &FeatureReport) -> Vec<CellCheck> {
    let p = &row.expected_features;
    let mut out = Vec::new();
    let mut push = |column, (expected, observed, ok): (String, String, bool)| {
        out.push(CellCheck {
            column,
            expected,
            observed,
            ok,
        })
    };
    push(
        "subnormal_inputs",
        bool_cell(p.subnormal_inputs, report.subnormal_inputs_ok),
    );
    push(
        "subnormal_outputs",
        bool_cell(p.subnormal_outputs, report.subnormal_outputs_ok),
    );
    let bound = |want: Bound, got: Finding<Bound>| {
        let ok = got.known().is_some_and(|b| want.admits(b));
        (want.to_string(), got.to_string(), ok)
    };
    push("extra_bits", bound(p.extra_bits, report.extra_bits));
    push(
        "rounding",
        (
            p.rounding.label().to_string(),
            report.acc_rounding.to_string(),
            report.acc_rounding == Finding::Known(p.rounding),
        ),
    );
    push("fma_width", bound(p.fma_width, report.fma_width));
    let order_ok = match p.order_controllable {
        OrderCell::Yes => report.order_controllable == Finding::Known(true),
        OrderCell::No => report.order_controllable == Finding::Known(false),
        OrderCell::NotApplicable => report.order_controllable == Finding::NotApplicable,
    };
    push(
        "order_controllable",
        (
            p.order_controllable.to_string(),
            report.order_controllable.to_string(),
            order_ok,
        ),
    );
    let last = match row.input_format {
        FormatName::Fp32 | FormatName::Fp64 => report.product_rounding,
        _ => report.output_conversion_rounding,
    };
    let last_ok = match p.last_column {
        Some(m) => last == Finding::Known(m),
        None => last == Finding::NotApplicable,
    };
    push("last_column", (p.last_column_cell.clone(), last.to_string(), last_ok));
    out
}

/// For every pair of presets sharing `format`, the names of the tests whose
/// verdicts differ (plus `demo` for FP16 when the demo outputs differ).
#[derive(Debug, Clone, Serialize)]
pub struct Distinguishability {
    pub format: FormatName,
    pub presets: Vec<String>,
    /// `separators[i][j]` lists the tests telling preset i from preset j.
    pub separators: Vec<Vec<Vec<String>>>,
}

impl Distinguishability {
    /// Off-diagonal pairs that no test separates.
    pub fn empty_pairs(&self) -> Vec<(String, String)> {
        let n = self.presets.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.separators[i][j].is_empty() {
                    out.push((self.presets[i].clone(), self.presets[j].clone()));
                }
            }
        }
        out
    }
}

pub fn distinguishability_matrix(format: FormatName, budget: Budget) -> Result<Distinguishability, PresetError> {
    let rows: Vec<PresetRow> = all_presets()?
        .into_iter()
        .filter(|r| r.input_format == format)
        .collect();
    let mut reports = Vec::new();
    let mut demos = Vec::new();
    for r in &rows {
        let b = BackendDescriptor::emulator(r.key(), r.config.clone());
        let rep = run_pipeline(&b, format, budget).map_err(|e| PresetError::Detection(e.to_string()))?;
        reports.push(rep);
        demos.push(if format == FormatName::Fp16 {
            demo::demo_d11(&r.config).ok().map(|d| d.to_hex())
        } else {
            None
        });
    }
    let n = rows.len();
    let mut separators = vec![vec![Vec::new(); n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut tests: Vec<String> = reports[i]
                .outcomes
                .iter()
                .filter(|o| {
                    reports[j]
                        .outcome(&o.test)
                        .map(|p| p.verdict != o.verdict)
                        .unwrap_or(true)
                })
                .map(|o| o.test.clone())
                .collect();
            if demos[i].is_some() && demos[i] != demos[j] {
                tests.push("demo".into());
            }
            separators[i][j] = tests;
        }
    }
    Ok(Distinguishability {
        format,
        presets: rows.iter().map(PresetRow::key).collect(),
        separators,
    })
}
