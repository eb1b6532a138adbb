//! The porting-danger GEMM: one FP16 matmul whose single dot product mixes a
//! 2^20 term with thousands of tiny ones, so every accelerator's alignment
//! window shows up in the answer.
//!
//! All elements of D are equal, so the fixture is the 1×8192×1 slice that
//! computes one of them.

use serde::Serialize;

use crate::backends::{run_values, Backend, BackendError, Fixture};
use crate::emulator::{self, AcceleratorConfig, EmulatorError, Matrix};
use crate::exactnum::Dyadic;
use crate::softfp::{FormatName, FpFormat, SoftFloat};

pub const DEMO_K: usize = 8192;
/// Shape of the full experiment; every element equals the 1×K×1 slice.
pub const DEMO_FULL_SHAPE: [usize; 3] = [8192, 8192, 8192];

fn h(x: &Dyadic) -> SoftFloat {
    SoftFloat::exact(x, FpFormat::FP16).expect("demo value exact in FP16")
}

fn s(x: &Dyadic) -> SoftFloat {
    SoftFloat::exact(x, FpFormat::FP32).expect("demo value exact in FP32")
}

/// Row 0 of A: 2^10, then 2^-2 at odd and 2^-3 at even indices.
pub fn demo_row() -> Vec<SoftFloat> {
    (0..DEMO_K)
        .map(|j| match j {
            0 => h(&Dyadic::pow2(10)),
            j if j % 2 == 1 => h(&Dyadic::pow2(-2)),
            _ => h(&Dyadic::pow2(-3)),
        })
        .collect()
}

/// Column 0 of B: 2^10, then 2^-3.
pub fn demo_col() -> Vec<SoftFloat> {
    (0..DEMO_K)
        .map(|j| {
            if j == 0 {
                h(&Dyadic::pow2(10))
            } else {
                h(&Dyadic::pow2(-3))
            }
        })
        .collect()
}

pub fn demo_c() -> SoftFloat {
    s(&Dyadic::pow2(20))
}

pub fn demo_alpha() -> SoftFloat {
    s(&Dyadic::from_int(-1))
}

pub fn demo_beta() -> SoftFloat {
    s(&Dyadic::one())
}

pub fn demo_build_fixture() -> Fixture {
    let a = Matrix::new(1, DEMO_K, FpFormat::FP16, demo_row()).unwrap();
    let b = Matrix::new(DEMO_K, 1, FpFormat::FP16, demo_col()).unwrap();
    let c = Matrix::new(1, 1, FpFormat::FP32, vec![demo_c()]).unwrap();
    let mut f = Fixture::from_matrices("demo", &a, &b, &c).with_epilogue(&demo_alpha(), &demo_beta());
    f.metadata.insert("test".into(), "demo".into());
    f.metadata
        .insert("full_shape_mnk".into(), serde_json::json!(DEMO_FULL_SHAPE));
    f.metadata.insert("alpha".into(), "-1".into());
    f.metadata.insert("beta".into(), "1".into());
    f
}

/// Exact `-(row·col) + 2^20`.
pub fn demo_exact() -> Dyadic {
    let terms: Vec<(Dyadic, Dyadic)> = demo_row()
        .iter()
        .zip(demo_col())
        .map(|(a, b)| (a.to_dyadic().unwrap(), b.to_dyadic().unwrap()))
        .collect();
    let dot = Dyadic::exact_dot(&terms, &Dyadic::zero());
    Dyadic::pow2(20) - dot
}

fn demo_config(cfg: &AcceleratorConfig) -> Result<AcceleratorConfig, EmulatorError> {
    if cfg.input_format != FormatName::Fp16 || cfg.accumulate_format != FormatName::Fp32 {
        return Err(EmulatorError::InvalidConfig(
            "the demo needs FP16 inputs with FP32 accumulation".into(),
        ));
    }
    Ok(AcceleratorConfig {
        output_format: FormatName::Fp32,
        ..cfg.clone()
    })
}

/// D₁₁ with the scaling applied after the K loop: `round(-acc + 2^20)`.
pub fn demo_d11(cfg: &AcceleratorConfig) -> Result<SoftFloat, EmulatorError> {
    let cfg = demo_config(cfg)?;
    let zero = SoftFloat::zero(FpFormat::FP32, false);
    let acc = emulator::dot_accumulate(&demo_row(), &demo_col(), &zero, &cfg)?;
    Ok(emulator::convert_output(
        &emulator::epilogue(&acc, &demo_c(), &demo_alpha(), &demo_beta(), FpFormat::FP32),
        &cfg,
    ))
}

/// D₁₁ with α folded into A and C entering the first block instead.
pub fn demo_d11_c_first(cfg: &AcceleratorConfig) -> Result<SoftFloat, EmulatorError> {
    let cfg = demo_config(cfg)?;
    let row: Vec<SoftFloat> = demo_row().iter().map(SoftFloat::negate).collect();
    let acc = emulator::dot_accumulate(&row, &demo_col(), &demo_c(), &cfg)?;
    Ok(emulator::convert_output(&acc, &cfg))
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoOutcome {
    pub backend: String,
    pub d11: f64,
    pub d11_hex: String,
    pub magnitude: String,
    pub exact: String,
    pub exact_magnitude: String,
    pub deviation: String,
}

impl DemoOutcome {
    pub fn new(backend: String, d11: &SoftFloat) -> Self {
        let exact = demo_exact();
        let (magnitude, deviation) = match d11.to_dyadic() {
            Ok(v) => (v.abs().to_string(), (&v - &exact).abs().to_string()),
            Err(_) => ("n/a".into(), "n/a".into()),
        };
        DemoOutcome {
            backend,
            d11: d11.to_f64(),
            d11_hex: d11.to_hex(),
            magnitude,
            exact: exact.to_string(),
            exact_magnitude: exact.abs().to_string(),
            deviation,
        }
    }
}

/// Run the demo fixture on any backend.
pub fn run_demo(backend: &dyn Backend) -> Result<DemoOutcome, BackendError> {
    let f = demo_build_fixture();
    let d = run_values(backend, &f)?;
    Ok(DemoOutcome::new(backend.identity(), &d[0]))
}
