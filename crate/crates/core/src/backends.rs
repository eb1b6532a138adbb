//! Black-box matmul backends and the fixture file format they exchange.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emulator::{self, AcceleratorConfig, EmulatorError, Matrix};
use crate::exactnum::Dyadic;
use crate::softfp::{round_dyadic, FormatError, FormatName, FpFormat, RoundingMode, SoftFloat};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend {backend} does not support input {input} with output {output}")]
    Unsupported {
        backend: String,
        input: FormatName,
        output: FormatName,
    },
    #[error("k = {k} exceeds backend limit {max}")]
    TooLarge { k: usize, max: usize },
    #[error("malformed fixture or result: {0}")]
    Malformed(String),
    #[error("external backend failed: {0}")]
    Failure(String),
    #[error(transparent)]
    Emulator(#[from] EmulatorError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: std::io::Error) -> BackendError {
    BackendError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Epilogue {
    /// Scale on A·B, hex in the output format.
    pub alpha: String,
    /// Scale on C, hex in the output format.
    pub beta: String,
}

/// One matmul job: `D = A·B + C`, or `D = α·A·B + β·C` with an epilogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub id: String,
    pub input_format: FormatName,
    pub output_format: FormatName,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    #[serde(rename = "A")]
    pub a: Vec<String>,
    #[serde(rename = "B")]
    pub b: Vec<String>,
    #[serde(rename = "C")]
    pub c: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epilogue: Option<Epilogue>,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub metadata: serde_json::Map<String, serde_json::Value>,
}

fn hexes(xs: &[SoftFloat]) -> Vec<String> {
    xs.iter().map(SoftFloat::to_hex).collect()
}

fn parse_all(xs: &[String], f: FpFormat) -> Result<Vec<SoftFloat>, BackendError> {
    xs.iter()
        .map(|s| SoftFloat::from_hex(s, f).map_err(BackendError::from))
        .collect()
}

/// Decoded fixture payload.
#[derive(Debug, Clone)]
pub struct Operands {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub epilogue: Option<(SoftFloat, SoftFloat)>,
}

impl Fixture {
    pub fn from_matrices(id: impl Into<String>, a: &Matrix, b: &Matrix, c: &Matrix) -> Self {
        Fixture {
            id: id.into(),
            input_format: a.format.name,
            output_format: c.format.name,
            m: a.rows,
            n: b.cols,
            k: a.cols,
            a: hexes(&a.data),
            b: hexes(&b.data),
            c: hexes(&c.data),
            epilogue: None,
            metadata: serde_json::Map::new(),
        }
    }

    pub fn with_epilogue(mut self, alpha: &SoftFloat, beta: &SoftFloat) -> Self {
        self.epilogue = Some(Epilogue {
            alpha: alpha.to_hex(),
            beta: beta.to_hex(),
        });
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let dims = [
            ("A", self.a.len(), self.m * self.k),
            ("B", self.b.len(), self.k * self.n),
            ("C", self.c.len(), self.m * self.n),
        ];
        if self.m == 0 || self.n == 0 || self.k == 0 {
            return Err(BackendError::Malformed(format!("{}: zero dimension", self.id)));
        }
        for (name, got, want) in dims {
            if got != want {
                return Err(BackendError::Malformed(format!(
                    "{}: {name} has {got} elements, expected {want}",
                    self.id
                )));
            }
        }
        let win = self.input_format.format().hex_width();
        let wout = self.output_format.format().hex_width();
        let bad_width = self.a.iter().chain(&self.b).any(|s| s.len() != win)
            || self.c.iter().any(|s| s.len() != wout)
            || self
                .epilogue
                .as_ref()
                .is_some_and(|e| e.alpha.len() != wout || e.beta.len() != wout);
        if bad_width {
            return Err(BackendError::Malformed(format!("{}: hex width mismatch", self.id)));
        }
        Ok(())
    }

    pub fn operands(&self) -> Result<Operands, BackendError> {
        self.validate()?;
        let fin = self.input_format.format();
        let fout = self.output_format.format();
        let a = Matrix::new(self.m, self.k, fin, parse_all(&self.a, fin)?)?;
        let b = Matrix::new(self.k, self.n, fin, parse_all(&self.b, fin)?)?;
        let c = Matrix::new(self.m, self.n, fout, parse_all(&self.c, fout)?)?;
        let epilogue = match &self.epilogue {
            Some(e) => Some((
                SoftFloat::from_hex(&e.alpha, fout)?,
                SoftFloat::from_hex(&e.beta, fout)?,
            )),
            None => None,
        };
        Ok(Operands { a, b, c, epilogue })
    }

    pub fn save(&self, path: &Path) -> Result<(), BackendError> {
        write_json_atomic(path, self)
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        read_json(path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureResult {
    pub id: String,
    #[serde(rename = "D")]
    pub d: Vec<String>,
    pub status: RunStatus,
    #[serde(default)]
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<String>,
}

impl FixtureResult {
    pub fn save(&self, path: &Path) -> Result<(), BackendError> {
        write_json_atomic(path, self)
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        read_json(path)
    }

    /// Decode D in the fixture's output format, checking its shape.
    pub fn values(&self, fixture: &Fixture) -> Result<Vec<SoftFloat>, BackendError> {
        if self.status != RunStatus::Ok {
            return Err(BackendError::Failure(
                self.diagnostics.clone().unwrap_or_else(|| "status error".into()),
            ));
        }
        if self.d.len() != fixture.m * fixture.n {
            return Err(BackendError::Malformed(format!(
                "{}: D has {} elements, expected {}",
                self.id,
                self.d.len(),
                fixture.m * fixture.n
            )));
        }
        parse_all(&self.d, fixture.output_format.format())
    }
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Serialize to `path` through a sibling temporary file and a rename.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), BackendError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| BackendError::Malformed(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), BackendError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(
        ".{name}.{}.{}.tmp",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, BackendError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| BackendError::Malformed(format!("{}: {e}", path.display())))
}

/// Anything that can evaluate a fixture.
pub trait Backend {
    fn identity(&self) -> String;
    fn supports(&self, input: FormatName, output: FormatName) -> bool;
    fn max_k(&self) -> usize;
    fn run(&self, fixture: &Fixture) -> Result<FixtureResult, BackendError>;
}

#[derive(Debug, Clone)]
pub enum BackendDescriptor {
    Emulator {
        label: String,
        config: AcceleratorConfig,
    },
    Oracle {
        accumulate: FormatName,
    },
    External {
        command: String,
        working_dir: Option<PathBuf>,
        max_k: usize,
    },
}

/// Largest K the in-process backends accept.
pub const IN_PROCESS_MAX_K: usize = 1 << 24;
/// Default K limit declared for external backends.
pub const EXTERNAL_DEFAULT_MAX_K: usize = 1 << 16;

impl BackendDescriptor {
    pub fn emulator(label: impl Into<String>, config: AcceleratorConfig) -> Self {
        BackendDescriptor::Emulator {
            label: label.into(),
            config,
        }
    }

    pub fn oracle(accumulate: FormatName) -> Self {
        BackendDescriptor::Oracle { accumulate }
    }

    pub fn external(command: impl Into<String>) -> Self {
        BackendDescriptor::External {
            command: command.into(),
            working_dir: None,
            max_k: EXTERNAL_DEFAULT_MAX_K,
        }
    }

    fn check(&self, f: &Fixture) -> Result<(), BackendError> {
        f.validate()?;
        if !self.supports(f.input_format, f.output_format) {
            return Err(BackendError::Unsupported {
                backend: self.identity(),
                input: f.input_format,
                output: f.output_format,
            });
        }
        if f.k > self.max_k() {
            return Err(BackendError::TooLarge {
                k: f.k,
                max: self.max_k(),
            });
        }
        Ok(())
    }

    fn ok(&self, f: &Fixture, d: &Matrix) -> FixtureResult {
        FixtureResult {
            id: f.id.clone(),
            d: hexes(&d.data),
            status: RunStatus::Ok,
            backend: self.identity(),
            diagnostics: None,
        }
    }
}

impl Backend for BackendDescriptor {
    fn identity(&self) -> String {
        match self {
            BackendDescriptor::Emulator { label, .. } => format!("emulator:{label}"),
            BackendDescriptor::Oracle { accumulate } => format!("oracle:{}", accumulate.as_str()),
            BackendDescriptor::External { command, .. } => format!("exec:{command}"),
        }
    }

    fn supports(&self, input: FormatName, output: FormatName) -> bool {
        match self {
            BackendDescriptor::Emulator { config, .. } => {
                input == config.input_format && (output == config.output_format || output == config.accumulate_format)
            }
            BackendDescriptor::Oracle { accumulate } => {
                let acc = accumulate.format().precision();
                input.default_accumulator() == *accumulate && output.format().precision() <= acc
            }
            BackendDescriptor::External { .. } => true,
        }
    }

    fn max_k(&self) -> usize {
        match self {
            BackendDescriptor::External { max_k, .. } => *max_k,
            _ => IN_PROCESS_MAX_K,
        }
    }

    fn run(&self, f: &Fixture) -> Result<FixtureResult, BackendError> {
        self.check(f)?;
        match self {
            BackendDescriptor::Emulator { config, .. } => {
                let ops = f.operands()?;
                let mut cfg = config.clone();
                cfg.output_format = f.output_format;
                let d = match ops.epilogue {
                    Some((alpha, beta)) => emulator::matmul_with_epilogue(&ops.a, &ops.b, &ops.c, &alpha, &beta, &cfg)?,
                    None => emulator::matmul(&ops.a, &ops.b, &ops.c, &cfg)?,
                };
                Ok(self.ok(f, &d))
            }
            BackendDescriptor::Oracle { .. } => {
                let ops = f.operands()?;
                let d = oracle_matmul(&ops, f.output_format.format());
                Ok(self.ok(f, &d))
            }
            BackendDescriptor::External {
                command, working_dir, ..
            } => run_external(command, working_dir.as_deref(), f),
        }
    }
}

/// Every element rounded once (RTN-TE) from its exact value.
fn oracle_matmul(ops: &Operands, out: FpFormat) -> Matrix {
    let mut d = Matrix::zeros(ops.a.rows, ops.b.cols, out);
    let one = SoftFloat::exact(&Dyadic::one(), ops.c.format).expect("one is exact");
    let (alpha, beta) = ops.epilogue.unwrap_or((one, one));
    for i in 0..ops.a.rows {
        for j in 0..ops.b.cols {
            let row = ops.a.row(i);
            let col = ops.b.col(j);
            let c = ops.c.get(i, j);
            d.set(i, j, oracle_element(&row, &col, &c, &alpha, &beta, out));
        }
    }
    d
}

fn oracle_element(
    row: &[SoftFloat],
    col: &[SoftFloat],
    c: &SoftFloat,
    alpha: &SoftFloat,
    beta: &SoftFloat,
    out: FpFormat,
) -> SoftFloat {
    let all_finite = row.iter().chain(col).chain([c, alpha, beta]).all(|x| x.is_finite());
    if !all_finite {
        // IEEE semantics for specials; f64 is wide enough to decide the class.
        let dot: f64 = row.iter().zip(col).map(|(a, b)| a.to_f64() * b.to_f64()).sum();
        let v = alpha.to_f64() * dot + beta.to_f64() * c.to_f64();
        return SoftFloat::from_f64(v, out, RoundingMode::NearestEven);
    }
    let terms: Vec<(Dyadic, Dyadic)> = row
        .iter()
        .zip(col)
        .map(|(a, b)| (a.to_dyadic().unwrap(), b.to_dyadic().unwrap()))
        .collect();
    let dot = Dyadic::exact_dot(&terms, &Dyadic::zero());
    let v = &(&alpha.to_dyadic().unwrap() * &dot) + &(&beta.to_dyadic().unwrap() * &c.to_dyadic().unwrap());
    if v.is_zero() {
        let all_neg_zero = row.iter().zip(col).all(|(a, b)| a.negative ^ b.negative)
            && c.negative
            && !alpha.negative
            && !beta.negative;
        let only_zeros = terms.iter().all(|(a, b)| a.is_zero() || b.is_zero()) && c.is_zero();
        return SoftFloat::zero(out, only_zeros && all_neg_zero);
    }
    round_dyadic(&v, out, RoundingMode::NearestEven)
}

fn scratch_dir() -> PathBuf {
    let base = std::env::var_os("MATPROBE_FIXTURE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);
    base.join(format!(
        "matprobe-{}-{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ))
}

fn run_external(command: &str, working_dir: Option<&Path>, f: &Fixture) -> Result<FixtureResult, BackendError> {
    let mut parts = command.split_whitespace();
    let program = parts
        .next()
        .ok_or_else(|| BackendError::Failure("empty command".into()))?;
    let dir = scratch_dir();
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let fixture_path = dir.join("fixture.json");
    let result_path = dir.join("result.json");
    f.save(&fixture_path)?;
    let mut cmd = Command::new(program);
    cmd.args(parts).arg(&fixture_path).arg(&result_path);
    if let Some(wd) = working_dir {
        cmd.current_dir(wd);
    }
    let output = cmd
        .output()
        .map_err(|e| BackendError::Failure(format!("cannot start `{program}`: {e}")))?;
    let outcome = if !output.status.success() {
        Err(BackendError::Failure(format!(
            "`{command}` exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )))
    } else {
        FixtureResult::load(&result_path).and_then(|r| {
            if r.id != f.id {
                return Err(BackendError::Malformed(format!(
                    "result id {} for fixture {}",
                    r.id, f.id
                )));
            }
            r.values(f)?;
            Ok(r)
        })
    };
    let _ = fs::remove_dir_all(&dir);
    outcome.map(|mut r| {
        if r.backend.is_empty() {
            r.backend = format!("exec:{command}");
        }
        r
    })
}

/// Run and decode in one step.
pub fn run_values(backend: &dyn Backend, f: &Fixture) -> Result<Vec<SoftFloat>, BackendError> {
    backend.run(f)?.values(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_fixture(a: f64, b: f64, c: f64) -> Fixture {
        let fin = FpFormat::FP16;
        let fout = FpFormat::FP32;
        let rne = RoundingMode::NearestEven;
        let am = Matrix::new(1, 1, fin, vec![SoftFloat::from_f64(a, fin, rne)]).unwrap();
        let bm = Matrix::new(1, 1, fin, vec![SoftFloat::from_f64(b, fin, rne)]).unwrap();
        let cm = Matrix::new(1, 1, fout, vec![SoftFloat::from_f64(c, fout, rne)]).unwrap();
        Fixture::from_matrices("t", &am, &bm, &cm)
    }

    #[test]
    fn json_shape() {
        let f = scalar_fixture(1.0, 2.0, 0.5);
        let v: serde_json::Value = serde_json::to_value(&f).unwrap();
        assert_eq!(v["input_format"], "fp16");
        assert_eq!(v["A"][0], "3c00");
        assert_eq!(v["C"][0], "3f000000");
        assert!(v.get("epilogue").is_none());
    }

    #[test]
    fn emulator_and_oracle_scalar() {
        let f = scalar_fixture(1.5, 2.0, 0.5);
        let emu = BackendDescriptor::emulator("base", AcceleratorConfig::baseline(FormatName::Fp16));
        let orc = BackendDescriptor::oracle(FormatName::Fp32);
        for b in [&emu as &dyn Backend, &orc] {
            let d = run_values(b, &f).unwrap();
            assert_eq!(d[0].to_f64(), 3.5);
        }
    }

    #[test]
    fn validation_errors() {
        let mut f = scalar_fixture(1.0, 1.0, 0.0);
        f.a.push("0000".into());
        assert!(matches!(f.validate(), Err(BackendError::Malformed(_))));
        let mut f = scalar_fixture(1.0, 1.0, 0.0);
        f.c[0] = "0000".into();
        assert!(f.validate().is_err());
    }

    #[test]
    fn unsupported_format() {
        let f = scalar_fixture(1.0, 1.0, 0.0);
        let emu = BackendDescriptor::emulator("bf", AcceleratorConfig::baseline(FormatName::Bf16));
        assert!(matches!(emu.run(&f), Err(BackendError::Unsupported { .. })));
    }

    #[test]
    fn oracle_rounds_once() {
        // 1 + 2^-24 + 2^-24: each term alone would vanish, together they tie up.
        let fin = FpFormat::FP16;
        let fout = FpFormat::FP32;
        let q = SoftFloat::exact(&Dyadic::pow2(-12), fin).unwrap();
        let a = Matrix::new(1, 2, fin, vec![q, q]).unwrap();
        let b = Matrix::new(2, 1, fin, vec![q, q]).unwrap();
        let c = Matrix::new(1, 1, fout, vec![SoftFloat::exact(&Dyadic::one(), fout).unwrap()]).unwrap();
        let f = Fixture::from_matrices("o", &a, &b, &c);
        let d = run_values(&BackendDescriptor::oracle(FormatName::Fp32), &f).unwrap();
        assert_eq!(d[0].to_dyadic().unwrap(), Dyadic::one() + Dyadic::pow2(-23));
    }
}
