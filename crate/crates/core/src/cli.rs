//! Command-line front end.
//!
//! Exit codes: 0 decisive, 1 anomalous (or a failed self-test), 2 for
//! operational failures such as bad arguments or a backend error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::backends::{write_atomic, write_json_atomic, Backend, BackendDescriptor, Fixture};
use crate::demo::{self, DemoOutcome};
use crate::detector::{plan_fixtures, run_pipeline, Budget, FeatureReport, Rendered, TEST_NAMES};
use crate::emulator::AcceleratorConfig;
use crate::presets::{all_presets, distinguishability_matrix, parse_preset_name, preset};
use crate::selftest::run_selftest;
use crate::softfp::FormatName;

pub const EXIT_OK: u8 = 0;
pub const EXIT_ANOMALOUS: u8 = 1;
pub const EXIT_FAILURE: u8 = 2;

/// Environment variable naming the default fixture directory.
pub const FIXTURE_DIR_ENV: &str = "MATPROBE_FIXTURE_DIR";

#[derive(Debug, Parser)]
#[command(name = "matprobe", version, about = "Probe the arithmetic of matrix accelerators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Style {
    Json,
    Table,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the detection pipeline against a backend.
    Detect {
        /// emulator:<preset>, emulator:@<config.json>, oracle, or exec:<command>
        #[arg(long)]
        backend: String,
        /// Input format(s), comma separated.
        #[arg(long, value_delimiter = ',', default_value = "fp16")]
        format: Vec<FormatName>,
        /// Largest slot index for the block-width scan.
        #[arg(long, default_value_t = Budget::default().k_max)]
        kmax: usize,
        /// Fixture budget for the extra-bit search.
        #[arg(long, default_value_t = Budget::default().three_bits_fixtures)]
        bits_budget: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Style::Table)]
        style: Style,
    },
    /// Run the 8192-term porting example and compare with the exact value.
    Demo {
        #[arg(long)]
        backend: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Style::Table)]
        style: Style,
    },
    /// List the accelerator presets.
    Presets {
        /// Restrict to one input format.
        #[arg(long)]
        format: Option<FormatName>,
        /// Also print the per-format distinguishability matrix.
        #[arg(long)]
        distinguish: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Style::Table)]
        style: Style,
    },
    /// Write the fixtures of one test plus a manifest of expected outputs.
    Fixtures {
        test: String,
        #[arg(default_value = "fp16")]
        format: FormatName,
        #[arg(long, default_value_t = Budget::default().k_max)]
        kmax: usize,
        /// Output directory; defaults to $MATPROBE_FIXTURE_DIR or ./fixtures.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Evaluate one fixture file with an in-process backend (the exec protocol).
    Run {
        #[arg(long)]
        backend: String,
        fixture: PathBuf,
        result: PathBuf,
    },
    /// Config recovery, preset soundness and rounding-oracle checks.
    Selftest {
        /// Random values per format and mode for the rounding oracle.
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
        /// Random dot products for the ideal-FMA check.
        #[arg(long, default_value_t = 10_000)]
        dots: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A parsed `--backend` string.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendSpec {
    /// `emulator:<gpu>` or `emulator:<gpu>/<format>`.
    Preset(String),
    ConfigFile(PathBuf),
    Oracle,
    Exec(String),
}

impl BackendSpec {
    pub fn parse(s: &str) -> Result<Self, String> {
        if s == "oracle" {
            return Ok(BackendSpec::Oracle);
        }
        if let Some(rest) = s.strip_prefix("emulator:") {
            if let Some(path) = rest.strip_prefix('@') {
                return Ok(BackendSpec::ConfigFile(PathBuf::from(path)));
            }
            parse_preset_name(rest, FormatName::Fp16)?;
            return Ok(BackendSpec::Preset(rest.to_string()));
        }
        if let Some(cmd) = s.strip_prefix("exec:") {
            if cmd.trim().is_empty() {
                return Err("exec: needs a command".into());
            }
            return Ok(BackendSpec::Exec(cmd.to_string()));
        }
        Err(format!(
            "unknown backend `{s}` (expected emulator:<preset>, emulator:@<file>, oracle or exec:<command>)"
        ))
    }

    /// The backend to use for `format` inputs.
    pub fn resolve(&self, format: FormatName) -> Result<BackendDescriptor, String> {
        match self {
            BackendSpec::Oracle => Ok(BackendDescriptor::oracle(format.default_accumulator())),
            BackendSpec::Exec(cmd) => Ok(BackendDescriptor::external(cmd.clone())),
            BackendSpec::Preset(name) => {
                let fmt_given = name.contains(['/', ':', '-']);
                let (gpu, fmt) = parse_preset_name(name, format)?;
                if fmt_given && fmt != format {
                    return Err(format!("preset {name} takes {fmt} inputs, not {format}"));
                }
                let row = preset(gpu, fmt).map_err(|e| e.to_string())?;
                Ok(BackendDescriptor::emulator(row.key(), row.config))
            }
            BackendSpec::ConfigFile(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                let cfg: AcceleratorConfig =
                    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
                cfg.validate().map_err(|e| e.to_string())?;
                if cfg.input_format != format {
                    return Err(format!(
                        "{} has {} inputs, not {format}",
                        path.display(),
                        cfg.input_format
                    ));
                }
                let label = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                Ok(BackendDescriptor::emulator(label, cfg))
            }
        }
    }
}

struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()).map_err(Failure::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn detect(
    spec: &BackendSpec,
    formats: &[FormatName],
    budget: Budget,
    out: Option<&Path>,
    style: Style,
) -> Result<u8, Failure> {
    let backends = formats
        .iter()
        .map(|&f| spec.resolve(f).map(|b| (f, b)))
        .collect::<Result<Vec<_>, _>>()?;
    // Independent formats run in parallel; each pipeline is sequential.
    let results: Vec<Result<FeatureReport, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = backends
            .iter()
            .map(|(f, b)| s.spawn(move || run_pipeline(b, *f, budget).map_err(|e| e.to_string())))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("pipeline thread"))
            .collect()
    });
    let reports = results.into_iter().collect::<Result<Vec<_>, _>>().map_err(Failure)?;
    let text = match style {
        Style::Json if reports.len() == 1 => to_json(&reports[0]),
        Style::Json => to_json(&reports),
        Style::Table => reports
            .iter()
            .map(FeatureReport::to_table)
            .collect::<Vec<_>>()
            .join("\n"),
    };
    emit(out, &text)?;
    Ok(if reports.iter().all(FeatureReport::is_decisive) {
        EXIT_OK
    } else {
        EXIT_ANOMALOUS
    })
}

fn demo_cmd(spec: &BackendSpec, out: Option<&Path>, style: Style) -> Result<u8, Failure> {
    let backend = spec.resolve(FormatName::Fp16)?;
    let outcome: DemoOutcome = demo::run_demo(&backend)?;
    let text = match style {
        Style::Json => to_json(&outcome),
        Style::Table => format!(
            "backend    {}\nD11        {} (0x{})\n|D11|      {}\nexact      {} (|exact| = 2^7 + 2^6 - 2^-6 = {})\ndeviation  {}\n",
            outcome.backend,
            outcome.d11,
            outcome.d11_hex,
            outcome.magnitude,
            outcome.exact,
            outcome.exact_magnitude,
            outcome.deviation
        ),
    };
    emit(out, &text)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct PresetEntry {
    preset: String,
    gpu: String,
    input_format: FormatName,
    #[serde(rename = "Sub. in")]
    sub_in: bool,
    #[serde(rename = "Sub. out")]
    sub_out: bool,
    #[serde(rename = "Extra bits")]
    extra_bits: String,
    #[serde(rename = "Rounding")]
    rounding: String,
    #[serde(rename = "FMA width")]
    fma_width: String,
    #[serde(rename = "Order ctrl.")]
    order: String,
    #[serde(rename = "Last column")]
    last: String,
    config: AcceleratorConfig,
    metadata: serde_json::Map<String, serde_json::Value>,
}

fn presets_cmd(format: Option<FormatName>, distinguish: bool, out: Option<&Path>, style: Style) -> Result<u8, Failure> {
    let rows: Vec<_> = all_presets()?
        .into_iter()
        .filter(|r| format.is_none_or(|f| r.input_format == f))
        .collect();
    let entries: Vec<PresetEntry> = rows
        .iter()
        .map(|r| {
            let p = &r.expected_features;
            PresetEntry {
                preset: r.key(),
                gpu: r.gpu.label().to_string(),
                input_format: r.input_format,
                sub_in: p.subnormal_inputs,
                sub_out: p.subnormal_outputs,
                extra_bits: p.extra_bits.to_string(),
                rounding: p.rounding_cell.clone(),
                fma_width: p.fma_width.to_string(),
                order: p.order_controllable.to_string(),
                last: p.last_column_cell.clone(),
                config: r.config.clone(),
                metadata: r.metadata.clone(),
            }
        })
        .collect();
    let mut matrices = Vec::new();
    if distinguish {
        let formats: Vec<FormatName> = match format {
            Some(f) => vec![f],
            None => FormatName::ALL.to_vec(),
        };
        for f in formats {
            let m = distinguishability_matrix(f, Budget::default())?;
            if m.presets.len() >= 2 {
                matrices.push(m);
            }
        }
    }
    let text = match style {
        Style::Json => to_json(&json!({ "presets": entries, "distinguishability": matrices })),
        Style::Table => {
            let yn = |b: bool| if b { "yes" } else { "no" };
            let mut s = format!(
                "{:<12} | {:<8} | {:<8} | {:<10} | {:<9} | {:<9} | {:<11} | {}\n",
                "Preset", "Sub. in", "Sub. out", "Extra bits", "Rounding", "FMA width", "Order ctrl.", "Last column"
            );
            for e in &entries {
                s.push_str(&format!(
                    "{:<12} | {:<8} | {:<8} | {:<10} | {:<9} | {:<9} | {:<11} | {}\n",
                    e.preset,
                    yn(e.sub_in),
                    yn(e.sub_out),
                    e.extra_bits,
                    e.rounding,
                    e.fma_width,
                    e.order,
                    e.last
                ));
            }
            for m in &matrices {
                s.push_str(&format!("\n{} distinguishability\n", m.format));
                for (i, a) in m.presets.iter().enumerate() {
                    for (j, b) in m.presets.iter().enumerate().skip(i + 1) {
                        let tests = &m.separators[i][j];
                        let cell = if tests.is_empty() {
                            "(none)".to_string()
                        } else {
                            tests.join(", ")
                        };
                        s.push_str(&format!("  {a} vs {b}: {cell}\n"));
                    }
                }
            }
            s
        }
    };
    emit(out, &text)?;
    Ok(EXIT_OK)
}

fn fixtures_cmd(test: &str, format: FormatName, kmax: usize, out_dir: Option<PathBuf>) -> Result<u8, Failure> {
    if !TEST_NAMES.contains(&test) {
        return Err(Failure(format!(
            "unknown test `{test}`; known: {}",
            TEST_NAMES.join(", ")
        )));
    }
    let dir = out_dir
        .or_else(|| std::env::var_os(FIXTURE_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("fixtures"));
    std::fs::create_dir_all(&dir).map_err(|e| Failure(format!("{}: {e}", dir.display())))?;
    let planned = plan_fixtures(test, format, kmax)?;
    let mut manifest = Vec::new();
    for p in &planned {
        let file = format!("{}.json", p.fixture.id);
        p.fixture.save(&dir.join(&file))?;
        let expectations: Vec<_> = p
            .expectations
            .iter()
            .map(|(h, v)| json!({ "hypothesis": h, "expected": Rendered::of(v) }))
            .collect();
        manifest.push(json!({ "id": p.fixture.id, "file": file, "expectations": expectations }));
    }
    let doc = json!({
        "schema_version": crate::detector::SCHEMA_VERSION,
        "test": test,
        "input_format": format,
        "fixtures": manifest,
    });
    write_json_atomic(&dir.join("manifest.json"), &doc)?;
    println!(
        "wrote {} fixture(s) and manifest.json to {}",
        planned.len(),
        dir.display()
    );
    Ok(EXIT_OK)
}

fn run_cmd(spec: &BackendSpec, fixture: &Path, result: &Path) -> Result<u8, Failure> {
    let f = Fixture::load(fixture)?;
    let backend = spec.resolve(f.input_format)?;
    backend.run(&f)?.save(result)?;
    Ok(EXIT_OK)
}

fn selftest_cmd(samples: usize, dots: usize, seed: u64, out: Option<&Path>) -> Result<u8, Failure> {
    let s = run_selftest(samples, dots, seed);
    let mut text = format!(
        "config recovery: {} configs, {} mismatch(es)\npreset soundness: {} mismatch(es)\nrounding oracle: {} comparisons, {} mismatch(es)\nideal FMA: {} dot products, {} mismatch(es)\n",
        s.grid_size,
        s.recovery_failures.len(),
        s.preset_failures.len(),
        s.rounding_checks,
        s.rounding_failures.len(),
        s.ideal_checks,
        s.ideal_failures.len()
    );
    for m in s.recovery_failures.iter().chain(&s.preset_failures) {
        text.push_str(&format!(
            "  {} {}: expected {} observed {} [{}]\n",
            m.subject,
            m.field,
            m.expected,
            m.observed,
            m.fixtures.join(", ")
        ));
    }
    for m in s.rounding_failures.iter().chain(&s.ideal_failures) {
        text.push_str(&format!("  {m}\n"));
    }
    text.push_str(if s.passed() { "PASS\n" } else { "FAIL\n" });
    print!("{text}");
    if let Some(p) = out {
        write_json_atomic(p, &s)?;
    }
    Ok(if s.passed() { EXIT_OK } else { EXIT_ANOMALOUS })
}

/// Run a parsed command; returns the exit code.
pub fn execute(cli: Cli) -> u8 {
    let result = match cli.command {
        Command::Detect {
            backend,
            format,
            kmax,
            bits_budget,
            out,
            style,
        } => BackendSpec::parse(&backend).map_err(Failure).and_then(|spec| {
            let budget = Budget {
                k_max: kmax,
                three_bits_fixtures: bits_budget,
            };
            detect(&spec, &format, budget, out.as_deref(), style)
        }),
        Command::Demo { backend, out, style } => BackendSpec::parse(&backend)
            .map_err(Failure)
            .and_then(|spec| demo_cmd(&spec, out.as_deref(), style)),
        Command::Presets {
            format,
            distinguish,
            out,
            style,
        } => presets_cmd(format, distinguish, out.as_deref(), style),
        Command::Fixtures {
            test,
            format,
            kmax,
            out_dir,
        } => fixtures_cmd(&test, format, kmax, out_dir),
        Command::Run {
            backend,
            fixture,
            result,
        } => BackendSpec::parse(&backend)
            .map_err(Failure)
            .and_then(|spec| run_cmd(&spec, &fixture, &result)),
        Command::Selftest {
            samples,
            dots,
            seed,
            out,
        } => selftest_cmd(samples, dots, seed, out.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(Failure(msg)) => {
            eprintln!("matprobe: {msg}");
            EXIT_FAILURE
        }
    }
}

/// Parse `args` (program name first) and run. Argument errors exit 2.
pub fn run_from<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) => {
            let code = if e.use_stderr() { EXIT_FAILURE } else { EXIT_OK };
            let _ = e.print();
            code
        }
    }
}

pub fn main() -> ExitCode {
    ExitCode::from(run_from(std::env::args_os()))
}
