//! Black-box feature detection.
//!
//! Every probe is a 1×k×1 matmul whose single output element is compared
//! with the outputs that competing feature hypotheses predict for the same
//! fixture. Predictions come from running the emulator under hypothesis
//! configs; the backend under test is only ever seen through [`Backend`].

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::backends::{run_values, Backend, BackendDescriptor, BackendError, Fixture};
use crate::emulator::{AcceleratorConfig, IntraBlockOrder, Matrix};
use crate::exactnum::Dyadic;
use crate::presets::Bound;
use crate::softfp::{round_dyadic, FormatName, FpFormat, RoundingMode, SoftFloat};

pub const SCHEMA_VERSION: u32 = 1;

/// Names of the tests in pipeline order.
pub const TEST_NAMES: [&str; 14] = [
    "t_si_no",
    "t_ni_so",
    "t_sa",
    "t_1_bit",
    "t_rnd_dir",
    "t_3_bits_fin_rnd",
    "t_tie_sticky",
    "t_pres_extra_acc",
    "t_blk_fma_width",
    "t_norm_once",
    "t_acc_order",
    "t_prod",
    "t_out_cvt",
    "demo",
];

#[derive(Debug, Error)]
pub enum DetectError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{backend} cannot run {input} inputs")]
    Unsupported { backend: String, input: FormatName },
    #[error("cannot build fixture: {0}")]
    Construction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Budget {
    /// Largest slot index the block-width scan will try.
    pub k_max: usize,
    /// Fixtures the extra-bit distinguishing search may run.
    pub three_bits_fixtures: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            k_max: 64,
            three_bits_fixtures: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    Decisive,
    Bounded,
    NotApplicable,
    Anomalous,
}

/// A report cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "value", rename_all = "snake_case")]
pub enum Finding<T> {
    Known(T),
    NotApplicable,
    Anomalous,
}

impl<T: Copy> Finding<T> {
    pub fn known(&self) -> Option<T> {
        match self {
            Finding::Known(v) => Some(*v),
            _ => None,
        }
    }
}

impl<T: fmt::Display> fmt::Display for Finding<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::Known(v) => v.fmt(f),
            Finding::NotApplicable => f.write_str("N.A."),
            Finding::Anomalous => f.write_str("anomalous"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    TiesToEven,
    TiesAway,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    OnceAtEnd,
    PerStep,
}

/// A value in both renderings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rendered {
    pub hex: String,
    pub decimal: String,
}

impl Rendered {
    pub fn of(x: &SoftFloat) -> Self {
        Rendered {
            hex: x.to_hex(),
            decimal: format!("{:?}", x.to_f64()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Expectation {
    pub hypothesis: String,
    pub value: Rendered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Evidence {
    pub fixture_id: String,
    pub observed: Rendered,
    pub expectations: Vec<Expectation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TestOutcome {
    pub test: String,
    pub verdict: String,
    pub confidence: Confidence,
    pub evidence: Vec<Evidence>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl TestOutcome {
    fn new(test: &str, verdict: impl Into<String>, confidence: Confidence, evidence: Vec<Evidence>) -> Self {
        TestOutcome {
            test: test.to_string(),
            verdict: verdict.into(),
            confidence,
            evidence,
            note: None,
        }
    }

    fn na(test: &str, why: &str) -> Self {
        TestOutcome {
            note: Some(why.to_string()),
            ..Self::new(test, "n.a.", Confidence::NotApplicable, Vec::new())
        }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    /// A decisive verdict needs at least one fixture whose predictions
    /// differ, and every observation must equal some prediction.
    pub fn audit(&self) -> bool {
        if self.confidence != Confidence::Decisive {
            return true;
        }
        let informative = self
            .evidence
            .iter()
            .any(|e| e.expectations.windows(2).any(|w| w[0].value.hex != w[1].value.hex));
        let explained = self
            .evidence
            .iter()
            .all(|e| e.expectations.iter().any(|x| x.value.hex == e.observed.hex));
        informative && explained
    }
}

/// One fixture together with what each hypothesis predicts for it.
#[derive(Debug, Clone)]
pub struct PlannedFixture {
    pub fixture: Fixture,
    pub expectations: Vec<(String, SoftFloat)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FeatureReport {
    pub schema_version: u32,
    pub backend: String,
    pub input_format: FormatName,
    pub budget: Budget,
    pub subnormal_inputs_ok: Finding<bool>,
    pub subnormal_outputs_ok: Finding<bool>,
    pub subnormal_accum_ok: Finding<bool>,
    pub extra_bits: Finding<Bound>,
    pub acc_rounding: Finding<RoundingMode>,
    pub ties: Finding<TieRule>,
    pub sticky: Finding<bool>,
    pub extra_bits_preserved: Finding<bool>,
    pub fma_width: Finding<Bound>,
    pub first_block_width: Finding<Bound>,
    pub normalize_once: Finding<Normalization>,
    pub order_controllable: Finding<bool>,
    pub product_rounding: Finding<RoundingMode>,
    pub output_conversion_rounding: Finding<RoundingMode>,
    pub fixtures_run: usize,
    pub anomalies: Vec<String>,
    pub outcomes: Vec<TestOutcome>,
}

impl FeatureReport {
    pub fn is_decisive(&self) -> bool {
        self.anomalies.is_empty()
    }

    pub fn outcome(&self, test: &str) -> Option<&TestOutcome> {
        self.outcomes.iter().find(|o| o.test == test)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Column header for [`FeatureReport::table_row`].
    pub fn table_header() -> String {
        format!(
            "{:<6} | {:<26} | {:<9} | {:<10} | {:<10} | {:<10} | {:<9} | {:<12} | {}",
            "Inputs",
            "Backend",
            "Sub. in",
            "Sub. out",
            "Extra bits",
            "Rounding",
            "FMA width",
            "Order ctrl.",
            "Out cvt / product"
        )
    }

    pub fn table_row(&self) -> String {
        let yn = |f: &Finding<bool>| match f {
            Finding::Known(true) => "yes".to_string(),
            Finding::Known(false) => "no".to_string(),
            other => other.to_string(),
        };
        let mode = |f: &Finding<RoundingMode>| match f {
            Finding::Known(m) => m.to_string(),
            Finding::NotApplicable => "N.A.".into(),
            Finding::Anomalous => "anomalous".into(),
        };
        let last = match self.input_format {
            FormatName::Fp32 | FormatName::Fp64 => mode(&self.product_rounding),
            _ => mode(&self.output_conversion_rounding),
        };
        let order = match &self.order_controllable {
            Finding::Known(true) => "yes".to_string(),
            Finding::Known(false) => "no".to_string(),
            other => other.to_string(),
        };
        format!(
            "{:<6} | {:<26} | {:<9} | {:<10} | {:<10} | {:<10} | {:<9} | {:<12} | {}",
            self.input_format.to_string(),
            self.backend,
            yn(&self.subnormal_inputs_ok),
            yn(&self.subnormal_outputs_ok),
            self.extra_bits.to_string(),
            mode(&self.acc_rounding),
            self.fma_width.to_string(),
            order,
            last
        )
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{}\n{}\n", Self::table_header(), self.table_row());
        for o in &self.outcomes {
            s.push_str(&format!(
                "  {:<18} {:<28} {:?}{}\n",
                o.test,
                o.verdict,
                o.confidence,
                o.note.as_ref().map(|n| format!("  ({n})")).unwrap_or_default()
            ));
        }
        for a in &self.anomalies {
            s.push_str(&format!("  anomaly: {a}\n"));
        }
        s
    }
}

/// Split an exact product into two normal factors representable in `input`.
pub fn split_product(p: &Dyadic, input: FpFormat) -> Option<(SoftFloat, SoftFloat)> {
    if p.is_zero() {
        let z = SoftFloat::zero(input, false);
        return Some((z, z));
    }
    let m_bits = p.mantissa().bits() as i64;
    if m_bits > input.precision() as i64 {
        return None;
    }
    let lead = p.lead_exponent()?;
    let m_lead = m_bits - 1;
    let (lo, hi) = (input.e_min as i64, input.e_max as i64);
    let half = lead.div_euclid(2);
    let mut candidates: Vec<i64> = (lo..=hi).collect();
    candidates.sort_by_key(|la| (la - half).abs());
    for la in candidates {
        let lb = lead - la;
        if lb < lo || lb > hi {
            continue;
        }
        let a = Dyadic::new(p.is_negative(), p.mantissa().clone(), la - m_lead);
        let b = Dyadic::pow2(lb);
        if let (Some(x), Some(y)) = (SoftFloat::exact(&a, input), SoftFloat::exact(&b, input)) {
            return Some((x, y));
        }
    }
    None
}

fn ulp_pow(fmt: FpFormat, k: i64) -> Dyadic {
    Dyadic::pow2(fmt.ulp_exponent() + k)
}

/// Fixture construction for one (input, output) pair.
#[derive(Debug, Clone, Copy)]
pub struct Builder {
    pub input: FormatName,
    pub output: FormatName,
}

impl Builder {
    pub fn pairs(&self, id: String, c: &Dyadic, pairs: &[(SoftFloat, SoftFloat)]) -> Result<Fixture, DetectError> {
        let fin = self.input.format();
        let fout = self.output.format();
        let cv = SoftFloat::exact(c, fout)
            .ok_or_else(|| DetectError::Construction(format!("{id}: c = {c} not exact in {fout}")))?;
        let k = pairs.len().max(1);
        let zero = SoftFloat::zero(fin, false);
        let mut a = vec![zero; k];
        let mut b = vec![zero; k];
        for (i, (x, y)) in pairs.iter().enumerate() {
            a[i] = *x;
            b[i] = *y;
        }
        let am = Matrix::new(1, k, fin, a).map_err(|e| DetectError::Construction(e.to_string()))?;
        let bm = Matrix::new(k, 1, fin, b).map_err(|e| DetectError::Construction(e.to_string()))?;
        let cm = Matrix::new(1, 1, fout, vec![cv]).map_err(|e| DetectError::Construction(e.to_string()))?;
        Ok(Fixture::from_matrices(id, &am, &bm, &cm))
    }

    /// Products given by value; each is factored into input-format operands.
    pub fn slots(&self, id: String, c: &Dyadic, products: &[Dyadic]) -> Result<Fixture, DetectError> {
        let fin = self.input.format();
        let pairs = products
            .iter()
            .map(|p| {
                split_product(p, fin)
                    .ok_or_else(|| DetectError::Construction(format!("{id}: product {p} not factorable in {fin}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.pairs(id, c, &pairs)
    }
}

/// Predict a fixture's output under a hypothesis config.
pub fn predict(cfg: &AcceleratorConfig, f: &Fixture) -> SoftFloat {
    let mut cfg = cfg.clone();
    cfg.output_format = f.output_format;
    let b = BackendDescriptor::emulator("hypothesis", cfg);
    run_values(&b, f).expect("hypothesis configs accept their own fixtures")[0]
}

fn mode_label(m: RoundingMode) -> String {
    m.label().to_string()
}

/// Current working hypothesis about the accumulator.
#[derive(Debug, Clone, Copy)]
struct Hypothesis {
    bits: u8,
    mode: RoundingMode,
    sticky: bool,
}

pub struct Detector<'a> {
    backend: &'a dyn Backend,
    input: FormatName,
    acc: FormatName,
    budget: Budget,
    seq: usize,
    fixtures_run: usize,
    outcomes: Vec<TestOutcome>,
    bits: Finding<Bound>,
    at_least_one: Option<bool>,
    mode: Finding<RoundingMode>,
    ties: Finding<TieRule>,
    sticky: Finding<bool>,
    preserved: Finding<bool>,
    first_width: Finding<Bound>,
    width: Finding<Bound>,
}

impl<'a> Detector<'a> {
    pub fn new(backend: &'a dyn Backend, input: FormatName, budget: Budget) -> Result<Self, DetectError> {
        let acc = input.default_accumulator();
        if !backend.supports(input, acc) {
            return Err(DetectError::Unsupported {
                backend: backend.identity(),
                input,
            });
        }
        Ok(Detector {
            backend,
            input,
            acc,
            budget,
            seq: 0,
            fixtures_run: 0,
            outcomes: Vec::new(),
            bits: Finding::NotApplicable,
            at_least_one: None,
            mode: Finding::NotApplicable,
            ties: Finding::NotApplicable,
            sticky: Finding::NotApplicable,
            preserved: Finding::NotApplicable,
            first_width: Finding::NotApplicable,
            width: Finding::NotApplicable,
        })
    }

    fn accf(&self) -> FpFormat {
        self.acc.format()
    }

    fn ulp(&self) -> Dyadic {
        self.accf().ulp()
    }

    fn half(&self) -> Dyadic {
        ulp_pow(self.accf(), -1)
    }

    fn builder(&self) -> Builder {
        Builder {
            input: self.input,
            output: self.acc,
        }
    }

    fn next_id(&mut self, test: &str) -> String {
        self.seq += 1;
        format!("{test}-{:03}", self.seq)
    }

    fn hyp(&self) -> Hypothesis {
        let bits = match self.bits {
            Finding::Known(Bound::Exactly(n)) => n as u8,
            Finding::Known(Bound::AtLeast(_)) => 3,
            _ => match self.at_least_one {
                Some(true) => 1,
                _ => 0,
            },
        };
        Hypothesis {
            bits,
            mode: self.mode.known().unwrap_or(RoundingMode::TowardZero),
            sticky: bits == 3 && self.sticky.known().unwrap_or(false),
        }
    }

    fn config(&self, h: Hypothesis, width: usize) -> AcceleratorConfig {
        AcceleratorConfig {
            extra_bits: h.bits,
            acc_rounding: h.mode,
            sticky_on_last: h.sticky,
            block_width: width.max(1),
            ..AcceleratorConfig::baseline(self.input)
        }
    }

    fn observe(&mut self, f: &Fixture) -> Result<SoftFloat, DetectError> {
        self.fixtures_run += 1;
        Ok(run_values(self.backend, f)?[0])
    }

    fn evidence(f: &Fixture, observed: &SoftFloat, expectations: &[(String, SoftFloat)]) -> Evidence {
        Evidence {
            fixture_id: f.id.clone(),
            observed: Rendered::of(observed),
            expectations: expectations
                .iter()
                .map(|(l, v)| Expectation {
                    hypothesis: l.clone(),
                    value: Rendered::of(v),
                })
                .collect(),
        }
    }

    /// Run one fixture against labelled predictions; returns the labels
    /// whose prediction matched.
    fn probe(
        &mut self,
        f: &Fixture,
        expectations: &[(String, SoftFloat)],
    ) -> Result<(Vec<String>, Evidence, SoftFloat), DetectError> {
        let observed = self.observe(f)?;
        let matched = expectations
            .iter()
            .filter(|(_, v)| *v == observed)
            .map(|(l, _)| l.clone())
            .collect();
        Ok((matched, Self::evidence(f, &observed, expectations), observed))
    }

    fn push(&mut self, o: TestOutcome) {
        self.outcomes.push(o);
    }

    /// Two-hypothesis pass/fail probe shared by the subnormal tests.
    fn pass_fail(
        &mut self,
        test: &str,
        f: Fixture,
        pass: &AcceleratorConfig,
        fail: &AcceleratorConfig,
    ) -> Result<Finding<bool>, DetectError> {
        let exp = vec![
            ("pass".to_string(), predict(pass, &f)),
            ("fail".to_string(), predict(fail, &f)),
        ];
        let (matched, ev, _) = self.probe(&f, &exp)?;
        let (finding, verdict, conf) = match matched.first().map(String::as_str) {
            Some("pass") => (Finding::Known(true), "pass", Confidence::Decisive),
            Some("fail") => (Finding::Known(false), "fail", Confidence::Decisive),
            _ => (Finding::Anomalous, "anomalous", Confidence::Anomalous),
        };
        self.push(TestOutcome::new(test, verdict, conf, vec![ev]));
        Ok(finding)
    }

    /// Subnormal input, normal product.
    pub fn t_si_no(&mut self) -> Result<Finding<bool>, DetectError> {
        let fin = self.input.format();
        let a = fin.largest_subnormal();
        let b = SoftFloat::exact(&Dyadic::from_int(4), fin).expect("4 exact");
        let id = self.next_id("t_si_no");
        let f = self.builder().pairs(id, &Dyadic::zero(), &[(a, b)])?;
        let pass = AcceleratorConfig::baseline(self.input);
        let fail = AcceleratorConfig {
            flush_subnormal_inputs: true,
            ..pass.clone()
        };
        self.pass_fail("t_si_no", f, &pass, &fail)
    }

    /// Normal inputs whose product is subnormal in the output.
    pub fn t_ni_so(&mut self) -> Result<Finding<bool>, DetectError> {
        let fin = self.input.format();
        let facc = self.accf();
        let output = if (fin.e_min as i64 - 2) < facc.e_min as i64 {
            self.acc
        } else if self.backend.supports(self.input, self.input) {
            self.input
        } else {
            self.push(TestOutcome::na(
                "t_ni_so",
                "products of normal inputs are normal in the accumulator and no narrow output is available",
            ));
            return Ok(Finding::NotApplicable);
        };
        let a = SoftFloat::exact(&Dyadic::pow2(fin.e_min as i64), fin).expect("min normal");
        let b = SoftFloat::exact(&Dyadic::pow2(-2), fin).expect("1/4");
        let id = self.next_id("t_ni_so");
        let f = Builder {
            input: self.input,
            output,
        }
        .pairs(id, &Dyadic::zero(), &[(a, b)])?;
        let pass = AcceleratorConfig::baseline(self.input);
        let fail = AcceleratorConfig {
            flush_subnormal_outputs: true,
            ..pass.clone()
        };
        self.pass_fail("t_ni_so", f, &pass, &fail)
    }

    /// A subnormal C passed through an otherwise empty accumulation.
    pub fn t_sa(&mut self) -> Result<Finding<bool>, DetectError> {
        let facc = self.accf();
        let c = Dyadic::from_parts(5, facc.e_min as i64 - facc.mant_bits as i64);
        let id = self.next_id("t_sa");
        let f = self.builder().slots(id, &c, &[Dyadic::zero()])?;
        let pass = AcceleratorConfig::baseline(self.input);
        let fail = AcceleratorConfig {
            flush_subnormal_inputs: true,
            flush_subnormal_outputs: true,
            ..pass.clone()
        };
        self.pass_fail("t_sa", f, &pass, &fail)
    }

    /// `1 - ulp/2`: does the accumulator keep any bit below its LSB?
    pub fn t_1_bit(&mut self) -> Result<Option<bool>, DetectError> {
        let id = self.next_id("t_1_bit");
        let f = self.builder().slots(id, &Dyadic::one(), &[-self.half()])?;
        let base = Hypothesis {
            bits: 0,
            mode: RoundingMode::TowardZero,
            sticky: false,
        };
        let exp = vec![
            ("zero_extra_bits".to_string(), predict(&self.config(base, 1), &f)),
            (
                "at_least_one".to_string(),
                predict(&self.config(Hypothesis { bits: 1, ..base }, 1), &f),
            ),
        ];
        let (matched, ev, _) = self.probe(&f, &exp)?;
        let r = match matched.first().map(String::as_str) {
            Some("zero_extra_bits") => Some(false),
            Some("at_least_one") => Some(true),
            _ => None,
        };
        let (verdict, conf) = match r {
            Some(false) => ("zero_extra_bits", Confidence::Decisive),
            Some(true) => ("at_least_one", Confidence::Decisive),
            None => ("anomalous", Confidence::Anomalous),
        };
        self.push(TestOutcome::new("t_1_bit", verdict, conf, vec![ev]));
        self.at_least_one = r;
        self.bits = match r {
            Some(false) => Finding::Known(Bound::Exactly(0)),
            Some(true) => Finding::Known(Bound::AtLeast(1)),
            None => Finding::Anomalous,
        };
        Ok(r)
    }

    /// Sign-paired fixtures with trailing "110" past the result LSB;
    /// classify against all four rounding modes.
    fn sign_paired(
        &mut self,
        test: &str,
        fixtures: [Fixture; 2],
        hyps: &[(RoundingMode, AcceleratorConfig)],
    ) -> Result<(Finding<RoundingMode>, TestOutcome), DetectError> {
        let mut survivors: Vec<RoundingMode> = hyps.iter().map(|(m, _)| *m).collect();
        let mut evidence = Vec::new();
        for f in &fixtures {
            let exp: Vec<(String, SoftFloat)> = hyps.iter().map(|(m, c)| (mode_label(*m), predict(c, f))).collect();
            let (matched, ev, _) = self.probe(f, &exp)?;
            survivors.retain(|m| matched.contains(&mode_label(*m)));
            evidence.push(ev);
        }
        Ok(match survivors.as_slice() {
            [m] => (
                Finding::Known(*m),
                TestOutcome::new(test, mode_label(*m), Confidence::Decisive, evidence),
            ),
            [] => (
                Finding::Anomalous,
                TestOutcome::new(test, "anomalous", Confidence::Anomalous, evidence)
                    .with_note("observed pair matches no rounding mode"),
            ),
            _ => (
                Finding::Anomalous,
                TestOutcome::new(test, "ambiguous", Confidence::Anomalous, evidence)
                    .with_note("fixtures do not separate the candidate modes"),
            ),
        })
    }

    /// Accumulator rounding direction.
    pub fn t_rnd_dir(&mut self) -> Result<Finding<RoundingMode>, DetectError> {
        let Some(one_bit) = self.at_least_one else {
            self.push(TestOutcome::na("t_rnd_dir", "extra-bit test was anomalous"));
            self.mode = Finding::NotApplicable;
            return Ok(Finding::NotApplicable);
        };
        let ulp = self.ulp();
        let two = Dyadic::from_int(2);
        // With an extra bit: odd LSB at exponent 1 plus 0.75 LSB. Without:
        // the carry out of 2 - ulp + 4 ulp supplies the guard bit.
        let (c, p, bits) = if one_bit {
            (
                &two + &(&Dyadic::from_int(2) * &ulp),
                &Dyadic::from_parts(3, -1) * &ulp,
                1,
            )
        } else {
            (&two - &ulp, &Dyadic::from_int(4) * &ulp, 0)
        };
        let b = self.builder();
        let id1 = self.next_id("t_rnd_dir");
        let id2 = self.next_id("t_rnd_dir");
        let fixtures = [
            b.slots(id1, &c, std::slice::from_ref(&p))?,
            b.slots(id2, &-c.clone(), &[-p])?,
        ];
        let hyps: Vec<(RoundingMode, AcceleratorConfig)> = RoundingMode::ALL
            .iter()
            .map(|&m| {
                (
                    m,
                    self.config(
                        Hypothesis {
                            bits,
                            mode: m,
                            sticky: false,
                        },
                        1,
                    ),
                )
            })
            .collect();
        let (finding, outcome) = self.sign_paired("t_rnd_dir", fixtures, &hyps)?;
        self.push(outcome);
        self.mode = finding;
        Ok(finding)
    }

    /// Distinguishing search over the number of retained bits (1, 2 or 3).
    pub fn t_3_bits_fin_rnd(&mut self) -> Result<Finding<Bound>, DetectError> {
        const TEST: &str = "t_3_bits_fin_rnd";
        if self.at_least_one != Some(true) {
            self.push(TestOutcome::na(TEST, "no extra bit present"));
            return Ok(self.bits);
        }
        let Some(mode) = self.mode.known() else {
            self.push(TestOutcome::na(TEST, "accumulator rounding mode unknown"));
            return Ok(self.bits);
        };
        let m = self.accf().mant_bits as i64;
        let hyps: Vec<(u8, AcceleratorConfig)> = [1u8, 2, 3]
            .iter()
            .map(|&n| {
                (
                    n,
                    self.config(
                        Hypothesis {
                            bits: n,
                            mode,
                            sticky: false,
                        },
                        1,
                    ),
                )
            })
            .collect();
        let label = |n: u8| format!("{n}_bit{}", if n == 1 { "" } else { "s" });
        let mut survivors: Vec<u8> = vec![1, 2, 3];
        let mut evidence = Vec::new();
        let mut run = 0;
        for delta in [3i64, 6, 5, 7, 1, 2, 4] {
            if survivors.len() <= 1 || run >= self.budget.three_bits_fixtures {
                break;
            }
            let id = format!("{TEST}-d{delta}");
            let f = self
                .builder()
                .slots(id, &Dyadic::one(), &[Dyadic::from_parts(-delta, -m - 3)])?;
            let exp: Vec<(String, SoftFloat)> = hyps.iter().map(|(n, c)| (label(*n), predict(c, &f))).collect();
            let live: Vec<&SoftFloat> = exp
                .iter()
                .zip(&hyps)
                .filter(|(_, (n, _))| survivors.contains(n))
                .map(|((_, v), _)| v)
                .collect();
            if live.windows(2).all(|w| w[0] == w[1]) {
                continue;
            }
            self.seq += 1;
            run += 1;
            let (matched, ev, _) = self.probe(&f, &exp)?;
            survivors.retain(|n| matched.contains(&label(*n)));
            evidence.push(ev);
        }
        let (finding, verdict, conf) = match survivors.as_slice() {
            [n] => (
                Finding::Known(Bound::Exactly(*n as u32)),
                label(*n),
                Confidence::Decisive,
            ),
            [] => (Finding::Anomalous, "anomalous".to_string(), Confidence::Anomalous),
            many => {
                let lo = *many.iter().min().unwrap() as u32;
                (
                    Finding::Known(Bound::AtLeast(lo)),
                    format!(">={lo}_bits"),
                    Confidence::Bounded,
                )
            }
        };
        let mut o = TestOutcome::new(TEST, format!("{verdict}/{}", mode.label()), conf, evidence);
        if conf == Confidence::Bounded {
            o = o.with_note(format!("fixture budget {} exhausted", self.budget.three_bits_fixtures));
        }
        self.push(o);
        self.bits = finding;
        Ok(finding)
    }

    /// Tie breaking and sticky-bit presence; needs three extra bits.
    pub fn t_tie_sticky(&mut self) -> Result<(Finding<TieRule>, Finding<bool>), DetectError> {
        const TEST: &str = "t_tie_sticky";
        let (Finding::Known(Bound::Exactly(3)), Some(mode)) = (self.bits, self.mode.known()) else {
            self.push(TestOutcome::na(TEST, "needs exactly three extra bits and a known mode"));
            return Ok((Finding::NotApplicable, Finding::NotApplicable));
        };
        let ulp = self.ulp();
        let h = self.half();
        let one = Dyadic::one();
        let mut evidence = Vec::new();
        let mut verdicts = Vec::new();
        let mut anomalous = false;

        let sticky_cfg = self.config(
            Hypothesis {
                bits: 3,
                mode,
                sticky: true,
            },
            1,
        );
        let plain_cfg = self.config(
            Hypothesis {
                bits: 3,
                mode,
                sticky: false,
            },
            1,
        );

        let ties = if mode == RoundingMode::NearestEven {
            let mut even = 0;
            let mut away = 0;
            for c in [one.clone(), &one + &ulp] {
                let id = self.next_id(TEST);
                let f = self.builder().slots(id, &c, std::slice::from_ref(&h))?;
                let exact = &c + &h;
                let exp = vec![
                    ("ties_to_even".to_string(), predict(&plain_cfg, &f)),
                    (
                        "ties_away".to_string(),
                        round_dyadic(&exact, self.accf(), RoundingMode::TowardPositive),
                    ),
                ];
                let (matched, ev, _) = self.probe(&f, &exp)?;
                evidence.push(ev);
                if matched.iter().any(|l| l == "ties_to_even") {
                    even += 1;
                }
                if matched.iter().any(|l| l == "ties_away") {
                    away += 1;
                }
            }
            match (even, away) {
                (2, a) if a < 2 => {
                    verdicts.push("ties_to_even");
                    Finding::Known(TieRule::TiesToEven)
                }
                (e, 2) if e < 2 => {
                    verdicts.push("ties_away");
                    Finding::Known(TieRule::TiesAway)
                }
                _ => {
                    anomalous = true;
                    Finding::Anomalous
                }
            }
        } else {
            Finding::NotApplicable
        };

        let tiny = Dyadic::pow2(-6);
        let candidates = [&h * &(&one + &tiny), -(&h * &tiny), &h * &tiny, -(&h * &(&one + &tiny))];
        let mut sticky = Finding::NotApplicable;
        // Scaled up so the small products stay within normal input range.
        let scale = Dyadic::pow2(8);
        for p in candidates {
            let probe_id = format!("{TEST}-sticky");
            let Ok(f) = self.builder().slots(probe_id, &scale, &[&p * &scale]) else {
                continue;
            };
            let exp = vec![
                ("sticky_present".to_string(), predict(&sticky_cfg, &f)),
                ("sticky_absent".to_string(), predict(&plain_cfg, &f)),
            ];
            if exp[0].1 == exp[1].1 {
                continue;
            }
            self.seq += 1;
            let (matched, ev, _) = self.probe(&f, &exp)?;
            evidence.push(ev);
            sticky = match matched.first().map(String::as_str) {
                Some("sticky_present") => {
                    verdicts.push("sticky_present");
                    Finding::Known(true)
                }
                Some("sticky_absent") => {
                    verdicts.push("sticky_absent");
                    Finding::Known(false)
                }
                _ => {
                    anomalous = true;
                    Finding::Anomalous
                }
            };
            break;
        }
        let conf = if anomalous {
            Confidence::Anomalous
        } else {
            Confidence::Decisive
        };
        let verdict = if anomalous {
            "anomalous".to_string()
        } else {
            verdicts.join("+")
        };
        self.push(TestOutcome::new(TEST, verdict, conf, evidence));
        self.ties = ties;
        self.sticky = sticky;
        Ok((ties, sticky))
    }

    /// Three half-ulps next to c = 1: kept within one block or lost step by step.
    pub fn t_pres_extra_acc(&mut self) -> Result<Finding<bool>, DetectError> {
        const TEST: &str = "t_pres_extra_acc";
        let h = self.hyp();
        let id = self.next_id(TEST);
        let half = self.half();
        let f = self
            .builder()
            .slots(id, &Dyadic::one(), &[half.clone(), half.clone(), half])?;
        let exp = vec![
            ("preserved".to_string(), predict(&self.config(h, 3), &f)),
            ("not_preserved".to_string(), predict(&self.config(h, 1), &f)),
        ];
        if exp[0].1 == exp[1].1 {
            self.push(TestOutcome::na(TEST, "no retained bits to preserve"));
            self.preserved = Finding::NotApplicable;
            return Ok(self.preserved);
        }
        let (matched, ev, _) = self.probe(&f, &exp)?;
        let (finding, verdict, conf) = match matched.first().map(String::as_str) {
            Some("preserved") => (Finding::Known(true), "preserved", Confidence::Decisive),
            Some("not_preserved") => (Finding::Known(false), "not_preserved", Confidence::Decisive),
            _ => (Finding::Anomalous, "anomalous", Confidence::Anomalous),
        };
        self.push(TestOutcome::new(TEST, verdict, conf, vec![ev]));
        self.preserved = finding;
        Ok(finding)
    }

    /// The (fixed, moving) slot values and carry for the width scan, chosen
    /// so that "same block" and "next block" predictions differ.
    fn width_method(&self, h: Hypothesis) -> Option<(Dyadic, Dyadic, Dyadic, &'static str)> {
        let half = self.half();
        let two = Dyadic::from_int(2);
        let small = ulp_pow(self.accf(), -4);
        let methods = [
            (Dyadic::one(), half.clone(), half, "half_ulp"),
            (two.clone(), -two, small, "cancellation"),
        ];
        let b = self.builder();
        methods.into_iter().find(|(c, fixed, moving, _)| {
            let f = b.slots("probe".into(), c, &[fixed.clone(), moving.clone()]);
            match f {
                Ok(f) => predict(&self.config(h, 2), &f) != predict(&self.config(h, 1), &f),
                Err(_) => false,
            }
        })
    }

    fn width_fixture(
        &mut self,
        c: &Dyadic,
        fixed: (usize, &Dyadic),
        moving: (usize, &Dyadic),
    ) -> Result<Fixture, DetectError> {
        let mut slots = vec![Dyadic::zero(); moving.0];
        slots[fixed.0 - 1] = fixed.1.clone();
        slots[moving.0 - 1] = moving.1.clone();
        let id = self.next_id("t_blk_fma_width");
        self.builder().slots(id, c, &slots)
    }

    /// Block width by moving a probe away from a fixed slot until the two
    /// stop sharing a rounding event; then again from the start of the
    /// second block to measure the steady-state width.
    pub fn t_blk_fma_width(&mut self) -> Result<Finding<Bound>, DetectError> {
        const TEST: &str = "t_blk_fma_width";
        let k_max = self.budget.k_max.max(2);
        let h = self.hyp();
        let Some((c, fixed, moving, method)) = self.width_method(h) else {
            self.push(TestOutcome::na(TEST, "no fixture separates shared and split blocks"));
            return Ok(Finding::NotApplicable);
        };
        let mut evidence = Vec::new();
        let wide = self.config(h, k_max);

        // Phase A: fixed probe in slot 1.
        let mut first = None;
        for i in 2..=k_max {
            let f = self.width_fixture(&c, (1, &fixed), (i, &moving))?;
            let exp = vec![
                ("same_block".to_string(), predict(&wide, &f)),
                ("next_block".to_string(), predict(&self.config(h, i - 1), &f)),
            ];
            let (matched, ev, _) = self.probe(&f, &exp)?;
            evidence.push(ev);
            if matched.iter().any(|l| l == "next_block") {
                first = Some(i - 1);
                break;
            }
            if !matched.iter().any(|l| l == "same_block") {
                let o = TestOutcome::new(TEST, "anomalous", Confidence::Anomalous, evidence)
                    .with_note(format!("slot {i}: output matches neither block hypothesis"));
                self.push(o);
                self.width = Finding::Anomalous;
                self.first_width = Finding::Anomalous;
                return Ok(Finding::Anomalous);
            }
        }
        let Some(w1) = first else {
            let b = Bound::AtLeast(k_max as u32);
            self.push(
                TestOutcome::new(TEST, format!(">={k_max}"), Confidence::Bounded, evidence)
                    .with_note(format!("{method} probe; no boundary up to slot {k_max}")),
            );
            self.first_width = Finding::Known(b);
            self.width = Finding::Known(b);
            return Ok(self.width);
        };
        self.first_width = Finding::Known(Bound::Exactly(w1 as u32));

        // Phase B: fixed probe at the first slot of the second block. Block 1
        // then holds only c, so predictions are those of a fresh chain.
        let j0 = w1 + 1;
        let mut steady = None;
        for i in (j0 + 1)..=k_max {
            let f = self.width_fixture(&c, (j0, &fixed), (i, &moving))?;
            let tail = self.builder().slots("tail".into(), &c, &{
                let mut s = vec![Dyadic::zero(); i - j0 + 1];
                s[0] = fixed.clone();
                s[i - j0] = moving.clone();
                s
            })?;
            let exp = vec![
                ("same_block".to_string(), predict(&wide, &f)),
                ("next_block".to_string(), predict(&self.config(h, i - j0), &tail)),
            ];
            let (matched, ev, _) = self.probe(&f, &exp)?;
            evidence.push(ev);
            if matched.iter().any(|l| l == "next_block") {
                steady = Some(i - j0);
                break;
            }
            if !matched.iter().any(|l| l == "same_block") {
                let o = TestOutcome::new(TEST, "anomalous", Confidence::Anomalous, evidence)
                    .with_note(format!("slot {i} (second block): output matches neither hypothesis"));
                self.push(o);
                self.width = Finding::Anomalous;
                return Ok(Finding::Anomalous);
            }
        }
        let (bound, conf) = match steady {
            Some(w) => (Bound::Exactly(w as u32), Confidence::Decisive),
            None => (Bound::AtLeast(w1.max(k_max + 1 - j0) as u32), Confidence::Bounded),
        };
        let mut note = format!("{method} probe; first block {w1}");
        if steady.is_some_and(|w| w != w1) {
            note.push_str(", carry occupies a first-block slot");
        }
        self.push(TestOutcome::new(TEST, bound.to_string(), conf, evidence).with_note(note));
        self.width = Finding::Known(bound);
        Ok(self.width)
    }

    fn first_width_slots(&self) -> Option<usize> {
        match self.first_width {
            Finding::Known(Bound::Exactly(n)) | Finding::Known(Bound::AtLeast(n)) => Some(n as usize),
            _ => None,
        }
    }

    /// Whether normalization happens once per block or after every addition.
    /// Each candidate pushes the partial sum past a binade so per-step
    /// alignment drops a low bit the once-per-block model keeps.
    pub fn t_norm_once(&mut self) -> Result<Finding<Normalization>, DetectError> {
        const TEST: &str = "t_norm_once";
        let Some(w1) = self.first_width_slots().filter(|&w| w >= 3) else {
            self.push(TestOutcome::na(TEST, "needs a first block of at least three products"));
            return Ok(Finding::NotApplicable);
        };
        let h = self.hyp();
        let ulp = self.ulp();
        let half = self.half();
        let g = ulp_pow(self.accf(), -(h.bits.max(1) as i64));
        let two = Dyadic::from_int(2);
        let candidates = [
            (
                &two - &ulp,
                vec![&(&Dyadic::from_int(3) * &ulp) - &(&two * &g), g.clone(), g.clone()],
            ),
            (&two - &ulp, vec![ulp.clone(), ulp.clone(), g.clone()]),
            (
                &Dyadic::one() - &half,
                vec![ulp.clone(), ulp_pow(self.accf(), -2), ulp_pow(self.accf(), -2)],
            ),
        ];
        let once = self.config(h, w1.min(self.budget.k_max));
        let per = AcceleratorConfig {
            normalize_once: false,
            ..once.clone()
        };
        for (c, slots) in candidates {
            let Ok(mut f) = self.builder().slots(format!("{TEST}-probe"), &c, &slots) else {
                continue;
            };
            let exp = vec![
                ("once_at_end".to_string(), predict(&once, &f)),
                ("per_step".to_string(), predict(&per, &f)),
            ];
            if exp[0].1 == exp[1].1 {
                continue;
            }
            f.id = self.next_id(TEST);
            let (matched, ev, _) = self.probe(&f, &exp)?;
            let (finding, verdict, conf) = match matched.first().map(String::as_str) {
                Some("once_at_end") => (
                    Finding::Known(Normalization::OnceAtEnd),
                    "once_at_end",
                    Confidence::Decisive,
                ),
                Some("per_step") => (Finding::Known(Normalization::PerStep), "per_step", Confidence::Decisive),
                _ => (Finding::Anomalous, "anomalous", Confidence::Anomalous),
            };
            self.push(TestOutcome::new(TEST, verdict, conf, vec![ev]));
            return Ok(finding);
        }
        self.push(TestOutcome::na(TEST, "no candidate separates the hypotheses"));
        Ok(Finding::NotApplicable)
    }

    /// A cancelling pair and a tiny term, permuted within the first block.
    /// Summing in slot order keeps the tiny term only when the pair cancels
    /// first; aligning everything to the block maximum always drops it.
    pub fn t_acc_order(&mut self) -> Result<Finding<bool>, DetectError> {
        const TEST: &str = "t_acc_order";
        if self.first_width_slots().filter(|&w| w >= 2).is_none() {
            self.push(TestOutcome::na(TEST, "block width 1: nothing to order"));
            return Ok(Finding::NotApplicable);
        }
        let h = self.hyp();
        // Scaled so the tiny product stays a product of normal inputs.
        let scale = Dyadic::pow2(8);
        let tiny = &ulp_pow(self.accf(), -(h.bits as i64 + 4)) * &scale;
        let big = -scale.clone();
        let fixed = self.config(h, 2);
        let given = AcceleratorConfig {
            intra_block_order: IntraBlockOrder::SlotOrder,
            ..fixed.clone()
        };
        let mut evidence = Vec::new();
        let mut outputs: Vec<SoftFloat> = Vec::new();
        let mut separable = false;
        for terms in [[big.clone(), tiny.clone()], [tiny.clone(), big.clone()]] {
            let id = self.next_id(TEST);
            let f = self.builder().slots(id, &scale, &terms)?;
            let exp = vec![
                ("fixed_order".to_string(), predict(&fixed, &f)),
                ("given_order".to_string(), predict(&given, &f)),
            ];
            separable |= exp[0].1 != exp[1].1;
            let (_, ev, obs) = self.probe(&f, &exp)?;
            outputs.push(obs);
            evidence.push(ev);
        }
        let varies = outputs[0] != outputs[1];
        let (finding, verdict, conf) = if varies {
            (Finding::Known(true), "controllable", Confidence::Decisive)
        } else if separable {
            (Finding::Known(false), "not_controllable", Confidence::Decisive)
        } else {
            (Finding::Known(false), "not_controllable", Confidence::Bounded)
        };
        self.push(TestOutcome::new(TEST, verdict, conf, evidence));
        Ok(finding)
    }

    /// Product rounding for FP32/FP64 inputs.
    pub fn t_prod(&mut self) -> Result<Finding<RoundingMode>, DetectError> {
        const TEST: &str = "t_prod";
        if !matches!(self.input, FormatName::Fp32 | FormatName::Fp64) {
            self.push(TestOutcome::na(TEST, "products of narrow inputs are exact"));
            return Ok(Finding::NotApplicable);
        }
        let fin = self.input.format();
        let a = &Dyadic::one() + &(&Dyadic::from_int(3) * &fin.ulp());
        let b = Dyadic::from_parts(5, -2);
        let pair = |neg: bool| {
            let av = if neg { -a.clone() } else { a.clone() };
            (SoftFloat::exact(&av, fin).unwrap(), SoftFloat::exact(&b, fin).unwrap())
        };
        let id1 = self.next_id(TEST);
        let id2 = self.next_id(TEST);
        let bld = self.builder();
        let fixtures = [
            bld.pairs(id1, &Dyadic::zero(), &[pair(false)])?,
            bld.pairs(id2, &Dyadic::zero(), &[pair(true)])?,
        ];
        let h = self.hyp();
        let hyps: Vec<(RoundingMode, AcceleratorConfig)> = RoundingMode::ALL
            .iter()
            .map(|&m| {
                (
                    m,
                    AcceleratorConfig {
                        product_rounding: m,
                        ..self.config(h, 1)
                    },
                )
            })
            .collect();
        let (finding, outcome) = self.sign_paired(TEST, fixtures, &hyps)?;
        self.push(outcome);
        Ok(finding)
    }

    /// Rounding used when converting the accumulator to a narrow output.
    pub fn t_out_cvt(&mut self) -> Result<Finding<RoundingMode>, DetectError> {
        const TEST: &str = "t_out_cvt";
        if !matches!(self.input, FormatName::Fp16 | FormatName::Bf16) {
            self.push(TestOutcome::na(TEST, "output equals the accumulate format"));
            return Ok(Finding::NotApplicable);
        }
        if !self.backend.supports(self.input, self.input) {
            self.push(TestOutcome::na(TEST, "backend has no narrow output for this input"));
            return Ok(Finding::NotApplicable);
        }
        let fout = self.input.format();
        let p = &Dyadic::from_parts(3, -2) * &fout.ulp();
        let bld = Builder {
            input: self.input,
            output: self.input,
        };
        let id1 = self.next_id(TEST);
        let id2 = self.next_id(TEST);
        let fixtures = [
            bld.slots(id1, &Dyadic::one(), std::slice::from_ref(&p))?,
            bld.slots(id2, &Dyadic::from_int(-1), &[-p])?,
        ];
        let h = self.hyp();
        let hyps: Vec<(RoundingMode, AcceleratorConfig)> = RoundingMode::ALL
            .iter()
            .map(|&m| {
                (
                    m,
                    AcceleratorConfig {
                        output_format: self.input,
                        output_conversion_rounding: m,
                        ..self.config(h, 1)
                    },
                )
            })
            .collect();
        let (finding, outcome) = self.sign_paired(TEST, fixtures, &hyps)?;
        self.push(outcome);
        Ok(finding)
    }

    /// Assemble the report from the tests run so far.
    fn report(
        self,
        sub: [Finding<bool>; 3],
        norm: Finding<Normalization>,
        order: Finding<bool>,
        prod: Finding<RoundingMode>,
        cvt: Finding<RoundingMode>,
    ) -> FeatureReport {
        let mut anomalies: Vec<String> = self
            .outcomes
            .iter()
            .filter(|o| o.confidence == Confidence::Anomalous)
            .map(|o| format!("{}: {}", o.test, o.note.clone().unwrap_or_else(|| o.verdict.clone())))
            .collect();
        for o in &self.outcomes {
            if !o.audit() {
                anomalies.push(format!("{}: decisive verdict without separating evidence", o.test));
            }
        }
        FeatureReport {
            schema_version: SCHEMA_VERSION,
            backend: self.backend.identity(),
            input_format: self.input,
            budget: self.budget,
            subnormal_inputs_ok: sub[0],
            subnormal_outputs_ok: sub[1],
            subnormal_accum_ok: sub[2],
            extra_bits: self.bits,
            acc_rounding: self.mode,
            ties: self.ties,
            sticky: self.sticky,
            extra_bits_preserved: self.preserved,
            fma_width: self.width,
            first_block_width: self.first_width,
            normalize_once: norm,
            order_controllable: order,
            product_rounding: prod,
            output_conversion_rounding: cvt,
            fixtures_run: self.fixtures_run,
            anomalies,
            outcomes: self.outcomes,
        }
    }
}

/// The whole flow: subnormals, then the accumulator's bits and rounding,
/// then block structure, then product and output conversion.
pub fn run_pipeline(backend: &dyn Backend, input: FormatName, budget: Budget) -> Result<FeatureReport, DetectError> {
    let mut d = Detector::new(backend, input, budget)?;
    let si = d.t_si_no()?;
    let so = d.t_ni_so()?;
    let sa = d.t_sa()?;
    d.t_1_bit()?;
    d.t_rnd_dir()?;
    d.t_3_bits_fin_rnd()?;
    d.t_tie_sticky()?;
    d.t_pres_extra_acc()?;
    d.t_blk_fma_width()?;
    let norm = d.t_norm_once()?;
    let order = d.t_acc_order()?;
    let prod = d.t_prod()?;
    let cvt = d.t_out_cvt()?;
    Ok(d.report([si, so, sa], norm, order, prod, cvt))
}

/// Fixtures for one test with default hypotheses, for offline scoring by an
/// external harness. Adaptive tests emit their full candidate pool.
pub fn plan_fixtures(test: &str, input: FormatName, k_max: usize) -> Result<Vec<PlannedFixture>, DetectError> {
    let acc = input.default_accumulator();
    let accf = acc.format();
    let b = Builder { input, output: acc };
    let ulp = accf.ulp();
    let half = ulp_pow(accf, -1);
    let base = |bits: u8, mode: RoundingMode, w: usize| AcceleratorConfig {
        extra_bits: bits,
        acc_rounding: mode,
        block_width: w.max(1),
        ..AcceleratorConfig::baseline(input)
    };
    let rtz = RoundingMode::TowardZero;
    let plan = |f: Fixture, hyps: Vec<(String, AcceleratorConfig)>| PlannedFixture {
        expectations: hyps.iter().map(|(l, c)| (l.clone(), predict(c, &f))).collect(),
        fixture: f,
    };
    let mut out = Vec::new();
    match test {
        "t_1_bit" => {
            let f = b.slots("t_1_bit-001".into(), &Dyadic::one(), &[-half])?;
            out.push(plan(
                f,
                vec![
                    ("zero_extra_bits".into(), base(0, rtz, 1)),
                    ("at_least_one".into(), base(1, rtz, 1)),
                ],
            ));
        }
        "t_rnd_dir" => {
            let c = &Dyadic::from_int(2) + &(&Dyadic::from_int(2) * &ulp);
            let p = &Dyadic::from_parts(3, -1) * &ulp;
            for (i, (cc, pp)) in [(c.clone(), p.clone()), (-c, -p)].into_iter().enumerate() {
                let f = b.slots(format!("t_rnd_dir-{:03}", i + 1), &cc, &[pp])?;
                let hyps = RoundingMode::ALL
                    .iter()
                    .map(|&m| (mode_label(m), base(1, m, 1)))
                    .collect();
                out.push(plan(f, hyps));
            }
        }
        "t_3_bits_fin_rnd" => {
            let m = accf.mant_bits as i64;
            for delta in [3i64, 6, 5, 7, 1, 2, 4] {
                let f = b.slots(
                    format!("t_3_bits_fin_rnd-d{delta}"),
                    &Dyadic::one(),
                    &[Dyadic::from_parts(-delta, -m - 3)],
                )?;
                let mut hyps = Vec::new();
                for mode in [RoundingMode::NearestEven, rtz] {
                    for n in 1..=3u8 {
                        hyps.push((format!("{n}_bits/{}", mode.label()), base(n, mode, 1)));
                    }
                }
                out.push(plan(f, hyps));
            }
        }
        "t_pres_extra_acc" => {
            let f = b.slots(
                "t_pres_extra_acc-001".into(),
                &Dyadic::one(),
                &[half.clone(), half.clone(), half],
            )?;
            out.push(plan(
                f,
                vec![
                    ("preserved".into(), base(1, rtz, 3)),
                    ("not_preserved".into(), base(1, rtz, 1)),
                ],
            ));
        }
        "t_blk_fma_width" => {
            for i in 2..=k_max.max(2) {
                let mut slots = vec![Dyadic::zero(); i];
                slots[0] = half.clone();
                slots[i - 1] = half.clone();
                let f = b.slots(format!("t_blk_fma_width-{i:03}"), &Dyadic::one(), &slots)?;
                out.push(plan(
                    f,
                    vec![
                        ("same_block".into(), base(1, rtz, k_max)),
                        (format!("width_{}", i - 1), base(1, rtz, i - 1)),
                    ],
                ));
            }
        }
        "t_norm_once" => {
            let g = ulp_pow(accf, -1);
            let two = Dyadic::from_int(2);
            let slots = [&(&Dyadic::from_int(3) * &ulp) - &(&two * &g), g.clone(), g];
            let f = b.slots("t_norm_once-001".into(), &(&two - &ulp), &slots)?;
            let once = base(1, rtz, 4);
            let per = AcceleratorConfig {
                normalize_once: false,
                ..once.clone()
            };
            out.push(plan(f, vec![("once_at_end".into(), once), ("per_step".into(), per)]));
        }
        "t_acc_order" => {
            let scale = Dyadic::pow2(8);
            let tiny = &ulp_pow(accf, -5) * &scale;
            for (i, terms) in [[-scale.clone(), tiny.clone()], [tiny.clone(), -scale.clone()]]
                .into_iter()
                .enumerate()
            {
                let f = b.slots(format!("t_acc_order-{:03}", i + 1), &scale, &terms)?;
                let fixed = base(1, rtz, 2);
                let given = AcceleratorConfig {
                    intra_block_order: IntraBlockOrder::SlotOrder,
                    ..fixed.clone()
                };
                out.push(plan(
                    f,
                    vec![("fixed_order".into(), fixed), ("given_order".into(), given)],
                ));
            }
        }
        "t_si_no" | "t_ni_so" | "t_sa" | "t_tie_sticky" | "t_prod" | "t_out_cvt" => {
            // These depend on backend capabilities or earlier verdicts; plan
            // them by running the detector against an ideal emulator and
            // recording its fixtures.
            return plan_by_recording(test, input);
        }
        "demo" => {
            let f = crate::demo::demo_build_fixture();
            let mut hyps = Vec::new();
            for row in crate::presets::all_presets().map_err(|e| DetectError::Construction(e.to_string()))? {
                if row.input_format == FormatName::Fp16 {
                    let mut cfg = row.config.clone();
                    cfg.output_format = FormatName::Fp32;
                    hyps.push((row.key(), cfg));
                }
            }
            out.push(plan(f, hyps));
        }
        other => return Err(DetectError::Construction(format!("unknown test `{other}`"))),
    }
    Ok(out)
}

/// Backend wrapper that records every fixture it sees.
struct Recorder<'a> {
    inner: &'a dyn Backend,
    seen: std::cell::RefCell<Vec<Fixture>>,
}

impl Backend for Recorder<'_> {
    fn identity(&self) -> String {
        self.inner.identity()
    }
    fn supports(&self, input: FormatName, output: FormatName) -> bool {
        self.inner.supports(input, output)
    }
    fn max_k(&self) -> usize {
        self.inner.max_k()
    }
    fn run(&self, f: &Fixture) -> Result<crate::backends::FixtureResult, BackendError> {
        self.seen.borrow_mut().push(f.clone());
        self.inner.run(f)
    }
}

fn plan_by_recording(test: &str, input: FormatName) -> Result<Vec<PlannedFixture>, DetectError> {
    let mut cfg = AcceleratorConfig::ideal(input, 64);
    if matches!(input, FormatName::Fp16 | FormatName::Bf16) {
        cfg.output_format = input;
    }
    let ideal = BackendDescriptor::emulator("ideal", cfg);
    let rec = Recorder {
        inner: &ideal,
        seen: Default::default(),
    };
    let report = run_pipeline(&rec, input, Budget::default())?;
    let seen = rec.seen.into_inner();
    let mut out = Vec::new();
    for o in report.outcomes.iter().filter(|o| o.test == test) {
        for ev in &o.evidence {
            if let Some(f) = seen.iter().find(|f| f.id == ev.fixture_id) {
                let fmt = f.output_format.format();
                let expectations = ev
                    .expectations
                    .iter()
                    .map(|x| {
                        (
                            x.hypothesis.clone(),
                            SoftFloat::from_hex(&x.value.hex, fmt).expect("own hex"),
                        )
                    })
                    .collect();
                out.push(PlannedFixture {
                    fixture: f.clone(),
                    expectations,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_examples() {
        let f = FpFormat::FP16;
        let (a, b) = split_product(&Dyadic::pow2(-24), f).unwrap();
        assert_eq!(&a.to_dyadic().unwrap() * &b.to_dyadic().unwrap(), Dyadic::pow2(-24));
        assert!(a.class == crate::softfp::FpClass::Normal && b.class == crate::softfp::FpClass::Normal);
        let p = Dyadic::from_parts(-65, -31);
        let (a, b) = split_product(&p, FpFormat::BF16).unwrap();
        assert_eq!(&a.to_dyadic().unwrap() * &b.to_dyadic().unwrap(), p);
        assert!(split_product(&Dyadic::from_parts(4097, 0), f).is_none());
        let (a, b) = split_product(&Dyadic::pow2(-53), FpFormat::FP64).unwrap();
        assert_eq!(&a.to_dyadic().unwrap() * &b.to_dyadic().unwrap(), Dyadic::pow2(-53));
    }

    fn emu(cfg: AcceleratorConfig) -> BackendDescriptor {
        BackendDescriptor::emulator("t", cfg)
    }

    #[test]
    fn one_bit_examples() {
        let mut cfg = AcceleratorConfig::baseline(FormatName::Fp16);
        cfg.block_width = 4;
        let b = emu(cfg.clone());
        let mut d = Detector::new(&b, FormatName::Fp16, Budget::default()).unwrap();
        assert_eq!(d.t_1_bit().unwrap(), Some(false));
        cfg.extra_bits = 1;
        let b = emu(cfg);
        let mut d = Detector::new(&b, FormatName::Fp16, Budget::default()).unwrap();
        assert_eq!(d.t_1_bit().unwrap(), Some(true));
        let o = BackendDescriptor::oracle(FormatName::Fp32);
        let mut d = Detector::new(&o, FormatName::Fp16, Budget::default()).unwrap();
        assert_eq!(d.t_1_bit().unwrap(), Some(true));
    }

    #[test]
    fn rounding_direction_examples() {
        for bits in [0u8, 1, 2] {
            for mode in RoundingMode::ALL {
                let cfg = AcceleratorConfig {
                    extra_bits: bits,
                    acc_rounding: mode,
                    block_width: 4,
                    ..AcceleratorConfig::baseline(FormatName::Fp16)
                };
                let b = emu(cfg);
                let mut d = Detector::new(&b, FormatName::Fp16, Budget::default()).unwrap();
                d.t_1_bit().unwrap();
                assert_eq!(d.t_rnd_dir().unwrap(), Finding::Known(mode), "bits={bits} {mode}");
                assert!(d.outcomes.iter().all(TestOutcome::audit));
            }
        }
    }

    #[test]
    fn bit_count_search() {
        for bits in 1..=3u8 {
            for mode in [RoundingMode::NearestEven, RoundingMode::TowardZero] {
                let cfg = AcceleratorConfig {
                    extra_bits: bits,
                    acc_rounding: mode,
                    block_width: 2,
                    ..AcceleratorConfig::baseline(FormatName::Fp16)
                };
                let b = emu(cfg);
                let mut d = Detector::new(&b, FormatName::Fp16, Budget::default()).unwrap();
                d.t_1_bit().unwrap();
                d.t_rnd_dir().unwrap();
                assert_eq!(
                    d.t_3_bits_fin_rnd().unwrap(),
                    Finding::Known(Bound::Exactly(bits as u32))
                );
            }
        }
    }

    #[test]
    fn bounded_when_budget_is_one() {
        let cfg = AcceleratorConfig {
            extra_bits: 3,
            block_width: 16,
            ..AcceleratorConfig::baseline(FormatName::Fp16)
        };
        let b = emu(cfg);
        let budget = Budget {
            three_bits_fixtures: 1,
            ..Budget::default()
        };
        let mut d = Detector::new(&b, FormatName::Fp16, budget).unwrap();
        d.t_1_bit().unwrap();
        d.t_rnd_dir().unwrap();
        assert_eq!(d.t_3_bits_fin_rnd().unwrap(), Finding::Known(Bound::AtLeast(2)));
    }

    #[test]
    fn outcome_audit() {
        let r = |h: &str| Rendered {
            hex: h.into(),
            decimal: String::new(),
        };
        let ev = Evidence {
            fixture_id: "x".into(),
            observed: r("1"),
            expectations: vec![
                Expectation {
                    hypothesis: "a".into(),
                    value: r("1"),
                },
                Expectation {
                    hypothesis: "b".into(),
                    value: r("1"),
                },
            ],
        };
        let o = TestOutcome::new("t", "a", Confidence::Decisive, vec![ev.clone()]);
        assert!(!o.audit());
        let mut ev2 = ev;
        ev2.expectations[1].value = r("2");
        assert!(TestOutcome::new("t", "a", Confidence::Decisive, vec![ev2]).audit());
    }

    #[test]
    fn width_plan_size() {
        assert_eq!(
            plan_fixtures("t_blk_fma_width", FormatName::Fp16, 16).unwrap().len(),
            15
        );
        assert_eq!(
            plan_fixtures("t_1_bit", FormatName::Fp16, 16).unwrap()[0]
                .expectations
                .len(),
            2
        );
        assert!(plan_fixtures("t_nope", FormatName::Fp16, 16).is_err());
    }
}
