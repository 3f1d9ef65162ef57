//! Runs the blinding analyses on one input file and assembles the audit
//! report written by the `blindsight` binary.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use blindsight_core::indices::{apportion_unblinding, james_bi, Apportionment, BIEstimate};
use blindsight_core::marginal_homogeneity::{
    sequential_mcnemar, McNemarOutcome, MergeArmsPolicy, SequentialReport,
};
use blindsight_core::mean_score::{successive_time_wls, DesignMatrix, ScoreScheme, WLSFit};
use blindsight_core::polylogit::{
    deviance_compare, fit_common_slope, fit_separate_slopes, LogitData, LogitFit,
};
use blindsight_core::resample::{compare_bi_over_time, BIComparison, SimConfig};
use blindsight_core::stat_kernel::{dk_trend_test, TrendDirection, TrendResult};
use blindsight_core::tables::{
    check_subjects, ingest_count_json, ingest_subjects, Arm, Guess, GuessSequenceDataset, Schema,
    TestResult,
};
use blindsight_core::warning::{Warning, WarningCode};
use blindsight_core::{Error, Result};
use clap::ValueEnum;
use serde::Serialize;
use serde_json::Value;

pub const TOOL_NAME: &str = "blindsight";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    SubjectsCsv,
    CountsJson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    Bi,
    Trend,
    Mcnemar,
    Wls,
    Logit,
    Simulate,
    Apportion,
    All,
}

impl Analysis {
    pub const EACH: [Analysis; 7] = [
        Analysis::Bi,
        Analysis::Trend,
        Analysis::Mcnemar,
        Analysis::Wls,
        Analysis::Logit,
        Analysis::Simulate,
        Analysis::Apportion,
    ];

    fn min_timepoints(self) -> usize {
        match self {
            Analysis::Trend | Analysis::Mcnemar | Analysis::Wls | Analysis::Logit => 2,
            _ => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Analysis::Bi => "bi",
            Analysis::Trend => "trend",
            Analysis::Mcnemar => "mcnemar",
            Analysis::Wls => "wls",
            Analysis::Logit => "logit",
            Analysis::Simulate => "simulate",
            Analysis::Apportion => "apportion",
            Analysis::All => "all",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Emit {
    Json,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeArms {
    IfHomogeneous,
    Always,
    Never,
}

impl From<MergeArms> for MergeArmsPolicy {
    fn from(m: MergeArms) -> Self {
        match m {
            MergeArms::IfHomogeneous => MergeArmsPolicy::IfHomogeneous,
            MergeArms::Always => MergeArmsPolicy::Always,
            MergeArms::Never => MergeArmsPolicy::Never,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub input: PathBuf,
    pub format: InputFormat,
    pub analyses: Vec<Analysis>,
    pub alpha: f64,
    pub replicates: usize,
    pub seed: Option<u64>,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    pub emit: Emit,
    /// 1-based timepoint used as the apportionment baseline.
    pub baseline: usize,
    pub merge_arms: MergeArms,
    pub holm: bool,
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn new(input: impl Into<PathBuf>, format: InputFormat) -> Self {
        Self {
            input: input.into(),
            format,
            analyses: vec![Analysis::All],
            alpha: 0.05,
            replicates: blindsight_core::resample::DEFAULT_REPLICATES,
            seed: None,
            out: None,
            emit: Emit::Json,
            baseline: 1,
            merge_arms: MergeArms::IfHomogeneous,
            holm: false,
            threads: None,
        }
    }

    /// Requested analyses with `all` expanded, in canonical order.
    pub fn selected(&self) -> BTreeSet<Analysis> {
        if self.analyses.contains(&Analysis::All) {
            Analysis::EACH.into_iter().collect()
        } else {
            self.analyses.iter().copied().collect()
        }
    }

    fn explicit(&self) -> bool {
        !self.analyses.contains(&Analysis::All)
    }

    fn config_problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            problems.push(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.analyses.is_empty() {
            problems.push("no analyses selected".into());
        }
        if self.selected().contains(&Analysis::Simulate) {
            if self.seed.is_none() {
                problems.push("seed required".into());
            }
            if self.replicates < 2 {
                problems.push(format!(
                    "at least 2 replicates required, got {}",
                    self.replicates
                ));
            }
        }
        if self.baseline == 0 {
            problems.push("baseline timepoint is 1-based".into());
        }
        if self.threads == Some(0) {
            problems.push("thread count must be positive".into());
        }
        problems
    }

    fn data_problems(&self, dataset: &GuessSequenceDataset) -> Vec<String> {
        let t = dataset.timepoint_count();
        let mut problems = Vec::new();
        if self.explicit() {
            for a in self.selected() {
                if t < a.min_timepoints() {
                    problems.push(
                        Error::TooFewTimepoints {
                            analysis: a.name(),
                            needed: a.min_timepoints(),
                            found: t,
                        }
                        .to_string(),
                    );
                }
            }
        }
        if self.selected().contains(&Analysis::Apportion) && self.baseline > t {
            problems.push(
                Error::TimepointOutOfRange {
                    timepoint: self.baseline,
                    max: t,
                }
                .to_string(),
            );
        }
        problems
    }
}

/// Process exit code for a failed run.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_DATA
    }
}

pub fn load_dataset(path: &Path, format: InputFormat) -> Result<GuessSequenceDataset> {
    let reader = BufReader::new(File::open(path)?);
    match format {
        InputFormat::SubjectsCsv => ingest_subjects(reader, &Schema::default()),
        InputFormat::CountsJson => ingest_count_json(reader),
    }
}

/// Lists every configuration and data problem without running analyses.
pub fn validate(cfg: &RunConfig) -> Vec<String> {
    let mut problems = cfg.config_problems();
    let file = match File::open(&cfg.input) {
        Ok(f) => f,
        Err(e) => {
            problems.push(format!("cannot read {}: {e}", cfg.input.display()));
            return problems;
        }
    };
    match cfg.format {
        InputFormat::SubjectsCsv => {
            let found = check_subjects(BufReader::new(file), &Schema::default());
            if found.is_empty() {
                if let Ok(ds) = load_dataset(&cfg.input, cfg.format) {
                    problems.extend(cfg.data_problems(&ds));
                }
            }
            problems.extend(found.iter().map(Error::to_string));
        }
        InputFormat::CountsJson => match ingest_count_json(BufReader::new(file)) {
            Ok(ds) => problems.extend(cfg.data_problems(&ds)),
            Err(e) => problems.push(e.to_string()),
        },
    }
    problems
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolInfo {
    pub name: &'static str,
    pub version: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmSizes {
    #[serde(rename = "T")]
    pub test: usize,
    #[serde(rename = "P")]
    pub placebo: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetFingerprint {
    pub subjects: usize,
    pub timepoints: usize,
    pub arm_sizes: ArmSizes,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiTimepoint {
    pub timepoint: usize,
    #[serde(flatten)]
    pub estimate: BIEstimate,
    pub dk_share_test: f64,
    pub dk_share_placebo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogitArm {
    pub arm: Arm,
    pub common_slope: LogitFit,
    pub separate_slopes: LogitFit,
    /// Likelihood-ratio test of a shared slope.
    pub slope_comparison: TestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WlsStep {
    pub earlier: usize,
    pub later: usize,
    pub fit: WLSFit,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AnalysisBlocks {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bi: Option<Vec<BiTimepoint>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trend: Option<TrendResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mcnemar: Option<SequentialReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wls: Option<Vec<WlsStep>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logit: Option<Vec<LogitArm>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulate: Option<BIComparison>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub apportion: Option<Apportionment>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestVerdict {
    pub analysis: &'static str,
    pub label: String,
    pub p_value: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    /// Is there statistically significant progressive unblinding?
    pub progressive_unblinding: Vec<TestVerdict>,
    pub any_rejected: bool,
    /// Extent: index and DK share per timepoint.
    pub bi_trajectory: Vec<f64>,
    pub dk_trajectory: Vec<f64>,
    /// How much unblinding was present at baseline and how much came later.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub apportionment: Option<Apportionment>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub tool: ToolInfo,
    pub config: RunConfig,
    pub dataset: DatasetFingerprint,
    pub verdict: Verdict,
    pub analyses: AnalysisBlocks,
    pub warnings: Vec<Warning>,
}

impl AuditReport {
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("report serializes")
    }

    pub fn to_json(&self) -> String {
        render_json(&self.to_value())
    }

    pub fn to_text(&self) -> String {
        render_text(&self.to_value())
    }
}

pub fn render_json(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

/// Indented plain-text view of a JSON report. Numbers are printed exactly as
/// in the JSON.
pub fn render_text(value: &Value) -> String {
    let mut out = String::new();
    if let Value::Object(map) = value {
        for key in [
            "tool", "dataset", "verdict", "warnings", "config", "analyses",
        ] {
            if let Some(v) = map.get(key) {
                writeln!(out, "== {key} ==").unwrap();
                text_node(v, 0, &mut out);
                out.push('\n');
            }
        }
    } else {
        text_node(value, 0, &mut out);
    }
    out
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Null => Some("-".into()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        Value::Array(a) if a.is_empty() => Some("(none)".into()),
        Value::Array(a)
            if a.iter()
                .all(|x| matches!(x, Value::Number(_) | Value::Null)) =>
        {
            Some(format!(
                "[{}]",
                a.iter()
                    .map(|x| scalar(x).unwrap())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        }
        _ => None,
    }
}

fn text_node(v: &Value, depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth);
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                match scalar(x) {
                    Some(s) => writeln!(out, "{pad}{k}: {s}").unwrap(),
                    None => {
                        writeln!(out, "{pad}{k}:").unwrap();
                        text_node(x, depth + 1, out);
                    }
                }
            }
        }
        Value::Array(items) => {
            for (i, x) in items.iter().enumerate() {
                match scalar(x) {
                    Some(s) => writeln!(out, "{pad}- {s}").unwrap(),
                    None => {
                        writeln!(out, "{pad}- [{}]", i + 1).unwrap();
                        text_node(x, depth + 1, out);
                    }
                }
            }
        }
        other => writeln!(out, "{pad}{}", scalar(other).unwrap()).unwrap(),
    }
}

fn dk_share(dataset: &GuessSequenceDataset, t: usize, arm: Option<Arm>) -> Result<f64> {
    let table = dataset.marginal_table(t)?;
    let (dk, n) = match arm {
        Some(a) => (table.get(a, Guess::DontKnow), table.arm_total(a)),
        None => (table.guess_total(Guess::DontKnow), table.total()),
    };
    Ok(if n == 0 { 0.0 } else { dk as f64 / n as f64 })
}

fn run_bi(dataset: &GuessSequenceDataset) -> Result<Vec<BiTimepoint>> {
    (1..=dataset.timepoint_count())
        .map(|t| {
            Ok(BiTimepoint {
                timepoint: t,
                estimate: james_bi(&dataset.marginal_table(t)?)?,
                dk_share_test: dk_share(dataset, t, Some(Arm::Test))?,
                dk_share_placebo: dk_share(dataset, t, Some(Arm::Placebo))?,
            })
        })
        .collect()
}

fn run_logit(dataset: &GuessSequenceDataset, alpha: f64) -> Result<Vec<LogitArm>> {
    Arm::ALL
        .iter()
        .map(|&arm| {
            let data = LogitData::from_dataset(dataset, arm)?;
            let common_slope = fit_common_slope(&data)?;
            let separate_slopes = fit_separate_slopes(&data)?;
            let slope_comparison = deviance_compare(&common_slope, &separate_slopes, alpha)?;
            Ok(LogitArm {
                arm,
                common_slope,
                separate_slopes,
                slope_comparison,
            })
        })
        .collect()
}

/// Consecutive pairs, plus first against last when there are more than two
/// timepoints.
pub fn comparison_pairs(timepoints: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<_> = (1..timepoints).map(|t| (t, t + 1)).collect();
    if timepoints > 2 {
        pairs.push((1, timepoints));
    }
    pairs
}

fn test_warning(name: &str, test: &TestResult, warnings: &mut Vec<Warning>) {
    if test.has_small_expected() {
        warnings.push(Warning::new(
            WarningCode::SmallExpectedCount,
            format!("{name}: expected counts below 5"),
        ));
    }
}

fn build_verdict(
    blocks: &AnalysisBlocks,
    dataset: &GuessSequenceDataset,
    alpha: f64,
) -> Result<Verdict> {
    let mut tests = Vec::new();
    if let Some(trend) = &blocks.trend {
        tests.push(TestVerdict {
            analysis: "trend",
            label: "DK share decreasing".into(),
            p_value: trend.trend_p_one_sided,
            rejected: trend.trend_p_one_sided < alpha,
        });
    }
    if let Some(report) = &blocks.mcnemar {
        for step in &report.steps {
            for (i, r) in step.outcome.results().into_iter().enumerate() {
                let arm = match (&step.outcome, i) {
                    (McNemarOutcome::Merged { .. }, _) => "",
                    (_, 0) => " arm T",
                    _ => " arm P",
                };
                tests.push(TestVerdict {
                    analysis: "mcnemar",
                    label: format!("timepoint {} vs {}{arm}", step.earlier, step.later),
                    p_value: r.adjusted_p_value.unwrap_or(r.p_value),
                    rejected: r.rejected,
                });
            }
        }
    }
    if let Some(steps) = &blocks.wls {
        for step in steps {
            for p in step
                .fit
                .parameters
                .iter()
                .filter(|p| p.label.starts_with("time"))
            {
                tests.push(TestVerdict {
                    analysis: "wls",
                    label: format!(
                        "{} between timepoints {} and {}",
                        p.label, step.earlier, step.later
                    ),
                    p_value: p.p_value,
                    rejected: p.p_value < alpha,
                });
            }
        }
    }
    if let Some(arms) = &blocks.logit {
        for a in arms {
            if let Some(c) = a.common_slope.coefficient("time") {
                tests.push(TestVerdict {
                    analysis: "logit",
                    label: format!("time slope arm {}", a.arm),
                    p_value: c.p_value,
                    rejected: c.p_value < alpha,
                });
            }
        }
    }
    if let Some(sim) = &blocks.simulate {
        for d in &sim.differences {
            tests.push(TestVerdict {
                analysis: "simulate",
                label: format!("index at {} minus index at {}", d.later, d.earlier),
                p_value: d.empirical_p,
                rejected: d.significant,
            });
        }
    }
    let bi_trajectory = (1..=dataset.timepoint_count())
        .map(|t| Ok(james_bi(&dataset.marginal_table(t)?)?.bi))
        .collect::<Result<Vec<_>>>()?;
    let dk_trajectory = (1..=dataset.timepoint_count())
        .map(|t| dk_share(dataset, t, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(Verdict {
        any_rejected: tests.iter().any(|t| t.rejected),
        progressive_unblinding: tests,
        bi_trajectory,
        dk_trajectory,
        apportionment: blocks.apportion.clone(),
    })
}

/// Runs the selected analyses on an already loaded dataset.
pub fn run_on(dataset: &GuessSequenceDataset, cfg: &RunConfig) -> Result<AuditReport> {
    if let Some(p) = cfg.config_problems().into_iter().next() {
        return Err(Error::InvalidInput(p));
    }
    if let Some(p) = cfg.data_problems(dataset).into_iter().next() {
        return Err(Error::InvalidInput(p));
    }
    let t = dataset.timepoint_count();
    let mut warnings = dataset.warnings();
    let mut blocks = AnalysisBlocks::default();

    for analysis in cfg.selected() {
        if t < analysis.min_timepoints() {
            warnings.push(Warning::new(
                WarningCode::AnalysisSkipped,
                format!("{} skipped: needs at least 2 timepoints", analysis.name()),
            ));
            continue;
        }
        match analysis {
            Analysis::Bi => {
                let bi = run_bi(dataset)?;
                for b in bi.iter().filter(|b| b.estimate.degenerate) {
                    warnings.push(Warning::new(
                        WarningCode::DegenerateIndex,
                        format!("index at timepoint {} is degenerate", b.timepoint),
                    ));
                }
                blocks.bi = Some(bi);
            }
            Analysis::Trend => {
                let trend =
                    dk_trend_test(&dataset.dk_series(), TrendDirection::Decreasing, cfg.alpha)?;
                test_warning("DK trend homogeneity", &trend.homogeneity, &mut warnings);
                blocks.trend = Some(trend);
            }
            Analysis::Mcnemar => {
                let report =
                    sequential_mcnemar(dataset, cfg.merge_arms.into(), cfg.alpha, cfg.holm)?;
                warnings.extend(report.warnings.iter().cloned());
                blocks.mcnemar = Some(report);
            }
            Analysis::Wls => {
                let fits = successive_time_wls(
                    dataset,
                    &ScoreScheme::default(),
                    &DesignMatrix::two_timepoint_default(),
                    cfg.alpha,
                )?;
                let steps: Vec<WlsStep> = fits
                    .into_iter()
                    .enumerate()
                    .map(|(i, fit)| WlsStep {
                        earlier: i + 1,
                        later: i + 2,
                        fit,
                    })
                    .collect();
                for s in steps.iter().filter(|s| s.fit.pseudo_inverse) {
                    warnings.push(Warning::new(
                        WarningCode::SingularCovariance,
                        format!(
                            "mean-score covariance between timepoints {} and {} is singular",
                            s.earlier, s.later
                        ),
                    ));
                }
                blocks.wls = Some(steps);
            }
            Analysis::Logit => blocks.logit = Some(run_logit(dataset, cfg.alpha)?),
            Analysis::Simulate => {
                let sim_cfg = SimConfig {
                    replicates: cfg.replicates,
                    seed: cfg.seed.expect("checked above"),
                    alpha: cfg.alpha,
                    threads: cfg.threads,
                    ..SimConfig::new(0)
                };
                let cmp = compare_bi_over_time(dataset, &comparison_pairs(t), &sim_cfg)?;
                warnings.extend(cmp.warnings.iter().cloned());
                blocks.simulate = Some(cmp);
            }
            Analysis::Apportion => {
                let series = (1..=t)
                    .map(|i| dk_share(dataset, i, None))
                    .collect::<Result<Vec<_>>>()?;
                if cfg.baseline != 1 {
                    warnings.push(Warning::new(
                        WarningCode::BaselineNotFirst,
                        format!("apportionment baseline is timepoint {}", cfg.baseline),
                    ));
                }
                blocks.apportion = Some(apportion_unblinding(&series, cfg.baseline)?);
            }
            Analysis::All => unreachable!("expanded by selected()"),
        }
    }

    let verdict = build_verdict(&blocks, dataset, cfg.alpha)?;
    Ok(AuditReport {
        tool: ToolInfo {
            name: TOOL_NAME,
            version: TOOL_VERSION,
        },
        config: cfg.clone(),
        dataset: DatasetFingerprint {
            subjects: dataset.len(),
            timepoints: t,
            arm_sizes: ArmSizes {
                test: dataset.arm_size(Arm::Test),
                placebo: dataset.arm_size(Arm::Placebo),
            },
        },
        verdict,
        analyses: blocks,
        warnings,
    })
}

/// Loads the input and runs the selected analyses.
pub fn run(cfg: &RunConfig) -> Result<AuditReport> {
    if let Some(p) = cfg.config_problems().into_iter().next() {
        return Err(Error::InvalidInput(p));
    }
    run_on(&load_dataset(&cfg.input, cfg.format)?, cfg)
}

/// Report in the configured output format.
pub fn render(report: &AuditReport, emit: Emit) -> String {
    match emit {
        Emit::Json => report.to_json(),
        Emit::Text => report.to_text(),
    }
}
