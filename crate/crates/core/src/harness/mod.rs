//! Batch reproduction of the wall-detailing experiment: prompt codes, repeated sessions,
//! independent scoring and accuracy tables.

mod exec;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::compliance::{run_checks, RequirementContext, RuleRegistry, MIN_STRUCTURAL_THICKNESS, STRUCTURAL_MATERIAL};
use crate::gateway::{Gateway, GatewayError, MockScript, RetryPolicy};
use crate::kernel::{seeded_project, WallDetailSpec};
use crate::orchestrator::{Engine, PipelineSettings, PipelineTrace, Session, TurnOutcome};

pub use exec::Executor;

/// Mock script for the experiment: compliant assemblies for all eight codes, with rule
/// violations injected into 30% of structuring replies.
pub const EXPERIMENT_SCRIPT: &str = include_str!("../../data/mock/experiment.json");

pub const RECORDS_FILE: &str = "records.csv";
pub const SUMMARY_FILE: &str = "summary.md";
pub const SPEC_DIR: &str = "specs";
pub const TRACE_DIR: &str = "traces";

const CSV_HEADER: &str = "code,run,material_pass,thickness_pass,attempts,duration_ms,spec_file";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid prompt code '{0}': expected [CT][EI][12], e.g. CE1")]
    InvalidCode(String),
    #[error("no records to score")]
    EmptyInput,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Records { path: PathBuf, message: String },
    #[error("cannot resume: {0}")]
    Resume(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StructureCode {
    /// `C`: reinforced concrete.
    Concrete,
    /// `T`: timber.
    Timber,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InsulationCode {
    Exterior,
    Interior,
}

/// A task prompt code such as `CE1`: structure, insulation side and thickness option.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PromptCode {
    pub material: StructureCode,
    pub insulation: InsulationCode,
    /// Thickness option, 1 or 2.
    pub size: u8,
}

impl PromptCode {
    /// The eight codes of the experiment, in table order.
    pub fn all() -> Vec<PromptCode> {
        ["CE1", "CE2", "CI1", "CI2", "TE1", "TE2", "TI1", "TI2"]
            .iter()
            .map(|c| c.parse().expect("static code"))
            .collect()
    }

    pub fn material_term(self) -> &'static str {
        match self.material {
            StructureCode::Concrete => "reinforced concrete",
            StructureCode::Timber => "timber",
        }
    }

    pub fn insulation_term(self) -> &'static str {
        match self.insulation {
            InsulationCode::Exterior => "exterior",
            InsulationCode::Interior => "interior",
        }
    }

    pub fn thickness_mm(self) -> u32 {
        match (self.material, self.size) {
            (_, 1) => 140,
            (StructureCode::Concrete, _) => 190,
            (StructureCode::Timber, _) => 184,
        }
    }

    pub fn requirement(self) -> RequirementContext {
        RequirementContext::new(self.material_term(), Some(self.thickness_mm() as f64))
    }
}

impl FromStr for PromptCode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || HarnessError::InvalidCode(s.to_string());
        let b = s.trim().as_bytes();
        if b.len() != 3 {
            return Err(bad());
        }
        let material = match b[0].to_ascii_uppercase() {
            b'C' => StructureCode::Concrete,
            b'T' => StructureCode::Timber,
            _ => return Err(bad()),
        };
        let insulation = match b[1].to_ascii_uppercase() {
            b'E' => InsulationCode::Exterior,
            b'I' => InsulationCode::Interior,
            _ => return Err(bad()),
        };
        let size = match b[2] {
            b'1' => 1,
            b'2' => 2,
            _ => return Err(bad()),
        };
        Ok(Self {
            material,
            insulation,
            size,
        })
    }
}

impl fmt::Display for PromptCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = match self.material {
            StructureCode::Concrete => 'C',
            StructureCode::Timber => 'T',
        };
        let i = match self.insulation {
            InsulationCode::Exterior => 'E',
            InsulationCode::Interior => 'I',
        };
        write!(f, "{m}{i}{}", self.size)
    }
}

impl Serialize for PromptCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PromptCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses a comma-separated code list such as `CE1,CE2,TI2`.
pub fn parse_codes(list: &str) -> Result<Vec<PromptCode>, HarnessError> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

pub fn expand_prompt_code(code: PromptCode) -> String {
    format!(
        "Propose a wall detail using a {} structure and {} insulation method, ensuring a minimum thickness of {} mm.",
        code.material_term(),
        code.insulation_term(),
        code.thickness_mm()
    )
}

/// Session seed of one run, stable across job counts and resumes.
pub fn run_seed(base_seed: u64, code: PromptCode, run: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(base_seed.to_le_bytes());
    h.update(code.to_string().as_bytes());
    h.update(run.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// One row of `records.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub code: PromptCode,
    /// 1-based run index within the code.
    pub run: u32,
    pub material_pass: bool,
    pub thickness_pass: bool,
    pub attempts: u32,
    pub duration_ms: u64,
    /// Spec path relative to the output directory; empty when the run failed.
    pub spec_file: String,
}

impl RunRecord {
    pub fn failed(&self) -> bool {
        self.spec_file.is_empty()
    }
}

/// Scores a spec against the code's two requirements with a fresh compliance pass.
/// Returns (material, thickness).
pub fn score_spec(spec: &WallDetailSpec, code: PromptCode, rules: &RuleRegistry) -> (bool, bool) {
    let report = run_checks(spec, &code.requirement(), rules);
    let pass = |id| report.verdict(id).is_some_and(|v| v.passed);
    (pass(STRUCTURAL_MATERIAL), pass(MIN_STRUCTURAL_THICKNESS))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub codes: Vec<PromptCode>,
    pub runs: u32,
    pub seed: u64,
    pub out: PathBuf,
    pub resume: bool,
    pub executor: Executor,
    /// Worker threads for the parallel executor; 0 uses every core.
    pub jobs: usize,
    /// Writes every run's trace, raw model traffic included, under `traces/`.
    pub record_traces: bool,
}

impl ExperimentConfig {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            codes: PromptCode::all(),
            runs: 30,
            seed: 0,
            out: out.into(),
            resume: false,
            executor: Executor::default(),
            jobs: 0,
            record_traces: false,
        }
    }
}

/// Engine over a mock script with the given pipeline settings.
pub fn mock_engine(script: MockScript, settings: PipelineSettings) -> Result<Engine, HarnessError> {
    Ok(Engine::new(Gateway::mock(script, RetryPolicy::default())?, settings))
}

pub fn experiment_script() -> MockScript {
    MockScript::from_json(EXPERIMENT_SCRIPT).expect("bundled experiment script is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Job {
    pub code: PromptCode,
    pub run: u32,
}

pub(crate) struct RunOutput {
    pub record: RunRecord,
    pub spec: Option<WallDetailSpec>,
    pub trace: Option<PipelineTrace>,
}

fn spec_stem(job: Job) -> String {
    format!("{}-{:03}", job.code, job.run)
}

/// Runs one session for `job` and scores its final spec.
pub(crate) fn run_job(engine: &Arc<Engine>, base_seed: u64, job: Job) -> RunOutput {
    let seed = run_seed(base_seed, job.code, job.run);
    let id = spec_stem(job);
    let mut session = Session::new(engine.clone(), id.clone(), seed, seeded_project());
    let outcome = session.handle_utterance(&expand_prompt_code(job.code));
    let trace = session.trace(1).cloned();
    let attempts = trace.as_ref().map_or(0, PipelineTrace::attempts);
    let duration_ms = trace
        .as_ref()
        .map_or(0, |t| t.steps.iter().map(|s| s.duration_ms).sum());
    let spec = match outcome {
        Ok(TurnOutcome::Completed { result, .. }) => result.produced_spec,
        _ => None,
    };
    let (material_pass, thickness_pass) = spec
        .as_ref()
        .map_or((false, false), |s| score_spec(s, job.code, &engine.rules));
    let spec_file = match spec {
        Some(_) => format!("{SPEC_DIR}/{id}.json"),
        None => String::new(),
    };
    RunOutput {
        record: RunRecord {
            code: job.code,
            run: job.run,
            material_pass,
            thickness_pass,
            attempts,
            duration_ms,
            spec_file,
        },
        spec,
        trace,
    }
}

/// Serialized writer for records, spec files and traces. A record line is written only
/// after its spec file, and flushed at once, so a crash leaves a consistent prefix.
struct Sink {
    out: PathBuf,
    file: fs::File,
    record_traces: bool,
    written: Vec<RunRecord>,
}

impl Sink {
    fn open(cfg: &ExperimentConfig, jobs: &[Job]) -> Result<Self, HarnessError> {
        let out = cfg.out.clone();
        fs::create_dir_all(out.join(SPEC_DIR)).map_err(io_err(&out))?;
        if cfg.record_traces {
            fs::create_dir_all(out.join(TRACE_DIR)).map_err(io_err(&out))?;
        }
        let path = out.join(RECORDS_FILE);
        let mut written = Vec::new();
        if cfg.resume && path.exists() {
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            // Drop a partially written last line.
            let keep = text.rfind('\n').map_or(0, |i| i + 1);
            written = parse_records(&text[..keep], &path)?;
            if written.len() > jobs.len() {
                return Err(HarnessError::Resume(format!(
                    "{} holds {} records but the experiment has {} runs",
                    path.display(),
                    written.len(),
                    jobs.len()
                )));
            }
            for (r, j) in written.iter().zip(jobs) {
                if (r.code, r.run) != (j.code, j.run) {
                    return Err(HarnessError::Resume(format!(
                        "record {} {} does not match expected run {} {}",
                        r.code, r.run, j.code, j.run
                    )));
                }
            }
            let file = fs::OpenOptions::new().write(true).open(&path).map_err(io_err(&path))?;
            file.set_len(keep as u64).map_err(io_err(&path))?;
        }
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        if !cfg.resume || file.metadata().map_err(io_err(&path))?.len() == 0 {
            file.set_len(0).map_err(io_err(&path))?;
            writeln!(file, "{CSV_HEADER}").map_err(io_err(&path))?;
            written.clear();
        }
        Ok(Self {
            out,
            file,
            record_traces: cfg.record_traces,
            written,
        })
    }

    fn accept(&mut self, out: RunOutput) -> Result<(), HarnessError> {
        let stem = spec_stem(Job {
            code: out.record.code,
            run: out.record.run,
        });
        if let Some(spec) = &out.spec {
            let path = self.out.join(&out.record.spec_file);
            let json = serde_json::to_string_pretty(spec).expect("spec serializes");
            fs::write(&path, json + "\n").map_err(io_err(&path))?;
        }
        if let (true, Some(trace)) = (self.record_traces, &out.trace) {
            let path = self.out.join(TRACE_DIR).join(format!("{stem}.json"));
            let json = serde_json::to_string_pretty(trace).expect("trace serializes");
            fs::write(&path, json + "\n").map_err(io_err(&path))?;
        }
        let path = self.out.join(RECORDS_FILE);
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.serialize(&out.record).expect("record serializes");
        let line = w.into_inner().expect("in-memory writer");
        self.file.write_all(&line).map_err(io_err(&path))?;
        self.file.flush().map_err(io_err(&path))?;
        tracing::debug!(code = %out.record.code, run = out.record.run, "record written");
        self.written.push(out.record);
        Ok(())
    }
}

fn parse_records(text: &str, path: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .collect::<Result<Vec<RunRecord>, _>>()
        .map_err(|e| HarnessError::Records {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Reads `records.csv` from an output directory.
pub fn read_records(out: impl AsRef<Path>) -> Result<Vec<RunRecord>, HarnessError> {
    let path = out.as_ref().join(RECORDS_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    parse_records(&text, &path)
}

/// Runs `runs` sessions per code, streaming records to `out/records.csv`, and returns every
/// record of the experiment, including those kept from a resumed run.
pub fn run_experiment(engine: &Arc<Engine>, cfg: &ExperimentConfig) -> Result<Vec<RunRecord>, HarnessError> {
    let jobs: Vec<Job> = cfg
        .codes
        .iter()
        .flat_map(|&code| (1..=cfg.runs).map(move |run| Job { code, run }))
        .collect();
    let mut sink = Sink::open(cfg, &jobs)?;
    let pending = &jobs[sink.written.len()..];
    if !sink.written.is_empty() {
        tracing::info!(kept = sink.written.len(), remaining = pending.len(), "resuming");
    }
    cfg.executor
        .run(pending, cfg.jobs, |job| run_job(engine, cfg.seed, job), |o| sink.accept(o))?;
    Ok(sink.written)
}

/// Recomputes every record's verdicts from its persisted spec file.
pub fn rescore(out: impl AsRef<Path>, rules: &RuleRegistry) -> Result<Vec<RunRecord>, HarnessError> {
    let out = out.as_ref();
    let mut records = read_records(out)?;
    for r in &mut records {
        if r.failed() {
            r.material_pass = false;
            r.thickness_pass = false;
            continue;
        }
        let path = out.join(&r.spec_file);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let spec: WallDetailSpec = serde_json::from_str(&text).map_err(|e| HarnessError::Records {
            path: path.clone(),
            message: e.to_string(),
        })?;
        (r.material_pass, r.thickness_pass) = score_spec(&spec, r.code, rules);
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub passed: u32,
    pub total: u32,
}

impl Tally {
    fn add(&mut self, pass: bool) {
        self.total += 1;
        self.passed += pass as u32;
    }

    /// Accuracy in percent with 2 decimals, rounded half up.
    pub fn percent(self) -> String {
        format_percent(self.passed, self.total)
    }
}

/// `100 * passed / total` with 2 decimals, rounded half up, e.g. `"91.67%"`.
pub fn format_percent(passed: u32, total: u32) -> String {
    assert!(total > 0, "percent of an empty tally");
    let (p, t) = (passed as u64, total as u64);
    // hundredths of a percent, rounded half up in exact integer arithmetic
    let h = (p * 20_000 + t) / (2 * t);
    format!("{}.{:02}%", h / 100, h % 100)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeRow {
    pub code: PromptCode,
    pub material: Tally,
    pub thickness: Tally,
    pub both: Tally,
    pub failed: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub material: Tally,
    pub thickness: Tally,
    /// Runs passing both criteria.
    pub both: Tally,
    /// Runs that ended without a compliant detail.
    pub failed: u32,
    pub per_code: Vec<CodeRow>,
}

pub fn compute_accuracy(records: &[RunRecord]) -> Result<ResultsTable, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    let mut rows: BTreeMap<PromptCode, CodeRow> = BTreeMap::new();
    let mut order = Vec::new();
    let mut t = ResultsTable {
        material: Tally::default(),
        thickness: Tally::default(),
        both: Tally::default(),
        failed: 0,
        per_code: Vec::new(),
    };
    for r in records {
        let row = rows.entry(r.code).or_insert_with(|| {
            order.push(r.code);
            CodeRow {
                code: r.code,
                material: Tally::default(),
                thickness: Tally::default(),
                both: Tally::default(),
                failed: 0,
            }
        });
        let both = r.material_pass && r.thickness_pass;
        for (tally, pass) in [
            (&mut row.material, r.material_pass),
            (&mut t.material, r.material_pass),
            (&mut row.thickness, r.thickness_pass),
            (&mut t.thickness, r.thickness_pass),
            (&mut row.both, both),
            (&mut t.both, both),
        ] {
            tally.add(pass);
        }
        row.failed += r.failed() as u32;
        t.failed += r.failed() as u32;
    }
    t.per_code = order.into_iter().map(|c| rows.remove(&c).expect("row")).collect();
    Ok(t)
}

impl ResultsTable {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("# Experiment results\n\n");
        s.push_str("| Criterion | Passed | Total | Accuracy |\n|---|---:|---:|---:|\n");
        for (name, t) in [
            ("Structural material", self.material),
            ("Structural thickness", self.thickness),
            ("Both", self.both),
        ] {
            s.push_str(&format!("| {name} | {} | {} | {}[^1] |\n", t.passed, t.total, t.percent()));
        }
        s.push_str(&format!("\nFailed runs: {}\n\n", self.failed));
        s.push_str("| Code | Material | Thickness | Both | Failed |\n|---|---:|---:|---:|---:|\n");
        for r in &self.per_code {
            s.push_str(&format!(
                "| {} | {}/{} ({}) | {}/{} ({}) | {}/{} ({}) | {} |\n",
                r.code,
                r.material.passed,
                r.material.total,
                r.material.percent(),
                r.thickness.passed,
                r.thickness.total,
                r.thickness.percent(),
                r.both.passed,
                r.both.total,
                r.both.percent(),
                r.failed
            ));
        }
        s.push_str(
            "\n[^1]: Percentages are rounded half up to 2 decimals, so 220/240 prints as 91.67%. \
             A truncating report would print 91.66% for the same count.\n",
        );
        s
    }

    pub fn write_summary(&self, out: impl AsRef<Path>) -> Result<PathBuf, HarnessError> {
        let path = out.as_ref().join(SUMMARY_FILE);
        fs::write(&path, self.to_markdown()).map_err(io_err(&path))?;
        Ok(path)
    }
}
