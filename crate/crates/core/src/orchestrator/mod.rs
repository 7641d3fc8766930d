//! Per-turn pipeline driver, dialogue sessions, traces and the session event stream.

mod pipeline;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compliance::{CheckReport, RuleRegistry};
use crate::config::EngineConfig;
use crate::gateway::{ChatClient, Exchange, Gateway, GatewayError, MockScript, Transcript};
use crate::grounding::{AliasTable, Matcher, StructuringMode};
use crate::kernel::{ExecutionResult, Project};
use crate::nlu::{ClarificationQuestion, SlotRegistry, TaskClass, TaskFrame};

pub use pipeline::plan_steps;

/// Mock script for interactive use: the experiment prompts without fault injection, the
/// Alaska example, a rotate command, a wall modification and a transcript for a sample
/// recording.
pub const DIALOGUE_SCRIPT: &str = include_str!("../../data/mock/dialogue.json");

/// Bytes of the sample recording whose transcript `DIALOGUE_SCRIPT` registers.
pub const SAMPLE_AUDIO: &[u8] = include_bytes!("../../data/mock/alaska.wav");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Step {
    Interpret,
    Fill,
    Match,
    Structure,
    Execute,
    Check,
}

impl Step {
    pub const ALL: [Step; 6] = [
        Step::Interpret,
        Step::Fill,
        Step::Match,
        Step::Structure,
        Step::Execute,
        Step::Check,
    ];
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A step in a task's plan. `skip_reason` is set for steps the task does not need.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedStep {
    pub step: Step,
    pub skip_reason: Option<String>,
}

impl PlannedStep {
    pub fn skipped(&self) -> bool {
        self.skip_reason.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: Step,
    /// 1-based attempt of the execute-and-check loop this step belongs to.
    pub attempt: u32,
    pub skipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub input: String,
    pub output: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exchanges: Vec<Exchange>,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    /// Sequence number of the user turn that started this pipeline pass.
    pub turn: u32,
    pub utterance: String,
    pub task: Option<TaskClass>,
    pub steps: Vec<StepRecord>,
    pub outcome: String,
}

impl PipelineTrace {
    pub fn executed(&self) -> impl Iterator<Item = &StepRecord> {
        self.steps.iter().filter(|s| !s.skipped)
    }

    pub fn attempts(&self) -> u32 {
        self.steps.iter().map(|s| s.attempt).max().unwrap_or(0)
    }

    pub fn step(&self, step: Step, attempt: u32) -> Option<&StepRecord> {
        self.steps.iter().find(|s| s.step == step && s.attempt == attempt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status")]
pub enum TurnOutcome {
    /// `report` is absent only when the task's plan has no Check step or checking is disabled.
    Completed {
        result: ExecutionResult,
        report: Option<CheckReport>,
    },
    NeedsAnswer {
        question: ClarificationQuestion,
    },
    Failed {
        reason: String,
        trace: Box<PipelineTrace>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Speaker {
    User,
    System,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub seq: u32,
    pub speaker: Speaker,
    pub text: String,
    /// Key of the pipeline trace this turn belongs to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    TurnStarted { turn: u32, text: String },
    StepStarted { turn: u32, step: Step, attempt: u32 },
    StepCompleted { turn: u32, record: StepRecord },
    QuestionPending { turn: u32, question: ClarificationQuestion },
    CheckReport { turn: u32, report: CheckReport },
    ModelUpdated { turn: u32, entity_ids: Vec<String> },
    TurnCompleted { turn: u32, reply: String },
    TurnFailed { turn: u32, reason: String },
}

impl Event {
    pub fn turn(&self) -> u32 {
        match self {
            Event::TurnStarted { turn, .. }
            | Event::StepStarted { turn, .. }
            | Event::StepCompleted { turn, .. }
            | Event::QuestionPending { turn, .. }
            | Event::CheckReport { turn, .. }
            | Event::ModelUpdated { turn, .. }
            | Event::TurnCompleted { turn, .. }
            | Event::TurnFailed { turn, .. } => *turn,
        }
    }

    /// Whether this event ends a turn from the listener's point of view.
    pub fn ends_turn(&self) -> bool {
        matches!(
            self,
            Event::QuestionPending { .. } | Event::TurnCompleted { .. } | Event::TurnFailed { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("a question is pending; answer it first")]
    QuestionPending,
    #[error("no question is pending")]
    NoPendingQuestion,
    #[error("session is closed")]
    SessionClosed,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Grounding(#[from] crate::grounding::GroundingError),
    #[error(transparent)]
    Nlu(#[from] crate::nlu::NluError),
    #[error(transparent)]
    Compliance(#[from] crate::compliance::ComplianceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub mode: StructuringMode,
    pub repair_budget: u32,
    /// Execute-and-check attempts per turn.
    pub retry_budget: u32,
    /// When false the Check step is skipped and the first executed detail is kept.
    pub check_enabled: bool,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            mode: StructuringMode::Fused,
            repair_budget: crate::grounding::DEFAULT_REPAIR_BUDGET,
            retry_budget: crate::config::DEFAULT_RETRY_BUDGET,
            check_enabled: true,
        }
    }
}

/// Everything sessions share: the backend, vocabularies, rules and pipeline settings.
pub struct Engine {
    pub gateway: Gateway,
    pub slots: SlotRegistry,
    pub matcher: Matcher,
    pub rules: RuleRegistry,
    pub settings: PipelineSettings,
}

impl Engine {
    /// Engine with bundled schemas, aliases and rules.
    pub fn new(gateway: Gateway, settings: PipelineSettings) -> Self {
        Self {
            gateway,
            slots: SlotRegistry::bundled(),
            matcher: Matcher::default(),
            rules: RuleRegistry::builtin(),
            settings,
        }
    }

    pub fn from_config(cfg: &EngineConfig) -> Result<Self, EngineError> {
        let gateway = match &cfg.mock_script {
            Some(path) => Gateway::mock(MockScript::load(path)?, cfg.retry)?,
            None => Gateway::live(cfg.live.clone(), cfg.retry),
        };
        let slots = match &cfg.slot_schemas {
            Some(path) => SlotRegistry::bundled_with_overrides(path)?,
            None => SlotRegistry::bundled(),
        };
        let aliases = match &cfg.alias_table {
            Some(path) => AliasTable::load(path)?,
            None => AliasTable::bundled(),
        };
        let mut rules = RuleRegistry::builtin().with_strict_rc_threshold(cfg.strict_rc_threshold);
        if let Some(path) = &cfg.rule_params {
            rules = rules.with_overrides_file(path)?;
        }
        Ok(Self {
            gateway,
            slots,
            matcher: Matcher::new(aliases, cfg.match_threshold),
            rules,
            settings: PipelineSettings {
                mode: cfg.mode,
                repair_budget: cfg.repair_budget,
                retry_budget: cfg.retry_budget,
                check_enabled: true,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct PendingQuestion {
    question: ClarificationQuestion,
    frame: TaskFrame,
}

/// One dialogue with its own project. Turns are processed one at a time.
pub struct Session {
    pub id: String,
    pub seed: u64,
    engine: Arc<Engine>,
    client: ChatClient,
    project: Project,
    turns: Vec<DialogueTurn>,
    traces: BTreeMap<u32, PipelineTrace>,
    pending: Option<PendingQuestion>,
    subscribers: Vec<Sender<Event>>,
    closed: bool,
}

impl Session {
    pub fn new(engine: Arc<Engine>, id: impl Into<String>, seed: u64, project: Project) -> Self {
        let client = engine.gateway.client(seed);
        Self {
            id: id.into(),
            seed,
            engine,
            client,
            project,
            turns: Vec::new(),
            traces: BTreeMap::new(),
            pending: None,
            subscribers: Vec::new(),
            closed: false,
        }
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn project(&self) -> &Project {
        &self.project
    }

    pub fn turns(&self) -> &[DialogueTurn] {
        &self.turns
    }

    pub fn pending_question(&self) -> Option<&ClarificationQuestion> {
        self.pending.as_ref().map(|p| &p.question)
    }

    /// The trace attached to dialogue turn `seq` (user or system side).
    pub fn trace(&self, seq: u32) -> Option<&PipelineTrace> {
        let key = self.turns.iter().find(|t| t.seq == seq)?.trace?;
        self.traces.get(&key)
    }

    pub fn traces(&self) -> impl Iterator<Item = &PipelineTrace> {
        self.traces.values()
    }

    pub fn subscribe(&mut self) -> Result<Receiver<Event>, SessionError> {
        if self.closed {
            return Err(SessionError::SessionClosed);
        }
        let (tx, rx) = channel();
        self.subscribers.push(tx);
        Ok(rx)
    }

    /// Ends every event stream; further turns are rejected.
    pub fn close(&mut self) {
        self.closed = true;
        self.subscribers.clear();
    }

    pub fn transcribe(&self, audio: &[u8], media_type: &str) -> Result<Transcript, GatewayError> {
        self.client.transcribe(audio, media_type)
    }

    fn emit(&mut self, event: Event) {
        self.subscribers.retain(|tx| tx.send(event.clone()).is_ok());
    }

    fn push_turn(&mut self, speaker: Speaker, text: &str, trace: Option<u32>) -> u32 {
        let seq = self.turns.len() as u32 + 1;
        self.turns.push(DialogueTurn {
            seq,
            speaker,
            text: text.to_string(),
            trace,
        });
        seq
    }
}

#[cfg(test)]
mod tests;
