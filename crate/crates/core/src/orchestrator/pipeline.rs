use std::collections::BTreeSet;
use std::sync::Arc;

use serde_json::json;

use super::{
    Event, PendingQuestion, PipelineTrace, PlannedStep, Session, SessionError, Speaker, Step, StepRecord,
    TurnOutcome,
};
use crate::compliance::{run_checks, CheckReport, RequirementContext};
use crate::gateway::{ChatClient, Clock, Recorder};
use crate::grounding::{
    build_structuring_prompt, describe_violations, resolve_frame, structure_spec, with_check_feedback,
    GroundingError, StructuringMode,
};
use crate::kernel::{format_mm, ExecutionResult, LayerFunction, WallDetailSpec, WallInstanceId, WallTypeId};
use crate::nlu::{
    apply_answer, classify_task, extract_slots, fill_missing, ClarificationQuestion, ContextTurn, NluError,
    SlotSchema, TaskClass, TaskFrame,
};
use crate::text::normalize_term;

/// Ordered six-step plan for `task`, or `None` for `Unknown`.
pub fn plan_steps(task: TaskClass) -> Option<Vec<PlannedStep>> {
    let skip: &[(Step, &str)] = match task {
        TaskClass::Unknown => return None,
        TaskClass::CreateWallDetail | TaskClass::ModifyWall => &[],
        TaskClass::SimpleTransform => &[
            (Step::Fill, "a transform needs no design information beyond the command"),
            (Step::Match, "a transform involves no library vocabulary"),
            (Step::Check, "no design rules apply to a transform"),
        ],
        TaskClass::PlaceWindow | TaskClass::DeleteColumn => &[
            (Step::Match, "the task involves no material vocabulary"),
            (Step::Check, "no rules are registered for this task"),
        ],
    };
    Some(
        Step::ALL
            .iter()
            .map(|&step| PlannedStep {
                step,
                skip_reason: skip.iter().find(|(s, _)| *s == step).map(|(_, r)| r.to_string()),
            })
            .collect(),
    )
}

const RETRY_SKIP: &str = "the retry re-enters at Structure";

/// Per-turn working state.
struct TurnRun {
    turn: u32,
    trace: PipelineTrace,
    client: ChatClient,
    clock: Arc<dyn Clock>,
    plan: Vec<PlannedStep>,
}

impl TurnRun {
    fn planned(&self, step: Step) -> Option<&PlannedStep> {
        self.plan.iter().find(|p| p.step == step)
    }
}

/// Outcome of the execute stage of one attempt.
struct Executed {
    result: ExecutionResult,
    type_id: Option<WallTypeId>,
}

impl Session {
    pub fn handle_utterance(&mut self, text: &str) -> Result<TurnOutcome, SessionError> {
        if self.closed {
            return Err(SessionError::SessionClosed);
        }
        if self.pending.is_some() {
            return Err(SessionError::QuestionPending);
        }
        let context: Vec<ContextTurn> = self
            .turns
            .iter()
            .map(|t| ContextTurn {
                speaker: format!("{:?}", t.speaker),
                text: t.text.clone(),
            })
            .collect();
        let mut run = self.start_turn(text);

        let interpreted = self.run_step(&mut run, Step::Interpret, 1, text.to_string(), |s, llm| {
            let c = classify_task(llm, text, &context).map_err(|e| e.to_string())?;
            if c.task == TaskClass::Unknown {
                return Err(unsupported_task_reply());
            }
            let schema = s
                .engine
                .slots
                .schema(c.task)
                .ok_or_else(|| NluError::NoSchema(c.task).to_string())?
                .clone();
            let mut frame = extract_slots(llm, text, c.task, &schema).map_err(|e| e.to_string())?;
            frame.dialogue_context = context.clone();
            let summary = format!(
                "task {} (confidence {}); {}",
                c.task,
                c.confidence,
                frame_summary(&frame)
            );
            Ok(((frame, schema), summary))
        });
        let (frame, schema) = match interpreted {
            Ok(v) => v,
            Err(reason) => return Ok(self.fail(run, reason)),
        };
        run.trace.task = Some(frame.task);
        run.plan = plan_steps(frame.task).expect("known task");

        if run.planned(Step::Fill).is_some_and(PlannedStep::skipped) {
            self.skip_step(&mut run, Step::Fill, 1);
            return Ok(self.after_fill(run, frame, schema));
        }
        let filled = self.run_step(&mut run, Step::Fill, 1, frame_summary(&frame), |_, llm| {
            let (frame, questions) = fill_missing(llm, &frame, &schema).map_err(|e| e.to_string())?;
            let summary = fill_summary(&frame, &questions);
            Ok(((frame, questions), summary))
        });
        match filled {
            Ok((frame, questions)) => Ok(self.after_questions(run, frame, schema, questions)),
            Err(reason) => Ok(self.fail(run, reason)),
        }
    }

    /// Resumes the pending turn with the user's answer.
    pub fn answer_question(&mut self, answer: &str) -> Result<TurnOutcome, SessionError> {
        if self.closed {
            return Err(SessionError::SessionClosed);
        }
        let pending = self.pending.take().ok_or(SessionError::NoPendingQuestion)?;
        let mut run = self.start_turn(answer);
        run.trace.task = Some(pending.frame.task);
        run.plan = plan_steps(pending.frame.task).expect("pending frames have a known task");
        self.record(
            &mut run,
            StepRecord {
                step: Step::Interpret,
                attempt: 1,
                skipped: true,
                reason: Some(format!("answer to the pending question about {}", pending.question.slot)),
                input: answer.to_string(),
                output: String::new(),
                exchanges: Vec::new(),
                duration_ms: 0,
            },
        );
        let schema = match self.engine.slots.schema(pending.frame.task) {
            Some(s) => s.clone(),
            None => return Ok(self.fail(run, NluError::NoSchema(pending.frame.task).to_string())),
        };

        let input = format!("{} = {answer}", pending.question.slot);
        let question = pending.question.clone();
        let filled = self.run_step(&mut run, Step::Fill, 1, input, |_, llm| {
            let frame = match apply_answer(&pending.frame, &schema, &question, answer) {
                Ok(f) => f,
                Err(e @ NluError::UnparseableAnswer { .. }) => return Ok((Err(e.to_string()), e.to_string())),
                Err(e) => return Err(e.to_string()),
            };
            let (frame, questions) = fill_missing(llm, &frame, &schema).map_err(|e| e.to_string())?;
            let summary = fill_summary(&frame, &questions);
            Ok((Ok((frame, questions)), summary))
        });
        match filled {
            Ok(Ok((frame, questions))) => Ok(self.after_questions(run, frame, schema, questions)),
            Ok(Err(problem)) => {
                let mut question = pending.question.clone();
                question.attempt += 1;
                let text = format!("I could not use that answer ({problem}). {}", question.text);
                Ok(self.ask(run, pending.frame, question, text))
            }
            Err(reason) => Ok(self.fail(run, reason)),
        }
    }

    fn start_turn(&mut self, text: &str) -> TurnRun {
        let seq = self.turns.len() as u32 + 1;
        self.push_turn(Speaker::User, text, Some(seq));
        self.emit(Event::TurnStarted {
            turn: seq,
            text: text.to_string(),
        });
        let client = self.client.clone();
        let clock = client.clock().clone();
        TurnRun {
            turn: seq,
            trace: PipelineTrace {
                turn: seq,
                utterance: text.to_string(),
                task: None,
                steps: Vec::new(),
                outcome: String::new(),
            },
            client,
            clock,
            plan: Vec::new(),
        }
    }

    /// Runs one step: emits events, times it, captures model traffic and appends the record.
    /// The closure returns the step's value and an output summary, or a failure reason.
    fn run_step<T>(
        &mut self,
        run: &mut TurnRun,
        step: Step,
        attempt: u32,
        input: String,
        f: impl FnOnce(&mut Session, &mut Recorder<'_>) -> Result<(T, String), String>,
    ) -> Result<T, String> {
        self.emit(Event::StepStarted {
            turn: run.turn,
            step,
            attempt,
        });
        let client = run.client.clone();
        let mut llm = Recorder::new(&client);
        let started = run.clock.now_ms();
        let result = f(self, &mut llm);
        let duration_ms = run.clock.now_ms().saturating_sub(started);
        let (value, output) = match result {
            Ok((v, out)) => (Ok(v), out),
            Err(reason) => (Err(reason.clone()), format!("failed: {reason}")),
        };
        self.record(
            run,
            StepRecord {
                step,
                attempt,
                skipped: false,
                reason: None,
                input,
                output,
                exchanges: llm.take(),
                duration_ms,
            },
        );
        value
    }

    fn skip_step(&mut self, run: &mut TurnRun, step: Step, attempt: u32) {
        let reason = if attempt > 1 && matches!(step, Step::Interpret | Step::Fill | Step::Match) {
            RETRY_SKIP.to_string()
        } else {
            run.planned(step)
                .and_then(|p| p.skip_reason.clone())
                .unwrap_or_else(|| "not planned".into())
        };
        self.record(
            run,
            StepRecord {
                step,
                attempt,
                skipped: true,
                reason: Some(reason),
                input: String::new(),
                output: String::new(),
                exchanges: Vec::new(),
                duration_ms: 0,
            },
        );
    }

    fn record(&mut self, run: &mut TurnRun, record: StepRecord) {
        run.trace.steps.push(record.clone());
        self.emit(Event::StepCompleted {
            turn: run.turn,
            record,
        });
    }

    fn finish(&mut self, mut run: TurnRun, outcome: &str, reply: &str) {
        run.trace.outcome = outcome.to_string();
        self.push_turn(Speaker::System, reply, Some(run.turn));
        self.traces.insert(run.turn, run.trace);
    }

    fn fail(&mut self, run: TurnRun, reason: String) -> TurnOutcome {
        let turn = run.turn;
        let mut trace = run.trace.clone();
        trace.outcome = format!("failed: {reason}");
        self.finish(run, &trace.outcome.clone(), &reason);
        self.emit(Event::TurnFailed {
            turn,
            reason: reason.clone(),
        });
        TurnOutcome::Failed {
            reason,
            trace: Box::new(trace),
        }
    }

    fn ask(&mut self, run: TurnRun, frame: TaskFrame, question: ClarificationQuestion, text: String) -> TurnOutcome {
        let turn = run.turn;
        self.finish(run, &format!("needs answer: {}", question.slot), &text);
        self.pending = Some(PendingQuestion {
            question: question.clone(),
            frame,
        });
        self.emit(Event::QuestionPending {
            turn,
            question: question.clone(),
        });
        TurnOutcome::NeedsAnswer { question }
    }

    fn after_questions(
        &mut self,
        run: TurnRun,
        frame: TaskFrame,
        schema: SlotSchema,
        questions: Vec<ClarificationQuestion>,
    ) -> TurnOutcome {
        match questions.into_iter().next() {
            Some(q) => {
                let text = q.text.clone();
                self.ask(run, frame, q, text)
            }
            None => self.after_fill(run, frame, schema),
        }
    }

    /// Match, then the Structure → Execute → Check loop.
    fn after_fill(&mut self, mut run: TurnRun, frame: TaskFrame, schema: SlotSchema) -> TurnOutcome {
        let matched = if run.planned(Step::Match).is_some_and(PlannedStep::skipped) {
            self.skip_step(&mut run, Step::Match, 1);
            Ok((frame, None))
        } else {
            let input = frame_summary(&frame);
            self.run_step(&mut run, Step::Match, 1, input, |s, _| {
                let (grounded, unmatched) =
                    resolve_frame(&frame, &schema, &s.project.material_library, &s.engine.matcher);
                let mut summary = frame_summary(&grounded);
                if !unmatched.is_empty() {
                    let terms: Vec<&str> = unmatched.iter().map(|u| u.term.as_str()).collect();
                    summary.push_str(&format!("; not in library (added as unverified if used): {}", terms.join(", ")));
                }
                if s.engine.settings.mode == StructuringMode::Fused {
                    summary.push_str("; library vocabulary goes with the structuring prompt");
                }
                let target = match grounded.task {
                    TaskClass::ModifyWall => Some(s.resolve_wall_type(&grounded)?),
                    _ => None,
                };
                Ok(((grounded, target), summary))
            })
        };
        let (frame, target) = match matched {
            Ok(v) => v,
            Err(reason) => return self.fail(run, reason),
        };
        match frame.task {
            TaskClass::CreateWallDetail | TaskClass::ModifyWall => self.wall_loop(run, frame, target),
            _ => self.command_task(run, frame),
        }
    }

    fn resolve_wall_type(&self, frame: &TaskFrame) -> Result<WallTypeId, String> {
        let name = frame.text("wall_type").ok_or("no wall type named")?;
        let by_id = self
            .project
            .wall_type(&WallTypeId::from(name.trim()))
            .or_else(|| self.project.wall_type_by_name(name));
        match by_id {
            Some(t) => Ok(t.id.clone()),
            None => {
                let known: Vec<&str> = self.project.wall_types.iter().map(|t| t.spec.wall_detail_name.as_str()).collect();
                Err(format!(
                    "no wall type '{name}' in the project (known: {})",
                    if known.is_empty() { "none".to_string() } else { known.join(", ") }
                ))
            }
        }
    }

    /// The execute-until-compliant loop for wall details.
    fn wall_loop(&mut self, mut run: TurnRun, frame: TaskFrame, target_type: Option<WallTypeId>) -> TurnOutcome {
        let settings = self.engine.settings;
        let mut base = match build_structuring_prompt(&frame, settings.mode, &self.project.material_library) {
            Ok(r) => r,
            Err(e) => return self.fail(run, format!("internal error: {e}")),
        };
        if let Some(id) = &target_type {
            let current = &self.project.wall_type(id).expect("resolved during Match").spec;
            let note = format!(
                "\nCurrent wall detail of '{}':\n{}\nApply the requested change and return the complete revised wall detail.",
                current.wall_detail_name,
                serde_json::to_string(current).expect("spec serializes")
            );
            base.messages[0].content.push_str(&note);
        }
        let ctx = self.requirement_context(&frame, target_type.as_ref());
        let budget = if settings.check_enabled { settings.retry_budget.max(1) } else { 1 };
        let mut created: BTreeSet<WallTypeId> = BTreeSet::new();
        let mut fixed_name: Option<String> = None;
        let mut last_type: Option<WallTypeId> = None;
        let mut feedback: Vec<String> = Vec::new();
        let mut last_report: Option<CheckReport> = None;

        for attempt in 1..=budget {
            if attempt > 1 {
                for step in [Step::Interpret, Step::Fill, Step::Match] {
                    self.skip_step(&mut run, step, attempt);
                }
            }
            let req = with_check_feedback(&base, &feedback);
            let input = if feedback.is_empty() {
                "structuring prompt".to_string()
            } else {
                format!("structuring prompt with check feedback: {}", feedback.join("; "))
            };
            let structured = self.run_step(&mut run, Step::Structure, attempt, input, |s, llm| {
                let out = structure_spec(
                    llm,
                    &req,
                    settings.repair_budget,
                    &s.engine.matcher,
                    &s.project.material_library,
                )
                .map_err(|e| match e {
                    GroundingError::Exhausted { calls, violations } => format!(
                        "no valid wall detail after {calls} structuring calls: {}",
                        describe_violations(&violations)
                    ),
                    other => other.to_string(),
                })?;
                let mut summary = spec_summary(&out.spec);
                if out.payloads.len() > 1 {
                    summary.push_str(&format!(" after {} repair(s)", out.payloads.len() - 1));
                }
                Ok((out.spec, summary))
            });
            let mut spec = match structured {
                Ok(spec) => spec,
                Err(reason) => return self.fail_loop(run, reason, last_type.as_ref()),
            };

            if let Some(name) = &fixed_name {
                spec.wall_detail_name = name.clone();
            }
            let target_instance = frame.text("target_instance").map(|t| WallInstanceId::from(t.trim()));
            let executed = self.run_step(&mut run, Step::Execute, attempt, spec_summary(&spec), |s, _| {
                let ex = s.execute_wall(spec, target_type.as_ref(), target_instance.as_ref(), &created)?;
                let summary = ex.result.summary.clone();
                Ok((ex, summary))
            });
            let executed = match executed {
                Ok(e) => e,
                Err(reason) => return self.fail_loop(run, reason, last_type.as_ref()),
            };
            if let Some(id) = &executed.type_id {
                if target_type.is_none() {
                    created.insert(id.clone());
                }
                last_type = Some(id.clone());
            }
            if fixed_name.is_none() {
                fixed_name = executed.result.produced_spec.as_ref().map(|s| s.wall_detail_name.clone());
            }
            self.emit(Event::ModelUpdated {
                turn: run.turn,
                entity_ids: executed.result.mutated_ids.clone(),
            });

            if !settings.check_enabled {
                self.skip_check_disabled(&mut run, attempt);
                let reply = executed.result.summary.clone();
                return self.complete(run, executed.result, None, reply);
            }
            let spec_ref = executed.result.produced_spec.clone().expect("wall execution produces a spec");
            let report = self.run_step(&mut run, Step::Check, attempt, spec_summary(&spec_ref), |s, _| {
                let mut report = run_checks(&spec_ref, &ctx, &s.engine.rules);
                report.attempt = attempt;
                let summary = report_summary(&report);
                Ok((report, summary))
            });
            let report = report.expect("checks are infallible");
            self.emit(Event::CheckReport {
                turn: run.turn,
                report: report.clone(),
            });
            if report.overall {
                let reply = format!(
                    "{}. All checks passed on attempt {attempt}: {}.",
                    executed.result.summary,
                    report_summary(&report)
                );
                return self.complete(run, executed.result, Some(report), reply);
            }
            feedback = report.failures();
            last_report = Some(report);
        }
        let failures = last_report.map(|r| r.failures().join("; ")).unwrap_or_default();
        let reason = format!("no compliant wall detail after {budget} attempts; last failures: {failures}");
        self.fail_loop(run, reason, last_type.as_ref())
    }

    fn skip_check_disabled(&mut self, run: &mut TurnRun, attempt: u32) {
        self.record(
            run,
            StepRecord {
                step: Step::Check,
                attempt,
                skipped: true,
                reason: Some("checking is disabled".into()),
                input: String::new(),
                output: String::new(),
                exchanges: Vec::new(),
                duration_ms: 0,
            },
        );
    }

    /// Fails the loop, leaving the last executed type in the model flagged non-compliant.
    fn fail_loop(&mut self, run: TurnRun, reason: String, last_type: Option<&WallTypeId>) -> TurnOutcome {
        if let Some(id) = last_type {
            if self.project.set_non_compliant(id, true).is_ok() {
                self.emit(Event::ModelUpdated {
                    turn: run.turn,
                    entity_ids: vec![id.to_string()],
                });
            }
        }
        self.fail(run, reason)
    }

    fn complete(
        &mut self,
        run: TurnRun,
        result: ExecutionResult,
        report: Option<CheckReport>,
        reply: String,
    ) -> TurnOutcome {
        let turn = run.turn;
        self.finish(run, "completed", &reply);
        self.emit(Event::TurnCompleted { turn, reply });
        TurnOutcome::Completed { result, report }
    }

    fn requirement_context(&self, frame: &TaskFrame, target: Option<&WallTypeId>) -> RequirementContext {
        let stated = frame.text("structural_material").map(str::to_string);
        let material = stated.or_else(|| {
            let t = self.project.wall_type(target?)?;
            t.spec
                .layers
                .iter()
                .find(|l| l.layer_type == LayerFunction::Structure)
                .map(|l| l.material.clone())
        });
        RequirementContext::new(material.as_deref().unwrap_or(""), frame.length("min_thickness"))
    }

    fn execute_wall(
        &mut self,
        mut spec: WallDetailSpec,
        target_type: Option<&WallTypeId>,
        target_instance: Option<&WallInstanceId>,
        created: &BTreeSet<WallTypeId>,
    ) -> Result<Executed, String> {
        if let Some(id) = target_type {
            spec.wall_detail_name = self.project.wall_type(id).ok_or("wall type vanished")?.spec.wall_detail_name.clone();
            let t = self.project.modify_wall_type(id, spec).map_err(|e| e.to_string())?;
            let result = ExecutionResult {
                mutated_ids: vec![id.to_string()],
                produced_spec: Some(t.spec.clone()),
                summary: format!(
                    "Wall type '{}' ({id}) modified to revision {}: {} layers, {} mm total",
                    t.spec.wall_detail_name,
                    t.revision,
                    t.spec.layers.len(),
                    format_mm(t.spec.total_thickness())
                ),
            };
            return Ok(Executed {
                result,
                type_id: Some(id.clone()),
            });
        }
        spec.wall_detail_name = self.free_name(&spec.wall_detail_name, created);
        let result = self
            .project
            .apply_wall_detail(spec, target_instance, created)
            .map_err(|e| e.to_string())?;
        let type_id = result.mutated_ids.first().map(|s| WallTypeId::from(s.as_str()));
        Ok(Executed { result, type_id })
    }

    /// `name`, or `name (2)`, `name (3)`, ... when an unrelated type already holds it.
    fn free_name(&self, name: &str, reusable: &BTreeSet<WallTypeId>) -> String {
        let taken = |n: &str| {
            self.project
                .wall_type_by_name(n)
                .is_some_and(|t| !reusable.contains(&t.id))
        };
        if !taken(name) {
            return name.to_string();
        }
        (2..)
            .map(|i| format!("{name} ({i})"))
            .find(|n| !taken(n))
            .expect("unbounded")
    }

    /// Non-wall tasks: Structure builds a command from the slots, Execute applies it.
    fn command_task(&mut self, mut run: TurnRun, frame: TaskFrame) -> TurnOutcome {
        let command = self.run_step(&mut run, Step::Structure, 1, frame_summary(&frame), |_, _| {
            let cmd = command_for(&frame)?;
            let summary = cmd.to_string();
            Ok((cmd, summary))
        });
        let command = match command {
            Ok(c) => c,
            Err(reason) => return self.fail(run, reason),
        };
        let task = frame.task;
        let executed = self.run_step(&mut run, Step::Execute, 1, command.to_string(), |s, _| {
            let result = s.execute_command(task, &command)?;
            let summary = result.summary.clone();
            Ok((result, summary))
        });
        let result = match executed {
            Ok(r) => r,
            Err(reason) => return self.fail(run, reason),
        };
        if !result.mutated_ids.is_empty() {
            self.emit(Event::ModelUpdated {
                turn: run.turn,
                entity_ids: result.mutated_ids.clone(),
            });
        }
        self.skip_step(&mut run, Step::Check, 1);
        let reply = result.summary.clone();
        self.complete(run, result, None, reply)
    }

    fn execute_command(&mut self, task: TaskClass, command: &serde_json::Value) -> Result<ExecutionResult, String> {
        match task {
            TaskClass::SimpleTransform => {
                let op = command["operation"].as_str().unwrap_or_default();
                let axis = command["axis"].as_str().unwrap_or("z");
                match op {
                    "rotate" => {
                        let degrees = command["degrees"].as_f64().ok_or("rotation angle missing")?;
                        if axis == "z" {
                            let ids = self.project.rotate_plan(degrees);
                            Ok(ExecutionResult {
                                summary: format!("Rotated {} wall(s) {degrees} degrees about Z", ids.len()),
                                mutated_ids: ids.iter().map(ToString::to_string).collect(),
                                produced_spec: None,
                            })
                        } else {
                            Ok(ExecutionResult {
                                mutated_ids: Vec::new(),
                                produced_spec: None,
                                summary: format!(
                                    "Rotation of {degrees} degrees about {} leaves the plan-only model unchanged",
                                    axis.to_uppercase()
                                ),
                            })
                        }
                    }
                    other => Err(format!("transform '{other}' is unsupported by the embedded kernel")),
                }
            }
            other => Err(format!("{other} is unsupported by the embedded kernel")),
        }
    }
}

/// Deterministic structuring for tasks that do not produce a wall detail.
fn command_for(frame: &TaskFrame) -> Result<serde_json::Value, String> {
    let mut cmd = serde_json::Map::new();
    cmd.insert("task".into(), json!(frame.task.label()));
    for (name, value) in &frame.slots {
        let v = match &value.value {
            crate::nlu::SlotData::Text(t) => json!(t),
            crate::nlu::SlotData::Length(mm) => json!(mm),
            crate::nlu::SlotData::Assembly(_) => continue,
        };
        cmd.insert(name.clone(), v);
    }
    if frame.task == TaskClass::SimpleTransform {
        let op = frame.text("operation").ok_or("the transform operation was not understood")?;
        cmd.insert("axis".into(), json!(normalize_term(frame.text("axis").unwrap_or("z"))));
        if op == "rotate" {
            let amount = frame.text("amount").ok_or("the rotation angle was not understood")?;
            let degrees = first_number(amount).ok_or_else(|| format!("no angle in '{amount}'"))?;
            cmd.insert("degrees".into(), json!(degrees));
        }
    }
    Ok(serde_json::Value::Object(cmd))
}

fn first_number(text: &str) -> Option<f64> {
    let start = text.find(|c: char| c.is_ascii_digit() || c == '-')?;
    let rest = &text[start..];
    let end = rest
        .char_indices()
        .skip(1)
        .find(|(_, c)| !(c.is_ascii_digit() || *c == '.'))
        .map_or(rest.len(), |(i, _)| i);
    rest[..end].parse().ok()
}

fn unsupported_task_reply() -> String {
    let tasks: Vec<String> = TaskClass::SUPPORTED
        .iter()
        .map(|t| format!("{} ({})", t.label(), t.description()))
        .collect();
    format!("I could not match that to a supported task. I can help with: {}.", tasks.join("; "))
}

fn frame_summary(frame: &TaskFrame) -> String {
    let mut parts: Vec<String> = frame
        .slots
        .values()
        .map(|s| format!("{}={} [{:?}]", s.name, s.value.render(), s.provenance))
        .collect();
    if !frame.missing.is_empty() {
        parts.push(format!("missing: {}", frame.missing.iter().cloned().collect::<Vec<_>>().join(", ")));
    }
    if parts.is_empty() {
        "no slots".into()
    } else {
        parts.join("; ")
    }
}

fn fill_summary(frame: &TaskFrame, questions: &[ClarificationQuestion]) -> String {
    let mut s = frame_summary(frame);
    if !questions.is_empty() {
        let slots: Vec<&str> = questions.iter().map(|q| q.slot.as_str()).collect();
        s.push_str(&format!("; questions for: {}", slots.join(", ")));
    }
    s
}

fn spec_summary(spec: &WallDetailSpec) -> String {
    let layers: Vec<String> = spec
        .layers
        .iter()
        .map(|l| format!("{} {} {} mm", l.material, l.layer_type, format_mm(l.thickness)))
        .collect();
    format!(
        "'{}': {} ({} mm total)",
        spec.wall_detail_name,
        layers.join(" | "),
        format_mm(spec.total_thickness())
    )
}

fn report_summary(report: &CheckReport) -> String {
    report
        .verdicts
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
