use std::sync::Arc;

use super::*;
use crate::compliance::STRUCTURAL_MATERIAL;
use crate::gateway::RetryPolicy;
use crate::kernel::{seeded_project, Baseline, LayerFunction};
use crate::nlu::{FillPolicy, SlotType};

const CE1: &str = "Propose a wall detail using a reinforced concrete structure and exterior insulation method, ensuring a minimum thickness of 140 mm.";
const ALASKA: &str = "Create an exterior wall for Alaska.";

fn script_with(edit: impl FnOnce(&mut MockScript)) -> MockScript {
    let mut s = MockScript::from_json(DIALOGUE_SCRIPT).unwrap();
    edit(&mut s);
    s
}

fn engine(script: MockScript, settings: PipelineSettings) -> Arc<Engine> {
    Arc::new(Engine::new(Gateway::mock(script, RetryPolicy::default()).unwrap(), settings))
}

fn session(engine: &Arc<Engine>) -> Session {
    Session::new(engine.clone(), "s1", 11, seeded_project())
}

fn dialogue_session() -> Session {
    session(&engine(script_with(|_| {}), PipelineSettings::default()))
}

/// Structure rule for `name`, with a failure spec attached.
fn with_failure(s: &mut MockScript, name: &str, failure: &str) {
    let rule = s.rules.iter_mut().find(|r| r.name.as_deref() == Some(name)).unwrap();
    rule.failure = Some(serde_json::from_str(failure).unwrap());
}

#[test]
fn plans() {
    let steps = |t| plan_steps(t).unwrap().into_iter().map(|p| (p.step, p.skipped())).collect::<Vec<_>>();
    assert!(steps(TaskClass::CreateWallDetail).iter().all(|(_, s)| !s));
    assert!(steps(TaskClass::ModifyWall).iter().all(|(_, s)| !s));
    let st = steps(TaskClass::SimpleTransform);
    assert_eq!(st.iter().map(|(s, _)| *s).collect::<Vec<_>>(), Step::ALL);
    let skipped: Vec<Step> = st.iter().filter(|(_, s)| *s).map(|(s, _)| *s).collect();
    assert_eq!(skipped, [Step::Fill, Step::Match, Step::Check]);
    assert!(plan_steps(TaskClass::Unknown).is_none());
    for p in plan_steps(TaskClass::SimpleTransform).unwrap() {
        assert_eq!(p.skipped(), p.skip_reason.as_deref().is_some_and(|r| !r.is_empty()));
    }
}

#[test]
fn ce1_completes_in_six_steps() {
    let mut s = dialogue_session();
    let rx = s.subscribe().unwrap();
    let out = s.handle_utterance(CE1).unwrap();
    let TurnOutcome::Completed { result, report } = out else { panic!("{out:?}") };
    let report = report.unwrap();
    assert!(report.overall);
    assert_eq!(report.attempt, 1);
    assert_eq!(report.verdicts.len(), 3);
    assert_eq!(result.mutated_ids, ["wt-1"]);
    let spec = result.produced_spec.unwrap();
    assert_eq!(spec.wall_detail_name, "RC wall, exterior insulation, 140 mm");

    let trace = s.trace(1).unwrap();
    assert_eq!(trace.executed().count(), 6);
    assert_eq!(trace.steps.iter().map(|r| r.step).collect::<Vec<_>>(), Step::ALL);
    assert_eq!(trace.attempts(), 1);
    assert_eq!(s.trace(2), Some(trace), "system turn points at the same trace");

    let events: Vec<Event> = rx.try_iter().collect();
    assert!(matches!(events[0], Event::TurnStarted { turn: 1, .. }));
    assert!(matches!(events.last(), Some(Event::TurnCompleted { .. })));
    assert_eq!(events.iter().filter(|e| matches!(e, Event::StepCompleted { .. })).count(), 6);
    assert_eq!(events.iter().filter(|e| matches!(e, Event::ModelUpdated { .. })).count(), 1);
    assert_eq!(s.turns().len(), 2);
    assert_eq!(s.project().wall_types.len(), 1);
}

#[test]
fn two_subscribers_see_the_same_stream() {
    let mut s = dialogue_session();
    let (a, b) = (s.subscribe().unwrap(), s.subscribe().unwrap());
    s.handle_utterance(CE1).unwrap();
    let (a, b): (Vec<Event>, Vec<Event>) = (a.try_iter().collect(), b.try_iter().collect());
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn rotate_skips_fill_match_check() {
    let mut s = dialogue_session();
    s.project.create_wall_type(crate::kernel::WallDetailSpec {
        wall_detail_name: "W".into(),
        layers: vec![crate::kernel::WallLayer {
            material: "timber".into(),
            layer_type: LayerFunction::Structure,
            thermal_conductivity: 0.13,
            thickness: 140.0,
        }],
    })
    .unwrap();
    let t = s.project.wall_types[0].id.clone();
    s.project.place_wall(&t, Baseline::new((0.0, 0.0), (4000.0, 0.0)), 3000.0).unwrap();

    let out = s.handle_utterance("Rotate a model 90 degrees on the X axis").unwrap();
    let TurnOutcome::Completed { result, report } = out else { panic!("{out:?}") };
    assert!(report.is_none());
    assert!(result.mutated_ids.is_empty());
    let trace = s.trace(1).unwrap();
    let skipped: Vec<Step> = trace.steps.iter().filter(|r| r.skipped).map(|r| r.step).collect();
    assert_eq!(skipped, [Step::Fill, Step::Match, Step::Check]);
    assert!(trace.steps.iter().filter(|r| r.skipped).all(|r| r.reason.is_some()));
    assert_eq!(trace.steps.len(), 6);

    let out = s.handle_utterance("Rotate the model 90 degrees about the Z axis").unwrap();
    let TurnOutcome::Completed { result, .. } = out else { panic!("{out:?}") };
    assert_eq!(result.mutated_ids, ["wi-1"]);
    let end = s.project().wall_instances[0].baseline.end;
    assert!(end.x.abs() < 1e-9 && (end.y - 4000.0).abs() < 1e-9);
}

#[test]
fn unknown_task_fails_and_lists_tasks() {
    let mut s = dialogue_session();
    let out = s.handle_utterance("What's the weather like?").unwrap();
    let TurnOutcome::Failed { reason, trace } = out else { panic!("{out:?}") };
    for t in TaskClass::SUPPORTED {
        assert!(reason.contains(t.label()), "{reason}");
    }
    assert_eq!(trace.steps.len(), 1);
    assert_eq!(trace.steps[0].step, Step::Interpret);
    assert_eq!(s.turns()[1].text, reason);
}

#[test]
fn alaska_infers_with_bundled_schema() {
    let mut s = dialogue_session();
    let out = s.handle_utterance(ALASKA).unwrap();
    let TurnOutcome::Completed { result, report } = out else { panic!("{out:?}") };
    assert!(report.unwrap().overall);
    assert_eq!(result.produced_spec.unwrap().wall_detail_name, "Timber wall for Alaska");
}

fn ask_thickness_engine() -> Arc<Engine> {
    let mut e = Engine::new(
        Gateway::mock(script_with(|_| {}), RetryPolicy::default()).unwrap(),
        PipelineSettings::default(),
    );
    let mut schema = e.slots.schema(TaskClass::CreateWallDetail).unwrap().clone();
    for def in &mut schema.slots {
        if def.name == "min_thickness" {
            def.required = true;
            def.fill_policy = FillPolicy::MustAsk;
            def.question = Some("What minimum wall thickness do you need, in mm?".into());
            assert_eq!(def.slot_type, SlotType::LengthMm);
        }
    }
    e.slots.insert(schema).unwrap();
    Arc::new(e)
}

#[test]
fn alaska_asks_then_completes() {
    let mut s = session(&ask_thickness_engine());
    let rx = s.subscribe().unwrap();
    let out = s.handle_utterance(ALASKA).unwrap();
    let TurnOutcome::NeedsAnswer { question } = out else { panic!("{out:?}") };
    assert_eq!(question.slot, "min_thickness");
    assert_eq!(s.pending_question(), Some(&question));
    let events: Vec<Event> = rx.try_iter().collect();
    assert!(matches!(events.last(), Some(Event::QuestionPending { .. })));
    assert_eq!(s.handle_utterance("again"), Err(SessionError::QuestionPending));

    let out = s.answer_question("hello").unwrap();
    let TurnOutcome::NeedsAnswer { question } = out else { panic!("{out:?}") };
    assert_eq!(question.attempt, 2);

    let out = s.answer_question("250").unwrap();
    let TurnOutcome::Completed { report, .. } = out else { panic!("{out:?}") };
    assert!(report.unwrap().overall);
    assert!(s.pending_question().is_none());
    assert_eq!(s.answer_question("x"), Err(SessionError::NoPendingQuestion));
    // user, system, user, system, user, system
    assert_eq!(s.turns().len(), 6);
    let seqs: Vec<u32> = s.turns().iter().map(|t| t.seq).collect();
    assert_eq!(seqs, [1, 2, 3, 4, 5, 6]);
    let resumed = s.trace(5).unwrap();
    assert!(resumed.steps[0].skipped && resumed.steps[0].step == Step::Interpret);
    assert_eq!(resumed.executed().count(), 5);
}

#[test]
fn thickness_violation_once_then_compliant() {
    // Only retries carry the feedback tag, so the compliant rule shadows the violating one
    // from attempt 2 on.
    let mut script = script_with(|_| {});
    let mut bad = script
        .rules
        .iter()
        .find(|r| r.name.as_deref() == Some("structure-rc-exterior"))
        .unwrap()
        .clone();
    bad.name = Some("violate-first".into());
    bad.matcher.tags.insert("mode".into(), "fused".into());
    bad.failure = Some(serde_json::from_str(r#"{"mode":"rule_violation","rule":"min_structural_thickness","p":1.0}"#).unwrap());
    let mut good = bad.clone();
    good.name = Some("comply-after-feedback".into());
    good.failure = None;
    good.matcher.tags.insert("feedback".into(), "check".into());
    script.rules.insert(0, bad);
    script.rules.insert(0, good);

    let mut s = session(&engine(script, PipelineSettings::default()));
    let out = s.handle_utterance(CE1).unwrap();
    let TurnOutcome::Completed { report, result } = out else { panic!("{out:?}") };
    assert_eq!(report.unwrap().attempt, 2);
    let trace = s.trace(1).unwrap();
    assert_eq!(trace.steps.iter().filter(|r| r.step == Step::Check && !r.skipped).count(), 2);
    assert_eq!(trace.steps.len(), 12, "every step appears once per attempt");
    let feedback = &trace.step(Step::Structure, 2).unwrap().exchanges[0].request;
    assert!(feedback.messages[0].content.contains("reinforced concrete structure is 90 mm"));
    // The retry updated the same wall type instead of adding a second one.
    assert_eq!(s.project().wall_types.len(), 1);
    assert_eq!(s.project().wall_types[0].revision, 2);
    assert!(!s.project().wall_types[0].non_compliant);
    assert_eq!(result.mutated_ids, ["wt-1"]);
}

#[test]
fn forced_violation_exhausts_budget() {
    let script = script_with(|s| {
        with_failure(s, "structure-rc-exterior", r#"{"mode":"rule_violation","rule":"structural_material","p":1.0}"#)
    });
    let mut s = session(&engine(script, PipelineSettings::default()));
    let out = s.handle_utterance(CE1).unwrap();
    let TurnOutcome::Failed { reason, trace } = out else { panic!("{out:?}") };
    assert!(reason.contains("after 5 attempts"), "{reason}");
    assert_eq!(trace.attempts(), 5);
    assert_eq!(trace.steps.iter().filter(|r| r.step == Step::Check && !r.skipped).count(), 5);
    let types = &s.project().wall_types;
    assert_eq!(types.len(), 1);
    assert!(types[0].non_compliant);
    assert_eq!(types[0].revision, 5);
}

#[test]
fn retry_budget_is_configurable() {
    let script = script_with(|s| {
        with_failure(s, "structure-rc-exterior", r#"{"mode":"rule_violation","rule":"structural_material","p":1.0}"#)
    });
    let settings = PipelineSettings { retry_budget: 3, ..Default::default() };
    let mut s = session(&engine(script, settings));
    let out = s.handle_utterance(CE1).unwrap();
    let TurnOutcome::Failed { trace, .. } = out else { panic!("{out:?}") };
    assert_eq!(trace.attempts(), 3);
    for attempt in 2..=3 {
        for step in [Step::Interpret, Step::Fill, Step::Match] {
            let r = trace.step(step, attempt).unwrap();
            assert!(r.skipped, "{step} attempt {attempt}");
        }
    }
}

#[test]
fn no_check_keeps_first_detail() {
    let script = script_with(|s| {
        with_failure(s, "structure-rc-exterior", r#"{"mode":"rule_violation","rule":"structural_material","p":1.0}"#)
    });
    let settings = PipelineSettings { check_enabled: false, ..Default::default() };
    let mut s = session(&engine(script, settings));
    let out = s.handle_utterance(CE1).unwrap();
    let TurnOutcome::Completed { report, result } = out else { panic!("{out:?}") };
    assert!(report.is_none());
    let spec = result.produced_spec.unwrap();
    let ctx = crate::compliance::RequirementContext::new("reinforced concrete", Some(140.0));
    let r = crate::compliance::run_checks(&spec, &ctx, &RuleRegistry::builtin());
    assert!(!r.verdict(STRUCTURAL_MATERIAL).unwrap().passed);
    let trace = s.trace(1).unwrap();
    assert!(trace.step(Step::Check, 1).unwrap().skipped);
}

#[test]
fn modify_wall_updates_existing_type() {
    let mut s = dialogue_session();
    s.handle_utterance(CE1).unwrap();
    let out = s
        .handle_utterance("Change the insulation of RC wall, exterior insulation, 140 mm to mineral wool.")
        .unwrap();
    let TurnOutcome::Completed { result, report } = out else { panic!("{out:?}") };
    assert!(report.unwrap().overall);
    assert_eq!(result.mutated_ids, ["wt-1"]);
    let t = &s.project().wall_types[0];
    assert_eq!(t.revision, 2);
    assert_eq!(t.spec.wall_detail_name, "RC wall, exterior insulation, 140 mm");
    assert!(t.spec.layers.iter().any(|l| l.material == "mineral wool"));
}

#[test]
fn repeated_request_gets_a_fresh_name() {
    let mut s = dialogue_session();
    s.handle_utterance(CE1).unwrap();
    let out = s.handle_utterance(CE1).unwrap();
    let TurnOutcome::Completed { result, .. } = out else { panic!("{out:?}") };
    assert_eq!(result.produced_spec.unwrap().wall_detail_name, "RC wall, exterior insulation, 140 mm (2)");
    assert_eq!(s.project().wall_types.len(), 2);
}

#[test]
fn gateway_failure_fails_the_turn() {
    let script = script_with(|s| {
        with_failure(s, "classify-wall-detail", r#"{"mode":"timeout","p":1.0}"#)
    });
    let mut s = session(&engine(script, PipelineSettings::default()));
    let out = s.handle_utterance(CE1).unwrap();
    let TurnOutcome::Failed { reason, trace } = out else { panic!("{out:?}") };
    assert!(reason.contains("unreachable") || reason.contains("attempts"), "{reason}");
    assert_eq!(trace.steps.len(), 1);
    assert!(s.project().wall_types.is_empty());
}

#[test]
fn closed_session_rejects_turns() {
    let mut s = dialogue_session();
    s.close();
    assert_eq!(s.handle_utterance(CE1), Err(SessionError::SessionClosed));
    assert!(matches!(s.subscribe(), Err(SessionError::SessionClosed)));
}

#[test]
fn traces_are_deterministic() {
    let run = || {
        let mut s = dialogue_session();
        s.handle_utterance(CE1).unwrap();
        s.handle_utterance(ALASKA).unwrap();
        serde_json::to_string_pretty(&s.traces().collect::<Vec<_>>()).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn sample_audio_transcribes_to_alaska() {
    let s = dialogue_session();
    let t = s.transcribe(SAMPLE_AUDIO, "audio/wav").unwrap();
    assert_eq!(t.text, ALASKA);
    assert!(s.transcribe(b"", "audio/wav").is_err());
    assert!(s.transcribe(SAMPLE_AUDIO, "text/plain").is_err());
}
