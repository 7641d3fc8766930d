use std::collections::HashMap;

use proptest::prelude::*;

use super::*;
use crate::gateway::{ChatClient, Gateway, MockScript, Recorder, RetryPolicy};
use crate::kernel::seeded_project;
use crate::nlu::{Provenance, SlotRegistry, SlotValue, TaskClass};

/// Plain recursive edit distance with memoization; independent of the library implementation.
fn edit_distance(a: &[char], b: &[char]) -> usize {
    fn go(a: &[char], b: &[char], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&d) = memo.get(&(i, j)) {
            return d;
        }
        let d = if a[i] == b[j] {
            go(a, b, i + 1, j + 1, memo)
        } else {
            1 + go(a, b, i + 1, j, memo)
                .min(go(a, b, i, j + 1, memo))
                .min(go(a, b, i + 1, j + 1, memo))
        };
        memo.insert((i, j), d);
        d
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

fn oracle_similarity(a: &str, b: &str) -> f64 {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let max = a.len().max(b.len());
    if max == 0 {
        return 1.0;
    }
    1.0 - edit_distance(&a, &b) as f64 / max as f64
}

#[test]
fn similarity_examples() {
    assert_eq!(similarity("concrete", "concrete"), 1.0);
    assert_eq!(similarity("a", "b"), 0.0);
    let chars = |s: &str| s.chars().collect::<Vec<_>>();
    assert_eq!(edit_distance(&chars("gypsum board"), &chars("gypsum wallboard")), 4);
    assert_eq!(similarity("gypsum board", "gypsum wallboard"), 0.75);
    assert_eq!(oracle_similarity("gypsum board", "gypsum wallboard"), 0.75);
}

#[test]
fn matcher_examples() {
    let lib = seeded_project().material_library;
    let m = Matcher::default();

    let r = m.match_term("reinforced concrete", &lib);
    assert_eq!((r.method, r.score), (MatchMethod::Exact, 1.0));

    let r = m.match_term("Reinforced Concrete", &lib);
    assert_eq!((r.method, r.score), (MatchMethod::Normalized, 1.0));
    assert_eq!(r.canonical.as_deref(), Some("reinforced concrete"));

    let r = m.match_term("gyp board", &lib);
    assert_eq!(r.method, MatchMethod::Synonym);
    assert_eq!(r.canonical.as_deref(), Some("gypsum wallboard"));

    let r = m.match_term("CLT", &lib);
    assert_eq!(r.method, MatchMethod::Synonym);
    assert_eq!(r.canonical.as_deref(), Some("cross-laminated timber"));

    let loose = Matcher::new(AliasTable::default(), 0.7);
    let r = loose.match_term("gypsum board", &lib);
    assert_eq!(r.method, MatchMethod::Fuzzy);
    assert_eq!(r.canonical.as_deref(), Some("gypsum wallboard"));
    assert_eq!(r.score, 0.75);

    // The default threshold rejects the same candidate.
    let r = Matcher::new(AliasTable::default(), DEFAULT_THRESHOLD).match_term("gypsum board", &lib);
    assert_eq!(r.method, MatchMethod::None);
    assert_eq!(r.matched, None);
    assert_eq!(r.score, 0.75);
}

#[test]
fn fuzzy_ties_pick_smallest_name() {
    let mut p = crate::kernel::Project::empty();
    p.add_material("abcx", crate::kernel::LayerFunction::Finish, 1.0, []).unwrap();
    p.add_material("abcy", crate::kernel::LayerFunction::Finish, 1.0, []).unwrap();
    let r = match_term("abcz", &p.material_library, &AliasTable::default(), 0.5);
    assert_eq!(r.canonical.as_deref(), Some("abcx"));
    assert_eq!(r.score, 0.75);
}

#[test]
fn alias_table_rejects_blank_entries() {
    assert!(AliasTable::from_json(r#"{"  ": "plywood"}"#).is_err());
    assert!(AliasTable::from_json("[]").is_err());
    let t = AliasTable::from_json(r#"{"Gyp-Board": "gypsum wallboard"}"#).unwrap();
    assert_eq!(t.get("gyp board"), Some("gypsum wallboard"));
}

fn layer(material: &str, layer_type: &str, k: &str, t: &str) -> String {
    format!(r#"{{"material":"{material}","layer_type":"{layer_type}","thermal_conductivity":{k},"thickness":{t}}}"#)
}

#[test]
fn validator_examples() {
    let ok = format!(
        r#"{{"wall_detail_name":"W1","layers":[{},{},{}]}}"#,
        layer("brick veneer", "finish", "0.77", "90"),
        layer("mineral wool", "insulation", "0.035", "150"),
        layer("reinforced concrete", "structure", "2.3", "200"),
    );
    let p = validate_payload(&ok);
    assert!(p.violations.is_empty(), "{:?}", p.violations);
    assert_eq!(p.parsed.as_ref().unwrap().layers.len(), 3);
    assert_eq!(p.parsed.unwrap().total_thickness(), 440.0);

    let unit = format!(
        r#"{{"wall_detail_name":"W1","layers":[{},{}]}}"#,
        layer("brick veneer", "finish", "0.77", "90"),
        layer("mineral wool", "insulation", "0.035", "\"150 mm\""),
    );
    let p = validate_payload(&unit);
    assert_eq!(p.parsed, None);
    assert_eq!(p.violations.len(), 1);
    assert_eq!(p.violations[0].code, ViolationCode::UnitString);
    assert_eq!(p.violations[0].path, "layers[1].thickness");

    let missing = r#"{"wall_detail_name":"W1","layers":[{"material":"timber","thermal_conductivity":0.13,"thickness":140}]}"#;
    let p = validate_payload(missing);
    assert_eq!(p.violations.len(), 1);
    assert_eq!(p.violations[0].code, ViolationCode::MissingField);
    assert_eq!(p.violations[0].path, "layers[0].layer_type");
}

#[test]
fn validator_codes() {
    let cases = [
        ("{\"wall_detail_name\":\"W\",\"layers\":[", ViolationCode::MalformedJson, ""),
        ("[1,2]", ViolationCode::MalformedJson, ""),
        (r#"{"wall_detail_name":"W","layers":[]}"#, ViolationCode::EmptyLayers, "layers"),
        (r#"{"layers":[{"material":"x","layer_type":"finish","thermal_conductivity":1,"thickness":1}]}"#, ViolationCode::MissingField, "wall_detail_name"),
        (
            r#"{"wall_detail_name":"W","layers":[{"material":"x","layer_type":"cladding","thermal_conductivity":1,"thickness":1}]}"#,
            ViolationCode::UnknownLayerType,
            "layers[0].layer_type",
        ),
        (
            r#"{"wall_detail_name":"W","layers":[{"material":"x","layer_type":"finish","thermal_conductivity":0,"thickness":1}]}"#,
            ViolationCode::NonPositive,
            "layers[0].thermal_conductivity",
        ),
        (
            r#"{"wall_detail_name":"W","layers":[{"material":"x","layer_type":"finish","thermal_conductivity":1,"thickness":"thick"}]}"#,
            ViolationCode::NotANumber,
            "layers[0].thickness",
        ),
    ];
    for (raw, code, path) in cases {
        let p = validate_payload(raw);
        assert_eq!(p.violations.len(), 1, "{raw}: {:?}", p.violations);
        assert_eq!((p.violations[0].code, p.violations[0].path.as_str()), (code, path), "{raw}");
    }
}

#[test]
fn validator_tolerates_fences_and_extra_keys() {
    let raw = "```json\n{\"wall_detail_name\":\"W\",\"notes\":\"x\",\"layers\":[{\"material\":\"timber\",\"layer_type\":\"Structure\",\"thermal_conductivity\":0.13,\"thickness\":140,\"color\":\"red\"}]}\n```";
    assert!(validate_payload(raw).is_valid());
}

fn ce1_frame() -> TaskFrame {
    let mut frame = TaskFrame {
        task: TaskClass::CreateWallDetail,
        slots: Default::default(),
        missing: Default::default(),
        waived: Default::default(),
        source_utterance: "Propose a wall detail using a reinforced concrete structure and exterior insulation method, ensuring a minimum thickness of 140 mm.".into(),
        dialogue_context: vec![],
    };
    for (name, value) in [
        ("structural_material", SlotData::Text("Reinforced Concrete".into())),
        ("insulation_method", SlotData::Text("exterior".into())),
        ("min_thickness", SlotData::Length(140.0)),
        (
            "layer_composition",
            SlotData::Assembly(vec![
                crate::nlu::LayerDraft { material: "rockwool".into(), layer_type: None, thickness: Some(100.0) },
                crate::nlu::LayerDraft { material: "unobtainium".into(), layer_type: None, thickness: None },
            ]),
        ),
    ] {
        frame.slots.insert(
            name.into(),
            SlotValue { name: name.into(), value, provenance: Provenance::UserStated, confidence: 1.0, span: None },
        );
    }
    frame
}

fn cwd_schema() -> SlotSchema {
    SlotRegistry::bundled().schema(TaskClass::CreateWallDetail).unwrap().clone()
}

#[test]
fn resolve_frame_examples() {
    let lib = seeded_project().material_library;
    let (out, report) = resolve_frame(&ce1_frame(), &cwd_schema(), &lib, &Matcher::default());
    assert_eq!(out.text("structural_material"), Some("reinforced concrete"));
    match out.get("layer_composition").unwrap() {
        SlotData::Assembly(l) => {
            assert_eq!(l[0].material, "mineral wool");
            assert_eq!(l[1].material, "unobtainium");
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(report.len(), 1);
    assert_eq!(report[0].term, "unobtainium");
    assert_eq!(report[0].slot, "layer_composition[1]");
    // The enum slot is not a material and stays untouched.
    assert_eq!(out.text("insulation_method"), Some("exterior"));

    let empty = TaskFrame { task: TaskClass::SimpleTransform, slots: Default::default(), ..ce1_frame() };
    let schema = SlotRegistry::bundled().schema(TaskClass::SimpleTransform).unwrap().clone();
    let (out, report) = resolve_frame(&empty, &schema, &lib, &Matcher::default());
    assert_eq!(out, empty);
    assert!(report.is_empty());
}

#[test]
fn prompt_modes() {
    let lib = seeded_project().material_library;
    let fused = build_structuring_prompt(&ce1_frame(), StructuringMode::Fused, &lib).unwrap();
    let split = build_structuring_prompt(&ce1_frame(), StructuringMode::Split, &lib).unwrap();
    for req in [&fused, &split] {
        assert!(req.full_text().contains(SCHEMA_INSTRUCTION));
        assert!(req.full_text().contains("minimum thickness of 140 mm"));
        assert_eq!(req.step(), Some("structure"));
        assert_eq!(req.temperature, 0.0);
    }
    for m in &lib {
        assert!(fused.system_instruction.contains(&format!("- {} (", m.name)));
        assert!(!split.system_instruction.contains(&format!("- {} (", m.name)));
    }
    let mut unready = ce1_frame();
    unready.missing.insert("layer_composition".into());
    assert!(matches!(
        build_structuring_prompt(&unready, StructuringMode::Fused, &lib),
        Err(GroundingError::FrameNotReady(_))
    ));
}

#[test]
fn schema_sentence_is_verbatim() {
    assert_eq!(
        SCHEMA_INSTRUCTION,
        "Return in JSON format with 'wall_detail_name' and each layer with 'material', 'layer_type', \
         'thermal_conductivity' (W/m·K), and 'thickness' (mm), with exact values without units, and in order \
         of exterior to interior layer."
    );
}

#[test]
fn repair_budget() {
    let lib = seeded_project().material_library;
    let base = build_structuring_prompt(&ce1_frame(), StructuringMode::Split, &lib).unwrap();
    let bad = validate_payload(r#"{"wall_detail_name":"W","layers":[]}"#);
    let mut state = RepairState::new(2);
    let req = repair(&mut state, &bad, &base).unwrap();
    assert_eq!(state.attempt, 1);
    assert_eq!(state.history.len(), 1);
    assert_eq!(req.messages.len(), 3);
    assert!(req.messages[2].content.contains("EMPTY_LAYERS at layers"));
    assert!(req.validate().is_ok());
    repair(&mut state, &bad, &base).unwrap();
    assert!(matches!(
        repair(&mut state, &bad, &base),
        Err(GroundingError::Exhausted { calls: 3, .. })
    ));
}

const VALID: &str = r#"{\"wall_detail_name\":\"RC exterior 140\",\"layers\":[{\"material\":\"Rock Wool\",\"layer_type\":\"insulation\",\"thermal_conductivity\":0.035,\"thickness\":100},{\"material\":\"reinforced concrete\",\"layer_type\":\"structure\",\"thermal_conductivity\":2.3,\"thickness\":150}]}"#;

fn client(script: &str) -> ChatClient {
    Gateway::mock(MockScript::from_json(script).unwrap(), RetryPolicy::default())
        .unwrap()
        .client(7)
}

#[test]
fn structure_repairs_once() {
    let script = format!(
        r#"{{"rules":[
          {{"match":{{"step":"structure","tags":{{"repair":"1"}}}},"response":"{VALID}"}},
          {{"match":{{"step":"structure"}},"response":"{{\"wall_detail_name\":\"x\",\"layers\":[{{\"material\":\"a\",\"layer_type\":\"finish\",\"thermal_conductivity\":1,\"thickness\":\"100 mm\"}}]}}"}}
        ]}}"#
    );
    let c = client(&script);
    let mut rec = Recorder::new(&c);
    let lib = seeded_project().material_library;
    let base = build_structuring_prompt(&ce1_frame(), StructuringMode::Split, &lib).unwrap();
    let out = structure_spec(&mut rec, &base, DEFAULT_REPAIR_BUDGET, &Matcher::default(), &lib).unwrap();
    assert_eq!(out.payloads.len(), 2);
    assert_eq!(out.spec.layers[0].material, "mineral wool");
    assert!(out.unmatched().is_empty());
    assert_eq!(rec.take().len(), 2);
}

#[test]
fn structure_exhausts_after_budget_plus_one() {
    let c = client(r#"{"rules":[{"match":{"step":"structure"},"response":"not json"}]}"#);
    let mut rec = Recorder::new(&c);
    let lib = seeded_project().material_library;
    let base = build_structuring_prompt(&ce1_frame(), StructuringMode::Split, &lib).unwrap();
    let err = structure_spec(&mut rec, &base, 2, &Matcher::default(), &lib).unwrap_err();
    assert!(matches!(err, GroundingError::Exhausted { calls: 3, .. }));
    assert_eq!(rec.take().len(), 3);
}

#[test]
fn fused_and_split_agree() {
    let script = format!(r#"{{"rules":[{{"match":{{"step":"structure"}},"response":"{VALID}"}}]}}"#);
    let lib = seeded_project().material_library;
    let specs: Vec<_> = [StructuringMode::Fused, StructuringMode::Split]
        .into_iter()
        .map(|mode| {
            let c = client(&script);
            let mut rec = Recorder::new(&c);
            let base = build_structuring_prompt(&ce1_frame(), mode, &lib).unwrap();
            structure_spec(&mut rec, &base, 2, &Matcher::default(), &lib).unwrap().spec
        })
        .collect();
    assert_eq!(specs[0], specs[1]);
}

#[test]
fn check_feedback_is_appended() {
    let lib = seeded_project().material_library;
    let base = build_structuring_prompt(&ce1_frame(), StructuringMode::Fused, &lib).unwrap();
    let req = with_check_feedback(&base, &["structure is 90 mm, needs at least 100 mm".into()]);
    assert!(req.messages[0].content.ends_with("Produce a revised wall detail that satisfies them."));
    assert!(req.messages[0].content.contains("needs at least 100 mm"));
    assert_eq!(with_check_feedback(&base, &[]), base);
}

proptest! {
    #[test]
    fn similarity_matches_oracle(a in "[a-c ]{0,12}", b in "[a-c ]{0,12}") {
        let s = similarity(&a, &b);
        prop_assert_eq!(s, oracle_similarity(&a, &b));
        prop_assert_eq!(s, similarity(&b, &a));
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(s == 1.0, a == b);
    }

    #[test]
    fn threshold_monotone(term in "[a-z ]{0,16}", lo in 0.0f64..1.0, hi in 0.0f64..1.0) {
        let lib = seeded_project().material_library;
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let at_lo = match_term(&term, &lib, &AliasTable::bundled(), lo);
        let at_hi = match_term(&term, &lib, &AliasTable::bundled(), hi);
        prop_assert_eq!(&at_lo, &match_term(&term, &lib, &AliasTable::bundled(), lo));
        if at_lo.method == MatchMethod::None {
            prop_assert_eq!(at_hi.method, MatchMethod::None);
        }
        prop_assert_eq!(at_hi.matched.is_some(), at_hi.method != MatchMethod::None);
    }
}
