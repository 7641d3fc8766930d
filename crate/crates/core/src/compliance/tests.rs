use proptest::prelude::*;

use super::*;
use crate::kernel::WallLayer;

fn spec(layers: &[(&str, LayerFunction, f64)]) -> WallDetailSpec {
    WallDetailSpec {
        wall_detail_name: "W".into(),
        layers: layers
            .iter()
            .map(|(m, f, t)| WallLayer {
                material: m.to_string(),
                layer_type: *f,
                thermal_conductivity: 1.0,
                thickness: *t,
            })
            .collect(),
    }
}

use LayerFunction::{Finish, Insulation, Structure};

fn rc(t: f64) -> WallDetailSpec {
    spec(&[("mineral wool", Insulation, 100.0), ("reinforced concrete", Structure, t)])
}

fn timber(t: f64) -> WallDetailSpec {
    spec(&[("mineral wool", Insulation, 50.0), ("timber stud", Structure, t)])
}

#[test]
fn material_rule() {
    let ctx = RequirementContext::new("reinforced concrete", None);
    assert!(rule_structural_material(&rc(190.0), &ctx).passed);

    let v = rule_structural_material(&rc(190.0), &RequirementContext::new("timber", None));
    assert!(!v.passed);
    assert!(v.message.contains("timber") && v.message.contains("reinforced concrete"));

    let v = rule_structural_material(&spec(&[("brick veneer", Finish, 90.0)]), &ctx);
    assert!(!v.passed);
    assert!(v.message.starts_with("NoStructuralLayer"));
}

#[test]
fn family_terms_accept_members() {
    assert!(material_satisfies("timber stud", "timber"));
    assert!(material_satisfies("Cross-Laminated Timber", "timber"));
    assert!(material_satisfies("cast-in-place concrete", "reinforced concrete"));
    assert!(!material_satisfies("timber", "timber stud"));
    assert!(!material_satisfies("concrete masonry unit", "reinforced concrete"));
    assert!(!material_satisfies("reinforced concrete", "timber"));
}

#[test]
fn thickness_rule_examples() {
    let p = RuleParams::default();
    let ctx = RequirementContext::new("reinforced concrete", None);
    let v = rule_min_structural_thickness(&rc(190.0), &ctx, &p);
    assert!(v.passed);
    assert_eq!(v.measured.unwrap().value, 190.0);
    assert!(!rule_min_structural_thickness(&rc(90.0), &ctx, &p).passed);

    let tctx = RequirementContext::new("timber", None);
    assert!(!rule_min_structural_thickness(&timber(200.0), &tctx, &p).passed);
}

#[test]
fn thickness_boundaries() {
    let p = RuleParams::default();
    let ctx = RequirementContext::new("reinforced concrete", None);
    assert!(rule_min_structural_thickness(&rc(100.0), &ctx, &p).passed);
    assert!(!rule_min_structural_thickness(&rc(99.999999), &ctx, &p).passed);
    assert!(!rule_min_structural_thickness(&rc(99.999), &ctx, &p).passed);

    let strict = RuleParams { strict_rc_threshold: true, ..p };
    assert!(!rule_min_structural_thickness(&rc(100.0), &ctx, &strict).passed);
    assert!(rule_min_structural_thickness(&rc(100.001), &ctx, &strict).passed);

    let tctx = RequirementContext::new("timber", None);
    for (t, ok) in [(140.0, true), (190.0, true), (139.9, false), (190.1, false), (165.0, true)] {
        assert_eq!(rule_min_structural_thickness(&timber(t), &tctx, &p).passed, ok, "{t}");
    }
}

#[test]
fn structure_layers_are_summed() {
    let s = spec(&[("reinforced concrete", Structure, 60.0), ("mineral wool", Insulation, 80.0), ("reinforced concrete", Structure, 40.0)]);
    let v = rule_min_structural_thickness(&s, &RequirementContext::new("reinforced concrete", None), &RuleParams::default());
    assert!(v.passed);
    assert_eq!(v.measured.unwrap().value, 100.0);
}

#[test]
fn other_family_is_advisory() {
    let ctx = RequirementContext::new("concrete masonry unit", Some(100.0));
    assert_eq!(ctx.structural_family, StructuralFamily::Other);
    let v = rule_min_structural_thickness(&spec(&[("concrete masonry unit", Structure, 10.0)]), &ctx, &RuleParams::default());
    assert!(v.passed);
    assert_eq!(v.severity, Severity::Advisory);
}

#[test]
fn total_thickness_rule() {
    let s = |t| spec(&[("reinforced concrete", Structure, t)]);
    assert!(rule_requested_total_thickness(&s(220.0), &RequirementContext::new("reinforced concrete", Some(140.0))).passed);
    assert!(!rule_requested_total_thickness(&s(139.5), &RequirementContext::new("reinforced concrete", Some(140.0))).passed);
    let v = rule_requested_total_thickness(&s(10.0), &RequirementContext::new("reinforced concrete", None));
    assert!(v.passed && v.skipped);
}

#[test]
fn run_checks_examples() {
    let reg = RuleRegistry::builtin();
    let ctx = RequirementContext::new("reinforced concrete", Some(140.0));
    let r = run_checks(&rc(150.0), &ctx, &reg);
    assert!(r.overall);
    assert_eq!(r.verdicts.len(), 3);

    let wrong = spec(&[("mineral wool", Insulation, 100.0), ("timber stud", Structure, 150.0)]);
    let r = run_checks(&wrong, &ctx, &reg);
    assert!(!r.overall);
    let failed: Vec<_> = r.verdicts.iter().filter(|v| !v.passed).map(|v| v.rule_id.as_str()).collect();
    assert_eq!(failed, [STRUCTURAL_MATERIAL]);
    assert_eq!(r.failures().len(), 1);

    let r = run_checks(&wrong, &ctx, &RuleRegistry::empty());
    assert!(r.overall);
    assert!(r.verdicts.is_empty());
}

#[test]
fn no_short_circuit() {
    let reg = RuleRegistry::builtin();
    let ctx = RequirementContext::new("timber", Some(500.0));
    let r = run_checks(&spec(&[("brick veneer", Finish, 90.0)]), &ctx, &reg);
    assert_eq!(r.verdicts.len(), 3);
    assert!(r.verdicts.iter().all(|v| !v.passed));
}

#[test]
fn overrides() {
    let reg = RuleRegistry::builtin()
        .with_overrides_json(r#"{"timber":{"min_mm":120,"max_mm":200},"strict_rc_threshold":true,"disabled_rules":["requested_total_thickness"]}"#)
        .unwrap();
    assert_eq!(reg.rules.len(), 2);
    assert!(reg.params.strict_rc_threshold);
    let r = run_checks(&timber(195.0), &RequirementContext::new("timber", None), &reg);
    assert!(r.overall);

    assert!(RuleRegistry::builtin().with_overrides_json(r#"{"timber":{"min_mm":200,"max_mm":100}}"#).is_err());
    assert!(RuleRegistry::builtin().with_overrides_json(r#"{"disabled_rules":["nope"]}"#).is_err());
    assert!(RuleRegistry::builtin().with_overrides_json(r#"{"typo":1}"#).is_err());
}

#[test]
fn report_csv() {
    let r = run_checks(&rc(150.0), &RequirementContext::new("reinforced concrete", Some(140.0)), &RuleRegistry::builtin());
    let csv = r.to_csv();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("attempt,rule_id,passed"));
    assert!(lines[2].starts_with("1,min_structural_thickness,true,false,Blocking,150,mm,"));
    let json = serde_json::to_string(&r).unwrap();
    assert_eq!(serde_json::from_str::<CheckReport>(&json).unwrap(), r);
}

proptest! {
    #[test]
    fn rc_thickness_monotone(t in 1.0f64..400.0, extra in 0.0f64..200.0) {
        let p = RuleParams::default();
        let ctx = RequirementContext::new("reinforced concrete", None);
        if rule_min_structural_thickness(&rc(t), &ctx, &p).passed {
            prop_assert!(rule_min_structural_thickness(&rc(t + extra), &ctx, &p).passed);
        }
    }

    #[test]
    fn checks_are_pure_and_complete(t in 1.0f64..400.0, min in proptest::option::of(1.0f64..400.0), timber_req in any::<bool>()) {
        let reg = RuleRegistry::builtin();
        let ctx = RequirementContext::new(if timber_req { "timber" } else { "reinforced concrete" }, min);
        let a = run_checks(&rc(t), &ctx, &reg);
        prop_assert_eq!(&a, &run_checks(&rc(t), &ctx, &reg));
        prop_assert_eq!(a.verdicts.len(), reg.rules.len());
        prop_assert_eq!(a.overall, a.verdicts.iter().all(|v| v.passed || v.severity == Severity::Advisory));
        for v in &a.verdicts {
            prop_assert!(v.passed || !v.message.is_empty());
        }
    }
}
