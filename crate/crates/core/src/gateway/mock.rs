//! Scripted offline backend with seeded fault injection.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{ChatRequest, ChatTransport, GatewayError, Transcript, TransportError, VirtualClock};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Matcher {
    /// Required value of the request's `step` tag.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<String>,
    /// Other required tag values.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
    /// Substrings that must all occur in the request text.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    /// Regex over the request text. Its captures can be spliced into the response as `$1` or `${name}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regex: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FailureMode {
    MalformedJson,
    /// Rewrites a wall-detail JSON response so that the named check rule fails.
    /// `"*"` picks the material or the structural-thickness rule at random.
    RuleViolation { rule: String },
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureSpec {
    #[serde(flatten)]
    pub mode: FailureMode,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(rename = "match", default)]
    pub matcher: Matcher,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureSpec>,
    /// Virtual latency charged per call.
    #[serde(default)]
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedTranscript {
    pub text: String,
    #[serde(default = "default_language")]
    pub language_tag: String,
    #[serde(default)]
    pub duration: f64,
}

fn default_language() -> String {
    "en".into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub seed: u64,
    pub rules: Vec<MockRule>,
    /// SHA-256 hex digest of an audio blob → transcript.
    #[serde(default)]
    pub transcripts: BTreeMap<String, ScriptedTranscript>,
}

impl MockScript {
    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        let script: MockScript =
            serde_json::from_str(text).map_err(|e| GatewayError::InvalidScript(e.to_string()))?;
        script.validate()?;
        Ok(script)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::InvalidScript(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        for (i, rule) in self.rules.iter().enumerate() {
            if let Some(re) = &rule.matcher.regex {
                Regex::new(re).map_err(|e| GatewayError::InvalidScript(format!("rules[{i}].match.regex: {e}")))?;
            }
            if let Some(f) = &rule.failure {
                if !(0.0..=1.0).contains(&f.p) {
                    return Err(GatewayError::InvalidScript(format!(
                        "rules[{i}].failure.p must be within [0, 1], got {}",
                        f.p
                    )));
                }
                if let FailureMode::RuleViolation { rule: r } = &f.mode {
                    if !VIOLATABLE_RULES.contains(&r.as_str()) && r != "*" {
                        return Err(GatewayError::InvalidScript(format!(
                            "rules[{i}].failure.rule: unknown rule '{r}'"
                        )));
                    }
                }
            }
        }
        for (digest, t) in &self.transcripts {
            if digest.len() != 64 || !digest.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(GatewayError::InvalidScript(format!("transcripts: '{digest}' is not a sha256 hex digest")));
            }
            if t.text.is_empty() && t.duration != 0.0 {
                return Err(GatewayError::InvalidScript(format!("transcripts.{digest}: empty text needs zero duration")));
            }
        }
        Ok(())
    }
}

const VIOLATABLE_RULES: &[&str] = &["structural_material", "min_structural_thickness", "requested_total_thickness"];

pub fn audio_digest(audio: &[u8]) -> String {
    hex::encode(Sha256::digest(audio))
}

struct CompiledRule {
    rule: MockRule,
    regex: Option<Regex>,
}

/// A validated script with its regexes compiled, shared by every session's transport.
pub struct CompiledScript {
    seed: u64,
    rules: Vec<CompiledRule>,
    transcripts: BTreeMap<String, ScriptedTranscript>,
}

impl CompiledScript {
    pub fn new(script: MockScript) -> Result<Self, GatewayError> {
        script.validate()?;
        let rules = script
            .rules
            .into_iter()
            .map(|rule| CompiledRule {
                regex: rule.matcher.regex.as_deref().map(|r| Regex::new(r).expect("validated regex")),
                rule,
            })
            .collect();
        Ok(Self {
            seed: script.seed,
            rules,
            transcripts: script.transcripts,
        })
    }
}

pub struct MockTransport {
    script: Arc<CompiledScript>,
    rng: Mutex<ChaCha8Rng>,
    clock: Arc<VirtualClock>,
}

fn mix_seed(script_seed: u64, session_seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(script_seed.to_le_bytes());
    h.update(session_seed.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

impl MockTransport {
    pub fn new(script: Arc<CompiledScript>, session_seed: u64, clock: Arc<VirtualClock>) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(mix_seed(script.seed, session_seed));
        Self {
            script,
            rng: Mutex::new(rng),
            clock,
        }
    }

    /// First matching rule and its rendered response.
    fn select(&self, request: &ChatRequest) -> Option<(&CompiledRule, String)> {
        let text = request.full_text();
        for c in &self.script.rules {
            let m = &c.rule.matcher;
            if let Some(step) = &m.step {
                if request.step() != Some(step.as_str()) {
                    continue;
                }
            }
            if m.tags.iter().any(|(k, v)| request.tags.get(k) != Some(v)) {
                continue;
            }
            if !m.contains.iter().all(|s| text.contains(s.as_str())) {
                continue;
            }
            let response = match &c.regex {
                Some(re) => match re.captures(&text) {
                    Some(caps) => {
                        let mut out = String::new();
                        caps.expand(&c.rule.response, &mut out);
                        out
                    }
                    None => continue,
                },
                None => c.rule.response.clone(),
            };
            return Some((c, response));
        }
        None
    }
}

impl ChatTransport for MockTransport {
    fn backend_id(&self) -> String {
        "mock".into()
    }

    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let Some((compiled, response)) = self.select(request) else {
            return Ok(String::new());
        };
        self.clock.advance(compiled.rule.latency_ms);
        let Some(failure) = &compiled.rule.failure else {
            return Ok(response);
        };
        let mut rng = self.rng.lock().expect("mock rng poisoned");
        let draw: f64 = rng.random();
        if draw >= failure.p {
            return Ok(response);
        }
        match &failure.mode {
            FailureMode::Timeout => Err(TransportError::Transient("scripted timeout".into())),
            FailureMode::MalformedJson => Ok(malform(&response)),
            FailureMode::RuleViolation { rule } => {
                let rule = if rule == "*" {
                    if rng.random_bool(0.5) {
                        "structural_material"
                    } else {
                        "min_structural_thickness"
                    }
                } else {
                    rule.as_str()
                };
                Ok(violate(&response, rule))
            }
        }
    }

    fn transcribe(&self, audio: &[u8], _media_type: &str) -> Result<Transcript, GatewayError> {
        match self.script.transcripts.get(&audio_digest(audio)) {
            Some(t) if !t.text.is_empty() => Ok(Transcript {
                text: t.text.clone(),
                language_tag: t.language_tag.clone(),
                duration: t.duration,
            }),
            _ => Err(GatewayError::ResponseEmpty),
        }
    }
}

/// Cuts the response in half, which breaks any JSON document longer than a few bytes.
fn malform(response: &str) -> String {
    let mut cut = response.len() / 2;
    while !response.is_char_boundary(cut) {
        cut -= 1;
    }
    let broken = &response[..cut];
    if broken.trim().is_empty() {
        "{".into()
    } else {
        broken.into()
    }
}

/// Rewrites a wall-detail payload so it breaks one check rule. Non-JSON responses pass through.
fn violate(response: &str, rule: &str) -> String {
    let Ok(mut doc) = serde_json::from_str::<Value>(response) else {
        return response.into();
    };
    let Some(layers) = doc.get_mut("layers").and_then(Value::as_array_mut) else {
        return response.into();
    };
    let is_structure = |l: &Value| {
        l.get("layer_type")
            .and_then(Value::as_str)
            .is_some_and(|t| t.eq_ignore_ascii_case("structure"))
    };
    match rule {
        "structural_material" => {
            for l in layers.iter_mut().filter(|l| is_structure(l)) {
                l["material"] = Value::from("concrete masonry unit");
                l["thermal_conductivity"] = Value::from(0.9);
            }
        }
        "min_structural_thickness" => {
            let n = layers.iter().filter(|l| is_structure(l)).count().max(1);
            for l in layers.iter_mut().filter(|l| is_structure(l)) {
                l["thickness"] = Value::from(90.0 / n as f64);
            }
        }
        "requested_total_thickness" => {
            for l in layers.iter_mut() {
                if let Some(t) = l.get("thickness").and_then(Value::as_f64) {
                    l["thickness"] = Value::from(t / 4.0);
                }
            }
        }
        _ => {}
    }
    serde_json::to_string(&doc).unwrap_or_else(|_| response.into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn violation_rewrites_structure_only() {
        let payload = r#"{"wall_detail_name":"W","layers":[
            {"material":"cement plaster","layer_type":"finish","thermal_conductivity":0.72,"thickness":20},
            {"material":"reinforced concrete","layer_type":"structure","thermal_conductivity":2.3,"thickness":200}]}"#;
        let v: Value = serde_json::from_str(&violate(payload, "min_structural_thickness")).unwrap();
        assert_eq!(v["layers"][1]["thickness"], 90.0);
        assert_eq!(v["layers"][0]["thickness"], 20);
        let v: Value = serde_json::from_str(&violate(payload, "structural_material")).unwrap();
        assert_eq!(v["layers"][1]["material"], "concrete masonry unit");
        assert_eq!(v["layers"][0]["material"], "cement plaster");
    }

    #[test]
    fn malformed_is_not_json() {
        let s = r#"{"wall_detail_name":"W","layers":[]}"#;
        assert!(serde_json::from_str::<Value>(&malform(s)).is_err());
        assert_eq!(malform(""), "{");
    }
}
