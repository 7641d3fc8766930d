use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GroundingError;
use crate::kernel::{Material, MaterialId};
use crate::text::normalize_term;

/// Default fuzzy acceptance threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchMethod {
    Exact,
    Normalized,
    Synonym,
    Fuzzy,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub query: String,
    pub matched: Option<MaterialId>,
    /// Canonical library name of `matched`.
    pub canonical: Option<String>,
    pub score: f64,
    pub method: MatchMethod,
}

impl MatchResult {
    pub fn is_match(&self) -> bool {
        self.matched.is_some()
    }
}

/// `1 - levenshtein(a, b) / max(len a, len b)`, counted in characters. Two empty strings score 1.
pub fn similarity(a: &str, b: &str) -> f64 {
    let max = a.chars().count().max(b.chars().count());
    if max == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(a, b) as f64 / max as f64
}

/// Normalized synonym → canonical material name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AliasTable {
    entries: BTreeMap<String, String>,
}

const BUNDLED_ALIASES: &str = include_str!("../../data/aliases.json");

impl AliasTable {
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_ALIASES).expect("bundled alias table is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, GroundingError> {
        let raw: BTreeMap<String, String> =
            serde_json::from_str(text).map_err(|e| GroundingError::InvalidAliasTable(e.to_string()))?;
        let mut entries = BTreeMap::new();
        for (alias, canonical) in raw {
            let key = normalize_term(&alias);
            if key.is_empty() || normalize_term(&canonical).is_empty() {
                return Err(GroundingError::InvalidAliasTable(format!("empty entry '{alias}' -> '{canonical}'")));
            }
            entries.insert(key, canonical);
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GroundingError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| GroundingError::InvalidAliasTable(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn insert(&mut self, alias: &str, canonical: &str) {
        self.entries.insert(normalize_term(alias), canonical.to_string());
    }

    pub fn get(&self, term: &str) -> Option<&str> {
        self.entries.get(&normalize_term(term)).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Resolves free-text material terms against a material library.
#[derive(Debug, Clone, PartialEq)]
pub struct Matcher {
    pub aliases: AliasTable,
    pub threshold: f64,
}

impl Default for Matcher {
    fn default() -> Self {
        Self {
            aliases: AliasTable::bundled(),
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl Matcher {
    pub fn new(aliases: AliasTable, threshold: f64) -> Self {
        Self { aliases, threshold }
    }

    pub fn match_term(&self, term: &str, library: &[Material]) -> MatchResult {
        match_term(term, library, &self.aliases, self.threshold)
    }
}

/// Exact, then normalized, then synonym, then fuzzy; the first success wins.
///
/// Synonyms come from the alias table and from each material's own aliases. Fuzzy matching
/// compares against canonical names only and breaks score ties by the smallest name.
pub fn match_term(term: &str, library: &[Material], aliases: &AliasTable, threshold: f64) -> MatchResult {
    let hit = |m: &Material, score: f64, method: MatchMethod| MatchResult {
        query: term.to_string(),
        matched: Some(m.id.clone()),
        canonical: Some(m.name.clone()),
        score,
        method,
    };

    if let Some(m) = library.iter().find(|m| m.name == term) {
        return hit(m, 1.0, MatchMethod::Exact);
    }
    let key = normalize_term(term);
    let by_name = |name: &str| {
        let k = normalize_term(name);
        library.iter().find(|m| normalize_term(&m.name) == k)
    };
    if let Some(m) = by_name(term) {
        return hit(m, 1.0, MatchMethod::Normalized);
    }
    if let Some(m) = aliases.get(term).and_then(by_name) {
        return hit(m, 1.0, MatchMethod::Synonym);
    }
    if let Some(m) = library
        .iter()
        .find(|m| m.aliases.iter().any(|a| normalize_term(a) == key))
    {
        return hit(m, 1.0, MatchMethod::Synonym);
    }

    let mut best: Option<(&Material, f64)> = None;
    for m in library {
        let score = similarity(&key, &normalize_term(&m.name));
        best = match best {
            Some((b, s)) if s > score || (s == score && b.name <= m.name) => Some((b, s)),
            _ => Some((m, score)),
        };
    }
    match best {
        Some((m, score)) if score >= threshold => hit(m, score, MatchMethod::Fuzzy),
        best => MatchResult {
            query: term.to_string(),
            matched: None,
            canonical: None,
            score: best.map_or(0.0, |(_, s)| s),
            method: MatchMethod::None,
        },
    }
}
