//! Domain values shared across the engine.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::budget::LedgerSnapshot;
use crate::error::{Error, Result};
use crate::rewards::RewardFunctionKind;

/// Inclusive integer score interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[i64; 2]", into = "[i64; 2]")]
pub struct ScoreRange {
    pub lo: i64,
    pub hi: i64,
}

impl From<[i64; 2]> for ScoreRange {
    fn from([lo, hi]: [i64; 2]) -> Self {
        Self { lo, hi }
    }
}

impl From<ScoreRange> for [i64; 2] {
    fn from(r: ScoreRange) -> Self {
        [r.lo, r.hi]
    }
}

impl ScoreRange {
    pub fn new(lo: i64, hi: i64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: i64) -> bool {
        (self.lo..=self.hi).contains(&v)
    }

    pub fn width(&self) -> u64 {
        (self.hi - self.lo) as u64 + 1
    }

    /// Score an unguided response lands on: the lower middle of the range.
    pub fn midpoint(&self) -> i64 {
        self.lo + (self.hi - self.lo) / 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub id: String,
    pub name: String,
    /// Text embedded verbatim in the optimizer's descriptor block.
    pub description: String,
    pub range: ScoreRange,
}

/// A named, ordered set of objectives scored on a common domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub id: String,
    pub name: String,
    #[serde(rename = "objective")]
    pub objectives: Vec<ObjectiveSpec>,
}

const HELPSTEER: &str = include_str!("../catalogs/helpsteer.toml");
const POLITICAL: &str = include_str!("../catalogs/political.toml");

impl Catalog {
    pub fn new(id: impl Into<String>, name: impl Into<String>, objectives: Vec<ObjectiveSpec>) -> Result<Self> {
        let catalog = Self {
            id: id.into(),
            name: name.into(),
            objectives,
        };
        catalog.check()?;
        Ok(catalog)
    }

    fn check(&self) -> Result<()> {
        if self.objectives.is_empty() {
            return Err(Error::Catalog(format!("catalog `{}` has no objectives", self.id)));
        }
        let mut seen = HashSet::new();
        for o in &self.objectives {
            if o.range.lo >= o.range.hi {
                return Err(Error::Catalog(format!("objective `{}` has empty range", o.id)));
            }
            if o.description.trim().is_empty() {
                return Err(Error::Catalog(format!("objective `{}` has no description", o.id)));
            }
            if !seen.insert(o.id.as_str()) {
                return Err(Error::DuplicateObjective(o.id.clone()));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(src: &str) -> Result<Self> {
        let catalog: Catalog = toml::from_str(src).map_err(|e| Error::Catalog(e.to_string()))?;
        catalog.check()?;
        Ok(catalog)
    }

    /// The two shipped catalogs: `helpsteer` and `political`.
    pub fn builtin(id: &str) -> Option<Self> {
        let src = match id.to_ascii_lowercase().as_str() {
            "helpsteer" => HELPSTEER,
            "political" => POLITICAL,
            _ => return None,
        };
        Some(Self::from_toml_str(src).expect("shipped catalog is valid"))
    }

    /// Resolves a builtin catalog id, otherwise reads a catalog file.
    pub fn resolve(id_or_path: &str) -> Result<Self> {
        if let Some(c) = Self::builtin(id_or_path) {
            return Ok(c);
        }
        let src = std::fs::read_to_string(Path::new(id_or_path))
            .map_err(|e| Error::Catalog(format!("cannot read `{id_or_path}`: {e}")))?;
        Self::from_toml_str(&src)
    }

    /// Union of two catalogs, used when a goal spans domains.
    pub fn merged(&self, other: &Catalog) -> Result<Self> {
        let mut objectives = self.objectives.clone();
        objectives.extend(other.objectives.iter().cloned());
        Self::new(format!("{}+{}", self.id, other.id), format!("{} + {}", self.name, other.name), objectives)
    }

    pub fn get(&self, id: &str) -> Option<&ObjectiveSpec> {
        self.objectives.iter().find(|o| o.id == id)
    }

    pub fn require(&self, id: &str) -> Result<&ObjectiveSpec> {
        self.get(id).ok_or_else(|| Error::UnknownObjective(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.objectives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objectives.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalEntry {
    pub objective: String,
    pub target: i64,
}

/// Desired per-objective scores. Ids are distinct and non-empty; range
/// checks happen against a catalog in [`GoalVector::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GoalEntry>", into = "Vec<GoalEntry>")]
pub struct GoalVector {
    entries: Vec<GoalEntry>,
}

impl TryFrom<Vec<GoalEntry>> for GoalVector {
    type Error = Error;

    fn try_from(entries: Vec<GoalEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Empty("goal vector"));
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.objective.as_str()) {
                return Err(Error::DuplicateObjective(e.objective.clone()));
            }
        }
        Ok(Self { entries })
    }
}

impl From<GoalVector> for Vec<GoalEntry> {
    fn from(g: GoalVector) -> Self {
        g.entries
    }
}

impl GoalVector {
    pub fn new<S: Into<String>>(pairs: impl IntoIterator<Item = (S, i64)>) -> Result<Self> {
        pairs
            .into_iter()
            .map(|(objective, target)| GoalEntry {
                objective: objective.into(),
                target,
            })
            .collect::<Vec<_>>()
            .try_into()
    }

    pub fn entries(&self) -> &[GoalEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.objective.as_str())
    }

    pub fn target(&self, objective: &str) -> Option<i64> {
        self.entries.iter().find(|e| e.objective == objective).map(|e| e.target)
    }

    pub fn validate(&self, catalog: &Catalog) -> Result<()> {
        if self.len() > catalog.len() {
            return Err(Error::ObjectiveCount {
                requested: self.len(),
                available: catalog.len(),
            });
        }
        for e in &self.entries {
            let spec = catalog.require(&e.objective)?;
            if !spec.range.contains(e.target) {
                return Err(Error::OutOfRange {
                    objective: e.objective.clone(),
                    value: e.target,
                    lo: spec.range.lo,
                    hi: spec.range.hi,
                });
            }
        }
        Ok(())
    }
}

/// Renders as `(verbosity: 5, right: 1)`.
impl fmt::Display for GoalVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, e) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}: {}", e.objective, e.target)?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardEntry {
    pub objective: String,
    pub score: i64,
}

/// Achieved per-objective scores, aligned entry-for-entry with a goal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RewardVector {
    entries: Vec<RewardEntry>,
}

impl RewardVector {
    pub fn new<S: Into<String>>(pairs: impl IntoIterator<Item = (S, i64)>) -> Self {
        Self {
            entries: pairs
                .into_iter()
                .map(|(objective, score)| RewardEntry {
                    objective: objective.into(),
                    score,
                })
                .collect(),
        }
    }

    /// Pairs `scores` positionally with the goal's objectives.
    pub fn for_goal(goal: &GoalVector, scores: &[i64]) -> Result<Self> {
        if scores.len() != goal.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} scores for a goal of {} objectives",
                scores.len(),
                goal.len()
            )));
        }
        Ok(Self::new(goal.ids().zip(scores.iter().copied())))
    }

    pub fn entries(&self) -> &[RewardEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Per-entry `score - target`, failing unless ids match in order.
    pub fn diffs(&self, goal: &GoalVector) -> Result<Vec<i64>> {
        if self.len() != goal.len() {
            return Err(Error::ShapeMismatch(format!(
                "reward has {} entries, goal has {}",
                self.len(),
                goal.len()
            )));
        }
        self.entries
            .iter()
            .zip(goal.entries())
            .map(|(r, g)| {
                if r.objective != g.objective {
                    Err(Error::ShapeMismatch(format!(
                        "objective `{}` paired with `{}`",
                        r.objective, g.objective
                    )))
                } else {
                    Ok(r.score - g.target)
                }
            })
            .collect()
    }
}

impl fmt::Display for RewardVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, e) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}: {}", e.objective, e.score)?;
        }
        f.write_str(")")
    }
}

/// One modified prompt moving through generate, heuristic score, filter,
/// respond and reference score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Ordinal within its generation batch.
    pub index: usize,
    /// Beam that generated the batch; 0 outside multi-beam steps.
    #[serde(default)]
    pub beam: usize,
    pub prompt_text: String,
    /// The optimizer output had no usable block; `prompt_text` holds the
    /// original prompt instead.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub parse_failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heuristic_vector: Option<RewardVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heuristic_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_vector: Option<RewardVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_score: Option<f64>,
}

impl Candidate {
    pub fn new(index: usize, prompt_text: impl Into<String>) -> Self {
        Self {
            index,
            beam: 0,
            prompt_text: prompt_text.into(),
            parse_failed: false,
            heuristic_vector: None,
            heuristic_score: None,
            response_text: None,
            reference_vector: None,
            reference_score: None,
        }
    }

    pub fn with_beam(mut self, beam: usize) -> Self {
        self.beam = beam;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub prompt_text: String,
    pub reward_vector: RewardVector,
    pub scalar_reward: f64,
}

/// What the optimizer sees: the prompt, the goal and prior selections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamState {
    pub original_prompt: String,
    pub goal: GoalVector,
    pub history: Vec<HistoryEntry>,
}

impl BeamState {
    pub fn root(original_prompt: impl Into<String>, goal: GoalVector) -> Self {
        Self {
            original_prompt: original_prompt.into(),
            goal,
            history: Vec::new(),
        }
    }

    pub fn extended(&self, entry: HistoryEntry) -> Self {
        let mut next = self.clone();
        next.history.push(entry);
        next
    }
}

macro_rules! string_enum {
    ($name:ident { $($variant:ident => $text:literal $(| $alias:literal)*),+ $(,)? }) => {
        impl $name {
            pub fn as_str(&self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                let up = s.trim().to_ascii_uppercase().replace('_', "-");
                $(
                    if up == $text.replace('_', "-") $(|| up == $alias)* {
                        return Ok($name::$variant);
                    }
                )+
                Err(format!("unknown {} `{}`", stringify!($name), s))
            }
        }
    };
}
pub(crate) use string_enum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "MF-BON", alias = "mf-bon", alias = "MF_BON")]
    MfBon,
    #[serde(rename = "BON", alias = "bon")]
    Bon,
    #[serde(rename = "BS", alias = "bs")]
    BeamSearch,
    #[serde(rename = "GS", alias = "gs")]
    Greedy,
}

string_enum!(Method {
    MfBon => "MF-BON" | "MFBON",
    Bon => "BON",
    BeamSearch => "BS" | "BEAM",
    Greedy => "GS" | "GREEDY",
});

impl Method {
    pub fn is_multi_step(&self) -> bool {
        matches!(self, Method::BeamSearch | Method::Greedy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FilterKind {
    #[serde(rename = "RANDOM", alias = "random")]
    Random,
    #[serde(rename = "HEURISTIC", alias = "heuristic", alias = "H")]
    Heuristic,
}

string_enum!(FilterKind {
    Random => "RANDOM",
    Heuristic => "HEURISTIC" | "H",
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub selected: HistoryEntry,
}

pub const RECORD_SCHEMA_VERSION: u32 = 1;

/// Full outcome of one prompt's search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub schema_version: u32,
    pub seed: u64,
    pub prompt_index: usize,
    pub original_prompt: String,
    pub goal: GoalVector,
    pub method: Method,
    pub filter: FilterKind,
    pub reward_function: RewardFunctionKind,
    /// Response budget the episode ran under.
    pub k: u64,
    pub best_candidate: Candidate,
    pub all_reward_scores: BTreeMap<RewardFunctionKind, f64>,
    pub budget_receipt: LedgerSnapshot,
    #[serde(default)]
    pub per_step_trace: Vec<TraceStep>,
}
