//! Guideline library: one TOML file per guideline.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MetapromptError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    ArithmeticAggregation,
    HypotheticalCounterfactual,
    Temporal,
    EntityLinking,
    Other,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::ArithmeticAggregation,
        Category::HypotheticalCounterfactual,
        Category::Temporal,
        Category::EntityLinking,
        Category::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::ArithmeticAggregation => "arithmetic_aggregation",
            Category::HypotheticalCounterfactual => "hypothetical_counterfactual",
            Category::Temporal => "temporal",
            Category::EntityLinking => "entity_linking",
            Category::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().to_ascii_lowercase();
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    SeedAppendix,
    Distilled,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Guideline {
    pub id: String,
    pub category: Category,
    pub trigger: String,
    pub body: String,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_cluster: Option<String>,
    /// Split whose failures produced this guideline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_split: Option<String>,
    /// Retired guidelines stay on disk for auditability but are never merged.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub tombstone: bool,
}

impl Guideline {
    pub fn validate(&self) -> Result<(), MetapromptError> {
        if self.id.trim().is_empty() || self.id.contains(['/', '\\']) {
            return Err(MetapromptError::Library(format!("invalid guideline id `{}`", self.id)));
        }
        if self.body.trim().is_empty() {
            return Err(MetapromptError::Library(format!("guideline `{}` has an empty body", self.id)));
        }
        Ok(())
    }

    /// Prompt rendering of one guideline; the body is reproduced verbatim.
    pub fn render(&self) -> String {
        format!("[{}] When {}:\n{}", self.id, self.trigger.trim(), self.body)
    }
}

pub fn check_unique_ids(guidelines: &[Guideline]) -> Result<(), MetapromptError> {
    let mut seen = HashSet::new();
    for g in guidelines {
        if !seen.insert(g.id.as_str()) {
            return Err(MetapromptError::DuplicateId(g.id.clone()));
        }
    }
    Ok(())
}

const SEED_FILES: &[&str] = &[
    include_str!("../../assets/guidelines/G-arith.toml"),
    include_str!("../../assets/guidelines/G-cfact.toml"),
];

/// The shipped seed guidelines.
pub fn seed_library() -> Vec<Guideline> {
    SEED_FILES
        .iter()
        .map(|text| toml::from_str(text).expect("seed guideline parses"))
        .collect()
}

/// A directory of guideline files keyed by id. Removing an entry is not
/// supported; retire it with a tombstone instead.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GuidelineLibrary {
    entries: BTreeMap<String, Guideline>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsertOutcome {
    Added,
    Edited,
    Unchanged,
}

impl GuidelineLibrary {
    pub fn from_guidelines(guidelines: Vec<Guideline>) -> Result<Self, MetapromptError> {
        check_unique_ids(&guidelines)?;
        let mut lib = Self::default();
        for g in guidelines {
            g.validate()?;
            lib.entries.insert(g.id.clone(), g);
        }
        Ok(lib)
    }

    pub fn seeded() -> Self {
        Self::from_guidelines(seed_library()).expect("seed library is valid")
    }

    /// Reads every `*.toml` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, MetapromptError> {
        let io = |e: std::io::Error| MetapromptError::Io(format!("{}: {e}", dir.display()));
        let mut files: Vec<_> = fs::read_dir(dir)
            .map_err(io)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        files.sort();
        let mut guidelines = Vec::with_capacity(files.len());
        for path in files {
            let text = fs::read_to_string(&path).map_err(|e| MetapromptError::Io(format!("{}: {e}", path.display())))?;
            let g: Guideline = toml::from_str(&text)
                .map_err(|e| MetapromptError::Library(format!("{}: {e}", path.display())))?;
            guidelines.push(g);
        }
        Self::from_guidelines(guidelines)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<(), MetapromptError> {
        fs::create_dir_all(dir).map_err(|e| MetapromptError::Io(format!("{}: {e}", dir.display())))?;
        for g in self.entries.values() {
            let path = dir.join(format!("{}.toml", g.id));
            let text = toml::to_string(g).map_err(|e| MetapromptError::Library(e.to_string()))?;
            fs::write(&path, text).map_err(|e| MetapromptError::Io(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }

    pub fn upsert(&mut self, guideline: Guideline) -> Result<UpsertOutcome, MetapromptError> {
        guideline.validate()?;
        Ok(match self.entries.get(&guideline.id) {
            Some(existing) if *existing == guideline => UpsertOutcome::Unchanged,
            Some(_) => {
                self.entries.insert(guideline.id.clone(), guideline);
                UpsertOutcome::Edited
            }
            None => {
                self.entries.insert(guideline.id.clone(), guideline);
                UpsertOutcome::Added
            }
        })
    }

    pub fn retire(&mut self, id: &str) -> Result<(), MetapromptError> {
        let g = self
            .entries
            .get_mut(id)
            .ok_or_else(|| MetapromptError::Library(format!("no guideline `{id}`")))?;
        g.tombstone = true;
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Guideline> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Guidelines that take part in prompts.
    pub fn active(&self) -> Vec<Guideline> {
        self.entries.values().filter(|g| !g.tombstone).cloned().collect()
    }
}
