//! The editable prompt files used by every agent. Defaults are compiled in;
//! a prompts directory may override any subset of them by file name.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::template::{PromptTemplate, TemplateError};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("cannot read prompt file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("prompt `{0}` is empty")]
    Empty(String),
}

pub const PLANNER_BASE: &str = "planner_base.txt";
pub const ENTITY_LINKING: &str = "entity_linking.txt";
pub const PLANNER_SYSTEM: &str = "planner_system.txt";
pub const PLANNER_USER: &str = "planner_user.txt";
pub const TRANSLATE_SYSTEM: &str = "translate_system.txt";
pub const TRANSLATE_USER: &str = "translate_user.txt";
pub const SQL_SYSTEM: &str = "sql_system.txt";
pub const SQL_USER_PLAN: &str = "sql_user_plan.txt";
pub const SQL_USER_QUESTION: &str = "sql_user_question.txt";
pub const DISTILL_SYSTEM: &str = "distill_system.txt";
pub const DISTILL_USER: &str = "distill_user.txt";

const DEFAULTS: &[(&str, &str)] = &[
    (PLANNER_BASE, include_str!("../assets/prompts/planner_base.txt")),
    (ENTITY_LINKING, include_str!("../assets/prompts/entity_linking.txt")),
    (PLANNER_SYSTEM, include_str!("../assets/prompts/planner_system.txt")),
    (PLANNER_USER, include_str!("../assets/prompts/planner_user.txt")),
    (TRANSLATE_SYSTEM, include_str!("../assets/prompts/translate_system.txt")),
    (TRANSLATE_USER, include_str!("../assets/prompts/translate_user.txt")),
    (SQL_SYSTEM, include_str!("../assets/prompts/sql_system.txt")),
    (SQL_USER_PLAN, include_str!("../assets/prompts/sql_user_plan.txt")),
    (SQL_USER_QUESTION, include_str!("../assets/prompts/sql_user_question.txt")),
    (DISTILL_SYSTEM, include_str!("../assets/prompts/distill_system.txt")),
    (DISTILL_USER, include_str!("../assets/prompts/distill_user.txt")),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    /// Planner base instructions; rewritten by refinement iterations.
    pub planner_base: String,
    pub entity_linking: String,
    pub planner_system: PromptTemplate,
    pub planner_user: PromptTemplate,
    pub translate_system: PromptTemplate,
    pub translate_user: PromptTemplate,
    pub sql_system: PromptTemplate,
    pub sql_user_plan: PromptTemplate,
    pub sql_user_question: PromptTemplate,
    pub distill_system: PromptTemplate,
    pub distill_user: PromptTemplate,
    /// Raw file texts by file name, as loaded.
    sources: Vec<(String, String)>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::from_lookup(|name| Ok(default_text(name).to_string())).expect("built-in prompts are valid")
    }
}

pub fn default_text(name: &str) -> &'static str {
    DEFAULTS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .unwrap_or_else(|| panic!("no built-in prompt {name}"))
}

impl PromptSet {
    fn from_lookup(mut read: impl FnMut(&str) -> Result<String, PromptError>) -> Result<Self, PromptError> {
        let mut sources = Vec::new();
        let mut lookup = |name: &str| -> Result<String, PromptError> {
            let text = read(name)?;
            sources.push((name.to_string(), text.clone()));
            Ok(text)
        };
        let mut tpl = |name: &str, slots: &[&str]| -> Result<PromptTemplate, PromptError> {
            let text = lookup(name)?;
            Ok(PromptTemplate::parse(name, &text, slots)?)
        };
        let planner_system = tpl(PLANNER_SYSTEM, &["base", "entity_linking", "guidelines", "schema"])?;
        let planner_user = tpl(PLANNER_USER, &["question"])?;
        let translate_system = tpl(TRANSLATE_SYSTEM, &[])?;
        let translate_user = tpl(TRANSLATE_USER, &["question"])?;
        let sql_system = tpl(SQL_SYSTEM, &["schema", "examples"])?;
        let sql_user_plan = tpl(SQL_USER_PLAN, &["plan", "entity_variants"])?;
        let sql_user_question = tpl(SQL_USER_QUESTION, &["question"])?;
        let distill_system = tpl(DISTILL_SYSTEM, &[])?;
        let distill_user = tpl(DISTILL_USER, &["cluster_id", "label", "notes", "cases"])?;
        let planner_base = lookup(PLANNER_BASE)?.trim_end().to_string();
        if planner_base.trim().is_empty() {
            return Err(PromptError::Empty(PLANNER_BASE.into()));
        }
        let entity_linking = lookup(ENTITY_LINKING)?.trim_end().to_string();
        sources.sort();
        Ok(Self {
            planner_base,
            entity_linking,
            planner_system,
            planner_user,
            translate_system,
            translate_user,
            sql_system,
            sql_user_plan,
            sql_user_question,
            distill_system,
            distill_user,
            sources,
        })
    }

    /// Reads prompt files from `dir`, falling back to built-ins for any file
    /// that is absent.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        Self::from_lookup(|name| {
            let path = dir.join(name);
            if path.is_file() {
                fs::read_to_string(&path).map_err(|source| PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })
            } else {
                Ok(default_text(name).to_string())
            }
        })
    }

    /// Writes the prompt files this set was loaded from.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for (name, text) in &self.sources {
            fs::write(dir.join(name), text)?;
        }
        Ok(())
    }

    /// Writes the built-in prompt files into `dir` for editing.
    pub fn write_defaults(dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        for (name, text) in DEFAULTS {
            fs::write(dir.join(name), text)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse() {
        let p = PromptSet::default();
        assert!(p.planner_base.contains("Step 1:"));
        assert!(p.sql_system.slots().any(|s| s == "examples"));
    }

    #[test]
    fn directory_overrides_single_files() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(PLANNER_BASE), "Custom base.\n").unwrap();
        let p = PromptSet::load_dir(dir.path()).unwrap();
        assert_eq!(p.planner_base, "Custom base.");
        assert_eq!(p.sql_system, PromptSet::default().sql_system);
        fs::write(dir.path().join(SQL_SYSTEM), "{bogus}").unwrap();
        assert!(PromptSet::load_dir(dir.path()).is_err());
    }

    #[test]
    fn write_dir_reproduces_the_set() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(PLANNER_BASE), "Custom base.\n").unwrap();
        let p = PromptSet::load_dir(dir.path()).unwrap();
        let out = tempfile::tempdir().unwrap();
        p.write_dir(out.path()).unwrap();
        assert_eq!(PromptSet::load_dir(out.path()).unwrap(), p);
        assert_eq!(fs::read_dir(out.path()).unwrap().count(), 11);
    }
}
