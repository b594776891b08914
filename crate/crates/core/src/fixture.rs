//! A small bundled corpus (two databases, four splits, mock scripts and
//! configs) that can be written out anywhere for demos and tests.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataset::{build_database, DatasetError};
use crate::metaprompt::{GuidelineLibrary, MetapromptError};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metaprompt(#[from] MetapromptError),
}

pub const DATABASES: &[(&str, &str)] = &[
    ("concerts", include_str!("../fixtures/databases/concerts.sql")),
    ("university", include_str!("../fixtures/databases/university.sql")),
];

const FILES: &[(&str, &str)] = &[
    ("data/dev.jsonl", include_str!("../fixtures/data/dev.jsonl")),
    ("data/heldout.jsonl", include_str!("../fixtures/data/heldout.jsonl")),
    ("data/train.jsonl", include_str!("../fixtures/data/train.jsonl")),
    ("data/test.jsonl", include_str!("../fixtures/data/test.jsonl")),
    ("mock/dev.toml", include_str!("../fixtures/mock/dev.toml")),
    ("mock/heldout.toml", include_str!("../fixtures/mock/heldout.toml")),
    ("config/dev.toml", include_str!("../fixtures/config/dev.toml")),
    ("config/heldout.toml", include_str!("../fixtures/config/heldout.toml")),
    ("config/live.toml", include_str!("../fixtures/config/live.toml")),
];

/// Where things landed after [`materialize`].
#[derive(Debug, Clone)]
pub struct FixtureLayout {
    pub root: PathBuf,
}

impl FixtureLayout {
    pub fn databases(&self) -> PathBuf {
        self.root.join("databases")
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn guidelines(&self) -> PathBuf {
        self.root.join("guidelines")
    }

    pub fn config(&self, name: &str) -> PathBuf {
        self.root.join("config").join(format!("{name}.toml"))
    }

    pub fn mock_script(&self, name: &str) -> PathBuf {
        self.root.join("mock").join(format!("{name}.toml"))
    }
}

/// Writes the corpus under `root`. Databases, splits, scripts and configs
/// are overwritten; an existing guideline library is left alone.
pub fn materialize(root: &Path) -> Result<FixtureLayout, FixtureError> {
    let layout = FixtureLayout { root: root.to_path_buf() };
    for (db_id, script) in DATABASES {
        build_database(&layout.databases(), db_id, script)?;
    }
    for (rel, text) in FILES {
        let path = root.join(rel);
        let io_err = |source| FixtureError::Io { path: path.clone(), source };
        fs::create_dir_all(path.parent().expect("fixture paths have a parent")).map_err(io_err)?;
        fs::write(&path, text).map_err(io_err)?;
    }
    if !layout.guidelines().is_dir() {
        GuidelineLibrary::seeded().save_dir(&layout.guidelines())?;
    }
    Ok(layout)
}
