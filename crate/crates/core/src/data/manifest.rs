//! Dataset manifest (TOML) and the optional download helper.
//!
//! ```toml
//! [datasets.energy]
//! path = "energy.csv"
//! target_column = "last"
//! kind = "regression"
//! expected_rows = 768
//! expected_cols = 8
//! url = "https://example.org/energy.csv"   # optional, used by `fetch`
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_csv, CsvSchema, Dataset, HeaderMode, TargetColumn, TaskKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub path: PathBuf,
    #[serde(default = "default_target")]
    pub target_column: String,
    #[serde(default = "default_kind")]
    pub kind: TaskKind,
    #[serde(default)]
    pub num_classes: Option<usize>,
    pub expected_rows: Option<usize>,
    pub expected_cols: Option<usize>,
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default)]
    pub delimiter: Option<char>,
}

fn default_target() -> String {
    "last".to_string()
}

fn default_kind() -> TaskKind {
    TaskKind::Regression
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub datasets: BTreeMap<String, DatasetEntry>,
    /// Directory that relative dataset paths resolve against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn entry(&self, name: &str) -> Result<&DatasetEntry> {
        self.datasets
            .get(name)
            .ok_or_else(|| Error::Config(format!("dataset {name:?} is not in the manifest")))
    }

    pub fn resolve(&self, entry: &DatasetEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.root.join(&entry.path)
        }
    }

    /// Loads a dataset and checks the recorded shape.
    pub fn load(&self, name: &str) -> Result<Dataset> {
        let entry = self.entry(name)?;
        let path = self.resolve(entry);
        if !path.exists() {
            return Err(Error::DatasetUnavailable {
                name: name.to_string(),
                reason: format!(
                    "{} does not exist (place the CSV there or run `data fetch`)",
                    path.display()
                ),
            });
        }
        let schema = CsvSchema {
            target: TargetColumn::parse(&entry.target_column),
            header: HeaderMode::Auto,
            kind: entry.kind,
            num_classes: entry.num_classes,
            delimiter: entry.delimiter.map_or(b',', |c| c as u8),
        };
        let mut ds = load_csv(&path, &schema)?;
        ds.name = name.to_string();
        if let Some(rows) = entry.expected_rows {
            if ds.n() != rows {
                return Err(Error::DatasetUnavailable {
                    name: name.to_string(),
                    reason: format!("expected {rows} rows, found {}", ds.n()),
                });
            }
        }
        if let Some(cols) = entry.expected_cols {
            if ds.d() != cols {
                return Err(Error::DatasetUnavailable {
                    name: name.to_string(),
                    reason: format!("expected {cols} feature columns, found {}", ds.d()),
                });
            }
        }
        Ok(ds)
    }
}

/// Downloads every manifest entry that has a `url` and no local file yet.
/// Returns the names that were fetched.
pub fn fetch(manifest: &Manifest, only: Option<&str>) -> Result<Vec<String>> {
    let mut fetched = Vec::new();
    for (name, entry) in &manifest.datasets {
        if only.is_some_and(|o| o != name) {
            continue;
        }
        let Some(url) = &entry.url else { continue };
        let dest = manifest.resolve(entry);
        if dest.exists() {
            continue;
        }
        log::info!("fetching {name} from {url}");
        let body = ureq::get(url)
            .call()
            .and_then(|mut r| r.body_mut().read_to_string())
            .map_err(|e| Error::DatasetUnavailable {
                name: name.clone(),
                reason: format!("download from {url} failed: {e}"),
            })?;
        if let Some(parent) = dest.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&dest, body).map_err(|e| Error::io(&dest, e))?;
        // Validate what we just stored; a bad file is removed again.
        if let Err(e) = manifest.load(name) {
            let _ = std::fs::remove_file(&dest);
            return Err(e);
        }
        fetched.push(name.clone());
    }
    Ok(fetched)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_loads_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("toy.csv"), "a,b,y\n1,2,3\n4,5,6\n").unwrap();
        std::fs::write(
            dir.path().join("manifest.toml"),
            r#"
[datasets.toy]
path = "toy.csv"
expected_rows = 2
expected_cols = 2
"#,
        )
        .unwrap();
        let m = Manifest::from_file(dir.path().join("manifest.toml")).unwrap();
        let ds = m.load("toy").unwrap();
        assert_eq!(ds.name, "toy");
        assert_eq!((ds.n(), ds.d()), (2, 2));
    }

    #[test]
    fn shape_mismatch_and_missing_file_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("toy.csv"), "1,2\n3,4\n").unwrap();
        std::fs::write(
            dir.path().join("manifest.toml"),
            r#"
[datasets.toy]
path = "toy.csv"
expected_rows = 5
[datasets.gone]
path = "gone.csv"
"#,
        )
        .unwrap();
        let m = Manifest::from_file(dir.path().join("manifest.toml")).unwrap();
        assert!(matches!(m.load("toy"), Err(Error::DatasetUnavailable { .. })));
        assert!(matches!(m.load("gone"), Err(Error::DatasetUnavailable { .. })));
        assert!(matches!(m.load("nope"), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<Manifest>("[datasets.x]\npath='a'\nbogus=1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }
}
