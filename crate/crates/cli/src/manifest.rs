//! Dataset manifests: a CSV listing every LGRID file with its role.
//!
//! ```text
//! item_id,rater_id,repeat_index,role,path,model_id
//! scan1,alice,0,annotation,scan1/alice0.lgrid,
//! scan1,,,model,out/unet/scan1.lgrid,unet
//! ```
//!
//! Paths are resolved relative to the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use pgt_core::grid::read_lgrid;
use pgt_core::{LabelGrid, RaterSet};

pub const HEADER: [&str; 6] = [
    "item_id",
    "rater_id",
    "repeat_index",
    "role",
    "path",
    "model_id",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Annotation,
    Model,
    Truth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    /// 1-based line in the file.
    pub line: u64,
    pub item_id: String,
    pub rater_id: String,
    pub repeat_index: Option<u32>,
    pub role: Role,
    pub path: PathBuf,
    pub model_id: String,
}

/// Every problem found in a manifest, reported together.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestError {
    pub path: PathBuf,
    pub problems: Vec<String>,
}

impl fmt::Display for ManifestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "manifest {}: {} problem(s)",
            self.path.display(),
            self.problems.len()
        )?;
        for p in &self.problems {
            write!(f, "\n  {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ManifestError {}

pub struct Dataset {
    pub name: String,
    pub raters: RaterSet,
    /// model id → item id → output grid.
    pub models: BTreeMap<String, BTreeMap<String, LabelGrid>>,
}

fn parse_rows(path: &Path, text: &str, problems: &mut Vec<String>) -> Vec<Row> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    match reader.headers() {
        Ok(h) if h.iter().eq(HEADER) => {}
        Ok(h) => {
            problems.push(format!(
                "line 1: header must be `{}`, got `{}`",
                HEADER.join(","),
                h.iter().collect::<Vec<_>>().join(",")
            ));
            return vec![];
        }
        Err(e) => {
            problems.push(format!("line 1: {e}"));
            return vec![];
        }
    }
    let base = path.parent().unwrap_or(Path::new(""));
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                problems.push(e.to_string());
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("").to_string();
        let mut bad = |msg: String| problems.push(format!("line {line}: {msg}"));
        let role = match field(3).as_str() {
            "annotation" => Role::Annotation,
            "model" => Role::Model,
            "truth" => Role::Truth,
            other => {
                bad(format!(
                    "role must be annotation, model or truth, got `{other}`"
                ));
                continue;
            }
        };
        let repeat_index = match field(2).as_str() {
            "" => None,
            s => match s.parse::<u32>() {
                Ok(k) => Some(k),
                Err(_) => {
                    bad(format!("repeat_index `{s}` is not a non-negative integer"));
                    continue;
                }
            },
        };
        let row = Row {
            line,
            item_id: field(0),
            rater_id: field(1),
            repeat_index,
            role,
            path: base.join(field(4)),
            model_id: field(5),
        };
        if row.item_id.is_empty() {
            bad("item_id is empty".into());
            continue;
        }
        if field(4).is_empty() {
            bad("path is empty".into());
            continue;
        }
        match role {
            Role::Annotation if row.rater_id.is_empty() || row.repeat_index.is_none() => {
                bad("annotation rows need rater_id and repeat_index".into());
                continue;
            }
            Role::Model if row.model_id.is_empty() => {
                bad("model rows need model_id".into());
                continue;
            }
            _ => {}
        }
        rows.push(row);
    }
    rows
}

/// Reads the manifest and every grid it references. Fails with the full
/// list of offending rows.
pub fn load(path: &Path) -> Result<Dataset, ManifestError> {
    let mut problems = Vec::new();
    let fail = |problems: Vec<String>| ManifestError {
        path: path.to_path_buf(),
        problems,
    };
    let text = std::fs::read_to_string(path).map_err(|e| fail(vec![e.to_string()]))?;
    let rows = parse_rows(path, &text, &mut problems);

    let mut seen_annotations = BTreeMap::new();
    let mut seen_models = BTreeMap::new();
    let mut truths = BTreeSet::new();
    let mut duplicates = BTreeSet::new();
    for row in &rows {
        let dup = match row.role {
            Role::Annotation => seen_annotations
                .insert(
                    (row.item_id.clone(), row.rater_id.clone(), row.repeat_index),
                    row.line,
                )
                .map(|l| format!("duplicates annotation on line {l}")),
            Role::Model => seen_models
                .insert((row.model_id.clone(), row.item_id.clone()), row.line)
                .map(|l| format!("duplicates model output on line {l}")),
            Role::Truth => (!truths.insert(row.item_id.clone()))
                .then(|| format!("second truth row for item `{}`", row.item_id)),
        };
        if let Some(msg) = dup {
            problems.push(format!("line {}: {msg}", row.line));
            duplicates.insert(row.line);
        }
    }

    let mut raters = RaterSet::new();
    let mut models: BTreeMap<String, BTreeMap<String, LabelGrid>> = BTreeMap::new();
    for row in rows.iter().filter(|r| !duplicates.contains(&r.line)) {
        let grid = match std::fs::read(&row.path) {
            Err(e) => {
                problems.push(format!("line {}: {}: {e}", row.line, row.path.display()));
                continue;
            }
            Ok(bytes) => match read_lgrid(&bytes) {
                Ok(g) => g,
                Err(e) => {
                    problems.push(format!("line {}: {}: {e}", row.line, row.path.display()));
                    continue;
                }
            },
        };
        let placed = match row.role {
            Role::Annotation => raters
                .insert(
                    &row.item_id,
                    &row.rater_id,
                    row.repeat_index.unwrap_or(0),
                    grid,
                )
                .map_err(|e| e.to_string()),
            Role::Truth => raters
                .set_truth(&row.item_id, grid)
                .map_err(|e| e.to_string()),
            Role::Model => {
                models
                    .entry(row.model_id.clone())
                    .or_default()
                    .insert(row.item_id.clone(), grid);
                Ok(())
            }
        };
        if let Err(e) = placed {
            problems.push(format!("line {}: {e}", row.line));
        }
    }
    if !problems.is_empty() {
        return Err(fail(problems));
    }
    Ok(Dataset {
        name: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        raters,
        models,
    })
}
