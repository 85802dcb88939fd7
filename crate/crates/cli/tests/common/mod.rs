#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pgt_core::grid::write_lgrid;
use pgt_core::LabelGrid;
use serde_json::Value;

pub fn pgt() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pgt"))
}

pub fn run(args: &[&str]) -> Output {
    pgt().args(args).output().expect("spawn pgt")
}

pub fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}); stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A row vector grid from 0/1-style label values.
pub fn line(v: &[u16]) -> LabelGrid {
    LabelGrid::new(vec![1, v.len()], v.to_vec()).unwrap()
}

/// `n` voxels with label 1 on `ranges`.
pub fn ranges(n: usize, on: &[std::ops::Range<usize>]) -> LabelGrid {
    let mut v = vec![0u16; n];
    for r in on {
        v[r.clone()].fill(1);
    }
    line(&v)
}

/// Builds a dataset directory: grids plus `manifest.csv`.
pub struct Fixture {
    pub dir: tempfile::TempDir,
    rows: Vec<String>,
}

impl Fixture {
    pub fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
            rows: vec!["item_id,rater_id,repeat_index,role,path,model_id".into()],
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn grid(&self, name: &str, g: &LabelGrid) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, write_lgrid(g)).unwrap();
        p
    }

    pub fn annotation(&mut self, item: &str, rater: &str, repeat: u32, g: &LabelGrid) -> &mut Self {
        let name = format!("{item}_{rater}_{repeat}.lgrid");
        self.grid(&name, g);
        self.rows
            .push(format!("{item},{rater},{repeat},annotation,{name},"));
        self
    }

    pub fn model(&mut self, item: &str, model: &str, g: &LabelGrid) -> &mut Self {
        let name = format!("{item}_model_{model}.lgrid");
        self.grid(&name, g);
        self.rows.push(format!("{item},,,model,{name},{model}"));
        self
    }

    pub fn raw_row(&mut self, row: &str) -> &mut Self {
        self.rows.push(row.into());
        self
    }

    pub fn manifest(&self) -> PathBuf {
        let p = self.path("manifest.csv");
        std::fs::write(&p, self.rows.join("\n") + "\n").unwrap();
        p
    }
}

/// Structural check against the subset of JSON Schema used by the published
/// report schema: type, required, properties, items, enum, minimum, $ref.
pub fn validate(schema: &Value, root: &Value, doc: &Value, at: &str) -> Result<(), String> {
    if let Some(r) = schema.get("$ref").and_then(Value::as_str) {
        let name = r
            .strip_prefix("#/$defs/")
            .ok_or(format!("unsupported ref {r}"))?;
        return validate(&root["$defs"][name], root, doc, at);
    }
    if let Some(t) = schema.get("type") {
        let types: Vec<&str> = match t {
            Value::String(s) => vec![s.as_str()],
            Value::Array(a) => a.iter().filter_map(Value::as_str).collect(),
            _ => return Err(format!("{at}: bad type in schema")),
        };
        let ok = types.iter().any(|t| match *t {
            "object" => doc.is_object(),
            "array" => doc.is_array(),
            "string" => doc.is_string(),
            "number" => doc.is_number(),
            "integer" => doc.is_u64() || doc.is_i64(),
            "boolean" => doc.is_boolean(),
            "null" => doc.is_null(),
            _ => false,
        });
        if !ok {
            return Err(format!("{at}: expected {types:?}, got {doc}"));
        }
    }
    if let Some(opts) = schema.get("enum").and_then(Value::as_array) {
        if !opts.contains(doc) {
            return Err(format!("{at}: {doc} not in {opts:?}"));
        }
    }
    if let (Some(min), Some(x)) = (schema.get("minimum").and_then(Value::as_f64), doc.as_f64()) {
        if x < min {
            return Err(format!("{at}: {x} below minimum {min}"));
        }
    }
    if let Some(req) = schema.get("required").and_then(Value::as_array) {
        for key in req.iter().filter_map(Value::as_str) {
            if doc.get(key).is_none() {
                return Err(format!("{at}: missing `{key}`"));
            }
        }
    }
    if let Some(props) = schema.get("properties").and_then(Value::as_object) {
        for (key, sub) in props {
            if let Some(v) = doc.get(key) {
                validate(sub, root, v, &format!("{at}.{key}"))?;
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), doc.as_array()) {
        for (i, v) in arr.iter().enumerate() {
            validate(items, root, v, &format!("{at}[{i}]"))?;
        }
    }
    Ok(())
}

pub fn schema() -> Value {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/report.schema.json");
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}
