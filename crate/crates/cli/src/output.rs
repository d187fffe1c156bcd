//! Output staging. Files are rendered in memory first, then written to
//! temporaries and renamed into place, so a failed run leaves nothing.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use fbm_drift::io::fmt_f64;
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

pub enum Column {
    Num(Vec<f64>),
    Text(Vec<String>),
}

impl Column {
    fn len(&self) -> usize {
        match self {
            Column::Num(v) => v.len(),
            Column::Text(v) => v.len(),
        }
    }

    fn cell(&self, i: usize) -> String {
        match self {
            Column::Num(v) => fmt_f64(v[i]),
            Column::Text(v) => v[i].clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Column::Num(v) => Value::from(v.clone()),
            Column::Text(v) => Value::from(v.clone()),
        }
    }
}

/// Named columns of equal length.
pub struct Table {
    pub columns: Vec<(String, Column)>,
}

impl Table {
    pub fn new() -> Self {
        Self { columns: Vec::new() }
    }

    pub fn num(mut self, name: impl Into<String>, v: Vec<f64>) -> Self {
        self.columns.push((name.into(), Column::Num(v)));
        self
    }

    pub fn text(mut self, name: impl Into<String>, v: Vec<String>) -> Self {
        self.columns.push((name.into(), Column::Text(v)));
        self
    }

    pub fn to_csv(&self) -> String {
        let header: Vec<&str> = self.columns.iter().map(|(n, _)| n.as_str()).collect();
        let mut out = header.join(",");
        out.push('\n');
        let rows = self.columns.first().map_or(0, |(_, c)| c.len());
        for i in 0..rows {
            let cells: Vec<String> = self.columns.iter().map(|(_, c)| c.cell(i)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut map = Map::new();
        for (n, c) in &self.columns {
            map.insert(n.clone(), c.json());
        }
        let mut s = serde_json::to_string_pretty(&Value::Object(map)).expect("table serializes");
        s.push('\n');
        s
    }
}

/// Files produced by one subcommand, not yet on disk.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, String)>,
}

impl Outputs {
    pub fn table(&mut self, stem: &str, table: &Table, format: Format) {
        match format {
            Format::Csv => self.raw(format!("{stem}.csv"), table.to_csv()),
            Format::Json => self.raw(format!("{stem}.json"), table.to_json()),
        }
    }

    pub fn json(&mut self, name: &str, value: &Value) {
        let mut s = serde_json::to_string_pretty(value).expect("summary serializes");
        s.push('\n');
        self.raw(name.to_string(), s);
    }

    pub fn raw(&mut self, name: String, body: String) {
        self.files.push((name, body));
    }

    /// Writes every file to a temporary in `dir`, then renames them all.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut staged = Vec::new();
        for (name, body) in &self.files {
            let tmp = dir.join(format!(".{name}.tmp"));
            if let Err(e) = fs::write(&tmp, body) {
                for (t, _) in &staged {
                    let _ = fs::remove_file(t);
                }
                let _ = fs::remove_file(&tmp);
                return Err(e).with_context(|| format!("writing {}", tmp.display()));
            }
            staged.push((tmp, dir.join(name)));
        }
        let mut done = Vec::new();
        for (tmp, dest) in staged {
            fs::rename(&tmp, &dest).with_context(|| format!("renaming into {}", dest.display()))?;
            done.push(dest);
        }
        Ok(done)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_json_tables() {
        let t = Table::new().num("t", vec![0.0, 0.5]).text("action", vec!["stop".into(), "continue".into()]);
        assert_eq!(t.to_csv(), "t,action\n0.0000000000000000e0,stop\n5.0000000000000000e-1,continue\n");
        let v: Value = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(v["action"][1], "continue");
    }

    #[test]
    fn commit_leaves_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let mut o = Outputs::default();
        o.raw("a.txt".into(), "x".into());
        o.json("s.json", &serde_json::json!({"k": 1}));
        let written = o.commit(dir.path()).unwrap();
        assert_eq!(written.len(), 2);
        let names: Vec<String> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        assert!(names.iter().all(|n| !n.ends_with(".tmp")));
    }
}
