use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::Failure;

/// Run metadata written into every output file.
#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub scenario: String,
    pub scenario_hash: String,
    pub seed: u64,
}

impl Meta {
    pub fn new(scenario: &cap_trade::Scenario, seed: u64) -> Self {
        Self {
            tool: "cap-trade",
            version: env!("CARGO_PKG_VERSION"),
            scenario: scenario.name.clone(),
            scenario_hash: scenario.hash.clone(),
            seed,
        }
    }

    fn csv_preamble(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "# tool={} version={}", self.tool, self.version)?;
        writeln!(out, "# scenario={} scenario_hash={}", self.scenario, self.scenario_hash)?;
        writeln!(out, "# seed={}", self.seed)
    }
}

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: PathBuf) -> Result<Self, Failure> {
        fs::create_dir_all(&root).map_err(|e| Failure::Io(format!("{}: {e}", root.display())))?;
        Ok(Self { root })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn create_file(&self, name: &str) -> Result<BufWriter<File>, Failure> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| io_failure(&path, e))?;
        Ok(BufWriter::new(file))
    }

    /// Writes `{"meta": .., ...body}` as pretty JSON.
    pub fn json(&self, name: &str, meta: &Meta, body: Value) -> Result<PathBuf, Failure> {
        let mut doc = json!({ "meta": meta });
        if let (Some(doc), Value::Object(body)) = (doc.as_object_mut(), body) {
            doc.extend(body);
        }
        let mut w = self.create_file(name)?;
        serde_json::to_writer_pretty(&mut w, &doc).map_err(|e| Failure::Io(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(self.path(name))
    }

    /// Writes a CSV with the metadata as leading `#` comment lines; `body`
    /// writes the header and rows.
    pub fn csv(
        &self,
        name: &str,
        meta: &Meta,
        body: impl FnOnce(&mut BufWriter<File>) -> Result<(), Failure>,
    ) -> Result<PathBuf, Failure> {
        let mut w = self.create_file(name)?;
        meta.csv_preamble(&mut w)?;
        body(&mut w)?;
        w.flush()?;
        Ok(self.path(name))
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

/// Scientific notation with 16 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.15e}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}
