use b5kdv::{Error, Result};
use serde_json::{json, Value};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (git ", env!("B5KDV_GIT_REV"), ")");

/// Provenance carried by every output file.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub command: String,
    pub version: String,
    pub parameters: Vec<(String, String)>,
}

impl Provenance {
    pub fn new(argv: &[String]) -> Self {
        Provenance { command: argv.join(" "), version: VERSION.to_string(), parameters: Vec::new() }
    }

    pub fn param(&mut self, key: &str, v: impl ToString) {
        self.parameters.push((key.to_string(), v.to_string()));
    }

    pub fn lines(&self) -> Vec<String> {
        let mut out = vec![format!("command: {}", self.command), format!("version: b5kdv {}", self.version)];
        out.extend(self.parameters.iter().map(|(k, v)| format!("{k} = {v}")));
        out
    }

    pub fn json(&self) -> Value {
        let params: serde_json::Map<String, Value> =
            self.parameters.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
        json!({ "command": self.command, "version": self.version, "parameters": params })
    }
}

/// Where machine-readable output goes: a directory when `--out` is given, stdout otherwise.
pub struct Sink {
    dir: Option<PathBuf>,
}

impl Sink {
    pub fn new(dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &dir {
            fs::create_dir_all(d)?;
        }
        Ok(Sink { dir })
    }

    /// Human summary: stdout when files carry the data, stderr when stdout carries the JSON.
    pub fn say(&self, msg: &str) {
        if self.dir.is_some() {
            println!("{msg}");
        } else {
            eprintln!("{msg}");
        }
    }

    pub fn path(&self, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(name))
    }

    /// Writes `<name>` into the output directory, or prints the JSON when there is none.
    pub fn json(&self, name: &str, prov: &Provenance, mut body: Value) -> Result<()> {
        if let Value::Object(m) = &mut body {
            m.insert("provenance".into(), prov.json());
        }
        let text = serde_json::to_string_pretty(&body).map_err(|e| Error::Format(e.to_string()))?;
        match self.path(name) {
            Some(p) => write_text(&p, &text),
            None => match writeln!(std::io::stdout().lock(), "{text}") {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                r => Ok(r?),
            },
        }
    }

    /// Runs `f` on a buffered file in the output directory; skipped without one.
    pub fn file(&self, name: &str, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<Option<PathBuf>> {
        let Some(p) = self.path(name) else { return Ok(None) };
        let mut w = b5kdv::io::create(&p)?;
        f(&mut w)?;
        w.flush()?;
        Ok(Some(p))
    }
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(p)?;
    writeln!(f, "{text}")?;
    Ok(())
}

pub fn complex_pairs(z: &[num_complex::Complex64]) -> Value {
    Value::Array(z.iter().map(|w| json!([w.re, w.im])).collect())
}
