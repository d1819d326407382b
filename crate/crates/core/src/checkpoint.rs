//! Versioned text checkpoints of named tensors.
//!
//! ```text
//! ngcl-checkpoint 1
//! kind encoder
//! meta hidden 256
//! tensor node_in.weight 10 256
//! <one line per row, space separated>
//! end
//! ```
//!
//! Values are written in Rust's shortest round-trip notation, so a
//! save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const MAGIC: &str = "ngcl-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, DMatrix<f64>)>,
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            meta: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: DMatrix<f64>) {
        self.tensors.push((name.into(), t));
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::Degenerate(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )))
        }
    }

    pub fn meta<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::Degenerate(format!("checkpoint lacks meta field {key}")))?;
        raw.parse()
            .map_err(|_| Error::Degenerate(format!("checkpoint meta {key}={raw} is malformed")))
    }

    pub fn tensor(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Degenerate(format!("checkpoint lacks tensor {name}")))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {VERSION}\nkind {}\n", self.kind);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, t) in &self.tensors {
            let _ = writeln!(out, "tensor {name} {} {}", t.nrows(), t.ncols());
            for row in t.row_iter() {
                let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                out.push_str(&fields.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l == format!("{MAGIC} {VERSION}") => {}
            Some((n, l)) => return Err(err(n, format!("unsupported checkpoint header {l:?}"))),
            None => return Err(err(1, "empty checkpoint".into())),
        }
        let kind = match lines.next() {
            Some((_, l)) if l.starts_with("kind ") => l[5..].trim().to_string(),
            Some((n, _)) => return Err(err(n, "missing kind line".into())),
            None => return Err(err(2, "missing kind line".into())),
        };
        let mut ck = Checkpoint::new(&kind);
        while let Some((n, line)) = lines.next() {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("meta") => {
                    let key = parts.next().ok_or_else(|| err(n, "meta without key".into()))?;
                    let value = parts.collect::<Vec<_>>().join(" ");
                    ck.meta.push((key.to_string(), value));
                }
                Some("tensor") => {
                    let name = parts.next().ok_or_else(|| err(n, "tensor without name".into()))?;
                    let dims: Vec<usize> = parts
                        .map(|p| p.parse().map_err(|_| err(n, format!("bad dimension {p:?}"))))
                        .collect::<Result<_>>()?;
                    let [rows, cols] = dims[..] else {
                        return Err(err(n, "tensor needs two dimensions".into()));
                    };
                    let mut values = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        let (rn, row) = lines.next().ok_or_else(|| err(n, format!("tensor {name} truncated")))?;
                        let before = values.len();
                        for f in row.split_whitespace() {
                            values.push(f.parse::<f64>().map_err(|_| err(rn, format!("bad value {f:?}")))?);
                        }
                        if values.len() - before != cols {
                            return Err(err(rn, format!("expected {cols} values in tensor {name}")));
                        }
                    }
                    ck.tensors
                        .push((name.to_string(), DMatrix::from_row_slice(rows, cols, &values)));
                }
                Some("end") => return Ok(ck),
                Some(other) => return Err(err(n, format!("unexpected record {other:?}"))),
                None => {}
            }
        }
        Err(err(text.lines().count(), "missing end marker".into()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}
