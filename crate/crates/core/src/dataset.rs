//! Line-oriented graph dataset files.
//!
//! ```text
//! ngcl-graphs 1
//! nodes 20
//! features spike_rate hfo_rate sample_entropy pfd kfd
//! graphs 2
//! graph 0 label 1 edges 3
//! <src> <dst> <weight>      one line per nonzero adjacency entry
//! features
//! <one row of feature values per node>
//! end
//! ```
//!
//! An edge line `s d w` stores `adjacency[(d, s)] = w`. Values are written in
//! shortest round-trip notation, so save/load is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::biomarkers::NodeFeatureMatrix;
use crate::error::{Error, Result};
use crate::graph::BrainGraph;
use crate::signalio::Label;

const MAGIC: &str = "ngcl-graphs 1";

pub fn to_text(graphs: &[BrainGraph]) -> Result<String> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::Degenerate("cannot write an empty dataset".into()))?;
    let n = first.n_nodes();
    let names = &first.features.feature_names;
    let mut out = format!(
        "{MAGIC}\nnodes {n}\nfeatures {}\ngraphs {}\n",
        names.join(" "),
        graphs.len()
    );
    for (k, g) in graphs.iter().enumerate() {
        if g.n_nodes() != n || &g.features.feature_names != names {
            return Err(Error::Shape(format!("graph {k} does not match the dataset header")));
        }
        let a = &g.adjacency;
        let edges: Vec<(usize, usize)> = (0..n)
            .flat_map(|src| (0..n).map(move |dst| (src, dst)))
            .filter(|&(src, dst)| a[(dst, src)] != 0.0)
            .collect();
        let _ = writeln!(out, "graph {k} label {} edges {}", g.label.as_f64(), edges.len());
        for (src, dst) in edges {
            let _ = writeln!(out, "{src} {dst} {}", a[(dst, src)]);
        }
        out.push_str("features\n");
        for row in g.features.values.row_iter() {
            let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&fields.join(" "));
            out.push('\n');
        }
    }
    out.push_str("end\n");
    Ok(out)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    origin: &'a Path,
    last: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.origin.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok((i + 1, l))
            }
            None => Err(self.err(self.last + 1, format!("unexpected end of file, expected {what}"))),
        }
    }

    /// Next line as `keyword <value>`.
    fn field(&mut self, keyword: &str) -> Result<(usize, &'a str)> {
        let (n, l) = self.next(keyword)?;
        match l.strip_prefix(keyword).and_then(|r| r.strip_prefix(' ')) {
            Some(rest) => Ok((n, rest.trim())),
            None => Err(self.err(n, format!("expected `{keyword} …`"))),
        }
    }

    fn number<T: std::str::FromStr>(&self, n: usize, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(n, format!("bad number {s:?}")))
    }
}

pub fn parse(text: &str, origin: &Path) -> Result<Vec<BrainGraph>> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        origin,
        last: 0,
    };
    let (n0, magic) = lines.next("header")?;
    if magic.trim() != MAGIC {
        return Err(lines.err(n0, format!("unsupported dataset header {magic:?}")));
    }
    let (nl, nodes) = lines.field("nodes")?;
    let nodes: usize = lines.number(nl, nodes)?;
    let (_, names) = lines.field("features")?;
    let names: Vec<String> = names.split_whitespace().map(str::to_string).collect();
    let f = names.len();
    let (gl, count) = lines.field("graphs")?;
    let count: usize = lines.number(gl, count)?;
    let mut graphs = Vec::with_capacity(count);
    for k in 0..count {
        let (hn, header) = lines.field("graph")?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let (label, edges) = match parts[..] {
            [idx, "label", label, "edges", edges] if idx == k.to_string() => (label, edges),
            _ => return Err(lines.err(hn, format!("malformed header for graph {k}"))),
        };
        let label = Label::from_u8(lines.number(hn, label)?).ok_or_else(|| lines.err(hn, "label must be 0 or 1"))?;
        let edges: usize = lines.number(hn, edges)?;
        let mut a = DMatrix::zeros(nodes, nodes);
        for _ in 0..edges {
            let (en, l) = lines.next("edge")?;
            let p: Vec<&str> = l.split_whitespace().collect();
            let [src, dst, w] = p[..] else {
                return Err(lines.err(en, "edge needs `src dst weight`"));
            };
            let (src, dst): (usize, usize) = (lines.number(en, src)?, lines.number(en, dst)?);
            if src >= nodes || dst >= nodes {
                return Err(lines.err(en, format!("edge {src}->{dst} outside {nodes} nodes")));
            }
            a[(dst, src)] = lines.number(en, w)?;
        }
        let (fnum, marker) = lines.next("features")?;
        if marker.trim() != "features" {
            return Err(lines.err(fnum, "expected `features`"));
        }
        let mut values = Vec::with_capacity(nodes * f);
        for _ in 0..nodes {
            let (rn, row) = lines.next("feature row")?;
            let before = values.len();
            for v in row.split_whitespace() {
                values.push(lines.number(rn, v)?);
            }
            if values.len() - before != f {
                return Err(lines.err(rn, format!("expected {f} feature values")));
            }
        }
        let feats = NodeFeatureMatrix::new(DMatrix::from_row_slice(nodes, f, &values), names.clone())
            .map_err(|e| lines.err(fnum, e.to_string()))?;
        let g = BrainGraph::new(a, feats, label).map_err(|e| lines.err(hn, e.to_string()))?;
        graphs.push(g);
    }
    let (en, end) = lines.next("end")?;
    if end.trim() != "end" {
        return Err(lines.err(en, "expected `end`"));
    }
    Ok(graphs)
}

pub fn save(graphs: &[BrainGraph], path: &Path) -> Result<()> {
    fs::write(path, to_text(graphs)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<BrainGraph>> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, path)
}
