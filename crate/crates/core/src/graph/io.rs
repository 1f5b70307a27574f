//! Plain-text bundle directory: `meta.json`, `edges.tsv`, `features.tsv`,
//! `labels.tsv` and an optional `splits.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sparse::{Adjacency, SparseMatrix};
use super::{validate_split, GraphBundle, Split};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    name: String,
    num_nodes: usize,
    num_features: usize,
    num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    num_edges: Option<usize>,
}

fn bundle_err(file: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Bundle {
        file: file.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-empty lines with their 1-based line numbers, split on tabs.
fn tsv_rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.split('\t').map(str::trim).collect()))
}

fn parse_index(file: &Path, line: usize, field: &str, bound: usize, what: &str) -> Result<usize> {
    let value: usize = field
        .parse()
        .map_err(|_| bundle_err(file, line, format!("invalid {what} `{field}`")))?;
    if value >= bound {
        return Err(bundle_err(
            file,
            line,
            format!("{what} {value} out of range (limit {bound})"),
        ));
    }
    Ok(value)
}

fn expect_columns(file: &Path, line: usize, cols: &[&str], want: usize) -> Result<()> {
    if cols.len() != want {
        return Err(bundle_err(
            file,
            line,
            format!("expected {want} tab-separated columns, found {}", cols.len()),
        ));
    }
    Ok(())
}

/// Loads and validates a bundle directory.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<GraphBundle> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let meta: Meta = serde_json::from_str(&read(&meta_path)?).map_err(|e| {
        let line = e.line();
        bundle_err(&meta_path, line, e.to_string())
    })?;
    let n = meta.num_nodes;

    let edges_path = dir.join("edges.tsv");
    let mut edges = Vec::new();
    for (line, cols) in tsv_rows(&read(&edges_path)?) {
        expect_columns(&edges_path, line, &cols, 2)?;
        let a = parse_index(&edges_path, line, cols[0], n, "node")?;
        let b = parse_index(&edges_path, line, cols[1], n, "node")?;
        if a == b {
            return Err(bundle_err(&edges_path, line, format!("self-loop on node {a}")));
        }
        edges.push((a, b));
    }
    let adjacency = Adjacency::from_edges(n, &edges)?;

    let feat_path = dir.join("features.tsv");
    let mut triplets = Vec::new();
    let mut seen = std::collections::HashMap::new();
    for (line, cols) in tsv_rows(&read(&feat_path)?) {
        expect_columns(&feat_path, line, &cols, 3)?;
        let node = parse_index(&feat_path, line, cols[0], n, "node")?;
        let dim = parse_index(&feat_path, line, cols[1], meta.num_features, "dimension")?;
        let value: f64 = cols[2]
            .parse()
            .map_err(|_| bundle_err(&feat_path, line, format!("invalid value `{}`", cols[2])))?;
        if !value.is_finite() {
            return Err(bundle_err(&feat_path, line, "non-finite feature value"));
        }
        if let Some(first) = seen.insert((node, dim), line) {
            return Err(bundle_err(
                &feat_path,
                line,
                format!("duplicate entry for node {node} dim {dim} (first on line {first})"),
            ));
        }
        triplets.push((node, dim, value));
    }
    let features = SparseMatrix::from_triplets(n, meta.num_features, &triplets)?;

    let labels_path = dir.join("labels.tsv");
    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut label_line = vec![0usize; n];
    for (line, cols) in tsv_rows(&read(&labels_path)?) {
        expect_columns(&labels_path, line, &cols, 2)?;
        let node = parse_index(&labels_path, line, cols[0], n, "node")?;
        let class = parse_index(&labels_path, line, cols[1], meta.num_classes, "class")?;
        if labels[node].is_some() {
            return Err(bundle_err(
                &labels_path,
                line,
                format!(
                    "duplicate label for node {node} (first on line {})",
                    label_line[node]
                ),
            ));
        }
        labels[node] = Some(class);
        label_line[node] = line;
    }

    let split_path = dir.join("splits.json");
    let split = if split_path.exists() {
        let text = read(&split_path)?;
        let split: Split =
            serde_json::from_str(&text).map_err(|e| bundle_err(&split_path, e.line(), e.to_string()))?;
        validate_split(&split, n, &labels).map_err(|e| {
            let line = locate_split_error(&text, &e.to_string());
            bundle_err(&split_path, line, e.to_string())
        })?;
        split
    } else {
        Split::default()
    };

    let bundle = GraphBundle {
        name: meta.name,
        num_classes: meta.num_classes,
        features,
        adjacency,
        labels,
        split,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Best-effort line of the list named in a split error message.
fn locate_split_error(text: &str, message: &str) -> usize {
    let key = ["train", "val", "test"]
        .into_iter()
        .find(|k| message.contains(&format!("({k})")) || message.starts_with(&format!("invalid split: {k}")));
    let Some(key) = key else { return 1 };
    let needle = format!("\"{key}\"");
    text.lines()
        .position(|l| l.contains(&needle))
        .map_or(1, |p| p + 1)
}

/// Writes a bundle in canonical order: edges sorted with `src < dst`,
/// features sorted by `(node, dim)`, labels by node.
pub fn save_bundle(bundle: &GraphBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| -> Result<()> {
        let path: PathBuf = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(path, e))
    };

    let meta = Meta {
        name: bundle.name.clone(),
        num_nodes: bundle.num_nodes(),
        num_features: bundle.num_features(),
        num_classes: bundle.num_classes,
        num_edges: Some(bundle.adjacency.num_undirected_edges()),
    };
    let mut meta_json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    meta_json.push('\n');
    write("meta.json", meta_json)?;

    let mut edges = String::new();
    for (i, j) in bundle.adjacency.undirected_edges() {
        writeln!(edges, "{i}\t{j}").unwrap();
    }
    write("edges.tsv", edges)?;

    let mut features = String::new();
    for r in 0..bundle.num_nodes() {
        let (cols, vals) = bundle.features.row(r);
        for (c, v) in cols.iter().zip(vals) {
            writeln!(features, "{r}\t{c}\t{v:?}").unwrap();
        }
    }
    write("features.tsv", features)?;

    let mut labels = String::new();
    for (i, l) in bundle.labels.iter().enumerate() {
        if let Some(c) = l {
            writeln!(labels, "{i}\t{c}").unwrap();
        }
    }
    write("labels.tsv", labels)?;

    let mut split = serde_json::to_string(&bundle.split).expect("split serializes");
    split.push('\n');
    write("splits.json", split)
}
