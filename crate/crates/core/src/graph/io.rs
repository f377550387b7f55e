//! Text readers for coordinate-list kernels, point clouds, node ids and
//! labels. All readers accept an optional header row, blank lines and `#`
//! comments, and report the 1-based line of the first bad record.

use std::fs::File;
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, Trim};

use super::affinity::AffinityMatrix;
use crate::error::{Error, Result};

fn records(path: &Path) -> Result<Vec<(usize, StringRecord)>> {
    let file = File::open(path)?;
    let mut reader = ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(Trim::All)
        .from_reader(file);
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::Parse { path: path.to_path_buf(), line, msg: e.to_string() }
        })?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        out.push((line, rec));
    }
    Ok(out)
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

/// Drops the first record when it does not parse, treating it as a header.
fn skip_header<T>(
    recs: &mut Vec<(usize, StringRecord)>,
    parse: impl Fn(&StringRecord) -> std::result::Result<T, String>,
) {
    if let Some((_, first)) = recs.first() {
        if parse(first).is_err() {
            recs.remove(0);
        }
    }
}

fn parse_triple(rec: &StringRecord) -> std::result::Result<(usize, usize, f64), String> {
    if rec.len() != 3 {
        return Err(format!("expected `i,j,value`, found {} field(s)", rec.len()));
    }
    let i = rec[0].parse::<usize>().map_err(|_| format!("bad row index `{}`", &rec[0]))?;
    let j = rec[1].parse::<usize>().map_err(|_| format!("bad column index `{}`", &rec[1]))?;
    let w = rec[2].parse::<f64>().map_err(|_| format!("bad value `{}`", &rec[2]))?;
    if !w.is_finite() || w < 0.0 {
        return Err(format!("weight {w} is not a finite nonnegative number"));
    }
    Ok((i, j, w))
}

/// Reads a 0-based `i,j,value` coordinate list. The node count is the length
/// of `node_ids` when given, else one more than the largest index seen.
pub fn read_coordinate_list(path: &Path, node_ids: Option<Vec<String>>) -> Result<AffinityMatrix> {
    let mut recs = records(path)?;
    skip_header(&mut recs, parse_triple);
    let mut entries = Vec::with_capacity(recs.len());
    let mut max_index = None;
    for (line, rec) in &recs {
        let (i, j, w) = parse_triple(rec).map_err(|m| parse_err(path, *line, m))?;
        max_index = max_index.max(Some(i.max(j)));
        if let Some(ids) = &node_ids {
            if i >= ids.len() || j >= ids.len() {
                return Err(parse_err(path, *line, format!("index out of range for {} node ids", ids.len())));
            }
        }
        entries.push((i, j, w));
    }
    let n = match &node_ids {
        Some(ids) => ids.len(),
        None => max_index.map_or(0, |m| m + 1),
    };
    AffinityMatrix::new(n, entries, node_ids)
}

fn parse_point(rec: &StringRecord) -> std::result::Result<Vec<f64>, String> {
    rec.iter()
        .map(|f| f.parse::<f64>().map_err(|_| format!("bad coordinate `{f}`")))
        .collect()
}

/// Reads a dense point cloud, one sample per row.
pub fn read_points_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut recs = records(path)?;
    skip_header(&mut recs, parse_point);
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(recs.len());
    for (line, rec) in &recs {
        let p = parse_point(rec).map_err(|m| parse_err(path, *line, m))?;
        if p.iter().any(|x| x.is_nan()) {
            return Err(parse_err(path, *line, "NaN coordinate"));
        }
        if let Some(first) = points.first() {
            if first.len() != p.len() {
                return Err(parse_err(
                    path,
                    *line,
                    format!("row has {} columns, expected {}", p.len(), first.len()),
                ));
            }
        }
        points.push(p);
    }
    Ok(points)
}

/// Reads one node id per line.
pub fn read_node_ids(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

/// Labels as read from disk, optionally keyed by node id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelFile {
    pub ids: Option<Vec<String>>,
    pub labels: Vec<u8>,
}

fn parse_label(s: &str) -> std::result::Result<u8, String> {
    match s {
        "0" | "false" => Ok(0),
        "1" | "true" => Ok(1),
        _ => Err(format!("label `{s}` is not 0 or 1")),
    }
}

/// Reads labels, either `label` or `node_id,label` per line.
pub fn read_labels(path: &Path) -> Result<LabelFile> {
    let mut recs = records(path)?;
    let keyed = recs.iter().find(|(_, r)| !r.is_empty()).is_some_and(|(_, r)| r.len() == 2);
    let parse = |rec: &StringRecord| -> std::result::Result<(Option<String>, u8), String> {
        match (keyed, rec.len()) {
            (false, 1) => Ok((None, parse_label(&rec[0])?)),
            (true, 2) => Ok((Some(rec[0].to_string()), parse_label(&rec[1])?)),
            (_, k) => Err(format!("unexpected field count {k}")),
        }
    };
    skip_header(&mut recs, parse);
    let mut ids = keyed.then(Vec::new);
    let mut labels = Vec::with_capacity(recs.len());
    for (line, rec) in &recs {
        let (id, z) = parse(rec).map_err(|m| parse_err(path, *line, m))?;
        if let (Some(ids), Some(id)) = (ids.as_mut(), id) {
            ids.push(id);
        }
        labels.push(z);
    }
    Ok(LabelFile { ids, labels })
}
