use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::csr::dense_components;
use super::sinkhorn::{ScaledMatrix, ScalingResult};
use crate::binio::*;
use crate::error::{Error, Result};
use crate::{json, linalg};

const MAGIC: &[u8; 8] = b"GWOP0001";

/// One connected component of `W` with its dense principal submatrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    /// Retained node indices, ascending.
    pub nodes: Vec<usize>,
    /// Row-major `nodes.len() x nodes.len()` block of `W`.
    #[serde(serialize_with = "json::reals")]
    pub block: Vec<f64>,
}

impl Component {
    pub fn size(&self) -> usize {
        self.nodes.len()
    }
}

/// The symmetric, stochastic, PSD diffusion operator `W`, stored as dense
/// per-component blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OperatorRepr")]
pub struct DiffusionOperator {
    n: usize,
    node_ids: Vec<String>,
    /// Index of each retained node in the input kernel.
    original_index: Vec<usize>,
    components: Vec<Component>,
    scaling: ScalingResult,
    #[serde(skip_serializing)]
    location: Vec<(usize, usize)>,
}

#[derive(Deserialize)]
struct OperatorRepr {
    n: usize,
    node_ids: Vec<String>,
    original_index: Vec<usize>,
    components: Vec<Component>,
    scaling: ScalingResult,
}

impl TryFrom<OperatorRepr> for DiffusionOperator {
    type Error = Error;

    fn try_from(r: OperatorRepr) -> Result<Self> {
        Self::from_parts(r.node_ids, r.original_index, r.components, r.scaling)
            .and_then(|op| if op.n == r.n { Ok(op) } else { Err(Error::invalid("node count mismatch")) })
    }
}

/// Squares the scaled kernel, `W = W~^2`, and splits the result into the
/// connected components of its exact zero pattern.
pub fn square_psd(scaled: &ScaledMatrix) -> Result<DiffusionOperator> {
    let csr = &scaled.csr;
    let mut components = Vec::new();
    for outer in csr.components() {
        let m = outer.len();
        let mut local = std::collections::HashMap::with_capacity(m);
        for (k, &i) in outer.iter().enumerate() {
            local.insert(i, k);
        }
        let mut block = vec![0.0; m * m];
        for (a, &i) in outer.iter().enumerate() {
            let (cols, vals) = csr.row(i);
            for (&j, &w) in cols.iter().zip(vals) {
                block[a * m + local[&j]] = w;
            }
        }
        let squared = linalg::symmetric_square(&block, m)?;
        for inner in dense_components(&squared, m) {
            let k = inner.len();
            let mut sub = vec![0.0; k * k];
            for (a, &p) in inner.iter().enumerate() {
                for (b, &q) in inner.iter().enumerate() {
                    sub[a * k + b] = squared[p * m + q];
                }
            }
            components.push(Component { nodes: inner.iter().map(|&p| outer[p]).collect(), block: sub });
        }
    }
    components.sort_by_key(|c| c.nodes[0]);
    DiffusionOperator::from_parts(
        scaled.node_ids.clone(),
        scaled.original_index.clone(),
        components,
        scaled.scaling.clone(),
    )
}

impl DiffusionOperator {
    /// Assembles an operator from its parts, checking that the components
    /// partition the nodes.
    pub fn from_parts(
        node_ids: Vec<String>,
        original_index: Vec<usize>,
        components: Vec<Component>,
        scaling: ScalingResult,
    ) -> Result<Self> {
        let n = node_ids.len();
        if original_index.len() != n {
            return Err(Error::invalid("original index list does not match node count"));
        }
        let mut location = vec![(usize::MAX, 0); n];
        for (c, comp) in components.iter().enumerate() {
            let m = comp.nodes.len();
            if m == 0 || comp.block.len() != m * m {
                return Err(Error::invalid(format!("component {c} has a malformed block")));
            }
            for (k, &i) in comp.nodes.iter().enumerate() {
                if i >= n || location[i].0 != usize::MAX {
                    return Err(Error::invalid(format!("node {i} is out of range or in two components")));
                }
                location[i] = (c, k);
            }
        }
        if location.iter().any(|l| l.0 == usize::MAX) {
            return Err(Error::invalid("components do not cover every node"));
        }
        Ok(Self { n, node_ids, original_index, components, scaling, location })
    }

    /// Builds an operator straight from a dense matrix that is assumed to
    /// already be symmetric, stochastic and PSD. Mainly for tests.
    pub fn from_dense(n: usize, w: &[f64]) -> Result<Self> {
        if w.len() != n * n {
            return Err(Error::invalid("dense buffer has the wrong size"));
        }
        let components = dense_components(w, n)
            .into_iter()
            .map(|nodes| {
                let block = nodes.iter().flat_map(|&p| nodes.iter().map(move |&q| w[p * n + q])).collect();
                Component { nodes, block }
            })
            .collect();
        let scaling = ScalingResult { d: vec![1.0; n], iterations: 0, max_row_err: 0.0, pruned_nodes: Vec::new() };
        Self::from_parts((0..n).map(|i| i.to_string()).collect(), (0..n).collect(), components, scaling)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn original_index(&self) -> &[usize] {
        &self.original_index
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn scaling(&self) -> &ScalingResult {
        &self.scaling
    }

    /// `(component, position within component)` of retained node `i`.
    pub fn locate(&self, i: usize) -> (usize, usize) {
        self.location[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (ci, a) = self.location[i];
        let (cj, b) = self.location[j];
        if ci != cj {
            return 0.0;
        }
        let c = &self.components[ci];
        c.block[a * c.size() + b]
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for c in &self.components {
            let m = c.size();
            for (a, &i) in c.nodes.iter().enumerate() {
                for (b, &j) in c.nodes.iter().enumerate() {
                    out[i * n + j] = c.block[a * m + b];
                }
            }
        }
        out
    }

    /// Largest `|W_ij - W_ji|` and largest `|row sum - 1|`.
    pub fn invariant_errors(&self) -> (f64, f64) {
        let mut sym = 0.0f64;
        let mut stoch = 0.0f64;
        for c in &self.components {
            let m = c.size();
            for a in 0..m {
                let row = &c.block[a * m..(a + 1) * m];
                stoch = stoch.max((row.iter().sum::<f64>() - 1.0).abs());
                for b in (a + 1)..m {
                    sym = sym.max((c.block[a * m + b] - c.block[b * m + a]).abs());
                }
            }
        }
        (sym, stoch)
    }

    /// SHA-256 over the component structure and the exact bits of `W`.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.n as u64).to_le_bytes());
        for c in &self.components {
            h.update((c.nodes.len() as u64).to_le_bytes());
            for &i in &c.nodes {
                h.update((i as u64).to_le_bytes());
            }
            for &w in &c.block {
                h.update(w.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    pub fn write_binary(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        put_u64(w, self.n as u64)?;
        for id in &self.node_ids {
            put_str(w, id)?;
        }
        put_usizes(w, &self.original_index)?;
        put_f64s(w, &self.scaling.d)?;
        put_u64(w, self.scaling.iterations as u64)?;
        put_f64s(w, &[self.scaling.max_row_err])?;
        put_usizes(w, &self.scaling.pruned_nodes)?;
        put_u64(w, self.components.len() as u64)?;
        for c in &self.components {
            put_usizes(w, &c.nodes)?;
            put_f64s(w, &c.block)?;
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> Result<Self> {
        expect_magic(r, MAGIC)?;
        let n = get_usize(r)?;
        let node_ids = (0..n).map(|_| get_str(r)).collect::<std::io::Result<Vec<_>>>()?;
        let original_index = get_usizes(r)?;
        let d = get_f64s(r)?;
        let iterations = get_usize(r)?;
        let max_row_err = *get_f64s(r)?.first().ok_or_else(|| invalid_data("missing row error"))?;
        let pruned_nodes = get_usizes(r)?;
        let count = get_usize(r)?;
        let mut components = Vec::new();
        for _ in 0..count {
            let nodes = get_usizes(r)?;
            let block = get_f64s(r)?;
            components.push(Component { nodes, block });
        }
        let scaling = ScalingResult { d, iterations, max_row_err, pruned_nodes };
        Self::from_parts(node_ids, original_index, components, scaling)
    }

    /// Writes JSON when the path ends in `.json`, the binary format otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        if is_json(path) {
            serde_json::to_writer(&mut w, self)?;
        } else {
            self.write_binary(&mut w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        if is_json(path) {
            Ok(serde_json::from_reader(r)?)
        } else {
            Self::read_binary(&mut r)
        }
    }

    /// True when the file at `path` starts with the binary operator header.
    pub fn is_binary_file(path: &Path) -> bool {
        let mut b = [0u8; 8];
        File::open(path).and_then(|mut f| f.read_exact(&mut b)).is_ok() && &b == MAGIC
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}
