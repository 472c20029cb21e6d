//! Utterance embeddings and the inter-domain distance matrix.
//!
//! Distances are `1 - mean cosine similarity` over all cross-domain pairs of
//! train-split user utterances, so the min-sum path follows the most similar
//! neighbours.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::corpus::DomainDataset;
use crate::error::{Error, Result};

pub type EmbeddingVector = Vec<f64>;

/// Signed hashed bag-of-words embedder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl HashedEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < 8 || !dim.is_power_of_two() {
            return Err(Error::Config(format!(
                "embedding dimension must be a power of two >= 8, got {dim}"
            )));
        }
        Ok(Self { dim, seed })
    }

    pub fn embed(&self, text: &str) -> EmbeddingVector {
        embed_text(text, self.dim, self.seed)
    }
}

/// Hashes lowercase whitespace tokens into `dim` buckets with a sign bit and
/// L2-normalizes the term counts. Blank text maps to the zero vector.
///
/// `dim` must be a power of two; see [`HashedEmbedder::new`].
pub fn embed_text(text: &str, dim: usize, seed: u64) -> EmbeddingVector {
    debug_assert!(dim.is_power_of_two());
    let mut v = vec![0.0; dim];
    for token in text.split_whitespace() {
        let h = xxh3_64_with_seed(token.to_lowercase().as_bytes(), seed);
        let bucket = (h as usize) & (dim - 1);
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[bucket] += sign;
    }
    normalize(&mut v);
    v
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity clamped to [-1, 1]; zero vectors give 0.
///
/// Symmetric bit-for-bit, and exactly 1 for a non-zero vector with itself
/// since `sqrt(x * x) == x` under IEEE rounding.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let aa = dot(a, a);
    let bb = dot(b, b);
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (aa * bb).sqrt()).clamp(-1.0, 1.0)
}

/// Mean cosine similarity over all pairs `(a, b)` with `a` in `xs` and `b`
/// in `ys`.
///
/// Pair similarities are summed in ascending order of value, which makes the
/// result independent of argument and element order.
pub fn mean_cross_similarity(xs: &[EmbeddingVector], ys: &[EmbeddingVector]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::InvalidInput(
            "mean similarity needs two non-empty sets".into(),
        ));
    }
    let dim = xs[0].len();
    if let Some(bad) = xs.iter().chain(ys).find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            id: "<vector>".into(),
            expected: dim,
            found: bad.len(),
        });
    }
    let mut sims: Vec<f64> = Vec::with_capacity(xs.len() * ys.len());
    for a in xs {
        for b in ys {
            sims.push(cosine(a, b));
        }
    }
    sims.sort_by(f64::total_cmp);
    Ok(sims.iter().sum::<f64>() / sims.len() as f64)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    /// Unset until the first vector is inserted.
    pub dim: Option<usize>,
    pub entries: BTreeMap<String, EmbeddingVector>,
    /// Example ids per domain, sorted.
    pub domain_index: BTreeMap<String, Vec<String>>,
}

impl EmbeddingTable {
    pub fn insert(&mut self, id: String, domain: String, vector: EmbeddingVector) -> Result<()> {
        match self.dim {
            Some(d) if d != vector.len() => {
                return Err(Error::DimensionMismatch {
                    id,
                    expected: d,
                    found: vector.len(),
                })
            }
            None => self.dim = Some(vector.len()),
            _ => {}
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(id));
        }
        let ids = self.domain_index.entry(domain).or_default();
        if let Err(pos) = ids.binary_search(&id) {
            ids.insert(pos, id.clone());
        }
        self.entries.insert(id, vector);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn domain_vectors(&self, domain: &str) -> Result<Vec<EmbeddingVector>> {
        let ids = self
            .domain_index
            .get(domain)
            .filter(|ids| !ids.is_empty())
            .ok_or_else(|| Error::MissingEmbeddings(domain.to_string()))?;
        Ok(ids.iter().map(|id| self.entries[id].clone()).collect())
    }

    /// Embeds the labeled user utterance of every train example.
    pub fn from_datasets<'a>(
        datasets: impl IntoIterator<Item = &'a DomainDataset>,
        embedder: &HashedEmbedder,
    ) -> Result<Self> {
        let mut table = Self::default();
        for ds in datasets {
            for ex in &ds.train {
                table.insert(
                    ex.example_id.clone(),
                    ds.domain_id.clone(),
                    embedder.embed(&ex.utterance),
                )?;
            }
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub domain_ids: Vec<String>,
    pub d: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    pub fn index_of(&self, domain: &str) -> Option<usize> {
        self.domain_ids.iter().position(|d| d == domain)
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.d[self.index_of(a)?][self.index_of(b)?])
    }

    /// Builds a matrix from explicit weights, mirroring the upper triangle.
    pub fn from_upper(domain_ids: Vec<String>, d: Vec<Vec<f64>>) -> Result<Self> {
        let n = domain_ids.len();
        if d.len() != n || d.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidInput("distance matrix is not square".into()));
        }
        let mut out = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let w = d[i][j];
                if !w.is_finite() {
                    return Err(Error::NonFinite(format!("{}-{}", domain_ids[i], domain_ids[j])));
                }
                out[i][j] = w;
                out[j][i] = w;
            }
        }
        Ok(Self { domain_ids, d: out })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("domain");
        for id in &self.domain_ids {
            s.push(',');
            s.push_str(id);
        }
        s.push('\n');
        for (id, row) in self.domain_ids.iter().zip(&self.d) {
            s.push_str(id);
            for v in row {
                s.push_str(&format!(",{v:.17e}"));
            }
            s.push('\n');
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: String| Error::Ingest {
            path: path.to_path_buf(),
            message: msg,
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let domain_ids: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
        let mut d = Vec::new();
        for line in lines {
            let mut cells = line.split(',');
            cells.next();
            let row = cells
                .map(|c| c.trim().parse::<f64>().map_err(|e| bad(format!("{c:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            d.push(row);
        }
        Self::from_upper(domain_ids, d).map_err(|e| bad(e.to_string()))
    }
}

/// `d[i][j] = 1 - mean_cross_similarity(i, j)`, clamped to [0, 2], computed
/// once per unordered pair and mirrored.
pub fn distance_matrix(table: &EmbeddingTable, domain_ids: &[String]) -> Result<DistanceMatrix> {
    let vectors: Vec<Vec<EmbeddingVector>> = domain_ids
        .iter()
        .map(|d| table.domain_vectors(d))
        .collect::<Result<_>>()?;
    let n = domain_ids.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let sim = mean_cross_similarity(&vectors[i], &vectors[j])?;
            let dist = (1.0 - sim).clamp(0.0, 2.0);
            d[i][j] = dist;
            d[j][i] = dist;
        }
    }
    Ok(DistanceMatrix {
        domain_ids: domain_ids.to_vec(),
        d,
    })
}

// ---------------------------------------------------------------------------
// Interchange format: {"id", "domain", "vector"} per line

#[derive(Deserialize)]
#[serde(untagged)]
enum InterchangeLine {
    Header {
        #[allow(dead_code)]
        header: serde_json::Value,
    },
    Record {
        id: String,
        domain: String,
        vector: Vec<f64>,
    },
}

/// Loads an interchange file, re-normalizing vectors that are not already
/// unit length.
/// An optional `{"header": ...}` line is skipped.
pub fn import_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = EmbeddingTable::default();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: InterchangeLine = serde_json::from_str(&line).map_err(|e| Error::Ingest {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", lineno + 1),
        })?;
        if let InterchangeLine::Record { id, domain, mut vector } = parsed {
            if vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(id));
            }
            let norm = dot(&vector, &vector).sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                normalize(&mut vector);
            }
            table.insert(id, domain, vector)?;
        }
    }
    Ok(table)
}

/// Writes vectors with 17 significant digits so they round-trip exactly.
pub fn export_embeddings(path: &Path, table: &EmbeddingTable) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (domain, ids) in &table.domain_index {
        for id in ids {
            let values: Vec<String> = table.entries[id].iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(
                w,
                "{{\"id\":{},\"domain\":{},\"vector\":[{}]}}",
                serde_json::to_string(id).expect("string serializes"),
                serde_json::to_string(domain).expect("string serializes"),
                values.join(",")
            )
            .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
