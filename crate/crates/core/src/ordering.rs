//! Domain-similarity graphs and Hamiltonian-path orderings.
//!
//! Min-sum and max-sum paths are found by exhaustive enumeration of the
//! `n!/2` undirected paths; `n` is capped at [`MAX_NODES`].

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::DomainSubset;
use crate::embed::DistanceMatrix;
use crate::error::{Error, Result};
use crate::seed;

pub const MAX_NODES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "min-sum")]
    MinSum,
    #[serde(rename = "max-sum")]
    MaxSum,
    #[serde(rename = "random")]
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::MinSum, Strategy::MaxSum, Strategy::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::MinSum => "min-sum",
            Strategy::MaxSum => "max-sum",
            Strategy::Random => "random",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min-sum" | "min_sum" => Ok(Strategy::MinSum),
            "max-sum" | "max_sum" => Ok(Strategy::MaxSum),
            "random" => Ok(Strategy::Random),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

/// Complete undirected graph over a domain subset.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainGraph {
    pub domain_ids: Vec<String>,
    pub weight: Vec<Vec<f64>>,
}

impl DomainGraph {
    pub fn new(domain_ids: Vec<String>, weight: Vec<Vec<f64>>) -> Result<Self> {
        let n = domain_ids.len();
        if n < 2 {
            return Err(Error::InvalidInput("a domain graph needs at least 2 nodes".into()));
        }
        if weight.len() != n || weight.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("weight matrix is not square".into()));
        }
        for i in 0..n {
            if weight[i][i] != 0.0 {
                return Err(Error::InvalidInput("weight diagonal must be zero".into()));
            }
            for j in 0..n {
                if !weight[i][j].is_finite() || weight[i][j] != weight[j][i] {
                    return Err(Error::InvalidInput(format!(
                        "weights between `{}` and `{}` are not finite and symmetric",
                        domain_ids[i], domain_ids[j]
                    )));
                }
            }
        }
        let mut sorted = domain_ids.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != n {
            return Err(Error::InvalidInput("domain ids must be distinct".into()));
        }
        Ok(Self { domain_ids, weight })
    }

    pub fn len(&self) -> usize {
        self.domain_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domain_ids.is_empty()
    }

    fn index_of(&self, id: &str) -> Result<usize> {
        self.domain_ids
            .iter()
            .position(|d| d == id)
            .ok_or_else(|| Error::UnknownDomain(id.to_string()))
    }

    fn indices(&self, order: &[String]) -> Result<Vec<usize>> {
        order.iter().map(|id| self.index_of(id)).collect()
    }

    /// Sum of consecutive edge weights, always accumulated along the
    /// canonical direction so a path and its reverse cost the same bits.
    pub fn path_cost(&self, order: &[String]) -> Result<f64> {
        let idx = self.indices(order)?;
        Ok(self.cost_of(&idx))
    }

    fn cost_of(&self, idx: &[usize]) -> f64 {
        let forward = self.domain_ids[idx[0]] <= self.domain_ids[idx[idx.len() - 1]];
        let mut cost = 0.0;
        if forward {
            for w in idx.windows(2) {
                cost += self.weight[w[0]][w[1]];
            }
        } else {
            for w in idx.windows(2).rev() {
                cost += self.weight[w[1]][w[0]];
            }
        }
        cost
    }
}

/// Restricts a distance matrix to a subset, keeping the subset's order.
pub fn build_graph(matrix: &DistanceMatrix, subset: &DomainSubset) -> Result<DomainGraph> {
    let idx: Vec<usize> = subset
        .domain_ids
        .iter()
        .map(|d| matrix.index_of(d).ok_or_else(|| Error::UnknownDomain(d.clone())))
        .collect::<Result<_>>()?;
    let weight = idx
        .iter()
        .map(|&i| idx.iter().map(|&j| matrix.d[i][j]).collect())
        .collect();
    DomainGraph::new(subset.domain_ids.clone(), weight)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainPath {
    pub order: Vec<String>,
    pub strategy: Strategy,
    pub cost: f64,
}

/// Of the two traversal directions, the one starting at the lexicographically
/// smaller endpoint.
pub fn canonical_direction(order: &[String]) -> Vec<String> {
    let mut out = order.to_vec();
    if let (Some(first), Some(last)) = (order.first(), order.last()) {
        if last < first {
            out.reverse();
        }
    }
    out
}

/// Visits every undirected Hamiltonian path once, in canonical direction and
/// in lexicographic order of the domain-id sequence.
pub fn for_each_path(graph: &DomainGraph, mut visit: impl FnMut(&[usize], f64)) -> Result<()> {
    let n = graph.len();
    if n > MAX_NODES {
        return Err(Error::TooManyNodes { n, limit: MAX_NODES });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by(|&a, &b| graph.domain_ids[a].cmp(&graph.domain_ids[b]));
    let rank: Vec<usize> = {
        let mut r = vec![0; n];
        for (pos, &node) in perm.iter().enumerate() {
            r[node] = pos;
        }
        r
    };
    loop {
        if rank[perm[0]] < rank[perm[n - 1]] {
            visit(&perm, graph.cost_of(&perm));
        }
        if !next_permutation(&mut perm, &rank) {
            break;
        }
    }
    Ok(())
}

fn next_permutation(perm: &mut [usize], rank: &[usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && rank[perm[i - 1]] >= rank[perm[i]] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while rank[perm[j]] <= rank[perm[i - 1]] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// All undirected paths as `(order, cost)` pairs. Allocates `n!/2` entries;
/// prefer [`for_each_path`] for large graphs.
pub fn enumerate_paths(graph: &DomainGraph) -> Result<Vec<(Vec<String>, f64)>> {
    let mut out = Vec::new();
    for_each_path(graph, |idx, cost| {
        out.push((idx.iter().map(|&i| graph.domain_ids[i].clone()).collect(), cost));
    })?;
    Ok(out)
}

fn extreme_path(graph: &DomainGraph, strategy: Strategy) -> Result<DomainPath> {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for_each_path(graph, |idx, cost| {
        let better = match &best {
            None => true,
            Some((_, c)) => match strategy {
                Strategy::MaxSum => cost.total_cmp(c) == Ordering::Greater,
                _ => cost.total_cmp(c) == Ordering::Less,
            },
        };
        if better {
            best = Some((idx.to_vec(), cost));
        }
    })?;
    let (idx, cost) = best.expect("a graph with >= 2 nodes has a path");
    Ok(DomainPath {
        order: idx.iter().map(|&i| graph.domain_ids[i].clone()).collect(),
        strategy,
        cost,
    })
}

pub fn min_sum_path(graph: &DomainGraph) -> Result<DomainPath> {
    extreme_path(graph, Strategy::MinSum)
}

pub fn max_sum_path(graph: &DomainGraph) -> Result<DomainPath> {
    extreme_path(graph, Strategy::MaxSum)
}

/// Uniform directed permutation via seeded Fisher-Yates.
pub fn random_path(graph: &DomainGraph, seed: u64) -> DomainPath {
    let mut order = graph.domain_ids.clone();
    order.shuffle(&mut seed::rng(seed));
    let cost = graph.path_cost(&order).expect("order is a permutation of the graph");
    DomainPath {
        order,
        strategy: Strategy::Random,
        cost,
    }
}

pub fn path_for(graph: &DomainGraph, strategy: Strategy, seed: u64) -> Result<DomainPath> {
    match strategy {
        Strategy::MinSum => min_sum_path(graph),
        Strategy::MaxSum => max_sum_path(graph),
        Strategy::Random => Ok(random_path(graph, seed)),
    }
}
