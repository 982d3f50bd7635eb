//! Personalized PageRank over the hyperlink graph and PPR reranking of a
//! base retrieval list.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::HyperlinkGraph;
use crate::error::{Error, Result};
use crate::retrieval::RankedList;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PprConfig {
    pub num_seeds: usize,
    /// Probability of following an out-link rather than teleporting.
    pub damping: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub symmetrize: bool,
}

impl Default for PprConfig {
    fn default() -> Self {
        PprConfig {
            num_seeds: 10,
            damping: 0.5,
            tolerance: 1e-8,
            max_iterations: 100,
            symmetrize: false,
        }
    }
}

impl PprConfig {
    /// Tuned per-retriever defaults: BM25 (10 seeds, 0.5), dense (5, 0.5),
    /// hybrid (5, 0.85).
    pub fn for_retriever(base: &str) -> PprConfig {
        let (num_seeds, damping) = match base {
            "dense" => (5, 0.5),
            "hybrid" => (5, 0.85),
            _ => (10, 0.5),
        };
        PprConfig {
            num_seeds,
            damping,
            ..PprConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Config(format!("ppr damping {} not in [0, 1)", self.damping)));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::Config("ppr tolerance must be positive".into()));
        }
        if self.num_seeds == 0 || self.max_iterations == 0 {
            return Err(Error::Config("ppr seeds and max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Stationary distribution of the seeded walk, indexed by graph node.
#[derive(Debug, Clone, PartialEq)]
pub struct PprVector {
    pub mass: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl PprVector {
    pub fn to_map<'g>(&self, graph: &'g HyperlinkGraph) -> BTreeMap<&'g str, f64> {
        self.mass
            .iter()
            .enumerate()
            .map(|(i, &m)| (graph.node_id(i), m))
            .collect()
    }
}

/// Power iteration for `p = (1-d) s + d P^T p`, with `s` uniform over the
/// seeds and the mass of dangling nodes sent back to `s`.
pub fn personalized_pagerank(
    graph: &HyperlinkGraph,
    seeds: &[usize],
    config: &PprConfig,
) -> Result<PprVector> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(Error::EmptySeeds);
    }
    let n = graph.node_count();
    let mut teleport = vec![0.0; n];
    let mut unique = seeds.to_vec();
    unique.sort_unstable();
    unique.dedup();
    for &s in &unique {
        if s >= n {
            return Err(Error::UnknownDocument(format!("node #{s}")));
        }
        teleport[s] = 1.0 / unique.len() as f64;
    }
    let d = config.damping;
    let inv_deg: Vec<f64> = (0..n)
        .map(|i| match graph.out_degree(i) {
            0 => 0.0,
            k => 1.0 / k as f64,
        })
        .collect();
    let dangling: Vec<usize> = (0..n).filter(|&i| graph.out_degree(i) == 0).collect();

    let mut p = teleport.clone();
    let mut next = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iterations {
        iterations += 1;
        let dangling_mass: f64 = dangling.iter().map(|&i| p[i]).sum();
        for v in 0..n {
            let inflow: f64 = graph
                .in_neighbors(v)
                .iter()
                .map(|&u| p[u] * inv_deg[u])
                .sum();
            next[v] = (1.0 - d) * teleport[v] + d * (inflow + dangling_mass * teleport[v]);
        }
        let delta: f64 = p.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut p, &mut next);
        if delta < config.tolerance {
            converged = true;
            break;
        }
    }
    // rounding drift only; the update itself conserves mass
    let total: f64 = p.iter().sum();
    for x in &mut p {
        *x /= total;
    }
    Ok(PprVector {
        mass: p,
        iterations,
        converged,
    })
}

/// Reranks `base` by PPR mass seeded on its top `num_seeds` documents.
///
/// Documents with positive mass come first (mass descending, then base rank,
/// then id); base documents the walk never reached follow in base order.
pub fn rerank_ppr(base: &RankedList, graph: &HyperlinkGraph, config: &PprConfig) -> Result<RankedList> {
    config.validate()?;
    let strategy = format!("{}+ppr", base.strategy);
    if base.is_empty() {
        return RankedList::from_ordered(base.query_id.clone(), strategy, Vec::new());
    }
    let symmetric;
    let graph = if config.symmetrize {
        symmetric = graph.symmetrized();
        &symmetric
    } else {
        graph
    };
    let seeds: Vec<usize> = base
        .doc_ids()
        .take(config.num_seeds)
        .map(|id| {
            graph
                .node_index(id)
                .ok_or_else(|| Error::UnknownDocument(id.to_string()))
        })
        .collect::<Result<_>>()?;
    let ppr = personalized_pagerank(graph, &seeds, config)?;
    let base_rank = base.rank_map();

    let mut reached: Vec<(usize, f64)> = ppr
        .mass
        .iter()
        .enumerate()
        .filter(|(_, &m)| m > 0.0)
        .map(|(i, &m)| (i, m))
        .collect();
    reached.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| {
                let ra = base_rank.get(graph.node_id(a.0)).copied().unwrap_or(usize::MAX);
                let rb = base_rank.get(graph.node_id(b.0)).copied().unwrap_or(usize::MAX);
                ra.cmp(&rb)
            })
            .then_with(|| graph.node_id(a.0).cmp(graph.node_id(b.0)))
    });
    let mut listed: HashMap<&str, ()> = HashMap::with_capacity(reached.len());
    let mut ordered: Vec<(String, f64)> = Vec::with_capacity(reached.len() + base.len());
    for (i, m) in reached {
        let id = graph.node_id(i);
        listed.insert(id, ());
        ordered.push((id.to_string(), m));
    }
    for id in base.doc_ids() {
        if !listed.contains_key(id) {
            ordered.push((id.to_string(), 0.0));
        }
    }
    RankedList::from_ordered(base.query_id.clone(), strategy, ordered)
}
