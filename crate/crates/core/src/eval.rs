//! Filtered ranking of hard answers and MRR / Hits@K aggregation.

use std::collections::BTreeSet;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::executor::Executor;
use crate::kg::EntityId;
use crate::query::{LabeledQuery, Structure};

/// Filtered 1-based rank of hard answer `a`.
///
/// Other answers (easy or hard) are removed from the candidate list; entities
/// tied with `a` count as ranked ahead of it.
pub fn rank_hard_answer(
    scores: &[f64],
    a: EntityId,
    easy: &BTreeSet<EntityId>,
    hard: &BTreeSet<EntityId>,
) -> Result<usize> {
    if !hard.contains(&a) || a as usize >= scores.len() {
        return Err(Error::Contract(format!("entity {a} is not a hard answer")));
    }
    let sa = scores[a as usize];
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(e, &s)| {
            let e = e as EntityId;
            e != a && s >= sa && !easy.contains(&e) && !hard.contains(&e)
        })
        .count();
    Ok(1 + ahead)
}

/// Unfiltered 1-based rank with the same tie rule.
pub fn raw_rank(scores: &[f64], a: EntityId) -> usize {
    let sa = scores[a as usize];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(e, &s)| e != a as usize && s >= sa)
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Metrics {
    pub mrr: f64,
    #[serde(rename = "hits@1")]
    pub hits1: f64,
    #[serde(rename = "hits@3")]
    pub hits3: f64,
    #[serde(rename = "hits@10")]
    pub hits10: f64,
}

impl Metrics {
    /// Metrics of a flat list of ranks.
    pub fn from_ranks(ranks: &[usize]) -> Self {
        if ranks.is_empty() {
            return Self::default();
        }
        let n = ranks.len() as f64;
        let hits = |k| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Self {
            mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
            hits1: hits(1),
            hits3: hits(3),
            hits10: hits(10),
        }
    }

    fn mean(items: &[Metrics]) -> Self {
        if items.is_empty() {
            return Self::default();
        }
        let n = items.len() as f64;
        let sum = |f: fn(&Metrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        Self {
            mrr: sum(|m| m.mrr),
            hits1: sum(|m| m.hits1),
            hits3: sum(|m| m.hits3),
            hits10: sum(|m| m.hits10),
        }
    }
}

/// How reciprocal ranks are pooled within a structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Averaging {
    /// Average over the hard answers of each query, then over queries.
    #[default]
    PerQuery,
    /// Average over all hard answers of the structure at once.
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureMetrics {
    pub structure: Structure,
    pub queries: usize,
    pub answers: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub structures: Vec<StructureMetrics>,
    pub avg_p: Option<f64>,
    pub avg_ood: Option<f64>,
    pub avg_n: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EvalReport {
    /// Builds a report from per-structure results, computing the aggregates.
    pub fn from_structures(structures: Vec<StructureMetrics>) -> Self {
        let mut warnings = Vec::new();
        let mut avg = |name: &str, set: &[Structure]| {
            let present: Vec<f64> = set
                .iter()
                .filter_map(|s| structures.iter().find(|m| m.structure == *s).map(|m| m.metrics.mrr))
                .collect();
            let missing: Vec<&str> = set
                .iter()
                .filter(|s| !structures.iter().any(|m| m.structure == **s))
                .map(|s| s.label())
                .collect();
            if !missing.is_empty() {
                warnings.push(format!("{name} omits structures without queries: {}", missing.join(", ")));
            }
            (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
        };
        let avg_p = avg("avg_p", &Structure::EPFO);
        let avg_ood = avg("avg_ood", &Structure::OOD);
        let avg_n = avg("avg_n", &Structure::NEGATION);
        for w in &warnings {
            log::warn!("{w}");
        }
        Self {
            structures,
            avg_p,
            avg_ood,
            avg_n,
            warnings,
        }
    }

    pub fn get(&self, structure: Structure) -> Option<&StructureMetrics> {
        self.structures.iter().find(|m| m.structure == structure)
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "structure\tqueries\tanswers\tmrr\thits@1\thits@3\thits@10")?;
        for s in &self.structures {
            let m = &s.metrics;
            writeln!(
                out,
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                s.structure, s.queries, s.answers, m.mrr, m.hits1, m.hits3, m.hits10
            )?;
        }
        for (name, v) in [("avg_p", self.avg_p), ("avg_ood", self.avg_ood), ("avg_n", self.avg_n)] {
            if let Some(v) = v {
                writeln!(out, "{name}\t\t\t{v:.6}\t\t\t")?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Ranks of every hard answer of `query`.
pub fn query_ranks(executor: &Executor<'_>, query: &LabeledQuery) -> Result<Vec<usize>> {
    let scores = executor.execute(&query.ast.root)?;
    query
        .hard
        .iter()
        .map(|&a| rank_hard_answer(scores.values(), a, &query.easy, &query.hard))
        .collect()
}

/// Evaluates every query with hard answers and groups the results by structure.
pub fn evaluate(executor: &Executor<'_>, queries: &[LabeledQuery], averaging: Averaging) -> Result<EvalReport> {
    let usable: Vec<(Structure, &LabeledQuery)> = queries
        .iter()
        .filter(|q| !q.hard.is_empty())
        .filter_map(|q| q.ast.structure.or_else(|| Structure::of(&q.ast.root)).map(|s| (s, q)))
        .collect();
    if usable.len() < queries.len() {
        log::warn!(
            "ignoring {} queries without hard answers or a known structure",
            queries.len() - usable.len()
        );
    }

    let run = |(_, q): &(Structure, &LabeledQuery)| query_ranks(executor, q);
    #[cfg(feature = "parallel")]
    let ranks: Vec<Result<Vec<usize>>> = {
        use rayon::prelude::*;
        usable.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let ranks: Vec<Result<Vec<usize>>> = usable.iter().map(run).collect();
    let ranks = ranks.into_iter().collect::<Result<Vec<_>>>()?;

    let mut structures = Vec::new();
    for s in Structure::ALL {
        let group: Vec<&Vec<usize>> = usable
            .iter()
            .zip(&ranks)
            .filter(|((qs, _), _)| *qs == s)
            .map(|(_, r)| r)
            .collect();
        if group.is_empty() {
            continue;
        }
        let metrics = match averaging {
            Averaging::PerQuery => {
                Metrics::mean(&group.iter().map(|r| Metrics::from_ranks(r)).collect::<Vec<_>>())
            }
            Averaging::Flat => Metrics::from_ranks(&group.iter().flat_map(|r| r.iter().copied()).collect::<Vec<_>>()),
        };
        structures.push(StructureMetrics {
            structure: s,
            queries: group.len(),
            answers: group.iter().map(|r| r.len()).sum(),
            metrics,
        });
    }
    Ok(EvalReport::from_structures(structures))
}
