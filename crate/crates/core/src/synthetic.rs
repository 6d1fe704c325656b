//! Typed synthetic knowledge graphs with learnable relational structure.
//!
//! Entities get one type each (round-robin, so type classes are equal in
//! size) and a latent cluster. Every relation has a set of head types, a set
//! of tail types and a cluster permutation; a head entity links to random
//! tail entities in the mapped cluster.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Split, Triple, TypeAnnotations};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub entities: usize,
    /// Base relations (inverses are added on top).
    pub relations: usize,
    pub types: usize,
    /// Head types per relation.
    pub head_types: usize,
    /// Tail types per relation.
    pub tail_types: usize,
    /// Latent clusters per type.
    pub clusters: usize,
    /// Maximum out-degree of a head entity per relation.
    pub max_degree: usize,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            entities: 50,
            relations: 4,
            types: 4,
            head_types: 2,
            tail_types: 1,
            clusters: 3,
            max_degree: 3,
            valid_fraction: 0.05,
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

pub struct SyntheticKg {
    pub kg: KnowledgeGraph,
    pub types: TypeAnnotations,
}

pub fn entity_name(e: usize) -> String {
    format!("e{e:03}")
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticKg> {
    let c = config;
    if c.entities == 0 || c.relations == 0 || c.types == 0 || c.clusters == 0 || c.max_degree == 0 {
        return Err(Error::Precondition("synthetic graph sizes must be positive".into()));
    }
    if c.head_types > c.types || c.tail_types > c.types || c.head_types == 0 || c.tail_types == 0 {
        return Err(Error::Precondition("per-relation type counts must lie in 1..=types".into()));
    }
    if !(0.0..1.0).contains(&(c.valid_fraction + c.test_fraction)) || c.valid_fraction < 0.0 || c.test_fraction < 0.0
    {
        return Err(Error::Precondition("held-out fractions must be non-negative and sum below 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);

    let type_of: Vec<usize> = (0..c.entities).map(|e| e % c.types).collect();
    let mut by_type_cluster = vec![vec![Vec::new(); c.clusters]; c.types];
    let mut cluster_of = vec![0; c.entities];
    for e in 0..c.entities {
        let k = rng.gen_range(0..c.clusters);
        cluster_of[e] = k;
        by_type_cluster[type_of[e]][k].push(e);
    }

    let mut triples = Vec::new();
    for r in 0..c.relations {
        let heads: Vec<usize> = index::sample(&mut rng, c.types, c.head_types).into_vec();
        let tails: Vec<usize> = index::sample(&mut rng, c.types, c.tail_types).into_vec();
        let mut perm: Vec<usize> = (0..c.clusters).collect();
        perm.shuffle(&mut rng);
        for h in (0..c.entities).filter(|&h| heads.contains(&type_of[h])) {
            let k = perm[cluster_of[h]];
            let pool: Vec<usize> = tails
                .iter()
                .flat_map(|&t| by_type_cluster[t][k].iter().copied())
                .filter(|&t| t != h)
                .collect();
            if pool.is_empty() {
                continue;
            }
            let degree = rng.gen_range(1..=c.max_degree.min(pool.len()));
            for t in index::sample(&mut rng, pool.len(), degree) {
                triples.push((h, r, pool[t]));
            }
        }
    }
    triples.shuffle(&mut rng);

    let n = triples.len();
    let n_valid = (n as f64 * c.valid_fraction).round() as usize;
    let n_test = (n as f64 * c.test_fraction).round() as usize;
    let mut kg = KnowledgeGraph::new();
    for e in 0..c.entities {
        kg.intern_entity(&entity_name(e));
    }
    for r in 0..c.relations {
        kg.intern_relation(&format!("r{r}"));
    }
    for (k, &(h, r, t)) in triples.iter().enumerate() {
        let split = if k < n_test {
            Split::Test
        } else if k < n_test + n_valid {
            Split::Valid
        } else {
            Split::Train
        };
        kg.add(Triple::new(h as u32, 2 * r as u32, t as u32), split);
    }

    let mut types = TypeAnnotations::new(c.entities);
    for (e, &t) in type_of.iter().enumerate() {
        types.add(e as u32, &format!("type{t}"));
    }
    Ok(SyntheticKg { kg, types })
}

impl SyntheticKg {
    /// Writes `train.tsv`, `valid.tsv`, `test.tsv` and `types.tsv` into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (split, file) in [(Split::Train, "train.tsv"), (Split::Valid, "valid.tsv"), (Split::Test, "test.tsv")] {
            let path = dir.join(file);
            let mut text = String::new();
            for t in self.kg.triples(split).filter(|t| t.relation % 2 == 0) {
                let name = |e| self.kg.entity_name(e).unwrap_or_default();
                let rel = self.kg.relation_name(t.relation).unwrap_or_default();
                text.push_str(&format!("{}\t{}\t{}\n", name(t.head), rel, name(t.tail)));
            }
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        let path = dir.join("types.tsv");
        let mut out = Vec::new();
        for (e, t) in self.types.pairs() {
            let ename = self.kg.entity_name(e).unwrap_or_default();
            let tname = self.types.types().name(t).unwrap_or_default();
            writeln!(out, "{ename}\t{tname}").expect("writing to a vector");
        }
        fs::write(&path, out).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::GraphView;

    #[test]
    fn deterministic_and_split() {
        let cfg = SyntheticConfig::default();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        let ta: Vec<_> = a.kg.triples(Split::Test).collect();
        let tb: Vec<_> = b.kg.triples(Split::Test).collect();
        assert_eq!(ta, tb);
        assert!(a.kg.base_triple_count(Split::Test) > 0);
        assert!(a.kg.base_triple_count(Split::Train) > a.kg.base_triple_count(Split::Test));
        assert_eq!(a.kg.num_entities(), 50);
        assert_eq!(a.types.len(), 50);
    }

    #[test]
    fn heads_respect_relation_types() {
        let cfg = SyntheticConfig {
            types: 2,
            head_types: 1,
            ..Default::default()
        };
        let s = generate(&cfg).unwrap();
        let edges = s.kg.graph_view(GraphView::All);
        for r in (0..s.kg.num_relations() as u32).step_by(2) {
            let head_types: std::collections::BTreeSet<_> =
                edges.edges().filter(|t| t.relation == r).map(|t| t.head % 2).collect();
            assert!(head_types.len() <= 1);
        }
    }

    #[test]
    fn written_dataset_loads_back() {
        let s = generate(&SyntheticConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.write_dir(dir.path()).unwrap();
        let kg = KnowledgeGraph::load_dir(dir.path()).unwrap();
        for split in Split::ALL {
            assert_eq!(kg.base_triple_count(split), s.kg.base_triple_count(split));
        }
        let types = TypeAnnotations::load(dir.path().join("types.tsv"), &kg).unwrap();
        assert_eq!(types.len(), 50);
    }
}
