//! ComplEx embeddings with N3 regularization, trained by full-softmax
//! cross-entropy over tails (heads are covered by reciprocal relations).
//!
//! Each embedding row stores `d` real parts followed by `d` imaginary parts.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{LeReader, LeWriter};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Split, Triple};

const MODEL_MAGIC: &[u8; 4] = b"TKGE";
const INIT_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct KgeConfig {
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub n3_weight: f64,
    pub seed: u64,
}

impl Default for KgeConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            epochs: 200,
            batch_size: 256,
            learning_rate: 0.1,
            n3_weight: 1e-3,
            seed: 0,
        }
    }
}

/// Trained embeddings. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct KgeModel {
    num_entities: usize,
    num_relations: usize,
    dim: usize,
    entity: Vec<f32>,
    relation: Vec<f32>,
}

impl KgeModel {
    pub fn from_parts(
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        entity: Vec<f32>,
        relation: Vec<f32>,
    ) -> Result<Self> {
        if entity.len() != num_entities * 2 * dim || relation.len() != num_relations * 2 * dim {
            return Err(Error::Dimension(format!(
                "embedding blocks do not match |V|={num_entities}, |R|={num_relations}, d={dim}"
            )));
        }
        if entity.iter().chain(&relation).any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite embedding value".into()));
        }
        Ok(Self {
            num_entities,
            num_relations,
            dim,
            entity,
            relation,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entity_embedding(&self, e: EntityId) -> &[f32] {
        let w = 2 * self.dim;
        &self.entity[e as usize * w..(e as usize + 1) * w]
    }

    pub fn relation_embedding(&self, r: RelationId) -> &[f32] {
        let w = 2 * self.dim;
        &self.relation[r as usize * w..(r as usize + 1) * w]
    }

    /// `Re(<e_h, w_r, conj(e_t)>)`.
    pub fn score(&self, head: EntityId, relation: RelationId, tail: EntityId) -> f64 {
        let (q_re, q_im) = self.query(head, relation);
        let t = self.entity_embedding(tail);
        let d = self.dim;
        (0..d)
            .map(|k| q_re[k] * t[k] as f64 + q_im[k] * t[d + k] as f64)
            .sum()
    }

    /// Scores of `(head, relation, e)` for every entity `e`.
    pub fn score_row(&self, head: EntityId, relation: RelationId) -> Vec<f64> {
        let (q_re, q_im) = self.query(head, relation);
        let d = self.dim;
        self.entity
            .chunks_exact(2 * d)
            .map(|t| {
                (0..d)
                    .map(|k| q_re[k] * t[k] as f64 + q_im[k] * t[d + k] as f64)
                    .sum()
            })
            .collect()
    }

    fn query(&self, head: EntityId, relation: RelationId) -> (Vec<f64>, Vec<f64>) {
        let h = self.entity_embedding(head);
        let w = self.relation_embedding(relation);
        complex_query(h, w, self.dim)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = LeWriter::new(out);
        w.bytes(MODEL_MAGIC)?;
        w.u32(self.num_entities as u32)?;
        w.u32(self.num_relations as u32)?;
        w.u32(self.dim as u32)?;
        for &v in self.entity.iter().chain(&self.relation) {
            w.f32(v)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = LeReader::new(input);
        r.magic(MODEL_MAGIC)?;
        let nv = r.u32()? as usize;
        let nr = r.u32()? as usize;
        let d = r.u32()? as usize;
        if d == 0 {
            return Err(Error::Format("embedding dimension is zero".into()));
        }
        let read_block = |r: &mut LeReader<R>, n: usize| -> Result<Vec<f32>> {
            let mut v = Vec::new();
            for _ in 0..n {
                v.push(r.f32()?);
            }
            Ok(v)
        };
        let entity = read_block(&mut r, nv * 2 * d)?;
        let relation = read_block(&mut r, nr * 2 * d)?;
        r.expect_eof()?;
        Self::from_parts(nv, nr, d, entity, relation)
    }
}

/// Real and imaginary parts of `e_h * w_r`, generic over the storage float.
fn complex_query<F: Copy + Into<f64>>(h: &[F], w: &[F], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut q_re = vec![0.0; d];
    let mut q_im = vec![0.0; d];
    for k in 0..d {
        let (a, b) = (h[k].into(), h[d + k].into());
        let (c, dd) = (w[k].into(), w[d + k].into());
        q_re[k] = a * c - b * dd;
        q_im[k] = a * dd + b * c;
    }
    (q_re, q_im)
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KgeReport {
    /// Full-data objective before the first update.
    pub initial_loss: f64,
    /// Mean mini-batch objective of every epoch.
    pub epoch_losses: Vec<f64>,
}

/// Training-time parameters kept in double precision.
#[derive(Debug, Clone, PartialEq)]
struct Embeddings {
    entity: Vec<f64>,
    relation: Vec<f64>,
}

impl Embeddings {
    fn zeros_like(&self) -> Self {
        Self {
            entity: vec![0.0; self.entity.len()],
            relation: vec![0.0; self.relation.len()],
        }
    }
}

struct Objective {
    num_entities: usize,
    dim: usize,
    n3_weight: f64,
}

impl Objective {
    /// Mean over `batch` of softmax cross-entropy plus weighted N3; gradient
    /// is accumulated into `grad`.
    fn loss_and_grad(&self, params: &Embeddings, batch: &[Triple], grad: &mut Embeddings) -> f64 {
        let d = self.dim;
        let w = 2 * d;
        let nv = self.num_entities;
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        let mut scores = vec![0.0; nv];
        for t in batch {
            let (h, r, tail) = (t.head as usize, t.relation as usize, t.tail as usize);
            let he = &params.entity[h * w..(h + 1) * w];
            let re = &params.relation[r * w..(r + 1) * w];
            let (q_re, q_im) = complex_query(he, re, d);
            for (j, s) in scores.iter_mut().enumerate() {
                let e = &params.entity[j * w..(j + 1) * w];
                *s = (0..d).map(|k| q_re[k] * e[k] + q_im[k] * e[d + k]).sum();
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            let log_z = max + z.ln();
            total += log_z - scores[tail];

            // d/d score_j = softmax_j - [j == tail]
            let mut g_re = vec![0.0; d];
            let mut g_im = vec![0.0; d];
            for (j, &s) in scores.iter().enumerate() {
                let mut g = (s - log_z).exp();
                if j == tail {
                    g -= 1.0;
                }
                let g = g * scale;
                let e = &params.entity[j * w..(j + 1) * w];
                let ge = &mut grad.entity[j * w..(j + 1) * w];
                for k in 0..d {
                    g_re[k] += g * e[k];
                    g_im[k] += g * e[d + k];
                    ge[k] += g * q_re[k];
                    ge[d + k] += g * q_im[k];
                }
            }
            for k in 0..d {
                let (a, b) = (he[k], he[d + k]);
                let (c, dd) = (re[k], re[d + k]);
                let gh = &mut grad.entity[h * w..(h + 1) * w];
                gh[k] += g_re[k] * c + g_im[k] * dd;
                gh[d + k] += -g_re[k] * dd + g_im[k] * c;
                let gr = &mut grad.relation[r * w..(r + 1) * w];
                gr[k] += g_re[k] * a + g_im[k] * b;
                gr[d + k] += -g_re[k] * b + g_im[k] * a;
            }

            if self.n3_weight > 0.0 {
                let lam = self.n3_weight;
                let n3 = |v: &[f64], g: &mut [f64]| -> f64 {
                    let mut acc = 0.0;
                    for k in 0..d {
                        let m = (v[k] * v[k] + v[d + k] * v[d + k]).sqrt();
                        acc += m * m * m;
                        g[k] += scale * lam * 3.0 * v[k] * m;
                        g[d + k] += scale * lam * 3.0 * v[d + k] * m;
                    }
                    acc
                };
                let mut reg = n3(&params.entity[h * w..(h + 1) * w], &mut grad.entity[h * w..(h + 1) * w]);
                reg += n3(&params.relation[r * w..(r + 1) * w], &mut grad.relation[r * w..(r + 1) * w]);
                reg += n3(
                    &params.entity[tail * w..(tail + 1) * w],
                    &mut grad.entity[tail * w..(tail + 1) * w],
                );
                total += lam * reg;
            }
        }
        total * scale
    }
}

/// Adagrad over a flat parameter slice.
#[derive(Debug, Clone)]
pub(crate) struct Adagrad {
    accum: Vec<f64>,
    eps: f64,
}

impl Adagrad {
    pub fn new(len: usize, eps: f64) -> Self {
        Self {
            accum: vec![0.0; len],
            eps,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        for ((p, g), a) in params.iter_mut().zip(grad).zip(self.accum.iter_mut()) {
            if *g != 0.0 {
                *a += g * g;
                *p -= lr * g / (a.sqrt() + self.eps);
            }
        }
    }
}

/// Trains ComplEx-N3 on the training split (reciprocal triples included).
pub fn train_kge(kg: &KnowledgeGraph, config: &KgeConfig) -> Result<(KgeModel, KgeReport)> {
    let mut examples: Vec<Triple> = kg.triples(Split::Train).copied().collect();
    if examples.is_empty() {
        return Err(Error::Precondition("training split is empty".into()));
    }
    if config.dim == 0 || config.batch_size == 0 {
        return Err(Error::Precondition("dim and batch size must be positive".into()));
    }
    if config.learning_rate.is_nan() || config.learning_rate <= 0.0 {
        return Err(Error::Precondition("learning rate must be positive".into()));
    }
    let nv = kg.num_entities();
    let nr = kg.num_relations();
    let d = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = Embeddings {
        entity: (0..nv * 2 * d).map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE)).collect(),
        relation: (0..nr * 2 * d).map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE)).collect(),
    };
    let objective = Objective {
        num_entities: nv,
        dim: d,
        n3_weight: config.n3_weight,
    };
    let mut report = KgeReport {
        initial_loss: objective.loss_and_grad(&params, &examples, &mut params.zeros_like()),
        epoch_losses: Vec::with_capacity(config.epochs),
    };
    let mut opt_e = Adagrad::new(params.entity.len(), 1e-10);
    let mut opt_r = Adagrad::new(params.relation.len(), 1e-10);

    for epoch in 0..config.epochs {
        examples.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for (b, batch) in examples.chunks(config.batch_size).enumerate() {
            let mut grad = params.zeros_like();
            let loss = objective.loss_and_grad(&params, batch, &mut grad);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "KGE loss at epoch {epoch}, batch {b} is {loss}; the learning rate is likely too high"
                )));
            }
            opt_e.step(&mut params.entity, &grad.entity, config.learning_rate);
            opt_r.step(&mut params.relation, &grad.relation, config.learning_rate);
            sum += loss;
            batches += 1;
        }
        let mean = sum / batches as f64;
        log::debug!("kge epoch {epoch}: loss {mean:.6}");
        report.epoch_losses.push(mean);
    }

    let model = KgeModel::from_parts(
        nv,
        nr,
        d,
        params.entity.iter().map(|&v| v as f32).collect(),
        params.relation.iter().map(|&v| v as f32).collect(),
    )?;
    Ok((model, report))
}

/// Full-data training objective of `model` on `kg`'s training split.
pub fn training_loss(model: &KgeModel, kg: &KnowledgeGraph, n3_weight: f64) -> f64 {
    let examples: Vec<Triple> = kg.triples(Split::Train).copied().collect();
    let params = Embeddings {
        entity: model.entity.iter().map(|&v| v as f64).collect(),
        relation: model.relation.iter().map(|&v| v as f64).collect(),
    };
    let objective = Objective {
        num_entities: model.num_entities,
        dim: model.dim,
        n3_weight,
    };
    objective.loss_and_grad(&params, &examples, &mut params.zeros_like())
}
