//! Joint training of the calibration and adapter parameters from labeled
//! queries, plus the parameter file format.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adjacency::{CalibrationParams, NeuralAdjacencyMatrix};
use crate::binio::{LeReader, LeWriter};
use crate::error::{Error, Result};
use crate::executor::{AdapterHops, AdapterParams, Executor, Gradients};
use crate::kg::{EntityId, RelationId};
use crate::query::{LabeledQuery, Structure};
use crate::type_graphs::{Side, TypedEntityRelationGraphs};

const PROB_FLOOR: f64 = 1e-9;

fn check_answers(n: usize, answers: &BTreeSet<EntityId>) -> Result<()> {
    if answers.is_empty() {
        return Err(Error::Precondition("answer set is empty".into()));
    }
    if answers.len() >= n {
        return Err(Error::Precondition("answer set covers every entity".into()));
    }
    if answers.iter().any(|&a| a as usize >= n) {
        return Err(Error::Precondition("answer id out of range".into()));
    }
    Ok(())
}

/// Balanced binary cross-entropy between `output` and the answer set.
pub fn bce_loss(output: &[f64], answers: &BTreeSet<EntityId>) -> Result<f64> {
    Ok(bce_loss_and_grad(output, answers)?.0)
}

/// Loss and its derivative with respect to every output component.
pub fn bce_loss_and_grad(output: &[f64], answers: &BTreeSet<EntityId>) -> Result<(f64, Vec<f64>)> {
    let n = output.len();
    check_answers(n, answers)?;
    let pos = answers.len() as f64;
    let neg = (n - answers.len()) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for (j, &p) in output.iter().enumerate() {
        let pc = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        let inside = p == pc;
        if answers.contains(&(j as EntityId)) {
            loss -= pc.ln() / pos;
            if inside {
                grad[j] = -1.0 / (pos * pc);
            }
        } else {
            loss -= (1.0 - pc).ln() / neg;
            if inside {
                grad[j] = 1.0 / (neg * (1.0 - pc));
            }
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub structures: Vec<Structure>,
    /// Multiplier applied to the learning rate after each epoch.
    pub lr_decay: f64,
    pub adagrad_eps: f64,
    pub seed: u64,
    pub hops: AdapterHops,
    pub targets: Targets,
}

/// Which labeled answers a training query is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Targets {
    /// Easy answers only.
    Easy,
    /// Easy and hard answers. Identical to `Easy` for queries labeled on the
    /// training graph; with validation-labeled queries the hard answers carry
    /// the held-out signal.
    #[default]
    All,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            epochs: 10,
            batch_size: 64,
            structures: Structure::ADAPTER_TRAINING.to_vec(),
            lr_decay: 0.9,
            adagrad_eps: 1e-10,
            seed: 0,
            hops: AdapterHops::All,
            targets: Targets::All,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Precondition(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Precondition("batch size must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return Err(Error::Precondition(format!("lr decay must be positive, got {}", self.lr_decay)));
        }
        Ok(())
    }
}

/// Sum of squared gradients per parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub alpha: BTreeMap<(EntityId, RelationId), f64>,
    pub beta: BTreeMap<(EntityId, RelationId), f64>,
    pub gamma: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub calibration: CalibrationParams,
    pub adapter: AdapterParams,
    pub optimizer: OptimizerState,
    /// Mean training loss observed during each epoch.
    pub loss_history: Vec<f64>,
    /// Queries dropped before training (wrong structure or degenerate answers).
    pub skipped: usize,
}

impl TrainState {
    pub fn new(num_relations: usize) -> Self {
        Self {
            calibration: CalibrationParams::new(),
            adapter: AdapterParams::zeros(num_relations),
            optimizer: OptimizerState {
                gamma: vec![0.0; num_relations],
                mu: vec![0.0; num_relations],
                ..Default::default()
            },
            loss_history: Vec::new(),
            skipped: 0,
        }
    }

    fn apply(&mut self, grads: &Gradients, lr: f64, eps: f64) {
        let step = |p: &mut f64, acc: &mut f64, g: f64| {
            if g != 0.0 {
                *acc += g * g;
                *p -= lr * g / (acc.sqrt() + eps);
            }
        };
        for (&(e, r), &g) in &grads.alpha {
            if g != 0.0 {
                step(self.calibration.alpha_mut(e, r), self.optimizer.alpha.entry((e, r)).or_default(), g);
            }
        }
        for (&(e, r), &g) in &grads.beta {
            if g != 0.0 {
                step(self.calibration.beta_mut(e, r), self.optimizer.beta.entry((e, r)).or_default(), g);
            }
        }
        for (r, &g) in grads.gamma.iter().enumerate() {
            step(&mut self.adapter.gamma[r], &mut self.optimizer.gamma[r], g);
        }
        for (r, &g) in grads.mu.iter().enumerate() {
            step(&mut self.adapter.mu[r], &mut self.optimizer.mu[r], g);
        }
    }
}

/// Loss and parameter gradients of one query under `executor`.
pub fn query_loss_and_grad(
    executor: &Executor<'_>,
    query: &crate::query::Query,
    answers: &BTreeSet<EntityId>,
) -> Result<(f64, Gradients)> {
    let trace = executor.trace(query)?;
    let (loss, grad_out) = bce_loss_and_grad(trace.output().values(), answers)?;
    let grads = executor.backward(query, &trace, &grad_out)?;
    Ok((loss, grads))
}

/// Trains calibration and adapter parameters jointly with Adagrad.
///
/// Training targets are chosen by `config.targets`. Queries of other
/// structures, and queries whose target set is empty or covers every entity,
/// are skipped.
pub fn train_adapter(
    matrix: &NeuralAdjacencyMatrix,
    graphs: &TypedEntityRelationGraphs,
    queries: &[LabeledQuery],
    config: &TrainConfig,
) -> Result<TrainState> {
    config.validate()?;
    let nv = matrix.num_entities();
    let nr = matrix.num_relations();
    let mut state = TrainState::new(nr);

    let selected: Vec<(usize, &LabeledQuery, BTreeSet<EntityId>)> = queries
        .iter()
        .enumerate()
        .filter(|(_, q)| {
            let s = q.ast.structure.or_else(|| Structure::of(&q.ast.root));
            s.is_some_and(|s| config.structures.contains(&s))
        })
        .map(|(i, q)| {
            let answers = match config.targets {
                Targets::Easy => q.easy.clone(),
                Targets::All => q.easy.union(&q.hard).copied().collect(),
            };
            (i, q, answers)
        })
        .filter(|(_, _, a)| !a.is_empty() && a.len() < nv)
        .collect();
    state.skipped = queries.len() - selected.len();
    if state.skipped > 0 {
        log::warn!("skipping {} of {} training queries", state.skipped, queries.len());
    }
    for (_, q, _) in &selected {
        q.ast.root.validate(nv, nr)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..selected.len()).collect();
    let mut lr = config.learning_rate;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let executor = Executor::new(matrix, &state.calibration, &state.adapter, graphs)?.with_hops(config.hops);
            let run = |&k: &usize| {
                let (id, q, answers) = &selected[k];
                let (loss, grads) = query_loss_and_grad(&executor, &q.ast.root, answers)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("loss is {loss} on query {id} (epoch {epoch})")));
                }
                Ok((loss, grads))
            };
            #[cfg(feature = "parallel")]
            let results: Vec<Result<(f64, Gradients)>> = {
                use rayon::prelude::*;
                batch.par_iter().map(run).collect()
            };
            #[cfg(not(feature = "parallel"))]
            let results: Vec<Result<(f64, Gradients)>> = batch.iter().map(run).collect();

            let mut total = Gradients::zeros(nr);
            for r in results {
                let (loss, grads) = r?;
                epoch_loss += loss;
                total.merge(&grads);
            }
            total.scale(1.0 / batch.len() as f64);
            state.apply(&total, lr, config.adagrad_eps);
        }
        let mean = if selected.is_empty() {
            0.0
        } else {
            epoch_loss / selected.len() as f64
        };
        log::info!("epoch {epoch}: loss {mean:.6}");
        state.loss_history.push(mean);
        lr *= config.lr_decay;
    }
    Ok(state)
}

const PARAMS_MAGIC: &[u8; 4] = b"TPRM";
const PARAMS_VERSION: u8 = 1;

/// Everything `answer` and `evaluate` need besides the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamsFile {
    pub calibration: CalibrationParams,
    pub adapter: AdapterParams,
    pub graphs: TypedEntityRelationGraphs,
}

impl ParamsFile {
    /// Zero parameters for the given compatibility graphs.
    pub fn neutral(graphs: TypedEntityRelationGraphs) -> Self {
        Self {
            calibration: CalibrationParams::new(),
            adapter: AdapterParams::zeros(graphs.num_relations()),
            graphs,
        }
    }

    pub fn executor<'a>(&'a self, matrix: &'a NeuralAdjacencyMatrix) -> Result<Executor<'a>> {
        Executor::new(matrix, &self.calibration, &self.adapter, &self.graphs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, out: W) -> std::io::Result<()> {
        let nv = self.graphs.num_entities();
        let nr = self.graphs.num_relations();
        let mut w = LeWriter::new(out);
        w.bytes(PARAMS_MAGIC)?;
        w.u8(PARAMS_VERSION)?;
        w.u32(nv as u32)?;
        w.u32(nr as u32)?;
        for entries in [
            self.calibration.alphas().collect::<Vec<_>>(),
            self.calibration.betas().collect::<Vec<_>>(),
        ] {
            w.u64(entries.len() as u64)?;
            for (&(e, r), &v) in entries {
                w.u32(e)?;
                w.u32(r)?;
                w.f64(v)?;
            }
        }
        for &v in self.adapter.gamma.iter().chain(&self.adapter.mu) {
            w.f64(v)?;
        }
        for side in [Side::Head, Side::Tail] {
            for r in 0..nr {
                w.bits(self.graphs.compat_mask(r as RelationId, side))?;
            }
        }
        Ok(())
    }

    /// Loads a parameter file and checks it against `matrix`.
    pub fn load(path: impl AsRef<Path>, matrix: &NeuralAdjacencyMatrix) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let params = Self::read_from(BufReader::new(file))?;
        params.check_against(matrix)?;
        Ok(params)
    }

    pub fn check_against(&self, matrix: &NeuralAdjacencyMatrix) -> Result<()> {
        if self.graphs.num_relations() != matrix.num_relations() || self.graphs.num_entities() != matrix.num_entities()
        {
            return Err(Error::Dimension(format!(
                "parameters cover {} entities and {} relations, matrix has {} and {}",
                self.graphs.num_entities(),
                self.graphs.num_relations(),
                matrix.num_entities(),
                matrix.num_relations()
            )));
        }
        self.calibration.validate(matrix)
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut rd = LeReader::new(input);
        rd.magic(PARAMS_MAGIC)?;
        let version = rd.u8()?;
        if version != PARAMS_VERSION {
            return Err(Error::Format(format!("unsupported parameter file version {version}")));
        }
        let nv = rd.u32()? as usize;
        let nr = rd.u32()? as usize;
        let mut calibration = CalibrationParams::new();
        for which in 0..2 {
            let count = rd.len((nv as u64).saturating_mul(nr as u64), "calibration entries")?;
            for _ in 0..count {
                let (e, r, v) = (rd.u32()?, rd.u32()?, rd.f64()?);
                if e as usize >= nv || r as usize >= nr {
                    return Err(Error::Format(format!("calibration key ({e}, {r}) out of range")));
                }
                if which == 0 {
                    calibration.set_alpha(e, r, v);
                } else {
                    calibration.set_beta(e, r, v);
                }
            }
        }
        let mut dense = |n| (0..n).map(|_| rd.f64()).collect::<Result<Vec<f64>>>();
        let gamma = dense(nr)?;
        let mu = dense(nr)?;
        if gamma.iter().chain(&mu).any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite adapter value".into()));
        }
        let mut masks = [Vec::with_capacity(nr), Vec::with_capacity(nr)];
        for m in &mut masks {
            for _ in 0..nr {
                m.push(rd.bits(nv)?);
            }
        }
        rd.expect_eof()?;
        let [head, tail] = masks;
        let graphs = if nr == 0 {
            TypedEntityRelationGraphs::empty(nv, 0)
        } else {
            TypedEntityRelationGraphs::from_masks(head, tail)?
        };
        Ok(Self {
            calibration,
            adapter: AdapterParams { gamma, mu },
            graphs,
        })
    }
}
