//! Fuzzy-logic query execution over the calibrated adjacency matrix.
//!
//! Projection is max-product: `T_j = max_i x_i * M_r[i, j]`. A negated
//! projection returns `1 - T_j`. After each projection the type-based adapter
//! rescales tail-compatible entities, `q_j = clamp(T_j (1 + gamma_r) + mu_r, 0, 1)`.
//! Conjunction and disjunction use the product t-norm and its t-conorm.
//!
//! Execution records the argmax source of every projected entity, which is
//! enough to replay the forward pass and to route subgradients backwards.

use std::collections::BTreeMap;

use crate::adjacency::{calibrate, calibrate_with_grad, CalibrationParams, NeuralAdjacencyMatrix};
use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationId};
use crate::query::Query;
use crate::type_graphs::TypedEntityRelationGraphs;

/// Membership degrees in `[0, 1]`, one per entity.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyVector(Vec<f64>);

impl FuzzyVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Precondition(format!("fuzzy membership {v} outside [0, 1]")));
        }
        Ok(Self(values))
    }

    pub fn one_hot(len: usize, index: EntityId) -> Self {
        let mut v = vec![0.0; len];
        v[index as usize] = 1.0;
        Self(v)
    }

    pub fn constant(len: usize, value: f64) -> Self {
        Self(vec![value.clamp(0.0, 1.0); len])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Entities with membership strictly above `threshold`.
    pub fn above(&self, threshold: f64) -> Vec<EntityId> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > threshold)
            .map(|(i, _)| i as EntityId)
            .collect()
    }

    /// Entities by descending membership, ties by ascending id.
    pub fn ranked(&self) -> Vec<(EntityId, f64)> {
        let mut v: Vec<(EntityId, f64)> = self.0.iter().enumerate().map(|(i, &s)| (i as EntityId, s)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }
}

/// Product t-norm, componentwise.
pub fn t_and(xs: &[&FuzzyVector]) -> Result<FuzzyVector> {
    fold(xs, |a, b| a * b)
}

/// Product t-conorm `a + b - ab`, folded left.
pub fn t_or(xs: &[&FuzzyVector]) -> Result<FuzzyVector> {
    fold(xs, |a, b| a + b - a * b)
}

fn fold(xs: &[&FuzzyVector], op: impl Fn(f64, f64) -> f64) -> Result<FuzzyVector> {
    let (first, rest) = xs
        .split_first()
        .ok_or_else(|| Error::Precondition("t-norm needs at least one operand".into()))?;
    let mut acc = first.0.clone();
    for x in rest {
        if x.len() != acc.len() {
            return Err(Error::Dimension("fuzzy vectors differ in length".into()));
        }
        for (a, &b) in acc.iter_mut().zip(&x.0) {
            *a = op(*a, b);
        }
    }
    Ok(FuzzyVector(acc))
}

/// Per-relation adapter parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub gamma: Vec<f64>,
    pub mu: Vec<f64>,
}

impl AdapterParams {
    pub fn zeros(num_relations: usize) -> Self {
        Self {
            gamma: vec![0.0; num_relations],
            mu: vec![0.0; num_relations],
        }
    }

    pub fn is_neutral(&self) -> bool {
        self.gamma.iter().chain(&self.mu).all(|&v| v == 0.0)
    }
}

/// Adapter applied to `t` for a tail-compatible entity.
pub fn adapt(t: f64, gamma: f64, mu: f64) -> f64 {
    (t * (1.0 + gamma) + mu).clamp(0.0, 1.0)
}

/// Which projections get the adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdapterHops {
    #[default]
    All,
    /// Only projections applied directly to an anchor.
    AnchorOnly,
}

#[derive(Debug, Clone)]
pub enum TraceNode {
    Anchor {
        output: FuzzyVector,
    },
    Projection {
        relation: RelationId,
        negated: bool,
        adapted: bool,
        /// Max-product result before negation and adapter.
        best: Vec<f64>,
        /// Argmax source per target, `None` when nothing contributes.
        sources: Vec<Option<EntityId>>,
        /// Calibrated matrix entry at the argmax source.
        entries: Vec<f64>,
        output: FuzzyVector,
        child: Box<TraceNode>,
    },
    And {
        output: FuzzyVector,
        children: Vec<TraceNode>,
    },
    Or {
        output: FuzzyVector,
        children: Vec<TraceNode>,
    },
}

impl TraceNode {
    pub fn output(&self) -> &FuzzyVector {
        match self {
            TraceNode::Anchor { output }
            | TraceNode::Projection { output, .. }
            | TraceNode::And { output, .. }
            | TraceNode::Or { output, .. } => output,
        }
    }
}

/// Intermediate values of one execution, mirroring the query tree.
#[derive(Debug, Clone)]
pub struct ExecutionTrace {
    pub root: TraceNode,
}

impl ExecutionTrace {
    pub fn output(&self) -> &FuzzyVector {
        self.root.output()
    }

    /// Argmax witnesses `(source, relation, target)` explaining `answer`,
    /// listed from the anchors outwards.
    pub fn witnesses(&self, answer: EntityId) -> Vec<(EntityId, RelationId, EntityId)> {
        fn walk(node: &TraceNode, target: EntityId, out: &mut Vec<(EntityId, RelationId, EntityId)>) {
            match node {
                TraceNode::Anchor { .. } => {}
                TraceNode::Projection {
                    relation,
                    negated,
                    sources,
                    child,
                    ..
                } => {
                    if let Some(src) = sources[target as usize] {
                        walk(child, src, out);
                        if !negated {
                            out.push((src, *relation, target));
                        }
                    }
                }
                TraceNode::And { children, .. } | TraceNode::Or { children, .. } => {
                    for c in children {
                        walk(c, target, out);
                    }
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, answer, &mut out);
        out
    }
}

/// Gradients of a scalar loss with respect to all trainable parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub alpha: BTreeMap<(EntityId, RelationId), f64>,
    pub beta: BTreeMap<(EntityId, RelationId), f64>,
    pub gamma: Vec<f64>,
    pub mu: Vec<f64>,
}

impl Gradients {
    pub fn zeros(num_relations: usize) -> Self {
        Self {
            alpha: BTreeMap::new(),
            beta: BTreeMap::new(),
            gamma: vec![0.0; num_relations],
            mu: vec![0.0; num_relations],
        }
    }

    /// Adds `other` into `self`.
    pub fn merge(&mut self, other: &Gradients) {
        for (k, v) in &other.alpha {
            *self.alpha.entry(*k).or_insert(0.0) += v;
        }
        for (k, v) in &other.beta {
            *self.beta.entry(*k).or_insert(0.0) += v;
        }
        for (a, b) in self.gamma.iter_mut().zip(&other.gamma) {
            *a += b;
        }
        for (a, b) in self.mu.iter_mut().zip(&other.mu) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.alpha.values_mut().chain(self.beta.values_mut()).for_each(|v| *v *= factor);
        self.gamma.iter_mut().chain(self.mu.iter_mut()).for_each(|v| *v *= factor);
    }
}

/// Executes queries against one matrix and parameter set.
#[derive(Debug, Clone, Copy)]
pub struct Executor<'a> {
    pub matrix: &'a NeuralAdjacencyMatrix,
    pub calibration: &'a CalibrationParams,
    pub adapter: &'a AdapterParams,
    pub graphs: &'a TypedEntityRelationGraphs,
    pub hops: AdapterHops,
}

impl<'a> Executor<'a> {
    pub fn new(
        matrix: &'a NeuralAdjacencyMatrix,
        calibration: &'a CalibrationParams,
        adapter: &'a AdapterParams,
        graphs: &'a TypedEntityRelationGraphs,
    ) -> Result<Self> {
        let (nv, nr) = (matrix.num_entities(), matrix.num_relations());
        if graphs.num_entities() != nv || graphs.num_relations() != nr {
            return Err(Error::Dimension("type graphs do not match the matrix".into()));
        }
        if adapter.gamma.len() != nr || adapter.mu.len() != nr {
            return Err(Error::Dimension(format!(
                "adapter has {} relations, matrix has {nr}",
                adapter.gamma.len()
            )));
        }
        Ok(Self {
            matrix,
            calibration,
            adapter,
            graphs,
            hops: AdapterHops::All,
        })
    }

    pub fn with_hops(mut self, hops: AdapterHops) -> Self {
        self.hops = hops;
        self
    }

    fn num_entities(&self) -> usize {
        self.matrix.num_entities()
    }

    /// Evaluates `query` and returns the answer vector.
    pub fn execute(&self, query: &Query) -> Result<FuzzyVector> {
        Ok(self.trace(query)?.root.output().clone())
    }

    /// Evaluates `query`, keeping every intermediate vector.
    pub fn trace(&self, query: &Query) -> Result<ExecutionTrace> {
        query.validate(self.num_entities(), self.matrix.num_relations())?;
        Ok(ExecutionTrace {
            root: self.eval(query),
        })
    }

    fn eval(&self, query: &Query) -> TraceNode {
        match query {
            Query::Anchor(e) => TraceNode::Anchor {
                output: FuzzyVector::one_hot(self.num_entities(), *e),
            },
            Query::Projection {
                relation,
                negated,
                child,
            } => {
                let child_trace = self.eval(child);
                let adapted = match self.hops {
                    AdapterHops::All => true,
                    AdapterHops::AnchorOnly => matches!(**child, Query::Anchor(_)),
                };
                self.project(child_trace, *relation, *negated, adapted)
            }
            Query::And(cs) => {
                let children: Vec<TraceNode> = cs.iter().map(|c| self.eval(c)).collect();
                let outs: Vec<&FuzzyVector> = children.iter().map(TraceNode::output).collect();
                let output = t_and(&outs).expect("children share the entity count");
                TraceNode::And { output, children }
            }
            Query::Or(cs) => {
                let children: Vec<TraceNode> = cs.iter().map(|c| self.eval(c)).collect();
                let outs: Vec<&FuzzyVector> = children.iter().map(TraceNode::output).collect();
                let output = t_or(&outs).expect("children share the entity count");
                TraceNode::Or { output, children }
            }
        }
    }

    fn project(&self, child: TraceNode, r: RelationId, negated: bool, adapted: bool) -> TraceNode {
        let n = self.num_entities();
        let delta = self.matrix.delta();
        let x = child.output().values();
        let mut best = vec![0.0; n];
        let mut sources = vec![None; n];
        let mut entries = vec![0.0; n];
        for (i, &xi) in x.iter().enumerate() {
            if xi <= 0.0 {
                continue;
            }
            let i = i as EntityId;
            let row = self.matrix.row(i, r);
            if row.is_empty() {
                continue;
            }
            let (alpha, beta) = (self.calibration.alpha(i, r), self.calibration.beta(i, r));
            for (j, base, observed) in row.iter() {
                let c = if observed {
                    1.0
                } else {
                    calibrate(base as f64, alpha, beta, delta)
                };
                let v = xi * c;
                let j = j as usize;
                // strict comparison keeps the lowest source id on ties
                if v > best[j] {
                    best[j] = v;
                    sources[j] = Some(i);
                    entries[j] = c;
                }
            }
        }
        let (gamma, mu) = (self.adapter.gamma[r as usize], self.adapter.mu[r as usize]);
        let tail = self.graphs.compat_mask(r, crate::type_graphs::Side::Tail);
        let output = best
            .iter()
            .enumerate()
            .map(|(j, &b)| {
                let t = if negated { 1.0 - b } else { b };
                if adapted && tail[j] {
                    adapt(t, gamma, mu)
                } else {
                    t
                }
            })
            .collect();
        TraceNode::Projection {
            relation: r,
            negated,
            adapted,
            best,
            sources,
            entries,
            output: FuzzyVector(output),
            child: Box::new(child),
        }
    }

    /// Reverse pass: gradients of a loss whose derivative with respect to the
    /// root output is `grad_out`.
    ///
    /// Max nodes route gradient to the recorded argmax source, saturated
    /// clamps pass none.
    pub fn backward(&self, query: &Query, trace: &ExecutionTrace, grad_out: &[f64]) -> Result<Gradients> {
        if grad_out.len() != self.num_entities() {
            return Err(Error::Contract(format!(
                "gradient has length {}, expected {}",
                grad_out.len(),
                self.num_entities()
            )));
        }
        let mut grads = Gradients::zeros(self.matrix.num_relations());
        self.back(query, &trace.root, grad_out.to_vec(), &mut grads)?;
        Ok(grads)
    }

    fn back(&self, query: &Query, node: &TraceNode, g: Vec<f64>, grads: &mut Gradients) -> Result<()> {
        match (query, node) {
            (Query::Anchor(_), TraceNode::Anchor { .. }) => Ok(()),
            (
                Query::Projection {
                    relation,
                    negated,
                    child,
                },
                TraceNode::Projection {
                    relation: tr,
                    negated: tn,
                    adapted,
                    best,
                    sources,
                    entries,
                    child: child_trace,
                    ..
                },
            ) if relation == tr && negated == tn => {
                let r = *relation;
                let (gamma, mu) = (self.adapter.gamma[r as usize], self.adapter.mu[r as usize]);
                let tail = self.graphs.compat_mask(r, crate::type_graphs::Side::Tail);
                let x = child_trace.output().values();
                let delta = self.matrix.delta();
                let mut gx = vec![0.0; x.len()];
                for j in 0..g.len() {
                    if g[j] == 0.0 {
                        continue;
                    }
                    let t = if *negated { 1.0 - best[j] } else { best[j] };
                    let g_t = if *adapted && tail[j] {
                        let pre = t * (1.0 + gamma) + mu;
                        if pre > 0.0 && pre < 1.0 {
                            grads.gamma[r as usize] += g[j] * t;
                            grads.mu[r as usize] += g[j];
                            g[j] * (1.0 + gamma)
                        } else {
                            0.0
                        }
                    } else {
                        g[j]
                    };
                    let g_best = if *negated { -g_t } else { g_t };
                    let Some(i) = sources[j] else { continue };
                    if g_best == 0.0 {
                        continue;
                    }
                    gx[i as usize] += g_best * entries[j];
                    let g_entry = g_best * x[i as usize];
                    if let Some((base, false)) = self.matrix.base_entry(i, r, j as EntityId) {
                        let (alpha, beta) = (self.calibration.alpha(i, r), self.calibration.beta(i, r));
                        let (_, d_alpha, d_beta) = calibrate_with_grad(base as f64, alpha, beta, delta);
                        if d_beta != 0.0 {
                            *grads.alpha.entry((i, r)).or_insert(0.0) += g_entry * d_alpha;
                            *grads.beta.entry((i, r)).or_insert(0.0) += g_entry * d_beta;
                        }
                    }
                }
                self.back(child, child_trace, gx, grads)
            }
            (Query::And(cs), TraceNode::And { children, .. }) if cs.len() == children.len() => {
                let outs: Vec<&[f64]> = children.iter().map(|c| c.output().values()).collect();
                for (k, (q, c)) in cs.iter().zip(children).enumerate() {
                    let gk = leave_one_out(&g, &outs, k, |v| v);
                    self.back(q, c, gk, grads)?;
                }
                Ok(())
            }
            (Query::Or(cs), TraceNode::Or { children, .. }) if cs.len() == children.len() => {
                let outs: Vec<&[f64]> = children.iter().map(|c| c.output().values()).collect();
                for (k, (q, c)) in cs.iter().zip(children).enumerate() {
                    let gk = leave_one_out(&g, &outs, k, |v| 1.0 - v);
                    self.back(q, c, gk, grads)?;
                }
                Ok(())
            }
            _ => Err(Error::Contract("execution trace does not match the query".into())),
        }
    }
}

/// `g_j * prod_{m != k} f(outs[m][j])`.
fn leave_one_out(g: &[f64], outs: &[&[f64]], k: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    g.iter()
        .enumerate()
        .map(|(j, &gj)| {
            outs.iter()
                .enumerate()
                .filter(|(m, _)| *m != k)
                .fold(gj, |acc, (_, o)| acc * f(o[j]))
        })
        .collect()
}

/// Replays a projection from its recorded sources.
pub fn replay(node: &TraceNode, adapter: &AdapterParams, graphs: &TypedEntityRelationGraphs) -> Option<Vec<f64>> {
    let TraceNode::Projection {
        relation,
        negated,
        adapted,
        sources,
        entries,
        child,
        ..
    } = node
    else {
        return None;
    };
    let x = child.output().values();
    let tail = graphs.compat_mask(*relation, crate::type_graphs::Side::Tail);
    let (gamma, mu) = (adapter.gamma[*relation as usize], adapter.mu[*relation as usize]);
    Some(
        sources
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let b = s.map_or(0.0, |i| x[i as usize] * entries[j]);
                let t = if *negated { 1.0 - b } else { b };
                if *adapted && tail[j] {
                    adapt(t, gamma, mu)
                } else {
                    t
                }
            })
            .collect(),
    )
}
