//! Sparse per-relation neural adjacency matrix.
//!
//! Rows hold softmax-normalized KGE scores scaled by the observed tail count
//! of `(head, relation)`. The learnable affine calibration and the clamp into
//! `[delta, 1 - delta]` are applied at read time, so the stored base values
//! never change while calibration parameters are trained.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::binio::{LeReader, LeWriter};
use crate::error::{Error, Result};
use crate::kg::{EdgeIndex, EntityId, GraphView, KnowledgeGraph, RelationId};
use crate::kge::KgeModel;
use crate::type_graphs::TypedEntityRelationGraphs;

const MATRIX_MAGIC: &[u8; 4] = b"TADJ";
const MATRIX_VERSION: u8 = 1;

/// Clamp floor applied to calibrated predictions.
pub const DEFAULT_DELTA: f64 = 1e-4;
/// Base values below this are not stored.
pub const DEFAULT_EPS: f64 = 2e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    pub eps: f64,
    pub delta: f64,
    /// Skip rows whose `(head, relation)` pair is not head-compatible.
    pub type_skip: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            delta: DEFAULT_DELTA,
            type_skip: true,
        }
    }
}

/// Compressed rows of one relation.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationRows {
    computed: Vec<bool>,
    row_offsets: Vec<u64>,
    cols: Vec<u32>,
    values: Vec<f32>,
    observed: Vec<bool>,
    tail_counts: Vec<u32>,
}

impl RelationRows {
    fn empty(num_entities: usize) -> Self {
        Self {
            computed: vec![false; num_entities],
            row_offsets: vec![0; num_entities + 1],
            cols: Vec::new(),
            values: Vec::new(),
            observed: Vec::new(),
            tail_counts: vec![0; num_entities],
        }
    }

    fn assemble(num_entities: usize, rows: Vec<Row>, tail_counts: Vec<u32>) -> Self {
        let mut out = Self::empty(num_entities);
        out.tail_counts = tail_counts;
        for (h, row) in rows.into_iter().enumerate() {
            out.computed[h] = row.computed;
            for (j, v, obs) in row.entries {
                out.cols.push(j);
                out.values.push(v);
                out.observed.push(obs);
            }
            out.row_offsets[h + 1] = out.cols.len() as u64;
        }
        out
    }

    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }
}

/// Borrowed view of one stored row. Columns are strictly increasing.
#[derive(Debug, Clone, Copy)]
pub struct RowView<'a> {
    pub cols: &'a [u32],
    pub values: &'a [f32],
    pub observed: &'a [bool],
}

impl<'a> RowView<'a> {
    pub fn find(&self, col: EntityId) -> Option<usize> {
        self.cols.binary_search(&col).ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = (EntityId, f32, bool)> + 'a {
        let (c, v, o) = (self.cols, self.values, self.observed);
        (0..c.len()).map(move |k| (c[k], v[k], o[k]))
    }

    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }
}

struct Row {
    computed: bool,
    entries: Vec<(u32, f32, bool)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralAdjacencyMatrix {
    num_entities: usize,
    delta: f64,
    eps: f64,
    relations: Vec<RelationRows>,
}

/// Storage accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageReport {
    pub stored_entries: usize,
    pub observed_entries: usize,
    pub skipped_rows: usize,
    pub bytes: usize,
}

/// Softmax of `scores` with max subtraction.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Softmax of a KGE score row scaled by `max(tail_count, 1)`.
pub fn scaled_row(scores: &[f64], tail_count: usize) -> Vec<f64> {
    let scale = tail_count.max(1) as f64;
    softmax(scores).into_iter().map(|p| p * scale).collect()
}

/// Affine calibration followed by the `[delta, 1 - delta]` clamp.
pub fn calibrate(base: f64, alpha: f64, beta: f64, delta: f64) -> f64 {
    (base * (1.0 + alpha) + beta).clamp(delta, 1.0 - delta)
}

/// Calibrated value and its partial derivatives in `alpha` and `beta`
/// (zero when the clamp is active).
pub fn calibrate_with_grad(base: f64, alpha: f64, beta: f64, delta: f64) -> (f64, f64, f64) {
    let raw = base * (1.0 + alpha) + beta;
    if raw > delta && raw < 1.0 - delta {
        (raw, base, 1.0)
    } else {
        (raw.clamp(delta, 1.0 - delta), 0.0, 0.0)
    }
}

impl NeuralAdjacencyMatrix {
    /// Materializes base rows from `model` for the training split of `kg`.
    pub fn build(
        model: &KgeModel,
        kg: &KnowledgeGraph,
        graphs: &TypedEntityRelationGraphs,
        options: BuildOptions,
    ) -> Result<Self> {
        if options.eps.is_nan() || options.eps < 0.0 {
            return Err(Error::Precondition(format!("eps must be >= 0, got {}", options.eps)));
        }
        check_delta(options.delta)?;
        let nv = kg.num_entities();
        let nr = kg.num_relations();
        if model.num_entities() != nv || model.num_relations() != nr {
            return Err(Error::Dimension(format!(
                "model has |V|={}, |R|={} but graph has |V|={nv}, |R|={nr}",
                model.num_entities(),
                model.num_relations()
            )));
        }
        if graphs.num_entities() != nv || graphs.num_relations() != nr {
            return Err(Error::Dimension("type graphs do not match the knowledge graph".into()));
        }
        let train = kg.graph_view(GraphView::Train);
        let mut relations = Vec::with_capacity(nr);
        for r in 0..nr as RelationId {
            let tail_counts: Vec<u32> = (0..nv as EntityId).map(|h| train.tails(h, r).len() as u32).collect();
            let make_row = |h: usize| -> Row {
                let observed = train.tails(h as EntityId, r);
                if options.type_skip && !graphs.is_head_compatible(h as EntityId, r) {
                    // observed edges are kept even on skipped rows
                    return Row {
                        computed: false,
                        entries: observed.iter().map(|&t| (t, 1.0, true)).collect(),
                    };
                }
                let row = scaled_row(&model.score_row(h as EntityId, r), observed.len());
                let entries = row
                    .iter()
                    .enumerate()
                    .filter_map(|(j, &p)| {
                        let obs = observed.binary_search(&(j as u32)).is_ok();
                        let v = p as f32;
                        (obs || (p >= options.eps && v > 0.0)).then_some((j as u32, v, obs))
                    })
                    .collect();
                Row { computed: true, entries }
            };
            #[cfg(feature = "parallel")]
            let rows: Vec<Row> = (0..nv).into_par_iter().map(make_row).collect();
            #[cfg(not(feature = "parallel"))]
            let rows: Vec<Row> = (0..nv).map(make_row).collect();
            relations.push(RelationRows::assemble(nv, rows, tail_counts));
        }
        Ok(Self {
            num_entities: nv,
            delta: options.delta,
            eps: options.eps,
            relations,
        })
    }

    /// Matrix holding only the edges of `edges`, each flagged observed.
    /// Every other entry reads as zero.
    pub fn exact(edges: &EdgeIndex, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        let nv = edges.num_entities();
        let nr = edges.num_relations();
        let mut relations = Vec::with_capacity(nr);
        for r in 0..nr as RelationId {
            let mut tail_counts = vec![0u32; nv];
            let rows = (0..nv as EntityId)
                .map(|h| {
                    let tails = edges.tails(h, r);
                    tail_counts[h as usize] = tails.len() as u32;
                    Row {
                        computed: !tails.is_empty(),
                        entries: tails.iter().map(|&t| (t, 1.0, true)).collect(),
                    }
                })
                .collect();
            relations.push(RelationRows::assemble(nv, rows, tail_counts));
        }
        Ok(Self {
            num_entities: nv,
            delta,
            eps: 0.0,
            relations,
        })
    }

    /// Matrix from explicit `(head, relation, tail, base value, observed)`
    /// entries. Rows that receive an entry are marked computed; observed
    /// entries count towards the tail counts.
    pub fn from_entries(
        num_entities: usize,
        num_relations: usize,
        delta: f64,
        entries: impl IntoIterator<Item = (EntityId, RelationId, EntityId, f32, bool)>,
    ) -> Result<Self> {
        check_delta(delta)?;
        let mut rows: Vec<Vec<Vec<(u32, f32, bool)>>> = vec![vec![Vec::new(); num_entities]; num_relations];
        for (h, r, t, v, obs) in entries {
            if h as usize >= num_entities || t as usize >= num_entities || r as usize >= num_relations {
                return Err(Error::Dimension(format!("entry ({h}, {r}, {t}) out of range")));
            }
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::NonFinite(format!("entry ({h}, {r}, {t}) has value {v}")));
            }
            rows[r as usize][h as usize].push((t, v, obs));
        }
        let relations = rows
            .into_iter()
            .map(|per_head| {
                let mut tail_counts = vec![0u32; num_entities];
                let rows = per_head
                    .into_iter()
                    .enumerate()
                    .map(|(h, mut entries)| {
                        entries.sort_by_key(|e| e.0);
                        entries.dedup_by_key(|e| e.0);
                        tail_counts[h] = entries.iter().filter(|e| e.2).count() as u32;
                        Row {
                            computed: !entries.is_empty(),
                            entries,
                        }
                    })
                    .collect();
                RelationRows::assemble(num_entities, rows, tail_counts)
            })
            .collect();
        Ok(Self {
            num_entities,
            delta,
            eps: 0.0,
            relations,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Replaces the clamp floor used by calibrated reads.
    pub fn set_delta(&mut self, delta: f64) -> Result<()> {
        check_delta(delta)?;
        self.delta = delta;
        Ok(())
    }

    pub fn is_computed(&self, head: EntityId, r: RelationId) -> bool {
        self.relations[r as usize].computed[head as usize]
    }

    pub fn tail_count(&self, head: EntityId, r: RelationId) -> u32 {
        self.relations[r as usize].tail_counts[head as usize]
    }

    pub fn row(&self, head: EntityId, r: RelationId) -> RowView<'_> {
        let rel = &self.relations[r as usize];
        let lo = rel.row_offsets[head as usize] as usize;
        let hi = rel.row_offsets[head as usize + 1] as usize;
        RowView {
            cols: &rel.cols[lo..hi],
            values: &rel.values[lo..hi],
            observed: &rel.observed[lo..hi],
        }
    }

    /// Stored base value and observed flag, if the entry is present.
    pub fn base_entry(&self, i: EntityId, r: RelationId, j: EntityId) -> Option<(f32, bool)> {
        let row = self.row(i, r);
        row.find(j).map(|k| (row.values[k], row.observed[k]))
    }

    /// Calibrated probability of `(i, r, j)`: exactly 1 for observed edges,
    /// the clamped affine calibration for other stored entries, 0 otherwise.
    pub fn calibrated_entry(&self, params: &CalibrationParams, i: EntityId, r: RelationId, j: EntityId) -> f64 {
        match self.base_entry(i, r, j) {
            None => 0.0,
            Some((_, true)) => 1.0,
            Some((v, false)) => calibrate(v as f64, params.alpha(i, r), params.beta(i, r), self.delta),
        }
    }

    pub fn storage_report(&self) -> StorageReport {
        let stored_entries = self.relations.iter().map(RelationRows::len).sum();
        let observed_entries = self
            .relations
            .iter()
            .map(|r| r.observed.iter().filter(|&&o| o).count())
            .sum();
        let skipped_rows = self
            .relations
            .iter()
            .map(|r| r.computed.iter().filter(|&&c| !c).count())
            .sum();
        let nv = self.num_entities;
        let header = 4 + 1 + 4 + 4 + 8 + 8;
        let per_relation: usize = self
            .relations
            .iter()
            .map(|r| 8 + nv.div_ceil(8) + 8 * (nv + 1) + r.len() * 8 + r.len().div_ceil(8) + 4 * nv)
            .sum();
        StorageReport {
            stored_entries,
            observed_entries,
            skipped_rows,
            bytes: header + per_relation,
        }
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
        w.bytes(MATRIX_MAGIC)?;
        w.u8(MATRIX_VERSION)?;
        w.u32(self.num_entities as u32)?;
        w.u32(self.relations.len() as u32)?;
        w.f64(self.delta)?;
        w.f64(self.eps)?;
        for rel in &self.relations {
            w.u64(rel.len() as u64)?;
            w.bits(&rel.computed)?;
            for &o in &rel.row_offsets {
                w.u64(o)?;
            }
            for &c in &rel.cols {
                w.u32(c)?;
            }
            for &v in &rel.values {
                w.f32(v)?;
            }
            w.bits(&rel.observed)?;
            for &t in &rel.tail_counts {
                w.u32(t)?;
            }
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
        r.magic(MATRIX_MAGIC)?;
        let version = r.u8()?;
        if version != MATRIX_VERSION {
            return Err(Error::Format(format!("unsupported matrix version {version}")));
        }
        let nv = r.u32()? as usize;
        let nr = r.u32()? as usize;
        let delta = r.f64()?;
        let eps = r.f64()?;
        check_delta(delta).map_err(|e| Error::Format(e.to_string()))?;
        let max_entries = (nv as u64).saturating_mul(nv as u64);
        let mut relations = Vec::with_capacity(nr.min(1 << 16));
        for _ in 0..nr {
            let n = r.len(max_entries, "entry")?;
            let computed = r.bits(nv)?;
            let mut row_offsets = Vec::with_capacity(nv + 1);
            for _ in 0..=nv {
                row_offsets.push(r.u64()?);
            }
            if row_offsets[0] != 0
                || row_offsets[nv] != n as u64
                || row_offsets.windows(2).any(|w| w[0] > w[1])
            {
                return Err(Error::Format("inconsistent row offsets".into()));
            }
            let mut cols = Vec::with_capacity(n);
            for _ in 0..n {
                let c = r.u32()?;
                if c as usize >= nv {
                    return Err(Error::Format(format!("column {c} out of range")));
                }
                cols.push(c);
            }
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                values.push(r.f32()?);
            }
            let observed = r.bits(n)?;
            let mut tail_counts = Vec::with_capacity(nv);
            for _ in 0..nv {
                tail_counts.push(r.u32()?);
            }
            relations.push(RelationRows {
                computed,
                row_offsets,
                cols,
                values,
                observed,
                tail_counts,
            });
        }
        r.expect_eof()?;
        Ok(Self {
            num_entities: nv,
            delta,
            eps,
            relations,
        })
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 0.5 {
        Ok(())
    } else {
        Err(Error::Precondition(format!("delta must lie in (0, 0.5), got {delta}")))
    }
}

/// Per-`(entity, relation)` affine calibration parameters. Absent keys are zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CalibrationParams {
    alpha: BTreeMap<(EntityId, RelationId), f64>,
    beta: BTreeMap<(EntityId, RelationId), f64>,
}

impl CalibrationParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alpha(&self, e: EntityId, r: RelationId) -> f64 {
        self.alpha.get(&(e, r)).copied().unwrap_or(0.0)
    }

    pub fn beta(&self, e: EntityId, r: RelationId) -> f64 {
        self.beta.get(&(e, r)).copied().unwrap_or(0.0)
    }

    pub fn set_alpha(&mut self, e: EntityId, r: RelationId, v: f64) {
        self.alpha.insert((e, r), v);
    }

    pub fn set_beta(&mut self, e: EntityId, r: RelationId, v: f64) {
        self.beta.insert((e, r), v);
    }

    pub fn alpha_mut(&mut self, e: EntityId, r: RelationId) -> &mut f64 {
        self.alpha.entry((e, r)).or_insert(0.0)
    }

    pub fn beta_mut(&mut self, e: EntityId, r: RelationId) -> &mut f64 {
        self.beta.entry((e, r)).or_insert(0.0)
    }

    pub fn alphas(&self) -> impl Iterator<Item = (&(EntityId, RelationId), &f64)> {
        self.alpha.iter()
    }

    pub fn betas(&self) -> impl Iterator<Item = (&(EntityId, RelationId), &f64)> {
        self.beta.iter()
    }

    /// True when every stored value is zero (identity calibration).
    pub fn is_identity(&self) -> bool {
        self.alpha.values().chain(self.beta.values()).all(|&v| v == 0.0)
    }

    /// Checks keys against the computed rows of `matrix`.
    pub fn validate(&self, matrix: &NeuralAdjacencyMatrix) -> Result<()> {
        for &(e, r) in self.alpha.keys().chain(self.beta.keys()) {
            if e as usize >= matrix.num_entities()
                || r as usize >= matrix.num_relations()
                || !matrix.is_computed(e, r)
            {
                return Err(Error::Dimension(format!(
                    "calibration key ({e}, {r}) is not a computed row of the matrix"
                )));
            }
        }
        if self.alpha.values().chain(self.beta.values()).any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite calibration value".into()));
        }
        Ok(())
    }
}
