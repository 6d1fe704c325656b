//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Everything runs on a small synthetic typed graph generated in the page.
//! Results cross the boundary as JSON strings.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use tcqa::adjacency::{calibrate, BuildOptions, CalibrationParams, NeuralAdjacencyMatrix, StorageReport};
use tcqa::executor::{adapt, AdapterParams, Executor};
use tcqa::kge::{train_kge, KgeConfig};
use tcqa::query::{generate_queries, parse_query, query_to_json, AnswerSplit, Structure};
use tcqa::synthetic::{generate, SyntheticConfig, SyntheticKg};
use tcqa::type_graphs::TypedEntityRelationGraphs;

#[derive(Serialize)]
struct Ranked {
    entity: String,
    score: f64,
    witnesses: Vec<String>,
    correct: bool,
}

#[derive(Serialize)]
struct Answer {
    structure: Option<String>,
    ranking: Vec<Ranked>,
    above_half: usize,
}

#[derive(Serialize)]
struct Storage {
    typed: Report,
    untyped: Report,
    ratio: f64,
}

#[derive(Serialize)]
struct Report {
    stored_entries: usize,
    observed_entries: usize,
    skipped_rows: usize,
    bytes: usize,
}

impl From<StorageReport> for Report {
    fn from(r: StorageReport) -> Self {
        Self {
            stored_entries: r.stored_entries,
            observed_entries: r.observed_entries,
            skipped_rows: r.skipped_rows,
            bytes: r.bytes,
        }
    }
}

#[derive(Serialize)]
struct Curve {
    x: Vec<f64>,
    calibrated: Vec<f64>,
    adapted: Vec<f64>,
}

/// A synthetic graph with its link predictor and both matrix variants.
pub struct Session {
    kg: SyntheticKg,
    graphs: TypedEntityRelationGraphs,
    typed: NeuralAdjacencyMatrix,
    untyped: NeuralAdjacencyMatrix,
}

impl Session {
    pub fn new(entities: usize, seed: u64) -> Result<Self, String> {
        let kg = generate(&SyntheticConfig {
            entities,
            seed,
            ..Default::default()
        })
        .map_err(|e| e.to_string())?;
        let graphs = TypedEntityRelationGraphs::build(&kg.kg, &kg.types).map_err(|e| e.to_string())?;
        let config = KgeConfig {
            dim: 16,
            epochs: 60,
            seed,
            ..Default::default()
        };
        let (model, _) = train_kge(&kg.kg, &config).map_err(|e| e.to_string())?;
        let build = |type_skip| {
            NeuralAdjacencyMatrix::build(&model, &kg.kg, &graphs, BuildOptions { type_skip, ..Default::default() })
                .map_err(|e| e.to_string())
        };
        let typed = build(true)?;
        let untyped = build(false)?;
        Ok(Self {
            kg,
            graphs,
            typed,
            untyped,
        })
    }

    /// A random test-split query of the given structure label, as JSON.
    pub fn example_query(&self, label: &str, seed: u64) -> Result<String, String> {
        let structure: Structure = label.parse().map_err(|e: tcqa::Error| e.to_string())?;
        let (queries, _) = generate_queries(&self.kg.kg, structure, 1, seed, AnswerSplit::Test);
        let q = queries.first().ok_or_else(|| format!("no {label} query found in this graph"))?;
        Ok(query_to_json(&q.ast, &self.kg.kg).to_string())
    }

    /// Ranks entities for `query` with one shared adapter setting for all relations.
    pub fn answer(&self, query: &str, gamma: f64, mu: f64, delta: f64, topk: usize) -> Result<String, String> {
        let ast = parse_query(query, &self.kg.kg).map_err(|e| e.to_string())?;
        let mut matrix = self.typed.clone();
        matrix.set_delta(delta).map_err(|e| e.to_string())?;
        let nr = matrix.num_relations();
        let adapter = AdapterParams {
            gamma: vec![gamma; nr],
            mu: vec![mu; nr],
        };
        let calibration = CalibrationParams::new();
        let executor = Executor::new(&matrix, &calibration, &adapter, &self.graphs).map_err(|e| e.to_string())?;
        let trace = executor.trace(&ast.root).map_err(|e| e.to_string())?;

        let truth = tcqa::query::symbolic_answers(&ast.root, &self.kg.kg.graph_view(tcqa::GraphView::All));
        let name = |e: u32| self.kg.kg.entity_name(e).unwrap_or("?").to_string();
        let rel = |r: u32| self.kg.kg.relation_name(r).unwrap_or_else(|| r.to_string());
        let ranking = trace
            .output()
            .ranked()
            .into_iter()
            .take(topk)
            .map(|(e, score)| Ranked {
                entity: name(e),
                score,
                witnesses: trace
                    .witnesses(e)
                    .into_iter()
                    .map(|(a, r, b)| format!("{} -{}-> {}", name(a), rel(r), name(b)))
                    .collect(),
                correct: truth.contains(&e),
            })
            .collect();
        let answer = Answer {
            structure: Structure::of(&ast.root).map(|s| s.label().to_string()),
            ranking,
            above_half: trace.output().above(0.5).len(),
        };
        serde_json::to_string(&answer).map_err(|e| e.to_string())
    }

    /// Stored entries of the matrix with and without skipping incompatible heads.
    pub fn storage(&self) -> String {
        let (t, u) = (self.typed.storage_report(), self.untyped.storage_report());
        let ratio = t.stored_entries as f64 / u.stored_entries.max(1) as f64;
        let storage = Storage {
            typed: t.into(),
            untyped: u.into(),
            ratio,
        };
        serde_json::to_string(&storage).expect("plain structs serialize")
    }
}

/// Calibrated entry and adapted score as functions of the raw entry value.
pub fn curves(alpha: f64, beta: f64, gamma: f64, mu: f64, delta: f64, points: usize) -> String {
    let points = points.max(2);
    let x: Vec<f64> = (0..points).map(|i| i as f64 / (points - 1) as f64).collect();
    let calibrated: Vec<f64> = x.iter().map(|&p| calibrate(p, alpha, beta, delta)).collect();
    let adapted = calibrated.iter().map(|&c| adapt(c, gamma, mu)).collect();
    serde_json::to_string(&Curve { x, calibrated, adapted }).expect("plain structs serialize")
}

#[wasm_bindgen]
pub struct Demo(Session);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(entities: usize, seed: u32) -> Result<Demo, JsError> {
        Session::new(entities, seed as u64).map(Demo).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = exampleQuery)]
    pub fn example_query(&self, label: &str, seed: u32) -> Result<String, JsError> {
        self.0.example_query(label, seed as u64).map_err(|e| JsError::new(&e))
    }

    pub fn answer(&self, query: &str, gamma: f64, mu: f64, delta: f64, topk: usize) -> Result<String, JsError> {
        self.0.answer(query, gamma, mu, delta, topk).map_err(|e| JsError::new(&e))
    }

    pub fn storage(&self) -> String {
        self.0.storage()
    }
}

#[wasm_bindgen(js_name = transferCurves)]
pub fn transfer_curves(alpha: f64, beta: f64, gamma: f64, mu: f64, delta: f64, points: usize) -> String {
    curves(alpha, beta, gamma, mu, delta, points)
}
