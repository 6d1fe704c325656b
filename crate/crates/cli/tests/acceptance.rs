//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tcqa::adjacency::{scaled_row, softmax, BuildOptions, CalibrationParams, NeuralAdjacencyMatrix};
use tcqa::eval::{evaluate, rank_hard_answer, Averaging, Metrics};
use tcqa::executor::{t_and, t_or, AdapterParams, Executor, FuzzyVector};
use tcqa::kg::{GraphView, KnowledgeGraph, Split};
use tcqa::kge::{train_kge, KgeConfig, KgeModel};
use tcqa::query::{generate_queries, symbolic_answers, AnswerSplit, LabeledQuery, Structure};
use tcqa::synthetic::{generate, SyntheticConfig, SyntheticKg};
use tcqa::trainer::{bce_loss, query_loss_and_grad, train_adapter, ParamsFile, TrainConfig};
use tcqa::type_graphs::{Side, TypedEntityRelationGraphs};

const DELTA: f64 = 1e-4;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("oracle equivalence", criterion_1),
        ("gradient correctness", criterion_2),
        ("calibration invariants", criterion_3),
        ("type-skip soundness and storage", criterion_4),
        ("directional adapter gain", criterion_5),
        ("metric arithmetic", criterion_6),
        ("algebraic properties", criterion_7),
        ("format round-trips and pipeline", criterion_8),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = format!("criterion_{}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| id.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}; {secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail}; {secs:.1}s)", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))
}

fn synthetic(config: SyntheticConfig) -> SyntheticKg {
    generate(&config).expect("valid synthetic config")
}

fn build_graphs(s: &SyntheticKg) -> TypedEntityRelationGraphs {
    TypedEntityRelationGraphs::build(&s.kg, &s.types).expect("non-empty training split")
}

fn trained_matrix(s: &SyntheticKg, dim: usize, epochs: usize, options: BuildOptions) -> (KgeModel, NeuralAdjacencyMatrix) {
    let config = KgeConfig {
        dim,
        epochs,
        ..Default::default()
    };
    let (model, _) = train_kge(&s.kg, &config).expect("kge training");
    let matrix = NeuralAdjacencyMatrix::build(&model, &s.kg, &build_graphs(s), options).expect("matrix build");
    (model, matrix)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut per_structure = [0usize; 14];
    let mut mismatches = 0;
    for k in 0..20 {
        let types = rng.gen_range(1..=4);
        let s = synthetic(SyntheticConfig {
            entities: rng.gen_range(30..=50),
            relations: rng.gen_range(2..=5),
            types,
            head_types: rng.gen_range(1..=types),
            tail_types: rng.gen_range(1..=types),
            clusters: rng.gen_range(1..=3),
            max_degree: rng.gen_range(2..=4),
            valid_fraction: 0.0,
            test_fraction: 0.0,
            seed: 1000 + k,
        });
        let edges = s.kg.graph_view(GraphView::All);
        let matrix = NeuralAdjacencyMatrix::exact(&edges, DELTA).map_err(|e| e.to_string())?;
        let graphs = build_graphs(&s);
        let params = ParamsFile::neutral(graphs);
        let ex = params.executor(&matrix).map_err(|e| e.to_string())?;
        for (si, &structure) in Structure::ALL.iter().enumerate() {
            let (qs, _) = generate_queries(&s.kg, structure, 100, k, AnswerSplit::Train);
            per_structure[si] += qs.len();
            for q in qs {
                let out = ex.execute(&q.ast.root).map_err(|e| e.to_string())?;
                let predicted: BTreeSet<u32> = out.above(0.5).into_iter().collect();
                if predicted != symbolic_answers(&q.ast.root, &edges) {
                    mismatches += 1;
                }
            }
        }
    }
    let fewest = per_structure.iter().min().copied().unwrap_or(0);
    ensure(mismatches == 0, || format!("{mismatches} mismatches"))?;
    ensure(fewest >= 100, || format!("only {fewest} queries for some structure"))?;
    within(start, Duration::from_secs(120))?;
    Ok(format!(
        "0 mismatches over {} queries, at least {fewest} per structure",
        per_structure.iter().sum::<usize>()
    ))
}

fn random_params(
    matrix: &NeuralAdjacencyMatrix,
    rng: &mut ChaCha8Rng,
    scale: f64,
) -> (CalibrationParams, AdapterParams) {
    let mut cal = CalibrationParams::new();
    for r in 0..matrix.num_relations() as u32 {
        for h in 0..matrix.num_entities() as u32 {
            if matrix.is_computed(h, r) {
                cal.set_alpha(h, r, rng.gen_range(-0.3..0.3) * scale);
                cal.set_beta(h, r, rng.gen_range(-0.02..0.02) * scale);
            }
        }
    }
    let nr = matrix.num_relations();
    let adapter = AdapterParams {
        gamma: (0..nr).map(|_| rng.gen_range(-0.3..0.3) * scale).collect(),
        mu: (0..nr).map(|_| rng.gen_range(-0.05..0.05) * scale).collect(),
    };
    (cal, adapter)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let s = synthetic(SyntheticConfig {
        entities: 40,
        seed: 5,
        ..Default::default()
    });
    let options = BuildOptions {
        eps: 1e-6,
        ..Default::default()
    };
    let (_, matrix) = trained_matrix(&s, 8, 30, options);
    let graphs = build_graphs(&s);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (cal, adapter) = random_params(&matrix, &mut rng, 1.0);

    let mut queries: Vec<LabeledQuery> = Vec::new();
    for st in [Structure::I2, Structure::In2] {
        queries.extend(generate_queries(&s.kg, st, 25, 3, AnswerSplit::Train).0);
    }
    ensure(queries.len() == 50, || format!("generated {} queries", queries.len()))?;

    let h = 1e-5;
    let loss_at = |cal: &CalibrationParams, adapter: &AdapterParams, q: &LabeledQuery| -> f64 {
        let ex = Executor::new(&matrix, cal, adapter, &graphs).expect("dimensions");
        bce_loss(ex.execute(&q.ast.root).expect("valid").values(), &q.easy).expect("answers")
    };
    let (mut checked, mut worst) = (0usize, 0.0f64);
    let mut families = [0usize; 4];
    for q in &queries {
        let ex = Executor::new(&matrix, &cal, &adapter, &graphs).map_err(|e| e.to_string())?;
        let (_, grads) = query_loss_and_grad(&ex, &q.ast.root, &q.easy).map_err(|e| e.to_string())?;
        // (family, key) candidates with nonzero analytic gradient
        let mut coords: Vec<(usize, (u32, u32), f64)> = Vec::new();
        coords.extend(grads.alpha.iter().filter(|(_, g)| **g != 0.0).map(|(k, g)| (0, *k, *g)));
        coords.extend(grads.beta.iter().filter(|(_, g)| **g != 0.0).map(|(k, g)| (1, *k, *g)));
        coords.extend(grads.gamma.iter().enumerate().filter(|(_, g)| **g != 0.0).map(|(r, g)| (2, (0, r as u32), *g)));
        coords.extend(grads.mu.iter().enumerate().filter(|(_, g)| **g != 0.0).map(|(r, g)| (3, (0, r as u32), *g)));
        for (fam, seen) in families.iter_mut().enumerate() {
            let of_family: Vec<_> = coords.iter().filter(|c| c.0 == fam).collect();
            for _ in 0..of_family.len().min(3) {
                let &&(_, (e, r), analytic) = &of_family[rng.gen_range(0..of_family.len())];
                let eval_shift = |d: f64| {
                    let (mut c, mut a) = (cal.clone(), adapter.clone());
                    match fam {
                        0 => *c.alpha_mut(e, r) += d,
                        1 => *c.beta_mut(e, r) += d,
                        2 => a.gamma[r as usize] += d,
                        _ => a.mu[r as usize] += d,
                    }
                    loss_at(&c, &a, q)
                };
                let (fp, f0, fm) = (eval_shift(h), eval_shift(0.0), eval_shift(-h));
                let (fwd, bwd) = ((fp - f0) / h, (f0 - fm) / h);
                // one-sided slopes disagree at a max tie or clamp boundary
                if (fwd - bwd).abs() > 1e-4 * fwd.abs().max(bwd.abs()).max(1e-6) {
                    continue;
                }
                let fd = (fp - fm) / (2.0 * h);
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs());
                worst = worst.max(rel);
                checked += 1;
                *seen += 1;
            }
        }
    }
    ensure(families.iter().all(|&n| n > 0), || format!("coordinates checked per family {families:?}"))?;
    ensure(worst < 1e-3, || format!("worst relative error {worst:.3e} over {checked} coordinates"))?;
    within(start, Duration::from_secs(60))?;
    Ok(format!(
        "{checked} coordinates (alpha/beta/gamma/mu = {families:?}), worst relative error {worst:.2e}"
    ))
}

fn criterion_3() -> Outcome {
    let s = synthetic(SyntheticConfig {
        entities: 60,
        seed: 8,
        ..Default::default()
    });
    let (model, matrix) = trained_matrix(&s, 16, 60, BuildOptions::default());
    let train = s.kg.graph_view(GraphView::Train);
    let (nv, nr) = (matrix.num_entities() as u32, matrix.num_relations() as u32);

    let mut worst_sum = 0.0f64;
    for r in 0..nr {
        for h in 0..nv {
            let sum: f64 = softmax(&model.score_row(h, r)).iter().sum();
            worst_sum = worst_sum.max((sum - 1.0).abs());
            let scaled: f64 = scaled_row(&model.score_row(h, r), train.tails(h, r).len()).iter().sum();
            let expect = train.tails(h, r).len().max(1) as f64;
            ensure((scaled - expect).abs() < 1e-6 * expect, || format!("scaled row ({h},{r}) sums to {scaled}"))?;
        }
    }
    ensure(worst_sum <= 1e-6, || format!("softmax row sum off by {worst_sum:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut reads = 0usize;
    for draw in 0..6 {
        let scale = [0.0, 1.0, 5.0, 20.0, 100.0, 1e4][draw];
        let (cal, _) = random_params(&matrix, &mut rng, scale);
        for r in 0..nr {
            for i in 0..nv {
                for j in 0..nv {
                    let v = matrix.calibrated_entry(&cal, i, r, j);
                    reads += 1;
                    let ok = v == 0.0 || v == 1.0 || (DELTA..=1.0 - DELTA).contains(&v);
                    ensure(ok, || format!("entry ({i},{r},{j}) = {v}"))?;
                    if train.tails(i, r).binary_search(&j).is_ok() {
                        ensure(v == 1.0, || format!("observed ({i},{r},{j}) reads {v}"))?;
                    }
                }
            }
        }
    }
    Ok(format!("{reads} calibrated reads in range, softmax sums within {worst_sum:.1e}"))
}

fn criterion_4() -> Outcome {
    let s = synthetic(SyntheticConfig {
        entities: 120,
        relations: 6,
        types: 2,
        head_types: 1,
        tail_types: 1,
        seed: 21,
        ..Default::default()
    });
    let graphs = build_graphs(&s);
    let (nv, nr) = (s.kg.num_entities(), s.kg.num_relations());
    for r in 0..nr as u32 {
        let share = graphs.compat_mask(r, Side::Head).iter().filter(|&&b| b).count();
        ensure(share * 2 == nv, || format!("relation {r} has {share} head-compatible entities of {nv}"))?;
    }
    let config = KgeConfig {
        dim: 16,
        epochs: 40,
        ..Default::default()
    };
    let (model, _) = train_kge(&s.kg, &config).map_err(|e| e.to_string())?;
    let skip = NeuralAdjacencyMatrix::build(&model, &s.kg, &graphs, BuildOptions::default()).map_err(|e| e.to_string())?;
    let full = NeuralAdjacencyMatrix::build(
        &model,
        &s.kg,
        &graphs,
        BuildOptions {
            type_skip: false,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let cal = CalibrationParams::new();
    for r in 0..nr as u32 {
        for h in 0..nv as u32 {
            if !graphs.is_head_compatible(h, r) {
                ensure(!skip.is_computed(h, r) && skip.row(h, r).is_empty(), || format!("row ({h},{r}) stored"))?;
                ensure((0..nv as u32).all(|j| skip.calibrated_entry(&cal, h, r, j) == 0.0), || {
                    format!("skipped row ({h},{r}) reads nonzero")
                })?;
            }
        }
    }
    let (a, b) = (skip.storage_report().stored_entries, full.storage_report().stored_entries);
    let ratio = a as f64 / b as f64;
    ensure(ratio <= 0.60, || format!("type-skip stores {a} of {b} entries ({ratio:.3})"))?;
    Ok(format!("type-skip stores {a} of {b} entries ({:.1}%)", 100.0 * ratio))
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let s = synthetic(SyntheticConfig {
        entities: 200,
        relations: 8,
        valid_fraction: 0.1,
        test_fraction: 0.1,
        seed: 0,
        ..Default::default()
    });
    let graphs = build_graphs(&s);
    let (_, matrix) = trained_matrix(&s, 32, 200, BuildOptions::default());

    let mut train = Vec::new();
    for st in Structure::ADAPTER_TRAINING {
        train.extend(generate_queries(&s.kg, st, 500, 1, AnswerSplit::Valid).0);
    }
    let mut test = Vec::new();
    for st in Structure::ALL {
        test.extend(generate_queries(&s.kg, st, 100, 2, AnswerSplit::Test).0);
    }
    let config = TrainConfig::default();
    let state = train_adapter(&matrix, &graphs, &train, &config).map_err(|e| e.to_string())?;

    let neutral = ParamsFile::neutral(graphs.clone());
    let trained = ParamsFile {
        calibration: state.calibration,
        adapter: state.adapter,
        graphs,
    };
    let report = |p: &ParamsFile| {
        let ex = p.executor(&matrix).expect("dimensions");
        evaluate(&ex, &test, Averaging::PerQuery).expect("evaluation")
    };
    let (base, adapted) = (report(&neutral), report(&trained));
    let (bn, an) = (base.avg_n.unwrap_or(0.0), adapted.avg_n.unwrap_or(0.0));
    let (bp, ap) = (base.avg_p.unwrap_or(0.0), adapted.avg_p.unwrap_or(0.0));
    let detail = format!(
        "avg_n {bn:.4} -> {an:.4}, avg_p {bp:.4} -> {ap:.4}, {} training queries",
        train.len()
    );
    ensure(base.avg_n.is_some() && base.avg_p.is_some(), || format!("missing aggregates: {detail}"))?;
    ensure(an >= bn, || detail.clone())?;
    ensure(ap >= bp - 0.02, || detail.clone())?;
    within(start, Duration::from_secs(600))?;
    Ok(detail)
}

fn criterion_6() -> Outcome {
    let m = Metrics::from_ranks(&[1, 2, 4]);
    ensure((m.mrr - 0.58333).abs() <= 1e-5 && (m.mrr - 7.0 / 12.0).abs() <= 1e-9, || format!("mrr {}", m.mrr))?;
    ensure(m.hits1 == 1.0 / 3.0 && m.hits3 == 2.0 / 3.0, || format!("{m:?}"))?;
    let set = |v: &[u32]| v.iter().copied().collect::<BTreeSet<u32>>();
    let rank = |scores: &[f64], a, easy: &[u32], hard: &[u32]| rank_hard_answer(scores, a, &set(easy), &set(hard));
    ensure(rank(&[0.9, 0.8, 0.7], 0, &[], &[0]).ok() == Some(1), || "top score must rank 1".into())?;
    ensure(rank(&[0.95, 0.9, 0.3], 1, &[0], &[1]).ok() == Some(1), || "easy answers must be filtered".into())?;
    ensure(rank(&[0.9, 0.9, 0.3], 0, &[], &[0]).ok() == Some(2), || "ties must count ahead".into())?;
    ensure(rank(&[0.9, 0.95, 0.3, 0.99], 0, &[], &[0, 1]).ok() == Some(2), || "other hard answers must be filtered".into())?;
    ensure(rank(&[0.9, 0.95], 0, &[], &[1]).is_err(), || "non-answer must be rejected".into())?;
    Ok("MRR 0.58333, Hits@1 1/3, Hits@3 2/3, filter and tie rules hold".into())
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 16;
    let rand_vec = |rng: &mut ChaCha8Rng| FuzzyVector::new((0..n).map(|_| rng.gen::<f64>()).collect()).unwrap();
    let close = |a: &FuzzyVector, b: &FuzzyVector| a.values().iter().zip(b.values()).all(|(x, y)| (x - y).abs() <= 1e-12);
    let (ones, zeros) = (FuzzyVector::constant(n, 1.0), FuzzyVector::constant(n, 0.0));
    for _ in 0..1000 {
        let (a, b, c) = (rand_vec(&mut rng), rand_vec(&mut rng), rand_vec(&mut rng));
        let and = |x: &FuzzyVector, y: &FuzzyVector| t_and(&[x, y]).unwrap();
        let or = |x: &FuzzyVector, y: &FuzzyVector| t_or(&[x, y]).unwrap();
        ensure(close(&and(&a, &ones), &a) && close(&or(&a, &zeros), &a), || "identity".into())?;
        ensure(close(&and(&a, &zeros), &zeros) && close(&or(&a, &ones), &ones), || "annihilator".into())?;
        ensure(close(&and(&a, &b), &and(&b, &a)) && close(&or(&a, &b), &or(&b, &a)), || "commutativity".into())?;
        ensure(close(&and(&and(&a, &b), &c), &and(&a, &and(&b, &c))), || "t-norm associativity".into())?;
        ensure(close(&or(&or(&a, &b), &c), &or(&a, &or(&b, &c))), || "t-conorm associativity".into())?;
    }

    let mut checked = 0;
    for trial in 0..1000u64 {
        let types = rng.gen_range(1..=3);
        let s = synthetic(SyntheticConfig {
            entities: rng.gen_range(6..=14),
            relations: rng.gen_range(1..=3),
            types,
            head_types: rng.gen_range(1..=types),
            tail_types: rng.gen_range(1..=types),
            clusters: rng.gen_range(1..=2),
            max_degree: rng.gen_range(1..=3),
            valid_fraction: 0.0,
            test_fraction: 0.0,
            seed: trial,
        });
        if s.kg.base_triple_count(Split::Train) == 0 {
            continue;
        }
        let (nv, nr, d) = (s.kg.num_entities(), s.kg.num_relations(), rng.gen_range(1..=4));
        let mut emb = |len: usize| (0..len).map(|_| rng.gen_range(-3.0f32..3.0)).collect::<Vec<_>>();
        let model = KgeModel::from_parts(nv, nr, d, emb(nv * 2 * d), emb(nr * 2 * d)).map_err(|e| e.to_string())?;
        let graphs = build_graphs(&s);
        let options = BuildOptions {
            eps: [0.0, 1e-3, 0.1][rng.gen_range(0..3)],
            delta: rng.gen_range(1e-6..0.4),
            type_skip: rng.gen(),
        };
        let matrix = NeuralAdjacencyMatrix::build(&model, &s.kg, &graphs, options).map_err(|e| e.to_string())?;
        let scale = [0.5, 5.0, 50.0][rng.gen_range(0..3)];
        let (cal, adapter) = random_params(&matrix, &mut rng, scale);
        let ex = Executor::new(&matrix, &cal, &adapter, &graphs).map_err(|e| e.to_string())?;
        let st = Structure::ALL[rng.gen_range(0..14)];
        for q in generate_queries(&s.kg, st, 1, trial, AnswerSplit::Train).0 {
            let out = ex.execute(&q.ast.root).map_err(|e| e.to_string())?;
            ensure(out.values().iter().all(|v| (0.0..=1.0).contains(v)), || {
                format!("trial {trial}: output outside [0, 1]")
            })?;
            checked += 1;
        }
    }
    ensure(checked >= 500, || format!("only {checked} executions checked"))?;
    Ok(format!("1000 vector triples within 1e-12, {checked} randomized executions in [0, 1]"))
}

fn round_trip_bytes(write: impl Fn(&mut Vec<u8>), reread_and_write: impl Fn(&[u8]) -> Vec<u8>) -> bool {
    let mut a = Vec::new();
    write(&mut a);
    a == reread_and_write(&a)
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn run(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tcqa"))
        .args(args)
        .env("TCQA_THREADS", "1")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`tcqa {}` exited with {}: {}",
            args[0],
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn criterion_8() -> Outcome {
    let kg = KnowledgeGraph::load_dir(data_dir()).map_err(|e| e.to_string())?;
    let s = SyntheticKg {
        types: tcqa::kg::TypeAnnotations::load(data_dir().join("types.tsv"), &kg).map_err(|e| e.to_string())?,
        kg,
    };
    let (model, matrix) = trained_matrix(&s, 8, 5, BuildOptions::default());
    ensure(
        round_trip_bytes(|b| model.write_to(b).unwrap(), |b| {
            let m = KgeModel::read_from(b).unwrap();
            assert_eq!(m, model);
            let mut out = Vec::new();
            m.write_to(&mut out).unwrap();
            out
        }),
        || "model file differs after round-trip".into(),
    )?;
    ensure(
        round_trip_bytes(|b| matrix.write_to(b).unwrap(), |b| {
            let m = NeuralAdjacencyMatrix::read_from(b).unwrap();
            assert_eq!(m, matrix);
            let mut out = Vec::new();
            m.write_to(&mut out).unwrap();
            out
        }),
        || "matrix file differs after round-trip".into(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (calibration, adapter) = random_params(&matrix, &mut rng, 1.0);
    let params = ParamsFile {
        calibration,
        adapter,
        graphs: build_graphs(&s),
    };
    ensure(
        round_trip_bytes(|b| params.write_to(b).unwrap(), |b| {
            let p = ParamsFile::read_from(b).unwrap();
            assert_eq!(p.calibration, params.calibration);
            assert_eq!(p.adapter, params.adapter);
            for r in 0..params.graphs.num_relations() as u32 {
                for side in [Side::Head, Side::Tail] {
                    assert_eq!(p.graphs.compat_mask(r, side), params.graphs.compat_mask(r, side));
                }
            }
            let mut out = Vec::new();
            p.write_to(&mut out).unwrap();
            out
        }),
        || "params file differs after round-trip".into(),
    )?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let data = data_dir().to_string_lossy().into_owned();
    let types = data_dir().join("types.tsv").to_string_lossy().into_owned();
    run(&["train-kge", "--triples", &data, "--out", &p("model.bin"), "--epochs", "50"])?;
    run(&[
        "build-adjacency", "--model", &p("model.bin"), "--triples", &data, "--types", &types, "--out", &p("matrix.bin"),
    ])?;
    run(&[
        "gen-queries", "--triples", &data, "--split", "valid", "--structures", "2i,3i,2in,3in", "--count", "50",
        "--out", &p("train.jsonl"),
    ])?;
    run(&["gen-queries", "--triples", &data, "--split", "test", "--count", "20", "--out", &p("test.jsonl")])?;
    run(&[
        "train-adapter", "--matrix", &p("matrix.bin"), "--queries", &p("train.jsonl"), "--types", &types, "--triples",
        &data, "--epochs", "3", "--out", &p("params.bin"),
    ])?;
    let answers = run(&[
        "answer", "--matrix", &p("matrix.bin"), "--params", &p("params.bin"), "--triples", &data, "--query",
        &p("test.jsonl"), "--topk", "3", "--trace",
    ])?;
    let report = run(&[
        "evaluate", "--matrix", &p("matrix.bin"), "--params", &p("params.bin"), "--triples", &data, "--queries",
        &p("test.jsonl"), "--report", &p("report"),
    ])?;
    ensure(answers.lines().count() > 1, || "answer printed nothing".into())?;
    ensure(report.contains("avg_n"), || format!("report lacks avg_n:\n{report}"))?;
    ensure(dir.path().join("report.json").exists(), || "no JSON report".into())?;
    Ok("model, matrix and params files round-trip bit-identically; six-step CLI pipeline exits 0".into())
}
