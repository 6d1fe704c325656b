//! Executor checks against a brute-force oracle that enumerates joint
//! assignments of the hidden variables instead of propagating vectors.

use proptest::prelude::*;

use tcqa::adjacency::{CalibrationParams, NeuralAdjacencyMatrix};
use tcqa::executor::{AdapterParams, Executor};
use tcqa::query::Query;
use tcqa::trainer::query_loss_and_grad;
use tcqa::type_graphs::TypedEntityRelationGraphs;

const N: usize = 4;
const NR: usize = 2;
const DELTA: f64 = 1e-4;

type Cells = Vec<(f32, bool)>;

fn matrix_from(cells: &Cells) -> NeuralAdjacencyMatrix {
    let entries = cells.iter().enumerate().filter(|(_, (v, _))| *v > 0.0).map(|(k, &(v, obs))| {
        let (r, rest) = (k / (N * N), k % (N * N));
        ((rest / N) as u32, r as u32, (rest % N) as u32, v, obs)
    });
    NeuralAdjacencyMatrix::from_entries(N, NR, DELTA, entries).unwrap()
}

fn weight(cells: &Cells, i: usize, r: u32, j: usize) -> f64 {
    let (v, obs) = cells[r as usize * N * N + i * N + j];
    if v <= 0.0 {
        0.0
    } else if obs {
        1.0
    } else {
        (v as f64).clamp(DELTA, 1.0 - DELTA)
    }
}

enum Factor<'q> {
    Edge { r: u32, src: usize, dst: usize },
    Opaque { q: &'q Query, var: usize },
}

fn is_block(q: &Query) -> bool {
    matches!(q, Query::And(_) | Query::Projection { negated: false, .. })
}

fn collect<'q>(q: &'q Query, var: usize, next: &mut usize, out: &mut Vec<Factor<'q>>) {
    match q {
        Query::Projection { relation, negated: false, child } => {
            let src = *next;
            *next += 1;
            out.push(Factor::Edge { r: *relation, src, dst: var });
            if is_block(child) {
                collect(child, src, next, out);
            } else {
                out.push(Factor::Opaque { q: child, var: src });
            }
        }
        Query::And(children) => {
            for c in children {
                if is_block(c) {
                    collect(c, var, next, out);
                } else {
                    out.push(Factor::Opaque { q: c, var });
                }
            }
        }
        _ => unreachable!(),
    }
}

fn oracle(cells: &Cells, q: &Query, y: usize) -> f64 {
    match q {
        Query::Anchor(a) => (*a as usize == y) as u8 as f64,
        Query::Or(children) => 1.0 - children.iter().map(|c| 1.0 - oracle(cells, c, y)).product::<f64>(),
        Query::Projection { relation, negated: true, child } => {
            1.0 - oracle(cells, &Query::proj(*relation, (**child).clone()), y)
        }
        _ => {
            let mut factors = Vec::new();
            let mut next = 1;
            collect(q, 0, &mut next, &mut factors);
            let mut best = 0.0f64;
            let mut assign = vec![0usize; next];
            assign[0] = y;
            let hidden = next - 1;
            for code in 0..N.pow(hidden as u32) {
                let mut c = code;
                for slot in assign.iter_mut().skip(1) {
                    *slot = c % N;
                    c /= N;
                }
                let score: f64 = factors
                    .iter()
                    .map(|f| match *f {
                        Factor::Edge { r, src, dst } => weight(cells, assign[src], r, assign[dst]),
                        Factor::Opaque { q, var } => oracle(cells, q, assign[var]),
                    })
                    .product();
                best = best.max(score);
            }
            best
        }
    }
}

fn cells() -> impl Strategy<Value = Cells> {
    prop::collection::vec(
        prop_oneof![Just(0.0f32), 0.0f32..1.2].prop_flat_map(|v| (Just(v), prop::bool::weighted(0.2))),
        N * N * NR,
    )
}

fn query() -> impl Strategy<Value = Query> {
    let leaf = (0..N as u32).prop_map(Query::Anchor);
    leaf.prop_recursive(3, 10, 3, |inner| {
        prop_oneof![
            3 => (0..NR as u32, any::<bool>(), inner.clone()).prop_map(|(r, neg, c)| if neg {
                Query::neg_proj(r, c)
            } else {
                Query::proj(r, c)
            }),
            1 => prop::collection::vec(inner.clone(), 2..=2).prop_map(Query::And),
            1 => prop::collection::vec(inner, 2..=2).prop_map(Query::Or),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn execution_matches_joint_enumeration(cells in cells(), q in query()) {
        let matrix = matrix_from(&cells);
        let cal = CalibrationParams::new();
        let adapter = AdapterParams::zeros(NR);
        let graphs = TypedEntityRelationGraphs::empty(N, NR);
        let out = Executor::new(&matrix, &cal, &adapter, &graphs).unwrap().execute(&q).unwrap();
        for y in 0..N {
            let expected = oracle(&cells, &q, y);
            prop_assert!((out.values()[y] - expected).abs() <= 1e-12, "entity {}: {} vs {}", y, out.values()[y], expected);
        }
    }
}

#[test]
fn two_way_intersection_gradients_match_finite_differences() {
    // distinct values keep every argmax strictly ahead of the runner-up
    let values = [
        0.31f32, 0.62, 0.18, 0.44, 0.27, 0.71, 0.53, 0.12, 0.39, 0.66, 0.22, 0.58, 0.47, 0.35, 0.69, 0.14,
    ];
    let mut entries = Vec::new();
    for r in 0..NR as u32 {
        for i in 0..N as u32 {
            for j in 0..N as u32 {
                let k = (r as usize * 7 + i as usize * 5 + j as usize * 3) % values.len();
                entries.push((i, r, j, values[k], false));
            }
        }
    }
    let matrix = NeuralAdjacencyMatrix::from_entries(N, NR, DELTA, entries).unwrap();
    let mut tail = vec![vec![false; N]; NR];
    tail[0][1] = true;
    tail[0][3] = true;
    tail[1][2] = true;
    let graphs = TypedEntityRelationGraphs::from_masks(vec![vec![false; N]; NR], tail).unwrap();
    let q = Query::And(vec![Query::proj(0, Query::anchor(0)), Query::proj(1, Query::anchor(2))]);
    let answers = [1u32, 2].into_iter().collect();

    let mut cal = CalibrationParams::new();
    cal.set_alpha(0, 0, 0.1);
    cal.set_beta(2, 1, -0.05);
    let adapter = AdapterParams { gamma: vec![0.2, -0.1], mu: vec![0.03, 0.02] };

    let loss_at = |cal: &CalibrationParams, adapter: &AdapterParams| {
        let ex = Executor::new(&matrix, cal, adapter, &graphs).unwrap();
        query_loss_and_grad(&ex, &q, &answers).unwrap().0
    };
    let ex = Executor::new(&matrix, &cal, &adapter, &graphs).unwrap();
    let (_, grads) = query_loss_and_grad(&ex, &q, &answers).unwrap();

    let h = 1e-6;
    let check = |analytic: f64, plus: f64, minus: f64, what: &str| {
        let numeric = (plus - minus) / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs()).max(1e-8);
        assert!((analytic - numeric).abs() / scale < 1e-4, "{what}: analytic {analytic} numeric {numeric}");
    };
    for (e, r) in [(0u32, 0u32), (2, 1)] {
        let mut p = cal.clone();
        let mut m = cal.clone();
        *p.alpha_mut(e, r) += h;
        *m.alpha_mut(e, r) -= h;
        let g = grads.alpha.get(&(e, r)).copied().unwrap_or(0.0);
        check(g, loss_at(&p, &adapter), loss_at(&m, &adapter), &format!("alpha({e},{r})"));
        let mut p = cal.clone();
        let mut m = cal.clone();
        *p.beta_mut(e, r) += h;
        *m.beta_mut(e, r) -= h;
        let g = grads.beta.get(&(e, r)).copied().unwrap_or(0.0);
        check(g, loss_at(&p, &adapter), loss_at(&m, &adapter), &format!("beta({e},{r})"));
    }
    for r in 0..NR {
        let mut p = adapter.clone();
        let mut m = adapter.clone();
        p.gamma[r] += h;
        m.gamma[r] -= h;
        check(grads.gamma[r], loss_at(&cal, &p), loss_at(&cal, &m), &format!("gamma[{r}]"));
        let mut p = adapter.clone();
        let mut m = adapter.clone();
        p.mu[r] += h;
        m.mu[r] -= h;
        check(grads.mu[r], loss_at(&cal, &p), loss_at(&cal, &m), &format!("mu[{r}]"));
    }
    assert!(grads.gamma.iter().chain(&grads.mu).any(|g| g.abs() > 1e-6));
}
