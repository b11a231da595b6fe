//! Shared test helpers: a seeded generator for small random instances and an
//! independent brute-force LP solver (basis enumeration) used as ground truth
//! against the simplex implementation.
#![allow(dead_code)] // each test binary uses its own subset

use greennet::lp::{LinearProgram, RowOp};
use greennet::model::{Link, Session, SolverConfig, Topology, UtilityFunction};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random desk-size instance: 2-5 nodes, up to `max_links` links, 1-3
/// sessions with short ladders. Dropping is allowed so every instance has a
/// feasible plan.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    max_links: usize,
) -> (Topology, Vec<Session>, SolverConfig) {
    let n = rng.gen_range(2..=5);
    let nodes: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    let num_links = rng.gen_range(1..=max_links);
    let links: Vec<Link> = (0..num_links)
        .map(|_| {
            let from = rng.gen_range(0..n);
            let to = (from + rng.gen_range(1..n)) % n;
            Link {
                from: nodes[from].clone(),
                to: nodes[to].clone(),
                capacity: rng.gen_range(0.3..2.5),
                energy: if rng.gen_bool(0.1) {
                    0.0
                } else {
                    rng.gen_range(0.1..2.0)
                },
            }
        })
        .collect();
    let topo = Topology::new(nodes.clone(), links).unwrap();

    let num_sessions = rng.gen_range(1..=3);
    let sessions: Vec<Session> = (0..num_sessions)
        .map(|k| {
            let src = rng.gen_range(0..n);
            let dst = (src + rng.gen_range(1..n)) % n;
            let len = rng.gen_range(1..=3);
            let mut ladder = Vec::with_capacity(len);
            let mut rate = rng.gen_range(0.2..0.6);
            for _ in 0..len {
                ladder.push(rate);
                rate *= rng.gen_range(1.4..2.2);
            }
            let utility = match rng.gen_range(0..3) {
                0 => UtilityFunction::Log1p { scale: 1.0 },
                1 => UtilityFunction::Linear { slope: 1.0 },
                _ => UtilityFunction::NormalizedLadder {
                    top: *ladder.last().unwrap(),
                },
            };
            Session::new(
                format!("s{k}"),
                nodes[src].clone(),
                nodes[dst].clone(),
                ladder,
                utility,
            )
            .unwrap()
        })
        .collect();

    let mut cfg = SolverConfig {
        alpha: [0.5, 1.0, 2.0][rng.gen_range(0..3)],
        beta: [0.5, 1.0, 2.0][rng.gen_range(0..3)],
        allow_drop: true,
        ..SolverConfig::default()
    };
    cfg.subgradient.max_iters = 120;
    (topo, sessions, cfg)
}

/// Random LP over 1-4 variables and 1-4 `<=`/`>=` rows with small integer
/// data, optionally box-bounded. Mixes optimal, infeasible and unbounded
/// outcomes.
pub fn random_lp(rng: &mut ChaCha8Rng) -> LinearProgram {
    let n = rng.gen_range(1..=4);
    let m = rng.gen_range(1..=4);
    let mut lp = LinearProgram::new(n);
    for j in 0..n {
        lp.objective[j] = rng.gen_range(-3..=3) as f64;
        if rng.gen_bool(0.3) {
            lp.upper[j] = Some(rng.gen_range(1..=5) as f64);
        }
    }
    for _ in 0..m {
        let coeffs: Vec<f64> = (0..n).map(|_| rng.gen_range(-3..=3) as f64).collect();
        let op = if rng.gen_bool(0.5) { RowOp::Le } else { RowOp::Ge };
        lp.add_row(coeffs, op, rng.gen_range(-4..=4) as f64);
    }
    lp
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BruteStatus {
    Optimal(f64),
    Infeasible,
    Unbounded,
}

/// Exhaustive LP solver: convert to standard form (one slack per row, no
/// equality rows), enumerate every basis, and scan feasible bases for the
/// best objective and for improving rays. Independent of the simplex code.
pub fn brute_force_lp(lp: &LinearProgram) -> BruteStatus {
    let n = lp.num_vars;
    assert!(
        lp.rows.iter().all(|r| r.op != RowOp::Eq),
        "the brute-force oracle handles inequality rows only"
    );

    // Shift x by lower bounds; upper bounds become extra <= rows.
    let mut rows: Vec<(Vec<f64>, f64, f64)> = Vec::new(); // (coeffs, slack sign, rhs)
    for r in &lp.rows {
        let shift: f64 = r.coeffs.iter().zip(lp.lower.iter()).map(|(c, l)| c * l).sum();
        let sign = if r.op == RowOp::Le { 1.0 } else { -1.0 };
        rows.push((r.coeffs.clone(), sign, r.rhs - shift));
    }
    for j in 0..n {
        if let Some(u) = lp.upper[j] {
            let mut coeffs = vec![0.0; n];
            coeffs[j] = 1.0;
            rows.push((coeffs, 1.0, u - lp.lower[j]));
        }
    }
    let m = rows.len();
    let total = n + m;
    // Column-major standard form: structural columns then one slack per row.
    let mut a = vec![vec![0.0; m]; total];
    let mut c = vec![0.0; total];
    for j in 0..n {
        c[j] = lp.objective[j];
        for (i, row) in rows.iter().enumerate() {
            a[j][i] = row.0[j];
        }
    }
    for (i, row) in rows.iter().enumerate() {
        a[n + i][i] = row.1;
    }
    let b: Vec<f64> = rows.iter().map(|r| r.2).collect();

    let mut best: Option<f64> = None;
    let mut unbounded = false;
    let mut columns = vec![0usize; m];
    enumerate_bases(total, m, &mut columns, 0, 0, &mut |basis| {
        let mat: Vec<Vec<f64>> = basis.iter().map(|&j| a[j].clone()).collect();
        let x_b = match gaussian_solve(&mat, &b) {
            Some(x) => x,
            None => return,
        };
        if x_b.iter().any(|&v| v < -1e-9) {
            return;
        }
        let obj: f64 = basis.iter().zip(x_b.iter()).map(|(&j, &v)| c[j] * v).sum();
        best = Some(match best {
            Some(prev) => prev.min(obj),
            None => obj,
        });
        // Improving ray: raise a nonbasic column while staying feasible.
        for j in 0..total {
            if basis.contains(&j) {
                continue;
            }
            if let Some(d) = gaussian_solve(&mat, &a[j]) {
                let stays_feasible = d.iter().all(|&v| v <= 1e-9);
                let reduced: f64 =
                    c[j] - basis.iter().zip(d.iter()).map(|(&bj, &v)| c[bj] * v).sum::<f64>();
                if stays_feasible && reduced < -1e-9 {
                    unbounded = true;
                }
            }
        }
    });

    match (best, unbounded) {
        (None, _) => BruteStatus::Infeasible,
        (_, true) => BruteStatus::Unbounded,
        (Some(v), false) => {
            let constant: f64 = lp
                .objective
                .iter()
                .zip(lp.lower.iter())
                .map(|(c, l)| c * l)
                .sum();
            BruteStatus::Optimal(v + constant)
        }
    }
}

fn enumerate_bases(
    total: usize,
    size: usize,
    columns: &mut Vec<usize>,
    depth: usize,
    start: usize,
    visit: &mut impl FnMut(&[usize]),
) {
    if depth == size {
        visit(columns);
        return;
    }
    for j in start..total {
        columns[depth] = j;
        enumerate_bases(total, size, columns, depth + 1, j + 1, visit);
    }
}

/// Solve `M^T x = b` where `mat` holds columns of the basis matrix. Returns
/// `None` for singular systems.
fn gaussian_solve(columns: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let m = b.len();
    debug_assert_eq!(columns.len(), m);
    // Build the dense system: rows of the basis matrix.
    let mut aug = vec![vec![0.0; m + 1]; m];
    for i in 0..m {
        for (j, col) in columns.iter().enumerate() {
            aug[i][j] = col[i];
        }
        aug[i][m] = b[i];
    }
    for p in 0..m {
        let mut pivot = p;
        for i in p + 1..m {
            if aug[i][p].abs() > aug[pivot][p].abs() {
                pivot = i;
            }
        }
        if aug[pivot][p].abs() < 1e-10 {
            return None;
        }
        aug.swap(p, pivot);
        for i in 0..m {
            if i == p {
                continue;
            }
            let factor = aug[i][p] / aug[p][p];
            if factor != 0.0 {
                for j in p..=m {
                    aug[i][j] -= factor * aug[p][j];
                }
            }
        }
    }
    Some((0..m).map(|i| aug[i][m] / aug[i][i]).collect())
}
