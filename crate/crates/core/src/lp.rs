//! Dense two-phase primal simplex with Bland's anti-cycling rule, and a
//! multicommodity-flow feasibility check built on top of it. Instances here
//! are tiny (a few hundred variables at most), so a deterministic dense
//! tableau beats anything clever.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::model::{Topology, TOLERANCE};

/// Pivot tolerance: entries this close to zero are treated as zero.
const PIVOT_TOL: f64 = 1e-9;
/// Phase-1 objective above this value means infeasible.
const FEAS_TOL: f64 = 1e-7;
const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite coefficient: {0}")]
    NonFinite(String),
    #[error("internal: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowOp {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub op: RowOp,
    pub rhs: f64,
}

/// `minimize c·x subject to rows, lower <= x <= upper` (upper optional,
/// lower defaults to 0).
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
    pub lower: Vec<f64>,
    pub upper: Vec<Option<f64>>,
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![0.0; num_vars],
            rows: Vec::new(),
            lower: vec![0.0; num_vars],
            upper: vec![None; num_vars],
        }
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, op: RowOp, rhs: f64) {
        self.rows.push(Row { coeffs, op, rhs });
    }

    fn validate(&self) -> Result<(), LpError> {
        if self.objective.len() != self.num_vars
            || self.lower.len() != self.num_vars
            || self.upper.len() != self.num_vars
        {
            return Err(LpError::DimensionMismatch(format!(
                "expected {} objective/bound entries",
                self.num_vars
            )));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.coeffs.len() != self.num_vars {
                return Err(LpError::DimensionMismatch(format!(
                    "row {i} has {} coefficients, expected {}",
                    row.coeffs.len(),
                    self.num_vars
                )));
            }
            if !row.rhs.is_finite() || row.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(LpError::NonFinite(format!("row {i}")));
            }
        }
        for j in 0..self.num_vars {
            if !self.objective[j].is_finite() || !self.lower[j].is_finite() {
                return Err(LpError::NonFinite(format!("variable {j}")));
            }
            if let Some(u) = self.upper[j] {
                if !u.is_finite() {
                    return Err(LpError::NonFinite(format!("upper bound of variable {j}")));
                }
                if u < self.lower[j] {
                    return Err(LpError::DimensionMismatch(format!(
                        "variable {j}: upper bound {u} below lower bound {}",
                        self.lower[j]
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Meaningful only when optimal; zeros otherwise.
    pub values: Vec<f64>,
    /// `+inf` when infeasible, `-inf` when unbounded.
    pub objective: f64,
}

struct Tableau {
    /// `rows[i]` has `cols` entries plus the rhs at index `cols`.
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize, cost: &mut [f64]) {
        let p = self.rows[r][c];
        for x in self.rows[r].iter_mut() {
            *x /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let factor = row[c];
            if factor.abs() > 0.0 {
                for (x, &pr) in row.iter_mut().zip(pivot_row.iter()) {
                    *x -= factor * pr;
                }
                row[c] = 0.0;
            }
        }
        let factor = cost[c];
        if factor.abs() > 0.0 {
            for (x, &pr) in cost.iter_mut().zip(pivot_row.iter()) {
                *x -= factor * pr;
            }
            cost[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Bland's rule: entering column is the lowest index with a negative
    /// reduced cost, the leaving row is the ratio-test winner with the lowest
    /// basis variable. Returns `false` on unboundedness.
    fn run_simplex(&mut self, cost: &mut [f64], pivots: &mut usize) -> Result<bool, LpError> {
        loop {
            let enter = (0..self.cols).find(|&j| cost[j] < -PIVOT_TOL);
            let enter = match enter {
                Some(j) => j,
                None => return Ok(true),
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][enter];
                if a > PIVOT_TOL {
                    let ratio = self.rows[i][self.cols] / a;
                    let better = match leave {
                        None => true,
                        Some((best_i, best_ratio)) => {
                            ratio < best_ratio - PIVOT_TOL
                                || (ratio < best_ratio + PIVOT_TOL
                                    && self.basis[i] < self.basis[best_i])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let (r, _) = match leave {
                Some(x) => x,
                None => return Ok(false),
            };
            self.pivot(r, enter, cost);
            *pivots += 1;
            if *pivots > MAX_PIVOTS {
                return Err(LpError::Internal("pivot limit exceeded".into()));
            }
        }
    }
}

/// Deterministic two-phase simplex. Equality rows are split into a `<=`/`>=`
/// pair before standardization.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let n = lp.num_vars;

    // Shift variables by their lower bounds so every variable is >= 0.
    let mut std_rows: Vec<(Vec<f64>, bool, f64)> = Vec::new(); // (coeffs, is_ge, rhs)
    let push = |coeffs: &[f64], op: RowOp, rhs: f64, out: &mut Vec<(Vec<f64>, bool, f64)>| {
        match op {
            RowOp::Le => out.push((coeffs.to_vec(), false, rhs)),
            RowOp::Ge => out.push((coeffs.to_vec(), true, rhs)),
            RowOp::Eq => {
                out.push((coeffs.to_vec(), false, rhs));
                out.push((coeffs.to_vec(), true, rhs));
            }
        }
    };
    for row in &lp.rows {
        let shift: f64 = row
            .coeffs
            .iter()
            .zip(lp.lower.iter())
            .map(|(c, l)| c * l)
            .sum();
        push(&row.coeffs, row.op, row.rhs - shift, &mut std_rows);
    }
    for j in 0..n {
        if let Some(u) = lp.upper[j] {
            let mut coeffs = vec![0.0; n];
            coeffs[j] = 1.0;
            push(&coeffs, RowOp::Le, u - lp.lower[j], &mut std_rows);
        }
    }
    // Normalize to non-negative rhs.
    for (coeffs, is_ge, rhs) in std_rows.iter_mut() {
        if *rhs < 0.0 {
            for c in coeffs.iter_mut() {
                *c = -*c;
            }
            *rhs = -*rhs;
            *is_ge = !*is_ge;
        }
    }

    let m = std_rows.len();
    let num_art: usize = std_rows.iter().filter(|(_, ge, _)| *ge).count();
    let cols = n + m + num_art;
    let mut tab = Tableau {
        rows: Vec::with_capacity(m),
        basis: vec![0; m],
        cols,
    };
    let mut art_seen = 0;
    for (i, (coeffs, is_ge, rhs)) in std_rows.iter().enumerate() {
        let mut row = vec![0.0; cols + 1];
        row[..n].copy_from_slice(coeffs);
        row[cols] = *rhs;
        if *is_ge {
            row[n + i] = -1.0; // surplus
            row[n + m + art_seen] = 1.0;
            tab.basis[i] = n + m + art_seen;
            art_seen += 1;
        } else {
            row[n + i] = 1.0; // slack
            tab.basis[i] = n + i;
        }
        tab.rows.push(row);
    }

    let mut pivots = 0;
    if num_art > 0 {
        // Phase 1: drive the artificial total to zero.
        let mut cost = vec![0.0; cols + 1];
        for j in n + m..cols {
            cost[j] = 1.0;
        }
        for i in 0..m {
            if tab.basis[i] >= n + m {
                let row = tab.rows[i].clone();
                for (x, &r) in cost.iter_mut().zip(row.iter()) {
                    *x -= r;
                }
            }
        }
        let bounded = tab.run_simplex(&mut cost, &mut pivots)?;
        debug_assert!(bounded, "phase-1 objective is bounded below by zero");
        let z = -cost[cols];
        if z > FEAS_TOL {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                values: vec![0.0; n],
                objective: f64::INFINITY,
            });
        }
        // Pivot leftover artificials out; drop rows that went redundant.
        let mut i = 0;
        while i < tab.rows.len() {
            if tab.basis[i] >= n + m {
                let pivot_col = (0..n + m).find(|&j| tab.rows[i][j].abs() > PIVOT_TOL);
                match pivot_col {
                    Some(j) => {
                        let mut dummy = vec![0.0; cols + 1];
                        tab.pivot(i, j, &mut dummy);
                        i += 1;
                    }
                    None => {
                        tab.rows.remove(i);
                        tab.basis.remove(i);
                    }
                }
            } else {
                i += 1;
            }
        }
        // Artificial columns are dead from here on.
        for row in tab.rows.iter_mut() {
            let rhs = row[cols];
            row.truncate(n + m);
            row.push(rhs);
        }
        tab.cols = n + m;
    }

    // Phase 2 with the real objective, canonicalized against the basis.
    let mut cost = vec![0.0; tab.cols + 1];
    cost[..n].copy_from_slice(&lp.objective);
    for i in 0..tab.rows.len() {
        let b = tab.basis[i];
        let factor = cost[b];
        if factor.abs() > 0.0 {
            let row = tab.rows[i].clone();
            for (x, &r) in cost.iter_mut().zip(row.iter()) {
                *x -= factor * r;
            }
            cost[b] = 0.0;
        }
    }
    let bounded = tab.run_simplex(&mut cost, &mut pivots)?;
    if !bounded {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            values: vec![0.0; n],
            objective: f64::NEG_INFINITY,
        });
    }

    let mut values = lp.lower.clone();
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < n {
            values[b] += tab.rows[i][tab.cols];
        }
    }
    let objective: f64 = lp
        .objective
        .iter()
        .zip(values.iter())
        .map(|(c, v)| c * v)
        .sum();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        values,
        objective,
    })
}

/// One commodity: ship `rate` units from `source` to `dest` (node indices).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Demand {
    pub source: usize,
    pub dest: usize,
    pub rate: f64,
}

/// Feasibility verdict plus a witness flow, `flows[demand][link]` over the
/// full link set (zero on inactive links).
#[derive(Debug, Clone)]
pub struct McfOutcome {
    pub feasible: bool,
    pub flows: Vec<Vec<f64>>,
}

/// Multicommodity-flow feasibility restricted to `active` links: capacity on
/// every active link, per-commodity conservation at intermediate nodes, full
/// delivery at source and destination. Inactive links carry nothing.
pub fn mcf_feasible(
    topo: &Topology,
    active: &BTreeSet<usize>,
    demands: &[Demand],
) -> Result<McfOutcome, LpError> {
    let num_links = topo.num_links();
    let num_nodes = topo.num_nodes();
    for (k, d) in demands.iter().enumerate() {
        if d.source >= num_nodes || d.dest >= num_nodes {
            return Err(LpError::DimensionMismatch(format!(
                "demand {k} references a node outside the topology"
            )));
        }
        if !d.rate.is_finite() || d.rate < 0.0 {
            return Err(LpError::NonFinite(format!("demand {k} rate {}", d.rate)));
        }
        if d.source == d.dest && d.rate > TOLERANCE {
            return Err(LpError::DimensionMismatch(format!(
                "demand {k}: source equals destination"
            )));
        }
    }
    let zero = McfOutcome {
        feasible: true,
        flows: vec![vec![0.0; num_links]; demands.len()],
    };

    let links: Vec<usize> = active.iter().copied().filter(|&l| l < num_links).collect();
    let effective: Vec<usize> = (0..demands.len())
        .filter(|&k| demands[k].rate > TOLERANCE)
        .collect();
    if effective.is_empty() {
        return Ok(zero);
    }
    if links.is_empty() {
        return Ok(McfOutcome {
            feasible: false,
            flows: Vec::new(),
        });
    }

    let a = links.len();
    let var = |ke: usize, ai: usize| ke * a + ai;
    let mut lp = LinearProgram::new(effective.len() * a);

    for (ai, &l) in links.iter().enumerate() {
        let mut coeffs = vec![0.0; lp.num_vars];
        for ke in 0..effective.len() {
            coeffs[var(ke, ai)] = 1.0;
        }
        lp.add_row(coeffs, RowOp::Le, topo.links()[l].capacity);
    }
    for (ke, &k) in effective.iter().enumerate() {
        let d = &demands[k];
        for v in 0..num_nodes {
            let mut coeffs = vec![0.0; lp.num_vars];
            let mut touched = false;
            for (ai, &l) in links.iter().enumerate() {
                let (from, to) = topo.endpoints(l);
                if from == v {
                    coeffs[var(ke, ai)] += 1.0;
                    touched = true;
                }
                if to == v {
                    coeffs[var(ke, ai)] -= 1.0;
                    touched = true;
                }
            }
            let rhs = if v == d.source {
                d.rate
            } else if v == d.dest {
                -d.rate
            } else {
                0.0
            };
            if touched || rhs != 0.0 {
                lp.add_row(coeffs, RowOp::Eq, rhs);
            }
        }
    }

    let solution = solve_lp(&lp)?;
    match solution.status {
        LpStatus::Optimal => {
            let mut flows = vec![vec![0.0; num_links]; demands.len()];
            for (ke, &k) in effective.iter().enumerate() {
                for (ai, &l) in links.iter().enumerate() {
                    flows[k][l] = solution.values[var(ke, ai)].max(0.0);
                }
            }
            Ok(McfOutcome {
                feasible: true,
                flows,
            })
        }
        LpStatus::Infeasible => Ok(McfOutcome {
            feasible: false,
            flows: Vec::new(),
        }),
        LpStatus::Unbounded => Err(LpError::Internal(
            "feasibility program cannot be unbounded".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Link, Topology};

    fn two_link_topology() -> Topology {
        let link = Link {
            from: "A".into(),
            to: "B".into(),
            capacity: 1.0,
            energy: 1.0,
        };
        Topology::new(vec!["A".into(), "B".into()], vec![link.clone(), link]).unwrap()
    }

    #[test]
    fn single_variable_lower_bound() {
        // minimize x s.t. x >= 3
        let mut lp = LinearProgram::new(1);
        lp.objective = vec![1.0];
        lp.add_row(vec![1.0], RowOp::Ge, 3.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.values[0] - 3.0).abs() < 1e-9);
        assert!((s.objective - 3.0).abs() < 1e-9);
    }

    #[test]
    fn single_variable_upper_constraint() {
        // minimize -x s.t. x <= 5, x >= 0
        let mut lp = LinearProgram::new(1);
        lp.objective = vec![-1.0];
        lp.add_row(vec![1.0], RowOp::Le, 5.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.values[0] - 5.0).abs() < 1e-9);
        assert!((s.objective + 5.0).abs() < 1e-9);
    }

    #[test]
    fn equality_rows_work() {
        // minimize x + y s.t. x + y = 2, x - y = 0
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, 1.0];
        lp.add_row(vec![1.0, 1.0], RowOp::Eq, 2.0);
        lp.add_row(vec![1.0, -1.0], RowOp::Eq, 0.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.values[0] - 1.0).abs() < 1e-7);
        assert!((s.values[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn detects_infeasible() {
        let mut lp = LinearProgram::new(1);
        lp.add_row(vec![1.0], RowOp::Le, 1.0);
        lp.add_row(vec![1.0], RowOp::Ge, 2.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Infeasible);
        assert_eq!(s.objective, f64::INFINITY);
    }

    #[test]
    fn detects_unbounded() {
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![-1.0, 0.0];
        lp.add_row(vec![0.0, 1.0], RowOp::Le, 1.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Unbounded);
    }

    #[test]
    fn honors_variable_bounds() {
        // minimize -x - 2y with 1 <= x <= 3, 0 <= y <= 2, x + y <= 4
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![-1.0, -2.0];
        lp.lower = vec![1.0, 0.0];
        lp.upper = vec![Some(3.0), Some(2.0)];
        lp.add_row(vec![1.0, 1.0], RowOp::Le, 4.0);
        let s = solve_lp(&lp).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.values[0] - 2.0).abs() < 1e-7);
        assert!((s.values[1] - 2.0).abs() < 1e-7);
        assert!((s.objective + 6.0).abs() < 1e-7);
    }

    #[test]
    fn rejects_bad_dimensions_and_nan() {
        let mut lp = LinearProgram::new(2);
        lp.add_row(vec![1.0], RowOp::Le, 1.0);
        assert!(matches!(
            solve_lp(&lp),
            Err(LpError::DimensionMismatch(_))
        ));
        let mut lp = LinearProgram::new(1);
        lp.add_row(vec![f64::NAN], RowOp::Le, 1.0);
        assert!(matches!(solve_lp(&lp), Err(LpError::NonFinite(_))));
    }

    #[test]
    fn solve_is_deterministic() {
        let mut lp = LinearProgram::new(3);
        lp.objective = vec![1.0, -2.0, 0.5];
        lp.add_row(vec![1.0, 1.0, 1.0], RowOp::Le, 10.0);
        lp.add_row(vec![-1.0, 2.0, 0.0], RowOp::Ge, -4.0);
        lp.add_row(vec![1.0, 0.0, 1.0], RowOp::Eq, 3.0);
        let a = solve_lp(&lp).unwrap();
        let b = solve_lp(&lp).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn both_links_active_carries_full_demand() {
        let topo = two_link_topology();
        let active: BTreeSet<usize> = [0, 1].into_iter().collect();
        let demands = vec![
            Demand {
                source: 0,
                dest: 1,
                rate: 1.0,
            },
            Demand {
                source: 0,
                dest: 1,
                rate: 1.0,
            },
        ];
        let out = mcf_feasible(&topo, &active, &demands).unwrap();
        assert!(out.feasible);
        for k in 0..2 {
            let delivered: f64 = out.flows[k].iter().sum();
            assert!((delivered - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn one_link_cannot_carry_both_full_rate_sessions() {
        let topo = two_link_topology();
        let active: BTreeSet<usize> = [0].into_iter().collect();
        let demands = vec![
            Demand {
                source: 0,
                dest: 1,
                rate: 1.0,
            },
            Demand {
                source: 0,
                dest: 1,
                rate: 1.0,
            },
        ];
        let out = mcf_feasible(&topo, &active, &demands).unwrap();
        assert!(!out.feasible);
    }

    #[test]
    fn empty_problem_is_feasible_with_zero_flow() {
        let topo = two_link_topology();
        let out = mcf_feasible(&topo, &BTreeSet::new(), &[]).unwrap();
        assert!(out.feasible);
        assert!(out.flows.is_empty());
    }

    #[test]
    fn witness_respects_capacity() {
        let topo = two_link_topology();
        let active: BTreeSet<usize> = [0, 1].into_iter().collect();
        let demands = vec![
            Demand {
                source: 0,
                dest: 1,
                rate: 0.5,
            },
            Demand {
                source: 0,
                dest: 1,
                rate: 1.0,
            },
        ];
        let out = mcf_feasible(&topo, &active, &demands).unwrap();
        assert!(out.feasible);
        for l in 0..2 {
            let load: f64 = out.flows.iter().map(|f| f[l]).sum();
            assert!(load <= 1.0 + 1e-7);
        }
    }
}
