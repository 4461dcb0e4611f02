//! Sparse linear-program representation and solver entry point.
//!
//! Programs are always minimizations of `c·x` subject to `A_ub x ≤ b_ub`,
//! `A_eq x = b_eq` and per-variable bounds. The simplex backend is `microlp`;
//! nothing about it leaks through [`LinearProgram`] or [`LpSolution`].

use std::fmt::Write as _;

use microlp::{ComparisonOp, OptimizationDirection, Problem};

use crate::error::{invalid, Result};

/// Maximum constraint violation accepted on an optimal solution.
pub const FEASIBILITY_TOL: f64 = 1e-7;
/// Optimality tolerance reported to callers comparing objective values.
pub const OPTIMALITY_TOL: f64 = 1e-8;

/// A sparse row: `(variable index, coefficient)` pairs without zeros.
pub type SparseRow = Vec<(usize, f64)>;

#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    objective: Vec<f64>,
    ub_rows: Vec<SparseRow>,
    ub_rhs: Vec<f64>,
    eq_rows: Vec<SparseRow>,
    eq_rhs: Vec<f64>,
    bounds: Vec<(f64, f64)>,
    /// Set when an all-zero equality row with nonzero right-hand side was added.
    trivially_infeasible: bool,
}

impl LinearProgram {
    /// A program over `num_vars` non-negative variables with zero objective.
    pub fn new(num_vars: usize) -> Self {
        LinearProgram {
            objective: vec![0.0; num_vars],
            bounds: vec![(0.0, f64::INFINITY); num_vars],
            ..Default::default()
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_inequalities(&self) -> usize {
        self.ub_rows.len()
    }

    pub fn num_equalities(&self) -> usize {
        self.eq_rows.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn set_objective(&mut self, c: Vec<f64>) -> Result<()> {
        if c.len() != self.num_vars() {
            return invalid(format!("objective has {} entries for {} variables", c.len(), self.num_vars()));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return invalid("objective coefficients must be finite");
        }
        self.objective = c;
        Ok(())
    }

    pub fn set_bounds(&mut self, var: usize, lo: f64, hi: f64) -> Result<()> {
        if var >= self.num_vars() || lo.is_nan() || hi.is_nan() || lo > hi {
            return invalid(format!("bad bounds [{lo}, {hi}] for variable {var}"));
        }
        self.bounds[var] = (lo, hi);
        Ok(())
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    fn clean_row(&self, row: SparseRow) -> Result<SparseRow> {
        let mut out: SparseRow = Vec::with_capacity(row.len());
        for (v, a) in row {
            if v >= self.num_vars() {
                return invalid(format!("row references variable {v} of {}", self.num_vars()));
            }
            if !a.is_finite() {
                return invalid("constraint coefficients must be finite");
            }
            if a == 0.0 {
                continue;
            }
            match out.iter_mut().find(|(u, _)| *u == v) {
                Some(e) => e.1 += a,
                None => out.push((v, a)),
            }
        }
        out.retain(|(_, a)| *a != 0.0);
        Ok(out)
    }

    /// Adds `row · x ≤ rhs`.
    pub fn add_le(&mut self, row: SparseRow, rhs: f64) -> Result<()> {
        let row = self.clean_row(row)?;
        self.ub_rows.push(row);
        self.ub_rhs.push(rhs);
        Ok(())
    }

    /// Adds `row · x = rhs`. All-zero rows with zero right-hand side are dropped.
    pub fn add_eq(&mut self, row: SparseRow, rhs: f64) -> Result<()> {
        let row = self.clean_row(row)?;
        if row.is_empty() {
            if rhs != 0.0 {
                self.trivially_infeasible = true;
            }
            return Ok(());
        }
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
        Ok(())
    }

    pub fn inequalities(&self) -> impl Iterator<Item = (&SparseRow, f64)> {
        self.ub_rows.iter().zip(self.ub_rhs.iter().copied())
    }

    pub fn equalities(&self) -> impl Iterator<Item = (&SparseRow, f64)> {
        self.eq_rows.iter().zip(self.eq_rhs.iter().copied())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let dot = |row: &SparseRow| row.iter().map(|(v, a)| a * x[*v]).sum::<f64>();
        let ub = self.inequalities().map(|(r, b)| (dot(r) - b).max(0.0));
        let eq = self.equalities().map(|(r, b)| (dot(r) - b).abs());
        let bd = self.bounds.iter().zip(x).map(|((lo, hi), v)| (lo - v).max(v - hi).max(0.0));
        ub.chain(eq).chain(bd).fold(0.0, f64::max)
    }

    /// Fixed-column MPS text, for cross-checking against external solvers.
    pub fn to_mps(&self, name: &str) -> String {
        let mut s = String::new();
        let field = |v: f64| format!("{v:>12.5e}");
        let _ = writeln!(s, "NAME          {name}");
        let _ = writeln!(s, "ROWS");
        let _ = writeln!(s, " N  COST");
        for i in 0..self.ub_rows.len() {
            let _ = writeln!(s, " L  L{i:07}");
        }
        for i in 0..self.eq_rows.len() {
            let _ = writeln!(s, " E  E{i:07}");
        }
        let mut columns: Vec<Vec<(String, f64)>> = vec![Vec::new(); self.num_vars()];
        for (j, c) in self.objective.iter().enumerate() {
            if *c != 0.0 {
                columns[j].push(("COST".into(), *c));
            }
        }
        for (i, row) in self.ub_rows.iter().enumerate() {
            for (v, a) in row {
                columns[*v].push((format!("L{i:07}"), *a));
            }
        }
        for (i, row) in self.eq_rows.iter().enumerate() {
            for (v, a) in row {
                columns[*v].push((format!("E{i:07}"), *a));
            }
        }
        let _ = writeln!(s, "COLUMNS");
        for (j, entries) in columns.iter().enumerate() {
            for (row, a) in entries {
                let _ = writeln!(s, "    X{j:07}  {row:<8}  {}", field(*a));
            }
        }
        let _ = writeln!(s, "RHS");
        for (i, b) in self.ub_rhs.iter().enumerate().filter(|(_, b)| **b != 0.0) {
            let _ = writeln!(s, "    RHS       L{i:07}  {}", field(*b));
        }
        for (i, b) in self.eq_rhs.iter().enumerate().filter(|(_, b)| **b != 0.0) {
            let _ = writeln!(s, "    RHS       E{i:07}  {}", field(*b));
        }
        let _ = writeln!(s, "BOUNDS");
        for (j, (lo, hi)) in self.bounds.iter().enumerate() {
            if *lo != 0.0 {
                if lo.is_infinite() {
                    let _ = writeln!(s, " MI BND       X{j:07}");
                } else {
                    let _ = writeln!(s, " LO BND       X{j:07}  {}", field(*lo));
                }
            }
            if hi.is_finite() {
                let _ = writeln!(s, " UP BND       X{j:07}  {}", field(*hi));
            }
        }
        let _ = writeln!(s, "ENDATA");
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    pub values: Vec<f64>,
    pub objective_value: f64,
}

impl LpSolution {
    fn without_values(status: LpStatus, n: usize) -> Self {
        let objective_value = match status {
            LpStatus::Unbounded => f64::NEG_INFINITY,
            _ => f64::INFINITY,
        };
        LpSolution { status, values: vec![f64::NAN; n], objective_value }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Solves `lp`. Infeasibility and unboundedness are reported through
/// [`LpSolution::status`]; only internal solver breakdowns produce `Err`.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    let n = lp.num_vars();
    if lp.trivially_infeasible {
        return Ok(LpSolution::without_values(LpStatus::Infeasible, n));
    }
    if lp.ub_rows.iter().zip(&lp.ub_rhs).any(|(r, b)| r.is_empty() && *b < 0.0) {
        return Ok(LpSolution::without_values(LpStatus::Infeasible, n));
    }

    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = lp
        .objective
        .iter()
        .zip(&lp.bounds)
        .map(|(c, (lo, hi))| problem.add_var(*c, (*lo, *hi)))
        .collect();
    for (row, rhs) in lp.inequalities().filter(|(r, _)| !r.is_empty()) {
        let expr: Vec<_> = row.iter().map(|(v, a)| (vars[*v], *a)).collect();
        problem.add_constraint(expr.as_slice(), ComparisonOp::Le, rhs);
    }
    for (row, rhs) in lp.equalities() {
        let expr: Vec<_> = row.iter().map(|(v, a)| (vars[*v], *a)).collect();
        problem.add_constraint(expr.as_slice(), ComparisonOp::Eq, rhs);
    }

    let outcome = match problem.solve() {
        Ok(o) => o,
        Err(microlp::Error::Infeasible) => return Ok(LpSolution::without_values(LpStatus::Infeasible, n)),
        Err(microlp::Error::Unbounded) => return Ok(LpSolution::without_values(LpStatus::Unbounded, n)),
        Err(e) => return Err(crate::Error::Solver(e.to_string())),
    };
    let solution = outcome
        .into_solution()
        .map_err(|_| crate::Error::Solver("solve interrupted before a solution was found".into()))?;
    let values: Vec<f64> = vars.iter().map(|v| solution.var_value_raw(*v)).collect();
    let objective_value = lp.objective_value(&values);
    let violation = lp.max_violation(&values);
    if violation > FEASIBILITY_TOL {
        log::warn!("LP solution violates constraints by {violation:e}");
    }
    Ok(LpSolution { status: LpStatus::Optimal, values, objective_value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn single_lower_bound() {
        let mut lp = LinearProgram::new(1);
        lp.set_objective(vec![1.0]).unwrap();
        lp.set_bounds(0, 3.0, f64::INFINITY).unwrap();
        let s = solve_lp(&lp).unwrap();
        assert!(s.is_optimal());
        assert_abs_diff_eq!(s.values[0], 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.objective_value, 3.0, epsilon = 1e-9);
    }

    #[test]
    fn facet_optimum() {
        let mut lp = LinearProgram::new(2);
        lp.set_objective(vec![-1.0, -1.0]).unwrap();
        lp.add_le(vec![(0, 1.0), (1, 1.0)], 1.0).unwrap();
        let s = solve_lp(&lp).unwrap();
        assert_abs_diff_eq!(s.objective_value, -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.values[0] + s.values[1], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn simplex_vertex() {
        let mut lp = LinearProgram::new(2);
        lp.set_objective(vec![1.0, 3.0]).unwrap();
        lp.add_eq(vec![(0, 1.0), (1, 1.0)], 1.0).unwrap();
        let s = solve_lp(&lp).unwrap();
        assert_abs_diff_eq!(s.values[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.objective_value, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded_are_statuses() {
        let mut lp = LinearProgram::new(1);
        lp.add_le(vec![(0, 1.0)], -1.0).unwrap();
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);

        let mut lp = LinearProgram::new(1);
        lp.set_objective(vec![-1.0]).unwrap();
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);

        let mut lp = LinearProgram::new(1);
        lp.add_eq(vec![(0, 0.0)], 2.0).unwrap();
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn degenerate_rows_and_zeros_dropped() {
        let mut lp = LinearProgram::new(2);
        lp.add_eq(vec![(0, 0.0), (1, 0.0)], 0.0).unwrap();
        assert_eq!(lp.num_equalities(), 0);
        lp.add_le(vec![(0, 0.0), (1, 2.0)], 1.0).unwrap();
        assert_eq!(lp.inequalities().next().unwrap().0, &vec![(1, 2.0)]);
        assert!(lp.add_le(vec![(5, 1.0)], 0.0).is_err());
    }

    #[test]
    fn mps_dump_has_all_sections() {
        let mut lp = LinearProgram::new(2);
        lp.set_objective(vec![1.0, 2.0]).unwrap();
        lp.add_le(vec![(0, 1.0), (1, -1.0)], 0.5).unwrap();
        lp.add_eq(vec![(0, 1.0), (1, 1.0)], 1.0).unwrap();
        lp.set_bounds(1, 0.0, 4.0).unwrap();
        let mps = lp.to_mps("TINY");
        for section in ["NAME", "ROWS", "COLUMNS", "RHS", "BOUNDS", "ENDATA"] {
            assert!(mps.contains(section), "{section} missing:\n{mps}");
        }
        assert!(mps.contains(" L  L0000000"));
        assert!(mps.contains(" E  E0000000"));
        assert!(mps.contains(" UP BND       X0000001"));
    }

    /// Exhaustive vertex enumeration for tiny bounded programs: every vertex is
    /// the solution of `n` tight constraints.
    fn vertex_oracle(lp: &LinearProgram) -> Option<f64> {
        let n = lp.num_vars();
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        let dense = |r: &SparseRow| {
            let mut d = vec![0.0; n];
            for (v, a) in r {
                d[*v] += a;
            }
            d
        };
        for (r, b) in lp.inequalities() {
            rows.push((dense(r), b));
        }
        for (r, b) in lp.equalities() {
            rows.push((dense(r), b));
            rows.push((dense(r).iter().map(|a| -a).collect(), -b));
        }
        for (j, (lo, hi)) in lp.bounds().iter().enumerate() {
            let mut e = vec![0.0; n];
            e[j] = -1.0;
            rows.push((e.clone(), -lo));
            if hi.is_finite() {
                e[j] = 1.0;
                rows.push((e, *hi));
            }
        }
        let m = rows.len();
        let mut best: Option<f64> = None;
        let mut subset: Vec<usize> = (0..n).collect();
        loop {
            let mut a: Vec<Vec<f64>> = subset.iter().map(|i| rows[*i].0.clone()).collect();
            let mut b: Vec<f64> = subset.iter().map(|i| rows[*i].1).collect();
            if let Some(x) = gauss(&mut a, &mut b) {
                let feasible = rows
                    .iter()
                    .all(|(r, rhs)| r.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>() <= rhs + 1e-9);
                if feasible {
                    let obj = lp.objective_value(&x);
                    best = Some(best.map_or(obj, |b: f64| b.min(obj)));
                }
            }
            // next combination
            let mut i = n;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                if subset[i] < m - n + i {
                    subset[i] += 1;
                    for j in i + 1..n {
                        subset[j] = subset[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    fn gauss(a: &mut [Vec<f64>], b: &mut [f64]) -> Option<Vec<f64>> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|i, j| a[*i][col].abs().total_cmp(&a[*j][col].abs()))?;
            if a[piv][col].abs() < 1e-10 {
                return None;
            }
            a.swap(col, piv);
            b.swap(col, piv);
            for r in 0..n {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..n {
                        a[r][c] -= f * a[col][c];
                    }
                    b[r] -= f * b[col];
                }
            }
        }
        Some((0..n).map(|i| b[i] / a[i][i]).collect())
    }

    #[test]
    fn oracle_sanity() {
        let mut lp = LinearProgram::new(2);
        lp.set_objective(vec![-1.0, -2.0]).unwrap();
        lp.add_le(vec![(0, 1.0), (1, 1.0)], 4.0).unwrap();
        lp.set_bounds(1, 0.0, 3.0).unwrap();
        assert_abs_diff_eq!(vertex_oracle(&lp).unwrap(), -7.0, epsilon = 1e-9);
    }

    fn random_lp() -> impl Strategy<Value = LinearProgram> {
        (1usize..=6, 0usize..=6, 0usize..=2, any::<u64>()).prop_map(|(n, m_ub, m_eq, seed)| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x0: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
            let mut lp = LinearProgram::new(n);
            lp.set_objective((0..n).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
            for j in 0..n {
                lp.set_bounds(j, 0.0, 10.0).unwrap();
            }
            let m_eq = m_eq.min(n.saturating_sub(1));
            for _ in 0..m_ub {
                let row: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.random_range(-2.0..2.0))).collect();
                let lhs: f64 = row.iter().map(|(j, a)| a * x0[*j]).sum();
                lp.add_le(row, lhs + rng.random_range(0.0..2.0)).unwrap();
            }
            for _ in 0..m_eq {
                let row: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.random_range(-2.0..2.0))).collect();
                let lhs: f64 = row.iter().map(|(j, a)| a * x0[*j]).sum();
                lp.add_eq(row, lhs).unwrap();
            }
            lp
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn matches_vertex_enumeration(lp in random_lp()) {
            let s = solve_lp(&lp).unwrap();
            prop_assert!(s.is_optimal());
            prop_assert!(lp.max_violation(&s.values) <= FEASIBILITY_TOL);
            let oracle = vertex_oracle(&lp).expect("feasible bounded program has a vertex");
            prop_assert!((s.objective_value - oracle).abs() <= 1e-6, "solver {} oracle {}", s.objective_value, oracle);
        }

        #[test]
        fn solve_is_deterministic(lp in random_lp()) {
            let a = solve_lp(&lp).unwrap();
            let b = solve_lp(&lp).unwrap();
            prop_assert_eq!(a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            b.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
