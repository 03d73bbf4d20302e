//! Dense convex QP solved by exact active-set enumeration.
//!
//! The controller's problems have three or four variables and a handful of
//! rows, so every candidate active set (of size up to the variable count) is
//! tried in a fixed order and the first KKT point is returned. Strict
//! convexity makes that point the unique optimum.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ControllerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    /// `coeffs . z <= bound`
    Le,
    /// `coeffs . z >= bound`
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub bound: f64,
    pub sense: Sense,
}

impl Row {
    pub fn le(coeffs: Vec<f64>, bound: f64) -> Self {
        Row {
            coeffs,
            bound,
            sense: Sense::Le,
        }
    }

    pub fn ge(coeffs: Vec<f64>, bound: f64) -> Self {
        Row {
            coeffs,
            bound,
            sense: Sense::Ge,
        }
    }

    /// Signed violation: positive when the row is not satisfied.
    pub fn violation(&self, z: &[f64]) -> f64 {
        let lhs: f64 = self.coeffs.iter().zip(z).map(|(a, x)| a * x).sum();
        match self.sense {
            Sense::Le => lhs - self.bound,
            Sense::Ge => self.bound - lhs,
        }
    }
}

/// `min 1/2 z'Pz + q'z` subject to the rows and per-variable boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem {
    /// Row-major `n x n` cost matrix.
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub rows: Vec<Row>,
    /// Per-variable lower bounds; `-inf` for none.
    pub lower: Vec<f64>,
    /// Per-variable upper bounds; `+inf` for none.
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    RelaxedCbf,
    Infeasible,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::RelaxedCbf => "relaxed-cbf",
            QpStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub z: Vec<f64>,
    /// Multipliers of the rows, then of the finite lower bounds, then of the
    /// finite upper bounds, in variable order.
    pub multipliers: Vec<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub kkt_residual: f64,
}

/// All constraints written as `a . z <= b`.
struct Stacked {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl QpProblem {
    /// Problem with no rows and unbounded variables.
    pub fn unconstrained(p: Vec<f64>, q: Vec<f64>) -> Self {
        let n = q.len();
        QpProblem {
            p,
            q,
            rows: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let n = self.dim();
        let mut f = 0.0;
        for i in 0..n {
            f += self.q[i] * z[i];
            for j in 0..n {
                f += 0.5 * z[i] * self.p[i * n + j] * z[j];
            }
        }
        f
    }

    /// Largest constraint violation (rows and boxes) at `z`, zero when feasible.
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for r in &self.rows {
            v = v.max(r.violation(z));
        }
        for i in 0..self.dim() {
            v = v.max(self.lower[i] - z[i]).max(z[i] - self.upper[i]);
        }
        v.max(0.0)
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        let n = self.dim();
        if n == 0 || self.p.len() != n * n || self.lower.len() != n || self.upper.len() != n {
            return Err(ControllerError::Dimension);
        }
        if self.rows.iter().any(|r| r.coeffs.len() != n) {
            return Err(ControllerError::Dimension);
        }
        let finite = self.p.iter().chain(&self.q).all(|x| x.is_finite())
            && self
                .rows
                .iter()
                .all(|r| r.bound.is_finite() && r.coeffs.iter().all(|c| c.is_finite()))
            && self.lower.iter().chain(&self.upper).all(|x| !x.is_nan());
        if !finite {
            return Err(ControllerError::NonFinite);
        }
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (self.p[i * n + j], self.p[j * n + i]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(ControllerError::NotPositiveDefinite);
                }
            }
        }
        if DMatrix::from_row_slice(n, n, &self.p).cholesky().is_none() {
            return Err(ControllerError::NotPositiveDefinite);
        }
        Ok(())
    }

    fn stacked(&self) -> Stacked {
        let n = self.dim();
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        for r in &self.rows {
            match r.sense {
                Sense::Le => rows.push((r.coeffs.clone(), r.bound)),
                Sense::Ge => rows.push((r.coeffs.iter().map(|c| -c).collect(), -r.bound)),
            }
        }
        for i in 0..n {
            if self.lower[i].is_finite() {
                let mut a = vec![0.0; n];
                a[i] = -1.0;
                rows.push((a, -self.lower[i]));
            }
        }
        for i in 0..n {
            if self.upper[i].is_finite() {
                let mut a = vec![0.0; n];
                a[i] = 1.0;
                rows.push((a, self.upper[i]));
            }
        }
        let m = rows.len();
        let a = DMatrix::from_fn(m, n, |i, j| rows[i].0[j]);
        let b = DVector::from_fn(m, |i, _| rows[i].1);
        Stacked { a, b }
    }
}

const PRIMAL_TOL: f64 = 1e-10;
const DUAL_TOL: f64 = 1e-10;

/// Visits every subset of `0..m` with at most `max_size` elements, ordered by
/// size and then lexicographically, until `visit` returns true.
fn for_each_subset(m: usize, max_size: usize, mut visit: impl FnMut(&[usize]) -> bool) -> bool {
    fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize]) -> bool) -> bool {
        if cur.len() == k {
            return visit(cur);
        }
        for i in start..m {
            cur.push(i);
            if rec(i + 1, m, k, cur, visit) {
                return true;
            }
            cur.pop();
        }
        false
    }
    let mut cur = Vec::with_capacity(max_size);
    for k in 0..=max_size.min(m) {
        if rec(0, m, k, &mut cur, &mut visit) {
            return true;
        }
    }
    false
}

/// Solves the QP exactly. An empty feasible set yields status `Infeasible`
/// with `z` at the unconstrained minimizer.
pub fn solve_qp(problem: &QpProblem) -> Result<QpSolution, ControllerError> {
    problem.validate()?;
    let n = problem.dim();
    let p = DMatrix::from_row_slice(n, n, &problem.p);
    let q = DVector::from_column_slice(&problem.q);
    let chol = p.clone().cholesky().ok_or(ControllerError::NotPositiveDefinite)?;
    let p_inv = chol.inverse();
    let Stacked { a, b } = problem.stacked();
    let m = a.nrows();
    // the multipliers of an active set S solve (A_S P^-1 A_S') lam = -(b_S + A_S P^-1 q)
    let z_free = -(&p_inv * &q);
    let gram = &a * &p_inv * a.transpose();
    let rhs_all = -(&b - &a * &z_free);
    let row_scale: Vec<f64> = (0..m)
        .map(|i| 1.0 + b[i].abs() + a.row(i).amax() * z_free.amax())
        .collect();

    let mut found: Option<(DVector<f64>, DVector<f64>)> = None;
    for_each_subset(m, n, |s| {
        let k = s.len();
        let lam_s = if k == 0 {
            DVector::zeros(0)
        } else {
            let g = DMatrix::from_fn(k, k, |i, j| gram[(s[i], s[j])]);
            let r = DVector::from_fn(k, |i, _| rhs_all[s[i]]);
            let Some(c) = g.cholesky() else {
                return false;
            };
            // guard against nearly dependent active rows
            let diag_min = (0..k).map(|i| c.l_dirty()[(i, i)]).fold(f64::INFINITY, f64::min);
            let diag_max = (0..k).map(|i| c.l_dirty()[(i, i)]).fold(0.0, f64::max);
            if diag_min <= 1e-7 * diag_max {
                return false;
            }
            c.solve(&r)
        };
        let lam_scale = 1.0 + lam_s.amax();
        if lam_s.iter().any(|&l| l < -DUAL_TOL * lam_scale) {
            return false;
        }
        let mut at_lam = DVector::zeros(n);
        for (i, &idx) in s.iter().enumerate() {
            at_lam += a.row(idx).transpose() * lam_s[i];
        }
        let z = &z_free - &p_inv * at_lam;
        let z_scale = 1.0 + z.amax();
        for i in 0..m {
            if s.contains(&i) {
                continue;
            }
            let slack = a.row(i).dot(&z.transpose()) - b[i];
            if slack > PRIMAL_TOL * (row_scale[i] + a.row(i).amax() * z_scale) {
                return false;
            }
        }
        let mut lam = DVector::zeros(m);
        for (i, &idx) in s.iter().enumerate() {
            lam[idx] = lam_s[i].max(0.0);
        }
        found = Some((z, lam));
        true
    });

    let (z, lam, status) = match found {
        Some((z, lam)) => (z, lam, QpStatus::Optimal),
        None => (z_free, DVector::zeros(m), QpStatus::Infeasible),
    };
    let z_vec: Vec<f64> = z.iter().copied().collect();
    let kkt_residual = if status == QpStatus::Optimal {
        kkt_residual(&p, &q, &a, &b, &z, &lam)
    } else {
        f64::INFINITY
    };
    Ok(QpSolution {
        objective: problem.objective(&z_vec),
        z: z_vec,
        multipliers: lam.iter().copied().collect(),
        status,
        kkt_residual,
    })
}

/// Worst of stationarity, primal feasibility, dual feasibility and
/// complementarity.
fn kkt_residual(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    z: &DVector<f64>,
    lam: &DVector<f64>,
) -> f64 {
    let stat = (p * z + q + a.transpose() * lam).amax();
    let slack = a * z - b;
    let primal = slack.iter().fold(0.0f64, |m, &s| m.max(s));
    let dual = lam.iter().fold(0.0f64, |m, &l| m.max(-l));
    let comp = lam.iter().zip(slack.iter()).fold(0.0f64, |m, (l, s)| m.max((l * s).abs()));
    stat.max(primal).max(dual).max(comp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag(d: &[f64]) -> Vec<f64> {
        let n = d.len();
        let mut p = vec![0.0; n * n];
        for i in 0..n {
            p[i * n + i] = d[i];
        }
        p
    }

    #[test]
    fn unconstrained_minimum_at_origin() {
        let mut prob = QpProblem::unconstrained(diag(&[2.0, 1.0, 100.0]), vec![0.0; 3]);
        prob.lower = vec![-1.0, -1.0, 0.0];
        prob.upper = vec![1.0, 1.0, f64::INFINITY];
        let sol = solve_qp(&prob).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(sol.z.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn single_halfspace_projection() {
        let mut prob = QpProblem::unconstrained(diag(&[1.0, 1.0, 1.0]), vec![0.0; 3]);
        prob.lower[2] = 0.0;
        prob.rows.push(Row::ge(vec![1.0, 0.0, 0.0], 0.1));
        let sol = solve_qp(&prob).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.z[0] - 0.1).abs() < 1e-12 && sol.z[1].abs() < 1e-12 && sol.z[2].abs() < 1e-12);
        assert!(sol.kkt_residual < 1e-8);
    }

    #[test]
    fn detects_infeasibility() {
        let mut prob = QpProblem::unconstrained(diag(&[1.0, 1.0]), vec![0.0; 2]);
        prob.rows.push(Row::ge(vec![1.0, 0.0], 1.0));
        prob.rows.push(Row::le(vec![1.0, 0.0], 0.5));
        assert_eq!(solve_qp(&prob).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn rejects_indefinite_cost() {
        let prob = QpProblem::unconstrained(diag(&[1.0, -1.0]), vec![0.0; 2]);
        assert!(matches!(solve_qp(&prob), Err(ControllerError::NotPositiveDefinite)));
    }

    #[test]
    fn degenerate_vertex() {
        // three rows through the same point in two dimensions
        let mut prob = QpProblem::unconstrained(diag(&[1.0, 1.0]), vec![-2.0, -2.0]);
        prob.rows.push(Row::le(vec![1.0, 0.0], 1.0));
        prob.rows.push(Row::le(vec![0.0, 1.0], 1.0));
        prob.rows.push(Row::le(vec![1.0, 1.0], 2.0));
        let sol = solve_qp(&prob).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.z[0] - 1.0).abs() < 1e-12 && (sol.z[1] - 1.0).abs() < 1e-12);
        assert!(sol.kkt_residual < 1e-8);
    }

    fn random_problem(rng: &mut ChaCha8Rng) -> QpProblem {
        let l: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut p = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                p[i * 3 + j] = (0..3).map(|k| l[i * 3 + k] * l[j * 3 + k]).sum::<f64>();
            }
            p[i * 3 + i] += 0.1;
        }
        let q = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut prob = QpProblem::unconstrained(p, q);
        prob.lower = vec![-0.3, -0.5, 0.0];
        prob.upper = vec![0.3, 0.5, f64::INFINITY];
        let z0 = [rng.random_range(-0.3..0.3), rng.random_range(-0.5..0.5), rng.random_range(0.0..0.5)];
        for _ in 0..rng.random_range(0..=8) {
            let a: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lhs: f64 = a.iter().zip(z0).map(|(x, y)| x * y).sum();
            prob.rows.push(Row::le(a, lhs + rng.random_range(0.0..0.2)));
        }
        prob
    }

    #[test]
    fn random_problems_satisfy_kkt_and_ignore_row_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let prob = random_problem(&mut rng);
            let sol = solve_qp(&prob).unwrap();
            assert_eq!(sol.status, QpStatus::Optimal);
            assert!(sol.kkt_residual < 1e-8, "{}", sol.kkt_residual);
            let mut shuffled = prob.clone();
            shuffled.rows.reverse();
            if shuffled.rows.len() > 2 {
                shuffled.rows.swap(0, 1);
            }
            let other = solve_qp(&shuffled).unwrap();
            for (a, b) in sol.z.iter().zip(&other.z) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn random_problems_beat_feasible_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let prob = random_problem(&mut rng);
            let sol = solve_qp(&prob).unwrap();
            for _ in 0..2000 {
                let z = [rng.random_range(-0.3..0.3), rng.random_range(-0.5..0.5), rng.random_range(0.0..2.0)];
                if prob.max_violation(&z) == 0.0 {
                    assert!(sol.objective <= prob.objective(&z) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn cost_scaling_keeps_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let prob = random_problem(&mut rng);
            let k = rng.random_range(0.01..100.0);
            let mut scaled = prob.clone();
            scaled.p.iter_mut().for_each(|x| *x *= k);
            scaled.q.iter_mut().for_each(|x| *x *= k);
            let a = solve_qp(&prob).unwrap();
            let b = solve_qp(&scaled).unwrap();
            for (x, y) in a.z.iter().zip(&b.z) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn kkt_row_order_and_scaling(seed in proptest::prelude::any::<u64>(), k in 0.01..100.0f64, rot in 0usize..8) {
            let prob = random_problem(&mut ChaCha8Rng::seed_from_u64(seed));
            let sol = solve_qp(&prob).unwrap();
            proptest::prop_assert_eq!(sol.status, QpStatus::Optimal);
            proptest::prop_assert!(sol.kkt_residual < 1e-8);
            proptest::prop_assert!(prob.max_violation(&sol.z) < 1e-9);
            let mut other = prob.clone();
            if !other.rows.is_empty() {
                let r = rot % other.rows.len();
                other.rows.rotate_left(r);
            }
            other.p.iter_mut().for_each(|x| *x *= k);
            other.q.iter_mut().for_each(|x| *x *= k);
            let b = solve_qp(&other).unwrap();
            for (x, y) in sol.z.iter().zip(&b.z) {
                proptest::prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
