//! Dense bounded-variable revised simplex for small equality-form LPs:
//! `min cᵀx  s.t.  A x = b,  l ≤ x ≤ u`.
//!
//! Two phases with one artificial per row, Bland's rule for both the entering
//! and the leaving choice, and an explicit basis inverse that is refreshed by
//! LU refactorization every few dozen pivots.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 40;
const MAX_ITERATIONS: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub c: Vec<f64>,
    /// Constraint matrix, `m × n`.
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    /// Equality-row multipliers `y` with `c - Aᵀy` the reduced costs.
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl LpSolution {
    fn not_optimal(status: LpStatus, n: usize, m: usize, iterations: usize) -> Self {
        LpSolution {
            status,
            x: vec![f64::NAN; n],
            duals: vec![f64::NAN; m],
            reduced_costs: vec![f64::NAN; n],
            objective: f64::NAN,
            iterations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum NonbasicAt {
    Lower,
    Upper,
    /// Free variable parked at zero.
    Zero,
}

struct Simplex<'a> {
    a: &'a DMatrix<f64>,
    b: &'a [f64],
    m: usize,
    n: usize,
    /// Sign of each artificial column.
    art_sign: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    position: Vec<Option<usize>>,
    state: Vec<NonbasicAt>,
    binv: DMatrix<f64>,
    iterations: usize,
    since_refactor: usize,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

impl<'a> Simplex<'a> {
    fn total(&self) -> usize {
        self.n + self.m
    }

    fn column(&self, j: usize) -> DVector<f64> {
        if j < self.n {
            self.a.column(j).into_owned()
        } else {
            let mut e = DVector::zeros(self.m);
            e[j - self.n] = self.art_sign[j - self.n];
            e
        }
    }

    fn column_dot(&self, j: usize, y: &DVector<f64>) -> f64 {
        if j < self.n {
            self.a.column(j).dot(y)
        } else {
            self.art_sign[j - self.n] * y[j - self.n]
        }
    }

    fn basis_matrix(&self) -> DMatrix<f64> {
        let mut bm = DMatrix::zeros(self.m, self.m);
        for (p, &j) in self.basis.iter().enumerate() {
            bm.set_column(p, &self.column(j));
        }
        bm
    }

    /// Recomputes `B⁻¹` from scratch and the basic values from the nonbasic ones.
    fn refactor(&mut self) -> Result<()> {
        if self.m == 0 {
            return Ok(());
        }
        self.binv = self
            .basis_matrix()
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Singular("simplex basis became singular".into()))?;
        let mut rhs = DVector::from_column_slice(self.b);
        for j in 0..self.total() {
            if self.position[j].is_none() && self.x[j] != 0.0 {
                rhs -= self.column(j) * self.x[j];
            }
        }
        let xb = &self.binv * rhs;
        for (p, &j) in self.basis.iter().enumerate() {
            self.x[j] = xb[p];
        }
        self.since_refactor = 0;
        Ok(())
    }

    fn simplex_multipliers(&self) -> DVector<f64> {
        let cb = DVector::from_iterator(self.m, self.basis.iter().map(|&j| self.cost[j]));
        self.binv.tr_mul(&cb)
    }

    fn reduced_cost(&self, j: usize, y: &DVector<f64>) -> f64 {
        self.cost[j] - self.column_dot(j, y)
    }

    /// First improving nonbasic variable (Bland), with its direction of motion.
    fn entering(&self, y: &DVector<f64>, dual_tol: f64) -> Option<(usize, f64)> {
        (0..self.total()).find_map(|j| {
            if self.position[j].is_some() || self.lower[j] == self.upper[j] {
                return None;
            }
            let d = self.reduced_cost(j, y);
            match self.state[j] {
                NonbasicAt::Lower if d < -dual_tol => Some((j, 1.0)),
                NonbasicAt::Upper if d > dual_tol => Some((j, -1.0)),
                NonbasicAt::Zero if d.abs() > dual_tol => Some((j, -d.signum())),
                _ => None,
            }
        })
    }

    fn run_phase(&mut self, dual_tol: f64) -> Result<PhaseEnd> {
        loop {
            if self.iterations >= MAX_ITERATIONS {
                return Err(Error::LpStatus(format!("iteration limit {MAX_ITERATIONS} reached")));
            }
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
            }
            let y = self.simplex_multipliers();
            let Some((q, dir)) = self.entering(&y, dual_tol) else {
                return Ok(PhaseEnd::Optimal);
            };
            self.iterations += 1;
            self.since_refactor += 1;

            let w = &self.binv * self.column(q);
            // x_B moves by -θ·dir·w as x_q moves by θ·dir.
            let own_range = self.upper[q] - self.lower[q];
            let mut theta = own_range;
            let mut leaving: Option<(usize, bool)> = None;
            for p in 0..self.m {
                let rate = dir * w[p];
                let j = self.basis[p];
                let (limit, to_lower) = if rate > PIVOT_TOL && self.lower[j].is_finite() {
                    (((self.x[j] - self.lower[j]) / rate).max(0.0), true)
                } else if rate < -PIVOT_TOL && self.upper[j].is_finite() {
                    (((self.upper[j] - self.x[j]) / -rate).max(0.0), false)
                } else {
                    continue;
                };
                let better = match leaving {
                    _ if limit < theta => true,
                    Some((lp, _)) if limit == theta => j < self.basis[lp],
                    None if limit == theta => true,
                    _ => false,
                };
                if better {
                    theta = limit;
                    leaving = Some((p, to_lower));
                }
            }
            if theta.is_infinite() {
                return Ok(PhaseEnd::Unbounded);
            }

            for p in 0..self.m {
                let j = self.basis[p];
                self.x[j] -= theta * dir * w[p];
            }
            match leaving {
                None => {
                    // Bound flip of the entering variable.
                    let (value, at) = if dir > 0.0 {
                        (self.upper[q], NonbasicAt::Upper)
                    } else {
                        (self.lower[q], NonbasicAt::Lower)
                    };
                    self.x[q] = value;
                    self.state[q] = at;
                }
                Some((p, to_lower)) => {
                    self.x[q] += theta * dir;
                    let r = self.basis[p];
                    if to_lower {
                        self.x[r] = self.lower[r];
                        self.state[r] = NonbasicAt::Lower;
                    } else {
                        self.x[r] = self.upper[r];
                        self.state[r] = NonbasicAt::Upper;
                    }
                    self.pivot(p, q, &w);
                }
            }
        }
    }

    fn pivot(&mut self, p: usize, q: usize, w: &DVector<f64>) {
        let r = self.basis[p];
        let pivot = w[p];
        let row_p = self.binv.row(p) / pivot;
        for i in 0..self.m {
            if i != p && w[i] != 0.0 {
                let factor = w[i];
                let updated = self.binv.row(i) - &row_p * factor;
                self.binv.set_row(i, &updated);
            }
        }
        self.binv.set_row(p, &row_p);
        self.basis[p] = q;
        self.position[q] = Some(p);
        self.position[r] = None;
    }
}

fn check_dimensions(problem: &LpProblem) -> Result<()> {
    let (m, n) = problem.a.shape();
    if problem.c.len() != n || problem.lower.len() != n || problem.upper.len() != n || problem.b.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "lp with A {m}×{n}: c {}, b {}, lower {}, upper {}",
            problem.c.len(),
            problem.b.len(),
            problem.lower.len(),
            problem.upper.len()
        )));
    }
    let non_finite = problem
        .c
        .iter()
        .chain(&problem.b)
        .chain(problem.a.iter())
        .any(|v| !v.is_finite())
        || problem.lower.iter().any(|v| v.is_nan() || *v == f64::INFINITY)
        || problem.upper.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY);
    if non_finite {
        return Err(Error::InvalidParameter(
            "lp data must be finite (bounds may be ±inf outward)".into(),
        ));
    }
    Ok(())
}

/// Solves the LP. Infeasibility and unboundedness are reported through the
/// status; errors are reserved for malformed input and numerical breakdown.
pub fn lp_solve(problem: &LpProblem) -> Result<LpSolution> {
    check_dimensions(problem)?;
    let (m, n) = problem.a.shape();
    if problem.lower.iter().zip(&problem.upper).any(|(l, u)| l > u) {
        return Ok(LpSolution::not_optimal(LpStatus::Infeasible, n, m, 0));
    }

    // Nonbasic start: nearest finite bound to zero, free variables at zero.
    let mut x = vec![0.0; n + m];
    let mut state = vec![NonbasicAt::Zero; n + m];
    for j in 0..n {
        let (l, u) = (problem.lower[j], problem.upper[j]);
        if l.is_finite() && (!u.is_finite() || l.abs() <= u.abs()) {
            x[j] = l;
            state[j] = NonbasicAt::Lower;
        } else if u.is_finite() {
            x[j] = u;
            state[j] = NonbasicAt::Upper;
        }
    }
    let mut residual = DVector::from_column_slice(&problem.b);
    for j in 0..n {
        if x[j] != 0.0 {
            residual -= problem.a.column(j) * x[j];
        }
    }
    let art_sign: Vec<f64> = residual.iter().map(|r| if *r < 0.0 { -1.0 } else { 1.0 }).collect();
    let mut lower = problem.lower.clone();
    let mut upper = problem.upper.clone();
    lower.extend(std::iter::repeat_n(0.0, m));
    upper.extend(std::iter::repeat_n(f64::INFINITY, m));
    for i in 0..m {
        x[n + i] = residual[i].abs();
    }
    let mut position = vec![None; n + m];
    for i in 0..m {
        position[n + i] = Some(i);
    }
    let mut phase1_cost = vec![0.0; n];
    phase1_cost.extend(std::iter::repeat_n(1.0, m));

    let mut sx = Simplex {
        a: &problem.a,
        b: &problem.b,
        m,
        n,
        binv: DMatrix::from_diagonal(&DVector::from_vec(art_sign.clone())),
        art_sign,
        lower,
        upper,
        cost: phase1_cost,
        x,
        basis: (n..n + m).collect(),
        position,
        state,
        iterations: 0,
        since_refactor: 0,
    };

    let b_scale = problem.b.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let a_scale = problem.a.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let c_scale = problem.c.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));

    if m > 0 {
        sx.run_phase(1e-11 * a_scale)?;
        sx.refactor()?;
        let infeasibility: f64 = (n..n + m).map(|j| sx.x[j].abs()).sum();
        if infeasibility > 1e-9 * b_scale {
            return Ok(LpSolution::not_optimal(LpStatus::Infeasible, n, m, sx.iterations));
        }
        drive_out_artificials(&mut sx)?;
    }

    // Phase 2: artificials pinned at zero.
    for j in n..n + m {
        sx.lower[j] = 0.0;
        sx.upper[j] = 0.0;
        if sx.position[j].is_none() {
            sx.x[j] = 0.0;
            sx.state[j] = NonbasicAt::Lower;
        }
    }
    sx.cost = problem.c.clone();
    sx.cost.extend(std::iter::repeat_n(0.0, m));
    sx.refactor()?;
    let end = sx.run_phase(1e-10 * c_scale)?;
    if let PhaseEnd::Unbounded = end {
        return Ok(LpSolution::not_optimal(LpStatus::Unbounded, n, m, sx.iterations));
    }
    sx.refactor()?;

    let y = sx.simplex_multipliers();
    let reduced_costs: Vec<f64> = (0..n).map(|j| sx.reduced_cost(j, &y)).collect();
    let x: Vec<f64> = sx.x[..n].to_vec();
    let objective = problem.c.iter().zip(&x).map(|(c, x)| c * x).sum();
    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        duals: y.iter().copied().collect(),
        reduced_costs,
        objective,
        iterations: sx.iterations,
    })
}

/// Pivots zero-valued basic artificials out of the basis where a structural
/// column can replace them; rows where none can are redundant and keep their
/// artificial, pinned at zero.
fn drive_out_artificials(sx: &mut Simplex<'_>) -> Result<()> {
    for p in 0..sx.m {
        if sx.basis[p] < sx.n {
            continue;
        }
        let row = sx.binv.row(p).transpose();
        let candidate = (0..sx.n)
            .filter(|&j| sx.position[j].is_none())
            .map(|j| (j, sx.column_dot(j, &row)))
            .filter(|(_, v)| v.abs() > 1e-7)
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()));
        if let Some((q, _)) = candidate {
            let w = &sx.binv * sx.column(q);
            let r = sx.basis[p];
            sx.x[r] = 0.0;
            sx.state[r] = NonbasicAt::Lower;
            sx.pivot(p, q, &w);
            sx.iterations += 1;
        }
    }
    sx.refactor()
}
