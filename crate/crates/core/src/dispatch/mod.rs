//! Economic dispatch with soft thermal limits: grid cases, an exact LP
//! oracle with dual extraction, and load sampling.

pub mod case;
pub mod lp;
pub mod ptdf;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use case::{build_case, CaseSpec, Topology};
pub use lp::{lp_solve, LpProblem, LpSolution, LpStatus};
pub use ptdf::{compute_ptdf, Line};

/// An economic-dispatch instance template. Matrices are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    pub n_bus: usize,
    pub n_gen: usize,
    pub n_load: usize,
    pub n_line: usize,
    pub c: Vec<f64>,
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
    pub f_min: Vec<f64>,
    pub f_max: Vec<f64>,
    /// `n_line × n_bus`.
    pub ptdf: Vec<Vec<f64>>,
    /// `n_bus × n_gen`.
    pub a_gen: Vec<Vec<f64>>,
    /// `n_bus × n_load`.
    pub a_load: Vec<Vec<f64>>,
    pub big_m: f64,
    pub d0: Vec<f64>,
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>], cols: usize) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

pub(crate) fn mat_vec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl GridCase {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("c", self.c.len(), self.n_gen),
            ("p_min", self.p_min.len(), self.n_gen),
            ("p_max", self.p_max.len(), self.n_gen),
            ("f_min", self.f_min.len(), self.n_line),
            ("f_max", self.f_max.len(), self.n_line),
            ("d0", self.d0.len(), self.n_load),
            ("ptdf rows", self.ptdf.len(), self.n_line),
            ("a_gen rows", self.a_gen.len(), self.n_bus),
            ("a_load rows", self.a_load.len(), self.n_bus),
        ];
        for (name, got, want) in dims {
            if got != want {
                return Err(Error::DimensionMismatch(format!("{name}: expected {want}, got {got}")));
            }
        }
        if self.ptdf.iter().any(|r| r.len() != self.n_bus)
            || self.a_gen.iter().any(|r| r.len() != self.n_gen)
            || self.a_load.iter().any(|r| r.len() != self.n_load)
        {
            return Err(Error::DimensionMismatch("ragged case matrix".into()));
        }
        if self.n_gen == 0 || self.n_load == 0 {
            return Err(Error::DegenerateCase(
                "case needs at least one generator and one load".into(),
            ));
        }
        if self.p_min.iter().zip(&self.p_max).any(|(l, u)| !(l <= u)) {
            return Err(Error::DegenerateCase("p_min exceeds p_max".into()));
        }
        if self.f_min.iter().zip(&self.f_max).any(|(l, u)| !(l <= u)) {
            return Err(Error::DegenerateCase("f_min exceeds f_max".into()));
        }
        let max_c = self.c.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        if !(self.big_m > max_c) {
            return Err(Error::DegenerateCase(format!(
                "penalty {} must exceed every cost",
                self.big_m
            )));
        }
        for (name, inc, cols) in [
            ("a_gen", &self.a_gen, self.n_gen),
            ("a_load", &self.a_load, self.n_load),
        ] {
            for j in 0..cols {
                let nnz: Vec<f64> = inc.iter().map(|r| r[j]).filter(|v| *v != 0.0).collect();
                if nnz != [1.0] {
                    return Err(Error::DegenerateCase(format!(
                        "{name} column {j} is not a unit incidence"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `Φ A_g`, `n_line × n_gen`.
    pub fn gen_factors(&self) -> Vec<Vec<f64>> {
        mat_mul(&self.ptdf, &self.a_gen, self.n_gen)
    }

    /// `Φ A_d`, `n_line × n_load`.
    pub fn load_factors(&self) -> Vec<Vec<f64>> {
        mat_mul(&self.ptdf, &self.a_load, self.n_load)
    }

    /// `f = Φ A_g p − Φ A_d d`.
    pub fn flows(&self, p: &[f64], d: &[f64]) -> Vec<f64> {
        let fg = mat_vec(&self.gen_factors(), p);
        let fd = mat_vec(&self.load_factors(), d);
        fg.iter().zip(&fd).map(|(a, b)| a - b).collect()
    }

    /// Smallest thermal violation consistent with the flows.
    pub fn violations(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(self.f_min.iter().zip(&self.f_max))
            .map(|(&f, (&lo, &hi))| 0.0f64.max(f - hi).max(lo - f))
            .collect()
    }

    pub fn check_demand(&self, d: &[f64]) -> Result<f64> {
        if d.len() != self.n_load {
            return Err(Error::DimensionMismatch(format!(
                "load vector of length {} for {} loads",
                d.len(),
                self.n_load
            )));
        }
        let total: f64 = d.iter().sum();
        let min: f64 = self.p_min.iter().sum();
        let max: f64 = self.p_max.iter().sum();
        if !(total >= min && total <= max) {
            return Err(Error::InfeasibleDemand { total, min, max });
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalSolution {
    pub p: Vec<f64>,
    pub f: Vec<f64>,
    pub xi: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub lambda: f64,
    pub pi: Vec<f64>,
    pub mu_lo: Vec<f64>,
    pub mu_hi: Vec<f64>,
    pub z_lo: Vec<f64>,
    pub z_hi: Vec<f64>,
    pub y: Vec<f64>,
    pub objective: f64,
}

impl DualSolution {
    /// Some line carries a nonzero congestion price.
    pub fn is_congested(&self) -> bool {
        self.pi.iter().any(|p| p.abs() > 1e-9)
    }
}

/// `cᵀp + M eᵀξ`.
pub fn primal_objective(case: &GridCase, p: &[f64], xi: &[f64]) -> f64 {
    dot(&case.c, p) + case.big_m * xi.iter().sum::<f64>()
}

/// `λ eᵀd + (Φ A_d d)ᵀπ + f̲ᵀμ̲ − f̄ᵀμ̄ + p̲ᵀz̲ − p̄ᵀz̄`.
pub fn dual_objective(case: &GridCase, d: &[f64], dual: &DualSolution) -> f64 {
    let load_flows = mat_vec(&case.load_factors(), d);
    dual.lambda * d.iter().sum::<f64>() + dot(&load_flows, &dual.pi) + dot(&case.f_min, &dual.mu_lo)
        - dot(&case.f_max, &dual.mu_hi)
        + dot(&case.p_min, &dual.z_lo)
        - dot(&case.p_max, &dual.z_hi)
}

/// Completes prices `(λ, π)` with `|π| ≤ M` into a dual-feasible point: the
/// line multipliers split `π` by sign, `y` takes the rest of `M`, and the
/// bound multipliers split the generator reduced costs.
pub(crate) fn complete_dual(case: &GridCase, d: &[f64], lambda: f64, pi: Vec<f64>) -> DualSolution {
    let mu_lo: Vec<f64> = pi.iter().map(|p| p.max(0.0)).collect();
    let mu_hi: Vec<f64> = pi.iter().map(|p| (-p).max(0.0)).collect();
    let y: Vec<f64> = mu_lo.iter().zip(&mu_hi).map(|(a, b)| case.big_m - a - b).collect();
    let gf = case.gen_factors();
    let z: Vec<f64> = (0..case.n_gen)
        .map(|g| case.c[g] - lambda - gf.iter().zip(&pi).map(|(row, p)| row[g] * p).sum::<f64>())
        .collect();
    let mut dual = DualSolution {
        lambda,
        pi,
        mu_lo,
        mu_hi,
        z_lo: z.iter().map(|v| v.max(0.0)).collect(),
        z_hi: z.iter().map(|v| (-v).max(0.0)).collect(),
        y,
        objective: 0.0,
    };
    dual.objective = dual_objective(case, d, &dual);
    dual
}

/// Completes a generation vector into a primal-feasible point with the
/// smallest violations its flows allow.
pub(crate) fn complete_primal(case: &GridCase, d: &[f64], p: Vec<f64>) -> PrimalSolution {
    let f = case.flows(&p, d);
    let xi = case.violations(&f);
    let objective = primal_objective(case, &p, &xi);
    PrimalSolution { p, f, xi, objective }
}

/// Solves the dispatch LP exactly and returns an optimal primal/dual pair.
///
/// LP variables are `(p, f, ξ, s̲, s̄)` with the two soft-limit rows written
/// as equalities through surplus variables `s̲, s̄ ≥ 0`.
pub fn solve_dispatch(case: &GridCase, d: &[f64]) -> Result<(PrimalSolution, DualSolution)> {
    let total = case.check_demand(d)?;
    let (g, e) = (case.n_gen, case.n_line);
    let n = g + 4 * e;
    let m = 1 + 3 * e;
    let gf = case.gen_factors();
    let load_flows = mat_vec(&case.load_factors(), d);

    let mut a = DMatrix::zeros(m, n);
    let mut b = vec![0.0; m];
    for j in 0..g {
        a[(0, j)] = 1.0;
    }
    b[0] = total;
    for k in 0..e {
        let flow_row = 1 + k;
        for j in 0..g {
            a[(flow_row, j)] = gf[k][j];
        }
        a[(flow_row, g + k)] = -1.0;
        b[flow_row] = load_flows[k];

        let lo_row = 1 + e + k;
        a[(lo_row, g + k)] = 1.0;
        a[(lo_row, g + e + k)] = 1.0;
        a[(lo_row, g + 2 * e + k)] = -1.0;
        b[lo_row] = case.f_min[k];

        let hi_row = 1 + 2 * e + k;
        a[(hi_row, g + k)] = -1.0;
        a[(hi_row, g + e + k)] = 1.0;
        a[(hi_row, g + 3 * e + k)] = -1.0;
        b[hi_row] = -case.f_max[k];
    }
    let mut c = case.c.clone();
    c.extend(std::iter::repeat_n(0.0, e));
    c.extend(std::iter::repeat_n(case.big_m, e));
    c.extend(std::iter::repeat_n(0.0, 2 * e));
    let mut lower = case.p_min.clone();
    lower.extend(std::iter::repeat_n(f64::NEG_INFINITY, e));
    lower.extend(std::iter::repeat_n(0.0, 3 * e));
    let mut upper = case.p_max.clone();
    upper.extend(std::iter::repeat_n(f64::INFINITY, 4 * e));

    let sol = lp_solve(&LpProblem { c, a, b, lower, upper })?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(Error::LpStatus("infeasible".into())),
        LpStatus::Unbounded => return Err(Error::LpStatus("unbounded".into())),
    }

    let p: Vec<f64> = (0..g).map(|j| sol.x[j].clamp(case.p_min[j], case.p_max[j])).collect();
    let primal = complete_primal(case, d, p);
    let lambda = sol.duals[0];
    let pi: Vec<f64> = sol.duals[1..=e]
        .iter()
        .map(|p| p.clamp(-case.big_m, case.big_m))
        .collect();
    let dual = complete_dual(case, d, lambda, pi);

    let gap = (primal.objective - dual.objective).abs();
    if gap > 1e-7 * primal.objective.abs().max(1.0) {
        return Err(Error::LpStatus(format!(
            "optimal but with duality gap {gap:e} (primal {}, dual {})",
            primal.objective, dual.objective
        )));
    }
    Ok((primal, dual))
}

/// Largest violation of the primal constraints, relative to the data scale.
pub fn primal_infeasibility(case: &GridCase, d: &[f64], sol: &PrimalSolution) -> f64 {
    let scale = d.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
    let balance = (sol.p.iter().sum::<f64>() - d.iter().sum::<f64>()).abs();
    let mut worst = balance;
    for j in 0..case.n_gen {
        worst = worst.max(case.p_min[j] - sol.p[j]).max(sol.p[j] - case.p_max[j]);
    }
    let f = case.flows(&sol.p, d);
    for k in 0..case.n_line {
        worst = worst
            .max((f[k] - sol.f[k]).abs())
            .max(-sol.xi[k])
            .max(case.f_min[k] - sol.f[k] - sol.xi[k])
            .max(sol.f[k] - sol.xi[k] - case.f_max[k]);
    }
    worst / scale
}

/// Largest violation of the dual constraints, relative to the cost scale.
pub fn dual_infeasibility(case: &GridCase, dual: &DualSolution) -> f64 {
    let scale = case.big_m.max(1.0);
    let gf = case.gen_factors();
    let mut worst = 0.0f64;
    for g in 0..case.n_gen {
        let lhs =
            dual.lambda + gf.iter().zip(&dual.pi).map(|(r, p)| r[g] * p).sum::<f64>() + dual.z_lo[g] - dual.z_hi[g];
        worst = worst.max((lhs - case.c[g]).abs()).max(-dual.z_lo[g]).max(-dual.z_hi[g]);
    }
    for k in 0..case.n_line {
        worst = worst
            .max((-dual.pi[k] + dual.mu_lo[k] - dual.mu_hi[k]).abs())
            .max((dual.mu_lo[k] + dual.mu_hi[k] + dual.y[k] - case.big_m).abs())
            .max(-dual.mu_lo[k])
            .max(-dual.mu_hi[k])
            .max(-dual.y[k]);
    }
    worst / scale
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSample {
    pub d: Vec<f64>,
    pub alpha_factor: f64,
    pub beta_factors: Vec<f64>,
}

/// Independent random stream for sample `index` under `base_seed`, so
/// generated data does not depend on scheduling.
pub fn sample_rng(base_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index);
    rng
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "{name} range ({lo}, {hi}) must satisfy 0 < lo <= hi"
        )));
    }
    Ok(())
}

/// `d_l = α β_l d⁰_l` with `α ~ U(global_range)` and `β_l ~ U(local_range)`.
pub fn sample_loads<R: Rng + ?Sized>(
    case: &GridCase,
    global_range: (f64, f64),
    local_range: (f64, f64),
    rng: &mut R,
) -> Result<LoadSample> {
    check_range("global", global_range)?;
    check_range("local", local_range)?;
    let alpha_factor = uniform(rng, global_range);
    let beta_factors: Vec<f64> = (0..case.n_load).map(|_| uniform(rng, local_range)).collect();
    let d = beta_factors
        .iter()
        .zip(&case.d0)
        .map(|(beta, d0)| alpha_factor * beta * d0)
        .collect();
    Ok(LoadSample {
        d,
        alpha_factor,
        beta_factors,
    })
}

/// Attempts allowed to draw a load vector within the aggregate generation limits.
pub const MAX_LOAD_ATTEMPTS: usize = 100;

/// Like [`sample_loads`], redrawing from the same stream until the total
/// demand is servable.
pub fn sample_feasible_loads<R: Rng + ?Sized>(
    case: &GridCase,
    global_range: (f64, f64),
    local_range: (f64, f64),
    rng: &mut R,
) -> Result<LoadSample> {
    let mut last = None;
    for _ in 0..MAX_LOAD_ATTEMPTS {
        let s = sample_loads(case, global_range, local_range, rng)?;
        match case.check_demand(&s.d) {
            Ok(_) => return Ok(s),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}
