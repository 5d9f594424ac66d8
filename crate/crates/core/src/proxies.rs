//! Bound producers for the dispatch benchmark: linear predictors of the
//! primal and dual optima followed by feasibility recovery, so the primal
//! objective is a certified upper bound and the dual objective a certified
//! lower bound on every sample.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispatch::{complete_dual, complete_primal, solve_dispatch, DualSolution, GridCase, PrimalSolution};
use crate::error::{Error, Result};
use crate::interval::BoundedSample;

/// Affine map `W x + b` with per-output clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    /// `outputs × features`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub clip_lo: Vec<f64>,
    pub clip_hi: Vec<f64>,
}

impl LinearPredictor {
    /// Constant predictor, useful as an untrained baseline.
    pub fn constant(bias: Vec<f64>, n_features: usize) -> Self {
        let k = bias.len();
        LinearPredictor {
            weights: vec![vec![0.0; n_features]; k],
            bias,
            clip_lo: vec![f64::NEG_INFINITY; k],
            clip_hi: vec![f64::INFINITY; k],
        }
    }

    pub fn n_outputs(&self) -> usize {
        self.bias.len()
    }

    pub fn with_clip(mut self, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != self.n_outputs() || hi.len() != self.n_outputs() {
            return Err(Error::DimensionMismatch("clip ranges must match the outputs".into()));
        }
        self.clip_lo = lo;
        self.clip_hi = hi;
        Ok(self)
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .zip(self.clip_lo.iter().zip(&self.clip_hi))
            .map(|((w, b), (lo, hi))| {
                let raw = b + w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
                raw.max(*lo).min(*hi)
            })
            .collect()
    }
}

/// Ridge regression with an unpenalized intercept, solved on centered data.
pub fn fit_ridge(features: &[Vec<f64>], targets: &[Vec<f64>], regularization: f64) -> Result<LinearPredictor> {
    if features.is_empty() {
        return Err(Error::EmptySample);
    }
    if features.len() != targets.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows, {} target rows",
            features.len(),
            targets.len()
        )));
    }
    if !(regularization >= 0.0 && regularization.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "regularization {regularization} must be >= 0"
        )));
    }
    let n = features.len();
    let p = features[0].len();
    let k = targets[0].len();
    if features.iter().any(|r| r.len() != p) || targets.iter().any(|r| r.len() != k) {
        return Err(Error::DimensionMismatch("ragged design or target matrix".into()));
    }
    let x = DMatrix::from_fn(n, p, |i, j| features[i][j]);
    let y = DMatrix::from_fn(n, k, |i, j| targets[i][j]);
    let x_mean = x.row_mean();
    let y_mean = y.row_mean();
    let mut xc = x.clone();
    for mut row in xc.row_iter_mut() {
        row -= &x_mean;
    }
    let mut yc = y.clone();
    for mut row in yc.row_iter_mut() {
        row -= &y_mean;
    }
    let mut gram = xc.transpose() * &xc;
    for j in 0..p {
        gram[(j, j)] += regularization;
    }
    if p > 0 {
        let eig = gram.clone().symmetric_eigenvalues();
        let (lo, hi) = eig
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(v.abs())));
        if hi == 0.0 || lo <= 1e-12 * hi {
            return Err(Error::Singular(
                "ridge normal equations; use a positive regularization".into(),
            ));
        }
    }
    let rhs = xc.transpose() * &yc;
    let w = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("ridge normal equations; use a positive regularization".into()))?,
    };
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(
            "ridge normal equations; use a positive regularization".into(),
        ));
    }
    // b = ȳ - W x̄
    let bias = (y_mean.transpose() - w.transpose() * x_mean.transpose())
        .column(0)
        .iter()
        .copied()
        .collect();
    let weights = (0..k).map(|o| (0..p).map(|j| w[(j, o)]).collect()).collect();
    Ok(LinearPredictor {
        weights,
        bias,
        clip_lo: vec![f64::NEG_INFINITY; k],
        clip_hi: vec![f64::INFINITY; k],
    })
}

/// Per-unit load features `d / d⁰`.
pub fn load_features(case: &GridCase, d: &[f64]) -> Vec<f64> {
    d.iter()
        .zip(&case.d0)
        .map(|(d, d0)| if *d0 != 0.0 { d / d0 } else { *d })
        .collect()
}

/// Moves `p̃` toward the upper limits on a shortfall and toward the lower
/// limits on a surplus, proportionally to the available headroom, so that
/// `eᵀp` equals the demand.
pub fn power_balance(p_tilde: &[f64], p_min: &[f64], p_max: &[f64], total_demand: f64) -> Result<Vec<f64>> {
    if p_tilde.len() != p_min.len() || p_tilde.len() != p_max.len() {
        return Err(Error::DimensionMismatch("generation vectors differ in length".into()));
    }
    let min: f64 = p_min.iter().sum();
    let max: f64 = p_max.iter().sum();
    if !(total_demand >= min && total_demand <= max) {
        return Err(Error::InfeasibleDemand {
            total: total_demand,
            min,
            max,
        });
    }
    let p: Vec<f64> = p_tilde
        .iter()
        .zip(p_min.iter().zip(p_max))
        .map(|(p, (lo, hi))| p.max(*lo).min(*hi))
        .collect();
    let sum: f64 = p.iter().sum();
    let moved: Vec<f64> = if sum < total_demand {
        let eta = (total_demand - sum) / (max - sum);
        p.iter().zip(p_max).map(|(p, hi)| p + eta * (hi - p)).collect()
    } else if sum > total_demand {
        let eta = (sum - total_demand) / (sum - min);
        p.iter().zip(p_min).map(|(p, lo)| p - eta * (p - lo)).collect()
    } else {
        p
    };
    Ok(moved
        .iter()
        .zip(p_min.iter().zip(p_max))
        .map(|(p, (lo, hi))| p.max(*lo).min(*hi))
        .collect())
}

/// Balanced generation, its flows and the smallest violations they need.
pub fn primal_recover(case: &GridCase, d: &[f64], p_tilde: &[f64]) -> Result<PrimalSolution> {
    let total = case.check_demand(d)?;
    let p = power_balance(p_tilde, &case.p_min, &case.p_max, total)?;
    Ok(complete_primal(case, d, p))
}

/// Completes predicted prices into a feasible dual point.
pub fn dual_recover(case: &GridCase, d: &[f64], lambda: f64, pi: &[f64]) -> Result<DualSolution> {
    if pi.len() != case.n_line || d.len() != case.n_load {
        return Err(Error::DimensionMismatch(format!(
            "{} line prices and {} loads for a case with {} lines and {} loads",
            pi.len(),
            d.len(),
            case.n_line,
            case.n_load
        )));
    }
    if !lambda.is_finite() || pi.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidParameter("non-finite price prediction".into()));
    }
    let pi = pi.iter().map(|p| p.clamp(-case.big_m, case.big_m)).collect();
    Ok(complete_dual(case, d, lambda, pi))
}

/// A sampled load vector with its LP optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolvedInstance {
    pub d: Vec<f64>,
    pub y: f64,
    pub p: Vec<f64>,
    pub lambda: f64,
    pub pi: Vec<f64>,
    pub congested: bool,
}

pub fn solve_instance(case: &GridCase, d: Vec<f64>) -> Result<SolvedInstance> {
    let (primal, dual) = solve_dispatch(case, &d)?;
    Ok(SolvedInstance {
        y: primal.objective,
        p: primal.p,
        congested: dual.is_congested(),
        lambda: dual.lambda,
        pi: dual.pi,
        d,
    })
}

/// Solves every load vector, in parallel, preserving order.
pub fn solve_instances(case: &GridCase, loads: Vec<Vec<f64>>) -> Result<Vec<SolvedInstance>> {
    loads.into_par_iter().map(|d| solve_instance(case, d)).collect()
}

/// Predicts generation and recovers a feasible primal point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalProxy {
    pub predictor: LinearPredictor,
}

impl PrimalProxy {
    pub fn fit(case: &GridCase, train: &[SolvedInstance], regularization: f64) -> Result<Self> {
        let x: Vec<Vec<f64>> = train.iter().map(|s| load_features(case, &s.d)).collect();
        let y: Vec<Vec<f64>> = train.iter().map(|s| s.p.clone()).collect();
        let predictor = fit_ridge(&x, &y, regularization)?.with_clip(case.p_min.clone(), case.p_max.clone())?;
        Ok(PrimalProxy { predictor })
    }

    /// Constant prediction at the lower generation limits.
    pub fn untrained(case: &GridCase) -> Self {
        let predictor = LinearPredictor::constant(case.p_min.clone(), case.n_load)
            .with_clip(case.p_min.clone(), case.p_max.clone())
            .expect("clip ranges sized from the case");
        PrimalProxy { predictor }
    }

    pub fn bound(&self, case: &GridCase, d: &[f64]) -> Result<PrimalSolution> {
        let p_tilde = self.predictor.predict(&load_features(case, d));
        primal_recover(case, d, &p_tilde)
    }
}

/// Predicts `(λ, π)` and completes them into a feasible dual point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualProxy {
    pub predictor: LinearPredictor,
}

impl DualProxy {
    pub fn fit(case: &GridCase, train: &[SolvedInstance], regularization: f64) -> Result<Self> {
        let x: Vec<Vec<f64>> = train.iter().map(|s| load_features(case, &s.d)).collect();
        let y: Vec<Vec<f64>> = train
            .iter()
            .map(|s| std::iter::once(s.lambda).chain(s.pi.iter().copied()).collect())
            .collect();
        Ok(DualProxy {
            predictor: fit_ridge(&x, &y, regularization)?.with_clip(Self::clip_lo(case), Self::clip_hi(case))?,
        })
    }

    pub fn untrained(case: &GridCase) -> Self {
        let predictor = LinearPredictor::constant(vec![0.0; 1 + case.n_line], case.n_load)
            .with_clip(Self::clip_lo(case), Self::clip_hi(case))
            .expect("clip ranges sized from the case");
        DualProxy { predictor }
    }

    fn clip_lo(case: &GridCase) -> Vec<f64> {
        std::iter::once(f64::NEG_INFINITY)
            .chain(std::iter::repeat_n(-case.big_m, case.n_line))
            .collect()
    }

    fn clip_hi(case: &GridCase) -> Vec<f64> {
        std::iter::once(f64::INFINITY)
            .chain(std::iter::repeat_n(case.big_m, case.n_line))
            .collect()
    }

    pub fn bound(&self, case: &GridCase, d: &[f64]) -> Result<DualSolution> {
        let out = self.predictor.predict(&load_features(case, d));
        dual_recover(case, d, out[0], &out[1..])
    }
}

/// Slack allowed on the sandwich check before a violation becomes an error;
/// excursions inside it are rounding and get clamped.
pub const SANDWICH_SLACK: f64 = 1e-8;

/// Builds `(features, y, φ̂, Φ̂)` for each instance and checks `φ̂ ≤ y ≤ Φ̂`.
pub fn make_bounded_samples(
    case: &GridCase,
    instances: &[SolvedInstance],
    primal: &PrimalProxy,
    dual: &DualProxy,
) -> Result<Vec<BoundedSample>> {
    instances
        .par_iter()
        .enumerate()
        .map(|(index, inst)| {
            let b_hi = primal.bound(case, &inst.d)?.objective;
            let b_lo = dual.bound(case, &inst.d)?.objective;
            let y = inst.y;
            let slack = SANDWICH_SLACK * y.abs().max(1.0);
            if b_lo > y + slack || b_hi < y - slack {
                return Err(Error::SandwichViolation { index, b_lo, y, b_hi });
            }
            BoundedSample::new(load_features(case, &inst.d), y, b_lo.min(y), b_hi.max(y))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::tests::{single_bus, two_bus};
    use crate::dispatch::{
        build_case, dual_infeasibility, primal_infeasibility, sample_loads, sample_rng, CaseSpec, Topology,
    };
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ridge_interpolates_two_points() {
        let m = fit_ridge(&[vec![1.0], vec![3.0]], &[vec![2.0], vec![6.0]], 0.0).unwrap();
        assert!((m.predict(&[1.0])[0] - 2.0).abs() < 1e-12);
        assert!((m.predict(&[3.0])[0] - 6.0).abs() < 1e-12);
        assert!((m.weights[0][0] - 2.0).abs() < 1e-12 && m.bias[0].abs() < 1e-12);
    }

    #[test]
    fn ridge_heavy_penalty_gives_mean() {
        let x = vec![vec![1.0], vec![2.0], vec![4.0]];
        let y = vec![vec![1.0], vec![5.0], vec![3.0]];
        let m = fit_ridge(&x, &y, 1e14).unwrap();
        assert!(m.weights[0][0].abs() < 1e-12);
        assert!((m.bias[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn ridge_singular_without_penalty() {
        let x = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]];
        let y = vec![vec![1.0], vec![2.0], vec![3.0]];
        assert!(fit_ridge(&x, &y, 0.0).is_err());
        assert!(fit_ridge(&x, &y, 1e-3).is_ok());
    }

    /// Normal equations on the augmented design `[X 1]` with an unpenalized
    /// intercept, solved by Gaussian elimination with partial pivoting.
    fn oracle_ridge(x: &[Vec<f64>], y: &[f64], reg: f64) -> Vec<f64> {
        let p = x[0].len() + 1;
        let row = |i: usize| -> Vec<f64> { x[i].iter().copied().chain(std::iter::once(1.0)).collect() };
        let mut a = vec![vec![0.0; p + 1]; p];
        for i in 0..x.len() {
            let r = row(i);
            for j in 0..p {
                for k in 0..p {
                    a[j][k] += r[j] * r[k];
                }
                a[j][p] += r[j] * y[i];
            }
        }
        for j in 0..p - 1 {
            a[j][j] += reg;
        }
        for col in 0..p {
            let piv = (col..p)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, piv);
            for r in 0..p {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for k in col..=p {
                        a[r][k] -= f * a[col][k];
                    }
                }
            }
        }
        (0..p).map(|j| a[j][p] / a[j][j]).collect()
    }

    #[test]
    fn ridge_matches_augmented_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| r.iter().sum::<f64>() + rng.random_range(-0.5..0.5) + 3.0)
            .collect();
        let targets: Vec<Vec<f64>> = y.iter().map(|v| vec![*v]).collect();
        let m = fit_ridge(&x, &targets, 0.7).unwrap();
        let oracle = oracle_ridge(&x, &y, 0.7);
        for j in 0..5 {
            assert!((m.weights[0][j] - oracle[j]).abs() < 1e-8);
        }
        assert!((m.bias[0] - oracle[5]).abs() < 1e-8);
    }

    #[test]
    fn balance_examples() {
        let p = power_balance(&[1.0, 1.0], &[0.0, 0.0], &[2.0, 2.0], 3.0).unwrap();
        assert_eq!(p, vec![1.5, 1.5]);
        assert_eq!(
            power_balance(&[0.5, 1.5], &[0.0; 2], &[2.0; 2], 2.0).unwrap(),
            vec![0.5, 1.5]
        );
        assert_eq!(
            power_balance(&[2.0, 2.0], &[0.0; 2], &[2.0; 2], 4.0).unwrap(),
            vec![2.0, 2.0]
        );
        assert!(power_balance(&[1.0, 1.0], &[0.0; 2], &[2.0; 2], 5.0).is_err());
    }

    proptest! {
        #[test]
        fn balance_conserves(
            raw in prop::collection::vec((0.0f64..1.0, 0.0f64..50.0, 0.0f64..50.0), 1..8),
            frac in 0.0f64..=1.0,
        ) {
            let p_min: Vec<f64> = raw.iter().map(|r| r.1).collect();
            let p_max: Vec<f64> = raw.iter().map(|r| r.1 + r.2).collect();
            let p_tilde: Vec<f64> = raw.iter().map(|r| r.1 + r.0 * r.2).collect();
            let lo: f64 = p_min.iter().sum();
            let hi: f64 = p_max.iter().sum();
            let demand = lo + frac * (hi - lo);
            let p = power_balance(&p_tilde, &p_min, &p_max, demand).unwrap();
            let total: f64 = p.iter().sum();
            prop_assert!((total - demand).abs() <= 1e-10 * demand.abs().max(1.0));
            for j in 0..p.len() {
                prop_assert!(p[j] >= p_min[j] && p[j] <= p_max[j]);
            }
        }
    }

    #[test]
    fn dual_recover_splits_prices() {
        let mut case = two_bus(50.0);
        case.n_line = 2;
        case.f_min = vec![-50.0; 2];
        case.f_max = vec![50.0; 2];
        case.ptdf.push(case.ptdf[0].clone());
        let dual = dual_recover(&case, &[80.0], 10.0, &[2.0, -1.0]).unwrap();
        assert_eq!(dual.mu_lo, vec![2.0, 0.0]);
        assert_eq!(dual.mu_hi, vec![0.0, 1.0]);
        assert!(dual_infeasibility(&case, &dual) == 0.0);
    }

    #[test]
    fn recovery_at_optimum_is_idempotent() {
        let case = build_case(&CaseSpec::new(6, Topology::RandomTreePlusChords, 8)).unwrap();
        let mut rng = sample_rng(9, 0);
        for _ in 0..50 {
            let d = sample_loads(&case, (0.6, 1.0), (0.85, 1.15), &mut rng).unwrap().d;
            let (primal, dual) = solve_dispatch(&case, &d).unwrap();
            let rp = primal_recover(&case, &d, &primal.p).unwrap();
            let rd = dual_recover(&case, &d, dual.lambda, &dual.pi).unwrap();
            let scale = primal.objective.abs().max(1.0);
            assert!((rp.objective - primal.objective).abs() <= 1e-8 * scale);
            assert!((rd.objective - primal.objective).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn randomized_predictions_sandwich_the_optimum() {
        let case = build_case(&CaseSpec::new(6, Topology::Ring, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for i in 0..1000 {
            let d = sample_loads(&case, (0.6, 1.0), (0.85, 1.15), &mut sample_rng(13, i))
                .unwrap()
                .d;
            let (opt, _) = solve_dispatch(&case, &d).unwrap();
            let p_tilde: Vec<f64> = (0..case.n_gen)
                .map(|g| rng.random_range(case.p_min[g]..=case.p_max[g]))
                .collect();
            let lambda = rng.random_range(-100.0..100.0);
            let pi: Vec<f64> = (0..case.n_line)
                .map(|_| rng.random_range(-1.5 * case.big_m..1.5 * case.big_m))
                .collect();
            let up = primal_recover(&case, &d, &p_tilde).unwrap();
            let lo = dual_recover(&case, &d, lambda, &pi).unwrap();
            let slack = 1e-8 * opt.objective.abs().max(1.0);
            assert!(up.objective >= opt.objective - slack);
            assert!(lo.objective <= opt.objective + slack);
            assert!(primal_infeasibility(&case, &d, &up) < 1e-10);
            assert!(dual_infeasibility(&case, &lo) < 1e-10);
        }
    }

    #[test]
    fn untrained_proxies_still_sandwich() {
        let case = build_case(&CaseSpec::new(6, Topology::Star, 5)).unwrap();
        let loads: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                sample_loads(&case, (0.6, 1.0), (0.85, 1.15), &mut sample_rng(1, i))
                    .unwrap()
                    .d
            })
            .collect();
        let inst = solve_instances(&case, loads).unwrap();
        let samples = make_bounded_samples(
            &case,
            &inst,
            &PrimalProxy::untrained(&case),
            &DualProxy::untrained(&case),
        )
        .unwrap();
        assert!(samples.iter().all(|s| s.b_lo <= s.y && s.y <= s.b_hi));
    }

    #[test]
    fn trained_single_bus_gap_is_small() {
        let mut case = single_bus();
        // the cheap unit covers every sampled load, so the optimum is linear in d
        case.p_max = vec![100.0, 60.0];
        case.d0 = vec![80.0];
        let loads: Vec<Vec<f64>> = (0..100)
            .map(|i| {
                sample_loads(&case, (0.6, 1.0), (0.85, 1.15), &mut sample_rng(2, i))
                    .unwrap()
                    .d
            })
            .collect();
        let inst = solve_instances(&case, loads).unwrap();
        let primal = PrimalProxy::fit(&case, &inst, 0.0).unwrap();
        let dual = DualProxy::fit(&case, &inst, 0.0).unwrap();
        let samples = make_bounded_samples(&case, &inst, &primal, &dual).unwrap();
        for s in samples {
            assert!(s.gap() <= 1e-8 * s.y.abs(), "gap {}", s.gap());
        }
    }
}
