//! Seeded synthetic grid cases.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ptdf::{compute_ptdf, Line};
use super::{sample_feasible_loads, solve_dispatch, GridCase};
use crate::error::{Error, Result};
use crate::quantile::empirical_quantile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    Ring,
    Star,
    RandomTreePlusChords,
}

fn default_capacity_margin() -> f64 {
    1.6
}
fn default_min_output_fraction() -> f64 {
    0.1
}
fn default_congested_lines() -> usize {
    1
}
fn default_congestion_quantile() -> f64 {
    0.8
}
fn default_headroom() -> f64 {
    1.3
}
fn default_reference_samples() -> usize {
    200
}
fn default_chord_fraction() -> f64 {
    0.5
}

/// Recipe for [`build_case`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSpec {
    pub n_bus: usize,
    pub topology: Topology,
    pub seed: u64,
    /// Defaults to half the buses, rounded up.
    #[serde(default)]
    pub n_gen: Option<usize>,
    /// Total capacity as a multiple of total nominal load.
    #[serde(default = "default_capacity_margin")]
    pub capacity_margin: f64,
    /// Minimum output as a fraction of each unit's capacity.
    #[serde(default = "default_min_output_fraction")]
    pub min_output_fraction: f64,
    /// Number of lines whose limit binds on part of the load distribution.
    #[serde(default = "default_congested_lines")]
    pub congested_lines: usize,
    /// Quantile of a congested line's unconstrained flow magnitude used as its limit.
    #[serde(default = "default_congestion_quantile")]
    pub congestion_quantile: f64,
    /// Other lines get this multiple of their largest unconstrained flow.
    #[serde(default = "default_headroom")]
    pub headroom: f64,
    /// Load draws, from the default sampling ranges, used to size line limits.
    #[serde(default = "default_reference_samples")]
    pub reference_samples: usize,
    /// Extra chords per bus for the tree topology.
    #[serde(default = "default_chord_fraction")]
    pub chord_fraction: f64,
}

impl CaseSpec {
    pub fn new(n_bus: usize, topology: Topology, seed: u64) -> Self {
        CaseSpec {
            n_bus,
            topology,
            seed,
            n_gen: None,
            capacity_margin: default_capacity_margin(),
            min_output_fraction: default_min_output_fraction(),
            congested_lines: default_congested_lines(),
            congestion_quantile: default_congestion_quantile(),
            headroom: default_headroom(),
            reference_samples: default_reference_samples(),
            chord_fraction: default_chord_fraction(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_bus < 2 {
            return Err(Error::DegenerateCase(format!("{} buses; need at least 2", self.n_bus)));
        }
        if self.n_gen == Some(0) {
            return Err(Error::DegenerateCase("no generators".into()));
        }
        if !(self.capacity_margin >= 1.2) {
            return Err(Error::InvalidParameter(format!(
                "capacity margin {} below 1.2",
                self.capacity_margin
            )));
        }
        if !(0.0..0.5).contains(&self.min_output_fraction) {
            return Err(Error::InvalidParameter(format!(
                "min output fraction {} outside [0, 0.5)",
                self.min_output_fraction
            )));
        }
        if !(self.congestion_quantile > 0.0 && self.congestion_quantile <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "congestion quantile {}",
                self.congestion_quantile
            )));
        }
        if !(self.headroom >= 1.0) {
            return Err(Error::InvalidParameter(format!("headroom {} below 1", self.headroom)));
        }
        if self.reference_samples == 0 {
            return Err(Error::InvalidParameter("reference_samples must be positive".into()));
        }
        if !(self.chord_fraction >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "chord fraction {}",
                self.chord_fraction
            )));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn branches(spec: &CaseSpec, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let n = spec.n_bus;
    match spec.topology {
        Topology::Ring if n == 2 => vec![(0, 1)],
        Topology::Ring => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        Topology::Star => (1..n).map(|i| (0, i)).collect(),
        Topology::RandomTreePlusChords => {
            let mut pairs: Vec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
            let wanted = (spec.chord_fraction * n as f64).round() as usize;
            let mut attempts = 0;
            let mut added = 0;
            while added < wanted && attempts < 100 * (wanted + 1) {
                attempts += 1;
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                let (a, b) = (a.min(b), a.max(b));
                if a != b && !pairs.iter().any(|&(x, y)| (x.min(y), x.max(y)) == (a, b)) {
                    pairs.push((a, b));
                    added += 1;
                }
            }
            pairs
        }
    }
}

/// Builds a deterministic case from `spec`.
///
/// Loads sit on every bus and generators on a random subset. Line limits
/// come from unconstrained dispatches over reference load draws: a few
/// heavily used lines get a quantile of their flow magnitude, so they bind on
/// part of the load distribution, and the rest get headroom above their peak.
/// Limits are then widened until the nominal case needs no violations.
pub fn build_case(spec: &CaseSpec) -> Result<GridCase> {
    spec.validate()?;
    let n = spec.n_bus;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let lines: Vec<Line> = branches(spec, &mut rng)
        .into_iter()
        .map(|(from, to)| Line {
            from,
            to,
            susceptance: uniform(&mut rng, 5.0, 20.0),
        })
        .collect();
    let ptdf = compute_ptdf(n, &lines, 0)?;
    let e = lines.len();

    let n_gen = spec.n_gen.unwrap_or(n.div_ceil(2));
    let mut buses: Vec<usize> = (0..n).collect();
    buses.shuffle(&mut rng);
    let mut gen_bus: Vec<usize> = (0..n_gen).map(|g| buses[g % n]).collect();
    gen_bus.sort_unstable();
    let mut a_gen = vec![vec![0.0; n_gen]; n];
    for (g, &bus) in gen_bus.iter().enumerate() {
        a_gen[bus][g] = 1.0;
    }
    let a_load: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|l| if i == l { 1.0 } else { 0.0 }).collect())
        .collect();

    let d0: Vec<f64> = (0..n).map(|_| uniform(&mut rng, 50.0, 150.0)).collect();
    let total_d0: f64 = d0.iter().sum();
    let c: Vec<f64> = (0..n_gen).map(|_| uniform(&mut rng, 10.0, 50.0)).collect();
    let shares: Vec<f64> = (0..n_gen).map(|_| uniform(&mut rng, 0.5, 1.5)).collect();
    let share_sum: f64 = shares.iter().sum();
    let p_max: Vec<f64> = shares
        .iter()
        .map(|s| s / share_sum * spec.capacity_margin * total_d0)
        .collect();
    let p_min: Vec<f64> = p_max.iter().map(|p| p * spec.min_output_fraction).collect();
    let big_m = 100.0 * c.iter().fold(0.0f64, |a, b| a.max(*b));

    let loose = 1e3 * total_d0;
    let mut case = GridCase {
        n_bus: n,
        n_gen,
        n_load: n,
        n_line: e,
        c,
        p_min,
        p_max,
        f_min: vec![-loose; e],
        f_max: vec![loose; e],
        ptdf,
        a_gen,
        a_load,
        big_m,
        d0,
    };
    case.validate()?;

    // Unconstrained flows over reference load draws.
    let mut magnitudes = vec![Vec::with_capacity(spec.reference_samples); e];
    for _ in 0..spec.reference_samples {
        let d = sample_feasible_loads(&case, (0.6, 1.0), (0.85, 1.15), &mut rng)?.d;
        let (free, _) = solve_dispatch(&case, &d)?;
        for (k, f) in free.f.iter().enumerate() {
            magnitudes[k].push(f.abs());
        }
    }
    let floor = 0.05 * total_d0 / e.max(1) as f64;
    let peak: Vec<f64> = magnitudes
        .iter()
        .map(|m| m.iter().fold(0.0f64, |a, b| a.max(*b)))
        .collect();
    // Congestion candidates: the more heavily loaded half of the lines.
    let mut by_load: Vec<usize> = (0..e).collect();
    by_load.sort_by(|&a, &b| peak[b].total_cmp(&peak[a]).then(a.cmp(&b)));
    let mut candidates: Vec<usize> = by_load[..e.div_ceil(2)].to_vec();
    candidates.shuffle(&mut rng);
    candidates.truncate(spec.congested_lines);
    for k in 0..e {
        let limit = if candidates.contains(&k) {
            empirical_quantile(&magnitudes[k], spec.congestion_quantile)?
        } else {
            spec.headroom * peak[k]
        };
        case.f_max[k] = limit.max(floor);
        case.f_min[k] = -case.f_max[k];
    }
    for _ in 0..200 {
        let (nominal, _) = solve_dispatch(&case, &case.d0)?;
        let violated: Vec<usize> = (0..e).filter(|&k| nominal.xi[k] > 0.0).collect();
        if violated.is_empty() {
            return Ok(case);
        }
        for k in violated {
            case.f_max[k] *= 1.1;
            case.f_min[k] = -case.f_max[k];
        }
    }
    Err(Error::DegenerateCase(
        "could not size line limits for a violation-free nominal case".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::sample_rng;

    #[test]
    fn deterministic_bytes() {
        let spec = CaseSpec::new(6, Topology::RandomTreePlusChords, 42);
        let a = serde_json::to_string(&build_case(&spec).unwrap()).unwrap();
        let b = serde_json::to_string(&build_case(&spec).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nominal_case_has_no_violations() {
        for topology in [Topology::Ring, Topology::Star, Topology::RandomTreePlusChords] {
            for seed in 0..5 {
                let case = build_case(&CaseSpec::new(6, topology, seed)).unwrap();
                case.validate().unwrap();
                let (p, _) = solve_dispatch(&case, &case.d0).unwrap();
                assert!(p.xi.iter().all(|x| *x == 0.0), "{topology:?} {seed}");
                let cap: f64 = case.p_max.iter().sum();
                assert!(cap >= 1.2 * case.d0.iter().sum::<f64>());
                let max_c = case.c.iter().fold(0.0f64, |a, b| a.max(*b));
                assert_eq!(case.big_m, 100.0 * max_c);
            }
        }
    }

    #[test]
    fn degenerate_specs() {
        assert!(build_case(&CaseSpec::new(1, Topology::Ring, 0)).is_err());
        let mut spec = CaseSpec::new(4, Topology::Star, 0);
        spec.n_gen = Some(0);
        assert!(matches!(build_case(&spec), Err(Error::DegenerateCase(_))));
    }

    #[test]
    fn sampled_loads_congest_a_minority() {
        let case = build_case(&CaseSpec::new(6, Topology::Ring, 5)).unwrap();
        let congested = (0..400u64)
            .filter(|&i| {
                let d = sample_feasible_loads(&case, (0.6, 1.0), (0.85, 1.15), &mut sample_rng(9, i))
                    .unwrap()
                    .d;
                solve_dispatch(&case, &d).unwrap().1.is_congested()
            })
            .count();
        assert!((20..=160).contains(&congested), "{congested} of 400 congested");
    }

    #[test]
    fn two_bus_ring() {
        let case = build_case(&CaseSpec::new(2, Topology::Ring, 3)).unwrap();
        assert_eq!(case.n_line, 1);
    }
}
