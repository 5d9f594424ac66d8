//! DC power-transfer distribution factors.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A transmission line from `from` to `to`; positive flow runs `from → to`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub susceptance: f64,
}

fn check_connected(n_bus: usize, lines: &[Line], root: usize) -> Result<()> {
    let mut adjacency = vec![Vec::new(); n_bus];
    for l in lines {
        adjacency[l.from].push(l.to);
        adjacency[l.to].push(l.from);
    }
    let mut seen = vec![false; n_bus];
    seen[root] = true;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &v in &adjacency[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(bus) => Err(Error::Disconnected(bus)),
        None => Ok(()),
    }
}

/// `E × N` matrix of flow responses to a unit injection at each bus,
/// withdrawn at `slack_bus`. The slack column is identically zero.
pub fn compute_ptdf(n_bus: usize, lines: &[Line], slack_bus: usize) -> Result<Vec<Vec<f64>>> {
    if n_bus == 0 || slack_bus >= n_bus {
        return Err(Error::InvalidParameter(format!(
            "slack bus {slack_bus} with {n_bus} buses"
        )));
    }
    for l in lines {
        if l.from >= n_bus || l.to >= n_bus || l.from == l.to {
            return Err(Error::InvalidParameter(format!(
                "line {} -> {} is not a valid branch",
                l.from, l.to
            )));
        }
        if !(l.susceptance > 0.0 && l.susceptance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "susceptance {} must be positive",
                l.susceptance
            )));
        }
    }
    check_connected(n_bus, lines, slack_bus)?;

    // Reduced index of each non-slack bus.
    let reduced = |bus: usize| -> Option<usize> {
        match bus.cmp(&slack_bus) {
            std::cmp::Ordering::Less => Some(bus),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(bus - 1),
        }
    };
    let k = n_bus - 1;
    let mut b_red = DMatrix::<f64>::zeros(k, k);
    for l in lines {
        let (i, j) = (reduced(l.from), reduced(l.to));
        if let Some(i) = i {
            b_red[(i, i)] += l.susceptance;
        }
        if let Some(j) = j {
            b_red[(j, j)] += l.susceptance;
        }
        if let (Some(i), Some(j)) = (i, j) {
            b_red[(i, j)] -= l.susceptance;
            b_red[(j, i)] -= l.susceptance;
        }
    }
    let x = if k == 0 {
        DMatrix::zeros(0, 0)
    } else {
        b_red
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Singular("reduced susceptance matrix".into()))?
    };

    let angle = |bus: usize, inj: usize| -> f64 {
        match reduced(bus) {
            Some(r) => x[(r, inj)],
            None => 0.0,
        }
    };
    Ok(lines
        .iter()
        .map(|l| {
            (0..n_bus)
                .map(|bus| match reduced(bus) {
                    None => 0.0,
                    Some(r) => l.susceptance * (angle(l.from, r) - angle(l.to, r)),
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(from: usize, to: usize) -> Line {
        Line {
            from,
            to,
            susceptance: 1.0,
        }
    }

    #[test]
    fn two_bus() {
        // 1 -> 2 in one-based numbering, slack at the first bus
        let p = compute_ptdf(2, &[line(0, 1)], 0).unwrap();
        assert_eq!(p[0][0], 0.0);
        assert!((p[0][1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn three_bus_ring() {
        // Injection at bus 1 returning to bus 0: the direct path has half the
        // reactance of the two-hop path, so it carries 2/3.
        let p = compute_ptdf(3, &[line(0, 1), line(1, 2), line(2, 0)], 0).unwrap();
        let expected = [
            [0.0, -2.0 / 3.0, -1.0 / 3.0],
            [0.0, 1.0 / 3.0, -1.0 / 3.0],
            [0.0, 1.0 / 3.0, 2.0 / 3.0],
        ];
        for (row, exp) in p.iter().zip(expected) {
            for (a, b) in row.iter().zip(exp) {
                assert!((a - b).abs() < 1e-14, "{p:?}");
            }
        }
    }

    #[test]
    fn slack_column_is_zero() {
        let lines = [line(0, 1), line(1, 2), line(2, 3), line(3, 1)];
        let p = compute_ptdf(4, &lines, 2).unwrap();
        assert!(p.iter().all(|row| row[2] == 0.0));
    }

    #[test]
    fn disconnected() {
        assert!(matches!(compute_ptdf(3, &[line(0, 1)], 0), Err(Error::Disconnected(2))));
    }

    #[test]
    fn balanced_flows_are_slack_independent() {
        let lines = [
            Line {
                from: 0,
                to: 1,
                susceptance: 2.0,
            },
            Line {
                from: 1,
                to: 2,
                susceptance: 5.0,
            },
            Line {
                from: 2,
                to: 3,
                susceptance: 1.5,
            },
            Line {
                from: 3,
                to: 0,
                susceptance: 3.0,
            },
            Line {
                from: 1,
                to: 3,
                susceptance: 4.0,
            },
        ];
        let p = compute_ptdf(4, &lines, 0).unwrap();
        let inj = [1.0, -3.0, 0.5, 1.5];
        // Moving the slack changes columns by a constant per row, which cancels for balanced injections.
        let q = compute_ptdf(4, &lines, 2).unwrap();
        for (r0, r2) in p.iter().zip(&q) {
            let f0: f64 = r0.iter().zip(inj).map(|(a, b)| a * b).sum();
            let f2: f64 = r2.iter().zip(inj).map(|(a, b)| a * b).sum();
            assert!((f0 - f2).abs() < 1e-12);
        }
    }
}
