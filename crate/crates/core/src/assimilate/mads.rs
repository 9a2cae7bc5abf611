//! Coordinate-poll mesh adaptive direct search.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MadsConfig {
    pub max_iter: usize,
    /// Initial and largest mesh size.
    pub delta0: f64,
    /// Stop once the mesh is smaller than this.
    pub min_delta: f64,
}

impl Default for MadsConfig {
    fn default() -> Self {
        Self { max_iter: 60, delta0: 0.5, min_delta: 1e-8 }
    }
}

impl MadsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta0 > 0.0) || !(self.min_delta > 0.0) {
            return Err(Error::invalid("MADS mesh sizes must be positive"));
        }
        Ok(())
    }
}

/// One poll.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollRecord {
    pub delta: f64,
    /// Points sent to the objective.
    pub evaluated: usize,
    /// Points answered from the cache.
    pub cache_hits: usize,
    pub improved: bool,
    /// Incumbent objective after the poll.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MadsResult {
    pub xi: Vec<f64>,
    pub objective: f64,
    pub initial_objective: f64,
    pub evaluations: usize,
    pub polls: Vec<PollRecord>,
}

impl MadsResult {
    pub fn iterations(&self) -> usize {
        self.polls.len()
    }
}

fn key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Minimizes `f` from `x0`. `f` scores a batch of points at once;
/// non-finite scores count as failures and never improve.
///
/// Each poll looks at `x +- delta e_k` and moves to the best strictly
/// improving point, ties going to the lowest `k` and the negative direction.
/// Success doubles `delta` up to `delta0`, failure halves it.
pub fn mads_minimize<F>(mut f: F, x0: &[f64], cfg: &MadsConfig) -> Result<MadsResult>
where
    F: FnMut(&[Vec<f64>]) -> Vec<f64>,
{
    cfg.validate()?;
    let l = x0.len();
    if l == 0 {
        return Err(Error::invalid("MADS needs at least one variable"));
    }
    let sanitize = |v: f64| if v.is_finite() { v } else { f64::INFINITY };
    let mut cache: HashMap<Vec<u64>, f64> = HashMap::new();
    let f0 = sanitize(*f(&[x0.to_vec()]).first().ok_or_else(|| Error::invalid("objective returned nothing"))?);
    cache.insert(key(x0), f0);
    let mut x = x0.to_vec();
    let mut fx = f0;
    let mut delta = cfg.delta0;
    let mut evaluations = 1;
    let mut polls = Vec::new();
    for _ in 0..cfg.max_iter {
        if delta < cfg.min_delta {
            break;
        }
        let mut points = Vec::with_capacity(2 * l);
        for k in 0..l {
            for sign in [-1.0, 1.0] {
                let mut p = x.clone();
                p[k] += sign * delta;
                points.push(p);
            }
        }
        let fresh: Vec<Vec<f64>> = points.iter().filter(|p| !cache.contains_key(&key(p))).cloned().collect();
        let cache_hits = points.len() - fresh.len();
        if !fresh.is_empty() {
            let vals = f(&fresh);
            if vals.len() != fresh.len() {
                return Err(Error::invalid("objective returned the wrong number of values"));
            }
            for (p, v) in fresh.iter().zip(vals) {
                cache.insert(key(p), sanitize(v));
            }
        }
        evaluations += fresh.len();
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let v = cache[&key(p)];
            if v < best.map_or(fx, |b| b.1) {
                best = Some((i, v));
            }
        }
        let improved = best.is_some();
        if let Some((i, v)) = best {
            x = points.swap_remove(i);
            fx = v;
            delta = (2.0 * delta).min(cfg.delta0);
        } else {
            delta *= 0.5;
        }
        polls.push(PollRecord { delta, evaluated: fresh.len(), cache_hits, improved, objective: fx });
    }
    Ok(MadsResult { xi: x, objective: fx, initial_objective: f0, evaluations, polls })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn each(g: impl Fn(&[f64]) -> f64) -> impl FnMut(&[Vec<f64>]) -> Vec<f64> {
        move |pts| pts.iter().map(|p| g(p)).collect()
    }

    #[test]
    fn sphere_reaches_origin_in_two_polls() {
        let cfg = MadsConfig { max_iter: 2, delta0: 1.0, min_delta: 1e-8 };
        let r = mads_minimize(each(|x| x.iter().map(|v| v * v).sum()), &[1.0, 0.0, 0.0], &cfg).unwrap();
        assert_eq!(r.xi, vec![0.0; 3]);
        assert_eq!(r.objective, 0.0);
        assert!(r.polls[0].improved && !r.polls[1].improved);
    }

    #[test]
    fn constant_objective_only_shrinks_mesh() {
        let cfg = MadsConfig { max_iter: 5, delta0: 1.0, min_delta: 1e-8 };
        let r = mads_minimize(each(|_| 3.0), &[0.5, -0.5], &cfg).unwrap();
        assert_eq!(r.xi, vec![0.5, -0.5]);
        let d: Vec<f64> = r.polls.iter().map(|p| p.delta).collect();
        assert_eq!(d, vec![0.5, 0.25, 0.125, 0.0625, 0.03125]);
        // the first poll is fresh, later ones are too since the mesh changes
        assert!(r.polls.iter().all(|p| p.evaluated == 4 && p.cache_hits == 0));
    }

    #[test]
    fn ties_prefer_lowest_index_then_negative() {
        let cfg = MadsConfig { max_iter: 1, delta0: 1.0, min_delta: 1e-8 };
        let r = mads_minimize(each(|x| -x.iter().map(|v| v.abs()).sum::<f64>()), &[0.0, 0.0], &cfg).unwrap();
        assert_eq!(r.xi, vec![-1.0, 0.0]);
    }

    #[test]
    fn failures_never_improve() {
        let cfg = MadsConfig { max_iter: 4, delta0: 1.0, min_delta: 1e-8 };
        let r = mads_minimize(each(|x| if x[0] < 0.0 { f64::NAN } else { x[0] }), &[0.25], &cfg).unwrap();
        assert!(r.xi[0] >= 0.0);
        assert!(r.polls.windows(2).all(|w| w[1].objective <= w[0].objective));
    }

    /// Convex bowl with neighbour coupling and a minimum of 0 at all ones.
    pub(crate) fn bowl(x: &[f64]) -> f64 {
        let fit: f64 = x.iter().map(|v| (v - 1.0).powi(2)).sum();
        let couple: f64 = x.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        fit + couple
    }

    #[test]
    fn bowl_converges_with_monotone_incumbent() {
        let cfg = MadsConfig { max_iter: 200, delta0: 0.5, min_delta: 1e-8 };
        let x0 = [-1.0, 2.0, 0.0, 3.0, -2.0];
        let r = mads_minimize(each(bowl), &x0, &cfg).unwrap();
        assert!(r.objective < 1e-6, "{}", r.objective);
        assert!(r.polls.windows(2).all(|w| w[1].objective <= w[0].objective));
        assert!(r.polls.iter().all(|p| p.evaluated + p.cache_hits == 10));
    }

    #[test]
    fn stops_below_min_delta() {
        let cfg = MadsConfig { max_iter: 1000, delta0: 1.0, min_delta: 1e-3 };
        let r = mads_minimize(each(|_| 0.0), &[0.0], &cfg).unwrap();
        assert_eq!(r.iterations(), 10);
    }
}
