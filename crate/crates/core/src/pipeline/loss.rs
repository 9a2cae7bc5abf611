//! Well-weighted p-norm training loss.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

impl Norm {
    pub fn power(self) -> u8 {
        match self {
            Norm::L1 => 1,
            Norm::L2 => 2,
        }
    }
}

/// Element weights for a time-major batch of `n * n_t` maps of `n_b` blocks.
///
/// Every block carries `1 / (n n_t n_b)`; well blocks add
/// `lambda / (n n_t n_w)`. Summing `w |e|^p` then gives the field mean plus
/// `lambda` times the well mean.
pub fn loss_weights(n: usize, n_t: usize, n_b: usize, well_blocks: &[usize], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid("well weight must be non-negative"));
    }
    if well_blocks.iter().any(|&b| b >= n_b) {
        return Err(Error::shape("well block outside the map"));
    }
    let base = 1.0 / (n * n_t * n_b) as f64;
    let mut map = vec![base; n_b];
    if !well_blocks.is_empty() {
        let extra = lambda / (n * n_t * well_blocks.len()) as f64;
        for &b in well_blocks {
            map[b] += extra;
        }
    }
    Ok(map.iter().copied().cycle().take(n * n_t * n_b).collect())
}

/// Loss value for `pred` and `target` indexed `[sample][step][block]`.
pub fn loss(
    pred: &[Vec<Vec<f64>>],
    target: &[Vec<Vec<f64>>],
    well_blocks: &[usize],
    lambda: f64,
    norm: Norm,
) -> Result<f64> {
    let n = pred.len();
    if n == 0 || target.len() != n {
        return Err(Error::shape("loss needs matching non-empty batches"));
    }
    let n_t = pred[0].len();
    let n_b = pred[0].first().map_or(0, Vec::len);
    let weights = loss_weights(n, n_t, n_b, well_blocks, lambda)?;
    let mut total = 0.0;
    let mut k = 0;
    for (ps, ts) in pred.iter().zip(target) {
        if ps.len() != n_t || ts.len() != n_t {
            return Err(Error::shape("loss sequences differ in step count"));
        }
        for (pm, tm) in ps.iter().zip(ts) {
            if pm.len() != n_b || tm.len() != n_b {
                return Err(Error::shape("loss maps differ in size"));
            }
            for (a, b) in pm.iter().zip(tm) {
                let e = (a - b).abs();
                total += weights[k] * if norm == Norm::L1 { e } else { e * e };
                k += 1;
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let pred = vec![vec![vec![0.1, 0.2]]];
        let target = vec![vec![vec![0.0, 0.0]]];
        let l = loss(&pred, &target, &[0], 1000.0, Norm::L2).unwrap();
        assert!((l - 10.025).abs() < 1e-12, "{l}");
    }

    #[test]
    fn zero_for_equal_and_plain_mean_without_wells_weight() {
        let a = vec![vec![vec![0.3, 0.5, 0.9]; 2]; 2];
        assert_eq!(loss(&a, &a, &[1], 1000.0, Norm::L1).unwrap(), 0.0);
        let b = vec![vec![vec![0.4, 0.5, 0.7]; 2]; 2];
        let l = loss(&a, &b, &[1], 0.0, Norm::L1).unwrap();
        assert!((l - 0.3 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_negative_lambda() {
        assert!(loss_weights(1, 1, 2, &[0], -1.0).is_err());
    }
}
