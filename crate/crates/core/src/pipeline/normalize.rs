//! Pressure normalization: per-step mean map removal and min-max scaling.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-step pressure normalization fitted on a training set.
///
/// `p~ = (p - mean_t - min_t) / (max_t - min_t)`. Steps where every
/// training difference map is identical are flagged degenerate; they use a
/// unit scale and an offset of 0.5 so the training value maps to 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub mean_maps: Vec<Vec<f64>>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl Normalizer {
    /// Fits on pressure sequences indexed `[sample][step][block]` (bar).
    pub fn fit(seqs: &[&[Vec<f64>]]) -> Result<Self> {
        if seqs.len() < 2 {
            return Err(Error::invalid("pressure normalization needs at least two samples"));
        }
        let n_t = seqs[0].len();
        let n_b = seqs[0].first().map_or(0, Vec::len);
        if n_t == 0 || n_b == 0 {
            return Err(Error::shape("empty pressure sequence"));
        }
        if seqs.iter().any(|s| s.len() != n_t || s.iter().any(|m| m.len() != n_b)) {
            return Err(Error::shape("pressure sequences differ in shape"));
        }
        let n_s = seqs.len() as f64;
        let mut mean_maps = vec![vec![0.0; n_b]; n_t];
        for s in seqs {
            for (mean, map) in mean_maps.iter_mut().zip(s.iter()) {
                mean.iter_mut().zip(map).for_each(|(a, p)| *a += p);
            }
        }
        mean_maps.iter_mut().flatten().for_each(|v| *v /= n_s);
        let mut min = vec![f64::INFINITY; n_t];
        let mut max = vec![f64::NEG_INFINITY; n_t];
        for s in seqs {
            for t in 0..n_t {
                for (p, m) in s[t].iter().zip(&mean_maps[t]) {
                    let d = p - m;
                    min[t] = min[t].min(d);
                    max[t] = max[t].max(d);
                }
            }
        }
        let degenerate: Vec<bool> = min.iter().zip(&max).map(|(a, b)| !(b > a)).collect();
        Ok(Self { mean_maps, min, max, degenerate })
    }

    pub fn n_t(&self) -> usize {
        self.mean_maps.len()
    }

    fn scale(&self, t: usize) -> (f64, f64) {
        if self.degenerate[t] {
            (1.0, 0.5)
        } else {
            (self.max[t] - self.min[t], 0.0)
        }
    }

    fn check(&self, seq: &[Vec<f64>]) -> Result<()> {
        if seq.len() != self.n_t() {
            return Err(Error::shape(format!("sequence has {} steps, normalizer {}", seq.len(), self.n_t())));
        }
        if seq.iter().zip(&self.mean_maps).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::shape("map size differs from normalizer"));
        }
        Ok(())
    }

    pub fn transform(&self, seq: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check(seq)?;
        Ok(seq
            .iter()
            .enumerate()
            .map(|(t, map)| {
                let (scale, off) = self.scale(t);
                map.iter().zip(&self.mean_maps[t]).map(|(p, m)| (p - m - self.min[t]) / scale + off).collect()
            })
            .collect())
    }

    pub fn inverse(&self, seq: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check(seq)?;
        Ok(seq
            .iter()
            .enumerate()
            .map(|(t, map)| {
                let (scale, off) = self.scale(t);
                map.iter().zip(&self.mean_maps[t]).map(|(q, m)| (q - off) * scale + self.min[t] + m).collect()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_sample_hand_example() {
        let a = vec![vec![325.0; 3]];
        let b = vec![vec![327.0; 3]];
        let n = Normalizer::fit(&[&a, &b]).unwrap();
        assert_eq!(n.mean_maps[0], vec![326.0; 3]);
        assert_eq!((n.min[0], n.max[0]), (-1.0, 1.0));
        assert_eq!(n.transform(&a).unwrap()[0], vec![0.0; 3]);
        assert_eq!(n.transform(&b).unwrap()[0], vec![1.0; 3]);
    }

    #[test]
    fn identical_samples_are_degenerate() {
        let a = vec![vec![325.0, 330.0], vec![320.0, 321.0]];
        let n = Normalizer::fit(&[&a, &a]).unwrap();
        assert_eq!(n.degenerate, vec![true, true]);
        let z = n.transform(&a).unwrap();
        assert!(z.iter().flatten().all(|&v| v == 0.5));
        assert_eq!(n.inverse(&z).unwrap(), a);
    }

    #[test]
    fn needs_two_samples() {
        let a = vec![vec![1.0]];
        assert!(Normalizer::fit(&[&a]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_and_unit_range(
            raw in proptest::collection::vec(proptest::collection::vec(300.0f64..350.0, 6), 3..6),
            probe in proptest::collection::vec(250.0f64..400.0, 6),
        ) {
            // samples of 2 steps x 3 blocks
            let seqs: Vec<Vec<Vec<f64>>> = raw.iter().map(|r| vec![r[..3].to_vec(), r[3..].to_vec()]).collect();
            let refs: Vec<&[Vec<f64>]> = seqs.iter().map(|s| s.as_slice()).collect();
            let n = Normalizer::fit(&refs).unwrap();
            for s in &seqs {
                let z = n.transform(s).unwrap();
                prop_assert!(z.iter().flatten().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
            }
            let p = vec![probe[..3].to_vec(), probe[3..].to_vec()];
            let back = n.inverse(&n.transform(&p).unwrap()).unwrap();
            for (a, b) in back.iter().flatten().zip(p.iter().flatten()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
