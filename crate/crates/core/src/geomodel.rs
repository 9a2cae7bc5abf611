//! Binary facies geomodels: channel realizations, PCA parameterization and
//! the facies-to-permeability transform.

use std::collections::HashSet;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default shale permeability (md).
pub const DEFAULT_PERM_A: f64 = 30.0;

/// Default exponent giving 2000 md sand for `a = 30`.
pub fn default_perm_b() -> f64 {
    (2000.0_f64 / 30.0).ln()
}

/// Rectangular 2D grid. Block `(i, j)` has linear index `j * nx + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64, dz: f64) -> Result<Self> {
        let grid = Self { nx, ny, dx, dy, dz };
        grid.validate()?;
        Ok(grid)
    }

    /// Checks the invariants shared by every consumer. Channel generation
    /// and the network additionally require at least 4 blocks per axis.
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::invalid("grid must have at least one block per axis"));
        }
        if !(self.dx > 0.0 && self.dy > 0.0 && self.dz > 0.0) {
            return Err(Error::invalid("grid block dimensions must be positive"));
        }
        Ok(())
    }

    pub(crate) fn require_min_extent(&self, min: usize) -> Result<()> {
        if self.nx < min || self.ny < min {
            return Err(Error::invalid(format!("grid {}x{} smaller than the required {min}x{min}", self.nx, self.ny)));
        }
        Ok(())
    }

    pub fn n_blocks(&self) -> usize {
        self.nx * self.ny
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn block_volume(&self) -> f64 {
        self.dx * self.dy * self.dz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WellKind {
    Injector,
    Producer,
}

impl WellKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            WellKind::Injector => "injector",
            WellKind::Producer => "producer",
        }
    }
}

impl std::str::FromStr for WellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "injector" | "inj" | "i" => Ok(WellKind::Injector),
            "producer" | "prod" | "p" => Ok(WellKind::Producer),
            other => Err(Error::Format(format!("unknown well kind '{other}'"))),
        }
    }
}

/// A vertical, BHP-controlled well with facies hard data at its block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WellSpec {
    pub id: String,
    pub i: usize,
    pub j: usize,
    pub kind: WellKind,
    /// Bottom-hole pressure (bar).
    pub bhp: f64,
    /// Facies observed at the well block.
    pub facies: u8,
    /// Wellbore radius (m).
    pub rw: f64,
}

impl WellSpec {
    pub fn block(&self, grid: &GridSpec) -> usize {
        grid.index(self.i, self.j)
    }
}

pub fn validate_wells(grid: &GridSpec, wells: &[WellSpec]) -> Result<()> {
    let mut blocks = HashSet::new();
    let mut ids = HashSet::new();
    for w in wells {
        if w.i >= grid.nx || w.j >= grid.ny {
            return Err(Error::invalid(format!("well {} outside the grid", w.id)));
        }
        if !blocks.insert((w.i, w.j)) {
            return Err(Error::invalid(format!("well {} shares a block", w.id)));
        }
        if !ids.insert(w.id.as_str()) {
            return Err(Error::invalid(format!("duplicate well id {}", w.id)));
        }
        if !(w.bhp > 0.0) {
            return Err(Error::invalid(format!("well {} has non-positive BHP", w.id)));
        }
        if w.facies > 1 {
            return Err(Error::invalid(format!("well {} facies must be 0 or 1", w.id)));
        }
        if !(w.rw > 0.0) {
            return Err(Error::invalid(format!("well {} has non-positive radius", w.id)));
        }
    }
    Ok(())
}

/// Facies map plus the permeability derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoModel {
    pub grid: GridSpec,
    pub facies: Vec<u8>,
    /// Permeability per block (md).
    pub perm: Vec<f64>,
    pub a: f64,
    pub b: f64,
}

impl GeoModel {
    pub fn from_facies(grid: GridSpec, facies: Vec<u8>, a: f64, b: f64) -> Result<Self> {
        grid.validate()?;
        if facies.len() != grid.n_blocks() {
            return Err(Error::shape(format!(
                "facies map has {} values, grid has {} blocks",
                facies.len(),
                grid.n_blocks()
            )));
        }
        let perm = facies_to_perm(&facies, a, b)?;
        Ok(Self { grid, facies, perm, a, b })
    }

    /// Uniform-permeability model, used by solver tests.
    pub fn uniform(grid: GridSpec, perm_md: f64) -> Result<Self> {
        if !(perm_md > 0.0) {
            return Err(Error::invalid("permeability must be positive"));
        }
        Self::from_facies(grid, vec![0; grid.n_blocks()], perm_md, 0.0)
    }

    pub fn sand_fraction(&self) -> f64 {
        let sand = self.facies.iter().filter(|&&f| f == 1).count();
        sand as f64 / self.facies.len() as f64
    }

    pub fn honors_wells(&self, wells: &[WellSpec]) -> bool {
        wells.iter().all(|w| self.facies[w.block(&self.grid)] == w.facies)
    }
}

/// `k = a * exp(b * m)` per block.
pub fn facies_to_perm(facies: &[u8], a: f64, b: f64) -> Result<Vec<f64>> {
    if !(a > 0.0) {
        return Err(Error::invalid("permeability scale a must be positive"));
    }
    if let Some(bad) = facies.iter().find(|&&f| f > 1) {
        return Err(Error::invalid(format!("facies value {bad} is not binary")));
    }
    Ok(facies.iter().map(|&m| a * (b * m as f64).exp()).collect())
}

/// Geometry ranges for sinusoidal left-to-right channels, in block units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub count_min: usize,
    pub count_max: usize,
    pub amplitude: (f64, f64),
    pub period: (f64, f64),
    pub width: (f64, f64),
}

impl ChannelParams {
    /// Desk-scale defaults scaled to the grid height.
    pub fn for_grid(grid: &GridSpec) -> Self {
        let ny = grid.ny as f64;
        let nx = grid.nx as f64;
        Self {
            count_min: 2,
            count_max: 4,
            amplitude: (0.05 * ny, 0.15 * ny),
            period: (0.75 * nx, 2.0 * nx),
            width: (0.1 * ny, 0.2 * ny),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |(lo, hi): (f64, f64)| lo <= hi;
        if self.count_min > self.count_max {
            return Err(Error::invalid("channel count range is reversed"));
        }
        if !(ordered(self.amplitude) && ordered(self.period) && ordered(self.width)) {
            return Err(Error::invalid("channel parameter range is reversed"));
        }
        if !(self.amplitude.0 >= 0.0 && self.period.0 > 0.0 && self.width.0 > 0.0) {
            return Err(Error::invalid("channel geometry must be positive"));
        }
        Ok(())
    }
}

fn sample_range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Rasterizes sinusoidal sand channels and conditions the map to the well
/// hard data. Deterministic in `seed`.
pub fn generate_channel_realization(
    grid: &GridSpec,
    wells: &[WellSpec],
    seed: u64,
    params: &ChannelParams,
    a: f64,
    b: f64,
) -> Result<GeoModel> {
    grid.validate()?;
    grid.require_min_extent(4)?;
    params.validate()?;
    validate_wells(grid, wells)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(params.count_min..=params.count_max);
    let mut facies = vec![0u8; grid.n_blocks()];
    for _ in 0..count {
        let y0 = rng.random_range(0.0..grid.ny as f64);
        let amp = sample_range(&mut rng, params.amplitude);
        let period = sample_range(&mut rng, params.period);
        let width = sample_range(&mut rng, params.width);
        let phase = rng.random_range(0.0..2.0 * PI);
        let center = |x: f64| y0 + amp * (2.0 * PI * x / period + phase).sin();
        for i in 0..grid.nx {
            // Envelope of the centerline across the column keeps adjacent
            // columns overlapping, so each channel stays connected.
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for s in 0..=4 {
                let y = center(i as f64 + s as f64 / 4.0);
                lo = lo.min(y);
                hi = hi.max(y);
            }
            lo -= width / 2.0;
            hi += width / 2.0;
            for j in 0..grid.ny {
                let yc = j as f64 + 0.5;
                if yc >= lo && yc <= hi {
                    facies[grid.index(i, j)] = 1;
                }
            }
        }
    }

    condition_to_wells(grid, wells, &mut facies)?;
    GeoModel::from_facies(*grid, facies, a, b)
}

fn condition_to_wells(grid: &GridSpec, wells: &[WellSpec], facies: &mut [u8]) -> Result<()> {
    let well_blocks: HashSet<usize> = wells.iter().map(|w| w.block(grid)).collect();
    for w in wells {
        facies[w.block(grid)] = w.facies;
    }
    let has_sand_neighbor = |facies: &[u8], i: usize, j: usize| neighbors4(grid, i, j).any(|k| facies[k] == 1);
    for w in wells.iter().filter(|w| w.facies == 1) {
        if has_sand_neighbor(facies, w.i, w.j) {
            continue;
        }
        let mut connected = false;
        for radius in 1..=2usize {
            let i0 = w.i.saturating_sub(radius);
            let j0 = w.j.saturating_sub(radius);
            let i1 = (w.i + radius).min(grid.nx - 1);
            let j1 = (w.j + radius).min(grid.ny - 1);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let k = grid.index(i, j);
                    if !well_blocks.contains(&k) {
                        facies[k] = 1;
                    }
                }
            }
            if has_sand_neighbor(facies, w.i, w.j) {
                connected = true;
                break;
            }
        }
        if !connected {
            return Err(Error::UnconditionableRealization(format!("sand well {} is enclosed by mud hard data", w.id)));
        }
    }
    if wells.iter().any(|w| facies[w.block(grid)] != w.facies) {
        return Err(Error::UnconditionableRealization("well hard data not honored after patching".into()));
    }
    Ok(())
}

fn neighbors4(grid: &GridSpec, i: usize, j: usize) -> impl Iterator<Item = usize> + '_ {
    let mut out = Vec::with_capacity(4);
    if i > 0 {
        out.push(grid.index(i - 1, j));
    }
    if i + 1 < grid.nx {
        out.push(grid.index(i + 1, j));
    }
    if j > 0 {
        out.push(grid.index(i, j - 1));
    }
    if j + 1 < grid.ny {
        out.push(grid.index(i, j + 1));
    }
    out.into_iter()
}

/// Generates `count` realizations, retrying a seed stream when a
/// realization cannot be conditioned.
pub fn generate_realizations(
    grid: &GridSpec,
    wells: &[WellSpec],
    seed: u64,
    count: usize,
    params: &ChannelParams,
    a: f64,
    b: f64,
) -> Result<Vec<GeoModel>> {
    use rayon::prelude::*;
    (0..count)
        .into_par_iter()
        .map(|k| {
            let base = seed.wrapping_mul(1_000_003).wrapping_add(k as u64);
            let mut last_err = None;
            for attempt in 0..16u64 {
                let s = base.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                match generate_channel_realization(grid, wells, s, params, a, b) {
                    Ok(m) => return Ok(m),
                    Err(e @ Error::UnconditionableRealization(_)) => last_err = Some(e),
                    Err(e) => return Err(e),
                }
            }
            Err(last_err.expect("at least one attempt"))
        })
        .collect()
}

/// Principal components of a set of facies maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub grid: GridSpec,
    pub mean_map: Vec<f64>,
    /// `n_xi` orthonormal per-block vectors.
    pub components: Vec<Vec<f64>>,
    /// Non-increasing.
    pub singular_values: Vec<f64>,
    /// Number of realizations the basis was fitted on.
    pub n_samples: usize,
}

impl PcaBasis {
    pub fn n_xi(&self) -> usize {
        self.components.len()
    }

    fn score_scale(&self, k: usize) -> f64 {
        self.singular_values[k] / ((self.n_samples as f64 - 1.0).sqrt())
    }

    /// `mean + sum_k xi_k * s_k / sqrt(N-1) * v_k`.
    pub fn continuous_map(&self, xi: &[f64]) -> Result<Vec<f64>> {
        if xi.len() != self.n_xi() {
            return Err(Error::shape(format!("latent vector has {} entries, basis has {}", xi.len(), self.n_xi())));
        }
        let mut map = self.mean_map.clone();
        for (k, comp) in self.components.iter().enumerate() {
            let coef = xi[k] * self.score_scale(k);
            if coef != 0.0 {
                for (m, c) in map.iter_mut().zip(comp) {
                    *m += coef * c;
                }
            }
        }
        Ok(map)
    }

    /// Least-squares latent coordinates of a map. Components with a zero
    /// singular value get a zero coordinate.
    pub fn project(&self, map: &[f64]) -> Result<Vec<f64>> {
        if map.len() != self.mean_map.len() {
            return Err(Error::shape("map length does not match basis"));
        }
        Ok(self
            .components
            .iter()
            .enumerate()
            .map(|(k, comp)| {
                let scale = self.score_scale(k);
                if scale == 0.0 {
                    return 0.0;
                }
                let dot: f64 = map.iter().zip(&self.mean_map).zip(comp).map(|((m, mu), c)| (m - mu) * c).sum();
                dot / scale
            })
            .collect())
    }
}

/// Fits PCA on facies maps of a common grid.
pub fn fit_pca(realizations: &[GeoModel], n_xi: usize) -> Result<PcaBasis> {
    let first = realizations.first().ok_or_else(|| Error::invalid("no realizations to fit"))?;
    if realizations.iter().any(|m| m.grid != first.grid) {
        return Err(Error::invalid("realizations do not share one grid"));
    }
    let maps: Vec<Vec<f64>> = realizations.iter().map(|m| m.facies.iter().map(|&f| f as f64).collect()).collect();
    fit_pca_maps(first.grid, &maps, n_xi)
}

/// PCA on raw per-block maps. The components are the leading left singular
/// vectors of the centered (blocks x samples) data matrix.
pub fn fit_pca_maps(grid: GridSpec, maps: &[Vec<f64>], n_xi: usize) -> Result<PcaBasis> {
    let n = maps.len();
    if n_xi == 0 {
        return Err(Error::invalid("n_xi must be positive"));
    }
    if n_xi >= n {
        return Err(Error::invalid(format!("n_xi = {n_xi} must be smaller than the sample count {n}")));
    }
    let n_b = maps[0].len();
    if maps.iter().any(|m| m.len() != n_b) {
        return Err(Error::shape("maps have different lengths"));
    }
    if n_xi > n_b {
        return Err(Error::invalid("n_xi exceeds the number of blocks"));
    }

    let mut mean = vec![0.0; n_b];
    for m in maps {
        for (acc, v) in mean.iter_mut().zip(m) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= n as f64;
    }
    let centered = DMatrix::from_fn(n_b, n, |r, c| maps[c][r] - mean[r]);
    let svd = centered.svd(true, false);
    let u = svd.u.ok_or_else(|| Error::invalid("SVD did not return U"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });

    let mut components = Vec::with_capacity(n_xi);
    let mut singular_values = Vec::with_capacity(n_xi);
    for &k in order.iter().take(n_xi) {
        let mut v: Vec<f64> = u.column(k).iter().copied().collect();
        // Fix the sign so the largest-magnitude entry is positive.
        let pivot = v.iter().copied().fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        singular_values.push(svd.singular_values[k].max(0.0));
    }
    Ok(PcaBasis { grid, mean_map: mean, components, singular_values, n_samples: n })
}

/// Maps a latent vector to a conditioned binary geomodel.
pub fn sample_model(basis: &PcaBasis, xi: &[f64], wells: &[WellSpec], a: f64, b: f64) -> Result<GeoModel> {
    let cont = basis.continuous_map(xi)?;
    let mut facies: Vec<u8> = cont.iter().map(|&v| u8::from(v >= 0.5)).collect();
    for w in wells {
        facies[w.block(&basis.grid)] = w.facies;
    }
    GeoModel::from_facies(basis.grid, facies, a, b)
}

/// `count` standard normal latent vectors of length `n_xi`. Vector `k` is
/// drawn from its own stream, so prefixes agree across counts.
pub fn sample_latent(n_xi: usize, seed: u64, count: usize) -> Vec<Vec<f64>> {
    let normal = rand_distr::Normal::new(0.0, 1.0).expect("unit normal");
    (0..count)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            (0..n_xi).map(|_| rand_distr::Distribution::sample(&normal, &mut rng)).collect()
        })
        .collect()
}
