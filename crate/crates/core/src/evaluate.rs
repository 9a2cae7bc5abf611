//! Surrogate error metrics, well rates from predicted states and ensemble
//! percentiles.

use serde::{Deserialize, Serialize};

use crate::geomodel::{GeoModel, WellKind, WellSpec};
use crate::simulator::{well_rates_from_state, FluidProps, StateSequence, WellRates, WellSeries};
use crate::{Error, Result};

/// Rate-error floor in the denominator (m3/day).
pub const RATE_EPS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Oil,
    Water,
}

fn check_pairs(surr: &[StateSequence], sim: &[StateSequence]) -> Result<()> {
    if surr.is_empty() || surr.len() != sim.len() {
        return Err(Error::shape("ensembles must be non-empty and equal in size"));
    }
    for (a, b) in surr.iter().zip(sim) {
        a.validate()?;
        b.validate()?;
        if a.nx != b.nx || a.ny != b.ny || a.n_t() != b.n_t() {
            return Err(Error::shape("surrogate and simulator sequences differ in shape"));
        }
    }
    Ok(())
}

/// Mean of `|S_surr - S_sim| / S_sim` over samples, blocks and steps.
pub fn saturation_error(surr: &[StateSequence], sim: &[StateSequence]) -> Result<f64> {
    check_pairs(surr, sim)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, b) in surr.iter().zip(sim) {
        for (x, y) in a.saturation.iter().flatten().zip(b.saturation.iter().flatten()) {
            if !(*y > 0.0) {
                return Err(Error::invalid("simulator saturation must be positive"));
            }
            sum += (x - y).abs() / y;
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// Mean of `|p_surr - p_sim| / (p_max - p_min)`, range taken over the whole
/// simulated ensemble.
pub fn pressure_error(surr: &[StateSequence], sim: &[StateSequence]) -> Result<f64> {
    check_pairs(surr, sim)?;
    let (lo, hi) = sim
        .iter()
        .flat_map(|s| s.pressure.iter().flatten())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)));
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::invalid("simulated pressure range is zero"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, b) in surr.iter().zip(sim) {
        for (x, y) in a.pressure.iter().flatten().zip(b.pressure.iter().flatten()) {
            sum += (x - y).abs() / range;
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// Mean of `|r_surr - r_sim| / (|r_sim| + 1)` over samples, wells of `kind`
/// and report times.
pub fn rate_error(surr: &[WellRates], sim: &[WellRates], phase: Phase, kind: WellKind) -> Result<f64> {
    if surr.is_empty() || surr.len() != sim.len() {
        return Err(Error::shape("rate ensembles must be non-empty and equal in size"));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (a, b) in surr.iter().zip(sim) {
        if a.times != b.times || a.wells.len() != b.wells.len() {
            return Err(Error::shape("rate sets differ in times or wells"));
        }
        for (wa, wb) in a.wells.iter().zip(&b.wells) {
            if wa.id != wb.id || wa.kind != wb.kind {
                return Err(Error::shape("rate sets list wells in a different order"));
            }
            if wa.kind != kind {
                continue;
            }
            let (ra, rb) = match phase {
                Phase::Oil => (&wa.q_o, &wb.q_o),
                Phase::Water => (&wa.q_w, &wb.q_w),
            };
            for (x, y) in ra.iter().zip(rb) {
                sum += (x - y).abs() / (y.abs() + RATE_EPS);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::invalid(format!("no {} wells to compare", kind.as_str())));
    }
    Ok(sum / n as f64)
}

/// Well rates at each report time from (possibly predicted) states.
/// Saturations are clamped to `[0, 1]`; pressures are used as given.
pub fn rates_from_states(
    states: &StateSequence,
    model: &GeoModel,
    wells: &[WellSpec],
    fluids: &FluidProps,
) -> Result<WellRates> {
    states.validate()?;
    if states.nx != model.grid.nx || states.ny != model.grid.ny {
        return Err(Error::shape("states and model differ in grid"));
    }
    let mut out = Vec::with_capacity(wells.len());
    for w in wells {
        let b = w.block(&model.grid);
        let mut q_o = Vec::with_capacity(states.n_t());
        let mut q_w = Vec::with_capacity(states.n_t());
        for t in 0..states.n_t() {
            let p = states.pressure[t][b];
            let s = states.saturation[t][b].clamp(0.0, 1.0);
            if !p.is_finite() || !s.is_finite() {
                return Err(Error::invalid(format!("non-finite state at well {}", w.id)));
            }
            let (o, wa) = well_rates_from_state(p, s, w, model.perm[b], &model.grid, fluids)?;
            q_o.push(o);
            q_w.push(wa);
        }
        out.push(WellSeries { id: w.id.clone(), kind: w.kind, q_o, q_w });
    }
    Ok(WellRates { times: states.times.clone(), wells: out })
}

/// Metric report for one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub delta_s: f64,
    pub delta_p: f64,
    pub delta_r_oil: f64,
    pub delta_r_water: f64,
    pub delta_r_inj: f64,
    pub n_e: usize,
    pub n_t: usize,
    pub n_b: usize,
}

/// All five metrics for surrogate versus simulator states and rates.
pub fn metrics(
    surr_states: &[StateSequence],
    sim_states: &[StateSequence],
    surr_rates: &[WellRates],
    sim_rates: &[WellRates],
) -> Result<Metrics> {
    Ok(Metrics {
        delta_s: saturation_error(surr_states, sim_states)?,
        delta_p: pressure_error(surr_states, sim_states)?,
        delta_r_oil: rate_error(surr_rates, sim_rates, Phase::Oil, WellKind::Producer)?,
        delta_r_water: rate_error(surr_rates, sim_rates, Phase::Water, WellKind::Producer)?,
        delta_r_inj: rate_error(surr_rates, sim_rates, Phase::Water, WellKind::Injector)?,
        n_e: sim_states.len(),
        n_t: sim_states[0].n_t(),
        n_b: sim_states[0].n_b(),
    })
}

/// Index of the `q`-th percentile in a sorted array of `n` values.
pub fn percentile_index(q: f64, n: usize) -> usize {
    ((q / 100.0) * (n as f64 - 1.0)).floor() as usize
}

/// P10/P50/P90 curves of one quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub quantity: String,
    pub times: Vec<f64>,
    pub n_e: usize,
    /// Per time, the ensemble values in ascending order.
    pub sorted: Vec<Vec<f64>>,
    pub p10: Vec<f64>,
    pub p50: Vec<f64>,
    pub p90: Vec<f64>,
}

/// Percentiles at each time of `samples[member][time]`.
pub fn percentiles(quantity: &str, times: &[f64], samples: &[Vec<f64>]) -> Result<EnsembleResult> {
    let n_e = samples.len();
    if n_e == 0 {
        return Err(Error::invalid("cannot take percentiles of an empty ensemble"));
    }
    if samples.iter().any(|s| s.len() != times.len()) {
        return Err(Error::shape("ensemble member length differs from the time axis"));
    }
    let sorted: Vec<Vec<f64>> = (0..times.len())
        .map(|t| {
            let mut v: Vec<f64> = samples.iter().map(|s| s[t]).collect();
            v.sort_by(f64::total_cmp);
            v
        })
        .collect();
    let pick = |q: f64| sorted.iter().map(|v| v[percentile_index(q, n_e)]).collect();
    Ok(EnsembleResult {
        quantity: quantity.to_string(),
        times: times.to_vec(),
        n_e,
        p10: pick(10.0),
        p50: pick(50.0),
        p90: pick(90.0),
        sorted,
    })
}

/// Rate curves keyed `well.phase`, plus field totals `field.oil`,
/// `field.water` and `field.injection`. Producers contribute oil and water,
/// injectors only water.
pub fn rate_quantities(rates: &WellRates) -> Vec<(String, Vec<f64>)> {
    let n_t = rates.times.len();
    let mut out = Vec::new();
    let mut oil = vec![0.0; n_t];
    let mut water = vec![0.0; n_t];
    let mut inj = vec![0.0; n_t];
    for w in &rates.wells {
        match w.kind {
            WellKind::Producer => {
                out.push((format!("{}.oil", w.id), w.q_o.clone()));
                out.push((format!("{}.water", w.id), w.q_w.clone()));
                oil.iter_mut().zip(&w.q_o).for_each(|(a, b)| *a += b);
                water.iter_mut().zip(&w.q_w).for_each(|(a, b)| *a += b);
            }
            WellKind::Injector => {
                out.push((format!("{}.water", w.id), w.q_w.clone()));
                inj.iter_mut().zip(&w.q_w).for_each(|(a, b)| *a += b);
            }
        }
    }
    out.push(("field.oil".into(), oil));
    out.push(("field.water".into(), water));
    out.push(("field.injection".into(), inj));
    out
}

/// Percentile curves for every rate quantity of an ensemble.
pub fn rate_percentiles(ensemble: &[WellRates]) -> Result<Vec<EnsembleResult>> {
    let first = ensemble.first().ok_or_else(|| Error::invalid("empty rate ensemble"))?;
    let per: Vec<Vec<(String, Vec<f64>)>> = ensemble.iter().map(rate_quantities).collect();
    let names: Vec<String> = per[0].iter().map(|(n, _)| n.clone()).collect();
    names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let samples: Vec<Vec<f64>> = per
                .iter()
                .map(|q| match q.get(k) {
                    Some((n, v)) if n == name => Ok(v.clone()),
                    _ => Err(Error::shape("ensemble members list different wells")),
                })
                .collect::<Result<_>>()?;
            percentiles(name, &first.times, &samples)
        })
        .collect()
}
