//! Fully implicit two-phase (oil-water) finite-volume simulator.
//!
//! Two-point flux approximation with harmonic transmissibilities, phase
//! potential upwinding, backward Euler in time and Newton's method with an
//! analytic Jacobian. Wells are BHP-controlled Peaceman wells. Capillary
//! pressure and gravity are neglected.

mod banded;
mod fluids;
mod solver;
mod wells;

use serde::{Deserialize, Serialize};

use crate::geomodel::{validate_wells, GeoModel, GridSpec, WellKind, WellSpec};
use crate::{Error, Result};

pub use banded::{BandedMatrix, SingularMatrix};
pub use fluids::{relperm, Corey, FluidProps, RelPerm};
pub use wells::{equivalent_radius, well_index, well_rates_from_state};

/// Default report schedule (days), denser at early times.
pub const DEFAULT_REPORT_TIMES: [f64; 10] = [50.0, 100.0, 150.0, 200.0, 300.0, 400.0, 550.0, 700.0, 850.0, 1000.0];

/// Desk-scale schedule with five report times.
pub const DESK_REPORT_TIMES: [f64; 5] = [100.0, 200.0, 400.0, 700.0, 1000.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub grid: GridSpec,
    pub wells: Vec<WellSpec>,
    pub fluids: FluidProps,
    pub porosity: f64,
    pub sw_init: f64,
    /// Initial pressure (bar).
    pub p_init: f64,
    /// Report times (days), strictly increasing.
    pub report_times: Vec<f64>,
    /// Newton tolerance on the scaled residual infinity norm. Residuals are
    /// scaled by `dt / (phi V rho_ref)`, i.e. measured in cell pore volumes.
    pub newton_tol: f64,
    pub max_newton: usize,
    pub dt_init: f64,
    pub dt_max: f64,
    pub dt_min: f64,
}

impl SimConfig {
    /// Desk-scale defaults for the given grid and wells.
    pub fn desk(grid: GridSpec, wells: Vec<WellSpec>) -> Self {
        Self {
            grid,
            wells,
            fluids: FluidProps::default(),
            porosity: 0.2,
            sw_init: 0.1,
            p_init: 325.0,
            report_times: DESK_REPORT_TIMES.to_vec(),
            newton_tol: 1e-8,
            max_newton: 12,
            dt_init: 1.0,
            dt_max: 50.0,
            dt_min: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        validate_wells(&self.grid, &self.wells)?;
        self.fluids.validate()?;
        if !(self.porosity > 0.0 && self.porosity < 1.0) {
            return Err(Error::invalid("porosity must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.sw_init) {
            return Err(Error::invalid("initial water saturation must lie in [0, 1]"));
        }
        if !(self.p_init > 0.0) {
            return Err(Error::invalid("initial pressure must be positive"));
        }
        if self.report_times.is_empty() || !(self.report_times[0] > 0.0) {
            return Err(Error::invalid("report times must be non-empty and start after 0"));
        }
        if self.report_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("report times must be strictly increasing"));
        }
        if !(self.newton_tol > 0.0) || self.max_newton == 0 {
            return Err(Error::invalid("Newton settings must be positive"));
        }
        if !(self.dt_min > 0.0 && self.dt_init >= self.dt_min && self.dt_max >= self.dt_init) {
            return Err(Error::invalid("time step bounds must satisfy 0 < dt_min <= dt_init <= dt_max"));
        }
        Ok(())
    }

    pub fn n_t(&self) -> usize {
        self.report_times.len()
    }
}

/// Pressure (bar) and water saturation maps at each report time.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSequence {
    pub nx: usize,
    pub ny: usize,
    pub times: Vec<f64>,
    /// `n_t` maps of `nx * ny` values.
    pub pressure: Vec<Vec<f64>>,
    pub saturation: Vec<Vec<f64>>,
}

impl StateSequence {
    pub fn n_t(&self) -> usize {
        self.pressure.len()
    }

    pub fn n_b(&self) -> usize {
        self.nx * self.ny
    }

    pub fn validate(&self) -> Result<()> {
        let n_b = self.n_b();
        if self.saturation.len() != self.pressure.len() || self.times.len() != self.pressure.len() {
            return Err(Error::shape("state sequence has inconsistent step counts"));
        }
        if self.pressure.iter().chain(&self.saturation).any(|m| m.len() != n_b) {
            return Err(Error::shape("state map length differs from nx * ny"));
        }
        Ok(())
    }
}

/// Rate history of one well. Units m3/day at surface conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellSeries {
    pub id: String,
    pub kind: WellKind,
    pub q_o: Vec<f64>,
    pub q_w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellRates {
    pub times: Vec<f64>,
    pub wells: Vec<WellSeries>,
}

impl WellRates {
    pub fn well(&self, id: &str) -> Option<&WellSeries> {
        self.wells.iter().find(|w| w.id == id)
    }
}

/// Bookkeeping from one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimDiagnostics {
    pub time_steps: usize,
    pub newton_iterations: usize,
    pub failed_steps: usize,
    pub initial_water_mass: f64,
    pub final_water_mass: f64,
    pub injected_water_mass: f64,
    pub produced_water_mass: f64,
    /// `(mass change - net inflow)` in cell pore volumes of water at the
    /// reference density.
    pub water_balance_error: f64,
    /// Cumulative water injected (reservoir m3) at each report time.
    pub cumulative_injection_volume: Vec<f64>,
    /// Per well, running sum of the reported rates over report times.
    pub reported_rate_sums: Vec<(String, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub states: StateSequence,
    pub rates: WellRates,
    pub diagnostics: SimDiagnostics,
}

/// Runs the simulator on `model` under `config`.
pub fn simulate(model: &GeoModel, config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    if model.grid != config.grid {
        return Err(Error::invalid("model grid differs from simulation grid"));
    }
    solver::Solver::new(model, config)?.run()
}

/// Total pore volume of the grid (m3).
pub fn pore_volume(config: &SimConfig) -> f64 {
    config.grid.n_blocks() as f64 * config.grid.block_volume() * config.porosity
}
