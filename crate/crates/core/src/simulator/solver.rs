//! Newton solver and time stepping.

use crate::geomodel::{GeoModel, WellKind};
use crate::simulator::banded::BandedMatrix;
use crate::simulator::fluids::PhaseState;
use crate::simulator::wells::{well_index, well_rates_from_state};
use crate::simulator::{SimConfig, SimDiagnostics, SimResult, StateSequence, WellRates, WellSeries};
use crate::units::{BAR, DAY, MILLIDARCY};
use crate::{Error, Result};

const MAX_DS: f64 = 0.2;
const MAX_DP_BAR: f64 = 50.0;

struct Face {
    a: usize,
    b: usize,
    trans: f64,
}

struct Well {
    block: usize,
    wi: f64,
    bhp: f64,
    injector: bool,
}

pub(crate) struct Solver<'a> {
    model: &'a GeoModel,
    cfg: &'a SimConfig,
    faces: Vec<Face>,
    wells: Vec<Well>,
    pore_volume: f64,
    jac: BandedMatrix,
    res: Vec<f64>,
    phases: Vec<(PhaseState, PhaseState)>,
}

/// Outcome of one Newton solve.
enum Step {
    Converged(usize),
    Failed(usize),
}

impl<'a> Solver<'a> {
    pub fn new(model: &'a GeoModel, cfg: &'a SimConfig) -> Result<Self> {
        let g = &cfg.grid;
        let k_si: Vec<f64> = model.perm.iter().map(|k| k * MILLIDARCY).collect();
        let harmonic = |k1: f64, k2: f64, area: f64, len: f64| 2.0 * area * k1 * k2 / (len * (k1 + k2));
        let mut faces = Vec::new();
        for j in 0..g.ny {
            for i in 0..g.nx {
                let c = g.index(i, j);
                if i + 1 < g.nx {
                    let d = g.index(i + 1, j);
                    faces.push(Face { a: c, b: d, trans: harmonic(k_si[c], k_si[d], g.dy * g.dz, g.dx) });
                }
                if j + 1 < g.ny {
                    let d = g.index(i, j + 1);
                    faces.push(Face { a: c, b: d, trans: harmonic(k_si[c], k_si[d], g.dx * g.dz, g.dy) });
                }
            }
        }
        let wells = cfg
            .wells
            .iter()
            .map(|w| {
                let block = w.block(g);
                Ok(Well {
                    block,
                    wi: well_index(model.perm[block], g, w.rw)?,
                    bhp: w.bhp * BAR,
                    injector: w.kind == WellKind::Injector,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n = g.n_blocks();
        let band = if g.ny > 1 { 2 * g.nx + 1 } else { 3 };
        Ok(Self {
            model,
            cfg,
            faces,
            wells,
            pore_volume: cfg.porosity * g.block_volume(),
            jac: BandedMatrix::new(2 * n, band, band),
            res: vec![0.0; 2 * n],
            phases: vec![Default::default(); n],
        })
    }

    /// Assembles scaled residuals and Jacobian at `(p, s)`; `p` in Pa.
    /// Jacobian pressure columns are per bar.
    fn assemble(&mut self, p: &[f64], s: &[f64], p_old: &[f64], s_old: &[f64], dt: f64) {
        let fl = &self.cfg.fluids;
        let n = p.len();
        for c in 0..n {
            self.phases[c] = fl.phases(p[c], s[c]);
        }
        self.jac.clear();
        let sw_scale = dt / (self.pore_volume * fl.rho_w_ref);
        let so_scale = dt / (self.pore_volume * fl.rho_o_ref);
        let scale = [sw_scale, so_scale];
        let rho_ref = [fl.rho_w_ref, fl.rho_o_ref];

        // accumulation
        for c in 0..n {
            let (w, o) = self.phases[c];
            let (ow, oo) = fl.densities(p_old[c] / BAR);
            let rw = (w.rho * s[c] - ow * s_old[c]) / rho_ref[0];
            let ro = (o.rho * (1.0 - s[c]) - oo * (1.0 - s_old[c])) / rho_ref[1];
            self.res[2 * c] = rw;
            self.res[2 * c + 1] = ro;
            self.jac.add(2 * c, 2 * c, w.drho_dp * s[c] / rho_ref[0] * BAR);
            self.jac.add(2 * c, 2 * c + 1, w.rho / rho_ref[0]);
            self.jac.add(2 * c + 1, 2 * c, o.drho_dp * (1.0 - s[c]) / rho_ref[1] * BAR);
            self.jac.add(2 * c + 1, 2 * c + 1, -o.rho / rho_ref[1]);
        }

        // inter-block fluxes, positive from a to b
        for f in &self.faces {
            let (a, b) = (f.a, f.b);
            let dp = p[a] - p[b];
            let up = if dp > 0.0 {
                a
            } else if dp < 0.0 {
                b
            } else {
                a.min(b)
            };
            let (wu, ou) = self.phases[up];
            for (ph, st) in [wu, ou].iter().enumerate() {
                let (m, dm_dp, dm_ds) = st.mass_mobility();
                let flux = f.trans * m * dp * scale[ph];
                let d_pa = f.trans * m * scale[ph] * BAR;
                let d_up_p = f.trans * dm_dp * dp * scale[ph] * BAR;
                let d_up_s = f.trans * dm_ds * dp * scale[ph];
                let (ra, rb) = (2 * a + ph, 2 * b + ph);
                self.res[ra] += flux;
                self.res[rb] -= flux;
                self.jac.add(ra, 2 * a, d_pa);
                self.jac.add(ra, 2 * b, -d_pa);
                self.jac.add(rb, 2 * a, -d_pa);
                self.jac.add(rb, 2 * b, d_pa);
                self.jac.add(ra, 2 * up, d_up_p);
                self.jac.add(ra, 2 * up + 1, d_up_s);
                self.jac.add(rb, 2 * up, -d_up_p);
                self.jac.add(rb, 2 * up + 1, -d_up_s);
            }
        }

        // wells, positive out of the reservoir
        for w in &self.wells {
            let c = w.block;
            let (ws, os) = self.phases[c];
            let dp = p[c] - w.bhp;
            if w.injector {
                let lt = ws.lambda + os.lambda;
                let dlt_dp = ws.dlambda_dp + os.dlambda_dp;
                let dlt_ds = ws.dlambda_ds + os.dlambda_ds;
                let q = w.wi * ws.rho * lt * dp;
                let dq_dp = w.wi * (ws.drho_dp * lt * dp + ws.rho * dlt_dp * dp + ws.rho * lt);
                let dq_ds = w.wi * ws.rho * dlt_ds * dp;
                self.res[2 * c] += q * sw_scale;
                self.jac.add(2 * c, 2 * c, dq_dp * sw_scale * BAR);
                self.jac.add(2 * c, 2 * c + 1, dq_ds * sw_scale);
            } else {
                for (ph, st) in [ws, os].iter().enumerate() {
                    let (m, dm_dp, dm_ds) = st.mass_mobility();
                    let r = 2 * c + ph;
                    self.res[r] += w.wi * m * dp * scale[ph];
                    self.jac.add(r, 2 * c, w.wi * (dm_dp * dp + m) * scale[ph] * BAR);
                    self.jac.add(r, 2 * c + 1, w.wi * dm_ds * dp * scale[ph]);
                }
            }
        }
    }

    /// Newton iteration for one step of length `dt` seconds. On success
    /// `p`, `s` hold the new state.
    fn newton(&mut self, p: &mut [f64], s: &mut [f64], p_old: &[f64], s_old: &[f64], dt: f64) -> Step {
        let tol = self.cfg.newton_tol;
        for it in 0..=self.cfg.max_newton {
            self.assemble(p, s, p_old, s_old, dt);
            let norm = self.res.iter().fold(0.0f64, |m, r| m.max(r.abs()));
            if !norm.is_finite() {
                return Step::Failed(it);
            }
            if norm <= tol {
                return Step::Converged(it);
            }
            if it == self.cfg.max_newton {
                return Step::Failed(it);
            }
            let mut delta: Vec<f64> = self.res.iter().map(|r| -r).collect();
            if self.jac.solve_in_place(&mut delta).is_err() {
                return Step::Failed(it);
            }
            for c in 0..p.len() {
                let dp = delta[2 * c].clamp(-MAX_DP_BAR, MAX_DP_BAR);
                let ds = delta[2 * c + 1].clamp(-MAX_DS, MAX_DS);
                if !dp.is_finite() || !ds.is_finite() {
                    return Step::Failed(it);
                }
                p[c] += dp * BAR;
                s[c] = (s[c] + ds).clamp(0.0, 1.0);
            }
        }
        Step::Failed(self.cfg.max_newton)
    }

    fn water_mass(&self, p: &[f64], s: &[f64]) -> f64 {
        let fl = &self.cfg.fluids;
        p.iter().zip(s).map(|(&pc, &sc)| self.pore_volume * fl.densities(pc / BAR).0 * sc).sum()
    }

    /// Mass rates out of the reservoir per well, `(oil, water)` in kg/s.
    fn well_mass_rates(&self, p: &[f64], s: &[f64]) -> Vec<(f64, f64)> {
        let fl = &self.cfg.fluids;
        self.wells
            .iter()
            .map(|w| {
                let c = w.block;
                let (ws, os) = fl.phases(p[c], s[c]);
                let dp = p[c] - w.bhp;
                if w.injector {
                    (0.0, w.wi * ws.rho * (ws.lambda + os.lambda) * dp)
                } else {
                    (w.wi * os.rho * os.lambda * dp, w.wi * ws.rho * ws.lambda * dp)
                }
            })
            .collect()
    }

    pub fn run(mut self) -> Result<SimResult> {
        let cfg = self.cfg;
        let g = &cfg.grid;
        let n = g.n_blocks();
        let mut p = vec![cfg.p_init * BAR; n];
        let mut s = vec![cfg.sw_init; n];
        let mut diag = SimDiagnostics { initial_water_mass: self.water_mass(&p, &s), ..Default::default() };
        let mut states = StateSequence {
            nx: g.nx,
            ny: g.ny,
            times: cfg.report_times.clone(),
            pressure: Vec::with_capacity(cfg.n_t()),
            saturation: Vec::with_capacity(cfg.n_t()),
        };
        let mut series: Vec<WellSeries> = cfg
            .wells
            .iter()
            .map(|w| WellSeries { id: w.id.clone(), kind: w.kind, q_o: Vec::new(), q_w: Vec::new() })
            .collect();

        let mut t = 0.0f64;
        let mut dt = cfg.dt_init;
        let mut injected_volume = 0.0;
        let mut p_trial = p.clone();
        let mut s_trial = s.clone();
        for &t_report in &cfg.report_times {
            while t < t_report {
                let remaining = t_report - t;
                // avoid leaving a sliver shorter than dt_min before the report
                let dt_try = if dt >= remaining || remaining - dt < cfg.dt_min { remaining } else { dt };
                p_trial.copy_from_slice(&p);
                s_trial.copy_from_slice(&s);
                match self.newton(&mut p_trial, &mut s_trial, &p, &s, dt_try * DAY) {
                    Step::Converged(its) => {
                        diag.newton_iterations += its;
                        diag.time_steps += 1;
                        // boundary flows over the step, evaluated at the new state
                        for (w, (_, qw)) in self.wells.iter().zip(self.well_mass_rates(&p_trial, &s_trial)) {
                            let m = qw * dt_try * DAY;
                            if m < 0.0 {
                                diag.injected_water_mass -= m;
                            } else {
                                diag.produced_water_mass += m;
                            }
                            if w.injector {
                                injected_volume -= m / cfg.fluids.rho_w_ref;
                            }
                        }
                        std::mem::swap(&mut p, &mut p_trial);
                        std::mem::swap(&mut s, &mut s_trial);
                        t = if dt_try == remaining { t_report } else { t + dt_try };
                        if dt_try >= dt {
                            dt = (1.5 * dt).min(cfg.dt_max);
                        }
                    }
                    Step::Failed(its) => {
                        diag.newton_iterations += its;
                        diag.failed_steps += 1;
                        dt = dt_try / 2.0;
                        log::debug!("Newton failed at t = {t} days, cutting dt to {dt}");
                        if dt < cfg.dt_min {
                            return Err(Error::SimulationDiverged { last_time_days: t });
                        }
                    }
                }
            }
            states.pressure.push(p.iter().map(|v| v / BAR).collect());
            states.saturation.push(s.clone());
            diag.cumulative_injection_volume.push(injected_volume);
            let p_bar = states.pressure.last().expect("just pushed");
            for (ws, spec) in series.iter_mut().zip(&cfg.wells) {
                let c = spec.block(g);
                let (qo, qw) = well_rates_from_state(p_bar[c], s[c], spec, self.model.perm[c], g, &cfg.fluids)?;
                ws.q_o.push(qo);
                ws.q_w.push(qw);
            }
        }
        diag.final_water_mass = self.water_mass(&p, &s);
        let unit = self.pore_volume * cfg.fluids.rho_w_ref;
        diag.water_balance_error = (diag.final_water_mass - diag.initial_water_mass - diag.injected_water_mass
            + diag.produced_water_mass)
            / unit;
        diag.reported_rate_sums =
            series.iter().map(|w| (w.id.clone(), w.q_o.iter().sum(), w.q_w.iter().sum())).collect();
        Ok(SimResult { states, rates: WellRates { times: cfg.report_times.clone(), wells: series }, diagnostics: diag })
    }
}
