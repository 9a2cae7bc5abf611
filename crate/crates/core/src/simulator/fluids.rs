//! Fluid and rock-fluid properties.

use serde::{Deserialize, Serialize};

use crate::units::{BAR, CENTIPOISE};
use crate::{Error, Result};

/// Corey relative permeability parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corey {
    pub swc: f64,
    pub sor: f64,
    pub nw: f64,
    pub no: f64,
    pub krw_max: f64,
    pub kro_max: f64,
}

impl Default for Corey {
    fn default() -> Self {
        Self { swc: 0.1, sor: 0.2, nw: 2.0, no: 2.0, krw_max: 0.7, kro_max: 0.9 }
    }
}

/// Relative permeabilities and their saturation derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelPerm {
    pub krw: f64,
    pub kro: f64,
    pub dkrw: f64,
    pub dkro: f64,
}

impl Corey {
    pub fn validate(&self) -> Result<()> {
        if !(self.swc >= 0.0 && self.sor >= 0.0 && self.swc + self.sor < 1.0) {
            return Err(Error::invalid("Corey endpoints must satisfy 0 <= swc + sor < 1"));
        }
        if !(self.nw >= 1.0 && self.no >= 1.0) {
            return Err(Error::invalid("Corey exponents must be >= 1"));
        }
        if !(self.krw_max > 0.0 && self.kro_max > 0.0) {
            return Err(Error::invalid("Corey endpoint permeabilities must be positive"));
        }
        Ok(())
    }

    pub fn eval(&self, sw: f64) -> RelPerm {
        let span = 1.0 - self.swc - self.sor;
        let raw = (sw - self.swc) / span;
        let (s, ds) = if raw <= 0.0 {
            (0.0, 0.0)
        } else if raw >= 1.0 {
            (1.0, 0.0)
        } else {
            (raw, 1.0 / span)
        };
        let krw = self.krw_max * s.powf(self.nw);
        let kro = self.kro_max * (1.0 - s).powf(self.no);
        let dkrw = if ds == 0.0 { 0.0 } else { self.krw_max * self.nw * s.powf(self.nw - 1.0) * ds };
        let dkro = if ds == 0.0 { 0.0 } else { -self.kro_max * self.no * (1.0 - s).powf(self.no - 1.0) * ds };
        RelPerm { krw, kro, dkrw, dkro }
    }
}

/// `(k_rw, k_ro)` for a water saturation.
pub fn relperm(sw: f64, corey: &Corey) -> (f64, f64) {
    let r = corey.eval(sw);
    (r.krw, r.kro)
}

/// Fluid properties in interface units (cp, kg/m3, 1/bar, bar).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidProps {
    pub mu_w: f64,
    pub mu_o_ref: f64,
    pub c_mu_o: f64,
    pub rho_w_ref: f64,
    pub rho_o_ref: f64,
    pub c_w: f64,
    pub c_o: f64,
    pub p_ref: f64,
    pub corey: Corey,
}

impl Default for FluidProps {
    fn default() -> Self {
        Self {
            mu_w: 0.31,
            mu_o_ref: 0.29,
            c_mu_o: 5e-4,
            rho_w_ref: 1000.0,
            rho_o_ref: 850.0,
            c_w: 4e-5,
            c_o: 1e-4,
            p_ref: 325.0,
            corey: Corey::default(),
        }
    }
}

/// Phase mobility `lambda` and mass mobility `rho * lambda` with derivatives,
/// evaluated at SI pressure.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct PhaseState {
    pub rho: f64,
    pub drho_dp: f64,
    pub lambda: f64,
    pub dlambda_dp: f64,
    pub dlambda_ds: f64,
}

impl PhaseState {
    /// `rho * lambda` and its partials.
    pub fn mass_mobility(&self) -> (f64, f64, f64) {
        (self.rho * self.lambda, self.drho_dp * self.lambda + self.rho * self.dlambda_dp, self.rho * self.dlambda_ds)
    }
}

impl FluidProps {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_w > 0.0 && self.mu_o_ref > 0.0) {
            return Err(Error::invalid("viscosities must be positive"));
        }
        if !(self.rho_w_ref > 0.0 && self.rho_o_ref > 0.0) {
            return Err(Error::invalid("densities must be positive"));
        }
        if !(self.c_w >= 0.0 && self.c_o >= 0.0) {
            return Err(Error::invalid("compressibilities must be non-negative"));
        }
        self.corey.validate()
    }

    /// Oil viscosity (cp) at pressure `p_bar`.
    pub fn mu_o(&self, p_bar: f64) -> f64 {
        self.mu_o_ref * (1.0 + self.c_mu_o * (p_bar - self.p_ref))
    }

    /// Water and oil density (kg/m3) at pressure `p_bar`.
    pub fn densities(&self, p_bar: f64) -> (f64, f64) {
        (
            self.rho_w_ref * (self.c_w * (p_bar - self.p_ref)).exp(),
            self.rho_o_ref * (self.c_o * (p_bar - self.p_ref)).exp(),
        )
    }

    /// Water and oil phase states at SI pressure `p` (Pa).
    pub(crate) fn phases(&self, p: f64, sw: f64) -> (PhaseState, PhaseState) {
        let rp = self.corey.eval(sw);
        let dp = p / BAR - self.p_ref;
        let cw = self.c_w / BAR;
        let co = self.c_o / BAR;
        let rho_w = self.rho_w_ref * (self.c_w * dp).exp();
        let rho_o = self.rho_o_ref * (self.c_o * dp).exp();
        let mu_w = self.mu_w * CENTIPOISE;
        let mu_o = self.mu_o_ref * CENTIPOISE * (1.0 + self.c_mu_o * dp);
        let dmu_o = self.mu_o_ref * CENTIPOISE * self.c_mu_o / BAR;
        let water = PhaseState {
            rho: rho_w,
            drho_dp: cw * rho_w,
            lambda: rp.krw / mu_w,
            dlambda_dp: 0.0,
            dlambda_ds: rp.dkrw / mu_w,
        };
        let oil = PhaseState {
            rho: rho_o,
            drho_dp: co * rho_o,
            lambda: rp.kro / mu_o,
            dlambda_dp: -rp.kro * dmu_o / (mu_o * mu_o),
            dlambda_ds: rp.dkro / mu_o,
        };
        (water, oil)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corey_endpoints() {
        let c = Corey::default();
        let (krw, kro) = relperm(c.swc, &c);
        assert_eq!(krw, 0.0);
        assert_eq!(kro, c.kro_max);
        let (krw, kro) = relperm(1.0 - c.sor, &c);
        assert!((krw - c.krw_max).abs() < 1e-15);
        assert!(kro.abs() < 1e-15);
    }

    #[test]
    fn corey_midpoint_hand_value() {
        let c = Corey { swc: 0.1, sor: 0.2, nw: 2.0, krw_max: 0.7, ..Corey::default() };
        let (krw, _) = relperm(0.45, &c);
        assert!((krw - 0.175).abs() < 1e-12);
    }

    #[test]
    fn phase_derivatives_match_differences() {
        let f = FluidProps::default();
        let (p, s) = (326.0 * BAR, 0.4);
        let h = 1e3;
        let (w0, o0) = f.phases(p, s);
        let (wp, op) = f.phases(p + h, s);
        let (wm, om) = f.phases(p - h, s);
        let fd = |a: f64, b: f64| (a - b) / (2.0 * h);
        let (_, dw, _) = w0.mass_mobility();
        let (_, d_o, _) = o0.mass_mobility();
        assert!((dw - fd(wp.mass_mobility().0, wm.mass_mobility().0)).abs() < 1e-6 * dw.abs());
        assert!((d_o - fd(op.mass_mobility().0, om.mass_mobility().0)).abs() < 1e-6 * d_o.abs());
        let hs = 1e-6;
        let (ws, os) = f.phases(p, s + hs);
        let (wsm, osm) = f.phases(p, s - hs);
        let fds = (ws.lambda - wsm.lambda) / (2.0 * hs);
        assert!((w0.dlambda_ds - fds).abs() < 1e-6 * fds.abs());
        let fds = (os.lambda - osm.lambda) / (2.0 * hs);
        assert!((o0.dlambda_ds - fds).abs() < 1e-6 * fds.abs());
    }
}
