//! Peaceman well model.

use std::f64::consts::PI;

use crate::geomodel::{GridSpec, WellKind, WellSpec};
use crate::simulator::fluids::FluidProps;
use crate::units::{BAR, DAY, MILLIDARCY};
use crate::{Error, Result};

/// Peaceman equivalent radius `0.14 * sqrt(dx^2 + dy^2)` (m).
pub fn equivalent_radius(grid: &GridSpec) -> f64 {
    0.14 * (grid.dx * grid.dx + grid.dy * grid.dy).sqrt()
}

/// Well index `2 pi k dz / ln(r0 / rw)` in m3, for a block permeability in md.
pub fn well_index(k_block_md: f64, grid: &GridSpec, rw: f64) -> Result<f64> {
    if !(k_block_md > 0.0) {
        return Err(Error::invalid("well block permeability must be positive"));
    }
    let r0 = equivalent_radius(grid);
    if !(rw > 0.0) || rw >= r0 {
        return Err(Error::WellRadiusExceedsEquivalent { r_w: rw, r_0: r0 });
    }
    Ok(2.0 * PI * k_block_md * MILLIDARCY * grid.dz / (r0 / rw).ln())
}

/// Surface-volume well rates `(q_o, q_w)` in m3/day for a well-block state.
///
/// Producers report production as positive, injectors report injection as
/// positive with `q_o = 0`. Injector mobility is the well-block total
/// mobility.
pub fn well_rates_from_state(
    p_block_bar: f64,
    sw_block: f64,
    well: &WellSpec,
    k_block_md: f64,
    grid: &GridSpec,
    fluids: &FluidProps,
) -> Result<(f64, f64)> {
    let wi = well_index(k_block_md, grid, well.rw)?;
    let p = p_block_bar * BAR;
    let drawdown = (p_block_bar - well.bhp) * BAR;
    let (water, oil) = fluids.phases(p, sw_block);
    Ok(match well.kind {
        WellKind::Producer => {
            let qo = wi * oil.rho * oil.lambda * drawdown / fluids.rho_o_ref;
            let qw = wi * water.rho * water.lambda * drawdown / fluids.rho_w_ref;
            (qo * DAY, qw * DAY)
        }
        WellKind::Injector => {
            let lt = water.lambda + oil.lambda;
            let qw = wi * water.rho * lt * (-drawdown) / fluids.rho_w_ref;
            (0.0, qw * DAY)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(16, 16, 50.0, 50.0, 10.0).unwrap()
    }

    fn producer() -> WellSpec {
        WellSpec { id: "P1".into(), i: 1, j: 1, kind: WellKind::Producer, bhp: 320.0, facies: 1, rw: 0.1 }
    }

    #[test]
    fn equivalent_radius_value() {
        assert!((equivalent_radius(&grid()) - 0.14 * 5000f64.sqrt()).abs() < 1e-12);
        assert!((equivalent_radius(&grid()) - 9.8995).abs() < 1e-4);
    }

    #[test]
    fn well_index_hand_value() {
        let wi = well_index(2000.0, &grid(), 0.1).unwrap();
        let r0 = 0.14 * 5000f64.sqrt();
        let expected = 2.0 * PI * (2000.0 * 9.869233e-16) * 10.0 / (r0 / 0.1).ln();
        assert!((wi - expected).abs() < 1e-12 * expected);
        // value from an independent script
        assert!((wi - 2.698_989_810e-11).abs() < 1e-19, "{wi}");
        let wi2 = well_index(4000.0, &grid(), 0.1).unwrap();
        assert!((wi2 - 2.0 * wi).abs() < 1e-24);
    }

    #[test]
    fn radius_too_large() {
        let err = well_index(100.0, &grid(), 10.0).unwrap_err();
        assert!(matches!(err, Error::WellRadiusExceedsEquivalent { .. }));
    }

    #[test]
    fn zero_drawdown_gives_zero_rates() {
        let f = FluidProps::default();
        let (qo, qw) = well_rates_from_state(320.0, 0.5, &producer(), 2000.0, &grid(), &f).unwrap();
        assert_eq!((qo, qw), (0.0, 0.0));
    }

    #[test]
    fn immobile_water_is_not_produced() {
        let f = FluidProps::default();
        let (qo, qw) = well_rates_from_state(325.0, f.corey.swc, &producer(), 2000.0, &grid(), &f).unwrap();
        assert!(qo > 0.0);
        assert_eq!(qw, 0.0);
    }

    #[test]
    fn injector_reports_positive_injection() {
        let f = FluidProps::default();
        let mut w = producer();
        w.kind = WellKind::Injector;
        w.bhp = 330.0;
        let (qo, qw) = well_rates_from_state(325.0, 0.3, &w, 2000.0, &grid(), &f).unwrap();
        assert_eq!(qo, 0.0);
        assert!(qw > 0.0);
    }
}
