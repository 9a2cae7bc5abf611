use rrunet_core::geomodel::{default_perm_b, generate_realizations, ChannelParams, GridSpec, WellKind, WellSpec};
use rrunet_core::network::ArchConfig;
use rrunet_core::pipeline::{build_dataset, Target, TrainConfig, Trainer, TrainingSet};
use rrunet_core::simulator::SimConfig;

fn dataset() -> TrainingSet {
    let grid = GridSpec::new(8, 8, 50.0, 50.0, 10.0).unwrap();
    let w = |id: &str, i, j, kind, bhp| WellSpec { id: id.into(), i, j, kind, bhp, facies: 1, rw: 0.1 };
    let wells = vec![
        w("I1", 1, 1, WellKind::Injector, 340.0),
        w("P1", 6, 6, WellKind::Producer, 310.0),
        w("P2", 6, 1, WellKind::Producer, 310.0),
    ];
    let mut cfg = SimConfig::desk(grid, wells.clone());
    cfg.report_times = vec![100.0, 300.0];
    let models =
        generate_realizations(&grid, &wells, 5, 4, &ChannelParams::for_grid(&grid), 30.0, default_perm_b()).unwrap();
    build_dataset(&models, &cfg).unwrap()
}

/// Mean squared residual at well blocks over the mean elsewhere.
fn well_ratio(tr: &Trainer, set: &TrainingSet) -> f64 {
    let pred = tr.net().predict(&set.inputs).unwrap();
    let (mut well, mut nw, mut field, mut nf) = (0.0, 0, 0.0, 0);
    for (ps, ts) in pred.iter().zip(&set.targets_s) {
        for (p, t) in ps.iter().zip(ts) {
            for (b, (x, y)) in p.iter().zip(t).enumerate() {
                let r = (x - y).powi(2);
                if set.well_blocks.contains(&b) {
                    well += r;
                    nw += 1;
                } else {
                    field += r;
                    nf += 1;
                }
            }
        }
    }
    (well / nw as f64) / (field / nf as f64)
}

fn ratio_trace(set: &TrainingSet, lambda: f64) -> Vec<f64> {
    let mut arch = ArchConfig::new(set.nx, set.ny, 4, set.n_t(), Target::Saturation.activation());
    arch.residual_blocks_enc = 1;
    arch.residual_blocks_dec = 1;
    let cfg = TrainConfig { batch: 2, lambda_well: lambda, seed: 3, ..TrainConfig::default() };
    let mut tr = Trainer::new(set, arch, cfg, Target::Saturation).unwrap();
    let mut trace = Vec::new();
    for e in 1..=100 {
        tr.run_epoch().unwrap();
        if e % 20 == 0 {
            trace.push(well_ratio(&tr, set));
        }
    }
    trace
}

#[test]
fn large_well_weight_shrinks_well_residuals_faster() {
    let set = dataset();
    let plain = ratio_trace(&set, 0.0);
    let heavy = ratio_trace(&set, 1e4);
    assert!(heavy.last() < heavy.first(), "heavy {heavy:?}");
    for (h, p) in heavy.iter().zip(&plain) {
        assert!(h < p, "heavy {heavy:?} plain {plain:?}");
    }
}
