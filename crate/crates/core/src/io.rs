//! On-disk formats: GEOM facies maps, RSTF state sequences, NETP
//! checkpoints (see [`crate::autodiff`]), and CSV/JSON tables.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{read_netp, write_netp};
use crate::geomodel::{GeoModel, GridSpec, WellSpec};
use crate::network::{ArchConfig, InputTransform, RecurrentRUNet};
use crate::pipeline::{Normalizer, Surrogate};
use crate::simulator::{StateSequence, WellRates, WellSeries};
use crate::{Error, Result};

pub const GEOM_VERSION: &str = "GEOM v1";
pub const RSTF_MAGIC: &[u8; 5] = b"RSTF1";

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

// GEOM

pub fn write_geom<W: Write>(model: &GeoModel, mut w: W) -> Result<()> {
    let g = &model.grid;
    writeln!(w, "{GEOM_VERSION} {} {} {} {} {} {} {}", g.nx, g.ny, g.dx, g.dy, g.dz, model.a, model.b)?;
    for row in model.facies.chunks(g.nx) {
        let line: Vec<String> = row.iter().map(|f| f.to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn read_geom<R: Read>(mut r: R) -> Result<GeoModel> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut tok = text.split_whitespace();
    let bad = |m: &str| Error::Format(format!("GEOM: {m}"));
    if tok.next() != Some("GEOM") || tok.next() != Some("v1") {
        return Err(bad("missing 'GEOM v1' header"));
    }
    let mut num = |what: &str| -> Result<f64> {
        tok.next().and_then(|t| t.parse::<f64>().ok()).ok_or_else(|| bad(&format!("bad or missing {what}")))
    };
    let nx = num("nx")?;
    let ny = num("ny")?;
    if nx.fract() != 0.0 || ny.fract() != 0.0 || nx < 1.0 || ny < 1.0 {
        return Err(bad("nx and ny must be positive integers"));
    }
    let grid = GridSpec::new(nx as usize, ny as usize, num("dx")?, num("dy")?, num("dz")?)?;
    let (a, b) = (num("a")?, num("b")?);
    let facies = tok
        .map(|t| match t {
            "0" => Ok(0u8),
            "1" => Ok(1u8),
            _ => Err(bad(&format!("facies value '{t}' is not 0 or 1"))),
        })
        .collect::<Result<Vec<u8>>>()?;
    GeoModel::from_facies(grid, facies, a, b)
}

pub fn save_geom(model: &GeoModel, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    write_geom(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_geom(path: &Path) -> Result<GeoModel> {
    read_geom(BufReader::new(File::open(path)?))
}

/// Sorted `*.geom` files in `dir`.
pub fn list_geom(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "geom"))
        .collect();
    out.sort();
    Ok(out)
}

// wells

#[derive(Debug, Serialize, Deserialize)]
struct WellRow {
    id: String,
    i: usize,
    j: usize,
    kind: String,
    bhp_bar: f64,
    facies: u8,
    rw_m: f64,
}

pub fn write_wells_csv<W: Write>(wells: &[WellSpec], w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for well in wells {
        csv.serialize(WellRow {
            id: well.id.clone(),
            i: well.i,
            j: well.j,
            kind: well.kind.as_str().into(),
            bhp_bar: well.bhp,
            facies: well.facies,
            rw_m: well.rw,
        })?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_wells_csv<R: Read>(r: R) -> Result<Vec<WellSpec>> {
    let mut csv = csv::Reader::from_reader(r);
    csv.deserialize::<WellRow>()
        .map(|row| {
            let row = row?;
            Ok(WellSpec {
                kind: row.kind.parse()?,
                id: row.id,
                i: row.i,
                j: row.j,
                bhp: row.bhp_bar,
                facies: row.facies,
                rw: row.rw_m,
            })
        })
        .collect()
}

// RSTF

pub fn write_rstf<W: Write>(s: &StateSequence, mut w: W) -> Result<()> {
    s.validate()?;
    w.write_all(RSTF_MAGIC)?;
    for v in [s.nx, s.ny, s.n_t()] {
        let v = u32::try_from(v).map_err(|_| Error::Format("RSTF dimension exceeds u32".into()))?;
        w.write_all(&v.to_le_bytes())?;
    }
    for v in s.pressure.iter().chain(&s.saturation).flatten() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads an RSTF stream and attaches `times`, which must match its step count.
pub fn read_rstf<R: Read>(mut r: R, times: &[f64]) -> Result<StateSequence> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(|_| Error::Format("RSTF: truncated header".into()))?;
    if &magic != RSTF_MAGIC {
        return Err(Error::Format("RSTF: bad magic".into()));
    }
    let mut u = [0u8; 4];
    let mut dims = [0usize; 3];
    for d in &mut dims {
        r.read_exact(&mut u).map_err(|_| Error::Format("RSTF: truncated header".into()))?;
        *d = u32::from_le_bytes(u) as usize;
    }
    let [nx, ny, n_t] = dims;
    if n_t != times.len() {
        return Err(Error::Format(format!("RSTF has {n_t} steps, expected {}", times.len())));
    }
    let n_b = nx.checked_mul(ny).ok_or_else(|| Error::Format("RSTF: grid too large".into()))?;
    let mut buf = [0u8; 8];
    let mut maps = || -> Result<Vec<Vec<f64>>> {
        (0..n_t)
            .map(|_| {
                (0..n_b)
                    .map(|_| {
                        r.read_exact(&mut buf).map_err(|_| Error::Format("RSTF: truncated data".into()))?;
                        Ok(f64::from_le_bytes(buf))
                    })
                    .collect()
            })
            .collect()
    };
    let pressure = maps()?;
    let saturation = maps()?;
    Ok(StateSequence { nx, ny, times: times.to_vec(), pressure, saturation })
}

pub fn save_rstf(s: &StateSequence, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    write_rstf(s, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_rstf(path: &Path, times: &[f64]) -> Result<StateSequence> {
    read_rstf(BufReader::new(File::open(path)?), times)
}

// rates

#[derive(Debug, Serialize, Deserialize)]
struct RateRow {
    time_days: f64,
    well_id: String,
    qo_m3d: f64,
    qw_m3d: f64,
}

/// Rows ordered by time, then by well in `rates.wells` order.
pub fn write_rates_csv<W: Write>(rates: &WellRates, w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for (t, &time) in rates.times.iter().enumerate() {
        for well in &rates.wells {
            csv.serialize(RateRow {
                time_days: time,
                well_id: well.id.clone(),
                qo_m3d: well.q_o[t],
                qw_m3d: well.q_w[t],
            })?;
        }
    }
    csv.flush()?;
    Ok(())
}

/// Reads a rates CSV; well kinds and order come from `wells`.
pub fn read_rates_csv<R: Read>(r: R, wells: &[WellSpec]) -> Result<WellRates> {
    let mut csv = csv::Reader::from_reader(r);
    let mut times: Vec<f64> = Vec::new();
    let mut series: Vec<WellSeries> =
        wells.iter().map(|w| WellSeries { id: w.id.clone(), kind: w.kind, q_o: vec![], q_w: vec![] }).collect();
    for row in csv.deserialize::<RateRow>() {
        let row = row?;
        if times.last() != Some(&row.time_days) {
            times.push(row.time_days);
        }
        let s = series
            .iter_mut()
            .find(|s| s.id == row.well_id)
            .ok_or_else(|| Error::Format(format!("rates CSV names unknown well {}", row.well_id)))?;
        s.q_o.push(row.qo_m3d);
        s.q_w.push(row.qw_m3d);
    }
    if series.iter().any(|s| s.q_o.len() != times.len()) {
        return Err(Error::Format("rates CSV is missing rows".into()));
    }
    Ok(WellRates { times, wells: series })
}

pub fn save_rates_csv(rates: &WellRates, path: &Path) -> Result<()> {
    write_rates_csv(rates, create(path)?)
}

pub fn load_rates_csv(path: &Path, wells: &[WellSpec]) -> Result<WellRates> {
    read_rates_csv(BufReader::new(File::open(path)?), wells)
}

// JSON

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

// checkpoints

/// Writes `<stem>.netp` and `<stem>.arch.json`.
pub fn save_network(net: &RecurrentRUNet, dir: &Path, stem: &str) -> Result<()> {
    let mut w = create(&dir.join(format!("{stem}.netp")))?;
    write_netp(&net.params, &mut w)?;
    w.flush()?;
    save_json(&net.arch, &dir.join(format!("{stem}.arch.json")))
}

pub fn load_network(dir: &Path, stem: &str) -> Result<RecurrentRUNet> {
    let arch: ArchConfig = load_json(&dir.join(format!("{stem}.arch.json")))?;
    let mut net = RecurrentRUNet::new(arch, 0)?;
    let values = read_netp(BufReader::new(File::open(dir.join(format!("{stem}.netp")))?))?;
    net.params.load_values(values)?;
    Ok(net)
}

/// Everything in a [`Surrogate`] except the networks and the mean maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateMeta {
    pub times: Vec<f64>,
    pub wells: Vec<WellSpec>,
    pub input: InputTransform,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub degenerate: Vec<bool>,
    /// Relative path of the RSTF file holding the mean pressure maps.
    pub mean_maps: String,
}

/// Writes a surrogate directory: both checkpoints plus the shared metadata.
pub fn save_surrogate(s: &Surrogate, dir: &Path) -> Result<()> {
    save_network(&s.pressure, dir, "pressure")?;
    save_network(&s.saturation, dir, "saturation")?;
    save_surrogate_meta(&s.normalizer, s.input, &s.wells, &s.times, s.pressure.arch.nx, s.pressure.arch.ny, dir)
}

/// Writes `surrogate.json` and the mean pressure maps as `normalizer.rstf`
/// (saturation slots zero).
pub fn save_surrogate_meta(
    n: &Normalizer,
    input: InputTransform,
    wells: &[WellSpec],
    times: &[f64],
    nx: usize,
    ny: usize,
    dir: &Path,
) -> Result<()> {
    let seq = StateSequence {
        nx,
        ny,
        times: times.to_vec(),
        pressure: n.mean_maps.clone(),
        saturation: vec![vec![0.0; nx * ny]; times.len()],
    };
    save_rstf(&seq, &dir.join("normalizer.rstf"))?;
    let meta = SurrogateMeta {
        times: times.to_vec(),
        wells: wells.to_vec(),
        input,
        min: n.min.clone(),
        max: n.max.clone(),
        degenerate: n.degenerate.clone(),
        mean_maps: "normalizer.rstf".into(),
    };
    save_json(&meta, &dir.join("surrogate.json"))
}

pub fn load_surrogate(dir: &Path) -> Result<Surrogate> {
    let meta: SurrogateMeta = load_json(&dir.join("surrogate.json"))?;
    let maps = load_rstf(&dir.join(&meta.mean_maps), &meta.times)?;
    let s = Surrogate {
        pressure: load_network(dir, "pressure")?,
        saturation: load_network(dir, "saturation")?,
        normalizer: Normalizer { mean_maps: maps.pressure, min: meta.min, max: meta.max, degenerate: meta.degenerate },
        input: meta.input,
        wells: meta.wells,
        times: meta.times,
    };
    s.validate()?;
    Ok(s)
}

// small tables

pub fn write_loss_csv<W: Write>(history: &[f64], w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["epoch", "loss"])?;
    for (e, l) in history.iter().enumerate() {
        csv.serialize((e, l))?;
    }
    csv.flush()?;
    Ok(())
}

pub fn write_percentiles_csv<W: Write>(curves: &[crate::evaluate::EnsembleResult], w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["quantity", "time_days", "p10", "p50", "p90"])?;
    for c in curves {
        for t in 0..c.times.len() {
            csv.serialize((&c.quantity, c.times[t], c.p10[t], c.p50[t], c.p90[t]))?;
        }
    }
    csv.flush()?;
    Ok(())
}
