//! Dataset file set: `world.json` (config + stats + climatology manifest),
//! `clim.bin`, `stats.bin`, and per-split `train.bin`/`val.bin`/`test.bin`
//! (time-major, then variable, lat, lon; little-endian f32).

use super::stats::{Climatology, NormStats, VarStats};
use super::{Split, WorldBundle, WorldConfig, WorldError};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct WorldManifest {
    config: WorldConfig,
    latitudes_deg: Vec<f64>,
    /// Per sphere, row-major H*W validity (1 = valid).
    masks: Vec<Vec<u8>>,
    var_names: Vec<String>,
    n_periodic: usize,
    /// Global variable index -> periodic slot or -1.
    periodic_slots: Vec<i64>,
    split_steps: [usize; 3],
}

fn write_f32s(path: &Path, values: impl Iterator<Item = f32>) -> Result<(), WorldError> {
    let mut buf = Vec::new();
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

fn read_f32s(path: &Path) -> Result<Vec<f32>, WorldError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 4 != 0 {
        return Err(WorldError::Format(format!("{}: length not a multiple of 4", path.display())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub fn write_world(bundle: &WorldBundle, clim: &Climatology, stats: &NormStats, dir: &Path) -> Result<(), WorldError> {
    fs::create_dir_all(dir)?;
    let cfg = &bundle.config;
    let manifest = WorldManifest {
        config: cfg.clone(),
        latitudes_deg: cfg.latitudes_deg(),
        masks: bundle
            .masks
            .iter()
            .map(|m| m.iter().map(|&b| b as u8).collect())
            .collect(),
        var_names: stats.var_names.clone(),
        n_periodic: clim.n_periodic,
        periodic_slots: clim
            .slot_of_var
            .iter()
            .map(|s| s.map_or(-1, |v| v as i64))
            .collect(),
        split_steps: [
            cfg.cycles_train * cfg.cycle_len,
            cfg.cycles_val * cfg.cycle_len,
            cfg.cycles_test * cfg.cycle_len,
        ],
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| WorldError::Format(e.to_string()))?;
    fs::write(dir.join("world.json"), json)?;

    write_f32s(&dir.join("clim.bin"), clim.data.iter().copied())?;

    let mut stat_vals: Vec<f32> = Vec::new();
    for s in &stats.per_var {
        stat_vals.push(s.mean);
        stat_vals.push(s.std);
    }
    for b in stats.boundary.iter().flatten() {
        stat_vals.push(b.mean);
        stat_vals.push(b.std);
    }
    write_f32s(&dir.join("stats.bin"), stat_vals.into_iter())?;

    let nv = cfg.n_vars_total();
    let plane = bundle.plane();
    for (split, name) in [(Split::Train, "train.bin"), (Split::Val, "val.bin"), (Split::Test, "test.bin")] {
        let r = bundle.split_range(split);
        let lo = r.start * nv * plane;
        let hi = r.end * nv * plane;
        write_f32s(&dir.join(name), bundle.fields[lo..hi].iter().copied())?;
    }
    Ok(())
}

pub fn load_world(dir: &Path) -> Result<(WorldBundle, Climatology, NormStats), WorldError> {
    let manifest: WorldManifest = serde_json::from_slice(&fs::read(dir.join("world.json"))?)
        .map_err(|e| WorldError::Format(format!("world.json: {e}")))?;
    let cfg = manifest.config.clone();
    let plane = cfg.grid_h * cfg.grid_w;
    let nv = cfg.n_vars_total();

    let mut fields = Vec::new();
    for (name, steps) in [("train.bin", manifest.split_steps[0]), ("val.bin", manifest.split_steps[1]), ("test.bin", manifest.split_steps[2])] {
        let vals = read_f32s(&dir.join(name))?;
        if vals.len() != steps * nv * plane {
            return Err(WorldError::Format(format!(
                "{name}: expected {} values, found {}",
                steps * nv * plane,
                vals.len()
            )));
        }
        fields.extend(vals);
    }

    let masks: Vec<Vec<bool>> = manifest.masks.iter().map(|m| m.iter().map(|&b| b != 0).collect()).collect();
    if masks.len() != cfg.spheres.len() || masks.iter().any(|m| m.len() != plane) {
        return Err(WorldError::Format("mask table does not match config".into()));
    }

    let clim_data = read_f32s(&dir.join("clim.bin"))?;
    if clim_data.len() != cfg.cycle_len * manifest.n_periodic * plane {
        return Err(WorldError::Format("clim.bin size mismatch".into()));
    }
    let clim = Climatology {
        cycle_len: cfg.cycle_len,
        n_periodic: manifest.n_periodic,
        grid_h: cfg.grid_h,
        grid_w: cfg.grid_w,
        data: clim_data,
        slot_of_var: manifest
            .periodic_slots
            .iter()
            .map(|&s| if s < 0 { None } else { Some(s as usize) })
            .collect(),
    };

    let stat_vals = read_f32s(&dir.join("stats.bin"))?;
    if stat_vals.len() != 2 * nv + 2 * manifest.n_periodic {
        return Err(WorldError::Format("stats.bin size mismatch".into()));
    }
    let per_var: Vec<VarStats> = (0..nv)
        .map(|i| VarStats {
            mean: stat_vals[2 * i],
            std: stat_vals[2 * i + 1],
        })
        .collect();
    let mut boundary = Vec::with_capacity(nv);
    let mut b_idx = 0;
    for slot in &clim.slot_of_var {
        if slot.is_some() {
            boundary.push(Some(VarStats {
                mean: stat_vals[2 * nv + 2 * b_idx],
                std: stat_vals[2 * nv + 2 * b_idx + 1],
            }));
            b_idx += 1;
        } else {
            boundary.push(None);
        }
    }

    let stats = NormStats {
        per_var,
        boundary,
        var_names: manifest.var_names,
    };
    Ok((
        WorldBundle {
            config: cfg,
            fields,
            masks,
        },
        clim,
        stats,
    ))
}
