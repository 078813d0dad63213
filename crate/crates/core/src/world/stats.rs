//! Training-split climatology and normalization statistics.
//!
//! Values are rounded to f32 at computation time so in-memory pipelines
//! and file-loaded pipelines normalize identically.

use super::{Split, WorldBundle, WorldError};
use serde::{Deserialize, Serialize};

/// Per day-of-cycle mean of every periodic variable over the training
/// split, shape [cycle_len, n_periodic, H, W].
#[derive(Clone, Debug, PartialEq)]
pub struct Climatology {
    pub cycle_len: usize,
    pub n_periodic: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub data: Vec<f32>,
    /// Global variable index -> periodic slot (None for non-periodic).
    pub slot_of_var: Vec<Option<usize>>,
}

impl Climatology {
    pub fn at(&self, day: usize, slot: usize) -> &[f32] {
        let plane = self.grid_h * self.grid_w;
        let base = (day * self.n_periodic + slot) * plane;
        &self.data[base..base + plane]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarStats {
    pub mean: f32,
    pub std: f32,
}

/// Mean/std per variable (computed on anomaly fields for periodic
/// variables, raw fields otherwise), plus raw-field stats for periodic
/// variables used when a periodic field is re-normalized as a boundary
/// channel (the SST cycle).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub per_var: Vec<VarStats>,
    pub boundary: Vec<Option<VarStats>>,
    pub var_names: Vec<String>,
}

fn periodic_map(bundle: &WorldBundle) -> (usize, Vec<Option<usize>>) {
    let mut slot_of_var = Vec::new();
    let mut n = 0;
    for s in &bundle.config.spheres {
        for _ in 0..s.n_vars {
            if s.periodic {
                slot_of_var.push(Some(n));
                n += 1;
            } else {
                slot_of_var.push(None);
            }
        }
    }
    (n, slot_of_var)
}

pub fn compute_climatology(bundle: &WorldBundle) -> Result<Climatology, WorldError> {
    let cfg = &bundle.config;
    if cfg.cycles_train < 2 {
        return Err(WorldError::InsufficientCycles(cfg.cycles_train));
    }
    let (n_periodic, slot_of_var) = periodic_map(bundle);
    let plane = bundle.plane();
    let cycle = cfg.cycle_len;
    let mut acc = vec![0.0f64; cycle * n_periodic * plane];
    let train = bundle.split_range(Split::Train);
    let years = cfg.cycles_train as f64;
    for t in train {
        let day = t % cycle;
        for (gv, slot) in slot_of_var.iter().enumerate() {
            if let Some(slot) = slot {
                let f = bundle.field(t, gv);
                let dst = &mut acc[(day * n_periodic + slot) * plane..(day * n_periodic + slot + 1) * plane];
                for (a, v) in dst.iter_mut().zip(f.iter()) {
                    *a += *v as f64;
                }
            }
        }
    }
    Ok(Climatology {
        cycle_len: cycle,
        n_periodic,
        grid_h: cfg.grid_h,
        grid_w: cfg.grid_w,
        data: acc.iter().map(|&v| (v / years) as f32).collect(),
        slot_of_var,
    })
}

/// Sphere index and local variable index of a global variable.
pub fn sphere_of_var(bundle: &WorldBundle, gv: usize) -> (usize, usize) {
    let mut off = 0;
    for (si, s) in bundle.config.spheres.iter().enumerate() {
        if gv < off + s.n_vars {
            return (si, gv - off);
        }
        off += s.n_vars;
    }
    unreachable!("global variable out of range")
}

pub fn compute_norm_stats(bundle: &WorldBundle, clim: &Climatology) -> Result<NormStats, WorldError> {
    let cfg = &bundle.config;
    let plane = bundle.plane();
    let nv = cfg.n_vars_total();
    let mut per_var = Vec::with_capacity(nv);
    let mut boundary = Vec::with_capacity(nv);
    let mut var_names = Vec::with_capacity(nv);
    let train = bundle.split_range(Split::Train);

    for gv in 0..nv {
        let (si, local) = sphere_of_var(bundle, gv);
        let name = format!("{}{}", cfg.spheres[si].name, local);
        let mask = &bundle.masks[si];
        let slot = clim.slot_of_var[gv];

        let mut sum = 0.0f64;
        let mut sumsq = 0.0f64;
        let mut n = 0u64;
        let mut bsum = 0.0f64;
        let mut bsumsq = 0.0f64;
        for t in train.clone() {
            let f = bundle.field(t, gv);
            let day = t % cfg.cycle_len;
            let c = slot.map(|s| clim.at(day, s));
            for p in 0..plane {
                if !mask[p] {
                    continue;
                }
                let raw = f[p] as f64;
                let v = match c {
                    Some(c) => raw - c[p] as f64,
                    None => raw,
                };
                sum += v;
                sumsq += v * v;
                bsum += raw;
                bsumsq += raw * raw;
                n += 1;
            }
        }
        let nf = n.max(1) as f64;
        let mean = sum / nf;
        let var = (sumsq / nf - mean * mean).max(0.0);
        let std = var.sqrt();
        if std < 1e-9 {
            return Err(WorldError::ZeroVariance(name));
        }
        per_var.push(VarStats {
            mean: mean as f32,
            std: std as f32,
        });
        if slot.is_some() {
            let bmean = bsum / nf;
            let bvar = (bsumsq / nf - bmean * bmean).max(0.0);
            let bstd = bvar.sqrt();
            if bstd < 1e-9 {
                return Err(WorldError::ZeroVariance(format!("{name} (raw)")));
            }
            boundary.push(Some(VarStats {
                mean: bmean as f32,
                std: bstd as f32,
            }));
        } else {
            boundary.push(None);
        }
        var_names.push(name);
    }
    Ok(NormStats {
        per_var,
        boundary,
        var_names,
    })
}

/// Normalized (model-space) field of one global variable at an absolute
/// step: anomaly w.r.t. climatology for periodic variables, then zero mean
/// unit variance, then zero fill of invalid cells.
pub fn normalized_field(bundle: &WorldBundle, clim: &Climatology, stats: &NormStats, step: usize, gv: usize) -> Vec<f32> {
    let (si, _) = sphere_of_var(bundle, gv);
    let mask = &bundle.masks[si];
    let f = bundle.field(step, gv);
    let day = step % bundle.config.cycle_len;
    let s = &stats.per_var[gv];
    let c = clim.slot_of_var[gv].map(|slot| clim.at(day, slot));
    f.iter()
        .enumerate()
        .map(|(p, &raw)| {
            if !mask[p] {
                return 0.0f32;
            }
            let v = match c {
                Some(c) => raw as f64 - c[p] as f64,
                None => raw as f64,
            };
            ((v - s.mean as f64) / s.std as f64) as f32
        })
        .collect()
}
