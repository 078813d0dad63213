//! Synthetic coupled multi-sphere world: the ground-truth generator.
//!
//! Each sphere integrates a 2-D advection-diffusion-reaction field stack on
//! a lat-lon grid: semi-Lagrangian advection by a prescribed rotating
//! velocity field, explicit diffusion, latitude-scaled seasonal forcing,
//! linear damping, and cross-sphere relaxation toward the partner sphere's
//! surface field. Masked cells are held at the fill value. Everything is a
//! pure function of the config.

mod files;
mod stats;

pub use files::{load_world, write_world};
pub use stats::{
    compute_climatology, compute_norm_stats, normalized_field, sphere_of_var, Climatology, NormStats, VarStats,
};

use crate::rng::SeedStream;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("explicit diffusion unstable at dt={dt}: reduce to dt <= {suggested_dt}")]
    CflViolation { dt: f64, suggested_dt: f64 },
    #[error("variable `{0}` has (near-)zero variance over the training split")]
    ZeroVariance(String),
    #[error("training split spans {0} cycles; climatology needs at least 2")]
    InsufficientCycles(usize),
    #[error("world i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("world format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, WorldError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    /// All cells valid.
    None,
    /// Valid everywhere except the synthetic continents (ocean-like).
    Ocean,
    /// Valid only on the synthetic continents (land-like).
    Land,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SphereConfig {
    pub name: String,
    pub n_vars: usize,
    /// Leading variables exposed as boundary sources.
    pub n_surface: usize,
    /// Periodic spheres get climatology/anomaly treatment for all vars.
    pub periodic: bool,
    pub advect_scale: f64,
    pub jet_scale: f64,
    pub diffusivity: f64,
    pub seasonal_amp: f64,
    pub damping: f64,
    pub mask: MaskKind,
    /// Salt mixed into this sphere's initial-condition stream; lets tests
    /// perturb one sphere's IC while holding the others fixed.
    #[serde(default)]
    pub ic_salt: u64,
}

/// Relaxation strengths: `kappa_ab` is sphere A's influence on B (enters
/// B's tendency), `kappa_ba` the reverse, `kappa_al` A's influence on the
/// optional land-analog sphere.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub kappa_ab: f64,
    pub kappa_ba: f64,
    pub kappa_al: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorldConfig {
    pub grid_h: usize,
    pub grid_w: usize,
    pub cycle_len: usize,
    pub cycles_train: usize,
    pub cycles_val: usize,
    pub cycles_test: usize,
    pub spheres: Vec<SphereConfig>,
    pub coupling: CouplingConfig,
    pub seed: u64,
    pub dt: f64,
}

impl WorldConfig {
    /// Two-sphere default: an 8-variable atmosphere-analog (4 surface) and
    /// a 12-variable periodic, continent-masked ocean-analog on an 18x36
    /// grid with a 36-step cycle.
    pub fn desk_default() -> Self {
        Self {
            grid_h: 18,
            grid_w: 36,
            cycle_len: 36,
            cycles_train: 20,
            cycles_val: 2,
            // Nine test cycles (324 steps) so 20 initial conditions still
            // have ground truth over a 300-step horizon.
            cycles_test: 9,
            spheres: vec![
                SphereConfig {
                    name: "A".into(),
                    n_vars: 8,
                    n_surface: 4,
                    periodic: false,
                    advect_scale: 0.9,
                    jet_scale: 0.5,
                    diffusivity: 0.04,
                    seasonal_amp: 0.12,
                    damping: 0.04,
                    mask: MaskKind::None,
                },
                SphereConfig {
                    name: "B".into(),
                    n_vars: 12,
                    n_surface: 1,
                    periodic: true,
                    advect_scale: 0.18,
                    jet_scale: 0.08,
                    diffusivity: 0.03,
                    seasonal_amp: 0.2,
                    damping: 0.03,
                    mask: MaskKind::Ocean,
                },
            ],
            coupling: CouplingConfig {
                kappa_ab: 0.25,
                kappa_ba: 0.25,
                kappa_al: 0.3,
            },
            seed: 42,
            dt: 1.0,
        }
    }

    /// Three-sphere variant: the default plus a 4-variable land-analog.
    pub fn desk_three_sphere() -> Self {
        let mut cfg = Self::desk_default();
        cfg.spheres.push(SphereConfig {
            name: "L".into(),
            n_vars: 4,
            n_surface: 0,
            periodic: false,
            advect_scale: 0.0,
            jet_scale: 0.0,
            diffusivity: 0.05,
            seasonal_amp: 0.35,
            damping: 0.05,
            mask: MaskKind::Land,
        });
        cfg
    }

    pub fn total_cycles(&self) -> usize {
        self.cycles_train + self.cycles_val + self.cycles_test
    }

    pub fn total_steps(&self) -> usize {
        self.total_cycles() * self.cycle_len
    }

    pub fn n_vars_total(&self) -> usize {
        self.spheres.iter().map(|s| s.n_vars).sum()
    }

    /// Global variable index of (sphere, var).
    pub fn var_offset(&self, sphere: usize) -> usize {
        self.spheres[..sphere].iter().map(|s| s.n_vars).sum()
    }

    pub fn latitudes_deg(&self) -> Vec<f64> {
        let dlat = 180.0 / self.grid_h as f64;
        (0..self.grid_h).map(|i| -90.0 + (i as f64 + 0.5) * dlat).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_h < 2 || self.grid_w < 2 {
            return Err(WorldError::InvalidConfig("grid too small".into()));
        }
        if self.cycle_len == 0 {
            return Err(WorldError::InvalidConfig("cycle length must be >= 1".into()));
        }
        if self.spheres.is_empty() {
            return Err(WorldError::InvalidConfig("need at least one sphere".into()));
        }
        if self.coupling.kappa_ab < 0.0 || self.coupling.kappa_ba < 0.0 || self.coupling.kappa_al < 0.0 {
            return Err(WorldError::InvalidConfig("coupling strengths must be >= 0".into()));
        }
        for s in &self.spheres {
            if s.n_vars == 0 || s.n_surface > s.n_vars {
                return Err(WorldError::InvalidConfig(format!("sphere {}: bad variable counts", s.name)));
            }
        }
        // Explicit Euler stability for the 5-point diffusion stencil plus
        // the linear relaxation terms.
        let max_nu = self.spheres.iter().map(|s| s.diffusivity).fold(0.0, f64::max);
        let max_lin = self
            .spheres
            .iter()
            .map(|s| s.damping)
            .fold(0.0, f64::max)
            .max(self.coupling.kappa_ab)
            .max(self.coupling.kappa_ba)
            .max(self.coupling.kappa_al);
        let limit = 0.9 / (4.0 * max_nu + max_lin).max(1e-12);
        if self.dt > limit {
            return Err(WorldError::CflViolation {
                dt: self.dt,
                suggested_dt: limit,
            });
        }
        Ok(())
    }
}

/// Per-cell validity for one sphere (row-major H x W, true = valid).
pub fn sphere_mask(cfg: &WorldConfig, sphere: usize) -> Vec<bool> {
    let kind = cfg.spheres[sphere].mask;
    let (h, w) = (cfg.grid_h, cfg.grid_w);
    let lats = cfg.latitudes_deg();
    let mut mask = vec![true; h * w];
    if kind == MaskKind::None {
        return mask;
    }
    for i in 0..h {
        for j in 0..w {
            let lat = lats[i];
            let lon = -180.0 + (j as f64 + 0.5) * 360.0 / w as f64;
            let continent = (lat >= -15.0 && lat <= 45.0 && lon >= -60.0 && lon <= 10.0)
                || (lat >= 10.0 && lat <= 60.0 && lon >= 60.0 && lon <= 140.0);
            mask[i * w + j] = match kind {
                MaskKind::None => true,
                MaskKind::Ocean => !continent,
                MaskKind::Land => continent,
            };
        }
    }
    mask
}

/// Zero invalid cells (normalized-space fill before model ingestion).
pub fn apply_mask_fill<S: crate::scalar::Scalar>(field: &mut [S], mask: &[bool]) {
    debug_assert_eq!(field.len() % mask.len(), 0);
    let plane = mask.len();
    for c in 0..field.len() / plane {
        let sl = &mut field[c * plane..(c + 1) * plane];
        for (v, m) in sl.iter_mut().zip(mask.iter()) {
            if !m {
                *v = S::ZERO;
            }
        }
    }
}

/// Prescribed velocity (u, v) in cells per step for one sphere:
/// solid-body zonal rotation scaled by cos(lat), twin mid-latitude jets,
/// and a weak wavenumber-1 meridional overturning.
fn velocity_field(cfg: &WorldConfig, sphere: &SphereConfig) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (cfg.grid_h, cfg.grid_w);
    let lats = cfg.latitudes_deg();
    let mut u = vec![0.0; h * w];
    let mut v = vec![0.0; h * w];
    for i in 0..h {
        let phi = lats[i];
        let jet = sphere.jet_scale
            * ((-((phi - 45.0) / 15.0) * ((phi - 45.0) / 15.0)).exp()
                + (-((phi + 45.0) / 15.0) * ((phi + 45.0) / 15.0)).exp());
        let zonal = sphere.advect_scale * (phi.to_radians()).cos() + jet;
        for j in 0..w {
            let lon_phase = 2.0 * std::f64::consts::PI * j as f64 / w as f64;
            u[i * w + j] = zonal;
            v[i * w + j] = 0.3 * sphere.advect_scale * lon_phase.sin() * (phi.to_radians()).cos();
        }
    }
    (u, v)
}

/// Bilinear sample with longitude wraparound and latitude clamping,
/// f64 grid coordinates in cell units.
fn sample_bilinear(field: &[f64], h: usize, w: usize, row: f64, col: f64) -> f64 {
    let r = row.clamp(0.0, h as f64 - 1.0);
    let rf = r.floor();
    let i0 = rf as usize;
    let i1 = (i0 + 1).min(h - 1);
    let fr = r - rf;
    let cf = col.floor();
    let j0 = (cf as isize).rem_euclid(w as isize) as usize;
    let j1 = (cf as isize + 1).rem_euclid(w as isize) as usize;
    let fc = col - cf;
    (1.0 - fr) * ((1.0 - fc) * field[i0 * w + j0] + fc * field[i0 * w + j1])
        + fr * ((1.0 - fc) * field[i1 * w + j0] + fc * field[i1 * w + j1])
}

/// In-memory generated world: physical fields for every step, plus masks.
#[derive(Clone, Debug)]
pub struct WorldBundle {
    pub config: WorldConfig,
    /// [time][global var][H][W], physical units.
    pub fields: Vec<f32>,
    pub masks: Vec<Vec<bool>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl WorldBundle {
    pub fn plane(&self) -> usize {
        self.config.grid_h * self.config.grid_w
    }

    pub fn split_range(&self, split: Split) -> std::ops::Range<usize> {
        let c = &self.config;
        let (a, b, t) = (c.cycles_train, c.cycles_val, c.cycles_test);
        match split {
            Split::Train => 0..a * c.cycle_len,
            Split::Val => a * c.cycle_len..(a + b) * c.cycle_len,
            Split::Test => (a + b) * c.cycle_len..(a + b + t) * c.cycle_len,
        }
    }

    /// Physical field of one global variable at an absolute step.
    pub fn field(&self, step: usize, global_var: usize) -> &[f32] {
        let plane = self.plane();
        let nv = self.config.n_vars_total();
        let base = (step * nv + global_var) * plane;
        &self.fields[base..base + plane]
    }

    pub fn day_of_cycle(&self, step: usize) -> usize {
        step % self.config.cycle_len
    }
}

/// Smooth random initial condition: a few low-wavenumber modes.
fn initial_field(cfg: &WorldConfig, rng: &mut SeedStream) -> Vec<f64> {
    let (h, w) = (cfg.grid_h, cfg.grid_w);
    let mut q = vec![0.0; h * w];
    for m in 1..=3usize {
        let amp = rng.uniform_in(0.3, 1.0) / m as f64;
        let ph_lon = rng.uniform_in(0.0, 2.0 * std::f64::consts::PI);
        let ph_lat = rng.uniform_in(0.0, std::f64::consts::PI);
        for i in 0..h {
            let y = (i as f64 + 0.5) / h as f64;
            for j in 0..w {
                let x = j as f64 / w as f64;
                q[i * w + j] += amp
                    * (2.0 * std::f64::consts::PI * m as f64 * x + ph_lon).cos()
                    * (std::f64::consts::PI * m as f64 * y + ph_lat).sin();
            }
        }
    }
    q
}

/// Integrate the coupled world and return every step's physical state.
pub fn generate_world(cfg: &WorldConfig) -> Result<WorldBundle> {
    cfg.validate()?;
    let (h, w) = (cfg.grid_h, cfg.grid_w);
    let plane = h * w;
    let n_spheres = cfg.spheres.len();
    let lats = cfg.latitudes_deg();
    let masks: Vec<Vec<bool>> = (0..n_spheres).map(|s| sphere_mask(cfg, s)).collect();
    let velocities: Vec<(Vec<f64>, Vec<f64>)> = cfg.spheres.iter().map(|s| velocity_field(cfg, s)).collect();

    // State per sphere: [n_vars][plane].
    let mut state: Vec<Vec<f64>> = Vec::new();
    for (si, s) in cfg.spheres.iter().enumerate() {
        let mut rng = SeedStream::new(cfg.seed).derive(&format!("world-ic:{}", s.name));
        let mut fields = Vec::with_capacity(s.n_vars * plane);
        for _ in 0..s.n_vars {
            fields.extend(initial_field(cfg, &mut rng));
        }
        for v in 0..s.n_vars {
            apply_mask_fill_f64(&mut fields[v * plane..(v + 1) * plane], &masks[si]);
        }
        state.push(fields);
    }

    let total = cfg.total_steps();
    let nv_total = cfg.n_vars_total();
    let mut out = Vec::with_capacity(total * nv_total * plane);
    let mut lap = vec![0.0; plane];
    let mut adv = vec![0.0; plane];

    for t in 0..total {
        // Record first so step 0 is the initial condition.
        for sph in &state {
            out.extend(sph.iter().map(|&v| v as f32));
        }
        let day = t % cfg.cycle_len;

        // Coupling drive fields from the time-t states.
        let drives: Vec<Option<(Vec<f64>, usize)>> = (0..n_spheres)
            .map(|si| match si {
                // A is driven by B's first surface variable.
                0 => {
                    if n_spheres > 1 {
                        Some((state[1][..plane].to_vec(), 1))
                    } else {
                        None
                    }
                }
                // B is driven by the mean of A's surface variables.
                1 => {
                    let ns = cfg.spheres[0].n_surface.max(1);
                    let mut d = vec![0.0; plane];
                    for v in 0..ns {
                        for (p, dv) in d.iter_mut().enumerate() {
                            *dv += state[0][v * plane + p];
                        }
                    }
                    for dv in d.iter_mut() {
                        *dv /= ns as f64;
                    }
                    Some((d, 0))
                }
                // The land-analog is driven by A's first three variables.
                2 => {
                    let ns = 3.min(cfg.spheres[0].n_vars);
                    let mut d = vec![0.0; plane];
                    for v in 0..ns {
                        for (p, dv) in d.iter_mut().enumerate() {
                            *dv += state[0][v * plane + p];
                        }
                    }
                    for dv in d.iter_mut() {
                        *dv /= ns as f64;
                    }
                    Some((d, 0))
                }
                _ => None,
            })
            .collect();

        let kappas = [cfg.coupling.kappa_ba, cfg.coupling.kappa_ab, cfg.coupling.kappa_al];

        for si in 0..n_spheres {
            let s = &cfg.spheres[si];
            let (u, v) = &velocities[si];
            let season_phase = 2.0 * std::f64::consts::PI / cfg.cycle_len as f64;
            for var in 0..s.n_vars {
                let q: Vec<f64> = state[si][var * plane..(var + 1) * plane].to_vec();
                // Deeper levels advect more slowly.
                let depth_scale = 1.0 / (1.0 + 0.12 * var as f64);
                for i in 0..h {
                    for j in 0..w {
                        let p = i * w + j;
                        adv[p] = sample_bilinear(
                            &q,
                            h,
                            w,
                            i as f64 - v[p] * depth_scale * cfg.dt,
                            j as f64 - u[p] * depth_scale * cfg.dt,
                        );
                    }
                }
                laplacian(&adv, h, w, &mut lap);
                let offset = var as f64 * cfg.cycle_len as f64 / s.n_vars as f64;
                let target = &mut state[si][var * plane..(var + 1) * plane];
                for i in 0..h {
                    let seasonal = s.seasonal_amp
                        * (lats[i].to_radians()).sin()
                        * (season_phase * (day as f64 + offset)).sin();
                    for j in 0..w {
                        let p = i * w + j;
                        let mut tend = s.diffusivity * lap[p] + seasonal - s.damping * adv[p];
                        if let Some((drive, src)) = &drives[si] {
                            if masks[*src][p] {
                                tend += kappas[si] * (drive[p] - adv[p]);
                            }
                        }
                        target[p] = adv[p] + cfg.dt * tend;
                    }
                }
            }
            for var in 0..s.n_vars {
                apply_mask_fill_f64(&mut state[si][var * plane..(var + 1) * plane], &masks[si]);
            }
        }
    }

    Ok(WorldBundle {
        config: cfg.clone(),
        fields: out,
        masks,
    })
}

fn apply_mask_fill_f64(field: &mut [f64], mask: &[bool]) {
    for (v, m) in field.iter_mut().zip(mask.iter()) {
        if !m {
            *v = 0.0;
        }
    }
}

/// 5-point Laplacian: circular in longitude, zero-flux (replicate) at the
/// latitude borders, so pure diffusion conserves the global sum.
fn laplacian(q: &[f64], h: usize, w: usize, out: &mut [f64]) {
    for i in 0..h {
        let up = if i == 0 { 0 } else { i - 1 };
        let dn = if i + 1 == h { h - 1 } else { i + 1 };
        for j in 0..w {
            let l = (j + w - 1) % w;
            let r = (j + 1) % w;
            out[i * w + j] =
                q[up * w + j] + q[dn * w + j] + q[i * w + l] + q[i * w + r] - 4.0 * q[i * w + j];
        }
    }
}
