//! Deterministic synthetic datasets: Plummer-sphere clusters drifting at
//! constant velocity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{estimate_density, DEFAULT_NEIGHBORS};
use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};
use crate::hash::uniform;
use crate::snapshot::ParticleTable;

/// Radial draws above this quantile are clamped; the Plummer radius
/// diverges as `u -> 1` (0.999 caps at about 38.7 scale lengths).
pub const PLUMMER_MAX_QUANTILE: f64 = 0.999;

const TAG_CENTER: u64 = 1;
const TAG_VELOCITY: u64 = 2;
const TAG_RADIUS: u64 = 3;
const TAG_DIRECTION: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_points: usize,
    pub n_clusters: usize,
    pub n_snapshots: usize,
    pub plummer_scale: f64,
    pub box_size: f64,
    pub drift_speed: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 || self.n_clusters == 0 {
            return Err(Error::Config("points and clusters must be positive".into()));
        }
        if self.n_snapshots < 2 {
            return Err(Error::Config("at least two snapshots are required".into()));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.plummer_scale) || !positive(self.box_size) {
            return Err(Error::Config("plummer scale and box size must be positive".into()));
        }
        if !(self.drift_speed.is_finite() && self.drift_speed >= 0.0) {
            return Err(Error::Config("drift speed must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Time of snapshot `s`; snapshots are one time unit apart.
    pub fn snapshot_time(&self, s: usize) -> f64 {
        s as f64
    }
}

/// Plummer inverse CDF: radius enclosing mass fraction `u`.
pub fn plummer_radius(u: f64, scale: f64) -> f64 {
    scale * (u.powf(-2.0 / 3.0) - 1.0).powf(-0.5)
}

fn isotropic(seed: u64, tag: u64, a: u64, b: u64) -> Vec3 {
    let cos_t = 2.0 * uniform(&[seed, tag, a, b, 0]) - 1.0;
    let phi = 2.0 * std::f64::consts::PI * uniform(&[seed, tag, a, b, 1]);
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    Vec3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t)
}

/// Generates one table per snapshot with densities and sizes estimated from
/// `DEFAULT_NEIGHBORS` neighbours. Particle `i` has id `i` and belongs to
/// cluster `i % n_clusters`; all mass values are 1.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Vec<ParticleTable>> {
    cfg.validate()?;
    let seed = cfg.seed;
    let k = cfg.n_clusters as u64;
    let centers: Vec<Vec3> = (0..k)
        .map(|c| {
            Vec3::new(
                uniform(&[seed, TAG_CENTER, c, 0]),
                uniform(&[seed, TAG_CENTER, c, 1]),
                uniform(&[seed, TAG_CENTER, c, 2]),
            ) * cfg.box_size
        })
        .collect();
    let velocities: Vec<Vec3> = (0..k)
        .map(|c| isotropic(seed, TAG_VELOCITY, c, 0) * cfg.drift_speed)
        .collect();
    let offsets: Vec<Vec3> = (0..cfg.n_points as u64)
        .into_par_iter()
        .map(|i| {
            let c = i % k;
            let u = uniform(&[seed, TAG_RADIUS, c, i]).min(PLUMMER_MAX_QUANTILE);
            isotropic(seed, TAG_DIRECTION, c, i) * plummer_radius(u, cfg.plummer_scale)
        })
        .collect();
    let domain = Aabb::new(Vec3::ZERO, Vec3::splat(cfg.box_size));

    (0..cfg.n_snapshots)
        .map(|s| {
            let t = cfg.snapshot_time(s);
            let mut table = ParticleTable::with_capacity(t, cfg.n_points);
            for (i, off) in offsets.iter().enumerate() {
                let c = i % cfg.n_clusters;
                table.id.push(i as u64);
                table.pos.push(centers[c] + velocities[c] * t + *off);
            }
            table.mass = vec![1.0; cfg.n_points];
            table.density = vec![1.0; cfg.n_points];
            table.size = vec![1.0; cfg.n_points];
            estimate_density(&mut table, DEFAULT_NEIGHBORS, &domain);
            Ok(table)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SynthConfig {
        SynthConfig {
            n_points: 3000,
            n_clusters: 3,
            n_snapshots: 3,
            plummer_scale: 1.0,
            box_size: 50.0,
            drift_speed: 0.5,
            seed: 9,
        }
    }

    #[test]
    fn plummer_inverse_cdf_at_half() {
        // (2^(2/3) - 1)^(-1/2)
        let r = plummer_radius(0.5, 1.0);
        assert!((r - 1.304_766_1).abs() < 1e-6, "{r}");
    }

    #[test]
    fn plummer_median_monte_carlo() {
        let n = 200_001u64;
        let mut r: Vec<f64> = (0..n)
            .map(|i| plummer_radius(uniform(&[1, TAG_RADIUS, 0, i]).min(PLUMMER_MAX_QUANTILE), 1.0))
            .collect();
        r.sort_by(f64::total_cmp);
        let median = r[n as usize / 2];
        assert!((median - 1.3048).abs() <= 0.02, "{median}");
    }

    #[test]
    fn deterministic_and_id_stable() {
        let a = gen_synthetic(&cfg()).unwrap();
        let b = gen_synthetic(&cfg()).unwrap();
        assert_eq!(a.len(), 3);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bytes(), y.to_bytes());
            assert_eq!(x.id, a[0].id);
            x.validate().unwrap();
        }
        assert_eq!(a[1].snapshot_time, 1.0);
    }

    #[test]
    fn zero_drift_is_static() {
        let tables = gen_synthetic(&SynthConfig {
            drift_speed: 0.0,
            ..cfg()
        })
        .unwrap();
        assert_eq!(tables[0].pos, tables[2].pos);
    }

    #[test]
    fn drift_moves_by_speed() {
        let tables = gen_synthetic(&cfg()).unwrap();
        let d = (tables[1].pos[5] - tables[0].pos[5]).length();
        assert!((d - 0.5).abs() < 1e-9);
    }

    #[test]
    fn rejects_single_snapshot() {
        assert!(gen_synthetic(&SynthConfig {
            n_snapshots: 1,
            ..cfg()
        })
        .is_err());
    }
}
