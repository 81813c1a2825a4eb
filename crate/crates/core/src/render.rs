//! Deterministic CPU splat renderer used as the reference for image
//! comparisons.
//!
//! Each point is linearly interpolated between its start and end state,
//! projected through the pinhole camera, and deposited additively as a disk
//! of radius `R = f * size / z` (clamped to `[0.5, 64]` px) with falloff
//! `k(r) = 1 - 3r^2 + 2r^3` and amplitude `weight / (0.3 pi R^2)`, so a fully
//! visible splat deposits about `weight` in total.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::block::Block;
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::image::Image;
use crate::snapshot::ParticleTable;

pub const MIN_SPLAT_RADIUS: f64 = 0.5;
pub const MAX_SPLAT_RADIUS: f64 = 64.0;

/// Integral of `k(r) 2 pi r` over the unit disk.
pub const KERNEL_DISK_INTEGRAL: f64 = 0.3 * std::f64::consts::PI;

const BAND_ROWS: usize = 16;

/// Radial cubic falloff; zero outside the unit disk.
pub fn splat_kernel(r: f64) -> f64 {
    if !(0.0..=1.0).contains(&r) {
        return 0.0;
    }
    1.0 - 3.0 * r * r + 2.0 * r * r * r
}

/// One point's interpolated state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat {
    pub pos: Vec3,
    pub size: f64,
    pub weight: f64,
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    (1.0 - t) * a + t * b
}

/// Dequantizes and interpolates block points at fraction `alpha`.
pub fn splats_from_blocks<'a, I>(blocks: I, alpha: f64) -> Vec<Splat>
where
    I: IntoIterator<Item = &'a Block>,
{
    let mut out = Vec::new();
    for b in blocks {
        for i in 0..b.len() {
            out.push(Splat {
                pos: b.start_position(i).lerp(b.end_position(i), alpha),
                size: lerp(f64::from(b.size_start[i]), f64::from(b.size_end[i]), alpha),
                weight: lerp(f64::from(b.weight_start[i]), f64::from(b.weight_end[i]), alpha),
            });
        }
    }
    out
}

/// Interpolates raw particles between two snapshots, pairing by id. The
/// weight is the particle mass; ids missing from `end` stay static.
pub fn splats_from_tables(start: &ParticleTable, end: &ParticleTable, alpha: f64) -> Vec<Splat> {
    let aligned = start.id == end.id;
    let by_id: HashMap<u64, usize> = if aligned {
        HashMap::new()
    } else {
        end.id.iter().enumerate().map(|(i, &id)| (id, i)).collect()
    };
    (0..start.len())
        .map(|i| {
            let j = if aligned { Some(i) } else { by_id.get(&start.id[i]).copied() };
            let s = start.get(i);
            let e = j.map(|j| end.get(j)).unwrap_or(s);
            Splat {
                pos: s.pos.lerp(e.pos, alpha),
                size: lerp(f64::from(s.size), f64::from(e.size), alpha),
                weight: lerp(f64::from(s.mass), f64::from(e.mass), alpha),
            }
        })
        .collect()
}

#[derive(Clone, Copy)]
struct Projected {
    x: f64,
    y: f64,
    radius: f64,
    amplitude: f64,
    row0: usize,
    row1: usize,
    col0: usize,
    col1: usize,
}

/// Renders splats into a `width x height` float image.
///
/// Every pixel accumulates contributions in input order whatever the thread
/// count, so the result is bit-identical across runs.
pub fn render_splats(splats: &[Splat], cam: &Camera) -> Result<Image> {
    let view = cam.view()?;
    let (w, h) = (cam.width as usize, cam.height as usize);
    let projected: Vec<Option<Projected>> = splats
        .par_iter()
        .map(|s| {
            let (x, y, z) = view.project(s.pos)?;
            let radius = (view.focal * s.size / z).clamp(MIN_SPLAT_RADIUS, MAX_SPLAT_RADIUS);
            // Pixel centres at i + 0.5 strictly within the radius.
            let lo = |c: f64| (c - radius - 0.5).ceil().max(0.0);
            let hi = |c: f64, n: usize| (c + radius - 0.5).floor().min(n as f64 - 1.0);
            let (col0, col1) = (lo(x), hi(x, w));
            let (row0, row1) = (lo(y), hi(y, h));
            if !(col0 <= col1 && row0 <= row1) {
                return None;
            }
            Some(Projected {
                x,
                y,
                radius,
                amplitude: s.weight / (KERNEL_DISK_INTEGRAL * radius * radius),
                row0: row0 as usize,
                row1: row1 as usize,
                col0: col0 as usize,
                col1: col1 as usize,
            })
        })
        .collect();

    let nbands = h.div_ceil(BAND_ROWS);
    let mut bands: Vec<Vec<u32>> = vec![Vec::new(); nbands];
    for (i, p) in projected.iter().enumerate() {
        if let Some(p) = p {
            for band in &mut bands[p.row0 / BAND_ROWS..=p.row1 / BAND_ROWS] {
                band.push(i as u32);
            }
        }
    }

    let mut img = Image::zeros(w, h);
    img.data
        .par_chunks_mut(w * BAND_ROWS)
        .zip(bands.par_iter())
        .enumerate()
        .for_each(|(band, (out, members))| {
            let first_row = band * BAND_ROWS;
            let rows = out.len() / w;
            let mut acc = vec![0.0f64; out.len()];
            for &i in members {
                let p = projected[i as usize].expect("bucketed splats are visible");
                let r0 = p.row0.max(first_row);
                let r1 = p.row1.min(first_row + rows - 1);
                let inv_r = 1.0 / p.radius;
                for row in r0..=r1 {
                    let dy = row as f64 + 0.5 - p.y;
                    let line = &mut acc[(row - first_row) * w..(row - first_row + 1) * w];
                    for (col, px) in line.iter_mut().enumerate().take(p.col1 + 1).skip(p.col0) {
                        let dx = col as f64 + 0.5 - p.x;
                        let d = (dx * dx + dy * dy).sqrt();
                        if d < p.radius {
                            *px += p.amplitude * splat_kernel(d * inv_r);
                        }
                    }
                }
            }
            for (o, a) in out.iter_mut().zip(acc) {
                *o = a as f32;
            }
        });
    Ok(img)
}

/// What to render for [`render_reference`].
pub enum RenderInput<'a> {
    /// Blocks of the interval containing `t`.
    Blocks(&'a [Block]),
    /// Every snapshot of the dataset, in time order.
    Raw(&'a [ParticleTable]),
}

/// Interval index and fraction for time `t`; right-open intervals except
/// the last.
pub fn locate(times: &[f64], t: f64) -> Result<(usize, f64)> {
    if times.len() < 2 {
        return Err(Error::Invalid("need at least two snapshot times".into()));
    }
    let (t0, t1) = (times[0], times[times.len() - 1]);
    if !(t >= t0 && t <= t1) {
        return Err(Error::Invalid(format!("time {t} outside [{t0}, {t1}]")));
    }
    let s = times.partition_point(|&x| x <= t).saturating_sub(1).min(times.len() - 2);
    Ok((s, (t - times[s]) / (times[s + 1] - times[s])))
}

/// Renders the state at time `t` given the snapshot `times`.
pub fn render_reference(input: RenderInput<'_>, cam: &Camera, t: f64, times: &[f64]) -> Result<Image> {
    let (s, alpha) = locate(times, t)?;
    let splats = match input {
        RenderInput::Blocks(blocks) => {
            if let Some(b) = blocks.iter().find(|b| b.interval as usize != s) {
                return Err(Error::Invalid(format!(
                    "block {} belongs to interval {}, time {t} is in interval {s}",
                    b.path, b.interval
                )));
            }
            splats_from_blocks(blocks, alpha)
        }
        RenderInput::Raw(tables) => {
            if tables.len() != times.len() {
                return Err(Error::Invalid("one table per snapshot time required".into()));
            }
            splats_from_tables(&tables[s], &tables[s + 1], alpha)
        }
    };
    render_splats(&splats, cam)
}
