//! Seeded synthetic FLAIR-like volumes: an ellipsoidal brain of textured mid
//! intensity on a black background, carrying bright spherical lesions.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::volume::{Dims, MaskVolume, Volume};

/// Closed interval every brain voxel falls in (for any allowed amplitude).
pub const BRAIN_BAND: (f32, f32) = (0.25, 0.55);
/// Closed interval every lesion voxel falls in.
pub const LESION_BAND: (f32, f32) = (0.8, 0.9);

const BRAIN_LEVEL: f64 = 0.4;
const MAX_AMPLITUDE: f64 = 0.15;
const LESION_LEVEL: f64 = 0.85;
const LESION_AMPLITUDE: f64 = 0.05;
const PLACEMENT_ATTEMPTS: usize = 500;

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub seed: u64,
    pub dims: Dims,
    /// Inclusive range for the number of lesions.
    pub n_lesions: (usize, usize),
    /// Lesion radius range in voxels.
    pub lesion_radius: (f64, f64),
    /// Half-width of the brain texture around its mean level, at most 0.15.
    pub texture_amplitude: f64,
    /// All-zero slices at each end of the volume.
    pub blank_slices: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            seed: 0,
            dims: Dims::new(24, 181, 217),
            n_lesions: (3, 8),
            lesion_radius: (2.0, 6.0),
            texture_amplitude: 0.1,
            blank_slices: 2,
        }
    }
}

impl PhantomSpec {
    fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::invalid("generate_phantom", d));
        let Dims { slices, height, width } = self.dims;
        let (rlo, rhi) = self.lesion_radius;
        if slices <= 2 * self.blank_slices || height == 0 || width == 0 {
            return bad(format!("dims {:?} leave no brain slices", self.dims));
        }
        if !(rlo.is_finite() && rhi.is_finite() && 0.0 <= rlo && rlo <= rhi) {
            return bad(format!("bad lesion radius range ({rlo}, {rhi})"));
        }
        let diameter = (2.0 * rhi.floor() + 1.0) as usize;
        if diameter > (slices - 2 * self.blank_slices).min(height).min(width) {
            return bad(format!("lesion diameter {diameter} exceeds dims {:?}", self.dims));
        }
        if self.n_lesions.0 > self.n_lesions.1 {
            return bad(format!("bad lesion count range {:?}", self.n_lesions));
        }
        if !(0.0..=MAX_AMPLITUDE).contains(&self.texture_amplitude) {
            return bad(format!("texture amplitude {} outside [0, {MAX_AMPLITUDE}]", self.texture_amplitude));
        }
        Ok(())
    }
}

/// Sum of three random plane waves, scaled to `[-1, 1]`.
struct Texture {
    waves: [([f64; 3], f64); 3],
}

impl Texture {
    fn new(rng: &mut Rng) -> Self {
        Texture {
            waves: std::array::from_fn(|_| {
                let k = std::array::from_fn(|_| rng.uniform_range(-0.5, 0.5));
                (k, rng.uniform_range(0.0, TAU))
            }),
        }
    }

    fn at(&self, p: [f64; 3]) -> f64 {
        self.waves
            .iter()
            .map(|(k, phase)| (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + phase).sin())
            .sum::<f64>()
            / 3.0
    }
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Volume, MaskVolume)> {
    spec.validate()?;
    let d = spec.dims;
    let (s, h, w) = (d.slices, d.height, d.width);
    let idx = |z: usize, y: usize, x: usize| (z * h + y) * w + x;
    let mut rng = Rng::new(spec.seed);

    let (cz, cy, cx) = ((s as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (az, ay, ax) = ((s - 2 * spec.blank_slices) as f64 / 2.0, 0.42 * h as f64, 0.36 * w as f64);
    let mut brain = vec![false; d.voxels()];
    let mut brain_voxels = Vec::new();
    for z in spec.blank_slices..s - spec.blank_slices {
        for y in 0..h {
            for x in 0..w {
                let r = ((z as f64 - cz) / az).powi(2) + ((y as f64 - cy) / ay).powi(2) + ((x as f64 - cx) / ax).powi(2);
                if r <= 1.0 {
                    brain[idx(z, y, x)] = true;
                    brain_voxels.push([z, y, x]);
                }
            }
        }
    }
    if brain_voxels.is_empty() {
        return Err(Error::invalid("generate_phantom", "brain region is empty"));
    }

    let inside = |z: isize, y: isize, x: isize| {
        z >= 0 && y >= 0 && x >= 0 && (z as usize) < s && (y as usize) < h && (x as usize) < w && brain[idx(z as usize, y as usize, x as usize)]
    };
    let mut lesion = vec![0u8; d.voxels()];
    let n = rng.int_inclusive(spec.n_lesions.0, spec.n_lesions.1);
    for i in 0..n {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let r = rng.uniform_range(spec.lesion_radius.0, spec.lesion_radius.1);
            let c = brain_voxels[rng.int_inclusive(0, brain_voxels.len() - 1)].map(|v| v as isize);
            let ri = r.floor() as isize;
            let mut sphere = Vec::new();
            let mut ok = true;
            'scan: for dz in -ri..=ri {
                for dy in -ri..=ri {
                    for dx in -ri..=ri {
                        if ((dz * dz + dy * dy + dx * dx) as f64) > r * r {
                            continue;
                        }
                        let (z, y, x) = (c[0] + dz, c[1] + dy, c[2] + dx);
                        let neighbours = [(0, 0, 0), (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
                        if !neighbours.iter().all(|&(a, b, e)| inside(z + a, y + b, x + e)) {
                            ok = false;
                            break 'scan;
                        }
                        sphere.push(idx(z as usize, y as usize, x as usize));
                    }
                }
            }
            if ok {
                for v in sphere {
                    lesion[v] = 1;
                }
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Data(format!(
                "could not place lesion {} of {n} after {PLACEMENT_ATTEMPTS} attempts",
                i + 1
            )));
        }
    }

    let brain_tex = Texture::new(&mut rng);
    let lesion_tex = Texture::new(&mut rng);
    let mut voxels = vec![0f32; d.voxels()];
    for &[z, y, x] in &brain_voxels {
        let i = idx(z, y, x);
        let p = [z as f64, y as f64, x as f64];
        voxels[i] = if lesion[i] == 1 {
            LESION_LEVEL + LESION_AMPLITUDE * lesion_tex.at(p)
        } else {
            BRAIN_LEVEL + spec.texture_amplitude * brain_tex.at(p)
        } as f32;
    }

    let mut vol = Volume::new(d, voxels)?;
    vol.meta.insert("source".into(), "phantom".into());
    vol.meta.insert("seed".into(), spec.seed.to_string());
    Ok((vol, MaskVolume::new(d, lesion)?))
}
