//! Synthetic ellipsoid volumes with known segmentations.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::augment::gaussian_smooth;
use crate::error::{Error, Result};
use crate::volume::{IntensityUnit, LabelMask, Shape3, Volume};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomConfig {
    pub shape: Shape3,
    pub spacing: [f32; 3],
    /// Semi-axis range in voxels.
    pub radius_range: (f64, f64),
    /// Foreground contrast in intensity units.
    pub contrast: f64,
    /// Gaussian blur of the foreground indicator, in voxels.
    pub blur_sigma: f64,
    /// Standard deviation of additive noise, in intensity units.
    pub noise_std: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            shape: Shape3::cube(64),
            spacing: [1.0; 3],
            radius_range: (8.0, 18.0),
            contrast: 1000.0,
            blur_sigma: 1.0,
            noise_std: 100.0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.radius_range;
        let min_dim = self.shape.d.min(self.shape.h).min(self.shape.w) as f64;
        if !(lo > 0.0 && lo <= hi && 2.0 * hi + 2.0 <= min_dim) {
            return Err(Error::Config(format!("radius range {:?} does not fit in {}", self.radius_range, self.shape)));
        }
        if !(self.blur_sigma > 0.0 && self.noise_std >= 0.0 && self.contrast > 0.0) {
            return Err(Error::Config("phantom blur, noise and contrast must be positive".into()));
        }
        Ok(())
    }
}

/// One axis-aligned ellipsoid at a random centre with random semi-axes.
///
/// The image is `contrast * blur(mask) + noise` in Hounsfield-like units; the
/// caller normalizes it.
pub fn ellipsoid_phantom<R: Rng + ?Sized>(cfg: &PhantomConfig, rng: &mut R) -> Result<(Volume, LabelMask)> {
    cfg.validate()?;
    let s = cfg.shape;
    let dims = [s.d, s.h, s.w].map(|d| d as f64);
    let radii: [f64; 3] = std::array::from_fn(|_| rng.random_range(cfg.radius_range.0..=cfg.radius_range.1));
    let centre: [f64; 3] = std::array::from_fn(|a| rng.random_range(radii[a] + 1.0..=dims[a] - radii[a] - 2.0));
    let mask = LabelMask::from_fn(s, cfg.spacing, [0.0; 3], |z, y, x| {
        let p = [z as f64, y as f64, x as f64];
        (0..3).map(|a| ((p[a] - centre[a]) / radii[a]).powi(2)).sum::<f64>() <= 1.0
    })?;
    let fg: Vec<f64> = mask.data().iter().map(|v| *v as f64).collect();
    let smooth = gaussian_smooth(&fg, s, cfg.blur_sigma);
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let data = smooth.iter().map(|v| (cfg.contrast * v + noise.sample(rng)) as f32).collect();
    let vol = Volume::new(s, data, cfg.spacing, [0.0; 3], IntensityUnit::Hounsfield)?;
    Ok((vol, mask))
}
