//! Training loop: random augmented crops, Dice loss, Adam, per-epoch validation.

use std::sync::mpsc::sync_channel;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::AdamConfig;
use super::predict::predict_volume;
use super::tensor::Tensor;
use super::unet::{UNetConfig, UNetModel};
use crate::augment::{augment_pair, AugmentConfig};
use crate::error::{Error, Result};
use crate::metrics::dsc;
use crate::patching::{extract_patch, sample_crop_origin};
use crate::preprocess::PreprocessedCase;
use crate::volume::{IntensityUnit, LabelMask, Shape3, Volume};

/// Context voxels cropped around each patch before augmentation so that
/// rotation and scaling do not pull zeros in at the patch border.
pub const AUGMENT_MARGIN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub patch: [usize; 3],
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Tile overlap used for validation predictions.
    pub validation_overlap: [usize; 3],
    /// Batches prepared ahead on a worker thread; 0 prepares them inline.
    pub prefetch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 2,
            patch: [128; 3],
            epochs: 300,
            iterations_per_epoch: 80,
            adam: AdamConfig::default(),
            seed: 0,
            validation_overlap: [64; 3],
            prefetch: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, unet: &UNetConfig) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.iterations_per_epoch == 0 {
            return Err(Error::Config("batch size, epochs and iterations must be positive".into()));
        }
        let k = unet.divisor();
        if self.patch.iter().any(|p| *p == 0 || p % k != 0) {
            return Err(Error::Config(format!("patch {:?} must be positive multiples of {k}", self.patch)));
        }
        if (0..3).any(|a| self.validation_overlap[a] >= self.patch[a]) {
            return Err(Error::Config("validation overlap must be smaller than the patch".into()));
        }
        self.adam.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean training loss over the epoch's iterations.
    pub train_loss: f64,
    /// Mean volume-level Dice over validation cases, when any are given.
    pub val_dice: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: UNetModel,
    /// Model from the epoch with the highest validation Dice (earliest on
    /// ties); the final model when there is no validation set.
    pub best_model: UNetModel,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Seed for the sample in batch slot `slot` of optimizer step `step`.
pub fn sample_seed(seed: u64, step: u64, slot: u64) -> u64 {
    let mut z = seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ slot.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random crop, augmented when `aug` can fire.
///
/// Returns the flattened input patch and foreground target.
pub fn augmented_crop<R: Rng + ?Sized>(
    case: &PreprocessedCase,
    patch: [usize; 3],
    aug: &AugmentConfig,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mask = case
        .mask
        .as_ref()
        .ok_or_else(|| Error::Invalid("training case has no ground-truth mask".into()))?;
    let dims = case.shape().to_array();
    let origin = sample_crop_origin(dims, patch, rng);
    let pad: [usize; 3] = std::array::from_fn(|a| dims[a].max(patch[a]).saturating_sub(dims[a]) / 2);
    if aug.apply_probability == 0.0 {
        let x = extract_patch(case.input.data(), dims, pad, origin, patch);
        let g = extract_patch(mask.data(), dims, pad, origin, patch);
        return Ok((x, g));
    }
    let m = AUGMENT_MARGIN;
    let ctx = patch.map(|p| p + 2 * m);
    let ctx_pad = pad.map(|p| p + m);
    let x = extract_patch(case.input.data(), dims, ctx_pad, origin, ctx);
    let g = extract_patch(mask.data(), dims, ctx_pad, origin, ctx);
    let shape = Shape3::from_array(ctx);
    let sp = case.input.spacing();
    let v = Volume::new(shape, x.iter().map(|v| *v as f32).collect(), sp, [0.0; 3], IntensityUnit::Normalized)?;
    let lm = LabelMask::new(shape, g.iter().map(|v| *v as u8).collect(), sp, [0.0; 3])?;
    let out = augment_pair(&PreprocessedCase::whole(v, Some(lm))?, aug, rng)?;
    let inner = |data: &[f64]| extract_patch(data, ctx, [0; 3], [m; 3], patch);
    let xv: Vec<f64> = out.input.data().iter().map(|v| *v as f64).collect();
    let gv: Vec<f64> = out.mask.as_ref().expect("mask kept").data().iter().map(|v| *v as f64).collect();
    Ok((inner(&xv), inner(&gv)))
}

/// Input `(B, 1, P)` and one-hot target `(B, 2, P)` for optimizer step `step`.
pub fn make_batch(
    cases: &[PreprocessedCase],
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    step: u64,
) -> Result<(Tensor, Tensor)> {
    let [d, h, w] = cfg.patch;
    let b = cfg.batch_size;
    let mut x = Tensor::zeros([b, 1, d, h, w]);
    let mut t = Tensor::zeros([b, 2, d, h, w]);
    for slot in 0..b {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.seed, step, slot as u64));
        let case = &cases[rng.random_range(0..cases.len())];
        let (xi, gi) = augmented_crop(case, cfg.patch, aug, &mut rng)?;
        x.channel_mut(slot, 0).copy_from_slice(&xi);
        t.channel_mut(slot, 1).copy_from_slice(&gi);
        for (bg, fg) in t.channel_mut(slot, 0).iter_mut().zip(&gi) {
            *bg = 1.0 - fg;
        }
    }
    Ok((x, t))
}

/// Mean volume-level Dice of `model` over `cases`.
pub fn validation_dice(model: &UNetModel, cases: &[PreprocessedCase], patch: [usize; 3], overlap: [usize; 3]) -> Result<f64> {
    let mut total = 0.0;
    for c in cases {
        let gt = c
            .mask
            .as_ref()
            .ok_or_else(|| Error::Invalid("validation case has no ground-truth mask".into()))?;
        let pred = predict_volume(model, c, patch, overlap)?;
        total += match dsc(&pred, gt) {
            Ok(d) => d,
            // both empty: perfect agreement
            Err(Error::Degenerate(_)) => 1.0,
            Err(e) => return Err(e),
        };
    }
    Ok(total / cases.len() as f64)
}

/// Trains a fresh model seeded from `cfg.seed`.
///
/// `on_epoch` runs after every epoch with the record and the current model;
/// an error from it stops training.
pub fn train(
    train_cases: &[PreprocessedCase],
    val_cases: &[PreprocessedCase],
    unet: UNetConfig,
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord, &UNetModel) -> Result<()>,
) -> Result<TrainOutcome> {
    let model = UNetModel::new(unet, cfg.seed)?;
    train_model(model, train_cases, val_cases, cfg, aug, on_epoch)
}

/// Continues training `model` (whose optimizer step count offsets the sample seeds).
pub fn train_model(
    mut model: UNetModel,
    train_cases: &[PreprocessedCase],
    val_cases: &[PreprocessedCase],
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord, &UNetModel) -> Result<()>,
) -> Result<TrainOutcome> {
    if train_cases.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    cfg.validate(model.config())?;
    aug.validate()?;
    for c in train_cases.iter().chain(val_cases) {
        if c.mask.is_none() {
            return Err(Error::Config("every training and validation case needs a mask".into()));
        }
    }
    let first_step = model.step();
    let total = (cfg.epochs * cfg.iterations_per_epoch) as u64;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, UNetModel)> = None;

    let mut run = |next: &mut dyn FnMut() -> Result<(Tensor, Tensor)>| -> Result<()> {
        for epoch in 1..=cfg.epochs {
            let start = Instant::now();
            let mut loss_sum = 0.0;
            for _ in 0..cfg.iterations_per_epoch {
                let (x, t) = next()?;
                loss_sum += model.train_step(&x, &t, &cfg.adam)?;
            }
            let val_dice = if val_cases.is_empty() {
                None
            } else {
                Some(validation_dice(&model, val_cases, cfg.patch, cfg.validation_overlap)?)
            };
            let rec = EpochRecord {
                epoch,
                train_loss: loss_sum / cfg.iterations_per_epoch as f64,
                val_dice,
                seconds: start.elapsed().as_secs_f64(),
            };
            if let Some(d) = val_dice {
                if best.as_ref().is_none_or(|(b, _, _)| d > *b) {
                    best = Some((d, epoch, model.clone()));
                }
            }
            on_epoch(&rec, &model)?;
            history.push(rec);
        }
        Ok(())
    };

    if cfg.prefetch == 0 {
        let mut step = first_step;
        run(&mut || {
            step += 1;
            make_batch(train_cases, cfg, aug, step)
        })?;
    } else {
        std::thread::scope(|s| -> Result<()> {
            let (tx, rx) = sync_channel(cfg.prefetch);
            s.spawn(move || {
                for step in first_step + 1..=first_step + total {
                    if tx.send(make_batch(train_cases, cfg, aug, step)).is_err() {
                        break;
                    }
                }
            });
            let out = run(&mut || rx.recv().map_err(|_| Error::Invalid("batch producer stopped".into()))?);
            drop(rx);
            out
        })?;
    }

    let (best_model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model.clone(), cfg.epochs),
    };
    Ok(TrainOutcome { model, best_model, best_epoch, history })
}
