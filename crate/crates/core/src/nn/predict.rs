//! Tiled whole-volume inference.

use super::tensor::Tensor;
use super::unet::UNetModel;
use crate::error::{Error, Result};
use crate::patching::{extract_patch, plan_patches, ProbabilityMap, Stitcher};
use crate::preprocess::PreprocessedCase;
use crate::volume::{LabelMask, Volume};

/// Anything that maps a `(1, 1, P)` intensity patch to `(1, 2, P)` class probabilities.
pub trait PatchPredictor: Sync {
    fn predict_patch(&self, x: &Tensor) -> Result<Tensor>;
}

impl PatchPredictor for UNetModel {
    fn predict_patch(&self, x: &Tensor) -> Result<Tensor> {
        self.predict_probs(x)
    }
}

/// Emits the same foreground probability everywhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPredictor(pub f64);

impl PatchPredictor for ConstantPredictor {
    fn predict_patch(&self, x: &Tensor) -> Result<Tensor> {
        let [n, _, d, h, w] = x.shape();
        let mut out = Tensor::zeros([n, 2, d, h, w]);
        for i in 0..n {
            out.channel_mut(i, 0).fill(1.0 - self.0);
            out.channel_mut(i, 1).fill(self.0);
        }
        Ok(out)
    }
}

/// Stitched class probabilities for a whole volume.
///
/// Patches are evaluated `workers` at a time on scoped threads and fused in
/// grid order, so the result does not depend on the worker count.
pub fn predict_probabilities<P: PatchPredictor + ?Sized>(
    model: &P,
    input: &Volume,
    patch: [usize; 3],
    overlap: [usize; 3],
    workers: usize,
) -> Result<ProbabilityMap> {
    let dims = input.shape().to_array();
    let grid = plan_patches(dims, patch, overlap)?;
    let [pd, ph, pw] = patch;
    let run = |i: usize| -> Result<Tensor> {
        let x = extract_patch(input.data(), dims, grid.pad_before, grid.origins[i], patch);
        model.predict_patch(&Tensor::from_vec([1, 1, pd, ph, pw], x)?)
    };
    let mut stitcher = Stitcher::new(grid.clone());
    let workers = workers.max(1);
    let indices: Vec<usize> = (0..grid.len()).collect();
    for round in indices.chunks(workers) {
        let results: Vec<Result<Tensor>> = if round.len() == 1 {
            vec![run(round[0])]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = round.iter().map(|&i| s.spawn(move || run(i))).collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(Error::Invalid("patch worker panicked".into()))))
                    .collect()
            })
        };
        for (&i, r) in round.iter().zip(results) {
            stitcher.add(i, &r?)?;
        }
    }
    stitcher.finish()
}

/// Foreground mask (probability strictly above 0.5) on the case grid.
pub fn predict_volume<P: PatchPredictor + ?Sized>(
    model: &P,
    case: &PreprocessedCase,
    patch: [usize; 3],
    overlap: [usize; 3],
) -> Result<LabelMask> {
    predict_volume_with_workers(model, case, patch, overlap, 1)
}

pub fn predict_volume_with_workers<P: PatchPredictor + ?Sized>(
    model: &P,
    case: &PreprocessedCase,
    patch: [usize; 3],
    overlap: [usize; 3],
    workers: usize,
) -> Result<LabelMask> {
    let probs = predict_probabilities(model, &case.input, patch, overlap, workers)?;
    LabelMask::new(case.shape(), probs.threshold(), case.input.spacing(), case.input.origin())
}
