use std::fs;
use std::path::PathBuf;

use femseg::augment::{augment_pair_traced, AugmentTrace};
use femseg::preprocess::{normalize_minmax, PreprocessedCase};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, Context};
use crate::imaging::{busiest_slice, contour, gray_slice, load_mask, load_volume, mask_slice, pgm, ppm};
use crate::manifest::{require_files, Manifest};

#[derive(Debug, Clone, PartialEq)]
pub struct PreviewReport {
    pub case_id: String,
    pub slice: usize,
    pub trace: AugmentTrace,
    pub files: Vec<PathBuf>,
}

const CONTOUR_RGB: [u8; 3] = [255, 0, 0];

/// Central slices of one case before and after a single `augment_pair` draw.
///
/// The augmentation generator is `ChaCha8Rng::seed_from_u64(seed)` applied to
/// the whole min-max normalized scan; the slice is the one with the largest
/// ground-truth cross-section.
pub fn run(cfg: &RunConfig, seed: u64, case: Option<&str>) -> CliResult<PreviewReport> {
    let aug = cfg.augment.augment();
    aug.validate().config("[augment]")?;
    let manifest = Manifest::load(&cfg.manifest)?;
    let entry = match case {
        Some(id) => manifest
            .cases
            .iter()
            .find(|c| c.case_id == id)
            .ok_or_else(|| CliError::Config(format!("case {id} is not in the manifest")))?,
        None => manifest
            .cases
            .iter()
            .find(|c| c.split == "train" && c.mask.is_some())
            .ok_or_else(|| CliError::Config("manifest has no training case with a mask".into()))?,
    };
    require_files([entry], true)?;
    let id = &entry.case_id;
    let v = normalize_minmax(&load_volume(&entry.image)?).ingest(format!("case {id}"))?;
    let m = load_mask(entry.mask.as_ref().expect("mask checked"))?;
    let before = PreprocessedCase::whole(v, Some(m)).ingest(format!("case {id}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (after, trace) = augment_pair_traced(&before, &aug, &mut rng).process(format!("augmenting {id}"))?;

    let dir = cfg.output_dir.join("preview");
    fs::create_dir_all(&dir).process(format!("creating {}", dir.display()))?;
    let s = before.shape();
    let z = busiest_slice(before.mask.as_ref().expect("mask"));
    let mut files = Vec::new();
    for (tag, c) in [("before", &before), ("after", &after)] {
        let gray = gray_slice(&c.input, z);
        let mask = mask_slice(c.mask.as_ref().expect("mask"), z);
        let mask_gray: Vec<u8> = mask.iter().map(|b| if *b { 255 } else { 0 }).collect();
        let rim = contour(&mask, s.h, s.w);
        for (name, body) in [
            (format!("{id}_{tag}.pgm"), pgm(&gray, s.h, s.w)),
            (format!("{id}_{tag}_mask.pgm"), pgm(&mask_gray, s.h, s.w)),
            (format!("{id}_{tag}.ppm"), ppm(&gray, s.h, s.w, &[(&rim, CONTOUR_RGB)])),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).process(format!("writing {}", path.display()))?;
            files.push(path);
        }
    }
    Ok(PreviewReport { case_id: id.clone(), slice: z, trace, files })
}
