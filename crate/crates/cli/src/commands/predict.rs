use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use femseg::nn::{checkpoint, predict_volume, UNetModel};
use femseg::postprocess::{largest_component_with, restore_geometry, union_masks};
use femseg::LabelMask;
use rayon::prelude::*;

use super::prepare;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult, Context};
use crate::imaging::{load_volume, write_mask};
use crate::manifest::{require_files, CaseEntry, Manifest};

pub const TIMING_FILE: &str = "timing.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct FemurTiming {
    pub case_id: String,
    pub side: &'static str,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictReport {
    pub masks: Vec<PathBuf>,
    pub timing: Vec<FemurTiming>,
    pub timing_file: PathBuf,
}

pub fn load_checkpoint(path: &Path) -> CliResult<UNetModel> {
    let bytes = fs::read(path).ingest(format!("checkpoint {}", path.display()))?;
    checkpoint::load(&bytes).ingest(format!("checkpoint {}", path.display()))
}

pub fn mask_path(dir: &Path, case_id: &str) -> PathBuf {
    dir.join(format!("{case_id}.nii"))
}

fn predict_case(cfg: &RunConfig, model: &UNetModel, e: &CaseEntry, dir: &Path) -> CliResult<(PathBuf, Vec<FemurTiming>)> {
    let v = load_volume(&e.image)?;
    let mut full = LabelMask::zeros(v.shape(), v.spacing(), v.origin()).process(format!("case {}", e.case_id))?;
    let mut timing = Vec::new();
    let p = &cfg.predict;
    for (side, case) in prepare(&e.case_id, &v, None, cfg.preprocess.split_femurs)? {
        let start = Instant::now();
        let ctx = || format!("case {} ({side})", e.case_id);
        let pred = predict_volume(model, &case, p.patch, p.overlap).process(ctx())?;
        let mut restored = restore_geometry(&pred, &case.geometry).process(ctx())?;
        if p.largest_component && restored.count_foreground() > 0 {
            restored = largest_component_with(&restored, p.connectivity()).process(ctx())?;
        }
        full = union_masks(&full, &restored).process(ctx())?;
        timing.push(FemurTiming { case_id: e.case_id.clone(), side, seconds: start.elapsed().as_secs_f64() });
    }
    // geometry fields copied from the source scan
    let out = LabelMask::new(v.shape(), full.into_data(), v.spacing(), v.origin()).process(format!("case {}", e.case_id))?;
    let path = mask_path(dir, &e.case_id);
    write_mask(&path, &out)?;
    Ok((path, timing))
}

pub fn run(cfg: &RunConfig, checkpoint_flag: Option<&Path>) -> CliResult<PredictReport> {
    let ckpt = checkpoint_flag
        .map(Path::to_path_buf)
        .or_else(|| cfg.predict.checkpoint.clone())
        .ok_or_else(|| CliError::Config("no checkpoint given (--checkpoint or [predict] checkpoint)".into()))?;
    let model = load_checkpoint(&ckpt)?;
    cfg.validate_predict(model.config())?;
    let workers = cfg.workers()?;
    let manifest = Manifest::load(&cfg.manifest)?;
    let entries = manifest.in_splits(&cfg.predict.splits);
    if entries.is_empty() {
        return Err(CliError::Config(format!("no manifest cases in splits {:?}", cfg.predict.splits)));
    }
    require_files(entries.iter().copied(), false)?;

    let dir = cfg.predictions_dir();
    fs::create_dir_all(&dir).process(format!("creating {}", dir.display()))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().process("thread pool")?;
    let results: Vec<CliResult<(PathBuf, Vec<FemurTiming>)>> =
        pool.install(|| entries.par_iter().map(|e| predict_case(cfg, &model, e, &dir)).collect());
    let mut masks = Vec::new();
    let mut timing = Vec::new();
    for r in results {
        let (m, t) = r?;
        masks.push(m);
        timing.extend(t);
    }
    let mut text = String::from("case_id,femur,seconds\n");
    for t in &timing {
        let _ = writeln!(text, "{},{},{:.3}", t.case_id, t.side, t.seconds);
    }
    let timing_file = dir.join(TIMING_FILE);
    fs::write(&timing_file, text).process(format!("writing {}", timing_file.display()))?;
    Ok(PredictReport { masks, timing, timing_file })
}
