use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use femseg::metrics::{evaluate_case, format_report, MetricsReport};
use femseg::preprocess::normalize_minmax;
use femseg::LabelMask;
use rayon::prelude::*;
use serde::Deserialize;

use super::predict::{mask_path, TIMING_FILE};
use super::{mask_halves, row_id, SIDES, WHOLE};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult, Context};
use crate::imaging::{busiest_slice, contour, gray_slice, load_mask, load_volume, mask_slice, ppm};
use crate::manifest::{require_files, CaseEntry, Manifest};

pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateReport {
    pub reports: Vec<MetricsReport>,
    pub metrics_file: PathBuf,
    pub overlays: Vec<PathBuf>,
}

#[derive(Deserialize)]
struct TimingRow {
    case_id: String,
    femur: String,
    seconds: f64,
}

/// Per-femur prediction seconds keyed by report row id, if a timing file exists.
fn read_timing(dir: &Path) -> CliResult<HashMap<String, f64>> {
    let path = dir.join(TIMING_FILE);
    if !path.is_file() {
        return Ok(HashMap::new());
    }
    let mut r = csv::Reader::from_path(&path).ingest(format!("timing file {}", path.display()))?;
    let mut out = HashMap::new();
    for row in r.deserialize::<TimingRow>() {
        let row = row.ingest(format!("timing file {}", path.display()))?;
        out.insert(row_id(&row.case_id, &row.femur), row.seconds);
    }
    Ok(out)
}

const GT_RGB: [u8; 3] = [0, 255, 0];
const PRED_RGB: [u8; 3] = [255, 0, 0];
const BOTH_RGB: [u8; 3] = [255, 255, 0];

/// Slice through the largest ground-truth cross-section with both contours drawn.
fn overlay(e: &CaseEntry, pred: &LabelMask, gt: &LabelMask, path: &Path) -> CliResult<()> {
    let v = load_volume(&e.image)?;
    if v.shape() != gt.shape() {
        return Err(CliError::Ingestion(format!("case {}: image and mask shapes differ", e.case_id)));
    }
    let v = normalize_minmax(&v).ingest(format!("case {}", e.case_id))?;
    let s = gt.shape();
    let z = busiest_slice(gt);
    let g = contour(&mask_slice(gt, z), s.h, s.w);
    let p = contour(&mask_slice(pred, z), s.h, s.w);
    let both: Vec<bool> = g.iter().zip(&p).map(|(a, b)| *a && *b).collect();
    let img = ppm(&gray_slice(&v, z), s.h, s.w, &[(&g, GT_RGB), (&p, PRED_RGB), (&both, BOTH_RGB)]);
    fs::write(path, img).process(format!("writing {}", path.display()))
}

fn evaluate_entry(
    cfg: &RunConfig,
    e: &CaseEntry,
    pred_dir: &Path,
    timing: &HashMap<String, f64>,
    overlay_dir: Option<&Path>,
) -> CliResult<(Vec<MetricsReport>, Option<PathBuf>)> {
    let pred_path = mask_path(pred_dir, &e.case_id);
    if !pred_path.is_file() {
        return Err(CliError::Ingestion(format!("case {}: no prediction at {}", e.case_id, pred_path.display())));
    }
    let pred = load_mask(&pred_path)?;
    let gt = load_mask(e.mask.as_ref().expect("mask checked"))?;
    if pred.shape() != gt.shape() {
        return Err(CliError::Ingestion(format!(
            "case {}: prediction {} and ground truth {} differ in shape",
            e.case_id,
            pred.shape(),
            gt.shape()
        )));
    }
    let pairs: Vec<(&str, LabelMask, LabelMask)> = if cfg.preprocess.split_femurs {
        let ctx = || format!("case {}", e.case_id);
        let [pr, pl] = mask_halves(&pred).ingest(ctx())?;
        let [gr, gl] = mask_halves(&gt).ingest(ctx())?;
        vec![(SIDES[0], pr, gr), (SIDES[1], pl, gl)]
    } else {
        vec![(WHOLE, pred.clone(), gt.clone())]
    };
    let mut reports = Vec::new();
    for (side, p, g) in pairs {
        let id = row_id(&e.case_id, side);
        let r = evaluate_case(&id, &p, &g, timing.get(&id).copied()).ingest(format!("case {id}"))?;
        reports.push(r);
    }
    let img = match overlay_dir {
        Some(dir) => {
            let path = dir.join(format!("{}.ppm", e.case_id));
            overlay(e, &pred, &gt, &path)?;
            Some(path)
        }
        None => None,
    };
    Ok((reports, img))
}

pub fn run(cfg: &RunConfig) -> CliResult<EvaluateReport> {
    let workers = cfg.workers()?;
    let manifest = Manifest::load(&cfg.manifest)?;
    let splits = cfg.evaluate_splits().to_vec();
    let entries = manifest.in_splits(&splits);
    if entries.is_empty() {
        return Err(CliError::Config(format!("no manifest cases in splits {splits:?}")));
    }
    require_files(entries.iter().copied(), true)?;
    let pred_dir = cfg.predictions_dir();
    let timing = read_timing(&pred_dir)?;

    fs::create_dir_all(&cfg.output_dir).process(format!("creating {}", cfg.output_dir.display()))?;
    let overlay_dir = cfg.evaluate.overlays.then(|| cfg.output_dir.join("overlays"));
    if let Some(d) = &overlay_dir {
        fs::create_dir_all(d).process(format!("creating {}", d.display()))?;
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().process("thread pool")?;
    let results: Vec<_> = pool.install(|| {
        entries
            .par_iter()
            .map(|e| evaluate_entry(cfg, e, &pred_dir, &timing, overlay_dir.as_deref()))
            .collect()
    });
    let mut reports = Vec::new();
    let mut overlays = Vec::new();
    for r in results {
        let (rep, img) = r?;
        reports.extend(rep);
        overlays.extend(img);
    }
    let metrics_file = cfg.output_dir.join(METRICS_FILE);
    fs::write(&metrics_file, format_report(&reports)).process(format!("writing {}", metrics_file.display()))?;
    Ok(EvaluateReport { reports, metrics_file, overlays })
}
