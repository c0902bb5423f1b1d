use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::PathBuf;

use femseg::nn::{checkpoint, train::train};
use femseg::preprocess::PreprocessedCase;

use super::prepare;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult, Context};
use crate::imaging::{load_mask, load_volume};
use crate::manifest::{require_files, CaseEntry, Manifest};

pub const HISTORY_FILE: &str = "history.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: PathBuf,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub best_epoch: usize,
}

fn load_cases(entries: &[&CaseEntry], split: bool) -> CliResult<Vec<PreprocessedCase>> {
    let mut out = Vec::new();
    for e in entries {
        let v = load_volume(&e.image)?;
        let m = load_mask(e.mask.as_ref().expect("mask checked"))?;
        out.extend(prepare(&e.case_id, &v, Some(&m), split)?.into_iter().map(|(_, c)| c));
    }
    Ok(out)
}

pub fn run(cfg: &RunConfig) -> CliResult<TrainReport> {
    cfg.validate_train()?;
    let manifest = Manifest::load(&cfg.manifest)?;
    let train_entries = manifest.split("train");
    let val_entries = manifest.split("val");
    if train_entries.is_empty() {
        return Err(CliError::Config(format!("manifest {} has no training cases", cfg.manifest.display())));
    }
    require_files(train_entries.iter().chain(&val_entries).copied(), true)?;
    let split = cfg.preprocess.split_femurs;
    let train_cases = load_cases(&train_entries, split)?;
    let val_cases = load_cases(&val_entries, split)?;

    fs::create_dir_all(&cfg.output_dir).process(format!("creating {}", cfg.output_dir.display()))?;
    let history = cfg.output_dir.join(HISTORY_FILE);
    fs::write(&history, "epoch,train_loss,val_dice\n").process(format!("writing {}", history.display()))?;
    let append = |line: String| -> femseg::Result<()> {
        let mut f = OpenOptions::new().append(true).open(&history)?;
        f.write_all(line.as_bytes())?;
        Ok(())
    };
    let tc = cfg.train_config();
    let outcome = train(&train_cases, &val_cases, cfg.unet(), &tc, &cfg.augment.augment(), &mut |rec, _| {
        let val = rec.val_dice.map_or_else(|| "NA".to_string(), |d| d.to_string());
        eprintln!(
            "epoch {}/{}: loss {:.5}, val dice {val}, {:.1}s",
            rec.epoch, tc.epochs, rec.train_loss, rec.seconds
        );
        append(format!("{},{},{val}\n", rec.epoch, rec.train_loss))
    })
    .process("training")?;

    let final_checkpoint = cfg.output_dir.join(FINAL_CHECKPOINT);
    let best_checkpoint = cfg.output_dir.join(BEST_CHECKPOINT);
    fs::write(&final_checkpoint, checkpoint::save(&outcome.model)).process(format!("writing {}", final_checkpoint.display()))?;
    fs::write(&best_checkpoint, checkpoint::save(&outcome.best_model)).process(format!("writing {}", best_checkpoint.display()))?;
    Ok(TrainReport { history, final_checkpoint, best_checkpoint, best_epoch: outcome.best_epoch })
}
