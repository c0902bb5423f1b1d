use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use femseg::nifti::{self, NiftiImage};
use femseg::phantom::{ellipsoid_phantom, PhantomConfig};
use femseg::Shape3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, CliResult, Context};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomSet {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub size: usize,
    pub seed: u64,
}

/// Desk-scale run configuration written next to the phantom manifest.
pub const DEMO_CONFIG: &str = "\
manifest = \"manifest.csv\"
output_dir = \"run\"
seed = 0

[model]
levels = 4
base_features = 8

[preprocess]
split_femurs = false

[train]
patch = [32, 32, 32]
epochs = 20
iterations_per_epoch = 100
validation_overlap = [16, 16, 16]

[augment]
apply_probability = 0.0

[predict]
checkpoint = \"run/best.ckpt\"
patch = [32, 32, 32]
overlap = [16, 16, 16]
splits = [\"test\"]
";

/// Writes ellipsoid phantoms, `manifest.csv` and `run.toml` into `out`.
pub fn run(out: &Path, set: PhantomSet) -> CliResult<PathBuf> {
    let cfg = PhantomConfig { shape: Shape3::cube(set.size), ..PhantomConfig::default() };
    cfg.validate().config("phantom size")?;
    if set.train == 0 {
        return Err(CliError::Config("at least one training phantom is needed".into()));
    }
    fs::create_dir_all(out).process(format!("creating {}", out.display()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(set.seed);
    let mut manifest = String::from("case_id,image,mask,split\n");
    let splits = [("train", set.train), ("val", set.val), ("test", set.test)];
    for (split, n) in splits {
        for i in 0..n {
            let id = format!("{split}{i:03}");
            let (v, m) = ellipsoid_phantom(&cfg, &mut rng).process("generating phantom")?;
            let (img, lab) = (format!("{id}.nii"), format!("{id}_mask.nii"));
            nifti::write_file(out.join(&img), &NiftiImage::Volume(v)).process(format!("writing {img}"))?;
            nifti::write_file(out.join(&lab), &NiftiImage::Mask(m)).process(format!("writing {lab}"))?;
            let _ = writeln!(manifest, "{id},{img},{lab},{split}");
        }
    }
    fs::write(out.join("manifest.csv"), manifest).process("writing manifest")?;
    let config = out.join("run.toml");
    fs::write(&config, DEMO_CONFIG).process("writing run.toml")?;
    Ok(config)
}
