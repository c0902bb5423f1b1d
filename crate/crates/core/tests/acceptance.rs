//! Acceptance criteria 1-11, one PASS/FAIL line each.
//!
//! Runs with a plain `main` so the summary is printed even when output
//! capture is on. Criterion 11 (full-size inference timing) needs
//! `FEMSEG_THROUGHPUT=1` and otherwise reports SKIPPED; `FEMSEG_CRITERIA=1,2`
//! runs a subset.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use femseg::augment::{apply_affine, augment_pair_traced, elastic_deform, AugmentConfig};
use femseg::metrics::{dsc, extract_surface, hd, hd95};
use femseg::nifti::{read_volume, write_volume, NiftiImage};
use femseg::nn::batchnorm::{batchnorm_backward, batchnorm_forward, BnMode, RunningStats};
use femseg::nn::conv::{conv3d_backward, conv3d_forward};
use femseg::nn::conv_transpose::{conv3d_stride2, convtranspose3d, convtranspose3d_backward};
use femseg::nn::loss::{dice_loss, softmax_dice_loss};
use femseg::nn::pool::{maxpool3d, maxpool3d_backward};
use femseg::nn::predict::{predict_probabilities, predict_volume, ConstantPredictor, PatchPredictor};
use femseg::nn::train::{train, TrainConfig};
use femseg::nn::{AdamConfig, Tensor, UNetConfig, UNetModel};
use femseg::patching::plan_patches;
use femseg::phantom::{ellipsoid_phantom, PhantomConfig};
use femseg::postprocess::{label_components, largest_component, restore_geometry, union_masks, Connectivity};
use femseg::preprocess::{mirror_lr, normalize_minmax, split_halves, PreprocessedCase};
use femseg::{IntensityUnit, LabelMask, Shape3, Volume, VoxelType};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_mask(r: &mut ChaCha8Rng, shape: Shape3, spacing: [f32; 3]) -> LabelMask {
    // a random box plus sparse noise, or pure noise of random density
    let density = r.random_range(0.0..0.6);
    let boxy = r.random_bool(0.6);
    let lo: [usize; 3] = std::array::from_fn(|a| r.random_range(0..shape.to_array()[a]));
    let hi: [usize; 3] = std::array::from_fn(|a| r.random_range(lo[a]..=shape.to_array()[a]));
    let noise = if boxy { density * 0.1 } else { density };
    LabelMask::from_fn(shape, spacing, [0.0; 3], |z, y, x| {
        let inside = boxy && (lo[0]..hi[0]).contains(&z) && (lo[1]..hi[1]).contains(&y) && (lo[2]..hi[2]).contains(&x);
        inside || r.random_bool(noise)
    })
    .unwrap()
}

// ---------------------------------------------------------------- criterion 1

fn oracle_points(m: &LabelMask) -> Vec<[f64; 3]> {
    let s = m.shape();
    let fg: HashSet<(isize, isize, isize)> = (0..s.len())
        .filter(|i| m.data()[*i] == 1)
        .map(|i| {
            let [z, y, x] = s.coords(i);
            (z as isize, y as isize, x as isize)
        })
        .collect();
    let sp = m.spacing().map(f64::from);
    let mut pts = Vec::new();
    for z in 0..s.d as isize {
        for y in 0..s.h as isize {
            for x in 0..s.w as isize {
                if !fg.contains(&(z, y, x)) {
                    continue;
                }
                let n6 = [(z - 1, y, x), (z + 1, y, x), (z, y - 1, x), (z, y + 1, x), (z, y, x - 1), (z, y, x + 1)];
                if n6.iter().any(|n| !fg.contains(n)) {
                    pts.push([z as f64 * sp[0], y as f64 * sp[1], x as f64 * sp[2]]);
                }
            }
        }
    }
    pts
}

fn oracle_directed(a: &[[f64; 3]], b: &[[f64; 3]]) -> Vec<f64> {
    a.iter()
        .map(|p| {
            b.iter()
                .map(|q| {
                    let (dz, dy, dx) = (p[0] - q[0], p[1] - q[1], p[2] - q[2]);
                    dz * dz + dy * dy + dx * dx
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

fn oracle_quantile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn criterion_1() -> Outcome {
    let mut r = rng(1);
    let spacings = [[1.0, 1.0, 1.0], [0.5, 0.75, 1.25], [2.0, 0.977, 0.977], [1.0, 0.3, 3.0]];
    let mut surface_pairs = 0;
    for trial in 0..1000 {
        let shape = Shape3::new(r.random_range(1..=20), r.random_range(1..=20), r.random_range(1..=20));
        let sp = spacings[trial % spacings.len()];
        let p = random_mask(&mut r, shape, sp);
        let g = random_mask(&mut r, shape, sp);
        let pset: HashSet<usize> = (0..shape.len()).filter(|i| p.data()[*i] == 1).collect();
        let gset: HashSet<usize> = (0..shape.len()).filter(|i| g.data()[*i] == 1).collect();
        let denom = pset.len() + gset.len();
        match dsc(&p, &g) {
            Ok(d) => {
                let want = 2.0 * pset.intersection(&gset).count() as f64 / denom as f64;
                ensure((d - want).abs() <= 1e-12, || format!("trial {trial}: dsc {d} vs {want}"))?;
            }
            Err(_) => ensure(denom == 0, || format!("trial {trial}: dsc failed on nonempty masks"))?,
        }
        let (po, go) = (oracle_points(&p), oracle_points(&g));
        if po.is_empty() || go.is_empty() {
            ensure(extract_surface(&p).is_err() == po.is_empty(), || format!("trial {trial}: empty surface"))?;
            continue;
        }
        let (ps, gs) = (extract_surface(&p).unwrap(), extract_surface(&g).unwrap());
        let mut got_pts = ps.points.clone();
        let mut want_pts = po.clone();
        got_pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want_pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ensure(got_pts == want_pts, || format!("trial {trial}: surface point sets differ"))?;
        let (ab, ba) = (oracle_directed(&po, &go), oracle_directed(&go, &po));
        let want_hd = ab.iter().chain(&ba).copied().fold(0.0, f64::max);
        let want_hd95 = oracle_quantile(ab, 0.95).max(oracle_quantile(ba, 0.95));
        let (got_hd, got_hd95) = (hd(&ps, &gs).unwrap(), hd95(&ps, &gs).unwrap());
        ensure(got_hd == want_hd, || format!("trial {trial}: hd {got_hd} vs {want_hd}"))?;
        ensure(got_hd95 == want_hd95, || format!("trial {trial}: hd95 {got_hd95} vs {want_hd95}"))?;
        surface_pairs += 1;
    }
    Ok(format!("1000 pairs, {surface_pairs} with surface distances"))
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2() -> Outcome {
    let s = Shape3::new(1, 1, 8);
    let from = |bits: &[u8]| LabelMask::new(s, bits.to_vec(), [1.0; 3], [0.0; 3]).unwrap();
    // (|P|, |G|, |P & G|) = (4, 4, 2), then a few more hand cases
    let cases: [(&[u8], &[u8], f64); 4] = [
        (&[1, 1, 1, 1, 0, 0, 0, 0], &[0, 0, 1, 1, 1, 1, 0, 0], 0.5),
        (&[1, 1, 0, 0, 0, 0, 0, 0], &[1, 1, 0, 0, 0, 0, 0, 0], 1.0),
        (&[1, 0, 0, 0, 0, 0, 0, 0], &[0, 1, 0, 0, 0, 0, 0, 0], 0.0),
        (&[1, 1, 1, 0, 0, 0, 0, 0], &[1, 0, 0, 0, 0, 0, 0, 0], 0.5),
    ];
    for (p, g, want) in cases {
        let d = dsc(&from(p), &from(g)).map_err(|e| e.to_string())?;
        ensure(d == want, || format!("dsc {d}, expected {want}"))?;
        let pf: Vec<f64> = p.iter().map(|v| *v as f64).collect();
        let gf: Vec<f64> = g.iter().map(|v| *v as f64).collect();
        let (loss, _) = dice_loss(&pf, &gf).map_err(|e| e.to_string())?;
        ensure(loss == 1.0 - d, || format!("dice loss {loss} != 1 - {d}"))?;
    }
    Ok("dsc(4, 4, 2) = 0.5; loss = 1 - dsc on 4 cases".into())
}

// ---------------------------------------------------------------- criterion 3

fn rand_tensor(r: &mut ChaCha8Rng, shape: [usize; 5]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn numeric(t: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut probe = t.clone();
    (0..t.len())
        .map(|i| {
            let v = probe.data()[i];
            probe.data_mut()[i] = v + h;
            let up = f(&probe);
            probe.data_mut()[i] = v - h;
            let down = f(&probe);
            probe.data_mut()[i] = v;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn spatial(r: &mut ChaCha8Rng, lo: usize, hi: usize) -> [usize; 3] {
    std::array::from_fn(|_| r.random_range(lo..=hi))
}

fn criterion_3() -> Outcome {
    let mut r = rng(3);
    let h = 1e-5;
    let mut worst = [0.0f64; 5];
    let mut note = |k: usize, e: f64, tol: f64, what: &str| -> Result<(), String> {
        worst[k] = worst[k].max(e);
        ensure(e < tol, || format!("{what}: relative error {e:.2e}"))
    };
    for _ in 0..20 {
        // conv3d, 3x3x3, padding 1
        let [d, hh, w] = spatial(&mut r, 1, 6);
        let (n, ci, co) = (r.random_range(1..=2), r.random_range(1..=3), r.random_range(1..=3));
        let x = rand_tensor(&mut r, [n, ci, d, hh, w]);
        let wt = rand_tensor(&mut r, [co, ci, 3, 3, 3]);
        let b = rand_tensor(&mut r, [co, 1, 1, 1, 1]);
        let rw = rand_tensor(&mut r, [n, co, d, hh, w]);
        let g = conv3d_backward(&rw, &x, &wt, 1).unwrap();
        let f = |x: &Tensor, wt: &Tensor, b: &Tensor| conv3d_forward(x, wt, b, 1).unwrap().dot(&rw);
        note(0, rel_err(g.grad_x.data(), &numeric(&x, h, |t| f(t, &wt, &b))), 1e-3, "conv3d x")?;
        note(0, rel_err(g.grad_weight.data(), &numeric(&wt, h, |t| f(&x, t, &b))), 1e-3, "conv3d w")?;
        note(0, rel_err(g.grad_bias.data(), &numeric(&b, h, |t| f(&x, &wt, t))), 1e-3, "conv3d b")?;

        // batch norm, train mode
        let [d, hh, w] = spatial(&mut r, 1, 6);
        let (n, c) = (r.random_range(1..=2), r.random_range(1..=3));
        let [d, hh, w] = if n * d * hh * w < 2 { [2, hh, w] } else { [d, hh, w] };
        let x = rand_tensor(&mut r, [n, c, d, hh, w]);
        let gamma = rand_tensor(&mut r, [c, 1, 1, 1, 1]);
        let beta = rand_tensor(&mut r, [c, 1, 1, 1, 1]);
        let rw = rand_tensor(&mut r, [n, c, d, hh, w]);
        let bn = |x: &Tensor, g: &Tensor, b: &Tensor| {
            let (y, cache) = batchnorm_forward(x, g, b, &mut RunningStats::new(c), BnMode::Train).unwrap();
            (y, cache.unwrap())
        };
        let (_, cache) = bn(&x, &gamma, &beta);
        let (gx, gg, gb) = batchnorm_backward(&rw, &cache, &gamma).unwrap();
        let f = |x: &Tensor, g: &Tensor, b: &Tensor| bn(x, g, b).0.dot(&rw);
        note(1, rel_err(gx.data(), &numeric(&x, h, |t| f(t, &gamma, &beta))), 1e-3, "batchnorm x")?;
        note(1, rel_err(gg.data(), &numeric(&gamma, h, |t| f(&x, t, &beta))), 1e-3, "batchnorm gamma")?;
        note(1, rel_err(gb.data(), &numeric(&beta, h, |t| f(&x, &gamma, t))), 1e-3, "batchnorm beta")?;

        // transposed convolution, 2x2x2 stride 2
        let [d, hh, w] = spatial(&mut r, 1, 3);
        let (n, ci, co) = (r.random_range(1..=2), r.random_range(1..=3), r.random_range(1..=3));
        let x = rand_tensor(&mut r, [n, ci, d, hh, w]);
        let wt = rand_tensor(&mut r, [ci, co, 2, 2, 2]);
        let b = rand_tensor(&mut r, [co, 1, 1, 1, 1]);
        let rw = rand_tensor(&mut r, [n, co, 2 * d, 2 * hh, 2 * w]);
        let g = convtranspose3d_backward(&rw, &x, &wt).unwrap();
        let f = |x: &Tensor, wt: &Tensor, b: &Tensor| convtranspose3d(x, wt, b).unwrap().dot(&rw);
        note(2, rel_err(g.grad_x.data(), &numeric(&x, h, |t| f(t, &wt, &b))), 1e-3, "convT x")?;
        note(2, rel_err(g.grad_weight.data(), &numeric(&wt, h, |t| f(&x, t, &b))), 1e-3, "convT w")?;
        note(2, rel_err(g.grad_bias.data(), &numeric(&b, h, |t| f(&x, &wt, t))), 1e-3, "convT b")?;

        // max pooling away from ties: redraw until every window's top two differ by > 1e-3
        let dims: [usize; 3] = std::array::from_fn(|_| 2 * r.random_range(1..=3));
        let (n, c) = (r.random_range(1..=2), r.random_range(1..=3));
        let x = loop {
            let x = rand_tensor(&mut r, [n, c, dims[0], dims[1], dims[2]]);
            if pool_gaps_ok(&x, 1e-3) {
                break x;
            }
        };
        let (y, arg) = maxpool3d(&x).unwrap();
        let rw = rand_tensor(&mut r, y.shape());
        let gx = maxpool3d_backward(&rw, &arg, x.shape()).unwrap();
        let num = numeric(&x, 1e-6, |t| maxpool3d(t).unwrap().0.dot(&rw));
        note(3, rel_err(gx.data(), &num), 1e-3, "maxpool x")?;

        // softmax followed by pooled Dice loss
        let [d, hh, w] = spatial(&mut r, 1, 6);
        let n = r.random_range(1..=2);
        let logits = rand_tensor(&mut r, [n, 2, d, hh, w]);
        let mut target = Tensor::zeros([n, 2, d, hh, w]);
        for i in 0..n {
            let fg: Vec<f64> = (0..d * hh * w).map(|_| r.random_bool(0.4) as u8 as f64).collect();
            target.channel_mut(i, 0).iter_mut().zip(&fg).for_each(|(b, f)| *b = 1.0 - f);
            target.channel_mut(i, 1).copy_from_slice(&fg);
        }
        let (_, grad) = softmax_dice_loss(&logits, &target).unwrap();
        let num = numeric(&logits, h, |t| softmax_dice_loss(t, &target).unwrap().0);
        note(4, rel_err(grad.data(), &num), 1e-4, "softmax + dice")?;
    }
    Ok(format!(
        "20 trials per op; worst conv {:.1e}, bn {:.1e}, convT {:.1e}, pool {:.1e}, dice {:.1e}",
        worst[0], worst[1], worst[2], worst[3], worst[4]
    ))
}

fn pool_gaps_ok(x: &Tensor, gap: f64) -> bool {
    let [n, c, d, h, w] = x.shape();
    for i in 0..n {
        for ch in 0..c {
            let v = x.channel(i, ch);
            for z in (0..d).step_by(2) {
                for y in (0..h).step_by(2) {
                    for xx in (0..w).step_by(2) {
                        let mut win: Vec<f64> = Vec::with_capacity(8);
                        for (dz, dy, dx) in (0..8).map(|k| (k >> 2, (k >> 1) & 1, k & 1)) {
                            win.push(v[((z + dz) * h + y + dy) * w + xx + dx]);
                        }
                        win.sort_by(|a, b| b.total_cmp(a));
                        if win[0] - win[1] <= gap {
                            return false;
                        }
                    }
                }
            }
        }
    }
    true
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4() -> Outcome {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let [d, h, w] = spatial(&mut r, 1, 5);
        let (n, ci, co) = (r.random_range(1..=2), r.random_range(1..=4), r.random_range(1..=4));
        let wt = rand_tensor(&mut r, [ci, co, 2, 2, 2]);
        let y = rand_tensor(&mut r, [n, ci, d, h, w]);
        let x = rand_tensor(&mut r, [n, co, 2 * d, 2 * h, 2 * w]);
        let zero = Tensor::zeros([co, 1, 1, 1, 1]);
        let lhs = conv3d_stride2(&x, &wt).unwrap().dot(&y);
        let rhs = x.dot(&convtranspose3d(&y, &wt, &zero).unwrap());
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
        ensure(rel < 1e-6, || format!("<conv(x), y> = {lhs}, <x, convT(y)> = {rhs}"))?;
    }
    Ok(format!("50 pairs, worst relative gap {worst:.1e}"))
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5() -> Outcome {
    let mut r = rng(42);
    let pc = PhantomConfig::default();
    let mut make = || {
        let (v, m) = ellipsoid_phantom(&pc, &mut r).unwrap();
        PreprocessedCase::whole(normalize_minmax(&v).unwrap(), Some(m)).unwrap()
    };
    let train_set: Vec<_> = (0..6).map(|_| make()).collect();
    let held_out: Vec<_> = (0..2).map(|_| make()).collect();
    let cfg = TrainConfig {
        batch_size: 2,
        patch: [32; 3],
        epochs: 20,
        iterations_per_epoch: 100,
        adam: AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 },
        seed: 1,
        validation_overlap: [16; 3],
        prefetch: 2,
    };
    let unet = UNetConfig { levels: 4, base_features: 8, in_channels: 1, out_classes: 2 };
    let start = Instant::now();
    let out = train(&train_set, &[], unet, &cfg, &AugmentConfig::disabled(), &mut |rec, _| {
        eprintln!("  [phantom] epoch {:>2}: loss {:.4} ({:.0}s)", rec.epoch, rec.train_loss, start.elapsed().as_secs_f64());
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    let steps = out.model.step();
    ensure(steps <= 2000, || format!("{steps} optimizer steps"))?;
    let score = |c: &PreprocessedCase| {
        let pred = predict_volume(&out.model, c, cfg.patch, cfg.validation_overlap).unwrap();
        dsc(&pred, c.mask.as_ref().unwrap()).unwrap()
    };
    let train_dsc: Vec<f64> = train_set.iter().map(score).collect();
    let held_dsc: Vec<f64> = held_out.iter().map(score).collect();
    let first = out.history.first().unwrap().train_loss;
    let last = out.history.last().unwrap().train_loss;
    let detail = format!(
        "{steps} steps in {:.0}s; train dsc min {:.4}, held-out dsc min {:.4}, loss {first:.3} -> {last:.3}",
        start.elapsed().as_secs_f64(),
        train_dsc.iter().copied().fold(1.0, f64::min),
        held_dsc.iter().copied().fold(1.0, f64::min),
    );
    ensure(train_dsc.iter().all(|d| *d >= 0.95), || format!("training dsc {train_dsc:?}; {detail}"))?;
    ensure(held_dsc.iter().all(|d| *d >= 0.90), || format!("held-out dsc {held_dsc:?}; {detail}"))?;
    ensure(last <= 0.5 * first, || format!("loss fell less than half; {detail}"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- criterion 6

/// Foreground probability equal to the voxel intensity: a pointwise network
/// whose direct whole-volume application is the volume itself.
struct Identity;

impl PatchPredictor for Identity {
    fn predict_patch(&self, x: &Tensor) -> femseg::Result<Tensor> {
        let [n, _, d, h, w] = x.shape();
        let mut out = Tensor::zeros([n, 2, d, h, w]);
        for i in 0..n {
            out.channel_mut(i, 1).copy_from_slice(x.channel(i, 0));
            let fg = x.channel(i, 0).to_vec();
            out.channel_mut(i, 0).iter_mut().zip(fg).for_each(|(b, f)| *b = 1.0 - f);
        }
        Ok(out)
    }
}

fn criterion_6() -> Outcome {
    let grid = plan_patches([128; 3], [128; 3], [64; 3]).map_err(|e| e.to_string())?;
    ensure(grid.len() == 1, || format!("{} tiles for a 128^3 volume", grid.len()))?;
    let mut r = rng(6);
    let mut tiles = 0;
    for trial in 0..20 {
        let dims: [usize; 3] = std::array::from_fn(|_| r.random_range(1..=60));
        let patch: [usize; 3] = std::array::from_fn(|_| 4 * r.random_range(1..=6));
        let overlap: [usize; 3] = std::array::from_fn(|a| r.random_range(0..patch[a]));
        let shape = Shape3::from_array(dims);
        let data: Vec<f32> = (0..shape.len()).map(|_| r.random::<f32>()).collect();
        let v = Volume::new(shape, data, [1.0; 3], [0.0; 3], IntensityUnit::Normalized).unwrap();
        tiles += plan_patches(dims, patch, overlap).unwrap().len();

        let c = r.random_range(0.05..0.95);
        let probs = predict_probabilities(&ConstantPredictor(c), &v, patch, overlap, 1).map_err(|e| e.to_string())?;
        ensure(probs.foreground.iter().all(|p| (p - c).abs() < 1e-12), || format!("trial {trial}: constant not preserved"))?;
        let direct = if c > 0.5 { 1 } else { 0 };
        ensure(probs.threshold().iter().all(|m| *m == direct), || format!("trial {trial}: constant mask differs"))?;

        let probs = predict_probabilities(&Identity, &v, patch, overlap, 1).map_err(|e| e.to_string())?;
        let max_err = probs.foreground.iter().zip(v.data()).map(|(p, x)| (p - *x as f64).abs()).fold(0.0, f64::max);
        ensure(max_err < 1e-12, || format!("trial {trial}: dims {dims:?} patch {patch:?}: stitched differs by {max_err}"))?;
        let direct: Vec<u8> = v.data().iter().map(|x| (*x as f64 > 0.5) as u8).collect();
        ensure(probs.threshold() == direct, || format!("trial {trial}: stitched mask differs from direct"))?;
    }
    Ok(format!("128^3 -> 1 tile; 20 random volumes ({tiles} tiles) match direct application"))
}

// ---------------------------------------------------------------- criterion 7

fn criterion_7() -> Outcome {
    let shape = Shape3::cube(6);
    let mut r = rng(7);
    let data: Vec<f32> = (0..shape.len()).map(|_| r.random::<f32>()).collect();
    let v = Volume::new(shape, data, [1.0; 3], [0.0; 3], IntensityUnit::Normalized).unwrap();
    let m = LabelMask::from_fn(shape, [1.0; 3], [0.0; 3], |z, y, x| (1..5).contains(&z) && (2..5).contains(&y) && x < 4).unwrap();
    let case = PreprocessedCase::whole(v.clone(), Some(m.clone())).unwrap();
    let cfg = AugmentConfig::default();
    ensure(cfg.apply_probability == 0.35, || "default probability is not 0.35".into())?;
    let mut fired = [0usize; 4];
    for i in 0..10_000 {
        let (out, t) = augment_pair_traced(&case, &cfg, &mut r).map_err(|e| e.to_string())?;
        for (k, f) in [t.brightness, t.rotation, t.scaling, t.elastic].into_iter().enumerate() {
            fired[k] += f as usize;
        }
        let om = out.mask.as_ref().unwrap();
        ensure(om.data().iter().all(|b| *b <= 1), || format!("draw {i}: mask not binary"))?;
        ensure(out.input.data().iter().all(|x| (0.0..=1.0).contains(x)), || format!("draw {i}: image leaves [0, 1]"))?;
    }
    for (k, name) in ["brightness", "rotation", "scaling", "elastic"].iter().enumerate() {
        ensure((3350..=3650).contains(&fired[k]), || format!("{name} fired {} times", fired[k]))?;
    }
    let (ev, em) = elastic_deform(&v, &m, 0.0, 10.0, &mut r).map_err(|e| e.to_string())?;
    ensure(ev == v && em == m, || "alpha = 0 elastic deformation changed the pair".into())?;
    let (av, am) = apply_affine(&v, &m, [0.0; 3], 1.0).map_err(|e| e.to_string())?;
    ensure(av == v && am == m, || "identity affine changed the pair".into())?;
    Ok(format!("fired brightness/rotation/scaling/elastic = {fired:?} of 10000; no-ops exact"))
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8() -> Outcome {
    let shape = Shape3::new(3, 512, 512);
    let mut r = rng(8);
    let mut markers = HashSet::new();
    while markers.len() < 1000 {
        markers.insert([r.random_range(0..shape.d), r.random_range(0..shape.h), r.random_range(0..shape.w)]);
    }
    let mask = LabelMask::from_fn(shape, [1.0, 0.977, 0.977], [0.0; 3], |z, y, x| markers.contains(&[z, y, x])).unwrap();
    let v = Volume::new(shape, vec![0.5; shape.len()], [1.0, 0.977, 0.977], [0.0; 3], IntensityUnit::Normalized).unwrap();
    let (right, left) = split_halves(&v, Some(&mask)).map_err(|e| e.to_string())?;
    let left = mirror_lr(&left);
    let mut recovered = HashSet::new();
    for half in [&right, &left] {
        let hm = half.mask.as_ref().unwrap();
        let s = hm.shape();
        for i in (0..s.len()).filter(|i| hm.data()[*i] == 1) {
            let orig = half.geometry.to_original(s, s.coords(i));
            ensure(markers.contains(&orig), || format!("voxel {:?} maps to non-marker {orig:?}", s.coords(i)))?;
            recovered.insert(orig);
        }
    }
    ensure(recovered.len() == markers.len(), || format!("recovered {} of {} markers", recovered.len(), markers.len()))?;
    let a = restore_geometry(right.mask.as_ref().unwrap(), &right.geometry).map_err(|e| e.to_string())?;
    let b = restore_geometry(left.mask.as_ref().unwrap(), &left.geometry).map_err(|e| e.to_string())?;
    ensure(a.shape() == shape && b.shape() == shape, || format!("restored to {} not {shape}", a.shape()))?;
    ensure(union_masks(&a, &b).unwrap().data() == mask.data(), || "restored union differs from the input mask".into())?;
    Ok("1000 markers recovered exactly; restored masks 512x512 in-plane".into())
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9() -> Outcome {
    let s = Shape3::new(5, 10, 12);
    let blob = |z: usize, y: usize, x: usize| z < 4 && y < 5 && x < 5;
    let speck = |z: usize, y: usize, x: usize| z == 0 && y == 0 && (7..10).contains(&x);
    let m = LabelMask::from_fn(s, [1.0; 3], [0.0; 3], |z, y, x| blob(z, y, x) || speck(z, y, x)).unwrap();
    let out = largest_component(&m).map_err(|e| e.to_string())?;
    ensure(out.count_foreground() == 100 && out == LabelMask::from_fn(s, [1.0; 3], [0.0; 3], blob).unwrap(), || {
        "speck not removed cleanly".into()
    })?;
    let mut r = rng(9);
    for trial in 0..300 {
        let shape = Shape3::new(r.random_range(1..=12), r.random_range(1..=12), r.random_range(1..=12));
        let m = random_mask(&mut r, shape, [1.0; 3]);
        if m.count_foreground() == 0 {
            continue;
        }
        let once = largest_component(&m).unwrap();
        ensure(largest_component(&once).unwrap() == once, || format!("trial {trial}: not idempotent"))?;
        ensure(label_components(&once, Connectivity::TwentySix).count() == 1, || format!("trial {trial}: not one component"))?;
        ensure(once.data().iter().zip(m.data()).all(|(a, b)| a <= b), || format!("trial {trial}: added voxels"))?;
    }
    Ok("speck removed; 300 random masks idempotent and single-component".into())
}

// ---------------------------------------------------------------- criterion 10

fn random_image(r: &mut ChaCha8Rng, kind: usize) -> NiftiImage {
    let shape = Shape3::new(r.random_range(1..=12), r.random_range(1..=12), r.random_range(1..=12));
    let spacing: [f32; 3] = std::array::from_fn(|_| r.random_range(0.1..5.0));
    let origin: [f32; 3] = std::array::from_fn(|_| r.random_range(-300.0..300.0));
    match kind {
        0 => {
            let data = (0..shape.len()).map(|_| r.random_range(-1024i16..=3071) as f32).collect();
            let v = Volume::new(shape, data, spacing, origin, IntensityUnit::Hounsfield).unwrap();
            NiftiImage::Volume(v.with_storage(VoxelType::Int16).unwrap())
        }
        1 => {
            let data = (0..shape.len()).map(|_| r.random_bool(0.3) as u8).collect();
            NiftiImage::Mask(LabelMask::new(shape, data, spacing, origin).unwrap())
        }
        _ => {
            let unit = if r.random_bool(0.5) { IntensityUnit::Normalized } else { IntensityUnit::Hounsfield };
            // any finite bit pattern for raw volumes; [0, 1] for normalized ones
            let data = (0..shape.len())
                .map(|_| match unit {
                    IntensityUnit::Normalized => r.random::<f32>(),
                    _ => f32::from_bits(r.random::<u32>() & 0xBF7F_FFFF),
                })
                .collect();
            NiftiImage::Volume(Volume::new(shape, data, spacing, origin, unit).unwrap())
        }
    }
}

fn bits_equal(a: &NiftiImage, b: &NiftiImage) -> bool {
    match (a, b) {
        (NiftiImage::Volume(x), NiftiImage::Volume(y)) => {
            x.shape() == y.shape()
                && x.storage() == y.storage()
                && x.unit() == y.unit()
                && x.spacing().map(f32::to_bits) == y.spacing().map(f32::to_bits)
                && x.origin().map(f32::to_bits) == y.origin().map(f32::to_bits)
                && x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits())
        }
        (NiftiImage::Mask(x), NiftiImage::Mask(y)) => {
            x.spacing().map(f32::to_bits) == y.spacing().map(f32::to_bits)
                && x.origin().map(f32::to_bits) == y.origin().map(f32::to_bits)
                && x == y
        }
        _ => false,
    }
}

fn criterion_10() -> Outcome {
    let mut r = rng(10);
    let mut samples = Vec::new();
    for i in 0..100 {
        let img = random_image(&mut r, i % 3);
        let bytes = write_volume(&img).map_err(|e| e.to_string())?;
        let back = read_volume(&bytes).map_err(|e| format!("volume {i}: {e}"))?;
        ensure(bits_equal(&img, &back), || format!("volume {i} did not round-trip"))?;
        samples.push(bytes);
    }
    let (mut accepted, mut rejected) = (0, 0);
    for k in 0..1000 {
        let mut bytes = samples[k % samples.len()].clone();
        match r.random_range(0..4) {
            0 => {
                for _ in 0..r.random_range(1..=8) {
                    let at = r.random_range(0..352.min(bytes.len()));
                    bytes[at] ^= 1 << r.random_range(0..8);
                }
            }
            1 => {
                // extreme value in a 16-bit slot of the header
                let at = 2 * r.random_range(0..174);
                let v = [i16::MIN, -1, 0, 1, 7, i16::MAX][r.random_range(0..6)];
                bytes[at..at + 2].copy_from_slice(&v.to_le_bytes());
            }
            2 => {
                // random float in a 32-bit slot (pixdim, vox_offset, scaling, ...)
                let at = 4 * r.random_range(0..87);
                let v = [f32::NAN, f32::INFINITY, -1.0, 0.0, 1e30, f32::MIN_POSITIVE][r.random_range(0..6)];
                bytes[at..at + 4].copy_from_slice(&v.to_le_bytes());
            }
            _ => {
                let len = r.random_range(0..bytes.len());
                bytes.truncate(len);
            }
        }
        match catch_unwind(|| read_volume(&bytes)) {
            Ok(Ok(_)) => accepted += 1,
            Ok(Err(_)) => rejected += 1,
            Err(_) => return Err(format!("parser panicked on mutation {k}")),
        }
    }
    Ok(format!("100 volumes bit-exact; 1000 mutated headers: {rejected} rejected, {accepted} accepted, no panics"))
}

// ---------------------------------------------------------------- criterion 11

fn criterion_11() -> Outcome {
    let shape = Shape3::new(128, 256, 512);
    let mut model = UNetModel::new(UNetConfig::default(), 11).map_err(|e| e.to_string())?;
    // fresh batch-norm statistics, as after a single training batch
    for s in model.running_stats_mut() {
        s.tracked = 1;
    }
    let mut r = rng(11);
    let data: Vec<f32> = (0..shape.len()).map(|_| r.random::<f32>()).collect();
    let v = Volume::new(shape, data, [1.0; 3], [0.0; 3], IntensityUnit::Normalized).unwrap();
    let case = PreprocessedCase::whole(v, None).unwrap();
    let start = Instant::now();
    let m = predict_volume(&model, &case, [128; 3], [64; 3]).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(m.shape() == shape, || "prediction has the wrong shape".into())?;
    Ok(format!("512x256x128 volume, 32 base features, patch 128^3 / overlap 64^3: {secs:.1} s wall-clock"))
}

fn main() {
    let throughput = std::env::var_os("FEMSEG_THROUGHPUT").is_some();
    let criteria: [(u32, &str, fn() -> Outcome); 11] = [
        (1, "metric oracle equivalence", criterion_1),
        (2, "dice hand cases", criterion_2),
        (3, "gradient suite", criterion_3),
        (4, "adjoint identity", criterion_4),
        (5, "phantom overfit", criterion_5),
        (6, "tiling exactness", criterion_6),
        (7, "augmentation statistics", criterion_7),
        (8, "geometry round-trip", criterion_8),
        (9, "largest component", criterion_9),
        (10, "NIfTI round-trip and fuzz", criterion_10),
        (11, "throughput (non-binding)", criterion_11),
    ];
    // optional comma-separated subset, e.g. FEMSEG_CRITERIA=1,2,6
    let selected: Option<Vec<u32>> = std::env::var("FEMSEG_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for (n, name, run) in criteria {
        if selected.as_ref().is_some_and(|sel| !sel.contains(&n)) {
            println!("criterion {n:>2} {name}: SKIPPED (not in FEMSEG_CRITERIA)");
            continue;
        }
        if n == 11 && !throughput {
            println!("criterion {n:>2} {name}: SKIPPED (set FEMSEG_THROUGHPUT=1 to run)");
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} {name}: PASS ({detail}) [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} {name}: FAIL ({why}) [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
