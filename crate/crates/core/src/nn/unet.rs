//! Four-level 3D u-net with explicit forward tape and backward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::activation::{relu_backward, relu_inplace, softmax_voxelwise};
use super::adam::{adam_update, AdamConfig, Moments};
use super::batchnorm::{batchnorm_backward, batchnorm_forward, BnCache, BnMode, RunningStats};
use super::conv::{conv3d_backward, conv3d_forward};
use super::conv_transpose::{convtranspose3d, convtranspose3d_backward};
use super::loss::softmax_dice_loss;
use super::pool::{maxpool3d, maxpool3d_backward};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    /// Resolution levels, including the bottleneck.
    pub levels: usize,
    /// Feature maps at the highest resolution; doubled at each level.
    pub base_features: usize,
    pub in_channels: usize,
    pub out_classes: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self { levels: 4, base_features: 32, in_channels: 1, out_classes: 2 }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > 8 {
            return Err(Error::Config(format!("levels must be in 1..=8, got {}", self.levels)));
        }
        if self.base_features == 0 || self.in_channels == 0 {
            return Err(Error::Config("feature and input channel counts must be positive".into()));
        }
        if self.out_classes != 2 {
            return Err(Error::Config(format!("segmentation head must have 2 classes, got {}", self.out_classes)));
        }
        Ok(())
    }

    pub fn features(&self, level: usize) -> usize {
        self.base_features << level
    }

    /// Spatial dims must be divisible by this factor.
    pub fn divisor(&self) -> usize {
        1 << (self.levels - 1)
    }

    pub fn check_input(&self, shape: [usize; 5]) -> Result<()> {
        let k = self.divisor();
        if shape[1] != self.in_channels {
            return Err(Error::Shape(format!("input has {} channels, model expects {}", shape[1], self.in_channels)));
        }
        if shape[2..].iter().any(|d| *d == 0 || d % k != 0) {
            return Err(Error::Shape(format!("spatial dims {:?} must be positive multiples of {k}", &shape[2..])));
        }
        Ok(())
    }
}

/// Indices of one conv-BN-ReLU unit into the parameter and statistics tables.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Unit {
    weight: usize,
    bias: usize,
    gamma: usize,
    beta: usize,
    stats: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct UpConv {
    weight: usize,
    bias: usize,
}

#[derive(Debug, Clone)]
struct UnitCache {
    input: Tensor,
    bn: BnCache,
    output: Tensor,
}

/// Activations recorded by a training forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    enc: Vec<[UnitCache; 2]>,
    pool: Vec<(Vec<usize>, [usize; 5])>,
    up_in: Vec<Tensor>,
    dec: Vec<[UnitCache; 2]>,
    head_in: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNetModel {
    config: UNetConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    stat_names: Vec<String>,
    stats: Vec<RunningStats>,
    moments: Vec<Moments>,
    step: u64,
    enc: Vec<[Unit; 2]>,
    up: Vec<UpConv>,
    dec: Vec<[Unit; 2]>,
    head: UpConv,
}

struct Builder {
    names: Vec<String>,
    params: Vec<Tensor>,
    stat_names: Vec<String>,
    stats: Vec<RunningStats>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn push(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.params.push(t);
        self.params.len() - 1
    }

    fn he(&mut self, shape: [usize; 5], fan_in: usize) -> Tensor {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| normal.sample(&mut self.rng)).collect()).expect("shape")
    }

    fn unit(&mut self, prefix: &str, cin: usize, cout: usize) -> Unit {
        let w = self.he([cout, cin, 3, 3, 3], cin * 27);
        let weight = self.push(format!("{prefix}.conv.weight"), w);
        let bias = self.push(format!("{prefix}.conv.bias"), Tensor::vector(vec![0.0; cout]));
        let gamma = self.push(format!("{prefix}.bn.gamma"), Tensor::vector(vec![1.0; cout]));
        let beta = self.push(format!("{prefix}.bn.beta"), Tensor::vector(vec![0.0; cout]));
        self.stat_names.push(format!("{prefix}.bn"));
        self.stats.push(RunningStats::new(cout));
        Unit { weight, bias, gamma, beta, stats: self.stats.len() - 1 }
    }
}

impl UNetModel {
    /// Fresh model with He-normal convolution weights drawn from `seed`.
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            names: Vec::new(),
            params: Vec::new(),
            stat_names: Vec::new(),
            stats: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let mut enc = Vec::new();
        let mut cin = config.in_channels;
        for l in 0..config.levels {
            let f = config.features(l);
            let u0 = b.unit(&format!("enc{l}.0"), cin, f);
            let u1 = b.unit(&format!("enc{l}.1"), f, f);
            enc.push([u0, u1]);
            cin = f;
        }
        let mut up = Vec::new();
        let mut dec = Vec::new();
        for l in 0..config.levels - 1 {
            let (fi, fo) = (config.features(l + 1), config.features(l));
            let w = b.he([fi, fo, 2, 2, 2], fi);
            let weight = b.push(format!("up{l}.weight"), w);
            let bias = b.push(format!("up{l}.bias"), Tensor::vector(vec![0.0; fo]));
            up.push(UpConv { weight, bias });
            let u0 = b.unit(&format!("dec{l}.0"), 2 * fo, fo);
            let u1 = b.unit(&format!("dec{l}.1"), fo, fo);
            dec.push([u0, u1]);
        }
        let f0 = config.features(0);
        let w = b.he([config.out_classes, f0, 1, 1, 1], f0);
        let weight = b.push("head.weight".into(), w);
        let bias = b.push("head.bias".into(), Tensor::vector(vec![0.0; config.out_classes]));
        let moments = b.params.iter().map(|p| Moments::zeros(p.len())).collect();
        Ok(Self {
            config,
            names: b.names,
            params: b.params,
            stat_names: b.stat_names,
            stats: b.stats,
            moments,
            step: 0,
            enc,
            up,
            dec,
            head: UpConv { weight, bias },
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn stat_names(&self) -> &[String] {
        &self.stat_names
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.stats
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats] {
        &mut self.stats
    }

    pub fn moments(&self) -> &[Moments] {
        &self.moments
    }

    pub fn moments_mut(&mut self) -> &mut [Moments] {
        &mut self.moments
    }

    /// Number of optimizer steps taken.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Output widths of the encoder levels.
    pub fn encoder_widths(&self) -> Vec<usize> {
        self.enc.iter().map(|u| self.params[u[1].weight].shape()[0]).collect()
    }

    fn unit_forward(
        &self,
        u: Unit,
        x: &Tensor,
        stats: &mut [RunningStats],
        mode: BnMode,
    ) -> Result<(Tensor, Option<BnCache>)> {
        let z = conv3d_forward(x, &self.params[u.weight], &self.params[u.bias], 1)?;
        let (mut y, cache) =
            batchnorm_forward(&z, &self.params[u.gamma], &self.params[u.beta], &mut stats[u.stats], mode)?;
        relu_inplace(&mut y);
        Ok((y, cache))
    }

    fn run(&self, x: &Tensor, stats: &mut [RunningStats], mode: BnMode) -> Result<(Tensor, Option<Tape>)> {
        self.config.check_input(x.shape())?;
        let train = mode == BnMode::Train;
        let levels = self.config.levels;
        let mut enc_c = Vec::new();
        let mut pool_c = Vec::new();
        let mut skips = Vec::new();
        let mut h = x.clone();
        for l in 0..levels {
            let [u0, u1] = self.enc[l];
            let (a, c0) = self.unit_forward(u0, &h, stats, mode)?;
            let (b, c1) = self.unit_forward(u1, &a, stats, mode)?;
            if train {
                enc_c.push([
                    UnitCache { input: h, bn: c0.expect("train cache"), output: a.clone() },
                    UnitCache { input: a, bn: c1.expect("train cache"), output: b.clone() },
                ]);
            }
            if l + 1 < levels {
                let (p, arg) = maxpool3d(&b)?;
                if train {
                    pool_c.push((arg, b.shape()));
                }
                skips.push(b);
                h = p;
            } else {
                h = b;
            }
        }
        let mut up_in = vec![Tensor::zeros([0; 5]); levels - 1];
        let mut dec_c: Vec<Option<[UnitCache; 2]>> = (0..levels - 1).map(|_| None).collect();
        for l in (0..levels - 1).rev() {
            let upc = self.up[l];
            let up = convtranspose3d(&h, &self.params[upc.weight], &self.params[upc.bias])?;
            if train {
                up_in[l] = h;
            }
            let cat = Tensor::concat_channels(&skips[l], &up)?;
            let [u0, u1] = self.dec[l];
            let (a, c0) = self.unit_forward(u0, &cat, stats, mode)?;
            let (b, c1) = self.unit_forward(u1, &a, stats, mode)?;
            if train {
                dec_c[l] = Some([
                    UnitCache { input: cat, bn: c0.expect("train cache"), output: a.clone() },
                    UnitCache { input: a, bn: c1.expect("train cache"), output: b.clone() },
                ]);
            }
            h = b;
        }
        let logits = conv3d_forward(&h, &self.params[self.head.weight], &self.params[self.head.bias], 0)?;
        let tape = train.then(|| Tape {
            enc: enc_c,
            pool: pool_c,
            up_in,
            dec: dec_c.into_iter().map(|c| c.expect("decoder cache")).collect(),
            head_in: h,
        });
        Ok((logits, tape))
    }

    /// Training-mode forward pass: batch statistics, running estimates updated.
    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Tensor, Tape)> {
        let mut stats = std::mem::take(&mut self.stats);
        let out = self.run(x, &mut stats, BnMode::Train);
        self.stats = stats;
        let (logits, tape) = out?;
        Ok((logits, tape.expect("train tape")))
    }

    /// Inference forward pass using running batch-norm statistics.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        // eval mode never writes the statistics; the copy keeps `&self`
        let mut stats = self.stats.clone();
        Ok(self.run(x, &mut stats, BnMode::Eval)?.0)
    }

    /// Softmax class probabilities in eval mode.
    pub fn predict_probs(&self, x: &Tensor) -> Result<Tensor> {
        Ok(softmax_voxelwise(&self.forward_eval(x)?))
    }

    fn unit_backward(&mut self, u: Unit, cache: &UnitCache, g: &Tensor) -> Result<Tensor> {
        let g = relu_backward(g, &cache.output);
        let (gz, gg, gb) = batchnorm_backward(&g, &cache.bn, &self.params[u.gamma])?;
        self.params[u.gamma].accumulate_grad(gg.data());
        self.params[u.beta].accumulate_grad(gb.data());
        let cg = conv3d_backward(&gz, &cache.input, &self.params[u.weight], 1)?;
        self.params[u.weight].accumulate_grad(cg.grad_weight.data());
        self.params[u.bias].accumulate_grad(cg.grad_bias.data());
        Ok(cg.grad_x)
    }

    /// Accumulates parameter gradients of a scalar loss given `dloss/dlogits`.
    pub fn backward(&mut self, tape: &Tape, grad_logits: &Tensor) -> Result<()> {
        let levels = self.config.levels;
        let hg = conv3d_backward(grad_logits, &tape.head_in, &self.params[self.head.weight], 0)?;
        self.params[self.head.weight].accumulate_grad(hg.grad_weight.data());
        self.params[self.head.bias].accumulate_grad(hg.grad_bias.data());
        let mut g = hg.grad_x;
        let mut g_skip = vec![Tensor::zeros([0; 5]); levels - 1];
        for l in 0..levels - 1 {
            let [u0, u1] = self.dec[l];
            let g1 = self.unit_backward(u1, &tape.dec[l][1], &g)?;
            let gcat = self.unit_backward(u0, &tape.dec[l][0], &g1)?;
            let (gs, gu) = gcat.split_channels(self.config.features(l));
            g_skip[l] = gs;
            let upc = self.up[l];
            let ug = convtranspose3d_backward(&gu, &tape.up_in[l], &self.params[upc.weight])?;
            self.params[upc.weight].accumulate_grad(ug.grad_weight.data());
            self.params[upc.bias].accumulate_grad(ug.grad_bias.data());
            g = ug.grad_x;
        }
        for l in (0..levels).rev() {
            let [u0, u1] = self.enc[l];
            let g1 = self.unit_backward(u1, &tape.enc[l][1], &g)?;
            g = self.unit_backward(u0, &tape.enc[l][0], &g1)?;
            if l > 0 {
                let (arg, shape) = &tape.pool[l - 1];
                let mut gp = maxpool3d_backward(&g, arg, *shape)?;
                gp.data_mut().iter_mut().zip(g_skip[l - 1].data()).for_each(|(a, b)| *a += b);
                g = gp;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Tensor::zero_grad);
    }

    /// One Adam update from the accumulated gradients, which are then cleared.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        self.step += 1;
        let t = self.step;
        for (p, m) in self.params.iter_mut().zip(&mut self.moments) {
            let grad = p.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()]);
            adam_update(p.data_mut(), &grad, m, t, cfg)?;
        }
        self.zero_grad();
        Ok(())
    }

    /// Forward, Dice loss, backward and Adam update on one batch; returns the loss.
    pub fn train_step(&mut self, x: &Tensor, target: &Tensor, cfg: &AdamConfig) -> Result<f64> {
        let (logits, tape) = self.forward_train(x)?;
        let (loss, grad) = softmax_dice_loss(&logits, target)?;
        drop(logits);
        self.zero_grad();
        self.backward(&tape, &grad)?;
        drop(tape);
        self.adam_step(cfg)?;
        Ok(loss)
    }
}
