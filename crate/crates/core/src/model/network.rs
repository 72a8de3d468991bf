//! The multi-task encoder-decoder and its reverse-mode gradient.
//!
//! Layout, for `L` levels and `M` multi-task blocks:
//!
//! * contracting path: one `conv3x3 -> norm -> leaky ReLU` block per level,
//!   2x2 max pooling between levels;
//! * expansive path: bilinear 2x upsampling, concatenation with the matching
//!   contracting level, then a single-task block for each of the `L - 1 - M`
//!   coarsest levels;
//! * the `M` finest levels are multi-task blocks. Both paths go through the
//!   same first convolution (shared weights, separate normalization), the
//!   segmentation path then passes a two-convolution residual unit, and each
//!   path ends with its own block;
//! * one 1x1 output convolution per task, followed by a channel softmax.
//!
//! Task 0 reads the segmentation path, task 1 the approximation path, and
//! auxiliary tasks read the segmentation path.
//!
//! Initialization: convolution kernels are normal with standard deviation
//! `sqrt(2 / (1 + slope^2)) / sqrt(fan_in)`, biases and shifts start at zero,
//! normalization scales at one.

use super::config::{NetworkConfig, Normalization};
use super::loss::{head_gradients, multitask_loss, TaskOutputs};
use super::config::LossWeights;
use super::ops::{self, BatchStats};
use super::params::{sample_init, Init, ModelParams};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::raster::{Image, LabelField};
use crate::rng::Rng;

/// Momentum of the running normalization statistics.
pub const RUNNING_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers.
    Train,
    /// Running statistics in normalization layers.
    Eval,
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    weight: usize,
    bias: usize,
    cout: usize,
    k: usize,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
}

#[derive(Debug, Clone, Copy)]
struct ConvBlock {
    conv: Conv,
    norm: Option<Norm>,
}

#[derive(Debug, Clone, Copy)]
struct MultiTaskBlock {
    level: usize,
    shared: Conv,
    seg_norm: Option<Norm>,
    app_norm: Option<Norm>,
    residual_first: ConvBlock,
    residual_second: ConvBlock,
    seg_out: ConvBlock,
    app_out: ConvBlock,
}

/// Parameter layout of a network; the tensors themselves live in
/// [`ModelParams`].
#[derive(Debug, Clone)]
pub struct Network {
    cfg: NetworkConfig,
    encoder: Vec<ConvBlock>,
    /// Single-task expansive blocks, coarsest first, with their level.
    bottom: Vec<(usize, ConvBlock)>,
    multitask: Vec<MultiTaskBlock>,
    heads: Vec<Conv>,
}

struct Builder<'a, S> {
    params: ModelParams<S>,
    rng: &'a mut Rng,
    cfg: &'a NetworkConfig,
}

impl<S: Real> Builder<'_, S> {
    fn tensor(&mut self, name: String, shape: Vec<usize>, init: Init, trainable: bool) -> usize {
        let len = shape.iter().product();
        let value = sample_init(init, len, self.rng);
        self.params.push(name, shape, trainable, value)
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Conv {
        let slope = self.cfg.leaky_slope;
        let gain = (2.0 / (1.0 + slope * slope)).sqrt();
        let weight = self.tensor(
            format!("{name}.weight"),
            vec![cout, cin, k, k],
            Init::FanIn {
                fan_in: cin * k * k,
                gain,
            },
            true,
        );
        let bias = self.tensor(format!("{name}.bias"), vec![cout], Init::Zeros, true);
        Conv {
            weight,
            bias,
            cout,
            k,
        }
    }

    fn norm(&mut self, name: &str, channels: usize) -> Option<Norm> {
        if self.cfg.normalization == Normalization::None {
            return None;
        }
        Some(Norm {
            gamma: self.tensor(format!("{name}.gamma"), vec![channels], Init::Ones, true),
            beta: self.tensor(format!("{name}.beta"), vec![channels], Init::Zeros, true),
            running_mean: self.tensor(format!("{name}.running_mean"), vec![channels], Init::Zeros, false),
            running_var: self.tensor(format!("{name}.running_var"), vec![channels], Init::Ones, false),
        })
    }

    fn block(&mut self, name: &str, cin: usize, cout: usize) -> ConvBlock {
        ConvBlock {
            conv: self.conv(&format!("{name}.conv"), cin, cout, 3),
            norm: self.norm(&format!("{name}.norm"), cout),
        }
    }
}

/// Network layout plus parameters.
#[derive(Debug, Clone)]
pub struct Model<S> {
    pub network: Network,
    pub params: ModelParams<S>,
}

/// Builds the layout and draws initial parameters from `rng`.
pub fn build_network<S: Real>(cfg: &NetworkConfig, rng: &mut Rng) -> Result<Model<S>> {
    cfg.validate()?;
    let mut b = Builder {
        params: ModelParams::empty(),
        rng,
        cfg,
    };
    let levels = cfg.levels;
    let m = cfg.multitask_blocks;

    let mut encoder = Vec::with_capacity(levels);
    for l in 0..levels {
        let cin = if l == 0 { cfg.in_channels } else { cfg.channels_at(l - 1) };
        encoder.push(b.block(&format!("enc{l}"), cin, cfg.channels_at(l)));
    }
    let mut bottom = Vec::new();
    for l in (m..levels - 1).rev() {
        let cin = cfg.channels_at(l + 1) + cfg.channels_at(l);
        bottom.push((l, b.block(&format!("dec{l}"), cin, cfg.channels_at(l))));
    }
    let mut multitask = Vec::new();
    for l in (0..m).rev() {
        let c = cfg.channels_at(l);
        let cin = cfg.channels_at(l + 1) + c;
        let name = format!("mt{l}");
        multitask.push(MultiTaskBlock {
            level: l,
            shared: b.conv(&format!("{name}.shared.conv"), cin, c, 3),
            seg_norm: b.norm(&format!("{name}.shared.seg_norm"), c),
            app_norm: b.norm(&format!("{name}.shared.app_norm"), c),
            residual_first: b.block(&format!("{name}.res1"), c, c),
            residual_second: b.block(&format!("{name}.res2"), c, c),
            seg_out: b.block(&format!("{name}.seg"), c, c),
            app_out: b.block(&format!("{name}.app"), c, c),
        });
    }
    let c0 = cfg.channels_at(0);
    let heads = cfg
        .task_classes
        .iter()
        .enumerate()
        .map(|(t, &classes)| b.conv(&format!("head{}", t + 1), c0, classes, 1))
        .collect();
    Ok(Model {
        network: Network {
            cfg: cfg.clone(),
            encoder,
            bottom,
            multitask,
            heads,
        },
        params: b.params,
    })
}

enum Op<S> {
    Input,
    Conv { x: usize, conv: Conv },
    TrainNorm { x: usize, norm: Norm, stats: BatchStats<S> },
    FrozenNorm { x: usize, norm: Norm, mean: Vec<S>, inv_std: Vec<S> },
    LeakyRelu { x: usize },
    Pool { x: usize, arg: Vec<u32> },
    Upsample { x: usize },
    Concat { a: usize, b: usize },
    Add { a: usize, b: usize },
}

/// Recorded forward computation.
pub struct ForwardPass<S> {
    values: Vec<Tensor<S>>,
    ops: Vec<Op<S>>,
    logits: Vec<usize>,
    pub outputs: TaskOutputs<S>,
}

struct Recorder<'a, S> {
    params: &'a ModelParams<S>,
    mode: Mode,
    slope: S,
    values: Vec<Tensor<S>>,
    ops: Vec<Op<S>>,
}

impl<S: Real> Recorder<'_, S> {
    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> usize {
        self.values.push(value);
        self.ops.push(op);
        self.values.len() - 1
    }

    fn conv(&mut self, x: usize, conv: Conv) -> usize {
        let w = &self.params.get(conv.weight).value;
        let b = &self.params.get(conv.bias).value;
        let y = ops::conv_forward(&self.values[x], w, b, conv.cout, conv.k);
        self.push(y, Op::Conv { x, conv })
    }

    fn norm(&mut self, x: usize, norm: Option<Norm>) -> usize {
        let Some(norm) = norm else { return x };
        let gamma = &self.params.get(norm.gamma).value;
        let beta = &self.params.get(norm.beta).value;
        match self.mode {
            Mode::Train => {
                let stats = ops::batch_stats(&self.values[x]);
                let y = ops::normalize(&self.values[x], &stats.mean, &stats.inv_std, gamma, beta);
                self.push(y, Op::TrainNorm { x, norm, stats })
            }
            Mode::Eval => {
                let eps = S::from_f64_lossy(ops::BN_EPS);
                let mean = self.params.get(norm.running_mean).value.clone();
                let inv_std: Vec<S> = self
                    .params
                    .get(norm.running_var)
                    .value
                    .iter()
                    .map(|&v| S::one() / (v + eps).sqrt())
                    .collect();
                let y = ops::normalize(&self.values[x], &mean, &inv_std, gamma, beta);
                self.push(y, Op::FrozenNorm { x, norm, mean, inv_std })
            }
        }
    }

    fn lrelu(&mut self, x: usize) -> usize {
        let y = ops::leaky_relu(&self.values[x], self.slope);
        self.push(y, Op::LeakyRelu { x })
    }

    fn block(&mut self, x: usize, block: ConvBlock) -> usize {
        let y = self.conv(x, block.conv);
        let y = self.norm(y, block.norm);
        self.lrelu(y)
    }

    fn pool(&mut self, x: usize) -> usize {
        let (y, arg) = ops::max_pool(&self.values[x]);
        self.push(y, Op::Pool { x, arg })
    }

    fn up_concat(&mut self, x: usize, skip: usize) -> usize {
        let up = ops::upsample(&self.values[x]);
        let up = self.push(up, Op::Upsample { x });
        let cat = ops::concat(&self.values[up], &self.values[skip]);
        self.push(cat, Op::Concat { a: up, b: skip })
    }

    fn add(&mut self, a: usize, b: usize) -> usize {
        let mut y = self.values[a].clone();
        y.add_assign(&self.values[b]);
        self.push(y, Op::Add { a, b })
    }
}

impl Network {
    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    fn forward<S: Real>(
        &self,
        params: &ModelParams<S>,
        input: Tensor<S>,
        mode: Mode,
    ) -> Result<ForwardPass<S>> {
        let d = self.cfg.divisor();
        if !input.h.is_multiple_of(d) || !input.w.is_multiple_of(d) || input.h == 0 || input.w == 0 {
            return Err(Error::Indivisible {
                height: input.h,
                width: input.w,
                divisor: d,
            });
        }
        if input.c != self.cfg.in_channels {
            return Err(Error::Network(format!(
                "input has {} channels, network expects {}",
                input.c, self.cfg.in_channels
            )));
        }
        let mut rec = Recorder {
            params,
            mode,
            slope: S::from_f64_lossy(self.cfg.leaky_slope),
            values: Vec::new(),
            ops: Vec::new(),
        };
        let mut x = rec.push(input, Op::Input);
        let mut skips = Vec::with_capacity(self.encoder.len());
        for (l, block) in self.encoder.iter().enumerate() {
            if l > 0 {
                x = rec.pool(x);
            }
            x = rec.block(x, *block);
            skips.push(x);
        }
        for &(level, block) in &self.bottom {
            let cat = rec.up_concat(x, skips[level]);
            x = rec.block(cat, block);
        }
        let mut seg = x;
        let mut app = x;
        for mt in &self.multitask {
            let seg_in = rec.up_concat(seg, skips[mt.level]);
            let app_in = if seg == app {
                seg_in
            } else {
                rec.up_concat(app, skips[mt.level])
            };
            let s = rec.conv(seg_in, mt.shared);
            let s = rec.norm(s, mt.seg_norm);
            let s = rec.lrelu(s);
            let a = rec.conv(app_in, mt.shared);
            let a = rec.norm(a, mt.app_norm);
            let a = rec.lrelu(a);

            let r = rec.block(s, mt.residual_first);
            let r = rec.conv(r, mt.residual_second.conv);
            let r = rec.norm(r, mt.residual_second.norm);
            let r = rec.add(s, r);
            let r = rec.lrelu(r);

            seg = rec.block(r, mt.seg_out);
            app = rec.block(a, mt.app_out);
        }
        let logits: Vec<usize> = self
            .heads
            .iter()
            .enumerate()
            .map(|(t, &head)| rec.conv(if t == 1 { app } else { seg }, head))
            .collect();
        let probs = logits.iter().map(|&l| ops::softmax(&rec.values[l])).collect();
        Ok(ForwardPass {
            values: rec.values,
            ops: rec.ops,
            logits,
            outputs: TaskOutputs { probs },
        })
    }

    /// Propagates logit gradients back through the recorded pass and adds
    /// the parameter gradients into `params`.
    fn backward<S: Real>(
        &self,
        pass: &ForwardPass<S>,
        head_grads: Vec<Option<Tensor<S>>>,
        params: &mut ModelParams<S>,
    ) {
        let slope = S::from_f64_lossy(self.cfg.leaky_slope);
        let mut grads: Vec<Option<Tensor<S>>> = (0..pass.values.len()).map(|_| None).collect();
        for (&node, g) in pass.logits.iter().zip(head_grads) {
            if let Some(g) = g {
                add_grad(&mut grads, node, g);
            }
        }
        for node in (0..pass.values.len()).rev() {
            let Some(g) = grads[node].take() else { continue };
            match &pass.ops[node] {
                Op::Input => {}
                Op::Conv { x, conv } => {
                    let w = &params.get(conv.weight).value;
                    let (dx, dw, db) = ops::conv_backward(&pass.values[*x], w, &g, conv.k);
                    params.accumulate(conv.weight, &dw);
                    params.accumulate(conv.bias, &db);
                    add_grad(&mut grads, *x, dx);
                }
                Op::TrainNorm { x, norm, stats } => {
                    let gamma = &params.get(norm.gamma).value;
                    let (dx, dg, db) = ops::batch_norm_backward(&pass.values[*x], stats, gamma, &g);
                    params.accumulate(norm.gamma, &dg);
                    params.accumulate(norm.beta, &db);
                    add_grad(&mut grads, *x, dx);
                }
                Op::FrozenNorm {
                    x,
                    norm,
                    mean,
                    inv_std,
                } => {
                    let gamma = &params.get(norm.gamma).value;
                    let (dx, dg, db) =
                        ops::frozen_norm_backward(&pass.values[*x], mean, inv_std, gamma, &g);
                    params.accumulate(norm.gamma, &dg);
                    params.accumulate(norm.beta, &db);
                    add_grad(&mut grads, *x, dx);
                }
                Op::LeakyRelu { x } => {
                    let dx = ops::leaky_relu_backward(&pass.values[*x], slope, &g);
                    add_grad(&mut grads, *x, dx);
                }
                Op::Pool { x, arg } => {
                    let dx = ops::max_pool_backward(&pass.values[*x], arg, &g);
                    add_grad(&mut grads, *x, dx);
                }
                Op::Upsample { x } => {
                    let dx = ops::upsample_backward(&pass.values[*x], &g);
                    add_grad(&mut grads, *x, dx);
                }
                Op::Concat { a, b } => {
                    let (da, db) = ops::concat_backward(pass.values[*a].c, &g);
                    add_grad(&mut grads, *a, da);
                    add_grad(&mut grads, *b, db);
                }
                Op::Add { a, b } => {
                    add_grad(&mut grads, *a, g.clone());
                    add_grad(&mut grads, *b, g);
                }
            }
        }
    }
}

fn add_grad<S: Real>(grads: &mut [Option<Tensor<S>>], node: usize, g: Tensor<S>) {
    match &mut grads[node] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

/// Stacks images into an `N x C x H x W` tensor.
pub fn images_to_tensor<S: Real>(images: &[&Image]) -> Result<Tensor<S>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Network("empty batch".into()))?;
    let (h, w, c) = (first.height(), first.width(), first.channels());
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        if (img.height(), img.width(), img.channels()) != (h, w, c) {
            return Err(Error::DimensionMismatch {
                expected: (h, w),
                actual: img.dims(),
            });
        }
        for ch in 0..c {
            for i in 0..h * w {
                data.push(S::from_f32(img.data()[i * c + ch]).unwrap());
            }
        }
    }
    Ok(Tensor::from_vec(images.len(), c, h, w, data))
}

impl<S: Real> Model<S> {
    pub fn config(&self) -> &NetworkConfig {
        &self.network.cfg
    }

    pub fn forward(&self, input: Tensor<S>, mode: Mode) -> Result<ForwardPass<S>> {
        self.network.forward(&self.params, input, mode)
    }

    /// Inference-mode class probabilities for one image.
    pub fn predict(&self, image: &Image) -> Result<TaskOutputs<S>> {
        let input = images_to_tensor(&[image])?;
        Ok(self.forward(input, Mode::Eval)?.outputs)
    }

    /// Runs a forward pass and adds `scale` times the gradient of the
    /// multi-task loss to the gradient buffers. Returns the unscaled loss.
    pub fn accumulate_gradients(
        &mut self,
        input: Tensor<S>,
        labels: &[&LabelField],
        weights: &LossWeights,
        mode: Mode,
        scale: f64,
    ) -> Result<f64> {
        let pass = self.forward(input, mode)?;
        let loss = multitask_loss(&pass.outputs, labels, weights)?;
        let head = head_gradients(&pass.outputs, labels, weights, scale)?;
        self.network.backward(&pass, head, &mut self.params);
        if mode == Mode::Train {
            self.update_running_stats(&pass);
        }
        Ok(loss)
    }

    /// Zeroes the gradient buffers, then fills them with the exact gradient
    /// of the multi-task loss. Returns the loss.
    pub fn compute_gradients(
        &mut self,
        input: Tensor<S>,
        labels: &[&LabelField],
        weights: &LossWeights,
        mode: Mode,
    ) -> Result<f64> {
        self.params.zero_grad();
        self.accumulate_gradients(input, labels, weights, mode, 1.0)
    }

    fn update_running_stats(&mut self, pass: &ForwardPass<S>) {
        let mom = S::from_f64_lossy(RUNNING_MOMENTUM);
        for op in &pass.ops {
            let Op::TrainNorm { x, norm, stats } = op else { continue };
            let input = &pass.values[*x];
            let count = input.n * input.plane();
            let unbias = if count > 1 {
                S::from_f64_lossy(count as f64 / (count - 1) as f64)
            } else {
                S::one()
            };
            let rm = &mut self.params.params[norm.running_mean].value;
            for (r, &m) in rm.iter_mut().zip(&stats.mean) {
                *r = (S::one() - mom) * *r + mom * m;
            }
            let rv = &mut self.params.params[norm.running_var].value;
            for (r, &v) in rv.iter_mut().zip(&stats.var) {
                *r = (S::one() - mom) * *r + mom * v * unbias;
            }
        }
    }
}
