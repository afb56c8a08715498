//! Scaled-down encoder–decoder semantic segmentation network with dilated
//! convolutions and an atrous-spatial-pyramid-pooling block, plus its
//! training loop and mask inference.
//!
//! Wiring: strided 3x3 conv stages (BN + ReLU) encode the frame; the deepest
//! features feed parallel dilated 3x3 branches at several rates plus a
//! global-average branch (which alone makes the receptive field cover the
//! whole image); branches are concatenated and fused by a 1x1 conv; the
//! decoder repeatedly bilinearly upsamples, concatenates the matching encoder
//! skip, and convolves; a 1x1 head produces 2-class logits that are upsampled
//! to the input resolution, so output shape always equals input shape.

use serde::{Deserialize, Serialize};

use crate::imaging::FrameMask;
use crate::nn::checkpoint::{self, Entry};
use crate::nn::layers::{
    resize_bilinear, BatchNorm2d, BilinearResize, Conv2d, GlobalAvgPool, ParamRef, Relu,
};
use crate::nn::{
    early_stop, lr_piecewise, median_frequency_weights, softmax_probs, weighted_softmax_ce, Adam,
    Tensor4, TrainSchedule,
};
use crate::preprocess::PreprocessedFrame;
use crate::rng::{mix, stream_rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegConfig {
    /// Network input rows (A-lines).
    pub input_rows: usize,
    /// Network input columns (radial ROI depth).
    pub input_cols: usize,
    /// When true, frames of other sizes are bilinearly resized to the input
    /// shape and logits are upsampled back; when false, mismatched frames are
    /// a contract error.
    pub resize_input: bool,
    /// Encoder stages as (channels, stride).
    pub encoder: Vec<(usize, usize)>,
    /// Dilation rates of the parallel ASPP branches.
    pub aspp_rates: Vec<usize>,
    /// Channels per ASPP branch.
    pub aspp_channels: usize,
    /// Include the global-average ASPP branch (full receptive field).
    pub aspp_global: bool,
    /// Channels per decoder stage; must have one entry per encoder stage
    /// minus one.
    pub decoder_channels: Vec<usize>,
    pub classes: usize,
}

impl Default for SegConfig {
    fn default() -> Self {
        Self {
            input_rows: 496,
            input_cols: 300,
            resize_input: false,
            encoder: vec![(16, 2), (32, 2), (64, 2)],
            aspp_rates: vec![1, 2, 4],
            aspp_channels: 32,
            aspp_global: true,
            decoder_channels: vec![32, 16],
            classes: 2,
        }
    }
}

impl SegConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_rows < 8 || self.input_cols < 8 {
            return Err(Error::Config("input shape must be at least 8x8".into()));
        }
        if self.encoder.is_empty() {
            return Err(Error::Config("encoder needs at least one stage".into()));
        }
        if self.encoder.iter().any(|&(c, s)| c == 0 || s == 0) {
            return Err(Error::Config(
                "encoder channels/strides must be >= 1".into(),
            ));
        }
        if self.aspp_rates.is_empty() && !self.aspp_global {
            return Err(Error::Config("aspp needs at least one branch".into()));
        }
        if self.decoder_channels.len() + 1 != self.encoder.len() {
            return Err(Error::Config(format!(
                "decoder_channels must have {} entries for {} encoder stages",
                self.encoder.len() - 1,
                self.encoder.len()
            )));
        }
        if self.classes != 2 {
            return Err(Error::Config("only 2-class segmentation is wired".into()));
        }
        Ok(())
    }
}

enum InitMode {
    /// He-normal seeded initialization.
    Seeded(u64),
    /// All-positive constant weights, for receptive-field probing.
    Probe,
}

#[derive(Clone)]
pub struct SegModel {
    pub cfg: SegConfig,
    enc_conv: Vec<Conv2d>,
    enc_bn: Vec<BatchNorm2d>,
    enc_relu: Vec<Relu>,
    aspp_conv: Vec<Conv2d>,
    aspp_bn: Vec<BatchNorm2d>,
    aspp_relu: Vec<Relu>,
    gap: GlobalAvgPool,
    gap_conv: Option<Conv2d>,
    gap_relu: Relu,
    fuse_conv: Conv2d,
    fuse_bn: BatchNorm2d,
    fuse_relu: Relu,
    dec_conv: Vec<Conv2d>,
    dec_bn: Vec<BatchNorm2d>,
    dec_relu: Vec<Relu>,
    head: Conv2d,
    cache: Option<ForwardCache>,
}

#[derive(Clone)]
struct ForwardCache {
    /// Upsampler used to broadcast the global branch; present when enabled.
    gap_up: Option<BilinearResize>,
    /// Channel sizes of the ASPP concat, for splitting the gradient.
    aspp_split: Vec<usize>,
    /// Decoder upsamplers, in forward order.
    dec_up: Vec<BilinearResize>,
    /// Channel split (upsampled, skip) per decoder stage.
    dec_split: Vec<(usize, usize)>,
    /// Final logit upsampler.
    out_up: BilinearResize,
}

fn make_conv(
    rng_seed: (u64, u64),
    mode: &InitMode,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    stride: usize,
    dilation: usize,
    padding: usize,
) -> Conv2d {
    let n = out_ch * in_ch * k * k;
    let fan_in = in_ch * k * k;
    let weight = match mode {
        InitMode::Seeded(seed) => {
            let mut rng = stream_rng(*seed, mix(rng_seed.0, rng_seed.1));
            crate::nn::init::he_normal(&mut rng, n, fan_in)
        }
        InitMode::Probe => vec![1.0 / fan_in as f64; n],
    };
    Conv2d::new(
        in_ch,
        out_ch,
        k,
        k,
        stride,
        dilation,
        padding,
        weight,
        vec![0.0; out_ch],
    )
}

impl SegModel {
    /// Builds a seeded model and verifies at build time (by impulse probing a
    /// constant-weight copy) that the receptive field covers the whole input
    /// in both axes.
    pub fn build(cfg: SegConfig, seed: u64) -> Result<SegModel> {
        cfg.validate()?;
        let model = Self::wire(&cfg, InitMode::Seeded(seed))?;
        receptive_field_check(&cfg)?;
        Ok(model)
    }

    fn wire(cfg: &SegConfig, mode: InitMode) -> Result<SegModel> {
        let mut enc_conv = Vec::new();
        let mut enc_bn = Vec::new();
        let mut enc_relu = Vec::new();
        let mut in_ch = 1;
        for (i, &(ch, stride)) in cfg.encoder.iter().enumerate() {
            enc_conv.push(make_conv((1, i as u64), &mode, in_ch, ch, 3, stride, 1, 1));
            enc_bn.push(BatchNorm2d::new(ch));
            enc_relu.push(Relu::new());
            in_ch = ch;
        }
        let deep_ch = in_ch;

        let mut aspp_conv = Vec::new();
        let mut aspp_bn = Vec::new();
        let mut aspp_relu = Vec::new();
        for (i, &rate) in cfg.aspp_rates.iter().enumerate() {
            aspp_conv.push(make_conv(
                (2, i as u64),
                &mode,
                deep_ch,
                cfg.aspp_channels,
                3,
                1,
                rate,
                rate,
            ));
            aspp_bn.push(BatchNorm2d::new(cfg.aspp_channels));
            aspp_relu.push(Relu::new());
        }
        // The global branch skips batchnorm so single-sample batches stay legal.
        let gap_conv = cfg
            .aspp_global
            .then(|| make_conv((3, 0), &mode, deep_ch, cfg.aspp_channels, 1, 1, 1, 0));

        let n_branches = cfg.aspp_rates.len() + usize::from(cfg.aspp_global);
        let fuse_in = n_branches * cfg.aspp_channels;
        let fuse_conv = make_conv((4, 0), &mode, fuse_in, cfg.aspp_channels, 1, 1, 1, 0);

        let mut dec_conv = Vec::new();
        let mut dec_bn = Vec::new();
        let mut dec_relu = Vec::new();
        let mut cur_ch = cfg.aspp_channels;
        for (j, &dch) in cfg.decoder_channels.iter().enumerate() {
            let skip_ch = cfg.encoder[cfg.encoder.len() - 2 - j].0;
            dec_conv.push(make_conv(
                (5, j as u64),
                &mode,
                cur_ch + skip_ch,
                dch,
                3,
                1,
                1,
                1,
            ));
            dec_bn.push(BatchNorm2d::new(dch));
            dec_relu.push(Relu::new());
            cur_ch = dch;
        }

        let head = make_conv((6, 0), &mode, cur_ch, cfg.classes, 1, 1, 1, 0);

        Ok(SegModel {
            cfg: cfg.clone(),
            enc_conv,
            enc_bn,
            enc_relu,
            aspp_conv,
            aspp_bn,
            aspp_relu,
            gap: GlobalAvgPool::new(),
            gap_conv,
            gap_relu: Relu::new(),
            fuse_conv,
            fuse_bn: BatchNorm2d::new(cfg.aspp_channels),
            fuse_relu: Relu::new(),
            dec_conv,
            dec_bn,
            dec_relu,
            head,
            cache: None,
        })
    }

    /// Forward pass; input (n, 1, rows, cols), output logits of identical
    /// spatial shape with `classes` channels.
    pub fn forward(&mut self, x: &Tensor4, train: bool) -> Result<Tensor4> {
        let (_, _, in_h, in_w) = x.shape();

        // Encoder, keeping skip activations.
        let mut skips: Vec<Tensor4> = Vec::with_capacity(self.enc_conv.len());
        let mut cur = x.clone();
        for i in 0..self.enc_conv.len() {
            let y = self.enc_conv[i].forward(&cur)?;
            let y = self.enc_bn[i].forward(&y, train)?;
            let y = self.enc_relu[i].forward(&y);
            skips.push(y.clone());
            cur = y;
        }
        let deep = skips.last().unwrap().clone();

        // ASPP branches.
        let mut branches: Vec<Tensor4> = Vec::new();
        let mut aspp_split = Vec::new();
        for i in 0..self.aspp_conv.len() {
            let y = self.aspp_conv[i].forward(&deep)?;
            let y = self.aspp_bn[i].forward(&y, train)?;
            let y = self.aspp_relu[i].forward(&y);
            aspp_split.push(y.c());
            branches.push(y);
        }
        let mut gap_up = None;
        if let Some(conv) = self.gap_conv.as_mut() {
            let pooled = self.gap.forward(&deep);
            let y = conv.forward(&pooled)?;
            let y = self.gap_relu.forward(&y);
            let mut up = BilinearResize::new(deep.h(), deep.w());
            let y = up.forward(&y);
            aspp_split.push(y.c());
            branches.push(y);
            gap_up = Some(up);
        }
        let cat = Tensor4::concat_channels(&branches.iter().collect::<Vec<_>>());
        let fused = self.fuse_conv.forward(&cat)?;
        let fused = self.fuse_bn.forward(&fused, train)?;
        let mut cur = self.fuse_relu.forward(&fused);

        // Decoder with skip fusion.
        let mut dec_up = Vec::new();
        let mut dec_split = Vec::new();
        for j in 0..self.dec_conv.len() {
            let skip = &skips[skips.len() - 2 - j];
            let mut up = BilinearResize::new(skip.h(), skip.w());
            let upsampled = up.forward(&cur);
            dec_split.push((upsampled.c(), skip.c()));
            let cat = Tensor4::concat_channels(&[&upsampled, skip]);
            let y = self.dec_conv[j].forward(&cat)?;
            let y = self.dec_bn[j].forward(&y, train)?;
            cur = self.dec_relu[j].forward(&y);
            dec_up.push(up);
        }

        let logits_small = self.head.forward(&cur)?;
        let mut out_up = BilinearResize::new(in_h, in_w);
        let logits = out_up.forward(&logits_small);

        self.cache = Some(ForwardCache {
            gap_up,
            aspp_split,
            dec_up,
            dec_split,
            out_up,
        });
        Ok(logits)
    }

    /// Backward pass for the most recent forward. Returns the input gradient.
    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        let mut cache = self.cache.take().expect("backward before forward");

        let g = cache.out_up.backward(gy);
        let mut g = self.head.backward(&g);

        // Decoder in reverse.
        let mut skip_grads: Vec<(usize, Tensor4)> = Vec::new(); // (skip index, grad)
        let n_dec = self.dec_conv.len();
        let n_skips = self.enc_conv.len();
        for j in (0..n_dec).rev() {
            let gr = self.dec_relu[j].backward(&g);
            let gb = self.dec_bn[j].backward(&gr);
            let gcat = self.dec_conv[j].backward(&gb);
            let (up_c, skip_c) = cache.dec_split[j];
            let parts = gcat.split_channels(&[up_c, skip_c]);
            skip_grads.push((n_skips - 2 - j, parts[1].clone()));
            g = cache.dec_up[j].backward(&parts[0]);
        }

        // ASPP fuse.
        let gf = self.fuse_relu.backward(&g);
        let gf = self.fuse_bn.backward(&gf);
        let gcat = self.fuse_conv.backward(&gf);
        let parts = gcat.split_channels(&cache.aspp_split);

        // Gradient into the deepest encoder activation accumulates from every
        // ASPP branch.
        let mut gdeep: Option<Tensor4> = None;
        let add_to_deep = |t: Tensor4, gdeep: &mut Option<Tensor4>| match gdeep {
            Some(acc) => {
                for (a, b) in acc.as_mut_slice().iter_mut().zip(t.as_slice()) {
                    *a += b;
                }
            }
            None => *gdeep = Some(t),
        };
        for (i, part) in parts.iter().enumerate().take(self.aspp_conv.len()) {
            let gr = self.aspp_relu[i].backward(part);
            let gb = self.aspp_bn[i].backward(&gr);
            let gx = self.aspp_conv[i].backward(&gb);
            add_to_deep(gx, &mut gdeep);
        }
        if let Some(conv) = self.gap_conv.as_mut() {
            let part = parts.last().unwrap();
            let gup = cache.gap_up.as_mut().unwrap().backward(part);
            let gr = self.gap_relu.backward(&gup);
            let gc = conv.backward(&gr);
            let gx = self.gap.backward(&gc);
            add_to_deep(gx, &mut gdeep);
        }
        let mut g = gdeep.expect("aspp has at least one branch");

        // Encoder in reverse, folding in decoder skip gradients.
        for i in (0..n_skips).rev() {
            for (idx, sg) in &skip_grads {
                if *idx == i {
                    for (a, b) in g.as_mut_slice().iter_mut().zip(sg.as_slice()) {
                        *a += b;
                    }
                }
            }
            let gr = self.enc_relu[i].backward(&g);
            let gb = self.enc_bn[i].backward(&gr);
            g = self.enc_conv[i].backward(&gb);
        }
        g
    }

    pub fn zero_grad(&mut self) {
        for c in &mut self.enc_conv {
            c.zero_grad();
        }
        for b in &mut self.enc_bn {
            b.zero_grad();
        }
        for c in &mut self.aspp_conv {
            c.zero_grad();
        }
        for b in &mut self.aspp_bn {
            b.zero_grad();
        }
        if let Some(c) = self.gap_conv.as_mut() {
            c.zero_grad();
        }
        self.fuse_conv.zero_grad();
        self.fuse_bn.zero_grad();
        for c in &mut self.dec_conv {
            c.zero_grad();
        }
        for b in &mut self.dec_bn {
            b.zero_grad();
        }
        self.head.zero_grad();
    }

    pub fn params_mut(&mut self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        for c in &mut self.enc_conv {
            out.extend(c.params_mut());
        }
        for b in &mut self.enc_bn {
            out.extend(b.params_mut());
        }
        for c in &mut self.aspp_conv {
            out.extend(c.params_mut());
        }
        for b in &mut self.aspp_bn {
            out.extend(b.params_mut());
        }
        if let Some(c) = self.gap_conv.as_mut() {
            out.extend(c.params_mut());
        }
        self.fuse_conv
            .params_mut()
            .into_iter()
            .for_each(|p| out.push(p));
        self.fuse_bn
            .params_mut()
            .into_iter()
            .for_each(|p| out.push(p));
        for c in &mut self.dec_conv {
            out.extend(c.params_mut());
        }
        for b in &mut self.dec_bn {
            out.extend(b.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }

    fn conv_entries(prefix: &str, c: &Conv2d, out: &mut Vec<Entry>) {
        out.push((
            format!("{prefix}.w"),
            c.weight.shape.clone(),
            c.weight.data.clone(),
        ));
        out.push((
            format!("{prefix}.b"),
            c.bias.shape.clone(),
            c.bias.data.clone(),
        ));
    }

    fn bn_entries(prefix: &str, b: &BatchNorm2d, out: &mut Vec<Entry>) {
        out.push((
            format!("{prefix}.gamma"),
            vec![b.channels],
            b.gamma.data.clone(),
        ));
        out.push((
            format!("{prefix}.beta"),
            vec![b.channels],
            b.beta.data.clone(),
        ));
        out.push((
            format!("{prefix}.rmean"),
            vec![b.channels],
            b.running_mean.clone(),
        ));
        out.push((
            format!("{prefix}.rvar"),
            vec![b.channels],
            b.running_var.clone(),
        ));
    }

    /// Full state (parameters + batchnorm running statistics + config echo).
    pub fn state_entries(&self) -> Vec<Entry> {
        let mut out = Vec::new();
        let cfg_json = serde_json::to_string(&self.cfg).expect("config serializes");
        out.push((
            "config_json".to_string(),
            vec![cfg_json.len()],
            cfg_json.bytes().map(|b| b as f64).collect(),
        ));
        for (i, c) in self.enc_conv.iter().enumerate() {
            Self::conv_entries(&format!("enc{i}.conv"), c, &mut out);
            Self::bn_entries(&format!("enc{i}.bn"), &self.enc_bn[i], &mut out);
        }
        for (i, c) in self.aspp_conv.iter().enumerate() {
            Self::conv_entries(&format!("aspp{i}.conv"), c, &mut out);
            Self::bn_entries(&format!("aspp{i}.bn"), &self.aspp_bn[i], &mut out);
        }
        if let Some(c) = &self.gap_conv {
            Self::conv_entries("gap.conv", c, &mut out);
        }
        Self::conv_entries("fuse.conv", &self.fuse_conv, &mut out);
        Self::bn_entries("fuse.bn", &self.fuse_bn, &mut out);
        for (i, c) in self.dec_conv.iter().enumerate() {
            Self::conv_entries(&format!("dec{i}.conv"), c, &mut out);
            Self::bn_entries(&format!("dec{i}.bn"), &self.dec_bn[i], &mut out);
        }
        Self::conv_entries("head", &self.head, &mut out);
        out
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save_checkpoint(path, &self.state_entries())
    }

    pub fn load(path: &std::path::Path) -> Result<SegModel> {
        let entries = checkpoint::load_checkpoint(path)?;
        let find = |name: &str| -> Result<&Entry> {
            entries
                .iter()
                .find(|(n, _, _)| n == name)
                .ok_or_else(|| Error::Format(format!("checkpoint missing entry {name}")))
        };
        let cfg_entry = find("config_json")?;
        let cfg_json: String = cfg_entry.2.iter().map(|&b| b as u8 as char).collect();
        let cfg: SegConfig = serde_json::from_str(&cfg_json)
            .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        let mut model = Self::wire(&cfg, InitMode::Seeded(0))?;

        let load_conv = |prefix: &str, c: &mut Conv2d| -> Result<()> {
            let w = find(&format!("{prefix}.w"))?;
            let b = find(&format!("{prefix}.b"))?;
            if w.2.len() != c.weight.data.len() || b.2.len() != c.bias.data.len() {
                return Err(Error::Format(format!("{prefix}: shape mismatch")));
            }
            c.weight.data = w.2.clone();
            c.bias.data = b.2.clone();
            Ok(())
        };
        let load_bn = |prefix: &str, b: &mut BatchNorm2d| -> Result<()> {
            b.gamma.data = find(&format!("{prefix}.gamma"))?.2.clone();
            b.beta.data = find(&format!("{prefix}.beta"))?.2.clone();
            b.running_mean = find(&format!("{prefix}.rmean"))?.2.clone();
            b.running_var = find(&format!("{prefix}.rvar"))?.2.clone();
            Ok(())
        };

        for i in 0..model.enc_conv.len() {
            load_conv(&format!("enc{i}.conv"), &mut model.enc_conv[i])?;
            load_bn(&format!("enc{i}.bn"), &mut model.enc_bn[i])?;
        }
        for i in 0..model.aspp_conv.len() {
            load_conv(&format!("aspp{i}.conv"), &mut model.aspp_conv[i])?;
            load_bn(&format!("aspp{i}.bn"), &mut model.aspp_bn[i])?;
        }
        if let Some(c) = model.gap_conv.as_mut() {
            load_conv("gap.conv", c)?;
        }
        load_conv("fuse.conv", &mut model.fuse_conv)?;
        load_bn("fuse.bn", &mut model.fuse_bn)?;
        for i in 0..model.dec_conv.len() {
            load_conv(&format!("dec{i}.conv"), &mut model.dec_conv[i])?;
            load_bn(&format!("dec{i}.bn"), &mut model.dec_bn[i])?;
        }
        load_conv("head", &mut model.head)?;
        Ok(model)
    }
}

/// Impulse-probes a constant-positive-weight copy of the architecture: a unit
/// impulse at the input center must influence every output pixel, otherwise
/// the composed receptive field does not cover the input and the config is
/// rejected, naming the deficient axis.
pub fn receptive_field_check(cfg: &SegConfig) -> Result<()> {
    cfg.validate()?;
    let rows = cfg.input_rows;
    let cols = cfg.input_cols;
    let mut model = SegModel::wire(cfg, InitMode::Probe)?;
    let mut impulse = Tensor4::zeros(1, 1, rows, cols);
    impulse.set(0, 0, rows / 2, cols / 2, 1.0);
    let y = model.forward(&impulse, false)?;
    let (_, _, oh, ow) = y.shape();
    for i in 0..oh {
        for j in 0..ow {
            if !(y.at(0, 0, i, j) > 0.0) {
                // Name the axis along which the blind spot is farther out.
                let axis = if (i as isize - (rows / 2) as isize).unsigned_abs()
                    >= (j as isize - (cols / 2) as isize).unsigned_abs()
                {
                    "rows"
                } else {
                    "cols"
                };
                return Err(Error::Config(format!(
                    "receptive field does not cover the {axis} axis: output ({i},{j}) \
                     is blind to the input center"
                )));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Training and inference
// ---------------------------------------------------------------------------

/// One frame ready for the network: image tensor, per-pixel labels, per-pixel
/// exclusion flags, all at the network input shape.
pub struct SegSample {
    pub x: Tensor4,
    pub labels: Vec<u8>,
    pub excluded: Vec<bool>,
}

/// Converts a preprocessed frame (+ aligned mask) into a network sample,
/// resizing when the config allows it.
pub fn make_sample(
    cfg: &SegConfig,
    frame: &PreprocessedFrame,
    mask: Option<&FrameMask>,
) -> Result<SegSample> {
    let (rows, cols) = (frame.rows(), frame.cols());
    let native = rows == cfg.input_rows && cols == cfg.input_cols;
    if !native && !cfg.resize_input {
        return Err(Error::Contract(format!(
            "frame is {rows}x{cols} but network expects {}x{} and resize is disabled",
            cfg.input_rows, cfg.input_cols
        )));
    }
    let x_full = Tensor4::from_vec(1, 1, rows, cols, frame.pixels.as_slice().to_vec());
    let x = if native {
        x_full
    } else {
        resize_bilinear(&x_full, cfg.input_rows, cfg.input_cols)
    };

    let (th, tw) = (cfg.input_rows, cfg.input_cols);
    let mut labels = vec![0u8; th * tw];
    let mut excluded = vec![false; th * tw];
    for i in 0..th {
        // Nearest-neighbor index mapping for labels/flags.
        let src_a = if native { i } else { i * rows / th };
        for j in 0..tw {
            let src_r = if native { j } else { j * cols / tw };
            if let Some(m) = mask {
                labels[i * tw + j] = m.get(src_a, src_r);
            }
            excluded[i * tw + j] = frame.is_excluded(src_a);
        }
    }
    Ok(SegSample {
        x,
        labels,
        excluded,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dice: Option<f64>,
}

/// Trains in place; returns per-epoch history. Class weights come from the
/// training masks via inverse median frequency; excluded pixels carry no loss.
pub fn train_segmentation(
    model: &mut SegModel,
    train: &[(&PreprocessedFrame, &FrameMask)],
    val: &[(&PreprocessedFrame, &FrameMask)],
    sched: &TrainSchedule,
    seed: u64,
) -> Result<Vec<EpochStats>> {
    sched.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("train and val sets must be non-empty".into()));
    }

    let train_samples: Vec<SegSample> = train
        .iter()
        .map(|(f, m)| make_sample(&model.cfg, f, Some(m)))
        .collect::<Result<_>>()?;
    let val_samples: Vec<SegSample> = val
        .iter()
        .map(|(f, m)| make_sample(&model.cfg, f, Some(m)))
        .collect::<Result<_>>()?;

    // Inverse-median-frequency class weights over included training pixels.
    let mut counts = [0u64; 2];
    for s in &train_samples {
        for (i, &l) in s.labels.iter().enumerate() {
            if !s.excluded[i] {
                counts[l as usize] += 1;
            }
        }
    }
    let weights = median_frequency_weights(&counts)?;

    let mut adam = Adam::new();
    let mut history: Vec<EpochStats> = Vec::new();
    let mut val_losses: Vec<f64> = Vec::new();

    for epoch in 0..sched.max_epochs {
        let lr = lr_piecewise(epoch, sched);
        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        let mut rng = stream_rng(seed, 0xE70000 + epoch as u64);
        for i in (1..order.len()).rev() {
            let j = rand::Rng::gen_range(&mut rng, 0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for batch_idx in order.chunks(sched.batch_size) {
            let xs: Vec<Tensor4> = batch_idx
                .iter()
                .map(|&i| train_samples[i].x.clone())
                .collect();
            let x = Tensor4::stack(&xs);
            let mut labels = Vec::new();
            let mut excluded = Vec::new();
            for &i in batch_idx {
                labels.extend_from_slice(&train_samples[i].labels);
                excluded.extend_from_slice(&train_samples[i].excluded);
            }
            model.zero_grad();
            let logits = model.forward(&x, true)?;
            let (loss, grad) = weighted_softmax_ce(&logits, &labels, &excluded, &weights)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, step {n_batches}"
                )));
            }
            model.backward(&grad);
            let mut params = model.params_mut();
            adam.step(&mut params, lr, sched.l2_lambda)?;
            epoch_loss += loss;
            n_batches += 1;
        }
        let train_loss = epoch_loss / n_batches as f64;

        // Validation loss and Dice in inference mode.
        let mut val_loss = 0.0;
        let mut counts = crate::eval::ConfusionCounts::default();
        for s in &val_samples {
            let logits = model.forward(&s.x, false)?;
            let (loss, _) = weighted_softmax_ce(&logits, &s.labels, &s.excluded, &weights)?;
            val_loss += loss;
            let (h, w) = (logits.h(), logits.w());
            for i in 0..h {
                for j in 0..w {
                    let flat = i * w + j;
                    if s.excluded[flat] {
                        continue;
                    }
                    let pred = logits.at(0, 1, i, j) > logits.at(0, 0, i, j);
                    match (pred, s.labels[flat] == 1) {
                        (true, true) => counts.tp += 1,
                        (false, false) => counts.tn += 1,
                        (true, false) => counts.fp += 1,
                        (false, true) => counts.fn_ += 1,
                    }
                }
            }
        }
        val_loss /= val_samples.len() as f64;
        let val_dice = crate::eval::pixel_metrics(&counts).dice;

        history.push(EpochStats {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_dice,
        });
        val_losses.push(val_loss);
        if early_stop(&val_losses, sched) {
            break;
        }
    }
    Ok(history)
}

/// Per-pixel probabilities and the binary candidate mask for one frame.
/// Excluded (shadow) pixels are forced to background; argmax ties go to
/// background.
pub fn predict_mask(
    model: &mut SegModel,
    frame: &PreprocessedFrame,
) -> Result<(Tensor4, FrameMask)> {
    let (rows, cols) = (frame.rows(), frame.cols());
    let sample = make_sample(&model.cfg, frame, None)?;
    let logits = model.forward(&sample.x, false)?;
    // Map logits back to the frame's native shape before the softmax.
    let logits = if logits.h() == rows && logits.w() == cols {
        logits
    } else {
        resize_bilinear(&logits, rows, cols)
    };
    let probs = softmax_probs(&logits);
    let mut mask = FrameMask::zeros(rows, cols);
    for a in 0..rows {
        if frame.is_excluded(a) {
            continue;
        }
        for r in 0..cols {
            if probs.at(0, 1, a, r) > probs.at(0, 0, a, r) {
                mask.set(a, r, 1);
            }
        }
    }
    Ok((probs, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> SegConfig {
        SegConfig {
            input_rows: 16,
            input_cols: 16,
            encoder: vec![(4, 2), (8, 2)],
            aspp_rates: vec![1, 2],
            aspp_channels: 4,
            aspp_global: true,
            decoder_channels: vec![4],
            ..SegConfig::default()
        }
    }

    #[test]
    fn output_shape_equals_input_shape() {
        let mut m = SegModel::build(tiny_cfg(), 1).unwrap();
        let x = Tensor4::zeros(2, 1, 16, 16);
        let y = m.forward(&x, false).unwrap();
        assert_eq!(y.shape(), (2, 2, 16, 16));

        // Also holds off the configured shape (shape is input-driven).
        let x = Tensor4::zeros(1, 1, 24, 20);
        let y = m.forward(&x, false).unwrap();
        assert_eq!(y.shape(), (1, 2, 24, 20));
    }

    #[test]
    fn same_seed_builds_identical_models() {
        let a = SegModel::build(tiny_cfg(), 7).unwrap();
        let b = SegModel::build(tiny_cfg(), 7).unwrap();
        assert_eq!(a.state_entries(), b.state_entries());
        let c = SegModel::build(tiny_cfg(), 8).unwrap();
        assert_ne!(a.state_entries(), c.state_entries());
    }

    /// With the global-average branch, perturbing any single input pixel
    /// changes every output logit.
    #[test]
    fn global_branch_gives_full_receptive_field() {
        let mut m = SegModel::build(tiny_cfg(), 3).unwrap();
        let mut rng = crate::rng::stream_rng(40, 0);
        let base: Vec<f64> = (0..16 * 16)
            .map(|_| rand::Rng::gen::<f64>(&mut rng))
            .collect();
        let x0 = Tensor4::from_vec(1, 1, 16, 16, base.clone());
        let y0 = m.forward(&x0, false).unwrap();
        for &(pi, pj) in &[(0usize, 0usize), (15, 15), (3, 12), (9, 4)] {
            let mut perturbed = base.clone();
            perturbed[pi * 16 + pj] += 10.0;
            let x1 = Tensor4::from_vec(1, 1, 16, 16, perturbed);
            let y1 = m.forward(&x1, false).unwrap();
            for c in 0..2 {
                for i in 0..16 {
                    for j in 0..16 {
                        assert!(
                            (y0.at(0, c, i, j) - y1.at(0, c, i, j)).abs() > 0.0,
                            "logit ({c},{i},{j}) blind to pixel ({pi},{pj})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn no_global_branch_with_small_rates_fails_rf_check() {
        let cfg = SegConfig {
            input_rows: 64,
            input_cols: 64,
            encoder: vec![(4, 2)],
            aspp_rates: vec![1],
            aspp_channels: 4,
            aspp_global: false,
            decoder_channels: vec![],
            ..SegConfig::default()
        };
        let err = SegModel::build(cfg, 1).map(|_| ());
        assert!(matches!(err, Err(Error::Config(_))), "{err:?}");
    }

    #[test]
    fn whole_model_gradient_check() {
        use crate::nn::gradcheck::{max_rel_error, projection_loss};
        let cfg = SegConfig {
            input_rows: 8,
            input_cols: 8,
            encoder: vec![(3, 2), (4, 2)],
            aspp_rates: vec![1, 2],
            aspp_channels: 3,
            aspp_global: true,
            decoder_channels: vec![3],
            ..SegConfig::default()
        };
        let mut m = SegModel::build(cfg.clone(), 5).unwrap();
        let mut rng = crate::rng::stream_rng(41, 0);
        let xv: Vec<f64> = (0..2 * 8 * 8)
            .map(|_| rand::Rng::gen::<f64>(&mut rng))
            .collect();
        let x = Tensor4::from_vec(2, 1, 8, 8, xv.clone());
        let y = m.forward(&x, true).unwrap();
        let proj: Vec<f64> = (0..y.len())
            .map(|_| rand::Rng::gen::<f64>(&mut rng) - 0.5)
            .collect();
        let gy = Tensor4::from_vec(y.n(), y.c(), y.h(), y.w(), proj.clone());
        m.zero_grad();
        let gx = m.backward(&gy);

        let mut fresh = SegModel::build(cfg, 5).unwrap();
        let err = max_rel_error(&xv, gx.as_slice(), 1e-5, |p| {
            let xt = Tensor4::from_vec(2, 1, 8, 8, p.to_vec());
            projection_loss(fresh.forward(&xt, true).unwrap().as_slice(), &proj)
        });
        assert!(err < 1e-4, "seg model input gradient: {err}");
    }

    #[test]
    fn single_step_decreases_single_sample_loss() {
        let cfg = tiny_cfg();
        let mut m = SegModel::build(cfg, 11).unwrap();
        let mut rng = crate::rng::stream_rng(42, 0);
        let xv: Vec<f64> = (0..16 * 16)
            .map(|_| rand::Rng::gen::<f64>(&mut rng))
            .collect();
        let x = Tensor4::from_vec(1, 1, 16, 16, xv);
        let labels: Vec<u8> = (0..256).map(|i| u8::from(i % 7 == 0)).collect();
        let excluded = vec![false; 256];
        let weights = [1.0, 1.0];

        let loss_at = |m: &mut SegModel| {
            let logits = m.forward(&x, true).unwrap();
            weighted_softmax_ce(&logits, &labels, &excluded, &weights).unwrap()
        };
        m.zero_grad();
        let logits = m.forward(&x, true).unwrap();
        let (loss0, grad) = weighted_softmax_ce(&logits, &labels, &excluded, &weights).unwrap();
        m.backward(&grad);
        let mut params = m.params_mut();
        Adam::new().step(&mut params, 1e-5, 0.0).unwrap();
        let (loss1, _) = loss_at(&mut m);
        assert!(loss1 < loss0, "{loss1} !< {loss0}");
    }

    #[test]
    fn inference_is_batch_invariant() {
        let mut m = SegModel::build(tiny_cfg(), 13).unwrap();
        let mut rng = crate::rng::stream_rng(43, 0);
        let a: Vec<f64> = (0..256).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect();
        let b: Vec<f64> = (0..256).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect();
        let xa = Tensor4::from_vec(1, 1, 16, 16, a.clone());
        let xb = Tensor4::from_vec(1, 1, 16, 16, b.clone());
        let both = Tensor4::stack(&[xa.clone(), xb.clone()]);

        let ya = m.forward(&xa, false).unwrap();
        let yb = m.forward(&xb, false).unwrap();
        let yab = m.forward(&both, false).unwrap();
        assert_eq!(ya.sample(0), yab.sample(0));
        assert_eq!(yb.sample(0), yab.sample(1));
    }

    #[test]
    fn checkpoint_roundtrip_preserves_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg.ckpt");
        let mut m = SegModel::build(tiny_cfg(), 17).unwrap();
        m.save(&path).unwrap();
        let mut loaded = SegModel::load(&path).unwrap();
        let mut rng = crate::rng::stream_rng(44, 0);
        let xv: Vec<f64> = (0..256).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect();
        let x = Tensor4::from_vec(1, 1, 16, 16, xv);
        let y0 = m.forward(&x, false).unwrap();
        let y1 = loaded.forward(&x, false).unwrap();
        assert_eq!(y0, y1);
    }

    #[test]
    fn untrained_probabilities_sum_to_one() {
        let cfg = SegConfig {
            input_rows: 16,
            input_cols: 300,
            encoder: vec![(4, 2), (8, 2)],
            aspp_rates: vec![1, 2],
            aspp_channels: 4,
            aspp_global: true,
            decoder_channels: vec![4],
            ..SegConfig::default()
        };
        let mut m = SegModel::build(cfg, 19).unwrap();
        let frame = PreprocessedFrame {
            pixels: crate::imaging::PolarFrame::new(
                16,
                300,
                (0..16 * 300).map(|i| (i % 97) as f64 / 97.0).collect(),
            )
            .unwrap(),
            shift_record: vec![0; 16],
            shadow: None,
            excluded_alines: vec![false; 16],
        };
        let (probs, mask) = predict_mask(&mut m, &frame).unwrap();
        for a in 0..16 {
            for r in 0..300 {
                let s = probs.at(0, 0, a, r) + probs.at(0, 1, a, r);
                assert!((s - 1.0).abs() <= 1e-9);
            }
        }
        // Mask pixels only where p1 strictly exceeds p0 (ties → background).
        for a in 0..16 {
            for r in 0..300 {
                if mask.get(a, r) == 1 {
                    assert!(probs.at(0, 1, a, r) > probs.at(0, 0, a, r));
                }
            }
        }
    }

    #[test]
    fn excluded_alines_are_forced_background() {
        let mut m = SegModel::build(tiny_cfg(), 23).unwrap();
        let frame = PreprocessedFrame {
            pixels: crate::imaging::PolarFrame::zeros(16, 16),
            shift_record: vec![0; 16],
            shadow: Some(crate::preprocess::AngularInterval {
                start_aline: 2,
                width_alines: 3,
            }),
            excluded_alines: (0..16).map(|a| (2..5).contains(&a)).collect(),
        };
        let (_, mask) = predict_mask(&mut m, &frame).unwrap();
        for a in 2..5 {
            for r in 0..16 {
                assert_eq!(mask.get(a, r), 0);
            }
        }
    }
}
