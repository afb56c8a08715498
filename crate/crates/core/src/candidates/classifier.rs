//! The shallow candidate-classification CNN.
//!
//! Fixed wiring for 30×30×1 patches: three 3×3 stride-2 convolutions with 8,
//! 16, and 32 filters (batchnorm + ReLU after each), max pooling after the
//! first two, and a final fully connected layer onto 2 softmax outputs.

use crate::nn::checkpoint::{self, Entry};
use crate::nn::layers::{BatchNorm2d, Conv2d, Linear, MaxPool2d, ParamRef, Relu};
use crate::nn::{softmax_probs, Tensor4};
use crate::rng::{mix, stream_rng};
use crate::{Error, Result};

/// Patch side length expected by the classifier.
pub const PATCH_SIDE: usize = 30;

#[derive(Clone)]
pub struct ClassifierModel {
    conv: Vec<Conv2d>,
    bn: Vec<BatchNorm2d>,
    relu: Vec<Relu>,
    pool: Vec<MaxPool2d>,
    fc: Linear,
}

impl ClassifierModel {
    pub fn build(seed: u64) -> ClassifierModel {
        let channels = [8usize, 16, 32];
        let mut conv = Vec::new();
        let mut bn = Vec::new();
        let mut relu = Vec::new();
        let mut in_ch = 1;
        for (i, &ch) in channels.iter().enumerate() {
            let fan_in = in_ch * 9;
            let mut rng = stream_rng(seed, mix(0xC1A5, i as u64));
            let w = crate::nn::init::he_normal(&mut rng, ch * in_ch * 9, fan_in);
            conv.push(Conv2d::new(in_ch, ch, 3, 3, 2, 1, 1, w, vec![0.0; ch]));
            bn.push(BatchNorm2d::new(ch));
            relu.push(Relu::new());
            in_ch = ch;
        }
        let pool = vec![MaxPool2d::new(2, 2), MaxPool2d::new(2, 2)];
        // 30 → conv s2 → 15 → pool → 7 → conv s2 → 4 → pool → 2 → conv s2 → 1.
        let mut rng = stream_rng(seed, mix(0xC1A5, 100));
        let w = crate::nn::init::he_normal(&mut rng, 2 * 32, 32);
        let fc = Linear::new(32, 2, w, vec![0.0; 2]);
        ClassifierModel {
            conv,
            bn,
            relu,
            pool,
            fc,
        }
    }

    /// Input (n, 1, 30, 30), output logits (n, 2, 1, 1).
    pub fn forward(&mut self, x: &Tensor4, train: bool) -> Result<Tensor4> {
        if x.h() != PATCH_SIDE || x.w() != PATCH_SIDE || x.c() != 1 {
            return Err(Error::Contract(format!(
                "classifier expects {}x{} single-channel patches, got {}x{}x{}",
                PATCH_SIDE,
                PATCH_SIDE,
                x.c(),
                x.h(),
                x.w()
            )));
        }
        let mut cur = x.clone();
        for i in 0..self.conv.len() {
            let y = self.conv[i].forward(&cur)?;
            let y = self.bn[i].forward(&y, train)?;
            cur = self.relu[i].forward(&y);
            if i < self.pool.len() {
                cur = self.pool[i].forward(&cur)?;
            }
        }
        self.fc.forward(&cur)
    }

    pub fn backward(&mut self, gy: &Tensor4) -> Tensor4 {
        let mut g = self.fc.backward(gy);
        for i in (0..self.conv.len()).rev() {
            if i < self.pool.len() {
                g = self.pool[i].backward(&g);
            }
            g = self.relu[i].backward(&g);
            g = self.bn[i].backward(&g);
            g = self.conv[i].backward(&g);
        }
        g
    }

    pub fn zero_grad(&mut self) {
        for c in &mut self.conv {
            c.zero_grad();
        }
        for b in &mut self.bn {
            b.zero_grad();
        }
        self.fc.zero_grad();
    }

    pub fn params_mut(&mut self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        for c in &mut self.conv {
            out.extend(c.params_mut());
        }
        for b in &mut self.bn {
            out.extend(b.params_mut());
        }
        out.extend(self.fc.params_mut());
        out
    }

    pub fn state_entries(&self) -> Vec<Entry> {
        let mut out = Vec::new();
        for (i, c) in self.conv.iter().enumerate() {
            out.push((
                format!("conv{i}.w"),
                c.weight.shape.clone(),
                c.weight.data.clone(),
            ));
            out.push((
                format!("conv{i}.b"),
                c.bias.shape.clone(),
                c.bias.data.clone(),
            ));
            let b = &self.bn[i];
            out.push((
                format!("bn{i}.gamma"),
                vec![b.channels],
                b.gamma.data.clone(),
            ));
            out.push((format!("bn{i}.beta"), vec![b.channels], b.beta.data.clone()));
            out.push((
                format!("bn{i}.rmean"),
                vec![b.channels],
                b.running_mean.clone(),
            ));
            out.push((
                format!("bn{i}.rvar"),
                vec![b.channels],
                b.running_var.clone(),
            ));
        }
        out.push((
            "fc.w".into(),
            self.fc.weight.shape.clone(),
            self.fc.weight.data.clone(),
        ));
        out.push((
            "fc.b".into(),
            self.fc.bias.shape.clone(),
            self.fc.bias.data.clone(),
        ));
        out
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save_checkpoint(path, &self.state_entries())
    }

    pub fn load(path: &std::path::Path) -> Result<ClassifierModel> {
        let entries = checkpoint::load_checkpoint(path)?;
        let find = |name: &str| -> Result<&Entry> {
            entries
                .iter()
                .find(|(n, _, _)| n == name)
                .ok_or_else(|| Error::Format(format!("checkpoint missing entry {name}")))
        };
        let mut m = Self::build(0);
        for i in 0..m.conv.len() {
            m.conv[i].weight.data = find(&format!("conv{i}.w"))?.2.clone();
            m.conv[i].bias.data = find(&format!("conv{i}.b"))?.2.clone();
            m.bn[i].gamma.data = find(&format!("bn{i}.gamma"))?.2.clone();
            m.bn[i].beta.data = find(&format!("bn{i}.beta"))?.2.clone();
            m.bn[i].running_mean = find(&format!("bn{i}.rmean"))?.2.clone();
            m.bn[i].running_var = find(&format!("bn{i}.rvar"))?.2.clone();
        }
        m.fc.weight.data = find("fc.w")?.2.clone();
        m.fc.bias.data = find("fc.b")?.2.clone();
        Ok(m)
    }
}

/// Per-patch softmax probabilities, inference mode.
pub fn classifier_probs(model: &mut ClassifierModel, x: &Tensor4) -> Result<Tensor4> {
    let logits = model.forward(x, false)?;
    Ok(softmax_probs(&logits))
}
