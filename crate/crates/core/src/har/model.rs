//! Two-stream convolution-augmented transformer.
//!
//! The temporal stream treats time steps as tokens (token dim = feature
//! count); the channel stream treats features as tokens over the transposed
//! window (token dim = time length). Each stream embeds its tokens, runs
//! `n_blocks` of {self-attention + residual + layer norm, multi-scale conv
//! bank + residual + layer norm}, and global-average-pools over tokens. The
//! pooled vectors are concatenated and projected to class logits.

use super::HarError;
use crate::nn::attention::{linear, multi_head_attention, AttentionWeights};
use crate::nn::graph::{Gradients, Graph, NodeId};
use crate::nn::{ParamSet, Parameter, Tensor};
use crate::rng::DetRng;
use serde::{Deserialize, Serialize};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Window time length after downsampling.
    pub input_time: usize,
    pub input_features: usize,
    pub n_classes: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub n_blocks: usize,
    pub conv_kernels: Vec<usize>,
    pub dropout: f64,
    pub rng_seed: u64,
}

impl ModelConfig {
    /// Default-sized model for the given data shape.
    pub fn new(input_time: usize, input_features: usize, n_classes: usize) -> Self {
        Self {
            input_time,
            input_features,
            n_classes,
            embed_dim: 64,
            heads: 4,
            n_blocks: 2,
            conv_kernels: vec![3, 5, 7],
            dropout: 0.1,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), HarError> {
        let bad = |m: String| Err(HarError::InvalidConfig(m));
        if self.input_time == 0 || self.input_features == 0 {
            return bad("input_time and input_features must be >= 1".into());
        }
        if self.n_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.conv_kernels.is_empty() {
            return bad("conv_kernels must name at least one kernel size".into());
        }
        if let Some(k) = self.conv_kernels.iter().find(|k| **k == 0 || **k % 2 == 0) {
            return bad(format!("kernel sizes must be odd, got {k}"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Whether a forward pass applies dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
pub struct TwoStreamModel {
    pub cfg: ModelConfig,
    pub params: ParamSet,
}

/// One forward pass: the logits node plus the leaf node of every parameter,
/// in parameter-set order, for pulling gradients back out.
pub struct ForwardPass {
    pub logits: NodeId,
    param_nodes: Vec<NodeId>,
}

impl TwoStreamModel {
    pub fn new(cfg: ModelConfig) -> Result<Self, HarError> {
        cfg.validate()?;
        let mut rng = DetRng::new(cfg.rng_seed);
        let mut params = ParamSet::new();
        let e = cfg.embed_dim;

        // insertion order fixes both the rng draw order and the checkpoint
        // payload order; keep it stable
        for stream in ["temporal", "channel"] {
            let token_dim = if stream == "temporal" {
                cfg.input_features
            } else {
                cfg.input_time
            };
            add_linear(&mut params, &mut rng, &format!("{stream}.embed"), token_dim, e);
            for b in 0..cfg.n_blocks {
                let p = format!("{stream}.block{b}");
                for proj in ["wq", "wk", "wv", "wo"] {
                    add_linear(&mut params, &mut rng, &format!("{p}.attn.{proj}"), e, e);
                }
                add_layer_norm(&mut params, &format!("{p}.attn_ln"), e);
                for k in &cfg.conv_kernels {
                    add_conv(&mut params, &mut rng, &format!("{p}.conv{k}"), e, e, *k);
                }
                add_layer_norm(&mut params, &format!("{p}.conv_ln"), e);
            }
        }
        add_linear(&mut params, &mut rng, "head", 2 * e, cfg.n_classes);

        Ok(Self { cfg, params })
    }

    pub fn n_parameters(&self) -> usize {
        self.params.total_values()
    }

    /// Forward a batch `x: [batch, input_time, input_features]`. Train mode
    /// applies inverted dropout driven by `dropout_rng`; eval mode (or a
    /// zero dropout rate) is deterministic in the parameters alone.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: &Tensor,
        mode: Mode,
        mut dropout_rng: Option<&mut DetRng>,
    ) -> Result<ForwardPass, HarError> {
        let shape = x.shape().to_vec();
        match shape[..] {
            [_, t, f] if t == self.cfg.input_time && f == self.cfg.input_features => {}
            _ => {
                return Err(HarError::InvalidData(format!(
                    "input shape {:?} does not match [batch, {}, {}]",
                    shape, self.cfg.input_time, self.cfg.input_features
                )))
            }
        }
        if mode == Mode::Train && self.cfg.dropout > 0.0 && dropout_rng.is_none() {
            return Err(HarError::InvalidConfig(
                "train-mode forward with dropout needs an rng".into(),
            ));
        }

        let param_nodes: Vec<NodeId> = self
            .params
            .iter()
            .map(|p| g.leaf(p.tensor.clone()))
            .collect();
        let lookup = |name: &str| -> NodeId {
            let i = self
                .params
                .iter()
                .position(|p| p.name == name)
                .unwrap_or_else(|| panic!("parameter {name} missing"));
            param_nodes[i]
        };

        let xin = g.constant(x.clone());
        let temporal = self.stream(g, xin, "temporal", false, mode, &mut dropout_rng, &lookup)?;
        let channel = self.stream(g, xin, "channel", true, mode, &mut dropout_rng, &lookup)?;
        let pooled = g.concat_last(temporal, channel)?;
        let logits = linear(g, pooled, lookup("head.w"), lookup("head.b"))?;
        Ok(ForwardPass {
            logits,
            param_nodes,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn stream(
        &self,
        g: &mut Graph,
        x: NodeId,
        prefix: &str,
        transpose: bool,
        mode: Mode,
        dropout_rng: &mut Option<&mut DetRng>,
        lookup: &dyn Fn(&str) -> NodeId,
    ) -> Result<NodeId, HarError> {
        let e = self.cfg.embed_dim;
        let x = if transpose { g.permute(x, &[0, 2, 1])? } else { x };
        let shape = g.value(x).shape().to_vec();
        let (b, s, token) = (shape[0], shape[1], shape[2]);

        let flat = g.reshape(x, &[b * s, token])?;
        let emb = linear(
            g,
            flat,
            lookup(&format!("{prefix}.embed.w")),
            lookup(&format!("{prefix}.embed.b")),
        )?;
        let mut seq = g.reshape(emb, &[b, s, e])?;

        for blk in 0..self.cfg.n_blocks {
            let p = format!("{prefix}.block{blk}");
            let weights = AttentionWeights {
                wq: lookup(&format!("{p}.attn.wq.w")),
                bq: lookup(&format!("{p}.attn.wq.b")),
                wk: lookup(&format!("{p}.attn.wk.w")),
                bk: lookup(&format!("{p}.attn.wk.b")),
                wv: lookup(&format!("{p}.attn.wv.w")),
                bv: lookup(&format!("{p}.attn.wv.b")),
                wo: lookup(&format!("{p}.attn.wo.w")),
                bo: lookup(&format!("{p}.attn.wo.b")),
            };
            let mha = multi_head_attention(g, seq, &weights, self.cfg.heads)?;
            let attn_out = self.dropout(g, mha.out, mode, dropout_rng)?;
            let res = g.add(seq, attn_out)?;
            seq = g.layer_norm(
                res,
                lookup(&format!("{p}.attn_ln.gain")),
                lookup(&format!("{p}.attn_ln.bias")),
                LN_EPS,
            )?;

            // conv bank over the token axis, channels = embedding dims
            let cin = g.permute(seq, &[0, 2, 1])?;
            let mut bank: Option<NodeId> = None;
            for k in &self.cfg.conv_kernels {
                let branch = g.conv1d(
                    cin,
                    lookup(&format!("{p}.conv{k}.w")),
                    lookup(&format!("{p}.conv{k}.b")),
                )?;
                bank = Some(match bank {
                    None => branch,
                    Some(acc) => g.add(acc, branch)?,
                });
            }
            let conv = g.permute(bank.expect("at least one kernel"), &[0, 2, 1])?;
            let conv = self.dropout(g, conv, mode, dropout_rng)?;
            let res = g.add(seq, conv)?;
            seq = g.layer_norm(
                res,
                lookup(&format!("{p}.conv_ln.gain")),
                lookup(&format!("{p}.conv_ln.bias")),
                LN_EPS,
            )?;
        }
        Ok(g.mean_axis1(seq)?)
    }

    fn dropout(
        &self,
        g: &mut Graph,
        x: NodeId,
        mode: Mode,
        rng: &mut Option<&mut DetRng>,
    ) -> Result<NodeId, HarError> {
        let p = self.cfg.dropout;
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let rng = rng.as_mut().expect("checked in forward");
        let keep = 1.0 / (1.0 - p);
        let shape = g.value(x).shape().to_vec();
        let n: usize = shape.iter().product();
        let mask = Tensor::from_vec(
            &shape,
            (0..n)
                .map(|_| if rng.uniform() < p { 0.0 } else { keep })
                .collect(),
        );
        Ok(g.mul_const(x, mask)?)
    }

    /// Add this pass's gradients into the parameter set's grad buffers.
    pub fn accumulate_grads(&mut self, grads: &Gradients, pass: &ForwardPass) {
        for (i, p) in self.params.iter_mut().enumerate() {
            if let Some(g) = grads.get(pass.param_nodes[i]) {
                for (acc, &v) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *acc += v;
                }
            }
        }
    }

    /// Softmax class probabilities for a single window, eval mode.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Vec<f64>, HarError> {
        let mut g = Graph::new();
        let pass = self.forward(&mut g, x, Mode::Eval, None)?;
        let probs = g.softmax(pass.logits);
        Ok(g.value(probs).data().to_vec())
    }
}

/// Replace the classification head of a trained model: body parameters are
/// copied bit-exactly, the head is re-initialized for `n_new_classes` from
/// `head_seed`. With `freeze_body`, only the head stays trainable.
pub fn transfer(
    source: &TwoStreamModel,
    n_new_classes: usize,
    head_seed: u64,
    freeze_body: bool,
) -> Result<TwoStreamModel, HarError> {
    let mut cfg = source.cfg.clone();
    cfg.n_classes = n_new_classes;
    let mut model = TwoStreamModel::new(cfg)?;
    let mut rng = DetRng::new(head_seed).fork("transfer-head");
    for p in model.params.iter_mut() {
        if let Some(stripped) = p.name.strip_prefix("head.") {
            let bound = (1.0 / (2.0 * source.cfg.embed_dim as f64)).sqrt();
            for v in p.tensor.data_mut() {
                *v = rng.uniform_in(-bound, bound);
            }
            debug_assert!(stripped == "w" || stripped == "b");
        } else {
            let src = source
                .params
                .get(&p.name)
                .ok_or_else(|| HarError::Checkpoint(format!("missing parameter {}", p.name)))?;
            if src.tensor.shape() != p.tensor.shape() {
                return Err(HarError::Checkpoint(format!(
                    "parameter {} shape {:?} does not match {:?}",
                    p.name,
                    src.tensor.shape(),
                    p.tensor.shape()
                )));
            }
            p.tensor = src.tensor.clone();
            p.trainable = !freeze_body;
        }
    }
    Ok(model)
}

fn add_linear(params: &mut ParamSet, rng: &mut DetRng, name: &str, fan_in: usize, fan_out: usize) {
    let bound = (1.0 / fan_in as f64).sqrt();
    let w = Tensor::from_vec(
        &[fan_out, fan_in],
        (0..fan_out * fan_in)
            .map(|_| rng.uniform_in(-bound, bound))
            .collect(),
    );
    let b = Tensor::from_vec(
        &[fan_out],
        (0..fan_out).map(|_| rng.uniform_in(-bound, bound)).collect(),
    );
    params.insert(Parameter::new(format!("{name}.w"), w));
    params.insert(Parameter::new(format!("{name}.b"), b));
}

fn add_conv(
    params: &mut ParamSet,
    rng: &mut DetRng,
    name: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
) {
    let fan_in = c_in * k;
    let bound = (1.0 / fan_in as f64).sqrt();
    let w = Tensor::from_vec(
        &[c_out, c_in, k],
        (0..c_out * c_in * k)
            .map(|_| rng.uniform_in(-bound, bound))
            .collect(),
    );
    let b = Tensor::from_vec(
        &[c_out],
        (0..c_out).map(|_| rng.uniform_in(-bound, bound)).collect(),
    );
    params.insert(Parameter::new(format!("{name}.w"), w));
    params.insert(Parameter::new(format!("{name}.b"), b));
}

fn add_layer_norm(params: &mut ParamSet, name: &str, dim: usize) {
    params.insert(Parameter::new(
        format!("{name}.gain"),
        Tensor::filled(&[dim], 1.0),
    ));
    params.insert(Parameter::new(format!("{name}.bias"), Tensor::zeros(&[dim])));
}

/// Smallest configuration that exercises every layer; test-only.
#[cfg(test)]
pub(crate) fn tiny_cfg() -> ModelConfig {
    ModelConfig {
        input_time: 6,
        input_features: 4,
        n_classes: 2,
        embed_dim: 4,
        heads: 2,
        n_blocks: 1,
        conv_kernels: vec![3],
        dropout: 0.0,
        rng_seed: 5,
    }
}
