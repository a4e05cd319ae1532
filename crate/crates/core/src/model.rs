//! The grouped-attention deep-set pose model.
//!
//! Five parallel deep-set layers (one per landmark group) each encode a
//! small point set into one embedding; multi-head self-attention mixes the
//! five embeddings; the concatenated attention output feeds a small decoder
//! that emits (yaw, pitch, roll) in degrees.
//!
//! Every deep-set layer owns its weights: groups are not interchangeable,
//! only points within a group are.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PoseAngles;
use crate::error::{Error, Result};
use crate::preprocess::GroupedLandmarks;
use crate::tape::{ActivationKind, NodeId, Reduction, Tape};
use crate::tensor::Tensor;

/// Architecture knobs for the vanilla model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GadsConfig {
    /// Embedding width `d` shared by encoders, decoders and attention.
    pub embedding_dim: usize,
    pub heads: usize,
    /// Layers in each deep-set encoder stack.
    pub encoder_layers: usize,
    /// Layers in each deep-set decoder stack.
    pub decoder_layers: usize,
    /// Linear+activation pairs before the 3-unit output layer.
    pub final_decoder_layers: usize,
    pub activation: ActivationKind,
    pub invariant: Reduction,
    pub dropout: f64,
}

impl Default for GadsConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 32,
            heads: 4,
            encoder_layers: 1,
            decoder_layers: 1,
            final_decoder_layers: 2,
            activation: ActivationKind::ReLU,
            invariant: Reduction::Max,
            dropout: 0.0,
        }
    }
}

impl GadsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.heads == 0 {
            return Err(Error::Config("embedding_dim and heads must be positive".into()));
        }
        if !self.embedding_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embedding_dim {} must be divisible by heads {}",
                self.embedding_dim, self.heads
            )));
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 || self.final_decoder_layers == 0 {
            return Err(Error::Config("layer counts must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embedding_dim / self.heads
    }

    /// Whether every knob sits inside the swept ranges; anything outside
    /// is valid but experimental.
    pub fn within_ablation_grid(&self) -> bool {
        self.embedding_dim == 32
            && [2, 4, 8].contains(&self.heads)
            && self.encoder_layers == 1
            && (1..=4).contains(&self.decoder_layers)
            && (1..=3).contains(&self.final_decoder_layers)
            && self.activation != ActivationKind::Tanh
            && self.invariant == Reduction::Max
            && [0.0, 0.1, 0.2].contains(&self.dropout)
    }

    /// Hidden widths of the deep-set decoder stack. A single layer maps
    /// d→d; deeper stacks widen to 2d internally.
    fn deepset_decoder_widths(&self, d: usize) -> Vec<usize> {
        if self.decoder_layers == 1 {
            vec![d]
        } else {
            let mut widths = vec![2 * d; self.decoder_layers - 1];
            widths.push(d);
            widths
        }
    }

    /// Hidden widths of the final decoder pairs: 64 halved per extra pair,
    /// floored at 8.
    fn final_decoder_widths(&self) -> Vec<usize> {
        (0..self.final_decoder_layers)
            .map(|i| (64usize >> i).max(8))
            .collect()
    }
}

/// One fully connected layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub(crate) fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: uniform_init(rng, &[fan_in, fan_out], fan_in),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

}

/// Weights drawn from `U(-sqrt(1/fan_in), sqrt(1/fan_in))`.
pub(crate) fn uniform_init(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("init shape is valid")
}

/// Encoder stack, invariant reduction, decoder stack for one group.
#[derive(Clone, Debug, PartialEq)]
pub struct DeepSetLayerParams {
    pub encoder: Vec<DenseLayer>,
    pub decoder: Vec<DenseLayer>,
    pub activation: ActivationKind,
    pub invariant: Reduction,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHead {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
}

/// Per-head projections plus the shared output projection; no biases and
/// no residual path.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub heads: Vec<AttentionHead>,
    pub w_o: Tensor,
}

impl AttentionParams {
    pub fn model_dim(&self) -> usize {
        self.heads[0].w_q.shape()[0]
    }

    pub fn head_dim(&self) -> usize {
        self.heads[0].w_q.shape()[1]
    }
}

/// Hidden pairs and the 3-unit output layer after the attention concat.
#[derive(Clone, Debug, PartialEq)]
pub struct FinalDecoderParams {
    pub hidden: Vec<DenseLayer>,
    pub output: DenseLayer,
    pub activation: ActivationKind,
    pub dropout: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GadsParams {
    pub deepsets: Vec<DeepSetLayerParams>,
    pub attention: AttentionParams,
    pub decoder: FinalDecoderParams,
}

impl GadsParams {
    /// Deterministic initialization from a config and group count.
    pub fn init(config: &GadsConfig, group_count: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if group_count == 0 {
            return Err(Error::Config("group_count must be positive".into()));
        }
        let d = config.embedding_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let deepsets = (0..group_count)
            .map(|_| {
                let mut encoder = Vec::with_capacity(config.encoder_layers);
                let mut fan_in = 3;
                for _ in 0..config.encoder_layers {
                    encoder.push(DenseLayer::init(&mut rng, fan_in, d));
                    fan_in = d;
                }
                let mut decoder = Vec::with_capacity(config.decoder_layers);
                let mut fan_in = d;
                for width in config.deepset_decoder_widths(d) {
                    decoder.push(DenseLayer::init(&mut rng, fan_in, width));
                    fan_in = width;
                }
                DeepSetLayerParams {
                    encoder,
                    decoder,
                    activation: config.activation,
                    invariant: config.invariant,
                }
            })
            .collect();

        let dk = config.head_dim();
        let heads = (0..config.heads)
            .map(|_| AttentionHead {
                w_q: uniform_init(&mut rng, &[d, dk], d),
                w_k: uniform_init(&mut rng, &[d, dk], d),
                w_v: uniform_init(&mut rng, &[d, dk], d),
            })
            .collect();
        let attention = AttentionParams {
            heads,
            w_o: uniform_init(&mut rng, &[config.heads * dk, d], config.heads * dk),
        };

        let mut hidden = Vec::with_capacity(config.final_decoder_layers);
        let mut fan_in = group_count * d;
        for width in config.final_decoder_widths() {
            hidden.push(DenseLayer::init(&mut rng, fan_in, width));
            fan_in = width;
        }
        let output = DenseLayer::init(&mut rng, fan_in, 3);
        let decoder = FinalDecoderParams {
            hidden,
            output,
            activation: config.activation,
            dropout: config.dropout,
        };

        Ok(Self {
            deepsets,
            attention,
            decoder,
        })
    }

    /// All learnable tensors in a fixed canonical order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (g, ds) in self.deepsets.iter().enumerate() {
            for (l, layer) in ds.encoder.iter().enumerate() {
                out.push((format!("deepset.{g}.encoder.{l}.weight"), &layer.weight));
                out.push((format!("deepset.{g}.encoder.{l}.bias"), &layer.bias));
            }
            for (l, layer) in ds.decoder.iter().enumerate() {
                out.push((format!("deepset.{g}.decoder.{l}.weight"), &layer.weight));
                out.push((format!("deepset.{g}.decoder.{l}.bias"), &layer.bias));
            }
        }
        for (h, head) in self.attention.heads.iter().enumerate() {
            out.push((format!("attention.head.{h}.wq"), &head.w_q));
            out.push((format!("attention.head.{h}.wk"), &head.w_k));
            out.push((format!("attention.head.{h}.wv"), &head.w_v));
        }
        out.push(("attention.wo".into(), &self.attention.w_o));
        for (l, layer) in self.decoder.hidden.iter().enumerate() {
            out.push((format!("decoder.hidden.{l}.weight"), &layer.weight));
            out.push((format!("decoder.hidden.{l}.bias"), &layer.bias));
        }
        out.push(("decoder.output.weight".into(), &self.decoder.output.weight));
        out.push(("decoder.output.bias".into(), &self.decoder.output.bias));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (g, ds) in self.deepsets.iter_mut().enumerate() {
            for (l, layer) in ds.encoder.iter_mut().enumerate() {
                out.push((format!("deepset.{g}.encoder.{l}.weight"), &mut layer.weight));
                out.push((format!("deepset.{g}.encoder.{l}.bias"), &mut layer.bias));
            }
            for (l, layer) in ds.decoder.iter_mut().enumerate() {
                out.push((format!("deepset.{g}.decoder.{l}.weight"), &mut layer.weight));
                out.push((format!("deepset.{g}.decoder.{l}.bias"), &mut layer.bias));
            }
        }
        for (h, head) in self.attention.heads.iter_mut().enumerate() {
            out.push((format!("attention.head.{h}.wq"), &mut head.w_q));
            out.push((format!("attention.head.{h}.wk"), &mut head.w_k));
            out.push((format!("attention.head.{h}.wv"), &mut head.w_v));
        }
        out.push(("attention.wo".into(), &mut self.attention.w_o));
        for (l, layer) in self.decoder.hidden.iter_mut().enumerate() {
            out.push((format!("decoder.hidden.{l}.weight"), &mut layer.weight));
            out.push((format!("decoder.hidden.{l}.bias"), &mut layer.bias));
        }
        out.push(("decoder.output.weight".into(), &mut self.decoder.output.weight));
        out.push(("decoder.output.bias".into(), &mut self.decoder.output.bias));
        out
    }

    /// Exact count of learnable scalars.
    pub fn count_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Parameter node handles after registering [`GadsParams`] on a tape.
pub struct GadsNodes {
    pub deepsets: Vec<DeepSetNodes>,
    pub attention: AttentionNodes,
    pub decoder: FinalDecoderNodes,
}

pub struct DeepSetNodes {
    pub encoder: Vec<(NodeId, NodeId)>,
    pub decoder: Vec<(NodeId, NodeId)>,
    pub activation: ActivationKind,
    pub invariant: Reduction,
}

pub struct AttentionNodes {
    pub heads: Vec<(NodeId, NodeId, NodeId)>,
    pub w_o: NodeId,
    pub head_dim: usize,
}

pub struct FinalDecoderNodes {
    pub hidden: Vec<(NodeId, NodeId)>,
    pub output: (NodeId, NodeId),
    pub activation: ActivationKind,
    pub dropout: f64,
}

impl GadsParams {
    /// Pushes every tensor onto the tape as a parameter, in the same order
    /// as [`GadsParams::named_tensors`].
    pub fn register(&self, tape: &mut Tape) -> GadsNodes {
        let deepsets = self
            .deepsets
            .iter()
            .map(|ds| DeepSetNodes {
                encoder: ds
                    .encoder
                    .iter()
                    .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
                    .collect(),
                decoder: ds
                    .decoder
                    .iter()
                    .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
                    .collect(),
                activation: ds.activation,
                invariant: ds.invariant,
            })
            .collect();
        let attention = AttentionNodes {
            heads: self
                .attention
                .heads
                .iter()
                .map(|h| {
                    (
                        tape.param(h.w_q.clone()),
                        tape.param(h.w_k.clone()),
                        tape.param(h.w_v.clone()),
                    )
                })
                .collect(),
            w_o: tape.param(self.attention.w_o.clone()),
            head_dim: self.attention.head_dim(),
        };
        let decoder = FinalDecoderNodes {
            hidden: self
                .decoder
                .hidden
                .iter()
                .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
                .collect(),
            output: (
                tape.param(self.decoder.output.weight.clone()),
                tape.param(self.decoder.output.bias.clone()),
            ),
            activation: self.decoder.activation,
            dropout: self.decoder.dropout,
        };
        GadsNodes {
            deepsets,
            attention,
            decoder,
        }
    }
}

/// Per-pass state: dropout behaviour and its random stream.
pub struct ForwardCtx {
    pub training: bool,
    pub rng: ChaCha8Rng,
}

impl ForwardCtx {
    pub fn inference() -> Self {
        Self {
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn training(seed: u64) -> Self {
        Self {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// One deep-set layer on the tape: encode rows, reduce, decode.
pub fn deepset_on_tape(
    tape: &mut Tape,
    nodes: &DeepSetNodes,
    group: NodeId,
) -> Result<NodeId> {
    let mut x = group;
    for &(w, b) in &nodes.encoder {
        x = tape.linear(x, w, b)?;
        x = tape.activate(x, nodes.activation);
    }
    let z = tape.reduce_rows(x, nodes.invariant)?;
    let d = tape.value(z).numel();
    let mut x = tape.reshape(z, &[1, d])?;
    for &(w, b) in &nodes.decoder {
        x = tape.linear(x, w, b)?;
        x = tape.activate(x, nodes.activation);
    }
    Ok(x)
}

/// Scaled dot-product self-attention over the group embeddings.
pub fn attention_on_tape(tape: &mut Tape, nodes: &AttentionNodes, z: NodeId) -> Result<NodeId> {
    let scale = 1.0 / (nodes.head_dim as f64).sqrt();
    let mut head_outputs = Vec::with_capacity(nodes.heads.len());
    for &(wq, wk, wv) in &nodes.heads {
        let q = tape.matmul(z, wq)?;
        let k = tape.matmul(z, wk)?;
        let v = tape.matmul(z, wv)?;
        let kt = tape.transpose(k)?;
        let logits = tape.matmul(q, kt)?;
        let scaled = tape.scale(logits, scale);
        let probs = tape.softmax_rows(scaled)?;
        head_outputs.push(tape.matmul(probs, v)?);
    }
    let cat = tape.concat(&head_outputs, 1)?;
    tape.matmul(cat, nodes.w_o)
}

/// Full vanilla forward pass, returning the `1×3` output node.
pub fn gads_on_tape(
    tape: &mut Tape,
    nodes: &GadsNodes,
    gp: &GroupedLandmarks,
    ctx: &mut ForwardCtx,
) -> Result<NodeId> {
    if gp.groups.len() != nodes.deepsets.len() {
        return Err(Error::dim(format!(
            "model expects {} groups, input has {}",
            nodes.deepsets.len(),
            gp.groups.len()
        )));
    }
    let mut embeddings = Vec::with_capacity(gp.groups.len());
    for (group, ds) in gp.groups.iter().zip(&nodes.deepsets) {
        let g = tape.leaf(group.clone());
        embeddings.push(deepset_on_tape(tape, ds, g)?);
    }
    let z = tape.concat(&embeddings, 0)?;
    let e = attention_on_tape(tape, &nodes.attention, z)?;
    let width = tape.value(e).numel();
    let mut x = tape.reshape(e, &[1, width])?;
    for &(w, b) in &nodes.decoder.hidden {
        x = tape.linear(x, w, b)?;
        x = tape.activate(x, nodes.decoder.activation);
        x = tape.dropout(x, nodes.decoder.dropout, ctx.training, &mut ctx.rng)?;
    }
    let (w, b) = nodes.decoder.output;
    tape.linear(x, w, b)
}

/// Inference-mode deep-set layer: returns the group's `d`-dim embedding.
pub fn deepset_forward(group: &Tensor, params: &DeepSetLayerParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let nodes = DeepSetNodes {
        encoder: params
            .encoder
            .iter()
            .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
            .collect(),
        decoder: params
            .decoder
            .iter()
            .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
            .collect(),
        activation: params.activation,
        invariant: params.invariant,
    };
    let g = tape.leaf(group.clone());
    let out = deepset_on_tape(&mut tape, &nodes, g)?;
    let d = tape.value(out).numel();
    Tensor::from_vec(&[d], tape.value(out).data().to_vec())
}

/// Inference-mode multi-head self-attention over an `M×d` embedding matrix.
pub fn multihead_self_attention(z: &Tensor, params: &AttentionParams) -> Result<Tensor> {
    if z.shape().len() != 2 || z.shape()[1] != params.model_dim() {
        return Err(Error::dim(format!(
            "attention expects M x {}, got {:?}",
            params.model_dim(),
            z.shape()
        )));
    }
    let mut tape = Tape::new();
    let nodes = AttentionNodes {
        heads: params
            .heads
            .iter()
            .map(|h| {
                (
                    tape.param(h.w_q.clone()),
                    tape.param(h.w_k.clone()),
                    tape.param(h.w_v.clone()),
                )
            })
            .collect(),
        w_o: tape.param(params.w_o.clone()),
        head_dim: params.head_dim(),
    };
    let zn = tape.leaf(z.clone());
    let out = attention_on_tape(&mut tape, &nodes, zn)?;
    Ok(tape.value(out).clone())
}

/// Inference-mode full forward: grouped landmarks in, pose out.
pub fn gads_forward(gp: &GroupedLandmarks, params: &GadsParams) -> Result<PoseAngles> {
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape);
    let mut ctx = ForwardCtx::inference();
    let out = gads_on_tape(&mut tape, &nodes, gp, &mut ctx)?;
    let v = tape.value(out).data();
    Ok(PoseAngles::new(v[0], v[1], v[2]))
}
