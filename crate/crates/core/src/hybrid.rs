//! The hybrid pose model: landmark branch plus a small CNN over the face
//! crop, fused by concatenation into a final decoder.
//!
//! The CNN is three blocks of 5×5 valid convolution, Tanh, and 2×2 average
//! pooling (64→60→30→26→13→9→4 spatially), flattened into two Linear+Tanh
//! layers. The landmark branch is the full vanilla model, so its three-wide
//! output is what gets fused.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FaceImage, PoseAngles};
use crate::error::{Error, Result};
use crate::model::{
    gads_on_tape, DenseLayer, ForwardCtx, GadsConfig, GadsNodes, GadsParams,
};
use crate::preprocess::GroupedLandmarks;
use crate::tape::{ActivationKind, NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridConfig {
    pub conv_blocks: usize,
    pub conv_channels: usize,
    pub kernel: usize,
    pub fc_widths: Vec<usize>,
    /// Linear layers in the fusion decoder; the last is always 3-unit.
    pub fusion_layers: usize,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            conv_blocks: 3,
            conv_channels: 16,
            kernel: 5,
            fc_widths: vec![32, 16],
            fusion_layers: 1,
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_blocks == 0 || self.conv_channels == 0 || self.fusion_layers == 0 {
            return Err(Error::Config(
                "conv_blocks, conv_channels and fusion_layers must be positive".into(),
            ));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel must be odd and positive, got {}",
                self.kernel
            )));
        }
        if self.fc_widths.is_empty() {
            return Err(Error::Config("fc_widths must not be empty".into()));
        }
        // the spatial trace must survive every block on a 64x64 input
        let mut side = FaceImage::SIDE;
        for b in 0..self.conv_blocks {
            if side < self.kernel {
                return Err(Error::Config(format!(
                    "conv block {b} sees a {side}px side, smaller than the {}px kernel",
                    self.kernel
                )));
            }
            side -= self.kernel - 1; // valid convolution
            side /= 2; // pooling
        }
        if side == 0 {
            return Err(Error::Config("conv stack pools the image away".into()));
        }
        Ok(())
    }

    /// Flattened feature width after the conv stack on a 64×64 input.
    pub fn flat_width(&self) -> usize {
        let mut side = FaceImage::SIDE;
        for _ in 0..self.conv_blocks {
            side -= self.kernel - 1;
            side /= 2;
        }
        self.conv_channels * side * side
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub filters: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CnnParams {
    pub blocks: Vec<ConvBlock>,
    pub fc: Vec<DenseLayer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridParams {
    pub gads: GadsParams,
    pub cnn: CnnParams,
    pub fusion_hidden: Vec<DenseLayer>,
    pub fusion_output: DenseLayer,
}

impl HybridParams {
    pub fn init(
        gads_config: &GadsConfig,
        hybrid_config: &HybridConfig,
        group_count: usize,
        seed: u64,
    ) -> Result<Self> {
        hybrid_config.validate()?;
        let gads = GadsParams::init(gads_config, group_count, seed)?;
        // the CNN and fusion stacks get their own stream so the landmark
        // branch stays bit-identical to a vanilla model of the same seed
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9));

        let k = hybrid_config.kernel;
        let mut c_in = FaceImage::CHANNELS;
        let mut blocks = Vec::with_capacity(hybrid_config.conv_blocks);
        for _ in 0..hybrid_config.conv_blocks {
            let c_out = hybrid_config.conv_channels;
            let fan_in = c_in * k * k;
            blocks.push(ConvBlock {
                filters: crate::model::uniform_init(&mut rng, &[c_out, c_in, k, k], fan_in),
                bias: Tensor::zeros(&[c_out]),
            });
            c_in = c_out;
        }

        let mut fc = Vec::with_capacity(hybrid_config.fc_widths.len());
        let mut fan_in = hybrid_config.flat_width();
        for &w in &hybrid_config.fc_widths {
            fc.push(DenseLayer::init(&mut rng, fan_in, w));
            fan_in = w;
        }
        let cnn = CnnParams { blocks, fc };

        let fusion_in = 3 + hybrid_config.fc_widths.last().copied().unwrap_or(0);
        let mut fusion_hidden = Vec::new();
        for _ in 1..hybrid_config.fusion_layers {
            fusion_hidden.push(DenseLayer::init(&mut rng, fusion_in, fusion_in));
        }
        let fusion_output = DenseLayer::init(&mut rng, fusion_in, 3);

        Ok(Self {
            gads,
            cnn,
            fusion_hidden,
            fusion_output,
        })
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .gads
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (format!("gads.{n}"), t))
            .collect();
        for (i, b) in self.cnn.blocks.iter().enumerate() {
            out.push((format!("cnn.conv.{i}.filters"), &b.filters));
            out.push((format!("cnn.conv.{i}.bias"), &b.bias));
        }
        for (i, l) in self.cnn.fc.iter().enumerate() {
            out.push((format!("cnn.fc.{i}.weight"), &l.weight));
            out.push((format!("cnn.fc.{i}.bias"), &l.bias));
        }
        for (i, l) in self.fusion_hidden.iter().enumerate() {
            out.push((format!("fusion.hidden.{i}.weight"), &l.weight));
            out.push((format!("fusion.hidden.{i}.bias"), &l.bias));
        }
        out.push(("fusion.output.weight".into(), &self.fusion_output.weight));
        out.push(("fusion.output.bias".into(), &self.fusion_output.bias));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = self
            .gads
            .named_tensors_mut()
            .into_iter()
            .map(|(n, t)| (format!("gads.{n}"), t))
            .collect();
        for (i, b) in self.cnn.blocks.iter_mut().enumerate() {
            out.push((format!("cnn.conv.{i}.filters"), &mut b.filters));
            out.push((format!("cnn.conv.{i}.bias"), &mut b.bias));
        }
        for (i, l) in self.cnn.fc.iter_mut().enumerate() {
            out.push((format!("cnn.fc.{i}.weight"), &mut l.weight));
            out.push((format!("cnn.fc.{i}.bias"), &mut l.bias));
        }
        for (i, l) in self.fusion_hidden.iter_mut().enumerate() {
            out.push((format!("fusion.hidden.{i}.weight"), &mut l.weight));
            out.push((format!("fusion.hidden.{i}.bias"), &mut l.bias));
        }
        out.push(("fusion.output.weight".into(), &mut self.fusion_output.weight));
        out.push(("fusion.output.bias".into(), &mut self.fusion_output.bias));
        out
    }

    pub fn count_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }
}

pub struct HybridNodes {
    pub gads: GadsNodes,
    pub conv: Vec<(NodeId, NodeId)>,
    pub fc: Vec<(NodeId, NodeId)>,
    pub fusion_hidden: Vec<(NodeId, NodeId)>,
    pub fusion_output: (NodeId, NodeId),
}

impl HybridParams {
    /// Registration order matches [`HybridParams::named_tensors`].
    pub fn register(&self, tape: &mut Tape) -> HybridNodes {
        let gads = self.gads.register(tape);
        let conv = self
            .cnn
            .blocks
            .iter()
            .map(|b| (tape.param(b.filters.clone()), tape.param(b.bias.clone())))
            .collect();
        let fc = self
            .cnn
            .fc
            .iter()
            .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
            .collect();
        let fusion_hidden = self
            .fusion_hidden
            .iter()
            .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
            .collect();
        let fusion_output = (
            tape.param(self.fusion_output.weight.clone()),
            tape.param(self.fusion_output.bias.clone()),
        );
        HybridNodes {
            gads,
            conv,
            fc,
            fusion_hidden,
            fusion_output,
        }
    }
}

/// CNN branch on the tape: (conv→Tanh→pool)×blocks, flatten, (linear→Tanh)×fc.
pub fn cnn_on_tape(tape: &mut Tape, nodes: &HybridNodes, image: NodeId) -> Result<NodeId> {
    let mut x = image;
    for &(f, b) in &nodes.conv {
        x = tape.conv2d(x, f, b)?;
        x = tape.activate(x, ActivationKind::Tanh);
        x = tape.avg_pool2(x)?;
    }
    let flat = tape.value(x).numel();
    let mut x = tape.reshape(x, &[1, flat])?;
    for &(w, b) in &nodes.fc {
        x = tape.linear(x, w, b)?;
        x = tape.activate(x, ActivationKind::Tanh);
    }
    Ok(x)
}

/// Full hybrid forward: concat of both branch outputs through the fusion
/// decoder, returning the `1×3` output node.
pub fn hybrid_on_tape(
    tape: &mut Tape,
    nodes: &HybridNodes,
    gp: &GroupedLandmarks,
    image: &Tensor,
    ctx: &mut ForwardCtx,
) -> Result<NodeId> {
    let j1 = gads_on_tape(tape, &nodes.gads, gp, ctx)?;
    let img = tape.leaf(image.clone());
    let j2 = cnn_on_tape(tape, nodes, img)?;
    let mut x = tape.concat(&[j1, j2], 1)?;
    for &(w, b) in &nodes.fusion_hidden {
        x = tape.linear(x, w, b)?;
        x = tape.activate(x, ActivationKind::ReLU);
    }
    let (w, b) = nodes.fusion_output;
    tape.linear(x, w, b)
}

/// Inference-mode CNN feature vector for a face crop.
pub fn cnn_forward(image: &FaceImage, params: &HybridParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape);
    let img = tape.leaf(image.to_tensor());
    let out = cnn_on_tape(&mut tape, &nodes, img)?;
    let w = tape.value(out).numel();
    Tensor::from_vec(&[w], tape.value(out).data().to_vec())
}

/// Inference-mode full hybrid forward.
pub fn hybrid_forward(
    gp: &GroupedLandmarks,
    image: &FaceImage,
    params: &HybridParams,
) -> Result<PoseAngles> {
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape);
    let mut ctx = ForwardCtx::inference();
    let out = hybrid_on_tape(&mut tape, &nodes, gp, &image.to_tensor(), &mut ctx)?;
    let v = tape.value(out).data();
    Ok(PoseAngles::new(v[0], v[1], v[2]))
}
