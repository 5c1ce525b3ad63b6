//! Operation and DRAM-traffic counts for layers and blocks.
//!
//! Every count is exact integer arithmetic with overflow detection. Block
//! costs follow a fixed layer decomposition:
//!
//! * ConvFirst: `conv` (grouped 3x3), `exp` (1x1 to `t·C`), `prj` (1x1 back).
//!   A stride-2 block computes the grouped conv at input resolution, blur-pools
//!   it and concatenates a blur-pooled copy of the input, so `exp` sees `2C`
//!   channels at a quarter of the input positions.
//! * MBConv: `exp`, `conv`, `se` (two dense transforms and the gate), `prj`.
//!   At stride 2 the conv is evaluated at input resolution and pooled.
//! * FFN: `exp`, `prj`.
//!
//! Every block layer carries a per-channel bias (folded batch norm). Under
//! layer-wise execution each layer reads its input and weights and writes
//! its output; a residual add fused into `prj` additionally reads the block
//! input. Under block fusion only the block input, block output and weights
//! cross DRAM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    BlockKind, BlockSpec, ConvSpec, DeviceSpec, ExecutionScheme, NetworkSpec, TensorDims,
};

/// Weights per hidden channel of the ConvFirst/MBConv grouped conv is
/// `group_width · KERNEL · KERNEL`.
pub const BLOCK_KERNEL: u32 = 3;

/// Cost of one kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    /// Layer name within its block (`exp`, `conv`, ...); empty for a
    /// whole-block kernel.
    pub label: String,
    pub ops: u64,
    /// Elements moved between DRAM and the processor.
    pub elements: u64,
    pub bytes: u64,
    /// Share of `elements` that are weights and biases.
    pub weight_elements: u64,
    /// Share of `elements` that are block-internal (hidden) activations.
    pub hidden_elements: u64,
    /// Kernel input extent.
    pub dims: TensorDims,
    /// The kernel could not be fused and is costed layer by layer.
    pub fallback: bool,
}

impl LayerCost {
    pub fn intensity(&self) -> f64 {
        self.ops as f64 / self.bytes as f64
    }

    pub fn activation_elements(&self) -> u64 {
        self.elements - self.weight_elements
    }
}

fn mul(factors: &[u64]) -> Result<u64> {
    factors
        .iter()
        .try_fold(1u64, |acc, &f| acc.checked_mul(f))
        .ok_or(Error::Overflow("operation or element count"))
}

fn add(terms: &[u64]) -> Result<u64> {
    terms
        .iter()
        .try_fold(0u64, |acc, &t| acc.checked_add(t))
        .ok_or(Error::Overflow("operation or element count"))
}

fn check_spec(spec: &ConvSpec, dims: TensorDims) -> Result<()> {
    let mut problems = spec.violations();
    if dims.channels != spec.in_channels {
        problems.push(format!(
            "input has {} channels, layer expects {}",
            dims.channels, spec.in_channels
        ));
    }
    if !dims.is_valid() {
        problems.push(format!("input extent {dims} has a zero dimension"));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Shape(problems.join("; ")))
    }
}

/// `2·N·H_out·W_out·K·T·R·S`, plus `K` when the layer has a bias.
pub fn conv_ops(spec: &ConvSpec, dims: TensorDims) -> Result<u64> {
    check_spec(spec, dims)?;
    let out = spec.output_dims(dims);
    let macs = mul(&[
        out.batch as u64,
        out.height as u64,
        out.width as u64,
        spec.out_channels as u64,
        spec.group_width as u64,
        spec.kernel_height as u64,
        spec.kernel_width as u64,
    ])?;
    add(&[mul(&[2, macs])?, spec.bias_elements()])
}

/// Output, input, weight and bias elements of a standalone conv layer.
pub fn conv_elements(spec: &ConvSpec, dims: TensorDims) -> Result<u64> {
    check_spec(spec, dims)?;
    let out = spec.output_dims(dims);
    add(&[
        out.elements()?,
        dims.elements()?,
        spec.weight_elements(),
        spec.bias_elements(),
    ])
}

pub fn conv_bytes_layerwise(spec: &ConvSpec, dims: TensorDims, device: &DeviceSpec) -> Result<u64> {
    mul(&[conv_elements(spec, dims)?, device.bytes_per_element as u64])
}

/// Exact operational intensity of a standalone conv layer.
pub fn op_intensity(spec: &ConvSpec, dims: TensorDims, device: &DeviceSpec) -> Result<f64> {
    let ops = conv_ops(spec, dims)?;
    let bytes = conv_bytes_layerwise(spec, dims, device)?;
    Ok(ops as f64 / bytes as f64)
}

fn element_factor(bytes_per_element: u32) -> f64 {
    2.0 / bytes_per_element as f64
}

/// Large-`N·H·W` limit `T·R·S / (1 + C/K)` (scaled by `2 / bytes_per_element`).
///
/// For dense layers this is `C·R·S / (1 + C/K)`, for point-wise layers
/// `C / (1 + C/K)` and for depth-wise layers `R·S / (1 + C/K)`.
pub fn intensity_large_nhw(spec: &ConvSpec, bytes_per_element: u32) -> f64 {
    let trs = spec.group_width as f64 * spec.kernel_height as f64 * spec.kernel_width as f64;
    element_factor(bytes_per_element) * trs
        / (1.0 + spec.in_channels as f64 / spec.out_channels as f64)
}

pub fn intensity_pointwise(c: u32, k: u32, bytes_per_element: u32) -> f64 {
    intensity_large_nhw(&ConvSpec::pointwise(c, k), bytes_per_element)
}

pub fn intensity_depthwise(r: u32, s: u32, c: u32, k: u32, bytes_per_element: u32) -> f64 {
    let spec = ConvSpec {
        in_channels: c,
        out_channels: k,
        kernel_height: r,
        kernel_width: s,
        group_width: 1,
        stride: 1,
        has_bias: false,
    };
    intensity_large_nhw(&spec, bytes_per_element)
}

/// Small-`N·H·W` limit where loading weights dominates: intensity `≈ N·H·W`.
pub fn intensity_small_nhw(dims: TensorDims, bytes_per_element: u32) -> f64 {
    element_factor(bytes_per_element) * dims.positions() as f64
}

#[derive(Debug, Clone)]
struct Layer {
    label: &'static str,
    ops: u64,
    input: u64,
    output: u64,
    weights: u64,
    /// Extra activation read (residual shortcut).
    extra: u64,
    hidden_input: bool,
    hidden_output: bool,
    dims: TensorDims,
}

impl Layer {
    fn conv(label: &'static str, spec: ConvSpec, dims: TensorDims) -> Result<Self> {
        Ok(Self {
            label,
            ops: conv_ops(&spec, dims)?,
            input: dims.elements()?,
            output: spec.output_dims(dims).elements()?,
            weights: spec.weight_elements() + spec.bias_elements(),
            extra: 0,
            hidden_input: false,
            hidden_output: false,
            dims,
        })
    }

    fn elements(&self) -> Result<u64> {
        add(&[self.input, self.output, self.weights, self.extra])
    }

    fn hidden(&self) -> u64 {
        let mut h = 0;
        if self.hidden_input {
            h += self.input;
        }
        if self.hidden_output {
            h += self.output;
        }
        h
    }
}

fn quarter(dims: TensorDims) -> TensorDims {
    TensorDims { height: dims.height / 2, width: dims.width / 2, ..dims }
}

fn pointwise(c: u32, k: u32) -> ConvSpec {
    ConvSpec::pointwise(c, k).with_bias(true)
}

fn block_conv(channels: u32, group_width: u32) -> ConvSpec {
    ConvSpec::grouped(channels, group_width, BLOCK_KERNEL).with_bias(true)
}

fn convfirst_layers(block: &BlockSpec, dims: TensorDims, group_width: u32) -> Result<Vec<Layer>> {
    let c = block.in_channels;
    let k = block.out_channels;
    let hidden = block.hidden_channels().expect("convfirst has a hidden layer");
    let mut conv = Layer::conv("conv", block_conv(c, group_width), dims)?;
    conv.hidden_output = true;
    let (exp_in, exp_dims) = if block.stride == 2 {
        let q = quarter(dims);
        conv.output = q.with_channels(2 * c).elements()?;
        (2 * c, q.with_channels(2 * c))
    } else {
        (c, dims)
    };
    let mut exp = Layer::conv("exp", pointwise(exp_in, hidden), exp_dims)?;
    exp.hidden_input = true;
    exp.hidden_output = true;
    let mut prj = Layer::conv("prj", pointwise(hidden, k), exp_dims.with_channels(hidden))?;
    prj.hidden_input = true;
    if block.has_residual() {
        prj.extra = dims.elements()?;
    }
    Ok(vec![conv, exp, prj])
}

fn mbconv_layers(block: &BlockSpec, dims: TensorDims, group_width: u32) -> Result<Vec<Layer>> {
    let c = block.in_channels;
    let k = block.out_channels;
    let hidden = block.hidden_channels().expect("mbconv has a hidden layer");
    let squeeze = block.squeeze_channels().expect("mbconv has a squeeze width") as u64;
    let mut exp = Layer::conv("exp", pointwise(c, hidden), dims)?;
    exp.hidden_output = true;
    let hidden_dims = dims.with_channels(hidden);
    let mut conv = Layer::conv("conv", block_conv(hidden, group_width), hidden_dims)?;
    conv.hidden_input = true;
    conv.hidden_output = true;
    let post = if block.stride == 2 { quarter(hidden_dims) } else { hidden_dims };
    conv.output = post.elements()?;
    let gated = post.elements()?;
    let se = Layer {
        label: "se",
        ops: mul(&[4, dims.batch as u64, hidden as u64, squeeze])?,
        input: gated,
        output: gated,
        weights: add(&[mul(&[2, hidden as u64, squeeze])?, squeeze, hidden as u64])?,
        extra: 0,
        hidden_input: true,
        hidden_output: true,
        dims: post,
    };
    let mut prj = Layer::conv("prj", pointwise(hidden, k), post)?;
    prj.hidden_input = true;
    if block.has_residual() {
        prj.extra = dims.elements()?;
    }
    Ok(vec![exp, conv, se, prj])
}

fn ffn_layers(block: &BlockSpec, dims: TensorDims) -> Result<Vec<Layer>> {
    let c = block.in_channels;
    let hidden = block.hidden_channels().expect("ffn has a hidden layer");
    let mut exp = Layer::conv("exp", pointwise(c, hidden), dims)?;
    exp.hidden_output = true;
    let mut prj = Layer::conv("prj", pointwise(hidden, block.out_channels), dims.with_channels(hidden))?;
    prj.hidden_input = true;
    Ok(vec![exp, prj])
}

fn head_layers(block: &BlockSpec, dims: TensorDims, num_classes: u32) -> Result<Vec<Layer>> {
    let embed = block.out_channels;
    let conv = Layer::conv("conv", pointwise(block.in_channels, embed), dims)?;
    let pooled = TensorDims::new(dims.batch, 1, 1, embed);
    let mut fc = Layer::conv("fc", pointwise(embed, num_classes), pooled)?;
    // Pooling is fused into the classifier, which therefore reads the
    // full-resolution embedding.
    fc.input = dims.with_channels(embed).elements()?;
    Ok(vec![conv, fc])
}

fn layers(block: &BlockSpec, dims: TensorDims) -> Result<Vec<Layer>> {
    let problems = block.violations(dims);
    if !problems.is_empty() || !dims.is_valid() {
        return Err(Error::Shape(format!(
            "{} block at {dims}: {}",
            block.kind.name(),
            problems.join("; ")
        )));
    }
    match block.kind {
        BlockKind::PlainConv { .. } | BlockKind::Stem { .. } => {
            let spec = block.conv_spec().expect("conv block");
            Ok(vec![Layer::conv("", spec, dims)?])
        }
        BlockKind::ConvFirst { group_width, .. } => convfirst_layers(block, dims, group_width),
        BlockKind::MbConv { group_width, .. } => mbconv_layers(block, dims, group_width),
        BlockKind::Ffn { .. } => ffn_layers(block, dims),
        BlockKind::Head { num_classes } => head_layers(block, dims, num_classes),
    }
}

fn to_cost(label: &str, ops: u64, elements: u64, weights: u64, hidden: u64, dims: TensorDims, bpe: u32) -> Result<LayerCost> {
    Ok(LayerCost {
        label: label.to_string(),
        ops,
        elements,
        bytes: mul(&[elements, bpe as u64])?,
        weight_elements: weights,
        hidden_elements: hidden,
        dims,
        fallback: false,
    })
}

/// Costs of a block placed on an input of extent `dims` (batch included).
///
/// Layer-wise execution yields one cost per layer. Block fusion yields a
/// single cost; stem and head blocks cannot be fused and come back as one
/// cost equal to the sum of their layers, flagged with `fallback`.
pub fn block_costs(
    block: &BlockSpec,
    dims: TensorDims,
    scheme: ExecutionScheme,
    device: &DeviceSpec,
) -> Result<Vec<LayerCost>> {
    let bpe = device.bytes_per_element;
    let layers = layers(block, dims)?;
    match scheme {
        ExecutionScheme::LayerWise => layers
            .iter()
            .map(|l| to_cost(l.label, l.ops, l.elements()?, l.weights, l.hidden(), l.dims, bpe))
            .collect(),
        ExecutionScheme::BlockFusion => {
            let ops = add(&layers.iter().map(|l| l.ops).collect::<Vec<_>>())?;
            let weights = add(&layers.iter().map(|l| l.weights).collect::<Vec<_>>())?;
            let fusible = matches!(
                block.kind,
                BlockKind::ConvFirst { .. }
                    | BlockKind::MbConv { .. }
                    | BlockKind::Ffn { .. }
                    | BlockKind::PlainConv { .. }
            );
            let mut cost = if fusible {
                let output = block.output_dims(dims);
                let elements = add(&[dims.elements()?, output.elements()?, weights])?;
                to_cost("", ops, elements, weights, 0, dims, bpe)?
            } else {
                let elements = add(
                    &layers.iter().map(|l| l.elements()).collect::<Result<Vec<_>>>()?,
                )?;
                let hidden = layers.iter().map(Layer::hidden).sum();
                let mut c = to_cost("", ops, elements, weights, hidden, dims, bpe)?;
                c.fallback = true;
                debug_assert!(matches!(block.kind, BlockKind::Stem { .. } | BlockKind::Head { .. }));
                c
            };
            cost.dims = dims;
            Ok(vec![cost])
        }
    }
}

/// Multiply-accumulates per image over stem, blocks and head.
pub fn network_macs(net: &NetworkSpec) -> Result<f64> {
    let mut ops = 0u64;
    for placed in net.blocks() {
        for layer in layers(&placed.block, placed.input)? {
            ops = add(&[ops, layer.ops])?;
        }
    }
    Ok(ops as f64 / 2.0)
}

fn conv_params(weights: u64, out_channels: u32) -> u64 {
    weights + 2 * out_channels as u64
}

fn dense_params(inputs: u32, outputs: u32) -> u64 {
    inputs as u64 * outputs as u64 + outputs as u64
}

/// Trainable parameters of one block. Convolutions are followed by batch
/// norm (two parameters per channel, no conv bias); SE transforms and the
/// classifier are dense layers with biases.
pub fn block_params(block: &BlockSpec) -> u64 {
    let c = block.in_channels;
    let k = block.out_channels;
    let k3 = (BLOCK_KERNEL * BLOCK_KERNEL) as u64;
    match block.kind {
        BlockKind::PlainConv { .. } | BlockKind::Stem { .. } => {
            let spec = block.conv_spec().expect("conv block");
            if spec.has_bias && matches!(block.kind, BlockKind::PlainConv { .. }) {
                spec.weight_elements() + spec.bias_elements()
            } else {
                conv_params(spec.weight_elements(), k)
            }
        }
        BlockKind::ConvFirst { group_width, expansion, .. } => {
            let hidden = expansion * c;
            let exp_in = if block.stride == 2 { 2 * c } else { c };
            conv_params(c as u64 * group_width as u64 * k3, c)
                + conv_params(exp_in as u64 * hidden as u64, hidden)
                + conv_params(hidden as u64 * k as u64, k)
        }
        BlockKind::MbConv { group_width, expansion, .. } => {
            let hidden = expansion * c;
            let squeeze = block.squeeze_channels().unwrap_or(0);
            conv_params(c as u64 * hidden as u64, hidden)
                + conv_params(hidden as u64 * group_width as u64 * k3, hidden)
                + dense_params(hidden, squeeze)
                + dense_params(squeeze, hidden)
                + conv_params(hidden as u64 * k as u64, k)
        }
        BlockKind::Ffn { expansion, .. } => {
            let hidden = expansion * c;
            dense_params(c, hidden) + dense_params(hidden, k)
        }
        BlockKind::Head { num_classes } => {
            conv_params(c as u64 * k as u64, k) + dense_params(k, num_classes)
        }
    }
}

pub fn count_params(net: &NetworkSpec) -> u64 {
    net.blocks().iter().map(|b| block_params(&b.block)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Activation;

    fn dev() -> DeviceSpec {
        DeviceSpec::reference()
    }

    #[test]
    fn stem_conv_ops() {
        let spec = ConvSpec::dense(3, 16, 3).with_stride(2);
        assert_eq!(conv_ops(&spec, TensorDims::new(1, 256, 256, 3)).unwrap(), 14_155_776);
    }

    #[test]
    fn unit_conv_with_bias() {
        let spec = ConvSpec::pointwise(1, 1).with_bias(true);
        let d = TensorDims::new(1, 1, 1, 1);
        assert_eq!(conv_ops(&spec, d).unwrap(), 3);
        assert_eq!(conv_elements(&spec, d).unwrap(), 4);
        assert_eq!(conv_bytes_layerwise(&spec, d, &dev()).unwrap(), 8);
    }

    #[test]
    fn grouped_conv_ops() {
        let spec = ConvSpec::grouped(16, 8, 3);
        assert_eq!(conv_ops(&spec, TensorDims::new(1, 128, 128, 16)).unwrap(), 37_748_736);
    }

    #[test]
    fn overflow_is_reported() {
        let spec = ConvSpec::dense(u32::MAX, u32::MAX, 3);
        let d = TensorDims::new(u32::MAX, u32::MAX, u32::MAX, u32::MAX);
        assert!(matches!(conv_ops(&spec, d), Err(Error::Overflow(_))));
    }

    #[test]
    fn mismatched_channels_rejected() {
        let spec = ConvSpec::dense(8, 8, 3);
        assert!(matches!(conv_ops(&spec, TensorDims::new(1, 4, 4, 4)), Err(Error::Shape(_))));
    }

    #[test]
    fn approximations() {
        assert!((intensity_depthwise(3, 3, 64, 64, 2) - 4.5).abs() < 1e-12);
        assert!((intensity_pointwise(64, 256, 2) - 51.2).abs() < 1e-12);
        assert!((intensity_large_nhw(&ConvSpec::dense(64, 64, 3), 2) - 288.0).abs() < 1e-12);
    }

    #[test]
    fn ffn_fusion_saves_one_hidden_round_trip() {
        let block = BlockSpec::new(BlockKind::Ffn { expansion: 1, activation: Activation::Identity }, 1, 1, 1);
        let d = TensorDims::new(1, 1, 1, 1);
        let lw: u64 = block_costs(&block, d, ExecutionScheme::LayerWise, &dev()).unwrap().iter().map(|c| c.bytes).sum();
        let bf = block_costs(&block, d, ExecutionScheme::BlockFusion, &dev()).unwrap();
        assert_eq!(bf.len(), 1);
        assert_eq!(bf[0].bytes, lw - 2 * 2);
    }

    #[test]
    fn stem_fusion_falls_back() {
        let block = BlockSpec::new(BlockKind::Stem { kernel: 3, activation: Activation::Relu }, 3, 16, 2);
        let d = TensorDims::new(2, 32, 32, 3);
        let lw = block_costs(&block, d, ExecutionScheme::LayerWise, &dev()).unwrap();
        let bf = block_costs(&block, d, ExecutionScheme::BlockFusion, &dev()).unwrap();
        assert!(bf[0].fallback);
        assert_eq!(bf[0].bytes, lw[0].bytes);

        let head = BlockSpec::new(BlockKind::Head { num_classes: 10 }, 16, 32, 1);
        let bf = block_costs(&head, d.with_channels(16), ExecutionScheme::BlockFusion, &dev()).unwrap();
        assert!(bf[0].fallback);
    }

    #[test]
    fn unit_conv_params() {
        let block = BlockSpec::new(
            BlockKind::PlainConv { kernel: 1, group_width: None, has_bias: true, activation: Activation::Identity },
            1,
            1,
            1,
        );
        assert_eq!(block_params(&block), 2);
    }
}
