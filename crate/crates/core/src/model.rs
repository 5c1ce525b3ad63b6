//! Declarative descriptions of networks, blocks, devices and execution
//! schemes, plus shape propagation from a network to its kernel sequence.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::complexity;
use crate::error::{Error, Result};

/// Activation tensor extent in NHWC order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorDims {
    pub batch: u32,
    pub height: u32,
    pub width: u32,
    pub channels: u32,
}

impl TensorDims {
    pub fn new(batch: u32, height: u32, width: u32, channels: u32) -> Self {
        Self { batch, height, width, channels }
    }

    /// `N·H·W`, the number of pixel positions across the batch.
    pub fn positions(&self) -> u64 {
        self.batch as u64 * self.height as u64 * self.width as u64
    }

    pub fn elements(&self) -> Result<u64> {
        [self.height, self.width, self.channels]
            .iter()
            .try_fold(self.batch as u64, |acc, &v| acc.checked_mul(v as u64))
            .ok_or(Error::Overflow("tensor element count"))
    }

    pub fn with_channels(self, channels: u32) -> Self {
        Self { channels, ..self }
    }

    pub fn is_valid(&self) -> bool {
        self.batch >= 1 && self.height >= 1 && self.width >= 1 && self.channels >= 1
    }
}

impl fmt::Display for TensorDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.batch, self.height, self.width, self.channels)
    }
}

/// A (grouped) 2-d convolution layer.
///
/// `group_width` is the number of input channels per group: `1` gives a
/// depth-wise convolution and `in_channels` a dense one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: u32,
    pub out_channels: u32,
    pub kernel_height: u32,
    pub kernel_width: u32,
    pub group_width: u32,
    pub stride: u32,
    pub has_bias: bool,
}

impl ConvSpec {
    pub fn dense(in_channels: u32, out_channels: u32, kernel: u32) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_height: kernel,
            kernel_width: kernel,
            group_width: in_channels,
            stride: 1,
            has_bias: false,
        }
    }

    pub fn pointwise(in_channels: u32, out_channels: u32) -> Self {
        Self::dense(in_channels, out_channels, 1)
    }

    pub fn grouped(channels: u32, group_width: u32, kernel: u32) -> Self {
        Self { group_width, ..Self::dense(channels, channels, kernel) }
    }

    pub fn with_bias(self, has_bias: bool) -> Self {
        Self { has_bias, ..self }
    }

    pub fn with_stride(self, stride: u32) -> Self {
        Self { stride, ..self }
    }

    pub fn groups(&self) -> u32 {
        self.in_channels.checked_div(self.group_width).unwrap_or(0)
    }

    /// Number of weight elements `K·T·R·S` (bias excluded).
    pub fn weight_elements(&self) -> u64 {
        self.out_channels as u64
            * self.group_width as u64
            * self.kernel_height as u64
            * self.kernel_width as u64
    }

    pub fn bias_elements(&self) -> u64 {
        if self.has_bias {
            self.out_channels as u64
        } else {
            0
        }
    }

    /// Output extent for an input extent (same padding).
    pub fn output_dims(&self, input: TensorDims) -> TensorDims {
        let s = self.stride.max(1);
        TensorDims {
            batch: input.batch,
            height: input.height / s,
            width: input.width / s,
            channels: self.out_channels,
        }
    }

    /// Invariant violations of the layer on its own.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.in_channels == 0 || self.out_channels == 0 {
            out.push("channel counts must be positive".to_string());
        }
        if self.kernel_height == 0 || self.kernel_width == 0 {
            out.push("kernel extent must be at least 1x1".to_string());
        }
        if !matches!(self.stride, 1 | 2) {
            out.push(format!("stride {} is not 1 or 2", self.stride));
        }
        if self.group_width == 0 || !self.in_channels.is_multiple_of(self.group_width) {
            out.push(format!(
                "group width {} does not divide {} input channels",
                self.group_width, self.in_channels
            ));
        } else if !self.out_channels.is_multiple_of(self.groups()) {
            out.push(format!(
                "group count {} does not divide {} output channels",
                self.groups(),
                self.out_channels
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Silu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => x,
        }
    }
}

/// Block template: everything about a block except its channel counts and
/// stride, which come from the stage it is placed in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BlockKind {
    /// A single convolution. `group_width = None` means dense.
    PlainConv {
        kernel: u32,
        #[serde(default)]
        group_width: Option<u32>,
        #[serde(default)]
        has_bias: bool,
        #[serde(default)]
        activation: Activation,
    },
    /// Grouped 3x3 conv followed by an FFN, with a residual shortcut.
    ConvFirst {
        group_width: u32,
        expansion: u32,
        #[serde(default)]
        activation: Activation,
    },
    /// Inverted bottleneck: expand, grouped 3x3 conv, squeeze & excitation, project.
    MbConv {
        group_width: u32,
        expansion: u32,
        se_ratio: f64,
        #[serde(default = "silu")]
        activation: Activation,
    },
    /// Position-wise feed-forward block `phi(XU + a)V + b`.
    Ffn {
        expansion: u32,
        #[serde(default)]
        activation: Activation,
    },
    Stem {
        kernel: u32,
        #[serde(default)]
        activation: Activation,
    },
    /// 1x1 conv to `out_channels`, global average pool, fully connected classifier.
    Head { num_classes: u32 },
}

fn silu() -> Activation {
    Activation::Silu
}

impl BlockKind {
    pub fn name(&self) -> &'static str {
        match self {
            BlockKind::PlainConv { .. } => "conv",
            BlockKind::ConvFirst { .. } => "convfirst",
            BlockKind::MbConv { .. } => "mbconv",
            BlockKind::Ffn { .. } => "ffn",
            BlockKind::Stem { .. } => "stem",
            BlockKind::Head { .. } => "head",
        }
    }

    pub fn activation(&self) -> Activation {
        match *self {
            BlockKind::PlainConv { activation, .. }
            | BlockKind::ConvFirst { activation, .. }
            | BlockKind::MbConv { activation, .. }
            | BlockKind::Ffn { activation, .. }
            | BlockKind::Stem { activation, .. } => activation,
            BlockKind::Head { .. } => Activation::Identity,
        }
    }

    /// Expansion ratio of the hidden layer, if the block has one.
    pub fn expansion(&self) -> Option<u32> {
        match *self {
            BlockKind::ConvFirst { expansion, .. }
            | BlockKind::MbConv { expansion, .. }
            | BlockKind::Ffn { expansion, .. } => Some(expansion),
            _ => None,
        }
    }
}

/// A concrete block: a template with its channel counts and stride.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_channels: u32,
    pub out_channels: u32,
    pub stride: u32,
}

impl BlockSpec {
    pub fn new(kind: BlockKind, in_channels: u32, out_channels: u32, stride: u32) -> Self {
        Self { kind, in_channels, out_channels, stride }
    }

    /// Hidden-layer width (`t·C` or `α·C` of the input channels).
    pub fn hidden_channels(&self) -> Option<u32> {
        self.kind.expansion().map(|e| e * self.in_channels)
    }

    /// Squeeze width `floor(se_ratio · C_in)` for MBConv blocks.
    pub fn squeeze_channels(&self) -> Option<u32> {
        match self.kind {
            BlockKind::MbConv { se_ratio, .. } => {
                Some((se_ratio * self.in_channels as f64).floor() as u32)
            }
            _ => None,
        }
    }

    /// True when the block adds its input to its output.
    pub fn has_residual(&self) -> bool {
        matches!(self.kind, BlockKind::ConvFirst { .. } | BlockKind::MbConv { .. })
            && self.stride == 1
            && self.in_channels == self.out_channels
    }

    /// Convolution layer of a `PlainConv` or `Stem` block.
    pub fn conv_spec(&self) -> Option<ConvSpec> {
        match self.kind {
            BlockKind::PlainConv { kernel, group_width, has_bias, .. } => Some(ConvSpec {
                in_channels: self.in_channels,
                out_channels: self.out_channels,
                kernel_height: kernel,
                kernel_width: kernel,
                group_width: group_width.unwrap_or(self.in_channels),
                stride: self.stride,
                has_bias,
            }),
            BlockKind::Stem { kernel, .. } => Some(
                ConvSpec::dense(self.in_channels, self.out_channels, kernel)
                    .with_stride(self.stride)
                    .with_bias(true),
            ),
            _ => None,
        }
    }

    pub fn output_dims(&self, input: TensorDims) -> TensorDims {
        match self.kind {
            BlockKind::Head { num_classes } => TensorDims::new(input.batch, 1, 1, num_classes),
            _ => {
                let s = self.stride.max(1);
                TensorDims::new(input.batch, input.height / s, input.width / s, self.out_channels)
            }
        }
    }

    /// Invariant violations for this block placed on an input of `input` extent.
    pub fn violations(&self, input: TensorDims) -> Vec<String> {
        let mut out = Vec::new();
        if input.channels != self.in_channels {
            out.push(format!(
                "input has {} channels but block expects {}",
                input.channels, self.in_channels
            ));
        }
        if !matches!(self.stride, 1 | 2) {
            out.push(format!("stride {} is not 1 or 2", self.stride));
        }
        if self.stride == 2 && (!input.height.is_multiple_of(2) || !input.width.is_multiple_of(2)) {
            out.push(format!(
                "stride-2 block on odd resolution {}x{}",
                input.height, input.width
            ));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            out.push("channel counts must be positive".to_string());
        }
        match self.kind {
            BlockKind::PlainConv { .. } | BlockKind::Stem { .. } => {
                out.extend(self.conv_spec().expect("conv block").violations());
            }
            BlockKind::ConvFirst { group_width, expansion, .. } => {
                if expansion < 1 {
                    out.push("expansion must be at least 1".to_string());
                }
                if group_width == 0 || !self.in_channels.is_multiple_of(group_width) {
                    out.push(format!(
                        "group width {} does not divide {} channels",
                        group_width, self.in_channels
                    ));
                }
            }
            BlockKind::MbConv { group_width, expansion, se_ratio, .. } => {
                if expansion < 1 {
                    out.push("expansion must be at least 1".to_string());
                }
                let hidden = expansion * self.in_channels;
                if group_width == 0 || !hidden.is_multiple_of(group_width) {
                    out.push(format!(
                        "group width {} does not divide {} hidden channels",
                        group_width, hidden
                    ));
                }
                if !(se_ratio > 0.0 && se_ratio <= 1.0) {
                    out.push(format!("se_ratio {se_ratio} outside (0, 1]"));
                } else if self.squeeze_channels() == Some(0) {
                    out.push(format!(
                        "se_ratio {se_ratio} leaves no squeeze channels for {} inputs",
                        self.in_channels
                    ));
                }
            }
            BlockKind::Ffn { expansion, .. } => {
                if expansion < 1 {
                    out.push("expansion must be at least 1".to_string());
                }
                if self.stride != 1 {
                    out.push("ffn blocks have no stride".to_string());
                }
                if self.in_channels != self.out_channels {
                    out.push("ffn blocks preserve the channel count".to_string());
                }
            }
            BlockKind::Head { num_classes } => {
                if num_classes == 0 {
                    out.push("head needs at least one class".to_string());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub block: BlockKind,
    pub depth: u32,
    pub channels: u32,
    /// Stride of the first block; the remaining blocks have stride 1.
    pub stride: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemSpec {
    pub out_channels: u32,
    pub kernel: u32,
    pub stride: u32,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub embed_channels: u32,
    pub num_classes: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resolution {
    pub height: u32,
    pub width: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub input_resolution: Resolution,
    #[serde(default = "rgb")]
    pub input_channels: u32,
    #[serde(default)]
    pub stem: Option<StemSpec>,
    #[serde(default)]
    pub stages: Vec<StageSpec>,
    #[serde(default)]
    pub head: Option<HeadSpec>,
}

fn rgb() -> u32 {
    3
}

/// Where a block sits in its network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Stem,
    Stage { stage: usize, index: usize },
    Head,
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Placement::Stem => f.write_str("stem"),
            Placement::Stage { stage, index } => write!(f, "stage{stage}.block{index}"),
            Placement::Head => f.write_str("head"),
        }
    }
}

/// A block instance with the per-image extent of its input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedBlock {
    pub placement: Placement,
    pub block: BlockSpec,
    /// Input extent for a single image.
    pub input: TensorDims,
}

impl PlacedBlock {
    pub fn input_for_batch(&self, batch: u32) -> TensorDims {
        TensorDims { batch, ..self.input }
    }
}

impl NetworkSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Product of all strides in the network.
    pub fn total_stride(&self) -> u64 {
        let stem = self.stem.map_or(1, |s| s.stride as u64);
        self.stages.iter().fold(stem, |acc, s| {
            if s.depth >= 1 {
                acc * s.stride.max(1) as u64
            } else {
                acc
            }
        })
    }

    /// Expand stem, stages and head into block instances with propagated
    /// per-image input extents.
    pub fn blocks(&self) -> Vec<PlacedBlock> {
        let mut out = Vec::new();
        let mut dims = TensorDims::new(
            1,
            self.input_resolution.height,
            self.input_resolution.width,
            self.input_channels,
        );
        if let Some(stem) = self.stem {
            let block = BlockSpec::new(
                BlockKind::Stem { kernel: stem.kernel, activation: stem.activation },
                dims.channels,
                stem.out_channels,
                stem.stride,
            );
            out.push(PlacedBlock { placement: Placement::Stem, block, input: dims });
            dims = block.output_dims(dims);
        }
        for (si, stage) in self.stages.iter().enumerate() {
            for bi in 0..stage.depth {
                let stride = if bi == 0 { stage.stride } else { 1 };
                let block = BlockSpec::new(stage.block, dims.channels, stage.channels, stride);
                out.push(PlacedBlock {
                    placement: Placement::Stage { stage: si + 1, index: bi as usize },
                    block,
                    input: dims,
                });
                dims = block.output_dims(dims);
            }
        }
        if let Some(head) = self.head {
            let block = BlockSpec::new(
                BlockKind::Head { num_classes: head.num_classes },
                dims.channels,
                head.embed_channels,
                1,
            );
            out.push(PlacedBlock { placement: Placement::Head, block, input: dims });
        }
        out
    }

    /// Per-image extent after the last stage (before the head).
    pub fn final_dims(&self) -> TensorDims {
        self.blocks()
            .iter()
            .rfind(|b| b.placement != Placement::Head)
            .map(|b| b.block.output_dims(b.input))
            .unwrap_or_else(|| {
                TensorDims::new(
                    1,
                    self.input_resolution.height,
                    self.input_resolution.width,
                    self.input_channels,
                )
            })
    }
}

/// One invariant violation found by [`validate_network`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// Check every type invariant of the network at its propagated resolutions.
pub fn validate_network(net: &NetworkSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |location: String, message: String| out.push(Violation { location, message });

    let res = net.input_resolution;
    if res.height == 0 || res.width == 0 || net.input_channels == 0 {
        push("network".into(), "input extent must be positive".into());
        return out;
    }
    let total = net.total_stride();
    if !(res.height as u64).is_multiple_of(total) || !(res.width as u64).is_multiple_of(total) {
        push(
            "network".into(),
            format!(
                "input resolution {}x{} is not divisible by the cumulative stride {}",
                res.height, res.width, total
            ),
        );
    }
    for (i, stage) in net.stages.iter().enumerate() {
        if stage.depth < 1 {
            push(format!("stage{}", i + 1), "depth must be at least 1".into());
        }
        if matches!(stage.block, BlockKind::Stem { .. } | BlockKind::Head { .. }) {
            push(format!("stage{}", i + 1), "stem and head blocks cannot be staged".into());
        }
    }
    for placed in net.blocks() {
        let input = placed.input;
        if input.height == 0 || input.width == 0 {
            push(placed.placement.to_string(), "resolution collapsed to zero".into());
            continue;
        }
        for msg in placed.block.violations(input) {
            push(placed.placement.to_string(), msg);
        }
        if u64::from(input.height)
            .checked_mul(u64::from(input.width))
            .and_then(|hw| hw.checked_mul(u64::from(placed.block.in_channels.max(placed.block.out_channels))))
            .and_then(|e| e.checked_mul(u64::from(placed.block.kind.expansion().unwrap_or(1))))
            .is_none()
        {
            push(placed.placement.to_string(), "element count overflows 64 bits".into());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionScheme {
    /// One kernel per layer, with bias, residual and activation fused in.
    LayerWise,
    /// One kernel per residual block; hidden activations stay on chip.
    BlockFusion,
}

impl ExecutionScheme {
    pub fn name(self) -> &'static str {
        match self {
            ExecutionScheme::LayerWise => "layerwise",
            ExecutionScheme::BlockFusion => "blockfusion",
        }
    }
}

impl std::str::FromStr for ExecutionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "layerwise" => Ok(ExecutionScheme::LayerWise),
            "blockfusion" => Ok(ExecutionScheme::BlockFusion),
            other => Err(Error::InvalidArgument(format!("unknown scheme `{other}`"))),
        }
    }
}

/// Processor description. The op:byte ratio is always derived from
/// throughput and bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub name: String,
    /// Peak arithmetic throughput in OP/s.
    pub peak_throughput: f64,
    /// DRAM bandwidth in bytes/s.
    pub dram_bandwidth: f64,
    pub bytes_per_element: u32,
    /// Capacity of the on-chip global memory (L2) in bytes.
    pub l2_bytes: u64,
}

impl DeviceSpec {
    /// Reference GPU at base clocks: 76.7 TOP/s half precision and a
    /// configured 480 GB/s DRAM bandwidth (op:byte about 160).
    pub fn reference() -> Self {
        Self::from_json(REFERENCE_DEVICE_JSON).expect("bundled device file parses")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let device: Self = serde_json::from_str(text)?;
        device.check()?;
        Ok(device)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.peak_throughput > 0.0 && self.peak_throughput.is_finite())
            || !(self.dram_bandwidth > 0.0 && self.dram_bandwidth.is_finite())
            || self.bytes_per_element == 0
            || self.l2_bytes == 0
        {
            return Err(Error::InvalidArgument(format!(
                "device `{}` must have positive throughput, bandwidth, element width and L2 size",
                self.name
            )));
        }
        Ok(())
    }

    /// `R / B` in OP/byte.
    pub fn op_byte(&self) -> f64 {
        self.peak_throughput / self.dram_bandwidth
    }

    /// Same device with the bandwidth adjusted to reach `op_byte`; peak
    /// throughput is held fixed.
    pub fn with_op_byte(&self, op_byte: f64) -> Self {
        Self { dram_bandwidth: self.peak_throughput / op_byte, ..self.clone() }
    }
}

pub const REFERENCE_DEVICE_JSON: &str = include_str!("../data/devices/a5000.json");

/// One schedulable kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelWorkload {
    pub label: String,
    pub ops: u64,
    pub bytes: u64,
    /// Input extent of the kernel.
    pub dims: TensorDims,
    /// Set when the requested scheme could not be applied and layer-wise
    /// costing was used instead.
    #[serde(default)]
    pub fallback: bool,
}

impl KernelWorkload {
    pub fn new(label: impl Into<String>, ops: u64, bytes: u64, dims: TensorDims) -> Self {
        Self { label: label.into(), ops, bytes, dims, fallback: false }
    }

    pub fn intensity(&self) -> f64 {
        self.ops as f64 / self.bytes as f64
    }
}

/// Expand a network into its kernel sequence for `batch` images.
///
/// Layer-wise execution yields one workload per layer (bias, residual and
/// activation fused into the producing layer, SE as its own kernel);
/// block fusion yields one workload per block.
pub fn expand_network(
    net: &NetworkSpec,
    batch: u32,
    scheme: ExecutionScheme,
    device: &DeviceSpec,
) -> Result<Vec<KernelWorkload>> {
    let violations = validate_network(net);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    if batch == 0 {
        return Err(Error::InvalidArgument("batch must be at least 1".into()));
    }
    let mut out = Vec::new();
    for placed in net.blocks() {
        let dims = placed.input_for_batch(batch);
        let costs = complexity::block_costs(&placed.block, dims, scheme, device)?;
        for cost in costs {
            let label = if cost.label.is_empty() {
                placed.placement.to_string()
            } else {
                format!("{}.{}", placed.placement, cost.label)
            };
            out.push(KernelWorkload {
                label,
                ops: cost.ops,
                bytes: cost.bytes,
                dims: cost.dims,
                fallback: cost.fallback,
            });
        }
    }
    Ok(out)
}
