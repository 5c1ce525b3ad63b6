//! An abstract machine with three memory tiers used to describe fused and
//! layer-wise block algorithms.
//!
//! A [`Schedule`] is an ordered list of tensor operations over a table of
//! declared tensors, each placed in DRAM, global memory or local memory.
//! Schedules can be executed numerically ([`execute_numeric`]) and their
//! memory traffic counted ([`simulate_traffic`]) without execution.
//!
//! Activations use NHWC layout. Channel-mode matmul weights are
//! `[C_in, C_out]`, grouped-conv weights `[K, T, R, S]`.

mod exec;
mod ffn;
mod microbatch;
mod schedule;
mod traffic;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Activation;

pub use exec::{execute_numeric, random_inputs, relative_error, Inputs, Tensor};
pub use ffn::{ffn_fused, ffn_layerwise, Matrix};
pub use microbatch::{microbatch_capacity_bytes, microbatch_plan, MicrobatchPlan};
pub use schedule::{build_scaled_schedule, build_schedule, build_schedule_with, default_chunk, ScheduleOptions};
pub use traffic::{simulate_traffic, TrafficReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryTier {
    Dram,
    Global,
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorRole {
    /// Block input, present in DRAM before the schedule runs.
    Input,
    /// Block output.
    Output,
    /// Weights and biases, present before the schedule runs.
    Weight,
    /// Block-internal activations.
    Hidden,
    /// Copies of other tensors staged in a faster tier.
    Staging,
    /// Partial-sum accumulators.
    Accumulator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TmTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub tier: MemoryTier,
    pub element_bytes: u32,
    pub role: TensorRole,
    /// One instance per loop iteration. Instances persist after the loop, so
    /// a later loop with the same trip count sees the values its iteration
    /// produced, as a processor keeps its own local memory.
    #[serde(default)]
    pub per_iteration: bool,
}

impl TmTensor {
    pub fn elements(&self) -> usize {
        self.shape.iter().product()
    }
}

/// A window `[start + step·iteration, … + width)` along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slice {
    pub axis: usize,
    pub start: usize,
    pub step: usize,
    pub width: usize,
}

/// A tensor or a rectangular window of it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorRef {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub slices: Vec<Slice>,
}

impl TensorRef {
    pub fn whole(name: impl Into<String>) -> Self {
        Self { name: name.into(), slices: Vec::new() }
    }

    /// Window that advances with the loop iteration.
    pub fn chunk(name: impl Into<String>, axis: usize, width: usize) -> Self {
        Self::whole(name).sliced(Slice { axis, start: 0, step: width, width })
    }

    /// Fixed window.
    pub fn part(name: impl Into<String>, axis: usize, start: usize, width: usize) -> Self {
        Self::whole(name).sliced(Slice { axis, start, step: 0, width })
    }

    pub fn sliced(mut self, slice: Slice) -> Self {
        self.slices.push(slice);
        self
    }

    /// Extent of the referenced window given the tensor's declared shape.
    pub fn shape(&self, declared: &[usize]) -> Vec<usize> {
        let mut shape = declared.to_vec();
        for s in &self.slices {
            if s.axis < shape.len() {
                shape[s.axis] = s.width;
            }
        }
        shape
    }
}

impl From<&str> for TensorRef {
    fn from(name: &str) -> Self {
        TensorRef::whole(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OpNode {
    /// `output (+)= input · weight (+ bias)` over the channel axis.
    ChannelsModeMatmul {
        input: String,
        weight: TensorRef,
        bias: Option<TensorRef>,
        output: String,
        accumulate: bool,
    },
    /// Stride-1, same-padded grouped convolution.
    GroupedConv2d {
        input: String,
        weight: TensorRef,
        bias: Option<TensorRef>,
        output: String,
        group_width: usize,
    },
    /// `output = a ⊙ b`, with `b` broadcast from `[N, 1, 1, C]`.
    ElementwiseMul { a: String, b: String, output: String },
    /// `output = a + b`, with `b` broadcast from `[C]` or `[N, 1, 1, C]`.
    ElementwiseAdd { a: String, b: String, output: String },
    Activation { func: Activation, input: String, output: String },
    GlobalAvgPool { input: String, output: String },
    /// 2x2 average pooling with stride 2.
    Downsample { input: String, output: String },
    /// Channel-axis concatenation.
    Concat { inputs: Vec<String>, output: String },
    Copy { input: String, output: String },
    /// Move data towards the processor.
    Load { src: TensorRef, dst: TensorRef },
    /// Move data away from the processor, optionally adding onto the
    /// destination. Accumulating onto a tensor that was never written
    /// starts from zero.
    Store { src: TensorRef, dst: TensorRef, accumulate: bool },
    TiledLoop { trip_count: usize, body: Vec<OpNode> },
    /// All processors synchronize; global-memory accumulations complete.
    Barrier,
}

impl OpNode {
    pub fn name(&self) -> &'static str {
        match self {
            OpNode::ChannelsModeMatmul { .. } => "channels_mode_matmul",
            OpNode::GroupedConv2d { .. } => "grouped_conv2d",
            OpNode::ElementwiseMul { .. } => "elementwise_mul",
            OpNode::ElementwiseAdd { .. } => "elementwise_add",
            OpNode::Activation { .. } => "activation",
            OpNode::GlobalAvgPool { .. } => "global_avg_pool",
            OpNode::Downsample { .. } => "downsample",
            OpNode::Concat { .. } => "concat",
            OpNode::Copy { .. } => "copy",
            OpNode::Load { .. } => "load",
            OpNode::Store { .. } => "store",
            OpNode::TiledLoop { .. } => "tiled_loop",
            OpNode::Barrier => "barrier",
        }
    }

    /// Names read and written by a non-loop node.
    fn operands(&self) -> (Vec<&str>, Vec<&str>) {
        match self {
            OpNode::ChannelsModeMatmul { input, weight, bias, output, .. }
            | OpNode::GroupedConv2d { input, weight, bias, output, .. } => {
                let mut reads = vec![input.as_str(), weight.name.as_str()];
                if let Some(b) = bias {
                    reads.push(b.name.as_str());
                }
                (reads, vec![output.as_str()])
            }
            OpNode::ElementwiseMul { a, b, output } | OpNode::ElementwiseAdd { a, b, output } => {
                (vec![a.as_str(), b.as_str()], vec![output.as_str()])
            }
            OpNode::Activation { input, output, .. }
            | OpNode::GlobalAvgPool { input, output }
            | OpNode::Downsample { input, output }
            | OpNode::Copy { input, output } => (vec![input.as_str()], vec![output.as_str()]),
            OpNode::Concat { inputs, output } => {
                (inputs.iter().map(String::as_str).collect(), vec![output.as_str()])
            }
            OpNode::Load { src, dst } => (vec![src.name.as_str()], vec![dst.name.as_str()]),
            OpNode::Store { src, dst, .. } => (vec![src.name.as_str()], vec![dst.name.as_str()]),
            OpNode::TiledLoop { .. } | OpNode::Barrier => (vec![], vec![]),
        }
    }

    fn is_compute(&self) -> bool {
        !matches!(
            self,
            OpNode::Load { .. } | OpNode::Store { .. } | OpNode::TiledLoop { .. } | OpNode::Barrier
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub name: String,
    pub tensors: Vec<TmTensor>,
    pub nodes: Vec<OpNode>,
    /// Name of the tensor holding the block output.
    pub output: String,
}

impl Schedule {
    pub fn tensor(&self, name: &str) -> Option<&TmTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Number of barriers executed, loops unrolled.
    pub fn synchronizations(&self) -> u64 {
        fn count(nodes: &[OpNode]) -> u64 {
            nodes
                .iter()
                .map(|n| match n {
                    OpNode::Barrier => 1,
                    OpNode::TiledLoop { trip_count, body } => *trip_count as u64 * count(body),
                    _ => 0,
                })
                .sum()
        }
        count(&self.nodes)
    }

    /// Check operand existence, tier legality, window bounds and that every
    /// read follows a write (inputs and weights count as written).
    pub fn validate(&self) -> Result<()> {
        let table: HashMap<&str, &TmTensor> = self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        if table.len() != self.tensors.len() {
            return Err(Error::Schedule { node: 0, message: "duplicate tensor name".into() });
        }
        if !table.contains_key(self.output.as_str()) {
            return Err(Error::Schedule { node: 0, message: format!("output `{}` is not declared", self.output) });
        }
        let mut written: Vec<&str> = self
            .tensors
            .iter()
            .filter(|t| matches!(t.role, TensorRole::Input | TensorRole::Weight))
            .map(|t| t.name.as_str())
            .collect();
        for (i, node) in self.nodes.iter().enumerate() {
            check_node(node, &table, &mut written, None).map_err(|m| Error::Schedule { node: i, message: m })?;
        }
        Ok(())
    }
}

fn check_ref(r: &TensorRef, table: &HashMap<&str, &TmTensor>, trips: Option<usize>) -> std::result::Result<(), String> {
    let t = table.get(r.name.as_str()).ok_or_else(|| format!("unknown tensor `{}`", r.name))?;
    for s in &r.slices {
        if s.axis >= t.shape.len() {
            return Err(format!("slice axis {} out of range for `{}`", s.axis, r.name));
        }
        let last = trips.unwrap_or(1).saturating_sub(1);
        if s.step > 0 && trips.is_none() {
            return Err(format!("iteration-dependent slice of `{}` outside a loop", r.name));
        }
        if s.width == 0 || s.start + s.step * last + s.width > t.shape[s.axis] {
            return Err(format!("slice of `{}` exceeds axis {} extent {}", r.name, s.axis, t.shape[s.axis]));
        }
    }
    Ok(())
}

fn check_node<'a>(
    node: &'a OpNode,
    table: &HashMap<&str, &'a TmTensor>,
    written: &mut Vec<&'a str>,
    trips: Option<usize>,
) -> std::result::Result<(), String> {
    match node {
        OpNode::TiledLoop { trip_count, body } => {
            if trips.is_some() {
                return Err("nested loops are not supported".into());
            }
            if *trip_count == 0 {
                return Err("loop with zero trips".into());
            }
            for (j, inner) in body.iter().enumerate() {
                check_node(inner, table, written, Some(*trip_count))
                    .map_err(|m| format!("loop body node {j} ({}): {m}", inner.name()))?;
            }
            return Ok(());
        }
        OpNode::Barrier => return Ok(()),
        _ => {}
    }
    let (reads, writes) = node.operands();
    for name in reads.iter().chain(&writes) {
        if !table.contains_key(name) {
            return Err(format!("unknown tensor `{name}`"));
        }
    }
    match node {
        OpNode::Load { src, dst } | OpNode::Store { src, dst, .. } => {
            check_ref(src, table, trips)?;
            check_ref(dst, table, trips)?;
            let from = table[src.name.as_str()];
            let to = table[dst.name.as_str()];
            let inward = matches!(node, OpNode::Load { .. });
            let legal = if inward { from.tier < to.tier } else { from.tier > to.tier };
            if !legal {
                return Err(format!(
                    "{} from {:?} `{}` to {:?} `{}` does not cross tiers in the right direction",
                    node.name(),
                    from.tier,
                    from.name,
                    to.tier,
                    to.name
                ));
            }
            let accumulate = matches!(node, OpNode::Store { accumulate: true, .. });
            if src.shape(&from.shape) != dst.shape(&to.shape) {
                return Err(format!("{} between windows of different shape", node.name()));
            }
            if !written.contains(&src.name.as_str()) {
                return Err(format!("`{}` is read before it is written", src.name));
            }
            if accumulate || !written.contains(&dst.name.as_str()) {
                written.push(dst.name.as_str());
            }
        }
        _ => {
            if let OpNode::ChannelsModeMatmul { weight, bias, .. } | OpNode::GroupedConv2d { weight, bias, .. } = node {
                check_ref(weight, table, trips)?;
                if let Some(b) = bias {
                    check_ref(b, table, trips)?;
                }
            }
            for name in reads.iter().chain(&writes) {
                let t = table[name];
                if t.tier != MemoryTier::Local {
                    return Err(format!("{} operand `{}` is in {:?}, not local memory", node.name(), name, t.tier));
                }
            }
            for name in &reads {
                if !written.contains(name) {
                    return Err(format!("`{name}` is read before it is written"));
                }
            }
            let accumulate = matches!(node, OpNode::ChannelsModeMatmul { accumulate: true, .. });
            for name in &writes {
                if accumulate || !written.contains(name) {
                    written.push(name);
                }
            }
            debug_assert!(node.is_compute());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(name: &str, shape: &[usize], tier: MemoryTier, role: TensorRole) -> TmTensor {
        TmTensor { name: name.into(), shape: shape.to_vec(), tier, element_bytes: 2, role, per_iteration: false }
    }

    #[test]
    fn compute_must_be_local() {
        let s = Schedule {
            name: "bad".into(),
            tensors: vec![
                t("x", &[1, 1, 1, 2], MemoryTier::Dram, TensorRole::Input),
                t("y", &[1, 1, 1, 2], MemoryTier::Dram, TensorRole::Output),
            ],
            nodes: vec![OpNode::Activation { func: Activation::Relu, input: "x".into(), output: "y".into() }],
            output: "y".into(),
        };
        match s.validate() {
            Err(Error::Schedule { node: 0, message }) => assert!(message.contains("not local")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn read_before_write_is_reported() {
        let s = Schedule {
            name: "bad".into(),
            tensors: vec![
                t("x", &[1, 1, 1, 2], MemoryTier::Dram, TensorRole::Input),
                t("h", &[1, 1, 1, 2], MemoryTier::Local, TensorRole::Hidden),
                t("y", &[1, 1, 1, 2], MemoryTier::Dram, TensorRole::Output),
            ],
            nodes: vec![
                OpNode::Load { src: "x".into(), dst: "h".into() },
                OpNode::Store { src: "h".into(), dst: "y".into(), accumulate: false },
                OpNode::Store { src: "y".into(), dst: "h".into(), accumulate: false },
            ],
            output: "y".into(),
        };
        match s.validate() {
            Err(Error::Schedule { node: 2, message }) => assert!(message.contains("direction")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn window_shape() {
        let r = TensorRef::chunk("w", 1, 4);
        assert_eq!(r.shape(&[8, 16]), vec![8, 4]);
    }
}
