use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BlockKind, DeviceSpec, StageSpec};

/// Micro-batch size and fused depth for an MBConv stage kept resident in
/// the L2 cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MicrobatchPlan {
    Plan { micro_batch: u64, depth: u32 },
    Infeasible { needed: u64, available: u64 },
}

/// Bytes needed by `micro_batch` images of input and output activations
/// plus the weights of `depth` blocks (`2αC²` point-wise and `72αC`
/// grouped-conv weights each).
pub fn microbatch_capacity_bytes(channels: u64, expansion: u64, height: u64, width: u64, bytes_per_element: u64, micro_batch: u64, depth: u64) -> u64 {
    let activations = 2 * micro_batch * height * width * channels;
    let weights = depth * (2 * expansion * channels * channels + 72 * expansion * channels);
    bytes_per_element * (activations + weights)
}

/// Fuse as many blocks as possible, then maximize the micro-batch.
pub fn microbatch_plan(stage: &StageSpec, height: u32, width: u32, device: &DeviceSpec, batch: u32) -> Result<MicrobatchPlan> {
    let BlockKind::MbConv { expansion, .. } = stage.block else {
        return Err(Error::Unsupported(format!("micro-batching is defined for mbconv stages, not {}", stage.block.name())));
    };
    if device.l2_bytes == 0 || batch == 0 || stage.depth == 0 || height == 0 || width == 0 {
        return Err(Error::InvalidArgument("micro-batch planning needs positive l2 size, batch, depth and resolution".into()));
    }
    let (c, a, h, w) = (stage.channels as u64, expansion as u64, height as u64, width as u64);
    let bpe = device.bytes_per_element as u64;
    let per_image = microbatch_capacity_bytes(c, a, h, w, bpe, 1, 0);
    for depth in (1..=stage.depth).rev() {
        let weights = microbatch_capacity_bytes(c, a, h, w, bpe, 0, depth as u64);
        if weights + per_image <= device.l2_bytes {
            let micro_batch = ((device.l2_bytes - weights) / per_image).min(batch as u64);
            return Ok(MicrobatchPlan::Plan { micro_batch, depth });
        }
    }
    Ok(MicrobatchPlan::Infeasible {
        needed: microbatch_capacity_bytes(c, a, h, w, bpe, 1, 1),
        available: device.l2_bytes,
    })
}
