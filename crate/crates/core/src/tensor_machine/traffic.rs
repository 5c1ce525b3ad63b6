use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{MemoryTier, OpNode, Schedule, TensorRole, TmTensor};
use crate::error::Result;

/// Bytes moved across each tier boundary, MACs and synchronizations of one
/// schedule run. A transfer between DRAM and local memory passes through
/// global memory and counts on both boundaries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficReport {
    pub dram_global_bytes: u64,
    pub global_local_bytes: u64,
    /// Share of `dram_global_bytes` moving block-internal activations.
    pub hidden_dram_bytes: u64,
    /// Multiply-accumulates of matmuls and convolutions.
    pub macs: u64,
    pub synchronizations: u64,
}

impl TrafficReport {
    pub fn dram_bytes(&self) -> u64 {
        self.dram_global_bytes
    }
}

fn transfer(report: &mut TrafficReport, a: &TmTensor, b: &TmTensor, elements: u64) {
    let (near, far) = if a.tier > b.tier { (a, b) } else { (b, a) };
    let bytes = elements * far.element_bytes as u64;
    let hidden = a.role == TensorRole::Hidden || b.role == TensorRole::Hidden;
    if far.tier == MemoryTier::Dram {
        report.dram_global_bytes += bytes;
        if hidden {
            report.hidden_dram_bytes += bytes;
        }
    }
    if near.tier == MemoryTier::Local {
        report.global_local_bytes += bytes;
    }
}

fn walk(nodes: &[OpNode], table: &HashMap<&str, &TmTensor>, repeat: u64, report: &mut TrafficReport) {
    for node in nodes {
        match node {
            OpNode::TiledLoop { trip_count, body } => walk(body, table, repeat * *trip_count as u64, report),
            OpNode::Barrier => report.synchronizations += repeat,
            OpNode::Load { src, dst } | OpNode::Store { src, dst, .. } => {
                let (s, d) = (table[src.name.as_str()], table[dst.name.as_str()]);
                let elements: usize = src.shape(&s.shape).iter().product();
                transfer(report, s, d, elements as u64 * repeat);
            }
            OpNode::ChannelsModeMatmul { input, weight, .. } => {
                let x = &table[input.as_str()].shape;
                let w = weight.shape(&table[weight.name.as_str()].shape);
                let positions: usize = x[..x.len() - 1].iter().product();
                report.macs += (positions * w[0] * w[1]) as u64 * repeat;
            }
            OpNode::GroupedConv2d { output, weight, .. } => {
                let y = &table[output.as_str()].shape;
                let w = weight.shape(&table[weight.name.as_str()].shape);
                let positions: usize = y[..y.len() - 1].iter().product();
                report.macs += (positions * w.iter().product::<usize>()) as u64 * repeat;
            }
            _ => {}
        }
    }
}

/// Count traffic without executing the schedule.
pub fn simulate_traffic(schedule: &Schedule) -> Result<TrafficReport> {
    schedule.validate()?;
    let table: HashMap<&str, &TmTensor> = schedule.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut report = TrafficReport::default();
    walk(&schedule.nodes, &table, 1, &mut report);
    Ok(report)
}
