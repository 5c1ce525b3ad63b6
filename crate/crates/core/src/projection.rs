//! Network latency projection from per-block fractions of peak throughput.
//!
//! A network is split into rows of identical consecutive blocks (each stage
//! contributes its strided first block and the remaining blocks). Each row
//! runs at a fraction of peak looked up in an [`EfficiencyTable`]; the head
//! is assumed to run at the aggregate speed of the rows.

use serde::{Deserialize, Serialize};

use crate::complexity;
use crate::error::{Error, Result};
use crate::model::{BlockKind, DeviceSpec, ExecutionScheme, NetworkSpec, Placement, TensorDims};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Measured,
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectedKind {
    Stem,
    ConvFirst,
    MbConv,
    Ffn,
    Conv,
}

/// Block configuration used as a lookup key. `channels` is the block's
/// output channel count; stride-1 blocks have equal input and output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockKey {
    pub kind: ProjectedKind,
    pub channels: u32,
    #[serde(default)]
    pub expansion: u32,
    pub height: u32,
    pub width: u32,
    #[serde(default = "one")]
    pub stride: u32,
}

fn one() -> u32 {
    1
}

impl std::fmt::Display for BlockKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:?} C={} t={} {}x{} stride {}",
            self.kind, self.channels, self.expansion, self.height, self.width, self.stride
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyEntry {
    #[serde(flatten)]
    pub key: BlockKey,
    /// Fraction of peak throughput in (0, 1].
    pub pct: f64,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Fractions of peak per block configuration, plus the two fallback rules:
/// a stride-2 block without its own entry runs at `stride2_factor` times
/// the stride-1 entry for its output configuration at the output
/// resolution, and the stem runs at `stem`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyTable {
    pub stride2_factor: f64,
    pub stem: f64,
    pub entries: Vec<EfficiencyEntry>,
}

/// Result of looking a configuration up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolved {
    pub pct: f64,
    pub provenance: Provenance,
}

impl EfficiencyTable {
    pub fn from_json(text: &str) -> Result<Self> {
        let table: Self = serde_json::from_str(text)?;
        table.check()?;
        Ok(table)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn check(&self) -> Result<()> {
        let bad = |p: f64| !(p > 0.0 && p <= 1.0);
        if bad(self.stride2_factor) || bad(self.stem) {
            return Err(Error::InvalidArgument("efficiency rules must lie in (0, 1]".into()));
        }
        if let Some(e) = self.entries.iter().find(|e| bad(e.pct)) {
            return Err(Error::InvalidArgument(format!("entry {} has pct {} outside (0, 1]", e.key, e.pct)));
        }
        Ok(())
    }

    pub fn get(&self, key: &BlockKey) -> Option<&EfficiencyEntry> {
        self.entries.iter().find(|e| e.key == *key)
    }

    /// Replace or add an entry.
    pub fn insert(&mut self, entry: EfficiencyEntry) {
        match self.entries.iter_mut().find(|e| e.key == entry.key) {
            Some(e) => *e = entry,
            None => self.entries.push(entry),
        }
    }

    pub fn resolve(&self, key: &BlockKey) -> Option<Resolved> {
        if key.kind == ProjectedKind::Stem {
            return Some(Resolved { pct: self.stem, provenance: Provenance::Estimated });
        }
        if let Some(e) = self.get(key) {
            return Some(Resolved { pct: e.pct, provenance: e.provenance });
        }
        if key.stride == 2 {
            let base = BlockKey { height: key.height / 2, width: key.width / 2, stride: 1, ..*key };
            return self.get(&base).map(|e| Resolved {
                pct: self.stride2_factor * e.pct,
                provenance: Provenance::Estimated,
            });
        }
        None
    }

    /// Same table with every fraction replaced by `pct`.
    pub fn uniform(&self, pct: f64) -> Self {
        Self {
            stride2_factor: 1.0,
            stem: pct,
            entries: self.entries.iter().map(|e| EfficiencyEntry { pct, ..e.clone() }).collect(),
        }
    }
}

fn entry(kind: ProjectedKind, channels: u32, expansion: u32, hw: u32, pct: f64, provenance: Provenance, note: Option<&str>) -> EfficiencyEntry {
    EfficiencyEntry {
        key: BlockKey { kind, channels, expansion, height: hw, width: hw, stride: 1 },
        pct,
        provenance,
        note: note.map(str::to_string),
    }
}

/// Benchmarked block-fusion kernel efficiencies at batch 128 and the
/// estimates used for blocks without a kernel.
pub fn default_estimates() -> EfficiencyTable {
    use ProjectedKind::{ConvFirst, MbConv};
    use Provenance::{Estimated, Measured};
    let mut entries = Vec::new();
    for (c, t, hw, pct) in [
        (16, 3, 128, 0.351),
        (32, 3, 128, 0.466),
        (32, 6, 64, 0.669),
        (48, 6, 64, 0.716),
        (64, 6, 64, 0.762),
        (48, 6, 32, 0.670),
        (64, 6, 32, 0.740),
        (96, 6, 32, 0.687),
    ] {
        entries.push(entry(ConvFirst, c, t, hw, pct, Measured, None));
    }
    for (c, p16, p8) in [(128, 0.462, 0.450), (144, 0.444, 0.325), (160, 0.419, 0.313), (192, 0.444, 0.431), (256, 0.510, 0.514)] {
        entries.push(entry(MbConv, c, 4, 16, p16, Measured, None));
        entries.push(entry(MbConv, c, 4, 8, p8, Measured, None));
    }
    let mut table = EfficiencyTable { stride2_factor: 0.8, stem: 0.75, entries };
    let reused = [
        (ConvFirst, 24, 3, 128, 0.40, "no kernel for 24 channels"),
        (ConvFirst, 64, 6, 32, 0.762, "reuses the 64x64 measurement; 0.740 measured"),
        (ConvFirst, 72, 6, 32, 0.70, "no kernel for 72 channels"),
        (MbConv, 192, 4, 16, 0.419, "reuses the 160-channel measurement; 0.444 measured"),
        (MbConv, 192, 4, 8, 0.313, "reuses the 160-channel measurement; 0.431 measured"),
    ];
    for (kind, c, t, hw, pct, note) in reused {
        table.insert(entry(kind, c, t, hw, pct, Estimated, Some(note)));
    }
    table
}

pub const DEFAULT_ESTIMATES_JSON: &str = include_str!("../data/efficiency_default.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub label: String,
    pub key: BlockKey,
    pub in_channels: u32,
    /// Per-image operations of one block.
    pub ops: u64,
    /// Per-image operations of each layer of one block, in execution order.
    pub layer_ops: Vec<(String, u64)>,
    pub depth: u32,
    pub pct: f64,
    pub provenance: Provenance,
    /// Seconds for `depth` blocks over the whole batch.
    pub latency: f64,
    /// OP/s.
    pub throughput: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionTotals {
    /// Operations over all rows for the batch.
    pub total_ops: f64,
    pub rows_latency: f64,
    pub aggregate_pct: f64,
    /// MACs per image of the whole network, head included.
    pub network_macs: f64,
    pub network_latency: f64,
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub network: String,
    pub batch: u32,
    pub rows: Vec<ProjectionRow>,
    pub totals: ProjectionTotals,
}

fn projected_kind(kind: &BlockKind) -> Option<ProjectedKind> {
    match kind {
        BlockKind::Stem { .. } => Some(ProjectedKind::Stem),
        BlockKind::ConvFirst { .. } => Some(ProjectedKind::ConvFirst),
        BlockKind::MbConv { .. } => Some(ProjectedKind::MbConv),
        BlockKind::Ffn { .. } => Some(ProjectedKind::Ffn),
        BlockKind::PlainConv { .. } => Some(ProjectedKind::Conv),
        BlockKind::Head { .. } => None,
    }
}

pub fn project_network(net: &NetworkSpec, table: &EfficiencyTable, device: &DeviceSpec, batch: u32) -> Result<Projection> {
    let violations = crate::model::validate_network(net);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    if batch == 0 {
        return Err(Error::InvalidArgument("batch must be at least 1".into()));
    }
    let peak = device.peak_throughput;
    let mut rows: Vec<ProjectionRow> = Vec::new();
    let mut missing = Vec::new();
    for placed in net.blocks() {
        let Some(kind) = projected_kind(&placed.block.kind) else { continue };
        let block = placed.block;
        let key = BlockKey {
            kind,
            channels: block.out_channels,
            expansion: block.kind.expansion().unwrap_or(0),
            height: placed.input.height,
            width: placed.input.width,
            stride: block.stride,
        };
        let label = match placed.placement {
            Placement::Stage { stage, .. } => format!("stage{stage}"),
            other => other.to_string(),
        };
        if let Some(last) = rows.last_mut() {
            if last.label == label && last.key == key && last.in_channels == block.in_channels {
                last.depth += 1;
                continue;
            }
        }
        let costs = complexity::block_costs(&block, TensorDims { batch: 1, ..placed.input }, ExecutionScheme::LayerWise, device)?;
        let layer_ops: Vec<(String, u64)> = costs
            .iter()
            .map(|c| (if c.label.is_empty() { kind_label(kind) } else { c.label.clone() }, c.ops))
            .collect();
        let ops = layer_ops.iter().map(|(_, o)| o).sum();
        let (pct, provenance) = match table.resolve(&key) {
            Some(r) => (r.pct, r.provenance),
            None => {
                missing.push(key.to_string());
                (f64::NAN, Provenance::Estimated)
            }
        };
        rows.push(ProjectionRow {
            label,
            key,
            in_channels: block.in_channels,
            ops,
            layer_ops,
            depth: 1,
            pct,
            provenance,
            latency: 0.0,
            throughput: peak * pct,
        });
    }
    if !missing.is_empty() {
        missing.dedup();
        return Err(Error::Unresolved(missing));
    }
    for row in &mut rows {
        row.latency = row.depth as f64 * batch as f64 * row.ops as f64 / (peak * row.pct);
    }
    let total_ops: f64 = rows.iter().map(|r| r.depth as f64 * batch as f64 * r.ops as f64).sum();
    let rows_latency: f64 = rows.iter().map(|r| r.latency).sum();
    let aggregate_pct = total_ops / (peak * rows_latency);
    let network_macs = complexity::network_macs(net)?;
    let network_latency = batch as f64 * network_macs * 2.0 / (peak * aggregate_pct);
    Ok(Projection {
        network: net.name.clone(),
        batch,
        rows,
        totals: ProjectionTotals {
            total_ops,
            rows_latency,
            aggregate_pct,
            network_macs,
            network_latency,
            fps: batch as f64 / network_latency,
        },
    })
}

fn kind_label(kind: ProjectedKind) -> String {
    match kind {
        ProjectedKind::Stem => "stem",
        ProjectedKind::ConvFirst => "convfirst",
        ProjectedKind::MbConv => "mbconv",
        ProjectedKind::Ffn => "ffn",
        ProjectedKind::Conv => "conv",
    }
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{self, ZooId};

    fn cf(c: u32, t: u32, hw: u32, stride: u32) -> BlockKey {
        BlockKey { kind: ProjectedKind::ConvFirst, channels: c, expansion: t, height: hw, width: hw, stride }
    }

    #[test]
    fn rules() {
        let t = default_estimates();
        let stem = BlockKey { kind: ProjectedKind::Stem, channels: 16, expansion: 0, height: 256, width: 256, stride: 2 };
        assert_eq!(t.resolve(&stem).unwrap().pct, 0.75);
        let m = t.resolve(&cf(32, 6, 64, 1)).unwrap();
        assert_eq!((m.pct, m.provenance), (0.669, Provenance::Measured));
        let s2 = t.resolve(&cf(32, 6, 128, 2)).unwrap();
        assert!((s2.pct - 0.5352).abs() < 1e-12);
        assert_eq!(s2.provenance, Provenance::Estimated);
        assert_eq!(t.resolve(&cf(24, 3, 128, 1)).unwrap().pct, 0.40);
        assert!(t.resolve(&cf(40, 6, 64, 1)).is_none());
    }

    #[test]
    fn fixture_matches_builtin() {
        assert_eq!(EfficiencyTable::from_json(DEFAULT_ESTIMATES_JSON).unwrap(), default_estimates());
    }

    #[test]
    fn pico_stem_row() {
        let p = project_network(&zoo::build(ZooId::ConvFirstNetPico), &default_estimates(), &DeviceSpec::reference(), 128).unwrap();
        let stem = &p.rows[0];
        assert_eq!(stem.label, "stem");
        assert!((stem.latency * 1e3 - 0.031).abs() < 0.0005);
        assert!((stem.throughput / 1e12 - 57.5).abs() < 0.05);
        assert_eq!(p.rows.len(), 10);
    }

    #[test]
    fn unresolved_blocks_are_listed() {
        let mut table = default_estimates();
        table.entries.retain(|e| e.key.kind != ProjectedKind::MbConv);
        match project_network(&zoo::build(ZooId::ConvFirstNetPico), &table, &DeviceSpec::reference(), 128) {
            Err(Error::Unresolved(v)) => assert!(v.len() >= 2 && v.iter().all(|s| s.contains("MbConv"))),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_out_of_range_pct() {
        let mut t = default_estimates();
        t.entries[0].pct = 1.5;
        assert!(t.check().is_err());
    }
}
