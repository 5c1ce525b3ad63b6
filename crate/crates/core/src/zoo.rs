//! Built-in ConvFirstNet definitions and single-stage block stacks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::model::{Activation, BlockKind, BlockSpec, HeadSpec, NetworkSpec, Resolution, StageSpec, StemSpec, TensorDims};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZooId {
    ConvFirstNetPico,
    ConvFirstNetNano,
    ConvFirstNetTiny,
    ConvFirstNetSmall,
}

impl ZooId {
    pub const ALL: [ZooId; 4] =
        [ZooId::ConvFirstNetPico, ZooId::ConvFirstNetNano, ZooId::ConvFirstNetTiny, ZooId::ConvFirstNetSmall];

    pub fn slug(self) -> &'static str {
        match self {
            ZooId::ConvFirstNetPico => "convfirstnet-pico",
            ZooId::ConvFirstNetNano => "convfirstnet-nano",
            ZooId::ConvFirstNetTiny => "convfirstnet-tiny",
            ZooId::ConvFirstNetSmall => "convfirstnet-small",
        }
    }
}

impl fmt::Display for ZooId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for ZooId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let key = s.trim().to_ascii_lowercase();
        let key = key.strip_prefix("zoo:").unwrap_or(&key);
        ZooId::ALL
            .into_iter()
            .find(|id| id.slug() == key || id.slug().trim_start_matches("convfirstnet-") == key)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown zoo network `{s}`")))
    }
}

/// Group width of every grouped convolution in the family.
pub const GROUP_WIDTH: u32 = 8;
pub const SE_RATIO: f64 = 0.25;
pub const INPUT_RESOLUTION: u32 = 256;
pub const EMBED_CHANNELS: u32 = 1280;
pub const NUM_CLASSES: u32 = 1000;

struct Family {
    stem: u32,
    /// (expansion, depth, channels) of the three ConvFirst stages.
    convfirst: [(u32, u32, u32); 3],
    /// (depth, channels) of the two MBConv stages.
    mbconv: [(u32, u32); 2],
}

fn family(id: ZooId) -> Family {
    match id {
        ZooId::ConvFirstNetPico => Family {
            stem: 16,
            convfirst: [(3, 1, 16), (6, 2, 32), (6, 3, 48)],
            mbconv: [(11, 128), (11, 128)],
        },
        ZooId::ConvFirstNetNano => Family {
            stem: 24,
            convfirst: [(3, 1, 24), (6, 3, 48), (6, 4, 64)],
            mbconv: [(14, 160), (14, 160)],
        },
        ZooId::ConvFirstNetTiny => Family {
            stem: 24,
            convfirst: [(3, 2, 24), (6, 5, 48), (6, 6, 72)],
            mbconv: [(18, 192), (18, 192)],
        },
        ZooId::ConvFirstNetSmall => Family {
            stem: 32,
            convfirst: [(3, 2, 32), (6, 5, 64), (6, 6, 96)],
            mbconv: [(18, 256), (18, 256)],
        },
    }
}

pub fn build(id: ZooId) -> NetworkSpec {
    let f = family(id);
    let mut stages = Vec::new();
    for (i, &(expansion, depth, channels)) in f.convfirst.iter().enumerate() {
        stages.push(StageSpec {
            block: BlockKind::ConvFirst { group_width: GROUP_WIDTH, expansion, activation: Activation::Relu },
            depth,
            channels,
            stride: if i == 0 { 1 } else { 2 },
        });
    }
    for &(depth, channels) in &f.mbconv {
        stages.push(StageSpec {
            block: BlockKind::MbConv {
                group_width: GROUP_WIDTH,
                expansion: 4,
                se_ratio: SE_RATIO,
                activation: Activation::Silu,
            },
            depth,
            channels,
            stride: 2,
        });
    }
    NetworkSpec {
        name: id.slug().to_string(),
        input_resolution: Resolution { height: INPUT_RESOLUTION, width: INPUT_RESOLUTION },
        input_channels: 3,
        stem: Some(StemSpec { out_channels: f.stem, kernel: 3, stride: 2, activation: Activation::Relu }),
        stages,
        head: Some(HeadSpec { embed_channels: EMBED_CHANNELS, num_classes: NUM_CLASSES }),
    }
}

/// A headless single-stage network of `depth` copies of `block` on an input
/// of extent `dims` (batch ignored). Only the first copy uses the block's
/// stride and input channel count.
pub fn build_stack(block: &BlockSpec, depth: u32, dims: TensorDims) -> NetworkSpec {
    NetworkSpec {
        name: format!("{}-stack-{}x{}", block.kind.name(), block.out_channels, depth),
        input_resolution: Resolution { height: dims.height, width: dims.width },
        input_channels: block.in_channels,
        stem: None,
        stages: vec![StageSpec { block: block.kind, depth, channels: block.out_channels, stride: block.stride }],
        head: None,
    }
}
