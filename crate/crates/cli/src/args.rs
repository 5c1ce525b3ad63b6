use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl ReportFormat {
    pub fn from_extension(path: &std::path::Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(Self::Csv),
            "json" => Some(Self::Json),
            "svg" => Some(Self::Svg),
            _ => None,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "waterline", version, about = "Waterline analysis, efficiency gaps, fused-block traffic and speed projection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-kernel roofline verdicts and the waterline efficiency bound of a network.
    Waterline(WaterlineArgs),
    /// Ideal vs measured latency of a table of models.
    Gap(GapArgs),
    /// Waterline and roofline efficiency over a range of op:byte ratios.
    Sweep(SweepArgs),
    /// Run a block on the tensor machine and compare fused and layer-wise execution.
    Simulate(SimulateArgs),
    /// Project network latency from per-block fractions of peak throughput.
    Project(ProjectArgs),
    /// Built-in networks.
    Zoo {
        #[command(subcommand)]
        action: ZooAction,
    },
}

#[derive(Debug, Args)]
pub struct Output {
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report format; inferred from the --out extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<ReportFormat>,
}

#[derive(Debug, Args)]
pub struct WaterlineArgs {
    /// Network JSON file or `zoo:<id>`.
    #[arg(long)]
    pub net: String,
    /// Device JSON file (searched in $WATERLINE_DEVICE_DIR); the reference GPU when omitted.
    #[arg(long)]
    pub device: Option<String>,
    /// Override the device op:byte ratio by changing its bandwidth.
    #[arg(long)]
    pub opbyte: Option<f64>,
    #[arg(long, default_value = "layerwise")]
    pub scheme: String,
    #[arg(long, default_value_t = 128)]
    pub batch: u32,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct GapArgs {
    /// Sample CSV (`model,macs_g,batch,latency_ms,accuracy_pct[,latency_scope]`); the bundled table when omitted.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    #[arg(long)]
    pub device: Option<String>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub net: String,
    #[arg(long)]
    pub device: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    pub opbyte_min: f64,
    #[arg(long, default_value_t = 1000.0)]
    pub opbyte_max: f64,
    /// Number of op:byte ratios, spaced geometrically.
    #[arg(long, default_value_t = 61)]
    pub samples: usize,
    /// Comma-separated execution schemes.
    #[arg(long, default_value = "layerwise,blockfusion")]
    pub schemes: String,
    #[arg(long, default_value_t = 128)]
    pub batch: u32,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Block such as `ffn:c=16,a=6`, `convfirst:c=16,k=32,t=3,s=2` or `mbconv:c=16,a=4,se=0.25`.
    #[arg(long)]
    pub block: String,
    /// Input batch and resolution as `NxHxW`.
    #[arg(long)]
    pub dims: Option<String>,
    #[arg(long, default_value = "blockfusion")]
    pub scheme: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Hidden channels per fused loop iteration.
    #[arg(long)]
    pub chunk: Option<usize>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub net: String,
    /// Efficiency table JSON, or `default` for the bundled estimates.
    #[arg(long, default_value = "default")]
    pub efficiency: String,
    #[arg(long)]
    pub device: Option<String>,
    #[arg(long, default_value_t = 128)]
    pub batch: u32,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Subcommand)]
pub enum ZooAction {
    /// List the built-in network ids.
    List,
    /// Print a built-in network as JSON.
    Export {
        id: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}
