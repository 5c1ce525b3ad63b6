use std::path::{Path, PathBuf};

use anyhow::Context;
use waterline_core::projection::{default_estimates, EfficiencyTable};
use waterline_core::{zoo, Activation, BlockKind, BlockSpec, DeviceSpec, ExecutionScheme, NetworkSpec, TensorDims, ZooId};

use crate::failure::{usage, CmdResult, Failure};

pub const DEVICE_DIR_VAR: &str = "WATERLINE_DEVICE_DIR";

fn read(path: &Path) -> CmdResult<String> {
    std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::validation)
}

/// `zoo:<id>` or a path to a network JSON file.
pub fn load_network(spec: &str) -> CmdResult<NetworkSpec> {
    if let Some(id) = spec.strip_prefix("zoo:") {
        return Ok(zoo::build(id.parse::<ZooId>()?));
    }
    let text = read(Path::new(spec))?;
    NetworkSpec::from_json(&text)
        .with_context(|| format!("parsing network {spec}"))
        .map_err(Failure::validation)
}

fn device_candidates(name: &str) -> Vec<PathBuf> {
    let mut out = vec![PathBuf::from(name)];
    if let Some(dir) = std::env::var_os(DEVICE_DIR_VAR) {
        let dir = PathBuf::from(dir);
        out.push(dir.join(name));
        out.push(dir.join(format!("{name}.json")));
    }
    out
}

/// A device file, looked up as given and then in `$WATERLINE_DEVICE_DIR`.
/// Without a name the bundled reference GPU is used.
pub fn load_device(name: Option<&str>) -> CmdResult<DeviceSpec> {
    let Some(name) = name else { return Ok(DeviceSpec::reference()) };
    let Some(path) = device_candidates(name).into_iter().find(|p| p.is_file()) else {
        return Err(Failure::validation(anyhow::anyhow!(
            "device file `{name}` not found (also searched ${DEVICE_DIR_VAR})"
        )));
    };
    let text = read(&path)?;
    DeviceSpec::from_json(&text)
        .with_context(|| format!("parsing device {}", path.display()))
        .map_err(Failure::validation)
}

pub fn load_efficiency(spec: &str) -> CmdResult<EfficiencyTable> {
    if spec == "default" {
        return Ok(default_estimates());
    }
    let text = read(Path::new(spec))?;
    EfficiencyTable::from_json(&text)
        .with_context(|| format!("parsing efficiency table {spec}"))
        .map_err(Failure::validation)
}

pub fn parse_scheme(s: &str) -> CmdResult<ExecutionScheme> {
    s.parse().map_err(|_| usage(format!("unknown scheme `{s}` (expected layerwise or blockfusion)")))
}

pub fn parse_schemes(list: &str) -> CmdResult<Vec<ExecutionScheme>> {
    let schemes = list.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse_scheme(s.trim())).collect::<CmdResult<Vec<_>>>()?;
    if schemes.is_empty() {
        return Err(usage("--schemes lists no scheme"));
    }
    Ok(schemes)
}

/// `NxHxW`.
pub fn parse_dims(s: &str, channels: u32) -> CmdResult<TensorDims> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let bad = || usage(format!("--dims `{s}` is not NxHxW"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let v: Vec<u32> = parts.iter().map(|p| p.trim().parse::<u32>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    Ok(TensorDims::new(v[0], v[1], v[2], channels))
}

fn parse_activation(s: &str) -> CmdResult<Activation> {
    match s {
        "relu" => Ok(Activation::Relu),
        "silu" => Ok(Activation::Silu),
        "sigmoid" => Ok(Activation::Sigmoid),
        "identity" | "none" => Ok(Activation::Identity),
        _ => Err(usage(format!("unknown activation `{s}`"))),
    }
}

/// Parse `kind:key=value,...`.
///
/// Keys: `c` input channels, `k` output channels (default `c`), `t` or `a`
/// expansion, `s` stride, `g` group width, `se` squeeze ratio and `act`
/// activation. Supported kinds are `ffn`, `convfirst` and `mbconv`.
pub fn parse_block(spec: &str) -> CmdResult<BlockSpec> {
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let mut c = None;
    let mut k = None;
    let mut expansion = None;
    let mut stride = 1;
    let mut group_width = 8;
    let mut se_ratio = 0.25;
    let mut activation = None;
    for pair in rest.split(',').filter(|p| !p.is_empty()) {
        let (key, value) = pair.split_once('=').ok_or_else(|| usage(format!("block option `{pair}` is not key=value")))?;
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim();
        let int = || value.parse::<u32>().map_err(|_| usage(format!("block option `{key}` needs an integer, got `{value}`")));
        match key.as_str() {
            "c" | "in" => c = Some(int()?),
            "k" | "out" => k = Some(int()?),
            "t" | "a" | "alpha" | "expansion" => expansion = Some(int()?),
            "s" | "stride" => stride = int()?,
            "g" | "group_width" => group_width = int()?,
            "se" => se_ratio = value.parse::<f64>().map_err(|_| usage(format!("se ratio `{value}` is not a number")))?,
            "act" | "activation" => activation = Some(parse_activation(value)?),
            _ => return Err(usage(format!("unknown block option `{key}`"))),
        }
    }
    let c = c.ok_or_else(|| usage("block spec needs the input channel count `c=`"))?;
    let kind = match kind.trim().to_ascii_lowercase().as_str() {
        "ffn" => BlockKind::Ffn { expansion: expansion.unwrap_or(4), activation: activation.unwrap_or(Activation::Relu) },
        "convfirst" => BlockKind::ConvFirst {
            group_width,
            expansion: expansion.unwrap_or(3),
            activation: activation.unwrap_or(Activation::Relu),
        },
        "mbconv" => BlockKind::MbConv {
            group_width,
            expansion: expansion.unwrap_or(4),
            se_ratio,
            activation: activation.unwrap_or(Activation::Silu),
        },
        other => {
            return Err(Failure::validation(anyhow::anyhow!(
                "unsupported block `{other}`; the tensor machine runs ffn, convfirst and mbconv blocks"
            )))
        }
    };
    Ok(BlockSpec::new(kind, c, k.unwrap_or(c), stride))
}
