use std::io::Write;

use serde::Serialize;
use waterline_core::gap::{gap_series, read_samples, reference_samples};
use waterline_core::perf::{opbyte_sweep, roofline_efficiency, waterline, SweepPoint};
use waterline_core::projection::{project_network, Projection};
use waterline_core::tensor_machine::{
    build_schedule_with, execute_numeric, random_inputs, relative_error, simulate_traffic, ScheduleOptions, TrafficReport,
};
use waterline_core::{complexity, expand_network, zoo, BlockKind, BlockSpec, DeviceSpec, ExecutionScheme, TensorDims, Waterline, ZooId};

use crate::args::{GapArgs, Output, ProjectArgs, ReportFormat, SimulateArgs, SweepArgs, WaterlineArgs, ZooAction};
use crate::failure::{usage, CmdResult, Failure};
use crate::inputs::{load_device, load_efficiency, load_network, parse_block, parse_dims, parse_scheme, parse_schemes};
use crate::svg;

/// Largest fused-vs-layer-wise relative error accepted by `simulate`.
pub const SIMULATE_TOLERANCE: f64 = 1e-4;

fn emit(output: &Output, text: &str, stdout: &mut dyn Write) -> CmdResult {
    match &output.out {
        Some(path) => std::fs::write(path, text)?,
        None => stdout.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn format_of(output: &Output, default: ReportFormat, supported: &[ReportFormat], command: &str) -> CmdResult<ReportFormat> {
    let format = output
        .format
        .or_else(|| output.out.as_deref().and_then(ReportFormat::from_extension))
        .unwrap_or(default);
    if !supported.contains(&format) {
        let name = format!("{format:?}").to_lowercase();
        return Err(usage(format!("{command} does not produce {name} output")));
    }
    Ok(format)
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CmdResult<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Failure::validation(anyhow::Error::new(e));
    wtr.write_record(header).map_err(csv_err)?;
    for row in rows {
        wtr.write_record(&row).map_err(csv_err)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Failure::validation(anyhow::anyhow!("{e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn json_text<T: Serialize>(value: &T) -> CmdResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(Failure::validation)?;
    s.push('\n');
    Ok(s)
}

pub const WATERLINE_COLUMNS: [&str; 6] = ["label", "ops", "bytes", "intensity", "bound", "latency_ms"];

#[derive(Debug, Serialize)]
pub struct KernelRow {
    pub label: String,
    pub ops: u64,
    pub bytes: u64,
    /// `null` for kernels without DRAM traffic.
    pub intensity: Option<f64>,
    pub bound: String,
    pub latency_ms: f64,
    pub fallback: bool,
}

#[derive(Debug, Serialize)]
pub struct WaterlineReport {
    pub network: String,
    pub scheme: ExecutionScheme,
    pub batch: u32,
    pub device: DeviceSpec,
    pub op_byte: f64,
    pub max_efficiency: f64,
    pub roofline_efficiency: f64,
    pub mediant_intensity: f64,
    pub total_latency_ms: f64,
    pub kernels: Vec<KernelRow>,
}

/// Waterline of a network on a device.
pub fn analyze(net_spec: &str, device: &DeviceSpec, scheme: ExecutionScheme, batch: u32) -> CmdResult<(String, Waterline, WaterlineReport)> {
    let net = load_network(net_spec)?;
    let seq = expand_network(&net, batch, scheme, device)?;
    let verdict = waterline::<f64>(&seq, device)?;
    let roof = roofline_efficiency::<f64>(&seq, device)?;
    let kernels = verdict
        .verdicts
        .iter()
        .zip(&seq)
        .map(|(v, w)| KernelRow {
            label: v.label.clone(),
            ops: v.ops,
            bytes: v.bytes,
            intensity: v.intensity.is_finite().then_some(v.intensity),
            bound: v.bound.name().into(),
            latency_ms: v.latency * 1e3,
            fallback: w.fallback,
        })
        .collect();
    let report = WaterlineReport {
        network: net.name.clone(),
        scheme,
        batch,
        device: device.clone(),
        op_byte: device.op_byte(),
        max_efficiency: verdict.max_efficiency,
        roofline_efficiency: roof,
        mediant_intensity: verdict.mediant_intensity,
        total_latency_ms: verdict.total_latency * 1e3,
        kernels,
    };
    Ok((net.name, verdict, report))
}

pub fn cmd_waterline(args: &WaterlineArgs, stdout: &mut dyn Write) -> CmdResult {
    use ReportFormat::*;
    let format = format_of(&args.output, Csv, &[Csv, Json, Svg], "waterline")?;
    let scheme = parse_scheme(&args.scheme)?;
    let mut device = load_device(args.device.as_deref())?;
    if let Some(ob) = args.opbyte {
        if !(ob > 0.0 && ob.is_finite()) {
            return Err(usage(format!("--opbyte must be positive, got {ob}")));
        }
        device = device.with_op_byte(ob);
    }
    let (name, verdict, report) = analyze(&args.net, &device, scheme, args.batch)?;
    let text = match format {
        Csv => csv_text(
            &WATERLINE_COLUMNS,
            report.kernels.iter().map(|k| {
                vec![
                    k.label.clone(),
                    k.ops.to_string(),
                    k.bytes.to_string(),
                    k.intensity.map_or_else(|| "inf".into(), |i| format!("{i:.4}")),
                    k.bound.clone(),
                    format!("{:.6}", k.latency_ms),
                ]
            }),
        )?,
        Json => json_text(&report)?,
        Svg => svg::waterline_plot(&format!("{name} ({}, batch {})", scheme.name(), args.batch), &verdict, device.op_byte()),
    };
    emit(&args.output, &text, stdout)
}

pub const GAP_COLUMNS: [&str; 9] =
    ["model", "macs_g", "batch", "ideal_latency_ms", "actual_latency_ms", "efficiency_pct", "log_gap", "fps", "accuracy_pct"];

#[derive(Debug, Serialize)]
struct GapReport<'a> {
    device: &'a DeviceSpec,
    points: &'a [waterline_core::GapPoint],
}

pub fn cmd_gap(args: &GapArgs, stdout: &mut dyn Write) -> CmdResult {
    use ReportFormat::*;
    let format = format_of(&args.output, Csv, &[Csv, Json, Svg], "gap")?;
    let device = load_device(args.device.as_deref())?;
    let samples = match &args.samples {
        Some(path) => {
            let file = std::fs::File::open(path).map_err(|e| Failure::validation(anyhow::anyhow!("reading {}: {e}", path.display())))?;
            read_samples(file)?
        }
        None => reference_samples(),
    };
    let points = gap_series::<f64>(&samples, &device)?;
    let text = match format {
        Csv => csv_text(
            &GAP_COLUMNS,
            points.iter().map(|p| {
                vec![
                    p.model.clone(),
                    format!("{}", p.macs_per_image / 1e9),
                    p.batch.to_string(),
                    format!("{:.4}", p.ideal_latency * 1e3),
                    format!("{:.4}", p.actual_latency * 1e3),
                    format!("{:.2}", p.efficiency * 100.0),
                    format!("{:.4}", p.log_gap),
                    format!("{:.1}", p.batch as f64 / p.actual_latency),
                    p.accuracy.map(|a| a.to_string()).unwrap_or_default(),
                ]
            }),
        )?,
        Json => json_text(&GapReport { device: &device, points: &points })?,
        Svg => svg::gap_plot(&points),
    };
    emit(&args.output, &text, stdout)
}

pub const SWEEP_COLUMNS: [&str; 4] = ["scheme", "op_byte", "waterline", "roofline"];

#[derive(Debug, Serialize)]
struct Curve<'a> {
    scheme: ExecutionScheme,
    points: &'a [SweepPoint<f64>],
}

#[derive(Debug, Serialize)]
struct SweepReport<'a> {
    network: &'a str,
    batch: u32,
    curves: Vec<Curve<'a>>,
}

pub type SchemeCurve = (ExecutionScheme, Vec<SweepPoint<f64>>);

pub fn sweep_curves(args: &SweepArgs) -> CmdResult<(String, Vec<SchemeCurve>)> {
    if !(args.opbyte_min > 0.0 && args.opbyte_min < args.opbyte_max && args.opbyte_max.is_finite()) {
        return Err(usage(format!("need 0 < --opbyte-min < --opbyte-max, got {} and {}", args.opbyte_min, args.opbyte_max)));
    }
    if args.samples < 2 {
        return Err(usage("--samples must be at least 2"));
    }
    let schemes = parse_schemes(&args.schemes)?;
    let device = load_device(args.device.as_deref())?;
    let net = load_network(&args.net)?;
    let mut curves = Vec::new();
    for scheme in schemes {
        let seq = expand_network(&net, args.batch, scheme, &device)?;
        curves.push((scheme, opbyte_sweep::<f64>(&seq, &device, args.opbyte_min, args.opbyte_max, args.samples)?));
    }
    Ok((net.name, curves))
}

pub fn cmd_sweep(args: &SweepArgs, stdout: &mut dyn Write) -> CmdResult {
    use ReportFormat::*;
    let format = format_of(&args.output, Csv, &[Csv, Json, Svg], "sweep")?;
    let (name, curves) = sweep_curves(args)?;
    let text = match format {
        Csv => csv_text(
            &SWEEP_COLUMNS,
            curves.iter().flat_map(|(scheme, points)| {
                points.iter().map(move |p| {
                    vec![scheme.name().to_string(), format!("{:.6}", p.op_byte), format!("{:.6}", p.waterline), format!("{:.6}", p.roofline)]
                })
            }),
        )?,
        Json => json_text(&SweepReport {
            network: &name,
            batch: args.batch,
            curves: curves.iter().map(|(scheme, points)| Curve { scheme: *scheme, points }).collect(),
        })?,
        Svg => svg::sweep_plot(&format!("{name}: efficiency vs op:byte (batch {})", args.batch), &curves),
    };
    emit(&args.output, &text, stdout)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub block: BlockSpec,
    pub dims: TensorDims,
    pub scheme: ExecutionScheme,
    pub seed: u64,
    pub traffic: TrafficReport,
    /// DRAM bytes of the same block and scheme from the analytical counts.
    pub complexity_dram_bytes: u64,
    pub layerwise_dram_bytes: u64,
    pub blockfusion_dram_bytes: u64,
    pub max_relative_error: f64,
    pub tolerance: f64,
}

pub fn simulate(block: &BlockSpec, dims: TensorDims, scheme: ExecutionScheme, seed: u64, chunk: Option<usize>) -> CmdResult<SimulateReport> {
    let opts = ScheduleOptions { chunk, ..ScheduleOptions::default() };
    let lw = build_schedule_with(block, dims, ExecutionScheme::LayerWise, &opts)?;
    let bf = build_schedule_with(block, dims, ExecutionScheme::BlockFusion, &opts)?;
    let inputs = random_inputs::<f32>(&lw, seed);
    let reference = execute_numeric(&lw, &inputs)?;
    let fused = execute_numeric(&bf, &inputs)?;
    let error = relative_error(&fused, &reference)?;
    let (lw_traffic, bf_traffic) = (simulate_traffic(&lw)?, simulate_traffic(&bf)?);
    let traffic = match scheme {
        ExecutionScheme::LayerWise => lw_traffic,
        ExecutionScheme::BlockFusion => bf_traffic,
    };
    let device = DeviceSpec { bytes_per_element: opts.element_bytes, ..DeviceSpec::reference() };
    let complexity_dram_bytes = complexity::block_costs(block, dims, scheme, &device)?.iter().map(|c| c.bytes).sum();
    Ok(SimulateReport {
        block: *block,
        dims,
        scheme,
        seed,
        traffic,
        complexity_dram_bytes,
        layerwise_dram_bytes: lw_traffic.dram_bytes(),
        blockfusion_dram_bytes: bf_traffic.dram_bytes(),
        max_relative_error: error,
        tolerance: SIMULATE_TOLERANCE,
    })
}

pub fn cmd_simulate(args: &SimulateArgs, stdout: &mut dyn Write) -> CmdResult {
    use ReportFormat::*;
    let format = format_of(&args.output, Json, &[Csv, Json], "simulate")?;
    let scheme = parse_scheme(&args.scheme)?;
    let block = parse_block(&args.block)?;
    let default_dims = if matches!(block.kind, BlockKind::Ffn { .. }) { "1x8x8" } else { "1x16x16" };
    let dims = parse_dims(args.dims.as_deref().unwrap_or(default_dims), block.in_channels)?;
    let report = simulate(&block, dims, scheme, args.seed, args.chunk)?;
    let text = match format {
        Json => json_text(&report)?,
        _ => {
            let t = &report.traffic;
            let rows = [
                ("dram_global_bytes", t.dram_global_bytes.to_string()),
                ("global_local_bytes", t.global_local_bytes.to_string()),
                ("hidden_dram_bytes", t.hidden_dram_bytes.to_string()),
                ("macs", t.macs.to_string()),
                ("synchronizations", t.synchronizations.to_string()),
                ("complexity_dram_bytes", report.complexity_dram_bytes.to_string()),
                ("layerwise_dram_bytes", report.layerwise_dram_bytes.to_string()),
                ("blockfusion_dram_bytes", report.blockfusion_dram_bytes.to_string()),
                ("max_relative_error", format!("{:e}", report.max_relative_error)),
            ];
            csv_text(&["metric", "value"], rows.into_iter().map(|(k, v)| vec![k.to_string(), v]))?
        }
    };
    emit(&args.output, &text, stdout)?;
    if report.max_relative_error > SIMULATE_TOLERANCE {
        return Err(Failure::tolerance(anyhow::anyhow!(
            "fused and layer-wise outputs differ by {:e} (tolerance {SIMULATE_TOLERANCE:e})",
            report.max_relative_error
        )));
    }
    Ok(())
}

pub const PROJECT_COLUMNS: [&str; 19] = [
    "label", "kind", "in_channels", "channels", "expansion", "height", "width", "stride", "depth", "conv_mops", "exp_mops",
    "prj_mops", "se_mops", "block_mops", "pct", "provenance", "tflops", "latency_ms", "fps",
];

pub fn project(args: &ProjectArgs) -> CmdResult<Projection> {
    let net = load_network(&args.net)?;
    let table = load_efficiency(&args.efficiency)?;
    let device = load_device(args.device.as_deref())?;
    Ok(project_network(&net, &table, &device, args.batch)?)
}

fn layer_mops(row: &waterline_core::projection::ProjectionRow, label: &str) -> String {
    row.layer_ops
        .iter()
        .filter(|(l, _)| l == label || (label == "conv" && (l == "stem" || l == "conv")))
        .map(|(_, o)| *o as f64 / 1e6)
        .reduce(|a, b| a + b)
        .map(|v| format!("{v:.2}"))
        .unwrap_or_default()
}

pub fn cmd_project(args: &ProjectArgs, stdout: &mut dyn Write) -> CmdResult {
    use ReportFormat::*;
    let format = format_of(&args.output, Csv, &[Csv, Json], "project")?;
    let p = project(args)?;
    let text = match format {
        Json => json_text(&p)?,
        _ => {
            let mut rows: Vec<Vec<String>> = p
                .rows
                .iter()
                .map(|r| {
                    let kind = serde_json::to_value(r.key.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
                    vec![
                        r.label.clone(),
                        kind,
                        r.in_channels.to_string(),
                        r.key.channels.to_string(),
                        r.key.expansion.to_string(),
                        r.key.height.to_string(),
                        r.key.width.to_string(),
                        r.key.stride.to_string(),
                        r.depth.to_string(),
                        layer_mops(r, "conv"),
                        layer_mops(r, "exp"),
                        layer_mops(r, "prj"),
                        layer_mops(r, "se"),
                        format!("{:.2}", r.ops as f64 / 1e6),
                        format!("{:.4}", r.pct),
                        serde_json::to_value(r.provenance).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                        format!("{:.2}", r.throughput / 1e12),
                        format!("{:.4}", r.latency * 1e3),
                        String::new(),
                    ]
                })
                .collect();
            let t = &p.totals;
            let mut total = vec![String::new(); PROJECT_COLUMNS.len()];
            total[0] = "total".into();
            total[13] = format!("{:.2}", 2.0 * t.network_macs / 1e6);
            total[14] = format!("{:.4}", t.aggregate_pct);
            total[17] = format!("{:.4}", t.network_latency * 1e3);
            total[18] = format!("{:.2}", t.fps);
            rows.push(total);
            csv_text(&PROJECT_COLUMNS, rows)?
        }
    };
    emit(&args.output, &text, stdout)
}

pub fn cmd_zoo(action: &ZooAction, stdout: &mut dyn Write) -> CmdResult {
    match action {
        ZooAction::List => {
            for id in ZooId::ALL {
                writeln!(stdout, "zoo:{id}")?;
            }
            Ok(())
        }
        ZooAction::Export { id, out } => {
            let id: ZooId = id.parse()?;
            let mut text = zoo::build(id).to_json()?;
            text.push('\n');
            emit(&Output { out: out.clone(), format: Some(ReportFormat::Json) }, &text, stdout)
        }
    }
}
