//! The nine acceptance criteria of the workspace. Each criterion returns an
//! [`Outcome`] instead of panicking so that every line is reported even
//! when an earlier one fails.

pub mod tables;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waterline_cli::commands::simulate;
use waterline_core::complexity::{block_costs, count_params, network_macs};
use waterline_core::perf::{amdahl_roofline_speedup, roofline_efficiency, sweep_point, waterline, Bound};
use waterline_core::projection::{default_estimates, project_network, Projection, ProjectionRow};
use waterline_core::tensor_machine::{build_schedule, microbatch_capacity_bytes, microbatch_plan, simulate_traffic, MicrobatchPlan};
use waterline_core::{
    expand_network, zoo, Activation, BlockKind, BlockSpec, DeviceSpec, ExecutionScheme, KernelWorkload, TensorDims, ZooId,
};

use tables::OpRow;

/// Relative tolerance on printed op counts, plus half a unit in the last printed place.
pub const OPS_REL_TOL: f64 = 0.005;
pub const OPS_ROUNDING_SLACK_M: f64 = 0.005;
pub const MACS_REL_TOL: f64 = 0.02;
pub const PARAMS_REL_TOL: f64 = 0.03;
pub const PROJECTION_REL_TOL: f64 = 0.01;
pub const PEAK_PP_TOL: f64 = 0.5;
pub const FPS_REL_TOL: f64 = 0.001;
pub const FUSION_REL_ERR: f64 = 1e-4;
pub const FUSION_CASES: usize = 200;
pub const PERF_CASES: usize = 1000;
pub const SMALL_LAYERWISE_TARGET: f64 = 0.36;
pub const SMALL_BLOCKFUSION_TARGET: f64 = 0.97;
pub const WATERLINE_PP_TOL: f64 = 0.05;
pub const RISING_WATER_OPBYTE: f64 = 500.0;
pub const RISING_WATER_MIN: f64 = 0.80;
pub const TIME_LIMIT: Duration = Duration::from_secs(1);

#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: u8,
    pub title: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "criterion {} {verdict} {}: {}", self.id, self.title, self.detail)
    }
}

fn outcome(id: u8, title: &'static str, failures: Vec<String>, summary: String) -> Outcome {
    let pass = failures.is_empty();
    let detail = if pass { summary } else { format!("{summary}; {}", failures.join("; ")) };
    Outcome { id, title, pass, detail }
}

fn rel(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}

fn mops(row: &ProjectionRow, labels: &[&str]) -> Option<f64> {
    let ops: Vec<u64> = row.layer_ops.iter().filter(|(l, _)| labels.contains(&l.as_str())).map(|(_, o)| *o).collect();
    (!ops.is_empty()).then(|| ops.iter().sum::<u64>() as f64 / 1e6)
}

fn projected(id: ZooId) -> Projection {
    project_network(&zoo::build(id), &default_estimates(), &DeviceSpec::reference(), 128).expect("zoo networks project")
}

pub fn op_count_golden() -> Outcome {
    let start = Instant::now();
    let printed: [(ZooId, &[OpRow]); 4] = [
        (ZooId::ConvFirstNetPico, &tables::PICO_OPS),
        (ZooId::ConvFirstNetNano, &tables::NANO_OPS),
        (ZooId::ConvFirstNetTiny, &tables::TINY_OPS),
        (ZooId::ConvFirstNetSmall, &tables::SMALL_OPS),
    ];
    let mut failures = Vec::new();
    let (mut cells, mut worst, mut worst_share) = (0, 0.0f64, 0.0f64);
    for (id, rows) in printed {
        let p = projected(id);
        if p.rows.len() != rows.len() {
            failures.push(format!("{id}: {} rows, {} printed", p.rows.len(), rows.len()));
            continue;
        }
        for (i, (got, want)) in p.rows.iter().zip(rows).enumerate() {
            if got.depth != want.depth {
                failures.push(format!("{id} row {i}: depth {} vs {}", got.depth, want.depth));
            }
            let columns = [
                ("conv", mops(got, &["conv", "stem"]), Some(want.conv)),
                ("exp", mops(got, &["exp"]), want.exp),
                ("prj", mops(got, &["prj"]), want.prj),
                ("se", mops(got, &["se"]), want.se),
            ];
            for (name, got, want) in columns {
                match (got, want) {
                    (Some(g), Some(w)) => {
                        cells += 1;
                        let err = (g - w).abs();
                        let allowed = (OPS_REL_TOL * w).max(OPS_ROUNDING_SLACK_M);
                        if w >= 1.0 {
                            worst = worst.max(err / w);
                        }
                        worst_share = worst_share.max(err / allowed);
                        if err > allowed {
                            failures.push(format!("{id} row {i} {name}: {g:.4}M vs {w}M"));
                        }
                    }
                    (None, None) => {}
                    (g, w) => failures.push(format!("{id} row {i} {name}: {g:?} vs printed {w:?}")),
                }
            }
        }
    }
    let elapsed = start.elapsed();
    if elapsed > TIME_LIMIT {
        failures.push(format!("took {elapsed:?}"));
    }
    let summary = format!(
        "{cells} printed cells, worst relative deviation {:.3}% (cells >= 1M), worst cell at {:.0}% of its allowance, {:.1} ms",
        worst * 100.0,
        worst_share * 100.0,
        elapsed.as_secs_f64() * 1e3
    );
    outcome(1, "op-count golden suite", failures, summary)
}

pub fn network_totals() -> Outcome {
    let mut failures = Vec::new();
    let mut parts = Vec::new();
    for (slug, params_m, macs_b, _, _) in tables::NETWORK_SUMMARY {
        let net = zoo::build(slug.parse().expect("zoo slug"));
        let macs = network_macs(&net).expect("macs") / 1e9;
        let params = count_params(&net) as f64 / 1e6;
        let (em, ep) = (rel(macs, macs_b), rel(params, params_m));
        if em > MACS_REL_TOL {
            failures.push(format!("{slug} MACs {macs:.3}B vs {macs_b}B"));
        }
        if ep > PARAMS_REL_TOL {
            failures.push(format!("{slug} params {params:.2}M vs {params_m}M"));
        }
        parts.push(format!("{slug} {macs:.3}B/{params:.2}M"));
    }
    outcome(2, "network totals", failures, parts.join(", "))
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("waterline").chain(args.iter().copied());
    match waterline_cli::run(argv, &mut out, &mut err) {
        0 => Ok(String::from_utf8_lossy(&out).into_owned()),
        code => Err(format!("exit {code}: {}", String::from_utf8_lossy(&err).trim())),
    }
}

pub fn projection_reproduction() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut parts = Vec::new();
    for (slug, _, _, ms, fps) in tables::NETWORK_SUMMARY {
        let net = format!("zoo:{slug}");
        let text = match run_cli(&["project", "--net", &net, "--efficiency", "default", "--batch", "128", "--format", "json"]) {
            Ok(t) => t,
            Err(e) => {
                failures.push(format!("{slug}: {e}"));
                continue;
            }
        };
        let p: Projection = serde_json::from_str(&text).expect("projection json");
        let (got_ms, got_fps) = (p.totals.network_latency * 1e3, p.totals.fps);
        if rel(got_ms, ms) > PROJECTION_REL_TOL || rel(got_fps, fps) > PROJECTION_REL_TOL {
            failures.push(format!("{slug}: {got_ms:.3} ms / {got_fps:.1} FPS vs {ms} ms / {fps} FPS"));
        }
        parts.push(format!("{slug} {got_ms:.3} ms {got_fps:.0} FPS"));
    }
    let elapsed = start.elapsed();
    if elapsed > TIME_LIMIT {
        failures.push(format!("took {elapsed:?}"));
    }
    outcome(3, "projection reproduction", failures, format!("{}, {:.1} ms", parts.join(", "), elapsed.as_secs_f64() * 1e3))
}

pub fn efficiency_gap() -> Outcome {
    let mut failures = Vec::new();
    let text = match run_cli(&["gap", "--format", "json"]) {
        Ok(t) => t,
        Err(e) => return outcome(4, "efficiency-gap reproduction", vec![e], String::new()),
    };
    let report: serde_json::Value = serde_json::from_str(&text).expect("gap json");
    let points: Vec<waterline_core::GapPoint> = serde_json::from_value(report["points"].clone()).expect("gap points");
    let (mut worst_pp, mut worst_fps) = (0.0f64, 0.0f64);
    for (model, pct, fps) in tables::SPEED_ACCURACY {
        let Some(p) = points.iter().find(|p| p.model == model) else {
            failures.push(format!("{model} missing"));
            continue;
        };
        let got_pct = p.efficiency * 100.0;
        let got_fps = p.batch as f64 / p.actual_latency;
        worst_pp = worst_pp.max((got_pct - pct).abs());
        worst_fps = worst_fps.max(rel(got_fps, fps));
        if (got_pct - pct).abs() > PEAK_PP_TOL {
            failures.push(format!("{model}: {got_pct:.2}% vs {pct}%"));
        }
        if rel(got_fps, fps) > FPS_REL_TOL {
            failures.push(format!("{model}: {got_fps:.1} FPS vs {fps}"));
        }
    }
    if points.len() != tables::SPEED_ACCURACY.len() {
        failures.push(format!("{} points for {} printed rows", points.len(), tables::SPEED_ACCURACY.len()));
    }
    let summary = format!(
        "{} rows, worst % peak deviation {worst_pp:.2} pp, worst FPS deviation {:.4}%",
        points.len(),
        worst_fps * 100.0
    );
    outcome(4, "efficiency-gap reproduction", failures, summary)
}

fn random_block(rng: &mut ChaCha8Rng, kind: usize) -> (BlockSpec, TensorDims) {
    let n = rng.gen_range(1..=2);
    match kind {
        0 => {
            let c = rng.gen_range(1..=16);
            let alpha = rng.gen_range(1..=6);
            let block = BlockSpec::new(BlockKind::Ffn { expansion: alpha, activation: Activation::Relu }, c, c, 1);
            (block, TensorDims::new(n, rng.gen_range(1..=8), rng.gen_range(1..=8), c))
        }
        _ => {
            let c = 8 * rng.gen_range(1..=3);
            let stride = rng.gen_range(1..=2);
            let k = if stride == 1 && rng.gen_bool(0.5) { c } else { 8 * rng.gen_range(1..=4) };
            let block_kind = if kind == 1 {
                BlockKind::ConvFirst { group_width: 8, expansion: rng.gen_range(1..=4), activation: Activation::Relu }
            } else {
                BlockKind::MbConv { group_width: 8, expansion: 2 * rng.gen_range(1..=2), se_ratio: 0.25, activation: Activation::Silu }
            };
            let hw = 2 * rng.gen_range(1..=4);
            (BlockSpec::new(block_kind, c, k, stride), TensorDims::new(n, hw, hw, c))
        }
    }
}

pub fn fusion_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for (kind, name) in ["ffn", "convfirst", "mbconv"].into_iter().enumerate() {
        for case in 0..FUSION_CASES {
            let (block, dims) = random_block(&mut rng, kind);
            let seed = rng.gen();
            let report = match simulate(&block, dims, ExecutionScheme::LayerWise, seed, None) {
                Ok(r) => r,
                Err(e) => {
                    failures.push(format!("{name} case {case} ({dims}): {e}"));
                    continue;
                }
            };
            worst = worst.max(report.max_relative_error);
            if report.max_relative_error > FUSION_REL_ERR {
                failures.push(format!("{name} case {case}: relative error {:e}", report.max_relative_error));
            }
            if report.blockfusion_dram_bytes >= report.layerwise_dram_bytes {
                failures.push(format!("{name} case {case}: fused {} >= layer-wise {} bytes", report.blockfusion_dram_bytes, report.layerwise_dram_bytes));
            }
            if let BlockKind::Ffn { expansion, .. } = block.kind {
                let p = dims.batch as u64 * dims.height as u64 * dims.width as u64;
                let want = 2 * 2 * p * expansion as u64 * block.in_channels as u64;
                let delta = report.layerwise_dram_bytes - report.blockfusion_dram_bytes;
                if delta != want || report.traffic.hidden_dram_bytes != want {
                    failures.push(format!("ffn case {case}: hidden delta {delta} vs {want}"));
                }
            }
        }
    }
    failures.truncate(5);
    let summary = format!("{} instances per block kind, worst relative error {worst:.2e}", FUSION_CASES);
    outcome(5, "fusion soundness", failures, summary)
}

fn random_sequence(rng: &mut ChaCha8Rng, side: u32, op_byte: f64) -> Vec<KernelWorkload> {
    let len = rng.gen_range(1..=12);
    (0..len)
        .map(|i| {
            let bytes: u64 = rng.gen_range(1..1u64 << 34);
            let ops = match side {
                0 => ((bytes as f64) * op_byte * rng.gen_range(1.0..50.0)) as u64,
                1 => ((bytes as f64) * op_byte * rng.gen_range(0.0..0.99)) as u64,
                _ => rng.gen_range(0..1u64 << 40),
            };
            KernelWorkload::new(format!("k{i}"), ops, bytes, TensorDims::new(1, 1, 1, 1))
        })
        .collect()
}

/// Waterline latency ratio before and after making kernel `j` exactly ridge-bound.
fn recompute_oracle(seq: &[KernelWorkload], j: usize, d: &DeviceSpec) -> f64 {
    let latency = |ops: f64, bytes: f64| (ops / d.peak_throughput).max(bytes / d.dram_bandwidth);
    let before: f64 = seq.iter().map(|w| latency(w.ops as f64, w.bytes as f64)).sum();
    let after: f64 = seq
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let bytes = if i == j { w.ops as f64 / d.op_byte() } else { w.bytes as f64 };
            latency(w.ops as f64, bytes)
        })
        .sum();
    before / after
}

pub fn perf_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xbeef);
    let mut failures = Vec::new();
    let (mut equalities, mut amdahl, mut worst) = (0, 0, 0.0f64);
    for case in 0..PERF_CASES {
        let op_byte = 10f64.powf(rng.gen_range(0.0..3.3));
        let device = DeviceSpec::reference().with_op_byte(op_byte);
        let seq = random_sequence(&mut rng, (case % 3) as u32, op_byte);
        let w = waterline::<f64>(&seq, &device).expect("waterline");
        let r = roofline_efficiency::<f64>(&seq, &device).expect("roofline");
        if r < w.max_efficiency * (1.0 - 1e-12) {
            failures.push(format!("case {case}: roofline {r} < waterline {}", w.max_efficiency));
        }
        let first = w.verdicts[0].bound;
        if w.verdicts.iter().all(|v| v.bound == first) {
            equalities += 1;
            if (r - w.max_efficiency).abs() > 1e-9 * r {
                failures.push(format!("case {case}: one-sided sequence but roofline {r} != waterline {}", w.max_efficiency));
            }
        }
        for j in (0..seq.len()).filter(|&j| w.verdicts[j].bound == Bound::Memory) {
            amdahl += 1;
            let s = amdahl_roofline_speedup::<f64>(&seq, j, &device).expect("speedup");
            let e = rel(s, recompute_oracle(&seq, j, &device));
            worst = worst.max(e);
            if e > 1e-9 {
                failures.push(format!("case {case} kernel {j}: speedup {s} deviates by {e:e}"));
            }
        }
    }
    failures.truncate(5);
    let summary = format!(
        "{PERF_CASES} sequences, {equalities} one-sided, {amdahl} speedups checked (worst relative deviation {worst:.1e})"
    );
    outcome(6, "performance-model properties", failures, summary)
}

pub fn published_waterlines() -> Outcome {
    let device = DeviceSpec::reference();
    let net = zoo::build(ZooId::ConvFirstNetSmall);
    let lw = expand_network(&net, 128, ExecutionScheme::LayerWise, &device).expect("layer-wise");
    let bf = expand_network(&net, 128, ExecutionScheme::BlockFusion, &device).expect("block fusion");
    let e_lw = waterline::<f64>(&lw, &device).expect("waterline").max_efficiency;
    let e_bf = waterline::<f64>(&bf, &device).expect("waterline").max_efficiency;
    let rising = sweep_point::<f64>(&bf, &device, RISING_WATER_OPBYTE).expect("sweep").waterline;
    let mut failures = Vec::new();
    if (e_lw - SMALL_LAYERWISE_TARGET).abs() > WATERLINE_PP_TOL {
        failures.push(format!("layer-wise {:.1}% outside 36 ± 5%", e_lw * 100.0));
    }
    if (e_bf - SMALL_BLOCKFUSION_TARGET).abs() > WATERLINE_PP_TOL {
        failures.push(format!("block fusion {:.1}% outside 97 ± 5%", e_bf * 100.0));
    }
    if rising < RISING_WATER_MIN {
        failures.push(format!("block fusion at op:byte {RISING_WATER_OPBYTE} is {rising:.3} < {RISING_WATER_MIN}"));
    }
    let summary = format!(
        "op:byte {:.1}: layer-wise {:.1}%, block fusion {:.1}%, block fusion at op:byte {RISING_WATER_OPBYTE} {:.1}%",
        device.op_byte(),
        e_lw * 100.0,
        e_bf * 100.0,
        rising * 100.0
    );
    outcome(7, "waterline figures", failures, summary)
}

/// Distinct (block, input) pairs of the zoo that the tensor machine can run.
pub fn zoo_block_configurations() -> Vec<(BlockSpec, TensorDims)> {
    let mut seen = BTreeMap::new();
    for id in ZooId::ALL {
        for placed in zoo::build(id).blocks() {
            if matches!(placed.block.kind, BlockKind::ConvFirst { .. } | BlockKind::MbConv { .. } | BlockKind::Ffn { .. }) {
                let key = format!("{:?}|{}", placed.block, placed.input);
                seen.entry(key).or_insert((placed.block, placed.input));
            }
        }
    }
    seen.into_values().collect()
}

pub fn traffic_cross_check() -> Outcome {
    let device = DeviceSpec::reference();
    let configs = zoo_block_configurations();
    let mut failures = Vec::new();
    for (block, dims) in &configs {
        for scheme in [ExecutionScheme::LayerWise, ExecutionScheme::BlockFusion] {
            let traffic = build_schedule(block, *dims, scheme).and_then(|s| simulate_traffic(&s));
            let costs = block_costs(block, *dims, scheme, &device);
            match (traffic, costs) {
                (Ok(t), Ok(c)) => {
                    let model: u64 = c.iter().map(|c| c.bytes).sum();
                    if t.dram_bytes() != model {
                        failures.push(format!("{} {dims} {}: {} vs {model}", block.kind.name(), scheme.name(), t.dram_bytes()));
                    }
                }
                (t, c) => failures.push(format!("{} {dims}: {:?} / {:?}", block.kind.name(), t.err(), c.err())),
            }
        }
    }
    let summary = format!("{} block configurations x 2 schemes", configs.len());
    outcome(8, "traffic cross-check", failures, summary)
}

pub fn microbatch_planner() -> Outcome {
    const C: u64 = 128;
    const HW: u64 = 16;
    const ALPHA: u64 = 4;
    const DEPTH: u32 = 10;
    const L2: u64 = 6 * 1024 * 1024;
    let device = DeviceSpec { l2_bytes: L2, ..DeviceSpec::reference() };
    let stage = waterline_core::model::StageSpec {
        block: BlockKind::MbConv { group_width: 8, expansion: ALPHA as u32, se_ratio: 0.25, activation: Activation::Silu },
        depth: DEPTH,
        channels: C as u32,
        stride: 1,
    };
    // bpe (2 n H W C + d (2 α C² + 72 α C)) with two-byte elements.
    let needed = |n: u64| 2 * (2 * n * HW * HW * C + DEPTH as u64 * (2 * ALPHA * C * C + 72 * ALPHA * C));
    let oracle = (0..).take_while(|&n| needed(n) <= L2).last().unwrap_or(0);
    let mut failures = Vec::new();
    let plan = microbatch_plan(&stage, HW as u32, HW as u32, &device, 1 << 20);
    let summary = match plan {
        Ok(MicrobatchPlan::Plan { micro_batch, depth }) => {
            if depth != DEPTH {
                failures.push(format!("depth {depth} instead of {DEPTH}"));
            }
            if micro_batch != oracle {
                failures.push(format!("micro-batch {micro_batch}, brute force {oracle}"));
            }
            if microbatch_capacity_bytes(C, ALPHA, HW, HW, 2, micro_batch, depth as u64) != needed(micro_batch) {
                failures.push("capacity formula disagrees with the oracle".into());
            }
            if needed(micro_batch) > L2 || needed(micro_batch + 1) <= L2 {
                failures.push(format!("n = {micro_batch} is not the largest fitting micro-batch"));
            }
            format!(
                "n_mb = {micro_batch} at depth {depth}: {} <= {L2} < {} bytes",
                needed(micro_batch),
                needed(micro_batch + 1)
            )
        }
        other => {
            failures.push(format!("unexpected plan {other:?}"));
            String::new()
        }
    };
    outcome(9, "micro-batch planner", failures, summary)
}

pub fn all() -> Vec<Outcome> {
    vec![
        op_count_golden(),
        network_totals(),
        projection_reproduction(),
        efficiency_gap(),
        fusion_soundness(),
        perf_properties(),
        published_waterlines(),
        traffic_cross_check(),
        microbatch_planner(),
    ]
}
