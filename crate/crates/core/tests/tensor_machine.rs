use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waterline_core::complexity::block_costs;
use waterline_core::tensor_machine::*;
use waterline_core::{Activation, Matrix32, BlockKind, BlockSpec, DeviceSpec, Error, ExecutionScheme, TensorDims};

const LW: ExecutionScheme = ExecutionScheme::LayerWise;
const BF: ExecutionScheme = ExecutionScheme::BlockFusion;

fn ffn(c: u32, alpha: u32) -> BlockSpec {
    BlockSpec::new(BlockKind::Ffn { expansion: alpha, activation: Activation::Relu }, c, c, 1)
}

fn convfirst(c: u32, k: u32, t: u32, stride: u32) -> BlockSpec {
    BlockSpec::new(BlockKind::ConvFirst { group_width: 8, expansion: t, activation: Activation::Relu }, c, k, stride)
}

fn mbconv(c: u32, k: u32, stride: u32) -> BlockSpec {
    BlockSpec::new(
        BlockKind::MbConv { group_width: 8, expansion: 4, se_ratio: 0.25, activation: Activation::Silu },
        c,
        k,
        stride,
    )
}

fn fused_vs_layerwise(block: &BlockSpec, dims: TensorDims, seed: u64, opts: &ScheduleOptions) -> f64 {
    let lw = build_schedule_with(block, dims, LW, opts).unwrap();
    let bf = build_schedule_with(block, dims, BF, opts).unwrap();
    let inputs = random_inputs::<f32>(&lw, seed);
    let a = execute_numeric(&lw, &inputs).unwrap();
    let b = execute_numeric(&bf, &inputs).unwrap();
    relative_error(&b, &a).unwrap()
}

fn dram_bytes(block: &BlockSpec, dims: TensorDims, scheme: ExecutionScheme) -> (u64, u64) {
    let traffic = simulate_traffic(&build_schedule(block, dims, scheme).unwrap()).unwrap();
    let costs = block_costs(block, dims, scheme, &DeviceSpec::reference()).unwrap();
    (traffic.dram_bytes(), costs.iter().map(|c| c.bytes).sum())
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix32 {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..=1.0)).collect()).unwrap()
}

/// Straight-line reference: explicit triple loops in f64.
fn naive_ffn(x: &Matrix32, u: &Matrix32, v: &Matrix32, a: &[f32], b: &[f32], relu: bool) -> Vec<f64> {
    let mut z = vec![0.0; x.rows * v.cols];
    for p in 0..x.rows {
        let mut y = vec![0.0f64; u.cols];
        for (j, yj) in y.iter_mut().enumerate() {
            let mut s = a[j] as f64;
            for k in 0..x.cols {
                s += x.data[p * x.cols + k] as f64 * u.data[k * u.cols + j] as f64;
            }
            *yj = if relu { s.max(0.0) } else { s };
        }
        for j in 0..v.cols {
            let mut s = b[j] as f64;
            for (i, yi) in y.iter().enumerate() {
                s += yi * v.data[i * v.cols + j] as f64;
            }
            z[p * v.cols + j] = s;
        }
    }
    z
}

struct FfnCase {
    x: Matrix32,
    u: Matrix32,
    v: Matrix32,
    a: Vec<f32>,
    b: Vec<f32>,
}

fn ffn_case(seed: u64, p: usize, c: usize, alpha: usize) -> FfnCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = alpha * c;
    FfnCase {
        x: random_matrix(&mut rng, p, c),
        u: random_matrix(&mut rng, c, h),
        v: random_matrix(&mut rng, h, c),
        a: (0..h).map(|_| rng.gen_range(-1.0..=1.0)).collect(),
        b: (0..c).map(|_| rng.gen_range(-1.0..=1.0)).collect(),
    }
}

#[test]
fn ffn_layerwise_matches_naive_loops() {
    let f = ffn_case(7, 4, 3, 2);
    let z = ffn_layerwise(&f.x, &f.u, &f.v, &f.a, &f.b, Activation::Relu).unwrap();
    let want = naive_ffn(&f.x, &f.u, &f.v, &f.a, &f.b, true);
    for (got, want) in z.data.iter().zip(&want) {
        assert!((*got as f64 - want).abs() <= 1e-6, "{got} vs {want}");
    }
}

#[test]
fn ffn_full_chunk_is_bit_identical() {
    let f = ffn_case(11, 8, 5, 3);
    let lw = ffn_layerwise(&f.x, &f.u, &f.v, &f.a, &f.b, Activation::Relu).unwrap();
    let bf = ffn_fused(&f.x, &f.u, &f.v, &f.a, &f.b, Activation::Relu, 15).unwrap();
    assert_eq!(lw.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), bf.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn ffn_single_channel_chunks_match_layerwise() {
    let f = ffn_case(3, 64, 16, 6);
    let lw = ffn_layerwise(&f.x, &f.u, &f.v, &f.a, &f.b, Activation::Relu).unwrap();
    let bf = ffn_fused(&f.x, &f.u, &f.v, &f.a, &f.b, Activation::Relu, 1).unwrap();
    assert!(bf.max_abs_diff(&lw) <= 1e-5, "{}", bf.max_abs_diff(&lw));
}

#[test]
fn ffn_identity_is_linear() {
    let f = ffn_case(5, 6, 4, 2);
    let uv = f.u.matmul(&f.v).unwrap();
    let av = Matrix::from_vec(1, 8, f.a.clone()).unwrap().matmul(&f.v).unwrap();
    let xuv = f.x.matmul(&uv).unwrap();
    for r in [1, 2, 8] {
        let z = ffn_fused(&f.x, &f.u, &f.v, &f.a, &f.b, Activation::Identity, r).unwrap();
        for p in 0..6 {
            for j in 0..4 {
                let want = xuv.get(p, j) + av.get(0, j) + f.b[j];
                assert!((z.get(p, j) - want).abs() <= 1e-5);
            }
        }
    }
}

#[test]
fn ffn_rejects_bad_chunks() {
    let f = ffn_case(1, 2, 2, 2);
    assert!(ffn_fused(&f.x, &f.u, &f.v, &f.a, &f.b, Activation::Relu, 0).is_err());
    assert!(ffn_fused(&f.x, &f.u, &f.v, &f.a, &f.b, Activation::Relu, 5).is_err());
}

#[test]
fn ffn_schedule_hidden_traffic() {
    let (p, c, alpha) = (16u64, 4u64, 4u64);
    let block = ffn(4, 4);
    let dims = TensorDims::new(1, 4, 4, 4);
    let lw = simulate_traffic(&build_schedule(&block, dims, LW).unwrap()).unwrap();
    let bf = simulate_traffic(&build_schedule(&block, dims, BF).unwrap()).unwrap();
    assert_eq!(lw.hidden_dram_bytes, 2 * 2 * p * alpha * c);
    assert_eq!(bf.dram_bytes(), lw.dram_bytes() - 2 * 2 * p * alpha * c);
    assert_eq!(bf.hidden_dram_bytes, 0);
}

#[test]
fn convfirst_fused_matches_layerwise() {
    let err = fused_vs_layerwise(&convfirst(8, 8, 3, 1), TensorDims::new(1, 8, 8, 8), 1, &ScheduleOptions::default());
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn mbconv_fused_matches_layerwise() {
    let err = fused_vs_layerwise(&mbconv(16, 16, 1), TensorDims::new(1, 8, 8, 16), 2, &ScheduleOptions::default());
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn mbconv_fusion_has_one_synchronization() {
    let s = build_schedule(&mbconv(16, 16, 1), TensorDims::new(1, 8, 8, 16), BF).unwrap();
    assert_eq!(s.synchronizations(), 1);
    assert_eq!(simulate_traffic(&s).unwrap().synchronizations, 1);
}

#[test]
fn zero_inputs_give_zero_outputs() {
    for block in [ffn(8, 2), convfirst(8, 8, 3, 1), convfirst(8, 16, 6, 2)] {
        let dims = TensorDims::new(1, 4, 4, block.in_channels);
        for scheme in [LW, BF] {
            let s = build_schedule(&block, dims, scheme).unwrap();
            let mut inputs = random_inputs::<f32>(&s, 0);
            for (name, t) in inputs.iter_mut() {
                if name == "x" || name.ends_with(".b") {
                    t.data.iter_mut().for_each(|v| *v = 0.0);
                }
            }
            assert_eq!(execute_numeric(&s, &inputs).unwrap().max_abs(), 0.0);
        }
    }
}

#[test]
fn dram_bytes_match_complexity_for_zoo_shapes() {
    let cases = [
        (convfirst(16, 16, 3, 1), TensorDims::new(1, 128, 128, 16)),
        (convfirst(16, 32, 6, 2), TensorDims::new(1, 128, 128, 16)),
        (convfirst(48, 48, 6, 1), TensorDims::new(1, 32, 32, 48)),
        (mbconv(48, 128, 2), TensorDims::new(1, 32, 32, 48)),
        (mbconv(128, 128, 1), TensorDims::new(1, 16, 16, 128)),
        (mbconv(192, 192, 1), TensorDims::new(2, 8, 8, 192)),
        (ffn(32, 4), TensorDims::new(3, 8, 8, 32)),
    ];
    for (block, dims) in cases {
        for scheme in [LW, BF] {
            let (traffic, model) = dram_bytes(&block, dims, scheme);
            assert_eq!(traffic, model, "{} {:?} {}", block.kind.name(), scheme, dims);
        }
    }
}

#[test]
fn unsupported_blocks_are_rejected() {
    let stem = BlockSpec::new(BlockKind::Stem { kernel: 3, activation: Activation::Relu }, 3, 16, 2);
    assert!(matches!(build_schedule(&stem, TensorDims::new(1, 8, 8, 3), BF), Err(Error::Unsupported(_))));
}

#[test]
fn scaled_convfirst_matches_fused_and_counts_syncs() {
    let block = convfirst(32, 32, 3, 1);
    let dims = TensorDims::new(1, 6, 6, 32);
    let opts = ScheduleOptions { chunk: Some(24), ..Default::default() };
    let fused = build_schedule_with(&block, dims, BF, &opts).unwrap();
    let inputs = random_inputs::<f32>(&fused, 9);
    let reference = execute_numeric(&fused, &inputs).unwrap();
    for processors in [1, 2, 4] {
        let scaled = build_scaled_schedule(&block, dims, processors, &opts).unwrap();
        let out = execute_numeric(&scaled, &inputs).unwrap();
        assert!(relative_error(&out, &reference).unwrap() <= 1e-4);
        let traffic = simulate_traffic(&scaled).unwrap();
        assert_eq!(traffic.synchronizations, 96 / 24);
        assert_eq!(traffic.dram_bytes(), simulate_traffic(&fused).unwrap().dram_bytes());
        assert_eq!(traffic.macs, simulate_traffic(&fused).unwrap().macs);
        assert_eq!(traffic.hidden_dram_bytes, 0);
    }
    assert!(build_scaled_schedule(&block, dims, 3, &opts).is_err());
}

#[test]
fn schedule_json_dump_round_trips() {
    let s = build_schedule(&convfirst(16, 32, 6, 2), TensorDims::new(1, 8, 8, 16), BF).unwrap();
    let text = s.to_json().unwrap();
    assert!(text.contains("\"op\": \"tiled_loop\""));
    assert_eq!(Schedule::from_json(&text).unwrap(), s);
}

#[test]
fn microbatch_worked_example() {
    let stage = waterline_core::model::StageSpec {
        block: BlockKind::MbConv { group_width: 8, expansion: 4, se_ratio: 0.25, activation: Activation::Silu },
        depth: 10,
        channels: 128,
        stride: 1,
    };
    let device = DeviceSpec::reference();
    assert_eq!(device.l2_bytes, 6 * 1024 * 1024);
    let weights = 2 * 10 * (2 * 4 * 128 * 128 + 72 * 4 * 128);
    assert_eq!(microbatch_capacity_bytes(128, 4, 16, 16, 2, 0, 10), weights);
    let n = (device.l2_bytes - weights) / (2 * 2 * 16 * 16 * 128);
    assert_eq!(n, 22);
    assert_eq!(microbatch_plan(&stage, 16, 16, &device, 256).unwrap(), MicrobatchPlan::Plan { micro_batch: n, depth: 10 });
    let huge = DeviceSpec { l2_bytes: u64::MAX / 4, ..device.clone() };
    assert_eq!(microbatch_plan(&stage, 16, 16, &huge, 64).unwrap(), MicrobatchPlan::Plan { micro_batch: 64, depth: 10 });
    let convfirst = waterline_core::model::StageSpec { block: convfirst(8, 8, 3, 1).kind, ..stage };
    assert!(matches!(microbatch_plan(&convfirst, 16, 16, &device, 1), Err(Error::Unsupported(_))));
}

fn layerwise_ops_minus_macs(block: &BlockSpec, dims: TensorDims) -> (u64, u64) {
    let costs = block_costs(block, dims, LW, &DeviceSpec::reference()).unwrap();
    let ops: u64 = costs.iter().map(|c| c.ops).sum();
    let macs = simulate_traffic(&build_schedule(block, dims, BF).unwrap()).unwrap().macs;
    (ops - 2 * macs, macs)
}

#[test]
fn macs_match_complexity_up_to_bias_terms() {
    let (c, k, t) = (16u64, 32u64, 6u64);
    let (bias, _) = layerwise_ops_minus_macs(&convfirst(16, 32, 6, 2), TensorDims::new(2, 8, 8, 16));
    assert_eq!(bias, c + t * c + k);
    let h = 4 * 16;
    let (bias, _) = layerwise_ops_minus_macs(&mbconv(16, 24, 2), TensorDims::new(1, 8, 8, 16));
    assert_eq!(bias, h + h + 24);
}

fn block_strategy() -> impl Strategy<Value = (BlockSpec, TensorDims)> {
    let kind = prop_oneof![
        (1u32..=4).prop_map(|e| BlockKind::Ffn { expansion: e, activation: Activation::Relu }),
        (1u32..=4).prop_map(|e| BlockKind::ConvFirst { group_width: 8, expansion: e, activation: Activation::Relu }),
        (1u32..=2).prop_map(|e| BlockKind::MbConv {
            group_width: 8,
            expansion: 2 * e,
            se_ratio: 0.25,
            activation: Activation::Silu
        }),
    ];
    (kind, 1u32..=2, 1u32..=2, 1u32..=2, 1u32..=3, 1u32..=2).prop_map(|(kind, ci, ko, s, hw, n)| {
        let stride = if matches!(kind, BlockKind::Ffn { .. }) { 1 } else { s };
        let c = 8 * ci;
        let k = if matches!(kind, BlockKind::Ffn { .. }) { c } else { 8 * ko };
        let block = BlockSpec::new(kind, c, k, stride);
        (block, TensorDims::new(n, 2 * hw, 2 * hw, c))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fusion_is_numerically_sound((block, dims) in block_strategy(), seed in any::<u64>()) {
        let err = fused_vs_layerwise(&block, dims, seed, &ScheduleOptions::default());
        prop_assert!(err <= 1e-4, "{} {} err {}", block.kind.name(), dims, err);
    }

    #[test]
    fn traffic_agrees_with_complexity((block, dims) in block_strategy()) {
        for scheme in [LW, BF] {
            let (traffic, model) = dram_bytes(&block, dims, scheme);
            prop_assert_eq!(traffic, model);
        }
        let fused = simulate_traffic(&build_schedule(&block, dims, BF).unwrap()).unwrap();
        prop_assert_eq!(fused.hidden_dram_bytes, 0);
    }

    #[test]
    fn ffn_chunk_invariance(seed in any::<u64>(), c in 1usize..8, alpha in 1usize..5, p in 1usize..6) {
        let f = ffn_case(seed, p, c, alpha);
        let h = alpha * c;
        let reference = ffn_layerwise(&f.x, &f.u, &f.v, &f.a, &f.b, Activation::Relu).unwrap();
        for r in (1..=h).filter(|r| h % r == 0) {
            let z = ffn_fused(&f.x, &f.u, &f.v, &f.a, &f.b, Activation::Relu, r).unwrap();
            prop_assert!(z.max_abs_diff(&reference) <= 1e-5);
        }
    }

    #[test]
    fn microbatch_plan_is_tight(c in 1u32..64, h in 1u32..32, depth in 1u32..12, l2 in 1u64..20_000_000, batch in 1u32..512) {
        let stage = waterline_core::model::StageSpec {
            block: BlockKind::MbConv { group_width: 8, expansion: 4, se_ratio: 0.25, activation: Activation::Silu },
            depth,
            channels: 8 * c,
            stride: 1,
        };
        let device = DeviceSpec { l2_bytes: l2, ..DeviceSpec::reference() };
        let cap = |n: u64, d: u32| microbatch_capacity_bytes(8 * c as u64, 4, h as u64, h as u64, 2, n, d as u64);
        match microbatch_plan(&stage, h, h, &device, batch).unwrap() {
            MicrobatchPlan::Plan { micro_batch, depth: d } => {
                prop_assert!(micro_batch >= 1 && micro_batch <= batch as u64 && d <= depth);
                prop_assert!(cap(micro_batch, d) <= l2);
                prop_assert!(micro_batch == batch as u64 || cap(micro_batch + 1, d) > l2);
                prop_assert!(d == depth || cap(1, d + 1) > l2);
            }
            MicrobatchPlan::Infeasible { needed, available } => {
                prop_assert!(needed > available);
                prop_assert_eq!(needed, cap(1, 1));
            }
        }
    }
}
