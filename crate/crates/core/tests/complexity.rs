use proptest::prelude::*;
use waterline_core::complexity::*;
use waterline_core::zoo;
use waterline_core::*;

fn dev() -> DeviceSpec {
    DeviceSpec::reference()
}

fn layer_ops(block: &BlockSpec, hw: u32) -> Vec<(String, f64)> {
    block_costs(block, TensorDims::new(1, hw, hw, block.in_channels), ExecutionScheme::LayerWise, &dev())
        .unwrap()
        .into_iter()
        .map(|c| (c.label, c.ops as f64 / 1e6))
        .collect()
}

fn close(got: f64, want: f64, rel: f64) -> bool {
    (got - want).abs() <= rel * want.abs()
}

/// Printed values carry two decimals, so allow half a unit in the last place.
fn printed(got: f64, want: f64) -> bool {
    (got - want).abs() <= (0.005 * want).max(0.005)
}

#[test]
fn appendix_layer_examples() {
    let mb = BlockSpec::new(
        BlockKind::MbConv { group_width: 8, expansion: 4, se_ratio: 0.25, activation: Activation::Silu },
        128,
        128,
        1,
    );
    let got = layer_ops(&mb, 16);
    let want = [("exp", 33.55), ("conv", 18.87), ("se", 0.07), ("prj", 33.55)];
    for ((label, ops), (l, w)) in got.iter().zip(want) {
        assert_eq!(label, l);
        assert!(printed(*ops, w), "{label}: {ops} vs {w}");
    }
    let cf = BlockSpec::new(BlockKind::ConvFirst { group_width: 8, expansion: 6, activation: Activation::Relu }, 48, 72, 2);
    let got = layer_ops(&cf, 64);
    for ((label, ops), (l, w)) in got.iter().zip([("conv", 28.31), ("exp", 56.62), ("prj", 42.47)]) {
        assert_eq!(label, l);
        assert!(printed(*ops, w), "{label}: {ops} vs {w}");
    }
}

#[test]
fn conv_examples() {
    let stem = ConvSpec::dense(3, 16, 3).with_stride(2);
    assert_eq!(conv_ops(&stem, TensorDims::new(1, 256, 256, 3)).unwrap(), 14_155_776);
    let grouped = ConvSpec::grouped(16, 8, 3);
    assert_eq!(conv_ops(&grouped, TensorDims::new(1, 128, 128, 16)).unwrap(), 37_748_736);
    let unit = ConvSpec::pointwise(1, 1).with_bias(true);
    assert_eq!(conv_ops(&unit, TensorDims::new(1, 1, 1, 1)).unwrap(), 3);
    assert_eq!(conv_bytes_layerwise(&unit, TensorDims::new(1, 1, 1, 1), &dev()).unwrap(), 8);
}

#[test]
fn element_enumeration() {
    let d = TensorDims::new(1, 32, 32, 64);
    let depthwise = ConvSpec::grouped(64, 1, 3);
    let want = 64 * 32 * 32 + 64 * 32 * 32 + 64 * 9;
    assert_eq!(conv_elements(&depthwise, d).unwrap(), want);
    assert_eq!(want, 131_648);
    let dense = ConvSpec::dense(64, 64, 3);
    assert_eq!(conv_elements(&dense, d).unwrap(), 131_072 + 36_864);
}

#[test]
fn intensity_approximations() {
    assert_eq!(intensity_depthwise(3, 3, 64, 64, 2), 4.5);
    assert!((intensity_pointwise(64, 256, 2) - 51.2).abs() < 1e-12);
    assert_eq!(intensity_large_nhw(&ConvSpec::dense(64, 64, 3), 2), 288.0);
    let big = TensorDims::new(128, 64, 64, 64);
    let exact = op_intensity(&ConvSpec::pointwise(64, 256), big, &dev()).unwrap();
    assert!(close(exact, 51.2, 0.02), "{exact}");
    let exact = op_intensity(&ConvSpec::dense(64, 64, 3), big, &dev()).unwrap();
    assert!(close(exact, 288.0, 0.02), "{exact}");
    let tiny = TensorDims::new(1, 2, 2, 512);
    let exact = op_intensity(&ConvSpec::pointwise(512, 512), tiny, &dev()).unwrap();
    assert!(close(exact, intensity_small_nhw(tiny, 2), 0.02), "{exact}");
}

#[test]
fn errors() {
    let huge = ConvSpec::dense(u32::MAX, u32::MAX, 3);
    let d = TensorDims::new(u32::MAX, u32::MAX, u32::MAX, u32::MAX);
    assert!(matches!(conv_ops(&huge, d), Err(Error::Overflow(_))));
    assert!(matches!(conv_ops(&ConvSpec::dense(8, 8, 3), TensorDims::new(1, 4, 4, 4)), Err(Error::Shape(_))));
}

#[test]
fn ffn_fusion_saves_one_hidden_element() {
    let ffn = BlockSpec::new(BlockKind::Ffn { expansion: 1, activation: Activation::Identity }, 1, 1, 1);
    let d = TensorDims::new(1, 1, 1, 1);
    let lw: u64 = block_costs(&ffn, d, ExecutionScheme::LayerWise, &dev()).unwrap().iter().map(|c| c.bytes).sum();
    let bf = block_costs(&ffn, d, ExecutionScheme::BlockFusion, &dev()).unwrap();
    assert_eq!(bf.len(), 1);
    assert_eq!(bf[0].bytes, lw - 2 * 2);
}

#[test]
fn stem_and_head_fall_back() {
    let stem = BlockSpec::new(BlockKind::Stem { kernel: 3, activation: Activation::Relu }, 3, 16, 2);
    let d = TensorDims::new(1, 256, 256, 3);
    let bf = block_costs(&stem, d, ExecutionScheme::BlockFusion, &dev()).unwrap();
    let lw = block_costs(&stem, d, ExecutionScheme::LayerWise, &dev()).unwrap();
    assert!(bf[0].fallback);
    assert_eq!(bf[0].bytes, lw.iter().map(|c| c.bytes).sum::<u64>());
}

#[test]
fn network_totals() {
    let pico = zoo::build(ZooId::ConvFirstNetPico);
    assert!(close(network_macs(&pico).unwrap(), 0.86e9, 0.02));
    assert!(close(count_params(&pico) as f64, 5.91e6, 0.03));
    let small = zoo::build(ZooId::ConvFirstNetSmall);
    assert!(close(network_macs(&small).unwrap(), 5.493e9, 0.02));
    let tiny = zoo::build(ZooId::ConvFirstNetTiny);
    assert!(close(count_params(&tiny) as f64, 17.24e6, 0.03));
    let mut stem_only = pico.clone();
    stem_only.stages.clear();
    stem_only.head = None;
    assert_eq!(network_macs(&stem_only).unwrap(), (14_155_776.0 + 16.0) / 2.0);
}

#[test]
fn unit_conv_params() {
    let net = NetworkSpec {
        name: "unit".into(),
        input_resolution: model::Resolution { height: 1, width: 1 },
        input_channels: 1,
        stem: None,
        stages: vec![model::StageSpec {
            block: BlockKind::PlainConv { kernel: 1, group_width: None, has_bias: true, activation: Activation::Identity },
            depth: 1,
            channels: 1,
            stride: 1,
        }],
        head: None,
    };
    assert_eq!(count_params(&net), 2);
}

fn ffn_stack_share(alpha: u32, c: u32, hw: u32, depth: u32) -> (u64, u64) {
    let block = BlockSpec::new(BlockKind::Ffn { expansion: alpha, activation: Activation::Relu }, c, c, 1);
    let net = zoo::build_stack(&block, depth, TensorDims::new(1, hw, hw, c));
    let d = dev();
    let (mut hidden, mut total) = (0, 0);
    for placed in net.blocks() {
        for cost in block_costs(&placed.block, placed.input_for_batch(2), ExecutionScheme::LayerWise, &d).unwrap() {
            hidden += cost.hidden_elements;
            total += cost.activation_elements();
        }
    }
    (hidden, total)
}

proptest! {
    #[test]
    fn ops_are_linear_in_batch_and_area(c in 1u32..8, k in 1u32..8, rs in 1u32..4, n in 1u32..5, hw in 1u32..20, bias in any::<bool>()) {
        let spec = ConvSpec::dense(8 * c, 8 * k, rs).with_bias(bias);
        let base = conv_ops(&spec, TensorDims::new(1, hw, hw, 8 * c)).unwrap();
        let scaled = conv_ops(&spec, TensorDims::new(n, hw, hw, 8 * c)).unwrap();
        let b = spec.bias_elements();
        prop_assert_eq!(scaled - b, n as u64 * (base - b));
        let wide = conv_ops(&spec, TensorDims::new(1, hw, 2 * hw, 8 * c)).unwrap();
        prop_assert_eq!(wide - b, 2 * (base - b));
    }

    #[test]
    fn degenerate_ratios(c in 1u32..9) {
        let c = 16 * c;
        let big = TensorDims::new(64, 128, 128, c);
        let d = dev();
        let dense = op_intensity(&ConvSpec::dense(c, c, 3), big, &d).unwrap();
        let pw = op_intensity(&ConvSpec::pointwise(c, c), big, &d).unwrap();
        let dw = op_intensity(&ConvSpec::grouped(c, 1, 3), big, &d).unwrap();
        prop_assert!(close(dense / pw, 9.0, 0.05));
        prop_assert!(close(dense / dw, c as f64, 0.05));
    }

    #[test]
    fn grouped_intensity_ignores_channel_count(c in 32u32..=512) {
        let c = c / 8 * 8;
        let d = dev();
        let at = |ch: u32| op_intensity(&ConvSpec::grouped(ch, 8, 3), TensorDims::new(64, 64, 64, ch), &d).unwrap();
        prop_assert!(close(at(c), at(32), 0.03));
    }

    #[test]
    fn fusion_saves_bytes(kind in 0usize..3, ci in 1u32..5, e in 1u32..5, stride in 1u32..3, hw in 1u32..9) {
        let c = 8 * ci;
        let (block, stride) = match kind {
            0 => (BlockKind::Ffn { expansion: e, activation: Activation::Relu }, 1),
            1 => (BlockKind::ConvFirst { group_width: 8, expansion: e, activation: Activation::Relu }, stride),
            _ => (BlockKind::MbConv { group_width: 8, expansion: e, se_ratio: 0.25, activation: Activation::Silu }, stride),
        };
        let k = if stride == 2 { 2 * c } else { c };
        let block = BlockSpec::new(block, c, k, stride);
        let d = TensorDims::new(1, 2 * hw, 2 * hw, c);
        let lw: u64 = block_costs(&block, d, ExecutionScheme::LayerWise, &dev()).unwrap().iter().map(|c| c.bytes).sum();
        let bf: u64 = block_costs(&block, d, ExecutionScheme::BlockFusion, &dev()).unwrap().iter().map(|c| c.bytes).sum();
        prop_assert!(bf < lw);
    }

    #[test]
    fn ffn_hidden_share(alpha in 1u32..8, c in 1u32..16, hw in 1u32..8, depth in 1u32..4) {
        let (hidden, total) = ffn_stack_share(alpha, c, hw, depth);
        // hidden / total == alpha / (alpha + 1), compared without division.
        prop_assert_eq!(hidden * (alpha as u64 + 1), total * alpha as u64);
    }
}
