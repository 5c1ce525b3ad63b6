use approx::assert_relative_eq;
use proptest::prelude::*;
use waterline_core::perf::*;
use waterline_core::{DeviceSpec, Error, KernelWorkload, TensorDims};

fn work(n: u64, b: u64) -> KernelWorkload {
    KernelWorkload::new("k", n, b, TensorDims::new(1, 1, 1, 1))
}

fn device() -> DeviceSpec {
    DeviceSpec { name: "test".into(), peak_throughput: 76.7e12, dram_bandwidth: 480e9, bytes_per_element: 2, l2_bytes: 1 << 22 }
}

/// Two kernels with equal ops: one at twice the op:byte ratio, one at half.
fn mixed_pair(d: &DeviceSpec) -> Vec<KernelWorkload> {
    let n = 1_000_000_000_000u64;
    let ob = d.op_byte();
    vec![work(n, (n as f64 / (2.0 * ob)) as u64), work(n, (2.0 * n as f64 / ob) as u64)]
}

#[test]
fn pure_copy_is_memory_bound() {
    let v = attainable_latency::<f64>(&work(0, 1_000_000_000), &device()).unwrap();
    assert_eq!(v.bound, Bound::Memory);
    assert_relative_eq!(v.latency, 1e9 / 480e9, max_relative = 1e-12);
}

#[test]
fn zero_work_is_rejected() {
    assert!(matches!(attainable_latency::<f64>(&work(0, 0), &device()), Err(Error::ZeroWork(_))));
    assert!(matches!(waterline::<f64>(&[], &device()), Err(Error::EmptySequence)));
}

#[test]
fn ridge_point_is_compute_bound_and_continuous() {
    let d = DeviceSpec { peak_throughput: 100.0, dram_bandwidth: 1.0, ..device() };
    let v = attainable_latency::<f64>(&work(1000, 10), &d).unwrap();
    assert_eq!(v.bound, Bound::Compute);
    assert_eq!(v.latency, 1000.0 / 100.0);
    assert_eq!(v.latency, 10.0 / 1.0);
}

#[test]
fn mixed_pair_reaches_two_thirds() {
    let d = device();
    let seq = mixed_pair(&d);
    let w = waterline::<f64>(&seq, &d).unwrap();
    // Oracle: 2n / (R (n/R + 2n/R)).
    assert_relative_eq!(w.max_efficiency, 2.0 / 3.0, max_relative = 1e-9);
    let roof = roofline_efficiency::<f64>(&seq, &d).unwrap();
    assert!(roof >= w.max_efficiency);
}

#[test]
fn both_compute_bound_is_full_efficiency() {
    let d = device();
    let seq = [work(1 << 40, 1 << 20), work(1 << 38, 1 << 10)];
    assert_eq!(waterline::<f64>(&seq, &d).unwrap().max_efficiency, 1.0);
    assert_eq!(roofline_efficiency::<f64>(&seq, &d).unwrap(), 1.0);
}

#[test]
fn mediant_examples() {
    assert_eq!(mediant_intensity::<f64>(&[work(4, 1), work(1, 4)]).unwrap(), 1.0);
    assert_eq!(mediant_intensity::<f64>(&[work(6, 2), work(6, 2), work(6, 2)]).unwrap(), 3.0);
}

#[test]
fn amdahl_direct_substitution() {
    // One memory-bound kernel using half the total time on memory and a
    // tenth on compute, plus a compute-bound remainder.
    let d = DeviceSpec { peak_throughput: 10.0, dram_bandwidth: 1.0, ..device() };
    let seq = [work(10, 5), work(40, 1)];
    let total = 5.0 + 4.0;
    let want = 1.0 / (1.0 - 5.0 / total + 1.0 / total);
    assert_relative_eq!(amdahl_roofline_speedup::<f64>(&seq, 0, &d).unwrap(), want, max_relative = 1e-12);
    // f_B = 5/10, f_R = 1/10.
    let seq = [work(10, 5), work(40, 5)];
    assert_relative_eq!(amdahl_roofline_speedup::<f64>(&seq, 0, &d).unwrap(), 1.6667, max_relative = 1e-4);
}

#[test]
fn amdahl_rejects_compute_bound_kernels() {
    let d = device();
    let seq = mixed_pair(&d);
    assert!(matches!(amdahl_roofline_speedup::<f64>(&seq, 0, &d), Err(Error::ComputeBound { index: 0, .. })));
    assert!(matches!(amdahl_roofline_speedup::<f64>(&seq, 5, &d), Err(Error::IndexOutOfRange(5))));
}

#[test]
fn sweep_endpoints() {
    let d = device();
    let seq = mixed_pair(&d);
    let curve = opbyte_sweep::<f64>(&seq, &d, 1e-6, 1000.0, 25).unwrap();
    assert_eq!(curve.len(), 25);
    assert_relative_eq!(curve[0].waterline, 1.0, max_relative = 1e-6);
    assert_relative_eq!(curve[0].roofline, 1.0, max_relative = 1e-6);
    assert_eq!(curve.last().unwrap().op_byte, 1000.0);
    assert!(opbyte_sweep::<f64>(&seq, &d, 10.0, 1.0, 5).is_err());
    assert!(opbyte_sweep::<f64>(&seq, &d, 1.0, 10.0, 1).is_err());
}

#[test]
fn single_precision_alias_agrees() {
    let d = device();
    let seq = mixed_pair(&d);
    let w32 = waterline::<f32>(&seq, &d).unwrap();
    let w64 = waterline::<f64>(&seq, &d).unwrap();
    assert_relative_eq!(w32.max_efficiency as f64, w64.max_efficiency, max_relative = 1e-5);
}

fn sequence() -> impl Strategy<Value = Vec<KernelWorkload>> {
    prop::collection::vec((0u64..1 << 40, 1u64..1 << 34).prop_map(|(n, b)| work(n, b)), 1..12)
}

/// Waterline of `seq` with kernel `j` made exactly ridge-bound.
fn recompute_oracle(seq: &[KernelWorkload], j: usize, d: &DeviceSpec) -> f64 {
    let before: f64 = seq.iter().map(|w| (w.ops as f64 / d.peak_throughput).max(w.bytes as f64 / d.dram_bandwidth)).sum();
    let after: f64 = seq
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let bytes = if i == j { w.ops as f64 / d.op_byte() } else { w.bytes as f64 };
            (w.ops as f64 / d.peak_throughput).max(bytes / d.dram_bandwidth)
        })
        .sum();
    before / after
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn roofline_dominates_waterline(seq in sequence(), ob in 1.0f64..2000.0) {
        let d = device().with_op_byte(ob);
        let w = waterline::<f64>(&seq, &d).unwrap();
        let r = roofline_efficiency::<f64>(&seq, &d).unwrap();
        prop_assert!(w.max_efficiency > 0.0 && w.max_efficiency <= 1.0 + 1e-12);
        prop_assert!(r >= w.max_efficiency * (1.0 - 1e-12));
        let v = &w.verdicts;
        if v.iter().all(|k| k.bound == Bound::Memory) || v.iter().all(|k| k.bound == Bound::Compute) {
            prop_assert!((r - w.max_efficiency).abs() <= 1e-9 * r);
        }
    }

    #[test]
    fn mediant_is_between_extremes(seq in sequence()) {
        let m = mediant_intensity::<f64>(&seq).unwrap();
        let i: Vec<f64> = seq.iter().map(|w| w.ops as f64 / w.bytes as f64).collect();
        let lo = i.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = i.iter().cloned().fold(0.0, f64::max);
        prop_assert!(m >= lo * (1.0 - 1e-12) && m <= hi * (1.0 + 1e-12));
    }

    #[test]
    fn amdahl_matches_recompute(seq in sequence(), pick in any::<prop::sample::Index>()) {
        let d = device();
        let w = waterline::<f64>(&seq, &d).unwrap();
        let memory: Vec<usize> = (0..seq.len()).filter(|&i| w.verdicts[i].bound == Bound::Memory).collect();
        prop_assume!(!memory.is_empty());
        let j = memory[pick.index(memory.len())];
        let s = amdahl_roofline_speedup::<f64>(&seq, j, &d).unwrap();
        prop_assert!((s - recompute_oracle(&seq, j, &d)).abs() <= 1e-9 * s);
    }

    #[test]
    fn scaling_preserves_efficiency(seq in prop::collection::vec((0u64..1 << 30, 1u64..1 << 30), 1..8), k in 1u64..1000) {
        let d = device();
        let a: Vec<_> = seq.iter().map(|&(n, b)| work(n, b)).collect();
        let b: Vec<_> = seq.iter().map(|&(n, b)| work(n * k, b * k)).collect();
        let (wa, wb) = (waterline::<f64>(&a, &d).unwrap(), waterline::<f64>(&b, &d).unwrap());
        prop_assert!((wa.max_efficiency - wb.max_efficiency).abs() <= 1e-9);
        for (x, y) in wa.verdicts.iter().zip(&wb.verdicts) {
            prop_assert_eq!(x.bound, y.bound);
        }
    }

    #[test]
    fn latency_is_monotone_in_rates(seq in sequence(), f in 1.0f64..10.0) {
        let d = device();
        let faster_mem = DeviceSpec { dram_bandwidth: d.dram_bandwidth * f, ..d.clone() };
        let faster_alu = DeviceSpec { peak_throughput: d.peak_throughput * f, ..d.clone() };
        let t = waterline::<f64>(&seq, &d).unwrap().total_latency;
        prop_assert!(waterline::<f64>(&seq, &faster_mem).unwrap().total_latency <= t);
        prop_assert!(waterline::<f64>(&seq, &faster_alu).unwrap().total_latency <= t);
    }

    #[test]
    fn sweep_is_monotone(seq in sequence()) {
        let curve = opbyte_sweep::<f64>(&seq, &device(), 1.0, 1000.0, 16).unwrap();
        for pair in curve.windows(2) {
            prop_assert!(pair[1].waterline <= pair[0].waterline * (1.0 + 1e-12));
            prop_assert!(pair[1].roofline <= pair[0].roofline * (1.0 + 1e-12));
            prop_assert!(pair[0].roofline >= pair[0].waterline * (1.0 - 1e-12));
        }
    }
}
