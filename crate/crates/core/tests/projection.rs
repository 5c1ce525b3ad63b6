use approx::assert_relative_eq;
use proptest::prelude::*;
use waterline_core::projection::*;
use waterline_core::{complexity, zoo, DeviceSpec, ZooId};

fn project(id: ZooId, table: &EfficiencyTable) -> Projection {
    project_network(&zoo::build(id), table, &DeviceSpec::reference(), 128).unwrap()
}

#[test]
fn network_latency_and_fps() {
    let want = [
        (ZooId::ConvFirstNetPico, 6.078, 21_060.03),
        (ZooId::ConvFirstNetNano, 13.549, 9_446.95),
        (ZooId::ConvFirstNetTiny, 24.101, 5_311.04),
        (ZooId::ConvFirstNetSmall, 33.238, 3_851.04),
    ];
    let table = default_estimates();
    for (id, ms, fps) in want {
        let p = project(id, &table);
        assert_relative_eq!(p.totals.network_latency * 1e3, ms, max_relative = 0.01);
        assert_relative_eq!(p.totals.fps, fps, max_relative = 0.01);
    }
}

#[test]
fn pico_rows_follow_the_printed_latencies() {
    let p = project(ZooId::ConvFirstNetPico, &default_estimates());
    let printed = [0.031, 0.419, 0.275, 0.298, 0.196, 0.317, 0.270, 3.108, 0.282, 0.800];
    let depths: Vec<u32> = p.rows.iter().map(|r| r.depth).collect();
    assert_eq!(depths, [1, 1, 1, 1, 1, 2, 1, 10, 1, 10]);
    for (row, ms) in p.rows.iter().zip(printed) {
        assert!((row.latency * 1e3 - ms).abs() <= (0.01 * ms).max(0.001), "{}: {} vs {ms}", row.label, row.latency * 1e3);
    }
    assert_relative_eq!(p.totals.rows_latency * 1e3, 5.996, max_relative = 0.01);
}

#[test]
fn uniform_full_speed_is_the_ideal_latency() {
    let p = project(ZooId::ConvFirstNetSmall, &default_estimates().uniform(1.0));
    let ideal = 2.0 * 128.0 * complexity::network_macs(&zoo::build(ZooId::ConvFirstNetSmall)).unwrap() / 76.7e12;
    assert_relative_eq!(p.totals.network_latency, ideal, max_relative = 1e-12);
    assert_relative_eq!(p.totals.aggregate_pct, 1.0, max_relative = 1e-12);
}

#[test]
fn provenance_is_reported() {
    let p = project(ZooId::ConvFirstNetTiny, &default_estimates());
    assert_eq!(p.rows[0].provenance, Provenance::Estimated);
    assert!(p.rows.iter().any(|r| r.provenance == Provenance::Measured));
    let stride2: Vec<_> = p.rows.iter().filter(|r| r.key.stride == 2 && r.key.kind != ProjectedKind::Stem).collect();
    assert!(stride2.iter().all(|r| r.provenance == Provenance::Estimated));
}

#[test]
fn json_round_trips() {
    let table = default_estimates();
    assert_eq!(EfficiencyTable::from_json(&table.to_json().unwrap()).unwrap(), table);
    let p = project(ZooId::ConvFirstNetNano, &table);
    let back: Projection = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
    assert_eq!(back, p);
}

#[test]
fn missing_keys_are_all_named() {
    let mut table = default_estimates();
    table.entries.retain(|e| e.key.kind != ProjectedKind::ConvFirst);
    match project_network(&zoo::build(ZooId::ConvFirstNetNano), &table, &DeviceSpec::reference(), 128) {
        Err(waterline_core::Error::Unresolved(keys)) => {
            assert!(keys.len() >= 3);
            assert!(keys.iter().all(|k| k.contains("ConvFirst")));
        }
        other => panic!("unexpected {other:?}"),
    }
}

proptest! {
    #[test]
    fn row_identity(id in 0usize..4, batch in 1u32..300) {
        let p = project_network(&zoo::build(ZooId::ALL[id]), &default_estimates(), &DeviceSpec::reference(), batch).unwrap();
        for r in &p.rows {
            let work = r.depth as f64 * batch as f64 * r.ops as f64;
            prop_assert!((r.latency * r.throughput - work).abs() <= 1e-9 * work);
        }
        let fps = p.totals.fps;
        prop_assert!((fps * p.totals.network_latency - batch as f64).abs() <= 1e-9 * batch as f64);
    }

    #[test]
    fn uniform_scaling_scales_fps(id in 0usize..4, pct in 0.05f64..0.5, k in 1.0f64..2.0) {
        let net = zoo::build(ZooId::ALL[id]);
        let d = DeviceSpec::reference();
        let base = default_estimates();
        let a = project_network(&net, &base.uniform(pct), &d, 128).unwrap();
        let b = project_network(&net, &base.uniform(pct * k), &d, 128).unwrap();
        prop_assert!((b.totals.fps - k * a.totals.fps).abs() <= 1e-9 * b.totals.fps);
    }
}
