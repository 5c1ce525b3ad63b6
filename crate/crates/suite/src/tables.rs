//! Values printed in the published per-layer op tables, network summary
//! table and speed/accuracy comparison.

/// One printed row: millions of operations per image for the
/// `conv`, `exp`, `prj` and squeeze-excitation layers (blank entries are
/// `None`), and the number of identical blocks.
pub struct OpRow {
    pub conv: f64,
    pub exp: Option<f64>,
    pub prj: Option<f64>,
    pub se: Option<f64>,
    pub depth: u32,
}

const fn stem(conv: f64) -> OpRow {
    OpRow { conv, exp: None, prj: None, se: None, depth: 1 }
}

const fn cf(conv: f64, exp: f64, prj: f64, depth: u32) -> OpRow {
    OpRow { conv, exp: Some(exp), prj: Some(prj), se: None, depth }
}

const fn mb(conv: f64, exp: f64, prj: f64, se: f64, depth: u32) -> OpRow {
    OpRow { conv, exp: Some(exp), prj: Some(prj), se: Some(se), depth }
}

pub const PICO_OPS: [OpRow; 10] = [
    stem(14.16),
    cf(37.75, 25.17, 25.17, 1),
    cf(37.75, 25.17, 25.17, 1),
    cf(18.87, 50.33, 50.33, 1),
    cf(18.87, 25.17, 18.87, 1),
    cf(7.08, 28.31, 28.31, 2),
    mb(28.31, 18.87, 12.58, 0.01, 1),
    mb(18.87, 33.55, 33.55, 0.07, 10),
    mb(18.87, 33.55, 8.39, 0.07, 1),
    mb(4.72, 8.39, 8.39, 0.07, 10),
];

pub const NANO_OPS: [OpRow; 10] = [
    stem(21.23),
    cf(56.62, 56.62, 56.62, 1),
    cf(56.62, 56.62, 56.62, 1),
    cf(28.31, 113.25, 113.25, 2),
    cf(28.31, 56.62, 37.75, 1),
    cf(9.44, 50.33, 50.33, 3),
    mb(37.75, 33.55, 20.97, 0.02, 1),
    mb(23.59, 52.43, 52.43, 0.10, 13),
    mb(23.59, 52.43, 13.11, 0.10, 1),
    mb(5.90, 13.11, 13.11, 0.10, 13),
];

pub const TINY_OPS: [OpRow; 10] = [
    stem(21.23),
    cf(56.62, 56.62, 56.62, 2),
    cf(56.62, 56.62, 56.62, 1),
    cf(28.31, 113.25, 113.25, 4),
    cf(28.31, 56.62, 42.47, 1),
    cf(10.62, 63.70, 63.70, 5),
    mb(42.47, 42.47, 28.31, 0.02, 1),
    mb(28.31, 75.50, 75.50, 0.15, 17),
    mb(28.31, 75.50, 18.87, 0.15, 1),
    mb(7.08, 18.87, 18.87, 0.15, 17),
];

pub const SMALL_OPS: [OpRow; 10] = [
    stem(28.31),
    cf(75.50, 100.66, 100.66, 2),
    cf(75.50, 100.66, 100.66, 1),
    cf(37.75, 201.33, 201.33, 4),
    cf(37.75, 100.66, 75.50, 1),
    cf(14.16, 113.25, 113.25, 5),
    mb(56.62, 75.50, 50.33, 0.04, 1),
    mb(37.75, 134.22, 134.22, 0.26, 17),
    mb(37.75, 134.22, 33.55, 0.26, 1),
    mb(9.44, 33.55, 33.55, 0.26, 17),
];

/// Network summary: parameters (M), MACs (B), latency (ms) and FPS at batch 128.
pub const NETWORK_SUMMARY: [(&str, f64, f64, f64, f64); 4] = [
    ("convfirstnet-pico", 5.91, 0.86, 6.078, 21_060.03),
    ("convfirstnet-nano", 10.17, 1.812, 13.549, 9_446.95),
    ("convfirstnet-tiny", 17.24, 3.227, 24.101, 5_311.04),
    ("convfirstnet-small", 28.55, 5.493, 33.238, 3_851.04),
];

/// Model, percent of peak and images per second from the speed/accuracy comparison.
pub const SPEED_ACCURACY: [(&str, f64, f64); 15] = [
    ("ConvNeXt Femto (288)", 18.6, 5474.8),
    ("EfficientNet B1", 5.2, 2566.8),
    ("ConvFirst Pico", 47.2, 21059.6),
    ("EfficientNet B2", 5.7, 1935.9),
    ("ConvNeXt Pico (288)", 23.9, 4033.3),
    ("ConvNeXt Nano (288)", 29.0, 2742.5),
    ("EfficientNet B3", 6.2, 1190.4),
    ("ConvFirst Nano", 44.6, 9447.2),
    ("ConvNeXt Tiny", 30.6, 1587.8),
    ("ConvFirst Tiny", 44.7, 5311.0),
    ("EfficientNet B4", 7.4, 628.3),
    ("ConvFirst Small", 55.2, 3851.0),
    ("EfficientNet B5", 8.3, 332.4),
    ("ConvNeXt Small (288)", 34.7, 925.1),
    ("EfficientNetv2 S", 19.3, 876.8),
];
