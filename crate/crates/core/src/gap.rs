//! Ideal latency, computational efficiency and the efficiency gap.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DeviceSpec;
use crate::num::Real;

/// Whether a latency figure covers the whole batch or a single image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyScope {
    #[default]
    PerBatch,
    PerImage,
}

/// One measured model: its size, batch and wall-clock latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredSample {
    pub model: String,
    pub macs_per_image: f64,
    pub batch: u32,
    /// Seconds per batch.
    pub latency: f64,
    /// Top-1 accuracy in percent.
    pub accuracy: Option<f64>,
}

impl MeasuredSample {
    pub fn fps(&self) -> f64 {
        self.batch as f64 / self.latency
    }

    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.macs_per_image > 0.0 && self.macs_per_image.is_finite()) {
            out.push(format!("MACs must be positive, got {}", self.macs_per_image));
        }
        if self.batch == 0 {
            out.push("batch must be positive".into());
        }
        if !(self.latency > 0.0 && self.latency.is_finite()) {
            out.push(format!("latency must be positive, got {}", self.latency));
        }
        if let Some(a) = self.accuracy {
            if !(0.0..=100.0).contains(&a) {
                out.push(format!("accuracy {a} outside [0, 100]"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapPoint<S> {
    pub model: String,
    pub macs_per_image: f64,
    pub batch: u32,
    /// Seconds per batch at peak throughput.
    pub ideal_latency: S,
    pub actual_latency: S,
    /// `ideal_latency / actual_latency`
    pub efficiency: S,
    /// `−ln(efficiency)`, the horizontal shift on a log-latency axis.
    pub log_gap: S,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Efficiency<S> {
    /// Achieved throughput in OP/s.
    pub throughput: S,
    pub efficiency: S,
    /// Set when the sample claims more than peak throughput.
    pub exceeds_peak: bool,
}

/// `2·macs·batch / R`.
pub fn ideal_latency<S: Real>(macs: f64, batch: u32, device: &DeviceSpec) -> S {
    S::of_f64(2.0) * S::of_f64(macs) * S::of_u64(batch as u64) / S::of_f64(device.peak_throughput)
}

pub fn computational_efficiency<S: Real>(sample: &MeasuredSample, device: &DeviceSpec) -> Efficiency<S> {
    let ops = S::of_f64(2.0) * S::of_f64(sample.macs_per_image) * S::of_u64(sample.batch as u64);
    let throughput = ops / S::of_f64(sample.latency);
    let efficiency = throughput / S::of_f64(device.peak_throughput);
    Efficiency { throughput, efficiency, exceeds_peak: efficiency > S::one() }
}

pub fn gap_point<S: Real>(sample: &MeasuredSample, device: &DeviceSpec) -> GapPoint<S> {
    let ideal = ideal_latency::<S>(sample.macs_per_image, sample.batch, device);
    let actual = S::of_f64(sample.latency);
    let efficiency = ideal / actual;
    GapPoint {
        model: sample.model.clone(),
        macs_per_image: sample.macs_per_image,
        batch: sample.batch,
        ideal_latency: ideal,
        actual_latency: actual,
        efficiency,
        log_gap: actual.ln() - ideal.ln(),
        accuracy: sample.accuracy,
    }
}

/// Gap points of every sample, ordered by MACs (stable for ties).
pub fn gap_series<S: Real>(samples: &[MeasuredSample], device: &DeviceSpec) -> Result<Vec<GapPoint<S>>> {
    if samples.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut points: Vec<GapPoint<S>> = samples.iter().map(|s| gap_point(s, device)).collect();
    points.sort_by(|a, b| a.macs_per_image.total_cmp(&b.macs_per_image));
    Ok(points)
}

#[derive(Debug, Deserialize, Serialize)]
struct SampleRecord {
    model: String,
    macs_g: f64,
    batch: u32,
    latency_ms: f64,
    accuracy_pct: Option<f64>,
    #[serde(default)]
    latency_scope: Option<LatencyScope>,
}

pub const SAMPLE_HEADER: [&str; 5] = ["model", "macs_g", "batch", "latency_ms", "accuracy_pct"];

/// Read samples from CSV with header `model,macs_g,batch,latency_ms,accuracy_pct`
/// and an optional `latency_scope` column (`per_batch` or `per_image`).
///
/// Per-image latencies are multiplied by the batch size. Errors name the
/// 1-based line of the offending row.
pub fn read_samples<R: Read>(reader: R) -> Result<Vec<MeasuredSample>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Csv { row: 1, message: e.to_string() })?
        .clone();
    for required in SAMPLE_HEADER {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::Csv { row: 1, message: format!("missing column `{required}`") });
        }
    }
    let mut out = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Csv { row, message: e.to_string() })?;
        let rec: SampleRecord = record
            .deserialize(Some(&headers))
            .map_err(|e| Error::Csv { row, message: e.to_string() })?;
        let scale = match rec.latency_scope.unwrap_or_default() {
            LatencyScope::PerBatch => 1.0,
            LatencyScope::PerImage => rec.batch as f64,
        };
        let sample = MeasuredSample {
            model: rec.model,
            macs_per_image: rec.macs_g * 1e9,
            batch: rec.batch,
            latency: rec.latency_ms * scale * 1e-3,
            accuracy: rec.accuracy_pct,
        };
        let problems = sample.problems();
        if !problems.is_empty() {
            return Err(Error::Csv { row, message: problems.join("; ") });
        }
        out.push(sample);
    }
    Ok(out)
}

/// Write samples with per-batch latencies.
pub fn write_samples<W: Write>(writer: W, samples: &[MeasuredSample]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for s in samples {
        wtr.serialize(SampleRecord {
            model: s.model.clone(),
            macs_g: s.macs_per_image / 1e9,
            batch: s.batch,
            latency_ms: s.latency * 1e3,
            accuracy_pct: s.accuracy,
            latency_scope: Some(LatencyScope::PerBatch),
        })
        .map_err(|e| Error::Csv { row: 0, message: e.to_string() })?;
    }
    wtr.flush()?;
    Ok(())
}

/// The measured speed/accuracy comparison at batch 128 that ships with the crate.
pub const REFERENCE_SAMPLES_CSV: &str = include_str!("../data/convfirstnet_speed_accuracy.csv");

pub fn reference_samples() -> Vec<MeasuredSample> {
    read_samples(REFERENCE_SAMPLES_CSV.as_bytes()).expect("bundled sample table parses")
}
