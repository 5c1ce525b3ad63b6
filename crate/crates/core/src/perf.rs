//! Roofline and waterline models over kernel sequences.
//!
//! A kernel with `n` operations and `b` DRAM bytes on a processor with peak
//! throughput `R` and bandwidth `B` needs at least
//! `t_min = n / min(R, B·n/b) = max(n/R, b/B)` seconds. The waterline of a
//! sequence sums these per-kernel bounds; the roofline applied to the whole
//! sequence uses the mediant intensity `Σn / Σb` instead, which can only
//! overestimate the attainable efficiency.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DeviceSpec, KernelWorkload};
use crate::num::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    /// Intensity at or above the device op:byte ratio.
    Compute,
    Memory,
}

impl Bound {
    pub fn name(self) -> &'static str {
        match self {
            Bound::Compute => "compute",
            Bound::Memory => "memory",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelVerdict<S> {
    pub label: String,
    pub ops: u64,
    pub bytes: u64,
    /// OP/byte; infinite for a kernel with no DRAM traffic.
    pub intensity: S,
    pub bound: Bound,
    /// Minimum attainable latency in seconds.
    pub latency: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceVerdict<S> {
    pub verdicts: Vec<KernelVerdict<S>>,
    /// Sum of per-kernel minimum latencies, seconds.
    pub total_latency: S,
    pub total_ops: S,
    /// `(total_ops / total_latency) / R`.
    pub max_efficiency: S,
    pub mediant_intensity: S,
}

/// One sample of an op:byte sweep. Peak throughput is held fixed and the
/// bandwidth varies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint<S> {
    pub op_byte: S,
    pub waterline: S,
    pub roofline: S,
}

fn rates<S: Real>(device: &DeviceSpec) -> (S, S) {
    (S::of_f64(device.peak_throughput), S::of_f64(device.dram_bandwidth))
}

pub fn attainable_latency<S: Real>(w: &KernelWorkload, device: &DeviceSpec) -> Result<KernelVerdict<S>> {
    if w.ops == 0 && w.bytes == 0 {
        return Err(Error::ZeroWork(w.label.clone()));
    }
    let (peak, bandwidth) = rates::<S>(device);
    let n = S::of_u64(w.ops);
    let b = S::of_u64(w.bytes);
    let compute_time = n / peak;
    let memory_time = b / bandwidth;
    // Comparing times rather than intensities keeps the ridge tie exact.
    let (bound, latency) = if compute_time >= memory_time {
        (Bound::Compute, compute_time)
    } else {
        (Bound::Memory, memory_time)
    };
    let intensity = if w.bytes == 0 { S::infinity() } else { n / b };
    Ok(KernelVerdict { label: w.label.clone(), ops: w.ops, bytes: w.bytes, intensity, bound, latency })
}

pub fn waterline<S: Real>(seq: &[KernelWorkload], device: &DeviceSpec) -> Result<SequenceVerdict<S>> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let verdicts = seq
        .iter()
        .map(|w| attainable_latency::<S>(w, device))
        .collect::<Result<Vec<_>>>()?;
    let total_latency: S = verdicts.iter().map(|v| v.latency).sum();
    let total_ops: S = seq.iter().map(|w| S::of_u64(w.ops)).sum();
    let peak = S::of_f64(device.peak_throughput);
    let max_efficiency = total_ops / total_latency / peak;
    let mediant_intensity = mediant_intensity(seq)?;
    Ok(SequenceVerdict { verdicts, total_latency, total_ops, max_efficiency, mediant_intensity })
}

/// `Σn / Σb`.
pub fn mediant_intensity<S: Real>(seq: &[KernelWorkload]) -> Result<S> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let ops: S = seq.iter().map(|w| S::of_u64(w.ops)).sum();
    let bytes: S = seq.iter().map(|w| S::of_u64(w.bytes)).sum();
    if bytes == S::zero() {
        return Err(Error::ZeroWork("sequence moves no bytes".into()));
    }
    Ok(ops / bytes)
}

/// Efficiency bound from applying the roofline to the whole sequence.
pub fn roofline_efficiency<S: Real>(seq: &[KernelWorkload], device: &DeviceSpec) -> Result<S> {
    let mediant = mediant_intensity::<S>(seq)?;
    Ok((mediant / S::of_f64(device.op_byte())).min(S::one()))
}

/// Waterline and roofline efficiency at `samples` op:byte ratios spaced
/// geometrically over `[min_op_byte, max_op_byte]`.
pub fn opbyte_sweep<S: Real>(
    seq: &[KernelWorkload],
    device: &DeviceSpec,
    min_op_byte: f64,
    max_op_byte: f64,
    samples: usize,
) -> Result<Vec<SweepPoint<S>>> {
    if !(min_op_byte > 0.0 && max_op_byte >= min_op_byte && max_op_byte.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "op:byte range [{min_op_byte}, {max_op_byte}] must be positive and ordered"
        )));
    }
    if samples < 2 {
        return Err(Error::InvalidArgument("sweep needs at least 2 samples".into()));
    }
    let ratio = (max_op_byte / min_op_byte).ln();
    (0..samples)
        .map(|i| {
            let op_byte = if i + 1 == samples {
                max_op_byte
            } else {
                min_op_byte * (ratio * i as f64 / (samples - 1) as f64).exp()
            };
            sweep_point(seq, device, op_byte)
        })
        .collect()
}

/// Waterline and roofline efficiency at a single op:byte ratio.
pub fn sweep_point<S: Real>(seq: &[KernelWorkload], device: &DeviceSpec, op_byte: f64) -> Result<SweepPoint<S>> {
    let dev = device.with_op_byte(op_byte);
    Ok(SweepPoint {
        op_byte: S::of_f64(op_byte),
        waterline: waterline::<S>(seq, &dev)?.max_efficiency,
        roofline: roofline_efficiency::<S>(seq, &dev)?,
    })
}

/// Largest speedup of the whole sequence obtainable by removing the memory
/// bottleneck of kernel `j`: `1 / (1 − f_B + f_R)` where `f_B` and `f_R` are
/// the memory and compute time of kernel `j` as fractions of the sequence
/// waterline latency.
pub fn amdahl_roofline_speedup<S: Real>(seq: &[KernelWorkload], j: usize, device: &DeviceSpec) -> Result<S> {
    let verdict = waterline::<S>(seq, device)?;
    let kernel = verdict.verdicts.get(j).ok_or(Error::IndexOutOfRange(j))?;
    if kernel.bound == Bound::Compute {
        return Err(Error::ComputeBound { index: j, label: kernel.label.clone() });
    }
    let (peak, bandwidth) = rates::<S>(device);
    let total = verdict.total_latency;
    let f_b = S::of_u64(kernel.bytes) / bandwidth / total;
    let f_r = S::of_u64(kernel.ops) / peak / total;
    Ok(S::one() / (S::one() - f_b + f_r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TensorDims;

    fn work(n: u64, b: u64) -> KernelWorkload {
        KernelWorkload::new("k", n, b, TensorDims::new(1, 1, 1, 1))
    }

    fn device(peak: f64, bw: f64) -> DeviceSpec {
        DeviceSpec { name: "t".into(), peak_throughput: peak, dram_bandwidth: bw, bytes_per_element: 2, l2_bytes: 1 << 20 }
    }

    #[test]
    fn compute_bound_latency() {
        let d = device(76.7e12, 480e9);
        let v = attainable_latency::<f64>(&work(2_000_000_000_000, 1_000_000), &d).unwrap();
        assert_eq!(v.bound, Bound::Compute);
        assert!((v.latency * 1e3 - 26.076).abs() < 1e-3);
    }

    #[test]
    fn pure_copy_is_memory_bound() {
        let d = device(76.7e12, 480e9);
        let v = attainable_latency::<f64>(&work(0, 1_000_000_000), &d).unwrap();
        assert_eq!(v.bound, Bound::Memory);
        assert!((v.latency * 1e3 - 2.0833).abs() < 1e-4);
        assert!(attainable_latency::<f64>(&work(0, 0), &d).is_err());
    }

    #[test]
    fn ridge_is_compute_bound() {
        let d = device(100.0, 10.0);
        let v = attainable_latency::<f64>(&work(1000, 100), &d).unwrap();
        assert_eq!(v.bound, Bound::Compute);
        assert_eq!(v.latency, 10.0);
    }

    #[test]
    fn mixed_sequence_waterline() {
        let d = device(100.0, 10.0);
        let seq = [work(1000, 50), work(1000, 200)];
        let v = waterline::<f64>(&seq, &d).unwrap();
        assert!((v.max_efficiency - 2.0 / 3.0).abs() < 1e-12);
        let roof = roofline_efficiency::<f64>(&seq, &d).unwrap();
        assert!(roof >= v.max_efficiency);
    }

    #[test]
    fn mediant_of_reciprocals() {
        assert_eq!(mediant_intensity::<f64>(&[work(4, 1), work(1, 4)]).unwrap(), 1.0);
        assert!(matches!(mediant_intensity::<f64>(&[]), Err(Error::EmptySequence)));
    }

    #[test]
    fn amdahl_substitution() {
        // f_B = 0.5, f_R = 0.1 on a two-kernel sequence of total latency 10 s.
        let d = device(100.0, 10.0);
        let seq = [work(100, 50), work(500, 0)];
        let s = amdahl_roofline_speedup::<f64>(&seq, 0, &d).unwrap();
        assert!((s - 1.0 / 0.6).abs() < 1e-12);
        assert!(matches!(amdahl_roofline_speedup::<f64>(&seq, 1, &d), Err(Error::ComputeBound { index: 1, .. })));
        assert!(matches!(amdahl_roofline_speedup::<f64>(&seq, 2, &d), Err(Error::IndexOutOfRange(2))));
    }

    #[test]
    fn sweep_endpoints() {
        let d = device(100.0, 10.0);
        let seq = [work(1000, 50), work(1000, 200)];
        let curve = opbyte_sweep::<f64>(&seq, &d, 1e-6, 1e3, 20).unwrap();
        assert_eq!(curve.len(), 20);
        assert!((curve[0].waterline - 1.0).abs() < 1e-9);
        assert!((curve[0].roofline - 1.0).abs() < 1e-9);
        assert_eq!(curve[19].op_byte, 1e3);
        assert!(opbyte_sweep::<f64>(&seq, &d, 1.0, 10.0, 1).is_err());
    }

    #[test]
    fn single_precision() {
        let d = device(100.0, 10.0);
        let v = waterline::<f32>(&[work(1000, 50), work(1000, 200)], &d).unwrap();
        assert!((v.max_efficiency - 2.0 / 3.0).abs() < 1e-6);
    }
}
