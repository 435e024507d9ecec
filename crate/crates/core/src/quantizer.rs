//! Quantization of firing intervals.
//!
//! A spike train is transmitted as quantized time differences
//! T_n = t_n − t_{n−1} (plus the per-interval bias index, which is already
//! an 8-bit integer). The admissible interval range follows from the
//! encoder inequality κδ/(b_n + c_n) ≤ T_n ≤ κδ/(b_n − c_n):
//!
//! * **classic** — one uniform step over the whole train, derived from the
//!   global bias/amplitude extremes;
//! * **dynamic** — one step per reconstruction window, derived from the
//!   window's own extremes. Because the step is monotone in the local
//!   bias-plus-amplitude sum, every dynamic step is at most the classic
//!   one: the same bit budget buys finer resolution wherever the signal is
//!   quiet.
//!
//! Amplitude extremes come either from the train's own online estimates
//! (self-contained operation) or from the source signal (oracle studies).

use serde::{Deserialize, Serialize};

use crate::decoder::WindowPlan;
use crate::encoder::{SpikeTrain, TrainMode};
use crate::error::{Result, TemError};
use crate::signal::BandlimitedSignal;

/// Widest supported time code.
pub const MAX_CODE_BITS: u32 = 30;

/// Where per-window amplitude extremes come from.
#[derive(Debug, Clone, Copy)]
pub enum AmplitudeSource<'a> {
    /// The train's own online estimates (falls back to the bias-implied
    /// bound `b − β` when estimates are absent).
    Estimated,
    /// Dense-grid maxima of the actual signal (clairvoyant reference).
    True(&'a BandlimitedSignal),
}

/// One uniform quantization range: intervals in
/// `[t_min, t_min + 2^bits·step]`, covering pulses up to `last_pulse`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentQuant {
    /// Last pulse index (1-based, inclusive) this range applies to.
    pub last_pulse: usize,
    pub step: f64,
    pub t_min: f64,
}

/// Interval quantizer: code width plus one range (classic) or one per
/// window (dynamic).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    pub bits: u32,
    pub segments: Vec<SegmentQuant>,
}

impl QuantizerSpec {
    pub fn levels(&self) -> u32 {
        1u32 << self.bits
    }

    /// True when a single range covers the entire train.
    pub fn is_classic(&self) -> bool {
        self.segments.len() == 1
    }

    /// Largest step over all segments.
    pub fn max_step(&self) -> f64 {
        self.segments.iter().map(|s| s.step).fold(0.0, f64::max)
    }

    /// The segment covering pulse `n` (1-based).
    pub fn segment_for(&self, n: usize) -> &SegmentQuant {
        self.segments
            .iter()
            .find(|s| n <= s.last_pulse)
            .unwrap_or_else(|| self.segments.last().expect("non-empty spec"))
    }
}

/// A quantized train: everything needed to rebuild an approximate
/// [`SpikeTrain`] and reconstruct from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedTrain {
    pub spec: QuantizerSpec,
    /// One interval code per pulse.
    pub codes: Vec<u32>,
    pub bias_indices: Vec<u16>,
    pub bias_grid: crate::encoder::BiasGrid,
    pub t0: f64,
    pub kappa: f64,
    pub delta: f64,
    pub mode: TrainMode,
    /// Intervals that fell outside their segment's range and were clamped.
    pub saturated: usize,
}

impl QuantizedTrain {
    pub fn len(&self) -> usize {
        self.codes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Payload size in bits: one time code per interval, plus one 8-bit
    /// bias index per interval for adaptive trains.
    pub fn payload_bits(&self) -> usize {
        let per_spike = self.spec.bits as usize
            + match self.mode {
                TrainMode::AifTem { .. } => 8,
                TrainMode::IfTem { .. } => 0,
            };
        self.codes.len() * per_spike
    }
}

/// Global amplitude figure for a train.
pub(crate) fn global_amplitude(train: &SpikeTrain, source: &AmplitudeSource) -> f64 {
    match (source, &train.mode) {
        (_, TrainMode::IfTem { c_max, .. }) => *c_max,
        (AmplitudeSource::True(sig), _) => {
            let end = train.times.last().copied().unwrap_or(train.t0);
            sig.dense_abs_max(train.t0, end, 200)
        }
        (AmplitudeSource::Estimated, TrainMode::AifTem { beta, .. }) => {
            let est = train
                .amplitude_estimates
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            if est.is_finite() {
                est.max(0.0)
            } else {
                // No estimates travelled with the train: fall back to the
                // bound implied by the biases themselves.
                train
                    .biases
                    .iter()
                    .map(|b| b - beta)
                    .fold(0.0, f64::max)
            }
        }
    }
}

/// Amplitude figure for one window of an adaptive train.
pub(crate) fn window_amplitude(
    train: &SpikeTrain,
    w: &WindowPlan,
    source: &AmplitudeSource,
    beta: f64,
) -> f64 {
    match source {
        AmplitudeSource::True(sig) => sig.dense_abs_max(w.t_lo, w.t_hi, 200),
        AmplitudeSource::Estimated => {
            let range = w.first_pulse - 1..w.last_pulse;
            let est = train.amplitude_estimates.get(range.clone()).map(|s| {
                s.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            });
            match est {
                Some(v) if v.is_finite() => v.max(0.0),
                _ => train.biases[range]
                    .iter()
                    .map(|b| b - beta)
                    .fold(0.0, f64::max),
            }
        }
    }
}

/// Step and offset for the interval range implied by bias/amplitude sums:
/// `T ∈ [κδ/(b_max + c_max), κδ/b_floor]` split into 2^bits levels, where
/// `b_floor` is β for adaptive trains and `b − c` for fixed-bias trains.
fn range_spec(kappa_delta: f64, s_max: f64, b_floor: f64, bits: u32) -> (f64, f64) {
    let t_min = kappa_delta / s_max;
    let t_max = kappa_delta / b_floor;
    let step = (t_max - t_min) / f64::from(1u32 << bits);
    (step, t_min)
}

fn check_bits(bits: u32) -> Result<()> {
    if bits == 0 || bits > MAX_CODE_BITS {
        return Err(TemError::config(format!(
            "code width must be 1..={MAX_CODE_BITS} bits, got {bits}"
        )));
    }
    Ok(())
}

/// One uniform range for the whole train.
///
/// Fixed-bias trains use the range `[κδ/(b + c), κδ/(b − c)]`, giving the
/// step `2cκδ/((b+c)(b−c)·2^bits)`. Adaptive trains use
/// `[κδ/(b_max + c_max), κδ/β]`, giving
/// `κδ(b_max + c_max − β)/(β(b_max + c_max)·2^bits)`.
pub fn classic_spec(
    train: &SpikeTrain,
    bits: u32,
    source: AmplitudeSource,
) -> Result<QuantizerSpec> {
    check_bits(bits)?;
    if train.is_empty() {
        return Err(TemError::shape("cannot derive a quantizer from an empty train"));
    }
    let kd = train.kappa * train.delta;
    let (step, t_min) = match train.mode {
        TrainMode::IfTem { bias, c_max } => {
            let c = match source {
                AmplitudeSource::True(sig) => {
                    let end = *train.times.last().unwrap();
                    sig.dense_abs_max(train.t0, end, 200).min(c_max)
                }
                AmplitudeSource::Estimated => c_max,
            };
            if !(bias > c) {
                return Err(TemError::config(
                    "fixed bias does not exceed the amplitude bound",
                ));
            }
            range_spec(kd, bias + c, bias - c, bits)
        }
        TrainMode::AifTem { beta, .. } => {
            let c = global_amplitude(train, &source);
            let b_max = train.biases.iter().cloned().fold(beta, f64::max);
            range_spec(kd, b_max + c, beta, bits)
        }
    };
    Ok(QuantizerSpec {
        bits,
        segments: vec![SegmentQuant { last_pulse: train.len(), step, t_min }],
    })
}

/// One range per reconstruction window, each derived from the window's own
/// bias and amplitude extremes. Requires an adaptive train (fixed-bias
/// trains have nothing to adapt to — use [`classic_spec`]).
pub fn dynamic_spec(
    train: &SpikeTrain,
    windows: &[WindowPlan],
    bits: u32,
    source: AmplitudeSource,
) -> Result<QuantizerSpec> {
    check_bits(bits)?;
    let beta = match train.mode {
        TrainMode::AifTem { beta, .. } => beta,
        TrainMode::IfTem { .. } => {
            return Err(TemError::config(
                "dynamic quantization requires an adaptive train",
            ))
        }
    };
    if windows.is_empty() {
        return Err(TemError::shape("window plan is empty"));
    }
    if windows.last().unwrap().last_pulse != train.len() {
        return Err(TemError::shape(format!(
            "window plan covers {} pulses but the train has {}",
            windows.last().unwrap().last_pulse,
            train.len()
        )));
    }
    let kd = train.kappa * train.delta;
    let segments = windows
        .iter()
        .map(|w| {
            let c = window_amplitude(train, w, &source, beta);
            let b_max = train.biases[w.first_pulse - 1..w.last_pulse]
                .iter()
                .cloned()
                .fold(beta, f64::max);
            let (step, t_min) = range_spec(kd, b_max + c, beta, bits);
            SegmentQuant { last_pulse: w.last_pulse, step, t_min }
        })
        .collect();
    Ok(QuantizerSpec { bits, segments })
}

/// Quantizes the train's intervals against `spec`.
pub fn quantize(train: &SpikeTrain, spec: &QuantizerSpec) -> Result<QuantizedTrain> {
    check_bits(spec.bits)?;
    if spec.segments.is_empty() {
        return Err(TemError::shape("quantizer spec has no segments"));
    }
    if spec.segments.last().unwrap().last_pulse < train.len() {
        return Err(TemError::shape(format!(
            "quantizer spec covers {} pulses but the train has {}",
            spec.segments.last().unwrap().last_pulse,
            train.len()
        )));
    }
    let levels = spec.levels();
    let mut saturated = 0usize;
    let codes = train
        .intervals()
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let seg = spec.segment_for(i + 1);
            let raw = ((t - seg.t_min) / seg.step).floor();
            let code = if raw < 0.0 {
                saturated += 1;
                0
            } else if raw >= f64::from(levels) {
                saturated += 1;
                levels - 1
            } else {
                raw as u32
            };
            code
        })
        .collect();
    Ok(QuantizedTrain {
        spec: spec.clone(),
        codes,
        bias_indices: train.bias_indices.clone(),
        bias_grid: train.bias_grid,
        t0: train.t0,
        kappa: train.kappa,
        delta: train.delta,
        mode: train.mode,
        saturated,
    })
}

/// Rebuilds an approximate spike train: each interval is the centre of its
/// code cell, accumulated from `t0`; biases come from the stored indices.
pub fn dequantize(qt: &QuantizedTrain) -> Result<SpikeTrain> {
    let levels = qt.spec.levels();
    if qt.codes.len() != qt.bias_indices.len() {
        return Err(TemError::shape(format!(
            "{} codes vs {} bias indices",
            qt.codes.len(),
            qt.bias_indices.len()
        )));
    }
    let mut t = qt.t0;
    let mut times = Vec::with_capacity(qt.codes.len());
    let mut biases = Vec::with_capacity(qt.codes.len());
    for (i, &code) in qt.codes.iter().enumerate() {
        if code >= levels {
            return Err(TemError::Decode {
                index: i,
                msg: format!("code {code} exceeds {} levels", levels),
            });
        }
        let seg = qt.spec.segment_for(i + 1);
        t += seg.t_min + (f64::from(code) + 0.5) * seg.step;
        times.push(t);
        biases.push(qt.bias_grid.value(qt.bias_indices[i]));
    }
    Ok(SpikeTrain {
        t0: qt.t0,
        times,
        biases,
        bias_indices: qt.bias_indices.clone(),
        bias_grid: qt.bias_grid,
        kappa: qt.kappa,
        delta: qt.delta,
        mode: qt.mode,
        amplitude_estimates: Vec::new(),
    })
}

/// Midrise quantization of amplitude samples onto `bits` bits over
/// `[−c_max, c_max]`: step 2c/2^bits, zero maps to +step/2 — the baseline
/// for amplitude-sampling comparisons.
pub fn quantize_amplitudes(values: &[f64], c_max: f64, bits: u32) -> Result<Vec<f64>> {
    check_bits(bits)?;
    if !(c_max > 0.0) {
        return Err(TemError::domain(format!(
            "amplitude bound must be positive, got {c_max}"
        )));
    }
    let levels = f64::from(1u32 << bits);
    let step = 2.0 * c_max / levels;
    Ok(values
        .iter()
        .map(|&v| {
            let code = ((v + c_max) / step).floor().clamp(0.0, levels - 1.0);
            -c_max + (code + 0.5) * step
        })
        .collect())
}
