//! Closed-form oversampling and distortion bounds.
//!
//! Everything here is pure arithmetic on train statistics: oversampling
//! ceilings, per-window sampling-distortion terms `r^{2(L+1)}`, per-segment
//! quantization MSE ceilings, and their sum. The functions deliberately take
//! plain numbers (ratios, step sizes, interval means) so callers can choose
//! how each statistic is estimated — from the true signal, from the on-line
//! amplitude estimates, or from worst-case constants — and then check the
//! measured errors against the resulting ceilings.
//!
//! All values are linear power (or dimensionless) quantities; convert to dB
//! only at the reporting edge.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::decoder::WindowPlan;
use crate::encoder::{SpikeTrain, TrainMode};
use crate::error::{Result, TemError};
use crate::quantizer::{AmplitudeSource, QuantizedTrain};
use crate::signal::{power_to_db, BandlimitedSignal};

/// Oversampling figures for one train: the measured rate against the
/// ceilings implied by the bias/amplitude statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OversamplingReport {
    /// Measured: firing rate over the Nyquist rate Ω/π.
    pub os_empirical: f64,
    /// `(𝔼[b] + c_ref)·π/(κδΩ)` — the adaptive ceiling with the hard
    /// amplitude bound.
    pub os_upper_aif: f64,
    /// `(𝔼[b] + 𝔼[c])·π/(κδΩ)` — the tighter mean-amplitude form.
    pub os_upper_mean: f64,
    /// `(b_top + c_ref)·π/(κδΩ)` — the fixed-bias counterpart, evaluated
    /// at the train's largest bias.
    pub os_upper_if: f64,
    pub mean_interval: f64,
    pub mean_bias: f64,
}

/// Oversampling report for a train with at least two firings.
///
/// `c_ref` overrides the amplitude bound; when `None` it falls back to the
/// figure carried by the train (the validated bound for fixed-bias runs,
/// the largest on-line estimate for adaptive ones). The mean amplitude uses
/// the per-interval estimates where present, clamped at zero, and `c_ref`
/// otherwise.
pub fn oversampling(
    train: &SpikeTrain,
    omega: f64,
    c_ref: Option<f64>,
) -> Result<OversamplingReport> {
    if train.len() < 2 {
        return Err(TemError::domain(format!(
            "oversampling needs at least 2 firings, got {}",
            train.len()
        )));
    }
    if !(omega > 0.0) {
        return Err(TemError::domain(format!("band edge must be positive, got {omega}")));
    }
    let kd = train.kappa * train.delta;
    let mean_t = train.mean_interval();
    let n = train.len() as f64;
    let mean_bias = train.biases.iter().sum::<f64>() / n;
    let b_top = train.biases.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let c_ref =
        c_ref.unwrap_or_else(|| crate::quantizer::global_amplitude(train, &AmplitudeSource::Estimated));
    let mean_c = if train.amplitude_estimates.is_empty() {
        c_ref
    } else {
        train.amplitude_estimates.iter().map(|c| c.max(0.0)).sum::<f64>() / n
    };
    let scale = PI / (kd * omega);
    Ok(OversamplingReport {
        os_empirical: PI / (omega * mean_t),
        os_upper_aif: (mean_bias + c_ref) * scale,
        os_upper_mean: (mean_bias + mean_c) * scale,
        os_upper_if: (b_top + c_ref) * scale,
        mean_interval: mean_t,
        mean_bias,
    })
}

/// Per-interval Nyquist ratios `κδΩ/(π(b_n − c_n))` with the true trailing
/// window maxima as `c_n` (`w` intervals, sampled at `per_nyquist` points
/// per Nyquist period). Intervals whose bias does not clear the window
/// maximum get `+∞`: no contraction guarantee exists there.
pub fn nyquist_ratios_true(
    train: &SpikeTrain,
    signal: &BandlimitedSignal,
    w: usize,
    per_nyquist: usize,
) -> Vec<f64> {
    let kd = train.kappa * train.delta;
    let omega = signal.omega();
    let c = train.true_window_amplitudes(signal, w, per_nyquist);
    train
        .biases
        .iter()
        .zip(&c)
        .map(|(&b, &c)| {
            let margin = b - c;
            if margin > 0.0 {
                kd * omega / (PI * margin)
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

/// Reduces per-interval ratios to one ratio per window (the maximum over
/// the window's base pulses).
pub fn window_ratios(per_interval: &[f64], windows: &[WindowPlan]) -> Vec<f64> {
    windows
        .iter()
        .map(|w| {
            per_interval[w.first_pulse - 1..w.last_pulse]
                .iter()
                .cloned()
                .fold(0.0f64, f64::max)
        })
        .collect()
}

/// Sampling-distortion ceiling, one term per window plus their means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingBound {
    /// `r_i^{2(L_i+1)}` with the actual pulse count `L_i`; 1 where `r ≥ 1`.
    pub per_window: Vec<f64>,
    /// Same with the duration-implied count `L_i = |W_i|·Ω/(r_i·π)`.
    pub per_window_duration: Vec<f64>,
    pub mean: f64,
    pub mean_duration: f64,
    /// Slowest guaranteed rate `Ω/(π·max_i r_i)`; `None` when some window
    /// is non-contractive.
    pub fs_min: Option<f64>,
    /// Mean of the uniform-rate terms `(max_i r_i)^{2(L_i+1)}`.
    pub mean_fs_min_form: Option<f64>,
}

/// Evaluates the sampling-distortion ceiling for a window plan and its
/// contraction ratios. Non-contractive windows contribute the trivial
/// ceiling 1.
pub fn sampling_distortion_bound(
    windows: &[WindowPlan],
    ratios: &[f64],
    omega: f64,
) -> Result<SamplingBound> {
    if windows.len() != ratios.len() {
        return Err(TemError::shape(format!(
            "{} windows but {} ratios",
            windows.len(),
            ratios.len()
        )));
    }
    if windows.is_empty() {
        return Err(TemError::shape("empty window plan"));
    }
    let term = |r: f64, l: f64| -> f64 {
        if r < 1.0 && r >= 0.0 {
            r.powf(2.0 * (l + 1.0)).min(1.0)
        } else {
            1.0
        }
    };
    let per_window: Vec<f64> = windows
        .iter()
        .zip(ratios)
        .map(|(w, &r)| term(r, w.pulse_count() as f64))
        .collect();
    let per_window_duration: Vec<f64> = windows
        .iter()
        .zip(ratios)
        .map(|(w, &r)| {
            if r < 1.0 && r > 0.0 {
                let l = (w.t_hi - w.t_lo) * omega / (r * PI);
                term(r, l)
            } else {
                1.0
            }
        })
        .collect();
    let s = windows.len() as f64;
    let r_max = ratios.iter().cloned().fold(0.0f64, f64::max);
    let (fs_min, mean_fs_min_form) = if r_max > 0.0 && r_max < 1.0 {
        let uniform: f64 = windows
            .iter()
            .map(|w| term(r_max, w.pulse_count() as f64))
            .sum::<f64>()
            / s;
        (Some(omega / (PI * r_max)), Some(uniform))
    } else {
        (None, None)
    };
    Ok(SamplingBound {
        mean: per_window.iter().sum::<f64>() / s,
        mean_duration: per_window_duration.iter().sum::<f64>() / s,
        per_window,
        per_window_duration,
        fs_min,
        mean_fs_min_form,
    })
}

/// Quantization-MSE ceiling for one segment, in both closed forms.
/// `None` fields mean the segment is non-contractive and carries no
/// guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantBound {
    /// Time-average form: `prefactor·(κδ)²/𝔼³[T]`.
    pub time_average: Option<f64>,
    /// Bias/amplitude form: `prefactor·(𝔼[b]+𝔼[c])³/(κδ)`.
    pub bias_amplitude: Option<f64>,
    /// `prefactor·(κδ)²`; multiplying by a rate cubed gives the
    /// rate-parameterized form.
    pub rate_scale: Option<f64>,
}

impl QuantBound {
    pub const NOT_APPLICABLE: QuantBound = QuantBound {
        time_average: None,
        bias_amplitude: None,
        rate_scale: None,
    };
}

/// Per-segment quantization-MSE ceiling.
///
/// The shared prefactor is `((1−r^{L+1})/(1−r))²·(Δ²/12)·(Ω/π)`; the two
/// forms scale it by `(κδ)²/𝔼³[T]` (time-average) and
/// `(𝔼[b]+𝔼[c])³/(κδ)` (bias/amplitude). Segments with `r ≥ 1` return the
/// not-applicable marker.
#[allow(clippy::too_many_arguments)]
pub fn quant_mse_bound_segment(
    delta_step: f64,
    pulse_count: usize,
    ratio: f64,
    omega: f64,
    kappa_delta: f64,
    mean_interval: f64,
    mean_bias: f64,
    mean_amplitude: f64,
) -> QuantBound {
    if !(ratio >= 0.0 && ratio < 1.0) {
        return QuantBound::NOT_APPLICABLE;
    }
    let l = pulse_count as f64;
    let geometric = ((1.0 - ratio.powf(l + 1.0)) / (1.0 - ratio)).powi(2);
    let prefactor = geometric * delta_step * delta_step / 12.0 * omega / PI;
    QuantBound {
        time_average: Some(prefactor * kappa_delta * kappa_delta / mean_interval.powi(3)),
        bias_amplitude: Some(prefactor * (mean_bias + mean_amplitude).powi(3) / kappa_delta),
        rate_scale: Some(prefactor * kappa_delta * kappa_delta),
    }
}

/// Fixed-bias quantization-MSE ceiling in its long-segment closed form:
/// `Ω(b+c)/(πκδ)·((b+c)/(1−r_c))²·Δ²/12`. `None` when `r_c ≥ 1`.
pub fn iftem_quant_mse_bound(
    delta_step: f64,
    r_c: f64,
    omega: f64,
    kappa_delta: f64,
    bias: f64,
    c_max: f64,
) -> Option<f64> {
    if !(r_c >= 0.0 && r_c < 1.0) {
        return None;
    }
    let s = bias + c_max;
    Some(omega * s / (PI * kappa_delta) * (s / (1.0 - r_c)).powi(2) * delta_step * delta_step
        / 12.0)
}

/// Total-distortion decomposition: sampling ceiling, quantization ceiling,
/// and their sum, plus the uniform-rate forms where every window is
/// contractive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionBound {
    pub d_s: f64,
    pub d_q: Option<f64>,
    /// `d_s + d_q` when both parts carry guarantees.
    pub d_t: Option<f64>,
    pub fs_min: Option<f64>,
    pub d_s_fs_min: Option<f64>,
    pub d_q_fs_min: Option<f64>,
    pub d_t_fs_min: Option<f64>,
    /// Set when a part is omitted, saying why.
    pub note: Option<String>,
}

/// Combines a sampling ceiling with per-segment quantization ceilings.
///
/// The quantization mean uses the time-average form. Any non-contractive
/// segment voids the quantization guarantee (and the summed total), which
/// is recorded in `note`.
pub fn total_distortion_bound(sampling: &SamplingBound, quant: &[QuantBound]) -> DistortionBound {
    let s = quant.len() as f64;
    let d_q = if quant.is_empty() {
        Some(0.0)
    } else if quant.iter().all(|q| q.time_average.is_some()) {
        Some(quant.iter().map(|q| q.time_average.unwrap()).sum::<f64>() / s)
    } else {
        None
    };
    let d_q_fs_min = match (sampling.fs_min, d_q) {
        (Some(fs), Some(_)) if !quant.is_empty() => Some(
            quant
                .iter()
                .map(|q| q.rate_scale.unwrap() * fs.powi(3))
                .sum::<f64>()
                / s,
        ),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    let note = if d_q.is_none() {
        Some("some segment is non-contractive; no quantization guarantee".to_string())
    } else if sampling.fs_min.is_none() {
        Some("some window is non-contractive; uniform-rate forms omitted".to_string())
    } else {
        None
    };
    DistortionBound {
        d_s: sampling.mean,
        d_q,
        d_t: d_q.map(|q| sampling.mean + q),
        fs_min: sampling.fs_min,
        d_s_fs_min: sampling.mean_fs_min_form,
        d_q_fs_min,
        d_t_fs_min: match (sampling.mean_fs_min_form, d_q_fs_min) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        },
        note,
    }
}

/// Interval-sandwich audit: checks every interval against
/// `κδ/(b_n + c_n) ≤ T_n ≤ κδ/(b_n − c_n)` with the true trailing-window
/// maxima as `c_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    /// 1-based intervals violating the sandwich despite a positive margin.
    pub violations: Vec<usize>,
    /// 1-based intervals where the bias did not clear the window maximum
    /// (no guarantee applies there).
    pub failures: Vec<usize>,
    /// Number of intervals actually checked.
    pub checked: usize,
}

/// Audits the interval sandwich for a train against the true signal.
/// `rel_tol` absorbs the (small) numerical error in both the firing times
/// and the dense window maxima.
pub fn interval_sandwich(
    train: &SpikeTrain,
    signal: &BandlimitedSignal,
    w: usize,
    per_nyquist: usize,
    rel_tol: f64,
) -> SandwichReport {
    let kd = train.kappa * train.delta;
    let c = train.true_window_amplitudes(signal, w, per_nyquist);
    let mut report = SandwichReport {
        violations: Vec::new(),
        failures: Vec::new(),
        checked: 0,
    };
    for (i, (dt, &cn)) in train.intervals().iter().zip(&c).enumerate() {
        let b = train.biases[i];
        if !(b > cn) {
            report.failures.push(i + 1);
            continue;
        }
        report.checked += 1;
        let lo = kd / (b + cn);
        let hi = kd / (b - cn);
        if *dt < lo * (1.0 - rel_tol) || *dt > hi * (1.0 + rel_tol) {
            report.violations.push(i + 1);
        }
    }
    report
}

/// Rate-distortion point: payload size against measured error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub total_bits: u64,
    /// Measured MSE, linear power.
    pub mse: f64,
}

/// One-stop analytical report for a train (optionally with its quantized
/// form and a measured MSE), serializable to JSON or a flat CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub omega: f64,
    pub kappa: f64,
    pub delta: f64,
    pub os: OversamplingReport,
    pub sampling: Option<SamplingBound>,
    pub quant: Vec<QuantBound>,
    /// Fixed-bias closed form, for fixed-bias trains with `r_c < 1`.
    pub iftem_quant: Option<f64>,
    pub total: Option<DistortionBound>,
    pub rate_point: Option<RatePoint>,
}

/// Assembles a [`BoundsReport`] from a train.
///
/// With a signal, contraction ratios use the true window maxima (window
/// size from the train's own estimator window; 1 for fixed-bias trains);
/// without one they fall back to the measured firing gaps. Quantization
/// ceilings are evaluated per stored segment of `quantized` when given.
pub fn bounds_report(
    train: &SpikeTrain,
    omega: f64,
    windows: &[WindowPlan],
    signal: Option<&BandlimitedSignal>,
    quantized: Option<&QuantizedTrain>,
    measured_mse: Option<f64>,
) -> Result<BoundsReport> {
    let c_ref = signal.map(|s| s.c_max());
    let os = oversampling(train, omega, c_ref)?;
    let est_window = match train.mode {
        TrainMode::AifTem { window, .. } => window,
        TrainMode::IfTem { .. } => 1,
    };
    let per_interval = signal.map(|sig| nyquist_ratios_true(train, sig, est_window, 200));
    let segment_ratios = |plans: &[WindowPlan]| -> Vec<f64> {
        match &per_interval {
            Some(all) => window_ratios(all, plans),
            None => crate::decoder::contraction_ratios(train, omega, plans),
        }
    };
    let sampling = sampling_distortion_bound(windows, &segment_ratios(windows), omega)?;
    let kd = train.kappa * train.delta;

    let mut quant = Vec::new();
    let mut iftem_quant = None;
    if let Some(q) = quantized {
        let full = train.full_times();
        let intervals = train.intervals();
        let mut first = 1usize;
        for seg in &q.spec.segments {
            let plan = WindowPlan {
                first_pulse: first,
                last_pulse: seg.last_pulse,
                t_lo: full[first - 1],
                t_hi: full[seg.last_pulse],
            };
            let span = &intervals[first - 1..seg.last_pulse];
            let mean_t = span.iter().sum::<f64>() / span.len() as f64;
            let mean_b = train.biases[first - 1..seg.last_pulse].iter().sum::<f64>()
                / span.len() as f64;
            let source = match signal {
                Some(sig) => AmplitudeSource::True(sig),
                None => AmplitudeSource::Estimated,
            };
            let beta = train.mode.beta().unwrap_or(0.0);
            let mean_c = match train.mode {
                // Without the signal a fixed-bias train has no per-window
                // estimate trail; use its validated bound.
                TrainMode::IfTem { c_max, .. } if signal.is_none() => c_max,
                _ => crate::quantizer::window_amplitude(train, &plan, &source, beta),
            };
            quant.push(quant_mse_bound_segment(
                seg.step,
                plan.pulse_count(),
                segment_ratios(&[plan])[0],
                omega,
                kd,
                mean_t,
                mean_b,
                mean_c,
            ));
            first = seg.last_pulse + 1;
        }
        if let TrainMode::IfTem { bias, c_max } = train.mode {
            if let Some(seg) = q.spec.segments.first() {
                let r_c = kd * omega / (PI * (bias - c_max));
                iftem_quant =
                    iftem_quant_mse_bound(seg.step, r_c, omega, kd, bias, c_max);
            }
        }
    }
    let total = Some(total_distortion_bound(&sampling, &quant));
    let rate_point = match (quantized, measured_mse) {
        (Some(q), Some(mse)) => Some(RatePoint {
            total_bits: q.payload_bits() as u64,
            mse,
        }),
        _ => None,
    };
    Ok(BoundsReport {
        omega,
        kappa: train.kappa,
        delta: train.delta,
        os,
        sampling: Some(sampling),
        quant,
        iftem_quant,
        total,
        rate_point,
    })
}

impl BoundsReport {
    /// Flat CSV header matching [`BoundsReport::csv_row`].
    pub fn csv_header() -> &'static str {
        "omega,kappa,delta,os_empirical,os_upper_aif,os_upper_mean,os_upper_if,\
         mean_interval,mean_bias,n_windows,d_s,d_s_duration,fs_min,d_s_fs_min,\
         n_segments,d_q,d_t,iftem_quant,rate_bits,rate_mse,rate_mse_db"
    }

    /// Flat CSV row (empty cells for absent parts).
    pub fn csv_row(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| format!("{x:.12e}")).unwrap_or_default()
        }
        let (n_windows, d_s, d_s_dur, fs_min, d_s_fs) = match &self.sampling {
            Some(s) => (
                s.per_window.len(),
                opt(Some(s.mean)),
                opt(Some(s.mean_duration)),
                opt(s.fs_min),
                opt(s.mean_fs_min_form),
            ),
            None => (0, String::new(), String::new(), String::new(), String::new()),
        };
        let (d_q, d_t) = match &self.total {
            Some(t) => (opt(t.d_q), opt(t.d_t)),
            None => (String::new(), String::new()),
        };
        let (bits, mse, mse_db) = match &self.rate_point {
            Some(rp) => (
                rp.total_bits.to_string(),
                opt(Some(rp.mse)),
                power_to_db(rp.mse)
                    .map(|db| format!("{db:.4}"))
                    .unwrap_or_default(),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        format!(
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.omega,
            self.kappa,
            self.delta,
            self.os.os_empirical,
            self.os.os_upper_aif,
            self.os.os_upper_mean,
            self.os.os_upper_if,
            self.os.mean_interval,
            self.os.mean_bias,
            n_windows,
            d_s,
            d_s_dur,
            fs_min,
            d_s_fs,
            self.quant.len(),
            d_q,
            d_t,
            opt(self.iftem_quant),
            bits,
            mse,
            mse_db,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{plan_segments, SegmentPolicy};
    use crate::encoder::{encode_aiftem, encode_genie, EncoderConfig, EncoderMode, MapConfig};
    use crate::encoder::BiasGrid;

    fn manual_if_train(t0: f64, intervals: &[f64], bias: f64, c_max: f64, kd: f64) -> SpikeTrain {
        let mut times = Vec::new();
        let mut t = t0;
        for dt in intervals {
            t += dt;
            times.push(t);
        }
        let n = times.len();
        SpikeTrain {
            t0,
            times,
            biases: vec![bias; n],
            bias_indices: vec![0; n],
            bias_grid: BiasGrid::fixed(bias),
            kappa: 1.0,
            delta: kd,
            mode: TrainMode::IfTem { bias, c_max },
            amplitude_estimates: Vec::new(),
        }
    }

    #[test]
    fn uniform_train_oversampling_is_plain_arithmetic() {
        // 100 Hz firing against a 20 Hz Nyquist rate → OS = 5.
        let omega = 2.0 * PI * 10.0;
        let train = manual_if_train(0.0, &vec![0.01; 100], 1.0, 0.5, 0.01);
        let os = oversampling(&train, omega, None).unwrap();
        assert!((os.os_empirical - 5.0).abs() < 1e-12, "{}", os.os_empirical);
        assert!((os.mean_interval - 0.01).abs() < 1e-15);
    }

    #[test]
    fn oversampling_ceiling_is_plain_arithmetic() {
        // 𝔼[b] = 2, c = 1, κδ = 0.01, Ω = 2π·10 → ceiling = 300/20 = 15.
        let omega = 2.0 * PI * 10.0;
        let train = manual_if_train(0.0, &vec![0.004; 50], 2.0, 1.0, 0.01);
        let os = oversampling(&train, omega, Some(1.0)).unwrap();
        assert!((os.os_upper_aif - 15.0).abs() < 1e-12, "{}", os.os_upper_aif);
        // One bias level → the fixed-bias ceiling coincides.
        assert!((os.os_upper_if - 15.0).abs() < 1e-12);
    }

    #[test]
    fn oversampling_rejects_degenerate_trains() {
        let train = manual_if_train(0.0, &[0.01], 1.0, 0.5, 0.01);
        assert!(oversampling(&train, 10.0, None).is_err());
    }

    #[test]
    fn sampling_bound_terms_are_frozen_arithmetic() {
        // r = 0.5, L = 10 → 0.5^22 = 2^-22.
        let w = WindowPlan { first_pulse: 1, last_pulse: 10, t_lo: 0.0, t_hi: 1.0 };
        let omega = 2.0 * PI * 10.0;
        let b = sampling_distortion_bound(&[w], &[0.5], omega).unwrap();
        let want = 0.5f64.powi(22);
        assert!((b.per_window[0] - want).abs() < 1e-12 * want);
        assert!((b.mean - want).abs() < 1e-12 * want);
        // Duration form: L = |W|·Ω/(rπ) = 1·20/0.5 = 40 → 0.5^82.
        let want_dur = 0.5f64.powi(82);
        assert!((b.per_window_duration[0] - want_dur).abs() < 1e-9 * want_dur);
        // A non-contractive window's term degrades to the trivial ceiling.
        let b1 = sampling_distortion_bound(&[w], &[1.0], omega).unwrap();
        assert_eq!(b1.per_window[0], 1.0);
        assert!(b1.fs_min.is_none());
        // fs_min form with the contractive ratio.
        assert!((b.fs_min.unwrap() - omega / (PI * 0.5)).abs() < 1e-9);
        assert!((b.mean_fs_min_form.unwrap() - want).abs() < 1e-12 * want);
    }

    #[test]
    fn quant_bound_matches_the_frozen_chain() {
        // r = 0.5 with L large → geometric factor 4; Δ = 1e−5, Ω = 2π·10,
        // κδ = 0.01, 𝔼[T] = 0.01:
        // 4·(1e−10/12)·20·(1e−4/1e−6) ≈ 6.667e−8.
        let q = quant_mse_bound_segment(
            1e-5,
            1000,
            0.5,
            2.0 * PI * 10.0,
            0.01,
            0.01,
            2.0,
            1.0,
        );
        let want = 4.0 * (1e-10 / 12.0) * 20.0 * 100.0;
        let got = q.time_average.unwrap();
        assert!((got - want).abs() < 1e-9 * want, "got {got}, want {want}");
        assert!((want - 6.6667e-8).abs() < 1e-3 * want);
        // Rate-parameterized scale recovers the time-average form at the
        // segment's own rate.
        let rate = 1.0f64 / 0.01;
        let via_rate = q.rate_scale.unwrap() * rate.powi(3);
        assert!((via_rate - got).abs() < 1e-12 * got);
    }

    #[test]
    fn quant_bound_is_not_applicable_when_expansive() {
        let q = quant_mse_bound_segment(1e-5, 10, 1.0, 10.0, 0.01, 0.01, 2.0, 1.0);
        assert!(q.time_average.is_none() && q.bias_amplitude.is_none());
        assert!(iftem_quant_mse_bound(1e-5, 1.3, 10.0, 0.01, 2.0, 1.0).is_none());
    }

    #[test]
    fn fixed_bias_closed_form_is_the_long_segment_limit() {
        // Substituting constants (b, c, r_c) and letting the segment grow
        // collapses the bias/amplitude form onto the closed form.
        let (bias, c_max, kd) = (2.0, 1.0, 0.01);
        let omega = 2.0 * PI * 10.0;
        let r_c = kd * omega / (PI * (bias - c_max));
        assert!(r_c < 1.0);
        let step = 1e-5;
        let closed = iftem_quant_mse_bound(step, r_c, omega, kd, bias, c_max).unwrap();
        let seg = quant_mse_bound_segment(step, 20_000, r_c, omega, kd, 0.01, bias, c_max);
        let ba = seg.bias_amplitude.unwrap();
        assert!((ba - closed).abs() < 1e-12 * closed, "{ba} vs {closed}");
    }

    #[test]
    fn time_average_form_stays_under_the_bias_amplitude_form() {
        // On an adaptive run the mean interval obeys
        // 𝔼[T] ≥ κδ/(𝔼[b]+𝔼[c]) with the true window maxima, so the
        // time-average form is the tighter of the two. Clairvoyant biases
        // keep every interval ratio below κδΩ/(πβ) = 0.5, so the bound
        // applies to the whole train.
        let omega = 2.0 * PI * 10.0;
        let sig = BandlimitedSignal::synthesize_random(omega, 2, (-1.0, 1.0), 9).unwrap();
        let config = EncoderConfig {
            t_start: sig.horizon().0,
            ..EncoderConfig::new(0.5, 0.02, EncoderMode::Genie { beta: 0.4, lookahead: None })
        };
        let train = encode_genie(&sig, &config).unwrap().train;
        assert!(train.len() > 10);
        let intervals = train.intervals();
        let mean_t = intervals.iter().sum::<f64>() / intervals.len() as f64;
        let mean_b = train.biases.iter().sum::<f64>() / train.len() as f64;
        let c = train.true_window_amplitudes(&sig, 1, 400);
        let mean_c = c.iter().sum::<f64>() / c.len() as f64;
        let ratios = nyquist_ratios_true(&train, &sig, 1, 400);
        let r = ratios.iter().cloned().fold(0.0f64, f64::max);
        assert!(r < 1.0, "run not contractive (r = {r})");
        let q = quant_mse_bound_segment(
            1e-6,
            train.len(),
            r,
            omega,
            train.kappa * train.delta,
            mean_t,
            mean_b,
            mean_c,
        );
        let ta = q.time_average.unwrap();
        let ba = q.bias_amplitude.unwrap();
        assert!(ta <= ba * (1.0 + 1e-12), "time-average {ta} > bias/amplitude {ba}");
    }

    #[test]
    fn total_bound_composes_and_collapses() {
        let w = WindowPlan { first_pulse: 1, last_pulse: 10, t_lo: 0.0, t_hi: 1.0 };
        let omega = 2.0 * PI * 10.0;
        let sampling =
            sampling_distortion_bound(&[w, WindowPlan { first_pulse: 11, last_pulse: 20, t_lo: 1.0, t_hi: 2.0 }], &[0.5, 0.5], omega)
                .unwrap();
        // Identical windows → the mean is the single-window term.
        assert!((sampling.mean - 0.5f64.powi(22)).abs() < 1e-24);
        // Zero quantization step → D_T = D_S.
        let q = quant_mse_bound_segment(0.0, 10, 0.5, omega, 0.01, 0.01, 2.0, 1.0);
        let total = total_distortion_bound(&sampling, &[q, q]);
        assert_eq!(total.d_q, Some(0.0));
        assert!((total.d_t.unwrap() - total.d_s).abs() < 1e-24);
        assert!(total.note.is_none());
        // A non-contractive segment voids the quantization guarantee.
        let bad = total_distortion_bound(&sampling, &[q, QuantBound::NOT_APPLICABLE]);
        assert!(bad.d_q.is_none() && bad.d_t.is_none());
        assert!(bad.note.is_some());
    }

    #[test]
    fn sandwich_audit_is_clean_on_a_healthy_run() {
        let omega = 2.0 * PI * 10.0;
        let sig = BandlimitedSignal::synthesize_random(omega, 2, (-1.0, 1.0), 21).unwrap();
        let config = EncoderConfig {
            t_start: sig.horizon().0,
            ..EncoderConfig::new(
                0.5,
                0.02,
                EncoderMode::AifTem { beta: 0.5, window: 1, map: MapConfig::default() },
            )
        };
        let train = encode_aiftem(&sig, &config).unwrap().train;
        assert!(train.len() > 10);
        let report = interval_sandwich(&train, &sig, 1, 2000, 1e-6);
        assert!(report.violations.is_empty(), "violations at {:?}", report.violations);
        assert!(report.checked + report.failures.len() == train.len());
    }

    #[test]
    fn report_serializes_to_json_and_csv() {
        let omega = 2.0 * PI * 10.0;
        let train = manual_if_train(0.0, &vec![0.01; 40], 2.0, 1.0, 0.01);
        let windows = plan_segments(&train, SegmentPolicy::FixedCount { pulses: 20 }).unwrap();
        let report = bounds_report(&train, omega, &windows, None, None, None).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: BoundsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        let header_cols = BoundsReport::csv_header().split(',').count();
        let row_cols = report.csv_row().split(',').count();
        assert_eq!(header_cols, row_cols);
    }
}
