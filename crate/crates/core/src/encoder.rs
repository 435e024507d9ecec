//! Integrate-and-fire time encoders.
//!
//! Both encoders integrate `(x(t) + b) / κ` and emit a spike each time the
//! accumulator reaches the threshold `δ`, then reset. The fixed-bias encoder
//! (IF-TEM) uses one bias `b ≥ c_max` for the whole run; the adaptive
//! encoder (AIF-TEM) re-picks the bias after every spike from an online
//! amplitude estimate so that the firing rate tracks the local signal
//! amplitude instead of the global bound. A clairvoyant "genie" bias source
//! (true look-ahead window maximum plus margin) is provided as the
//! adaptation upper reference.
//!
//! Crossings are bracketed on a fixed simulation grid with trapezoidal
//! accumulation, located inside the bracketing step by solving the quadratic
//! implied by a linear integrand model, and (by default) polished with a
//! safeguarded Newton iteration against the exact signal integral so that
//! every emitted interval satisfies the threshold identity to ~1e-13·δ.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TemError};
use crate::signal::BandlimitedSignal;

/// Default EWMA weight for the amplitude tracker.
pub const DEFAULT_ALPHA1: f64 = 0.98;
/// Default volatility-margin weight for the one-step amplitude forecast.
pub const DEFAULT_ALPHA2: f64 = 0.17;
/// Bias levels are indexed with 8 bits plus one spare top level.
const BIAS_GRID_STEPS: u32 = 256;
/// Crossing acceptance slack, relative to δ, protecting boundary firings
/// against accumulated rounding.
const CROSSING_TOL: f64 = 1e-12;

/// Parameters of the online amplitude estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    /// EWMA weight on the newest implied-amplitude observation.
    pub alpha1: f64,
    /// Weight on the running dispersion in the one-step forecast.
    pub alpha2: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig { alpha1: DEFAULT_ALPHA1, alpha2: DEFAULT_ALPHA2 }
    }
}

/// Uniform bias grid. Adaptive biases are snapped *up* onto this grid so a
/// small integer index travels with the stream instead of a float.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasGrid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl BiasGrid {
    /// Grid spanning `[β, β + 256·Δ_b]` with `Δ_b = c_max / 255`, i.e. the
    /// level `β + c_max` sits exactly on the grid with one spare level
    /// above it. A degenerate amplitude bound falls back to a unit span.
    pub fn for_amplitude(beta: f64, c_max: f64) -> Self {
        let scale = if c_max > 0.0 { c_max } else { 1.0 };
        let step = scale / (BIAS_GRID_STEPS - 1) as f64;
        BiasGrid {
            min: beta,
            max: beta + BIAS_GRID_STEPS as f64 * step,
            step,
        }
    }

    /// Like [`BiasGrid::for_amplitude`], but with the top of the grid
    /// lowered to the largest level not exceeding `cap` (at least the base
    /// level survives). Used to pin the adaptive bias under a fixed-bias
    /// reference for rate comparisons.
    pub fn for_amplitude_capped(beta: f64, c_max: f64, cap: Option<f64>) -> Self {
        let mut grid = Self::for_amplitude(beta, c_max);
        if let Some(cap) = cap {
            let top = ((cap - grid.min) / grid.step + 1e-9).floor();
            let top = top.clamp(0.0, BIAS_GRID_STEPS as f64);
            grid.max = grid.min + top * grid.step;
        }
        grid
    }

    /// Single-level grid used for fixed-bias trains.
    pub fn fixed(bias: f64) -> Self {
        BiasGrid { min: bias, max: bias, step: 1.0 }
    }

    /// Number of representable levels.
    pub fn levels(&self) -> usize {
        ((self.max - self.min) / self.step).round() as usize + 1
    }

    /// Exact value of level `idx`.
    pub fn value(&self, idx: u16) -> f64 {
        self.min + f64::from(idx) * self.step
    }

    /// Smallest grid level at or above `target`, clamped to the grid.
    pub fn snap_up(&self, target: f64) -> (u16, f64) {
        let max_idx = (self.levels() - 1) as i64;
        let raw = ((target - self.min) / self.step - 1e-9).ceil() as i64;
        let idx = raw.clamp(0, max_idx) as u16;
        (idx, self.value(idx))
    }
}

/// Encoder operating mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EncoderMode {
    /// Fixed bias for the whole run; requires `bias > c_max`.
    IfTem { bias: f64 },
    /// Adaptive bias: margin `beta` above the estimated amplitude, with the
    /// estimator window (used for success accounting) and EWMA parameters.
    AifTem { beta: f64, window: usize, map: MapConfig },
    /// Adaptive bias driven by the true look-ahead window maximum
    /// (clairvoyant reference). `lookahead = None` defaults to κδ/β.
    Genie { beta: f64, lookahead: Option<f64> },
}

/// Full encoder configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kappa: f64,
    pub delta: f64,
    pub mode: EncoderMode,
    /// Simulation grid step; `None` picks κδ / (50·(b_ref + c_max)).
    pub sim_step: Option<f64>,
    /// Encoding start time (must lie in the signal horizon).
    pub t_start: f64,
    /// Encoding end; `None` runs to the signal horizon end.
    pub t_end: Option<f64>,
    /// Polish each crossing against the exact integral (default). Turning
    /// this off exposes the raw O(dt²) grid scheme, which is only useful
    /// for step-refinement studies.
    pub refine_firings: bool,
    /// Amplitude bound used to build the bias grid and seed the estimator;
    /// `None` uses the signal's own bound. Lets callers substitute e.g. an
    /// energy-derived bound for the empirical one.
    pub amplitude_hint: Option<f64>,
    /// Hard ceiling on adaptive biases: the grid top is lowered to the
    /// largest level not exceeding this value. Used for rate comparisons
    /// against a fixed-bias encoder.
    pub bias_cap: Option<f64>,
}

impl EncoderConfig {
    pub fn new(kappa: f64, delta: f64, mode: EncoderMode) -> Self {
        EncoderConfig {
            kappa,
            delta,
            mode,
            sim_step: None,
            t_start: 0.0,
            t_end: None,
            refine_firings: true,
            amplitude_hint: None,
            bias_cap: None,
        }
    }
}

/// Train metadata: how the biases were produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TrainMode {
    /// Fixed bias; carries the amplitude bound the bias was validated
    /// against (used downstream for ratio and step computations).
    IfTem { bias: f64, c_max: f64 },
    /// Adaptive bias with margin `beta`. `genie` marks clairvoyant runs.
    AifTem {
        beta: f64,
        window: usize,
        alpha1: f64,
        alpha2: f64,
        genie: bool,
    },
}

impl TrainMode {
    pub fn beta(&self) -> Option<f64> {
        match self {
            TrainMode::AifTem { beta, .. } => Some(*beta),
            TrainMode::IfTem { .. } => None,
        }
    }
}

/// A spike train: strictly increasing firing times with the per-interval
/// biases that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrain {
    /// Integration start (reference time of the first interval).
    pub t0: f64,
    /// Firing times t_1 < t_2 < … < t_N.
    pub times: Vec<f64>,
    /// Bias b_n active on (t_{n−1}, t_n]; same length as `times`.
    pub biases: Vec<f64>,
    /// Grid index of each bias.
    pub bias_indices: Vec<u16>,
    pub bias_grid: BiasGrid,
    pub kappa: f64,
    pub delta: f64,
    pub mode: TrainMode,
    /// Per-interval amplitude estimates ĉ_n (adaptive runs; empty for
    /// fixed-bias trains). For genie runs this is the look-ahead maximum
    /// that set the interval's bias.
    pub amplitude_estimates: Vec<f64>,
}

impl SpikeTrain {
    pub fn len(&self) -> usize {
        self.times.len()
    }
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Firing intervals T_n = t_n − t_{n−1}.
    pub fn intervals(&self) -> Vec<f64> {
        let mut prev = self.t0;
        self.times
            .iter()
            .map(|&t| {
                let dt = t - prev;
                prev = t;
                dt
            })
            .collect()
    }

    /// `[t0, t_1, …, t_N]`.
    pub fn full_times(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.times.len() + 1);
        v.push(self.t0);
        v.extend_from_slice(&self.times);
        v
    }

    /// Reconstruction weights P_n = κδ − b_n·T_n.
    pub fn weights(&self) -> Vec<f64> {
        let kd = self.kappa * self.delta;
        self.intervals()
            .iter()
            .zip(&self.biases)
            .map(|(t, b)| kd - b * t)
            .collect()
    }

    /// Mean firing interval.
    pub fn mean_interval(&self) -> f64 {
        if self.times.is_empty() {
            return f64::NAN;
        }
        (self.times[self.times.len() - 1] - self.t0) / self.times.len() as f64
    }

    /// Empirical oversampling: firing rate relative to the Nyquist rate Ω/π.
    pub fn oversampling(&self, omega: f64) -> f64 {
        std::f64::consts::PI / (omega * self.mean_interval())
    }

    /// Largest threshold-identity defect |(1/κ)∫(x + b_n) − δ| over all
    /// intervals, evaluated with the signal's reference integrator.
    pub fn max_firing_defect(&self, signal: &BandlimitedSignal) -> Result<f64> {
        let mut worst = 0.0f64;
        let mut prev = self.t0;
        for (i, &t) in self.times.iter().enumerate() {
            let integral = signal.integrate(prev, t)?;
            let lhs = (integral + self.biases[i] * (t - prev)) / self.kappa;
            worst = worst.max((lhs - self.delta).abs());
            prev = t;
        }
        Ok(worst)
    }

    /// True amplitude bound per interval: dense-grid max of |x| over the
    /// trailing window `[t_{n−w}, t_n]` (clamped at t0), sampled at
    /// `per_nyquist` points per Nyquist period. `w = 1` gives the
    /// interval's own maximum.
    pub fn true_window_amplitudes(
        &self,
        signal: &BandlimitedSignal,
        w: usize,
        per_nyquist: usize,
    ) -> Vec<f64> {
        let full = self.full_times();
        let w = w.max(1);
        (1..full.len())
            .map(|n| {
                let lo = full[n.saturating_sub(w)];
                signal.dense_abs_max(lo, full[n], per_nyquist)
            })
            .collect()
    }

    /// Structural validation (after deserialization): monotone times,
    /// matching array lengths, biases on the stored grid.
    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.biases.len()
            || self.times.len() != self.bias_indices.len()
        {
            return Err(TemError::shape(format!(
                "length mismatch: {} times, {} biases, {} indices",
                self.times.len(),
                self.biases.len(),
                self.bias_indices.len()
            )));
        }
        if !self.amplitude_estimates.is_empty()
            && self.amplitude_estimates.len() != self.times.len()
        {
            return Err(TemError::shape(
                "amplitude estimate count does not match interval count",
            ));
        }
        let mut prev = self.t0;
        for (i, &t) in self.times.iter().enumerate() {
            if !(t > prev) {
                return Err(TemError::Decode {
                    index: i,
                    msg: format!("non-increasing firing time {t} after {prev}"),
                });
            }
            let expected = self.bias_grid.value(self.bias_indices[i]);
            if self.biases[i] != expected {
                return Err(TemError::Decode {
                    index: i,
                    msg: format!(
                        "bias {} is off-grid (index {} maps to {})",
                        self.biases[i], self.bias_indices[i], expected
                    ),
                });
            }
            prev = t;
        }
        if !(self.kappa > 0.0) || !(self.delta > 0.0) {
            return Err(TemError::config("κ and δ must be positive"));
        }
        Ok(())
    }
}

/// Online amplitude estimator state: EWMA level plus Welford dispersion
/// accumulators over the estimate history, and the shared bias grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapState {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
    /// Current amplitude estimate ĉ.
    pub c_hat: f64,
    /// Welford accumulators over the ĉ sequence.
    pub running_mean: f64,
    pub running_m2: f64,
    pub count: u64,
    pub grid: BiasGrid,
}

impl MapState {
    /// Fresh state: ĉ₀ = c_max, empty dispersion history, biases snapped
    /// onto `grid`.
    pub fn new(map: MapConfig, beta: f64, c_max: f64, grid: BiasGrid) -> Self {
        MapState {
            alpha1: map.alpha1,
            alpha2: map.alpha2,
            beta,
            c_hat: c_max,
            running_mean: 0.0,
            running_m2: 0.0,
            count: 0,
            grid,
        }
    }

    /// Initial bias b₁ = snap-up(c_max + β); uses ĉ₀ as the bound.
    pub fn initial_bias(&self) -> (u16, f64) {
        self.grid.snap_up(self.c_hat + self.beta)
    }

    /// Population standard deviation of the estimate history.
    pub fn dispersion(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.running_m2 / self.count as f64).sqrt()
        }
    }

    /// Consumes one completed interval (duration `t_n`, bias `b_n`) and
    /// returns the snapped bias for the next interval.
    ///
    /// The firing equation gives κδ/T_n − b_n as the mean of x over the
    /// interval; its magnitude is the amplitude observation z_n (the
    /// estimate targets max |x|, so the sign of the excursion is
    /// irrelevant and a signed mean would drag the bias below the signal
    /// on negative swings). The level update is an EWMA, the forecast
    /// adds `α₂` times the running dispersion, and the emitted bias is
    /// the forecast plus the margin β, snapped up onto the grid and
    /// clamped to its range.
    pub fn update(&mut self, interval: f64, bias: f64, kappa_delta: f64) -> (u16, f64) {
        let z = (kappa_delta / interval - bias).abs();
        self.c_hat = self.alpha1 * z + (1.0 - self.alpha1) * self.c_hat;
        // Welford push of the new estimate.
        self.count += 1;
        let d = self.c_hat - self.running_mean;
        self.running_mean += d / self.count as f64;
        self.running_m2 += d * (self.c_hat - self.running_mean);
        let forecast = self.c_hat + self.alpha2 * self.dispersion();
        self.grid.snap_up(forecast + self.beta)
    }
}

/// Clairvoyant bias: dense-grid max of |x| over `[t, t + lookahead]`
/// (clipped to the horizon) plus the margin β, snapped up onto `grid`.
/// Returns the grid index, the bias value, and the window maximum used.
pub fn genie_bias(
    signal: &BandlimitedSignal,
    t: f64,
    beta: f64,
    lookahead: f64,
    grid: &BiasGrid,
) -> (u16, f64, f64) {
    let hi = (t + lookahead).min(signal.horizon().1);
    let c = signal.dense_abs_max(t, hi.max(t), 50);
    let (idx, value) = grid.snap_up(c + beta);
    (idx, value, c)
}

/// Diagnostics accumulated during an encoding run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EncodeDiagnostics {
    /// The run ended mid-interval (horizon reached before the next spike);
    /// the partial charge is dropped.
    pub truncated: bool,
    /// Leftover accumulator charge at the horizon end, as a fraction of δ.
    pub residual_fraction: f64,
    /// Intervals (1-based) where the signal was observed at or above the
    /// active bias on the simulation grid — adaptation failures.
    pub bias_violation_intervals: Vec<usize>,
    /// Minimum of b_n − |x(t)| observed on the simulation grid.
    pub min_margin: f64,
}

/// A finished encoding: the train plus run diagnostics.
#[derive(Debug, Clone)]
pub struct EncodeOutput {
    pub train: SpikeTrain,
    pub diagnostics: EncodeDiagnostics,
}

/// Encodes with a fixed bias (IF-TEM).
pub fn encode_iftem(signal: &BandlimitedSignal, config: &EncoderConfig) -> Result<EncodeOutput> {
    let bias = match config.mode {
        EncoderMode::IfTem { bias } => bias,
        _ => {
            return Err(TemError::config(
                "encode_iftem requires the fixed-bias mode",
            ))
        }
    };
    validate_common(signal, config)?;
    let c_max = signal.c_max();
    if !(bias > c_max) {
        return Err(TemError::config(format!(
            "fixed bias {bias} must exceed the amplitude bound {c_max}"
        )));
    }
    let dt = resolve_sim_step(config, bias, c_max)?;
    let grid = BiasGrid::fixed(bias);
    let mut source = |_n: usize, _interval: f64, _bias: f64, _t: f64| (0u16, bias, f64::NAN);
    let (train, diagnostics) = run_integrator(
        signal,
        config,
        dt,
        grid,
        (0, bias),
        &mut source,
        TrainMode::IfTem { bias, c_max },
        false,
    )?;
    Ok(EncodeOutput { train, diagnostics })
}

/// Encodes with the adaptive bias loop (AIF-TEM).
pub fn encode_aiftem(signal: &BandlimitedSignal, config: &EncoderConfig) -> Result<EncodeOutput> {
    let (beta, window, map) = match config.mode {
        EncoderMode::AifTem { beta, window, map } => (beta, window, map),
        _ => {
            return Err(TemError::config(
                "encode_aiftem requires the adaptive mode",
            ))
        }
    };
    validate_common(signal, config)?;
    if !(beta > 0.0) {
        return Err(TemError::config(format!("margin β must be positive, got {beta}")));
    }
    if window == 0 {
        return Err(TemError::config("estimator window must be at least 1"));
    }
    if !(0.0 < map.alpha1 && map.alpha1 <= 1.0) || !(map.alpha2 >= 0.0) {
        return Err(TemError::config(format!(
            "estimator weights out of range: α₁ = {}, α₂ = {}",
            map.alpha1, map.alpha2
        )));
    }
    let c_ref = config.amplitude_hint.unwrap_or_else(|| signal.c_max());
    let grid = BiasGrid::for_amplitude_capped(beta, c_ref, config.bias_cap);
    let mut state = MapState::new(map, beta, c_ref, grid);
    let dt = resolve_sim_step(config, grid.max, signal.c_max())?;
    let kd = config.kappa * config.delta;
    let b1 = state.initial_bias();
    let mut source = |_n: usize, interval: f64, bias: f64, _t: f64| {
        let (idx, b) = state.update(interval, bias, kd);
        (idx, b, state.c_hat)
    };
    let (train, diagnostics) = run_integrator(
        signal,
        config,
        dt,
        grid,
        b1,
        &mut source,
        TrainMode::AifTem {
            beta,
            window,
            alpha1: map.alpha1,
            alpha2: map.alpha2,
            genie: false,
        },
        true,
    )?;
    Ok(EncodeOutput { train, diagnostics })
}

/// Encodes with the clairvoyant bias source.
pub fn encode_genie(signal: &BandlimitedSignal, config: &EncoderConfig) -> Result<EncodeOutput> {
    let (beta, lookahead) = match config.mode {
        EncoderMode::Genie { beta, lookahead } => (beta, lookahead),
        _ => return Err(TemError::config("encode_genie requires the genie mode")),
    };
    validate_common(signal, config)?;
    if !(beta > 0.0) {
        return Err(TemError::config(format!("margin β must be positive, got {beta}")));
    }
    let kd = config.kappa * config.delta;
    let lookahead = lookahead.unwrap_or(kd / beta);
    let c_ref = config.amplitude_hint.unwrap_or_else(|| signal.c_max());
    let grid = BiasGrid::for_amplitude_capped(beta, c_ref, config.bias_cap);
    let dt = resolve_sim_step(config, grid.max, signal.c_max())?;
    let t_start = config.t_start;
    let (i1, b1, c1) = genie_bias(signal, t_start, beta, lookahead, &grid);
    let mut source = |_n: usize, _interval: f64, _bias: f64, t: f64| {
        let (idx, b, c) = genie_bias(signal, t, beta, lookahead, &grid);
        (idx, b, c)
    };
    let (mut train, diagnostics) = run_integrator(
        signal,
        config,
        dt,
        grid,
        (i1, b1),
        &mut source,
        TrainMode::AifTem {
            beta,
            window: 1,
            alpha1: 1.0,
            alpha2: 0.0,
            genie: true,
        },
        true,
    )?;
    // The integrator records the estimate that produced each *next* bias;
    // the first interval's window maximum is known only here.
    if !train.amplitude_estimates.is_empty() {
        train.amplitude_estimates[0] = c1;
    }
    Ok(EncodeOutput { train, diagnostics })
}

fn validate_common(signal: &BandlimitedSignal, config: &EncoderConfig) -> Result<()> {
    if !(config.kappa > 0.0) || !(config.delta > 0.0) {
        return Err(TemError::config(format!(
            "κ and δ must be positive (κ = {}, δ = {})",
            config.kappa, config.delta
        )));
    }
    let (lo, hi) = signal.horizon();
    let t_end = config.t_end.unwrap_or(hi);
    if config.t_start < lo - 1e-12 || t_end > hi + 1e-12 || !(t_end > config.t_start) {
        return Err(TemError::range(format!(
            "encoding span [{}, {t_end}] must lie inside the signal horizon [{lo}, {hi}]",
            config.t_start
        )));
    }
    Ok(())
}

fn resolve_sim_step(config: &EncoderConfig, b_ref: f64, c_max: f64) -> Result<f64> {
    let kd = config.kappa * config.delta;
    let denom = b_ref + c_max;
    let coarse_limit = kd / (10.0 * denom);
    match config.sim_step {
        Some(dt) => {
            if !(dt > 0.0) {
                return Err(TemError::config(format!("sim step must be positive, got {dt}")));
            }
            if dt > coarse_limit {
                return Err(TemError::config(format!(
                    "sim step {dt} too coarse; must be ≤ κδ/(10(b+c)) = {coarse_limit}"
                )));
            }
            Ok(dt)
        }
        None => Ok(kd / (50.0 * denom)),
    }
}

/// Shared integrator loop. `bias_source` is called after each firing with
/// `(n, T_n, b_n, t_n)` and returns the next `(index, bias, estimate)`.
#[allow(clippy::too_many_arguments)]
fn run_integrator(
    signal: &BandlimitedSignal,
    config: &EncoderConfig,
    dt: f64,
    grid: BiasGrid,
    first_bias: (u16, f64),
    bias_source: &mut dyn FnMut(usize, f64, f64, f64) -> (u16, f64, f64),
    mode: TrainMode,
    track_estimates: bool,
) -> Result<(SpikeTrain, EncodeDiagnostics)> {
    let kappa = config.kappa;
    let delta = config.delta;
    let t_start = config.t_start;
    let t_end = config.t_end.unwrap_or(signal.horizon().1);

    let mut times = Vec::new();
    let mut biases = Vec::new();
    let mut indices = Vec::new();
    let mut estimates = Vec::new();

    let mut diagnostics = EncodeDiagnostics {
        truncated: false,
        residual_fraction: 0.0,
        bias_violation_intervals: Vec::new(),
        min_margin: f64::INFINITY,
    };

    let (mut bias_idx, mut bias) = first_bias;
    let mut estimate = f64::NAN;
    let mut interval_violated = false;

    let mut t = t_start;
    let mut interval_start = t_start;
    let mut y = 0.0f64;
    let mut f_prev = signal.eval_unchecked(t) + bias;
    diagnostics.min_margin = diagnostics.min_margin.min(bias - (f_prev - bias).abs());

    // Emergency cap: no physical run needs more steps than span/dt plus a
    // step per firing; anything beyond indicates a stuck configuration.
    let max_steps = (((t_end - t_start) / dt).ceil() as usize + 16) * 4;
    let mut steps = 0usize;

    while t < t_end {
        steps += 1;
        if steps > max_steps {
            return Err(TemError::config(
                "integrator exceeded its step budget; configuration appears stuck",
            ));
        }
        let t_next = (t + dt).min(t_end);
        let h = t_next - t;
        let x_next = signal.eval_unchecked(t_next);
        let f_next = x_next + bias;
        let margin = bias - x_next.abs();
        diagnostics.min_margin = diagnostics.min_margin.min(margin);
        if margin <= 0.0 {
            interval_violated = true;
        }
        let y_inc = 0.5 * h * (f_prev + f_next) / kappa;

        if y + y_inc >= delta * (1.0 - CROSSING_TOL) {
            // Crossing inside this step: quadratic sub-step solve.
            let remaining = kappa * (delta - y);
            let a_coef = 0.5 * (f_next - f_prev) / h;
            let b_coef = f_prev;
            let disc = (b_coef * b_coef + 4.0 * a_coef * remaining).max(0.0);
            let denom = b_coef + disc.sqrt();
            let tau = if denom.abs() > 1e-300 {
                (2.0 * remaining / denom).clamp(0.0, h)
            } else {
                h
            };
            let mut t_fire = t + tau;
            if config.refine_firings {
                match refine_crossing(
                    signal,
                    interval_start,
                    bias,
                    kappa,
                    delta,
                    t,
                    t_next,
                    t_fire,
                    t_end,
                ) {
                    Some(s) => t_fire = s,
                    None => {
                        // The exact integral shows no crossing before the
                        // horizon (trapezoidal overshoot); keep stepping.
                        y += y_inc;
                        t = t_next;
                        f_prev = f_next;
                        continue;
                    }
                }
            }
            t_fire = t_fire.min(t_end);
            if !(t_fire > interval_start) {
                return Err(TemError::config(
                    "degenerate firing interval; sim step or threshold too small",
                ));
            }

            let interval = t_fire - interval_start;
            times.push(t_fire);
            biases.push(bias);
            indices.push(bias_idx);
            if track_estimates {
                estimates.push(estimate);
            }
            if interval_violated {
                diagnostics.bias_violation_intervals.push(times.len());
            }
            interval_violated = false;

            let n = times.len();
            let (ni, nb, ne) = bias_source(n, interval, bias, t_fire);
            bias_idx = ni;
            bias = nb;
            // The estimate reported by the source belongs to the *next*
            // interval's bias decision for genie runs, and to the completed
            // interval for the EWMA tracker; both are aligned below.
            if track_estimates {
                let last = estimates.len() - 1;
                match mode {
                    TrainMode::AifTem { genie: false, .. } => estimates[last] = ne,
                    _ => estimate = ne,
                }
            }

            y = 0.0;
            t = t_fire;
            interval_start = t_fire;
            f_prev = signal.eval_unchecked(t) + bias;
        } else {
            y += y_inc;
            t = t_next;
            f_prev = f_next;
        }
    }

    diagnostics.residual_fraction = y / delta;
    diagnostics.truncated = y > 1e-9 * delta;

    let train = SpikeTrain {
        t0: t_start,
        times,
        biases,
        bias_indices: indices,
        bias_grid: grid,
        kappa,
        delta,
        mode,
        amplitude_estimates: estimates,
    };
    Ok((train, diagnostics))
}

/// Safeguarded Newton polish of a firing time.
///
/// Solves F(s) = (∫ x + b·(s − t₀))/κ − δ = 0 near the grid bracket
/// `[lo, hi]` using the exact signal integral, falling back to bisection
/// whenever Newton leaves the bracket or the derivative degenerates. When
/// the trapezoidal detector overshot and the exact integral crosses
/// slightly outside the step, the bracket is widened (left to the interval
/// start, right towards `cap`); `None` means no crossing exists before
/// `cap`. Converges to ~machine precision in the threshold identity.
#[allow(clippy::too_many_arguments)]
fn refine_crossing(
    signal: &BandlimitedSignal,
    interval_start: f64,
    bias: f64,
    kappa: f64,
    delta: f64,
    lo: f64,
    hi: f64,
    guess: f64,
    cap: f64,
) -> Option<f64> {
    let f = |s: f64| -> f64 {
        (signal.integrate_unchecked(interval_start, s) + bias * (s - interval_start)) / kappa
            - delta
    };
    let tol_f = 1e-14 * delta;
    // Boundary acceptance: a residual this small at the horizon still
    // counts as a firing (sub-rounding charge).
    let accept = 1e-11 * delta;

    let mut b = hi.min(cap);
    let mut fb = f(b);
    let step = (hi - lo).max(1e-300);
    let mut extensions = 0;
    while fb < -accept {
        if b >= cap || extensions >= 64 {
            return None;
        }
        b = (b + step).min(cap);
        fb = f(b);
        extensions += 1;
    }
    if fb <= 0.0 {
        // Within acceptance slack of zero at the right edge.
        return Some(b);
    }
    let mut a = lo;
    if f(a) > 0.0 {
        // Crossing earlier than the step start; the interval start always
        // has F = −δ < 0.
        a = interval_start;
    }

    let mut s = guess.clamp(a, b);
    for _ in 0..64 {
        let fs = f(s);
        if fs.abs() <= tol_f {
            return Some(s);
        }
        if fs < 0.0 {
            a = s;
        } else {
            b = s;
        }
        let deriv = (signal.eval_unchecked(s) + bias) / kappa;
        let newton = if deriv.abs() > 1e-300 { s - fs / deriv } else { f64::NAN };
        s = if newton.is_finite() && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        if (b - a).abs() <= f64::EPSILON * s.abs().max(1e-6) {
            return Some(s);
        }
    }
    Some(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{BandlimitedSignal, SineSegment};
    use std::f64::consts::PI;

    fn zero_signal(omega: f64, half_span: f64) -> BandlimitedSignal {
        BandlimitedSignal::sinc_series(omega, vec![0.0])
            .unwrap()
            .with_horizon(-half_span, half_span)
            .unwrap()
    }

    #[test]
    fn zero_signal_fires_uniformly_at_kappa_delta_over_bias() {
        // κ = 0.5, δ = 0.02, b = 1 → T = κδ/b = 0.01 s exactly; one second
        // of encoding yields 100 spikes.
        let sig = zero_signal(2.0 * PI * 10.0, 1.5);
        let mut config = EncoderConfig::new(
            0.5,
            0.02,
            EncoderMode::IfTem { bias: 1.0 },
        );
        config.t_start = 0.0;
        config.t_end = Some(1.0);
        let out = encode_iftem(&sig, &config).unwrap();
        assert_eq!(out.train.len(), 100, "expected exactly 100 spikes");
        for (n, dt) in out.train.intervals().iter().enumerate() {
            assert!(
                (dt - 0.01).abs() < 1e-9 * 0.01,
                "interval {n} = {dt}, want 0.01"
            );
        }
        assert!(!out.diagnostics.truncated);
    }

    #[test]
    fn iftem_threshold_identity_holds_to_high_precision() {
        let omega = 2.0 * PI * 10.0;
        let sig = BandlimitedSignal::synthesize_random(omega, 2, (-1.0, 1.0), 11).unwrap();
        let bias = sig.c_max() + 0.5;
        let config = EncoderConfig {
            t_start: sig.horizon().0,
            ..EncoderConfig::new(0.5, 0.02, EncoderMode::IfTem { bias })
        };
        let out = encode_iftem(&sig, &config).unwrap();
        assert!(out.train.len() > 10);
        let defect = out.train.max_firing_defect(&sig).unwrap();
        assert!(
            defect <= 1e-10 * config.delta,
            "threshold defect {defect} vs δ = {}",
            config.delta
        );
    }

    #[test]
    fn iftem_intervals_satisfy_the_bias_amplitude_sandwich() {
        let omega = 2.0 * PI * 10.0;
        let sig = BandlimitedSignal::synthesize_random(omega, 2, (-1.0, 1.0), 5).unwrap();
        let (kappa, delta) = (0.5, 0.02);
        let bias = sig.c_max() + 0.4;
        let config = EncoderConfig {
            t_start: sig.horizon().0,
            ..EncoderConfig::new(kappa, delta, EncoderMode::IfTem { bias })
        };
        let out = encode_iftem(&sig, &config).unwrap();
        let c = sig.c_max();
        let (lo, hi) = (kappa * delta / (bias + c), kappa * delta / (bias - c));
        for dt in out.train.intervals() {
            assert!(dt >= lo * (1.0 - 1e-9) && dt <= hi * (1.0 + 1e-9), "T = {dt} outside [{lo}, {hi}]");
        }
    }

    #[test]
    fn iftem_rejects_insufficient_bias_and_coarse_step() {
        let sig = BandlimitedSignal::synthesize_random(40.0, 1, (-1.0, 1.0), 1).unwrap();
        let config = EncoderConfig {
            t_start: sig.horizon().0,
            ..EncoderConfig::new(0.5, 0.02, EncoderMode::IfTem { bias: sig.c_max() * 0.5 })
        };
        assert!(matches!(encode_iftem(&sig, &config), Err(TemError::Config(_))));

        let bias = sig.c_max() + 1.0;
        let coarse = EncoderConfig {
            t_start: sig.horizon().0,
            sim_step: Some(1.0),
            ..EncoderConfig::new(0.5, 0.02, EncoderMode::IfTem { bias })
        };
        assert!(matches!(encode_iftem(&sig, &coarse), Err(TemError::Config(_))));
    }

    #[test]
    fn bias_grid_snaps_up_and_round_trips() {
        let grid = BiasGrid::for_amplitude(0.1, 2.0);
        assert_eq!(grid.levels(), 257);
        // β + c_max sits exactly on the grid (index 255).
        let (idx, v) = grid.snap_up(2.1);
        assert_eq!(idx, 255);
        assert!((v - 2.1).abs() < 1e-12);
        // Snapping never goes below the target (beyond rounding slack).
        for k in 0..40 {
            let target = 0.1 + 2.2 * (k as f64) / 39.0;
            let (i, val) = grid.snap_up(target);
            assert!(val + 1e-9 * grid.step >= target.min(grid.max));
            assert_eq!(val, grid.value(i));
        }
        // Below-range targets clamp to the floor, above-range to the top.
        assert_eq!(grid.snap_up(-5.0).0, 0);
        assert_eq!(grid.snap_up(99.0).0, 256);
    }

    #[test]
    fn capped_grid_tops_out_at_the_cap_level() {
        let beta = 0.2;
        let c = 1.02;
        // A cap of β + c lands exactly on level 255, dropping the spare top.
        let grid = BiasGrid::for_amplitude_capped(beta, c, Some(beta + c));
        assert_eq!(grid.levels(), 256);
        assert!((grid.max - (beta + c)).abs() < 1e-12);
        // Snapping far above the cap clamps to it.
        assert_eq!(grid.snap_up(99.0).1, grid.max);
        // No cap leaves the grid unchanged.
        assert_eq!(
            BiasGrid::for_amplitude_capped(beta, c, None),
            BiasGrid::for_amplitude(beta, c)
        );
    }

    #[test]
    fn map_update_matches_hand_computed_sequence() {
        // Feed two intervals through the estimator and check the EWMA,
        // Welford dispersion, and snapped bias against direct arithmetic.
        let beta = 0.2;
        let c0 = 1.0;
        let kd = 0.01;
        let map = MapConfig { alpha1: 0.9, alpha2: 0.5 };
        let mut state = MapState::new(map, beta, c0, BiasGrid::for_amplitude(beta, c0));

        let (_, b1) = state.initial_bias();
        assert!(b1 >= c0 + beta - 1e-12);

        // Interval 1: T = 0.008, bias b1 → z₁ = −b1 + 0.01/0.008.
        let z1 = -b1 + kd / 0.008;
        let c1 = 0.9 * z1 + 0.1 * c0;
        let (_, b2) = state.update(0.008, b1, kd);
        assert!((state.c_hat - c1).abs() < 1e-12);
        // One sample → dispersion 0 → forecast = ĉ₁.
        let want_b2 = state.grid.snap_up(c1 + beta).1;
        assert_eq!(b2, want_b2);

        // Interval 2: T = 0.012 → z₂, EWMA, two-sample population std.
        let z2 = -b2 + kd / 0.012;
        let c2 = 0.9 * z2 + 0.1 * c1;
        let mean = 0.5 * (c1 + c2);
        let s2 = (((c1 - mean).powi(2) + (c2 - mean).powi(2)) / 2.0).sqrt();
        let (_, b3) = state.update(0.012, b2, kd);
        assert!((state.c_hat - c2).abs() < 1e-12);
        assert!((state.dispersion() - s2).abs() < 1e-12);
        let want_b3 = state.grid.snap_up(c2 + 0.5 * s2 + beta).1;
        assert_eq!(b3, want_b3);
    }

    #[test]
    fn aiftem_on_zero_signal_settles_at_the_margin_bias() {
        let sig = zero_signal(2.0 * PI * 10.0, 1.0);
        let beta = 0.25;
        let config = EncoderConfig {
            t_start: 0.0,
            t_end: Some(0.9),
            ..EncoderConfig::new(
                0.5,
                0.02,
                EncoderMode::AifTem { beta, window: 1, map: MapConfig::default() },
            )
        };
        let out = encode_aiftem(&sig, &config).unwrap();
        assert!(out.train.len() > 5);
        let expected = 0.5 * 0.02 / beta;
        // After the first interval the estimate collapses to zero and the
        // bias sits at the grid floor β, giving uniform firing at κδ/β.
        for (n, dt) in out.train.intervals().iter().enumerate().skip(2) {
            assert!(
                (dt - expected).abs() < 1e-9 * expected,
                "interval {n} = {dt}, want {expected}"
            );
            assert_eq!(out.train.biases[n], beta);
        }
        assert!(out.train.max_firing_defect(&sig).unwrap() < 1e-10 * config.delta);
    }

    #[test]
    fn aiftem_threshold_identity_and_structure() {
        let omega = 2.0 * PI * 20.0;
        let sig = BandlimitedSignal::synthesize_random(omega, 5, (-1.0, 1.0), 21).unwrap();
        let config = EncoderConfig {
            t_start: sig.horizon().0,
            ..EncoderConfig::new(
                0.24,
                0.01,
                EncoderMode::AifTem { beta: 0.1, window: 5, map: MapConfig::default() },
            )
        };
        let out = encode_aiftem(&sig, &config).unwrap();
        let train = &out.train;
        assert!(train.len() > 20);
        train.validate().unwrap();
        assert_eq!(train.amplitude_estimates.len(), train.len());
        let defect = train.max_firing_defect(&sig).unwrap();
        assert!(defect < 1e-9 * config.delta, "defect {defect}");
        // Biases stay within the grid span.
        for &b in &train.biases {
            assert!(b >= train.bias_grid.min - 1e-12 && b <= train.bias_grid.max + 1e-12);
        }
    }

    #[test]
    fn genie_bias_dominates_the_interval_amplitude() {
        let omega = 2.0 * PI * 10.0;
        let sig = BandlimitedSignal::synthesize_random(omega, 2, (-1.0, 1.0), 33).unwrap();
        let beta = 0.3;
        let config = EncoderConfig {
            t_start: sig.horizon().0,
            ..EncoderConfig::new(0.5, 0.02, EncoderMode::Genie { beta, lookahead: None })
        };
        let out = encode_genie(&sig, &config).unwrap();
        let train = &out.train;
        assert!(train.len() > 10);
        let true_max = train.true_window_amplitudes(&sig, 1, 200);
        for (n, (&b, &c)) in train.biases.iter().zip(&true_max).enumerate() {
            assert!(
                b >= c + beta - 1e-6,
                "interval {n}: genie bias {b} below window max {c} + β"
            );
        }
        assert!(out.diagnostics.bias_violation_intervals.is_empty());
    }

    #[test]
    fn truncated_run_reports_partial_charge() {
        // A horizon too short for a single spike leaves everything in the
        // accumulator.
        let sig = zero_signal(40.0, 1.0);
        let config = EncoderConfig {
            t_start: 0.0,
            t_end: Some(0.004), // T would be 0.01
            ..EncoderConfig::new(0.5, 0.02, EncoderMode::IfTem { bias: 1.0 })
        };
        let out = encode_iftem(&sig, &config).unwrap();
        assert!(out.train.is_empty());
        assert!(out.diagnostics.truncated);
        assert!((out.diagnostics.residual_fraction - 0.4).abs() < 1e-6);
    }

    #[test]
    fn grid_scheme_refines_quadratically_in_the_sim_step() {
        // With polishing off, halving the step should shrink firing-time
        // errors by ~4×: successive-halving shift ratios near 4.
        let omega = 2.0 * PI * 10.0;
        let sig = BandlimitedSignal::segmented_sine(
            omega,
            vec![SineSegment { amplitude: 0.8, start: 0.0, end: 0.35 }],
        )
        .unwrap();
        let bias = 1.1;
        let (kappa, delta) = (0.5, 0.02);
        let dt0 = kappa * delta / (20.0 * (bias + sig.c_max()));
        let run = |dt: f64| {
            let config = EncoderConfig {
                t_start: 0.0,
                sim_step: Some(dt),
                refine_firings: false,
                ..EncoderConfig::new(kappa, delta, EncoderMode::IfTem { bias })
            };
            encode_iftem(&sig, &config).unwrap().train.times
        };
        let t1 = run(dt0);
        let t2 = run(dt0 / 2.0);
        let t3 = run(dt0 / 4.0);
        assert_eq!(t1.len(), t2.len());
        assert_eq!(t2.len(), t3.len());
        let max_shift = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max)
        };
        let s12 = max_shift(&t1, &t2);
        let s23 = max_shift(&t2, &t3);
        let ratio = s12 / s23;
        assert!(
            (3.5..=4.5).contains(&ratio),
            "refinement ratio {ratio} (shifts {s12}, {s23})"
        );
    }

    #[test]
    fn refined_and_unrefined_runs_agree_to_step_accuracy() {
        let omega = 2.0 * PI * 10.0;
        let sig = BandlimitedSignal::synthesize_random(omega, 2, (-0.8, 0.8), 9).unwrap();
        let bias = sig.c_max() + 0.6;
        let base = EncoderConfig {
            t_start: sig.horizon().0,
            ..EncoderConfig::new(0.5, 0.02, EncoderMode::IfTem { bias })
        };
        let refined = encode_iftem(&sig, &base).unwrap().train;
        let raw = encode_iftem(
            &sig,
            &EncoderConfig { refine_firings: false, ..base },
        )
        .unwrap()
        .train;
        assert_eq!(refined.len(), raw.len());
        for (a, b) in refined.times.iter().zip(&raw.times) {
            assert!((a - b).abs() < 1e-5, "refined {a} vs raw {b}");
        }
    }
}
