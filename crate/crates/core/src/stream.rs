//! Serialization of spike trains and quantized trains.
//!
//! Two interchangeable containers per type: a JSON document (debuggable,
//! diff-friendly) and a compact little-endian binary frame. Binary spike
//! trains use the magic `TEMS`, quantized trains `TEMQ`; both carry a
//! format version, the encoder parameters, and enough metadata to rebuild
//! the train without the source signal. Quantized interval codes are
//! bit-packed MSB-first at their exact code width; bias indices travel as
//! 16-bit integers.
//!
//! Readers validate everything they parse: magic, version, array lengths,
//! grid consistency, monotone firing times. A corrupt or truncated frame
//! yields a descriptive error, never a bogus train.

use std::io::{Read, Write};

use crate::encoder::{BiasGrid, SpikeTrain, TrainMode};
use crate::error::{Result, TemError};
use crate::quantizer::{QuantizedTrain, QuantizerSpec, SegmentQuant, MAX_CODE_BITS};

const TRAIN_MAGIC: &[u8; 4] = b"TEMS";
const QUANT_MAGIC: &[u8; 4] = b"TEMQ";
const FORMAT_VERSION: u8 = 1;
/// Refuse to allocate for absurd element counts from corrupt headers.
const MAX_ELEMENTS: usize = 100_000_000;

// ---------------------------------------------------------------------
// Bit packing
// ---------------------------------------------------------------------

/// Packs `codes` at `bits` bits each, MSB-first, zero-padding the tail
/// byte.
pub fn pack_codes(codes: &[u32], bits: u32) -> Vec<u8> {
    debug_assert!(bits >= 1 && bits <= MAX_CODE_BITS);
    let mask = (1u64 << bits) - 1;
    let mut out = Vec::with_capacity((codes.len() * bits as usize).div_ceil(8));
    let mut acc = 0u64;
    let mut nbits = 0u32;
    for &c in codes {
        acc = (acc << bits) | (u64::from(c) & mask);
        nbits += bits;
        while nbits >= 8 {
            out.push(((acc >> (nbits - 8)) & 0xFF) as u8);
            nbits -= 8;
        }
        acc &= (1u64 << nbits) - 1;
    }
    if nbits > 0 {
        out.push(((acc << (8 - nbits)) & 0xFF) as u8);
    }
    out
}

/// Unpacks `n` codes of `bits` bits each from an MSB-first byte stream.
pub fn unpack_codes(bytes: &[u8], bits: u32, n: usize) -> Result<Vec<u32>> {
    if bits == 0 || bits > MAX_CODE_BITS {
        return Err(TemError::format(format!("unsupported code width {bits}")));
    }
    let needed = (n * bits as usize).div_ceil(8);
    if bytes.len() < needed {
        return Err(TemError::format(format!(
            "code block truncated: {} bytes, need {needed}",
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(n);
    let mut acc = 0u64;
    let mut nbits = 0u32;
    let mut pos = 0usize;
    for _ in 0..n {
        while nbits < bits {
            acc = (acc << 8) | u64::from(bytes[pos]);
            pos += 1;
            nbits += 8;
        }
        out.push(((acc >> (nbits - bits)) & ((1u64 << bits) - 1)) as u32);
        nbits -= bits;
        acc &= if nbits == 0 { 0 } else { (1u64 << nbits) - 1 };
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// Little-endian primitives
// ---------------------------------------------------------------------

fn wr(w: &mut impl Write, bytes: &[u8], what: &str) -> Result<()> {
    w.write_all(bytes)
        .map_err(|e| TemError::format(format!("writing {what}: {e}")))
}

fn rd_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| TemError::format(format!("reading {what}: {e}")))
}

fn rd_u8(r: &mut impl Read, what: &str) -> Result<u8> {
    let mut b = [0u8; 1];
    rd_exact(r, &mut b, what)?;
    Ok(b[0])
}

fn rd_u16(r: &mut impl Read, what: &str) -> Result<u16> {
    let mut b = [0u8; 2];
    rd_exact(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

fn rd_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    rd_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn rd_f64(r: &mut impl Read, what: &str) -> Result<f64> {
    let mut b = [0u8; 8];
    rd_exact(r, &mut b, what)?;
    Ok(f64::from_le_bytes(b))
}

fn check_count(n: usize, what: &str) -> Result<()> {
    if n > MAX_ELEMENTS {
        return Err(TemError::format(format!(
            "{what} count {n} exceeds the sanity cap {MAX_ELEMENTS}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Mode block
// ---------------------------------------------------------------------

fn mode_tag(mode: &TrainMode) -> u8 {
    match mode {
        TrainMode::IfTem { .. } => 0,
        TrainMode::AifTem { genie: false, .. } => 1,
        TrainMode::AifTem { genie: true, .. } => 2,
    }
}

fn write_mode(w: &mut impl Write, mode: &TrainMode) -> Result<()> {
    match *mode {
        TrainMode::IfTem { bias, c_max } => {
            wr(w, &bias.to_le_bytes(), "mode bias")?;
            wr(w, &c_max.to_le_bytes(), "mode amplitude bound")?;
            wr(w, &0u32.to_le_bytes(), "mode window")?;
        }
        TrainMode::AifTem { beta, window, alpha1, alpha2, .. } => {
            wr(w, &beta.to_le_bytes(), "mode margin")?;
            wr(w, &alpha1.to_le_bytes(), "mode alpha1")?;
            wr(w, &alpha2.to_le_bytes(), "mode alpha2")?;
            wr(w, &(window as u32).to_le_bytes(), "mode window")?;
        }
    }
    Ok(())
}

fn read_mode(r: &mut impl Read, tag: u8) -> Result<TrainMode> {
    match tag {
        0 => {
            let bias = rd_f64(r, "mode bias")?;
            let c_max = rd_f64(r, "mode amplitude bound")?;
            let _ = rd_u32(r, "mode window")?;
            Ok(TrainMode::IfTem { bias, c_max })
        }
        1 | 2 => {
            let beta = rd_f64(r, "mode margin")?;
            let alpha1 = rd_f64(r, "mode alpha1")?;
            let alpha2 = rd_f64(r, "mode alpha2")?;
            let window = rd_u32(r, "mode window")? as usize;
            Ok(TrainMode::AifTem { beta, window, alpha1, alpha2, genie: tag == 2 })
        }
        other => Err(TemError::format(format!("unknown mode tag {other}"))),
    }
}

fn write_grid(w: &mut impl Write, grid: &BiasGrid) -> Result<()> {
    wr(w, &grid.min.to_le_bytes(), "grid min")?;
    wr(w, &grid.max.to_le_bytes(), "grid max")?;
    wr(w, &grid.step.to_le_bytes(), "grid step")
}

fn read_grid(r: &mut impl Read) -> Result<BiasGrid> {
    let min = rd_f64(r, "grid min")?;
    let max = rd_f64(r, "grid max")?;
    let step = rd_f64(r, "grid step")?;
    if !(step > 0.0) || !(max >= min) || !min.is_finite() || !max.is_finite() {
        return Err(TemError::format(format!(
            "invalid bias grid: min {min}, max {max}, step {step}"
        )));
    }
    Ok(BiasGrid { min, max, step })
}

// ---------------------------------------------------------------------
// Spike trains
// ---------------------------------------------------------------------

/// Writes a spike train as a binary `TEMS` frame.
pub fn write_train_binary(w: &mut impl Write, train: &SpikeTrain) -> Result<()> {
    train.validate()?;
    let has_estimates = !train.amplitude_estimates.is_empty();
    wr(w, TRAIN_MAGIC, "magic")?;
    wr(w, &[FORMAT_VERSION, mode_tag(&train.mode), u8::from(has_estimates), 0], "header")?;
    wr(w, &train.kappa.to_le_bytes(), "kappa")?;
    wr(w, &train.delta.to_le_bytes(), "delta")?;
    wr(w, &train.t0.to_le_bytes(), "t0")?;
    write_grid(w, &train.bias_grid)?;
    write_mode(w, &train.mode)?;
    wr(w, &(train.len() as u32).to_le_bytes(), "count")?;
    for &t in &train.times {
        wr(w, &t.to_le_bytes(), "firing time")?;
    }
    for &i in &train.bias_indices {
        wr(w, &i.to_le_bytes(), "bias index")?;
    }
    if has_estimates {
        for &e in &train.amplitude_estimates {
            wr(w, &e.to_le_bytes(), "amplitude estimate")?;
        }
    }
    Ok(())
}

/// Reads and validates a binary `TEMS` frame.
pub fn read_train_binary(r: &mut impl Read) -> Result<SpikeTrain> {
    let mut magic = [0u8; 4];
    rd_exact(r, &mut magic, "magic")?;
    if &magic != TRAIN_MAGIC {
        return Err(TemError::format(format!(
            "bad magic {magic:02x?}, expected \"TEMS\""
        )));
    }
    let version = rd_u8(r, "version")?;
    if version != FORMAT_VERSION {
        return Err(TemError::format(format!("unsupported version {version}")));
    }
    let tag = rd_u8(r, "mode tag")?;
    let has_estimates = rd_u8(r, "flags")? & 1 != 0;
    let _ = rd_u8(r, "padding")?;
    let kappa = rd_f64(r, "kappa")?;
    let delta = rd_f64(r, "delta")?;
    let t0 = rd_f64(r, "t0")?;
    let grid = read_grid(r)?;
    let mode = read_mode(r, tag)?;
    let n = rd_u32(r, "count")? as usize;
    check_count(n, "spike")?;
    let mut times = Vec::with_capacity(n);
    for _ in 0..n {
        times.push(rd_f64(r, "firing time")?);
    }
    let mut bias_indices = Vec::with_capacity(n);
    for _ in 0..n {
        bias_indices.push(rd_u16(r, "bias index")?);
    }
    let levels = grid.levels();
    for (i, &idx) in bias_indices.iter().enumerate() {
        if usize::from(idx) >= levels {
            return Err(TemError::Decode {
                index: i,
                msg: format!("bias index {idx} exceeds {levels} grid levels"),
            });
        }
    }
    let biases: Vec<f64> = bias_indices.iter().map(|&i| grid.value(i)).collect();
    let mut amplitude_estimates = Vec::new();
    if has_estimates {
        amplitude_estimates.reserve(n);
        for _ in 0..n {
            amplitude_estimates.push(rd_f64(r, "amplitude estimate")?);
        }
    }
    let train = SpikeTrain {
        t0,
        times,
        biases,
        bias_indices,
        bias_grid: grid,
        kappa,
        delta,
        mode,
        amplitude_estimates,
    };
    train.validate()?;
    Ok(train)
}

/// Writes a spike train as a JSON document.
pub fn write_train_json(w: &mut impl Write, train: &SpikeTrain) -> Result<()> {
    train.validate()?;
    serde_json::to_writer_pretty(w, train)
        .map_err(|e| TemError::format(format!("encoding train JSON: {e}")))
}

/// Reads and validates a JSON spike train.
pub fn read_train_json(r: &mut impl Read) -> Result<SpikeTrain> {
    let train: SpikeTrain = serde_json::from_reader(r)
        .map_err(|e| TemError::format(format!("parsing train JSON: {e}")))?;
    train.validate()?;
    Ok(train)
}

// ---------------------------------------------------------------------
// Quantized trains
// ---------------------------------------------------------------------

/// Writes a quantized train as a binary `TEMQ` frame.
pub fn write_quantized_binary(w: &mut impl Write, qt: &QuantizedTrain) -> Result<()> {
    if qt.codes.len() != qt.bias_indices.len() {
        return Err(TemError::shape(format!(
            "{} codes vs {} bias indices",
            qt.codes.len(),
            qt.bias_indices.len()
        )));
    }
    let bits = qt.spec.bits;
    if bits == 0 || bits > MAX_CODE_BITS {
        return Err(TemError::config(format!("unsupported code width {bits}")));
    }
    wr(w, QUANT_MAGIC, "magic")?;
    wr(w, &[FORMAT_VERSION, mode_tag(&qt.mode), bits as u8, 0], "header")?;
    wr(w, &qt.kappa.to_le_bytes(), "kappa")?;
    wr(w, &qt.delta.to_le_bytes(), "delta")?;
    wr(w, &qt.t0.to_le_bytes(), "t0")?;
    write_grid(w, &qt.bias_grid)?;
    write_mode(w, &qt.mode)?;
    wr(w, &(qt.saturated as u32).to_le_bytes(), "saturation count")?;
    wr(w, &(qt.codes.len() as u32).to_le_bytes(), "count")?;
    wr(w, &(qt.spec.segments.len() as u32).to_le_bytes(), "segment count")?;
    for seg in &qt.spec.segments {
        wr(w, &(seg.last_pulse as u32).to_le_bytes(), "segment end")?;
        wr(w, &seg.step.to_le_bytes(), "segment step")?;
        wr(w, &seg.t_min.to_le_bytes(), "segment offset")?;
    }
    wr(w, &pack_codes(&qt.codes, bits), "codes")?;
    for &i in &qt.bias_indices {
        wr(w, &i.to_le_bytes(), "bias index")?;
    }
    Ok(())
}

/// Reads and validates a binary `TEMQ` frame.
pub fn read_quantized_binary(r: &mut impl Read) -> Result<QuantizedTrain> {
    let mut magic = [0u8; 4];
    rd_exact(r, &mut magic, "magic")?;
    if &magic != QUANT_MAGIC {
        return Err(TemError::format(format!(
            "bad magic {magic:02x?}, expected \"TEMQ\""
        )));
    }
    let version = rd_u8(r, "version")?;
    if version != FORMAT_VERSION {
        return Err(TemError::format(format!("unsupported version {version}")));
    }
    let tag = rd_u8(r, "mode tag")?;
    let bits = u32::from(rd_u8(r, "code width")?);
    if bits == 0 || bits > MAX_CODE_BITS {
        return Err(TemError::format(format!("unsupported code width {bits}")));
    }
    let _ = rd_u8(r, "padding")?;
    let kappa = rd_f64(r, "kappa")?;
    let delta = rd_f64(r, "delta")?;
    let t0 = rd_f64(r, "t0")?;
    let grid = read_grid(r)?;
    let mode = read_mode(r, tag)?;
    let saturated = rd_u32(r, "saturation count")? as usize;
    let n = rd_u32(r, "count")? as usize;
    check_count(n, "code")?;
    let nsegs = rd_u32(r, "segment count")? as usize;
    check_count(nsegs, "segment")?;
    if nsegs == 0 {
        return Err(TemError::format("quantizer spec has no segments"));
    }
    let mut segments = Vec::with_capacity(nsegs);
    let mut prev_end = 0usize;
    for _ in 0..nsegs {
        let last_pulse = rd_u32(r, "segment end")? as usize;
        let step = rd_f64(r, "segment step")?;
        let t_min = rd_f64(r, "segment offset")?;
        if !(step > 0.0) || !step.is_finite() || !t_min.is_finite() {
            return Err(TemError::format(format!(
                "invalid segment: step {step}, offset {t_min}"
            )));
        }
        if last_pulse <= prev_end {
            return Err(TemError::format(
                "segment boundaries must be strictly increasing",
            ));
        }
        prev_end = last_pulse;
        segments.push(SegmentQuant { last_pulse, step, t_min });
    }
    if prev_end < n {
        return Err(TemError::format(format!(
            "segments cover {prev_end} pulses but the train has {n}"
        )));
    }
    let mut packed = vec![0u8; (n * bits as usize).div_ceil(8)];
    rd_exact(r, &mut packed, "codes")?;
    let codes = unpack_codes(&packed, bits, n)?;
    for (i, &c) in codes.iter().enumerate() {
        if c >= (1u32 << bits) {
            return Err(TemError::Decode {
                index: i,
                msg: format!("code {c} exceeds {} levels", 1u32 << bits),
            });
        }
    }
    let mut bias_indices = Vec::with_capacity(n);
    for _ in 0..n {
        bias_indices.push(rd_u16(r, "bias index")?);
    }
    let levels = grid.levels();
    for (i, &idx) in bias_indices.iter().enumerate() {
        if usize::from(idx) >= levels {
            return Err(TemError::Decode {
                index: i,
                msg: format!("bias index {idx} exceeds {levels} grid levels"),
            });
        }
    }
    Ok(QuantizedTrain {
        spec: QuantizerSpec { bits, segments },
        codes,
        bias_indices,
        bias_grid: grid,
        t0,
        kappa,
        delta,
        mode,
        saturated,
    })
}

/// Writes a quantized train as a JSON document.
pub fn write_quantized_json(w: &mut impl Write, qt: &QuantizedTrain) -> Result<()> {
    serde_json::to_writer_pretty(w, qt)
        .map_err(|e| TemError::format(format!("encoding quantized JSON: {e}")))
}

/// Reads a JSON quantized train.
pub fn read_quantized_json(r: &mut impl Read) -> Result<QuantizedTrain> {
    let qt: QuantizedTrain = serde_json::from_reader(r)
        .map_err(|e| TemError::format(format!("parsing quantized JSON: {e}")))?;
    if qt.codes.len() != qt.bias_indices.len() {
        return Err(TemError::shape(format!(
            "{} codes vs {} bias indices",
            qt.codes.len(),
            qt.bias_indices.len()
        )));
    }
    Ok(qt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{plan_segments, SegmentPolicy};
    use crate::encoder::{
        encode_aiftem, encode_genie, encode_iftem, EncoderConfig, EncoderMode, MapConfig,
    };
    use crate::quantizer::{dynamic_spec, quantize, AmplitudeSource};
    use crate::signal::BandlimitedSignal;
    use std::f64::consts::PI;

    fn trains() -> Vec<SpikeTrain> {
        let omega = 2.0 * PI * 15.0;
        let sig = BandlimitedSignal::synthesize_random(omega, 3, (-1.0, 1.0), 99).unwrap();
        let t_start = sig.horizon().0;
        let iftem = EncoderConfig {
            t_start,
            ..EncoderConfig::new(0.5, 0.02, EncoderMode::IfTem { bias: sig.c_max() + 0.7 })
        };
        let aif = EncoderConfig {
            t_start,
            ..EncoderConfig::new(
                0.24,
                0.01,
                EncoderMode::AifTem { beta: 0.2, window: 4, map: MapConfig::default() },
            )
        };
        let genie = EncoderConfig {
            t_start,
            ..EncoderConfig::new(0.24, 0.01, EncoderMode::Genie { beta: 0.2, lookahead: None })
        };
        vec![
            encode_iftem(&sig, &iftem).unwrap().train,
            encode_aiftem(&sig, &aif).unwrap().train,
            encode_genie(&sig, &genie).unwrap().train,
        ]
    }

    #[test]
    fn pack_unpack_round_trips_across_code_widths() {
        for bits in [1u32, 3, 7, 8, 11, 12, 16, 24, 30] {
            let mask = (1u64 << bits) - 1;
            let codes: Vec<u32> = (0..257u64)
                .map(|k| ((k * 2654435761) & mask) as u32)
                .collect();
            let packed = pack_codes(&codes, bits);
            assert_eq!(packed.len(), (codes.len() * bits as usize).div_ceil(8));
            let back = unpack_codes(&packed, bits, codes.len()).unwrap();
            assert_eq!(codes, back, "width {bits}");
        }
    }

    #[test]
    fn binary_train_round_trip_is_bit_exact() {
        for train in trains() {
            let mut buf = Vec::new();
            write_train_binary(&mut buf, &train).unwrap();
            let back = read_train_binary(&mut buf.as_slice()).unwrap();
            assert_eq!(train, back);
        }
    }

    #[test]
    fn json_train_round_trip_is_bit_exact() {
        for train in trains() {
            let mut buf = Vec::new();
            write_train_json(&mut buf, &train).unwrap();
            let back = read_train_json(&mut buf.as_slice()).unwrap();
            assert_eq!(train, back);
        }
    }

    #[test]
    fn quantized_round_trips_bit_exactly_in_both_containers() {
        let train = trains().remove(1);
        let windows = plan_segments(&train, SegmentPolicy::FixedCount { pulses: 9 }).unwrap();
        let spec = dynamic_spec(&train, &windows, 11, AmplitudeSource::Estimated).unwrap();
        let qt = quantize(&train, &spec).unwrap();

        let mut bin = Vec::new();
        write_quantized_binary(&mut bin, &qt).unwrap();
        let back = read_quantized_binary(&mut bin.as_slice()).unwrap();
        assert_eq!(qt, back);

        let mut js = Vec::new();
        write_quantized_json(&mut js, &qt).unwrap();
        let jback = read_quantized_json(&mut js.as_slice()).unwrap();
        assert_eq!(qt, jback);
    }

    #[test]
    fn corrupt_frames_are_rejected_with_format_errors() {
        let train = trains().remove(0);
        let mut buf = Vec::new();
        write_train_binary(&mut buf, &train).unwrap();

        // Wrong magic.
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_train_binary(&mut bad.as_slice()),
            Err(TemError::Format(_))
        ));

        // Unsupported version.
        let mut bad = buf.clone();
        bad[4] = 99;
        assert!(matches!(
            read_train_binary(&mut bad.as_slice()),
            Err(TemError::Format(_))
        ));

        // Truncation anywhere in the tail.
        for cut in [buf.len() - 1, buf.len() / 2, 9] {
            assert!(matches!(
                read_train_binary(&mut &buf[..cut]),
                Err(TemError::Format(_))
            ));
        }

        // Scrambled firing order must fail structural validation.
        let mut scrambled = train.clone();
        scrambled.times.swap(0, 1);
        let mut buf2 = Vec::new();
        assert!(write_train_binary(&mut buf2, &scrambled).is_err());
    }

    #[test]
    fn unknown_mode_tag_is_rejected() {
        let train = trains().remove(0);
        let mut buf = Vec::new();
        write_train_binary(&mut buf, &train).unwrap();
        buf[5] = 7; // mode tag byte
        assert!(matches!(
            read_train_binary(&mut buf.as_slice()),
            Err(TemError::Format(_))
        ));
    }
}
