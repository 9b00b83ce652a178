//! Two-point waveform synthesis and the ratio vector.
//!
//! A capture is triggered at SOF and records the differential voltage at both
//! sampling points on one shared timeline. Each line is digitised separately
//! (common-mode level plus or minus half the differential) so a shared
//! common-mode disturbance cancels in the difference, as it does on a real
//! differential probe.

use std::f64::consts::TAU;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{voltage_at_sp, BusError, BusTopology, EcuId, EcuProfile, SamplingPoint, TapId};
use crate::can::{decode_frame, fingerprintable_region, BitStream, DecodeError, Mid};
use crate::seed::{self, Stream};

/// Common-mode level the lines sit around (volts).
pub const COMMON_MODE_V: f64 = 2.5;

#[derive(Debug, Error)]
pub enum AcquisitionError {
    #[error("invalid acquisition config: {0}")]
    Config(String),
    #[error("captured frame does not decode: {0}")]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("only {retained} usable ratio samples, need at least {required}")]
    InsufficientSignal { retained: usize, required: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionConfig {
    pub sample_rate_hz: u64,
    pub bit_rate: u64,
    pub adc_bits: u8,
    pub adc_min_v: f64,
    pub adc_max_v: f64,
    /// When false, samples bypass the ADC model entirely.
    pub quantize: bool,
    /// Independent Gaussian noise per sampling point (volts).
    pub noise_sigma_v: f64,
    /// Amplitude of the shared sinusoidal common-mode disturbance (volts).
    pub common_mode_amplitude_v: f64,
    pub common_mode_freq_hz: f64,
    /// Leading fraction of every bit left out of the mask.
    pub settle_fraction: f64,
    /// Minimum |V_b| for a sample to enter the ratio vector (volts).
    pub guard_v: f64,
    pub min_samples: usize,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            sample_rate_hz: 40_000_000,
            bit_rate: 500_000,
            adc_bits: 14,
            adc_min_v: 0.0,
            adc_max_v: 5.0,
            quantize: true,
            noise_sigma_v: 0.004,
            common_mode_amplitude_v: 0.0,
            common_mode_freq_hz: 50_000.0,
            settle_fraction: 0.1,
            guard_v: 0.5,
            min_samples: 50,
        }
    }
}

impl AcquisitionConfig {
    /// Noise-free, unquantised acquisition.
    pub fn ideal() -> Self {
        AcquisitionConfig {
            quantize: false,
            noise_sigma_v: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AcquisitionError> {
        let bad = |m: String| Err(AcquisitionError::Config(m));
        if self.bit_rate == 0 {
            return bad("bit_rate must be positive".into());
        }
        if self.sample_rate_hz < 2 * self.bit_rate {
            return bad(format!(
                "sample_rate_hz {} is below twice the bit rate {}",
                self.sample_rate_hz, self.bit_rate
            ));
        }
        if !(8..=16).contains(&self.adc_bits) {
            return bad(format!("adc_bits {} outside [8, 16]", self.adc_bits));
        }
        if !(self.adc_min_v.is_finite() && self.adc_max_v.is_finite() && self.adc_min_v < self.adc_max_v) {
            return bad("adc range must be finite with min < max".into());
        }
        if !(self.noise_sigma_v.is_finite() && self.noise_sigma_v >= 0.0) {
            return bad("noise_sigma_v must be non-negative".into());
        }
        if !(self.common_mode_amplitude_v.is_finite() && self.common_mode_amplitude_v >= 0.0) {
            return bad("common_mode_amplitude_v must be non-negative".into());
        }
        if !self.common_mode_freq_hz.is_finite() {
            return bad("common_mode_freq_hz must be finite".into());
        }
        if !(0.0..1.0).contains(&self.settle_fraction) {
            return bad("settle_fraction must lie in [0, 1)".into());
        }
        if !(self.guard_v.is_finite() && self.guard_v > 0.0) {
            return bad("guard_v must be positive".into());
        }
        Ok(())
    }

    pub fn quantization_step(&self) -> f64 {
        (self.adc_max_v - self.adc_min_v) / ((1u32 << self.adc_bits) - 1) as f64
    }
}

/// ADC model: clamp to range, round to the nearest of `2^adc_bits` levels.
pub fn quantize(volts: f64, acq: &AcquisitionConfig) -> f64 {
    if !acq.quantize {
        return volts;
    }
    let step = acq.quantization_step();
    let clamped = volts.clamp(acq.adc_min_v, acq.adc_max_v);
    acq.adc_min_v + ((clamped - acq.adc_min_v) / step).round() * step
}

/// Who is driving the bus for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmitter {
    /// Ground-truth label recorded with the capture.
    pub label: EcuId,
    pub tap: TapId,
    /// Nominal dominant differential drive (volts).
    pub drive_v: f64,
    pub jitter_sigma_v: f64,
}

impl Transmitter {
    pub fn from_profile(profile: &EcuProfile) -> Self {
        Transmitter {
            label: profile.ecu_id,
            tap: profile.tap,
            drive_v: profile.differential(),
            jitter_sigma_v: profile.jitter_sigma_v,
        }
    }
}

/// Simultaneous two-point recording of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformCapture {
    pub ecu_label: EcuId,
    pub mid: Mid,
    pub s_a: Vec<f64>,
    pub s_b: Vec<f64>,
    /// Sample indices belonging to fingerprintable bits, past the settle window.
    pub mask: Vec<usize>,
    pub sample_rate_hz: u64,
    pub bit_rate: u64,
}

impl WaveformCapture {
    pub fn len(&self) -> usize {
        self.s_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_a.is_empty()
    }

    pub fn bit_of_sample(&self, k: usize) -> usize {
        (k as u64 * self.bit_rate / self.sample_rate_hz) as usize
    }
}

pub fn synthesize_capture(
    topology: &BusTopology,
    profile: &EcuProfile,
    bits: &BitStream,
    acq: &AcquisitionConfig,
    seed: u64,
) -> Result<WaveformCapture, AcquisitionError> {
    synthesize_transmission(topology, &Transmitter::from_profile(profile), bits, acq, seed)
}

/// Synthesizes the capture of `bits` driven by `tx`.
///
/// Draw order from the capture stream: frame drive jitter, common-mode phase,
/// then per sample the noise at `SP_a` and at `SP_b`. Zero-sigma terms draw
/// nothing, so a noise-free capture is exact.
pub fn synthesize_transmission(
    topology: &BusTopology,
    tx: &Transmitter,
    bits: &BitStream,
    acq: &AcquisitionConfig,
    seed: u64,
) -> Result<WaveformCapture, AcquisitionError> {
    acq.validate()?;
    let mid = decode_frame(bits)?.mid();
    let mut rng = seed::rng(seed, Stream::Capture);

    let drive = if tx.jitter_sigma_v > 0.0 {
        tx.drive_v + tx.jitter_sigma_v * rng.sample::<f64, _>(StandardNormal)
    } else {
        tx.drive_v
    };
    let va = voltage_at_sp(topology, tx.tap, drive, SamplingPoint::A)?;
    let vb = voltage_at_sp(topology, tx.tap, drive, SamplingPoint::B)?;
    let cm_phase = if acq.common_mode_amplitude_v > 0.0 {
        rng.random::<f64>() * TAU
    } else {
        0.0
    };

    let mut fingerprintable = vec![false; bits.len()];
    for i in fingerprintable_region(bits) {
        fingerprintable[i] = true;
    }

    let fs = acq.sample_rate_hz;
    let br = acq.bit_rate;
    let total = ((bits.len() as u64 * fs).div_ceil(br)) as usize;
    let settle = (acq.settle_fraction * fs as f64).ceil() as u64;
    let sigma = acq.noise_sigma_v;

    let mut s_a = Vec::with_capacity(total);
    let mut s_b = Vec::with_capacity(total);
    let mut mask = Vec::with_capacity(total);
    for k in 0..total {
        let scaled = k as u64 * br;
        let bit = (scaled / fs) as usize;
        let phase = scaled % fs;
        let dominant = !bits.bits[bit];
        let (mut da, mut db) = if dominant { (va, vb) } else { (0.0, 0.0) };
        if sigma > 0.0 {
            da += sigma * rng.sample::<f64, _>(StandardNormal);
            db += sigma * rng.sample::<f64, _>(StandardNormal);
        }
        if acq.quantize {
            let cm = if acq.common_mode_amplitude_v > 0.0 {
                let t = k as f64 / fs as f64;
                acq.common_mode_amplitude_v * (TAU * acq.common_mode_freq_hz * t + cm_phase).sin()
            } else {
                0.0
            };
            da = digitize_pair(da, cm, acq);
            db = digitize_pair(db, cm, acq);
        }
        s_a.push(da);
        s_b.push(db);
        if fingerprintable[bit] && phase >= settle {
            mask.push(k);
        }
    }

    Ok(WaveformCapture {
        ecu_label: tx.label,
        mid,
        s_a,
        s_b,
        mask,
        sample_rate_hz: fs,
        bit_rate: br,
    })
}

fn digitize_pair(differential: f64, common_mode: f64, acq: &AcquisitionConfig) -> f64 {
    let mid = COMMON_MODE_V + common_mode;
    quantize(mid + differential / 2.0, acq) - quantize(mid - differential / 2.0, acq)
}

/// Samplewise `S(a) / S(b)` over the mask, keeping only samples where the
/// transmitter is actually driving the bus.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioVector(pub Vec<f64>);

impl RatioVector {
    pub fn samples(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn compute_ratio_vector(
    capture: &WaveformCapture,
    guard_v: f64,
    min_samples: usize,
) -> Result<RatioVector, AcquisitionError> {
    let samples: Vec<f64> = capture
        .mask
        .iter()
        .filter(|&&k| capture.s_b[k].abs() >= guard_v)
        .map(|&k| capture.s_a[k] / capture.s_b[k])
        .collect();
    if samples.len() < min_samples {
        return Err(AcquisitionError::InsufficientSignal {
            retained: samples.len(),
            required: min_samples,
        });
    }
    Ok(RatioVector(samples))
}

/// Writes a capture as CSV: `time_s,v_spa_volts,v_spb_volts,bit_index,field_tag`.
pub fn write_trace<W: Write>(
    out: W,
    capture: &WaveformCapture,
    bits: &BitStream,
    provenance: Option<&str>,
) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(out);
    if let Some(p) = provenance {
        writeln!(out, "# {p}")?;
    }
    writeln!(out, "time_s,v_spa_volts,v_spb_volts,bit_index,field_tag")?;
    for k in 0..capture.len() {
        let bit = capture.bit_of_sample(k);
        writeln!(
            out,
            "{},{},{},{},{}",
            k as f64 / capture.sample_rate_hz as f64,
            capture.s_a[k],
            capture.s_b[k],
            bit,
            bits.field_map[bit].tag()
        )?;
    }
    out.flush()
}
