//! Log-mel filterbank front end with context splicing and subsampling.
//!
//! Audio is 8 kHz mono. Frames are 25 ms long with a 10 ms hop and no
//! padding, so a signal of `n` samples yields `(n - 200) / 80 + 1` frames.
//! Each frame is Hamming-windowed, zero-padded to a 256-point FFT, and its
//! power spectrum is projected onto 23 triangular HTK-mel filters spanning
//! 0 Hz to Nyquist. The log is taken after adding [`LOG_FLOOR`].
//!
//! Splicing concatenates every kept frame with its `[-7, 7]` neighbours
//! (edge frames repeated) and keeps every tenth frame starting at 0.

use std::path::Path;

use ndarray::{s, Array2};
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 8000;
pub const FRAME_LENGTH: usize = 200;
pub const FRAME_SHIFT: usize = 80;
pub const FFT_SIZE: usize = 256;
pub const NUM_MELS: usize = 23;
pub const LOG_FLOOR: f64 = 1e-10;
pub const CONTEXT: usize = 7;
pub const SUBSAMPLING: usize = 10;
/// `(2 * CONTEXT + 1) * NUM_MELS`
pub const SPLICED_DIM: usize = (2 * CONTEXT + 1) * NUM_MELS;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>) -> Self {
        Self {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Reads a PCM16 mono 8 kHz WAV file.
    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let wav_err = |source| Error::Wav {
            path: path.to_path_buf(),
            source,
        };
        let reader = hound::WavReader::open(path).map_err(wav_err)?;
        let spec = reader.spec();
        if spec.sample_format != hound::SampleFormat::Int
            || spec.bits_per_sample != 16
            || spec.channels != 1
            || spec.sample_rate != SAMPLE_RATE
        {
            return Err(Error::InvalidInput(format!(
                "{}: expected PCM16 mono {} Hz, got {:?} {}-bit {} channel(s) at {} Hz",
                path.display(),
                SAMPLE_RATE,
                spec.sample_format,
                spec.bits_per_sample,
                spec.channels,
                spec.sample_rate
            )));
        }
        let samples = reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(wav_err)?;
        Ok(Self::new(samples))
    }

    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let wav_err = |source| Error::Wav {
            path: path.to_path_buf(),
            source,
        };
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
        for &s in &self.samples {
            let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            writer.write_sample(v).map_err(wav_err)?;
        }
        writer.finalize().map_err(wav_err)
    }
}

/// Frame-synchronous features, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Array2<f64>,
    pub frame_shift_s: f64,
}

impl FeatureSequence {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}

pub fn hamming_window() -> Vec<f64> {
    (0..FRAME_LENGTH)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (FRAME_LENGTH - 1) as f64).cos())
        .collect()
}

pub fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * ((mel / 1127.0).exp() - 1.0)
}

/// Triangular filters over the `FFT_SIZE / 2 + 1` power-spectrum bins,
/// one row per mel band.
pub fn mel_filterbank() -> Array2<f64> {
    let bins = FFT_SIZE / 2 + 1;
    let nyquist = SAMPLE_RATE as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..NUM_MELS + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (NUM_MELS + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((NUM_MELS, bins));
    for m in 0..NUM_MELS {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * SAMPLE_RATE as f64 / FFT_SIZE as f64;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    fb
}

pub fn num_frames(num_samples: usize) -> usize {
    if num_samples < FRAME_LENGTH {
        0
    } else {
        (num_samples - FRAME_LENGTH) / FRAME_SHIFT + 1
    }
}

/// 23-band log-mel features at a 10 ms hop.
pub fn compute_logmel(wave: &Waveform) -> Result<FeatureSequence> {
    if wave.sample_rate != SAMPLE_RATE {
        return Err(Error::InvalidInput(format!(
            "expected {SAMPLE_RATE} Hz audio, got {} Hz",
            wave.sample_rate
        )));
    }
    let t = num_frames(wave.samples.len());
    if t == 0 {
        return Err(Error::InvalidInput(format!(
            "need at least {FRAME_LENGTH} samples, got {}",
            wave.samples.len()
        )));
    }
    let window = hamming_window();
    let fb = mel_filterbank();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(FFT_SIZE);
    let bins = FFT_SIZE / 2 + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
    let mut power = ndarray::Array1::<f64>::zeros(bins);
    let mut out = Array2::zeros((t, NUM_MELS));
    for frame in 0..t {
        let start = frame * FRAME_SHIFT;
        for (i, c) in buf.iter_mut().enumerate() {
            *c = if i < FRAME_LENGTH {
                Complex::new(wave.samples[start + i] as f64 * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for k in 0..bins {
            power[k] = buf[k].norm_sqr();
        }
        let energies = fb.dot(&power);
        out.row_mut(frame).assign(&energies.mapv(|e| (e + LOG_FLOOR).ln()));
    }
    Ok(FeatureSequence {
        frames: out,
        frame_shift_s: FRAME_SHIFT as f64 / SAMPLE_RATE as f64,
    })
}

/// Stacks `[-7, 7]` context around every tenth frame.
pub fn splice_and_subsample(feats: &FeatureSequence) -> Result<FeatureSequence> {
    let t = feats.num_frames();
    if t == 0 {
        return Err(Error::InvalidInput("no frames to splice".into()));
    }
    if feats.dim() != NUM_MELS {
        return Err(Error::InvalidInput(format!(
            "expected {NUM_MELS}-dim features, got {}",
            feats.dim()
        )));
    }
    let expected_shift = FRAME_SHIFT as f64 / SAMPLE_RATE as f64;
    if (feats.frame_shift_s - expected_shift).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "expected a {expected_shift} s frame shift, got {}",
            feats.frame_shift_s
        )));
    }
    let out_frames = t.div_ceil(SUBSAMPLING);
    let width = 2 * CONTEXT + 1;
    let mut out = Array2::zeros((out_frames, width * NUM_MELS));
    for row in 0..out_frames {
        let anchor = (row * SUBSAMPLING) as isize;
        for k in 0..width {
            let src = (anchor + k as isize - CONTEXT as isize).clamp(0, t as isize - 1) as usize;
            out.slice_mut(s![row, k * NUM_MELS..(k + 1) * NUM_MELS])
                .assign(&feats.frames.row(src));
        }
    }
    Ok(FeatureSequence {
        frames: out,
        frame_shift_s: feats.frame_shift_s * SUBSAMPLING as f64,
    })
}

/// Waveform to encoder-ready 345-dim frames at a 100 ms hop.
pub fn extract(wave: &Waveform) -> Result<FeatureSequence> {
    splice_and_subsample(&compute_logmel(wave)?)
}
