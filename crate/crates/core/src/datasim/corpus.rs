use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::features::{Waveform, SAMPLE_RATE};

/// Source of single-speaker utterances.
pub trait UtteranceCorpus {
    fn speakers(&self) -> &[String];
    fn num_utterances(&self, speaker: usize) -> usize;
    fn utterance(&self, speaker: usize, index: usize) -> Result<Waveform>;
}

/// Spectral signature of a synthetic voice.
#[derive(Debug, Clone, PartialEq)]
pub struct VoiceProfile {
    /// Tone frequencies in Hz with relative amplitudes.
    pub partials: Vec<(f64, f64)>,
    pub noise_centre_hz: f64,
    pub noise_gain: f64,
    pub syllable_rate_hz: f64,
}

fn is_prime(n: usize) -> bool {
    n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| n % d != 0)
}

impl VoiceProfile {
    /// Profile `index` from a fixed grid of `grid` positions; distinct
    /// indices below `grid` get distinct band placements.
    pub fn from_grid(index: usize, grid: usize) -> Self {
        let g = grid.max(2);
        let pos = |mult: usize| ((index * mult) % g) as f64 / (g - 1) as f64;
        let low = 180.0 + 520.0 * pos(1);
        let mid = 900.0 + 1300.0 * pos(5);
        let high = 2400.0 + 1300.0 * pos(7);
        Self {
            partials: vec![(low, 1.0), (2.0 * low, 0.5), (mid, 0.6), (high, 0.35)],
            noise_centre_hz: 700.0 + 2600.0 * pos(3),
            noise_gain: 0.25,
            syllable_rate_hz: 3.0 + 3.0 * pos(2),
        }
    }
}

/// Deterministic tone-and-noise voices. Voice identities depend only on
/// the voice index, so two corpora with different seeds share voices but
/// render different utterances.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    names: Vec<String>,
    voices: Vec<VoiceProfile>,
    seed: u64,
    utterances_per_voice: usize,
    /// Utterance duration bounds in seconds.
    pub min_duration_s: f64,
    pub max_duration_s: f64,
}

impl SyntheticCorpus {
    pub fn new(num_voices: usize, seed: u64) -> Self {
        let mut grid = num_voices.max(11);
        while !is_prime(grid) {
            grid += 1;
        }
        Self {
            names: (0..num_voices).map(|i| format!("voice{i:02}")).collect(),
            voices: (0..num_voices).map(|i| VoiceProfile::from_grid(i, grid)).collect(),
            seed,
            utterances_per_voice: 10_000,
            min_duration_s: 0.5,
            max_duration_s: 2.0,
        }
    }

    pub fn voice(&self, speaker: usize) -> &VoiceProfile {
        &self.voices[speaker]
    }
}

/// Second-order band-pass, constant peak gain.
fn band_pass(input: &[f64], centre: f64, q: f64) -> Vec<f64> {
    let w0 = 2.0 * PI * centre / SAMPLE_RATE as f64;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let a1 = -2.0 * w0.cos() / a0;
    let a2 = (1.0 - alpha) / a0;
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    input
        .iter()
        .map(|&x| {
            let y = b0 * x + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = x;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

impl UtteranceCorpus for SyntheticCorpus {
    fn speakers(&self) -> &[String] {
        &self.names
    }

    fn num_utterances(&self, speaker: usize) -> usize {
        if speaker < self.names.len() {
            self.utterances_per_voice
        } else {
            0
        }
    }

    fn utterance(&self, speaker: usize, index: usize) -> Result<Waveform> {
        let voice = self
            .voices
            .get(speaker)
            .ok_or_else(|| Error::InvalidInput(format!("no speaker {speaker}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add((speaker as u64) << 32)
                .wrapping_add(index as u64),
        );
        let rate = SAMPLE_RATE as f64;
        let duration = rng.gen_range(self.min_duration_s..=self.max_duration_s);
        let n = (duration * rate) as usize;
        let pitch = 1.0 + rng.gen_range(-0.03..0.03);
        let level = 0.12 * 10f64.powf(rng.gen_range(-3.0..3.0) / 20.0);
        let syl_phase = rng.gen_range(0.0..2.0 * PI);
        let phases: Vec<f64> = voice.partials.iter().map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
        let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let noise = band_pass(&noise, voice.noise_centre_hz, 2.0);
        let fade = (0.02 * rate) as usize;
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                let tone: f64 = voice
                    .partials
                    .iter()
                    .zip(&phases)
                    .map(|(&(f, a), &ph)| a * (2.0 * PI * f * pitch * t + ph).sin())
                    .sum();
                let env = 0.6 + 0.4 * (2.0 * PI * voice.syllable_rate_hz * t + syl_phase).sin();
                let edge = i.min(n - 1 - i);
                let ramp = if edge < fade {
                    0.5 - 0.5 * (PI * edge as f64 / fade as f64).cos()
                } else {
                    1.0
                };
                (level * env * ramp * (0.5 * tone + voice.noise_gain * noise[i])) as f32
            })
            .collect();
        Ok(Waveform::new(samples))
    }
}

/// Utterances listed in a manifest of `speaker_id<TAB>wav_path` lines.
/// Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone)]
pub struct ManifestCorpus {
    names: Vec<String>,
    files: Vec<Vec<PathBuf>>,
}

impl ManifestCorpus {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        let mut files: Vec<Vec<PathBuf>> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let trimmed = line.trim_end();
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (spk, path) = trimmed.split_once('\t').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: "expected speaker_id<TAB>wav_path".into(),
            })?;
            if spk.is_empty() || path.is_empty() {
                return Err(Error::Parse {
                    line: n + 1,
                    message: "empty speaker id or path".into(),
                });
            }
            let path = base_dir.join(path);
            match names.iter().position(|s| s == spk) {
                Some(i) => files[i].push(path),
                None => {
                    names.push(spk.to_string());
                    files.push(vec![path]);
                }
            }
        }
        Ok(Self { names, files })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

impl UtteranceCorpus for ManifestCorpus {
    fn speakers(&self) -> &[String] {
        &self.names
    }

    fn num_utterances(&self, speaker: usize) -> usize {
        self.files.get(speaker).map_or(0, Vec::len)
    }

    fn utterance(&self, speaker: usize, index: usize) -> Result<Waveform> {
        let path = self
            .files
            .get(speaker)
            .and_then(|f| f.get(index))
            .ok_or_else(|| Error::InvalidInput(format!("no utterance {index} for speaker {speaker}")))?;
        Waveform::read_wav(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utterances_are_reproducible_and_bounded() {
        let c = SyntheticCorpus::new(4, 7);
        let a = c.utterance(2, 5).unwrap();
        assert_eq!(a, c.utterance(2, 5).unwrap());
        assert_ne!(a, c.utterance(2, 6).unwrap());
        let d = a.duration_s();
        assert!((0.5..=2.0).contains(&d));
        assert!(a.samples.iter().all(|s| s.abs() < 1.0));
        let other = SyntheticCorpus::new(4, 8);
        assert_eq!(c.voice(2), other.voice(2));
        assert_ne!(a, other.utterance(2, 5).unwrap());
    }

    #[test]
    fn grid_voices_are_distinct() {
        let c = SyntheticCorpus::new(12, 0);
        for i in 0..12 {
            for j in i + 1..12 {
                assert_ne!(c.voice(i), c.voice(j));
            }
        }
    }

    #[test]
    fn manifest_parsing() {
        let c = ManifestCorpus::parse("a\tx.wav\nb\ty.wav\n\na\tz.wav\n", Path::new("/data")).unwrap();
        assert_eq!(c.speakers(), &["a".to_string(), "b".to_string()]);
        assert_eq!(c.num_utterances(0), 2);
        assert_eq!(c.files[0][1], PathBuf::from("/data/z.wav"));
        assert!(matches!(
            ManifestCorpus::parse("a x.wav\n", Path::new(".")),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
