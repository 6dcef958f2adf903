//! Simulated multi-speaker conversations.
//!
//! Each speaker's utterances are laid on an independent timeline separated
//! by exponentially distributed silences; the speaker tracks are then summed.
//! A speaker in an `n`-speaker mixture contributes between `ceil(30 / n)` and
//! `floor(60 / n)` utterances.

mod corpus;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

pub use corpus::{ManifestCorpus, SyntheticCorpus, UtteranceCorpus, VoiceProfile};

use crate::error::{Error, Result};
use crate::features::{Waveform, SAMPLE_RATE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub speaker: String,
    pub onset: f64,
    pub duration: f64,
}

impl Segment {
    pub fn offset(&self) -> f64 {
        self.onset + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReferenceSegments {
    pub segments: Vec<Segment>,
}

impl ReferenceSegments {
    /// Speaker names ordered by their first onset.
    pub fn speakers(&self) -> Vec<String> {
        let mut order: Vec<&Segment> = self.segments.iter().collect();
        order.sort_by(|a, b| a.onset.total_cmp(&b.onset));
        let mut names: Vec<String> = Vec::new();
        for s in order {
            if !names.contains(&s.speaker) {
                names.push(s.speaker.clone());
            }
        }
        names
    }

    pub fn end(&self) -> f64 {
        self.segments.iter().map(Segment::offset).fold(0.0, f64::max)
    }
}

/// Seedable description of one simulated conversation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRecipe {
    pub n_speakers: usize,
    pub mean_silence_s: f64,
    pub seed: u64,
}

impl MixtureRecipe {
    pub fn new(n_speakers: usize, seed: u64) -> Self {
        Self {
            n_speakers,
            mean_silence_s: default_mean_silence(n_speakers),
            seed,
        }
    }

    /// Inclusive bounds `[ceil(30 / n), floor(60 / n)]`, never below one.
    pub fn utterance_count_range(&self) -> (usize, usize) {
        let n = self.n_speakers.max(1);
        let lo = 30usize.div_ceil(n).max(1);
        let hi = (60 / n).max(lo);
        (lo, hi)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_speakers == 0 {
            return Err(Error::InvalidInput("n_speakers must be at least 1".into()));
        }
        if !(self.mean_silence_s > 0.0 && self.mean_silence_s.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "mean_silence_s must be positive, got {}",
                self.mean_silence_s
            )));
        }
        Ok(())
    }
}

/// Mean inter-utterance silence that keeps the synthetic corpus near
/// 40-50 % overlap.
pub fn default_mean_silence(n_speakers: usize) -> f64 {
    match n_speakers {
        0 | 1 => 2.0,
        2 => 0.6,
        3 => 1.3,
        4 => 2.3,
        _ => 3.1,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub waveform: Waveform,
    pub segments: ReferenceSegments,
}

/// Builds one conversation from `corpus` following `recipe`.
pub fn simulate_mixture(corpus: &dyn UtteranceCorpus, recipe: &MixtureRecipe) -> Result<Mixture> {
    recipe.validate()?;
    let speakers = corpus.speakers();
    if speakers.len() < recipe.n_speakers {
        return Err(Error::Data(format!(
            "corpus has {} speakers, recipe needs {}",
            speakers.len(),
            recipe.n_speakers
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let chosen: Vec<usize> = rand::seq::index::sample(&mut rng, speakers.len(), recipe.n_speakers).into_vec();
    let (lo, hi) = recipe.utterance_count_range();
    let gap = Exp::new(1.0 / recipe.mean_silence_s).expect("positive rate");
    let rate = SAMPLE_RATE as f64;

    let mut tracks: Vec<Vec<f32>> = Vec::with_capacity(chosen.len());
    let mut segments = Vec::new();
    for &spk in &chosen {
        let available = corpus.num_utterances(spk);
        let count = rng.gen_range(lo..=hi);
        if available == 0 {
            return Err(Error::Data(format!("speaker {} has no utterances", speakers[spk])));
        }
        let mut pool: Vec<usize> = (0..available).collect();
        pool.shuffle(&mut rng);
        if available < count {
            return Err(Error::Data(format!(
                "speaker {} has {available} utterances, need {count}",
                speakers[spk]
            )));
        }
        let mut track: Vec<f32> = Vec::new();
        for &utt in &pool[..count] {
            let silence = (gap.sample(&mut rng) * rate).round() as usize;
            track.resize(track.len() + silence, 0.0);
            let wave = corpus.utterance(spk, utt)?;
            if wave.samples.is_empty() {
                continue;
            }
            segments.push(Segment {
                speaker: speakers[spk].clone(),
                onset: track.len() as f64 / rate,
                duration: wave.samples.len() as f64 / rate,
            });
            track.extend_from_slice(&wave.samples);
        }
        tracks.push(track);
    }
    let len = tracks.iter().map(Vec::len).max().unwrap_or(0);
    let mut mix = vec![0.0f32; len];
    for track in &tracks {
        for (m, &s) in mix.iter_mut().zip(track) {
            *m += s;
        }
    }
    let peak = mix.iter().fold(0.0f32, |p, &v| p.max(v.abs()));
    if peak > 1.0 {
        let scale = 0.99 / peak;
        mix.iter_mut().for_each(|v| *v *= scale);
    }
    segments.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.speaker.cmp(&b.speaker)));
    Ok(Mixture {
        waveform: Waveform::new(mix),
        segments: ReferenceSegments { segments },
    })
}

/// Percentage of speech time during which two or more speakers talk.
pub fn overlap_ratio(segments: &ReferenceSegments) -> f64 {
    let speakers = segments.speakers();
    let mut events: Vec<(f64, usize, i32)> = Vec::new();
    for s in &segments.segments {
        if s.duration <= 0.0 {
            continue;
        }
        let spk = speakers.iter().position(|n| *n == s.speaker).expect("known speaker");
        events.push((s.onset, spk, 1));
        events.push((s.offset(), spk, -1));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut depth = vec![0i32; speakers.len()];
    let mut speech = 0.0;
    let mut overlap = 0.0;
    let mut prev = None;
    let mut i = 0;
    while i < events.len() {
        let t = events[i].0;
        if let Some(p) = prev {
            let active = depth.iter().filter(|&&d| d > 0).count();
            if active >= 1 {
                speech += t - p;
            }
            if active >= 2 {
                overlap += t - p;
            }
        }
        while i < events.len() && events[i].0 == t {
            depth[events[i].1] += events[i].2;
            i += 1;
        }
        prev = Some(t);
    }
    if speech > 0.0 {
        100.0 * overlap / speech
    } else {
        0.0
    }
}

/// Frame-level labels: frame `t` is active for a speaker when its centre
/// `(t + 0.5) * shift` lies inside one of that speaker's segments. Columns
/// follow [`ReferenceSegments::speakers`].
pub fn labels_from_segments(
    segments: &ReferenceSegments,
    num_frames: usize,
    frame_shift_s: f64,
) -> (Array2<f64>, Vec<String>) {
    let speakers = segments.speakers();
    let mut labels = Array2::zeros((num_frames, speakers.len()));
    for s in &segments.segments {
        let col = speakers.iter().position(|n| *n == s.speaker).expect("known speaker");
        // first frame whose centre is >= onset
        let first = ((s.onset / frame_shift_s) - 0.5).ceil().max(0.0) as usize;
        let mut t = first;
        while t < num_frames {
            let centre = (t as f64 + 0.5) * frame_shift_s;
            if centre >= s.offset() {
                break;
            }
            if centre >= s.onset {
                labels[[t, col]] = 1.0;
            }
            t += 1;
        }
    }
    (labels, speakers)
}
