use std::path::Path;

use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::datasim::{
    labels_from_segments, simulate_mixture, Mixture, MixtureRecipe, ReferenceSegments, UtteranceCorpus,
};
use crate::error::{Error, Result};
use crate::features::{extract, FeatureSequence, Waveform};
use crate::scoring::{format_rttm, read_rttm, write_rttm};

/// File listing the recording ids of a dataset directory, one per line.
pub const LIST_FILE: &str = "mixtures.list";

/// One recording with features and frame-level reference labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub features: FeatureSequence,
    pub reference: ReferenceSegments,
    /// `T x S`, columns in order of first speaker onset.
    pub labels: Array2<f64>,
}

impl Recording {
    pub fn new(id: impl Into<String>, wave: &Waveform, reference: ReferenceSegments) -> Result<Self> {
        let features = extract(wave)?;
        let (labels, _) = labels_from_segments(&reference, features.num_frames(), features.frame_shift_s);
        Ok(Self {
            id: id.into(),
            features,
            reference,
            labels,
        })
    }

    pub fn from_mixture(id: impl Into<String>, mixture: &Mixture) -> Result<Self> {
        Self::new(id, &mixture.waveform, mixture.segments.clone())
    }

    pub fn num_speakers(&self) -> usize {
        self.labels.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub recordings: Vec<Recording>,
    /// SHA-256 over every recording's id, reference and features.
    pub content_hash: String,
}

impl Dataset {
    pub fn new(recordings: Vec<Recording>) -> Self {
        let mut h = Sha256::new();
        for r in &recordings {
            h.update(r.id.as_bytes());
            h.update(format_rttm(&r.reference, &r.id).as_bytes());
            for v in r.features.frames.iter() {
                h.update(v.to_le_bytes());
            }
        }
        Self {
            recordings,
            content_hash: hex::encode(h.finalize()),
        }
    }

    pub fn len(&self) -> usize {
        self.recordings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recordings.is_empty()
    }

    /// Simulates `count` mixtures of `n_speakers` in memory.
    pub fn simulate(corpus: &dyn UtteranceCorpus, n_speakers: usize, count: usize, seed: u64) -> Result<Self> {
        let recordings = simulate_mixtures(corpus, n_speakers, count, seed)?
            .iter()
            .map(|(id, m)| Recording::from_mixture(id.clone(), m))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(recordings))
    }

    /// Loads `<id>.wav` and `<id>.rttm` for every id in [`LIST_FILE`].
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let list = std::fs::read_to_string(dir.join(LIST_FILE))
            .map_err(|e| Error::Data(format!("{}: {e}", dir.join(LIST_FILE).display())))?;
        let recordings = list
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|id| {
                let wave = Waveform::read_wav(dir.join(format!("{id}.wav")))?;
                let reference = read_rttm(dir.join(format!("{id}.rttm")))?;
                Recording::new(id, &wave, reference)
            })
            .collect::<Result<Vec<_>>>()?;
        if recordings.is_empty() {
            return Err(Error::Data(format!("{} lists no recordings", dir.display())));
        }
        Ok(Self::new(recordings))
    }
}

/// Mixture `i` uses a seed drawn from a generator seeded with `seed`.
pub fn simulate_mixtures(
    corpus: &dyn UtteranceCorpus,
    n_speakers: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<(String, Mixture)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let recipe = MixtureRecipe::new(n_speakers, rng.next_u64());
            Ok((format!("mix{n_speakers}spk_{i:05}"), simulate_mixture(corpus, &recipe)?))
        })
        .collect()
}

/// Writes simulated mixtures as `<id>.wav` / `<id>.rttm` plus the id list.
pub fn write_simulation(
    corpus: &dyn UtteranceCorpus,
    n_speakers: usize,
    count: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<String>> {
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out)?;
    let mut ids = Vec::with_capacity(count);
    for (id, m) in simulate_mixtures(corpus, n_speakers, count, seed)? {
        m.waveform.write_wav(out.join(format!("{id}.wav")))?;
        write_rttm(&m.segments, &id, out.join(format!("{id}.rttm")))?;
        ids.push(id);
    }
    let mut list = ids.join("\n");
    list.push('\n');
    std::fs::write(out.join(LIST_FILE), list)?;
    Ok(ids)
}
