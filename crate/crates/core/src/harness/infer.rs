use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Recording};
use crate::baseline::baseline_decode;
use crate::clustering::{oracle_decode, stitch};
use crate::datasim::ReferenceSegments;
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::losses::Permutation;
use crate::model::{ChunkResult, DiarizationModel};
use crate::scoring::{der, DerBreakdown, DiarizationHypothesis, DEFAULT_COLLAR_S, DEFAULT_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InferMode {
    /// One EDA pass over the unchunked recording.
    EdaGlobal,
    /// Chunk-level EDA plus recurrent clustering.
    EdaRc,
    /// `EdaRc` followed by a second pass from the first pass's final states.
    EdaRcRefine,
    /// Chunk-level EDA plus COP-K-means.
    CopKmeans,
    /// Chunk-level EDA stitched with reference-derived permutations.
    Oracle,
    /// `EdaGlobal` when the global speaker estimate is within the trained
    /// maximum, `EdaRc` otherwise.
    Switch,
}

impl InferMode {
    pub const ALL: [InferMode; 6] = [
        InferMode::EdaGlobal,
        InferMode::EdaRc,
        InferMode::EdaRcRefine,
        InferMode::CopKmeans,
        InferMode::Oracle,
        InferMode::Switch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InferMode::EdaGlobal => "eda-global",
            InferMode::EdaRc => "eda-rc",
            InferMode::EdaRcRefine => "eda-rc-refine",
            InferMode::CopKmeans => "cop-kmeans",
            InferMode::Oracle => "oracle",
            InferMode::Switch => "switch",
        }
    }
}

impl fmt::Display for InferMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferOptions {
    pub beam: usize,
    /// Attractor cap for the unchunked EDA pass.
    pub max_global_speakers: usize,
    pub baseline_k: Option<usize>,
    pub baseline_seed: u64,
    pub threshold: f64,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            beam: 3,
            max_global_speakers: 10,
            baseline_k: None,
            baseline_seed: 0,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

fn needs_labels(labels: Option<&Array2<f64>>) -> Result<&Array2<f64>> {
    labels.ok_or_else(|| Error::InvalidInput("oracle mode needs reference labels".into()))
}

/// Decodes precomputed chunk results with one of the chunk-level modes.
pub fn decode_chunks(
    model: &DiarizationModel,
    chunks: &[ChunkResult],
    mode: InferMode,
    opts: &InferOptions,
    labels: Option<&Array2<f64>>,
    frame_shift_s: f64,
) -> Result<DiarizationHypothesis> {
    let clusterer = model.clusterer().with(&model.params);
    match mode {
        InferMode::EdaRc => Ok(clusterer.decode_recording(chunks, opts.beam, frame_shift_s)?.0),
        InferMode::EdaRcRefine => {
            let (_, state) = clusterer.decode_recording(chunks, opts.beam, frame_shift_s)?;
            clusterer.refine_decode(chunks, &state, opts.beam, frame_shift_s)
        }
        InferMode::CopKmeans => baseline_decode(chunks, opts.baseline_k, opts.baseline_seed, frame_shift_s),
        InferMode::Oracle => oracle_decode(chunks, needs_labels(labels)?, frame_shift_s),
        InferMode::EdaGlobal | InferMode::Switch => {
            Err(Error::InvalidInput(format!("{mode} is not a chunk-level mode")))
        }
    }
}

/// Full pipeline from features to a global hypothesis.
pub fn infer(
    model: &DiarizationModel,
    features: &FeatureSequence,
    mode: InferMode,
    opts: &InferOptions,
    labels: Option<&Array2<f64>>,
) -> Result<DiarizationHypothesis> {
    let shift = features.frame_shift_s;
    match mode {
        InferMode::EdaGlobal | InferMode::Switch => {
            let global = model.predict_global(features, opts.max_global_speakers)?;
            if mode == InferMode::EdaGlobal || global.attractors.nrows() <= model.config.train_speakers {
                return Ok(DiarizationHypothesis {
                    activities: global.activities,
                    frame_shift_s: shift,
                });
            }
            let (_, chunks) = model.predict_chunks(features)?;
            decode_chunks(model, &chunks, InferMode::EdaRc, opts, labels, shift)
        }
        _ => {
            let (_, chunks) = model.predict_chunks(features)?;
            decode_chunks(model, &chunks, mode, opts, labels, shift)
        }
    }
}

/// DER of a binarised hypothesis against reference segments.
pub fn score_hypothesis(hyp: &DiarizationHypothesis, reference: &ReferenceSegments, threshold: f64) -> DerBreakdown {
    der(reference, &hyp.segments(threshold), DEFAULT_COLLAR_S)
}

/// Per-recording DER of every requested mode. Chunk predictions are shared
/// between chunk-level modes; a mode that fails on a recording (such as a
/// COP-K-means constraint violation) yields an error entry.
pub fn evaluate_modes(
    model: &DiarizationModel,
    data: &Dataset,
    modes: &[InferMode],
    opts: &InferOptions,
) -> Result<Vec<Vec<Result<DerBreakdown>>>> {
    let mut out: Vec<Vec<Result<DerBreakdown>>> = modes.iter().map(|_| Vec::new()).collect();
    for rec in &data.recordings {
        let shift = rec.features.frame_shift_s;
        let chunks = if modes
            .iter()
            .any(|m| !matches!(m, InferMode::EdaGlobal | InferMode::Switch))
        {
            Some(model.predict_chunks(&rec.features)?.1)
        } else {
            None
        };
        for (k, &mode) in modes.iter().enumerate() {
            let hyp = match (&chunks, mode) {
                (_, InferMode::EdaGlobal | InferMode::Switch) => {
                    infer(model, &rec.features, mode, opts, Some(&rec.labels))
                }
                (Some(c), m) => decode_chunks(model, c, m, opts, Some(&rec.labels), shift),
                (None, _) => unreachable!("chunks computed for chunk-level modes"),
            };
            out[k].push(hyp.map(|h| score_hypothesis(&h, &rec.reference, opts.threshold)));
        }
    }
    Ok(out)
}

/// Chooses `round(ratio * n)` chunk positions and permutes them among
/// themselves. Returns the decoding order.
pub fn shuffled_order(n: usize, ratio: f64, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let m = ((ratio.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
    if m < 2 {
        return order;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, n, m).into_vec();
    picked.sort_unstable();
    let mut moved = picked.clone();
    moved.shuffle(&mut rng);
    for (&slot, &src) in picked.iter().zip(&moved) {
        order[slot] = src;
    }
    order
}

/// Neural clustering with chunks fed in a partially shuffled order; the
/// chosen permutations are mapped back to the original chunk positions
/// before stitching.
pub fn shuffled_decode(
    model: &DiarizationModel,
    chunks: &[ChunkResult],
    ratio: f64,
    beam: usize,
    seed: u64,
    frame_shift_s: f64,
) -> Result<DiarizationHypothesis> {
    let order = shuffled_order(chunks.len(), ratio, seed);
    let reordered: Vec<ChunkResult> = order.iter().map(|&i| chunks[i].clone()).collect();
    let clusterer = model.clusterer().with(&model.params);
    let best = clusterer.beam_search(&reordered, beam, model.clusterer().initial_state(&model.params))?;
    let mut perms = vec![Permutation { mapping: vec![] }; chunks.len()];
    for (k, &i) in order.iter().enumerate() {
        perms[i] = best.perms_so_far[k].clone();
    }
    let acts: Vec<Array2<f64>> = chunks.iter().map(|c| c.activities.clone()).collect();
    stitch(&acts, &perms, best.state.num_speakers(), frame_shift_s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub model: String,
    pub shuffle_ratio: f64,
    pub beam: usize,
    /// Mean DER in percent over the test set.
    pub der: f64,
}

/// DER of neural clustering for every shuffle ratio and beam size.
pub fn ablate(
    model: &DiarizationModel,
    label: &str,
    data: &Dataset,
    shuffle_ratios: &[f64],
    beams: &[usize],
    seed: u64,
    threshold: f64,
) -> Result<Vec<AblationRow>> {
    let chunks: Vec<(&Recording, Vec<ChunkResult>)> = data
        .recordings
        .iter()
        .map(|r| Ok((r, model.predict_chunks(&r.features)?.1)))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for &ratio in shuffle_ratios {
        for &beam in beams {
            let mut total = 0.0;
            for (i, (rec, c)) in chunks.iter().enumerate() {
                let hyp = shuffled_decode(model, c, ratio, beam, seed ^ i as u64, rec.features.frame_shift_s)?;
                total += score_hypothesis(&hyp, &rec.reference, threshold).der;
            }
            rows.push(AblationRow {
                model: label.to_string(),
                shuffle_ratio: ratio,
                beam,
                der: total / chunks.len().max(1) as f64,
            });
        }
    }
    Ok(rows)
}

pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mut out = String::from("model\tshuffled_ratio(%)\tbeam\tDER(%)\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{:.0}\t{}\t{:.2}\n",
            r.model,
            100.0 * r.shuffle_ratio,
            r.beam,
            r.der
        ));
    }
    out
}
