use ndarray::{s, Array2};

use super::search::infer_permutation;
use super::{AssignmentTargets, ClusterState, NeuralClusterer};
use crate::assignment::min_cost_assignment;
use crate::error::{Error, Result};
use crate::losses::{pairwise_bce, Permutation};
use crate::model::ChunkResult;
use crate::scoring::{DiarizationHypothesis, DEFAULT_COLLAR_S, DEFAULT_THRESHOLD};

/// One partial decoding path.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub state: ClusterState,
    /// Sum of log-probabilities of the chosen assignments.
    pub score: f64,
    /// Global speaker index of every attractor, one entry per chunk consumed.
    pub perms_so_far: Vec<Permutation>,
}

/// Resolves slot indices (new-speaker slot = `k`) to global speaker indices.
fn resolve(slots: &[usize], k: usize) -> Vec<usize> {
    let mut next = k;
    slots
        .iter()
        .map(|&c| {
            if c < k {
                c
            } else {
                next += 1;
                next - 1
            }
        })
        .collect()
}

impl NeuralClusterer<'_> {
    /// Beam search over chunks starting from `init`.
    pub fn beam_search(&self, chunks: &[ChunkResult], beam_width: usize, init: ClusterState) -> Result<BeamHypothesis> {
        let width = beam_width.max(1);
        let mut beam = vec![BeamHypothesis {
            state: init,
            score: 0.0,
            perms_so_far: Vec::with_capacity(chunks.len()),
        }];
        for chunk in chunks {
            let a = &chunk.converted_attractors;
            if a.nrows() == 0 {
                for h in &mut beam {
                    h.perms_so_far.push(Permutation { mapping: vec![] });
                }
                continue;
            }
            let mut next = Vec::with_capacity(beam.len() * width);
            for hyp in &beam {
                for (slots, lp) in infer_permutation(&hyp.state, a, width)? {
                    let k = hyp.state.num_speakers();
                    let targets = AssignmentTargets::from_columns(&slots.mapping, hyp.state.count())?;
                    let state = self.net.update_states(self.params, &hyp.state, a, &targets)?;
                    let mut perms = hyp.perms_so_far.clone();
                    perms.push(Permutation {
                        mapping: resolve(&slots.mapping, k),
                    });
                    next.push(BeamHypothesis {
                        state,
                        score: hyp.score + lp,
                        perms_so_far: perms,
                    });
                }
            }
            // stable: equal scores keep parent rank, then candidate rank
            next.sort_by(|x, y| y.score.total_cmp(&x.score));
            next.truncate(width);
            beam = next;
        }
        Ok(beam.into_iter().next().expect("beam is never empty"))
    }

    /// Decodes a recording from an empty speaker set and stitches the best
    /// path into global activities. Columns are in spawn order.
    pub fn decode_recording(
        &self,
        chunks: &[ChunkResult],
        beam_width: usize,
        frame_shift_s: f64,
    ) -> Result<(DiarizationHypothesis, ClusterState)> {
        let best = self.beam_search(chunks, beam_width, self.net.initial_state(self.params))?;
        let hyp = stitch_chunks(chunks, &best.perms_so_far, best.state.num_speakers(), frame_shift_s)?;
        Ok((hyp, best.state))
    }

    /// Second pass starting from the first pass's final speaker states.
    /// Speakers keep their first-pass indices; the new-speaker slot stays
    /// available.
    pub fn refine_decode(
        &self,
        chunks: &[ChunkResult],
        first_pass: &ClusterState,
        beam_width: usize,
        frame_shift_s: f64,
    ) -> Result<DiarizationHypothesis> {
        let best = self.beam_search(chunks, beam_width, first_pass.clone())?;
        stitch_chunks(chunks, &best.perms_so_far, best.state.num_speakers(), frame_shift_s)
    }
}

fn stitch_chunks(
    chunks: &[ChunkResult],
    perms: &[Permutation],
    global_count: usize,
    frame_shift_s: f64,
) -> Result<DiarizationHypothesis> {
    let acts: Vec<Array2<f64>> = chunks.iter().map(|c| c.activities.clone()).collect();
    stitch(&acts, perms, global_count, frame_shift_s)
}

/// Concatenates chunk activities in time, moving local column `i` of chunk
/// `n` to global column `perms[n][i]`. Global columns with no local speaker
/// in a chunk are zero there.
pub fn stitch(
    chunk_activities: &[Array2<f64>],
    perms: &[Permutation],
    global_count: usize,
    frame_shift_s: f64,
) -> Result<DiarizationHypothesis> {
    if chunk_activities.len() != perms.len() {
        return Err(Error::Internal(format!(
            "{} chunks but {} permutations",
            chunk_activities.len(),
            perms.len()
        )));
    }
    let total: usize = chunk_activities.iter().map(Array2::nrows).sum();
    let mut out = Array2::zeros((total, global_count));
    let mut row = 0;
    for (n, (act, perm)) in chunk_activities.iter().zip(perms).enumerate() {
        if perm.len() != act.ncols() {
            return Err(Error::Internal(format!(
                "chunk {n}: {} local speakers but permutation of length {}",
                act.ncols(),
                perm.len()
            )));
        }
        if !perm.is_injective() {
            return Err(Error::Internal(format!(
                "chunk {n}: two local speakers share a global column"
            )));
        }
        for (i, &j) in perm.mapping.iter().enumerate() {
            if j >= global_count {
                return Err(Error::Internal(format!(
                    "chunk {n}: global column {j} outside {global_count}"
                )));
            }
            out.slice_mut(s![row..row + act.nrows(), j]).assign(&act.column(i));
        }
        row += act.nrows();
    }
    Ok(DiarizationHypothesis {
        activities: out,
        frame_shift_s,
    })
}

/// Frames whose centre lies within the scoring collar of a reference
/// speaker boundary.
fn collar_frames(labels: &Array2<f64>, frame_shift_s: f64) -> Vec<bool> {
    let (frames, speakers) = labels.dim();
    let mut boundaries = Vec::new();
    for j in 0..speakers {
        for t in 0..=frames {
            let before = t > 0 && labels[[t - 1, j]] > 0.5;
            let after = t < frames && labels[[t, j]] > 0.5;
            if before != after {
                boundaries.push(t as f64 * frame_shift_s);
            }
        }
    }
    (0..frames)
        .map(|t| {
            let centre = (t as f64 + 0.5) * frame_shift_s;
            boundaries.iter().any(|&b| (centre - b).abs() < DEFAULT_COLLAR_S)
        })
        .collect()
}

/// PIT at the decision level. Thresholded frame errors outside `skip` pick the matching;
/// ties go to the label column with the smaller `tie_cost`, then to the
/// smaller summed BCE. Outputs are padded with silent columns, labels with
/// silent columns of tie cost 1; the result maps every output column.
fn decision_permutation(
    activities: &Array2<f64>,
    labels: &Array2<f64>,
    skip: &[bool],
    tie_cost: &[f64],
) -> Permutation {
    let width = activities.ncols().max(labels.ncols());
    let pad = |m: &Array2<f64>| {
        let mut out = Array2::zeros((m.nrows(), width));
        out.slice_mut(s![.., ..m.ncols()]).assign(m);
        out
    };
    let (y, l) = (pad(activities), pad(labels));
    let soft = pairwise_bce(y.view(), l.view());
    let cost = Array2::from_shape_fn((width, width), |(i, j)| {
        let errors = y
            .column(i)
            .iter()
            .zip(l.column(j))
            .zip(skip)
            .filter(|((&p, &t), &skipped)| !skipped && (p > DEFAULT_THRESHOLD) != (t > 0.5))
            .count();
        errors as f64 + 1e-3 * tie_cost.get(j).copied().unwrap_or(1.0) + 1e-12 * soft[[i, j]]
    });
    let mapping = min_cost_assignment(cost.view())
        .into_iter()
        .map(|c| c.expect("square problem matches every row"))
        .collect();
    Permutation { mapping }
}

/// Stitching with the reference-derived permutation of every chunk. Each
/// chunk is matched against every reference speaker on the frames the scorer
/// counts (outside the collar); an output that fits no
/// active speaker goes to the speaker talking nearest the chunk, and only
/// outputs beyond the reference speaker count get fresh columns.
pub fn oracle_decode(
    chunks: &[ChunkResult],
    labels: &Array2<f64>,
    frame_shift_s: f64,
) -> Result<DiarizationHypothesis> {
    let total: usize = chunks.iter().map(ChunkResult::len).sum();
    if labels.nrows() != total {
        return Err(Error::InvalidInput(format!(
            "labels have {} frames, chunks cover {total}",
            labels.nrows()
        )));
    }
    let speakers = labels.ncols();
    let active: Vec<Vec<usize>> = (0..speakers)
        .map(|j| (0..total).filter(|&t| labels[[t, j]] > 0.5).collect())
        .collect();
    let skip = collar_frames(labels, frame_shift_s);
    let mut next_fresh = speakers;
    let mut perms = Vec::with_capacity(chunks.len());
    for chunk in chunks {
        let (start, end) = (chunk.start, chunk.start + chunk.len());
        let local = labels.slice(s![start..end, ..]).to_owned();
        let tie_cost: Vec<f64> = active
            .iter()
            .map(|frames| {
                let gap = frames
                    .iter()
                    .map(|&t| {
                        if t < start {
                            start - t
                        } else {
                            t.saturating_sub(end - 1)
                        }
                    })
                    .min()
                    .unwrap_or(total);
                gap as f64 / (total + 1) as f64
            })
            .collect();
        let perm = decision_permutation(&chunk.activities, &local, &skip[start..end], &tie_cost);
        let mapping = (0..chunk.num_speakers())
            .map(|i| {
                let j = perm.mapping[i];
                if j < speakers {
                    j
                } else {
                    next_fresh += 1;
                    next_fresh - 1
                }
            })
            .collect::<Vec<usize>>();
        perms.push(Permutation { mapping });
    }
    let acts: Vec<Array2<f64>> = chunks.iter().map(|c| c.activities.clone()).collect();
    stitch(&acts, &perms, next_fresh, frame_shift_s)
}
