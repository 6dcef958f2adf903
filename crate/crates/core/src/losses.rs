//! Training objectives: permutation-invariant diarization loss, attractor
//! existence loss and the clustering cross-entropy.

use ndarray::{Array2, ArrayView2};

use crate::assignment::min_cost_assignment;
use crate::autograd::{bce_term, Graph, Var};
use crate::error::{Error, Result};

/// Probability clipping for every binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Reference activity of the speakers present in one chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkLabels {
    /// `L x S_n`, entries 0 or 1.
    pub matrix: Array2<f64>,
    /// Global speaker index of each column.
    pub global_speaker_ids: Vec<usize>,
}

impl ChunkLabels {
    pub fn new(matrix: Array2<f64>, global_speaker_ids: Vec<usize>) -> Result<Self> {
        if matrix.ncols() != global_speaker_ids.len() {
            return Err(Error::InvalidInput(format!(
                "{} label columns but {} speaker ids",
                matrix.ncols(),
                global_speaker_ids.len()
            )));
        }
        if matrix.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidInput("labels must be 0 or 1".into()));
        }
        Ok(Self {
            matrix,
            global_speaker_ids,
        })
    }

    pub fn num_speakers(&self) -> usize {
        self.matrix.ncols()
    }

    /// Rows `start..start + len` of recording-level labels, keeping only the
    /// speakers active somewhere in that window.
    pub fn from_recording(labels: &Array2<f64>, start: usize, len: usize) -> Result<Self> {
        if start + len > labels.nrows() {
            return Err(Error::InvalidInput(format!(
                "window {start}..{} exceeds {} label frames",
                start + len,
                labels.nrows()
            )));
        }
        let window = labels.slice(ndarray::s![start..start + len, ..]);
        let active: Vec<usize> = (0..labels.ncols())
            .filter(|&j| window.column(j).iter().any(|&v| v > 0.0))
            .collect();
        let matrix = window.select(ndarray::Axis(1), &active);
        Self::new(matrix, active)
    }
}

/// `mapping[i]` is the label column matched to output column `i`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Permutation {
    pub mapping: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self {
            mapping: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn is_injective(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.mapping.iter().all(|m| seen.insert(*m))
    }
}

fn pad_cols(m: ArrayView2<f64>, cols: usize) -> Array2<f64> {
    let mut out = Array2::zeros((m.nrows(), cols));
    out.slice_mut(ndarray::s![.., ..m.ncols()]).assign(&m);
    out
}

/// Pairwise summed BCE: `cost[i][j] = sum_t BCE(y[t, i], l[t, j])`.
pub fn pairwise_bce(activities: ArrayView2<f64>, labels: ArrayView2<f64>) -> Array2<f64> {
    let (_, s_out) = activities.dim();
    let s_lab = labels.ncols();
    Array2::from_shape_fn((s_out, s_lab), |(i, j)| {
        activities
            .column(i)
            .iter()
            .zip(labels.column(j))
            .map(|(&p, &t)| bce_term(p, t, BCE_EPS))
            .sum()
    })
}

/// Best column matching for PIT. Both sides are padded with silent columns
/// to the same width first; the returned permutation has one entry per
/// padded output column.
fn pit_permutation(activities: ArrayView2<f64>, labels: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>, Permutation) {
    let width = activities.ncols().max(labels.ncols());
    let y = pad_cols(activities, width);
    let l = pad_cols(labels, width);
    let cost = pairwise_bce(y.view(), l.view());
    let mapping = min_cost_assignment(cost.view())
        .into_iter()
        .map(|c| c.expect("square problem matches every row"))
        .collect();
    (y, l, Permutation { mapping })
}

fn permute_labels(labels: &Array2<f64>, perm: &Permutation) -> Array2<f64> {
    let mut out = Array2::zeros(labels.dim());
    for (i, &j) in perm.mapping.iter().enumerate() {
        out.column_mut(i).assign(&labels.column(j));
    }
    out
}

fn check_rows(activities: ArrayView2<f64>, labels: ArrayView2<f64>) -> Result<()> {
    if activities.nrows() != labels.nrows() {
        return Err(Error::InvalidInput(format!(
            "activities have {} frames, labels {}",
            activities.nrows(),
            labels.nrows()
        )));
    }
    Ok(())
}

/// Minimum over label permutations of the mean BCE, solved exactly as an
/// assignment problem on the pairwise BCE costs.
pub fn pit_diarization_loss(activities: &Array2<f64>, labels: &ChunkLabels) -> Result<(f64, Permutation)> {
    check_rows(activities.view(), labels.matrix.view())?;
    let (y, l, perm) = pit_permutation(activities.view(), labels.matrix.view());
    if y.is_empty() {
        return Ok((0.0, perm));
    }
    let lp = permute_labels(&l, &perm);
    let total: f64 = y.iter().zip(lp.iter()).map(|(&p, &t)| bce_term(p, t, BCE_EPS)).sum();
    Ok((total / y.len() as f64, perm))
}

/// Graph version of [`pit_diarization_loss`]; the permutation is chosen on
/// values and the loss is differentiable in `activities`.
pub fn pit_diarization_loss_graph(g: &mut Graph, activities: Var, labels: &Array2<f64>) -> Result<(Var, Permutation)> {
    let act = g.value(activities).clone();
    check_rows(act.view(), labels.view())?;
    let (y, l, perm) = pit_permutation(act.view(), labels.view());
    if y.is_empty() {
        return Ok((g.constant_scalar(0.0), perm));
    }
    let padded = if act.ncols() < y.ncols() {
        let zeros = g.input(Array2::zeros((act.nrows(), y.ncols() - act.ncols())));
        if act.ncols() == 0 {
            zeros
        } else {
            g.concat_cols(&[activities, zeros])
        }
    } else {
        activities
    };
    let lp = permute_labels(&l, &perm);
    Ok((g.bce(padded, lp, BCE_EPS), perm))
}

fn existence_target(num_speakers: usize) -> Vec<f64> {
    let mut t = vec![1.0; num_speakers];
    t.push(0.0);
    t
}

/// Mean BCE of the existence probabilities against `[1, ..., 1, 0]`.
pub fn attractor_existence_loss(existence_probs: &[f64], num_speakers: usize) -> Result<f64> {
    if existence_probs.len() != num_speakers + 1 {
        return Err(Error::InvalidInput(format!(
            "expected {} existence probabilities, got {}",
            num_speakers + 1,
            existence_probs.len()
        )));
    }
    let target = existence_target(num_speakers);
    Ok(existence_probs
        .iter()
        .zip(&target)
        .map(|(&p, &t)| bce_term(p, t, BCE_EPS))
        .sum::<f64>()
        / target.len() as f64)
}

/// Graph version of [`attractor_existence_loss`] for an `(S_n + 1) x 1`
/// probability column.
pub fn attractor_existence_loss_graph(g: &mut Graph, probs: Var, num_speakers: usize) -> Result<Var> {
    let (rows, cols) = g.shape(probs);
    if rows != num_speakers + 1 || cols != 1 {
        return Err(Error::InvalidInput(format!(
            "expected {} x 1 existence probabilities, got {rows} x {cols}",
            num_speakers + 1
        )));
    }
    let target = Array2::from_shape_vec((rows, 1), existence_target(num_speakers)).expect("target shape");
    Ok(g.bce(probs, target, BCE_EPS))
}

fn one_hot_column(row: ndarray::ArrayView1<f64>) -> Option<usize> {
    let mut hit = None;
    for (j, &v) in row.iter().enumerate() {
        if v == 1.0 {
            if hit.is_some() {
                return None;
            }
            hit = Some(j);
        } else if v != 0.0 {
            return None;
        }
    }
    hit
}

/// Cross-entropy of assignment probabilities against one-hot targets:
/// averaged over attractors within a chunk, then over chunks. Chunks without
/// attractors contribute zero.
pub fn clustering_ce_loss(probs: &[Array2<f64>], targets: &[Array2<f64>]) -> Result<f64> {
    if probs.len() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "{} probability blocks but {} target blocks",
            probs.len(),
            targets.len()
        )));
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (p, r) in probs.iter().zip(targets) {
        if p.dim() != r.dim() {
            return Err(Error::InvalidInput(format!(
                "probabilities {:?} vs targets {:?}",
                p.dim(),
                r.dim()
            )));
        }
        if p.nrows() == 0 {
            continue;
        }
        let mut chunk = 0.0;
        for (prow, rrow) in p.rows().into_iter().zip(r.rows()) {
            let j = one_hot_column(rrow)
                .ok_or_else(|| Error::InvalidInput("clustering target row is not one-hot".into()))?;
            chunk -= prow[j].max(f64::MIN_POSITIVE).ln();
        }
        total += chunk / p.nrows() as f64;
    }
    Ok(total / probs.len() as f64)
}

/// Loss terms of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub diar: f64,
    pub attr: f64,
    pub post: f64,
    pub global: Option<f64>,
}

impl LossTerms {
    pub fn pre(&self) -> f64 {
        self.diar + self.attr
    }
}

/// `L_diar + L_attr + L_post`, plus `L_global` when enabled.
pub fn total_loss(diar: f64, attr: f64, post: f64, use_global: bool, global: f64) -> Result<f64> {
    let terms = [("diar", diar), ("attr", attr), ("post", post), ("global", global)];
    for (name, v) in terms {
        if (name != "global" || use_global) && !v.is_finite() {
            return Err(Error::TrainingDivergence(format!("{name} loss is {v}")));
        }
    }
    let mut total = diar + attr + post;
    if use_global {
        total += global;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::ParamStore;
    use ndarray::array;

    fn labels(m: Array2<f64>) -> ChunkLabels {
        let n = m.ncols();
        ChunkLabels::new(m, (0..n).collect()).unwrap()
    }

    #[test]
    fn self_match_is_identity() {
        let l = array![[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let (loss, perm) = pit_diarization_loss(&l, &labels(l.clone())).unwrap();
        assert_eq!(perm, Permutation::identity(2));
        assert!(loss < 1e-6);
    }

    #[test]
    fn swapped_columns() {
        let l = array![[1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]];
        let y = array![[0.1, 0.8], [0.7, 0.9], [0.8, 0.2], [0.1, 0.3]];
        let swapped = array![[0.8, 0.1], [0.9, 0.7], [0.2, 0.8], [0.3, 0.1]];
        let (a, pa) = pit_diarization_loss(&y, &labels(l.clone())).unwrap();
        let (b, pb) = pit_diarization_loss(&swapped, &labels(l)).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert_eq!(pa.mapping, vec![1, 0]);
        assert_eq!(pb.mapping, vec![0, 1]);
    }

    #[test]
    fn row_mismatch_errors() {
        let y = Array2::zeros((3, 1));
        let l = labels(Array2::zeros((2, 1)));
        assert!(matches!(pit_diarization_loss(&y, &l), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn padding_handles_count_mismatch() {
        let y = array![[0.9], [0.1]];
        let l = labels(array![[0.0, 1.0], [0.0, 0.0]]);
        let (_, perm) = pit_diarization_loss(&y, &l).unwrap();
        assert_eq!(perm.mapping[0], 1);
        assert_eq!(perm.len(), 2);
    }

    #[test]
    fn existence_examples() {
        let eps = 1e-7;
        assert!(attractor_existence_loss(&[1.0 - eps, eps], 1).unwrap() < 1e-6);
        assert!((attractor_existence_loss(&[0.5, 0.5], 1).unwrap() - 2f64.ln()).abs() < 1e-12);
        let expected = (-(0.9f64.ln()) - 0.8f64.ln() - 0.9f64.ln()) / 3.0;
        assert!((attractor_existence_loss(&[0.9, 0.8, 0.1], 2).unwrap() - expected).abs() < 1e-12);
        assert!(attractor_existence_loss(&[0.5], 1).is_err());
        // zero-speaker chunk uses target [0]
        assert!((attractor_existence_loss(&[0.5], 0).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn clustering_examples() {
        let eps = 1e-9;
        let p = array![[1.0 - eps, eps], [eps, 1.0 - eps]];
        let r = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(clustering_ce_loss(&[p], &[r]).unwrap() < 1e-8);

        let uniform = Array2::from_elem((3, 4), 0.25);
        let r = array![[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
        assert!((clustering_ce_loss(&[uniform], &[r]).unwrap() - 4f64.ln()).abs() < 1e-12);

        // two chunks, hand computed
        let p1 = array![[0.5, 0.25, 0.25]];
        let r1 = array![[1.0, 0.0, 0.0]];
        let p2 = array![[0.1, 0.6, 0.3], [0.2, 0.2, 0.6]];
        let r2 = array![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let expected = (-(0.5f64.ln()) + (-(0.6f64.ln()) - 0.6f64.ln()) / 2.0) / 2.0;
        let got = clustering_ce_loss(&[p1, p2], &[r1, r2]).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn clustering_rejects_soft_targets() {
        let p = array![[0.5, 0.5]];
        let r = array![[0.5, 0.5]];
        assert!(matches!(clustering_ce_loss(&[p], &[r]), Err(Error::InvalidInput(_))));
        let r2 = array![[1.0, 1.0]];
        assert!(clustering_ce_loss(&[array![[0.5, 0.5]]], &[r2]).is_err());
    }

    #[test]
    fn total_examples() {
        assert_eq!(total_loss(1.0, 0.5, 0.25, false, 0.0).unwrap(), 1.75);
        assert_eq!(total_loss(0.0, 0.0, 0.0, false, 0.0).unwrap(), 0.0);
        assert_eq!(total_loss(1.0, 0.5, 0.25, true, 0.5).unwrap(), 2.25);
        assert!(matches!(
            total_loss(f64::NAN, 0.0, 0.0, false, 0.0),
            Err(Error::TrainingDivergence(_))
        ));
        assert!(total_loss(0.0, 0.0, 0.0, true, f64::INFINITY).is_err());
    }

    #[test]
    fn graph_pit_matches_value_pit() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let y = array![[0.2, 0.7, 0.4], [0.9, 0.1, 0.3]];
        let l = array![[0.0, 1.0], [1.0, 0.0]];
        let yv = g.input(y.clone());
        let (loss, perm) = pit_diarization_loss_graph(&mut g, yv, &l).unwrap();
        let (expect, eperm) = pit_diarization_loss(&y, &labels(l)).unwrap();
        assert_eq!(perm, eperm);
        assert!((g.scalar(loss) - expect).abs() < 1e-12);
    }
}
