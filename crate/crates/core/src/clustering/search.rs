use ndarray::{Array2, ArrayView2};

use super::ClusterState;
use crate::error::Result;
use crate::losses::Permutation;

struct Search<'a> {
    log_probs: ArrayView2<'a, f64>,
    /// `best_rest[i]`: sum of row maxima of rows `i..`.
    best_rest: Vec<f64>,
    width: usize,
    used: Vec<bool>,
    current: Vec<usize>,
    found: Vec<(Vec<usize>, f64)>,
}

impl Search<'_> {
    fn worst(&self) -> Option<f64> {
        (self.found.len() == self.width).then(|| self.found.last().expect("full").1)
    }

    fn offer(&mut self, score: f64) {
        // DFS visits mappings in lexicographic order, so an equal score found
        // later never displaces an earlier one.
        let pos = self.found.partition_point(|(_, s)| *s >= score);
        if pos < self.width {
            self.found.insert(pos, (self.current.clone(), score));
            self.found.truncate(self.width);
        }
    }

    fn dfs(&mut self, row: usize, score: f64) {
        let rows = self.log_probs.nrows();
        if row == rows {
            self.offer(score);
            return;
        }
        let new_slot = self.log_probs.ncols() - 1;
        for slot in 0..=new_slot {
            if slot < new_slot && self.used[slot] {
                continue;
            }
            let next = score + self.log_probs[[row, slot]];
            if let Some(w) = self.worst() {
                if next + self.best_rest[row + 1] <= w {
                    continue;
                }
            }
            if slot < new_slot {
                self.used[slot] = true;
            }
            self.current.push(slot);
            self.dfs(row + 1, next);
            self.current.pop();
            if slot < new_slot {
                self.used[slot] = false;
            }
        }
    }
}

/// The `width` best assignments of rows to columns of `log_probs` by total
/// log-probability, best first. Every column but the last (the new-speaker
/// slot) takes at most one row. Equal scores keep the lexicographically
/// smaller mapping first.
pub fn enumerate_assignments(log_probs: ArrayView2<f64>, width: usize) -> Vec<(Permutation, f64)> {
    let (rows, cols) = log_probs.dim();
    if width == 0 || cols == 0 {
        return Vec::new();
    }
    let mut best_rest = vec![0.0; rows + 1];
    for i in (0..rows).rev() {
        let m = log_probs.row(i).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        best_rest[i] = best_rest[i + 1] + m;
    }
    let mut search = Search {
        log_probs,
        best_rest,
        width,
        used: vec![false; cols],
        current: Vec::with_capacity(rows),
        found: Vec::with_capacity(width + 1),
    };
    search.dfs(0, 0.0);
    search
        .found
        .into_iter()
        .map(|(mapping, s)| (Permutation { mapping }, s))
        .collect()
}

/// Scores a chunk's attractors against `state` and returns the `beam_width`
/// most probable cannot-link-respecting assignments with their
/// log-probabilities. Slot `state.num_speakers()` means "new speaker" and
/// may be chosen by several attractors.
pub fn infer_permutation(
    state: &ClusterState,
    attractors: &Array2<f64>,
    beam_width: usize,
) -> Result<Vec<(Permutation, f64)>> {
    let lp = state.assignment_log_probs(attractors.view())?;
    Ok(enumerate_assignments(lp.view(), beam_width))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[test]
    fn single_attractor() {
        let lp = array![[0.9f64.ln(), 0.1f64.ln()]];
        let best = enumerate_assignments(lp.view(), 1);
        assert_eq!(best[0].0.mapping, vec![0]);
        assert!((best[0].1 - 0.9f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cannot_link_excludes_shared_state() {
        let lp = array![[0.9f64.ln(), 0.1f64.ln()], [0.8f64.ln(), 0.2f64.ln()]];
        let all = enumerate_assignments(lp.view(), 10);
        let maps: Vec<Vec<usize>> = all.iter().map(|(p, _)| p.mapping.clone()).collect();
        assert_eq!(maps, vec![vec![0, 1], vec![1, 0], vec![1, 1]]);
    }

    #[test]
    fn ties_break_lexicographically() {
        let lp = Array2::from_elem((2, 3), (1.0f64 / 3.0).ln());
        let all = enumerate_assignments(lp.view(), 10);
        assert_eq!(all.len(), 7);
        assert_eq!(all[0].0.mapping, vec![0, 1]);
        assert_eq!(all[1].0.mapping, vec![0, 2]);
        assert_eq!(all.last().unwrap().0.mapping, vec![2, 2]);
    }

    #[test]
    fn empty_chunk_has_one_empty_assignment() {
        let state = ClusterState {
            hidden_states: Array2::zeros((1, 2)),
            new_speaker_init: Array1::zeros(2),
        };
        let out = infer_permutation(&state, &Array2::zeros((0, 2)), 3).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].0.is_empty());
        assert_eq!(out[0].1, 0.0);
    }
}
