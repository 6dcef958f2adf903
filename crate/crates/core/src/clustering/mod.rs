//! Recurrent neural clustering of chunk attractors.
//!
//! Every global speaker owns a GRU hidden state. A chunk's attractors are
//! scored against all states plus a learned new-speaker vector
//! (`softmax(a . h)`), assigned under a cannot-link constraint, and the
//! assigned states advance by one GRU step with the attractor as input.
//! States nobody was assigned to are carried over untouched.

mod decode;
mod search;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

pub use decode::{oracle_decode, stitch, BeamHypothesis};
pub use search::{enumerate_assignments, infer_permutation};

use crate::autograd::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::losses::Permutation;
use crate::nn::GruCell;

/// GRU cell plus the learned initial / new-speaker state.
#[derive(Debug, Clone)]
pub struct ClusterNet {
    pub gru: GruCell,
    pub init: ParamId,
    pub hidden_dim: usize,
}

/// Hidden states of the discovered speakers and the new-speaker vector
/// exposed after them.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    /// `K x D`, one row per global speaker in discovery order.
    pub hidden_states: Array2<f64>,
    pub new_speaker_init: Array1<f64>,
}

impl ClusterState {
    pub fn num_speakers(&self) -> usize {
        self.hidden_states.nrows()
    }

    /// Number of exposed slots, `K + 1`.
    pub fn count(&self) -> usize {
        self.num_speakers() + 1
    }

    pub fn dim(&self) -> usize {
        self.new_speaker_init.len()
    }

    /// `C x D` matrix of all exposed slots; the last row is the new-speaker slot.
    pub fn exposed(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.count(), self.dim()));
        out.slice_mut(s![..self.num_speakers(), ..]).assign(&self.hidden_states);
        out.row_mut(self.num_speakers()).assign(&self.new_speaker_init);
        out
    }

    /// Log-probabilities `log softmax(A H^T)`, one row per attractor.
    pub fn assignment_log_probs(&self, attractors: ArrayView2<f64>) -> Result<Array2<f64>> {
        if attractors.nrows() > 0 && attractors.ncols() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "attractor dim {} does not match state dim {}",
                attractors.ncols(),
                self.dim()
            )));
        }
        let mut logits = attractors.dot(&self.exposed().t());
        for mut row in logits.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        Ok(logits)
    }
}

/// Probability of each exposed slot for one attractor.
pub fn predict_assignment_probs(attractor: ArrayView1<f64>, state: &ClusterState) -> Result<Array1<f64>> {
    let a = attractor.insert_axis(Axis(0));
    let lp = state.assignment_log_probs(a)?;
    Ok(lp.row(0).mapv(f64::exp))
}

/// One-hot clustering targets, `S_n x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentTargets {
    pub r: Array2<f64>,
}

impl AssignmentTargets {
    pub fn from_columns(columns: &[usize], count: usize) -> Result<Self> {
        let mut r = Array2::zeros((columns.len(), count));
        for (i, &c) in columns.iter().enumerate() {
            if c >= count {
                return Err(Error::InvalidInput(format!("target column {c} outside {count} slots")));
            }
            r[[i, c]] = 1.0;
        }
        Ok(Self { r })
    }

    /// Column selected by each row.
    pub fn columns(&self) -> Vec<usize> {
        self.r
            .rows()
            .into_iter()
            .map(|row| row.iter().position(|&v| v == 1.0).expect("one-hot row"))
            .collect()
    }
}

/// Targets for the first `num_attractors` outputs of a PIT permutation:
/// attractor `i` targets the global slot of label column `best_perm[i]`.
pub fn build_targets(
    best_perm: &Permutation,
    local_to_global: &[usize],
    num_attractors: usize,
    count: usize,
) -> Result<AssignmentTargets> {
    if best_perm.len() < num_attractors {
        return Err(Error::InvalidInput(format!(
            "permutation covers {} outputs, need {num_attractors}",
            best_perm.len()
        )));
    }
    let columns = best_perm.mapping[..num_attractors]
        .iter()
        .map(|&m| {
            local_to_global
                .get(m)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("attractor matched to silent label column {m}")))
        })
        .collect::<Result<Vec<_>>>()?;
    AssignmentTargets::from_columns(&columns, count)
}

impl ClusterNet {
    pub fn new(store: &mut ParamStore, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let gru = GruCell::new(store, "cluster.gru", hidden_dim, hidden_dim, rng);
        let init = store.add(
            "cluster.init",
            Array2::from_shape_fn((1, hidden_dim), |_| rng.gen_range(-0.1..0.1)),
        );
        Self { gru, init, hidden_dim }
    }

    fn init_vector(&self, params: &ParamStore) -> Array1<f64> {
        params.get(self.init).row(0).to_owned()
    }

    /// Inference start: no speakers, only the new-speaker slot.
    pub fn initial_state(&self, params: &ParamStore) -> ClusterState {
        ClusterState {
            hidden_states: Array2::zeros((0, self.hidden_dim)),
            new_speaker_init: self.init_vector(params),
        }
    }

    /// Training start: `num_speakers` slots pre-allocated from the shared
    /// initial vector, so `C == num_speakers + 1`.
    pub fn training_state(&self, params: &ParamStore, num_speakers: usize) -> ClusterState {
        let h0 = self.init_vector(params);
        ClusterState {
            hidden_states: h0
                .broadcast((num_speakers, self.hidden_dim))
                .expect("row broadcast")
                .to_owned(),
            new_speaker_init: h0,
        }
    }

    /// One GRU step for each `(input, hidden)` row pair.
    pub fn gru_step(&self, params: &ParamStore, inputs: &Array2<f64>, hidden: &Array2<f64>) -> Array2<f64> {
        let mut g = Graph::new(params);
        let x = g.input(inputs.clone());
        let h = g.input(hidden.clone());
        let out = self.gru.step(&mut g, x, h);
        g.value(out).clone()
    }

    /// Advances the states selected by `targets`. Rows targeting an existing
    /// speaker replace that state with `GRU(a_i, h_j)`; rows targeting the
    /// last (new-speaker) slot append `GRU(a_i, h_0)` in attractor order.
    /// All other states are copied unchanged.
    pub fn update_states(
        &self,
        params: &ParamStore,
        state: &ClusterState,
        attractors: &Array2<f64>,
        targets: &AssignmentTargets,
    ) -> Result<ClusterState> {
        if targets.r.nrows() != attractors.nrows() {
            return Err(Error::InvalidInput(format!(
                "{} target rows for {} attractors",
                targets.r.nrows(),
                attractors.nrows()
            )));
        }
        if targets.r.ncols() != state.count() {
            return Err(Error::InvalidInput(format!(
                "targets have {} columns, state exposes {}",
                targets.r.ncols(),
                state.count()
            )));
        }
        if attractors.nrows() == 0 {
            return Ok(state.clone());
        }
        if attractors.ncols() != state.dim() {
            return Err(Error::InvalidInput("attractor/state dim mismatch".into()));
        }
        let columns = targets.columns();
        let k = state.num_speakers();
        let mut seen = vec![false; k];
        for (i, &c) in columns.iter().enumerate() {
            if c < k {
                if seen[c] {
                    return Err(Error::ConstraintViolation(format!(
                        "two attractors (second is {i}) target speaker state {c}"
                    )));
                }
                seen[c] = true;
            }
        }
        let hidden = Array2::from_shape_fn((columns.len(), state.dim()), |(i, d)| {
            let c = columns[i];
            if c < k {
                state.hidden_states[[c, d]]
            } else {
                state.new_speaker_init[d]
            }
        });
        let stepped = self.gru_step(params, attractors, &hidden);
        let spawned = columns.iter().filter(|&&c| c == k).count();
        let mut next = Array2::zeros((k + spawned, state.dim()));
        next.slice_mut(s![..k, ..]).assign(&state.hidden_states);
        let mut slot = k;
        for (i, &c) in columns.iter().enumerate() {
            let dest = if c < k {
                c
            } else {
                slot += 1;
                slot - 1
            };
            next.row_mut(dest).assign(&stepped.row(i));
        }
        Ok(ClusterState {
            hidden_states: next,
            new_speaker_init: state.new_speaker_init.clone(),
        })
    }

    /// Teacher-forced clustering cross-entropy on a graph. `attractors[n]`
    /// holds chunk `n`'s attractors (`None` when empty) and `targets[n]`
    /// the global speaker of each. States start as `num_speakers` copies of
    /// the initial vector; the loss is averaged over attractors within a
    /// chunk, then over all chunks.
    pub fn training_loss_graph(
        &self,
        g: &mut Graph,
        attractors: &[Option<Var>],
        targets: &[Vec<usize>],
        num_speakers: usize,
    ) -> Result<Var> {
        if attractors.len() != targets.len() {
            return Err(Error::InvalidInput(format!(
                "{} attractor blocks but {} target blocks",
                attractors.len(),
                targets.len()
            )));
        }
        let h0 = g.param(self.init);
        let mut states: Vec<Var> = vec![h0; num_speakers];
        let mut chunk_losses = Vec::new();
        for (att, tgt) in attractors.iter().zip(targets) {
            let Some(a) = *att else {
                if !tgt.is_empty() {
                    return Err(Error::InvalidInput("targets for an empty chunk".into()));
                }
                continue;
            };
            let rows = g.shape(a).0;
            if rows != tgt.len() {
                return Err(Error::InvalidInput(format!(
                    "{rows} attractors but {} targets",
                    tgt.len()
                )));
            }
            let mut seen = vec![false; num_speakers];
            for &t in tgt {
                if t >= num_speakers {
                    return Err(Error::InvalidInput(format!(
                        "target speaker {t} outside {num_speakers} training slots"
                    )));
                }
                if std::mem::replace(&mut seen[t], true) {
                    return Err(Error::ConstraintViolation(format!(
                        "speaker {t} targeted twice in a chunk"
                    )));
                }
            }
            let mut slots = states.clone();
            slots.push(h0);
            let h = g.concat_rows(&slots);
            let logits = g.matmul_nt(a, h);
            let logp = g.log_softmax(logits);
            let picks: Vec<(usize, usize)> = tgt.iter().enumerate().map(|(i, &t)| (i, t)).collect();
            let picked = g.pick(logp, &picks);
            let total = g.sum(picked);
            chunk_losses.push(g.scale(total, -1.0 / rows as f64));

            let prev: Vec<Var> = tgt.iter().map(|&t| states[t]).collect();
            let h_prev = g.concat_rows(&prev);
            let stepped = self.gru.step(g, a, h_prev);
            for (i, &t) in tgt.iter().enumerate() {
                states[t] = g.slice_rows(stepped, i, 1);
            }
        }
        if chunk_losses.is_empty() {
            return Ok(g.constant_scalar(0.0));
        }
        let joined = g.concat_rows(&chunk_losses);
        let total = g.sum(joined);
        Ok(g.scale(total, 1.0 / attractors.len() as f64))
    }

    /// Value of [`Self::training_loss_graph`] for plain matrices.
    pub fn training_loss(
        &self,
        params: &ParamStore,
        attractors: &[Array2<f64>],
        targets: &[Vec<usize>],
        num_speakers: usize,
    ) -> Result<f64> {
        let mut g = Graph::new(params);
        let vars: Vec<Option<Var>> = attractors
            .iter()
            .map(|a| (a.nrows() > 0).then(|| g.input(a.clone())))
            .collect();
        let loss = self.training_loss_graph(&mut g, &vars, targets, num_speakers)?;
        Ok(g.scalar(loss))
    }

    /// Binds the network to its parameters for decoding.
    pub fn with<'a>(&'a self, params: &'a ParamStore) -> NeuralClusterer<'a> {
        NeuralClusterer { net: self, params }
    }
}

/// A [`ClusterNet`] together with its parameter values.
#[derive(Debug, Clone, Copy)]
pub struct NeuralClusterer<'a> {
    pub net: &'a ClusterNet,
    pub params: &'a ParamStore,
}
