//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use itertools::Itertools;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eendrc::autograd::{Graph, ParamId, ParamStore, Var};
use eendrc::baseline::baseline_decode;
use eendrc::clustering::{infer_permutation, AssignmentTargets, ClusterState};
use eendrc::datasim::{overlap_ratio, simulate_mixture, MixtureRecipe, ReferenceSegments, Segment, SyntheticCorpus};
use eendrc::features::FeatureSequence;
use eendrc::harness::{
    evaluate_modes, infer, loss_and_gradients, train_clustering, train_predictor, Dataset, InferMode, InferOptions,
    Stage, TrainConfig,
};
use eendrc::losses::{
    attractor_existence_loss_graph, pit_diarization_loss, pit_diarization_loss_graph, ChunkLabels, BCE_EPS,
};
use eendrc::model::{ChunkResult, DiarizationModel, EncoderConfig};
use eendrc::nn::GruCell;
use eendrc::scoring::{der, format_rttm};
use eendrc::Error;

type Outcome = Result<String, String>;

struct Suite {
    failures: usize,
}

impl Suite {
    fn run(&mut self, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = t.elapsed();
        let result = match (result, budget) {
            (Ok(detail), Some(b)) if elapsed > b => Err(format!("{detail}; took {elapsed:.1?}, budget {b:?}")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("PASS {name}: {detail} [{elapsed:.1?}]"),
            Err(detail) => {
                self.failures += 1;
                println!("FAIL {name}: {detail} [{elapsed:.1?}]");
            }
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}

// ---------------------------------------------------------------- PIT

fn clipped_bce(p: f64, t: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

fn pit_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..500 {
        let s = rng.gen_range(1..=5);
        let len = rng.gen_range(8..=30);
        let act = Array2::from_shape_fn((len, s), |_| rng.gen_range(0.0..1.0));
        // Distinct label columns keep the optimal permutation unique.
        let lab = loop {
            let lab = Array2::from_shape_fn((len, s), |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
            if lab
                .columns()
                .into_iter()
                .map(|c| c.iter().map(|&v| v as u8).collect::<Vec<u8>>())
                .unique()
                .count()
                == s
            {
                break lab;
            }
        };
        let labels = ChunkLabels::new(lab.clone(), (0..s).collect()).map_err(|e| e.to_string())?;
        let (loss, perm) = pit_diarization_loss(&act, &labels).map_err(|e| e.to_string())?;
        let (best, best_loss) = (0..s)
            .permutations(s)
            .map(|p| {
                let total: f64 = (0..len)
                    .flat_map(|t| (0..s).map(move |i| (t, i)))
                    .map(|(t, i)| clipped_bce(act[[t, i]], lab[[t, p[i]]]))
                    .sum();
                (p, total / (len * s) as f64)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one permutation");
        ensure(perm.mapping == best, || {
            format!("case {case}: permutation {:?} vs brute force {best:?}", perm.mapping)
        })?;
        ensure((loss - best_loss).abs() <= 1e-9, || {
            format!("case {case}: loss {loss} vs brute force {best_loss}")
        })?;
    }
    Ok("500 instances agree with brute force".into())
}

// ---------------------------------------------------------------- gradients

const FD_STEP: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-3;

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

type LossAndGrads = (f64, Vec<Option<Array2<f64>>>);

fn store_of(s: &mut ParamStore) -> &mut ParamStore {
    s
}

fn model_store(m: &mut DiarizationModel) -> &mut ParamStore {
    &mut m.params
}

/// Compares analytic gradients at 20 random coordinates of the given
/// parameters with central differences. Returns the worst relative error.
fn check_gradients<S>(
    state: &mut S,
    params: fn(&mut S) -> &mut ParamStore,
    ids: &[ParamId],
    seed: u64,
    loss: impl Fn(&S) -> LossAndGrads,
) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, grads) = loss(state);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let which = rng.gen_range(0..ids.len());
        let id = ids[which];
        let (r, c) = params(state).get(id).dim();
        let (i, j) = (rng.gen_range(0..r), rng.gen_range(0..c));
        let analytic = grads[which].as_ref().map_or(0.0, |g| g[[i, j]]);
        let orig = params(state).get(id)[[i, j]];
        params(state).get_mut(id)[[i, j]] = orig + FD_STEP;
        let up = loss(state).0;
        params(state).get_mut(id)[[i, j]] = orig - FD_STEP;
        let down = loss(state).0;
        params(state).get_mut(id)[[i, j]] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let err = relative_error(analytic, numeric);
        if err >= GRAD_TOL {
            return Err(format!(
                "{}[{i},{j}]: analytic {analytic:.6e} vs numeric {numeric:.6e}",
                params(state).name(id)
            ));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

fn graph_loss(params: &ParamStore, ids: &[ParamId], build: impl Fn(&mut Graph) -> Var) -> LossAndGrads {
    let mut g = Graph::new(params);
    let root = build(&mut g);
    let grads = g.backward(root);
    (g.scalar(root), ids.iter().map(|&id| grads.get(id).cloned()).collect())
}

fn tiny_config() -> EncoderConfig {
    EncoderConfig {
        num_layers: 1,
        hidden_dim: 8,
        num_heads: 2,
        ff_dim: 16,
        dropout: 0.0,
        chunk_size: 6,
        ..EncoderConfig::desk()
    }
}

/// Full training loss of a tiny model, differentiated in the parameters
/// whose names start with `prefix`.
fn model_loss_check(prefix: &str, stage: Stage, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = DiarizationModel::new(tiny_config(), seed).map_err(|e| e.to_string())?;
    let frames = 18;
    let feats = FeatureSequence {
        frames: random_matrix(&mut rng, frames, model.config.input_dim, 1.0),
        frame_shift_s: 0.1,
    };
    let labels = Array2::from_shape_fn((frames, 3), |(t, s)| if (t / 3 + s) % 3 != 0 { 1.0 } else { 0.0 });
    let ids: Vec<ParamId> = model
        .params
        .ids()
        .filter(|&id| model.params.name(id).starts_with(prefix))
        .collect();
    ensure(!ids.is_empty(), || format!("no parameters named {prefix}*"))?;
    check_gradients(&mut model, model_store, &ids.clone(), seed, |m| {
        let (v, _, grads) = loss_and_gradients(m, &feats, &labels, stage, true, 5).expect("loss");
        (v, ids.iter().map(|&id| grads.get(id).cloned()).collect())
    })
}

fn gradient_checks() -> Outcome {
    let mut report = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let cell = GruCell::new(&mut store, "gru", 4, 5, &mut rng);
    let x = random_matrix(&mut rng, 3, 4, 1.0);
    let h = random_matrix(&mut rng, 3, 5, 1.0);
    let w = random_matrix(&mut rng, 3, 5, 1.0);
    let ids = vec![cell.input_weight, cell.hidden_weight, cell.input_bias, cell.hidden_bias];
    let worst = check_gradients(&mut store.clone(), store_of, &ids, 3, |p| {
        graph_loss(p, &ids, |g| {
            let xv = g.input(x.clone());
            let hv = g.input(h.clone());
            let out = cell.step(g, xv, hv);
            let weighted = g.mul_const(out, w.clone());
            g.sum(weighted)
        })
    })
    .map_err(|e| format!("GRU cell: {e}"))?;
    report.push(format!("gru {worst:.1e}"));

    let worst = model_loss_check("eda.", Stage::Predictor, 4).map_err(|e| format!("EDA: {e}"))?;
    report.push(format!("eda {worst:.1e}"));
    let worst = model_loss_check("encoder.", Stage::Predictor, 5).map_err(|e| format!("encoder: {e}"))?;
    report.push(format!("encoder {worst:.1e}"));

    let mut store = ParamStore::new();
    let logits = store.add("logits", random_matrix(&mut rng, 12, 3, 2.0));
    let lab = Array2::from_shape_fn((12, 3), |(t, s)| if (t + s) % 2 == 0 { 1.0 } else { 0.0 });
    let ids = vec![logits];
    let worst = check_gradients(&mut store.clone(), store_of, &ids, 6, |p| {
        graph_loss(p, &ids, |g| {
            let z = g.param(logits);
            let y = g.sigmoid(z);
            pit_diarization_loss_graph(g, y, &lab).expect("pit").0
        })
    })
    .map_err(|e| format!("PIT loss: {e}"))?;
    report.push(format!("pit {worst:.1e}"));

    let mut store = ParamStore::new();
    let logits = store.add("logits", random_matrix(&mut rng, 4, 1, 2.0));
    let ids = vec![logits];
    let worst = check_gradients(&mut store.clone(), store_of, &ids, 7, |p| {
        graph_loss(p, &ids, |g| {
            let z = g.param(logits);
            let y = g.sigmoid(z);
            attractor_existence_loss_graph(g, y, 3).expect("existence")
        })
    })
    .map_err(|e| format!("existence loss: {e}"))?;
    report.push(format!("existence {worst:.1e}"));

    let model = DiarizationModel::new(tiny_config(), 8).map_err(|e| e.to_string())?;
    let mut store = model.params.clone();
    let a0 = store.add("chunk0", random_matrix(&mut rng, 2, 8, 1.0));
    let a1 = store.add("chunk1", random_matrix(&mut rng, 3, 8, 1.0));
    let mut ids: Vec<ParamId> = store
        .ids()
        .filter(|&id| store.name(id).starts_with("cluster"))
        .collect();
    ids.extend([a0, a1]);
    let net = model.clusterer().clone();
    let worst = check_gradients(&mut store.clone(), store_of, &ids, 8, |p| {
        graph_loss(p, &ids, |g| {
            let atts = [Some(g.param(a0)), None, Some(g.param(a1))];
            let targets = [vec![1, 0], vec![], vec![2, 1, 0]];
            net.training_loss_graph(g, &atts, &targets, 3).expect("clustering loss")
        })
    })
    .map_err(|e| format!("clustering loss: {e}"))?;
    report.push(format!("clustering {worst:.1e}"));

    Ok(format!("worst relative error per component: {}", report.join(", ")))
}

// ---------------------------------------------------------------- clustering inference

fn random_state(rng: &mut ChaCha8Rng, k: usize, d: usize) -> ClusterState {
    ClusterState {
        hidden_states: random_matrix(rng, k, d, 1.5),
        new_speaker_init: Array1::from_shape_fn(d, |_| rng.gen_range(-1.5..1.5)),
    }
}

fn beam_equals_exhaustive() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..200 {
        let k = rng.gen_range(0..=4);
        let rows = rng.gen_range(1..=3);
        let d = 4;
        let state = random_state(&mut rng, k, d);
        let att = random_matrix(&mut rng, rows, d, 1.5);
        let lp = state.assignment_log_probs(att.view()).map_err(|e| e.to_string())?;

        let mut all: Vec<(Vec<usize>, f64)> = (0..rows)
            .map(|_| 0..=k)
            .multi_cartesian_product()
            .filter(|m| {
                let used: Vec<&usize> = m.iter().filter(|&&c| c < k).collect();
                used.iter().collect::<HashSet<_>>().len() == used.len()
            })
            .map(|m| {
                let score = m.iter().enumerate().map(|(i, &c)| lp[[i, c]]).sum();
                (m, score)
            })
            .collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let found = infer_permutation(&state, &att, all.len()).map_err(|e| e.to_string())?;
        ensure(found.len() == all.len(), || {
            format!("case {case}: {} assignments returned, {} valid", found.len(), all.len())
        })?;
        for ((perm, score), (m, s)) in found.iter().zip(&all) {
            ensure(&perm.mapping == m && (score - s).abs() < 1e-12, || {
                format!("case {case}: {:?} {score} vs exhaustive {m:?} {s}", perm.mapping)
            })?;
            let existing: Vec<_> = perm.mapping.iter().filter(|&&c| c < k).collect();
            ensure(existing.iter().collect::<HashSet<_>>().len() == existing.len(), || {
                format!("case {case}: cannot-link violated by {:?}", perm.mapping)
            })?;
        }
    }
    Ok("200 instances match exhaustive enumeration; every assignment respects cannot-link".into())
}

fn untouched_states_bitwise() -> Outcome {
    let model = DiarizationModel::new(tiny_config(), 12).map_err(|e| e.to_string())?;
    let net = model.clusterer();
    let d = model.config.hidden_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut untouched = 0;
    for case in 0..100 {
        let k = rng.gen_range(1..=6);
        let state = random_state(&mut rng, k, d);
        let rows = rng.gen_range(0..=k.min(4));
        let mut slots: Vec<usize> = (0..k).collect();
        for i in (1..slots.len()).rev() {
            slots.swap(i, rng.gen_range(0..=i));
        }
        let cols: Vec<usize> = (0..rows)
            .map(|i| if rng.gen_bool(0.3) { k } else { slots[i] })
            .collect();
        let att = random_matrix(&mut rng, rows, d, 1.0);
        let targets = AssignmentTargets::from_columns(&cols, k + 1).map_err(|e| e.to_string())?;
        let next = net
            .update_states(&model.params, &state, &att, &targets)
            .map_err(|e| e.to_string())?;
        for j in (0..k).filter(|j| !cols.contains(j)) {
            untouched += 1;
            let same = state
                .hidden_states
                .row(j)
                .iter()
                .zip(next.hidden_states.row(j))
                .all(|(a, b)| a.to_bits() == b.to_bits());
            ensure(same, || {
                format!("case {case}: state {j} changed without being assigned")
            })?;
        }
        ensure(next.new_speaker_init == state.new_speaker_init, || {
            format!("case {case}: new-speaker vector changed")
        })?;
    }
    Ok(format!(
        "{untouched} unassigned states bitwise unchanged over 100 cases"
    ))
}

// ---------------------------------------------------------------- DER

fn seg(speaker: &str, onset: f64, duration: f64) -> Segment {
    Segment {
        speaker: speaker.into(),
        onset,
        duration,
    }
}

fn random_reference(rng: &mut ChaCha8Rng, speakers: usize) -> ReferenceSegments {
    let mut segments = Vec::new();
    for s in 0..speakers {
        let mut t = rng.gen_range(0.0..2.0);
        for _ in 0..rng.gen_range(1..6) {
            let dur = rng.gen_range(0.2..3.0);
            segments.push(seg(&format!("spk{s}"), t, dur));
            t += dur + rng.gen_range(0.1..2.0);
        }
    }
    segments.sort_by(|a, b| a.onset.total_cmp(&b.onset));
    ReferenceSegments { segments }
}

fn der_scorer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for i in 0..50 {
        let n = rng.gen_range(1..=5);
        let r = random_reference(&mut rng, n);
        let d = der(&r, &r, 0.25);
        ensure(d.der == 0.0, || format!("reference {i}: DER(ref, ref) = {}", d.der))?;
    }

    // A single speaker [0, 10) s against a hypothesis [0, 8) s with no
    // collar: 2 s missed out of 10 s.
    let crafted = [
        (
            vec![seg("a", 0.0, 10.0)],
            vec![seg("x", 0.0, 8.0)],
            0.0,
            100.0 * 2.0 / 10.0,
        ),
        // a [0, 4), b [2, 6) against one hypothesis speaker [0, 6): 8 s of
        // speech, 2 s missed in the overlap, 2 s confused where only the
        // unmapped speaker talks.
        (
            vec![seg("a", 0.0, 4.0), seg("b", 2.0, 4.0)],
            vec![seg("x", 0.0, 6.0)],
            0.0,
            100.0 * 4.0 / 8.0,
        ),
        // a [1, 3) against x [1.2, 3.5) with a 0.25 s collar: scored
        // speech is [1.25, 2.75) = 1.5 s, false alarm on [3.25, 3.5).
        (
            vec![seg("a", 1.0, 2.0)],
            vec![seg("x", 1.2, 2.3)],
            0.25,
            100.0 * 0.25 / 1.5,
        ),
    ];
    for (i, (r, h, collar, expected)) in crafted.into_iter().enumerate() {
        let d = der(
            &ReferenceSegments { segments: r },
            &ReferenceSegments { segments: h },
            collar,
        );
        ensure((d.der - expected).abs() <= 1e-9, || {
            format!("crafted case {i}: DER {} vs hand-computed {expected}", d.der)
        })?;
    }

    for i in 0..100 {
        let n = rng.gen_range(1..=4);
        let r = random_reference(&mut rng, n);
        let n = rng.gen_range(1..=5);
        let h = random_reference(&mut rng, n);
        let names: Vec<String> = h.speakers();
        let mut renamed: Vec<usize> = (0..names.len()).collect();
        for k in (1..renamed.len()).rev() {
            renamed.swap(k, rng.gen_range(0..=k));
        }
        let relabelled = ReferenceSegments {
            segments: h
                .segments
                .iter()
                .map(|s| {
                    let idx = names.iter().position(|n| *n == s.speaker).expect("speaker");
                    seg(&format!("other{}", renamed[idx]), s.onset, s.duration)
                })
                .collect(),
        };
        let (a, b) = (der(&r, &h, 0.25).der, der(&r, &relabelled, 0.25).der);
        ensure((a - b).abs() <= 1e-9, || format!("relabel case {i}: {a} vs {b}"))?;
    }
    Ok("50 self-scores are 0, 3 crafted cases match, 100 relabellings invariant".into())
}

// ---------------------------------------------------------------- simulation

fn oracle_overlap(r: &ReferenceSegments) -> f64 {
    let mut cuts: Vec<f64> = r.segments.iter().flat_map(|s| [s.onset, s.offset()]).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let (mut speech, mut overlap) = (0.0, 0.0);
    for w in cuts.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let active: HashSet<&str> = r
            .segments
            .iter()
            .filter(|s| s.onset <= mid && mid < s.offset())
            .map(|s| s.speaker.as_str())
            .collect();
        if !active.is_empty() {
            speech += w[1] - w[0];
        }
        if active.len() >= 2 {
            overlap += w[1] - w[0];
        }
    }
    if speech > 0.0 {
        100.0 * overlap / speech
    } else {
        0.0
    }
}

fn simulation_statistics() -> Outcome {
    let corpus = SyntheticCorpus::new(12, 0);
    let mut mixtures = 0;
    for n in 1..=5 {
        for seed in 0..8 {
            let mix = simulate_mixture(&corpus, &MixtureRecipe::new(n, seed)).map_err(|e| e.to_string())?;
            let (lo, hi) = ((30.0 / n as f64).ceil() as usize, (60.0 / n as f64).floor() as usize);
            let speakers = mix.segments.speakers();
            ensure(speakers.len() == n, || {
                format!("n={n} seed={seed}: {} speakers", speakers.len())
            })?;
            for s in &speakers {
                let count = mix.segments.segments.iter().filter(|g| &g.speaker == s).count();
                ensure((lo..=hi).contains(&count), || {
                    format!("n={n} seed={seed}: {s} has {count} utterances, expected {lo}..={hi}")
                })?;
            }
            mixtures += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for i in 0..100 {
        let n = rng.gen_range(1..=5);
        let r = random_reference(&mut rng, n);
        let (a, b) = (overlap_ratio(&r), oracle_overlap(&r));
        ensure((a - b).abs() <= 1e-9, || {
            format!("segment set {i}: overlap {a} vs oracle {b}")
        })?;
    }
    Ok(format!(
        "{mixtures} mixtures within utterance bounds; 100 overlap ratios match the sweep oracle"
    ))
}

// ---------------------------------------------------------------- baseline and determinism

fn constructed_violation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let d = 8;
    let chunk = |rng: &mut ChaCha8Rng, start: usize, speakers: usize| ChunkResult {
        start,
        raw_attractors: random_matrix(rng, speakers, d, 1.0),
        existence_probs: vec![0.9; speakers],
        activities: Array2::from_elem((10, speakers), 0.8),
        converted_attractors: random_matrix(rng, speakers, d, 1.0),
    };
    // Five speakers talk at once in the second chunk while the cluster count
    // is estimated at four.
    let chunks = vec![chunk(&mut rng, 0, 3), chunk(&mut rng, 10, 5), chunk(&mut rng, 20, 2)];
    match baseline_decode(&chunks, Some(4), 0, 0.1) {
        Err(Error::ConstraintViolation(msg)) => Ok(format!("k = 4 on a 5-speaker chunk: {msg}")),
        Err(e) => Err(format!("unexpected error {e}")),
        Ok(_) => Err("decoding succeeded with an underestimated k".into()),
    }
}

fn infer_determinism() -> Outcome {
    let model = DiarizationModel::new(EncoderConfig::desk(), 16).map_err(|e| e.to_string())?;
    let corpus = SyntheticCorpus::new(8, 4);
    let mix = simulate_mixture(&corpus, &MixtureRecipe::new(3, 16)).map_err(|e| e.to_string())?;
    let feats = eendrc::features::extract(&mix.waveform).map_err(|e| e.to_string())?;
    let opts = InferOptions::default();
    for mode in [
        InferMode::EdaRc,
        InferMode::EdaRcRefine,
        InferMode::CopKmeans,
        InferMode::EdaGlobal,
    ] {
        let rttm = |_| -> Result<String, String> {
            let hyp = infer(&model, &feats, mode, &opts, None).map_err(|e| e.to_string())?;
            Ok(format_rttm(&hyp.segments(opts.threshold), "rec"))
        };
        let (a, b) = (rttm(0)?, rttm(1)?);
        ensure(a == b, || format!("{mode}: RTTM differs between runs"))?;
    }
    Ok("two runs of every mode give identical RTTM".into())
}

// ---------------------------------------------------------------- end to end

const TRAIN_MIXTURES: usize = 200;
const TEST_MIXTURES: usize = 20;

fn trained_model() -> Result<DiarizationModel, String> {
    let train = Dataset::simulate(&SyntheticCorpus::new(12, 1), 3, TRAIN_MIXTURES, 11).map_err(|e| e.to_string())?;
    let (predictor, _) = train_predictor(&TrainConfig::default(), &train, None).map_err(|e| e.to_string())?;
    let (model, _) = train_clustering(&TrainConfig::clustering_default(), &train, predictor, None, None)
        .map_err(|e| e.to_string())?;
    Ok(model)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

fn matched_end_to_end(model: &DiarizationModel) -> Outcome {
    let test = Dataset::simulate(&SyntheticCorpus::new(12, 2), 3, TEST_MIXTURES, 22).map_err(|e| e.to_string())?;
    let modes = [InferMode::EdaRc, InferMode::Oracle];
    let res = evaluate_modes(model, &test, &modes, &InferOptions::default()).map_err(|e| e.to_string())?;
    let rc: Vec<f64> = res[0]
        .iter()
        .map(|r| r.as_ref().map(|d| d.der))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let oracle: Vec<f64> = res[1]
        .iter()
        .map(|r| r.as_ref().map(|d| d.der))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let worse: Vec<String> = test
        .recordings
        .iter()
        .zip(rc.iter().zip(&oracle))
        .filter(|(_, (r, o))| o > r)
        .map(|(rec, (r, o))| format!("{} oracle {o:.2} > eda-rc {r:.2}", rec.id))
        .collect();
    let detail = format!("EDA-RC mean DER {:.2} %, oracle {:.2} %", mean(&rc), mean(&oracle));
    ensure(mean(&rc) < 15.0, || format!("{detail}; EDA-RC not below 15 %"))?;
    ensure(worse.is_empty(), || format!("{detail}; {}", worse.join(", ")))?;
    Ok(detail)
}

fn mismatch_ordering(model: &DiarizationModel) -> Outcome {
    let test = Dataset::simulate(&SyntheticCorpus::new(12, 3), 5, TEST_MIXTURES, 33).map_err(|e| e.to_string())?;
    let modes = [InferMode::Oracle, InferMode::EdaRc, InferMode::CopKmeans];
    let res = evaluate_modes(model, &test, &modes, &InferOptions::default()).map_err(|e| e.to_string())?;
    let ders = |k: usize| -> Vec<f64> { res[k].iter().filter_map(|r| r.as_ref().ok().map(|d| d.der)).collect() };
    let violations = res[2]
        .iter()
        .filter(|r| matches!(r, Err(Error::ConstraintViolation(_))))
        .count();
    let (oracle, rc, cop) = (mean(&ders(0)), mean(&ders(1)), mean(&ders(2)));
    let detail =
        format!("oracle {oracle:.2} %, EDA-RC {rc:.2} %, COP-K-means {cop:.2} % ({violations} constraint violations)");
    ensure(res[0].iter().chain(&res[1]).all(Result::is_ok), || {
        format!("{detail}; decoding failed")
    })?;
    ensure(oracle <= rc && (rc <= cop || violations >= 1), || {
        format!("{detail}; ordering broken")
    })?;
    Ok(detail)
}

fn main() {
    let mut suite = Suite { failures: 0 };
    println!(
        "NOTE full-scale DERs on LibriSpeech-360 simulations and CALLHOME need data and compute beyond this \
         suite and are not reproduced; the scaled checks below stand in for them."
    );
    suite.run("scale statement", None, || Ok("stated above".into()));
    suite.run("PIT equals brute force", Some(Duration::from_secs(10)), pit_equivalence);
    suite.run("gradient checks", Some(Duration::from_secs(120)), gradient_checks);
    suite.run(
        "beam search equals exhaustive",
        Some(Duration::from_secs(30)),
        beam_equals_exhaustive,
    );
    suite.run("unassigned states unchanged", None, untouched_states_bitwise);
    suite.run("DER scorer", None, der_scorer);
    suite.run("simulation statistics", None, simulation_statistics);
    suite.run("baseline constraint violation", None, constructed_violation);
    suite.run("inference determinism", None, infer_determinism);

    let t = Instant::now();
    match catch_unwind(trained_model) {
        Ok(Ok(model)) => {
            let trained = t.elapsed();
            println!("trained end-to-end model in {trained:.1?}");
            // the budget covers training as well as evaluation
            let budget = Duration::from_secs(45 * 60).saturating_sub(trained);
            suite.run("matched end to end", Some(budget), || matched_end_to_end(&model));
            suite.run("mismatched ordering", None, || mismatch_ordering(&model));
        }
        other => {
            let msg = match other {
                Ok(Err(e)) => e,
                _ => "training panicked".into(),
            };
            suite.run("matched end to end", None, || Err(msg.clone()));
            suite.run("mismatched ordering", None, || Err(msg.clone()));
        }
    }

    if suite.failures > 0 {
        println!("{} criteria failed", suite.failures);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
