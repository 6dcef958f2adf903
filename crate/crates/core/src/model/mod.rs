//! Chunk-level predictor: Transformer encoder, encoder-decoder attractors
//! (EDA), chunk activities and attractor conversion.

mod config;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::EncoderConfig;

use crate::autograd::{Graph, ParamStore, Var};
use crate::clustering::ClusterNet;
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::nn::{dropout, FeedForward, LayerNorm, Linear, Lstm, MultiHeadAttention, ProjectedMemory};

/// Seed of the fixed frame shuffle the EDA encoder sees at inference.
const EVAL_SHUFFLE_SEED: u64 = 0x5eed;

/// Fixed frame order for a span of `len` frames at inference, so a chunk
/// gets the same attractors whether it is processed alone or in a batch.
fn eval_shuffle(len: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(EVAL_SHUFFLE_SEED ^ len as u64)
}

/// Encoder output, one row per input frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub embeddings: Array2<f64>,
}

impl EmbeddingSequence {
    pub fn num_frames(&self) -> usize {
        self.embeddings.nrows()
    }
}

/// Chunk boundaries `(start, len)` covering `num_frames` frames.
pub fn chunk_spans(num_frames: usize, chunk_size: usize) -> Vec<(usize, usize)> {
    assert!(chunk_size >= 1, "chunk_size must be positive");
    (0..num_frames)
        .step_by(chunk_size)
        .map(|start| (start, chunk_size.min(num_frames - start)))
        .collect()
}

/// Splits an embedding sequence into consecutive chunks; only the last may
/// be shorter than `chunk_size`.
pub fn split_chunks(e: &EmbeddingSequence, chunk_size: usize) -> Vec<EmbeddingSequence> {
    chunk_spans(e.num_frames(), chunk_size)
        .into_iter()
        .map(|(start, len)| EmbeddingSequence {
            embeddings: e.embeddings.slice(s![start..start + len, ..]).to_owned(),
        })
        .collect()
}

/// `sigmoid(E_n A^T)`: per-frame activity of each attractor.
pub fn chunk_activities(chunk: &Array2<f64>, attractors: &Array2<f64>) -> Result<Array2<f64>> {
    if attractors.nrows() > 0 && chunk.ncols() != attractors.ncols() {
        return Err(Error::InvalidInput(format!(
            "embedding dim {} does not match attractor dim {}",
            chunk.ncols(),
            attractors.ncols()
        )));
    }
    Ok(chunk.dot(&attractors.t()).mapv(|v| 1.0 / (1.0 + (-v).exp())))
}

/// Everything the predictor produces for one chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkResult {
    /// First frame of the chunk in the recording.
    pub start: usize,
    pub raw_attractors: Array2<f64>,
    pub existence_probs: Vec<f64>,
    /// `len x S_n`
    pub activities: Array2<f64>,
    pub converted_attractors: Array2<f64>,
}

impl ChunkResult {
    pub fn num_speakers(&self) -> usize {
        self.raw_attractors.nrows()
    }

    pub fn len(&self) -> usize {
        self.activities.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Attractors of one unchunked pass over a whole recording.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalResult {
    pub attractors: Array2<f64>,
    pub existence_probs: Vec<f64>,
    pub activities: Array2<f64>,
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn_norm: LayerNorm,
    attn: MultiHeadAttention,
    ff_norm: LayerNorm,
    ff: FeedForward,
}

/// Pre-norm Transformer encoder without positional encoding.
#[derive(Debug, Clone)]
pub struct Encoder {
    input: Linear,
    input_norm: LayerNorm,
    layers: Vec<EncoderLayer>,
    final_norm: LayerNorm,
    dropout: f64,
}

impl Encoder {
    fn new(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.hidden_dim;
        let layers = (0..cfg.num_layers)
            .map(|i| EncoderLayer {
                attn_norm: LayerNorm::new(store, &format!("encoder.layers.{i}.attn_norm"), d),
                attn: MultiHeadAttention::new(store, &format!("encoder.layers.{i}.attn"), d, cfg.num_heads, rng),
                ff_norm: LayerNorm::new(store, &format!("encoder.layers.{i}.ff_norm"), d),
                ff: FeedForward::new(store, &format!("encoder.layers.{i}.ff"), d, cfg.ff_dim, rng),
            })
            .collect();
        Self {
            input: Linear::new(store, "encoder.input", cfg.input_dim, d, rng),
            input_norm: LayerNorm::new(store, "encoder.input_norm", d),
            layers,
            final_norm: LayerNorm::new(store, "encoder.final_norm", d),
            dropout: cfg.dropout,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, mut rng: Option<&mut ChaCha8Rng>) -> Var {
        let h = self.input.forward(g, x);
        let mut h = self.input_norm.forward(g, h);
        for layer in &self.layers {
            let a = layer.attn_norm.forward(g, h);
            let a = layer.attn.forward(g, a, a);
            let a = dropout(g, a, self.dropout, rng.as_deref_mut());
            h = g.add(h, a);
            let f = layer.ff_norm.forward(g, h);
            let f = layer.ff.forward(g, f, self.dropout, rng.as_deref_mut());
            let f = dropout(g, f, self.dropout, rng.as_deref_mut());
            h = g.add(h, f);
        }
        self.final_norm.forward(g, h)
    }
}

/// Encoder-decoder attractor calculator.
///
/// An LSTM reads the (time-shuffled) chunk frames; its final state seeds a
/// second LSTM that is fed zero vectors, one step per attractor. Each
/// decoder output is an attractor, and a linear layer plus sigmoid gives its
/// existence probability.
#[derive(Debug, Clone)]
pub struct Eda {
    encoder: Lstm,
    decoder: Lstm,
    existence: Linear,
}

/// Raw EDA output for a batch of equal-length spans. Row `step * B + b`
/// holds attractor `step` of span `b`.
struct EdaBatch {
    attractors: Var,
    probs: Var,
    batch: usize,
}

impl Eda {
    fn new(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.hidden_dim;
        Self {
            encoder: Lstm::new(store, "eda.encoder", d, d, rng),
            decoder: Lstm::new(store, "eda.decoder", d, d, rng),
            existence: Linear::new(store, "eda.existence", d, 1, rng),
        }
    }

    fn run_batch(
        &self,
        g: &mut Graph,
        e: Var,
        spans: &[(usize, usize)],
        steps: usize,
        mut shuffle: Option<&mut ChaCha8Rng>,
    ) -> EdaBatch {
        let batch = spans.len();
        let len = spans[0].1;
        debug_assert!(spans.iter().all(|s| s.1 == len));
        let d = self.encoder.hidden;
        let orders: Vec<Vec<usize>> = spans
            .iter()
            .map(|&(start, len)| {
                let mut order: Vec<usize> = (start..start + len).collect();
                match shuffle.as_deref_mut() {
                    Some(rng) => order.shuffle(rng),
                    None => order.shuffle(&mut eval_shuffle(len)),
                }
                order
            })
            .collect();
        let mut h = g.input(Array2::zeros((batch, d)));
        let mut c = g.input(Array2::zeros((batch, d)));
        for t in 0..len {
            let idx: Vec<usize> = orders.iter().map(|o| o[t]).collect();
            let x = g.gather_rows(e, &idx);
            (h, c) = self.encoder.step(g, x, h, c);
        }
        let zeros = g.input(Array2::zeros((batch, d)));
        let mut outputs = Vec::with_capacity(steps);
        for _ in 0..steps {
            (h, c) = self.decoder.step(g, zeros, h, c);
            outputs.push(h);
        }
        let attractors = g.concat_rows(&outputs);
        let logits = self.existence.forward(g, attractors);
        let probs = g.sigmoid(logits);
        EdaBatch {
            attractors,
            probs,
            batch,
        }
    }

    /// Runs spans grouped by length; returns `(attractors, probs)` per span
    /// with `steps[i]` rows each, in span order.
    pub(crate) fn run(
        &self,
        g: &mut Graph,
        e: Var,
        spans: &[(usize, usize)],
        steps: &[usize],
        mut shuffle: Option<&mut ChaCha8Rng>,
    ) -> Vec<(Var, Var)> {
        let mut out: Vec<Option<(Var, Var)>> = vec![None; spans.len()];
        let mut lengths: Vec<usize> = spans.iter().map(|s| s.1).collect();
        lengths.sort_unstable();
        lengths.dedup();
        for len in lengths {
            let members: Vec<usize> = (0..spans.len()).filter(|&i| spans[i].1 == len).collect();
            let group: Vec<(usize, usize)> = members.iter().map(|&i| spans[i]).collect();
            let max_steps = members.iter().map(|&i| steps[i]).max().unwrap_or(0).max(1);
            let batch = self.run_batch(g, e, &group, max_steps, shuffle.as_deref_mut());
            for (b, &i) in members.iter().enumerate() {
                let rows: Vec<usize> = (0..steps[i]).map(|s| s * batch.batch + b).collect();
                let att = g.gather_rows(batch.attractors, &rows);
                let probs = g.gather_rows(batch.probs, &rows);
                out[i] = Some((att, probs));
            }
        }
        out.into_iter().map(|o| o.expect("every span processed")).collect()
    }
}

/// One Transformer decoder layer: self-attention over a chunk's attractors,
/// cross-attention over the whole recording's embeddings, feed-forward.
#[derive(Debug, Clone)]
pub struct AttractorConverter {
    self_attn: MultiHeadAttention,
    self_norm: LayerNorm,
    cross_attn: MultiHeadAttention,
    cross_norm: LayerNorm,
    ff: FeedForward,
    ff_norm: LayerNorm,
}

impl AttractorConverter {
    fn new(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.hidden_dim;
        Self {
            self_attn: MultiHeadAttention::new(store, "converter.self_attn", d, cfg.num_heads, rng),
            self_norm: LayerNorm::new(store, "converter.self_norm", d),
            cross_attn: MultiHeadAttention::new(store, "converter.cross_attn", d, cfg.num_heads, rng),
            cross_norm: LayerNorm::new(store, "converter.cross_norm", d),
            ff: FeedForward::new(store, "converter.ff", d, cfg.ff_dim, rng),
            ff_norm: LayerNorm::new(store, "converter.ff_norm", d),
        }
    }

    pub(crate) fn memory(&self, g: &mut Graph, e: Var) -> ProjectedMemory {
        self.cross_attn.project_memory(g, e)
    }

    /// Converts several chunks' attractors at once. Self-attention stays
    /// within each chunk; the rest is row-wise.
    pub(crate) fn forward(&self, g: &mut Graph, chunks: &[Var], memory: ProjectedMemory) -> Vec<Var> {
        if chunks.is_empty() {
            return Vec::new();
        }
        let mut mixed = Vec::with_capacity(chunks.len());
        let mut sizes = Vec::with_capacity(chunks.len());
        for &a in chunks {
            let sa = self.self_attn.forward(g, a, a);
            let x = g.add(a, sa);
            mixed.push(self.self_norm.forward(g, x));
            sizes.push(g.shape(a).0);
        }
        let x = if mixed.len() == 1 {
            mixed[0]
        } else {
            g.concat_rows(&mixed)
        };
        let ca = self.cross_attn.attend(g, x, memory);
        let x = g.add(x, ca);
        let x = self.cross_norm.forward(g, x);
        let f = self.ff.forward(g, x, 0.0, None);
        let x = g.add(x, f);
        let x = self.ff_norm.forward(g, x);
        let mut out = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for n in sizes {
            out.push(g.slice_rows(x, start, n));
            start += n;
        }
        out
    }
}

/// The full two-stage network: chunk-level predictor plus the recurrent
/// clustering cell.
#[derive(Debug, Clone)]
pub struct DiarizationModel {
    pub config: EncoderConfig,
    pub params: ParamStore,
    pub(crate) encoder: Encoder,
    pub(crate) eda: Eda,
    pub(crate) converter: AttractorConverter,
    pub(crate) clusterer: ClusterNet,
}

impl DiarizationModel {
    /// Builds a freshly initialised model. Initialisation is a pure function
    /// of `(config, seed)`.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&mut params, &config, &mut rng);
        let eda = Eda::new(&mut params, &config, &mut rng);
        let converter = AttractorConverter::new(&mut params, &config, &mut rng);
        let clusterer = ClusterNet::new(&mut params, config.hidden_dim, &mut rng);
        Ok(Self {
            config,
            params,
            encoder,
            eda,
            converter,
            clusterer,
        })
    }

    pub fn clusterer(&self) -> &ClusterNet {
        &self.clusterer
    }

    pub(crate) fn check_input(&self, feats: &FeatureSequence) -> Result<()> {
        if feats.dim() != self.config.input_dim {
            return Err(Error::Config(format!(
                "model expects {}-dim input, got {}",
                self.config.input_dim,
                feats.dim()
            )));
        }
        if feats.num_frames() == 0 {
            return Err(Error::InvalidInput("empty feature sequence".into()));
        }
        Ok(())
    }

    /// Encoder on a graph. `rng` switches on training behaviour (dropout).
    pub(crate) fn encode_graph(&self, g: &mut Graph, feats: &FeatureSequence, rng: Option<&mut ChaCha8Rng>) -> Var {
        let x = g.input(feats.frames.clone());
        self.encoder.forward(g, x, rng)
    }

    /// Encoder output in evaluation mode.
    pub fn encode(&self, feats: &FeatureSequence) -> Result<EmbeddingSequence> {
        self.check_input(feats)?;
        let mut g = Graph::new(&self.params);
        let e = self.encode_graph(&mut g, feats, None);
        Ok(EmbeddingSequence {
            embeddings: g.value(e).clone(),
        })
    }

    /// Training-mode EDA: exactly `speakers[i] + 1` attractor slots per span.
    pub(crate) fn eda_train_graph(
        &self,
        g: &mut Graph,
        e: Var,
        spans: &[(usize, usize)],
        speakers: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Vec<(Var, Var)> {
        let steps: Vec<usize> = speakers.iter().map(|s| s + 1).collect();
        self.eda.run(g, e, spans, &steps, Some(rng))
    }

    /// Inference-mode EDA on a graph: attractor slots are accepted until the
    /// first existence probability below the threshold or until
    /// `max_local_speakers`. Returns `(accepted attractors, accepted probs)`.
    pub(crate) fn eda_infer_graph(
        &self,
        g: &mut Graph,
        e: Var,
        spans: &[(usize, usize)],
        max_speakers: usize,
    ) -> Vec<(Option<Var>, Vec<f64>)> {
        let steps = vec![max_speakers.max(1); spans.len()];
        let raw = self.eda.run(g, e, spans, &steps, None);
        raw.into_iter()
            .map(|(att, probs)| {
                let pv: Vec<f64> = g.value(probs).column(0).to_vec();
                let accepted = accepted_count(&pv, self.config.existence_threshold, max_speakers);
                let att = (accepted > 0).then(|| g.slice_rows(att, 0, accepted));
                (att, pv[..accepted].to_vec())
            })
            .collect()
    }

    /// Inference-mode EDA over a single chunk of embeddings.
    pub fn eda_attractors(&self, chunk: &EmbeddingSequence) -> Result<(Array2<f64>, Vec<f64>)> {
        if chunk.num_frames() == 0 {
            return Err(Error::InvalidInput("empty chunk".into()));
        }
        let mut g = Graph::new(&self.params);
        let e = g.input(chunk.embeddings.clone());
        let mut res = self.eda_infer_graph(&mut g, e, &[(0, chunk.num_frames())], self.config.max_local_speakers);
        let (att, probs) = res.remove(0);
        let att = match att {
            Some(a) => g.value(a).clone(),
            None => Array2::zeros((0, self.config.hidden_dim)),
        };
        Ok((att, probs))
    }

    /// Converts raw attractors with cross-attention over the full recording.
    pub fn convert_attractors(&self, raw: &Array2<f64>, e: &EmbeddingSequence) -> Result<Array2<f64>> {
        if raw.nrows() == 0 {
            return Ok(Array2::zeros((0, self.config.hidden_dim)));
        }
        if raw.ncols() != self.config.hidden_dim || e.embeddings.ncols() != self.config.hidden_dim {
            return Err(Error::InvalidInput("attractor/embedding dim mismatch".into()));
        }
        let mut g = Graph::new(&self.params);
        let ev = g.input(e.embeddings.clone());
        let mem = self.converter.memory(&mut g, ev);
        let a = g.input(raw.clone());
        let out = self.converter.forward(&mut g, &[a], mem);
        Ok(g.value(out[0]).clone())
    }

    /// Full chunk-level prediction for a recording in evaluation mode.
    pub fn predict_chunks(&self, feats: &FeatureSequence) -> Result<(EmbeddingSequence, Vec<ChunkResult>)> {
        self.check_input(feats)?;
        let mut g = Graph::new(&self.params);
        let e = self.encode_graph(&mut g, feats, None);
        let spans = chunk_spans(feats.num_frames(), self.config.chunk_size);
        let eda = self.eda_infer_graph(&mut g, e, &spans, self.config.max_local_speakers);
        let memory = self.converter.memory(&mut g, e);
        let present: Vec<Var> = eda.iter().filter_map(|(a, _)| *a).collect();
        let converted = self.converter.forward(&mut g, &present, memory);
        let mut converted = converted.into_iter();
        let ev = g.value(e).clone();
        let d = self.config.hidden_dim;
        let chunks = spans
            .iter()
            .zip(eda)
            .map(|(&(start, len), (att, probs))| {
                let emb = ev.slice(s![start..start + len, ..]).to_owned();
                let (raw, conv) = match att {
                    Some(a) => (
                        g.value(a).clone(),
                        g.value(converted.next().expect("one conversion per chunk")).clone(),
                    ),
                    None => (Array2::zeros((0, d)), Array2::zeros((0, d))),
                };
                let activities = chunk_activities(&emb, &raw)?;
                Ok(ChunkResult {
                    start,
                    raw_attractors: raw,
                    existence_probs: probs,
                    activities,
                    converted_attractors: conv,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((EmbeddingSequence { embeddings: ev }, chunks))
    }

    /// Unchunked EDA over the whole recording, allowing up to
    /// `max_speakers` attractors.
    pub fn predict_global(&self, feats: &FeatureSequence, max_speakers: usize) -> Result<GlobalResult> {
        self.check_input(feats)?;
        let mut g = Graph::new(&self.params);
        let e = self.encode_graph(&mut g, feats, None);
        let t = feats.num_frames();
        let (att, probs) = self.eda_infer_graph(&mut g, e, &[(0, t)], max_speakers).remove(0);
        let attractors = match att {
            Some(a) => g.value(a).clone(),
            None => Array2::zeros((0, self.config.hidden_dim)),
        };
        let activities = chunk_activities(g.value(e), &attractors)?;
        Ok(GlobalResult {
            attractors,
            existence_probs: probs,
            activities,
        })
    }
}

/// Number of leading probabilities at or above `threshold`, capped.
pub fn accepted_count(probs: &[f64], threshold: f64, max_speakers: usize) -> usize {
    probs.iter().take(max_speakers).take_while(|&&p| p >= threshold).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::SPLICED_DIM;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            input_dim: 6,
            num_layers: 1,
            hidden_dim: 8,
            num_heads: 2,
            ff_dim: 12,
            dropout: 0.0,
            chunk_size: 4,
            train_speakers: 2,
            max_local_speakers: 3,
            existence_threshold: 0.5,
        }
    }

    fn feats(t: usize, dim: usize, seed: u64) -> FeatureSequence {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureSequence {
            frames: Array2::from_shape_fn((t, dim), |_| rng.gen_range(-1.0..1.0)),
            frame_shift_s: 0.1,
        }
    }

    #[test]
    fn spans_partition() {
        assert_eq!(chunk_spans(500, 50).len(), 10);
        assert_eq!(chunk_spans(7, 50), vec![(0, 7)]);
        assert_eq!(chunk_spans(55, 50), vec![(0, 50), (50, 5)]);
        assert!(chunk_spans(0, 5).is_empty());
    }

    #[test]
    fn split_round_trips() {
        let e = EmbeddingSequence {
            embeddings: Array2::from_shape_fn((55, 3), |(i, j)| (i * 3 + j) as f64),
        };
        let chunks = split_chunks(&e, 50);
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[1].num_frames(), 5);
        let views: Vec<_> = chunks.iter().map(|c| c.embeddings.view()).collect();
        let joined = ndarray::concatenate(ndarray::Axis(0), &views).unwrap();
        assert_eq!(joined, e.embeddings);
    }

    #[test]
    fn activities_closed_form() {
        let chunk = ndarray::array![[0.0], [3f64.ln()]];
        let att = ndarray::array![[1.0]];
        let y = chunk_activities(&chunk, &att).unwrap();
        assert!((y[[0, 0]] - 0.5).abs() < 1e-12);
        assert!((y[[1, 0]] - 0.75).abs() < 1e-12);

        let zero = Array2::zeros((1, 1));
        assert!(chunk_activities(&chunk, &zero).unwrap().iter().all(|&v| v == 0.5));

        let big = ndarray::array![[1e6]];
        let sat = chunk_activities(&ndarray::array![[1.0]], &big).unwrap();
        assert_eq!(sat[[0, 0]], 1.0);
    }

    #[test]
    fn stopping_rule() {
        assert_eq!(accepted_count(&[0.9, 0.8, 0.3], 0.5, 5), 2);
        assert_eq!(accepted_count(&[0.2, 0.9], 0.5, 5), 0);
        assert_eq!(accepted_count(&[0.9, 0.9, 0.9], 0.5, 2), 2);
    }

    #[test]
    fn encode_shape_and_determinism() {
        let mut cfg = tiny();
        cfg.input_dim = SPLICED_DIM;
        cfg.hidden_dim = 64;
        let model = DiarizationModel::new(cfg, 1).unwrap();
        let f = feats(10, SPLICED_DIM, 2);
        let a = model.encode(&f).unwrap();
        let b = model.encode(&f).unwrap();
        assert_eq!(a.embeddings.dim(), (10, 64));
        assert_eq!(a, b);
        let bad = feats(10, 7, 2);
        assert!(matches!(model.encode(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn encoder_attention_is_global() {
        let model = DiarizationModel::new(tiny(), 4).unwrap();
        let f = feats(12, 6, 5);
        let mut g2 = f.clone();
        g2.frames[[0, 0]] += 0.5;
        let a = model.encode(&f).unwrap().embeddings;
        let b = model.encode(&g2).unwrap().embeddings;
        assert!((0..6).any(|c| a[[11, c]] != b[[11, c]]));
    }

    #[test]
    fn training_eda_emits_one_extra_slot() {
        let model = DiarizationModel::new(tiny(), 4).unwrap();
        let f = feats(9, 6, 5);
        let mut g = Graph::new(&model.params);
        let e = model.encode_graph(&mut g, &f, None);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = model.eda_train_graph(&mut g, e, &[(0, 4), (4, 4), (8, 1)], &[2, 0, 1], &mut rng);
        let rows: Vec<usize> = out
            .iter()
            .map(|(a, p)| {
                assert_eq!(g.shape(*a).0, g.shape(*p).0);
                g.shape(*a).0
            })
            .collect();
        assert_eq!(rows, vec![3, 1, 2]);
    }

    #[test]
    fn chunk_prediction_contract() {
        let model = DiarizationModel::new(tiny(), 7).unwrap();
        let f = feats(10, 6, 8);
        let (e, chunks) = model.predict_chunks(&f).unwrap();
        assert_eq!(e.num_frames(), 10);
        assert_eq!(chunks.iter().map(|c| c.len()).collect::<Vec<_>>(), vec![4, 4, 2]);
        for c in &chunks {
            assert!(c.num_speakers() <= 3);
            assert_eq!(c.activities.ncols(), c.num_speakers());
            assert_eq!(c.converted_attractors.dim(), c.raw_attractors.dim());
            assert!(c.activities.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
        let again = model.predict_chunks(&f).unwrap();
        assert_eq!(again.1, chunks);
    }

    #[test]
    fn conversion_shapes_and_context() {
        let model = DiarizationModel::new(tiny(), 9).unwrap();
        let f = feats(10, 6, 10);
        let e = model.encode(&f).unwrap();
        assert_eq!(model.convert_attractors(&Array2::zeros((0, 8)), &e).unwrap().nrows(), 0);
        let raw = Array2::from_shape_fn((3, 8), |(i, j)| (i as f64 - j as f64) * 0.1);
        let conv = model.convert_attractors(&raw, &e).unwrap();
        assert_eq!(conv.dim(), (3, 8));
        let other = model.encode(&feats(10, 6, 11)).unwrap();
        let conv2 = model.convert_attractors(&raw, &other).unwrap();
        assert_ne!(conv, conv2);
    }
}
