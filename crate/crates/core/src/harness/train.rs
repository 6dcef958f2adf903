use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::checkpoint::{averaging_window, load_optimizer, save_checkpoint, save_optimizer, write_atomic};
use super::config::TrainConfig;
use super::data::Dataset;
use super::optim::{learning_rate, Adam};
use crate::autograd::{Gradients, Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::losses::{attractor_existence_loss_graph, pit_diarization_loss_graph, ChunkLabels, LossTerms};
use crate::model::{chunk_spans, DiarizationModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    /// Chunk-level predictor: `L_diar + L_attr`.
    Predictor,
    /// Adds the clustering loss `L_post`.
    Clustering,
}

/// A training window of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub recording: usize,
    pub features: FeatureSequence,
    pub labels: Array2<f64>,
}

/// Cuts every recording into consecutive windows of `window` frames; a
/// trailing piece shorter than one chunk is dropped unless it is the whole
/// recording.
pub fn training_windows(data: &Dataset, window: usize, chunk_size: usize) -> Vec<Sample> {
    let mut out = Vec::new();
    for (r, rec) in data.recordings.iter().enumerate() {
        let t = rec.features.num_frames();
        let mut start = 0;
        while start < t {
            let len = window.min(t - start);
            if len >= chunk_size.min(t) {
                out.push(Sample {
                    recording: r,
                    features: FeatureSequence {
                        frames: rec.features.frames.slice(s![start..start + len, ..]).to_owned(),
                        frame_shift_s: rec.features.frame_shift_s,
                    },
                    labels: rec.labels.slice(s![start..start + len, ..]).to_owned(),
                });
            }
            start += len;
        }
    }
    out
}

/// Keeps the speakers active in `labels`, ordered by their first active frame.
fn first_appearance_columns(labels: &Array2<f64>) -> Array2<f64> {
    let mut cols: Vec<(usize, usize)> = (0..labels.ncols())
        .filter_map(|j| labels.column(j).iter().position(|&v| v > 0.0).map(|t| (t, j)))
        .collect();
    cols.sort_unstable();
    let order: Vec<usize> = cols.into_iter().map(|(_, j)| j).collect();
    labels.select(Axis(1), &order)
}

fn mean_of(g: &mut Graph, terms: &[Var], count: usize) -> Var {
    if terms.is_empty() || count == 0 {
        return g.constant_scalar(0.0);
    }
    let joined = g.concat_rows(terms);
    let total = g.sum(joined);
    g.scale(total, 1.0 / count as f64)
}

/// Builds the training objective of one window on `g`. Chunk-level terms
/// are averaged over all chunks; the clustering term runs with teacher
/// forcing over speaker slots in first-appearance order.
pub fn training_loss_graph(
    model: &DiarizationModel,
    g: &mut Graph,
    features: &FeatureSequence,
    labels: &Array2<f64>,
    stage: Stage,
    use_global_loss: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(Var, LossTerms)> {
    model.check_input(features)?;
    if labels.nrows() != features.num_frames() {
        return Err(Error::InvalidInput(format!(
            "{} label frames for {} feature frames",
            labels.nrows(),
            features.num_frames()
        )));
    }
    let labels = first_appearance_columns(labels);
    let num_speakers = labels.ncols();
    let e = model.encode_graph(g, features, Some(&mut *rng));
    let spans = chunk_spans(features.num_frames(), model.config.chunk_size);
    let chunk_labels = spans
        .iter()
        .map(|&(start, len)| ChunkLabels::from_recording(&labels, start, len))
        .collect::<Result<Vec<_>>>()?;
    let counts: Vec<usize> = chunk_labels.iter().map(ChunkLabels::num_speakers).collect();
    let eda = model.eda_train_graph(g, e, &spans, &counts, rng);

    let mut diar_terms = Vec::new();
    let mut attr_terms = Vec::new();
    let mut present = Vec::new();
    let mut targets = Vec::with_capacity(spans.len());
    for (((start, len), cl), (att, probs)) in spans.iter().zip(&chunk_labels).zip(&eda) {
        let s_n = cl.num_speakers();
        attr_terms.push(attractor_existence_loss_graph(g, *probs, s_n)?);
        if s_n == 0 {
            targets.push(Vec::new());
            continue;
        }
        let a = g.slice_rows(*att, 0, s_n);
        let en = g.slice_rows(e, *start, *len);
        let logits = g.matmul_nt(en, a);
        let y = g.sigmoid(logits);
        let (ld, perm) = pit_diarization_loss_graph(g, y, &cl.matrix)?;
        diar_terms.push(ld);
        present.push(a);
        targets.push(perm.mapping[..s_n].iter().map(|&m| cl.global_speaker_ids[m]).collect());
    }
    let n = spans.len();
    let diar = mean_of(g, &diar_terms, n);
    let attr = mean_of(g, &attr_terms, n);
    let mut terms = LossTerms {
        diar: g.scalar(diar),
        attr: g.scalar(attr),
        ..LossTerms::default()
    };
    let mut total = g.add(diar, attr);

    if stage == Stage::Clustering {
        let memory = model.converter.memory(g, e);
        let converted = model.converter.forward(g, &present, memory);
        let mut it = converted.into_iter();
        let per_chunk: Vec<Option<Var>> = targets
            .iter()
            .map(|t| if t.is_empty() { None } else { it.next() })
            .collect();
        let post = model
            .clusterer
            .training_loss_graph(g, &per_chunk, &targets, num_speakers)?;
        terms.post = g.scalar(post);
        total = g.add(total, post);
    }

    if use_global_loss {
        let t = features.num_frames();
        let (att, probs) = model.eda_train_graph(g, e, &[(0, t)], &[num_speakers], rng).remove(0);
        let la = attractor_existence_loss_graph(g, probs, num_speakers)?;
        let global = if num_speakers > 0 {
            let a = g.slice_rows(att, 0, num_speakers);
            let logits = g.matmul_nt(e, a);
            let y = g.sigmoid(logits);
            let (ld, _) = pit_diarization_loss_graph(g, y, &labels)?;
            g.add(ld, la)
        } else {
            la
        };
        terms.global = Some(g.scalar(global));
        total = g.add(total, global);
    }

    let value = g.scalar(total);
    if !value.is_finite() {
        return Err(Error::TrainingDivergence(format!("loss is {value} ({terms:?})")));
    }
    Ok((total, terms))
}

/// Loss terms and parameter gradients of one window.
pub fn loss_and_gradients(
    model: &DiarizationModel,
    features: &FeatureSequence,
    labels: &Array2<f64>,
    stage: Stage,
    use_global_loss: bool,
    seed: u64,
) -> Result<(f64, LossTerms, Gradients)> {
    let mut g = Graph::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (total, terms) = training_loss_graph(model, &mut g, features, labels, stage, use_global_loss, &mut rng)?;
    Ok((g.scalar(total), terms, g.backward(total)))
}

/// Loss terms of one window without gradients.
pub fn run_training_pass(
    model: &DiarizationModel,
    features: &FeatureSequence,
    labels: &Array2<f64>,
    stage: Stage,
    use_global_loss: bool,
    seed: u64,
) -> Result<LossTerms> {
    let mut g = Graph::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(training_loss_graph(model, &mut g, features, labels, stage, use_global_loss, &mut rng)?.1)
}

/// Mean loss terms over every window of `data`.
pub fn evaluate_losses(
    model: &DiarizationModel,
    data: &Dataset,
    stage: Stage,
    window: usize,
    seed: u64,
) -> Result<LossTerms> {
    let samples = training_windows(data, window, model.config.chunk_size);
    let mut acc = LossTerms::default();
    for (i, s) in samples.iter().enumerate() {
        let t = run_training_pass(model, &s.features, &s.labels, stage, false, seed ^ i as u64)?;
        acc.diar += t.diar;
        acc.attr += t.attr;
        acc.post += t.post;
    }
    let n = samples.len().max(1) as f64;
    Ok(LossTerms {
        diar: acc.diar / n,
        attr: acc.attr / n,
        post: acc.post / n,
        global: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub diar: f64,
    pub attr: f64,
    pub post: f64,
    pub global: Option<f64>,
    pub learning_rate: f64,
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: Stage,
    pub config: TrainConfig,
    pub seed: u64,
    pub data_hash: String,
    pub init_checkpoint: Option<PathBuf>,
    pub epochs: Vec<EpochLog>,
}

impl RunManifest {
    /// SHA-256 of the configuration, stage and data hash; the loss log is
    /// not part of it.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.stage).expect("stage serialises"));
        h.update(self.config.to_toml().as_bytes());
        h.update(self.seed.to_le_bytes());
        h.update(self.data_hash.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serialises");
        write_atomic(path.as_ref(), json.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("bad manifest: {e}")))
    }
}

pub fn epoch_checkpoint(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join(format!("epoch{epoch:03}.safetensors"))
}

fn optimizer_file(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join(format!("epoch{epoch:03}.adam.safetensors"))
}

pub const AVERAGED_CHECKPOINT: &str = "averaged.safetensors";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Mini-batch trainer with per-epoch checkpoints.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub stage: Stage,
    pub model: DiarizationModel,
    pub optimizer: Adam,
    pub manifest: RunManifest,
    recent: VecDeque<ParamStore>,
}

impl Trainer {
    pub fn new(config: TrainConfig, stage: Stage, model: DiarizationModel, data: &Dataset) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let optimizer = Adam::from_config(&model.params, &config);
        let manifest = RunManifest {
            stage,
            config: config.clone(),
            seed: config.seed,
            data_hash: data.content_hash.clone(),
            init_checkpoint: None,
            epochs: Vec::new(),
        };
        Ok(Self {
            config,
            stage,
            model,
            optimizer,
            manifest,
            recent: VecDeque::new(),
        })
    }

    /// Continues a run from the checkpoint, optimizer state and manifest
    /// written after `epoch`.
    pub fn resume(out_dir: &Path, epoch: usize, data: &Dataset) -> Result<Self> {
        let manifest = RunManifest::load(out_dir.join(MANIFEST_FILE))?;
        if manifest.data_hash != data.content_hash {
            return Err(Error::Data("dataset differs from the one in the run manifest".into()));
        }
        if epoch == 0 || epoch > manifest.epochs.len() {
            return Err(Error::Checkpoint(format!("no epoch {epoch} in {}", out_dir.display())));
        }
        let model = super::checkpoint::load_checkpoint(epoch_checkpoint(out_dir, epoch))?;
        let optimizer = load_optimizer(&model, optimizer_file(out_dir, epoch))?;
        let window = averaging_window(manifest.config.epochs, manifest.config.average_fraction);
        let mut recent = VecDeque::new();
        for e in (epoch + 1).saturating_sub(window).max(1)..=epoch {
            recent.push_back(super::checkpoint::load_checkpoint(epoch_checkpoint(out_dir, e))?.params);
        }
        let mut manifest = manifest;
        manifest.epochs.truncate(epoch);
        Ok(Self {
            config: manifest.config.clone(),
            stage: manifest.stage,
            model,
            optimizer,
            manifest,
            recent,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.manifest.epochs.len()
    }

    /// One pass over shuffled training windows.
    pub fn run_epoch(&mut self, data: &Dataset) -> Result<EpochLog> {
        let epoch = self.epochs_done() + 1;
        let samples = training_windows(data, self.config.window_frames, self.model.config.chunk_size);
        if samples.is_empty() {
            return Err(Error::Data("no training windows".into()));
        }
        let epoch_seed = self.config.seed ^ ((epoch as u64) << 32);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
        let mut sums = LossTerms::default();
        let mut global_sum = 0.0;
        let mut total_sum = 0.0;
        let mut lr = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            let mut grads: Option<Gradients> = None;
            for &i in batch {
                let s = &samples[i];
                let (total, terms, g) = loss_and_gradients(
                    &self.model,
                    &s.features,
                    &s.labels,
                    self.stage,
                    self.config.use_global_loss,
                    epoch_seed ^ (i as u64).wrapping_mul(0x9E37_79B9),
                )
                .map_err(|e| match e {
                    Error::TrainingDivergence(m) => Error::TrainingDivergence(format!(
                        "epoch {epoch}, recording {}: {m}",
                        data.recordings[s.recording].id
                    )),
                    other => other,
                })?;
                total_sum += total;
                sums.diar += terms.diar;
                sums.attr += terms.attr;
                sums.post += terms.post;
                global_sum += terms.global.unwrap_or(0.0);
                match grads.as_mut() {
                    Some(acc) => acc.accumulate(g),
                    None => grads = Some(g),
                }
            }
            let mut grads = grads.expect("non-empty batch");
            grads.scale(1.0 / batch.len() as f64);
            let norm = grads.norm();
            if !norm.is_finite() {
                return Err(Error::TrainingDivergence(format!(
                    "epoch {epoch}: gradient norm {norm}"
                )));
            }
            if self.config.grad_clip > 0.0 && norm > self.config.grad_clip {
                grads.scale(self.config.grad_clip / norm);
            }
            lr = learning_rate(&self.config, self.model.config.hidden_dim, self.optimizer.step + 1);
            self.optimizer.update(&mut self.model.params, &grads, lr);
        }
        let n = samples.len() as f64;
        let log = EpochLog {
            epoch,
            loss: total_sum / n,
            diar: sums.diar / n,
            attr: sums.attr / n,
            post: sums.post / n,
            global: self.config.use_global_loss.then_some(global_sum / n),
            learning_rate: lr,
        };
        self.manifest.epochs.push(log.clone());
        let window = averaging_window(self.config.epochs, self.config.average_fraction);
        self.recent.push_back(self.model.params.clone());
        while self.recent.len() > window {
            self.recent.pop_front();
        }
        Ok(log)
    }

    /// Runs the remaining epochs. With `out_dir`, every epoch's checkpoint,
    /// optimizer state and the manifest are written there, and the averaged
    /// model goes to [`AVERAGED_CHECKPOINT`].
    pub fn train(&mut self, data: &Dataset, out_dir: Option<&Path>) -> Result<DiarizationModel> {
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
        }
        while self.epochs_done() < self.config.epochs {
            let log = self.run_epoch(data)?;
            log::info!(
                "epoch {} loss {:.4} (diar {:.4} attr {:.4} post {:.4})",
                log.epoch,
                log.loss,
                log.diar,
                log.attr,
                log.post
            );
            if let Some(dir) = out_dir {
                save_checkpoint(&self.model, epoch_checkpoint(dir, log.epoch))?;
                save_optimizer(&self.optimizer, &self.model, optimizer_file(dir, log.epoch))?;
                self.manifest.save(dir.join(MANIFEST_FILE))?;
            }
        }
        let averaged = self.averaged();
        if let Some(dir) = out_dir {
            save_checkpoint(&averaged, dir.join(AVERAGED_CHECKPOINT))?;
        }
        Ok(averaged)
    }

    /// Parameter mean over the last `ceil(average_fraction * epochs)` epochs.
    pub fn averaged(&self) -> DiarizationModel {
        let mut model = self.model.clone();
        if self.recent.is_empty() {
            return model;
        }
        let ids: Vec<_> = model.params.ids().collect();
        for &id in &ids {
            let mut acc = Array2::zeros(model.params.get(id).dim());
            for p in &self.recent {
                acc += p.get(id);
            }
            *model.params.get_mut(id) = acc / self.recent.len() as f64;
        }
        model
    }
}

/// Trains the chunk-level predictor from scratch.
pub fn train_predictor(
    config: &TrainConfig,
    data: &Dataset,
    out_dir: Option<&Path>,
) -> Result<(DiarizationModel, RunManifest)> {
    let model = DiarizationModel::new(config.model_config()?, config.seed)?;
    let mut trainer = Trainer::new(config.clone(), Stage::Predictor, model, data)?;
    let averaged = trainer.train(data, out_dir)?;
    Ok((averaged, trainer.manifest))
}

/// Second stage: starts from a trained predictor and adds the clustering
/// loss. The predictor's architecture wins over the config's model fields.
pub fn train_clustering(
    config: &TrainConfig,
    data: &Dataset,
    init: DiarizationModel,
    init_path: Option<&Path>,
    out_dir: Option<&Path>,
) -> Result<(DiarizationModel, RunManifest)> {
    let mut trainer = Trainer::new(config.clone(), Stage::Clustering, init, data)?;
    trainer.manifest.init_checkpoint = init_path.map(Path::to_path_buf);
    let averaged = trainer.train(data, out_dir)?;
    Ok((averaged, trainer.manifest))
}
