//! Training loops, checkpoints, datasets and end-to-end inference.

mod checkpoint;
mod config;
mod data;
mod infer;
mod optim;
mod train;

pub use checkpoint::{
    average_checkpoints, averaging_window, load_checkpoint, load_optimizer, save_checkpoint, save_optimizer,
    write_atomic, CHECKPOINT_FORMAT,
};
pub use config::{env_seed, Schedule, TrainConfig, SEED_ENV};
pub use data::{simulate_mixtures, write_simulation, Dataset, Recording, LIST_FILE};
pub use infer::{
    ablate, decode_chunks, evaluate_modes, format_ablation, infer, score_hypothesis, shuffled_decode, shuffled_order,
    AblationRow, InferMode, InferOptions,
};
pub use optim::{learning_rate, Adam};
pub use train::{
    epoch_checkpoint, evaluate_losses, loss_and_gradients, run_training_pass, train_clustering, train_predictor,
    training_loss_graph, training_windows, EpochLog, RunManifest, Sample, Stage, Trainer, AVERAGED_CHECKPOINT,
    MANIFEST_FILE,
};
