use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eendrc::datasim::{labels_from_segments, ManifestCorpus, SyntheticCorpus, UtteranceCorpus};
use eendrc::features::{extract, Waveform};
use eendrc::harness::{
    ablate, average_checkpoints, env_seed, format_ablation, infer, load_checkpoint, save_checkpoint, train_clustering,
    train_predictor, write_simulation, Dataset, InferMode, InferOptions, TrainConfig,
};
use eendrc::scoring::{der, read_rttm, write_rttm};
use eendrc::{Error, Result};

#[derive(Parser)]
#[command(
    name = "eendrc",
    version,
    about = "Two-stage speaker diarization with recurrent neural clustering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate overlapped conversations into a dataset directory.
    Simulate {
        /// `speaker_id<TAB>wav_path` manifest, or `synthetic[:VOICES[:SEED]]`.
        #[arg(long)]
        corpus: String,
        #[arg(long)]
        n_speakers: usize,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the chunk-level predictor.
    TrainPredictor {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train the clustering stage from a predictor checkpoint.
    TrainClustering {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        init: PathBuf,
    },
    /// Diarize one recording and write RTTM.
    Infer {
        #[arg(long, default_value = "eda-rc")]
        mode: String,
        #[arg(long, default_value_t = 3)]
        beam: usize,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reference RTTM, required by `--mode oracle`.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        /// COP-K-means cluster count; defaults to the largest chunk count.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Diarization error rate of a hypothesis RTTM.
    Score {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        collar: f64,
    },
    /// DER over shuffle ratios and beam sizes.
    Ablate {
        /// Shuffled chunk percentage; repeat or comma-separate.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        shuffle: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "3")]
        beam: Vec<usize>,
        /// Repeat to compare several models.
        #[arg(long, required = true)]
        ckpt: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Average checkpoints parameter-wise.
    Average {
        #[arg(long, required = true)]
        ckpt: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn corpus_from_spec(spec: &str) -> Result<Box<dyn UtteranceCorpus>> {
    if let Some(rest) = spec.strip_prefix("synthetic") {
        let parts: Vec<&str> = rest.split(':').skip(1).collect();
        let num = |i: usize, default: u64| -> Result<u64> {
            parts
                .get(i)
                .map(|p| {
                    p.parse()
                        .map_err(|_| Error::InvalidInput(format!("bad corpus spec {spec:?}")))
                })
                .unwrap_or(Ok(default))
        };
        if !rest.is_empty() && !rest.starts_with(':') {
            return Err(Error::InvalidInput(format!("bad corpus spec {spec:?}")));
        }
        return Ok(Box::new(SyntheticCorpus::new(num(0, 12)? as usize, num(1, 0)?)));
    }
    Ok(Box::new(ManifestCorpus::load(spec)?))
}

fn required_dir(dir: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    dir.clone()
        .ok_or_else(|| Error::Config(format!("config is missing {key}")))
}

fn print_epochs(manifest: &eendrc::harness::RunManifest) {
    for e in &manifest.epochs {
        println!(
            "epoch {:3} loss {:.4} diar {:.4} attr {:.4} post {:.4}",
            e.epoch, e.loss, e.diar, e.attr, e.post
        );
    }
}

fn recording_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "rec".into())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            corpus,
            n_speakers,
            count,
            seed,
            out,
        } => {
            let seed = env_seed()?.unwrap_or(seed);
            let corpus = corpus_from_spec(&corpus)?;
            let ids = write_simulation(corpus.as_ref(), n_speakers, count, seed, &out)?;
            println!("wrote {} mixtures to {}", ids.len(), out.display());
        }
        Command::TrainPredictor { config } => {
            let cfg = TrainConfig::load(&config)?;
            let data = Dataset::load_dir(required_dir(&cfg.data_dir, "data_dir")?)?;
            let out = required_dir(&cfg.out_dir, "out_dir")?;
            let (_, manifest) = train_predictor(&cfg, &data, Some(&out))?;
            print_epochs(&manifest);
            println!("run {} written to {}", manifest.hash(), out.display());
        }
        Command::TrainClustering { config, init } => {
            let cfg = TrainConfig::load(&config)?;
            let data = Dataset::load_dir(required_dir(&cfg.data_dir, "data_dir")?)?;
            let out = required_dir(&cfg.out_dir, "out_dir")?;
            let model = load_checkpoint(&init)?;
            let (_, manifest) = train_clustering(&cfg, &data, model, Some(&init), Some(&out))?;
            print_epochs(&manifest);
            println!("run {} written to {}", manifest.hash(), out.display());
        }
        Command::Infer {
            mode,
            beam,
            ckpt,
            wav,
            out,
            reference,
            k,
        } => {
            let mode: InferMode = mode.parse()?;
            let model = load_checkpoint(&ckpt)?;
            let feats = extract(&Waveform::read_wav(&wav)?)?;
            let labels = match &reference {
                Some(r) => Some(labels_from_segments(&read_rttm(r)?, feats.num_frames(), feats.frame_shift_s).0),
                None => None,
            };
            let opts = InferOptions {
                beam,
                baseline_k: k,
                ..InferOptions::default()
            };
            let hyp = infer(&model, &feats, mode, &opts, labels.as_ref())?;
            let segments = hyp.segments(opts.threshold);
            write_rttm(&segments, &recording_id(&wav), &out)?;
            println!(
                "{} speakers, {} segments -> {}",
                hyp.num_speakers(),
                segments.segments.len(),
                out.display()
            );
        }
        Command::Score { reference, hyp, collar } => {
            if !(collar >= 0.0) {
                return Err(Error::InvalidInput("collar must be non-negative".into()));
            }
            let d = der(&read_rttm(&reference)?, &read_rttm(&hyp)?, collar);
            println!(
                "DER {:.2} % miss {:.2} s false_alarm {:.2} s confusion {:.2} s scored {:.2} s",
                d.der, d.miss_s, d.false_alarm_s, d.speaker_confusion_s, d.scored_speech_s
            );
        }
        Command::Ablate {
            shuffle,
            beam,
            ckpt,
            data,
            seed,
        } => {
            let seed = env_seed()?.unwrap_or(seed);
            let data = Dataset::load_dir(&data)?;
            let ratios: Vec<f64> = shuffle.iter().map(|p| p / 100.0).collect();
            let mut rows = Vec::new();
            for path in &ckpt {
                let model = load_checkpoint(path)?;
                rows.extend(ablate(&model, &recording_id(path), &data, &ratios, &beam, seed, 0.5)?);
            }
            print!("{}", format_ablation(&rows));
        }
        Command::Average { ckpt, out } => {
            let model = average_checkpoints(&ckpt)?;
            save_checkpoint(&model, &out)?;
            println!("averaged {} checkpoints -> {}", ckpt.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("bad arguments");
            eprintln!("error: usage: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
