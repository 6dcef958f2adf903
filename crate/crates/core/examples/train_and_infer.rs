//! Two-stage training on simulated conversations followed by evaluation of
//! every decoding mode on held-out mixtures.
//!
//! ```text
//! cargo run --release --example train_and_infer -- [train_mixtures] [predictor_epochs] [clustering_epochs]
//! ```

use std::time::Instant;

use eendrc::datasim::SyntheticCorpus;
use eendrc::harness::{
    evaluate_modes, train_clustering, train_predictor, Dataset, InferMode, InferOptions, TrainConfig,
};

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> eendrc::Result<()> {
    let (n_train, predictor_epochs, clustering_epochs) = (arg(1, 200), arg(2, 30), arg(3, 10));
    let t = Instant::now();
    let train = Dataset::simulate(&SyntheticCorpus::new(12, 1), 3, n_train, 11)?;
    let test = Dataset::simulate(&SyntheticCorpus::new(12, 2), 3, 5, 22)?;
    println!(
        "simulated {} + {} mixtures in {:.1?}",
        train.len(),
        test.len(),
        t.elapsed()
    );

    let predictor_cfg = TrainConfig {
        epochs: predictor_epochs,
        ..TrainConfig::default()
    };
    let (predictor, manifest) = train_predictor(&predictor_cfg, &train, None)?;
    for e in &manifest.epochs {
        println!("predictor epoch {}: loss {:.4}", e.epoch, e.loss);
    }

    let clustering_cfg = TrainConfig {
        epochs: clustering_epochs,
        ..TrainConfig::clustering_default()
    };
    let (model, manifest) = train_clustering(&clustering_cfg, &train, predictor, None, None)?;
    for e in &manifest.epochs {
        println!("clustering epoch {}: loss {:.4} (post {:.4})", e.epoch, e.loss, e.post);
    }

    let modes = [
        InferMode::EdaGlobal,
        InferMode::EdaRc,
        InferMode::EdaRcRefine,
        InferMode::CopKmeans,
        InferMode::Oracle,
        InferMode::Switch,
    ];
    let results = evaluate_modes(&model, &test, &modes, &InferOptions::default())?;
    for (mode, per_rec) in modes.iter().zip(&results) {
        let ders: Vec<f64> = per_rec.iter().filter_map(|r| r.as_ref().ok().map(|d| d.der)).collect();
        let failed = per_rec.len() - ders.len();
        let mean = ders.iter().sum::<f64>() / ders.len().max(1) as f64;
        println!(
            "{mode:>14}: mean DER {mean:6.2} % over {} recordings ({failed} failed)",
            ders.len()
        );
    }
    Ok(())
}
