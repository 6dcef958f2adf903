//! Chunk-level attractors linked across chunks by the recurrent clusterer.
//!
//! ```text
//! cargo run --release --example neural_clustering -- [checkpoint.safetensors]
//! ```
//!
//! Without a checkpoint the model is randomly initialised, so the speaker
//! labels are arbitrary but the decoding machinery is the same.

use eendrc::clustering::enumerate_assignments;
use eendrc::datasim::{simulate_mixture, MixtureRecipe, SyntheticCorpus};
use eendrc::features::extract;
use eendrc::harness::load_checkpoint;
use eendrc::model::{DiarizationModel, EncoderConfig};
use ndarray::array;

fn main() -> eendrc::Result<()> {
    let log_probs = array![[-0.1, -2.5, -3.0], [-2.0, -0.3, -1.5], [-1.0, -1.2, -0.9]];
    println!("top assignments (columns 0, 1 are known speakers, 2 spawns a new one):");
    for (perm, score) in enumerate_assignments(log_probs.view(), 4) {
        println!("  {:?} {score:.3}", perm.mapping);
    }

    let model = match std::env::args().nth(1) {
        Some(path) => load_checkpoint(path)?,
        None => DiarizationModel::new(EncoderConfig::desk(), 0)?,
    };
    let corpus = SyntheticCorpus::new(12, 3);
    let mix = simulate_mixture(&corpus, &MixtureRecipe::new(3, 5))?;
    let feats = extract(&mix.waveform)?;
    let (_, chunks) = model.predict_chunks(&feats)?;
    let counts: Vec<usize> = chunks.iter().map(|c| c.num_speakers()).collect();
    println!("{} chunks, attractors per chunk {counts:?}", chunks.len());

    let clusterer = model.clusterer().with(&model.params);
    for beam in [1, 3, 5] {
        let best = clusterer.beam_search(&chunks, beam, model.clusterer().initial_state(&model.params))?;
        let links: Vec<&Vec<usize>> = best.perms_so_far.iter().map(|p| &p.mapping).take(6).collect();
        println!(
            "beam {beam}: {} speakers, score {:.3}, first chunks {links:?}",
            best.state.num_speakers(),
            best.score
        );
    }

    let (hyp, state) = clusterer.decode_recording(&chunks, 3, feats.frame_shift_s)?;
    let refined = clusterer.refine_decode(&chunks, &state, 3, feats.frame_shift_s)?;
    println!(
        "decoded {} x {} activities; refined pass has {} speakers",
        hyp.num_frames(),
        hyp.num_speakers(),
        refined.num_speakers()
    );
    Ok(())
}
