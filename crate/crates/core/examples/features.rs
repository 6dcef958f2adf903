//! Log-mel extraction, splicing and subsampling of a simulated mixture.

use eendrc::datasim::{simulate_mixture, MixtureRecipe, SyntheticCorpus};
use eendrc::features::{compute_logmel, extract, splice_and_subsample, SAMPLE_RATE};

fn main() -> eendrc::Result<()> {
    let corpus = SyntheticCorpus::new(6, 0);
    let mix = simulate_mixture(&corpus, &MixtureRecipe::new(2, 7))?;
    println!(
        "waveform: {} samples at {SAMPLE_RATE} Hz ({:.2} s)",
        mix.waveform.samples.len(),
        mix.waveform.duration_s()
    );

    let logmel = compute_logmel(&mix.waveform)?;
    println!(
        "log-mel: {} x {} every {:.0} ms",
        logmel.num_frames(),
        logmel.dim(),
        1000.0 * logmel.frame_shift_s
    );

    let spliced = splice_and_subsample(&logmel)?;
    println!(
        "spliced: {} x {} every {:.0} ms",
        spliced.num_frames(),
        spliced.dim(),
        1000.0 * spliced.frame_shift_s
    );
    assert_eq!(spliced, extract(&mix.waveform)?);

    let row = logmel.frames.row(logmel.num_frames() / 2);
    let shown: Vec<String> = row.iter().take(8).map(|v| format!("{v:.2}")).collect();
    println!("middle frame, first bins: [{}]", shown.join(", "));
    Ok(())
}
