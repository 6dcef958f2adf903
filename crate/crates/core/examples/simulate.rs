//! Simulates a few overlapped conversations and reports their statistics.
//!
//! ```text
//! cargo run --example simulate -- [n_speakers] [count] [out_dir]
//! ```

use eendrc::datasim::{overlap_ratio, simulate_mixture, MixtureRecipe, SyntheticCorpus};
use eendrc::harness::write_simulation;

fn main() -> eendrc::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(3);
    let count: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let corpus = SyntheticCorpus::new(12, 0);

    for seed in 0..count as u64 {
        let recipe = MixtureRecipe::new(n, seed);
        let mix = simulate_mixture(&corpus, &recipe)?;
        println!(
            "seed {seed}: {:5.1} s, {} utterances, speakers {:?}, overlap {:.1} %",
            mix.waveform.duration_s(),
            mix.segments.segments.len(),
            mix.segments.speakers(),
            100.0 * overlap_ratio(&mix.segments),
        );
    }

    if let Some(dir) = args.get(2) {
        let ids = write_simulation(&corpus, n, count, 0, dir)?;
        println!("wrote {} mixtures to {dir}", ids.len());
    }
    Ok(())
}
