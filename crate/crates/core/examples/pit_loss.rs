//! Permutation-invariant BCE on a chunk whose outputs come in the wrong order.

use eendrc::losses::{attractor_existence_loss, pit_diarization_loss, ChunkLabels};
use ndarray::array;

fn main() -> eendrc::Result<()> {
    let labels = ChunkLabels::new(
        array![
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 1.0, 1.0],
            [0.0, 0.0, 1.0]
        ],
        vec![4, 0, 2],
    )?;
    // Output column 0 tracks speaker 1, column 1 tracks speaker 2, column 2 tracks speaker 0.
    let activities = array![
        [0.1, 0.1, 0.9],
        [0.8, 0.2, 0.7],
        [0.9, 0.1, 0.2],
        [0.7, 0.8, 0.1],
        [0.2, 0.9, 0.1]
    ];

    let (loss, perm) = pit_diarization_loss(&activities, &labels)?;
    println!("PIT loss {loss:.4}");
    for (out, &lab) in perm.mapping.iter().enumerate() {
        println!(
            "  output {out} -> label column {lab} (global speaker {})",
            labels.global_speaker_ids[lab]
        );
    }

    let existence = [0.95, 0.9, 0.8, 0.1];
    println!("existence loss {:.4}", attractor_existence_loss(&existence, 3)?);
    Ok(())
}
