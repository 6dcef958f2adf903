//! Hypothesis binarisation, diarization error rate and RTTM I/O.

mod der;
mod rttm;

use ndarray::Array2;

pub use der::{der, DerBreakdown, DEFAULT_COLLAR_S};
pub use rttm::{format_rttm, parse_rttm, read_rttm, write_rttm};

use crate::datasim::{ReferenceSegments, Segment};

/// Default binarisation threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Global per-speaker activity of a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct DiarizationHypothesis {
    /// `T x S_global`, values in `[0, 1]`.
    pub activities: Array2<f64>,
    pub frame_shift_s: f64,
}

impl DiarizationHypothesis {
    pub fn empty(num_frames: usize, frame_shift_s: f64) -> Self {
        Self {
            activities: Array2::zeros((num_frames, 0)),
            frame_shift_s,
        }
    }

    pub fn num_speakers(&self) -> usize {
        self.activities.ncols()
    }

    pub fn num_frames(&self) -> usize {
        self.activities.nrows()
    }

    pub fn segments(&self, threshold: f64) -> ReferenceSegments {
        probs_to_segments(&self.activities, self.frame_shift_s, threshold)
    }
}

/// Runs of frames with activity at or above `threshold` become segments;
/// frame `t` covers `[t * shift, (t + 1) * shift)`. Speakers are named
/// `spk{column}`.
pub fn probs_to_segments(activities: &Array2<f64>, frame_shift_s: f64, threshold: f64) -> ReferenceSegments {
    let mut segments = Vec::new();
    for (j, col) in activities.columns().into_iter().enumerate() {
        let mut run_start: Option<usize> = None;
        for t in 0..=col.len() {
            let on = t < col.len() && col[t] >= threshold;
            match (on, run_start) {
                (true, None) => run_start = Some(t),
                (false, Some(s)) => {
                    segments.push(Segment {
                        speaker: format!("spk{j}"),
                        onset: s as f64 * frame_shift_s,
                        duration: (t - s) as f64 * frame_shift_s,
                    });
                    run_start = None;
                }
                _ => {}
            }
        }
    }
    segments.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.speaker.cmp(&b.speaker)));
    ReferenceSegments { segments }
}
