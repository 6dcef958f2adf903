use ndarray::Array2;

use crate::assignment::max_weight_assignment;
use crate::datasim::ReferenceSegments;

pub const DEFAULT_COLLAR_S: f64 = 0.25;

/// Error components in seconds; `der` in percent.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DerBreakdown {
    pub miss_s: f64,
    pub false_alarm_s: f64,
    pub speaker_confusion_s: f64,
    pub scored_speech_s: f64,
    pub der: f64,
}

impl DerBreakdown {
    pub fn errors_s(&self) -> f64 {
        self.miss_s + self.false_alarm_s + self.speaker_confusion_s
    }
}

struct Region {
    duration: f64,
    refs: Vec<usize>,
    hyps: Vec<usize>,
}

fn speaker_index(segs: &ReferenceSegments) -> (Vec<String>, Vec<usize>) {
    let mut names: Vec<String> = Vec::new();
    let idx = segs
        .segments
        .iter()
        .map(|s| match names.iter().position(|n| *n == s.speaker) {
            Some(i) => i,
            None => {
                names.push(s.speaker.clone());
                names.len() - 1
            }
        })
        .collect();
    (names, idx)
}

fn active_at(segs: &ReferenceSegments, idx: &[usize], t: f64) -> Vec<usize> {
    let mut out: Vec<usize> = segs
        .segments
        .iter()
        .zip(idx)
        .filter(|(s, _)| s.onset <= t && t < s.onset + s.duration)
        .map(|(_, &i)| i)
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Diarization error rate with a no-score collar of `collar_s` on both
/// sides of every reference boundary. Overlapped speech is scored, and
/// hypothesis speakers are mapped to reference speakers by one global
/// optimal assignment.
pub fn der(reference: &ReferenceSegments, hypothesis: &ReferenceSegments, collar_s: f64) -> DerBreakdown {
    let (ref_names, ref_idx) = speaker_index(reference);
    let (hyp_names, hyp_idx) = speaker_index(hypothesis);

    let ref_bounds: Vec<f64> = reference
        .segments
        .iter()
        .flat_map(|s| [s.onset, s.onset + s.duration])
        .collect();
    let mut points: Vec<f64> = ref_bounds.clone();
    points.extend(hypothesis.segments.iter().flat_map(|s| [s.onset, s.onset + s.duration]));
    if collar_s > 0.0 {
        points.extend(ref_bounds.iter().flat_map(|b| [b - collar_s, b + collar_s]));
    }
    points.sort_by(f64::total_cmp);
    points.dedup();

    let mut regions = Vec::new();
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let mid = 0.5 * (a + b);
        if collar_s > 0.0 && ref_bounds.iter().any(|&bd| (mid - bd).abs() < collar_s) {
            continue;
        }
        let refs = active_at(reference, &ref_idx, mid);
        let hyps = active_at(hypothesis, &hyp_idx, mid);
        if refs.is_empty() && hyps.is_empty() {
            continue;
        }
        regions.push(Region {
            duration: b - a,
            refs,
            hyps,
        });
    }

    let mut overlap = Array2::<f64>::zeros((ref_names.len(), hyp_names.len()));
    for r in &regions {
        for &i in &r.refs {
            for &j in &r.hyps {
                overlap[[i, j]] += r.duration;
            }
        }
    }
    let mapping = max_weight_assignment(overlap.view());

    let mut out = DerBreakdown::default();
    for r in &regions {
        let n_ref = r.refs.len() as f64;
        let n_hyp = r.hyps.len() as f64;
        let correct = r
            .refs
            .iter()
            .filter(|&&i| mapping[i].is_some_and(|j| r.hyps.contains(&j)))
            .count() as f64;
        out.scored_speech_s += r.duration * n_ref;
        out.miss_s += r.duration * (n_ref - n_hyp).max(0.0);
        out.false_alarm_s += r.duration * (n_hyp - n_ref).max(0.0);
        out.speaker_confusion_s += r.duration * (n_ref.min(n_hyp) - correct);
    }
    out.der = if out.scored_speech_s > 0.0 {
        100.0 * out.errors_s() / out.scored_speech_s
    } else {
        0.0
    };
    out
}
