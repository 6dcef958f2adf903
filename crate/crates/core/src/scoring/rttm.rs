//! RTTM segment files.
//!
//! Each line is
//! `SPEAKER <rec-id> 1 <onset> <duration> <NA> <NA> <speaker> <NA> <NA>`
//! with onset and duration written to millisecond precision. Blank lines, `;;`
//! comments and non-`SPEAKER` records are skipped on read.

use std::fmt::Write as _;
use std::path::Path;

use crate::datasim::{ReferenceSegments, Segment};
use crate::error::{Error, Result};

pub fn format_rttm(segments: &ReferenceSegments, recording_id: &str) -> String {
    let mut out = String::new();
    for s in &segments.segments {
        writeln!(
            out,
            "SPEAKER {recording_id} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
            s.onset, s.duration, s.speaker
        )
        .expect("writing to a String");
    }
    out
}

pub fn parse_rttm(text: &str) -> Result<ReferenceSegments> {
    let mut segments = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with(";;") {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields[0] != "SPEAKER" {
            continue;
        }
        if fields.len() < 8 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected at least 8 fields, found {}", fields.len()),
            });
        }
        let number = |idx: usize, what: &str| -> Result<f64> {
            fields[idx]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: format!("bad {what} {:?}", fields[idx]),
                })
        };
        let onset = number(3, "onset")?;
        let duration = number(4, "duration")?;
        if onset < 0.0 || duration < 0.0 {
            return Err(Error::Parse {
                line: line_no,
                message: "negative onset or duration".into(),
            });
        }
        segments.push(Segment {
            speaker: fields[7].to_string(),
            onset,
            duration,
        });
    }
    Ok(ReferenceSegments { segments })
}

pub fn read_rttm(path: impl AsRef<Path>) -> Result<ReferenceSegments> {
    parse_rttm(&std::fs::read_to_string(path)?)
}

pub fn write_rttm(segments: &ReferenceSegments, recording_id: &str, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_rttm(segments, recording_id))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_line() {
        let s = parse_rttm("SPEAKER rec 1 0.50 2.00 <NA> <NA> spk0 <NA> <NA>\n").unwrap();
        assert_eq!(
            s.segments,
            vec![Segment {
                speaker: "spk0".into(),
                onset: 0.5,
                duration: 2.0
            }]
        );
    }

    #[test]
    fn empty_file() {
        assert!(parse_rttm("").unwrap().segments.is_empty());
    }

    #[test]
    fn round_trip_through_file() {
        let segs = ReferenceSegments {
            segments: vec![
                Segment {
                    speaker: "a".into(),
                    onset: 0.0,
                    duration: 1.25,
                },
                Segment {
                    speaker: "b".into(),
                    onset: 3.1,
                    duration: 0.4,
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.rttm");
        write_rttm(&segs, "rec1", &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "SPEAKER rec1 1 0.000 1.250 <NA> <NA> a <NA> <NA>"
        );
        let back = read_rttm(&path).unwrap();
        for (x, y) in back.segments.iter().zip(&segs.segments) {
            assert_eq!(x.speaker, y.speaker);
            assert!((x.onset - y.onset).abs() < 1e-3);
            assert!((x.duration - y.duration).abs() < 1e-3);
        }
    }

    #[test]
    fn malformed_lines_report_line_number() {
        let err = parse_rttm("SPEAKER r 1 0.0 1.0 <NA> <NA> a <NA> <NA>\nSPEAKER r 1 x 1.0 <NA> <NA> a\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(matches!(
            parse_rttm("SPEAKER r 1 0.0").unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
    }
}
