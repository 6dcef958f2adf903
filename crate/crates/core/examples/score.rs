//! DER of a hypothesis RTTM against a reference, with and without a collar.
//!
//! ```text
//! cargo run --example score -- [ref.rttm hyp.rttm]
//! ```

use eendrc::scoring::{der, parse_rttm, read_rttm};

const REFERENCE: &str = "\
SPEAKER rec 1 0.00 4.00 <NA> <NA> alice <NA> <NA>
SPEAKER rec 1 3.00 3.00 <NA> <NA> bob <NA> <NA>
SPEAKER rec 1 7.00 2.00 <NA> <NA> alice <NA> <NA>
";

const HYPOTHESIS: &str = "\
SPEAKER rec 1 0.10 3.80 <NA> <NA> spk0 <NA> <NA>
SPEAKER rec 1 3.20 2.80 <NA> <NA> spk1 <NA> <NA>
SPEAKER rec 1 7.00 1.00 <NA> <NA> spk1 <NA> <NA>
SPEAKER rec 1 8.00 1.50 <NA> <NA> spk0 <NA> <NA>
";

fn main() -> eendrc::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (reference, hypothesis) = match args.as_slice() {
        [r, h] => (read_rttm(r)?, read_rttm(h)?),
        _ => (parse_rttm(REFERENCE)?, parse_rttm(HYPOTHESIS)?),
    };
    for collar in [0.0, 0.25] {
        let d = der(&reference, &hypothesis, collar);
        println!(
            "collar {collar:.2} s: DER {:6.2} % (miss {:.2} s, false alarm {:.2} s, confusion {:.2} s, scored {:.2} s)",
            d.der, d.miss_s, d.false_alarm_s, d.speaker_confusion_s, d.scored_speech_s
        );
    }
    Ok(())
}
