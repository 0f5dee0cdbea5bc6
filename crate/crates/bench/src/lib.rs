//! Shared inputs for the benchmarks.

use epiweak::labeling::EpidemicClass;
use epiweak::synth::{synth_corpus, SynthSpec};

/// A synthetic corpus of roughly `n` lines split across four epidemic
/// classes and negatives.
pub fn corpus_lines(n: usize, seed: u64) -> Vec<String> {
    use EpidemicClass::*;
    let part = n / 10;
    let spec = SynthSpec::with_counts(
        [
            (Cholera, part),
            (Ebola, 2 * part),
            (Mers, part),
            (SwineFlu, part),
            (NonEpidemic, n - 5 * part),
        ],
        seed,
    );
    let bytes = synth_corpus(&spec).expect("valid spec");
    String::from_utf8(bytes)
        .expect("corpus is UTF-8")
        .lines()
        .map(str::to_owned)
        .collect()
}
