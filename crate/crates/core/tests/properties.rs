use std::collections::BTreeSet;

use epiweak::corpus::{
    ingest_paths, is_emoji, normalize_text, IngestOptions, EMOTICONS, URL_PATTERN,
};
use epiweak::labeling::{EpidemicClass, MultiMatchPolicy, Ruleset};
use epiweak::pipeline::{stage_label, StageSeeds};
use epiweak::synth::{synth_corpus, SynthSpec};
use proptest::prelude::*;

fn cased(word: &str, mask: &[bool]) -> String {
    word.chars()
        .zip(mask.iter().cycle())
        .map(|(c, &up)| {
            if up {
                c.to_ascii_uppercase()
            } else {
                c.to_ascii_lowercase()
            }
        })
        .collect()
}

const INSENSITIVE: &[(&str, EpidemicClass)] = &[
    ("cholera", EpidemicClass::Cholera),
    ("ebola", EpidemicClass::Ebola),
    ("mers", EpidemicClass::Mers),
    ("swineflu", EpidemicClass::SwineFlu),
    ("h1n1", EpidemicClass::H1N1),
    ("influenza", EpidemicClass::Influenza),
    ("sars", EpidemicClass::Sars),
    ("hiv", EpidemicClass::HivAids),
    ("yellowfever", EpidemicClass::YellowFever),
];

proptest! {
    #[test]
    fn case_insensitive_rules_ignore_case(
        k in 0..INSENSITIVE.len(),
        mask in prop::collection::vec(any::<bool>(), 1..12),
        hash in any::<bool>(),
    ) {
        let rules = Ruleset::default_rules();
        let (word, class) = INSENSITIVE[k];
        let text = format!("news {}{} today", if hash { "#" } else { "" }, cased(word, &mask));
        prop_assert_eq!(rules.match_classes(&text), BTreeSet::from([class]));
    }

    #[test]
    fn aids_matches_only_in_upper_case(mask in prop::collection::vec(any::<bool>(), 4)) {
        let rules = Ruleset::default_rules();
        let word = cased("aids", &mask);
        let got = rules.match_classes(&format!("world {word} day"));
        if word == "AIDS" {
            prop_assert_eq!(got, BTreeSet::from([EpidemicClass::HivAids]));
        } else {
            prop_assert!(got.is_empty());
        }
    }

    #[test]
    fn keywords_inside_words_do_not_match(
        k in 0..INSENSITIVE.len(),
        prefix in "[a-z0-9_]{1,3}",
        suffix in "[a-z0-9_]{1,3}",
    ) {
        let rules = Ruleset::default_rules();
        let (word, _) = INSENSITIVE[k];
        let before = rules.match_classes(&format!("{prefix}{word}"));
        let after = rules.match_classes(&format!("{word}{suffix}"));
        prop_assert!(before.is_empty(), "{}{} matched {:?}", prefix, word, before);
        prop_assert!(after.is_empty(), "{}{} matched {:?}", word, suffix, after);
    }

    #[test]
    fn normalization_is_idempotent_and_clean(
        parts in prop::collection::vec(
            prop_oneof![
                "[a-zA-Z]{1,8}",
                Just("https://t.co/x1".to_owned()),
                Just("www.who.int".to_owned()),
                Just("😷".to_owned()),
                Just("\u{200D}".to_owned()),
                Just(":)".to_owned()),
                Just(":-(".to_owned()),
                Just("<3".to_owned()),
                "[ \t\n]{1,3}",
                "[#@.,!?]",
            ],
            0..20,
        ),
    ) {
        let raw: String = parts.concat();
        let once = normalize_text(&raw);
        prop_assert_eq!(normalize_text(&once), once.clone());
        prop_assert!(!once.contains("  "));
        prop_assert_eq!(once.trim(), once.as_str());
        prop_assert!(!once.chars().any(is_emoji));
        prop_assert!(!regex::Regex::new(URL_PATTERN).unwrap().is_match(&once));
        prop_assert!(!once.split(' ').any(|t| EMOTICONS.contains(&t)));
    }
}

fn write_corpus(spec: &SynthSpec) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    std::fs::write(&path, synth_corpus(spec).unwrap()).unwrap();
    (dir, path)
}

#[test]
fn ingest_removes_exactly_the_planted_duplicates() {
    use EpidemicClass::*;
    let spec = SynthSpec {
        duplicate_rate: 0.2,
        retweet_rate: 0.0,
        ..SynthSpec::with_counts([(Cholera, 150), (Ebola, 250), (NonEpidemic, 600)], 17)
    };
    let (_dir, path) = write_corpus(&spec);
    let (docs, stats) = ingest_paths(&[path], &IngestOptions::default()).unwrap();
    assert_eq!(stats.records_in, 1000);
    assert_eq!(stats.duplicates, 200);
    assert_eq!(docs.len(), 800);
}

#[test]
fn ingest_accounts_for_every_planted_record() {
    use EpidemicClass::*;
    let spec = SynthSpec::with_counts(
        [(Mers, 300), (SwineFlu, 300), (Flu, 100), (NonEpidemic, 700)],
        4,
    );
    let (_dir, path) = write_corpus(&spec);
    let (docs, stats) = ingest_paths(&[path], &IngestOptions::default()).unwrap();
    assert_eq!(stats.records_in, 1400);
    assert_eq!(stats.retweets, 140);
    assert_eq!(stats.duplicates, 70);
    assert_eq!(stats.parsed, stats.originals + stats.retweets);
    assert_eq!(stats.records_in, stats.parsed + stats.parse_skips());
    assert_eq!(docs.len(), 1400 - 140 - 70);

    let rules = Ruleset::default_rules();
    let seeds = StageSeeds::from_master(1);
    let classes = [Mers, SwineFlu];
    let n_docs = docs.len();
    let (dataset, label) = stage_label(
        docs,
        &rules,
        &classes,
        MultiMatchPolicy::Exclude,
        seeds.sampling,
    )
    .unwrap();
    assert_eq!(
        label.labeled_total() + label.ambiguous_excluded + label.unmatched,
        n_docs
    );
    assert_eq!(label.ambiguous_excluded, 0);
    assert_eq!(label.negatives, label.included_positives);
    assert_eq!(dataset.len(), 2 * label.included_positives);
    assert!(label.labeled[&Flu] > 0);
    assert!(!dataset.class_counts().contains_key(&Flu));
}

#[test]
fn gzip_and_plain_inputs_agree() {
    use std::io::Write;
    let spec = SynthSpec::with_counts(
        [(EpidemicClass::Ebola, 50), (EpidemicClass::NonEpidemic, 50)],
        8,
    );
    let bytes = synth_corpus(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let plain = dir.path().join("a.jsonl");
    let gz = dir.path().join("b.jsonl.gz");
    std::fs::write(&plain, &bytes).unwrap();
    let mut enc = flate2::write::GzEncoder::new(
        std::fs::File::create(&gz).unwrap(),
        flate2::Compression::fast(),
    );
    enc.write_all(&bytes).unwrap();
    enc.finish().unwrap();
    let opts = IngestOptions::default();
    assert_eq!(
        ingest_paths(&[&plain], &opts).unwrap(),
        ingest_paths(&[&gz], &opts).unwrap()
    );
}

#[test]
fn labeling_is_independent_of_thread_count() {
    let spec = SynthSpec::with_counts(
        [
            (EpidemicClass::Cholera, 200),
            (EpidemicClass::NonEpidemic, 400),
        ],
        6,
    );
    let (_dir, path) = write_corpus(&spec);
    let rules = Ruleset::default_rules();
    let run = |threads| {
        epiweak::pipeline::with_threads(Some(threads), || {
            let (docs, _) = ingest_paths(
                &[&path],
                &IngestOptions {
                    chunk_size: 64,
                    ..Default::default()
                },
            )
            .unwrap();
            stage_label(
                docs,
                &rules,
                &[EpidemicClass::Cholera],
                MultiMatchPolicy::Exclude,
                99,
            )
            .unwrap()
        })
        .unwrap()
    };
    let (a, sa) = run(1);
    let (b, sb) = run(4);
    assert_eq!(a, b);
    assert_eq!(sa, sb);
}
