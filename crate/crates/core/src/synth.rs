//! Seeded synthetic tweet corpus in the ingestion schema.
//!
//! Every epidemic document carries a keyword form that the default ruleset
//! maps to exactly its class; non-epidemic documents carry none. Retweets,
//! exact duplicates (after normalization), URLs and emoji are planted at the
//! configured rates so the cleaning stages have something to do.

use std::collections::{BTreeMap, HashSet};
use std::io::{self, Write};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::normalize_text;
use crate::labeling::{EpidemicClass, Ruleset};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    Invalid(String),
    #[error(
        "could not generate a fresh document for {0} after many attempts; enlarge the vocabulary"
    )]
    Exhausted(EpidemicClass),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Lines emitted per class, retweets and duplicates included.
    pub counts: BTreeMap<EpidemicClass, usize>,
    /// Shared background vocabulary size.
    pub background_vocab: usize,
    /// Signal vocabulary size per class.
    pub signal_vocab: usize,
    /// Chance an epidemic document mentions its keyword a second time.
    pub keyword_injection_prob: f64,
    /// Per-token chance of drawing from the document class's signal vocabulary.
    pub signal_rate: f64,
    /// Per-token chance of a random letter-string noise token.
    pub noise_rate: f64,
    pub retweet_rate: f64,
    pub duplicate_rate: f64,
    pub url_rate: f64,
    pub emoji_rate: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            counts: BTreeMap::new(),
            background_vocab: 2000,
            signal_vocab: 40,
            keyword_injection_prob: 0.2,
            signal_rate: 0.25,
            noise_rate: 0.2,
            retweet_rate: 0.1,
            duplicate_rate: 0.05,
            url_rate: 0.3,
            emoji_rate: 0.2,
            min_tokens: 6,
            max_tokens: 18,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn with_counts(
        counts: impl IntoIterator<Item = (EpidemicClass, usize)>,
        seed: u64,
    ) -> Self {
        Self {
            counts: counts.into_iter().collect(),
            seed,
            ..Self::default()
        }
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        for (name, p) in [
            ("keyword_injection_prob", self.keyword_injection_prob),
            ("signal_rate", self.signal_rate),
            ("noise_rate", self.noise_rate),
            ("retweet_rate", self.retweet_rate),
            ("duplicate_rate", self.duplicate_rate),
            ("url_rate", self.url_rate),
            ("emoji_rate", self.emoji_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if self.signal_rate + self.noise_rate > 1.0 {
            return bad("signal_rate + noise_rate exceeds 1".into());
        }
        if self.background_vocab == 0 || self.signal_vocab == 0 {
            return bad("vocabulary sizes must be positive".into());
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return bad(format!(
                "token range {}..={} is empty",
                self.min_tokens, self.max_tokens
            ));
        }
        Ok(())
    }
}

/// What was planted, for checking downstream accounting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub lines: usize,
    pub retweets: usize,
    pub duplicates: usize,
    pub per_class: BTreeMap<EpidemicClass, usize>,
}

/// Keyword surface forms the default ruleset maps to exactly one class.
/// The two-word "swine flu" also fires the flu rule, so only the one-token
/// forms are used for that class.
pub fn keyword_forms(class: EpidemicClass) -> &'static [&'static str] {
    use EpidemicClass::*;
    match class {
        Cholera => &["cholera", "#cholera"],
        Ebola => &["ebola", "#ebola"],
        Flu => &["flu", "#flu"],
        H1N1 => &["h1n1", "#h1n1"],
        HivAids => &["AIDS", "#AIDS", "hiv", "#hiv"],
        Influenza => &["influenza", "#influenza"],
        Mers => &["mers", "#mers"],
        Sars => &["sars", "#sars"],
        SwineFlu => &["swineflu", "#swineflu"],
        YellowFever => &["yellow fever", "yellowfever", "#yellowfever"],
        NonEpidemic => &[],
    }
}

/// Background words that look like keywords but must not match.
const NEAR_MISSES: &[&str] = &[
    "aids",
    "farmers",
    "summers",
    "fluent",
    "flute",
    "influential",
    "cholerae",
    "ebolavirus",
    "marsh",
    "sarsaparilla",
    "fever",
    "swine",
    "yellow",
    "hivemind",
];

const EMOJI: &[char] = &['😷', '🤒', '💉', '🦠', '😂', '☹', '❤', '👍', '🙏', '😭'];
const DECORATION_EMOTICONS: &[&str] = &[":)", ":(", ":D", "<3", ";)", "xD"];

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z", "br",
    "ch", "dr", "gl", "pl", "st", "tr", "sh", "th",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou", "ee"];
const CODAS: &[&str] = &["", "", "", "n", "r", "s", "t", "l", "m", "k"];

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).unwrap());
        w.push_str(VOWELS.choose(rng).unwrap());
        w.push_str(CODAS.choose(rng).unwrap());
    }
    w
}

fn noise_token(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(3..=9);
    (0..len)
        .map(|_| rng.gen_range(b'a'..=b'z') as char)
        .collect()
}

fn random_case(rng: &mut ChaCha8Rng, s: &str) -> String {
    match rng.gen_range(0..4) {
        0 => s.to_lowercase(),
        1 => s.to_uppercase(),
        2 => {
            let mut c = s.chars();
            c.next()
                .map(|f| f.to_uppercase().chain(c).collect())
                .unwrap_or_default()
        }
        _ => s
            .chars()
            .map(|ch| {
                if rng.gen_bool(0.5) {
                    ch.to_ascii_uppercase()
                } else {
                    ch.to_ascii_lowercase()
                }
            })
            .collect(),
    }
}

struct Vocab {
    background: Vec<String>,
    signal: BTreeMap<EpidemicClass, Vec<String>>,
}

fn build_vocab(spec: &SynthSpec, rules: &Ruleset, rng: &mut ChaCha8Rng) -> Vocab {
    let mut used: HashSet<String> = HashSet::new();
    let mut fresh = |rng: &mut ChaCha8Rng| loop {
        let w = pseudo_word(rng);
        if rules.match_classes(&w).is_empty() && used.insert(w.clone()) {
            return w;
        }
    };
    let mut background: Vec<String> = NEAR_MISSES.iter().map(|s| s.to_string()).collect();
    while background.len() < spec.background_vocab.max(NEAR_MISSES.len()) {
        background.push(fresh(rng));
    }
    let signal = EpidemicClass::ALL
        .iter()
        .map(|&c| (c, (0..spec.signal_vocab).map(|_| fresh(rng)).collect()))
        .collect();
    Vocab { background, signal }
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    rules: &'a Ruleset,
    vocab: Vocab,
    rng: ChaCha8Rng,
    seen_cores: HashSet<String>,
}

impl Generator<'_> {
    /// A keyword-bearing (or keyword-free) core text never produced before.
    fn fresh_core(&mut self, class: EpidemicClass) -> Result<String, SynthError> {
        let expected: Vec<_> = if class == EpidemicClass::NonEpidemic {
            vec![]
        } else {
            vec![class]
        };
        for _ in 0..1000 {
            let n = self
                .rng
                .gen_range(self.spec.min_tokens..=self.spec.max_tokens);
            let mut tokens: Vec<String> = (0..n)
                .map(|_| {
                    let roll: f64 = self.rng.gen();
                    if roll < self.spec.noise_rate {
                        noise_token(&mut self.rng)
                    } else if roll < self.spec.noise_rate + self.spec.signal_rate {
                        self.vocab.signal[&class]
                            .choose(&mut self.rng)
                            .unwrap()
                            .clone()
                    } else {
                        self.vocab.background.choose(&mut self.rng).unwrap().clone()
                    }
                })
                .collect();
            let forms = keyword_forms(class);
            if !forms.is_empty() {
                let mentions = 1 + usize::from(self.rng.gen_bool(self.spec.keyword_injection_prob));
                for _ in 0..mentions {
                    let form = *forms.choose(&mut self.rng).unwrap();
                    let word = if class == EpidemicClass::HivAids && form.contains("AIDS") {
                        form.to_owned()
                    } else {
                        random_case(&mut self.rng, form)
                    };
                    let at = self.rng.gen_range(0..=tokens.len());
                    tokens.insert(at, word);
                }
            }
            let core = tokens.join(" ");
            let matched: Vec<_> = self.rules.match_classes(&core).into_iter().collect();
            if matched == expected
                && normalize_text(&core) == core
                && self.seen_cores.insert(core.clone())
            {
                return Ok(core);
            }
        }
        Err(SynthError::Exhausted(class))
    }

    /// Adds URL, emoji and emoticon decoration that normalization strips.
    fn decorate(&mut self, core: &str) -> String {
        let mut tokens: Vec<String> = core.split(' ').map(str::to_owned).collect();
        if self.rng.gen_bool(self.spec.emoji_rate) {
            let e = *EMOJI.choose(&mut self.rng).unwrap();
            let at = self.rng.gen_range(0..tokens.len());
            if self.rng.gen_bool(0.5) {
                tokens[at].push(e);
            } else {
                tokens.insert(at, e.to_string());
            }
            if self.rng.gen_bool(0.3) {
                let emo = DECORATION_EMOTICONS.choose(&mut self.rng).unwrap();
                tokens.push((*emo).to_owned());
            }
        }
        if self.rng.gen_bool(self.spec.url_rate) {
            let slug: String = (0..10)
                .map(|_| {
                    let i = self.rng.gen_range(0..36u8);
                    (if i < 10 { b'0' + i } else { b'a' + i - 10 }) as char
                })
                .collect();
            let url = if self.rng.gen_bool(0.8) {
                format!("https://t.co/{slug}")
            } else {
                format!("www.example.org/{slug}")
            };
            let at = self.rng.gen_range(0..=tokens.len());
            tokens.insert(at, url);
        }
        let mut text = tokens.join(" ");
        if self.rng.gen_bool(0.1) {
            text.push_str("  \n");
        }
        text
    }
}

#[derive(Serialize)]
struct SynthTweet<'a> {
    id_str: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    full_text: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<&'a str>,
    lang: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    retweeted_status: Option<RetweetRef>,
}

#[derive(Serialize)]
struct RetweetRef {
    id_str: String,
}

/// Writes the corpus as line-delimited JSON and reports what was planted.
pub fn write_corpus<W: Write>(spec: &SynthSpec, mut out: W) -> Result<SynthSummary, SynthError> {
    spec.validate()?;
    let rules = Ruleset::default_rules();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vocab = build_vocab(spec, &rules, &mut rng);

    let mut slots: Vec<EpidemicClass> = spec
        .counts
        .iter()
        .flat_map(|(&c, &n)| std::iter::repeat_n(c, n))
        .collect();
    slots.shuffle(&mut rng);
    let total = slots.len();

    let n_retweets = (spec.retweet_rate * total as f64).round() as usize;
    let mut is_retweet = vec![false; total];
    for i in index::sample(&mut rng, total, n_retweets.min(total)) {
        is_retweet[i] = true;
    }
    // The first original of each class must stay unique so later duplicates
    // of that class always have a source.
    let mut first_seen: HashSet<EpidemicClass> = HashSet::new();
    let eligible: Vec<usize> = (0..total)
        .filter(|&i| !is_retweet[i] && !first_seen.insert(slots[i]))
        .collect();
    let n_dups = (spec.duplicate_rate * total as f64).round() as usize;
    if n_dups > eligible.len() {
        return Err(SynthError::Invalid(format!(
            "duplicate_rate needs {n_dups} duplicates but only {} documents can be duplicates",
            eligible.len()
        )));
    }
    let mut is_dup = vec![false; total];
    for k in index::sample(&mut rng, eligible.len(), n_dups) {
        is_dup[eligible[k]] = true;
    }

    let mut g = Generator {
        spec,
        rules: &rules,
        vocab,
        rng,
        seen_cores: HashSet::new(),
    };
    let mut originals: BTreeMap<EpidemicClass, Vec<String>> = BTreeMap::new();
    let mut summary = SynthSummary::default();
    let base_id: u64 = 1_000_000_000_000_000_000;

    for (i, &class) in slots.iter().enumerate() {
        let id_str = (base_id + i as u64).to_string();
        let (text, retweet_field) = if is_retweet[i] {
            let core = g.fresh_core(class)?;
            let user = g.rng.gen_range(1..100_000);
            match g.rng.gen_range(0..3) {
                0 => (format!("RT @user{user}: {core}"), false),
                1 => (format!("RT @user{user}: {core}"), true),
                _ => (g.decorate(&core), true),
            }
        } else if is_dup[i] {
            let pool = &originals[&class];
            let core = pool[g.rng.gen_range(0..pool.len())].clone();
            (g.decorate(&core), false)
        } else {
            let core = g.fresh_core(class)?;
            originals.entry(class).or_default().push(core.clone());
            (g.decorate(&core), false)
        };
        let long = g.rng.gen_bool(0.5);
        let tweet = SynthTweet {
            id_str,
            full_text: long.then_some(text.as_str()),
            text: (!long).then_some(text.as_str()),
            lang: "en",
            retweeted_status: retweet_field.then(|| RetweetRef {
                id_str: (base_id - 1 - i as u64).to_string(),
            }),
        };
        serde_json::to_writer(&mut out, &tweet).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
        summary.lines += 1;
        summary.retweets += usize::from(is_retweet[i]);
        summary.duplicates += usize::from(is_dup[i]);
        *summary.per_class.entry(class).or_default() += 1;
    }
    out.flush()?;
    Ok(summary)
}

/// The corpus as bytes.
pub fn synth_corpus(spec: &SynthSpec) -> Result<Vec<u8>, SynthError> {
    let mut buf = Vec::new();
    write_corpus(spec, &mut buf)?;
    Ok(buf)
}
