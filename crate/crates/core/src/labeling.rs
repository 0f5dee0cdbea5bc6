//! Regex labeling heuristic and silver-standard dataset assembly.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::{Regex, RegexBuilder, RegexSet, RegexSetBuilder};
use serde::{Deserialize, Serialize};

use crate::corpus::NormalizedDocument;

/// The shipped ruleset, in the ruleset file format.
pub const DEFAULT_RULESET_TSV: &str = include_str!("../data/default_ruleset.tsv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EpidemicClass {
    #[serde(rename = "cholera")]
    Cholera,
    #[serde(rename = "ebola")]
    Ebola,
    #[serde(rename = "flu")]
    Flu,
    #[serde(rename = "h1n1")]
    H1N1,
    #[serde(rename = "hiv_aids")]
    HivAids,
    #[serde(rename = "influenza")]
    Influenza,
    #[serde(rename = "mers")]
    Mers,
    #[serde(rename = "sars")]
    Sars,
    #[serde(rename = "swine_flu")]
    SwineFlu,
    #[serde(rename = "yellow_fever")]
    YellowFever,
    #[serde(rename = "non_epidemic")]
    NonEpidemic,
}

impl EpidemicClass {
    pub const ALL: [EpidemicClass; 11] = [
        Self::Cholera,
        Self::Ebola,
        Self::Flu,
        Self::H1N1,
        Self::HivAids,
        Self::Influenza,
        Self::Mers,
        Self::Sars,
        Self::SwineFlu,
        Self::YellowFever,
        Self::NonEpidemic,
    ];

    /// The ten positive classes.
    pub const EPIDEMICS: [EpidemicClass; 10] = [
        Self::Cholera,
        Self::Ebola,
        Self::Flu,
        Self::H1N1,
        Self::HivAids,
        Self::Influenza,
        Self::Mers,
        Self::Sars,
        Self::SwineFlu,
        Self::YellowFever,
    ];

    /// Classes used for training unless configured otherwise.
    pub const DEFAULT_INCLUDED: [EpidemicClass; 4] =
        [Self::Cholera, Self::Ebola, Self::Mers, Self::SwineFlu];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Cholera => "cholera",
            Self::Ebola => "ebola",
            Self::Flu => "flu",
            Self::H1N1 => "h1n1",
            Self::HivAids => "hiv_aids",
            Self::Influenza => "influenza",
            Self::Mers => "mers",
            Self::Sars => "sars",
            Self::SwineFlu => "swine_flu",
            Self::YellowFever => "yellow_fever",
            Self::NonEpidemic => "non_epidemic",
        }
    }
}

impl fmt::Display for EpidemicClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EpidemicClass {
    type Err = LabelError;

    /// Accepts the canonical names plus spelling variants ("SwineFlu",
    /// "swine-flu", "HIV/AIDS", "non epidemic").
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        let class = match key.as_str() {
            "cholera" => Self::Cholera,
            "ebola" => Self::Ebola,
            "flu" => Self::Flu,
            "h1n1" => Self::H1N1,
            "hivaids" | "hiv" | "aids" => Self::HivAids,
            "influenza" => Self::Influenza,
            "mers" => Self::Mers,
            "sars" => Self::Sars,
            "swineflu" => Self::SwineFlu,
            "yellowfever" => Self::YellowFever,
            "nonepidemic" => Self::NonEpidemic,
            _ => return Err(LabelError::UnknownClass(s.to_owned())),
        };
        Ok(class)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LabelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("rule {priority} ({class}) does not compile: {message}")]
    Pattern {
        class: EpidemicClass,
        priority: i64,
        message: String,
    },
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("ruleset line {line}: {message}")]
    RulesetSyntax { line: usize, message: String },
    #[error("need {requested} negatives but only {available} qualify (short by {shortfall})")]
    Insufficient {
        requested: usize,
        available: usize,
        shortfall: usize,
    },
    #[error("balance error: {negatives} negatives for {positives} positives")]
    Balance { negatives: usize, positives: usize },
    #[error("duplicate text across examples: {0:?}")]
    Duplicate(String),
    #[error("example {id} is labeled {found} but was supplied as {expected}")]
    Mislabeled {
        id: String,
        expected: EpidemicClass,
        found: EpidemicClass,
    },
    #[error("dataset line {line}: {message}")]
    DatasetSyntax { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRule {
    pub class: EpidemicClass,
    pub pattern: String,
    pub case_sensitive: bool,
    /// Lower wins.
    pub priority: i64,
}

/// What to do with a text that matches more than one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultiMatchPolicy {
    /// Ambiguous texts get no label.
    #[default]
    Exclude,
    /// The lowest-priority matching rule decides.
    Priority,
}

impl FromStr for MultiMatchPolicy {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exclude" => Ok(Self::Exclude),
            "priority" => Ok(Self::Priority),
            other => Err(LabelError::Config(format!(
                "unknown multi-match policy {other:?}"
            ))),
        }
    }
}

/// Compiled, priority-ordered labeling rules.
#[derive(Debug, Clone)]
pub struct Ruleset {
    rules: Vec<LabelRule>,
    set: RegexSet,
    each: Vec<Regex>,
}

fn flagged(rule: &LabelRule) -> String {
    if rule.case_sensitive {
        rule.pattern.clone()
    } else {
        format!("(?i:{})", rule.pattern)
    }
}

/// Compiles `rules` into a [`Ruleset`], ordering them by priority.
pub fn compile_ruleset(mut rules: Vec<LabelRule>) -> Result<Ruleset, LabelError> {
    if rules.is_empty() {
        return Err(LabelError::Config("ruleset has no rules".into()));
    }
    rules.sort_by_key(|r| r.priority);
    if let Some(w) = rules.windows(2).find(|w| w[0].priority == w[1].priority) {
        return Err(LabelError::Config(format!(
            "priority {} used by more than one rule",
            w[0].priority
        )));
    }
    if rules.iter().any(|r| r.class == EpidemicClass::NonEpidemic) {
        return Err(LabelError::Config(
            "rules cannot target non_epidemic".into(),
        ));
    }

    let mut each = Vec::with_capacity(rules.len());
    for rule in &rules {
        let re = RegexBuilder::new(&rule.pattern)
            .case_insensitive(!rule.case_sensitive)
            .build()
            .map_err(|e| LabelError::Pattern {
                class: rule.class,
                priority: rule.priority,
                message: e.to_string(),
            })?;
        each.push(re);
    }
    let set = RegexSetBuilder::new(rules.iter().map(flagged))
        .build()
        .map_err(|e| LabelError::Config(e.to_string()))?;
    Ok(Ruleset { rules, set, each })
}

impl Ruleset {
    pub fn default_rules() -> Ruleset {
        Self::from_tsv(DEFAULT_RULESET_TSV).expect("built-in ruleset is valid")
    }

    /// Parses the ruleset file format.
    pub fn parse_rules(text: &str) -> Result<Vec<LabelRule>, LabelError> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let syntax = |message: String| LabelError::RulesetSyntax {
                line: line_no,
                message,
            };
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.splitn(4, '\t').collect();
            let [class, cs, priority, pattern] = fields[..] else {
                return Err(syntax(format!(
                    "expected 4 tab-separated fields, got {}",
                    fields.len()
                )));
            };
            let class = class
                .trim()
                .parse::<EpidemicClass>()
                .map_err(|e| syntax(e.to_string()))?;
            let case_sensitive = match cs.trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(syntax(format!(
                        "case_sensitive must be 0 or 1, got {other:?}"
                    )))
                }
            };
            let priority = priority
                .trim()
                .parse::<i64>()
                .map_err(|e| syntax(format!("bad priority: {e}")))?;
            rules.push(LabelRule {
                class,
                pattern: pattern.to_owned(),
                case_sensitive,
                priority,
            });
        }
        Ok(rules)
    }

    pub fn from_tsv(text: &str) -> Result<Ruleset, LabelError> {
        compile_ruleset(Self::parse_rules(text)?)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# class\tcase_sensitive\tpriority\tpattern\n");
        for r in &self.rules {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.class,
                u8::from(r.case_sensitive),
                r.priority,
                r.pattern
            ));
        }
        out
    }

    /// Rules in priority order.
    pub fn rules(&self) -> &[LabelRule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Every class with at least one matching rule.
    pub fn match_classes(&self, text: &str) -> BTreeSet<EpidemicClass> {
        self.set
            .matches(text)
            .into_iter()
            .map(|i| self.rules[i].class)
            .collect()
    }

    pub fn assign_label(&self, text: &str, policy: MultiMatchPolicy) -> Option<EpidemicClass> {
        match self.label(text, policy) {
            LabelOutcome::Labeled(c) => Some(c),
            _ => None,
        }
    }

    /// Like [`Ruleset::assign_label`] but distinguishes "no match" from "ambiguous".
    pub fn label(&self, text: &str, policy: MultiMatchPolicy) -> LabelOutcome {
        let hits = self.set.matches(text);
        // `hits` iterates in rule (= priority) order.
        let mut iter = hits.into_iter().map(|i| self.rules[i].class);
        let Some(first) = iter.next() else {
            return LabelOutcome::Unmatched;
        };
        if iter.all(|c| c == first) {
            return LabelOutcome::Labeled(first);
        }
        match policy {
            MultiMatchPolicy::Priority => LabelOutcome::Labeled(first),
            MultiMatchPolicy::Exclude => LabelOutcome::Ambiguous,
        }
    }

    /// Replaces every rule match with a space.
    pub fn mask_keywords(&self, text: &str) -> String {
        let mut out = text.to_owned();
        for re in &self.each {
            if re.is_match(&out) {
                out = re.replace_all(&out, " ").into_owned();
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelOutcome {
    Unmatched,
    Ambiguous,
    Labeled(EpidemicClass),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub label: EpidemicClass,
}

/// Uniform reservoir sample of `n` documents no rule matches, labeled
/// [`EpidemicClass::NonEpidemic`] and returned in stream order.
pub fn sample_negatives<I>(
    stream: I,
    ruleset: &Ruleset,
    n: usize,
    seed: u64,
) -> Result<Vec<LabeledExample>, LabelError>
where
    I: IntoIterator<Item = NormalizedDocument>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reservoir: Vec<(usize, NormalizedDocument)> = Vec::with_capacity(n);
    let mut seen = 0usize;
    for doc in stream {
        if !ruleset.match_classes(&doc.text).is_empty() {
            continue;
        }
        if seen < n {
            reservoir.push((seen, doc));
        } else {
            let j = rng.gen_range(0..=seen);
            if j < n {
                reservoir[j] = (seen, doc);
            }
        }
        seen += 1;
    }
    if seen < n {
        return Err(LabelError::Insufficient {
            requested: n,
            available: seen,
            shortfall: n - seen,
        });
    }
    reservoir.sort_by_key(|(pos, _)| *pos);
    Ok(reservoir
        .into_iter()
        .map(|(_, d)| LabeledExample {
            id: d.id,
            text: d.text,
            label: EpidemicClass::NonEpidemic,
        })
        .collect())
}

/// Checks the balance identity on counts alone and returns the dataset size.
pub fn check_balance(
    positive_counts: &BTreeMap<EpidemicClass, usize>,
    negatives: usize,
) -> Result<usize, LabelError> {
    let positives: usize = positive_counts.values().sum();
    if positives != negatives {
        return Err(LabelError::Balance {
            negatives,
            positives,
        });
    }
    Ok(positives + negatives)
}

/// The balanced, deduplicated silver-standard dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SilverDataset {
    examples: Vec<LabeledExample>,
    class_counts: BTreeMap<EpidemicClass, usize>,
    seed: u64,
}

impl SilverDataset {
    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn class_counts(&self) -> &BTreeMap<EpidemicClass, usize> {
        &self.class_counts
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<EpidemicClass> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn write_tsv<W: Write>(&self, w: W) -> io::Result<()> {
        write_dataset_tsv(&self.examples, w)
    }

    /// Reads a dataset TSV, re-validating every invariant.
    pub fn read_tsv<R: BufRead>(r: R, seed: u64) -> Result<SilverDataset, LabelError> {
        let examples = read_dataset_tsv(r)?;
        let mut positives: BTreeMap<EpidemicClass, Vec<LabeledExample>> = BTreeMap::new();
        let mut negatives = Vec::new();
        for ex in examples {
            if ex.label == EpidemicClass::NonEpidemic {
                negatives.push(ex);
            } else {
                positives.entry(ex.label).or_default().push(ex);
            }
        }
        build_silver_dataset(positives, negatives, seed)
    }
}

/// Builds a [`SilverDataset`], rejecting unbalanced, mislabeled or
/// duplicated input. Examples are ordered by class then input order.
pub fn build_silver_dataset(
    positives: BTreeMap<EpidemicClass, Vec<LabeledExample>>,
    negatives: Vec<LabeledExample>,
    seed: u64,
) -> Result<SilverDataset, LabelError> {
    let counts: BTreeMap<EpidemicClass, usize> = positives
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(&c, v)| (c, v.len()))
        .collect();
    check_balance(&counts, negatives.len())?;

    let mut class_counts = counts;
    if !negatives.is_empty() {
        class_counts.insert(EpidemicClass::NonEpidemic, negatives.len());
    }

    let mut seen: HashSet<&str> = HashSet::new();
    for (&class, list) in &positives {
        if class == EpidemicClass::NonEpidemic {
            return Err(LabelError::Config(
                "non_epidemic is not a positive class".into(),
            ));
        }
        for ex in list {
            if ex.label != class {
                return Err(LabelError::Mislabeled {
                    id: ex.id.clone(),
                    expected: class,
                    found: ex.label,
                });
            }
        }
    }
    for ex in &negatives {
        if ex.label != EpidemicClass::NonEpidemic {
            return Err(LabelError::Mislabeled {
                id: ex.id.clone(),
                expected: EpidemicClass::NonEpidemic,
                found: ex.label,
            });
        }
    }
    for ex in positives.values().flatten().chain(&negatives) {
        if !seen.insert(&ex.text) {
            return Err(LabelError::Duplicate(ex.text.clone()));
        }
    }
    drop(seen);

    let examples = positives.into_values().flatten().chain(negatives).collect();
    Ok(SilverDataset {
        examples,
        class_counts,
        seed,
    })
}

pub fn write_dataset_tsv<W: Write>(examples: &[LabeledExample], mut w: W) -> io::Result<()> {
    writeln!(w, "id\tlabel\ttext")?;
    for ex in examples {
        writeln!(w, "{}\t{}\t{}", ex.id, ex.label, ex.text)?;
    }
    w.flush()
}

pub fn read_dataset_tsv<R: BufRead>(r: R) -> Result<Vec<LabeledExample>, LabelError> {
    let mut lines = r.lines();
    match lines.next().transpose()? {
        Some(h) if h == "id\tlabel\ttext" => {}
        _ => {
            return Err(LabelError::DatasetSyntax {
                line: 1,
                message: "expected header id<TAB>label<TAB>text".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line_no = i + 2;
        let mut parts = line.splitn(3, '\t');
        let (Some(id), Some(label), Some(text)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(LabelError::DatasetSyntax {
                line: line_no,
                message: "expected 3 fields".into(),
            });
        };
        let label = label
            .parse()
            .map_err(|e: LabelError| LabelError::DatasetSyntax {
                line: line_no,
                message: e.to_string(),
            })?;
        out.push(LabeledExample {
            id: id.to_owned(),
            text: text.to_owned(),
            label,
        });
    }
    Ok(out)
}
