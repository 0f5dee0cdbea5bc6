//! Tweet ingestion and text cleaning.
//!
//! Input is line-delimited JSON, one tweet object per line, optionally gzip
//! compressed. Records are parsed, retweets and off-language tweets are
//! filtered out, the text is normalized and exact duplicates (by normalized
//! text) are dropped keeping the first occurrence.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom};
use std::path::Path;
use std::sync::LazyLock;

use flate2::read::MultiGzDecoder;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// URL pattern removed during normalization. Covers t.co short links.
pub const URL_PATTERN: &str = r"(?i)\b(?:https?://|www\.)\S+";

/// Codepoint ranges (inclusive) treated as emoji and stripped from text.
pub const EMOJI_RANGES: &[(u32, u32)] = &[
    (0x1F000, 0x1FAFF), // pictographs, emoticons, transport, supplemental symbols
    (0x2600, 0x27BF),   // misc symbols and dingbats
    (0x2190, 0x21FF),   // arrows
    (0xFE0F, 0xFE0F),   // variation selector-16
    (0x200D, 0x200D),   // zero width joiner
    (0x1F3FB, 0x1F3FF), // skin tone modifiers
];

/// ASCII western emoticons, removed when they appear as whitespace-delimited tokens.
pub const EMOTICONS: &[&str] = &[
    ":)", ":-)", ":(", ":-(", ":D", ":-D", ";)", ";-)", ":P", ":-P", ":p", ":-p", "xD", "XD", "xd",
    "<3", "</3", ":'(", ":'-(", ":O", ":-O", ":o", ":-o", ":/", ":-/", ":\\", ":|", ":-|", ":*",
    ":-*", ";(", ":]", ":[", "=)", "=(", "=D", "8)", "B)", "^_^", "-_-", "T_T", ":3", ">:(", "o_O",
    "O_o",
];

static URL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(URL_PATTERN).expect("URL pattern compiles"));

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum RecordError {
    #[error("malformed JSON at byte {offset}: {message}")]
    Json { offset: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// One parsed tweet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TweetRecord {
    pub id: String,
    pub text: String,
    pub lang: Option<String>,
    pub is_retweet: bool,
    pub source_tag: String,
}

/// A tweet after normalization. The text is never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormalizedDocument {
    pub id: String,
    pub text: String,
}

fn is_digit_string(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit())
}

/// Converts serde_json's (line, column) position into a byte offset within `input`.
fn byte_offset(input: &str, line: usize, column: usize) -> usize {
    let line_start: usize = input
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(input.len())
}

/// Parses one JSON line into a [`TweetRecord`].
pub fn parse_record(line: &str, source_tag: &str) -> Result<TweetRecord, RecordError> {
    let value: Value = serde_json::from_str(line).map_err(|e| RecordError::Json {
        offset: byte_offset(line, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let obj = value
        .as_object()
        .ok_or_else(|| RecordError::Schema("record is not a JSON object".into()))?;

    let id = match (obj.get("id_str"), obj.get("id")) {
        (Some(Value::String(s)), _) => s.clone(),
        (_, Some(Value::Number(n))) if n.is_u64() => n.to_string(),
        (_, Some(Value::String(s))) => s.clone(),
        _ => return Err(RecordError::Schema("missing id".into())),
    };
    if !is_digit_string(&id) {
        return Err(RecordError::Schema(format!(
            "id {id:?} is not a digit string"
        )));
    }

    let text = match (obj.get("full_text"), obj.get("text")) {
        (Some(Value::String(s)), _) => s.clone(),
        (_, Some(Value::String(s))) => s.clone(),
        _ => return Err(RecordError::Schema("missing text".into())),
    };
    if text.is_empty() {
        return Err(RecordError::Schema("empty text".into()));
    }

    let lang = obj.get("lang").and_then(Value::as_str).map(str::to_owned);
    let is_retweet = obj.contains_key("retweeted_status") || text.starts_with("RT @");

    Ok(TweetRecord {
        id,
        text,
        lang,
        is_retweet,
        source_tag: source_tag.to_owned(),
    })
}

/// True for original tweets in the requested language. A missing language
/// tag passes the filter.
pub fn filter_original(record: &TweetRecord, require_lang: Option<&str>) -> bool {
    if record.is_retweet {
        return false;
    }
    match (require_lang, record.lang.as_deref()) {
        (None, _) | (_, None) => true,
        (Some(want), Some(have)) => want == have,
    }
}

pub fn is_emoji(c: char) -> bool {
    let cp = c as u32;
    EMOJI_RANGES.iter().any(|&(lo, hi)| (lo..=hi).contains(&cp))
}

fn normalize_pass(text: &str) -> String {
    let no_urls = URL_RE.replace_all(text, " ");
    let no_emoji: String = no_urls
        .chars()
        .map(|c| if is_emoji(c) { ' ' } else { c })
        .collect();
    let mut out = String::with_capacity(no_emoji.len());
    for token in no_emoji.split_whitespace() {
        if EMOTICONS.contains(&token) {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(token);
    }
    out
}

/// Removes URLs, then emoji, then emoticon tokens, collapses whitespace and trims.
///
/// A removal can expose a new match (a zero width joiner is a word character
/// to the URL pattern's `\b`, for example), so passes repeat until the text is
/// stable. Each changing pass strictly shortens the text.
pub fn normalize_text(text: &str) -> String {
    let mut current = normalize_pass(text);
    loop {
        let next = normalize_pass(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

/// Keep-first exact deduplication over normalized text. Also usable
/// incrementally across shards fed in global order.
#[derive(Debug, Default)]
pub struct Deduplicator {
    seen: HashSet<String>,
    dropped: usize,
}

impl Deduplicator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns true if the text had not been seen before.
    pub fn insert(&mut self, text: &str) -> bool {
        if self.seen.contains(text) {
            self.dropped += 1;
            false
        } else {
            self.seen.insert(text.to_owned());
            true
        }
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }
}

/// Returns the first occurrence of each distinct text (input order) and the
/// number of dropped duplicates.
pub fn deduplicate(docs: Vec<NormalizedDocument>) -> (Vec<NormalizedDocument>, usize) {
    let mut dedup = Deduplicator::new();
    let kept: Vec<_> = docs.into_iter().filter(|d| dedup.insert(&d.text)).collect();
    (kept, dedup.dropped())
}

/// Per-stage counts for one ingestion run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub files: usize,
    pub blank_lines: usize,
    pub records_in: usize,
    pub parsed: usize,
    pub json_errors: usize,
    pub schema_errors: usize,
    pub retweets: usize,
    pub originals: usize,
    pub lang_missing: usize,
    pub lang_rejected: usize,
    pub empty_after_normalization: usize,
    pub duplicates: usize,
    pub deduplicated: usize,
}

impl IngestStats {
    pub fn parse_skips(&self) -> usize {
        self.json_errors + self.schema_errors
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub require_lang: Option<String>,
    /// Lines handed to the thread pool at a time.
    pub chunk_size: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            require_lang: Some("en".into()),
            chunk_size: 8192,
        }
    }
}

/// Opens a file, transparently decompressing gzip (detected by magic bytes).
pub fn open_lines(path: &Path) -> io::Result<Box<dyn BufRead>> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic)?;
    file.seek(SeekFrom::Start(0))?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

enum LineOutcome {
    Blank,
    JsonError,
    SchemaError,
    Retweet,
    LangRejected,
    Empty {
        missing: bool,
    },
    Doc {
        doc: NormalizedDocument,
        missing: bool,
    },
}

fn process_line(line: &str, tag: &str, require_lang: Option<&str>) -> LineOutcome {
    if line.trim().is_empty() {
        return LineOutcome::Blank;
    }
    let record = match parse_record(line, tag) {
        Ok(r) => r,
        Err(RecordError::Json { .. }) => return LineOutcome::JsonError,
        Err(RecordError::Schema(_)) => return LineOutcome::SchemaError,
    };
    if record.is_retweet {
        return LineOutcome::Retweet;
    }
    let missing = record.lang.is_none();
    if !filter_original(&record, require_lang) {
        return LineOutcome::LangRejected;
    }
    let text = normalize_text(&record.text);
    if text.is_empty() {
        return LineOutcome::Empty { missing };
    }
    LineOutcome::Doc {
        doc: NormalizedDocument {
            id: record.id,
            text,
        },
        missing,
    }
}

/// Streams every input in order, returning deduplicated normalized originals.
///
/// Parsing and normalization run on the current rayon pool in chunks; the
/// result is identical to a sequential pass in file-then-line order.
pub fn ingest_paths<P: AsRef<Path>>(
    paths: &[P],
    opts: &IngestOptions,
) -> Result<(Vec<NormalizedDocument>, IngestStats), CorpusError> {
    let mut stats = IngestStats::default();
    let mut dedup = Deduplicator::new();
    let mut docs = Vec::new();
    let require_lang = opts.require_lang.as_deref();

    for path in paths {
        let path = path.as_ref();
        let io_err = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let reader = open_lines(path).map_err(io_err)?;
        let tag = path.display().to_string();
        stats.files += 1;

        let mut lines = reader.lines();
        loop {
            let chunk: Vec<String> = lines
                .by_ref()
                .take(opts.chunk_size.max(1))
                .collect::<io::Result<_>>()
                .map_err(io_err)?;
            if chunk.is_empty() {
                break;
            }
            let outcomes: Vec<LineOutcome> = chunk
                .par_iter()
                .map(|l| process_line(l, &tag, require_lang))
                .collect();
            for outcome in outcomes {
                if !matches!(outcome, LineOutcome::Blank) {
                    stats.records_in += 1;
                }
                match outcome {
                    LineOutcome::Blank => stats.blank_lines += 1,
                    LineOutcome::JsonError => stats.json_errors += 1,
                    LineOutcome::SchemaError => stats.schema_errors += 1,
                    LineOutcome::Retweet => {
                        stats.parsed += 1;
                        stats.retweets += 1;
                    }
                    LineOutcome::LangRejected => {
                        stats.parsed += 1;
                        stats.originals += 1;
                        stats.lang_rejected += 1;
                    }
                    LineOutcome::Empty { missing } => {
                        stats.parsed += 1;
                        stats.originals += 1;
                        stats.lang_missing += usize::from(missing);
                        stats.empty_after_normalization += 1;
                    }
                    LineOutcome::Doc { doc, missing } => {
                        stats.parsed += 1;
                        stats.originals += 1;
                        stats.lang_missing += usize::from(missing);
                        if dedup.insert(&doc.text) {
                            docs.push(doc);
                        }
                    }
                }
            }
        }
    }
    stats.duplicates = dedup.dropped();
    stats.deduplicated = docs.len();
    Ok((docs, stats))
}
