//! Response logs: parsing, text normalisation, year extraction and grouping.
//!
//! A log is JSON Lines, one response per line:
//!
//! ```text
//! {"question_id":"q1","language":"hi","role":"source","ensemble_index":0,"raw_text":"1992"}
//! ```
//!
//! Optional fields are `category`, `embedding`, `correct` and `answer_numeric`.
//! Unknown fields are ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use unicode_normalization::UnicodeNormalization;
use xgap_core::metrics::{Normalizer, Role};

#[derive(Debug)]
pub enum IngestError {
    Read(std::io::Error),
    Json {
        line: u64,
        message: String,
    },
    Field {
        line: u64,
        field: &'static str,
        message: String,
    },
    /// Cross-record invariants; each entry names an offending key.
    Invariant {
        problems: Vec<String>,
    },
    OrphanTargets {
        question: String,
    },
}

impl fmt::Display for IngestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IngestError::Read(e) => write!(f, "failed reading log: {e}"),
            IngestError::Json { line, message } => write!(f, "line {line}: {message}"),
            IngestError::Field {
                line,
                field,
                message,
            } => write!(f, "line {line}: field `{field}`: {message}"),
            IngestError::Invariant { problems } => {
                write!(f, "log violates record invariants:")?;
                for p in problems {
                    write!(f, "\n  {p}")?;
                }
                Ok(())
            }
            IngestError::OrphanTargets { question } => {
                write!(
                    f,
                    "question {question:?} has target records but no source records"
                )
            }
        }
    }
}

impl std::error::Error for IngestError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            IngestError::Read(e) => Some(e),
            _ => None,
        }
    }
}

/// One logged model response.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResponseRecord {
    pub question_id: String,
    pub language: String,
    pub role: Role,
    pub ensemble_index: u64,
    pub raw_text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer_numeric: Option<i64>,
}

impl ResponseRecord {
    /// Compact JSON with keys in lexicographic order.
    pub fn to_json_line(&self) -> String {
        // Value maps are ordered, so this is canonical.
        serde_json::to_value(self)
            .expect("records always serialise")
            .to_string()
    }
}

// Every field arrives as raw JSON so that each can be checked with an error
// naming it; the derive still rejects duplicate keys.
#[derive(Deserialize)]
struct RawRecord {
    question_id: Option<Value>,
    language: Option<Value>,
    role: Option<Value>,
    ensemble_index: Option<Value>,
    raw_text: Option<Value>,
    category: Option<Value>,
    embedding: Option<Value>,
    correct: Option<Value>,
    answer_numeric: Option<Value>,
}

static LANGUAGE_TAG: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[A-Za-z]{2,8}(-[A-Za-z0-9]{1,8})*$").unwrap());

struct FieldReader {
    line: u64,
}

impl FieldReader {
    fn err(&self, field: &'static str, message: impl Into<String>) -> IngestError {
        IngestError::Field {
            line: self.line,
            field,
            message: message.into(),
        }
    }

    fn required(&self, field: &'static str, v: Option<Value>) -> Result<Value, IngestError> {
        v.ok_or_else(|| self.err(field, "missing"))
    }

    fn string(&self, field: &'static str, v: Value) -> Result<String, IngestError> {
        match v {
            Value::String(s) => Ok(s),
            other => Err(self.err(field, format!("expected a string, got {other}"))),
        }
    }
}

fn parse_line(line: u64, text: &str) -> Result<ResponseRecord, IngestError> {
    if !text.starts_with('{') {
        return Err(IngestError::Json {
            line,
            message: "record must be a JSON object".into(),
        });
    }
    let raw: RawRecord = serde_json::from_str(text).map_err(|e| {
        let message = e.to_string();
        let message = match message.rsplit_once(" at line ") {
            Some((head, _)) => format!("{head} (column {})", e.column()),
            None => message,
        };
        IngestError::Json { line, message }
    })?;
    let r = FieldReader { line };

    let question_id = r.string("question_id", r.required("question_id", raw.question_id)?)?;
    if question_id.is_empty() {
        return Err(r.err("question_id", "must not be empty"));
    }
    let language = r.string("language", r.required("language", raw.language)?)?;
    if !LANGUAGE_TAG.is_match(&language) {
        return Err(r.err("language", format!("{language:?} is not a language tag")));
    }
    let role = match r.string("role", r.required("role", raw.role)?)?.as_str() {
        "source" => Role::Source,
        "target" => Role::Target,
        other => {
            return Err(r.err(
                "role",
                format!("unknown value {other:?} (expected \"source\" or \"target\")"),
            ))
        }
    };
    let ensemble_index = match r.required("ensemble_index", raw.ensemble_index)? {
        Value::Number(n) if n.is_u64() => n.as_u64().unwrap(),
        other => {
            return Err(r.err(
                "ensemble_index",
                format!("expected a non-negative integer, got {other}"),
            ))
        }
    };
    let raw_text = r.string("raw_text", r.required("raw_text", raw.raw_text)?)?;
    let category = match raw.category {
        None => None,
        Some(v) => Some(r.string("category", v)?),
    };
    let embedding = match raw.embedding {
        None => None,
        Some(Value::Array(items)) if !items.is_empty() => Some(
            items
                .iter()
                .map(|x| x.as_f64().filter(|f| f.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| r.err("embedding", "entries must be finite numbers"))?,
        ),
        Some(other) => {
            return Err(r.err(
                "embedding",
                format!("expected a non-empty array of numbers, got {other}"),
            ))
        }
    };
    let correct = match raw.correct {
        None => None,
        Some(Value::Bool(b)) => Some(b),
        Some(other) => return Err(r.err("correct", format!("expected a boolean, got {other}"))),
    };
    let answer_numeric = match raw.answer_numeric {
        None => None,
        Some(Value::Number(n)) if n.is_i64() || n.is_u64() => Some(
            n.as_i64()
                .ok_or_else(|| r.err("answer_numeric", "integer out of range"))?,
        ),
        Some(other) => {
            return Err(r.err(
                "answer_numeric",
                format!("expected an integer, got {other}"),
            ))
        }
    };
    Ok(ResponseRecord {
        question_id,
        language,
        role,
        ensemble_index,
        raw_text,
        category,
        embedding,
        correct,
        answer_numeric,
    })
}

/// Parses and validates a JSON Lines response log. Blank lines are skipped.
pub fn parse_response_log<R: BufRead>(input: R) -> Result<Vec<ResponseRecord>, IngestError> {
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(IngestError::Read)?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let number = i as u64 + 1;
        records.push(parse_line(number, trimmed)?);
        lines.push(number);
    }
    check_invariants(&records, &lines, "lines")?;
    Ok(records)
}

/// Checks the cross-record invariants on records gathered from several logs.
/// Problems are reported by position in the concatenated input.
pub fn validate_records(records: &[ResponseRecord]) -> Result<(), IngestError> {
    let positions: Vec<u64> = (1..=records.len() as u64).collect();
    check_invariants(records, &positions, "records")
}

fn check_invariants(
    records: &[ResponseRecord],
    lines: &[u64],
    unit: &str,
) -> Result<(), IngestError> {
    let mut problems = Vec::new();
    let mut seen: BTreeMap<(&str, &str, Role, u64), u64> = BTreeMap::new();
    for (rec, &line) in records.iter().zip(lines) {
        let key = (
            rec.question_id.as_str(),
            rec.language.as_str(),
            rec.role,
            rec.ensemble_index,
        );
        if let Some(first) = seen.insert(key, line) {
            problems.push(format!(
                "duplicate ({}, {}, {}, {}) on {unit} {first} and {line}",
                rec.question_id,
                rec.language,
                rec.role.as_str(),
                rec.ensemble_index
            ));
        }
    }
    let mut source_langs: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for rec in records.iter().filter(|r| r.role == Role::Source) {
        source_langs
            .entry(&rec.question_id)
            .or_default()
            .insert(&rec.language);
    }
    for (q, langs) in source_langs {
        if langs.len() > 1 {
            let langs: Vec<&str> = langs.into_iter().collect();
            problems.push(format!(
                "question {q:?} has source records in several languages: {}",
                langs.join(", ")
            ));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(IngestError::Invariant { problems })
    }
}

/// Writes records as JSON Lines in canonical key order.
pub fn write_response_log<W: Write>(records: &[ResponseRecord], mut out: W) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_json_line())?;
    }
    Ok(())
}

// Sentence-final marks across scripts. Brackets and quotes are left alone since
// they can belong to an answer.
fn is_terminal_punctuation(c: char) -> bool {
    matches!(
        c,
        '.' | ','
            | ';'
            | ':'
            | '!'
            | '?'
            | '。'
            | '、'
            | '！'
            | '？'
            | '،'
            | '؛'
            | '؟'
            | '।'
            | '॥'
            | '…'
            | '።'
            | '۔'
    )
}

/// Default canonical form: NFKC, lowercase, whitespace trimmed and collapsed,
/// trailing punctuation removed.
pub fn normalize_response(raw: &str) -> String {
    let folded: String = raw
        .nfkc()
        .collect::<String>()
        .to_lowercase()
        .nfkc()
        .collect();
    let mut out = String::with_capacity(folded.len());
    for word in folded.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    loop {
        let stripped = out.trim_end_matches(is_terminal_punctuation).trim_end();
        if stripped.len() == out.len() {
            break;
        }
        out.truncate(stripped.len());
    }
    out
}

/// The default normalisation policy.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultNormalizer;

impl Normalizer for DefaultNormalizer {
    fn normalize(&self, raw: &str) -> String {
        normalize_response(raw)
    }
}

/// Default normalisation followed by a lookup in an externally produced
/// table of canonical answers (for example, cross-language concept merges).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MappingNormalizer {
    table: BTreeMap<String, String>,
}

impl MappingNormalizer {
    /// Keys and values are themselves normalised, so the table can be written
    /// in any casing.
    pub fn new<I, K, V>(entries: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        MappingNormalizer {
            table: entries
                .into_iter()
                .map(|(k, v)| {
                    (
                        normalize_response(k.as_ref()),
                        normalize_response(v.as_ref()),
                    )
                })
                .collect(),
        }
    }

    /// Reads a flat JSON object of `"variant": "canonical"` pairs.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let map: BTreeMap<String, String> = serde_json::from_str(text)?;
        Ok(Self::new(map))
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl Normalizer for MappingNormalizer {
    fn normalize(&self, raw: &str) -> String {
        let key = normalize_response(raw);
        match self.table.get(&key) {
            Some(canonical) => canonical.clone(),
            None => key,
        }
    }
}

// Code points of the digit zero in each Unicode decimal-digit block.
const DIGIT_ZEROS: &[u32] = &[
    0x0660, 0x06F0, 0x07C0, 0x0966, 0x09E6, 0x0A66, 0x0AE6, 0x0B66, 0x0BE6, 0x0C66, 0x0CE6, 0x0D66,
    0x0DE6, 0x0E50, 0x0ED0, 0x0F20, 0x1040, 0x1090, 0x17E0, 0x1810, 0x1946, 0x19D0, 0x1A80, 0x1A90,
    0x1B50, 0x1BB0, 0x1C40, 0x1C50, 0xA620, 0xA8D0, 0xA900, 0xA9D0, 0xA9F0, 0xAA50, 0xABF0, 0xFF10,
];

fn ascii_digit(c: char) -> char {
    let cp = c as u32;
    for &zero in DIGIT_ZEROS {
        if (zero..zero + 10).contains(&cp) {
            return char::from(b'0' + (cp - zero) as u8);
        }
    }
    c
}

pub const YEAR_RANGE: std::ops::RangeInclusive<i64> = 500..=2100;

static DIGIT_RUN: LazyLock<Regex> = LazyLock::new(|| Regex::new("[0-9]+").unwrap());

/// First standalone run of three or four digits that reads as a year in
/// [`YEAR_RANGE`]. Digits from any script count.
pub fn extract_year(text: &str) -> Option<i64> {
    let ascii: String = text.nfkc().map(ascii_digit).collect();
    DIGIT_RUN
        .find_iter(&ascii)
        .filter(|m| (3..=4).contains(&m.len()))
        .filter_map(|m| m.as_str().parse::<i64>().ok())
        .find(|y| YEAR_RANGE.contains(y))
}

/// All records for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionGroup {
    pub question_id: String,
    pub source_language: Option<String>,
    /// Ordered by ensemble index.
    pub source_records: Vec<ResponseRecord>,
    /// Per target language, ordered by ensemble index.
    pub target_records: BTreeMap<String, Vec<ResponseRecord>>,
}

impl QuestionGroup {
    pub fn targets(&self) -> impl Iterator<Item = &ResponseRecord> {
        self.target_records.values().flatten()
    }

    pub fn records(&self) -> impl Iterator<Item = &ResponseRecord> {
        self.source_records.iter().chain(self.targets())
    }
}

/// Groups records by question, sorted by question id. Fails on a question
/// that has target records but no source record.
pub fn group_records(records: Vec<ResponseRecord>) -> Result<Vec<QuestionGroup>, IngestError> {
    let mut groups: BTreeMap<String, QuestionGroup> = BTreeMap::new();
    for rec in records {
        let g = groups
            .entry(rec.question_id.clone())
            .or_insert_with(|| QuestionGroup {
                question_id: rec.question_id.clone(),
                source_language: None,
                source_records: Vec::new(),
                target_records: BTreeMap::new(),
            });
        match rec.role {
            Role::Source => {
                g.source_language
                    .get_or_insert_with(|| rec.language.clone());
                g.source_records.push(rec);
            }
            Role::Target => g
                .target_records
                .entry(rec.language.clone())
                .or_default()
                .push(rec),
        }
    }
    let mut out = Vec::with_capacity(groups.len());
    for (_, mut g) in groups {
        if g.source_records.is_empty() {
            return Err(IngestError::OrphanTargets {
                question: g.question_id,
            });
        }
        g.source_records.sort_by_key(|r| r.ensemble_index);
        for recs in g.target_records.values_mut() {
            recs.sort_by_key(|r| r.ensemble_index);
        }
        out.push(g);
    }
    Ok(out)
}

/// Fills `category` from the normaliser and `answer_numeric` from the text
/// where they are missing.
pub fn fill_derived(groups: &mut [QuestionGroup], normalizer: &dyn Normalizer) {
    for g in groups {
        let targets = g.target_records.values_mut().flatten();
        for r in g.source_records.iter_mut().chain(targets) {
            if r.category.is_none() {
                r.category = Some(normalizer.normalize(&r.raw_text));
            }
            if r.answer_numeric.is_none() {
                r.answer_numeric = extract_year(&r.raw_text);
            }
        }
    }
}

/// Re-emits grouped records, question by question (source first).
pub fn write_grouped<W: Write>(groups: &[QuestionGroup], mut out: W) -> std::io::Result<()> {
    for g in groups {
        for r in g.records() {
            writeln!(out, "{}", r.to_json_line())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<ResponseRecord>, IngestError> {
        parse_response_log(text.as_bytes())
    }

    const LINE: &str = r#"{"ensemble_index":0,"language":"hi","question_id":"q1","raw_text":"1992","role":"source"}"#;

    #[test]
    fn empty_stream() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("\n\n").unwrap().is_empty());
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let recs = parse(LINE).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].to_json_line(), LINE);
        let full = r#"{"answer_numeric":1992,"category":"1992","correct":true,"embedding":[0.5,-1.0],"ensemble_index":3,"language":"pt-BR","question_id":"q9","raw_text":"Em 1992.","role":"target"}"#;
        assert_eq!(parse(full).unwrap()[0].to_json_line(), full);
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let line = r#"{"question_id":"q","language":"en","role":"source","ensemble_index":0,"raw_text":"x","model":"m","extra":{"a":1}}"#;
        assert_eq!(parse(line).unwrap()[0].raw_text, "x");
    }

    #[test]
    fn bad_role_names_line_and_field() {
        let text = format!("{LINE}\n{}", LINE.replace("\"source\"", "\"tgt\""));
        let err = parse(&text).unwrap_err();
        match &err {
            IngestError::Field { line, field, .. } => {
                assert_eq!(*line, 2);
                assert_eq!(*field, "role");
            }
            other => panic!("{other:?}"),
        }
        assert!(err.to_string().contains("line 2"));
        assert!(err.to_string().contains("`role`"));
    }

    #[test]
    fn malformed_and_duplicate_keys_report_line() {
        let err = parse(&format!("{LINE}\n\n{{not json")).unwrap_err();
        assert!(matches!(err, IngestError::Json { line: 3, .. }), "{err}");
        let dup = r#"{"question_id":"q","language":"en","role":"source","role":"target","ensemble_index":0,"raw_text":"x"}"#;
        let err = parse(dup).unwrap_err();
        assert!(matches!(err, IngestError::Json { line: 1, .. }));
        assert!(err.to_string().contains("duplicate field"), "{err}");
        assert!(matches!(
            parse("[1,2]"),
            Err(IngestError::Json { line: 1, .. })
        ));
    }

    #[test]
    fn field_type_errors() {
        let cases = [
            (
                r#""ensemble_index":0"#,
                r#""ensemble_index":-1"#,
                "ensemble_index",
            ),
            (
                r#""ensemble_index":0"#,
                r#""ensemble_index":1.5"#,
                "ensemble_index",
            ),
            (r#""language":"hi""#, r#""language":"hi_IN!""#, "language"),
            (r#""raw_text":"1992""#, r#""raw_text":1992"#, "raw_text"),
            (r#""question_id":"q1","#, "", "question_id"),
        ];
        for (from, to, field) in cases {
            let err = parse(&LINE.replace(from, to)).unwrap_err();
            assert!(
                matches!(&err, IngestError::Field { field: f, .. } if *f == field),
                "{field}: {err}"
            );
        }
        let bad_embedding = LINE.replace('}', r#","embedding":[1,"x"]}"#);
        assert!(parse(&bad_embedding).is_err());
        let bad_correct = LINE.replace('}', r#","correct":"yes"}"#);
        assert!(parse(&bad_correct).is_err());
    }

    #[test]
    fn invariant_violations_list_keys() {
        let other_lang = LINE.replace("\"hi\"", "\"en\"").replace(":0", ":1");
        let text = format!("{LINE}\n{LINE}\n{other_lang}");
        match parse(&text).unwrap_err() {
            IngestError::Invariant { problems } => {
                assert_eq!(problems.len(), 2, "{problems:?}");
                assert!(problems[0].contains("(q1, hi, source, 0)"));
                assert!(problems[0].contains("lines 1 and 2"));
                assert!(problems[1].contains("en, hi"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(
            normalize_response("  Order de Santiago. "),
            "order de santiago"
        );
        assert_eq!(normalize_response("1992"), "1992");
        assert_eq!(
            normalize_response("Ｈｅｌｌｏ\u{3000}World！"),
            "hello world"
        );
        assert_eq!(normalize_response("Paris ?!. "), "paris");
        assert_eq!(normalize_response("f(x)"), "f(x)");
        let table = MappingNormalizer::new([("Order de Santiago", "order of santiago")]);
        assert_eq!(
            table.normalize("  Order de Santiago. "),
            "order of santiago"
        );
        assert_eq!(table.normalize("Ordem de Santiago"), "ordem de santiago");
        let json =
            MappingNormalizer::from_json(r#"{"ordem de santiago": "Order of Santiago"}"#).unwrap();
        assert_eq!(json.normalize("ORDEM de santiago"), "order of santiago");
    }

    #[test]
    fn year_examples() {
        assert_eq!(
            extract_year("Kreeda Bharti was established in 1992."),
            Some(1992)
        );
        assert_eq!(extract_year("no date known"), None);
        assert_eq!(extract_year("between 1990 and 1995"), Some(1990));
        assert_eq!(extract_year("page 12345, in 1871"), Some(1871));
        assert_eq!(extract_year("year 250 or 2500"), None);
        assert_eq!(extract_year("स्थापना १९९२ में"), Some(1992));
        assert_eq!(extract_year("１９９２年"), Some(1992));
        assert_eq!(extract_year("c. 800 AD"), Some(800));
    }

    #[test]
    fn grouping() {
        let src = parse(LINE).unwrap();
        let groups = group_records(src.clone()).unwrap();
        assert_eq!(groups.len(), 1);
        assert!(groups[0].target_records.is_empty());

        let orphan = parse(&LINE.replace("source", "target").replace("q1", "q2")).unwrap();
        let mut both = src.clone();
        both.extend(orphan);
        match group_records(both).unwrap_err() {
            IngestError::OrphanTargets { question } => assert_eq!(question, "q2"),
            other => panic!("{other:?}"),
        }
    }
}
