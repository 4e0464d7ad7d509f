use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_file, tokenize, DataError};

/// A labelled question pair; intent classes are filled in from an
/// [`IntentLabeling`](super::IntentLabeling) before training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairExample {
    /// 1-based source line, 0 for pairs not read from a file.
    pub line: usize,
    pub q1: Vec<String>,
    pub q2: Vec<String>,
    pub label: u8,
    pub intent1: Option<usize>,
    pub intent2: Option<usize>,
}

impl PairExample {
    pub fn new(q1: Vec<String>, q2: Vec<String>, label: u8) -> Self {
        Self {
            line: 0,
            q1,
            q2,
            label,
            intent1: None,
            intent2: None,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// Reads `q1<TAB>q2<TAB>label` lines.
pub fn load_pairs_tsv(path: impl AsRef<Path>) -> Result<Vec<PairExample>, DataError> {
    parse_pairs_tsv(&read_file(path.as_ref())?)
}

pub fn parse_pairs_tsv(text: &str) -> Result<Vec<PairExample>, DataError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 3 {
            return Err(DataError::Malformed {
                line,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let label = match fields[2].trim() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(DataError::BadLabel {
                    line,
                    value: other.to_string(),
                })
            }
        };
        let q1 = tokenize(fields[0]).map_err(|_| DataError::EmptySentenceAt { line })?;
        let q2 = tokenize(fields[1]).map_err(|_| DataError::EmptySentenceAt { line })?;
        out.push(PairExample {
            line,
            q1,
            q2,
            label,
            intent1: None,
            intent2: None,
        });
    }
    Ok(out)
}

/// One row of a FAQ file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaqRecord {
    pub id: u64,
    pub question: String,
    pub answer: String,
}

/// Reads `id<TAB>question<TAB>answer` lines; ids must be unique.
pub fn load_faq_tsv(path: impl AsRef<Path>) -> Result<Vec<FaqRecord>, DataError> {
    parse_faq_tsv(&read_file(path.as_ref())?)
}

pub fn parse_faq_tsv(text: &str) -> Result<Vec<FaqRecord>, DataError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.splitn(3, '\t').collect();
        if fields.len() != 3 {
            return Err(DataError::Malformed {
                line,
                message: format!("expected id, question and answer, found {} fields", fields.len()),
            });
        }
        let id: u64 = fields[0].trim().parse().map_err(|_| DataError::Malformed {
            line,
            message: format!("id {:?} is not an unsigned integer", fields[0]),
        })?;
        if !seen.insert(id) {
            return Err(DataError::DuplicateId { line, id });
        }
        if fields[1].trim().is_empty() {
            return Err(DataError::EmptySentenceAt { line });
        }
        out.push(FaqRecord {
            id,
            question: fields[1].to_string(),
            answer: fields[2].to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_positive_pair() {
        let pairs = parse_pairs_tsv("how do i build a computer\thow do I build my own custom made desktop computer\t1\n").unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].label, 1);
        assert_eq!(pairs[0].line, 1);
        assert_eq!(pairs[0].q1.len(), 6);
    }

    #[test]
    fn empty_file_is_empty() {
        assert!(parse_pairs_tsv("").unwrap().is_empty());
    }

    #[test]
    fn errors_cite_line_numbers() {
        let err = parse_pairs_tsv("a\tb\t1\nonly\ttwo\n").unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 2, .. }), "{err}");
        let err = parse_pairs_tsv("a\tb\t2\n").unwrap_err();
        assert!(matches!(err, DataError::BadLabel { line: 1, .. }));
        let err = parse_pairs_tsv("a\tb\t0\n \tb\t1\n").unwrap_err();
        assert!(matches!(err, DataError::EmptySentenceAt { line: 2 }));
    }

    #[test]
    fn faq_rows() {
        let rows = parse_faq_tsv("1\tHow?\tLike this.\n7\tWhy?\tBecause\tof tabs\n").unwrap();
        assert_eq!(rows[1].id, 7);
        assert_eq!(rows[1].answer, "Because\tof tabs");
        assert!(matches!(
            parse_faq_tsv("1\ta\tb\n1\tc\td\n"),
            Err(DataError::DuplicateId { line: 2, id: 1 })
        ));
        assert!(matches!(parse_faq_tsv("x\ta\tb\n"), Err(DataError::Malformed { line: 1, .. })));
    }
}
