use std::fmt;

use super::DataError;

/// A `subject-predicate-object` query, each part a list of lowercase words.
///
/// The textual form separates parts with `-` and words with `_`, as in
/// `person-jump_above-bicycle`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationQuery {
    pub subject: Vec<String>,
    pub predicate: Vec<String>,
    pub object: Vec<String>,
    raw: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelationPart {
    Subject,
    Predicate,
    Object,
}

impl fmt::Display for RelationPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelationPart::Subject => "subject",
            RelationPart::Predicate => "predicate",
            RelationPart::Object => "object",
        })
    }
}

fn split_part(part: &str, which: RelationPart, raw: &str) -> Result<Vec<String>, DataError> {
    if part.is_empty() {
        return Err(DataError::Relation {
            raw: raw.to_string(),
            reason: format!("empty {which}"),
        });
    }
    part.split('_')
        .map(|w| {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                Err(DataError::Relation {
                    raw: raw.to_string(),
                    reason: format!("malformed word in {which} '{part}'"),
                })
            } else {
                Ok(w.to_lowercase())
            }
        })
        .collect()
}

/// Parses `S-P-O` with `_` joining the words of a part.
pub fn tokenize_relation(raw: &str) -> Result<RelationQuery, DataError> {
    let parts: Vec<&str> = raw.split('-').collect();
    if parts.len() != 3 {
        return Err(DataError::Relation {
            raw: raw.to_string(),
            reason: format!("expected 3 '-'-separated parts, found {}", parts.len()),
        });
    }
    let subject = split_part(parts[0], RelationPart::Subject, raw)?;
    let predicate = split_part(parts[1], RelationPart::Predicate, raw)?;
    let object = split_part(parts[2], RelationPart::Object, raw)?;
    Ok(RelationQuery::from_parts(subject, predicate, object))
}

impl RelationQuery {
    pub fn from_parts(subject: Vec<String>, predicate: Vec<String>, object: Vec<String>) -> Self {
        let raw = format!(
            "{}-{}-{}",
            subject.join("_"),
            predicate.join("_"),
            object.join("_")
        );
        Self {
            subject,
            predicate,
            object,
            raw,
        }
    }

    /// The original string (lowercased form when built from parts).
    pub fn raw(&self) -> &str {
        &self.raw
    }

    /// Canonical `S-P-O` text; equal to [`raw`](Self::raw) for lowercase input.
    pub fn canonical(&self) -> String {
        format!(
            "{}-{}-{}",
            self.subject.join("_"),
            self.predicate.join("_"),
            self.object.join("_")
        )
    }

    pub fn subject_text(&self) -> String {
        self.subject.join("_")
    }

    pub fn predicate_text(&self) -> String {
        self.predicate.join("_")
    }

    pub fn object_text(&self) -> String {
        self.object.join("_")
    }

    pub fn tokens(&self) -> impl Iterator<Item = &String> {
        self.subject
            .iter()
            .chain(&self.predicate)
            .chain(&self.object)
    }
}

impl fmt::Display for RelationQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

impl std::str::FromStr for RelationQuery {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        tokenize_relation(s)
    }
}
