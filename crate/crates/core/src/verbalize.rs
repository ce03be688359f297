//! Triplets and reasoning paths as sentences.
//!
//! Descriptions are joined with `"; "` in path order. Inverse relations have
//! no description of their own and reuse the forward text with its word order
//! reversed.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::graph::{KnowledgeGraph, RelationId, Triplet};
use crate::paths::ReasoningPath;

pub const SEPARATOR: &str = "; ";
pub const EMPTY_PATH_TEXT: &str = "(no path)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceKind {
    Triplet,
    Path,
    EmptyPath,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub kind: SentenceKind,
}

impl Sentence {
    pub fn as_str(&self) -> &str {
        &self.text
    }
}

/// How triplets are rendered. `Question` is the natural-language template,
/// kept for ablations; paths are always joined with separators.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripletStyle {
    #[default]
    Semicolon,
    Question,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verbalizer {
    pub style: TripletStyle,
    pub empty_path_text: String,
}

impl Default for Verbalizer {
    fn default() -> Self {
        Verbalizer { style: TripletStyle::Semicolon, empty_path_text: EMPTY_PATH_TEXT.to_owned() }
    }
}

/// Reverses the word order of a relation description.
///
/// `"person gender"` becomes `"gender person"`.
pub fn inverse_relation_description(forward: &str) -> String {
    forward.split_whitespace().rev().collect::<Vec<_>>().join(" ")
}

pub fn relation_text(g: &KnowledgeGraph, r: RelationId) -> String {
    let forward = g.vocab().relation_description(r);
    if r.is_inverse() {
        inverse_relation_description(&forward)
    } else {
        forward
    }
}

impl Verbalizer {
    pub fn triplet_sentence(&self, t: &Triplet, g: &KnowledgeGraph) -> Sentence {
        let v = g.vocab();
        let head = v.entity_description(t.head);
        let rel = relation_text(g, t.relation);
        let tail = v.entity_description(t.tail);
        let text = match self.style {
            TripletStyle::Semicolon => [head, rel, tail].join(SEPARATOR),
            TripletStyle::Question => {
                format!("Question: {head} is the {rel} of what? Is the correct answer {tail}?")
            }
        };
        Sentence { text, kind: SentenceKind::Triplet }
    }

    pub fn path_sentence(&self, p: &ReasoningPath, g: &KnowledgeGraph) -> Sentence {
        let v = g.vocab();
        let mut parts = Vec::with_capacity(p.entities.len() + p.relations.len());
        parts.push(v.entity_description(p.entities[0]));
        for (i, &r) in p.relations.iter().enumerate() {
            parts.push(relation_text(g, r));
            parts.push(v.entity_description(p.entities[i + 1]));
        }
        Sentence { text: parts.join(SEPARATOR), kind: SentenceKind::Path }
    }

    pub fn empty_path_sentence(&self) -> Sentence {
        Sentence { text: self.empty_path_text.clone(), kind: SentenceKind::EmptyPath }
    }
}

/// One line of the sentence export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub kind: SentenceKind,
    pub text: String,
    pub path_id: Option<String>,
}

/// Writes sentences as JSON lines `{kind, text, path_id}`.
pub fn write_sentences_jsonl<W: Write>(mut w: W, records: &[SentenceRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
