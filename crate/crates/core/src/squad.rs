//! SQuAD v1.1 ingestion at fixture scale.
//!
//! Contexts and questions are tokenized into alphanumeric runs and single
//! punctuation marks (offsets count Unicode scalar values), and each answer's
//! character range is mapped to the token span whose boundaries coincide
//! with it exactly. Answers that do not land on token boundaries are skipped
//! and reported, never silently dropped. Each question becomes its own
//! singleton group in the train split.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::data::{QAExample, Split, Vocab};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct SquadFile {
    data: Vec<SquadArticle>,
}

#[derive(Debug, Deserialize)]
struct SquadArticle {
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Debug, Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Debug, Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    answers: Vec<SquadAnswer>,
}

#[derive(Debug, Deserialize)]
struct SquadAnswer {
    text: String,
    answer_start: usize,
}

/// Token plus its half-open codepoint span in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpannedToken {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Split into alphanumeric runs and single punctuation marks; whitespace
/// only separates. Offsets are Unicode scalar value indices.
pub fn tokenize_with_offsets(text: &str) -> Vec<SpannedToken> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphanumeric() {
            let start = i;
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
            tokens.push(SpannedToken {
                text: chars[start..i].iter().collect(),
                start,
                end: i,
            });
        } else {
            tokens.push(SpannedToken { text: c.to_string(), start: i, end: i + 1 });
            i += 1;
        }
    }
    tokens
}

/// Whether to start a fresh vocabulary or grow an existing one.
#[derive(Debug, Clone)]
pub enum VocabPolicy {
    Build,
    Extend(Vocab),
}

/// A question whose answer could not be mapped to token boundaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedQa {
    pub id: String,
    pub reason: String,
}

/// Result of one import: resolved examples, the vocabulary they reference,
/// and the questions that were skipped.
#[derive(Debug, Clone)]
pub struct SquadImport {
    pub examples: Vec<QAExample>,
    pub vocab: Vocab,
    pub skipped: Vec<SkippedQa>,
}

impl SquadImport {
    /// Share of questions whose answers resolved; 1 when the file has none.
    pub fn resolved_fraction(&self) -> f64 {
        let total = self.examples.len() + self.skipped.len();
        if total == 0 {
            1.0
        } else {
            self.examples.len() as f64 / total as f64
        }
    }
}

/// Parse SQuAD v1.1 JSON text. Context tokens of every paragraph enter the
/// vocabulary; question tokens only for questions that resolve.
pub fn parse_squad_json(text: &str, policy: VocabPolicy) -> Result<SquadImport> {
    let file: SquadFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    let mut vocab = match policy {
        VocabPolicy::Build => Vocab::new(),
        VocabPolicy::Extend(v) => v,
    };
    let mut examples = Vec::new();
    let mut skipped = Vec::new();

    for article in &file.data {
        for paragraph in &article.paragraphs {
            let context_chars: Vec<char> = paragraph.context.chars().collect();
            let tokens = tokenize_with_offsets(&paragraph.context);
            let passage: Vec<usize> = tokens.iter().map(|t| vocab.intern(&t.text)).collect();

            for qa in &paragraph.qas {
                let skip = |reason: &str| SkippedQa {
                    id: qa.id.clone(),
                    reason: reason.to_string(),
                };
                let Some(answer) = qa.answers.first() else {
                    skipped.push(skip("question has no answers"));
                    continue;
                };
                let answer_chars: Vec<char> = answer.text.chars().collect();
                if answer_chars.is_empty() {
                    skipped.push(skip("answer text is empty"));
                    continue;
                }
                let char_start = answer.answer_start;
                let char_end = char_start + answer_chars.len();
                if char_end > context_chars.len()
                    || context_chars[char_start..char_end] != answer_chars[..]
                {
                    skipped.push(skip("answer text does not match the context at its offset"));
                    continue;
                }
                let tok_start = tokens.iter().position(|t| t.start == char_start);
                let tok_end = tokens.iter().position(|t| t.end == char_end);
                let (Some(s), Some(e)) = (tok_start, tok_end) else {
                    skipped.push(skip("answer does not align with token boundaries"));
                    continue;
                };
                if s > e {
                    skipped.push(skip("answer does not align with token boundaries"));
                    continue;
                }
                let question: Vec<usize> = tokenize_with_offsets(&qa.question)
                    .iter()
                    .map(|t| vocab.intern(&t.text))
                    .collect();
                examples.push(QAExample {
                    id: qa.id.clone(),
                    group_id: qa.id.clone(),
                    split: Split::Train,
                    question,
                    passage: passage.clone(),
                    answer_start: s,
                    answer_end: e,
                });
            }
        }
    }
    Ok(SquadImport { examples, vocab, skipped })
}

/// Read and parse a SQuAD v1.1 JSON file.
pub fn load_squad_json(path: &Path, policy: VocabPolicy) -> Result<SquadImport> {
    let text = fs::read_to_string(path)?;
    parse_squad_json(&text, policy)
}
