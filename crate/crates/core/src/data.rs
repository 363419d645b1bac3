//! Synthetic paraphrase-QA corpus generation and JSONL persistence.
//!
//! Passages are sequences of facts "entity relation value..." padded with
//! filler words; each question asks for the value of one (entity, relation)
//! pair. A group holds several surface variants of the same question built
//! from distinct templates, so consistency across paraphrases is measurable.
//! Distractor facts reuse the entity or the relation with different values.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Reserved padding token id.
pub const PAD_ID: usize = 0;
/// Reserved separator token id, placed between query and passage.
pub const SEP_ID: usize = 1;
/// Reserved unknown-token id.
pub const UNK_ID: usize = 2;

const RESERVED_TOKENS: [&str; 3] = ["<pad>", "<sep>", "<unk>"];

/// Corpus partition. Groups never straddle splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        };
        f.write_str(s)
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split '{other}' (expected train, dev, or test)"
            ))),
        }
    }
}

/// One question over one passage. `answer_end` is inclusive. Field order is
/// the on-disk JSONL contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QAExample {
    pub id: String,
    pub group_id: String,
    pub split: Split,
    pub question: Vec<usize>,
    pub passage: Vec<usize>,
    pub answer_start: usize,
    pub answer_end: usize,
}

impl QAExample {
    /// Gold answer tokens, `passage[answer_start..=answer_end]`.
    pub fn answer_tokens(&self) -> &[usize] {
        &self.passage[self.answer_start..=self.answer_end]
    }

    fn validate(&self) -> Result<()> {
        if self.answer_end < self.answer_start {
            return Err(Error::Schema(format!(
                "example '{}': answer_end {} < answer_start {}",
                self.id, self.answer_end, self.answer_start
            )));
        }
        if self.answer_end >= self.passage.len() {
            return Err(Error::Schema(format!(
                "example '{}': answer_end {} outside passage of length {}",
                self.id,
                self.answer_end,
                self.passage.len()
            )));
        }
        Ok(())
    }
}

/// Token string <-> contiguous id table with three reserved entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    /// Table holding only the reserved pad / sep / unk entries.
    pub fn new() -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: BTreeMap::new(),
        };
        for tok in RESERVED_TOKENS {
            v.intern(tok);
        }
        v
    }

    /// Id of `tok`, inserting it at the next free id if absent.
    pub fn intern(&mut self, tok: &str) -> usize {
        if let Some(&id) = self.index.get(tok) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(tok.to_string());
        self.index.insert(tok.to_string(), id);
        id
    }

    pub fn lookup(&self, tok: &str) -> Option<usize> {
        self.index.get(tok).copied()
    }

    /// Id of `tok`, or the reserved unknown id.
    pub fn lookup_or_unk(&self, tok: &str) -> usize {
        self.lookup(tok).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Space-joined token strings; unknown ids render as the unk token.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(RESERVED_TOKENS[2]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Write as `{"tokens": [...]}` JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct File<'a> {
            tokens: &'a [String],
        }
        let mut out = serde_json::to_string(&File { tokens: &self.tokens })
            .map_err(|e| Error::Schema(e.to_string()))?;
        out.push('\n');
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct File {
            tokens: Vec<String>,
        }
        let text = fs::read_to_string(path)?;
        let file: File = serde_json::from_str(&text).map_err(|e| Error::Schema(e.to_string()))?;
        let reserved_ok = file.tokens.len() >= RESERVED_TOKENS.len()
            && RESERVED_TOKENS.iter().zip(&file.tokens).all(|(a, b)| a == b);
        if !reserved_ok {
            return Err(Error::Schema(format!(
                "vocabulary must start with the reserved tokens {RESERVED_TOKENS:?}"
            )));
        }
        let mut index = BTreeMap::new();
        for (id, tok) in file.tokens.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::Schema(format!("duplicate vocabulary token '{tok}'")));
            }
        }
        Ok(Vocab {
            tokens: file.tokens,
            index,
        })
    }
}

/// Corpus generation parameters. All randomness derives from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    pub seed: u64,
    pub n_groups: usize,
    pub paraphrases_per_group: usize,
    pub vocab_size: usize,
    pub passage_len_min: usize,
    pub passage_len_max: usize,
    pub n_entities: usize,
    pub n_relations: usize,
    pub distractor_facts: usize,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            seed: 42,
            n_groups: 32,
            paraphrases_per_group: 3,
            vocab_size: 96,
            passage_len_min: 20,
            passage_len_max: 40,
            n_entities: 12,
            n_relations: 8,
            distractor_facts: 2,
        }
    }
}

/// Question surface templates. Relation and Synonym both name the asked-for
/// relation; using either in a template keeps the semantics fixed while the
/// surface varies.
#[derive(Clone, Copy)]
enum Piece {
    Word(&'static str),
    Entity,
    Relation,
    Synonym,
}

use Piece::{Entity, Relation, Synonym, Word};

const TEMPLATES: &[&[Piece]] = &[
    &[Word("what"), Word("is"), Relation, Word("of"), Entity],
    &[Word("tell"), Word("me"), Word("the"), Relation, Word("of"), Entity],
    &[Word("give"), Word("the"), Relation, Word("for"), Entity],
    &[Entity, Relation, Word("is"), Word("what")],
    &[Word("what"), Synonym, Word("does"), Entity, Word("have")],
    &[Word("state"), Word("the"), Synonym, Word("of"), Entity],
    &[Word("which"), Word("value"), Word("holds"), Word("for"), Relation, Word("of"), Entity],
    &[Word("for"), Entity, Word("what"), Word("is"), Word("the"), Synonym],
];

const FILLER_WORDS: [&str; 6] = ["also", "and", "then", "meanwhile", "next", "besides"];

/// Longest instantiated question template, in tokens.
pub const MAX_QUESTION_LEN: usize = 7;

struct GenVocab {
    vocab: Vocab,
    entity_ids: Vec<usize>,
    relation_ids: Vec<usize>,
    synonym_ids: Vec<usize>,
    value_ids: Vec<usize>,
    filler_ids: Vec<usize>,
}

/// Build the generation vocabulary in a fixed order: reserved tokens,
/// template words by first appearance, fillers, entities, relations,
/// synonyms, then values filling the remaining ids.
fn build_gen_vocab(spec: &GenSpec) -> Result<GenVocab> {
    let mut vocab = Vocab::new();
    for template in TEMPLATES {
        for piece in *template {
            if let Word(w) = piece {
                vocab.intern(w);
            }
        }
    }
    let filler_ids: Vec<usize> = FILLER_WORDS.iter().map(|w| vocab.intern(w)).collect();
    let entity_ids: Vec<usize> =
        (0..spec.n_entities).map(|i| vocab.intern(&format!("ent{i}"))).collect();
    let relation_ids: Vec<usize> =
        (0..spec.n_relations).map(|i| vocab.intern(&format!("rel{i}"))).collect();
    let synonym_ids: Vec<usize> =
        (0..spec.n_relations).map(|i| vocab.intern(&format!("syn{i}"))).collect();
    let used = vocab.len();
    if spec.vocab_size < used + 4 {
        return Err(Error::Config(format!(
            "vocab_size {} too small: {} ids reserved for structure words, need at least {} \
             for values",
            spec.vocab_size,
            used,
            used + 4
        )));
    }
    let value_ids: Vec<usize> =
        (0..spec.vocab_size - used).map(|i| vocab.intern(&format!("val{i}"))).collect();
    Ok(GenVocab {
        vocab,
        entity_ids,
        relation_ids,
        synonym_ids,
        value_ids,
        filler_ids,
    })
}

fn validate_spec(spec: &GenSpec) -> Result<()> {
    if spec.n_groups == 0 {
        return Err(Error::Config("n_groups must be at least 1".into()));
    }
    if spec.paraphrases_per_group < 2 {
        return Err(Error::Config("paraphrases_per_group must be at least 2".into()));
    }
    if spec.paraphrases_per_group > TEMPLATES.len() {
        return Err(Error::Config(format!(
            "paraphrases_per_group {} exceeds the {} distinct question templates",
            spec.paraphrases_per_group,
            TEMPLATES.len()
        )));
    }
    if spec.n_entities == 0 || spec.n_relations == 0 {
        return Err(Error::Config("n_entities and n_relations must be at least 1".into()));
    }
    if spec.n_groups > spec.n_entities * spec.n_relations {
        return Err(Error::Config(format!(
            "n_groups {} exceeds the {} distinct (entity, relation) pairs",
            spec.n_groups,
            spec.n_entities * spec.n_relations
        )));
    }
    if spec.distractor_facts > 0 && (spec.n_entities < 2 || spec.n_relations < 2) {
        return Err(Error::Config(
            "distractor facts need at least 2 entities and 2 relations".into(),
        ));
    }
    if spec.distractor_facts > (spec.n_entities - 1) + (spec.n_relations - 1) {
        return Err(Error::Config(format!(
            "distractor_facts {} exceeds the {} distinct facts sharing the entity or relation",
            spec.distractor_facts,
            (spec.n_entities - 1) + (spec.n_relations - 1)
        )));
    }
    if spec.passage_len_min > spec.passage_len_max {
        return Err(Error::Config(format!(
            "passage_len_min {} exceeds passage_len_max {}",
            spec.passage_len_min, spec.passage_len_max
        )));
    }
    Ok(())
}

/// A value token outside the gold answer, so distractor answers never
/// collide with the gold one.
fn draw_non_gold_value(rng: &mut SplitMix64, values: &[usize], gold: &[usize]) -> usize {
    loop {
        let v = values[rng.next_below(values.len() as u64) as usize];
        if !gold.contains(&v) {
            return v;
        }
    }
}

/// Deterministically generate the corpus and its vocabulary from `spec`.
/// Groups are assigned whole to train/dev/test at fractions 60/10/30.
pub fn generate_corpus(spec: &GenSpec) -> Result<(Vec<QAExample>, Vocab)> {
    validate_spec(spec)?;
    let gv = build_gen_vocab(spec)?;
    let mut rng = SplitMix64::new(spec.seed);

    // Distinct (entity, relation) pairs, one per group.
    let mut pairs: Vec<(usize, usize)> = (0..spec.n_entities)
        .flat_map(|e| (0..spec.n_relations).map(move |r| (e, r)))
        .collect();
    rng.shuffle(&mut pairs);
    pairs.truncate(spec.n_groups);

    // Split assignment by shuffled group position.
    let mut order: Vec<usize> = (0..spec.n_groups).collect();
    rng.shuffle(&mut order);
    let n_train = spec.n_groups * 6 / 10;
    let n_dev = spec.n_groups / 10;
    let mut splits = vec![Split::Test; spec.n_groups];
    for (pos, &g) in order.iter().enumerate() {
        splits[g] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
    }

    let mut examples = Vec::with_capacity(spec.n_groups * spec.paraphrases_per_group);
    for (g, &(e, r)) in pairs.iter().enumerate() {
        let entity = gv.entity_ids[e];
        let relation = gv.relation_ids[r];
        let synonym = gv.synonym_ids[r];

        // Gold fact: entity relation value[1..=2].
        let value_len = 1 + rng.next_below(2) as usize;
        let gold_value: Vec<usize> = (0..value_len)
            .map(|_| gv.value_ids[rng.next_below(gv.value_ids.len() as u64) as usize])
            .collect();
        let mut facts: Vec<(Vec<usize>, bool)> = Vec::with_capacity(1 + spec.distractor_facts);
        let mut gold_fact = vec![entity, relation];
        gold_fact.extend(&gold_value);
        facts.push((gold_fact, true));

        // Distractors share the entity or the relation, never the value.
        let mut free_relations: Vec<usize> = (0..spec.n_relations).filter(|&x| x != r).collect();
        let mut free_entities: Vec<usize> = (0..spec.n_entities).filter(|&x| x != e).collect();
        for _ in 0..spec.distractor_facts {
            let same_entity = if free_relations.is_empty() {
                false
            } else if free_entities.is_empty() {
                true
            } else {
                rng.next_below(2) == 0
            };
            let (d_entity, d_relation) = if same_entity {
                let i = rng.next_below(free_relations.len() as u64) as usize;
                (entity, gv.relation_ids[free_relations.swap_remove(i)])
            } else {
                let i = rng.next_below(free_entities.len() as u64) as usize;
                (gv.entity_ids[free_entities.swap_remove(i)], relation)
            };
            let d_len = 1 + rng.next_below(2) as usize;
            let mut fact = vec![d_entity, d_relation];
            for _ in 0..d_len {
                fact.push(draw_non_gold_value(&mut rng, &gv.value_ids, &gold_value));
            }
            facts.push((fact, false));
        }
        rng.shuffle(&mut facts);

        // Pad with filler blocks to a length drawn from the allowed range.
        let base_len: usize = facts.iter().map(|(f, _)| f.len()).sum();
        if base_len > spec.passage_len_max {
            return Err(Error::Config(format!(
                "passage_len_max {} cannot hold {} fact tokens; raise it or lower \
                 distractor_facts",
                spec.passage_len_max, base_len
            )));
        }
        let lo = base_len.max(spec.passage_len_min);
        let target = lo + rng.next_below((spec.passage_len_max - lo + 1) as u64) as usize;
        let mut blocks = facts;
        for _ in 0..target - base_len {
            let slot = rng.next_below(blocks.len() as u64 + 1) as usize;
            let filler = gv.filler_ids[rng.next_below(gv.filler_ids.len() as u64) as usize];
            blocks.insert(slot, (vec![filler], false));
        }
        let mut passage = Vec::with_capacity(target);
        let mut answer_start = 0;
        for (block, is_gold) in &blocks {
            if *is_gold {
                answer_start = passage.len() + 2;
            }
            passage.extend(block);
        }
        let answer_end = answer_start + value_len - 1;

        // Paraphrases: distinct templates over the same pair and passage.
        let mut template_order: Vec<usize> = (0..TEMPLATES.len()).collect();
        rng.shuffle(&mut template_order);
        for (v, &ti) in template_order.iter().take(spec.paraphrases_per_group).enumerate() {
            let question: Vec<usize> = TEMPLATES[ti]
                .iter()
                .map(|piece| match piece {
                    Word(w) => gv.vocab.lookup(w).expect("template word interned"),
                    Entity => entity,
                    Relation => relation,
                    Synonym => synonym,
                })
                .collect();
            examples.push(QAExample {
                id: format!("g{g}_v{v}"),
                group_id: format!("g{g}"),
                split: splits[g],
                question,
                passage: passage.clone(),
                answer_start,
                answer_end,
            });
        }
    }
    Ok((examples, gv.vocab))
}

/// Write one JSON object per line, LF-terminated, fields in declaration
/// order.
pub fn save_jsonl(examples: &[QAExample], path: &Path) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for ex in examples {
        let line = serde_json::to_string(ex).map_err(|e| Error::Schema(e.to_string()))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Read a JSONL corpus, validating spans. Syntax problems report the line
/// number; schema problems name the offending field or invariant.
pub fn load_jsonl(path: &Path) -> Result<Vec<QAExample>> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut examples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: QAExample = serde_json::from_str(&line).map_err(|e| {
            if e.classify() == serde_json::error::Category::Data {
                Error::Schema(format!("line {}: {e}", i + 1))
            } else {
                Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                }
            }
        })?;
        ex.validate()?;
        examples.push(ex);
    }
    Ok(examples)
}

/// Examples belonging to `split`, in corpus order.
pub fn filter_by_split(examples: &[QAExample], split: Split) -> Vec<QAExample> {
    examples.iter().filter(|e| e.split == split).cloned().collect()
}
