//! Multiple-choice rating sheets: a definition and four same-category lemmas,
//! exactly one of which the definition belongs to.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{PosCategory, Sense};
use crate::{Error, Result};

const OPTIONS: usize = 4;
const LETTERS: [char; OPTIONS] = ['A', 'B', 'C', 'D'];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefinitionSource {
    Reference,
    Generated,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingItem {
    /// 1-based item number.
    pub item: usize,
    pub pos: PosCategory,
    pub definition: String,
    pub source: DefinitionSource,
    pub options: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerKeyEntry {
    pub item: usize,
    pub sense_id: String,
    /// Index into the item's options.
    pub answer: usize,
    pub source: DefinitionSource,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingSheet {
    pub items: Vec<RatingItem>,
    pub key: Vec<AnswerKeyEntry>,
}

impl RatingSheet {
    pub fn sheet_text(&self) -> String {
        let mut out = String::new();
        for it in &self.items {
            out.push_str(&format!("{}. {}\n", it.item, it.definition));
            for (l, o) in LETTERS.iter().zip(&it.options) {
                out.push_str(&format!("   ({l}) {o}\n"));
            }
            out.push('\n');
        }
        out
    }

    pub fn key_tsv(&self) -> String {
        let mut out = String::from("item\tsense_id\tanswer\tsource\n");
        for k in &self.key {
            let source = match k.source {
                DefinitionSource::Reference => "reference",
                DefinitionSource::Generated => "generated",
            };
            out.push_str(&format!("{}\t{}\t{}\t{source}\n", k.item, k.sense_id, LETTERS[k.answer]));
        }
        out
    }
}

fn quotas(n_items: usize) -> Vec<(PosCategory, usize)> {
    let cats = PosCategory::CONTENT;
    let (base, extra) = (n_items / cats.len(), n_items % cats.len());
    cats.iter().enumerate().map(|(i, &c)| (c, base + usize::from(i < extra))).collect()
}

/// Build `n_items` items balanced over N, V, D and O.
///
/// Targets come from `senses`, distractors from `pool`. When `generated`
/// maps a target's sense id to a generated gloss, the item shows either that
/// or the reference gloss with equal probability, flagged per item.
pub fn make_rating_items<R: Rng + ?Sized>(
    senses: &[Sense],
    n_items: usize,
    pool: &[Sense],
    generated: Option<&BTreeMap<String, String>>,
    rng: &mut R,
) -> Result<RatingSheet> {
    if n_items == 0 {
        return Err(Error::InvalidInput("n_items must be positive".into()));
    }
    let mut drafts = Vec::with_capacity(n_items);
    for (cat, quota) in quotas(n_items) {
        let mut targets: Vec<&Sense> = senses.iter().filter(|s| s.category() == cat).collect();
        if targets.len() < quota {
            return Err(Error::InvalidInput(format!("{quota} {cat} items requested, only {} senses", targets.len())));
        }
        targets.sort_by(|a, b| a.sense_id.cmp(&b.sense_id));
        targets.shuffle(rng);
        for t in targets.into_iter().take(quota) {
            let mut lemmas: Vec<&str> = Vec::new();
            let mut seen = HashSet::from([t.lemma.as_str()]);
            for s in pool.iter().filter(|s| s.category() == cat) {
                if seen.insert(s.lemma.as_str()) {
                    lemmas.push(&s.lemma);
                }
            }
            if lemmas.len() < OPTIONS - 1 {
                return Err(Error::InsufficientDistractors { pos: cat.to_string(), have: lemmas.len(), need: OPTIONS - 1 });
            }
            lemmas.sort_unstable();
            lemmas.shuffle(rng);
            let mut options: Vec<String> = lemmas[..OPTIONS - 1].iter().map(|l| l.to_string()).collect();
            let answer = rng.random_range(0..OPTIONS);
            options.insert(answer, t.lemma.clone());
            let (definition, source) = match generated.and_then(|g| g.get(&t.sense_id)) {
                Some(text) if rng.random_bool(0.5) => (text.clone(), DefinitionSource::Generated),
                _ => (t.gloss.clone(), DefinitionSource::Reference),
            };
            drafts.push((t.sense_id.clone(), cat, definition, source, options, answer));
        }
    }
    drafts.shuffle(rng);
    let mut sheet = RatingSheet { items: Vec::new(), key: Vec::new() };
    for (i, (sense_id, pos, definition, source, options, answer)) in drafts.into_iter().enumerate() {
        sheet.items.push(RatingItem { item: i + 1, pos, definition, source, options });
        sheet.key.push(AnswerKeyEntry { item: i + 1, sense_id, answer, source });
    }
    Ok(sheet)
}
