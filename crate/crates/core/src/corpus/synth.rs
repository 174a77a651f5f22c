//! A synthetic gloss language with known ground truth.
//!
//! Each POS category has one gloss template made of literal chunks and
//! lexeme-specific slots. Literal characters are fully determined by the POS
//! label and the preceding gloss context; slot characters are drawn per sense
//! and can only be recovered from the sense's semantic vector. Example
//! sentences embed the lemma in POS-specific frames so the category is
//! recoverable from context even for unseen lemmas.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{ExampleSentence, PosCategory, PosTag, Sense};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Piece {
    Literal { text: String, sem_type: String },
    Slot { pool: Vec<char>, len: usize, sem_type: String },
}

impl Piece {
    fn lit(text: &str, sem_type: &str) -> Self {
        Self::Literal { text: text.into(), sem_type: sem_type.into() }
    }

    fn slot(pool: &str, len: usize, sem_type: &str) -> Self {
        Self::Slot { pool: pool.chars().collect(), len, sem_type: sem_type.into() }
    }

    pub fn sem_type(&self) -> &str {
        match self {
            Self::Literal { sem_type, .. } | Self::Slot { sem_type, .. } => sem_type,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub pieces: Vec<Piece>,
}

impl Template {
    /// Anchored regex accepted by every gloss instantiating this template.
    pub fn pattern(&self) -> String {
        let mut p = String::from("^");
        for piece in &self.pieces {
            match piece {
                Piece::Literal { text, .. } => p.push_str(&regex::escape(text)),
                Piece::Slot { pool, len, .. } => {
                    let class: String = pool.iter().map(|c| regex::escape(&c.to_string())).collect();
                    p.push_str(&format!("[{class}]{{{len}}}"));
                }
            }
        }
        p.push('$');
        p
    }

    pub fn regex(&self) -> Regex {
        Regex::new(&self.pattern()).expect("template patterns are well-formed")
    }

    pub fn slot_chars(&self) -> usize {
        self.pieces.iter().map(|p| if let Piece::Slot { len, .. } = p { *len } else { 0 }).sum()
    }
}

/// Role of a gloss character in the synthetic ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    /// Literal template text. Per character, a literal that directly follows
    /// another literal is forced by that preceding marker.
    Forced,
    /// Per character only: a literal opening the gloss or following a slot,
    /// fixed by the template rather than by the character before it.
    Opening,
    /// Lexeme-specific slot filler.
    Slot,
}

/// A chunk of a synthetic gloss in character offsets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub role: Role,
    pub sem_type: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LexemeInventory {
    /// Characters lemmas are spelled with.
    pub lemma_chars: Vec<char>,
    pub lemma_len: usize,
    /// Characters substituted for `{F}` in sentence frames.
    pub filler_chars: Vec<char>,
    /// Sentence frames per category; `{L}` marks the lemma, `{F}` a filler.
    pub frames: BTreeMap<PosCategory, Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_senses: usize,
    pub pos_mix: Vec<(PosCategory, f64)>,
    pub templates: BTreeMap<PosCategory, Template>,
    pub lexemes: LexemeInventory,
    pub min_examples: usize,
    pub max_examples: usize,
}

impl SynthSpec {
    pub fn new(seed: u64, n_senses: usize) -> Self {
        Self {
            seed,
            n_senses,
            pos_mix: vec![
                (PosCategory::N, 0.35),
                (PosCategory::V, 0.3),
                (PosCategory::D, 0.15),
                (PosCategory::O, 0.15),
                (PosCategory::Nb, 0.05),
            ],
            templates: default_templates(),
            lexemes: default_lexemes(),
            min_examples: 1,
            max_examples: 5,
        }
    }

    pub fn with_pos_mix(mut self, mix: &[(PosCategory, f64)]) -> Self {
        self.pos_mix = mix.to_vec();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let lex = &self.lexemes;
        if lex.lemma_chars.is_empty() || lex.lemma_len == 0 {
            return Err(Error::InvalidInput("empty lexeme inventory".into()));
        }
        let total: f64 = self.pos_mix.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 || self.pos_mix.iter().any(|(_, p)| *p < 0.0) {
            return Err(Error::InvalidInput(format!("pos_mix proportions must be non-negative and sum to 1, got {total}")));
        }
        for (cat, p) in &self.pos_mix {
            if *p > 0.0 {
                let frames = lex.frames.get(cat).map(Vec::as_slice).unwrap_or_default();
                if !self.templates.contains_key(cat) || frames.is_empty() {
                    return Err(Error::InvalidInput(format!("category {cat} needs a template and sentence frames")));
                }
                if frames.iter().any(|f| f.matches("{L}").count() != 1) {
                    return Err(Error::InvalidInput(format!("every {cat} frame needs exactly one {{L}}")));
                }
            }
        }
        if self.min_examples == 0 || self.min_examples > self.max_examples {
            return Err(Error::InvalidInput("example count range must satisfy 1 <= min <= max".into()));
        }
        let combos = (lex.lemma_chars.len() as f64).powi(lex.lemma_len as i32);
        if combos < self.n_senses as f64 {
            return Err(Error::InvalidInput(format!("{combos} distinct lemmas cannot cover {} senses", self.n_senses)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub senses: Vec<Sense>,
    /// Gloss segmentation per sense, parallel to `senses`.
    pub segments: Vec<Vec<Segment>>,
}

impl SynthCorpus {
    /// Per-character roles of sense `i`'s gloss. Segments are either
    /// `Forced` or `Slot`; literal characters at the gloss start or right
    /// after a slot come back as `Opening`.
    pub fn roles(&self, i: usize) -> Vec<Role> {
        let mut roles: Vec<Role> = Vec::new();
        for seg in &self.segments[i] {
            for _ in seg.start..seg.end {
                let role = match (seg.role, roles.last()) {
                    (Role::Slot, _) => Role::Slot,
                    (_, None | Some(Role::Slot)) => Role::Opening,
                    _ => Role::Forced,
                };
                roles.push(role);
            }
        }
        roles
    }

    pub fn segments_for(&self, sense_id: &str) -> Option<&[Segment]> {
        self.senses.iter().position(|s| s.sense_id == sense_id).map(|i| self.segments[i].as_slice())
    }

    /// Annotation records (`sense_id`, chunk texts, chunk types), first chunk untyped.
    pub fn annotation_lines(&self) -> String {
        let mut out = String::new();
        for (sense, segs) in self.senses.iter().zip(&self.segments) {
            let chars: Vec<char> = sense.gloss.chars().collect();
            let texts: Vec<String> = segs.iter().map(|s| chars[s.start..s.end].iter().collect()).collect();
            let types: Vec<&str> =
                segs.iter().enumerate().map(|(i, s)| if i == 0 { "--" } else { s.sem_type.as_str() }).collect();
            out.push_str(&format!("{}\t{}\t{}\n", sense.sense_id, texts.join("/"), types.join("/")));
        }
        out
    }
}

fn sample_category(mix: &[(PosCategory, f64)], rng: &mut ChaCha8Rng) -> PosCategory {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(cat, p) in mix {
        acc += p;
        if u < acc {
            return cat;
        }
    }
    mix.iter().rev().find(|(_, p)| *p > 0.0).map(|(c, _)| *c).expect("validated mix")
}

fn pick(pool: &[char], rng: &mut ChaCha8Rng) -> char {
    pool[rng.random_range(0..pool.len())]
}

/// Deterministically generate a corpus from `spec`.
pub fn synth_corpus(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lex = &spec.lexemes;
    let mut used = HashSet::new();
    let mut senses = Vec::with_capacity(spec.n_senses);
    let mut segments = Vec::with_capacity(spec.n_senses);
    for i in 0..spec.n_senses {
        let cat = sample_category(&spec.pos_mix, &mut rng);
        let lemma = loop {
            let l: String = (0..lex.lemma_len).map(|_| pick(&lex.lemma_chars, &mut rng)).collect();
            if used.insert(l.clone()) {
                break l;
            }
        };
        let template = &spec.templates[&cat];
        let mut gloss = String::new();
        let mut segs = Vec::new();
        let mut pos = 0;
        for piece in &template.pieces {
            let text: String = match piece {
                Piece::Literal { text, .. } => text.clone(),
                Piece::Slot { pool, len, .. } => (0..*len).map(|_| pick(pool, &mut rng)).collect(),
            };
            let n = text.chars().count();
            let role = if matches!(piece, Piece::Literal { .. }) { Role::Forced } else { Role::Slot };
            segs.push(Segment { start: pos, end: pos + n, role, sem_type: piece.sem_type().to_string() });
            gloss.push_str(&text);
            pos += n;
        }
        let n_examples = rng.random_range(spec.min_examples..=spec.max_examples);
        let frames = &lex.frames[&cat];
        let examples = (0..n_examples)
            .map(|_| {
                let frame = &frames[rng.random_range(0..frames.len())];
                instantiate_frame(frame, &lemma, &lex.filler_chars, &mut rng)
            })
            .collect();
        senses.push(Sense {
            sense_id: format!("syn{:06}", i),
            lemma,
            pos: PosTag::from(cat),
            gloss,
            examples,
        });
        segments.push(segs);
    }
    Ok(SynthCorpus { senses, segments })
}

fn instantiate_frame(frame: &str, lemma: &str, fillers: &[char], rng: &mut ChaCha8Rng) -> ExampleSentence {
    let mut text = String::new();
    let mut start = 0;
    let mut rest = frame;
    while !rest.is_empty() {
        if let Some(r) = rest.strip_prefix("{L}") {
            start = text.chars().count();
            text.push_str(lemma);
            rest = r;
        } else if let Some(r) = rest.strip_prefix("{F}") {
            text.push(pick(fillers, rng));
            rest = r;
        } else {
            let c = rest.chars().next().expect("non-empty");
            text.push(c);
            rest = &rest[c.len_utf8()..];
        }
    }
    let end = start + lemma.chars().count();
    ExampleSentence { text, start, end }
}

const ATTR: &str = "紅藍綠黃白黑大小長短圓尖";
const CLASS: &str = "器具品材料體罐石木布紙盒";
const ACTION: &str = "切割裝盛寫畫量測洗搬煮烤";
const MANNER: &str = "快慢輕重緩急靜猛柔剛穩巧";
const OBJECT: &str = "水火土金銀銅米麥茶酒肉魚";
const NEGATION: &str = "不未沒非無莫";
const TIME: &str = "晨午夜春夏秋冬昔今早晚夕";
const RELATION: &str = "因果轉並或承讓比";
const ORIGIN: &str = "歐美日韓越泰俄法德英";

/// One template per category. Noun glosses are slot-heavy, adverb and
/// "other" glosses mostly template text.
pub fn default_templates() -> BTreeMap<PosCategory, Template> {
    use Piece as P;
    let mut t = BTreeMap::new();
    t.insert(
        PosCategory::N,
        Template {
            pieces: vec![
                P::lit("指", "--"),
                P::slot(ATTR, 2, "Modifier"),
                P::lit("的", "Others"),
                P::slot(CLASS, 2, "Entity"),
                P::lit("，用於", "Preposition"),
                P::slot(ACTION, 2, "Action"),
                P::lit("。", "Others"),
            ],
        },
    );
    t.insert(
        PosCategory::V,
        Template {
            pieces: vec![
                P::lit("以", "--"),
                P::slot(MANNER, 2, "Modifier"),
                P::lit("的方式", "Others"),
                P::slot(ACTION, 1, "Action"),
                P::slot(OBJECT, 1, "Entity"),
                P::lit("。", "Others"),
            ],
        },
    );
    t.insert(
        PosCategory::D,
        Template {
            pieces: vec![
                P::lit("表", "--"),
                P::lit("同一事件", "Event"),
                P::slot(NEGATION, 1, "Negation"),
                P::lit("在", "Preposition"),
                P::slot(TIME, 2, "Time"),
                P::lit("中", "Preposition"),
                P::lit("發生。", "Action"),
            ],
        },
    );
    t.insert(
        PosCategory::O,
        Template {
            pieces: vec![
                P::lit("用於", "--"),
                P::lit("連接", "Action"),
                P::slot(RELATION, 2, "Relation"),
                P::lit("關係的詞語。", "Others"),
            ],
        },
    );
    t.insert(
        PosCategory::Nb,
        Template { pieces: vec![P::lit("用於", "--"), P::slot(ORIGIN, 1, "Origin"), P::lit("姓氏。", "Others")] },
    );
    t
}

pub fn default_lexemes() -> LexemeInventory {
    let lemma_chars = "abcdefghijklmnopqrstuvwxyz甲乙丙丁戊己庚辛壬癸子丑寅卯辰巳申酉戌亥".chars().collect();
    let frames = [
        (PosCategory::N, vec!["這個{L}很好。", "我買了{L}。", "{L}放在{F}{F}上。", "那些{L}都{F}了。"]),
        (PosCategory::V, vec!["他們{L}了{F}{F}。", "我想{L}一下。", "請你{L}吧。", "我們正在{L}。"]),
        (PosCategory::D, vec!["他{L}{F}{F}了。", "大家都{L}去了。", "我{L}看見。", "她{L}走{F}。"]),
        (PosCategory::O, vec!["你{L}他都來了。", "{L}我們走吧。", "{F}{F}{L}{F}{F}。"]),
        (PosCategory::Nb, vec!["{L}先生來了。", "我認識{L}小姐。"]),
    ];
    LexemeInventory {
        lemma_chars,
        lemma_len: 2,
        filler_chars: "山川雨雪風雲花草鳥蟲田路".chars().collect(),
        frames: frames.into_iter().map(|(c, f)| (c, f.into_iter().map(String::from).collect())).collect(),
    }
}
