//! Automatic gloss evaluation: smoothed character BLEU, an exact-match METEOR
//! variant, and per-POS aggregation with standard errors.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use vec2gloss_numerics::Real;

use crate::corpus::{PosCategory, PosTag, Sense, Tokenizer};
use crate::model::{Model, SemanticVector};
use crate::pipeline::{build_instance, PERIOD};
use crate::stats::{mean, standard_error};
use crate::{Error, Result};

/// Remove a leading `POS。` label and one trailing period.
pub fn strip_gloss(text: &str) -> &str {
    let mut s = text;
    if let Some((head, rest)) = s.split_once(PERIOD) {
        if PosTag::parse(head).is_some() {
            s = rest;
        }
    }
    s.strip_suffix(PERIOD).unwrap_or(s)
}

fn ngram_counts(chars: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut counts = HashMap::new();
    for w in chars.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Character BLEU over orders 1–4 with uniform weights.
///
/// Unigram precision is unsmoothed; orders 2–4 use add-one smoothing
/// `(matches + 1) / (total + 1)`. The brevity penalty is `exp(1 - r/c)` when
/// the candidate is not longer than the reference. Empty input scores 0.
pub fn bleu(candidate: &str, reference: &str) -> f64 {
    let c: Vec<char> = candidate.chars().collect();
    let r: Vec<char> = reference.chars().collect();
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand = ngram_counts(&c, n);
        let refc = ngram_counts(&r, n);
        let matched: usize = cand.iter().map(|(g, &k)| k.min(refc.get(g).copied().unwrap_or(0))).sum();
        let total = c.len().saturating_sub(n - 1);
        let p = if n == 1 { matched as f64 / total as f64 } else { (matched as f64 + 1.0) / (total as f64 + 1.0) };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln() / 4.0;
    }
    let (cl, rl) = (c.len() as f64, r.len() as f64);
    let bp = if cl > rl { 1.0 } else { (1.0 - rl / cl).exp() };
    bp * log_sum.exp()
}

/// Best exact alignment: the number of matched characters and the fewest
/// chunks any maximal alignment needs.
pub fn align(candidate: &[char], reference: &[char]) -> (usize, usize) {
    let mut ref_count: HashMap<char, usize> = HashMap::new();
    for &ch in reference {
        *ref_count.entry(ch).or_insert(0) += 1;
    }
    let mut cand_count: HashMap<char, usize> = HashMap::new();
    for &ch in candidate {
        *cand_count.entry(ch).or_insert(0) += 1;
    }
    let matches: usize = cand_count.iter().map(|(ch, &k)| k.min(ref_count.get(ch).copied().unwrap_or(0))).sum();
    if matches == 0 {
        return (0, 0);
    }
    // Per character: how many candidate occurrences may go unmatched.
    let slack: HashMap<char, usize> =
        cand_count.iter().map(|(ch, &k)| (*ch, k - k.min(ref_count.get(ch).copied().unwrap_or(0)))).collect();
    let mut search = ChunkSearch {
        cand: candidate,
        reference,
        slack,
        skipped: HashMap::new(),
        used: vec![0u64; reference.len().div_ceil(64)],
        memo: HashMap::new(),
    };
    (matches, search.min_chunks(0, None))
}

struct ChunkSearch<'a> {
    cand: &'a [char],
    reference: &'a [char],
    slack: HashMap<char, usize>,
    skipped: HashMap<char, usize>,
    used: Vec<u64>,
    memo: HashMap<(usize, Option<usize>, Vec<u64>), usize>,
}

impl ChunkSearch<'_> {
    fn is_used(&self, j: usize) -> bool {
        self.used[j / 64] >> (j % 64) & 1 == 1
    }

    fn toggle(&mut self, j: usize) {
        self.used[j / 64] ^= 1 << (j % 64);
    }

    /// Fewest chunks for candidate positions `i..`, where `prev` is the
    /// reference position matched by candidate `i - 1`.
    fn min_chunks(&mut self, i: usize, prev: Option<usize>) -> usize {
        if i == self.cand.len() {
            return 0;
        }
        let key = (i, prev, self.used.clone());
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let ch = self.cand[i];
        let mut best = usize::MAX;
        for j in 0..self.reference.len() {
            if self.reference[j] != ch || self.is_used(j) {
                continue;
            }
            let continues = prev.is_some_and(|p| p + 1 == j);
            self.toggle(j);
            let rest = self.min_chunks(i + 1, Some(j));
            self.toggle(j);
            best = best.min(rest + usize::from(!continues));
        }
        let skipped = self.skipped.get(&ch).copied().unwrap_or(0);
        if skipped < self.slack.get(&ch).copied().unwrap_or(0) {
            *self.skipped.entry(ch).or_insert(0) += 1;
            best = best.min(self.min_chunks(i + 1, None));
            *self.skipped.get_mut(&ch).expect("just inserted") -= 1;
        }
        self.memo.insert(key, best);
        best
    }
}

/// METEOR with exact character matching only: recall-weighted F-mean
/// `10PR / (R + 9P)` times `1 - 0.5 (chunks / matches)^3`.
pub fn meteor_exact(candidate: &str, reference: &str) -> f64 {
    let c: Vec<char> = candidate.chars().collect();
    let r: Vec<char> = reference.chars().collect();
    let (m, chunks) = align(&c, &r);
    meteor_from_alignment(m, chunks, c.len(), r.len())
}

pub(crate) fn meteor_from_alignment(m: usize, chunks: usize, c_len: usize, r_len: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / c_len as f64;
    let r = m as f64 / r_len as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    fmean * (1.0 - penalty)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub bleu: f64,
    pub meteor: f64,
    /// The candidate was empty after optional stripping.
    pub empty_candidate: bool,
}

pub fn score_pair(candidate: &str, reference: &str, strip: bool) -> PairScore {
    let (c, r) = if strip { (strip_gloss(candidate), strip_gloss(reference)) } else { (candidate, reference) };
    PairScore { bleu: bleu(c, r), meteor: meteor_exact(c, r), empty_candidate: c.is_empty() }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorSource {
    /// The first example sentence's pooled vector.
    #[default]
    FirstExample,
    /// Mean of the pooled vectors of all example sentences.
    MeanOfExamples,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub vector: VectorSource,
    pub max_new_tokens: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { vector: VectorSource::FirstExample, max_new_tokens: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub sense_id: String,
    pub pos: PosCategory,
    pub generated: String,
    pub reference: String,
    pub truncated: bool,
    /// Scores with the POS label and final period stripped.
    pub stripped: PairScore,
    /// Scores on the full target strings.
    pub raw: PairScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    /// A category name, or `all` for the overall row.
    pub pos: String,
    pub n_items: usize,
    pub bleu_mean: f64,
    pub bleu_se: f64,
    pub meteor_mean: f64,
    pub meteor_se: f64,
    /// `n_items == 1`, so the standard errors are 0 by convention.
    pub se_degenerate: bool,
}

/// Rows per category present (in [`PosCategory::ALL`] order) plus `all`.
pub fn aggregate(items: &[(PosCategory, PairScore)]) -> Vec<MetricRow> {
    let row = |name: &str, scores: &[PairScore]| {
        let b: Vec<f64> = scores.iter().map(|s| s.bleu).collect();
        let m: Vec<f64> = scores.iter().map(|s| s.meteor).collect();
        MetricRow {
            pos: name.to_string(),
            n_items: scores.len(),
            bleu_mean: mean(&b).unwrap_or(0.0),
            bleu_se: standard_error(&b),
            meteor_mean: mean(&m).unwrap_or(0.0),
            meteor_se: standard_error(&m),
            se_degenerate: scores.len() == 1,
        }
    };
    let mut by_pos: BTreeMap<PosCategory, Vec<PairScore>> = BTreeMap::new();
    for (pos, s) in items {
        by_pos.entry(*pos).or_default().push(*s);
    }
    let mut rows = Vec::new();
    for pos in PosCategory::ALL {
        match by_pos.get(&pos) {
            Some(scores) => rows.push(row(pos.as_str(), scores)),
            None if !items.is_empty() => log::warn!("no evaluation items for POS {pos}; row omitted"),
            None => {}
        }
    }
    if !items.is_empty() {
        let all: Vec<PairScore> = items.iter().map(|(_, s)| *s).collect();
        rows.push(row("all", &all));
    }
    rows
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub items: Vec<ItemResult>,
    pub stripped: Vec<MetricRow>,
    pub raw: Vec<MetricRow>,
}

impl EvalTable {
    pub fn overall(&self, stripped: bool) -> &MetricRow {
        let rows = if stripped { &self.stripped } else { &self.raw };
        rows.last().expect("non-empty table")
    }

    /// Tab-separated table with a `scoring` column for both modes.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("scoring\tpos\tn_items\tbleu_mean\tbleu_se\tmeteor_mean\tmeteor_se\n");
        for (mode, rows) in [("stripped", &self.stripped), ("raw", &self.raw)] {
            for r in rows {
                out.push_str(&format!(
                    "{mode}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                    r.pos, r.n_items, r.bleu_mean, r.bleu_se, r.meteor_mean, r.meteor_se
                ));
            }
        }
        out
    }

    /// One JSON object per evaluated sense.
    pub fn items_jsonl(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&serde_json::to_string(item).expect("serializable"));
            out.push('\n');
        }
        out
    }

    /// One JSON object per row, tagged with its scoring mode.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Tagged<'a> {
            scoring: &'a str,
            #[serde(flatten)]
            row: &'a MetricRow,
        }
        let mut out = String::new();
        for (scoring, rows) in [("stripped", &self.stripped), ("raw", &self.raw)] {
            for row in rows {
                out.push_str(&serde_json::to_string(&Tagged { scoring, row }).expect("serializable"));
                out.push('\n');
            }
        }
        out
    }
}

/// Semantic vector of a sense under the chosen example policy.
pub fn sense_vector<T: Real>(model: &Model<T>, sense: &Sense, tokenizer: &Tokenizer, source: VectorSource) -> Result<SemanticVector<T>> {
    let examples = match source {
        VectorSource::FirstExample => sense.examples.get(..1).unwrap_or_default(),
        VectorSource::MeanOfExamples => &sense.examples[..],
    };
    if examples.is_empty() {
        return Err(Error::InvalidInput(format!("{} has no example sentences", sense.sense_id)));
    }
    let vs = examples
        .iter()
        .map(|e| {
            let inst = build_instance(sense, e, tokenizer)?;
            model.semantic_vector(&inst.input_ids, &inst.target_mask)
        })
        .collect::<Result<Vec<_>>>()?;
    SemanticVector::mean(&vs)
}

/// Greedy generation per sense, scored against `pos。gloss。`.
pub fn eval_by_pos<T: Real>(model: &Model<T>, senses: &[Sense], tokenizer: &Tokenizer, options: &EvalOptions) -> Result<EvalTable> {
    if senses.is_empty() {
        return Err(Error::InvalidInput("empty evaluation set".into()));
    }
    let mut items = Vec::with_capacity(senses.len());
    for sense in senses {
        if sense.examples.is_empty() {
            log::warn!("{} has no example sentences; skipped", sense.sense_id);
            continue;
        }
        let v = sense_vector(model, sense, tokenizer, options.vector)?;
        let g = model.generate(&v, options.max_new_tokens)?;
        let generated = tokenizer.decode(&g.ids);
        let reference = crate::pipeline::target_text(sense);
        items.push(ItemResult {
            sense_id: sense.sense_id.clone(),
            pos: sense.category(),
            stripped: score_pair(&generated, &reference, true),
            raw: score_pair(&generated, &reference, false),
            generated,
            reference,
            truncated: g.truncated,
        });
    }
    if items.is_empty() {
        return Err(Error::InvalidInput("no evaluable senses".into()));
    }
    let pick = |f: fn(&ItemResult) -> PairScore| items.iter().map(|i| (i.pos, f(i))).collect::<Vec<_>>();
    Ok(EvalTable { stripped: aggregate(&pick(|i| i.stripped)), raw: aggregate(&pick(|i| i.raw)), items })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Occurrences of `g` in `s`, by direct scanning.
    fn occurrences(s: &[char], g: &[char]) -> usize {
        (0..s.len()).filter(|&i| i + g.len() <= s.len() && s[i..i + g.len()] == *g).count()
    }

    fn bleu_oracle(c: &str, r: &str) -> f64 {
        let c: Vec<char> = c.chars().collect();
        let r: Vec<char> = r.chars().collect();
        let mut precisions = Vec::new();
        for n in 1..=4usize {
            let mut seen: Vec<&[char]> = Vec::new();
            let mut matched = 0;
            let mut total = 0;
            for i in 0..c.len() {
                if i + n > c.len() {
                    break;
                }
                total += 1;
                let g = &c[i..i + n];
                if !seen.contains(&g) {
                    seen.push(g);
                    matched += occurrences(&c, g).min(occurrences(&r, g));
                }
            }
            precisions.push(if n == 1 { matched as f64 / total as f64 } else { (matched as f64 + 1.0) / (total as f64 + 1.0) });
        }
        if precisions[0] == 0.0 {
            return 0.0;
        }
        let geo = precisions.iter().product::<f64>().powf(0.25);
        let bp = if c.len() > r.len() { 1.0 } else { (1.0 - r.len() as f64 / c.len() as f64).exp() };
        bp * geo
    }

    /// Every alignment by exhaustive enumeration: max matches, then min chunks.
    fn meteor_oracle(c: &str, r: &str) -> f64 {
        fn go(c: &[char], r: &[char], i: usize, used: &mut Vec<bool>, map: &mut Vec<Option<usize>>, best: &mut (usize, usize)) {
            if i == c.len() {
                let m = map.iter().flatten().count();
                let mut chunks = 0;
                for k in 0..map.len() {
                    if let Some(j) = map[k] {
                        let cont = k > 0 && map[k - 1].is_some_and(|p| p + 1 == j);
                        if !cont {
                            chunks += 1;
                        }
                    }
                }
                if m > best.0 || (m == best.0 && chunks < best.1) {
                    *best = (m, chunks);
                }
                return;
            }
            map.push(None);
            go(c, r, i + 1, used, map, best);
            map.pop();
            for j in 0..r.len() {
                if !used[j] && r[j] == c[i] {
                    used[j] = true;
                    map.push(Some(j));
                    go(c, r, i + 1, used, map, best);
                    map.pop();
                    used[j] = false;
                }
            }
        }
        let c: Vec<char> = c.chars().collect();
        let r: Vec<char> = r.chars().collect();
        let mut best = (0, usize::MAX);
        go(&c, &r, 0, &mut vec![false; r.len()], &mut Vec::new(), &mut best);
        if best.0 == 0 {
            return 0.0;
        }
        let (m, ch) = (best.0 as f64, best.1 as f64);
        let p = m / c.len() as f64;
        let rr = m / r.len() as f64;
        (10.0 * p * rr / (rr + 9.0 * p)) * (1.0 - 0.5 * (ch / m).powi(3))
    }

    fn random_pairs(seed: u64, max_len: usize) -> Vec<(String, String)> {
        let pool: Vec<char> = "的是用於以表示器具動作。".chars().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = |rng: &mut ChaCha8Rng| {
            let n = rng.random_range(1..=max_len);
            (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect::<String>()
        };
        (0..20).map(|_| (s(&mut rng), s(&mut rng))).collect()
    }

    #[test]
    fn bleu_matches_counting_oracle() {
        for (c, r) in random_pairs(1, 20) {
            assert!((bleu(&c, &r) - bleu_oracle(&c, &r)).abs() < 1e-9, "{c} / {r}");
        }
    }

    #[test]
    fn meteor_matches_alignment_oracle() {
        for (c, r) in random_pairs(2, 12) {
            assert!((meteor_exact(&c, &r) - meteor_oracle(&c, &r)).abs() < 1e-9, "{c} / {r}");
        }
    }

    #[test]
    fn identities_and_edges() {
        for x in ["進行會議。", "語", "透過發聲器官，用語音傳送訊息。"] {
            assert_eq!(bleu(x, x), 1.0);
        }
        assert_eq!(score_pair("進行會議。", "進行會議。", true).bleu, 1.0);
        assert_eq!(meteor_exact("語", "語"), 0.5);
        let long = "透過發聲器官用語音傳送訊息";
        let m = long.chars().count() as f64;
        assert!((meteor_exact(long, long) - (1.0 - 0.5 / m.powi(3))).abs() < 1e-12);
        assert_eq!(meteor_exact("甲乙", "丙丁"), 0.0);
        assert_eq!(bleu("", "語"), 0.0);
        let s = score_pair("VA。", "VA。說話。", true);
        assert!(s.empty_candidate && s.bleu == 0.0);
    }

    #[test]
    fn stripping() {
        assert_eq!(strip_gloss("VA。透過發聲器官。"), "透過發聲器官");
        assert_eq!(strip_gloss("透過發聲器官。"), "透過發聲器官");
        assert_eq!(strip_gloss("他說。好。"), "他說。好");
    }

    #[test]
    fn aggregation() {
        let s = |b, m| PairScore { bleu: b, meteor: m, empty_candidate: false };
        let items = vec![
            (PosCategory::N, s(1.0, 0.5)),
            (PosCategory::N, s(0.5, 0.5)),
            (PosCategory::V, s(0.2, 0.1)),
        ];
        let rows = aggregate(&items);
        assert_eq!(rows.iter().map(|r| r.pos.as_str()).collect::<Vec<_>>(), ["N", "V", "all"]);
        assert!(rows[1].se_degenerate && rows[1].bleu_se == 0.0);
        let weighted = (rows[0].bleu_mean * 2.0 + rows[1].bleu_mean) / 3.0;
        assert!((rows[2].bleu_mean - weighted).abs() < 1e-12);
        assert!((rows[0].bleu_se - 0.25).abs() < 1e-12);
        let mut rev = items.clone();
        rev.reverse();
        for (a, b) in aggregate(&rev).iter().zip(&rows) {
            assert_eq!((&a.pos, a.n_items), (&b.pos, b.n_items));
            assert!((a.bleu_mean - b.bleu_mean).abs() < 1e-12 && (a.meteor_se - b.meteor_se).abs() < 1e-12);
        }
    }
}
