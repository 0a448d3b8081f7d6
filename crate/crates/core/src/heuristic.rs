//! Rule-cascade baseline and the two evaluation oracles.
//!
//! The baseline applies four rules in order:
//!
//! 1. phrase match: lexicon nouns/verbs/apps restrict the candidate categories;
//! 2. location match: an ordinal or positional word picks a candidate in
//!    reading order;
//! 3. label match: the screen text with the highest word overlap with the
//!    request selects its nearest candidate;
//! 4. otherwise every remaining candidate scores the same.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{default_stopwords, word_overlap_counts};
use crate::screen::{center_distance, is_digit_token, Entity, EntityCategory, ReferenceType, Request, Sample, Screen};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryKeywords {
    pub nouns: Vec<String>,
    pub verbs: Vec<String>,
    pub apps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordLexicon {
    /// Tie order for categories hit by the same kind of keyword.
    pub priority: Vec<EntityCategory>,
    pub categories: BTreeMap<EntityCategory, CategoryKeywords>,
}

impl Default for KeywordLexicon {
    fn default() -> Self {
        serde_json::from_str(include_str!("../data/lexicon.json")).expect("bundled lexicon is valid")
    }
}

impl KeywordLexicon {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let lex: Self = crate::io::read_json(path)?;
        lex.validate()?;
        Ok(lex)
    }

    pub fn validate(&self) -> Result<()> {
        for cat in EntityCategory::ALL {
            let ok = self.categories.get(&cat).is_some_and(|k| !k.nouns.is_empty() && !k.verbs.is_empty());
            if !ok {
                return Err(Error::Config(format!("lexicon needs a noun and a verb for {cat}")));
            }
        }
        Ok(())
    }

    fn rank(&self, cat: EntityCategory) -> usize {
        self.priority.iter().position(|c| *c == cat).unwrap_or(self.priority.len() + cat.index())
    }
}

/// Categories indicated by lexicon words, in lexicon priority order.
///
/// Nouns decide when any noun matches; otherwise verbs, otherwise apps.
pub fn match_category_keywords(request: &Request, lexicon: &KeywordLexicon) -> Vec<EntityCategory> {
    let mut cats: Vec<EntityCategory> = lexicon.categories.keys().copied().collect();
    cats.sort_by_key(|c| lexicon.rank(*c));
    let has = |words: &[String]| words.iter().any(|w| request.tokens.contains(w));
    let kinds: [fn(&CategoryKeywords) -> &[String]; 3] = [|k| &k.nouns, |k| &k.verbs, |k| &k.apps];
    for pick in kinds {
        let hits: Vec<EntityCategory> =
            cats.iter().copied().filter(|c| has(pick(&lexicon.categories[c]))).collect();
        if !hits.is_empty() {
            return hits;
        }
    }
    Vec::new()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionalSpec {
    Ordinal(usize),
    Top,
    Bottom,
    Middle,
    Last,
}

const ORDINAL_WORDS: [&str; 10] =
    ["first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth"];

/// First ordinal or positional word of the request.
pub fn parse_positional(request: &Request) -> Option<PositionalSpec> {
    let t = &request.tokens;
    for (i, tok) in t.iter().enumerate() {
        if let Some(k) = ORDINAL_WORDS.iter().position(|w| w == tok) {
            return Some(PositionalSpec::Ordinal(k + 1));
        }
        match tok.as_str() {
            "top" => return Some(PositionalSpec::Top),
            "bottom" => return Some(PositionalSpec::Bottom),
            "middle" => return Some(PositionalSpec::Middle),
            "last" => return Some(PositionalSpec::Last),
            _ => {}
        }
        if is_digit_token(tok) {
            let suffix = t.get(i + 1).map(String::as_str);
            if let (Ok(k @ 1..=10), Some("st" | "nd" | "rd" | "th")) = (tok.parse::<usize>(), suffix) {
                return Some(PositionalSpec::Ordinal(k));
            }
        }
    }
    None
}

/// Sorts entities top-to-bottom, then left-to-right.
pub fn reading_order<'a>(candidates: &[&'a Entity]) -> Vec<&'a Entity> {
    let mut v = candidates.to_vec();
    v.sort_by(|a, b| {
        a.bbox.y.total_cmp(&b.bbox.y).then(a.bbox.x.total_cmp(&b.bbox.x)).then(a.id.cmp(&b.id))
    });
    v
}

pub fn apply_positional<'a>(spec: PositionalSpec, candidates: &[&'a Entity]) -> Result<&'a Entity> {
    if candidates.is_empty() {
        return Err(Error::NoCandidates);
    }
    let sorted = reading_order(candidates);
    let n = sorted.len();
    let idx = match spec {
        PositionalSpec::Ordinal(k) if k == 0 || k > n => {
            return Err(Error::OutOfRange { ordinal: k, len: n })
        }
        PositionalSpec::Ordinal(k) => k - 1,
        PositionalSpec::Top => 0,
        PositionalSpec::Bottom | PositionalSpec::Last => n - 1,
        PositionalSpec::Middle => n / 2,
    };
    Ok(sorted[idx])
}

fn nearest<'a>(candidates: &[&'a Entity], text_box: &crate::screen::BBox) -> Option<&'a Entity> {
    candidates.iter().copied().min_by(|a, b| {
        center_distance(&a.bbox, text_box)
            .total_cmp(&center_distance(&b.bbox, text_box))
            .then(a.id.cmp(&b.id))
    })
}

/// The candidate closest to the screen text that best matches the request.
///
/// Texts that are candidates' own texts are only considered when no other
/// text overlaps the request.
pub fn label_match<'a>(
    request: &Request,
    screen: &Screen,
    candidates: &[&'a Entity],
    stopwords: &HashSet<String>,
) -> Option<&'a Entity> {
    let own: BTreeSet<u32> = candidates.iter().map(|c| c.ocr_text_id).collect();
    for use_own in [false, true] {
        let mut best: Option<(usize, usize, &crate::screen::OcrText)> = None;
        for t in screen.ocr_texts.iter().filter(|t| own.contains(&t.id) == use_own) {
            let (hits, total) = word_overlap_counts(&request.tokens, &t.text, stopwords);
            if hits == 0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((bh, bt, bt_text)) => {
                    // compare hits/total exactly, then hits, then lower id
                    let lhs = hits * bt;
                    let rhs = bh * total;
                    lhs > rhs || (lhs == rhs && (hits > bh || (hits == bh && t.id < bt_text.id)))
                }
            };
            if better {
                best = Some((hits, total, t));
            }
        }
        if let Some((_, _, t)) = best {
            return nearest(candidates, &t.bbox);
        }
    }
    None
}

/// Which rule produced the heuristic scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Location,
    Label,
    Uniform,
}

#[derive(Debug, Clone)]
pub struct HeuristicResolver {
    pub lexicon: KeywordLexicon,
    pub stopwords: HashSet<String>,
}

impl Default for HeuristicResolver {
    fn default() -> Self {
        Self { lexicon: KeywordLexicon::default(), stopwords: default_stopwords().clone() }
    }
}

impl HeuristicResolver {
    pub fn new(lexicon: KeywordLexicon, stopwords: HashSet<String>) -> Self {
        Self { lexicon, stopwords }
    }

    /// Per-candidate scores in `sample.candidates` order.
    pub fn resolve(&self, request: &Request, sample: &Sample) -> Result<Vec<f64>> {
        self.resolve_explained(request, sample).map(|(s, _)| s)
    }

    pub fn resolve_explained(&self, request: &Request, sample: &Sample) -> Result<(Vec<f64>, Rule)> {
        if sample.candidates.is_empty() {
            return Err(Error::NoCandidates);
        }
        let cats = match_category_keywords(request, &self.lexicon);
        let mut filtered: Vec<&Entity> =
            sample.candidates.iter().filter(|c| cats.contains(&c.category)).collect();
        if filtered.is_empty() {
            filtered = sample.candidates.iter().collect();
        }
        let one_hot = |chosen: &Entity| -> Vec<f64> {
            sample.candidates.iter().map(|c| if c.id == chosen.id { 1.0 } else { 0.0 }).collect()
        };

        if let Some(spec) = parse_positional(request) {
            if let Ok(e) = apply_positional(spec, &filtered) {
                return Ok((one_hot(e), Rule::Location));
            }
        }
        if let Some(screen) = &sample.screen {
            if let Some(e) = label_match(request, screen, &filtered, &self.stopwords) {
                return Ok((one_hot(e), Rule::Label));
            }
        }
        let share = 1.0 / filtered.len() as f64;
        let ids: BTreeSet<u32> = filtered.iter().map(|e| e.id).collect();
        let scores =
            sample.candidates.iter().map(|c| if ids.contains(&c.id) { share } else { 0.0 }).collect();
        Ok((scores, Rule::Uniform))
    }
}

/// Scores 1.0 for every candidate of a gold category.
pub fn category_oracle(sample: &Sample) -> Vec<f64> {
    let gold = sample.gold_categories();
    sample.candidates.iter().map(|c| if gold.contains(&c.category) { 1.0 } else { 0.0 }).collect()
}

/// Knows category-level and ordinal references; behaves like
/// [`category_oracle`] for references that need screen text.
pub fn no_text_oracle(sample: &Sample) -> Result<Vec<f64>> {
    match sample.reference_type {
        None => Err(Error::Unsupported("sample has no reference type metadata".into())),
        Some(ReferenceType::Ordinal) => Ok(sample
            .candidates
            .iter()
            .map(|c| if sample.gold_ids.contains(&c.id) { 1.0 } else { 0.0 })
            .collect()),
        Some(_) => Ok(category_oracle(sample)),
    }
}
