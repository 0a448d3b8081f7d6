//! Deterministic synthetic corpus.
//!
//! Two subsets are generated from one seeded ChaCha stream:
//!
//! - category-level: requests such as "call this number" paired with five
//!   dummy candidates, one per category;
//! - descriptive: screens with several same-category entities and requests
//!   that single one out by label, position, full text or a fragment.

mod check;
mod config;
mod layout;
mod values;

pub use check::{card_label, resolve_reference, symbolic_target};
pub use config::*;
pub use layout::{generate_screen, GeneratedScreen};
pub use values::{contains_part, Value};

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detect::Gazetteer;
use crate::error::{Error, Result};
use crate::heuristic::reading_order;
use crate::io::{read_ndjson, write_json, write_ndjson};
use crate::screen::{BBox, Entity, EntityCategory, ReferenceType, Request, Sample, Subset};

/// Attempts per request before giving up on finding a new one.
const MAX_ATTEMPTS: usize = 2000;

const ORDINALS: [&str; 10] =
    ["first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth"];

fn canonical_text(cat: EntityCategory) -> &'static str {
    match cat {
        EntityCategory::PhoneNumber => "555-0100",
        EntityCategory::EmailAddress => "user@example.com",
        EntityCategory::Url => "https://example.com",
        EntityCategory::Address => "1 Main St Springfield",
        EntityCategory::DateTime => "tomorrow 5pm",
    }
}

/// One dummy entity per category, ids in category order.
pub fn dummy_candidates() -> Vec<Entity> {
    EntityCategory::ALL
        .iter()
        .enumerate()
        .map(|(i, &category)| Entity {
            id: i as u32,
            ocr_text_id: i as u32,
            text: canonical_text(category).to_string(),
            bbox: BBox::ZERO,
            category,
        })
        .collect()
}

fn choose<'a, R: Rng>(rng: &mut R, v: &'a [String]) -> &'a str {
    v.choose(rng).map(String::as_str).unwrap_or("")
}

fn compose(prefix: &str, body: &str, suffix: &str) -> String {
    [prefix, body, suffix].iter().filter(|s| !s.is_empty()).copied().collect::<Vec<_>>().join(" ")
}

/// Draws a category-level sample whose raw request is not in `used`.
pub fn generate_category_sample<R: Rng>(
    rng: &mut R,
    config: &GeneratorConfig,
    used: &mut HashSet<String>,
    id: &str,
) -> Result<Sample> {
    let banks = &config.template_banks;
    for _ in 0..MAX_ATTEMPTS {
        let multi: Vec<&CategoryBank> = banks.category.iter().filter(|b| b.multilabel).collect();
        let single: Vec<&CategoryBank>;
        let pool = if !multi.is_empty() && rng.gen_bool(config.multilabel_fraction) {
            &multi
        } else {
            let cat = EntityCategory::ALL[rng.gen_range(0..5)];
            single = banks.category.iter().filter(|b| !b.multilabel && b.categories == [cat]).collect();
            &single
        };
        let bank = *pool.choose(rng).ok_or_else(|| Error::Config("empty template bank".into()))?;
        let reference = choose(rng, &bank.refs).to_string();
        let body = choose(rng, &bank.actions).replace("{ref}", &reference);
        let prefix = if rng.gen_bool(0.35) { choose(rng, &banks.prefixes) } else { "" };
        let suffix = if rng.gen_bool(0.5) { choose(rng, &banks.suffixes) } else { "" };
        let raw = compose(prefix, &body, suffix);
        if !used.insert(raw.clone()) {
            continue;
        }
        let candidates = dummy_candidates();
        let gold_ids = bank.categories.iter().map(|c| c.index() as u32).collect();
        return Ok(Sample {
            request: Request::new(id, raw)?,
            screen: None,
            candidates,
            gold_ids,
            supervision_tag: None,
            subset: Subset::CategoryLevel,
            reference_type: Some(ReferenceType::Category),
            reference: Some(reference),
        });
    }
    Err(Error::ExhaustedTemplates { reached: used.len(), wanted: config.n_category_samples })
}

/// Positional words that single out `target` among its same-category peers.
pub fn ordinal_words(target: &Entity, peers: &[Entity]) -> Vec<String> {
    let same: Vec<&Entity> = peers.iter().filter(|e| e.category == target.category).collect();
    let sorted = reading_order(&same);
    let n = sorted.len();
    let Some(i) = sorted.iter().position(|e| e.id == target.id) else { return Vec::new() };
    let gap_above = i.checked_sub(1).map(|j| sorted[i].bbox.y - sorted[j].bbox.y);
    let gap_below = sorted.get(i + 1).map(|e| e.bbox.y - sorted[i].bbox.y);
    let clear = |gap: Option<f64>| gap.is_none_or(|g| g > target.bbox.h);
    let mut words = Vec::new();
    if i < ORDINALS.len() {
        words.push(ORDINALS[i].to_string());
        let suffix = match i + 1 {
            1 => "st",
            2 => "nd",
            3 => "rd",
            _ => "th",
        };
        words.push(format!("{}{suffix}", i + 1));
    }
    if i == 0 && clear(gap_below) {
        words.push("top".into());
    }
    if i + 1 == n {
        words.push("last".into());
        if clear(gap_above) {
            words.push("bottom".into());
        }
    }
    if n >= 3 && n % 2 == 1 && i == n / 2 && clear(gap_above) && clear(gap_below) {
        words.push("middle".into());
    }
    words
}

fn fill_reference<R: Rng>(
    rng: &mut R,
    config: &GeneratorConfig,
    gs: &GeneratedScreen,
    target: &Entity,
    kind: ReferenceType,
) -> Option<String> {
    let bank = config.template_banks.descriptive.get(&target.category)?;
    let template = choose(rng, bank.refs(kind));
    let slot = match kind {
        ReferenceType::Label => gs.labels.get(&target.id)?.to_lowercase(),
        ReferenceType::FullText => target.text.to_lowercase(),
        ReferenceType::Ordinal => {
            let words = ordinal_words(target, &gs.screen.entities);
            words.choose(rng)?.clone()
        }
        ReferenceType::PartialValue => {
            let part = gs.parts.get(&target.id)?;
            let holders = gs
                .screen
                .entities
                .iter()
                .filter(|e| e.category == target.category && contains_part(&e.text, part))
                .count();
            if holders != 1 {
                return None;
            }
            part.to_lowercase()
        }
        ReferenceType::Category => return None,
    };
    let filled = ["{label}", "{ordinal}", "{value}", "{part}"]
        .iter()
        .fold(template.to_string(), |t, slot_name| t.replace(slot_name, &slot));
    Some(filled)
}

fn draw_kind<R: Rng>(rng: &mut R, mix: &[(ReferenceType, f64)]) -> Option<ReferenceType> {
    let total: f64 = mix.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return None;
    }
    let mut x = rng.gen_range(0.0..total);
    for &(kind, w) in mix {
        if x < w {
            return Some(kind);
        }
        x -= w;
    }
    mix.last().map(|(k, _)| *k)
}

/// Draws a request for `target` on a generated screen.
///
/// The reference type follows the configured mix among the types the
/// target supports; the sample is kept only if its reference resolves
/// symbolically to the target alone.
pub fn generate_descriptive_sample<R: Rng>(
    rng: &mut R,
    config: &GeneratorConfig,
    gs: &GeneratedScreen,
    target: u32,
    used: &mut HashSet<String>,
    id: &str,
) -> Result<Sample> {
    let entity = gs
        .screen
        .entities
        .iter()
        .find(|e| e.id == target)
        .ok_or_else(|| Error::Config(format!("target {target} is not on screen {}", gs.screen.id)))?;
    let banks = &config.template_banks;
    let bank = banks
        .descriptive
        .get(&entity.category)
        .ok_or_else(|| Error::Config(format!("no descriptive templates for {}", entity.category)))?;
    let mut mix = config.reference_mix.weighted().to_vec();
    for _ in 0..MAX_ATTEMPTS {
        let Some(kind) = draw_kind(rng, &mix) else { break };
        let Some(reference) = fill_reference(rng, config, gs, entity, kind) else {
            mix.retain(|(k, _)| *k != kind);
            continue;
        };
        let body = choose(rng, &bank.actions).replace("{ref}", &reference);
        let prefix = if rng.gen_bool(0.2) { choose(rng, &banks.prefixes) } else { "" };
        let suffix = if rng.gen_bool(0.3) { choose(rng, &banks.suffixes) } else { "" };
        let raw = compose(prefix, &body, suffix);
        if used.contains(&raw) {
            continue;
        }
        let sample = Sample {
            request: Request::new(id, raw.clone())?,
            screen: Some(gs.screen.clone()),
            candidates: gs.screen.entities.clone(),
            gold_ids: BTreeSet::from([target]),
            supervision_tag: None,
            subset: Subset::Descriptive,
            reference_type: Some(kind),
            reference: Some(reference),
        };
        if symbolic_target(banks, &sample) != Some(target) {
            mix.retain(|(k, _)| *k != kind);
            continue;
        }
        used.insert(raw);
        return Ok(sample);
    }
    Err(Error::ExhaustedTemplates { reached: used.len(), wanted: config.requests_per_screen })
}

/// Train, validation and test samples of both subsets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

impl Corpus {
    pub fn split(&self, name: &str) -> Option<&[Sample]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    /// Reads `train.ndjson`, `val.ndjson` and `test.ndjson` from `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Self {
            train: read_ndjson(dir.join("train.ndjson"))?,
            val: read_ndjson(dir.join("val.ndjson"))?,
            test: read_ndjson(dir.join("test.ndjson"))?,
        })
    }

    pub fn write(&self, dir: impl AsRef<Path>, report: &CorpusReport) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_ndjson(dir.join("train.ndjson"), &self.train)?;
        write_ndjson(dir.join("val.ndjson"), &self.val)?;
        write_ndjson(dir.join("test.ndjson"), &self.test)?;
        write_json(dir.join("stats.json"), report)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_requests: usize,
    pub unique_requests: usize,
    pub multilabel_count: usize,
    pub tokens_per_request: f64,
    pub tokens_per_reference: f64,
    pub screen_count: usize,
}

impl CorpusStats {
    pub fn compute<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Self {
        let mut s = CorpusStats::default();
        let mut raws = HashSet::new();
        let mut screens = HashSet::new();
        let (mut tok, mut ref_tok, mut n_ref) = (0usize, 0usize, 0usize);
        for x in samples {
            s.total_requests += 1;
            raws.insert(x.request.raw.as_str());
            if x.gold_ids.len() > 1 {
                s.multilabel_count += 1;
            }
            tok += x.request.tokens.len();
            if let Some(r) = &x.reference {
                ref_tok += crate::screen::split_tokens(r).len();
                n_ref += 1;
            }
            if let Some(sc) = &x.screen {
                screens.insert(sc.id.as_str());
            }
        }
        s.unique_requests = raws.len();
        s.screen_count = screens.len();
        if s.total_requests > 0 {
            s.tokens_per_request = tok as f64 / s.total_requests as f64;
        }
        if n_ref > 0 {
            s.tokens_per_reference = ref_tok as f64 / n_ref as f64;
        }
        s
    }
}

/// Per-subset statistics, overall and per split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub category_level: CorpusStats,
    pub descriptive: CorpusStats,
    pub splits: BTreeMap<String, BTreeMap<String, CorpusStats>>,
}

impl CorpusReport {
    pub fn compute(corpus: &Corpus) -> Self {
        let by = |subset: Subset| CorpusStats::compute(corpus.all().filter(|s| s.subset == subset));
        let mut splits = BTreeMap::new();
        for name in SPLITS {
            let samples = corpus.split(name).unwrap_or_default();
            let per: BTreeMap<String, CorpusStats> = Subset::ALL
                .iter()
                .map(|&sub| {
                    (sub.as_str().to_string(), CorpusStats::compute(samples.iter().filter(|s| s.subset == sub)))
                })
                .collect();
            splits.insert(name.to_string(), per);
        }
        Self { category_level: by(Subset::CategoryLevel), descriptive: by(Subset::Descriptive), splits }
    }

    pub fn subset(&self, subset: Subset) -> &CorpusStats {
        match subset {
            Subset::CategoryLevel => &self.category_level,
            Subset::Descriptive => &self.descriptive,
        }
    }
}

fn split_80_10_10<T>(mut items: Vec<T>, rng: &mut ChaCha8Rng) -> [Vec<T>; 3] {
    items.shuffle(rng);
    let n = items.len();
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let test = items.split_off(n_train + n_val);
    let val = items.split_off(n_train);
    [items, val, test]
}

/// Tags training samples for module supervision, up to the configured caps.
///
/// Label references also need the category module (a card can hold values
/// of several categories), so they are tagged only once the purely textual
/// references are used up.
fn assign_supervision(train: &mut [Sample], caps: &SupervisionCounts) {
    let mut left = [caps.category, caps.location, caps.text];
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.sort_by_key(|&i| train[i].reference_type == Some(ReferenceType::Label));
    for i in order {
        let s = &mut train[i];
        let Some(tag) = s.reference_type.map(ReferenceType::supervision_tag) else { continue };
        let slot = &mut left[tag.module_index()];
        if *slot > 0 {
            *slot -= 1;
            s.supervision_tag = Some(tag);
        }
    }
}

/// Generates the full corpus. Identical configs give identical corpora.
pub fn generate_corpus(config: &GeneratorConfig) -> Result<(Corpus, CorpusReport)> {
    config.validate()?;
    let gazetteer = Gazetteer::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut used = HashSet::new();
    let mut category = Vec::with_capacity(config.n_category_samples);
    for i in 0..config.n_category_samples {
        category.push(generate_category_sample(&mut rng, config, &mut used, &format!("cat-{i:05}"))?);
    }

    let mut screens: Vec<Vec<Sample>> = Vec::with_capacity(config.n_descriptive_screens);
    let mut used = HashSet::new();
    let max_same = config.layout_spec.max_same_category;
    for i in 0..config.n_descriptive_screens {
        let cat = EntityCategory::ALL[rng.gen_range(0..5)];
        let n_same = rng.gen_range(2..=max_same);
        let gs = generate_screen(&mut rng, config, &gazetteer, cat, n_same, &format!("screen-{i:04}"))?;
        let peers: Vec<u32> = gs.screen.entities.iter().filter(|e| e.category == cat).map(|e| e.id).collect();
        let target = *peers.choose(&mut rng).expect("n_same >= 2");
        let mut group = Vec::with_capacity(config.requests_per_screen);
        for k in 0..config.requests_per_screen {
            let id = format!("desc-{i:04}-{k}");
            group.push(generate_descriptive_sample(&mut rng, config, &gs, target, &mut used, &id)?);
        }
        screens.push(group);
    }

    let [cat_train, cat_val, cat_test] = split_80_10_10(category, &mut rng);
    let [d_train, d_val, d_test] = split_80_10_10(screens, &mut rng);
    let mut corpus = Corpus {
        train: cat_train.into_iter().chain(d_train.into_iter().flatten()).collect(),
        val: cat_val.into_iter().chain(d_val.into_iter().flatten()).collect(),
        test: cat_test.into_iter().chain(d_test.into_iter().flatten()).collect(),
    };
    corpus.train.shuffle(&mut rng);
    assign_supervision(&mut corpus.train, &config.supervision_counts);
    let report = CorpusReport::compute(&corpus);
    Ok((corpus, report))
}
