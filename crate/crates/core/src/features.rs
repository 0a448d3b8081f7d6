//! Location and string-matching features for (request, entity) pairs.
//!
//! Flat vector layout: `[self_loc(5), ctx_loc(25), self_text(3), nbr_text(9)]`.

use std::collections::HashSet;
use std::sync::OnceLock;

use crate::detect::word_list;
use crate::screen::{center_distance, is_digit_token, split_tokens, BBox, Entity, Request, Sample, Screen};

/// Same-category context entities in the location features.
pub const CONTEXT_ENTITIES: usize = 5;
/// Nearest neighboring texts in the text features.
pub const NEIGHBOR_TEXTS: usize = 3;
pub const LOC_SELF_DIM: usize = 5;
pub const LOC_DIM: usize = LOC_SELF_DIM * (1 + CONTEXT_ENTITIES);
pub const TEXT_TRIPLE_DIM: usize = 3;
pub const TEXT_DIM: usize = TEXT_TRIPLE_DIM * (1 + NEIGHBOR_TEXTS);
pub const FEATURE_DIM: usize = LOC_DIM + TEXT_DIM;

pub const FEATURE_LAYOUT: [(&str, usize); 4] = [
    ("self_loc", LOC_SELF_DIM),
    ("ctx_loc", LOC_SELF_DIM * CONTEXT_ENTITIES),
    ("self_text", TEXT_TRIPLE_DIM),
    ("nbr_text", TEXT_TRIPLE_DIM * NEIGHBOR_TEXTS),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationFeatures {
    pub self_box: [f64; LOC_SELF_DIM],
    pub context: [[f64; LOC_SELF_DIM]; CONTEXT_ENTITIES],
}

impl LocationFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.self_box.to_vec();
        for c in &self.context {
            v.extend_from_slice(c);
        }
        v
    }
}

/// (contained, word overlap, digit overlap) for one text.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MatchTriple {
    pub contained: f64,
    pub word_overlap: f64,
    pub digit_overlap: f64,
}

impl MatchTriple {
    pub fn as_array(&self) -> [f64; 3] {
        [self.contained, self.word_overlap, self.digit_overlap]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextMatchFeatures {
    pub self_features: MatchTriple,
    pub neighbor_features: [MatchTriple; NEIGHBOR_TEXTS],
}

impl TextMatchFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.self_features.as_array().to_vec();
        for n in &self.neighbor_features {
            v.extend_from_slice(&n.as_array());
        }
        v
    }
}

/// The shipped English function-word list.
pub fn default_stopwords() -> &'static HashSet<String> {
    static STOPWORDS: OnceLock<HashSet<String>> = OnceLock::new();
    STOPWORDS.get_or_init(|| word_list(include_str!("../data/stopwords.txt")).into_iter().collect())
}

/// `[x/K, y/K, (x+w)/K, (y+h)/K, w*h/K^2]`.
pub fn normalized_box(b: &BBox, k: f64) -> [f64; LOC_SELF_DIM] {
    [b.x / k, b.y / k, (b.x + b.w) / k, (b.y + b.h) / k, (b.w * b.h) / (k * k)]
}

/// Location features of `entity`; context comes from same-category entities
/// of `screen` ordered by center distance. Without a screen (dummy
/// entities) every component is zero.
pub fn location_features(entity: &Entity, screen: Option<&Screen>) -> LocationFeatures {
    let mut out = LocationFeatures {
        self_box: [0.0; LOC_SELF_DIM],
        context: [[0.0; LOC_SELF_DIM]; CONTEXT_ENTITIES],
    };
    let Some(screen) = screen else { return out };
    if entity.bbox.is_zero() {
        return out;
    }
    let k = screen.scale();
    out.self_box = normalized_box(&entity.bbox, k);
    let mut others: Vec<(f64, u32, &BBox)> = screen
        .entities
        .iter()
        .filter(|e| e.category == entity.category && e.id != entity.id)
        .map(|e| (center_distance(&entity.bbox, &e.bbox), e.id, &e.bbox))
        .collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (slot, (_, _, b)) in out.context.iter_mut().zip(others) {
        *slot = normalized_box(b, k);
    }
    out
}

/// Fraction of the text's distinct content words present in the request.
pub fn word_overlap(request_tokens: &[String], text: &str, stopwords: &HashSet<String>) -> f64 {
    let (hits, total) = word_overlap_counts(request_tokens, text, stopwords);
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// (matched, total) distinct content words of `text`.
pub fn word_overlap_counts(
    request_tokens: &[String],
    text: &str,
    stopwords: &HashSet<String>,
) -> (usize, usize) {
    let content: HashSet<String> =
        split_tokens(text).into_iter().filter(|t| !stopwords.contains(t)).collect();
    let hits = content.iter().filter(|t| request_tokens.contains(t)).count();
    (hits, content.len())
}

/// Fraction of the text's distinct digit runs present in the request.
pub fn digit_overlap(request_tokens: &[String], text: &str) -> f64 {
    let digits: HashSet<String> = split_tokens(text).into_iter().filter(|t| is_digit_token(t)).collect();
    if digits.is_empty() {
        return 0.0;
    }
    digits.iter().filter(|t| request_tokens.contains(t)).count() as f64 / digits.len() as f64
}

fn normalize(s: &str) -> String {
    split_tokens(s).join(" ")
}

/// 1 iff the normalized text occurs in the normalized request on token
/// boundaries.
pub fn containment(request_raw: &str, text: &str) -> f64 {
    let t = normalize(text);
    if t.is_empty() {
        return 0.0;
    }
    let r = format!(" {} ", normalize(request_raw));
    if r.contains(&format!(" {t} ")) {
        1.0
    } else {
        0.0
    }
}

pub fn match_triple(request: &Request, text: &str, stopwords: &HashSet<String>) -> MatchTriple {
    MatchTriple {
        contained: containment(&request.raw, text),
        word_overlap: word_overlap(&request.tokens, text, stopwords),
        digit_overlap: digit_overlap(&request.tokens, text),
    }
}

pub fn text_match_features(
    request: &Request,
    entity: &Entity,
    screen: Option<&Screen>,
    stopwords: &HashSet<String>,
) -> TextMatchFeatures {
    let mut out = TextMatchFeatures {
        self_features: match_triple(request, &entity.text, stopwords),
        neighbor_features: [MatchTriple::default(); NEIGHBOR_TEXTS],
    };
    if let Some(screen) = screen {
        for (slot, t) in out.neighbor_features.iter_mut().zip(nearest_texts(entity, screen)) {
            *slot = match_triple(request, &t.text, stopwords);
        }
    }
    out
}

/// OCR texts other than the entity's own, nearest first (ties by id).
pub fn nearest_texts<'a>(entity: &Entity, screen: &'a Screen) -> Vec<&'a crate::screen::OcrText> {
    let mut texts: Vec<(f64, &crate::screen::OcrText)> = screen
        .ocr_texts
        .iter()
        .filter(|t| t.id != entity.ocr_text_id)
        .map(|t| (center_distance(&entity.bbox, &t.bbox), t))
        .collect();
    texts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
    texts.into_iter().map(|(_, t)| t).collect()
}

/// The full 42-dimensional feature vector of one candidate.
pub fn feature_vector(sample: &Sample, entity: &Entity, stopwords: &HashSet<String>) -> Vec<f64> {
    let screen = sample.screen.as_ref();
    let mut v = location_features(entity, screen).to_vec();
    v.extend(text_match_features(&sample.request, entity, screen, stopwords).to_vec());
    v
}
