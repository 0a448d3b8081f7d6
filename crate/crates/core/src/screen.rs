//! Screens, OCR texts, entities, requests and samples.
//!
//! Coordinates are pixels; normalization happens in [`crate::features`].

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `(x, y, w, h)` in pixels. Serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const ZERO: BBox = BBox { x: 0.0, y: 0.0, w: 0.0, h: 0.0 };

    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }

    pub fn contains(&self, other: &BBox) -> bool {
        const SLACK: f64 = 1e-6;
        other.x >= self.x - SLACK
            && other.y >= self.y - SLACK
            && other.right() <= self.right() + SLACK
            && other.bottom() <= self.bottom() + SLACK
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// Euclidean distance between box centers.
pub fn center_distance(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityCategory {
    PhoneNumber,
    EmailAddress,
    Url,
    Address,
    DateTime,
}

impl EntityCategory {
    pub const ALL: [EntityCategory; 5] = [
        EntityCategory::PhoneNumber,
        EntityCategory::EmailAddress,
        EntityCategory::Url,
        EntityCategory::Address,
        EntityCategory::DateTime,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Wire name, as used in corpus files.
    pub fn as_str(self) -> &'static str {
        match self {
            EntityCategory::PhoneNumber => "phone_number",
            EntityCategory::EmailAddress => "email_address",
            EntityCategory::Url => "url",
            EntityCategory::Address => "address",
            EntityCategory::DateTime => "date_time",
        }
    }

    /// Human-readable name; its tokens form the category embedding.
    pub fn display_name(self) -> &'static str {
        match self {
            EntityCategory::PhoneNumber => "phone number",
            EntityCategory::EmailAddress => "email address",
            EntityCategory::Url => "url",
            EntityCategory::Address => "address",
            EntityCategory::DateTime => "date time",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for EntityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrText {
    pub id: u32,
    pub text: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: u32,
    pub ocr_text_id: u32,
    pub text: String,
    pub bbox: BBox,
    pub category: EntityCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Screen {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub ocr_texts: Vec<OcrText>,
    pub entities: Vec<Entity>,
}

impl Screen {
    pub fn text(&self, id: u32) -> Option<&OcrText> {
        self.ocr_texts.iter().find(|t| t.id == id)
    }

    /// Normalizer K = max(width, height).
    pub fn scale(&self) -> f64 {
        f64::from(self.width.max(self.height))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: String,
    pub raw: String,
    pub tokens: Vec<String>,
}

impl Request {
    pub fn new(id: impl Into<String>, raw: impl Into<String>) -> Result<Self> {
        let raw = raw.into();
        let tokens = tokenize(&raw)?;
        Ok(Self { id: id.into(), raw, tokens })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisionTag {
    CategoryModule,
    LocationModule,
    TextModule,
}

impl SupervisionTag {
    /// Index into the (category, location, text) module triple.
    pub fn module_index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    CategoryLevel,
    Descriptive,
}

impl Subset {
    pub const ALL: [Subset; 2] = [Subset::CategoryLevel, Subset::Descriptive];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::CategoryLevel => "category_level",
            Subset::Descriptive => "descriptive",
        }
    }
}

/// How a request refers to its target. Recorded by the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceType {
    /// Generic reference resolved only to a category ("call this").
    Category,
    /// Uses a label text next to the entity.
    Label,
    /// Ordinal or positional ("the second", "the top").
    Ordinal,
    /// The entity text verbatim.
    FullText,
    /// A distinctive fragment of the entity text ("ending in 7144").
    PartialValue,
}

impl ReferenceType {
    pub fn supervision_tag(self) -> SupervisionTag {
        match self {
            ReferenceType::Category => SupervisionTag::CategoryModule,
            ReferenceType::Ordinal => SupervisionTag::LocationModule,
            ReferenceType::Label | ReferenceType::FullText | ReferenceType::PartialValue => {
                SupervisionTag::TextModule
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub request: Request,
    #[serde(default)]
    pub screen: Option<Screen>,
    pub candidates: Vec<Entity>,
    pub gold_ids: BTreeSet<u32>,
    #[serde(default)]
    pub supervision_tag: Option<SupervisionTag>,
    pub subset: Subset,
    /// Generation metadata: the reference type of the request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_type: Option<ReferenceType>,
    /// Generation metadata: the referring span of the request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

impl Sample {
    pub fn candidate(&self, id: u32) -> Option<&Entity> {
        self.candidates.iter().find(|e| e.id == id)
    }

    pub fn gold_categories(&self) -> BTreeSet<EntityCategory> {
        self.candidates
            .iter()
            .filter(|e| self.gold_ids.contains(&e.id))
            .map(|e| e.category)
            .collect()
    }

    /// Checks the sample invariants, including those of its screen.
    pub fn validate(&self) -> std::result::Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        if self.request.tokens.is_empty() {
            out.push(Violation::Sample("request has no tokens".into()));
        }
        match tokenize(&self.request.raw) {
            Ok(t) if t == self.request.tokens => {}
            _ => out.push(Violation::Sample("tokens do not match raw request".into())),
        }
        if self.gold_ids.is_empty() {
            out.push(Violation::Sample("gold set is empty".into()));
        }
        for g in &self.gold_ids {
            if self.candidate(*g).is_none() {
                out.push(Violation::Sample(format!("gold id {g} is not a candidate")));
            }
        }
        let mut seen = HashSet::new();
        for c in &self.candidates {
            if !seen.insert(c.id) {
                out.push(Violation::DuplicateId { kind: ItemKind::Entity, id: c.id });
            }
        }
        match self.subset {
            Subset::Descriptive => {
                if self.gold_ids.len() != 1 {
                    out.push(Violation::Sample("descriptive sample needs exactly one gold".into()));
                }
                match &self.screen {
                    None => out.push(Violation::Sample("descriptive sample has no screen".into())),
                    Some(screen) => {
                        if let Err(v) = validate_screen(screen) {
                            out.extend(v);
                        }
                        for c in &self.candidates {
                            if !screen.entities.contains(c) {
                                out.push(Violation::Sample(format!(
                                    "candidate {} is not an entity of the screen",
                                    c.id
                                )));
                            }
                        }
                    }
                }
            }
            Subset::CategoryLevel => {
                if self.screen.is_some() {
                    out.push(Violation::Sample("category-level sample has a screen".into()));
                }
                let cats: BTreeSet<_> = self.candidates.iter().map(|c| c.category).collect();
                if self.candidates.len() != 5 || cats.len() != 5 {
                    out.push(Violation::Sample(
                        "category-level sample needs one dummy per category".into(),
                    ));
                }
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemKind {
    OcrText,
    Entity,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    OutOfBounds { kind: ItemKind, id: u32 },
    DuplicateId { kind: ItemKind, id: u32 },
    EmptyText { kind: ItemKind, id: u32 },
    DegenerateBox { kind: ItemKind, id: u32 },
    MissingSource { entity: u32, ocr_text: u32 },
    OutsideSource { entity: u32 },
    ZeroDimensions,
    Sample(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OutOfBounds { kind, id } => write!(f, "{kind:?} {id} lies outside the screen"),
            Violation::DuplicateId { kind, id } => write!(f, "duplicate {kind:?} id {id}"),
            Violation::EmptyText { kind, id } => write!(f, "{kind:?} {id} has empty text"),
            Violation::DegenerateBox { kind, id } => {
                write!(f, "{kind:?} {id} has a non-positive size or negative origin")
            }
            Violation::MissingSource { entity, ocr_text } => {
                write!(f, "entity {entity} references missing ocr text {ocr_text}")
            }
            Violation::OutsideSource { entity } => {
                write!(f, "entity {entity} box is not inside its ocr text box")
            }
            Violation::ZeroDimensions => f.write_str("screen has zero width or height"),
            Violation::Sample(s) => f.write_str(s),
        }
    }
}

/// Returns every invariant violation of `screen`.
pub fn validate_screen(screen: &Screen) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if screen.width == 0 || screen.height == 0 {
        out.push(Violation::ZeroDimensions);
    }
    let (sw, sh) = (f64::from(screen.width), f64::from(screen.height));
    let check_box = |kind, id, b: &BBox, out: &mut Vec<Violation>| {
        if b.w <= 0.0 || b.h <= 0.0 || b.x < 0.0 || b.y < 0.0 {
            out.push(Violation::DegenerateBox { kind, id });
        }
        if b.x < 0.0 || b.y < 0.0 || b.right() > sw || b.bottom() > sh {
            out.push(Violation::OutOfBounds { kind, id });
        }
    };

    let mut ids = HashSet::new();
    for t in &screen.ocr_texts {
        if !ids.insert(t.id) {
            out.push(Violation::DuplicateId { kind: ItemKind::OcrText, id: t.id });
        }
        if t.text.trim().is_empty() {
            out.push(Violation::EmptyText { kind: ItemKind::OcrText, id: t.id });
        }
        check_box(ItemKind::OcrText, t.id, &t.bbox, &mut out);
    }
    let mut ids = HashSet::new();
    for e in &screen.entities {
        if !ids.insert(e.id) {
            out.push(Violation::DuplicateId { kind: ItemKind::Entity, id: e.id });
        }
        if e.text.trim().is_empty() {
            out.push(Violation::EmptyText { kind: ItemKind::Entity, id: e.id });
        }
        check_box(ItemKind::Entity, e.id, &e.bbox, &mut out);
        match screen.text(e.ocr_text_id) {
            None => out.push(Violation::MissingSource { entity: e.id, ocr_text: e.ocr_text_id }),
            Some(src) => {
                if !src.bbox.contains(&e.bbox) || !src.text.contains(e.text.as_str()) {
                    out.push(Violation::OutsideSource { entity: e.id });
                }
            }
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Lowercased word and digit-run tokens.
///
/// Letters and digits form separate runs ("5pm" gives `5`, `pm`); every other
/// character separates tokens.
pub fn tokenize(raw: &str) -> Result<Vec<String>> {
    let tokens = split_tokens(raw);
    if tokens.is_empty() {
        return Err(Error::EmptyRequest);
    }
    Ok(tokens)
}

/// Like [`tokenize`] but returns an empty list instead of an error.
pub fn split_tokens(raw: &str) -> Vec<String> {
    #[derive(PartialEq, Clone, Copy)]
    enum Run {
        Alpha,
        Digit,
    }
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let mut run: Option<Run> = None;
    for ch in raw.chars() {
        let kind = if ch.is_ascii_digit() {
            Some(Run::Digit)
        } else if ch.is_alphabetic() {
            Some(Run::Alpha)
        } else {
            None
        };
        if kind != run && !cur.is_empty() {
            tokens.push(std::mem::take(&mut cur));
        }
        if kind.is_some() {
            cur.extend(ch.to_lowercase());
        }
        run = kind;
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

pub fn is_digit_token(t: &str) -> bool {
    !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit())
}
