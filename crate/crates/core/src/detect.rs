//! Pattern-based data detectors.
//!
//! Each OCR text is scanned for phone numbers, email addresses, URLs,
//! postal addresses and dates/times. Overlapping matches are resolved by
//! category precedence: URL, email, phone, date/time, address.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::screen::{BBox, Entity, EntityCategory, OcrText};

/// Category precedence for overlapping matches, highest first.
pub const PRECEDENCE: [EntityCategory; 5] = [
    EntityCategory::Url,
    EntityCategory::EmailAddress,
    EntityCategory::PhoneNumber,
    EntityCategory::DateTime,
    EntityCategory::Address,
];

const URL_TLDS: &str = "com|org|net|edu|gov|io|co|us|info|biz|app|dev|ly|ai";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gazetteer {
    pub street_suffixes: Vec<String>,
    pub cities: Vec<String>,
    pub states: Vec<String>,
}

impl Default for Gazetteer {
    fn default() -> Self {
        Self {
            street_suffixes: word_list(include_str!("../data/street_suffixes.txt")),
            cities: word_list(include_str!("../data/cities.txt")),
            states: word_list(include_str!("../data/states.txt")),
        }
    }
}

impl Gazetteer {
    /// Loads `street_suffixes.txt`, `cities.txt` and `states.txt` from `dir`.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let read = |name: &str| -> Result<Vec<String>> {
            Ok(word_list(&fs::read_to_string(dir.join(name))?))
        };
        Ok(Self {
            street_suffixes: read("street_suffixes.txt")?,
            cities: read("cities.txt")?,
            states: read("states.txt")?,
        })
    }
}

/// One term per line; blank lines and `#` comments are skipped.
pub fn word_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    #[serde(default)]
    pub address_gazetteer: Gazetteer,
    #[serde(default = "all_categories")]
    pub enabled_categories: BTreeSet<EntityCategory>,
}

fn all_categories() -> BTreeSet<EntityCategory> {
    EntityCategory::ALL.into_iter().collect()
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { address_gazetteer: Gazetteer::default(), enabled_categories: all_categories() }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.enabled_categories.contains(&EntityCategory::Address) {
            let g = &self.address_gazetteer;
            if g.street_suffixes.is_empty() || g.cities.is_empty() || g.states.is_empty() {
                return Err(Error::Config("address gazetteer lists must be non-empty".into()));
            }
        }
        Ok(())
    }
}

/// A detected span within one text, in byte offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub category: EntityCategory,
}

impl Span {
    fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Compiled detectors.
#[derive(Debug, Clone)]
pub struct Detector {
    enabled: BTreeSet<EntityCategory>,
    url: Regex,
    email: Regex,
    phone: Regex,
    date_time: Regex,
    date_gap: Regex,
    address: Regex,
}

fn alternation(terms: &[String]) -> String {
    let mut terms: Vec<&String> = terms.iter().collect();
    // longest first so "San Jose" wins over a hypothetical "San"
    terms.sort_by_key(|t| std::cmp::Reverse(t.len()));
    terms.iter().map(|t| regex::escape(t)).collect::<Vec<_>>().join("|")
}

impl Detector {
    pub fn new(config: &DetectorConfig) -> Result<Self> {
        config.validate()?;
        let g = &config.address_gazetteer;
        let compile = |p: &str| Regex::new(p).map_err(|e| Error::Config(e.to_string()));

        let url = compile(&format!(
            r#"(?i)\b(?:https?://|www\.)[^\s<>"']*[^\s<>"'.,;:!?)]|\b[a-z0-9](?:[a-z0-9-]*[a-z0-9])?(?:\.[a-z0-9](?:[a-z0-9-]*[a-z0-9])?)*\.(?:{URL_TLDS})\b(?:/[^\s<>"']*[^\s<>"'.,;:!?)])?"#
        ))?;
        let email = compile(r"(?i)\b[a-z0-9._%+-]+@[a-z0-9-]+(?:\.[a-z0-9-]+)*\.[a-z]{2,}\b")?;
        let phone = compile(concat!(
            r"\+\d{1,3}(?:[ .-]\d{2,10}){1,4}\b",
            r"|\+\d{7,15}\b",
            r"|(?:\b1[ .-])?(?:\(\d{3}\) ?|\b\d{3}[ .-])\d{3}[ .-]\d{4}\b",
            r"|\b\d{3}-\d{4}\b",
        ))?;
        let months = "january|february|march|april|may|june|july|august|september|october|november|december|jan|feb|mar|apr|jun|jul|aug|sept|sep|oct|nov|dec";
        let weekdays = "monday|tuesday|wednesday|thursday|friday|saturday|sunday";
        let date_time = compile(&format!(
            concat!(
                r"(?i)\b(?:{w})\b",
                r"|\b(?:{m})\.? \d{{1,2}}(?:st|nd|rd|th)?(?:,? \d{{4}})?\b",
                r"|\b\d{{1,2}}(?:st|nd|rd|th)? (?:{m})\b(?:,? \d{{4}}\b)?",
                r"|\b(?:{m}) \d{{4}}\b",
                r"|\b\d{{1,2}}/\d{{1,2}}/\d{{2,4}}\b",
                r"|\b\d{{4}}-\d{{2}}-\d{{2}}\b",
                r"|\b\d{{1,2}}(?::\d{{2}})? ?(?:am|pm|a\.m\.|p\.m\.)",
                r"|\b\d{{1,2}}:\d{{2}}\b",
                r"|\b(?:today|tomorrow|tonight|yesterday|noon|midnight)\b",
            ),
            w = weekdays,
            m = months
        ))?;
        let date_gap = compile(r"(?i)^[\s,]*(?:at|from|to|until|-|–)?[\s,]*$")?;
        let suffixes = alternation(&g.street_suffixes);
        let cities = alternation(&g.cities);
        let states = alternation(&g.states);
        let address = compile(&format!(
            concat!(
                r"(?i)\b\d{{1,5}} (?:[a-z][a-z'.]* ){{1,3}}?(?:{s})\b\.?(?:,? (?:{c})\b)?(?:, ?(?:{st})\b(?: \d{{5}}\b)?)?",
                r"|\b(?:{c}), ?(?:{st})\b(?: \d{{5}}\b)?",
            ),
            s = suffixes,
            c = cities,
            st = states
        ))?;
        Ok(Self { enabled: config.enabled_categories.clone(), url, email, phone, date_time, date_gap, address })
    }

    fn raw_spans(&self, category: EntityCategory, text: &str) -> Vec<Span> {
        let mk = |start, end| Span { start, end, category };
        match category {
            EntityCategory::Url => self
                .url
                .find_iter(text)
                .filter(|m| {
                    // reject domains that are part of an email address
                    let before = text[..m.start()].chars().next_back();
                    let after = text[m.end()..].chars().next();
                    !matches!(before, Some('@' | '.' | '_' | '-' | '+' | '%'))
                        && !before.is_some_and(char::is_alphanumeric)
                        && after != Some('@')
                })
                .map(|m| mk(m.start(), m.end()))
                .collect(),
            EntityCategory::EmailAddress => {
                self.email.find_iter(text).map(|m| mk(m.start(), m.end())).collect()
            }
            EntityCategory::PhoneNumber => {
                self.phone.find_iter(text).map(|m| mk(m.start(), m.end())).collect()
            }
            EntityCategory::Address => {
                self.address.find_iter(text).map(|m| mk(m.start(), m.end())).collect()
            }
            EntityCategory::DateTime => {
                let mut merged: Vec<Span> = Vec::new();
                for m in self.date_time.find_iter(text) {
                    if let Some(last) = merged.last_mut() {
                        if self.date_gap.is_match(&text[last.end..m.start()]) {
                            last.end = m.end();
                            continue;
                        }
                    }
                    merged.push(mk(m.start(), m.end()));
                }
                merged
            }
        }
    }

    /// Non-overlapping detected spans of `text`, ordered by start offset.
    pub fn spans(&self, text: &str) -> Vec<Span> {
        let mut accepted: Vec<Span> = Vec::new();
        for category in PRECEDENCE {
            if !self.enabled.contains(&category) {
                continue;
            }
            for span in self.raw_spans(category, text) {
                if !accepted.iter().any(|a| a.overlaps(&span)) {
                    accepted.push(span);
                }
            }
        }
        accepted.sort_by_key(|s| s.start);
        accepted
    }

    /// Category of the first detected span, if any.
    pub fn detect_category(&self, text: &str) -> Option<EntityCategory> {
        self.spans(text).first().map(|s| s.category)
    }

    /// Entities for every detected span, ids assigned in text order.
    pub fn detect_entities(&self, ocr_texts: &[OcrText]) -> Vec<Entity> {
        let mut out = Vec::new();
        for t in ocr_texts {
            let n_chars = t.text.chars().count().max(1) as f64;
            for span in self.spans(&t.text) {
                let c0 = t.text[..span.start].chars().count() as f64;
                let c1 = t.text[..span.end].chars().count() as f64;
                let bbox = if c0 == 0.0 && c1 == n_chars {
                    t.bbox
                } else {
                    BBox::new(
                        t.bbox.x + t.bbox.w * c0 / n_chars,
                        t.bbox.y,
                        t.bbox.w * (c1 - c0) / n_chars,
                        t.bbox.h,
                    )
                };
                out.push(Entity {
                    id: out.len() as u32,
                    ocr_text_id: t.id,
                    text: t.text[span.start..span.end].to_string(),
                    bbox,
                    category: span.category,
                });
            }
        }
        out
    }
}

pub fn detect_entities(ocr_texts: &[OcrText], config: &DetectorConfig) -> Result<Vec<Entity>> {
    Ok(Detector::new(config)?.detect_entities(ocr_texts))
}

pub fn detect_category(text: &str, config: &DetectorConfig) -> Result<Option<EntityCategory>> {
    Ok(Detector::new(config)?.detect_category(text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use EntityCategory::*;

    fn det() -> Detector {
        Detector::new(&DetectorConfig::default()).unwrap()
    }

    fn found(text: &str) -> Vec<(EntityCategory, String)> {
        det().spans(text).into_iter().map(|s| (s.category, text[s.start..s.end].to_string())).collect()
    }

    #[test]
    fn figure_example_phone() {
        assert_eq!(found("+91 9998888"), vec![(PhoneNumber, "+91 9998888".to_string())]);
    }

    #[test]
    fn email_is_not_also_a_url() {
        assert_eq!(found("support@example.com"), vec![(EmailAddress, "support@example.com".to_string())]);
        assert_eq!(
            found("jane.doe@mail.acme.co"),
            vec![(EmailAddress, "jane.doe@mail.acme.co".to_string())]
        );
    }

    #[test]
    fn url_and_phone_in_one_line() {
        assert_eq!(
            found("Visit https://example.com or call 1-866-902-7144"),
            vec![
                (Url, "https://example.com".to_string()),
                (PhoneNumber, "1-866-902-7144".to_string())
            ]
        );
    }

    #[test]
    fn detect_category_examples() {
        let d = det();
        assert_eq!(d.detect_category("1-866-902-7144"), Some(PhoneNumber));
        assert_eq!(d.detect_category("tomorrow at 5pm"), Some(DateTime));
        assert_eq!(d.detect_category("hello world"), None);
        assert_eq!(found("tomorrow at 5pm").len(), 1);
    }

    #[test]
    fn common_formats() {
        for (text, cat) in [
            ("(415) 555-0132", PhoneNumber),
            ("415.555.0132", PhoneNumber),
            ("+1 415 555 0132", PhoneNumber),
            ("+44 20 7946 0958", PhoneNumber),
            ("555-0100", PhoneNumber),
            ("www.acme.com/support", Url),
            ("acme-travel.org", Url),
            ("https://example.com", Url),
            ("1600 Amphitheatre Pkwy, Mountain View, CA 94043", Address),
            ("1 Main St Springfield", Address),
            ("Portland, OR", Address),
            ("Monday, March 5 at 10:00 AM", DateTime),
            ("12/05/2024", DateTime),
            ("tomorrow 5pm", DateTime),
            ("Sat, Oct 12", DateTime),
        ] {
            let f = found(text);
            assert_eq!(f.len(), 1, "{text}: {f:?}");
            assert_eq!(f[0].0, cat, "{text}");
        }
        assert_eq!(found("Monday, March 5 at 10:00 AM")[0].1, "Monday, March 5 at 10:00 AM");
    }

    #[test]
    fn subspan_bbox_is_proportional() {
        let t = OcrText { id: 7, text: "Tel: 555-0100".into(), bbox: BBox::new(100.0, 50.0, 130.0, 20.0) };
        let e = det().detect_entities(&[t]);
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].text, "555-0100");
        assert_eq!(e[0].ocr_text_id, 7);
        assert!((e[0].bbox.x - 150.0).abs() < 1e-9);
        assert!((e[0].bbox.w - 80.0).abs() < 1e-9);
    }

    #[test]
    fn disabled_categories_are_skipped() {
        let mut cfg = DetectorConfig::default();
        cfg.enabled_categories.remove(&PhoneNumber);
        assert_eq!(detect_category("555-0100", &cfg).unwrap(), None);
    }

    #[test]
    fn empty_gazetteer_rejected() {
        let mut cfg = DetectorConfig::default();
        cfg.address_gazetteer.cities.clear();
        assert!(matches!(Detector::new(&cfg), Err(Error::Config(_))));
        cfg.enabled_categories.remove(&Address);
        assert!(Detector::new(&cfg).is_ok());
    }

    #[test]
    fn plain_prose_is_not_detected() {
        for text in ["Contact Us", "Hours of Operation", "Sign in", "Our team is here to help", "Apple Business Manager"] {
            assert!(found(text).is_empty(), "{text}: {:?}", found(text));
        }
    }
}
