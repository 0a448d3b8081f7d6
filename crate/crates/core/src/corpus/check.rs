//! Symbolic re-resolution of descriptive samples.
//!
//! Parses the recorded reference span back against the template banks and
//! resolves it from the screen alone. A descriptive sample is well formed
//! when exactly one entity satisfies its reference and that entity is gold.

use std::collections::BTreeSet;

use regex::Regex;

use super::config::TemplateBanks;
use super::values::contains_part;
use crate::heuristic::reading_order;
use crate::screen::{Entity, EntityCategory, ReferenceType, Sample, Screen};

const ORDINALS: [&str; 10] =
    ["first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth"];

fn slot_regex(template: &str) -> Regex {
    let mut pat = String::from("^");
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let end = rest[start..].find('}').map_or(rest.len(), |e| start + e + 1);
        pat.push_str(&regex::escape(&rest[..start]));
        pat.push_str("(.+)");
        rest = &rest[end..];
    }
    pat.push_str(&regex::escape(rest));
    pat.push('$');
    Regex::new(&pat).expect("escaped template")
}

/// The text directly above `e` sharing its left edge, if it is not an entity.
pub fn card_label<'a>(e: &Entity, screen: &'a Screen) -> Option<&'a str> {
    let entity_texts: BTreeSet<u32> = screen.entities.iter().map(|x| x.ocr_text_id).collect();
    let above = screen
        .ocr_texts
        .iter()
        .filter(|t| (t.bbox.x - e.bbox.x).abs() < 0.5 && t.bbox.bottom() <= e.bbox.y)
        .max_by(|a, b| a.bbox.y.total_cmp(&b.bbox.y))?;
    if entity_texts.contains(&above.id) {
        // a value above a value: walk up through the card
        let owner = screen.entities.iter().find(|x| x.ocr_text_id == above.id)?;
        return card_label(owner, screen);
    }
    Some(above.text.as_str())
}

fn ordinal_index(slot: &str, sorted: &[&Entity]) -> Option<usize> {
    let n = sorted.len();
    if let Some(k) = ORDINALS.iter().position(|w| *w == slot) {
        return (k < n).then_some(k);
    }
    let digits: String = slot.chars().take_while(char::is_ascii_digit).collect();
    if !digits.is_empty() {
        let k: usize = digits.parse().ok()?;
        return (k >= 1 && k <= n).then(|| k - 1);
    }
    match slot {
        "top" => Some(0),
        "bottom" | "last" => Some(n - 1),
        "middle" if n % 2 == 1 => Some(n / 2),
        _ => None,
    }
}

fn matches_slot(kind: ReferenceType, slot: &str, e: &Entity, screen: &Screen, sorted: &[&Entity]) -> bool {
    match kind {
        ReferenceType::Label => card_label(e, screen).is_some_and(|l| l.to_lowercase() == slot),
        ReferenceType::FullText => e.text.to_lowercase() == slot,
        ReferenceType::PartialValue => contains_part(&e.text, slot),
        ReferenceType::Ordinal => ordinal_index(slot, sorted).is_some_and(|i| sorted[i].id == e.id),
        ReferenceType::Category => false,
    }
}

/// Entities of `screen` satisfying a descriptive reference.
pub fn resolve_reference(
    banks: &TemplateBanks,
    kind: ReferenceType,
    reference: &str,
    screen: &Screen,
) -> BTreeSet<u32> {
    let mut out = BTreeSet::new();
    for cat in EntityCategory::ALL {
        let Some(bank) = banks.descriptive.get(&cat) else { continue };
        let same: Vec<&Entity> = screen.entities.iter().filter(|e| e.category == cat).collect();
        let sorted = reading_order(&same);
        for template in bank.refs(kind) {
            let Some(caps) = slot_regex(template).captures(reference) else { continue };
            let slot = caps.get(1).map_or("", |m| m.as_str());
            for e in &same {
                if matches_slot(kind, slot, e, screen, &sorted) {
                    out.insert(e.id);
                }
            }
        }
    }
    out
}

/// The unique entity a descriptive sample refers to, if there is one.
pub fn symbolic_target(banks: &TemplateBanks, sample: &Sample) -> Option<u32> {
    let (Some(kind), Some(reference), Some(screen)) =
        (sample.reference_type, sample.reference.as_deref(), sample.screen.as_ref())
    else {
        return None;
    };
    let ids = resolve_reference(banks, kind, reference, screen);
    match ids.len() {
        1 => ids.first().copied(),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_regex_captures() {
        let re = slot_regex("the number for {label}");
        assert_eq!(&re.captures("the number for front desk").unwrap()[1], "front desk");
        assert!(re.captures("the number of front desk").is_none());
        let re = slot_regex("{value}");
        assert_eq!(&re.captures("a.b@c.io").unwrap()[1], "a.b@c.io");
    }

    #[test]
    fn ordinal_slots() {
        let e = |id, y| Entity {
            id,
            ocr_text_id: id,
            text: "x".into(),
            bbox: crate::screen::BBox::new(0.0, y, 1.0, 1.0),
            category: EntityCategory::Url,
        };
        let v = [e(0, 0.0), e(1, 10.0), e(2, 20.0)];
        let r: Vec<&Entity> = v.iter().collect();
        assert_eq!(ordinal_index("second", &r), Some(1));
        assert_eq!(ordinal_index("3rd", &r), Some(2));
        assert_eq!(ordinal_index("4th", &r), None);
        assert_eq!(ordinal_index("middle", &r), Some(1));
        assert_eq!(ordinal_index("last", &r), Some(2));
    }
}
