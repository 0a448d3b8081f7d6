//! Synthetic screen layouts: a title, a navigation row, a grid of labeled
//! cards and a footer.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use super::config::GeneratorConfig;
use super::values::{distinct_value, Value};
use crate::detect::Gazetteer;
use crate::error::{Error, Result};
use crate::screen::{BBox, Entity, EntityCategory, OcrText, Screen};

/// A screen plus the generator's knowledge about its entities.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScreen {
    pub screen: Screen,
    /// Card label of each entity, by entity id.
    pub labels: BTreeMap<u32, String>,
    /// Partial-value fragment of each entity, by entity id, when it has one.
    pub parts: BTreeMap<u32, String>,
}

struct Card {
    label: String,
    values: Vec<(EntityCategory, Value)>,
}

struct Item {
    text: String,
    bbox: BBox,
    category: Option<EntityCategory>,
    label: Option<String>,
    part: Option<String>,
}

/// Card categories that may share a card with `cat`.
fn companions(cat: EntityCategory) -> Vec<EntityCategory> {
    use EntityCategory::*;
    match cat {
        DateTime => vec![Address, Url],
        _ => [PhoneNumber, EmailAddress, Url, Address].into_iter().filter(|&c| c != cat).collect(),
    }
}

struct Geometry {
    u: f64,
    width: f64,
}

impl Geometry {
    fn text_box(&self, text: &str, x: f64, y: f64, max_w: f64, big: bool) -> BBox {
        let (cw, th) = if big { (22.0, 44.0) } else { (17.0, 30.0) };
        let w = (text.chars().count() as f64 * cw * self.u).min(max_w).max(1.0);
        BBox::new(x.round(), y.round(), w.round(), (th * self.u).round())
    }
}

/// Builds a screen whose grid holds `n_same` cards with a `target` entity.
///
/// Fails with [`Error::Config`] when `n_same < 2` and with
/// [`Error::LayoutOverflow`] when the grid cannot hold the cards.
pub fn generate_screen<R: Rng>(
    rng: &mut R,
    config: &GeneratorConfig,
    gazetteer: &Gazetteer,
    target: EntityCategory,
    n_same: usize,
    id: &str,
) -> Result<GeneratedScreen> {
    if n_same < 2 {
        return Err(Error::Config(format!("n_same_category must be at least 2, got {n_same}")));
    }
    let spec = &config.layout_spec;
    let pools = &config.value_grammars;
    let cols = *spec.cols.choose(rng).unwrap_or(&1);
    let capacity = spec.rows * cols;
    if n_same > capacity {
        return Err(Error::LayoutOverflow { needed: n_same, available: capacity });
    }

    let mut used_labels: BTreeSet<String> = BTreeSet::new();
    let mut taken: BTreeMap<EntityCategory, Vec<Value>> = BTreeMap::new();
    let mut draw_label = |rng: &mut R, event: bool| -> String {
        let pool = if event { &pools.event_labels } else { &pools.org_labels };
        let free: Vec<&String> = pool.iter().filter(|l| !used_labels.contains(*l)).collect();
        let label = free.choose(rng).map(|s| s.to_string()).unwrap_or_else(|| "More".into());
        used_labels.insert(label.clone());
        label
    };
    let mut draw_value = |rng: &mut R, cat: EntityCategory| -> Value {
        let list = taken.entry(cat).or_default();
        let v = distinct_value(rng, cat, pools, gazetteer, list);
        list.push(v.clone());
        v
    };

    let mut cards = Vec::new();
    for _ in 0..n_same {
        let label = draw_label(rng, target == EntityCategory::DateTime);
        let mut values = vec![(target, draw_value(rng, target))];
        let mut extra = companions(target);
        extra.shuffle(rng);
        for (k, cat) in extra.into_iter().enumerate() {
            let p = if k == 0 { 0.5 } else { 0.25 };
            if values.len() >= spec.max_card_values || !rng.gen_bool(p) {
                break;
            }
            values.push((cat, draw_value(rng, cat)));
        }
        values.shuffle(rng);
        cards.push(Card { label, values });
    }
    let n_other = rng.gen_range(0..=2).min(capacity - n_same);
    for _ in 0..n_other {
        let others: Vec<EntityCategory> =
            EntityCategory::ALL.into_iter().filter(|&c| c != target).collect();
        let first = *others.choose(rng).unwrap();
        let label = draw_label(rng, first == EntityCategory::DateTime);
        let mut values = vec![(first, draw_value(rng, first))];
        let second: Vec<EntityCategory> =
            companions(first).into_iter().filter(|&c| c != target).collect();
        if rng.gen_bool(0.4) {
            if let Some(&c) = second.choose(rng) {
                values.push((c, draw_value(rng, c)));
            }
        }
        cards.push(Card { label, values });
    }
    cards.shuffle(rng);

    let &(width, height) = spec.screen_sizes.choose(rng).unwrap();
    let (w, h) = (f64::from(width), f64::from(height));
    let g = Geometry { u: w / 1080.0, width: w };
    let u = g.u;
    let margin = 40.0 * u;
    let content_w = g.width - 2.0 * margin;
    let mut items: Vec<Item> = Vec::new();
    let plain = |text: String, bbox: BBox| Item { text, bbox, category: None, label: None, part: None };

    let title = pools.site_titles.choose(rng).unwrap().clone();
    items.push(plain(title.clone(), g.text_box(&title, margin, 50.0 * u, content_w, true)));
    let mut nav: Vec<&String> = pools.nav_items.iter().collect();
    nav.shuffle(rng);
    let mut x = margin;
    for item in nav.into_iter().take(rng.gen_range(2..=4)) {
        let b = g.text_box(item, x, 120.0 * u, content_w, false);
        if b.right() > w - margin {
            break;
        }
        x = b.right() + 30.0 * u;
        items.push(plain(item.clone(), b));
    }

    let top = 200.0 * u;
    let footer_y = h - 90.0 * u;
    let row_h = (footer_y - 20.0 * u - top) / spec.rows as f64;
    let cell_w = content_w / cols as f64;
    let line = 40.0 * u;
    let mut cells: Vec<usize> = (0..capacity).collect();
    cells.shuffle(rng);
    let (card_cells, free_cells) = cells.split_at(cards.len());
    for (card, &cell) in cards.iter().zip(card_cells) {
        let (r, c) = (cell / cols, cell % cols);
        let x = margin + c as f64 * cell_w + rng.gen_range(0.0..20.0) * u;
        let y = top + r as f64 * row_h + rng.gen_range(0.0..8.0) * u;
        let max_w = cell_w - 24.0 * u;
        items.push(plain(card.label.clone(), g.text_box(&card.label, x, y, max_w, false)));
        for (k, (cat, v)) in card.values.iter().enumerate() {
            let b = g.text_box(&v.text, x, y + (k + 1) as f64 * line, max_w, false);
            items.push(Item {
                text: v.text.clone(),
                bbox: b,
                category: Some(*cat),
                label: Some(card.label.clone()),
                part: v.part.clone(),
            });
        }
    }
    for &cell in free_cells {
        if rng.gen_bool(0.3) {
            let (r, c) = (cell / cols, cell % cols);
            let text = pools.paragraphs.choose(rng).unwrap().clone();
            let x = margin + c as f64 * cell_w;
            let y = top + r as f64 * row_h + 10.0 * u;
            items.push(plain(text.clone(), g.text_box(&text, x, y, cell_w - 24.0 * u, false)));
        }
    }
    let mut x = margin;
    let mut footers: Vec<&String> = pools.footers.iter().collect();
    footers.shuffle(rng);
    for f in footers.into_iter().take(rng.gen_range(1..=2)) {
        let b = g.text_box(f, x, footer_y, content_w / 2.0, false);
        x = b.right() + 40.0 * u;
        items.push(plain(f.clone(), b));
    }

    // decouple text ids from reading order
    items.shuffle(rng);
    let mut ocr_texts = Vec::with_capacity(items.len());
    let mut entities = Vec::new();
    let mut labels = BTreeMap::new();
    let mut parts = BTreeMap::new();
    for (i, it) in items.into_iter().enumerate() {
        let tid = i as u32;
        if let Some(category) = it.category {
            let eid = entities.len() as u32;
            entities.push(Entity { id: eid, ocr_text_id: tid, text: it.text.clone(), bbox: it.bbox, category });
            labels.insert(eid, it.label.unwrap_or_default());
            if let Some(p) = it.part {
                parts.insert(eid, p);
            }
        }
        ocr_texts.push(OcrText { id: tid, text: it.text, bbox: it.bbox });
    }
    let screen = Screen { id: id.to_string(), width, height, ocr_texts, entities };
    Ok(GeneratedScreen { screen, labels, parts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{Detector, DetectorConfig};
    use crate::screen::validate_screen;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn screens(n: usize) -> Vec<GeneratedScreen> {
        let cfg = GeneratorConfig::default();
        let gaz = Gazetteer::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        (0..n)
            .map(|i| {
                let cat = EntityCategory::ALL[i % 5];
                generate_screen(&mut rng, &cfg, &gaz, cat, 2 + i % 4, &format!("s{i}")).unwrap()
            })
            .collect()
    }

    #[test]
    fn screens_are_valid_and_detector_recovers_entities() {
        let det = Detector::new(&DetectorConfig::default()).unwrap();
        for gs in screens(60) {
            validate_screen(&gs.screen).unwrap();
            assert_eq!(det.detect_entities(&gs.screen.ocr_texts), gs.screen.entities, "{}", gs.screen.id);
        }
    }

    #[test]
    fn target_count_and_unique_labels() {
        for (i, gs) in screens(40).iter().enumerate() {
            let cat = EntityCategory::ALL[i % 5];
            let n = gs.screen.entities.iter().filter(|e| e.category == cat).count();
            assert_eq!(n, 2 + i % 4);
            let same: BTreeSet<&String> = gs
                .screen
                .entities
                .iter()
                .filter(|e| e.category == cat)
                .map(|e| &gs.labels[&e.id])
                .collect();
            assert_eq!(same.len(), n);
        }
    }

    #[test]
    fn preconditions() {
        let cfg = GeneratorConfig::default();
        let gaz = Gazetteer::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = generate_screen(&mut rng, &cfg, &gaz, EntityCategory::Url, 1, "x").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        let e = generate_screen(&mut rng, &cfg, &gaz, EntityCategory::Url, 99, "x").unwrap_err();
        assert!(matches!(e, Error::LayoutOverflow { needed: 99, .. }));
    }
}
