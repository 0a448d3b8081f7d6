use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::screen::{EntityCategory, ReferenceType};

/// A category-level template bank: every action combined with every
/// reference phrase. `{ref}` marks where the reference goes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryBank {
    pub categories: Vec<EntityCategory>,
    #[serde(default)]
    pub multilabel: bool,
    pub actions: Vec<String>,
    pub refs: Vec<String>,
}

/// Descriptive templates for one category, keyed by reference type.
/// Reference templates use `{label}`, `{ordinal}`, `{value}` and `{part}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveBank {
    pub actions: Vec<String>,
    pub label: Vec<String>,
    pub ordinal: Vec<String>,
    pub full_text: Vec<String>,
    pub partial_value: Vec<String>,
}

impl DescriptiveBank {
    pub fn refs(&self, kind: ReferenceType) -> &[String] {
        match kind {
            ReferenceType::Label => &self.label,
            ReferenceType::Ordinal => &self.ordinal,
            ReferenceType::FullText => &self.full_text,
            ReferenceType::PartialValue => &self.partial_value,
            ReferenceType::Category => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateBanks {
    pub prefixes: Vec<String>,
    pub suffixes: Vec<String>,
    pub category: Vec<CategoryBank>,
    pub descriptive: BTreeMap<EntityCategory, DescriptiveBank>,
}

impl Default for TemplateBanks {
    fn default() -> Self {
        serde_json::from_str(include_str!("../../data/templates.json")).expect("bundled templates are valid")
    }
}

/// Word pools for entity values, labels and distractor texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueGrammars {
    pub email_users: Vec<String>,
    pub domains: Vec<String>,
    pub tlds: Vec<String>,
    pub url_paths: Vec<String>,
    pub street_names: Vec<String>,
    pub weekdays: Vec<String>,
    pub months: Vec<String>,
    pub org_labels: Vec<String>,
    pub event_labels: Vec<String>,
    pub site_titles: Vec<String>,
    pub nav_items: Vec<String>,
    pub paragraphs: Vec<String>,
    pub footers: Vec<String>,
}

impl Default for ValueGrammars {
    fn default() -> Self {
        serde_json::from_str(include_str!("../../data/values.json")).expect("bundled value pools are valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutSpec {
    /// Card grid rows.
    pub rows: usize,
    /// Allowed column counts; one is drawn per screen.
    pub cols: Vec<usize>,
    /// Candidate screen sizes in pixels (width, height).
    pub screen_sizes: Vec<(u32, u32)>,
    /// Most values stacked under one label.
    pub max_card_values: usize,
    /// Upper bound on same-category entities per descriptive screen.
    pub max_same_category: usize,
}

impl Default for LayoutSpec {
    fn default() -> Self {
        Self {
            rows: 8,
            cols: vec![1, 1, 2],
            screen_sizes: vec![(1080, 1920), (1080, 2340), (1170, 2532), (750, 1334), (1284, 2778)],
            max_card_values: 3,
            max_same_category: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionCounts {
    pub category: usize,
    pub location: usize,
    pub text: usize,
}

impl Default for SupervisionCounts {
    fn default() -> Self {
        Self { category: 500, location: 500, text: 500 }
    }
}

/// Mix of descriptive reference types (weights, not necessarily normalized).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMix {
    pub label: f64,
    pub full_text: f64,
    pub ordinal: f64,
    pub partial_value: f64,
}

impl Default for ReferenceMix {
    fn default() -> Self {
        Self { label: 0.45, full_text: 0.25, ordinal: 0.20, partial_value: 0.10 }
    }
}

impl ReferenceMix {
    pub fn weighted(&self) -> [(ReferenceType, f64); 4] {
        [
            (ReferenceType::Label, self.label),
            (ReferenceType::FullText, self.full_text),
            (ReferenceType::Ordinal, self.ordinal),
            (ReferenceType::PartialValue, self.partial_value),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_category_samples: usize,
    pub n_descriptive_screens: usize,
    pub requests_per_screen: usize,
    pub multilabel_fraction: f64,
    pub supervision_counts: SupervisionCounts,
    pub reference_mix: ReferenceMix,
    pub template_banks: TemplateBanks,
    pub value_grammars: ValueGrammars,
    pub layout_spec: LayoutSpec,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_category_samples: 4600,
            n_descriptive_screens: 3000,
            requests_per_screen: 3,
            multilabel_fraction: 0.22,
            supervision_counts: SupervisionCounts::default(),
            reference_mix: ReferenceMix::default(),
            template_banks: TemplateBanks::default(),
            value_grammars: ValueGrammars::default(),
            layout_spec: LayoutSpec::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.multilabel_fraction) {
            return bad("multilabel_fraction must lie in [0, 1]");
        }
        if self.requests_per_screen == 0 {
            return bad("requests_per_screen must be at least 1");
        }
        let banks = &self.template_banks;
        for cat in EntityCategory::ALL {
            let single = banks.category.iter().any(|b| !b.multilabel && b.categories == [cat]);
            if !single {
                return Err(Error::Config(format!("no category-level templates for {cat}")));
            }
            let Some(d) = banks.descriptive.get(&cat) else {
                return Err(Error::Config(format!("no descriptive templates for {cat}")));
            };
            if d.actions.is_empty() {
                return Err(Error::Config(format!("no descriptive actions for {cat}")));
            }
            for (kind, w) in self.reference_mix.weighted() {
                if w > 0.0 && d.refs(kind).is_empty() {
                    return Err(Error::Config(format!("no {kind:?} templates for {cat}")));
                }
            }
        }
        for b in &banks.category {
            if b.categories.is_empty() || b.actions.is_empty() || b.refs.is_empty() {
                return bad("category bank with empty categories, actions or refs");
            }
            if b.actions.iter().any(|a| !a.contains("{ref}")) {
                return bad("every category action needs a {ref} slot");
            }
        }
        if self.multilabel_fraction > 0.0 && !banks.category.iter().any(|b| b.multilabel) {
            return bad("multilabel_fraction > 0 but no multilabel bank");
        }
        let l = &self.layout_spec;
        if l.rows == 0 || l.cols.is_empty() || l.cols.contains(&0) || l.screen_sizes.is_empty() {
            return bad("layout needs rows, columns and screen sizes");
        }
        if l.max_same_category < 2 || l.max_card_values == 0 {
            return bad("layout must allow at least two same-category entities");
        }
        let v = &self.value_grammars;
        if v.org_labels.len() < l.rows * l.cols.iter().max().unwrap() || v.event_labels.len() < l.rows {
            return bad("label pools are too small for the layout");
        }
        Ok(())
    }
}
