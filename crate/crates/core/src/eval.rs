//! Exact match and top-1 error, per-subset reports and the ablation table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heuristic::{category_oracle, no_text_oracle, HeuristicResolver};
use crate::screen::{Sample, Subset};
use crate::srr::{argmax_id, Model};

/// 1 when the thresholded selection equals the gold set.
pub fn exact_match(selected: &BTreeSet<u32>, gold: &BTreeSet<u32>) -> bool {
    selected == gold
}

/// True when the top-scoring candidate (ties to the lowest id) is not gold.
pub fn top1_error(ids: &[u32], scores: &[f64], gold: &BTreeSet<u32>) -> Result<bool> {
    if ids.is_empty() || ids.len() != scores.len() {
        return Err(Error::NoCandidates);
    }
    Ok(!gold.contains(&argmax_id(ids, scores)))
}

pub fn selected(ids: &[u32], scores: &[f64], threshold: f64) -> BTreeSet<u32> {
    ids.iter().zip(scores).filter(|(_, s)| **s > threshold).map(|(i, _)| *i).collect()
}

/// Anything that scores the candidates of a sample.
pub trait Resolver {
    fn name(&self) -> &str;
    /// One score per candidate, in `sample.candidates` order.
    fn score(&self, sample: &Sample) -> Result<Vec<f64>>;
}

impl Resolver for HeuristicResolver {
    fn name(&self) -> &str {
        "heuristic"
    }

    fn score(&self, sample: &Sample) -> Result<Vec<f64>> {
        self.resolve(&sample.request, sample)
    }
}

impl Resolver for Model {
    fn name(&self) -> &str {
        "srr"
    }

    fn score(&self, sample: &Sample) -> Result<Vec<f64>> {
        Model::score(self, sample)
    }
}

pub struct CategoryOracle;

impl Resolver for CategoryOracle {
    fn name(&self) -> &str {
        "cat-oracle"
    }

    fn score(&self, sample: &Sample) -> Result<Vec<f64>> {
        Ok(category_oracle(sample))
    }
}

pub struct NoTextOracle;

impl Resolver for NoTextOracle {
    fn name(&self) -> &str {
        "no-text-oracle"
    }

    fn score(&self, sample: &Sample) -> Result<Vec<f64>> {
        no_text_oracle(sample)
    }
}

/// Raw tallies; every reported percentage is derived from these.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub samples: usize,
    pub top1_errors: usize,
    pub exact_matches: usize,
    pub empty_selections: usize,
    pub failures: usize,
}

impl Counts {
    pub fn add(&mut self, top1_error: bool, exact: bool, empty: bool) {
        self.samples += 1;
        self.top1_errors += usize::from(top1_error);
        self.exact_matches += usize::from(exact);
        self.empty_selections += usize::from(empty);
    }

    pub fn add_failure(&mut self) {
        self.samples += 1;
        self.top1_errors += 1;
        self.failures += 1;
    }

    pub fn top1_error(&self) -> f64 {
        percent(self.top1_errors, self.samples)
    }

    pub fn exact_match(&self) -> f64 {
        percent(self.exact_matches, self.samples)
    }

    pub fn empty_selection_rate(&self) -> f64 {
        percent(self.empty_selections, self.samples)
    }
}

pub fn percent(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * k as f64 / n as f64
    }
}

/// `100·k/n` with one decimal, rounded half-up in exact integer arithmetic.
pub fn format_percent(k: usize, n: usize) -> String {
    if n == 0 {
        return "-".into();
    }
    let (k, n) = (k as u128, n as u128);
    let tenths = (2000 * k + n) / (2 * n);
    format!("{}.{}", tenths / 10, tenths % 10)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetrics {
    pub counts: Counts,
    pub top1_error: f64,
    pub exact_match: f64,
    pub empty_selection_rate: f64,
    pub mean_ms_per_sample: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolverReport {
    pub resolver: String,
    pub subsets: BTreeMap<Subset, SubsetMetrics>,
    /// Requests the resolver failed on; they count as errors.
    pub failed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub threshold: f64,
    pub corpus_sha256: Option<String>,
    pub model_sha256: Option<String>,
    pub resolvers: Vec<ResolverReport>,
}

/// Scores every sample; resolver errors count as failures, not aborts.
pub fn evaluate(resolver: &dyn Resolver, samples: &[Sample], threshold: f64) -> Result<ResolverReport> {
    if samples.is_empty() {
        return Err(Error::Validation("nothing to evaluate".into()));
    }
    let mut counts: BTreeMap<Subset, Counts> = BTreeMap::new();
    let mut secs: BTreeMap<Subset, f64> = BTreeMap::new();
    let mut failed = Vec::new();
    for s in samples {
        let ids: Vec<u32> = s.candidates.iter().map(|c| c.id).collect();
        let t = Instant::now();
        let scores = resolver.score(s);
        *secs.entry(s.subset).or_default() += t.elapsed().as_secs_f64();
        let c = counts.entry(s.subset).or_default();
        match scores.and_then(|sc| top1_error(&ids, &sc, &s.gold_ids).map(|e| (e, sc))) {
            Ok((err, sc)) => {
                let sel = selected(&ids, &sc, threshold);
                c.add(err, exact_match(&sel, &s.gold_ids), sel.is_empty());
            }
            Err(_) => {
                c.add_failure();
                failed.push(s.request.id.clone());
            }
        }
    }
    let subsets = counts
        .into_iter()
        .map(|(sub, c)| {
            let ms = 1000.0 * secs[&sub] / c.samples as f64;
            let m = SubsetMetrics {
                counts: c,
                top1_error: c.top1_error(),
                exact_match: c.exact_match(),
                empty_selection_rate: c.empty_selection_rate(),
                mean_ms_per_sample: ms,
            };
            (sub, m)
        })
        .collect();
    Ok(ResolverReport { resolver: resolver.name().to_string(), subsets, failed })
}

impl MetricsReport {
    pub fn get(&self, resolver: &str, subset: Subset) -> Option<&SubsetMetrics> {
        self.resolvers.iter().find(|r| r.resolver == resolver)?.subsets.get(&subset)
    }

    /// Fixed-width table, one block per subset.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:<16} {:>10} {:>7} {:>8} {:>7} {:>9}",
            "Dataset", "Model", "Top-1 Err", "EM", "Empty %", "N", "ms/req"
        );
        for sub in Subset::ALL {
            for r in &self.resolvers {
                let Some(m) = r.subsets.get(&sub) else { continue };
                let c = &m.counts;
                let flag = if r.failed.is_empty() { "" } else { " !" };
                let _ = writeln!(
                    out,
                    "{:<14} {:<16} {:>10} {:>7} {:>8} {:>7} {:>9.3}{flag}",
                    sub.as_str(),
                    r.resolver,
                    format_percent(c.top1_errors, c.samples),
                    format_percent(c.exact_matches, c.samples),
                    format_percent(c.empty_selections, c.samples),
                    c.samples,
                    m.mean_ms_per_sample,
                );
            }
        }
        for r in self.resolvers.iter().filter(|r| !r.failed.is_empty()) {
            let _ = writeln!(out, "! {} failed on {} requests", r.resolver, r.failed.len());
        }
        out
    }
}

/// One trained module subset evaluated on the descriptive test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub modules: Vec<String>,
    pub seed: u64,
    pub descriptive: Counts,
}

impl AblationResult {
    pub fn top1_error(&self) -> f64 {
        self.descriptive.top1_error()
    }

    fn key(&self) -> BTreeSet<&str> {
        self.modules.iter().map(String::as_str).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationResult>,
    pub full_model_first: bool,
    /// Single-module models not worse than a two-module model containing them.
    pub violations: Vec<String>,
}

/// Sorts the seven subsets by descriptive top-1 error and checks the
/// expected ordering.
pub fn report_ablation(results: &[AblationResult]) -> Result<AblationReport> {
    let keys: BTreeSet<BTreeSet<&str>> = results.iter().map(|r| r.key()).collect();
    if results.len() != 7 || keys.len() != 7 {
        return Err(Error::Validation(format!(
            "ablation needs the 7 distinct module subsets, got {}",
            results.len()
        )));
    }
    let mut rows = results.to_vec();
    rows.sort_by(|a, b| {
        (a.descriptive.top1_errors * b.descriptive.samples)
            .cmp(&(b.descriptive.top1_errors * a.descriptive.samples))
            .then(b.modules.len().cmp(&a.modules.len()))
    });
    let full_model_first = rows[0].modules.len() == 3;
    let mut violations = Vec::new();
    for single in results.iter().filter(|r| r.modules.len() == 1) {
        for pair in results.iter().filter(|r| r.modules.len() == 2 && r.key().is_superset(&single.key())) {
            if single.top1_error() <= pair.top1_error() {
                violations.push(format!(
                    "{} ({:.1}) is not worse than {} ({:.1})",
                    single.modules.join("+"),
                    single.top1_error(),
                    pair.modules.join("+"),
                    pair.top1_error()
                ));
            }
        }
    }
    Ok(AblationReport { rows, full_model_first, violations })
}

impl AblationReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<9} {:<9} {:<9} {:>10}", "Category", "Location", "Text", "Top-1 Err");
        for r in &self.rows {
            let mark = |m: &str| if r.modules.iter().any(|x| x == m) { "x" } else { "" };
            let c = &r.descriptive;
            let _ = writeln!(
                out,
                "{:<9} {:<9} {:<9} {:>10}",
                mark("cat"),
                mark("loc"),
                mark("text"),
                format_percent(c.top1_errors, c.samples)
            );
        }
        if !self.full_model_first {
            let _ = writeln!(out, "! full model is not the best row");
        }
        for v in &self.violations {
            let _ = writeln!(out, "! {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        let g: BTreeSet<u32> = [3].into();
        assert!(exact_match(&[3].into(), &g));
        assert!(!exact_match(&[3, 4].into(), &g));
        assert!(!exact_match(&BTreeSet::new(), &g));
        let ids = [0, 1, 2, 3, 4];
        assert!(top1_error(&ids, &[0.2; 5], &[2].into()).unwrap());
        assert!(!top1_error(&ids, &[0.0, 0.0, 0.9, 0.9, 0.0], &[2, 3].into()).unwrap());
    }

    #[test]
    fn half_up_formatting() {
        assert_eq!(format_percent(1, 8), "12.5");
        assert_eq!(format_percent(1, 80), "1.3");
        assert_eq!(format_percent(283, 2000), "14.2");
        assert_eq!(format_percent(2, 3), "66.7");
        assert_eq!(format_percent(0, 5), "0.0");
        assert_eq!(format_percent(5, 5), "100.0");
    }

    fn row(m: &[&str], errors: usize) -> AblationResult {
        AblationResult {
            modules: m.iter().map(|s| s.to_string()).collect(),
            seed: 0,
            descriptive: Counts { samples: 100, top1_errors: errors, ..Default::default() },
        }
    }

    #[test]
    fn ablation_ordering() {
        let rows = vec![
            row(&["cat"], 55),
            row(&["loc"], 70),
            row(&["text"], 40),
            row(&["cat", "loc"], 50),
            row(&["cat", "text"], 20),
            row(&["loc", "text"], 45),
            row(&["cat", "loc", "text"], 14),
        ];
        let r = report_ablation(&rows).unwrap();
        assert!(r.full_model_first);
        assert_eq!(r.rows.len(), 7);
        assert_eq!(r.violations.len(), 1, "{:?}", r.violations);
        assert!(r.violations[0].starts_with("text"));
        assert!(report_ablation(&rows[..6]).is_err());
    }
}
