//! The modular attention resolver.
//!
//! Request tokens are looked up in a hashed embedding table. A weight
//! block (mean-pool, two dense layers, softmax) mixes three module scores:
//!
//! - category: attended request vs. embedded category name;
//! - location: attended request vs. the entity's location features;
//! - text: string-matching features alone.
//!
//! The fused logit `w_cat·s_cat + w_loc·s_loc + w_text·s_text` goes through
//! a sigmoid and is compared against the threshold.

pub mod format;
pub mod forward;
pub mod params;

use std::collections::{BTreeSet, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{default_stopwords, location_features, text_match_features, LOC_DIM};
use crate::screen::{split_tokens, EntityCategory, Request, Sample};
pub use forward::{CandidateInputs, SampleInputs, CAT, LOC, TEXT};
pub use params::Params;

pub const MODULE_NAMES: [&str; 3] = ["cat", "loc", "text"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub vocab_buckets: usize,
    /// Attention width, also the width of the vectors each module matches.
    pub attention_dim: usize,
    pub threshold: f64,
    /// Modules allowed in the weight softmax (category, location, text).
    pub module_mask: [bool; 3],
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            hidden_dim: 128,
            vocab_buckets: 8192,
            attention_dim: 64,
            threshold: 0.7,
            module_mask: [true; 3],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.vocab_buckets == 0 || self.attention_dim == 0 {
            return Err(Error::Config("model dimensions must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} is outside (0, 1)", self.threshold)));
        }
        if !self.module_mask.iter().any(|m| *m) {
            return Err(Error::Config("at least one module must be enabled".into()));
        }
        Ok(())
    }

    /// Config restricted to the named modules (`cat`, `loc`, `text`).
    pub fn with_modules(&self, modules: &[&str]) -> Result<Self> {
        let mut mask = [false; 3];
        for m in modules {
            let i = MODULE_NAMES
                .iter()
                .position(|n| n == m)
                .ok_or_else(|| Error::Config(format!("unknown module {m:?}")))?;
            mask[i] = true;
        }
        let c = Self { module_mask: mask, ..self.clone() };
        c.validate()?;
        Ok(c)
    }
}

/// 64-bit FNV-1a.
fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn token_bucket(token: &str, buckets: usize) -> usize {
    (fnv1a(token) % buckets as u64) as usize
}

/// Per-dimension standardization of location features, fitted on the
/// training split so the location module sees inputs of unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocNorm {
    pub mean: Vec<f64>,
    /// Reciprocal standard deviation.
    pub scale: Vec<f64>,
}

/// Standard deviations below this are treated as this.
const MIN_STD: f64 = 1e-3;

impl Default for LocNorm {
    fn default() -> Self {
        Self { mean: vec![0.0; LOC_DIM], scale: vec![1.0; LOC_DIM] }
    }
}

impl LocNorm {
    /// Statistics over the candidates of samples that carry a screen;
    /// identity when there are none.
    pub fn fit(samples: &[Sample]) -> Self {
        let rows: Vec<Vec<f64>> = samples
            .iter()
            .filter_map(|s| s.screen.as_ref().map(|sc| (s, sc)))
            .flat_map(|(s, sc)| s.candidates.iter().map(move |e| location_features(e, Some(sc)).to_vec()))
            .collect();
        if rows.is_empty() {
            return Self::default();
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; LOC_DIM];
        for r in &rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; LOC_DIM];
        for r in &rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var.iter().map(|v| 1.0 / (v / n).sqrt().max(MIN_STD)).collect();
        Self { mean, scale }
    }

    pub fn apply(&self, mut x: Vec<f64>) -> Vec<f64> {
        for ((v, m), k) in x.iter_mut().zip(&self.mean).zip(&self.scale) {
            *v = (*v - m) * k;
        }
        x
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.mean.iter().chain(&self.scale).all(|x| x.is_finite());
        if self.mean.len() != LOC_DIM || self.scale.len() != LOC_DIM || !finite {
            return Err(Error::ShapeMismatch("location normalizer must hold finite mean and scale vectors".into()));
        }
        Ok(())
    }
}

/// Per-candidate scoring output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub ids: Vec<u32>,
    pub probabilities: Vec<f64>,
    pub argmax_id: u32,
    pub selected_ids: BTreeSet<u32>,
}

impl Prediction {
    /// Argmax with ties to the lowest id; selection is strictly above `threshold`.
    pub fn from_scores(ids: Vec<u32>, probabilities: Vec<f64>, threshold: f64) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::NoCandidates);
        }
        let argmax_id = argmax_id(&ids, &probabilities);
        let selected_ids =
            ids.iter().zip(&probabilities).filter(|(_, p)| **p > threshold).map(|(i, _)| *i).collect();
        Ok(Self { ids, probabilities, argmax_id, selected_ids })
    }
}

/// Highest score, ties broken by the lowest id. Panics on empty input.
pub fn argmax_id(ids: &[u32], scores: &[f64]) -> u32 {
    let mut best = (ids[0], scores[0]);
    for (&id, &s) in ids.iter().zip(scores).skip(1) {
        if s > best.1 || (s == best.1 && id < best.0) {
            best = (id, s);
        }
    }
    best.0
}

/// Per-candidate module breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateExplanation {
    pub id: u32,
    pub scores: [f64; 3],
    pub probability: f64,
}

/// Interpretability record for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub module_weights: [f64; 3],
    pub skipped: [bool; 3],
    pub category_attention: Vec<(String, f64)>,
    pub location_attention: Vec<(String, f64)>,
    pub candidates: Vec<CandidateExplanation>,
}

/// Modules kept when those weighing less than `eps` are skipped.
pub fn module_skip(weights: [f64; 3], eps: f64) -> [bool; 3] {
    [weights[0] >= eps, weights[1] >= eps, weights[2] >= eps]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params<f32>,
    pub loc_norm: LocNorm,
    category_tokens: [Vec<usize>; 5],
    stopwords: HashSet<String>,
}

impl Model {
    pub fn from_params(config: ModelConfig, params: Params<f32>) -> Self {
        let category_tokens = category_tokens(&config);
        Self { config, params, loc_norm: LocNorm::default(), category_tokens, stopwords: default_stopwords().clone() }
    }

    /// Freshly initialized model, deterministic in `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = Params::init(&mut ChaCha8Rng::seed_from_u64(seed), &config);
        Ok(Self::from_params(config, params))
    }

    pub fn category_tokens(&self) -> &[Vec<usize>; 5] {
        &self.category_tokens
    }

    pub fn token_ids(&self, request: &Request) -> Vec<usize> {
        request.tokens.iter().map(|t| token_bucket(t, self.config.vocab_buckets)).collect()
    }

    pub fn inputs(&self, sample: &Sample) -> Result<SampleInputs> {
        sample_inputs(&self.config, &self.loc_norm, sample, &self.stopwords)
    }

    /// Probability per candidate in `sample.candidates` order.
    pub fn score(&self, sample: &Sample) -> Result<Vec<f64>> {
        self.score_inputs(&self.inputs(sample)?, 0.0).map(|(p, _)| p)
    }

    /// Scores with modules below `skip_eps` weight skipped. Also returns
    /// the module weights.
    pub fn score_inputs(&self, inputs: &SampleInputs, skip_eps: f64) -> Result<(Vec<f64>, [f64; 3])> {
        let (probs, w, _) = self.run(inputs, skip_eps)?;
        Ok((probs, w))
    }

    fn run(
        &self,
        inputs: &SampleInputs,
        skip_eps: f64,
    ) -> Result<(Vec<f64>, [f64; 3], (forward::RequestTrace<f32>, Vec<forward::CandidateTrace<f32>>))> {
        if inputs.candidates.is_empty() {
            return Err(Error::NoCandidates);
        }
        let req0 = forward::forward_request(&self.params, &self.config, inputs, &self.category_tokens, [false; 3]);
        let w = req0.w.map(f64::from);
        let keep = module_skip(w, skip_eps);
        let req = if keep.iter().all(|k| *k) {
            req0
        } else {
            let skip = [!keep[0], !keep[1], !keep[2]];
            forward::forward_request(&self.params, &self.config, inputs, &self.category_tokens, skip)
        };
        let cands: Vec<_> =
            inputs.candidates.iter().map(|c| forward::forward_candidate(&self.params, &self.config, &req, c)).collect();
        let probs = cands.iter().map(|c| f64::from(c.p)).collect();
        Ok((probs, w, (req, cands)))
    }

    pub fn resolve(&self, sample: &Sample) -> Result<Prediction> {
        let probs = self.score(sample)?;
        let ids = sample.candidates.iter().map(|c| c.id).collect();
        Prediction::from_scores(ids, probs, self.config.threshold)
    }

    pub fn explain(&self, sample: &Sample, skip_eps: f64) -> Result<Explanation> {
        let inputs = self.inputs(sample)?;
        let (probs, w, (req, cands)) = self.run(&inputs, skip_eps)?;
        let attention = |m: usize| -> Vec<(String, f64)> {
            req.att[m]
                .as_ref()
                .map(|a| {
                    sample.request.tokens.iter().cloned().zip(a.alpha.iter().map(|x| f64::from(*x))).collect()
                })
                .unwrap_or_default()
        };
        Ok(Explanation {
            module_weights: w,
            skipped: [!req.active[0], !req.active[1], !req.active[2]],
            category_attention: attention(CAT),
            location_attention: attention(LOC),
            candidates: sample
                .candidates
                .iter()
                .zip(cands.iter().zip(probs))
                .map(|(e, (c, p))| CandidateExplanation { id: e.id, scores: c.s.map(f64::from), probability: p })
                .collect(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        format::serialize(&self.config, &self.loc_norm, &self.params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (config, loc_norm, params) = format::deserialize(bytes)?;
        Ok(Self { loc_norm, ..Self::from_params(config, params) })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Token buckets of each category's display name.
pub fn category_tokens(config: &ModelConfig) -> [Vec<usize>; 5] {
    EntityCategory::ALL.map(|c| {
        split_tokens(c.display_name()).iter().map(|t| token_bucket(t, config.vocab_buckets)).collect()
    })
}

pub fn sample_inputs(
    config: &ModelConfig,
    norm: &LocNorm,
    sample: &Sample,
    stopwords: &HashSet<String>,
) -> Result<SampleInputs> {
    if sample.request.tokens.is_empty() {
        return Err(Error::EmptyRequest);
    }
    let tokens = sample.request.tokens.iter().map(|t| token_bucket(t, config.vocab_buckets)).collect();
    let screen = sample.screen.as_ref();
    let candidates = sample
        .candidates
        .iter()
        .map(|e| CandidateInputs {
            id: e.id,
            category: e.category.index(),
            loc: norm.apply(location_features(e, screen).to_vec()),
            text: text_match_features(&sample.request, e, screen, stopwords).to_vec(),
        })
        .collect();
    Ok(SampleInputs { tokens, candidates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::dummy_candidates;
    use crate::screen::Subset;

    fn sample(raw: &str) -> Sample {
        Sample {
            request: Request::new("r", raw).unwrap(),
            screen: None,
            candidates: dummy_candidates(),
            gold_ids: [0].into(),
            supervision_tag: None,
            subset: Subset::CategoryLevel,
            reference_type: None,
            reference: None,
        }
    }

    #[test]
    fn loc_norm_identity_without_screens() {
        let n = LocNorm::fit(&[sample("call this number")]);
        assert_eq!(n, LocNorm::default());
        let x: Vec<f64> = (0..LOC_DIM).map(|i| i as f64 * 0.1).collect();
        assert_eq!(n.apply(x.clone()), x);
    }

    #[test]
    fn loc_norm_standardizes_training_features() {
        let cfg = crate::corpus::GeneratorConfig {
            n_category_samples: 50,
            n_descriptive_screens: 40,
            ..Default::default()
        };
        let (corpus, _) = crate::corpus::generate_corpus(&cfg).unwrap();
        let norm = LocNorm::fit(&corpus.train);
        norm.validate().unwrap();
        let rows: Vec<Vec<f64>> = corpus
            .train
            .iter()
            .filter_map(|s| s.screen.as_ref().map(|sc| (s, sc)))
            .flat_map(|(s, sc)| s.candidates.iter().map(|e| norm.apply(location_features(e, Some(sc)).to_vec())))
            .collect();
        let n = rows.len() as f64;
        for d in 0..LOC_DIM {
            let mean = rows.iter().map(|r| r[d]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9, "dim {d} mean {mean}");
            assert!(var < 1.0 + 1e-9 && (var > 1.0 - 1e-9 || var == 0.0 || norm.scale[d] == 1.0 / MIN_STD), "dim {d} var {var}");
        }
    }

    #[test]
    fn zero_params_give_half() {
        let c = ModelConfig { vocab_buckets: 64, ..ModelConfig::default() };
        let m = Model::from_params(c.clone(), Params::zeros(&c));
        let p = m.score(&sample("call this number")).unwrap();
        assert!(p.iter().all(|x| *x == 0.5));
        let e = m.explain(&sample("call this number"), 0.0).unwrap();
        assert!(e.module_weights.iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-6));
    }

    #[test]
    fn prediction_ties_and_threshold() {
        let p = Prediction::from_scores(vec![3, 1, 2], vec![0.9, 0.9, 0.2], 0.7).unwrap();
        assert_eq!(p.argmax_id, 1);
        assert_eq!(p.selected_ids, [1, 3].into());
        let p = Prediction::from_scores(vec![0], vec![0.7], 0.7).unwrap();
        assert!(p.selected_ids.is_empty());
        assert!(matches!(Prediction::from_scores(vec![], vec![], 0.7), Err(Error::NoCandidates)));
    }

    #[test]
    fn module_skip_examples() {
        assert_eq!(module_skip([0.98, 0.01, 0.01], 0.0), [true; 3]);
        assert_eq!(module_skip([0.98, 0.01, 0.01], 0.05), [true, false, false]);
    }

    #[test]
    fn config_modules() {
        let c = ModelConfig::default().with_modules(&["cat", "text"]).unwrap();
        assert_eq!(c.module_mask, [true, false, true]);
        assert!(ModelConfig::default().with_modules(&[]).is_err());
        assert!(ModelConfig::default().with_modules(&["vision"]).is_err());
    }

    #[test]
    fn category_scores_shared_within_request() {
        let c = ModelConfig { vocab_buckets: 256, ..ModelConfig::default() };
        let m = Model::new(c, 3).unwrap();
        let mut s = sample("email this");
        let mut extra = s.candidates[1].clone();
        extra.id = 9;
        s.candidates.push(extra);
        let e = m.explain(&s, 0.0).unwrap();
        assert_eq!(e.candidates[1].scores[CAT], e.candidates[5].scores[CAT]);
        assert_eq!(e.candidates[1].probability, e.candidates[5].probability);
    }
}
