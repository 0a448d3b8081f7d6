//! Training: pair sampling, Adam, early stopping and module ablations.

pub mod grad;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::eval::{exact_match, selected, top1_error, AblationResult, Counts};
use crate::features::default_stopwords;
use crate::screen::{Sample, Subset};
use crate::srr::forward::{forward_candidate, forward_request, SampleInputs};
use crate::srr::{category_tokens, sample_inputs, LocNorm, Model, ModelConfig, Params};
pub use grad::{loss, loss_and_grad, Example, Grads};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new best validation top-1 error before stopping.
    pub patience: usize,
    pub aux_loss_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 30,
            patience: 5,
            aux_loss_weight: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config("Adam needs beta1, beta2 in [0, 1) and epsilon > 0".into()));
        }
        if !(self.aux_loss_weight >= 0.0) {
            return Err(Error::Config("aux_loss_weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// One positive per gold candidate, each followed by a uniformly drawn
/// non-gold candidate when there is one. Pairs hold candidate indices.
pub fn make_pairs<R: Rng>(sample: &Sample, rng: &mut R) -> Vec<(usize, bool)> {
    let gold: Vec<usize> =
        (0..sample.candidates.len()).filter(|&i| sample.gold_ids.contains(&sample.candidates[i].id)).collect();
    let other: Vec<usize> =
        (0..sample.candidates.len()).filter(|&i| !sample.gold_ids.contains(&sample.candidates[i].id)).collect();
    let mut out = Vec::with_capacity(gold.len() * 2);
    for g in gold {
        out.push((g, true));
        if let Some(&n) = other.choose(rng) {
            out.push((n, false));
        }
    }
    out
}

/// First and second moment estimates. Embedding rows that never received
/// a gradient keep zero moments, so their update is exactly zero and they
/// are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Params<f32>,
    pub v: Params<f32>,
    pub live_rows: BTreeSet<usize>,
}

impl AdamState {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self { step: 0, m: Params::zeros(cfg), v: Params::zeros(cfg), live_rows: BTreeSet::new() }
    }
}

fn adam_update(p: &mut [f32], g: &[f32], m: &mut [f32], v: &mut [f32], k: &AdamConsts) {
    for i in 0..p.len() {
        m[i] = k.b1 * m[i] + (1.0 - k.b1) * g[i];
        v[i] = k.b2 * v[i] + (1.0 - k.b2) * g[i] * g[i];
        let mh = m[i] / k.c1;
        let vh = v[i] / k.c2;
        p[i] -= k.lr * mh / (vh.sqrt() + k.eps);
    }
}

struct AdamConsts {
    lr: f32,
    b1: f32,
    b2: f32,
    eps: f32,
    c1: f32,
    c2: f32,
}

/// Bias-corrected Adam step.
pub fn adam_step(
    params: &mut Params<f32>,
    grads: &Grads<f32>,
    state: &mut AdamState,
    config: &TrainConfig,
    model: &ModelConfig,
) -> Result<()> {
    let d = model.embed_dim;
    let shapes_ok = params.embed.len() == state.m.embed.len()
        && params.net.tensors().iter().zip(grads.net.tensors()).all(|(a, b)| a.len() == b.len())
        && params.net.tensors().iter().zip(state.m.net.tensors()).all(|(a, b)| a.len() == b.len())
        && grads.embed.iter().all(|(r, g)| (r + 1) * d <= params.embed.len() && g.len() == d);
    if !shapes_ok {
        return Err(Error::ShapeMismatch("Adam state, gradients and parameters disagree".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let k = AdamConsts {
        lr: config.learning_rate as f32,
        b1: config.beta1 as f32,
        b2: config.beta2 as f32,
        eps: config.epsilon as f32,
        c1: (1.0 - config.beta1.powi(t)) as f32,
        c2: (1.0 - config.beta2.powi(t)) as f32,
    };
    for ((p, g), (m, v)) in params
        .net
        .tensors_mut()
        .into_iter()
        .zip(grads.net.tensors())
        .zip(state.m.net.tensors_mut().into_iter().zip(state.v.net.tensors_mut()))
    {
        adam_update(p, g, m, v, &k);
    }
    state.live_rows.extend(grads.embed.keys().copied());
    let zero = vec![0.0f32; d];
    for &row in &state.live_rows {
        let r = row * d..(row + 1) * d;
        let g = grads.embed.get(&row).unwrap_or(&zero);
        adam_update(&mut params.embed[r.clone()], g, &mut state.m.embed[r.clone()], &mut state.v.embed[r], &k);
    }
    Ok(())
}

/// A sample with its model inputs precomputed.
#[derive(Debug, Clone)]
pub struct Prepared<'a> {
    pub sample: &'a Sample,
    pub inputs: SampleInputs,
    pub ids: Vec<u32>,
}

pub fn prepare<'a>(cfg: &ModelConfig, norm: &LocNorm, samples: &'a [Sample]) -> Result<Vec<Prepared<'a>>> {
    let stop = default_stopwords();
    samples
        .iter()
        .map(|s| {
            let inputs = sample_inputs(cfg, norm, s, stop)?;
            Ok(Prepared { sample: s, inputs, ids: s.candidates.iter().map(|c| c.id).collect() })
        })
        .collect()
}

/// Validation metrics of one epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub overall: Counts,
    pub category_level: Counts,
    pub descriptive: Counts,
    /// Share of samples whose largest module weight is the module their
    /// reference type calls for.
    pub module_weight_accuracy: f64,
}

/// Scores prepared samples with `params`.
pub fn evaluate_prepared(
    params: &Params<f32>,
    cfg: &ModelConfig,
    cat_tokens: &[Vec<usize>; 5],
    data: &[Prepared<'_>],
) -> EvalSummary {
    let mut s = EvalSummary::default();
    let (mut tagged, mut agree) = (0usize, 0usize);
    for p in data {
        let req = forward_request(params, cfg, &p.inputs, cat_tokens, [false; 3]);
        let probs: Vec<f64> =
            p.inputs.candidates.iter().map(|c| f64::from(forward_candidate(params, cfg, &req, c).p)).collect();
        let err = top1_error(&p.ids, &probs, &p.sample.gold_ids).unwrap_or(true);
        let sel = selected(&p.ids, &probs, cfg.threshold);
        let em = exact_match(&sel, &p.sample.gold_ids);
        s.overall.add(err, em, sel.is_empty());
        match p.sample.subset {
            Subset::CategoryLevel => s.category_level.add(err, em, sel.is_empty()),
            Subset::Descriptive => s.descriptive.add(err, em, sel.is_empty()),
        }
        if let Some(tag) = p.sample.reference_type.map(|r| r.supervision_tag().module_index()) {
            tagged += 1;
            let best = (0..3).fold(0, |b, m| if req.w[m] > req.w[b] { m } else { b });
            agree += usize::from(best == tag);
        }
    }
    s.module_weight_accuracy = crate::eval::percent(agree, tagged);
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss; absent for epoch 0, the untrained model.
    pub train_loss: Option<f64>,
    pub val_top1_error: f64,
    pub val_exact_match: f64,
    pub val_descriptive_top1_error: f64,
    pub val_category_top1_error: f64,
    pub val_module_weight_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (lowest val top-1 error, earliest on ties).
    pub selected_epoch: usize,
}

fn record(epoch: usize, train_loss: Option<f64>, e: &EvalSummary) -> EpochRecord {
    EpochRecord {
        epoch,
        train_loss,
        val_top1_error: e.overall.top1_error(),
        val_exact_match: e.overall.exact_match(),
        val_descriptive_top1_error: e.descriptive.top1_error(),
        val_category_top1_error: e.category_level.top1_error(),
        val_module_weight_accuracy: e.module_weight_accuracy,
    }
}

/// Trains on `corpus.train` (both subsets), early-stopping on `corpus.val`.
pub fn train(corpus: &Corpus, model_config: &ModelConfig, config: &TrainConfig) -> Result<(Model, TrainHistory)> {
    train_with_progress(corpus, model_config, config, |_| {})
}

pub fn train_with_progress(
    corpus: &Corpus,
    model_config: &ModelConfig,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, TrainHistory)> {
    config.validate()?;
    model_config.validate()?;
    if corpus.train.is_empty() || corpus.val.is_empty() || corpus.test.is_empty() {
        return Err(Error::Validation("train, val and test splits must all be non-empty".into()));
    }
    let mut model = Model::new(model_config.clone(), config.seed)?;
    model.loc_norm = LocNorm::fit(&corpus.train);
    let cat_tokens = category_tokens(model_config);
    let train_set = prepare(model_config, &model.loc_norm, &corpus.train)?;
    let val_set = prepare(model_config, &model.loc_norm, &corpus.val)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5EED));
    let mut state = AdamState::new(model_config);

    let e0 = evaluate_prepared(&model.params, model_config, &cat_tokens, &val_set);
    let mut epochs = vec![record(0, None, &e0)];
    on_epoch(&epochs[0]);
    let mut best = (e0.overall.top1_errors, 0usize, model.params.clone());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0f64, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let pairs: Vec<Vec<(usize, bool)>> =
                chunk.iter().map(|&i| make_pairs(train_set[i].sample, &mut rng)).collect();
            let batch: Vec<Example<'_>> = chunk
                .iter()
                .zip(&pairs)
                .map(|(&i, pr)| Example {
                    inputs: &train_set[i].inputs,
                    pairs: pr,
                    tag: train_set[i].sample.supervision_tag.map(|t| t.module_index()),
                })
                .collect();
            let (l, g) = loss_and_grad(&model.params, model_config, &cat_tokens, &batch, config.aux_loss_weight);
            adam_step(&mut model.params, &g, &mut state, config, model_config)?;
            loss_sum += f64::from(l);
            batches += 1;
        }
        let e = evaluate_prepared(&model.params, model_config, &cat_tokens, &val_set);
        let rec = record(epoch, Some(loss_sum / batches.max(1) as f64), &e);
        on_epoch(&rec);
        epochs.push(rec);
        if e.overall.top1_errors < best.0 {
            best = (e.overall.top1_errors, epoch, model.params.clone());
        } else if epoch - best.1 >= config.patience {
            break;
        }
    }
    model.params = best.2;
    Ok((model, TrainHistory { epochs, selected_epoch: best.1 }))
}

/// Trains a model restricted to `modules` and scores it on the
/// descriptive test split.
pub fn ablate(
    corpus: &Corpus,
    model_config: &ModelConfig,
    config: &TrainConfig,
    modules: &[&str],
) -> Result<(AblationResult, Model)> {
    if modules.is_empty() {
        return Err(Error::Config("ablation needs at least one module".into()));
    }
    let cfg = model_config.with_modules(modules)?;
    let (model, _) = train(corpus, &cfg, config)?;
    let test: Vec<Sample> = corpus.test.iter().filter(|s| s.subset == Subset::Descriptive).cloned().collect();
    let prepared = prepare(&cfg, &model.loc_norm, &test)?;
    let summary = evaluate_prepared(&model.params, &cfg, &category_tokens(&cfg), &prepared);
    let mut names: Vec<String> = modules.iter().map(|m| m.to_string()).collect();
    names.sort_by_key(|m| crate::srr::MODULE_NAMES.iter().position(|n| n == m));
    names.dedup();
    Ok((AblationResult { modules: names, seed: config.seed, descriptive: summary.descriptive }, model))
}

/// The seven non-empty module subsets.
pub fn module_subsets() -> Vec<Vec<&'static str>> {
    (1u8..8)
        .map(|bits| {
            crate::srr::MODULE_NAMES.iter().enumerate().filter(|(i, _)| bits & (1 << i) != 0).map(|(_, n)| *n).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::dummy_candidates;
    use crate::screen::Request;

    fn sample(gold: &[u32]) -> Sample {
        Sample {
            request: Request::new("r", "take me there").unwrap(),
            screen: None,
            candidates: dummy_candidates(),
            gold_ids: gold.iter().copied().collect(),
            supervision_tag: None,
            subset: Subset::CategoryLevel,
            reference_type: None,
            reference: None,
        }
    }

    #[test]
    fn pair_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = make_pairs(&sample(&[2]), &mut rng);
        assert_eq!(p.len(), 2);
        assert_eq!(p[0], (2, true));
        assert!(!p[1].1 && p[1].0 != 2);
        let p = make_pairs(&sample(&[2, 3]), &mut rng);
        assert_eq!(p.len(), 4);
        assert_eq!(p.iter().filter(|x| x.1).count(), 2);
        let p = make_pairs(&sample(&[0, 1, 2, 3, 4]), &mut rng);
        assert_eq!(p.len(), 5);
        assert!(p.iter().all(|x| x.1));
    }

    #[test]
    fn subsets() {
        let s = module_subsets();
        assert_eq!(s.len(), 7);
        assert!(s.contains(&vec!["cat", "loc", "text"]));
        assert!(s.contains(&vec!["loc"]));
    }

    fn tiny() -> ModelConfig {
        ModelConfig { vocab_buckets: 64, embed_dim: 8, hidden_dim: 8, attention_dim: 4, ..Default::default() }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let cfg = tiny();
        let mut p: Params<f32> = Params::init(&mut ChaCha8Rng::seed_from_u64(1), &cfg);
        let before = p.clone();
        let mut st = AdamState::new(&cfg);
        adam_step(&mut p, &Grads::zeros(&cfg), &mut st, &TrainConfig::default(), &cfg).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = tiny();
        let mut p: Params<f32> = Params::zeros(&cfg);
        let mut g = Grads::zeros(&cfg);
        g.net.text.l2.b[0] = 0.3;
        g.net.text.l2.b[0] = 0.3;
        g.embed.insert(5, vec![-2.0; 8]);
        let tc = TrainConfig::default();
        let mut st = AdamState::new(&cfg);
        adam_step(&mut p, &g, &mut st, &tc, &cfg).unwrap();
        assert!((p.net.text.l2.b[0] + 4e-4).abs() < 1e-7);
        assert!((p.embed[5 * 8] - 4e-4).abs() < 1e-7);
        assert_eq!(p.embed[4 * 8], 0.0);
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let cfg = tiny();
        let mut p: Params<f32> = Params::zeros(&cfg);
        let mut g = Grads::zeros(&cfg);
        g.embed.insert(10_000, vec![0.0; 8]);
        let mut st = AdamState::new(&cfg);
        assert!(adam_step(&mut p, &g, &mut st, &TrainConfig::default(), &cfg).is_err());
    }
}
