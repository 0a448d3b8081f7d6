//! Forward pass, generic over the float type so gradients can be checked
//! in `f64` against the `f32` production path.
//!
//! Traces keep every intermediate the backward pass needs.

use num_traits::Float;

use super::params::{Attention, MlpTrace, Params};
use super::ModelConfig;

pub const CAT: usize = 0;
pub const LOC: usize = 1;
pub const TEXT: usize = 2;

/// Per-candidate model inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateInputs {
    pub id: u32,
    pub category: usize,
    pub loc: Vec<f64>,
    pub text: Vec<f64>,
}

/// Everything the network reads from a sample, precomputed once.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleInputs {
    pub tokens: Vec<usize>,
    pub candidates: Vec<CandidateInputs>,
}

#[derive(Debug, Clone)]
pub struct AttentionTrace<T> {
    /// `tanh(W h_i)` per token, `[n_tokens × attention_dim]`.
    pub act: Vec<T>,
    pub alpha: Vec<T>,
    pub out: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct CategoryTrace<T> {
    pub emb: Vec<T>,
    pub mlp: MlpTrace<T>,
}

/// Request-level quantities shared by all candidates.
#[derive(Debug, Clone)]
pub struct RequestTrace<T> {
    /// `[n_tokens × embed_dim]`
    pub emb: Vec<T>,
    pub pooled: Vec<T>,
    pub weight: MlpTrace<T>,
    pub w: [T; 3],
    pub att: [Option<AttentionTrace<T>>; 2],
    pub request_mlp: [Option<MlpTrace<T>>; 2],
    pub categories: [Option<CategoryTrace<T>>; 5],
    /// Modules whose scores enter the fusion.
    pub active: [bool; 3],
}

#[derive(Debug, Clone)]
pub struct CandidateTrace<T> {
    pub loc: Option<MlpTrace<T>>,
    pub text: Option<MlpTrace<T>>,
    pub s: [T; 3],
    pub z: T,
    pub p: T,
}

fn c<T: Float>(x: f64) -> T {
    T::from(x).unwrap()
}

pub fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

pub fn sigmoid<T: Float>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable softmax over the entries where `mask` is set; the
/// others get exactly zero.
pub fn masked_softmax<T: Float>(logits: &[T], mask: &[bool]) -> Vec<T> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .fold(T::neg_infinity(), |a, (x, _)| a.max(*x));
    let exps: Vec<T> =
        logits.iter().zip(mask).map(|(x, m)| if *m { (*x - max).exp() } else { T::zero() }).collect();
    let sum = exps.iter().fold(T::zero(), |a, x| a + *x);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Rows of the embedding table for `tokens`, `[n_tokens × embed_dim]`.
pub fn embed_tokens<T: Float>(p: &Params<T>, d: usize, tokens: &[usize]) -> Vec<T> {
    let mut out = Vec::with_capacity(tokens.len() * d);
    for &t in tokens {
        out.extend_from_slice(&p.embed[t * d..(t + 1) * d]);
    }
    out
}

pub fn mean_rows<T: Float>(rows: &[T], d: usize) -> Vec<T> {
    let n = rows.len() / d;
    let mut out = vec![T::zero(); d];
    for r in rows.chunks(d) {
        for (o, x) in out.iter_mut().zip(r) {
            *o = *o + *x;
        }
    }
    let inv = T::one() / c::<T>(n as f64);
    out.iter_mut().for_each(|o| *o = *o * inv);
    out
}

pub fn attend<T: Float>(att: &Attention<T>, emb: &[T], d: usize) -> AttentionTrace<T> {
    let a_dim = att.v.len();
    let n = emb.len() / d;
    let mut act = Vec::with_capacity(n * a_dim);
    let mut logits = Vec::with_capacity(n);
    for h in emb.chunks(d) {
        let mut a = T::zero();
        for k in 0..a_dim {
            let t = dot(&att.w[k * d..(k + 1) * d], h).tanh();
            act.push(t);
            a = a + att.v[k] * t;
        }
        logits.push(a);
    }
    let alpha = masked_softmax(&logits, &vec![true; n]);
    let mut out = vec![T::zero(); d];
    for (h, &al) in emb.chunks(d).zip(&alpha) {
        for (o, x) in out.iter_mut().zip(h) {
            *o = *o + al * *x;
        }
    }
    AttentionTrace { act, alpha, out }
}

/// Mean embedding of each category's display-name tokens.
pub fn category_embedding<T: Float>(p: &Params<T>, d: usize, name_tokens: &[usize]) -> Vec<T> {
    mean_rows(&embed_tokens(p, d, name_tokens), d)
}

/// Request-level forward. `skip` marks modules dropped at inference time;
/// `needed` lists candidate categories that need a category embedding.
pub fn forward_request<T: Float>(
    p: &Params<T>,
    cfg: &ModelConfig,
    inputs: &SampleInputs,
    category_tokens: &[Vec<usize>; 5],
    skip: [bool; 3],
) -> RequestTrace<T> {
    let d = cfg.embed_dim;
    let net = &p.net;
    let emb = embed_tokens(p, d, &inputs.tokens);
    let pooled = mean_rows(&emb, d);
    let weight = net.weight.forward(&pooled);
    let mask = cfg.module_mask;
    let w_vec = masked_softmax(&weight.out, &mask);
    let w = [w_vec[0], w_vec[1], w_vec[2]];
    let active = [mask[0] && !skip[0], mask[1] && !skip[1], mask[2] && !skip[2]];

    let mut att = [None, None];
    let mut request_mlp = [None, None];
    for (m, module) in [(CAT, &net.att_cat), (LOC, &net.att_loc)] {
        if active[m] {
            let a = attend(module, &emb, d);
            let mlp = if m == CAT { &net.cat_request } else { &net.loc_request };
            request_mlp[m] = Some(mlp.forward(&a.out));
            att[m] = Some(a);
        }
    }
    let mut categories: [Option<CategoryTrace<T>>; 5] = Default::default();
    if active[CAT] {
        for cand in &inputs.candidates {
            let k = cand.category;
            if categories[k].is_none() {
                let e = category_embedding(p, d, &category_tokens[k]);
                let mlp = net.cat_entity.forward(&e);
                categories[k] = Some(CategoryTrace { emb: e, mlp });
            }
        }
    }
    RequestTrace { emb, pooled, weight, w, att, request_mlp, categories, active }
}

pub fn forward_candidate<T: Float>(
    p: &Params<T>,
    cfg: &ModelConfig,
    req: &RequestTrace<T>,
    cand: &CandidateInputs,
) -> CandidateTrace<T> {
    let net = &p.net;
    let scale = c::<T>(1.0 / (cfg.attention_dim as f64).sqrt());
    let mut s = [T::zero(); 3];
    if req.active[CAT] {
        let ent = &req.categories[cand.category].as_ref().expect("category traced").mlp.out;
        let rq = &req.request_mlp[CAT].as_ref().expect("request traced").out;
        s[CAT] = dot(ent, rq) * scale;
    }
    let mut loc = None;
    if req.active[LOC] {
        let x: Vec<T> = cand.loc.iter().map(|v| c(*v)).collect();
        let tr = net.loc_entity.forward(&x);
        let rq = &req.request_mlp[LOC].as_ref().expect("request traced").out;
        s[LOC] = dot(&tr.out, rq) * scale;
        loc = Some(tr);
    }
    let mut text = None;
    if req.active[TEXT] {
        let x: Vec<T> = cand.text.iter().map(|v| c(*v)).collect();
        let tr = net.text.forward(&x);
        s[TEXT] = tr.out[0];
        text = Some(tr);
    }
    let z = req.w[0] * s[0] + req.w[1] * s[1] + req.w[2] * s[2];
    CandidateTrace { loc, text, s, z, p: sigmoid(z) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_properties() {
        let w = masked_softmax(&[0.0f64, 0.0, 0.0], &[true; 3]);
        assert!(w.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let w = masked_softmax(&[5.0f64, 1.0, -2.0], &[true, false, true]);
        assert_eq!(w[1], 0.0);
        assert!((w[0] + w[2] - 1.0).abs() < 1e-12);
        let w = masked_softmax(&[1000.0f32, -1000.0, 0.0], &[true; 3]);
        assert!(w.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0 && sigmoid(800.0f64) <= 1.0);
        assert!((sigmoid(0.6f64) - 0.645_656_306_225_795).abs() < 1e-12);
    }

    #[test]
    fn single_token_attention_is_identity() {
        let att = Attention { w: vec![0.3f64, -0.2, 0.1, 0.5], v: vec![1.0, -1.0] };
        let tr = attend(&att, &[0.7, -0.4], 2);
        assert_eq!(tr.alpha, vec![1.0]);
        assert_eq!(tr.out, vec![0.7, -0.4]);
    }

    #[test]
    fn identical_tokens_attend_uniformly() {
        let att = Attention { w: vec![0.3f64, -0.2, 0.1, 0.5], v: vec![1.0, -1.0] };
        let tr = attend(&att, &[0.7, -0.4, 0.7, -0.4, 0.7, -0.4], 2);
        assert!(tr.alpha.iter().all(|a| (a - 1.0 / 3.0).abs() < 1e-15));
    }
}
