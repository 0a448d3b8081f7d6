//! Hand-derived backward pass of the SRR loss.

use std::collections::BTreeMap;

use num_traits::Float;

use crate::srr::forward::{
    forward_candidate, forward_request, AttentionTrace, CandidateTrace, RequestTrace, SampleInputs, CAT, LOC,
    TEXT,
};
use crate::srr::params::{Attention, Mlp, MlpTrace, Net, Params};
use crate::srr::ModelConfig;

/// Probabilities are clamped to `[P_MIN, 1 − P_MIN]` before the log.
pub const P_MIN: f64 = 1e-7;

/// Gradient of the loss; embedding rows are stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub embed: BTreeMap<usize, Vec<T>>,
    pub net: Net<T>,
}

impl<T: Float> Grads<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self { embed: BTreeMap::new(), net: Net::zeros(cfg) }
    }

    /// Dense view of the embedding gradient.
    pub fn embed_dense(&self, cfg: &ModelConfig) -> Vec<T> {
        let d = cfg.embed_dim;
        let mut out = vec![T::zero(); cfg.vocab_buckets * d];
        for (row, g) in &self.embed {
            out[row * d..(row + 1) * d].copy_from_slice(g);
        }
        out
    }

    fn embed_row(&mut self, row: usize, d: usize) -> &mut Vec<T> {
        self.embed.entry(row).or_insert_with(|| vec![T::zero(); d])
    }
}

/// One training example: prepared inputs, the pairs drawn for it and the
/// module it supervises, if tagged.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub inputs: &'a SampleInputs,
    /// `(candidate index, label)`
    pub pairs: &'a [(usize, bool)],
    pub tag: Option<usize>,
}

fn c<T: Float>(x: f64) -> T {
    T::from(x).unwrap()
}

fn clamp_p<T: Float>(p: T) -> T {
    p.max(c(P_MIN)).min(c(1.0 - P_MIN))
}

/// Binary cross-entropy on the clamped probability and its derivative
/// with respect to the logit.
pub fn bce<T: Float>(p: T, label: bool) -> (T, T) {
    let pc = clamp_p(p);
    let y = if label { T::one() } else { T::zero() };
    let loss = -(y * pc.ln() + (T::one() - y) * (T::one() - pc).ln());
    let inside = p > c(P_MIN) && p < c(1.0 - P_MIN);
    (loss, if inside { p - y } else { T::zero() })
}

/// `dy` flows back through `l2(tanh(l1 x))`; returns `dx` when asked.
pub fn mlp_backward<T: Float>(
    m: &Mlp<T>,
    g: &mut Mlp<T>,
    x: &[T],
    tr: &MlpTrace<T>,
    dy: &[T],
    want_dx: bool,
) -> Option<Vec<T>> {
    let (n_h, n_in) = (m.l1.n_out, m.l1.n_in);
    let mut dh = vec![T::zero(); n_h];
    for (o, &d) in dy.iter().enumerate() {
        if d == T::zero() {
            continue;
        }
        g.l2.b[o] = g.l2.b[o] + d;
        let row = o * n_h;
        for j in 0..n_h {
            g.l2.w[row + j] = g.l2.w[row + j] + d * tr.hidden[j];
            dh[j] = dh[j] + d * m.l2.w[row + j];
        }
    }
    let mut dx = if want_dx { Some(vec![T::zero(); n_in]) } else { None };
    for j in 0..n_h {
        let h = tr.hidden[j];
        let dpre = dh[j] * (T::one() - h * h);
        if dpre == T::zero() {
            continue;
        }
        g.l1.b[j] = g.l1.b[j] + dpre;
        let row = j * n_in;
        for i in 0..n_in {
            g.l1.w[row + i] = g.l1.w[row + i] + dpre * x[i];
        }
        if let Some(dx) = dx.as_mut() {
            for i in 0..n_in {
                dx[i] = dx[i] + dpre * m.l1.w[row + i];
            }
        }
    }
    dx
}

/// Backward through additive attention. Adds into `d_emb`.
pub fn attention_backward<T: Float>(
    att: &Attention<T>,
    g: &mut Attention<T>,
    emb: &[T],
    d: usize,
    tr: &AttentionTrace<T>,
    du: &[T],
    d_emb: &mut [T],
) {
    let a_dim = att.v.len();
    let d_alpha: Vec<T> = emb.chunks(d).map(|e| e.iter().zip(du).fold(T::zero(), |s, (x, y)| s + *x * *y)).collect();
    let mean = tr.alpha.iter().zip(&d_alpha).fold(T::zero(), |s, (a, da)| s + *a * *da);
    for (i, e) in emb.chunks(d).enumerate() {
        let al = tr.alpha[i];
        let de = &mut d_emb[i * d..(i + 1) * d];
        for (x, y) in de.iter_mut().zip(du) {
            *x = *x + al * *y;
        }
        let da = al * (d_alpha[i] - mean);
        if da == T::zero() {
            continue;
        }
        for k in 0..a_dim {
            let t = tr.act[i * a_dim + k];
            g.v[k] = g.v[k] + da * t;
            let dpre = da * att.v[k] * (T::one() - t * t);
            let row = k * d;
            for j in 0..d {
                g.w[row + j] = g.w[row + j] + dpre * e[j];
                de[j] = de[j] + dpre * att.w[row + j];
            }
        }
    }
}

/// Backward of one example given per-pair logit gradients and a gradient
/// on the module weights.
#[allow(clippy::too_many_arguments)]
fn backward_example<T: Float>(
    p: &Params<T>,
    cfg: &ModelConfig,
    inputs: &SampleInputs,
    category_tokens: &[Vec<usize>; 5],
    req: &RequestTrace<T>,
    cands: &[(usize, CandidateTrace<T>, T)],
    mut dw: [T; 3],
    g: &mut Grads<T>,
) {
    let d = cfg.embed_dim;
    let a = cfg.attention_dim;
    let scale = c::<T>(1.0 / (a as f64).sqrt());
    let net = &p.net;
    let mut d_req = [vec![T::zero(); a], vec![T::zero(); a]];
    let mut d_cat: [Option<Vec<T>>; 5] = Default::default();

    for (idx, tr, dz) in cands {
        let cand = &inputs.candidates[*idx];
        for m in 0..3 {
            dw[m] = dw[m] + *dz * tr.s[m];
        }
        if req.active[CAT] {
            let ds = *dz * req.w[CAT] * scale;
            let ent = &req.categories[cand.category].as_ref().expect("traced").mlp.out;
            let rq = &req.request_mlp[CAT].as_ref().expect("traced").out;
            let dc = d_cat[cand.category].get_or_insert_with(|| vec![T::zero(); a]);
            for k in 0..a {
                dc[k] = dc[k] + ds * rq[k];
                d_req[CAT][k] = d_req[CAT][k] + ds * ent[k];
            }
        }
        if let Some(lt) = &tr.loc {
            let ds = *dz * req.w[LOC] * scale;
            let rq = &req.request_mlp[LOC].as_ref().expect("traced").out;
            let dy: Vec<T> = rq.iter().map(|r| ds * *r).collect();
            let x: Vec<T> = cand.loc.iter().map(|v| c(*v)).collect();
            mlp_backward(&net.loc_entity, &mut g.net.loc_entity, &x, lt, &dy, false);
            for k in 0..a {
                d_req[LOC][k] = d_req[LOC][k] + ds * lt.out[k];
            }
        }
        if let Some(tt) = &tr.text {
            let x: Vec<T> = cand.text.iter().map(|v| c(*v)).collect();
            mlp_backward(&net.text, &mut g.net.text, &x, tt, &[*dz * req.w[TEXT]], false);
        }
    }

    let n_tok = inputs.tokens.len();
    let mut d_emb = vec![T::zero(); n_tok * d];

    for (k, dc) in d_cat.iter().enumerate() {
        let (Some(dc), Some(ct)) = (dc, &req.categories[k]) else { continue };
        let de = mlp_backward(&net.cat_entity, &mut g.net.cat_entity, &ct.emb, &ct.mlp, dc, true).expect("dx");
        let names = &category_tokens[k];
        let inv = T::one() / c::<T>(names.len() as f64);
        for &row in names {
            let gr = g.embed_row(row, d);
            for j in 0..d {
                gr[j] = gr[j] + de[j] * inv;
            }
        }
    }

    for m in [CAT, LOC] {
        let (Some(at), Some(rt)) = (&req.att[m], &req.request_mlp[m]) else { continue };
        let (mlp, gmlp, att, gatt) = if m == CAT {
            (&net.cat_request, &mut g.net.cat_request, &net.att_cat, &mut g.net.att_cat)
        } else {
            (&net.loc_request, &mut g.net.loc_request, &net.att_loc, &mut g.net.att_loc)
        };
        let du = mlp_backward(mlp, gmlp, &at.out, rt, &d_req[m], true).expect("dx");
        attention_backward(att, gatt, &req.emb, d, at, &du, &mut d_emb);
    }

    // masked softmax backward
    let mask = cfg.module_mask;
    let wdot = (0..3).filter(|&m| mask[m]).fold(T::zero(), |s, m| s + req.w[m] * dw[m]);
    let dlogits: Vec<T> =
        (0..3).map(|m| if mask[m] { req.w[m] * (dw[m] - wdot) } else { T::zero() }).collect();
    let dpooled =
        mlp_backward(&net.weight, &mut g.net.weight, &req.pooled, &req.weight, &dlogits, true).expect("dx");
    let inv = T::one() / c::<T>(n_tok as f64);
    for i in 0..n_tok {
        for j in 0..d {
            d_emb[i * d + j] = d_emb[i * d + j] + dpooled[j] * inv;
        }
    }
    for (i, &row) in inputs.tokens.iter().enumerate() {
        let gr = g.embed_row(row, d);
        for j in 0..d {
            gr[j] = gr[j] + d_emb[i * d + j];
        }
    }
}

/// Mean pair BCE plus `lambda` times the mean tagged-module cross-entropy.
pub fn loss<T: Float>(
    p: &Params<T>,
    cfg: &ModelConfig,
    category_tokens: &[Vec<usize>; 5],
    batch: &[Example<'_>],
    lambda: f64,
) -> T {
    loss_impl(p, cfg, category_tokens, batch, lambda, false).0
}

/// Loss and its exact gradient.
pub fn loss_and_grad<T: Float>(
    p: &Params<T>,
    cfg: &ModelConfig,
    category_tokens: &[Vec<usize>; 5],
    batch: &[Example<'_>],
    lambda: f64,
) -> (T, Grads<T>) {
    let (l, g) = loss_impl(p, cfg, category_tokens, batch, lambda, true);
    (l, g.expect("requested"))
}

fn supervised(tag: Option<usize>, cfg: &ModelConfig, lambda: f64) -> Option<usize> {
    tag.filter(|&m| lambda != 0.0 && cfg.module_mask[m])
}

fn loss_impl<T: Float>(
    p: &Params<T>,
    cfg: &ModelConfig,
    category_tokens: &[Vec<usize>; 5],
    batch: &[Example<'_>],
    lambda: f64,
    with_grad: bool,
) -> (T, Option<Grads<T>>) {
    let n_pairs: usize = batch.iter().map(|e| e.pairs.len()).sum();
    let n_tagged = batch.iter().filter(|e| supervised(e.tag, cfg, lambda).is_some()).count();
    let mut g = with_grad.then(|| Grads::zeros(cfg));
    let mut bce_sum = T::zero();
    let mut aux_sum = T::zero();
    let pair_scale = if n_pairs > 0 { T::one() / c::<T>(n_pairs as f64) } else { T::zero() };
    let aux_scale = if n_tagged > 0 { c::<T>(lambda / n_tagged as f64) } else { T::zero() };
    for ex in batch {
        let req = forward_request(p, cfg, ex.inputs, category_tokens, [false; 3]);
        let mut cands = Vec::with_capacity(ex.pairs.len());
        for &(idx, label) in ex.pairs {
            let tr = forward_candidate(p, cfg, &req, &ex.inputs.candidates[idx]);
            let (l, dz) = bce(tr.p, label);
            bce_sum = bce_sum + l;
            cands.push((idx, tr, dz * pair_scale));
        }
        let mut dw = [T::zero(); 3];
        if let Some(m) = supervised(ex.tag, cfg, lambda) {
            let w = req.w[m].max(c(1e-30));
            aux_sum = aux_sum - w.ln();
            dw[m] = -aux_scale / w;
        }
        if let Some(g) = g.as_mut() {
            backward_example(p, cfg, ex.inputs, category_tokens, &req, &cands, dw, g);
        }
    }
    let mut total = bce_sum * pair_scale;
    if n_tagged > 0 {
        total = total + aux_sum * aux_scale;
    }
    (total, g)
}
