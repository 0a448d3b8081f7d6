use num_traits::Float;
use rand::Rng;

use super::ModelConfig;
use crate::features::{LOC_DIM, TEXT_DIM};

/// Fully connected layer, `w` row-major `[n_out × n_in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub w: Vec<T>,
    pub b: Vec<T>,
    pub n_in: usize,
    pub n_out: usize,
}

impl<T: Float> Dense<T> {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { w: vec![T::zero(); n_in * n_out], b: vec![T::zero(); n_out], n_in, n_out }
    }

    fn init<R: Rng>(rng: &mut R, n_in: usize, n_out: usize) -> Self {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        let w = (0..n_in * n_out).map(|_| T::from(rng.gen_range(-limit..limit)).unwrap()).collect();
        Self { w, b: vec![T::zero(); n_out], n_in, n_out }
    }

    pub fn apply(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        for o in 0..self.n_out {
            let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
            let mut acc = self.b[o];
            for (a, b) in row.iter().zip(x) {
                acc = acc + *a * *b;
            }
            out.push(acc);
        }
    }
}

/// Two dense layers with a tanh between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub l1: Dense<T>,
    pub l2: Dense<T>,
}

/// Hidden activations and output of one [`Mlp`] evaluation.
#[derive(Debug, Clone, Default)]
pub struct MlpTrace<T> {
    pub hidden: Vec<T>,
    pub out: Vec<T>,
}

impl<T: Float> Mlp<T> {
    pub fn zeros(n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        Self { l1: Dense::zeros(n_in, n_hidden), l2: Dense::zeros(n_hidden, n_out) }
    }

    fn init<R: Rng>(rng: &mut R, n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        Self { l1: Dense::init(rng, n_in, n_hidden), l2: Dense::init(rng, n_hidden, n_out) }
    }

    pub fn forward(&self, x: &[T]) -> MlpTrace<T> {
        let mut hidden = Vec::with_capacity(self.l1.n_out);
        self.l1.apply(x, &mut hidden);
        for h in hidden.iter_mut() {
            *h = h.tanh();
        }
        let mut out = Vec::with_capacity(self.l2.n_out);
        self.l2.apply(&hidden, &mut out);
        MlpTrace { hidden, out }
    }
}

/// Additive soft attention: `a_i = v · tanh(W h_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T> {
    /// `[attention_dim × embed_dim]`
    pub w: Vec<T>,
    pub v: Vec<T>,
}

/// Every dense tensor of the network; the embedding table lives apart.
#[derive(Debug, Clone, PartialEq)]
pub struct Net<T> {
    pub att_cat: Attention<T>,
    pub att_loc: Attention<T>,
    pub weight: Mlp<T>,
    pub cat_entity: Mlp<T>,
    pub cat_request: Mlp<T>,
    pub loc_entity: Mlp<T>,
    pub loc_request: Mlp<T>,
    pub text: Mlp<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    /// `[vocab_buckets × embed_dim]`
    pub embed: Vec<T>,
    pub net: Net<T>,
}

impl<T: Float> Net<T> {
    pub fn zeros(c: &ModelConfig) -> Self {
        let (d, h, a) = (c.embed_dim, c.hidden_dim, c.attention_dim);
        let att = || Attention { w: vec![T::zero(); a * d], v: vec![T::zero(); a] };
        Self {
            att_cat: att(),
            att_loc: att(),
            weight: Mlp::zeros(d, h, 3),
            cat_entity: Mlp::zeros(d, h, a),
            cat_request: Mlp::zeros(d, h, a),
            loc_entity: Mlp::zeros(LOC_DIM, h, a),
            loc_request: Mlp::zeros(d, h, a),
            text: Mlp::zeros(TEXT_DIM, h, 1),
        }
    }

    fn init<R: Rng>(rng: &mut R, c: &ModelConfig) -> Self {
        let (d, h, a) = (c.embed_dim, c.hidden_dim, c.attention_dim);
        let att = |rng: &mut R| {
            let lw = (6.0 / (a + d) as f64).sqrt();
            let lv = (3.0 / a as f64).sqrt();
            Attention {
                w: (0..a * d).map(|_| T::from(rng.gen_range(-lw..lw)).unwrap()).collect(),
                v: (0..a).map(|_| T::from(rng.gen_range(-lv..lv)).unwrap()).collect(),
            }
        };
        let att_cat = att(rng);
        let att_loc = att(rng);
        Self {
            att_cat,
            att_loc,
            weight: Mlp::init(rng, d, h, 3),
            cat_entity: Mlp::init(rng, d, h, a),
            cat_request: Mlp::init(rng, d, h, a),
            loc_entity: Mlp::init(rng, LOC_DIM, h, a),
            loc_request: Mlp::init(rng, d, h, a),
            text: Mlp::init(rng, TEXT_DIM, h, 1),
        }
    }

    /// Tensors in serialization order.
    pub fn tensors(&self) -> Vec<&Vec<T>> {
        let mut v = vec![&self.att_cat.w, &self.att_cat.v, &self.att_loc.w, &self.att_loc.v];
        for m in self.mlps() {
            v.extend([&m.l1.w, &m.l1.b, &m.l2.w, &m.l2.b]);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut v: Vec<&mut Vec<T>> =
            vec![&mut self.att_cat.w, &mut self.att_cat.v, &mut self.att_loc.w, &mut self.att_loc.v];
        for m in [
            &mut self.weight,
            &mut self.cat_entity,
            &mut self.cat_request,
            &mut self.loc_entity,
            &mut self.loc_request,
            &mut self.text,
        ] {
            v.extend([&mut m.l1.w, &mut m.l1.b, &mut m.l2.w, &mut m.l2.b]);
        }
        v
    }

    fn mlps(&self) -> [&Mlp<T>; 6] {
        [&self.weight, &self.cat_entity, &self.cat_request, &self.loc_entity, &self.loc_request, &self.text]
    }

    pub fn map<U: Float>(&self, f: impl Fn(T) -> U) -> Net<U> {
        let vec = |v: &Vec<T>| v.iter().map(|x| f(*x)).collect::<Vec<U>>();
        let dense = |d: &Dense<T>| Dense { w: vec(&d.w), b: vec(&d.b), n_in: d.n_in, n_out: d.n_out };
        let mlp = |m: &Mlp<T>| Mlp { l1: dense(&m.l1), l2: dense(&m.l2) };
        let att = |a: &Attention<T>| Attention { w: vec(&a.w), v: vec(&a.v) };
        Net {
            att_cat: att(&self.att_cat),
            att_loc: att(&self.att_loc),
            weight: mlp(&self.weight),
            cat_entity: mlp(&self.cat_entity),
            cat_request: mlp(&self.cat_request),
            loc_entity: mlp(&self.loc_entity),
            loc_request: mlp(&self.loc_request),
            text: mlp(&self.text),
        }
    }
}

/// Shapes of all tensors in serialization order, embedding table first.
pub fn tensor_shapes(c: &ModelConfig) -> Vec<Vec<usize>> {
    let (d, h, a) = (c.embed_dim, c.hidden_dim, c.attention_dim);
    let mut s = vec![vec![c.vocab_buckets, d], vec![a, d], vec![a], vec![a, d], vec![a]];
    for (n_in, n_out) in [(d, 3), (d, a), (d, a), (LOC_DIM, a), (d, a), (TEXT_DIM, 1)] {
        s.extend([vec![h, n_in], vec![h], vec![n_out, h], vec![n_out]]);
    }
    s
}

impl<T: Float> Params<T> {
    pub fn zeros(c: &ModelConfig) -> Self {
        Self { embed: vec![T::zero(); c.vocab_buckets * c.embed_dim], net: Net::zeros(c) }
    }

    /// Uniform Glorot weights, zero biases, small uniform embeddings.
    pub fn init<R: Rng>(rng: &mut R, c: &ModelConfig) -> Self {
        let embed = (0..c.vocab_buckets * c.embed_dim)
            .map(|_| T::from(rng.gen_range(-0.1..0.1)).unwrap())
            .collect();
        Self { embed, net: Net::init(rng, c) }
    }

    pub fn tensors(&self) -> Vec<&Vec<T>> {
        let mut v = vec![&self.embed];
        v.extend(self.net.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut v = vec![&mut self.embed];
        v.extend(self.net.tensors_mut());
        v
    }

    pub fn map<U: Float>(&self, f: impl Fn(T) -> U + Copy) -> Params<U> {
        Params { embed: self.embed.iter().map(|x| f(*x)).collect(), net: self.net.map(f) }
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}
