use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, NodiError, Result};
use crate::estimator::{ClassToken, NoiseEstimator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyper {
    /// Residual blocks.
    pub depth: usize,
    /// Hidden width.
    pub width: usize,
    /// Input/output dimension.
    pub dim: usize,
    pub timesteps: usize,
    pub classes: usize,
}

impl Hyper {
    pub fn new(dim: usize, timesteps: usize, classes: usize) -> Self {
        Hyper {
            depth: 3,
            width: 256,
            dim,
            timesteps,
            classes,
        }
    }

    pub fn with_size(mut self, depth: usize, width: usize) -> Self {
        self.depth = depth;
        self.width = width;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.dim == 0 || self.timesteps == 0 {
            return Err(NodiError::Config(format!("degenerate predictor shape {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// `U(−1/√fan_in, 1/√fan_in)`.
    #[default]
    SymmetricSmall,
    /// `U(0, 1)` for every parameter.
    Uniform01,
}

/// Offsets of each tensor inside the flat parameter vector. Matrices are
/// row-major `out × in`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub w_in: Range<usize>,
    pub b_in: Range<usize>,
    pub t_emb: Range<usize>,
    pub c_emb: Range<usize>,
    pub blocks: Vec<BlockLayout>,
    pub w_out: Range<usize>,
    pub b_out: Range<usize>,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

impl Layout {
    pub fn new(h: &Hyper) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let (d, w) = (h.dim, h.width);
        let w_in = take(w * d);
        let b_in = take(w);
        let t_emb = take(h.timesteps * w);
        let c_emb = take((h.classes + 1) * w);
        let blocks = (0..h.depth)
            .map(|_| BlockLayout {
                w1: take(w * w),
                b1: take(w),
                w2: take(w * w),
                b2: take(w),
            })
            .collect();
        let w_out = take(d * w);
        let b_out = take(d);
        Layout {
            w_in,
            b_in,
            t_emb,
            c_emb,
            blocks,
            w_out,
            b_out,
            len: at,
        }
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// `out = W·x + b` for row-major `W` (out × in).
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for ((o, row), bi) in out.iter_mut().zip(w.chunks_exact(n_in)).zip(b) {
        *o = bi + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
    }
}

/// `g_x += Wᵀ·g_out`, `g_W += g_out ⊗ x`, `g_b += g_out`.
fn affine_backward(w: &[f64], x: &[f64], g_out: &[f64], g_w: &mut [f64], g_b: &mut [f64], g_x: Option<&mut [f64]>) {
    let n_in = x.len();
    for ((gw_row, gb), &g) in g_w.chunks_exact_mut(n_in).zip(g_b.iter_mut()).zip(g_out) {
        *gb += g;
        for (gw, xi) in gw_row.iter_mut().zip(x) {
            *gw += g * xi;
        }
    }
    if let Some(g_x) = g_x {
        for (row, &g) in w.chunks_exact(n_in).zip(g_out) {
            for (gx, wi) in g_x.iter_mut().zip(row) {
                *gx += g * wi;
            }
        }
    }
}

/// Activations kept from the forward pass for backpropagation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    input: Vec<f64>,
    t: usize,
    c: usize,
    /// Residual stream before each block, then after the last one.
    h: Vec<Vec<f64>>,
    /// Per block: φ(h), pre-activation u, φ(u).
    a: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub out: Vec<f64>,
}

/// Residual MLP noise predictor `M_θ(y, t, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePredictor {
    hyper: Hyper,
    layout: Layout,
    params: Vec<f64>,
}

impl NoisePredictor {
    pub fn init<R: Rng + ?Sized>(hyper: Hyper, mode: InitMode, rng: &mut R) -> Result<Self> {
        hyper.validate()?;
        let layout = Layout::new(&hyper);
        let mut params = vec![0.0; layout.len];
        match mode {
            InitMode::Uniform01 => params.iter_mut().for_each(|p| *p = rng.random::<f64>()),
            InitMode::SymmetricSmall => {
                let (d, w) = (hyper.dim as f64, hyper.width as f64);
                let mut fill = |range: &Range<usize>, fan_in: f64| {
                    let bound = (1.0 / fan_in).sqrt();
                    for p in &mut params[range.clone()] {
                        *p = rng.random_range(-bound..bound);
                    }
                };
                fill(&layout.w_in, d);
                fill(&layout.b_in, d);
                fill(&layout.t_emb, w);
                fill(&layout.c_emb, w);
                for b in &layout.blocks {
                    fill(&b.w1, w);
                    fill(&b.b1, w);
                    fill(&b.w2, w);
                    fill(&b.b2, w);
                }
                fill(&layout.w_out, w);
                fill(&layout.b_out, w);
            }
        }
        Ok(NoisePredictor { hyper, layout, params })
    }

    pub fn from_params(hyper: Hyper, params: Vec<f64>) -> Result<Self> {
        hyper.validate()?;
        let layout = Layout::new(&hyper);
        check_dim(layout.len, params.len())?;
        Ok(NoisePredictor { hyper, layout, params })
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn class_index(&self, class: ClassToken) -> Result<usize> {
        match class {
            ClassToken::Agnostic => Ok(self.hyper.classes),
            ClassToken::Class(c) if c < self.hyper.classes => Ok(c),
            ClassToken::Class(c) => Err(NodiError::Index {
                what: "class",
                index: c,
                len: self.hyper.classes,
            }),
        }
    }

    fn check_inputs(&self, y: &[f64], t: usize) -> Result<()> {
        check_dim(self.hyper.dim, y.len())?;
        if t >= self.hyper.timesteps {
            return Err(NodiError::Index {
                what: "timestep",
                index: t,
                len: self.hyper.timesteps,
            });
        }
        Ok(())
    }

    pub fn forward(&self, y: &[f64], t: usize, class: ClassToken) -> Result<Vec<f64>> {
        let mut tape = Tape::default();
        self.forward_tape(y, t, class, &mut tape)?;
        Ok(tape.out)
    }

    /// Forward pass that records the activations needed by [`Self::backward`].
    pub fn forward_tape(&self, y: &[f64], t: usize, class: ClassToken, tape: &mut Tape) -> Result<()> {
        self.check_inputs(y, t)?;
        let c = self.class_index(class)?;
        let p = &self.params;
        let l = &self.layout;
        let w = self.hyper.width;
        let depth = self.hyper.depth;

        tape.input.clear();
        tape.input.extend_from_slice(y);
        tape.t = t;
        tape.c = c;
        tape.h.resize(depth + 1, Vec::new());
        tape.a.resize(depth, Vec::new());
        tape.u.resize(depth, Vec::new());
        tape.v.resize(depth, Vec::new());

        let h0 = &mut tape.h[0];
        h0.resize(w, 0.0);
        affine(&p[l.w_in.clone()], &p[l.b_in.clone()], y, h0);
        let te = &p[l.t_emb.start + t * w..][..w];
        let ce = &p[l.c_emb.start + c * w..][..w];
        for ((hi, ti), ci) in h0.iter_mut().zip(te).zip(ce) {
            *hi += ti + ci;
        }

        for (k, b) in l.blocks.iter().enumerate() {
            let (before, after) = tape.h.split_at_mut(k + 1);
            let h = &before[k];
            let a = &mut tape.a[k];
            a.clear();
            a.extend(h.iter().map(|x| silu(*x)));
            let u = &mut tape.u[k];
            u.resize(w, 0.0);
            affine(&p[b.w1.clone()], &p[b.b1.clone()], a, u);
            let v = &mut tape.v[k];
            v.clear();
            v.extend(u.iter().map(|x| silu(*x)));
            let next = &mut after[0];
            next.resize(w, 0.0);
            affine(&p[b.w2.clone()], &p[b.b2.clone()], v, next);
            for (n, hi) in next.iter_mut().zip(h) {
                *n += hi;
            }
        }

        tape.out.resize(self.hyper.dim, 0.0);
        affine(&p[l.w_out.clone()], &p[l.b_out.clone()], &tape.h[depth], &mut tape.out);
        Ok(())
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂out`.
    pub fn backward(&self, tape: &Tape, g_out: &[f64], grad: &mut [f64]) {
        let p = &self.params;
        let l = &self.layout;
        let w = self.hyper.width;
        let depth = self.hyper.depth;

        let mut g_h = vec![0.0; w];
        {
            let (gw, gb) = split_pair(grad, &l.w_out, &l.b_out);
            affine_backward(&p[l.w_out.clone()], &tape.h[depth], g_out, gw, gb, Some(&mut g_h));
        }

        let mut g_v = vec![0.0; w];
        let mut g_a = vec![0.0; w];
        for (k, b) in l.blocks.iter().enumerate().rev() {
            g_v.iter_mut().for_each(|x| *x = 0.0);
            {
                let (gw, gb) = split_pair(grad, &b.w2, &b.b2);
                affine_backward(&p[b.w2.clone()], &tape.v[k], &g_h, gw, gb, Some(&mut g_v));
            }
            let g_u: Vec<f64> = g_v.iter().zip(&tape.u[k]).map(|(g, u)| g * silu_grad(*u)).collect();
            g_a.iter_mut().for_each(|x| *x = 0.0);
            {
                let (gw, gb) = split_pair(grad, &b.w1, &b.b1);
                affine_backward(&p[b.w1.clone()], &tape.a[k], &g_u, gw, gb, Some(&mut g_a));
            }
            for ((gh, ga), h) in g_h.iter_mut().zip(&g_a).zip(&tape.h[k]) {
                *gh += ga * silu_grad(*h);
            }
        }

        {
            let (gw, gb) = split_pair(grad, &l.w_in, &l.b_in);
            affine_backward(&p[l.w_in.clone()], &tape.input, &g_h, gw, gb, None);
        }
        let te = l.t_emb.start + tape.t * w;
        let ce = l.c_emb.start + tape.c * w;
        for (i, g) in g_h.iter().enumerate() {
            grad[te + i] += g;
            grad[ce + i] += g;
        }
    }
}

/// Disjoint mutable views of a weight range and the bias range after it.
fn split_pair<'g>(grad: &'g mut [f64], w: &Range<usize>, b: &Range<usize>) -> (&'g mut [f64], &'g mut [f64]) {
    debug_assert_eq!(w.end, b.start);
    let (head, tail) = grad[w.start..b.end].split_at_mut(w.len());
    (head, tail)
}

impl NoiseEstimator for NoisePredictor {
    fn dim(&self) -> usize {
        self.hyper.dim
    }

    fn num_classes(&self) -> usize {
        self.hyper.classes
    }

    fn estimate(&self, x: &[f64], step: usize, class: ClassToken) -> Result<Vec<f64>> {
        self.forward(x, step, class)
    }
}
