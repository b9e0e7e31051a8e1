use rand::Rng;

use super::params::{Init, ParamId, ParamStore};
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};

/// Uniform range for recurrent and attention weights.
pub const RECURRENT_INIT: f64 = 0.08;

/// Forward LSTM. Gate rows are ordered input, forget, cell, output.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Lstm {
        let w_x = store.add(&format!("{prefix}.w_x"), 4 * hidden, input, Init::Uniform(RECURRENT_INIT), rng);
        let w_h = store.add(&format!("{prefix}.w_h"), 4 * hidden, hidden, Init::Uniform(RECURRENT_INIT), rng);
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        let b = store.add(&format!("{prefix}.b"), 4 * hidden, 1, Init::Values(bias), rng);
        Lstm {
            w_x,
            w_h,
            b,
            input,
            hidden,
        }
    }

    /// Runs the recurrence over `xs` and returns one hidden-state node per
    /// position. `context`, when given, is appended to every input (its
    /// contribution to the gates is computed once). At a masked position the
    /// previous hidden and cell states are carried over unchanged (zeros
    /// before the first real token).
    pub fn forward(&self, t: &mut Tape, xs: &[NodeId], context: Option<NodeId>, mask: &[bool]) -> Result<Vec<NodeId>> {
        if xs.len() != mask.len() {
            return Err(Error::Shape(format!("{} inputs, mask of {}", xs.len(), mask.len())));
        }
        let d = self.hidden;
        let ctx_dim = context.map_or(0, |c| t.dim(c));
        let x_dim = self.input.checked_sub(ctx_dim).ok_or_else(|| {
            Error::Shape(format!("context of {ctx_dim} exceeds LSTM input width {}", self.input))
        })?;
        let ctx_term = match context {
            Some(c) => Some(t.matvec_cols(self.w_x, x_dim, c)?),
            None => None,
        };
        let mut h = t.zeros(d);
        let mut c = t.zeros(d);
        let mut out = Vec::with_capacity(xs.len());
        for (&x, &real) in xs.iter().zip(mask) {
            if !real {
                out.push(h);
                continue;
            }
            if t.dim(x) != x_dim {
                return Err(Error::Shape(format!("LSTM input of {} for width {x_dim}", t.dim(x))));
            }
            let mut zx = t.matvec_cols(self.w_x, 0, x)?;
            if let Some(ct) = ctx_term {
                zx = t.add(zx, ct)?;
            }
            let zh = t.matvec(self.w_h, h)?;
            let z = t.add(zx, zh)?;
            let z = t.add_param(z, self.b)?;
            let zi = t.slice(z, 0, d)?;
            let zf = t.slice(z, d, d)?;
            let zg = t.slice(z, 2 * d, d)?;
            let zo = t.slice(z, 3 * d, d)?;
            let i = t.sigmoid(zi);
            let f = t.sigmoid(zf);
            let g = t.tanh(zg);
            let o = t.sigmoid(zo);
            let fc = t.mul(f, c)?;
            let ig = t.mul(i, g)?;
            c = t.add(fc, ig)?;
            let tc = t.tanh(c);
            h = t.mul(o, tc)?;
            out.push(h);
        }
        Ok(out)
    }
}

/// Label-conditioned attention pooling:
/// `M = tanh([W_h H; W_v e 1ᵀ])`, `α = softmax(wᵀ M)`, `h = H αᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub w_h: ParamId,
    pub w_v: ParamId,
    pub w: ParamId,
    pub hidden: usize,
    pub label_dim: usize,
    pub att_dim: usize,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        hidden: usize,
        label_dim: usize,
        att_dim: usize,
        rng: &mut R,
    ) -> Attention {
        let w_h = store.add(&format!("{prefix}.w_h"), hidden, hidden, Init::Uniform(RECURRENT_INIT), rng);
        let w_v = store.add(&format!("{prefix}.w_v"), att_dim, label_dim, Init::Uniform(RECURRENT_INIT), rng);
        let w = store.add(&format!("{prefix}.w"), hidden + att_dim, 1, Init::Uniform(RECURRENT_INIT), rng);
        Attention {
            w_h,
            w_v,
            w,
            hidden,
            label_dim,
            att_dim,
        }
    }

    /// Returns the pooled vector and the attention weights.
    pub fn forward(&self, t: &mut Tape, cols: &[NodeId], label: NodeId, mask: &[bool]) -> Result<(NodeId, NodeId)> {
        if cols.len() != mask.len() {
            return Err(Error::Shape(format!("{} columns, mask of {}", cols.len(), mask.len())));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::AllMasked);
        }
        let w = t.param(self.w);
        let v = t.matvec(self.w_v, label)?;
        let mut scores = Vec::with_capacity(cols.len());
        let mut pad = None;
        for (&col, &real) in cols.iter().zip(mask) {
            if !real {
                // the score is discarded by the masked softmax
                let z = *pad.get_or_insert_with(|| t.zeros(1));
                scores.push(z);
                continue;
            }
            let wh = t.matvec(self.w_h, col)?;
            let m = t.concat(&[wh, v]);
            let m = t.tanh(m);
            scores.push(t.dot(w, m)?);
        }
        let s = t.concat(&scores);
        let alpha = t.masked_softmax(s, mask)?;
        let h = t.weighted_sum(cols, alpha)?;
        Ok((h, alpha))
    }
}

/// `W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, input: usize, output: usize, rng: &mut R) -> Dense {
        let w = store.add(&format!("{prefix}.w"), output, input, Init::FanIn, rng);
        let b = store.add(&format!("{prefix}.b"), output, 1, Init::Zeros, rng);
        Dense { w, b, input, output }
    }

    pub fn forward(&self, t: &mut Tape, x: NodeId) -> Result<NodeId> {
        t.affine(self.w, x, self.b)
    }

    pub fn param_count(&self) -> usize {
        self.output * (self.input + 1)
    }
}

/// Inverted dropout: zeroes each component with probability `rate` and
/// scales survivors by `1 / (1 - rate)`. Identity when `rng` is `None`.
pub fn dropout<R: Rng + ?Sized>(t: &mut Tape, x: NodeId, rate: f64, rng: Option<&mut R>) -> Result<NodeId> {
    let Some(rng) = rng else { return Ok(x) };
    if rate <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - rate;
    let mask: Vec<f64> = (0..t.dim(x))
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    t.mul_const(x, mask)
}
