//! The sequence model: a mean-embedding encoder and a single-layer tanh
//! recurrent decoder with tied input/output vocabulary, plus exact analytic
//! gradients via backpropagation through time.
//!
//! Dimensions: embeddings `E` and output projection `U` are `|V| x d`;
//! `W_c`, `W_y`, `W_h` are `d x d`; `b_h` is `d`; `b_o` is `|V|`.
//! The decoder computes `h_t = tanh(W_c c + W_y E[y_{t-1}] + W_h h_{t-1} + b_h)`
//! and `logits_t = U h_t + b_o`, starting from `h_0 = 0` and the
//! begin-of-sequence token.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{BOS, NUM_SPECIALS};
use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self * x` for a column vector `x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `self^T * y` for a column vector `y`.
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = self.row(r);
            let yr = y[r];
            for c in 0..self.cols {
                out[c] += row[c] * yr;
            }
        }
        out
    }

    /// `self += a * x y^T` (outer-product accumulation).
    pub fn add_outer(&mut self, a: f64, x: &[f64], y: &[f64]) {
        assert_eq!(x.len(), self.rows);
        assert_eq!(y.len(), self.cols);
        for r in 0..self.rows {
            let base = r * self.cols;
            let xr = a * x[r];
            for c in 0..self.cols {
                self.data[base + c] += xr * y[c];
            }
        }
    }
}

/// The seven parameter blocks, also used for gradients and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors {
    pub e: Mat,
    pub w_c: Mat,
    pub w_y: Mat,
    pub w_h: Mat,
    pub b_h: Vec<f64>,
    pub u: Mat,
    pub b_o: Vec<f64>,
}

pub type Gradient = Tensors;

impl Tensors {
    pub fn zeros(vocab_size: usize, dim: usize) -> Tensors {
        Tensors {
            e: Mat::zeros(vocab_size, dim),
            w_c: Mat::zeros(dim, dim),
            w_y: Mat::zeros(dim, dim),
            w_h: Mat::zeros(dim, dim),
            b_h: vec![0.0; dim],
            u: Mat::zeros(vocab_size, dim),
            b_o: vec![0.0; vocab_size],
        }
    }

    /// Blocks in fixed declaration order, with stable names.
    pub fn blocks(&self) -> [(&'static str, &[f64]); 7] {
        [
            ("e", &self.e.data),
            ("w_c", &self.w_c.data),
            ("w_y", &self.w_y.data),
            ("w_h", &self.w_h.data),
            ("b_h", &self.b_h),
            ("u", &self.u.data),
            ("b_o", &self.b_o),
        ]
    }

    pub fn blocks_mut(&mut self) -> [(&'static str, &mut [f64]); 7] {
        [
            ("e", &mut self.e.data),
            ("w_c", &mut self.w_c.data),
            ("w_y", &mut self.w_y.data),
            ("w_h", &mut self.w_h.data),
            ("b_h", &mut self.b_h),
            ("u", &mut self.u.data),
            ("b_o", &mut self.b_o),
        ]
    }

    /// `self += s * other`, blockwise.
    pub fn add_scaled(&mut self, other: &Tensors, s: f64) {
        for ((_, dst), (_, src)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, v) in dst.iter_mut().zip(src) {
                *d += s * v;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.blocks()
            .into_iter()
            .all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }

    /// Concatenation of all blocks in declaration order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (_, b) in self.blocks() {
            out.extend_from_slice(b);
        }
        out
    }

    pub fn from_flat(vocab_size: usize, dim: usize, flat: &[f64]) -> Result<Tensors> {
        let mut t = Tensors::zeros(vocab_size, dim);
        let expected: usize = t.blocks().iter().map(|(_, b)| b.len()).sum();
        if flat.len() != expected {
            return Err(Error::Shape(format!(
                "expected {expected} parameters, got {}",
                flat.len()
            )));
        }
        let mut off = 0;
        for (_, b) in t.blocks_mut() {
            b.copy_from_slice(&flat[off..off + b.len()]);
            off += b.len();
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub vocab_size: usize,
    pub dim: usize,
    pub t: Tensors,
}

/// Initializes all parameter blocks i.i.d. uniform on (-0.1, 0.1) from the
/// seed, filling blocks in declaration order, each row-major.
pub fn init_params(vocab_size: usize, dim: usize, seed: u64) -> Result<ModelParams> {
    if dim == 0 {
        return Err(Error::Shape("model dimension must be positive".into()));
    }
    if vocab_size <= NUM_SPECIALS {
        return Err(Error::Shape(format!(
            "vocabulary of {vocab_size} has no usable tokens beyond the {NUM_SPECIALS} specials"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tensors::zeros(vocab_size, dim);
    for (_, block) in t.blocks_mut() {
        for v in block.iter_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
    }
    Ok(ModelParams {
        vocab_size,
        dim,
        t,
    })
}

fn check_ids(ids: &[u32], vocab_size: usize, what: &str) -> Result<()> {
    if let Some(&bad) = ids.iter().find(|&&t| t as usize >= vocab_size) {
        return Err(Error::Shape(format!(
            "{what} token id {bad} out of range for vocabulary of {vocab_size}"
        )));
    }
    Ok(())
}

/// Mean of the input tokens' embedding rows.
pub fn encode(input: &[u32], p: &ModelParams) -> Result<Vec<f64>> {
    if input.is_empty() {
        return Err(Error::Empty("encoder input has no tokens".into()));
    }
    check_ids(input, p.vocab_size, "input")?;
    let mut c = vec![0.0; p.dim];
    for &tok in input {
        for (ci, ei) in c.iter_mut().zip(p.t.e.row(tok as usize)) {
            *ci += ei;
        }
    }
    let inv = 1.0 / input.len() as f64;
    for ci in c.iter_mut() {
        *ci *= inv;
    }
    Ok(c)
}

/// One decoder step: consumes the previous output token and hidden state,
/// returns the new hidden state and next-token logits.
pub fn step(context: &[f64], y_prev: u32, h_prev: &[f64], p: &ModelParams) -> (Vec<f64>, Vec<f64>) {
    let d = p.dim;
    assert_eq!(context.len(), d);
    assert_eq!(h_prev.len(), d);
    let e_prev = p.t.e.row(y_prev as usize);
    let mut h = vec![0.0; d];
    for i in 0..d {
        let mut a = p.t.b_h[i];
        let wc = p.t.w_c.row(i);
        let wy = p.t.w_y.row(i);
        let wh = p.t.w_h.row(i);
        for j in 0..d {
            a += wc[j] * context[j] + wy[j] * e_prev[j] + wh[j] * h_prev[j];
        }
        h[i] = a.tanh();
    }
    let mut logits = p.t.u.matvec(&h);
    for (l, b) in logits.iter_mut().zip(&p.t.b_o) {
        *l += b;
    }
    (h, logits)
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&l| l - log_sum).collect()
}

/// Softmax probabilities; rows sum to one.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).iter().map(|&l| l.exp()).collect()
}

struct Forward {
    context: Vec<f64>,
    hs: Vec<Vec<f64>>,
    log_probs: Vec<Vec<f64>>,
    loss: f64,
}

fn forward(input: &[u32], target: &[u32], p: &ModelParams) -> Result<Forward> {
    if target.is_empty() {
        return Err(Error::Empty("target has no tokens".into()));
    }
    check_ids(target, p.vocab_size, "target")?;
    let context = encode(input, p)?;
    let mut hs = Vec::with_capacity(target.len());
    let mut log_probs = Vec::with_capacity(target.len());
    let mut h = vec![0.0; p.dim];
    let mut y_prev = BOS;
    let mut loss = 0.0;
    for &y in target {
        let (h_next, logits) = step(&context, y_prev, &h, p);
        let ls = log_softmax(&logits);
        loss -= ls[y as usize];
        hs.push(h_next.clone());
        log_probs.push(ls);
        h = h_next;
        y_prev = y;
    }
    loss /= target.len() as f64;
    Ok(Forward {
        context,
        hs,
        log_probs,
        loss,
    })
}

/// Teacher-forced mean cross-entropy of `target` given `input`. The target
/// must already include the end-of-sequence token if one is intended.
pub fn sequence_loss(input: &[u32], target: &[u32], p: &ModelParams) -> Result<f64> {
    Ok(forward(input, target, p)?.loss)
}

/// Loss and exact analytic gradients for one (input, target) pair.
pub fn gradient(input: &[u32], target: &[u32], p: &ModelParams) -> Result<(f64, Gradient)> {
    let fwd = forward(input, target, p)?;
    let d = p.dim;
    let len = target.len();
    let inv_len = 1.0 / len as f64;
    let mut g = Tensors::zeros(p.vocab_size, d);
    let mut dc = vec![0.0; d];
    // Gradient flowing into a_{t+1} through the recurrent connection.
    let mut da_next = vec![0.0; d];
    for t in (0..len).rev() {
        let h_t = &fwd.hs[t];
        let h_prev = if t == 0 { None } else { Some(&fwd.hs[t - 1]) };
        let y_prev = if t == 0 { BOS } else { target[t - 1] };
        // d loss / d logits_t = (softmax - onehot(y_t)) / len
        let mut dz: Vec<f64> = fwd.log_probs[t].iter().map(|&l| l.exp() * inv_len).collect();
        dz[target[t] as usize] -= inv_len;
        g.u.add_outer(1.0, &dz, h_t);
        for (b, z) in g.b_o.iter_mut().zip(&dz) {
            *b += z;
        }
        let mut dh = p.t.u.matvec_t(&dz);
        for (dhi, wa) in dh.iter_mut().zip(p.t.w_h.matvec_t(&da_next)) {
            *dhi += wa;
        }
        let da: Vec<f64> = dh
            .iter()
            .zip(h_t)
            .map(|(dhi, hi)| dhi * (1.0 - hi * hi))
            .collect();
        g.w_c.add_outer(1.0, &da, &fwd.context);
        g.w_y.add_outer(1.0, &da, p.t.e.row(y_prev as usize));
        match h_prev {
            Some(hp) => g.w_h.add_outer(1.0, &da, hp),
            None => {} // h_0 = 0 contributes nothing
        }
        for (b, a) in g.b_h.iter_mut().zip(&da) {
            *b += a;
        }
        let de_prev = p.t.w_y.matvec_t(&da);
        let row = y_prev as usize * d;
        for (j, v) in de_prev.iter().enumerate() {
            g.e.data[row + j] += v;
        }
        for (dci, wi) in dc.iter_mut().zip(p.t.w_c.matvec_t(&da)) {
            *dci += wi;
        }
        da_next = da;
    }
    // Encoder: each input position receives dc / m into its embedding row.
    let inv_m = 1.0 / input.len() as f64;
    for &tok in input {
        let row = tok as usize * d;
        for (j, v) in dc.iter().enumerate() {
            g.e.data[row + j] += v * inv_m;
        }
    }
    Ok((fwd.loss, g))
}
