//! Temporal attention: current features query the previous step's features,
//! once with pixels as tokens (spatial) and once with channels as tokens
//! (channel), and both branches are added back onto the current features.
//!
//! Token `i` is projected as `q_i = W_q x_i`; heads split the feature axis
//! into contiguous groups of `d / heads`. In the channel branch the feature
//! axis is the flattened `H·W` plane, so each head attends over channels
//! using one contiguous slab of pixels.

use crate::error::{Error, Result};
use crate::grid::Tensor3;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor<T> {
    data: Tensor3<T>,
}

impl<T: Real> FeatureTensor<T> {
    pub fn new(data: Tensor3<T>) -> Result<Self> {
        if !data.is_finite() {
            return Err(Error::NonFinite("feature tensor".into()));
        }
        Ok(Self { data })
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<T>) -> Result<Self> {
        Self::new(Tensor3::from_vec(c, h, w, data)?)
    }

    pub fn data(&self) -> &Tensor3<T> {
        &self.data
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dims()
    }

    pub fn as_slice(&self) -> &[T] {
        self.data.as_slice()
    }

    pub fn into_tensor(self) -> Tensor3<T> {
        self.data
    }

    /// Pixels as tokens: `n = H·W` rows of `C` features.
    fn spatial_tokens(&self) -> Vec<T> {
        let (c, h, w) = self.dims();
        let n = h * w;
        let src = self.as_slice();
        let mut out = vec![T::zero(); n * c];
        for ch in 0..c {
            for i in 0..n {
                out[i * c + ch] = src[ch * n + i];
            }
        }
        out
    }

    fn from_spatial_tokens(c: usize, h: usize, w: usize, tokens: &[T]) -> Vec<T> {
        let n = h * w;
        let mut out = vec![T::zero(); n * c];
        for i in 0..n {
            for ch in 0..c {
                out[ch * n + i] = tokens[i * c + ch];
            }
        }
        out
    }
}

/// Query/key/value projections of one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T> {
    d: usize,
    heads: usize,
    /// Row-major `d×d`.
    pub wq: Vec<T>,
    pub wk: Vec<T>,
    pub wv: Vec<T>,
}

impl<T: Real> AttentionWeights<T> {
    pub fn new(d: usize, heads: usize, wq: Vec<T>, wk: Vec<T>, wv: Vec<T>) -> Result<Self> {
        if d == 0 || heads == 0 || d % heads != 0 {
            return Err(Error::invalid(format!(
                "token length {d} is not divisible by {heads} heads"
            )));
        }
        for (name, m) in [("W_q", &wq), ("W_k", &wk), ("W_v", &wv)] {
            if m.len() != d * d {
                return Err(Error::shape(format!("{name} has {} entries, expected {d}×{d}", m.len())));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name.into()));
            }
        }
        Ok(Self { d, heads, wq, wk, wv })
    }

    pub fn identity(d: usize, heads: usize) -> Result<Self> {
        let mut eye = vec![T::zero(); d * d];
        for i in 0..d {
            eye[i * d + i] = T::one();
        }
        Self::new(d, heads, eye.clone(), eye.clone(), eye)
    }

    /// Builds the weights from a stacked `3×d×d` tensor `[W_q, W_k, W_v]`.
    pub fn from_stacked(t: &Tensor3<T>, heads: usize) -> Result<Self> {
        let (c, h, w) = t.dims();
        if c != 3 || h != w {
            return Err(Error::shape(format!("expected 3×d×d weights, got {c}×{h}×{w}")));
        }
        Self::new(h, heads, t.channel(0).to_vec(), t.channel(1).to_vec(), t.channel(2).to_vec())
    }

    pub fn to_stacked(&self) -> Tensor3<T> {
        let data = [self.wq.as_slice(), &self.wk, &self.wv].concat();
        Tensor3::from_vec(3, self.d, self.d, data).expect("consistent dims")
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn heads(&self) -> usize {
        self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TamWeights<T> {
    pub channel: AttentionWeights<T>,
    pub spatial: AttentionWeights<T>,
    /// Gate of the channel branch.
    pub a: T,
    /// Gate of the spatial branch.
    pub b: T,
}

impl<T: Real> TamWeights<T> {
    /// Checks the branch token lengths against a `C×H×W` feature shape.
    pub fn check(&self, c: usize, h: usize, w: usize) -> Result<()> {
        if self.channel.d != h * w {
            return Err(Error::shape(format!(
                "channel branch expects tokens of length {}, features have H·W = {}",
                self.channel.d,
                h * w
            )));
        }
        if self.spatial.d != c {
            return Err(Error::shape(format!(
                "spatial branch expects tokens of length {}, features have C = {c}",
                self.spatial.d
            )));
        }
        if !(self.a.is_finite() && self.b.is_finite()) {
            return Err(Error::NonFinite("fusion gates".into()));
        }
        Ok(())
    }
}

/// `out[n×p] = a[n×k] · b[k×p]`, optionally with either operand transposed
/// in storage.
fn matmul<T: Real>(a: &[T], b: &[T], n: usize, k: usize, p: usize, ta: bool, tb: bool) -> Vec<T> {
    let mut out = vec![T::zero(); n * p];
    for i in 0..n {
        for l in 0..k {
            let av = if ta { a[l * n + i] } else { a[i * k + l] };
            if av == T::zero() {
                continue;
            }
            for j in 0..p {
                let bv = if tb { b[j * k + l] } else { b[l * p + j] };
                out[i * p + j] += av * bv;
            }
        }
    }
    out
}

/// Forward state of multi-head attention, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Attention<T> {
    n: usize,
    m: usize,
    d: usize,
    heads: usize,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// Per head, row-major `n×m` attention maps.
    pub maps: Vec<Vec<T>>,
    /// `n×d` output tokens.
    pub out: Vec<T>,
}

fn attend<T: Real>(xq: &[T], xkv: &[T], n: usize, m: usize, w: &AttentionWeights<T>) -> Attention<T> {
    let d = w.d;
    let dh = d / w.heads;
    let q = matmul(xq, &w.wq, n, d, d, false, true);
    let k = matmul(xkv, &w.wk, m, d, d, false, true);
    let v = matmul(xkv, &w.wv, m, d, d, false, true);
    let scale = T::one() / T::from_usize_lossy(dh).sqrt();
    let mut maps = Vec::with_capacity(w.heads);
    let mut out = vec![T::zero(); n * d];
    for h in 0..w.heads {
        let off = h * dh;
        let mut a = vec![T::zero(); n * m];
        for i in 0..n {
            let row = &mut a[i * m..(i + 1) * m];
            for (j, r) in row.iter_mut().enumerate() {
                let mut s = T::zero();
                for f in 0..dh {
                    s += q[i * d + off + f] * k[j * d + off + f];
                }
                *r = s * scale;
            }
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for r in row.iter_mut() {
                *r = (*r - max).exp();
                total += *r;
            }
            for r in row.iter_mut() {
                *r /= total;
            }
            for j in 0..m {
                let aij = row[j];
                for f in 0..dh {
                    out[i * d + off + f] += aij * v[j * d + off + f];
                }
            }
        }
        maps.push(a);
    }
    Attention {
        n,
        m,
        d,
        heads: w.heads,
        q,
        k,
        v,
        maps,
        out,
    }
}

/// Gradients of one attention branch.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads<T> {
    pub wq: Vec<T>,
    pub wk: Vec<T>,
    pub wv: Vec<T>,
}

fn attend_backward<T: Real>(
    fwd: &Attention<T>,
    xq: &[T],
    xkv: &[T],
    w: &AttentionWeights<T>,
    dout: &[T],
) -> (Vec<T>, Vec<T>, AttentionGrads<T>) {
    let (n, m, d) = (fwd.n, fwd.m, fwd.d);
    let dh = d / fwd.heads;
    let scale = T::one() / T::from_usize_lossy(dh).sqrt();
    let mut dq = vec![T::zero(); n * d];
    let mut dk = vec![T::zero(); m * d];
    let mut dv = vec![T::zero(); m * d];
    for h in 0..fwd.heads {
        let off = h * dh;
        let a = &fwd.maps[h];
        for i in 0..n {
            // dA_ij = dO_i · V_j ; dS = A ⊙ (dA − Σ_j A⊙dA)
            let mut da = vec![T::zero(); m];
            for j in 0..m {
                let mut s = T::zero();
                for f in 0..dh {
                    s += dout[i * d + off + f] * fwd.v[j * d + off + f];
                }
                da[j] = s;
            }
            let dot: T = (0..m).map(|j| a[i * m + j] * da[j]).sum();
            for j in 0..m {
                let aij = a[i * m + j];
                let ds = aij * (da[j] - dot) * scale;
                for f in 0..dh {
                    dv[j * d + off + f] += aij * dout[i * d + off + f];
                    dq[i * d + off + f] += ds * fwd.k[j * d + off + f];
                    dk[j * d + off + f] += ds * fwd.q[i * d + off + f];
                }
            }
        }
    }
    let dxq = matmul(&dq, &w.wq, n, d, d, false, false);
    let mut dxkv = matmul(&dk, &w.wk, m, d, d, false, false);
    for (a, b) in dxkv.iter_mut().zip(matmul(&dv, &w.wv, m, d, d, false, false)) {
        *a += b;
    }
    let grads = AttentionGrads {
        wq: matmul(&dq, xq, d, n, d, true, false),
        wk: matmul(&dk, xkv, d, m, d, true, false),
        wv: matmul(&dv, xkv, d, m, d, true, false),
    };
    (dxq, dxkv, grads)
}

fn check_pair<T: Real>(q: &FeatureTensor<T>, kv: &FeatureTensor<T>) -> Result<()> {
    if q.dims() != kv.dims() {
        return Err(Error::shape(format!(
            "query features {:?} and key/value features {:?} differ",
            q.dims(),
            kv.dims()
        )));
    }
    Ok(())
}

fn check_len<T: Real>(w: &AttentionWeights<T>, d: usize, branch: &str) -> Result<()> {
    if w.d != d {
        return Err(Error::shape(format!(
            "{branch} attention weights are {}×{}, tokens have length {d}",
            w.d, w.d
        )));
    }
    Ok(())
}

/// Attention state of the spatial branch (`H·W` tokens of length `C`).
pub fn spatial_attend<T: Real>(
    q_src: &FeatureTensor<T>,
    kv_src: &FeatureTensor<T>,
    w: &AttentionWeights<T>,
) -> Result<Attention<T>> {
    check_pair(q_src, kv_src)?;
    let (c, h, wd) = q_src.dims();
    check_len(w, c, "spatial")?;
    Ok(attend(&q_src.spatial_tokens(), &kv_src.spatial_tokens(), h * wd, h * wd, w))
}

pub fn spatial_attention<T: Real>(
    q_src: &FeatureTensor<T>,
    kv_src: &FeatureTensor<T>,
    w: &AttentionWeights<T>,
) -> Result<FeatureTensor<T>> {
    let att = spatial_attend(q_src, kv_src, w)?;
    let (c, h, wd) = q_src.dims();
    FeatureTensor::from_vec(c, h, wd, FeatureTensor::from_spatial_tokens(c, h, wd, &att.out))
}

/// Attention state of the channel branch (`C` tokens of length `H·W`).
pub fn channel_attend<T: Real>(
    q_src: &FeatureTensor<T>,
    kv_src: &FeatureTensor<T>,
    w: &AttentionWeights<T>,
) -> Result<Attention<T>> {
    check_pair(q_src, kv_src)?;
    let (c, h, wd) = q_src.dims();
    check_len(w, h * wd, "channel")?;
    Ok(attend(q_src.as_slice(), kv_src.as_slice(), c, c, w))
}

pub fn channel_attention<T: Real>(
    q_src: &FeatureTensor<T>,
    kv_src: &FeatureTensor<T>,
    w: &AttentionWeights<T>,
) -> Result<FeatureTensor<T>> {
    let att = channel_attend(q_src, kv_src, w)?;
    let (c, h, wd) = q_src.dims();
    FeatureTensor::from_vec(c, h, wd, att.out)
}

/// `bf_t + a·channel_attention + b·spatial_attention`.
pub fn tam_forward<T: Real>(
    bf_t: &FeatureTensor<T>,
    bf_prev: &FeatureTensor<T>,
    w: &TamWeights<T>,
) -> Result<FeatureTensor<T>> {
    check_pair(bf_t, bf_prev)?;
    let (c, h, wd) = bf_t.dims();
    w.check(c, h, wd)?;
    let ch = channel_attention(bf_t, bf_prev, &w.channel)?;
    let sp = spatial_attention(bf_t, bf_prev, &w.spatial)?;
    let data = bf_t
        .as_slice()
        .iter()
        .zip(ch.as_slice())
        .zip(sp.as_slice())
        .map(|((x, c), s)| *x + w.a * *c + w.b * *s)
        .collect();
    FeatureTensor::from_vec(c, h, wd, data)
}

/// Gradients of a scalar loss through [`tam_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct TamGrads<T> {
    pub bf_t: Vec<T>,
    pub bf_prev: Vec<T>,
    pub channel: AttentionGrads<T>,
    pub spatial: AttentionGrads<T>,
    pub a: T,
    pub b: T,
}

/// Backpropagates `d_out = ∂L/∂output` (layout `C×H×W`).
pub fn tam_backward<T: Real>(
    bf_t: &FeatureTensor<T>,
    bf_prev: &FeatureTensor<T>,
    w: &TamWeights<T>,
    d_out: &[T],
) -> Result<TamGrads<T>> {
    check_pair(bf_t, bf_prev)?;
    let (c, h, wd) = bf_t.dims();
    w.check(c, h, wd)?;
    if d_out.len() != c * h * wd {
        return Err(Error::shape(format!(
            "output gradient has {} entries, expected {}",
            d_out.len(),
            c * h * wd
        )));
    }
    let n = h * wd;

    let ch = channel_attend(bf_t, bf_prev, &w.channel)?;
    let d_ch: Vec<T> = d_out.iter().map(|g| *g * w.a).collect();
    let (ch_dq, ch_dkv, ch_grads) = attend_backward(&ch, bf_t.as_slice(), bf_prev.as_slice(), &w.channel, &d_ch);

    let (tq, tkv) = (bf_t.spatial_tokens(), bf_prev.spatial_tokens());
    let sp = attend(&tq, &tkv, n, n, &w.spatial);
    let d_sp_planar: Vec<T> = d_out.iter().map(|g| *g * w.b).collect();
    let d_sp = FeatureTensor {
        data: Tensor3::from_vec(c, h, wd, d_sp_planar)?,
    }
    .spatial_tokens();
    let (sp_dq, sp_dkv, sp_grads) = attend_backward(&sp, &tq, &tkv, &w.spatial, &d_sp);
    let sp_dq = FeatureTensor::from_spatial_tokens(c, h, wd, &sp_dq);
    let sp_dkv = FeatureTensor::from_spatial_tokens(c, h, wd, &sp_dkv);

    let ch_out = &ch.out;
    let sp_out = FeatureTensor::from_spatial_tokens(c, h, wd, &sp.out);
    let da = d_out.iter().zip(ch_out).map(|(g, o)| *g * *o).sum();
    let db = d_out.iter().zip(&sp_out).map(|(g, o)| *g * *o).sum();

    let d_bf_t = (0..c * n).map(|i| d_out[i] + ch_dq[i] + sp_dq[i]).collect();
    let d_bf_prev = (0..c * n).map(|i| ch_dkv[i] + sp_dkv[i]).collect();
    Ok(TamGrads {
        bf_t: d_bf_t,
        bf_prev: d_bf_prev,
        channel: ch_grads,
        spatial: sp_grads,
        a: da,
        b: db,
    })
}
