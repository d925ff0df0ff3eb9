//! Pure forward kernels and their adjoints.
//!
//! The forward functions are usable on their own; [`super::Graph`] records
//! them and calls the matching `*_backward` kernel during the reverse sweep.

use super::{Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub(crate) fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Output length of a strided window op over a padded input, `None` when the
/// padded input is shorter than the window.
pub fn window_output_len(len: usize, window: usize, stride: usize, pad_left: usize, pad_right: usize) -> Option<usize> {
    let padded = len + pad_left + pad_right;
    if stride == 0 || window == 0 || padded < window {
        return None;
    }
    Some((padded - window) / stride + 1)
}

/// 1-D convolution (cross-correlation) over `input[L, Cin]` with
/// `kernels[K, Cin, Cout]` and `bias[Cout]`. Padding positions read as zero.
pub fn conv1d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad_left: usize,
    pad_right: usize,
) -> Result<Tensor> {
    const OP: &str = "conv1d";
    input.expect_rank(OP, 2)?;
    kernels.expect_rank(OP, 3)?;
    let (len, cin) = (input.shape()[0], input.shape()[1]);
    let (k, kcin, cout) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]);
    if kcin != cin {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            expected: vec![k, cin, cout],
            got: kernels.shape().to_vec(),
        });
    }
    if bias.shape() != [cout] {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            expected: vec![cout],
            got: bias.shape().to_vec(),
        });
    }
    if stride == 0 {
        return Err(TensorError::InvalidArgument {
            op: OP,
            msg: "stride must be >= 1".into(),
        });
    }
    let out_len =
        window_output_len(len, k, stride, pad_left, pad_right).ok_or_else(|| TensorError::InvalidArgument {
            op: OP,
            msg: format!("padded length {} shorter than kernel {k}", len + pad_left + pad_right),
        })?;

    let x = input.data();
    let w = kernels.data();
    let mut out = vec![0.0; out_len * cout];
    for t in 0..out_len {
        let row = &mut out[t * cout..(t + 1) * cout];
        row.copy_from_slice(bias.data());
        let start = (t * stride) as isize - pad_left as isize;
        for kk in 0..k {
            let pos = start + kk as isize;
            if pos < 0 || pos as usize >= len {
                continue;
            }
            let xrow = &x[pos as usize * cin..(pos as usize + 1) * cin];
            for (ci, &xv) in xrow.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let wrow = &w[(kk * cin + ci) * cout..(kk * cin + ci + 1) * cout];
                for (o, &wv) in row.iter_mut().zip(wrow) {
                    *o += xv * wv;
                }
            }
        }
    }
    Tensor::new(vec![out_len, cout], out)
}

/// Adjoint of [`conv1d`]; accumulates into the three gradient buffers.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    pad_left: usize,
    grad_out: &Tensor,
    grad_input: Option<&mut Tensor>,
    grad_kernels: Option<&mut Tensor>,
    grad_bias: Option<&mut Tensor>,
) {
    let (len, cin) = (input.shape()[0], input.shape()[1]);
    let (k, cout) = (kernels.shape()[0], kernels.shape()[2]);
    let out_len = grad_out.shape()[0];
    let x = input.data();
    let w = kernels.data();
    let dy = grad_out.data();

    if let Some(db) = grad_bias {
        let db = db.data_mut();
        for t in 0..out_len {
            for (b, &g) in db.iter_mut().zip(&dy[t * cout..(t + 1) * cout]) {
                *b += g;
            }
        }
    }
    let mut dx = grad_input.map(|t| t.data_mut());
    let mut dw = grad_kernels.map(|t| t.data_mut());
    for t in 0..out_len {
        let dyrow = &dy[t * cout..(t + 1) * cout];
        let start = (t * stride) as isize - pad_left as isize;
        for kk in 0..k {
            let pos = start + kk as isize;
            if pos < 0 || pos as usize >= len {
                continue;
            }
            let pos = pos as usize;
            for ci in 0..cin {
                let widx = (kk * cin + ci) * cout;
                if let Some(dx) = dx.as_deref_mut() {
                    let wrow = &w[widx..widx + cout];
                    let mut acc = 0.0;
                    for (&g, &wv) in dyrow.iter().zip(wrow) {
                        acc += g * wv;
                    }
                    dx[pos * cin + ci] += acc;
                }
                if let Some(dw) = dw.as_deref_mut() {
                    let xv = x[pos * cin + ci];
                    if xv != 0.0 {
                        for (d, &g) in dw[widx..widx + cout].iter_mut().zip(dyrow) {
                            *d += xv * g;
                        }
                    }
                }
            }
        }
    }
}

/// Max pooling over `input[L, C]` with valid windows. Returns the pooled
/// tensor and, per output element, the flat input index that won.
pub fn maxpool1d_with_indices(input: &Tensor, size: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    const OP: &str = "maxpool1d";
    input.expect_rank(OP, 2)?;
    let (len, ch) = (input.shape()[0], input.shape()[1]);
    if size == 0 || stride == 0 {
        return Err(TensorError::InvalidArgument {
            op: OP,
            msg: "size and stride must be >= 1".into(),
        });
    }
    let out_len = window_output_len(len, size, stride, 0, 0).ok_or_else(|| TensorError::InvalidArgument {
        op: OP,
        msg: format!("input length {len} shorter than window {size}"),
    })?;
    let x = input.data();
    let mut out = vec![0.0; out_len * ch];
    let mut arg = vec![0usize; out_len * ch];
    for t in 0..out_len {
        for c in 0..ch {
            let mut best = t * stride * ch + c;
            for j in 1..size {
                let idx = (t * stride + j) * ch + c;
                if x[idx] > x[best] {
                    best = idx;
                }
            }
            out[t * ch + c] = x[best];
            arg[t * ch + c] = best;
        }
    }
    Ok((Tensor::new(vec![out_len, ch], out)?, arg))
}

pub fn maxpool1d(input: &Tensor, size: usize, stride: usize) -> Result<Tensor> {
    maxpool1d_with_indices(input, size, stride).map(|(t, _)| t)
}

/// `activation(input · weight + bias)` for `input[D]`, `weight[D, M]`.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor, activation: Activation) -> Result<Tensor> {
    let mut out = linear(input, weight, bias)?;
    out.data_mut().iter_mut().for_each(|v| *v = activation.apply(*v));
    Ok(out)
}

pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    const OP: &str = "dense";
    input.expect_rank(OP, 1)?;
    weight.expect_rank(OP, 2)?;
    let (d, m) = (weight.shape()[0], weight.shape()[1]);
    if input.len() != d {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            expected: vec![d],
            got: input.shape().to_vec(),
        });
    }
    if bias.shape() != [m] {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            expected: vec![m],
            got: bias.shape().to_vec(),
        });
    }
    let mut out = bias.data().to_vec();
    vec_mat_acc(input.data(), weight.data(), m, &mut out);
    Tensor::new(vec![m], out)
}

/// `out[m] += Σ_d x[d] · w[d, m]`
#[inline]
pub(crate) fn vec_mat_acc(x: &[f64], w: &[f64], m: usize, out: &mut [f64]) {
    for (i, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(&w[i * m..(i + 1) * m]) {
            *o += xv * wv;
        }
    }
}

/// `out[d] += Σ_m w[d, m] · g[m]`
#[inline]
pub(crate) fn mat_vec_acc(w: &[f64], g: &[f64], m: usize, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * m..(i + 1) * m];
        let mut acc = 0.0;
        for (&wv, &gv) in row.iter().zip(g) {
            acc += wv * gv;
        }
        *o += acc;
    }
}

/// `w[d, m] += x[d] · g[m]`
#[inline]
pub(crate) fn outer_acc(x: &[f64], g: &[f64], w: &mut [f64]) {
    let m = g.len();
    for (i, &xv) in x.iter().enumerate() {
        if xv == 0.0 {
            continue;
        }
        for (wv, &gv) in w[i * m..(i + 1) * m].iter_mut().zip(g) {
            *wv += xv * gv;
        }
    }
}

pub fn elementwise_mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "elementwise_mul",
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Rows of `table[V, E]` selected by `indices`, plus the mask of active
/// (non-zero index) positions. Index 0 is the padding / unknown slot.
pub fn embedding_lookup(indices: &[usize], table: &Tensor) -> Result<(Tensor, Vec<bool>)> {
    const OP: &str = "embedding_lookup";
    table.expect_rank(OP, 2)?;
    if indices.is_empty() {
        return Err(TensorError::InvalidArgument {
            op: OP,
            msg: "empty index sequence".into(),
        });
    }
    let (v, e) = (table.shape()[0], table.shape()[1]);
    let mut out = Vec::with_capacity(indices.len() * e);
    let mut mask = Vec::with_capacity(indices.len());
    for &idx in indices {
        if idx >= v {
            return Err(TensorError::IndexOutOfRange {
                op: OP,
                index: idx,
                size: v,
            });
        }
        out.extend_from_slice(&table.data()[idx * e..(idx + 1) * e]);
        mask.push(idx != 0);
    }
    Ok((Tensor::new(vec![indices.len(), e], out)?, mask))
}

/// Numerically stable softmax over a rank-1 tensor.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    logits.expect_rank("softmax", 1)?;
    logits.ensure_finite("softmax")?;
    let max = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.data().iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Tensor::new(logits.shape().to_vec(), probs)
}

/// Categorical cross-entropy of `logits` against class `label`.
pub fn softmax_xent(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    logits.expect_rank("softmax_xent", 1)?;
    if label >= logits.len() {
        return Err(TensorError::IndexOutOfRange {
            op: "softmax_xent",
            index: label,
            size: logits.len(),
        });
    }
    logits.ensure_finite("softmax_xent")?;
    let max = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.data().iter().map(|&z| z - max).collect();
    let log_total = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
    let loss = log_total - shifted[label];
    let probs = shifted.iter().map(|s| (s - log_total).exp()).collect();
    Ok((loss, Tensor::new(logits.shape().to_vec(), probs)?))
}

/// LSTM weights: `wx[D, 4H]`, `wh[H, 4H]`, `bias[4H]`, gate blocks ordered
/// input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights<'a> {
    pub wx: &'a Tensor,
    pub wh: &'a Tensor,
    pub bias: &'a Tensor,
}

impl LstmWeights<'_> {
    pub fn hidden(&self) -> usize {
        self.wh.shape()[0]
    }

    fn validate(&self, input_dim: usize) -> Result<usize> {
        const OP: &str = "lstm_encode";
        self.wx.expect_rank(OP, 2)?;
        self.wh.expect_rank(OP, 2)?;
        let h = self.wh.shape()[0];
        if self.wh.shape() != [h, 4 * h] {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                expected: vec![h, 4 * h],
                got: self.wh.shape().to_vec(),
            });
        }
        if self.wx.shape() != [input_dim, 4 * h] {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                expected: vec![input_dim, 4 * h],
                got: self.wx.shape().to_vec(),
            });
        }
        if self.bias.shape() != [4 * h] {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                expected: vec![4 * h],
                got: self.bias.shape().to_vec(),
            });
        }
        Ok(h)
    }
}

/// Per-step activations kept for the reverse sweep.
#[derive(Clone, Debug)]
pub(crate) struct LstmStep {
    pub t: usize,
    /// i, f, g, o after their nonlinearities, each of length H.
    pub gates: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Clone, Debug)]
pub(crate) struct LstmTrace {
    pub steps: Vec<LstmStep>,
}

/// Runs the LSTM over `seq[T, D]`, skipping positions where `mask` is false,
/// and returns the final hidden state.
pub fn lstm_encode(seq: &Tensor, mask: Option<&[bool]>, weights: LstmWeights<'_>) -> Result<Tensor> {
    lstm_forward(seq, mask, weights).map(|(h, _)| h)
}

pub(crate) fn lstm_forward(
    seq: &Tensor,
    mask: Option<&[bool]>,
    weights: LstmWeights<'_>,
) -> Result<(Tensor, LstmTrace)> {
    const OP: &str = "lstm_encode";
    seq.expect_rank(OP, 2)?;
    let (steps_total, d) = (seq.shape()[0], seq.shape()[1]);
    if let Some(m) = mask {
        if m.len() != steps_total {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                expected: vec![steps_total],
                got: vec![m.len()],
            });
        }
    }
    let h = weights.validate(d)?;
    let active = |t: usize| mask.is_none_or(|m| m[t]);
    if !(0..steps_total).any(active) {
        return Err(TensorError::EmptySequence);
    }

    let wx = weights.wx.data();
    let wh = weights.wh.data();
    let mut hidden = vec![0.0; h];
    let mut cell = vec![0.0; h];
    let mut trace = LstmTrace { steps: Vec::new() };
    for t in (0..steps_total).filter(|&t| active(t)) {
        let x = &seq.data()[t * d..(t + 1) * d];
        let mut z = weights.bias.data().to_vec();
        vec_mat_acc(x, wx, 4 * h, &mut z);
        vec_mat_acc(&hidden, wh, 4 * h, &mut z);
        for j in 0..h {
            z[j] = sigmoid(z[j]);
            z[h + j] = sigmoid(z[h + j]);
            z[2 * h + j] = z[2 * h + j].tanh();
            z[3 * h + j] = sigmoid(z[3 * h + j]);
        }
        let c_prev = cell.clone();
        let h_prev = hidden.clone();
        for j in 0..h {
            cell[j] = z[h + j] * c_prev[j] + z[j] * z[2 * h + j];
            hidden[j] = z[3 * h + j] * cell[j].tanh();
        }
        trace.steps.push(LstmStep {
            t,
            gates: z,
            c_prev,
            h_prev,
            c: cell.clone(),
        });
    }
    Ok((Tensor::new(vec![h], hidden)?, trace))
}

/// Backpropagation through time for [`lstm_forward`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_backward(
    seq: &Tensor,
    weights: LstmWeights<'_>,
    trace: &LstmTrace,
    grad_h: &[f64],
    mut grad_seq: Option<&mut Tensor>,
    mut grad_wx: Option<&mut Tensor>,
    mut grad_wh: Option<&mut Tensor>,
    mut grad_bias: Option<&mut Tensor>,
) {
    let d = seq.shape()[1];
    let h = weights.hidden();
    let wx = weights.wx.data();
    let wh = weights.wh.data();
    let mut dh = grad_h.to_vec();
    let mut dc = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for step in trace.steps.iter().rev() {
        let g = &step.gates;
        for j in 0..h {
            let (i, f, cand, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let tc = step.c[j].tanh();
            let d_o = dh[j] * tc;
            dc[j] += dh[j] * o * (1.0 - tc * tc);
            let d_i = dc[j] * cand;
            let d_g = dc[j] * i;
            let d_f = dc[j] * step.c_prev[j];
            dz[j] = d_i * i * (1.0 - i);
            dz[h + j] = d_f * f * (1.0 - f);
            dz[2 * h + j] = d_g * (1.0 - cand * cand);
            dz[3 * h + j] = d_o * o * (1.0 - o);
            dc[j] *= f;
        }
        let x = &seq.data()[step.t * d..(step.t + 1) * d];
        if let Some(gw) = grad_wx.as_deref_mut() {
            outer_acc(x, &dz, gw.data_mut());
        }
        if let Some(gw) = grad_wh.as_deref_mut() {
            outer_acc(&step.h_prev, &dz, gw.data_mut());
        }
        if let Some(gb) = grad_bias.as_deref_mut() {
            for (b, &v) in gb.data_mut().iter_mut().zip(&dz) {
                *b += v;
            }
        }
        if let Some(gs) = grad_seq.as_deref_mut() {
            mat_vec_acc(wx, &dz, 4 * h, &mut gs.data_mut()[step.t * d..(step.t + 1) * d]);
        }
        let mut dh_prev = vec![0.0; h];
        mat_vec_acc(wh, &dz, 4 * h, &mut dh_prev);
        dh = dh_prev;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec())
    }

    #[test]
    fn conv1d_sliding_window_sum() {
        let input = Tensor::new(vec![5, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let k = Tensor::new(vec![2, 1, 1], vec![1.0, 1.0]).unwrap();
        let out = conv1d(&input, &k, &t1(&[0.0]), 1, 0, 0).unwrap();
        assert_eq!(out.shape(), &[4, 1]);
        assert_eq!(out.data(), &[3.0, 5.0, 7.0, 9.0]);
    }

    #[test]
    fn conv1d_zero_input_zero_output() {
        let input = Tensor::zeros(&[40, 3]);
        let k = Tensor::filled(&[4, 3, 2], 0.7);
        let out = conv1d(&input, &k, &Tensor::zeros(&[2]), 2, 1, 1).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn conv1d_same_style_on_long_input() {
        // 31 + 31 = K - 2 total padding halves the length exactly
        let input = Tensor::zeros(&[32000, 1]);
        let k = Tensor::zeros(&[64, 1, 1]);
        let out = conv1d(&input, &k, &t1(&[0.0]), 2, 31, 31).unwrap();
        assert_eq!(out.shape()[0], 16000);
    }

    #[test]
    fn conv1d_channel_mismatch() {
        let input = Tensor::zeros(&[10, 2]);
        let k = Tensor::zeros(&[3, 1, 4]);
        assert!(matches!(
            conv1d(&input, &k, &Tensor::zeros(&[4]), 1, 0, 0),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn conv1d_padding_reads_zero() {
        let input = Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let k = Tensor::new(vec![3, 1, 1], vec![1.0, 10.0, 100.0]).unwrap();
        let out = conv1d(&input, &k, &t1(&[0.0]), 1, 1, 1).unwrap();
        // windows: [0,1,2] [1,2,0]
        assert_eq!(out.data(), &[210.0, 21.0]);
    }

    #[test]
    fn maxpool_window_maxima() {
        let input = Tensor::new(vec![4, 1], vec![1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!(maxpool1d(&input, 2, 2).unwrap().data(), &[3.0, 5.0]);
        let long = Tensor::zeros(&[250, 2]);
        assert_eq!(maxpool1d(&long, 4, 4).unwrap().shape(), &[62, 2]);
        let c = Tensor::filled(&[9, 3], 2.5);
        assert!(maxpool1d(&c, 4, 4).unwrap().data().iter().all(|&x| x == 2.5));
        assert!(maxpool1d(&Tensor::zeros(&[3, 1]), 4, 4).is_err());
    }

    #[test]
    fn dense_cases() {
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = t1(&[1.0, 2.0]);
        assert_eq!(dense(&x, &eye, &t1(&[0.0, 0.0]), Activation::Identity).unwrap(), x);
        let y = dense(&x, &eye, &t1(&[1.0, 1.0]), Activation::Tanh).unwrap();
        assert_eq!(y.data(), &[2f64.tanh(), 3f64.tanh()]);
        let r = dense(&t1(&[-1.0, 2.0]), &eye, &t1(&[0.0, 0.0]), Activation::Relu).unwrap();
        assert_eq!(r.data(), &[0.0, 2.0]);
        assert!(dense(&t1(&[1.0]), &eye, &t1(&[0.0, 0.0]), Activation::Relu).is_err());
    }

    #[test]
    fn elementwise_mul_cases() {
        let a = t1(&[2.0, 3.0]);
        assert_eq!(elementwise_mul(&a, &t1(&[4.0, 5.0])).unwrap().data(), &[8.0, 15.0]);
        assert_eq!(elementwise_mul(&a, &t1(&[1.0, 1.0])).unwrap(), a);
        assert_eq!(elementwise_mul(&t1(&[0.0, 0.0]), &a).unwrap().data(), &[0.0, 0.0]);
        assert!(elementwise_mul(&a, &t1(&[1.0])).is_err());
    }

    #[test]
    fn softmax_xent_cases() {
        let (loss, p) = softmax_xent(&t1(&[0.3; 4]), 1).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!(p.data().iter().all(|&x| (x - 0.25).abs() < 1e-15));

        let (loss, _) = softmax_xent(&t1(&[1000.0, 0.0]), 0).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-12);

        let (loss, p) = softmax_xent(&t1(&[1.0, 2.0, 3.0]), 2).unwrap();
        let e = |x: f64| x.exp();
        let expected = -(e(3.0) / (e(1.0) + e(2.0) + e(3.0))).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.4076).abs() < 1e-4);
        assert!((p.sum() - 1.0).abs() < 1e-12);

        assert!(matches!(
            softmax_xent(&t1(&[1.0, 2.0]), 2),
            Err(TensorError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn embedding_rows_and_mask() {
        let table = Tensor::new(vec![6, 2], (0..12).map(f64::from).collect()).unwrap();
        let (rows, mask) = embedding_lookup(&[3], &table).unwrap();
        assert_eq!(rows.data(), &[6.0, 7.0]);
        assert_eq!(mask, vec![true]);
        let (_, mask) = embedding_lookup(&[0, 0, 0], &table).unwrap();
        assert_eq!(mask, vec![false; 3]);
        assert!(matches!(
            embedding_lookup(&[6], &table),
            Err(TensorError::IndexOutOfRange { .. })
        ));
    }

    fn scalar_lstm(bias: [f64; 4]) -> (Tensor, Tensor, Tensor) {
        (Tensor::zeros(&[1, 4]), Tensor::zeros(&[1, 4]), t1(&bias))
    }

    #[test]
    fn lstm_hand_evaluated_cell() {
        let seq = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
        let (wx, wh, b) = scalar_lstm([50.0, 0.0, 0.0, 50.0]);
        let h = lstm_encode(
            &seq,
            None,
            LstmWeights {
                wx: &wx,
                wh: &wh,
                bias: &b,
            },
        )
        .unwrap();
        assert!(h.data()[0].abs() < 1e-12);

        let (wx, wh, b) = scalar_lstm([50.0, 0.0, 50.0, 50.0]);
        let h = lstm_encode(
            &seq,
            None,
            LstmWeights {
                wx: &wx,
                wh: &wh,
                bias: &b,
            },
        )
        .unwrap();
        assert!((h.data()[0] - 1f64.tanh()).abs() < 1e-9);
        assert!((h.data()[0] - 0.7616).abs() < 1e-4);
    }

    #[test]
    fn lstm_zero_weights_give_zero() {
        let seq = Tensor::new(vec![3, 2], vec![1.0, -2.0, 0.5, 4.0, 3.0, 3.0]).unwrap();
        let wx = Tensor::zeros(&[2, 12]);
        let wh = Tensor::zeros(&[3, 12]);
        let b = Tensor::zeros(&[12]);
        let h = lstm_encode(
            &seq,
            None,
            LstmWeights {
                wx: &wx,
                wh: &wh,
                bias: &b,
            },
        )
        .unwrap();
        assert!(h.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn lstm_rejects_fully_masked() {
        let seq = Tensor::zeros(&[2, 1]);
        let (wx, wh, b) = scalar_lstm([0.0; 4]);
        let r = lstm_encode(
            &seq,
            Some(&[false, false]),
            LstmWeights {
                wx: &wx,
                wh: &wh,
                bias: &b,
            },
        );
        assert!(matches!(r, Err(TensorError::EmptySequence)));
    }
}
