//! Numeric primitives for the noise predictor: 1-D convolutions, a strided
//! transposed convolution, dense layers, and the activations, each with its
//! reverse-mode backward. Everything is generic over [`Element`] so training
//! can run in f32 while gradient checks drive the same code in f64.

use num_traits::Float;

/// Scalar element of the network. `f32` for training speed, `f64` for
/// gradient verification.
pub trait Element: Float + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Element for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![T::zero(); numel] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn fill_zero(&mut self) {
        for v in self.data.iter_mut() {
            *v = T::zero();
        }
    }
}

/// `out[o] += w[o][i][q] * xpad[i][pos + q*dilation]` over a zero-padded
/// input, producing the same length as the input (SAME padding).
///
/// Shapes: `w` is `[out_ch, in_ch, k]`, `x` is `in_ch` rows of `len`,
/// `out` is `out_ch` rows of `len`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> Conv1d<T> {
    pub fn new(out_ch: usize, in_ch: usize, k: usize) -> Self {
        Self { weight: Tensor::zeros(&[out_ch, in_ch, k]), bias: Tensor::zeros(&[out_ch]) }
    }

    pub fn out_ch(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn in_ch(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape[2]
    }
}

/// Zero-pad each row of `x` (in_ch × len) by `pad` on both sides.
fn pad_rows<T: Element>(x: &[T], in_ch: usize, len: usize, pad: usize) -> Vec<T> {
    let padded_len = len + 2 * pad;
    let mut out = vec![T::zero(); in_ch * padded_len];
    for c in 0..in_ch {
        out[c * padded_len + pad..c * padded_len + pad + len]
            .copy_from_slice(&x[c * len..(c + 1) * len]);
    }
    out
}

/// SAME-padded dilated convolution. `x` is `in_ch` rows of `len`; the result
/// has `out_ch` rows of `len`.
pub fn conv1d_forward<T: Element>(conv: &Conv1d<T>, x: &[T], len: usize, dilation: usize) -> Vec<T> {
    let (out_ch, in_ch, k) = (conv.out_ch(), conv.in_ch(), conv.kernel());
    debug_assert_eq!(x.len(), in_ch * len);
    let pad = dilation * (k - 1) / 2;
    let xpad = pad_rows(x, in_ch, len, pad);
    let padded_len = len + 2 * pad;
    let mut out = vec![T::zero(); out_ch * len];
    for o in 0..out_ch {
        let row = &mut out[o * len..(o + 1) * len];
        let b = conv.bias.data[o];
        for v in row.iter_mut() {
            *v = b;
        }
        for i in 0..in_ch {
            let xrow = &xpad[i * padded_len..(i + 1) * padded_len];
            for q in 0..k {
                let w = conv.weight.data[(o * in_ch + i) * k + q];
                if w == T::zero() {
                    continue;
                }
                let src = &xrow[q * dilation..q * dilation + len];
                for (dst, s) in row.iter_mut().zip(src) {
                    *dst = *dst + w * *s;
                }
            }
        }
    }
    out
}

/// Backward of [`conv1d_forward`]: accumulates weight/bias gradients into
/// `grad` and returns the gradient with respect to `x`.
pub fn conv1d_backward<T: Element>(
    conv: &Conv1d<T>,
    grad: &mut Conv1d<T>,
    x: &[T],
    d_out: &[T],
    len: usize,
    dilation: usize,
) -> Vec<T> {
    let (out_ch, in_ch, k) = (conv.out_ch(), conv.in_ch(), conv.kernel());
    let pad = dilation * (k - 1) / 2;
    let padded_len = len + 2 * pad;
    let xpad = pad_rows(x, in_ch, len, pad);
    let mut dxpad = vec![T::zero(); in_ch * padded_len];
    for o in 0..out_ch {
        let drow = &d_out[o * len..(o + 1) * len];
        let mut db = T::zero();
        for d in drow {
            db = db + *d;
        }
        grad.bias.data[o] = grad.bias.data[o] + db;
        for i in 0..in_ch {
            let xrow = &xpad[i * padded_len..(i + 1) * padded_len];
            let dxrow = &mut dxpad[i * padded_len..(i + 1) * padded_len];
            for q in 0..k {
                let off = q * dilation;
                let mut dw = T::zero();
                for (d, s) in drow.iter().zip(&xrow[off..off + len]) {
                    dw = dw + *d * *s;
                }
                let widx = (o * in_ch + i) * k + q;
                grad.weight.data[widx] = grad.weight.data[widx] + dw;
                let w = conv.weight.data[widx];
                if w != T::zero() {
                    for (dst, d) in dxrow[off..off + len].iter_mut().zip(drow) {
                        *dst = *dst + w * *d;
                    }
                }
            }
        }
    }
    // Crop the padding back off.
    let mut dx = vec![T::zero(); in_ch * len];
    for c in 0..in_ch {
        dx[c * len..(c + 1) * len]
            .copy_from_slice(&dxpad[c * padded_len + pad..c * padded_len + pad + len]);
    }
    dx
}

/// Strided transposed convolution used by the conditioner upsampler.
///
/// Input `in_ch × in_len`, output `out_ch × (in_len * stride)`: the full
/// transposed output of length `(in_len-1)*stride + k` is cropped by
/// `(k - stride)/2` on each side, which requires `k >= stride` and
/// `k - stride` even.
pub fn conv_transpose1d_forward<T: Element>(
    conv: &Conv1d<T>,
    x: &[T],
    in_len: usize,
    stride: usize,
) -> Vec<T> {
    let (out_ch, in_ch, k) = (conv.out_ch(), conv.in_ch(), conv.kernel());
    debug_assert_eq!(x.len(), in_ch * in_len);
    let crop = (k - stride) / 2;
    let full_len = (in_len - 1) * stride + k;
    let out_len = in_len * stride;
    let mut full = vec![T::zero(); out_ch * full_len];
    for o in 0..out_ch {
        let row = &mut full[o * full_len..(o + 1) * full_len];
        for i in 0..in_ch {
            let xrow = &x[i * in_len..(i + 1) * in_len];
            for q in 0..k {
                let w = conv.weight.data[(o * in_ch + i) * k + q];
                if w == T::zero() {
                    continue;
                }
                for (j, xv) in xrow.iter().enumerate() {
                    row[j * stride + q] = row[j * stride + q] + w * *xv;
                }
            }
        }
    }
    let mut out = vec![T::zero(); out_ch * out_len];
    for o in 0..out_ch {
        let b = conv.bias.data[o];
        for (dst, s) in out[o * out_len..(o + 1) * out_len]
            .iter_mut()
            .zip(&full[o * full_len + crop..o * full_len + crop + out_len])
        {
            *dst = *s + b;
        }
    }
    out
}

/// Backward of [`conv_transpose1d_forward`].
pub fn conv_transpose1d_backward<T: Element>(
    conv: &Conv1d<T>,
    grad: &mut Conv1d<T>,
    x: &[T],
    d_out: &[T],
    in_len: usize,
    stride: usize,
) -> Vec<T> {
    let (out_ch, in_ch, k) = (conv.out_ch(), conv.in_ch(), conv.kernel());
    let crop = (k - stride) / 2;
    let full_len = (in_len - 1) * stride + k;
    let out_len = in_len * stride;
    // Re-inflate the cropped gradient to the full transposed length.
    let mut dfull = vec![T::zero(); out_ch * full_len];
    for (o, drow) in d_out.chunks_exact(out_len).enumerate() {
        dfull[o * full_len + crop..o * full_len + crop + out_len].copy_from_slice(drow);
        let mut db = T::zero();
        for d in drow {
            db = db + *d;
        }
        grad.bias.data[o] = grad.bias.data[o] + db;
    }
    let mut dx = vec![T::zero(); in_ch * in_len];
    for o in 0..out_ch {
        let drow = &dfull[o * full_len..(o + 1) * full_len];
        for i in 0..in_ch {
            let xrow = &x[i * in_len..(i + 1) * in_len];
            let dxrow = &mut dx[i * in_len..(i + 1) * in_len];
            for q in 0..k {
                let widx = (o * in_ch + i) * k + q;
                let w = conv.weight.data[widx];
                let mut dw = T::zero();
                for j in 0..in_len {
                    let d = drow[j * stride + q];
                    dw = dw + d * xrow[j];
                    dxrow[j] = dxrow[j] + w * d;
                }
                grad.weight.data[widx] = grad.weight.data[widx] + dw;
            }
        }
    }
    dx
}

/// Dense layer `y = W x + b` with `W` of shape `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> Linear<T> {
    pub fn new(out_dim: usize, in_dim: usize) -> Self {
        Self { weight: Tensor::zeros(&[out_dim, in_dim]), bias: Tensor::zeros(&[out_dim]) }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape[1]
    }
}

pub fn linear_forward<T: Element>(lin: &Linear<T>, x: &[T]) -> Vec<T> {
    let (out_dim, in_dim) = (lin.out_dim(), lin.in_dim());
    debug_assert_eq!(x.len(), in_dim);
    let mut out = Vec::with_capacity(out_dim);
    for o in 0..out_dim {
        let row = &lin.weight.data[o * in_dim..(o + 1) * in_dim];
        let mut acc = lin.bias.data[o];
        for (w, v) in row.iter().zip(x) {
            acc = acc + *w * *v;
        }
        out.push(acc);
    }
    out
}

pub fn linear_backward<T: Element>(
    lin: &Linear<T>,
    grad: &mut Linear<T>,
    x: &[T],
    d_out: &[T],
) -> Vec<T> {
    let (out_dim, in_dim) = (lin.out_dim(), lin.in_dim());
    debug_assert_eq!(d_out.len(), out_dim);
    let mut dx = vec![T::zero(); in_dim];
    for (o, &d) in d_out.iter().enumerate() {
        grad.bias.data[o] = grad.bias.data[o] + d;
        let wrow = &lin.weight.data[o * in_dim..(o + 1) * in_dim];
        let grow = &mut grad.weight.data[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            grow[i] = grow[i] + d * x[i];
            dx[i] = dx[i] + wrow[i] * d;
        }
    }
    dx
}

pub fn relu<T: Element>(x: &mut [T]) {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Backward through ReLU given the forward *output* (post-activation).
pub fn relu_backward<T: Element>(out: &[T], d: &mut [T]) {
    for (v, g) in out.iter().zip(d.iter_mut()) {
        if *v <= T::zero() {
            *g = T::zero();
        }
    }
}

pub fn leaky_relu<T: Element>(x: &mut [T], slope: T) {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v = *v * slope;
        }
    }
}

/// Backward through leaky ReLU given the forward output.
pub fn leaky_relu_backward<T: Element>(out: &[T], d: &mut [T], slope: T) {
    for (v, g) in out.iter().zip(d.iter_mut()) {
        if *v < T::zero() {
            *g = *g * slope;
        }
    }
}

/// Swish `x·σ(x)`; returns the pre-activation input for the backward pass.
pub fn swish<T: Element>(x: &mut [T]) -> Vec<T> {
    let pre = x.to_vec();
    for v in x.iter_mut() {
        *v = *v * sigmoid_scalar(*v);
    }
    pre
}

pub fn swish_backward<T: Element>(pre: &[T], d: &mut [T]) {
    for (p, g) in pre.iter().zip(d.iter_mut()) {
        let s = sigmoid_scalar(*p);
        // d/dx x·σ(x) = σ(x)(1 + x(1-σ(x)))
        *g = *g * s * (T::one() + *p * (T::one() - s));
    }
}

pub fn sigmoid_scalar<T: Element>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}
