//! Differentiable tensor operations.
//!
//! Convolution and the linear layer lower to im2col + row-parallel GEMM
//! (deterministic reductions, see `gemm`). Batched inputs are `[N, C, L]`;
//! conv/pool also accept rank-2 `[C, L]` as an unbatched convenience.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::element::Element;
use super::gemm::{gemm_acc, transpose};
use super::{Backward, Result, Tensor, TensorError};

/// Output length of a 1-d convolution.
pub fn conv1d_out_len(l: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let span = l + 2 * padding;
    if k == 0 || stride == 0 || span < k {
        return None;
    }
    Some((span - k) / stride + 1)
}

/// Output length of a 1-d max-pool.
pub fn maxpool1d_out_len(l: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || l < kernel {
        return None;
    }
    Some((l - kernel) / stride + 1)
}

fn batch_view<E: Element>(t: &Tensor<E>, what: &str) -> Result<(usize, usize, usize, bool)> {
    match t.shape() {
        [c, l] => Ok((1, *c, *l, false)),
        [n, c, l] => Ok((*n, *c, *l, true)),
        other => Err(TensorError::ShapeMismatch(format!(
            "{what} expects [C, L] or [N, C, L], got {other:?}"
        ))),
    }
}

// ---------------------------------------------------------------------------
// conv1d
// ---------------------------------------------------------------------------

/// `input [N×C_in×L]`, `weight [C_out×C_in×K]`, `bias [C_out]` → `[N×C_out×L_out]`.
pub fn conv1d<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<E>> {
    let (n, c_in, l, batched) = batch_view(input, "conv1d input")?;
    let (c_out, w_cin, k) = match weight.shape() {
        [a, b, c] => (*a, *b, *c),
        other => {
            return Err(TensorError::ShapeMismatch(format!(
                "conv1d weight expects [C_out, C_in, K], got {other:?}"
            )))
        }
    };
    if w_cin != c_in {
        return Err(TensorError::ShapeMismatch(format!(
            "conv1d: input has {c_in} channels, weight expects {w_cin}"
        )));
    }
    if bias.shape() != [c_out] {
        return Err(TensorError::ShapeMismatch(format!(
            "conv1d bias expects [{c_out}], got {:?}",
            bias.shape()
        )));
    }
    if stride == 0 {
        return Err(TensorError::InvalidArgument("conv1d stride must be >= 1".into()));
    }
    let l_out = conv1d_out_len(l, k, stride, padding).ok_or_else(|| {
        TensorError::InvalidArgument(format!(
            "conv1d: kernel {k} does not fit input length {l} with padding {padding}"
        ))
    })?;

    let geom = ConvGeom {
        n,
        c_in,
        l,
        c_out,
        k,
        stride,
        padding,
        l_out,
    };
    let mut out = vec![E::ZERO; n * c_out * l_out];
    let w = weight.data();
    let b = bias.data();
    out.par_chunks_mut(c_out * l_out)
        .zip(input.data().par_chunks(c_in * l))
        .for_each(|(out_n, in_n)| {
            let col = im2col(in_n, &geom);
            gemm_acc(out_n, w, &col, c_out, c_in * k, l_out);
            for (co, chunk) in out_n.chunks_mut(l_out).enumerate() {
                let bc = b[co];
                for v in chunk {
                    *v += bc;
                }
            }
        });

    let shape = if batched {
        vec![n, c_out, l_out]
    } else {
        vec![c_out, l_out]
    };
    Ok(Tensor::from_op(
        shape,
        out,
        vec![input.clone(), weight.clone(), bias.clone()],
        Box::new(Conv1dBackward { geom }),
    ))
}

#[derive(Clone, Copy)]
struct ConvGeom {
    n: usize,
    c_in: usize,
    l: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
    l_out: usize,
}

/// Column matrix `[C_in·K × L_out]` for one sample.
fn im2col<E: Element>(input: &[E], g: &ConvGeom) -> Vec<E> {
    let mut col = vec![E::ZERO; g.c_in * g.k * g.l_out];
    for c in 0..g.c_in {
        let in_c = &input[c * g.l..(c + 1) * g.l];
        for kk in 0..g.k {
            let row = &mut col[(c * g.k + kk) * g.l_out..(c * g.k + kk + 1) * g.l_out];
            for (o, slot) in row.iter_mut().enumerate() {
                let pos = o * g.stride + kk;
                if pos >= g.padding && pos - g.padding < g.l {
                    *slot = in_c[pos - g.padding];
                }
            }
        }
    }
    col
}

/// Scatter a column-gradient back onto the (padded) input of one sample.
fn col2im_acc<E: Element>(col: &[E], g: &ConvGeom, out: &mut [E]) {
    for c in 0..g.c_in {
        let out_c = &mut out[c * g.l..(c + 1) * g.l];
        for kk in 0..g.k {
            let row = &col[(c * g.k + kk) * g.l_out..(c * g.k + kk + 1) * g.l_out];
            for (o, &v) in row.iter().enumerate() {
                let pos = o * g.stride + kk;
                if pos >= g.padding && pos - g.padding < g.l {
                    out_c[pos - g.padding] += v;
                }
            }
        }
    }
}

struct Conv1dBackward {
    geom: ConvGeom,
}

impl<E: Element> Backward<E> for Conv1dBackward {
    fn backward(&self, parents: &[Tensor<E>], upstream: &[E]) -> Vec<Option<Vec<E>>> {
        let g = self.geom;
        let input = &parents[0];
        let weight = &parents[1];
        let bias = &parents[2];
        let ck = g.c_in * g.k;

        let d_input = if input.node.needs_grad {
            let w_t = transpose(weight.data(), g.c_out, ck);
            let mut dx = vec![E::ZERO; g.n * g.c_in * g.l];
            dx.par_chunks_mut(g.c_in * g.l)
                .zip(upstream.par_chunks(g.c_out * g.l_out))
                .for_each(|(dx_n, dy_n)| {
                    let mut dcol = vec![E::ZERO; ck * g.l_out];
                    gemm_acc(&mut dcol, &w_t, dy_n, ck, g.c_out, g.l_out);
                    col2im_acc(&dcol, &g, dx_n);
                });
            Some(dx)
        } else {
            None
        };

        let d_weight = if weight.node.needs_grad {
            // Per-chunk partials summed in fixed chunk order so the reduction
            // is deterministic under any thread count.
            const CHUNK: usize = 16;
            let partials: Vec<Vec<E>> = (0..g.n.div_ceil(CHUNK))
                .into_par_iter()
                .map(|chunk| {
                    let mut dw = vec![E::ZERO; g.c_out * ck];
                    let lo = chunk * CHUNK;
                    let hi = (lo + CHUNK).min(g.n);
                    for s in lo..hi {
                        let in_n = &input.data()[s * g.c_in * g.l..(s + 1) * g.c_in * g.l];
                        let dy_n = &upstream[s * g.c_out * g.l_out..(s + 1) * g.c_out * g.l_out];
                        let col_t = transpose(&im2col(in_n, &g), ck, g.l_out);
                        gemm_acc(&mut dw, dy_n, &col_t, g.c_out, g.l_out, ck);
                    }
                    dw
                })
                .collect();
            let mut dw = vec![E::ZERO; g.c_out * ck];
            for p in partials {
                for (a, b) in dw.iter_mut().zip(p) {
                    *a += b;
                }
            }
            Some(dw)
        } else {
            None
        };

        let d_bias = if bias.node.needs_grad {
            let mut db = vec![E::ZERO; g.c_out];
            for dy_n in upstream.chunks(g.c_out * g.l_out) {
                for (co, db_c) in db.iter_mut().enumerate() {
                    for &v in &dy_n[co * g.l_out..(co + 1) * g.l_out] {
                        *db_c += v;
                    }
                }
            }
            Some(db)
        } else {
            None
        };

        vec![d_input, d_weight, d_bias]
    }
}

// ---------------------------------------------------------------------------
// maxpool1d
// ---------------------------------------------------------------------------

/// Max-pool over the last axis. Returns the pooled tensor and the flat argmax
/// index (into the input's last axis) per output element; ties go to the
/// lowest index.
pub fn maxpool1d<E: Element>(
    input: &Tensor<E>,
    kernel: usize,
    stride: usize,
) -> Result<(Tensor<E>, Vec<usize>)> {
    let (n, c, l, batched) = batch_view(input, "maxpool1d input")?;
    if kernel == 0 || stride == 0 {
        return Err(TensorError::InvalidArgument(
            "maxpool1d kernel and stride must be >= 1".into(),
        ));
    }
    let l_out = maxpool1d_out_len(l, kernel, stride).ok_or_else(|| {
        TensorError::InvalidArgument(format!(
            "maxpool1d: kernel {kernel} larger than input length {l}"
        ))
    })?;

    let data = input.data();
    let mut out = vec![E::ZERO; n * c * l_out];
    let mut argmax = vec![0usize; n * c * l_out];
    for nc in 0..n * c {
        let row = &data[nc * l..(nc + 1) * l];
        for o in 0..l_out {
            let start = o * stride;
            let mut best = start;
            for pos in start + 1..start + kernel {
                if row[pos] > row[best] {
                    best = pos;
                }
            }
            out[nc * l_out + o] = row[best];
            argmax[nc * l_out + o] = best;
        }
    }

    let shape = if batched {
        vec![n, c, l_out]
    } else {
        vec![c, l_out]
    };
    let t = Tensor::from_op(
        shape,
        out,
        vec![input.clone()],
        Box::new(MaxPoolBackward {
            argmax: argmax.clone(),
            l,
            l_out,
        }),
    );
    Ok((t, argmax))
}

struct MaxPoolBackward {
    argmax: Vec<usize>,
    l: usize,
    l_out: usize,
}

impl<E: Element> Backward<E> for MaxPoolBackward {
    fn backward(&self, parents: &[Tensor<E>], upstream: &[E]) -> Vec<Option<Vec<E>>> {
        if !parents[0].node.needs_grad {
            return vec![None];
        }
        let mut dx = vec![E::ZERO; parents[0].len()];
        for (nc, dy_row) in upstream.chunks(self.l_out).enumerate() {
            let dx_row = &mut dx[nc * self.l..(nc + 1) * self.l];
            let am = &self.argmax[nc * self.l_out..(nc + 1) * self.l_out];
            for (o, &dy) in dy_row.iter().enumerate() {
                dx_row[am[o]] += dy;
            }
        }
        vec![Some(dx)]
    }
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

/// `input [N×F_in]`, `weight [F_out×F_in]`, `bias [F_out]` → `[N×F_out]`,
/// row i = weight · input_i + bias.
pub fn linear<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
) -> Result<Tensor<E>> {
    let (n, f_in) = match input.shape() {
        [n, f] => (*n, *f),
        other => {
            return Err(TensorError::ShapeMismatch(format!(
                "linear input expects [N, F_in], got {other:?}"
            )))
        }
    };
    let (f_out, w_in) = match weight.shape() {
        [o, i] => (*o, *i),
        other => {
            return Err(TensorError::ShapeMismatch(format!(
                "linear weight expects [F_out, F_in], got {other:?}"
            )))
        }
    };
    if w_in != f_in {
        return Err(TensorError::ShapeMismatch(format!(
            "linear: input features {f_in} do not match weight's {w_in}"
        )));
    }
    if bias.shape() != [f_out] {
        return Err(TensorError::ShapeMismatch(format!(
            "linear bias expects [{f_out}], got {:?}",
            bias.shape()
        )));
    }

    // out = input · weightᵀ + bias
    let w_t = transpose(weight.data(), f_out, f_in);
    let mut out = vec![E::ZERO; n * f_out];
    gemm_acc(&mut out, input.data(), &w_t, n, f_in, f_out);
    let b = bias.data();
    for row in out.chunks_mut(f_out) {
        for (v, &bj) in row.iter_mut().zip(b) {
            *v += bj;
        }
    }

    Ok(Tensor::from_op(
        vec![n, f_out],
        out,
        vec![input.clone(), weight.clone(), bias.clone()],
        Box::new(LinearBackward { n, f_in, f_out }),
    ))
}

struct LinearBackward {
    n: usize,
    f_in: usize,
    f_out: usize,
}

impl<E: Element> Backward<E> for LinearBackward {
    fn backward(&self, parents: &[Tensor<E>], upstream: &[E]) -> Vec<Option<Vec<E>>> {
        let (input, weight, bias) = (&parents[0], &parents[1], &parents[2]);

        let d_input = if input.node.needs_grad {
            let mut dx = vec![E::ZERO; self.n * self.f_in];
            gemm_acc(&mut dx, upstream, weight.data(), self.n, self.f_out, self.f_in);
            Some(dx)
        } else {
            None
        };

        let d_weight = if weight.node.needs_grad {
            let dy_t = transpose(upstream, self.n, self.f_out);
            let mut dw = vec![E::ZERO; self.f_out * self.f_in];
            gemm_acc(&mut dw, &dy_t, input.data(), self.f_out, self.n, self.f_in);
            Some(dw)
        } else {
            None
        };

        let d_bias = if bias.node.needs_grad {
            let mut db = vec![E::ZERO; self.f_out];
            for row in upstream.chunks(self.f_out) {
                for (a, &v) in db.iter_mut().zip(row) {
                    *a += v;
                }
            }
            Some(db)
        } else {
            None
        };

        vec![d_input, d_weight, d_bias]
    }
}

// ---------------------------------------------------------------------------
// elementwise and reductions
// ---------------------------------------------------------------------------

/// Elementwise max(0, x); the subgradient at 0 is 0.
pub fn relu<E: Element>(input: &Tensor<E>) -> Tensor<E> {
    let data: Vec<E> = input
        .data()
        .iter()
        .map(|&v| if v > E::ZERO { v } else { E::ZERO })
        .collect();
    let mask: Vec<bool> = input.data().iter().map(|&v| v > E::ZERO).collect();
    Tensor::from_op(
        input.shape().to_vec(),
        data,
        vec![input.clone()],
        Box::new(ReluBackward { mask }),
    )
}

struct ReluBackward {
    mask: Vec<bool>,
}

impl<E: Element> Backward<E> for ReluBackward {
    fn backward(&self, parents: &[Tensor<E>], upstream: &[E]) -> Vec<Option<Vec<E>>> {
        if !parents[0].node.needs_grad {
            return vec![None];
        }
        let dx = upstream
            .iter()
            .zip(&self.mask)
            .map(|(&g, &m)| if m { g } else { E::ZERO })
            .collect();
        vec![Some(dx)]
    }
}

/// Inverted dropout: in training mode each element is zeroed with probability
/// `p` and survivors are scaled by 1/(1-p); in eval mode this is the identity.
/// `p == 0` consumes no randomness.
pub fn dropout<E: Element>(
    input: &Tensor<E>,
    p: f64,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<E>> {
    if !(0.0..1.0).contains(&p) {
        return Err(TensorError::InvalidArgument(format!(
            "dropout probability must be in [0, 1), got {p}"
        )));
    }
    if !training || p == 0.0 {
        return Ok(identity(input));
    }
    let scale = E::from_f64(1.0 / (1.0 - p));
    let mask: Vec<E> = input
        .data()
        .iter()
        .map(|_| {
            if rng.gen::<f64>() < p {
                E::ZERO
            } else {
                scale
            }
        })
        .collect();
    let data: Vec<E> = input
        .data()
        .iter()
        .zip(&mask)
        .map(|(&v, &m)| v * m)
        .collect();
    Ok(Tensor::from_op(
        input.shape().to_vec(),
        data,
        vec![input.clone()],
        Box::new(ScaleMaskBackward { mask }),
    ))
}

struct ScaleMaskBackward<E: Element> {
    mask: Vec<E>,
}

impl<E: Element> Backward<E> for ScaleMaskBackward<E> {
    fn backward(&self, parents: &[Tensor<E>], upstream: &[E]) -> Vec<Option<Vec<E>>> {
        if !parents[0].node.needs_grad {
            return vec![None];
        }
        let dx = upstream
            .iter()
            .zip(&self.mask)
            .map(|(&g, &m)| g * m)
            .collect();
        vec![Some(dx)]
    }
}

fn identity<E: Element>(input: &Tensor<E>) -> Tensor<E> {
    Tensor::from_op(
        input.shape().to_vec(),
        input.data().to_vec(),
        vec![input.clone()],
        Box::new(IdentityBackward),
    )
}

struct IdentityBackward;

impl<E: Element> Backward<E> for IdentityBackward {
    fn backward(&self, parents: &[Tensor<E>], upstream: &[E]) -> Vec<Option<Vec<E>>> {
        if !parents[0].node.needs_grad {
            return vec![None];
        }
        vec![Some(upstream.to_vec())]
    }
}

/// Reshape without copying semantics (gradient reshapes back).
pub fn reshape<E: Element>(input: &Tensor<E>, shape: Vec<usize>) -> Result<Tensor<E>> {
    let expect: usize = shape.iter().product();
    if expect != input.len() {
        return Err(TensorError::ShapeMismatch(format!(
            "cannot reshape {} elements into {:?}",
            input.len(),
            shape
        )));
    }
    Ok(Tensor::from_op(
        shape,
        input.data().to_vec(),
        vec![input.clone()],
        Box::new(IdentityBackward),
    ))
}

pub fn neg<E: Element>(input: &Tensor<E>) -> Tensor<E> {
    let data = input.data().iter().map(|&v| -v).collect();
    Tensor::from_op(
        input.shape().to_vec(),
        data,
        vec![input.clone()],
        Box::new(NegBackward),
    )
}

struct NegBackward;

impl<E: Element> Backward<E> for NegBackward {
    fn backward(&self, parents: &[Tensor<E>], upstream: &[E]) -> Vec<Option<Vec<E>>> {
        if !parents[0].node.needs_grad {
            return vec![None];
        }
        vec![Some(upstream.iter().map(|&g| -g).collect())]
    }
}

/// Elementwise product of same-shape tensors.
pub fn mul<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch(format!(
            "mul: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x * y)
        .collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(MulBackward),
    ))
}

struct MulBackward;

impl<E: Element> Backward<E> for MulBackward {
    fn backward(&self, parents: &[Tensor<E>], upstream: &[E]) -> Vec<Option<Vec<E>>> {
        let (a, b) = (&parents[0], &parents[1]);
        let da = a.node.needs_grad.then(|| {
            upstream
                .iter()
                .zip(b.data())
                .map(|(&g, &y)| g * y)
                .collect()
        });
        let db = b.node.needs_grad.then(|| {
            upstream
                .iter()
                .zip(a.data())
                .map(|(&g, &x)| g * x)
                .collect()
        });
        vec![da, db]
    }
}

/// Sum of all elements as a scalar tensor.
pub fn sum_all<E: Element>(input: &Tensor<E>) -> Tensor<E> {
    let s: E = input.data().iter().copied().sum();
    Tensor::from_op(
        vec![],
        vec![s],
        vec![input.clone()],
        Box::new(SumBackward),
    )
}

struct SumBackward;

impl<E: Element> Backward<E> for SumBackward {
    fn backward(&self, parents: &[Tensor<E>], upstream: &[E]) -> Vec<Option<Vec<E>>> {
        if !parents[0].node.needs_grad {
            return vec![None];
        }
        vec![Some(vec![upstream[0]; parents[0].len()])]
    }
}

// ---------------------------------------------------------------------------
// cross entropy
// ---------------------------------------------------------------------------

/// Weighted cross entropy over logits `[N×C]`:
/// `loss = Σ_i w_i · (−log softmax(logits_i)[label_i]) / Σ_i w_i`,
/// stabilized by per-row max subtraction.
pub fn cross_entropy<E: Element>(
    logits: &Tensor<E>,
    labels: &[usize],
    sample_weights: &[E],
) -> Result<Tensor<E>> {
    let (n, c) = match logits.shape() {
        [n, c] => (*n, *c),
        other => {
            return Err(TensorError::ShapeMismatch(format!(
                "cross_entropy expects logits [N, C], got {other:?}"
            )))
        }
    };
    if labels.len() != n || sample_weights.len() != n {
        return Err(TensorError::ShapeMismatch(format!(
            "cross_entropy: {n} rows but {} labels / {} weights",
            labels.len(),
            sample_weights.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(TensorError::InvalidArgument(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    if sample_weights.iter().any(|&w| w < E::ZERO) {
        return Err(TensorError::InvalidArgument(
            "sample weights must be non-negative".into(),
        ));
    }
    let weight_sum: E = sample_weights.iter().copied().sum();
    if weight_sum <= E::ZERO {
        return Err(TensorError::InvalidArgument(
            "all-zero sample weights leave the loss normalization undefined".into(),
        ));
    }

    let data = logits.data();
    let mut probs = vec![E::ZERO; n * c];
    let mut loss = E::ZERO;
    for i in 0..n {
        let row = &data[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(row[0], Element::max);
        let mut denom = E::ZERO;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            probs[i * c + j] = e;
            denom += e;
        }
        for p in &mut probs[i * c..(i + 1) * c] {
            *p = *p / denom;
        }
        let log_p = (row[labels[i]] - max) - denom.ln();
        loss += sample_weights[i] * -log_p;
    }
    loss = loss / weight_sum;

    Ok(Tensor::from_op(
        vec![],
        vec![loss],
        vec![logits.clone()],
        Box::new(CrossEntropyBackward {
            probs,
            labels: labels.to_vec(),
            weights: sample_weights.to_vec(),
            weight_sum,
            classes: c,
        }),
    ))
}

struct CrossEntropyBackward<E: Element> {
    probs: Vec<E>,
    labels: Vec<usize>,
    weights: Vec<E>,
    weight_sum: E,
    classes: usize,
}

impl<E: Element> Backward<E> for CrossEntropyBackward<E> {
    fn backward(&self, parents: &[Tensor<E>], upstream: &[E]) -> Vec<Option<Vec<E>>> {
        if !parents[0].node.needs_grad {
            return vec![None];
        }
        let g = upstream[0];
        let c = self.classes;
        let mut dx = vec![E::ZERO; self.probs.len()];
        for i in 0..self.labels.len() {
            let wi = self.weights[i] / self.weight_sum;
            for j in 0..c {
                let indicator = if j == self.labels[i] { E::ONE } else { E::ZERO };
                dx[i * c + j] = g * wi * (self.probs[i * c + j] - indicator);
            }
        }
        vec![Some(dx)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backward;
    use rand_chacha::rand_core::SeedableRng;

    fn t64(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn conv1d_identity_kernel() {
        let x = t64(vec![1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let w = t64(vec![1, 1, 1], vec![1.0]);
        let b = t64(vec![1], vec![0.0]);
        let y = conv1d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 5]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn conv1d_padded_sliding_sum() {
        // Direct sliding-window sum with padding 1: (1,0,2,0) * (1,1,1) -> (1,3,2,2)
        let x = t64(vec![1, 4], vec![1.0, 0.0, 2.0, 0.0]);
        let w = t64(vec![1, 1, 3], vec![1.0, 1.0, 1.0]);
        let b = t64(vec![1], vec![0.0]);
        let y = conv1d(&x, &w, &b, 1, 1).unwrap();
        assert_eq!(y.data(), &[1.0, 3.0, 2.0, 2.0]);
    }

    #[test]
    fn conv1d_same_padding_keeps_length() {
        let x = Tensor::<f64>::zeros(vec![1, 3000]);
        let w = Tensor::<f64>::zeros(vec![32, 1, 3]);
        let b = Tensor::<f64>::zeros(vec![32]);
        let y = conv1d(&x, &w, &b, 1, 1).unwrap();
        assert_eq!(y.shape(), &[32, 3000]);
    }

    #[test]
    fn conv1d_channel_mismatch_rejected() {
        let x = Tensor::<f64>::zeros(vec![2, 10]);
        let w = Tensor::<f64>::zeros(vec![4, 3, 3]);
        let b = Tensor::<f64>::zeros(vec![4]);
        assert!(matches!(
            conv1d(&x, &w, &b, 1, 1),
            Err(TensorError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn maxpool_basic_and_tiebreak() {
        let x = t64(vec![1, 4], vec![1.0, 3.0, 2.0, 8.0]);
        let (y, _) = maxpool1d(&x, 4, 4).unwrap();
        assert_eq!(y.data(), &[8.0]);

        // All-equal window: gradient goes to the lowest index only.
        let x = Tensor::param(vec![1, 4], vec![5.0f64, 5.0, 5.0, 5.0]).unwrap();
        let (y, am) = maxpool1d(&x, 4, 4).unwrap();
        assert_eq!(am, vec![0]);
        let loss = sum_all(&y);
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_length_3000() {
        let x = Tensor::<f64>::zeros(vec![1, 3000]);
        let (y, _) = maxpool1d(&x, 4, 4).unwrap();
        assert_eq!(y.shape(), &[1, 750]);
    }

    #[test]
    fn maxpool_too_short_rejected() {
        let x = Tensor::<f64>::zeros(vec![1, 3]);
        assert!(maxpool1d(&x, 4, 4).is_err());
    }

    #[test]
    fn linear_identity_and_hand_case() {
        let x = t64(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let w = t64(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = t64(vec![2], vec![0.0, 0.0]);
        let y = linear(&x, &w, &b).unwrap();
        assert_eq!(y.data(), x.data());

        let x = t64(vec![1, 2], vec![1.0, 2.0]);
        let w = t64(vec![2, 2], vec![1.0, 1.0, 0.0, 1.0]);
        let b = t64(vec![2], vec![0.0, 0.0]);
        let y = linear(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[3.0, 2.0]);
    }

    #[test]
    fn relu_cases() {
        let x = t64(vec![3], vec![-1.0, 0.0, 2.0]);
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);

        let x = Tensor::param(vec![2], vec![-3.0f64, -1.0]).unwrap();
        let loss = sum_all(&relu(&x));
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0]);

        let x = Tensor::param(vec![1], vec![3.0f64]).unwrap();
        let loss = sum_all(&relu(&x));
        backward(&loss).unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0]);
    }

    #[test]
    fn dropout_eval_is_identity_and_p0_noop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = t64(vec![4], vec![1.0, 2.0, 3.0, 4.0]);
        let y = dropout(&x, 0.7, false, &mut rng).unwrap();
        assert_eq!(y.data(), x.data());
        let y = dropout(&x, 0.0, true, &mut rng).unwrap();
        assert_eq!(y.data(), x.data());
        assert!(dropout(&x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_mean_at_scale() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let x = Tensor::from_vec(vec![n], vec![1.0f64; n]).unwrap();
        let y = dropout(&x, 0.5, true, &mut rng).unwrap();
        let mean: f64 = y.data().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn cross_entropy_uniform_two_class() {
        let logits = t64(vec![1, 2], vec![0.0, 0.0]);
        let loss = cross_entropy(&logits, &[0], &[1.0]).unwrap();
        assert!((loss.data()[0] - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_weight_scale_invariance() {
        let logits = t64(vec![2, 2], vec![0.3, -0.4, 1.2, 0.1]);
        let a = cross_entropy(&logits, &[0, 1], &[1.0, 1.0]).unwrap();
        let b = cross_entropy(&logits, &[0, 1], &[3.5, 3.5]).unwrap();
        assert!((a.data()[0] - b.data()[0]).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_zero_weight_drops_sample() {
        let logits = t64(vec![2, 2], vec![0.3, -0.4, 9.0, -9.0]);
        let weighted = cross_entropy(&logits, &[0, 1], &[2.0, 0.0]).unwrap();
        let single = cross_entropy(
            &t64(vec![1, 2], vec![0.3, -0.4]),
            &[0],
            &[1.0],
        )
        .unwrap();
        assert!((weighted.data()[0] - single.data()[0]).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_all_zero_weights_rejected() {
        let logits = t64(vec![2, 2], vec![0.0; 4]);
        assert!(cross_entropy(&logits, &[0, 1], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn linear_512_to_256_shape() {
        let x = Tensor::<f32>::zeros(vec![4, 512]);
        let w = Tensor::<f32>::zeros(vec![256, 512]);
        let b = Tensor::<f32>::zeros(vec![256]);
        let y = linear(&x, &w, &b).unwrap();
        assert_eq!(y.shape(), &[4, 256]);
    }
}
