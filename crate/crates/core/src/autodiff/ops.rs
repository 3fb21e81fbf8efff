//! Forward and backward kernels for every differentiable operation.
//!
//! The forward kernels are usable directly on tensors; [`super::Tape`]
//! records calls to them and replays the matching backward kernels.

use std::fmt;
use std::str::FromStr;

use super::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryKind {
    Relu,
    Sigmoid,
    Tanh,
}

impl UnaryKind {
    pub const ALL: [UnaryKind; 3] = [UnaryKind::Relu, UnaryKind::Sigmoid, UnaryKind::Tanh];

    pub fn name(self) -> &'static str {
        match self {
            UnaryKind::Relu => "relu",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Tanh => "tanh",
        }
    }
}

impl FromStr for UnaryKind {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| TensorError::Registry {
                kind: "activation",
                name: s.to_string(),
                available: Self::ALL.iter().map(|k| k.name().to_string()).collect(),
            })
    }
}

impl fmt::Display for UnaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

impl ReduceKind {
    pub const ALL: [ReduceKind; 3] = [ReduceKind::Sum, ReduceKind::Mean, ReduceKind::Max];

    pub fn name(self) -> &'static str {
        match self {
            ReduceKind::Sum => "sum",
            ReduceKind::Mean => "mean",
            ReduceKind::Max => "max",
        }
    }
}

impl FromStr for ReduceKind {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| TensorError::Registry {
                kind: "reduction",
                name: s.to_string(),
                available: Self::ALL.iter().map(|k| k.name().to_string()).collect(),
            })
    }
}

/// Loss kinds with the targets they are evaluated against.
#[derive(Debug, Clone, PartialEq)]
pub enum LossTarget {
    /// Class ids for `[n×c]` logits. Rows whose id equals `ignore` do not
    /// contribute to the mean.
    SoftmaxCrossEntropy {
        ids: Vec<usize>,
        ignore: Option<usize>,
    },
    /// Binary targets, one per logit.
    SigmoidBce { targets: Vec<f64> },
    /// Real targets, one per prediction.
    Mse { targets: Vec<f64> },
}

impl LossTarget {
    pub fn name(&self) -> &'static str {
        match self {
            LossTarget::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            LossTarget::SigmoidBce { .. } => "sigmoid_bce",
            LossTarget::Mse { .. } => "mse",
        }
    }
}

fn shape_err(op: &'static str, left: &Tensor, right: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        left: left.dims().to_vec(),
        right: right.dims().to_vec(),
    }
}

fn check_finite(op: &'static str, t: Tensor) -> Result<Tensor, TensorError> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(TensorError::NonFinite { op })
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.rank() != 2 || b.rank() != 2 || a.dims()[1] != b.dims()[0] {
        return Err(shape_err("matmul", a, b));
    }
    let (m, k, n) = (a.dims()[0], a.dims()[1], b.dims()[1]);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for l in 0..k {
            let av = ad[i * k + l];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[l * n..(l + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    check_finite("matmul", Tensor::from_parts(vec![m, n], out))
}

pub(crate) fn transpose(a: &Tensor) -> Tensor {
    let (m, n) = (a.dims()[0], a.dims()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data()[i * n + j];
        }
    }
    Tensor::from_parts(vec![n, m], out)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.dims() != b.dims() {
        return Err(shape_err("add", a, b));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    check_finite("add", Tensor::from_parts(a.dims().to_vec(), data))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    if a.dims() != b.dims() {
        return Err(shape_err("mul", a, b));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    check_finite("mul", Tensor::from_parts(a.dims().to_vec(), data))
}

pub fn scale(a: &Tensor, k: f64) -> Result<Tensor, TensorError> {
    check_finite("scale", a.map(|v| v * k))
}

/// Adds a `[n]` bias to every trailing row of `x[..., n]`.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
    let n = *x.dims().last().unwrap();
    if bias.rank() != 1 || bias.dims()[0] != n {
        return Err(shape_err("add_bias", x, bias));
    }
    let mut data = x.data().to_vec();
    for chunk in data.chunks_mut(n) {
        for (v, b) in chunk.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    check_finite("add_bias", Tensor::from_parts(x.dims().to_vec(), data))
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn apply_unary(kind: UnaryKind, x: &Tensor) -> Result<Tensor, TensorError> {
    let out = match kind {
        UnaryKind::Relu => x.map(|v| v.max(0.0)),
        UnaryKind::Sigmoid => x.map(sigmoid),
        UnaryKind::Tanh => x.map(f64::tanh),
    };
    check_finite(kind.name(), out)
}

pub(crate) fn unary_backward(kind: UnaryKind, x: &Tensor, y: &Tensor, g: &Tensor) -> Tensor {
    let data = match kind {
        UnaryKind::Relu => x
            .data()
            .iter()
            .zip(g.data())
            .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
            .collect(),
        UnaryKind::Sigmoid => y
            .data()
            .iter()
            .zip(g.data())
            .map(|(&yv, &gv)| gv * yv * (1.0 - yv))
            .collect(),
        UnaryKind::Tanh => y
            .data()
            .iter()
            .zip(g.data())
            .map(|(&yv, &gv)| gv * (1.0 - yv * yv))
            .collect(),
    };
    Tensor::from_parts(x.dims().to_vec(), data)
}

/// Softmax over the last axis.
pub fn softmax(x: &Tensor) -> Result<Tensor, TensorError> {
    let n = *x.dims().last().unwrap();
    let mut data = x.data().to_vec();
    for row in data.chunks_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    check_finite("softmax", Tensor::from_parts(x.dims().to_vec(), data))
}

pub(crate) fn softmax_backward(y: &Tensor, g: &Tensor) -> Tensor {
    let n = *y.dims().last().unwrap();
    let mut out = vec![0.0; y.len()];
    for ((yr, gr), or) in y
        .data()
        .chunks(n)
        .zip(g.data().chunks(n))
        .zip(out.chunks_mut(n))
    {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, &yv), &gv) in or.iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot);
        }
    }
    Tensor::from_parts(y.dims().to_vec(), out)
}

/// Splits dims around `axis` into (outer, extent, inner) strides.
fn axis_split(dims: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = dims[..axis].iter().product();
    let inner = dims[axis + 1..].iter().product();
    (outer, dims[axis], inner)
}

fn removed_axis(dims: &[usize], axis: usize) -> Vec<usize> {
    let mut out: Vec<usize> = dims
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != axis)
        .map(|(_, &d)| d)
        .collect();
    if out.is_empty() {
        out.push(1);
    }
    out
}

pub fn reduce(kind: ReduceKind, x: &Tensor, axis: usize) -> Result<Tensor, TensorError> {
    if axis >= x.rank() {
        return Err(TensorError::Shape {
            op: "reduce",
            left: x.dims().to_vec(),
            right: vec![axis],
        });
    }
    let (outer, n, inner) = axis_split(x.dims(), axis);
    let xd = x.data();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| xd[(o * n + l) * inner + i];
            out[o * inner + i] = match kind {
                ReduceKind::Sum => (0..n).map(at).sum(),
                ReduceKind::Mean => (0..n).map(at).sum::<f64>() / n as f64,
                ReduceKind::Max => (0..n).map(at).fold(f64::NEG_INFINITY, f64::max),
            };
        }
    }
    check_finite(
        "reduce",
        Tensor::from_parts(removed_axis(x.dims(), axis), out),
    )
}

pub(crate) fn reduce_backward(kind: ReduceKind, x: &Tensor, axis: usize, g: &Tensor) -> Tensor {
    let (outer, n, inner) = axis_split(x.dims(), axis);
    let xd = x.data();
    let gd = g.data();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let gv = gd[o * inner + i];
            match kind {
                ReduceKind::Sum | ReduceKind::Mean => {
                    let v = if kind == ReduceKind::Mean {
                        gv / n as f64
                    } else {
                        gv
                    };
                    for l in 0..n {
                        out[(o * n + l) * inner + i] = v;
                    }
                }
                ReduceKind::Max => {
                    // first maximal element wins
                    let mut best = 0;
                    for l in 1..n {
                        if xd[(o * n + l) * inner + i] > xd[(o * n + best) * inner + i] {
                            best = l;
                        }
                    }
                    out[(o * n + best) * inner + i] = gv;
                }
            }
        }
    }
    Tensor::from_parts(x.dims().to_vec(), out)
}

/// Gathers rows of a `[v×h]` table.
pub fn embedding_lookup(table: &Tensor, ids: &[usize]) -> Result<Tensor, TensorError> {
    if table.rank() != 2 {
        return Err(TensorError::Shape {
            op: "embedding_lookup",
            left: table.dims().to_vec(),
            right: vec![ids.len()],
        });
    }
    if ids.is_empty() {
        return Err(TensorError::Contract("embedding_lookup: empty id list".into()));
    }
    let (v, h) = (table.dims()[0], table.dims()[1]);
    let mut out = Vec::with_capacity(ids.len() * h);
    for &id in ids {
        if id >= v {
            return Err(TensorError::Index {
                op: "embedding_lookup",
                index: id,
                extent: v,
            });
        }
        out.extend_from_slice(table.row(id));
    }
    Ok(Tensor::from_parts(vec![ids.len(), h], out))
}

pub(crate) fn embedding_backward(table: &Tensor, ids: &[usize], g: &Tensor) -> Tensor {
    let h = table.dims()[1];
    let mut out = vec![0.0; table.len()];
    for (r, &id) in ids.iter().enumerate() {
        for j in 0..h {
            out[id * h + j] += g.data()[r * h + j];
        }
    }
    Tensor::from_parts(table.dims().to_vec(), out)
}

/// Batch view of a conv1d input: `[s×h]` counts as a batch of one.
fn conv_dims(x: &Tensor) -> Option<(usize, usize, usize)> {
    match *x.dims() {
        [s, h] => Some((1, s, h)),
        [b, s, h] => Some((b, s, h)),
        _ => None,
    }
}

/// Same-padded 1-d convolution of `x[(b×)s×h]` with `filters[w×h×f]`.
/// Even widths put the extra padding position on the right.
pub fn conv1d(x: &Tensor, filters: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
    let Some((b, s, h)) = conv_dims(x) else {
        return Err(shape_err("conv1d", x, filters));
    };
    if filters.rank() != 3 || filters.dims()[1] != h {
        return Err(shape_err("conv1d", x, filters));
    }
    let (w, f) = (filters.dims()[0], filters.dims()[2]);
    if bias.dims() != [f] {
        return Err(shape_err("conv1d", filters, bias));
    }
    let pad = (w - 1) / 2;
    let (xd, fd) = (x.data(), filters.data());
    let mut out = vec![0.0; b * s * f];
    for bi in 0..b {
        for t in 0..s {
            let orow = &mut out[(bi * s + t) * f..(bi * s + t + 1) * f];
            orow.copy_from_slice(bias.data());
            for k in 0..w {
                let Some(src) = (t + k).checked_sub(pad).filter(|&p| p < s) else {
                    continue;
                };
                let xrow = &xd[(bi * s + src) * h..(bi * s + src + 1) * h];
                for (c, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let frow = &fd[(k * h + c) * f..(k * h + c + 1) * f];
                    for (o, &fv) in orow.iter_mut().zip(frow) {
                        *o += xv * fv;
                    }
                }
            }
        }
    }
    let mut dims = x.dims().to_vec();
    *dims.last_mut().unwrap() = f;
    check_finite("conv1d", Tensor::from_parts(dims, out))
}

/// Gradients of conv1d w.r.t. (x, filters, bias).
pub(crate) fn conv1d_backward(
    x: &Tensor,
    filters: &Tensor,
    g: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (b, s, h) = conv_dims(x).unwrap();
    let (w, f) = (filters.dims()[0], filters.dims()[2]);
    let pad = (w - 1) / 2;
    let (xd, fd, gd) = (x.data(), filters.data(), g.data());
    let mut dx = vec![0.0; x.len()];
    let mut df = vec![0.0; filters.len()];
    let mut db = vec![0.0; f];
    for bi in 0..b {
        for t in 0..s {
            let grow = &gd[(bi * s + t) * f..(bi * s + t + 1) * f];
            for (d, &gv) in db.iter_mut().zip(grow) {
                *d += gv;
            }
            for k in 0..w {
                let Some(src) = (t + k).checked_sub(pad).filter(|&p| p < s) else {
                    continue;
                };
                for c in 0..h {
                    let xi = (bi * s + src) * h + c;
                    let fo = (k * h + c) * f;
                    let mut acc = 0.0;
                    for o in 0..f {
                        acc += grow[o] * fd[fo + o];
                        df[fo + o] += grow[o] * xd[xi];
                    }
                    dx[xi] += acc;
                }
            }
        }
    }
    (
        Tensor::from_parts(x.dims().to_vec(), dx),
        Tensor::from_parts(filters.dims().to_vec(), df),
        Tensor::from_parts(vec![f], db),
    )
}

/// One vanilla recurrent step: `tanh(x·W + h·U + b)`.
pub fn rnn_step(
    x: &Tensor,
    h_prev: &Tensor,
    w: &Tensor,
    u: &Tensor,
    b: &Tensor,
) -> Result<Tensor, TensorError> {
    let pre = add_bias(&add(&matmul(x, w)?, &matmul(h_prev, u)?)?, b)?;
    apply_unary(UnaryKind::Tanh, &pre)
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor, TensorError> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
    if axis >= first.rank() {
        return Err(TensorError::Shape {
            op: "concat",
            left: first.dims().to_vec(),
            right: vec![axis],
        });
    }
    for p in &parts[1..] {
        let compatible = p.rank() == first.rank()
            && p.dims()
                .iter()
                .zip(first.dims())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(shape_err("concat", first, p));
        }
    }
    let (outer, _, inner) = axis_split(first.dims(), axis);
    let total: usize = parts.iter().map(|p| p.dims()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let span = p.dims()[axis] * inner;
            out.extend_from_slice(&p.data()[o * span..(o + 1) * span]);
        }
    }
    let mut dims = first.dims().to_vec();
    dims[axis] = total;
    Ok(Tensor::from_parts(dims, out))
}

pub(crate) fn concat_backward(parts: &[&Tensor], axis: usize, g: &Tensor) -> Vec<Tensor> {
    let (outer, _, inner) = axis_split(g.dims(), axis);
    let total = g.dims()[axis];
    let mut grads: Vec<Vec<f64>> = parts.iter().map(|p| Vec::with_capacity(p.len())).collect();
    for o in 0..outer {
        let mut offset = 0;
        for (p, gp) in parts.iter().zip(grads.iter_mut()) {
            let span = p.dims()[axis] * inner;
            let start = o * total * inner + offset;
            gp.extend_from_slice(&g.data()[start..start + span]);
            offset += span;
        }
    }
    parts
        .iter()
        .zip(grads)
        .map(|(p, d)| Tensor::from_parts(p.dims().to_vec(), d))
        .collect()
}

/// Stacks equal-dims tensors along a new `axis`.
pub fn stack(parts: &[&Tensor], axis: usize) -> Result<Tensor, TensorError> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::Contract("stack of zero tensors".into()))?;
    if axis > first.rank() {
        return Err(TensorError::Shape {
            op: "stack",
            left: first.dims().to_vec(),
            right: vec![axis],
        });
    }
    let mut expanded = first.dims().to_vec();
    expanded.insert(axis, 1);
    let views = parts
        .iter()
        .map(|p| {
            if p.dims() != first.dims() {
                Err(shape_err("stack", first, p))
            } else {
                Ok(Tensor::from_parts(expanded.clone(), p.data().to_vec()))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    concat(&views.iter().collect::<Vec<_>>(), axis)
}

/// Slice `index` of `axis`, with that axis removed.
pub fn select(x: &Tensor, axis: usize, index: usize) -> Result<Tensor, TensorError> {
    if axis >= x.rank() {
        return Err(TensorError::Shape {
            op: "select",
            left: x.dims().to_vec(),
            right: vec![axis],
        });
    }
    let (outer, n, inner) = axis_split(x.dims(), axis);
    if index >= n {
        return Err(TensorError::Index {
            op: "select",
            index,
            extent: n,
        });
    }
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        let start = (o * n + index) * inner;
        out.extend_from_slice(&x.data()[start..start + inner]);
    }
    Ok(Tensor::from_parts(removed_axis(x.dims(), axis), out))
}

pub(crate) fn select_backward(x: &Tensor, axis: usize, index: usize, g: &Tensor) -> Tensor {
    let (outer, n, inner) = axis_split(x.dims(), axis);
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        let start = (o * n + index) * inner;
        out[start..start + inner].copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
    }
    Tensor::from_parts(x.dims().to_vec(), out)
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Batch-mean loss of `prediction` against `target`, as a `[1]` tensor.
pub fn compute_loss(prediction: &Tensor, target: &LossTarget) -> Result<Tensor, TensorError> {
    let value = match target {
        LossTarget::SoftmaxCrossEntropy { ids, ignore } => {
            let c = *prediction.dims().last().unwrap();
            let rows = prediction.len() / c;
            if prediction.rank() < 2 || ids.len() != rows {
                return Err(TensorError::Shape {
                    op: "softmax_cross_entropy",
                    left: prediction.dims().to_vec(),
                    right: vec![ids.len()],
                });
            }
            let mut total = 0.0;
            let mut active = 0usize;
            for (row, &id) in prediction.data().chunks(c).zip(ids) {
                if Some(id) == *ignore {
                    continue;
                }
                if id >= c {
                    return Err(TensorError::Index {
                        op: "softmax_cross_entropy",
                        index: id,
                        extent: c,
                    });
                }
                total += log_sum_exp(row) - row[id];
                active += 1;
            }
            if active == 0 {
                0.0
            } else {
                total / active as f64
            }
        }
        LossTarget::SigmoidBce { targets } => {
            if targets.len() != prediction.len() {
                return Err(TensorError::Shape {
                    op: "sigmoid_bce",
                    left: prediction.dims().to_vec(),
                    right: vec![targets.len()],
                });
            }
            let n = targets.len() as f64;
            prediction
                .data()
                .iter()
                .zip(targets)
                .map(|(&z, &y)| softplus(z) - y * z)
                .sum::<f64>()
                / n
        }
        LossTarget::Mse { targets } => {
            if targets.len() != prediction.len() {
                return Err(TensorError::Shape {
                    op: "mse",
                    left: prediction.dims().to_vec(),
                    right: vec![targets.len()],
                });
            }
            let n = targets.len() as f64;
            prediction
                .data()
                .iter()
                .zip(targets)
                .map(|(&p, &y)| (p - y) * (p - y))
                .sum::<f64>()
                / n
        }
    };
    check_finite(target.name(), Tensor::scalar(value))
}

pub(crate) fn loss_backward(prediction: &Tensor, target: &LossTarget, g: f64) -> Tensor {
    let mut out = vec![0.0; prediction.len()];
    match target {
        LossTarget::SoftmaxCrossEntropy { ids, ignore } => {
            let c = *prediction.dims().last().unwrap();
            let active = ids.iter().filter(|&&id| Some(id) != *ignore).count();
            if active > 0 {
                let k = g / active as f64;
                for ((row, orow), &id) in prediction
                    .data()
                    .chunks(c)
                    .zip(out.chunks_mut(c))
                    .zip(ids)
                {
                    if Some(id) == *ignore {
                        continue;
                    }
                    let lse = log_sum_exp(row);
                    for (o, &z) in orow.iter_mut().zip(row) {
                        *o = k * (z - lse).exp();
                    }
                    orow[id] -= k;
                }
            }
        }
        LossTarget::SigmoidBce { targets } => {
            let k = g / targets.len() as f64;
            for ((o, &z), &y) in out.iter_mut().zip(prediction.data()).zip(targets) {
                *o = k * (sigmoid(z) - y);
            }
        }
        LossTarget::Mse { targets } => {
            let k = 2.0 * g / targets.len() as f64;
            for ((o, &p), &y) in out.iter_mut().zip(prediction.data()).zip(targets) {
                *o = k * (p - y);
            }
        }
    }
    Tensor::from_parts(prediction.dims().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn t(dims: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(dims.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_zero() {
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let b = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(matmul(&eye, &b).unwrap(), b);
        let z = Tensor::zeros(&[2, 3]);
        let b = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(matmul(&z, &b).unwrap(), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn matmul_shape_error_names_dims() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 2])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn unary_examples() {
        let r = apply_unary(UnaryKind::Relu, &t(&[2], &[-1.0, 2.0])).unwrap();
        assert_eq!(r.data(), &[0.0, 2.0]);
        assert_eq!(apply_unary(UnaryKind::Sigmoid, &Tensor::scalar(0.0)).unwrap().item(), 0.5);
        assert_eq!(apply_unary(UnaryKind::Tanh, &Tensor::scalar(0.0)).unwrap().item(), 0.0);
    }

    #[test]
    fn unknown_unary_lists_available() {
        let err = "gelu".parse::<UnaryKind>().unwrap_err().to_string();
        assert!(err.contains("relu") && err.contains("sigmoid") && err.contains("tanh"));
    }

    #[test]
    fn reduce_examples() {
        let c = Tensor::full(&[2, 3, 4], 1.5);
        for axis in 0..3 {
            let m = reduce(ReduceKind::Mean, &c, axis).unwrap();
            assert!(m.data().iter().all(|&v| (v - 1.5).abs() < 1e-15));
        }
        assert_eq!(reduce(ReduceKind::Sum, &t(&[3], &[1.0, 2.0, 3.0]), 0).unwrap().data(), &[6.0]);
        let x = t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let m = reduce(ReduceKind::Max, &x, 1).unwrap();
        assert_eq!(m.dims(), &[2, 2]);
        assert_eq!(m.data(), x.data());
        assert!(reduce(ReduceKind::Sum, &x, 3).is_err());
    }

    #[test]
    fn max_gradient_goes_to_first_maximum() {
        let x = t(&[3], &[2.0, 5.0, 5.0]);
        let g = reduce_backward(ReduceKind::Max, &x, 0, &Tensor::scalar(1.0));
        assert_eq!(g.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn embedding_examples() {
        let table = t(&[3, 2], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(embedding_lookup(&table, &[0]).unwrap().data(), &[0.0, 1.0]);
        let out = embedding_lookup(&table, &[2, 2]).unwrap();
        assert_eq!(out.data(), &[4.0, 5.0, 4.0, 5.0]);
        let g = embedding_backward(&table, &[2, 2], &Tensor::full(&[2, 2], 1.0));
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 0.0, 2.0, 2.0]);
        match embedding_lookup(&table, &[3]) {
            Err(TensorError::Index { index: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn conv1d_examples() {
        let bias = t(&[2], &[0.5, -1.0]);
        let out = conv1d(&Tensor::zeros(&[4, 3]), &Tensor::full(&[3, 3, 2], 0.3), &bias).unwrap();
        for r in 0..4 {
            assert_eq!(out.row(r), bias.data());
        }
        // even widths pad one more position on the right
        let x = t(&[3, 1], &[1.0, 2.0, 3.0]);
        let f = t(&[2, 1, 1], &[1.0, 10.0]);
        let out = conv1d(&x, &f, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out.data(), &[21.0, 32.0, 3.0]);
    }

    #[test]
    fn conv1d_width_one_is_per_position_matmul() {
        let x = t(&[3, 2], &[1.0, -2.0, 0.5, 3.0, -1.0, 4.0]);
        let f = t(&[1, 2, 2], &[0.1, 0.2, 0.3, 0.4]);
        let out = conv1d(&x, &f, &Tensor::zeros(&[2])).unwrap();
        let slice = t(&[2, 2], &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(out, matmul(&x, &slice).unwrap());
    }

    #[test]
    fn rnn_step_constant_cases() {
        let x = t(&[1, 2], &[0.3, -0.7]);
        let h = t(&[1, 3], &[0.1, 0.2, 0.3]);
        let w = Tensor::zeros(&[2, 3]);
        let u = Tensor::zeros(&[3, 3]);
        let out = rnn_step(&x, &h, &w, &u, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(out.data(), &[0.0; 3]);
        let out = rnn_step(&x, &h, &w, &u, &Tensor::full(&[3], 1.0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 1f64.tanh()));
    }

    #[test]
    fn loss_examples() {
        for c in [2usize, 3, 7] {
            let logits = Tensor::full(&[4, c], 0.25);
            let loss = compute_loss(
                &logits,
                &LossTarget::SoftmaxCrossEntropy {
                    ids: vec![0, 1, 0, 1],
                    ignore: None,
                },
            )
            .unwrap();
            assert!((loss.item() - (c as f64).ln()).abs() < 1e-12);
        }
        let y = t(&[3, 1], &[1.0, -2.0, 0.5]);
        let mse = compute_loss(
            &y,
            &LossTarget::Mse {
                targets: y.data().to_vec(),
            },
        )
        .unwrap();
        assert_eq!(mse.item(), 0.0);
        let bad = compute_loss(
            &Tensor::zeros(&[1, 2]),
            &LossTarget::SoftmaxCrossEntropy {
                ids: vec![2],
                ignore: None,
            },
        );
        assert!(matches!(bad, Err(TensorError::Index { index: 2, .. })));
    }

    #[test]
    fn concat_select_stack() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 3], &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.dims(), &[2, 5]);
        assert_eq!(c.row(1), &[3.0, 4.0, 8.0, 9.0, 10.0]);
        let s = stack(&[&a, &a], 1).unwrap();
        assert_eq!(s.dims(), &[2, 2, 2]);
        assert_eq!(select(&s, 1, 1).unwrap(), a);
        assert!(concat(&[&a, &Tensor::zeros(&[3, 1])], 1).is_err());
    }

    fn filled(dims: Vec<usize>) -> impl Strategy<Value = Tensor> {
        let n: usize = dims.iter().product();
        proptest::collection::vec(-2.0f64..2.0, n).prop_map(move |d| Tensor::new(dims.clone(), d).unwrap())
    }

    fn triple() -> impl Strategy<Value = (Tensor, Tensor, Tensor)> {
        (1usize..5, 1usize..5, 1usize..5, 1usize..5)
            .prop_flat_map(|(m, k, n, p)| (filled(vec![m, k]), filled(vec![k, n]), filled(vec![n, p])))
    }

    proptest! {
        #[test]
        fn matmul_is_associative((a, b, c) in triple()) {
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            for (x, y) in left.data().iter().zip(right.data()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn sum_is_mean_times_extent(
            x in (1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(a, b, c)| filled(vec![a, b, c])),
            axis in 0usize..3,
        ) {
            let sum = reduce(ReduceKind::Sum, &x, axis).unwrap();
            let mean = reduce(ReduceKind::Mean, &x, axis).unwrap();
            let extent = x.dims()[axis] as f64;
            for (s, m) in sum.data().iter().zip(mean.data()) {
                prop_assert!((s - m * extent).abs() < 1e-9);
            }
        }
    }
}
