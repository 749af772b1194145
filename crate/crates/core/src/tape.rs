//! Tape-based reverse-mode differentiation over the layer primitives.
//!
//! Every differentiable call appends one record holding its output value and
//! the handles of its inputs. [`Tape::backward`] walks the records in exact
//! reverse order and returns a [`Gradients`] map; parameters are read by
//! copy from a [`ParamStore`], so the caller decides where gradients land
//! via [`ParamStore::accumulate`].
//!
//! ```
//! use qmix_core::param::ParamStore;
//! use qmix_core::tape::Tape;
//! use qmix_core::tensor::Tensor;
//!
//! let mut store = ParamStore::new();
//! let w = store.add("w", Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
//!
//! let mut tape = Tape::new();
//! let x = tape.input(Tensor::new(&[1, 2], vec![3.0, 4.0]).unwrap());
//! let wv = tape.param(&store, w);
//! let y = tape.linear(x, wv, None).unwrap();
//! let loss = tape.weighted_sum(y, vec![1.0, 1.0]).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.input(x).unwrap(), &[1.0, 1.0]);
//! assert_eq!(grads.param(w).unwrap(), &[3.0, 4.0, 3.0, 4.0]);
//! ```

use crate::error::{check_dim, invalid, Error, Result};
use crate::ops::conv::{self, Conv2dConfig, ConvGeom};
use crate::ops::linear as lin;
use crate::ops::pointwise::{self as pw, BnSaved};
use crate::ops::pool::{self, MaxPoolConfig};
use crate::param::{Gradients, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Constant,
    Param(ParamId),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: BnSaved,
    },
    Silu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Mul(Var, Var),
    MulChannels {
        x: Var,
        s: Var,
    },
    Concat(Vec<Var>),
    SliceChannels {
        x: Var,
        start: usize,
    },
    Upsample(Var),
    MaxPool {
        x: Var,
        arg: Vec<usize>,
    },
    Gap(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: (usize, usize, usize),
    },
    SinAffine {
        z: Var,
        w: Var,
        theta: Option<Var>,
        alpha: Option<Var>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<Scalar>,
    },
    WeightedSum {
        x: Var,
        weights: Vec<Scalar>,
    },
    MeanSquare(Var),
    Sum(Vec<Var>),
}

#[derive(Debug)]
struct Record {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    records: Vec<Record>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.records[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.records.push(Record { value, op, needs_grad });
        Var(self.records.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.records[v.0].needs_grad)
    }

    /// Leaf whose gradient is reported by [`Gradients::input`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id), true)
    }

    /// Reads entries `[0, len)` of a rank-1 parameter block.
    pub fn param_prefix(&mut self, store: &ParamStore, id: ParamId, len: usize) -> Result<Var> {
        let block = store.get(id);
        if block.value.rank() != 1 || len > block.numel() {
            return Err(Error::MixerCapacity {
                latent: len,
                capacity: block.numel(),
            });
        }
        let value = Tensor::new(&[len], block.value.data()[..len].to_vec())?;
        Ok(self.push(value, Op::Param(id), true))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, cfg: Conv2dConfig) -> Result<Var> {
        let geom = ConvGeom::new(self.value(x).shape(), self.value(w).shape(), cfg)?;
        if let Some(b) = b {
            check_dim("conv2d", "bias length", geom.cout, self.value(b).numel())?;
        }
        let out = conv::forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let needs = self.needs(&[x, w]) || b.is_some_and(|b| self.needs(&[b]));
        let value = Tensor::new(&geom.out_shape(), out)?;
        Ok(self.push(value, Op::Conv { x, w, b, geom }, needs))
    }

    /// Batch normalization over `(B, H, W)` per channel. With `running` set,
    /// the given `(mean, var)` buffers are used instead of batch statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[Scalar], &[Scalar])>,
    ) -> Result<Var> {
        let (_, c, _, _) = self.value(x).dims4("batch_norm")?;
        check_dim("batch_norm", "gamma length", c, self.value(gamma).numel())?;
        check_dim("batch_norm", "beta length", c, self.value(beta).numel())?;
        if let Some((m, v)) = running {
            check_dim("batch_norm", "running mean length", c, m.len())?;
            check_dim("batch_norm", "running var length", c, v.len())?;
        }
        let xv = self.value(x);
        let (y, saved) = pw::batchnorm_forward(
            xv.data(),
            xv.shape(),
            self.value(gamma).data(),
            self.value(beta).data(),
            running,
        );
        let value = Tensor::new(xv.shape(), y)?;
        let needs = self.needs(&[x, gamma, beta]);
        Ok(self.push(value, Op::BatchNorm { x, gamma, beta, saved }, needs))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = pw::silu(self.value(x));
        let needs = self.needs(&[x]);
        self.push(value, Op::Silu(x), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = pw::sigmoid(self.value(x));
        let needs = self.needs(&[x]);
        self.push(value, Op::Sigmoid(x), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = pw::add(self.value(a), self.value(b))?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = pw::mul(self.value(a), self.value(b))?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), needs))
    }

    /// `x[B, C, H, W] ⊙ s[B, C]`.
    pub fn mul_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let value = pw::mul_channels(self.value(x), self.value(s))?;
        let needs = self.needs(&[x, s]);
        Ok(self.push(value, Op::MulChannels { x, s }, needs))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let ts: Vec<&Tensor> = xs.iter().map(|v| self.value(*v)).collect();
        let value = pw::concat_channels(&ts)?;
        let needs = self.needs(xs);
        Ok(self.push(value, Op::Concat(xs.to_vec()), needs))
    }

    /// Channels `[start, start + len)` of a rank-4 value.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4("slice_channels")?;
        if start + len > c || len == 0 {
            return Err(invalid(
                "slice_channels",
                format!("range {start}..{} outside {c} channels", start + len),
            ));
        }
        let src = self.value(x).data();
        let hw = h * w;
        let mut out = Vec::with_capacity(b * len * hw);
        for bi in 0..b {
            out.extend_from_slice(&src[(bi * c + start) * hw..(bi * c + start + len) * hw]);
        }
        let needs = self.needs(&[x]);
        Ok(self.push(
            Tensor::new(&[b, len, h, w], out)?,
            Op::SliceChannels { x, start },
            needs,
        ))
    }

    pub fn upsample_nearest_2x(&mut self, x: Var) -> Result<Var> {
        let value = pool::upsample_nearest_2x(self.value(x))?;
        let needs = self.needs(&[x]);
        Ok(self.push(value, Op::Upsample(x), needs))
    }

    pub fn maxpool(&mut self, x: Var, cfg: MaxPoolConfig) -> Result<Var> {
        let (value, arg) = pool::maxpool_forward(self.value(x), cfg)?;
        let needs = self.needs(&[x]);
        Ok(self.push(value, Op::MaxPool { x, arg }, needs))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let value = pool::global_avg_pool(self.value(x))?;
        let needs = self.needs(&[x]);
        Ok(self.push(value, Op::Gap(x), needs))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let dims = lin::linear_dims(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let (bn, n, m) = dims;
        let out = lin::forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            bn,
            n,
            m,
        );
        let needs = self.needs(&[x, w]) || b.is_some_and(|b| self.needs(&[b]));
        Ok(self.push(Tensor::new(&[bn, m], out)?, Op::Linear { x, w, b, dims }, needs))
    }

    /// `sin(alpha · (z ⊙ w) + theta)`; `alpha` must hold a single value.
    pub fn sin_affine(&mut self, z: Var, w: Var, theta: Option<Var>, alpha: Option<Var>) -> Result<Var> {
        let (_, r) = self.value(z).dims2("sin_affine")?;
        check_dim("sin_affine", "w length", r, self.value(w).numel())?;
        if let Some(t) = theta {
            check_dim("sin_affine", "theta length", r, self.value(t).numel())?;
        }
        if let Some(a) = alpha {
            check_dim("sin_affine", "alpha length", 1, self.value(a).numel())?;
        }
        let out = pw::sin_affine_forward(
            self.value(z).data(),
            self.value(w).data(),
            theta.map(|t| self.value(t).data()),
            alpha.map(|a| self.value(a).data()[0]),
        );
        let mut deps = vec![z, w];
        deps.extend(theta);
        deps.extend(alpha);
        let needs = self.needs(&deps);
        let value = Tensor::new(self.value(z).shape(), out)?;
        Ok(self.push(value, Op::SinAffine { z, w, theta, alpha }, needs))
    }

    /// Mean softmax cross-entropy of `logits[B, K]` against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, k) = self.value(logits).dims2("cross_entropy")?;
        check_dim("cross_entropy", "label count", b, labels.len())?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(invalid(
                "cross_entropy",
                format!("label {bad} out of range for {k} classes"),
            ));
        }
        let (loss, probs) = pw::cross_entropy_forward(self.value(logits).data(), k, labels);
        let needs = self.needs(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// `Σ xᵢ·weightsᵢ` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<Scalar>) -> Result<Var> {
        check_dim("weighted_sum", "weight count", self.value(x).numel(), weights.len())?;
        let s = self.value(x).data().iter().zip(&weights).map(|(a, b)| a * b).sum();
        let needs = self.needs(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, weights }, needs))
    }

    /// `Σ xᵢ² / n`.
    pub fn mean_square(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().map(|a| a * a).sum::<Scalar>() / v.numel() as Scalar;
        let needs = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::MeanSquare(x), needs)
    }

    /// Sum of scalar values.
    pub fn sum(&mut self, xs: &[Var]) -> Result<Var> {
        let mut s = 0.0;
        for &x in xs {
            check_dim("sum", "operand size", 1, self.value(x).numel())?;
            s += self.value(x).data()[0];
        }
        let needs = self.needs(xs);
        Ok(self.push(Tensor::scalar(s), Op::Sum(xs.to_vec()), needs))
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.backward_with(loss, 1.0)
    }

    /// Propagates `seed · ∂loss/∂(·)` to every parameter and input leaf.
    pub fn backward_with(&self, loss: Var, seed: Scalar) -> Result<Gradients> {
        if self.records.is_empty() {
            return Err(Error::Tape("backward on an empty tape".into()));
        }
        if loss.0 >= self.records.len() {
            return Err(Error::Tape(format!("loss handle {} not on this tape", loss.0)));
        }
        if self.records[loss.0].value.numel() != 1 {
            return Err(Error::Tape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.records[loss.0].value.shape()
            )));
        }
        if !seed.is_finite() || !self.records[loss.0].value.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Vec<Scalar>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![seed]);
        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let rec = &self.records[i];
            if !rec.needs_grad {
                continue;
            }
            self.propagate(rec, i, g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn wants(&self, v: Var) -> bool {
        self.records[v.0].needs_grad
    }

    fn propagate(
        &self,
        rec: &Record,
        index: usize,
        g: Vec<Scalar>,
        grads: &mut [Option<Vec<Scalar>>],
        out: &mut Gradients,
    ) {
        let mut acc = |v: Var, d: Vec<Scalar>| match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(&d).for_each(|(e, x)| *e += x),
            slot @ None => *slot = Some(d),
        };
        match &rec.op {
            Op::Input => {
                out.inputs.insert(index, g);
            }
            Op::Constant => {}
            Op::Param(id) => out.add_param(*id, &g),
            Op::Conv { x, w, b, geom } => {
                let need_dx = self.wants(*x);
                let need_db = b.is_some_and(|b| self.wants(b));
                let cg = conv::backward(geom, self.value(*x).data(), self.value(*w).data(), &g, need_dx, need_db);
                if let Some(dx) = cg.dx {
                    acc(*x, dx);
                }
                if self.wants(*w) {
                    acc(*w, cg.dw);
                }
                if let (Some(b), Some(db)) = (b, cg.db) {
                    acc(*b, db);
                }
            }
            Op::BatchNorm { x, gamma, beta, saved } => {
                let (dx, dg, db) = pw::batchnorm_backward(saved, self.value(*x).shape(), self.value(*gamma).data(), &g);
                if self.wants(*x) {
                    acc(*x, dx);
                }
                if self.wants(*gamma) {
                    acc(*gamma, dg);
                }
                if self.wants(*beta) {
                    acc(*beta, db);
                }
            }
            Op::Silu(x) => {
                let d = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(&g)
                    .map(|(&v, &gv)| gv * pw::silu_grad(v))
                    .collect();
                acc(*x, d);
            }
            Op::Sigmoid(x) => {
                let d = rec
                    .value
                    .data()
                    .iter()
                    .zip(&g)
                    .map(|(&s, &gv)| gv * s * (1.0 - s))
                    .collect();
                acc(*x, d);
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.clone());
                }
                if self.wants(*b) {
                    acc(*b, g);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    acc(*a, g.iter().zip(bv).map(|(x, y)| x * y).collect());
                }
                if self.wants(*b) {
                    acc(*b, g.iter().zip(av).map(|(x, y)| x * y).collect());
                }
            }
            Op::MulChannels { x, s } => {
                let xv = self.value(*x);
                let hw = xv.shape()[2] * xv.shape()[3];
                let sv = self.value(*s).data();
                if self.wants(*x) {
                    let mut dx = g.clone();
                    for (plane, &sc) in dx.chunks_exact_mut(hw).zip(sv) {
                        plane.iter_mut().for_each(|v| *v *= sc);
                    }
                    acc(*x, dx);
                }
                if self.wants(*s) {
                    let ds = g
                        .chunks_exact(hw)
                        .zip(xv.data().chunks_exact(hw))
                        .map(|(gp, xp)| gp.iter().zip(xp).map(|(a, b)| a * b).sum())
                        .collect();
                    acc(*s, ds);
                }
            }
            Op::Concat(xs) => {
                let b = rec.value.shape()[0];
                let per_out = rec.value.numel() / b;
                let mut offset = 0;
                for x in xs {
                    let per = self.value(*x).numel() / b;
                    if self.wants(*x) {
                        let mut d = Vec::with_capacity(per * b);
                        for bi in 0..b {
                            d.extend_from_slice(&g[bi * per_out + offset..bi * per_out + offset + per]);
                        }
                        acc(*x, d);
                    }
                    offset += per;
                }
            }
            Op::SliceChannels { x, start } => {
                let xs = self.value(*x).shape();
                let (b, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
                let len = rec.value.shape()[1];
                let mut d = vec![0.0; b * c * hw];
                for bi in 0..b {
                    d[(bi * c + start) * hw..(bi * c + start + len) * hw]
                        .copy_from_slice(&g[bi * len * hw..(bi + 1) * len * hw]);
                }
                acc(*x, d);
            }
            Op::Upsample(x) => acc(*x, pool::upsample_backward(self.value(*x).shape(), &g)),
            Op::MaxPool { x, arg } => {
                let mut d = vec![0.0; self.value(*x).numel()];
                for (&i, &gv) in arg.iter().zip(&g) {
                    d[i] += gv;
                }
                acc(*x, d);
            }
            Op::Gap(x) => acc(*x, pool::gap_backward(self.value(*x).shape(), &g)),
            Op::Linear { x, w, b, dims } => {
                let (bn, n, m) = *dims;
                let (dx, dw, db) = lin::backward(self.value(*x).data(), self.value(*w).data(), &g, bn, n, m);
                if self.wants(*x) {
                    acc(*x, dx);
                }
                if self.wants(*w) {
                    acc(*w, dw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        acc(*b, db);
                    }
                }
            }
            Op::SinAffine { z, w, theta, alpha } => {
                let zv = self.value(*z).data();
                let wv = self.value(*w).data();
                let r = wv.len();
                let tv = theta.map(|t| self.value(t).data());
                let av = alpha.map(|a| self.value(a).data()[0]);
                let mut dz = vec![0.0; zv.len()];
                let mut dw = vec![0.0; r];
                let mut dt = vec![0.0; r];
                let mut da = 0.0;
                for (k, (&zk, &gk)) in zv.iter().zip(&g).enumerate() {
                    let i = k % r;
                    let zw = zk * wv[i];
                    let mut arg = zw;
                    if let Some(a) = av {
                        arg *= a;
                    }
                    if let Some(t) = tv {
                        arg += t[i];
                    }
                    let c = gk * arg.cos();
                    let ca = c * av.unwrap_or(1.0);
                    dz[k] = ca * wv[i];
                    dw[i] += ca * zk;
                    dt[i] += c;
                    da += c * zw;
                }
                if self.wants(*z) {
                    acc(*z, dz);
                }
                if self.wants(*w) {
                    acc(*w, dw);
                }
                if let Some(t) = theta {
                    if self.wants(*t) {
                        acc(*t, dt);
                    }
                }
                if let Some(a) = alpha {
                    if self.wants(*a) {
                        acc(*a, vec![da]);
                    }
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = probs.len() / labels.len();
                let scale = g[0] / labels.len() as Scalar;
                let mut d: Vec<Scalar> = probs.iter().map(|p| p * scale).collect();
                for (bi, &l) in labels.iter().enumerate() {
                    d[bi * k + l] -= scale;
                }
                acc(*logits, d);
            }
            Op::WeightedSum { x, weights } => acc(*x, weights.iter().map(|w| w * g[0]).collect()),
            Op::MeanSquare(x) => {
                let v = self.value(*x);
                let k = 2.0 * g[0] / v.numel() as Scalar;
                acc(*x, v.data().iter().map(|a| a * k).collect());
            }
            Op::Sum(xs) => {
                for x in xs {
                    if self.wants(*x) {
                        acc(*x, vec![g[0]]);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_tape_rejects_backward() {
        let tape = Tape::new();
        assert!(matches!(tape.backward(Var(0)), Err(Error::Tape(_))));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[1, 3]));
        assert!(matches!(tape.backward(x), Err(Error::Tape(_))));
    }

    #[test]
    fn sum_of_identity_linear_has_unit_input_gradient() {
        let mut store = ParamStore::new();
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let w = store.add("w", eye);
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(&[2, 3], vec![1.0, -2.0, 0.5, 4.0, 0.0, 7.0]).unwrap());
        let wv = tape.param(&store, w);
        let y = tape.linear(x, wv, None).unwrap();
        let loss = tape.weighted_sum(y, vec![1.0; 6]).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.input(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn parameter_used_twice_sums_both_adjoints() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::new(&[2, 2], vec![0.3, -0.7, 1.1, 0.2]).unwrap());
        let xa = Tensor::new(&[1, 2], vec![1.5, -0.5]).unwrap();
        let xb = Tensor::new(&[1, 2], vec![0.25, 2.0]).unwrap();

        let single = |x: &Tensor| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let wv = tape.param(&store, w);
            let y = tape.linear(xv, wv, None).unwrap();
            let s = tape.sigmoid(y);
            let loss = tape.weighted_sum(s, vec![1.0, -2.0]).unwrap();
            tape.backward(loss).unwrap().param(w).unwrap().to_vec()
        };
        let ga = single(&xa);
        let gb = single(&xb);

        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let mut parts = Vec::new();
        for x in [&xa, &xb] {
            let xv = tape.constant(x.clone());
            let y = tape.linear(xv, wv, None).unwrap();
            let s = tape.sigmoid(y);
            parts.push(tape.weighted_sum(s, vec![1.0, -2.0]).unwrap());
        }
        let loss = tape.sum(&parts).unwrap();
        let both = tape.backward(loss).unwrap();
        for ((g, a), b) in both.param(w).unwrap().iter().zip(&ga).zip(&gb) {
            assert!((g - (a + b)).abs() < 1e-15);
        }
    }

    #[test]
    fn prefix_read_only_touches_prefix() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::full(&[8], 2.0));
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::full(&[1, 3], 1.0));
        let wv = tape.param_prefix(&store, w, 3).unwrap();
        let h = tape.sin_affine(z, wv, None, None).unwrap();
        let loss = tape.weighted_sum(h, vec![1.0; 3]).unwrap();
        let grads = tape.backward(loss).unwrap();
        store.accumulate(&grads);
        let g = &store.get(w).grad;
        assert!(g[..3].iter().all(|&v| v != 0.0));
        assert!(g[3..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prefix_beyond_capacity_is_an_error() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::zeros(&[4]));
        let mut tape = Tape::new();
        assert!(matches!(
            tape.param_prefix(&store, w, 5),
            Err(Error::MixerCapacity { latent: 5, capacity: 4 })
        ));
    }
}
