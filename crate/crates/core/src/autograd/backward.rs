use super::{Node, Op, Tape, Var, PROB_FLOOR};
use crate::error::{Error, Result};
use crate::tensor::{self, gelu_grad_scalar, inverse_permutation, Element, Tensor};

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate<T: Element>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

fn transpose_last2<T: Element>(t: &Tensor<T>) -> Tensor<T> {
    let r = t.rank();
    let mut perm: Vec<usize> = (0..r).collect();
    perm.swap(r - 2, r - 1);
    tensor::permute(t, &perm).expect("valid permutation")
}

fn flatten2<T: Element>(t: &Tensor<T>) -> Tensor<T> {
    let k = t.last_dim();
    t.reshape([t.len() / k, k]).expect("same length")
}

impl<T: Element> Tape<T> {
    /// Reverse pass from a scalar `loss`. Contributions from fan-out are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape().to_vec(), T::ONE));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (input, ig) in self.input_grads(node, &g)? {
                if self.nodes[input.0].requires_grad {
                    accumulate(&mut grads[input.0], ig);
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn input_grads(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let val = |v: Var| self.value(v);
        let mut out = Vec::with_capacity(3);
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    out.push((*a, tensor::mul(g, val(*b))?));
                }
                if self.wants(*b) {
                    out.push((*b, tensor::mul(g, val(*a))?));
                }
            }
            Op::AddBias(x, b) => {
                out.push((*x, g.clone()));
                if self.wants(*b) {
                    out.push((*b, sum_to_last_axis(g)));
                }
            }
            Op::MulBias(x, gain) => {
                if self.wants(*x) {
                    out.push((*x, tensor::mul_bias(g, val(*gain))?));
                }
                if self.wants(*gain) {
                    out.push((*gain, sum_to_last_axis(&tensor::mul(g, val(*x))?)));
                }
            }
            Op::Scale(x, c) => out.push((*x, tensor::scale(g, *c))),
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if self.wants(*a) {
                    out.push((*a, tensor::matmul(g, &transpose_last2(bv))?));
                }
                if self.wants(*b) {
                    let a2 = flatten2(av);
                    let g2 = flatten2(g);
                    out.push((*b, tensor::matmul(&transpose_last2(&a2), &g2)?));
                }
            }
            Op::Bmm(a, b) => {
                if self.wants(*a) {
                    out.push((*a, tensor::bmm(g, &transpose_last2(val(*b)))?));
                }
                if self.wants(*b) {
                    out.push((*b, tensor::bmm(&transpose_last2(val(*a)), g)?));
                }
            }
            Op::Conv2d(x, k, b) => {
                let (dx, dk, db) = tensor::conv2d_backward(val(*x), val(*k), g)?;
                out.push((*x, dx));
                out.push((*k, dk));
                out.push((*b, db));
            }
            Op::MaxPool(x, arg) => {
                let mut dx = Tensor::zeros(val(*x).shape().to_vec());
                for (&i, &gv) in arg.iter().zip(g.data()) {
                    dx.data_mut()[i] += gv;
                }
                out.push((*x, dx));
            }
            Op::GlobalAvg(x) => {
                let s = val(*x).shape();
                let (n, hw, c) = (s[0], s[1] * s[2], s[3]);
                let denom = T::of(hw as f64);
                let dx = Tensor::from_fn(s.to_vec(), |i| {
                    let b = i / (hw * c);
                    g.data()[b * c + i % c] / denom
                });
                debug_assert_eq!(dx.len(), n * hw * c);
                out.push((*x, dx));
            }
            Op::Relu(x) => {
                let dx = val(*x).zip_map(g, "relu", |v, gv| if v > T::ZERO { gv } else { T::ZERO })?;
                out.push((*x, dx));
            }
            Op::Gelu(x) => {
                let dx = val(*x).zip_map(g, "gelu", |v, gv| gelu_grad_scalar(v) * gv)?;
                out.push((*x, dx));
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let n = y.last_dim();
                let mut dx = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(n).zip(g.data().chunks(n)) {
                    let mut dot = T::ZERO;
                    for (&yv, &gv) in yr.iter().zip(gr) {
                        dot += yv * gv;
                    }
                    dx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
                }
                out.push((*x, Tensor::new(y.shape().to_vec(), dx)?));
            }
            Op::Normalize { x, group, inv_std } => {
                // dx = r * (g - mean(g) - y * mean(g * y)) per group
                let y = &node.value;
                let count = T::of(*group as f64);
                let mut dx = Vec::with_capacity(y.len());
                for ((yr, gr), &r) in y.data().chunks(*group).zip(g.data().chunks(*group)).zip(inv_std) {
                    let mut gm = T::ZERO;
                    let mut gym = T::ZERO;
                    for (&yv, &gv) in yr.iter().zip(gr) {
                        gm += gv;
                        gym += gv * yv;
                    }
                    gm /= count;
                    gym /= count;
                    dx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| r * (gv - gm - yv * gym)));
                }
                out.push((*x, Tensor::new(y.shape().to_vec(), dx)?));
            }
            Op::Reshape(x) => out.push((*x, g.reshape(val(*x).shape().to_vec())?)),
            Op::Permute(x, perm) => out.push((*x, tensor::permute(g, &inverse_permutation(perm))?)),
            Op::MaskFill(x, mask) => {
                let m = mask.len();
                let dx = Tensor::from_fn(g.shape().to_vec(), |i| {
                    if mask.data()[i % m] == T::ZERO {
                        T::ZERO
                    } else {
                        g.data()[i]
                    }
                });
                out.push((*x, dx));
            }
            Op::Dropout(x, mask) => out.push((*x, tensor::mul(g, mask)?)),
            Op::Ste(x) => out.push((*x, g.clone())),
            Op::Gather(table, ids) => {
                let t = val(*table);
                let d = t.shape()[1];
                let mut dt = Tensor::zeros(t.shape().to_vec());
                for (row, &id) in ids.iter().enumerate() {
                    let src = &g.data()[row * d..(row + 1) * d];
                    for (a, &b) in dt.data_mut()[id * d..(id + 1) * d].iter_mut().zip(src) {
                        *a += b;
                    }
                }
                out.push((*table, dt));
            }
            Op::Sum(x) => out.push((*x, Tensor::full(val(*x).shape().to_vec(), g.data()[0]))),
            Op::Mean(x) => {
                let v = val(*x);
                out.push((*x, Tensor::full(v.shape().to_vec(), g.data()[0] / T::of(v.len() as f64))));
            }
            Op::CrossEntropy(p, labels) => {
                let pv = val(*p);
                let k = pv.last_dim();
                let rows = T::of(labels.len() as f64);
                let floor = T::of(PROB_FLOOR);
                let mut dp = Tensor::zeros(pv.shape().to_vec());
                for (row, &label) in labels.iter().enumerate() {
                    let i = row * k + label;
                    let pi = pv.data()[i];
                    if pi >= floor {
                        dp.data_mut()[i] = -g.data()[0] / (rows * pi);
                    }
                }
                out.push((*p, dp));
            }
        }
        Ok(out)
    }
}

fn sum_to_last_axis<T: Element>(g: &Tensor<T>) -> Tensor<T> {
    let n = g.last_dim();
    let mut acc = vec![T::ZERO; n];
    for row in g.data().chunks(n) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    Tensor::new([n], acc).expect("non-empty")
}
