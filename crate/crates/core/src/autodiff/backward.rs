use super::{unpack, Node, Op, Tape, Var, AMPLITUDE_EPS};
use crate::error::{Error, Result};
use crate::tensor::{self, ComplexHalf, Scalar, Tensor};

/// Gradients of one backward sweep, indexed by [`Var`].
pub struct GradMap<T> {
    tape: u32,
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> GradMap<T> {
    /// The gradient if the variable was reached, `None` otherwise.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index()).and_then(Option::as_ref)
    }

    /// The gradient, or zeros of the variable's shape if it was not reached.
    pub fn grad(&self, v: Var) -> Tensor<T> {
        assert_eq!(v.tape, self.tape, "variable from another tape");
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.index()]))
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], nodes: &[Node<T>], i: usize, g: Tensor<T>) {
    if !nodes[i].needs_grad {
        return;
    }
    match &mut grads[i] {
        Some(acc) => acc
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(a, &b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

fn pack_halves<T: Scalar>(shape: &[usize], re: impl Iterator<Item = T>, im: impl Iterator<Item = T>) -> Tensor<T> {
    let mut full = vec![2];
    full.extend_from_slice(shape);
    let mut data: Vec<T> = re.collect();
    data.extend(im);
    Tensor::from_parts(full, data)
}

impl<T: Scalar> Tape<T> {
    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<GradMap<T>> {
        let li = self.idx(loss)?;
        let nodes = self.nodes.borrow();
        if nodes[li].value.len() != 1 {
            return Err(Error::Tape(format!(
                "backward needs a one-element loss, got shape {:?}",
                nodes[li].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[li] = Some(Tensor::from_parts(
            nodes[li].value.shape().to_vec(),
            vec![T::one()],
        ));
        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            if nodes[i].needs_grad {
                self.propagate(&nodes, &mut grads, i, &g)?;
            }
            grads[i] = Some(g);
        }
        Ok(GradMap {
            tape: self.id,
            grads,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, nodes: &[Node<T>], grads: &mut [Option<Tensor<T>>], i: usize, g: &Tensor<T>) -> Result<()> {
        let val = |j: usize| &nodes[j].value;
        let needs = |j: usize| nodes[j].needs_grad;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv { x, w, b, spec } => {
                if needs(*x) {
                    let gx = tensor::conv2d_backward_input(g, val(*w), val(*x).shape(), spec)?;
                    accumulate(grads, nodes, *x, gx);
                }
                if needs(*w) || b.is_some_and(needs) {
                    let (gw, gb) = tensor::conv2d_backward_weight(g, val(*x), val(*w).shape(), spec)?;
                    accumulate(grads, nodes, *w, gw);
                    if let Some(b) = b {
                        let gb = gb.reshape(val(*b).shape())?;
                        accumulate(grads, nodes, *b, gb);
                    }
                }
            }
            Op::Add(a, b) => {
                accumulate(grads, nodes, *a, g.clone());
                accumulate(grads, nodes, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, nodes, *a, g.clone());
                accumulate(grads, nodes, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    accumulate(grads, nodes, *a, zip_map(g, val(*b), |g, y| g * y));
                }
                if needs(*b) {
                    accumulate(grads, nodes, *b, zip_map(g, val(*a), |g, x| g * x));
                }
            }
            Op::MulChannel(x, s) => {
                if needs(*x) {
                    accumulate(grads, nodes, *x, tensor::mul_channel(g, val(*s))?);
                }
                if needs(*s) {
                    let [n, c, h, w] = g.dims4()?;
                    let gs = g
                        .data()
                        .chunks_exact(h * w)
                        .zip(val(*x).data().chunks_exact(h * w))
                        .map(|(gp, xp)| gp.iter().zip(xp).map(|(&a, &b)| a * b).sum())
                        .collect();
                    accumulate(grads, nodes, *s, Tensor::from_parts(vec![n, c, 1, 1], gs));
                }
            }
            Op::Scale(x, c) => accumulate(grads, nodes, *x, tensor::scale(g, *c)),
            Op::Abs(x) => accumulate(grads, nodes, *x, zip_map(g, val(*x), |g, v| g * sign(v))),
            Op::LayerNorm {
                x,
                gain,
                offset,
                stats,
            } => {
                let (dx, dg, db) = tensor::layer_norm_backward(g, val(*x), val(*gain), stats)?;
                accumulate(grads, nodes, *x, dx);
                accumulate(grads, nodes, *gain, dg.reshape(val(*gain).shape())?);
                accumulate(grads, nodes, *offset, db.reshape(val(*offset).shape())?);
            }
            Op::AvgPool(x) => {
                let [n, c, h, w] = val(*x).dims4()?;
                let inv = T::one() / T::from_usize(h * w);
                let mut gx = Vec::with_capacity(n * c * h * w);
                for &v in g.data() {
                    gx.extend(std::iter::repeat_n(v * inv, h * w));
                }
                accumulate(grads, nodes, *x, Tensor::from_parts(vec![n, c, h, w], gx));
            }
            Op::Narrow { x, start } => {
                let [n, c, h, w] = val(*x).dims4()?;
                let len = g.shape()[1];
                let hw = h * w;
                let mut gx = vec![T::zero(); n * c * hw];
                for b in 0..n {
                    gx[(b * c + start) * hw..(b * c + start + len) * hw]
                        .copy_from_slice(&g.data()[b * len * hw..(b + 1) * len * hw]);
                }
                accumulate(grads, nodes, *x, Tensor::from_parts(vec![n, c, h, w], gx));
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts {
                    let pc = val(p).shape()[1];
                    if needs(p) {
                        accumulate(grads, nodes, p, tensor::narrow_channels(g, start, pc)?);
                    }
                    start += pc;
                }
            }
            Op::Shuffle(x, r) => accumulate(grads, nodes, *x, tensor::pixel_unshuffle(g, *r)?),
            Op::Unshuffle(x, r) => accumulate(grads, nodes, *x, tensor::pixel_shuffle(g, *r)?),
            Op::Resize(x) => {
                let gx = tensor::bilinear_resize_backward(g, val(*x).shape())?;
                accumulate(grads, nodes, *x, gx);
            }
            Op::Rfft2 { x, width } => {
                let gx = tensor::rfft2_adjoint(&unpack(g, *width))?;
                accumulate(grads, nodes, *x, gx);
            }
            Op::Irfft2(s) => {
                let ComplexHalf { re, im, .. } = tensor::irfft2_adjoint(g)?;
                let shape = re.shape().to_vec();
                let gs = pack_halves(&shape, re.into_data().into_iter(), im.into_data().into_iter());
                accumulate(grads, nodes, *s, gs);
            }
            Op::Amplitude(s) => {
                let sv = val(*s);
                let half = sv.len() / 2;
                let (re, im) = sv.data().split_at(half);
                let amp = &nodes[i].value;
                let gre = g.data().iter().zip(re).zip(amp.data()).map(|((&g, &r), &a)| g * r / a);
                let gim = g.data().iter().zip(im).zip(amp.data()).map(|((&g, &m), &a)| g * m / a);
                accumulate(grads, nodes, *s, pack_halves(amp.shape(), gre, gim));
            }
            Op::Phase(s) => {
                let sv = val(*s);
                let half = sv.len() / 2;
                let (re, im) = sv.data().split_at(half);
                let eps = T::from_f64(AMPLITUDE_EPS);
                let r2: Vec<T> = re.iter().zip(im).map(|(&r, &m)| r * r + m * m + eps).collect();
                let gre = g.data().iter().zip(im).zip(&r2).map(|((&g, &m), &d)| -g * m / d);
                let gim = g.data().iter().zip(re).zip(&r2).map(|((&g, &r), &d)| g * r / d);
                accumulate(grads, nodes, *s, pack_halves(g.shape(), gre, gim));
            }
            Op::Recombine { amp, phase } => {
                let (a, p) = (val(*amp), val(*phase));
                let half = g.len() / 2;
                let (gre, gim) = g.data().split_at(half);
                if needs(*amp) {
                    let ga = gre
                        .iter()
                        .zip(gim)
                        .zip(p.data())
                        .map(|((&gr, &gi), &p)| gr * p.cos() + gi * p.sin())
                        .collect();
                    accumulate(grads, nodes, *amp, Tensor::from_parts(a.shape().to_vec(), ga));
                }
                if needs(*phase) {
                    let gp = gre
                        .iter()
                        .zip(gim)
                        .zip(a.data().iter().zip(p.data()))
                        .map(|((&gr, &gi), (&a, &p))| a * (gi * p.cos() - gr * p.sin()))
                        .collect();
                    accumulate(grads, nodes, *phase, Tensor::from_parts(p.shape().to_vec(), gp));
                }
            }
            Op::MeanAbs(x) => {
                let k = g.item() / T::from_usize(val(*x).len());
                accumulate(grads, nodes, *x, val(*x).map(|v| k * sign(v)));
            }
            Op::MeanSq(x) => {
                let k = g.item() * T::from_f64(2.0) / T::from_usize(val(*x).len());
                accumulate(grads, nodes, *x, val(*x).map(|v| k * v));
            }
            Op::Mean(x) => {
                let k = g.item() / T::from_usize(val(*x).len());
                accumulate(grads, nodes, *x, Tensor::full(val(*x).shape(), k));
            }
            Op::DiffX(x) => accumulate(grads, nodes, *x, tensor::diff_x_adjoint(g)?),
            Op::DiffY(x) => accumulate(grads, nodes, *x, tensor::diff_y_adjoint(g)?),
        }
        Ok(())
    }
}
