//! Reverse-mode differentiation over the tensor kernels.
//!
//! A [`Tape`] records every operation eagerly: the forward value is computed
//! and stored at record time together with whatever the backward rule needs.
//! [`Tape::backward`] then walks the nodes once in reverse order. Node inputs
//! always precede the node, so the recording order is a topological order.

mod backward;
pub mod gradcheck;

use std::cell::{Ref, RefCell};
use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{self, ComplexHalf, ConvSpec, LayerNormStats, Scalar, Tensor};

pub use backward::GradMap;

/// Smoothing added under the square root of the FFT modulus so its
/// derivative stays bounded at zero amplitude.
pub const AMPLITUDE_EPS: f64 = 1e-12;

static NEXT_TAPE: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Conv {
        x: usize,
        w: usize,
        b: Option<usize>,
        spec: ConvSpec,
    },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulChannel(usize, usize),
    Scale(usize, T),
    Abs(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        offset: usize,
        stats: LayerNormStats<T>,
    },
    AvgPool(usize),
    Narrow {
        x: usize,
        start: usize,
    },
    Concat(Vec<usize>),
    Shuffle(usize, usize),
    Unshuffle(usize, usize),
    Resize(usize),
    Rfft2 {
        x: usize,
        width: usize,
    },
    Irfft2(usize),
    Amplitude(usize),
    Phase(usize),
    Recombine {
        amp: usize,
        phase: usize,
    },
    MeanAbs(usize),
    MeanSq(usize),
    Mean(usize),
    DiffX(usize),
    DiffY(usize),
}

impl<T> Op<T> {
    pub(crate) fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Conv { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MulChannel(a, b) => vec![*a, *b],
            Op::LayerNorm { x, gain, offset, .. } => vec![*x, *gain, *offset],
            Op::Recombine { amp, phase } => vec![*amp, *phase],
            Op::Concat(v) => v.clone(),
            Op::Scale(x, _)
            | Op::Abs(x)
            | Op::AvgPool(x)
            | Op::Narrow { x, .. }
            | Op::Shuffle(x, _)
            | Op::Unshuffle(x, _)
            | Op::Resize(x)
            | Op::Rfft2 { x, .. }
            | Op::Irfft2(x)
            | Op::Amplitude(x)
            | Op::Phase(x)
            | Op::MeanAbs(x)
            | Op::MeanSq(x)
            | Op::Mean(x)
            | Op::DiffX(x)
            | Op::DiffY(x) => vec![*x],
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    /// Whether any differentiable leaf reaches this node.
    pub(crate) needs_grad: bool,
}

/// Append-only record of a computation.
///
/// Single-writer: recording needs `&self` but the tape is not `Sync`.
pub struct Tape<T: Scalar> {
    id: u32,
    nodes: RefCell<Vec<Node<T>>>,
    bound: RefCell<Vec<(usize, Var)>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Spectra live on the tape as one tensor `[2, n, c, h, w/2+1]`, real part
/// first.
fn pack<T: Scalar>(s: ComplexHalf<T>) -> Tensor<T> {
    let mut shape = vec![2];
    shape.extend_from_slice(s.re.shape());
    let mut data = s.re.into_data();
    data.extend(s.im.into_data());
    Tensor::from_parts(shape, data)
}

pub(crate) fn unpack<T: Scalar>(t: &Tensor<T>, width: usize) -> ComplexHalf<T> {
    let shape = t.shape()[1..].to_vec();
    let half = t.len() / 2;
    ComplexHalf {
        re: Tensor::from_parts(shape.clone(), t.data()[..half].to_vec()),
        im: Tensor::from_parts(shape, t.data()[half..].to_vec()),
        width,
    }
}

fn spectrum_planes<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<()> {
    if t.rank() != 5 || t.shape()[0] != 2 {
        return Err(shape_err(
            op,
            format!("expected a packed spectrum [2, n, c, h, wh], got {:?}", t.shape()),
        ));
    }
    Ok(())
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            bound: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id {
            return Err(Error::Tape(format!(
                "variable from tape {} used on tape {}",
                v.tape, self.id
            )));
        }
        Ok(v.index as usize)
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, leaf_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len() as u32;
        let needs_grad = leaf_grad || op.inputs().iter().any(|&i| nodes[i].needs_grad);
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            index,
        }
    }

    /// Compute a value from recorded inputs, then record it.
    fn record(
        &self,
        f: impl FnOnce(&[Node<T>]) -> Result<(Tensor<T>, Op<T>)>,
    ) -> Result<Var> {
        let (value, op) = {
            let nodes = self.nodes.borrow();
            f(&nodes)?
        };
        Ok(self.push(value, op, false))
    }

    pub fn value(&self, v: Var) -> Result<Ref<'_, Tensor<T>>> {
        let i = self.idx(v)?;
        Ok(Ref::map(self.nodes.borrow(), |n| &n[i].value))
    }

    /// A leaf holding `value`; gradients flow into it but nowhere further.
    pub fn leaf(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation; its gradient is always zero.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf bound to an external key (a parameter slot). Binding the same
    /// key twice returns the same variable.
    pub fn bind(&self, key: usize, value: &Tensor<T>) -> Var {
        if let Some(&(_, v)) = self.bound.borrow().iter().find(|(k, _)| *k == key) {
            return v;
        }
        let v = self.leaf(value.clone());
        self.bound.borrow_mut().push((key, v));
        v
    }

    /// Route `key` to an existing variable, so later [`Tape::bind`] calls
    /// for it return `var`. Used to differentiate with respect to values
    /// supplied from outside a parameter store.
    pub fn bind_var(&self, key: usize, var: Var) -> Result<()> {
        self.idx(var)?;
        let mut bound = self.bound.borrow_mut();
        if bound.iter().any(|(k, _)| *k == key) {
            return Err(Error::Tape(format!("key {key} is already bound")));
        }
        bound.push((key, var));
        Ok(())
    }

    /// Every `(key, var)` bound so far, in binding order.
    pub fn bindings(&self) -> Vec<(usize, Var)> {
        self.bound.borrow().clone()
    }

    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let (xi, wi) = (self.idx(x)?, self.idx(w)?);
        let bi = b.map(|b| self.idx(b)).transpose()?;
        self.record(|n| {
            let out = tensor::conv2d(&n[xi].value, &n[wi].value, bi.map(|b| &n[b].value), &spec)?;
            Ok((out, Op::Conv { x: xi, w: wi, b: bi, spec }))
        })
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        self.record(|n| Ok((tensor::add(&n[ai].value, &n[bi].value)?, Op::Add(ai, bi))))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        self.record(|n| Ok((tensor::sub(&n[ai].value, &n[bi].value)?, Op::Sub(ai, bi))))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        self.record(|n| Ok((tensor::mul(&n[ai].value, &n[bi].value)?, Op::Mul(ai, bi))))
    }

    /// `x ⊙ s` with `s: [n, c, 1, 1]` broadcast over space.
    pub fn mul_channel(&self, x: Var, s: Var) -> Result<Var> {
        let (xi, si) = (self.idx(x)?, self.idx(s)?);
        self.record(|n| {
            Ok((
                tensor::mul_channel(&n[xi].value, &n[si].value)?,
                Op::MulChannel(xi, si),
            ))
        })
    }

    pub fn scale(&self, x: Var, c: f64) -> Result<Var> {
        let xi = self.idx(x)?;
        let c = T::from_f64(c);
        self.record(|n| Ok((tensor::scale(&n[xi].value, c), Op::Scale(xi, c))))
    }

    /// Elementwise `|x|`; the derivative at 0 is taken as 0.
    pub fn abs(&self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        self.record(|n| Ok((n[xi].value.map(|v| v.abs()), Op::Abs(xi))))
    }

    pub fn layer_norm(&self, x: Var, gain: Var, offset: Var, eps: f64) -> Result<Var> {
        let (xi, gi, oi) = (self.idx(x)?, self.idx(gain)?, self.idx(offset)?);
        self.record(|n| {
            let (out, stats) =
                tensor::layer_norm(&n[xi].value, &n[gi].value, &n[oi].value, T::from_f64(eps))?;
            Ok((
                out,
                Op::LayerNorm {
                    x: xi,
                    gain: gi,
                    offset: oi,
                    stats,
                },
            ))
        })
    }

    pub fn global_avg_pool(&self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        self.record(|n| Ok((tensor::global_avg_pool(&n[xi].value)?, Op::AvgPool(xi))))
    }

    pub fn narrow_channels(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        self.record(|n| {
            Ok((
                tensor::narrow_channels(&n[xi].value, start, len)?,
                Op::Narrow { x: xi, start },
            ))
        })
    }

    pub fn concat_channels(&self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&p| self.idx(p)).collect::<Result<Vec<_>>>()?;
        self.record(|n| {
            let refs: Vec<&Tensor<T>> = idx.iter().map(|&i| &n[i].value).collect();
            Ok((tensor::concat_channels(&refs)?, Op::Concat(idx.clone())))
        })
    }

    pub fn pixel_shuffle(&self, x: Var, r: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        self.record(|n| Ok((tensor::pixel_shuffle(&n[xi].value, r)?, Op::Shuffle(xi, r))))
    }

    pub fn pixel_unshuffle(&self, x: Var, r: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        self.record(|n| Ok((tensor::pixel_unshuffle(&n[xi].value, r)?, Op::Unshuffle(xi, r))))
    }

    pub fn bilinear_resize(&self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let xi = self.idx(x)?;
        self.record(|n| Ok((tensor::bilinear_resize(&n[xi].value, out_h, out_w)?, Op::Resize(xi))))
    }

    /// Forward real FFT; the result is a packed half-plane spectrum.
    pub fn rfft2(&self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        self.record(|n| {
            let width = n[xi].value.dims4()?[3];
            Ok((pack(tensor::rfft2(&n[xi].value)?), Op::Rfft2 { x: xi, width }))
        })
    }

    /// Inverse of [`Tape::rfft2`] for a spatial width of `width`.
    pub fn irfft2(&self, s: Var, width: usize) -> Result<Var> {
        let si = self.idx(s)?;
        self.record(|n| {
            spectrum_planes("irfft2", &n[si].value)?;
            let out = tensor::irfft2(&unpack(&n[si].value, width))?;
            Ok((out, Op::Irfft2(si)))
        })
    }

    /// `sqrt(re² + im² + ε)` of a packed spectrum.
    pub fn amplitude(&self, s: Var) -> Result<Var> {
        let si = self.idx(s)?;
        self.record(|n| {
            let t = &n[si].value;
            spectrum_planes("amplitude", t)?;
            let half = t.len() / 2;
            let (re, im) = t.data().split_at(half);
            let eps = T::from_f64(AMPLITUDE_EPS);
            let data = re.iter().zip(im).map(|(&r, &i)| (r * r + i * i + eps).sqrt()).collect();
            Ok((Tensor::from_parts(t.shape()[1..].to_vec(), data), Op::Amplitude(si)))
        })
    }

    /// `atan2(im, re)` of a packed spectrum.
    pub fn phase(&self, s: Var) -> Result<Var> {
        let si = self.idx(s)?;
        self.record(|n| {
            let t = &n[si].value;
            spectrum_planes("phase", t)?;
            let half = t.len() / 2;
            let (re, im) = t.data().split_at(half);
            // Bins that are real up to roundoff (DC and Nyquist of a real
            // signal) get exactly 0 or π, never −π.
            let pi = T::PI();
            let data = re
                .iter()
                .zip(im)
                .map(|(&r, &i)| {
                    if snapped(r, i) {
                        if r < T::zero() {
                            pi
                        } else {
                            T::zero()
                        }
                    } else {
                        i.atan2(r)
                    }
                })
                .collect();
            Ok((Tensor::from_parts(t.shape()[1..].to_vec(), data), Op::Phase(si)))
        })
    }

    /// Packed spectrum `amp·e^{i·phase}`.
    pub fn recombine(&self, amp: Var, phase: Var) -> Result<Var> {
        let (ai, pi) = (self.idx(amp)?, self.idx(phase)?);
        self.record(|n| {
            let (a, p) = (&n[ai].value, &n[pi].value);
            if a.shape() != p.shape() {
                return Err(shape_err(
                    "recombine",
                    format!("amplitude {:?} vs phase {:?}", a.shape(), p.shape()),
                ));
            }
            let mut shape = vec![2];
            shape.extend_from_slice(a.shape());
            let mut data: Vec<T> = a.data().iter().zip(p.data()).map(|(&a, &p)| a * p.cos()).collect();
            data.extend(a.data().iter().zip(p.data()).map(|(&a, &p)| a * p.sin()));
            Ok((Tensor::from_parts(shape, data), Op::Recombine { amp: ai, phase: pi }))
        })
    }

    /// `mean(|x|)` as a `[1]` tensor.
    pub fn mean_abs(&self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        self.record(|n| {
            let v = &n[xi].value;
            Ok((Tensor::scalar(tensor::abs_sum(v) / T::from_usize(v.len())), Op::MeanAbs(xi)))
        })
    }

    /// `mean(x²)` as a `[1]` tensor.
    pub fn mean_sq(&self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        self.record(|n| {
            let v = &n[xi].value;
            Ok((Tensor::scalar(tensor::sq_sum(v) / T::from_usize(v.len())), Op::MeanSq(xi)))
        })
    }

    pub fn mean(&self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        self.record(|n| Ok((Tensor::scalar(n[xi].value.mean()), Op::Mean(xi))))
    }

    pub fn diff_x(&self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        self.record(|n| Ok((tensor::diff_x(&n[xi].value)?, Op::DiffX(xi))))
    }

    pub fn diff_y(&self, x: Var) -> Result<Var> {
        let xi = self.idx(x)?;
        self.record(|n| Ok((tensor::diff_y(&n[xi].value)?, Op::DiffY(xi))))
    }

    /// Which side of every non-differentiable point the recorded values lie
    /// on: the sign of each `|·|` input; the sign of the real part of every
    /// real-valued spectrum bin, whose phase jumps between 0 and π as it
    /// passes the origin; and, for phases used other than by
    /// [`Tape::recombine`], the side of the branch cut of each bin with a
    /// negative real part. Two evaluations with equal signatures lie on the
    /// same smooth piece.
    pub fn kink_signature(&self) -> Vec<i8> {
        let nodes = self.nodes.borrow();
        let mut raw_phase = vec![false; nodes.len()];
        for node in nodes.iter() {
            let via_recombine = match node.op {
                Op::Recombine { phase, .. } => Some(phase),
                _ => None,
            };
            for i in node.op.inputs() {
                if Some(i) != via_recombine {
                    raw_phase[i] = true;
                }
            }
        }
        let sgn = |v: T| -> i8 {
            if v > T::zero() {
                1
            } else if v < T::zero() {
                -1
            } else {
                0
            }
        };
        let mut sig = Vec::new();
        for (n, node) in nodes.iter().enumerate() {
            match node.op {
                Op::Abs(x) | Op::MeanAbs(x) => sig.extend(nodes[x].value.data().iter().map(|&v| sgn(v))),
                Op::Phase(s) => {
                    let t = &nodes[s].value;
                    let (re, im) = t.data().split_at(t.len() / 2);
                    sig.extend(re.iter().zip(im).zip(node.value.data()).map(|((&r, &i), &p)| {
                        if snapped(r, i) {
                            10 + sgn(r)
                        } else if raw_phase[n] && r < T::zero() && p != T::PI() {
                            sgn(i)
                        } else {
                            2
                        }
                    }));
                }
                _ => {}
            }
        }
        sig
    }

    /// Split channels in half and multiply the halves.
    pub fn simple_gate(&self, x: Var) -> Result<Var> {
        let c = self.value(x)?.dims4()?[1];
        if c % 2 != 0 {
            return Err(shape_err("simple_gate", format!("odd channel count {c}")));
        }
        let a = self.narrow_channels(x, 0, c / 2)?;
        let b = self.narrow_channels(x, c / 2, c / 2)?;
        self.mul(a, b)
    }
}

/// A bin that is real up to roundoff; its phase is exactly 0 or π.
fn snapped<T: Scalar>(re: T, im: T) -> bool {
    im.abs() <= T::epsilon() * T::from_f64(64.0) * re.abs()
}
