//! Parameter storage, the two primitive layers, and the network blocks.

mod blocks;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{invalid, Result};
use crate::tensor::{self, counter::MacCount, ConvSpec, Scalar, Tensor, LN_EPS};

pub use blocks::{
    Attention, Block, BlockKind, BlockOptions, BranchCombine, DBlock, DiSpam, EBlock, FreMlp,
    GatedFfn, Lka, Mixer, NafBlock, PhaseMlp, Sca, Spam,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Whether weight decay applies (conv kernels only).
    pub decay: bool,
}

/// Flat, ordered list of named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T = f32> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn push(&mut self, name: String, value: Tensor<T>, decay: bool) -> ParamId {
        self.params.push(Param { name, value, decay });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Leaf for `id` on `tape`, created on first use.
    pub fn bind(&self, tape: &Tape<T>, id: ParamId) -> Var {
        tape.bind(id.0, self.get(id))
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    decay: p.decay,
                })
                .collect(),
        }
    }
}

/// How a layer's parameters start out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)` for weights and bias.
    FanIn,
    Zero,
}

/// Allocates parameters under a dotted name prefix.
pub struct Builder<'a, T, R> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut R,
    prefix: String,
}

impl<'a, T: Scalar, R: Rng> Builder<'a, T, R> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut R) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    /// Run `f` with `name` appended to the prefix.
    pub fn scope<V>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> V) -> V {
        let saved = self.prefix.clone();
        self.prefix = self.qualify(name);
        let out = f(self);
        self.prefix = saved;
        out
    }

    fn qualify(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor<T> {
        Tensor::rand_uniform(shape, -bound, bound, self.rng)
    }

    pub fn conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        spec: ConvSpec,
        bias: bool,
        init: Init,
    ) -> Conv {
        let cin_g = cin / spec.groups;
        let k = spec.kernel_size;
        let wshape = [cout, cin_g, k, k];
        let bound = 1.0 / ((cin_g * k * k) as f64).sqrt();
        let (wv, bv) = match init {
            Init::FanIn => {
                let w = self.uniform(&wshape, bound);
                let b = bias.then(|| self.uniform(&[cout], bound));
                (w, b)
            }
            Init::Zero => (Tensor::zeros(&wshape), bias.then(|| Tensor::zeros(&[cout]))),
        };
        let w = self.store.push(self.qualify(&format!("{name}.weight")), wv, true);
        let b = bv.map(|b| self.store.push(self.qualify(&format!("{name}.bias")), b, false));
        Conv {
            weight: w,
            bias: b,
            spec,
            cin,
            cout,
        }
    }

    pub fn layer_norm(&mut self, name: &str, channels: usize) -> LayerNorm2d {
        let gain = self
            .store
            .push(self.qualify(&format!("{name}.gain")), Tensor::ones(&[channels]), false);
        let offset = self
            .store
            .push(self.qualify(&format!("{name}.offset")), Tensor::zeros(&[channels]), false);
        LayerNorm2d { gain, offset }
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
    pub cin: usize,
    pub cout: usize,
}

impl Conv {
    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, tape: &Tape<T>, x: Var) -> Result<Var> {
        let w = ps.bind(tape, self.weight);
        let b = self.bias.map(|b| ps.bind(tape, b));
        tape.conv2d(x, w, b, self.spec)
    }

    /// Output extent for an `h × w` input.
    pub fn out_extent(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |v| self.spec.output_extent(v).unwrap_or(0);
        (f(h), f(w))
    }

    /// Multiplies for one image of extent `h × w`.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let (oh, ow) = self.out_extent(h, w);
        let k = self.spec.kernel_size;
        (self.cout * oh * ow * (self.cin / self.spec.groups) * k * k) as u64
    }
}

/// Layer norm over channels at each position.
#[derive(Clone, Debug)]
pub struct LayerNorm2d {
    pub gain: ParamId,
    pub offset: ParamId,
}

impl LayerNorm2d {
    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, tape: &Tape<T>, x: Var) -> Result<Var> {
        let g = ps.bind(tape, self.gain);
        let o = ps.bind(tape, self.offset);
        tape.layer_norm(x, g, o, LN_EPS)
    }
}

pub(crate) fn add_macs(a: MacCount, b: MacCount) -> MacCount {
    MacCount {
        conv: a.conv + b.conv,
        fft: a.fft + b.fft,
    }
}

/// Split channels into halves `(a, b)` and return `a ⊙ b`.
pub fn simple_gate<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let c = x.dims4()?[1];
    if c % 2 != 0 {
        return Err(invalid("simple_gate", format!("odd channel count {c}")));
    }
    let a = tensor::narrow_channels(x, 0, c / 2)?;
    let b = tensor::narrow_channels(x, c / 2, c / 2)?;
    tensor::mul(&a, &b)
}

/// Simplified channel attention `x ⊙ (w·gap(x) + b)` with a 1×1 map `w`.
pub fn sca<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let pooled = tensor::global_avg_pool(x)?;
    let att = tensor::conv2d(&pooled, w, b, &ConvSpec::pointwise())?;
    tensor::mul_channel(x, &att)
}
