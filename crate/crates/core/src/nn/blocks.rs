use rand::Rng;

use super::{add_macs, Builder, Conv, Init, LayerNorm2d, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::error::{invalid, Result};
use crate::tensor::{counter::MacCount, fft_macs, ConvSpec, Scalar};

/// How Di-SpAM merges its dilated branches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchCombine {
    Sum,
    Concat,
}

/// Spatial mixer used inside decoder blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Attention {
    DiSpam,
    Lka,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    EBlock,
    /// EBlock whose FreMLP also edits the phase.
    EBlockPhase,
    DBlock,
    NafBlock,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockOptions {
    pub dilations: Vec<usize>,
    pub combine: BranchCombine,
    /// Depthwise 3×3 inside the gated FFN.
    pub extra_dw: bool,
    pub attention: Attention,
}

impl Default for BlockOptions {
    fn default() -> Self {
        Self {
            dilations: vec![1, 4, 9],
            combine: BranchCombine::Sum,
            extra_dw: true,
            attention: Attention::DiSpam,
        }
    }
}

fn macs(conv: u64, fft: u64) -> MacCount {
    MacCount { conv, fft }
}

fn conv_macs(convs: &[&Conv], h: usize, w: usize) -> MacCount {
    macs(convs.iter().map(|c| c.macs(h, w)).sum(), 0)
}

/// `x ⊙ pw(gap(x))`.
#[derive(Clone, Debug)]
pub struct Sca {
    pub conv: Conv,
}

impl Sca {
    pub fn build<T: Scalar, R: Rng>(b: &mut Builder<T, R>, c: usize) -> Self {
        Self {
            conv: b.conv("sca", c, c, ConvSpec::pointwise(), true, Init::FanIn),
        }
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, tape: &Tape<T>, x: Var) -> Result<Var> {
        let pooled = tape.global_avg_pool(x)?;
        let att = self.conv.forward(ps, tape, pooled)?;
        tape.mul_channel(x, att)
    }

    pub fn macs(&self) -> MacCount {
        conv_macs(&[&self.conv], 1, 1)
    }
}

/// Expand, depthwise 3×3, gate, channel attention, project.
#[derive(Clone, Debug)]
pub struct Spam {
    pub expand: Conv,
    pub dw: Conv,
    pub sca: Sca,
    pub project: Conv,
}

impl Spam {
    pub fn build<T: Scalar, R: Rng>(b: &mut Builder<T, R>, c: usize) -> Self {
        b.scope("spam", |b| Self {
            expand: b.conv("expand", c, 2 * c, ConvSpec::pointwise(), true, Init::FanIn),
            dw: b.conv("dw", 2 * c, 2 * c, ConvSpec::depthwise(3, 1, 2 * c), true, Init::FanIn),
            sca: Sca::build(b, c),
            project: b.conv("project", c, c, ConvSpec::pointwise(), true, Init::Zero),
        })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, tape: &Tape<T>, x: Var) -> Result<Var> {
        let y = self.expand.forward(ps, tape, x)?;
        let y = self.dw.forward(ps, tape, y)?;
        let y = tape.simple_gate(y)?;
        let y = self.sca.forward(ps, tape, y)?;
        self.project.forward(ps, tape, y)
    }

    pub fn macs(&self, h: usize, w: usize) -> MacCount {
        add_macs(conv_macs(&[&self.expand, &self.dw, &self.project], h, w), self.sca.macs())
    }
}

/// Residual MLP on the phase: `p + fc2(gate(fc1(p)))`.
#[derive(Clone, Debug)]
pub struct PhaseMlp {
    pub fc1: Conv,
    pub fc2: Conv,
}

/// Amplitude MLP in the Fourier domain with the phase carried through.
#[derive(Clone, Debug)]
pub struct FreMlp {
    pub fc1: Conv,
    pub fc2: Conv,
    pub phase: Option<PhaseMlp>,
    /// Zero-initialized per-channel scale on the branch output.
    pub out_scale: Conv,
}

impl FreMlp {
    pub fn build<T: Scalar, R: Rng>(b: &mut Builder<T, R>, c: usize, edit_phase: bool) -> Self {
        b.scope("fremlp", |b| {
            let fc1 = b.conv("fc1", c, 2 * c, ConvSpec::pointwise(), true, Init::FanIn);
            let fc2 = b.conv("fc2", c, c, ConvSpec::pointwise(), true, Init::FanIn);
            let phase = edit_phase.then(|| PhaseMlp {
                fc1: b.conv("phase_fc1", c, 2 * c, ConvSpec::pointwise(), true, Init::FanIn),
                fc2: b.conv("phase_fc2", c, c, ConvSpec::pointwise(), true, Init::Zero),
            });
            let out_scale = b.conv("out_scale", c, c, ConvSpec::depthwise(1, 1, c), false, Init::Zero);
            Self {
                fc1,
                fc2,
                phase,
                out_scale,
            }
        })
    }

    /// The branch before the output scale: the spatial signal whose
    /// spectrum has the edited amplitude.
    pub fn spectral<T: Scalar>(&self, ps: &ParamStore<T>, tape: &Tape<T>, x: Var) -> Result<Var> {
        let width = tape.value(x)?.dims4()?[3];
        let s = tape.rfft2(x)?;
        let amp = tape.amplitude(s)?;
        let mut phase = tape.phase(s)?;
        let a = self.fc1.forward(ps, tape, amp)?;
        let a = tape.simple_gate(a)?;
        let a = self.fc2.forward(ps, tape, a)?;
        let a = tape.abs(a)?;
        if let Some(pm) = &self.phase {
            let d = pm.fc1.forward(ps, tape, phase)?;
            let d = tape.simple_gate(d)?;
            let d = pm.fc2.forward(ps, tape, d)?;
            phase = tape.add(phase, d)?;
        }
        let s = tape.recombine(a, phase)?;
        tape.irfft2(s, width)
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, tape: &Tape<T>, x: Var) -> Result<Var> {
        let y = self.spectral(ps, tape, x)?;
        self.out_scale.forward(ps, tape, y)
    }

    pub fn macs(&self, h: usize, w: usize) -> MacCount {
        let wh = w / 2 + 1;
        let mut m = conv_macs(&[&self.fc1, &self.fc2], h, wh);
        if let Some(pm) = &self.phase {
            m = add_macs(m, conv_macs(&[&pm.fc1, &pm.fc2], h, wh));
        }
        m = add_macs(m, conv_macs(&[&self.out_scale], h, w));
        add_macs(m, macs(0, 2 * self.fc2.cout as u64 * fft_macs(h, w)))
    }
}

/// `z1 = spam(LN(z)) + z`, `z2 = fremlp(LN(z1)) + z1`.
#[derive(Clone, Debug)]
pub struct EBlock {
    pub norm1: LayerNorm2d,
    pub spam: Spam,
    pub norm2: LayerNorm2d,
    pub fremlp: FreMlp,
}

impl EBlock {
    pub fn build<T: Scalar, R: Rng>(b: &mut Builder<T, R>, c: usize, edit_phase: bool) -> Self {
        Self {
            norm1: b.layer_norm("norm1", c),
            spam: Spam::build(b, c),
            norm2: b.layer_norm("norm2", c),
            fremlp: FreMlp::build(b, c, edit_phase),
        }
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, tape: &Tape<T>, z: Var) -> Result<Var> {
        let y = self.norm1.forward(ps, tape, z)?;
        let z1 = tape.add(self.spam.forward(ps, tape, y)?, z)?;
        let y = self.norm2.forward(ps, tape, z1)?;
        tape.add(self.fremlp.forward(ps, tape, y)?, z1)
    }

    pub fn macs(&self, h: usize, w: usize) -> MacCount {
        add_macs(self.spam.macs(h, w), self.fremlp.macs(h, w))
    }
}

/// Parallel dilated depthwise branches with channel attention.
#[derive(Clone, Debug)]
pub struct DiSpam {
    pub pw_in: Conv,
    pub branches: Vec<Conv>,
    pub combine: BranchCombine,
    pub sca: Sca,
    pub pw_out: Conv,
}

impl DiSpam {
    pub fn build<T: Scalar, R: Rng>(
        b: &mut Builder<T, R>,
        c: usize,
        dilations: &[usize],
        combine: BranchCombine,
    ) -> Self {
        let e = 2 * c;
        b.scope("dispam", |b| {
            let pw_in = b.conv("pw_in", c, e, ConvSpec::pointwise(), true, Init::FanIn);
            let branches = dilations
                .iter()
                .map(|&d| b.conv(&format!("dw_d{d}"), e, e, ConvSpec::depthwise(3, d, e), true, Init::FanIn))
                .collect();
            let merged = match combine {
                BranchCombine::Sum => e,
                BranchCombine::Concat => e * dilations.len(),
            };
            Self {
                pw_in,
                branches,
                combine,
                sca: Sca::build(b, merged),
                pw_out: b.conv("pw_out", merged, c, ConvSpec::pointwise(), true, Init::Zero),
            }
        })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, tape: &Tape<T>, x: Var) -> Result<Var> {
        self.forward_with(ps, tape, x, true)
    }

    /// `use_sca = false` skips the channel attention, leaving a linear map.
    pub fn forward_with<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        tape: &Tape<T>,
        x: Var,
        use_sca: bool,
    ) -> Result<Var> {
        let u = self.pw_in.forward(ps, tape, x)?;
        let outs = self
            .branches
            .iter()
            .map(|br| br.forward(ps, tape, u))
            .collect::<Result<Vec<_>>>()?;
        let mut y = match self.combine {
            BranchCombine::Sum => {
                let mut acc = outs[0];
                for &o in &outs[1..] {
                    acc = tape.add(acc, o)?;
                }
                acc
            }
            BranchCombine::Concat => tape.concat_channels(&outs)?,
        };
        if use_sca {
            y = self.sca.forward(ps, tape, y)?;
        }
        self.pw_out.forward(ps, tape, y)
    }

    pub fn macs(&self, h: usize, w: usize) -> MacCount {
        let mut convs = vec![&self.pw_in, &self.pw_out];
        convs.extend(self.branches.iter());
        add_macs(conv_macs(&convs, h, w), self.sca.macs())
    }
}

/// Large-kernel attention: `u ⊙ pw(dw7_d3(dw5(u)))` between two pointwise maps.
#[derive(Clone, Debug)]
pub struct Lka {
    pub pw_in: Conv,
    pub dw5: Conv,
    pub dw7: Conv,
    pub pw_attn: Conv,
    pub pw_out: Conv,
}

impl Lka {
    pub fn build<T: Scalar, R: Rng>(b: &mut Builder<T, R>, c: usize) -> Self {
        let e = 2 * c;
        b.scope("lka", |b| Self {
            pw_in: b.conv("pw_in", c, e, ConvSpec::pointwise(), true, Init::FanIn),
            dw5: b.conv("dw5", e, e, ConvSpec::depthwise(5, 1, e), true, Init::FanIn),
            dw7: b.conv("dw7_d3", e, e, ConvSpec::depthwise(7, 3, e), true, Init::FanIn),
            pw_attn: b.conv("pw_attn", e, e, ConvSpec::pointwise(), true, Init::FanIn),
            pw_out: b.conv("pw_out", e, c, ConvSpec::pointwise(), true, Init::Zero),
        })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, tape: &Tape<T>, x: Var) -> Result<Var> {
        let u = self.pw_in.forward(ps, tape, x)?;
        let a = self.dw5.forward(ps, tape, u)?;
        let a = self.dw7.forward(ps, tape, a)?;
        let a = self.pw_attn.forward(ps, tape, a)?;
        let y = tape.mul(u, a)?;
        self.pw_out.forward(ps, tape, y)
    }

    pub fn macs(&self, h: usize, w: usize) -> MacCount {
        conv_macs(&[&self.pw_in, &self.dw5, &self.dw7, &self.pw_attn, &self.pw_out], h, w)
    }
}

/// Expand, optional depthwise 3×3, gate, project.
#[derive(Clone, Debug)]
pub struct GatedFfn {
    pub expand: Conv,
    pub dw: Option<Conv>,
    pub project: Conv,
}

impl GatedFfn {
    pub fn build<T: Scalar, R: Rng>(b: &mut Builder<T, R>, c: usize, extra_dw: bool) -> Self {
        b.scope("ffn", |b| Self {
            expand: b.conv("expand", c, 2 * c, ConvSpec::pointwise(), true, Init::FanIn),
            dw: extra_dw
                .then(|| b.conv("dw", 2 * c, 2 * c, ConvSpec::depthwise(3, 1, 2 * c), false, Init::FanIn)),
            project: b.conv("project", c, c, ConvSpec::pointwise(), true, Init::Zero),
        })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, tape: &Tape<T>, x: Var) -> Result<Var> {
        let mut y = self.expand.forward(ps, tape, x)?;
        if let Some(dw) = &self.dw {
            y = dw.forward(ps, tape, y)?;
        }
        let y = tape.simple_gate(y)?;
        self.project.forward(ps, tape, y)
    }

    pub fn macs(&self, h: usize, w: usize) -> MacCount {
        let mut convs = vec![&self.expand, &self.project];
        convs.extend(self.dw.iter());
        conv_macs(&convs, h, w)
    }
}

#[derive(Clone, Debug)]
pub enum Mixer {
    DiSpam(DiSpam),
    Lka(Lka),
}

impl Mixer {
    fn forward<T: Scalar>(&self, ps: &ParamStore<T>, tape: &Tape<T>, x: Var) -> Result<Var> {
        match self {
            Mixer::DiSpam(m) => m.forward(ps, tape, x),
            Mixer::Lka(m) => m.forward(ps, tape, x),
        }
    }

    fn macs(&self, h: usize, w: usize) -> MacCount {
        match self {
            Mixer::DiSpam(m) => m.macs(h, w),
            Mixer::Lka(m) => m.macs(h, w),
        }
    }
}

/// `z1 = mixer(LN(z)) + z`, `z2 = ffn(LN(z1)) + z1`.
#[derive(Clone, Debug)]
pub struct DBlock {
    pub norm1: LayerNorm2d,
    pub mixer: Mixer,
    pub norm2: LayerNorm2d,
    pub ffn: GatedFfn,
}

impl DBlock {
    pub fn build<T: Scalar, R: Rng>(b: &mut Builder<T, R>, c: usize, opts: &BlockOptions) -> Self {
        let norm1 = b.layer_norm("norm1", c);
        let mixer = match opts.attention {
            Attention::DiSpam => Mixer::DiSpam(DiSpam::build(b, c, &opts.dilations, opts.combine)),
            Attention::Lka => Mixer::Lka(Lka::build(b, c)),
        };
        Self {
            norm1,
            mixer,
            norm2: b.layer_norm("norm2", c),
            ffn: GatedFfn::build(b, c, opts.extra_dw),
        }
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, tape: &Tape<T>, z: Var) -> Result<Var> {
        let y = self.norm1.forward(ps, tape, z)?;
        let z1 = tape.add(self.mixer.forward(ps, tape, y)?, z)?;
        let y = self.norm2.forward(ps, tape, z1)?;
        tape.add(self.ffn.forward(ps, tape, y)?, z1)
    }

    pub fn macs(&self, h: usize, w: usize) -> MacCount {
        add_macs(self.mixer.macs(h, w), self.ffn.macs(h, w))
    }
}

/// SpAM followed by a plain gated channel MLP.
#[derive(Clone, Debug)]
pub struct NafBlock {
    pub norm1: LayerNorm2d,
    pub spam: Spam,
    pub norm2: LayerNorm2d,
    pub mlp: GatedFfn,
}

impl NafBlock {
    pub fn build<T: Scalar, R: Rng>(b: &mut Builder<T, R>, c: usize) -> Self {
        Self {
            norm1: b.layer_norm("norm1", c),
            spam: Spam::build(b, c),
            norm2: b.layer_norm("norm2", c),
            mlp: GatedFfn::build(b, c, false),
        }
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, tape: &Tape<T>, z: Var) -> Result<Var> {
        let y = self.norm1.forward(ps, tape, z)?;
        let z1 = tape.add(self.spam.forward(ps, tape, y)?, z)?;
        let y = self.norm2.forward(ps, tape, z1)?;
        tape.add(self.mlp.forward(ps, tape, y)?, z1)
    }

    pub fn macs(&self, h: usize, w: usize) -> MacCount {
        add_macs(self.spam.macs(h, w), self.mlp.macs(h, w))
    }
}

#[derive(Clone, Debug)]
pub enum Block {
    E(EBlock),
    D(DBlock),
    Naf(NafBlock),
}

impl Block {
    pub fn build<T: Scalar, R: Rng>(
        b: &mut Builder<T, R>,
        kind: BlockKind,
        c: usize,
        opts: &BlockOptions,
    ) -> Result<Self> {
        if c == 0 {
            return Err(invalid("block", "width must be >= 1"));
        }
        if opts.dilations.is_empty() || opts.dilations.contains(&0) {
            return Err(invalid("block", format!("bad dilation set {:?}", opts.dilations)));
        }
        Ok(match kind {
            BlockKind::EBlock => Block::E(EBlock::build(b, c, false)),
            BlockKind::EBlockPhase => Block::E(EBlock::build(b, c, true)),
            BlockKind::DBlock => Block::D(DBlock::build(b, c, opts)),
            BlockKind::NafBlock => Block::Naf(NafBlock::build(b, c)),
        })
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, tape: &Tape<T>, z: Var) -> Result<Var> {
        match self {
            Block::E(b) => b.forward(ps, tape, z),
            Block::D(b) => b.forward(ps, tape, z),
            Block::Naf(b) => b.forward(ps, tape, z),
        }
    }

    /// Multiplies for one image of extent `h × w`.
    pub fn macs(&self, h: usize, w: usize) -> MacCount {
        match self {
            Block::E(b) => b.macs(h, w),
            Block::D(b) => b.macs(h, w),
            Block::Naf(b) => b.macs(h, w),
        }
    }
}

#[cfg(test)]
mod tests;
