//! The DarkIR encoder–decoder, its cost accounting and its checkpoint format.
//!
//! ```text
//! y ─ intro ─ E×n1 ─ down ─ E×n2 ─ down ─ E×n3 ─ down ─ E×mid ─┬─ head ─ x̂↓8
//!               │             │             │                   │
//!               └── skip ─┐   └── skip ─┐   └── skip ─┐         │
//!   x̂ ─ ending ─ D×m1 ─ ⊕ ─ up ─ D×m2 ─ ⊕ ─ up ─ D×m3 ─ ⊕ ─ up ─┘
//! ```

mod checkpoint;
mod config;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{invalid, shape_err, Result};
use crate::nn::{add_macs, Block, Builder, Conv, Init, ParamStore};
use crate::tensor::{self, counter::MacCount, ConvSpec, Scalar, Tensor};

pub use checkpoint::{load, load_as, read_checkpoint, save, write_checkpoint, CHECKPOINT_VERSION};
pub use config::{DarkIrConfig, SkipMode};
pub(crate) use config::parse_bool;

/// Total downsampling factor of the encoder.
pub const SCALE: usize = 8;

#[derive(Clone, Debug)]
enum Skip {
    Add,
    Lut { pw1: Conv, pw2: Conv },
}

#[derive(Clone, Debug)]
struct Layout {
    intro: Conv,
    enc: Vec<Vec<Block>>,
    down: Vec<Conv>,
    mid: Vec<Block>,
    head: Conv,
    /// `up[l]` maps level `l + 1` to level `l`.
    up: Vec<Conv>,
    skip: Vec<Skip>,
    dec: Vec<Vec<Block>>,
    ending: Conv,
}

/// A built network: configuration, parameters and the wiring between them.
#[derive(Clone, Debug)]
pub struct DarkIr<T = f32> {
    config: DarkIrConfig,
    pub params: ParamStore<T>,
    layout: Layout,
}

fn blocks<T: Scalar>(
    list: &[Block],
    ps: &ParamStore<T>,
    tape: &Tape<T>,
    mut x: Var,
) -> Result<Var> {
    for b in list {
        x = b.forward(ps, tape, x)?;
    }
    Ok(x)
}

fn blocks_macs(list: &[Block], h: usize, w: usize) -> MacCount {
    list.iter()
        .fold(MacCount::default(), |acc, b| add_macs(acc, b.macs(h, w)))
}

fn conv_count(c: &Conv, h: usize, w: usize) -> MacCount {
    MacCount {
        conv: c.macs(h, w),
        fft: 0,
    }
}

/// Smallest extent `≥ (h, w)` the network accepts.
pub fn padded_extent(h: usize, w: usize) -> (usize, usize) {
    (h.div_ceil(SCALE) * SCALE, w.div_ceil(SCALE) * SCALE)
}

/// Reject extents that are not multiples of 8, naming the padding needed.
pub fn check_extent(h: usize, w: usize) -> Result<()> {
    let (ph, pw) = padded_extent(h, w);
    if h == 0 || w == 0 || (ph, pw) != (h, w) {
        return Err(invalid(
            "darkir",
            format!(
                "input extent {h}x{w} is not a positive multiple of {SCALE}; \
                 pad by {} rows and {} columns to {ph}x{pw}",
                ph - h,
                pw - w
            ),
        ));
    }
    Ok(())
}

impl<T: Scalar> DarkIr<T> {
    /// Initialise every parameter from `seed`.
    pub fn build(config: &DarkIrConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut params, &mut rng);
        let opts = config.block_options();
        let w = config.width;
        let widths = [w, 2 * w, 4 * w];
        let same3 = ConvSpec::same(3, 1, 1);

        let intro = b.conv("intro", 3, w, same3, true, Init::FanIn);
        let mut enc = Vec::new();
        let mut down = Vec::new();
        for (l, &c) in widths.iter().enumerate() {
            let mut level = Vec::new();
            for i in 0..config.enc_blocks[l] {
                let blk = b.scope(&format!("enc{l}.{i}"), |b| {
                    Block::build(b, config.enc_block, c, &opts)
                })?;
                level.push(blk);
            }
            enc.push(level);
            down.push(b.conv(&format!("down{l}"), c, 2 * c, ConvSpec::strided(3, 2), true, Init::FanIn));
        }
        let mut mid = Vec::new();
        for i in 0..config.mid_blocks {
            mid.push(b.scope(&format!("mid.{i}"), |b| {
                Block::build(b, config.enc_block, 8 * w, &opts)
            })?);
        }
        let head = b.conv("head", 8 * w, 3, ConvSpec::pointwise(), true, Init::FanIn);

        let mut up = Vec::new();
        let mut skip = Vec::new();
        let mut dec = Vec::new();
        for (l, &c) in widths.iter().enumerate() {
            let pw = ConvSpec::pointwise();
            up.push(b.conv(&format!("up{l}"), 2 * c, 4 * c, pw, true, Init::FanIn));
            skip.push(b.scope(&format!("skip{l}"), |b| match config.skip_mode {
                SkipMode::Add => Skip::Add,
                SkipMode::Lut1d => Skip::Lut {
                    pw1: b.conv("pw1", c, c, pw, true, Init::FanIn),
                    pw2: b.conv("pw2", c / 2, c, pw, true, Init::Zero),
                },
                SkipMode::Lut1dDouble => Skip::Lut {
                    pw1: b.conv("pw1", c, 2 * c, pw, true, Init::FanIn),
                    pw2: b.conv("pw2", c, c, pw, true, Init::Zero),
                },
            }));
            let mut level = Vec::new();
            for i in 0..config.dec_blocks[2 - l] {
                level.push(b.scope(&format!("dec{l}.{i}"), |b| {
                    Block::build(b, config.dec_block, c, &opts)
                })?);
            }
            dec.push(level);
        }
        let ending = b.conv("ending", w, 3, same3, true, Init::FanIn);

        Ok(Self {
            config: config.clone(),
            params,
            layout: Layout {
                intro,
                enc,
                down,
                mid,
                head,
                up,
                skip,
                dec,
                ending,
            },
        })
    }

    pub fn config(&self) -> &DarkIrConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Same network with parameters converted to `U`.
    pub fn cast<U: Scalar>(&self) -> DarkIr<U> {
        DarkIr {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// `(x̂, x̂↓8)` for a `batch × 3 × H × W` input.
    pub fn forward(&self, tape: &Tape<T>, y: Var) -> Result<(Var, Var)> {
        let [_, c, h, w] = tape.value(y)?.dims4()?;
        if c != 3 {
            return Err(shape_err("darkir", format!("expected 3 input channels, got {c}")));
        }
        check_extent(h, w)?;
        let ps = &self.params;
        let lay = &self.layout;

        let mut x = lay.intro.forward(ps, tape, y)?;
        let mut skips = Vec::with_capacity(3);
        for (level, down) in lay.enc.iter().zip(&lay.down) {
            x = blocks(level, ps, tape, x)?;
            skips.push(x);
            x = down.forward(ps, tape, x)?;
        }
        x = blocks(&lay.mid, ps, tape, x)?;
        let low = lay.head.forward(ps, tape, x)?;

        for l in (0..3).rev() {
            x = lay.up[l].forward(ps, tape, x)?;
            x = tape.pixel_shuffle(x, 2)?;
            x = self.skip(l, skips[l], x, tape)?;
            x = blocks(&lay.dec[l], ps, tape, x)?;
        }
        let mut out = lay.ending.forward(ps, tape, x)?;
        if self.config.global_residual {
            out = tape.add(out, y)?;
        }
        Ok((out, low))
    }

    /// Merge encoder features `enc` into decoder features `dec` at level `l`.
    pub fn skip(&self, l: usize, enc: Var, dec: Var, tape: &Tape<T>) -> Result<Var> {
        let ps = &self.params;
        match &self.layout.skip[l] {
            Skip::Add => tape.add(enc, dec),
            Skip::Lut { pw1, pw2 } => {
                let t = pw1.forward(ps, tape, enc)?;
                let t = tape.simple_gate(t)?;
                let t = pw2.forward(ps, tape, t)?;
                tape.add(tape.add(enc, t)?, dec)
            }
        }
    }

    /// Run on a constant input; returns `(x̂, x̂↓8)` values.
    pub fn infer(&self, y: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let tape = Tape::new();
        let yv = tape.constant(y.clone());
        let (out, low) = self.forward(&tape, yv)?;
        let out = tape.value(out)?.clone();
        let low = tape.value(low)?.clone();
        Ok((out, low))
    }

    /// Inference at any extent: reflect-pad up to a multiple of 8, run, and
    /// crop the restored image back. The `x̂↓8` output keeps the padded
    /// extent divided by 8.
    pub fn restore(&self, y: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let [_, _, h, w] = y.dims4()?;
        let (ph, pw) = padded_extent(h, w);
        if (ph, pw) == (h, w) {
            return self.infer(y);
        }
        let (out, low) = self.infer(&tensor::pad_reflect(y, ph - h, pw - w)?)?;
        Ok((tensor::crop(&out, 0, 0, h, w)?, low))
    }

    /// Multiplies for one `h × w` image, split into convolution and FFT.
    pub fn macs(&self, h: usize, w: usize) -> MacCount {
        let lay = &self.layout;
        let mut total = conv_count(&lay.intro, h, w);
        let add = |t: &mut MacCount, m: MacCount| *t = add_macs(*t, m);
        for l in 0..3 {
            let (lh, lw) = (h >> l, w >> l);
            add(&mut total, blocks_macs(&lay.enc[l], lh, lw));
            add(&mut total, conv_count(&lay.down[l], lh, lw));
            add(&mut total, conv_count(&lay.up[l], lh / 2, lw / 2));
            if let Skip::Lut { pw1, pw2 } = &lay.skip[l] {
                add(&mut total, conv_count(pw1, lh, lw));
                add(&mut total, conv_count(pw2, lh, lw));
            }
            add(&mut total, blocks_macs(&lay.dec[l], lh, lw));
        }
        let (bh, bw) = (h / SCALE, w / SCALE);
        add(&mut total, blocks_macs(&lay.mid, bh, bw));
        add(&mut total, conv_count(&lay.head, bh, bw));
        add(&mut total, conv_count(&lay.ending, h, w));
        total
    }
}

/// Number of scalar parameters of a network built from `config`.
pub fn count_params(config: &DarkIrConfig) -> Result<usize> {
    Ok(DarkIr::<f32>::build(config, 0)?.param_count())
}

/// Multiplies of one forward pass at `h × w`, optionally including the FFTs.
pub fn count_macs(config: &DarkIrConfig, h: usize, w: usize, include_fft: bool) -> Result<u64> {
    check_extent(h, w)?;
    Ok(DarkIr::<f32>::build(config, 0)?.macs(h, w).total(include_fft))
}
