use super::*;
use crate::autodiff::gradcheck;
use crate::nn::ParamId;
use crate::tensor::{self, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

type Rng8 = ChaCha8Rng;

/// Central-difference step; see `finite_difference_discrepancy_is_second_order`.
const FD_STEP: f64 = 1e-4;
type Fwd = Box<dyn Fn(&ParamStore<f64>, &Tape<f64>, Var) -> Result<Var>>;

fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::rand_uniform(shape, -1.0, 1.0, &mut Rng8::seed_from_u64(seed))
}

/// Overwrite every parameter with random values, norm gains near one.
fn randomize(ps: &mut ParamStore<f64>, seed: u64) {
    randomize_scaled(ps, seed, |_| 0.5);
}

/// Weights and biases uniform in `±1/sqrt(fan_in)`, the trained-from-scratch
/// scale, with zero-initialized layers included.
fn randomize_init_scale(ps: &mut ParamStore<f64>, seed: u64) {
    randomize_scaled(ps, seed, |shape| match shape {
        [_, cin, k, _] => 1.0 / ((cin * k * k) as f64).sqrt(),
        _ => 0.5,
    });
}

fn randomize_scaled(ps: &mut ParamStore<f64>, seed: u64, bound: impl Fn(&[usize]) -> f64) {
    let mut rng = Rng8::seed_from_u64(seed);
    let ids: Vec<_> = ps.ids().collect();
    for id in ids {
        let gain = ps.param(id).name.ends_with(".gain");
        let shape = ps.get(id).shape().to_vec();
        let b = bound(&shape);
        let mut t = Tensor::rand_uniform(&shape, -b, b, &mut rng);
        if gain {
            t = t.map(|v| 1.0 + 0.4 * v);
        }
        *ps.get_mut(id) = t;
    }
}

fn set(ps: &mut ParamStore<f64>, id: ParamId, f: impl Fn(usize) -> f64) {
    let t = ps.get_mut(id);
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v = f(i);
    }
}

fn run(f: &dyn Fn(&ParamStore<f64>, &Tape<f64>, Var) -> Result<Var>, ps: &ParamStore<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let tape = Tape::new();
    let v = tape.leaf(x.clone());
    let out = f(ps, &tape, v).unwrap();
    let r = tape.value(out).unwrap().clone();
    r
}

fn variants() -> Vec<(&'static str, BlockKind, BlockOptions)> {
    let d = BlockOptions::default();
    vec![
        ("eblock", BlockKind::EBlock, d.clone()),
        ("eblock_phase", BlockKind::EBlockPhase, d.clone()),
        ("dblock", BlockKind::DBlock, d.clone()),
        ("dblock_concat", BlockKind::DBlock, BlockOptions { combine: BranchCombine::Concat, ..d.clone() }),
        ("dblock_no_dw", BlockKind::DBlock, BlockOptions { extra_dw: false, ..d.clone() }),
        ("dblock_lka", BlockKind::DBlock, BlockOptions { attention: Attention::Lka, ..d.clone() }),
        ("nafblock", BlockKind::NafBlock, d),
    ]
}

fn build_block(kind: BlockKind, c: usize, opts: &BlockOptions, seed: u64) -> (Block, ParamStore<f64>) {
    let mut ps = ParamStore::new();
    let mut rng = Rng8::seed_from_u64(seed);
    let block = Block::build(&mut Builder::new(&mut ps, &mut rng), kind, c, opts).unwrap();
    (block, ps)
}

fn module(name: &str, c: usize, ps: &mut ParamStore<f64>) -> Fwd {
    let mut rng = Rng8::seed_from_u64(0);
    let mut b = Builder::new(ps, &mut rng);
    match name {
        "spam" => {
            let m = Spam::build(&mut b, c);
            Box::new(move |ps, t, x| m.forward(ps, t, x))
        }
        "fremlp" => {
            let m = FreMlp::build(&mut b, c, false);
            Box::new(move |ps, t, x| m.forward(ps, t, x))
        }
        "dispam" => {
            let m = DiSpam::build(&mut b, c, &[1, 4, 9], BranchCombine::Sum);
            Box::new(move |ps, t, x| m.forward(ps, t, x))
        }
        "gated_ffn" => {
            let m = GatedFfn::build(&mut b, c, true);
            Box::new(move |ps, t, x| m.forward(ps, t, x))
        }
        "lka" => {
            let m = Lka::build(&mut b, c);
            Box::new(move |ps, t, x| m.forward(ps, t, x))
        }
        _ => unreachable!(),
    }
}

fn grad_error(f: &Fwd, ps: &ParamStore<f64>, x: &Tensor<f64>, seed: u64, h: f64) -> gradcheck::GradCheck {
    let probe = rand(x.shape(), seed + 1000);
    gradcheck::check_params(ps, std::slice::from_ref(x), h, |_, _| true, |ps, t, v| {
        let y = f(ps, t, v[0])?;
        let p = t.constant(probe.clone());
        t.mean(t.mul(y, p)?)
    })
    .unwrap()
}

#[test]
fn blocks_are_identity_at_init() {
    let x = rand(&[2, 8, 8, 8], 1);
    for (name, kind, opts) in variants() {
        let (block, ps) = build_block(kind, 8, &opts, 3);
        let y = run(&|ps, t, v| block.forward(ps, t, v), &ps, &x);
        assert_eq!(y, x, "{name}");
    }
}

/// Within tolerance, with at most 1% of elements excluded for kinks.
fn assert_sound(r: &gradcheck::GradCheck, name: &str, seed: u64) {
    assert!(r.max_rel_err <= 1e-4, "{name} seed {seed}: {r:?}");
    assert!(r.skipped * 100 <= r.checked + r.skipped, "{name} seed {seed}: {r:?}");
}

fn check_blocks(h: f64, init: fn(&mut ParamStore<f64>, u64)) {
    for (name, kind, opts) in variants() {
        for seed in 0..3 {
            let (block, mut ps) = build_block(kind, 4, &opts, seed);
            init(&mut ps, seed + 10);
            let f: Fwd = Box::new(move |ps, t, x| block.forward(ps, t, x));
            let r = grad_error(&f, &ps, &rand(&[1, 4, 8, 8], seed), seed, h);
            assert_sound(&r, name, seed);
        }
    }
}

fn check_modules(h: f64, init: fn(&mut ParamStore<f64>, u64)) {
    for name in ["spam", "fremlp", "dispam", "gated_ffn", "lka"] {
        for seed in 0..3 {
            let mut ps = ParamStore::new();
            let f = module(name, 4, &mut ps);
            init(&mut ps, seed + 20);
            let r = grad_error(&f, &ps, &rand(&[1, 4, 8, 8], seed + 5), seed, h);
            assert_sound(&r, name, seed);
        }
    }
}

#[test]
fn block_gradients_at_init_scale() {
    check_blocks(FD_STEP, randomize_init_scale);
}

#[test]
fn module_gradients_at_init_scale() {
    check_modules(FD_STEP, randomize_init_scale);
}

#[test]
fn block_gradients_with_large_weights() {
    check_blocks(FD_STEP, randomize);
}

#[test]
fn module_gradients_with_large_weights() {
    check_modules(FD_STEP, randomize);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn blocks_preserve_shape(
        v in 0usize..7,
        c in prop::sample::select(vec![4usize, 8, 16]),
        s in prop::sample::select(vec![8usize, 16]),
        seed in 0u64..1000,
    ) {
        let (_, kind, opts) = variants().swap_remove(v);
        let (block, mut ps) = build_block(kind, c, &opts, seed);
        randomize(&mut ps, seed);
        let x = rand(&[1, c, s, s], seed);
        let y = run(&|ps, t, v| block.forward(ps, t, v), &ps, &x);
        prop_assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn fremlp_preserves_phase(seed in 0u64..1000, edge in prop::sample::select(vec![4usize, 8])) {
        let mut ps = ParamStore::new();
        let m = FreMlp::build(&mut Builder::new(&mut ps, &mut Rng8::seed_from_u64(seed)), 4, false);
        randomize(&mut ps, seed);
        let x = rand(&[1, 4, edge, edge], seed + 1);
        let y = run(&|ps, t, v| m.spectral(ps, t, v), &ps, &x);
        let sx = tensor::fft2_real(&x).unwrap();
        let sy = tensor::fft2_real(&y).unwrap();
        for i in 0..sx.phase.len() {
            if sy.amplitude.data()[i] > 1e-6 && sx.amplitude.data()[i] > 1e-6 {
                let d = sy.phase.data()[i] - sx.phase.data()[i];
                let wrapped = (d + PI).rem_euclid(2.0 * PI) - PI;
                prop_assert!(wrapped.abs() < 1e-8, "bin {}: {} vs {}", i, sy.phase.data()[i], sx.phase.data()[i]);
            }
        }
    }
}

/// First map `[I; 0]` with bias `[0; 1]`, so the gate passes the amplitude
/// through; second map `k·I`; output scale one.
fn fremlp_scaled(c: usize, k: f64) -> (FreMlp, ParamStore<f64>) {
    let mut ps = ParamStore::new();
    let m = FreMlp::build(&mut Builder::new(&mut ps, &mut Rng8::seed_from_u64(0)), c, false);
    set(&mut ps, m.fc1.weight, |i| if i < c * c && i / c == i % c { 1.0 } else { 0.0 });
    set(&mut ps, m.fc1.bias.unwrap(), |i| if i >= c { 1.0 } else { 0.0 });
    set(&mut ps, m.fc2.weight, |i| if i / c == i % c { k } else { 0.0 });
    set(&mut ps, m.fc2.bias.unwrap(), |_| 0.0);
    set(&mut ps, m.out_scale.weight, |_| 1.0);
    (m, ps)
}

#[test]
fn fremlp_identity_and_scaling() {
    let x = rand(&[2, 3, 8, 8], 7);
    for k in [1.0, 0.5, 2.5] {
        let (m, ps) = fremlp_scaled(3, k);
        let y = run(&|ps, t, v| m.forward(ps, t, v), &ps, &x);
        assert!(y.max_abs_diff(&x.map(|v| k * v)) < 1e-9, "k={k}");
    }
}

#[test]
fn fremlp_matches_direct_dft_composition() {
    let (c, h, w) = (2, 4, 6);
    let wh = w / 2 + 1;
    let mut ps = ParamStore::new();
    let m = FreMlp::build(&mut Builder::new(&mut ps, &mut Rng8::seed_from_u64(0)), c, false);
    randomize(&mut ps, 9);
    let x = rand(&[1, c, h, w], 3);
    let y = run(&|ps, t, v| m.forward(ps, t, v), &ps, &x);

    let p = |id: ParamId| ps.get(id).data().to_vec();
    let (w1, b1, w2, b2, sc) = (
        p(m.fc1.weight),
        p(m.fc1.bias.unwrap()),
        p(m.fc2.weight),
        p(m.fc2.bias.unwrap()),
        p(m.out_scale.weight),
    );
    let xs = x.data();
    // Half-plane amplitude and phase per channel by the defining sum.
    let mut amp = vec![0.0; c * h * wh];
    let mut phs = vec![0.0; c * h * wh];
    for ch in 0..c {
        for k in 0..h {
            for l in 0..wh {
                let (mut re, mut im) = (0.0, 0.0);
                for a in 0..h {
                    for b in 0..w {
                        let t = -2.0 * PI * ((k * a) as f64 / h as f64 + (l * b) as f64 / w as f64);
                        let v = xs[(ch * h + a) * w + b];
                        re += v * t.cos();
                        im += v * t.sin();
                    }
                }
                amp[(ch * h + k) * wh + l] = (re * re + im * im + 1e-12).sqrt();
                phs[(ch * h + k) * wh + l] = im.atan2(re);
            }
        }
    }
    // Bin-wise MLP.
    let mut out_amp = vec![0.0; c * h * wh];
    for bin in 0..h * wh {
        let a: Vec<f64> = (0..c).map(|ch| amp[ch * h * wh + bin]).collect();
        let hid: Vec<f64> = (0..2 * c)
            .map(|o| b1[o] + (0..c).map(|i| w1[o * c + i] * a[i]).sum::<f64>())
            .collect();
        let g: Vec<f64> = (0..c).map(|i| hid[i] * hid[i + c]).collect();
        for o in 0..c {
            out_amp[o * h * wh + bin] = (b2[o] + (0..c).map(|i| w2[o * c + i] * g[i]).sum::<f64>()).abs();
        }
    }
    // Inverse over the full plane using conjugate symmetry.
    for ch in 0..c {
        let bin = |k: usize, l: usize| -> (f64, f64) {
            let (kk, ll, conj) = if l < wh { (k, l, 1.0) } else { ((h - k) % h, w - l, -1.0) };
            let i = (ch * h + kk) * wh + ll;
            (out_amp[i] * phs[i].cos(), conj * out_amp[i] * phs[i].sin())
        };
        for a in 0..h {
            for b in 0..w {
                let mut acc = 0.0;
                for k in 0..h {
                    for l in 0..w {
                        let (re, im) = bin(k, l);
                        let t = 2.0 * PI * ((k * a) as f64 / h as f64 + (l * b) as f64 / w as f64);
                        acc += re * t.cos() - im * t.sin();
                    }
                }
                let want = sc[ch] * acc / (h * w) as f64;
                let got = y.data()[(ch * h + a) * w + b];
                assert!((got - want).abs() < 1e-10, "{got} vs {want}");
            }
        }
    }
}

#[test]
fn spam_constant_input_closed_form() {
    let (c, h, w) = (2, 5, 4);
    let mut ps = ParamStore::new();
    let m = Spam::build(&mut Builder::new(&mut ps, &mut Rng8::seed_from_u64(0)), c);
    randomize(&mut ps, 4);
    set(&mut ps, m.dw.weight, |_| 1.0);
    let v = [0.3, -0.7];
    let x = Tensor::from_fn(&[1, c, h, w], |i| v[i / (h * w)]);
    let y = run(&|ps, t, x| m.forward(ps, t, x), &ps, &x);

    let p = |id: ParamId| ps.get(id).data().to_vec();
    let (we, be, bd) = (p(m.expand.weight), p(m.expand.bias.unwrap()), p(m.dw.bias.unwrap()));
    let (ws, bs) = (p(m.sca.conv.weight), p(m.sca.conv.bias.unwrap()));
    let (wp, bp) = (p(m.project.weight), p(m.project.bias.unwrap()));
    let e: Vec<f64> = (0..2 * c).map(|o| be[o] + (0..c).map(|i| we[o * c + i] * v[i]).sum::<f64>()).collect();
    let taps = |i: usize, n: usize| (i.saturating_sub(1)..=(i + 1).min(n - 1)).count() as f64;
    let gated = |r: usize, q: usize| -> Vec<f64> {
        let n = taps(r, h) * taps(q, w);
        (0..c).map(|i| (n * e[i] + bd[i]) * (n * e[i + c] + bd[i + c])).collect()
    };
    let mut pooled = vec![0.0; c];
    for r in 0..h {
        for q in 0..w {
            for (acc, g) in pooled.iter_mut().zip(gated(r, q)) {
                *acc += g / (h * w) as f64;
            }
        }
    }
    let att: Vec<f64> = (0..c).map(|o| bs[o] + (0..c).map(|i| ws[o * c + i] * pooled[i]).sum::<f64>()).collect();
    for r in 0..h {
        for q in 0..w {
            let g = gated(r, q);
            for o in 0..c {
                let want = bp[o] + (0..c).map(|i| wp[o * c + i] * g[i] * att[i]).sum::<f64>();
                assert!((y.data()[(o * h + r) * w + q] - want).abs() < 1e-12);
            }
        }
    }
}

fn dispam_store(seed: u64) -> (DiSpam, ParamStore<f64>) {
    let mut ps = ParamStore::new();
    let m = DiSpam::build(&mut Builder::new(&mut ps, &mut Rng8::seed_from_u64(0)), 4, &[1, 4, 9], BranchCombine::Sum);
    randomize(&mut ps, seed);
    (m, ps)
}

fn zero_branch(ps: &mut ParamStore<f64>, conv: &Conv) {
    set(ps, conv.weight, |_| 0.0);
    set(ps, conv.bias.unwrap(), |_| 0.0);
}

#[test]
fn dispam_branch_isolation() {
    let x = rand(&[1, 4, 12, 12], 2);
    for keep in 0..3 {
        let (m, mut ps) = dispam_store(keep as u64);
        for (i, br) in m.branches.iter().enumerate() {
            if i != keep {
                zero_branch(&mut ps, br);
            }
        }
        let full = run(&|ps, t, v| m.forward(ps, t, v), &ps, &x);
        let single = run(
            &|ps, t, v| {
                let u = m.pw_in.forward(ps, t, v)?;
                let b = m.branches[keep].forward(ps, t, u)?;
                let s = m.sca.forward(ps, t, b)?;
                m.pw_out.forward(ps, t, s)
            },
            &ps,
            &x,
        );
        assert!(full.max_abs_diff(&single) < 1e-15);
    }
}

#[test]
fn dispam_branch_sum_is_linear_without_attention() {
    let x = rand(&[1, 4, 12, 12], 3);
    let (m, mut ps) = dispam_store(5);
    set(&mut ps, m.pw_out.bias.unwrap(), |_| 0.0);
    let f = |ps: &ParamStore<f64>, t: &Tape<f64>, v: Var| m.forward_with(ps, t, v, false);
    let full = run(&f, &ps, &x);
    let mut sum = Tensor::zeros(full.shape());
    for keep in 0..3 {
        let mut single = ps.clone();
        for (i, br) in m.branches.iter().enumerate() {
            if i != keep {
                zero_branch(&mut single, br);
            }
        }
        sum = tensor::add(&sum, &run(&f, &single, &x)).unwrap();
    }
    assert!(full.max_abs_diff(&sum) < 1e-12);
}

#[test]
fn dispam_receptive_field_is_nine() {
    let (m, mut ps) = dispam_store(6);
    let ids: Vec<_> = ps.ids().filter(|&id| ps.param(id).name.ends_with(".bias")).collect();
    for id in ids {
        set(&mut ps, id, |_| 0.0);
    }
    let n = 32;
    let centre = 16;
    let x = Tensor::from_fn(&[1, 4, n, n], |i| if i % (n * n) == centre * n + centre { 1.0 } else { 0.0 });
    let y = run(&|ps, t, v| m.forward(ps, t, v), &ps, &x);
    let reach = |dy: i64, dx: i64| {
        let (r, q) = ((centre as i64 + dy) as usize, (centre as i64 + dx) as usize);
        (0..4).map(|ch| y.data()[(ch * n + r) * n + q].abs()).fold(0.0, f64::max)
    };
    for d in [-9, 9] {
        assert!(reach(d, 0) > 0.0 && reach(0, d) > 0.0 && reach(d, d) > 0.0);
    }
    for dy in -16i64..16 {
        for dx in -16i64..16 {
            if dy.abs() > 9 || dx.abs() > 9 {
                assert_eq!(reach(dy, dx), 0.0, "({dy}, {dx})");
            }
        }
    }
}

#[test]
fn extra_depthwise_adds_expanded_width_times_nine() {
    for c in [4, 8, 16] {
        let count = |extra: bool| {
            let mut ps = ParamStore::<f32>::new();
            GatedFfn::build(&mut Builder::new(&mut ps, &mut Rng8::seed_from_u64(0)), c, extra);
            ps.count()
        };
        assert_eq!(count(true) - count(false), 2 * c * 9);
    }
}

#[test]
fn lka_with_unit_attention_reduces_to_pointwise_maps() {
    let mut ps = ParamStore::new();
    let m = Lka::build(&mut Builder::new(&mut ps, &mut Rng8::seed_from_u64(0)), 4);
    randomize(&mut ps, 8);
    set(&mut ps, m.pw_attn.weight, |_| 0.0);
    set(&mut ps, m.pw_attn.bias.unwrap(), |_| 1.0);
    let x = rand(&[1, 4, 8, 8], 4);
    let y = run(&|ps, t, v| m.forward(ps, t, v), &ps, &x);
    let want = run(
        &|ps, t, v| {
            let u = m.pw_in.forward(ps, t, v)?;
            m.pw_out.forward(ps, t, u)
        },
        &ps,
        &x,
    );
    assert!(y.max_abs_diff(&want) < 1e-15);
}

#[test]
fn analytic_macs_match_instrumented_forward() {
    for (name, kind, opts) in variants() {
        for (h, w) in [(8, 8), (16, 8)] {
            let (block, ps) = build_block(kind, 4, &opts, 0);
            let x = rand(&[1, 4, h, w], 0);
            let (_, counted) = tensor::counter::measure(|| run(&|ps, t, v| block.forward(ps, t, v), &ps, &x));
            assert_eq!(counted, block.macs(h, w), "{name} {h}x{w}");
        }
    }
}

#[test]
fn dispam_is_cheaper_than_lka() {
    let build = |attention| {
        let opts = BlockOptions { attention, ..BlockOptions::default() };
        build_block(BlockKind::DBlock, 16, &opts, 0)
    };
    let (d, dp) = build(Attention::DiSpam);
    let (l, lp) = build(Attention::Lka);
    assert!(dp.count() < lp.count());
    assert!(d.macs(32, 32).conv < l.macs(32, 32).conv);
}

/// At a 1e-3 step the central difference itself is off by O(h²) on small,
/// curved components; the discrepancy must shrink fourfold per halving.
#[test]
fn finite_difference_discrepancy_is_second_order() {
    let (_, kind, opts) = variants().swap_remove(0);
    let (block, mut ps) = build_block(kind, 4, &opts, 1);
    randomize_init_scale(&mut ps, 11);
    let x = rand(&[1, 4, 8, 8], 1);
    let probe = rand(x.shape(), 1001);
    let errs: Vec<f64> = [2e-3, 1e-3, 5e-4, 2.5e-4]
        .iter()
        .map(|&h| {
            gradcheck::check_params(&ps, std::slice::from_ref(&x), h, |k, e| k == 0 && e == 156, |ps, t, v| {
                let y = block.forward(ps, t, v[0])?;
                let p = t.constant(probe.clone());
                t.mean(t.mul(y, p)?)
            })
            .unwrap()
            .max_rel_err
        })
        .collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.8..4.2).contains(&ratio), "{errs:?}");
    }
}

