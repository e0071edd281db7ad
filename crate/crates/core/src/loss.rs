//! Training objective: `λp·L_pixel + λpe·L_percep + λed·L_edge + L_lol`.
//! Every norm is a mean, so weights carry over between image sizes.

use crate::autodiff::{Tape, Var};
use crate::error::{invalid, shape_err, Result};
use crate::model::SCALE;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub pixel: f64,
    pub perceptual: f64,
    pub edge: f64,
    /// The intermediate term enters with weight 1 when enabled.
    pub lol: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pixel: 1.0,
            perceptual: 1e-2,
            edge: 50.0,
            lol: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("pixel", self.pixel), ("perceptual", self.perceptual), ("edge", self.edge)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid("loss weights", format!("{name} weight {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Perceptual distance between reference and prediction, recorded on the tape.
pub type Perceptual<'a, T> = &'a dyn Fn(&Tape<T>, Var, Var) -> Result<Var>;

/// Scalar loss components; `perceptual` is `None` without a hook.
#[derive(Clone, Copy, Debug)]
pub struct Components<V> {
    pub pixel: V,
    pub perceptual: Option<V>,
    pub edge: V,
    pub lol: V,
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub parts: Components<Var>,
}

/// Mean absolute error.
pub fn l_pixel<T: Scalar>(tape: &Tape<T>, x: Var, xhat: Var) -> Result<Var> {
    tape.mean_abs(tape.sub(x, xhat)?)
}

/// Mean squared difference of the forward-difference gradient fields,
/// averaged over both components.
pub fn l_edge<T: Scalar>(tape: &Tape<T>, x: Var, xhat: Var) -> Result<Var> {
    let d = tape.sub(x, xhat)?;
    let gx = tape.mean_sq(tape.diff_x(d)?)?;
    let gy = tape.mean_sq(tape.diff_y(d)?)?;
    tape.scale(tape.add(gx, gy)?, 0.5)
}

/// L1 between the bilinear ↓8 reference and the intermediate output.
pub fn l_lol<T: Scalar>(tape: &Tape<T>, x: Var, low: Var) -> Result<Var> {
    let [_, _, h, w] = tape.value(x)?.dims4()?;
    let [_, _, lh, lw] = tape.value(low)?.dims4()?;
    if (lh, lw) != (h / SCALE, w / SCALE) || h % SCALE != 0 || w % SCALE != 0 {
        return Err(shape_err(
            "l_lol",
            format!("intermediate is {lh}x{lw}, reference {h}x{w} needs {}x{}", h / SCALE, w / SCALE),
        ));
    }
    let down = tape.bilinear_resize(x, lh, lw)?;
    l_pixel(tape, down, low)
}

/// `λp·pixel + λpe·perceptual + λed·edge + lol`, summed in that order.
/// Terms with zero weight are left out.
pub fn weighted_sum<T: Scalar>(tape: &Tape<T>, c: &Components<Var>, w: &LossWeights) -> Result<Var> {
    w.validate()?;
    let mut terms = vec![(c.pixel, w.pixel)];
    if let Some(p) = c.perceptual {
        terms.push((p, w.perceptual));
    }
    terms.push((c.edge, w.edge));
    if w.lol {
        terms.push((c.lol, 1.0));
    }
    let mut total: Option<Var> = None;
    for (v, k) in terms.into_iter().filter(|&(_, k)| k != 0.0) {
        let s = if k == 1.0 { v } else { tape.scale(v, k)? };
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => tape.scale(c.pixel, 0.0),
    }
}

/// Full objective for reference `x`, prediction `xhat` and intermediate `low`.
pub fn total_loss<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    xhat: Var,
    low: Var,
    weights: &LossWeights,
    perceptual: Option<Perceptual<'_, T>>,
) -> Result<LossTerms> {
    weights.validate()?;
    let parts = Components {
        pixel: l_pixel(tape, x, xhat)?,
        perceptual: perceptual.map(|f| f(tape, x, xhat)).transpose()?,
        edge: l_edge(tape, x, xhat)?,
        lol: l_lol(tape, x, low)?,
    };
    Ok(LossTerms {
        total: weighted_sum(tape, &parts, weights)?,
        parts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use crate::tensor::{self, Tensor};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::rand_uniform(shape, 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn eval(f: impl Fn(&Tape<f64>, Var, Var) -> Result<Var>, a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
        let t = Tape::new();
        let (a, b) = (t.constant(a.clone()), t.constant(b.clone()));
        let v = f(&t, a, b)?;
        let r = t.value(v)?.item();
        Ok(r)
    }

    #[test]
    fn pixel_examples_and_loop_oracle() {
        let x = rand(&[2, 3, 5, 4], 1);
        assert_eq!(eval(l_pixel, &x, &x).unwrap(), 0.0);
        let off = x.map(|v| v + 0.1);
        assert!((eval(l_pixel, &x, &off).unwrap() - 0.1).abs() < 1e-12);
        let y = rand(&[2, 3, 5, 4], 2);
        let mut acc = 0.0;
        for i in 0..x.len() {
            acc += (x.data()[i] - y.data()[i]).abs();
        }
        assert!((eval(l_pixel, &x, &y).unwrap() - acc / x.len() as f64).abs() < 1e-14);
        assert!(eval(l_pixel, &x, &rand(&[2, 3, 4, 5], 2)).is_err());
    }

    #[test]
    fn edge_examples() {
        let x = rand(&[1, 3, 6, 6], 3);
        assert_eq!(eval(l_edge, &x, &x).unwrap(), 0.0);
        let a = Tensor::full(&[1, 2, 4, 4], 0.3);
        let b = Tensor::full(&[1, 2, 4, 4], 0.9);
        assert_eq!(eval(l_edge, &a, &b).unwrap(), 0.0);

        // Step at 3 vs step at 4 on eight samples: gradient fields 1 at j=2
        // and 1 at j=3, difference ±1 at two of the 8 x-positions, y-field 0.
        let step = |at: usize| Tensor::new(&[1, 1, 1, 8], (0..8).map(|j| if j >= at { 1.0 } else { 0.0 }).collect()).unwrap();
        let v = eval(l_edge, &step(3), &step(4)).unwrap();
        assert!((v - 0.5 * (2.0 / 8.0)).abs() < 1e-15, "{v}");
    }

    #[test]
    fn lol_examples_and_composition_oracle() {
        let x = rand(&[1, 3, 16, 24], 4);
        let down = tensor::bilinear_resize(&x, 2, 3).unwrap();
        assert_eq!(eval(l_lol, &x, &down).unwrap(), 0.0);
        let shifted = down.map(|v| v + 0.2);
        assert!((eval(l_lol, &x, &shifted).unwrap() - 0.2).abs() < 1e-12);

        let low = rand(&[1, 3, 2, 3], 5);
        let mut acc = 0.0;
        for (a, b) in down.data().iter().zip(low.data()) {
            acc += (a - b).abs();
        }
        assert!((eval(l_lol, &x, &low).unwrap() - acc / low.len() as f64).abs() < 1e-14);
        assert!(eval(l_lol, &x, &rand(&[1, 3, 2, 2], 5)).is_err());
        assert!(eval(l_lol, &rand(&[1, 3, 12, 16], 1), &rand(&[1, 3, 1, 2], 5)).is_err());
    }

    fn components(t: &Tape<f64>, v: [f64; 4]) -> Components<Var> {
        let s = |x: f64| t.constant(Tensor::scalar(x));
        Components {
            pixel: s(v[0]),
            perceptual: Some(s(v[1])),
            edge: s(v[2]),
            lol: s(v[3]),
        }
    }

    #[test]
    fn weighted_sum_uses_published_weights() {
        let t = Tape::new();
        let (a, b, c, d) = (0.137, 2.41, 0.0093, 0.058);
        let total = weighted_sum(&t, &components(&t, [a, b, c, d]), &LossWeights::default()).unwrap();
        let want = 1.0 * a + 1e-2 * b + 50.0 * c + d;
        assert!((t.value(total).unwrap().item() - want).abs() <= 1e-12);
        let zero = weighted_sum(&t, &components(&t, [0.0; 4]), &LossWeights::default()).unwrap();
        assert_eq!(t.value(zero).unwrap().item(), 0.0);
    }

    #[test]
    fn negative_weights_are_rejected() {
        let t = Tape::new();
        let w = LossWeights { edge: -1.0, ..LossWeights::default() };
        assert!(weighted_sum(&t, &components(&t, [1.0; 4]), &w).is_err());
        let w = LossWeights { pixel: f64::NAN, ..LossWeights::default() };
        assert!(w.validate().is_err());
    }

    fn totals(hook: Option<Perceptual<'_, f64>>, w: &LossWeights) -> (f64, [f64; 3]) {
        let t = Tape::new();
        let x = t.constant(rand(&[1, 3, 16, 16], 6));
        let xhat = t.constant(rand(&[1, 3, 16, 16], 7));
        let low = t.constant(rand(&[1, 3, 2, 2], 8));
        let r = total_loss(&t, x, xhat, low, w, hook).unwrap();
        let v = |v: Var| t.value(v).unwrap().item();
        (v(r.total), [v(r.parts.pixel), v(r.parts.edge), v(r.parts.lol)])
    }

    #[test]
    fn absent_hook_equals_zero_hook() {
        let zero = |t: &Tape<f64>, x: Var, _: Var| t.scale(t.mean(x)?, 0.0);
        let w = LossWeights::default();
        assert_eq!(totals(None, &w).0, totals(Some(&zero), &w).0);
        let (total, [p, e, l]) = totals(None, &w);
        assert!((total - (p + 50.0 * e + l)).abs() < 1e-12);
    }

    #[test]
    fn pixel_only_weights_give_the_pixel_term() {
        let w = LossWeights { pixel: 1.0, perceptual: 0.0, edge: 0.0, lol: false };
        let (total, [p, _, _]) = totals(None, &w);
        assert_eq!(total, p);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn losses_are_nonnegative_and_linear_in_weights(
            seed in 0u64..1000,
            k in 0.0f64..10.0,
            which in 0usize..3,
        ) {
            let t = Tape::new();
            let c = components(&t, [0.3, 0.7, 0.011, 0.05]);
            let mut w = LossWeights::default();
            let base = t.value(weighted_sum(&t, &c, &w).unwrap()).unwrap().item();
            let (slot, part) = match which {
                0 => (&mut w.pixel, 0.3),
                1 => (&mut w.perceptual, 0.7),
                _ => (&mut w.edge, 0.011),
            };
            let old = *slot;
            *slot = old + k;
            let moved = t.value(weighted_sum(&t, &c, &w).unwrap()).unwrap().item();
            prop_assert!((moved - base - k * part).abs() < 1e-12);

            let x = rand(&[1, 3, 8, 8], seed);
            let y = rand(&[1, 3, 8, 8], seed + 1);
            for f in [l_pixel::<f64>, l_edge] {
                prop_assert!(eval(f, &x, &y).unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn losses_pass_gradient_checks() {
        for seed in 0..3 {
            let x = rand(&[1, 3, 8, 8], 10 + seed);
            let xhat = rand(&[1, 3, 8, 8], 20 + seed);
            let low = rand(&[1, 3, 1, 1], 30 + seed);
            let r = gradcheck::check(&[x, xhat, low], 1e-4, |t, v| {
                Ok(total_loss(t, v[0], v[1], v[2], &LossWeights::default(), None)?.total)
            })
            .unwrap();
            assert!(r.max_rel_err <= 1e-4 && r.skipped == 0, "seed {seed}: {r:?}");
        }
    }
}
