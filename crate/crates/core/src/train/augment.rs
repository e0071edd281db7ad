use rand::Rng;

use crate::error::Result;
use crate::tensor::{self, Scalar, Tensor};

/// One of the eight flip/rotation symmetries: mirror left-right, then
/// top-bottom, then rotate counter-clockwise by `quarter_turns`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Augment {
    pub flip_h: bool,
    pub flip_v: bool,
    pub quarter_turns: u8,
}

impl Augment {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            flip_h: rng.random_bool(0.5),
            flip_v: rng.random_bool(0.5),
            quarter_turns: rng.random_range(0..4),
        }
    }

    pub fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut t = x.clone();
        if self.flip_h {
            t = tensor::flip_h(&t)?;
        }
        if self.flip_v {
            t = tensor::flip_v(&t)?;
        }
        tensor::rot90(&t, self.quarter_turns as usize)
    }
}

/// Apply the same random symmetry to a degraded/clean pair.
pub fn augment<T: Scalar, R: Rng + ?Sized>(
    y: &Tensor<T>,
    x: &Tensor<T>,
    rng: &mut R,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let a = Augment::draw(rng);
    Ok((a.apply(y)?, a.apply(x)?))
}
