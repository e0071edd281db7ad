use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// A clean test scene: a colour gradient, a few flat discs and rectangles
/// with hard edges, and a faint sinusoidal texture. Values lie in
/// `[0.05, 0.95]`.
pub fn procedural_image(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut col = || [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
    let (c0, c1) = (col(), col());
    let shapes: Vec<(bool, [f64; 4], [f64; 3])> = (0..5)
        .map(|_| {
            let disc = rng.random_bool(0.5);
            let geom = [
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.08..0.3),
                rng.random_range(0.08..0.3),
            ];
            let c = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            (disc, geom, c)
        })
        .collect();
    let freq = rng.random_range(3.0..9.0);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);

    let mut data = vec![0.0f32; 3 * h * w];
    for i in 0..h {
        for j in 0..w {
            let (y, x) = ((i as f64 + 0.5) / h as f64, (j as f64 + 0.5) / w as f64);
            let t = 0.5 * (x + y);
            let mut px = [0.0; 3];
            for c in 0..3 {
                px[c] = c0[c] * (1.0 - t) + c1[c] * t;
            }
            for (disc, g, c) in &shapes {
                let inside = if *disc {
                    (y - g[0]).powi(2) + (x - g[1]).powi(2) < g[2] * g[2]
                } else {
                    (y - g[0]).abs() < g[2] && (x - g[1]).abs() < g[3]
                };
                if inside {
                    px = *c;
                }
            }
            let wave = 0.05 * (freq * std::f64::consts::TAU * (x * angle.cos() + y * angle.sin())).sin();
            for c in 0..3 {
                data[c * h * w + i * w + j] = (0.05 + 0.9 * (px[c] + wave).clamp(0.0, 1.0)) as f32;
            }
        }
    }
    Tensor::new(&[1, 3, h, w], data).expect("shape matches data")
}
