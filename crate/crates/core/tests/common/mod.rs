#![allow(dead_code)]

use gseal_core::gaussians::{Gaussian, GaussianCloud};
use gseal_core::renderer::Camera;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_unit_quat(rng: &mut impl Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.1 {
            return q.map(|v| v / n);
        }
    }
}

pub fn random_gaussian(rng: &mut impl Rng) -> Gaussian {
    Gaussian {
        position: std::array::from_fn(|_| rng.random_range(-0.8..0.8)),
        rotation: random_unit_quat(rng),
        scale: std::array::from_fn(|_| rng.random_range(0.03..0.25)),
        opacity: rng.random_range(0.2..0.95),
        color: std::array::from_fn(|_| rng.random_range(0.0..1.0)),
    }
}

pub fn random_cloud(seed: u64, n: usize) -> GaussianCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GaussianCloud::new((0..n).map(|_| random_gaussian(&mut rng)).collect())
}

pub fn orbit_camera(seed: u64, size: usize) -> Camera {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let az: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let el: f64 = rng.random_range(-0.4..0.4);
    let r = 3.0;
    let eye = [r * el.cos() * az.sin(), r * el.sin(), r * el.cos() * az.cos()];
    Camera::look_at(eye, [0.0; 3], size as f64 * 1.1, size, size).unwrap()
}
