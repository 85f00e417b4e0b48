#![allow(dead_code)]

use diffreg::field::{ScalarField, VectorField};
use diffreg::{Grid3, Real};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_field(g: Grid3, seed: u64) -> ScalarField {
    let mut r = rng(seed);
    ScalarField::from_vec(g, (0..g.len()).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_vector(g: Grid3, seed: u64) -> VectorField {
    VectorField::from_components([
        random_field(g, seed),
        random_field(g, seed.wrapping_add(101)),
        random_field(g, seed.wrapping_add(202)),
    ])
    .unwrap()
}

/// Random trigonometric polynomial with wavenumbers up to `kmax` per axis.
pub fn smooth_field(g: Grid3, seed: u64, kmax: i32) -> ScalarField {
    let mut r = rng(seed);
    let modes: Vec<([Real; 3], Real, Real)> = (0..6)
        .map(|_| {
            let k = [0; 3].map(|_: i32| r.gen_range(-kmax..=kmax) as Real);
            (k, r.gen_range(-1.0..1.0), r.gen_range(0.0..diffreg::TWO_PI))
        })
        .collect();
    ScalarField::from_fn(g, |x, y, z| {
        modes
            .iter()
            .map(|(k, a, ph)| a * (k[0] * x + k[1] * y + k[2] * z + ph).sin())
            .sum()
    })
}

pub fn smooth_vector(g: Grid3, seed: u64, kmax: i32) -> VectorField {
    VectorField::from_components([
        smooth_field(g, seed, kmax),
        smooth_field(g, seed.wrapping_add(7), kmax),
        smooth_field(g, seed.wrapping_add(13), kmax),
    ])
    .unwrap()
}

pub fn max_diff(a: &[Real], b: &[Real]) -> Real {
    a.iter()
        .zip(b)
        .fold(0.0, |m: Real, (x, y)| m.max((x - y).abs()))
}

pub fn max_abs(a: &[Real]) -> Real {
    a.iter().fold(0.0, |m: Real, x| m.max(x.abs()))
}

pub fn vec_max_diff(a: &VectorField, b: &VectorField) -> Real {
    (0..3)
        .map(|d| max_diff(a.comp(d).values(), b.comp(d).values()))
        .fold(0.0, Real::max)
}
