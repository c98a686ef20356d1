//! Seed derivation and the few distributions the simulator samples from.
//!
//! Every random stream in a run is a `ChaCha8Rng` keyed by a seed derived
//! from the scenario seed and a stable tag, so streams never depend on the
//! order in which other components consume randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a tag into an independent seed.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(base) ^ tag.rotate_left(17) ^ 0xD1B5_4A32_D192_ED03)
}

/// FNV-1a of a label, for deriving seeds from names.
pub fn tag(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One Dirichlet draw. Zero concentration entries yield exact zeros; if
/// every gamma draw underflows the result is `None`.
pub fn dirichlet<R: rand::Rng + ?Sized>(rng: &mut R, alphas: &[f64]) -> Option<Vec<f64>> {
    let mut draws = Vec::with_capacity(alphas.len());
    for &a in alphas {
        if a <= 0.0 {
            draws.push(0.0);
        } else {
            let g = Gamma::new(a, 1.0).expect("positive shape");
            draws.push(g.sample(rng));
        }
    }
    let sum: f64 = draws.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return None;
    }
    Some(draws.into_iter().map(|x| x / sum).collect())
}

/// Flat Dirichlet(1, ..., 1) draw: a uniform point on the `n`-simplex.
pub fn uniform_simplex<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        if let Some(v) = dirichlet(rng, &vec![1.0; n]) {
            return v;
        }
    }
}
