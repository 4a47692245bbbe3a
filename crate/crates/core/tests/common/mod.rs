#![allow(dead_code)]

use meritfed::error::Result;
use meritfed::simplex::LossOracle;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `f(y) = sum_j a_j (y_j - c_j)^2`, an exact (population-style) oracle.
pub struct DiagQuadratic {
    pub scale: Vec<f64>,
    pub center: Vec<f64>,
}

impl DiagQuadratic {
    pub fn isotropic(center: Vec<f64>) -> Self {
        DiagQuadratic { scale: vec![1.0; center.len()], center }
    }
}

impl LossOracle for DiagQuadratic {
    fn size(&self) -> Option<usize> {
        None
    }

    fn eval(&self, y: &[f64], _: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        let mut v = 0.0;
        let mut g = Vec::with_capacity(y.len());
        for ((yi, ci), ai) in y.iter().zip(&self.center).zip(&self.scale) {
            let r = yi - ci;
            v += ai * r * r;
            g.push(2.0 * ai * r);
        }
        Ok((v, g))
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}
