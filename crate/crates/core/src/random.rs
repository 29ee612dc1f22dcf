//! Seeded random instances: Haar unitaries, Hermitian observables, states.
//!
//! All generators take an explicit RNG. `SeededRng` is ChaCha8, so a seed
//! reproduces the same instance on every platform.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{ComplexMatrix, DensityMatrix, HermitianOperator, C64};
use rand::SeedableRng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One step of the splitmix64 generator.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trial seed: `splitmix64(master ^ splitmix64(index))`.
///
/// Depends only on the master seed and the trial index, so serial and
/// parallel sweeps draw identical instances.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// Matrix of i.i.d. standard complex Gaussians (unit variance per entry).
pub fn ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<C64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    DMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re * s, im * s)
    })
}

/// Haar-distributed unitary: QR of a Ginibre matrix with the phases of
/// `diag(R)` moved into `Q`.
pub fn haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> ComplexMatrix {
    let qr = ginibre(dim, dim, rng).qr();
    let (mut q, r) = (qr.q(), qr.r());
    for k in 0..dim {
        let d = r[(k, k)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { C64::new(1.0, 0.0) };
        let mut col = q.column_mut(k);
        col *= phase;
    }
    ComplexMatrix::from_matrix_unchecked(q)
}

/// GUE-style observable `(G + G†)/2`.
pub fn random_hermitian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> HermitianOperator {
    let g = ginibre(dim, dim, rng);
    let h = (&g + g.adjoint()).scale(0.5);
    HermitianOperator::new(ComplexMatrix::from_matrix_unchecked(h)).expect("symmetrized matrix is Hermitian")
}

/// Full-rank mixed state `G G† / Tr(G G†)`.
pub fn random_density<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityMatrix {
    let g = ginibre(dim, dim, rng);
    let w = &g * g.adjoint();
    let tr = w.trace().re;
    DensityMatrix::new_unchecked((&w + w.adjoint()).scale(0.5 / tr))
}

/// Uniform point on the probability simplex with `n` vertices.
pub fn simplex_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haar_is_unitary() {
        let mut rng = seeded_rng(5);
        for d in 1..=6 {
            let u = haar_unitary(d, &mut rng);
            let gram = u.adjoint().matmul(&u).unwrap();
            assert!(gram.max_abs_diff(&ComplexMatrix::identity(d)) <= 1e-12);
        }
    }

    #[test]
    fn seeds_reproduce() {
        let a = haar_unitary(3, &mut seeded_rng(9));
        let b = haar_unitary(3, &mut seeded_rng(9));
        assert_eq!(a, b);
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }

    #[test]
    fn simplex_sums_to_one() {
        let w = simplex_weights(5, &mut seeded_rng(1));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(w.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn random_density_is_valid() {
        let rho = random_density(3, &mut seeded_rng(2));
        assert!(DensityMatrix::new(rho.matrix().clone()).is_ok());
    }
}
