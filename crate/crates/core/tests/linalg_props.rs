use nalgebra::DMatrix;
use patience::linalg::{assemble_companion, isoradial_reduce, kron, spectral_radius, SpectralOptions};
use patience::Matrix;
use proptest::prelude::*;

fn rho(m: &Matrix) -> f64 {
    spectral_radius(m, &SpectralOptions::default()).unwrap().radius
}

// Largest eigenvalue modulus from a Schur decomposition.
fn eig_rho(m: &Matrix) -> f64 {
    let n = m.rows();
    let d = DMatrix::from_row_slice(n, n, m.as_slice());
    d.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn entry() -> impl Strategy<Value = f64> {
    prop_oneof![1 => Just(0.0), 3 => 0.0..1.0f64]
}

fn nonneg(n: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(entry(), n * n).prop_map(move |v| Matrix::new(n, n, v).unwrap())
}

fn square(max: usize) -> impl Strategy<Value = Matrix> {
    (1..=max).prop_flat_map(nonneg)
}

fn real(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0..2.0f64, rows * cols).prop_map(move |v| Matrix::new(rows, cols, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn radius_matches_eigensolver(m in square(6)) {
        let expected = eig_rho(&m);
        let got = rho(&m);
        prop_assert!((got - expected).abs() <= 1e-8 * expected.max(1.0), "{got} vs {expected} for {m:?}");
    }

    #[test]
    fn radius_is_monotone((a, extra) in (1..=5usize).prop_flat_map(|n| (nonneg(n), nonneg(n)))) {
        let b = a.add(&extra).unwrap();
        prop_assert!(rho(&a) <= rho(&b) * (1.0 + 1e-10) + 1e-12);
    }

    #[test]
    fn reduction_preserves_radius(
        (m, mask) in (2..=6usize).prop_flat_map(|n| (nonneg(n), prop::collection::vec(any::<bool>(), n)))
    ) {
        let s: Vec<usize> = (0..m.rows()).filter(|i| mask[*i]).collect();
        prop_assume!(!s.is_empty() && s.len() < m.rows());
        let r = rho(&m);
        prop_assume!(r > 0.0);
        if let Ok(reduced) = isoradial_reduce(&m, &s) {
            prop_assume!(reduced.as_slice().iter().all(|v| v.is_finite()));
            let rr = eig_rho(&reduced);
            prop_assert!((rr - r).abs() <= 1e-6 * r.max(1.0), "reduced {rr} vs {r}");
        }
    }

    #[test]
    fn kron_is_bilinear(
        a in real(2, 3), b in real(2, 3), c in real(3, 2), s in -3.0..3.0f64, t in -3.0..3.0f64
    ) {
        let mut mix = a.scale(s);
        mix.axpy(t, &b).unwrap();
        let lhs = kron(&mix, &c).unwrap();
        let mut rhs = kron(&a, &c).unwrap().scale(s);
        rhs.axpy(t, &kron(&b, &c).unwrap()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);

        let lhs = kron(&c, &mix).unwrap();
        let mut rhs = kron(&c, &a).unwrap().scale(s);
        rhs.axpy(t, &kron(&c, &b).unwrap()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
    }

    #[test]
    fn kron_mixed_product(a in real(2, 3), b in real(3, 2), c in real(3, 2), d in real(2, 2)) {
        let lhs = kron(&a, &b).unwrap().matmul(&kron(&c, &d).unwrap()).unwrap();
        let rhs = kron(&a.matmul(&c).unwrap(), &b.matmul(&d).unwrap()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-11);
    }

    #[test]
    fn kron_square_radius(a in square(4)) {
        let r = rho(&a);
        let r2 = rho(&kron(&a, &a).unwrap());
        prop_assert!((r2 - r * r).abs() <= 1e-9 * (r * r).max(1.0));
    }

    #[test]
    fn companion_reduces_to_weighted_block_sum(
        blocks in (1..=3usize, 1..=4usize).prop_flat_map(|(n, len)| prop::collection::vec(nonneg(n), len))
    ) {
        prop_assume!(blocks.len() > 1);
        let n = blocks[0].rows();
        let c = assemble_companion(&blocks).unwrap();
        let r = rho(&c);
        prop_assume!(r > 1e-3);
        let first: Vec<usize> = (0..n).collect();
        let reduced = isoradial_reduce(&c, &first).unwrap();
        let mut expected = Matrix::zeros(n, n);
        for (l, b) in blocks.iter().enumerate() {
            expected.axpy(r.powi(-(l as i32)), b).unwrap();
        }
        let scale = expected.max_abs().max(1.0);
        prop_assert!(reduced.max_abs_diff(&expected) <= 1e-8 * scale, "{reduced:?} vs {expected:?}");
    }
}
