//! Companion assembly, linear solves, and the isoradial (Perron complement)
//! reduction `I_S(M) = M_SS - M_SS' (M_S'S' - rho(M) I)^{-1} M_S'S`.

use super::spectral::{spectral_radius, SpectralOptions};
use super::{LinalgError, Matrix};

/// Pivots smaller than this fraction of the pivot row's largest original
/// entry are treated as zero.
const SINGULAR_RATIO: f64 = 1e-12;

/// Solves `a X = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    let n = a.require_square()?;
    if b.rows() != n {
        return Err(LinalgError::ShapeMismatch {
            op: "solve",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let m = b.cols();
    let mut lu = a.to_rows();
    let mut rhs = b.to_rows();
    let scale: Vec<f64> = lu
        .iter()
        .map(|r| r.iter().fold(0.0f64, |s, v| s.max(v.abs())))
        .collect();
    let mut row_scale = scale;

    for col in 0..n {
        let (piv, piv_abs) = (col..n)
            .map(|r| (r, lu[r][col].abs()))
            .fold((col, -1.0), |best, cand| if cand.1 > best.1 { cand } else { best });
        if piv_abs == 0.0 || piv_abs < SINGULAR_RATIO * row_scale[piv] {
            return Err(LinalgError::Singular {
                column: col,
                pivot: lu[piv][col],
            });
        }
        lu.swap(col, piv);
        rhs.swap(col, piv);
        row_scale.swap(col, piv);
        let p = lu[col][col];
        for r in col + 1..n {
            let f = lu[r][col] / p;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                lu[r][c] -= f * lu[col][c];
            }
            for c in 0..m {
                rhs[r][c] -= f * rhs[col][c];
            }
        }
    }
    let mut x = vec![vec![0.0; m]; n];
    for r in (0..n).rev() {
        for c in 0..m {
            let mut s = rhs[r][c];
            for k in r + 1..n {
                s -= lu[r][k] * x[k][c];
            }
            x[r][c] = s / lu[r][r];
        }
    }
    Matrix::from_rows(&x)
}

/// Isoradial reduction over the (0-based) index set `s`. The spectral radius
/// is computed first; `m` must therefore be nonnegative.
pub fn isoradial_reduce(m: &Matrix, s: &[usize]) -> Result<Matrix, LinalgError> {
    let opts = SpectralOptions::default();
    let rho = spectral_radius(m, &opts)?.radius;
    let n = m.require_square()?;
    let keep = validate_index_set(n, s)?;
    let rest: Vec<usize> = (0..n).filter(|i| !keep[*i]).collect();
    // For nonnegative `m` the complement's radius is at most `rho`; at
    // equality `rho I - M_rest` is singular, though rounding may hide it.
    let complement = spectral_radius(&m.submatrix(&rest, &rest), &opts)?.radius;
    if complement >= rho * (1.0 - 1e-9) {
        return Err(LinalgError::ComplementRadius { radius: rho, complement });
    }
    isoradial_reduce_with_radius(m, s, rho)
}

/// Same as [`isoradial_reduce`] with the spectral radius supplied by the
/// caller. Any real square matrix is accepted.
pub fn isoradial_reduce_with_radius(
    m: &Matrix,
    s: &[usize],
    rho: f64,
) -> Result<Matrix, LinalgError> {
    let n = m.require_square()?;
    let keep = validate_index_set(n, s)?;
    let rest: Vec<usize> = (0..n).filter(|i| !keep[*i]).collect();

    let m_ss = m.submatrix(s, s);
    let m_sr = m.submatrix(s, &rest);
    let m_rs = m.submatrix(&rest, s);
    let shifted = m
        .submatrix(&rest, &rest)
        .sub(&Matrix::identity(rest.len()).scale(rho))?;
    let x = solve(&shifted, &m_rs)?;
    m_ss.sub(&m_sr.matmul(&x)?)
}

fn validate_index_set(n: usize, s: &[usize]) -> Result<Vec<bool>, LinalgError> {
    let bad = |reason: String| LinalgError::BadIndexSet { n, reason };
    if s.is_empty() {
        return Err(bad("empty".into()));
    }
    let mut keep = vec![false; n];
    for &i in s {
        if i >= n {
            return Err(bad(format!("index {i} out of range")));
        }
        if keep[i] {
            return Err(bad(format!("index {i} repeated")));
        }
        keep[i] = true;
    }
    if s.len() == n {
        return Err(bad("set covers every index".into()));
    }
    Ok(keep)
}

/// Block companion matrix with first block row `[A_0 ... A_L]` and identity
/// blocks on the block subdiagonal.
pub fn assemble_companion(blocks: &[Matrix]) -> Result<Matrix, LinalgError> {
    let first = blocks.first().ok_or(LinalgError::NoBlocks)?;
    let n = first.require_square()?;
    for b in blocks {
        if b.shape() != (n, n) {
            return Err(LinalgError::ShapeMismatch {
                op: "assemble_companion",
                left: (n, n),
                right: b.shape(),
            });
        }
    }
    let size = n * blocks.len();
    Ok(Matrix::from_fn(size, size, |i, j| {
        let (bi, ii) = (i / n, i % n);
        let (bj, jj) = (j / n, j % n);
        if bi == 0 {
            blocks[bj][(ii, jj)]
        } else if bj + 1 == bi && ii == jj {
            1.0
        } else {
            0.0
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rho(m: &Matrix) -> f64 {
        spectral_radius(m, &SpectralOptions::default()).unwrap().radius
    }

    #[test]
    fn solve_small_system() {
        let a = Matrix::from_rows(&[[0.0, 2.0], [1.0, 1.0]]).unwrap();
        let b = Matrix::from_rows(&[[4.0], [3.0]]).unwrap();
        let x = solve(&a, &b).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((x[(1, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn solve_detects_singular() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
        let b = Matrix::identity(2);
        assert!(matches!(solve(&a, &b), Err(LinalgError::Singular { .. })));
    }

    #[test]
    fn diagonal_reduction_keeps_block() {
        let m = Matrix::diag(&[2.0, 1.0]);
        let r = isoradial_reduce(&m, &[0]).unwrap();
        assert_eq!(r.to_rows(), vec![vec![2.0]]);
    }

    #[test]
    fn reduction_fails_when_shifted_block_singular() {
        // Removing index 0 leaves the 1x1 block [2] = rho(M) on the diagonal.
        let m = Matrix::diag(&[2.0, 1.0]);
        assert!(matches!(
            isoradial_reduce(&m, &[1]),
            Err(LinalgError::ComplementRadius { .. })
        ));
    }

    #[test]
    fn reduction_rejects_complement_carrying_the_radius() {
        // rho(M) lives entirely in the block on indices 1 and 2, and no
        // entry links it to index 0, so rounding leaves the pivot nonzero.
        let m = Matrix::from_rows(&[
            [0.0, 0.0, 0.0],
            [0.0, 0.0, 0.5465722617202139],
            [0.0, 0.24289798949206026, 0.9969217666660914],
        ])
        .unwrap();
        assert!(matches!(
            isoradial_reduce(&m, &[0]),
            Err(LinalgError::ComplementRadius { .. })
        ));
    }

    #[test]
    fn index_set_validation() {
        let m = Matrix::identity(3);
        for bad in [&[][..], &[0, 1, 2], &[3], &[1, 1]] {
            assert!(matches!(
                isoradial_reduce_with_radius(&m, bad, 2.0),
                Err(LinalgError::BadIndexSet { .. })
            ));
        }
    }

    #[test]
    fn reduction_preserves_radius_on_positive_matrix() {
        let m = Matrix::from_rows(&[[0.2, 0.5, 0.1], [0.3, 0.1, 0.7], [0.4, 0.6, 0.2]]).unwrap();
        let r = isoradial_reduce(&m, &[0, 2]).unwrap();
        assert_eq!(r.shape(), (2, 2));
        // rho(M) exceeds rho of the removed block, so the complement stays
        // nonnegative.
        assert!(r.is_nonnegative());
        assert!((rho(&r) - rho(&m)).abs() < 1e-10);
    }

    #[test]
    fn companion_without_delay_is_the_block() {
        let a = Matrix::from_rows(&[[0.1, 0.2], [0.3, 0.4]]).unwrap();
        assert_eq!(assemble_companion(std::slice::from_ref(&a)).unwrap(), a);
    }

    #[test]
    fn companion_layout() {
        let a0 = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let a1 = Matrix::from_rows(&[[5.0, 6.0], [7.0, 8.0]]).unwrap();
        let c = assemble_companion(&[a0, a1]).unwrap();
        assert_eq!(
            c.to_rows(),
            vec![
                vec![1.0, 2.0, 5.0, 6.0],
                vec![3.0, 4.0, 7.0, 8.0],
                vec![1.0, 0.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0, 0.0],
            ]
        );
    }

    #[test]
    fn zero_blocks_give_nilpotent_companion() {
        let z = Matrix::zeros(2, 2);
        let c = assemble_companion(&[z.clone(), z.clone(), z]).unwrap();
        assert_eq!(rho(&c), 0.0);
    }

    #[test]
    fn companion_rejects_mismatched_blocks() {
        let r = assemble_companion(&[Matrix::zeros(2, 2), Matrix::zeros(3, 3)]);
        assert!(matches!(r, Err(LinalgError::ShapeMismatch { .. })));
        assert!(matches!(assemble_companion(&[]), Err(LinalgError::NoBlocks)));
        assert!(matches!(
            assemble_companion(&[Matrix::zeros(2, 3)]),
            Err(LinalgError::NotSquare { .. })
        ));
    }
}
