use super::{LinalgError, Matrix};

/// Default bound on the rows (and columns) of any Kronecker result.
pub const DEFAULT_DIM_CAP: usize = 10_000;

pub fn kron(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    kron_capped(a, b, DEFAULT_DIM_CAP)
}

/// `a ⊗ b`: block `(i, j)` of the result is `a[i, j] * b`.
pub fn kron_capped(a: &Matrix, b: &Matrix, cap: usize) -> Result<Matrix, LinalgError> {
    let (m, n) = a.shape();
    let (q, r) = b.shape();
    let rows = m.checked_mul(q);
    let cols = n.checked_mul(r);
    match (rows, cols) {
        (Some(rows), Some(cols)) if rows <= cap && cols <= cap => Ok(Matrix::from_fn(
            rows,
            cols,
            |i, j| a[(i / q, j / r)] * b[(i % q, j % r)],
        )),
        _ => Err(LinalgError::DimensionCap {
            rows: rows.unwrap_or(usize::MAX),
            cols: cols.unwrap_or(usize::MAX),
            cap,
        }),
    }
}

pub fn kron_power(a: &Matrix, p: u32) -> Result<Matrix, LinalgError> {
    kron_power_capped(a, p, DEFAULT_DIM_CAP)
}

/// `a^{⊗p}` built left to right as `a^{⊗(p-1)} ⊗ a`.
pub fn kron_power_capped(a: &Matrix, p: u32, cap: usize) -> Result<Matrix, LinalgError> {
    if p == 0 {
        return Err(LinalgError::ZeroPower);
    }
    // Check the final size up front so nothing large is built before failing.
    let rows = (a.rows() as u128).checked_pow(p);
    let cols = (a.cols() as u128).checked_pow(p);
    match (rows, cols) {
        (Some(r), Some(c)) if r <= cap as u128 && c <= cap as u128 => {}
        _ => {
            let clamp = |v: Option<u128>| v.map_or(usize::MAX, |v| usize::try_from(v).unwrap_or(usize::MAX));
            return Err(LinalgError::DimensionCap {
                rows: clamp(rows),
                cols: clamp(cols),
                cap,
            });
        }
    }
    let mut out = a.clone();
    for _ in 1..p {
        out = kron_capped(&out, a, cap)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kron_identity() {
        let i2 = Matrix::identity(2);
        assert_eq!(kron(&i2, &i2).unwrap(), Matrix::identity(4));
    }

    #[test]
    fn expands_blocks() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let expected = Matrix::from_rows(&[
            [0.0, 1.0, 0.0, 2.0],
            [1.0, 0.0, 2.0, 0.0],
            [0.0, 3.0, 0.0, 4.0],
            [3.0, 0.0, 4.0, 0.0],
        ])
        .unwrap();
        assert_eq!(kron(&a, &b).unwrap(), expected);
    }

    #[test]
    fn rectangular_shapes() {
        let a = Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0], [10.0]]).unwrap();
        let k = kron(&a, &b).unwrap();
        assert_eq!(k.shape(), (2, 3));
        assert_eq!(k.to_rows(), vec![vec![1.0, 2.0, 3.0], vec![10.0, 20.0, 30.0]]);
    }

    #[test]
    fn power_one_is_identity_operation() {
        let a = Matrix::from_rows(&[[0.3, 1.2], [0.0, 7.0]]).unwrap();
        assert_eq!(kron_power(&a, 1).unwrap(), a);
        assert!(matches!(kron_power(&a, 0), Err(LinalgError::ZeroPower)));
    }

    #[test]
    fn power_two_entries() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 5.0]]).unwrap();
        let k = kron_power(&a, 2).unwrap();
        for i in 0..2 {
            for kk in 0..2 {
                for j in 0..2 {
                    for l in 0..2 {
                        assert_eq!(k[(2 * i + kk, 2 * j + l)], a[(i, j)] * a[(kk, l)]);
                    }
                }
            }
        }
    }

    #[test]
    fn cap_is_enforced() {
        let a = Matrix::identity(10);
        assert!(matches!(
            kron_power(&a, 5),
            Err(LinalgError::DimensionCap { rows: 100_000, .. })
        ));
        assert!(kron_power(&a, 4).is_ok());
        assert!(matches!(
            kron_capped(&a, &a, 99),
            Err(LinalgError::DimensionCap { cap: 99, .. })
        ));
        assert!(matches!(
            kron_power_capped(&Matrix::identity(2), 200, DEFAULT_DIM_CAP),
            Err(LinalgError::DimensionCap { .. })
        ));
    }
}
