//! Perron root of a nonnegative matrix.
//!
//! The support graph is split into strongly connected components; the
//! spectral radius is the largest Perron root among the irreducible diagonal
//! blocks. Inside an irreducible block the Perron vector is strictly
//! positive, so for any positive iterate `x` the Collatz-Wielandt quotients
//! `(Bx)_i / x_i` bracket the root from both sides. The iteration runs on
//! `B + cI` with `c` tracking the current estimate: the shift leaves the
//! Perron vector alone but makes the root strictly dominant in modulus, so
//! periodic (imprimitive) blocks converge instead of oscillating.
//!
//! A matrix whose support graph has no cycle is nilpotent; that case is
//! confirmed exactly by forming `m^n`. If the bracket fails to close within
//! the iteration budget, the Gelfand sequence `||m^k||^(1/k)` over
//! `k = 2, 4, ..., 2^20` is used instead.

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::Serialize;

use super::{LinalgError, Matrix};

const GELFAND_MAX_DOUBLINGS: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralOptions {
    /// Relative tolerance on the radius.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralMethod {
    PowerIteration,
    NilpotentDetected,
    GelfandFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralResult {
    pub radius: f64,
    pub iterations: usize,
    pub converged: bool,
    pub method: SpectralMethod,
    /// Relative width of the final bracket (power iteration) or relative
    /// change between the last two Gelfand estimates.
    pub residual: f64,
}

pub fn spectral_radius(m: &Matrix, opts: &SpectralOptions) -> Result<SpectralResult, LinalgError> {
    let n = m.require_square()?;
    if !(opts.tol > 0.0 && opts.tol.is_finite()) {
        return Err(LinalgError::BadTolerance(opts.tol));
    }
    m.check_nonnegative()?;

    let blocks = irreducible_blocks(m);
    if blocks.is_empty() {
        if is_nilpotent(m) {
            return Ok(SpectralResult {
                radius: 0.0,
                iterations: n,
                converged: true,
                method: SpectralMethod::NilpotentDetected,
                residual: 0.0,
            });
        }
        // Only reachable if the graph test and the exact power disagree,
        // which would mean underflow in m^n. Let Gelfand decide.
        return gelfand_radius(m, opts.tol, 0);
    }

    let mut radius: f64 = 0.0;
    let mut iterations = 0;
    let mut residual: f64 = 0.0;
    for idx in &blocks {
        let block = m.submatrix(idx, idx);
        match perron_root(&block, opts) {
            Some(r) => {
                iterations += r.iterations;
                if r.radius > radius {
                    radius = r.radius;
                }
                residual = residual.max(r.residual);
            }
            None => return gelfand_radius(m, opts.tol, opts.max_iter),
        }
    }
    Ok(SpectralResult {
        radius,
        iterations,
        converged: true,
        method: SpectralMethod::PowerIteration,
        residual,
    })
}

/// Index sets of the strongly connected components that carry a cycle
/// (size > 1, or a single vertex with a self-loop).
fn irreducible_blocks(m: &Matrix) -> Vec<Vec<usize>> {
    let n = m.rows();
    let mut g = DiGraph::<(), ()>::with_capacity(n, n * n);
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if m[(i, j)] > 0.0 {
                g.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    tarjan_scc(&g)
        .into_iter()
        .map(|comp| {
            let mut idx: Vec<usize> = comp.into_iter().map(|v| v.index()).collect();
            idx.sort_unstable();
            idx
        })
        .filter(|idx| idx.len() > 1 || m[(idx[0], idx[0])] > 0.0)
        .collect()
}

/// Exact test: products of nonnegative matrices cannot cancel, so `m^n == 0`
/// holds in floating point exactly when it holds over the reals, barring
/// underflow.
fn is_nilpotent(m: &Matrix) -> bool {
    let mut p = m.clone();
    for _ in 1..m.rows() {
        if p.is_zero() {
            return true;
        }
        p = p.matmul(m).expect("square");
    }
    p.is_zero()
}

/// Shifted power iteration with a Collatz-Wielandt bracket on an irreducible
/// nonnegative block. Returns `None` when the budget runs out or the iterate
/// degenerates.
fn perron_root(b: &Matrix, opts: &SpectralOptions) -> Option<SpectralResult> {
    let k = b.rows();
    let mut x = vec![1.0; k];
    let mut y = vec![0.0; k];
    for it in 1..=opts.max_iter {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for i in 0..k {
            let yi: f64 = b.row(i).iter().zip(&x).map(|(a, v)| a * v).sum();
            y[i] = yi;
            let q = yi / x[i];
            lo = lo.min(q);
            hi = hi.max(q);
        }
        if !(lo.is_finite() && hi.is_finite()) || hi <= 0.0 {
            return None;
        }
        let width = (hi - lo) / hi;
        if width <= opts.tol {
            return Some(SpectralResult {
                radius: 0.5 * (lo + hi),
                iterations: it,
                converged: true,
                method: SpectralMethod::PowerIteration,
                residual: width,
            });
        }
        let shift = 0.5 * (lo + hi);
        let mut top: f64 = 0.0;
        for i in 0..k {
            x[i] = y[i] + shift * x[i];
            top = top.max(x[i]);
        }
        for v in &mut x {
            *v /= top;
            if *v <= 0.0 || !v.is_finite() {
                return None;
            }
        }
    }
    None
}

/// Gelfand sequence `||m^(2^j)||_inf^(2^-j)` with log-scale bookkeeping so
/// large radii do not overflow.
pub(crate) fn gelfand_radius(
    m: &Matrix,
    tol: f64,
    prior_iterations: usize,
) -> Result<SpectralResult, LinalgError> {
    let norm = m.norm_inf();
    if norm == 0.0 {
        return Ok(SpectralResult {
            radius: 0.0,
            iterations: prior_iterations,
            converged: true,
            method: SpectralMethod::GelfandFallback,
            residual: 0.0,
        });
    }
    let mut p = m.scale(1.0 / norm);
    let mut log_norm = norm.ln();
    let mut estimate = norm;
    for j in 1..=GELFAND_MAX_DOUBLINGS {
        let sq = p.matmul(&p).expect("square");
        let sq_norm = sq.norm_inf();
        let iterations = prior_iterations + j as usize;
        if sq_norm == 0.0 {
            return Ok(SpectralResult {
                radius: 0.0,
                iterations,
                converged: true,
                method: SpectralMethod::GelfandFallback,
                residual: 0.0,
            });
        }
        log_norm = 2.0 * log_norm + sq_norm.ln();
        p = sq.scale(1.0 / sq_norm);
        let next = (log_norm / f64::powi(2.0, j as i32)).exp();
        let change = (next - estimate).abs() / next;
        estimate = next;
        if change < tol {
            return Ok(SpectralResult {
                radius: estimate,
                iterations,
                converged: true,
                method: SpectralMethod::GelfandFallback,
                residual: change,
            });
        }
    }
    Err(LinalgError::NotConverged {
        iterations: prior_iterations + GELFAND_MAX_DOUBLINGS as usize,
        estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rho(rows: &[&[f64]]) -> SpectralResult {
        let m = Matrix::from_rows(rows).unwrap();
        spectral_radius(&m, &SpectralOptions::default()).unwrap()
    }

    #[test]
    fn jordan_block_half() {
        let r = rho(&[&[0.5, 1.0], &[0.0, 0.5]]);
        assert!((r.radius - 0.5).abs() < 1e-12);
        assert!(r.converged);
    }

    #[test]
    fn identity_is_one() {
        let r = spectral_radius(&Matrix::identity(3), &SpectralOptions::default()).unwrap();
        assert_eq!(r.radius, 1.0);
    }

    #[test]
    fn symmetric_two_by_two_closed_form() {
        let r = rho(&[&[0.4, 0.2], &[0.2, 0.04]]);
        let exact = (0.44 + 0.2896f64.sqrt()) / 2.0;
        assert!((r.radius - exact).abs() < 1e-12, "{} vs {exact}", r.radius);
    }

    #[test]
    fn strictly_upper_triangular_is_nilpotent() {
        let m = Matrix::from_fn(4, 4, |i, j| if j > i { 1.0 + (i + j) as f64 } else { 0.0 });
        let r = spectral_radius(&m, &SpectralOptions::default()).unwrap();
        assert_eq!(r.radius, 0.0);
        assert_eq!(r.method, SpectralMethod::NilpotentDetected);
    }

    #[test]
    fn zero_matrix_is_nilpotent() {
        let r = spectral_radius(&Matrix::zeros(3, 3), &SpectralOptions::default()).unwrap();
        assert_eq!(r.radius, 0.0);
        assert_eq!(r.method, SpectralMethod::NilpotentDetected);
    }

    #[test]
    fn periodic_matrix_converges_with_shift() {
        // Cyclic with period 2 and unbalanced weights; plain power iteration
        // from the ones vector oscillates between 2 and 1/2.
        let r = rho(&[&[0.0, 2.0], &[0.5, 0.0]]);
        assert!((r.radius - 1.0).abs() < 1e-12);
        // Period 3 cycle with weights multiplying to 8.
        let r = rho(&[&[0.0, 4.0, 0.0], &[0.0, 0.0, 1.0], &[2.0, 0.0, 0.0]]);
        assert!((r.radius - 2.0).abs() < 1e-11);
    }

    #[test]
    fn reducible_takes_largest_block() {
        let r = rho(&[&[0.3, 5.0, 0.0], &[0.0, 0.7, 1.0], &[0.0, 0.0, 0.2]]);
        assert!((r.radius - 0.7).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        let rect = Matrix::zeros(2, 3);
        assert!(matches!(
            spectral_radius(&rect, &SpectralOptions::default()),
            Err(LinalgError::NotSquare { .. })
        ));
        let neg = Matrix::from_rows(&[[1.0, -1.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(
            spectral_radius(&neg, &SpectralOptions::default()),
            Err(LinalgError::Negative { .. })
        ));
        let opts = SpectralOptions {
            tol: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            spectral_radius(&Matrix::identity(2), &opts),
            Err(LinalgError::BadTolerance(_))
        ));
    }

    #[test]
    fn exhausted_budget_falls_back_to_gelfand() {
        // One power step leaves the bracket at [3, 4]. The Gelfand error
        // shrinks like 1/k, so only a loose tolerance is reachable.
        let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 1.0]]).unwrap();
        let opts = SpectralOptions {
            tol: 1e-5,
            max_iter: 1,
        };
        let r = spectral_radius(&m, &opts).unwrap();
        assert_eq!(r.method, SpectralMethod::GelfandFallback);
        assert!((r.radius - (1.0 + 6f64.sqrt())).abs() < 1e-4, "{}", r.radius);
    }

    #[test]
    fn gelfand_reports_non_convergence() {
        // Jordan block: the Gelfand sequence creeps down like k^(1/k).
        let m = Matrix::from_rows(&[[1.0, 1.0], [0.0, 1.0]]).unwrap();
        let err = gelfand_radius(&m, 1e-12, 0).unwrap_err();
        match err {
            LinalgError::NotConverged { estimate, .. } => {
                assert!(estimate > 1.0 && estimate < 1.001)
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
