//! Map families, switching laws, and Lipschitz comparison matrices.
//!
//! Every map here has the form `x -> L x + W tanh(x) + b` on `R^n`. Its
//! partial derivatives are `l_ij + w_ij sech^2(x_j)` with `sech^2` ranging
//! over `(0, 1]`, so the entrywise smallest Lipschitz matrix is
//! `max(|l_ij|, |l_ij + w_ij|)`.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};

/// Probability vectors must sum to one within this tolerance.
pub const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("{what}: expected dimension {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("switched system needs at least one map")]
    NoMaps,
    #[error("{count} weights given for {maps} maps")]
    WeightCount { count: usize, maps: usize },
    #[error("weight {index} is {value}, expected a finite nonnegative number")]
    BadWeight { index: usize, value: f64 },
    #[error("weights sum to {sum}, expected 1")]
    WeightSum { sum: f64 },
    #[error("interval ({row}, {col}) has lower bound {lower} above upper bound {upper}")]
    InvertedInterval {
        row: usize,
        col: usize,
        lower: f64,
        upper: f64,
    },
    #[error("fixed-point iteration did not converge in {iterations} iterations (residual {residual:e})")]
    FixedPointNotConverged { iterations: usize, residual: f64 },
    #[error("no shared fixed point: map {map} has residual {residual:e} at the candidate point")]
    NoSharedFixedPoint {
        map: usize,
        residual: f64,
        point: Vec<f64>,
    },
}

/// `x -> linear * x + gain * tanh(x) + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSpec {
    linear: Matrix,
    gain: Matrix,
    bias: Vec<f64>,
}

impl MapSpec {
    pub fn new(linear: Matrix, gain: Matrix, bias: Vec<f64>) -> Result<Self, SystemError> {
        let n = linear.require_square()?;
        if gain.shape() != (n, n) {
            return Err(SystemError::Dimension {
                what: "gain matrix",
                expected: n,
                actual: gain.rows().max(gain.cols()),
            });
        }
        if bias.len() != n {
            return Err(SystemError::Dimension {
                what: "bias vector",
                expected: n,
                actual: bias.len(),
            });
        }
        linear.check_finite()?;
        gain.check_finite()?;
        if let Some(k) = bias.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NotFinite { row: k, col: 0 }.into());
        }
        Ok(Self { linear, gain, bias })
    }

    /// `x -> gain * tanh(x)`.
    pub fn tanh_only(gain: Matrix) -> Result<Self, SystemError> {
        let n = gain.require_square()?;
        Self::new(Matrix::zeros(n, n), gain, vec![0.0; n])
    }

    /// `x -> linear * x + bias`.
    pub fn affine(linear: Matrix, bias: Vec<f64>) -> Result<Self, SystemError> {
        let n = linear.require_square()?;
        Self::new(linear, Matrix::zeros(n, n), bias)
    }

    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    pub fn linear(&self) -> &Matrix {
        &self.linear
    }

    pub fn gain(&self) -> &Matrix {
        &self.gain
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, SystemError> {
        if x.len() != self.dim() {
            return Err(SystemError::Dimension {
                what: "state",
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let mut out = vec![0.0; x.len()];
        self.eval_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation; `x` and `out` must have length `dim()`.
    pub(crate) fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let t: Vec<f64> = x.iter().map(|v| v.tanh()).collect();
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = self.bias[i];
            for ((l, w), (xj, tj)) in self
                .linear
                .row(i)
                .iter()
                .zip(self.gain.row(i))
                .zip(x.iter().zip(&t))
            {
                s += l * xj + w * tj;
            }
            *o = s;
        }
    }

    /// Entrywise smallest Lipschitz matrix, `max(|l_ij|, |l_ij + w_ij|)`.
    pub fn lipschitz_matrix(&self) -> Matrix {
        let n = self.dim();
        Matrix::from_fn(n, n, |i, j| {
            let l = self.linear[(i, j)];
            let w = self.gain[(i, j)];
            l.abs().max((l + w).abs())
        })
    }
}

/// A map together with a Lipschitz matrix for it.
///
/// [`MapSpec`] derives its matrix in closed form. Other maps can implement
/// this trait and go through the sampled bound check, but they have no
/// closed-form check.
pub trait LipschitzMap {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn lipschitz_matrix(&self) -> Matrix;
}

impl LipschitzMap for MapSpec {
    fn dim(&self) -> usize {
        MapSpec::dim(self)
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.eval(x).expect("state dimension")
    }

    fn lipschitz_matrix(&self) -> Matrix {
        MapSpec::lipschitz_matrix(self)
    }
}

/// A user-supplied map paired with a user-supplied Lipschitz matrix.
pub struct CustomMap<F> {
    dim: usize,
    f: F,
    lipschitz: Matrix,
}

impl<F: Fn(&[f64]) -> Vec<f64>> CustomMap<F> {
    pub fn new(f: F, lipschitz: Matrix) -> Result<Self, SystemError> {
        let dim = lipschitz.require_square()?;
        lipschitz.check_nonnegative()?;
        Ok(Self { dim, f, lipschitz })
    }
}

impl<F: Fn(&[f64]) -> Vec<f64>> LipschitzMap for CustomMap<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (self.f)(x)
    }

    fn lipschitz_matrix(&self) -> Matrix {
        self.lipschitz.clone()
    }
}

/// A sampled pair that breaks `|F_i(x) - F_i(y)| <= sum_j a_ij |x_j - y_j|`.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzViolation {
    pub component: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

/// Checks the Lipschitz inequality on `pairs` random pairs drawn uniformly
/// from `[-half_width, half_width]^n`, with additive slack `slack`.
pub fn check_lipschitz_bound<M: LipschitzMap + ?Sized>(
    map: &M,
    a: &Matrix,
    pairs: usize,
    half_width: f64,
    slack: f64,
    seed: u64,
) -> Result<(), LipschitzViolation> {
    let n = map.dim();
    let mut rng = seeded_rng(seed, 0);
    for _ in 0..pairs {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-half_width..=half_width)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-half_width..=half_width)).collect();
        let fx = map.apply(&x);
        let fy = map.apply(&y);
        for i in 0..n {
            let lhs = (fx[i] - fy[i]).abs();
            let rhs: f64 = (0..n).map(|j| a[(i, j)] * (x[j] - y[j]).abs()).sum();
            if lhs > rhs + slack {
                return Err(LipschitzViolation {
                    component: i,
                    x,
                    y,
                    lhs,
                    rhs,
                });
            }
        }
    }
    Ok(())
}

fn validate_weights(weights: &[f64], maps: usize) -> Result<(), SystemError> {
    if weights.len() != maps {
        return Err(SystemError::WeightCount {
            count: weights.len(),
            maps,
        });
    }
    if let Some(index) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(SystemError::BadWeight {
            index,
            value: weights[index],
        });
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_TOL {
        return Err(SystemError::WeightSum { sum });
    }
    Ok(())
}

/// Finite map family with an i.i.d. switching distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedSystem {
    maps: Vec<MapSpec>,
    weights: Vec<f64>,
}

impl SwitchedSystem {
    pub fn new(maps: Vec<MapSpec>, weights: Vec<f64>) -> Result<Self, SystemError> {
        let first = maps.first().ok_or(SystemError::NoMaps)?;
        let n = first.dim();
        if let Some(bad) = maps.iter().find(|m| m.dim() != n) {
            return Err(SystemError::Dimension {
                what: "map",
                expected: n,
                actual: bad.dim(),
            });
        }
        validate_weights(&weights, maps.len())?;
        Ok(Self { maps, weights })
    }

    pub fn single(map: MapSpec) -> Self {
        Self {
            maps: vec![map],
            weights: vec![1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.maps[0].dim()
    }

    pub fn maps(&self) -> &[MapSpec] {
        &self.maps
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    /// One closed-form Lipschitz matrix per map, weights copied verbatim.
    /// Duplicate maps keep duplicate entries.
    pub fn lipschitz_set(&self) -> LipschitzSet {
        LipschitzSet {
            matrices: self.maps.iter().map(MapSpec::lipschitz_matrix).collect(),
            weights: self.weights.clone(),
        }
    }

    pub fn sampler(&self) -> MapSampler {
        MapSampler::new(&self.weights)
    }
}

/// Linear maps `x -> A x` with each `a_ij` independently uniform on
/// `[lower_ij, upper_ij]`, redrawn at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalEnsemble {
    lower: Matrix,
    upper: Matrix,
}

impl IntervalEnsemble {
    pub fn new(lower: Matrix, upper: Matrix) -> Result<Self, SystemError> {
        let n = lower.require_square()?;
        if upper.shape() != (n, n) {
            return Err(SystemError::Dimension {
                what: "upper bound matrix",
                expected: n,
                actual: upper.rows().max(upper.cols()),
            });
        }
        lower.check_finite()?;
        upper.check_finite()?;
        for i in 0..n {
            for j in 0..n {
                if lower[(i, j)] > upper[(i, j)] {
                    return Err(SystemError::InvertedInterval {
                        row: i,
                        col: j,
                        lower: lower[(i, j)],
                        upper: upper[(i, j)],
                    });
                }
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn upper(&self) -> &Matrix {
        &self.upper
    }

    /// Entrywise mean of `A` (or of `|A|` when `absolute`). The absolute mean
    /// is the expectation of the ensemble's Lipschitz matrices.
    pub fn mean(&self, absolute: bool) -> Matrix {
        let n = self.dim();
        Matrix::from_fn(n, n, |i, j| {
            let (l, u) = (self.lower[(i, j)], self.upper[(i, j)]);
            if !absolute || l >= 0.0 {
                0.5 * (l + u)
            } else if u <= 0.0 {
                -0.5 * (l + u)
            } else {
                // E|X| for X ~ U(l, u) straddling zero.
                (l * l + u * u) / (2.0 * (u - l))
            }
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Matrix {
        let n = self.dim();
        Matrix::from_fn(n, n, |i, j| {
            let (l, u) = (self.lower[(i, j)], self.upper[(i, j)]);
            if l == u {
                l
            } else {
                rng.gen_range(l..u)
            }
        })
    }

    /// Every member is linear, so the origin is a shared fixed point.
    pub fn shared_fixed_point(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }
}

pub fn ensemble_mean(e: &IntervalEnsemble, absolute: bool) -> Matrix {
    e.mean(absolute)
}

/// Nonnegative matrices with probabilities mirroring a switched system.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzSet {
    matrices: Vec<Matrix>,
    weights: Vec<f64>,
}

impl LipschitzSet {
    pub fn new(matrices: Vec<Matrix>, weights: Vec<f64>) -> Result<Self, SystemError> {
        let first = matrices.first().ok_or(SystemError::NoMaps)?;
        let n = first.require_square()?;
        for m in &matrices {
            if m.shape() != (n, n) {
                return Err(SystemError::Dimension {
                    what: "Lipschitz matrix",
                    expected: n,
                    actual: m.rows().max(m.cols()),
                });
            }
            m.check_nonnegative()?;
        }
        validate_weights(&weights, matrices.len())?;
        Ok(Self { matrices, weights })
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].rows()
    }

    pub fn matrices(&self) -> &[Matrix] {
        &self.matrices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    /// Entrywise expectation `sum_k mu_k A_k`.
    pub fn expectation(&self) -> Matrix {
        let n = self.dim();
        let mut e = Matrix::zeros(n, n);
        for (m, w) in self.matrices.iter().zip(&self.weights) {
            e.axpy(*w, m).expect("shapes validated");
        }
        e
    }

    pub fn sampler(&self) -> MapSampler {
        MapSampler::new(&self.weights)
    }
}

pub fn lipschitz_set(sys: &SwitchedSystem) -> LipschitzSet {
    sys.lipschitz_set()
}

/// The switching model handled by the analysis and the simulator.
#[derive(Debug, Clone, PartialEq)]
pub enum SystemModel {
    Switched(SwitchedSystem),
    Ensemble(IntervalEnsemble),
}

impl SystemModel {
    pub fn dim(&self) -> usize {
        match self {
            SystemModel::Switched(s) => s.dim(),
            SystemModel::Ensemble(e) => e.dim(),
        }
    }

    /// `E_{mu'}[S]`: expectation of the comparison matrices.
    pub fn lipschitz_expectation(&self) -> Matrix {
        match self {
            SystemModel::Switched(s) => s.lipschitz_set().expectation(),
            SystemModel::Ensemble(e) => e.mean(true),
        }
    }
}

impl From<SwitchedSystem> for SystemModel {
    fn from(s: SwitchedSystem) -> Self {
        SystemModel::Switched(s)
    }
}

impl From<IntervalEnsemble> for SystemModel {
    fn from(e: IntervalEnsemble) -> Self {
        SystemModel::Ensemble(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    pub tol: f64,
    /// Step size `alpha` in `x <- (1 - alpha) x + alpha F(x)`.
    pub damping: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            damping: 0.5,
            max_iter: 100_000,
        }
    }
}

/// Damped fixed-point iteration on the first map from the origin, then a
/// residual check `||F(x) - x||_inf <= tol` on every map.
pub fn find_shared_fixed_point(
    sys: &SwitchedSystem,
    opts: &FixedPointOptions,
) -> Result<Vec<f64>, SystemError> {
    let n = sys.dim();
    let first = &sys.maps()[0];
    let alpha = opts.damping;
    let mut x = vec![0.0; n];
    let mut fx = vec![0.0; n];
    let mut converged = false;
    let mut best = x.clone();
    let mut best_residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        first.eval_into(&x, &mut fx);
        let residual = max_diff(&fx, &x);
        if !residual.is_finite() {
            break;
        }
        if residual < best_residual {
            best.copy_from_slice(&x);
            best_residual = residual;
        } else if converged {
            // Rounding floor reached.
            break;
        }
        // Past the tolerance, keep polishing while the residual still
        // shrinks: the other maps see the distance to the true fixed point,
        // which can exceed the first map's residual.
        converged |= residual <= opts.tol;
        if residual == 0.0 {
            break;
        }
        for (xi, fi) in x.iter_mut().zip(&fx) {
            *xi = (1.0 - alpha) * *xi + alpha * fi;
        }
    }
    let x = best;
    let residual = best_residual;
    if !converged {
        return Err(SystemError::FixedPointNotConverged {
            iterations: opts.max_iter,
            residual,
        });
    }
    for (k, map) in sys.maps().iter().enumerate().skip(1) {
        map.eval_into(&x, &mut fx);
        let r = max_diff(&fx, &x);
        if !(r <= opts.tol) {
            return Err(SystemError::NoSharedFixedPoint {
                map: k,
                residual: r,
                point: x,
            });
        }
    }
    Ok(x)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Deterministic per-stream generator: the same `(seed, stream)` always
/// yields the same sequence, and distinct streams are independent.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws map indices according to a probability vector.
#[derive(Debug, Clone)]
pub struct MapSampler {
    dist: WeightedIndex<f64>,
}

impl MapSampler {
    fn new(weights: &[f64]) -> Self {
        Self {
            dist: WeightedIndex::new(weights).expect("validated probability vector"),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.dist.sample(rng)
    }
}

/// `k` i.i.d. map indices drawn with the system's weights.
pub fn draw_instance(sys: &SwitchedSystem, seed: u64, k: usize) -> Vec<usize> {
    let sampler = sys.sampler();
    let mut rng = seeded_rng(seed, 0);
    (0..k).map(|_| sampler.sample(&mut rng)).collect()
}

/// `k` i.i.d. matrices drawn from the ensemble.
pub fn draw_ensemble_instance(e: &IntervalEnsemble, seed: u64, k: usize) -> Vec<Matrix> {
    let mut rng = seeded_rng(seed, 0);
    (0..k).map(|_| e.sample(&mut rng)).collect()
}
