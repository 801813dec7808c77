//! Delay matrices, delay-space embeddings, and delayed switching laws.
//!
//! Delay-space coordinates are ordered lag-major: all sites at lag 0, then
//! all sites at lag 1, and so on. Coordinate `(i, l)` sits at index
//! `l * n + i` and stores the value of site `i` from `l` steps ago.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use thiserror::Error;

use crate::linalg::{assemble_companion, LinalgError, Matrix};
use crate::systems::{IntervalEnsemble, LipschitzSet, MapSpec, SwitchedSystem, SystemError, SystemModel, WEIGHT_TOL};

/// Largest support that [`DelayedSwitchedSystem::support`] will list.
pub const SUPPORT_CAP: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DelayError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("delay matrix must be square and nonempty")]
    Shape,
    #[error("delay entry ({row}, {col}) is {value}, above the bound {bound}")]
    ExceedsBound {
        row: usize,
        col: usize,
        value: usize,
        bound: usize,
    },
    #[error("delay matrix has dimension {actual}, expected {expected}")]
    Dimension { expected: usize, actual: usize },
    #[error("explicit policy lists {got} maps, system has {expected}")]
    PolicyMapCount { expected: usize, got: usize },
    #[error("explicit policy has no delay matrices for map {map}, which has positive weight")]
    MissingMap { map: usize },
    #[error("map {map}: delay probability {index} is {value}")]
    BadProbability { map: usize, index: usize, value: f64 },
    #[error("map {map}: delay probabilities sum to {sum}, expected 1")]
    ProbabilitySum { map: usize, sum: f64 },
    #[error("support has {size} elements, above the cap of {cap}")]
    SupportTooLarge { size: f64, cap: usize },
    #[error("interval ensembles have a continuous support")]
    ContinuousSupport,
}

/// Integer lags `d_ij` bounded by `bound`; `d_ij` is the lag with which
/// variable `j` enters the update of component `i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DelayMatrix {
    n: usize,
    bound: usize,
    entries: Vec<usize>,
}

impl DelayMatrix {
    pub fn new<R: AsRef<[usize]>>(rows: &[R], bound: usize) -> Result<Self, DelayError> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.as_ref().len() != n) {
            return Err(DelayError::Shape);
        }
        let entries: Vec<usize> = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        let d = Self { n, bound, entries };
        d.check_bound(bound)?;
        Ok(d)
    }

    pub fn zeros(n: usize, bound: usize) -> Self {
        Self {
            n,
            bound,
            entries: vec![0; n * n],
        }
    }

    pub fn from_fn(n: usize, bound: usize, mut f: impl FnMut(usize, usize) -> usize) -> Result<Self, DelayError> {
        let entries = (0..n * n).map(|k| f(k / n, k % n)).collect();
        let d = Self { n, bound, entries };
        d.check_bound(bound)?;
        Ok(d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bound(&self) -> usize {
        self.bound
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.entries[i * self.n + j]
    }

    pub fn max_entry(&self) -> usize {
        self.entries.iter().copied().max().unwrap_or(0)
    }

    pub fn to_rows(&self) -> Vec<Vec<usize>> {
        self.entries.chunks(self.n).map(<[usize]>::to_vec).collect()
    }

    /// Errors with the first entry (row-major) above `bound`.
    pub fn check_bound(&self, bound: usize) -> Result<(), DelayError> {
        match self.entries.iter().position(|&v| v > bound) {
            Some(k) => Err(DelayError::ExceedsBound {
                row: k / self.n,
                col: k % self.n,
                value: self.entries[k],
                bound,
            }),
            None => Ok(()),
        }
    }

    fn check_for(&self, n: usize, bound: usize) -> Result<(), DelayError> {
        if self.n != n {
            return Err(DelayError::Dimension {
                expected: n,
                actual: self.n,
            });
        }
        self.check_bound(bound)
    }

    /// Every entry uniform on `0..=bound`, independently.
    pub fn sample_uniform<R: Rng + ?Sized>(n: usize, bound: usize, rng: &mut R) -> Self {
        Self {
            n,
            bound,
            entries: (0..n * n).map(|_| rng.gen_range(0..=bound)).collect(),
        }
    }

    /// Matrix number `index` in the base-`(bound + 1)` enumeration of all
    /// `n x n` delay matrices, first entry least significant.
    fn nth(n: usize, bound: usize, mut index: usize) -> Self {
        let base = bound + 1;
        let entries = (0..n * n)
            .map(|_| {
                let v = index % base;
                index /= base;
                v
            })
            .collect();
        Self { n, bound, entries }
    }
}

/// Conditional law of the delay matrix given the drawn map.
#[derive(Debug, Clone, PartialEq)]
pub enum DelayPolicy {
    /// `D = 0` always.
    None,
    /// One delay matrix for every map at every step.
    Fixed(DelayMatrix),
    /// Each `d_ij` uniform on `0..=L`, independently, redrawn every step.
    IidUniformEntries,
    /// `(delay matrix, conditional probability)` lists, one per map.
    Explicit(Vec<Vec<(DelayMatrix, f64)>>),
}

impl DelayPolicy {
    pub fn kind(&self) -> &'static str {
        match self {
            DelayPolicy::None => "none",
            DelayPolicy::Fixed(_) => "fixed",
            DelayPolicy::IidUniformEntries => "iid_uniform_entries",
            DelayPolicy::Explicit(_) => "explicit",
        }
    }

    /// Checks the policy against a family of `maps` maps on `R^n` with the
    /// given weights and delay bound.
    pub fn validate(&self, n: usize, weights: &[f64], bound: usize) -> Result<(), DelayError> {
        match self {
            DelayPolicy::None | DelayPolicy::IidUniformEntries => Ok(()),
            DelayPolicy::Fixed(d) => d.check_for(n, bound),
            DelayPolicy::Explicit(lists) => {
                if lists.len() != weights.len() {
                    return Err(DelayError::PolicyMapCount {
                        expected: weights.len(),
                        got: lists.len(),
                    });
                }
                for (map, (list, w)) in lists.iter().zip(weights).enumerate() {
                    if list.is_empty() {
                        if *w > 0.0 {
                            return Err(DelayError::MissingMap { map });
                        }
                        continue;
                    }
                    for (index, (d, q)) in list.iter().enumerate() {
                        d.check_for(n, bound)?;
                        if !(q.is_finite() && *q >= 0.0) {
                            return Err(DelayError::BadProbability { map, index, value: *q });
                        }
                    }
                    let sum: f64 = list.iter().map(|(_, q)| q).sum();
                    if (sum - 1.0).abs() > WEIGHT_TOL {
                        return Err(DelayError::ProbabilitySum { map, sum });
                    }
                }
                Ok(())
            }
        }
    }

    /// `P(d_ij = l | map)` for `l = 0..=bound`.
    pub fn entry_marginal(&self, map: usize, i: usize, j: usize, bound: usize) -> Vec<f64> {
        let mut probs = vec![0.0; bound + 1];
        match self {
            DelayPolicy::None => probs[0] = 1.0,
            DelayPolicy::Fixed(d) => probs[d.get(i, j)] = 1.0,
            DelayPolicy::IidUniformEntries => probs.fill(1.0 / (bound + 1) as f64),
            DelayPolicy::Explicit(lists) => {
                for (d, q) in &lists[map] {
                    probs[d.get(i, j)] += q;
                }
            }
        }
        probs
    }
}

/// `F_D` on `R^{n(L+1)}`: component `(i, 0)` evaluates `F_i` with variable
/// `j` read at lag `d_ij`; components `(i, l + 1)` copy `(i, l)`.
pub fn embed_map(f: &MapSpec, d: &DelayMatrix, bound: usize) -> Result<MapSpec, DelayError> {
    let n = f.dim();
    d.check_for(n, bound)?;
    let big = n * (bound + 1);
    let mut linear = Matrix::zeros(big, big);
    let mut gain = Matrix::zeros(big, big);
    for i in 0..n {
        for j in 0..n {
            let col = d.get(i, j) * n + j;
            linear[(i, col)] = f.linear()[(i, j)];
            gain[(i, col)] = f.gain()[(i, j)];
        }
    }
    for lag in 0..bound {
        for i in 0..n {
            linear[((lag + 1) * n + i, lag * n + i)] = 1.0;
        }
    }
    let mut bias = vec![0.0; big];
    bias[..n].copy_from_slice(f.bias());
    Ok(MapSpec::new(linear, gain, bias)?)
}

/// Lag blocks `A_l = [a_ij 1{d_ij = l}]`, `l = 0..=bound`.
pub fn delay_blocks(a: &Matrix, d: &DelayMatrix, bound: usize) -> Result<Vec<Matrix>, DelayError> {
    let n = a.require_square()?;
    d.check_for(n, bound)?;
    Ok((0..=bound)
        .map(|lag| Matrix::from_fn(n, n, |i, j| if d.get(i, j) == lag { a[(i, j)] } else { 0.0 }))
        .collect())
}

/// Lipschitz matrix of the delayed map: the companion of the lag blocks.
pub fn embed_matrix(a: &Matrix, d: &DelayMatrix, bound: usize) -> Result<Matrix, DelayError> {
    a.check_nonnegative()?;
    Ok(assemble_companion(&delay_blocks(a, d, bound)?)?)
}

/// Lag blocks of `E[S_L]`: `B_l[i][j] = sum_k w_k a^k_ij P(d_ij = l | k)`.
pub fn expected_delayed_blocks(
    matrices: &[Matrix],
    weights: &[f64],
    policy: &DelayPolicy,
    bound: usize,
) -> Result<Vec<Matrix>, DelayError> {
    let ls = LipschitzSet::new(matrices.to_vec(), weights.to_vec())?;
    let n = ls.dim();
    policy.validate(n, weights, bound)?;
    let mut blocks = vec![Matrix::zeros(n, n); bound + 1];
    for (k, (a, w)) in matrices.iter().zip(weights).enumerate() {
        if *w == 0.0 {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                let v = w * a[(i, j)];
                if v == 0.0 {
                    continue;
                }
                for (lag, p) in policy.entry_marginal(k, i, j, bound).into_iter().enumerate() {
                    blocks[lag][(i, j)] += v * p;
                }
            }
        }
    }
    Ok(blocks)
}

/// `E[S_L]` in block companion form, without enumerating delay matrices.
pub fn expected_delayed_lipschitz(ls: &LipschitzSet, policy: &DelayPolicy, bound: usize) -> Result<Matrix, DelayError> {
    let blocks = expected_delayed_blocks(ls.matrices(), ls.weights(), policy, bound)?;
    Ok(assemble_companion(&blocks)?)
}

/// Same for an interval ensemble, through its absolute mean. The policy
/// sees the ensemble as a single map.
pub fn expected_delayed_lipschitz_ensemble(
    e: &IntervalEnsemble,
    policy: &DelayPolicy,
    bound: usize,
) -> Result<Matrix, DelayError> {
    let blocks = expected_delayed_blocks(&[e.mean(true)], &[1.0], policy, bound)?;
    Ok(assemble_companion(&blocks)?)
}

/// A switched system (or ensemble) with a delay policy and bound. The
/// joint law of (map, delay matrix) is `weight(map) * P(D | map)`, so the
/// map marginal always matches the undelayed weights.
#[derive(Debug, Clone)]
pub struct DelayedSwitchedSystem {
    base: SystemModel,
    policy: DelayPolicy,
    bound: usize,
    explicit: Vec<Option<WeightedIndex<f64>>>,
}

impl DelayedSwitchedSystem {
    pub fn new(base: impl Into<SystemModel>, policy: DelayPolicy, bound: usize) -> Result<Self, DelayError> {
        let base = base.into();
        let weights = policy_weights(&base);
        policy.validate(base.dim(), &weights, bound)?;
        let explicit = match &policy {
            DelayPolicy::Explicit(lists) => lists
                .iter()
                .map(|list| {
                    (!list.is_empty()).then(|| {
                        WeightedIndex::new(list.iter().map(|(_, q)| *q)).expect("validated probabilities")
                    })
                })
                .collect(),
            _ => Vec::new(),
        };
        Ok(Self {
            base,
            policy,
            bound,
            explicit,
        })
    }

    pub fn base(&self) -> &SystemModel {
        &self.base
    }

    pub fn policy(&self) -> &DelayPolicy {
        &self.policy
    }

    pub fn bound(&self) -> usize {
        self.bound
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn delayed_dim(&self) -> usize {
        self.base.dim() * (self.bound + 1)
    }

    /// Delay matrix for one step, conditional on map `map` (0 for ensembles).
    pub fn sample_delay<R: Rng + ?Sized>(&self, map: usize, rng: &mut R) -> DelayMatrix {
        let n = self.dim();
        match &self.policy {
            DelayPolicy::None => DelayMatrix::zeros(n, self.bound),
            DelayPolicy::Fixed(d) => d.clone(),
            DelayPolicy::IidUniformEntries => DelayMatrix::sample_uniform(n, self.bound, rng),
            DelayPolicy::Explicit(lists) => {
                let dist = self.explicit[map].as_ref().expect("zero-weight map never drawn");
                lists[map][dist.sample(rng)].0.clone()
            }
        }
    }

    /// Draws `(map index, delay matrix)` for a switched base system.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(usize, DelayMatrix)> {
        match &self.base {
            SystemModel::Switched(s) => {
                let k = s.sampler().sample(rng);
                Some((k, self.sample_delay(k, rng)))
            }
            SystemModel::Ensemble(_) => None,
        }
    }

    /// Every `(map, delay matrix, probability)` with positive probability.
    pub fn support(&self) -> Result<Vec<(usize, DelayMatrix, f64)>, DelayError> {
        let sys = match &self.base {
            SystemModel::Switched(s) => s,
            SystemModel::Ensemble(_) => return Err(DelayError::ContinuousSupport),
        };
        let n = sys.dim();
        let mut out = Vec::new();
        match &self.policy {
            DelayPolicy::None | DelayPolicy::Fixed(_) => {
                let d = match &self.policy {
                    DelayPolicy::Fixed(d) => d.clone(),
                    _ => DelayMatrix::zeros(n, self.bound),
                };
                for (k, w) in sys.weights().iter().enumerate() {
                    if *w > 0.0 {
                        out.push((k, d.clone(), *w));
                    }
                }
            }
            DelayPolicy::IidUniformEntries => {
                let per_map = ((self.bound + 1) as f64).powi((n * n) as i32);
                let live = sys.weights().iter().filter(|w| **w > 0.0).count();
                let size = per_map * live as f64;
                if size > SUPPORT_CAP as f64 {
                    return Err(DelayError::SupportTooLarge { size, cap: SUPPORT_CAP });
                }
                let per_map = per_map as usize;
                for (k, w) in sys.weights().iter().enumerate() {
                    if *w > 0.0 {
                        for idx in 0..per_map {
                            out.push((k, DelayMatrix::nth(n, self.bound, idx), w / per_map as f64));
                        }
                    }
                }
            }
            DelayPolicy::Explicit(lists) => {
                for (k, (list, w)) in lists.iter().zip(sys.weights()).enumerate() {
                    for (d, q) in list {
                        if w * q > 0.0 {
                            out.push((k, d.clone(), w * q));
                        }
                    }
                }
                if out.len() > SUPPORT_CAP {
                    return Err(DelayError::SupportTooLarge {
                        size: out.len() as f64,
                        cap: SUPPORT_CAP,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Closed-form `E[S_L]` for this delayed system.
    pub fn expected_lipschitz(&self) -> Result<Matrix, DelayError> {
        match &self.base {
            SystemModel::Switched(s) => expected_delayed_lipschitz(&s.lipschitz_set(), &self.policy, self.bound),
            SystemModel::Ensemble(e) => expected_delayed_lipschitz_ensemble(e, &self.policy, self.bound),
        }
    }
}

fn policy_weights(base: &SystemModel) -> Vec<f64> {
    match base {
        SystemModel::Switched(s) => s.weights().to_vec(),
        SystemModel::Ensemble(_) => vec![1.0],
    }
}

pub fn delayed_system(sys: SwitchedSystem, policy: DelayPolicy, bound: usize) -> Result<DelayedSwitchedSystem, DelayError> {
    DelayedSwitchedSystem::new(sys, policy, bound)
}
