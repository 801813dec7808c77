//! Monte Carlo trajectories of switched and delayed switched systems.
//!
//! Trajectory `t` of a batch draws everything (initial direction, maps,
//! delays) from the stream `(seed, t)`, so batches are reproducible bit for
//! bit regardless of how many threads run them.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::delay::{DelayError, DelayPolicy, DelayedSwitchedSystem};
use crate::linalg::Matrix;
use crate::systems::{seeded_rng, IntervalEnsemble, LipschitzSet, SwitchedSystem, SystemModel};

/// Coordinates above this magnitude end a trajectory.
pub const DIVERGENCE_CUTOFF: f64 = 1e12;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Delay(#[from] DelayError),
    #[error("initial state has length {actual}, expected {base} or {full}")]
    InitialDimension { actual: usize, base: usize, full: usize },
    #[error("every trajectory diverged")]
    AllDiverged,
    #[error("{0} must be at least 1")]
    Zero(&'static str),
    #[error("window [{start}, {end}] does not fit a horizon of {horizon} steps")]
    BadWindow { start: usize, end: usize, horizon: usize },
    #[error("fixed point has length {actual}, expected {expected}")]
    FixedPointDimension { expected: usize, actual: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

/// Initial condition of every trajectory in a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Initial {
    /// The same state for all trajectories: length `n` (replicated across
    /// lags) or the full delay-space length.
    Point(Vec<f64>),
    /// `center` plus a direction uniform on the Euclidean unit sphere,
    /// replicated across lags.
    UnitSphere { center: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub horizon: usize,
    pub trajectories: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `x^0, x^1, ...`; stops before the first state past the cutoff.
    pub states: Vec<Vec<f64>>,
    pub diverged_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub seed: u64,
    pub horizon: usize,
    /// Dimension of the undelayed system.
    pub base_dim: usize,
    /// Dimension of the recorded states (`base_dim * (L + 1)`).
    pub state_dim: usize,
    pub system_hash: String,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn diverged(&self) -> usize {
        self.trajectories.iter().filter(|t| t.diverged_at.is_some()).count()
    }
}

/// Hex SHA-256 of a system's debug rendering, used to tag exported data.
pub fn system_hash(ds: &DelayedSwitchedSystem) -> String {
    let mut h = Sha256::new();
    h.update(format!("{:?}|{:?}|{}", ds.base(), ds.policy(), ds.bound()).as_bytes());
    hex::encode(h.finalize())
}

fn uniform_direction<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let r = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r > 1e-6 && r <= 1.0 {
            return u.into_iter().map(|v| v / r).collect();
        }
    }
}

fn replicate(x: &[f64], lags: usize) -> Vec<f64> {
    x.iter().copied().cycle().take(x.len() * lags).collect()
}

fn initial_state<R: Rng + ?Sized>(init: &Initial, n: usize, full: usize, rng: &mut R) -> Vec<f64> {
    match init {
        Initial::Point(x) if x.len() == full => x.clone(),
        Initial::Point(x) => replicate(x, full / n),
        Initial::UnitSphere { center } => {
            let u = uniform_direction(n, rng);
            let x: Vec<f64> = center.iter().zip(&u).map(|(c, d)| c + d).collect();
            replicate(&x, full / n)
        }
    }
}

fn check_initial(init: &Initial, n: usize, full: usize) -> Result<(), SimError> {
    let len = match init {
        Initial::Point(x) => x.len(),
        Initial::UnitSphere { center } => center.len(),
    };
    let ok = match init {
        Initial::Point(_) => len == n || len == full,
        Initial::UnitSphere { .. } => len == n,
    };
    if ok {
        Ok(())
    } else {
        Err(SimError::InitialDimension {
            actual: len,
            base: n,
            full,
        })
    }
}

/// One step in delay space: lag-0 block from the drawn map and delays,
/// the other lags shifted down by one.
fn step<R: Rng + ?Sized>(ds: &DelayedSwitchedSystem, state: &[f64], next: &mut [f64], rng: &mut R) {
    let n = ds.dim();
    match ds.base() {
        SystemModel::Switched(s) => {
            let (k, d) = ds.sample(rng).expect("switched base");
            let f = &s.maps()[k];
            for i in 0..n {
                let mut acc = f.bias()[i];
                for j in 0..n {
                    let x = state[d.get(i, j) * n + j];
                    acc += f.linear()[(i, j)] * x + f.gain()[(i, j)] * x.tanh();
                }
                next[i] = acc;
            }
        }
        SystemModel::Ensemble(e) => {
            let a = e.sample(rng);
            let d = ds.sample_delay(0, rng);
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += a[(i, j)] * state[d.get(i, j) * n + j];
                }
                next[i] = acc;
            }
        }
    }
    let len = state.len();
    next[n..].copy_from_slice(&state[..len - n]);
}

fn run_one(ds: &DelayedSwitchedSystem, init: &Initial, horizon: usize, seed: u64, index: u64) -> Trajectory {
    let mut rng = seeded_rng(seed, index);
    let n = ds.dim();
    let full = ds.delayed_dim();
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(initial_state(init, n, full, &mut rng));
    let mut next = vec![0.0; full];
    for k in 1..=horizon {
        step(ds, states.last().expect("nonempty"), &mut next, &mut rng);
        if next.iter().any(|v| !(v.abs() <= DIVERGENCE_CUTOFF)) {
            return Trajectory {
                states,
                diverged_at: Some(k),
            };
        }
        states.push(next.clone());
    }
    Trajectory {
        states,
        diverged_at: None,
    }
}

/// Simulates `cfg.trajectories` independent orbits of a delayed system.
pub fn simulate(ds: &DelayedSwitchedSystem, init: &Initial, cfg: &SimConfig) -> Result<TrajectoryBatch, SimError> {
    let n = ds.dim();
    let full = ds.delayed_dim();
    check_initial(init, n, full)?;
    let trajectories = (0..cfg.trajectories as u64)
        .into_par_iter()
        .map(|t| run_one(ds, init, cfg.horizon, cfg.seed, t))
        .collect();
    Ok(TrajectoryBatch {
        seed: cfg.seed,
        horizon: cfg.horizon,
        base_dim: n,
        state_dim: full,
        system_hash: system_hash(ds),
        trajectories,
    })
}

/// Simulates the undelayed system.
pub fn simulate_model(model: &SystemModel, init: &Initial, cfg: &SimConfig) -> Result<TrajectoryBatch, SimError> {
    let ds = DelayedSwitchedSystem::new(model.clone(), DelayPolicy::None, 0)?;
    simulate(&ds, init, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayOptions {
    /// Inclusive step range for the fit; defaults to the final third.
    pub window: Option<(usize, usize)>,
    /// Steps averaged at each end of the window; defaults to a tenth of it.
    pub edge: Option<usize>,
    /// Required drop between the window's ends.
    pub drop_factor: f64,
}

impl Default for DecayOptions {
    fn default() -> Self {
        Self {
            window: None,
            edge: None,
            drop_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayEstimate {
    pub p: u32,
    /// `m_k`: mean of `||x^k - x~||_inf^p` over trajectories alive at step `k`.
    pub means: Vec<f64>,
    pub window: (usize, usize),
    /// Fitted `beta` in `m_k ~ C exp(-beta k)`.
    pub beta: f64,
    pub log_c: f64,
    pub initial_edge_mean: f64,
    pub final_edge_mean: f64,
    pub diverged: usize,
    pub decay_detected: bool,
}

/// Per-step empirical p-th moments and a log-linear fit over the window.
/// Delayed batches are measured on the lag-0 block.
pub fn estimate_decay(batch: &TrajectoryBatch, x_tilde: &[f64], p: u32, opts: &DecayOptions) -> Result<DecayEstimate, SimError> {
    if p == 0 {
        return Err(SimError::Zero("p"));
    }
    let n = batch.base_dim;
    if x_tilde.len() != n {
        return Err(SimError::FixedPointDimension {
            expected: n,
            actual: x_tilde.len(),
        });
    }
    if batch.is_empty() || batch.diverged() == batch.len() {
        return Err(SimError::AllDiverged);
    }
    let horizon = batch.horizon;
    let (start, end) = opts.window.unwrap_or((horizon - horizon / 3, horizon));
    if start > end || end > horizon {
        return Err(SimError::BadWindow { start, end, horizon });
    }
    let mut sums = vec![0.0; horizon + 1];
    let mut counts = vec![0usize; horizon + 1];
    for t in &batch.trajectories {
        for (k, x) in t.states.iter().enumerate() {
            let dev = x[..n].iter().zip(x_tilde).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            sums[k] += dev.powi(p as i32);
            counts[k] += 1;
        }
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, c)| if *c > 0 { s / *c as f64 } else { f64::NAN })
        .collect();

    let pts: Vec<(f64, f64)> = (start..=end)
        .filter(|&k| means[k] > 0.0 && means[k].is_finite())
        .map(|k| (k as f64, means[k].ln()))
        .collect();
    let (slope, intercept) = least_squares(&pts);

    let len = end - start + 1;
    let edge = opts.edge.unwrap_or((len / 10).max(1)).clamp(1, len);
    let edge_mean = |range: std::ops::Range<usize>| {
        let v: Vec<f64> = range.map(|k| means[k]).filter(|m| m.is_finite()).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let initial_edge_mean = edge_mean(start..start + edge);
    let final_edge_mean = edge_mean(end + 1 - edge..end + 1);
    let beta = -slope;
    let diverged = batch.diverged();
    let decay_detected =
        diverged == 0 && beta > 0.0 && final_edge_mean < initial_edge_mean / opts.drop_factor;
    Ok(DecayEstimate {
        p,
        means,
        window: (start, end),
        beta,
        log_c: intercept,
        initial_edge_mean,
        final_edge_mean,
        diverged,
        decay_detected,
    })
}

fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Random matrix source for the Monte Carlo p-radius.
#[derive(Debug, Clone, Copy)]
pub enum ProductSource<'a> {
    Set(&'a LipschitzSet),
    /// Products of `|A|` with `A` drawn from the ensemble.
    Ensemble(&'a IntervalEnsemble),
}

/// `((1/samples) sum ||A_k ... A_1||_inf^p)^{1/(pk)}`, a finite-`k`
/// estimate of the p-radius. Norms are accumulated in log space.
pub fn mc_p_radius_estimate(src: ProductSource<'_>, p: u32, k: usize, samples: usize, seed: u64) -> Result<f64, SimError> {
    if p == 0 {
        return Err(SimError::Zero("p"));
    }
    if k == 0 {
        return Err(SimError::Zero("k"));
    }
    if samples == 0 {
        return Err(SimError::Zero("samples"));
    }
    let n = match src {
        ProductSource::Set(s) => s.dim(),
        ProductSource::Ensemble(e) => e.dim(),
    };
    let log_norms: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = seeded_rng(seed, s);
            let sampler = match src {
                ProductSource::Set(set) => Some(set.sampler()),
                ProductSource::Ensemble(_) => None,
            };
            let mut prod = Matrix::identity(n);
            let mut log_scale = 0.0;
            for _ in 0..k {
                let a = match src {
                    ProductSource::Set(set) => set.matrices()[sampler.as_ref().expect("set").sample(&mut rng)].clone(),
                    ProductSource::Ensemble(e) => e.sample(&mut rng).abs(),
                };
                prod = a.matmul(&prod).expect("square");
                let norm = prod.norm_inf();
                if norm == 0.0 {
                    return f64::NEG_INFINITY;
                }
                log_scale += norm.ln();
                prod = prod.scale(1.0 / norm);
            }
            log_scale
        })
        .collect();
    let pf = p as f64;
    let max = log_norms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let sum: f64 = log_norms.iter().map(|l| (pf * (l - max)).exp()).sum();
    let log_mean = pf * max + sum.ln() - (samples as f64).ln();
    Ok((log_mean / (pf * k as f64)).exp())
}

/// Nonlinear deviation and its linear comparison trajectory, driven by the
/// same switch sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct DominationTrace {
    /// `||x^k - x~||_inf`.
    pub deviation: Vec<f64>,
    /// `||y^k||_inf` with `y^{k+1} = A_{s_k} y^k`, `y^0 = |x^0 - x~|`.
    pub comparison: Vec<f64>,
    /// `|x^k - x~| <= y^k` held in every coordinate at every step, up to
    /// a relative rounding slack.
    pub componentwise: bool,
}

pub fn lipschitz_domination(sys: &SwitchedSystem, x0: &[f64], x_tilde: &[f64], steps: usize, seed: u64, stream: u64) -> DominationTrace {
    let ls = sys.lipschitz_set();
    let sampler = sys.sampler();
    let mut rng = seeded_rng(seed, stream);
    let mut x = x0.to_vec();
    let mut y: Vec<f64> = x0.iter().zip(x_tilde).map(|(a, b)| (a - b).abs()).collect();
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let dev = |x: &[f64]| x.iter().zip(x_tilde).map(|(a, b)| (a - b).abs()).collect::<Vec<f64>>();
    let mut deviation = vec![inf(&dev(&x))];
    let mut comparison = vec![inf(&y)];
    let mut componentwise = true;
    for _ in 0..steps {
        let k = sampler.sample(&mut rng);
        x = sys.maps()[k].eval(&x).expect("dimension");
        y = ls.matrices()[k].matvec(&y).expect("dimension");
        let d = dev(&x);
        for (di, yi) in d.iter().zip(&y) {
            if *di > yi * (1.0 + 1e-12) + 1e-300 {
                componentwise = false;
            }
        }
        deviation.push(inf(&d));
        comparison.push(inf(&y));
    }
    DominationTrace {
        deviation,
        comparison,
        componentwise,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |source| SimError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> SimError + '_ {
    move |source| SimError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes one row per (trajectory, step) after a `#`-prefixed metadata
/// header.
pub fn write_batch_csv<W: Write>(batch: &TrajectoryBatch, mut out: W) -> Result<(), std::io::Error> {
    writeln!(out, "# seed={}", batch.seed)?;
    writeln!(out, "# system_sha256={}", batch.system_hash)?;
    writeln!(out, "# horizon={}", batch.horizon)?;
    writeln!(out, "# trajectories={}", batch.len())?;
    writeln!(out, "# diverged={}", batch.diverged())?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["trajectory".to_string(), "step".to_string()];
    header.extend((0..batch.state_dim).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for (t, traj) in batch.trajectories.iter().enumerate() {
        for (k, x) in traj.states.iter().enumerate() {
            let mut rec = vec![t.to_string(), k.to_string()];
            rec.extend(x.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()
}

pub fn export_csv(batch: &TrajectoryBatch, path: &Path) -> Result<(), SimError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_batch_csv(batch, BufWriter::new(file)).map_err(io_err(path))
}

/// Writes `(k, m_k)` rows after a metadata header.
pub fn write_decay_csv<W: Write>(est: &DecayEstimate, seed: u64, system_hash: &str, mut out: W) -> Result<(), csv::Error> {
    writeln!(out, "# seed={seed}")?;
    writeln!(out, "# system_sha256={system_hash}")?;
    writeln!(out, "# p={}", est.p)?;
    writeln!(out, "# window={}..={}", est.window.0, est.window.1)?;
    writeln!(out, "# beta={}", est.beta)?;
    writeln!(out, "# log_c={}", est.log_c)?;
    writeln!(out, "# diverged={}", est.diverged)?;
    writeln!(out, "# decay_detected={}", est.decay_detected)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "m_k"])?;
    for (k, m) in est.means.iter().enumerate() {
        w.write_record([k.to_string(), m.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_decay_csv(est: &DecayEstimate, seed: u64, system_hash: &str, path: &Path) -> Result<(), SimError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_decay_csv(est, seed, system_hash, BufWriter::new(file)).map_err(csv_err(path))
}
