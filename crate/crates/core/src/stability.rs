//! p-radius computation and stability verdicts.
//!
//! Verdicts are sufficient conditions only. A radius at or above one never
//! means "unstable"; the report says "inconclusive" and explains why.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::delay::{DelayError, DelayedSwitchedSystem};
use crate::linalg::{assemble_companion, kron_power, spectral_radius, LinalgError, Matrix, SpectralOptions};
use crate::systems::{find_shared_fixed_point, FixedPointOptions, LipschitzSet, SystemModel};

/// Radii within this distance of one are treated as undecided.
pub const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Delay(#[from] DelayError),
    #[error("p must be at least 1")]
    ZeroP,
    #[error("closed-form p-radius for interval ensembles exists only for p = 1 (got p = {p}); use the Monte Carlo estimator")]
    EnsembleMoment { p: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    FirstMeanStable,
    PatientlyFirstMeanStable,
    Inconclusive,
}

impl Verdict {
    pub fn is_stable(self) -> bool {
        self != Verdict::Inconclusive
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::FirstMeanStable => "first_mean_stable",
            Verdict::PatientlyFirstMeanStable => "patiently_first_mean_stable",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What the report certifies when the radius is below one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// The undelayed system, in p-th mean.
    Undelayed,
    /// Every bounded-delay version of the system (p = 1 only).
    AllDelays,
    /// One specific delayed version, through its full companion matrix.
    DelayedVersion,
}

/// One link of the certificate chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Claim {
    pub claim: String,
    pub basis: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub p: u32,
    pub scope: Scope,
    pub expectation_matrix: Matrix,
    pub p_radius: f64,
    pub verdict: Verdict,
    pub certificate_chain: Vec<Claim>,
    pub shared_fixed_point: Option<Vec<f64>>,
    pub note: String,
}

impl StabilityReport {
    /// Recomputes the verdict from the recorded radius and fixed point.
    pub fn derived_verdict(&self) -> Verdict {
        decide(self.scope, self.p_radius, self.shared_fixed_point.is_some()).0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for StabilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "verdict: {}", self.verdict)?;
        writeln!(f, "p: {}", self.p)?;
        writeln!(f, "p-radius: {:.10}", self.p_radius)?;
        match &self.shared_fixed_point {
            Some(x) => writeln!(f, "shared fixed point: {x:?}")?,
            None => writeln!(f, "shared fixed point: none found")?,
        }
        writeln!(f, "expectation matrix:")?;
        for row in self.expectation_matrix.to_rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            writeln!(f, "  [{}]", cells.join(", "))?;
        }
        writeln!(f, "certificate chain:")?;
        for (k, c) in self.certificate_chain.iter().enumerate() {
            let mark = if c.holds { "ok" } else { "--" };
            match c.value {
                Some(v) => writeln!(f, "  {}. [{mark}] {} ({}; value {v:.10})", k + 1, c.claim, c.basis)?,
                None => writeln!(f, "  {}. [{mark}] {} ({})", k + 1, c.claim, c.basis)?,
            }
        }
        write!(f, "note: {}", self.note)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AnalysisOptions {
    pub spectral: SpectralOptions,
    pub fixed_point: FixedPointOptions,
}

fn decide(scope: Scope, radius: f64, fixed_point: bool) -> (Verdict, String) {
    if !fixed_point {
        return (
            Verdict::Inconclusive,
            "no shared fixed point was found, so the radius certifies nothing".into(),
        );
    }
    if (radius - 1.0).abs() <= BOUNDARY_TOL {
        return (
            Verdict::Inconclusive,
            "radius at tolerance boundary: within 1e-9 of 1, the criterion gives no information".into(),
        );
    }
    if radius > 1.0 {
        return (
            Verdict::Inconclusive,
            "radius above 1: the criterion is sufficient only, so the system may still be stable".into(),
        );
    }
    match scope {
        Scope::AllDelays => (
            Verdict::PatientlyFirstMeanStable,
            "radius below 1: the system and every delayed version with bounded delays are first-mean stable".into(),
        ),
        Scope::Undelayed => (
            Verdict::FirstMeanStable,
            "radius below 1: the system is exponentially stable in p-th mean, hence in first mean".into(),
        ),
        Scope::DelayedVersion => (
            Verdict::FirstMeanStable,
            "radius below 1: this delayed version is first-mean stable".into(),
        ),
    }
}

/// `rho(sum_k w_k A_k^{(x)p})^{1/p}`.
pub fn p_radius(ls: &LipschitzSet, p: u32) -> Result<f64, StabilityError> {
    p_radius_with(ls, p, &SpectralOptions::default())
}

pub fn p_radius_with(ls: &LipschitzSet, p: u32, opts: &SpectralOptions) -> Result<f64, StabilityError> {
    let e = moment_matrix(ls, p)?;
    Ok(spectral_radius(&e, opts)?.radius.powf(1.0 / p as f64))
}

/// `E[S^{(x)p}]`.
pub fn moment_matrix(ls: &LipschitzSet, p: u32) -> Result<Matrix, StabilityError> {
    if p == 0 {
        return Err(StabilityError::ZeroP);
    }
    if p == 1 {
        return Ok(ls.expectation());
    }
    let mut acc: Option<Matrix> = None;
    for (a, w) in ls.matrices().iter().zip(ls.weights()) {
        let k = kron_power(a, p)?;
        match acc.as_mut() {
            Some(m) => m.axpy(*w, &k)?,
            None => acc = Some(k.scale(*w)),
        }
    }
    Ok(acc.expect("nonempty set"))
}

/// p-radius of the comparison system of `model`. Ensembles support p = 1.
pub fn model_p_radius(model: &SystemModel, p: u32, opts: &SpectralOptions) -> Result<(Matrix, f64), StabilityError> {
    match model {
        SystemModel::Switched(s) => {
            let e = moment_matrix(&s.lipschitz_set(), p)?;
            let r = spectral_radius(&e, opts)?.radius.powf(1.0 / p as f64);
            Ok((e, r))
        }
        SystemModel::Ensemble(e) => {
            if p == 0 {
                return Err(StabilityError::ZeroP);
            }
            if p != 1 {
                return Err(StabilityError::EnsembleMoment { p });
            }
            let m = e.mean(true);
            let r = spectral_radius(&m, opts)?.radius;
            Ok((m, r))
        }
    }
}

fn fixed_point_claim(model: &SystemModel, opts: &FixedPointOptions) -> (Option<Vec<f64>>, Claim) {
    match model {
        SystemModel::Ensemble(e) => (
            Some(e.shared_fixed_point()),
            Claim {
                claim: "every member is linear, so the origin is a shared fixed point".into(),
                basis: "linearity",
                value: Some(0.0),
                holds: true,
            },
        ),
        SystemModel::Switched(s) => match find_shared_fixed_point(s, opts) {
            Ok(x) => {
                let residual = s
                    .maps()
                    .iter()
                    .map(|f| {
                        let fx = f.eval(&x).expect("dimension");
                        fx.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
                    })
                    .fold(0.0f64, f64::max);
                (
                    Some(x),
                    Claim {
                        claim: format!("shared fixed point found; max residual over all maps (value) within tol {:e}", opts.tol),
                        basis: "damped fixed-point iteration",
                        value: Some(residual),
                        holds: true,
                    },
                )
            }
            Err(err) => (
                None,
                Claim {
                    claim: format!("shared fixed point: {err}"),
                    basis: "damped fixed-point iteration",
                    value: None,
                    holds: false,
                },
            ),
        },
    }
}

fn lipschitz_claim(model: &SystemModel) -> Claim {
    let claim = match model {
        SystemModel::Switched(s) => format!(
            "comparison system: one closed-form Lipschitz matrix per map ({} maps), weights copied",
            s.len()
        ),
        SystemModel::Ensemble(_) => "comparison system: entrywise |A| of the interval ensemble".into(),
    };
    Claim {
        claim,
        basis: "lipschitz linearization",
        value: None,
        holds: true,
    }
}

fn radius_claim(p: u32, radius: f64) -> Claim {
    let what = if p == 1 {
        "spectral radius of the expectation matrix".to_string()
    } else {
        format!("p-radius rho(E[S^(x){p}])^(1/{p})")
    };
    Claim {
        claim: format!("{what} is below 1"),
        basis: "perron root of nonnegative expectation",
        value: Some(radius),
        holds: radius < 1.0 - BOUNDARY_TOL,
    }
}

/// p-th mean stability of the undelayed system via its comparison system.
pub fn check_first_mean_stable(model: &SystemModel, p: u32, opts: &AnalysisOptions) -> Result<StabilityReport, StabilityError> {
    let (e, radius) = model_p_radius(model, p, &opts.spectral)?;
    let mut chain = vec![lipschitz_claim(model)];
    chain.push(Claim {
        claim: if p == 1 {
            "expectation matrix E[S] formed entrywise".into()
        } else {
            format!("moment matrix E[S^(x){p}] formed ({} x {})", e.rows(), e.cols())
        },
        basis: "expectation of nonnegative matrices",
        value: None,
        holds: true,
    });
    chain.push(radius_claim(p, radius));
    let (fp, fp_claim) = fixed_point_claim(model, &opts.fixed_point);
    chain.push(fp_claim);
    let (verdict, note) = decide(Scope::Undelayed, radius, fp.is_some());
    Ok(StabilityReport {
        p,
        scope: Scope::Undelayed,
        expectation_matrix: e,
        p_radius: radius,
        verdict,
        certificate_chain: chain,
        shared_fixed_point: fp,
        note,
    })
}

/// Stability under every bounded random delay pattern, decided on the
/// undelayed expectation matrix.
pub fn check_patient_stability(model: &SystemModel, opts: &AnalysisOptions) -> Result<StabilityReport, StabilityError> {
    let mut report = check_first_mean_stable(model, 1, opts)?;
    let holds = report.p_radius < 1.0 - BOUNDARY_TOL;
    report.certificate_chain.push(Claim {
        claim: "for any delay bound L and delay law with the same map marginals, the lag blocks of E[S_L] sum to E[S], \
                and the companion radius is below 1 exactly when the block-sum radius is"
            .into(),
        basis: "block-sum reduction of the delayed expectation",
        value: Some(report.p_radius),
        holds,
    });
    report.scope = Scope::AllDelays;
    let (verdict, note) = decide(Scope::AllDelays, report.p_radius, report.shared_fixed_point.is_some());
    report.verdict = verdict;
    report.note = note;
    Ok(report)
}

/// First-mean stability of one delayed version, computed on the full
/// companion matrix `E[S_L]` without the block-sum shortcut.
pub fn check_delayed_first_mean_stable(
    delayed: &DelayedSwitchedSystem,
    opts: &AnalysisOptions,
) -> Result<StabilityReport, StabilityError> {
    let e = delayed.expected_lipschitz()?;
    let radius = spectral_radius(&e, &opts.spectral)?.radius;
    let mut chain = vec![lipschitz_claim(delayed.base())];
    chain.push(Claim {
        claim: format!(
            "delayed expectation E[S_L] assembled in companion form (L = {}, policy {}, size {})",
            delayed.bound(),
            delayed.policy().kind(),
            e.rows()
        ),
        basis: "per-entry delay marginals",
        value: None,
        holds: true,
    });
    chain.push(Claim {
        claim: "spectral radius of E[S_L] is below 1".into(),
        basis: "perron root of nonnegative expectation",
        value: Some(radius),
        holds: radius < 1.0 - BOUNDARY_TOL,
    });
    let (fp, fp_claim) = fixed_point_claim(delayed.base(), &opts.fixed_point);
    chain.push(fp_claim);
    let fp = fp.map(|x| x.iter().copied().cycle().take(x.len() * (delayed.bound() + 1)).collect());
    let (verdict, note) = decide(Scope::DelayedVersion, radius, fp.is_some());
    Ok(StabilityReport {
        p: 1,
        scope: Scope::DelayedVersion,
        expectation_matrix: e,
        p_radius: radius,
        verdict,
        certificate_chain: chain,
        shared_fixed_point: fp,
        note,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReductionCheck {
    pub rho_companion: f64,
    pub rho_sum: f64,
    /// Both radii strictly below 1, or both at least 1.
    pub equivalent_side_of_one: bool,
    /// Either radius lies within the boundary tolerance of 1.
    pub at_boundary: bool,
}

impl ReductionCheck {
    pub fn summary(&self) -> &'static str {
        match (self.rho_companion < 1.0, self.rho_sum < 1.0) {
            (true, true) => "both below 1",
            (false, false) => "both above 1",
            _ => "on different sides of 1",
        }
    }
}

/// Radii of the companion of `blocks` and of their sum.
pub fn verify_reduction_equivalence(blocks: &[Matrix]) -> Result<ReductionCheck, StabilityError> {
    verify_reduction_equivalence_with(blocks, &SpectralOptions::default())
}

pub fn verify_reduction_equivalence_with(blocks: &[Matrix], opts: &SpectralOptions) -> Result<ReductionCheck, StabilityError> {
    let companion = assemble_companion(blocks)?;
    companion.check_nonnegative()?;
    let mut sum = blocks[0].clone();
    for b in &blocks[1..] {
        sum = sum.add(b)?;
    }
    let rho_companion = spectral_radius(&companion, opts)?.radius;
    let rho_sum = spectral_radius(&sum, opts)?.radius;
    Ok(ReductionCheck {
        rho_companion,
        rho_sum,
        equivalent_side_of_one: (rho_companion < 1.0) == (rho_sum < 1.0),
        at_boundary: (rho_companion - 1.0).abs() <= BOUNDARY_TOL || (rho_sum - 1.0).abs() <= BOUNDARY_TOL,
    })
}
