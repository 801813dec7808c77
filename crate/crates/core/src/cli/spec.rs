//! JSON system specs.
//!
//! ```json
//! {
//!   "n": 2,
//!   "maps": [
//!     {"linear": [[0, 0], [0, 0]], "gain": [[0.5, 1], [0, 0.5]], "bias": [0, 0], "weight": 0.9},
//!     {"linear": [[0, 0], [0, 0]], "gain": [[0.5, 0], [1, 0.5]], "bias": [0, 0], "weight": 0.1}
//!   ],
//!   "delay": {"L": 1, "policy": {"kind": "iid_uniform_entries"}}
//! }
//! ```
//!
//! `maps` may be replaced by `"ensemble": {"lower": [[..]], "upper": [[..]]}`.
//! Policies: `{"kind": "none"}`, `{"kind": "fixed", "delays": [[..]]}`,
//! `{"kind": "iid_uniform_entries"}`, and
//! `{"kind": "explicit", "per_map": [[{"delays": [[..]], "prob": p}, ..], ..]}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delay::{DelayError, DelayMatrix, DelayPolicy, DelayedSwitchedSystem};
use crate::linalg::Matrix;
use crate::systems::{IntervalEnsemble, MapSpec, SwitchedSystem, SystemError, SystemModel};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema: {0}")]
    Schema(String),
    #[error("schema: {0}")]
    System(#[from] SystemError),
    #[error("schema: {0}")]
    Delay(#[from] DelayError),
}

impl SpecError {
    /// `(line, column)` of a JSON syntax or type error.
    pub fn location(&self) -> Option<(usize, usize)> {
        match self {
            SpecError::Json(e) => Some((e.line(), e.column())),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapJson {
    pub linear: Matrix,
    pub gain: Matrix,
    pub bias: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleJson {
    pub lower: Matrix,
    pub upper: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedDelays {
    pub delays: Vec<Vec<usize>>,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyJson {
    None,
    Fixed { delays: Vec<Vec<usize>> },
    IidUniformEntries,
    Explicit { per_map: Vec<Vec<WeightedDelays>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayJson {
    #[serde(rename = "L")]
    pub bound: usize,
    pub policy: PolicyJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecJson {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maps: Option<Vec<MapJson>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<DelayJson>,
    /// Lipschitz matrix of each map; written by `embed --lipschitz` and
    /// ignored on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<Vec<Matrix>>,
}

/// A validated spec.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub model: SystemModel,
    pub delay: Option<(usize, DelayPolicy)>,
    pub lipschitz: Option<Vec<Matrix>>,
}

impl SystemSpec {
    pub fn new(model: SystemModel) -> Self {
        Self {
            model,
            delay: None,
            lipschitz: None,
        }
    }

    pub fn delayed(&self) -> Result<Option<DelayedSwitchedSystem>, DelayError> {
        self.delay
            .as_ref()
            .map(|(bound, policy)| DelayedSwitchedSystem::new(self.model.clone(), policy.clone(), *bound))
            .transpose()
    }

    pub fn to_json_value(&self) -> SpecJson {
        let n = self.model.dim();
        let (maps, ensemble) = match &self.model {
            SystemModel::Switched(s) => (
                Some(
                    s.maps()
                        .iter()
                        .zip(s.weights())
                        .map(|(f, w)| MapJson {
                            linear: f.linear().clone(),
                            gain: f.gain().clone(),
                            bias: f.bias().to_vec(),
                            weight: *w,
                        })
                        .collect(),
                ),
                None,
            ),
            SystemModel::Ensemble(e) => (
                None,
                Some(EnsembleJson {
                    lower: e.lower().clone(),
                    upper: e.upper().clone(),
                }),
            ),
        };
        SpecJson {
            n,
            maps,
            ensemble,
            delay: self.delay.as_ref().map(|(bound, p)| DelayJson {
                bound: *bound,
                policy: policy_to_json(p),
            }),
            lipschitz: self.lipschitz.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("spec serializes")
    }
}

pub fn policy_to_json(p: &DelayPolicy) -> PolicyJson {
    match p {
        DelayPolicy::None => PolicyJson::None,
        DelayPolicy::Fixed(d) => PolicyJson::Fixed { delays: d.to_rows() },
        DelayPolicy::IidUniformEntries => PolicyJson::IidUniformEntries,
        DelayPolicy::Explicit(lists) => PolicyJson::Explicit {
            per_map: lists
                .iter()
                .map(|l| {
                    l.iter()
                        .map(|(d, q)| WeightedDelays {
                            delays: d.to_rows(),
                            prob: *q,
                        })
                        .collect()
                })
                .collect(),
        },
    }
}

pub fn policy_from_json(p: &PolicyJson, bound: usize) -> Result<DelayPolicy, SpecError> {
    Ok(match p {
        PolicyJson::None => DelayPolicy::None,
        PolicyJson::Fixed { delays } => DelayPolicy::Fixed(DelayMatrix::new(delays, bound)?),
        PolicyJson::IidUniformEntries => DelayPolicy::IidUniformEntries,
        PolicyJson::Explicit { per_map } => DelayPolicy::Explicit(
            per_map
                .iter()
                .map(|l| {
                    l.iter()
                        .map(|w| Ok((DelayMatrix::new(&w.delays, bound)?, w.prob)))
                        .collect::<Result<Vec<_>, SpecError>>()
                })
                .collect::<Result<_, _>>()?,
        ),
    })
}

fn check_n(what: &str, n: usize, actual: usize) -> Result<(), SpecError> {
    if actual != n {
        return Err(SpecError::Schema(format!("{what} has dimension {actual}, but \"n\" is {n}")));
    }
    Ok(())
}

impl TryFrom<SpecJson> for SystemSpec {
    type Error = SpecError;

    fn try_from(j: SpecJson) -> Result<Self, SpecError> {
        let model: SystemModel = match (j.maps, j.ensemble) {
            (Some(_), Some(_)) => {
                return Err(SpecError::Schema("give either \"maps\" or \"ensemble\", not both".into()))
            }
            (None, None) => return Err(SpecError::Schema("missing field `maps` (or `ensemble`)".into())),
            (Some(maps), None) => {
                if maps.is_empty() {
                    return Err(SpecError::Schema("\"maps\" is empty".into()));
                }
                let mut specs = Vec::with_capacity(maps.len());
                let mut weights = Vec::with_capacity(maps.len());
                for (k, m) in maps.into_iter().enumerate() {
                    check_n(&format!("maps[{k}].linear"), j.n, m.linear.rows())?;
                    let f = MapSpec::new(m.linear, m.gain, m.bias)
                        .map_err(|e| SpecError::Schema(format!("maps[{k}]: {e}")))?;
                    specs.push(f);
                    weights.push(m.weight);
                }
                SwitchedSystem::new(specs, weights)?.into()
            }
            (None, Some(e)) => {
                check_n("ensemble.lower", j.n, e.lower.rows())?;
                IntervalEnsemble::new(e.lower, e.upper)?.into()
            }
        };
        let delay = match j.delay {
            Some(d) => {
                let policy = policy_from_json(&d.policy, d.bound)?;
                // Validate now so schema errors surface before any computation.
                DelayedSwitchedSystem::new(model.clone(), policy.clone(), d.bound)?;
                Some((d.bound, policy))
            }
            None => None,
        };
        Ok(SystemSpec {
            model,
            delay,
            lipschitz: j.lipschitz,
        })
    }
}

pub fn parse_spec(text: &str) -> Result<SystemSpec, SpecError> {
    let j: SpecJson = serde_json::from_str(text)?;
    j.try_into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlocksJson {
    pub blocks: Vec<Matrix>,
}

pub fn parse_blocks(text: &str) -> Result<Vec<Matrix>, SpecError> {
    let b: BlocksJson = serde_json::from_str(text)?;
    if b.blocks.is_empty() {
        return Err(SpecError::Schema("\"blocks\" is empty".into()));
    }
    for (k, m) in b.blocks.iter().enumerate() {
        if !m.is_nonnegative() {
            return Err(SpecError::Schema(format!("blocks[{k}] has a negative or non-finite entry")));
        }
    }
    Ok(b.blocks)
}
