//! Solver reports shared by the library entry points and the command line.

use serde::{Deserialize, Serialize};

use crate::mdp::Policy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    NotConverged,
}

/// A named inequality `value ≤ limit` checked after a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub holds: bool,
}

impl Certificate {
    pub fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Certificate { name: name.to_string(), value, limit, holds: value <= limit }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: String,
    pub status: SolveStatus,
    pub value: Vec<f64>,
    pub policy: Option<Policy>,
    /// `αᵀv` for the initial distribution `α`.
    pub objective: f64,
    pub iterations: usize,
    pub residual: f64,
    pub wall_time_s: f64,
    pub certificates: Vec<Certificate>,
}

impl SolveReport {
    pub fn new(method: &str, value: Vec<f64>, objective: f64) -> Self {
        SolveReport {
            method: method.to_string(),
            status: SolveStatus::Converged,
            value,
            policy: None,
            objective,
            iterations: 0,
            residual: 0.0,
            wall_time_s: 0.0,
            certificates: Vec::new(),
        }
    }

    pub fn all_certificates_hold(&self) -> bool {
        self.certificates.iter().all(|c| c.holds)
    }
}
