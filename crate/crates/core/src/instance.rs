//! JSON instance documents.
//!
//! ```json
//! {
//!   "states": ["s1", "s2"],
//!   "actions": ["a1", "a2"],
//!   "discount": 0.9,
//!   "initial": [0.5, 0.5],
//!   "rewards": [[1.0, 0.0], [0.0, 1.0]],
//!   "nominal": [[[0.5, 0.5], [0.1, 0.9]], [[0.5, 0.5], [0.9, 0.1]]],
//!   "uncertainty": { "kind": "box", "lower_factor": 0.9, "upper_factor": 1.1 },
//!   "regularization": { "baseline": "uniform", "b": "auto", "epsilon": 0.05 }
//! }
//! ```
//!
//! Uncertainty kinds are `singleton`, `box`, `polyhedral` (per-pair
//! `{a, c}`), `srect` (per-state joint `{a, c}` over index `a·S + s'`) and
//! `explicit` (per-pair sets as serialised by [`UncertaintySet`]).

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RmdpError};
use crate::mdp::{Mdp, Policy};
use crate::regularized::{choose_b, RegularizationConfig};
use crate::robust::{Rectangularity, Rmdp};
use crate::uncertainty::{SRectangularSet, UncertaintySet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDocument {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub discount: f64,
    pub initial: Vec<f64>,
    pub rewards: Vec<Vec<f64>>,
    pub nominal: Vec<Vec<Vec<f64>>>,
    pub uncertainty: UncertaintyDescriptor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularization: Option<RegularizationDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UncertaintyDescriptor {
    Singleton,
    Box { lower_factor: f64, upper_factor: f64 },
    Polyhedral { sets: Vec<Vec<Rows>> },
    Srect { sets: Vec<Rows> },
    Explicit { sets: Vec<Vec<UncertaintySet>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rows {
    pub a: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizationDescriptor {
    #[serde(default = "uniform_baseline")]
    pub baseline: Baseline,
    pub b: Strength,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

fn uniform_baseline() -> Baseline {
    Baseline::Named("uniform".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Baseline {
    Named(String),
    Explicit(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Strength {
    Value(f64),
    Named(String),
}

/// A validated model together with its source document.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub document: InstanceDocument,
    pub rmdp: Rmdp,
    pub regularization: Option<RegularizationConfig>,
}

const BUNDLED: &[(&str, &str)] = &[
    ("example1", include_str!("../instances/example1.json")),
    ("example1-rescaled", include_str!("../instances/example1-rescaled.json")),
    ("tiny-srect", include_str!("../instances/tiny-srect.json")),
    ("tiny-kl", include_str!("../instances/tiny-kl.json")),
];

/// Names of the instances shipped with the library.
pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

pub fn bundled_text(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn bundled(name: &str) -> Result<Instance> {
    let text = bundled_text(name)
        .ok_or_else(|| RmdpError::Validation(format!("no bundled instance named '{name}'")))?;
    parse_instance(text)
}

/// Loads a document from `path`, or a bundled instance when `path` has the
/// form `bundled:NAME`.
pub fn load_instance(path: impl AsRef<Path>) -> Result<Instance> {
    let path = path.as_ref();
    if let Some(name) = path.to_str().and_then(|p| p.strip_prefix("bundled:")) {
        return bundled(name);
    }
    let text = std::fs::read_to_string(path).map_err(|e| RmdpError::Io(format!("{}: {e}", path.display())))?;
    parse_instance(&text)
}

pub fn parse_instance(text: &str) -> Result<Instance> {
    let document: InstanceDocument = serde_json::from_str(text).map_err(|e| RmdpError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Instance::from_document(document)
}

fn check_labels(labels: &[String], what: &str) -> Result<()> {
    if labels.is_empty() {
        return Err(RmdpError::Validation(format!("{what} labels must be nonempty")));
    }
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l) {
            return Err(RmdpError::Validation(format!("duplicate {what} label '{l}'")));
        }
    }
    Ok(())
}

impl Instance {
    pub fn from_document(document: InstanceDocument) -> Result<Self> {
        check_labels(&document.states, "state")?;
        check_labels(&document.actions, "action")?;
        let (ns, na) = (document.states.len(), document.actions.len());
        let base = Mdp::new(
            document.rewards.clone(),
            document.nominal.clone(),
            document.discount,
            document.initial.clone(),
        )?;
        if base.n_states != ns || base.n_actions != na {
            return Err(RmdpError::Validation(format!(
                "labels name {ns} states and {na} actions but the arrays have {} and {}",
                base.n_states, base.n_actions
            )));
        }
        let rmdp = match &document.uncertainty {
            UncertaintyDescriptor::Singleton => Rmdp::nominal(base),
            UncertaintyDescriptor::Box { lower_factor, upper_factor } => {
                Rmdp::with_box_factors(base, *lower_factor, *upper_factor)?
            }
            UncertaintyDescriptor::Polyhedral { sets } => {
                check_shape(sets.len(), ns, "polyhedral state rows")?;
                let mut out = Vec::with_capacity(ns);
                for (s, row) in sets.iter().enumerate() {
                    check_shape(row.len(), na, &format!("polyhedral sets of state {s}"))?;
                    out.push(
                        row.iter()
                            .enumerate()
                            .map(|(a, r)| {
                                UncertaintySet::polyhedral(r.a.clone(), r.c.clone())
                                    .map_err(|e| named(e, &format!("(s={s}, a={a})")))
                            })
                            .collect::<Result<Vec<_>>>()?,
                    );
                }
                Rmdp::sa(base, out)?
            }
            UncertaintyDescriptor::Srect { sets } => {
                check_shape(sets.len(), ns, "s-rectangular sets")?;
                let out = sets
                    .iter()
                    .enumerate()
                    .map(|(s, r)| {
                        SRectangularSet::new(ns, na, r.a.clone(), r.c.clone()).map_err(|e| named(e, &format!("(s={s})")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Rmdp::s_rect(base, out)?
            }
            UncertaintyDescriptor::Explicit { sets } => Rmdp::sa(base, sets.clone())?,
        };
        let regularization = match &document.regularization {
            None => None,
            Some(desc) => Some(resolve_regularization(desc, &rmdp)?),
        };
        Ok(Instance { document, rmdp, regularization })
    }

    /// Builds a document for a model constructed in code.
    pub fn from_model(rmdp: &Rmdp, regularization: Option<&RegularizationConfig>) -> Self {
        let base = &rmdp.base;
        let uncertainty = match &rmdp.uncertainty {
            Rectangularity::Sa { sets } => UncertaintyDescriptor::Explicit { sets: sets.clone() },
            Rectangularity::S { sets } => UncertaintyDescriptor::Srect {
                sets: sets.iter().map(|s| Rows { a: s.a.clone(), c: s.c.clone() }).collect(),
            },
        };
        let document = InstanceDocument {
            states: (0..base.n_states).map(|s| format!("s{}", s + 1)).collect(),
            actions: (0..base.n_actions).map(|a| format!("a{}", a + 1)).collect(),
            discount: base.discount,
            initial: base.initial.clone(),
            rewards: base.rewards.clone(),
            nominal: base.transitions.clone(),
            uncertainty,
            regularization: regularization.map(|cfg| RegularizationDescriptor {
                baseline: Baseline::Explicit(cfg.baseline.probs.clone()),
                b: Strength::Value(cfg.b),
                epsilon: None,
            }),
        };
        Instance { document, rmdp: rmdp.clone(), regularization: regularization.cloned() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.document).expect("instance documents always serialise")
    }

    pub fn state_labels(&self) -> &[String] {
        &self.document.states
    }

    pub fn action_labels(&self) -> &[String] {
        &self.document.actions
    }
}

fn named(err: RmdpError, at: &str) -> RmdpError {
    match err {
        RmdpError::Validation(m) => RmdpError::Validation(format!("{at}: {m}")),
        RmdpError::EmptySet => RmdpError::Validation(format!("{at}: uncertainty set is empty")),
        other => other,
    }
}

fn check_shape(got: usize, want: usize, what: &str) -> Result<()> {
    if got != want {
        return Err(RmdpError::Validation(format!("{what}: expected {want} entries, got {got}")));
    }
    Ok(())
}

/// Strength used when `b` is `"auto"`: `choose_b(ε, λ, |A|)`, or 1 when a
/// single action makes any strength exact.
pub fn auto_strength(epsilon: f64, discount: f64, n_actions: usize) -> Result<f64> {
    let b = choose_b(epsilon, discount, n_actions)?;
    Ok(if b > 0.0 { b } else { 1.0 })
}

fn resolve_regularization(desc: &RegularizationDescriptor, rmdp: &Rmdp) -> Result<RegularizationConfig> {
    let (ns, na) = (rmdp.n_states(), rmdp.n_actions());
    let baseline = match &desc.baseline {
        Baseline::Named(n) if n == "uniform" => Policy::uniform(ns, na),
        Baseline::Named(n) => {
            return Err(RmdpError::Validation(format!("unknown baseline '{n}' (expected \"uniform\" or an array)")))
        }
        Baseline::Explicit(p) => Policy { probs: p.clone() },
    };
    let b = match &desc.b {
        Strength::Value(b) => *b,
        Strength::Named(n) if n == "auto" => {
            let eps = desc
                .epsilon
                .ok_or_else(|| RmdpError::Validation("b = \"auto\" requires epsilon".into()))?;
            auto_strength(eps, rmdp.discount(), na)?
        }
        Strength::Named(n) => {
            return Err(RmdpError::Validation(format!("unknown strength '{n}' (expected a number or \"auto\")")))
        }
    };
    let cfg = RegularizationConfig::new(baseline, b)?;
    cfg.baseline.validate(ns, na)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_instances_load() {
        for name in bundled_names() {
            let inst = bundled(name).unwrap();
            assert!(inst.regularization.is_some(), "{name}");
        }
        let e = bundled("example1").unwrap();
        assert_eq!(e.rmdp.base.rewards[0][1], 11.0);
        let r = bundled("example1-rescaled").unwrap();
        let b = r.regularization.unwrap().b;
        assert!((b - 109.861).abs() < 1e-3);
        assert!(bundled("tiny-srect").unwrap().rmdp.is_s_rectangular());
    }

    #[test]
    fn rescaled_document_matches_rescaling() {
        let e = bundled("example1").unwrap().rmdp;
        let r = bundled("example1-rescaled").unwrap().rmdp;
        let (scaled, factor) = crate::regularized::rescale_rewards(&e);
        assert_eq!(factor, 11.0);
        assert_eq!(scaled.base.rewards, r.base.rewards);
    }

    #[test]
    fn negative_reward_names_the_pair() {
        let text = bundled_text("example1").unwrap().replace("[2.0, 11.0, 10.0]", "[2.0, -11.0, 10.0]");
        let err = parse_instance(&text).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, RmdpError::Validation(_)));
        assert!(msg.contains("s=0") && msg.contains("a=1"), "{msg}");
    }

    #[test]
    fn bad_nominal_row_is_rejected() {
        let text = bundled_text("example1").unwrap().replace("[0.1, 0.9]", "[0.1, 0.8]");
        assert!(matches!(parse_instance(&text), Err(RmdpError::Validation(_))));
    }

    #[test]
    fn bad_discount_is_rejected() {
        let text = bundled_text("example1").unwrap().replace("\"discount\": 0.8", "\"discount\": 1.2");
        assert!(matches!(parse_instance(&text), Err(RmdpError::Validation(_))));
    }

    #[test]
    fn parse_errors_carry_positions() {
        match parse_instance("{\n  \"states\": [\"a\",\n  oops\n}") {
            Err(RmdpError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_labels_are_rejected() {
        let text = bundled_text("example1").unwrap().replace("\"a3\"", "\"a2\"");
        let err = parse_instance(&text).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn round_trip_is_exact() {
        for name in bundled_names() {
            let inst = bundled(name).unwrap();
            let again = parse_instance(&inst.to_json()).unwrap();
            assert_eq!(inst, again);
        }
        let inst = bundled("example1").unwrap();
        let built = Instance::from_model(&inst.rmdp, inst.regularization.as_ref());
        let again = parse_instance(&built.to_json()).unwrap();
        assert_eq!(again.rmdp, inst.rmdp);
        assert_eq!(again.regularization, inst.regularization);
    }
}
