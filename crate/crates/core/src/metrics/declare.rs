//! DECLARE constraints under finite-trace semantics. A trace without the
//! activating activity satisfies a constraint vacuously.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::eventlog::{EventLog, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Template {
    Existence,
    RespondedExistence,
    Response,
    AlternateResponse,
    ChainResponse,
    Precedence,
    AlternatePrecedence,
    ChainPrecedence,
    CoExistence,
    NotCoExistence,
    NotSuccession,
}

impl Template {
    pub const ALL: [Template; 11] = [
        Template::Existence,
        Template::RespondedExistence,
        Template::Response,
        Template::AlternateResponse,
        Template::ChainResponse,
        Template::Precedence,
        Template::AlternatePrecedence,
        Template::ChainPrecedence,
        Template::CoExistence,
        Template::NotCoExistence,
        Template::NotSuccession,
    ];

    pub fn is_unary(self) -> bool {
        self == Template::Existence
    }

    /// Templates whose meaning does not depend on argument order.
    pub fn is_symmetric(self) -> bool {
        matches!(self, Template::CoExistence | Template::NotCoExistence)
    }

    /// Whether `trace` satisfies the template instantiated with `a` (and `b`
    /// for binary templates).
    pub fn holds<S: AsRef<str>>(self, a: &str, b: &str, trace: &[S]) -> bool {
        let is = |x: &S, y: &str| x.as_ref() == y;
        let has = |y: &str| trace.iter().any(|x| is(x, y));
        match self {
            Template::Existence => has(a),
            Template::RespondedExistence => !has(a) || has(b),
            Template::Response => {
                let last_a = trace.iter().rposition(|x| is(x, a));
                let last_b = trace.iter().rposition(|x| is(x, b));
                match (last_a, last_b) {
                    (None, _) => true,
                    (Some(i), Some(j)) => j > i,
                    (Some(_), None) => false,
                }
            }
            Template::AlternateResponse => {
                let mut pending = false;
                for x in trace {
                    if is(x, a) {
                        if pending {
                            return false;
                        }
                        pending = true;
                    } else if is(x, b) {
                        pending = false;
                    }
                }
                !pending
            }
            Template::ChainResponse => trace
                .iter()
                .enumerate()
                .filter(|(_, x)| is(x, a))
                .all(|(i, _)| trace.get(i + 1).is_some_and(|y| is(y, b))),
            Template::Precedence => {
                let mut seen_a = false;
                for x in trace {
                    if is(x, b) && !seen_a {
                        return false;
                    }
                    seen_a |= is(x, a);
                }
                true
            }
            Template::AlternatePrecedence => {
                let mut open = false;
                for x in trace {
                    if is(x, a) {
                        open = true;
                    } else if is(x, b) {
                        if !open {
                            return false;
                        }
                        open = false;
                    }
                }
                true
            }
            Template::ChainPrecedence => trace
                .iter()
                .enumerate()
                .filter(|(_, x)| is(x, b))
                .all(|(i, _)| i > 0 && is(&trace[i - 1], a)),
            Template::CoExistence => has(a) == has(b),
            Template::NotCoExistence => !(has(a) && has(b)),
            Template::NotSuccession => {
                let mut seen_a = false;
                for x in trace {
                    if is(x, b) && seen_a {
                        return false;
                    }
                    seen_a |= is(x, a);
                }
                true
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeclareConstraint {
    pub template: Template,
    pub activation: String,
    pub target: Option<String>,
    /// Fraction of traces of the mining log that satisfy the constraint.
    pub support: f64,
}

impl DeclareConstraint {
    pub fn holds<S: AsRef<str>>(&self, trace: &[S]) -> bool {
        self.template
            .holds(&self.activation, self.target.as_deref().unwrap_or(""), trace)
    }
}

impl fmt::Display for DeclareConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.target {
            Some(t) => write!(f, "{:?}({}, {})", self.template, self.activation, t),
            None => write!(f, "{:?}({})", self.template, self.activation),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeclareModel {
    pub constraints: Vec<DeclareConstraint>,
}

impl DeclareModel {
    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    /// Fraction of constraints satisfied by `trace`; `None` for an empty model.
    pub fn satisfaction<S: AsRef<str>>(&self, trace: &[S]) -> Option<f64> {
        if self.constraints.is_empty() {
            return None;
        }
        let ok = self.constraints.iter().filter(|c| c.holds(trace)).count();
        Some(ok as f64 / self.constraints.len() as f64)
    }
}

/// Variants of `log` with their multiplicities.
pub(crate) fn variant_counts(log: &EventLog) -> BTreeMap<Variant, usize> {
    let mut counts = BTreeMap::new();
    for t in log.traces() {
        *counts.entry(t.variant()).or_insert(0) += 1;
    }
    counts
}

/// Every instantiation of the template catalog over the log's activities
/// whose support reaches `min_support`. Binary templates use distinct
/// activities; symmetric templates list each unordered pair once.
pub fn mine_declare(log: &EventLog, min_support: f64) -> DeclareModel {
    mine_declare_with(log, min_support, &Template::ALL)
}

/// [`mine_declare`] over a custom template catalog.
pub fn mine_declare_with(log: &EventLog, min_support: f64, templates: &[Template]) -> DeclareModel {
    let alphabet: Vec<&String> = log.activity_alphabet().iter().collect();
    let variants = variant_counts(log);
    let n = log.len() as f64;
    let support = |t: Template, a: &str, b: &str| {
        variants
            .iter()
            .filter(|(v, _)| t.holds(a, b, v))
            .map(|(_, c)| *c)
            .sum::<usize>() as f64
            / n
    };
    let mut constraints = Vec::new();
    if log.is_empty() {
        return DeclareModel { constraints };
    }
    for &t in templates {
        for (i, a) in alphabet.iter().enumerate() {
            if t.is_unary() {
                let s = support(t, a, "");
                if s + 1e-12 >= min_support {
                    constraints.push(DeclareConstraint {
                        template: t,
                        activation: a.to_string(),
                        target: None,
                        support: s,
                    });
                }
                continue;
            }
            for (j, b) in alphabet.iter().enumerate() {
                if i == j || (t.is_symmetric() && j < i) {
                    continue;
                }
                let s = support(t, a, b);
                if s + 1e-12 >= min_support {
                    constraints.push(DeclareConstraint {
                        template: t,
                        activation: a.to_string(),
                        target: Some(b.to_string()),
                        support: s,
                    });
                }
            }
        }
    }
    DeclareModel { constraints }
}
