//! Simulated tool environments: they execute parsed programs (or curl
//! lines), judge executability and success, and implement the generic
//! stepping interface for multi-step tasks.

mod home_search;
mod multistep;
mod rest;
mod trip_booking;
mod virtualhome;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use home_search::execute_home_search;
pub use multistep::{env_step, CounterConfig, CounterEnv, Environment};
pub use rest::{execute_rest, parse_curl, CurlRequest, RestConfig, RouteEntry};
pub use trip_booking::{execute_trip_booking, BookingRules, TripBookingConfig};
pub use virtualhome::{execute_virtualhome, VirtualHomeConfig};

use crate::metrics::ErrorCategory;
use crate::program::{extract_curl_line, ActionProgram, ApiCall, Literal, ParseError};
use crate::spec::{TestCase, ToolSpec};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("environment stepped after a terminal observation")]
    SteppedAfterTerminal,
    #[error("missing environment config for binding {0:?}")]
    MissingConfig(String),
    #[error("environment {0:?} does not support stepping")]
    NotSteppable(String),
}

/// One observation returned by a stepping environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Observation {
    pub text: String,
    pub terminal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
}

/// The criteria a builder-style program establishes before its final search
/// call: one canonicalized argument tuple per setter, later calls
/// overwriting earlier ones.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CriteriaSet {
    entries: BTreeMap<String, String>,
}

impl CriteriaSet {
    pub fn set_call(&mut self, call: &ApiCall) {
        self.entries
            .insert(call.name.clone(), canon_args(&call.args));
    }

    pub fn insert_canon(&mut self, name: &str, args: &str) {
        self.entries.insert(name.to_string(), args.to_string());
    }

    /// Build from setter calls, in order, with overwrite semantics.
    pub fn from_setter_calls<'a, I>(calls: I) -> Self
    where
        I: IntoIterator<Item = &'a ApiCall>,
    {
        let mut set = CriteriaSet::default();
        for call in calls {
            set.set_call(call);
        }
        set
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries matching in both setter name and argument tuple.
    pub fn intersection_size(&self, other: &CriteriaSet) -> usize {
        self.entries
            .iter()
            .filter(|(name, args)| other.entries.get(*name) == Some(args))
            .count()
    }
}

fn canon_args(args: &[Literal]) -> String {
    args.iter()
        .map(Literal::canon)
        .collect::<Vec<_>>()
        .join(", ")
}

/// The outcome of evaluating one test case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub test_id: String,
    pub executable: bool,
    pub success: bool,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
    pub category: ErrorCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl EvalOutcome {
    pub fn non_executable(test_id: &str, detail: impl Into<String>) -> Self {
        EvalOutcome {
            test_id: test_id.to_string(),
            executable: false,
            success: false,
            metrics: BTreeMap::new(),
            category: ErrorCategory::NonExecutable,
            detail: Some(detail.into()),
        }
    }

    pub fn with_metric(mut self, key: &str, value: f64) -> Self {
        self.metrics.insert(key.to_string(), value);
        self
    }
}

/// Environment configuration loaded alongside a tool spec.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    HomeSearch,
    TripBooking(TripBookingConfig),
    VirtualHome(VirtualHomeConfig),
    Rest(RestConfig),
    Counter(CounterConfig),
}

impl EnvConfig {
    pub fn supports_stepping(&self) -> bool {
        matches!(self, EnvConfig::Counter(_))
    }

    /// Instantiate a fresh stepping environment, for multi-step bindings.
    pub fn make_env(&self) -> Option<Box<dyn Environment>> {
        match self {
            EnvConfig::Counter(cfg) => Some(Box::new(CounterEnv::new(cfg.clone()))),
            _ => None,
        }
    }
}

/// Resolve the spec's environment config, defaulting where the binding
/// needs no parameters.
pub fn resolve_config(spec: &ToolSpec) -> Result<EnvConfig, EnvError> {
    if let Some(cfg) = &spec.env_config {
        return Ok(cfg.clone());
    }
    match spec.env_binding.as_str() {
        "home_search" => Ok(EnvConfig::HomeSearch),
        "counter" => Ok(EnvConfig::Counter(CounterConfig::default())),
        other => Err(EnvError::MissingConfig(other.to_string())),
    }
}

/// Execute a single-step generation against the spec's environment.
///
/// `post_text` is the post-processed completion (used by REST tasks, which
/// extract a curl line rather than parsing calls); `program` is the parse
/// attempt for call-grammar tasks.
pub fn evaluate_single(
    spec: &ToolSpec,
    test: &TestCase,
    post_text: &str,
    program: &Result<ActionProgram, ParseError>,
) -> Result<EvalOutcome, EnvError> {
    let config = resolve_config(spec)?;
    match &config {
        EnvConfig::Rest(cfg) => Ok(execute_rest(extract_curl_line(post_text), test, cfg)),
        EnvConfig::HomeSearch => Ok(match program {
            Ok(p) => execute_home_search(p, test, spec),
            Err(err) => EvalOutcome::non_executable(&test.id, err.to_string()),
        }),
        EnvConfig::TripBooking(cfg) => Ok(match program {
            Ok(p) => execute_trip_booking(p, test, spec, cfg),
            Err(err) => EvalOutcome::non_executable(&test.id, err.to_string()),
        }),
        EnvConfig::VirtualHome(cfg) => Ok(match program {
            Ok(p) => execute_virtualhome(p, test, cfg),
            Err(err) => {
                EvalOutcome::non_executable(&test.id, err.to_string()).with_metric("lcs", 0.0)
            }
        }),
        EnvConfig::Counter(_) => Err(EnvError::NotSteppable(
            "counter environments evaluate trajectories, not single generations".into(),
        )),
    }
}

/// Known-name and arity check shared by the builder-style environments.
pub(crate) fn check_calls_against_spec(
    program: &ActionProgram,
    spec: &ToolSpec,
) -> Result<(), String> {
    for call in &program.calls {
        let func = spec
            .function(&call.name)
            .ok_or_else(|| format!("unknown function {:?}", call.name))?;
        let arity = call.args.len();
        if arity < func.required_arity() || arity > func.max_arity() {
            return Err(format!(
                "function {:?} called with {arity} arguments (expects {}..={})",
                call.name,
                func.required_arity(),
                func.max_arity()
            ));
        }
    }
    Ok(())
}
