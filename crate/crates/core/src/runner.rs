//! Evaluation runner: drives every test case of a spec through the action
//! generator and its environment, collects per-test outcomes, and
//! aggregates them into a report.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actiongen::{generate_multi, generate_single, ExitReason, GenOptions};
use crate::backend::CompletionClient;
use crate::envs::{evaluate_single, resolve_config, EnvConfig, EnvError, EvalOutcome};
use crate::metrics::{aggregate, categorize, ErrorCategory, Report};
use crate::spec::{Mode, TestCase, ToolSpec};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("failed to build thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Clone)]
pub struct EvalOptions {
    pub gen: GenOptions,
    pub parallelism: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            gen: GenOptions::default(),
            parallelism: 1,
            seed: 0,
        }
    }
}

/// Per-test result: an evaluated outcome, or an infrastructure failure
/// (backend unavailable, replay miss, prompt too long) that never counts
/// against the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TestDisposition {
    Evaluated(EvalOutcome),
    Infrastructure { test_id: String, reason: String },
}

impl TestDisposition {
    pub fn test_id(&self) -> &str {
        match self {
            TestDisposition::Evaluated(outcome) => &outcome.test_id,
            TestDisposition::Infrastructure { test_id, .. } => test_id,
        }
    }

    pub fn outcome(&self) -> Option<&EvalOutcome> {
        match self {
            TestDisposition::Evaluated(outcome) => Some(outcome),
            TestDisposition::Infrastructure { .. } => None,
        }
    }
}

/// A full evaluation run: aggregate plus per-test rows, in spec order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_id: String,
    pub seed: u64,
    pub report: Report,
    pub infrastructure_failures: usize,
    pub per_test: Vec<TestDisposition>,
}

impl RunReport {
    pub fn has_infrastructure_failures(&self) -> bool {
        self.infrastructure_failures > 0
    }
}

fn multi_step_outcome(
    spec: &ToolSpec,
    test: &TestCase,
    config: &EnvConfig,
    client: &dyn CompletionClient,
    gen: &GenOptions,
) -> TestDisposition {
    let mut env = match config.make_env() {
        Some(env) => env,
        None => {
            return TestDisposition::Infrastructure {
                test_id: test.id.clone(),
                reason: format!(
                    "environment {:?} does not support stepping",
                    spec.env_binding
                ),
            }
        }
    };
    env.reset(test);
    let trajectory = match generate_multi(&test.goal_text, spec, env.as_mut(), client, gen) {
        Ok(t) => t,
        Err(err) => {
            return TestDisposition::Infrastructure {
                test_id: test.id.clone(),
                reason: err.to_string(),
            }
        }
    };

    let executable = trajectory.exit_reason != ExitReason::NonExecutableStep;
    let reward = trajectory.final_reward().unwrap_or(0.0);
    let success = trajectory.exit_reason == ExitReason::EnvExit && reward > 0.0;
    let combined = trajectory.combined_program();
    let category = if success {
        ErrorCategory::None
    } else if !executable {
        ErrorCategory::NonExecutable
    } else {
        categorize(true, false, Some(&combined), &test.gold_programs)
    };
    TestDisposition::Evaluated(EvalOutcome {
        test_id: test.id.clone(),
        executable,
        success,
        metrics: [
            ("steps".to_string(), trajectory.steps.len() as f64),
            ("reward".to_string(), reward),
        ]
        .into(),
        category,
        detail: None,
    })
}

fn single_step_outcome(
    spec: &ToolSpec,
    test: &TestCase,
    client: &dyn CompletionClient,
    gen: &GenOptions,
) -> TestDisposition {
    let result = match generate_single(&test.goal_text, spec, client, gen) {
        Ok(r) => r,
        Err(err) => {
            return TestDisposition::Infrastructure {
                test_id: test.id.clone(),
                reason: err.to_string(),
            }
        }
    };
    match evaluate_single(spec, test, &result.post, &result.program) {
        Ok(outcome) => TestDisposition::Evaluated(outcome),
        Err(err) => TestDisposition::Infrastructure {
            test_id: test.id.clone(),
            reason: err.to_string(),
        },
    }
}

fn evaluate_test(
    spec: &ToolSpec,
    test: &TestCase,
    config: &EnvConfig,
    client: &dyn CompletionClient,
    gen: &GenOptions,
) -> TestDisposition {
    match spec.mode {
        Mode::SingleStep => single_step_outcome(spec, test, client, gen),
        Mode::MultiStep => multi_step_outcome(spec, test, config, client, gen),
    }
}

/// Evaluate every test case of the spec. Results are keyed by test id and
/// reported in spec order regardless of parallelism.
pub fn evaluate_spec(
    spec: &ToolSpec,
    client: &dyn CompletionClient,
    opts: &EvalOptions,
) -> Result<RunReport, RunError> {
    let config = resolve_config(spec)?;

    let per_test: Vec<TestDisposition> = if opts.parallelism <= 1 {
        spec.tests
            .iter()
            .map(|test| evaluate_test(spec, test, &config, client, &opts.gen))
            .collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.parallelism)
            .build()
            .map_err(|e| RunError::ThreadPool(e.to_string()))?;
        pool.install(|| {
            spec.tests
                .par_iter()
                .map(|test| evaluate_test(spec, test, &config, client, &opts.gen))
                .collect()
        })
    };

    let outcomes: Vec<EvalOutcome> = per_test
        .iter()
        .filter_map(|d| d.outcome().cloned())
        .collect();
    let infrastructure_failures = per_test.len() - outcomes.len();

    Ok(RunReport {
        tool_id: spec.tool_id.clone(),
        seed: opts.seed,
        report: aggregate(&outcomes),
        infrastructure_failures,
        per_test,
    })
}

/// Re-aggregate previously saved dispositions, e.g. across several runs.
pub fn reaggregate(dispositions: &[TestDisposition]) -> (Report, usize) {
    let outcomes: Vec<EvalOutcome> = dispositions
        .iter()
        .filter_map(|d| d.outcome().cloned())
        .collect();
    let infrastructure = dispositions.len() - outcomes.len();
    (aggregate(&outcomes), infrastructure)
}
