//! Tool specifications: the API function pool, demonstration pool, test
//! cases, environment binding, and generation config for one tool, loaded
//! from a JSON document.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::EnvConfig;
use crate::program::{ActionProgram, Multiset};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("failed to read spec")]
    Io(#[from] std::io::Error),
    #[error("failed to parse spec JSON")]
    Json(#[from] serde_json::Error),
    #[error("invalid spec: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Required,
    Optional,
}

/// One declared parameter of an API function.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(default = "required_kind")]
    pub kind: ParamKind,
    /// Enumerated valid literals, when the parameter is restricted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_domain: Option<Vec<String>>,
}

fn required_kind() -> ParamKind {
    ParamKind::Required
}

/// One candidate API function: name, parameters, and the documentation text
/// shown in prompts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiFunction {
    pub name: String,
    #[serde(default)]
    pub params: Vec<ParamSpec>,
    pub doc_text: String,
}

impl ApiFunction {
    pub fn required_arity(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Required)
            .count()
    }

    pub fn max_arity(&self) -> usize {
        self.params.len()
    }
}

/// A human-curated goal/program pair used for in-context demonstration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemonstrationExample {
    pub goal_text: String,
    pub program: ActionProgram,
}

impl DemonstrationExample {
    /// Multiset of API names this demonstration covers.
    pub fn api_multiset(&self) -> Multiset {
        self.program.api_multiset()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareMode {
    #[default]
    ExecuteAndCompare,
    Verbatim,
}

/// One benchmark test case: a goal, its ground-truth program(s), and how the
/// generation is compared.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    pub goal_text: String,
    pub gold_programs: Vec<ActionProgram>,
    /// Canned response for REST tasks; success requires byte equality.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_response: Option<String>,
    #[serde(default)]
    pub compare_mode: CompareMode,
}

impl TestCase {
    /// API multiset of the first gold program.
    pub fn api_multiset(&self) -> Multiset {
        self.gold_programs
            .first()
            .map(ActionProgram::api_multiset)
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SingleStep,
    MultiStep,
}

/// How many API documents to place in the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocCount {
    #[default]
    All,
    Top(usize),
}

/// Per-task generation configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenConfig {
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    #[serde(default)]
    pub num_retrieved_docs: DocCount,
    #[serde(default = "default_num_demos")]
    pub num_demos: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// Model context budget in tokens; prompts are trimmed to fit
    /// `(context_budget_tokens - max_new_tokens) * chars_per_token` characters.
    #[serde(default = "default_context_budget")]
    pub context_budget_tokens: usize,
    #[serde(default = "default_chars_per_token")]
    pub chars_per_token: usize,
}

fn default_max_new_tokens() -> usize {
    128
}
fn default_num_demos() -> usize {
    3
}
fn default_max_steps() -> usize {
    25
}
fn default_context_budget() -> usize {
    2048
}
fn default_chars_per_token() -> usize {
    4
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            max_new_tokens: default_max_new_tokens(),
            stop_sequences: Vec::new(),
            num_retrieved_docs: DocCount::default(),
            num_demos: default_num_demos(),
            max_steps: default_max_steps(),
            context_budget_tokens: default_context_budget(),
            chars_per_token: default_chars_per_token(),
        }
    }
}

impl GenConfig {
    /// Prompt budget in characters after reserving generation room.
    pub fn prompt_budget_chars(&self) -> usize {
        self.context_budget_tokens
            .saturating_sub(self.max_new_tokens)
            * self.chars_per_token
    }
}

/// A complete tool specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToolSpec {
    pub tool_id: String,
    pub api_functions: Vec<ApiFunction>,
    #[serde(default)]
    pub demos: Vec<DemonstrationExample>,
    #[serde(default)]
    pub tests: Vec<TestCase>,
    pub mode: Mode,
    pub env_binding: String,
    #[serde(default)]
    pub gen_config: GenConfig,
    /// Environment configuration loaded alongside the spec: route tables,
    /// required/optional sets, ordering constraints, action vocabularies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_config: Option<EnvConfig>,
}

impl ToolSpec {
    pub fn load(path: &Path) -> Result<ToolSpec, SpecError> {
        let text = std::fs::read_to_string(path)?;
        let spec: ToolSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn function(&self, name: &str) -> Option<&ApiFunction> {
        self.api_functions.iter().find(|f| f.name == name)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let mut names = BTreeSet::new();
        for f in &self.api_functions {
            if !names.insert(f.name.as_str()) {
                return Err(SpecError::Invalid(format!(
                    "duplicate API function name {:?}",
                    f.name
                )));
            }
            let mut params = BTreeSet::new();
            for p in &f.params {
                if !params.insert(p.name.as_str()) {
                    return Err(SpecError::Invalid(format!(
                        "duplicate parameter {:?} in function {:?}",
                        p.name, f.name
                    )));
                }
            }
        }

        if self.gen_config.max_steps == 0 {
            return Err(SpecError::Invalid("max_steps must be >= 1".into()));
        }

        // Every function named in demo/test ground truth must exist. REST
        // goldens are raw curl text with no parsed calls, so this is
        // vacuous for them.
        for demo in &self.demos {
            for call in &demo.program.calls {
                if !names.contains(call.name.as_str()) {
                    return Err(SpecError::Invalid(format!(
                        "demo references unknown function {:?}",
                        call.name
                    )));
                }
            }
        }
        let mut test_ids = BTreeSet::new();
        for test in &self.tests {
            if !test_ids.insert(test.id.as_str()) {
                return Err(SpecError::Invalid(format!(
                    "duplicate test id {:?}",
                    test.id
                )));
            }
            if test.gold_programs.is_empty() {
                return Err(SpecError::Invalid(format!(
                    "test {:?} has no gold programs",
                    test.id
                )));
            }
            if test.compare_mode == CompareMode::Verbatim && test.gold_programs.len() != 1 {
                return Err(SpecError::Invalid(format!(
                    "test {:?} uses verbatim compare and must have exactly one gold program",
                    test.id
                )));
            }
            for gold in &test.gold_programs {
                for call in &gold.calls {
                    if !names.contains(call.name.as_str()) {
                        return Err(SpecError::Invalid(format!(
                            "test {:?} references unknown function {:?}",
                            test.id, call.name
                        )));
                    }
                }
            }
        }

        if self.mode == Mode::MultiStep {
            let supports_stepping = match &self.env_config {
                Some(cfg) => cfg.supports_stepping(),
                None => false,
            };
            if !supports_stepping {
                return Err(SpecError::Invalid(format!(
                    "multi_step spec {:?} requires an environment that supports stepping",
                    self.tool_id
                )));
            }
        }

        Ok(())
    }
}
