//! The action generator: retrieval-augmented prompt construction, completion,
//! post-processing, and parsing, for single-step and multi-step generation.
//!
//! Multi-step episodes grow the prompt by appending each action block
//! followed by an `Observation:` block and a fresh `Action:` cue; the
//! initial reset observation is not shown.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, CompletionClient, CompletionRequest};
use crate::envs::{env_step, EnvError, Environment, Observation};
use crate::program::{parse_action_program, ActionProgram, ParseError};
use crate::prompt::{wrap_chat, PromptBundle, PromptError, PromptTemplate};
use crate::retrieval::build_index_default;
use crate::spec::{ApiFunction, DemonstrationExample, DocCount, ToolSpec};

/// Generation aborts. All variants are infrastructure failures: they abort
/// the test case without counting as a model failure.
#[derive(Debug, Error)]
pub enum GenError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("prompt exceeds context budget even after trimming ({length} > {budget})")]
    PromptTooLong { length: usize, budget: usize },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Pluggable prompt-length measure; the default counts characters.
pub type LengthFn = Arc<dyn Fn(&str) -> usize + Send + Sync>;

pub fn char_length_fn() -> LengthFn {
    Arc::new(|text: &str| text.chars().count())
}

/// Knobs for one generation run, on top of the spec's `gen_config`.
#[derive(Clone)]
pub struct GenOptions {
    pub model: String,
    /// Substituted for every literal `{API_KEY}` in completions.
    pub api_key: Option<String>,
    /// Wrap prompts with `<human>:` / `<bot>:` for chat-style models.
    pub chat: bool,
    pub template: PromptTemplate,
    pub num_docs: Option<DocCount>,
    pub num_demos: Option<usize>,
    pub length_fn: LengthFn,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            model: "default".into(),
            api_key: None,
            chat: false,
            template: PromptTemplate::default(),
            num_docs: None,
            num_demos: None,
            length_fn: char_length_fn(),
        }
    }
}

/// Everything produced for one single-step generation. A parse failure is a
/// result, not an error.
#[derive(Debug)]
pub struct GenerationResult {
    pub raw: String,
    pub post: String,
    pub program: Result<ActionProgram, ParseError>,
    pub prompt: PromptBundle,
    /// The exact text sent to the backend (chat-wrapped when enabled).
    pub prompt_text: String,
}

/// Truncate at the earliest stop sequence, apply literal substitutions, and
/// trim trailing whitespace.
pub fn postprocess(
    raw: &str,
    stop_sequences: &[String],
    substitutions: &[(String, String)],
) -> String {
    let mut cut = raw.len();
    for stop in stop_sequences {
        if stop.is_empty() {
            continue;
        }
        if let Some(pos) = raw.find(stop.as_str()) {
            cut = cut.min(pos);
        }
    }
    let mut out = raw[..cut].to_string();
    for (from, to) in substitutions {
        out = out.replace(from.as_str(), to.as_str());
    }
    out.trim_end().to_string()
}

fn substitutions(opts: &GenOptions) -> Vec<(String, String)> {
    match &opts.api_key {
        Some(key) => vec![("{API_KEY}".to_string(), key.clone())],
        None => Vec::new(),
    }
}

/// Full document ranking for a goal: BM25-scored documents first
/// (descending), then zero-overlap documents in spec order.
fn rank_docs(spec: &ToolSpec, goal: &str) -> Vec<usize> {
    let index = build_index_default(
        spec.api_functions
            .iter()
            .enumerate()
            .map(|(i, f)| (i.to_string(), format!("{} {}", f.name, f.doc_text))),
    )
    .expect("indices are unique ids");
    let scored = index.retrieve_indices(goal, spec.api_functions.len());
    let mut order: Vec<usize> = scored.iter().map(|(i, _)| *i).collect();
    let in_scored: std::collections::BTreeSet<usize> = order.iter().copied().collect();
    order.extend((0..spec.api_functions.len()).filter(|i| !in_scored.contains(i)));
    order
}

/// Demonstrations ranked by goal similarity, most similar first. Demos
/// sharing no term with the goal are not retrieved.
fn rank_demos(spec: &ToolSpec, goal: &str, k: usize) -> Vec<usize> {
    if k == 0 || spec.demos.is_empty() {
        return Vec::new();
    }
    let index = build_index_default(
        spec.demos
            .iter()
            .enumerate()
            .map(|(i, d)| (i.to_string(), d.goal_text.as_str())),
    )
    .expect("indices are unique ids");
    index
        .retrieve_indices(goal, k)
        .into_iter()
        .map(|(i, _)| i)
        .collect()
}

/// Assemble a prompt that fits the context budget, dropping lowest-ranked
/// docs first, then lowest-ranked demos.
fn prepare_prompt(
    goal: &str,
    spec: &ToolSpec,
    opts: &GenOptions,
) -> Result<(PromptBundle, String), GenError> {
    let doc_ranking = rank_docs(spec, goal);
    let doc_count = match opts.num_docs.unwrap_or(spec.gen_config.num_retrieved_docs) {
        DocCount::All => doc_ranking.len(),
        DocCount::Top(k) => k.min(doc_ranking.len()),
    };
    let present_in_spec_order = matches!(
        opts.num_docs.unwrap_or(spec.gen_config.num_retrieved_docs),
        DocCount::All
    );
    let demo_ranking = rank_demos(
        spec,
        goal,
        opts.num_demos.unwrap_or(spec.gen_config.num_demos),
    );

    let budget = spec.gen_config.prompt_budget_chars();
    let mut doc_keep = doc_count;
    let mut demo_keep = demo_ranking.len();
    loop {
        let mut kept_docs: Vec<usize> = doc_ranking[..doc_keep].to_vec();
        if present_in_spec_order {
            kept_docs.sort_unstable();
        }
        let docs: Vec<&ApiFunction> = kept_docs.iter().map(|&i| &spec.api_functions[i]).collect();
        let demos: Vec<&DemonstrationExample> = demo_ranking[..demo_keep]
            .iter()
            .map(|&i| &spec.demos[i])
            .collect();

        let bundle = opts.template.render(goal, &docs, &demos);
        let prompt_text = if opts.chat {
            wrap_chat(&bundle)?
        } else {
            bundle.rendered_text.clone()
        };
        let length = (opts.length_fn)(&prompt_text);
        if length <= budget {
            return Ok((bundle, prompt_text));
        }
        if doc_keep > 0 {
            doc_keep -= 1;
        } else if demo_keep > 0 {
            demo_keep -= 1;
        } else {
            return Err(GenError::PromptTooLong { length, budget });
        }
    }
}

/// Single-step generation: retrieve, render, complete, post-process, parse.
pub fn generate_single(
    goal: &str,
    spec: &ToolSpec,
    client: &dyn CompletionClient,
    opts: &GenOptions,
) -> Result<GenerationResult, GenError> {
    let (prompt, prompt_text) = prepare_prompt(goal, spec, opts)?;
    let request = CompletionRequest::new(
        opts.model.clone(),
        prompt_text.clone(),
        spec.gen_config.max_new_tokens,
        spec.gen_config.stop_sequences.clone(),
    );
    let raw = client.complete(&request)?;
    let post = postprocess(&raw, &spec.gen_config.stop_sequences, &substitutions(opts));
    let program = parse_action_program(&post);
    Ok(GenerationResult {
        raw,
        post,
        program,
        prompt,
        prompt_text,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    EnvExit,
    MaxSteps,
    NonExecutableStep,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryStep {
    /// Post-processed completion for this step.
    pub raw: String,
    pub segment: Option<ActionProgram>,
    pub observation: Option<Observation>,
}

/// One multi-step episode.
#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub exit_reason: ExitReason,
}

impl Trajectory {
    /// Reward from the terminal observation, when the episode exited.
    pub fn final_reward(&self) -> Option<f64> {
        self.steps
            .last()
            .and_then(|s| s.observation.as_ref())
            .filter(|o| o.terminal)
            .and_then(|o| o.reward)
    }

    /// All parsed segments concatenated, for taxonomy comparison against
    /// gold programs.
    pub fn combined_program(&self) -> ActionProgram {
        let calls = self
            .steps
            .iter()
            .filter_map(|s| s.segment.as_ref())
            .flat_map(|seg| seg.calls.iter().cloned())
            .collect::<Vec<_>>();
        let raw_text = self
            .steps
            .iter()
            .map(|s| s.raw.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        ActionProgram { calls, raw_text }
    }
}

fn compose_step_suffix(steps: &[TrajectoryStep]) -> String {
    let mut text = String::new();
    for step in steps {
        text.push_str(step.raw.trim_end());
        text.push('\n');
        if let Some(obs) = &step.observation {
            text.push_str("Observation:\n");
            text.push_str(obs.text.trim_end());
            text.push('\n');
        }
        text.push_str("Action:\n");
    }
    text
}

/// Multi-step generation against a freshly reset environment. The episode
/// stops on environment exit, on a non-executable step, or at `max_steps`.
pub fn generate_multi(
    goal: &str,
    spec: &ToolSpec,
    env: &mut dyn Environment,
    client: &dyn CompletionClient,
    opts: &GenOptions,
) -> Result<Trajectory, GenError> {
    let (_, base_prompt) = prepare_prompt(goal, spec, opts)?;
    let budget = spec.gen_config.prompt_budget_chars();
    let subs = substitutions(opts);

    let mut steps: Vec<TrajectoryStep> = Vec::new();
    let mut exit_reason = ExitReason::MaxSteps;
    while steps.len() < spec.gen_config.max_steps {
        let prompt_text = format!("{base_prompt}{}", compose_step_suffix(&steps));
        let length = (opts.length_fn)(&prompt_text);
        if length > budget {
            return Err(GenError::PromptTooLong { length, budget });
        }
        let request = CompletionRequest::new(
            opts.model.clone(),
            prompt_text,
            spec.gen_config.max_new_tokens,
            spec.gen_config.stop_sequences.clone(),
        );
        let raw = client.complete(&request)?;
        let post = postprocess(&raw, &spec.gen_config.stop_sequences, &subs);
        match parse_action_program(&post) {
            Err(_) => {
                steps.push(TrajectoryStep {
                    raw: post,
                    segment: None,
                    observation: None,
                });
                exit_reason = ExitReason::NonExecutableStep;
                break;
            }
            Ok(segment) => {
                let observation = env_step(env, &segment)?;
                let terminal = observation.terminal;
                steps.push(TrajectoryStep {
                    raw: post,
                    segment: Some(segment),
                    observation: Some(observation),
                });
                if terminal {
                    exit_reason = ExitReason::EnvExit;
                    break;
                }
            }
        }
    }

    Ok(Trajectory { steps, exit_reason })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ReplayEntry, ScriptedClient};
    use crate::envs::{CounterConfig, CounterEnv};
    use crate::program::parse_action_program;
    use crate::spec::{ApiFunction, GenConfig, Mode, TestCase, ToolSpec};

    fn func(name: &str, doc: &str) -> ApiFunction {
        ApiFunction {
            name: name.into(),
            params: vec![],
            doc_text: doc.into(),
        }
    }

    fn spec() -> ToolSpec {
        ToolSpec {
            tool_id: "counter".into(),
            api_functions: vec![
                func("inc", "API.inc() # increase the counter by one"),
                func("add", "API.add(amount) # increase the counter by amount"),
                func("finish", "API.finish() # stop and submit the counter"),
            ],
            demos: vec![
                DemonstrationExample {
                    goal_text: "increase the counter once and finish".into(),
                    program: parse_action_program("API.inc()\nAPI.finish()").unwrap(),
                },
                DemonstrationExample {
                    goal_text: "increase the counter twice and finish".into(),
                    program: parse_action_program("API.inc()\nAPI.inc()\nAPI.finish()").unwrap(),
                },
                DemonstrationExample {
                    goal_text: "submit the result right away".into(),
                    program: parse_action_program("API.finish()").unwrap(),
                },
            ],
            tests: vec![],
            mode: Mode::SingleStep,
            env_binding: "counter".into(),
            gen_config: GenConfig {
                stop_sequences: vec!["Task:".into(), "Observation:".into()],
                ..GenConfig::default()
            },
            env_config: None,
        }
    }

    fn ordinal_client(completions: &[&str]) -> ScriptedClient {
        ScriptedClient::from_entries(
            completions
                .iter()
                .enumerate()
                .map(|(i, c)| ReplayEntry::ordinal(i, *c))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn postprocess_truncates_and_substitutes() {
        let raw = "curl 'https://x?appid={API_KEY}'\nTask: next one";
        let out = postprocess(
            raw,
            &["Task:".to_string()],
            &[("{API_KEY}".to_string(), "K".to_string())],
        );
        assert_eq!(out, "curl 'https://x?appid=K'");
    }

    #[test]
    fn postprocess_without_stops_keeps_text() {
        assert_eq!(postprocess("API.inc()", &[], &[]), "API.inc()");
    }

    #[test]
    fn postprocess_stop_at_position_zero_is_empty() {
        assert_eq!(postprocess("Task: x", &["Task:".to_string()], &[]), "");
    }

    #[test]
    fn postprocess_earliest_stop_wins() {
        let stops = vec!["STOP".to_string(), "Task:".to_string()];
        assert_eq!(postprocess("a Task: b STOP c", &stops, &[]), "a");
        assert_eq!(postprocess("a STOP b Task: c", &stops, &[]), "a");
    }

    #[test]
    fn stop_applied_server_or_client_side_is_identical() {
        let stops = vec!["Task:".to_string()];
        let full = "API.inc()\nTask: next";
        let server_truncated = "API.inc()\n";
        assert_eq!(
            postprocess(full, &stops, &[]),
            postprocess(server_truncated, &stops, &[])
        );
    }

    #[test]
    fn gold_replay_round_trips_to_gold_program() {
        let spec = spec();
        let client = ordinal_client(&["API.inc()\nAPI.finish()"]);
        let result = generate_single(
            "increase the counter once and finish",
            &spec,
            &client,
            &GenOptions::default(),
        )
        .unwrap();
        let program = result.program.unwrap();
        assert_eq!(
            program,
            parse_action_program("API.inc()\nAPI.finish()").unwrap()
        );
    }

    #[test]
    fn zero_shot_path_has_no_demos() {
        let spec = spec();
        let client = ordinal_client(&["API.inc()"]);
        let opts = GenOptions {
            num_demos: Some(0),
            ..GenOptions::default()
        };
        let result = generate_single("increase the counter", &spec, &client, &opts).unwrap();
        assert_eq!(result.prompt.demo_count(), 0);
    }

    #[test]
    fn prose_completion_carries_parse_error() {
        let spec = spec();
        let client = ordinal_client(&["You can increase the counter by calling inc"]);
        let result = generate_single(
            "increase the counter once and finish",
            &spec,
            &client,
            &GenOptions::default(),
        )
        .unwrap();
        assert!(result.program.is_err());
    }

    #[test]
    fn demos_ranked_by_goal_similarity() {
        let spec = spec();
        let client = ordinal_client(&["API.inc()"]);
        let result = generate_single(
            "increase the counter twice and finish",
            &spec,
            &client,
            &GenOptions::default(),
        )
        .unwrap();
        assert_eq!(result.prompt.demo_count(), 3);
        // The most similar demo (the "twice" one) sits last.
        let text = &result.prompt.rendered_text;
        let once = text.find("once and finish").unwrap();
        let twice = text.find("twice and finish").unwrap();
        assert!(once < twice);
    }

    #[test]
    fn tight_budget_drops_docs_then_demos() {
        let mut spec = spec();
        // Small budget: forces dropping docs and demos to fit.
        spec.gen_config.context_budget_tokens = 410;
        spec.gen_config.chars_per_token = 1;
        spec.gen_config.max_new_tokens = 10;
        let client = ordinal_client(&["API.inc()"]);
        let opts = GenOptions::default();
        let result = generate_single(
            "increase the counter once and finish",
            &spec,
            &client,
            &opts,
        )
        .unwrap();
        assert!(result.prompt_text.chars().count() <= spec.gen_config.prompt_budget_chars());
    }

    #[test]
    fn impossible_budget_is_an_error() {
        let mut spec = spec();
        spec.gen_config.context_budget_tokens = 10;
        spec.gen_config.chars_per_token = 1;
        spec.gen_config.max_new_tokens = 5;
        let client = ordinal_client(&["API.inc()"]);
        let err = generate_single("goal", &spec, &client, &GenOptions::default()).unwrap_err();
        assert!(matches!(err, GenError::PromptTooLong { .. }));
    }

    #[test]
    fn chat_option_wraps_prompt() {
        let spec = spec();
        let client = ordinal_client(&["API.inc()"]);
        let opts = GenOptions {
            chat: true,
            ..GenOptions::default()
        };
        let result = generate_single("increase the counter", &spec, &client, &opts).unwrap();
        assert!(result.prompt_text.starts_with("<human>:"));
        assert_eq!(result.prompt_text.matches("<bot>:").count(), 1);
    }

    fn counter_test() -> TestCase {
        TestCase {
            id: "t0".into(),
            goal_text: "increase the counter once and finish".into(),
            gold_programs: vec![parse_action_program("API.inc()\nAPI.finish()").unwrap()],
            oracle_response: None,
            compare_mode: Default::default(),
        }
    }

    #[test]
    fn multi_step_episode_reaches_env_exit() {
        let spec = spec();
        let client = ordinal_client(&["API.inc()", "API.finish()"]);
        let mut env = CounterEnv::new(CounterConfig { target: 1 });
        env.reset(&counter_test());
        let trajectory = generate_multi(
            "increase the counter once and finish",
            &spec,
            &mut env,
            &client,
            &GenOptions::default(),
        )
        .unwrap();
        assert_eq!(trajectory.steps.len(), 2);
        assert_eq!(trajectory.exit_reason, ExitReason::EnvExit);
        assert_eq!(trajectory.final_reward(), Some(1.0));
    }

    #[test]
    fn unparseable_step_ends_episode() {
        let spec = spec();
        let client = ordinal_client(&["I would increase the counter"]);
        let mut env = CounterEnv::new(CounterConfig::default());
        env.reset(&counter_test());
        let trajectory = generate_multi(
            "increase the counter",
            &spec,
            &mut env,
            &client,
            &GenOptions::default(),
        )
        .unwrap();
        assert_eq!(trajectory.steps.len(), 1);
        assert_eq!(trajectory.exit_reason, ExitReason::NonExecutableStep);
        assert_eq!(trajectory.final_reward(), None);
    }

    #[test]
    fn runaway_episode_stops_at_max_steps() {
        let spec = spec();
        let completions: Vec<String> = (0..25).map(|_| "API.inc()".to_string()).collect();
        let refs: Vec<&str> = completions.iter().map(String::as_str).collect();
        let client = ordinal_client(&refs);
        let mut env = CounterEnv::new(CounterConfig { target: 1 });
        env.reset(&counter_test());
        let trajectory = generate_multi(
            "increase the counter forever",
            &spec,
            &mut env,
            &client,
            &GenOptions::default(),
        )
        .unwrap();
        assert_eq!(trajectory.steps.len(), 25);
        assert_eq!(trajectory.exit_reason, ExitReason::MaxSteps);
    }

    #[test]
    fn mid_episode_budget_overflow_aborts() {
        let mut spec = spec();
        // The base prompt fits, but appending steps pushes past the budget.
        spec.gen_config.num_demos = 0;
        spec.gen_config.num_retrieved_docs = crate::spec::DocCount::Top(0);
        spec.gen_config.chars_per_token = 1;
        spec.gen_config.max_new_tokens = 10;
        let probe = ordinal_client(&["API.inc()"]);
        let opts = GenOptions::default();
        let base = super::prepare_prompt("count forever", &spec, &opts)
            .map(|(_, text)| text.chars().count());
        spec.gen_config.context_budget_tokens = base.unwrap() + 15;

        let completions: Vec<String> = (0..5).map(|_| "API.inc()".to_string()).collect();
        let refs: Vec<&str> = completions.iter().map(String::as_str).collect();
        drop(probe);
        let client = ordinal_client(&refs);
        let mut env = CounterEnv::new(CounterConfig { target: 99 });
        env.reset(&counter_test());
        let err = generate_multi("count forever", &spec, &mut env, &client, &opts).unwrap_err();
        assert!(matches!(err, GenError::PromptTooLong { .. }));
    }

    #[test]
    fn observations_feed_the_next_prompt() {
        let spec = spec();
        let client = ordinal_client(&["API.inc()", "API.finish()"]);
        let mut env = CounterEnv::new(CounterConfig { target: 1 });
        env.reset(&counter_test());
        let trajectory = generate_multi(
            "increase the counter once and finish",
            &spec,
            &mut env,
            &client,
            &GenOptions::default(),
        )
        .unwrap();
        let suffix = compose_step_suffix(&trajectory.steps[..1]);
        assert!(suffix.contains("Observation:\ncount=1"));
        assert!(suffix.ends_with("Action:\n"));
    }
}
