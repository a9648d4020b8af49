//! Household-activity environment: a fixed action vocabulary with
//! per-argument valid-object lists. Programs are scored by normalized LCS
//! against the best-matching gold solution.

use serde::{Deserialize, Serialize};

use super::EvalOutcome;
use crate::metrics::{categorize, lcs_normalized, ErrorCategory};
use crate::program::{ActionProgram, ApiCall, Literal};
use crate::spec::TestCase;

/// Action vocabulary: each action maps to its argument slots, and each slot
/// lists the object names valid in that position.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VirtualHomeConfig {
    pub actions: std::collections::BTreeMap<String, Vec<Vec<String>>>,
}

fn object_name(arg: &Literal) -> Option<&str> {
    match arg {
        Literal::Symbol { sym } => Some(sym),
        Literal::Str(s) => Some(s),
        _ => None,
    }
}

fn call_violation(call: &ApiCall, config: &VirtualHomeConfig) -> Option<String> {
    let slots = match config.actions.get(&call.name) {
        Some(s) => s,
        None => return Some(format!("unknown action {:?}", call.name)),
    };
    if call.args.len() != slots.len() {
        return Some(format!(
            "action {:?} takes {} arguments, got {}",
            call.name,
            slots.len(),
            call.args.len()
        ));
    }
    for (arg, valid) in call.args.iter().zip(slots) {
        match object_name(arg) {
            Some(obj) if valid.iter().any(|v| v == obj) => {}
            Some(obj) => {
                return Some(format!(
                    "object {obj:?} is not recognizable for action {:?}",
                    call.name
                ))
            }
            None => {
                return Some(format!(
                    "action {:?} arguments must be object names",
                    call.name
                ))
            }
        }
    }
    None
}

pub fn execute_virtualhome(
    program: &ActionProgram,
    test: &TestCase,
    config: &VirtualHomeConfig,
) -> EvalOutcome {
    let violation = program
        .calls
        .iter()
        .find_map(|call| call_violation(call, config));
    let executable = violation.is_none();

    // LCS is computed on canonical step strings whenever the program
    // parsed, executable or not; the highest score over solutions counts.
    let solutions: Vec<Vec<String>> = test.gold_programs.iter().map(|g| g.steps()).collect();
    let score = lcs_normalized(&program.steps(), &solutions).unwrap_or(0.0);
    let success = executable && score == 1.0;

    let category = if !executable {
        ErrorCategory::NonExecutable
    } else {
        categorize(true, success, Some(program), &test.gold_programs)
    };

    EvalOutcome {
        test_id: test.id.clone(),
        executable,
        success,
        metrics: [("lcs".to_string(), score)].into(),
        category,
        detail: violation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::parse_action_program;

    fn config() -> VirtualHomeConfig {
        let objects = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        VirtualHomeConfig {
            actions: [
                ("Find".to_string(), vec![objects(&["novel", "chair"])]),
                ("Grab".to_string(), vec![objects(&["novel"])]),
                ("Read".to_string(), vec![objects(&["novel"])]),
                ("SitOn".to_string(), vec![objects(&["chair"])]),
                ("Sleep".to_string(), vec![]),
                (
                    "PourInto".to_string(),
                    vec![objects(&["water"]), objects(&["cup"])],
                ),
            ]
            .into(),
        }
    }

    fn test_case(golds: &[&str]) -> TestCase {
        TestCase {
            id: "t0".into(),
            goal_text: "read a book".into(),
            gold_programs: golds
                .iter()
                .map(|g| parse_action_program(g).unwrap())
                .collect(),
            oracle_response: None,
            compare_mode: Default::default(),
        }
    }

    const GOLD: &str = "Agent.Find(novel)\nAgent.Grab(novel)\nAgent.Read(novel)";

    #[test]
    fn exact_solution_scores_one() {
        let program = parse_action_program(GOLD).unwrap();
        let outcome = execute_virtualhome(&program, &test_case(&[GOLD]), &config());
        assert!(outcome.executable);
        assert!(outcome.success);
        assert_eq!(outcome.metrics["lcs"], 1.0);
    }

    #[test]
    fn unknown_object_is_non_executable() {
        let program = parse_action_program("Agent.Find(rocket)").unwrap();
        let outcome = execute_virtualhome(&program, &test_case(&[GOLD]), &config());
        assert!(!outcome.executable);
        assert_eq!(outcome.category, ErrorCategory::NonExecutable);
    }

    #[test]
    fn unknown_action_is_non_executable() {
        let program = parse_action_program("Agent.Teleport(novel)").unwrap();
        assert!(!execute_virtualhome(&program, &test_case(&[GOLD]), &config()).executable);
    }

    #[test]
    fn prefix_scores_partial_lcs() {
        let program = parse_action_program("Agent.Find(novel)\nAgent.Grab(novel)").unwrap();
        let outcome = execute_virtualhome(&program, &test_case(&[GOLD]), &config());
        assert!(outcome.executable);
        assert!(!outcome.success);
        assert!((outcome.metrics["lcs"] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn best_solution_wins() {
        let alt = "Agent.Find(chair)\nAgent.SitOn(chair)";
        let program = parse_action_program(alt).unwrap();
        let outcome = execute_virtualhome(&program, &test_case(&[GOLD, alt]), &config());
        assert!(outcome.success);
        assert_eq!(outcome.metrics["lcs"], 1.0);
    }

    #[test]
    fn two_argument_actions_check_both_slots() {
        let ok = parse_action_program("Agent.PourInto(water, cup)").unwrap();
        let gold = "Agent.PourInto(water, cup)";
        assert!(execute_virtualhome(&ok, &test_case(&[gold]), &config()).executable);
        let bad = parse_action_program("Agent.PourInto(cup, water)").unwrap();
        assert!(!execute_virtualhome(&bad, &test_case(&[gold]), &config()).executable);
        let wrong_arity = parse_action_program("Agent.PourInto(water)").unwrap();
        assert!(!execute_virtualhome(&wrong_arity, &test_case(&[gold]), &config()).executable);
    }

    #[test]
    fn arguments_as_strings_also_accepted() {
        let program = parse_action_program("Agent.Find(\"novel\")").unwrap();
        let outcome = execute_virtualhome(&program, &test_case(&["Agent.Find(novel)"]), &config());
        assert!(outcome.executable);
        // Canonical forms differ ("novel" vs novel), so the LCS is 0.
        assert_eq!(outcome.metrics["lcs"], 0.0);
    }
}
