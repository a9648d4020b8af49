//! Home-search environment: a builder-style API where an executable program
//! starts with `set_location` and `set_buy_or_rent`, sets criteria, and ends
//! with a single `search()` call. Success requires the exact gold criteria.

use super::{check_calls_against_spec, CriteriaSet, EvalOutcome};
use crate::metrics::{categorize, f1};
use crate::program::ActionProgram;
use crate::spec::{TestCase, ToolSpec};

const LEAD_CALLS: [&str; 2] = ["set_location", "set_buy_or_rent"];
const SEARCH: &str = "search";

fn ordering_violation(program: &ActionProgram) -> Option<String> {
    if program.calls.len() < 3 {
        return Some("program must set location, buy-or-rent, and call search".into());
    }
    let names: Vec<&str> = program.calls.iter().map(|c| c.name.as_str()).collect();
    let leads = [names[0], names[1]];
    if !(leads.contains(&LEAD_CALLS[0]) && leads.contains(&LEAD_CALLS[1])) {
        return Some(format!(
            "program must start with {} and {}",
            LEAD_CALLS[0], LEAD_CALLS[1]
        ));
    }
    if *names.last().unwrap() != SEARCH {
        return Some("program must end with a call to search".into());
    }
    if names[..names.len() - 1].contains(&SEARCH) {
        return Some("search must be the final call".into());
    }
    None
}

fn criteria_of(program: &ActionProgram) -> CriteriaSet {
    CriteriaSet::from_setter_calls(program.calls.iter().filter(|c| c.name != SEARCH))
}

pub fn execute_home_search(
    program: &ActionProgram,
    test: &TestCase,
    spec: &ToolSpec,
) -> EvalOutcome {
    if let Err(reason) = check_calls_against_spec(program, spec) {
        return EvalOutcome::non_executable(&test.id, reason);
    }
    if let Some(reason) = ordering_violation(program) {
        return EvalOutcome::non_executable(&test.id, reason);
    }

    let pred = criteria_of(program);
    let gold_sets: Vec<CriteriaSet> = test.gold_programs.iter().map(criteria_of).collect();
    let best_f1 = gold_sets
        .iter()
        .map(|g| f1(&pred, g))
        .fold(0.0f64, f64::max);
    let success = gold_sets.contains(&pred);

    EvalOutcome {
        test_id: test.id.clone(),
        executable: true,
        success,
        metrics: [("f1".to_string(), best_f1)].into(),
        category: categorize(true, success, Some(program), &test.gold_programs),
        detail: None,
    }
}
