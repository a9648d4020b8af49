//! Trip-booking environment: booking-type-specific required/optional call
//! sets with partial-order constraints. Missing a required call or breaking
//! the order makes the search non-executable; missing an optional call only
//! makes it unsuccessful.

use serde::{Deserialize, Serialize};

use super::{check_calls_against_spec, CriteriaSet, EvalOutcome};
use crate::metrics::{categorize, f1};
use crate::program::{ActionProgram, Literal};
use crate::spec::{TestCase, ToolSpec};

pub const SELECT_BOOKING_TYPE: &str = "select_booking_type";

/// Constraints for one booking type.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BookingRules {
    pub required: Vec<String>,
    #[serde(default)]
    pub optional: Vec<String>,
    /// Pairs `(a, b)`: when both are called, the first `a` must precede the
    /// first `b`.
    #[serde(default)]
    pub order: Vec<(String, String)>,
    /// Call that must open the program, when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first: Option<String>,
    /// Call that must close the program (exactly once), when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TripBookingConfig {
    pub booking_types: std::collections::BTreeMap<String, BookingRules>,
}

fn booking_type_of(program: &ActionProgram) -> Option<String> {
    let call = program
        .calls
        .iter()
        .find(|c| c.name == SELECT_BOOKING_TYPE)?;
    match call.args.first()? {
        Literal::Str(s) => Some(s.clone()),
        Literal::Symbol { sym } => Some(sym.clone()),
        _ => None,
    }
}

fn structure_violation(program: &ActionProgram, rules: &BookingRules) -> Option<String> {
    let names: Vec<&str> = program.calls.iter().map(|c| c.name.as_str()).collect();
    for required in &rules.required {
        if !names.contains(&required.as_str()) {
            return Some(format!("missing required call {required:?}"));
        }
    }
    if let Some(first) = &rules.first {
        if names.first() != Some(&first.as_str()) {
            return Some(format!("program must start with {first:?}"));
        }
    }
    if let Some(last) = &rules.last {
        if names.last() != Some(&last.as_str()) {
            return Some(format!("program must end with {last:?}"));
        }
        if names.iter().filter(|n| **n == last.as_str()).count() > 1 {
            return Some(format!("{last:?} must appear exactly once"));
        }
    }
    let first_index = |name: &str| names.iter().position(|n| *n == name);
    for (a, b) in &rules.order {
        if let (Some(ia), Some(ib)) = (first_index(a), first_index(b)) {
            if ia >= ib {
                return Some(format!("call {a:?} must precede {b:?}"));
            }
        }
    }
    None
}

fn criteria_of(program: &ActionProgram, rules: &BookingRules) -> CriteriaSet {
    let terminal = rules.last.as_deref();
    CriteriaSet::from_setter_calls(
        program
            .calls
            .iter()
            .filter(|c| Some(c.name.as_str()) != terminal),
    )
}

pub fn execute_trip_booking(
    program: &ActionProgram,
    test: &TestCase,
    spec: &ToolSpec,
    config: &TripBookingConfig,
) -> EvalOutcome {
    if let Err(reason) = check_calls_against_spec(program, spec) {
        return EvalOutcome::non_executable(&test.id, reason);
    }
    let booking_type = match booking_type_of(program) {
        Some(t) => t,
        None => {
            return EvalOutcome::non_executable(
                &test.id,
                format!("program does not select a booking type via {SELECT_BOOKING_TYPE}"),
            )
        }
    };
    let rules = match config.booking_types.get(&booking_type) {
        Some(r) => r,
        None => {
            return EvalOutcome::non_executable(
                &test.id,
                format!("unknown booking type {booking_type:?}"),
            )
        }
    };
    if let Some(reason) = structure_violation(program, rules) {
        return EvalOutcome::non_executable(&test.id, reason);
    }

    let pred = criteria_of(program, rules);
    let gold_sets: Vec<CriteriaSet> = test
        .gold_programs
        .iter()
        .map(|g| criteria_of(g, rules))
        .collect();
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
