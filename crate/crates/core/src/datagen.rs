//! Programmatic alignment-data generation: goal/action templates expanded
//! with randomly chosen value records, plus packing of goal/action pairs
//! into training samples with per-action loss spans.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Placeholder left verbatim during expansion; it is replaced with the real
/// credential at inference time, not at data-generation time.
pub const RESERVED_PLACEHOLDERS: [&str; 1] = ["API_KEY"];

#[derive(Debug, Error, PartialEq)]
pub enum DatagenError {
    #[error("no value for placeholder {{{0}}}")]
    MissingPlaceholderValue(String),
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("repeat must be >= 1 for task {0:?}")]
    InvalidRepeat(String),
    #[error("a single pair ({length}) exceeds the packing budget ({budget})")]
    PairExceedsBudget { length: usize, budget: usize },
    #[error("packing budget ({budget}) must exceed the docs header ({header})")]
    BudgetTooSmall { budget: usize, header: usize },
    #[error("packed samples must come from one task (saw {0:?} and {1:?})")]
    MixedTasks(String, String),
}

/// A literal value in a record; scalars deserialize from JSON strings,
/// numbers, or booleans and substitute as plain text.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct ValueText(pub String);

impl<'de> Deserialize<'de> for ValueText {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Scalar {
            Bool(bool),
            Int(i64),
            Float(f64),
            Text(String),
        }
        Ok(match Scalar::deserialize(deserializer)? {
            Scalar::Bool(b) => ValueText(b.to_string()),
            Scalar::Int(i) => ValueText(i.to_string()),
            Scalar::Float(f) => ValueText(f.to_string()),
            Scalar::Text(s) => ValueText(s),
        })
    }
}

impl From<&str> for ValueText {
    fn from(s: &str) -> Self {
        ValueText(s.to_string())
    }
}

pub type ValueRecord = BTreeMap<String, ValueText>;

/// A paired goal/action template. Placeholders are `{name}` slots; each
/// value record must supply every placeholder used by either template, so
/// paired keywords (e.g. a city and its URL-encoded form) stay consistent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Template {
    pub goal_template: String,
    pub action_template: String,
    pub value_records: Vec<ValueRecord>,
}

fn is_placeholder_char(c: char, first: bool) -> bool {
    if first {
        c.is_ascii_alphabetic() || c == '_'
    } else {
        c.is_ascii_alphanumeric() || c == '_'
    }
}

/// `{name}` slots in the text, excluding reserved names and brace pairs
/// that are not identifiers (e.g. JSON bodies).
pub fn scan_placeholders(text: &str) -> BTreeSet<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = BTreeSet::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '{' {
            let mut j = i + 1;
            while j < chars.len() && is_placeholder_char(chars[j], j == i + 1) {
                j += 1;
            }
            if j > i + 1 && j < chars.len() && chars[j] == '}' {
                let name: String = chars[i + 1..j].iter().collect();
                if !RESERVED_PLACEHOLDERS.contains(&name.as_str()) {
                    out.insert(name);
                }
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

fn substitute(text: &str, record: &ValueRecord) -> Result<String, DatagenError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < chars.len() {
        if chars[i] == '{' {
            let mut j = i + 1;
            while j < chars.len() && is_placeholder_char(chars[j], j == i + 1) {
                j += 1;
            }
            if j > i + 1 && j < chars.len() && chars[j] == '}' {
                let name: String = chars[i + 1..j].iter().collect();
                if RESERVED_PLACEHOLDERS.contains(&name.as_str()) {
                    out.push_str(&format!("{{{name}}}"));
                } else {
                    let value = record
                        .get(&name)
                        .ok_or_else(|| DatagenError::MissingPlaceholderValue(name.clone()))?;
                    out.push_str(&value.0);
                }
                i = j + 1;
                continue;
            }
        }
        out.push(chars[i]);
        i += 1;
    }
    Ok(out)
}

impl Template {
    /// Placeholders used by either template.
    pub fn placeholders(&self) -> BTreeSet<String> {
        let mut set = scan_placeholders(&self.goal_template);
        set.extend(scan_placeholders(&self.action_template));
        set
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.value_records.is_empty() {
            return Err(DatagenError::InvalidTemplate(
                "template needs at least one value record".into(),
            ));
        }
        let placeholders = self.placeholders();
        for (i, record) in self.value_records.iter().enumerate() {
            let keys: BTreeSet<String> = record.keys().cloned().collect();
            if keys != placeholders {
                return Err(DatagenError::InvalidTemplate(format!(
                    "record {i} keys {keys:?} do not match placeholders {placeholders:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Expand one template: a value record is chosen uniformly by the seeded
/// RNG and every placeholder in both templates is filled from that single
/// record.
pub fn expand_template(template: &Template, seed: u64) -> Result<(String, String), DatagenError> {
    if template.value_records.is_empty() {
        return Err(DatagenError::InvalidTemplate(
            "template needs at least one value record".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let record = &template.value_records[rng.random_range(0..template.value_records.len())];
    let goal = substitute(&template.goal_template, record)?;
    let action = substitute(&template.action_template, record)?;
    Ok((goal, action))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskTemplates {
    pub task_id: String,
    pub templates: Vec<Template>,
    pub repeat: usize,
}

/// One generated goal/action pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedPair {
    pub task_id: String,
    pub goal: String,
    pub action: String,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(seed: u64, task_id: &str, template_idx: usize, repeat_idx: usize) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for byte in task_id.bytes() {
        h = (h ^ byte as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix(seed ^ h ^ ((template_idx as u64) << 32) ^ repeat_idx as u64)
}

/// Emit `templates x repeat` pairs per task, each expanded under a derived
/// per-sample seed, then interleave tasks with one seeded shuffle. The
/// output is deterministic for a fixed seed.
pub fn build_dataset(
    tasks: &[TaskTemplates],
    seed: u64,
) -> Result<Vec<GeneratedPair>, DatagenError> {
    let mut pairs = Vec::new();
    for task in tasks {
        if task.repeat == 0 {
            return Err(DatagenError::InvalidRepeat(task.task_id.clone()));
        }
        for template in &task.templates {
            template.validate()?;
        }
        for (template_idx, template) in task.templates.iter().enumerate() {
            for repeat_idx in 0..task.repeat {
                let sample_seed = derive_seed(seed, &task.task_id, template_idx, repeat_idx);
                let (goal, action) = expand_template(template, sample_seed)?;
                pairs.push(GeneratedPair {
                    task_id: task.task_id.clone(),
                    goal,
                    action,
                });
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed));
    pairs.shuffle(&mut rng);
    Ok(pairs)
}

/// One packed training sample: the docs header followed by goal/action
/// pairs with no separator between examples. `loss_spans` are character
/// offsets (start, end-exclusive) over each action region.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentSample {
    #[serde(rename = "task")]
    pub task_id: String,
    pub text: String,
    pub loss_spans: Vec<(usize, usize)>,
}

impl AlignmentSample {
    /// Substring of one loss span, by character offsets.
    pub fn span_text(&self, span: (usize, usize)) -> String {
        self.text
            .chars()
            .skip(span.0)
            .take(span.1 - span.0)
            .collect()
    }
}

fn pair_block(pair: &GeneratedPair) -> (String, usize) {
    let prefix = format!("Task: {}\nAction:\n", pair.goal);
    let prefix_chars = prefix.chars().count();
    (format!("{prefix}{}\n", pair.action), prefix_chars)
}

/// Greedily pack one task's pairs into samples that fit the budget under
/// `length_fn`, recording a loss span over each action region.
pub fn pack_all_shot(
    pairs: &[GeneratedPair],
    budget: usize,
    length_fn: &dyn Fn(&str) -> usize,
    docs_header: &str,
) -> Result<Vec<AlignmentSample>, DatagenError> {
    let header_len = length_fn(docs_header);
    if header_len >= budget {
        return Err(DatagenError::BudgetTooSmall {
            budget,
            header: header_len,
        });
    }
    if let Some(first) = pairs.first() {
        if let Some(mixed) = pairs.iter().find(|p| p.task_id != first.task_id) {
            return Err(DatagenError::MixedTasks(
                first.task_id.clone(),
                mixed.task_id.clone(),
            ));
        }
    }

    let mut samples = Vec::new();
    let mut text = docs_header.to_string();
    let mut text_chars = docs_header.chars().count();
    let mut spans: Vec<(usize, usize)> = Vec::new();

    let flush = |samples: &mut Vec<AlignmentSample>,
                 text: &mut String,
                 text_chars: &mut usize,
                 spans: &mut Vec<(usize, usize)>,
                 task_id: &str| {
        if !spans.is_empty() {
            samples.push(AlignmentSample {
                task_id: task_id.to_string(),
                text: std::mem::replace(text, docs_header.to_string()),
                loss_spans: std::mem::take(spans),
            });
            *text_chars = docs_header.chars().count();
        }
    };

    for pair in pairs {
        let (block, action_offset) = pair_block(pair);
        let candidate = format!("{text}{block}");
        if length_fn(&candidate) > budget {
            if spans.is_empty() {
                return Err(DatagenError::PairExceedsBudget {
                    length: length_fn(&candidate),
                    budget,
                });
            }
            flush(
                &mut samples,
                &mut text,
                &mut text_chars,
                &mut spans,
                &pair.task_id,
            );
            let candidate = format!("{text}{block}");
            if length_fn(&candidate) > budget {
                return Err(DatagenError::PairExceedsBudget {
                    length: length_fn(&candidate),
                    budget,
                });
            }
        }
        let start = text_chars + action_offset;
        let end = start + pair.action.chars().count();
        spans.push((start, end));
        text.push_str(&block);
        text_chars += block.chars().count();
    }
    if let Some(pair) = pairs.first() {
        flush(
            &mut samples,
            &mut text,
            &mut text_chars,
            &mut spans,
            &pair.task_id,
        );
    }
    Ok(samples)
}
