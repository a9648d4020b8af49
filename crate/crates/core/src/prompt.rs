//! System-prompt assembly: fixed guidelines, retrieved API docs, retrieved
//! demonstrations, and the goal, concatenated into the exact text sent to
//! the completion backend. Templates are overridable through a text file
//! with `{GUIDELINES}`, `{DOCS}`, `{DEMOS}`, `{GOAL}` placeholders.

use std::path::Path;

use thiserror::Error;

use crate::spec::{ApiFunction, DemonstrationExample};

/// Guideline header regulating the model to emit code only.
pub const DEFAULT_GUIDELINES: &str = "You are given API documentation, example tasks with their \
correct actions, and a final task. Respond to the final task with the API calls that accomplish \
it. Output only API calls, one per line. Do not output explanations or any other text.";

const DEFAULT_TEMPLATE: &str = "{GUIDELINES}\n\n{DOCS}{DEMOS}Task: {GOAL}\nAction:\n";

/// Line prefixes that mark section boundaries; goal text is escaped so it
/// cannot forge them.
const RESERVED_HEADERS: [&str; 5] = ["Task:", "Action:", "Observation:", "<human>:", "<bot>:"];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt is already chat-wrapped")]
    AlreadyWrapped,
    #[error("invalid prompt template: {0}")]
    BadTemplate(String),
    #[error("failed to read prompt template")]
    Io(#[from] std::io::Error),
}

/// A validated prompt template. The four placeholders must each appear
/// exactly once, in guideline/docs/demos/goal order.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    text: String,
    guidelines: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            text: DEFAULT_TEMPLATE.to_string(),
            guidelines: DEFAULT_GUIDELINES.to_string(),
        }
    }
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        let mut last = 0;
        for name in ["{GUIDELINES}", "{DOCS}", "{DEMOS}", "{GOAL}"] {
            let count = text.matches(name).count();
            if count != 1 {
                return Err(PromptError::BadTemplate(format!(
                    "placeholder {name} must appear exactly once (found {count})"
                )));
            }
            let pos = text.find(name).unwrap();
            if pos < last {
                return Err(PromptError::BadTemplate(format!(
                    "placeholder {name} out of order"
                )));
            }
            last = pos;
        }
        Ok(PromptTemplate {
            text,
            guidelines: DEFAULT_GUIDELINES.to_string(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, PromptError> {
        PromptTemplate::new(std::fs::read_to_string(path)?)
    }

    pub fn with_guidelines(mut self, guidelines: impl Into<String>) -> Self {
        self.guidelines = guidelines.into();
        self
    }

    /// Assemble the prompt. `demos` arrive in retrieval order (most similar
    /// first) and are laid out most-similar last, closest to the generation
    /// point.
    pub fn render(
        &self,
        goal: &str,
        docs: &[&ApiFunction],
        demos: &[&DemonstrationExample],
    ) -> PromptBundle {
        let (before_g, rest) = self.text.split_once("{GUIDELINES}").unwrap();
        let (g_to_docs, rest) = rest.split_once("{DOCS}").unwrap();
        let (docs_to_demos, rest) = rest.split_once("{DEMOS}").unwrap();
        let (demos_to_goal, after_goal) = rest.split_once("{GOAL}").unwrap();

        let mut docs_fill = String::new();
        for doc in docs {
            docs_fill.push_str(&doc.doc_text);
            if !doc.doc_text.ends_with('\n') {
                docs_fill.push('\n');
            }
        }
        if !docs.is_empty() {
            docs_fill.push('\n');
        }

        let demo_blocks: Vec<String> = demos
            .iter()
            .rev()
            .map(|demo| {
                format!(
                    "Task: {}\nAction:\n{}\n\n",
                    escape_goal(&demo.goal_text),
                    demo.program.raw_text.trim_end()
                )
            })
            .collect();

        let guidelines_section = format!("{before_g}{}", self.guidelines);
        let docs_section = format!("{g_to_docs}{docs_fill}{docs_to_demos}");
        let goal_section = format!("{demos_to_goal}{}", escape_goal(goal));
        let generation_cue = after_goal.to_string();

        let mut rendered_text = String::new();
        rendered_text.push_str(&guidelines_section);
        rendered_text.push_str(&docs_section);
        for block in &demo_blocks {
            rendered_text.push_str(block);
        }
        rendered_text.push_str(&goal_section);
        rendered_text.push_str(&generation_cue);

        PromptBundle {
            rendered_text,
            guidelines_section,
            docs_section,
            demo_sections: demo_blocks,
            goal_section,
            generation_cue,
        }
    }
}

/// The assembled prompt. `rendered_text` is the exact concatenation of the
/// sections in order: guidelines, docs, demos, goal, generation cue.
#[derive(Debug, Clone)]
pub struct PromptBundle {
    pub rendered_text: String,
    pub guidelines_section: String,
    pub docs_section: String,
    pub demo_sections: Vec<String>,
    pub goal_section: String,
    pub generation_cue: String,
}

impl PromptBundle {
    pub fn demo_count(&self) -> usize {
        self.demo_sections.len()
    }

    /// Everything before the generation cue.
    pub fn instruction_region(&self) -> &str {
        let cue_start = self.rendered_text.len() - self.generation_cue.len();
        &self.rendered_text[..cue_start]
    }
}

/// Render with the default template and guidelines.
pub fn render_prompt(
    goal: &str,
    docs: &[&ApiFunction],
    demos: &[&DemonstrationExample],
) -> PromptBundle {
    PromptTemplate::default().render(goal, docs, demos)
}

/// Prefix lines that would collide with section headers so boundaries stay
/// unambiguous.
fn escape_goal(text: &str) -> String {
    let escaped: Vec<String> = text
        .split('\n')
        .map(|line| {
            if RESERVED_HEADERS.iter().any(|h| line.starts_with(h)) {
                format!(" {line}")
            } else {
                line.to_string()
            }
        })
        .collect();
    escaped.join("\n")
}

/// Wrap a rendered prompt for chat-style models: `<human>:` opens the
/// instruction region and `<bot>:` precedes the generation cue.
pub fn wrap_chat(bundle: &PromptBundle) -> Result<String, PromptError> {
    if bundle.rendered_text.contains("<human>:") || bundle.rendered_text.contains("<bot>:") {
        return Err(PromptError::AlreadyWrapped);
    }
    Ok(format!(
        "<human>:\n{}\n<bot>:\n{}",
        bundle.instruction_region().trim_end(),
        bundle.generation_cue.trim_start()
    ))
}
