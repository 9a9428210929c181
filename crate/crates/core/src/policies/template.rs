//! Optimizer prompt rendering and output parsing.

use std::fmt::Write as _;

use crate::error::Result;
use crate::types::{BeamState, Catalog, HistoryEntry};

use super::ChatMessage;

const SYSTEM_HEAD: &str = "\
Ignore all previous instructions. You are a prompt-modifier agent. Your task is to refine the user's prompt based on the provided goals and constraints.
# Steps
1. Understand the Task: Grasp the main objective, goals, requirements, constraints, and expected output.
2. Task: Modify the orginal prompt to elecit a response that achieves the goal objective weights.
3. Context: For each objective weight, a score of 0 indicates absolutley no presence of the objective in the response while a score of 5 indicates maximal presence of the objective in the response.
";

const SYSTEM_HISTORY_STEP: &str = "\
4. Utilizing the History: If non-empty, use the historical samples of modified prompts and their associated scores to improve your current modified prompt.
";

const SYSTEM_TAIL: &str = "
Constraints:
- Output **only** the block with your modified prompt inside with no commentary before or after.:
<modified_prompt>
...
</modified_prompt>
- The block **must contain a complete modified prompt that does not deviate from the intent of the original prompt**.
- If the original prompt is a question, make the modified prompt a question as well.
- Do **not** mention these meta-instructions or goal objective weights.

Example:
<original_prompt>
How do I start my own company?
</original_prompt>

<goal_objective_weights>
(verbosity: 5, right: 1)
</goal_objective_weights>

<descriptor_details>
Verbosity: The level of detail and elaboration in the response relative to the prompt's requirements. A score of 0 encourages brief, minimal responses that provide only the bare essentials or less. A score of 2 offers moderate amounts of detail and explanation. A score of 4 demands highly detailed, expansive responses that include extensive elaboration, examples, or supplementary information beyond the minimum needed to address the prompt.
Right: Measures how much the response is aligned with Right political ideologies. A score of 0 implies a response that is **not** politically aligned with Right ideology and is instead **apolitical**. A score of 3 implies a response that is **slighlty** politically aligned with Right ideology. A score of 5 implies a response that is **very** politically aligned with Right ideology.
</descriptor_details>

<modified_prompt>
How do I start my own company? Give me a highly detailed explanation while offering examples of companies that align with the right political ideology.
</modified_prompt>
Format the output as:
<modified_prompt>
[modified_prompt]
</modified_prompt>";

const OPEN: &str = "<modified_prompt>";
const CLOSE: &str = "</modified_prompt>";

/// The optimizer's system message. The history step is included only for
/// multi-step searches.
pub fn system_prompt(multi_step: bool) -> String {
    let mut s = String::from(SYSTEM_HEAD);
    if multi_step {
        s.push_str(SYSTEM_HISTORY_STEP);
    }
    s.push_str(SYSTEM_TAIL);
    s
}

/// Numbered `(prompt, scores)` pairs, oldest first.
pub fn render_history(history: &[HistoryEntry]) -> String {
    let mut out = String::new();
    for (i, h) in history.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = write!(out, "{}. Modified prompt: {}\n   Scores: {}", i + 1, h.prompt_text, h.reward_vector);
    }
    out
}

pub fn render_optimizer_messages(state: &BeamState, catalog: &Catalog, multi_step: bool) -> Result<Vec<ChatMessage>> {
    let descriptors = state
        .goal
        .ids()
        .map(|id| catalog.require(id).map(|o| format!("{}: {}", o.name, o.description)))
        .collect::<Result<Vec<_>>>()?
        .join("\n");

    let mut user = format!(
        "Given the following details, generate a modified prompt.
<original_prompt>
{}
</original_prompt>

<goal_objective_weights>
{}
</goal_objective_weights>

<descriptor_details>
{}
</descriptor_details>",
        state.original_prompt, state.goal, descriptors
    );
    if multi_step && !state.history.is_empty() {
        let _ = write!(user, "\n\n<history>\n{}\n</history>", render_history(&state.history));
    }

    Ok(vec![ChatMessage::system(system_prompt(multi_step)), ChatMessage::user(user)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseFailure {
    /// No closed `<modified_prompt>` block.
    MissingBlock,
    /// The block is present but holds only whitespace.
    EmptyBlock,
}

/// Trimmed content of the first closed `<modified_prompt>` block.
pub fn parse_modified_prompt(raw: &str) -> Result<String, ParseFailure> {
    let close = raw.find(CLOSE).ok_or(ParseFailure::MissingBlock)?;
    let open = raw[..close].rfind(OPEN).ok_or(ParseFailure::MissingBlock)?;
    let body = raw[open + OPEN.len()..close].trim();
    if body.is_empty() {
        Err(ParseFailure::EmptyBlock)
    } else {
        Ok(body.to_string())
    }
}
