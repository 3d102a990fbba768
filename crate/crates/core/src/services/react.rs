use crate::error::{Error, Result};
use crate::models::{Model, PromptMessage};
use crate::msg::{Msg, Role};

use super::{ServiceResponse, Toolkit};

/// Result of a finished ReAct loop.
#[derive(Debug, Clone)]
pub struct ReactOutcome {
    pub answer: String,
    pub iterations: usize,
    /// The model-visible history after the last iteration.
    pub history: Vec<PromptMessage>,
}

fn render_results(call_names: &[String], results: &[ServiceResponse]) -> String {
    let mut out = String::from("Execution results:");
    for (i, (name, r)) in call_names.iter().zip(results).enumerate() {
        let status = if r.is_success() { "SUCCESS" } else { "ERROR" };
        out.push_str(&format!("\n{}. {name} [{status}]: {}", i + 1, r.content_text()));
    }
    out
}

/// Alternates reasoning and acting until the model calls `finish` or
/// `max_iters` iterations have run.
///
/// `history` is the starting context (system prompt, memory). Each iteration
/// appends exactly two entries: the model output, then either the execution
/// results or the parsing diagnostic, verbatim.
pub fn react_run(
    model: &Model,
    toolkit: &Toolkit,
    agent_name: &str,
    mut history: Vec<PromptMessage>,
    max_iters: usize,
) -> Result<ReactOutcome> {
    if max_iters == 0 {
        return Err(Error::validation("max_iters must be at least 1"));
    }
    for iter in 1..=max_iters {
        let resp = model.invoke(&history)?;
        history.push(PromptMessage::new(Role::Assistant, agent_name, resp.text.clone()));
        let call = match toolkit.parse_tool_call(&resp.text) {
            Ok(c) => c,
            Err(diag) => {
                history.push(PromptMessage::new(Role::System, "system", diag.message));
                continue;
            }
        };
        let results = toolkit.execute_tool_call(&call)?;
        let names: Vec<String> = call.function.iter().map(|f| f.name.clone()).collect();
        history.push(PromptMessage::new(Role::System, "system", render_results(&names, &results)));
        if let Some(answer) = call.finish_response() {
            return Ok(ReactOutcome {
                answer,
                iterations: iter,
                history,
            });
        }
    }
    let trace = history
        .iter()
        .map(|p| Msg::builder(p.name.clone(), p.content.clone()).role(p.role).build())
        .collect::<Result<Vec<_>>>()?;
    Err(Error::ReactIncomplete {
        iterations: max_iters,
        trace,
    })
}

/// The system prompt of a ReAct agent: role text, tools, calling format.
pub fn react_sys_prompt(sys_prompt: &str, toolkit: &Toolkit) -> Result<String> {
    let tools = toolkit.tools_instruction()?;
    let mut out = String::new();
    if !sys_prompt.is_empty() {
        out.push_str(sys_prompt);
        out.push_str("\n\n");
    }
    out.push_str(&tools);
    out.push_str("\n\n");
    out.push_str(Toolkit::calling_format_instruction());
    Ok(out)
}
