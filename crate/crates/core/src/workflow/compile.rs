//! Workflow to Rust source.
//!
//! The emitted program has three sections: imports, initialization (models,
//! agents, pipelines, services, in topological order) and execution (one
//! statement per node, in topological order). It mirrors what
//! [`super::run_workflow`] does, so a built program yields the same
//! transcript.

use std::fmt::Write as _;

use super::{AgentPayload, AgentSource, Condition, DistSpec, NodePayload, PipelineSpec, WorkflowGraph};
use crate::agents::AgentConfig;
use crate::error::{Error, Result};
use crate::runtime::AGENT_CLASSES;
use crate::services::ServiceRegistry;

/// A raw string literal that can hold `s`.
fn raw(s: &str) -> String {
    let mut hashes = 1;
    while s.contains(&format!("\"{}", "#".repeat(hashes))) {
        hashes += 1;
    }
    let h = "#".repeat(hashes);
    format!("r{h}\"{s}\"{h}")
}

fn lit(s: &str) -> String {
    format!("{s:?}")
}

fn json<T: serde::Serialize>(v: &T) -> String {
    raw(&serde_json::to_string(v).unwrap_or_default())
}

fn cond_expr(c: &Condition) -> String {
    match c {
        Condition::Contains(s) => format!("c.contains({})", lit(s)),
        Condition::NotContains(s) => format!("!c.contains({})", lit(s)),
        Condition::Equals(s) => format!("c.trim() == {}", lit(s)),
        Condition::Always(b) => b.to_string(),
        Condition::IterLt(n) => format!("i < {n}"),
        Condition::All(cs) if cs.is_empty() => "true".into(),
        Condition::All(cs) => cs.iter().map(|c| format!("({})", cond_expr(c))).collect::<Vec<_>>().join(" && "),
    }
}

fn check_class(node: &str, c: &AgentConfig) -> Result<()> {
    if AGENT_CLASSES.contains(&c.agent_class.as_str()) {
        Ok(())
    } else {
        Err(Error::validation(format!("agent class '{}' cannot be compiled", c.agent_class)).at_node(node))
    }
}

/// Rust identifier for a node: its position in execution order plus a
/// sanitized id.
fn ident(index: usize, id: &str) -> String {
    let clean: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .take(24)
        .collect();
    format!("n{index}_{clean}")
}

fn body_expr(node: &str, body: &[AgentConfig], indent: &str) -> Result<String> {
    let mut s = format!("Arc::new(SequentialPipeline::new(vec![\n");
    for c in body {
        check_class(node, c)?;
        let _ = writeln!(
            s,
            "{indent}    rec.op(rt.create_agent(&AgentConfig::from_json({})?)?),",
            json(c)
        );
    }
    let _ = write!(s, "{indent}])?) as Op");
    Ok(s)
}

fn pipeline_expr(node: &str, spec: &PipelineSpec) -> Result<String> {
    let ind = "            ";
    Ok(match spec {
        PipelineSpec::Sequential { body } => body_expr(node, body, "        ")?,
        PipelineSpec::Ifelse {
            condition,
            then,
            otherwise,
        } => {
            let else_part = match otherwise {
                Some(b) => format!("Some({})", body_expr(node, b, ind)?),
                None => "None".into(),
            };
            format!(
                "Arc::new(IfElsePipeline::new(\n{ind}|x: Option<&Message>| {{ let (i, c) = (0usize, content_of(x)?); Ok({}) }},\n{ind}{},\n{ind}{else_part},\n        )) as Op",
                cond_expr(condition),
                body_expr(node, then, ind)?,
            )
        }
        PipelineSpec::Switch { cases, default } => {
            let mut s = String::from("Arc::new(SwitchPipeline::new(\n");
            let _ = writeln!(s, "{ind}|x: Option<&Message>| Ok(content_of(x)?.trim().to_string()),");
            let _ = writeln!(s, "{ind}vec![");
            for c in cases {
                let _ = writeln!(s, "{ind}    ({}.to_string(), {}),", lit(&c.key), body_expr(node, &c.body, "                ")?);
            }
            let _ = writeln!(s, "{ind}],");
            match default {
                Some(b) => {
                    let _ = writeln!(s, "{ind}Some({}),", body_expr(node, b, ind)?);
                }
                None => {
                    let _ = writeln!(s, "{ind}None,");
                }
            }
            s.push_str("        )?) as Op");
            s
        }
        PipelineSpec::While {
            condition,
            body,
            max_iterations,
        } => {
            let mut s = format!(
                "Arc::new(WhileLoopPipeline::new(\n{ind}{},\n{ind}|i: usize, x: Option<&Message>| {{ let c = content_of(x)?; Ok({}) }},\n        )",
                body_expr(node, body, ind)?,
                cond_expr(condition),
            );
            if let Some(n) = max_iterations {
                let _ = write!(s, ".with_max_iterations({n})?");
            }
            s.push_str(") as Op");
            s
        }
        PipelineSpec::For { n, body } => {
            format!("Arc::new(ForLoopPipeline::new({}, {n})) as Op", body_expr(node, body, "        ")?)
        }
    })
}

fn agent_expr(node: &str, a: &AgentPayload) -> Result<String> {
    let cfg = match &a.source {
        AgentSource::Config(c) => {
            check_class(node, c)?;
            format!("AgentConfig::from_json({})?", json(c))
        }
        AgentSource::Ref { agent_ref } => {
            let get = format!("rt.agent({})", lit(agent_ref));
            if matches!(a.to_dist, None | Some(DistSpec::InProcess(false))) {
                return Ok(get);
            }
            format!(
                "{get}?.config().ok_or_else(|| agentmesh::Error::validation(\"agent {agent_ref} cannot be distributed: no config\"))?"
            )
        }
    };
    Ok(match &a.to_dist {
        None | Some(DistSpec::InProcess(false)) => format!("rt.create_agent(&{cfg})"),
        Some(DistSpec::InProcess(true)) => {
            format!("Ok(Arc::new(config_to_dist({cfg}, DistTarget::InProcess, rt)?) as Arc<dyn Agent>)")
        }
        Some(DistSpec::Server { host, port }) => format!(
            "Ok(Arc::new(config_to_dist({cfg}, DistTarget::Server {{ host: {}.into(), port: {port} }}, rt)?) as Arc<dyn Agent>)",
            lit(host)
        ),
    })
}

/// Emits a Rust program equivalent to running `g` directly. Fails (naming
/// the node) on features a standalone program cannot reproduce: agent
/// classes outside the built-in factory and non-built-in services.
pub fn compile_workflow(g: &WorkflowGraph) -> Result<String> {
    let builtins = ServiceRegistry::with_builtins();
    let order = g.topological_order();
    let names: Vec<String> = order.iter().enumerate().map(|(i, n)| ident(i, &n.id)).collect();
    let name_of = |id: &str| -> String {
        order
            .iter()
            .position(|n| n.id == id)
            .map(|i| names[i].clone())
            .unwrap_or_default()
    };

    let mut init = String::new();
    let mut exec = String::new();
    for (node, var) in order.iter().zip(&names) {
        let id = lit(&node.id);
        let _ = writeln!(init, "    // {} node {:?}", node.kind(), node.id);
        let _ = writeln!(exec, "    // {} node {:?}", node.kind(), node.id);
        let inputs: Vec<String> = node.inputs.iter().map(|i| format!("out_{}", name_of(i))).collect();
        let first = inputs
            .first()
            .map(|v| format!("{v}.clone()"))
            .unwrap_or_else(|| "None".into());
        match &node.payload {
            NodePayload::Model(c) => {
                let _ = writeln!(init, "    tag_node({id}, || register_model(rt, &from_json({})?))?;", json(c));
                let _ = writeln!(exec, "    let out_{var}: Option<Message> = None;");
            }
            NodePayload::Agent(a) => {
                let _ = writeln!(
                    init,
                    "    let agent_{var}: Arc<dyn Agent> = tag_node({id}, || {})?;",
                    agent_expr(&node.id, a)?
                );
                let list: Vec<String> = inputs.iter().map(|v| format!("{v}.clone()")).collect();
                let _ = writeln!(
                    exec,
                    "    let out_{var} = tag_node({id}, || rec.feed(agent_{var}.as_ref(), &[{}]))?;",
                    list.join(", ")
                );
            }
            NodePayload::Pipeline(p) => {
                let _ = writeln!(
                    init,
                    "    let pipe_{var}: Op = tag_node({id}, || {{\n        Ok({})\n    }})?;",
                    pipeline_expr(&node.id, p)?
                );
                let _ = writeln!(exec, "    let out_{var} = tag_node({id}, || pipe_{var}.call({first}))?;");
            }
            NodePayload::Service(s) => {
                if !builtins.contains(&s.name) {
                    return Err(Error::validation(format!("service '{}' is not built in and cannot be compiled", s.name))
                        .at_node(&node.id));
                }
                let _ = writeln!(init, "    let svc_{var} = tag_node({id}, || rt.services().get({}))?;", lit(&s.name));
                let input_arg = match &s.input_arg {
                    Some(a) => format!("Some({})", lit(a)),
                    None => "None".into(),
                };
                let arg = inputs.first().map(|v| format!("{v}.as_ref()")).unwrap_or_else(|| "None".into());
                let _ = writeln!(
                    exec,
                    "    let out_{var} = tag_node({id}, || run_service(rt, &rec, &svc_{var}, &json_object({})?, {input_arg}, {arg}))?;",
                    json(&s.args)
                );
            }
            NodePayload::Message(m) => {
                let _ = writeln!(
                    exec,
                    "    let out_{var} = tag_node({id}, || emit_message(rt, &rec, &from_json({})?))?;",
                    json(m)
                );
            }
            NodePayload::Copy => {
                let _ = writeln!(exec, "    let out_{var} = {first};");
            }
        }
    }

    let mut src = String::new();
    src.push_str("//! Program generated from a workflow graph.\n");
    src.push_str("#![allow(unused_imports, unused_variables)]\n\n");
    src.push_str("// Imports\n");
    src.push_str("use std::sync::Arc;\n\n");
    src.push_str("use agentmesh::agents::{Agent, AgentConfig};\n");
    src.push_str("use agentmesh::error::Result;\n");
    src.push_str("use agentmesh::msg::{Message, Msg};\n");
    src.push_str("use agentmesh::pipelines::{\n    ForLoopPipeline, IfElsePipeline, Op, Operator, SequentialPipeline, SwitchPipeline, WhileLoopPipeline,\n};\n");
    src.push_str("use agentmesh::rpc::{config_to_dist, DistTarget};\n");
    src.push_str("use agentmesh::runtime::Runtime;\n");
    src.push_str(
        "use agentmesh::workflow::{content_of, emit_message, from_json, json_object, register_model, run_program, run_service, tag_node, Recorder};\n\n",
    );
    src.push_str("pub fn run(rt: &Arc<Runtime>) -> Result<Vec<Msg>> {\n");
    src.push_str("    let rec = Recorder::new();\n\n");
    src.push_str("    // Initialization\n");
    src.push_str(&init);
    src.push_str("\n    // Execution\n");
    src.push_str(&exec);
    src.push_str("\n    rec.transcript()\n}\n\n");
    src.push_str("fn main() {\n    std::process::exit(run_program(run));\n}\n");
    Ok(src)
}
