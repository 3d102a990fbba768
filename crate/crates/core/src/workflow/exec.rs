//! Direct execution, plus the building blocks compiled programs call.

use std::sync::{Arc, Mutex};

use serde_json::{Map, Value};

use super::{AgentPayload, AgentSource, DistSpec, MessageLiteral, NodePayload, PipelineSpec, WorkflowGraph};
use crate::agents::{Agent, AgentConfig};
use crate::error::{Error, ErrorKind, Result};
use crate::models::ModelConfig;
use crate::monitor::{HumanSink, JsonlSink, StreamTarget};
use crate::msg::{Message, Msg, Role};
use crate::pipelines::{
    AgentOp, ForLoopPipeline, IfElsePipeline, Op, Operator, SequentialPipeline, SwitchPipeline, WhileLoopPipeline,
};
use crate::rpc::{config_to_dist, DistTarget};
use crate::runtime::Runtime;
use crate::services::ServiceFunction;

/// Collects every message a workflow produces, in production order.
/// Placeholders are kept as-is and resolved by [`Recorder::transcript`].
#[derive(Debug, Default)]
pub struct Recorder {
    msgs: Mutex<Vec<Message>>,
}

struct RecordingOp {
    inner: AgentOp,
    rec: Arc<Recorder>,
}

impl Operator for RecordingOp {
    fn call(&self, x: Option<Message>) -> Result<Option<Message>> {
        let out = self.inner.call(x)?;
        if let Some(m) = &out {
            self.rec.record(m.clone());
        }
        Ok(out)
    }
}

impl Recorder {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn record(&self, m: Message) {
        self.msgs.lock().unwrap().push(m);
    }

    /// An operator that replies with `agent` and records the reply.
    pub fn op(self: &Arc<Self>, agent: Arc<dyn Agent>) -> Op {
        Arc::new(RecordingOp {
            inner: AgentOp(agent),
            rec: self.clone(),
        })
    }

    /// Agent-node semantics: every input but the last is observed in order,
    /// then the agent replies to the last one.
    pub fn feed(&self, agent: &dyn Agent, inputs: &[Option<Message>]) -> Result<Option<Message>> {
        let (last, rest) = match inputs.split_last() {
            Some((last, rest)) => (last.as_ref(), rest),
            None => (None, &[][..]),
        };
        for m in rest.iter().flatten() {
            agent.observe(m).map_err(|e| e.in_agent(agent.name()))?;
        }
        let reply = agent.reply(last).map_err(|e| e.in_agent(agent.name()))?;
        self.record(reply.clone());
        Ok(Some(reply))
    }

    pub fn len(&self) -> usize {
        self.msgs.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The recorded messages, resolving placeholders.
    pub fn transcript(&self) -> Result<Vec<Msg>> {
        let msgs = self.msgs.lock().unwrap().clone();
        msgs.iter().map(Message::to_msg).collect()
    }
}

/// Runs `f`, tagging any error with node `id`.
pub fn tag_node<T>(id: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| e.at_node(id))
}

/// Content of `x`, or the empty string.
pub fn content_of(x: Option<&Message>) -> Result<String> {
    match x {
        Some(m) => Ok(m.content()?.to_string()),
        None => Ok(String::new()),
    }
}

/// Parses a JSON literal embedded in a compiled program.
pub fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::validation(format!("invalid embedded JSON: {e}")))
}

pub fn json_object(text: &str) -> Result<Map<String, Value>> {
    match serde_json::from_str(text)? {
        Value::Object(o) => Ok(o),
        _ => Err(Error::validation("expected a JSON object")),
    }
}

/// Registers a model node's config. Re-registering an identical config is a
/// no-op; a different config under the same name is an error.
pub fn register_model(rt: &Runtime, config: &ModelConfig) -> Result<()> {
    if rt.models().contains(&config.config_name) {
        if rt.models().config(&config.config_name)? == *config {
            return Ok(());
        }
        return Err(Error::validation(format!(
            "model config '{}' is already registered with different settings",
            config.config_name
        )));
    }
    rt.register_models(vec![config.clone()]).map(|_| ())
}

/// Creates an agent node's agent, locally or on an agent server.
pub fn build_agent(rt: &Arc<Runtime>, payload: &AgentPayload) -> Result<Arc<dyn Agent>> {
    let config = match &payload.source {
        AgentSource::Config(c) => c.clone(),
        AgentSource::Ref { agent_ref } => {
            let agent = rt.agent(agent_ref)?;
            match (&payload.to_dist, agent.config()) {
                (None | Some(DistSpec::InProcess(false)), _) => return Ok(agent),
                (_, Some(c)) => c,
                (_, None) => {
                    return Err(Error::validation(format!("agent '{agent_ref}' cannot be distributed: no config")))
                }
            }
        }
    };
    let target = match &payload.to_dist {
        None | Some(DistSpec::InProcess(false)) => return rt.create_agent(&config),
        Some(DistSpec::InProcess(true)) => DistTarget::InProcess,
        Some(DistSpec::Server { host, port }) => DistTarget::Server {
            host: host.clone(),
            port: *port,
        },
    };
    Ok(Arc::new(config_to_dist(config, target, rt)?))
}

fn body_op(rt: &Arc<Runtime>, rec: &Arc<Recorder>, body: &[AgentConfig]) -> Result<Op> {
    let ops = body
        .iter()
        .map(|c| Ok(rec.op(rt.create_agent(c)?)))
        .collect::<Result<Vec<Op>>>()?;
    Ok(Arc::new(SequentialPipeline::new(ops)?))
}

/// Instantiates a pipeline node: fresh agents per body entry, every reply
/// recorded.
pub fn build_pipeline(rt: &Arc<Runtime>, rec: &Arc<Recorder>, spec: &PipelineSpec) -> Result<Op> {
    Ok(match spec {
        PipelineSpec::Sequential { body } => body_op(rt, rec, body)?,
        PipelineSpec::Ifelse {
            condition,
            then,
            otherwise,
        } => {
            let then = body_op(rt, rec, then)?;
            let otherwise = otherwise.as_deref().map(|b| body_op(rt, rec, b)).transpose()?;
            let cond = condition.clone();
            Arc::new(IfElsePipeline::new(move |x| Ok(cond.eval(0, &content_of(x)?)), then, otherwise))
        }
        PipelineSpec::Switch { cases, default } => {
            let cases = cases
                .iter()
                .map(|c| Ok((c.key.clone(), body_op(rt, rec, &c.body)?)))
                .collect::<Result<Vec<_>>>()?;
            let default = default.as_deref().map(|b| body_op(rt, rec, b)).transpose()?;
            Arc::new(SwitchPipeline::new(|x| Ok(content_of(x)?.trim().to_string()), cases, default)?)
        }
        PipelineSpec::While {
            condition,
            body,
            max_iterations,
        } => {
            let body = body_op(rt, rec, body)?;
            let cond = condition.clone();
            let mut p = WhileLoopPipeline::new(body, move |i, x| Ok(cond.eval(i, &content_of(x)?)));
            if let Some(n) = max_iterations {
                p = p.with_max_iterations(*n)?;
            }
            Arc::new(p)
        }
        PipelineSpec::For { n, body } => Arc::new(ForLoopPipeline::new(body_op(rt, rec, body)?, *n)),
    })
}

/// Emits a message node's literal message.
pub fn emit_message(rt: &Runtime, rec: &Recorder, lit: &MessageLiteral) -> Result<Option<Message>> {
    let msg = Msg::builder(lit.name.clone(), lit.content.clone())
        .role(lit.role.unwrap_or(Role::User))
        .maybe_url(lit.url.clone())
        .metadata(lit.metadata.clone())
        .build()?;
    rt.logger().log_chat(&msg, &lit.name);
    let m = Message::from(msg);
    rec.record(m.clone());
    Ok(Some(m))
}

/// Calls a service node's function. The result becomes a system message
/// named after the service; an ERROR status fails the node.
pub fn run_service(
    rt: &Runtime,
    rec: &Recorder,
    service: &ServiceFunction,
    args: &Map<String, Value>,
    input_arg: Option<&str>,
    x: Option<&Message>,
) -> Result<Option<Message>> {
    let mut args = args.clone();
    if let (Some(key), Some(m)) = (input_arg, x) {
        args.insert(key.to_string(), Value::String(m.content()?.to_string()));
    }
    let resp = service.call(&args);
    if !resp.is_success() {
        return Err(Error::ToolRuntime(format!("{}: {}", service.name, resp.content_text())));
    }
    let msg = Msg::builder(service.name.clone(), resp.content_text()).role(Role::System).build()?;
    rt.logger().log_chat(&msg, &service.name);
    let m = Message::from(msg);
    rec.record(m.clone());
    Ok(Some(m))
}

enum Instance {
    None,
    Agent(Arc<dyn Agent>),
    Pipeline(Op),
    Service(ServiceFunction),
}

/// Runs a graph: first registers models and builds every agent, pipeline
/// and service in topological order, then executes nodes in that order.
/// Returns the transcript; the first failing node stops the run.
pub fn run_workflow(g: &WorkflowGraph, rt: &Arc<Runtime>) -> Result<Vec<Msg>> {
    let rec = Recorder::new();
    let order = g.topological_order();
    let mut instances = Vec::with_capacity(order.len());
    for node in &order {
        let inst = tag_node(&node.id, || {
            Ok(match &node.payload {
                NodePayload::Model(c) => {
                    register_model(rt, c)?;
                    Instance::None
                }
                NodePayload::Agent(a) => Instance::Agent(build_agent(rt, a)?),
                NodePayload::Pipeline(p) => Instance::Pipeline(build_pipeline(rt, &rec, p)?),
                NodePayload::Service(s) => Instance::Service(rt.services().get(&s.name)?),
                NodePayload::Message(_) | NodePayload::Copy => Instance::None,
            })
        })?;
        instances.push(inst);
    }

    let mut outputs: std::collections::HashMap<&str, Option<Message>> = std::collections::HashMap::new();
    for (node, inst) in order.iter().zip(&instances) {
        let inputs: Vec<Option<Message>> = node.inputs.iter().map(|i| outputs.get(i.as_str()).cloned().flatten()).collect();
        let first = inputs.first().cloned().flatten();
        let out = tag_node(&node.id, || match (&node.payload, inst) {
            (NodePayload::Model(_), _) => Ok(None),
            (NodePayload::Message(lit), _) => emit_message(rt, &rec, lit),
            (NodePayload::Copy, _) => Ok(first.clone()),
            (NodePayload::Agent(_), Instance::Agent(a)) => rec.feed(a.as_ref(), &inputs),
            (NodePayload::Pipeline(_), Instance::Pipeline(p)) => p.call(first.clone()),
            (NodePayload::Service(s), Instance::Service(f)) => {
                run_service(rt, &rec, f, &s.args, s.input_arg.as_deref(), first.as_ref())
            }
            _ => Err(Error::Internal("node instance does not match its payload".into())),
        })?;
        outputs.insert(node.id.as_str(), out);
    }
    rec.transcript()
}

/// Exit status for a failed run: 1 for invalid input, 3 for budget and
/// timeouts, 2 for everything else.
pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Validation | ErrorKind::WorkflowInvalid | ErrorKind::Deserialize => 1,
        ErrorKind::BudgetExceeded | ErrorKind::Timeout => 3,
        _ => 2,
    }
}

/// `main` of a compiled workflow program.
///
/// Arguments: `[--models FILE] [--agents FILE] [--seed N]`. Chat lines go to stdout as they
/// happen; the run directory (`AGENTMESH_RUN_DIR`, default `./runs`)
/// receives `log.jsonl` and, on success, `transcript.jsonl`. Returns the
/// process exit code.
pub fn run_program(run: fn(&Arc<Runtime>) -> Result<Vec<Msg>>) -> i32 {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut models = None;
    let mut agents = None;
    let mut it = args.iter();
    while let Some(a) = it.next() {
        match a.as_str() {
            "--models" => models = it.next().cloned(),
            "--agents" => agents = it.next().cloned(),
            "--seed" => match it.next().and_then(|s| s.parse::<u64>().ok()) {
                Some(seed) => crate::msg::seed_ids(seed),
                None => {
                    eprintln!("--seed needs an integer");
                    return 1;
                }
            },
            other => {
                eprintln!("unexpected argument: {other}");
                return 1;
            }
        }
    }
    let rt = Runtime::builder().build();
    rt.logger().add_sink(Arc::new(HumanSink::new(StreamTarget::Stdout, false)));
    match JsonlSink::create(rt.run_dir().join("log.jsonl")) {
        Ok(s) => rt.logger().add_sink(Arc::new(s)),
        Err(e) => eprintln!("cannot open run log: {e}"),
    }
    let result = (|| {
        if let Some(path) = &models {
            rt.register_model_file(path)?;
        }
        if let Some(path) = &agents {
            rt.load_agent_configs(&std::fs::read_to_string(path)?)?;
        }
        let transcript = run(&rt)?;
        write_transcript(rt.run_dir(), &transcript)?;
        Ok::<_, Error>(())
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Writes `transcript.jsonl` (one message per line) into `dir`.
pub fn write_transcript(dir: &std::path::Path, transcript: &[Msg]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut out = String::new();
    for m in transcript {
        out.push_str(&m.to_json());
        out.push('\n');
    }
    std::fs::write(dir.join("transcript.jsonl"), out)?;
    Ok(())
}
