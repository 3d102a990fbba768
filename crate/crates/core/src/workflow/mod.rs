//! Workflow graphs: an application described as typed nodes with dependency
//! edges, loaded from JSON, statically checked, then either executed in
//! topological order or compiled to a standalone Rust program.
//!
//! ```json
//! {"nodes": [
//!   {"id": "hello", "kind": "message", "payload": {"name": "user", "content": "Hello"}},
//!   {"id": "echo", "kind": "agent", "payload": {"agent_class": "EchoAgent", "args": {"name": "echo"}},
//!    "inputs": ["hello"]}
//! ]}
//! ```

mod compile;
mod exec;

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::cmp::Reverse;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::agents::AgentConfig;
use crate::error::{Error, Result};
use crate::models::ModelConfig;
use crate::msg::Role;

pub use compile::compile_workflow;
pub use exec::{
    build_agent, build_pipeline, content_of, emit_message, exit_code, from_json, json_object, register_model, run_program,
    run_service, run_workflow, tag_node, write_transcript, Recorder,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Model,
    Agent,
    Pipeline,
    Service,
    Message,
    Copy,
}

impl NodeKind {
    pub const ALL: [NodeKind; 6] = [
        NodeKind::Model,
        NodeKind::Agent,
        NodeKind::Pipeline,
        NodeKind::Service,
        NodeKind::Message,
        NodeKind::Copy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Model => "model",
            Self::Agent => "agent",
            Self::Pipeline => "pipeline",
            Self::Service => "service",
            Self::Message => "message",
            Self::Copy => "copy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where an agent node's agent lives: `true` for a fresh in-process server,
/// or an existing server address.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistSpec {
    InProcess(bool),
    Server { host: String, port: u16 },
}

/// An agent node's agent: built from an inline config, or an agent already
/// registered in the runtime (for example from an agent configs file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AgentSource {
    Ref { agent_ref: String },
    Config(AgentConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPayload {
    #[serde(flatten)]
    pub source: AgentSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_dist: Option<DistSpec>,
}

/// A predicate over the loop counter `i` (0 outside loops) and the content
/// of the current message (empty when there is none).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Contains(String),
    NotContains(String),
    Equals(String),
    Always(bool),
    IterLt(usize),
    All(Vec<Condition>),
}

impl Condition {
    pub fn eval(&self, i: usize, content: &str) -> bool {
        match self {
            Self::Contains(s) => content.contains(s.as_str()),
            Self::NotContains(s) => !content.contains(s.as_str()),
            Self::Equals(s) => content.trim() == s,
            Self::Always(b) => *b,
            Self::IterLt(n) => i < *n,
            Self::All(cs) => cs.iter().all(|c| c.eval(i, content)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchCase {
    pub key: String,
    pub body: Vec<AgentConfig>,
}

/// A combinator over inline agents. Each body runs its agents in sequence;
/// switch keys match the trimmed message content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PipelineSpec {
    Sequential {
        body: Vec<AgentConfig>,
    },
    Ifelse {
        condition: Condition,
        then: Vec<AgentConfig>,
        #[serde(default, rename = "else", skip_serializing_if = "Option::is_none")]
        otherwise: Option<Vec<AgentConfig>>,
    },
    Switch {
        cases: Vec<SwitchCase>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        default: Option<Vec<AgentConfig>>,
    },
    While {
        condition: Condition,
        body: Vec<AgentConfig>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_iterations: Option<usize>,
    },
    For {
        n: usize,
        body: Vec<AgentConfig>,
    },
}

impl PipelineSpec {
    /// Every agent config in every branch, in declaration order.
    pub fn agents(&self) -> Vec<&AgentConfig> {
        match self {
            Self::Sequential { body } | Self::While { body, .. } | Self::For { body, .. } => body.iter().collect(),
            Self::Ifelse { then, otherwise, .. } => then.iter().chain(otherwise.iter().flatten()).collect(),
            Self::Switch { cases, default } => cases
                .iter()
                .flat_map(|c| c.body.iter())
                .chain(default.iter().flatten())
                .collect(),
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        let bodies: Vec<&Vec<AgentConfig>> = match self {
            Self::Sequential { body } | Self::While { body, .. } | Self::For { body, .. } => vec![body],
            Self::Ifelse { then, otherwise, .. } => std::iter::once(then).chain(otherwise.iter()).collect(),
            Self::Switch { cases, default } => {
                if cases.is_empty() {
                    return Err("switch needs at least one case".into());
                }
                let mut keys = BTreeSet::new();
                for c in cases {
                    if !keys.insert(c.key.as_str()) {
                        return Err(format!("duplicate switch case '{}'", c.key));
                    }
                }
                cases.iter().map(|c| &c.body).chain(default.iter()).collect()
            }
        };
        if bodies.iter().any(|b| b.is_empty()) {
            return Err("pipeline body is empty".into());
        }
        if let Self::While { max_iterations: Some(0), .. } = self {
            return Err("max_iterations must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServicePayload {
    pub name: String,
    #[serde(default)]
    pub args: Map<String, Value>,
    /// Argument that receives the input message's content.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_arg: Option<String>,
}

/// Literal fields of a message node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageLiteral {
    pub name: String,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub metadata: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodePayload {
    Model(ModelConfig),
    Agent(AgentPayload),
    Pipeline(PipelineSpec),
    Service(ServicePayload),
    Message(MessageLiteral),
    Copy,
}

impl NodePayload {
    pub fn kind(&self) -> NodeKind {
        match self {
            Self::Model(_) => NodeKind::Model,
            Self::Agent(_) => NodeKind::Agent,
            Self::Pipeline(_) => NodeKind::Pipeline,
            Self::Service(_) => NodeKind::Service,
            Self::Message(_) => NodeKind::Message,
            Self::Copy => NodeKind::Copy,
        }
    }

    fn parse(kind: NodeKind, v: &Value) -> std::result::Result<Self, String> {
        fn de<T: serde::de::DeserializeOwned>(v: &Value) -> std::result::Result<T, String> {
            serde_json::from_value(v.clone()).map_err(|e| e.to_string())
        }
        Ok(match kind {
            NodeKind::Model => Self::Model(de(v)?),
            NodeKind::Agent => Self::Agent(de(v)?),
            NodeKind::Pipeline => {
                let spec: PipelineSpec = de(v)?;
                spec.check()?;
                Self::Pipeline(spec)
            }
            NodeKind::Service => Self::Service(de(v)?),
            NodeKind::Message => Self::Message(de(v)?),
            NodeKind::Copy => Self::Copy,
        })
    }

    fn to_value(&self) -> Value {
        let v = match self {
            Self::Model(c) => serde_json::to_value(c),
            Self::Agent(a) => serde_json::to_value(a),
            Self::Pipeline(p) => serde_json::to_value(p),
            Self::Service(s) => serde_json::to_value(s),
            Self::Message(m) => serde_json::to_value(m),
            Self::Copy => Ok(Value::Null),
        };
        v.unwrap_or(Value::Null)
    }

    /// Model config names this payload's agents refer to.
    fn model_refs(&self) -> Vec<String> {
        let configs: Vec<&AgentConfig> = match self {
            Self::Agent(AgentPayload {
                source: AgentSource::Config(c),
                ..
            }) => vec![c],
            Self::Pipeline(p) => p.agents(),
            _ => Vec::new(),
        };
        configs
            .into_iter()
            .filter(|c| !c.args.contains_key("model_config"))
            .filter_map(|c| c.str_arg("model_config_name").map(str::to_string))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowNode {
    pub id: String,
    pub payload: NodePayload,
    pub inputs: Vec<String>,
}

impl WorkflowNode {
    pub fn kind(&self) -> NodeKind {
        self.payload.kind()
    }
}

/// A validated, acyclic workflow graph.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowGraph {
    nodes: Vec<WorkflowNode>,
    order: Vec<usize>,
}

impl WorkflowGraph {
    pub fn nodes(&self) -> &[WorkflowNode] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&WorkflowNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Execution order: every node after its inputs, ties broken by id.
    pub fn topological_order(&self) -> Vec<&WorkflowNode> {
        self.order.iter().map(|&i| &self.nodes[i]).collect()
    }

    pub fn to_value(&self) -> Value {
        let nodes: Vec<Value> = self
            .nodes
            .iter()
            .map(|n| {
                serde_json::json!({
                    "id": n.id,
                    "kind": n.kind(),
                    "payload": n.payload.to_value(),
                    "inputs": n.inputs,
                })
            })
            .collect();
        serde_json::json!({ "nodes": nodes })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_value()).unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    /// A node entry that is not an object with a string `id`.
    Schema,
    UnknownKind,
    DuplicateId,
    DanglingInput,
    Cycle,
    MissingModel,
    /// Model nodes stand apart from the data flow and take no inputs.
    ModelHasInputs,
    /// Wrong number or kind of inputs for the node type.
    Arity,
    InvalidPayload,
}

impl IssueKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Schema => "schema",
            Self::UnknownKind => "unknown_kind",
            Self::DuplicateId => "duplicate_id",
            Self::DanglingInput => "dangling_input",
            Self::Cycle => "cycle",
            Self::MissingModel => "missing_model",
            Self::ModelHasInputs => "model_has_inputs",
            Self::Arity => "arity",
            Self::InvalidPayload => "invalid_payload",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationIssue {
    pub kind: IssueKind,
    /// Node ids involved; for cycles, the cycle in edge order starting at
    /// its smallest id.
    pub nodes: Vec<String>,
    pub message: String,
}

/// Every problem found in a graph, not just the first.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn of_kind(&self, kind: IssueKind) -> Vec<&ValidationIssue> {
        self.issues.iter().filter(|i| i.kind == kind).collect()
    }

    /// Ids named by issues of `kind`, deduplicated and sorted.
    pub fn node_ids(&self, kind: IssueKind) -> Vec<String> {
        let ids: BTreeSet<String> = self.of_kind(kind).iter().flat_map(|i| i.nodes.iter().cloned()).collect();
        ids.into_iter().collect()
    }

    fn push(&mut self, kind: IssueKind, nodes: Vec<String>, message: String) {
        self.issues.push(ValidationIssue { kind, nodes, message });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{}: {}", issue.kind.as_str(), issue.message)?;
        }
        Ok(())
    }
}

/// Parses and validates a workflow. Model references must resolve to model
/// nodes in the graph.
pub fn load_workflow(json: &str) -> Result<WorkflowGraph> {
    load_workflow_with(json, &[])
}

/// Like [`load_workflow`], also accepting references to `known_models`
/// (configs registered outside the graph).
pub fn load_workflow_with(json: &str, known_models: &[String]) -> Result<WorkflowGraph> {
    let v: Value = serde_json::from_str(json).map_err(|e| Error::Deserialize(format!("workflow is not valid JSON: {e}")))?;
    from_value(&v, known_models)
}

pub fn from_value(v: &Value, known_models: &[String]) -> Result<WorkflowGraph> {
    let Some(raw_nodes) = v.get("nodes").and_then(Value::as_array) else {
        return Err(Error::Deserialize("workflow must be an object with a \"nodes\" array".into()));
    };
    let mut report = ValidationReport::default();
    let mut nodes: Vec<WorkflowNode> = Vec::new();
    let mut ids: HashMap<String, usize> = HashMap::new();
    // Ids of every well-formed entry, including ones with bad kinds or
    // payloads, so edges to them are not also reported as dangling.
    let mut declared: BTreeMap<String, Option<NodeKind>> = BTreeMap::new();

    for (index, raw) in raw_nodes.iter().enumerate() {
        let Some(id) = raw.get("id").and_then(Value::as_str) else {
            report.push(IssueKind::Schema, vec![format!("#{index}")], format!("node #{index} has no string \"id\""));
            continue;
        };
        let inputs: Vec<String> = match raw.get("inputs") {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::Array(a)) if a.iter().all(Value::is_string) => {
                a.iter().filter_map(|x| x.as_str().map(str::to_string)).collect()
            }
            Some(_) => {
                report.push(
                    IssueKind::Schema,
                    vec![id.to_string()],
                    format!("node '{id}': \"inputs\" must be a list of node ids"),
                );
                Vec::new()
            }
        };
        if declared.contains_key(id) {
            report.push(IssueKind::DuplicateId, vec![id.to_string()], format!("node id '{id}' is used more than once"));
            continue;
        }
        let kind_str = raw.get("kind").and_then(Value::as_str).unwrap_or("");
        let Some(kind) = NodeKind::parse(kind_str) else {
            declared.insert(id.to_string(), None);
            report.push(
                IssueKind::UnknownKind,
                vec![id.to_string()],
                format!(
                    "node '{id}' has unknown kind '{kind_str}' (expected one of: model, agent, pipeline, service, message, copy)"
                ),
            );
            continue;
        };
        declared.insert(id.to_string(), Some(kind));
        let payload = raw.get("payload").cloned().unwrap_or(Value::Null);
        match NodePayload::parse(kind, &payload) {
            Ok(p) => {
                ids.insert(id.to_string(), nodes.len());
                nodes.push(WorkflowNode {
                    id: id.to_string(),
                    payload: p,
                    inputs,
                });
            }
            Err(e) => {
                report.push(
                    IssueKind::InvalidPayload,
                    vec![id.to_string()],
                    format!("node '{id}' ({kind}) has an invalid payload: {e}"),
                );
                // Still check its edges.
                nodes.push(WorkflowNode {
                    id: id.to_string(),
                    payload: NodePayload::Copy,
                    inputs,
                });
                ids.insert(id.to_string(), nodes.len() - 1);
            }
        }
    }

    let kind_of = |id: &str| declared.get(id).copied().flatten();
    for n in &nodes {
        for input in &n.inputs {
            if !declared.contains_key(input) {
                report.push(
                    IssueKind::DanglingInput,
                    vec![n.id.clone(), input.clone()],
                    format!("node '{}' lists input '{input}', which does not exist", n.id),
                );
            } else if kind_of(input) == Some(NodeKind::Model) {
                report.push(
                    IssueKind::Arity,
                    vec![n.id.clone(), input.clone()],
                    format!("node '{}' takes input from model node '{input}', which produces no message", n.id),
                );
            }
        }
        let declared_kind = kind_of(&n.id);
        let count = n.inputs.len();
        let arity = match declared_kind {
            Some(NodeKind::Model) if count > 0 => Some((IssueKind::ModelHasInputs, "no inputs")),
            Some(NodeKind::Message) if count > 0 => Some((IssueKind::Arity, "no inputs")),
            Some(NodeKind::Copy) if count != 1 => Some((IssueKind::Arity, "exactly one input")),
            Some(NodeKind::Pipeline) | Some(NodeKind::Service) if count > 1 => Some((IssueKind::Arity, "at most one input")),
            _ => None,
        };
        if let (Some((kind, expect)), Some(k)) = (arity, declared_kind) {
            report.push(
                kind,
                vec![n.id.clone()],
                format!("{k} node '{}' takes {expect} but has {count}", n.id),
            );
        }
    }

    let mut defined_models: BTreeSet<String> = known_models.iter().cloned().collect();
    for n in &nodes {
        if let NodePayload::Model(c) = &n.payload {
            if !defined_models.insert(c.config_name.clone()) && !known_models.contains(&c.config_name) {
                report.push(
                    IssueKind::InvalidPayload,
                    vec![n.id.clone()],
                    format!("model node '{}' redefines config '{}'", n.id, c.config_name),
                );
            }
        }
    }
    for n in &nodes {
        for name in n.payload.model_refs() {
            if !defined_models.contains(&name) {
                report.push(
                    IssueKind::MissingModel,
                    vec![n.id.clone()],
                    format!("node '{}' refers to model config '{name}', which no model node defines", n.id),
                );
            }
        }
    }

    for cycle in find_cycles(&nodes, &ids) {
        let mut path = cycle.clone();
        path.push(cycle[0].clone());
        report.push(IssueKind::Cycle, cycle, format!("cycle: {}", path.join(" -> ")));
    }

    if !report.is_empty() {
        return Err(Error::WorkflowInvalid(report));
    }
    let order = topo_order(&nodes, &ids);
    Ok(WorkflowGraph { nodes, order })
}

/// Depth-first search from each node in id order; every back edge yields the
/// cycle on the current path, rotated to start at its smallest id.
fn find_cycles(nodes: &[WorkflowNode], ids: &HashMap<String, usize>) -> Vec<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Color {
        White,
        Grey,
        Black,
    }
    // Edges run from an input to its consumer.
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (v, n) in nodes.iter().enumerate() {
        for input in &n.inputs {
            if let Some(&u) = ids.get(input) {
                succ[u].push(v);
            }
        }
    }
    for s in &mut succ {
        s.sort_by(|a, b| nodes[*a].id.cmp(&nodes[*b].id));
        s.dedup();
    }
    let mut by_id: Vec<usize> = (0..nodes.len()).collect();
    by_id.sort_by(|a, b| nodes[*a].id.cmp(&nodes[*b].id));

    let mut color = vec![Color::White; nodes.len()];
    let mut found: BTreeSet<Vec<String>> = BTreeSet::new();
    let mut out = Vec::new();
    for &start in &by_id {
        if color[start] != Color::White {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
        color[start] = Color::Grey;
        while let Some(&mut (u, ref mut next)) = stack.last_mut() {
            if *next < succ[u].len() {
                let v = succ[u][*next];
                *next += 1;
                match color[v] {
                    Color::White => {
                        color[v] = Color::Grey;
                        stack.push((v, 0));
                    }
                    Color::Grey => {
                        let pos = stack.iter().position(|&(w, _)| w == v).unwrap_or(0);
                        let mut cycle: Vec<String> = stack[pos..].iter().map(|&(w, _)| nodes[w].id.clone()).collect();
                        let min = (0..cycle.len()).min_by(|a, b| cycle[*a].cmp(&cycle[*b])).unwrap_or(0);
                        cycle.rotate_left(min);
                        if found.insert(cycle.clone()) {
                            out.push(cycle);
                        }
                    }
                    Color::Black => {}
                }
            } else {
                color[u] = Color::Black;
                stack.pop();
            }
        }
    }
    out
}

/// Kahn's algorithm with a min-heap on ids. Model nodes come first so every
/// config is registered before any agent that uses it is built.
fn topo_order(nodes: &[WorkflowNode], ids: &HashMap<String, usize>) -> Vec<usize> {
    let mut indegree = vec![0usize; nodes.len()];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (v, n) in nodes.iter().enumerate() {
        let distinct: BTreeSet<&String> = n.inputs.iter().collect();
        for input in distinct {
            if let Some(&u) = ids.get(input) {
                succ[u].push(v);
                indegree[v] += 1;
            }
        }
    }
    let key = |i: usize| Reverse((nodes[i].kind() != NodeKind::Model, nodes[i].id.as_str(), i));
    let mut ready: BinaryHeap<Reverse<(bool, &str, usize)>> =
        indegree.iter().enumerate().filter(|(_, d)| **d == 0).map(|(i, _)| key(i)).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(Reverse((_, _, u))) = ready.pop() {
        order.push(u);
        for &v in &succ[u] {
            indegree[v] -= 1;
            if indegree[v] == 0 {
                ready.push(key(v));
            }
        }
    }
    order
}
