//! Service functions, the tool-calling toolkit, and the ReAct loop.

mod arithmetic;
mod builtin;
mod react;
mod search;

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

pub use arithmetic::{evaluate, format_number};
pub use builtin::{evaluate_arithmetic, keyword_search_corpus, read_text_file, write_text_file};
pub use react::{react_run, react_sys_prompt, ReactOutcome};
pub use search::{
    web_search, BingSearch, GoogleSearch, MockSearchEngine, SearchEngine, SearchEngines, SearchHit,
};

use crate::error::{Error, Result};
use crate::models::repair_json;
use crate::msg::canonicalize;

/// Name of the reserved tool that ends a ReAct loop.
pub const FINISH_TOOL: &str = "finish";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ServiceStatus {
    #[serde(rename = "SUCCESS")]
    Success,
    #[serde(rename = "ERROR")]
    Error,
}

/// Status plus payload, returned by every service function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceResponse {
    pub status: ServiceStatus,
    pub content: Value,
}

impl ServiceResponse {
    pub fn success(content: impl Into<Value>) -> Self {
        Self {
            status: ServiceStatus::Success,
            content: content.into(),
        }
    }

    /// An error response; an empty diagnostic is replaced by a generic one.
    pub fn error(diagnostic: impl Into<String>) -> Self {
        let mut d = diagnostic.into();
        if d.is_empty() {
            d = "unspecified error".into();
        }
        Self {
            status: ServiceStatus::Error,
            content: Value::String(d),
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == ServiceStatus::Success
    }

    /// Content as display text (strings unquoted).
    pub fn content_text(&self) -> String {
        match &self.content {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: String,
    pub description: String,
    pub required: bool,
}

type ServiceFn = dyn Fn(&Map<String, Value>) -> ServiceResponse + Send + Sync;

/// A callable with declared parameters.
#[derive(Clone)]
pub struct ServiceFunction {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
    func: Arc<ServiceFn>,
}

impl std::fmt::Debug for ServiceFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServiceFunction")
            .field("name", &self.name)
            .field("params", &self.params)
            .finish()
    }
}

impl ServiceFunction {
    pub fn new(
        name: impl Into<String>,
        description: impl Into<String>,
        func: impl Fn(&Map<String, Value>) -> ServiceResponse + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            params: Vec::new(),
            func: Arc::new(func),
        }
    }

    pub fn param(mut self, name: &str, ty: &str, description: &str) -> Self {
        self.params.push(ParamSpec {
            name: name.into(),
            ty: ty.into(),
            description: description.into(),
            required: true,
        });
        self
    }

    pub fn optional_param(mut self, name: &str, ty: &str, description: &str) -> Self {
        self.params.push(ParamSpec {
            name: name.into(),
            ty: ty.into(),
            description: description.into(),
            required: false,
        });
        self
    }

    /// Runs the function; panics become error responses.
    pub fn call(&self, args: &Map<String, Value>) -> ServiceResponse {
        match catch_unwind(AssertUnwindSafe(|| (self.func)(args))) {
            Ok(r) => r,
            Err(panic) => {
                let what = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                ServiceResponse::error(format!("{} failed: {what}", self.name))
            }
        }
    }
}

/// Typed accessors used by service implementations.
pub fn arg_str<'a>(args: &'a Map<String, Value>, key: &str) -> std::result::Result<&'a str, String> {
    match args.get(key) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(format!("argument '{key}' must be a string")),
        None => Err(format!("missing argument: {key}")),
    }
}

pub fn arg_usize(args: &Map<String, Value>, key: &str, default: usize) -> std::result::Result<usize, String> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => v
            .as_u64()
            .or_else(|| v.as_str().and_then(|s| s.parse().ok()))
            .map(|n| n as usize)
            .ok_or_else(|| format!("argument '{key}' must be a non-negative integer")),
    }
}

/// Model-facing description of a tool; presets are hidden.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    /// Parameters the model fills in.
    pub params: Vec<ParamSpec>,
    pub preset: Map<String, Value>,
}

impl ToolSpec {
    /// `{name, description, parameters: {type: object, properties, required}}`.
    pub fn json_schema(&self) -> Value {
        let mut props = Map::new();
        for p in &self.params {
            props.insert(p.name.clone(), json!({"type": p.ty, "description": p.description}));
        }
        let required: Vec<&str> = self.params.iter().filter(|p| p.required).map(|p| p.name.as_str()).collect();
        let mut parameters = json!({"type": "object", "properties": props});
        if !required.is_empty() {
            parameters["required"] = json!(required);
        }
        json!({
            "name": self.name,
            "description": self.description,
            "parameters": parameters,
        })
    }
}

#[derive(Debug, Clone)]
struct Tool {
    spec: ToolSpec,
    function: ServiceFunction,
}

/// One function invocation inside a tool call.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionCall {
    pub name: String,
    pub arguments: Map<String, Value>,
}

/// A parsed model response in the calling format.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolCall {
    pub thought: String,
    pub speak: String,
    pub function: Vec<FunctionCall>,
}

impl ToolCall {
    pub fn to_value(&self) -> Value {
        let calls: Vec<Value> = self
            .function
            .iter()
            .map(|c| json!({"name": c.name, "arguments": c.arguments}))
            .collect();
        canonicalize(json!({"thought": self.thought, "speak": self.speak, "function": calls}))
    }

    /// The calling format: one JSON object in a fenced block.
    pub fn render(&self) -> String {
        format!("```json\n{}\n```", self.to_value())
    }

    /// The `response` argument of a `finish` call, if any.
    pub fn finish_response(&self) -> Option<String> {
        self.function.iter().find(|c| c.name == FINISH_TOOL).map(|c| match c.arguments.get("response") {
            Some(Value::String(s)) => s.clone(),
            Some(v) => v.to_string(),
            None => String::new(),
        })
    }
}

/// Why a response could not be acted on. Both kinds are fed back to the
/// model for correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    /// Not in the calling format at all.
    ResponseParsing,
    /// Well-formed, but names an unknown tool or has bad arguments.
    InvalidCall,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallDiagnostic {
    pub kind: DiagnosticKind,
    pub message: String,
}

impl std::fmt::Display for CallDiagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

const CALLING_FORMAT: &str = "Respond with one JSON object in a Markdown fenced code block, in this format:
```json
{\"thought\": \"what you think and plan to do next\", \"speak\": \"what you say to the user\", \"function\": [{\"name\": \"tool name\", \"arguments\": {\"argument name\": \"argument value\"}}]}
```
The \"function\" field is a list of calls, executed in order. When the task is done, call the \"finish\" tool with the final answer in its \"response\" argument.";

/// Registered tools, in registration order.
#[derive(Debug, Clone, Default)]
pub struct Toolkit {
    tools: Vec<Tool>,
}

impl Toolkit {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `function` with developer-preset arguments bound. Only the
    /// remaining parameters appear in the tool's schema.
    pub fn add(&mut self, function: ServiceFunction, preset: Map<String, Value>) -> Result<ToolSpec> {
        if function.name == FINISH_TOOL {
            return Err(Error::validation(format!("tool name '{FINISH_TOOL}' is reserved")));
        }
        if self.tools.iter().any(|t| t.spec.name == function.name) {
            return Err(Error::validation(format!("duplicate tool: {}", function.name)));
        }
        for key in preset.keys() {
            if !function.params.iter().any(|p| &p.name == key) {
                return Err(Error::validation(format!(
                    "unknown preset argument '{key}' for tool '{}'",
                    function.name
                )));
            }
        }
        let spec = ToolSpec {
            name: function.name.clone(),
            description: function.description.clone(),
            params: function
                .params
                .iter()
                .filter(|p| !preset.contains_key(&p.name))
                .cloned()
                .collect(),
            preset,
        };
        self.tools.push(Tool {
            spec: spec.clone(),
            function,
        });
        Ok(spec)
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn specs(&self) -> Vec<ToolSpec> {
        self.tools.iter().map(|t| t.spec.clone()).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.tools.iter().map(|t| t.spec.name.clone()).collect()
    }

    pub fn json_schemas(&self) -> Vec<Value> {
        self.tools.iter().map(|t| t.spec.json_schema()).collect()
    }

    fn tool(&self, name: &str) -> Option<&Tool> {
        self.tools.iter().find(|t| t.spec.name == name)
    }

    /// Numbered tool list with descriptions and parameters.
    pub fn tools_instruction(&self) -> Result<String> {
        if self.tools.is_empty() {
            return Err(Error::validation("toolkit has no tools"));
        }
        let mut out = String::from("## Tools\nThe following tools are available:\n");
        let finish = ToolSpec {
            name: FINISH_TOOL.into(),
            description: "Finish the task and give the final answer.".into(),
            params: vec![ParamSpec {
                name: "response".into(),
                ty: "string".into(),
                description: "The final answer.".into(),
                required: true,
            }],
            preset: Map::new(),
        };
        let specs = self.tools.iter().map(|t| &t.spec).chain(std::iter::once(&finish));
        for (i, spec) in specs.enumerate() {
            out.push_str(&format!("{}. {}: {}\n", i + 1, spec.name, spec.description));
            for p in &spec.params {
                let req = if p.required { "required" } else { "optional" };
                out.push_str(&format!("    {} ({}, {}): {}\n", p.name, p.ty, req, p.description));
            }
        }
        Ok(out.trim_end().to_string())
    }

    pub fn calling_format_instruction() -> &'static str {
        CALLING_FORMAT
    }

    /// Parses a response in the calling format and validates every call
    /// against the registered tools.
    pub fn parse_tool_call(&self, text: &str) -> std::result::Result<ToolCall, CallDiagnostic> {
        let parsing = |m: String| CallDiagnostic {
            kind: DiagnosticKind::ResponseParsing,
            message: format!("response parsing error: {m}"),
        };
        let invalid = |m: String| CallDiagnostic {
            kind: DiagnosticKind::InvalidCall,
            message: format!("invalid function call: {m}"),
        };
        let value = repair_json(text).map_err(|e| parsing(format!("no JSON object found ({e})")))?;
        let Value::Object(obj) = value else {
            return Err(parsing("expected a JSON object".into()));
        };
        let missing: Vec<String> = ["thought", "speak", "function"]
            .iter()
            .filter(|k| !obj.contains_key(**k))
            .map(|k| format!("missing field: {k}"))
            .collect();
        if !missing.is_empty() {
            return Err(parsing(missing.join("; ")));
        }
        let text_field = |k: &str| match &obj[k] {
            Value::String(s) => Ok(s.clone()),
            _ => Err(parsing(format!("malformed field: {k} (expected a string)"))),
        };
        let thought = text_field("thought")?;
        let speak = text_field("speak")?;
        let items = match &obj["function"] {
            Value::Array(a) => a.clone(),
            o @ Value::Object(_) => vec![o.clone()],
            _ => return Err(parsing("malformed field: function (expected a list)".into())),
        };
        let mut function = Vec::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            let Some(item) = item.as_object() else {
                return Err(parsing(format!("malformed field: function[{i}] (expected an object)")));
            };
            let name = match item.get("name") {
                Some(Value::String(s)) => s.clone(),
                _ => return Err(parsing(format!("missing field: function[{i}].name"))),
            };
            let arguments = match item.get("arguments") {
                None | Some(Value::Null) => Map::new(),
                Some(Value::Object(m)) => m.clone(),
                Some(_) => return Err(parsing(format!("malformed field: function[{i}].arguments"))),
            };
            let params: Vec<ParamSpec> = if name == FINISH_TOOL {
                vec![ParamSpec {
                    name: "response".into(),
                    ty: "string".into(),
                    description: String::new(),
                    required: true,
                }]
            } else {
                match self.tool(&name) {
                    Some(t) => t.spec.params.clone(),
                    None => {
                        let mut valid = self.names();
                        valid.push(FINISH_TOOL.into());
                        return Err(invalid(format!(
                            "unknown tool '{name}'; valid tools: {}",
                            valid.join(", ")
                        )));
                    }
                }
            };
            for p in params.iter().filter(|p| p.required) {
                if !arguments.contains_key(&p.name) {
                    return Err(invalid(format!("tool '{name}' missing required argument: {}", p.name)));
                }
            }
            for key in arguments.keys() {
                if !params.iter().any(|p| &p.name == key) {
                    return Err(invalid(format!("tool '{name}' got unexpected argument: {key}")));
                }
            }
            function.push(FunctionCall { name, arguments });
        }
        Ok(ToolCall { thought, speak, function })
    }

    /// Executes every call in order. Function failures (including panics)
    /// come back as error responses; an unregistered tool is a runtime
    /// error.
    pub fn execute_tool_call(&self, call: &ToolCall) -> Result<Vec<ServiceResponse>> {
        let mut out = Vec::with_capacity(call.function.len());
        for fc in &call.function {
            if fc.name == FINISH_TOOL {
                out.push(ServiceResponse::success(
                    fc.arguments.get("response").cloned().unwrap_or(Value::String(String::new())),
                ));
                continue;
            }
            let tool = self
                .tool(&fc.name)
                .ok_or_else(|| Error::ToolRuntime(format!("tool '{}' is not registered", fc.name)))?;
            let mut args = tool.spec.preset.clone();
            for (k, v) in &fc.arguments {
                args.insert(k.clone(), v.clone());
            }
            out.push(tool.function.call(&args));
        }
        Ok(out)
    }
}

/// Named service functions available to workflows and agent configs.
#[derive(Debug, Clone)]
pub struct ServiceRegistry {
    functions: Arc<RwLock<HashMap<String, ServiceFunction>>>,
    engines: SearchEngines,
}

impl Default for ServiceRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl ServiceRegistry {
    pub fn empty() -> Self {
        Self {
            functions: Arc::new(RwLock::new(HashMap::new())),
            engines: SearchEngines::with_defaults(),
        }
    }

    /// `read_text_file`, `write_text_file`, `evaluate_arithmetic`,
    /// `keyword_search_corpus` and `web_search`.
    pub fn with_builtins() -> Self {
        let r = Self::empty();
        r.register(read_text_file());
        r.register(write_text_file());
        r.register(evaluate_arithmetic());
        r.register(keyword_search_corpus());
        r.register(web_search(r.engines.clone()));
        r
    }

    pub fn register(&self, f: ServiceFunction) {
        self.functions.write().unwrap().insert(f.name.clone(), f);
    }

    pub fn get(&self, name: &str) -> Result<ServiceFunction> {
        self.functions
            .read()
            .unwrap()
            .get(name)
            .cloned()
            .ok_or_else(|| Error::validation(format!("unknown service: {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.functions.read().unwrap().contains_key(name)
    }

    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.functions.read().unwrap().keys().cloned().collect();
        v.sort();
        v
    }

    pub fn engines(&self) -> &SearchEngines {
        &self.engines
    }

    /// Builds a toolkit from `[{"name": ..., "preset": {...}}]` or plain names.
    pub fn toolkit(&self, tools: &[Value]) -> Result<Toolkit> {
        let mut tk = Toolkit::new();
        for t in tools {
            let (name, preset) = match t {
                Value::String(s) => (s.clone(), Map::new()),
                Value::Object(o) => (
                    o.get("name")
                        .and_then(Value::as_str)
                        .ok_or_else(|| Error::validation("tool entry missing field: name"))?
                        .to_string(),
                    o.get("preset").and_then(Value::as_object).cloned().unwrap_or_default(),
                ),
                _ => return Err(Error::validation("tool entry must be a name or an object")),
            };
            tk.add(self.get(&name)?, preset)?;
        }
        Ok(tk)
    }
}
