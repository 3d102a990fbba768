//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::HashSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use agentmesh::agents::{
    filter_agents, Agent, DialogAgent, DictDialogAgent, EchoAgent, FnAgent, RagAgent, ReActAgent, ScriptedInput,
    UserAgent,
};
use agentmesh::knowledge::{fused_retrieve, hashed_bow, KnowledgeConfig, KnowledgeObject, MockEmbedder, Retrieved};
use agentmesh::models::{repair_json, ModelConfig, ModelResponse, PromptMessage, RetryPolicy, ScriptedRule};
use agentmesh::monitor::{Budget, BudgetAction, BudgetMetric, ChatLogger, FileManager, LogLevel, MemorySink};
use agentmesh::msg::{seed_ids, Message, Msg, Role};
use agentmesh::pipelines::{agent_ops, sequential, MsgHub, Op, Operator, SequentialPipeline, WhileLoopPipeline};
use agentmesh::rpc::{to_dist, to_dist_alongside, DistTarget};
use agentmesh::runtime::Runtime;
use agentmesh::services::{
    evaluate_arithmetic, react_run, DiagnosticKind, MockSearchEngine, Toolkit,
};
use agentmesh::workflow::{compile_workflow, load_workflow, run_workflow, IssueKind, Recorder};
use agentmesh::{Error, ErrorKind};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

type Check = Result<String, String>;

trait Ctx<T> {
    fn ctx(self, what: &str) -> Result<T, String>;
}

impl<T, E: Display> Ctx<T> for Result<T, E> {
    fn ctx(self, what: &str) -> Result<T, String> {
        self.map_err(|e| format!("{what}: {e}"))
    }
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

fn main() {
    let checks: [(&str, fn() -> Check); 10] = [
        ("sequential pipeline equals manual fold", c1_sequential),
        ("message hub delivery", c2_msghub),
        ("fault tolerance", c3_fault_tolerance),
        ("ReAct diagnostics", c4_react),
        ("local and distributed transcripts agree", c5_distribution),
        ("parallel fan-out of remote agents", c6_parallelism),
        ("workflow execution equals compiled program", c7_workflow),
        ("knowledge retrieval", c8_knowledge),
        ("monitor usage, budgets and artifacts", c9_monitor),
        ("end-to-end applications", c10_applications),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let why = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {why}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{n:>2}] {name} ({detail}; {secs:.2}s)"),
            Err(why) => {
                failed += 1;
                println!("FAIL [{n:>2}] {name}: {why} ({secs:.2}s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn runtime() -> (Arc<Runtime>, tempfile::TempDir) {
    common::runtime()
}

fn user(text: &str) -> Message {
    Msg::new("user", text).unwrap().into()
}

fn scripted(rt: &Runtime, name: &str, rules: Vec<ScriptedRule>) -> Result<(), String> {
    rt.register_models(vec![ModelConfig::scripted(name, rules)]).map(|_| ()).ctx("register model")
}

fn resolved(m: &Message) -> Result<Msg, String> {
    m.resolve(Duration::from_secs(30)).cloned().ctx("resolve")
}

// ---------------------------------------------------------------------------
// 1. sequential(list, x) against the hand-written fold

fn c1_sequential() -> Check {
    let started = Instant::now();
    let (rt, _dir) = runtime();
    scripted(&rt, "chain", vec![ScriptedRule::respond("model says: {last}")])?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut lengths = 0;
    for case in 0..200u64 {
        let len = rng.random_range(0..=8);
        let kinds: Vec<u8> = (0..len).map(|_| rng.random_range(0..3)).collect();
        let input = rng.random_bool(0.8).then(|| format!("task {case}"));
        let piped = run_chain(&rt, &kinds, input.as_deref(), case, true)?;
        let folded = run_chain(&rt, &kinds, input.as_deref(), case, false)?;
        ensure!(piped == folded, "case {case} ({kinds:?}): transcripts differ\n{piped}\n---\n{folded}");
        lengths += len;
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("200 sequences, {lengths} agent turns, {:.0}ms", elapsed.as_secs_f64() * 1e3))
}

/// Runs fresh agents of `kinds` either through `sequential` or a manual
/// fold, returning the byte-level chat log plus the final output.
fn run_chain(rt: &Runtime, kinds: &[u8], input: Option<&str>, case: u64, pipeline: bool) -> Result<String, String> {
    seed_ids(case + 1);
    let logger = Arc::new(ChatLogger::new(LogLevel::Chat));
    let sink = Arc::new(MemorySink::new());
    logger.add_sink(sink.clone());
    let model = rt.model("chain").ctx("model")?;
    let agents: Vec<Arc<dyn Agent>> = kinds
        .iter()
        .enumerate()
        .map(|(i, k)| -> Arc<dyn Agent> {
            let name = format!("agent{i}");
            let log = Some(logger.clone());
            match k {
                0 => Arc::new(EchoAgent::new(name).unwrap().with_logger(log)),
                1 => Arc::new(
                    FnAgent::new(name.clone(), move |x: Option<&Msg>, mem: &[Msg]| {
                        Ok(format!(
                            "{name} saw {} message(s), last: {}",
                            mem.len(),
                            x.map(|m| m.content()).unwrap_or("nothing")
                        ))
                    })
                    .unwrap()
                    .with_logger(log),
                ),
                _ => Arc::new(
                    DialogAgent::new(name.clone(), format!("You are {name}."), model.clone())
                        .unwrap()
                        .with_logger(log),
                ),
            }
        })
        .collect();
    let x = input.map(user);
    let out = if pipeline {
        sequential(&agent_ops(&agents), x).ctx("sequential")?
    } else {
        let mut x = x;
        for a in &agents {
            x = Some(a.reply(x.as_ref()).ctx("reply")?);
        }
        x
    };
    let mut text: Vec<String> = sink.records().iter().map(|r| r.to_json_line()).collect();
    text.push(match out {
        Some(m) => m.to_msg().ctx("output")?.to_json(),
        None => "null".into(),
    });
    Ok(text.join("\n"))
}

// ---------------------------------------------------------------------------
// 2. MsgHub

fn speaker(name: &str) -> Arc<dyn Agent> {
    let who = name.to_string();
    Arc::new(
        FnAgent::new(name, move |_x: Option<&Msg>, mem: &[Msg]| Ok(format!("{who} reply {}", mem.len()))).unwrap(),
    )
}

fn contents(a: &Arc<dyn Agent>) -> Vec<(String, String)> {
    a.memory()
        .unwrap()
        .iter()
        .map(|m| (m.name().to_string(), m.content().to_string()))
        .collect()
}

fn ids(a: &Arc<dyn Agent>) -> Vec<String> {
    a.memory().unwrap().iter().map(|m| m.id().to_string()).collect()
}

fn c2_msghub() -> Check {
    // Fixed scenario: speak, delete, add, broadcast.
    let [a1, a2, a3, a4] = ["agent1", "agent2", "agent3", "agent4"].map(speaker);
    let hub = MsgHub::enter(vec![a1.clone(), a2.clone(), a3.clone()], &[]).ctx("enter")?;
    let m1 = resolved(&hub.speak("agent1", None).ctx("speak")?)?;
    let id1 = m1.id().to_string();
    ensure!(ids(&a1) == [id1.clone()], "a1 should hold its own reply once: {:?}", contents(&a1));
    ensure!(ids(&a2) == [id1.clone()], "a2 did not receive a1's reply");
    ensure!(ids(&a3) == [id1.clone()], "a3 did not receive a1's reply");
    hub.delete("agent2").ctx("delete")?;
    let m2 = resolved(&hub.speak("agent1", None).ctx("speak")?)?;
    let id2 = m2.id().to_string();
    ensure!(ids(&a2) == [id1.clone()], "a2 changed after leaving the hub");
    ensure!(ids(&a3) == [id1.clone(), id2.clone()], "a3 missed the second reply");
    ensure!(ids(&a1) == [id1.clone(), id2.clone()], "a1 memory wrong after second turn");
    hub.add(a4.clone()).ctx("add")?;
    let welcome: Message = Msg::builder("host", "Welcome agent4 to join the hub!")
        .role(Role::System)
        .build()
        .ctx("msg")?
        .into();
    hub.broadcast(&welcome).ctx("broadcast")?;
    let wid = resolved(&welcome)?.id().to_string();
    ensure!(ids(&a4) == [wid.clone()], "a4 should hold exactly the welcome: {:?}", contents(&a4));
    ensure!(ids(&a3) == [id1.clone(), id2.clone(), wid.clone()], "a3 missed the broadcast");
    ensure!(ids(&a2) == [id1], "a2 received the broadcast after leaving");

    // Random operation sequences against a reference simulator.
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let names: Vec<String> = (0..6).map(|i| format!("p{i}")).collect();
    let mut total_ops = 0;
    for case in 0..200 {
        let agents: Vec<Arc<dyn Agent>> = names.iter().map(|n| speaker(n)).collect();
        let mut sim = HubSim::new(names.len());
        let initial: Vec<usize> = (0..names.len()).filter(|_| rng.random_bool(0.5)).collect();
        let announce: Vec<Message> = if rng.random_bool(0.5) {
            vec![Msg::new("host", format!("announcement {case}")).unwrap().into()]
        } else {
            Vec::new()
        };
        let hub = MsgHub::enter(initial.iter().map(|&i| agents[i].clone()).collect(), &announce).ctx("enter")?;
        sim.participants = initial.clone();
        for a in &announce {
            sim.broadcast(("host".into(), a.content().unwrap().to_string()));
        }
        let n_ops = rng.random_range(0..=20);
        total_ops += n_ops;
        for op in 0..n_ops {
            let who = rng.random_range(0..names.len());
            let inside = sim.participants.contains(&who);
            match rng.random_range(0..4) {
                0 if !inside => {
                    hub.add(agents[who].clone()).ctx("add")?;
                    sim.participants.push(who);
                }
                1 if inside => {
                    hub.delete(&names[who]).ctx("delete")?;
                    sim.participants.retain(|p| *p != who);
                }
                2 => {
                    let text = format!("note {case}.{op}");
                    hub.broadcast(&Msg::new("host", text.clone()).unwrap().into()).ctx("broadcast")?;
                    sim.broadcast(("host".into(), text));
                }
                _ if inside => {
                    let input = rng.random_bool(0.5).then(|| format!("input {case}.{op}"));
                    let x = input.as_deref().map(user);
                    let got = resolved(&hub.speak(&names[who], x.as_ref()).ctx("speak")?)?;
                    let want = sim.speak(who, &names[who], input);
                    ensure!(got.content() == want, "case {case} op {op}: reply '{}' != '{want}'", got.content());
                }
                _ => {
                    let err = hub.speak(&names[who], None);
                    ensure!(
                        inside || err.as_ref().is_err_and(|e| e.kind() == ErrorKind::Validation),
                        "non-participant could speak"
                    );
                }
            }
            ensure!(
                hub.participants() == sim.participants.iter().map(|&i| names[i].clone()).collect::<Vec<_>>(),
                "case {case} op {op}: participant list differs"
            );
        }
        for (i, a) in agents.iter().enumerate() {
            ensure!(contents(a) == sim.memory[i], "case {case}: memory of {} differs from the simulator", names[i]);
        }
    }
    Ok(format!("fixed scenario + 200 random sequences, {total_ops} ops"))
}

struct HubSim {
    participants: Vec<usize>,
    memory: Vec<Vec<(String, String)>>,
}

impl HubSim {
    fn new(n: usize) -> Self {
        Self {
            participants: Vec::new(),
            memory: vec![Vec::new(); n],
        }
    }

    fn broadcast(&mut self, m: (String, String)) {
        for &p in &self.participants {
            self.memory[p].push(m.clone());
        }
    }

    fn speak(&mut self, who: usize, name: &str, input: Option<String>) -> String {
        if let Some(text) = input {
            self.memory[who].push(("user".into(), text));
        }
        let reply = format!("{name} reply {}", self.memory[who].len());
        self.memory[who].push((name.to_string(), reply.clone()));
        for &p in self.participants.iter().filter(|&&p| p != who) {
            self.memory[p].push((name.to_string(), reply.clone()));
        }
        reply
    }
}

// ---------------------------------------------------------------------------
// 3. Retries, JSON repair, parse retries

fn c3_fault_tolerance() -> Check {
    let (rt, _dir) = runtime();
    let prompt = [PromptMessage::new(Role::User, "user", "hello")];
    for fail in 0..=5u32 {
        for retries in 0..=3u32 {
            let name = format!("flaky-{fail}-{retries}");
            scripted(&rt, &name, vec![ScriptedRule::respond("ok").failing(fail)])?;
            let model = rt
                .model(&name)
                .ctx("model")?
                .with_retry(RetryPolicy::default().with_max_retries(retries));
            let result = model.invoke(&prompt);
            let attempts = model.scripted().unwrap().attempts();
            let want = 1 + fail.min(retries) as u64;
            ensure!(attempts == want, "fail={fail} retries={retries}: {attempts} attempts, want {want}");
            if fail <= retries {
                ensure!(result.is_ok(), "fail={fail} retries={retries}: expected success");
            } else {
                ensure!(
                    result.as_ref().is_err_and(|e| e.kind() == ErrorKind::Accessibility),
                    "fail={fail} retries={retries}: expected an accessibility error"
                );
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut repaired = 0;
    for i in 0..30 {
        let v = random_object(&mut rng, 3);
        let strict = v.to_string();
        let broken = match i / 10 {
            0 => unclose(&strict, &mut rng),
            1 => format!("Here is the result:\n```json\n{}\n```\nLet me know if you need more.", pretty(&v)),
            _ => add_trailing_commas(&strict),
        };
        ensure!(serde_json::from_str::<Value>(&broken).is_err(), "fixture {i} is not broken: {broken}");
        let got = repair_json(&broken).ctx(&format!("repair fixture {i} ({broken})"))?;
        let want: Value = serde_json::from_str(&strict).unwrap();
        ensure!(got == want, "fixture {i}: repaired to {got}, want {want}");
        repaired += 1;
    }
    for i in 0..100 {
        let v = if i % 4 == 0 {
            Value::Array((0..rng.random_range(0..4)).map(|_| random_value(&mut rng, 2)).collect())
        } else {
            random_object(&mut rng, 3)
        };
        let text = if i % 2 == 0 { v.to_string() } else { pretty(&v) };
        let want: Value = serde_json::from_str(&text).unwrap();
        let got = repair_json(&text).ctx("valid fixture")?;
        ensure!(got == want, "valid fixture {i} changed: {text}");
    }

    // invoke_with_parsing
    let parse = |r: &ModelResponse| -> agentmesh::Result<Value> {
        serde_json::from_str(&r.text).map_err(|e| Error::validation(format!("not JSON ({e}): {}", r.text)))
    };
    for (retries, want_calls, ok) in [(0u32, 1u64, false), (1, 2, false), (2, 3, true), (5, 3, true)] {
        let name = format!("parse-{retries}");
        scripted(&rt, &name, ScriptedRule::sequence(["nope", "still nope", r#"{"a": 1}"#]))?;
        let model = rt.model(&name).ctx("model")?;
        let got = model.invoke_with_parsing(&prompt, parse, None, retries);
        let calls = model.scripted().unwrap().attempts();
        ensure!(calls == want_calls, "max_retries={retries}: {calls} invocations, want {want_calls}");
        match (ok, got) {
            (true, Ok(v)) => ensure!(v == json!({"a": 1}), "wrong parse result {v}"),
            (false, Err(e)) => {
                let last = if retries == 0 { "nope" } else { "still nope" };
                ensure!(e.to_string().ends_with(&format!(": {last}")), "not the last parse error: {e}");
            }
            (_, other) => return Err(format!("max_retries={retries}: unexpected {other:?}")),
        }
    }
    scripted(&rt, "parse-handler", ScriptedRule::sequence(["first", "second", "third"]))?;
    let model = rt.model("parse-handler").ctx("model")?;
    let seen = Mutex::new(Vec::new());
    let handler = |r: &ModelResponse| -> agentmesh::Result<Value> {
        seen.lock().unwrap().push(r.text.clone());
        Ok(json!({"fallback": r.text}))
    };
    let got = model.invoke_with_parsing(&prompt, parse, Some(&handler), 1).ctx("with handler")?;
    ensure!(got == json!({"fallback": "second"}), "handler result {got}");
    ensure!(*seen.lock().unwrap() == ["second"], "handler saw {:?}", seen.lock().unwrap());
    ensure!(model.scripted().unwrap().attempts() == 2, "handler case made the wrong number of calls");
    Ok(format!("24 retry cells, {repaired} repaired + 100 untouched fixtures, 5 parse-retry cases"))
}

const WORDS: [&str; 12] = [
    "alpha", "beta", "gamma", "delta", "agent", "message", "hub", "model", "tool", "value", "x y", "quote\"d",
];

fn random_value(rng: &mut ChaCha8Rng, depth: u32) -> Value {
    let pick = if depth == 0 { rng.random_range(0..4) } else { rng.random_range(0..6) };
    match pick {
        0 => Value::from(rng.random_range(-1000i64..1000)),
        1 => Value::String(WORDS.choose(rng).unwrap().to_string()),
        2 => Value::Bool(rng.random_bool(0.5)),
        3 => {
            if rng.random_bool(0.5) {
                Value::Null
            } else {
                Value::from(rng.random_range(0..100) as f64 / 4.0)
            }
        }
        4 => Value::Array((0..rng.random_range(1..4)).map(|_| random_value(rng, depth - 1)).collect()),
        _ => random_object(rng, depth - 1),
    }
}

fn random_object(rng: &mut ChaCha8Rng, depth: u32) -> Value {
    let mut m = Map::new();
    for i in 0..rng.random_range(1..5) {
        m.insert(format!("k{i}_{}", WORDS[rng.random_range(0..10)]), random_value(rng, depth));
    }
    Value::Object(m)
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).unwrap()
}

/// Drops 1..=n trailing closers.
fn unclose(strict: &str, rng: &mut ChaCha8Rng) -> String {
    let closers = strict.chars().rev().take_while(|c| *c == '}' || *c == ']').count();
    let drop = rng.random_range(1..=closers);
    strict[..strict.len() - drop].to_string()
}

/// Inserts a comma before every closer that follows a value.
fn add_trailing_commas(strict: &str) -> String {
    let mut out = String::new();
    let mut in_string = false;
    let mut escaped = false;
    let mut prev = ' ';
    for c in strict.chars() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
        } else if c == '"' {
            in_string = true;
        } else if (c == '}' || c == ']') && prev != '{' && prev != '[' {
            out.push(',');
        }
        out.push(c);
        prev = c;
    }
    out
}

// ---------------------------------------------------------------------------
// 4. ReAct

fn calc_toolkit() -> Toolkit {
    let mut tk = Toolkit::new();
    tk.add(evaluate_arithmetic(), Map::new()).unwrap();
    tk
}

fn call_json(name: &str, args: Value) -> String {
    format!(
        "```json\n{}\n```",
        json!({"thought": format!("call {name}"), "speak": "Working on it.", "function": [{"name": name, "arguments": args}]})
    )
}

fn start_history(question: &str) -> Vec<PromptMessage> {
    vec![
        PromptMessage::system("You are a careful calculator."),
        PromptMessage::new(Role::User, "user", question),
    ]
}

fn c4_react() -> Check {
    let (rt, _dir) = runtime();
    let tk = calc_toolkit();
    let malformed = r#"Sure, let me compute that: {"thought": "I should add first", "speak": "Computing""#;
    let diag = tk.parse_tool_call(malformed).err().ok_or("malformed call parsed")?;
    ensure!(diag.kind == DiagnosticKind::ResponseParsing, "wrong diagnostic kind {:?}", diag.kind);
    ensure!(diag.message.starts_with("response parsing error: "), "diagnostic '{}'", diag.message);
    scripted(
        &rt,
        "react",
        ScriptedRule::sequence([
            malformed.to_string(),
            call_json("evaluate_arithmetic", json!({"expression": "(17+3)*2"})),
            call_json("finish", json!({"response": "The answer is 40."})),
        ]),
    )?;
    let model = rt.model("react").ctx("model")?;
    let out = react_run(&model, &tk, "assistant", start_history("What is (17+3)*2?"), 5).ctx("react")?;
    let backend = model.scripted().unwrap();
    ensure!(backend.attempts() == 3, "{} model calls, want 3", backend.attempts());
    ensure!(out.iterations == 3, "{} iterations", out.iterations);
    ensure!(out.answer == "The answer is 40.", "answer '{}'", out.answer);
    let second = &backend.requests()[1];
    let last = second.last().ok_or("empty request")?;
    ensure!(last.content == diag.message, "diagnostic not verbatim in the next prompt: '{}'", last.content);
    ensure!(last.role == Role::System, "diagnostic role {:?}", last.role);
    ensure!(second[second.len() - 2].content == malformed, "malformed output missing from history");
    let third = backend.requests()[2].last().cloned().ok_or("empty request")?;
    ensure!(
        third.content == "Execution results:\n1. evaluate_arithmetic [SUCCESS]: 40",
        "results '{}'",
        third.content
    );
    ensure!(out.history.len() == 2 + 2 * 3, "history has {} entries", out.history.len());

    // Invalid call: unknown tool.
    let bad = call_json("calculator", json!({"expression": "1+1"}));
    scripted(
        &rt,
        "react-invalid",
        ScriptedRule::sequence([bad.clone(), call_json("finish", json!({"response": "2"}))]),
    )?;
    let model = rt.model("react-invalid").ctx("model")?;
    let out = react_run(&model, &tk, "assistant", start_history("1+1?"), 5).ctx("react invalid")?;
    let d = tk.parse_tool_call(&bad).err().ok_or("unknown tool accepted")?;
    ensure!(d.kind == DiagnosticKind::InvalidCall, "unknown tool kind {:?}", d.kind);
    ensure!(d.message.starts_with("invalid function call: "), "'{}'", d.message);
    let req = model.scripted().unwrap().requests();
    ensure!(req[1].last().unwrap().content == d.message, "invalid-call diagnostic not fed back");
    ensure!(out.iterations == 2 && out.answer == "2", "invalid-call run ended wrong");

    // Execution error: the tool fails, the loop continues.
    scripted(
        &rt,
        "react-exec",
        ScriptedRule::sequence([
            call_json("evaluate_arithmetic", json!({"expression": "1/0"})),
            call_json("finish", json!({"response": "undefined"})),
        ]),
    )?;
    let model = rt.model("react-exec").ctx("model")?;
    let out = react_run(&model, &tk, "assistant", start_history("1/0?"), 5).ctx("react exec")?;
    let requests = model.scripted().unwrap().requests();
    let shown = &requests[1].last().unwrap().content;
    ensure!(
        shown.starts_with("Execution results:\n1. evaluate_arithmetic [ERROR]: "),
        "execution error not shown: '{shown}'"
    );
    ensure!(out.answer == "undefined", "execution-error run ended wrong");

    // Runtime error: the model itself is unreachable.
    scripted(&rt, "react-down", vec![ScriptedRule::respond("never").failing(100)])?;
    let model = rt.model("react-down").ctx("model")?;
    let err = react_run(&model, &tk, "assistant", start_history("2+2?"), 5).err().ok_or("unreachable model succeeded")?;
    ensure!(err.kind() == ErrorKind::Accessibility, "runtime error kind {:?}", err.kind());

    // Iteration cap.
    scripted(&rt, "react-loop", vec![ScriptedRule::respond("no idea")])?;
    let model = rt.model("react-loop").ctx("model")?;
    let err = react_run(&model, &tk, "assistant", start_history("?"), 2).err().ok_or("loop did not stop")?;
    ensure!(err.kind() == ErrorKind::ReactIncomplete, "cap error kind {:?}", err.kind());
    Ok("3 model calls, diagnostic verbatim; invalid-call, execution and runtime errors classified".into())
}

// ---------------------------------------------------------------------------
// 5. Local vs distributed transcripts

fn c5_distribution() -> Check {
    let started = Instant::now();
    let chain = |dist: bool| -> Result<Vec<(String, String)>, String> {
        let (rt, _dir) = runtime();
        let names = ["planner", "writer", "reviewer"];
        for n in names {
            scripted(&rt, n, vec![ScriptedRule::respond(format!("{n} handled: {{last}}"))])?;
        }
        let local: Vec<Arc<dyn Agent>> = names.iter().map(|n| common::dialog(&rt, n, n)).collect();
        let agents: Vec<Arc<dyn Agent>> = if dist {
            local
                .iter()
                .map(|a| to_dist(a.as_ref(), DistTarget::InProcess, &rt).map(|r| Arc::new(r) as Arc<dyn Agent>))
                .collect::<agentmesh::Result<_>>()
                .ctx("to_dist")?
        } else {
            local
        };
        let rec = Recorder::new();
        let ops: Vec<Op> = agents.iter().map(|a| rec.op(a.clone())).collect();
        sequential(&ops, Some(user("Write a haiku about actors."))).ctx("sequential")?;
        Ok(rec.transcript().ctx("transcript")?.iter().map(|m| (m.name().into(), m.content().into())).collect())
    };
    let local = chain(false)?;
    let remote = chain(true)?;
    ensure!(local.len() == 3, "chain transcript has {} messages", local.len());
    ensure!(local == remote, "sequential app differs:\n{local:?}\n{remote:?}");

    let local = werewolf(false)?;
    let remote = werewolf(true)?;
    ensure!(local == remote, "werewolf transcripts differ");
    for line in [
        "The player with the most votes is Player3.",
        "Okay, the role of Player1 is werewolf.",
        "Player1 has been voted out.",
        "The player with the most votes is Player4.",
        "Player2 has been voted out.",
        "The game is over. The werewolves have been defeated, and the village is safe once again!",
    ] {
        ensure!(
            local.iter().any(|(n, c)| n == "Moderator" && c == line),
            "moderator never said '{line}'"
        );
    }
    ensure!(local.last().unwrap().1.starts_with("The game is over."), "game did not end");
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("3-agent chain and {}-message werewolf game identical", local.len()))
}

const WOLF: &str = "werewolf";
const ROLES: [&str; 6] = [WOLF, WOLF, "villager", "villager", "seer", "witch"];

fn says(speak: &str) -> String {
    json!({"thought": "Let me think about the game.", "speak": speak}).to_string()
}

fn says_with(speak: &str, key: &str, v: Value) -> String {
    json!({"thought": "Let me think about the game.", "speak": speak, key: v}).to_string()
}

/// Each player's replies, in the order the game asks for them.
fn player_scripts() -> [Vec<String>; 6] {
    [
        vec![
            says_with("I think we should consider Player3. They have a knack for figuring things out.", "agreement", json!(false)),
            says_with("I see your point about Player4. They could be a threat if they are the seer or witch. But I still think Player3 is a strong player and could figure us out.", "agreement", json!(false)),
            says("Player3"),
            says("I'm glad that we all made it through the night. I think we should keep an eye on Player4. They've been pretty quiet, which could mean they're trying to avoid suspicion."),
            says("Player4"),
        ],
        vec![
            says_with("I agree with your point about Player3, they are indeed a strong player. But we should also consider Player4, who is also a strong player and could be the seer or witch.", "agreement", json!(false)),
            says_with("Alright, let's go with Player3. We can consider Player4 next time.", "agreement", json!(true)),
            says("Player3"),
            says("I agree with Player1. Player4 has been unusually quiet. Maybe they're trying to avoid drawing attention to themselves."),
            says("Player4"),
            says_with("I think we should consider Player4. They are a strong player and could be a threat.", "agreement", json!(true)),
            says("Player4"),
            says("I think we should keep an eye on Player5. They've been pretty quiet, which could mean they're trying to avoid suspicion."),
            says("Player5"),
        ],
        vec![
            says("I see your point about Player4, but it's still early in the game. We should be careful not to jump to conclusions without more evidence."),
            says("Player1"),
            says("I think Player2 might be a werewolf. They were quick to suspect Player4, who was eliminated last night."),
            says("Player2"),
        ],
        vec![
            says("I understand your concerns, but I assure you, I'm just a villager. I think we should focus on gathering more information before we start pointing fingers."),
            says("Player1"),
        ],
        vec![
            says("Player1"),
            says("I understand everyone's concerns about Player4, but I think we should also keep an eye on Player1. They were quick to cast suspicion on others."),
            says("Player1"),
            says("Player2"),
            says("I agree with Player3. Player2 was quick to cast suspicion on Player4, who turned out to be innocent. I think we should vote out Player2."),
            says("Player2"),
        ],
        vec![
            says_with("I'm deeply saddened by the loss of Player3. It's a tough decision to make.", "resurrect", json!(true)),
            says("I understand the concerns about Player4, but I also think we should be cautious about Player1 and Player2. They were quick to agree with each other."),
            says("Player1"),
            says_with("False", "eliminate", json!(false)),
            says("I agree with Player3 and Player5. Player2 and Player1 were often in agreement. I think we should vote out Player2."),
            says("Player2"),
        ],
    ]
}

fn join_and(names: &[String]) -> String {
    match names {
        [] => String::new(),
        [one] => one.clone(),
        [rest @ .., last] => format!("{} and {last}", rest.join(", ")),
    }
}

struct Game {
    log: Vec<(String, String)>,
}

impl Game {
    fn moderator(&mut self, text: String) -> Message {
        self.log.push(("Moderator".into(), text.clone()));
        Msg::builder("Moderator", text).role(Role::System).build().unwrap().into()
    }

    fn heard(&mut self, m: agentmesh::Result<Message>) -> Result<Msg, String> {
        let m = resolved(&m.ctx("player reply")?)?;
        self.log.push((m.name().into(), m.content().into()));
        Ok(m)
    }
}

/// Plurality vote; ties go to the candidate named first.
fn majority(votes: &[String]) -> String {
    let mut counts: Vec<(String, usize)> = Vec::new();
    for v in votes {
        match counts.iter_mut().find(|(c, _)| c == v) {
            Some((_, n)) => *n += 1,
            None => counts.push((v.clone(), 1)),
        }
    }
    let best = counts.iter().map(|(_, n)| *n).max().unwrap_or(0);
    counts.into_iter().find(|(_, n)| *n == best).map(|(c, _)| c).unwrap_or_default()
}

fn werewolf(dist: bool) -> Result<Vec<(String, String)>, String> {
    let (rt, _dir) = runtime();
    let scripts = player_scripts();
    let mut players: Vec<Arc<dyn Agent>> = Vec::new();
    let mut first_remote: Option<Arc<agentmesh::rpc::RemoteAgent>> = None;
    for (i, script) in scripts.into_iter().enumerate() {
        let name = format!("Player{}", i + 1);
        let model = format!("model-{name}");
        scripted(&rt, &model, ScriptedRule::sequence(script))?;
        let local = DictDialogAgent::new(
            name.clone(),
            format!("You are {name}, a {} in a game of werewolf.", ROLES[i]),
            rt.model(&model).ctx("model")?,
        )
        .ctx("agent")?
        .with_required_keys(["speak"]);
        let agent: Arc<dyn Agent> = if !dist {
            Arc::new(local)
        } else {
            let remote = Arc::new(
                match &first_remote {
                    None => to_dist(&local, DistTarget::InProcess, &rt),
                    Some(peer) => to_dist_alongside(&local, peer, &rt),
                }
                .ctx("to_dist")?,
            );
            if first_remote.is_none() {
                first_remote = Some(remote.clone());
            }
            remote
        };
        players.push(agent);
    }
    let name = |i: usize| format!("Player{}", i + 1);
    let mut game = Game { log: Vec::new() };
    let mut alive: Vec<usize> = (0..6).collect();
    let (mut healing, mut poison) = (true, true);
    let format_hint = "Respond in JSON with the keys \"thought\" and \"speak\".";
    for _round in 0..3 {
        // Night: the werewolves discuss until they agree, then vote.
        let wolves: Vec<usize> = alive.iter().copied().filter(|&i| ROLES[i] == WOLF).collect();
        let wolf_names: Vec<String> = wolves.iter().map(|&i| name(i)).collect();
        let hint = game.moderator(format!(
            "{}, you are werewolves. If you are alone, eliminate a player, else discuss with your teammates and reach an agreement. Respond in JSON with the keys \"thought\", \"speak\" and \"agreement\".",
            join_and(&wolf_names)
        ));
        let hub = MsgHub::enter(wolves.iter().map(|&i| players[i].clone()).collect(), &[hint]).ctx("enter")?;
        'discussion: for _ in 0..3 {
            for &w in &wolves {
                let m = game.heard(hub.speak(&name(w), None))?;
                if m.get_meta("agreement") == Some(&Value::Bool(true)) {
                    break 'discussion;
                }
            }
        }
        drop(hub);
        let vote = game.moderator(format!("Which player do you vote to kill? {format_hint}"));
        let mut votes = Vec::new();
        for &w in &wolves {
            votes.push(game.heard(players[w].reply(Some(&vote)))?.content().to_string());
        }
        let victim = majority(&votes);
        game.moderator(format!("The player with the most votes is {victim}."));
        let mut dead: Vec<String> = vec![victim.clone()];
        if alive.contains(&5) {
            if healing {
                let ask = game.moderator(format!(
                    "Player6, you're witch. Tonight {victim} is eliminated. Would you like to resurrect {victim}? Respond in JSON with the keys \"thought\", \"speak\" and \"resurrect\"."
                ));
                let m = game.heard(players[5].reply(Some(&ask)))?;
                if m.get_meta("resurrect") == Some(&Value::Bool(true)) {
                    healing = false;
                    dead.clear();
                }
            } else if poison {
                let ask = game.moderator(
                    "Would you like to eliminate one player? Respond in JSON with the keys \"thought\", \"speak\" and \"eliminate\".".into(),
                );
                let m = game.heard(players[5].reply(Some(&ask)))?;
                if m.get_meta("eliminate") == Some(&Value::Bool(true)) {
                    poison = false;
                    if let Some(Value::String(t)) = m.get_meta("target") {
                        dead.push(t.clone());
                    }
                }
            }
        }
        if alive.contains(&4) {
            let candidates: Vec<String> = alive.iter().map(|&i| name(i)).collect();
            let ask = game.moderator(format!(
                "Player5, you're seer. Which player in {} would you like to check tonight? {format_hint}",
                join_and(&candidates)
            ));
            let target = game.heard(players[4].reply(Some(&ask)))?.content().to_string();
            let role = (0..6).find(|&i| name(i) == target).map(|i| ROLES[i]).unwrap_or("unknown");
            game.moderator(format!("Okay, the role of {target} is {role}."));
        }
        alive.retain(|&i| !dead.contains(&name(i)));
        let day = if dead.is_empty() {
            "The day is coming, all the players open your eyes. Last night is peaceful, no player is eliminated.".to_string()
        } else {
            format!(
                "The day is coming, all the players open your eyes. Last night, the following player(s) has been eliminated: {}.",
                dead.join(", ")
            )
        };
        let day = game.moderator(day);
        if game_over(&mut game, &alive) {
            break;
        }

        // Day: everyone alive discusses, then votes.
        let names: Vec<String> = alive.iter().map(|&i| name(i)).collect();
        let discuss = game.moderator(format!(
            "Now the alive players are {}. Given the game rules and your role, based on the situation and the information you gain, to vote a player eliminated among alive players and to win the game, what do you want to say to others? You can decide whether to reveal your role. {format_hint}",
            join_and(&names)
        ));
        let hub = MsgHub::enter(alive.iter().map(|&i| players[i].clone()).collect(), &[day, discuss]).ctx("enter")?;
        for &p in &alive {
            game.heard(hub.speak(&name(p), None))?;
        }
        drop(hub);
        let vote = game.moderator(format!(
            "Now the alive players are {}. Given the game rules and your role, based on the situation and the information you gain, to vote a player among alive players and to win the game, it's time to vote one player among the alive players, please cast your vote on who you believe is a werewolf. {format_hint}",
            join_and(&names)
        ));
        let mut votes = Vec::new();
        for &p in &alive {
            votes.push(game.heard(players[p].reply(Some(&vote)))?.content().to_string());
        }
        let out = majority(&votes);
        game.moderator(format!("{out} has been voted out."));
        alive.retain(|&i| name(i) != out);
        if game_over(&mut game, &alive) {
            break;
        }
        game.moderator("The game goes on.".into());
    }
    Ok(game.log)
}

fn game_over(game: &mut Game, alive: &[usize]) -> bool {
    let wolves = alive.iter().filter(|&&i| ROLES[i] == WOLF).count();
    if wolves == 0 {
        game.moderator("The game is over. The werewolves have been defeated, and the village is safe once again!".into());
        true
    } else if wolves >= alive.len() - wolves {
        game.moderator("The game is over. The werewolves have won.".into());
        true
    } else {
        false
    }
}

// ---------------------------------------------------------------------------
// 6. Parallel fan-out

fn c6_parallelism() -> Check {
    let (rt, _dir) = runtime();
    let mut remotes: Vec<Arc<dyn Agent>> = Vec::new();
    for i in 0..4 {
        let model = format!("slow-{i}");
        rt.register_models(vec![
            ModelConfig::scripted(&model, vec![ScriptedRule::respond(format!("worker{i} done: {{last}}"))]).with_latency_ms(200),
        ])
        .ctx("register")?;
        let local = common::dialog(&rt, &format!("worker{i}"), &model);
        remotes.push(Arc::new(to_dist(local.as_ref(), DistTarget::InProcess, &rt).ctx("to_dist")?));
    }
    let x = user("Summarize your shard.");
    // Warm up connections.
    for r in &remotes {
        resolved(&r.reply(Some(&x)).ctx("reply")?)?;
    }
    let mut parallel = Vec::new();
    let mut serial = Vec::new();
    for rep in 0..10 {
        let t = Instant::now();
        let pending: Vec<Message> = remotes.iter().map(|r| r.reply(Some(&x))).collect::<agentmesh::Result<_>>().ctx("fan-out")?;
        for p in &pending {
            resolved(p)?;
        }
        let par = t.elapsed();
        let t = Instant::now();
        for r in &remotes {
            resolved(&r.reply(Some(&x)).ctx("reply")?)?;
        }
        let seq = t.elapsed();
        ensure!(par < Duration::from_millis(450), "rep {rep}: fan-out took {par:?}");
        ensure!(seq >= Duration::from_millis(800), "rep {rep}: sequential baseline took only {seq:?}");
        parallel.push(par.as_secs_f64() * 1e3);
        serial.push(seq.as_secs_f64() * 1e3);
    }
    let max_par = parallel.iter().cloned().fold(0.0, f64::max);
    let mean_seq = serial.iter().sum::<f64>() / serial.len() as f64;
    let eps = (mean_seq - 800.0) / 4.0;
    Ok(format!("fan-out max {max_par:.0}ms, sequential mean {mean_seq:.0}ms, per-call overhead ε ≈ {eps:.1}ms"))
}

// ---------------------------------------------------------------------------
// 7. Workflow graphs

const BODY_NAMES: [&str; 2] = ["EchoAgent", "DialogAgent"];

fn agent_cfg(rng: &mut ChaCha8Rng, name: String, model: &str) -> Value {
    let class = *BODY_NAMES.choose(rng).unwrap();
    if class == "DialogAgent" {
        json!({"agent_class": class, "args": {"name": name, "sys_prompt": "Answer briefly.", "model_config_name": model}})
    } else {
        json!({"agent_class": class, "args": {"name": name}})
    }
}

fn body(rng: &mut ChaCha8Rng, prefix: &str, model: &str) -> Vec<Value> {
    (0..rng.random_range(1..=2)).map(|j| agent_cfg(rng, format!("{prefix}_{j}"), model)).collect()
}

fn random_pipeline(rng: &mut ChaCha8Rng, id: &str, model: &str) -> Value {
    let conditions = [json!({"contains": "42"}), json!({"not_contains": "exit"}), json!({"always": true}), json!({"iter_lt": 1})];
    match rng.random_range(0..5) {
        0 => json!({"type": "sequential", "body": body(rng, &format!("{id}s"), model)}),
        1 => json!({
            "type": "ifelse",
            "condition": conditions.choose(rng).unwrap(),
            "then": body(rng, &format!("{id}t"), model),
            "else": body(rng, &format!("{id}e"), model),
        }),
        2 => json!({
            "type": "switch",
            "cases": [
                {"key": "hello", "body": body(rng, &format!("{id}h"), model)},
                {"key": "exit", "body": body(rng, &format!("{id}x"), model)},
            ],
            "default": body(rng, &format!("{id}d"), model),
        }),
        3 => {
            let n = rng.random_range(1..=3);
            json!({
                "type": "while",
                "condition": {"all": [{"not_contains": "zzz"}, {"iter_lt": n}]},
                "body": body(rng, &format!("{id}w"), model),
                "max_iterations": 3,
            })
        }
        _ => json!({"type": "for", "n": rng.random_range(1..=3), "body": body(rng, &format!("{id}f"), model)}),
    }
}

fn random_graph(rng: &mut ChaCha8Rng, g: usize) -> Value {
    let n = rng.random_range(6..=10);
    let mut rest = vec!["agent", "pipeline", "service", "copy"];
    for _ in 6..n {
        rest.push(*["agent", "pipeline", "service", "copy", "message"].choose(rng).unwrap());
    }
    rest.shuffle(rng);
    let mut kinds = vec!["model", "message"];
    kinds.extend(rest);
    let mut labels: Vec<u32> = rand::seq::index::sample(rng, 100, n).into_iter().map(|x| x as u32).collect();
    labels.shuffle(rng);
    let ids: Vec<String> = labels.iter().map(|l| format!("n{l:02}")).collect();
    let model = format!("m{g}");
    let mut nodes = Vec::new();
    for (i, kind) in kinds.iter().enumerate() {
        let id = &ids[i];
        let candidates: Vec<String> = ids.get(1..i).map(<[String]>::to_vec).unwrap_or_default();
        let pick = |rng: &mut ChaCha8Rng, max: usize| -> Vec<String> {
            let k = rng.random_range(0..=max.min(candidates.len()));
            candidates.choose_multiple(rng, k).cloned().collect()
        };
        let (payload, inputs) = match *kind {
            "model" => (
                json!({"config_name": model, "model_type": "scripted", "script": [
                    {"when_contains": "6*7", "respond": "The answer is 42."},
                    {"respond": format!("{model} heard: {{last}}")},
                ]}),
                Vec::new(),
            ),
            "message" => (
                json!({"name": "user", "content": *["What is 6*7?", "hello", "exit", "tell me more"].choose(rng).unwrap()}),
                Vec::new(),
            ),
            "agent" => (agent_cfg(rng, format!("agent_{id}"), &model), pick(rng, 3)),
            "pipeline" => (random_pipeline(rng, id, &model), pick(rng, 1)),
            "service" => (
                json!({"name": "evaluate_arithmetic", "args": {"expression": *["6*7", "(1+2)*3", "10/4"].choose(rng).unwrap()}}),
                pick(rng, 1),
            ),
            _ => (Value::Null, vec![candidates.choose(rng).unwrap().clone()]),
        };
        nodes.push(json!({"id": id, "kind": kind, "payload": payload, "inputs": inputs}));
    }
    nodes.shuffle(rng);
    json!({"nodes": nodes})
}

/// A message minus its id and timestamp.
fn comparable(m: &Msg) -> Value {
    let mut v = m.to_value();
    if let Value::Object(o) = &mut v {
        o.remove("id");
        o.remove("timestamp");
    }
    v
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn write_if_changed(path: &Path, text: &str) -> std::io::Result<()> {
    if std::fs::read_to_string(path).ok().as_deref() != Some(text) {
        std::fs::write(path, text)?;
    }
    Ok(())
}

/// Builds every program as a module of one binary selected by
/// `WORKFLOW_INDEX`, so the library is linked once.
fn build_programs(sources: &[String]) -> Result<PathBuf, String> {
    let root = workspace_root();
    let target = root.join("target/compiled-workflows");
    let proj = target.join("project");
    std::fs::create_dir_all(proj.join("src")).ctx("mkdir")?;
    let manifest = format!(
        "[package]\nname = \"compiled-workflows\"\nversion = \"0.1.0\"\nedition = \"2021\"\n\n[dependencies]\nagentmesh = {{ path = {:?} }}\n\n[workspace]\n",
        root.join("crates/core").display().to_string()
    );
    write_if_changed(&proj.join("Cargo.toml"), &manifest).ctx("manifest")?;
    let lock = std::fs::read_to_string(root.join("Cargo.lock")).ctx("lockfile")?;
    write_if_changed(&proj.join("Cargo.lock"), &lock).ctx("lockfile")?;
    let mut main = String::new();
    for i in 0..sources.len() {
        main.push_str(&format!("#[allow(dead_code)]\n#[path = \"w{i}.rs\"]\nmod w{i};\n"));
    }
    main.push_str("\nfn main() {\n    let index: usize = std::env::var(\"WORKFLOW_INDEX\").expect(\"WORKFLOW_INDEX\").parse().expect(\"index\");\n    let run = match index {\n");
    for i in 0..sources.len() {
        main.push_str(&format!("        {i} => w{i}::run,\n"));
    }
    main.push_str("        _ => panic!(\"no such workflow\"),\n    };\n    std::process::exit(agentmesh::workflow::run_program(run));\n}\n");
    write_if_changed(&proj.join("src/main.rs"), &main).ctx("main.rs")?;
    for (i, src) in sources.iter().enumerate() {
        write_if_changed(&proj.join(format!("src/w{i}.rs")), src).ctx("module")?;
    }
    let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
    let out = Command::new(cargo)
        .args(["build", "--offline", "--quiet"])
        .current_dir(&proj)
        .env("CARGO_TARGET_DIR", &target)
        .output()
        .ctx("cargo build")?;
    ensure!(out.status.success(), "compiled programs failed to build:\n{}", String::from_utf8_lossy(&out.stderr));
    Ok(target.join("debug/compiled-workflows"))
}

fn c7_workflow() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut graphs = Vec::new();
    let mut sources = Vec::new();
    let mut expected = Vec::new();
    let mut messages = 0;
    for g in 0..50 {
        let v = random_graph(&mut rng, g);
        let text = v.to_string();
        let graph = load_workflow(&text).ctx(&format!("graph {g} rejected ({text})"))?;
        let kinds: HashSet<_> = graph.nodes().iter().map(|n| n.kind()).collect();
        ensure!(kinds.len() == 6, "graph {g} lacks a node kind");
        let (rt, _dir) = runtime();
        let transcript = run_workflow(&graph, &rt).ctx(&format!("run graph {g} ({text})"))?;
        messages += transcript.len();
        expected.push(transcript.iter().map(comparable).collect::<Vec<_>>());
        sources.push(compile_workflow(&graph).ctx("compile")?);
        graphs.push(text);
    }
    let bin = build_programs(&sources)?;
    for (g, want) in expected.iter().enumerate() {
        let dir = tempfile::tempdir().ctx("tempdir")?;
        let out = Command::new(&bin)
            .env("WORKFLOW_INDEX", g.to_string())
            .env("AGENTMESH_RUN_DIR", dir.path())
            .output()
            .ctx("run program")?;
        ensure!(out.status.success(), "program {g} failed: {}", String::from_utf8_lossy(&out.stderr));
        let text = std::fs::read_to_string(dir.path().join("transcript.jsonl")).ctx("transcript")?;
        let got: Vec<Value> = text
            .lines()
            .map(|l| Msg::from_json(l).map(|m| comparable(&m)))
            .collect::<agentmesh::Result<_>>()
            .ctx("parse transcript")?;
        ensure!(&got == want, "graph {g}: compiled transcript differs\n{}\n{got:?}\n{want:?}", graphs[g]);
    }

    // Invalid graphs name the offending nodes.
    let cases: [(&str, IssueKind, &[&str]); 3] = [
        (
            r#"{"nodes":[{"id":"start","kind":"message","payload":{"name":"user","content":"hi"}},
                {"id":"a","kind":"copy","inputs":["b"]},{"id":"b","kind":"copy","inputs":["a"]}]}"#,
            IssueKind::Cycle,
            &["a", "b"],
        ),
        (
            r#"{"nodes":[{"id":"x","kind":"copy","inputs":["ghost"]}]}"#,
            IssueKind::DanglingInput,
            &["ghost", "x"],
        ),
        (
            r#"{"nodes":[{"id":"q","kind":"widget","payload":{}},{"id":"ok","kind":"message","payload":{"name":"u","content":"c"}}]}"#,
            IssueKind::UnknownKind,
            &["q"],
        ),
    ];
    for (json, kind, want) in cases {
        match load_workflow(json) {
            Err(Error::WorkflowInvalid(report)) => {
                let got = report.node_ids(kind);
                ensure!(got == want, "{kind:?}: reported nodes {got:?}, want {want:?}");
            }
            other => return Err(format!("{kind:?} fixture accepted: {other:?}")),
        }
    }
    Ok(format!("50 graphs ({messages} messages) match their compiled programs; 3 invalid fixtures rejected"))
}

// ---------------------------------------------------------------------------
// 8. Knowledge

const DIM: usize = 64;
const VOCAB: [&str; 24] = [
    "agent", "message", "hub", "pipeline", "model", "retry", "json", "tool", "search", "server", "actor", "memory",
    "knowledge", "chunk", "vector", "budget", "token", "workflow", "graph", "node", "studio", "copy", "rust", "async",
];

fn sentence(rng: &mut ChaCha8Rng, max: usize) -> String {
    (0..rng.random_range(1..=max)).map(|_| *VOCAB.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn oracle_cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Brute-force top-k over (object, weight) pairs.
fn oracle(sources: &[(&KnowledgeObject, f64)], query: &str, k: usize) -> Vec<(String, String, f64)> {
    let q = hashed_bow(query, DIM);
    let mut all: Vec<(String, String, f64)> = Vec::new();
    for (obj, w) in sources.iter().filter(|(_, w)| *w > 0.0) {
        for e in obj.entries() {
            let score = oracle_cosine(&q, &hashed_bow(&e.text, DIM)) * w;
            all.push((obj.knowledge_id().to_string(), e.chunk_id.clone(), score));
        }
    }
    all.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn same_ranking(got: &[Retrieved], want: &[(String, String, f64)]) -> Result<(), String> {
    ensure!(got.len() == want.len(), "{} hits, want {}", got.len(), want.len());
    for (i, (g, (kid, cid, score))) in got.iter().zip(want).enumerate() {
        ensure!(
            &g.knowledge_id == kid && &g.entry.chunk_id == cid && (g.score - score).abs() < 1e-9,
            "rank {i}: got {}#{} {:.12}, want {kid}#{cid} {score:.12}",
            g.knowledge_id,
            g.entry.chunk_id,
            g.score
        );
    }
    Ok(())
}

fn corpus(rng: &mut ChaCha8Rng, root: &Path, id: &str, n: usize) -> Result<KnowledgeObject, String> {
    let data = root.join(format!("{id}-data"));
    std::fs::create_dir_all(&data).ctx("mkdir")?;
    for j in 0..n {
        std::fs::write(data.join(format!("doc{j:04}.txt")), sentence(rng, 8)).ctx("write doc")?;
    }
    let cfg = KnowledgeConfig::new(id, &data, 10_000, 0).with_persist_dir(root.join(format!("{id}-index")));
    KnowledgeObject::from_config(cfg, Arc::new(MockEmbedder::new(DIM))).ctx("build")
}

fn c8_knowledge() -> Check {
    let dir = tempfile::tempdir().ctx("tempdir")?;
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut chunks = 0;
    for c in 0..20 {
        let n = if c == 0 { 1000 } else { rng.random_range(1..=1000) };
        let obj = corpus(&mut rng, dir.path(), &format!("kb{c}"), n)?;
        ensure!(obj.len() == n, "corpus {c}: {} chunks, want {n}", obj.len());
        chunks += n;
        for _ in 0..5 {
            let q = sentence(&mut rng, 4);
            let k = rng.random_range(1..=20);
            let got = obj.retrieve(&q, k).ctx("retrieve")?;
            same_ranking(&got, &oracle(&[(&obj, 1.0)], &q, k)).map_err(|e| format!("corpus {c}, query '{q}': {e}"))?;
        }
        obj.persist().ctx("persist")?;
        let loaded = KnowledgeObject::load(&format!("kb{c}"), obj.persist_dir().unwrap(), Arc::new(MockEmbedder::new(DIM)))
            .ctx("load")?;
        ensure!(loaded.entries() == obj.entries(), "corpus {c}: persisted index differs after load");
        let q = sentence(&mut rng, 4);
        let (a, b) = (obj.retrieve(&q, 20).ctx("retrieve")?, loaded.retrieve(&q, 20).ctx("retrieve")?);
        ensure!(a == b, "corpus {c}: loaded object retrieves differently");
    }

    // Copy isolation.
    let base = corpus(&mut rng, dir.path(), "base", 50)?;
    let copy = base.deep_copy();
    let before = base.entries();
    copy.insert("extra.txt", "zebra unicorn").ctx("insert copy")?;
    let first = before[0].chunk_id.clone();
    copy.delete(&first).ctx("delete copy")?;
    ensure!(base.entries() == before, "changing the copy changed the original");
    let reloaded = KnowledgeObject::load("base", base.persist_dir().unwrap(), Arc::new(MockEmbedder::new(DIM))).ctx("load")?;
    ensure!(reloaded.entries() == before, "changing the copy changed the persisted index");
    base.insert("late.txt", "actor model studio").ctx("insert base")?;
    ensure!(copy.entries().iter().all(|e| e.text != "actor model studio"), "original's insert leaked into the copy");

    // Fusion.
    let a = corpus(&mut rng, dir.path(), "fa", 300)?;
    let b_embedder = Arc::new(MockEmbedder::new(DIM));
    let b = KnowledgeObject::empty("fb", b_embedder.clone());
    for j in 0..200 {
        b.insert(format!("b{j}.txt"), sentence(&mut rng, 8)).ctx("insert")?;
    }
    for _ in 0..20 {
        let q = sentence(&mut rng, 4);
        let k = rng.random_range(1..=20);
        let calls = b_embedder.calls();
        let fused = fused_retrieve(&[(&a, 1.0), (&b, 0.0)], &q, k).ctx("fused")?;
        ensure!(fused == a.retrieve(&q, k).ctx("retrieve")?, "zero-weight fusion differs from a alone");
        ensure!(b_embedder.calls() == calls, "zero-weight source was queried");
        let (wa, wb) = (rng.random_range(1..10) as f64 / 4.0, rng.random_range(1..10) as f64 / 4.0);
        let both = fused_retrieve(&[(&a, wa), (&b, wb)], &q, k).ctx("fused")?;
        same_ranking(&both, &oracle(&[(&a, wa), (&b, wb)], &q, k)).map_err(|e| format!("weighted fusion: {e}"))?;
    }
    Ok(format!("20 corpora ({chunks} chunks) match the brute-force oracle; persistence, copies and fusion hold"))
}

// ---------------------------------------------------------------------------
// 9. Monitor

fn c9_monitor() -> Check {
    let (rt, dir) = runtime();
    rt.register_models(vec![
        ModelConfig::scripted("counted", vec![ScriptedRule::respond("noted, you said {last}").failing(2)]).with_price(0.5),
    ])
    .ctx("register")?;
    let agent = common::dialog(&rt, "assistant", "counted");
    for i in 0..5 {
        agent.reply(Some(&user(&format!("message number {i} with some words")))).ctx("reply")?;
    }
    let model = rt.model("counted").ctx("model")?;
    let backend = model.scripted().unwrap();
    let usage = rt.monitor().get_usage("counted");
    ensure!(backend.attempts() == 7 && backend.successes() == 5, "backend saw {} attempts", backend.attempts());
    ensure!(usage.calls == backend.successes(), "calls {} != {}", usage.calls, backend.successes());
    ensure!(usage.prompt_tokens == backend.prompt_tokens(), "prompt tokens differ");
    ensure!(usage.completion_tokens == backend.completion_tokens(), "completion tokens differ");
    let cost = (backend.prompt_tokens() + backend.completion_tokens()) as f64 / 1000.0 * 0.5;
    ensure!((usage.cost - cost).abs() < 1e-9, "cost {} != {cost}", usage.cost);

    let prompt = [PromptMessage::new(Role::User, "user", "hi")];
    // A zero-call block budget stops the first call before the backend.
    scripted(&rt, "blocked", vec![ScriptedRule::respond("x")])?;
    rt.monitor().add_budget(Budget::new(Some("blocked"), BudgetMetric::Calls, 0.0, BudgetAction::Block));
    let m = rt.model("blocked").ctx("model")?;
    let err = m.invoke(&prompt).err().ok_or("blocked call went through")?;
    ensure!(err.kind() == ErrorKind::BudgetExceeded, "block error kind {:?}", err.kind());
    ensure!(m.scripted().unwrap().attempts() == 0, "blocked call reached the backend");

    scripted(&rt, "capped", vec![ScriptedRule::respond("x")])?;
    rt.monitor().add_budget(Budget::new(Some("capped"), BudgetMetric::Calls, 2.0, BudgetAction::Block));
    let m = rt.model("capped").ctx("model")?;
    m.invoke(&prompt).ctx("call 1")?;
    m.invoke(&prompt).ctx("call 2")?;
    ensure!(m.invoke(&prompt).is_err(), "third call passed a 2-call budget");
    ensure!(m.scripted().unwrap().attempts() == 2, "blocked third call reached the backend");

    scripted(&rt, "watched", vec![ScriptedRule::respond("x")])?;
    rt.monitor().add_budget(Budget::new(Some("watched"), BudgetMetric::Calls, 5.0, BudgetAction::Warn));
    let m = rt.model("watched").ctx("model")?;
    let warns = || rt.monitor().events().into_iter().filter(|e| e.scope == "watched").collect::<Vec<_>>();
    for call in 1..=7 {
        m.invoke(&prompt).ctx("warned call")?;
        let want = usize::from(call >= 4);
        ensure!(warns().len() == want, "after call {call}: {} warnings", warns().len());
    }
    ensure!(warns()[0].value == 4.0, "warned at value {}", warns()[0].value);

    // Artifacts.
    let files = FileManager::new(dir.path());
    let payload: Vec<u8> = (0..1_048_576u32).map(|i| (i.wrapping_mul(2_654_435_761) >> 24) as u8).collect();
    let url = files.save_artifact(&payload, "bin").ctx("save")?;
    ensure!(files.save_artifact(&payload, ".bin").ctx("save")? == url, "same bytes got a new URL");
    ensure!(url.starts_with("file://"), "url {url}");
    let stored = std::fs::read_dir(files.artifact_dir()).ctx("list")?.count();
    ensure!(stored == 1, "{stored} artifact files for identical bytes");
    ensure!(files.load_artifact(&url).ctx("load")? == payload, "artifact bytes differ");
    let msg = Msg::builder("painter", "Here is the image.").url(url).build().ctx("msg")?;
    let size = msg.to_json().len();
    ensure!(size < 2048, "message with artifact is {size} bytes");
    Ok(format!("usage matches backend tallies; block and warn budgets hold; 1MB artifact message is {size} bytes"))
}

// ---------------------------------------------------------------------------
// 10. Applications

fn c10_applications() -> Check {
    let a = basic_conversation(5)?;
    let again = basic_conversation(5)?;
    ensure!(a == again, "seeded conversation is not reproducible");
    let chat = group_chat()?;
    let copilot = rag_copilot()?;
    let search = search_fanout()?;
    Ok(format!("conversation ({} lines, reproducible), {chat}, {copilot}, {search}", a.lines().count()))
}

fn basic_conversation(seed: u64) -> Result<String, String> {
    seed_ids(seed);
    let (rt, _dir) = runtime();
    let sink = Arc::new(MemorySink::new());
    rt.logger().add_sink(sink.clone());
    scripted(
        &rt,
        "assistant-model",
        vec![ScriptedRule::respond("A joke: why do actors never get lost? They follow their mailbox.").when("joke"), ScriptedRule::respond("You said: {last}")],
    )?;
    let assistant: Arc<dyn Agent> = Arc::new(
        DialogAgent::new("assistant", "You are a helpful assistant.", rt.model("assistant-model").ctx("model")?)
            .ctx("agent")?
            .with_logger(Some(rt.logger().clone())),
    );
    let input = Arc::new(ScriptedInput::new(["Hi there", "Tell me a joke", "exit"]));
    let user_agent: Arc<dyn Agent> =
        Arc::new(UserAgent::new("user", input).ctx("user")?.with_logger(Some(rt.logger().clone())));
    let body: Op = Arc::new(SequentialPipeline::new(agent_ops(&[assistant, user_agent])).ctx("pipeline")?);
    let chat = WhileLoopPipeline::new(body, |_, x| Ok(x.map_or(Ok(true), |m| m.content().map(|c| c != "exit"))?));
    let last = chat.call(Some(user("Hello!"))).ctx("conversation")?;
    ensure!(last.map(|m| m.content().unwrap().to_string()).as_deref() == Some("exit"), "loop did not stop on exit");
    let said: Vec<(String, String)> = sink.messages().iter().map(|m| (m.name().into(), m.content().into())).collect();
    let want = [
        ("assistant", "You said: Hello!"),
        ("user", "Hi there"),
        ("assistant", "You said: Hi there"),
        ("user", "Tell me a joke"),
        ("assistant", "A joke: why do actors never get lost? They follow their mailbox."),
        ("user", "exit"),
    ];
    ensure!(
        said.iter().map(|(a, b)| (a.as_str(), b.as_str())).eq(want),
        "conversation went {said:?}"
    );
    Ok(sink.records().iter().map(|r| r.to_json_line()).collect::<Vec<_>>().join("\n"))
}

fn group_chat() -> Result<String, String> {
    let (rt, _dir) = runtime();
    scripted(&rt, "alice", vec![ScriptedRule::respond("Hello everyone, Alice here.")])?;
    scripted(&rt, "bob", vec![ScriptedRule::respond("Rust is great for actors. @Charlie do you agree?")])?;
    scripted(&rt, "charlie", vec![ScriptedRule::respond("Yes, I agree with Bob.")])?;
    let npcs: Vec<Arc<dyn Agent>> = [("Alice", "alice"), ("Bob", "bob"), ("Charlie", "charlie")]
        .iter()
        .map(|(n, m)| common::dialog(&rt, n, m))
        .collect();
    let input = Arc::new(ScriptedInput::new(["@Bob what do you think about rust?", "Thanks everyone", "exit"]));
    let human: Arc<dyn Agent> = Arc::new(UserAgent::new("user", input).ctx("user")?);
    let mut everyone = vec![human.clone()];
    everyone.extend(npcs.iter().cloned());
    let greeting: Message = Msg::builder("Host", "This is a chat room; mention someone with @name to talk to them.")
        .role(Role::System)
        .build()
        .ctx("msg")?
        .into();
    let hub = MsgHub::enter(everyone, &[greeting]).ctx("enter")?;
    let mut said = Vec::new();
    let mut turn = 0;
    loop {
        let x = resolved(&hub.speak("user", None).ctx("user speaks")?)?;
        said.push(x.name().to_string());
        if x.content() == "exit" {
            break;
        }
        let mut queue: Vec<Arc<dyn Agent>> = filter_agents(x.content(), &npcs);
        if queue.is_empty() {
            queue.push(npcs[turn % npcs.len()].clone());
            turn += 1;
        }
        let mut spoken = 0;
        while !queue.is_empty() && spoken < 5 {
            let next = queue.remove(0);
            let reply = resolved(&hub.speak(next.name(), None).ctx("npc speaks")?)?;
            said.push(reply.name().to_string());
            queue.extend(filter_agents(reply.content(), &npcs));
            spoken += 1;
        }
    }
    let want = ["user", "Bob", "Charlie", "user", "Alice", "user"];
    ensure!(said == want, "speaking order {said:?}");
    let charlie = npcs[2].memory().ctx("memory")?;
    ensure!(
        charlie.iter().any(|m| m.name() == "Bob" && m.content().contains("@Charlie")),
        "Charlie never saw Bob's mention"
    );
    let bob_prompt = rt.model("bob").ctx("model")?.scripted().unwrap().last_request().unwrap();
    ensure!(
        bob_prompt.last().unwrap().content == "@Bob what do you think about rust?",
        "Bob did not answer the mention"
    );
    Ok("group chat follows @-mentions".into())
}

fn rag_copilot() -> Result<String, String> {
    let (rt, _dir) = runtime();
    let embedder = Arc::new(MockEmbedder::new(DIM));
    let docs: [(&str, &[&str]); 3] = [
        ("tutorial", &["To install the package, run cargo add agentmesh.", "Start by creating a runtime with a run directory."]),
        ("api", &["Msg new takes a name and a content string.", "MsgHub enter takes participants and announcements."]),
        ("code", &["Example: let agent = EchoAgent::new(\"echo\") creates an agent.", "Example: sequential runs operators in order."]),
    ];
    let mut rags: Vec<Arc<dyn Agent>> = Vec::new();
    for (id, texts) in docs {
        let kb = Arc::new(KnowledgeObject::empty(id, embedder.clone()));
        for (i, t) in texts.iter().enumerate() {
            kb.insert(format!("{id}/{i}.md"), *t).ctx("insert")?;
        }
        let name = format!("{}_Assistant", id[..1].to_uppercase() + &id[1..]);
        scripted(&rt, id, vec![ScriptedRule::respond(format!("{name} answering from the docs."))])?;
        rags.push(Arc::new(
            RagAgent::new(name, "Answer from the retrieved context.", rt.model(id).ctx("model")?, vec![(kb, 1.0)])
                .ctx("rag agent")?
                .with_top_k(1),
        ));
    }
    scripted(
        &rt,
        "guide",
        vec![
            ScriptedRule::respond("Installation questions go to @Tutorial_Assistant.").when("install"),
            ScriptedRule::respond("Let me ask @Api_Assistant about that."),
        ],
    )?;
    let guide = common::dialog(&rt, "Guide", "guide");
    let input = Arc::new(ScriptedInput::new(["@Code_Assistant how do I create an agent?", "How do I install the package?", "exit"]));
    let human = UserAgent::new("user", input).ctx("user")?;
    let mut answered = Vec::new();
    loop {
        let x = resolved(&human.reply(None).ctx("user")?)?;
        if x.content() == "exit" {
            break;
        }
        let xm: Message = x.clone().into();
        let mut speakers = filter_agents(x.content(), &rags);
        if speakers.is_empty() {
            let g = resolved(&guide.reply(Some(&xm)).ctx("guide")?)?;
            speakers = filter_agents(g.content(), &rags);
        }
        for s in speakers {
            let r = resolved(&s.reply(Some(&xm)).ctx("rag reply")?)?;
            answered.push(r.name().to_string());
        }
    }
    ensure!(answered == ["Code_Assistant", "Tutorial_Assistant"], "answered by {answered:?}");
    let guide_calls = rt.model("guide").ctx("model")?.scripted().unwrap().attempts();
    ensure!(guide_calls == 1, "guide was consulted {guide_calls} times");
    let prompt = rt.model("tutorial").ctx("model")?.scripted().unwrap().last_request().unwrap();
    ensure!(
        prompt.iter().any(|p| p.content.contains("Retrieved context:") && p.content.contains("run cargo add agentmesh")),
        "tutorial prompt lacks the install chunk"
    );
    let code = rt.model("code").ctx("model")?.scripted().unwrap().last_request().unwrap();
    ensure!(code.iter().any(|p| p.content.contains("EchoAgent::new")), "code prompt lacks the example chunk");
    Ok("copilot routes mentions and guide referrals".into())
}

fn search_fanout() -> Result<String, String> {
    let (rt, _dir) = runtime();
    let engine = Arc::new(MockSearchEngine::new().with_latency(Duration::from_millis(300)));
    rt.services().engines().register("mock", engine.clone());
    let question = "Which actor frameworks exist?";
    let tools = vec![json!({"name": "web_search", "preset": {"engine": "mock", "api_key": "none", "num_results": 2}})];
    let mut answerers: Vec<Arc<dyn Agent>> = Vec::new();
    for i in 0..3 {
        let model = format!("searcher{i}");
        scripted(
            &rt,
            &model,
            vec![
                ScriptedRule::respond(call_json("finish", json!({"response": format!("Answer {i}: see the search results.")})))
                    .when("Execution results"),
                ScriptedRule::respond(call_json("web_search", json!({"question": question}))),
            ],
        )?;
        let a = ReActAgent::from_registry(
            format!("answerer{i}"),
            "Answer using web search.",
            rt.model(&model).ctx("model")?,
            rt.services(),
            tools.clone(),
        )
        .ctx("react agent")?;
        answerers.push(Arc::new(a));
    }
    let x = user(question);
    let t = Instant::now();
    let mut local = Vec::new();
    for a in &answerers {
        local.push(resolved(&a.reply(Some(&x)).ctx("answer")?)?.content().to_string());
    }
    let sequential_time = t.elapsed();
    let remotes: Vec<Arc<dyn Agent>> = answerers
        .iter()
        .map(|a| to_dist(a.as_ref(), DistTarget::InProcess, &rt).map(|r| Arc::new(r) as Arc<dyn Agent>))
        .collect::<agentmesh::Result<_>>()
        .ctx("to_dist")?;
    let t = Instant::now();
    let pending: Vec<Message> = remotes.iter().map(|r| r.reply(Some(&x))).collect::<agentmesh::Result<_>>().ctx("fan-out")?;
    let mut remote = Vec::new();
    for p in &pending {
        remote.push(resolved(p)?.content().to_string());
    }
    let parallel_time = t.elapsed();
    ensure!(local == remote, "answers differ: {local:?} vs {remote:?}");
    ensure!(engine.calls().len() == 6, "{} searches, want 6", engine.calls().len());
    ensure!(
        parallel_time.as_secs_f64() < 0.6 * sequential_time.as_secs_f64(),
        "parallel {parallel_time:?} not faster than sequential {sequential_time:?}"
    );
    scripted(&rt, "summarizer", vec![ScriptedRule::respond("Summary of {prompt}")])?;
    let summarizer = common::dialog(&rt, "summarizer", "summarizer");
    for p in &pending {
        summarizer.observe(p).ctx("observe")?;
    }
    let summary = resolved(&summarizer.reply(None).ctx("summary")?)?;
    ensure!(
        (0..3).all(|i| summary.content().contains(&format!("Answer {i}:"))),
        "summary misses an answer"
    );
    Ok(format!(
        "search fan-out {:.0}ms parallel vs {:.0}ms sequential",
        parallel_time.as_secs_f64() * 1e3,
        sequential_time.as_secs_f64() * 1e3
    ))
}
