//! Message-transmission combinators and the broadcast hub.
//!
//! Every combinator is an [`Operator`]: it takes an optional message and
//! returns an optional message, so agents and pipelines nest freely.

mod hub;

use std::sync::Arc;

pub use hub::{HubSpeaker, MsgHub};

use crate::agents::Agent;
use crate::error::{Error, Result};
use crate::msg::Message;

/// Default hard stop for loops.
pub const DEFAULT_MAX_ITERATIONS: usize = 1024;

pub trait Operator: Send + Sync {
    fn call(&self, x: Option<Message>) -> Result<Option<Message>>;
}

pub type Op = Arc<dyn Operator>;

/// An agent used as an operator: one `reply` per call.
#[derive(Clone)]
pub struct AgentOp(pub Arc<dyn Agent>);

impl Operator for AgentOp {
    fn call(&self, x: Option<Message>) -> Result<Option<Message>> {
        self.0.reply(x.as_ref()).map(Some)
    }
}

pub fn agent_op(agent: Arc<dyn Agent>) -> Op {
    Arc::new(AgentOp(agent))
}

pub fn agent_ops(agents: &[Arc<dyn Agent>]) -> Vec<Op> {
    agents.iter().cloned().map(agent_op).collect()
}

impl<F> Operator for F
where
    F: Fn(Option<Message>) -> Result<Option<Message>> + Send + Sync,
{
    fn call(&self, x: Option<Message>) -> Result<Option<Message>> {
        self(x)
    }
}

pub struct SequentialPipeline {
    ops: Vec<Op>,
}

impl SequentialPipeline {
    pub fn new(ops: Vec<Op>) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::validation("sequential pipeline needs at least one operator"));
        }
        Ok(Self { ops })
    }
}

impl Operator for SequentialPipeline {
    fn call(&self, mut x: Option<Message>) -> Result<Option<Message>> {
        for (position, op) in self.ops.iter().enumerate() {
            x = op.call(x).map_err(|e| Error::Pipeline {
                position,
                source: Box::new(e),
            })?;
        }
        Ok(x)
    }
}

/// `msg = op1(x); msg = op2(msg); ...`. An empty list returns `x`.
pub fn sequential(ops: &[Op], x: Option<Message>) -> Result<Option<Message>> {
    if ops.is_empty() {
        return Ok(x);
    }
    SequentialPipeline::new(ops.to_vec())?.call(x)
}

type Predicate = dyn Fn(Option<&Message>) -> Result<bool> + Send + Sync;
type Selector = dyn Fn(Option<&Message>) -> Result<String> + Send + Sync;
type LoopCondition = dyn Fn(usize, Option<&Message>) -> Result<bool> + Send + Sync;

pub struct IfElsePipeline {
    condition: Box<Predicate>,
    then_op: Op,
    else_op: Option<Op>,
}

impl IfElsePipeline {
    /// Without an else branch a false condition returns the input.
    pub fn new(
        condition: impl Fn(Option<&Message>) -> Result<bool> + Send + Sync + 'static,
        then_op: Op,
        else_op: Option<Op>,
    ) -> Self {
        Self {
            condition: Box::new(condition),
            then_op,
            else_op,
        }
    }
}

impl Operator for IfElsePipeline {
    fn call(&self, x: Option<Message>) -> Result<Option<Message>> {
        if (self.condition)(x.as_ref())? {
            self.then_op.call(x)
        } else {
            match &self.else_op {
                Some(op) => op.call(x),
                None => Ok(x),
            }
        }
    }
}

pub fn ifelse(
    condition: impl Fn(Option<&Message>) -> Result<bool> + Send + Sync + 'static,
    then_op: Op,
    else_op: Option<Op>,
    x: Option<Message>,
) -> Result<Option<Message>> {
    IfElsePipeline::new(condition, then_op, else_op).call(x)
}

pub struct SwitchPipeline {
    selector: Box<Selector>,
    cases: Vec<(String, Op)>,
    default: Option<Op>,
}

impl SwitchPipeline {
    pub fn new(
        selector: impl Fn(Option<&Message>) -> Result<String> + Send + Sync + 'static,
        cases: Vec<(String, Op)>,
        default: Option<Op>,
    ) -> Result<Self> {
        for (i, (k, _)) in cases.iter().enumerate() {
            if cases[..i].iter().any(|(prev, _)| prev == k) {
                return Err(Error::validation(format!("duplicate switch case: {k}")));
            }
        }
        Ok(Self {
            selector: Box::new(selector),
            cases,
            default,
        })
    }
}

impl Operator for SwitchPipeline {
    fn call(&self, x: Option<Message>) -> Result<Option<Message>> {
        let key = (self.selector)(x.as_ref())?;
        match self.cases.iter().find(|(k, _)| *k == key) {
            Some((_, op)) => op.call(x),
            None => match &self.default {
                Some(op) => op.call(x),
                None => Err(Error::validation(format!("switch: no case matches '{key}' and no default"))),
            },
        }
    }
}

pub fn switch(
    selector: impl Fn(Option<&Message>) -> Result<String> + Send + Sync + 'static,
    cases: Vec<(String, Op)>,
    default: Option<Op>,
    x: Option<Message>,
) -> Result<Option<Message>> {
    SwitchPipeline::new(selector, cases, default)?.call(x)
}

pub struct WhileLoopPipeline {
    body: Op,
    condition: Box<LoopCondition>,
    max_iterations: usize,
}

impl WhileLoopPipeline {
    pub fn new(body: Op, condition: impl Fn(usize, Option<&Message>) -> Result<bool> + Send + Sync + 'static) -> Self {
        Self {
            body,
            condition: Box::new(condition),
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }

    pub fn with_max_iterations(mut self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("max_iterations must be at least 1"));
        }
        self.max_iterations = n;
        Ok(self)
    }
}

impl Operator for WhileLoopPipeline {
    fn call(&self, mut x: Option<Message>) -> Result<Option<Message>> {
        let mut i = 0;
        while (self.condition)(i, x.as_ref())? {
            if i >= self.max_iterations {
                return Err(Error::LoopGuard(self.max_iterations));
            }
            x = self.body.call(x)?;
            i += 1;
        }
        Ok(x)
    }
}

pub fn whileloop(
    body: Op,
    condition: impl Fn(usize, Option<&Message>) -> Result<bool> + Send + Sync + 'static,
    x: Option<Message>,
) -> Result<Option<Message>> {
    WhileLoopPipeline::new(body, condition).call(x)
}

pub struct ForLoopPipeline {
    body: Op,
    n: usize,
    max_iterations: usize,
}

impl ForLoopPipeline {
    pub fn new(body: Op, n: usize) -> Self {
        Self {
            body,
            n,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }

    pub fn with_max_iterations(mut self, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("max_iterations must be at least 1"));
        }
        self.max_iterations = n;
        Ok(self)
    }
}

impl Operator for ForLoopPipeline {
    fn call(&self, mut x: Option<Message>) -> Result<Option<Message>> {
        if self.n > self.max_iterations {
            return Err(Error::LoopGuard(self.max_iterations));
        }
        for _ in 0..self.n {
            x = self.body.call(x)?;
        }
        Ok(x)
    }
}

pub fn forloop(body: Op, n: usize, x: Option<Message>) -> Result<Option<Message>> {
    ForLoopPipeline::new(body, n).call(x)
}
