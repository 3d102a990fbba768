//! Usage metering, budgets, chat logging and the artifact store.

mod files;
mod logging;

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use files::{load_url, run_dir_from_env, FileManager, RUN_DIR_ENV};
pub use logging::{
    agent_style, AgentStyle, ChatLogger, HumanSink, JsonlSink, LogLevel, LogRecord, LogSink, MemorySink, StreamTarget,
};

use crate::error::{Error, Result};

/// Fraction of a threshold at which a budget counts as approached.
pub const APPROACH_FACTOR: f64 = 0.8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u64,
    pub completion: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt + self.completion
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub config_name: String,
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost: f64,
}

impl UsageRecord {
    fn zero(config_name: &str) -> Self {
        Self {
            config_name: config_name.to_string(),
            calls: 0,
            prompt_tokens: 0,
            completion_tokens: 0,
            cost: 0.0,
        }
    }

    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMetric {
    Calls,
    Tokens,
    Cost,
}

impl BudgetMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Calls => "calls",
            Self::Tokens => "tokens",
            Self::Cost => "cost",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetAction {
    Warn,
    Block,
}

/// A threshold on one metric. `scope = None` covers the sum over all configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    #[serde(default)]
    pub scope: Option<String>,
    pub metric: BudgetMetric,
    pub threshold: f64,
    pub action: BudgetAction,
}

impl Budget {
    pub fn new(scope: Option<&str>, metric: BudgetMetric, threshold: f64, action: BudgetAction) -> Self {
        Self {
            scope: scope.map(str::to_string),
            metric,
            threshold,
            action,
        }
    }

    fn scope_label(&self) -> &str {
        self.scope.as_deref().unwrap_or("*")
    }
}

/// A warning raised when usage approaches a threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetEvent {
    pub scope: String,
    pub metric: BudgetMetric,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Debug, Default, Clone, Copy)]
struct Counters {
    calls: u64,
    prompt: u64,
    completion: u64,
}

#[derive(Debug)]
struct BudgetState {
    budget: Budget,
    warned: bool,
}

#[derive(Debug, Default)]
struct State {
    usage: HashMap<String, Counters>,
    prices: HashMap<String, f64>,
    budgets: Vec<BudgetState>,
    events: Vec<BudgetEvent>,
}

impl State {
    fn cost_of(&self, name: &str, c: &Counters) -> f64 {
        let price = self.prices.get(name).copied().unwrap_or(0.0);
        (c.prompt + c.completion) as f64 / 1000.0 * price
    }

    fn metric_value(&self, scope: Option<&str>, metric: BudgetMetric) -> f64 {
        let selected = self
            .usage
            .iter()
            .filter(|(name, _)| scope.map_or(true, |s| s == name.as_str()));
        selected
            .map(|(name, c)| match metric {
                BudgetMetric::Calls => c.calls as f64,
                BudgetMetric::Tokens => (c.prompt + c.completion) as f64,
                BudgetMetric::Cost => self.cost_of(name, c),
            })
            .sum()
    }
}

/// Thread-safe usage and budget tracker shared by every model of a runtime.
#[derive(Debug, Default)]
pub struct Monitor {
    state: Mutex<State>,
}

impl Monitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_price(&self, config_name: &str, price_per_1k_tokens: f64) {
        self.state
            .lock()
            .unwrap()
            .prices
            .insert(config_name.to_string(), price_per_1k_tokens);
    }

    pub fn add_budget(&self, budget: Budget) {
        self.state.lock().unwrap().budgets.push(BudgetState { budget, warned: false });
    }

    pub fn record_usage(&self, config_name: &str, usage: TokenUsage) {
        let mut st = self.state.lock().unwrap();
        let c = st.usage.entry(config_name.to_string()).or_default();
        c.calls += 1;
        c.prompt += usage.prompt;
        c.completion += usage.completion;
    }

    /// Zeroed record for unknown names.
    pub fn get_usage(&self, config_name: &str) -> UsageRecord {
        let st = self.state.lock().unwrap();
        match st.usage.get(config_name) {
            None => UsageRecord::zero(config_name),
            Some(c) => UsageRecord {
                config_name: config_name.to_string(),
                calls: c.calls,
                prompt_tokens: c.prompt,
                completion_tokens: c.completion,
                cost: st.cost_of(config_name, c),
            },
        }
    }

    pub fn all_usage(&self) -> Vec<UsageRecord> {
        let mut names: Vec<String> = self.state.lock().unwrap().usage.keys().cloned().collect();
        names.sort();
        names.iter().map(|n| self.get_usage(n)).collect()
    }

    /// Called before each invocation of `config_name`.
    ///
    /// The calls metric is evaluated on the prospective count (this call
    /// included); tokens and cost on what has already been spent. Warnings
    /// fire once, the first time the value reaches 80% of the threshold.
    /// Blocking happens only when the value is above the threshold.
    pub fn check_budget(&self, config_name: &str) -> Result<()> {
        let mut guard = self.state.lock().unwrap();
        let st = &mut *guard;
        let mut new_events = Vec::new();
        for i in 0..st.budgets.len() {
            let b = st.budgets[i].budget.clone();
            if b.scope.as_deref().is_some_and(|s| s != config_name) {
                continue;
            }
            let mut value = st.metric_value(b.scope.as_deref(), b.metric);
            if b.metric == BudgetMetric::Calls {
                value += 1.0;
            }
            if b.action == BudgetAction::Block && value > b.threshold {
                return Err(Error::BudgetExceeded {
                    scope: b.scope_label().to_string(),
                    metric: b.metric.as_str().to_string(),
                    value,
                    threshold: b.threshold,
                });
            }
            if !st.budgets[i].warned && value >= APPROACH_FACTOR * b.threshold {
                st.budgets[i].warned = true;
                new_events.push(BudgetEvent {
                    scope: b.scope_label().to_string(),
                    metric: b.metric,
                    value,
                    threshold: b.threshold,
                });
            }
        }
        st.events.extend(new_events);
        Ok(())
    }

    pub fn events(&self) -> Vec<BudgetEvent> {
        self.state.lock().unwrap().events.clone()
    }
}
