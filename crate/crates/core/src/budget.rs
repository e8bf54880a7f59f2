//! Per-decision planning budgets measured in virtual time and predictor calls.

use serde::{Deserialize, Serialize};

/// Default virtual cost of one search-node expansion, seconds.
pub const DEFAULT_NODE_OVERHEAD: f64 = 10e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BudgetMode {
    /// A fixed number of predictor calls per decision, no time limit.
    FixedPredictions { prediction_calls: u64 },
    /// `1 / tick_rate` seconds of virtual time per decision.
    FixedTime { tick_rate: f64 },
}

impl BudgetMode {
    pub fn budget(&self, node_overhead: f64) -> Budget {
        match *self {
            BudgetMode::FixedPredictions { prediction_calls } => Budget {
                virtual_total: f64::INFINITY,
                virtual_spent: 0.0,
                calls_remaining: Some(prediction_calls),
                node_overhead,
            },
            BudgetMode::FixedTime { tick_rate } => Budget {
                virtual_total: 1.0 / tick_rate,
                virtual_spent: 0.0,
                calls_remaining: None,
                node_overhead,
            },
        }
    }

    pub fn label(&self) -> String {
        match self {
            BudgetMode::FixedPredictions { prediction_calls } => {
                format!("fixed_predictions({prediction_calls})")
            }
            BudgetMode::FixedTime { tick_rate } => format!("fixed_time({tick_rate} Hz)"),
        }
    }
}

/// Budget ledger for one planner decision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Budget {
    pub virtual_total: f64,
    pub virtual_spent: f64,
    /// `None` when calls are not limited.
    pub calls_remaining: Option<u64>,
    pub node_overhead: f64,
}

impl Budget {
    pub fn unlimited() -> Budget {
        Budget {
            virtual_total: f64::INFINITY,
            virtual_spent: 0.0,
            calls_remaining: None,
            node_overhead: DEFAULT_NODE_OVERHEAD,
        }
    }

    fn cost(&self, calls: u64, latency: f64, nodes: u64) -> f64 {
        calls as f64 * latency + nodes as f64 * self.node_overhead
    }

    pub fn can_afford(&self, calls: u64, latency: f64, nodes: u64) -> bool {
        let calls_ok = self.calls_remaining.is_none_or(|c| c >= calls);
        calls_ok && self.virtual_spent + self.cost(calls, latency, nodes) <= self.virtual_total
    }

    /// Charges `calls` predictor calls of `latency` each plus `nodes` node
    /// overheads. Returns false, charging nothing, if that would overdraw.
    pub fn charge(&mut self, calls: u64, latency: f64, nodes: u64) -> bool {
        if !self.can_afford(calls, latency, nodes) {
            return false;
        }
        self.virtual_spent += self.cost(calls, latency, nodes);
        if let Some(c) = self.calls_remaining.as_mut() {
            *c -= calls;
        }
        true
    }
}
