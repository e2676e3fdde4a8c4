//! Per-snapshot invariant reports.

use serde::{Deserialize, Serialize};

/// Relative slack granted to roundoff when deciding pass/fail.
pub const PASS_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    /// `value ≤ bound`
    Upper,
    /// `value ≥ bound`
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportItem {
    pub id: String,
    pub value: f64,
    pub bound: f64,
    pub kind: BoundKind,
    pub margin: f64,
    pub pass: bool,
    /// Inactive items are recorded but never count as failures.
    pub active: bool,
}

impl ReportItem {
    pub fn upper(id: impl Into<String>, value: f64, bound: f64) -> Self {
        Self::with_slack(id, value, bound, BoundKind::Upper, PASS_SLACK)
    }

    pub fn lower(id: impl Into<String>, value: f64, bound: f64) -> Self {
        Self::with_slack(id, value, bound, BoundKind::Lower, PASS_SLACK)
    }

    /// Item whose pass threshold is `margin ≥ −slack·max(1, |bound|)`.
    pub fn with_slack(
        id: impl Into<String>,
        value: f64,
        bound: f64,
        kind: BoundKind,
        slack: f64,
    ) -> Self {
        let margin = match kind {
            BoundKind::Upper => bound - value,
            BoundKind::Lower => value - bound,
        };
        let pass = margin >= -slack * bound.abs().max(1.0);
        Self {
            id: id.into(),
            value,
            bound,
            kind,
            margin,
            pass,
            active: true,
        }
    }

    pub fn inactive(mut self) -> Self {
        self.active = false;
        self
    }

    pub fn active_if(mut self, active: bool) -> Self {
        self.active = active;
        self
    }

    /// Passed, or not asserted.
    pub fn ok(&self) -> bool {
        self.pass || !self.active
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub t: f64,
    pub items: Vec<ReportItem>,
}

impl InvariantReport {
    pub fn new(t: f64) -> Self {
        Self {
            t,
            items: Vec::new(),
        }
    }

    pub fn push(&mut self, item: ReportItem) {
        self.items.push(item);
    }

    pub fn get(&self, id: &str) -> Option<&ReportItem> {
        self.items.iter().find(|i| i.id == id)
    }

    pub fn all_pass(&self) -> bool {
        self.items.iter().all(ReportItem::ok)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ReportItem> {
        self.items.iter().filter(|i| !i.ok())
    }

    /// Bit `i` set when item `i` is ok (LSB = first item).
    pub fn pass_bitmask(&self) -> u64 {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, item)| item.ok())
            .fold(0, |mask, (i, _)| mask | (1 << i))
    }

    /// 1-based index of the first failing item.
    pub fn first_failure(&self) -> Option<usize> {
        self.items.iter().position(|i| !i.ok()).map(|i| i + 1)
    }
}
