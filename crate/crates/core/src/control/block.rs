use std::fmt;

/// The four block families a control loop is assembled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    /// Dynamics given by differential equations, advanced by the solver.
    Continuous,
    /// State changes with a constant sampling period.
    Discrete,
    /// State changes only when a condition changes.
    EventBased,
    /// Continuous flow plus condition-triggered changes of state or dynamics.
    Hybrid,
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BlockKind::Continuous => "continuous",
            BlockKind::Discrete => "discrete",
            BlockKind::EventBased => "event-based",
            BlockKind::Hybrid => "hybrid",
        };
        f.write_str(s)
    }
}

pub trait Block {
    fn kind(&self) -> BlockKind;

    /// Integrated by the solver (continuous and hybrid blocks).
    fn has_flow(&self) -> bool {
        matches!(self.kind(), BlockKind::Continuous | BlockKind::Hybrid)
    }
}
