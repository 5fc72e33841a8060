//! Function lifecycle state machine shared by the local schedulers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Invocation policy of an engine instance, fixed for its lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Policy {
    /// Invoke on data availability: entry points and their successors at
    /// arrival, grand-successors on each completion.
    Dataflow,
    /// Decentralized join counting on each node's local scheduler.
    Controlflow,
    /// Centralized join counting on the master.
    CFlow,
}

/// Per-(execution, function) lifecycle phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    NotInvoked,
    Invoked,
    Starting,
    Running,
    Blocked,
    Completed,
    Failed,
}

#[derive(Debug, Error)]
#[error("illegal phase transition {from:?} -> {to:?}")]
pub struct PhaseError {
    pub from: Phase,
    pub to: Phase,
}

impl Phase {
    /// Transitions run strictly forward, except Running <-> Blocked.
    pub fn advance(self, to: Phase) -> Result<Phase, PhaseError> {
        use Phase::*;
        let ok = matches!(
            (self, to),
            (NotInvoked, Invoked)
                | (Invoked, Starting)
                | (Starting, Running)
                | (Running, Blocked)
                | (Blocked, Running)
                | (Running, Completed)
                | (Blocked, Failed)
                | (Running, Failed)
                | (Invoked, Failed)
                | (Starting, Failed)
        );
        if ok {
            Ok(to)
        } else {
            Err(PhaseError { from: self, to })
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Completed | Phase::Failed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_only() {
        let p = Phase::NotInvoked;
        let p = p.advance(Phase::Invoked).unwrap();
        let p = p.advance(Phase::Starting).unwrap();
        let p = p.advance(Phase::Running).unwrap();
        let p = p.advance(Phase::Blocked).unwrap();
        let p = p.advance(Phase::Running).unwrap();
        let p = p.advance(Phase::Completed).unwrap();
        assert!(p.is_terminal());
        assert!(Phase::Completed.advance(Phase::Running).is_err());
        assert!(Phase::Running.advance(Phase::Invoked).is_err());
    }
}
