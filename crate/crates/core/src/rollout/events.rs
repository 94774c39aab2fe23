//! Observable rollout events, used by tests to assert barrier discipline and
//! immediate-scoring ordering.

use std::sync::Mutex;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    WaveStart { wave: usize },
    GenerateDone { wave: usize, episode: usize },
    ToolDispatch { wave: usize, episode: usize, tool: String },
    ToolResolved { wave: usize, episode: usize },
    ObsPostprocessed { wave: usize, episode: usize, worker: usize },
    JudgeIssued { wave: usize, episode: usize },
    BarrierRelease { wave: usize },
}

pub trait EventSink: Send + Sync {
    fn emit(&self, event: Event);
}

/// Discards everything.
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&self, _event: Event) {}
}

/// Appends events in emission order; for test assertions.
#[derive(Default)]
pub struct VecSink {
    events: Mutex<Vec<Event>>,
}

impl VecSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshot(&self) -> Vec<Event> {
        self.events.lock().expect("sink lock").clone()
    }
}

impl EventSink for VecSink {
    fn emit(&self, event: Event) {
        self.events.lock().expect("sink lock").push(event);
    }
}
