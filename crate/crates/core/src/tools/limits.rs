//! Per-tool bounded concurrency and rate pacing.
//!
//! Each tool declares a maximum number of in-flight invocations (a semaphore)
//! and a minimum interval between dispatches. Acquiring a permit blocks until
//! both constraints allow the call.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use tokio::sync::{Mutex, OwnedSemaphorePermit, Semaphore};
use tokio::time::Instant;

#[derive(Debug, Clone)]
pub struct ToolLimit {
    pub max_in_flight: usize,
    pub min_interval: Duration,
}

impl Default for ToolLimit {
    fn default() -> Self {
        ToolLimit { max_in_flight: 8, min_interval: Duration::ZERO }
    }
}

struct Gate {
    semaphore: Arc<Semaphore>,
    min_interval: Duration,
    last_dispatch: Mutex<Option<Instant>>,
}

/// Permit guard; the in-flight slot frees when dropped.
pub struct ToolPermit {
    _permit: Option<OwnedSemaphorePermit>,
}

pub struct ToolLimits {
    gates: HashMap<String, Arc<Gate>>,
    default_limit: ToolLimit,
    default_gates: Mutex<HashMap<String, Arc<Gate>>>,
}

impl Default for ToolLimits {
    fn default() -> Self {
        ToolLimits::new(ToolLimit::default(), HashMap::new())
    }
}

impl ToolLimits {
    pub fn new(default_limit: ToolLimit, per_tool: HashMap<String, ToolLimit>) -> Self {
        let gates = per_tool
            .into_iter()
            .map(|(name, limit)| (name, Arc::new(Gate::new(&limit))))
            .collect();
        ToolLimits { gates, default_limit, default_gates: Mutex::new(HashMap::new()) }
    }

    /// Uniform cap across all tools; handy for determinism tests.
    pub fn uniform(max_in_flight: usize) -> Self {
        ToolLimits::new(
            ToolLimit { max_in_flight, min_interval: Duration::ZERO },
            HashMap::new(),
        )
    }

    pub async fn acquire(&self, tool: &str) -> ToolPermit {
        let gate = match self.gates.get(tool) {
            Some(g) => g.clone(),
            None => {
                let mut defaults = self.default_gates.lock().await;
                defaults
                    .entry(tool.to_string())
                    .or_insert_with(|| Arc::new(Gate::new(&self.default_limit)))
                    .clone()
            }
        };
        gate.acquire().await
    }
}

impl Gate {
    fn new(limit: &ToolLimit) -> Self {
        Gate {
            semaphore: Arc::new(Semaphore::new(limit.max_in_flight.max(1))),
            min_interval: limit.min_interval,
            last_dispatch: Mutex::new(None),
        }
    }

    async fn acquire(self: Arc<Self>) -> ToolPermit {
        let permit = self
            .semaphore
            .clone()
            .acquire_owned()
            .await
            .expect("semaphore never closed");
        if !self.min_interval.is_zero() {
            let mut last = self.last_dispatch.lock().await;
            let now = Instant::now();
            if let Some(prev) = *last {
                let next_allowed = prev + self.min_interval;
                if next_allowed > now {
                    tokio::time::sleep(next_allowed - now).await;
                }
            }
            *last = Some(Instant::now());
        }
        ToolPermit { _permit: Some(permit) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[tokio::test]
    async fn cap_bounds_in_flight() {
        let limits = Arc::new(ToolLimits::uniform(2));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let mut handles = Vec::new();
        for _ in 0..16 {
            let limits = limits.clone();
            let live = live.clone();
            let peak = peak.clone();
            handles.push(tokio::spawn(async move {
                let _permit = limits.acquire("web_search").await;
                let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                tokio::time::sleep(Duration::from_millis(5)).await;
                live.fetch_sub(1, Ordering::SeqCst);
            }));
        }
        for h in handles {
            h.await.unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[tokio::test]
    async fn min_interval_paces_dispatches() {
        let mut per_tool = HashMap::new();
        per_tool.insert(
            "web_search".to_string(),
            ToolLimit { max_in_flight: 4, min_interval: Duration::from_millis(20) },
        );
        let limits = ToolLimits::new(ToolLimit::default(), per_tool);
        let start = Instant::now();
        for _ in 0..3 {
            let _p = limits.acquire("web_search").await;
        }
        // Third dispatch cannot begin before two intervals have passed.
        assert!(start.elapsed() >= Duration::from_millis(40));
    }
}
