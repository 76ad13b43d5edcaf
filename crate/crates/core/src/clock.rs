//! Clocks that decide whether a worker may take another step.

use std::time::{Duration, Instant};

pub trait StepClock {
    /// Elapsed time once the next step finishes, if it were taken now.
    fn elapsed_after_next(&mut self) -> Duration;
    /// Charge the step previewed by `elapsed_after_next`.
    fn commit_step(&mut self);
    fn elapsed(&self) -> Duration;
}

/// Virtual time driven by a per-step cost callback. A previewed cost is cached
/// until committed, so each step consumes exactly one draw.
pub struct VirtualClock<F> {
    cost: F,
    elapsed: Duration,
    pending: Option<Duration>,
}

impl<F: FnMut() -> Duration> VirtualClock<F> {
    pub fn new(cost: F) -> Self {
        Self {
            cost,
            elapsed: Duration::ZERO,
            pending: None,
        }
    }
}

impl<F: FnMut() -> Duration> StepClock for VirtualClock<F> {
    fn elapsed_after_next(&mut self) -> Duration {
        let c = *self.pending.get_or_insert_with(&mut self.cost);
        self.elapsed.saturating_add(c)
    }

    fn commit_step(&mut self) {
        let c = self.pending.take().unwrap_or_else(&mut self.cost);
        self.elapsed = self.elapsed.saturating_add(c);
    }

    fn elapsed(&self) -> Duration {
        self.elapsed
    }
}

/// Real time since construction. Step durations are unknown in advance, so a
/// step is admitted whenever the current time is still inside the budget.
pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn start() -> Self {
        Self {
            start: Instant::now(),
        }
    }
}

impl StepClock for WallClock {
    fn elapsed_after_next(&mut self) -> Duration {
        self.start.elapsed()
    }

    fn commit_step(&mut self) {}

    fn elapsed(&self) -> Duration {
        self.start.elapsed()
    }
}
