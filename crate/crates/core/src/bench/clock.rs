//! Timing sources. Measurements use the monotonic clock; tests inject a
//! scripted one to pin the statistics without real sleeping.

use std::collections::VecDeque;
use std::time::Instant;

pub trait Clock {
    /// Milliseconds since an arbitrary fixed origin; never decreases.
    fn now_ms(&mut self) -> f64;
}

pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        MonotonicClock { origin: Instant::now() }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now_ms(&mut self) -> f64 {
        self.origin.elapsed().as_secs_f64() * 1e3
    }
}

/// Replays a fixed sequence of readings. Running out of script is a bug in
/// the caller's accounting of how many times the clock should be consulted,
/// so it panics rather than inventing data.
pub struct ScriptedClock {
    readings: VecDeque<f64>,
}

impl ScriptedClock {
    pub fn new(readings: &[f64]) -> Self {
        ScriptedClock { readings: readings.iter().copied().collect() }
    }

    pub fn remaining(&self) -> usize {
        self.readings.len()
    }
}

impl Clock for ScriptedClock {
    fn now_ms(&mut self) -> f64 {
        self.readings.pop_front().expect("scripted clock consulted more often than scripted")
    }
}
