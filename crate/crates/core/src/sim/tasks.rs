// SPDX-License-Identifier: Apache-2.0

//! Per-device task accounting.
//!
//! Tasks are emitted periodically. Each one is charged the analytical cost of
//! the placement in force when it was emitted, plus any wait caused by
//! migration downtime of the modules it visits. Tasks are evaluated once all
//! downtime windows that could touch them are known.

use std::sync::Arc;

use crate::cost::AppCost;
use crate::scenario::InterruptMode;

/// Cost of one task under a fixed placement.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskCost {
    /// Time from emission until schedule `t` receives its inputs.
    pub offsets: Vec<f64>,
    pub time: f64,
    pub energy: f64,
    /// False when some module has no live server; such tasks are dropped.
    pub served: bool,
}

impl TaskCost {
    pub fn from_app_cost(c: &AppCost, sensor_latency: f64) -> Self {
        let mut offsets = Vec::with_capacity(c.schedule_time.len());
        let mut acc = sensor_latency;
        for g in &c.schedule_time {
            offsets.push(acc);
            acc += g;
        }
        Self { offsets, time: acc, energy: c.energy, served: true }
    }

    pub fn unserved(schedules: usize) -> Self {
        Self { offsets: vec![0.0; schedules], time: 0.0, energy: 0.0, served: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub schedule: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TaskTotals {
    pub emitted: u64,
    pub completed: u64,
    pub in_flight: u64,
    pub dropped: u64,
    pub interrupted: u64,
    pub sum_time: f64,
    pub sum_energy: f64,
}

impl TaskTotals {
    pub fn add(&mut self, o: &TaskTotals) {
        self.emitted += o.emitted;
        self.completed += o.completed;
        self.in_flight += o.in_flight;
        self.dropped += o.dropped;
        self.interrupted += o.interrupted;
        self.sum_time += o.sum_time;
        self.sum_energy += o.sum_energy;
    }
}

#[derive(Clone, Debug)]
pub struct TaskLedger {
    interval: f64,
    first: Option<f64>,
    segments: Vec<(f64, Arc<TaskCost>)>,
    windows: Vec<Window>,
}

impl TaskLedger {
    pub fn new(interval: f64) -> Self {
        Self { interval, first: None, segments: Vec::new(), windows: Vec::new() }
    }

    pub fn started(&self) -> bool {
        self.first.is_some()
    }

    /// First emission at `t`.
    pub fn start(&mut self, t: f64, cost: TaskCost) {
        self.first = Some(t);
        self.segments.push((t, Arc::new(cost)));
    }

    /// Tasks emitted from `t` on use `cost`.
    pub fn set_cost(&mut self, t: f64, cost: TaskCost) {
        if self.first.is_none() {
            return;
        }
        if let Some(last) = self.segments.last_mut() {
            if last.0 == t {
                last.1 = Arc::new(cost);
                return;
            }
        }
        self.segments.push((t, Arc::new(cost)));
    }

    pub fn add_window(&mut self, w: Window) {
        self.windows.push(w);
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    /// Extra wait of a task emitted at `e` under `cost`.
    fn delay(&self, e: f64, cost: &TaskCost, windows: &[Window]) -> f64 {
        let mut delay = 0.0;
        for (t, off) in cost.offsets.iter().enumerate() {
            let mut arrival = e + off + delay;
            // windows may chain; repeat until the arrival is outside all of them
            loop {
                let mut moved = false;
                for w in windows {
                    if w.schedule == t && w.start <= arrival && arrival < w.end {
                        arrival = w.end;
                        moved = true;
                    }
                }
                if !moved {
                    break;
                }
            }
            delay = arrival - e - off;
        }
        delay
    }

    /// Evaluates every task emitted before `horizon`.
    pub fn finish(&self, horizon: f64, mode: InterruptMode, p_idle: f64) -> TaskTotals {
        let mut out = TaskTotals::default();
        let Some(first) = self.first else { return out };
        if self.interval <= 0.0 || first >= horizon {
            return out;
        }
        let mut windows = self.windows.clone();
        windows.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
        let max_len = windows.iter().map(|w| w.end - w.start).fold(0.0, f64::max);
        let total_len: f64 = windows.iter().map(|w| w.end - w.start).sum();
        let mut seg = 0;
        let mut k: u64 = 0;
        loop {
            let e = first + k as f64 * self.interval;
            if e >= horizon {
                break;
            }
            k += 1;
            while seg + 1 < self.segments.len() && self.segments[seg + 1].0 <= e {
                seg += 1;
            }
            out.emitted += 1;
            let cost = &self.segments[seg].1;
            if !cost.served {
                out.dropped += 1;
                continue;
            }
            let lo = windows.partition_point(|w| w.start < e - max_len);
            let hi = windows.partition_point(|w| w.start <= e + cost.time + total_len);
            let delay = if lo >= hi { 0.0 } else { self.delay(e, cost, &windows[lo..hi]) };
            if delay > 0.0 {
                out.interrupted += 1;
                if mode == InterruptMode::Discard {
                    out.dropped += 1;
                    continue;
                }
            }
            if e + cost.time + delay > horizon {
                out.in_flight += 1;
                continue;
            }
            out.completed += 1;
            out.sum_time += cost.time + delay;
            out.sum_energy += cost.energy + delay * p_idle;
        }
        out
    }
}
