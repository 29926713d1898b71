//! Hill-climbing migration threshold driven by total stall time per quantum.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn reversed(self) -> Self {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState<T> {
    pub threshold: T,
    pub current_total_stall: u64,
    pub previous_total_stall: Option<u64>,
    pub previous_direction: Direction,
    pub step: T,
    /// Divisor applied to the mean observed metric to get the step.
    pub step_divisor: T,
    metric_sum: T,
    metric_count: u64,
}

impl<T: Scalar> ThresholdState<T> {
    pub fn new(initial: T, step_divisor: T) -> Self {
        ThresholdState {
            threshold: initial.max(T::zero()),
            current_total_stall: 0,
            previous_total_stall: None,
            previous_direction: Direction::Up,
            step: T::zero(),
            step_divisor,
            metric_sum: T::zero(),
            metric_count: 0,
        }
    }

    /// Strict comparison: ties stay put.
    pub fn exceeds(&self, metric: T) -> bool {
        metric > self.threshold
    }

    /// Records a metric value evaluated this quantum (zeros are ignored).
    pub fn observe(&mut self, metric: T) {
        if metric > T::zero() {
            self.metric_sum = self.metric_sum + metric;
            self.metric_count += 1;
        }
    }

    pub fn add_stall(&mut self, cycles: u64) {
        self.current_total_stall += cycles;
    }

    /// Chooses the direction from the stall trend, moves one step and starts
    /// a new quantum.
    pub fn adjust(&mut self) -> Direction {
        if self.metric_count > 0 {
            self.step = self.metric_sum / T::from_count(self.metric_count) / self.step_divisor;
        }
        let dir = match self.previous_total_stall {
            None => self.previous_direction,
            Some(prev) if self.current_total_stall < prev => self.previous_direction,
            Some(_) => self.previous_direction.reversed(),
        };
        self.threshold = match dir {
            Direction::Up => self.threshold + self.step,
            Direction::Down => (self.threshold - self.step).max(T::zero()),
        };
        self.previous_direction = dir;
        self.previous_total_stall = Some(self.current_total_stall);
        self.current_total_stall = 0;
        self.metric_sum = T::zero();
        self.metric_count = 0;
        dir
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(threshold: f64, prev: u64, dir: Direction) -> ThresholdState<f64> {
        let mut s = ThresholdState::new(threshold, 16.0);
        s.previous_total_stall = Some(prev);
        s.previous_direction = dir;
        s.step = 1.0;
        s
    }

    #[test]
    fn keeps_direction_when_stall_falls() {
        let mut s = state(5.0, 100, Direction::Up);
        s.add_stall(90);
        assert_eq!(s.adjust(), Direction::Up);
        assert_eq!(s.threshold, 6.0);
    }

    #[test]
    fn reverses_when_stall_rises() {
        let mut s = state(5.0, 100, Direction::Up);
        s.add_stall(110);
        assert_eq!(s.adjust(), Direction::Down);
        assert_eq!(s.threshold, 4.0);
    }

    #[test]
    fn clamps_at_zero() {
        let mut s = state(0.0, 100, Direction::Down);
        s.add_stall(10);
        assert_eq!(s.adjust(), Direction::Down);
        assert_eq!(s.threshold, 0.0);
    }

    #[test]
    fn step_from_mean_metric() {
        let mut s = ThresholdState::<f32>::new(0.0, 16.0);
        s.observe(16.0);
        s.observe(0.0);
        s.observe(48.0);
        s.adjust();
        assert_eq!(s.step, 2.0);
        assert_eq!(s.threshold, 2.0);
        assert!(!s.exceeds(2.0));
        assert!(s.exceeds(2.5));
    }
}
