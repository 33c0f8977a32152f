use alloc::{vec, vec::Vec};

use rand::Rng;

use super::{EnvError, Policy, Simulator, StepOutcome};
use crate::features::Interval;

pub const POSITION: Interval = Interval::new(-1.2, 0.6);
pub const VELOCITY: Interval = Interval::new(-0.07, 0.07);
pub const GOAL_POSITION: f64 = 0.5;
pub const N_ACTIONS: usize = 3;

/// Outcome of one mountain-car transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarStep {
    pub position: f64,
    pub velocity: f64,
    pub reward: f64,
    pub done: bool,
}

/// One step of the standard mountain-car dynamics.
///
/// Actions 0, 1, 2 push left, coast, push right. The velocity is clipped to
/// `[-0.07, 0.07]`, the position to `[-1.2, 0.6]`, and hitting the left wall
/// while moving left zeroes the velocity. Every step costs -1.
pub fn mountain_car_step(position: f64, velocity: f64, action: usize) -> Result<CarStep, EnvError> {
    if action >= N_ACTIONS {
        return Err(EnvError::ActionOutOfRange { action, n_actions: N_ACTIONS });
    }
    let inside = |iv: Interval, v: f64| v >= iv.lo && v <= iv.hi;
    if !inside(POSITION, position) || !inside(VELOCITY, velocity) {
        return Err(EnvError::OutOfDomain);
    }
    let mut v = velocity + 0.001 * (action as f64 - 1.0) - 0.0025 * libm::cos(3.0 * position);
    v = v.clamp(VELOCITY.lo, VELOCITY.hi);
    let p = (position + v).clamp(POSITION.lo, POSITION.hi);
    if p <= POSITION.lo && v < 0.0 {
        v = 0.0;
    }
    Ok(CarStep { position: p, velocity: v, reward: -1.0, done: p >= GOAL_POSITION })
}

/// Mountain car as a resettable simulator.
///
/// Episodes start at a uniformly drawn position left of the goal with zero
/// velocity.
#[derive(Debug, Clone, Default)]
pub struct MountainCar {
    position: f64,
    velocity: f64,
}

impl MountainCar {
    pub fn new() -> Self {
        Self { position: -0.5, velocity: 0.0 }
    }

    pub fn with_state(position: f64, velocity: f64) -> Self {
        Self { position, velocity }
    }

    pub fn state(&self) -> [f64; 2] {
        [self.position, self.velocity]
    }
}

impl Simulator for MountainCar {
    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        self.position = rng.gen_range(POSITION.lo..GOAL_POSITION);
        self.velocity = 0.0;
        vec![self.position, self.velocity]
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError> {
        let s = mountain_car_step(self.position, self.velocity, action)?;
        self.position = s.position;
        self.velocity = s.velocity;
        Ok(StepOutcome { next: vec![s.position, s.velocity], reward: s.reward, done: s.done })
    }
}

/// Pushes in the direction of motion; from rest, pushes the way gravity pulls.
#[derive(Debug, Clone, Copy, Default)]
pub struct EnergyPumping;

impl Policy for EnergyPumping {
    fn action<R: Rng + ?Sized>(&self, state: &[f64], _rng: &mut R) -> usize {
        let (p, v) = (state[0], state[1]);
        if v > 0.0 {
            2
        } else if v < 0.0 || libm::cos(3.0 * p) > 0.0 {
            0
        } else {
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    #[test]
    fn coasting_from_rest() {
        let s = mountain_car_step(-0.5, 0.0, 1).unwrap();
        assert_abs_diff_eq!(s.velocity, -0.0025 * (-1.5f64).cos(), epsilon = 1e-18);
        assert_abs_diff_eq!(s.velocity, -1.7685e-4, epsilon = 1e-8);
        assert_eq!(s.reward, -1.0);
        assert!(!s.done);
    }

    #[test]
    fn goal_reached() {
        for a in 0..3 {
            assert!(mountain_car_step(0.5, 0.01, a).unwrap().done);
        }
    }

    #[test]
    fn left_wall_stops_car() {
        let s = mountain_car_step(-1.19, -0.05, 0).unwrap();
        assert_eq!(s.position, -1.2);
        assert_eq!(s.velocity, 0.0);
    }

    #[test]
    fn rejects_bad_action_and_state() {
        assert_eq!(
            mountain_car_step(0.0, 0.0, 3),
            Err(EnvError::ActionOutOfRange { action: 3, n_actions: 3 })
        );
        assert_eq!(mountain_car_step(0.7, 0.0, 1), Err(EnvError::OutOfDomain));
    }

    #[test]
    fn energy_pumping_reaches_goal() {
        let mut car = MountainCar::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut done = false;
        for _ in 0..500 {
            let a = EnergyPumping.action(&car.state(), &mut rng);
            if car.step(a).unwrap().done {
                done = true;
                break;
            }
        }
        assert!(done);
    }
}
