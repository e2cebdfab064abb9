use std::f64::consts::PI;

use super::{Behavior, ModelDescription, Variable, Variables};
use crate::value::Value;

/// `angle = amplitude * sin(2*pi*t/period + phase)` at unit-local time `t`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SineSource;

impl SineSource {
    pub fn description() -> ModelDescription {
        ModelDescription::new(
            super::SINE_MODEL,
            vec![
                Variable::output("angle", Value::Real(0.0), false),
                Variable::parameter("amplitude", Value::Real(1.0)),
                Variable::parameter("period", Value::Real(1.0)),
                Variable::parameter("phase", Value::Real(0.0)),
            ],
        )
    }

    pub fn angle_at(amplitude: f64, period: f64, phase: f64, t: f64) -> f64 {
        amplitude * (2.0 * PI * t / period + phase).sin()
    }

    fn update(vars: &mut Variables, t: f64) {
        let angle = Self::angle_at(vars.real("amplitude"), vars.real("period"), vars.real("phase"), t);
        vars.set("angle", angle);
    }
}

impl Behavior for SineSource {
    fn initialize(&mut self, vars: &mut Variables) -> Result<(), String> {
        let period = vars.real("period");
        if !(period > 0.0) {
            return Err(format!("period must be positive (got {period})"));
        }
        Self::update(vars, 0.0);
        Ok(())
    }

    fn step(&mut self, vars: &mut Variables, t: f64, dt: f64) -> Result<(), String> {
        Self::update(vars, t + dt);
        Ok(())
    }
}

/// Steering actuation stand-in: latches its `angle` input to `steering` on
/// every step.
#[derive(Debug, Clone, Copy, Default)]
pub struct Actuation;

impl Actuation {
    pub fn description() -> ModelDescription {
        ModelDescription::new(
            super::ACTUATION_MODEL,
            vec![
                Variable::input("angle", Value::Real(0.0)),
                Variable::output("steering", Value::Real(0.0), true),
            ],
        )
    }
}

impl Behavior for Actuation {
    fn initialize(&mut self, vars: &mut Variables) -> Result<(), String> {
        let angle = vars.real("angle");
        vars.set("steering", angle);
        Ok(())
    }

    fn step(&mut self, vars: &mut Variables, _t: f64, _dt: f64) -> Result<(), String> {
        let angle = vars.real("angle");
        vars.set("steering", angle);
        Ok(())
    }
}
