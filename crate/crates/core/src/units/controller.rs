use super::{Behavior, ModelDescription, Variable, Variables};
use crate::value::Value;

/// Hysteresis rule shared by both water-tank controllers.
pub(crate) fn hysteresis(previous: f64, level: f64, min: f64, max: f64) -> f64 {
    if level >= max {
        1.0
    } else if level <= min {
        0.0
    } else {
        previous
    }
}

/// Bang-bang valve controller: opens the drain at `maxLevel`, closes it at
/// `minLevel`, holds in between.
#[derive(Debug, Clone, Copy, Default)]
pub struct Controller;

impl Controller {
    pub fn description() -> ModelDescription {
        ModelDescription::new(
            super::CONTROLLER_MODEL,
            vec![
                Variable::input("level", Value::Real(0.0)),
                Variable::output("valve", Value::Real(0.0), true),
                Variable::parameter("minLevel", Value::Real(1.0)),
                Variable::parameter("maxLevel", Value::Real(2.0)),
            ],
        )
    }
}

impl Behavior for Controller {
    fn initialize(&mut self, vars: &mut Variables) -> Result<(), String> {
        let (min, max) = (vars.real("minLevel"), vars.real("maxLevel"));
        if !(min < max) {
            return Err(format!("minLevel {min} must be below maxLevel {max}"));
        }
        Ok(())
    }

    fn step(&mut self, vars: &mut Variables, _t: f64, _dt: f64) -> Result<(), String> {
        let valve = hysteresis(
            vars.real("valve"),
            vars.real("level"),
            vars.real("minLevel"),
            vars.real("maxLevel"),
        );
        vars.set("valve", valve);
        Ok(())
    }
}
