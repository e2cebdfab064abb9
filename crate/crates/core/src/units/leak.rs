use super::controller::hysteresis;
use super::{Behavior, ModelDescription, Variable, Variables};
use crate::value::Value;

/// Flags a leak after `consecutiveSteps` consecutive level decreases seen
/// while the valve is closed. The flag latches.
#[derive(Debug, Clone, Default)]
pub struct LeakDetector {
    counter: i64,
    previous_level: Option<f64>,
}

impl LeakDetector {
    pub fn description() -> ModelDescription {
        ModelDescription::new(
            super::LEAK_DETECTOR_MODEL,
            vec![
                Variable::input("valve", Value::Real(0.0)),
                Variable::input("level", Value::Real(0.0)),
                // Computed from inputs sampled before the step, so no
                // direct feedthrough.
                Variable::output("leak", Value::Boolean(false), false),
                Variable::parameter("consecutiveSteps", Value::Integer(3)),
            ],
        )
    }

    pub fn counter(&self) -> i64 {
        self.counter
    }
}

impl Behavior for LeakDetector {
    fn initialize(&mut self, vars: &mut Variables) -> Result<(), String> {
        if vars.integer("consecutiveSteps") < 1 {
            return Err("consecutiveSteps must be at least 1".into());
        }
        self.previous_level = Some(vars.real("level"));
        Ok(())
    }

    fn step(&mut self, vars: &mut Variables, _t: f64, _dt: f64) -> Result<(), String> {
        let level = vars.real("level");
        let closed = vars.real("valve") == 0.0;
        match self.previous_level {
            Some(prev) if closed && level < prev => self.counter += 1,
            _ => self.counter = 0,
        }
        self.previous_level = Some(level);
        if self.counter >= vars.integer("consecutiveSteps") {
            vars.set("leak", true);
        }
        Ok(())
    }
}

/// Bang-bang controller that lowers its upper limit by `leakDelta` the first
/// time its `leak` input is true.
#[derive(Debug, Clone, Default)]
pub struct LeakController {
    reduced: bool,
}

impl LeakController {
    pub fn description() -> ModelDescription {
        ModelDescription::new(
            super::LEAK_CONTROLLER_MODEL,
            vec![
                Variable::input("level", Value::Real(0.0)),
                Variable::input("leak", Value::Boolean(false)),
                Variable::output("valve", Value::Real(0.0), true),
                Variable::parameter("minLevel", Value::Real(1.0)),
                Variable::parameter("maxLevel", Value::Real(2.0)),
                Variable::parameter("leakDelta", Value::Real(0.5)),
            ],
        )
    }

    pub fn leak_seen(&self) -> bool {
        self.reduced
    }
}

impl Behavior for LeakController {
    fn initialize(&mut self, vars: &mut Variables) -> Result<(), String> {
        let (min, max, delta) = (vars.real("minLevel"), vars.real("maxLevel"), vars.real("leakDelta"));
        if !(delta > 0.0) {
            return Err(format!("leakDelta must be positive (got {delta})"));
        }
        if !(min < max - delta) {
            return Err(format!(
                "minLevel {min} must be below maxLevel - leakDelta = {}",
                max - delta
            ));
        }
        Ok(())
    }

    fn step(&mut self, vars: &mut Variables, _t: f64, _dt: f64) -> Result<(), String> {
        if vars.boolean("leak") {
            self.reduced = true;
        }
        let max = if self.reduced {
            vars.real("maxLevel") - vars.real("leakDelta")
        } else {
            vars.real("maxLevel")
        };
        let valve = hysteresis(vars.real("valve"), vars.real("level"), vars.real("minLevel"), max);
        vars.set("valve", valve);
        Ok(())
    }
}
