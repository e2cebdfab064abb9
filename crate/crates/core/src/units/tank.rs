use super::{Behavior, ModelDescription, Variable, Variables};
use crate::value::Value;

/// Single tank with constant inflow and a valve-controlled drain, integrated
/// with explicit Euler: `level += dt * (inflow - valvecontrol * outflow)`,
/// clamped at zero. `level` starts at `initialLevel`.
#[derive(Debug, Clone, Copy, Default)]
pub struct WaterTank;

impl WaterTank {
    pub fn description() -> ModelDescription {
        ModelDescription::new(
            super::TANK_MODEL,
            vec![
                Variable::input("valvecontrol", Value::Real(0.0)),
                Variable::output("level", Value::Real(1.0), false),
                Variable::parameter("inflow", Value::Real(0.1)),
                Variable::parameter("outflow", Value::Real(0.3)),
                Variable::parameter("initialLevel", Value::Real(1.0)),
            ],
        )
    }
}

impl Behavior for WaterTank {
    fn initialize(&mut self, vars: &mut Variables) -> Result<(), String> {
        let (q_in, q_out) = (vars.real("inflow"), vars.real("outflow"));
        if !(q_in > 0.0 && q_out > 0.0) {
            return Err(format!("inflow and outflow must be positive (got {q_in}, {q_out})"));
        }
        let l0 = vars.real("initialLevel");
        if !(l0 >= 0.0) {
            return Err(format!("initialLevel must be non-negative (got {l0})"));
        }
        vars.set("level", l0);
        Ok(())
    }

    fn step(&mut self, vars: &mut Variables, _t: f64, dt: f64) -> Result<(), String> {
        let level = vars.real("level");
        let rate = vars.real("inflow") - vars.real("valvecontrol") * vars.real("outflow");
        vars.set("level", (level + dt * rate).max(0.0));
        Ok(())
    }
}
