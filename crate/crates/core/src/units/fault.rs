use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Causality, ModelDescription, SimulationUnit, UnitError};
use crate::condition::{evaluate, parse_condition, ConditionError, ConditionExpr, LatchedCondition, Scope};
use crate::value::{Value, ValueType};

/// Pseudo-variable bound to the unit-local step start time in fault triggers.
pub const FAULT_TIME_VAR: &str = "sim.time";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultDirection {
    Input,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultTransform {
    /// 1, 0, 1, 0, ... on consecutive active steps.
    Alternate01,
    Constant(f64),
}

/// One tampering rule, as read from a fault-rule file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultRule {
    pub instance: String,
    pub variable: String,
    pub direction: FaultDirection,
    pub trigger: String,
    pub transform: FaultTransform,
    /// When present the fault switches off once this holds and re-arms the
    /// trigger. Without it an activated fault stays on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub release: Option<String>,
}

impl FaultRule {
    pub fn parse_list(text: &str) -> Result<Vec<FaultRule>, FaultError> {
        serde_json::from_str(text).map_err(|e| FaultError::Format(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FaultError {
    #[error("fault rules: {0}")]
    Format(String),
    #[error("fault rule on {instance}: unknown variable {variable}")]
    UnknownVariable { instance: String, variable: String },
    #[error("fault rule on {instance}.{variable}: variable is {actual}, rule says {expected:?}")]
    Direction {
        instance: String,
        variable: String,
        expected: FaultDirection,
        actual: Causality,
    },
    #[error("fault rule on {instance}.{variable}: {source}")]
    Condition {
        instance: String,
        variable: String,
        source: ConditionError,
    },
}

struct ArmedRule {
    rule: FaultRule,
    value_type: ValueType,
    trigger: LatchedCondition,
    release: Option<ConditionExpr>,
    active: bool,
    phase: u64,
    commanded: Option<Value>,
    injected: Option<Value>,
}

impl ArmedRule {
    fn next_value(&mut self) -> Value {
        let raw = match self.rule.transform {
            FaultTransform::Alternate01 => {
                if self.phase.is_multiple_of(2) {
                    1.0
                } else {
                    0.0
                }
            }
            FaultTransform::Constant(v) => v,
        };
        self.phase += 1;
        match self.value_type {
            ValueType::Real => Value::Real(raw),
            ValueType::Integer => Value::Integer(raw as i64),
            ValueType::Boolean => Value::Boolean(raw != 0.0),
            ValueType::String => Value::String(raw.to_string()),
        }
    }
}

/// Wraps a unit and tampers with selected inputs or outputs while a rule's
/// trigger holds. Triggers see the wrapped unit's variables as
/// `instance.variable` plus `sim.time`.
pub struct FaultInjector {
    inner: Box<dyn SimulationUnit>,
    rules: Vec<ArmedRule>,
}

impl FaultInjector {
    pub fn new(inner: Box<dyn SimulationUnit>, rules: Vec<FaultRule>) -> Result<Self, FaultError> {
        let desc = inner.description().clone();
        let armed = rules
            .into_iter()
            .map(|rule| arm(&desc, inner.instance_name(), rule))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FaultInjector { inner, rules: armed })
    }

    /// Checks rules against a model description without building a unit.
    pub fn check_rules(desc: &ModelDescription, instance: &str, rules: &[FaultRule]) -> Result<(), FaultError> {
        for rule in rules {
            arm(desc, instance, rule.clone())?;
        }
        Ok(())
    }

    fn scope(&self, time: f64) -> Result<Scope, UnitError> {
        let name = self.inner.instance_name();
        let mut scope = Scope::new();
        for var in &self.inner.description().variables {
            scope.insert(format!("{name}.{}", var.name), self.inner.get_var(&var.name)?);
        }
        for rule in &self.rules {
            if let (FaultDirection::Input, Some(v)) = (rule.rule.direction, &rule.commanded) {
                scope.insert(format!("{name}.{}", rule.rule.variable), v.clone());
            }
        }
        scope.insert(FAULT_TIME_VAR.to_string(), Value::Real(time));
        Ok(scope)
    }
}

fn arm(desc: &ModelDescription, instance: &str, rule: FaultRule) -> Result<ArmedRule, FaultError> {
    let var = desc
        .variable(&rule.variable)
        .ok_or_else(|| FaultError::UnknownVariable {
            instance: instance.to_string(),
            variable: rule.variable.clone(),
        })?;
    let wanted = match rule.direction {
        FaultDirection::Input => Causality::Input,
        FaultDirection::Output => Causality::Output,
    };
    if var.causality != wanted {
        return Err(FaultError::Direction {
            instance: instance.to_string(),
            variable: rule.variable.clone(),
            expected: rule.direction,
            actual: var.causality,
        });
    }
    let cond_err = |source| FaultError::Condition {
        instance: instance.to_string(),
        variable: rule.variable.clone(),
        source,
    };
    let check = |text: &str| -> Result<ConditionExpr, FaultError> {
        let expr = parse_condition(text).map_err(cond_err)?;
        for v in expr.variables() {
            let known = v.key() == FAULT_TIME_VAR || (v.instance == instance && desc.variable(&v.variable).is_some());
            if !known {
                return Err(cond_err(ConditionError::Unbound(v.key())));
            }
        }
        expr.check_types(&|v| {
            if v.key() == FAULT_TIME_VAR {
                Some(ValueType::Real)
            } else {
                desc.variable(&v.variable).map(|d| d.value_type)
            }
        })
        .map_err(cond_err)?;
        Ok(expr)
    };
    let trigger = LatchedCondition::new(check(&rule.trigger)?);
    let release = rule.release.as_deref().map(check).transpose()?;
    Ok(ArmedRule {
        value_type: var.value_type,
        trigger,
        release,
        active: false,
        phase: 0,
        commanded: None,
        injected: None,
        rule,
    })
}

impl SimulationUnit for FaultInjector {
    fn instance_name(&self) -> &str {
        self.inner.instance_name()
    }

    fn description(&self) -> &ModelDescription {
        self.inner.description()
    }

    fn set_var(&mut self, name: &str, value: Value) -> Result<(), UnitError> {
        self.inner.set_var(name, value.clone())?;
        for rule in &mut self.rules {
            if rule.rule.direction == FaultDirection::Input && rule.rule.variable == name {
                rule.commanded = Some(value.clone());
            }
        }
        Ok(())
    }

    fn get_var(&self, name: &str) -> Result<Value, UnitError> {
        for rule in &self.rules {
            if rule.rule.direction == FaultDirection::Output && rule.rule.variable == name {
                if let Some(v) = &rule.injected {
                    return Ok(v.clone());
                }
            }
        }
        self.inner.get_var(name)
    }

    fn enter_initialization(&mut self) -> Result<(), UnitError> {
        self.inner.enter_initialization()
    }

    fn exit_initialization(&mut self) -> Result<(), UnitError> {
        self.inner.exit_initialization()
    }

    fn do_step(&mut self, current_time: f64, step_size: f64) -> Result<(), UnitError> {
        let scope = self.scope(current_time)?;
        let instance = self.inner.instance_name().to_string();
        let model_err = |e: ConditionError| UnitError::Model {
            instance: instance.clone(),
            message: format!("fault trigger: {e}"),
        };
        for i in 0..self.rules.len() {
            let rule = &mut self.rules[i];
            if rule.active {
                if let Some(release) = &rule.release {
                    if evaluate(release, &scope).map_err(model_err)? {
                        rule.active = false;
                        rule.trigger.set_latched(false);
                    }
                }
            } else if rule.trigger.update(&scope).map_err(model_err)? {
                rule.active = true;
                rule.phase = 0;
            }
            if rule.active {
                let v = rule.next_value();
                rule.injected = Some(v.clone());
                if rule.rule.direction == FaultDirection::Input {
                    let var = rule.rule.variable.clone();
                    self.inner.set_var(&var, v)?;
                }
            } else {
                rule.injected = None;
                if let (FaultDirection::Input, Some(v)) = (rule.rule.direction, rule.commanded.clone()) {
                    let var = rule.rule.variable.clone();
                    self.inner.set_var(&var, v)?;
                }
            }
        }
        self.inner.do_step(current_time, step_size)
    }

    fn terminate(&mut self) -> Result<(), UnitError> {
        self.inner.terminate()
    }

    fn injected_values(&self) -> Vec<(String, Value)> {
        self.rules
            .iter()
            .filter_map(|r| r.injected.clone().map(|v| (r.rule.variable.clone(), v)))
            .collect()
    }
}
