//! FMI-like simulation units and the builtin model library.

mod broker;
mod controller;
mod fault;
mod instrument;
mod leak;
mod misc;
mod tank;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::value::{Value, ValueType};

pub use broker::{Broker, BrokerFeed, FeedError, Message, SharedFeed};
pub use controller::Controller;
pub use fault::{FaultDirection, FaultError, FaultInjector, FaultRule, FaultTransform};
pub use instrument::{CallKind, CallLog, CallRecord, Instrumented};
pub use leak::{LeakController, LeakDetector};
pub use misc::{Actuation, SineSource};
pub use tank::WaterTank;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Causality {
    Input,
    Output,
    Parameter,
}

impl fmt::Display for Causality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Causality::Input => "input",
            Causality::Output => "output",
            Causality::Parameter => "parameter",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub value_type: ValueType,
    pub causality: Causality,
    pub start: Value,
    /// Outputs only: whether the output depends on inputs within a step.
    pub direct_feedthrough: bool,
}

impl Variable {
    pub fn input(name: &str, start: Value) -> Self {
        Self::new(name, Causality::Input, start, false)
    }

    pub fn output(name: &str, start: Value, direct_feedthrough: bool) -> Self {
        Self::new(name, Causality::Output, start, direct_feedthrough)
    }

    pub fn parameter(name: &str, start: Value) -> Self {
        Self::new(name, Causality::Parameter, start, false)
    }

    fn new(name: &str, causality: Causality, start: Value, direct_feedthrough: bool) -> Self {
        Variable {
            name: name.to_string(),
            value_type: start.value_type(),
            causality,
            start,
            direct_feedthrough,
        }
    }
}

/// Static interface of a model: its variables with types and causalities.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDescription {
    pub model_name: String,
    pub variables: Vec<Variable>,
}

impl ModelDescription {
    pub fn new(model_name: &str, variables: Vec<Variable>) -> Self {
        let desc = ModelDescription {
            model_name: model_name.to_string(),
            variables,
        };
        debug_assert!(desc.names_unique(), "duplicate variable in {model_name}");
        desc
    }

    fn names_unique(&self) -> bool {
        let mut names: Vec<&str> = self.variables.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        names.windows(2).all(|w| w[0] != w[1])
    }

    pub fn variable(&self, name: &str) -> Option<&Variable> {
        self.variables.iter().find(|v| v.name == name)
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn outputs(&self) -> impl Iterator<Item = &Variable> {
        self.variables.iter().filter(|v| v.causality == Causality::Output)
    }

    pub fn inputs(&self) -> impl Iterator<Item = &Variable> {
        self.variables.iter().filter(|v| v.causality == Causality::Input)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UnitError {
    #[error("{instance}: {call} not allowed in state {state}")]
    Lifecycle {
        instance: String,
        call: &'static str,
        state: LifecycleState,
    },
    #[error("{instance}: unknown variable {variable}")]
    UnknownVariable { instance: String, variable: String },
    #[error("{instance}: type mismatch for {variable}: expected {expected}, got {actual}")]
    TypeMismatch {
        instance: String,
        variable: String,
        expected: ValueType,
        actual: ValueType,
    },
    #[error("{instance}: cannot set {causality} variable {variable} in state {state}")]
    NotSettable {
        instance: String,
        variable: String,
        causality: Causality,
        state: LifecycleState,
    },
    #[error("{instance}: nonpositive step {step}")]
    NonPositiveStep { instance: String, step: f64 },
    #[error("{instance}: invalid parameters: {message}")]
    InvalidParameters { instance: String, message: String },
    #[error("{instance}: {message}")]
    Model { instance: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LifecycleState {
    Instantiated,
    Initializing,
    Running,
    Terminated,
}

impl fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LifecycleState::Instantiated => "instantiated",
            LifecycleState::Initializing => "initializing",
            LifecycleState::Running => "running",
            LifecycleState::Terminated => "terminated",
        })
    }
}

/// The lifecycle interface every unit exposes to the engine.
///
/// Legal order: instantiated -> (set) -> `enter_initialization` -> (set/get)
/// -> `exit_initialization` -> {set | `do_step` | get}* -> `terminate`.
pub trait SimulationUnit: Send {
    fn instance_name(&self) -> &str;
    fn description(&self) -> &ModelDescription;
    fn set_var(&mut self, name: &str, value: Value) -> Result<(), UnitError>;
    fn get_var(&self, name: &str) -> Result<Value, UnitError>;
    fn enter_initialization(&mut self) -> Result<(), UnitError>;
    fn exit_initialization(&mut self) -> Result<(), UnitError>;
    fn do_step(&mut self, current_time: f64, step_size: f64) -> Result<(), UnitError>;
    fn terminate(&mut self) -> Result<(), UnitError>;

    /// Values substituted by a fault injector during the last step, keyed by
    /// variable name. Empty for ordinary units.
    fn injected_values(&self) -> Vec<(String, Value)> {
        Vec::new()
    }
}

/// Current variable values of a unit, indexed like its description.
#[derive(Debug, Clone)]
pub struct Variables {
    desc: Arc<ModelDescription>,
    values: Vec<Value>,
}

impl Variables {
    fn new(desc: Arc<ModelDescription>) -> Self {
        let values = desc.variables.iter().map(|v| v.start.clone()).collect();
        Variables { desc, values }
    }

    fn slot(&self, name: &str) -> usize {
        self.desc
            .index_of(name)
            .unwrap_or_else(|| panic!("model {} has no variable {name}", self.desc.model_name))
    }

    pub fn real(&self, name: &str) -> f64 {
        self.values[self.slot(name)].as_real().expect("real variable")
    }

    pub fn integer(&self, name: &str) -> i64 {
        self.values[self.slot(name)].as_integer().expect("integer variable")
    }

    pub fn boolean(&self, name: &str) -> bool {
        self.values[self.slot(name)].as_bool().expect("boolean variable")
    }

    pub fn set(&mut self, name: &str, value: impl Into<Value>) {
        let i = self.slot(name);
        let value = value.into();
        debug_assert_eq!(value.value_type(), self.desc.variables[i].value_type);
        self.values[i] = value;
    }
}

/// Model-specific behavior plugged into [`Unit`], which owns the lifecycle.
pub trait Behavior: Send {
    /// Validates parameters and sets initial outputs. Called from
    /// `exit_initialization`.
    fn initialize(&mut self, vars: &mut Variables) -> Result<(), String>;

    /// Advances the model by `step_size` starting at unit-local `current_time`.
    fn step(&mut self, vars: &mut Variables, current_time: f64, step_size: f64) -> Result<(), String>;
}

/// A unit built from a [`Behavior`], enforcing lifecycle order and types.
pub struct Unit<B> {
    instance: String,
    state: LifecycleState,
    vars: Variables,
    behavior: B,
}

impl<B: Behavior> Unit<B> {
    pub fn new(instance: &str, desc: Arc<ModelDescription>, behavior: B) -> Self {
        Unit {
            instance: instance.to_string(),
            state: LifecycleState::Instantiated,
            vars: Variables::new(desc),
            behavior,
        }
    }

    pub fn state(&self) -> LifecycleState {
        self.state
    }

    pub fn behavior(&self) -> &B {
        &self.behavior
    }

    fn lifecycle(&self, call: &'static str) -> UnitError {
        UnitError::Lifecycle {
            instance: self.instance.clone(),
            call,
            state: self.state,
        }
    }
}

impl<B: Behavior> SimulationUnit for Unit<B> {
    fn instance_name(&self) -> &str {
        &self.instance
    }

    fn description(&self) -> &ModelDescription {
        &self.vars.desc
    }

    fn set_var(&mut self, name: &str, value: Value) -> Result<(), UnitError> {
        if self.state == LifecycleState::Terminated {
            return Err(self.lifecycle("set_var"));
        }
        let idx = self
            .vars
            .desc
            .index_of(name)
            .ok_or_else(|| UnitError::UnknownVariable {
                instance: self.instance.clone(),
                variable: name.to_string(),
            })?;
        let var = &self.vars.desc.variables[idx];
        if self.state == LifecycleState::Running && var.causality != Causality::Input {
            return Err(UnitError::NotSettable {
                instance: self.instance.clone(),
                variable: name.to_string(),
                causality: var.causality,
                state: self.state,
            });
        }
        if value.value_type() != var.value_type {
            return Err(UnitError::TypeMismatch {
                instance: self.instance.clone(),
                variable: name.to_string(),
                expected: var.value_type,
                actual: value.value_type(),
            });
        }
        self.vars.values[idx] = value;
        Ok(())
    }

    fn get_var(&self, name: &str) -> Result<Value, UnitError> {
        if !matches!(self.state, LifecycleState::Initializing | LifecycleState::Running) {
            return Err(self.lifecycle("get_var"));
        }
        self.vars
            .desc
            .index_of(name)
            .map(|i| self.vars.values[i].clone())
            .ok_or_else(|| UnitError::UnknownVariable {
                instance: self.instance.clone(),
                variable: name.to_string(),
            })
    }

    fn enter_initialization(&mut self) -> Result<(), UnitError> {
        if self.state != LifecycleState::Instantiated {
            return Err(self.lifecycle("enter_initialization"));
        }
        self.state = LifecycleState::Initializing;
        Ok(())
    }

    fn exit_initialization(&mut self) -> Result<(), UnitError> {
        if self.state != LifecycleState::Initializing {
            return Err(self.lifecycle("exit_initialization"));
        }
        self.behavior
            .initialize(&mut self.vars)
            .map_err(|message| UnitError::InvalidParameters {
                instance: self.instance.clone(),
                message,
            })?;
        self.state = LifecycleState::Running;
        Ok(())
    }

    fn do_step(&mut self, current_time: f64, step_size: f64) -> Result<(), UnitError> {
        if self.state != LifecycleState::Running {
            return Err(self.lifecycle("do_step"));
        }
        if !(step_size > 0.0) {
            return Err(UnitError::NonPositiveStep {
                instance: self.instance.clone(),
                step: step_size,
            });
        }
        self.behavior
            .step(&mut self.vars, current_time, step_size)
            .map_err(|message| UnitError::Model {
                instance: self.instance.clone(),
                message,
            })
    }

    fn terminate(&mut self) -> Result<(), UnitError> {
        if self.state != LifecycleState::Running {
            return Err(self.lifecycle("terminate"));
        }
        self.state = LifecycleState::Terminated;
        Ok(())
    }
}

/// Whether a unit is created for the live run or for a throwaway dry run.
/// Dry-run units must not touch state shared with live units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CreateMode {
    Live,
    DryRun,
}

type Factory = Arc<dyn Fn(&str, CreateMode) -> Box<dyn SimulationUnit> + Send + Sync>;
type Decorator = Arc<dyn Fn(Box<dyn SimulationUnit>) -> Box<dyn SimulationUnit> + Send + Sync>;

struct RegistryEntry {
    description: Arc<ModelDescription>,
    factory: Factory,
}

/// Maps model names (archive basenames without `.fmu`) to unit factories.
#[derive(Clone, Default)]
pub struct ModelRegistry {
    entries: BTreeMap<String, Arc<RegistryEntry>>,
    decorator: Option<Decorator>,
}

impl fmt::Debug for ModelRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelRegistry")
            .field("models", &self.entries.keys().collect::<Vec<_>>())
            .finish()
    }
}

/// Archive names used by the water-tank configurations.
pub const TANK_MODEL: &str = "singlewatertank-20sim";
pub const CONTROLLER_MODEL: &str = "watertankcontroller-c";
pub const LEAK_DETECTOR_MODEL: &str = "leak_detector";
pub const LEAK_CONTROLLER_MODEL: &str = "leak_controller";
pub const SINE_MODEL: &str = "sine_source";
pub const BROKER_MODEL: &str = "rabbitmq";
pub const ACTUATION_MODEL: &str = "actuation";

impl ModelRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The builtin library. Brokers draw from `feed`; without one they see
    /// an empty message stream.
    pub fn builtin(feed: Option<SharedFeed>) -> Self {
        let mut reg = Self::empty();
        reg.register(TANK_MODEL, WaterTank::description(), |name, _, d| {
            Box::new(Unit::new(name, d, WaterTank))
        });
        reg.register(CONTROLLER_MODEL, Controller::description(), |name, _, d| {
            Box::new(Unit::new(name, d, Controller))
        });
        reg.register(LEAK_DETECTOR_MODEL, LeakDetector::description(), |name, _, d| {
            Box::new(Unit::new(name, d, LeakDetector::default()))
        });
        reg.register(LEAK_CONTROLLER_MODEL, LeakController::description(), |name, _, d| {
            Box::new(Unit::new(name, d, LeakController::default()))
        });
        reg.register(SINE_MODEL, SineSource::description(), |name, _, d| {
            Box::new(Unit::new(name, d, SineSource))
        });
        reg.register(ACTUATION_MODEL, Actuation::description(), |name, _, d| {
            Box::new(Unit::new(name, d, Actuation))
        });
        let feed = feed.unwrap_or_else(|| SharedFeed::new(BrokerFeed::default()));
        reg.register(BROKER_MODEL, Broker::description(), move |name, mode, d| {
            let feed = match mode {
                CreateMode::Live => feed.clone(),
                CreateMode::DryRun => feed.snapshot(),
            };
            Box::new(Unit::new(name, d, Broker::new(feed)))
        });
        reg
    }

    pub fn register<F>(&mut self, model: &str, description: ModelDescription, factory: F)
    where
        F: Fn(&str, CreateMode, Arc<ModelDescription>) -> Box<dyn SimulationUnit> + Send + Sync + 'static,
    {
        let description = Arc::new(description);
        let d = description.clone();
        let factory: Factory = Arc::new(move |name, mode| factory(name, mode, d.clone()));
        self.entries
            .insert(model.to_string(), Arc::new(RegistryEntry { description, factory }));
    }

    /// Wraps every unit this registry creates (used for instrumentation).
    pub fn with_decorator<F>(mut self, decorator: F) -> Self
    where
        F: Fn(Box<dyn SimulationUnit>) -> Box<dyn SimulationUnit> + Send + Sync + 'static,
    {
        self.decorator = Some(Arc::new(decorator));
        self
    }

    pub fn contains(&self, model: &str) -> bool {
        self.entries.contains_key(model)
    }

    pub fn models(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn description(&self, model: &str) -> Option<&ModelDescription> {
        self.entries.get(model).map(|e| e.description.as_ref())
    }

    pub fn create(&self, model: &str, instance: &str, mode: CreateMode) -> Option<Box<dyn SimulationUnit>> {
        self.create_undecorated(model, instance, mode).map(|u| self.decorate(u))
    }

    pub fn create_undecorated(&self, model: &str, instance: &str, mode: CreateMode) -> Option<Box<dyn SimulationUnit>> {
        Some((self.entries.get(model)?.factory)(instance, mode))
    }

    /// Applies the registry's decorator, if any.
    pub fn decorate(&self, unit: Box<dyn SimulationUnit>) -> Box<dyn SimulationUnit> {
        match &self.decorator {
            Some(d) => d(unit),
            None => unit,
        }
    }
}
