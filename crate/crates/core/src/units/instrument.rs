use std::sync::{Arc, Mutex, MutexGuard};

use super::{ModelDescription, SimulationUnit, UnitError};
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CallKind {
    SetVar,
    GetVar,
    EnterInitialization,
    ExitInitialization,
    DoStep,
    Terminate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub instance: String,
    pub kind: CallKind,
    /// Variable name for `SetVar`/`GetVar`.
    pub variable: Option<String>,
    /// Value passed to `SetVar`.
    pub value: Option<Value>,
}

/// Shared, append-only record of unit calls, in call order.
#[derive(Debug, Clone, Default)]
pub struct CallLog(Arc<Mutex<Vec<CallRecord>>>);

impl CallLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, record: CallRecord) {
        self.lock().push(record);
    }

    pub fn lock(&self) -> MutexGuard<'_, Vec<CallRecord>> {
        self.0.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn records(&self) -> Vec<CallRecord> {
        self.lock().clone()
    }

    /// Drains and returns everything recorded so far.
    pub fn take(&self) -> Vec<CallRecord> {
        std::mem::take(&mut *self.lock())
    }
}

/// Records every call made on the wrapped unit into a [`CallLog`].
pub struct Instrumented {
    inner: Box<dyn SimulationUnit>,
    log: CallLog,
}

impl Instrumented {
    pub fn new(inner: Box<dyn SimulationUnit>, log: CallLog) -> Self {
        Instrumented { inner, log }
    }

    fn record(&self, kind: CallKind, variable: Option<&str>, value: Option<&Value>) {
        self.log.push(CallRecord {
            instance: self.inner.instance_name().to_string(),
            kind,
            variable: variable.map(str::to_string),
            value: value.cloned(),
        });
    }
}

impl SimulationUnit for Instrumented {
    fn instance_name(&self) -> &str {
        self.inner.instance_name()
    }

    fn description(&self) -> &ModelDescription {
        self.inner.description()
    }

    fn set_var(&mut self, name: &str, value: Value) -> Result<(), UnitError> {
        self.record(CallKind::SetVar, Some(name), Some(&value));
        self.inner.set_var(name, value)
    }

    fn get_var(&self, name: &str) -> Result<Value, UnitError> {
        self.record(CallKind::GetVar, Some(name), None);
        self.inner.get_var(name)
    }

    fn enter_initialization(&mut self) -> Result<(), UnitError> {
        self.record(CallKind::EnterInitialization, None, None);
        self.inner.enter_initialization()
    }

    fn exit_initialization(&mut self) -> Result<(), UnitError> {
        self.record(CallKind::ExitInitialization, None, None);
        self.inner.exit_initialization()
    }

    fn do_step(&mut self, current_time: f64, step_size: f64) -> Result<(), UnitError> {
        self.record(CallKind::DoStep, None, None);
        self.inner.do_step(current_time, step_size)
    }

    fn terminate(&mut self) -> Result<(), UnitError> {
        self.record(CallKind::Terminate, None, None);
        self.inner.terminate()
    }

    fn injected_values(&self) -> Vec<(String, Value)> {
        self.inner.injected_values()
    }
}
