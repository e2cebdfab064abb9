//! Fixed-step Jacobi master with runtime model swapping.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use thiserror::Error;

use crate::condition::{ConditionError, LatchedCondition, Scope};
use crate::config::{
    parse_multi_model_with_warnings, validate_config_with, Diagnostic, MultiModelConfig, PortId, Severity, SwapEntry,
};
use crate::graph::{build_port_graph, initialization_order, prune_transfer_edges, LoopError};
use crate::transfer::{Candidate, Outcome, TransferError, TransferSource};
use crate::units::{
    Causality, CreateMode, FaultDirection, FaultError, FaultInjector, FaultRule, ModelRegistry, SimulationUnit,
    UnitError,
};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub start: f64,
    pub end: f64,
    pub step_size: f64,
    /// No transfer point is offered before this many iterations.
    pub min_steps_before_transfer: u64,
    /// Transfer points are offered every this many iterations.
    pub check_every_n_steps: u64,
    pub fault_rules: Vec<FaultRule>,
}

impl RunOptions {
    pub fn new(start: f64, end: f64, step_size: f64) -> Self {
        RunOptions {
            start,
            end,
            step_size,
            min_steps_before_transfer: 1,
            check_every_n_steps: 1,
            fault_rules: Vec::new(),
        }
    }

    pub fn with_faults(mut self, rules: Vec<FaultRule>) -> Self {
        self.fault_rules = rules;
        self
    }

    /// Number of fixed steps that fit in `[start, end]`.
    pub fn iterations(&self) -> Result<u64, EngineError> {
        let dt = self.step_size;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(EngineError::Options(format!("step size must be positive, got {dt}")));
        }
        if !self.start.is_finite() || !self.end.is_finite() || self.end < self.start {
            return Err(EngineError::Options(format!(
                "end time {} precedes start time {}",
                self.end, self.start
            )));
        }
        if self.check_every_n_steps == 0 {
            return Err(EngineError::Options("check_every_n_steps must be at least 1".into()));
        }
        Ok(((self.end - self.start) / dt + 1e-9).floor() as u64)
    }
}

/// Values logged after one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    /// Iterations completed, including this one.
    pub iteration: u64,
    pub time: f64,
    /// Number of transfers applied so far.
    pub generation: u32,
    pub values: BTreeMap<PortId, Value>,
    /// `stepCondition.<target>` and `swapCondition.<target>` flags.
    pub latches: BTreeMap<String, bool>,
}

pub trait StepSink {
    fn record(&mut self, log: &StepLog) -> io::Result<()>;
}

impl StepSink for Vec<StepLog> {
    fn record(&mut self, log: &StepLog) -> io::Result<()> {
        self.push(log.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwapPlan {
    pub source: Candidate,
    pub new_config: MultiModelConfig,
    pub transfers: BTreeMap<String, String>,
    pub fresh: BTreeSet<String>,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferEvent {
    pub iteration: u64,
    pub time: f64,
    pub name: String,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub iterations: u64,
    pub end_time: f64,
    pub transfers: Vec<TransferEvent>,
    /// Swap target to the iteration whose latch update fired its swap.
    pub swaps: BTreeMap<String, u64>,
    pub diagnostics: Vec<Diagnostic>,
}

fn join(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid run options: {0}")]
    Options(String),
    #[error("invalid configuration: {}", join(.0))]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error("at t={time}: {source}")]
    Unit { time: f64, source: UnitError },
    #[error("at t={time}: condition of swap {target}: {source}")]
    Condition {
        time: f64,
        target: String,
        source: ConditionError,
    },
    #[error("at t={time}: swap condition of {target} holds but its step condition does not")]
    LatchImplication { time: f64, target: String },
    #[error("at t={time}: input {sink} has {count} active writers")]
    MultipleWriters { time: f64, sink: String, count: usize },
    #[error("at t={time}: no value for {source_port} feeding {sink}")]
    MissingValue {
        time: f64,
        source_port: String,
        sink: String,
    },
    #[error(transparent)]
    Fault(#[from] FaultError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error("writing step log: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Gate {
    Always,
    /// Active while the target's swap latch is false.
    UntilSwapped(String),
    /// Active once the target's swap latch is true.
    OnceSwapped(String),
}

#[derive(Debug, Clone)]
struct Writer {
    source: PortId,
    gate: Gate,
}

struct SwapState {
    entry: SwapEntry,
    step: LatchedCondition,
    swap: LatchedCondition,
}

fn routes_for(cfg: &MultiModelConfig) -> BTreeMap<PortId, Vec<Writer>> {
    let target_of: BTreeMap<&str, &str> = cfg
        .model_swaps
        .iter()
        .map(|(t, e)| (e.swap_instance.as_str(), t.as_str()))
        .collect();
    let mut routes: BTreeMap<PortId, Vec<Writer>> = BTreeMap::new();
    for (src, sinks) in &cfg.connections {
        let gate = if cfg.model_swaps.contains_key(&src.instance) {
            Gate::UntilSwapped(src.instance.clone())
        } else if let Some(t) = target_of.get(src.instance.as_str()) {
            Gate::OnceSwapped(t.to_string())
        } else {
            Gate::Always
        };
        for sink in sinks {
            routes.entry(sink.clone()).or_default().push(Writer {
                source: src.clone(),
                gate: gate.clone(),
            });
        }
    }
    for (target, entry) in &cfg.model_swaps {
        for (src, sinks) in &entry.swap_connections {
            for sink in sinks {
                // Connections into the swap instance are gated by its step
                // latch on the sink side.
                let gate = if src.instance != entry.swap_instance && sink.instance == entry.swap_instance {
                    Gate::Always
                } else {
                    Gate::OnceSwapped(target.clone())
                };
                routes.entry(sink.clone()).or_default().push(Writer {
                    source: src.clone(),
                    gate,
                });
            }
        }
    }
    routes
}

fn swaps_for(cfg: &MultiModelConfig) -> BTreeMap<String, SwapState> {
    cfg.model_swaps
        .iter()
        .map(|(t, e)| {
            let state = SwapState {
                entry: e.clone(),
                step: LatchedCondition::new(e.step_expr()),
                swap: LatchedCondition::new(e.swap_expr()),
            };
            (t.clone(), state)
        })
        .collect()
}

fn step_column(target: &str) -> String {
    format!("stepCondition.{target}")
}

fn swap_column(target: &str) -> String {
    format!("swapCondition.{target}")
}

/// Ports logged for a config: every output of every instance, plus inputs
/// tampered with by a fault rule.
pub fn logged_ports(cfg: &MultiModelConfig, registry: &ModelRegistry, rules: &[FaultRule]) -> BTreeSet<PortId> {
    let mut ports = BTreeSet::new();
    for (instance, key) in cfg.instances() {
        let Some(desc) = cfg.model_name(&key).and_then(|m| registry.description(m)) else {
            continue;
        };
        for v in desc.outputs() {
            ports.insert(PortId::new(&key, &instance, &v.name));
        }
        for r in rules
            .iter()
            .filter(|r| r.instance == instance && r.direction == FaultDirection::Input)
        {
            ports.insert(PortId::new(&key, &instance, &r.variable));
        }
    }
    ports
}

/// Column names for a config, in log order, without the leading `time`.
pub fn log_columns(cfg: &MultiModelConfig, registry: &ModelRegistry, rules: &[FaultRule]) -> Vec<String> {
    let mut cols: Vec<String> = logged_ports(cfg, registry, rules)
        .iter()
        .map(|p| p.to_string())
        .collect();
    let mut latches: Vec<String> = cfg
        .model_swaps
        .keys()
        .flat_map(|t| [step_column(t), swap_column(t)])
        .collect();
    latches.sort();
    cols.extend(latches);
    cols
}

/// Columns covering every config in `cfgs`: ports first, then latches,
/// each sorted. Used to fix the header when later configs are known ahead.
pub fn union_columns<'a>(
    cfgs: impl IntoIterator<Item = &'a MultiModelConfig>,
    registry: &ModelRegistry,
    rules: &[FaultRule],
) -> Vec<String> {
    let mut ports = BTreeSet::new();
    let mut latches = BTreeSet::new();
    for cfg in cfgs {
        ports.extend(logged_ports(cfg, registry, rules));
        latches.extend(cfg.model_swaps.keys().flat_map(|t| [step_column(t), swap_column(t)]));
    }
    ports.iter().map(|p| p.to_string()).chain(latches).collect()
}

/// A running co-simulation.
pub struct Simulation {
    registry: ModelRegistry,
    options: RunOptions,
    total: u64,
    config: MultiModelConfig,
    units: BTreeMap<String, Box<dyn SimulationUnit>>,
    keys: BTreeMap<String, String>,
    routes: BTreeMap<PortId, Vec<Writer>>,
    swaps: BTreeMap<String, SwapState>,
    /// Steps taken by instances on a local clock (swap instances).
    local_steps: BTreeMap<String, u64>,
    scope: Scope,
    seen_inputs: BTreeMap<PortId, Value>,
    swapped_out: BTreeSet<String>,
    logged: BTreeSet<PortId>,
    iteration: u64,
    generation: u32,
    transfers: Vec<TransferEvent>,
    swap_fired: BTreeMap<String, u64>,
    diagnostics: Vec<Diagnostic>,
}

impl Simulation {
    /// Validates `cfg`, instantiates and initializes every unit.
    pub fn new(cfg: MultiModelConfig, registry: ModelRegistry, options: RunOptions) -> Result<Self, EngineError> {
        let total = options.iterations()?;
        let report = validate_config_with(&cfg, &registry, &|_| None);
        if !report.is_runnable() {
            return Err(EngineError::Invalid(report.diagnostics));
        }
        let instances = cfg.instances();
        let mut diagnostics: Vec<Diagnostic> = report
            .diagnostics
            .into_iter()
            .filter(|d| d.severity != Severity::Note)
            .collect();
        for r in &options.fault_rules {
            if !instances.contains_key(&r.instance) {
                diagnostics.push(Diagnostic::warning(format!(
                    "fault rule targets {} which is not in the initial configuration",
                    r.instance
                )));
            }
        }
        let mut sim = Simulation {
            logged: logged_ports(&cfg, &registry, &options.fault_rules),
            routes: routes_for(&cfg),
            swaps: swaps_for(&cfg),
            keys: instances.clone(),
            registry,
            options,
            total,
            config: cfg,
            units: BTreeMap::new(),
            local_steps: BTreeMap::new(),
            scope: Scope::new(),
            seen_inputs: BTreeMap::new(),
            swapped_out: BTreeSet::new(),
            iteration: 0,
            generation: 0,
            transfers: Vec::new(),
            swap_fired: BTreeMap::new(),
            diagnostics,
        };
        sim.initialize_fresh(&instances.into_keys().collect(), &BTreeSet::new())?;
        Ok(sim)
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn total_iterations(&self) -> u64 {
        self.total
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.total
    }

    pub fn global_time(&self) -> f64 {
        self.options.start + self.iteration as f64 * self.options.step_size
    }

    pub fn generation(&self) -> u32 {
        self.generation
    }

    pub fn config(&self) -> &MultiModelConfig {
        &self.config
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    /// Unit-local time of each swap instance.
    pub fn offsets(&self) -> BTreeMap<String, f64> {
        self.local_steps
            .iter()
            .map(|(n, &k)| (n.clone(), k as f64 * self.options.step_size))
            .collect()
    }

    /// Step and swap latch of each swap target.
    pub fn latches(&self) -> BTreeMap<String, (bool, bool)> {
        self.swaps
            .iter()
            .map(|(t, s)| (t.clone(), (s.step.is_latched(), s.swap.is_latched())))
            .collect()
    }

    pub fn swapped_out(&self) -> &BTreeSet<String> {
        &self.swapped_out
    }

    pub fn instance_names(&self) -> impl Iterator<Item = &str> {
        self.units.keys().map(String::as_str)
    }

    pub fn transfers(&self) -> &[TransferEvent] {
        &self.transfers
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    pub fn columns(&self) -> Vec<String> {
        log_columns(&self.config, &self.registry, &self.options.fault_rules)
    }

    fn unit_err(&self) -> impl Fn(UnitError) -> EngineError {
        let time = self.global_time();
        move |source| EngineError::Unit { time, source }
    }

    fn target_of(&self, instance: &str) -> Option<&str> {
        self.swaps
            .iter()
            .find(|(_, s)| s.entry.swap_instance == instance)
            .map(|(t, _)| t.as_str())
    }

    fn gate_open(&self, gate: &Gate) -> bool {
        match gate {
            Gate::Always => true,
            Gate::UntilSwapped(t) => !self.swaps.get(t).is_some_and(|s| s.swap.is_latched()),
            Gate::OnceSwapped(t) => self.swaps.get(t).is_some_and(|s| s.swap.is_latched()),
        }
    }

    fn steps_now(&self, instance: &str) -> bool {
        if self.swapped_out.contains(instance) {
            return false;
        }
        if self.swaps.get(instance).is_some_and(|s| s.swap.is_latched()) {
            return false;
        }
        match self.target_of(instance) {
            Some(t) => self.swaps[t].step.is_latched(),
            None => true,
        }
    }

    /// The value of the single active writer of `sink`, if any.
    fn routed_value(&self, sink: &PortId) -> Result<Option<Value>, EngineError> {
        let Some(writers) = self.routes.get(sink) else {
            return Ok(None);
        };
        let active: Vec<&Writer> = writers.iter().filter(|w| self.gate_open(&w.gate)).collect();
        let time = self.global_time();
        match active.as_slice() {
            [] => Ok(None),
            [w] => match self.scope.get(&w.source.scope_key()) {
                Some(v) => Ok(Some(v.clone())),
                None => Err(EngineError::MissingValue {
                    time,
                    source_port: w.source.to_string(),
                    sink: sink.to_string(),
                }),
            },
            many => Err(EngineError::MultipleWriters {
                time,
                sink: sink.to_string(),
                count: many.len(),
            }),
        }
    }

    fn set_input(&mut self, sink: &PortId, value: Value) -> Result<(), EngineError> {
        let err = self.unit_err();
        let unit = self.units.get_mut(&sink.instance).expect("routed sink is instantiated");
        let ty = unit
            .description()
            .variable(&sink.variable)
            .map(|v| v.value_type)
            .unwrap_or(value.value_type());
        let value = value.coerce_to(ty).unwrap_or(value);
        unit.set_var(&sink.variable, value).map_err(err)
    }

    fn create_unit(&self, instance: &str, mode: CreateMode) -> Result<Box<dyn SimulationUnit>, EngineError> {
        let key = &self.keys[instance];
        let model = self.config.model_name(key).unwrap_or_default();
        self.create_unit_in(&self.config, instance, model, mode)
    }

    fn create_unit_in(
        &self,
        cfg: &MultiModelConfig,
        instance: &str,
        model: &str,
        mode: CreateMode,
    ) -> Result<Box<dyn SimulationUnit>, EngineError> {
        let err = self.unit_err();
        let mut unit = self
            .registry
            .create_undecorated(model, instance, mode)
            .ok_or_else(|| EngineError::Invalid(vec![Diagnostic::error(format!("unknown model {model}"))]))?;
        let rules: Vec<FaultRule> = self
            .options
            .fault_rules
            .iter()
            .filter(|r| r.instance == instance)
            .cloned()
            .collect();
        if !rules.is_empty() {
            unit = Box::new(FaultInjector::new(unit, rules)?);
        }
        let mut unit = self.registry.decorate(unit);
        for (p, v) in cfg.parameters.iter().filter(|(p, _)| p.instance == instance) {
            let ty = unit
                .description()
                .variable(&p.variable)
                .map(|d| d.value_type)
                .unwrap_or(v.value_type());
            unit.set_var(&p.variable, v.coerce_to(ty).unwrap_or_else(|| v.clone()))
                .map_err(&err)?;
        }
        Ok(unit)
    }

    /// Instantiates and initializes `fresh`, walking the port graph pruned
    /// of edges into `transferred`.
    fn initialize_fresh(
        &mut self,
        fresh: &BTreeSet<String>,
        transferred: &BTreeSet<String>,
    ) -> Result<(), EngineError> {
        let err = self.unit_err();
        for name in fresh {
            let mut unit = self.create_unit(name, CreateMode::Live)?;
            unit.enter_initialization().map_err(&err)?;
            self.units.insert(name.clone(), unit);
        }
        let graph = prune_transfer_edges(&build_port_graph(&self.config, &self.registry), transferred);
        for port in initialization_order(&graph)? {
            if !fresh.contains(&port.instance) {
                continue;
            }
            let unit = &self.units[&port.instance];
            let causality = unit.description().variable(&port.variable).map(|v| v.causality);
            match causality {
                Some(Causality::Output) => {
                    let v = unit.get_var(&port.variable).map_err(&err)?;
                    self.scope.insert(port.scope_key(), v);
                }
                Some(Causality::Input) => {
                    if let Some(v) = self.routed_value(&port)? {
                        self.set_input(&port, v)?;
                    }
                }
                _ => {}
            }
        }
        for name in fresh {
            self.units
                .get_mut(name)
                .expect("created")
                .exit_initialization()
                .map_err(&err)?;
        }
        for name in fresh {
            self.read_outputs(name)?;
            if self.target_of(name).is_some() {
                self.local_steps.insert(name.clone(), 0);
            }
        }
        Ok(())
    }

    fn read_outputs(&mut self, name: &str) -> Result<(), EngineError> {
        let err = self.unit_err();
        let unit = &self.units[name];
        for v in unit.description().outputs() {
            let value = unit.get_var(&v.name).map_err(&err)?;
            self.scope.insert(format!("{name}.{}", v.name), value);
        }
        for p in self.logged.iter().filter(|p| p.instance == name) {
            if unit
                .description()
                .variable(&p.variable)
                .is_some_and(|v| v.causality == Causality::Input)
            {
                self.seen_inputs
                    .insert(p.clone(), unit.get_var(&p.variable).map_err(&err)?);
            }
        }
        Ok(())
    }

    fn update_latches(&mut self) -> Result<(), EngineError> {
        let time = self.global_time();
        let err = self.unit_err();
        let mut fired = Vec::new();
        for (target, state) in &mut self.swaps {
            let cond_err = |source| EngineError::Condition {
                time,
                target: target.clone(),
                source,
            };
            let swap = state.swap.update(&self.scope).map_err(cond_err)?;
            let step = state.step.update(&self.scope).map_err(cond_err)?;
            if swap && !step {
                return Err(EngineError::LatchImplication {
                    time,
                    target: target.clone(),
                });
            }
            if swap && !self.swapped_out.contains(target) {
                fired.push(target.clone());
            }
        }
        for target in fired {
            if let Some(unit) = self.units.get_mut(&target) {
                unit.terminate().map_err(&err)?;
            }
            self.swapped_out.insert(target.clone());
            self.swap_fired.entry(target).or_insert(self.iteration);
        }
        Ok(())
    }

    fn set_inputs(&mut self) -> Result<(), EngineError> {
        let sinks: Vec<PortId> = self.routes.keys().cloned().collect();
        for sink in sinks {
            if !self.steps_now(&sink.instance) {
                continue;
            }
            if let Some(v) = self.routed_value(&sink)? {
                self.set_input(&sink, v)?;
            }
        }
        Ok(())
    }

    fn snapshot(&self) -> StepLog {
        let values = self
            .logged
            .iter()
            .filter_map(|p| {
                let v = self
                    .scope
                    .get(&p.scope_key())
                    .filter(|_| !self.seen_inputs.contains_key(p));
                v.or_else(|| self.seen_inputs.get(p)).map(|v| (p.clone(), v.clone()))
            })
            .collect();
        let latches = self
            .swaps
            .iter()
            .flat_map(|(t, s)| {
                [
                    (step_column(t), s.step.is_latched()),
                    (swap_column(t), s.swap.is_latched()),
                ]
            })
            .collect();
        StepLog {
            iteration: self.iteration,
            time: self.global_time(),
            generation: self.generation,
            values,
            latches,
        }
    }

    /// One master iteration: transfer point, latch update, guarded input
    /// setting, guarded stepping, output collection and time advance.
    pub fn step(&mut self, source: Option<&mut dyn TransferSource>) -> Result<StepLog, EngineError> {
        if let Some(source) = source {
            if let Some(plan) = self.check_transfer_point(&mut *source)? {
                let candidate = plan.source.clone();
                self.apply_transfer(plan)?;
                source.resolve(&candidate, &Outcome::Applied)?;
            }
        }
        self.update_latches()?;
        self.set_inputs()?;

        let time = self.global_time();
        let dt = self.options.step_size;
        let err = self.unit_err();
        let stepping: Vec<String> = self.units.keys().filter(|n| self.steps_now(n)).cloned().collect();
        for name in &stepping {
            let t = match self.local_steps.get(name) {
                Some(&k) => k as f64 * dt,
                None => time,
            };
            self.units.get_mut(name).expect("live").do_step(t, dt).map_err(&err)?;
            if let Some(k) = self.local_steps.get_mut(name) {
                *k += 1;
            }
        }
        for name in &stepping {
            self.read_outputs(name)?;
        }
        self.iteration += 1;
        Ok(self.snapshot())
    }

    /// Offers `source` a transfer point if the iteration is eligible.
    /// Invalid swap specs are rejected through the source and recorded
    /// as diagnostics; they never abort the run.
    pub fn check_transfer_point(&mut self, source: &mut dyn TransferSource) -> Result<Option<SwapPlan>, EngineError> {
        let k = self.iteration;
        if k < self.options.min_steps_before_transfer || !k.is_multiple_of(self.options.check_every_n_steps) {
            return Ok(None);
        }
        let Some(candidate) = source.poll(k)? else {
            return Ok(None);
        };
        let result = match parse_multi_model_with_warnings(&candidate.text) {
            Ok((cfg, warnings)) => self.validate_swap_spec(&candidate, cfg).map(|mut plan| {
                plan.diagnostics.extend(warnings.into_iter().map(Diagnostic::warning));
                plan
            }),
            Err(e) => Err(vec![Diagnostic::error(e.to_string())]),
        };
        match result {
            Ok(plan) => Ok(Some(plan)),
            Err(diags) => {
                let outcome = Outcome::Rejected(diags.clone());
                source.resolve(&candidate, &outcome)?;
                let time = self.global_time();
                self.diagnostics.extend(diags.into_iter().map(|d| Diagnostic {
                    severity: d.severity,
                    message: format!("{} rejected at t={time}: {}", candidate.name, d.message),
                }));
                self.transfers.push(TransferEvent {
                    iteration: k,
                    time,
                    name: candidate.name,
                    outcome,
                });
                Ok(None)
            }
        }
    }

    /// Checks a new configuration against the live context without
    /// touching it. Fresh units are dry-run in isolation.
    pub fn validate_swap_spec(
        &self,
        candidate: &Candidate,
        cfg: MultiModelConfig,
    ) -> Result<SwapPlan, Vec<Diagnostic>> {
        let scope_type = |v: &crate::condition::VarRef| self.scope.get(&v.key()).map(|x| x.value_type());
        let mut diags = validate_config_with(&cfg, &self.registry, &scope_type).diagnostics;
        let instances = cfg.instances();
        let mut targets = BTreeSet::new();
        for (old, new) in &cfg.model_transfers {
            let Some(unit) = self.units.get(old) else {
                diags.push(Diagnostic::error(format!("unknown transfer instance {old}")));
                continue;
            };
            if self.swapped_out.contains(old) {
                diags.push(Diagnostic::error(format!("transfer instance {old} is swapped out")));
            }
            if !targets.insert(new.clone()) {
                diags.push(Diagnostic::error(format!(
                    "more than one instance transferred to {new}"
                )));
            }
            if let Some(model) = cfg.instance_model(new) {
                let live = &unit.description().model_name;
                if model != live {
                    diags.push(Diagnostic::error(format!(
                        "transfer {old} -> {new}: model {model} differs from running model {live}"
                    )));
                }
            }
        }
        let fresh: BTreeSet<String> = instances.keys().filter(|n| !targets.contains(*n)).cloned().collect();
        let graph = prune_transfer_edges(&build_port_graph(&cfg, &self.registry), &targets);
        if let Err(e) = initialization_order(&graph) {
            diags.push(Diagnostic::error(e.to_string()));
        }
        if diags.iter().all(|d| d.severity != Severity::Error) {
            for name in &fresh {
                let model = cfg.instance_model(name).unwrap_or_default();
                if let Err(e) = self.dry_run(&cfg, name, model) {
                    diags.push(Diagnostic::error(format!("dry run of {name}: {e}")));
                }
            }
        }
        if diags.iter().any(|d| d.severity == Severity::Error) {
            return Err(diags);
        }
        Ok(SwapPlan {
            source: candidate.clone(),
            transfers: cfg.model_transfers.clone(),
            new_config: cfg,
            fresh,
            diagnostics: diags,
        })
    }

    fn dry_run(&self, cfg: &MultiModelConfig, name: &str, model: &str) -> Result<(), EngineError> {
        let err = self.unit_err();
        let mut unit = self.create_unit_in(cfg, name, model, CreateMode::DryRun)?;
        unit.enter_initialization().map_err(&err)?;
        unit.exit_initialization().map_err(&err)?;
        Ok(())
    }

    /// Switches to the plan's configuration. Transferred units move in with
    /// their state, other live units are terminated, fresh units are
    /// initialized from the last-known values in scope.
    pub fn apply_transfer(&mut self, plan: SwapPlan) -> Result<(), EngineError> {
        let err = self.unit_err();
        let old_units = std::mem::take(&mut self.units);
        for (name, mut unit) in old_units {
            match plan.transfers.get(&name) {
                Some(new) => {
                    self.units.insert(new.clone(), unit);
                }
                None if !self.swapped_out.contains(&name) => unit.terminate().map_err(&err)?,
                None => {}
            }
        }

        let renames: Vec<(&String, &String)> = plan.transfers.iter().filter(|(o, n)| o != n).collect();
        let mut moved = Vec::new();
        for (old, new) in &renames {
            let prefix = format!("{old}.");
            let keys: Vec<String> = self.scope.keys().filter(|k| k.starts_with(&prefix)).cloned().collect();
            for k in keys {
                let v = self.scope.remove(&k).expect("present");
                moved.push((format!("{new}.{}", &k[prefix.len()..]), v));
            }
        }
        self.scope.extend(moved);
        self.local_steps = std::mem::take(&mut self.local_steps)
            .into_iter()
            .filter_map(|(n, k)| plan.transfers.get(&n).map(|new| (new.clone(), k)))
            .collect();
        self.seen_inputs.clear();
        self.swapped_out.clear();

        self.config = plan.new_config;
        self.keys = self.config.instances();
        self.routes = routes_for(&self.config);
        self.swaps = swaps_for(&self.config);
        self.logged = logged_ports(&self.config, &self.registry, &self.options.fault_rules);
        self.generation += 1;
        let transferred: BTreeSet<String> = plan.transfers.values().cloned().collect();
        self.initialize_fresh(&plan.fresh, &transferred)?;
        self.transfers.push(TransferEvent {
            iteration: self.iteration,
            time: self.global_time(),
            name: plan.source.name,
            outcome: Outcome::Applied,
        });
        Ok(())
    }

    pub fn result(&self) -> SimulationResult {
        SimulationResult {
            iterations: self.iteration,
            end_time: self.global_time(),
            transfers: self.transfers.clone(),
            swaps: self.swap_fired.clone(),
            diagnostics: self.diagnostics.clone(),
        }
    }

    /// Runs the remaining iterations, recording each step.
    pub fn run(
        &mut self,
        mut source: Option<&mut dyn TransferSource>,
        sink: &mut dyn StepSink,
    ) -> Result<SimulationResult, EngineError> {
        while !self.is_finished() {
            let src: Option<&mut dyn TransferSource> = match source {
                Some(ref mut s) => Some(&mut **s),
                None => None,
            };
            let log = self.step(src)?;
            sink.record(&log)?;
        }
        Ok(self.result())
    }
}

pub fn run_simulation(
    cfg: MultiModelConfig,
    registry: ModelRegistry,
    options: RunOptions,
    source: Option<&mut dyn TransferSource>,
    sink: &mut dyn StepSink,
) -> Result<SimulationResult, EngineError> {
    Simulation::new(cfg, registry, options)?.run(source, sink)
}
