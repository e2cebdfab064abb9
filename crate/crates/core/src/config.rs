//! Multi-model configuration: parsing, serialization and static checks.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition::{parse_condition, ConditionError, ConditionExpr, VarRef};
use crate::units::{Causality, ModelDescription, ModelRegistry};
use crate::value::{Value, ValueType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PortIdError {
    #[error("missing instance key braces")]
    MissingBraces,
    #[error("expected instance and variable after the key, found {0} component(s)")]
    ComponentCount(usize),
    #[error("empty component")]
    EmptyComponent,
    #[error("invalid identifier {0:?}")]
    InvalidIdentifier(String),
}

/// A port reference of the form `{key}.instance.variable`.
///
/// Ordering follows the serialized form, which is also the CSV column order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PortId {
    pub key: String,
    pub instance: String,
    pub variable: String,
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl PortId {
    pub fn new(key: &str, instance: &str, variable: &str) -> Self {
        PortId {
            key: key.to_string(),
            instance: instance.to_string(),
            variable: variable.to_string(),
        }
    }

    pub fn var_ref(&self) -> VarRef {
        VarRef::new(self.instance.clone(), self.variable.clone())
    }

    /// The `instance.variable` scope key.
    pub fn scope_key(&self) -> String {
        format!("{}.{}", self.instance, self.variable)
    }
}

impl FromStr for PortId {
    type Err = PortIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rest = s.strip_prefix('{').ok_or(PortIdError::MissingBraces)?;
        let close = rest.find('}').ok_or(PortIdError::MissingBraces)?;
        let key = &rest[..close];
        let tail = &rest[close + 1..];
        if key.is_empty() {
            return Err(PortIdError::EmptyComponent);
        }
        if key.contains('{') {
            return Err(PortIdError::InvalidIdentifier(key.to_string()));
        }
        let tail = tail.strip_prefix('.').ok_or(PortIdError::ComponentCount(0))?;
        let parts: Vec<&str> = tail.split('.').collect();
        if parts.len() != 2 {
            return Err(PortIdError::ComponentCount(parts.len()));
        }
        for part in &parts {
            if part.is_empty() {
                return Err(PortIdError::EmptyComponent);
            }
            if !is_identifier(part) {
                return Err(PortIdError::InvalidIdentifier(part.to_string()));
            }
        }
        Ok(PortId::new(key, parts[0], parts[1]))
    }
}

impl fmt::Display for PortId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}.{}.{}", self.key, self.instance, self.variable)
    }
}

impl Ord for PortId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.to_string().cmp(&other.to_string())
    }
}

impl PartialOrd for PortId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn parse_port_id(s: &str) -> Result<PortId, PortIdError> {
    s.parse()
}

pub type Wiring = BTreeMap<PortId, Vec<PortId>>;

#[derive(Debug, Clone, PartialEq)]
pub struct SwapEntry {
    pub swap_instance: String,
    pub step_condition: String,
    pub swap_condition: String,
    pub swap_connections: Wiring,
}

impl SwapEntry {
    pub fn step_expr(&self) -> ConditionExpr {
        parse_condition(&self.step_condition).expect("checked at parse time")
    }

    pub fn swap_expr(&self) -> ConditionExpr {
        parse_condition(&self.swap_condition).expect("checked at parse time")
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MultiModelConfig {
    /// Instance key (without braces) to model archive name.
    pub units: BTreeMap<String, String>,
    pub connections: Wiring,
    pub parameters: BTreeMap<PortId, Value>,
    /// Replaced instance name to its swap entry.
    pub model_swaps: BTreeMap<String, SwapEntry>,
    /// Old instance name to new instance name.
    pub model_transfers: BTreeMap<String, String>,
}

/// Maps an archive name such as `dir/tank.fmu` to the model name `tank`.
pub fn model_name_of(archive: &str) -> &str {
    let base = archive.rsplit(['/', '\\']).next().unwrap_or(archive);
    base.strip_suffix(".fmu").unwrap_or(base)
}

impl MultiModelConfig {
    pub fn model_name(&self, key: &str) -> Option<&str> {
        self.units.get(key).map(|a| model_name_of(a))
    }

    /// Every port mentioned anywhere in the config.
    pub fn ports(&self) -> impl Iterator<Item = &PortId> {
        let mut all: Vec<&PortId> = wiring_ports(&self.connections).collect();
        for entry in self.model_swaps.values() {
            all.extend(wiring_ports(&entry.swap_connections));
        }
        all.extend(self.parameters.keys());
        all.into_iter()
    }

    /// Instance name to instance key, for every instance named by a port.
    pub fn instances(&self) -> BTreeMap<String, String> {
        self.ports().map(|p| (p.instance.clone(), p.key.clone())).collect()
    }

    pub fn instance_model(&self, instance: &str) -> Option<&str> {
        let key = self.ports().find(|p| p.instance == instance)?.key.clone();
        self.model_name(&key)
    }

    pub fn swap_instances(&self) -> BTreeSet<&str> {
        self.model_swaps.values().map(|e| e.swap_instance.as_str()).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let raw = RawConfig {
            fmus: self
                .units
                .iter()
                .map(|(k, v)| (format!("{{{k}}}"), v.clone()))
                .collect(),
            connections: wiring_to_raw(&self.connections),
            parameters: self
                .parameters
                .iter()
                .map(|(p, v)| (p.to_string(), v.to_json()))
                .collect(),
            model_swaps: self
                .model_swaps
                .iter()
                .map(|(k, e)| {
                    let raw = RawSwap {
                        swap_instance: e.swap_instance.clone(),
                        step_condition: e.step_condition.clone(),
                        swap_condition: e.swap_condition.clone(),
                        swap_connections: wiring_to_raw(&e.swap_connections),
                        extra: BTreeMap::new(),
                    };
                    (k.clone(), raw)
                })
                .collect(),
            model_transfers: self.model_transfers.clone(),
            extra: BTreeMap::new(),
        };
        serde_json::to_value(raw).expect("config serializes")
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("config serializes")
    }
}

fn wiring_ports(w: &Wiring) -> impl Iterator<Item = &PortId> {
    w.iter().flat_map(|(s, sinks)| std::iter::once(s).chain(sinks.iter()))
}

fn wiring_to_raw(w: &Wiring) -> BTreeMap<String, Vec<String>> {
    w.iter()
        .map(|(s, sinks)| (s.to_string(), sinks.iter().map(|p| p.to_string()).collect()))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct RawConfig {
    #[serde(default)]
    fmus: BTreeMap<String, String>,
    #[serde(default)]
    connections: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    parameters: BTreeMap<String, serde_json::Value>,
    #[serde(default, rename = "modelSwaps", skip_serializing_if = "BTreeMap::is_empty")]
    model_swaps: BTreeMap<String, RawSwap>,
    #[serde(default, rename = "modelTransfers", skip_serializing_if = "BTreeMap::is_empty")]
    model_transfers: BTreeMap<String, String>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct RawSwap {
    #[serde(rename = "swapInstance")]
    swap_instance: String,
    #[serde(rename = "stepCondition")]
    step_condition: String,
    #[serde(rename = "swapCondition")]
    swap_condition: String,
    #[serde(default, rename = "swapConnections")]
    swap_connections: BTreeMap<String, Vec<String>>,
    #[serde(flatten)]
    extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("malformed port {text:?}: {source}")]
    Port { text: String, source: PortIdError },
    #[error("malformed instance key {0:?}")]
    Key(String),
    #[error("unknown instance key {{{0}}}")]
    UnknownInstanceKey(String),
    #[error("duplicate sink {0}")]
    DuplicateSink(PortId),
    #[error("instance {instance} used with keys {{{first}}} and {{{second}}}")]
    InstanceKeyConflict {
        instance: String,
        first: String,
        second: String,
    },
    #[error("parameter {port}: unsupported value {value}")]
    ParameterValue { port: PortId, value: String },
    #[error("{which} of swap {target}: {source}")]
    Condition {
        target: String,
        which: &'static str,
        source: ConditionError,
    },
    #[error("swap instance {0} is not declared")]
    UnknownSwapInstance(String),
    #[error("{0} is both a swap instance and a transfer source")]
    SwapInstanceTransferred(String),
}

fn port(text: &str) -> Result<PortId, ConfigError> {
    text.parse().map_err(|source| ConfigError::Port {
        text: text.to_string(),
        source,
    })
}

fn key(text: &str) -> Result<String, ConfigError> {
    text.strip_prefix('{')
        .and_then(|t| t.strip_suffix('}'))
        .filter(|k| !k.is_empty() && !k.contains(['{', '}']))
        .map(str::to_string)
        .ok_or_else(|| ConfigError::Key(text.to_string()))
}

fn wiring(raw: &BTreeMap<String, Vec<String>>) -> Result<Wiring, ConfigError> {
    let mut out = Wiring::new();
    let mut sinks = BTreeSet::new();
    for (src, raw_sinks) in raw {
        let mut list = Vec::new();
        for s in raw_sinks {
            let p = port(s)?;
            if !sinks.insert(p.clone()) {
                return Err(ConfigError::DuplicateSink(p));
            }
            list.push(p);
        }
        out.insert(port(src)?, list);
    }
    Ok(out)
}

/// Parses a multi-model document. Unknown top-level keys are returned as
/// warnings.
pub fn parse_multi_model_with_warnings(text: &str) -> Result<(MultiModelConfig, Vec<String>), ConfigError> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut warnings: Vec<String> = raw
        .extra
        .keys()
        .map(|k| format!("unknown top-level key {k:?}"))
        .collect();

    let mut units = BTreeMap::new();
    for (k, archive) in &raw.fmus {
        units.insert(key(k)?, archive.clone());
    }
    let connections = wiring(&raw.connections)?;
    let mut parameters = BTreeMap::new();
    for (p, v) in &raw.parameters {
        let p = port(p)?;
        let value = Value::from_json(v).ok_or_else(|| ConfigError::ParameterValue {
            port: p.clone(),
            value: v.to_string(),
        })?;
        parameters.insert(p, value);
    }
    let mut model_swaps = BTreeMap::new();
    for (target, s) in &raw.model_swaps {
        warnings.extend(s.extra.keys().map(|k| format!("unknown key {k:?} in swap {target}")));
        for (which, text) in [
            ("stepCondition", &s.step_condition),
            ("swapCondition", &s.swap_condition),
        ] {
            parse_condition(text).map_err(|source| ConfigError::Condition {
                target: target.clone(),
                which,
                source,
            })?;
        }
        model_swaps.insert(
            target.clone(),
            SwapEntry {
                swap_instance: s.swap_instance.clone(),
                step_condition: s.step_condition.clone(),
                swap_condition: s.swap_condition.clone(),
                swap_connections: wiring(&s.swap_connections)?,
            },
        );
    }
    let cfg = MultiModelConfig {
        units,
        connections,
        parameters,
        model_swaps,
        model_transfers: raw.model_transfers,
    };

    let mut names: BTreeMap<&str, &str> = BTreeMap::new();
    for p in cfg.ports() {
        if !cfg.units.contains_key(&p.key) {
            return Err(ConfigError::UnknownInstanceKey(p.key.clone()));
        }
        if let Some(first) = names.insert(&p.instance, &p.key) {
            if first != p.key {
                return Err(ConfigError::InstanceKeyConflict {
                    instance: p.instance.clone(),
                    first: first.to_string(),
                    second: p.key.clone(),
                });
            }
        }
    }
    for entry in cfg.model_swaps.values() {
        if !names.contains_key(entry.swap_instance.as_str()) {
            return Err(ConfigError::UnknownSwapInstance(entry.swap_instance.clone()));
        }
        if cfg.model_transfers.contains_key(&entry.swap_instance) {
            return Err(ConfigError::SwapInstanceTransferred(entry.swap_instance.clone()));
        }
    }
    Ok((cfg, warnings))
}

pub fn parse_multi_model(text: &str) -> Result<MultiModelConfig, ConfigError> {
    parse_multi_model_with_warnings(text).map(|(cfg, _)| cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Note,
    Warning,
    Error,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Note => "note",
            Severity::Warning => "warning",
            Severity::Error => "error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    pub fn error(message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            message: message.into(),
        }
    }

    pub fn warning(message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            message: message.into(),
        }
    }

    pub fn note(message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Note,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.severity, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidationReport {
    pub fn is_runnable(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics.iter().filter(|d| d.severity == Severity::Error)
    }

    fn push(&mut self, d: Diagnostic) {
        self.diagnostics.push(d);
    }
}

/// Resolves instance names to model descriptions through the registry.
pub(crate) struct Resolver<'a> {
    cfg: &'a MultiModelConfig,
    registry: &'a ModelRegistry,
    instances: BTreeMap<String, String>,
}

impl<'a> Resolver<'a> {
    pub(crate) fn new(cfg: &'a MultiModelConfig, registry: &'a ModelRegistry) -> Self {
        Resolver {
            cfg,
            registry,
            instances: cfg.instances(),
        }
    }

    pub(crate) fn description(&self, instance: &str) -> Option<&'a ModelDescription> {
        let key = self.instances.get(instance)?;
        self.registry.description(self.cfg.model_name(key)?)
    }

    pub(crate) fn var_type(&self, v: &VarRef) -> Option<ValueType> {
        self.description(&v.instance)?
            .variable(&v.variable)
            .map(|d| d.value_type)
    }
}

/// Static checks of a parsed config against the model registry.
pub fn validate_config(cfg: &MultiModelConfig, registry: &ModelRegistry) -> ValidationReport {
    validate_config_with(cfg, registry, &|_| None)
}

/// As [`validate_config`], with `extra` supplying types for condition
/// variables that are bound outside the config.
pub(crate) fn validate_config_with(
    cfg: &MultiModelConfig,
    registry: &ModelRegistry,
    extra: &dyn Fn(&VarRef) -> Option<ValueType>,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    let resolver = Resolver::new(cfg, registry);
    let instances = cfg.instances();

    for (key, archive) in &cfg.units {
        let model = model_name_of(archive);
        if !registry.contains(model) {
            report.push(Diagnostic::error(format!("unknown model {model}")));
        }
        if !instances.values().any(|k| k == key) {
            report.push(Diagnostic::warning(format!(
                "unit {{{key}}} has no instance: no port refers to it"
            )));
        }
    }

    let known_model = |p: &PortId| cfg.model_name(&p.key).is_some_and(|m| registry.contains(m));
    let check_var = |report: &mut ValidationReport, p: &PortId, want: Causality| -> Option<ValueType> {
        if !known_model(p) {
            return None;
        }
        match resolver.description(&p.instance).and_then(|d| d.variable(&p.variable)) {
            None => {
                report.push(Diagnostic::error(format!("unknown variable {}", p.scope_key())));
                None
            }
            Some(v) if v.causality != want => {
                report.push(Diagnostic::error(format!(
                    "{p} is a {} variable, expected {want}",
                    v.causality
                )));
                None
            }
            Some(v) => Some(v.value_type),
        }
    };
    let check_wiring = |report: &mut ValidationReport, w: &Wiring| {
        for (src, sinks) in w {
            let src_ty = check_var(report, src, Causality::Output);
            for sink in sinks {
                let sink_ty = check_var(report, sink, Causality::Input);
                if let (Some(a), Some(b)) = (src_ty, sink_ty) {
                    if a != b && !(a == ValueType::Integer && b == ValueType::Real) {
                        report.push(Diagnostic::error(format!("type mismatch: {src} is {a}, {sink} is {b}")));
                    }
                }
            }
        }
    };
    check_wiring(&mut report, &cfg.connections);
    for entry in cfg.model_swaps.values() {
        check_wiring(&mut report, &entry.swap_connections);
    }

    let transferred: BTreeSet<&str> = cfg.model_transfers.values().map(String::as_str).collect();
    for (p, value) in &cfg.parameters {
        if transferred.contains(p.instance.as_str()) {
            report.push(Diagnostic::note(format!(
                "parameter {p} ignored: {} is transferred with its state",
                p.instance
            )));
            continue;
        }
        if let Some(ty) = check_var(&mut report, p, Causality::Parameter) {
            if value.coerce_to(ty).is_none() {
                report.push(Diagnostic::error(format!(
                    "type mismatch for parameter {p}: expected {ty}, got {}",
                    value.value_type()
                )));
            }
        }
    }

    for (target, entry) in &cfg.model_swaps {
        if !instances.contains_key(target) {
            report.push(Diagnostic::error(format!("unknown swap target {target}")));
        }
        for text in [&entry.step_condition, &entry.swap_condition] {
            for d in condition_diagnostics(text, &|v| resolver.var_type(v).or_else(|| extra(v))) {
                report.push(d);
            }
        }
        let trivial = |t: &str| t.trim() == "(true)";
        if entry.step_condition.trim() != entry.swap_condition.trim()
            && !trivial(&entry.step_condition)
            && !trivial(&entry.swap_condition)
        {
            report.push(Diagnostic::note(format!(
                "swap {target}: swapCondition is assumed to imply stepCondition; this is checked at run time"
            )));
        }
    }

    for new in cfg.model_transfers.values() {
        if !instances.contains_key(new) {
            report.push(Diagnostic::error(format!("unknown transfer target {new}")));
        }
    }
    report
}

/// Variable and type diagnostics for one condition text.
pub(crate) fn condition_diagnostics(text: &str, types: &dyn Fn(&VarRef) -> Option<ValueType>) -> Vec<Diagnostic> {
    let expr = match parse_condition(text) {
        Ok(e) => e,
        Err(e) => return vec![Diagnostic::error(format!("condition {text:?}: {e}"))],
    };
    let unbound: Vec<Diagnostic> = expr
        .variables()
        .into_iter()
        .filter(|v| types(v).is_none())
        .map(|v| Diagnostic::error(format!("unbound variable {v}")))
        .collect();
    if !unbound.is_empty() {
        return unbound;
    }
    match expr.check_types(types) {
        Ok(()) => Vec::new(),
        Err(e) => vec![Diagnostic::error(format!("condition {text:?}: {e}"))],
    }
}
