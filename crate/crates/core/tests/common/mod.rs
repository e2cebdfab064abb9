//! Helpers shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::json;

use swapsim::condition::{evaluate, parse_condition, LatchedCondition, Scope};
use swapsim::config::{SwapEntry, Wiring};
use swapsim::engine::{StepLog, StepSink};
use swapsim::graph::{initialization_order, DependencyGraph};
use swapsim::log::CsvLog;
use swapsim::scenarios::WATERTANK;
use swapsim::scenarios::{Scenario, ScenarioName};
use swapsim::transfer::ScriptedTransfers;
use swapsim::units::{CallKind, CallLog, CallRecord, CreateMode, Instrumented, ModelRegistry, SimulationUnit};
use swapsim::{parse_multi_model, MultiModelConfig, PortId, RunOptions, Simulation, Value};

// ---------------------------------------------------------------------------
// Brute-force Jacobi oracle for swap-free configurations.

fn render(v: &Value) -> String {
    match v {
        Value::Real(r) => format!("{r:.9}"),
        Value::Integer(i) => i.to_string(),
        Value::Boolean(b) => (if *b { "1" } else { "0" }).to_string(),
        Value::String(s) => s.clone(),
    }
}

/// Runs `cfg` for `steps` steps of `dt` from `start` the naive way: every
/// unit is stepped every step, every connected input is set from the
/// outputs of the previous step. Returns the CSV text.
pub fn oracle_csv(cfg: &MultiModelConfig, registry: &ModelRegistry, start: f64, dt: f64, steps: u64) -> String {
    let mut units: BTreeMap<String, (String, Box<dyn SimulationUnit>)> = BTreeMap::new();
    for (name, key) in cfg.instances() {
        let model = cfg.model_name(&key).unwrap();
        let mut u = registry.create(model, &name, CreateMode::Live).unwrap();
        for (p, v) in cfg.parameters.iter().filter(|(p, _)| p.instance == name) {
            let ty = u.description().variable(&p.variable).unwrap().value_type;
            u.set_var(&p.variable, v.coerce_to(ty).unwrap()).unwrap();
        }
        u.enter_initialization().unwrap();
        units.insert(name, (key, u));
    }
    let wires: Vec<(String, String, String, String)> = cfg
        .connections
        .iter()
        .flat_map(|(src, sinks)| {
            sinks.iter().map(|s| {
                (
                    src.instance.clone(),
                    src.variable.clone(),
                    s.instance.clone(),
                    s.variable.clone(),
                )
            })
        })
        .collect();
    let copy = |units: &mut BTreeMap<String, (String, Box<dyn SimulationUnit>)>| {
        let values: Vec<Value> = wires
            .iter()
            .map(|(si, sv, _, _)| units[si].1.get_var(sv).unwrap())
            .collect();
        for ((_, _, ti, tv), v) in wires.iter().zip(values) {
            units.get_mut(ti).unwrap().1.set_var(tv, v).unwrap();
        }
    };
    // Outputs are start values until initialization ends, so one pass
    // reaches the fixed point.
    copy(&mut units);
    for (_, u) in units.values_mut() {
        u.exit_initialization().unwrap();
    }

    let mut header: Vec<String> = Vec::new();
    for (name, (key, u)) in &units {
        for v in u.description().outputs() {
            header.push(format!("{{{key}}}.{name}.{}", v.name));
        }
    }
    header.sort();
    let mut out = String::from("time");
    for h in &header {
        write!(out, ",{h}").unwrap();
    }
    out.push('\n');
    for k in 0..steps {
        copy(&mut units);
        for (_, u) in units.values_mut() {
            u.do_step(start + k as f64 * dt, dt).unwrap();
        }
        write!(out, "{:.9}", start + (k + 1) as f64 * dt).unwrap();
        for h in &header {
            let mut parts = h.splitn(3, '.');
            let (_, inst, var) = (parts.next(), parts.next().unwrap(), parts.next().unwrap());
            write!(out, ",{}", render(&units[inst].1.get_var(var).unwrap())).unwrap();
        }
        out.push('\n');
    }
    out
}

/// `(model, inputs, outputs)`; outputs carry their direct-feedthrough flag.
type Shape = (
    &'static str,
    &'static [(&'static str, char)],
    &'static [(&'static str, char, bool)],
);

const LIBRARY: [Shape; 6] = [
    (
        "singlewatertank-20sim",
        &[("valvecontrol", 'r')],
        &[("level", 'r', false)],
    ),
    ("watertankcontroller-c", &[("level", 'r')], &[("valve", 'r', true)]),
    (
        "leak_detector",
        &[("valve", 'r'), ("level", 'r')],
        &[("leak", 'b', false)],
    ),
    (
        "leak_controller",
        &[("level", 'r'), ("leak", 'b')],
        &[("valve", 'r', true)],
    ),
    ("sine_source", &[], &[("angle", 'r', false)]),
    ("actuation", &[("angle", 'r')], &[("steering", 'r', true)]),
];

fn params(model: &str, rng: &mut StdRng) -> Vec<(&'static str, serde_json::Value)> {
    let mut r = |lo: f64, hi: f64| json!((rng.gen_range(lo..hi) * 1000.0).round() / 1000.0);
    match model {
        "singlewatertank-20sim" => vec![
            ("inflow", r(0.05, 0.2)),
            ("outflow", r(0.2, 0.4)),
            ("initialLevel", r(0.5, 2.0)),
        ],
        "watertankcontroller-c" => vec![("minLevel", r(0.5, 1.2)), ("maxLevel", r(1.5, 2.5))],
        "leak_detector" => vec![("consecutiveSteps", json!(rng.gen_range(1..5)))],
        "leak_controller" => vec![
            ("minLevel", r(0.5, 1.0)),
            ("maxLevel", r(1.8, 2.5)),
            ("leakDelta", r(0.2, 0.6)),
        ],
        "sine_source" => vec![
            ("amplitude", r(0.5, 2.0)),
            ("period", r(0.5, 5.0)),
            ("phase", r(0.0, 3.0)),
        ],
        _ => vec![],
    }
}

/// A random swap-free configuration of 2 to 5 builtin units. Feedthrough
/// outputs only feed higher-numbered units, so the wiring is acyclic.
pub fn random_config(seed: u64) -> String {
    let mut rng = StdRng::seed_from_u64(seed);
    let n = rng.gen_range(2..=5);
    let shapes: Vec<Shape> = (0..n).map(|_| LIBRARY[rng.gen_range(0..LIBRARY.len())]).collect();
    let mut fmus = serde_json::Map::new();
    let mut connections: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut parameters = serde_json::Map::new();
    for (j, (model, inputs, _)) in shapes.iter().enumerate() {
        fmus.insert(format!("{{k{j}}}"), json!(format!("{model}.fmu")));
        for (input, ty) in inputs.iter() {
            let candidates: Vec<String> = shapes
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != j)
                .flat_map(|(i, (_, _, outs))| {
                    outs.iter()
                        .filter(move |(_, oty, ft)| oty == ty && (!ft || i < j))
                        .map(move |(o, _, _)| format!("{{k{i}}}.u{i}.{o}"))
                })
                .collect();
            if !candidates.is_empty() && rng.gen_bool(0.8) {
                let src = candidates[rng.gen_range(0..candidates.len())].clone();
                connections
                    .entry(src)
                    .or_default()
                    .push(format!("{{k{j}}}.u{j}.{input}"));
            }
        }
        for (p, v) in params(model, &mut rng) {
            parameters.insert(format!("{{k{j}}}.u{j}.{p}"), v);
        }
    }
    json!({"fmus": fmus, "connections": connections, "parameters": parameters}).to_string()
}

/// Engine CSV for a swap-free run.
pub fn engine_csv(cfg: &MultiModelConfig, registry: ModelRegistry, options: RunOptions) -> String {
    let mut sim = Simulation::new(cfg.clone(), registry, options).unwrap();
    let mut log = CsvLog::new(Vec::new(), &sim.columns()).unwrap();
    sim.run(None, &mut log).unwrap();
    String::from_utf8(log.into_inner().unwrap()).unwrap()
}

/// Engine and oracle CSVs for the random config of `seed`.
pub fn oracle_pair(seed: u64) -> (String, String) {
    let text = random_config(seed);
    let cfg = parse_multi_model(&text).unwrap_or_else(|e| panic!("{e}: {text}"));
    let mut rng = StdRng::seed_from_u64(seed ^ 0x5eed);
    let dt = [0.05, 0.1, 0.25][rng.gen_range(0..3)];
    let steps = rng.gen_range(1..=60u64);
    let start = rng.gen_range(0..5) as f64;
    let end = start + steps as f64 * dt;
    let registry = ModelRegistry::builtin(None);
    let oracle = oracle_csv(&cfg, &registry, start, dt, steps);
    let engine = engine_csv(&cfg, registry, RunOptions::new(start, end, dt));
    (engine, oracle)
}

// ---------------------------------------------------------------------------
// Latch monotonicity.

/// Checks that the latch equals the running OR of the raw condition.
pub fn check_latch_sequence(text: &str, scopes: &[Scope]) -> Result<(), String> {
    let expr = parse_condition(text).map_err(|e| e.to_string())?;
    let mut latch = LatchedCondition::new(expr.clone());
    let mut any = false;
    let mut prev = false;
    for (i, scope) in scopes.iter().enumerate() {
        any |= evaluate(&expr, scope).map_err(|e| e.to_string())?;
        let now = latch.update(scope).map_err(|e| e.to_string())?;
        if now != any || (prev && !now) || now != latch.is_latched() {
            return Err(format!("{text}: step {i} latch {now}, expected {any}"));
        }
        prev = now;
    }
    Ok(())
}

pub fn condition_text(rng: &mut StdRng, depth: u32) -> String {
    if depth == 0 || rng.gen_bool(0.3) {
        return match rng.gen_range(0..4) {
            0 => format!(
                "(a.x {} {})",
                ["<", "<=", ">", ">=", "==", "!="][rng.gen_range(0..6)],
                rng.gen_range(-3..4)
            ),
            1 => "(b.ok)".to_string(),
            2 => format!("(a.x + {} > b.y)", rng.gen_range(-2..3)),
            _ => ["(true)", "(false)"][rng.gen_range(0..2)].to_string(),
        };
    }
    let l = condition_text(rng, depth - 1);
    let r = condition_text(rng, depth - 1);
    match rng.gen_range(0..3) {
        0 => format!("({l} && {r})"),
        1 => format!("({l} || {r})"),
        _ => format!("(!{l})"),
    }
}

pub fn scope_sequence(rng: &mut StdRng, len: usize) -> Vec<Scope> {
    (0..len)
        .map(|_| {
            let mut s = Scope::new();
            s.insert("a.x".into(), Value::Real(rng.gen_range(-4.0..4.0)));
            s.insert("b.y".into(), Value::Real(rng.gen_range(-4.0..4.0)));
            s.insert("b.ok".into(), Value::Boolean(rng.gen_bool(0.2)));
            s
        })
        .collect()
}

pub fn check_latch_case(seed: u64) -> Result<(), String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let text = condition_text(&mut rng, 3);
    let len = rng.gen_range(1..30);
    check_latch_sequence(&text, &scope_sequence(&mut rng, len))
}

// ---------------------------------------------------------------------------
// Instrumented scenario runs.

pub struct Traced {
    pub logs: Vec<StepLog>,
    /// Unit calls made during each iteration, transfer work included.
    pub calls: Vec<Vec<CallRecord>>,
    /// Offsets of swap instances after each iteration.
    pub offsets: Vec<BTreeMap<String, f64>>,
    /// `(step, swap)` latches per target after each iteration.
    pub latches: Vec<BTreeMap<String, (bool, bool)>>,
    /// Connected inputs per instance, for the configuration of each iteration.
    pub sinks: Vec<BTreeMap<String, BTreeSet<String>>>,
    pub swaps: BTreeMap<String, u64>,
    pub transfers: Vec<u64>,
    pub step_size: f64,
}

fn connected_inputs(cfg: &MultiModelConfig) -> BTreeMap<String, BTreeSet<String>> {
    let mut m: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let swap_wiring = cfg.model_swaps.values().flat_map(|e| e.swap_connections.values());
    for sink in cfg.connections.values().chain(swap_wiring).flatten() {
        m.entry(sink.instance.clone())
            .or_default()
            .insert(sink.variable.clone());
    }
    m
}

pub fn traced_run(name: ScenarioName) -> Traced {
    let scenario = Scenario::new(name);
    let calls = CallLog::new();
    let c = calls.clone();
    let registry = scenario
        .registry()
        .with_decorator(move |u| Box::new(Instrumented::new(u, c.clone())));
    let mut sim = Simulation::new(scenario.config.clone(), registry, scenario.options.clone()).unwrap();
    calls.take();
    let mut source = ScriptedTransfers::new(scenario.schedule.clone());
    let mut t = Traced {
        logs: Vec::new(),
        calls: Vec::new(),
        offsets: Vec::new(),
        latches: Vec::new(),
        sinks: Vec::new(),
        swaps: BTreeMap::new(),
        transfers: Vec::new(),
        step_size: scenario.options.step_size,
    };
    while !sim.is_finished() {
        let log = sim.step(Some(&mut source)).unwrap();
        t.logs.push(log);
        t.calls.push(calls.take());
        t.offsets.push(sim.offsets());
        t.latches.push(sim.latches());
        t.sinks.push(connected_inputs(sim.config()));
    }
    let result = sim.result();
    t.swaps = result.swaps;
    t.transfers = result.transfers.iter().map(|e| e.iteration).collect();
    t
}

/// Each swap instance's offset equals `dt` times the number of iterations
/// since its step latch first held.
pub fn check_offset_law(t: &Traced) -> Result<(), String> {
    let mut latched_at: BTreeMap<String, usize> = BTreeMap::new();
    for (i, offsets) in t.offsets.iter().enumerate() {
        for (target, (step, _)) in &t.latches[i] {
            if *step {
                latched_at.entry(target.clone()).or_insert(i);
            }
        }
        for (inst, off) in offsets {
            // Bundled scenarios swap a single target.
            let since = t.latches[i].keys().next().and_then(|target| latched_at.get(target));
            let expected = since.map_or(0.0, |&k| (i + 1 - k) as f64 * t.step_size);
            if (off - expected).abs() > 1e-9 {
                return Err(format!("iteration {i}: offset of {inst} is {off}, expected {expected}"));
            }
        }
    }
    Ok(())
}

/// Every input is set at most once per iteration, and every connected
/// input of a unit that steps is set exactly once.
pub fn check_single_writer(t: &Traced) -> Result<(), String> {
    for (i, calls) in t.calls.iter().enumerate() {
        if t.transfers.contains(&(i as u64)) {
            continue;
        }
        let mut sets: BTreeMap<(String, String), usize> = BTreeMap::new();
        for c in calls.iter().filter(|c| c.kind == CallKind::SetVar) {
            *sets
                .entry((c.instance.clone(), c.variable.clone().unwrap()))
                .or_default() += 1;
        }
        if let Some(((inst, var), n)) = sets.iter().find(|(_, n)| **n > 1) {
            return Err(format!("iteration {i}: {inst}.{var} set {n} times"));
        }
        for c in calls.iter().filter(|c| c.kind == CallKind::DoStep) {
            for var in t.sinks[i].get(&c.instance).into_iter().flatten() {
                if !sets.contains_key(&(c.instance.clone(), var.clone())) {
                    return Err(format!("iteration {i}: {}.{var} stepped without being set", c.instance));
                }
            }
        }
    }
    Ok(())
}

/// A swapped-out instance gets no call at all after the swap fires.
pub fn check_quiescence(t: &Traced) -> Result<(), String> {
    for (target, &fired) in &t.swaps {
        for (i, calls) in t.calls.iter().enumerate().skip(fired as usize + 1) {
            if let Some(c) = calls.iter().find(|c| &c.instance == target) {
                return Err(format!("iteration {i}: {target} got {:?} after swapping out", c.kind));
            }
        }
        let terminated = t.calls[fired as usize]
            .iter()
            .filter(|c| &c.instance == target)
            .map(|c| c.kind)
            .collect::<Vec<_>>();
        if terminated != [CallKind::Terminate] {
            return Err(format!("{target} calls in swap iteration: {terminated:?}"));
        }
    }
    Ok(())
}

pub fn scenario_csv(name: ScenarioName) -> Vec<u8> {
    let mut out = Vec::new();
    Scenario::new(name).run_csv(&mut out).unwrap();
    out
}

/// Records StepLogs for a scenario.
pub fn scenario_logs(name: ScenarioName) -> Vec<StepLog> {
    let s = Scenario::new(name);
    let mut logs = Vec::new();
    s.run(s.registry(), &mut logs).unwrap();
    logs
}

pub fn real(log: &StepLog, port: &str) -> f64 {
    log.values
        .get(&port.parse().unwrap())
        .and_then(Value::as_real)
        .unwrap_or_else(|| panic!("no {port} at t={}", log.time))
}

pub fn maybe_real(log: &StepLog, port: &str) -> Option<f64> {
    log.values.get(&port.parse().unwrap()).and_then(Value::as_real)
}

pub fn flag(log: &StepLog, port: &str) -> Option<bool> {
    log.values.get(&port.parse().unwrap()).and_then(Value::as_bool)
}

/// Collects logs into a vector and counts records.
pub struct Counting(pub Vec<StepLog>);

impl StepSink for Counting {
    fn record(&mut self, log: &StepLog) -> std::io::Result<()> {
        self.0.push(log.clone());
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Config round-trip strategy.

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,5}"
}

fn port(instances: Vec<(String, String)>) -> impl Strategy<Value = PortId> {
    (proptest::sample::select(instances), ident()).prop_map(|((k, i), v)| PortId::new(&k, &i, &v))
}

fn value() -> impl Strategy<Value = Value> {
    prop_oneof![
        (-1e6f64..1e6).prop_map(Value::Real),
        any::<i32>().prop_map(|i| Value::Integer(i as i64)),
        any::<bool>().prop_map(Value::Boolean),
        "[a-z ]{0,8}".prop_map(Value::String),
    ]
}

fn wiring(instances: Vec<(String, String)>) -> impl Strategy<Value = Wiring> {
    proptest::collection::btree_map(
        port(instances.clone()),
        proptest::collection::btree_set(port(instances), 1..3),
        0..4,
    )
    .prop_map(|m| {
        // Each sink has a single writer.
        let mut seen = BTreeSet::new();
        m.into_iter()
            .filter_map(|(src, sinks)| {
                let sinks: Vec<PortId> = sinks.into_iter().filter(|s| seen.insert(s.clone())).collect();
                (!sinks.is_empty()).then_some((src, sinks))
            })
            .collect()
    })
}

pub fn config_strategy() -> impl Strategy<Value = MultiModelConfig> {
    (2usize..5).prop_flat_map(|n| {
        let instances: Vec<(String, String)> = (0..n).map(|i| (format!("k{i}"), format!("inst{i}"))).collect();
        let units: BTreeMap<String, String> = instances
            .iter()
            .map(|(k, _)| (k.clone(), format!("m_{k}.fmu")))
            .collect();
        let swap = proptest::option::of((0..n - 1, "[a-z]{1,3}", wiring(instances.clone())));
        (
            Just(units),
            Just(instances.clone()),
            wiring(instances.clone()),
            proptest::collection::btree_map(port(instances.clone()), value(), 0..4),
            swap,
            any::<bool>(),
        )
            .prop_map(move |(units, instances, connections, mut parameters, swap, transfer)| {
                let mut model_swaps = BTreeMap::new();
                let swap_instance = swap.as_ref().map(|(_, _, _)| instances[n - 1].1.clone());
                if let Some((t, var, swap_connections)) = swap {
                    let (key, swap_instance) = instances[n - 1].clone();
                    parameters.insert(PortId::new(&key, &swap_instance, &var), Value::Real(1.0));
                    model_swaps.insert(
                        instances[t].1.clone(),
                        SwapEntry {
                            step_condition: "(true)".into(),
                            swap_condition: format!("({swap_instance}.{var} > 1.5)"),
                            swap_instance,
                            swap_connections,
                        },
                    );
                }
                let model_transfers = if transfer {
                    instances
                        .iter()
                        .filter(|(_, i)| Some(i) != swap_instance.as_ref())
                        .map(|(_, i)| (i.clone(), i.clone()))
                        .collect()
                } else {
                    BTreeMap::new()
                };
                MultiModelConfig {
                    units,
                    connections,
                    parameters,
                    model_swaps,
                    model_transfers,
                }
            })
    })
}

// ---------------------------------------------------------------------------
// Transfers and graphs.

/// Water-tank CSV, with an identity transfer offered at `transfer_at`.
pub fn identity_transfer_csv(transfer_at: Option<u64>) -> String {
    let cfg = parse_multi_model(WATERTANK).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(WATERTANK).unwrap();
    v["modelTransfers"] = serde_json::json!({"controller": "controller", "tank": "tank"});
    let schedule = transfer_at
        .map(|k| (k, "identity".to_string(), v.to_string()))
        .into_iter()
        .collect();
    let mut source = ScriptedTransfers::new(schedule);
    let mut sim = Simulation::new(cfg, ModelRegistry::builtin(None), RunOptions::new(0.0, 40.0, 0.1)).unwrap();
    let mut log = CsvLog::new(Vec::new(), &sim.columns()).unwrap();
    sim.run(Some(&mut source), &mut log).unwrap();
    assert_eq!(sim.generation(), u32::from(transfer_at.is_some()));
    String::from_utf8(log.into_inner().unwrap()).unwrap()
}

/// Random DAG over 8 ports; checks the initialization order against it.
pub fn check_linear_extension(seed: u64) -> Result<(), String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let p = |i: u8| PortId::new("k", &format!("u{i}"), "v");
    let mut g = DependencyGraph::new();
    for i in 0..8 {
        g.add_node(p(i));
    }
    for _ in 0..rng.gen_range(0..20) {
        let (a, b) = (rng.gen_range(0..8u8), rng.gen_range(0..8u8));
        if a < b {
            g.add_edge(p(a), p(b));
        }
    }
    let order = initialization_order(&g).map_err(|e| e.to_string())?;
    let pos: BTreeMap<&PortId, usize> = order.iter().enumerate().map(|(i, p)| (p, i)).collect();
    if order.len() != 8 {
        return Err(format!("order has {} ports", order.len()));
    }
    match g.edges().iter().find(|(a, b)| pos[a] >= pos[b]) {
        Some((a, b)) => Err(format!("{a} ordered after {b}")),
        None => Ok(()),
    }
}
