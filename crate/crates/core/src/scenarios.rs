//! Bundled water-tank and message-broker scenarios.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::config::{parse_multi_model, MultiModelConfig};
use crate::engine::{union_columns, EngineError, RunOptions, Simulation, SimulationResult, StepSink};
use crate::log::CsvLog;
use crate::transfer::ScriptedTransfers;
use crate::units::{BrokerFeed, FaultDirection, FaultRule, FaultTransform, ModelRegistry, SharedFeed};

pub const WATERTANK: &str = r#"{
  "fmus": {
    "{x1}": "watertankcontroller-c.fmu",
    "{x2}": "singlewatertank-20sim.fmu"
  },
  "connections": {
    "{x1}.controller.valve": ["{x2}.tank.valvecontrol"],
    "{x2}.tank.level": ["{x1}.controller.level"]
  },
  "parameters": {
    "{x1}.controller.maxLevel": 2,
    "{x1}.controller.minLevel": 1
  }
}"#;

/// Adds a leak detector and swaps the controller for a leak-aware one.
pub const WATERTANK_SWAP: &str = r#"{
  "fmus": {
    "{x1}": "watertankcontroller-c.fmu",
    "{x2}": "singlewatertank-20sim.fmu",
    "{x3}": "leak_detector.fmu",
    "{x4}": "leak_controller.fmu"
  },
  "connections": {
    "{x1}.controller.valve": [
      "{x2}.tank.valvecontrol",
      "{x3}.leak_detector.valve"
    ],
    "{x2}.tank.level": [
      "{x1}.controller.level",
      "{x3}.leak_detector.level"
    ]
  },
  "parameters": {
    "{x1}.controller.maxLevel": 2,
    "{x1}.controller.minLevel": 1
  },
  "modelSwaps": {
    "controller": {
      "swapInstance": "leak_controller",
      "stepCondition": "(true)",
      "swapCondition": "(true)",
      "swapConnections": {
        "{x4}.leak_controller.valve": [
          "{x2}.tank.valvecontrol",
          "{x3}.leak_detector.valve"
        ],
        "{x2}.tank.level": [
          "{x4}.leak_controller.level"
        ],
        "{x3}.leak_detector.leak": [
          "{x4}.leak_controller.leak"
        ]
      }
    }
  },
  "modelTransfers": {
    "controller": "controller",
    "tank": "tank"
  }
}"#;

pub const BROKER: &str = r#"{
  "fmus": {
    "{b}": "rabbitmq.fmu",
    "{a}": "actuation.fmu"
  },
  "connections": {
    "{b}.broker.angle": ["{a}.actuation.angle"]
  },
  "parameters": {
    "{b}.broker.prefetch_count": 100,
    "{b}.broker.maxage": 0.2
  }
}"#;

pub const SYNC_CONDITION: &str = "(broker.angle == broker2.angle)";

/// Swap spec replacing `broker` by a fresh consumer `broker2`.
pub fn broker_swap_spec(step_condition: &str, swap_condition: &str) -> String {
    format!(
        r#"{{
  "fmus": {{
    "{{b}}": "rabbitmq.fmu",
    "{{a}}": "actuation.fmu"
  }},
  "connections": {{
    "{{b}}.broker.angle": ["{{a}}.actuation.angle"]
  }},
  "parameters": {{
    "{{b}}.broker2.prefetch_count": 0,
    "{{b}}.broker2.maxage": 0.2
  }},
  "modelSwaps": {{
    "broker": {{
      "swapInstance": "broker2",
      "stepCondition": "{step_condition}",
      "swapCondition": "{swap_condition}",
      "swapConnections": {{
        "{{b}}.broker2.angle": ["{{a}}.actuation.angle"]
      }}
    }}
  }},
  "modelTransfers": {{
    "broker": "broker",
    "actuation": "actuation"
  }}
}}"#
    )
}

pub const FEED_PERIOD: f64 = 8.0;
pub const FEED_SPACING: f64 = 0.1;
const FEED_MESSAGES: usize = 300;

/// Sine of period 8 s sampled every 0.1 s.
pub fn broker_feed() -> BrokerFeed {
    BrokerFeed::sampled(FEED_MESSAGES, FEED_SPACING, |t| (2.0 * PI * t / FEED_PERIOD).sin())
}

pub const FAULT_TRIGGER: &str = "(sim.time >= 12 && tank.level >= 1.6)";

fn valve_fault(transform: FaultTransform, release: Option<&str>) -> FaultRule {
    FaultRule {
        instance: "tank".into(),
        variable: "valvecontrol".into(),
        direction: FaultDirection::Input,
        trigger: FAULT_TRIGGER.into(),
        transform,
        release: release.map(str::to_string),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ScenarioName {
    WatertankNormal,
    WatertankFault,
    WatertankSwap,
    BrokerInstant,
    BrokerSwapcond,
    BrokerStepcond,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 6] = [
        ScenarioName::WatertankNormal,
        ScenarioName::WatertankFault,
        ScenarioName::WatertankSwap,
        ScenarioName::BrokerInstant,
        ScenarioName::BrokerSwapcond,
        ScenarioName::BrokerStepcond,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::WatertankNormal => "watertank-normal",
            ScenarioName::WatertankFault => "watertank-fault",
            ScenarioName::WatertankSwap => "watertank-swap",
            ScenarioName::BrokerInstant => "broker-instant",
            ScenarioName::BrokerSwapcond => "broker-swapcond",
            ScenarioName::BrokerStepcond => "broker-stepcond",
        }
    }

    /// Default time at which the swap spec becomes available, if any.
    pub fn default_transfer_at(self) -> Option<f64> {
        match self {
            ScenarioName::WatertankNormal | ScenarioName::WatertankFault => None,
            ScenarioName::WatertankSwap => Some(22.0),
            _ => Some(5.0),
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| format!("unknown scenario {s}"))
    }
}

/// A self-contained run: configuration, options, scripted swap specs and
/// broker feed.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: ScenarioName,
    pub config: MultiModelConfig,
    pub options: RunOptions,
    /// `(iteration, name, spec text)`.
    pub schedule: Vec<(u64, String, String)>,
    pub feed: Option<BrokerFeed>,
}

impl Scenario {
    pub fn new(name: ScenarioName) -> Self {
        Self::with_transfer_at(name, name.default_transfer_at())
    }

    /// Builds `name` with its swap spec available from `transfer_at`
    /// seconds. Ignored by scenarios without a swap.
    pub fn with_transfer_at(name: ScenarioName, transfer_at: Option<f64>) -> Self {
        let dt = 0.1;
        let at = |t: f64| (t / dt).round() as u64;
        let parse = |text: &str| parse_multi_model(text).expect("bundled config parses");
        let transfer = transfer_at.or(name.default_transfer_at());
        let (config, end, rules, schedule, feed) = match name {
            ScenarioName::WatertankNormal => (parse(WATERTANK), 40.0, vec![], vec![], None),
            ScenarioName::WatertankFault => (
                parse(WATERTANK),
                40.0,
                vec![valve_fault(FaultTransform::Alternate01, None)],
                vec![],
                None,
            ),
            ScenarioName::WatertankSwap => (
                parse(WATERTANK),
                40.0,
                vec![valve_fault(FaultTransform::Constant(1.0), Some("(tank.level < 1.55)"))],
                vec![(
                    at(transfer.unwrap_or(22.0)),
                    "watertank-swap.json".to_string(),
                    WATERTANK_SWAP.to_string(),
                )],
                None,
            ),
            ScenarioName::BrokerInstant | ScenarioName::BrokerSwapcond | ScenarioName::BrokerStepcond => {
                let (step, swap) = match name {
                    ScenarioName::BrokerInstant => ("(true)", "(true)"),
                    ScenarioName::BrokerSwapcond => ("(true)", SYNC_CONDITION),
                    _ => (SYNC_CONDITION, SYNC_CONDITION),
                };
                let spec = (
                    at(transfer.unwrap_or(5.0)),
                    format!("{name}.json"),
                    broker_swap_spec(step, swap),
                );
                (parse(BROKER), 20.0, vec![], vec![spec], Some(broker_feed()))
            }
        };
        Scenario {
            name,
            config,
            options: RunOptions::new(0.0, end, dt).with_faults(rules),
            schedule,
            feed,
        }
    }

    /// A registry with a fresh copy of the scenario's feed.
    pub fn registry(&self) -> ModelRegistry {
        ModelRegistry::builtin(self.feed.clone().map(SharedFeed::new))
    }

    /// Log columns of every configuration the run may switch to.
    pub fn columns(&self, registry: &ModelRegistry) -> Vec<String> {
        let later: Vec<MultiModelConfig> = self
            .schedule
            .iter()
            .filter_map(|(_, _, text)| parse_multi_model(text).ok())
            .collect();
        union_columns(
            std::iter::once(&self.config).chain(&later),
            registry,
            &self.options.fault_rules,
        )
    }

    pub fn run(&self, registry: ModelRegistry, sink: &mut dyn StepSink) -> Result<SimulationResult, EngineError> {
        let mut source = ScriptedTransfers::new(self.schedule.clone());
        let mut sim = Simulation::new(self.config.clone(), registry, self.options.clone())?;
        sim.run(Some(&mut source), sink)
    }

    /// Runs with the builtin registry and writes the CSV log to `out`.
    pub fn run_csv<W: Write>(&self, out: W) -> Result<SimulationResult, EngineError> {
        let registry = self.registry();
        let mut log = CsvLog::new(out, &self.columns(&registry))?;
        let result = self.run(registry, &mut log)?;
        log.flush()?;
        Ok(result)
    }
}
