//! Acceptance gate: one PASS/FAIL line per criterion. Exits nonzero if any
//! criterion fails.

mod common;

use std::process::ExitCode;

use proptest::test_runner::{Config, TestRunner};
use swapsim::engine::StepLog;
use swapsim::parse_multi_model;
use swapsim::scenarios::{ScenarioName, FEED_SPACING};
use swapsim::units::CallKind;

use common::{flag, real, traced_run};

const SLACK: f64 = 1e-9;
const MIN_LEVEL: f64 = 1.0;
const MAX_LEVEL: f64 = 2.0;
const INFLOW: f64 = 0.1;
const OUTFLOW: f64 = 0.3;
const DT: f64 = 0.1;
const LEAK_DELTA: f64 = 0.5;

type Verdict = Result<String, String>;

type Criterion = (u32, &'static str, fn() -> Verdict);

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const LEVEL: &str = "{x2}.tank.level";

fn levels(logs: &[StepLog]) -> Vec<f64> {
    logs.iter().map(|l| real(l, LEVEL)).collect()
}

fn criterion_1() -> Verdict {
    let logs = common::scenario_logs(ScenarioName::WatertankNormal);
    if logs.len() != 400 {
        return Err(format!("{} steps, expected 400", logs.len()));
    }
    let valve: Vec<bool> = logs.iter().map(|l| real(l, "{x1}.controller.valve") > 0.5).collect();
    let first_open = valve.iter().position(|&v| v).ok_or("valve never opens")?;
    let (lo, hi) = (MIN_LEVEL - DT * OUTFLOW, MAX_LEVEL + DT * INFLOW);
    let level = levels(&logs);
    let after = &level[first_open..];
    let min = after.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = after.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let in_band = min >= lo - SLACK && max <= hi + SLACK;
    // A full cycle is an opening followed by a closing.
    let closings = valve[first_open..].windows(2).filter(|w| w[0] && !w[1]).count();
    ensure(
        in_band && closings >= 3,
        format!(
            "first opening t={:.1}, level in [{min:.3}, {max:.3}] vs [{lo:.2}, {hi:.2}], {closings} full valve cycles (need 3)",
            logs[first_open].time
        ),
    )
}

fn local_maxima(xs: &[f64]) -> Vec<f64> {
    xs.windows(3)
        .filter(|w| w[1] > w[0] && w[1] >= w[2])
        .map(|w| w[1])
        .collect()
}

fn criterion_2() -> Verdict {
    let logs = common::scenario_logs(ScenarioName::WatertankFault);
    let level = levels(&logs);
    // The fault condition is sampled before each step, so the first row at
    // or after the trigger is the first faulty step.
    let trigger = (1..logs.len())
        .find(|&k| logs[k - 1].time >= 12.0 - SLACK && level[k - 1] >= 1.6)
        .ok_or("fault never triggers")?;
    let valves: Vec<f64> = logs[trigger..]
        .iter()
        .map(|l| real(l, "{x2}.tank.valvecontrol"))
        .collect();
    let alternating = valves.windows(2).all(|w| w[0] != w[1]);
    let after = &level[trigger..];
    let max = after.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let peaks = local_maxima(after).into_iter().filter(|&m| m > 1.5 && m < 1.7).count();
    ensure(
        alternating && max < MAX_LEVEL && peaks >= 5,
        format!(
            "trigger t={:.1}, injected valve alternates: {alternating}, max level after trigger {max:.3}, {peaks} maxima in (1.5, 1.7)",
            logs[trigger - 1].time
        ),
    )
}

fn criterion_3() -> Verdict {
    let t = traced_run(ScenarioName::WatertankSwap);
    let transfer = *t.transfers.first().ok_or("spec never consumed")?;
    let first_eligible = 220;
    let fired = *t.swaps.get("controller").ok_or("controller never swapped")?;
    let stepped = |range: std::ops::Range<usize>| {
        t.calls[range]
            .iter()
            .flatten()
            .any(|c| c.instance == "controller" && c.kind == CallKind::DoStep)
    };
    let quiet = stepped(0..fired as usize) && !stepped(fired as usize..t.calls.len());

    let logs = &t.logs;
    let level = levels(logs);
    let decrease = (fired as usize + 1..logs.len())
        .find(|&k| common::maybe_real(&logs[k], "{x4}.leak_controller.valve") == Some(0.0) && level[k] < level[k - 1])
        .ok_or("no closed-valve decrease after swap")?;
    let leak = (0..logs.len())
        .find(|&k| flag(&logs[k], "{x3}.leak_detector.leak") == Some(true))
        .ok_or("leak never detected")?;
    let delay = leak as i64 - decrease as i64;
    let detect_ok = (0..=5).contains(&delay);

    let settle = logs[leak].time + 5.0;
    let tail: Vec<f64> = logs
        .iter()
        .zip(&level)
        .filter(|(l, _)| l.time >= settle - SLACK)
        .map(|(_, &v)| v)
        .collect();
    let (hi, lo) = (MAX_LEVEL - LEAK_DELTA + 0.02, MIN_LEVEL - 0.03);
    let tail_min = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let tail_max = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let band_ok = !tail.is_empty() && tail_max <= hi + SLACK && tail_min >= lo - SLACK;

    ensure(
        transfer == first_eligible && quiet && detect_ok && band_ok,
        format!(
            "(a) consumed at iteration {transfer} (first eligible {first_eligible}); (b) controller quiet after iteration {fired}: {quiet}; \
             (c) leak {delay} steps after closed-valve decrease at t={:.1}; (d) level from t={settle:.1} in [{tail_min:.3}, {tail_max:.3}] vs [{lo:.2}, {hi:.2}]",
            logs[decrease].time
        ),
    )
}

fn steering(logs: &[StepLog]) -> Vec<f64> {
    logs.iter().map(|l| real(l, "{a}.actuation.steering")).collect()
}

fn changes(xs: &[f64]) -> Vec<f64> {
    xs.windows(2).map(|w| (w[1] - w[0]).abs()).collect()
}

fn broker_run(name: ScenarioName) -> Result<(Vec<StepLog>, usize, f64), String> {
    let t = traced_run(name);
    let fired = *t.swaps.get("broker").ok_or("broker never swapped")? as usize;
    let angle = steering(&t.logs);
    let pre = changes(&angle[..fired]).into_iter().fold(0.0, f64::max);
    Ok((t.logs, fired, pre))
}

fn criterion_4() -> Verdict {
    let (logs, fired, pre) = broker_run(ScenarioName::BrokerInstant)?;
    let all = changes(&steering(&logs));
    let jumps: Vec<f64> = all.iter().cloned().filter(|&c| c > 3.0 * pre).collect();
    ensure(
        jumps.len() == 1,
        format!(
            "swap at t={:.1}, max pre-swap change {pre:.4}, jumps over 3x: {jumps:.4?}",
            logs[fired].time
        ),
    )
}

fn criterion_5() -> Verdict {
    let (logs, fired, pre) = broker_run(ScenarioName::BrokerStepcond)?;
    let worst = changes(&steering(&logs)).into_iter().fold(0.0, f64::max);
    let cfg = parse_multi_model(swapsim::scenarios::BROKER).map_err(|e| e.to_string())?;
    let backlog = cfg
        .parameters
        .iter()
        .find(|(p, _)| p.instance == "broker" && p.variable == "prefetch_count")
        .and_then(|(_, v)| v.as_integer())
        .ok_or("no prefetch_count")? as usize;
    // The old broker emits one message per step, so its backlog is gone
    // once it has stepped `backlog` times.
    let drained = fired >= backlog;
    let last_old = real(&logs[fired - 1], "{b}.broker.timestamp");
    let first_new = real(&logs[fired], "{b}.broker2.timestamp");
    let gap = first_new - last_old;
    let gap_ok = gap > 0.0 && gap <= FEED_SPACING + SLACK;
    ensure(
        worst <= 1.5 * pre && drained && gap_ok,
        format!(
            "swap at t={:.1} after {fired} steps (backlog {backlog}), max change {worst:.4} vs 1.5 x {pre:.4}, \
             timestamps {last_old:.1} -> {first_new:.1}",
            logs[fired].time
        ),
    )
}

fn criterion_6() -> Verdict {
    let cases = 50;
    let mismatched: Vec<u64> = (0..cases)
        .filter(|&seed| {
            let (engine, oracle) = common::oracle_pair(seed);
            engine != oracle
        })
        .collect();
    ensure(
        mismatched.is_empty(),
        format!(
            "{} of {cases} random configs identical; mismatches {mismatched:?}",
            cases - mismatched.len() as u64
        ),
    )
}

fn cells(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn criterion_7() -> Verdict {
    let plain = cells(&common::identity_transfer_csv(None));
    let transferred = cells(&common::identity_transfer_csv(Some(100)));
    let differing = plain
        .iter()
        .zip(&transferred)
        .flat_map(|(a, b)| a.iter().zip(b).filter(|(x, y)| x != y))
        .count();
    ensure(
        plain.len() == transferred.len() && plain.len() == 401 && differing == 0,
        format!(
            "{} rows compared, {differing} differing cells",
            plain.len().saturating_sub(1)
        ),
    )
}

fn criterion_8() -> Verdict {
    let mut failures = Vec::new();
    let mut note = |name: &str, r: Result<(), String>| {
        if let Err(e) = r {
            failures.push(format!("{name}: {e}"));
        }
    };
    note("latch monotonicity", (0..1000).try_for_each(common::check_latch_case));
    let traced: Vec<_> = ScenarioName::ALL.iter().map(|&n| (n, traced_run(n))).collect();
    for (name, t) in &traced {
        note(
            "single writer",
            common::check_single_writer(t).map_err(|e| format!("{name}: {e}")),
        );
        note(
            "offset law",
            common::check_offset_law(t).map_err(|e| format!("{name}: {e}")),
        );
        note(
            "quiescence",
            common::check_quiescence(t).map_err(|e| format!("{name}: {e}")),
        );
    }
    let swapped = traced.iter().filter(|(_, t)| !t.swaps.is_empty()).count();
    note(
        "linear extension",
        (0..500).try_for_each(common::check_linear_extension),
    );
    let mut runner = TestRunner::new(Config {
        cases: 500,
        failure_persistence: None,
        ..Config::default()
    });
    note(
        "config round-trip",
        runner
            .run(&common::config_strategy(), |cfg| {
                let back = parse_multi_model(&cfg.to_json_string())
                    .map_err(|e| proptest::test_runner::TestCaseError::fail(e.to_string()))?;
                proptest::prop_assert_eq!(back, cfg);
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );
    for name in ScenarioName::ALL {
        if common::scenario_csv(name) != common::scenario_csv(name) {
            failures.push(format!("determinism: {name}"));
        }
    }
    ensure(
        failures.is_empty(),
        if failures.is_empty() {
            format!("all suites hold over {} scenarios ({swapped} with swaps)", traced.len())
        } else {
            failures.join("; ")
        },
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        (1, "water-tank normal", criterion_1),
        (2, "fault injection", criterion_2),
        (3, "runtime structure swap", criterion_3),
        (4, "broker instant swap", criterion_4),
        (5, "broker conditioned swap", criterion_5),
        (6, "oracle equivalence", criterion_6),
        (7, "identity transfer", criterion_7),
        (8, "property suites", criterion_8),
    ];
    let mut failed = 0;
    for (n, title, check) in criteria {
        let start = std::time::Instant::now();
        let verdict = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("criterion {n} ({title}): PASS [{secs:.2}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({title}): FAIL [{secs:.2}s] {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
