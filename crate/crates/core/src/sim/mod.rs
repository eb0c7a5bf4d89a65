//! Event loop, scenario files, traces and reports.

pub mod engine;
pub mod report;
pub mod scenario;
pub mod trace;

pub use report::{KpiCounters, RunReport};
pub use scenario::{Scenario, ScenarioError};
pub use trace::{TraceEvent, TraceKind};

/// Runs a scenario and keeps the whole trace in memory.
pub fn run(scenario: &Scenario) -> Result<(Vec<TraceEvent>, RunReport), ScenarioError> {
    let mut events = Vec::new();
    let report = run_with_sink(scenario, &mut |e| events.push(e.clone()))?;
    Ok((events, report))
}

/// Runs a scenario, handing every trace event to `sink` as it happens.
/// Expectation breaches end up in `RunReport::breaches`.
pub fn run_with_sink(scenario: &Scenario, sink: &mut dyn FnMut(&TraceEvent)) -> Result<RunReport, ScenarioError> {
    let resolved = scenario.resolve()?;
    let mut report = engine::Engine::new(resolved, &scenario.name, sink).run();
    report.check(&scenario.expect);
    Ok(report)
}
