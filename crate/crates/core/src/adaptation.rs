//! Mode state machine driven by threshold rules over periodic metrics.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AdaptationError {
    #[error("missing {0:?} value for a relative condition")]
    MissingReference(Reference),
    #[error("invalid rule `{rule_id}`: {reason}")]
    InvalidRule { rule_id: String, reason: String },
    #[error("unknown rule preset `{0}`")]
    UnknownPreset(String),
    #[error("rule file: {0}")]
    Parse(String),
}

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub enum Mode {
    #[default]
    Normal,
    HighPerformance,
    LowPower,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservedMetric {
    CpuPercent,
    EnergyJoules,
    NormalizedEnergy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    Absolute,
    PreviousWindow,
    EscalationReference,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Operator {
    GreaterThan { threshold: f64 },
    LessThan { threshold: f64 },
    BetweenTwoBounds { lower: f64, upper: f64 },
    RelativeIncreaseAtLeast { fraction: f64 },
    RelativeDecreaseAtLeast { fraction: f64 },
}

impl Operator {
    pub fn is_relative(&self) -> bool {
        matches!(
            self,
            Operator::RelativeIncreaseAtLeast { .. } | Operator::RelativeDecreaseAtLeast { .. }
        )
    }

    fn name(&self) -> &'static str {
        match self {
            Operator::GreaterThan { .. } => "GreaterThan",
            Operator::LessThan { .. } => "LessThan",
            Operator::BetweenTwoBounds { .. } => "BetweenTwoBounds",
            Operator::RelativeIncreaseAtLeast { .. } => "RelativeIncreaseAtLeast",
            Operator::RelativeDecreaseAtLeast { .. } => "RelativeDecreaseAtLeast",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Condition {
    pub metric: ObservedMetric,
    pub operator: Operator,
    pub reference: Reference,
}

impl Condition {
    pub fn absolute(metric: ObservedMetric, operator: Operator) -> Self {
        Self {
            metric,
            operator,
            reference: Reference::Absolute,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let finite = |x: f64| x.is_finite();
        match self.operator {
            Operator::GreaterThan { threshold } | Operator::LessThan { threshold } => {
                if !finite(threshold) {
                    return Err("threshold must be finite".into());
                }
            }
            Operator::BetweenTwoBounds { lower, upper } => {
                if !(finite(lower) && finite(upper) && lower < upper) {
                    return Err(format!(
                        "bounds need lower < upper, got {lower} and {upper}"
                    ));
                }
            }
            Operator::RelativeIncreaseAtLeast { fraction } => {
                if !(finite(fraction) && fraction >= 0.0) {
                    return Err(format!("increase fraction {fraction} must be >= 0"));
                }
            }
            Operator::RelativeDecreaseAtLeast { fraction } => {
                if !(0.0..=1.0).contains(&fraction) {
                    return Err(format!("decrease fraction {fraction} must lie in [0, 1]"));
                }
            }
        }
        match (self.operator.is_relative(), self.reference) {
            (true, Reference::Absolute) => {
                Err("relative operators need a previous_window or escalation_reference".into())
            }
            (false, r) if r != Reference::Absolute => {
                Err("threshold operators take an absolute reference".into())
            }
            _ => Ok(()),
        }
    }
}

/// Evaluates a condition. `previous` is the metric's value in the preceding
/// observation, `reference` the value recorded by the last escalation.
pub fn evaluate(
    condition: &Condition,
    current: f64,
    previous: Option<f64>,
    reference: Option<f64>,
) -> Result<bool, AdaptationError> {
    let base = || {
        match condition.reference {
            Reference::Absolute => None,
            Reference::PreviousWindow => previous,
            Reference::EscalationReference => reference,
        }
        .ok_or(AdaptationError::MissingReference(condition.reference))
    };
    Ok(match condition.operator {
        Operator::GreaterThan { threshold } => current > threshold,
        Operator::LessThan { threshold } => current < threshold,
        Operator::BetweenTwoBounds { lower, upper } => lower < current && current < upper,
        Operator::RelativeIncreaseAtLeast { fraction } => current >= (1.0 + fraction) * base()?,
        Operator::RelativeDecreaseAtLeast { fraction } => current <= (1.0 - fraction) * base()?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptationRule {
    pub rule_id: String,
    pub condition: Condition,
    pub from_modes: BTreeSet<Mode>,
    pub to_mode: Mode,
    pub cooldown_periods: u32,
}

pub const DEFAULT_COOLDOWN: u32 = 1;

impl AdaptationRule {
    pub fn new(
        rule_id: impl Into<String>,
        condition: Condition,
        from_modes: impl IntoIterator<Item = Mode>,
        to_mode: Mode,
    ) -> Result<Self, AdaptationError> {
        let rule = Self {
            rule_id: rule_id.into(),
            condition,
            from_modes: from_modes.into_iter().collect(),
            to_mode,
            cooldown_periods: DEFAULT_COOLDOWN,
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn with_cooldown(mut self, periods: u32) -> Self {
        self.cooldown_periods = periods;
        self
    }

    pub fn validate(&self) -> Result<(), AdaptationError> {
        let fail = |reason: String| AdaptationError::InvalidRule {
            rule_id: self.rule_id.clone(),
            reason,
        };
        if self.rule_id.is_empty() {
            return Err(fail("empty rule_id".into()));
        }
        if self.from_modes.is_empty() {
            return Err(fail("from_modes is empty".into()));
        }
        if self.from_modes.contains(&self.to_mode) {
            return Err(fail(format!(
                "to_mode {} is also a source mode",
                self.to_mode
            )));
        }
        self.condition.validate().map_err(fail)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionEvent {
    pub t_ms: i64,
    pub from: Mode,
    pub to: Mode,
    pub rule_id: String,
    #[serde(default)]
    pub triggering_value: f64,
}

/// Metrics observed over one period. Absent fields are metrics that were not
/// collected.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub t_ms: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpu_percent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_joules: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized_energy: Option<f64>,
}

impl MetricsSnapshot {
    pub fn energy(t_ms: i64, joules: f64) -> Self {
        Self {
            t_ms,
            energy_joules: Some(joules),
            ..Self::default()
        }
    }

    pub fn cpu(t_ms: i64, cpu_percent: f64) -> Self {
        Self {
            t_ms,
            cpu_percent: Some(cpu_percent),
            ..Self::default()
        }
    }

    pub fn get(&self, metric: ObservedMetric) -> Option<f64> {
        match metric {
            ObservedMetric::CpuPercent => self.cpu_percent,
            ObservedMetric::EnergyJoules => self.energy_joules,
            ObservedMetric::NormalizedEnergy => self.normalized_energy,
        }
    }
}

/// The machine's full state between observation periods.
#[derive(Clone, Debug, PartialEq)]
pub struct MachineState {
    pub mode: Mode,
    /// Observation periods seen so far, gaps included.
    pub period: u64,
    pub last_transition_period: Option<u64>,
    pub previous: Option<MetricsSnapshot>,
    /// Metric and value that triggered the escalation currently in force.
    pub escalation_reference: Option<(ObservedMetric, f64)>,
}

impl Default for MachineState {
    fn default() -> Self {
        Self::new(Mode::Normal)
    }
}

impl MachineState {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            period: 0,
            last_transition_period: None,
            previous: None,
            escalation_reference: None,
        }
    }

    fn cooled_down(&self, rule: &AdaptationRule) -> bool {
        match self.last_transition_period {
            None => true,
            Some(last) => self.period - last > u64::from(rule.cooldown_periods),
        }
    }

    /// Evaluates the rules in order against one snapshot. The first rule that
    /// applies to the current mode, is out of cooldown and whose condition
    /// holds fires. Rules whose metric or base value is missing do not fire.
    pub fn step(
        &self,
        snapshot: &MetricsSnapshot,
        rules: &[AdaptationRule],
    ) -> (MachineState, Option<TransitionEvent>) {
        let mut next = self.clone();
        let mut event = None;
        for rule in rules {
            if !rule.from_modes.contains(&self.mode) || !self.cooled_down(rule) {
                continue;
            }
            let metric = rule.condition.metric;
            let Some(current) = snapshot.get(metric) else {
                continue;
            };
            let previous = self.previous.as_ref().and_then(|p| p.get(metric));
            let reference = self
                .escalation_reference
                .filter(|(m, _)| *m == metric)
                .map(|(_, v)| v);
            if let Ok(true) = evaluate(&rule.condition, current, previous, reference) {
                next.mode = rule.to_mode;
                next.last_transition_period = Some(self.period);
                next.escalation_reference = if rule.to_mode == Mode::Normal {
                    None
                } else {
                    Some((metric, current))
                };
                event = Some(TransitionEvent {
                    t_ms: snapshot.t_ms,
                    from: self.mode,
                    to: rule.to_mode,
                    rule_id: rule.rule_id.clone(),
                    triggering_value: current,
                });
                break;
            }
        }
        next.previous = Some(*snapshot);
        next.period += 1;
        (next, event)
    }

    /// A period with no data: nothing is evaluated and relative comparisons
    /// restart from the next observation.
    pub fn skip(&self) -> MachineState {
        MachineState {
            previous: None,
            period: self.period + 1,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Observation {
    Snapshot(MetricsSnapshot),
    Gap { t_ms: i64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub period_ms: i64,
    pub enabled: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            period_ms: 2000,
            enabled: true,
        }
    }
}

pub type Listener = Box<dyn FnMut(&TransitionEvent) + Send>;

/// Owns the machine and the rule list, records every observation and notifies
/// listeners after each committed transition.
pub struct ObservationScheduler {
    config: SchedulerConfig,
    rules: Vec<AdaptationRule>,
    state: MachineState,
    listeners: Vec<Listener>,
    recorded: Vec<Observation>,
    log: Vec<TransitionEvent>,
}

impl std::fmt::Debug for ObservationScheduler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObservationScheduler")
            .field("config", &self.config)
            .field("rules", &self.rules)
            .field("state", &self.state)
            .field("listeners", &self.listeners.len())
            .finish()
    }
}

impl ObservationScheduler {
    pub fn new(
        config: SchedulerConfig,
        rules: Vec<AdaptationRule>,
        start: Mode,
    ) -> Result<Self, AdaptationError> {
        validate_rules(&rules)?;
        Ok(Self {
            config,
            rules,
            state: MachineState::new(start),
            listeners: Vec::new(),
            recorded: Vec::new(),
            log: Vec::new(),
        })
    }

    pub fn add_listener(&mut self, listener: impl FnMut(&TransitionEvent) + Send + 'static) {
        self.listeners.push(Box::new(listener));
    }

    pub fn set_enabled(&mut self, enabled: bool) {
        self.config.enabled = enabled;
    }

    pub fn config(&self) -> SchedulerConfig {
        self.config
    }

    pub fn mode(&self) -> Mode {
        self.state.mode
    }

    pub fn state(&self) -> &MachineState {
        &self.state
    }

    pub fn recorded(&self) -> &[Observation] {
        &self.recorded
    }

    pub fn transitions(&self) -> &[TransitionEvent] {
        &self.log
    }

    pub fn observe(&mut self, observation: Observation) -> Option<TransitionEvent> {
        self.recorded.push(observation);
        let snapshot = match observation {
            Observation::Snapshot(s) if self.config.enabled => s,
            _ => {
                self.state = self.state.skip();
                return None;
            }
        };
        let (next, event) = self.state.step(&snapshot, &self.rules);
        self.state = next;
        if let Some(e) = &event {
            self.log.push(e.clone());
            for l in &mut self.listeners {
                l(e);
            }
        }
        event
    }

    /// Feeds every observation from `source` and returns the committed
    /// transitions in order.
    pub fn observe_loop(
        &mut self,
        source: impl IntoIterator<Item = Observation>,
    ) -> Vec<TransitionEvent> {
        source.into_iter().filter_map(|o| self.observe(o)).collect()
    }
}

pub fn validate_rules(rules: &[AdaptationRule]) -> Result<(), AdaptationError> {
    let mut seen = HashSet::new();
    for r in rules {
        r.validate()?;
        if !seen.insert(r.rule_id.as_str()) {
            return Err(AdaptationError::InvalidRule {
                rule_id: r.rule_id.clone(),
                reason: "duplicate rule_id".into(),
            });
        }
    }
    Ok(())
}

/// Flat on-disk form of a rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub rule_id: String,
    pub metric: ObservedMetric,
    pub operator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<[f64; 2]>,
    #[serde(default = "absolute")]
    pub reference: Reference,
    pub from_modes: Vec<Mode>,
    pub to_mode: Mode,
    #[serde(default = "default_cooldown")]
    pub cooldown_periods: u32,
}

fn absolute() -> Reference {
    Reference::Absolute
}

fn default_cooldown() -> u32 {
    DEFAULT_COOLDOWN
}

impl TryFrom<RuleSpec> for AdaptationRule {
    type Error = AdaptationError;

    fn try_from(s: RuleSpec) -> Result<Self, Self::Error> {
        let fail = |reason: &str| AdaptationError::InvalidRule {
            rule_id: s.rule_id.clone(),
            reason: reason.into(),
        };
        let one = || s.threshold.ok_or_else(|| fail("missing `threshold`"));
        let operator = match s.operator.as_str() {
            "GreaterThan" => Operator::GreaterThan { threshold: one()? },
            "LessThan" => Operator::LessThan { threshold: one()? },
            "BetweenTwoBounds" => {
                let [lower, upper] = s.thresholds.ok_or_else(|| fail("missing `thresholds`"))?;
                Operator::BetweenTwoBounds { lower, upper }
            }
            "RelativeIncreaseAtLeast" => Operator::RelativeIncreaseAtLeast { fraction: one()? },
            "RelativeDecreaseAtLeast" => Operator::RelativeDecreaseAtLeast { fraction: one()? },
            other => return Err(fail(&format!("unknown operator `{other}`"))),
        };
        let rule = AdaptationRule {
            condition: Condition {
                metric: s.metric,
                operator,
                reference: s.reference,
            },
            from_modes: s.from_modes.iter().copied().collect(),
            to_mode: s.to_mode,
            cooldown_periods: s.cooldown_periods,
            rule_id: s.rule_id,
        };
        rule.validate()?;
        Ok(rule)
    }
}

impl From<&AdaptationRule> for RuleSpec {
    fn from(r: &AdaptationRule) -> Self {
        let (threshold, thresholds) = match r.condition.operator {
            Operator::GreaterThan { threshold } | Operator::LessThan { threshold } => {
                (Some(threshold), None)
            }
            Operator::BetweenTwoBounds { lower, upper } => (None, Some([lower, upper])),
            Operator::RelativeIncreaseAtLeast { fraction }
            | Operator::RelativeDecreaseAtLeast { fraction } => (Some(fraction), None),
        };
        RuleSpec {
            rule_id: r.rule_id.clone(),
            metric: r.condition.metric,
            operator: r.condition.operator.name().into(),
            threshold,
            thresholds,
            reference: r.condition.reference,
            from_modes: r.from_modes.iter().copied().collect(),
            to_mode: r.to_mode,
            cooldown_periods: r.cooldown_periods,
        }
    }
}

pub fn parse_rules(json: &str) -> Result<Vec<AdaptationRule>, AdaptationError> {
    let specs: Vec<RuleSpec> =
        serde_json::from_str(json).map_err(|e| AdaptationError::Parse(e.to_string()))?;
    let rules = specs
        .into_iter()
        .map(AdaptationRule::try_from)
        .collect::<Result<Vec<_>, _>>()?;
    validate_rules(&rules)?;
    Ok(rules)
}

pub fn render_rules(rules: &[AdaptationRule]) -> String {
    let specs: Vec<RuleSpec> = rules.iter().map(RuleSpec::from).collect();
    serde_json::to_string_pretty(&specs).expect("rules serialize")
}

pub fn load_rules(path: &Path) -> Result<Vec<AdaptationRule>, AdaptationError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AdaptationError::Parse(format!("{}: {e}", path.display())))?;
    parse_rules(&text)
}

pub const PRESET_NAMES: [&str; 2] = ["cpu-default", "energy-adapt"];

pub fn preset(name: &str) -> Result<Vec<AdaptationRule>, AdaptationError> {
    let text = match name {
        "cpu-default" => include_str!("../presets/cpu-default.json"),
        "energy-adapt" => include_str!("../presets/energy-adapt.json"),
        other => return Err(AdaptationError::UnknownPreset(other.to_string())),
    };
    parse_rules(text)
}

/// A preset name or a path to a rule file.
pub fn resolve_rules(name_or_path: &str) -> Result<Vec<AdaptationRule>, AdaptationError> {
    if PRESET_NAMES.contains(&name_or_path) {
        preset(name_or_path)
    } else if Path::new(name_or_path).is_file() {
        load_rules(Path::new(name_or_path))
    } else {
        Err(AdaptationError::UnknownPreset(name_or_path.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::{Arc, Mutex};

    fn energy_trace(values: &[f64]) -> Vec<Observation> {
        values
            .iter()
            .enumerate()
            .map(|(i, &j)| Observation::Snapshot(MetricsSnapshot::energy(i as i64 * 2000, j)))
            .collect()
    }

    fn cpu_trace(values: &[f64]) -> Vec<Observation> {
        values
            .iter()
            .enumerate()
            .map(|(i, &c)| Observation::Snapshot(MetricsSnapshot::cpu(i as i64 * 2000, c)))
            .collect()
    }

    fn scheduler(preset_name: &str) -> ObservationScheduler {
        ObservationScheduler::new(
            SchedulerConfig::default(),
            preset(preset_name).unwrap(),
            Mode::Normal,
        )
        .unwrap()
    }

    fn cond(op: Operator) -> Condition {
        let reference = if op.is_relative() {
            Reference::PreviousWindow
        } else {
            Reference::Absolute
        };
        Condition {
            metric: ObservedMetric::EnergyJoules,
            operator: op,
            reference,
        }
    }

    #[test]
    fn evaluate_examples() {
        let between = cond(Operator::BetweenTwoBounds {
            lower: 1.0,
            upper: 10.0,
        });
        assert!(evaluate(&between, 5.0, None, None).unwrap());
        assert!(!evaluate(&between, 10.0, None, None).unwrap());
        assert!(!evaluate(&between, 1.0, None, None).unwrap());
        let gt = Condition::absolute(
            ObservedMetric::CpuPercent,
            Operator::GreaterThan { threshold: 50.0 },
        );
        assert!(evaluate(&gt, 60.0, None, None).unwrap());
        assert!(!evaluate(&gt, 50.0, None, None).unwrap());
        let inc = cond(Operator::RelativeIncreaseAtLeast { fraction: 0.5 });
        assert!(evaluate(&inc, 16.0, Some(10.0), None).unwrap());
        assert!(evaluate(&inc, 15.0, Some(10.0), None).unwrap());
        assert!(!evaluate(&inc, 12.0, Some(10.0), None).unwrap());
        assert_eq!(
            evaluate(&inc, 12.0, None, Some(1.0)),
            Err(AdaptationError::MissingReference(Reference::PreviousWindow))
        );
        let dec = Condition {
            reference: Reference::EscalationReference,
            ..cond(Operator::RelativeDecreaseAtLeast { fraction: 0.5 })
        };
        assert!(evaluate(&dec, 7.0, None, Some(16.0)).unwrap());
        assert!(!evaluate(&dec, 9.0, Some(100.0), Some(16.0)).unwrap());
    }

    #[test]
    fn invalid_conditions_and_rules() {
        let bad = cond(Operator::BetweenTwoBounds {
            lower: 3.0,
            upper: 3.0,
        });
        assert!(bad.validate().is_err());
        let abs_relative = Condition::absolute(
            ObservedMetric::EnergyJoules,
            Operator::RelativeIncreaseAtLeast { fraction: 0.5 },
        );
        assert!(abs_relative.validate().is_err());
        let gt = Condition::absolute(
            ObservedMetric::CpuPercent,
            Operator::GreaterThan { threshold: 1.0 },
        );
        assert!(
            AdaptationRule::new("r", gt, [Mode::Normal, Mode::LowPower], Mode::LowPower).is_err()
        );
        assert!(AdaptationRule::new("r", gt, [], Mode::LowPower).is_err());
        assert!(AdaptationRule::new("r", gt, [Mode::Normal], Mode::LowPower).is_ok());
    }

    #[test]
    fn cpu_default_examples() {
        let rules = preset("cpu-default").unwrap();
        let s = MachineState::new(Mode::Normal);
        let (s, e) = s.step(&MetricsSnapshot::cpu(0, 60.0), &rules);
        assert_eq!(s.mode, Mode::LowPower);
        assert_eq!(e.unwrap().rule_id, "cpu-high");
        let s = MachineState {
            mode: Mode::LowPower,
            ..MachineState::default()
        };
        let (s, e) = s.step(&MetricsSnapshot::cpu(0, 40.0), &rules);
        assert_eq!(s.mode, Mode::Normal);
        assert_eq!(e.unwrap().to, Mode::Normal);
    }

    #[test]
    fn cpu_trace_up_then_down() {
        let mut sch = scheduler("cpu-default");
        let events = sch.observe_loop(cpu_trace(&[30.0, 45.0, 62.0, 70.0, 55.0, 35.0, 20.0]));
        let path: Vec<(Mode, Mode, i64)> = events.iter().map(|e| (e.from, e.to, e.t_ms)).collect();
        assert_eq!(
            path,
            [
                (Mode::Normal, Mode::LowPower, 4000),
                (Mode::LowPower, Mode::Normal, 10_000)
            ]
        );
    }

    #[test]
    fn energy_adapt_trace_gives_two_events() {
        for _ in 0..3 {
            let mut sch = scheduler("energy-adapt");
            let events = sch.observe_loop(energy_trace(&[10.0, 10.0, 16.0, 16.0, 7.0]));
            assert_eq!(events.len(), 2);
            assert_eq!(
                (events[0].from, events[0].to, events[0].t_ms),
                (Mode::Normal, Mode::LowPower, 4000)
            );
            assert_eq!(events[0].triggering_value, 16.0);
            assert_eq!(
                (events[1].from, events[1].to, events[1].t_ms),
                (Mode::LowPower, Mode::Normal, 8000)
            );
            assert_eq!(sch.mode(), Mode::Normal);
            assert_eq!(sch.state().escalation_reference, None);
        }
    }

    #[test]
    fn disabled_flag_suppresses_transitions_but_records() {
        let mut sch = scheduler("energy-adapt");
        sch.set_enabled(false);
        let trace = energy_trace(&[10.0, 10.0, 16.0, 16.0, 7.0]);
        assert!(sch.observe_loop(trace.clone()).is_empty());
        assert_eq!(sch.mode(), Mode::Normal);
        assert_eq!(sch.recorded(), &trace[..]);
    }

    #[test]
    fn constant_metrics_never_transition() {
        let mut sch = scheduler("energy-adapt");
        assert!(sch.observe_loop(energy_trace(&[12.5; 50])).is_empty());
        let mut sch = scheduler("cpu-default");
        assert!(sch.observe_loop(cpu_trace(&[50.0; 50])).is_empty());
    }

    #[test]
    fn gap_skips_evaluation_and_resets_previous() {
        let mut sch = scheduler("energy-adapt");
        let trace = vec![
            Observation::Snapshot(MetricsSnapshot::energy(0, 10.0)),
            Observation::Gap { t_ms: 2000 },
            Observation::Snapshot(MetricsSnapshot::energy(4000, 30.0)),
            Observation::Snapshot(MetricsSnapshot::energy(6000, 30.0)),
        ];
        assert!(sch.observe_loop(trace).is_empty());
    }

    #[test]
    fn listeners_see_committed_state() {
        let seen = Arc::new(Mutex::new(Vec::new()));
        let mut sch = scheduler("energy-adapt");
        let sink = Arc::clone(&seen);
        sch.add_listener(move |e| sink.lock().unwrap().push(e.clone()));
        let events = sch.observe_loop(energy_trace(&[10.0, 10.0, 16.0, 16.0, 7.0]));
        assert_eq!(*seen.lock().unwrap(), events);
        assert_eq!(sch.transitions(), &events[..]);
    }

    #[test]
    fn cooldown_blocks_immediate_reversal() {
        let gt = Condition::absolute(
            ObservedMetric::CpuPercent,
            Operator::GreaterThan { threshold: 50.0 },
        );
        let lt = Condition::absolute(
            ObservedMetric::CpuPercent,
            Operator::LessThan { threshold: 50.0 },
        );
        let rules = |cd: u32| {
            vec![
                AdaptationRule::new("up", gt, [Mode::Normal], Mode::LowPower)
                    .unwrap()
                    .with_cooldown(cd),
                AdaptationRule::new("down", lt, [Mode::LowPower], Mode::Normal)
                    .unwrap()
                    .with_cooldown(cd),
            ]
        };
        let trace = cpu_trace(&[60.0, 40.0, 60.0, 40.0, 60.0, 40.0, 60.0, 40.0]);
        let run = |cd| {
            ObservationScheduler::new(SchedulerConfig::default(), rules(cd), Mode::Normal)
                .unwrap()
                .observe_loop(trace.clone())
                .len()
        };
        assert_eq!(run(0), 8);
        assert_eq!(run(1), 3);
        assert_eq!(run(2), 3);
    }

    #[test]
    fn rule_file_round_trip() {
        for name in PRESET_NAMES {
            let rules = preset(name).unwrap();
            assert_eq!(parse_rules(&render_rules(&rules)).unwrap(), rules);
        }
        let between = r#"[{"rule_id":"band","metric":"normalized_energy","operator":"BetweenTwoBounds",
            "thresholds":[0.2,0.8],"from_modes":["LowPower"],"to_mode":"HighPerformance"}]"#;
        let rules = parse_rules(between).unwrap();
        assert_eq!(rules[0].cooldown_periods, DEFAULT_COOLDOWN);
        assert_eq!(
            rules[0].condition.operator,
            Operator::BetweenTwoBounds {
                lower: 0.2,
                upper: 0.8
            }
        );
        let bad = r#"[{"rule_id":"x","metric":"cpu_percent","operator":"GreaterThan",
            "from_modes":["Normal"],"to_mode":"LowPower"}]"#;
        assert!(matches!(
            parse_rules(bad),
            Err(AdaptationError::InvalidRule { .. })
        ));
        assert!(matches!(
            preset("nope"),
            Err(AdaptationError::UnknownPreset(_))
        ));
    }

    #[test]
    fn transition_event_json_fields() {
        let e = TransitionEvent {
            t_ms: 4000,
            from: Mode::HighPerformance,
            to: Mode::LowPower,
            rule_id: "energy-escalate".into(),
            triggering_value: 16.0,
        };
        let v: serde_json::Value = serde_json::to_value(&e).unwrap();
        assert_eq!(v["from"], "HighPerformance");
        assert_eq!(v["to"], "LowPower");
        assert_eq!(v["t_ms"], 4000);
    }

    fn arb_energy() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(
            prop_oneof![1.0f64..50.0, Just(10.0), Just(20.0), Just(5.0)],
            0..60,
        )
    }

    proptest! {
        #[test]
        fn transitions_are_deterministic(trace in arb_energy()) {
            let a = scheduler("energy-adapt").observe_loop(energy_trace(&trace));
            let b = scheduler("energy-adapt").observe_loop(energy_trace(&trace));
            prop_assert_eq!(a, b);
        }

        #[test]
        fn at_most_one_transition_per_period_and_cooldown_respected(trace in arb_energy()) {
            let events = scheduler("energy-adapt").observe_loop(energy_trace(&trace));
            for pair in events.windows(2) {
                prop_assert!(pair[1].t_ms - pair[0].t_ms >= 2 * 2000);
            }
            for e in &events {
                prop_assert_ne!(e.from, e.to);
            }
        }

        #[test]
        fn disabled_mode_is_constant(trace in arb_energy(), cpu in proptest::collection::vec(0.0f64..100.0, 0..40)) {
            let mut sch = scheduler("energy-adapt");
            sch.set_enabled(false);
            prop_assert!(sch.observe_loop(energy_trace(&trace)).is_empty());
            prop_assert_eq!(sch.mode(), Mode::Normal);
            let mut sch = scheduler("cpu-default");
            sch.set_enabled(false);
            prop_assert!(sch.observe_loop(cpu_trace(&cpu)).is_empty());
            prop_assert_eq!(sch.mode(), Mode::Normal);
        }

        #[test]
        fn rule_order_only_picks_the_winner(cpu in 51.0f64..100.0) {
            let gt = Condition::absolute(ObservedMetric::CpuPercent, Operator::GreaterThan { threshold: 50.0 });
            let band = Condition::absolute(
                ObservedMetric::CpuPercent,
                Operator::BetweenTwoBounds { lower: 50.0, upper: 101.0 },
            );
            let a = AdaptationRule::new("a", gt, [Mode::Normal], Mode::LowPower).unwrap();
            let b = AdaptationRule::new("b", band, [Mode::Normal], Mode::HighPerformance).unwrap();
            let snap = MetricsSnapshot::cpu(0, cpu);
            let s = MachineState::default();
            let (s1, e1) = s.step(&snap, &[a.clone(), b.clone()]);
            let (s2, e2) = s.step(&snap, &[b, a]);
            let (e1, e2) = (e1.unwrap(), e2.unwrap());
            prop_assert_eq!((e1.rule_id.as_str(), s1.mode), ("a", Mode::LowPower));
            prop_assert_eq!((e2.rule_id.as_str(), s2.mode), ("b", Mode::HighPerformance));
            prop_assert_eq!((e1.t_ms, e1.from, e1.triggering_value), (e2.t_ms, e2.from, e2.triggering_value));
            prop_assert_eq!(s1.period, s2.period);
            prop_assert_eq!(s1.last_transition_period, s2.last_transition_period);
        }
    }
}
