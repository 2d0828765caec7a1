//! Synthetic CAN traffic and the five attack families used for evaluation.
//!
//! Traffic is generated on a tick grid: every signal follows a latent process
//! sampled once per tick and each message id transmits its signals every
//! `period_steps` ticks. Attacks are pure trace-to-trace transformations that
//! label exactly the records they fabricate or alter.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Label, SignalRecord};

#[derive(Debug, Error, PartialEq)]
pub enum AttackGenError {
    #[error("correlated generators form a cycle through signal {0}")]
    CyclicCorrelation(usize),
    #[error("invalid traffic spec: {0}")]
    InvalidSpec(String),
    #[error("attack interval [{start}, {end}) lies outside the trace")]
    IntervalOutOfRange { start: usize, end: usize },
    #[error("playback source window overlaps the attack window")]
    PlaybackSourceOverlap,
    #[error("message id `{0}` does not occur in the trace")]
    UnknownTarget(String),
    #[error("attack parameter missing or invalid: {0}")]
    BadParams(String),
}

fn half() -> f64 {
    0.5
}

fn default_amplitude() -> f64 {
    0.4
}

/// Latent process of one signal, evaluated once per tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Generator {
    /// `offset + amplitude · sin(2π · freq · t + phase)` plus Gaussian noise.
    Sine {
        /// Cycles per tick.
        freq: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        #[serde(default = "half")]
        offset: f64,
        #[serde(default)]
        noise: f64,
    },
    /// Gaussian random walk reflected into `[0, 1]`.
    RandomWalk {
        step: f64,
        #[serde(default = "half")]
        start: f64,
    },
    /// `offset + gain · source` plus Gaussian noise.
    Correlated {
        source: usize,
        gain: f64,
        #[serde(default)]
        offset: f64,
        #[serde(default)]
        noise: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdSpec {
    pub msg_id: String,
    /// Ticks between transmissions.
    pub period_steps: usize,
    pub signals: Vec<usize>,
    /// First transmission tick.
    #[serde(default)]
    pub offset_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficSpec {
    pub ids: Vec<IdSpec>,
    /// One generator per signal index.
    pub generators: Vec<Generator>,
    pub duration_steps: usize,
    pub seed: u64,
    /// Seconds per tick.
    #[serde(default = "default_step_seconds")]
    pub step_seconds: f64,
}

fn default_step_seconds() -> f64 {
    0.001
}

impl TrafficSpec {
    pub fn m(&self) -> usize {
        self.generators.len()
    }

    pub fn signal_names(&self) -> Vec<String> {
        (0..self.m()).map(|i| format!("s{i}")).collect()
    }

    pub fn id(&self, msg_id: &str) -> Option<&IdSpec> {
        self.ids.iter().find(|i| i.msg_id == msg_id)
    }

    pub fn validate(&self) -> Result<(), AttackGenError> {
        let m = self.m();
        let mut owner = vec![false; m];
        for id in &self.ids {
            if id.period_steps == 0 {
                return Err(AttackGenError::InvalidSpec(format!("id `{}` has period 0", id.msg_id)));
            }
            for &s in &id.signals {
                if s >= m || std::mem::replace(&mut owner[s], true) {
                    return Err(AttackGenError::InvalidSpec(format!("signal {s} is out of range or shared")));
                }
            }
        }
        if let Some(s) = owner.iter().position(|o| !o) {
            return Err(AttackGenError::InvalidSpec(format!("signal {s} is not carried by any id")));
        }
        if !(self.step_seconds > 0.0) {
            return Err(AttackGenError::InvalidSpec("step_seconds must be positive".into()));
        }
        for g in &self.generators {
            if let Generator::Correlated { source, .. } = g {
                if *source >= m {
                    return Err(AttackGenError::InvalidSpec(format!("correlation source {source} out of range")));
                }
            }
        }
        self.evaluation_order().map(|_| ())
    }

    /// Signals sorted so every correlation source precedes its dependents.
    fn evaluation_order(&self) -> Result<Vec<usize>, AttackGenError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        fn visit(i: usize, gens: &[Generator], marks: &mut [Mark], out: &mut Vec<usize>) -> Result<(), AttackGenError> {
            match marks[i] {
                Mark::Done => return Ok(()),
                Mark::Active => return Err(AttackGenError::CyclicCorrelation(i)),
                Mark::New => {}
            }
            marks[i] = Mark::Active;
            if let Generator::Correlated { source, .. } = gens[i] {
                visit(source, gens, marks, out)?;
            }
            marks[i] = Mark::Done;
            out.push(i);
            Ok(())
        }
        let mut marks = vec![Mark::New; self.m()];
        let mut out = Vec::with_capacity(self.m());
        for i in 0..self.m() {
            visit(i, &self.generators, &mut marks, &mut out)?;
        }
        Ok(out)
    }

    /// A twelve-signal, six-id vehicle-like bus used by the examples and tests.
    pub fn reference(duration_steps: usize, seed: u64) -> Self {
        use Generator::*;
        let sine = |freq: f64, phase: f64, noise: f64| Sine { freq, phase, amplitude: 0.4, offset: 0.5, noise };
        let corr = |source: usize, gain: f64, offset: f64, noise: f64| Correlated { source, gain, offset, noise };
        let id = |name: &str, period: usize, signals: Vec<usize>, offset: usize| IdSpec {
            msg_id: name.into(),
            period_steps: period,
            signals,
            offset_steps: offset,
        };
        Self {
            ids: vec![
                id("0A0", 4, vec![0, 1], 0),
                id("0B4", 5, vec![2, 3], 1),
                id("1C2", 10, vec![4, 5], 2),
                id("1D0", 10, vec![6, 7], 7),
                id("2E6", 20, vec![8, 9], 3),
                id("3F1", 50, vec![10, 11], 11),
            ],
            generators: vec![
                sine(1.0 / 700.0, 0.0, 0.005),
                corr(0, 0.8, 0.1, 0.01),
                sine(1.0 / 1300.0, 1.0, 0.005),
                corr(2, -0.9, 0.95, 0.01),
                corr(0, 0.7, 0.15, 0.02),
                RandomWalk { step: 0.01, start: 0.5 },
                sine(1.0 / 300.0, 2.0, 0.005),
                corr(6, 0.6, 0.2, 0.01),
                corr(2, 0.9, 0.05, 0.01),
                corr(5, 1.0, 0.0, 0.02),
                sine(1.0 / 2500.0, 0.5, 0.005),
                corr(10, -0.8, 0.9, 0.01),
            ],
            duration_steps,
            seed,
            step_seconds: 0.001,
        }
    }
}

/// Latent value of every signal at every tick, `values[signal][tick]`.
pub fn latent_signals(spec: &TrafficSpec) -> Result<Vec<Vec<f64>>, AttackGenError> {
    latent_signals_from(spec, 0)
}

/// Same as [`latent_signals`] with periodic generators advanced by `t0` ticks,
/// so consecutive files continue one timeline instead of restarting in phase.
pub fn latent_signals_from(spec: &TrafficSpec, t0: usize) -> Result<Vec<Vec<f64>>, AttackGenError> {
    spec.validate()?;
    let order = spec.evaluation_order()?;
    let m = spec.m();
    let n = spec.duration_steps;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let mut values = vec![vec![0.0; n]; m];
    let mut walk: Vec<f64> = spec
        .generators
        .iter()
        .map(|g| if let Generator::RandomWalk { start, .. } = g { *start } else { 0.0 })
        .collect();
    for t in 0..n {
        for &i in &order {
            let v = match &spec.generators[i] {
                Generator::Sine { freq, phase, amplitude, offset, noise } => {
                    let clean = offset + amplitude * (std::f64::consts::TAU * freq * (t0 + t) as f64 + phase).sin();
                    clean + noise * std_normal.sample(&mut rng)
                }
                Generator::RandomWalk { step, .. } => {
                    let mut x = walk[i] + step * std_normal.sample(&mut rng);
                    if x < 0.0 {
                        x = -x;
                    }
                    if x > 1.0 {
                        x = 2.0 - x;
                    }
                    walk[i] = x.clamp(0.0, 1.0);
                    walk[i]
                }
                Generator::Correlated { source, gain, offset, noise } => {
                    offset + gain * values[*source][t] + noise * std_normal.sample(&mut rng)
                }
            };
            values[i][t] = v;
        }
        for row in values.iter_mut() {
            row[t] = row[t].clamp(0.0, 1.0);
        }
    }
    Ok(values)
}

/// Clean, attack-free traffic for `spec`, ordered by tick then id declaration.
pub fn synth_normal(spec: &TrafficSpec) -> Result<Vec<SignalRecord>, AttackGenError> {
    synth_normal_from(spec, 0)
}

/// Clean traffic starting `t0` ticks into the generators' timeline. Record
/// times still start at zero.
pub fn synth_normal_from(spec: &TrafficSpec, t0: usize) -> Result<Vec<SignalRecord>, AttackGenError> {
    let latent = latent_signals_from(spec, t0)?;
    let mut records = Vec::new();
    for t in 0..spec.duration_steps {
        for id in &spec.ids {
            if t < id.offset_steps || (t - id.offset_steps) % id.period_steps != 0 {
                continue;
            }
            records.push(SignalRecord {
                time: t as f64 * spec.step_seconds,
                msg_id: id.msg_id.clone(),
                values: id.signals.iter().map(|&s| (s, latent[s][t])).collect(),
                label: Label::Normal,
            });
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Flooding,
    Suppress,
    Plateau,
    Continuous,
    Playback,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] =
        [AttackKind::Flooding, AttackKind::Suppress, AttackKind::Plateau, AttackKind::Continuous, AttackKind::Playback];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Flooding => "flooding",
            AttackKind::Suppress => "suppress",
            AttackKind::Plateau => "plateau",
            AttackKind::Continuous => "continuous",
            AttackKind::Playback => "playback",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackParams {
    /// Flooding: injected messages per legitimate period.
    pub multiplier: Option<f64>,
    /// Plateau: constant to broadcast; the value at the attack start when absent.
    pub value: Option<f64>,
    /// Continuous: change per tick relative to the value at the attack start.
    pub drift: Option<f64>,
    /// Playback: first tick of the recorded window.
    pub source_start: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub target_id: String,
    /// Masquerade only: the signals to overwrite, all of the id's signals when absent.
    #[serde(default)]
    pub signals: Option<Vec<usize>>,
    /// First tick of the attack.
    pub start_step: usize,
    pub duration_steps: usize,
    #[serde(default)]
    pub params: AttackParams,
}

impl AttackSpec {
    fn window(&self, dt: f64) -> (f64, f64) {
        (self.start_step as f64 * dt, (self.start_step + self.duration_steps) as f64 * dt)
    }
}

fn tick_of(time: f64, dt: f64) -> f64 {
    time / dt
}

fn in_window(time: f64, spec: &AttackSpec, dt: f64) -> bool {
    let t = tick_of(time, dt);
    t >= spec.start_step as f64 - 1e-9 && t < (spec.start_step + spec.duration_steps) as f64 - 1e-9
}

fn check_interval(trace: &[SignalRecord], spec: &AttackSpec, dt: f64) -> Result<(), AttackGenError> {
    let end = spec.start_step + spec.duration_steps;
    let last_tick = trace.last().map_or(0.0, |r| tick_of(r.time, dt));
    if (end as f64) > last_tick + 1.0 {
        return Err(AttackGenError::IntervalOutOfRange { start: spec.start_step, end });
    }
    if !trace.iter().any(|r| r.msg_id == spec.target_id) {
        return Err(AttackGenError::UnknownTarget(spec.target_id.clone()));
    }
    Ok(())
}

/// Legitimate transmission period of `msg_id`, in ticks, estimated from the
/// median inter-arrival time.
pub fn nominal_period(trace: &[SignalRecord], msg_id: &str, dt: f64) -> Option<f64> {
    let times: Vec<f64> = trace.iter().filter(|r| r.msg_id == msg_id && !r.label.is_attack()).map(|r| r.time).collect();
    let mut gaps: Vec<f64> = times.windows(2).map(|w| (w[1] - w[0]) / dt).filter(|g| *g > 0.0).collect();
    if gaps.is_empty() {
        return None;
    }
    gaps.sort_by(f64::total_cmp);
    Some(gaps[gaps.len() / 2])
}

/// Applies any attack kind.
pub fn inject(trace: &[SignalRecord], spec: &AttackSpec, dt: f64) -> Result<Vec<SignalRecord>, AttackGenError> {
    match spec.kind {
        AttackKind::Flooding => inject_flooding(trace, spec, dt),
        AttackKind::Suppress => inject_suppress(trace, spec, dt),
        AttackKind::Plateau | AttackKind::Continuous | AttackKind::Playback => inject_masquerade(trace, spec, dt),
    }
}

/// Fabrication: extra copies of the target's latest message at `multiplier`
/// times its nominal rate, on top of the legitimate traffic.
pub fn inject_flooding(trace: &[SignalRecord], spec: &AttackSpec, dt: f64) -> Result<Vec<SignalRecord>, AttackGenError> {
    check_interval(trace, spec, dt)?;
    let multiplier = spec.params.multiplier.unwrap_or(10.0);
    if !(multiplier > 0.0) {
        return Err(AttackGenError::BadParams("flooding multiplier must be positive".into()));
    }
    let period = nominal_period(trace, &spec.target_id, dt)
        .ok_or_else(|| AttackGenError::UnknownTarget(spec.target_id.clone()))?;
    let spacing = period / multiplier;
    let (start, end) = spec.window(dt);
    let mut out = Vec::with_capacity(trace.len() + (spec.duration_steps as f64 / spacing) as usize + 1);
    let mut latest: Option<&SignalRecord> = None;
    let mut k = 0usize;
    let next_injection = |k: usize| (spec.start_step as f64 + k as f64 * spacing) * dt;
    for record in trace {
        // injections scheduled strictly before this record
        while let Some(src) = latest.filter(|_| next_injection(k) < end - 1e-12 && next_injection(k) < record.time - 1e-12) {
            out.push(SignalRecord { time: next_injection(k), label: Label::Attack, ..src.clone() });
            k += 1;
        }
        if record.msg_id == spec.target_id && !record.label.is_attack() {
            latest = Some(record);
        }
        out.push(record.clone());
        // injections that coincide with this record's tick follow it
        while let Some(src) =
            latest.filter(|_| next_injection(k) < end - 1e-12 && (next_injection(k) - record.time).abs() <= 1e-12)
        {
            out.push(SignalRecord { time: next_injection(k), label: Label::Attack, ..src.clone() });
            k += 1;
        }
    }
    let _ = start;
    Ok(out)
}

/// Suspension: the target's messages disappear during the window; every
/// remaining record inside the window is labelled as attacked.
pub fn inject_suppress(trace: &[SignalRecord], spec: &AttackSpec, dt: f64) -> Result<Vec<SignalRecord>, AttackGenError> {
    if spec.duration_steps == 0 {
        return Ok(trace.to_vec());
    }
    check_interval(trace, spec, dt)?;
    Ok(trace
        .iter()
        .filter(|r| !(r.msg_id == spec.target_id && in_window(r.time, spec, dt)))
        .map(|r| {
            let mut r = r.clone();
            if in_window(r.time, spec, dt) {
                r.label = Label::Attack;
            }
            r
        })
        .collect())
}

/// Masquerade: the target's messages keep their timing but carry forged
/// values. Only records whose values actually change are labelled.
pub fn inject_masquerade(trace: &[SignalRecord], spec: &AttackSpec, dt: f64) -> Result<Vec<SignalRecord>, AttackGenError> {
    if spec.duration_steps == 0 {
        return Ok(trace.to_vec());
    }
    check_interval(trace, spec, dt)?;
    let targets: Vec<usize> = match &spec.signals {
        Some(s) => s.clone(),
        None => trace.iter().find(|r| r.msg_id == spec.target_id).unwrap().values.iter().map(|&(i, _)| i).collect(),
    };
    let is_target = |r: &SignalRecord| r.msg_id == spec.target_id && in_window(r.time, spec, dt);
    // value of each targeted signal at the attack start
    let start_values: HashMap<usize, f64> = {
        let mut v = HashMap::new();
        for r in trace.iter().filter(|r| r.msg_id == spec.target_id) {
            if tick_of(r.time, dt) > spec.start_step as f64 + 1e-9 {
                break;
            }
            for &(i, x) in &r.values {
                v.insert(i, x);
            }
        }
        if v.is_empty() {
            // the attack opens before the first legitimate message: use the first one
            if let Some(r) = trace.iter().find(|r| r.msg_id == spec.target_id) {
                v.extend(r.values.iter().copied());
            }
        }
        v
    };
    let playback: Vec<&SignalRecord> = if spec.kind == AttackKind::Playback {
        let source = spec
            .params
            .source_start
            .ok_or_else(|| AttackGenError::BadParams("playback needs source_start".into()))?;
        let overlap = source < spec.start_step + spec.duration_steps && spec.start_step < source + spec.duration_steps;
        if overlap {
            return Err(AttackGenError::PlaybackSourceOverlap);
        }
        let window = AttackSpec { start_step: source, ..spec.clone() };
        trace.iter().filter(|r| r.msg_id == spec.target_id && in_window(r.time, &window, dt)).collect()
    } else {
        Vec::new()
    };
    let mut replaced = 0usize;
    let mut out = Vec::with_capacity(trace.len());
    for record in trace {
        let mut r = record.clone();
        if is_target(record) {
            let elapsed = tick_of(record.time, dt) - spec.start_step as f64;
            let mut changed = false;
            for (i, x) in r.values.iter_mut() {
                if !targets.contains(i) {
                    continue;
                }
                let start = start_values.get(i).copied().unwrap_or(*x);
                let forged = match spec.kind {
                    AttackKind::Plateau => spec.params.value.unwrap_or(start),
                    AttackKind::Continuous => (start + spec.params.drift.unwrap_or(0.0) * elapsed).clamp(0.0, 1.0),
                    AttackKind::Playback => match playback.get(replaced) {
                        Some(src) => src.values.iter().find(|(j, _)| j == i).map_or(*x, |&(_, v)| v),
                        None => *x,
                    },
                    _ => unreachable!(),
                };
                if forged != *x {
                    *x = forged;
                    changed = true;
                }
            }
            if changed {
                r.label = Label::Attack;
            }
            replaced += 1;
        }
        out.push(r);
    }
    Ok(out)
}

/// One attack occurrence located in a final trace. Steps are record indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackEvent {
    pub kind: AttackKind,
    pub start_step: u64,
    pub end_step: u64,
    pub start_time: f64,
    pub end_time: f64,
}

/// Locates an injected attack in the final trace: the first and last
/// attack-labelled records inside its window. For suppression the event starts
/// at the first record after the first missed transmission.
pub fn locate_event(trace: &[SignalRecord], spec: &AttackSpec, dt: f64, first_missed_tick: Option<f64>) -> Option<AttackEvent> {
    let inside: Vec<usize> =
        (0..trace.len()).filter(|&i| trace[i].label.is_attack() && in_window(trace[i].time, spec, dt)).collect();
    let mut first = *inside.first()?;
    let last = *inside.last()?;
    if let Some(missed) = first_missed_tick {
        first = (first..=last).find(|&i| tick_of(trace[i].time, dt) >= missed - 1e-9)?;
    }
    Some(AttackEvent {
        kind: spec.kind,
        start_step: first as u64,
        end_step: last as u64,
        start_time: trace[first].time,
        end_time: trace[last].time,
    })
}

/// Applies a list of same-trace attacks in order and returns the labelled trace
/// with its events. Attack windows must not overlap.
pub fn apply_attacks(
    clean: &[SignalRecord],
    specs: &[AttackSpec],
    dt: f64,
) -> Result<(Vec<SignalRecord>, Vec<AttackEvent>), AttackGenError> {
    let mut sorted: Vec<&AttackSpec> = specs.iter().collect();
    sorted.sort_by_key(|s| s.start_step);
    for pair in sorted.windows(2) {
        if pair[0].start_step + pair[0].duration_steps > pair[1].start_step {
            return Err(AttackGenError::BadParams("attack windows overlap".into()));
        }
    }
    let mut trace = clean.to_vec();
    let mut missed = Vec::with_capacity(sorted.len());
    for spec in &sorted {
        missed.push(if spec.kind == AttackKind::Suppress {
            trace
                .iter()
                .find(|r| r.msg_id == spec.target_id && in_window(r.time, spec, dt))
                .map(|r| tick_of(r.time, dt))
        } else {
            None
        });
        trace = inject(&trace, spec, dt)?;
    }
    let events = sorted
        .iter()
        .zip(missed)
        .filter_map(|(spec, m)| locate_event(&trace, spec, dt, m))
        .collect();
    Ok((trace, events))
}

/// `count` evenly spaced attack windows of one kind. Playback without an
/// explicit source replays the clean stretch just before each window.
pub fn spaced_attacks(
    kind: AttackKind,
    target_id: &str,
    signals: Option<Vec<usize>>,
    params: AttackParams,
    first_start: usize,
    duration: usize,
    gap: usize,
    count: usize,
) -> Vec<AttackSpec> {
    (0..count)
        .map(|k| {
            let start_step = first_start + k * (duration + gap);
            let mut params = params.clone();
            if kind == AttackKind::Playback && params.source_start.is_none() {
                params.source_start = Some(start_step.saturating_sub(duration + gap / 2));
            }
            AttackSpec { kind, target_id: target_id.into(), signals: signals.clone(), start_step, duration_steps: duration, params }
        })
        .collect()
}

/// One attacked test file of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTest {
    pub name: String,
    pub duration_steps: usize,
    pub attacks: Vec<AttackSpec>,
}

/// A full synthetic dataset: clean training traffic, optional clean
/// calibration and hold-out traffic, and attacked test files. Files follow
/// each other on one timeline, each with its own noise seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Generators and ids; `duration_steps` is the training length.
    pub traffic: TrafficSpec,
    #[serde(default)]
    pub calibration_steps: usize,
    #[serde(default)]
    pub holdout_steps: usize,
    #[serde(default)]
    pub tests: Vec<ScenarioTest>,
}

impl Scenario {
    /// Desk-scale evaluation suite on the reference bus: one attacked file per
    /// attack family, each with `events` separated attack windows.
    pub fn desk(train_steps: usize, calibration_steps: usize, holdout_steps: usize, events: usize, seed: u64) -> Self {
        let (duration, gap, lead) = (3000, 6000, 5000);
        let file_len = lead + events * (duration + gap);
        let test = |name: &str, kind: AttackKind, target: &str, signals: Option<Vec<usize>>, params: AttackParams| ScenarioTest {
            name: name.into(),
            duration_steps: file_len,
            attacks: spaced_attacks(kind, target, signals, params, lead, duration, gap, events),
        };
        let mut scenario = Self {
            traffic: TrafficSpec::reference(train_steps, seed),
            calibration_steps,
            holdout_steps,
            tests: vec![
                test("flooding", AttackKind::Flooding, "0A0", None, AttackParams { multiplier: Some(10.0), ..Default::default() }),
                test("suppress", AttackKind::Suppress, "1C2", None, AttackParams::default()),
                test("plateau", AttackKind::Plateau, "0A0", Some(vec![0]), AttackParams::default()),
                test(
                    "continuous",
                    AttackKind::Continuous,
                    "0B4",
                    Some(vec![2]),
                    AttackParams { drift: Some(1e-4), ..Default::default() },
                ),
                test("playback", AttackKind::Playback, "1D0", Some(vec![6]), AttackParams::default()),
            ],
        };
        // replay from a recording taken slightly more than a window earlier, out of phase
        for a in &mut scenario.tests[4].attacks {
            a.params.source_start = Some(a.start_step - duration - 1150);
        }
        scenario
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrace {
    pub name: String,
    pub records: Vec<SignalRecord>,
    pub events: Vec<AttackEvent>,
}

impl Scenario {
    /// Generates every file of the scenario in timeline order.
    pub fn generate(&self) -> Result<Vec<SynthTrace>, AttackGenError> {
        self.traffic.validate()?;
        let mut files: Vec<(String, usize, &[AttackSpec])> = vec![("train".into(), self.traffic.duration_steps, &[])];
        if self.calibration_steps > 0 {
            files.push(("calibration".into(), self.calibration_steps, &[]));
        }
        if self.holdout_steps > 0 {
            files.push(("holdout".into(), self.holdout_steps, &[]));
        }
        for t in &self.tests {
            if files.iter().any(|(n, _, _)| *n == t.name) {
                return Err(AttackGenError::InvalidSpec(format!("duplicate file name `{}`", t.name)));
            }
            files.push((t.name.clone(), t.duration_steps, &t.attacks));
        }
        let mut t0 = 0;
        let mut out = Vec::with_capacity(files.len());
        for (k, (name, duration, attacks)) in files.into_iter().enumerate() {
            let spec = TrafficSpec {
                duration_steps: duration,
                seed: self.traffic.seed.wrapping_add(k as u64),
                ..self.traffic.clone()
            };
            let clean = synth_normal_from(&spec, t0)?;
            let (records, events) = apply_attacks(&clean, attacks, spec.step_seconds)?;
            out.push(SynthTrace { name, records, events });
            t0 += duration;
        }
        Ok(out)
    }
}
