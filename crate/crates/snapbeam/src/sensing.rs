//! Grasp-mode logic as a deterministic finite-state machine over pressure
//! samples, plus pressure-trace peak analysis.
//!
//! Two trigger styles mirror the two ways a suction palm can commit to a
//! grasp: `Passive` treats the input as a contact-force sample and snaps the
//! moment it reaches the mechanical trigger threshold (no electronics — this
//! emulates the structure itself), `Active` treats the input as a vacuum
//! reading and closes once the reading has stayed above a set threshold for
//! a debounce count, reopening only after it falls below the threshold minus
//! a hysteresis band. Readings use the convention that vacuum magnitude is
//! positive, so "exceeds the threshold" reads naturally for suction.

use serde::Serialize;
use thiserror::Error;

/// One reading of the palm sensor. `t` is the sample index (strictly
/// increasing within a trace); `p` is the reading in dimensionless sensor
/// units, vacuum magnitude positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PressureSample {
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GraspMode {
    Passive,
    Active,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GraspPhase {
    Open,
    Closing,
    Closed,
    Opening,
}

impl GraspPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            GraspPhase::Open => "open",
            GraspPhase::Closing => "closing",
            GraspPhase::Closed => "closed",
            GraspPhase::Opening => "opening",
        }
    }
}

impl std::fmt::Display for GraspPhase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspControllerConfig {
    pub mode: GraspMode,
    /// Active mode: reading above this closes, below this minus the
    /// hysteresis band reopens.
    pub vacuum_threshold: f64,
    pub hysteresis_band: f64,
    /// Consecutive samples a condition must hold in active mode.
    pub debounce: usize,
    /// Passive mode: contact force at which the palm snaps closed,
    /// typically the trigger force of the bistability analysis.
    pub trigger_force_threshold: f64,
}

impl GraspControllerConfig {
    pub fn check(&self) -> Result<(), SensingError> {
        if !(self.hysteresis_band >= 0.0 && self.hysteresis_band.is_finite()) {
            return Err(SensingError::InvalidConfig(
                "hysteresis_band must be finite and non-negative".into(),
            ));
        }
        if self.debounce < 1 {
            return Err(SensingError::InvalidConfig(
                "debounce must be at least 1".into(),
            ));
        }
        if !self.vacuum_threshold.is_finite() || !self.trigger_force_threshold.is_finite() {
            return Err(SensingError::InvalidConfig(
                "thresholds must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// One emitted transition: the sample index it fired on, the edge name, and
/// the phase just entered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GraspEvent {
    pub t: f64,
    pub event: &'static str,
    pub phase: GraspPhase,
}

/// Controller state folded over a trace. Phases advance only along
/// OPEN -> CLOSING -> CLOSED -> OPENING -> OPEN; at most one transition
/// fires per sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GraspState {
    pub phase: GraspPhase,
    /// Consecutive samples that satisfied the pending transition's condition.
    pub streak: usize,
    pub events: Vec<GraspEvent>,
}

impl Default for GraspPhase {
    fn default() -> Self {
        GraspPhase::Open
    }
}

impl GraspState {
    pub fn new() -> Self {
        Self::default()
    }
}

#[derive(Debug, Error)]
pub enum SensingError {
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("trace parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn next_phase(phase: GraspPhase) -> (GraspPhase, &'static str) {
    match phase {
        GraspPhase::Open => (GraspPhase::Closing, "open_to_closing"),
        GraspPhase::Closing => (GraspPhase::Closed, "closing_to_closed"),
        GraspPhase::Closed => (GraspPhase::Opening, "closed_to_opening"),
        GraspPhase::Opening => (GraspPhase::Open, "opening_to_open"),
    }
}

/// Advances the controller by one sample. Total on valid inputs; the config
/// is assumed checked (see [`run_controller`]).
pub fn controller_step(
    mut state: GraspState,
    sample: &PressureSample,
    config: &GraspControllerConfig,
) -> GraspState {
    let (met, required) = match config.mode {
        GraspMode::Passive => {
            let met = match state.phase {
                // The mechanical snap: commits at the first sample at or
                // above the trigger force, completes on the next one, and
                // stays latched — pressure cannot un-snap the palm.
                GraspPhase::Open => sample.p >= config.trigger_force_threshold,
                GraspPhase::Closing => true,
                GraspPhase::Closed | GraspPhase::Opening => false,
            };
            (met, 1)
        }
        GraspMode::Active => {
            let met = match state.phase {
                GraspPhase::Open | GraspPhase::Closing => sample.p > config.vacuum_threshold,
                GraspPhase::Closed | GraspPhase::Opening => {
                    sample.p < config.vacuum_threshold - config.hysteresis_band
                }
            };
            (met, config.debounce)
        }
    };

    if met {
        state.streak += 1;
        if state.streak >= required {
            let (phase, event) = next_phase(state.phase);
            state.phase = phase;
            state.streak = 0;
            state.events.push(GraspEvent {
                t: sample.t,
                event,
                phase,
            });
        }
    } else {
        state.streak = 0;
    }
    state
}

/// Folds a whole trace through the controller after validating the config
/// and the trace's strictly increasing sample indices.
pub fn run_controller(
    trace: &[PressureSample],
    config: &GraspControllerConfig,
) -> Result<GraspState, SensingError> {
    config.check()?;
    for pair in trace.windows(2) {
        if !(pair[1].t > pair[0].t) {
            return Err(SensingError::InvalidTrace(format!(
                "sample index {} does not increase past {}",
                pair[1].t, pair[0].t
            )));
        }
    }
    Ok(trace
        .iter()
        .fold(GraspState::new(), |state, sample| {
            controller_step(state, sample, config)
        }))
}

/// A local maximum of the trace that stands out by at least the requested
/// topographic prominence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Peak {
    pub t: f64,
    pub p: f64,
}

/// Local maxima (plateau-aware, reported at the plateau middle) filtered by
/// topographic prominence: the drop from the peak to the higher of the two
/// valley floors separating it from higher ground (or from the trace ends).
/// Endpoints are never peaks. Uses only pressure values and sample order, so
/// the result is invariant under any increasing re-indexing of `t`.
pub fn detect_peaks(trace: &[PressureSample], min_prominence: f64) -> Vec<Peak> {
    let p: Vec<f64> = trace.iter().map(|s| s.p).collect();
    let n = p.len();
    let mut maxima = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if p[i] > p[i - 1] {
            // Left edge of a candidate; absorb any plateau.
            let start = i;
            let mut end = i;
            while end + 1 < n && p[end + 1] == p[start] {
                end += 1;
            }
            if end + 1 < n && p[end + 1] < p[start] {
                maxima.push((start + end) / 2);
            }
            i = end + 1;
        } else {
            i += 1;
        }
    }

    maxima
        .into_iter()
        .filter_map(|idx| {
            let h = p[idx];
            let mut left_floor = f64::INFINITY;
            for k in (0..idx).rev() {
                if p[k] > h {
                    break;
                }
                left_floor = left_floor.min(p[k]);
            }
            let mut right_floor = f64::INFINITY;
            for k in idx + 1..n {
                if p[k] > h {
                    break;
                }
                right_floor = right_floor.min(p[k]);
            }
            let prominence = h - left_floor.max(right_floor);
            (prominence >= min_prominence).then(|| Peak {
                t: trace[idx].t,
                p: h,
            })
        })
        .collect()
}

/// Parses a pressure trace from CSV text with header `t,p`. Errors carry the
/// 1-based line number.
pub fn parse_trace_csv(input: &str) -> Result<Vec<PressureSample>, SensingError> {
    let mut samples = Vec::new();
    let mut saw_header = false;
    for (idx, raw) in input.lines().enumerate() {
        let line = idx + 1;
        let text = raw.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        if !saw_header {
            if text != "t,p" {
                return Err(SensingError::Parse {
                    line,
                    message: format!("expected header 't,p', found '{text}'"),
                });
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() != 2 {
            return Err(SensingError::Parse {
                line,
                message: format!("expected 2 comma-separated fields, found {}", fields.len()),
            });
        }
        let parse = |s: &str, name: &str| -> Result<f64, SensingError> {
            s.trim().parse::<f64>().map_err(|_| SensingError::Parse {
                line,
                message: format!("invalid {name} value '{}'", s.trim()),
            })
        };
        let t = parse(fields[0], "t")?;
        let p = parse(fields[1], "p")?;
        if let Some(last) = samples.last() {
            let last: &PressureSample = last;
            if !(t > last.t) {
                return Err(SensingError::Parse {
                    line,
                    message: format!("t must be strictly increasing: {t} follows {}", last.t),
                });
            }
        }
        samples.push(PressureSample { t, p });
    }
    if !saw_header {
        return Err(SensingError::Parse {
            line: 1,
            message: "missing header 't,p'".into(),
        });
    }
    Ok(samples)
}

/// Event log as CSV text with header `t,event,phase`.
pub fn events_csv(events: &[GraspEvent]) -> String {
    let mut out = String::from("t,event,phase\n");
    for e in events {
        out.push_str(&format!("{},{},{}\n", e.t, e.event, e.phase));
    }
    out
}
