//! Trajectory ingestion, serialization, and controlled noise injection.
//!
//! Input format is plain UTF-8 CSV, one row per observation:
//! `t,agent_id,agent_type,x,y` (header optional). Rows must be time-ordered
//! per agent; frame indices are integers, positions are meters in a global
//! frame.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::centrality::CentralitySeries;
use crate::error::{Error, Result};

/// Opaque vehicle identifier as it appears in the data.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentType {
    Car,
    Bus,
    Truck,
    Other,
}

impl AgentType {
    fn parse(s: &str) -> Self {
        match s {
            "car" => Self::Car,
            "bus" => Self::Bus,
            "truck" => Self::Truck,
            _ => Self::Other,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Car => "car",
            Self::Bus => "bus",
            Self::Truck => "truck",
            Self::Other => "other",
        }
    }
}

/// One observation row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub t: u64,
    pub agent: AgentId,
    pub agent_type: AgentType,
    pub x: f64,
    pub y: f64,
}

/// A frame's agent → position map.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub t: u64,
    positions: BTreeMap<AgentId, [f64; 2]>,
}

impl Frame {
    pub fn positions(&self) -> &BTreeMap<AgentId, [f64; 2]> {
        &self.positions
    }

    pub fn position(&self, agent: &AgentId) -> Option<[f64; 2]> {
        self.positions.get(agent).copied()
    }
}

/// The raw input of the whole pipeline: time-indexed positions per agent.
///
/// Dense agent indices are assigned in first-appearance order and are stable
/// across serialize/parse round trips.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    frames: Vec<Frame>,
    frame_rate_hz: f64,
    agent_order: Vec<AgentId>,
    agent_index: BTreeMap<AgentId, usize>,
    agent_types: BTreeMap<AgentId, AgentType>,
    tracks: BTreeMap<AgentId, Vec<(u64, [f64; 2])>>,
}

impl TrajectorySet {
    /// Builds a set from observation rows. Rows must be strictly
    /// time-increasing per agent in input order; duplicate `(t, agent)`
    /// pairs are rejected.
    pub fn from_points(points: Vec<TrajectoryPoint>, frame_rate_hz: f64) -> Result<Self> {
        if !(frame_rate_hz > 0.0 && frame_rate_hz.is_finite()) {
            return Err(Error::Domain(format!(
                "frame_rate_hz must be positive, got {frame_rate_hz}"
            )));
        }
        if points.is_empty() {
            return Err(Error::EmptyInput("no trajectory rows".into()));
        }

        let mut agent_order: Vec<AgentId> = Vec::new();
        let mut agent_index: BTreeMap<AgentId, usize> = BTreeMap::new();
        let mut agent_types: BTreeMap<AgentId, AgentType> = BTreeMap::new();
        let mut tracks: BTreeMap<AgentId, Vec<(u64, [f64; 2])>> = BTreeMap::new();
        let mut frame_map: BTreeMap<u64, BTreeMap<AgentId, [f64; 2]>> = BTreeMap::new();

        for p in points {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(Error::Domain(format!(
                    "non-finite position for agent {} at frame {}",
                    p.agent, p.t
                )));
            }
            if !agent_index.contains_key(&p.agent) {
                agent_index.insert(p.agent.clone(), agent_order.len());
                agent_order.push(p.agent.clone());
                agent_types.insert(p.agent.clone(), p.agent_type);
            }
            let track = tracks.entry(p.agent.clone()).or_default();
            if let Some(&(last_t, _)) = track.last() {
                if p.t <= last_t {
                    return Err(Error::Ordering {
                        agent: p.agent.0.clone(),
                        frame: p.t,
                    });
                }
            }
            track.push((p.t, [p.x, p.y]));
            frame_map.entry(p.t).or_default().insert(p.agent, [p.x, p.y]);
        }

        let frames = frame_map
            .into_iter()
            .map(|(t, positions)| Frame { t, positions })
            .collect();

        Ok(Self {
            frames,
            frame_rate_hz,
            agent_order,
            agent_index,
            agent_types,
            tracks,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn frame_at(&self, t: u64) -> Option<&Frame> {
        self.frames
            .binary_search_by_key(&t, |f| f.t)
            .ok()
            .map(|i| &self.frames[i])
    }

    /// Dense index per agent, assigned in first-appearance order.
    pub fn agent_index(&self) -> &BTreeMap<AgentId, usize> {
        &self.agent_index
    }

    /// Agents in dense-index order.
    pub fn agents(&self) -> &[AgentId] {
        &self.agent_order
    }

    pub fn agent_type(&self, agent: &AgentId) -> Option<AgentType> {
        self.agent_types.get(agent).copied()
    }

    /// Time-ordered observations of one agent.
    pub fn track(&self, agent: &AgentId) -> Option<&[(u64, [f64; 2])]> {
        self.tracks.get(agent).map(|v| v.as_slice())
    }

    /// First and last frame at which the agent is observed.
    pub fn presence(&self, agent: &AgentId) -> Option<(u64, u64)> {
        let track = self.tracks.get(agent)?;
        Some((track.first()?.0, track.last()?.0))
    }

    /// Flattens back to observation rows, frames in time order and agents in
    /// dense-index order within a frame (so a reparse reassigns identical
    /// indices).
    pub fn to_points(&self) -> Vec<TrajectoryPoint> {
        let mut out = Vec::new();
        for frame in &self.frames {
            let mut present: Vec<&AgentId> = frame.positions.keys().collect();
            present.sort_by_key(|a| self.agent_index[*a]);
            for agent in present {
                let [x, y] = frame.positions[agent];
                out.push(TrajectoryPoint {
                    t: frame.t,
                    agent: agent.clone(),
                    agent_type: self.agent_types[agent],
                    x,
                    y,
                });
            }
        }
        out
    }
}

/// Parses `t,agent_id,agent_type,x,y` CSV. The header row is optional and
/// detected by a non-numeric first field.
pub fn parse_trajectory_csv(text: &str, frame_rate_hz: f64) -> Result<TrajectorySet> {
    let mut points = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if idx == 0 && fields.first().is_some_and(|f| f.parse::<u64>().is_err()) {
            continue; // header
        }
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let t: u64 = fields[0].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad frame index {:?}", fields[0]),
        })?;
        if fields[1].is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty agent id".into(),
            });
        }
        let parse_coord = |s: &str, name: &str| -> Result<f64> {
            let v: f64 = s.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad {name} {s:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("non-finite {name} {s:?}"),
                });
            }
            Ok(v)
        };
        let x = parse_coord(fields[3], "x")?;
        let y = parse_coord(fields[4], "y")?;
        points.push(TrajectoryPoint {
            t,
            agent: AgentId::from(fields[1]),
            agent_type: AgentType::parse(fields[2]),
            x,
            y,
        });
    }
    if points.is_empty() {
        return Err(Error::EmptyInput("no data rows in trajectory CSV".into()));
    }
    // Duplicate (t, agent) shows up as a non-increasing frame; report it with
    // the duplicate wording the ordering check cannot distinguish.
    TrajectorySet::from_points(points, frame_rate_hz)
}

/// Writes the canonical CSV form (header included). Floats use the shortest
/// round-trip representation, so parse ∘ write is the identity.
pub fn write_trajectory_csv(ts: &TrajectorySet) -> String {
    let mut out = String::from("t,agent_id,agent_type,x,y\n");
    for p in ts.to_points() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.t,
            p.agent,
            p.agent_type.as_str(),
            p.x,
            p.y
        ));
    }
    out
}

/// Perturbs every position with independent zero-mean Gaussian noise of
/// standard deviation `sigma` meters. Deterministic per seed; `sigma = 0`
/// returns the input unchanged.
pub fn inject_position_noise(ts: &TrajectorySet, sigma: f64, seed: u64) -> Result<TrajectorySet> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::Domain(format!("sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(ts.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = ts.to_points();
    for p in &mut points {
        let (nx, ny) = normal_pair(&mut rng);
        p.x += sigma * nx;
        p.y += sigma * ny;
    }
    TrajectorySet::from_points(points, ts.frame_rate_hz)
}

/// Adds i.i.d. uniform noise on [−epsilon, +epsilon] to every sample of a
/// centrality series. Draws scale linearly with epsilon for a fixed seed.
pub fn inject_series_noise(
    series: &CentralitySeries,
    epsilon: f64,
    seed: u64,
) -> Result<CentralitySeries> {
    if epsilon < 0.0 || !epsilon.is_finite() {
        return Err(Error::Domain(format!(
            "epsilon must be non-negative, got {epsilon}"
        )));
    }
    if epsilon == 0.0 {
        return Ok(series.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = series
        .values()
        .iter()
        .map(|v| v + epsilon * rng.gen_range(-1.0..=1.0))
        .collect();
    Ok(series.with_values(values))
}

/// Plot-data CSV (`t,value`) for a centrality series or style curve.
pub fn write_series_csv(window_start: u64, values: &[f64]) -> String {
    let mut out = String::from("t,value\n");
    for (i, v) in values.iter().enumerate() {
        out.push_str(&format!("{},{}\n", window_start + i as u64, v));
    }
    out
}

/// Box–Muller transform; two independent standard normal draws.
fn normal_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}
