//! Per-frame traffic-graph snapshots and the cumulative adjacency matrix.
//!
//! Two vehicles are connected in a snapshot iff their Euclidean distance is
//! below the proximity threshold μ. The cumulative matrix A records the
//! distance at first encounter and never forgets an edge: a new entry is
//! inserted only while no prior edge exists *and* one endpoint is strictly
//! faster than the other at that frame. When more than `capacity` distinct
//! vehicles have been observed, A re-initializes to the identity and row
//! assignment restarts; behavior outputs computed before the reset are
//! unaffected.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::io::{AgentId, TrajectorySet};

/// Undirected weighted proximity graph over the vehicles present at one
/// frame. Edges are stored once with `i < j` (indices into `vertices`).
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSnapshot {
    pub t: u64,
    vertices: Vec<AgentId>,
    edges: Vec<(usize, usize, f64)>,
    mu: f64,
}

impl GraphSnapshot {
    pub fn vertices(&self) -> &[AgentId] {
        &self.vertices
    }

    /// Edges as (i, j, weight) with i < j; weight is the Euclidean distance
    /// in meters, 0 ≤ weight < μ (0 only for coincident positions).
    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Adjacency lists over vertex indices, for shortest-path work.
    pub fn adjacency_lists(&self) -> Vec<Vec<(usize, f64)>> {
        let mut lists = vec![Vec::new(); self.vertices.len()];
        for &(i, j, w) in &self.edges {
            lists[i].push((j, w));
            lists[j].push((i, w));
        }
        lists
    }
}

/// Builds the proximity graph for one frame: edge (i, j) iff
/// ‖v_i − v_j‖ < μ, weighted by that distance.
pub fn build_snapshot(
    t: u64,
    positions: &BTreeMap<AgentId, [f64; 2]>,
    mu: f64,
) -> Result<GraphSnapshot> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Domain(format!("mu must be positive, got {mu}")));
    }
    for (agent, p) in positions {
        if !p[0].is_finite() || !p[1].is_finite() {
            return Err(Error::Domain(format!("non-finite position for agent {agent}")));
        }
    }
    let vertices: Vec<AgentId> = positions.keys().cloned().collect();
    let mut edges = Vec::new();
    for i in 0..vertices.len() {
        for j in (i + 1)..vertices.len() {
            let a = positions[&vertices[i]];
            let b = positions[&vertices[j]];
            let w = euclidean(a, b);
            if w < mu {
                edges.push((i, j, w));
            }
        }
    }
    Ok(GraphSnapshot {
        t,
        vertices,
        edges,
        mu,
    })
}

/// Snapshot of the frame `t` of a trajectory set.
pub fn snapshot_at(ts: &TrajectorySet, t: u64, mu: f64) -> Result<GraphSnapshot> {
    let frame = ts
        .frame_at(t)
        .ok_or_else(|| Error::Range(format!("no frame {t} in trajectory set")))?;
    build_snapshot(t, frame.positions(), mu)
}

fn euclidean(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Cumulative N×N adjacency matrix plus agent↔row bookkeeping.
///
/// Rows are stored sparsely (recorded off-diagonal entries only); the
/// diagonal is implicitly 1. `to_dense` materializes the full matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyState {
    capacity: usize,
    dwell_frames: u64,
    t: Option<u64>,
    rows: Vec<BTreeMap<usize, f64>>,
    row_of: BTreeMap<AgentId, usize>,
    agent_of: Vec<Option<AgentId>>,
    free_rows: Vec<usize>,
    last_speed: BTreeMap<AgentId, f64>,
    last_seen: BTreeMap<AgentId, u64>,
    epoch: u64,
}

/// Comparable view of the matrix content, used by the rebuild oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyView {
    pub row_of: BTreeMap<AgentId, usize>,
    pub entries: BTreeMap<(usize, usize), f64>,
    pub epoch: u64,
}

impl AdjacencyState {
    pub fn new(capacity: usize, dwell_frames: u64) -> Self {
        Self {
            capacity,
            dwell_frames,
            t: None,
            rows: Vec::new(),
            row_of: BTreeMap::new(),
            agent_of: Vec::new(),
            free_rows: Vec::new(),
            last_speed: BTreeMap::new(),
            last_seen: BTreeMap::new(),
            epoch: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn t(&self) -> Option<u64> {
        self.t
    }

    /// Number of identity re-initializations so far.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn row_of(&self, agent: &AgentId) -> Option<usize> {
        self.row_of.get(agent).copied()
    }

    /// Matrix entry; diagonal is 1, unrecorded off-diagonals are 0.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 1.0;
        }
        self.rows
            .get(i)
            .and_then(|r| r.get(&j))
            .copied()
            .unwrap_or(0.0)
    }

    /// Count of nonzero off-diagonal entries in the agent's row.
    pub fn degree(&self, agent: &AgentId) -> Result<usize> {
        let row = self
            .row_of(agent)
            .ok_or_else(|| Error::Lookup(format!("agent {agent} not mapped to a row")))?;
        Ok(self.rows[row].len())
    }

    pub fn view(&self) -> AdjacencyView {
        let mut entries = BTreeMap::new();
        for (i, row) in self.rows.iter().enumerate() {
            for (&j, &w) in row {
                entries.insert((i, j), w);
            }
        }
        AdjacencyView {
            row_of: self.row_of.clone(),
            entries,
            epoch: self.epoch,
        }
    }

    /// Dense capacity×capacity materialization (identity diagonal).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::identity(self.capacity, self.capacity);
        for (i, row) in self.rows.iter().enumerate() {
            for (&j, &w) in row {
                m[(i, j)] = w;
            }
        }
        m
    }

    /// Dense CSV dump for debugging.
    pub fn dense_csv(&self) -> String {
        let m = self.to_dense();
        let mut out = String::new();
        for i in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    fn reinitialize(&mut self) {
        self.rows.clear();
        self.row_of.clear();
        self.agent_of.clear();
        self.free_rows.clear();
        self.last_seen.clear();
        self.last_speed.clear();
        self.epoch += 1;
    }

    fn admit(&mut self, agent: &AgentId) -> usize {
        let row = if let Some(pos) = self.free_rows.first().copied() {
            self.free_rows.remove(0);
            pos
        } else {
            self.rows.push(BTreeMap::new());
            self.agent_of.push(None);
            self.rows.len() - 1
        };
        self.rows[row].clear();
        self.agent_of[row] = Some(agent.clone());
        self.row_of.insert(agent.clone(), row);
        row
    }

    fn mapped_count(&self) -> usize {
        self.row_of.len()
    }

    /// Applies one frame: admits unseen vehicles, inserts new edges per the
    /// faster-endpoint rule, retains existing entries, drops edgeless
    /// vehicles that stayed out of view past the dwell limit.
    ///
    /// `speeds` holds the most recent speed estimate per present vehicle
    /// (missing entries are treated as 0, the first-appearance default).
    pub fn update(
        &mut self,
        snapshot: &GraphSnapshot,
        speeds: &BTreeMap<AgentId, f64>,
    ) -> Result<()> {
        if snapshot.vertices.len() > self.capacity {
            return Err(Error::Capacity(format!(
                "{} simultaneous vehicles exceed capacity {}",
                snapshot.vertices.len(),
                self.capacity
            )));
        }

        // Admission; re-initialize once the N-th distinct vehicle would be
        // exceeded, then admit the whole current frame fresh.
        let new_agents: Vec<&AgentId> = snapshot
            .vertices
            .iter()
            .filter(|a| !self.row_of.contains_key(*a))
            .collect();
        if self.mapped_count() + new_agents.len() > self.capacity {
            self.reinitialize();
            for agent in &snapshot.vertices {
                self.admit(agent);
            }
        } else {
            for agent in new_agents {
                self.admit(agent);
            }
        }

        for agent in &snapshot.vertices {
            self.last_seen.insert(agent.clone(), snapshot.t);
        }

        // Edge insertion: only where no entry exists, only when one endpoint
        // is strictly faster, and only with a representable (> 0) weight.
        for &(i, j, w) in &snapshot.edges {
            let a = &snapshot.vertices[i];
            let b = &snapshot.vertices[j];
            let ra = self.row_of[a];
            let rb = self.row_of[b];
            if self.rows[ra].contains_key(&rb) {
                continue;
            }
            let sa = speeds.get(a).copied().unwrap_or(0.0);
            let sb = speeds.get(b).copied().unwrap_or(0.0);
            if sa != sb && w > 0.0 {
                self.rows[ra].insert(rb, w);
                self.rows[rb].insert(ra, w);
            }
        }

        for agent in &snapshot.vertices {
            if let Some(&s) = speeds.get(agent) {
                self.last_speed.insert(agent.clone(), s);
            }
        }

        // Dwell rule: a vehicle that never formed an edge and has been out
        // of view for more than `dwell_frames` is no longer considered.
        let stale: Vec<AgentId> = self
            .row_of
            .iter()
            .filter(|(agent, &row)| {
                self.rows[row].is_empty()
                    && self
                        .last_seen
                        .get(*agent)
                        .is_some_and(|&seen| snapshot.t.saturating_sub(seen) > self.dwell_frames)
            })
            .map(|(agent, _)| agent.clone())
            .collect();
        for agent in stale {
            let row = self.row_of.remove(&agent).expect("stale agent had a row");
            self.agent_of[row] = None;
            self.rows[row].clear();
            let pos = self.free_rows.partition_point(|&r| r < row);
            self.free_rows.insert(pos, row);
            self.last_seen.remove(&agent);
            self.last_speed.remove(&agent);
        }

        self.t = Some(snapshot.t);
        Ok(())
    }
}

/// Speed estimate (m/s) from a backward finite difference over up to the
/// last 3 observations at or before frame `t`; 0 with a single observation.
pub fn estimate_speed(ts: &TrajectorySet, agent: &AgentId, t: u64) -> Result<f64> {
    let track = ts
        .track(agent)
        .ok_or_else(|| Error::Lookup(format!("unknown agent {agent}")))?;
    let upto = track.partition_point(|&(ft, _)| ft <= t);
    if upto == 0 {
        return Err(Error::Lookup(format!(
            "agent {agent} has no observation at or before frame {t}"
        )));
    }
    let window = &track[upto.saturating_sub(3)..upto];
    if window.len() < 2 {
        return Ok(0.0);
    }
    let (t0, p0) = window[0];
    let (t1, p1) = window[window.len() - 1];
    let dt_frames = (t1 - t0) as f64;
    Ok(euclidean(p0, p1) * ts.frame_rate_hz() / dt_frames)
}

/// Runs the incremental update over every frame of a trajectory set and
/// returns the state after each frame.
pub fn accumulate_states(
    ts: &TrajectorySet,
    mu: f64,
    capacity: usize,
    dwell_frames: u64,
) -> Result<Vec<AdjacencyState>> {
    let mut state = AdjacencyState::new(capacity, dwell_frames);
    let mut out = Vec::with_capacity(ts.frames().len());
    for frame in ts.frames() {
        let snapshot = build_snapshot(frame.t, frame.positions(), mu)?;
        let mut speeds = BTreeMap::new();
        for agent in snapshot.vertices() {
            speeds.insert(agent.clone(), estimate_speed(ts, agent, frame.t)?);
        }
        state.update(&snapshot, &speeds)?;
        out.push(state.clone());
    }
    Ok(out)
}

/// Test oracle: recomputes the cumulative adjacency at every frame by
/// replaying all history from scratch with plain data structures. Shares the
/// edge rule's *definition* with the incremental path, none of its
/// bookkeeping.
pub fn rebuild_reference(
    ts: &TrajectorySet,
    mu: f64,
    capacity: usize,
    dwell_frames: u64,
) -> Result<Vec<AdjacencyView>> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Domain(format!("mu must be positive, got {mu}")));
    }
    let frames = ts.frames();
    let mut out = Vec::with_capacity(frames.len());

    for end in 0..frames.len() {
        // Fresh replay of frames 0..=end.
        let mut row_of: BTreeMap<AgentId, usize> = BTreeMap::new();
        let mut rows_in_use: Vec<bool> = Vec::new();
        let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut seen_at: BTreeMap<AgentId, u64> = BTreeMap::new();
        let mut epoch: u64 = 0;

        for frame in &frames[..=end] {
            let mut present: Vec<&AgentId> = frame.positions().keys().collect();
            present.sort();
            if present.len() > capacity {
                return Err(Error::Capacity(format!(
                    "{} simultaneous vehicles exceed capacity {}",
                    present.len(),
                    capacity
                )));
            }

            let unmapped: Vec<&AgentId> = present
                .iter()
                .copied()
                .filter(|a| !row_of.contains_key(*a))
                .collect();
            if row_of.len() + unmapped.len() > capacity {
                row_of.clear();
                rows_in_use.clear();
                entries.clear();
                seen_at.clear();
                epoch += 1;
                for agent in &present {
                    assign_row(&mut row_of, &mut rows_in_use, agent);
                }
            } else {
                for agent in unmapped {
                    assign_row(&mut row_of, &mut rows_in_use, agent);
                }
            }

            for agent in &present {
                seen_at.insert((*agent).clone(), frame.t);
            }

            for i in 0..present.len() {
                for j in (i + 1)..present.len() {
                    let a = present[i];
                    let b = present[j];
                    let pa = frame.positions()[a];
                    let pb = frame.positions()[b];
                    let dx = pa[0] - pb[0];
                    let dy = pa[1] - pb[1];
                    let w = (dx * dx + dy * dy).sqrt();
                    if !(w < mu) {
                        continue;
                    }
                    let ra = row_of[a];
                    let rb = row_of[b];
                    let key = (ra.min(rb), ra.max(rb));
                    if entries.contains_key(&key) {
                        continue;
                    }
                    let sa = estimate_speed(ts, a, frame.t)?;
                    let sb = estimate_speed(ts, b, frame.t)?;
                    if sa != sb && w > 0.0 {
                        entries.insert(key, w);
                    }
                }
            }

            // Dwell drop.
            let has_edge = |r: usize| entries.keys().any(|&(i, j)| i == r || j == r);
            let stale: Vec<AgentId> = row_of
                .iter()
                .filter(|(agent, &row)| {
                    !has_edge(row)
                        && seen_at
                            .get(*agent)
                            .is_some_and(|&s| frame.t.saturating_sub(s) > dwell_frames)
                })
                .map(|(agent, _)| agent.clone())
                .collect();
            for agent in stale {
                let row = row_of.remove(&agent).expect("stale agent had a row");
                rows_in_use[row] = false;
                seen_at.remove(&agent);
            }
        }

        let mut symmetric = BTreeMap::new();
        for (&(i, j), &w) in &entries {
            symmetric.insert((i, j), w);
            symmetric.insert((j, i), w);
        }
        out.push(AdjacencyView {
            row_of,
            entries: symmetric,
            epoch,
        });
    }
    Ok(out)
}

fn assign_row(row_of: &mut BTreeMap<AgentId, usize>, rows_in_use: &mut Vec<bool>, agent: &AgentId) {
    let row = match rows_in_use.iter().position(|used| !used) {
        Some(free) => free,
        None => {
            rows_in_use.push(false);
            rows_in_use.len() - 1
        }
    };
    rows_in_use[row] = true;
    row_of.insert(agent.clone(), row);
}
