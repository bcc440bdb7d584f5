//! Discrete degree and closeness centrality time-series per agent.
//!
//! Degree is counted on the cumulative adjacency matrix (row nonzeros), so
//! it grows as a vehicle keeps encountering new traffic. Closeness is the
//! Wasserman–Faust-scaled reciprocal of summed shortest-path distances on
//! the per-frame snapshot, so it responds to instantaneous lane position.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{snapshot_at, AdjacencyState, GraphSnapshot};
use crate::io::{AgentId, TrajectorySet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CentralityKind {
    Degree,
    Closeness,
}

/// One centrality value per frame over a contiguous window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralitySeries {
    agent: AgentId,
    kind: CentralityKind,
    values: Vec<f64>,
    window: (u64, u64),
}

impl CentralitySeries {
    /// The computed centrality operations guarantee non-negative values;
    /// the type itself only demands finiteness so that noise-injected
    /// variants of a series remain representable.
    pub fn new(
        agent: AgentId,
        kind: CentralityKind,
        values: Vec<f64>,
        window_start: u64,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("centrality series has no samples".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("centrality series contains non-finite values".into()));
        }
        let window = (window_start, window_start + values.len() as u64 - 1);
        Ok(Self {
            agent,
            kind,
            values,
            window,
        })
    }

    pub fn agent(&self) -> &AgentId {
        &self.agent
    }

    pub fn kind(&self) -> CentralityKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Inclusive frame range covered by the samples.
    pub fn window(&self) -> (u64, u64) {
        self.window
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same agent/kind/window with replaced samples (noise injection).
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len(), "sample count must match");
        Self {
            agent: self.agent.clone(),
            kind: self.kind,
            values,
            window: self.window,
        }
    }
}

/// Degree centrality per frame: the count of nonzero off-diagonal entries
/// in the agent's row of the cumulative matrix after each update.
///
/// `states` must hold the post-update state of consecutive frames and the
/// agent must be mapped in every one of them.
pub fn degree_series(states: &[AdjacencyState], agent: &AgentId) -> Result<CentralitySeries> {
    if states.is_empty() {
        return Err(Error::EmptyInput("no adjacency states".into()));
    }
    let start = states[0]
        .t()
        .ok_or_else(|| Error::Domain("adjacency state has no frame".into()))?;
    let mut values = Vec::with_capacity(states.len());
    for (k, state) in states.iter().enumerate() {
        let t = state
            .t()
            .ok_or_else(|| Error::Domain("adjacency state has no frame".into()))?;
        if t != start + k as u64 {
            return Err(Error::Range(format!(
                "states must cover consecutive frames; expected {} got {t}",
                start + k as u64
            )));
        }
        values.push(state.degree(agent)? as f64);
    }
    CentralitySeries::new(agent.clone(), CentralityKind::Degree, values, start)
}

/// Closeness centrality of one vertex on a snapshot:
/// ((r−1)/(n−1)) · (r−1)/Σ d_sp(i, j), with r the number of vertices
/// reachable from i (including i), n the vertices present, and d_sp the
/// weighted shortest-path distance. Isolated vertices score 0.
pub fn closeness_in_snapshot(snapshot: &GraphSnapshot, agent: &AgentId) -> Result<f64> {
    let source = snapshot
        .vertices()
        .iter()
        .position(|a| a == agent)
        .ok_or_else(|| Error::Lookup(format!("agent {agent} not in snapshot")))?;
    let n = snapshot.vertices().len();
    if n <= 1 {
        return Ok(0.0);
    }
    let dist = dijkstra(&snapshot.adjacency_lists(), source);
    let mut finite: Vec<f64> = dist
        .iter()
        .enumerate()
        .filter(|&(j, d)| j != source && d.is_finite())
        .map(|(_, &d)| d)
        .collect();
    // Canonical (sorted) accumulation order keeps the value exactly
    // invariant under agent relabeling.
    finite.sort_by(|a, b| a.partial_cmp(b).expect("distances are never NaN"));
    let reachable = finite.len() + 1;
    let sum: f64 = finite.iter().sum();
    if reachable <= 1 || sum <= 0.0 {
        return Ok(0.0);
    }
    let r = (reachable - 1) as f64;
    Ok(r / (n as f64 - 1.0) * (r / sum))
}

/// Closeness centrality per frame over an inclusive frame window. The agent
/// must be present in every frame of the window.
pub fn closeness_series(
    ts: &TrajectorySet,
    mu: f64,
    agent: &AgentId,
    window: (u64, u64),
) -> Result<CentralitySeries> {
    if window.1 < window.0 {
        return Err(Error::Range(format!(
            "window end {} precedes start {}",
            window.1, window.0
        )));
    }
    let mut values = Vec::with_capacity((window.1 - window.0 + 1) as usize);
    for t in window.0..=window.1 {
        let snapshot = snapshot_at(ts, t, mu)?;
        if !snapshot.vertices().contains(agent) {
            return Err(Error::Range(format!(
                "agent {agent} absent from frame {t} inside the analysis window"
            )));
        }
        values.push(closeness_in_snapshot(&snapshot, agent)?);
    }
    CentralitySeries::new(agent.clone(), CentralityKind::Closeness, values, window.0)
}

struct HeapEntry {
    cost: f64,
    node: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cost == other.cost && self.node == other.node
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on cost: reverse the comparison. Costs are finite sums of
        // finite non-negative weights, never NaN.
        other
            .cost
            .partial_cmp(&self.cost)
            .expect("shortest-path costs are never NaN")
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// Single-source shortest paths with non-negative weights. Distances are
/// accumulated left-associated along each path (d[v] = d[u] + w).
fn dijkstra(lists: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; lists.len()];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(HeapEntry {
        cost: 0.0,
        node: source,
    });
    while let Some(HeapEntry { cost, node }) = heap.pop() {
        if cost > dist[node] {
            continue;
        }
        for &(next, w) in &lists[node] {
            let candidate = cost + w;
            if candidate < dist[next] {
                dist[next] = candidate;
                heap.push(HeapEntry {
                    cost: candidate,
                    node: next,
                });
            }
        }
    }
    dist
}
