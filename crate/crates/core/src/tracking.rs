//! Temporal linking: per-frame occupancy maps become trajectories via
//! min-cost flow on a time-expanded grid graph with unit node capacities.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::geometry::GroundGrid;
use crate::metrics::{Detection, DetectionSet};
use crate::scalar::Real;

/// Clamp bounds for q before taking log-odds.
const Q_CLAMP: f64 = 1e-6;

/// One extracted track: `(frame, cell)` steps, contiguous in time, each hop
/// within the transition neighborhood.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub steps: Vec<(usize, usize)>,
}

struct Edge<T> {
    to: u32,
    cap: u32,
    cost: T,
}

/// Time-expanded flow network. Every `(frame, cell)` is split into an
/// in-node and an out-node joined by a unit-capacity edge carrying the node
/// cost `-log(q/(1-q))`; transitions, entries and exits have unit capacity.
pub struct FlowGraph<T> {
    frames: usize,
    cells: usize,
    // Paired arcs: 2e is forward, 2e+1 its residual reverse.
    edges: Vec<Edge<T>>,
    adj: Vec<Vec<u32>>,
}

const SOURCE: u32 = 0;
const SINK: u32 = 1;

fn node_in(t: usize, i: usize, cells: usize) -> u32 {
    (2 + 2 * (t * cells + i)) as u32
}

fn node_out(t: usize, i: usize, cells: usize) -> u32 {
    node_in(t, i, cells) + 1
}

impl<T: Real> FlowGraph<T> {
    fn add_edge(&mut self, u: u32, v: u32, cost: T) {
        let e = self.edges.len() as u32;
        self.edges.push(Edge { to: v, cap: 1, cost });
        self.edges.push(Edge { to: u, cap: 0, cost: -cost });
        self.adj[u as usize].push(e);
        self.adj[v as usize].push(e + 1);
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    /// Forward arcs only (reverse residual arcs not counted).
    pub fn edge_count(&self) -> usize {
        self.edges.len() / 2
    }

    /// Cost on the split-node edge of `(frame, cell)`.
    pub fn node_cost(&self, t: usize, i: usize) -> T {
        let u = node_in(t, i, self.cells) as usize;
        let e = self.adj[u]
            .iter()
            .find(|&&e| e % 2 == 0 && self.edges[e as usize].to == node_out(t, i, self.cells))
            .expect("split edge exists");
        self.edges[*e as usize].cost
    }
}

fn is_boundary(grid: &GroundGrid, i: usize) -> bool {
    let (r, c) = grid.row_col(i);
    r == 0 || r + 1 == grid.rows || c == 0 || c + 1 == grid.cols
}

/// Builds the tracking graph. Entries are allowed at every cell in the first
/// frame and at boundary cells in every frame; exits mirror that at the last
/// frame. Entry and exit each cost `access_cost`; transitions are free and
/// bounded by the Chebyshev `radius`.
pub fn build_flow_graph<T: Real>(
    poms: &[Vec<T>],
    grid: &GroundGrid,
    radius: usize,
    access_cost: T,
) -> Result<FlowGraph<T>> {
    if poms.len() < 2 {
        return Err(Error::param("tracking needs at least two frames"));
    }
    if poms.iter().any(|q| q.len() != grid.cells()) {
        return Err(Error::param("occupancy vector does not match the grid"));
    }
    if !access_cost.is_finite() {
        return Err(Error::param("access cost must be finite"));
    }
    let frames = poms.len();
    let cells = grid.cells();
    let mut g = FlowGraph {
        frames,
        cells,
        edges: Vec::new(),
        adj: vec![Vec::new(); 2 + 2 * frames * cells],
    };
    let lo = T::of(Q_CLAMP);
    let hi = T::one() - lo;
    for (t, q) in poms.iter().enumerate() {
        for (i, &qi) in q.iter().enumerate() {
            let c = -qi.clampf(lo, hi).logit();
            g.add_edge(node_in(t, i, cells), node_out(t, i, cells), c);
        }
    }
    for t in 0..frames - 1 {
        for i in 0..cells {
            let (r0, c0) = grid.row_col(i);
            let rlo = r0.saturating_sub(radius);
            let rhi = (r0 + radius).min(grid.rows - 1);
            let clo = c0.saturating_sub(radius);
            let chi = (c0 + radius).min(grid.cols - 1);
            for r in rlo..=rhi {
                for c in clo..=chi {
                    let j = grid.index(r, c);
                    g.add_edge(node_out(t, i, cells), node_in(t + 1, j, cells), T::zero());
                }
            }
        }
    }
    for t in 0..frames {
        for i in 0..cells {
            if t == 0 || is_boundary(grid, i) {
                g.add_edge(SOURCE, node_in(t, i, cells), access_cost);
            }
            if t == frames - 1 || is_boundary(grid, i) {
                g.add_edge(node_out(t, i, cells), SINK, access_cost);
            }
        }
    }
    Ok(g)
}

struct HeapItem<T> {
    dist: T,
    node: u32,
}

impl<T: Real> PartialEq for HeapItem<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Real> Eq for HeapItem<T> {}
impl<T: Real> PartialOrd for HeapItem<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Real> Ord for HeapItem<T> {
    // Reversed: BinaryHeap is a max-heap, we pop the smallest (dist, node).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap_or(Ordering::Equal)
            .then(other.node.cmp(&self.node))
    }
}

/// Extracts up to `max_tracks` node-disjoint trajectories by successive
/// shortest paths with potentials, stopping once the best remaining path has
/// nonnegative cost. The extracted flow is cost-optimal for its value.
pub fn solve_flow<T: Real>(g: &mut FlowGraph<T>, max_tracks: usize) -> Result<Vec<Trajectory>> {
    if max_tracks == 0 {
        return Err(Error::param("max_tracks must be at least 1"));
    }
    let n = g.node_count();
    let inf = T::infinity();
    // Initial potentials: exact distances on the original DAG, relaxed in
    // topological order (source, frames ascending with in before out, sink).
    let mut pot = vec![inf; n];
    pot[SOURCE as usize] = T::zero();
    let mut topo: Vec<u32> = Vec::with_capacity(n);
    topo.push(SOURCE);
    for t in 0..g.frames {
        for i in 0..g.cells {
            topo.push(node_in(t, i, g.cells));
            topo.push(node_out(t, i, g.cells));
        }
    }
    topo.push(SINK);
    for &u in &topo {
        if pot[u as usize] == inf {
            continue;
        }
        for &e in &g.adj[u as usize] {
            let edge = &g.edges[e as usize];
            if e % 2 == 0 && edge.cap > 0 {
                let nd = pot[u as usize] + edge.cost;
                if nd < pot[edge.to as usize] {
                    pot[edge.to as usize] = nd;
                }
            }
        }
    }
    if pot[SINK as usize] == inf {
        return Ok(Vec::new());
    }

    let mut extracted = 0usize;
    while extracted < max_tracks {
        // Dijkstra over reduced costs.
        let mut dist = vec![inf; n];
        let mut done = vec![false; n];
        let mut prev = vec![u32::MAX; n];
        dist[SOURCE as usize] = T::zero();
        let mut heap = BinaryHeap::new();
        heap.push(HeapItem { dist: T::zero(), node: SOURCE });
        while let Some(HeapItem { dist: d, node: u }) = heap.pop() {
            if done[u as usize] {
                continue;
            }
            done[u as usize] = true;
            let _ = d;
            for &e in &g.adj[u as usize] {
                let edge = &g.edges[e as usize];
                if edge.cap == 0 {
                    continue;
                }
                let v = edge.to as usize;
                if done[v] {
                    continue;
                }
                // Clamped: rounding may leave a residual arc a hair negative,
                // and relaxing a settled node would corrupt the parent chain.
                let w = (edge.cost + pot[u as usize] - pot[v]).max(T::zero());
                let nd = dist[u as usize] + w;
                if nd < dist[v] {
                    dist[v] = nd;
                    prev[v] = e;
                    heap.push(HeapItem { dist: nd, node: edge.to });
                }
            }
        }
        if dist[SINK as usize] == inf {
            break;
        }
        let true_cost = dist[SINK as usize] + pot[SINK as usize] - pot[SOURCE as usize];
        if true_cost >= T::zero() {
            break;
        }
        for (v, d) in dist.iter().enumerate() {
            if *d < inf {
                pot[v] += *d;
            }
        }
        let mut v = SINK as usize;
        while v != SOURCE as usize {
            let e = prev[v] as usize;
            g.edges[e].cap -= 1;
            g.edges[e ^ 1].cap += 1;
            v = g.edges[e ^ 1].to as usize;
        }
        extracted += 1;
    }

    // Decompose the flow into source->sink walks over used forward arcs.
    let used = |g: &FlowGraph<T>, u: usize, skip: &[u32]| -> Option<u32> {
        g.adj[u]
            .iter()
            .copied()
            .find(|&e| e.is_multiple_of(2) && g.edges[e as usize].cap == 0 && !skip.contains(&e))
    };
    let mut consumed: Vec<u32> = Vec::new();
    let mut tracks = Vec::new();
    for _ in 0..extracted {
        let mut steps = Vec::new();
        let mut u = SOURCE as usize;
        while u != SINK as usize {
            let e = used(g, u, &consumed).expect("flow conservation");
            consumed.push(e);
            let v = g.edges[e as usize].to as usize;
            if u >= 2 && u.is_multiple_of(2) && v == u + 1 {
                let slot = (u - 2) / 2;
                steps.push((slot / g.cells, slot % g.cells));
            }
            u = v;
        }
        tracks.push(Trajectory { steps });
    }
    tracks.sort_by_key(|t| t.steps.first().copied());
    Ok(tracks)
}

/// Re-emits detections along trajectories only: every `(frame, cell)` a
/// track visits becomes a detection, restoring cells the per-frame maps
/// dropped and discarding isolated responses.
pub fn smooth_pom<T: Real>(
    poms: &[Vec<T>],
    trajectories: &[Trajectory],
    grid: &GroundGrid,
) -> Result<Vec<DetectionSet<T>>> {
    if poms.iter().any(|q| q.len() != grid.cells()) {
        return Err(Error::param("occupancy vector does not match the grid"));
    }
    let lo = T::of(Q_CLAMP);
    let mut per_frame: Vec<Vec<usize>> = vec![Vec::new(); poms.len()];
    for traj in trajectories {
        for &(t, i) in &traj.steps {
            if t >= poms.len() || i >= grid.cells() {
                return Err(Error::param("trajectory leaves the map"));
            }
            per_frame[t].push(i);
        }
    }
    Ok(per_frame
        .into_iter()
        .enumerate()
        .map(|(frame, mut cells)| {
            cells.sort_unstable();
            let detections = cells
                .into_iter()
                .map(|cell| {
                    let [x, y] = grid.center_m(cell);
                    Detection {
                        cell,
                        x: T::of(x),
                        y: T::of(y),
                        confidence: poms[frame][cell].clampf(lo, T::one()),
                    }
                })
                .collect();
            DetectionSet { frame, detections }
        })
        .collect())
}
