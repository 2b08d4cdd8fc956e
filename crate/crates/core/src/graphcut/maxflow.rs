//! Shortest-augmenting-path (Edmonds–Karp) maximum flow.

use std::collections::VecDeque;

/// Residual capacities at or below this are treated as saturated.
pub const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub from: usize,
    pub to: usize,
    pub cap: f64,
}

/// Directed graph with nonnegative (possibly infinite) arc capacities and
/// designated source and sink nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGraph {
    nodes: usize,
    source: usize,
    sink: usize,
    arcs: Vec<Arc>,
}

impl FlowGraph {
    pub fn new(nodes: usize, source: usize, sink: usize) -> FlowGraph {
        assert!(source < nodes && sink < nodes && source != sink);
        FlowGraph {
            nodes,
            source,
            sink,
            arcs: Vec::new(),
        }
    }

    /// Returns the arc index. Zero-capacity arcs are kept so indices stay
    /// predictable.
    pub fn add_arc(&mut self, from: usize, to: usize, cap: f64) -> usize {
        assert!(from < self.nodes && to < self.nodes, "arc endpoint out of range");
        assert!(cap >= 0.0, "negative capacity {cap}");
        self.arcs.push(Arc { from, to, cap });
        self.arcs.len() - 1
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn sink(&self) -> usize {
        self.sink
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    /// Total capacity of arcs leaving `side` (a node membership mask).
    pub fn cut_capacity(&self, side: &[bool]) -> f64 {
        self.arcs
            .iter()
            .filter(|a| side[a.from] && !side[a.to])
            .map(|a| a.cap)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxFlow {
    pub value: f64,
    /// Nodes reachable from the source in the final residual graph.
    pub source_side: Vec<bool>,
    /// Flow on each arc, indexed like [`FlowGraph::arcs`].
    pub arc_flow: Vec<f64>,
}

struct Residual {
    /// Edge `2i` is arc `i`, edge `2i + 1` its reverse.
    to: Vec<usize>,
    cap: Vec<f64>,
    start: Vec<usize>,
    adj: Vec<usize>,
}

impl Residual {
    fn build(g: &FlowGraph) -> Residual {
        let m = g.arcs.len();
        let mut to = Vec::with_capacity(2 * m);
        let mut cap = Vec::with_capacity(2 * m);
        let mut degree = vec![0usize; g.nodes + 1];
        for a in &g.arcs {
            to.push(a.to);
            cap.push(a.cap);
            to.push(a.from);
            cap.push(0.0);
            degree[a.from] += 1;
            degree[a.to] += 1;
        }
        let mut start = vec![0; g.nodes + 1];
        for v in 0..g.nodes {
            start[v + 1] = start[v] + degree[v];
        }
        let mut fill = start.clone();
        let mut adj = vec![0; 2 * m];
        for (i, a) in g.arcs.iter().enumerate() {
            adj[fill[a.from]] = 2 * i;
            fill[a.from] += 1;
            adj[fill[a.to]] = 2 * i + 1;
            fill[a.to] += 1;
        }
        Residual { to, cap, start, adj }
    }

    fn edges(&self, v: usize) -> &[usize] {
        &self.adj[self.start[v]..self.start[v + 1]]
    }

    fn push(&mut self, e: usize, amount: f64) {
        self.cap[e] -= amount;
        self.cap[e ^ 1] += amount;
    }
}

/// Maximum s–t flow and the minimum cut it certifies.
///
/// Augments along shortest residual paths found by breadth-first search,
/// exploring arcs in insertion order, so the result is deterministic.
pub fn max_flow(g: &FlowGraph) -> MaxFlow {
    let mut r = Residual::build(g);
    let (s, t) = (g.source, g.sink);
    let mut value = 0.0;

    // Two-arc paths s -> v -> t first; these are the shortest possible ones
    // after a direct s -> t arc, which the search below handles.
    let mut into = vec![Vec::new(); g.nodes];
    let mut out = vec![Vec::new(); g.nodes];
    for (i, a) in g.arcs.iter().enumerate() {
        if a.from == s && a.to != t {
            into[a.to].push(2 * i);
        }
        if a.to == t && a.from != s {
            out[a.from].push(2 * i);
        }
    }
    for v in 0..g.nodes {
        for &a in &into[v] {
            for &b in &out[v] {
                let amount = r.cap[a].min(r.cap[b]);
                if amount > EPS && amount.is_finite() {
                    r.push(a, amount);
                    r.push(b, amount);
                    value += amount;
                }
            }
        }
    }

    let mut parent = vec![usize::MAX; g.nodes];
    let mut queue = VecDeque::new();
    loop {
        parent.fill(usize::MAX);
        queue.clear();
        queue.push_back(s);
        let mut found = false;
        'bfs: while let Some(v) = queue.pop_front() {
            for &e in r.edges(v) {
                let w = r.to[e];
                if w != s && parent[w] == usize::MAX && r.cap[e] > EPS {
                    parent[w] = e;
                    if w == t {
                        found = true;
                        break 'bfs;
                    }
                    queue.push_back(w);
                }
            }
        }
        if !found {
            break;
        }
        let mut bottleneck = f64::INFINITY;
        let mut v = t;
        while v != s {
            let e = parent[v];
            bottleneck = bottleneck.min(r.cap[e]);
            v = r.to[e ^ 1];
        }
        if bottleneck.is_infinite() {
            // An all-infinite path: the cut is unbounded.
            value = f64::INFINITY;
            break;
        }
        let mut v = t;
        while v != s {
            let e = parent[v];
            r.push(e, bottleneck);
            v = r.to[e ^ 1];
        }
        value += bottleneck;
    }

    let mut source_side = vec![false; g.nodes];
    source_side[s] = true;
    queue.clear();
    queue.push_back(s);
    while let Some(v) = queue.pop_front() {
        for &e in r.edges(v) {
            let w = r.to[e];
            if !source_side[w] && r.cap[e] > EPS {
                source_side[w] = true;
                queue.push_back(w);
            }
        }
    }
    let arc_flow = g
        .arcs
        .iter()
        .enumerate()
        .map(|(i, a)| if a.cap.is_infinite() { r.cap[2 * i + 1] } else { a.cap - r.cap[2 * i] })
        .collect();
    MaxFlow {
        value,
        source_side,
        arc_flow,
    }
}
