//! Dinic's algorithm on real capacities.

use std::collections::VecDeque;

/// Residual capacity at or below this is treated as saturated.
pub const AUGMENT_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    cap: f64,
    flow: f64,
}

/// A directed graph with paired forward/backward arcs.
#[derive(Debug, Clone, Default)]
pub struct FlowGraph {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
}

impl FlowGraph {
    pub fn new(nodes: usize) -> Self {
        Self {
            arcs: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    /// Adds `u → v` with capacity `cap` and returns its id.
    pub fn add_edge(&mut self, u: usize, v: usize, cap: f64) -> usize {
        let id = self.arcs.len();
        self.arcs.push(Arc {
            to: v,
            cap,
            flow: 0.0,
        });
        self.arcs.push(Arc {
            to: u,
            cap: 0.0,
            flow: 0.0,
        });
        self.adj[u].push(id);
        self.adj[v].push(id + 1);
        id
    }

    pub fn flow(&self, edge: usize) -> f64 {
        self.arcs[edge].flow
    }

    pub fn capacity(&self, edge: usize) -> f64 {
        self.arcs[edge].cap
    }

    fn residual(&self, arc: usize) -> f64 {
        self.arcs[arc].cap - self.arcs[arc].flow
    }

    fn levels(&self, s: usize, t: usize) -> Option<Vec<u32>> {
        let mut level = vec![u32::MAX; self.adj.len()];
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &a in &self.adj[u] {
                let v = self.arcs[a].to;
                if level[v] == u32::MAX && self.residual(a) > AUGMENT_EPS {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        (level[t] != u32::MAX).then_some(level)
    }

    fn push(&mut self, u: usize, t: usize, limit: f64, level: &[u32], next: &mut [usize]) -> f64 {
        if u == t {
            return limit;
        }
        while next[u] < self.adj[u].len() {
            let a = self.adj[u][next[u]];
            let v = self.arcs[a].to;
            let r = self.residual(a);
            if r > AUGMENT_EPS && level[v] == level[u] + 1 {
                let pushed = self.push(v, t, limit.min(r), level, next);
                if pushed > 0.0 {
                    self.arcs[a].flow += pushed;
                    self.arcs[a ^ 1].flow -= pushed;
                    return pushed;
                }
            }
            next[u] += 1;
        }
        0.0
    }

    /// Maximum `s → t` flow. Flows are left on the arcs.
    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut total = 0.0;
        while let Some(level) = self.levels(s, t) {
            let mut next = vec![0; self.adj.len()];
            loop {
                let pushed = self.push(s, t, f64::INFINITY, &level, &mut next);
                if pushed <= AUGMENT_EPS {
                    break;
                }
                total += pushed;
            }
        }
        total
    }
}
