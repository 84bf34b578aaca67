//! Communication-policy interface and the three baselines: random flooding,
//! round robin, and a minimum-spanning-tree schedule.
//!
//! A policy sees exactly one agent's knowledge table, the window index, its
//! own static configuration and an rng stream. That interface is the
//! decentralization contract: nothing global reaches a policy at run time.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::channel::Transmit;
use crate::knowledge::KnowledgeTable;

/// Per-agent deterministic rng stream type used by all stochastic policies.
pub type PolicyRng = ChaCha8Rng;

pub trait Policy: Send + Sync {
    /// Transmission-phase decision for the owning agent of `table`.
    fn transmission(&self, table: &KnowledgeTable, t: u64, rng: &mut PolicyRng) -> Transmit;

    /// Optional extra transmission opportunity in the response phase, used by
    /// flooding-style policies. Mandated responses to decoded designated
    /// transmissions take precedence in the protocol engine.
    fn response_opportunity(
        &self,
        _table: &KnowledgeTable,
        _t: u64,
        _rng: &mut PolicyRng,
    ) -> Transmit {
        Transmit::Silent
    }

    fn name(&self) -> String;
}

/// Never transmits. Useful as a control and for closed-form AoI checks.
pub struct SilentPolicy;

impl Policy for SilentPolicy {
    fn transmission(&self, _table: &KnowledgeTable, _t: u64, _rng: &mut PolicyRng) -> Transmit {
        Transmit::Silent
    }

    fn name(&self) -> String {
        "silent".into()
    }
}

/// Broadcasts with probability `p`, independently in each protocol phase.
pub struct RandomFlooding {
    pub p: f64,
}

impl RandomFlooding {
    pub fn new(p: f64) -> Self {
        assert!((0.0..=1.0).contains(&p), "probability out of range");
        RandomFlooding { p }
    }

    fn sample(&self, rng: &mut PolicyRng) -> Transmit {
        if self.p > 0.0 && rng.gen::<f64>() < self.p {
            Transmit::Broadcast
        } else {
            Transmit::Silent
        }
    }
}

impl Policy for RandomFlooding {
    fn transmission(&self, _table: &KnowledgeTable, _t: u64, rng: &mut PolicyRng) -> Transmit {
        self.sample(rng)
    }

    fn response_opportunity(
        &self,
        _table: &KnowledgeTable,
        _t: u64,
        rng: &mut PolicyRng,
    ) -> Transmit {
        self.sample(rng)
    }

    fn name(&self) -> String {
        format!("flood({})", self.p)
    }
}

/// Time-division schedule: at window `t` the agent at index `t mod (n-1)` of
/// the sorted non-base identity list transmits to the base station; everyone
/// else stays silent and the exchange completes through the response phase.
pub struct RoundRobin {
    pub base: usize,
}

impl Policy for RoundRobin {
    fn transmission(&self, table: &KnowledgeTable, t: u64, _rng: &mut PolicyRng) -> Transmit {
        let n = table.n_agents();
        let me = table.owner();
        if n < 2 || me == self.base {
            return Transmit::Silent;
        }
        let my_slot = if me < self.base { me } else { me - 1 };
        if t % (n as u64 - 1) == my_slot as u64 {
            Transmit::To(self.base)
        } else {
            Transmit::Silent
        }
    }

    fn name(&self) -> String {
        "roundrobin".into()
    }
}

/// Schedule over a Euclidean minimum spanning tree built once from initial
/// positions: each non-root agent designates its tree parent with probability
/// `p`. Requires global positions only at construction time.
pub struct MstPolicy {
    pub p: f64,
    parent_of: Vec<Option<usize>>,
}

impl MstPolicy {
    pub fn new(p: f64, initial_positions: &[[f64; 2]]) -> Self {
        assert!((0.0..=1.0).contains(&p), "probability out of range");
        let edges = euclidean_mst(initial_positions);
        let root = nearest_to_centroid(initial_positions);
        MstPolicy {
            p,
            parent_of: root_tree(initial_positions.len(), &edges, root),
        }
    }

    pub fn parent_of(&self, agent: usize) -> Option<usize> {
        self.parent_of[agent]
    }

    pub fn root(&self) -> usize {
        self.parent_of
            .iter()
            .position(|p| p.is_none())
            .expect("tree has a root")
    }
}

impl Policy for MstPolicy {
    fn transmission(&self, table: &KnowledgeTable, _t: u64, rng: &mut PolicyRng) -> Transmit {
        match self.parent_of[table.owner()] {
            Some(parent) if self.p > 0.0 && rng.gen::<f64>() < self.p => Transmit::To(parent),
            _ => Transmit::Silent,
        }
    }

    fn name(&self) -> String {
        format!("mst({})", self.p)
    }
}

/// Kruskal's algorithm on the complete Euclidean graph. Ties in edge weight
/// are broken by lexicographic endpoint order for determinism.
pub fn euclidean_mst(positions: &[[f64; 2]]) -> Vec<(usize, usize)> {
    let n = positions.len();
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = positions[i][0] - positions[j][0];
            let dy = positions[i][1] - positions[j][1];
            edges.push(((dx * dx + dy * dy).sqrt(), i, j));
        }
    }
    edges.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut tree = Vec::with_capacity(n.saturating_sub(1));
    for (_, i, j) in edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri] = rj;
            tree.push((i, j));
            if tree.len() + 1 == n {
                break;
            }
        }
    }
    tree
}

/// Total length of an edge list over `positions`.
pub fn tree_length(positions: &[[f64; 2]], edges: &[(usize, usize)]) -> f64 {
    edges
        .iter()
        .map(|&(i, j)| {
            let dx = positions[i][0] - positions[j][0];
            let dy = positions[i][1] - positions[j][1];
            (dx * dx + dy * dy).sqrt()
        })
        .sum()
}

/// Index of the agent closest to the team centroid; ties go to the lowest id.
pub fn nearest_to_centroid(positions: &[[f64; 2]]) -> usize {
    let n = positions.len() as f64;
    let centroid = positions.iter().fold([0.0, 0.0], |acc, p| {
        [acc[0] + p[0] / n, acc[1] + p[1] / n]
    });
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in positions.iter().enumerate() {
        let dx = p[0] - centroid[0];
        let dy = p[1] - centroid[1];
        let d = dx * dx + dy * dy;
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn root_tree(n: usize, edges: &[(usize, usize)], root: usize) -> Vec<Option<usize>> {
    let mut adjacency = vec![Vec::new(); n];
    for &(i, j) in edges {
        adjacency[i].push(j);
        adjacency[j].push(i);
    }
    let mut parent_of = vec![None; n];
    let mut visited = vec![false; n];
    let mut stack = vec![root];
    visited[root] = true;
    while let Some(node) = stack.pop() {
        for &next in &adjacency[node] {
            if !visited[next] {
                visited[next] = true;
                parent_of[next] = Some(node);
                stack.push(next);
            }
        }
    }
    parent_of
}
