//! Per-agent knowledge tables: cached teammate states with observation
//! timestamps, data-flow parent pointers and last-contact records, plus the
//! merge rule and the local-graph extraction consumed by the learned policy.

use serde::{Deserialize, Serialize};

use crate::scenario::{AgentState, MissionConfig};

/// What agent `owner` knows about one teammate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KnowledgeRecord {
    /// Window at which the cached state was observed; `None` until first heard.
    pub timestamp: Option<u64>,
    /// Last known state of the teammate.
    pub state: AgentState,
    /// Agent that relayed this record toward the owner; the owner itself for
    /// directly received records. Unused for the owner's own record.
    pub parent: Option<usize>,
    /// Window of the owner's last transmission attempt toward the teammate.
    pub last_contact: Option<u64>,
}

/// Agent `owner`'s full table: one record per member of the team.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeTable {
    owner: usize,
    records: Vec<KnowledgeRecord>,
}

impl KnowledgeTable {
    pub fn new(owner: usize, n_agents: usize) -> Self {
        assert!(owner < n_agents);
        KnowledgeTable {
            owner,
            records: vec![KnowledgeRecord::default(); n_agents],
        }
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn n_agents(&self) -> usize {
        self.records.len()
    }

    pub fn records(&self) -> &[KnowledgeRecord] {
        &self.records
    }

    pub fn record(&self, id: usize) -> &KnowledgeRecord {
        &self.records[id]
    }

    /// Age of the owner's information about `id` at window `t`; never-heard
    /// records age as if observed at window 0.
    pub fn age(&self, id: usize, t: u64) -> u64 {
        t - self.records[id].timestamp.unwrap_or(0)
    }

    /// Caches the owner's own state at window `t`.
    pub fn observe_self(&mut self, state: AgentState, t: u64) {
        let record = &mut self.records[self.owner];
        debug_assert!(record.timestamp.map_or(true, |prev| t >= prev));
        record.timestamp = Some(t);
        record.state = state;
    }

    /// Folds a decoded snapshot from another agent into this table: records
    /// that are strictly newer in the snapshot replace the incumbent, copying
    /// timestamp, state and parent. The sender's own record gets the owner as
    /// parent (direct reception); equal timestamps keep the incumbent.
    pub fn merge(&mut self, received: &KnowledgeTable) {
        debug_assert_eq!(self.records.len(), received.records.len());
        let sender = received.owner;
        for k in 0..self.records.len() {
            if k == self.owner {
                continue;
            }
            let theirs = &received.records[k];
            let newer = match (self.records[k].timestamp, theirs.timestamp) {
                (_, None) => false,
                (None, Some(_)) => true,
                (Some(mine), Some(other)) => other > mine,
            };
            if newer {
                let mine = &mut self.records[k];
                mine.timestamp = theirs.timestamp;
                mine.state = theirs.state;
                mine.parent = if k == sender { Some(self.owner) } else { theirs.parent };
            }
        }
    }

    /// Records a transmission attempt toward `target` at window `t`.
    pub fn record_attempt(&mut self, target: usize, t: u64) {
        self.records[target].last_contact = Some(t);
    }

    /// True when the parent pointers of known records contain no cycle.
    pub fn parents_acyclic(&self) -> bool {
        let n = self.records.len();
        for start in 0..n {
            let mut seen = vec![false; n];
            let mut node = start;
            while node != self.owner {
                match self.records[node].parent {
                    None => break,
                    Some(p) => {
                        if seen[node] {
                            return false;
                        }
                        seen[node] = true;
                        node = p;
                    }
                }
            }
        }
        true
    }

    /// Extracts the GNN input graph at window `t`: one node per agent with
    /// normalized features, directed (receiver = parent, sender = child) edges
    /// for every known non-self record.
    pub fn extract_graph(&self, t: u64, config: &MissionConfig) -> LocalGraph {
        let n = self.records.len();
        let horizon = config.n_windows.max(1) as f64;
        let p_max = config.p_max();
        let v_max = config.v_max;
        let mut features = Vec::with_capacity(n);
        let mut edges = Vec::new();
        for (id, record) in self.records.iter().enumerate() {
            let feature = match record.timestamp {
                Some(ts) => {
                    let age = ((t - ts) as f64 / horizon).min(1.0);
                    let lc = match record.last_contact {
                        Some(l) => ((t.saturating_sub(l)) as f64 / horizon).min(1.0),
                        None => 1.0,
                    };
                    [
                        age,
                        record.state.position[0] / p_max,
                        record.state.position[1] / p_max,
                        record.state.velocity[0] / v_max,
                        record.state.velocity[1] / v_max,
                        lc,
                        if id == self.owner { 1.0 } else { 0.0 },
                    ]
                }
                // Never heard from: maximal staleness, zero state.
                None => [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            };
            features.push(feature);
            if id != self.owner {
                if let (Some(_), Some(parent)) = (record.timestamp, record.parent) {
                    edges.push((parent, id));
                }
            }
        }
        LocalGraph {
            features,
            edges,
            self_node: self.owner,
        }
    }
}

/// Number of features per node in [`LocalGraph`].
pub const NODE_FEATURES: usize = 7;

/// Graph view of one agent's knowledge: the GNN input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalGraph {
    /// One feature vector per agent, all entries in `[-1, 1]`.
    pub features: Vec<[f64; NODE_FEATURES]>,
    /// Directed edges as (receiver, sender) index pairs.
    pub edges: Vec<(usize, usize)>,
    /// Index of the owner's node.
    pub self_node: usize,
}

impl LocalGraph {
    pub fn n_nodes(&self) -> usize {
        self.features.len()
    }
}

/// Mean age of information over all ordered pairs `i != j` at window `t`;
/// zero for a single-agent team.
pub fn mean_aoi(tables: &[KnowledgeTable], t: u64) -> f64 {
    let n = tables.len();
    if n <= 1 {
        return 0.0;
    }
    let mut total = 0u64;
    for table in tables {
        for j in 0..n {
            if j != table.owner() {
                total += table.age(j, t);
            }
        }
    }
    total as f64 / (n * (n - 1)) as f64
}
