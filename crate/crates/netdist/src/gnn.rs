//! Aggregation graph network over an agent's local knowledge graph.
//!
//! Encode-process-decode with mean edge aggregation: node features are
//! encoded, transformed by a stack of graph-network blocks, decoded at every
//! stage, and the per-stage decodings are concatenated before a linear output
//! transform. The number of blocks is the receptive field: how many edge hops
//! information can travel.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::Transmit;
use crate::knowledge::{KnowledgeTable, LocalGraph, NODE_FEATURES};
use crate::nn::{Mlp, NodeId, ParamStore, Tape};
use crate::policies::{Policy, PolicyRng};
use crate::scenario::MissionConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    /// Number of graph-network block applications.
    pub receptive_field: usize,
    /// Width of every latent layer.
    pub hidden: usize,
    /// Add reversed copies of every edge (ablation flag; off by default).
    pub bidirectional_edges: bool,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            receptive_field: 5,
            hidden: 64,
            bidirectional_edges: false,
        }
    }
}

/// The aggregation GNN: shared encoder for node features and edge attributes,
/// edge and node update MLPs, per-stage decoder, linear output head emitting
/// `out_width` values per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggGnn {
    pub config: GnnConfig,
    f_enc: Mlp,
    nn_e: Mlp,
    nn_v: Mlp,
    f_dec: Mlp,
    f_out: Mlp,
}

impl AggGnn {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        config: GnnConfig,
        out_width: usize,
        rng: &mut R,
    ) -> Self {
        let h = config.hidden;
        AggGnn {
            config,
            f_enc: Mlp::init(store, &format!("{prefix}.enc"), &[NODE_FEATURES, h, h, h], rng),
            nn_e: Mlp::init(store, &format!("{prefix}.edge"), &[3 * h, h, h, h], rng),
            nn_v: Mlp::init(store, &format!("{prefix}.node"), &[2 * h, h, h, h], rng),
            f_dec: Mlp::init(store, &format!("{prefix}.dec"), &[h, h, h, h], rng),
            f_out: Mlp::init(
                store,
                &format!("{prefix}.out"),
                &[(config.receptive_field + 1) * h, out_width],
                rng,
            ),
        }
    }

    /// Rebinds to parameters already present in a store.
    pub fn attach(prefix: &str, config: GnnConfig, out_width: usize) -> Self {
        let h = config.hidden;
        AggGnn {
            config,
            f_enc: Mlp::attach(&format!("{prefix}.enc"), &[NODE_FEATURES, h, h, h]),
            nn_e: Mlp::attach(&format!("{prefix}.edge"), &[3 * h, h, h, h]),
            nn_v: Mlp::attach(&format!("{prefix}.node"), &[2 * h, h, h, h]),
            f_dec: Mlp::attach(&format!("{prefix}.dec"), &[h, h, h, h]),
            f_out: Mlp::attach(
                &format!("{prefix}.out"),
                &[(config.receptive_field + 1) * h, out_width],
            ),
        }
    }

    pub fn shapes(&self) -> Vec<(String, usize, usize)> {
        [&self.f_enc, &self.nn_e, &self.nn_v, &self.f_dec, &self.f_out]
            .iter()
            .flat_map(|mlp| mlp.shapes())
            .collect()
    }

    fn effective_edges(&self, graph: &LocalGraph) -> Vec<(usize, usize)> {
        let mut edges = graph.edges.clone();
        if self.config.bidirectional_edges {
            edges.extend(graph.edges.iter().map(|&(r, s)| (s, r)));
        }
        edges
    }

    /// One graph-network block: per-edge MLP over `[e, v_receiver, v_sender]`,
    /// mean aggregation of transformed incident edges at each receiver (zero
    /// vector when there are none), then a per-node MLP over `[mean, v]`.
    fn gn_block(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        edges: &[(usize, usize)],
        nodes: &[NodeId],
        edge_feats: &[NodeId],
        zero: NodeId,
    ) -> (Vec<NodeId>, Vec<NodeId>) {
        let new_edge_feats: Vec<NodeId> = edges
            .iter()
            .zip(edge_feats)
            .map(|(&(receiver, sender), &e)| {
                let stacked = tape.concat(&[e, nodes[receiver], nodes[sender]]);
                self.nn_e.forward(tape, store, stacked)
            })
            .collect();
        let new_nodes: Vec<NodeId> = (0..nodes.len())
            .map(|l| {
                let incident: Vec<NodeId> = edges
                    .iter()
                    .zip(&new_edge_feats)
                    .filter(|(&(receiver, _), _)| receiver == l)
                    .map(|(_, &e)| e)
                    .collect();
                let aggregated = if incident.is_empty() {
                    zero
                } else {
                    tape.mean_stack(&incident)
                };
                let stacked = tape.concat(&[aggregated, nodes[l]]);
                self.nn_v.forward(tape, store, stacked)
            })
            .collect();
        (new_nodes, new_edge_feats)
    }

    /// Full forward pass; returns one output node (width `out_width`) per
    /// graph node.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, graph: &LocalGraph) -> Vec<NodeId> {
        let edges = self.effective_edges(graph);
        let zero = tape.input(vec![0.0; self.config.hidden]);

        let mut nodes: Vec<NodeId> = graph
            .features
            .iter()
            .map(|feature| {
                let input = tape.input(feature.to_vec());
                self.f_enc.forward(tape, store, input)
            })
            .collect();
        // Initial edge attribute: sender-minus-receiver feature difference,
        // pushed through the shared encoder.
        let mut edge_feats: Vec<NodeId> = edges
            .iter()
            .map(|&(receiver, sender)| {
                let difference: Vec<f64> = graph.features[sender]
                    .iter()
                    .zip(&graph.features[receiver])
                    .map(|(s, r)| s - r)
                    .collect();
                let input = tape.input(difference);
                self.f_enc.forward(tape, store, input)
            })
            .collect();

        let mut stages: Vec<Vec<NodeId>> = vec![nodes
            .iter()
            .map(|&h| self.f_dec.forward(tape, store, h))
            .collect()];
        for _ in 0..self.config.receptive_field {
            let (new_nodes, new_edges) =
                self.gn_block(tape, store, &edges, &nodes, &edge_feats, zero);
            nodes = new_nodes;
            edge_feats = new_edges;
            stages.push(
                nodes
                    .iter()
                    .map(|&h| self.f_dec.forward(tape, store, h))
                    .collect(),
            );
        }

        (0..graph.n_nodes())
            .map(|l| {
                let per_stage: Vec<NodeId> = stages.iter().map(|stage| stage[l]).collect();
                let stacked = tape.concat(&per_stage);
                self.f_out.forward(tape, store, stacked)
            })
            .collect()
    }
}

/// Policy head: one logit per node; the self node's slot means "do not
/// transmit".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub gnn: AggGnn,
}

impl PolicyNet {
    pub fn init<R: Rng>(store: &mut ParamStore, config: GnnConfig, rng: &mut R) -> Self {
        PolicyNet {
            gnn: AggGnn::init(store, "policy", config, 1, rng),
        }
    }

    pub fn attach(config: GnnConfig) -> Self {
        PolicyNet {
            gnn: AggGnn::attach("policy", config, 1),
        }
    }

    /// Per-node logits as one width-`n` tape node.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, graph: &LocalGraph) -> NodeId {
        let outputs = self.gnn.forward(tape, store, graph);
        tape.concat(&outputs)
    }

    /// Samples an action from the Boltzmann distribution over nodes; returns
    /// the chosen node index and its log-probability.
    pub fn sample_action(
        &self,
        store: &ParamStore,
        graph: &LocalGraph,
        rng: &mut PolicyRng,
    ) -> (usize, f64) {
        self.sample_action_explore(store, graph, 0.0, rng)
    }

    /// Samples from the behavior mixture `ε·δ_silent + (1−ε)·π` and returns
    /// the chosen node with the mixture log-probability — the importance
    /// denominator for off-policy surrogate updates. With `ε = 0` this is
    /// exactly on-policy sampling from `π`.
    pub fn sample_action_explore(
        &self,
        store: &ParamStore,
        graph: &LocalGraph,
        explore_silent: f64,
        rng: &mut PolicyRng,
    ) -> (usize, f64) {
        let mut tape = Tape::new();
        let logits = self.logits(&mut tape, store, graph);
        let logp_node = tape.log_softmax(logits);
        let logp = tape.value(logp_node);
        let silent = graph.self_node;
        let draw: f64 = rng.gen();
        let chosen = if draw < explore_silent {
            silent
        } else {
            // Rescale the remaining mass so ε = 0 reproduces a plain draw.
            let draw = (draw - explore_silent) / (1.0 - explore_silent);
            let mut cumulative = 0.0;
            let mut chosen = logp.len() - 1;
            for (i, lp) in logp.iter().enumerate() {
                cumulative += lp.exp();
                if draw < cumulative {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        let pi = logp[chosen].exp();
        let mixture = if chosen == silent {
            explore_silent + (1.0 - explore_silent) * pi
        } else {
            (1.0 - explore_silent) * pi
        };
        (chosen, mixture.ln())
    }
}

/// Value head: one scalar per node, summed over the graph; team value is the
/// sum over all agents' graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueNet {
    pub gnn: AggGnn,
}

impl ValueNet {
    pub fn init<R: Rng>(store: &mut ParamStore, config: GnnConfig, rng: &mut R) -> Self {
        ValueNet {
            gnn: AggGnn::init(store, "value", config, 1, rng),
        }
    }

    pub fn attach(config: GnnConfig) -> Self {
        ValueNet {
            gnn: AggGnn::attach("value", config, 1),
        }
    }

    /// Per-agent value as a scalar tape node.
    pub fn agent_value(&self, tape: &mut Tape, store: &ParamStore, graph: &LocalGraph) -> NodeId {
        let outputs = self.gnn.forward(tape, store, graph);
        let stacked = tape.concat(&outputs);
        tape.sum(stacked)
    }

    /// Team value: sum of per-agent values, evaluated without retaining tapes.
    pub fn team_value(&self, store: &ParamStore, graphs: &[LocalGraph]) -> f64 {
        graphs
            .iter()
            .map(|graph| {
                let mut tape = Tape::new();
                let v = self.agent_value(&mut tape, store, graph);
                tape.scalar(v)
            })
            .sum()
    }
}

/// A trained (or freshly initialized) GNN policy usable by the protocol
/// engine: evaluates the policy network on the agent's local graph and maps
/// the sampled node to an action.
pub struct GnnPolicy {
    pub store: ParamStore,
    pub net: PolicyNet,
    pub mission: MissionConfig,
}

impl GnnPolicy {
    pub fn new(store: ParamStore, config: GnnConfig, mission: MissionConfig) -> Self {
        GnnPolicy {
            net: PolicyNet::attach(config),
            store,
            mission,
        }
    }
}

impl Policy for GnnPolicy {
    fn transmission(&self, table: &KnowledgeTable, t: u64, rng: &mut PolicyRng) -> Transmit {
        let graph = table.extract_graph(t, &self.mission);
        let (node, _) = self.net.sample_action(&self.store, &graph, rng);
        if node == table.owner() {
            Transmit::Silent
        } else {
            Transmit::To(node)
        }
    }

    fn name(&self) -> String {
        "gnn".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config(k: usize) -> GnnConfig {
        GnnConfig {
            receptive_field: k,
            hidden: 4,
            bidirectional_edges: false,
        }
    }

    fn random_graph(n: usize, rng: &mut ChaCha8Rng) -> LocalGraph {
        use rand::Rng;
        let features = (0..n)
            .map(|i| {
                let mut f = [0.0; NODE_FEATURES];
                for x in f.iter_mut() {
                    *x = rng.gen_range(-1.0..1.0);
                }
                f[6] = if i == 0 { 1.0 } else { 0.0 };
                f
            })
            .collect();
        // Random parent forest pointing toward lower indices; no self-loops.
        let mut edges = Vec::new();
        for s in 1..n {
            if rng.gen_bool(0.8) {
                edges.push((rng.gen_range(0..s), s));
            }
        }
        LocalGraph {
            features,
            edges,
            self_node: 0,
        }
    }

    #[test]
    fn no_edges_aggregates_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let gnn = AggGnn::init(&mut store, "g", small_config(1), 2, &mut rng);
        let graph = LocalGraph {
            features: vec![[0.1; NODE_FEATURES]; 3],
            edges: vec![],
            self_node: 0,
        };
        let mut tape = Tape::new();
        let out = gnn.forward(&mut tape, &store, &graph);
        // With identical features and no edges, all nodes transform alike.
        assert_eq!(tape.value(out[0]), tape.value(out[1]));
        assert_eq!(tape.value(out[1]), tape.value(out[2]));
    }

    #[test]
    fn duplicate_identical_edge_leaves_mean_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let gnn = AggGnn::init(&mut store, "g", small_config(1), 2, &mut rng);
        let mut graph = random_graph(4, &mut rng);
        graph.edges = vec![(0, 1)];
        let mut tape = Tape::new();
        let single = gnn.forward(&mut tape, &store, &graph);
        let single_out = tape.value(single[0]).to_vec();

        graph.edges = vec![(0, 1), (0, 1)];
        let mut tape2 = Tape::new();
        let doubled = gnn.forward(&mut tape2, &store, &graph);
        for (a, b) in tape2.value(doubled[0]).iter().zip(&single_out) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn gn_block_matches_straight_line_oracle_on_path() {
        // 3-node path 2 <- 1 <- 0 reading edges as (receiver, sender), tiny
        // widths, against an independent plain-loop evaluation.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let config = GnnConfig {
            receptive_field: 1,
            hidden: 2,
            bidirectional_edges: false,
        };
        let gnn = AggGnn::init(&mut store, "g", config, 1, &mut rng);
        let graph = {
            let mut g = random_graph(3, &mut rng);
            g.edges = vec![(0, 1), (1, 2)];
            g
        };

        let eval_mlp = |store: &ParamStore, name: &str, layers: usize, input: &[f64]| -> Vec<f64> {
            let mut x = input.to_vec();
            for layer in 0..layers {
                let w = store.param(&format!("{name}.w{layer}"));
                let b = store.param(&format!("{name}.b{layer}"));
                let mut y: Vec<f64> = (0..w.rows)
                    .map(|o| {
                        b.value[o]
                            + (0..w.cols).map(|i| w.value[o * w.cols + i] * x[i]).sum::<f64>()
                    })
                    .collect();
                if layer + 1 < layers {
                    y.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                x = y;
            }
            x
        };

        // Oracle forward.
        let enc: Vec<Vec<f64>> = graph
            .features
            .iter()
            .map(|f| eval_mlp(&store, "g.enc", 3, f))
            .collect();
        let edge0: Vec<Vec<f64>> = graph
            .edges
            .iter()
            .map(|&(r, s)| {
                let diff: Vec<f64> = graph.features[s]
                    .iter()
                    .zip(&graph.features[r])
                    .map(|(a, b)| a - b)
                    .collect();
                eval_mlp(&store, "g.enc", 3, &diff)
            })
            .collect();
        let edge1: Vec<Vec<f64>> = graph
            .edges
            .iter()
            .zip(&edge0)
            .map(|(&(r, s), e)| {
                let mut input = e.clone();
                input.extend_from_slice(&enc[r]);
                input.extend_from_slice(&enc[s]);
                eval_mlp(&store, "g.edge", 3, &input)
            })
            .collect();
        let node1: Vec<Vec<f64>> = (0..3)
            .map(|l| {
                let incident: Vec<&Vec<f64>> = graph
                    .edges
                    .iter()
                    .zip(&edge1)
                    .filter(|(&(r, _), _)| r == l)
                    .map(|(_, e)| e)
                    .collect();
                let mut mean = vec![0.0; 2];
                for e in &incident {
                    for (m, x) in mean.iter_mut().zip(e.iter()) {
                        *m += x;
                    }
                }
                if !incident.is_empty() {
                    mean.iter_mut().for_each(|m| *m /= incident.len() as f64);
                }
                let mut input = mean;
                input.extend_from_slice(&enc[l]);
                eval_mlp(&store, "g.node", 3, &input)
            })
            .collect();
        let expected: Vec<Vec<f64>> = (0..3)
            .map(|l| {
                let mut stacked = eval_mlp(&store, "g.dec", 3, &enc[l]);
                stacked.extend(eval_mlp(&store, "g.dec", 3, &node1[l]));
                eval_mlp(&store, "g.out", 1, &stacked)
            })
            .collect();

        let mut tape = Tape::new();
        let out = gnn.forward(&mut tape, &store, &graph);
        for l in 0..3 {
            assert_relative_eq!(tape.value(out[l])[0], expected[l][0], epsilon = 1e-12);
        }
    }

    #[test]
    fn k_zero_ignores_other_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let gnn = AggGnn::init(&mut store, "g", small_config(0), 1, &mut rng);
        let mut graph = random_graph(5, &mut rng);
        let mut tape = Tape::new();
        let out = gnn.forward(&mut tape, &store, &graph)[0];
        let base = tape.value(out).to_vec();
        for node in 1..5 {
            graph.features[node][0] += 0.37;
        }
        let mut tape2 = Tape::new();
        let out2 = gnn.forward(&mut tape2, &store, &graph)[0];
        let perturbed = tape2.value(out2).to_vec();
        assert_eq!(base, perturbed);
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let gnn = AggGnn::init(&mut store, "g", small_config(2), 2, &mut rng);
        let graph = random_graph(6, &mut rng);

        // Reverse relabeling.
        let n = 6;
        let relabel = |i: usize| n - 1 - i;
        let permuted = LocalGraph {
            features: (0..n).map(|i| graph.features[relabel(i)]).collect(),
            edges: graph
                .edges
                .iter()
                .map(|&(r, s)| (relabel(r), relabel(s)))
                .collect(),
            self_node: relabel(graph.self_node),
        };
        let mut tape = Tape::new();
        let out = gnn.forward(&mut tape, &store, &graph);
        let mut tape2 = Tape::new();
        let out_permuted = gnn.forward(&mut tape2, &store, &permuted);
        for i in 0..n {
            for (a, b) in tape.value(out[i]).iter().zip(tape2.value(out_permuted[relabel(i)])) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn value_additivity_and_zero_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let value = ValueNet::init(&mut store, small_config(1), &mut rng);
        let graphs: Vec<LocalGraph> = (0..3).map(|_| random_graph(4, &mut rng)).collect();
        let team = value.team_value(&store, &graphs);
        let doubled: Vec<LocalGraph> = graphs.iter().chain(graphs.iter()).cloned().collect();
        assert_relative_eq!(value.team_value(&store, &doubled), 2.0 * team, max_relative = 1e-12);

        let names: Vec<String> = store.names().map(String::from).collect();
        for name in names {
            store.param_mut(&name).value.iter_mut().for_each(|w| *w = 0.0);
        }
        assert_eq!(value.team_value(&store, &graphs), 0.0);
    }

    #[test]
    fn sampling_statistics_uniform_and_saturated() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let net = PolicyNet::init(&mut store, small_config(0), &mut rng);
        // Zero all parameters: equal logits, uniform distribution.
        let names: Vec<String> = store.names().map(String::from).collect();
        for name in &names {
            store.param_mut(name).value.iter_mut().for_each(|w| *w = 0.0);
        }
        let graph = random_graph(4, &mut rng);
        let mut policy_rng = PolicyRng::seed_from_u64(11);
        let samples = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..samples {
            let (node, logp) = net.sample_action(&store, &graph, &mut policy_rng);
            assert_relative_eq!(logp, (1.0f64 / 4.0).ln(), epsilon = 1e-12);
            counts[node] += 1;
        }
        // Multinomial: 3 sigma around n*p with sigma = sqrt(n*p*(1-p)).
        let expected = samples as f64 / 4.0;
        let sigma = (samples as f64 * 0.25 * 0.75).sqrt();
        for count in counts {
            assert!((count as f64 - expected).abs() < 3.0 * sigma, "counts {counts:?}");
        }
    }

    #[test]
    fn logit_shift_invariance_and_saturation() {
        let logits = vec![0.2, -0.3, 0.8];
        let softmax = |z: &[f64]| {
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / total).collect::<Vec<f64>>()
        };
        let base = softmax(&logits);
        let shifted = softmax(&logits.iter().map(|x| x + 5.0).collect::<Vec<f64>>());
        for (a, b) in base.iter().zip(&shifted) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        let mut dominated = logits.clone();
        dominated[1] += 20.0;
        assert!(softmax(&dominated)[1] > 0.999);
    }
}
