//! Two-level map equation for undirected flow and a greedy optimizer for it.
//!
//! Node visit rates are strength-proportional, `p_a = s_a / 2W`, and a
//! module's exit flow is the weight leaving it divided by `2W`. The
//! description length of a partition `M` is
//!
//! ```text
//! L(M) = plogp(sum q_m) - 2 sum plogp(q_m) - sum plogp(p_a) + sum plogp(q_m + p_m)
//! ```
//!
//! with `plogp(x) = x log2 x` and `p_m` the total visit rate of module `m`.
//! [`cluster`] minimizes it with repeated local moves, module aggregation and
//! a leaf-level fine-tuning pass, in the spirit of Louvain.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;
use crate::simgraph::SimilarityGraph;

/// Convergence threshold on the improvement of a full optimization round, in bits.
pub const CONVERGENCE_BITS: f64 = 1e-12;
/// Smallest single-move improvement that is accepted.
const MIN_MOVE_IMPROVEMENT: f64 = 1e-14;
pub const MAX_OUTER_ITERATIONS: usize = 100;
const MAX_SWEEPS: usize = 100;

#[inline]
pub fn plogp(x: f64) -> f64 {
    if x > 0.0 {
        x * x.log2()
    } else {
        0.0
    }
}

/// Per-node conception ids, canonicalized so ids are contiguous and ordered by
/// the lowest node they contain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptionAssignment {
    labels: Vec<usize>,
    num_conceptions: usize,
}

impl ConceptionAssignment {
    /// Canonicalizes arbitrary module ids.
    pub fn from_modules(modules: &[usize]) -> Self {
        let mut remap = std::collections::HashMap::new();
        let labels: Vec<usize> = modules
            .iter()
            .map(|&m| {
                let next = remap.len();
                *remap.entry(m).or_insert(next)
            })
            .collect();
        Self {
            num_conceptions: remap.len(),
            labels,
        }
    }

    pub fn singletons(n: usize) -> Self {
        Self {
            labels: (0..n).collect(),
            num_conceptions: n,
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_conceptions(&self) -> usize {
        self.num_conceptions
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Node indices grouped by conception.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_conceptions];
        for (i, &c) in self.labels.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    /// `node,conception` CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("node,conception\n");
        for (i, c) in self.labels.iter().enumerate() {
            s.push_str(&format!("{i},{c}\n"));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Flow quantities of a partition and its codelength.
#[derive(Debug, Clone, PartialEq)]
pub struct MapEquationState {
    pub node_visit_rates: Vec<f64>,
    pub module_exit_flows: Vec<f64>,
    pub codelength: f64,
}

impl MapEquationState {
    /// `modules[i]` is the module of node `i`; ids need not be contiguous.
    pub fn evaluate(graph: &SimilarityGraph, modules: &[usize]) -> Result<Self> {
        let n = graph.num_nodes();
        if modules.len() != n {
            return Err(Error::ShapeMismatch(format!("partition covers {} nodes, graph has {n}", modules.len())));
        }
        let total: f64 = graph.edges().iter().map(|e| e.weight).sum();
        if total <= 0.0 {
            return Err(Error::invalid("codelength needs a graph with at least one edge"));
        }
        let num_modules = modules.iter().copied().max().map_or(0, |m| m + 1);
        let mut node_visit_rates = vec![0.0; n];
        let mut module_exit_flows = vec![0.0; num_modules];
        for e in graph.edges() {
            let flow = e.weight / total;
            node_visit_rates[e.i] += flow;
            if modules[e.i] != modules[e.j] {
                module_exit_flows[modules[e.i]] += flow;
            }
        }
        let mut module_flow = vec![0.0; num_modules];
        for (i, &p) in node_visit_rates.iter().enumerate() {
            module_flow[modules[i]] += p;
        }
        let sum_exit: f64 = module_exit_flows.iter().sum();
        let codelength = plogp(sum_exit) - 2.0 * module_exit_flows.iter().map(|&q| plogp(q)).sum::<f64>()
            - node_visit_rates.iter().map(|&p| plogp(p)).sum::<f64>()
            + module_exit_flows
                .iter()
                .zip(&module_flow)
                .map(|(&q, &p)| plogp(q + p))
                .sum::<f64>();
        Ok(Self {
            node_visit_rates,
            module_exit_flows,
            codelength,
        })
    }
}

/// Two-level map equation codelength of `partition` on `graph`, in bits.
pub fn codelength(graph: &SimilarityGraph, partition: &ConceptionAssignment) -> Result<f64> {
    Ok(MapEquationState::evaluate(graph, partition.labels())?.codelength)
}

/// Partitions `graph` by minimizing the map equation. Nodes without edges
/// become singleton conceptions. `seed` only shuffles the sweep order.
pub fn cluster(graph: &SimilarityGraph, seed: u64) -> ConceptionAssignment {
    cluster_traced(graph, seed, &mut |_| {})
}

/// Like [`cluster`], reporting the codelength of every accepted state to `hook`.
pub fn cluster_traced(graph: &SimilarityGraph, seed: u64, hook: &mut dyn FnMut(f64)) -> ConceptionAssignment {
    let n = graph.num_nodes();
    let total: f64 = graph.edges().iter().map(|e| e.weight).sum();
    if n == 0 || total <= 0.0 {
        return ConceptionAssignment::singletons(n);
    }
    let leaf = FlowNetwork::from_graph(graph, total);
    let node_entropy: f64 = leaf.flow.iter().map(|&p| plogp(p)).sum();
    let mut rng = rng::stream_rng(seed, rng::Stream::Cluster, 0);

    let mut partition: Vec<usize> = (0..n).collect();
    let mut current = leaf.codelength(&partition, node_entropy);
    hook(current);

    for _ in 0..MAX_OUTER_ITERATIONS {
        let round_start = current;

        // Leaf-level moves from the current partition.
        let mut leaf_modules = partition.clone();
        current = leaf.local_moves(&mut leaf_modules, node_entropy, current, &mut rng, hook);
        partition = leaf_modules;

        // Aggregate and move whole modules until nothing changes.
        loop {
            let (net, node_of) = leaf.aggregate(&partition);
            let mut modules: Vec<usize> = (0..net.len()).collect();
            current = net.local_moves(&mut modules, node_entropy, current, &mut rng, hook);
            let merged = modules.iter().enumerate().any(|(i, &m)| m != i);
            if !merged {
                break;
            }
            for m in partition.iter_mut() {
                *m = modules[node_of[*m]];
            }
        }

        current = leaf.codelength(&partition, node_entropy);
        hook(current);
        if round_start - current <= CONVERGENCE_BITS {
            break;
        }
    }

    // Local search can miss the trivial partition; compare against it.
    let connected: Vec<usize> = (0..n).map(|i| if leaf.flow[i] > 0.0 { 0 } else { i + 1 }).collect();
    let one_module = leaf.codelength(&connected, node_entropy);
    if one_module < current {
        partition = connected;
        hook(one_module);
    }
    ConceptionAssignment::from_modules(&partition)
}

/// Flow network at one aggregation level. Flows are normalized edge weights;
/// internal flow of aggregated nodes is dropped since it never crosses a
/// module boundary.
struct FlowNetwork {
    flow: Vec<f64>,
    adj: Vec<Vec<(usize, f64)>>,
    out_flow: Vec<f64>,
}

impl FlowNetwork {
    fn from_graph(graph: &SimilarityGraph, total: f64) -> Self {
        let n = graph.num_nodes();
        let mut adj = vec![Vec::new(); n];
        let mut flow = vec![0.0; n];
        for e in graph.edges() {
            let f = e.weight / total;
            adj[e.i].push((e.j, f));
            flow[e.i] += f;
        }
        let out_flow = flow.clone();
        Self { flow, adj, out_flow }
    }

    fn len(&self) -> usize {
        self.flow.len()
    }

    /// Collapses modules into nodes. Returns the network and the map from
    /// module id to its new node index.
    fn aggregate(&self, modules: &[usize]) -> (FlowNetwork, Vec<usize>) {
        let mut node_of = vec![usize::MAX; modules.iter().copied().max().map_or(0, |m| m + 1)];
        let mut count = 0;
        for &m in modules {
            if node_of[m] == usize::MAX {
                node_of[m] = count;
                count += 1;
            }
        }
        let mut flow = vec![0.0; count];
        let mut links: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); count];
        for i in 0..self.len() {
            let a = node_of[modules[i]];
            flow[a] += self.flow[i];
            for &(j, f) in &self.adj[i] {
                let b = node_of[modules[j]];
                if a != b {
                    *links[a].entry(b).or_insert(0.0) += f;
                }
            }
        }
        let adj: Vec<Vec<(usize, f64)>> = links.into_iter().map(|l| l.into_iter().collect()).collect();
        let out_flow = adj.iter().map(|l| l.iter().map(|&(_, f)| f).sum()).collect();
        (FlowNetwork { flow, adj, out_flow }, node_of)
    }

    fn codelength(&self, modules: &[usize], node_entropy: f64) -> f64 {
        let stats = ModuleStats::new(self, modules);
        stats.codelength(node_entropy)
    }

    /// Greedy sweeps moving single nodes between modules. Returns the new
    /// codelength (tracked incrementally from `start`).
    fn local_moves(
        &self,
        modules: &mut [usize],
        node_entropy: f64,
        start: f64,
        rng: &mut rng::Rng,
        hook: &mut dyn FnMut(f64),
    ) -> f64 {
        let n = self.len();
        let mut stats = ModuleStats::new(self, modules);
        let mut current = start;
        let mut order: Vec<usize> = (0..n).collect();
        let mut empty: Vec<usize> = (0..n).filter(|&m| stats.size[m] == 0).rev().collect();
        let mut neighbor_flow = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();

        for _ in 0..MAX_SWEEPS {
            order.shuffle(rng);
            let sweep_start = current;
            for &node in &order {
                if self.adj[node].is_empty() {
                    continue;
                }
                let from = modules[node];
                for &(j, f) in &self.adj[node] {
                    let m = modules[j];
                    if neighbor_flow[m] == 0.0 {
                        touched.push(m);
                    }
                    neighbor_flow[m] += f;
                }
                touched.sort_unstable();

                let to_self = neighbor_flow[from];
                let mut best: Option<(usize, f64)> = None;
                for &m in &touched {
                    if m == from {
                        continue;
                    }
                    let delta = stats.move_delta(self, node, from, to_self, m, neighbor_flow[m]);
                    if best.is_none_or(|(_, d)| delta < d) {
                        best = Some((m, delta));
                    }
                }
                if stats.size[from] > 1 {
                    if let Some(&m) = empty.last() {
                        let delta = stats.move_delta(self, node, from, to_self, m, 0.0);
                        if best.is_none_or(|(_, d)| delta < d) {
                            best = Some((m, delta));
                        }
                    }
                }

                if let Some((to, delta)) = best.filter(|&(_, d)| d < -MIN_MOVE_IMPROVEMENT) {
                    if stats.size[to] == 0 {
                        empty.pop();
                    }
                    stats.apply_move(self, node, from, to_self, to, neighbor_flow[to]);
                    modules[node] = to;
                    if stats.size[from] == 0 {
                        empty.push(from);
                    }
                    current += delta;
                    hook(current);
                }

                for &m in &touched {
                    neighbor_flow[m] = 0.0;
                }
                touched.clear();
            }
            if sweep_start - current <= CONVERGENCE_BITS {
                break;
            }
        }
        stats.codelength(node_entropy)
    }
}

struct ModuleStats {
    exit: Vec<f64>,
    flow: Vec<f64>,
    size: Vec<usize>,
    sum_exit: f64,
}

impl ModuleStats {
    fn new(net: &FlowNetwork, modules: &[usize]) -> Self {
        let n = net.len().max(modules.iter().copied().max().map_or(0, |m| m + 1));
        let mut exit = vec![0.0; n];
        let mut flow = vec![0.0; n];
        let mut size = vec![0; n];
        for i in 0..net.len() {
            let m = modules[i];
            flow[m] += net.flow[i];
            size[m] += 1;
            for &(j, f) in &net.adj[i] {
                if modules[j] != m {
                    exit[m] += f;
                }
            }
        }
        let sum_exit = exit.iter().sum();
        Self {
            exit,
            flow,
            size,
            sum_exit,
        }
    }

    fn codelength(&self, node_entropy: f64) -> f64 {
        let sum_exit: f64 = self.exit.iter().sum();
        plogp(sum_exit) - 2.0 * self.exit.iter().map(|&q| plogp(q)).sum::<f64>() - node_entropy
            + self
                .exit
                .iter()
                .zip(&self.flow)
                .map(|(&q, &p)| plogp(q + p))
                .sum::<f64>()
    }

    fn moved(&self, net: &FlowNetwork, node: usize, from: usize, to_from: f64, to: usize, to_to: f64) -> [f64; 5] {
        let out = net.out_flow[node];
        let exit_from = self.exit[from] - out + 2.0 * to_from;
        let exit_to = self.exit[to] + out - 2.0 * to_to;
        let sum_exit = self.sum_exit - self.exit[from] - self.exit[to] + exit_from + exit_to;
        let flow_from = self.flow[from] - net.flow[node];
        let flow_to = self.flow[to] + net.flow[node];
        [exit_from, exit_to, sum_exit, flow_from, flow_to]
    }

    fn move_delta(&self, net: &FlowNetwork, node: usize, from: usize, to_from: f64, to: usize, to_to: f64) -> f64 {
        let [exit_from, exit_to, sum_exit, flow_from, flow_to] = self.moved(net, node, from, to_from, to, to_to);
        let (old_from, old_to) = (self.exit[from], self.exit[to]);
        (plogp(sum_exit) - plogp(self.sum_exit))
            - 2.0 * (plogp(exit_from) + plogp(exit_to) - plogp(old_from) - plogp(old_to))
            + (plogp(exit_from + flow_from) + plogp(exit_to + flow_to)
                - plogp(old_from + self.flow[from])
                - plogp(old_to + self.flow[to]))
    }

    fn apply_move(&mut self, net: &FlowNetwork, node: usize, from: usize, to_from: f64, to: usize, to_to: f64) {
        let [exit_from, exit_to, sum_exit, flow_from, flow_to] = self.moved(net, node, from, to_from, to, to_to);
        self.exit[from] = if self.size[from] == 1 { 0.0 } else { exit_from.max(0.0) };
        self.exit[to] = exit_to.max(0.0);
        self.sum_exit = sum_exit;
        self.flow[from] = flow_from;
        self.flow[to] = flow_to;
        self.size[from] -= 1;
        self.size[to] += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clique_pair() -> SimilarityGraph {
        let mut edges = Vec::new();
        for base in [0, 4] {
            for a in 0..4 {
                for b in a + 1..4 {
                    edges.push((base + a, base + b, 1.0));
                }
            }
        }
        SimilarityGraph::from_undirected(8, edges).unwrap()
    }

    #[test]
    fn two_cliques_codelength_is_two_bits() {
        let g = clique_pair();
        let p = ConceptionAssignment::from_modules(&[0, 0, 0, 0, 1, 1, 1, 1]);
        let l = codelength(&g, &p).unwrap();
        assert!((l - 2.0).abs() < 1e-12, "{l}");
        let state = MapEquationState::evaluate(&g, p.labels()).unwrap();
        assert!(state.module_exit_flows.iter().all(|&q| q == 0.0));
        assert!((state.node_visit_rates.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_module_is_node_entropy() {
        let g = SimilarityGraph::from_undirected(4, [(0, 1, 0.5), (1, 2, 2.0), (2, 3, 1.0), (0, 3, 0.3)]).unwrap();
        let one = ConceptionAssignment::from_modules(&[0; 4]);
        let state = MapEquationState::evaluate(&g, one.labels()).unwrap();
        let h: f64 = -state.node_visit_rates.iter().map(|&p| plogp(p)).sum::<f64>();
        assert!((state.codelength - h).abs() < 1e-12);
    }

    #[test]
    fn single_edge_singletons_cost_more() {
        let g = SimilarityGraph::from_undirected(2, [(0, 1, 1.0)]).unwrap();
        let one = codelength(&g, &ConceptionAssignment::from_modules(&[0, 0])).unwrap();
        let split = codelength(&g, &ConceptionAssignment::singletons(2)).unwrap();
        // p = 1/2 each; one module: 1 bit. Singletons: q = 1/2 each,
        // plogp(1) - 2*2*plogp(1/2) - 2*plogp(1/2) + 2*plogp(1) = 2 + 1 = 3 bits.
        assert!((one - 1.0).abs() < 1e-12);
        assert!((split - 3.0).abs() < 1e-12);
        assert!(split > one);
    }

    #[test]
    fn codelength_rejects_bad_input() {
        let g = SimilarityGraph::from_undirected(3, [(0, 1, 1.0)]).unwrap();
        assert!(codelength(&g, &ConceptionAssignment::singletons(2)).is_err());
        let empty = SimilarityGraph::from_undirected(3, []).unwrap();
        assert!(codelength(&empty, &ConceptionAssignment::singletons(3)).is_err());
    }

    #[test]
    fn finds_two_cliques() {
        let g = clique_pair();
        for seed in 0..10 {
            let p = cluster(&g, seed);
            assert_eq!(p.labels(), &[0, 0, 0, 0, 1, 1, 1, 1]);
        }
    }

    #[test]
    fn disconnected_nodes_stay_singletons() {
        let g = SimilarityGraph::from_undirected(6, []).unwrap();
        assert_eq!(cluster(&g, 1).num_conceptions(), 6);

        let g = SimilarityGraph::from_undirected(4, [(0, 1, 1.0)]).unwrap();
        let p = cluster(&g, 1);
        assert_eq!(p.labels(), &[0, 0, 1, 2]);
    }

    #[test]
    fn complete_graph_is_one_module() {
        for n in 2..=8 {
            let mut edges = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    edges.push((a, b, 1.0));
                }
            }
            let g = SimilarityGraph::from_undirected(n, edges).unwrap();
            assert_eq!(cluster(&g, 3).num_conceptions(), 1, "n = {n}");
        }
    }

    #[test]
    fn canonical_ids() {
        let p = ConceptionAssignment::from_modules(&[7, 3, 7, 9]);
        assert_eq!(p.labels(), &[0, 1, 0, 2]);
        assert_eq!(p.num_conceptions(), 3);
        assert_eq!(p.to_csv(), "node,conception\n0,0\n1,1\n2,0\n3,2\n");
    }
}
