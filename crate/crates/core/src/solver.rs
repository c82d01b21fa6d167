//! Solvers for the minimum-cost subgraph multicut problem.
//!
//! [`solve_exact`] enumerates every selection and every partition of the
//! selection into edge-connected blocks; it is the reference for small
//! instances. [`solve_local_search`] works on the constraint-contracted graph
//! from [`apply_constraints`]: greedy additive edge contraction from
//! singletons, followed by sweeps of node relocation, selection toggling,
//! cluster merging and cluster splitting until a sweep finds no improving move.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{objective, ordered, NodeId, ProblemGraph, Solution};

/// Hard ceiling on `max_exact_nodes`; Bell(13) leaves are already ~2.8e7.
pub const EXACT_NODE_LIMIT: usize = 12;

/// Minimum objective decrease for a move to count as improving.
const IMPROVEMENT_EPS: f64 = 1e-10;
/// Objectives closer than this are ties for the exact solver.
const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverParams {
    pub max_exact_nodes: usize,
    /// Maximum number of accepted local-search moves.
    pub move_budget: usize,
    pub seed: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            max_exact_nodes: 10,
            move_budget: 1_000_000,
            seed: 0,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_exact_nodes > EXACT_NODE_LIMIT {
            return Err(Error::config(format!(
                "max_exact_nodes = {} exceeds {EXACT_NODE_LIMIT}",
                self.max_exact_nodes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    MergeClusters,
    MoveNode,
    ToggleSelection,
    SplitCluster,
}

/// Accepted local-search moves and their objective deltas.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveLog {
    pub initial_objective: f64,
    pub moves: Vec<(MoveKind, f64)>,
}

impl MoveLog {
    pub fn total_delta(&self) -> f64 {
        self.moves.iter().map(|(_, d)| d).sum()
    }

    pub fn count(&self, kind: MoveKind) -> usize {
        self.moves.iter().filter(|(k, _)| *k == kind).count()
    }
}

/// A graph with must-link groups contracted into super-nodes.
///
/// Super-node costs include the costs of the original edges inside the group,
/// which are always joined. Parallel edges between groups are summed.
#[derive(Debug, Clone)]
pub struct ConstrainedGraph {
    /// Original node ids per super-node, sorted; super-nodes are ordered by
    /// their smallest member.
    pub members: Vec<Vec<NodeId>>,
    /// Super-node of every original node.
    pub super_of: Vec<usize>,
    pub node_costs: Vec<f64>,
    /// Neighbors with summed edge cost, sorted by neighbor id.
    pub adjacency: Vec<Vec<(usize, f64)>>,
    /// Must-cut partners per super-node, sorted.
    pub cut_partners: Vec<Vec<usize>>,
    /// Super-nodes that must be selected (non-trivial must-link groups).
    pub forced: Vec<bool>,
}

impl ConstrainedGraph {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    fn is_cut(&self, a: usize, b: usize) -> bool {
        self.cut_partners[a].binary_search(&b).is_ok()
    }

    /// Maps clusters of super-nodes back to a solution on the original graph.
    pub fn expand<'a>(&self, clusters: impl IntoIterator<Item = &'a Vec<usize>>) -> Solution {
        let expanded: Vec<Vec<NodeId>> = clusters
            .into_iter()
            .map(|c| {
                let mut nodes: Vec<NodeId> = c
                    .iter()
                    .flat_map(|&s| self.members[s].iter().copied())
                    .collect();
                nodes.sort_unstable();
                nodes
            })
            .collect();
        Solution::from_clusters(expanded).canonical()
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = ordered(ra, rb);
            self.parent[hi] = lo;
        }
    }
}

/// Contracts must-link groups and registers must-cut pairs between groups.
///
/// Fails when a must-cut pair ends up inside one must-link group (the error
/// names the linking chain) or when a must-link group is not connected by
/// graph edges among its members, since such a group can never form a
/// connected cluster.
pub fn apply_constraints(graph: &ProblemGraph) -> Result<ConstrainedGraph> {
    let n = graph.num_nodes();
    let mut uf = UnionFind::new(n);
    for &(a, b) in graph.must_link() {
        uf.union(a, b);
    }

    for &(a, b) in graph.must_cut() {
        if uf.find(a) == uf.find(b) {
            let mut chain = must_link_path(graph, a, b);
            chain.push(a);
            return Err(Error::Infeasible {
                reason: format!("must-cut pair ({a}, {b}) is linked through must-link constraints"),
                chain,
            });
        }
    }

    let mut group_of_root: BTreeMap<usize, usize> = BTreeMap::new();
    let mut members: Vec<Vec<NodeId>> = Vec::new();
    let mut super_of = vec![0; n];
    for v in 0..n {
        let root = uf.find(v);
        let id = *group_of_root.entry(root).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        members[id].push(v);
        super_of[v] = id;
    }

    let m = members.len();
    let mut node_costs: Vec<f64> = members
        .iter()
        .map(|g| g.iter().map(|&v| graph.node_cost(v)).sum())
        .collect();
    let mut adj: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); m];
    for e in graph.edges() {
        let (su, sv) = (super_of[e.u], super_of[e.v]);
        if su == sv {
            node_costs[su] += e.cost;
        } else {
            *adj[su].entry(sv).or_insert(0.0) += e.cost;
            *adj[sv].entry(su).or_insert(0.0) += e.cost;
        }
    }

    for group in members.iter().filter(|g| g.len() > 1) {
        let comps = induced_components(graph, group);
        if comps.len() > 1 {
            return Err(Error::Infeasible {
                reason: "must-link group is not connected by graph edges".into(),
                chain: group.clone(),
            });
        }
    }

    let mut cut_partners = vec![Vec::new(); m];
    for &(a, b) in graph.must_cut() {
        let (sa, sb) = (super_of[a], super_of[b]);
        cut_partners[sa].push(sb);
        cut_partners[sb].push(sa);
    }
    for p in &mut cut_partners {
        p.sort_unstable();
        p.dedup();
    }

    let forced = members.iter().map(|g| g.len() > 1).collect();
    Ok(ConstrainedGraph {
        members,
        super_of,
        node_costs,
        adjacency: adj.into_iter().map(|a| a.into_iter().collect()).collect(),
        cut_partners,
        forced,
    })
}

/// Shortest chain of must-link pairs from `a` to `b`.
fn must_link_path(graph: &ProblemGraph, a: NodeId, b: NodeId) -> Vec<NodeId> {
    let mut links: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for &(x, y) in graph.must_link() {
        links.entry(x).or_default().push(y);
        links.entry(y).or_default().push(x);
    }
    let mut prev: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut queue = VecDeque::from([a]);
    prev.insert(a, a);
    while let Some(v) = queue.pop_front() {
        if v == b {
            break;
        }
        for &w in links.get(&v).into_iter().flatten() {
            if let std::collections::btree_map::Entry::Vacant(e) = prev.entry(w) {
                e.insert(v);
                queue.push_back(w);
            }
        }
    }
    let mut path = vec![b];
    let mut cur = b;
    while cur != a {
        cur = prev[&cur];
        path.push(cur);
    }
    path.reverse();
    path
}

fn induced_components(graph: &ProblemGraph, nodes: &[NodeId]) -> Vec<Vec<NodeId>> {
    let inside: std::collections::BTreeSet<NodeId> = nodes.iter().copied().collect();
    let mut seen = std::collections::BTreeSet::new();
    let mut comps = Vec::new();
    for &s in nodes {
        if !seen.insert(s) {
            continue;
        }
        let mut comp = vec![s];
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for (w, _) in graph.neighbors(v) {
                if inside.contains(&w) && seen.insert(w) {
                    comp.push(w);
                    queue.push_back(w);
                }
            }
        }
        comps.push(comp);
    }
    comps
}

// ---------------------------------------------------------------------------
// Exact enumeration
// ---------------------------------------------------------------------------

/// Global minimizer by enumeration of all feasible (selection, connected
/// partition) pairs. Ties are broken by the lexicographically smallest list of
/// sorted clusters.
pub fn solve_exact(graph: &ProblemGraph, params: &SolverParams) -> Result<Solution> {
    params.validate()?;
    let n = graph.num_nodes();
    if n > params.max_exact_nodes {
        return Err(Error::TooLarge {
            nodes: n,
            limit: params.max_exact_nodes,
        });
    }

    let mut weight = vec![vec![None; n]; n];
    let mut adj_mask = vec![0u32; n];
    for e in graph.edges() {
        weight[e.u][e.v] = Some(e.cost);
        weight[e.v][e.u] = Some(e.cost);
        adj_mask[e.u] |= 1 << e.v;
        adj_mask[e.v] |= 1 << e.u;
    }
    let mut link = vec![Vec::new(); n];
    for &(a, b) in graph.must_link() {
        link[a].push(b);
        link[b].push(a);
    }
    let mut cut = vec![Vec::new(); n];
    for &(a, b) in graph.must_cut() {
        cut[a].push(b);
        cut[b].push(a);
    }

    let mut search = ExactSearch {
        n,
        costs: graph.node_costs(),
        weight,
        adj_mask,
        link,
        cut,
        label: vec![None; n],
        blocks: Vec::new(),
        best: None,
    };
    search.recurse(0, 0.0);

    let (_, clusters) = search.best.ok_or_else(|| Error::Infeasible {
        reason: "no feasible solution exists".into(),
        chain: Vec::new(),
    })?;
    Ok(Solution::from_clusters(clusters))
}

struct ExactSearch<'a> {
    n: usize,
    costs: &'a [f64],
    weight: Vec<Vec<Option<f64>>>,
    adj_mask: Vec<u32>,
    link: Vec<Vec<NodeId>>,
    cut: Vec<Vec<NodeId>>,
    label: Vec<Option<usize>>,
    /// Member bitmask per block.
    blocks: Vec<u32>,
    best: Option<(f64, Vec<Vec<NodeId>>)>,
}

impl ExactSearch<'_> {
    fn recurse(&mut self, i: usize, value: f64) {
        if i == self.n {
            self.leaf(value);
            return;
        }
        // unselected
        if self.link[i].is_empty() {
            self.label[i] = None;
            self.recurse(i + 1, value);
        }
        // existing blocks and one new block
        for b in 0..=self.blocks.len() {
            if !self.compatible(i, b) {
                continue;
            }
            let mut delta = self.costs[i];
            let opened = b == self.blocks.len();
            if !opened {
                let mask = self.blocks[b];
                for j in 0..i {
                    if mask & (1 << j) != 0 {
                        if let Some(w) = self.weight[i][j] {
                            delta += w;
                        }
                    }
                }
                self.blocks[b] |= 1 << i;
            } else {
                self.blocks.push(1 << i);
            }
            self.label[i] = Some(b);
            self.recurse(i + 1, value + delta);
            if opened {
                self.blocks.pop();
            } else {
                self.blocks[b] &= !(1 << i);
            }
        }
        self.label[i] = None;
    }

    fn compatible(&self, i: usize, b: usize) -> bool {
        for &j in &self.link[i] {
            if j < i && self.label[j] != Some(b) {
                return false;
            }
        }
        if b < self.blocks.len() {
            for &j in &self.cut[i] {
                if j < i && self.label[j] == Some(b) {
                    return false;
                }
            }
        }
        true
    }

    fn leaf(&mut self, value: f64) {
        for &mask in &self.blocks {
            if !self.connected(mask) {
                return;
            }
        }
        let better = match &self.best {
            None => true,
            Some((best, _)) if value < best - TIE_EPS => true,
            Some((best, _)) if (value - best).abs() <= TIE_EPS => true,
            _ => false,
        };
        if !better {
            return;
        }
        let clusters = self.clusters();
        match &self.best {
            Some((best, enc)) if (value - best).abs() <= TIE_EPS && &clusters >= enc => {}
            _ => self.best = Some((value, clusters)),
        }
    }

    fn connected(&self, mask: u32) -> bool {
        let start = mask.trailing_zeros() as usize;
        let mut reached = 1u32 << start;
        let mut frontier = reached;
        while frontier != 0 {
            let v = frontier.trailing_zeros() as usize;
            frontier &= frontier - 1;
            let next = self.adj_mask[v] & mask & !reached;
            reached |= next;
            frontier |= next;
        }
        reached == mask
    }

    fn clusters(&self) -> Vec<Vec<NodeId>> {
        // Blocks are opened in order of their smallest member, so this order is
        // already canonical.
        self.blocks
            .iter()
            .map(|&mask| (0..self.n).filter(|&v| mask & (1 << v) != 0).collect())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Local search
// ---------------------------------------------------------------------------

pub fn solve_local_search(graph: &ProblemGraph, params: &SolverParams) -> Result<Solution> {
    solve_local_search_logged(graph, params).map(|(s, _)| s)
}

pub fn solve_local_search_logged(
    graph: &ProblemGraph,
    params: &SolverParams,
) -> Result<(Solution, MoveLog)> {
    params.validate()?;
    let cg = apply_constraints(graph)?;
    Ok(local_search(&cg, params))
}

/// Runs the local search once per seed (concurrently) and keeps the lowest
/// objective, ties broken by canonical encoding.
pub fn solve_best_of_seeds(
    graph: &ProblemGraph,
    params: &SolverParams,
    seeds: &[u64],
) -> Result<Solution> {
    params.validate()?;
    let cg = apply_constraints(graph)?;
    let results: Vec<Solution> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let cg = &cg;
                let p = SolverParams {
                    seed,
                    ..params.clone()
                };
                scope.spawn(move || local_search(cg, &p).0)
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("solver thread panicked"))
            .collect()
    });
    let mut best: Option<(f64, String, Solution)> = None;
    for sol in results {
        let value = objective(graph, &sol)?;
        let enc = sol.encode();
        let replace = match &best {
            None => true,
            Some((bv, be, _)) => {
                value < bv - TIE_EPS || ((value - bv).abs() <= TIE_EPS && enc < *be)
            }
        };
        if replace {
            best = Some((value, enc, sol));
        }
    }
    Ok(best.map(|(_, _, s)| s).unwrap_or_default())
}

/// Local search on a contracted graph. Exposed for callers that contract once
/// and solve repeatedly.
pub fn local_search(cg: &ConstrainedGraph, params: &SolverParams) -> (Solution, MoveLog) {
    let mut s = Search::new(cg, params);
    s.run();
    let clusters: Vec<Vec<usize>> = s
        .members
        .iter()
        .filter(|m| !m.is_empty())
        .cloned()
        .collect();
    (cg.expand(&clusters), s.log)
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    weight: f64,
    a: usize,
    b: usize,
    stamp_a: u64,
    stamp_b: u64,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    // Max-heap: the most negative weight first, then the smallest ids.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .weight
            .total_cmp(&self.weight)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

enum NodeMove {
    Relocate(usize),
    Singleton,
    Unselect,
    SelectInto(usize),
    SelectPair(usize),
    SelectSingleton,
}

struct Search<'a> {
    g: &'a ConstrainedGraph,
    cluster: Vec<Option<usize>>,
    members: Vec<Vec<usize>>,
    free: Vec<usize>,
    log: MoveLog,
    budget: usize,
    rng: ChaCha8Rng,
    // scratch for per-cluster weight accumulation
    acc: Vec<f64>,
    mark: Vec<bool>,
    touched: Vec<usize>,
}

impl<'a> Search<'a> {
    fn new(g: &'a ConstrainedGraph, params: &SolverParams) -> Self {
        let mut s = Search {
            g,
            cluster: vec![None; g.len()],
            members: Vec::new(),
            free: Vec::new(),
            log: MoveLog::default(),
            budget: params.move_budget,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            acc: Vec::new(),
            mark: Vec::new(),
            touched: Vec::new(),
        };
        let mut initial = 0.0;
        for v in 0..g.len() {
            if g.forced[v] || g.node_costs[v] <= 0.0 {
                s.new_cluster(vec![v]);
                initial += g.node_costs[v];
            }
        }
        s.log.initial_objective = initial;
        s
    }

    fn run(&mut self) {
        self.merge_pass();
        loop {
            let before = self.log.moves.len();
            self.node_pass();
            self.merge_pass();
            self.split_pass();
            if self.log.moves.len() == before || self.budget == 0 {
                break;
            }
        }
    }

    fn accept(&mut self, kind: MoveKind, delta: f64) -> bool {
        if self.budget == 0 {
            return false;
        }
        self.budget -= 1;
        self.log.moves.push((kind, delta));
        true
    }

    fn new_cluster(&mut self, nodes: Vec<usize>) -> usize {
        let id = match self.free.pop() {
            Some(id) => id,
            None => {
                self.members.push(Vec::new());
                self.acc.push(0.0);
                self.mark.push(false);
                self.members.len() - 1
            }
        };
        for &v in &nodes {
            self.cluster[v] = Some(id);
        }
        self.members[id] = nodes;
        id
    }

    fn release(&mut self, id: usize) {
        debug_assert!(self.members[id].is_empty());
        self.free.push(id);
    }

    /// Summed edge weight from `v` into each adjacent cluster.
    fn weights_to_clusters(&mut self, v: usize) -> Vec<(usize, f64)> {
        for &(w, cost) in &self.g.adjacency[v] {
            if let Some(c) = self.cluster[w] {
                if !self.mark[c] {
                    self.mark[c] = true;
                    self.touched.push(c);
                }
                self.acc[c] += cost;
            }
        }
        let mut out: Vec<(usize, f64)> = self
            .touched
            .drain(..)
            .map(|c| {
                self.mark[c] = false;
                (c, std::mem::take(&mut self.acc[c]))
            })
            .collect();
        out.sort_unstable_by_key(|&(c, _)| c);
        out
    }

    fn conflicts_with_cluster(&self, v: usize, c: usize) -> bool {
        self.g.cut_partners[v]
            .iter()
            .any(|&p| self.cluster[p] == Some(c))
    }

    fn clusters_conflict(&self, a: usize, b: usize) -> bool {
        let (small, other) = if self.members[a].len() <= self.members[b].len() {
            (a, b)
        } else {
            (b, a)
        };
        self.members[small]
            .iter()
            .any(|&v| self.conflicts_with_cluster(v, other))
    }

    /// Removes `v` from its cluster and splits the remainder into its connected
    /// components. No edges run between those components, so the objective is
    /// unchanged by the split.
    fn detach(&mut self, v: usize) {
        let c = self.cluster[v]
            .take()
            .expect("detaching an unselected node");
        self.members[c].retain(|&x| x != v);
        if self.members[c].is_empty() {
            self.release(c);
            return;
        }
        self.restore_connectivity(c);
    }

    fn restore_connectivity(&mut self, c: usize) {
        let comps = self.components_of(c);
        if comps.len() <= 1 {
            return;
        }
        let mut comps = comps.into_iter();
        self.members[c] = comps.next().expect("non-empty");
        for comp in comps {
            self.new_cluster(comp);
        }
    }

    fn components_of(&self, c: usize) -> Vec<Vec<usize>> {
        let nodes = &self.members[c];
        let mut seen: BTreeMap<usize, bool> = nodes.iter().map(|&v| (v, false)).collect();
        let mut comps = Vec::new();
        for &s in nodes {
            if seen[&s] {
                continue;
            }
            seen.insert(s, true);
            let mut comp = vec![s];
            let mut queue = VecDeque::from([s]);
            while let Some(v) = queue.pop_front() {
                for &(w, _) in &self.g.adjacency[v] {
                    if let Some(flag) = seen.get_mut(&w) {
                        if !*flag {
                            *flag = true;
                            comp.push(w);
                            queue.push_back(w);
                        }
                    }
                }
            }
            comps.push(comp);
        }
        comps
    }

    fn attach(&mut self, v: usize, c: usize) {
        self.cluster[v] = Some(c);
        self.members[c].push(v);
    }

    fn node_pass(&mut self) {
        let mut order: Vec<usize> = (0..self.g.len()).collect();
        order.shuffle(&mut self.rng);
        for v in order {
            if self.budget == 0 {
                return;
            }
            let Some((mv, delta)) = self.best_node_move(v) else {
                continue;
            };
            if delta >= -IMPROVEMENT_EPS {
                continue;
            }
            let kind = match mv {
                NodeMove::Relocate(_) | NodeMove::Singleton => MoveKind::MoveNode,
                _ => MoveKind::ToggleSelection,
            };
            if !self.accept(kind, delta) {
                return;
            }
            match mv {
                NodeMove::Relocate(target) => {
                    self.detach(v);
                    self.attach(v, target);
                }
                NodeMove::Singleton => {
                    self.detach(v);
                    self.new_cluster(vec![v]);
                }
                NodeMove::Unselect => self.detach(v),
                NodeMove::SelectInto(target) => self.attach(v, target),
                NodeMove::SelectPair(u) => {
                    self.new_cluster(vec![v, u]);
                }
                NodeMove::SelectSingleton => {
                    self.new_cluster(vec![v]);
                }
            }
        }
    }

    fn best_node_move(&mut self, v: usize) -> Option<(NodeMove, f64)> {
        let weights = self.weights_to_clusters(v);
        let cost = self.g.node_costs[v];
        let mut best: Option<(NodeMove, f64)> = None;
        let offer = |mv: NodeMove, delta: f64, best: &mut Option<(NodeMove, f64)>| {
            if best.as_ref().is_none_or(|(_, d)| delta < *d) {
                *best = Some((mv, delta));
            }
        };
        match self.cluster[v] {
            Some(own) => {
                let w_own = weights
                    .iter()
                    .find(|&&(c, _)| c == own)
                    .map_or(0.0, |&(_, w)| w);
                for &(c, w) in &weights {
                    if c != own && !self.conflicts_with_cluster(v, c) {
                        offer(NodeMove::Relocate(c), w - w_own, &mut best);
                    }
                }
                if self.members[own].len() > 1 {
                    offer(NodeMove::Singleton, -w_own, &mut best);
                }
                if !self.g.forced[v] {
                    offer(NodeMove::Unselect, -w_own - cost, &mut best);
                }
            }
            None => {
                for &(c, w) in &weights {
                    if !self.conflicts_with_cluster(v, c) {
                        offer(NodeMove::SelectInto(c), cost + w, &mut best);
                    }
                }
                offer(NodeMove::SelectSingleton, cost, &mut best);
                for &(u, w) in &self.g.adjacency[v] {
                    if self.cluster[u].is_none() && !self.g.is_cut(v, u) {
                        offer(
                            NodeMove::SelectPair(u),
                            cost + self.g.node_costs[u] + w,
                            &mut best,
                        );
                    }
                }
            }
        }
        best
    }

    /// Greedy additive edge contraction over the current clusters.
    fn merge_pass(&mut self) {
        let mut cadj: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); self.members.len()];
        for v in 0..self.g.len() {
            let Some(cv) = self.cluster[v] else { continue };
            for &(w, cost) in &self.g.adjacency[v] {
                if w <= v {
                    continue;
                }
                if let Some(cw) = self.cluster[w] {
                    if cw != cv {
                        *cadj[cv].entry(cw).or_insert(0.0) += cost;
                        *cadj[cw].entry(cv).or_insert(0.0) += cost;
                    }
                }
            }
        }
        let mut stamp = vec![0u64; self.members.len()];
        let mut heap = BinaryHeap::new();
        for (a, nbrs) in cadj.iter().enumerate() {
            for (&b, &w) in nbrs {
                if a < b && w < -IMPROVEMENT_EPS {
                    heap.push(Candidate {
                        weight: w,
                        a,
                        b,
                        stamp_a: 0,
                        stamp_b: 0,
                    });
                }
            }
        }
        while let Some(cand) = heap.pop() {
            if self.budget == 0 {
                return;
            }
            let Candidate { a, b, .. } = cand;
            if stamp[a] != cand.stamp_a || stamp[b] != cand.stamp_b {
                continue;
            }
            if self.members[a].is_empty() || self.members[b].is_empty() {
                continue;
            }
            if self.clusters_conflict(a, b) {
                continue;
            }
            if !self.accept(MoveKind::MergeClusters, cand.weight) {
                return;
            }
            let (keep, gone) = if self.members[a].len() >= self.members[b].len() {
                (a, b)
            } else {
                (b, a)
            };
            let moved = std::mem::take(&mut self.members[gone]);
            for &v in &moved {
                self.cluster[v] = Some(keep);
            }
            self.members[keep].extend(moved);
            self.release(gone);

            let gone_adj = std::mem::take(&mut cadj[gone]);
            cadj[keep].remove(&gone);
            for (c, w) in gone_adj {
                if c == keep {
                    continue;
                }
                cadj[c].remove(&gone);
                *cadj[keep].entry(c).or_insert(0.0) += w;
                let total = cadj[keep][&c];
                cadj[c].insert(keep, total);
            }
            stamp[keep] += 1;
            stamp[gone] += 1;
            // A released id may be reused only after this pass; stamps guard
            // stale entries either way.
            for (&c, &w) in &cadj[keep] {
                if w < -IMPROVEMENT_EPS {
                    let (x, y) = ordered(keep, c);
                    heap.push(Candidate {
                        weight: w,
                        a: x,
                        b: y,
                        stamp_a: stamp[x],
                        stamp_b: stamp[y],
                    });
                }
            }
        }
    }

    /// Tries to split each cluster in two along a cheap cut found by a
    /// two-coloring sweep seeded at its most repulsive internal edge.
    fn split_pass(&mut self) {
        let ids: Vec<usize> = (0..self.members.len())
            .filter(|&c| self.members[c].len() > 1)
            .collect();
        for c in ids {
            if self.budget == 0 {
                return;
            }
            if self.members[c].len() < 2 {
                continue;
            }
            if let Some((side_b, delta)) = self.propose_split(c) {
                if delta < -IMPROVEMENT_EPS && self.accept(MoveKind::SplitCluster, delta) {
                    self.members[c].retain(|v| !side_b.contains(v));
                    self.restore_connectivity(c);
                    let nb = self.new_cluster(side_b);
                    self.restore_connectivity(nb);
                }
            }
        }
    }

    fn propose_split(&self, c: usize) -> Option<(Vec<usize>, f64)> {
        let nodes = &self.members[c];
        let local: BTreeMap<usize, usize> =
            nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut seed: Option<(usize, usize, f64)> = None;
        for &v in nodes {
            for &(w, cost) in &self.g.adjacency[v] {
                if w > v && local.contains_key(&w) && seed.is_none_or(|(_, _, s)| cost > s) {
                    seed = Some((v, w, cost));
                }
            }
        }
        let (sa, sb, top) = seed?;
        if top <= 0.0 {
            return None;
        }

        let mut side: Vec<Option<bool>> = vec![None; nodes.len()];
        side[local[&sa]] = Some(false);
        side[local[&sb]] = Some(true);
        let mut queue = VecDeque::from([sa, sb]);
        while let Some(v) = queue.pop_front() {
            for &(w, _) in &self.g.adjacency[v] {
                let Some(&iw) = local.get(&w) else { continue };
                if side[iw].is_some() {
                    continue;
                }
                let (mut to_a, mut to_b) = (0.0, 0.0);
                for &(x, cost) in &self.g.adjacency[w] {
                    if let Some(&ix) = local.get(&x) {
                        match side[ix] {
                            Some(false) => to_a += cost,
                            Some(true) => to_b += cost,
                            None => {}
                        }
                    }
                }
                side[iw] = Some(to_b < to_a);
                queue.push_back(w);
            }
        }

        // One refinement sweep of single-node flips, keeping both sides non-empty.
        for (i, &v) in nodes.iter().enumerate() {
            if v == sa || v == sb {
                continue;
            }
            let mine = side[i].expect("cluster is connected");
            let (mut same, mut other) = (0.0, 0.0);
            for &(x, cost) in &self.g.adjacency[v] {
                if let Some(&ix) = local.get(&x) {
                    if side[ix] == Some(mine) {
                        same += cost;
                    } else {
                        other += cost;
                    }
                }
            }
            if other < same {
                side[i] = Some(!mine);
            }
        }

        let mut crossing = 0.0;
        for &v in nodes {
            for &(w, cost) in &self.g.adjacency[v] {
                if w > v {
                    if let Some(&iw) = local.get(&w) {
                        if side[local[&v]] != side[iw] {
                            crossing += cost;
                        }
                    }
                }
            }
        }
        let side_b: Vec<usize> = nodes
            .iter()
            .enumerate()
            .filter(|&(i, _)| side[i] == Some(true))
            .map(|(_, &v)| v)
            .collect();
        Some((side_b, -crossing))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate, Edge, EdgeKind};

    fn edge(a: usize, b: usize, w: f64) -> Edge {
        Edge::new(a, b, EdgeKind::SameType, w)
    }

    fn params() -> SolverParams {
        SolverParams::default()
    }

    #[test]
    fn exact_single_positive_node_is_dropped() {
        let g = ProblemGraph::from_costs(vec![1.0], vec![], [], []).unwrap();
        let s = solve_exact(&g, &params()).unwrap();
        assert_eq!(s.num_selected(), 0);
        assert_eq!(objective(&g, &s).unwrap(), 0.0);
    }

    #[test]
    fn exact_repulsive_pair_stays_apart() {
        let g = ProblemGraph::from_costs(vec![-1.0, -1.0], vec![edge(0, 1, 5.0)], [], []).unwrap();
        let s = solve_exact(&g, &params()).unwrap();
        assert_eq!(s.encode(), "0|1");
        assert_eq!(objective(&g, &s).unwrap(), -2.0);
    }

    #[test]
    fn exact_honors_must_cut() {
        let g = ProblemGraph::from_costs(vec![-1.0, -1.0], vec![edge(0, 1, -5.0)], [], [(0, 1)])
            .unwrap();
        let s = solve_exact(&g, &params()).unwrap();
        assert_eq!(s.encode(), "0|1");
        assert_eq!(objective(&g, &s).unwrap(), -2.0);
    }

    #[test]
    fn exact_refuses_large_instances() {
        let g = ProblemGraph::from_costs(vec![-1.0; 11], vec![], [], []).unwrap();
        assert!(matches!(
            solve_exact(&g, &params()),
            Err(Error::TooLarge {
                nodes: 11,
                limit: 10
            })
        ));
        let bad = SolverParams {
            max_exact_nodes: 13,
            ..params()
        };
        assert!(matches!(solve_exact(&g, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn exact_tie_break_is_lexicographic() {
        // Joining or not joining costs the same; the smaller encoding wins.
        let g = ProblemGraph::from_costs(vec![-1.0, -1.0], vec![edge(0, 1, 0.0)], [], []).unwrap();
        let s = solve_exact(&g, &params()).unwrap();
        assert_eq!(s.encode(), "0|1");
    }

    #[test]
    fn local_search_all_positive_is_empty() {
        let g = ProblemGraph::from_costs(
            vec![1.0, 2.0, 0.5],
            vec![edge(0, 1, 1.0), edge(1, 2, 3.0)],
            [],
            [],
        )
        .unwrap();
        let s = solve_local_search(&g, &params()).unwrap();
        assert_eq!(s.num_selected(), 0);
    }

    #[test]
    fn local_search_chain_of_three() {
        let g = ProblemGraph::from_costs(
            vec![-1.0; 3],
            vec![edge(0, 1, -1.0), edge(1, 2, -1.0)],
            [],
            [],
        )
        .unwrap();
        let s = solve_local_search(&g, &params()).unwrap();
        assert_eq!(s.encode(), "0,1,2");
        assert_eq!(objective(&g, &s).unwrap(), -5.0);
    }

    #[test]
    fn local_search_selects_attractive_positive_pair() {
        let g = ProblemGraph::from_costs(vec![1.0, 1.0], vec![edge(0, 1, -5.0)], [], []).unwrap();
        let s = solve_local_search(&g, &params()).unwrap();
        assert_eq!(s.encode(), "0,1");
    }

    #[test]
    fn must_link_is_never_separated() {
        // Strongly repulsive edge, but the pair is linked.
        let g = ProblemGraph::from_costs(vec![-1.0, -1.0], vec![edge(0, 1, 50.0)], [(0, 1)], [])
            .unwrap();
        let s = solve_local_search(&g, &params()).unwrap();
        assert!(s.is_joined(0, 1));
        assert!(validate(&g, &s).is_empty());
    }

    #[test]
    fn must_link_forces_selection() {
        let g =
            ProblemGraph::from_costs(vec![3.0, 3.0], vec![edge(0, 1, 1.0)], [(0, 1)], []).unwrap();
        let s = solve_local_search(&g, &params()).unwrap();
        assert_eq!(s.encode(), "0,1");
        let e = solve_exact(&g, &params()).unwrap();
        assert_eq!(e.encode(), "0,1");
    }

    #[test]
    fn must_cut_dominates_attraction() {
        let g = ProblemGraph::from_costs(vec![-1.0, -1.0], vec![edge(0, 1, -100.0)], [], [(0, 1)])
            .unwrap();
        let s = solve_local_search(&g, &params()).unwrap();
        assert!(s.is_selected(0) && s.is_selected(1));
        assert!(!s.is_joined(0, 1));
    }

    #[test]
    fn transitive_contradiction_is_infeasible() {
        let g = ProblemGraph::from_costs(
            vec![-1.0; 3],
            vec![edge(0, 1, -1.0), edge(1, 2, -1.0)],
            [(0, 1), (1, 2)],
            [(0, 2)],
        )
        .unwrap();
        match apply_constraints(&g) {
            Err(Error::Infeasible { chain, .. }) => assert_eq!(chain, vec![0, 1, 2, 0]),
            other => panic!("expected infeasible, got {other:?}"),
        }
        assert!(solve_local_search(&g, &params()).is_err());
    }

    #[test]
    fn disconnected_must_link_group_is_rejected() {
        let g = ProblemGraph::from_costs(vec![-1.0; 2], vec![], [(0, 1)], []).unwrap();
        assert!(matches!(
            apply_constraints(&g),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn contraction_sums_costs() {
        let g = ProblemGraph::from_costs(
            vec![-1.0, -2.0, -3.0],
            vec![edge(0, 1, -0.5), edge(0, 2, 1.0), edge(1, 2, 2.0)],
            [(0, 1)],
            [],
        )
        .unwrap();
        let cg = apply_constraints(&g).unwrap();
        assert_eq!(cg.members, vec![vec![0, 1], vec![2]]);
        assert_eq!(cg.node_costs, vec![-3.5, -3.0]);
        assert_eq!(cg.adjacency[0], vec![(1, 3.0)]);
        assert_eq!(cg.forced, vec![true, false]);
    }

    #[test]
    fn split_move_separates_repulsive_halves() {
        // Two attractive pairs glued by one weakly attractive and one strongly
        // repulsive edge: greedy merging joins them, splitting must undo it.
        let g = ProblemGraph::from_costs(
            vec![-1.0; 4],
            vec![
                edge(0, 1, -3.0),
                edge(2, 3, -3.0),
                edge(1, 2, -2.0),
                edge(0, 3, 0.5),
                edge(0, 2, 4.0),
            ],
            [],
            [],
        )
        .unwrap();
        let (s, log) = solve_local_search_logged(&g, &params()).unwrap();
        let exact = solve_exact(&g, &params()).unwrap();
        let (a, b) = (objective(&g, &s).unwrap(), objective(&g, &exact).unwrap());
        assert!((a - b).abs() < 1e-9, "local {a} exact {b} log {log:?}");
    }

    #[test]
    fn move_log_accounts_for_objective() {
        let g = ProblemGraph::from_costs(
            vec![-1.0, 0.5, -2.0, 1.0],
            vec![
                edge(0, 1, -2.0),
                edge(1, 2, -1.0),
                edge(2, 3, -3.0),
                edge(0, 3, 2.0),
            ],
            [],
            [],
        )
        .unwrap();
        let (s, log) = solve_local_search_logged(&g, &params()).unwrap();
        let fin = objective(&g, &s).unwrap();
        assert!((log.initial_objective + log.total_delta() - fin).abs() < 1e-9);
        assert!(log.moves.iter().all(|(_, d)| *d < 0.0));
    }

    #[test]
    fn best_of_seeds_is_no_worse_than_single() {
        let g = ProblemGraph::from_costs(
            vec![-1.0, 0.5, -2.0, 1.0],
            vec![
                edge(0, 1, -2.0),
                edge(1, 2, -1.0),
                edge(2, 3, -3.0),
                edge(0, 3, 2.0),
            ],
            [],
            [],
        )
        .unwrap();
        let single = solve_local_search(&g, &params()).unwrap();
        let best = solve_best_of_seeds(&g, &params(), &[0, 1, 2, 3]).unwrap();
        assert!(objective(&g, &best).unwrap() <= objective(&g, &single).unwrap() + 1e-12);
    }
}
