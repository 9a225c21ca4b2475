//! Bipartite graph of undecided users and the providers they split demand
//! across, with leaf-elimination decoding of their unique demands.
//!
//! Every user node carries its effective resource as a check-sum and every
//! provider node carries the supply left after decided users are served. On
//! a forest, peeling leaves one edge at a time fixes each demand: a provider
//! leaf hands its whole residual supply to its only user, a user leaf takes
//! its whole residual effective resource from its only provider.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DemandMatrix, GameInstance};

/// Computed demands in `[-NEGATIVE_DEMAND_TOL, 0)` are clamped to zero.
pub const NEGATIVE_DEMAND_TOL: f64 = 1e-8;

/// Relative tolerance for the final `P_i = S_j c_ij` consistency check.
pub const TERMINAL_TOL: f64 = 1e-8;

/// Ordering puts providers before users at equal index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Node {
    User(usize),
    Provider(usize),
}

impl Node {
    fn sort_key(&self) -> (usize, u8) {
        match *self {
            Node::Provider(j) => (j, 0),
            Node::User(i) => (i, 1),
        }
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub user: usize,
    pub provider: usize,
    pub c: f64,
}

/// Decoded demand per `(user, provider)` edge.
pub type EdgeDemands = BTreeMap<(usize, usize), f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct Bgr {
    edges: Vec<Edge>,
    user_checksums: BTreeMap<usize, f64>,
    provider_checksums: BTreeMap<usize, f64>,
}

impl Bgr {
    /// Builds a graph from explicit edges and check-sums. Every node touched by
    /// an edge needs a check-sum and edges may not repeat.
    pub fn new(
        edges: Vec<Edge>,
        user_checksums: BTreeMap<usize, f64>,
        provider_checksums: BTreeMap<usize, f64>,
    ) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &edges {
            if !seen.insert((e.user, e.provider)) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate edge (user {}, provider {})",
                    e.user, e.provider
                )));
            }
            if !(e.c.is_finite() && e.c > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "edge (user {}, provider {}) has non-positive offset {}",
                    e.user, e.provider, e.c
                )));
            }
            if !user_checksums.contains_key(&e.user) {
                return Err(Error::InvalidParameter(format!(
                    "user {} has no check-sum",
                    e.user
                )));
            }
            if !provider_checksums.contains_key(&e.provider) {
                return Err(Error::InvalidParameter(format!(
                    "provider {} has no check-sum",
                    e.provider
                )));
            }
        }
        Ok(Self {
            edges,
            user_checksums,
            provider_checksums,
        })
    }

    /// Builds the graph of undecided users from a solved instance.
    ///
    /// `undecided` lists each undecided user with its preference (or support)
    /// set; every set must have at least two providers. `decided` holds the
    /// demands of all other users. User check-sums are `x_star[i]`; provider
    /// check-sums are the supply left after decided demand.
    pub fn from_instance(
        instance: &GameInstance,
        undecided: &[(usize, Vec<usize>)],
        x_star: &[f64],
        decided: &DemandMatrix,
    ) -> Result<Self> {
        let undecided_users: BTreeSet<usize> = undecided.iter().map(|(i, _)| *i).collect();
        let mut edges = Vec::new();
        let mut user_checksums = BTreeMap::new();
        let mut provider_checksums = BTreeMap::new();
        for (i, set) in undecided {
            if set.len() < 2 {
                return Err(Error::InvalidParameter(format!(
                    "user {i} is not undecided (preference set {set:?})"
                )));
            }
            user_checksums.insert(*i, x_star[*i]);
            for &j in set {
                edges.push(Edge {
                    user: *i,
                    provider: j,
                    c: instance.c(*i, j),
                });
                provider_checksums.entry(j).or_insert_with(|| {
                    let decided_demand: f64 = (0..instance.users())
                        .filter(|k| !undecided_users.contains(k))
                        .map(|k| decided[(k, j)])
                        .sum();
                    instance.supply()[j] - decided_demand
                });
            }
        }
        for (&j, &s) in &provider_checksums {
            if s < -NEGATIVE_DEMAND_TOL * instance.supply()[j].max(1.0) {
                return Err(Error::NegativeChecksum {
                    provider: j,
                    value: s,
                });
            }
        }
        Self::new(edges, user_checksums, provider_checksums)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn user_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.user_checksums.keys().copied()
    }

    pub fn provider_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.provider_checksums.keys().copied()
    }

    pub fn user_checksums(&self) -> &BTreeMap<usize, f64> {
        &self.user_checksums
    }

    pub fn provider_checksums(&self) -> &BTreeMap<usize, f64> {
        &self.provider_checksums
    }

    pub fn node_count(&self) -> usize {
        self.user_checksums.len() + self.provider_checksums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    fn nodes(&self) -> Vec<Node> {
        let mut nodes: Vec<Node> = self
            .user_nodes()
            .map(Node::User)
            .chain(self.provider_nodes().map(Node::Provider))
            .collect();
        nodes.sort();
        nodes
    }

    fn adjacency(&self) -> (Vec<Node>, BTreeMap<Node, usize>, Vec<Vec<usize>>) {
        let nodes = self.nodes();
        let index: BTreeMap<Node, usize> = nodes.iter().enumerate().map(|(k, n)| (*n, k)).collect();
        let mut adj = vec![Vec::new(); nodes.len()];
        for e in &self.edges {
            let u = index[&Node::User(e.user)];
            let p = index[&Node::Provider(e.provider)];
            adj[u].push(p);
            adj[p].push(u);
        }
        (nodes, index, adj)
    }

    /// Number of connected components, isolated nodes included.
    pub fn connected_components(&self) -> usize {
        let (nodes, _, adj) = self.adjacency();
        let mut seen = vec![false; nodes.len()];
        let mut components = 0;
        for start in 0..nodes.len() {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            let mut stack = vec![start];
            while let Some(v) = stack.pop() {
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        components
    }

    /// Renders the graph as DOT, labelling nodes `u<i>` / `p<j>` and, when
    /// given, annotating edges with decoded demands.
    pub fn to_dot(&self, decoded: Option<&EdgeDemands>) -> String {
        let mut out = String::from("graph bgr {\n");
        for (i, p) in &self.user_checksums {
            let _ = writeln!(out, "  u{i} [shape=circle, label=\"u{i}\\nP={p:.6}\"];");
        }
        for (j, s) in &self.provider_checksums {
            let _ = writeln!(out, "  p{j} [shape=box, label=\"p{j}\\nS={s:.6}\"];");
        }
        for e in &self.edges {
            match decoded.and_then(|d| d.get(&(e.user, e.provider))) {
                Some(q) => {
                    let _ = writeln!(
                        out,
                        "  u{} -- p{} [label=\"q={q:.6}\"];",
                        e.user, e.provider
                    );
                }
                None => {
                    let _ = writeln!(out, "  u{} -- p{};", e.user, e.provider);
                }
            }
        }
        out.push_str("}\n");
        out
    }
}

/// Finds a cycle by depth-first search. The cycle is returned as the
/// alternating node sequence; the closing edge back to the first node is
/// implied.
pub fn detect_loop(bgr: &Bgr) -> Option<Vec<Node>> {
    let (nodes, _, adj) = bgr.adjacency();
    let n = nodes.len();
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut state = vec![0u8; n]; // 0 = new, 1 = on stack, 2 = done
    for root in 0..n {
        if state[root] != 0 {
            continue;
        }
        state[root] = 1;
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        while let Some(frame) = stack.last_mut() {
            let (v, next) = *frame;
            if next == adj[v].len() {
                state[v] = 2;
                stack.pop();
                continue;
            }
            frame.1 += 1;
            let w = adj[v][next];
            if Some(w) == parent[v] {
                continue;
            }
            match state[w] {
                0 => {
                    parent[w] = Some(v);
                    state[w] = 1;
                    stack.push((w, 0));
                }
                // Back edge to an ancestor still on the stack.
                1 => {
                    let mut cycle = vec![nodes[v]];
                    let mut cur = v;
                    while cur != w {
                        cur = parent[cur].expect("ancestor chain");
                        cycle.push(nodes[cur]);
                    }
                    cycle.reverse();
                    return Some(cycle);
                }
                _ => {}
            }
        }
    }
    None
}

/// Decodes with the default leaf order: lowest node index first, providers
/// before users at equal index.
pub fn bgr_decode(bgr: &Bgr) -> Result<EdgeDemands> {
    bgr_decode_with(bgr, |_| 0)
}

/// Leaf-elimination decoding with a caller-supplied leaf choice. `choose`
/// receives the current leaves in default order and returns the position of
/// the one to remove next.
pub fn bgr_decode_with<F>(bgr: &Bgr, mut choose: F) -> Result<EdgeDemands>
where
    F: FnMut(&[Node]) -> usize,
{
    let mut user_sum = bgr.user_checksums.clone();
    let mut provider_sum = bgr.provider_checksums.clone();
    let mut alive = vec![true; bgr.edges.len()];
    let mut degree: BTreeMap<Node, usize> = BTreeMap::new();
    for e in &bgr.edges {
        *degree.entry(Node::User(e.user)).or_default() += 1;
        *degree.entry(Node::Provider(e.provider)).or_default() += 1;
    }
    let mut remaining = bgr.edges.len();
    let mut decoded = EdgeDemands::new();

    while remaining > 0 {
        let leaves: Vec<Node> = degree
            .iter()
            .filter(|(_, d)| **d == 1)
            .map(|(n, _)| *n)
            .collect();
        if leaves.is_empty() {
            let cycle = detect_loop(bgr).unwrap_or_default();
            return Err(Error::LoopDetected { cycle });
        }
        let pick = choose(&leaves);
        let leaf = leaves[pick.min(leaves.len() - 1)];

        let k = bgr
            .edges
            .iter()
            .enumerate()
            .position(|(k, e)| {
                alive[k]
                    && match leaf {
                        Node::User(i) => e.user == i,
                        Node::Provider(j) => e.provider == j,
                    }
            })
            .expect("leaf has one live edge");
        let Edge { user, provider, c } = bgr.edges[k];
        let p = user_sum[&user];
        let s = provider_sum[&provider];

        let terminal = degree[&Node::User(user)] == 1 && degree[&Node::Provider(provider)] == 1;
        if terminal && (p - s * c).abs() > TERMINAL_TOL * p.abs().max(1.0) {
            return Err(Error::InconsistentChecksums {
                user,
                provider,
                user_checksum: p,
                provider_side: s * c,
            });
        }

        let mut q = match leaf {
            Node::User(_) => p / c,
            Node::Provider(_) => s,
        };
        if q < 0.0 {
            if q < -NEGATIVE_DEMAND_TOL {
                return Err(Error::NegativeDemand {
                    user,
                    provider,
                    value: q,
                });
            }
            q = 0.0;
        }

        user_sum.insert(user, p - q * c);
        provider_sum.insert(provider, s - q);
        alive[k] = false;
        remaining -= 1;
        *degree.get_mut(&Node::User(user)).unwrap() -= 1;
        *degree.get_mut(&Node::Provider(provider)).unwrap() -= 1;
        decoded.insert((user, provider), q);
    }
    Ok(decoded)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct UndecidedCount {
    pub count: usize,
    /// Whether `count < providers`.
    pub below_bound: bool,
}

/// Counts users whose preference set has more than one provider.
pub fn count_undecided(preference_sets: &[Vec<usize>], providers: usize) -> UndecidedCount {
    let count = preference_sets.iter().filter(|s| s.len() > 1).count();
    UndecidedCount {
        count,
        below_bound: count < providers,
    }
}
