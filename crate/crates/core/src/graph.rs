//! Agent topology and the neighborhood-normalized graph convolution.
//!
//! For agent `i` with neighbors `N(i)` the layer computes
//!
//! ```text
//! H_i = act( sum_{j in N(i) + {i}} h_j / sqrt(d_j * d_i) . W ),   d_k = |N(k)| + 1
//! ```
//!
//! with one weight matrix `W` shared by every agent. The degree counts the
//! agent itself, so an isolated agent simply passes `h_i . W` through.

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{Binding, ParamId, ParamStore, Var};
use crate::nn::{glorot, Activation};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("agent index {index} out of range for {n_agents} agents")]
    AgentOutOfRange { index: usize, n_agents: usize },
    #[error("self-loop on agent {0}")]
    SelfLoop(usize),
    #[error("a graph needs at least one agent")]
    Empty,
    #[error("permutation of length {len} does not match {n_agents} agents")]
    BadPermutation { len: usize, n_agents: usize },
}

/// Undirected agent graph without self-edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentGraph {
    adjacency: Vec<Vec<bool>>,
}

impl AgentGraph {
    /// `n` agents and no edges.
    pub fn empty(n: usize) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        Ok(AgentGraph {
            adjacency: vec![vec![false; n]; n],
        })
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut g = Self::empty(n)?;
        for &(a, b) in edges {
            g.add_edge(a, b)?;
        }
        Ok(g)
    }

    pub fn complete(n: usize) -> Result<Self, GraphError> {
        let mut g = Self::empty(n)?;
        for a in 0..n {
            for b in a + 1..n {
                g.add_edge(a, b)?;
            }
        }
        Ok(g)
    }

    /// Path graph `0 - 1 - ... - (n-1)`.
    pub fn line(n: usize) -> Result<Self, GraphError> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(n, &edges)
    }

    pub fn add_edge(&mut self, a: usize, b: usize) -> Result<(), GraphError> {
        self.check(a)?;
        self.check(b)?;
        if a == b {
            return Err(GraphError::SelfLoop(a));
        }
        self.adjacency[a][b] = true;
        self.adjacency[b][a] = true;
        Ok(())
    }

    fn check(&self, i: usize) -> Result<(), GraphError> {
        if i < self.n_agents() {
            Ok(())
        } else {
            Err(GraphError::AgentOutOfRange {
                index: i,
                n_agents: self.n_agents(),
            })
        }
    }

    pub fn n_agents(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacency
            .get(a)
            .and_then(|row| row.get(b))
            .copied()
            .unwrap_or(false)
    }

    /// `N(i)` in ascending order, excluding `i`.
    pub fn neighbors(&self, i: usize) -> Result<Vec<usize>, GraphError> {
        self.check(i)?;
        Ok(self.adjacency[i]
            .iter()
            .enumerate()
            .filter_map(|(j, &e)| e.then_some(j))
            .collect())
    }

    /// `N(i)` plus `i`, ascending.
    pub fn closed_neighborhood(&self, i: usize) -> Result<Vec<usize>, GraphError> {
        self.check(i)?;
        Ok((0..self.n_agents())
            .filter(|&j| j == i || self.adjacency[i][j])
            .collect())
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].iter().filter(|&&e| e).count()
    }

    /// Self-inclusive degree used by the convolution.
    pub fn gcn_degree(&self, i: usize) -> usize {
        self.degree(i) + 1
    }

    /// Weight of `h_j` in `H_i`: `1 / sqrt(d_i d_j)`.
    pub fn norm_coeff(&self, i: usize, j: usize) -> f64 {
        let d = (self.gcn_degree(i) * self.gcn_degree(j)) as f64;
        1.0 / d.sqrt()
    }

    /// Undirected edges `(a, b)` with `a < b`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n_agents();
        (0..n)
            .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
            .filter(|&(a, b)| self.adjacency[a][b])
            .collect()
    }

    /// Ordered neighbor pairs `(i, j)`, `j in N(i)`.
    pub fn directed_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n_agents();
        (0..n)
            .flat_map(|a| (0..n).map(move |b| (a, b)))
            .filter(|&(a, b)| self.adjacency[a][b])
            .collect()
    }

    /// Relabels agents: old agent `k` becomes `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, GraphError> {
        let n = self.n_agents();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(GraphError::BadPermutation {
                len: perm.len(),
                n_agents: n,
            });
        }
        let mut g = Self::empty(n)?;
        for (a, b) in self.edges() {
            g.add_edge(perm[a], perm[b])?;
        }
        Ok(g)
    }
}

/// One graph-convolution layer with weight shared across agents.
#[derive(Debug, Clone)]
pub struct GcnLayer {
    pub weight: ParamId,
    pub activation: Activation,
    pub d_in: usize,
    pub d_out: usize,
}

impl GcnLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(format!("{name}.w"), glorot(d_in, d_out, rng));
        GcnLayer {
            weight,
            activation,
            d_in,
            d_out,
        }
    }

    /// `H_i` for every agent. `h[j]` is a `batch x d_in` matrix.
    pub fn forward<'t>(
        &self,
        p: &Binding<'t, '_>,
        graph: &AgentGraph,
        h: &[Var<'t>],
    ) -> crate::Result<Vec<Var<'t>>> {
        if h.len() != graph.n_agents() {
            return Err(crate::Error::Dimension {
                context: "gcn input count".into(),
                expected: graph.n_agents(),
                actual: h.len(),
            });
        }
        let lookup: Vec<Option<Var<'t>>> = h.iter().copied().map(Some).collect();
        (0..graph.n_agents())
            .map(|i| self.forward_agent(p, graph, i, &lookup))
            .collect()
    }

    /// `H_i` for a single agent. Only entries of `h` inside the closed
    /// neighborhood of `i` are read; they must be present.
    pub fn forward_agent<'t>(
        &self,
        p: &Binding<'t, '_>,
        graph: &AgentGraph,
        i: usize,
        h: &[Option<Var<'t>>],
    ) -> crate::Result<Var<'t>> {
        let members = graph.closed_neighborhood(i)?;
        let mut terms = Vec::with_capacity(members.len());
        for j in members {
            let hj = h.get(j).copied().flatten().ok_or_else(|| crate::Error::Dimension {
                context: format!("gcn input for agent {j} (neighbor of {i}) missing"),
                expected: 1,
                actual: 0,
            })?;
            let shape = hj.shape();
            let width = *shape.last().unwrap_or(&1);
            if shape.len() != 2 || width != self.d_in {
                return Err(crate::Error::Dimension {
                    context: format!("gcn feature width of agent {j}"),
                    expected: self.d_in,
                    actual: width,
                });
            }
            terms.push((hj, graph.norm_coeff(i, j)));
        }
        let aggregated = Var::weighted_sum(&terms)?;
        let z = aggregated.matmul(p.get(self.weight))?;
        Ok(self.activation.apply(z))
    }
}
