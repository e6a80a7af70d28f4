//! Undirected networks split into disjoint components, plus the per-node
//! attribute table (covariates, treatment, outcome).
//!
//! Components are the independent sampling units of every estimator in the
//! crate, so they are fixed at construction and the graph is immutable
//! afterwards.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How far interference reaches: direct neighbours, or neighbours and
/// neighbours of neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborhoodOrder {
    #[default]
    First,
    Second,
}

/// Undirected simple graph with its partition into components.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentGraph {
    neighbors: Vec<Vec<usize>>,
    component_of: Vec<usize>,
    components: Vec<Vec<usize>>,
    n_edges: usize,
}

fn adjacency(edges: &[(usize, usize)], n_nodes: usize) -> Result<(Vec<Vec<usize>>, usize)> {
    let mut neighbors = vec![Vec::new(); n_nodes];
    for &(a, b) in edges {
        if a >= n_nodes || b >= n_nodes {
            return Err(Error::Data(format!(
                "edge ({a},{b}) references a node outside [0, {n_nodes})"
            )));
        }
        if a == b {
            return Err(Error::Data(format!("self-loop on node {a}")));
        }
        neighbors[a].push(b);
        neighbors[b].push(a);
    }
    let mut n_edges = 0;
    for list in &mut neighbors {
        list.sort_unstable();
        list.dedup();
        n_edges += list.len();
    }
    Ok((neighbors, n_edges / 2))
}

impl ComponentGraph {
    /// Builds the graph from an edge list over nodes `0..n_nodes`.
    ///
    /// Duplicate pairs and reversed pairs collapse to one edge. Components are
    /// the connected components, numbered by their smallest node id.
    pub fn load(edges: &[(usize, usize)], n_nodes: usize) -> Result<Self> {
        let (neighbors, n_edges) = adjacency(edges, n_nodes)?;
        let mut component_of = vec![usize::MAX; n_nodes];
        let mut components = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..n_nodes {
            if component_of[start] != usize::MAX {
                continue;
            }
            let idx = components.len();
            let mut members = vec![start];
            component_of[start] = idx;
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                for &v in &neighbors[u] {
                    if component_of[v] == usize::MAX {
                        component_of[v] = idx;
                        members.push(v);
                        queue.push_back(v);
                    }
                }
            }
            members.sort_unstable();
            components.push(members);
        }
        Ok(Self { neighbors, component_of, components, n_edges })
    }

    /// Builds the graph with caller-supplied sampling units.
    ///
    /// Each block must be a union of connected components (no edge may cross
    /// blocks) but need not be connected itself. Simulated networks use this:
    /// a generated block is one unit even when it contains isolates.
    pub fn from_blocks(edges: &[(usize, usize)], block_of: &[usize]) -> Result<Self> {
        let n_nodes = block_of.len();
        let (neighbors, n_edges) = adjacency(edges, n_nodes)?;
        for (u, list) in neighbors.iter().enumerate() {
            if let Some(&v) = list.iter().find(|&&v| block_of[v] != block_of[u]) {
                return Err(Error::Data(format!(
                    "edge ({u},{v}) crosses blocks {} and {}",
                    block_of[u], block_of[v]
                )));
            }
        }
        let mut relabel = std::collections::HashMap::new();
        let mut components: Vec<Vec<usize>> = Vec::new();
        let mut component_of = vec![0; n_nodes];
        for (node, &block) in block_of.iter().enumerate() {
            let idx = *relabel.entry(block).or_insert_with(|| {
                components.push(Vec::new());
                components.len() - 1
            });
            component_of[node] = idx;
            components[idx].push(node);
        }
        Ok(Self { neighbors, component_of, components, n_edges })
    }

    pub fn n_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    /// Number of components `m`.
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Sorted neighbor ids of node `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn component_of(&self, i: usize) -> usize {
        self.component_of[i]
    }

    /// Sorted node ids of component `nu`.
    pub fn component(&self, nu: usize) -> &[usize] {
        &self.components[nu]
    }

    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }

    pub fn component_sizes(&self) -> Vec<usize> {
        self.components.iter().map(Vec::len).collect()
    }

    /// Each undirected edge once, as `(low, high)`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(u, list)| list.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
    }

    /// Number of treated neighbors of `i`.
    pub fn neighborhood_treatment_sum(&self, z: &[u8], i: usize) -> Result<usize> {
        if z.len() != self.n_nodes() {
            return Err(Error::Data(format!(
                "treatment vector has {} entries for {} nodes",
                z.len(),
                self.n_nodes()
            )));
        }
        Ok(self.neighbors[i].iter().filter(|&&j| z[j] == 1).count())
    }

    /// Nodes at shortest-path distance exactly two from `i`, sorted.
    pub fn second_order_neighbors(&self, i: usize) -> Vec<usize> {
        let first = &self.neighbors[i];
        let mut out: Vec<usize> = first
            .iter()
            .flat_map(|&j| self.neighbors[j].iter().copied())
            .filter(|&k| k != i && first.binary_search(&k).is_err())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Neighbours of `i` up to the given order, sorted.
    pub fn interference_set(&self, i: usize, order: NeighborhoodOrder) -> Vec<usize> {
        match order {
            NeighborhoodOrder::First => self.neighbors[i].clone(),
            NeighborhoodOrder::Second => {
                let mut set = self.neighbors[i].clone();
                set.extend(self.second_order_neighbors(i));
                set.sort_unstable();
                set
            }
        }
    }

    /// Removes degree-0 nodes. Returns the reduced graph and, for each kept
    /// node, its id in the original graph.
    pub fn without_isolates(&self) -> (ComponentGraph, Vec<usize>) {
        let kept: Vec<usize> = (0..self.n_nodes()).filter(|&i| self.degree(i) > 0).collect();
        let mut new_id = vec![usize::MAX; self.n_nodes()];
        for (k, &old) in kept.iter().enumerate() {
            new_id[old] = k;
        }
        let edges: Vec<(usize, usize)> =
            self.edges().map(|(a, b)| (new_id[a], new_id[b])).collect();
        let graph = ComponentGraph::load(&edges, kept.len()).expect("subgraph of a valid graph");
        (graph, kept)
    }
}

/// Per-node attributes: named covariate columns, binary treatment, outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeData {
    column_names: Vec<String>,
    columns: Vec<Vec<f64>>,
    z: Vec<u8>,
    y: Vec<f64>,
}

impl NodeData {
    pub fn new(
        column_names: Vec<String>,
        columns: Vec<Vec<f64>>,
        z: Vec<u8>,
        y: Vec<f64>,
    ) -> Result<Self> {
        let n = z.len();
        if y.len() != n {
            return Err(Error::Data(format!("{} outcomes for {} treatments", y.len(), n)));
        }
        if column_names.len() != columns.len() {
            return Err(Error::Data("column names do not match covariate columns".into()));
        }
        if let Some(bad) = z.iter().position(|&v| v > 1) {
            return Err(Error::Data(format!("treatment of node {bad} is not 0/1")));
        }
        if let Some(bad) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("outcome of node {bad} is missing or non-finite")));
        }
        for (name, col) in column_names.iter().zip(&columns) {
            if col.len() != n {
                return Err(Error::Data(format!("column {name} has {} rows, expected {n}", col.len())));
            }
            if let Some(bad) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!("column {name} is missing or non-finite at node {bad}")));
            }
        }
        Ok(Self { column_names, columns, z, y })
    }

    pub fn n_nodes(&self) -> usize {
        self.z.len()
    }

    pub fn z(&self) -> &[u8] {
        &self.z
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.column_names.iter().position(|c| c == name).map(|k| self.columns[k].as_slice())
    }

    /// Copy with a replaced outcome vector (same length).
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(self.column_names.clone(), self.columns.clone(), self.z.clone(), y)
    }

    /// Rows `keep` in that order.
    pub fn subset(&self, keep: &[usize]) -> Self {
        Self {
            column_names: self.column_names.clone(),
            columns: self.columns.iter().map(|c| keep.iter().map(|&i| c[i]).collect()).collect(),
            z: keep.iter().map(|&i| self.z[i]).collect(),
            y: keep.iter().map(|&i| self.y[i]).collect(),
        }
    }

    pub(crate) fn check_aligned(&self, graph: &ComponentGraph) -> Result<()> {
        if self.n_nodes() != graph.n_nodes() {
            return Err(Error::Data(format!(
                "node data has {} rows but the graph has {} nodes",
                self.n_nodes(),
                graph.n_nodes()
            )));
        }
        Ok(())
    }
}
