use std::collections::{BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparse::{SparseSym, SymBuilder};

/// Undirected binary neighbor structure over areal units.
///
/// Edges are stored once as `(i, j)` with `i < j`, sorted; their position in
/// [`edges`](Self::edges) is the edge index used by edge-indexed weight
/// vectors elsewhere in the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    unit_ids: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl AdjacencyGraph {
    /// Builds a graph from index pairs. Self-loops and out-of-range indices
    /// are errors; duplicate pairs (in either orientation) are merged.
    pub fn new(unit_ids: Vec<String>, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let n = unit_ids.len();
        let mut index = HashMap::with_capacity(n);
        for (i, id) in unit_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!("duplicate unit id {id}")));
            }
        }
        let mut set = BTreeSet::new();
        for (a, b) in pairs {
            if a >= n || b >= n {
                return Err(Error::Dimension(format!("edge ({a}, {b}) out of range for {n} units")));
            }
            if a == b {
                return Err(Error::InvalidInput(format!("self-loop on unit {}", unit_ids[a])));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        Ok(AdjacencyGraph {
            unit_ids,
            index,
            edges,
            neighbors,
        })
    }

    /// Builds a graph from unit-id pairs.
    pub fn from_id_pairs(unit_ids: Vec<String>, pairs: &[(String, String)]) -> Result<Self> {
        let lookup: HashMap<&str, usize> = unit_ids.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
        let idx = pairs
            .iter()
            .map(|(a, b)| {
                let ia = lookup
                    .get(a.as_str())
                    .ok_or_else(|| Error::Dimension(format!("edge references unknown unit {a}")))?;
                let ib = lookup
                    .get(b.as_str())
                    .ok_or_else(|| Error::Dimension(format!("edge references unknown unit {b}")))?;
                Ok((*ia, *ib))
            })
            .collect::<Result<Vec<_>>>()?;
        AdjacencyGraph::new(unit_ids, idx)
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn unit_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.edges.binary_search(&(a.min(b), a.max(b))).ok()
    }

    /// Graph over `ids` (in that order) keeping edges between retained units.
    pub fn restrict(&self, ids: &[String]) -> Result<AdjacencyGraph> {
        let mut map = vec![None; self.n_units()];
        for (new, id) in ids.iter().enumerate() {
            let old = self
                .unit_index(id)
                .ok_or_else(|| Error::Dimension(format!("unit {id} not in adjacency graph")))?;
            map[old] = Some(new);
        }
        let pairs: Vec<(usize, usize)> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| Some((map[a]?, map[b]?)))
            .collect();
        AdjacencyGraph::new(ids.to_vec(), pairs)
    }

    /// Laplacian `D_W − W` of the subgraph whose edges have `active[e]`
    /// (all edges when `active` is `None`).
    pub fn laplacian(&self, active: Option<&[bool]>) -> SparseSym {
        let mut b = SymBuilder::new(self.n_units());
        for i in 0..self.n_units() {
            b.add(i, i, 0.0);
        }
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            if active.is_none_or(|w| w[e]) {
                b.add(i, i, 1.0);
                b.add(j, j, 1.0);
                b.add(i, j, -1.0);
            }
        }
        b.build()
    }

    /// Leroux CAR precision `ρ (D_W − W) + (1 − ρ) I` over the full edge set.
    pub fn laplacian_precision(&self, rho: f64) -> Result<SparseSym> {
        leroux_precision(self, rho, None)
    }

    pub fn read_edges_csv(path: &Path, unit_ids: Vec<String>) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse_edges_csv(file, &path.display().to_string(), unit_ids)
    }

    /// Parses `unit_id_a,unit_id_b` rows into a graph over `unit_ids`.
    /// Edges touching units outside `unit_ids` are dropped, so a city-wide
    /// edge list can be used after exclusions.
    pub fn parse_edges_csv<R: Read>(reader: R, context: &str, unit_ids: Vec<String>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::parse(context, e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["unit_id_a", "unit_id_b"] {
            return Err(Error::parse(context, "expected header unit_id_a,unit_id_b"));
        }
        let known: std::collections::HashSet<&str> = unit_ids.iter().map(String::as_str).collect();
        let mut pairs = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(context, format!("row {}: {e}", line + 2)))?;
            if rec.len() != 2 {
                return Err(Error::parse(context, format!("row {}: expected two fields", line + 2)));
            }
            let (a, b) = (rec[0].to_string(), rec[1].to_string());
            if a == b {
                return Err(Error::parse(context, format!("row {}: self-loop on {a}", line + 2)));
            }
            if known.contains(a.as_str()) && known.contains(b.as_str()) {
                pairs.push((a, b));
            }
        }
        AdjacencyGraph::from_id_pairs(unit_ids, &pairs)
    }

    /// Edge pairs as ids, each pair ordered and the list sorted.
    pub fn id_pairs_sorted(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .edges
            .iter()
            .map(|&(a, b)| {
                let (x, y) = (&self.unit_ids[a], &self.unit_ids[b]);
                if x <= y {
                    (x.clone(), y.clone())
                } else {
                    (y.clone(), x.clone())
                }
            })
            .collect();
        out.sort();
        out
    }

    pub fn write_edges_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::InvalidInput(format!("csv write: {e}"));
        wtr.write_record(["unit_id_a", "unit_id_b"]).map_err(err)?;
        for (a, b) in self.id_pairs_sorted() {
            wtr.write_record([a, b]).map_err(err)?;
        }
        wtr.flush()
            .map_err(|e| Error::InvalidInput(format!("csv write: {e}")))?;
        Ok(())
    }
}

/// `ρ (D_W − W) + (1 − ρ) I` where `W` keeps the edges with `active[e]`.
pub fn leroux_precision(graph: &AdjacencyGraph, rho: f64, active: Option<&[bool]>) -> Result<SparseSym> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidInput(format!("rho = {rho} outside [0, 1)")));
    }
    if let Some(w) = active {
        if w.len() != graph.n_edges() {
            return Err(Error::Dimension(format!(
                "{} border weights for {} edges",
                w.len(),
                graph.n_edges()
            )));
        }
    }
    let lap = graph.laplacian(active);
    Ok(lap
        .scaled(rho)
        .add_scaled(&SparseSym::identity(graph.n_units(), 1.0), 1.0 - rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("u{i}")).collect()
    }

    #[test]
    fn rejects_self_loops_and_merges_duplicates() {
        assert!(AdjacencyGraph::new(ids(3), [(1, 1)]).is_err());
        let g = AdjacencyGraph::new(ids(3), [(0, 1), (1, 0), (2, 1)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.degree(), vec![1, 2, 1]);
    }

    #[test]
    fn rho_zero_gives_identity() {
        let g = AdjacencyGraph::new(ids(4), [(0, 1), (1, 2), (2, 3)]).unwrap();
        let q = g.laplacian_precision(0.0).unwrap();
        assert_eq!(q.to_dense(), SparseSym::identity(4, 1.0).to_dense());
    }

    #[test]
    fn two_node_half_rho() {
        let g = AdjacencyGraph::new(ids(2), [(0, 1)]).unwrap();
        let q = g.laplacian_precision(0.5).unwrap().to_dense();
        assert_eq!(q, vec![vec![1.0, -0.5], vec![-0.5, 1.0]]);
        let det = q[0][0] * q[1][1] - q[0][1] * q[1][0];
        assert!((det - 0.75).abs() < 1e-15);
    }

    #[test]
    fn rho_out_of_range() {
        let g = AdjacencyGraph::new(ids(2), [(0, 1)]).unwrap();
        assert!(g.laplacian_precision(1.0).is_err());
        assert!(g.laplacian_precision(-0.1).is_err());
    }

    fn random_graph(n: usize, seed: u64) -> AdjacencyGraph {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in 0..i {
                if rng.random::<f64>() < 0.3 {
                    pairs.push((i, j));
                }
            }
        }
        AdjacencyGraph::new(ids(n), pairs).unwrap()
    }

    proptest! {
        #[test]
        fn row_sums_collapse_to_one_minus_rho(seed in 0u64..200, rho in 0.0f64..0.999) {
            let g = random_graph(9, seed);
            let q = g.laplacian_precision(rho).unwrap();
            let ones = vec![1.0; 9];
            for v in q.mul_vec(&ones) {
                prop_assert!((v - (1.0 - rho)).abs() < 1e-12);
            }
        }

        #[test]
        fn smallest_eigenvalue_at_least_one_minus_rho(seed in 0u64..100, rho in 0.0f64..0.999) {
            let g = random_graph(7, seed);
            let d = g.laplacian_precision(rho).unwrap().to_dense();
            let m = nalgebra::DMatrix::from_fn(7, 7, |i, j| d[i][j]);
            let min = m.symmetric_eigen().eigenvalues.min();
            prop_assert!(min >= 1.0 - rho - 1e-10);
        }
    }

    #[test]
    fn restrict_drops_edges_to_removed_units() {
        let g = AdjacencyGraph::new(ids(4), [(0, 1), (1, 2), (2, 3)]).unwrap();
        let r = g.restrict(&["u3".into(), "u2".into(), "u0".into()]).unwrap();
        assert_eq!(r.edges(), &[(0, 1)]);
        assert_eq!(r.unit_ids()[0], "u3");
    }

    #[test]
    fn edges_csv_roundtrip_sorted() {
        let g = AdjacencyGraph::new(ids(3), [(2, 0), (1, 0)]).unwrap();
        let mut buf = Vec::new();
        g.write_edges_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "unit_id_a,unit_id_b\nu0,u1\nu0,u2\n");
        let back = AdjacencyGraph::parse_edges_csv(buf.as_slice(), "t", ids(3)).unwrap();
        assert_eq!(back, g);
    }
}
