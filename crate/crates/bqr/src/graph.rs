//! Region adjacency graphs and the intrinsic GMRF precision structure.
//!
//! The `.gra` file format: line 1 holds the region count R, followed by
//! three lines per region: the region label, the neighbor count k, and a
//! line of k zero-based neighbor indices (empty when k = 0). Indices
//! refer to declaration order.

use std::collections::VecDeque;
use std::io::BufRead;

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Labeled region set with symmetric adjacency lists.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionGraph {
    labels: Vec<String>,
    adjacency: Vec<Vec<usize>>,
}

impl RegionGraph {
    /// Build from labels and adjacency lists; validates symmetry,
    /// uniqueness, index range, and absence of self-loops.
    pub fn new(labels: Vec<String>, adjacency: Vec<Vec<usize>>) -> Result<Self> {
        if labels.len() != adjacency.len() {
            return Err(Error::Graph(
                "label count does not match adjacency list count".into(),
            ));
        }
        let r = labels.len();
        let mut seen = std::collections::HashSet::new();
        for label in &labels {
            if !seen.insert(label.clone()) {
                return Err(Error::Graph(format!("duplicate region label `{label}`")));
            }
        }
        let mut adjacency = adjacency;
        for (i, neigh) in adjacency.iter_mut().enumerate() {
            neigh.sort_unstable();
            for pair in neigh.windows(2) {
                if pair[0] == pair[1] {
                    return Err(Error::Graph(format!(
                        "region `{}` lists neighbor {} twice",
                        labels[i], pair[0]
                    )));
                }
            }
            for &j in neigh.iter() {
                if j >= r {
                    return Err(Error::Graph(format!(
                        "region `{}`: neighbor index {j} out of range (R = {r})",
                        labels[i]
                    )));
                }
                if j == i {
                    return Err(Error::Graph(format!("region `{}` lists itself", labels[i])));
                }
            }
        }
        for i in 0..r {
            for &j in &adjacency[i] {
                if !adjacency[j].contains(&i) {
                    return Err(Error::AsymmetricAdjacency(
                        labels[i].clone(),
                        labels[j].clone(),
                    ));
                }
            }
        }
        Ok(RegionGraph { labels, adjacency })
    }

    pub fn n_regions(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Position of the region whose label matches `label`.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Serialize to the `.gra` format.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{}\n", self.n_regions()));
        for (label, neigh) in self.labels.iter().zip(&self.adjacency) {
            out.push_str(label);
            out.push('\n');
            out.push_str(&format!("{}\n", neigh.len()));
            let idx: Vec<String> = neigh.iter().map(usize::to_string).collect();
            out.push_str(&idx.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Intrinsic GMRF precision: Q_ii = degree(i), Q_ij = -1 for neighbors.
///
/// Stored sparsely through the graph's adjacency; dense realizations are
/// built on demand.
#[derive(Debug, Clone)]
pub struct GmrfPrecision {
    dimension: usize,
    degrees: Vec<usize>,
    adjacency: Vec<Vec<usize>>,
    components: Vec<Vec<usize>>,
}

impl GmrfPrecision {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Partition of region indices into connected components.
    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }

    /// rank(Q) = R - (number of connected components).
    pub fn rank(&self) -> usize {
        self.dimension - self.components.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let r = self.dimension;
        let mut q = DMatrix::zeros(r, r);
        for i in 0..r {
            q[(i, i)] = self.degrees[i] as f64;
            for &j in &self.adjacency[i] {
                q[(i, j)] = -1.0;
            }
        }
        q
    }

    /// x'Qx computed over edges: sum of (x_i - x_j)^2 for each neighbor
    /// pair with i < j.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dimension {
            for &j in &self.adjacency[i] {
                if i < j {
                    let d = x[i] - x[j];
                    acc += d * d;
                }
            }
        }
        acc
    }
}

/// Parse a `.gra` adjacency file.
pub fn parse_gra<R: BufRead>(source: R) -> Result<RegionGraph> {
    let mut lines = Vec::new();
    for (lineno, line) in source.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        lines.push(line);
    }
    let mut cursor = 0usize;
    fn next_line(lines: &[String], cursor: &mut usize) -> Result<(usize, String)> {
        while *cursor < lines.len() {
            let line = lines[*cursor].trim().to_string();
            *cursor += 1;
            if !line.is_empty() {
                return Ok((*cursor, line));
            }
        }
        Err(Error::Parse {
            line: lines.len() + 1,
            message: "unexpected end of graph file".into(),
        })
    }

    let (lineno, first) = next_line(&lines, &mut cursor)?;
    let r: usize = first.parse().map_err(|_| Error::Parse {
        line: lineno,
        message: format!("cannot parse region count from `{first}`"),
    })?;
    let mut labels = Vec::with_capacity(r);
    let mut adjacency = Vec::with_capacity(r);
    for _ in 0..r {
        let (_, label) = next_line(&lines, &mut cursor)?;
        let (lineno, count_line) = next_line(&lines, &mut cursor)?;
        let k: usize = count_line.parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("cannot parse neighbor count from `{count_line}`"),
        })?;
        let mut neigh = Vec::with_capacity(k);
        if k > 0 {
            let (lineno, idx_line) = next_line(&lines, &mut cursor)?;
            for tok in idx_line.split_whitespace() {
                let j: usize = tok.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("cannot parse neighbor index `{tok}`"),
                })?;
                neigh.push(j);
            }
            if neigh.len() != k {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!(
                        "region `{label}` declares {k} neighbors but lists {}",
                        neigh.len()
                    ),
                });
            }
        } else {
            // consume the (possibly empty) index line if one is present
            if cursor < lines.len() && lines[cursor].trim().is_empty() {
                cursor += 1;
            }
        }
        labels.push(label);
        adjacency.push(neigh);
    }
    // trailing non-empty content means the declared count was wrong
    while cursor < lines.len() {
        if !lines[cursor].trim().is_empty() {
            return Err(Error::Parse {
                line: cursor + 1,
                message: format!("trailing content after {r} declared regions"),
            });
        }
        cursor += 1;
    }
    RegionGraph::new(labels, adjacency)
}

/// Connected components by breadth-first traversal, each sorted, ordered
/// by smallest member.
pub fn connected_components(g: &RegionGraph) -> Vec<Vec<usize>> {
    let r = g.n_regions();
    let mut visited = vec![false; r];
    let mut components = Vec::new();
    for start in 0..r {
        if visited[start] {
            continue;
        }
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        let mut part = Vec::new();
        while let Some(i) = queue.pop_front() {
            part.push(i);
            for &j in g.neighbors(i) {
                if !visited[j] {
                    visited[j] = true;
                    queue.push_back(j);
                }
            }
        }
        part.sort_unstable();
        components.push(part);
    }
    components
}

/// Build the GMRF precision structure for a region graph.
pub fn precision_matrix(g: &RegionGraph) -> GmrfPrecision {
    let degrees = (0..g.n_regions()).map(|i| g.degree(i)).collect();
    GmrfPrecision {
        dimension: g.n_regions(),
        degrees,
        adjacency: (0..g.n_regions()).map(|i| g.neighbors(i).to_vec()).collect(),
        components: connected_components(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse(text: &str) -> Result<RegionGraph> {
        parse_gra(Cursor::new(text.to_string()))
    }

    #[test]
    fn parses_minimal_symmetric_graph() {
        let g = parse("2\nA\n1\n1\nB\n1\n0\n").unwrap();
        assert_eq!(g.labels(), &["A".to_string(), "B".to_string()]);
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
    }

    #[test]
    fn parses_isolated_region() {
        let g = parse("1\nA\n0\n").unwrap();
        assert_eq!(g.n_regions(), 1);
        assert!(g.neighbors(0).is_empty());
    }

    #[test]
    fn rejects_asymmetry_naming_the_pair() {
        match parse("2\nA\n1\n1\nB\n0\n") {
            Err(Error::AsymmetricAdjacency(a, b)) => {
                assert_eq!(a, "A");
                assert_eq!(b, "B");
            }
            other => panic!("expected asymmetry error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_out_of_range_index() {
        assert!(parse("2\nA\n1\n5\nB\n0\n").is_err());
    }

    #[test]
    fn rejects_count_mismatch() {
        // declares 1 region but lists 2
        assert!(parse("1\nA\n0\nB\n0\n").is_err());
    }

    #[test]
    fn path_graph_precision() {
        let g = RegionGraph::new(
            vec!["A".into(), "B".into(), "C".into()],
            vec![vec![1], vec![0, 2], vec![1]],
        )
        .unwrap();
        let q = precision_matrix(&g).to_dense();
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0],
        );
        assert_eq!(q, expected);
    }

    #[test]
    fn isolated_region_has_zero_row() {
        let g = RegionGraph::new(
            vec!["A".into(), "B".into(), "C".into()],
            vec![vec![1], vec![0], vec![]],
        )
        .unwrap();
        let q = precision_matrix(&g).to_dense();
        for k in 0..3 {
            assert_eq!(q[(2, k)], 0.0);
            assert_eq!(q[(k, 2)], 0.0);
        }
    }

    #[test]
    fn grid_2x2_rank_and_components() {
        // 4 regions, rook adjacency: 0-1, 0-2, 1-3, 2-3
        let g = RegionGraph::new(
            vec!["0".into(), "1".into(), "2".into(), "3".into()],
            vec![vec![1, 2], vec![0, 3], vec![0, 3], vec![1, 2]],
        )
        .unwrap();
        let p = precision_matrix(&g);
        assert_eq!(p.components().len(), 1);
        assert_eq!(p.rank(), 3);
        // numerical rank via eigenvalues of the dense matrix
        let eig = p.to_dense().symmetric_eigen();
        let nonzero = eig.eigenvalues.iter().filter(|e| e.abs() > 1e-10).count();
        assert_eq!(nonzero, 3);
    }

    #[test]
    fn component_partitions() {
        let path3 = RegionGraph::new(
            vec!["A".into(), "B".into(), "C".into()],
            vec![vec![1], vec![0, 2], vec![1]],
        )
        .unwrap();
        assert_eq!(connected_components(&path3), vec![vec![0, 1, 2]]);

        let isolated = RegionGraph::new(
            vec!["A".into(), "B".into(), "C".into()],
            vec![vec![], vec![], vec![]],
        )
        .unwrap();
        assert_eq!(
            connected_components(&isolated),
            vec![vec![0], vec![1], vec![2]]
        );

        let two_edges = RegionGraph::new(
            vec!["A".into(), "B".into(), "C".into(), "D".into()],
            vec![vec![2], vec![3], vec![0], vec![1]],
        )
        .unwrap();
        assert_eq!(
            connected_components(&two_edges),
            vec![vec![0, 2], vec![1, 3]]
        );
    }

    #[test]
    fn null_space_contains_component_indicators() {
        let g = RegionGraph::new(
            vec!["A".into(), "B".into(), "C".into(), "D".into(), "E".into()],
            vec![vec![1], vec![0, 2], vec![1], vec![4], vec![3]],
        )
        .unwrap();
        let p = precision_matrix(&g);
        let q = p.to_dense();
        for comp in p.components() {
            let mut ind = nalgebra::DVector::zeros(5);
            for &i in comp {
                ind[i] = 1.0;
            }
            assert_eq!((&q * ind).norm(), 0.0);
        }
    }

    #[test]
    fn quadratic_form_matches_edge_sum() {
        // deterministic pseudo-random vectors via LCG
        let g = parse("4\nA\n2\n1 2\nB\n2\n0 3\nC\n2\n0 3\nD\n2\n1 2\n").unwrap();
        let p = precision_matrix(&g);
        let q = p.to_dense();
        let mut state = 7u64;
        for _ in 0..100 {
            let x: Vec<f64> = (0..4)
                .map(|_| {
                    state = state
                        .wrapping_mul(6364136223846793005)
                        .wrapping_add(1442695040888963407);
                    (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                })
                .collect();
            let xv = nalgebra::DVector::from_column_slice(&x);
            let dense_form = (xv.transpose() * &q * &xv)[(0, 0)];
            let edge_form = p.quadratic_form(&x);
            assert!((dense_form - edge_form).abs() <= 1e-10 * edge_form.abs().max(1.0));
        }
    }

    #[test]
    fn serialize_round_trips_adjacency() {
        let g = parse("3\nA\n1\n1\nB\n2\n0 2\nC\n1\n1\n").unwrap();
        let back = parse(&g.serialize()).unwrap();
        assert_eq!(back, g);
        // including an isolated region
        let g = parse("2\nA\n0\n\nB\n0\n\n").unwrap();
        let back = parse(&g.serialize()).unwrap();
        assert_eq!(back, g);
    }
}
