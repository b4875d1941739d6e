//! Truncated, capped, low-discrepancy in-neighborhoods.
//!
//! Each output point gathers input points within a `ρ`-band of width
//! `rho_bar`, sorts them by Euclidean distance in `(ρ, z)`, and thins the
//! sorted list with the smallest stride that brings it under the cap `K`.
//! Striding (instead of truncating) keeps the neighborhood's spatial extent
//! while bounding per-point cost — a low-discrepancy Nyström subsample.

use super::GnoError;

/// Directed in-neighborhoods of a set of query points over a fixed input
/// discretization. `neighbors[i]` indexes into the input point list.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    pub out_coords: Vec<[f64; 2]>,
    pub neighbors: Vec<Vec<u32>>,
}

impl NeighborGraph {
    pub fn len(&self) -> usize {
        self.out_coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.out_coords.is_empty()
    }

    /// Total edge count, Σ_y |N(y)|.
    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }
}

/// Build the neighbor graph from `pi_in` to each point of `pi_out`.
///
/// Candidates for output point `y` are inputs with `|ρ_x − ρ_y| ≤ rho_bar`,
/// sorted ascending by Euclidean distance (ties by input index). The list
/// is thinned by the smallest stride `s` with `ceil(n/s) ≤ K`, keeping
/// every `s`-th element starting from the nearest.
pub fn build_graph(
    pi_in: &[[f64; 2]],
    pi_out: &[[f64; 2]],
    rho_bar: f64,
    k: usize,
) -> Result<NeighborGraph, GnoError> {
    assert!(k >= 1, "neighbor cap must be at least 1");
    assert!(rho_bar > 0.0, "rho_bar must be positive");
    // Sort input indices by rho once so each query's band is a binary search.
    let mut by_rho: Vec<u32> = (0..pi_in.len() as u32).collect();
    by_rho.sort_by(|&a, &b| {
        pi_in[a as usize][0]
            .total_cmp(&pi_in[b as usize][0])
            .then(a.cmp(&b))
    });
    let rhos_sorted: Vec<f64> = by_rho.iter().map(|&i| pi_in[i as usize][0]).collect();

    let mut neighbors = Vec::with_capacity(pi_out.len());
    let mut scratch: Vec<(f64, u32)> = Vec::new();
    for y in pi_out {
        let lo = rhos_sorted.partition_point(|&r| r < y[0] - rho_bar);
        let hi = rhos_sorted.partition_point(|&r| r <= y[0] + rho_bar);
        scratch.clear();
        for &idx in &by_rho[lo..hi] {
            let x = pi_in[idx as usize];
            let (dr, dz) = (x[0] - y[0], x[1] - y[1]);
            scratch.push((dr * dr + dz * dz, idx));
        }
        if scratch.is_empty() {
            return Err(GnoError::NoNeighbors { rho: y[0], z: y[1] });
        }
        scratch.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let stride = scratch.len().div_ceil(k);
        neighbors.push(scratch.iter().step_by(stride).map(|&(_, i)| i).collect());
    }
    Ok(NeighborGraph { out_coords: pi_out.to_vec(), neighbors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn few_candidates_all_selected() {
        let pi_in: Vec<[f64; 2]> = (0..4).map(|i| [0.5, i as f64 * 0.1]).collect();
        let g = build_graph(&pi_in, &[[0.5, 0.0]], 0.3, 10).unwrap();
        assert_eq!(g.neighbors[0], vec![0, 1, 2, 3]);
    }

    #[test]
    fn stride_example_twelve_candidates_cap_five() {
        // 12 candidates at increasing distance → stride 3, sorted
        // positions {0, 3, 6, 9}.
        let pi_in: Vec<[f64; 2]> = (0..12).map(|i| [0.5, (i + 1) as f64 * 0.01]).collect();
        let g = build_graph(&pi_in, &[[0.5, 0.0]], 0.3, 5).unwrap();
        assert_eq!(g.neighbors[0], vec![0, 3, 6, 9]);
    }

    #[test]
    fn band_filter_applies() {
        let pi_in = vec![[0.1, 0.0], [0.5, 0.0], [0.9, 0.0]];
        let g = build_graph(&pi_in, &[[0.5, 0.0]], 0.3, 10).unwrap();
        assert_eq!(g.neighbors[0], vec![1]);
    }

    #[test]
    fn isolated_point_errors() {
        let pi_in = vec![[0.1, 0.0]];
        match build_graph(&pi_in, &[[0.9, 0.0]], 0.3, 10) {
            Err(GnoError::NoNeighbors { rho, z }) => {
                assert_eq!((rho, z), (0.9, 0.0));
            }
            other => panic!("expected NoNeighbors, got {other:?}"),
        }
    }

    #[test]
    fn ties_broken_by_input_index() {
        // Two inputs equidistant from the query; lower index first.
        let pi_in = vec![[0.5, 0.1], [0.5, -0.1]];
        let g = build_graph(&pi_in, &[[0.5, 0.0]], 0.3, 2).unwrap();
        assert_eq!(g.neighbors[0], vec![0, 1]);
        let g1 = build_graph(&pi_in, &[[0.5, 0.0]], 0.3, 1).unwrap();
        assert_eq!(g1.neighbors[0], vec![0]);
    }

    #[test]
    fn sorted_by_distance() {
        let pi_in = vec![[0.5, 0.3], [0.5, 0.05], [0.5, -0.2], [0.375, 0.0]];
        let g = build_graph(&pi_in, &[[0.5, 0.0]], 0.3, 4).unwrap();
        assert_eq!(g.neighbors[0], vec![1, 3, 2, 0]);
    }

    #[test]
    fn edge_count_linear_in_k() {
        let pi_in: Vec<[f64; 2]> = (0..200)
            .map(|i| [0.5 + (i % 10) as f64 * 0.01, (i / 10) as f64 * 0.05])
            .collect();
        let pi_out: Vec<[f64; 2]> = (0..50).map(|i| [0.52, i as f64 * 0.02]).collect();
        for k in [5, 10, 20] {
            let g = build_graph(&pi_in, &pi_out, 0.3, k).unwrap();
            // every query has 200 in-band candidates → exactly ceil(200/ceil(200/k))
            let stride = 200usize.div_ceil(k);
            assert_eq!(g.edge_count(), 50 * 200usize.div_ceil(stride));
            assert!(g.neighbors.iter().all(|n| n.len() <= k));
        }
    }
}
