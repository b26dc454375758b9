//! Exact k-nearest-neighbor graph over canonical positions.

use crate::adc::Origin;
use crate::error::Result;
use crate::model::GaussianCloud;

/// Floor applied to squared distances of coincident points, also the default
/// denominator regularizer.
pub const DISTANCE_FLOOR: f64 = 1e-8;

/// k-NN indices and canonical squared distances, row per Gaussian.
///
/// Rows go stale between scheduled rebuilds: densification children inherit
/// their parent's row via [`NeighborGraph::remap`].
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    neighbors: Vec<u32>,
    dist_sq: Vec<f64>,
    k: usize,
    rows: usize,
    pub built_at: usize,
    /// Set when the requested k exceeded K - 1 and was shrunk.
    pub shrunk: bool,
}

impl NeighborGraph {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        (
            &self.neighbors[i * self.k..(i + 1) * self.k],
            &self.dist_sq[i * self.k..(i + 1) * self.k],
        )
    }

    /// Carry rows across a densify/prune resize: every new Gaussian reuses its
    /// parent's row with neighbor indices remapped to the new indexing.
    /// Entries whose referent vanished fall back to the first surviving entry
    /// of the same row.
    pub fn remap(&self, origins: &[Origin], new_count: usize) -> NeighborGraph {
        let mut kept_map = vec![None::<u32>; self.rows];
        let mut child_map = vec![None::<u32>; self.rows];
        for (new_idx, origin) in origins.iter().enumerate() {
            match *origin {
                Origin::Kept(old) => kept_map[old] = Some(new_idx as u32),
                Origin::Child(old) => {
                    if child_map[old].is_none() {
                        child_map[old] = Some(new_idx as u32);
                    }
                }
            }
        }
        let resolve = |old: u32| -> Option<u32> {
            kept_map[old as usize].or(child_map[old as usize])
        };

        let mut neighbors = vec![0u32; new_count * self.k];
        let mut dist_sq = vec![DISTANCE_FLOOR; new_count * self.k];
        for (new_idx, origin) in origins.iter().enumerate() {
            let parent = match *origin {
                Origin::Kept(old) | Origin::Child(old) => old,
            };
            let (old_row, old_dist) = self.row(parent);
            let fallback = old_row.iter().copied().find_map(resolve).unwrap_or_else(|| {
                // whole row vanished; point at an arbitrary other Gaussian
                if new_idx + 1 < new_count {
                    (new_idx + 1) as u32
                } else {
                    new_idx.saturating_sub(1) as u32
                }
            });
            for (slot, (&j, &dj)) in old_row.iter().zip(old_dist).enumerate() {
                let mapped = resolve(j).unwrap_or(fallback);
                neighbors[new_idx * self.k + slot] = mapped;
                dist_sq[new_idx * self.k + slot] = dj;
            }
        }
        NeighborGraph {
            neighbors,
            dist_sq,
            k: self.k,
            rows: new_count,
            built_at: self.built_at,
            shrunk: self.shrunk,
        }
    }
}

/// Exact k nearest neighbors by canonical Euclidean distance, ties broken by
/// lower index. A request with `k >= K` is shrunk to `K - 1` and flagged.
pub fn build_neighbor_graph(cloud: &GaussianCloud, k: usize, iteration: usize) -> Result<NeighborGraph> {
    cloud.validate()?;
    let count = cloud.len();
    let shrunk = k >= count;
    let k_eff = if shrunk { count - 1 } else { k };

    let mut neighbors = vec![0u32; count * k_eff];
    let mut dist_sq = vec![0.0; count * k_eff];
    let mut scratch: Vec<(f64, u32)> = Vec::with_capacity(count.saturating_sub(1));
    for i in 0..count {
        scratch.clear();
        let pi = cloud.position(i);
        for j in 0..count {
            if j == i {
                continue;
            }
            let pj = cloud.position(j);
            let d2: f64 = pi.iter().zip(pj).map(|(a, b)| (a - b) * (a - b)).sum();
            scratch.push((d2, j as u32));
        }
        if k_eff > 0 && k_eff < scratch.len() {
            scratch.select_nth_unstable_by(k_eff - 1, |a, b| {
                a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
            });
        }
        let head = &mut scratch[..k_eff];
        head.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for (slot, &(d2, j)) in head.iter().enumerate() {
            neighbors[i * k_eff + slot] = j;
            dist_sq[i * k_eff + slot] = d2.max(DISTANCE_FLOOR);
        }
    }

    Ok(NeighborGraph {
        neighbors,
        dist_sq,
        k: k_eff,
        rows: count,
        built_at: iteration,
        shrunk,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussianCloud;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud_at(points: &[[f64; 2]]) -> GaussianCloud {
        let k = points.len();
        GaussianCloud::new(
            2,
            points.iter().flatten().copied().collect(),
            vec![-2.0; k],
            vec![0.0; k],
            vec![0.5; k],
            (0..k).map(|i| i as f64).collect(),
        )
        .unwrap()
    }

    #[test]
    fn collinear_points_pick_the_closer_side() {
        let cloud = cloud_at(&[[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]]);
        let g = build_neighbor_graph(&cloud, 1, 0).unwrap();
        assert_eq!(g.row(0).0, &[1]);
        assert_eq!(g.row(1).0, &[0]);
        assert_eq!(g.row(2).0, &[1]);
        assert!(!g.shrunk);
    }

    #[test]
    fn full_k_gives_complete_graph() {
        let cloud = cloud_at(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [2.0, 2.0]]);
        let g = build_neighbor_graph(&cloud, 3, 0).unwrap();
        for i in 0..4u32 {
            let mut row: Vec<u32> = g.row(i as usize).0.to_vec();
            row.sort_unstable();
            let expect: Vec<u32> = (0..4).filter(|j| *j != i).collect();
            assert_eq!(row, expect);
        }
    }

    #[test]
    fn oversized_k_shrinks_with_flag() {
        let cloud = cloud_at(&[[0.0, 0.0], [1.0, 0.0]]);
        let g = build_neighbor_graph(&cloud, 8, 0).unwrap();
        assert!(g.shrunk);
        assert_eq!(g.k(), 1);
    }

    #[test]
    fn coincident_points_get_floored_distance() {
        let cloud = cloud_at(&[[0.5, 0.5], [0.5, 0.5], [1.0, 1.0]]);
        let g = build_neighbor_graph(&cloud, 1, 0).unwrap();
        assert_eq!(g.row(0).0, &[1]);
        assert_eq!(g.row(0).1, &[DISTANCE_FLOOR]);
    }

    #[test]
    fn ties_break_toward_lower_index() {
        // 1 and 2 are equidistant from 0
        let cloud = cloud_at(&[[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [5.0, 5.0]]);
        let g = build_neighbor_graph(&cloud, 1, 0).unwrap();
        assert_eq!(g.row(0).0, &[1]);
    }

    /// Plain full-sort oracle, kept deliberately naive.
    fn brute_force(cloud: &GaussianCloud, k: usize) -> Vec<Vec<(u32, f64)>> {
        let n = cloud.len();
        (0..n)
            .map(|i| {
                let mut all: Vec<(u32, f64)> = (0..n)
                    .filter(|j| *j != i)
                    .map(|j| {
                        let d2: f64 = cloud
                            .position(i)
                            .iter()
                            .zip(cloud.position(j))
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        (j as u32, d2)
                    })
                    .collect();
                all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
                all.truncate(k);
                all
            })
            .collect()
    }

    #[test]
    fn agrees_with_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for _ in 0..100 {
            let n = rng.gen_range(3..=200);
            let k = rng.gen_range(1..=(n - 1).min(10));
            let points: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect();
            let cloud = cloud_at(&points);
            let g = build_neighbor_graph(&cloud, k, 0).unwrap();
            let oracle = brute_force(&cloud, k);
            for i in 0..n {
                let (idx, d2) = g.row(i);
                for s in 0..k {
                    assert_eq!(idx[s], oracle[i][s].0, "row {i} slot {s}");
                    assert_eq!(d2[s], oracle[i][s].1.max(DISTANCE_FLOOR));
                }
            }
        }
    }

    #[test]
    fn remap_inherits_parent_rows() {
        let cloud = cloud_at(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]);
        let g = build_neighbor_graph(&cloud, 2, 7).unwrap();
        // Gaussian 1 split into two children (new 3, 4); Gaussian 2 pruned.
        let origins = vec![
            Origin::Kept(0),
            Origin::Kept(3),
            Origin::Child(1),
            Origin::Child(1),
        ];
        let g2 = g.remap(&origins, 4);
        assert_eq!(g2.built_at, 7);
        // old row 1 was [0, 2]; 2 is gone with no child, falls back to first
        // surviving entry (0)
        assert_eq!(g2.row(2).0, &[0, 0]);
        assert_eq!(g2.row(3).0, &[0, 0]);
        // old row 0 was [1, 2]: 1 -> first child (index 2), 2 -> fallback
        assert_eq!(g2.row(0).0, &[2, 2]);
        // no self neighbors anywhere
        for i in 0..4 {
            assert!(g2.row(i).0.iter().all(|&j| j as usize != i));
        }
    }
}
