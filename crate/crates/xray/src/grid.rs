//! Uniform voxel-hash grid for nearest-neighbor queries. Build is linear in
//! the point count; bounded queries touch at most the 27 cells around the
//! query, which covers any radius up to the cell size.

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::geometry::PointCloud;

pub struct VoxelGrid {
    cell_size: f64,
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
    positions: Vec<Vector3<f64>>,
    cell_min: (i64, i64, i64),
    cell_max: (i64, i64, i64),
}

impl VoxelGrid {
    pub fn build(cloud: &PointCloud, cell_size: f64) -> Self {
        assert!(cell_size > 0.0, "cell size must be positive");
        let positions: Vec<Vector3<f64>> = cloud.iter().map(|p| p.position()).collect();
        let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        let mut cell_min = (i64::MAX, i64::MAX, i64::MAX);
        let mut cell_max = (i64::MIN, i64::MIN, i64::MIN);
        for (i, p) in positions.iter().enumerate() {
            let k = Self::key(p, cell_size);
            cell_min = (cell_min.0.min(k.0), cell_min.1.min(k.1), cell_min.2.min(k.2));
            cell_max = (cell_max.0.max(k.0), cell_max.1.max(k.1), cell_max.2.max(k.2));
            cells.entry(k).or_default().push(i as u32);
        }
        Self { cell_size, cells, positions, cell_min, cell_max }
    }

    fn key(p: &Vector3<f64>, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Nearest neighbor within `radius` (requires radius <= cell_size, which
    /// bounds the search to one cell ring). Returns (index, distance).
    pub fn nearest_within(&self, query: Vector3<f64>, radius: f64) -> Option<(usize, f64)> {
        debug_assert!(radius <= self.cell_size * (1.0 + 1e-12));
        let (cx, cy, cz) = Self::key(&query, self.cell_size);
        let mut best: Option<(usize, f64)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(idx) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &i in idx {
                            let d = (self.positions[i as usize] - query).norm();
                            if d <= radius && best.map_or(true, |(_, bd)| d < bd) {
                                best = Some((i as usize, d));
                            }
                        }
                    }
                }
            }
        }
        best
    }

    /// Unbounded nearest neighbor via expanding cell shells. Returns
    /// (index, distance); None only for an empty grid.
    pub fn nearest(&self, query: Vector3<f64>) -> Option<(usize, f64)> {
        if self.positions.is_empty() {
            return None;
        }
        let (cx, cy, cz) = Self::key(&query, self.cell_size);
        // No occupied cell lies beyond this Chebyshev ring.
        let max_ring = [
            (cx - self.cell_min.0).abs(),
            (cx - self.cell_max.0).abs(),
            (cy - self.cell_min.1).abs(),
            (cy - self.cell_max.1).abs(),
            (cz - self.cell_min.2).abs(),
            (cz - self.cell_max.2).abs(),
        ]
        .into_iter()
        .max()
        .unwrap();
        let mut best: Option<(usize, f64)> = None;
        for ring in 0..=max_ring {
            // A point in a cell at Chebyshev ring r is at least
            // (r-1) * cell_size away, so once best beats that bound, stop.
            if let Some((_, bd)) = best {
                if (ring - 1) as f64 * self.cell_size > bd {
                    break;
                }
            }
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        if let Some(idx) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                            for &i in idx {
                                let d = (self.positions[i as usize] - query).norm();
                                if best.map_or(true, |(_, bd)| d < bd) {
                                    best = Some((i as usize, d));
                                }
                            }
                        }
                    }
                }
            }
        }
        best
    }
}
