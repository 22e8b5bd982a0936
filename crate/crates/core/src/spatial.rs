//! Uniform-grid binning of point locations for window queries.

use crate::geometry::{Aabb, Point3};

/// Point indices bucketed into a regular grid of cubic cells (CSR layout).
#[derive(Clone, Debug)]
pub struct PointGrid {
    origin: Point3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<u32>,
    entries: Vec<u32>,
}

impl PointGrid {
    /// Bins `locations` (assumed inside `bounds`) into cells of side about `cell`.
    pub fn build(locations: &[Point3], bounds: Aabb, cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell must be positive");
        assert!(locations.len() < u32::MAX as usize, "too many points for a 32-bit index");
        let extent = [
            bounds.max.x - bounds.min.x,
            bounds.max.y - bounds.min.y,
            bounds.max.z - bounds.min.z,
        ];
        // Cap the cell count so tiny cells on huge windows cannot exhaust memory.
        let mut cell = cell;
        loop {
            let n: f64 = extent.iter().map(|e| (e / cell).floor() + 1.0).product();
            if n <= 16.0 * (locations.len() as f64 + 1024.0) {
                break;
            }
            cell *= 1.5;
        }
        let dims = extent.map(|e| ((e / cell).floor() as usize + 1).max(1));
        let mut grid = Self { origin: bounds.min, cell, dims, starts: Vec::new(), entries: Vec::new() };

        let n_cells = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0u32; n_cells + 1];
        let ids: Vec<usize> = locations.iter().map(|p| grid.cell_id(*p)).collect();
        for &id in &ids {
            counts[id + 1] += 1;
        }
        for i in 0..n_cells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut entries = vec![0u32; locations.len()];
        for (i, &id) in ids.iter().enumerate() {
            entries[fill[id] as usize] = i as u32;
            fill[id] += 1;
        }
        grid.starts = counts;
        grid.entries = entries;
        grid
    }

    fn coord(&self, v: f64, lo: f64, n: usize) -> usize {
        let c = ((v - lo) / self.cell).floor();
        if c <= 0.0 {
            0
        } else {
            (c as usize).min(n - 1)
        }
    }

    fn cell_id(&self, p: Point3) -> usize {
        let i = self.coord(p.x, self.origin.x, self.dims[0]);
        let j = self.coord(p.y, self.origin.y, self.dims[1]);
        let k = self.coord(p.z, self.origin.z, self.dims[2]);
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    /// Calls `visit` with the index of every point whose location lies in `query`.
    ///
    /// Indices are visited in increasing cell order and, within a cell, in
    /// increasing point index, so the order is deterministic.
    pub fn for_each_in(&self, locations: &[Point3], query: &Aabb, mut visit: impl FnMut(usize)) {
        let lo = [
            self.coord(query.min.x, self.origin.x, self.dims[0]),
            self.coord(query.min.y, self.origin.y, self.dims[1]),
            self.coord(query.min.z, self.origin.z, self.dims[2]),
        ];
        let hi = [
            self.coord(query.max.x, self.origin.x, self.dims[0]),
            self.coord(query.max.y, self.origin.y, self.dims[1]),
            self.coord(query.max.z, self.origin.z, self.dims[2]),
        ];
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                let row = (i * self.dims[1] + j) * self.dims[2];
                let a = self.starts[row + lo[2]] as usize;
                let b = self.starts[row + hi[2] + 1] as usize;
                for &e in &self.entries[a..b] {
                    let e = e as usize;
                    if query.contains(locations[e]) {
                        visit(e);
                    }
                }
            }
        }
    }

    /// Indices of the points in `query`, in the order of [`PointGrid::for_each_in`].
    pub fn query(&self, locations: &[Point3], query: &Aabb) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_in(locations, query, |i| out.push(i));
        out
    }
}
