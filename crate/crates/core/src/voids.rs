//! Ground-truth void spaces: voxelize a pile and flood-fill the exterior air.
//!
//! Empty cells reachable from the grid border are exterior. A second fill
//! only lets air through gaps at least `aperture_threshold` wide (a cube
//! probe of that size must fit); cells missed by that fill are voids.
//! A void that the plain fill reaches is *vented*, otherwise *enclosed*.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use crate::deposition::Pile;

/// Cap on `nx * ny * nz` for [`voxelize`].
pub const DEFAULT_MAX_CELLS: usize = 512 * 512 * 512;
pub const DEFAULT_APERTURE: f64 = 0.30;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum VoxelError {
    #[error("voxel grid of {dims:?} ({cells} cells) exceeds the budget of {max} cells; use a coarser resolution")]
    TooLarge { dims: [usize; 3], cells: usize, max: usize },
    #[error("resolution must be > 0, got {0}")]
    BadResolution(f64),
}

/// Solid/empty occupancy on a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    /// World position of the minimum corner of cell (0, 0, 0).
    pub origin: Point3<f64>,
    pub resolution: f64,
    pub dims: [usize; 3],
    /// Treat the space below the grid as solid ground: the bottom face does
    /// not seed the exterior fill.
    pub ground_sealed: bool,
    bits: Vec<u64>,
}

impl VoxelGrid {
    pub fn new(origin: Point3<f64>, resolution: f64, dims: [usize; 3]) -> VoxelGrid {
        let n = dims[0] * dims[1] * dims[2];
        VoxelGrid {
            origin,
            resolution,
            dims,
            ground_sealed: false,
            bits: vec![0; n.div_ceil(64)],
        }
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, [x, y, z]: [usize; 3]) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn coords(&self, i: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    pub fn is_solid(&self, c: [usize; 3]) -> bool {
        self.solid_at(self.index(c))
    }

    pub fn solid_at(&self, i: usize) -> bool {
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, c: [usize; 3], solid: bool) {
        let i = self.index(c);
        if solid {
            self.bits[i / 64] |= 1 << (i % 64);
        } else {
            self.bits[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn solid_count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn cell_center(&self, [x, y, z]: [usize; 3]) -> Point3<f64> {
        self.origin + Vector3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5) * self.resolution
    }

    pub fn cell_volume(&self) -> f64 {
        self.resolution.powi(3)
    }
}

/// Voxelize with the default cell budget.
pub fn voxelize(pile: &Pile, resolution: f64) -> Result<VoxelGrid, VoxelError> {
    voxelize_with_budget(pile, resolution, DEFAULT_MAX_CELLS)
}

/// A cell is solid iff its centre lies inside some body. The grid starts at
/// the ground plane and pads the pile's bounding box by one empty cell on
/// every other side.
pub fn voxelize_with_budget(pile: &Pile, resolution: f64, max_cells: usize) -> Result<VoxelGrid, VoxelError> {
    let (lo, hi) = pile
        .aabb()
        .unwrap_or((Point3::origin(), Point3::origin()));
    let mut grid = grid_for_bounds(lo, hi, resolution, max_cells)?;
    let [nx, ny, nz] = grid.dims;
    let bodies: Vec<_> = pile
        .instances
        .iter()
        .map(|b| {
            let shape = &pile.class(b).shape;
            (b, shape, b.aabb(shape))
        })
        .collect();
    let slabs: Vec<Vec<usize>> = (0..nz)
        .into_par_iter()
        .map(|z| {
            let mut solid = Vec::new();
            let cz = grid.origin.z + (z as f64 + 0.5) * resolution;
            for (b, shape, (blo, bhi)) in &bodies {
                if cz < blo.z || cz > bhi.z {
                    continue;
                }
                let range = |lo: f64, hi: f64, o: f64, n: usize| {
                    let a = ((lo - o) / resolution - 0.5).ceil().max(0.0) as usize;
                    let b = (((hi - o) / resolution - 0.5).floor() + 1.0).clamp(0.0, n as f64) as usize;
                    a..b
                };
                for y in range(blo.y, bhi.y, grid.origin.y, ny) {
                    for x in range(blo.x, bhi.x, grid.origin.x, nx) {
                        let p = grid.cell_center([x, y, z]);
                        let local = b.isometry().inverse_transform_point(&p);
                        if shape.contains(&local) {
                            solid.push(x + nx * y);
                        }
                    }
                }
            }
            solid
        })
        .collect();
    for (z, slab) in slabs.into_iter().enumerate() {
        for xy in slab {
            grid.set([xy % nx, xy / nx, z], true);
        }
    }
    Ok(grid)
}

fn grid_for_bounds(lo: Point3<f64>, hi: Point3<f64>, resolution: f64, max_cells: usize) -> Result<VoxelGrid, VoxelError> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(VoxelError::BadResolution(resolution));
    }
    let lo_cell = |v: f64| (v / resolution).floor() - 1.0;
    let hi_cell = |v: f64| (v / resolution).ceil() + 1.0;
    let (x0, y0) = (lo_cell(lo.x), lo_cell(lo.y));
    // the ground is solid, so the grid never extends below it
    let z0 = 0.0;
    let dims_f = [hi_cell(hi.x) - x0, hi_cell(hi.y) - y0, hi_cell(hi.z.max(0.0)) - z0];
    let cells_f = dims_f.iter().product::<f64>();
    let dims = dims_f.map(|d| d as usize);
    if cells_f > max_cells as f64 {
        return Err(VoxelError::TooLarge {
            dims,
            cells: cells_f.min(usize::MAX as f64) as usize,
            max: max_cells,
        });
    }
    let mut grid = VoxelGrid::new(Point3::new(x0, y0, z0) * resolution, resolution, dims);
    grid.ground_sealed = true;
    Ok(grid)
}

/// Voxelizes a triangle soup made of closed, outward-wound meshes that may
/// overlap. A cell is solid iff the winding number of its centre is
/// positive, counted along a vertical ray, so overlapping bodies stay solid.
/// The grid layout matches [`voxelize`] for the same bounds.
pub fn voxelize_mesh(triangles: &[[Point3<f64>; 3]], resolution: f64, max_cells: usize) -> Result<VoxelGrid, VoxelError> {
    let (lo, hi) = triangles
        .iter()
        .flatten()
        .fold(None, |acc: Option<(Point3<f64>, Point3<f64>)>, p| match acc {
            None => Some((*p, *p)),
            Some((lo, hi)) => Some((lo.inf(p), hi.sup(p))),
        })
        .unwrap_or((Point3::origin(), Point3::origin()));
    let mut grid = grid_for_bounds(lo, hi, resolution, max_cells)?;
    let [nx, ny, nz] = grid.dims;
    // crossings[column] = (height, winding change when passing upwards)
    let mut crossings: Vec<Vec<(f64, i32)>> = vec![Vec::new(); nx * ny];
    let o = grid.origin;
    for t in triangles {
        let n = (t[1] - t[0]).cross(&(t[2] - t[0]));
        if n.z == 0.0 {
            continue;
        }
        let tlo = t[0].inf(&t[1]).inf(&t[2]);
        let thi = t[0].sup(&t[1]).sup(&t[2]);
        let cells = |lo: f64, hi: f64, o: f64, n: usize| {
            let a = ((lo - o) / resolution - 0.5).ceil().max(0.0) as usize;
            let b = (((hi - o) / resolution - 0.5).floor() + 1.0).clamp(0.0, n as f64) as usize;
            a..b
        };
        for y in cells(tlo.y, thi.y, o.y, ny) {
            for x in cells(tlo.x, thi.x, o.x, nx) {
                let px = o.x + (x as f64 + 0.5) * resolution;
                let py = o.y + (y as f64 + 0.5) * resolution;
                if let Some(z) = vertical_crossing(t, px, py) {
                    // an upward ray leaves the solid through faces whose normal points up
                    crossings[x + nx * y].push((z, if n.z > 0.0 { -1 } else { 1 }));
                }
            }
        }
    }
    for (xy, col) in crossings.iter_mut().enumerate() {
        if col.is_empty() {
            continue;
        }
        col.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut winding = 0;
        let mut next = 0;
        for z in 0..nz {
            let cz = o.z + (z as f64 + 0.5) * resolution;
            while next < col.len() && col[next].0 <= cz {
                winding += col[next].1;
                next += 1;
            }
            if winding > 0 {
                grid.set([xy % nx, xy / nx, z], true);
            }
        }
    }
    Ok(grid)
}

/// Height where the vertical line through `(x, y)` meets the triangle.
fn vertical_crossing(t: &[Point3<f64>; 3], x: f64, y: f64) -> Option<f64> {
    let edge = |a: &Point3<f64>, b: &Point3<f64>| (b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x);
    let w0 = edge(&t[1], &t[2]);
    let w1 = edge(&t[2], &t[0]);
    let w2 = edge(&t[0], &t[1]);
    let area = w0 + w1 + w2;
    if area == 0.0 {
        return None;
    }
    let inside = |w: f64| if area > 0.0 { w >= 0.0 } else { w <= 0.0 };
    if !(inside(w0) && inside(w1) && inside(w2)) {
        return None;
    }
    Some((w0 * t[0].z + w1 * t[1].z + w2 * t[2].z) / area)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Openness {
    Enclosed,
    Vented,
}

impl fmt::Display for Openness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Openness::Enclosed => "enclosed",
            Openness::Vented => "vented",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoidRegion {
    pub id: usize,
    pub voxel_count: usize,
    pub volume: f64,
    pub aabb_min: Point3<f64>,
    pub aabb_max: Point3<f64>,
    /// Lowest linear-index cell of the region.
    pub seed: [usize; 3],
    pub openness: Openness,
    /// Linear cell indices, ascending.
    pub cells: Vec<usize>,
}

impl fmt::Display for VoidRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (a, b) = (self.aabb_min, self.aabb_max);
        write!(
            f,
            "{} {:.6} {} {:.3} {:.3} {:.3} {:.3} {:.3} {:.3}",
            self.id, self.volume, self.openness, a.x, a.y, a.z, b.x, b.y, b.z
        )
    }
}

/// Cell classification produced by [`analyze`].
#[derive(Debug, Clone, PartialEq)]
pub struct VoidAnalysis {
    pub regions: Vec<VoidRegion>,
    pub exterior_cells: usize,
    pub solid_cells: usize,
}

/// Void regions under the default aperture threshold.
pub fn find_voids(grid: &VoxelGrid) -> Vec<VoidRegion> {
    analyze(grid, DEFAULT_APERTURE).regions
}

/// Probe half-width in cells: a gap of `ceil(aperture / res)` cells admits a
/// cube of side `2k + 1`.
pub fn probe_radius(aperture: f64, resolution: f64) -> usize {
    let width = (aperture / resolution - 1e-9).ceil().max(1.0) as usize;
    (width - 1).div_ceil(2)
}

const NEIGHBOURS: [[isize; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];

fn step(c: [usize; 3], d: [isize; 3], dims: [usize; 3]) -> Option<[usize; 3]> {
    let mut out = [0; 3];
    for k in 0..3 {
        let v = c[k] as isize + d[k];
        if v < 0 || v >= dims[k] as isize {
            return None;
        }
        out[k] = v as usize;
    }
    Some(out)
}

fn lin(c: [usize; 3], dims: [usize; 3]) -> usize {
    c[0] + dims[0] * (c[1] + dims[1] * c[2])
}

/// 6-connected fill over cells where `passable` holds, seeded from the grid
/// faces (all but the bottom when `sealed`).
fn border_fill(dims: [usize; 3], sealed: bool, passable: &[bool]) -> Vec<bool> {
    let mut reached = vec![false; passable.len()];
    let mut queue = VecDeque::new();
    let [nx, ny, nz] = dims;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let on_face = x == 0 || y == 0 || x + 1 == nx || y + 1 == ny || z + 1 == nz || (z == 0 && !sealed);
                let i = lin([x, y, z], dims);
                if on_face && passable[i] && !reached[i] {
                    reached[i] = true;
                    queue.push_back([x, y, z]);
                }
            }
        }
    }
    while let Some(c) = queue.pop_front() {
        for d in NEIGHBOURS {
            if let Some(n) = step(c, d, dims) {
                let i = lin(n, dims);
                if passable[i] && !reached[i] {
                    reached[i] = true;
                    queue.push_back(n);
                }
            }
        }
    }
    reached
}

/// Chebyshev dilation by `k` cells, one axis at a time. `floor_solid` makes
/// cells below z = 0 count as set.
fn dilate(mask: &[bool], dims: [usize; 3], k: usize, floor_solid: bool) -> Vec<bool> {
    if k == 0 {
        return mask.to_vec();
    }
    let mut cur = mask.to_vec();
    for axis in 0..3 {
        let mut next = vec![false; cur.len()];
        let stride = [1, dims[0], dims[0] * dims[1]][axis];
        let n = dims[axis];
        for (i, out) in next.iter_mut().enumerate() {
            let pos = (i / stride) % n;
            let lo = pos.saturating_sub(k);
            let hi = (pos + k).min(n - 1);
            let base = i - pos * stride;
            *out = (lo..=hi).any(|p| cur[base + p * stride]) || (axis == 2 && floor_solid && pos < k);
        }
        cur = next;
    }
    cur
}

/// Classify every cell as solid, exterior or void, with an explicit
/// aperture threshold in meters.
pub fn analyze(grid: &VoxelGrid, aperture: f64) -> VoidAnalysis {
    let dims = grid.dims;
    let n = grid.len();
    let solid: Vec<bool> = (0..n).map(|i| grid.solid_at(i)).collect();
    let empty: Vec<bool> = solid.iter().map(|s| !s).collect();
    let plain = border_fill(dims, grid.ground_sealed, &empty);

    // Work on a copy padded by k+1 so the probe can sit outside the grid.
    let k = probe_radius(aperture, grid.resolution);
    let p = k + 1;
    let bottom = if grid.ground_sealed { 0 } else { p };
    let wdims = [dims[0] + 2 * p, dims[1] + 2 * p, dims[2] + bottom + p];
    let mut wsolid = vec![false; wdims.iter().product()];
    for (i, &s) in solid.iter().enumerate() {
        if s {
            let [x, y, z] = grid.coords(i);
            wsolid[lin([x + p, y + p, z + bottom], wdims)] = true;
        }
    }
    let blocked = dilate(&wsolid, wdims, k, grid.ground_sealed);
    let free: Vec<bool> = blocked.iter().map(|b| !b).collect();
    let centres = border_fill(wdims, grid.ground_sealed, &free);
    let open_w = dilate(&centres, wdims, k, false);
    let open: Vec<bool> = (0..n)
        .map(|i| {
            let [x, y, z] = grid.coords(i);
            open_w[lin([x + p, y + p, z + bottom], wdims)] && !solid[i]
        })
        .collect();

    let mut label = vec![usize::MAX; n];
    let mut regions = Vec::new();
    for start in 0..n {
        if solid[start] || open[start] || label[start] != usize::MAX {
            continue;
        }
        let id = regions.len();
        let mut cells = vec![start];
        label[start] = id;
        let mut head = 0;
        while head < cells.len() {
            let c = grid.coords(cells[head]);
            head += 1;
            for d in NEIGHBOURS {
                if let Some(nb) = step(c, d, dims) {
                    let j = lin(nb, dims);
                    if !solid[j] && !open[j] && label[j] == usize::MAX {
                        label[j] = id;
                        cells.push(j);
                    }
                }
            }
        }
        cells.sort_unstable();
        let mut lo = [usize::MAX; 3];
        let mut hi = [0; 3];
        for &c in &cells {
            let c = grid.coords(c);
            for k in 0..3 {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k] + 1);
            }
        }
        let corner = |c: [usize; 3]| grid.origin + Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64) * grid.resolution;
        regions.push(VoidRegion {
            id,
            voxel_count: cells.len(),
            volume: cells.len() as f64 * grid.cell_volume(),
            aabb_min: corner(lo),
            aabb_max: corner(hi),
            seed: grid.coords(start),
            openness: if plain[start] { Openness::Vented } else { Openness::Enclosed },
            cells,
        });
    }
    regions.sort_by(|a, b| b.voxel_count.cmp(&a.voxel_count).then(a.seed_index(grid).cmp(&b.seed_index(grid))));
    for (i, r) in regions.iter_mut().enumerate() {
        r.id = i;
    }
    VoidAnalysis {
        regions,
        exterior_cells: open.iter().filter(|&&o| o).count(),
        solid_cells: solid.iter().filter(|&&s| s).count(),
    }
}

impl VoidRegion {
    fn seed_index(&self, grid: &VoxelGrid) -> usize {
        grid.index(self.seed)
    }
}

/// Report text: one line per region, `id volume_m3 openness aabb`.
pub fn report(regions: &[VoidRegion]) -> String {
    regions.iter().map(|r| format!("{r}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shell(outer: usize, pad: usize) -> VoxelGrid {
        let n = outer + 2 * pad;
        let mut g = VoxelGrid::new(Point3::origin(), 1.0, [n, n, n]);
        for z in 0..outer {
            for y in 0..outer {
                for x in 0..outer {
                    let wall = [x, y, z].iter().any(|&v| v == 0 || v == outer - 1);
                    if wall {
                        g.set([x + pad, y + pad, z + pad], true);
                    }
                }
            }
        }
        g
    }

    #[test]
    fn sealed_shell_has_one_enclosed_cavity() {
        let g = shell(5, 1);
        let regions = find_voids(&g);
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].voxel_count, 27);
        assert_eq!(regions[0].openness, Openness::Enclosed);
    }

    #[test]
    fn punctured_shell_is_vented() {
        let mut g = shell(5, 1);
        g.set([3, 3, 1], false);
        let a = analyze(&g, 1.5);
        assert_eq!(a.regions.iter().filter(|r| r.openness == Openness::Enclosed).count(), 0);
        assert_eq!(a.regions.len(), 1);
        assert_eq!(a.regions[0].openness, Openness::Vented);
        // with the threshold at one cell the hole admits the probe
        assert!(analyze(&g, 1.0).regions.is_empty());
    }

    #[test]
    fn empty_grid_has_no_voids() {
        let g = VoxelGrid::new(Point3::origin(), 0.1, [6, 7, 8]);
        assert!(find_voids(&g).is_empty());
        let a = analyze(&g, DEFAULT_APERTURE);
        assert_eq!(a.exterior_cells, g.len());
    }

    #[test]
    fn partition_holds() {
        let mut g = shell(7, 2);
        g.set([4, 4, 2], false);
        for aperture in [0.5, 1.0, 2.0, 3.0, 5.0] {
            let a = analyze(&g, aperture);
            let void: usize = a.regions.iter().map(|r| r.voxel_count).sum();
            assert_eq!(a.exterior_cells + void + a.solid_cells, g.len());
        }
    }

    #[test]
    fn sealed_floor_closes_open_bottom() {
        // a cup standing on the ground: walls and no lid
        let mut g = VoxelGrid::new(Point3::origin(), 1.0, [7, 7, 5]);
        for z in 0..4 {
            for y in 1..6 {
                for x in 1..6 {
                    if x == 1 || x == 5 || y == 1 || y == 5 || z == 3 {
                        g.set([x, y, z], true);
                    }
                }
            }
        }
        assert!(find_voids(&g).is_empty());
        g.ground_sealed = true;
        let r = find_voids(&g);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].voxel_count, 27);
        assert_eq!(r[0].openness, Openness::Enclosed);
    }

    #[test]
    fn probe_radius_matches_gap_widths() {
        assert_eq!(probe_radius(0.30, 0.10), 1);
        assert_eq!(probe_radius(0.30, 0.05), 3);
        assert_eq!(probe_radius(0.10, 0.10), 0);
        assert_eq!(probe_radius(1.5, 1.0), 1);
    }

    #[test]
    fn region_report_format() {
        let g = shell(5, 1);
        let line = report(&find_voids(&g));
        assert_eq!(line.trim(), "0 27.000000 enclosed 2.000 2.000 2.000 5.000 5.000 5.000");
    }
}
