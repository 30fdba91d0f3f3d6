//! Bounding volume hierarchy over a triangle soup (binned SAH build).

use nalgebra::{Point3, Vector3};

const BINS: usize = 16;
const LEAF_SIZE: usize = 4;
const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub v0: Point3<f64>,
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
}

impl Triangle {
    pub fn new(a: Point3<f64>, b: Point3<f64>, c: Point3<f64>) -> Triangle {
        Triangle {
            v0: a,
            e1: b - a,
            e2: c - a,
        }
    }

    pub fn vertices(&self) -> [Point3<f64>; 3] {
        [self.v0, self.v0 + self.e1, self.v0 + self.e2]
    }

    /// Unit geometric normal, counter-clockwise winding.
    pub fn normal(&self) -> Vector3<f64> {
        self.e1.cross(&self.e2).normalize()
    }

    fn centroid(&self) -> Point3<f64> {
        self.v0 + (self.e1 + self.e2) / 3.0
    }

    fn bounds(&self) -> Aabb {
        let mut b = Aabb::empty();
        for v in self.vertices() {
            b.grow(&v);
        }
        b
    }

    /// Möller–Trumbore; two-sided. Returns the ray parameter of the hit.
    pub fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let p = dir.cross(&self.e2);
        let det = self.e1.dot(&p);
        if det.abs() < EPS {
            return None;
        }
        let inv = 1.0 / det;
        let s = origin - self.v0;
        let u = s.dot(&p) * inv;
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        let q = s.cross(&self.e1);
        let v = dir.dot(&q) * inv;
        if v < 0.0 || u + v > 1.0 {
            return None;
        }
        let t = self.e2.dot(&q) * inv;
        (t > 1e-9).then_some(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub lo: Point3<f64>,
    pub hi: Point3<f64>,
}

impl Aabb {
    pub fn empty() -> Aabb {
        Aabb {
            lo: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            hi: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn grow(&mut self, p: &Point3<f64>) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    pub fn merge(&mut self, other: &Aabb) {
        self.lo = self.lo.inf(&other.lo);
        self.hi = self.hi.sup(&other.hi);
    }

    fn area(&self) -> f64 {
        let d = self.hi - self.lo;
        if d.x < 0.0 {
            return 0.0;
        }
        2.0 * (d.x * d.y + d.y * d.z + d.z * d.x)
    }

    /// Entry distance of the ray into the box, if it enters before `t_max`.
    fn hit(&self, origin: &Point3<f64>, inv_dir: &Vector3<f64>, t_max: f64) -> Option<f64> {
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for k in 0..3 {
            let a = (self.lo[k] - origin[k]) * inv_dir[k];
            let b = (self.hi[k] - origin[k]) * inv_dir[k];
            let (near, far) = if a <= b { (a, b) } else { (b, a) };
            // NaN from 0 * inf leaves the bound unchanged
            if near > t0 {
                t0 = near;
            }
            if far < t1 {
                t1 = far;
            }
        }
        (t0 <= t1).then_some(t0)
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    bounds: Aabb,
    /// Leaf: first index into `order`. Interior: index of the left child;
    /// the right child follows it.
    first: u32,
    count: u32,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

impl Bvh {
    pub fn build(tris: &[Triangle]) -> Bvh {
        let bounds: Vec<Aabb> = tris.iter().map(Triangle::bounds).collect();
        let centroids: Vec<Point3<f64>> = tris.iter().map(Triangle::centroid).collect();
        let mut order: Vec<u32> = (0..tris.len() as u32).collect();
        let mut nodes = vec![Node {
            bounds: Aabb::empty(),
            first: 0,
            count: tris.len() as u32,
        }];
        if !tris.is_empty() {
            let mut stack = vec![0usize];
            while let Some(ni) = stack.pop() {
                let (first, count) = (nodes[ni].first as usize, nodes[ni].count as usize);
                let mut nb = Aabb::empty();
                let mut cb = Aabb::empty();
                for &t in &order[first..first + count] {
                    nb.merge(&bounds[t as usize]);
                    cb.grow(&centroids[t as usize]);
                }
                nodes[ni].bounds = nb;
                if count <= LEAF_SIZE {
                    continue;
                }
                let Some((axis, split)) = best_split(&order[first..first + count], &bounds, &centroids, &cb, &nb) else {
                    continue;
                };
                let slice = &mut order[first..first + count];
                let mut mid = 0;
                for i in 0..slice.len() {
                    if centroids[slice[i] as usize][axis] < split {
                        slice.swap(i, mid);
                        mid += 1;
                    }
                }
                if mid == 0 || mid == count {
                    continue;
                }
                let left = nodes.len();
                nodes.push(Node {
                    bounds: Aabb::empty(),
                    first: first as u32,
                    count: mid as u32,
                });
                nodes.push(Node {
                    bounds: Aabb::empty(),
                    first: (first + mid) as u32,
                    count: (count - mid) as u32,
                });
                nodes[ni].first = left as u32;
                nodes[ni].count = 0;
                stack.push(left);
                stack.push(left + 1);
            }
        }
        Bvh { nodes, order }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Nearest triangle hit with parameter below `t_max`.
    pub fn intersect(&self, tris: &[Triangle], origin: &Point3<f64>, dir: &Vector3<f64>, t_max: f64) -> Option<(usize, f64)> {
        if tris.is_empty() {
            return None;
        }
        let inv = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<(usize, f64)> = None;
        let mut limit = t_max;
        let mut stack = [0u32; 64];
        let mut sp = 0;
        if self.nodes[0].bounds.hit(origin, &inv, limit).is_none() {
            return None;
        }
        stack[sp] = 0;
        sp += 1;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            if node.bounds.hit(origin, &inv, limit).is_none() {
                continue;
            }
            if node.count > 0 {
                let first = node.first as usize;
                for &t in &self.order[first..first + node.count as usize] {
                    if let Some(d) = tris[t as usize].intersect(origin, dir) {
                        if d < limit {
                            limit = d;
                            best = Some((t as usize, d));
                        }
                    }
                }
                continue;
            }
            let (l, r) = (node.first, node.first + 1);
            let dl = self.nodes[l as usize].bounds.hit(origin, &inv, limit);
            let dr = self.nodes[r as usize].bounds.hit(origin, &inv, limit);
            // push the farther child first so the nearer is visited next
            match (dl, dr) {
                (Some(a), Some(b)) => {
                    let (near, far) = if a <= b { (l, r) } else { (r, l) };
                    stack[sp] = far;
                    stack[sp + 1] = near;
                    sp += 2;
                }
                (Some(_), None) => {
                    stack[sp] = l;
                    sp += 1;
                }
                (None, Some(_)) => {
                    stack[sp] = r;
                    sp += 1;
                }
                (None, None) => {}
            }
        }
        best
    }
}

fn best_split(
    items: &[u32],
    bounds: &[Aabb],
    centroids: &[Point3<f64>],
    cb: &Aabb,
    nb: &Aabb,
) -> Option<(usize, f64)> {
    let mut best: Option<(f64, usize, f64)> = None;
    for axis in 0..3 {
        let (lo, hi) = (cb.lo[axis], cb.hi[axis]);
        if hi - lo < 1e-12 {
            continue;
        }
        let scale = BINS as f64 / (hi - lo);
        let mut bins = [(Aabb::empty(), 0usize); BINS];
        for &t in items {
            let b = (((centroids[t as usize][axis] - lo) * scale) as usize).min(BINS - 1);
            bins[b].0.merge(&bounds[t as usize]);
            bins[b].1 += 1;
        }
        let mut right_area = [0.0; BINS];
        let mut right_count = [0usize; BINS];
        let mut acc = Aabb::empty();
        let mut n = 0;
        for i in (1..BINS).rev() {
            acc.merge(&bins[i].0);
            n += bins[i].1;
            right_area[i] = acc.area();
            right_count[i] = n;
        }
        let mut acc = Aabb::empty();
        let mut n = 0;
        for i in 0..BINS - 1 {
            acc.merge(&bins[i].0);
            n += bins[i].1;
            let cost = acc.area() * n as f64 + right_area[i + 1] * right_count[i + 1] as f64;
            if n > 0 && right_count[i + 1] > 0 && best.is_none_or(|(c, _, _)| cost < c) {
                best = Some((cost, axis, lo + (i + 1) as f64 / scale));
            }
        }
    }
    let (cost, axis, split) = best?;
    // splitting must beat intersecting every triangle in one leaf
    (cost < nb.area() * items.len() as f64).then_some((axis, split))
}

/// Reference nearest-hit search over every triangle.
pub fn intersect_brute_force(tris: &[Triangle], origin: &Point3<f64>, dir: &Vector3<f64>, t_max: f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, t) in tris.iter().enumerate() {
        if let Some(d) = t.intersect(origin, dir) {
            if d < t_max && best.is_none_or(|(_, b)| d < b) {
                best = Some((i, d));
            }
        }
    }
    best
}
