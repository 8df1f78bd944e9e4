//! Exact nearest-neighbor queries: a linear scan and a uniform grid hash.
//!
//! Both return neighbors ordered by `(squared distance, index)`, so ties are
//! broken the same way regardless of which structure answered.

use std::collections::HashMap;

use crate::math::Vec3;

/// Keeps the `k` smallest `(d², index)` pairs, sorted.
#[derive(Debug, Clone)]
struct TopK {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    #[inline]
    fn worst(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items[self.k - 1].0
        }
    }

    #[inline]
    fn push(&mut self, d2: f64, idx: usize) {
        if self.items.len() == self.k {
            let w = self.items[self.k - 1];
            if (d2, idx) >= w {
                return;
            }
        }
        let pos = self
            .items
            .partition_point(|&(d, i)| (d, i) < (d2, idx));
        self.items.insert(pos, (d2, idx));
        self.items.truncate(self.k);
    }
}

/// `k` nearest points to `q` by exhaustive scan.
pub fn knn_linear(points: &[Vec3], q: &Vec3, k: usize) -> Vec<(usize, f64)> {
    let mut top = TopK::new(k);
    for (i, p) in points.iter().enumerate() {
        let d2 = (p - q).norm_squared();
        if d2 <= top.worst() {
            top.push(d2, i);
        }
    }
    top.items.into_iter().map(|(d2, i)| (i, d2)).collect()
}

/// Uniform grid over a fixed point set.
#[derive(Debug, Clone)]
pub struct PointGrid<'a> {
    points: &'a [Vec3],
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
    lo: (i64, i64, i64),
    hi: (i64, i64, i64),
}

impl<'a> PointGrid<'a> {
    /// `cell` of `None` picks a size giving a few points per occupied cell.
    pub fn new(points: &'a [Vec3], cell: Option<f64>) -> Self {
        let cell = cell.unwrap_or_else(|| Self::auto_cell(points)).max(1e-9);
        let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        let mut lo = (i64::MAX, i64::MAX, i64::MAX);
        let mut hi = (i64::MIN, i64::MIN, i64::MIN);
        for (i, p) in points.iter().enumerate() {
            let key = Self::key_of(p, cell);
            lo = (lo.0.min(key.0), lo.1.min(key.1), lo.2.min(key.2));
            hi = (hi.0.max(key.0), hi.1.max(key.1), hi.2.max(key.2));
            cells.entry(key).or_default().push(i as u32);
        }
        Self {
            points,
            cell,
            cells,
            lo,
            hi,
        }
    }

    fn auto_cell(points: &[Vec3]) -> f64 {
        if points.len() < 2 {
            return 1.0;
        }
        let mut min = points[0];
        let mut max = points[0];
        for p in points {
            min = min.inf(p);
            max = max.sup(p);
        }
        let ext = max - min;
        let volume = ext.x.max(1e-6) * ext.y.max(1e-6) * ext.z.max(1e-6);
        // roughly 4 points per cell if they filled the box
        (volume * 4.0 / points.len() as f64).cbrt().max(ext.max() / 512.0)
    }

    #[inline]
    fn key_of(p: &Vec3, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    fn visit_shell(&self, c: (i64, i64, i64), r: i64, mut f: impl FnMut(u32)) {
        for dx in -r..=r {
            for dy in -r..=r {
                for dz in -r..=r {
                    if dx.abs() != r && dy.abs() != r && dz.abs() != r {
                        continue;
                    }
                    if let Some(ids) = self.cells.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                        for &i in ids {
                            f(i);
                        }
                    }
                }
            }
        }
    }

    fn max_shell(&self, c: (i64, i64, i64)) -> i64 {
        let span = |lo: i64, hi: i64, v: i64| (v - lo).abs().max((hi - v).abs());
        span(self.lo.0, self.hi.0, c.0)
            .max(span(self.lo.1, self.hi.1, c.1))
            .max(span(self.lo.2, self.hi.2, c.2))
    }

    /// Exact `k` nearest neighbors of `q`.
    pub fn knn(&self, q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let mut top = TopK::new(k);
        if self.points.is_empty() || k == 0 {
            return Vec::new();
        }
        let c = Self::key_of(q, self.cell);
        let max_r = self.max_shell(c);
        let mut r = 0;
        loop {
            self.visit_shell(c, r, |i| {
                let d2 = (self.points[i as usize] - q).norm_squared();
                top.push(d2, i as usize);
            });
            // every unvisited point is at least r cells away
            let reach = r as f64 * self.cell;
            if (top.items.len() == k && top.worst() <= reach * reach) || r >= max_r {
                break;
            }
            r += 1;
        }
        top.items.into_iter().map(|(d2, i)| (i, d2)).collect()
    }

    /// Nearest point within `radius`, if any.
    pub fn nearest_within(&self, q: &Vec3, radius: f64) -> Option<(usize, f64)> {
        let c = Self::key_of(q, self.cell);
        let r = (radius / self.cell).ceil() as i64;
        let mut best: Option<(f64, usize)> = None;
        for dx in -r..=r {
            for dy in -r..=r {
                for dz in -r..=r {
                    let Some(ids) = self.cells.get(&(c.0 + dx, c.1 + dy, c.2 + dz)) else {
                        continue;
                    };
                    for &i in ids {
                        let d2 = (self.points[i as usize] - q).norm_squared();
                        if d2 <= radius * radius && best.is_none_or(|b| (d2, i as usize) < b) {
                            best = Some((d2, i as usize));
                        }
                    }
                }
            }
        }
        best.map(|(d2, i)| (i, d2))
    }
}
