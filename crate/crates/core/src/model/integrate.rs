//! Integration over the free (unobserved) coordinates of the default variable.

use crate::model::density::DensityModel;
use crate::model::reference::{Pins, Window};

impl DensityModel {
    /// `∫ f(x) ν(dx_free)` over the coordinates not fixed by `pins`, each free
    /// time coordinate restricted to `window` (and to the chamber for ordered
    /// models). Marks of free coordinates are integrated against their axes.
    ///
    /// On a grid the sum runs over support points in index order; on a Lebesgue
    /// reference it is nested composite Gauss-Legendre with cells cut at
    /// integers and at `breaks`.
    pub fn integrate_free(
        &self,
        pins: &Pins,
        window: Window,
        breaks: &[f64],
        mut f: impl FnMut(&[f64]) -> f64,
    ) -> f64 {
        let n = self.n();
        if let Some(g) = self.grid() {
            let mut s = 0.0;
            for k in 0..g.len() {
                let p = g.point(k);
                if !pins.matches(p) {
                    continue;
                }
                if !(0..n).filter(|&c| !pins.is_pinned(c)).all(|c| window.contains(p[c])) {
                    continue;
                }
                let w = g.free_weight(k, pins.mask());
                if w != 0.0 {
                    s += w * f(p);
                }
            }
            return s;
        }
        let mut point = vec![0.0; self.dim()];
        pins.fill(&mut point);
        if self.ordered() && !pinned_sorted(pins) {
            return 0.0;
        }
        let free: Vec<usize> = (0..n).filter(|&c| !pins.is_pinned(c)).collect();
        self.nest(&free, 0, &mut point, pins, window, breaks, &mut f)
    }

    /// Grid indices (with free weights) covered by [`DensityModel::integrate_free`].
    pub fn free_support(&self, pins: &Pins, window: Window) -> Vec<(usize, f64)> {
        let Some(g) = self.grid() else {
            return Vec::new();
        };
        let n = self.n();
        (0..g.len())
            .filter(|&k| {
                let p = g.point(k);
                pins.matches(p) && (0..n).filter(|&c| !pins.is_pinned(c)).all(|c| window.contains(p[c]))
            })
            .map(|k| (k, g.free_weight(k, pins.mask())))
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn nest(
        &self,
        free: &[usize],
        level: usize,
        point: &mut [f64],
        pins: &Pins,
        window: Window,
        breaks: &[f64],
        f: &mut dyn FnMut(&[f64]) -> f64,
    ) -> f64 {
        if level == free.len() {
            return f(point);
        }
        let n = self.n();
        let c = free[level];
        let mut lo = window.lower.unwrap_or(0.0);
        let mut hi = window.upper;
        if self.ordered() {
            if c > 0 {
                lo = lo.max(point[c - 1]);
            }
            if c + 1 < n && pins.is_pinned(c + 1) {
                let v = point[c + 1];
                hi = Some(hi.map_or(v, |h| h.min(v)));
            }
        }
        if hi.is_some_and(|h| h <= lo) {
            return 0.0;
        }
        let nodes = self.reference().coordinate_nodes(lo, hi, breaks, self.tail_rate(c));
        let marks = self.reference().mark_axes().map(|m| m[c].clone());
        let mut s = 0.0;
        for (u, w) in nodes {
            point[c] = u;
            match &marks {
                None => s += w * self.nest(free, level + 1, point, pins, window, breaks, f),
                Some(axis) => {
                    for (l, lw) in axis.values.iter().zip(&axis.weights) {
                        point[n + c] = *l;
                        s += w * lw * self.nest(free, level + 1, point, pins, window, breaks, f);
                    }
                }
            }
        }
        s
    }
}

fn pinned_sorted(pins: &Pins) -> bool {
    let vals: Vec<f64> = (0..pins.n()).filter_map(|c| pins.time(c)).collect();
    vals.windows(2).all(|p| p[0] <= p[1])
}
