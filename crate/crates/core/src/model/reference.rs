//! Reference measure `ν` on the default space and the free-coordinate integrator.

use std::collections::HashMap;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on the number of default coordinates.
pub const MAX_DEFAULTS: usize = 16;

/// One-dimensional discrete measure: support values with non-negative weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Axis {
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let a = Self { values, weights };
        a.check()?;
        Ok(a)
    }

    /// All weights equal to `w`.
    pub fn uniform(values: Vec<f64>, w: f64) -> Result<Self> {
        let weights = vec![w; values.len()];
        Self::new(values, weights)
    }

    fn check(&self) -> Result<()> {
        if self.values.len() != self.weights.len() {
            return Err(Error::InvalidReference(format!(
                "axis has {} values but {} weights",
                self.values.len(),
                self.weights.len()
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidReference(format!("axis weight {w} is not a finite non-negative number")));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidReference("axis value is not finite".into()));
        }
        let mut s = self.values.clone();
        s.sort_by(f64::total_cmp);
        if s.windows(2).any(|p| p[0] == p[1]) {
            return Err(Error::InvalidReference("axis values are not pairwise distinct".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceKind {
    /// Product of per-coordinate discrete axes.
    Grid { axes: Vec<Axis> },
    /// Lebesgue measure on `[0, ∞)^n`, integrated by composite Gauss-Legendre
    /// on unit cells up to `u_max` plus an analytic tail.
    Lebesgue { u_max: f64, order: usize },
}

/// The reference measure `ν` together with the shape of the default space.
#[derive(Debug, Clone)]
pub struct ReferenceMeasure {
    n: usize,
    kind: ReferenceKind,
    marks: Option<Vec<Axis>>,
    ordered: bool,
    rule: Option<GlRule>,
}

#[derive(Debug, Clone)]
struct GlRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GlRule {
    fn new(order: usize) -> Self {
        let q = GaussLegendre::new(NonZeroUsize::new(order).expect("order is positive"));
        let (nodes, weights) = q.iter().map(|&(x, w)| (x, w)).unzip();
        Self { nodes, weights }
    }

    fn push_cell(&self, a: f64, b: f64, out: &mut Vec<(f64, f64)>) {
        let h = 0.5 * (b - a);
        let m = 0.5 * (b + a);
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            out.push((m + h * x, h * w));
        }
    }
}

impl ReferenceMeasure {
    /// Finite grid with one axis per default coordinate.
    pub fn grid(axes: Vec<Axis>, ordered: bool) -> Result<Self> {
        let n = axes.len();
        check_dimension(n)?;
        for a in &axes {
            a.check()?;
            if a.values.iter().any(|v| *v < 0.0) {
                return Err(Error::InvalidReference("default times must be non-negative".into()));
            }
        }
        Ok(Self { n, kind: ReferenceKind::Grid { axes }, marks: None, ordered, rule: None })
    }

    /// Finite grid sharing one axis across all `n` coordinates.
    pub fn shared_grid(n: usize, axis: Axis, ordered: bool) -> Result<Self> {
        Self::grid(vec![axis; n], ordered)
    }

    /// Lebesgue measure on `[0, ∞)^n` with truncation `u_max` and quadrature order.
    pub fn lebesgue(n: usize, u_max: f64, order: usize, ordered: bool) -> Result<Self> {
        check_dimension(n)?;
        if !(u_max.is_finite() && u_max > 0.0) {
            return Err(Error::InvalidReference(format!("u_max must be positive, got {u_max}")));
        }
        if order == 0 {
            return Err(Error::InvalidReference("quadrature order must be positive".into()));
        }
        Ok(Self {
            n,
            kind: ReferenceKind::Lebesgue { u_max, order },
            marks: None,
            ordered,
            rule: Some(GlRule::new(order)),
        })
    }

    /// Attaches a finite mark axis per coordinate; points become `(u_1..u_n, l_1..l_n)`.
    pub fn with_marks(mut self, marks: Vec<Axis>) -> Result<Self> {
        if marks.len() != self.n {
            return Err(Error::InvalidReference(format!(
                "expected {} mark axes, got {}",
                self.n,
                marks.len()
            )));
        }
        for a in &marks {
            a.check()?;
            if a.is_empty() {
                return Err(Error::EmptyGrid);
            }
        }
        self.marks = Some(marks);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> &ReferenceKind {
        &self.kind
    }

    pub fn is_grid(&self) -> bool {
        matches!(self.kind, ReferenceKind::Grid { .. })
    }

    pub fn ordered(&self) -> bool {
        self.ordered
    }

    pub fn has_marks(&self) -> bool {
        self.marks.is_some()
    }

    pub fn mark_axes(&self) -> Option<&[Axis]> {
        self.marks.as_deref()
    }

    /// Length of a point: `n`, or `2n` with marks.
    pub fn dim(&self) -> usize {
        if self.marks.is_some() {
            2 * self.n
        } else {
            self.n
        }
    }

    /// Enumerates the support of a grid reference.
    pub fn grid_points(&self) -> Result<GridPoints> {
        let ReferenceKind::Grid { axes } = &self.kind else {
            return Err(Error::UnsupportedReference);
        };
        let mut all: Vec<&Axis> = axes.iter().collect();
        if let Some(m) = &self.marks {
            all.extend(m.iter());
        }
        GridPoints::enumerate(self.n, &all, self.ordered)
    }

    /// Quadrature nodes `(value, weight)` for one coordinate over `[lo, hi]`,
    /// `hi = None` meaning `+∞`. Cells are cut at integers and `breaks`; the part
    /// above `u_max` on an unbounded range collapses to one node at the cut with
    /// weight `1/tail_rate`.
    pub fn coordinate_nodes(
        &self,
        lo: f64,
        hi: Option<f64>,
        breaks: &[f64],
        tail_rate: Option<f64>,
    ) -> Vec<(f64, f64)> {
        let ReferenceKind::Lebesgue { u_max, .. } = self.kind else {
            return Vec::new();
        };
        let rule = self.rule.as_ref().expect("lebesgue reference carries a rule");
        let lo = lo.max(0.0);
        let top = match hi {
            Some(h) => h,
            None => u_max.max(lo),
        };
        let mut out = Vec::new();
        if top > lo {
            let mut cuts = vec![lo, top];
            let mut k = lo.floor() + 1.0;
            while k < top {
                cuts.push(k);
                k += 1.0;
            }
            cuts.extend(breaks.iter().copied().filter(|b| *b > lo && *b < top));
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            for c in cuts.windows(2) {
                if c[1] - c[0] > 1e-14 {
                    rule.push_cell(c[0], c[1], &mut out);
                }
            }
        }
        if hi.is_none() {
            if let Some(r) = tail_rate {
                out.push((top, 1.0 / r));
            }
        }
        out
    }

    /// Discretizes a non-ordered Lebesgue reference into a product grid of its
    /// quadrature nodes (plus tail nodes), one axis per coordinate.
    pub fn discretize(&self, breaks: &[f64], tail_rates: &[Option<f64>]) -> Result<Self> {
        if self.is_grid() {
            return Ok(self.clone());
        }
        if self.ordered {
            return Err(Error::InvalidReference(
                "ordered Lebesgue references have no product discretization".into(),
            ));
        }
        let mut axes = Vec::with_capacity(self.n);
        for c in 0..self.n {
            let (values, weights) = self
                .coordinate_nodes(0.0, None, breaks, tail_rates.get(c).copied().flatten())
                .into_iter()
                .unzip();
            axes.push(Axis::new(values, weights)?);
        }
        let mut r = Self::grid(axes, false)?;
        if let Some(m) = &self.marks {
            r = r.with_marks(m.clone())?;
        }
        Ok(r)
    }
}

fn check_dimension(n: usize) -> Result<()> {
    if n == 0 || n > MAX_DEFAULTS {
        return Err(Error::InvalidReference(format!(
            "number of defaults must be in 1..={MAX_DEFAULTS}, got {n}"
        )));
    }
    Ok(())
}

/// Lookup key of a point: its exact bit pattern.
pub fn point_key(point: &[f64]) -> Vec<u64> {
    point.iter().map(|x| canonical_bits(*x)).collect()
}

/// Bit pattern with `-0.0` folded onto `0.0`.
pub fn canonical_bits(x: f64) -> u64 {
    if x == 0.0 {
        0
    } else {
        x.to_bits()
    }
}

/// Enumerated support of a grid reference.
#[derive(Debug, Clone)]
pub struct GridPoints {
    n: usize,
    dim: usize,
    coords: Vec<f64>,
    coord_weights: Vec<f64>,
    weights: Vec<f64>,
    lookup: HashMap<Vec<u64>, usize>,
}

impl GridPoints {
    fn enumerate(n: usize, axes: &[&Axis], ordered: bool) -> Result<Self> {
        let dim = axes.len();
        if axes.iter().any(|a| a.is_empty()) {
            return Err(Error::EmptyGrid);
        }
        let mut coords = Vec::new();
        let mut coord_weights = Vec::new();
        let mut weights = Vec::new();
        let mut idx = vec![0usize; dim];
        'outer: loop {
            let sorted = (1..n).all(|c| axes[c - 1].values[idx[c - 1]] <= axes[c].values[idx[c]]);
            if !ordered || sorted {
                let mut w = 1.0;
                for (c, &i) in idx.iter().enumerate() {
                    coords.push(axes[c].values[i]);
                    coord_weights.push(axes[c].weights[i]);
                    w *= axes[c].weights[i];
                }
                weights.push(w);
            }
            for c in (0..dim).rev() {
                idx[c] += 1;
                if idx[c] < axes[c].len() {
                    continue 'outer;
                }
                idx[c] = 0;
            }
            break;
        }
        if weights.is_empty() {
            return Err(Error::EmptyGrid);
        }
        let lookup = coords.chunks(dim).enumerate().map(|(k, p)| (point_key(p), k)).collect();
        Ok(Self { n, dim, coords, coord_weights, weights, lookup })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.coords[k * self.dim..(k + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks(self.dim)
    }

    /// `ν({u^(k)})`.
    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    /// Reference weight of the free coordinates of point `k` when the
    /// coordinates in `pinned_mask` (and their marks) are fixed.
    pub fn free_weight(&self, k: usize, pinned_mask: u32) -> f64 {
        let row = &self.coord_weights[k * self.dim..(k + 1) * self.dim];
        let mut w = 1.0;
        for c in 0..self.n {
            if pinned_mask & (1 << c) == 0 {
                w *= row[c];
                if self.dim > self.n {
                    w *= row[self.n + c];
                }
            }
        }
        w
    }

    pub fn index_of(&self, point: &[f64]) -> Option<usize> {
        self.lookup.get(&point_key(point)).copied()
    }
}

/// Survival window for free coordinates: `lower < u <= upper`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Window {
    /// No restriction.
    pub const ALL: Window = Window { lower: None, upper: None };

    /// Coordinates still alive at time `t`: `u > t` for `t > 0`, everything at `t = 0`.
    pub fn survival(t: f64) -> Self {
        Self { lower: if t > 0.0 { Some(t) } else { None }, upper: None }
    }

    pub fn contains(&self, u: f64) -> bool {
        self.lower.is_none_or(|l| u > l) && self.upper.is_none_or(|h| u <= h)
    }
}

/// Partial coordinate assignment: which defaults (and their marks) are fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct Pins {
    n: usize,
    mask: u32,
    times: Vec<f64>,
    marks: Option<Vec<f64>>,
}

impl Pins {
    pub fn none(n: usize, with_marks: bool) -> Self {
        Self { n, mask: 0, times: vec![f64::NAN; n], marks: with_marks.then(|| vec![f64::NAN; n]) }
    }

    /// Pins the coordinates of `mask` at their values in the full `point`.
    pub fn from_point(point: &[f64], n: usize, mask: u32) -> Self {
        let with_marks = point.len() == 2 * n;
        let mut p = Self::none(n, with_marks);
        for c in 0..n {
            if mask & (1 << c) != 0 {
                p.mask |= 1 << c;
                p.times[c] = point[c];
                if let Some(m) = &mut p.marks {
                    m[c] = point[n + c];
                }
            }
        }
        p
    }

    /// Pins coordinate `c` at time `u` (and mark `l` when marks are present).
    pub fn pin(mut self, c: usize, u: f64, l: Option<f64>) -> Result<Self> {
        if c >= self.n {
            return Err(Error::Dimension(format!("pin index {c} exceeds dimension {}", self.n)));
        }
        self.mask |= 1 << c;
        self.times[c] = u;
        match (&mut self.marks, l) {
            (Some(m), Some(l)) => m[c] = l,
            (None, None) => {}
            (Some(_), None) => return Err(Error::Dimension("marked pin needs a mark".into())),
            (None, Some(_)) => return Err(Error::Dimension("model has no marks".into())),
        }
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mask(&self) -> u32 {
        self.mask
    }

    pub fn is_pinned(&self, c: usize) -> bool {
        self.mask & (1 << c) != 0
    }

    pub fn time(&self, c: usize) -> Option<f64> {
        self.is_pinned(c).then(|| self.times[c])
    }

    pub fn mark(&self, c: usize) -> Option<f64> {
        if !self.is_pinned(c) {
            return None;
        }
        self.marks.as_ref().map(|m| m[c])
    }

    pub fn has_marks(&self) -> bool {
        self.marks.is_some()
    }

    pub fn count(&self) -> usize {
        self.mask.count_ones() as usize
    }

    /// Whether the full point agrees with every pin.
    pub fn matches(&self, point: &[f64]) -> bool {
        (0..self.n).filter(|&c| self.is_pinned(c)).all(|c| {
            point[c] == self.times[c]
                && self.marks.as_ref().is_none_or(|m| point[self.n + c] == m[c])
        })
    }

    /// Writes the pinned values into a full point buffer.
    pub fn fill(&self, point: &mut [f64]) {
        for c in 0..self.n {
            if self.is_pinned(c) {
                point[c] = self.times[c];
                if let Some(m) = &self.marks {
                    point[self.n + c] = m[c];
                }
            }
        }
    }
}
