//! The prediction process `η_t`: conditional law of the default variable
//! given its own observation history.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::scheme::defaulted_mask;
use crate::model::{DensityModel, ObservationScheme, Partition, Pins, ReferenceMeasure, Window};

/// Which coordinates are pinned and how many.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Regime {
    pub mask: u32,
    pub count: usize,
}

impl Regime {
    pub fn from_mask(mask: u32) -> Self {
        Self { mask, count: mask.count_ones() as usize }
    }
}

/// `η_t` as a probability vector over the grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPrediction {
    pub probabilities: Vec<f64>,
    /// Grid indices of the conditioning atom.
    pub atom: Vec<usize>,
    pub mass_zero: bool,
}

/// `η_t` as Dirac pins times a normalized density on the free coordinates.
#[derive(Debug, Clone)]
pub struct ClosedPrediction<'m> {
    model: &'m DensityModel,
    pub regime: Regime,
    pub pins: Pins,
    pub window: Window,
    /// `Z = ∫ α_0(pins, ·)` over the free window.
    pub normalizer: f64,
    pub mass_zero: bool,
}

#[derive(Debug, Clone)]
pub enum PredictionMeasure<'m> {
    Grid(GridPrediction),
    Closed(ClosedPrediction<'m>),
}

impl<'m> ClosedPrediction<'m> {
    /// Pinned and window-restricted prior, normalized.
    pub fn new(model: &'m DensityModel, pins: Pins, window: Window) -> Self {
        let normalizer = model.integrate_free(&pins, window, &[], |x| model.alpha(0, x));
        Self {
            model,
            regime: Regime::from_mask(pins.mask()),
            pins,
            window,
            normalizer,
            mass_zero: normalizer <= 0.0,
        }
    }

    /// Density of the free part with respect to `ν` on the free coordinates;
    /// zero off the pins or outside the window.
    pub fn density(&self, x: &[f64]) -> f64 {
        if self.mass_zero || !self.pins.matches(x) || !self.in_window(x) {
            return 0.0;
        }
        self.model.alpha(0, x) / self.normalizer
    }

    fn in_window(&self, x: &[f64]) -> bool {
        (0..self.model.n()).filter(|&c| !self.pins.is_pinned(c)).all(|c| self.window.contains(x[c]))
    }

    /// `∫ h dη_t`, with `breaks` marking discontinuities of `h`.
    pub fn expect_with(&self, breaks: &[f64], h: impl Fn(&[f64]) -> f64) -> f64 {
        if self.mass_zero {
            return 0.0;
        }
        self.model.integrate_free(&self.pins, self.window, breaks, |x| h(x) * self.model.alpha(0, x))
            / self.normalizer
    }

    /// Probability vector on a grid model.
    pub fn to_grid(&self) -> Result<Vec<f64>> {
        let g = self.model.require_grid()?;
        let mut out = vec![0.0; g.len()];
        if self.mass_zero {
            return Ok(out);
        }
        for (k, w) in self.model.free_support(&self.pins, self.window) {
            out[k] = w * self.model.alpha_k(0, k) / self.normalizer;
        }
        Ok(out)
    }
}

impl PredictionMeasure<'_> {
    pub fn mass_zero(&self) -> bool {
        match self {
            Self::Grid(g) => g.mass_zero,
            Self::Closed(c) => c.mass_zero,
        }
    }

    /// `∫ h dη_t` for a grid prediction, `h` given by grid index.
    pub fn expect_grid(&self, h: impl Fn(usize) -> f64) -> Result<f64> {
        Ok(self.to_grid()?.iter().enumerate().map(|(k, p)| p * h(k)).sum())
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            Self::Grid(g) => g.probabilities.iter().sum(),
            Self::Closed(c) => c.expect_with(&[], |_| 1.0),
        }
    }

    pub fn to_grid(&self) -> Result<Vec<f64>> {
        match self {
            Self::Grid(g) => Ok(g.probabilities.clone()),
            Self::Closed(c) => c.to_grid(),
        }
    }

    pub fn as_closed(&self) -> Option<&ClosedPrediction<'_>> {
        match self {
            Self::Closed(c) => Some(c),
            Self::Grid(_) => None,
        }
    }
}

/// Prior conditioned on the atom of a given partition containing `realized`.
pub fn condition_on_atom(prior: &[f64], partition: &Partition, realized: usize) -> GridPrediction {
    let atom = partition.atoms()[partition.atom_of(realized)].clone();
    let mass: f64 = atom.iter().map(|&k| prior[k]).sum();
    let mut probabilities = vec![0.0; prior.len()];
    if mass > 0.0 {
        for &k in &atom {
            probabilities[k] = prior[k] / mass;
        }
    }
    GridPrediction { probabilities, atom, mass_zero: mass <= 0.0 }
}

/// `η_t` by conditioning the prior on the `N_t^E`-atom of the realized point.
pub fn predict_generic(
    prior: &[f64],
    scheme: &ObservationScheme,
    reference: &ReferenceMeasure,
    t: f64,
    realized: usize,
) -> Result<PredictionMeasure<'static>> {
    let partition = crate::model::observation_partition(scheme, reference, t)?;
    let len = partition.atoms().iter().map(Vec::len).sum::<usize>();
    if prior.len() != len {
        return Err(Error::Dimension(format!("prior has {} entries, grid has {len}", prior.len())));
    }
    if prior.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::InvalidRealization("prior has negative entries".into()));
    }
    let s: f64 = prior.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidRealization(format!("prior sums to {s}")));
    }
    if realized >= len {
        return Err(Error::InvalidRealization(format!("grid index {realized} out of range")));
    }
    Ok(PredictionMeasure::Grid(condition_on_atom(prior, &partition, realized)))
}

fn require(cond: bool, scheme: &str, reason: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::IncompatibleScheme { scheme: scheme.into(), reason: reason.into() })
    }
}

fn check_times(values: &[f64]) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidRealization(format!("default time {v} is not a finite non-negative number")));
    }
    Ok(())
}

/// Pins and window of the single-default regime containing `tau`.
pub fn single_regime(model: &DensityModel, t: f64, tau: f64, t0: Option<f64>) -> Result<(Pins, Window)> {
    require(model.n() == 1, "progressive-single", "requires n = 1")?;
    require(!model.has_marks(), "progressive-single", "marks are not observed")?;
    check_times(&[tau])?;
    let pins = Pins::none(1, false);
    if ObservationScheme::defaulted(tau, t) {
        return Ok((pins.pin(0, tau, None)?, Window::ALL));
    }
    let mut window = Window::survival(t);
    if let Some(t0) = t0 {
        if t < t0 {
            if tau <= t0 {
                window.upper = Some(t0);
            } else {
                window.lower = Some(t0);
            }
        }
    }
    Ok((pins, window))
}

/// Pins and window of the ordered regime `E_t^i` containing `sigma`.
pub fn ordered_regime(model: &DensityModel, t: f64, sigma: &[f64], marks: Option<&[f64]>) -> Result<(Pins, Window)> {
    let n = model.n();
    if sigma.len() > n {
        return Err(Error::Dimension(format!("{} default times for n = {n}", sigma.len())));
    }
    check_times(sigma)?;
    if sigma.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidRealization("ordered default times must be non-decreasing".into()));
    }
    let mut pins = Pins::none(n, model.has_marks());
    for (c, &s) in sigma.iter().enumerate() {
        if !ObservationScheme::defaulted(s, t) {
            break;
        }
        pins = pins.pin(c, s, marks.map(|m| m[c]))?;
    }
    Ok((pins, Window::survival(t)))
}

/// Two observed defaults at the same time carrying different marks: the
/// counting process reveals the marks as a set, not which position holds
/// which, so no single pinned point describes the atom.
pub fn marked_tie(t: f64, sigma: &[f64], marks: &[f64]) -> bool {
    let seen: Vec<(f64, f64)> =
        sigma.iter().zip(marks).filter(|(s, _)| ObservationScheme::defaulted(**s, t)).map(|(s, l)| (*s, *l)).collect();
    seen.windows(2).any(|w| w[0].0 == w[1].0 && w[0].1 != w[1].1)
}

/// Pins and window of the non-ordered regime `E_t^I` containing `tau`.
pub fn nonordered_regime(model: &DensityModel, t: f64, tau: &[f64]) -> Result<(Pins, Window)> {
    let n = model.n();
    if tau.len() != n {
        return Err(Error::Dimension(format!("{} default times for n = {n}", tau.len())));
    }
    check_times(tau)?;
    let mask = defaulted_mask(tau, n, t);
    Ok((Pins::from_point(tau, n, mask), Window::survival(t)))
}

/// Closed form for one default, optionally with an insider cut at `t0`.
pub fn predict_single_default(
    model: &DensityModel,
    t: f64,
    tau: f64,
    t0: Option<f64>,
) -> Result<PredictionMeasure<'_>> {
    if tau < 0.0 {
        return Err(Error::InvalidRealization(format!("default time {tau} is negative")));
    }
    let (pins, window) = single_regime(model, t, tau, t0)?;
    Ok(PredictionMeasure::Closed(ClosedPrediction::new(model, pins, window)))
}

/// Closed form for ordered defaults: pins the first `i` observed defaults.
pub fn predict_ordered<'m>(model: &'m DensityModel, t: f64, sigma: &[f64]) -> Result<PredictionMeasure<'m>> {
    require(model.ordered(), "ordered-counting", "requires an ordered model")?;
    require(!model.has_marks(), "ordered-counting", "use the marked prediction for marked models")?;
    let (pins, window) = ordered_regime(model, t, sigma, None)?;
    Ok(PredictionMeasure::Closed(ClosedPrediction::new(model, pins, window)))
}

/// Closed form for non-ordered defaults: pins every name defaulted by `t`.
pub fn predict_nonordered<'m>(model: &'m DensityModel, t: f64, tau: &[f64]) -> Result<PredictionMeasure<'m>> {
    require(!model.ordered(), "nonordered-indicators", "requires a non-ordered model")?;
    require(!model.has_marks(), "nonordered-indicators", "marks are not observed")?;
    let (pins, window) = nonordered_regime(model, t, tau)?;
    Ok(PredictionMeasure::Closed(ClosedPrediction::new(model, pins, window)))
}

/// Closed form for the marked counting process: pins `(σ, L)` of every
/// observed default. `observed` lists `(σ_k, L_k)` in default order.
pub fn predict_marked<'m>(model: &'m DensityModel, t: f64, observed: &[(f64, f64)]) -> Result<PredictionMeasure<'m>> {
    require(model.has_marks(), "marked-counting", "requires a marked model")?;
    require(model.ordered() || model.n() == 1, "marked-counting", "requires an ordered model")?;
    if observed.iter().any(|(_, l)| *l == 0.0) {
        return Err(Error::InvalidRealization("marks must be non-zero".into()));
    }
    let sigma: Vec<f64> = observed.iter().map(|p| p.0).collect();
    let marks: Vec<f64> = observed.iter().map(|p| p.1).collect();
    if marked_tie(t, &sigma, &marks) {
        return Err(Error::InvalidRealization(
            "simultaneous defaults with different marks have no closed form; use the generic prediction".into(),
        ));
    }
    let (pins, window) = ordered_regime(model, t, &sigma, Some(&marks))?;
    Ok(PredictionMeasure::Closed(ClosedPrediction::new(model, pins, window)))
}
