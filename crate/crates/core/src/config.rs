//! TOML configuration shared by all commands.
//!
//! ```toml
//! [reference]
//! kind = "grid"            # or "lebesgue" with u_max / order
//! n = 2
//! ordered = true
//! axes = [{ values = [0.5, 1.5, 2.5], weights = [1.0, 1.0, 1.0] }]  # one shared axis or one per name
//!
//! [tree]
//! depth = 2
//! edges = [[0, 0.4], [0, 0.6], [1, 0.3], [1, 0.7], [2, 0.5], [2, 0.5]]  # (parent, probability); omit for a chain
//!
//! [alpha]
//! family = "table"         # "exponential" (rates), "exchangeable-exponential" (rate)
//! values = [ ... ]         # row-major over (t, node, grid index); or `terminal` rows per leaf
//!
//! [scheme]
//! kind = "ordered-counting"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixtures;
use crate::model::{
    AlphaFamily, Axis, DensityModel, ObservationScheme, PayoffSpec, ReferenceKind, ReferenceMeasure, ScenarioTree,
};

fn default_order() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl AxisConfig {
    fn build(&self) -> Result<Axis> {
        Axis::new(self.values.clone(), self.weights.clone())
    }

    fn from_axis(a: &Axis) -> Self {
        Self { values: a.values.clone(), weights: a.weights.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReferenceConfig {
    Grid {
        n: usize,
        #[serde(default)]
        ordered: bool,
        axes: Vec<AxisConfig>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        marks: Option<Vec<AxisConfig>>,
    },
    Lebesgue {
        n: usize,
        u_max: f64,
        #[serde(default = "default_order")]
        order: usize,
        #[serde(default)]
        ordered: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    pub depth: usize,
    /// `(parent, probability)` per non-root node, in node order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<(usize, f64)>>,
    /// Same branching probabilities at every node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_probs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AlphaConfig {
    Exponential {
        rates: Vec<f64>,
    },
    ExchangeableExponential {
        rate: f64,
    },
    Table {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        values: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        terminal: Option<Vec<Vec<f64>>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub reference: ReferenceConfig,
    pub tree: TreeConfig,
    pub alpha: AlphaConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<ObservationScheme>,
}

impl ModelConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Builds the (unvalidated) model.
    pub fn build(&self) -> Result<DensityModel> {
        let reference = match &self.reference {
            ReferenceConfig::Grid { n, ordered, axes, marks } => {
                let axes: Vec<Axis> = axes.iter().map(AxisConfig::build).collect::<Result<_>>()?;
                let mut r = match axes.len() {
                    1 => ReferenceMeasure::shared_grid(*n, axes[0].clone(), *ordered)?,
                    len if len == *n => ReferenceMeasure::grid(axes, *ordered)?,
                    len => return Err(Error::Config(format!("{len} axes for {n} names"))),
                };
                if let Some(marks) = marks {
                    let mut m: Vec<Axis> = marks.iter().map(AxisConfig::build).collect::<Result<_>>()?;
                    if m.len() == 1 {
                        m = vec![m[0].clone(); *n];
                    }
                    r = r.with_marks(m)?;
                }
                r
            }
            ReferenceConfig::Lebesgue { n, u_max, order, ordered } => {
                ReferenceMeasure::lebesgue(*n, *u_max, *order, *ordered)?
            }
        };
        let t = &self.tree;
        let tree = match (&t.edges, &t.branch_probs) {
            (Some(_), Some(_)) => return Err(Error::Config("tree: give either edges or branch_probs".into())),
            (Some(edges), None) => ScenarioTree::from_edges(t.depth, edges)?,
            (None, Some(p)) => ScenarioTree::uniform(t.depth, p)?,
            (None, None) => ScenarioTree::chain(t.depth),
        };
        let alpha = match &self.alpha {
            AlphaConfig::Exponential { rates } => AlphaFamily::Exponential { rates: rates.clone() },
            AlphaConfig::ExchangeableExponential { rate } => AlphaFamily::ExchangeableExponential { rate: *rate },
            AlphaConfig::Table { values, terminal } => match (values, terminal) {
                (Some(v), None) => {
                    let width = reference.grid_points()?.len();
                    if v.len() != width * tree.len() {
                        return Err(Error::Config(format!(
                            "alpha table has {} values, expected {} nodes x {width} points",
                            v.len(),
                            tree.len()
                        )));
                    }
                    AlphaFamily::Table { values: v.chunks(width).map(<[f64]>::to_vec).collect() }
                }
                (None, Some(rows)) => AlphaFamily::from_terminal(&tree, rows.clone())?,
                _ => return Err(Error::Config("alpha table: give exactly one of values or terminal".into())),
            },
        };
        if let Some(s) = &self.scheme {
            s.check_compatible(&reference)?;
        }
        DensityModel::new(reference, tree, alpha)
    }

    /// Config describing `model`; custom density families cannot be written.
    pub fn from_model(model: &DensityModel) -> Result<Self> {
        let r = model.reference();
        let reference = match r.kind() {
            ReferenceKind::Grid { axes } => {
                let shared = axes.windows(2).all(|w| w[0] == w[1]);
                let axes = if shared { vec![AxisConfig::from_axis(&axes[0])] } else { axes.iter().map(AxisConfig::from_axis).collect() };
                ReferenceConfig::Grid {
                    n: r.n(),
                    ordered: r.ordered(),
                    axes,
                    marks: r.mark_axes().map(|m| m.iter().map(AxisConfig::from_axis).collect()),
                }
            }
            ReferenceKind::Lebesgue { u_max, order } => {
                ReferenceConfig::Lebesgue { n: r.n(), u_max: *u_max, order: *order, ordered: r.ordered() }
            }
        };
        let tree = model.tree();
        let chain = (0..tree.len()).all(|v| tree.children(v).len() <= 1);
        let tree_cfg = TreeConfig {
            depth: tree.depth(),
            edges: if chain { None } else { Some(tree.edges()) },
            branch_probs: None,
        };
        let alpha = match model.alpha_family() {
            AlphaFamily::Exponential { rates } => AlphaConfig::Exponential { rates: rates.clone() },
            AlphaFamily::ExchangeableExponential { rate } => AlphaConfig::ExchangeableExponential { rate: *rate },
            AlphaFamily::Table { values } => {
                AlphaConfig::Table { values: Some(values.iter().flatten().copied().collect()), terminal: None }
            }
            AlphaFamily::Custom { label, .. } => {
                return Err(Error::Config(format!("density family `{label}` has no config form")))
            }
        };
        Ok(Self { reference, tree: tree_cfg, alpha, scheme: None })
    }
}

/// A model source: a built-in fixture name or a config file.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: DensityModel,
    pub config: ModelConfig,
    /// Canonical config text, hashed into report headers.
    pub text: String,
}

/// Loads `source` (fixture name or TOML path). Config files come back
/// unvalidated; fixtures are already validated.
pub fn load_model(source: &str) -> Result<LoadedModel> {
    if let Some(model) = fixtures::by_name(source) {
        let config = ModelConfig::from_model(&model)?;
        let text = config.to_toml()?;
        return Ok(LoadedModel { model, config, text });
    }
    let path = Path::new(source);
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read model `{source}`: {e}")))?;
    let config = ModelConfig::parse(&text)?;
    let model = config.build()?;
    Ok(LoadedModel { model, config, text })
}

/// Claim description in a payoff file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PayoffKind {
    /// `1{u_c > level}`, coordinate 1-based.
    Survival { coordinate: usize, level: f64 },
    /// No default by `level`.
    FirstAfter { level: f64 },
    /// Some name still alive at `level`.
    LastAfter { level: f64 },
    /// Number of defaults by `level`.
    Count { level: f64 },
    /// Row-major over (terminal node, grid index).
    Table { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maturity: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discount: Option<f64>,
    #[serde(flatten)]
    pub kind: PayoffKind,
}

impl PayoffConfig {
    /// Parses a shorthand: `survive-S` (all names), `survive<c>-S`,
    /// `first-S`, `last-S`, `count-S`, each optionally suffixed `@T`.
    pub fn shorthand(s: &str) -> Option<Self> {
        let (body, maturity) = match s.split_once('@') {
            Some((b, m)) => (b, Some(m.parse().ok()?)),
            None => (s, None),
        };
        let (head, level) = body.rsplit_once('-')?;
        let level: f64 = level.parse().ok()?;
        let kind = match head {
            "survive" => PayoffKind::FirstAfter { level },
            "first" => PayoffKind::FirstAfter { level },
            "last" => PayoffKind::LastAfter { level },
            "count" => PayoffKind::Count { level },
            h => {
                let c: usize = h.strip_prefix("survive")?.parse().ok()?;
                PayoffKind::Survival { coordinate: c, level }
            }
        };
        Some(Self { maturity, discount: None, kind })
    }

    pub fn build(&self, model: &DensityModel) -> Result<PayoffSpec> {
        let n = model.n();
        let maturity = self.maturity.unwrap_or(model.horizon());
        if maturity > model.horizon() {
            return Err(Error::InvalidPayoff(format!("maturity {maturity} beyond horizon {}", model.horizon())));
        }
        let p = match &self.kind {
            PayoffKind::Survival { coordinate, level } => {
                if *coordinate == 0 || *coordinate > n {
                    return Err(Error::InvalidPayoff(format!("coordinate {coordinate} outside 1..={n}")));
                }
                PayoffSpec::survival(maturity, coordinate - 1, *level)
            }
            PayoffKind::FirstAfter { level } => PayoffSpec::first_default_after(maturity, n, *level),
            PayoffKind::LastAfter { level } => PayoffSpec::last_default_after(maturity, n, *level),
            PayoffKind::Count { level } => PayoffSpec::default_count(maturity, n, *level),
            PayoffKind::Table { values } => PayoffSpec::table(model, maturity, values.clone())?,
        };
        Ok(match self.discount {
            Some(d) => p.with_discount(d),
            None => p,
        })
    }
}

/// Loads a payoff shorthand or TOML file; returns the spec and the text hashed
/// into report headers.
pub fn load_payoff(source: &str, model: &DensityModel) -> Result<(PayoffSpec, String)> {
    if let Some(cfg) = PayoffConfig::shorthand(source) {
        return Ok((cfg.build(model)?, source.to_string()));
    }
    let text = std::fs::read_to_string(source)
        .map_err(|e| Error::Config(format!("`{source}` is neither a payoff shorthand nor a readable file: {e}")))?;
    let cfg: PayoffConfig = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    Ok((cfg.build(model)?, text))
}

/// Martingale candidate for `check-martingale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CandidateConfig {
    /// Two-name construction from seeded F-martingale inputs, or `E[ζ(χ) | G_t]`
    /// for a seeded terminal `ζ` otherwise.
    Constructed {
        #[serde(default)]
        seed: Option<u64>,
    },
    /// The constructed candidate with one seeded perturbation.
    Perturbed {
        #[serde(default)]
        seed: Option<u64>,
    },
    Constant {
        value: f64,
    },
    /// `M_t = t`.
    Time,
    /// `M_t(x) = 1 / β_t(x)`.
    InverseBeta,
    /// `M_t(x) = α_t(x)`.
    Alpha,
    /// Values per `(t, node, grid index)`, constant on observation atoms.
    Table {
        rows: Vec<(usize, usize, usize, f64)>,
    },
}

impl CandidateConfig {
    /// `constructed`, `perturbed`, `constant:c`, `time`, `inverse-beta`,
    /// `alpha`, or a TOML file.
    pub fn load(source: &str) -> Result<Self> {
        let (head, param) = match source.split_once(':') {
            Some((h, p)) => (h, Some(p)),
            None => (source, None),
        };
        let seed = |p: Option<&str>| -> Result<Option<u64>> {
            p.map(|s| s.parse().map_err(|_| Error::Config(format!("bad seed `{s}`")))).transpose()
        };
        Ok(match head {
            "constructed" => Self::Constructed { seed: seed(param)? },
            "perturbed" => Self::Perturbed { seed: seed(param)? },
            "constant" => Self::Constant {
                value: param
                    .unwrap_or("1")
                    .parse()
                    .map_err(|_| Error::Config(format!("bad constant in `{source}`")))?,
            },
            "time" => Self::Time,
            "inverse-beta" => Self::InverseBeta,
            "alpha" => Self::Alpha,
            _ => {
                let text = std::fs::read_to_string(source)
                    .map_err(|e| Error::Config(format!("unknown candidate `{source}`: {e}")))?;
                toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
            }
        })
    }
}
