//! Observation schemes: the filtration `N_t^E` on the default space and its atoms.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::reference::{canonical_bits, point_key, ReferenceMeasure};

/// Identifier of an `N_t^E` atom: equal keys mean the same atom.
pub type AtomKey = Vec<u64>;

/// How defaults are revealed over time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObservationScheme {
    /// `χ` known from time 0.
    Initial,
    /// One default observed when it happens.
    ProgressiveSingle,
    /// As progressive, plus knowledge of whether `τ <= t0`.
    Insider { t0: f64 },
    /// Default observed `ε` ahead of time.
    Advanced { epsilon: f64 },
    /// Default observed `ε` after it happens.
    Delayed { epsilon: f64 },
    /// Counting process of the successive defaults.
    OrderedCounting,
    /// Each name's default indicator.
    NonorderedIndicators,
    /// Counting process with marks revealed at each default.
    MarkedCounting,
}

impl fmt::Display for ObservationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Initial => write!(f, "initial"),
            Self::ProgressiveSingle => write!(f, "progressive-single"),
            Self::Insider { t0 } => write!(f, "insider:{t0}"),
            Self::Advanced { epsilon } => write!(f, "advanced:{epsilon}"),
            Self::Delayed { epsilon } => write!(f, "delayed:{epsilon}"),
            Self::OrderedCounting => write!(f, "ordered-counting"),
            Self::NonorderedIndicators => write!(f, "nonordered-indicators"),
            Self::MarkedCounting => write!(f, "marked-counting"),
        }
    }
}

impl FromStr for ObservationScheme {
    type Err = Error;

    /// Parses `kind` or `kind:param`, e.g. `insider:2`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, param) = match s.split_once([':', '=']) {
            Some((k, p)) => (k.trim(), Some(p.trim())),
            None => (s.trim(), None),
        };
        let num = |name: &str| -> Result<f64> {
            let p = param.ok_or_else(|| Error::Config(format!("scheme `{kind}` needs a {name} parameter")))?;
            p.parse::<f64>().map_err(|_| Error::Config(format!("bad {name} `{p}`")))
        };
        let scheme = match kind {
            "initial" => Self::Initial,
            "progressive-single" | "progressive" | "single" => Self::ProgressiveSingle,
            "insider" => Self::Insider { t0: num("t0")? },
            "advanced" => Self::Advanced { epsilon: num("epsilon")? },
            "delayed" => Self::Delayed { epsilon: num("epsilon")? },
            "ordered-counting" | "ordered" => Self::OrderedCounting,
            "nonordered-indicators" | "nonordered" => Self::NonorderedIndicators,
            "marked-counting" | "marked" => Self::MarkedCounting,
            other => return Err(Error::Config(format!("unknown scheme `{other}`"))),
        };
        scheme.check_params()?;
        Ok(scheme)
    }
}

/// Interval `lo .. hi` of observation thresholds, closed at `hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Thresholds {
    lo: f64,
    lo_closed: bool,
    hi: f64,
}

const CLASS_NONE: u64 = 0;
const CLASS_OPEN: u64 = 1;
const CLASS_HIT: u64 = 2;

impl ObservationScheme {
    fn check_params(&self) -> Result<()> {
        let p = match self {
            Self::Insider { t0 } => Some(*t0),
            Self::Advanced { epsilon } | Self::Delayed { epsilon } => Some(*epsilon),
            _ => None,
        };
        if let Some(p) = p {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::IncompatibleScheme {
                    scheme: self.to_string(),
                    reason: "parameter must be finite and non-negative".into(),
                });
            }
        }
        Ok(())
    }

    /// Whether the scheme observes exactly one default.
    pub fn is_single(&self) -> bool {
        matches!(
            self,
            Self::ProgressiveSingle | Self::Insider { .. } | Self::Advanced { .. } | Self::Delayed { .. }
        )
    }

    /// Checks parameters and compatibility with the shape of the default space.
    pub fn check_compatible(&self, reference: &ReferenceMeasure) -> Result<()> {
        self.check_params()?;
        let fail = |reason: &str| {
            Err(Error::IncompatibleScheme { scheme: self.to_string(), reason: reason.into() })
        };
        if self.is_single() && reference.n() != 1 {
            return fail("single-default schemes require n = 1");
        }
        if matches!(self, Self::MarkedCounting) && !reference.has_marks() {
            return fail("marked counting requires a marked model");
        }
        Ok(())
    }

    /// Whether defaults are revealed exactly at their time (progressive schemes),
    /// so that atoms are described by a set of defaulted coordinates.
    pub fn is_progressive(&self) -> bool {
        matches!(
            self,
            Self::ProgressiveSingle | Self::OrderedCounting | Self::NonorderedIndicators | Self::MarkedCounting
        )
    }

    fn thresholds(&self, t: f64) -> Vec<Thresholds> {
        let progressive = |t: f64| {
            if t > 0.0 {
                vec![Thresholds { lo: 0.0, lo_closed: false, hi: t }]
            } else {
                Vec::new()
            }
        };
        match *self {
            Self::Initial => Vec::new(),
            Self::Insider { t0 } => {
                let mut r = progressive(t);
                r.push(Thresholds { lo: t0, lo_closed: true, hi: t0 });
                r
            }
            Self::Advanced { epsilon } => vec![Thresholds { lo: epsilon, lo_closed: true, hi: t + epsilon }],
            Self::Delayed { epsilon } => progressive(t - epsilon),
            _ => progressive(t),
        }
    }

    /// Atom key of `point` in `N_t^E`. `n` is the number of default coordinates;
    /// marks, if present, follow at `point[n..2n]`.
    pub fn atom_key(&self, point: &[f64], n: usize, t: f64) -> AtomKey {
        if matches!(self, Self::Initial) {
            return point_key(point);
        }
        let r = self.thresholds(t);
        match self {
            Self::OrderedCounting => {
                let mut classes: Vec<[u64; 2]> = point[..n].iter().map(|u| class_of(*u, &r)).collect();
                classes.sort_unstable();
                classes.concat()
            }
            Self::MarkedCounting => {
                let mut classes: Vec<[u64; 3]> = (0..n)
                    .map(|c| {
                        let [g, flag] = class_of(point[c], &r);
                        let mark = if flag == CLASS_NONE || point.len() < 2 * n {
                            u64::MAX
                        } else {
                            canonical_bits(point[n + c])
                        };
                        [g, flag, mark]
                    })
                    .collect();
                classes.sort_unstable();
                classes.concat()
            }
            _ => point[..n].iter().flat_map(|u| class_of(*u, &r)).collect(),
        }
    }

    /// Whether the exact value `u` of a default coordinate is known at time `t`.
    pub fn revealed(&self, u: f64, t: f64) -> bool {
        if matches!(self, Self::Initial) {
            return true;
        }
        let [g, flag] = class_of(u, &self.thresholds(t));
        g == canonical_bits(u) && (flag == CLASS_HIT || (flag == CLASS_OPEN && u <= 0.0))
    }

    /// Whether `point` belongs to a positive-time regime where coordinate `c` is
    /// observed as defaulted (progressive schemes).
    pub fn defaulted(u: f64, t: f64) -> bool {
        t > 0.0 && u <= t
    }
}

/// Class of `u` under the threshold set `R`: the infimum of `{r ∈ R : r >= u}`
/// and whether it is attained. Two values share a class iff no threshold
/// separates them.
fn class_of(u: f64, r: &[Thresholds]) -> [u64; 2] {
    let mut best: Option<(f64, bool)> = None;
    for iv in r {
        if u > iv.hi {
            continue;
        }
        let cand = if u > iv.lo || (u == iv.lo && iv.lo_closed) {
            (u, true)
        } else {
            (iv.lo, iv.lo_closed)
        };
        best = match best {
            None => Some(cand),
            Some(b) if cand.0 < b.0 || (cand.0 == b.0 && cand.1 && !b.1) => Some(cand),
            keep => keep,
        };
    }
    match best {
        None => [u64::MAX, CLASS_NONE],
        Some((g, hit)) => [canonical_bits(g), if hit { CLASS_HIT } else { CLASS_OPEN }],
    }
}

/// Bit mask of coordinates defaulted by `t` under progressive observation.
pub fn defaulted_mask(point: &[f64], n: usize, t: f64) -> u32 {
    (0..n).filter(|&c| ObservationScheme::defaulted(point[c], t)).fold(0, |m, c| m | (1 << c))
}

/// First integer grid time at which a default at `u` is observed.
pub fn observation_time(u: f64) -> usize {
    (u.ceil().max(1.0)) as usize
}

/// Partition of the grid into `N_t^E` atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    atoms: Vec<Vec<usize>>,
    atom_of: Vec<usize>,
    keys: Vec<AtomKey>,
}

impl Partition {
    /// Groups grid indices by key; atoms are ordered by their smallest member.
    pub fn from_keys(keys: impl IntoIterator<Item = AtomKey>) -> Self {
        let mut index: HashMap<AtomKey, usize> = HashMap::new();
        let mut atoms: Vec<Vec<usize>> = Vec::new();
        let mut atom_keys = Vec::new();
        let mut atom_of = Vec::new();
        for (k, key) in keys.into_iter().enumerate() {
            let a = *index.entry(key.clone()).or_insert_with(|| {
                atoms.push(Vec::new());
                atom_keys.push(key);
                atoms.len() - 1
            });
            atoms[a].push(k);
            atom_of.push(a);
        }
        Self { atoms, atom_of, keys: atom_keys }
    }

    pub fn atoms(&self) -> &[Vec<usize>] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atom_of(&self, k: usize) -> usize {
        self.atom_of[k]
    }

    pub fn key(&self, atom: usize) -> &AtomKey {
        &self.keys[atom]
    }

    /// Whether every atom of `self` lies inside one atom of `coarser`.
    pub fn refines(&self, coarser: &Partition) -> bool {
        self.atoms.iter().all(|a| a.iter().all(|&k| coarser.atom_of(k) == coarser.atom_of(a[0])))
    }
}

/// Atoms of `N_t^E` on a grid reference.
pub fn observation_partition(
    scheme: &ObservationScheme,
    reference: &ReferenceMeasure,
    t: f64,
) -> Result<Partition> {
    scheme.check_compatible(reference)?;
    let grid = reference.grid_points()?;
    let n = reference.n();
    Ok(Partition::from_keys(grid.points().map(|p| scheme.atom_key(p, n, t))))
}
