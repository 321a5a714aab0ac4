//! Command dispatch and CSV report emission.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 failed validation or
//! failed check (the report is still written).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::conditional::{condexp_g, condexp_g_at, Method};
use crate::config::{load_model, load_payoff, CandidateConfig, LoadedModel, ModelConfig};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::martingale::{
    check_immersion, check_initial_enlargement_martingale, check_mtilde_condition, check_nonordered_characterization,
    check_ordered_characterization, construct_g_martingale, g_martingale_from_terminal, perturb_candidate,
    AdaptedProcess, ConstructorInputs, GMartingaleCandidate,
};
use crate::model::validate::default_tolerance;
use crate::model::{build_joint_measure, validate_density_model, DensityModel, NodeId, ObservationScheme, ValidationReport};
use crate::oracle::{sample_system, RNG_ALGORITHM};
use crate::prediction::{predict_generic, ClosedPrediction};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "MULTIDEFAULT_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "multidefault", version, about = "Conditional laws and G-martingales of multivariate default times")]
struct Cli {
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Fixture name or model config file.
    #[arg(long)]
    model: String,
    /// Output CSV path (default: `$MULTIDEFAULT_OUT_DIR/<command>.csv`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tolerance (default: 1e-9 on grids, 1e-6 with quadrature).
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Criterion {
    Mtilde,
    Ordered,
    Nonordered,
    Initial,
    Immersion,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check normalization, martingale and β conditions of a density model.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Prediction measure η_t on the atom of a realized default vector.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long)]
        t: f64,
        /// Comma-separated default times, followed by marks on marked models.
        #[arg(long)]
        realized: String,
    },
    /// E[Y_T(χ) | G_t] per node and observation atom.
    Condexp {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scheme: Option<String>,
        /// Payoff shorthand (`survive-2`, `survive1-1.5@2`, `first-S`, `last-S`, `count-S`) or TOML file.
        #[arg(long)]
        payoff: String,
        #[arg(long)]
        t: usize,
        #[arg(long, default_value = "direct")]
        method: String,
        /// Realized default vector selecting the regime on quadrature models.
        #[arg(long)]
        realized: Option<String>,
    },
    /// Time-0 price, both methods, with the oracle or a Monte Carlo estimate.
    Price {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long)]
        payoff: String,
        /// Monte Carlo draws added to the report (0 = none).
        #[arg(long, default_value_t = 0)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Verify a martingale criterion for a candidate.
    CheckMartingale {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scheme: Option<String>,
        /// `constructed[:seed]`, `perturbed[:seed]`, `constant:c`, `time`, `inverse-beta`, `alpha` or a TOML file.
        #[arg(long, default_value = "constructed")]
        candidate: String,
        #[arg(long, value_enum)]
        criterion: Criterion,
        /// Comma-separated check times (default: all).
        #[arg(long)]
        times: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Joint draws of (path, χ, observation history).
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        count: usize,
    },
    /// Write the built-in fixtures as model config files.
    Fixtures {
        /// Target directory (default: `$MULTIDEFAULT_OUT_DIR` or `.`).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Validate { .. } => "validate",
            Self::Predict { .. } => "predict",
            Self::Condexp { .. } => "condexp",
            Self::Price { .. } => "price",
            Self::CheckMartingale { .. } => "check-martingale",
            Self::Simulate { .. } => "simulate",
            Self::Fixtures { .. } => "fixtures",
        }
    }
}

/// Shortest round-trip decimal form.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

fn fmt_point(p: &[f64]) -> String {
    p.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(";")
}

/// CSV report with a `#` header block.
pub struct Report {
    command: &'static str,
    hash: String,
    seed: Option<u64>,
    tolerance: Option<f64>,
    notes: Vec<(String, String)>,
    columns: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Report {
    fn new(command: &'static str, hash: String, columns: &[&'static str]) -> Self {
        Self { command, hash, seed: None, tolerance: None, notes: Vec::new(), columns: columns.to_vec(), rows: Vec::new() }
    }

    fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.push((key.to_string(), value.to_string()));
    }

    fn row(&mut self, fields: Vec<String>) {
        debug_assert_eq!(fields.len(), self.columns.len());
        self.rows.push(fields);
    }

    fn render(&self) -> Result<String> {
        let mut head = String::new();
        let dash = || "-".to_string();
        let _ = writeln!(head, "# multidefault {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(head, "# command: {}", self.command);
        let _ = writeln!(head, "# config-sha256: {}", self.hash);
        let _ = writeln!(head, "# seed: {}", self.seed.map_or_else(dash, |s| s.to_string()));
        let _ = writeln!(head, "# tolerance: {}", self.tolerance.map_or_else(dash, fmt_f64));
        let _ = writeln!(head, "# rng: {RNG_ALGORITHM}");
        for (k, v) in &self.notes {
            let _ = writeln!(head, "# {k}: {v}");
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Config(format!("csv: {e}"));
        w.write_record(&self.columns).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        let body = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
        head.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
        Ok(head)
    }

    fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
        }
        std::fs::write(path, self.render()?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from)
}

fn out_path(out: &Option<PathBuf>, command: &str) -> PathBuf {
    out.clone().unwrap_or_else(|| out_dir().join(format!("{command}.csv")))
}

fn hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Scheme from the flag, the model config, or the model shape.
fn resolve_scheme(flag: &Option<String>, loaded: &LoadedModel) -> Result<ObservationScheme> {
    let s = match (flag, loaded.config.scheme) {
        (Some(s), _) => s.parse()?,
        (None, Some(s)) => s,
        (None, None) => default_scheme(&loaded.model),
    };
    s.check_compatible(loaded.model.reference())?;
    Ok(s)
}

/// Progressive observation matching the model shape.
pub fn default_scheme(model: &DensityModel) -> ObservationScheme {
    if model.has_marks() {
        ObservationScheme::MarkedCounting
    } else if model.n() == 1 {
        ObservationScheme::ProgressiveSingle
    } else if model.ordered() {
        ObservationScheme::OrderedCounting
    } else {
        ObservationScheme::NonorderedIndicators
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse().map_err(|_| Error::Config(format!("bad {what} entry `{p}`"))))
        .collect()
}

enum Outcome {
    Ok,
    Failed,
}

fn validation_report(report: &ValidationReport, hash: String) -> Report {
    let mut r = Report::new("validate", hash, &["check", "t", "node", "point", "value", "defect"]);
    r.tolerance = Some(report.tolerance);
    r.note("passed", report.passed);
    r.note("max-defect", fmt_f64(report.max_defect()));
    for row in &report.normalization {
        r.row(vec!["normalization".into(), row.t.to_string(), row.node.to_string(), String::new(), fmt_f64(row.integral), fmt_f64(row.defect)]);
    }
    for row in &report.martingale {
        r.row(vec!["martingale".into(), row.t.to_string(), row.node.to_string(), fmt_point(&row.point), String::new(), fmt_f64(row.defect)]);
    }
    for row in &report.beta {
        r.row(vec!["beta".into(), String::new(), String::new(), fmt_point(&row.point), fmt_f64(row.expectation), fmt_f64(row.defect)]);
    }
    r
}

/// Validated model, or the failing validation report written to `path`.
fn ready_model(loaded: LoadedModel, tol: f64, path: &Path, hash: &str) -> Result<std::result::Result<DensityModel, ()>> {
    if loaded.model.is_validated() {
        return Ok(Ok(loaded.model));
    }
    let report = validate_density_model(&loaded.model, tol)?;
    if report.passed {
        return Ok(Ok(loaded.model.into_validated(tol)?));
    }
    eprintln!("model failed validation (max defect {:e}); report written to {}", report.max_defect(), path.display());
    validation_report(&report, hash.to_string()).write(path)?;
    Ok(Err(()))
}

fn candidate<'a>(
    cfg: &CandidateConfig,
    model: &'a DensityModel,
    scheme: &ObservationScheme,
    seed: u64,
) -> Result<Box<dyn AdaptedProcess + 'a>> {
    let constructed = |seed: u64| -> Result<GMartingaleCandidate> {
        if model.n() == 2 && !model.has_marks() {
            construct_g_martingale(model, &ConstructorInputs::seeded(model, seed)?)
        } else {
            let g = model.require_grid()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let width = g.len();
            let leaves = model.tree().nodes_at(model.horizon());
            let first = leaves[0];
            let zeta: Vec<f64> = (0..leaves.len() * width).map(|_| rng.gen_range(0.5..1.5)).collect();
            g_martingale_from_terminal(model, scheme, model.horizon(), |d, k| zeta[(d - first) * width + k])
        }
    };
    Ok(match cfg {
        CandidateConfig::Constructed { seed: s } => Box::new(constructed(s.unwrap_or(seed))?),
        CandidateConfig::Perturbed { seed: s } => {
            let s = s.unwrap_or(seed);
            Box::new(perturb_candidate(&constructed(s)?, model, s)?.0)
        }
        CandidateConfig::Constant { value } => {
            let v = *value;
            Box::new(move |_: usize, _: NodeId, _: &[f64]| v)
        }
        CandidateConfig::Time => Box::new(|t: usize, _: NodeId, _: &[f64]| t as f64),
        CandidateConfig::InverseBeta => Box::new(move |_: usize, node: NodeId, x: &[f64]| 1.0 / model.beta(node, x)),
        CandidateConfig::Alpha => Box::new(move |_: usize, node: NodeId, x: &[f64]| model.alpha(node, x)),
        CandidateConfig::Table { rows } => {
            let g = model.require_grid()?;
            let mut c = GMartingaleCandidate::new(*scheme, model.n());
            for &(t, node, k, v) in rows {
                if k >= g.len() || node >= model.tree().len() || model.tree().node_depth(node) != t {
                    return Err(Error::Config(format!("candidate row ({t}, {node}, {k}) is off the model")));
                }
                c.set(t, node, g.point(k), v);
            }
            Box::new(c)
        }
    })
}

fn run(cli: Cli) -> Result<Outcome> {
    let name = cli.command.name();
    match cli.command {
        Command::Fixtures { dir } => {
            let dir = dir.unwrap_or_else(out_dir);
            std::fs::create_dir_all(&dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
            for fixture in fixtures::NAMES {
                let model = fixtures::by_name(fixture).expect("listed fixture");
                let mut cfg = ModelConfig::from_model(&model)?;
                cfg.scheme = Some(default_scheme(&model));
                let path = dir.join(format!("{fixture}.toml"));
                std::fs::write(&path, cfg.to_toml()?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                println!("{}", path.display());
            }
            Ok(Outcome::Ok)
        }
        Command::Validate { common } => {
            let loaded = load_model(&common.model)?;
            let tol = common.tol.unwrap_or_else(|| default_tolerance(&loaded.model));
            let report = validate_density_model(&loaded.model, tol)?;
            let path = out_path(&common.out, name);
            validation_report(&report, hash(&[name, &loaded.text])).write(&path)?;
            println!("validate: {} (max defect {:e}) -> {}", if report.passed { "pass" } else { "FAIL" }, report.max_defect(), path.display());
            Ok(if report.passed { Outcome::Ok } else { Outcome::Failed })
        }
        Command::Predict { common, scheme, t, realized } => {
            let loaded = load_model(&common.model)?;
            let scheme = resolve_scheme(&scheme, &loaded)?;
            let tol = common.tol.unwrap_or_else(|| default_tolerance(&loaded.model));
            let path = out_path(&common.out, name);
            let h = hash(&[name, &loaded.text, &scheme.to_string(), &fmt_f64(t), &realized]);
            let Ok(model) = ready_model(loaded, tol, &path, &h)? else { return Ok(Outcome::Failed) };
            let point: Vec<f64> = parse_list(&realized, "realized")?;
            if point.len() != model.dim() {
                return Err(Error::Dimension(format!("realized has {} entries, expected {}", point.len(), model.dim())));
            }
            let mut r = Report::new(name, h, &["section", "point", "value"]);
            r.tolerance = Some(tol);
            r.note("scheme", scheme);
            r.note("t", fmt_f64(t));
            if let Some(g) = model.grid() {
                let k = g.index_of(&point).ok_or_else(|| Error::InvalidRealization("realized point is not on the grid".into()))?;
                let pred = predict_generic(&model.prior()?, &scheme, model.reference(), t, k)?;
                let probs = pred.to_grid()?;
                r.row(vec!["mass-zero".into(), String::new(), pred.mass_zero().to_string()]);
                r.row(vec!["total".into(), String::new(), fmt_f64(probs.iter().sum())]);
                for (k, p) in probs.iter().enumerate() {
                    r.row(vec!["grid".into(), fmt_point(g.point(k)), fmt_f64(*p)]);
                }
            } else {
                let (pins, window) = crate::conditional::closed_regime(&model, &scheme, t, &point)?.ok_or_else(|| {
                    Error::IncompatibleScheme { scheme: scheme.to_string(), reason: "no closed form on quadrature models".into() }
                })?;
                let pred = ClosedPrediction::new(&model, pins, window);
                let n = model.n();
                r.row(vec!["regime".into(), String::new(), pred.regime.mask.to_string()]);
                for c in 0..n {
                    if let Some(u) = pred.pins.time(c) {
                        r.row(vec![format!("pin-{}", c + 1), String::new(), fmt_f64(u)]);
                    }
                }
                r.row(vec!["normalizer".into(), String::new(), fmt_f64(pred.normalizer)]);
                r.row(vec!["mass-zero".into(), String::new(), pred.mass_zero.to_string()]);
                r.row(vec!["total".into(), String::new(), fmt_f64(pred.expect_with(&[], |_| 1.0))]);
                let free: Vec<usize> = (0..n).filter(|&c| !pred.pins.is_pinned(c)).collect();
                let steps = [0.5, 1.0, 2.0, 4.0];
                let mut idx = vec![0usize; free.len()];
                loop {
                    let mut x = vec![0.0; model.dim()];
                    pred.pins.fill(&mut x);
                    for (j, &c) in free.iter().enumerate() {
                        x[c] = t + steps[idx[j]];
                    }
                    r.row(vec!["density".into(), fmt_point(&x), fmt_f64(pred.density(&x))]);
                    let mut j = 0;
                    while j < idx.len() {
                        idx[j] += 1;
                        if idx[j] < steps.len() {
                            break;
                        }
                        idx[j] = 0;
                        j += 1;
                    }
                    if j == idx.len() {
                        break;
                    }
                }
            }
            r.write(&path)?;
            println!("predict -> {}", path.display());
            Ok(Outcome::Ok)
        }
        Command::Condexp { common, scheme, payoff, t, method, realized } => {
            let loaded = load_model(&common.model)?;
            let scheme = resolve_scheme(&scheme, &loaded)?;
            let method: Method = method.parse()?;
            let tol = common.tol.unwrap_or_else(|| default_tolerance(&loaded.model));
            let path = out_path(&common.out, name);
            let (spec, payoff_text) = load_payoff(&payoff, &loaded.model)?;
            let h = hash(&[name, &loaded.text, &scheme.to_string(), &payoff_text, &t.to_string(), &format!("{method:?}"), realized.as_deref().unwrap_or("")]);
            let Ok(model) = ready_model(loaded, tol, &path, &h)? else { return Ok(Outcome::Failed) };
            let mut r = Report::new(name, h, &["node", "atom", "point", "value", "mass_zero"]);
            r.tolerance = Some(tol);
            r.note("scheme", scheme);
            r.note("payoff", spec.label());
            r.note("maturity", spec.maturity());
            r.note("t", t);
            r.note("method", format!("{method:?}").to_lowercase());
            if model.grid().is_some() && realized.is_none() {
                let out = condexp_g(&model, &scheme, &spec, t, method)?;
                for row in &out.rows {
                    r.row(vec![row.node.to_string(), row.atom.to_string(), fmt_point(&row.representative), fmt_f64(row.value), row.mass_zero.to_string()]);
                }
            } else {
                let point: Vec<f64> = match &realized {
                    Some(s) => parse_list(s, "realized")?,
                    None => vec![t as f64 + 1.0; model.n()],
                };
                let mask = crate::model::scheme::defaulted_mask(&point, model.n(), t as f64);
                for &node in model.tree().nodes_at(t) {
                    let v = condexp_g_at(&model, &scheme, &spec, node, &point, method)?;
                    r.row(vec![node.to_string(), format!("regime-{mask}"), fmt_point(&point), fmt_f64(v.value), v.mass_zero.to_string()]);
                }
            }
            r.write(&path)?;
            println!("condexp -> {}", path.display());
            Ok(Outcome::Ok)
        }
        Command::Price { common, scheme, payoff, count, seed } => {
            let loaded = load_model(&common.model)?;
            let scheme = resolve_scheme(&scheme, &loaded)?;
            let tol = common.tol.unwrap_or_else(|| default_tolerance(&loaded.model));
            let path = out_path(&common.out, name);
            let (spec, payoff_text) = load_payoff(&payoff, &loaded.model)?;
            let h = hash(&[name, &loaded.text, &scheme.to_string(), &payoff_text, &count.to_string()]);
            let Ok(model) = ready_model(loaded, tol, &path, &h)? else { return Ok(Outcome::Failed) };
            let mut r = Report::new(name, h, &["method", "value", "stderr", "mass_zero"]);
            r.tolerance = Some(tol);
            r.seed = Some(seed);
            r.note("scheme", scheme);
            r.note("payoff", spec.label());
            r.note("maturity", spec.maturity());
            r.note("discount", fmt_f64(spec.discount()));
            let d = spec.discount();
            let probe = vec![1.0; model.n()];
            let realized = if model.grid().is_some() { model.grid().map(|g| g.point(0).to_vec()).unwrap_or(probe) } else { probe };
            for method in [Method::Direct, Method::Bayes] {
                let v = condexp_g_at(&model, &scheme, &spec, 0, &realized, method)?;
                r.row(vec![format!("{method:?}").to_lowercase(), fmt_f64(d * v.value), String::new(), v.mass_zero.to_string()]);
            }
            if let Some(g) = model.grid() {
                let joint = build_joint_measure(&model, spec.maturity())?;
                let mut total = 0.0;
                for (i, &node) in joint.nodes().iter().enumerate() {
                    for k in 0..g.len() {
                        total += joint.mass_at(i, k) * spec.value(node, g.point(k));
                    }
                }
                r.row(vec!["oracle".into(), fmt_f64(d * total), String::new(), "false".into()]);
            }
            if count > 0 {
                let samples = sample_system(&model, &scheme, seed, count)?;
                let tree = model.tree();
                let (m, se) = samples.estimate(|draw| spec.value(tree.ancestor_at(draw.leaf, spec.maturity()), &draw.chi));
                r.row(vec!["monte-carlo".into(), fmt_f64(d * m), fmt_f64(d * se), "false".into()]);
            }
            r.write(&path)?;
            println!("price -> {}", path.display());
            Ok(Outcome::Ok)
        }
        Command::CheckMartingale { common, scheme, candidate: source, criterion, times, seed } => {
            let loaded = load_model(&common.model)?;
            let scheme = resolve_scheme(&scheme, &loaded)?;
            let tol = common.tol.unwrap_or(crate::martingale::TOL);
            let model_tol = default_tolerance(&loaded.model);
            let path = out_path(&common.out, name);
            let cfg = CandidateConfig::load(&source)?;
            let h = hash(&[name, &loaded.text, &scheme.to_string(), &format!("{cfg:?}"), &format!("{criterion:?}"), times.as_deref().unwrap_or("")]);
            let Ok(model) = ready_model(loaded, model_tol, &path, &h)? else { return Ok(Outcome::Failed) };
            let times: Vec<usize> = match &times {
                Some(s) => parse_list(s, "times")?,
                None => Vec::new(),
            };
            let cand = candidate(&cfg, &model, &scheme, seed)?;
            let crit = format!("{criterion:?}").to_lowercase();
            let (mut r, passed) = match criterion {
                Criterion::Mtilde => {
                    let rep = check_mtilde_condition(cand.as_ref(), &model, &scheme, &times, tol)?;
                    let mut r = Report::new(name, h, &["t", "maturity", "node", "atom", "lhs", "rhs", "defect", "direct_defect", "mass_zero"]);
                    r.note("max-defect", fmt_f64(rep.max_defect));
                    r.note("max-direct-defect", fmt_f64(rep.max_direct_defect));
                    r.note("direct-passed", rep.direct_passed);
                    for row in &rep.rows {
                        r.row(vec![row.t.to_string(), row.maturity.to_string(), row.node.to_string(), row.atom.to_string(), fmt_f64(row.lhs), fmt_f64(row.rhs), fmt_f64(row.defect), fmt_f64(row.direct_defect), row.mass_zero.to_string()]);
                    }
                    (r, rep.passed)
                }
                Criterion::Ordered | Criterion::Nonordered => {
                    let rep = if matches!(criterion, Criterion::Ordered) {
                        check_ordered_characterization(cand.as_ref(), &model, &times, tol)?
                    } else {
                        check_nonordered_characterization(cand.as_ref(), &model, &times, tol)?
                    };
                    let mut r = Report::new(name, h, &["condition", "t", "maturity", "node", "regime", "pins", "lhs", "rhs", "defect"]);
                    r.note("max-defect-a", fmt_f64(rep.max_defect_a));
                    r.note("max-defect-b", fmt_f64(rep.max_defect_b));
                    r.note("a-passed", rep.a_passed);
                    r.note("b-passed", rep.b_passed);
                    r.note("direct-defect", fmt_f64(rep.direct_defect));
                    let mut rows = rep.rows.clone();
                    rows.sort_by(|a, b| {
                        (a.condition, a.t, a.maturity, a.node, a.regime)
                            .cmp(&(b.condition, b.t, b.maturity, b.node, b.regime))
                            .then_with(|| a.pins.partial_cmp(&b.pins).expect("finite pins"))
                    });
                    for row in &rows {
                        r.row(vec![row.condition.to_string(), row.t.to_string(), row.maturity.to_string(), row.node.to_string(), row.regime.to_string(), fmt_point(&row.pins), fmt_f64(row.lhs), fmt_f64(row.rhs), fmt_f64(row.defect)]);
                    }
                    (r, rep.a_passed && rep.b_passed)
                }
                Criterion::Initial => {
                    let rep = check_initial_enlargement_martingale(cand.as_ref(), &model, &times, tol)?;
                    let mut r = Report::new(name, h, &["quantity", "defect", "passed"]);
                    r.note("consistent", rep.consistent());
                    r.row(vec!["parametrized".into(), fmt_f64(rep.parametrized_defect), rep.parametrized_passed.to_string()]);
                    r.row(vec!["h-martingale".into(), fmt_f64(rep.h_defect), rep.h_passed.to_string()]);
                    (r, rep.passed())
                }
                Criterion::Immersion => {
                    let rep = check_immersion(&model, &scheme, &times, seed, tol)?;
                    let mut r = Report::new(name, h, &["t", "maturity", "node", "atom", "lhs", "rhs", "defect"]);
                    r.note("condition-passed", rep.condition_passed);
                    r.note("f-martingale-defects", rep.f_martingale_defects.iter().map(|d| fmt_f64(*d)).collect::<Vec<_>>().join(";"));
                    for row in &rep.rows {
                        r.row(vec![row.t.to_string(), row.maturity.to_string(), row.node.to_string(), row.atom.to_string(), fmt_f64(row.lhs), fmt_f64(row.rhs), fmt_f64(row.defect)]);
                    }
                    (r, rep.passed)
                }
            };
            r.tolerance = Some(tol);
            r.seed = Some(seed);
            r.note("scheme", scheme);
            r.note("criterion", &crit);
            r.note("passed", passed);
            r.write(&path)?;
            println!("check-martingale {crit}: {} -> {}", if passed { "pass" } else { "FAIL" }, path.display());
            Ok(if passed { Outcome::Ok } else { Outcome::Failed })
        }
        Command::Simulate { common, scheme, seed, count } => {
            let loaded = load_model(&common.model)?;
            let scheme = resolve_scheme(&scheme, &loaded)?;
            let tol = common.tol.unwrap_or_else(|| default_tolerance(&loaded.model));
            let path = out_path(&common.out, name);
            let h = hash(&[name, &loaded.text, &scheme.to_string(), &count.to_string()]);
            let Ok(model) = ready_model(loaded, tol, &path, &h)? else { return Ok(Outcome::Failed) };
            let samples = sample_system(&model, &scheme, seed, count)?;
            let mut r = Report::new(name, h, &["draw", "leaf", "chi", "grid_index", "history"]);
            r.seed = Some(seed);
            r.note("scheme", scheme);
            r.note("count", count);
            for (i, d) in samples.draws.iter().enumerate() {
                let hist = d.history.iter().map(u32::to_string).collect::<Vec<_>>().join(";");
                r.row(vec![i.to_string(), d.leaf.to_string(), fmt_point(&d.chi), d.index.map_or_else(String::new, |k| k.to_string()), hist]);
            }
            r.write(&path)?;
            println!("simulate: {count} draws -> {}", path.display());
            Ok(Outcome::Ok)
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(|| run(cli)),
            Err(e) => {
                eprintln!("error: {e}");
                return 1;
            }
        },
        None => run(cli),
    };
    match result {
        Ok(Outcome::Ok) => 0,
        Ok(Outcome::Failed) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
