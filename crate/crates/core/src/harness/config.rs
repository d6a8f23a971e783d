//! Flat `key = value` experiment configuration with dotted section names.
//!
//! ```text
//! # GP rate sweep
//! kind = gp_rate
//! seed = 7
//! n_grid = 256, 512, 1024, 2048
//! kernel.alpha = 0.4
//! design.density = linear
//! design.slope = 1
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::basis::{Density, SpaceId};
use crate::error::{Error, Result};
use crate::sieve::Truncation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    GpRate,
    SieveRate,
    GramConc,
    GramNoreplace,
    GraphSsl,
    EigenfunBound,
    VarianceIdentity,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::GpRate,
        ExperimentKind::SieveRate,
        ExperimentKind::GramConc,
        ExperimentKind::GramNoreplace,
        ExperimentKind::GraphSsl,
        ExperimentKind::EigenfunBound,
        ExperimentKind::VarianceIdentity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::GpRate => "gp_rate",
            ExperimentKind::SieveRate => "sieve_rate",
            ExperimentKind::GramConc => "gram_conc",
            ExperimentKind::GramNoreplace => "gram_noreplace",
            ExperimentKind::GraphSsl => "graph_ssl",
            ExperimentKind::EigenfunBound => "eigenfun_bound",
            ExperimentKind::VarianceIdentity => "variance_identity",
        }
    }

    /// Accepts `gp_rate` and `gp-rate`.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.replace('-', "_");
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Sections whose keys apply to this kind.
    fn sections(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::GpRate => &["basis", "design", "noise", "truth", "kernel", "fit"],
            ExperimentKind::SieveRate => &["basis", "design", "noise", "truth", "prior", "posterior", "fit"],
            ExperimentKind::GramConc => &["basis", "design", "gram"],
            ExperimentKind::GramNoreplace => &["basis", "design", "gram"],
            ExperimentKind::GraphSsl => &["design", "noise", "truth", "prior", "posterior", "graph", "fit"],
            ExperimentKind::EigenfunBound => &["basis", "design", "kernel", "eigen", "fit"],
            ExperimentKind::VarianceIdentity => &["basis", "variance", "gram"],
        }
    }

    /// Whether the kind sweeps `n_grid × replicates`.
    pub fn uses_replicates(self) -> bool {
        self != ExperimentKind::EigenfunBound
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthKind {
    PowerLaw,
    Weierstrass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthConfig {
    pub kind: TruthKind,
    pub s: f64,
    /// Series length for `power_law`.
    pub terms: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub alpha: f64,
    /// GP rank is `rank_factor · n^{1/(2α+d)}`.
    pub rank_factor: f64,
    /// Kernel rank for the eigenfunction study.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub truncation: Truncation,
    pub j_max: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorConfig {
    pub draws: usize,
    /// Ball radius multiplier `M`.
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramConfig {
    pub j: usize,
    pub kappa: f64,
    /// Largest tolerated frequency of `λ_min(Σ_n) < κ`.
    pub max_miss: f64,
    /// Finite population size `N`.
    pub population: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub t_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub ambient: usize,
    pub cloud_factor: usize,
    pub tau: f64,
    /// Labeled size of the norm-transfer and spectrum checks.
    pub check_n: usize,
    pub norm_replicates: usize,
    pub norm_vectors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenConfig {
    /// Quadrature nodes `m`.
    pub nodes: usize,
    /// Eigenfunctions `L`.
    pub count: usize,
    pub delta: f64,
    pub split: usize,
    pub max_growth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceConfig {
    pub rank: usize,
    pub max_trace_rank: usize,
    pub quadrature: usize,
    pub trace_tol: f64,
    pub series_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub tolerance: f64,
    pub squared_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub replicates: usize,
    pub n_grid: Vec<usize>,
    pub workers: usize,
    pub output: Option<PathBuf>,
    pub basis: SpaceId,
    pub design: Density,
    pub sigma2: f64,
    pub truth: TruthConfig,
    pub kernel: KernelConfig,
    pub prior: PriorConfig,
    pub posterior: PosteriorConfig,
    pub gram: GramConfig,
    pub graph: GraphConfig,
    pub eigen: EigenConfig,
    pub variance: VarianceConfig,
    pub fit: FitConfig,
}

fn pow2(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|k| 1usize << k).collect()
}

impl ExperimentConfig {
    /// Defaults for `kind`, at the scale of the acceptance runs.
    pub fn defaults(kind: ExperimentKind) -> Self {
        use ExperimentKind::*;
        let (replicates, n_grid) = match kind {
            GpRate => (50, pow2(8, 13)),
            SieveRate => (20, pow2(8, 13)),
            GramConc => (200, vec![5000]),
            GramNoreplace => (1000, vec![400]),
            GraphSsl => (3, pow2(6, 10)),
            EigenfunBound => (1, vec![]),
            VarianceIdentity => (125, vec![50, 100, 150, 200]),
        };
        let s = match kind {
            SieveRate | GraphSsl => 0.5,
            _ => 0.4,
        };
        ExperimentConfig {
            kind,
            seed: 1,
            replicates,
            n_grid,
            workers: 1,
            output: None,
            basis: SpaceId::CircleD1,
            design: match kind {
                EigenfunBound => Density::Linear { slope: 1.0 },
                _ => Density::Uniform,
            },
            sigma2: 0.25,
            truth: TruthConfig {
                kind: match kind {
                    GpRate => TruthKind::PowerLaw,
                    _ => TruthKind::Weierstrass,
                },
                s,
                terms: 4097,
            },
            kernel: KernelConfig {
                alpha: if kind == EigenfunBound { 0.5 } else { 0.4 },
                rank_factor: 8.0,
                rank: 401,
            },
            prior: PriorConfig {
                truncation: Truncation::Geometric { q: 0.9 },
                j_max: None,
            },
            posterior: PosteriorConfig {
                draws: if kind == GraphSsl { 10 } else { 20 },
                radius: 1.0,
            },
            gram: GramConfig {
                j: if kind == GramNoreplace { 20 } else { 50 },
                kappa: 0.5,
                max_miss: 0.0,
                population: 2000,
                t_min: 0.05,
                t_max: 5.0,
                t_points: 20,
            },
            graph: GraphConfig {
                ambient: 3,
                cloud_factor: 4,
                tau: 0.5,
                check_n: 500,
                norm_replicates: 500,
                norm_vectors: 100,
            },
            eigen: EigenConfig {
                nodes: 2048,
                count: 200,
                delta: 0.25,
                split: 100,
                max_growth: 2.0,
            },
            variance: VarianceConfig {
                rank: 100,
                max_trace_rank: 50,
                quadrature: 4096,
                trace_tol: 1e-8,
                series_tol: 1e-6,
            },
            fit: FitConfig {
                tolerance: match kind {
                    GpRate => 0.12,
                    EigenfunBound => 0.1,
                    _ => 0.15,
                },
                squared_tolerance: 0.15,
            },
        }
    }

    /// Parses config text; `expected` pins the kind when given by the caller.
    pub fn parse(text: &str, expected: Option<ExperimentKind>) -> Result<Self> {
        let mut errors = Vec::new();
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                errors.push(format!("line {}: expected `key = value`", no + 1));
                continue;
            };
            let key = k.trim().to_string();
            if entries.contains_key(&key) {
                errors.push(format!("line {}: duplicate key `{key}`", no + 1));
                continue;
            }
            entries.insert(key, (no + 1, v.trim().to_string()));
        }

        let kind = match (entries.get("kind"), expected) {
            (Some((line, v)), exp) => match ExperimentKind::parse(v) {
                Some(k) => {
                    if let Some(e) = exp {
                        if e != k {
                            errors.push(format!("line {line}: kind `{k}` does not match subcommand `{e}`"));
                        }
                    }
                    Some(k)
                }
                None => {
                    errors.push(format!("line {line}: unknown experiment kind `{v}`"));
                    exp
                }
            },
            (None, Some(e)) => Some(e),
            (None, None) => {
                errors.push("missing key `kind`".into());
                None
            }
        };
        let Some(kind) = kind else {
            return Err(Error::Config(errors));
        };
        let mut cfg = Self::defaults(kind);
        let mut p = Parser {
            entries,
            errors,
            kind,
        };
        p.apply(&mut cfg);
        let mut errors = p.finish();
        errors.extend(cfg.violations());
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors))
        }
    }

    /// Every semantic violation, in a stable order.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                v.push(msg.to_string());
            }
        };
        let k = self.kind;
        need(self.workers >= 1, "workers must be ≥ 1");
        if k.uses_replicates() {
            need(self.replicates >= 1, "replicates must be ≥ 1");
            need(!self.n_grid.is_empty(), "n_grid must not be empty");
            need(self.n_grid.iter().all(|&n| n >= 2), "n_grid entries must be ≥ 2");
            need(self.n_grid.windows(2).all(|w| w[0] < w[1]), "n_grid must be strictly increasing");
        }
        let secs = k.sections();
        if secs.contains(&"noise") {
            need(self.sigma2 > 0.0 && self.sigma2.is_finite(), "noise.sigma2 must be positive");
        }
        if secs.contains(&"truth") {
            need(self.truth.s > 0.0, "truth.s must be positive");
            need(self.truth.terms >= 1, "truth.terms must be ≥ 1");
        }
        if secs.contains(&"kernel") {
            need(self.kernel.alpha > 0.0, "kernel.alpha must be positive");
            need(self.kernel.rank_factor > 0.0, "kernel.rank_factor must be positive");
            need(self.kernel.rank >= 1, "kernel.rank must be ≥ 1");
        }
        if secs.contains(&"prior") {
            match self.prior.truncation {
                Truncation::Fixed { j } => need(j >= 1, "prior.j must be ≥ 1"),
                Truncation::Geometric { q } => need(q > 0.0 && q < 1.0, "prior.q must lie in (0, 1)"),
                Truncation::Poisson { rate } => need(rate > 0.0, "prior.rate must be positive"),
            }
            need(self.prior.j_max != Some(0), "prior.j_max must be ≥ 1");
        }
        if secs.contains(&"posterior") {
            need(self.posterior.draws >= 1, "posterior.draws must be ≥ 1");
            need(self.posterior.radius > 0.0, "posterior.radius must be positive");
        }
        if secs.contains(&"gram") {
            need(self.gram.kappa > 0.0, "gram.kappa must be positive");
            if k != ExperimentKind::VarianceIdentity {
                need(self.gram.j >= 1, "gram.j must be ≥ 1");
                need((0.0..=1.0).contains(&self.gram.max_miss), "gram.max_miss must lie in [0, 1]");
            }
            if k == ExperimentKind::GramNoreplace {
                let max_n = self.n_grid.iter().copied().max().unwrap_or(0);
                need(max_n <= self.gram.population, "n_grid entries must not exceed gram.population");
                need(self.gram.t_min > 0.0 && self.gram.t_max > self.gram.t_min, "need 0 < gram.t_min < gram.t_max");
                need(self.gram.t_points >= 1, "gram.t_points must be ≥ 1");
            }
        }
        if secs.contains(&"graph") {
            need(self.graph.ambient >= 2, "graph.ambient must be ≥ 2");
            need(self.graph.cloud_factor >= 1, "graph.cloud_factor must be ≥ 1");
            need(self.graph.tau >= 0.0, "graph.tau must be non-negative");
            need(self.graph.check_n >= 4, "graph.check_n must be ≥ 4");
            need(self.graph.norm_replicates >= 1 && self.graph.norm_vectors >= 1, "graph norm counts must be ≥ 1");
            need(self.n_grid.iter().all(|&n| n * self.graph.cloud_factor >= 16), "cloud size must be ≥ 16");
        }
        if secs.contains(&"eigen") {
            need(self.eigen.count >= 2, "eigen.count must be ≥ 2");
            need(self.eigen.nodes >= 4 * self.eigen.count, "eigen.nodes must be ≥ 4 · eigen.count");
            need(self.eigen.delta > 0.0, "eigen.delta must be positive");
            need(self.eigen.split >= 1 && self.eigen.split < self.eigen.count, "eigen.split must lie in 1..eigen.count");
            need(self.kernel.rank >= self.eigen.count, "kernel.rank must be ≥ eigen.count");
        }
        if secs.contains(&"variance") {
            need(self.variance.rank >= 1, "variance.rank must be ≥ 1");
            need(self.variance.max_trace_rank >= 1, "variance.max_trace_rank must be ≥ 1");
            need(self.variance.quadrature >= 16, "variance.quadrature must be ≥ 16");
            need(self.n_grid.iter().all(|&n| n <= crate::gp::DENSE_LIMIT), "variance_identity needs n ≤ 4096");
        }
        if secs.contains(&"fit") {
            need(self.fit.tolerance > 0.0, "fit.tolerance must be positive");
            need(self.fit.squared_tolerance > 0.0, "fit.squared_tolerance must be positive");
        }
        if secs.contains(&"design") {
            match self.design {
                Density::Linear { slope } => need(slope.abs() < 2.0, "design.slope must satisfy |slope| < 2"),
                Density::Cosine { amplitude } => need(amplitude.abs() < 1.0, "design.amplitude must satisfy |amplitude| < 1"),
                Density::Uniform => {}
            }
        }
        v
    }
}

struct Parser {
    entries: BTreeMap<String, (usize, String)>,
    errors: Vec<String>,
    kind: ExperimentKind,
}

impl Parser {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        let section = key.split('.').next().unwrap_or(key);
        let global = !key.contains('.') && key != "basis";
        let entry = self.entries.remove(key)?;
        if !global && !self.kind.sections().contains(&section) {
            self.errors
                .push(format!("line {}: key `{key}` does not apply to kind `{}`", entry.0, self.kind));
            return None;
        }
        Some(entry)
    }

    fn num<T: std::str::FromStr>(&mut self, key: &str, slot: &mut T) {
        if let Some((line, v)) = self.take(key) {
            match v.parse::<T>() {
                Ok(x) => *slot = x,
                Err(_) => self.errors.push(format!("line {line}: `{key}` has invalid value `{v}`")),
            }
        }
    }

    fn apply(&mut self, c: &mut ExperimentConfig) {
        self.entries.remove("kind");
        self.num("seed", &mut c.seed);
        self.num("workers", &mut c.workers);
        if !self.kind.uses_replicates() {
            for key in ["replicates", "n_grid"] {
                if let Some((line, _)) = self.entries.remove(key) {
                    self.errors
                        .push(format!("line {line}: key `{key}` does not apply to kind `{}`", self.kind));
                }
            }
        }
        self.num("replicates", &mut c.replicates);
        if let Some((line, v)) = self.take("n_grid") {
            let parsed: std::result::Result<Vec<usize>, _> =
                v.split(',').map(|x| x.trim().parse::<usize>()).collect();
            match parsed {
                Ok(g) => c.n_grid = g,
                Err(_) => self.errors.push(format!("line {line}: `n_grid` must be a comma-separated list of integers")),
            }
        }
        if let Some((_, v)) = self.take("output") {
            c.output = Some(PathBuf::from(v));
        }
        if let Some((line, v)) = self.take("basis") {
            match SpaceId::parse(&v) {
                Some(s) => c.basis = s,
                None => self.errors.push(format!("line {line}: unknown basis `{v}`")),
            }
        }
        self.design(c);
        self.num("noise.sigma2", &mut c.sigma2);
        if let Some((line, v)) = self.take("truth.kind") {
            match v.as_str() {
                "power_law" => c.truth.kind = TruthKind::PowerLaw,
                "weierstrass" => c.truth.kind = TruthKind::Weierstrass,
                _ => self.errors.push(format!("line {line}: unknown truth `{v}`")),
            }
        }
        self.num("truth.s", &mut c.truth.s);
        self.num("truth.terms", &mut c.truth.terms);
        self.num("kernel.alpha", &mut c.kernel.alpha);
        self.num("kernel.rank_factor", &mut c.kernel.rank_factor);
        self.num("kernel.rank", &mut c.kernel.rank);
        self.prior(c);
        self.num("posterior.draws", &mut c.posterior.draws);
        self.num("posterior.radius", &mut c.posterior.radius);
        self.num("gram.j", &mut c.gram.j);
        self.num("gram.kappa", &mut c.gram.kappa);
        self.num("gram.max_miss", &mut c.gram.max_miss);
        self.num("gram.population", &mut c.gram.population);
        self.num("gram.t_min", &mut c.gram.t_min);
        self.num("gram.t_max", &mut c.gram.t_max);
        self.num("gram.t_points", &mut c.gram.t_points);
        self.num("graph.ambient", &mut c.graph.ambient);
        self.num("graph.cloud_factor", &mut c.graph.cloud_factor);
        self.num("graph.tau", &mut c.graph.tau);
        self.num("graph.check_n", &mut c.graph.check_n);
        self.num("graph.norm_replicates", &mut c.graph.norm_replicates);
        self.num("graph.norm_vectors", &mut c.graph.norm_vectors);
        self.num("eigen.nodes", &mut c.eigen.nodes);
        self.num("eigen.count", &mut c.eigen.count);
        self.num("eigen.delta", &mut c.eigen.delta);
        self.num("eigen.split", &mut c.eigen.split);
        self.num("eigen.max_growth", &mut c.eigen.max_growth);
        self.num("variance.rank", &mut c.variance.rank);
        self.num("variance.max_trace_rank", &mut c.variance.max_trace_rank);
        self.num("variance.quadrature", &mut c.variance.quadrature);
        self.num("variance.trace_tol", &mut c.variance.trace_tol);
        self.num("variance.series_tol", &mut c.variance.series_tol);
        self.num("fit.tolerance", &mut c.fit.tolerance);
        self.num("fit.squared_tolerance", &mut c.fit.squared_tolerance);
    }

    fn design(&mut self, c: &mut ExperimentConfig) {
        let mut slope = match c.design {
            Density::Linear { slope } => slope,
            _ => 1.0,
        };
        let mut amplitude = 0.5;
        self.num("design.slope", &mut slope);
        self.num("design.amplitude", &mut amplitude);
        let name = self.take("design.density");
        if let Some((line, v)) = name {
            c.design = match v.as_str() {
                "uniform" => Density::Uniform,
                "linear" => Density::Linear { slope },
                "cosine" => Density::Cosine { amplitude },
                _ => {
                    self.errors.push(format!("line {line}: unknown density `{v}`"));
                    c.design
                }
            };
        } else if let Density::Linear { .. } = c.design {
            c.design = Density::Linear { slope };
        }
    }

    fn prior(&mut self, c: &mut ExperimentConfig) {
        let (mut q, mut rate, mut j) = (0.9, 5.0, 10usize);
        if let Truncation::Geometric { q: q0 } = c.prior.truncation {
            q = q0;
        }
        self.num("prior.q", &mut q);
        self.num("prior.rate", &mut rate);
        self.num("prior.j", &mut j);
        let mut j_max = 0usize;
        if self.entries.contains_key("prior.j_max") {
            self.num("prior.j_max", &mut j_max);
            c.prior.j_max = Some(j_max);
        }
        let rule = self.take("prior.truncation").map(|(l, v)| (l, v));
        c.prior.truncation = match rule.as_ref().map(|(l, v)| (*l, v.as_str())) {
            None | Some((_, "geometric")) => Truncation::Geometric { q },
            Some((_, "poisson")) => Truncation::Poisson { rate },
            Some((_, "fixed")) => Truncation::Fixed { j },
            Some((line, v)) => {
                self.errors.push(format!("line {line}: unknown truncation `{v}`"));
                c.prior.truncation
            }
        };
    }

    fn finish(mut self) -> Vec<String> {
        let leftover: Vec<(String, usize)> = std::mem::take(&mut self.entries)
            .into_iter()
            .map(|(k, (l, _))| (k, l))
            .collect();
        for (k, l) in leftover {
            self.errors.push(format!("line {l}: unknown key `{k}`"));
        }
        self.errors
    }
}
