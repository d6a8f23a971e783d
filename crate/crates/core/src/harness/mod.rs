//! Experiment orchestration: configuration, the per-kind runners and report
//! emission.

pub mod config;

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, ExperimentKind, TruthKind};

use crate::basis::{BasisFamily, Density, DesignMeasure, SpaceId, TestFunction};
use crate::error::{Error, Result};
use crate::experiment::{
    collect_rows, grid_cells, run_cells, Check, ExperimentResult, RateFit, Table,
};
use crate::gp::{gp_rate_experiment, GpRateSetup, VarianceIdentitySetup, VARIANCE_COLUMNS};
use crate::graph::{build_graph, circle_bandwidth, continuum_scale, norm_comparison, sample_cloud, ssl_contraction, SslSetup};
use crate::gram::{concentration_replicate, population_gram, tail_table, write_tail_csv, FinitePopulation};
use crate::kernel::{growth_ratio, mercer_sup_norm_report, nystrom_eigens, Decay, SpectralKernel};
use crate::rng::{cell_rng, sub_rng};
use crate::sieve::{contraction_statistic, CoefficientLaw, ContractionSetup, SievePrior};
use crate::stats::ols;

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
/// Environment variable naming the default output directory.
pub const OUTPUT_ENV: &str = "CONTRACTION_LAB_OUT";
pub const DEFAULT_OUTPUT: &str = "results";

const POPULATION_TAG: u64 = 0x706f_70;
const GRAPH_TAG: u64 = 0x6772_6170;

/// A finished run: the result plus any extra named CSV artifacts.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub result: ExperimentResult,
    pub extras: Vec<(String, String)>,
}

/// Runs one configured experiment. The config is validated first.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    let v = config.violations();
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    let mut extras = Vec::new();
    let mut result = match config.kind {
        ExperimentKind::GpRate => run_gp_rate(config)?,
        ExperimentKind::SieveRate => run_sieve_rate(config)?,
        ExperimentKind::GramConc => run_gram_conc(config)?,
        ExperimentKind::GramNoreplace => run_gram_noreplace(config, &mut extras)?,
        ExperimentKind::GraphSsl => run_graph_ssl(config, &mut extras)?,
        ExperimentKind::EigenfunBound => run_eigenfun(config)?,
        ExperimentKind::VarianceIdentity => run_variance_identity(config)?,
    };
    result.finalize();
    Ok(RunOutput {
        config: config.clone(),
        result,
        extras,
    })
}

fn measure(c: &ExperimentConfig, space: SpaceId) -> Result<DesignMeasure> {
    DesignMeasure::new(space, c.design)
}

fn truth(c: &ExperimentConfig, family: &BasisFamily) -> Result<TestFunction> {
    match c.truth.kind {
        TruthKind::PowerLaw => TestFunction::power_law(family.clone(), c.truth.s, c.truth.terms),
        TruthKind::Weierstrass => TestFunction::weierstrass(c.truth.s),
    }
}

fn run_gp_rate(c: &ExperimentConfig) -> Result<ExperimentResult> {
    let family = BasisFamily::new(c.basis);
    let setup = GpRateSetup {
        f0: truth(c, &family)?,
        family,
        alpha: c.kernel.alpha,
        s: c.truth.s,
        measure: measure(c, c.basis)?,
        sigma2: c.sigma2,
        rank_factor: c.kernel.rank_factor,
        seed: c.seed,
    };
    gp_rate_experiment(&setup, &c.n_grid, c.replicates, c.workers, c.fit.tolerance, c.fit.squared_tolerance)
}

fn run_sieve_rate(c: &ExperimentConfig) -> Result<ExperimentResult> {
    let family = BasisFamily::new(c.basis);
    let setup = ContractionSetup {
        f0: truth(c, &family)?,
        prior: SievePrior::new(family, c.prior.truncation, CoefficientLaw::StdGaussian, c.prior.j_max)?,
        measure: measure(c, c.basis)?,
        sigma2: c.sigma2,
        s: c.truth.s,
        m: c.posterior.radius,
        draws: c.posterior.draws,
        seed: c.seed,
    };
    contraction_statistic(&setup, &c.n_grid, c.replicates, c.workers, c.fit.tolerance)
}

pub const GRAM_COLUMNS: [&str; 8] = [
    "n",
    "replicate",
    "J",
    "lambda_min",
    "lambda_max",
    "op_deviation",
    "event_E",
    "deviation_event",
];

fn run_gram_conc(c: &ExperimentConfig) -> Result<ExperimentResult> {
    let basis = BasisFamily::new(c.basis);
    let mu = measure(c, c.basis)?;
    let sigma = population_gram(&basis, c.gram.j, &mu)?;
    let cells = grid_cells(&c.n_grid, c.replicates);
    let outcomes = run_cells(&cells, c.workers, |cell| {
        let mut rng = cell_rng(c.seed, cell.n, cell.replicate);
        let r = concentration_replicate(&basis, &sigma, &mu, cell.n, c.gram.kappa, cell.replicate, &mut rng)?;
        Ok(vec![vec![
            r.n.into(),
            r.replicate.into(),
            r.j.into(),
            r.lambda_min.into(),
            r.lambda_max.into(),
            r.op_deviation.into(),
            r.event_e.into(),
            r.deviation_event.into(),
        ]])
    });
    let mut result = collect_rows("gram_conc", &GRAM_COLUMNS, outcomes);
    let lmin = result.table.column("lambda_min")?;
    let ns = result.table.column("n")?;
    for &n in &c.n_grid {
        let vals: Vec<f64> = lmin.iter().zip(&ns).filter(|(_, &m)| m == n as f64).map(|(v, _)| *v).collect();
        if vals.is_empty() {
            continue;
        }
        let miss = vals.iter().filter(|&&v| v < c.gram.kappa).count() as f64 / vals.len() as f64;
        result.checks.push(Check::at_most(&format!("freq(lambda_min < kappa), n={n}"), miss, c.gram.max_miss));
    }
    Ok(result)
}

fn linspace(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![lo];
    }
    (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
}

fn run_gram_noreplace(c: &ExperimentConfig, extras: &mut Vec<(String, String)>) -> Result<ExperimentResult> {
    let basis = BasisFamily::new(c.basis);
    let mu = measure(c, c.basis)?;
    let points = mu.sample_n(c.gram.population, &mut sub_rng(c.seed, POPULATION_TAG, 0));
    let pop = FinitePopulation::new(basis.design_matrix(&points, c.gram.j)?)?;
    let cells = grid_cells(&c.n_grid, c.replicates);
    let outcomes = run_cells(&cells, c.workers, |cell| {
        let d = pop.sample_deviation(cell.n, &mut cell_rng(c.seed, cell.n, cell.replicate))?;
        Ok(vec![vec![cell.n.into(), cell.replicate.into(), d.into()]])
    });
    let mut result = collect_rows("gram_noreplace", &["n", "replicate", "op_deviation"], outcomes);
    let t_grid = linspace(c.gram.t_min, c.gram.t_max, c.gram.t_points);
    let devs = result.table.column("op_deviation")?;
    let ns = result.table.column("n")?;
    let mut csv = Vec::new();
    for &n in &c.n_grid {
        let d: Vec<f64> = devs.iter().zip(&ns).filter(|(_, &m)| m == n as f64).map(|(v, _)| *v).collect();
        if d.is_empty() {
            continue;
        }
        let rows = tail_table(&pop, n, &d, &t_grid);
        let violations = rows.iter().filter(|r| r.empirical_tail > r.bound).count();
        result
            .checks
            .push(Check::at_most(&format!("tail above bound, n={n}"), violations as f64, 0.0));
        writeln!(csv, "# n = {n}").map_err(|e| Error::numerical(e.to_string()))?;
        write_tail_csv(&mut csv, &rows).map_err(|e| Error::numerical(e.to_string()))?;
    }
    extras.push(("gram_noreplace_tail.csv".into(), String::from_utf8_lossy(&csv).into_owned()));
    Ok(result)
}

fn run_graph_ssl(c: &ExperimentConfig, extras: &mut Vec<(String, String)>) -> Result<ExperimentResult> {
    let setup = SslSetup {
        ambient: c.graph.ambient,
        cloud_factor: c.graph.cloud_factor,
        density: c.design,
        f0: truth(c, &BasisFamily::circle())?,
        sigma2: c.sigma2,
        s: c.truth.s,
        tau: c.graph.tau,
        truncation: c.prior.truncation,
        m: c.posterior.radius,
        draws: c.posterior.draws,
        seed: c.seed,
    };
    let mut result = ssl_contraction(&setup, &c.n_grid, c.replicates, c.workers, c.fit.tolerance)?;

    // norm transfer and spectrum on one reference graph
    let n = c.graph.check_n;
    let size = c.graph.cloud_factor * n;
    let h = circle_bandwidth(setup.resolution(n), n, c.graph.tau);
    let checked = sample_cloud(c.graph.ambient, size, n, c.design, &mut sub_rng(c.seed, GRAPH_TAG, 0))
        .and_then(|cloud| build_graph(&cloud, h));
    match checked {
        Ok(graph) => {
            let j = lemma_dimension(n);
            let nc = norm_comparison(&graph, j, n, c.graph.norm_replicates, c.graph.norm_vectors, c.seed, c.workers)?;
            result
                .checks
                .push(Check::at_least(&format!("norm transfer frequency, N={size} n={n} J={j}"), nc.event_frequency, 0.99));
            if c.design == Density::Uniform {
                let ratio = graph.eigenvalues()[1] * continuum_scale(h) / (4.0 * PI * PI);
                result
                    .checks
                    .push(Check::at_most(&format!("first eigenvalue relative gap, N={size}"), (ratio - 1.0).abs(), 0.2));
            }
            let mut csv = Vec::new();
            graph.write_spectrum_csv(&mut csv).map_err(|e| Error::numerical(e.to_string()))?;
            extras.push(("graph_spectrum.csv".into(), String::from_utf8_lossy(&csv).into_owned()));
        }
        Err(e) => {
            result.failures.push(format!("reference graph: {e}"));
            result.checks.push(Check::at_least("reference graph built", 0.0, 1.0));
        }
    }
    Ok(result)
}

/// `⌊n / ln^{1+3d/2} n⌋` for `d = 1`.
pub fn lemma_dimension(n: usize) -> usize {
    ((n as f64 / (n as f64).ln().powf(2.5)).floor() as usize).max(1)
}

fn run_eigenfun(c: &ExperimentConfig) -> Result<ExperimentResult> {
    let family = BasisFamily::new(c.basis);
    let d = family.dim() as f64;
    let kernel = SpectralKernel::new(family, Decay::Sobolev { alpha: c.kernel.alpha }, c.kernel.rank)?;
    let eig = nystrom_eigens(&kernel, &measure(c, c.basis)?, c.eigen.nodes, c.eigen.count)?;
    let rows = mercer_sup_norm_report(&eig, c.eigen.delta)?;
    let mut table = Table::new(&["l", "s_hat", "sup_norm", "ratio"]);
    for r in &rows {
        table.push(vec![r.l.into(), r.s_hat.into(), r.sup_norm.into(), r.ratio.into()]);
    }
    let mut result = ExperimentResult::new("eigenfun_bound", table);
    let g = growth_ratio(&rows, c.eigen.split);
    result.checks.push(Check::at_most("sup-norm growth ratio", g, c.eigen.max_growth));
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.l >= 2 && r.s_hat > 0.0)
        .map(|r| ((r.l as f64).ln(), r.s_hat.ln()))
        .unzip();
    // the constant mode l = 1 sits off the power law
    let fit = ols(&xs, &ys);
    let target = -(1.0 + 2.0 * c.kernel.alpha / d);
    result.checks.push(Check::at_most(
        &format!("|decay slope {:.4} - target {:.4}|", fit.slope, target),
        (fit.slope - target).abs(),
        c.fit.tolerance,
    ));
    Ok(result)
}

fn run_variance_identity(c: &ExperimentConfig) -> Result<ExperimentResult> {
    let setup = VarianceIdentitySetup {
        family: BasisFamily::new(c.basis),
        rank: c.variance.rank,
        max_trace_rank: c.variance.max_trace_rank,
        quadrature: c.variance.quadrature,
        kappa: c.gram.kappa,
        seed: c.seed,
    };
    let cells = grid_cells(&c.n_grid, c.replicates);
    let outcomes = run_cells(&cells, c.workers, |cell| setup.cell(cell).map(|r| vec![r]));
    let mut result = collect_rows("variance_identity", &VARIANCE_COLUMNS, outcomes);
    let max = |col: &str| -> Result<f64> { Ok(result.table.column(col)?.into_iter().fold(0.0, f64::max)) };
    let trace = max("trace_rel_err")?;
    let series = max("series_rel_err")?;
    let event = result.table.column("event_E")?;
    let holds = result.table.column("bound_holds")?;
    let under_e = event.iter().filter(|&&e| e > 0.5).count();
    let violations = event.iter().zip(&holds).filter(|(&e, &h)| e > 0.5 && h < 0.5).count();
    result.checks.push(Check::at_most("max trace identity relative error", trace, c.variance.trace_tol));
    result.checks.push(Check::at_most("max series vs quadrature relative error", series, c.variance.series_tol));
    result.checks.push(Check::at_most(
        &format!("variance bound violations under E ({under_e} instances)"),
        violations as f64,
        0.0,
    ));
    result.checks.push(Check::at_least("instances with event E", under_e as f64, 1.0));
    Ok(result)
}

/// JSON summary: config echo, fits, checks and the pass flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub version: String,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub pass: bool,
    pub reason: Option<String>,
    pub fits: Vec<RateFit>,
    pub checks: Vec<Check>,
    pub failed_cells: usize,
    pub total_cells: usize,
    pub failures: Vec<String>,
}

impl Summary {
    pub fn new(out: &RunOutput) -> Self {
        let r = &out.result;
        Summary {
            version: VERSION.into(),
            kind: out.config.kind,
            seed: out.config.seed,
            config: out.config.clone(),
            pass: r.pass,
            reason: r.reason.clone(),
            fits: r.fits.clone(),
            checks: r.checks.clone(),
            failed_cells: r.failed_cells,
            total_cells: r.total_cells,
            failures: r.failures.clone(),
        }
    }
}

/// Plot-ready `statistic, n, x, ln_mean, stderr` rows, where `x` is the
/// regressor of the fit.
pub fn write_fit_tsv<W: Write>(mut w: W, fits: &[RateFit]) -> std::io::Result<()> {
    writeln!(w, "statistic\tn\tx\tln_mean\tstderr")?;
    for f in fits {
        for p in &f.points {
            writeln!(w, "{}\t{}\t{}\t{}\t{}", f.statistic, p.n, p.regressor, p.ln_mean, p.stderr)?;
        }
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `<kind>.csv`, `<kind>.json`, `<kind>.tsv` and any extras into `dir`.
pub fn emit_report(out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let kind = out.config.kind.name();
    let mut written = Vec::new();

    let mut csv = Vec::new();
    out.result.table.write_csv(&mut csv).expect("write to memory");
    let p = dir.join(format!("{kind}.csv"));
    write_file(&p, &csv)?;
    written.push(p);

    let mut json = serde_json::to_vec_pretty(&Summary::new(out)).map_err(|e| Error::numerical(e.to_string()))?;
    json.push(b'\n');
    let p = dir.join(format!("{kind}.json"));
    write_file(&p, &json)?;
    written.push(p);

    let mut tsv = Vec::new();
    write_fit_tsv(&mut tsv, &out.result.fits).expect("write to memory");
    let p = dir.join(format!("{kind}.tsv"));
    write_file(&p, &tsv)?;
    written.push(p);

    for (name, body) in &out.extras {
        let p = dir.join(name);
        write_file(&p, body.as_bytes())?;
        written.push(p);
    }
    Ok(written)
}

/// Output directory: explicit flag, then config, then the environment, then `results/`.
pub fn output_dir(flag: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &config.output {
        return p.clone();
    }
    std::env::var_os(OUTPUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{fit_rate, Cell, Value};

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::defaults(kind);
        match kind {
            ExperimentKind::GpRate | ExperimentKind::SieveRate => {
                c.n_grid = vec![64, 128, 256, 512];
                c.replicates = 2;
            }
            ExperimentKind::GramConc => {
                c.n_grid = vec![2000];
                c.replicates = 5;
                c.gram.j = 10;
            }
            ExperimentKind::GramNoreplace => {
                c.replicates = 20;
                c.gram.population = 500;
                c.n_grid = vec![100];
            }
            ExperimentKind::GraphSsl => {
                c.n_grid = vec![32, 64, 128, 256];
                c.replicates = 1;
                c.graph.check_n = 100;
                c.graph.norm_replicates = 20;
            }
            ExperimentKind::EigenfunBound => {
                c.eigen.nodes = 256;
                c.eigen.count = 40;
                c.eigen.split = 20;
                c.kernel.rank = 81;
            }
            ExperimentKind::VarianceIdentity => {
                c.n_grid = vec![50, 100];
                c.replicates = 3;
                c.variance.quadrature = 512;
                c.variance.rank = 31;
            }
        }
        c
    }

    #[test]
    fn single_cell_run_is_degenerate() {
        let mut c = ExperimentConfig::defaults(ExperimentKind::GpRate);
        c.n_grid = vec![64];
        c.replicates = 1;
        let out = run(&c).unwrap();
        assert_eq!(out.result.table.rows.len(), 1);
        assert!(!out.result.pass);
        assert_eq!(out.result.fits[0].note.as_deref(), Some("insufficient points"));
    }

    #[test]
    fn every_kind_runs_and_is_deterministic() {
        for kind in ExperimentKind::ALL {
            let c = small(kind);
            let a = tempfile::tempdir().unwrap();
            let b = tempfile::tempdir().unwrap();
            let fa = emit_report(&run(&c).unwrap(), a.path()).unwrap();
            let fb = emit_report(&run(&c).unwrap(), b.path()).unwrap();
            assert_eq!(fa.len(), fb.len());
            for (x, y) in fa.iter().zip(&fb) {
                assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{kind} {x:?}");
            }
        }
    }

    #[test]
    fn worker_count_does_not_change_rows() {
        let mut c = small(ExperimentKind::SieveRate);
        let one = run(&c).unwrap().result.table;
        c.workers = 3;
        assert_eq!(run(&c).unwrap().result.table, one);
    }

    #[test]
    fn summary_round_trips_config() {
        let c = small(ExperimentKind::GramConc);
        let dir = tempfile::tempdir().unwrap();
        emit_report(&run(&c).unwrap(), dir.path()).unwrap();
        let s: Summary = serde_json::from_slice(&fs::read(dir.path().join("gram_conc.json")).unwrap()).unwrap();
        assert_eq!(s.config, c);
        assert_eq!(s.version, VERSION);
    }

    #[test]
    fn tsv_refit_reproduces_slope() {
        let out = run(&small(ExperimentKind::GpRate)).unwrap();
        let mut tsv = Vec::new();
        write_fit_tsv(&mut tsv, &out.result.fits).unwrap();
        let text = String::from_utf8(tsv).unwrap();
        for f in &out.result.fits {
            let (xs, ys): (Vec<f64>, Vec<f64>) = text
                .lines()
                .skip(1)
                .map(|l| l.split('\t').collect::<Vec<_>>())
                .filter(|c| c[0] == f.statistic)
                .map(|c| (c[2].parse::<f64>().unwrap(), c[3].parse::<f64>().unwrap()))
                .unzip();
            assert!((ols(&xs, &ys).slope - f.slope).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_statistics_report() {
        let table = Table::new(&["n", "replicate", "err"]);
        let mut result = collect_rows("gp_rate", &["n", "replicate", "err"], Vec::<(Cell, Result<Vec<Vec<Value>>>)>::new());
        assert_eq!(result.table, table);
        assert!(fit_rate(&result.table, "err", crate::experiment::Regressor::LnN, -0.5, 0.1).is_ok_and(|f| !f.pass));
        result.finalize();
        let out = RunOutput {
            config: ExperimentConfig::defaults(ExperimentKind::GpRate),
            result,
            extras: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        emit_report(&out, dir.path()).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("gp_rate.csv")).unwrap(), "n,replicate,err\n");
        let s: Summary = serde_json::from_slice(&fs::read(dir.path().join("gp_rate.json")).unwrap()).unwrap();
        assert!(!s.pass);
        assert!(s.reason.unwrap().contains("no statistics"));
    }

    #[test]
    fn io_errors_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let out = RunOutput {
            config: ExperimentConfig::defaults(ExperimentKind::GpRate),
            result: ExperimentResult::new("gp_rate", Table::new(&["n"])),
            extras: vec![],
        };
        match emit_report(&out, &blocker.join("sub")) {
            Err(Error::Io { path, .. }) => assert!(path.ends_with("sub")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_config_is_rejected_before_running() {
        let mut c = ExperimentConfig::defaults(ExperimentKind::SieveRate);
        c.replicates = 0;
        c.sigma2 = -1.0;
        match run(&c) {
            Err(Error::Config(v)) => assert_eq!(v.len(), 2),
            other => panic!("{other:?}"),
        }
    }
}
