//! Empirical and population Gram matrices of a basis, concentration
//! experiments for i.i.d. and without-replacement designs, and the
//! `‖·‖₂ ≤ √(2/p₋)‖·‖_n` norm-transfer certificate.

use std::io::Write;

use faer::{Mat, MatRef};
use rand::seq::index;
use rand::Rng;
use serde::Serialize;

use crate::basis::{cj_constant, BasisFamily, DesignMeasure, Point, Quadrature, DEFAULT_GRID};
use crate::error::{Error, Result};
use crate::linalg::{extreme_eigenvalues, gram_t, op_norm_sym};
use crate::rng::sub_rng;

/// Quadrature size used for population Gram matrices.
pub const POPULATION_QUADRATURE: usize = 4096;
const CONCENTRATION_TAG: u64 = 0x6772_616d;
const NOREPLACE_TAG: u64 = 0x6e6f_7265;

/// `(Σ_n)_{jk} = (1/n) Σ_i u_j(x_i) u_k(x_i)`, bitwise symmetric.
pub fn empirical_gram(basis: &BasisFamily, j: usize, design: &[Point]) -> Result<Mat<f64>> {
    if j == 0 || design.is_empty() {
        return Err(Error::domain("empirical Gram needs J ≥ 1 and n ≥ 1"));
    }
    let u = basis.design_matrix(design, j)?;
    Ok(scaled_gram(u.as_ref(), 1.0 / design.len() as f64))
}

fn scaled_gram(u: MatRef<'_, f64>, scale: f64) -> Mat<f64> {
    let mut g = gram_t(u);
    for a in 0..g.nrows() {
        for b in 0..g.ncols() {
            g[(a, b)] *= scale;
        }
    }
    g
}

/// `Σ_{jk} = ∫ u_j u_k p₀ dμ` by quadrature.
pub fn population_gram(basis: &BasisFamily, j: usize, measure: &DesignMeasure) -> Result<Mat<f64>> {
    if j == 0 {
        return Err(Error::domain("population Gram needs J ≥ 1"));
    }
    let quad = Quadrature::for_space(measure.space, POPULATION_QUADRATURE.max(16 * j)).weighted(measure);
    let mut u = basis.design_matrix(&quad.points, j)?;
    for (i, w) in quad.weights.iter().enumerate() {
        let r = w.sqrt();
        for c in 0..j {
            u[(i, c)] *= r;
        }
    }
    Ok(gram_t(u.as_ref()))
}

#[derive(Debug, Clone)]
pub struct GramReport {
    pub j: usize,
    pub n: usize,
    pub sigma_n: Mat<f64>,
    pub sigma: Mat<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `p₋/2`.
    pub lambda_minus: f64,
    /// `p₊ + p₋/2`.
    pub lambda_plus: f64,
    pub p_minus: f64,
    pub p_plus: f64,
    /// `λ₋ ≤ λ_min(Σ_n)` and `λ_max(Σ_n) ≤ λ₊`.
    pub event: bool,
    /// `‖Σ_n − Σ‖`.
    pub op_deviation: f64,
}

impl GramReport {
    fn build(j: usize, n: usize, sigma_n: Mat<f64>, sigma: Mat<f64>, measure: &DesignMeasure) -> Result<Self> {
        let (p_minus, p_plus) = measure.bounds();
        let (lambda_min, lambda_max) = extreme_eigenvalues(sigma_n.as_ref())?;
        let lambda_minus = p_minus / 2.0;
        let lambda_plus = p_plus + p_minus / 2.0;
        let op_deviation = op_norm_sym((&sigma_n - &sigma).as_ref())?;
        Ok(GramReport {
            j,
            n,
            event: lambda_minus <= lambda_min && lambda_max <= lambda_plus,
            sigma_n,
            sigma,
            lambda_min,
            lambda_max,
            lambda_minus,
            lambda_plus,
            p_minus,
            p_plus,
            op_deviation,
        })
    }

    pub fn new(basis: &BasisFamily, j: usize, design: &[Point], measure: &DesignMeasure) -> Result<Self> {
        let sigma_n = empirical_gram(basis, j, design)?;
        let sigma = population_gram(basis, j, measure)?;
        Self::build(j, design.len(), sigma_n, sigma, measure)
    }

    /// Report with `Σ_n := Σ`, the infinite-sample limit.
    pub fn population(basis: &BasisFamily, j: usize, measure: &DesignMeasure) -> Result<Self> {
        let sigma = population_gram(basis, j, measure)?;
        Self::build(j, usize::MAX, sigma.clone(), sigma, measure)
    }

    /// The event `‖Σ_n − Σ‖ ≤ (p₋/2p₊)‖Σ‖`.
    pub fn deviation_event(&self) -> Result<bool> {
        let norm = op_norm_sym(self.sigma.as_ref())?;
        Ok(self.op_deviation <= self.p_minus / (2.0 * self.p_plus) * norm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConcentrationRow {
    pub replicate: usize,
    #[serde(rename = "J")]
    pub j: usize,
    pub n: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub op_deviation: f64,
    #[serde(rename = "event_E")]
    pub event_e: bool,
    /// Theorem-1 deviation event; not part of the CSV schema.
    #[serde(skip)]
    pub deviation_event: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConcentrationSummary {
    pub rows: Vec<ConcentrationRow>,
    /// Frequency of `‖Σ_n − Σ‖ ≤ (p₋/2p₊)‖Σ‖`.
    pub event_frequency: f64,
    /// Frequency of `λ_min(Σ_n) ≥ κ`.
    pub event_e_frequency: f64,
    /// `(0.5, 0.9, 0.99)` quantiles of `‖Σ_n − Σ‖`.
    pub deviation_quantiles: [f64; 3],
    /// `n / (C_J² J ln J)`; `+∞` for `J = 1`.
    pub n_ratio: f64,
}

/// A single replicate of the i.i.d. concentration experiment.
pub fn concentration_replicate<R: Rng + ?Sized>(
    basis: &BasisFamily,
    sigma: &Mat<f64>,
    measure: &DesignMeasure,
    n: usize,
    kappa: f64,
    replicate: usize,
    rng: &mut R,
) -> Result<ConcentrationRow> {
    let j = sigma.nrows();
    let design = measure.sample_n(n, rng);
    let report = GramReport::build(j, n, empirical_gram(basis, j, &design)?, sigma.clone(), measure)?;
    Ok(ConcentrationRow {
        replicate,
        j,
        n,
        lambda_min: report.lambda_min,
        lambda_max: report.lambda_max,
        op_deviation: report.op_deviation,
        event_e: report.lambda_min >= kappa,
        deviation_event: report.deviation_event()?,
    })
}

/// Monte-Carlo frequencies of the Gram events over `replicates` i.i.d. designs.
pub fn concentration_experiment(
    basis: &BasisFamily,
    j: usize,
    n: usize,
    measure: &DesignMeasure,
    replicates: usize,
    seed: u64,
) -> Result<ConcentrationSummary> {
    if replicates < 1 || n == 0 {
        return Err(Error::domain("need n ≥ 1 and at least one replicate"));
    }
    let sigma = population_gram(basis, j, measure)?;
    let rows = (0..replicates)
        .map(|r| {
            let mut rng = sub_rng(seed, CONCENTRATION_TAG ^ n as u64, r as u64);
            concentration_replicate(basis, &sigma, measure, n, 0.5, r, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    summarize_concentration(basis, rows)
}

pub fn summarize_concentration(basis: &BasisFamily, rows: Vec<ConcentrationRow>) -> Result<ConcentrationSummary> {
    let k = rows.len() as f64;
    let mut dev: Vec<f64> = rows.iter().map(|r| r.op_deviation).collect();
    dev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let j = rows[0].j;
    let n = rows[0].n;
    let cj = cj_constant(basis, j, DEFAULT_GRID)?;
    let n_ratio = n as f64 / (cj * cj * j as f64 * (j as f64).ln());
    Ok(ConcentrationSummary {
        event_frequency: rows.iter().filter(|r| r.deviation_event).count() as f64 / k,
        event_e_frequency: rows.iter().filter(|r| r.event_e).count() as f64 / k,
        deviation_quantiles: [quantile(&dev, 0.5), quantile(&dev, 0.9), quantile(&dev, 0.99)],
        n_ratio,
        rows,
    })
}

/// Nearest-rank quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let k = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[k - 1]
}

pub fn write_concentration_csv<W: Write>(mut w: W, rows: &[ConcentrationRow]) -> std::io::Result<()> {
    writeln!(w, "replicate,J,n,lambda_min,lambda_max,op_deviation,event_E")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.replicate, r.j, r.n, r.lambda_min, r.lambda_max, r.op_deviation, r.event_e
        )?;
    }
    Ok(())
}

/// `2N exp(−¼ min((nt/C²J)², nt/C²J))`.
pub fn without_replacement_bound(big_n: usize, n: usize, c2: f64, j: usize, t: f64) -> f64 {
    let r = n as f64 * t / (c2 * j as f64);
    2.0 * big_n as f64 * (-0.25 * (r * r).min(r)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailRow {
    pub t: f64,
    pub empirical_tail: f64,
    pub bound: f64,
}

/// A finite population of basis values, rows indexed by point.
#[derive(Debug, Clone)]
pub struct FinitePopulation {
    values: Mat<f64>,
    sigma_big: Mat<f64>,
    /// `max_i (1/J) Σ_j u_j(x_i)²`.
    pub c2: f64,
}

impl FinitePopulation {
    pub fn new(values: Mat<f64>) -> Result<Self> {
        let (big_n, j) = (values.nrows(), values.ncols());
        if big_n == 0 || j == 0 {
            return Err(Error::domain("population needs N ≥ 1 and J ≥ 1"));
        }
        let c2 = (0..big_n)
            .map(|i| (0..j).map(|c| values[(i, c)].powi(2)).sum::<f64>() / j as f64)
            .fold(0.0, f64::max);
        let all: Vec<usize> = (0..big_n).collect();
        let sigma_big = subset_gram(values.as_ref(), &all);
        Ok(FinitePopulation {
            values,
            sigma_big,
            c2,
        })
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> MatRef<'_, f64> {
        self.values.as_ref()
    }

    /// `‖Σ_n − Σ_N‖` for a uniform without-replacement sample of size `n`.
    pub fn sample_deviation<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<f64> {
        let mut idx = index::sample(rng, self.size(), n).into_vec();
        // sorted order makes the n = N sum bitwise identical to Σ_N
        idx.sort_unstable();
        let g = subset_gram(self.values.as_ref(), &idx);
        op_norm_sym((&g - &self.sigma_big).as_ref())
    }
}

fn subset_gram(values: MatRef<'_, f64>, idx: &[usize]) -> Mat<f64> {
    let j = values.ncols();
    let sub = Mat::<f64>::from_fn(idx.len(), j, |i, c| values[(idx[i], c)]);
    scaled_gram(sub.as_ref(), 1.0 / idx.len() as f64)
}

/// Empirical `P(‖Σ_n − Σ_N‖ > t)` against the explicit bound on a `t` grid.
pub fn without_replacement_experiment(
    population: &FinitePopulation,
    n: usize,
    replicates: usize,
    t_grid: &[f64],
    seed: u64,
) -> Result<Vec<TailRow>> {
    if n == 0 || n > population.size() {
        return Err(Error::domain(format!("sample size {n} must lie in 1..={}", population.size())));
    }
    if replicates == 0 {
        return Err(Error::domain("need at least one replicate"));
    }
    let devs = (0..replicates)
        .map(|r| population.sample_deviation(n, &mut sub_rng(seed, NOREPLACE_TAG, r as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(tail_table(population, n, &devs, t_grid))
}

pub fn tail_table(population: &FinitePopulation, n: usize, devs: &[f64], t_grid: &[f64]) -> Vec<TailRow> {
    t_grid
        .iter()
        .map(|&t| TailRow {
            t,
            empirical_tail: devs.iter().filter(|&&d| d > t).count() as f64 / devs.len() as f64,
            bound: without_replacement_bound(population.size(), n, population.c2, population.dim(), t),
        })
        .collect()
}

pub fn write_tail_csv<W: Write>(mut w: W, rows: &[TailRow]) -> std::io::Result<()> {
    writeln!(w, "t,empirical_tail,bound")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.t, r.empirical_tail, r.bound)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormTransfer {
    pub l2_norm: f64,
    pub empirical_norm: f64,
    /// `‖f‖₂ / ‖f‖_n`.
    pub factor: f64,
    /// `√(2/p₋)`.
    pub bound: f64,
    pub holds: bool,
}

/// `‖a‖ ≤ √(2/p₋)·√(aᵀΣ_n a)` for `f = Σ a_j u_j`, available under the event.
pub fn norm_transfer_certificate(report: &GramReport, a: &[f64]) -> Result<NormTransfer> {
    if !report.event {
        return Err(Error::CertificateUnavailable);
    }
    if a.len() != report.j {
        return Err(Error::domain(format!("coefficient vector has length {} ≠ J = {}", a.len(), report.j)));
    }
    let l2 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let sa = crate::linalg::mat_vec(report.sigma_n.as_ref(), a);
    let quad: f64 = sa.iter().zip(a).map(|(x, y)| x * y).sum();
    let empirical = quad.max(0.0).sqrt();
    let factor = l2 / empirical;
    let bound = (2.0 / report.p_minus).sqrt();
    Ok(NormTransfer {
        l2_norm: l2,
        empirical_norm: empirical,
        factor,
        bound,
        holds: l2 <= bound * empirical * (1.0 + 1e-12),
    })
}
