//! Random-series priors `f = Σ_{j≤J} Z_j u_j` with fixed or random truncation,
//! their exact conjugate posteriors under Gaussian coefficients, and the
//! contraction experiment over an `n` grid.

use faer::{Mat, MatRef};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Geometric, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::basis::{BasisFamily, Density, DesignMeasure, Point, Quadrature, TestFunction};
use crate::error::{Error, Result};
use crate::experiment::{collect_rows, fit_rate, grid_cells, run_cells, Cell, ExperimentResult, Regressor, Value};
use crate::gp::RegressionData;
use crate::linalg::{gram_t, mat_t_vec, mat_vec, Cholesky};
use crate::rng::cell_rng;

/// Prior mass allowed above `J_max`.
pub const J_MAX_TAIL: f64 = 1e-10;
/// Largest `J_max` the conjugate path accepts.
pub const J_MAX_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Truncation {
    Fixed { j: usize },
    /// `π(j) = (1 − q) q^{j−1}`.
    Geometric { q: f64 },
    /// `J − 1 ~ Poisson(rate)`.
    Poisson { rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientLaw {
    StdGaussian,
    /// Density `e^{-|x|/scale}/(2 scale)`.
    Laplace { scale: f64 },
}

impl CoefficientLaw {
    /// `(c₁, c₂, c₃)` with `∫_{|x|>a} Ψ ≤ c₁ e^{-c₂ a^{c₃}}`.
    pub fn tail_constants(&self) -> (f64, f64, f64) {
        match *self {
            CoefficientLaw::StdGaussian => (1.0, 0.5, 2.0),
            CoefficientLaw::Laplace { scale } => (1.0, 1.0 / scale, 1.0),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            CoefficientLaw::StdGaussian => rng.sample(StandardNormal),
            CoefficientLaw::Laplace { scale } => {
                let e: f64 = rng.sample(Exp1);
                if rng.random::<bool>() {
                    scale * e
                } else {
                    -scale * e
                }
            }
        }
    }
}

/// Envelope `a₁e^{-b₁jL_j} ≤ π(j) ≤ a₂e^{-b₂jL_j}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
}

#[derive(Debug, Clone)]
pub struct SievePrior {
    basis: BasisFamily,
    truncation: Truncation,
    coefficients: CoefficientLaw,
    j_max: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SieveDraw {
    pub j: usize,
    pub coefficients: Vec<f64>,
}

impl SieveDraw {
    pub fn eval(&self, basis: &BasisFamily, x: Point) -> Result<f64> {
        let mut u = vec![0.0; self.j];
        basis.eval_all(x, &mut u)?;
        Ok(u.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum())
    }
}

impl SievePrior {
    /// `j_max = None` picks the smallest cap leaving prior mass `< 1e-10` above it.
    pub fn new(
        basis: BasisFamily,
        truncation: Truncation,
        coefficients: CoefficientLaw,
        j_max: Option<usize>,
    ) -> Result<Self> {
        match truncation {
            Truncation::Fixed { j } if j == 0 => return Err(Error::domain("fixed J must be ≥ 1")),
            Truncation::Geometric { q } if !(q > 0.0 && q < 1.0) => {
                return Err(Error::domain(format!("geometric q = {q} must lie in (0, 1)")))
            }
            Truncation::Poisson { rate } if !(rate > 0.0) => {
                return Err(Error::domain(format!("poisson rate {rate} must be positive")))
            }
            _ => {}
        }
        if let CoefficientLaw::Laplace { scale } = coefficients {
            if !(scale > 0.0) {
                return Err(Error::domain("laplace scale must be positive"));
            }
        }
        let j_max = match j_max {
            Some(j) if j == 0 => return Err(Error::domain("J_max must be ≥ 1")),
            Some(j) => j,
            None => default_j_max(truncation),
        };
        if let Some(cap) = basis.capacity() {
            if j_max > cap {
                return Err(Error::domain(format!("J_max {j_max} exceeds basis capacity {cap}")));
            }
        }
        Ok(SievePrior {
            basis,
            truncation,
            coefficients,
            j_max,
        })
    }

    pub fn basis(&self) -> &BasisFamily {
        &self.basis
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    pub fn j_max(&self) -> usize {
        self.j_max
    }

    /// Unnormalized `ln π(j)` for the untruncated rule.
    fn log_pmf_raw(&self, j: usize) -> f64 {
        match self.truncation {
            Truncation::Fixed { j: jf } => {
                if j == jf {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            Truncation::Geometric { q } => (1.0 - q).ln() + (j as f64 - 1.0) * q.ln(),
            Truncation::Poisson { rate } => {
                let k = j as f64 - 1.0;
                -rate + k * rate.ln() - ln_gamma(k + 1.0)
            }
        }
    }

    /// `π(j)` normalized over `1..=J_max`; index `j − 1`.
    pub fn pmf(&self) -> Vec<f64> {
        let logs: Vec<f64> = (1..=self.j_max).map(|j| self.log_pmf_raw(j)).collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }

    pub fn log_pmf(&self) -> Vec<f64> {
        self.pmf().into_iter().map(f64::ln).collect()
    }

    /// Exact `Σ_{J_n < j ≤ J_max} π(j)`.
    pub fn prior_tail_mass(&self, j_n: usize) -> f64 {
        if j_n >= self.j_max {
            return 0.0;
        }
        self.pmf()[j_n..].iter().sum()
    }

    /// Envelope constants fitted on `1..=J_max` for given rates `b₁ ≥ b₂`,
    /// with `L_j = 1` (geometric) or `ln j` (Poisson).
    pub fn envelope(&self, b1: f64, b2: f64) -> Result<Envelope> {
        let lj = |j: usize| match self.truncation {
            Truncation::Poisson { .. } => (j as f64).ln(),
            _ => 1.0,
        };
        if let Truncation::Fixed { .. } = self.truncation {
            return Err(Error::domain("a fixed truncation has no exponential envelope"));
        }
        let pmf = self.pmf();
        let mut a1 = f64::INFINITY;
        let mut a2: f64 = 0.0;
        for (k, p) in pmf.iter().enumerate() {
            let j = k + 1;
            let jl = j as f64 * lj(j);
            a1 = a1.min(p * (b1 * jl).exp());
            a2 = a2.max(p * (b2 * jl).exp());
        }
        Ok(Envelope { a1, b1, a2, b2 })
    }

    pub fn sample_j<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let j = match self.truncation {
            Truncation::Fixed { j } => j,
            Truncation::Geometric { q } => {
                let g = Geometric::new(1.0 - q).expect("validated q");
                1 + g.sample(rng) as usize
            }
            Truncation::Poisson { rate } => {
                let p = Poisson::new(rate).expect("validated rate");
                1 + p.sample(rng) as usize
            }
        };
        if j > self.j_max {
            log::debug!("prior draw J = {j} clamped to J_max = {}", self.j_max);
            self.j_max
        } else {
            j
        }
    }

    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> SieveDraw {
        let j = self.sample_j(rng);
        SieveDraw {
            j,
            coefficients: (0..j).map(|_| self.coefficients.sample(rng)).collect(),
        }
    }
}

fn default_j_max(t: Truncation) -> usize {
    match t {
        Truncation::Fixed { j } => j,
        Truncation::Geometric { q } => (J_MAX_TAIL.ln() / q.ln()).ceil().max(1.0) as usize,
        Truncation::Poisson { rate } => {
            // smallest J with P(J − 1 ≥ J) < 1e-10
            let mut cdf = 0.0;
            let mut k = 0usize;
            loop {
                cdf += (-rate + k as f64 * rate.ln() - ln_gamma(k as f64 + 1.0)).exp();
                k += 1;
                if 1.0 - cdf < J_MAX_TAIL || k > 1_000_000 {
                    return k.max(1);
                }
            }
        }
    }
}

/// Conjugate posterior of a Gaussian sieve prior, for every `J ≤ J_max` at once.
///
/// One Cholesky factor `L` of `B = I + UᵀU/σ²` serves all `J`: the leading
/// `J × J` block of `L` factors `B_J`, and with `z = L⁻¹UᵀY` the quadratic form
/// `hᵀB_J⁻¹h` equals `‖z_{1:J}‖²`.
#[derive(Debug)]
pub struct SieveFit {
    prior: SievePrior,
    u: Mat<f64>,
    chol: Cholesky,
    z: Vec<f64>,
    sigma2: f64,
    log_weights: Vec<f64>,
    weights: Vec<f64>,
}

pub fn fit_sieve(prior: &SievePrior, data: &RegressionData) -> Result<SieveFit> {
    let u = prior.basis.design_matrix(&data.x, prior.j_max)?;
    fit_sieve_with_design(prior, u, &data.y, data.sigma2)
}

/// Same as [`fit_sieve`] with basis values supplied directly (`n × J_max`).
pub fn fit_sieve_with_design(prior: &SievePrior, u: Mat<f64>, y: &[f64], sigma2: f64) -> Result<SieveFit> {
    if prior.coefficients != CoefficientLaw::StdGaussian {
        return Err(Error::domain("exact posterior needs Gaussian coefficients"));
    }
    if prior.j_max > J_MAX_LIMIT {
        return Err(Error::domain(format!("J_max {} exceeds {J_MAX_LIMIT}", prior.j_max)));
    }
    if u.ncols() != prior.j_max || u.nrows() != y.len() {
        return Err(Error::domain("basis matrix shape does not match prior and data"));
    }
    let n = y.len() as f64;
    let mut b = gram_t(u.as_ref());
    for i in 0..b.nrows() {
        for j in 0..b.ncols() {
            b[(i, j)] /= sigma2;
        }
        b[(i, i)] += 1.0;
    }
    let chol = Cholesky::factor(b.as_ref())?;
    let h = mat_t_vec(u.as_ref(), y);
    let z = chol.forward(&h);
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let l = chol.l();
    let log_prior = prior.log_pmf();
    let mut log_w = Vec::with_capacity(prior.j_max);
    let mut log_det = 0.0;
    let mut zz = 0.0;
    let base = -0.5 * n * (2.0 * std::f64::consts::PI * sigma2).ln();
    for j in 0..prior.j_max {
        log_det += 2.0 * l[(j, j)].ln();
        zz += z[j] * z[j];
        let quad = yy / sigma2 - zz / (sigma2 * sigma2);
        log_w.push(log_prior[j] + base - 0.5 * (log_det + quad));
    }
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::numerical("all truncation log-weights are -inf"));
    }
    let norm = top + log_w.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
    let log_weights: Vec<f64> = log_w.iter().map(|v| v - norm).collect();
    let weights = log_weights.iter().map(|v| v.exp()).collect();
    Ok(SieveFit {
        prior: prior.clone(),
        u,
        chol,
        z,
        sigma2,
        log_weights,
        weights,
    })
}

impl SieveFit {
    /// Posterior `P(J = j | data)`, index `j − 1`.
    pub fn truncation_posterior(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_truncation_posterior(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (k, w) in self.weights.iter().enumerate() {
            if *w > self.weights[best] {
                best = k;
            }
        }
        best + 1
    }

    /// Posterior mass on `{J > j_n}`.
    pub fn mass_above(&self, j_n: usize) -> f64 {
        self.weights.iter().skip(j_n).sum()
    }

    /// `B_J⁻¹UᵀY/σ²` for fixed `J`.
    pub fn conditional_mean(&self, j: usize) -> Result<Vec<f64>> {
        if j == 0 || j > self.prior.j_max {
            return Err(Error::domain(format!("J = {j} outside 1..={}", self.prior.j_max)));
        }
        let x = self.chol.backward(&self.z[..j]);
        Ok(x.into_iter().map(|v| v / self.sigma2).collect())
    }

    /// Posterior mean coefficients, averaged over `J` (length `J_max`).
    pub fn mean_coefficients(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.prior.j_max];
        for (k, w) in self.weights.iter().enumerate() {
            if *w < 1e-300 {
                continue;
            }
            let m = self.conditional_mean(k + 1).expect("index in range");
            for (o, v) in out.iter_mut().zip(&m) {
                *o += w * v;
            }
        }
        out
    }

    pub fn sample_posterior<R: Rng + ?Sized>(&self, rng: &mut R) -> SieveDraw {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut j = self.weights.len();
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                j = k + 1;
                break;
            }
        }
        self.sample_given_j(j, rng)
    }

    /// A coefficient draw from `N(B_J⁻¹h/σ², B_J⁻¹)`.
    pub fn sample_given_j<R: Rng + ?Sized>(&self, j: usize, rng: &mut R) -> SieveDraw {
        let mean = self.conditional_mean(j).expect("index in range");
        let eps: Vec<f64> = (0..j).map(|_| rng.sample(StandardNormal)).collect();
        let dev = self.chol.backward(&eps);
        SieveDraw {
            j,
            coefficients: mean.iter().zip(&dev).map(|(a, b)| a + b).collect(),
        }
    }

    /// Values of `Σ_{j≤J} a_j u_j` at the design points.
    pub fn at_design(&self, coefficients: &[f64]) -> Vec<f64> {
        let j = coefficients.len();
        mat_vec(self.u.subcols(0, j), coefficients)
    }

    pub fn design(&self) -> MatRef<'_, f64> {
        self.u.as_ref()
    }
}

/// Distance to the truth, in coefficient space for the reference measure or
/// by quadrature otherwise.
#[derive(Debug, Clone)]
pub struct L2Metric {
    mode: MetricMode,
}

#[derive(Debug, Clone)]
enum MetricMode {
    Coefficients { truth: Vec<f64>, tail: f64 },
    Quadrature { basis_values: Mat<f64>, truth_values: Vec<f64>, weights: Vec<f64> },
}

impl L2Metric {
    pub fn new(basis: &BasisFamily, f0: &TestFunction, measure: &DesignMeasure, j_max: usize, quad_size: usize) -> Result<Self> {
        if measure.density == Density::Uniform {
            if let Some(c) = f0.coefficients(basis, j_max) {
                let tail = (f0.l2_norm_sq() - c.iter().map(|v| v * v).sum::<f64>()).max(0.0);
                return Ok(L2Metric {
                    mode: MetricMode::Coefficients { truth: c, tail },
                });
            }
        }
        let q = Quadrature::for_space(measure.space, quad_size).weighted(measure);
        Ok(L2Metric {
            mode: MetricMode::Quadrature {
                basis_values: basis.design_matrix(&q.points, j_max)?,
                truth_values: f0.eval_many(&q.points),
                weights: q.weights,
            },
        })
    }

    /// `‖Σ a_j u_j − f₀‖_{L²(μ₀)}`.
    pub fn distance(&self, a: &[f64]) -> f64 {
        match &self.mode {
            MetricMode::Coefficients { truth, tail } => {
                let mut s = *tail;
                for (k, t) in truth.iter().enumerate() {
                    let v = a.get(k).copied().unwrap_or(0.0);
                    s += (v - t).powi(2);
                }
                s.sqrt()
            }
            MetricMode::Quadrature { basis_values, truth_values, weights } => {
                let f = mat_vec(basis_values.subcols(0, a.len()), a);
                f.iter()
                    .zip(truth_values)
                    .zip(weights)
                    .map(|((x, y), w)| w * (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt()
            }
        }
    }
}

/// Settings for the sieve contraction sweep.
#[derive(Debug, Clone)]
pub struct ContractionSetup {
    pub prior: SievePrior,
    pub f0: TestFunction,
    pub measure: DesignMeasure,
    pub sigma2: f64,
    /// Smoothness used for `ε_n` and the target exponent.
    pub s: f64,
    /// Ball radius multiplier `M`.
    pub m: f64,
    /// Posterior draws per cell.
    pub draws: usize,
    pub seed: u64,
}

pub const CONTRACTION_COLUMNS: [&str; 7] = [
    "n",
    "replicate",
    "J_drawn",
    "emp_norm_error",
    "l2_error",
    "post_mass_outside_ball",
    "tail_mass",
];

impl ContractionSetup {
    /// `ε_n = (n / ln n)^{-s/(2s+d)}`.
    pub fn epsilon(&self, n: usize) -> f64 {
        let d = self.prior.basis.dim() as f64;
        let n = n as f64;
        (n / n.ln()).powf(-self.s / (2.0 * self.s + d))
    }

    /// `J_n = ⌈4 n ε_n² / ln n⌉`.
    pub fn j_n(&self, n: usize) -> usize {
        let e = self.epsilon(n);
        (4.0 * n as f64 * e * e / (n as f64).ln()).ceil() as usize
    }

    pub fn target(&self) -> f64 {
        -self.s / (2.0 * self.s + self.prior.basis.dim() as f64)
    }

    /// One `(n, replicate)` cell; returns a contraction row.
    pub fn cell(&self, cell: Cell, metric: &L2Metric) -> Result<Vec<Value>> {
        let mut rng = cell_rng(self.seed, cell.n, cell.replicate);
        let data = RegressionData::synthetic(&self.f0, &self.measure, cell.n, self.sigma2, &mut rng)?;
        let fit = fit_sieve(&self.prior, &data)?;
        let mean = fit.mean_coefficients();
        let l2 = metric.distance(&mean);
        let fitted = fit.at_design(&mean);
        let truth: Vec<f64> = data.x.iter().map(|&x| self.f0.eval(x)).collect();
        let emp = (fitted
            .iter()
            .zip(&truth)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / cell.n as f64)
            .sqrt();
        let radius = self.m * self.epsilon(cell.n);
        let mut outside = 0usize;
        let mut first_j = 0;
        for d in 0..self.draws.max(1) {
            let draw = fit.sample_posterior(&mut rng);
            if d == 0 {
                first_j = draw.j;
            }
            if metric.distance(&draw.coefficients) > radius {
                outside += 1;
            }
        }
        let tail = fit.mass_above(self.j_n(cell.n));
        Ok(vec![
            cell.n.into(),
            cell.replicate.into(),
            first_j.into(),
            emp.into(),
            l2.into(),
            (outside as f64 / self.draws.max(1) as f64).into(),
            tail.into(),
        ])
    }
}

/// Contraction sweep over `n_grid × replicates`, fitting the posterior-mean
/// `L²(μ₀)` error against `ln(n / ln n)`.
pub fn contraction_statistic(
    setup: &ContractionSetup,
    n_grid: &[usize],
    replicates: usize,
    workers: usize,
    tolerance: f64,
) -> Result<ExperimentResult> {
    let metric = L2Metric::new(&setup.prior.basis, &setup.f0, &setup.measure, setup.prior.j_max, 4096)?;
    let cells = grid_cells(n_grid, replicates);
    let outcomes = run_cells(&cells, workers, |c| setup.cell(c, &metric).map(|r| vec![r]));
    let mut result = collect_rows("sieve_rate", &CONTRACTION_COLUMNS, outcomes);
    if !result.table.is_empty() {
        result.fits.push(fit_rate(
            &result.table,
            "l2_error",
            Regressor::LnNOverLnN,
            setup.target(),
            tolerance,
        )?);
    }
    result.finalize();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::SpaceId;
    use crate::gram::GramReport;
    use crate::rng::seeded;
    use statrs::function::erf::erfc;

    fn geometric(q: f64) -> SievePrior {
        SievePrior::new(BasisFamily::circle(), Truncation::Geometric { q }, CoefficientLaw::StdGaussian, None).unwrap()
    }

    fn data_for(f0: &TestFunction, n: usize, sigma2: f64, seed: u64) -> RegressionData {
        RegressionData::synthetic(f0, &DesignMeasure::uniform(SpaceId::CircleD1), n, sigma2, &mut seeded(seed)).unwrap()
    }

    #[test]
    fn fixed_one_is_a_constant_level() {
        let p = SievePrior::new(BasisFamily::circle(), Truncation::Fixed { j: 1 }, CoefficientLaw::StdGaussian, None).unwrap();
        let d = p.sample_prior(&mut seeded(1));
        assert_eq!(d.j, 1);
        let b = p.basis();
        assert_eq!(d.eval(b, Point::d1(0.1)).unwrap(), d.eval(b, Point::d1(0.9)).unwrap());
        assert_eq!(p.prior_tail_mass(1), 0.0);
        assert_eq!(p.prior_tail_mass(0), 1.0);
    }

    #[test]
    fn j_max_leaves_negligible_mass() {
        let p = geometric(0.9);
        let q: f64 = 0.9;
        assert!(q.powi(p.j_max() as i32) < 1e-10);
        assert!(q.powi(p.j_max() as i32 - 1) >= 1e-10);
        let pois = SievePrior::new(BasisFamily::circle(), Truncation::Poisson { rate: 5.0 }, CoefficientLaw::StdGaussian, None).unwrap();
        assert!(pois.j_max() > 10 && pois.j_max() < 60);
    }

    #[test]
    fn geometric_tail_closed_form() {
        let q: f64 = 0.8;
        let p = geometric(q);
        let jm = p.j_max() as i32;
        for jn in [0usize, 1, 5, 20, 50] {
            let oracle = (q.powi(jn as i32) - q.powi(jm)) / (1.0 - q.powi(jm));
            assert!((p.prior_tail_mass(jn) - oracle).abs() < 1e-12);
        }
        assert_eq!(p.prior_tail_mass(p.j_max()), 0.0);
    }

    #[test]
    fn geometric_draws_sit_inside_envelopes() {
        let q: f64 = 0.7;
        let p = geometric(q);
        let b = -q.ln();
        let env = p.envelope(1.1 * b, 0.9 * b).unwrap();
        let mut rng = seeded(3);
        let draws: Vec<usize> = (0..100_000).map(|_| p.sample_j(&mut rng)).collect();
        for j in 1..15usize {
            let emp = draws.iter().filter(|&&v| v > j).count() as f64 / 1e5;
            let lower: f64 = (j + 1..=p.j_max()).map(|i| env.a1 * (-env.b1 * i as f64).exp()).sum();
            let upper: f64 = (j + 1..=p.j_max()).map(|i| env.a2 * (-env.b2 * i as f64).exp()).sum();
            let slack = 4.0 * (emp * (1.0 - emp) / 1e5).sqrt() + 1e-5;
            assert!(emp >= lower - slack && emp <= upper + slack, "j={j}");
        }
    }

    #[test]
    fn poisson_envelope_uses_log_factor() {
        let p = SievePrior::new(BasisFamily::circle(), Truncation::Poisson { rate: 3.0 }, CoefficientLaw::StdGaussian, None).unwrap();
        let env = p.envelope(2.0, 0.5).unwrap();
        assert!(env.a1 > 0.0 && env.a2.is_finite());
        for (k, pi) in p.pmf().iter().enumerate() {
            let j = (k + 1) as f64;
            assert!(*pi >= env.a1 * (-2.0 * j * j.ln()).exp() * (1.0 - 1e-12));
            assert!(*pi <= env.a2 * (-0.5 * j * j.ln()).exp() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn gaussian_coefficient_tail() {
        let law = CoefficientLaw::StdGaussian;
        let mut rng = seeded(4);
        let hits = (0..1_000_000).filter(|_| law.sample(&mut rng).abs() > 3.0).count() as f64 / 1e6;
        let oracle = erfc(3.0 / 2f64.sqrt());
        assert!((oracle - 0.0027).abs() < 1e-4);
        assert!((hits - oracle).abs() < 4.0 * (oracle / 1e6).sqrt());
        let (c1, c2, c3) = law.tail_constants();
        assert_eq!(c3, 2.0);
        assert!(oracle <= c1 * (-c2 * 9.0f64).exp());
    }

    #[test]
    fn laplace_tail_constants() {
        let law = CoefficientLaw::Laplace { scale: 0.5 };
        let mut rng = seeded(5);
        let hits = (0..200_000).filter(|_| law.sample(&mut rng).abs() > 1.0).count() as f64 / 2e5;
        let (c1, c2, c3) = law.tail_constants();
        assert!((hits - c1 * (-c2 * 1.0f64.powf(c3)).exp()).abs() < 0.01);
        let p = SievePrior::new(BasisFamily::circle(), Truncation::Fixed { j: 3 }, law, None).unwrap();
        let data = data_for(&TestFunction::weierstrass(0.5).unwrap(), 20, 1.0, 1);
        assert!(fit_sieve(&p, &data).is_err());
    }

    #[test]
    fn single_support_point() {
        let p = SievePrior::new(BasisFamily::circle(), Truncation::Geometric { q: 0.5 }, CoefficientLaw::StdGaussian, Some(1)).unwrap();
        let fit = fit_sieve(&p, &data_for(&TestFunction::weierstrass(0.5).unwrap(), 30, 0.1, 2)).unwrap();
        assert_eq!(fit.truncation_posterior(), &[1.0]);
    }

    #[test]
    fn truncation_posterior_matches_dense_marginals() {
        let p = SievePrior::new(BasisFamily::circle(), Truncation::Geometric { q: 0.8 }, CoefficientLaw::StdGaussian, Some(12)).unwrap();
        let data = data_for(&TestFunction::weierstrass(0.6).unwrap(), 40, 0.3, 3);
        let fit = fit_sieve(&p, &data).unwrap();
        let w = fit.truncation_posterior();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // oracle: log N(Y; 0, U_JU_Jᵀ + σ²I) by dense Cholesky
        let u = p.basis().design_matrix(&data.x, 12).unwrap();
        let prior = p.pmf();
        let mut logs = Vec::new();
        for j in 1..=12 {
            let uj = u.subcols(0, j);
            let mut a = uj * uj.transpose();
            for i in 0..40 {
                a[(i, i)] += 0.3;
            }
            let ch = Cholesky::factor(a.as_ref()).unwrap();
            let alpha = ch.solve_vec(&data.y);
            let quad: f64 = alpha.iter().zip(&data.y).map(|(x, y)| x * y).sum();
            logs.push(prior[j - 1].ln() - 0.5 * (40.0 * (2.0 * std::f64::consts::PI).ln() + ch.log_det() + quad));
        }
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tot: f64 = logs.iter().map(|l| (l - top).exp()).sum();
        for (k, l) in logs.iter().enumerate() {
            assert!(((l - top).exp() / tot - w[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn posterior_mode_covers_truth_support() {
        let mut coef = vec![0.0; 8];
        coef[7] = 1.0;
        coef[0] = 0.5;
        coef[3] = -0.7;
        let f0 = TestFunction::series(BasisFamily::circle(), coef);
        let p = geometric(0.9);
        let mut ok = 0;
        for r in 0..50 {
            let fit = fit_sieve(&p, &data_for(&f0, 2000, 0.25, 100 + r)).unwrap();
            if fit.mode() >= 8 {
                ok += 1;
            }
        }
        assert!(ok >= 48, "{ok}");
    }

    #[test]
    fn conditional_mean_is_ridge() {
        let p = geometric(0.9);
        let data = data_for(&TestFunction::weierstrass(0.5).unwrap(), 60, 0.2, 4);
        let fit = fit_sieve(&p, &data).unwrap();
        let j = 9;
        let u = p.basis().design_matrix(&data.x, j).unwrap();
        let mut g = u.transpose() * &u;
        for i in 0..j {
            g[(i, i)] += 0.2;
        }
        let oracle = Cholesky::factor(g.as_ref()).unwrap().solve_vec(&mat_t_vec(u.as_ref(), &data.y));
        let got = fit.conditional_mean(j).unwrap();
        for (a, b) in got.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn no_information_limit() {
        let p = SievePrior::new(BasisFamily::circle(), Truncation::Fixed { j: 3 }, CoefficientLaw::StdGaussian, None).unwrap();
        let data = data_for(&TestFunction::weierstrass(0.5).unwrap(), 20, 1e12, 5);
        let fit = fit_sieve(&p, &data).unwrap();
        let mut rng = seeded(6);
        let v: Vec<f64> = (0..5000).map(|_| fit.sample_posterior(&mut rng).coefficients[1]).collect();
        assert!((crate::stats::variance(&v) - 1.0).abs() < 0.05);
    }

    #[test]
    fn draws_are_unbiased_at_design() {
        let p = SievePrior::new(BasisFamily::circle(), Truncation::Fixed { j: 5 }, CoefficientLaw::StdGaussian, None).unwrap();
        let data = data_for(&TestFunction::weierstrass(0.5).unwrap(), 30, 0.5, 7);
        let fit = fit_sieve(&p, &data).unwrap();
        let mean = fit.at_design(&fit.conditional_mean(5).unwrap());
        let mut rng = seeded(8);
        let draws: Vec<Vec<f64>> = (0..2000).map(|_| fit.at_design(&fit.sample_posterior(&mut rng).coefficients)).collect();
        for i in 0..5 {
            let col: Vec<f64> = draws.iter().map(|d| d[i]).collect();
            let m = crate::stats::mean(&col);
            assert!((m - mean[i]).abs() < 3.0 * crate::stats::std_error(&col));
        }
    }

    #[test]
    fn zero_truth_concentrates() {
        let f0 = TestFunction::series(BasisFamily::circle(), vec![0.0]);
        let setup = ContractionSetup {
            prior: geometric(0.5),
            f0,
            measure: DesignMeasure::uniform(SpaceId::CircleD1),
            sigma2: 1e-4,
            s: 0.5,
            m: 1.0,
            draws: 50,
            seed: 9,
        };
        let metric = L2Metric::new(&setup.prior.basis, &setup.f0, &setup.measure, setup.prior.j_max(), 4096).unwrap();
        let row = setup.cell(Cell { n: 4096, replicate: 0 }, &metric).unwrap();
        assert!(row[5].as_f64() <= 0.05);
    }

    #[test]
    fn quadrature_metric_matches_coefficients() {
        let b = BasisFamily::circle();
        let f0 = TestFunction::power_law(b.clone(), 1.0, 101).unwrap();
        let uni = DesignMeasure::uniform(SpaceId::CircleD1);
        let exact = L2Metric::new(&b, &f0, &uni, 64, 4096).unwrap();
        let q = Quadrature::for_space(SpaceId::CircleD1, 4096);
        let quad = L2Metric {
            mode: MetricMode::Quadrature {
                basis_values: b.design_matrix(&q.points, 64).unwrap(),
                truth_values: f0.eval_many(&q.points),
                weights: q.weights,
            },
        };
        let a: Vec<f64> = (0..20).map(|k| 0.1 * k as f64).collect();
        assert!((exact.distance(&a) - quad.distance(&a)).abs() < 1e-10);
    }

    #[test]
    fn norm_chain_holds_per_draw() {
        // ‖f−f₀‖₂ ≤ √(2/p₋)(‖f−f₀‖_n + ‖r‖_∞) + ‖r‖₂ with r = f₀ − P f₀
        let f0 = TestFunction::weierstrass(0.5).unwrap();
        let p = SievePrior::new(BasisFamily::circle(), Truncation::Geometric { q: 0.8 }, CoefficientLaw::StdGaussian, Some(40)).unwrap();
        let mu = DesignMeasure::uniform(SpaceId::CircleD1);
        let data = data_for(&f0, 1500, 0.2, 10);
        let fit = fit_sieve(&p, &data).unwrap();
        let report = GramReport::new(p.basis(), 40, &data.x, &mu).unwrap();
        assert!(report.event);
        let metric = L2Metric::new(p.basis(), &f0, &mu, 40, 4096).unwrap();
        let c = f0.coefficients(p.basis(), 40).unwrap();
        let r_l2 = metric.distance(&c);
        let grid = crate::basis::sup_grid(SpaceId::CircleD1, 4096);
        let resid = |x: Point| f0.eval(x) - SieveDraw { j: 40, coefficients: c.clone() }.eval(p.basis(), x).unwrap();
        let r_inf = data.x.iter().chain(&grid).map(|&x| resid(x).abs()).fold(0.0, f64::max);
        let truth: Vec<f64> = data.x.iter().map(|&x| f0.eval(x)).collect();
        let mut rng = seeded(11);
        for _ in 0..200 {
            let d = fit.sample_posterior(&mut rng);
            let fx = fit.at_design(&d.coefficients);
            let emp = (fx.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 1500.0).sqrt();
            let l2 = metric.distance(&d.coefficients);
            assert!(l2 <= (2.0f64 / report.p_minus).sqrt() * (emp + r_inf) + r_l2);
        }
    }

    #[test]
    fn empirical_and_l2_errors_agree_with_deterministic_j() {
        let f0 = TestFunction::weierstrass(0.5).unwrap();
        let n = 2000;
        let j = (n as f64).powf(0.5).round() as usize;
        let p = SievePrior::new(BasisFamily::circle(), Truncation::Fixed { j }, CoefficientLaw::StdGaussian, None).unwrap();
        let mu = DesignMeasure::uniform(SpaceId::CircleD1);
        let data = data_for(&f0, n, 0.2, 12);
        assert!(GramReport::new(p.basis(), j, &data.x, &mu).unwrap().event);
        let fit = fit_sieve(&p, &data).unwrap();
        let metric = L2Metric::new(p.basis(), &f0, &mu, j, 4096).unwrap();
        let mean = fit.mean_coefficients();
        let l2 = metric.distance(&mean);
        let fx = fit.at_design(&mean);
        let emp = (fx.iter().zip(&data.x).map(|(a, &x)| (a - f0.eval(x)).powi(2)).sum::<f64>() / n as f64).sqrt();
        let ratio = l2 / emp;
        assert!(ratio > 0.5 && ratio < 2.0, "{ratio}");
    }
}
