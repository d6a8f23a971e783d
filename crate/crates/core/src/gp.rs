//! Conjugate Gaussian-process regression with finite-rank spectral kernels.
//!
//! With `Φ = U M^{1/2}` (`U_{il} = u_l(x_i)`, `M = diag(s_l)`) the prior is
//! `f = Φw`, `w ~ N(0, I)`. The posterior of `w` is `N(B⁻¹ΦᵀY/σ², B⁻¹)` with
//! `B = I + ΦᵀΦ/σ²`, so everything is computed from one `L × L` Cholesky
//! factor. The literal `n × n` form `A = K_XX + σ²I` is available for
//! moderate `n` and is used as the cross-check.

use std::f64::consts::PI;

use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisFamily, Density, DesignMeasure, Point, Quadrature, TestFunction, DEFAULT_GRID};
use crate::error::{Error, Result};
use crate::experiment::{collect_rows, fit_rate, grid_cells, run_cells, Cell, ExperimentResult, Regressor, Value};
use crate::kernel::{Decay, SpectralKernel};
use crate::linalg::{gram_t, mat_t_vec, mat_vec, sym_eigenvalues, Cholesky};
use crate::rng::cell_rng;

/// Default event-E threshold.
pub const DEFAULT_KAPPA: f64 = 0.5;
/// Largest `n` for which the dense `n × n` route is allowed.
pub const DENSE_LIMIT: usize = 4096;
/// Largest evaluation grid for posterior draws.
pub const MAX_DRAW_GRID: usize = 4096;
/// Tail certificate for heat kernels in the hyperposterior.
const HEAT_TAIL_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct RegressionData {
    pub x: Vec<Point>,
    pub y: Vec<f64>,
    pub sigma2: f64,
}

impl RegressionData {
    pub fn new(x: Vec<Point>, y: Vec<f64>, sigma2: f64) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::domain("regression data needs n ≥ 1"));
        }
        if x.len() != y.len() {
            return Err(Error::domain(format!(
                "{} design points but {} responses",
                x.len(),
                y.len()
            )));
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::domain(format!("noise variance {sigma2} must be positive")));
        }
        Ok(RegressionData { x, y, sigma2 })
    }

    /// `y_i = f₀(x_i) + N(0, σ²)` with `x_i ~ μ₀`.
    pub fn synthetic<R: Rng + ?Sized>(
        f0: &TestFunction,
        measure: &DesignMeasure,
        n: usize,
        sigma2: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let x = measure.sample_n(n, rng);
        let sd = sigma2.sqrt();
        let y = x
            .iter()
            .map(|&p| f0.eval(p) + sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        RegressionData::new(x, y, sigma2)
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }
}

#[derive(Debug)]
pub struct GpPosterior {
    kernel: SpectralKernel,
    data: RegressionData,
    s: Vec<f64>,
    /// `n × L` design matrix `U`.
    u: Mat<f64>,
    /// Factor of `B = I + ΦᵀΦ/σ²`.
    b: Cholesky,
    /// Posterior mean of `w`.
    w_mean: Vec<f64>,
    kappa: f64,
}

/// Posterior of a finite-rank GP prior.
pub fn fit_posterior(kernel: &SpectralKernel, data: &RegressionData) -> Result<GpPosterior> {
    let s = kernel.eigenvalues();
    let u = kernel.family().design_matrix(&data.x, kernel.rank())?;
    let mut phi = u.clone();
    scale_columns(&mut phi, &s.iter().map(|v| v.sqrt()).collect::<Vec<_>>());
    let mut b = gram_t(phi.as_ref());
    let inv_s2 = 1.0 / data.sigma2;
    for i in 0..b.nrows() {
        for j in 0..b.ncols() {
            b[(i, j)] *= inv_s2;
        }
        b[(i, i)] += 1.0;
    }
    let b = Cholesky::factor(b.as_ref())?;
    let rhs: Vec<f64> = mat_t_vec(phi.as_ref(), &data.y)
        .into_iter()
        .map(|v| v * inv_s2)
        .collect();
    let w_mean = b.solve_vec(&rhs);
    Ok(GpPosterior {
        kernel: kernel.clone(),
        data: data.clone(),
        s,
        u,
        b,
        w_mean,
        kappa: DEFAULT_KAPPA,
    })
}

fn scale_columns(m: &mut Mat<f64>, by: &[f64]) {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            m[(i, j)] *= by[j];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceBound {
    pub bound: f64,
    pub event_e_holds: bool,
    /// `λ_min(U_LᵀU_L / n)`, or `+∞` when `L = 0`.
    pub lambda_min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceIdentity {
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub n: usize,
    pub sigma2: f64,
    #[serde(rename = "L")]
    pub l: usize,
    pub sigma_n2_series: f64,
    pub sigma_n2_bound: f64,
    #[serde(rename = "event_E")]
    pub event_e: bool,
    pub kappa: f64,
    pub lambda_min_gram: f64,
}

impl GpPosterior {
    pub fn kernel(&self) -> &SpectralKernel {
        &self.kernel
    }

    pub fn data(&self) -> &RegressionData {
        &self.data
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    /// Posterior mean coefficients `θ̂_l = √s_l · E[w_l]` in the basis `u_l`.
    pub fn mean_coefficients(&self) -> Vec<f64> {
        self.w_mean
            .iter()
            .zip(&self.s)
            .map(|(w, s)| w * s.sqrt())
            .collect()
    }

    pub fn mean_at(&self, points: &[Point]) -> Result<Vec<f64>> {
        let u = self.kernel.family().design_matrix(points, self.rank())?;
        Ok(mat_vec(u.as_ref(), &self.mean_coefficients()))
    }

    fn features(&self, points: &[Point]) -> Result<Mat<f64>> {
        self.kernel.features(points)
    }

    /// Posterior covariance `k_n(x_i, y_j) = φ(x_i)ᵀ B⁻¹ φ(y_j)`.
    pub fn covariance(&self, xs: &[Point], ys: &[Point]) -> Result<Mat<f64>> {
        let a = self.features(xs)?;
        let b = self.features(ys)?;
        let binv_bt = self.b.solve(b.transpose());
        Ok(&a * &binv_bt)
    }

    /// `k_n(x, x)` at each point.
    pub fn variance_at(&self, xs: &[Point]) -> Result<Vec<f64>> {
        let phi = self.features(xs)?;
        let mut out = Vec::with_capacity(xs.len());
        for i in 0..xs.len() {
            let row: Vec<f64> = (0..phi.ncols()).map(|j| phi[(i, j)]).collect();
            let z = self.b.forward(&row);
            out.push(z.iter().map(|v| v * v).sum());
        }
        Ok(out)
    }

    /// `A = K_XX + σ²I`; dense, so limited to `n ≤ 4096`.
    pub fn gram_a(&self) -> Result<Mat<f64>> {
        let n = self.data.n();
        if n > DENSE_LIMIT {
            return Err(Error::domain(format!("dense Gram needs n ≤ {DENSE_LIMIT}")));
        }
        let mut a = self.kernel.gram(&self.data.x)?;
        for i in 0..n {
            a[(i, i)] += self.data.sigma2;
        }
        Ok(a)
    }

    /// `A⁻¹Y`, so that `f̂(x) = k_Xxᵀ A⁻¹ Y`.
    pub fn representer_weights(&self) -> Result<Vec<f64>> {
        let a = self.gram_a()?;
        Ok(Cholesky::factor(a.as_ref())?.solve_vec(&self.data.y))
    }

    /// `σ_n² = Σ_l s_l (1 − s_l [UᵀA⁻¹U]_ll)`, evaluated as `Σ_l s_l [B⁻¹]_ll`.
    ///
    /// Equals `∫ k_n(x, x) dμ` when `μ₀` is the reference measure.
    pub fn integrated_variance_series(&self) -> Result<f64> {
        let v: f64 = self
            .b
            .inverse_diagonal()
            .iter()
            .zip(&self.s)
            .map(|(d, s)| s * d)
            .sum();
        if v < -1e-10 {
            return Err(Error::numerical(format!("negative integrated variance {v:e}")));
        }
        Ok(v.max(0.0))
    }

    /// The same series through the dense `A`, term by term.
    pub fn integrated_variance_series_dense(&self) -> Result<f64> {
        let a = Cholesky::factor(self.gram_a()?.as_ref())?;
        let ainv_u = a.solve(self.u.as_ref());
        let mut total = 0.0;
        for l in 0..self.rank() {
            let q: f64 = (0..self.data.n()).map(|i| self.u[(i, l)] * ainv_u[(i, l)]).sum();
            total += self.s[l] * (1.0 - self.s[l] * q);
        }
        Ok(total)
    }

    /// `∫ k_n(x, x) dQ` for a quadrature rule `Q`.
    pub fn integrated_variance_quadrature(&self, quad: &Quadrature) -> Result<f64> {
        let v = self.variance_at(&quad.points)?;
        Ok(v.iter().zip(&quad.weights).map(|(a, w)| a * w).sum())
    }

    fn lambda_min_gram(&self, l: usize) -> Result<f64> {
        if l == 0 {
            return Ok(f64::INFINITY);
        }
        let ul = self.u.subcols(0, l);
        let mut g = gram_t(ul);
        let n = self.data.n() as f64;
        for i in 0..l {
            for j in 0..l {
                g[(i, j)] /= n;
            }
        }
        Ok(sym_eigenvalues(g.as_ref())?[0])
    }

    /// `σ²L/(nκ) + Σ_{l>L} s_l` and the event `λ_min(U_LᵀU_L/n) ≥ κ`.
    ///
    /// Rescaling all `s_l` and `σ²` by `1/s_+` and multiplying back leaves the
    /// bound unchanged, so no explicit rescaling is needed when `s_1 > 1`.
    pub fn variance_upper_bound(&self, l: usize) -> Result<VarianceBound> {
        if l > self.rank() {
            return Err(Error::domain(format!("L = {l} exceeds kernel rank {}", self.rank())));
        }
        let tail: f64 = self.s[l..].iter().sum();
        let n = self.data.n() as f64;
        let lambda_min = self.lambda_min_gram(l)?;
        Ok(VarianceBound {
            bound: self.data.sigma2 * l as f64 / (n * self.kappa) + tail,
            event_e_holds: lambda_min >= self.kappa,
            lambda_min,
        })
    }

    /// Both sides of `Tr[M_L − A_L⁻¹U_L M_L² U_Lᵀ] = σ² Tr[(σ²M_L⁻¹ + U_LᵀU_L)⁻¹]`.
    pub fn trace_identity_check(&self, l: usize) -> Result<TraceIdentity> {
        if l == 0 || l > self.rank() {
            return Err(Error::domain(format!("L = {l} must lie in 1..={}", self.rank())));
        }
        let s = &self.s[..l];
        if s.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::domain("M_L is singular"));
        }
        let n = self.data.n();
        if n > DENSE_LIMIT {
            return Err(Error::domain(format!("trace identity needs n ≤ {DENSE_LIMIT}")));
        }
        let sigma2 = self.data.sigma2;
        let ul = self.u.subcols(0, l).to_owned();

        // lhs through the n × n matrix A_L
        let mut ul_m = ul.clone();
        scale_columns(&mut ul_m, s);
        let mut a_l = &ul_m * ul.transpose();
        crate::linalg::mirror_lower(&mut a_l);
        for i in 0..n {
            a_l[(i, i)] += sigma2;
        }
        let a_chol = Cholesky::factor(a_l.as_ref())?;
        let x = a_chol.solve(ul_m.as_ref());
        // Tr[A_L⁻¹ U_L M² U_Lᵀ] = Σ_l s_l² [U_lᵀ A_L⁻¹ U_l]
        let mut reduction = 0.0;
        for c in 0..l {
            let q: f64 = (0..n).map(|i| ul_m[(i, c)] * x[(i, c)]).sum();
            reduction += q;
        }
        let lhs = s.iter().sum::<f64>() - reduction;

        // rhs through the L × L matrix σ²M⁻¹ + UᵀU
        let mut c = gram_t(ul.as_ref());
        for i in 0..l {
            c[(i, i)] += sigma2 / s[i];
        }
        let c_chol = Cholesky::factor(c.as_ref())?;
        let rhs = sigma2 * c_chol.inverse_diagonal().iter().sum::<f64>();
        Ok(TraceIdentity { lhs, rhs })
    }

    /// Squared `L²(μ)` distance of the posterior mean to `f₀`, computed in
    /// coefficient space (uniform `μ₀`, `f₀` expanded in the kernel's family).
    pub fn l2_error_sq(&self, f0: &TestFunction) -> Result<f64> {
        let family = self.kernel.family();
        let c = f0
            .coefficients(family, self.rank())
            .ok_or_else(|| Error::domain("truth has no closed-form coefficients in this family"))?;
        let theta = self.mean_coefficients();
        let head: f64 = theta.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum();
        let captured: f64 = c.iter().map(|v| v * v).sum();
        let tail = (f0.l2_norm_sq() - captured).max(0.0);
        Ok(head + tail)
    }

    /// Squared `L²(Q)` distance to `f₀` under a quadrature rule.
    pub fn l2_error_sq_quadrature(&self, f0: &TestFunction, quad: &Quadrature) -> Result<f64> {
        let m = self.mean_at(&quad.points)?;
        Ok(quad
            .points
            .iter()
            .zip(&quad.weights)
            .zip(&m)
            .map(|((&p, &w), &v)| w * (v - f0.eval(p)).powi(2))
            .sum())
    }

    pub fn summary(&self, l: usize) -> Result<PosteriorSummary> {
        let vb = self.variance_upper_bound(l)?;
        Ok(PosteriorSummary {
            n: self.data.n(),
            sigma2: self.data.sigma2,
            l,
            sigma_n2_series: self.integrated_variance_series()?,
            sigma_n2_bound: vb.bound,
            event_e: vb.event_e_holds,
            kappa: self.kappa,
            lambda_min_gram: vb.lambda_min,
        })
    }
}

/// One draw from the Gaussian posterior at `grid`.
///
/// The draw is generated in coefficient space as `φ(grid)(E[w] + L_B⁻ᵀz)`, which
/// has covariance `k_n(grid, grid)` exactly and needs no jitter.
pub fn posterior_function_draw<R: Rng + ?Sized>(
    post: &GpPosterior,
    grid: &[Point],
    rng: &mut R,
) -> Result<Vec<f64>> {
    if grid.len() > MAX_DRAW_GRID {
        return Err(Error::domain(format!("evaluation grid larger than {MAX_DRAW_GRID}")));
    }
    let z: Vec<f64> = (0..post.rank()).map(|_| rng.sample(StandardNormal)).collect();
    let dev = post.b.backward(&z);
    let w: Vec<f64> = post.w_mean.iter().zip(&dev).map(|(a, b)| a + b).collect();
    let phi = post.features(grid)?;
    Ok(mat_vec(phi.as_ref(), &w))
}

/// Discrete hyperposterior over the heat time `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TPosterior {
    pub t: Vec<f64>,
    pub weights: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl TPosterior {
    pub fn mean_t(&self) -> f64 {
        self.t.iter().zip(&self.weights).map(|(t, w)| t * w).sum()
    }
}

/// `ln π₁(t) = −a ln t − t^{-d/2} ln^{1+d/2}(1/t)`, up to a constant.
pub fn log_t_prior(t: f64, a: f64, d: usize) -> f64 {
    let d = d as f64;
    -a * t.ln() - t.powf(-d / 2.0) * (1.0 / t).ln().powf(1.0 + d / 2.0)
}

/// `ln N(Y; 0, ΦΦᵀ + σ²I)` through the `L × L` Woodbury form.
pub fn log_marginal_likelihood(kernel: &SpectralKernel, data: &RegressionData) -> Result<f64> {
    let post = fit_posterior(kernel, data)?;
    let n = data.n() as f64;
    let sigma2 = data.sigma2;
    let phi = kernel.features(&data.x)?;
    let pty = mat_t_vec(phi.as_ref(), &data.y);
    let yy: f64 = data.y.iter().map(|v| v * v).sum();
    let quad: f64 = pty.iter().zip(&post.w_mean).map(|(a, b)| a * b).sum();
    let mahal = (yy - quad) / sigma2;
    Ok(-0.5 * (n * (2.0 * PI * sigma2).ln() + post.b.log_det() + mahal))
}

/// Grid posterior over `t` for the heat-kernel prior `k_t`.
///
/// Each `k_t` is truncated at the rank certifying a `1e-10` tail, capped at
/// `max_rank`. Weights are `π₁(t) × N(Y; 0, K_t + σ²I)` normalized in the log domain.
pub fn hierarchical_t_posterior(
    data: &RegressionData,
    basis: &BasisFamily,
    t_grid: &[f64],
    a: f64,
    max_rank: usize,
) -> Result<TPosterior> {
    if t_grid.is_empty() {
        return Err(Error::domain("t grid is empty"));
    }
    if t_grid.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::domain("t grid must lie in (0, 1)"));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("t grid must be strictly increasing"));
    }
    let mut log_w = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let decay = Decay::Heat { t };
        let kernel = match SpectralKernel::certified(basis.clone(), decay.clone(), HEAT_TAIL_TOL) {
            Ok(k) if k.rank() <= max_rank => k,
            _ => SpectralKernel::new(basis.clone(), decay, max_rank)?,
        };
        log_w.push(log_t_prior(t, a, basis.dim()) + log_marginal_likelihood(&kernel, data)?);
    }
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::numerical(format!("all hyperposterior weights underflow (max log-weight {top})")));
    }
    let norm = top + log_w.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
    let log_weights: Vec<f64> = log_w.iter().map(|v| v - norm).collect();
    Ok(TPosterior {
        t: t_grid.to_vec(),
        weights: log_weights.iter().map(|v| v.exp()).collect(),
        log_weights,
    })
}

/// Settings for the GP contraction sweep with a Sobolev-type kernel.
#[derive(Debug, Clone)]
pub struct GpRateSetup {
    pub family: BasisFamily,
    pub alpha: f64,
    /// Smoothness of the truth, used for the target exponent.
    pub s: f64,
    pub f0: TestFunction,
    pub measure: DesignMeasure,
    pub sigma2: f64,
    /// Rank is `rank_factor · n^{1/(2α+d)}`, rounded up to an odd count.
    pub rank_factor: f64,
    pub seed: u64,
}

pub const GP_RATE_COLUMNS: [&str; 6] = ["n", "replicate", "L", "l2_error", "l2_error_sq", "sigma_n2"];

impl GpRateSetup {
    pub fn rank(&self, n: usize) -> usize {
        let d = self.family.dim() as f64;
        let l = (self.rank_factor * (n as f64).powf(1.0 / (2.0 * self.alpha + d))).ceil() as usize;
        l.max(1) | 1
    }

    /// `−(s ∧ α)/(2α + d)` for the unsquared error.
    pub fn target(&self) -> f64 {
        -self.s.min(self.alpha) / (2.0 * self.alpha + self.family.dim() as f64)
    }

    pub fn cell(&self, cell: Cell) -> Result<Vec<Value>> {
        let mut rng = cell_rng(self.seed, cell.n, cell.replicate);
        let data = RegressionData::synthetic(&self.f0, &self.measure, cell.n, self.sigma2, &mut rng)?;
        let l = self.rank(cell.n);
        let kernel = SpectralKernel::new(self.family.clone(), Decay::Sobolev { alpha: self.alpha }, l)?;
        let post = fit_posterior(&kernel, &data)?;
        let err2 = if self.measure.density == Density::Uniform && self.f0.coefficients(&self.family, 1).is_some() {
            post.l2_error_sq(&self.f0)?
        } else {
            let q = Quadrature::for_space(self.measure.space, DEFAULT_GRID).weighted(&self.measure);
            post.l2_error_sq_quadrature(&self.f0, &q)?
        };
        Ok(vec![
            cell.n.into(),
            cell.replicate.into(),
            l.into(),
            err2.sqrt().into(),
            err2.into(),
            post.integrated_variance_series()?.into(),
        ])
    }
}

/// GP sweep over `n_grid × replicates`, fitting the unsquared and squared
/// posterior-mean errors against `ln n`.
pub fn gp_rate_experiment(
    setup: &GpRateSetup,
    n_grid: &[usize],
    replicates: usize,
    workers: usize,
    tolerance: f64,
    squared_tolerance: f64,
) -> Result<ExperimentResult> {
    let cells = grid_cells(n_grid, replicates);
    let outcomes = run_cells(&cells, workers, |c| setup.cell(c).map(|r| vec![r]));
    let mut result = collect_rows("gp_rate", &GP_RATE_COLUMNS, outcomes);
    if !result.table.is_empty() {
        let t = setup.target();
        result.fits.push(fit_rate(&result.table, "l2_error", Regressor::LnN, t, tolerance)?);
        result.fits.push(fit_rate(&result.table, "l2_error_sq", Regressor::LnN, 2.0 * t, squared_tolerance)?);
    }
    result.finalize();
    Ok(result)
}

/// Random instances for the trace identity, the variance series against
/// quadrature, and the variance bound.
#[derive(Debug, Clone)]
pub struct VarianceIdentitySetup {
    pub family: BasisFamily,
    /// Kernel rank of every instance.
    pub rank: usize,
    /// Upper end of the random `L` for the trace identity.
    pub max_trace_rank: usize,
    pub quadrature: usize,
    pub kappa: f64,
    pub seed: u64,
}

pub const VARIANCE_COLUMNS: [&str; 15] = [
    "n",
    "replicate",
    "alpha",
    "sigma2",
    "L_trace",
    "trace_lhs",
    "trace_rhs",
    "trace_rel_err",
    "sigma_n2_series",
    "sigma_n2_quadrature",
    "series_rel_err",
    "L_bound",
    "sigma_n2_bound",
    "event_E",
    "bound_holds",
];

impl VarianceIdentitySetup {
    pub fn cell(&self, cell: Cell) -> Result<Vec<Value>> {
        let mut rng = cell_rng(self.seed, cell.n, cell.replicate);
        let alpha = rng.random_range(0.5..2.0);
        let sigma2 = 10f64.powf(rng.random_range(-2.0..0.0));
        let f0 = TestFunction::power_law(self.family.clone(), 1.0, 64)?;
        let measure = DesignMeasure::uniform(self.family.space());
        let data = RegressionData::synthetic(&f0, &measure, cell.n, sigma2, &mut rng)?;
        let kernel = SpectralKernel::new(self.family.clone(), Decay::Sobolev { alpha }, self.rank)?;
        let post = fit_posterior(&kernel, &data)?.with_kappa(self.kappa);
        let l_trace = rng.random_range(1..=self.max_trace_rank.min(self.rank));
        let tid = post.trace_identity_check(l_trace)?;
        let series = post.integrated_variance_series()?;
        let quad = Quadrature::for_space(self.family.space(), self.quadrature);
        let by_quad = post.integrated_variance_quadrature(&quad)?;
        let n = cell.n as f64;
        let l_cap = ((n / (4.0 * n.ln())).floor() as usize).clamp(1, self.rank);
        let l_bound = rng.random_range(1..=l_cap);
        let vb = post.variance_upper_bound(l_bound)?;
        Ok(vec![
            cell.n.into(),
            cell.replicate.into(),
            alpha.into(),
            sigma2.into(),
            l_trace.into(),
            tid.lhs.into(),
            tid.rhs.into(),
            ((tid.lhs - tid.rhs).abs() / tid.rhs.abs()).into(),
            series.into(),
            by_quad.into(),
            ((series - by_quad).abs() / by_quad.abs()).into(),
            l_bound.into(),
            vb.bound.into(),
            vb.event_e_holds.into(),
            (series <= vb.bound).into(),
        ])
    }
}
