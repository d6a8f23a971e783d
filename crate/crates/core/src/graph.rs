//! Random geometric graphs on an embedded circle, the degree-normalized graph
//! Laplacian with its eigenbasis, and semi-supervised regression with sieve
//! priors over graph eigenvectors.

use std::f64::consts::PI;

use faer::Mat;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::basis::{BasisFamily, Density, DesignMeasure, Point, SpaceId, TestFunction};
use crate::error::{Error, Result};
use crate::experiment::{
    collect_rows, fit_rate, grid_cells, run_cells, Cell, ExperimentResult, Regressor, Value,
};
use crate::linalg::{mat_vec, sym_eigen, sym_eigenvalues};
use crate::rng::{cell_rng, sub_rng};
use crate::sieve::{fit_sieve_with_design, CoefficientLaw, SievePrior, Truncation};

pub const MIN_CLOUD: usize = 16;
/// Clouds with `N > n^B` are logged.
pub const CLOUD_GROWTH_B: f64 = 2.0;
const NORM_TAG: u64 = 0x6e6f_726d;

/// Points on the unit circle embedded in `ℝ^D` as `(cos θ, sin θ, 0, …)`.
#[derive(Debug, Clone)]
pub struct PointCloud {
    ambient: usize,
    /// Angles as fractions of a turn, in `[0, 1)`.
    turns: Vec<f64>,
    coords: Mat<f64>,
    labeled: usize,
    density: Density,
}

impl PointCloud {
    pub fn from_turns(turns: Vec<f64>, ambient: usize, labeled: usize, density: Density) -> Result<Self> {
        if turns.len() < 2 {
            return Err(Error::domain("a cloud needs at least two points"));
        }
        if ambient < 2 {
            return Err(Error::domain(format!("ambient dimension {ambient} must be ≥ 2")));
        }
        if labeled == 0 || labeled > turns.len() {
            return Err(Error::domain(format!("labeled count {labeled} outside 1..={}", turns.len())));
        }
        if (turns.len() as f64) > (labeled as f64).powf(CLOUD_GROWTH_B) {
            log::info!("cloud size {} exceeds n^{CLOUD_GROWTH_B} for n = {labeled}", turns.len());
        }
        let coords = Mat::from_fn(turns.len(), ambient, |i, k| {
            let th = 2.0 * PI * turns[i];
            match k {
                0 => th.cos(),
                1 => th.sin(),
                _ => 0.0,
            }
        });
        Ok(PointCloud {
            ambient,
            turns,
            coords,
            labeled,
            density,
        })
    }

    /// `N` points at angles `2πk/N`.
    pub fn equispaced(size: usize, ambient: usize) -> Result<Self> {
        let turns = (0..size).map(|k| k as f64 / size as f64).collect();
        Self::from_turns(turns, ambient, size, Density::Uniform)
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn ambient(&self) -> usize {
        self.ambient
    }

    pub fn labeled(&self) -> usize {
        self.labeled
    }

    pub fn density(&self) -> Density {
        self.density
    }

    pub fn turns(&self) -> &[f64] {
        &self.turns
    }

    pub fn point(&self, i: usize) -> Point {
        Point::d1(self.turns[i])
    }

    pub fn coords(&self) -> &Mat<f64> {
        &self.coords
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        (0..self.ambient)
            .map(|k| (self.coords[(i, k)] - self.coords[(j, k)]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Draws `N` angles from `density` by inverse CDF.
pub fn sample_cloud<R: Rng + ?Sized>(
    ambient: usize,
    size: usize,
    labeled: usize,
    density: Density,
    rng: &mut R,
) -> Result<PointCloud> {
    if size < MIN_CLOUD {
        return Err(Error::domain(format!("cloud size {size} must be ≥ {MIN_CLOUD}")));
    }
    let measure = DesignMeasure::new(SpaceId::CircleD1, density)?;
    let turns = measure.sample_n(size, rng).into_iter().map(|p| p.x()).collect();
    PointCloud::from_turns(turns, ambient, labeled, density)
}

/// `h_J = J^{-1/d} / ln^{τ/d} n`.
pub fn bandwidth(j: usize, n: usize, tau: f64, d: usize) -> f64 {
    let d = d as f64;
    (j as f64).powf(-1.0 / d) / (n as f64).ln().powf(tau / d)
}

/// `h_J` with lengths measured in turns of the unit circle, i.e. `2π h_J`.
pub fn circle_bandwidth(j: usize, n: usize, tau: f64) -> f64 {
    2.0 * PI * bandwidth(j, n, tau, 1)
}

/// Neighbor lists of the graph `x ~ y ⟺ ‖x − y‖ < h`, found by an angular sweep.
pub fn neighbors(cloud: &PointCloud, h: f64) -> Result<Vec<Vec<usize>>> {
    if !(h > 0.0) {
        return Err(Error::domain(format!("bandwidth {h} must be positive")));
    }
    let size = cloud.len();
    let mut order: Vec<usize> = (0..size).collect();
    order.sort_by(|&a, &b| cloud.turns[a].total_cmp(&cloud.turns[b]));
    let reach = if h >= 2.0 { 0.5 } else { (h / 2.0).asin() / PI } + 1e-9;
    let mut adj = vec![Vec::new(); size];
    for (pos, &i) in order.iter().enumerate() {
        for step in 1..size {
            let j = order[(pos + step) % size];
            let gap = (cloud.turns[j] - cloud.turns[i]).rem_euclid(1.0);
            if gap > reach {
                break;
            }
            if cloud.distance(i, j) < h {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    Ok(adj)
}

fn component_count(adj: &[Vec<usize>]) -> usize {
    let mut seen = vec![false; adj.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..adj.len() {
        if seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
    }
    count
}

/// `S = (1/h²)(I − D^{-1/2} W D^{-1/2})`, similar to the Laplacian.
fn symmetrized(adj: &[Vec<usize>], h: f64) -> Mat<f64> {
    let size = adj.len();
    let inv_sqrt: Vec<f64> = adj.iter().map(|l| 1.0 / (l.len() as f64).sqrt()).collect();
    let scale = 1.0 / (h * h);
    let mut s = Mat::zeros(size, size);
    for i in 0..size {
        s[(i, i)] = scale;
        for &j in &adj[i] {
            s[(i, j)] = -scale * inv_sqrt[i] * inv_sqrt[j];
        }
    }
    s
}

fn connected_neighbors(cloud: &PointCloud, h: f64) -> Result<Vec<Vec<usize>>> {
    let adj = neighbors(cloud, h)?;
    let components = component_count(&adj);
    if components > 1 {
        return Err(Error::Disconnected { components });
    }
    Ok(adj)
}

/// Laplacian eigenvalues only, ascending.
pub fn graph_spectrum(cloud: &PointCloud, h: f64) -> Result<Vec<f64>> {
    let adj = connected_neighbors(cloud, h)?;
    sym_eigenvalues(symmetrized(&adj, h).as_ref())
}

/// Random geometric graph with `(Lf)(x) = (1/(h² deg x)) Σ_{y~x}(f(x) − f(y))`.
#[derive(Debug, Clone)]
pub struct GeometricGraph {
    h: f64,
    adj: Vec<Vec<usize>>,
    nu: Vec<f64>,
    values: Vec<f64>,
    /// Column `j` is `û_{j+1}` on the cloud, orthonormal in `L²(ν)`.
    vectors: Mat<f64>,
}

pub fn build_graph(cloud: &PointCloud, h: f64) -> Result<GeometricGraph> {
    let adj = connected_neighbors(cloud, h)?;
    let eig = sym_eigen(symmetrized(&adj, h).as_ref())?;
    let total: f64 = adj.iter().map(|l| l.len() as f64).sum();
    let nu: Vec<f64> = adj.iter().map(|l| l.len() as f64 / total).collect();
    let size = adj.len();
    let mut vectors = Mat::from_fn(size, size, |i, j| eig.vectors[(i, j)] / nu[i].sqrt());
    let sum0: f64 = (0..size).map(|i| vectors[(i, 0)]).sum();
    if sum0 < 0.0 {
        for i in 0..size {
            vectors[(i, 0)] = -vectors[(i, 0)];
        }
    }
    Ok(GeometricGraph {
        h,
        adj,
        nu,
        values: eig.values,
        vectors,
    })
}

impl GeometricGraph {
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    /// Normalized degree measure `ν`.
    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    pub fn eigenvectors(&self) -> &Mat<f64> {
        &self.vectors
    }

    /// `λ̂_j · C · 24π²h²/r²` with `r = 2 arcsin(h/2)`, comparable to `(2πm)²`.
    pub fn continuum_scale(&self) -> f64 {
        continuum_scale(self.h)
    }

    pub fn apply_laplacian(&self, f: &[f64]) -> Vec<f64> {
        let inv_h2 = 1.0 / (self.h * self.h);
        self.adj
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let s: f64 = l.iter().map(|&j| f[i] - f[j]).sum();
                inv_h2 * s / l.len() as f64
            })
            .collect()
    }

    /// Dense Laplacian matrix.
    pub fn laplacian(&self) -> Mat<f64> {
        let size = self.len();
        let inv_h2 = 1.0 / (self.h * self.h);
        let mut l = Mat::zeros(size, size);
        for i in 0..size {
            let deg = self.adj[i].len() as f64;
            l[(i, i)] = inv_h2;
            for &j in &self.adj[i] {
                l[(i, j)] -= inv_h2 / deg;
            }
        }
        l
    }

    pub fn inner_nu(&self, a: &[f64], b: &[f64]) -> f64 {
        self.nu.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
    }

    /// `C_J² = max_x (1/J) Σ_{j≤J} û_j(x)²`.
    pub fn c_j_squared(&self, j: usize) -> Result<f64> {
        if j == 0 || j > self.len() {
            return Err(Error::domain(format!("J = {j} outside 1..={}", self.len())));
        }
        Ok((0..self.len())
            .map(|i| (0..j).map(|k| self.vectors[(i, k)].powi(2)).sum::<f64>() / j as f64)
            .fold(0.0, f64::max))
    }

    /// First `count` eigenvectors restricted to `rows`.
    pub fn basis_values(&self, rows: &[usize], count: usize) -> Result<Mat<f64>> {
        if count > self.len() {
            return Err(Error::domain(format!("J = {count} exceeds cloud size {}", self.len())));
        }
        Ok(Mat::from_fn(rows.len(), count, |i, j| self.vectors[(rows[i], j)]))
    }

    pub fn write_spectrum_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "j,lambda_hat")?;
        for (k, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{v:e}", k + 1)?;
        }
        Ok(())
    }
}

/// Empirical factor `C` in the spectrum scaling: reciprocal of the mean
/// `λ̂₂ · 24π²h²/r² / 4π²` over 16 uniform clouds, N = 2000, h ≈ 0.11.
pub const CONTINUUM_CALIBRATION: f64 = 1.17;

pub fn continuum_scale(h: f64) -> f64 {
    let r = 2.0 * (h / 2.0).min(1.0).asin();
    CONTINUUM_CALIBRATION * 24.0 * PI * PI * h * h / (r * r)
}

/// Spectrum of the Laplacian of `N` equispaced points with `k` neighbors per
/// side: `(1/h²)(1 − (1/k) Σ_{i≤k} cos(2πmi/N))`, sorted.
pub fn circulant_eigenvalues(size: usize, k: usize, h: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..size)
        .map(|m| {
            let s: f64 = (1..=k)
                .map(|i| (2.0 * PI * (m * i) as f64 / size as f64).cos())
                .sum();
            (1.0 - s / k as f64) / (h * h)
        })
        .collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Sorted labeled index set, uniform without replacement.
pub fn label_indices<R: Rng + ?Sized>(size: usize, n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx = sample_indices(rng, size, n).into_vec();
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormComparison {
    pub event_frequency: f64,
    pub worst_factor: f64,
    pub c_j_squared: f64,
}

/// Frequency over relabelings of `‖f‖_N ≤ 2‖f‖_n` for `vectors` random
/// `f ∈ span{û_1..û_J}`, and the largest realized `‖f‖_N / ‖f‖_n`.
pub fn norm_comparison(
    graph: &GeometricGraph,
    j: usize,
    n: usize,
    replicates: usize,
    vectors: usize,
    seed: u64,
    workers: usize,
) -> Result<NormComparison> {
    let size = graph.len();
    if n == 0 || n > size {
        return Err(Error::domain(format!("labeled count {n} outside 1..={size}")));
    }
    let c2 = graph.c_j_squared(j)?;
    let all: Vec<usize> = (0..size).collect();
    let u = graph.basis_values(&all, j)?;
    let mut coef_rng = sub_rng(seed, NORM_TAG, u64::MAX);
    let coefs: Vec<Vec<f64>> = (0..vectors)
        .map(|_| (0..j).map(|_| coef_rng.sample(StandardNormal)).collect())
        .collect();
    let values: Vec<Vec<f64>> = coefs.iter().map(|c| mat_vec(u.as_ref(), c)).collect();
    let full: Vec<f64> = values
        .iter()
        .map(|f| (f.iter().map(|v| v * v).sum::<f64>() / size as f64).sqrt())
        .collect();
    let cells: Vec<Cell> = (0..replicates).map(|r| Cell { n, replicate: r }).collect();
    let outcomes = run_cells(&cells, workers, |c| {
        let mut rng = sub_rng(seed, NORM_TAG, c.replicate as u64);
        let idx = label_indices(size, n, &mut rng);
        let worst = values
            .iter()
            .zip(&full)
            .map(|(f, nf)| {
                let nn = (idx.iter().map(|&i| f[i] * f[i]).sum::<f64>() / n as f64).sqrt();
                nf / nn
            })
            .fold(0.0, f64::max);
        Ok(worst)
    });
    let factors: Vec<f64> = outcomes.into_iter().map(|(_, r)| r.expect("infallible")).collect();
    let hits = factors.iter().filter(|&&f| f <= 2.0).count();
    Ok(NormComparison {
        event_frequency: hits as f64 / replicates.max(1) as f64,
        worst_factor: factors.iter().copied().fold(0.0, f64::max),
        c_j_squared: c2,
    })
}

/// Semi-supervised posterior on a graph: labeled responses, a sieve prior over
/// graph eigenvectors.
#[derive(Debug)]
pub struct SslPosterior {
    pub labels: Vec<usize>,
    pub fit: crate::sieve::SieveFit,
    basis: Mat<f64>,
}

impl SslPosterior {
    /// Values of `Σ a_j û_j` on the whole cloud.
    pub fn on_cloud(&self, coefficients: &[f64]) -> Vec<f64> {
        mat_vec(self.basis.subcols(0, coefficients.len()), coefficients)
    }
}

/// Conjugate posterior given responses `y` at `labels` (sorted cloud indices).
pub fn ssl_posterior(
    graph: &GeometricGraph,
    labels: &[usize],
    y: &[f64],
    sigma2: f64,
    prior: &SievePrior,
) -> Result<SslPosterior> {
    let j_max = prior.j_max();
    if j_max > graph.len() {
        return Err(Error::domain(format!("J = {j_max} exceeds cloud size {}", graph.len())));
    }
    if labels.len() != y.len() {
        return Err(Error::domain("labels and responses differ in length"));
    }
    let u = graph.basis_values(labels, j_max)?;
    let fit = fit_sieve_with_design(prior, u, y, sigma2)?;
    let all: Vec<usize> = (0..graph.len()).collect();
    Ok(SslPosterior {
        labels: labels.to_vec(),
        fit,
        basis: graph.basis_values(&all, j_max)?,
    })
}

/// Settings for the graph semi-supervised sweep.
#[derive(Debug, Clone)]
pub struct SslSetup {
    pub ambient: usize,
    /// `N = cloud_factor · n`.
    pub cloud_factor: usize,
    pub density: Density,
    /// Truth as a function of the angle in turns.
    pub f0: TestFunction,
    pub sigma2: f64,
    pub s: f64,
    pub tau: f64,
    pub truncation: Truncation,
    pub m: f64,
    pub draws: usize,
    pub seed: u64,
}

pub const SSL_COLUMNS: [&str; 10] = [
    "n",
    "replicate",
    "J_drawn",
    "emp_norm_error",
    "l2_error",
    "post_mass_outside_ball",
    "tail_mass",
    "N",
    "h",
    "J",
];

impl SslSetup {
    pub fn target(&self) -> f64 {
        -self.s / (2.0 * self.s + 1.0)
    }

    /// `ε_n = n^{-s/(2s+1)}`.
    pub fn epsilon(&self, n: usize) -> f64 {
        (n as f64).powf(self.target())
    }

    /// Resolution `J = ⌈n^{1/(2s+1)}⌉` fixing the bandwidth.
    pub fn resolution(&self, n: usize) -> usize {
        (n as f64).powf(1.0 / (2.0 * self.s + 1.0)).ceil() as usize
    }

    /// One cell. `l2_error` is the posterior-mean error in `‖·‖_N`,
    /// `emp_norm_error` the one in `‖·‖_n`.
    pub fn cell(&self, cell: Cell) -> Result<Vec<Value>> {
        let mut rng = cell_rng(self.seed, cell.n, cell.replicate);
        let size = self.cloud_factor * cell.n;
        let cloud = sample_cloud(self.ambient, size, cell.n, self.density, &mut rng)?;
        let j = self.resolution(cell.n);
        let h = circle_bandwidth(j, cell.n, self.tau);
        let graph = build_graph(&cloud, h)?;
        let labels = label_indices(size, cell.n, &mut rng);
        let truth: Vec<f64> = (0..size).map(|i| self.f0.eval(cloud.point(i))).collect();
        let y: Vec<f64> = labels
            .iter()
            .map(|&i| truth[i] + self.sigma2.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let cap = crate::sieve::SievePrior::new(
            BasisFamily::circle(),
            self.truncation,
            CoefficientLaw::StdGaussian,
            None,
        )?
        .j_max()
        .min(size);
        let prior = SievePrior::new(
            BasisFamily::circle(),
            self.truncation,
            CoefficientLaw::StdGaussian,
            Some(cap),
        )?;
        let post = ssl_posterior(&graph, &labels, &y, self.sigma2, &prior)?;
        let mean = post.fit.mean_coefficients();
        let fitted = post.on_cloud(&mean);
        let norm_n = |f: &[f64]| {
            (labels.iter().map(|&i| (f[i] - truth[i]).powi(2)).sum::<f64>() / cell.n as f64).sqrt()
        };
        let norm_big = |f: &[f64]| {
            (f.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / size as f64).sqrt()
        };
        let radius = self.m * self.epsilon(cell.n);
        let mut outside = 0usize;
        let mut first_j = 0;
        for d in 0..self.draws.max(1) {
            let draw = post.fit.sample_posterior(&mut rng);
            if d == 0 {
                first_j = draw.j;
            }
            if norm_big(&post.on_cloud(&draw.coefficients)) > radius {
                outside += 1;
            }
        }
        Ok(vec![
            cell.n.into(),
            cell.replicate.into(),
            first_j.into(),
            norm_n(&fitted).into(),
            norm_big(&fitted).into(),
            (outside as f64 / self.draws.max(1) as f64).into(),
            post.fit.mass_above(j).into(),
            size.into(),
            h.into(),
            j.into(),
        ])
    }
}

/// Graph semi-supervised sweep, fitting the `‖·‖_N` error against `ln n`.
pub fn ssl_contraction(
    setup: &SslSetup,
    n_grid: &[usize],
    replicates: usize,
    workers: usize,
    tolerance: f64,
) -> Result<ExperimentResult> {
    let cells = grid_cells(n_grid, replicates);
    let outcomes = run_cells(&cells, workers, |c| setup.cell(c).map(|r| vec![r]));
    let mut result = collect_rows("graph_ssl", &SSL_COLUMNS, outcomes);
    if !result.table.is_empty() {
        result.fits.push(fit_rate(
            &result.table,
            "l2_error",
            Regressor::LnN,
            setup.target(),
            tolerance,
        )?);
    }
    result.finalize();
    Ok(result)
}
