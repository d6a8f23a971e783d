//! Spectral Mercer kernels `k(x, y) = Σ_j s_j u_j(x) u_j(y)` over a basis family,
//! and Nyström eigensystems of the integral operator under a design measure.

use std::f64::consts::PI;
use std::io::Write;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::basis::{sup_grid, BasisFamily, DesignMeasure, Point, Quadrature, SpaceId};
use crate::error::{Error, Result};
use crate::linalg::{gram_t, sym_eigen};
use crate::stats::ols;

/// Largest rank the tail certificate may ask for.
pub const MAX_CERTIFIED_RANK: usize = 1_000_000;
/// Explicitly summed terms before the analytic tail bound takes over.
const EXPLICIT_TAIL_TERMS: usize = 4096;
/// Above this exponent `e^{-tλ}` underflows.
const HEAT_UNDERFLOW: f64 = 745.0;
/// Relative clamp threshold for negative Nyström eigenvalues.
const NEGATIVE_CLAMP: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decay {
    /// `s_j = (1 + λ_j)^{-(α + d/2)}`.
    Sobolev { alpha: f64 },
    /// `s_j = e^{-tλ_j}`.
    Heat { t: f64 },
    /// Given non-increasing, non-negative values; zero beyond the list.
    Explicit { values: Vec<f64> },
}

impl Decay {
    fn validate(&self) -> Result<()> {
        match self {
            Decay::Sobolev { alpha } if !(*alpha > 0.0) => {
                Err(Error::domain(format!("sobolev order {alpha} must be positive")))
            }
            Decay::Heat { t } if !(*t > 0.0) => {
                Err(Error::domain(format!("heat time {t} must be positive")))
            }
            Decay::Explicit { values } => {
                if values.iter().any(|v| !(*v >= 0.0)) {
                    return Err(Error::domain("explicit eigenvalues must be non-negative"));
                }
                if values.windows(2).any(|w| w[1] > w[0]) {
                    return Err(Error::domain("explicit eigenvalues must be non-increasing"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// A finite-rank spectral kernel.
#[derive(Debug, Clone)]
pub struct SpectralKernel {
    family: BasisFamily,
    decay: Decay,
    rank: usize,
}

impl SpectralKernel {
    /// Kernel truncated to the first `rank` basis elements.
    pub fn new(family: BasisFamily, decay: Decay, rank: usize) -> Result<Self> {
        decay.validate()?;
        if rank == 0 {
            return Err(Error::domain("kernel rank must be at least 1"));
        }
        if let Some(cap) = family.capacity() {
            if rank > cap {
                return Err(Error::domain(format!(
                    "rank {rank} exceeds basis capacity {cap}"
                )));
            }
        }
        Ok(SpectralKernel {
            family,
            decay,
            rank,
        })
    }

    /// Smallest rank whose certified tail `Σ_{j>L} s_j sup|u_j|²` is below `tol`.
    pub fn certified(family: BasisFamily, decay: Decay, tol: f64) -> Result<Self> {
        decay.validate()?;
        let probe = SpectralKernel {
            family: family.clone(),
            decay: decay.clone(),
            rank: 1,
        };
        let limit = family
            .capacity()
            .unwrap_or(MAX_CERTIFIED_RANK)
            .min(MAX_CERTIFIED_RANK);
        let cert = |l: usize| probe.tail_certificate(l);
        if cert(limit) >= tol {
            return Err(Error::Precision {
                requested: tol,
                achievable: cert(limit),
                rank: limit,
            });
        }
        let (mut lo, mut hi) = (1usize, 1usize);
        while cert(hi) >= tol {
            lo = hi;
            hi = (hi * 2).min(limit);
        }
        while lo + 1 < hi {
            let mid = lo + (hi - lo) / 2;
            if cert(mid) < tol {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let rank = if cert(lo) < tol { lo } else { hi };
        SpectralKernel::new(family, decay, rank)
    }

    pub fn family(&self) -> &BasisFamily {
        &self.family
    }

    pub fn decay(&self) -> &Decay {
        &self.decay
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// The same decay rule truncated at a different rank.
    pub fn with_rank(&self, rank: usize) -> Result<Self> {
        SpectralKernel::new(self.family.clone(), self.decay.clone(), rank)
    }

    /// `s_j` from the decay rule, ignoring the truncation rank.
    pub fn mercer_eigenvalue(&self, j: usize) -> Result<f64> {
        let lambda = self.family.laplacian_eigenvalue(j)?;
        Ok(self.decay_of(j, lambda))
    }

    fn decay_of(&self, j: usize, lambda: f64) -> f64 {
        match &self.decay {
            Decay::Sobolev { alpha } => {
                (1.0 + lambda).powf(-(alpha + self.family.dim() as f64 / 2.0))
            }
            Decay::Heat { t } => {
                let e = t * lambda;
                if e > HEAT_UNDERFLOW {
                    0.0
                } else {
                    (-e).exp()
                }
            }
            Decay::Explicit { values } => values.get(j - 1).copied().unwrap_or(0.0),
        }
    }

    /// `s_1, …, s_rank`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        (1..=self.rank)
            .map(|j| self.decay_of(j, self.family.lambda_unchecked(j)))
            .collect()
    }

    /// Exponent `p` of `s_j ≍ j^{-1/p}` for Sobolev decay.
    pub fn exponent_p(&self) -> Option<f64> {
        match self.decay {
            Decay::Sobolev { alpha } => {
                let d = self.family.dim() as f64;
                Some(d / (d + 2.0 * alpha))
            }
            _ => None,
        }
    }

    /// Least-squares slope of `ln s_j` against `ln j` over `j_lo..=j_hi`.
    pub fn decay_slope(&self, j_lo: usize, j_hi: usize) -> Result<f64> {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for j in j_lo.max(1)..=j_hi {
            let s = self.mercer_eigenvalue(j)?;
            if s > 0.0 {
                x.push((j as f64).ln());
                y.push(s.ln());
            }
        }
        if x.len() < 2 {
            return Err(Error::domain("need two positive eigenvalues to fit a slope"));
        }
        Ok(ols(&x, &y).slope)
    }

    /// Fitted `(c₁, c₂)` with `c₁ j^{-1/p} ≤ s_j ≤ c₂ j^{-1/p}` on `2..=j_max`.
    ///
    /// `j = 1` is excluded because `λ_1 = 0` sits off the power law.
    pub fn evd_constants(&self, j_max: usize) -> Result<(f64, f64)> {
        let p = self
            .exponent_p()
            .ok_or_else(|| Error::domain("EVD constants need polynomial decay"))?;
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for j in 2..=j_max {
            let r = self.mercer_eigenvalue(j)? * (j as f64).powf(1.0 / p);
            lo = lo.min(r);
            hi = hi.max(r);
        }
        Ok((lo, hi))
    }

    /// Upper bound on `Σ_{j>L} s_j` for the untruncated decay rule.
    pub fn tail_bound(&self, l: usize) -> f64 {
        if let Decay::Explicit { values } = &self.decay {
            return values.iter().skip(l).sum();
        }
        let cap = self.family.capacity().unwrap_or(usize::MAX);
        let k = (l + EXPLICIT_TAIL_TERMS).min(cap).max(l);
        let explicit: f64 = (l + 1..=k)
            .map(|j| self.decay_of(j, self.family.lambda_unchecked(j)))
            .sum();
        explicit + self.analytic_tail(k)
    }

    /// Bound on `Σ_{j>K} s_j` from a lower bound on `λ_j`.
    fn analytic_tail(&self, k: usize) -> f64 {
        let kf = k as f64;
        match (self.family.space(), &self.decay) {
            (SpaceId::CircleD1 | SpaceId::IntervalCosine, Decay::Sobolev { alpha }) => {
                // λ_j ≥ (π(j−1))² on both families
                let two_g = 2.0 * alpha + 1.0;
                if k < 2 {
                    return f64::INFINITY;
                }
                PI.powf(-two_g) * (kf - 1.0).powf(1.0 - two_g) / (two_g - 1.0)
            }
            (SpaceId::CircleD1 | SpaceId::IntervalCosine, Decay::Heat { t }) => {
                let a = t * PI * PI;
                let y0 = kf - 1.0;
                if y0 <= 0.0 {
                    return f64::INFINITY;
                }
                (-a * y0 * y0).exp() / (2.0 * a * y0)
            }
            (SpaceId::TorusD2, decay) => {
                // lattice count gives λ_j ≥ 4πj(1 − 1.2535/√K)² for j > K
                let shrink = 1.0 - 1.2535 / kf.sqrt();
                if shrink <= 0.0 {
                    return f64::INFINITY;
                }
                let c = 4.0 * PI * shrink * shrink;
                match decay {
                    Decay::Sobolev { alpha } => {
                        let g = alpha + 1.0;
                        c.powf(-g) * kf.powf(1.0 - g) / (g - 1.0)
                    }
                    Decay::Heat { t } => (-t * c * kf).exp() / (t * c),
                    Decay::Explicit { .. } => 0.0,
                }
            }
            (_, Decay::Explicit { .. }) => 0.0,
        }
    }

    /// `sup_bound · Σ_{j>L} s_j` with `sup_bound ≥ sup|u_j(x)u_j(y)|`.
    pub fn tail_certificate(&self, l: usize) -> f64 {
        self.family.sup_square_bound() * self.tail_bound(l)
    }

    /// `Σ_{j≤rank} s_j u_j(x) u_j(y)`.
    pub fn eval(&self, x: Point, y: Point) -> Result<f64> {
        let s = self.eigenvalues();
        let mut ux = vec![0.0; self.rank];
        let mut uy = vec![0.0; self.rank];
        self.family.eval_all(x, &mut ux)?;
        self.family.eval_all(y, &mut uy)?;
        Ok(s.iter().zip(ux.iter().zip(&uy)).map(|(s, (a, b))| s * a * b).sum())
    }

    /// Feature matrix `Φ` with `Φ_{il} = √s_l u_l(x_i)`, so `K = ΦΦᵀ`.
    pub fn features(&self, points: &[Point]) -> Result<Mat<f64>> {
        let mut phi = self.family.design_matrix(points, self.rank)?;
        let root: Vec<f64> = self.eigenvalues().iter().map(|s| s.sqrt()).collect();
        for j in 0..self.rank {
            for i in 0..points.len() {
                phi[(i, j)] *= root[j];
            }
        }
        Ok(phi)
    }

    /// Kernel matrix `k(x_i, y_j)`.
    pub fn cross(&self, xs: &[Point], ys: &[Point]) -> Result<Mat<f64>> {
        let a = self.features(xs)?;
        let b = self.features(ys)?;
        Ok(&a * b.transpose())
    }

    /// Symmetric kernel matrix `k(x_i, x_j)`.
    pub fn gram(&self, xs: &[Point]) -> Result<Mat<f64>> {
        let phi = self.features(xs)?;
        Ok(gram_t(phi.transpose()))
    }
}

/// `max_x Σ_{l≤L} u_l(x)²` over a uniform grid, with the analytic basis.
pub fn sup_sum_squares(kernel: &SpectralKernel, l: usize, grid_size: usize) -> Result<f64> {
    if l == 0 {
        return Err(Error::domain("L must be at least 1"));
    }
    let family = kernel.family();
    let mut u = vec![0.0; l];
    let mut best: f64 = 0.0;
    for p in sup_grid(family.space(), grid_size) {
        family.eval_all(p, &mut u)?;
        best = best.max(u.iter().map(|v| v * v).sum());
    }
    Ok(best)
}

/// Top eigenpairs of the discretized integral operator under `μ₀`.
#[derive(Debug, Clone)]
pub struct NystromEigensystem {
    pub nodes: Vec<Point>,
    /// Quadrature weights including the density `p₀`.
    pub weights: Vec<f64>,
    /// `ŝ_1 ≥ ŝ_2 ≥ …`.
    pub values: Vec<f64>,
    /// `m × L`; column `l` holds `ê_l` at the nodes.
    pub vectors: Mat<f64>,
}

impl NystromEigensystem {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `max_k |ê_l(x_k)|` for 1-based `l`.
    pub fn sup_norm(&self, l: usize) -> f64 {
        (0..self.nodes.len()).fold(0.0_f64, |m, k| m.max(self.vectors[(k, l - 1)].abs()))
    }

    /// `max_k Σ_{l≤L} ê_l(x_k)²`.
    pub fn sup_sum_squares(&self, l: usize) -> f64 {
        let l = l.min(self.len());
        (0..self.nodes.len())
            .map(|k| (0..l).map(|j| self.vectors[(k, j)].powi(2)).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Weighted Gram matrix `Σ_k w_k ê_l(x_k) ê_m(x_k)`.
    pub fn weighted_gram(&self) -> Mat<f64> {
        let mut v = self.vectors.clone();
        for k in 0..v.nrows() {
            let r = self.weights[k].sqrt();
            for j in 0..v.ncols() {
                v[(k, j)] *= r;
            }
        }
        gram_t(v.as_ref())
    }
}

/// Nyström eigensystem from the `m`-node quadrature of `μ₀`.
pub fn nystrom_eigens(
    kernel: &SpectralKernel,
    measure: &DesignMeasure,
    m: usize,
    l: usize,
) -> Result<NystromEigensystem> {
    if l == 0 || m < 4 * l {
        return Err(Error::domain(format!("need L ≥ 1 and m ≥ 4L (m = {m}, L = {l})")));
    }
    if measure.space != kernel.family().space() {
        return Err(Error::domain("measure and kernel live on different spaces"));
    }
    let quad = Quadrature::for_space(measure.space, m).weighted(measure);
    let phi = kernel.features(&quad.points)?;
    let nodes = quad.points;
    let weights = quad.weights;
    let n = nodes.len();
    let mut wphi = phi.clone();
    for k in 0..n {
        let r = weights[k].sqrt();
        for j in 0..wphi.ncols() {
            wphi[(k, j)] *= r;
        }
    }
    let r = kernel.rank();
    let trace: f64 = (0..n)
        .map(|k| (0..r).map(|j| wphi[(k, j)].powi(2)).sum::<f64>())
        .sum();

    // Same nonzero spectrum either way; take the smaller side.
    let (evals, evecs_nodes) = if r < n {
        let small = gram_t(wphi.as_ref());
        let eig = sym_eigen(small.as_ref())?;
        let take = l.min(r);
        let mut vals = Vec::with_capacity(take);
        let mut vecs = Mat::<f64>::zeros(n, take);
        for c in 0..take {
            let src = r - 1 - c;
            let s = eig.values[src];
            vals.push(s);
            if s <= 0.0 {
                continue;
            }
            // ê = Φ q / √ŝ
            let inv = 1.0 / s.sqrt();
            for k in 0..n {
                let mut acc = 0.0;
                for j in 0..r {
                    acc += phi[(k, j)] * eig.vectors[(j, src)];
                }
                vecs[(k, c)] = acc * inv;
            }
        }
        (vals, vecs)
    } else {
        let big = gram_t(wphi.transpose());
        let eig = sym_eigen(big.as_ref())?;
        let mut vals = Vec::with_capacity(l);
        let mut vecs = Mat::<f64>::zeros(n, l);
        for c in 0..l {
            let src = n - 1 - c;
            vals.push(eig.values[src]);
            for k in 0..n {
                vecs[(k, c)] = eig.vectors[(k, src)] / weights[k].sqrt();
            }
        }
        (vals, vecs)
    };

    let mut values = Vec::with_capacity(evals.len());
    for v in evals {
        if v < -NEGATIVE_CLAMP * trace {
            return Err(Error::numerical(format!(
                "kernel matrix eigenvalue {v:e} below -1e-10 × trace"
            )));
        }
        values.push(v.max(0.0));
    }
    Ok(NystromEigensystem {
        nodes,
        weights,
        values,
        vectors: evecs_nodes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenRow {
    pub l: usize,
    pub s_hat: f64,
    pub sup_norm: f64,
    pub ratio: f64,
}

/// Per-eigenfunction sup norms and their ratios to `l^{1/2+δ}`.
pub fn mercer_sup_norm_report(eig: &NystromEigensystem, delta: f64) -> Result<Vec<EigenRow>> {
    if !(delta > 0.0) {
        return Err(Error::domain("δ must be positive"));
    }
    Ok((1..=eig.len())
        .map(|l| {
            let sup = eig.sup_norm(l);
            EigenRow {
                l,
                s_hat: eig.values[l - 1],
                sup_norm: sup,
                ratio: sup / (l as f64).powf(0.5 + delta),
            }
        })
        .collect())
}

pub fn write_eigen_report<W: Write>(mut w: W, rows: &[EigenRow]) -> std::io::Result<()> {
    writeln!(w, "l,s_hat,sup_norm,ratio")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.l, r.s_hat, r.sup_norm, r.ratio)?;
    }
    Ok(())
}

/// `max ratio over l ∈ (split, 2·split] / max ratio over l ≤ split`.
pub fn growth_ratio(rows: &[EigenRow], split: usize) -> f64 {
    let head = rows
        .iter()
        .filter(|r| r.l <= split)
        .fold(0.0_f64, |m, r| m.max(r.ratio));
    let tail = rows
        .iter()
        .filter(|r| r.l > split && r.l <= 2 * split)
        .fold(0.0_f64, |m, r| m.max(r.ratio));
    tail / head
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Density;

    fn sobolev(alpha: f64, rank: usize) -> SpectralKernel {
        SpectralKernel::new(BasisFamily::circle(), Decay::Sobolev { alpha }, rank).unwrap()
    }

    #[test]
    fn eigenvalue_examples() {
        let k = sobolev(0.5, 10);
        assert_eq!(k.mercer_eigenvalue(1).unwrap(), 1.0);
        let oracle = 1.0 / (1.0 + 4.0 * PI * PI);
        assert!((k.mercer_eigenvalue(2).unwrap() - oracle).abs() < 1e-15);
        assert!((oracle - 0.024706).abs() < 1e-5);
        assert!((k.decay_slope(64, 4096).unwrap() + 2.0).abs() < 0.05);
        assert!(k.mercer_eigenvalue(0).is_err());
    }

    #[test]
    fn evd_constants_are_finite_and_ordered() {
        for alpha in [0.5, 1.0, 2.0] {
            let (c1, c2) = sobolev(alpha, 8).evd_constants(4096).unwrap();
            assert!(c1 > 0.0 && c2 < 1.0 && c1 <= c2);
        }
    }

    #[test]
    fn heat_decay_underflows_to_zero() {
        let k = SpectralKernel::new(BasisFamily::circle(), Decay::Heat { t: 1.0 }, 4).unwrap();
        assert_eq!(k.mercer_eigenvalue(100).unwrap(), 0.0);
        assert_eq!(k.mercer_eigenvalue(1).unwrap(), 1.0);
    }

    #[test]
    fn invalid_decays_rejected() {
        let c = BasisFamily::circle();
        assert!(SpectralKernel::new(c.clone(), Decay::Sobolev { alpha: 0.0 }, 4).is_err());
        assert!(SpectralKernel::new(c.clone(), Decay::Heat { t: -1.0 }, 4).is_err());
        let up = Decay::Explicit { values: vec![0.5, 1.0] };
        assert!(SpectralKernel::new(c.clone(), up, 2).is_err());
        assert!(SpectralKernel::new(c, Decay::Sobolev { alpha: 1.0 }, 0).is_err());
    }

    #[test]
    fn large_heat_time_gives_constant_kernel() {
        let k = SpectralKernel::certified(BasisFamily::circle(), Decay::Heat { t: 50.0 }, 1e-10)
            .unwrap();
        let v = k.eval(Point::d1(0.1), Point::d1(0.77)).unwrap();
        assert!((v - 1.0).abs() < 1e-10);
    }

    #[test]
    fn integrated_diagonal_equals_trace() {
        let k = sobolev(1.0, 41);
        let q = Quadrature::for_space(SpaceId::CircleD1, 4096);
        let integral = q.integrate(|x| k.eval(x, x).unwrap());
        let trace: f64 = k.eigenvalues().iter().sum();
        assert!((integral - trace).abs() < 1e-12);

        let h = SpectralKernel::new(BasisFamily::interval(), Decay::Heat { t: 0.01 }, 60).unwrap();
        let q = Quadrature::for_space(SpaceId::IntervalCosine, 4096);
        let integral = q.integrate(|x| h.eval(x, x).unwrap());
        let trace: f64 = h.eigenvalues().iter().sum();
        assert!((integral - trace).abs() < 1e-8);
    }

    /// `Σ_{m∈ℤ} e^{2πimδ}/(1 + 4π²m²) = cosh(δ − ½)/(2 sinh ½)` on `[0, 1]`.
    fn closed_form_half(delta: f64) -> f64 {
        (delta - 0.5).cosh() / (2.0 * 0.5f64.sinh())
    }

    fn brute_diagonal(alpha: f64, terms: usize) -> f64 {
        // k(0,0) = 1 + 2 Σ_m (1 + 4π²m²)^{-(α+½)}, summed smallest-first
        let g = alpha + 0.5;
        let mut s = 0.0;
        let pairs = (terms - 1) / 2;
        for m in (1..=pairs).rev() {
            s += 2.0 * (1.0 + (2.0 * PI * m as f64).powi(2)).powf(-g);
        }
        1.0 + s
    }

    #[test]
    fn certified_kernel_matches_long_reference() {
        let k = SpectralKernel::certified(BasisFamily::circle(), Decay::Sobolev { alpha: 1.0 }, 1e-10)
            .unwrap();
        let v = k.eval(Point::d1(0.0), Point::d1(0.0)).unwrap();
        assert!((v - brute_diagonal(1.0, 1_000_001)).abs() < 1e-9, "rank {}", k.rank());
    }

    #[test]
    fn slow_decay_cannot_be_certified() {
        let err = SpectralKernel::certified(
            BasisFamily::circle(),
            Decay::Sobolev { alpha: 0.5 },
            1e-10,
        )
        .unwrap_err();
        match err {
            Error::Precision { achievable, rank, .. } => {
                assert_eq!(rank, MAX_CERTIFIED_RANK);
                assert!(achievable > 1e-10 && achievable < 1e-6);
            }
            e => panic!("unexpected {e:?}"),
        }
        // a looser certificate works and is honoured against two oracles
        let k = SpectralKernel::certified(BasisFamily::circle(), Decay::Sobolev { alpha: 0.5 }, 1e-5)
            .unwrap();
        let v = k.eval(Point::d1(0.0), Point::d1(0.0)).unwrap();
        assert!((v - brute_diagonal(0.5, 1_000_001)).abs() < 1e-5);
        assert!((v - closed_form_half(0.0)).abs() < 1e-5);
        let w = k.eval(Point::d1(0.2), Point::d1(0.5)).unwrap();
        assert!((w - closed_form_half(0.3)).abs() < 1e-5);
    }

    #[test]
    fn tail_bound_dominates_explicit_sum() {
        for (fam, decay) in [
            (BasisFamily::circle(), Decay::Sobolev { alpha: 0.7 }),
            (BasisFamily::interval(), Decay::Sobolev { alpha: 1.5 }),
            (BasisFamily::circle(), Decay::Heat { t: 1e-3 }),
            (BasisFamily::torus_d2(1 << 14), Decay::Sobolev { alpha: 1.0 }),
            (BasisFamily::torus_d2(1 << 14), Decay::Heat { t: 1e-3 }),
        ] {
            let cap = fam.capacity().unwrap_or(200_000);
            let k = SpectralKernel::new(fam, decay, 1).unwrap();
            for l in [10usize, 100, 1000] {
                let explicit: f64 = (l + 1..=cap).map(|j| k.mercer_eigenvalue(j).unwrap()).sum();
                assert!(k.tail_bound(l) >= explicit, "l={l}");
            }
        }
    }

    #[test]
    fn sup_sum_squares_examples() {
        let k = sobolev(1.0, 4);
        for l in [1usize, 3, 7, 21] {
            assert!((sup_sum_squares(&k, l, 4096).unwrap() - l as f64).abs() < 1e-9);
        }
        for l in [2usize, 10, 256, 1024] {
            assert!(sup_sum_squares(&k, l, 4096).unwrap() <= 2.0 * l as f64 + 1e-9);
        }
    }

    #[test]
    fn nystrom_uniform_recovers_mercer_spectrum() {
        for fam in [BasisFamily::circle(), BasisFamily::interval()] {
            let k = SpectralKernel::new(fam.clone(), Decay::Sobolev { alpha: 0.5 }, 1024).unwrap();
            let mu = DesignMeasure::uniform(fam.space());
            let eig = nystrom_eigens(&k, &mu, 2048, 64).unwrap();
            for l in 1..=64 {
                let s = k.mercer_eigenvalue(l).unwrap();
                assert!((eig.values[l - 1] - s).abs() <= 1e-4 * s, "{:?} l={l}", fam.space());
            }
        }
    }

    #[test]
    fn nystrom_dense_route_agrees_with_feature_route() {
        let fam = BasisFamily::circle();
        let mu = DesignMeasure::new(SpaceId::CircleD1, Density::Cosine { amplitude: 0.5 }).unwrap();
        let k = SpectralKernel::new(fam.clone(), Decay::Sobolev { alpha: 1.0 }, 129).unwrap();
        let small = nystrom_eigens(&k, &mu, 256, 16).unwrap();
        let k_full = SpectralKernel::new(fam, Decay::Sobolev { alpha: 1.0 }, 300).unwrap();
        let dense = nystrom_eigens(&k_full, &mu, 256, 16).unwrap();
        for l in 0..16 {
            assert!((small.values[l] - dense.values[l]).abs() < 1e-3 * small.values[l]);
        }
        let g = dense.weighted_gram();
        for a in 0..16 {
            for b in 0..16 {
                let t = if a == b { 1.0 } else { 0.0 };
                assert!((g[(a, b)] - t).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn nystrom_orthonormal_and_trace_bounded_under_linear_density() {
        let fam = BasisFamily::interval();
        let mu = DesignMeasure::new(SpaceId::IntervalCosine, Density::Linear { slope: 1.0 }).unwrap();
        let k = SpectralKernel::new(fam, Decay::Sobolev { alpha: 0.5 }, 512).unwrap();
        let eig = nystrom_eigens(&k, &mu, 2048, 200).unwrap();
        let g = eig.weighted_gram();
        for a in 0..200 {
            for b in 0..200 {
                let t = if a == b { 1.0 } else { 0.0 };
                assert!((g[(a, b)] - t).abs() < 1e-6);
            }
        }
        let trace = Quadrature::for_space(SpaceId::IntervalCosine, 2048)
            .weighted(&mu)
            .integrate(|x| k.eval(x, x).unwrap());
        assert!(eig.values.iter().sum::<f64>() <= trace + 1e-6);
        assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
        for l in 1..=200 {
            assert!(eig.sup_norm(l) <= 3.0 * (l as f64).powf(0.75), "l={l}");
        }
        let rows = mercer_sup_norm_report(&eig, 0.25).unwrap();
        assert!(growth_ratio(&rows, 100) <= 2.0);
        assert_eq!(rows[0].ratio, rows[0].sup_norm);
    }

    #[test]
    fn nystrom_decay_slope_uniform() {
        for alpha in [0.5, 1.0] {
            let k = sobolev(alpha, 1024);
            let eig = nystrom_eigens(&k, &DesignMeasure::uniform(SpaceId::CircleD1), 2048, 256).unwrap();
            let x: Vec<f64> = (16..=128).map(|l| (l as f64).ln()).collect();
            let y: Vec<f64> = (16..=128).map(|l| eig.values[l - 1].ln()).collect();
            let slope = ols(&x, &y).slope;
            assert!((slope + 1.0 + 2.0 * alpha).abs() < 0.1, "α={alpha}: {slope}");
        }
    }

    #[test]
    fn uniform_report_has_trigonometric_sup_norms() {
        let k = sobolev(1.0, 200);
        let eig = nystrom_eigens(&k, &DesignMeasure::uniform(SpaceId::CircleD1), 2048, 40).unwrap();
        let rows = mercer_sup_norm_report(&eig, 0.1).unwrap();
        assert!((rows[0].sup_norm - 1.0).abs() < 1e-8);
        // degenerate cos/sin pairs may rotate, so only the L² envelope is pinned
        for r in &rows[1..] {
            assert!(r.sup_norm >= 1.0 - 1e-8 && r.sup_norm <= 2.0 + 1e-8);
        }
        let mut buf = Vec::new();
        write_eigen_report(&mut buf, &rows[..1]).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("l,s_hat,sup_norm,ratio\n1,"));
        assert!(mercer_sup_norm_report(&eig, 0.0).is_err());
    }

    #[test]
    fn nystrom_preconditions() {
        let k = sobolev(1.0, 16);
        let mu = DesignMeasure::uniform(SpaceId::CircleD1);
        assert!(nystrom_eigens(&k, &mu, 63, 16).is_err());
        assert!(nystrom_eigens(&k, &DesignMeasure::uniform(SpaceId::IntervalCosine), 64, 16).is_err());
    }

    #[test]
    fn assembled_kernel_matrices_are_psd() {
        let k = sobolev(0.5, 301);
        let mut rng = crate::rng::seeded(3);
        let xs = DesignMeasure::uniform(SpaceId::CircleD1).sample_n(150, &mut rng);
        let g = k.gram(&xs).unwrap();
        let ev = crate::linalg::sym_eigenvalues(g.as_ref()).unwrap();
        let tr = crate::linalg::trace(g.as_ref());
        assert!(ev[0] >= -1e-10 * tr);
    }
}
