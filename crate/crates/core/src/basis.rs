//! Orthonormal basis families on the circle, the 2-torus and the unit interval.
//!
//! Indices are 1-based and ordered so that the Laplacian eigenvalues are
//! non-decreasing. On the circle, `u_1 ≡ 1`, `u_{2m} = √2 cos(2πmx)` and
//! `u_{2m+1} = √2 sin(2πmx)`. The interval carries the Neumann cosine basis
//! `u_j = √2 cos(π(j−1)x)`. Torus elements are tensor products of circle
//! elements sorted by `λ = λ⁽¹⁾ + λ⁽²⁾`, ties broken lexicographically.

use std::f64::consts::{PI, SQRT_2, TAU};
use std::io::Write;
use std::sync::Arc;

use faer::Mat;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default sup-norm grid size.
pub const DEFAULT_GRID: usize = 4096;
/// Largest grid the refinement policy will try.
pub const MAX_GRID: usize = 1 << 16;
/// Relative change below which grid refinement stops.
pub const GRID_REL_TOL: f64 = 1e-3;
/// Number of torus basis elements indexed by default.
pub const DEFAULT_TORUS_CAPACITY: usize = 1 << 14;

const WEIERSTRASS_CUTOFF: f64 = 1e-14;
// Recurrence re-anchor period for cos/sin of multiples.
const ANCHOR: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceId {
    CircleD1,
    TorusD2,
    IntervalCosine,
}

impl SpaceId {
    pub fn dim(self) -> usize {
        match self {
            SpaceId::TorusD2 => 2,
            _ => 1,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "circle_d1" | "circle" => Some(SpaceId::CircleD1),
            "torus_d2" | "torus" => Some(SpaceId::TorusD2),
            "interval_cosine" | "interval" => Some(SpaceId::IntervalCosine),
            _ => None,
        }
    }
}

/// A point in canonical coordinates; the second coordinate is ignored in `d = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point(pub [f64; 2]);

impl Point {
    pub fn d1(x: f64) -> Self {
        Point([x, 0.0])
    }

    pub fn d2(x: f64, y: f64) -> Self {
        Point([x, y])
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }
}

impl From<f64> for Point {
    fn from(x: f64) -> Self {
        Point::d1(x)
    }
}

fn wrap_unit(x: f64) -> f64 {
    let w = x.rem_euclid(1.0);
    // rem_euclid can round up to exactly 1.0 for tiny negative inputs
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

fn reflect_unit(x: f64) -> f64 {
    let y = x.rem_euclid(2.0);
    if y > 1.0 {
        2.0 - y
    } else {
        y
    }
}

/// Circle frequency carried by circle index `j ≥ 1`.
fn circle_frequency(j: usize) -> usize {
    j / 2
}

fn circle_lambda(j: usize) -> f64 {
    let m = circle_frequency(j) as f64;
    (TAU * m).powi(2)
}

fn circle_value(j: usize, x: f64) -> f64 {
    if j == 1 {
        return 1.0;
    }
    let m = circle_frequency(j) as f64;
    let phase = TAU * wrap_unit(m * wrap_unit(x));
    if j % 2 == 0 {
        SQRT_2 * phase.cos()
    } else {
        SQRT_2 * phase.sin()
    }
}

/// Fills `out[k] = cos(kθ)`, `out_sin[k] = sin(kθ)` for `k < out.len()`.
fn trig_multiples(frac: f64, cos_out: &mut [f64], mut sin_out: Option<&mut [f64]>) {
    let count = cos_out.len();
    if count == 0 {
        return;
    }
    let (s1, c1) = (TAU * frac).sin_cos();
    let (mut c, mut s) = (1.0, 0.0);
    for k in 0..count {
        if k % ANCHOR == 0 && k > 0 {
            let (sa, ca) = (TAU * wrap_unit(k as f64 * frac)).sin_cos();
            c = ca;
            s = sa;
        }
        cos_out[k] = c;
        if let Some(so) = sin_out.as_deref_mut() {
            so[k] = s;
        }
        let nc = c * c1 - s * s1;
        s = s * c1 + c * s1;
        c = nc;
    }
}

#[derive(Debug)]
struct TorusIndex {
    /// 1-based circle index pairs, sorted by eigenvalue then lexicographically.
    pairs: Vec<(usize, usize)>,
}

impl TorusIndex {
    fn build(capacity: usize) -> Self {
        let mut max_freq = ((capacity as f64 / PI).sqrt() as usize) + 2;
        loop {
            let cap_lambda = (TAU * max_freq as f64).powi(2);
            let top = 2 * max_freq + 1;
            let mut all: Vec<(f64, usize, usize)> = Vec::with_capacity(top * top);
            for j1 in 1..=top {
                for j2 in 1..=top {
                    let lam = circle_lambda(j1) + circle_lambda(j2);
                    if lam <= cap_lambda {
                        all.push((lam, j1, j2));
                    }
                }
            }
            if all.len() >= capacity {
                all.sort_by(|a, b| {
                    a.0.partial_cmp(&b.0)
                        .unwrap()
                        .then(a.1.cmp(&b.1))
                        .then(a.2.cmp(&b.2))
                });
                all.truncate(capacity);
                return TorusIndex {
                    pairs: all.into_iter().map(|(_, a, b)| (a, b)).collect(),
                };
            }
            max_freq *= 2;
        }
    }
}

/// An indexed orthonormal system on one of the concrete spaces.
#[derive(Debug, Clone)]
pub struct BasisFamily {
    space: SpaceId,
    torus: Option<Arc<TorusIndex>>,
}

impl BasisFamily {
    pub fn new(space: SpaceId) -> Self {
        match space {
            SpaceId::TorusD2 => Self::torus_d2(DEFAULT_TORUS_CAPACITY),
            _ => BasisFamily { space, torus: None },
        }
    }

    pub fn circle() -> Self {
        Self::new(SpaceId::CircleD1)
    }

    pub fn interval() -> Self {
        Self::new(SpaceId::IntervalCosine)
    }

    /// Torus family indexing the first `capacity` tensor-product elements.
    pub fn torus_d2(capacity: usize) -> Self {
        BasisFamily {
            space: SpaceId::TorusD2,
            torus: Some(Arc::new(TorusIndex::build(capacity.max(1)))),
        }
    }

    pub fn space(&self) -> SpaceId {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Largest valid index, if the family is finite.
    pub fn capacity(&self) -> Option<usize> {
        self.torus.as_ref().map(|t| t.pairs.len())
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j == 0 {
            return Err(Error::domain("basis indices start at 1"));
        }
        if let Some(cap) = self.capacity() {
            if j > cap {
                return Err(Error::domain(format!(
                    "torus index {j} exceeds indexed capacity {cap}"
                )));
            }
        }
        Ok(())
    }

    /// Canonical coordinates: circle and torus wrap modulo 1, the interval reflects.
    pub fn canonical(&self, x: Point) -> Point {
        match self.space {
            SpaceId::CircleD1 => Point::d1(wrap_unit(x.x())),
            SpaceId::TorusD2 => Point::d2(wrap_unit(x.x()), wrap_unit(x.y())),
            SpaceId::IntervalCosine => Point::d1(reflect_unit(x.x())),
        }
    }

    /// `u_j(x)`.
    pub fn evaluate(&self, j: usize, x: Point) -> Result<f64> {
        self.check_index(j)?;
        Ok(self.value_unchecked(j, x))
    }

    fn value_unchecked(&self, j: usize, x: Point) -> f64 {
        match self.space {
            SpaceId::CircleD1 => circle_value(j, x.x()),
            SpaceId::IntervalCosine => {
                if j == 1 {
                    1.0
                } else {
                    let t = reflect_unit(x.x());
                    SQRT_2 * (PI * wrap_unit((j - 1) as f64 * t / 2.0) * 2.0).cos()
                }
            }
            SpaceId::TorusD2 => {
                let (a, b) = self.torus.as_ref().unwrap().pairs[j - 1];
                circle_value(a, x.x()) * circle_value(b, x.y())
            }
        }
    }

    /// Laplacian eigenvalue `λ_j`.
    pub fn laplacian_eigenvalue(&self, j: usize) -> Result<f64> {
        self.check_index(j)?;
        Ok(self.lambda_unchecked(j))
    }

    pub(crate) fn lambda_unchecked(&self, j: usize) -> f64 {
        match self.space {
            SpaceId::CircleD1 => circle_lambda(j),
            SpaceId::IntervalCosine => (PI * (j - 1) as f64).powi(2),
            SpaceId::TorusD2 => {
                let (a, b) = self.torus.as_ref().unwrap().pairs[j - 1];
                circle_lambda(a) + circle_lambda(b)
            }
        }
    }

    /// Upper bound on `sup_x |u_j(x)|²` over all `j`.
    pub fn sup_square_bound(&self) -> f64 {
        match self.space {
            SpaceId::TorusD2 => 4.0,
            _ => 2.0,
        }
    }

    /// Writes `u_1(x), …, u_count(x)` into `out`.
    pub fn eval_all(&self, x: Point, out: &mut [f64]) -> Result<()> {
        let count = out.len();
        if count == 0 {
            return Ok(());
        }
        self.check_index(count)?;
        match self.space {
            SpaceId::CircleD1 => {
                let frac = wrap_unit(x.x());
                let freqs = count / 2 + 1;
                let mut c = vec![0.0; freqs];
                let mut s = vec![0.0; freqs];
                trig_multiples(frac, &mut c, Some(&mut s));
                out[0] = 1.0;
                for j in 2..=count {
                    let m = j / 2;
                    out[j - 1] = SQRT_2 * if j % 2 == 0 { c[m] } else { s[m] };
                }
            }
            SpaceId::IntervalCosine => {
                // cos(πkt) = cos(2πk·t/2)
                let half = reflect_unit(x.x()) / 2.0;
                trig_multiples(half, out, None);
                for v in out.iter_mut().skip(1) {
                    *v *= SQRT_2;
                }
                out[0] = 1.0;
            }
            SpaceId::TorusD2 => {
                let pairs = &self.torus.as_ref().unwrap().pairs[..count];
                let top = pairs.iter().map(|&(a, b)| a.max(b)).max().unwrap();
                let circle = BasisFamily::circle();
                let mut ux = vec![0.0; top];
                let mut uy = vec![0.0; top];
                circle.eval_all(Point::d1(x.x()), &mut ux)?;
                circle.eval_all(Point::d1(x.y()), &mut uy)?;
                for (o, &(a, b)) in out.iter_mut().zip(pairs) {
                    *o = ux[a - 1] * uy[b - 1];
                }
            }
        }
        Ok(())
    }

    /// `n × count` matrix with entries `u_j(x_i)`.
    pub fn design_matrix(&self, points: &[Point], count: usize) -> Result<Mat<f64>> {
        let mut m = Mat::<f64>::zeros(points.len(), count);
        let mut row = vec![0.0; count];
        for (i, &p) in points.iter().enumerate() {
            self.eval_all(p, &mut row)?;
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    /// Index of the torus element `u_a ⊗ u_b`, if indexed.
    pub fn torus_position(&self, a: usize, b: usize) -> Option<usize> {
        self.torus
            .as_ref()?
            .pairs
            .iter()
            .position(|&p| p == (a, b))
            .map(|k| k + 1)
    }
}

/// Nodes `x_k` with weights summing to one under the reference measure.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    /// Integration rule with about `size` nodes: trapezoid on periodic spaces,
    /// composite 8-point Gauss–Legendre on the interval.
    pub fn for_space(space: SpaceId, size: usize) -> Self {
        let size = size.max(1);
        match space {
            SpaceId::CircleD1 => Quadrature {
                points: (0..size).map(|k| Point::d1(k as f64 / size as f64)).collect(),
                weights: vec![1.0 / size as f64; size],
            },
            SpaceId::TorusD2 => {
                let g = (size as f64).sqrt().ceil() as usize;
                let mut points = Vec::with_capacity(g * g);
                for a in 0..g {
                    for b in 0..g {
                        points.push(Point::d2(a as f64 / g as f64, b as f64 / g as f64));
                    }
                }
                Quadrature {
                    weights: vec![1.0 / (g * g) as f64; g * g],
                    points,
                }
            }
            SpaceId::IntervalCosine => {
                const ORDER: usize = 8;
                let panels = size.div_ceil(ORDER);
                let (nodes, w) = gauss_legendre(ORDER);
                let h = 1.0 / panels as f64;
                let mut points = Vec::with_capacity(panels * ORDER);
                let mut weights = Vec::with_capacity(panels * ORDER);
                for p in 0..panels {
                    let mid = (p as f64 + 0.5) * h;
                    for (t, wt) in nodes.iter().zip(&w) {
                        points.push(Point::d1(mid + 0.5 * h * t));
                        weights.push(0.5 * h * wt);
                    }
                }
                Quadrature { points, weights }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(Point) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&p, &w)| w * f(p))
            .sum()
    }

    /// Reweights by a density, giving a rule for `p₀ dμ`.
    pub fn weighted(&self, measure: &DesignMeasure) -> Quadrature {
        Quadrature {
            points: self.points.clone(),
            weights: self
                .points
                .iter()
                .zip(&self.weights)
                .map(|(&p, &w)| w * measure.density(p))
                .collect(),
        }
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Uniform evaluation grid used for sup-norm statistics.
pub fn sup_grid(space: SpaceId, size: usize) -> Vec<Point> {
    let size = size.max(2);
    match space {
        SpaceId::CircleD1 => (0..size).map(|k| Point::d1(k as f64 / size as f64)).collect(),
        SpaceId::IntervalCosine => (0..size)
            .map(|k| Point::d1(k as f64 / (size - 1) as f64))
            .collect(),
        SpaceId::TorusD2 => Quadrature::for_space(space, size).points,
    }
}

/// Density `p₀` relative to the reference measure, acting on the first coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Density {
    Uniform,
    /// `p₀(t) = 1 + slope·(t − ½)`; `slope = 1` gives `0.5 + t`.
    Linear { slope: f64 },
    /// `p₀(t) = 1 + amplitude·cos(2πt)`.
    Cosine { amplitude: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignMeasure {
    pub space: SpaceId,
    pub density: Density,
}

impl DesignMeasure {
    pub fn new(space: SpaceId, density: Density) -> Result<Self> {
        match density {
            Density::Linear { slope } if !(slope.abs() < 2.0) => {
                return Err(Error::domain(format!("linear density slope {slope} must satisfy |slope| < 2")))
            }
            Density::Cosine { amplitude } if !(amplitude.abs() < 1.0) => {
                return Err(Error::domain(format!("cosine density amplitude {amplitude} must satisfy |a| < 1")))
            }
            _ => {}
        }
        Ok(DesignMeasure { space, density })
    }

    pub fn uniform(space: SpaceId) -> Self {
        DesignMeasure {
            space,
            density: Density::Uniform,
        }
    }

    fn coordinate(&self, x: Point) -> f64 {
        match self.space {
            SpaceId::IntervalCosine => reflect_unit(x.x()),
            _ => wrap_unit(x.x()),
        }
    }

    pub fn density(&self, x: Point) -> f64 {
        let t = self.coordinate(x);
        match self.density {
            Density::Uniform => 1.0,
            Density::Linear { slope } => 1.0 + slope * (t - 0.5),
            Density::Cosine { amplitude } => 1.0 + amplitude * (TAU * t).cos(),
        }
    }

    /// `(p_-, p_+)`.
    pub fn bounds(&self) -> (f64, f64) {
        match self.density {
            Density::Uniform => (1.0, 1.0),
            Density::Linear { slope } => (1.0 - slope.abs() / 2.0, 1.0 + slope.abs() / 2.0),
            Density::Cosine { amplitude } => (1.0 - amplitude.abs(), 1.0 + amplitude.abs()),
        }
    }

    fn inverse_cdf(&self, u: f64) -> f64 {
        match self.density {
            Density::Uniform => u,
            Density::Linear { slope } => {
                if slope.abs() < 1e-12 {
                    return u;
                }
                // F(t) = (1 − slope/2)t + slope·t²/2
                let b = 1.0 - slope / 2.0;
                let t = 2.0 * u / (b + (b * b + 2.0 * slope * u).sqrt());
                t.clamp(0.0, 1.0)
            }
            Density::Cosine { amplitude } => {
                // F(t) = t + a sin(2πt)/(2π), strictly increasing for |a| < 1
                let cdf = |t: f64| t + amplitude * (TAU * t).sin() / TAU;
                let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    if cdf(mid) > u {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let mut t = 0.5 * (lo + hi);
                for _ in 0..3 {
                    t -= (cdf(t) - u) / (1.0 + amplitude * (TAU * t).cos());
                }
                t
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let u: f64 = rng.random();
        let t = self.inverse_cdf(u);
        match self.space {
            SpaceId::TorusD2 => Point::d2(t, rng.random()),
            _ => Point::d1(t),
        }
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Point> {
        (0..n).map(|_| self.sample(rng)).collect()
    }

    /// `∫ p₀ dμ` on a quadrature of the given size.
    pub fn total_mass(&self, size: usize) -> f64 {
        Quadrature::for_space(self.space, size).integrate(|x| self.density(x))
    }
}

/// A regression truth `f₀`.
#[derive(Debug, Clone)]
pub enum TestFunction {
    /// `Σ c_j u_j` in a given family.
    Series {
        family: BasisFamily,
        coefficients: Vec<f64>,
    },
    /// `Σ_{l≥0} 2^{-ls} cos(2π 2^l x)`, truncated once `2^{-ls} < 1e-14`.
    Weierstrass { s: f64 },
}

impl TestFunction {
    pub fn series(family: BasisFamily, coefficients: Vec<f64>) -> Self {
        TestFunction::Series {
            family,
            coefficients,
        }
    }

    pub fn weierstrass(s: f64) -> Result<Self> {
        if !(s > 0.0) {
            return Err(Error::domain(format!("weierstrass smoothness {s} must be positive")));
        }
        Ok(TestFunction::Weierstrass { s })
    }

    /// Series with coefficients `(1 + λ_j)^{-(s/2 + d/4)}`, `j ≤ count`.
    ///
    /// The squared tail beyond `J` decays like `J^{-2s/d}`, so sup- and
    /// L²-approximation orders match smoothness `s` up to a logarithm.
    pub fn power_law(family: BasisFamily, s: f64, count: usize) -> Result<Self> {
        let expo = s / 2.0 + family.dim() as f64 / 4.0;
        let coefficients = (1..=count)
            .map(|j| Ok((1.0 + family.laplacian_eigenvalue(j)?).powf(-expo)))
            .collect::<Result<Vec<_>>>()?;
        Ok(TestFunction::series(family, coefficients))
    }

    fn weierstrass_terms(s: f64) -> usize {
        (WEIERSTRASS_CUTOFF.log2() / -s).floor() as usize + 1
    }

    pub fn eval(&self, x: Point) -> f64 {
        match self {
            TestFunction::Series {
                family,
                coefficients,
            } => {
                let mut u = vec![0.0; coefficients.len()];
                family
                    .eval_all(x, &mut u)
                    .expect("series length exceeds family capacity");
                u.iter().zip(coefficients).map(|(a, b)| a * b).sum()
            }
            TestFunction::Weierstrass { s } => {
                let t = wrap_unit(x.x());
                let mut sum = 0.0;
                let mut scale = 1.0;
                let mut amp = 1.0;
                for _ in 0..Self::weierstrass_terms(*s) {
                    sum += amp * (TAU * (t * scale).fract()).cos();
                    scale *= 2.0;
                    amp *= (-s).exp2();
                }
                sum
            }
        }
    }

    pub fn eval_many(&self, points: &[Point]) -> Vec<f64> {
        points.iter().map(|&p| self.eval(p)).collect()
    }

    /// Exact coefficients `⟨f, u_j⟩` for `j ≤ count` when available in closed form.
    pub fn coefficients(&self, family: &BasisFamily, count: usize) -> Option<Vec<f64>> {
        match self {
            TestFunction::Series {
                family: own,
                coefficients,
            } => {
                if own.space() != family.space() {
                    return None;
                }
                let mut c = coefficients.clone();
                c.resize(count, 0.0);
                Some(c)
            }
            TestFunction::Weierstrass { s } => {
                let mut c = vec![0.0; count];
                for l in 0..Self::weierstrass_terms(*s) {
                    let m = 1usize.checked_shl(l as u32)?;
                    let amp = (-(l as f64) * s).exp2() / SQRT_2;
                    let j = match family.space() {
                        SpaceId::CircleD1 => m.checked_mul(2),
                        SpaceId::IntervalCosine => m.checked_mul(2).map(|v| v + 1),
                        SpaceId::TorusD2 => m
                            .checked_mul(2)
                            .and_then(|a| (a <= 2 * count + 1).then_some(a))
                            .and_then(|a| family.torus_position(a, 1)),
                    };
                    match j {
                        Some(j) if j <= count => c[j - 1] = amp,
                        _ => break,
                    }
                }
                Some(c)
            }
        }
    }

    /// `‖f‖²` in `L²(μ)` with the uniform reference measure.
    pub fn l2_norm_sq(&self) -> f64 {
        match self {
            TestFunction::Series { coefficients, .. } => coefficients.iter().map(|c| c * c).sum(),
            TestFunction::Weierstrass { s } => (0..Self::weierstrass_terms(*s))
                .map(|l| (-2.0 * l as f64 * s).exp2() / 2.0)
                .sum(),
        }
    }
}

fn check_grid(grid_size: usize) -> Result<()> {
    if grid_size < 1024 {
        return Err(Error::domain(format!("grid size {grid_size} below the minimum 1024")));
    }
    Ok(())
}

/// Grid maximum of `√((1/J) Σ_{j≤J} u_j²)`; a lower bound on `C_J`.
pub fn cj_constant(family: &BasisFamily, j_count: usize, grid_size: usize) -> Result<f64> {
    if j_count == 0 {
        return Err(Error::domain("J must be at least 1"));
    }
    check_grid(grid_size)?;
    let mut u = vec![0.0; j_count];
    let mut best: f64 = 0.0;
    for p in sup_grid(family.space(), grid_size) {
        family.eval_all(p, &mut u)?;
        let q = u.iter().map(|v| v * v).sum::<f64>() / j_count as f64;
        best = best.max(q);
    }
    Ok(best.sqrt())
}

/// Projection coefficients of `f` on `u_1..u_count`.
pub fn projection_coefficients(
    family: &BasisFamily,
    f: &TestFunction,
    count: usize,
    quad_size: usize,
) -> Result<Vec<f64>> {
    if let Some(c) = f.coefficients(family, count) {
        return Ok(c);
    }
    let quad = Quadrature::for_space(family.space(), quad_size.max(8 * count));
    let mut c = vec![0.0; count];
    let mut u = vec![0.0; count];
    for (&p, &w) in quad.points.iter().zip(&quad.weights) {
        family.eval_all(p, &mut u)?;
        let fv = f.eval(p);
        for (cj, uj) in c.iter_mut().zip(&u) {
            *cj += w * fv * uj;
        }
    }
    Ok(c)
}

/// Grid sup of the projection residuals `E_1, …, E_{j_max}`.
pub fn approx_error_profile(
    family: &BasisFamily,
    f: &TestFunction,
    j_max: usize,
    grid_size: usize,
) -> Result<Vec<f64>> {
    if j_max == 0 {
        return Err(Error::domain("J must be at least 1"));
    }
    check_grid(grid_size)?;
    let grid = sup_grid(family.space(), grid_size);
    let c = projection_coefficients(family, f, j_max, grid_size)?;
    let mut resid = f.eval_many(&grid);
    let u = family.design_matrix(&grid, j_max)?;
    let mut out = Vec::with_capacity(j_max);
    for j in 0..j_max {
        let mut sup: f64 = 0.0;
        for (i, r) in resid.iter_mut().enumerate() {
            *r -= c[j] * u[(i, j)];
            sup = sup.max(r.abs());
        }
        out.push(sup);
    }
    Ok(out)
}

/// `‖f − P_J f‖_∞` on the grid, with `P_J` the `L²(μ)` projection onto `V_J`.
///
/// This upper-bounds the best-approximation error `E_J(f)_∞` up to grid
/// resolution and has the same order in `J` for the implemented bases.
pub fn approx_error_sup(
    family: &BasisFamily,
    f: &TestFunction,
    j_count: usize,
    grid_size: usize,
) -> Result<f64> {
    Ok(*approx_error_profile(family, f, j_count, grid_size)?
        .last()
        .unwrap())
}

/// `‖f‖_∞ + max_{J ≤ J_max} J^{s/d} E_J(f)_∞` on the grid.
pub fn besov_norm_proxy(
    family: &BasisFamily,
    f: &TestFunction,
    s: f64,
    j_max: usize,
    grid_size: usize,
) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::domain("smoothness must be positive"));
    }
    if j_max < 8 {
        return Err(Error::domain("J_max must be at least 8"));
    }
    check_grid(grid_size)?;
    let grid = sup_grid(family.space(), grid_size);
    let sup = f.eval_many(&grid).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let d = family.dim() as f64;
    let weighted = approx_error_profile(family, f, j_max, grid_size)?
        .into_iter()
        .enumerate()
        .map(|(k, e)| ((k + 1) as f64).powf(s / d) * e)
        .fold(0.0_f64, f64::max);
    Ok(sup + weighted)
}

/// Doubles the grid from `start` until the statistic moves by less than 0.1%
/// or the 2^16 cap is hit. Returns the final value and grid size.
pub fn refine_grid(start: usize, mut stat: impl FnMut(usize) -> Result<f64>) -> Result<(f64, usize)> {
    let mut size = start.max(1024);
    let mut prev = stat(size)?;
    while size < MAX_GRID {
        let next_size = (size * 2).min(MAX_GRID);
        let next = stat(next_size)?;
        let scale = prev.abs().max(next.abs());
        size = next_size;
        if scale == 0.0 || (next - prev).abs() <= GRID_REL_TOL * scale {
            return Ok((next, size));
        }
        prev = next;
    }
    Ok((prev, size))
}

/// Writes `(J, value)` rows as CSV.
pub fn write_grid_csv<W: Write>(mut w: W, header: &str, rows: &[(usize, f64)]) -> std::io::Result<()> {
    writeln!(w, "J,{header}")?;
    for (j, v) in rows {
        writeln!(w, "{j},{v}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn circle_basis_examples() {
        let c = BasisFamily::circle();
        assert_eq!(c.evaluate(1, 0.37.into()).unwrap(), 1.0);
        assert!(close(c.evaluate(2, 0.0.into()).unwrap(), SQRT_2, 1e-15));
        // direct trigonometric oracle
        let oracle = SQRT_2 * (TAU * 0.25_f64).sin();
        assert!(close(c.evaluate(3, 0.25.into()).unwrap(), oracle, 1e-15));
        assert!(close(oracle, SQRT_2, 1e-15));
        assert_eq!(c.laplacian_eigenvalue(1).unwrap(), 0.0);
        assert!(close(c.laplacian_eigenvalue(5).unwrap(), (2.0 * TAU).powi(2), 1e-9));
    }

    #[test]
    fn index_zero_is_a_domain_error() {
        for fam in [BasisFamily::circle(), BasisFamily::interval(), BasisFamily::torus_d2(64)] {
            assert!(matches!(fam.evaluate(0, Point::d1(0.1)), Err(Error::Domain(_))));
        }
        assert!(BasisFamily::torus_d2(16).evaluate(17, Point::d2(0.1, 0.2)).is_err());
    }

    #[test]
    fn coordinates_wrap_instead_of_failing() {
        let c = BasisFamily::circle();
        for j in 1..9 {
            let a = c.evaluate(j, Point::d1(0.3)).unwrap();
            let b = c.evaluate(j, Point::d1(-1.7)).unwrap();
            let d = c.evaluate(j, Point::d1(4.3)).unwrap();
            assert!(close(a, b, 1e-12) && close(a, d, 1e-12));
        }
        let i = BasisFamily::interval();
        for j in 1..9 {
            let a = i.evaluate(j, Point::d1(0.3)).unwrap();
            assert!(close(a, i.evaluate(j, Point::d1(-0.3)).unwrap(), 1e-12));
            assert!(close(a, i.evaluate(j, Point::d1(1.7)).unwrap(), 1e-12));
        }
    }

    #[test]
    fn eval_all_agrees_with_pointwise() {
        for fam in [BasisFamily::circle(), BasisFamily::interval(), BasisFamily::torus_d2(300)] {
            let x = Point::d2(0.2137, 0.771);
            let mut out = vec![0.0; 300];
            fam.eval_all(x, &mut out).unwrap();
            for j in 1..=300 {
                assert!(close(out[j - 1], fam.evaluate(j, x).unwrap(), 1e-11), "{:?} j={j}", fam.space());
            }
        }
    }

    #[test]
    fn eigenvalues_are_non_decreasing_and_start_at_zero() {
        for fam in [BasisFamily::circle(), BasisFamily::interval(), BasisFamily::torus_d2(2000)] {
            assert_eq!(fam.laplacian_eigenvalue(1).unwrap(), 0.0);
            let mut prev = 0.0;
            for j in 1..=2000 {
                let l = fam.laplacian_eigenvalue(j).unwrap();
                assert!(l >= prev);
                prev = l;
            }
        }
    }

    #[test]
    fn torus_eigenvalue_growth_is_linear() {
        let fam = BasisFamily::torus_d2(4096);
        for j in [256usize, 1024, 4096] {
            let r = fam.laplacian_eigenvalue(j).unwrap() / j as f64;
            // Weyl: λ_j ≈ 4π j on the unit torus
            assert!(r > 0.8 * 4.0 * PI && r < 1.2 * 4.0 * PI, "ratio {r}");
        }
    }

    #[test]
    fn quadrature_orthonormality() {
        for (fam, size) in [
            (BasisFamily::circle(), 4096),
            (BasisFamily::interval(), 4096),
            (BasisFamily::torus_d2(64), 4096),
        ] {
            let q = Quadrature::for_space(fam.space(), size);
            let u = fam.design_matrix(&q.points, 64).unwrap();
            for j in 0..64 {
                for k in 0..64 {
                    let ip: f64 = (0..q.len()).map(|i| q.weights[i] * u[(i, j)] * u[(i, k)]).sum();
                    let target = if j == k { 1.0 } else { 0.0 };
                    assert!((ip - target).abs() <= 1e-8, "{:?} {j} {k} {ip}", fam.space());
                }
            }
        }
    }

    #[test]
    fn design_measures_are_normalized_and_bounded() {
        let measures = [
            DesignMeasure::new(SpaceId::IntervalCosine, Density::Linear { slope: 1.0 }).unwrap(),
            DesignMeasure::new(SpaceId::CircleD1, Density::Cosine { amplitude: 0.6 }).unwrap(),
            DesignMeasure::uniform(SpaceId::TorusD2),
        ];
        for m in measures {
            assert!((m.total_mass(4096) - 1.0).abs() < 1e-8);
            let (lo, hi) = m.bounds();
            for p in sup_grid(m.space, 4096) {
                let d = m.density(p);
                assert!(d >= lo - 1e-12 && d <= hi + 1e-12);
            }
        }
        assert!(DesignMeasure::new(SpaceId::CircleD1, Density::Cosine { amplitude: 1.0 }).is_err());
    }

    #[test]
    fn linear_density_sampler_matches_cdf() {
        let m = DesignMeasure::new(SpaceId::IntervalCosine, Density::Linear { slope: 1.0 }).unwrap();
        let mut rng = seeded(11);
        let xs = m.sample_n(200_000, &mut rng);
        for q in [0.25, 0.5, 0.75] {
            let frac = xs.iter().filter(|p| p.x() <= q).count() as f64 / xs.len() as f64;
            let cdf = 0.5 * q + q * q / 2.0;
            assert!((frac - cdf).abs() < 0.005, "{q}: {frac} vs {cdf}");
        }
    }

    #[test]
    fn cosine_density_inverse_cdf_round_trips() {
        let m = DesignMeasure::new(SpaceId::CircleD1, Density::Cosine { amplitude: 0.7 }).unwrap();
        for k in 0..100 {
            let u = (k as f64 + 0.5) / 100.0;
            let t = m.inverse_cdf(u);
            let f = t + 0.7 * (TAU * t).sin() / TAU;
            assert!((f - u).abs() < 1e-12);
        }
    }

    #[test]
    fn cj_examples() {
        let c = BasisFamily::circle();
        assert!(close(cj_constant(&c, 3, 4096).unwrap(), 1.0, 1e-12));
        // maximise (1 + 2cos²(2πx))/2 at x = 0
        assert!(close(cj_constant(&c, 2, 4096).unwrap(), 1.5_f64.sqrt(), 1e-12));
        assert!(cj_constant(&c, 2, 512).is_err());
    }

    #[test]
    fn cj_never_exceeds_sqrt_two_on_the_circle() {
        let c = BasisFamily::circle();
        for j in (1..=1024).step_by(37).chain([1024]) {
            assert!(cj_constant(&c, j, 4096).unwrap() <= SQRT_2 + 1e-12);
        }
    }

    #[test]
    fn projection_reproduces_v_j() {
        let c = BasisFamily::circle();
        let f = TestFunction::series(c.clone(), vec![0.3, -1.0, 0.5, 0.0, 2.0]);
        assert!(approx_error_sup(&c, &f, 5, 4096).unwrap() < 1e-10);
        assert!(approx_error_sup(&c, &f, 9, 4096).unwrap() < 1e-10);
        // quadrature path (no closed form in a different family)
        let i = BasisFamily::interval();
        let g = TestFunction::series(i.clone(), vec![0.0, 1.0, 0.25]);
        let via_quad = projection_coefficients(&c, &g, 3, 4096);
        assert!(via_quad.is_ok());
    }

    #[test]
    fn weierstrass_residual_matches_geometric_tail() {
        let c = BasisFamily::circle();
        let s = 0.5;
        let f = TestFunction::weierstrass(s).unwrap();
        for big_l in [2usize, 4, 6] {
            // indices up to 2·2^L + 1 cover every frequency ≤ 2^L
            let j = 2 * (1 << big_l) + 1;
            let e = approx_error_sup(&c, &f, j, 4096).unwrap();
            let tail = (-(big_l as f64 + 1.0) * s).exp2() / (1.0 - (-s).exp2());
            assert!((e - tail).abs() < 1e-12, "L={big_l}: {e} vs {tail}");
        }
    }

    #[test]
    fn weierstrass_rate_ratio_is_bounded() {
        let c = BasisFamily::circle();
        for s in [0.3, 0.5, 0.8] {
            let f = TestFunction::weierstrass(s).unwrap();
            let prof = approx_error_profile(&c, &f, 1 << 9, 4096).unwrap();
            let ratios: Vec<f64> = (3..=9)
                .map(|k| {
                    let j = 1usize << k;
                    prof[j - 1] * (j as f64).powf(s)
                })
                .collect();
            let (lo, hi) = ratios
                .iter()
                .fold((f64::MAX, 0.0_f64), |(a, b), &r| (a.min(r), b.max(r)));
            assert!(hi / lo < 3.0, "s={s}: {ratios:?}");
        }
    }

    #[test]
    fn besov_proxy_examples() {
        let c = BasisFamily::circle();
        let zero = TestFunction::series(c.clone(), vec![0.0; 4]);
        assert_eq!(besov_norm_proxy(&c, &zero, 1.0, 16, 4096).unwrap(), 0.0);

        let mut coef = vec![0.0; 5];
        coef[4] = 1.0;
        let u5 = TestFunction::series(c.clone(), coef);
        let p = besov_norm_proxy(&c, &u5, 1.0, 16, 4096).unwrap();
        assert!(close(p, 5.0 * SQRT_2, 1e-9), "{p}");
        assert!(close(besov_norm_proxy(&c, &u5, 1.0, 64, 4096).unwrap(), p, 1e-12));

        let w = TestFunction::weierstrass(0.5).unwrap();
        let a = besov_norm_proxy(&c, &w, 0.5, 256, 4096).unwrap();
        let b = besov_norm_proxy(&c, &w, 0.5, 512, 4096).unwrap();
        assert!((b - a).abs() / a < 0.05, "{a} {b}");
    }

    #[test]
    fn grid_refinement_stops_on_converged_statistic() {
        let c = BasisFamily::circle();
        let (v, size) = refine_grid(4096, |g| cj_constant(&c, 7, g)).unwrap();
        assert!(close(v, 1.0, 1e-12));
        assert_eq!(size, 8192);
        let (_, capped) = refine_grid(1 << 15, |g| Ok(g as f64)).unwrap();
        assert_eq!(capped, MAX_GRID);
    }

    #[test]
    fn grid_csv_rows() {
        let mut buf = Vec::new();
        write_grid_csv(&mut buf, "cj", &[(1, 1.0), (2, 1.5)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "J,cj\n1,1\n2,1.5\n");
    }

    #[test]
    fn power_law_tail_rate() {
        let c = BasisFamily::circle();
        let f = TestFunction::power_law(c.clone(), 0.8, 4097).unwrap();
        let coef = f.coefficients(&c, 4097).unwrap();
        let tail = |j: usize| coef[j..].iter().map(|v| v * v).sum::<f64>();
        let slope = (tail(512).ln() - tail(64).ln()) / (512f64.ln() - 64f64.ln());
        assert!((slope + 1.6).abs() < 0.1, "{slope}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn approx_error_non_increasing_for_weierstrass(s in 0.2f64..1.5) {
                let c = BasisFamily::circle();
                let f = TestFunction::weierstrass(s).unwrap();
                let prof = approx_error_profile(&c, &f, 200, 2048).unwrap();
                for w in prof.windows(2) {
                    prop_assert!(w[1] <= w[0] + 1e-12);
                }
            }

            #[test]
            fn approx_error_non_increasing_for_positive_cosine_series(
                coef in proptest::collection::vec(0.0f64..1.0, 1..24)
            ) {
                let c = BasisFamily::circle();
                let mut full = vec![0.0; 2 * coef.len() + 1];
                for (m, a) in coef.iter().enumerate() {
                    full[2 * (m + 1) - 1] = *a;
                }
                let f = TestFunction::series(c.clone(), full.clone());
                let prof = approx_error_profile(&c, &f, full.len(), 2048).unwrap();
                for w in prof.windows(2) {
                    prop_assert!(w[1] <= w[0] + 1e-12);
                }
            }

            #[test]
            fn besov_proxy_monotone_in_s(s1 in 0.1f64..1.0, ds in 0.0f64..1.0) {
                let c = BasisFamily::circle();
                let f = TestFunction::weierstrass(0.6).unwrap();
                let a = besov_norm_proxy(&c, &f, s1, 32, 1024).unwrap();
                let b = besov_norm_proxy(&c, &f, s1 + ds, 32, 1024).unwrap();
                prop_assert!(b >= a - 1e-12);
            }
        }
    }
}
