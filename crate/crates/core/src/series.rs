//! Graded linear series given by explicit bases of polynomial subspaces.
//!
//! Every series here is monomial up to a fixed divisor factor, so `W_k` is
//! described by a finite set of exponent vectors. Dimension counts, growth
//! fits, Okounkov bodies and integral closures are all exact lattice
//! computations on those sets.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::geometry::{FiberDegree, SpaceModel, Structure};

/// One generator of a monomial semigroup: the monomial `z^exponent` sitting
/// in degree `degree`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generator {
    pub degree: u32,
    pub exponent: Vec<u32>,
}

impl Generator {
    pub fn new(degree: u32, exponent: Vec<u32>) -> Self {
        Self { degree, exponent }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Root {
    pub z: Complex64,
    pub multiplicity: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Variant {
    Full,
    /// Monomials of the graded semigroup generated by `generators`.
    Monomial { generators: Vec<Generator> },
    /// Monomials `z^a` with `a / k` in the convex hull of the generator
    /// ratios: the saturation of a monomial series.
    Closure { generators: Vec<Generator> },
    /// Base series pulled back to a disjoint union or to a product.
    Pullback { base: Box<SeriesSpec> },
    EvenDegree,
    /// `W_k = base_k * prod (z - z_j)^{k m_j}`.
    DivisorShift { base: Box<SeriesSpec>, roots: Vec<Root> },
    /// `W'_k` spanned by `k`-fold products of elements of `base_m`.
    SymPower { base: Box<SeriesSpec>, m: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesSpec {
    pub variant: Variant,
    pub space: SpaceModel,
    /// `d` in `O(d)`, per factor.
    pub degree: u32,
}

/// Exponent vectors of a monomial basis of `W_k`, in lexicographic order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisList {
    pub k: u32,
    pub exponents: Vec<Vec<u32>>,
    /// Chart degree `k d` of the ambient sections, per factor.
    pub box_degree: u32,
    /// Divisor factor `prod (z - z_j)^{m_j}` raised to the power `k`.
    pub divisor: Vec<Root>,
}

impl BasisList {
    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    /// Whether some basis monomial involves the second factor.
    pub fn uses_second_factor(&self) -> bool {
        self.exponents.iter().any(|e| e.get(1).copied().unwrap_or(0) > 0)
    }
}

impl SeriesSpec {
    pub fn full(degree: u32) -> Self {
        Self { variant: Variant::Full, space: SpaceModel::sphere(), degree }
    }

    pub fn full_on(space: SpaceModel, degree: u32) -> Self {
        Self { variant: Variant::Full, space, degree }
    }

    pub fn even_degree() -> Self {
        Self { variant: Variant::EvenDegree, space: SpaceModel::sphere(), degree: 1 }
    }

    pub fn monomial(space: SpaceModel, degree: u32, generators: Vec<Generator>) -> Result<Self> {
        let spec = Self { variant: Variant::Monomial { generators }, space, degree };
        spec.validate()?;
        Ok(spec)
    }

    /// `a + b <= k` on the product of two spheres.
    pub fn simplex() -> Self {
        let generators =
            vec![Generator::new(1, vec![0, 0]), Generator::new(1, vec![1, 0]), Generator::new(1, vec![0, 1])];
        Self { variant: Variant::Monomial { generators }, space: SpaceModel::product(), degree: 1 }
    }

    pub fn pullback(base: SeriesSpec, space: SpaceModel) -> Result<Self> {
        let spec = Self { degree: base.degree, variant: Variant::Pullback { base: Box::new(base) }, space };
        spec.validate()?;
        Ok(spec)
    }

    pub fn divisor_shift(base: SeriesSpec, roots: Vec<Root>) -> Result<Self> {
        let spec = Self { degree: base.degree, space: base.space, variant: Variant::DivisorShift { base: Box::new(base), roots } };
        spec.validate()?;
        Ok(spec)
    }

    pub fn sym_power(base: SeriesSpec, m: u32) -> Result<Self> {
        let spec = Self { degree: base.degree, space: base.space, variant: Variant::SymPower { base: Box::new(base), m } };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        if self.degree == 0 {
            return Err(invalid("line bundle degree must be positive"));
        }
        let factors = self.space.factors();
        match &self.variant {
            Variant::Full | Variant::EvenDegree => {
                if matches!(self.variant, Variant::EvenDegree) && self.space.structure != Structure::SingleSphere {
                    return Err(LabError::UnsupportedSeries("even-degree series lives on one sphere".into()));
                }
                Ok(())
            }
            Variant::Monomial { generators } | Variant::Closure { generators } => {
                if generators.is_empty() {
                    return Err(LabError::EmptySeries("monomial series without generators".into()));
                }
                for g in generators {
                    if g.degree == 0 {
                        return Err(invalid("generators must have positive degree"));
                    }
                    if g.exponent.len() != factors {
                        return Err(invalid("generator exponent length does not match the space"));
                    }
                    if g.exponent.iter().any(|a| *a > g.degree * self.degree) {
                        return Err(invalid("generator exponent outside the degree box"));
                    }
                }
                Ok(())
            }
            Variant::Pullback { base } => {
                base.validate()?;
                if base.space.structure != Structure::SingleSphere {
                    return Err(LabError::UnsupportedSeries("pullbacks start from one sphere".into()));
                }
                match self.space.structure {
                    Structure::DisjointUnion | Structure::ProductOfTwoSpheres => Ok(()),
                    Structure::SingleSphere => Err(LabError::UnsupportedSeries("pullback needs a union or a product".into())),
                }
            }
            Variant::DivisorShift { base, roots } => {
                base.validate()?;
                if roots.iter().any(|r| !(r.z.re.is_finite() && r.z.im.is_finite())) {
                    return Err(invalid("divisor roots must be finite"));
                }
                Ok(())
            }
            Variant::SymPower { base, m } => {
                base.validate()?;
                if *m == 0 {
                    return Err(invalid("symmetric power needs m >= 1"));
                }
                Ok(())
            }
        }
    }

    /// Degree `d'` of the line bundle the sections of `W_1` live in.
    pub fn line_degree(&self) -> u32 {
        match &self.variant {
            Variant::DivisorShift { base, roots } => base.line_degree() + roots.iter().map(|r| r.multiplicity).sum::<u32>(),
            Variant::SymPower { base, m } => m * base.line_degree(),
            Variant::Pullback { base } => base.line_degree(),
            _ => self.degree,
        }
    }

    /// Divisor roots carried by the series.
    pub fn divisor(&self) -> Vec<Root> {
        match &self.variant {
            Variant::DivisorShift { base, roots } => {
                let mut out = base.divisor();
                out.extend(roots.iter().copied());
                out
            }
            Variant::Pullback { base } => base.divisor(),
            _ => Vec::new(),
        }
    }

    /// A multiple of the period of the dimension sequence's finite
    /// differences.
    fn period(&self) -> u32 {
        match &self.variant {
            Variant::Full => 1,
            Variant::EvenDegree => 2,
            Variant::Monomial { generators } | Variant::Closure { generators } => {
                generators.iter().fold(1u32, |acc, g| lcm(acc, g.degree)).min(720)
            }
            Variant::Pullback { base } | Variant::DivisorShift { base, .. } | Variant::SymPower { base, .. } => base.period(),
        }
    }

    /// Exponent sets of `W_0, ..., W_{k_max}`, each sorted lexicographically.
    pub fn levels(&self, k_max: u32) -> Result<Vec<Vec<Vec<u32>>>> {
        self.validate()?;
        let d = self.degree;
        let factors = self.space.factors();
        let levels = match &self.variant {
            Variant::Full => (0..=k_max).map(|k| box_points(factors, k * d)).collect(),
            Variant::EvenDegree => (0..=k_max).map(|k| (0..=k).step_by(2).map(|a| vec![a]).collect()).collect(),
            Variant::Monomial { generators } => semigroup_levels(generators, factors, k_max),
            Variant::Closure { generators } => {
                let hull = RatioHull::new(generators)?;
                (0..=k_max)
                    .map(|k| box_points(factors, k * d).into_iter().filter(|a| hull.contains(k, a)).collect())
                    .collect()
            }
            Variant::Pullback { base } => {
                let lv = base.levels(k_max)?;
                if self.space.is_product() {
                    lv.into_iter().map(|l| l.into_iter().map(|a| vec![a[0], 0]).collect()).collect()
                } else {
                    lv
                }
            }
            Variant::DivisorShift { base, .. } => base.levels(k_max)?,
            Variant::SymPower { base, m } => {
                let gen = base.levels(*m)?.pop().unwrap_or_default();
                if gen.is_empty() {
                    return Err(LabError::EmptySeries(format!("W_{m} is zero")));
                }
                let mut out = vec![vec![vec![0u32; factors]]];
                for _ in 1..=k_max {
                    let prev = out.last().expect("level 0 present");
                    let mut next: HashSet<Vec<u32>> = HashSet::new();
                    for a in prev {
                        for b in &gen {
                            next.insert(a.iter().zip(b).map(|(x, y)| x + y).collect());
                        }
                    }
                    out.push(sorted(next));
                }
                out
            }
        };
        Ok(levels)
    }

    pub fn basis(&self, k: u32) -> Result<BasisList> {
        let exponents = self.levels(k)?.pop().unwrap_or_default();
        Ok(BasisList { k, exponents, box_degree: k * self.line_degree(), divisor: self.divisor() })
    }

    pub fn dims(&self, k_max: u32) -> Result<Vec<usize>> {
        Ok(self.levels(k_max)?.iter().map(Vec::len).collect())
    }
}

fn lcm(a: u32, b: u32) -> u32 {
    a / gcd(a as i64, b as i64) as u32 * b
}

pub(crate) fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn sorted(set: HashSet<Vec<u32>>) -> Vec<Vec<u32>> {
    let mut v: Vec<Vec<u32>> = set.into_iter().collect();
    v.sort();
    v
}

fn box_points(factors: usize, side: u32) -> Vec<Vec<u32>> {
    if factors == 1 {
        (0..=side).map(|a| vec![a]).collect()
    } else {
        (0..=side).flat_map(|a| (0..=side).map(move |b| vec![a, b])).collect()
    }
}

fn semigroup_levels(generators: &[Generator], factors: usize, k_max: u32) -> Vec<Vec<Vec<u32>>> {
    let mut sets: Vec<HashSet<Vec<u32>>> = Vec::with_capacity(k_max as usize + 1);
    sets.push(std::iter::once(vec![0; factors]).collect());
    for k in 1..=k_max {
        let mut level = HashSet::new();
        for g in generators {
            if g.degree <= k {
                for a in &sets[(k - g.degree) as usize] {
                    level.insert(a.iter().zip(&g.exponent).map(|(x, y)| x + y).collect::<Vec<u32>>());
                }
            }
        }
        sets.push(level);
    }
    sets.into_iter().map(sorted).collect()
}

/// Exact basis of `W_k`; negative degrees are rejected.
pub fn dims_and_basis(spec: &SeriesSpec, k: i64) -> Result<BasisList> {
    let k = u32::try_from(k).map_err(|_| invalid("degree must be a nonnegative integer"))?;
    spec.basis(k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub kappa: u32,
    pub vol: f64,
    pub window: (u32, u32),
    pub residual: f64,
}

/// Estimates the growth `dim W_k ~ vol k^kappa / kappa!`.
///
/// `kappa` is the rounded log-log slope over `[k_max/2, k_max]`. The
/// multiplicity is the mean over that window of the `kappa`-th finite
/// difference with step `p` divided by `p^kappa`, where `p` is a period of
/// the series. For quasi-polynomial dimension counts this is exact once the
/// window is past the irregular start.
pub fn fit_growth(spec: &SeriesSpec, k_max: u32) -> Result<GrowthFit> {
    if k_max < 16 {
        return Err(invalid("fit_growth needs k_max >= 16"));
    }
    let dims = spec.dims(k_max)?;
    if dims.iter().skip(1).all(|d| *d == 0) {
        return Err(LabError::EmptySeries("every W_k is zero".into()));
    }
    let lo = k_max / 2;
    let window: Vec<u32> = (lo..=k_max).filter(|k| dims[*k as usize] > 0).collect();
    if window.len() < 2 {
        return Err(LabError::EmptySeries("W_k vanishes on the fit window".into()));
    }
    let xs: Vec<f64> = window.iter().map(|k| (*k as f64).ln()).collect();
    let ys: Vec<f64> = window.iter().map(|k| (dims[*k as usize] as f64).ln()).collect();
    let slope = least_squares_slope(&xs, &ys);
    let kappa = slope.round().max(0.0) as u32;

    let p = spec.period();
    let samples: Vec<f64> = if kappa == 0 {
        window.iter().map(|k| dims[*k as usize] as f64).collect()
    } else {
        window
            .iter()
            .filter(|k| **k >= kappa * p)
            .map(|&k| {
                let mut acc = 0.0;
                for j in 0..=kappa {
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    acc += sign * binomial(kappa, j) * dims[(k - j * p) as usize] as f64;
                }
                acc / (p as f64).powi(kappa as i32)
            })
            .collect()
    };
    if samples.is_empty() {
        return Err(invalid("k_max too small for the series period"));
    }
    let vol = samples.iter().sum::<f64>() / samples.len() as f64;
    if !(vol > 0.0) {
        return Err(LabError::EmptySeries("no positive growth detected".into()));
    }
    let residual = samples.iter().map(|s| ((s - vol) / vol).abs()).fold(0.0, f64::max);
    Ok(GrowthFit { kappa, vol, window: (lo, k_max), residual })
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

fn binomial(n: u32, j: u32) -> f64 {
    (0..j).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

/// Exact rational with positive denominator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Q {
    n: i128,
    d: i128,
}

impl Q {
    fn new(n: i128, d: i128) -> Self {
        let g = gcd128(n, d).max(1);
        let s = if d < 0 { -1 } else { 1 };
        Q { n: s * n / g, d: s * d / g }
    }
    fn sub(self, o: Q) -> Q {
        Q::new(self.n * o.d - o.n * self.d, self.d * o.d)
    }
    fn mul(self, o: Q) -> Q {
        Q::new(self.n * o.n, self.d * o.d)
    }
    fn add(self, o: Q) -> Q {
        Q::new(self.n * o.d + o.n * self.d, self.d * o.d)
    }
    fn sign(self) -> i32 {
        self.n.signum() as i32
    }
    fn to_f64(self) -> f64 {
        self.n as f64 / self.d as f64
    }
}

impl PartialOrd for Q {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Q {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.n * other.d).cmp(&(other.n * self.d))
    }
}

fn gcd128(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

type QPoint = Vec<Q>;

fn cross(o: &QPoint, a: &QPoint, b: &QPoint) -> Q {
    a[0].sub(o[0]).mul(b[1].sub(o[1])).sub(a[1].sub(o[1]).mul(b[0].sub(o[0])))
}

/// Convex hull of rational points in dimension 1 or 2, returned as its
/// vertices (counter-clockwise in dimension 2) and its affine dimension.
fn rational_hull(mut pts: Vec<QPoint>) -> (Vec<QPoint>, u32) {
    pts.sort();
    pts.dedup();
    if pts.len() <= 1 {
        return (pts, 0);
    }
    if pts[0].len() == 1 {
        let lo = pts[0].clone();
        let hi = pts[pts.len() - 1].clone();
        return (vec![lo, hi], 1);
    }
    let mut lower: Vec<QPoint> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p).sign() <= 0 {
            lower.pop();
        }
        lower.push(p.clone());
    }
    let mut upper: Vec<QPoint> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p).sign() <= 0 {
            upper.pop();
        }
        upper.push(p.clone());
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    let dim = if lower.len() <= 2 {
        1
    } else {
        2
    };
    (lower, dim)
}

fn hull_measure(vertices: &[QPoint], dim: u32) -> Q {
    match dim {
        0 => Q::new(1, 1),
        1 => {
            let a = &vertices[0];
            let b = &vertices[vertices.len() - 1];
            if a.len() == 1 {
                b[0].sub(a[0])
            } else {
                // length in units of the primitive lattice step
                let dx = b[0].sub(a[0]);
                let dy = b[1].sub(a[1]);
                let den = dx.d / gcd128(dx.d, dy.d) * dy.d;
                let (x, y) = (dx.n * (den / dx.d), dy.n * (den / dy.d));
                Q::new(gcd128(x, y), den)
            }
        }
        _ => {
            let mut twice = Q::new(0, 1);
            let n = vertices.len();
            for i in 0..n {
                let (p, q) = (&vertices[i], &vertices[(i + 1) % n]);
                twice = twice.add(p[0].mul(q[1]).sub(q[0].mul(p[1])));
            }
            Q::new(twice.n, twice.d * 2)
        }
    }
}

/// Hull of the generator ratios `a_g / d_g`: the slice at `k = 1` of the cone
/// spanned by the generators.
struct RatioHull {
    vertices: Vec<QPoint>,
    dim: u32,
}

impl RatioHull {
    fn new(generators: &[Generator]) -> Result<Self> {
        let pts: Vec<QPoint> = generators
            .iter()
            .map(|g| g.exponent.iter().map(|a| Q::new(*a as i128, g.degree as i128)).collect())
            .collect();
        let (vertices, dim) = rational_hull(pts);
        Ok(Self { vertices, dim })
    }

    fn contains(&self, k: u32, a: &[u32]) -> bool {
        if k == 0 {
            return a.iter().all(|x| *x == 0);
        }
        let p: QPoint = a.iter().map(|x| Q::new(*x as i128, k as i128)).collect();
        match (p.len(), self.dim) {
            (_, 0) => p == self.vertices[0],
            (1, _) => self.vertices[0][0] <= p[0] && p[0] <= self.vertices[1][0],
            (_, 1) => {
                let (a0, a1) = (&self.vertices[0], &self.vertices[self.vertices.len() - 1]);
                cross(a0, a1, &p).sign() == 0 && *a0 <= p && p <= *a1
            }
            _ => {
                let n = self.vertices.len();
                (0..n).all(|i| cross(&self.vertices[i], &self.vertices[(i + 1) % n], &p).sign() >= 0)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemigroupAnalysis {
    pub hull_dimension: u32,
    /// Euclidean volume of the Okounkov body in its affine span.
    pub body_volume: f64,
    /// Index of the degree-zero lattice in its saturation.
    pub lattice_index: u64,
    /// `kappa! * body_volume / lattice_index`.
    pub vol_kappa: f64,
    /// The saturated series, when computed.
    pub saturation: Option<SeriesSpec>,
    pub generic_degree: u64,
}

fn monomial_generators(spec: &SeriesSpec) -> Result<Vec<Generator>> {
    let n = spec.space.factors();
    match &spec.variant {
        Variant::Monomial { generators } | Variant::Closure { generators } => Ok(generators.clone()),
        Variant::EvenDegree => Ok(vec![Generator::new(1, vec![0]), Generator::new(2, vec![2])]),
        Variant::Full => {
            let mut g = vec![Generator::new(1, vec![0; n])];
            for i in 0..n {
                let mut e = vec![0; n];
                e[i] = spec.degree;
                g.push(Generator::new(1, e));
            }
            if n == 2 {
                g.push(Generator::new(1, vec![spec.degree, spec.degree]));
            }
            Ok(g)
        }
        _ => Err(LabError::UnsupportedSeries("only monomial, full and even-degree series have a semigroup".into())),
    }
}

/// Index of the degree-zero part of the lattice spanned by the generators
/// `(d_g, a_g)`, measured inside its saturation.
pub fn degree_zero_index(generators: &[Generator]) -> u64 {
    let n = generators.first().map_or(0, |g| g.exponent.len());
    let mut rows: Vec<Vec<i64>> = generators
        .iter()
        .map(|g| std::iter::once(g.degree as i64).chain(g.exponent.iter().map(|a| *a as i64)).collect())
        .collect();
    let basis = hermite_rows(&mut rows, n + 1);
    let level0: Vec<Vec<i64>> = basis.into_iter().filter(|r| r[0] == 0).map(|r| r[1..].to_vec()).collect();
    minor_gcd(&level0).max(1) as u64
}

/// Row-style Hermite reduction by integer Euclid; returns the nonzero rows.
fn hermite_rows(rows: &mut Vec<Vec<i64>>, cols: usize) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    let mut work = std::mem::take(rows);
    for c in 0..cols {
        loop {
            let mut nz: Vec<usize> = (0..work.len()).filter(|&i| work[i][c] != 0).collect();
            if nz.len() <= 1 {
                break;
            }
            nz.sort_by_key(|&i| work[i][c].abs());
            let p = nz[0];
            for &i in &nz[1..] {
                let q = work[i][c] / work[p][c];
                let pivot = work[p].clone();
                for (x, y) in work[i].iter_mut().zip(&pivot) {
                    *x -= q * y;
                }
            }
        }
        if let Some(i) = (0..work.len()).find(|&i| work[i][c] != 0) {
            out.push(work.remove(i));
        }
    }
    out
}

/// gcd of the maximal minors of an integer matrix of full row rank (at most
/// 2 columns here); 0 when the rows are dependent.
fn minor_gcd(rows: &[Vec<i64>]) -> i64 {
    match rows.len() {
        0 => 1,
        1 => rows[0].iter().fold(0, |g, x| gcd(g, *x)),
        _ => {
            let mut g = 0;
            let cols = rows[0].len();
            for i in 0..cols {
                for j in i + 1..cols {
                    g = gcd(g, rows[0][i] * rows[1][j] - rows[0][j] * rows[1][i]);
                }
            }
            g
        }
    }
}

/// Convex hull of the normalized exponents `a/k`, `k <= k_max`, with its
/// lattice-normalized volume.
pub fn okounkov_body(spec: &SeriesSpec, k_max: u32) -> Result<SemigroupAnalysis> {
    if k_max < 16 {
        return Err(invalid("okounkov_body needs k_max >= 16"));
    }
    let generators = monomial_generators(spec)?;
    let levels = spec.levels(k_max)?;
    let mut candidates: Vec<QPoint> = Vec::new();
    for (k, level) in levels.iter().enumerate().skip(1) {
        if level.is_empty() {
            continue;
        }
        let integral: Vec<QPoint> =
            level.iter().map(|a| a.iter().map(|x| Q::new(*x as i128, 1)).collect()).collect();
        let (verts, _) = rational_hull(integral);
        candidates.extend(verts.into_iter().map(|v| v.into_iter().map(|q| Q::new(q.n, k as i128)).collect()));
    }
    if candidates.is_empty() {
        return Err(LabError::EmptySeries("no nonzero W_k up to k_max".into()));
    }
    let (vertices, dim) = rational_hull(candidates);
    let body = hull_measure(&vertices, dim);
    let index = degree_zero_index(&generators);
    let body_volume = if dim == 1 && vertices[0].len() == 2 {
        let dx = vertices[1][0].sub(vertices[0][0]).to_f64();
        let dy = vertices[1][1].sub(vertices[0][1]).to_f64();
        dx.hypot(dy)
    } else {
        body.to_f64()
    };
    let vol_kappa = factorial(dim) * body.to_f64() / index as f64;
    Ok(SemigroupAnalysis {
        hull_dimension: dim,
        body_volume,
        lattice_index: index,
        vol_kappa,
        saturation: None,
        generic_degree: index,
    })
}

/// Seed of the preimage-count oracle.
pub const PREIMAGE_SEED: u64 = 0x5eed_0001;

/// Counts the torus points `zeta` with `zeta^delta = 1` for every exponent
/// difference `delta` of `W_k`, i.e. the preimages of a random point under
/// the monomial Kodaira map, by testing roots of unity numerically.
pub fn preimage_count(spec: &SeriesSpec, k: u32, seed: u64) -> Result<u64> {
    let level = spec.basis(k)?.exponents;
    if level.len() < 2 {
        return Err(LabError::EmptySeries(format!("W_{k} has dimension < 2")));
    }
    let n = level[0].len();
    let diffs: Vec<Vec<i64>> =
        level.iter().map(|a| a.iter().zip(&level[0]).map(|(x, y)| *x as i64 - *y as i64).collect()).collect();
    // every solution has order dividing the covolume of any full-rank
    // set of differences
    let mut order: i64 = 0;
    if n == 1 {
        for d in &diffs {
            order = gcd(order, d[0]);
        }
    } else {
        'outer: for (i, a) in diffs.iter().enumerate() {
            for b in &diffs[i + 1..] {
                let det = a[0] * b[1] - a[1] * b[0];
                if det != 0 {
                    order = det.abs();
                    break 'outer;
                }
            }
        }
    }
    if order == 0 {
        return Err(LabError::UnsupportedSeries("positive-dimensional fibers".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<Complex64> =
        (0..n).map(|_| Complex64::from_polar(rng.gen_range(0.5..2.0), rng.gen_range(0.0..2.0 * PI))).collect();
    let order = order.max(1) as usize;
    let image = |z: &[Complex64]| -> Vec<Complex64> {
        level.iter().map(|a| a.iter().zip(z).fold(Complex64::new(1.0, 0.0), |acc, (e, zi)| acc * zi.powu(*e))).collect()
    };
    let target = image(&base);
    let scale = target.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut count = 0u64;
    let total = order.pow(n as u32);
    for idx in 0..total {
        let mut rest = idx;
        let z: Vec<Complex64> = base
            .iter()
            .map(|b| {
                let j = rest % order;
                rest /= order;
                b * Complex64::from_polar(1.0, 2.0 * PI * j as f64 / order as f64)
            })
            .collect();
        // points of projective space: compare after fixing the first entry
        let img = image(&z);
        let ratio = target[0] / img[0];
        if img.iter().zip(&target).all(|(u, v)| (u * ratio - v).norm() <= 1e-9 * scale) {
            count += 1;
        }
    }
    Ok(count)
}

/// Saturation of a monomial series and the degree of `W̄` over `W`.
///
/// The generic degree is the lattice index of the exponent differences; it
/// is cross-checked against [`preimage_count`] and a mismatch is an error.
pub fn monomial_closure_and_degree(spec: &SeriesSpec) -> Result<SemigroupAnalysis> {
    if !matches!(spec.variant, Variant::Monomial { .. } | Variant::EvenDegree | Variant::Full) {
        return Err(LabError::UnsupportedSeries("closure is computed for monomial series".into()));
    }
    let generators = monomial_generators(spec)?;
    let saturation = if matches!(spec.variant, Variant::EvenDegree | Variant::Full) {
        SeriesSpec::full_on(spec.space, spec.degree)
    } else {
        let sat = SeriesSpec { variant: Variant::Closure { generators: generators.clone() }, ..spec.clone() };
        if is_full(&sat)? {
            SeriesSpec::full_on(spec.space, spec.degree)
        } else {
            sat
        }
    };
    let mut analysis = okounkov_body(spec, 32)?;
    let index = analysis.lattice_index;
    // a degree large enough that W_k spans its difference lattice
    let k_probe = generators.iter().map(|g| g.degree).max().unwrap_or(1) * 6;
    let count = preimage_count(spec, k_probe, PREIMAGE_SEED)?;
    if count != index {
        return Err(LabError::Internal(format!("lattice index {index} but {count} preimages")));
    }
    analysis.saturation = Some(saturation);
    analysis.generic_degree = index;
    Ok(analysis)
}

fn is_full(spec: &SeriesSpec) -> Result<bool> {
    let full = SeriesSpec::full_on(spec.space, spec.degree);
    Ok(spec.levels(8)? == full.levels(8)?)
}

/// Degree of the Kodaira map fibration of a series.
pub fn fiber_degree(spec: &SeriesSpec) -> Result<FiberDegree> {
    match (&spec.variant, spec.space.structure) {
        (Variant::Full, Structure::SingleSphere) => FiberDegree::new(1.0),
        (Variant::Pullback { .. }, Structure::DisjointUnion) => FiberDegree::new(spec.space.components as f64),
        (Variant::Pullback { .. }, Structure::ProductOfTwoSpheres) => FiberDegree::new(1.0),
        _ => Err(LabError::UnsupportedSeries("fiber degree is defined for full series and pullbacks".into())),
    }
}
