//! Fubini-Study operators, iterated envelopes and the radial hull oracle.
//!
//! Radial quantities live on a grid in `t = log|z|`. For a weight `phi` and an
//! envelope potential `psi`, [`EnvelopeGrid::values`] holds `phi - psi`, the
//! frame-weighted `(1/k) log FS(N_k)`.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::geometry::{Coord, Descriptor, Point, QuadratureMeasure, SampleSet};
use crate::conic::{chebyshev, NodeForm};
use crate::norms::{basis_values, distortion_profile, gram_matrix, log_scales, orthonormalize, seeded_rng, random_coeffs, GramMatrix, NormHandle};
use crate::series::{BasisList, SeriesSpec};
use crate::weights::{log_abs_poly, radial_profile, RadialProfile, Weight};

pub const DEFAULT_FACETS: usize = 16;
/// Allowed increase of `(1/k) log FS` across one doubling of `k`.
pub const MONOTONE_TOLERANCE: f64 = 1e-3;
/// Relative diagonal of the node matrix's R factor below which the node set
/// does not determine `W_k`.
const RANK_TOLERANCE: f64 = 1e-13;

/// An FS metric value, with `Infinite` on the base locus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FsValue {
    Finite(f64),
    Infinite,
}

impl FsValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            FsValue::Finite(v) => Some(v),
            FsValue::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        self == FsValue::Infinite
    }
}

fn from_kernel(b: f64) -> FsValue {
    if b > 0.0 && b.is_finite() {
        FsValue::Finite(1.0 / b.sqrt())
    } else {
        FsValue::Infinite
    }
}

/// `1/sqrt(B(x,x))`: the least Hilbert norm of a section with frame value 1.
pub fn fs_hermitian(g: &GramMatrix, w: &Weight, x: &Point) -> Result<FsValue> {
    if w.degree() != g.weight.degree() {
        return Err(invalid("weight degree does not match the Gram matrix"));
    }
    Ok(from_kernel(orthonormalize(g)?.kernel_at(w, x)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupBracket {
    /// Sampled sup-norm of the computed minimizer.
    pub value: f64,
    /// Conic solver bound, equal to `value` up to the solver tolerance.
    pub lower: f64,
    pub facets: usize,
}

impl SupBracket {
    /// `[opt cos(pi / facets), opt]`: the values a `facets`-gon relaxation
    /// of the modulus constraints can take.
    pub fn polygon_bracket(&self) -> (f64, f64) {
        (self.value * (PI / self.facets as f64).cos(), self.value)
    }
}

/// Node values of a column-normalized basis in QR form.
#[derive(Clone, Debug)]
struct QrForm {
    form: NodeForm,
    r: DMatrix<Complex64>,
    col_norms: Vec<f64>,
}

fn normalize_columns<T: nalgebra::ComplexField<RealField = f64>>(v: &mut DMatrix<T>) -> Result<Vec<f64>> {
    let mut norms = Vec::with_capacity(v.ncols());
    for mut col in v.column_iter_mut() {
        let n = col.norm();
        if n == 0.0 {
            return Err(LabError::DiscretizationFailure("a basis section vanishes on every node".into()));
        }
        col.unscale_mut(n);
        norms.push(n);
    }
    Ok(norms)
}

fn check_rank(r: &DMatrix<Complex64>) -> Result<()> {
    let m = r.ncols();
    let top = (0..m).map(|i| r[(i, i)].norm()).fold(0.0, f64::max);
    if (0..m).any(|i| r[(i, i)].norm() < RANK_TOLERANCE * top) {
        return Err(LabError::DiscretizationFailure("node set does not determine W_k".into()));
    }
    Ok(())
}

/// Complex coefficients: `y = (Re, Im)` and node values `Q y`.
fn complex_form(rows: &[Vec<Complex64>], m: usize) -> Result<QrForm> {
    let mut v = DMatrix::from_fn(rows.len(), m, |i, j| rows[i][j]);
    let col_norms = normalize_columns(&mut v)?;
    let qr = v.qr();
    let r = qr.r();
    check_rank(&r)?;
    let q = qr.q();
    let n = rows.len();
    let re = DMatrix::from_fn(n, 2 * m, |i, j| if j < m { q[(i, j)].re } else { -q[(i, j - m)].im });
    let im = DMatrix::from_fn(n, 2 * m, |i, j| if j < m { q[(i, j)].im } else { q[(i, j - m)].re });
    Ok(QrForm { form: NodeForm { re, im }, r, col_norms })
}

/// Real coefficients on the closed upper half of a conjugation-invariant
/// node set.
fn real_form(rows: &[Vec<Complex64>], m: usize) -> Result<QrForm> {
    let n = rows.len();
    let mut v = DMatrix::from_fn(2 * n, m, |i, j| if i < n { rows[i][j].re } else { rows[i - n][j].im });
    let col_norms = normalize_columns(&mut v)?;
    let qr = v.qr();
    let r = qr.r().map(|x| Complex64::new(x, 0.0));
    check_rank(&r)?;
    let q = qr.q();
    let re = q.rows(0, n).into_owned();
    let im = q.rows(n, n).into_owned();
    Ok(QrForm { form: NodeForm { re, im }, r, col_norms })
}

fn conj_key(p: &Point, sign: f64) -> Option<(usize, i64, i64)> {
    match p.z {
        Coord::Finite(z) => Some((p.component, (z.re * 1e9).round() as i64, (sign * z.im * 1e9).round() as i64)),
        Coord::Infinity => None,
    }
}

/// True when nodes, weight and divisor are invariant under `z -> conj(z)`.
fn conjugation_invariant(points: &[Point], w: &Weight, basis: &BasisList) -> bool {
    if basis.divisor.iter().any(|r| r.z.im != 0.0) || points.iter().any(|p| p.w.is_some()) {
        return false;
    }
    let keys: HashSet<(usize, i64, i64)> = points.iter().filter_map(|p| conj_key(p, 1.0)).collect();
    points.iter().all(|p| {
        let Coord::Finite(z) = p.z else { return true };
        if z.im == 0.0 {
            return true;
        }
        let mirror = Point::new(z.conj()).on_component(p.component);
        let (a, b) = (w.phi(p), w.phi(&mirror));
        conj_key(p, -1.0).is_some_and(|k| keys.contains(&k)) && (a - b).abs() <= 1e-12 * (1.0 + a.abs())
    })
}

/// The sampled sup-norm of `W_k`, prepared for repeated FS evaluations.
#[derive(Clone, Debug)]
pub struct SupProblem {
    pub k: u32,
    basis: BasisList,
    weight: Weight,
    log_scales: Vec<f64>,
    rows: Vec<Vec<Complex64>>,
    real: Option<QrForm>,
    complex: OnceLock<Option<QrForm>>,
}

impl SupProblem {
    pub fn new(spec: &SeriesSpec, k: u32, w: &Weight, set: &SampleSet) -> Result<Self> {
        Self::from_handle(&NormHandle::sup_sampled(spec, k, w, set)?)
    }

    pub fn from_handle(h: &NormHandle) -> Result<Self> {
        let NormHandle::SupSampled { points, weight, basis } = h else {
            return Err(invalid("Chebyshev FS needs a sampled sup-norm handle"));
        };
        let m = basis.dim();
        if points.len() < m {
            return Err(LabError::DiscretizationFailure(format!("{} nodes cannot determine {m} sections", points.len())));
        }
        let scales = log_scales(basis);
        let rows: Vec<Vec<Complex64>> = points.par_iter().map(|p| basis_values(basis, &scales, weight, p)).collect();
        let complex = OnceLock::new();
        let real = if conjugation_invariant(points, weight, basis) {
            let upper: Vec<Vec<Complex64>> = points
                .iter()
                .zip(&rows)
                .filter(|(p, _)| p.z.finite().map_or(true, |z| z.im >= 0.0))
                .map(|(_, r)| r.clone())
                .collect();
            Some(real_form(&upper, m)?)
        } else {
            complex.set(Some(complex_form(&rows, m)?)).expect("fresh cell");
            None
        };
        Ok(Self { k: basis.k, basis: basis.clone(), weight: weight.clone(), log_scales: scales, rows, real, complex })
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Least sampled sup-norm of a section with frame value 1 at `x`.
    pub fn fs_value(&self, x: &Point, facets: usize) -> Result<SupBracket> {
        if facets < 8 {
            return Err(invalid("the polygon needs at least 8 facets"));
        }
        let u = basis_values(&self.basis, &self.log_scales, &self.weight, x);
        if u.iter().all(|c| c.norm() == 0.0) {
            return Err(LabError::BaseLocus);
        }
        let real_point = x.w.is_none() && x.z.finite().map_or(true, |z| z.im == 0.0) && u.iter().all(|c| c.im == 0.0);
        let (qr, real) = match (&self.real, real_point) {
            (Some(f), true) => (f, true),
            _ => {
                let m = self.dim();
                let f = self.complex.get_or_init(|| complex_form(&self.rows, m).ok()).as_ref();
                (f.ok_or_else(|| LabError::DiscretizationFailure("node set does not determine W_k".into()))?, false)
            }
        };
        let rhs = DVector::from_iterator(self.dim(), u.iter().zip(&qr.col_norms).map(|(c, n)| c / *n));
        let wt = qr
            .r
            .transpose()
            .solve_lower_triangular(&rhs)
            .ok_or_else(|| LabError::Internal("singular R factor".into()))?;
        let scale = wt.norm();
        let w: Vec<Complex64> = wt.iter().map(|c| c / scale).collect();
        let eqs = if real {
            vec![(w.iter().map(|c| c.re).collect(), 1.0)]
        } else {
            let re_row: Vec<f64> = w.iter().map(|c| c.re).chain(w.iter().map(|c| -c.im)).collect();
            let im_row: Vec<f64> = w.iter().map(|c| c.im).chain(w.iter().map(|c| c.re)).collect();
            vec![(re_row, 1.0), (im_row, 0.0)]
        };
        let sol = chebyshev(&qr.form, &eqs)?;
        Ok(SupBracket { value: sol.value / scale, lower: sol.bound.min(sol.value) / scale, facets })
    }
}

pub fn fs_sup_chebyshev(h: &NormHandle, x: &Point, facets: usize) -> Result<SupBracket> {
    SupProblem::from_handle(h)?.fs_value(x, facets)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvelopeMode {
    Sup { facets: usize },
    /// Hilbert norms of a Bernstein-Markov measure in place of sup-norms.
    BmEquivalent { measure: QuadratureMeasure },
}

impl EnvelopeMode {
    pub fn label(&self) -> &'static str {
        match self {
            EnvelopeMode::Sup { .. } => "sup",
            EnvelopeMode::BmEquivalent { .. } => "bm-equivalent",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KSource {
    Degree(u32),
    Limit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterateStep {
    pub k: u32,
    pub values: Vec<f64>,
}

/// An envelope potential on a radial grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeGrid {
    pub t: Vec<f64>,
    /// Weight profile `phi(e^t)`.
    pub phi: Vec<f64>,
    /// Envelope potential `psi`.
    pub potential: Vec<f64>,
    /// `phi - psi`.
    pub values: Vec<f64>,
    pub degree: u32,
    pub k_source: KSource,
    pub gap: f64,
    pub mode: String,
    pub history: Vec<IterateStep>,
    /// `(k, eps_k)` of the Bernstein-Markov substitution, when used.
    pub distortion: Option<Vec<(u32, f64)>>,
}

impl EnvelopeGrid {
    fn from_values(t: Vec<f64>, phi: Vec<f64>, values: Vec<f64>, degree: u32) -> Self {
        let potential = phi.iter().zip(&values).map(|(p, v)| p - v).collect();
        Self {
            t,
            phi,
            potential,
            values,
            degree,
            k_source: KSource::Limit,
            gap: 0.0,
            mode: String::new(),
            history: Vec::new(),
            distortion: None,
        }
    }

    /// The potential as a radial profile.
    pub fn profile(&self) -> Result<RadialProfile> {
        RadialProfile::new(self.t.clone(), self.potential.clone(), self.degree)
    }

    pub fn sup_distance(&self, other: &EnvelopeGrid) -> Result<f64> {
        if self.t != other.t {
            return Err(invalid("envelopes live on different grids"));
        }
        Ok(self.potential.iter().zip(&other.potential).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.t.len();
        if n < 2 || self.phi.len() != n || self.potential.len() != n || self.values.len() != n {
            return Err(LabError::InvalidEnvelope("grid and samples differ in length".into()));
        }
        if self.t.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(LabError::InvalidEnvelope("grid must be strictly increasing".into()));
        }
        if self.potential.iter().chain(&self.phi).any(|v| !v.is_finite()) {
            return Err(LabError::InvalidEnvelope("samples must be finite".into()));
        }
        Ok(())
    }
}

fn grid_points(t_grid: &[f64]) -> Result<Vec<Point>> {
    if t_grid.len() < 2 || t_grid.windows(2).any(|w| !(w[0] < w[1])) || t_grid.iter().any(|t| !t.is_finite()) {
        return Err(invalid("t-grid must be finite, strictly increasing and have two points"));
    }
    Ok(t_grid.iter().map(|t| Point::real(t.exp())).collect())
}

/// `(1/k) log FS` of the level-`k` sup-norm on the nodes `set`, on `pts`.
pub fn sup_fs_log(spec: &SeriesSpec, k: u32, w: &Weight, set: &SampleSet, pts: &[Point], facets: usize) -> Result<Vec<f64>> {
    let prob = SupProblem::new(spec, k, w, set)?;
    pts.par_iter().map(|x| Ok(prob.fs_value(x, facets)?.value.ln() / k as f64)).collect()
}

fn hermitian_fs_log(spec: &SeriesSpec, k: u32, w: &Weight, mu: &QuadratureMeasure, pts: &[Point]) -> Result<Vec<f64>> {
    let ob = orthonormalize(&gram_matrix(spec, k, w, mu)?)?;
    pts.par_iter()
        .map(|x| match from_kernel(ob.kernel_at(w, x)) {
            FsValue::Finite(v) => Ok(v.ln() / k as f64),
            FsValue::Infinite => Err(LabError::BaseLocus),
        })
        .collect()
}

/// Angular resolution used for level `k` sup-norms.
pub fn angular_nodes(k: u32, degree: u32) -> usize {
    4 * (k * degree) as usize + 8
}

/// Iterated FS envelopes along `k = 8, 16, ..., k_max` on the grid
/// `x = e^t`. Each level's sup-norm samples `k_set` with its angular
/// resolution raised to [`angular_nodes`].
/// Hilbert levels carry a polynomial factor in `k`, so the monotone check
/// only applies to sup-norm levels.
pub fn envelope_iterate(
    spec: &SeriesSpec,
    w: &Weight,
    k_set: &SampleSet,
    t_grid: &[f64],
    k_max: u32,
    mode: &EnvelopeMode,
) -> Result<EnvelopeGrid> {
    if k_max < 8 || !k_max.is_power_of_two() {
        return Err(invalid("k_max must be a power of two at least 8"));
    }
    let pts = grid_points(t_grid)?;
    let phi: Vec<f64> = pts.iter().map(|p| w.phi(p)).collect();
    let degree = spec.line_degree();
    let mut history: Vec<IterateStep> = Vec::new();
    let mut k = 8;
    while k <= k_max {
        let values = match mode {
            EnvelopeMode::Sup { facets } => {
                let nodes = k_set.with_min_angular(angular_nodes(k, degree))?;
                sup_fs_log(spec, k, w, &nodes, &pts, *facets)?
            }
            EnvelopeMode::BmEquivalent { measure } => hermitian_fs_log(spec, k, w, measure, &pts)?,
        };
        let checked = matches!(mode, EnvelopeMode::Sup { .. });
        if let Some(prev) = history.last().filter(|_| checked) {
            for (i, (a, b)) in values.iter().zip(&prev.values).enumerate() {
                if *a > b + MONOTONE_TOLERANCE {
                    return Err(LabError::DiscretizationFailure(format!(
                        "(1/k) log FS increased by {:.3e} at t = {} from k = {} to {k}",
                        a - b,
                        t_grid[i],
                        prev.k
                    )));
                }
            }
        }
        history.push(IterateStep { k, values });
        k *= 2;
    }
    let last = history.last().expect("k_max >= 8");
    let gap = match history.len() {
        1 => 0.0,
        n => last.values.iter().zip(&history[n - 2].values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
    };
    let mut env = EnvelopeGrid::from_values(t_grid.to_vec(), phi, last.values.clone(), w.degree());
    env.k_source = KSource::Degree(last.k);
    env.gap = gap;
    env.mode = mode.label().to_string();
    if let EnvelopeMode::BmEquivalent { measure } = mode {
        let ks: Vec<u32> = history.iter().map(|s| s.k).collect();
        env.distortion = Some(distortion_profile(spec, &ks, w, k_set, measure)?);
    }
    env.history = history;
    Ok(env)
}

/// Range of `t = log|z|` covered by a rotation-invariant `K`.
pub fn radial_range(k_set: &Descriptor) -> Result<(f64, f64)> {
    let log = |r: f64| if r > 0.0 { r.ln() } else { f64::NEG_INFINITY };
    let range = match k_set {
        Descriptor::Circle { radius, .. } => (log(*radius), log(*radius)),
        Descriptor::Disk { radius, .. } => (f64::NEG_INFINITY, log(*radius)),
        Descriptor::Annulus { inner, outer, .. } => (log(*inner), log(*outer)),
        Descriptor::Sphere { .. } => (f64::NEG_INFINITY, f64::INFINITY),
        other => return Err(LabError::NotRadial(format!("{other:?} is not a radial set"))),
    };
    if !(range.0 <= range.1) || range.1 == f64::NEG_INFINITY {
        return Err(invalid("radial set is empty"));
    }
    Ok(range)
}

/// Samples `(t, phi~(t))` of the profile on the part of the grid inside `K`,
/// with the finite ends of `K` added.
pub fn support_points(profile: &RadialProfile, k_set: &Descriptor) -> Result<Vec<(f64, f64)>> {
    let (a, b) = radial_range(k_set)?;
    let mut pts: Vec<(f64, f64)> =
        profile.t.iter().zip(&profile.values).filter(|(t, _)| a <= **t && **t <= b).map(|(t, v)| (*t, *v)).collect();
    for end in [a, b] {
        if end.is_finite() && !pts.iter().any(|p| p.0 == end) {
            pts.push((end, profile.eval(end)));
        }
    }
    pts.sort_by(|x, y| x.0.total_cmp(&y.0));
    Ok(pts)
}

/// Largest convex function of `t` with slopes in `[0, d]` lying below a set
/// of samples, stored as the vertices of the clamped lower hull.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialHull {
    pub vertices: Vec<(f64, f64)>,
    pub degree: u32,
}

impl RadialHull {
    pub fn new(points: &[(f64, f64)], degree: u32) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("no samples inside K"));
        }
        let mut hull: Vec<(f64, f64)> = Vec::new();
        for &p in points {
            while hull.len() >= 2 {
                let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
                if (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0) <= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        let slope = |i: usize| (hull[i + 1].1 - hull[i].1) / (hull[i + 1].0 - hull[i].0);
        let last = hull.len() - 1;
        let lo = (0..=last).find(|&i| i == last || slope(i) >= 0.0).unwrap_or(last);
        let d = degree as f64;
        let hi = (lo..=last).find(|&i| i == last || slope(i) > d).unwrap_or(last);
        Ok(Self { vertices: hull[lo..=hi].to_vec(), degree })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let v = &self.vertices;
        let n = v.len();
        if t <= v[0].0 {
            return v[0].1;
        }
        if t >= v[n - 1].0 {
            return v[n - 1].1 + self.degree as f64 * (t - v[n - 1].0);
        }
        let j = v.partition_point(|p| p.0 <= t) - 1;
        v[j].1 + (v[j + 1].1 - v[j].1) * ((t - v[j].0) / (v[j + 1].0 - v[j].0))
    }
}

pub fn radial_hull(profile: &RadialProfile, k_set: &Descriptor) -> Result<RadialHull> {
    RadialHull::new(&support_points(profile, k_set)?, profile.degree)
}

/// The slope-constrained convexification of the profile over `K`, on the
/// profile's grid.
pub fn radial_envelope_oracle(profile: &RadialProfile, k_set: &Descriptor) -> Result<EnvelopeGrid> {
    let hull = radial_hull(profile, k_set)?;
    let values = profile.t.iter().zip(&profile.values).map(|(t, p)| p - hull.eval(*t)).collect();
    let mut env = EnvelopeGrid::from_values(profile.t.clone(), profile.values.clone(), values, profile.degree);
    env.potential = profile.t.iter().map(|t| hull.eval(*t)).collect();
    env.mode = "oracle".into();
    Ok(env)
}

/// Relative gap between `Ban_k(K, phi)` and `Ban_k(K, psi)` for the oracle
/// envelope `psi`, maximized over random sections. `K` is sampled on the
/// rings of the grid inside it.
pub fn tautological_check(
    w: &Weight,
    k_set: &Descriptor,
    k_list: &[u32],
    t_grid: &[f64],
    seed: u64,
) -> Result<Vec<(u32, f64)>> {
    const SECTIONS: usize = 16;
    let profile = radial_profile(w, t_grid)?;
    let support = support_points(&profile, k_set)?;
    let hull = RadialHull::new(&support, profile.degree)?;
    let rings: Vec<(f64, f64, f64)> = support.iter().map(|&(t, p)| (t, p, hull.eval(t))).collect();
    k_list
        .iter()
        .map(|&k| {
            let n = (k * profile.degree) as usize + 1;
            let n_theta = angular_nodes(k, profile.degree);
            let mut rng = seeded_rng(seed ^ k as u64);
            let kf = k as f64;
            let mut worst: f64 = 0.0;
            for _ in 0..SECTIONS {
                let c = random_coeffs(n, &mut rng);
                let (mut ban_phi, mut ban_psi) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                for &(t, phi, psi) in &rings {
                    let r = t.exp();
                    for j in 0..n_theta {
                        let l = log_abs_poly(&c, Complex64::from_polar(r, 2.0 * PI * j as f64 / n_theta as f64));
                        ban_phi = ban_phi.max(l - kf * phi);
                        ban_psi = ban_psi.max(l - kf * psi);
                    }
                }
                worst = worst.max((ban_psi - ban_phi).exp_m1().abs());
            }
            Ok((k, worst))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{circle_quadrature, disk_quadrature, fs_sphere_quadrature, BaseMap, SpaceModel};
    use crate::norms::divisor_transport;
    use crate::series::{Generator, Root};
    use crate::weights::{fs_potential, Direction};
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    /// `min c^* G c` subject to `u^T c = 1` by a direct solve of `G z = conj(u)`.
    fn least_squares_fs(g: &GramMatrix, w: &Weight, x: &Point) -> f64 {
        let u = DVector::from_vec(basis_values(&g.basis, &g.log_scales, w, x));
        let z = g.entries.clone().lu().solve(&u.map(|c| c.conj())).unwrap();
        let denom = (u.transpose() * z)[(0, 0)].re;
        1.0 / denom.sqrt()
    }

    #[test]
    fn hermitian_fs_examples() {
        let mu = fs_sphere_quadrature(24, 64).unwrap();
        let w = Weight::fubini_study();
        for k in [1u32, 6, 15] {
            let g = gram_matrix(&SeriesSpec::full(1), k, &w, &mu).unwrap();
            for x in [Point::real(0.0), Point::polar(2.5, 1.0), Point::infinity()] {
                let v = fs_hermitian(&g, &w, &x).unwrap().finite().unwrap();
                assert!((v - 1.0 / ((k + 1) as f64).sqrt()).abs() < 1e-10);
            }
        }
        let vanishing = SeriesSpec::monomial(SpaceModel::sphere(), 1, vec![Generator { degree: 1, exponent: vec![1] }]).unwrap();
        let lam = disk_quadrature(1.0, 12, 32).unwrap();
        let g = gram_matrix(&vanishing, 3, &Weight::PaperDisk, &lam).unwrap();
        assert!(fs_hermitian(&g, &Weight::PaperDisk, &Point::real(0.0)).unwrap().is_infinite());
        let x = Point::polar(0.6, 0.4);
        let ratio = g.norm(&[Complex64::new(1.0, 0.0)]).unwrap()
            / crate::weights::eval_section_norm(&Weight::PaperDisk, &[0.0, 0.0, 0.0, 1.0].map(|v| Complex64::new(v, 0.0)), &x, 3).unwrap();
        let v = fs_hermitian(&g, &Weight::PaperDisk, &x).unwrap().finite().unwrap();
        assert!((v - ratio).abs() <= 1e-12 * ratio);
    }

    #[test]
    fn hermitian_fs_matches_constrained_least_squares() {
        let mut rng = seeded_rng(5);
        use rand::Rng;
        for case in 0..20 {
            let k = rng.gen_range(1..=30u32);
            let n = rng.gen_range(k as usize + 2..k as usize + 40);
            let nodes: Vec<Point> = (0..n).map(|_| Point::polar(rng.gen_range(0.05..1.6), rng.gen_range(0.0..6.3))).collect();
            let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
            let mu = QuadratureMeasure::new(SpaceModel::sphere(), Descriptor::Custom { label: "random".into() }, nodes, weights).unwrap();
            let w = if case % 2 == 0 { Weight::PaperDisk } else { Weight::fubini_study() };
            let g = gram_matrix(&SeriesSpec::full(1), k, &w, &mu).unwrap();
            let x = Point::polar(rng.gen_range(0.0..2.0), rng.gen_range(0.0..6.3));
            let a = fs_hermitian(&g, &w, &x).unwrap().finite().unwrap();
            let b = least_squares_fs(&g, &w, &x);
            assert!((a - b).abs() <= 1e-8 * b, "case {case}: {a} vs {b}");
        }
    }

    #[test]
    fn sup_fs_of_a_line_is_the_ratio() {
        let spec = SeriesSpec::monomial(SpaceModel::sphere(), 1, vec![Generator { degree: 1, exponent: vec![1] }]).unwrap();
        let set = SampleSet::disk(1.0, 3, 24).unwrap();
        let w = Weight::PaperDisk;
        let h = NormHandle::sup_sampled(&spec, 4, &w, &set).unwrap();
        for x in [Point::real(0.5), Point::polar(0.7, 2.0), Point::real(3.0)] {
            let b = fs_sup_chebyshev(&h, &x, DEFAULT_FACETS).unwrap();
            let z4 = [0.0, 0.0, 0.0, 0.0, 1.0].map(|v| Complex64::new(v, 0.0));
            let ratio = sup_norm_eval(&h, &[Complex64::new(1.0, 0.0)]).unwrap()
                / crate::weights::eval_section_norm(&w, &z4, &x, 4).unwrap();
            assert!((b.value - ratio).abs() <= 1e-7 * ratio);
            let (lo, hi) = b.polygon_bracket();
            assert!(lo <= b.lower * (1.0 + 1e-9) && b.lower <= hi * (1.0 + 1e-9));
        }
        assert!(matches!(fs_sup_chebyshev(&h, &Point::real(0.0), 16), Err(LabError::BaseLocus)));
        assert!(fs_sup_chebyshev(&h, &Point::real(0.5), 4).is_err());
    }

    use crate::norms::sup_norm_eval;

    #[test]
    fn sup_fs_matches_brute_force_at_dimension_three() {
        let set = SampleSet::circle(1.0, 32).unwrap();
        let w = Weight::Flat { degree: 1 };
        let h = NormHandle::sup_sampled(&SeriesSpec::full(1), 2, &w, &set).unwrap();
        let x = 0.5;
        let v = fs_sup_chebyshev(&h, &Point::real(x), DEFAULT_FACETS).unwrap().value;
        let steps: Vec<f64> = (0..=20).map(|i| -1.0 + 0.1 * i as f64).collect();
        let mut best = f64::INFINITY;
        for &a in &steps {
            for &b in &steps {
                for &c in &steps {
                    for &d in &steps {
                        let c1 = Complex64::new(a, b);
                        let c2 = Complex64::new(c, d);
                        let c0 = Complex64::new(1.0, 0.0) - c1 * x - c2 * x * x;
                        let m = set.points.iter().map(|p| {
                            let z = p.z.finite().unwrap();
                            (c0 + c1 * z + c2 * z * z).norm()
                        });
                        best = best.min(m.fold(0.0, f64::max));
                    }
                }
            }
        }
        assert!(v <= best + 1e-7);
        assert!(best <= v + 0.05, "{v} vs brute force {best}");
    }

    #[test]
    fn sup_fs_sits_between_hilbert_bounds() {
        let set = SampleSet::circle(1.0, 40).unwrap();
        let mu = circle_quadrature(1.0, 40).unwrap();
        let w = Weight::Flat { degree: 1 };
        for k in [2u32, 5, 9] {
            let h = NormHandle::sup_sampled(&SeriesSpec::full(1), k, &w, &set).unwrap();
            let g = gram_matrix(&SeriesSpec::full(1), k, &w, &mu).unwrap();
            let dim = (k + 1) as f64;
            for x in [Point::real(0.3), Point::polar(0.8, 1.0), Point::polar(0.95, -2.0)] {
                let sup = fs_sup_chebyshev(&h, &x, DEFAULT_FACETS).unwrap().value;
                let herm = fs_hermitian(&g, &w, &x).unwrap().finite().unwrap();
                assert!(herm <= sup * (1.0 + 1e-7) && sup <= dim.sqrt() * herm * (1.0 + 1e-7));
            }
        }
    }

    #[test]
    fn real_and_complex_forms_agree() {
        let set = SampleSet::disk(1.0, 3, 48).unwrap();
        let w = Weight::PaperDisk;
        let prob = SupProblem::new(&SeriesSpec::full(1), 9, &w, &set).unwrap();
        assert!(prob.real.is_some());
        let a = prob.fs_value(&Point::real(0.6), 16).unwrap().value;
        let turn = 2.0 * PI * 5.0 / 48.0;
        let b = prob.fs_value(&Point::polar(0.6, turn), 16).unwrap().value;
        assert!((a - b).abs() <= 1e-7 * a);
    }

    #[test]
    fn envelope_iterate_examples() {
        let fs = envelope_iterate(
            &SeriesSpec::full(1),
            &Weight::fubini_study(),
            &SampleSet::sphere(31, 16).unwrap(),
            &grid(-2.0, 2.0, 5),
            32,
            &EnvelopeMode::Sup { facets: DEFAULT_FACETS },
        )
        .unwrap();
        assert!(fs.gap <= 1e-3, "gap {}", fs.gap);
        assert!(fs.values.iter().all(|v| v.abs() <= 2e-3), "{:?}", fs.values);
        assert_eq!(fs.k_source, KSource::Degree(32));
        assert_eq!(fs.history.len(), 3);

        let disk = SampleSet::disk(1.0, 4, 16).unwrap();
        let t = grid(-1.5, 1.5, 7);
        let pd = envelope_iterate(&SeriesSpec::full(1), &Weight::PaperDisk, &disk, &t, 32, &EnvelopeMode::Sup { facets: 16 }).unwrap();
        for (ti, psi) in t.iter().zip(&pd.potential) {
            assert!((psi - ti.max(0.0)).abs() <= 1e-3, "t = {ti}: {psi}");
        }

        let shifted = Weight::Shifted { base: Box::new(Weight::PaperDisk), direction: Direction::Constant { value: 1.0 }, t: 0.5 };
        let sh = envelope_iterate(&SeriesSpec::full(1), &shifted, &disk, &t, 16, &EnvelopeMode::Sup { facets: 16 }).unwrap();
        let base = envelope_iterate(&SeriesSpec::full(1), &Weight::PaperDisk, &disk, &t, 16, &EnvelopeMode::Sup { facets: 16 }).unwrap();
        for (a, b) in sh.potential.iter().zip(&base.potential) {
            assert!((a - b - 0.5).abs() <= 1e-7);
        }
        assert!(envelope_iterate(&SeriesSpec::full(1), &Weight::PaperDisk, &disk, &t, 24, &EnvelopeMode::Sup { facets: 16 }).is_err());
    }

    #[test]
    fn bm_mode_attaches_distortion() {
        let mu = disk_quadrature(1.0, 16, 48).unwrap();
        let disk = SampleSet::disk(1.0, 4, 16).unwrap();
        let t = grid(-1.0, 1.0, 5);
        let env = envelope_iterate(&SeriesSpec::full(1), &Weight::PaperDisk, &disk, &t, 16, &EnvelopeMode::BmEquivalent { measure: mu }).unwrap();
        assert_eq!(env.mode, "bm-equivalent");
        let eps = env.distortion.as_ref().unwrap();
        assert_eq!(eps.len(), 2);
        assert!(eps.iter().all(|(_, e)| *e >= 0.0));
    }

    #[test]
    fn radial_oracle_examples() {
        let t = grid(-3.0, 3.0, 61);
        let pd = radial_profile(&Weight::PaperDisk, &t).unwrap();
        let disk = Descriptor::Disk { radius: 1.0, n_r: 1, n_theta: 1 };
        let circle = Descriptor::Circle { radius: 1.0, n: 1 };
        let env = radial_envelope_oracle(&pd, &disk).unwrap();
        for (ti, psi) in t.iter().zip(&env.potential) {
            assert!((psi - ti.max(0.0)).abs() <= 1e-12);
        }
        assert_eq!(radial_envelope_oracle(&pd, &circle).unwrap().potential, env.potential);

        let fs = radial_profile(&Weight::fubini_study(), &t).unwrap();
        let whole = Descriptor::Sphere { n_rings: 1, n_theta: 1 };
        assert_eq!(radial_envelope_oracle(&fs, &whole).unwrap().potential, fs.values);
        let fs_disk = radial_envelope_oracle(&fs, &disk).unwrap();
        for (ti, psi) in t.iter().zip(&fs_disk.potential) {
            let expect = if *ti <= 0.0 { fs_potential(1, *ti) } else { 0.5 * 2f64.ln() + ti };
            assert!((psi - expect).abs() <= 2e-3, "t = {ti}");
        }
        assert!(matches!(radial_envelope_oracle(&pd, &Descriptor::Custom { label: "x".into() }), Err(LabError::NotRadial(_))));
    }

    #[test]
    fn tautological_examples() {
        let t = grid(-3.0, 3.0, 61);
        let disk = Descriptor::Disk { radius: 1.0, n_r: 1, n_theta: 1 };
        for (_, gap) in tautological_check(&Weight::PaperDisk, &disk, &[16], &t, 3).unwrap() {
            assert!(gap <= 1e-2, "{gap}");
        }
        let whole = Descriptor::Sphere { n_rings: 1, n_theta: 1 };
        for (_, gap) in tautological_check(&Weight::fubini_study(), &whole, &[4, 16], &t, 3).unwrap() {
            assert_eq!(gap, 0.0);
        }
        let circle = Descriptor::Circle { radius: 1.0, n: 1 };
        for (_, gap) in tautological_check(&Weight::Flat { degree: 1 }, &circle, &[8, 32], &t, 3).unwrap() {
            assert!(gap <= 1e-10);
        }
    }

    #[test]
    fn fs_is_monotone_in_the_norm() {
        let small = disk_quadrature(1.0, 10, 32).unwrap();
        let extra = circle_quadrature(1.3, 32).unwrap();
        let big = QuadratureMeasure::union(&[small.clone(), extra]).unwrap();
        let w = Weight::PaperDisk;
        let spec = SeriesSpec::full(1);
        let g0 = gram_matrix(&spec, 8, &w, &big).unwrap();
        let g1 = gram_matrix(&spec, 8, &w, &small).unwrap();
        for i in 0..12 {
            let x = Point::polar(0.2 * i as f64, 0.7 * i as f64);
            let a = fs_hermitian(&g0, &w, &x).unwrap().finite().unwrap();
            let b = fs_hermitian(&g1, &w, &x).unwrap().finite().unwrap();
            assert!(a >= b * (1.0 - 1e-12));
        }
    }

    #[test]
    fn fs_is_monotone_under_restriction() {
        let mu = disk_quadrature(1.0, 12, 40).unwrap();
        let w = Weight::PaperDisk;
        let full = gram_matrix(&SeriesSpec::full(1), 10, &w, &mu).unwrap();
        let even = gram_matrix(&SeriesSpec::even_degree(), 10, &w, &mu).unwrap();
        let set = SampleSet::disk(1.0, 3, 48).unwrap();
        let sup_full = SupProblem::new(&SeriesSpec::full(1), 10, &w, &set).unwrap();
        let sup_even = SupProblem::new(&SeriesSpec::even_degree(), 10, &w, &set).unwrap();
        for i in 1..8 {
            let x = Point::polar(0.25 * i as f64, 0.4 * i as f64);
            let a = fs_hermitian(&full, &w, &x).unwrap().finite().unwrap();
            let b = fs_hermitian(&even, &w, &x).unwrap().finite().unwrap();
            assert!(a <= b * (1.0 + 1e-12));
            let a = sup_full.fs_value(&x, 16).unwrap().value;
            let b = sup_even.fs_value(&x, 16).unwrap().value;
            assert!(a <= b * (1.0 + 1e-6));
        }
    }

    #[test]
    fn sup_fs_is_submultiplicative() {
        let w = Weight::Shifted {
            base: Box::new(Weight::PaperDisk),
            direction: Direction::Bump { center: -0.5, width: 0.4, height: 0.3 },
            t: 1.0,
        };
        let spec = SeriesSpec::full(1);
        let set = SampleSet::disk(1.0, 6, 64).unwrap();
        let tol = 2.0 * (1.0 / (PI / DEFAULT_FACETS as f64).cos()).ln();
        let pts: Vec<Point> = [-1.2, -0.4, 0.0, 0.5].iter().map(|t: &f64| Point::real(t.exp())).collect();
        let log_fs = |k: u32| -> Vec<f64> {
            let prob = SupProblem::new(&spec, k, &w, &set).unwrap();
            pts.iter().map(|x| prob.fs_value(x, DEFAULT_FACETS).unwrap().value.ln()).collect()
        };
        let (a, b, c) = (log_fs(3), log_fs(5), log_fs(8));
        for i in 0..pts.len() {
            // k psi_k + l psi_l <= (k + l) psi_{k+l} in potential form
            assert!(c[i] <= a[i] + b[i] + tol);
        }
    }

    #[test]
    fn fs_commutes_with_pullback() {
        let space = SpaceModel::disjoint_union(2).unwrap().with_base_map(BaseMap::CollapseComponents).unwrap();
        let spec = SeriesSpec::pullback(SeriesSpec::full(1), space).unwrap();
        let a = disk_quadrature(1.0, 10, 32).unwrap();
        let b = circle_quadrature(1.2, 32).unwrap();
        let mu = QuadratureMeasure::union(&[a.on_space(space, 0).unwrap(), b.on_space(space, 1).unwrap()]).unwrap();
        let w = Weight::PaperDisk;
        let up = gram_matrix(&spec, 7, &w, &mu).unwrap();
        let pushed = crate::geometry::pushforward_measure(&mu, &space).unwrap();
        let down = gram_matrix(&SeriesSpec::full(1), 7, &w, &pushed).unwrap();
        for i in 0..6 {
            let z = Point::polar(0.3 * i as f64, i as f64);
            let base = fs_hermitian(&down, &w, &z).unwrap().finite().unwrap();
            for c in 0..2 {
                let v = fs_hermitian(&up, &w, &z.on_component(c)).unwrap().finite().unwrap();
                assert!((v - base).abs() <= 1e-10 * base);
            }
        }
    }

    #[test]
    fn divisor_shift_adds_the_singular_potential() {
        let mu = fs_sphere_quadrature(20, 48).unwrap();
        let w = Weight::fubini_study();
        let k = 5;
        let base = gram_matrix(&SeriesSpec::full(1), k, &w, &mu).unwrap();
        let z0 = Complex64::new(0.3, 0.2);
        let shifted = SeriesSpec::divisor_shift(SeriesSpec::full(1), vec![Root { z: z0, multiplicity: 1 }]).unwrap();
        let w2 = Weight::FubiniStudy { degree: 2 };
        let g = divisor_transport(&base, &shifted, &w2).unwrap();
        let kf = k as f64;
        for i in 0..10 {
            let x = Point::polar(0.15 + 0.3 * i as f64, 0.9 * i as f64);
            let psi = w.phi(&x)
                - fs_hermitian(&base, &w, &x).unwrap().finite().unwrap().ln() / kf;
            let psi_d = w2.phi(&x) - fs_hermitian(&g, &w2, &x).unwrap().finite().unwrap().ln() / kf;
            let z = x.z.finite().unwrap();
            assert!((psi_d - psi - (z - z0).norm().ln()).abs() <= 1e-8);
        }
        assert!(fs_hermitian(&g, &w2, &Point::new(z0)).unwrap().is_infinite());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn radial_hull_is_the_largest_admissible_minorant(
            values in prop::collection::vec(-2.0f64..2.0, 12),
            radius in 0.3f64..3.0,
            whole in any::<bool>(),
        ) {
            let t = grid(-2.0, 2.0, 12);
            let profile = RadialProfile::new(t.clone(), values, 1).unwrap();
            let k = if whole { Descriptor::Sphere { n_rings: 1, n_theta: 1 } } else { Descriptor::Disk { radius, n_r: 1, n_theta: 1 } };
            let support = support_points(&profile, &k).unwrap();
            let hull = RadialHull::new(&support, 1).unwrap();
            for &(s, f) in &support {
                prop_assert!(hull.eval(s) <= f + 1e-12);
            }
            // brute force over slopes: psi(t) = max_beta beta t + min_s (f(s) - beta s)
            let betas: Vec<f64> = (0..=2000).map(|i| i as f64 / 2000.0).collect();
            let extra = [-3.0, -1.1, 0.37, 2.5];
            for &x in t.iter().chain(&extra) {
                let brute = betas
                    .iter()
                    .map(|b| b * x + support.iter().map(|(s, f)| f - b * s).fold(f64::INFINITY, f64::min))
                    .fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(hull.eval(x) >= brute - 1e-12);
                prop_assert!(hull.eval(x) <= brute + 5e-3);
            }
            let vals: Vec<f64> = t.iter().map(|x| hull.eval(*x)).collect();
            for i in 1..t.len() - 1 {
                prop_assert!(vals[i] <= 0.5 * (vals[i - 1] + vals[i + 1]) + 1e-12);
            }
            for i in 1..t.len() {
                let slope = (vals[i] - vals[i - 1]) / (t[i] - t[i - 1]);
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&slope));
            }
        }
    }
}
