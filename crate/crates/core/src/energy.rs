//! Radial Monge-Ampere measures, relative energies and log-volume ratios of
//! unit balls.
//!
//! Conventions: a weight `phi` stands for the metric `h = e^{-2 phi}`, so
//! `log(P_1 / P_0) = -2 (psi_1 - psi_0)` for envelope potentials `psi_i`.
//! Everything is computed on the base `P^1`; integrals over a total space
//! fibred over it pick up the fiber degree.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::envelopes::{radial_envelope_oracle, EnvelopeGrid};
use crate::error::{invalid, LabError, Result};
use crate::geometry::{
    annulus_quadrature, circle_quadrature, disk_quadrature, fs_sphere_quadrature, Descriptor, FiberDegree, Point,
    QuadratureMeasure,
};
use crate::norms::{gram_matrix, orthonormalize, GramMatrix};
use crate::series::SeriesSpec;
use crate::weights::{fiber_sup_weight, radial_profile, RadialProfile, Weight, WeightFamily, FIBER_POINTS};

/// Slack on slope increments and slope range before an envelope counts as
/// non-convex.
pub const CONVEXITY_TOLERANCE: f64 = 1e-6;
/// Steps of the one-sided difference quotients, combined by Richardson
/// extrapolation.
pub const SLOPE_STEPS: (f64, f64) = (0.02, 0.04);

/// `dd^c psi` of a radial potential, as atoms at the grid nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MAMeasure1D {
    pub t: Vec<f64>,
    pub masses: Vec<f64>,
    pub total_mass: f64,
}

impl MAMeasure1D {
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.t.len() {
            return Err(invalid("integrand does not match the measure's grid"));
        }
        Ok(self.masses.iter().zip(values).map(|(m, v)| m * v).sum())
    }

    pub fn integrate_fn(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.t.iter().zip(&self.masses).map(|(t, m)| m * f(*t)).sum()
    }

    /// Mass carried by nodes in `[a, b]`.
    pub fn mass_in(&self, a: f64, b: f64) -> f64 {
        self.t.iter().zip(&self.masses).filter(|(t, _)| a <= **t && **t <= b).map(|(_, m)| m).sum()
    }
}

/// Monge-Ampere measure of the piecewise linear potential on the grid.
///
/// Slopes are taken as 0 left of the grid and `d` right of it, so the first
/// and last atoms carry the tails and the total mass is `d`. Slope increments
/// and slopes outside `[0, d]` are tolerated up to [`CONVEXITY_TOLERANCE`]
/// and then projected away.
pub fn ma_measure_radial(env: &EnvelopeGrid) -> Result<MAMeasure1D> {
    env.validate()?;
    let d = env.degree as f64;
    let n = env.t.len();
    let mut slopes = Vec::with_capacity(n + 1);
    slopes.push(0.0);
    for i in 0..n - 1 {
        slopes.push((env.potential[i + 1] - env.potential[i]) / (env.t[i + 1] - env.t[i]));
    }
    slopes.push(d);
    for (i, w) in slopes.windows(2).enumerate() {
        if w[1] < w[0] - CONVEXITY_TOLERANCE {
            return Err(LabError::InvalidEnvelope(format!(
                "slope drops by {:.3e} at t = {}",
                w[0] - w[1],
                env.t[i]
            )));
        }
    }
    if slopes.iter().any(|s| *s < -CONVEXITY_TOLERANCE || *s > d + CONVEXITY_TOLERANCE) {
        return Err(LabError::InvalidEnvelope("slopes leave [0, d]".into()));
    }
    let mut running = 0.0;
    for s in slopes.iter_mut() {
        running = s.clamp(running, d);
        *s = running;
    }
    let masses: Vec<f64> = slopes.windows(2).map(|w| w[1] - w[0]).collect();
    let total_mass = masses.iter().sum();
    Ok(MAMeasure1D { t: env.t.clone(), masses, total_mass })
}

/// Difference `E_kappa(P_0) - E_kappa(P_1)` of relative energies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyDiff {
    pub value: f64,
    pub kappa: u32,
    pub fiber_degree: FiberDegree,
    /// `int log(P_1/P_0) MA_i` over the total space, for `i` factors of the
    /// first envelope's measure.
    pub components: Vec<f64>,
}

/// Relative energy of two radial envelopes on the base, for `kappa = 1`.
///
/// Over a total space of fiber degree `fd` each mixed integral is `fd` times
/// the base integral, and the prefactor divides it out again.
pub fn kappa_energy_diff(env0: &EnvelopeGrid, env1: &EnvelopeGrid, kappa: u32, fd: FiberDegree) -> Result<EnergyDiff> {
    if kappa != 1 {
        return Err(LabError::UnsupportedSeries("relative energies are computed for kappa = 1".into()));
    }
    if env0.t != env1.t || env0.degree != env1.degree {
        return Err(invalid("envelopes live on different grids"));
    }
    let ma0 = ma_measure_radial(env0)?;
    let ma1 = ma_measure_radial(env1)?;
    let log_ratio: Vec<f64> = env0.potential.iter().zip(&env1.potential).map(|(p0, p1)| 2.0 * (p0 - p1)).collect();
    let components = vec![fd.value * ma1.integrate(&log_ratio)?, fd.value * ma0.integrate(&log_ratio)?];
    let value = components.iter().sum::<f64>() / (2.0 * (kappa + 1) as f64 * fd.value);
    Ok(EnergyDiff { value, kappa, fiber_degree: fd, components })
}

/// `log det` of a Gram matrix in its scaled basis, from a Jacobi-scaled
/// Cholesky factorization.
fn log_det(g: &GramMatrix) -> Result<f64> {
    let m = g.dim();
    let diag: Vec<f64> = (0..m).map(|i| g.entries[(i, i)].re).collect();
    if diag.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return Err(LabError::DegenerateGram("a basis element has zero norm".into()));
    }
    let log_diag: f64 = diag.iter().map(|d| d.ln()).sum();
    if g.diagonal {
        return Ok(log_diag);
    }
    let dinv: Vec<f64> = diag.iter().map(|d| d.powf(-0.5)).collect();
    let h = DMatrix::from_fn(m, m, |i, j| g.entries[(i, j)] * (dinv[i] * dinv[j]));
    let chol = h.cholesky().ok_or_else(|| LabError::DegenerateGram("Gram matrix is not positive definite".into()))?;
    let l = chol.l_dirty();
    let mut acc = log_diag;
    for i in 0..m {
        let p = l[(i, i)].re;
        if !(p * p > crate::norms::PIVOT_TOLERANCE) {
            return Err(LabError::DegenerateGram(format!("pivot {:.3e} below tolerance", p * p)));
        }
        acc += 2.0 * p.ln();
    }
    Ok(acc)
}

/// `log v(B_0) / v(B_1)` for the Hermitian unit balls of two Grams on the
/// same basis: `log det G_1 - log det G_0`.
pub fn volume_log_ratio(g0: &GramMatrix, g1: &GramMatrix) -> Result<f64> {
    if g0.basis != g1.basis || g0.log_scales != g1.log_scales {
        return Err(invalid("Gram matrices use different bases"));
    }
    Ok(log_det(g1)? - log_det(g0)?)
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Scale turning `log v(B_0)/v(B_1)` into an energy: `kappa! / (2 k^{kappa+1})`.
///
/// Real Lebesgue volume on `W_k` counts `2 dim W_k` real directions, while
/// `dim W_k ~ vol k^kappa / kappa!`; this factor makes a constant rescale of
/// the metric reproduce the multiplicity exactly.
pub fn volume_normalization(k: u32, kappa: u32) -> f64 {
    factorial(kappa) / (2.0 * (k as f64).powi(kappa as i32 + 1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeRatioRow {
    pub k: u32,
    pub log_ratio: f64,
    pub normalized: f64,
    /// Bound on the normalized change from replacing sup-balls by Hilbert
    /// balls: `N_k log sup_K B_k` for both metrics, normalized.
    pub budget: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeRatioSeries {
    pub kappa: u32,
    pub rows: Vec<VolumeRatioRow>,
}

/// Bernstein-Markov measure on a radial `K`, resolving sections of degree
/// `n` in the chart exactly in angle.
pub fn bm_measure(k_set: &Descriptor, n: u32) -> Result<QuadratureMeasure> {
    let n_theta = 2 * n as usize + 2;
    let n_r = n as usize + 2;
    match k_set {
        Descriptor::Circle { radius, .. } => circle_quadrature(*radius, n_theta),
        Descriptor::Disk { radius, .. } => disk_quadrature(*radius, n_r, n_theta),
        Descriptor::Annulus { inner, outer, .. } => annulus_quadrature(*inner, *outer, n_r, n_theta),
        Descriptor::Sphere { .. } => fs_sphere_quadrature(n_r, n_theta),
        other => Err(LabError::NotRadial(format!("no Bernstein-Markov rule for {other:?}"))),
    }
}

fn log_sup_kernel(g: &GramMatrix, w: &Weight, mu: &QuadratureMeasure) -> Result<f64> {
    let ob = orthonormalize(g)?;
    let sup = mu.nodes.iter().map(|p| ob.kernel_at(w, p)).fold(0.0, f64::max);
    Ok(sup.ln().max(0.0))
}

/// Log-volume ratios of Hilbert unit balls over `K` for `k` in `k_list`, and
/// the oracle energy difference of the two radial envelopes.
#[allow(clippy::too_many_arguments)]
pub fn volume_ratio_limit_check(
    spec: &SeriesSpec,
    w0: &Weight,
    w1: &Weight,
    k_set: &Descriptor,
    k_list: &[u32],
    kappa: u32,
    fd: FiberDegree,
    t_grid: &[f64],
) -> Result<(VolumeRatioSeries, EnergyDiff)> {
    let degree = spec.line_degree();
    let mut rows = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let mu = bm_measure(k_set, 2 * k * degree)?;
        let g0 = gram_matrix(spec, k, w0, &mu)?;
        let g1 = gram_matrix(spec, k, w1, &mu)?;
        let log_ratio = volume_log_ratio(&g0, &g1)?;
        let scale = volume_normalization(k, kappa);
        let spread = g0.dim() as f64 * (log_sup_kernel(&g0, w0, &mu)? + log_sup_kernel(&g1, w1, &mu)?);
        rows.push(VolumeRatioRow { k, log_ratio, normalized: scale * log_ratio, budget: scale * spread });
    }
    let env0 = radial_envelope_oracle(&radial_profile(w0, t_grid)?, k_set)?;
    let env1 = radial_envelope_oracle(&radial_profile(w1, t_grid)?, k_set)?;
    let energy = kappa_energy_diff(&env0, &env1, kappa, fd)?;
    Ok((VolumeRatioSeries { kappa, rows }, energy))
}

/// `t -> E(env(t)) - E(env(0))` near 0 with one-sided slopes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeScan {
    pub rows: Vec<(f64, f64)>,
    pub slope_minus: f64,
    pub slope_plus: f64,
    /// Whether the direction is constant along the fibers.
    pub pulled_back: bool,
    /// `int f d mu_eq` on the base.
    pub predicted: f64,
}

impl DerivativeScan {
    pub fn kink(&self) -> f64 {
        (self.slope_plus - self.slope_minus).abs()
    }
}

/// Profile of a member of the family on the base: the fiberwise inf on a
/// product, the weight itself on one sphere.
fn base_profile(spec: &SeriesSpec, w: &Weight, t_grid: &[f64]) -> Result<RadialProfile> {
    if spec.space.is_product() {
        radial_profile(&fiber_sup_weight(w, &spec.space, FIBER_POINTS)?, t_grid)
    } else {
        radial_profile(w, t_grid)
    }
}

/// Energy along `phi + t f` near `t = 0`, for a family reducible to a radial
/// computation on the base. `k_set` is the base image of `K`.
pub fn energy_derivative_scan(
    spec: &SeriesSpec,
    fam: &WeightFamily,
    k_set: &Descriptor,
    t_grid: &[f64],
    kappa: u32,
    fd: FiberDegree,
) -> Result<DerivativeScan> {
    let (h1, h2) = SLOPE_STEPS;
    let env_at = |s: f64| -> Result<EnvelopeGrid> {
        radial_envelope_oracle(&base_profile(spec, &fam.member(s)?, t_grid)?, k_set)
    };
    let base = env_at(0.0)?;
    let mut rows = Vec::new();
    for s in [-h2, -h1, 0.0, h1, h2] {
        let e = if s == 0.0 { 0.0 } else { kappa_energy_diff(&env_at(s)?, &base, kappa, fd)?.value };
        rows.push((s, e));
    }
    let e = |i: usize| rows[i].1;
    let slope_plus = 2.0 * (e(3) - e(2)) / h1 - (e(4) - e(2)) / h2;
    let slope_minus = 2.0 * (e(2) - e(1)) / h1 - (e(2) - e(0)) / h2;
    let pulled_back = !matches!(fam.direction, crate::weights::Direction::Oscillating { .. });
    let ma = ma_measure_radial(&base)?;
    let predicted = ma.integrate_fn(|t| fam.direction.eval(&Point::real(t.exp())));
    Ok(DerivativeScan { rows, slope_minus, slope_plus, pulled_back, predicted })
}

/// `f_k(t) = kappa!/(2 k^{kappa+1}) log v(B_k(t))/v(B_k(0))` for Hilbert
/// balls of `Hilb_k(phi + t f, mu)`.
pub fn volume_functional(
    spec: &SeriesSpec,
    fam: &WeightFamily,
    mu: &QuadratureMeasure,
    k: u32,
    kappa: u32,
    ts: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let g0 = gram_matrix(spec, k, &fam.member(0.0)?, mu)?;
    let scale = volume_normalization(k, kappa);
    ts.iter()
        .map(|&t| {
            let gt = gram_matrix(spec, k, &fam.member(t)?, mu)?;
            Ok((t, scale * volume_log_ratio(&gt, &g0)?))
        })
        .collect()
}

/// Largest violation of midpoint concavity over consecutive triples of an
/// equally spaced scan.
pub fn midpoint_concavity_defect(scan: &[(f64, f64)]) -> f64 {
    scan.windows(3).map(|w| 0.5 * (w[0].1 + w[2].1) - w[1].1).fold(f64::NEG_INFINITY, f64::max)
}

/// Growth of `W(phi)` against the numerical dimension of `dd^c phi` for a
/// radial potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WPhiReport {
    pub kappa: u32,
    pub nd: u32,
    pub vol: f64,
    /// `int T^kappa ^ omega^{1-kappa}` for the non-pluripolar part of `T`.
    pub mass_bound: f64,
    pub slope_range: (f64, f64),
}

impl WPhiReport {
    pub fn holds(&self) -> bool {
        self.kappa <= self.nd && self.vol <= self.mass_bound + 1e-9
    }
}

/// `W_k(phi) = {z^a : a t / k <= phi(t) + C}` for a convex profile extended
/// linearly by its end slopes, so `z^a` belongs iff `a/k` lies in the slope
/// range. The atoms of `dd^c phi` at `0` and infinity are pluripolar; the
/// rest has mass equal to the width of the slope range.
pub fn w_phi_check(profile: &RadialProfile, k_max: u32) -> Result<WPhiReport> {
    let n = profile.t.len();
    if n < 2 || k_max < 4 {
        return Err(invalid("need at least two profile points and k_max >= 4"));
    }
    let d = profile.degree as f64;
    let slopes: Vec<f64> = (0..n - 1)
        .map(|i| (profile.values[i + 1] - profile.values[i]) / (profile.t[i + 1] - profile.t[i]))
        .collect();
    if slopes.windows(2).any(|w| w[1] < w[0] - CONVEXITY_TOLERANCE)
        || slopes.iter().any(|s| *s < -CONVEXITY_TOLERANCE || *s > d + CONVEXITY_TOLERANCE)
    {
        return Err(LabError::InvalidEnvelope("profile is not a psh potential".into()));
    }
    let lo = slopes[0].clamp(0.0, d);
    let hi = slopes[n - 2].clamp(lo, d);
    let dim = |k: u32| -> usize {
        let kf = k as f64;
        (0..=k * profile.degree).filter(|a| {
            let x = *a as f64 / kf;
            lo - 1e-12 <= x && x <= hi + 1e-12
        }).count()
    };
    let (k1, k2) = (k_max / 2, k_max);
    let (d1, d2) = (dim(k1), dim(k2));
    let kappa = if d1 == 0 || d2 == 0 { 0 } else { ((d2 as f64 / d1 as f64).log2()).round().max(0.0) as u32 };
    let vol = if kappa == 0 { if d2 > 0 { 1.0 } else { 0.0 } } else { (hi - lo).max(0.0) };
    let interior = hi - lo;
    let nd = u32::from(interior > CONVEXITY_TOLERANCE);
    let mass_bound = if kappa == 0 { 1.0 } else { interior };
    Ok(WPhiReport { kappa, nd, vol, mass_bound, slope_range: (lo, hi) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SpaceModel;
    use crate::norms::seeded_rng;
    use crate::Complex64;
    use crate::weights::{fiber_grid, fiber_inf_weight, Direction};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::LN_2;

    /// `[-10, 6]` in steps of `1e-3`, with 0 on the grid.
    fn fine_grid() -> Vec<f64> {
        (0..=16_000).map(|i| i as f64 / 1000.0 - 10.0).collect()
    }

    fn disk() -> Descriptor {
        Descriptor::Disk { radius: 1.0, n_r: 1, n_theta: 1 }
    }

    fn sphere() -> Descriptor {
        Descriptor::Sphere { n_rings: 1, n_theta: 1 }
    }

    fn oracle(w: &Weight, k_set: &Descriptor) -> EnvelopeGrid {
        radial_envelope_oracle(&radial_profile(w, &fine_grid()).unwrap(), k_set).unwrap()
    }

    fn fd1() -> FiberDegree {
        FiberDegree::new(1.0).unwrap()
    }

    fn bump(center: f64, width: f64, height: f64) -> Direction {
        Direction::Bump { center, width, height }
    }

    #[test]
    fn paper_disk_mass_sits_on_the_unit_circle() {
        let ma = ma_measure_radial(&oracle(&Weight::PaperDisk, &disk())).unwrap();
        assert!((ma.total_mass - 1.0).abs() <= 1e-10);
        assert!((ma.mass_in(0.0, 0.0) - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn fs_mass_is_the_radial_marginal_of_the_area_form() {
        let ma = ma_measure_radial(&oracle(&Weight::fubini_study(), &sphere())).unwrap();
        assert!((ma.total_mass - 1.0).abs() <= 1e-10);
        for t in [-1.2f64, 0.0, 0.9] {
            let radius = t.exp();
            let lam = disk_quadrature(radius, 40, 8).unwrap();
            let area = lam.integrate(|p| {
                let r2 = p.z.finite().unwrap().norm_sqr();
                radius * radius / ((1.0 + r2) * (1.0 + r2))
            });
            // atoms at nodes up to t, plus half the atom on the node itself
            let below = ma.mass_in(-20.0, t + 1e-9) - 0.5 * ma.mass_in(t - 1e-9, t + 1e-9);
            assert!((below - area).abs() <= 1e-6, "r = {radius}: {below} vs {area}");
        }
    }

    #[test]
    fn single_kink_is_a_single_atom() {
        let t: Vec<f64> = (0..=40).map(|i| -2.0 + 0.1 * i as f64).collect();
        let values: Vec<f64> = t.iter().map(|x| 0.4 * x.max(-1.0) + 0.6 * x.max(1.0)).collect();
        let w = Weight::Radial { profile: RadialProfile::new(t.clone(), values, 1).unwrap() };
        let env = radial_envelope_oracle(&radial_profile(&w, &t).unwrap(), &sphere()).unwrap();
        let ma = ma_measure_radial(&env).unwrap();
        let atoms: Vec<(f64, f64)> = ma.t.iter().zip(&ma.masses).filter(|(_, m)| **m > 1e-12).map(|(t, m)| (*t, *m)).collect();
        assert_eq!(atoms.len(), 2);
        assert!((atoms[0].0 + 1.0).abs() < 1e-12 && (atoms[0].1 - 0.4).abs() < 1e-12);
        assert!((atoms[1].0 - 1.0).abs() < 1e-12 && (atoms[1].1 - 0.6).abs() < 1e-12);
    }

    #[test]
    fn non_convex_potentials_are_rejected() {
        let mut env = oracle(&Weight::fubini_study(), &sphere());
        env.potential[8000] += 0.01;
        assert!(matches!(ma_measure_radial(&env), Err(LabError::InvalidEnvelope(_))));
    }

    #[test]
    fn energy_examples() {
        let fs = oracle(&Weight::fubini_study(), &disk());
        assert_eq!(kappa_energy_diff(&fs, &fs, 1, fd1()).unwrap().value, 0.0);
        for c in [-0.7, 0.25, 1.5] {
            let shifted = Weight::Shifted { base: Box::new(Weight::fubini_study()), direction: Direction::Constant { value: 1.0 }, t: c };
            let e = kappa_energy_diff(&oracle(&shifted, &disk()), &fs, 1, fd1()).unwrap();
            // identical measures of mass d = 1: the energy is c
            assert!((e.value - c).abs() <= 1e-10);
        }
        let pd = oracle(&Weight::PaperDisk, &disk());
        let e = kappa_energy_diff(&pd, &fs, 1, fd1()).unwrap();
        // (1/2) int (psi_pd - psi_fs) (MA_pd + MA_fs) in closed form
        let exact = -0.25 * LN_2 - 0.125;
        assert!((e.value - exact).abs() <= 1e-5, "{} vs {exact}", e.value);
        assert!(kappa_energy_diff(&pd, &fs, 2, fd1()).is_err());
    }

    #[test]
    fn energy_does_not_see_the_fiber_degree() {
        let pd = oracle(&Weight::PaperDisk, &disk());
        let fs = oracle(&Weight::fubini_study(), &disk());
        let a = kappa_energy_diff(&pd, &fs, 1, fd1()).unwrap();
        let b = kappa_energy_diff(&pd, &fs, 1, FiberDegree::new(3.0).unwrap()).unwrap();
        assert!((a.value - b.value).abs() <= 1e-12);
        assert!((b.components[0] - 3.0 * a.components[0]).abs() <= 1e-12);
    }

    #[test]
    fn energy_is_an_antisymmetric_cocycle() {
        let ws = [
            Weight::PaperDisk,
            Weight::fubini_study(),
            Weight::Shifted { base: Box::new(Weight::fubini_study()), direction: bump(-0.5, 0.8, 0.4), t: 1.0 },
            Weight::Shifted { base: Box::new(Weight::PaperDisk), direction: Direction::InverseFs, t: -0.6 },
        ];
        let envs: Vec<EnvelopeGrid> = ws.iter().map(|w| oracle(w, &disk())).collect();
        for a in &envs {
            for b in &envs {
                let ab = kappa_energy_diff(a, b, 1, fd1()).unwrap().value;
                let ba = kappa_energy_diff(b, a, 1, fd1()).unwrap().value;
                assert!((ab + ba).abs() <= 1e-10);
                for c in &envs {
                    let bc = kappa_energy_diff(b, c, 1, fd1()).unwrap().value;
                    let ac = kappa_energy_diff(a, c, 1, fd1()).unwrap().value;
                    assert!((ac - ab - bc).abs() <= 1e-10);
                }
            }
        }
    }

    fn gram_pair() -> (GramMatrix, GramMatrix) {
        let mut rng = seeded_rng(17);
        let nodes: Vec<Point> = (0..12).map(|_| Point::polar(rng.gen_range(0.2..1.5), rng.gen_range(0.0..6.3))).collect();
        let weights: Vec<f64> = (0..12).map(|_| rng.gen_range(0.2..1.0)).collect();
        let custom = Descriptor::Custom { label: "random".into() };
        let mu = QuadratureMeasure::new(SpaceModel::sphere(), custom.clone(), nodes.clone(), weights.clone()).unwrap();
        let extra: Vec<f64> = weights.iter().map(|w| w * rng.gen_range(0.2..0.6)).collect();
        let nu = QuadratureMeasure::new(SpaceModel::sphere(), custom, nodes, extra).unwrap();
        let spec = SeriesSpec::full(1);
        let g0 = gram_matrix(&spec, 2, &Weight::fubini_study(), &mu).unwrap();
        let bigger = QuadratureMeasure::union(&[mu, nu]).unwrap();
        let g1 = gram_matrix(&spec, 2, &Weight::fubini_study(), &bigger).unwrap();
        (g0, g1)
    }

    #[test]
    fn volume_log_ratio_examples() {
        let (g0, g1) = gram_pair();
        assert_eq!(volume_log_ratio(&g0, &g0).unwrap(), 0.0);
        let mut g4 = g0.clone();
        g4.entries *= Complex64::new(4.0, 0.0);
        assert!((volume_log_ratio(&g0, &g4).unwrap() - 3.0 * 4f64.ln()).abs() <= 1e-12);

        let a = DMatrix::from_fn(3, 3, |i, j| Complex64::new(((i + 2 * j) as f64).sin() + if i == j { 2.0 } else { 0.0 }, (i as f64 - j as f64) * 0.3));
        let congruent = |g: &GramMatrix| {
            let mut h = g.clone();
            h.entries = a.adjoint() * &g.entries * &a;
            h
        };
        let before = volume_log_ratio(&g0, &g1).unwrap();
        let after = volume_log_ratio(&congruent(&g0), &congruent(&g1)).unwrap();
        assert!((before - after).abs() <= 1e-10);

        let mut degenerate = g0.clone();
        degenerate.entries = DMatrix::from_fn(3, 3, |_, _| Complex64::new(1.0, 0.0));
        assert!(matches!(volume_log_ratio(&g0, &degenerate), Err(LabError::DegenerateGram(_))));
    }

    #[test]
    fn volume_log_ratio_matches_monte_carlo() {
        // B_1 sits inside B_0, so the fraction of uniform samples of B_0 that
        // land in B_1 estimates v(B_1)/v(B_0).
        let (g0, g1) = gram_pair();
        let l0 = g0.entries.clone().cholesky().unwrap().l();
        let lt_inv = l0.adjoint().try_inverse().unwrap();
        let mut rng = seeded_rng(99);
        let n = 1_000_000;
        let mut hits = 0usize;
        for _ in 0..n {
            let mut u = nalgebra::DVector::from_fn(3, |_, _| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
            let radius = rng.gen::<f64>().powf(1.0 / 6.0);
            u *= Complex64::new(radius / u.norm(), 0.0);
            let c = &lt_inv * u;
            if (c.adjoint() * &g1.entries * &c)[(0, 0)].re <= 1.0 {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt() / p;
        let estimate = -p.ln();
        let exact = volume_log_ratio(&g0, &g1).unwrap();
        assert!((estimate - exact).abs() <= 3.0 * sigma, "{estimate} vs {exact} (sigma {sigma})");
    }

    #[test]
    fn volume_ratio_of_a_weight_with_itself_vanishes() {
        let (series, energy) = volume_ratio_limit_check(
            &SeriesSpec::full(1),
            &Weight::PaperDisk,
            &Weight::PaperDisk,
            &disk(),
            &[8, 16],
            1,
            fd1(),
            &fine_grid(),
        )
        .unwrap();
        assert!(series.rows.iter().all(|r| r.log_ratio == 0.0 && r.normalized == 0.0));
        assert_eq!(energy.value, 0.0);
    }

    #[test]
    fn constant_rescale_recovers_the_multiplicity() {
        // h_0 = 2 h_1 means phi_0 = phi_1 - (log 2)/2
        let w1 = Weight::fubini_study();
        let w0 = Weight::Shifted { base: Box::new(w1.clone()), direction: Direction::Constant { value: 1.0 }, t: -0.5 * LN_2 };
        let (series, energy) =
            volume_ratio_limit_check(&SeriesSpec::full(1), &w0, &w1, &disk(), &[32, 128], 1, fd1(), &fine_grid()).unwrap();
        assert!((energy.value + 0.5 * LN_2).abs() <= 1e-10);
        for r in &series.rows {
            let k = r.k as f64;
            assert!((r.normalized + 0.5 * LN_2 * (k + 1.0) / k).abs() <= 1e-8);
        }
        let vol = -2.0 * series.rows[1].normalized / LN_2;
        assert!((vol - 1.0).abs() <= 0.01);
    }

    #[test]
    fn derivative_scan_examples() {
        let t = fine_grid();
        let one = FiberDegree::new(1.0).unwrap();
        let spec = SeriesSpec::full(1);
        let fam = WeightFamily::new(Weight::fubini_study(), Direction::Constant { value: 1.0 }).unwrap();
        let s = energy_derivative_scan(&spec, &fam, &sphere(), &t, 1, one).unwrap();
        assert!((s.slope_plus - 1.0).abs() <= 1e-9 && (s.slope_minus - 1.0).abs() <= 1e-9);
        assert!((s.predicted - 1.0).abs() <= 1e-10);

        let fam = WeightFamily::new(Weight::fubini_study(), Direction::InverseFs).unwrap();
        let s = energy_derivative_scan(&spec, &fam, &sphere(), &t, 1, one).unwrap();
        assert!((s.slope_plus - 0.5).abs() <= 1e-4 && (s.slope_minus - 0.5).abs() <= 1e-4);
        assert!((s.predicted - 0.5).abs() <= 1e-4);
        assert!(s.pulled_back);
    }

    #[test]
    fn oscillating_direction_has_a_kink() {
        let t = fine_grid();
        let spec = SeriesSpec::pullback(SeriesSpec::full(1), SpaceModel::product()).unwrap();
        let fam = WeightFamily::new(
            Weight::fubini_study(),
            Direction::Oscillating { base: Box::new(Direction::Constant { value: 1.0 }) },
        )
        .unwrap();
        let s = energy_derivative_scan(&spec, &fam, &sphere(), &t, 1, fd1()).unwrap();
        assert!(!s.pulled_back);
        assert!((s.slope_plus + 1.0).abs() <= 1e-9 && (s.slope_minus - 1.0).abs() <= 1e-9);
        assert!((s.slope_plus + s.slope_minus).abs() <= 1e-8);
        assert!(s.kink() >= 0.5 * s.slope_plus.abs());

        let fam = WeightFamily::new(Weight::fubini_study(), Direction::InverseFs).unwrap();
        let s = energy_derivative_scan(&spec, &fam, &sphere(), &t, 1, fd1()).unwrap();
        assert!(s.kink() <= 0.02 * s.slope_plus.abs());
        assert!((s.slope_plus - s.predicted).abs() <= 0.05 * s.predicted);
    }

    #[test]
    fn product_energy_does_not_depend_on_the_fiber_grid() {
        let t = fine_grid();
        let g = Direction::Oscillating { base: Box::new(Direction::InverseFs) };
        let w = Weight::Shifted { base: Box::new(Weight::fubini_study()), direction: g, t: 0.3 };
        let env = |n: usize| {
            let pushed = fiber_inf_weight(&w, fiber_grid(n).unwrap()).unwrap();
            radial_envelope_oracle(&radial_profile(&pushed, &t).unwrap(), &sphere()).unwrap()
        };
        let base = oracle(&Weight::fubini_study(), &sphere());
        let a = kappa_energy_diff(&env(16), &base, 1, fd1()).unwrap().value;
        let b = kappa_energy_diff(&env(64), &base, 1, fd1()).unwrap().value;
        assert!((a - b).abs() <= 1e-6);
    }

    #[test]
    fn volume_functional_is_midpoint_concave() {
        let mu = disk_quadrature(1.0, 24, 40).unwrap();
        let ts: Vec<f64> = (0..=8).map(|i| -1.0 + 0.25 * i as f64).collect();
        for dir in [Direction::InverseFs, bump(-0.3, 0.5, 1.0), Direction::Constant { value: 1.0 }] {
            let fam = WeightFamily::new(Weight::PaperDisk, dir).unwrap();
            for k in [4, 12] {
                let scan = volume_functional(&SeriesSpec::full(1), &fam, &mu, k, 1, &ts).unwrap();
                assert!(midpoint_concavity_defect(&scan) <= 1e-9);
            }
        }
    }

    #[test]
    fn bumps_do_not_move_mass_outside_their_support() {
        let t = fine_grid();
        for (base, k_set) in [(Weight::fubini_study(), sphere()), (Weight::PaperDisk, disk())] {
            let (center, width) = (-0.6, 0.5);
            let w = Weight::Shifted { base: Box::new(base.clone()), direction: bump(center, width, 0.3), t: 1.0 };
            let a = ma_measure_radial(&oracle(&base, &k_set)).unwrap();
            let b = ma_measure_radial(&oracle(&w, &k_set)).unwrap();
            assert!((a.total_mass - b.total_mass).abs() <= 1e-10);
            assert!((b.total_mass - 1.0).abs() <= 1e-10);
            for ((t, ma), mb) in t.iter().zip(&a.masses).zip(&b.masses) {
                if (t - center).abs() > width + 1e-9 {
                    assert!((ma - mb).abs() <= 1e-10, "t = {t}");
                }
            }
        }
    }

    fn profile(values: impl Fn(f64) -> f64, degree: u32) -> RadialProfile {
        let t: Vec<f64> = (0..=80).map(|i| -4.0 + 0.1 * i as f64).collect();
        let v = t.iter().map(|x| values(*x)).collect();
        RadialProfile::new(t, v, degree).unwrap()
    }

    #[test]
    fn w_phi_fixtures() {
        let cases = [
            (profile(|t| t.max(0.0), 1), 1, 1, 1.0),
            (profile(|t| 0.5 * (2.0 * t).exp().ln_1p(), 1), 1, 1, 1.0),
            (profile(|t| 0.25 * t.max(0.0) + 0.5 * t, 1), 1, 1, 0.25),
            (profile(|_| 0.0, 1), 0, 0, 1.0),
            (profile(|t| 2.0 * t, 2), 0, 0, 1.0),
            (profile(|t| (0.5 * t).max(1.5 * t - 1.0), 2), 1, 1, 1.0),
        ];
        for (p, kappa, nd, vol) in cases {
            let r = w_phi_check(&p, 128).unwrap();
            assert_eq!((r.kappa, r.nd), (kappa, nd), "{r:?}");
            assert!((r.vol - vol).abs() <= 2e-3, "{r:?}");
            assert!(r.holds());
        }
        assert!(w_phi_check(&profile(|t| -t * t, 1), 64).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn ma_mass_is_the_degree(values in prop::collection::vec(-3.0f64..3.0, 20), degree in 1u32..4, whole in any::<bool>()) {
            let t: Vec<f64> = (0..20).map(|i| -3.0 + 0.3 * i as f64).collect();
            let w = Weight::Radial { profile: RadialProfile::new(t.clone(), values, degree).unwrap() };
            let k_set = if whole { sphere() } else { disk() };
            let env = radial_envelope_oracle(&radial_profile(&w, &t).unwrap(), &k_set).unwrap();
            let ma = ma_measure_radial(&env).unwrap();
            prop_assert!((ma.total_mass - degree as f64).abs() <= 1e-10);
            prop_assert!(ma.masses.iter().all(|m| *m >= 0.0));
            let r = w_phi_check(&env.profile().unwrap(), 64).unwrap();
            prop_assert!(r.holds());
        }
    }
}
