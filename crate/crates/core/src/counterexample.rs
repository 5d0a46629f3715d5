//! Divergent partial Bergman kernels on two disjoint spheres, and their
//! convergence after pushing forward to one sphere.
//!
//! Annuli `A_i, C_i` of the unit disk are chosen so that the normalized
//! Bergman density of `(lambda, phi)` puts most of its mass on `A_i` at level
//! `alpha_i` and on `C_i` at level `beta_i`. The measure `(2 + g)/4 lambda`
//! on one sphere and `(2 - g)/4 lambda` on the other, with `g` the indicator
//! of the `A_i`, then moves mass between the components as `k` runs through
//! the two subsequences.

use serde::{Deserialize, Serialize};

use crate::bergman::{convergence_scan, normalized_density, ScanRow, MOMENT_ORDER};
use crate::error::{invalid, LabError, Result};
use crate::geometry::{
    annulus_quadrature, circle_quadrature, disk_quadrature, gauss_legendre, BaseMap, Point, QuadratureMeasure,
    SpaceModel,
};
use crate::norms::{gram_matrix, orthonormalize};
use crate::series::SeriesSpec;
use crate::weights::{Direction, Weight};

/// Mass each annulus must capture in the construction.
pub const REQUIRED_MASS: f64 = 2.0 / 3.0;
pub const DEFAULT_TARGET: f64 = 0.85;
pub const DEFAULT_LADDER: (u32, u32) = (4, 4);
pub const AMPLITUDE_THRESHOLD: f64 = 0.15;
pub const RESCUE_THRESHOLD: f64 = 0.1;

const CELLS: usize = 2000;
const CELL_NODES: usize = 8;

/// Radial distribution of the normalized Bergman density of `(lambda, phi)`
/// at one level, tabulated on a grid that clusters at `|z| = 1`.
#[derive(Clone, Debug)]
pub struct RadialDensity {
    pub k: u32,
    edges: Vec<f64>,
    cdf: Vec<f64>,
}

impl RadialDensity {
    pub fn new(w: &Weight, k: u32) -> Result<Self> {
        let mu = disk_quadrature(1.0, 2 * k as usize + 2, 2 * k as usize + 2)?;
        let ob = orthonormalize(&gram_matrix(&SeriesSpec::full(w.degree()), k, w, &mu)?)?;
        let scale = 1.0 / ob.basis.dim() as f64;
        let edges: Vec<f64> = (0..=CELLS).map(|i| 1.0 - (1.0 - i as f64 / CELLS as f64).powi(3)).collect();
        let mut cdf = Vec::with_capacity(CELLS + 1);
        cdf.push(0.0);
        for c in edges.windows(2) {
            let cell: f64 = gauss_legendre(CELL_NODES, c[0], c[1])
                .into_iter()
                .map(|(r, wt)| wt * 2.0 * r * scale * ob.kernel_at(w, &Point::real(r)))
                .sum();
            cdf.push(cdf.last().unwrap() + cell);
        }
        Ok(Self { k, edges, cdf })
    }

    /// Mass of `{|z| < r}`.
    pub fn cdf(&self, r: f64) -> f64 {
        let r = r.clamp(0.0, 1.0);
        let j = (self.edges.partition_point(|e| *e <= r)).clamp(1, CELLS) - 1;
        let s = (r - self.edges[j]) / (self.edges[j + 1] - self.edges[j]);
        self.cdf[j] + s * (self.cdf[j + 1] - self.cdf[j])
    }

    pub fn mass(&self, a: f64, b: f64) -> f64 {
        self.cdf(b) - self.cdf(a)
    }

    /// Smallest radius whose disk has mass `p`.
    pub fn quantile(&self, p: f64) -> f64 {
        if p >= self.cdf[CELLS] {
            return 1.0;
        }
        let j = self.cdf.partition_point(|c| *c <= p).clamp(1, CELLS) - 1;
        let span = self.cdf[j + 1] - self.cdf[j];
        let s = if span > 0.0 { (p - self.cdf[j]) / span } else { 0.0 };
        self.edges[j] + s * (self.edges[j + 1] - self.edges[j])
    }
}

/// Interleaved annuli `A_1 = (e_0, e_1), C_1 = (e_1, e_2), A_2, ...` with
/// the level at which each captures its mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnuliPlan {
    pub edges: Vec<f64>,
    pub levels: Vec<u32>,
    pub masses: Vec<f64>,
    pub target: f64,
    /// Annuli requested but not found within the level budget.
    pub shortfall: usize,
}

impl AnnuliPlan {
    pub fn empty() -> Self {
        Self { edges: Vec::new(), levels: Vec::new(), masses: Vec::new(), target: DEFAULT_TARGET, shortfall: 0 }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// `(a_i, b_i, alpha_i, beta_i)`; `beta_i` is missing when the plan ends
    /// on an `A`-annulus.
    pub fn annuli(&self) -> Vec<(f64, f64, u32, Option<u32>)> {
        (0..self.len())
            .step_by(2)
            .map(|i| (self.edges[i], self.edges[i + 1], self.levels[i], self.levels.get(i + 1).copied()))
            .collect()
    }

    pub fn alphas(&self) -> Vec<u32> {
        self.levels.iter().step_by(2).copied().collect()
    }

    pub fn betas(&self) -> Vec<u32> {
        self.levels.iter().skip(1).step_by(2).copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.edges.len() != self.levels.len() + usize::from(!self.levels.is_empty()) || self.masses.len() != self.levels.len() {
            return Err(invalid("plan edges, levels and masses are inconsistent"));
        }
        if self.edges.windows(2).any(|e| !(e[0] < e[1])) || self.edges.iter().any(|e| !(0.0 < *e && *e <= 1.0)) {
            return Err(invalid("plan edges must increase inside (0, 1]"));
        }
        if self.levels.windows(2).any(|l| l[0] >= l[1]) {
            return Err(invalid("plan levels must increase"));
        }
        if self.masses.iter().any(|m| *m < REQUIRED_MASS - 1e-9) {
            return Err(invalid("an annulus captures less than 2/3 of the mass"));
        }
        Ok(())
    }
}

/// Search options: levels `start, start + step, ...` up to `k_budget`, and
/// the mass each annulus should capture.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnuliSearch {
    pub start: u32,
    pub step: u32,
    pub target: f64,
    pub k_budget: u32,
}

impl Default for AnnuliSearch {
    fn default() -> Self {
        Self { start: DEFAULT_LADDER.0, step: DEFAULT_LADDER.1, target: DEFAULT_TARGET, k_budget: 96 }
    }
}

/// Greedy annuli search. The first annulus holds `target` mass at the first
/// level and leaves a tenth of the rest below it; each next annulus starts at
/// the previous outer edge and is taken at the first later level that puts
/// `target` mass plus the same tenth above that edge.
pub fn find_annuli(w: &Weight, count: usize, search: &AnnuliSearch) -> Result<AnnuliPlan> {
    if count == 0 {
        return Err(invalid("plan needs at least one annulus"));
    }
    if search.k_budget > 256 || search.start == 0 || search.step == 0 {
        return Err(invalid("level ladder must start above 0 and stay within 256"));
    }
    if !(REQUIRED_MASS <= search.target && search.target < 1.0) {
        return Err(invalid("target mass must lie in [2/3, 1)"));
    }
    let tail = 0.1 * (1.0 - search.target);
    let mut plan = AnnuliPlan { target: search.target, ..AnnuliPlan::empty() };
    let mut k = search.start;
    while plan.len() < count && k <= search.k_budget {
        let dens = RadialDensity::new(w, k)?;
        let found = match plan.edges.last() {
            None => {
                let (a, b) = (dens.quantile(tail), dens.quantile(tail + search.target));
                (b < 1.0 && a > 0.0).then_some((Some(a), b))
            }
            Some(&edge) => {
                let below = dens.cdf(edge);
                (1.0 - below >= search.target + tail).then(|| (None, dens.quantile(below + search.target)))
            }
        };
        if let Some((start, end)) = found {
            if let Some(a) = start {
                plan.edges.push(a);
            }
            let a = *plan.edges.last().unwrap();
            if end > a {
                plan.masses.push(dens.mass(a, end));
                plan.edges.push(end);
                plan.levels.push(k);
            } else if start.is_some() {
                plan.edges.pop();
            }
        }
        k += search.step;
    }
    plan.shortfall = count - plan.len();
    Ok(plan)
}

/// The two-sphere construction for a plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub plan: AnnuliPlan,
    pub spec: SeriesSpec,
    pub weight: Weight,
    pub measure: QuadratureMeasure,
    /// The space with its collapse map to one sphere.
    pub space: SpaceModel,
}

/// `lambda` on the unit disk as a union of annulus rules split at the plan
/// edges, so `g` is constant on every ring; each rule resolves sections of
/// degree up to `k_max` exactly.
fn split_disk(edges: &[f64], k_max: u32) -> Result<Vec<(QuadratureMeasure, bool)>> {
    let n_r = 2 * k_max as usize + 2;
    let n_theta = k_max as usize + 2;
    let mut cuts = vec![0.0];
    cuts.extend(edges.iter().copied().filter(|e| *e < 1.0));
    cuts.push(1.0);
    let mut out = Vec::new();
    for (j, c) in cuts.windows(2).enumerate() {
        let piece = annulus_quadrature(c[0], c[1], n_r, n_theta)?.scaled(c[1] * c[1] - c[0] * c[0])?;
        // pieces alternate: inside, A_1, C_1, A_2, ...
        out.push((piece, j % 2 == 1 && j < edges.len()));
    }
    Ok(out)
}

pub fn build_counterexample(plan: &AnnuliPlan, w: &Weight, k_max: u32) -> Result<Counterexample> {
    if !plan.is_empty() {
        plan.validate()?;
    }
    let space = SpaceModel::disjoint_union(2)?.with_base_map(BaseMap::CollapseComponents)?;
    let spec = SeriesSpec::pullback(SeriesSpec::full(w.degree()), space)?;
    let mut parts = Vec::new();
    for comp in 0..2 {
        let sign = if comp == 0 { 1.0 } else { -1.0 };
        for (piece, in_a) in split_disk(&plan.edges, k_max)? {
            let g = f64::from(u8::from(in_a));
            parts.push(piece.scaled((2.0 + sign * g) / 4.0)?.on_space(space, comp)?);
        }
    }
    let measure = QuadratureMeasure::union(&parts)?;
    Ok(Counterexample { plan: plan.clone(), spec, weight: w.clone(), measure, space })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    /// `(k, F(k))` with `F(k) = int f d mu_k` for the normalized density.
    pub rows: Vec<(u32, f64)>,
    pub max_alpha: f64,
    pub min_beta: f64,
    pub amplitude: f64,
}

/// `F(k)` along `k_list`, which must contain every `alpha_i` and `beta_i`.
pub fn divergence_scan(built: &Counterexample, f: &Direction, k_list: &[u32]) -> Result<DivergenceReport> {
    for k in &built.plan.levels {
        if !k_list.contains(k) {
            return Err(invalid(format!("k_list misses the plan level {k}")));
        }
    }
    let rows: Vec<(u32, f64)> = k_list
        .iter()
        .map(|&k| {
            let (dens, _) = normalized_density(&built.spec, k, &built.weight, &built.measure, 1, None)?;
            Ok((k, dens.integrate(|p| f.eval(p))))
        })
        .collect::<Result<_>>()?;
    let at = |k: u32| rows.iter().find(|r| r.0 == k).map(|r| r.1).unwrap();
    let max_alpha = built.plan.alphas().into_iter().map(at).fold(f64::NEG_INFINITY, f64::max);
    let min_beta = built.plan.betas().into_iter().map(at).fold(f64::INFINITY, f64::min);
    let amplitude = if built.plan.betas().is_empty() { 0.0 } else { max_alpha - min_beta };
    Ok(DivergenceReport { rows, max_alpha, min_beta, amplitude })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RescueReport {
    pub rows: Vec<ScanRow>,
    pub final_discrepancy: f64,
    /// Discrepancies never grow by more than 10% from one level to the next.
    pub nonincreasing: bool,
}

/// Pushed normalized densities against the uniform measure on the unit
/// circle.
pub fn pushforward_rescue(built: &Counterexample, k_list: &[u32]) -> Result<RescueReport> {
    if k_list.is_empty() {
        return Err(invalid("empty level list"));
    }
    let target = circle_quadrature(1.0, 64)?;
    let rows = convergence_scan(
        &built.spec,
        &built.weight,
        &built.measure,
        k_list,
        1,
        Some(&built.space),
        &target,
        MOMENT_ORDER,
    )?;
    let nonincreasing = rows.windows(2).all(|r| r[1].discrepancy <= 1.1 * r[0].discrepancy);
    let final_discrepancy = rows.last().map(|r| r.discrepancy).ok_or_else(|| LabError::Internal("empty scan".into()))?;
    Ok(RescueReport { rows, final_discrepancy, nonincreasing })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pushforward_measure;

    #[test]
    fn density_quantiles_invert_the_cdf() {
        let dens = RadialDensity::new(&Weight::PaperDisk, 16).unwrap();
        assert!((dens.cdf(1.0) - 1.0).abs() <= 1e-10);
        for p in [0.1, 0.5, 0.9] {
            assert!((dens.cdf(dens.quantile(p)) - p).abs() <= 1e-9);
        }
    }

    #[test]
    fn one_annulus_at_level_32() {
        let search = AnnuliSearch { start: 32, k_budget: 32, target: REQUIRED_MASS, ..AnnuliSearch::default() };
        let plan = find_annuli(&Weight::PaperDisk, 1, &search).unwrap();
        assert_eq!(plan.levels, vec![32]);
        assert!(plan.masses[0] >= REQUIRED_MASS - 1e-9);
        assert!(plan.edges.iter().all(|e| 0.5 < *e && *e <= 1.0), "{:?}", plan.edges);
        plan.validate().unwrap();
    }

    #[test]
    fn widening_an_annulus_never_loses_mass() {
        let dens = RadialDensity::new(&Weight::PaperDisk, 24).unwrap();
        let (a, b) = (0.8, 0.95);
        let base = dens.mass(a, b);
        for s in [0.0, 0.01, 0.05, 0.1] {
            assert!(dens.mass(a - s, (b + s).min(1.0)) >= base - 1e-15);
        }
    }

    #[test]
    fn two_annulus_plan_is_interleaved() {
        let plan = find_annuli(&Weight::PaperDisk, 2, &AnnuliSearch::default()).unwrap();
        assert_eq!(plan.len(), 2);
        assert_eq!(plan.shortfall, 0);
        plan.validate().unwrap();
        let (a, b, alpha, beta) = plan.annuli()[0];
        assert!(a < b && alpha < beta.unwrap());
        assert!(plan.masses.iter().all(|m| *m >= DEFAULT_TARGET - 1e-9));
    }

    #[test]
    fn shortfall_is_reported() {
        let search = AnnuliSearch { k_budget: 16, ..AnnuliSearch::default() };
        let plan = find_annuli(&Weight::PaperDisk, 3, &search).unwrap();
        assert!(plan.shortfall > 0);
        assert_eq!(plan.len() + plan.shortfall, 3);
    }

    #[test]
    fn empty_plan_is_symmetric() {
        let built = build_counterexample(&AnnuliPlan::empty(), &Weight::PaperDisk, 16).unwrap();
        assert!((built.measure.total_mass - 1.0).abs() <= 1e-12);
        let f = Direction::ComponentIndicator { component: 0 };
        let report = divergence_scan(&built, &f, &[4, 8, 16]).unwrap();
        for (_, v) in report.rows {
            assert!((v - 0.5).abs() <= 1e-10);
        }
    }

    #[test]
    fn built_measure_is_sandwiched_and_pushes_to_lambda() {
        let plan = find_annuli(&Weight::PaperDisk, 2, &AnnuliSearch::default()).unwrap();
        let built = build_counterexample(&plan, &Weight::PaperDisk, 16).unwrap();
        assert!((built.measure.total_mass - 1.0).abs() <= 1e-12);
        let pushed = pushforward_measure(&built.measure, &built.space).unwrap();
        let lambda = QuadratureMeasure::union(
            &split_disk(&plan.edges, 16).unwrap().into_iter().map(|(m, _)| m).collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(pushed.len(), lambda.len());
        for (a, b) in pushed.weights.iter().zip(&lambda.weights) {
            assert!((a - b).abs() <= 1e-15 * b.max(1e-300) + 1e-18);
        }
        // (1/4) lambda <= mu_i <= lambda, node by node
        let half = lambda.len();
        for (i, w) in built.measure.weights.iter().enumerate() {
            let l = lambda.weights[i % half];
            assert!(0.25 * l <= *w * (1.0 + 1e-15) && *w <= l * (1.0 + 1e-15));
        }
    }

    #[test]
    fn oscillation_and_rescue_in_one_run() {
        let plan = find_annuli(&Weight::PaperDisk, 2, &AnnuliSearch::default()).unwrap();
        let built = build_counterexample(&plan, &Weight::PaperDisk, 96).unwrap();
        let f = Direction::ComponentIndicator { component: 0 };
        let mut ks = plan.levels.clone();
        ks.push(96);
        let report = divergence_scan(&built, &f, &ks).unwrap();
        assert!(report.rows.iter().all(|(_, v)| (0.0..=1.0).contains(v)));
        assert!(report.amplitude >= AMPLITUDE_THRESHOLD, "{report:?}");
        let rescue = pushforward_rescue(&built, &[12, 24, 48, 96]).unwrap();
        assert!(rescue.final_discrepancy <= RESCUE_THRESHOLD, "{rescue:?}");
        assert!(rescue.nonincreasing);

        let control = build_counterexample(&AnnuliPlan::empty(), &Weight::PaperDisk, 96).unwrap();
        let ctrl = pushforward_rescue(&control, &[12, 24]).unwrap();
        for (a, b) in ctrl.rows.iter().zip(&rescue.rows) {
            assert!((a.discrepancy - b.discrepancy).abs() <= 1e-9);
        }
    }
}
