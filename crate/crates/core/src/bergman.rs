//! Partial Bergman kernel diagonals and the density measures they define.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{pushforward_measure, weak_discrepancy, Point, QuadratureMeasure, SpaceModel};
use crate::norms::{gram_matrix, orthonormalize, OrthoBasis};
use crate::series::SeriesSpec;
use crate::weights::Weight;

/// Default moment order for weak-convergence scans.
pub const MOMENT_ORDER: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelEval {
    pub k: u32,
    pub points: Vec<Point>,
    /// Frame-weighted `B_k(x,x)`.
    pub values: Vec<f64>,
    pub dim: usize,
}

/// `B(x,x) = sum_i |s_i(x)|^2` over an orthonormal basis.
pub fn kernel_diagonal(ob: &OrthoBasis, w: &Weight, pts: &[Point]) -> KernelEval {
    let values = pts.par_iter().map(|p| ob.kernel_at(w, p)).collect();
    KernelEval { k: ob.basis.k, points: pts.to_vec(), values, dim: ob.basis.dim() }
}

/// Kernel on the nodes of `mu`, evaluated once per ring when the basis is
/// diagonal and the weight radial, so the result is exactly ring-constant.
pub fn kernel_on_measure(ob: &OrthoBasis, w: &Weight, mu: &QuadratureMeasure) -> KernelEval {
    if let (true, true, Some(rings)) = (ob.diagonal, w.known_radial(), mu.rings.as_ref()) {
        let mut values = vec![0.0; mu.len()];
        for r in rings {
            let v = ob.kernel_at(w, &mu.nodes[r.start]);
            values[r.start..r.start + r.len].iter_mut().for_each(|x| *x = v);
        }
        return KernelEval { k: ob.basis.k, points: mu.nodes.clone(), values, dim: ob.basis.dim() };
    }
    kernel_diagonal(ob, w, &mu.nodes)
}

/// `(1/k^kappa) B_k dmu`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityMeasure {
    pub measure: QuadratureMeasure,
    pub kappa: u32,
    pub mass: f64,
}

pub fn density_measure(ke: &KernelEval, mu: &QuadratureMeasure, kappa: u32) -> Result<DensityMeasure> {
    if ke.points.len() != mu.len() || ke.points.iter().zip(&mu.nodes).any(|(a, b)| a != b) {
        return Err(invalid("kernel points are not the measure's nodes"));
    }
    let scale = (ke.k.max(1) as f64).powi(kappa as i32);
    let mut idx = 0;
    let measure = mu.reweighted(|_| {
        let v = ke.values[idx] / scale;
        idx += 1;
        v
    })?;
    Ok(DensityMeasure { mass: measure.total_mass, measure, kappa })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub k: u32,
    pub mass: f64,
    pub discrepancy: f64,
    pub runtime_ms: f64,
}

/// One step of a scan: the probability-normalized density at level `k`,
/// pushed to the base when `base` is given, plus its unnormalized mass.
pub fn normalized_density(
    spec: &SeriesSpec,
    k: u32,
    w: &Weight,
    mu: &QuadratureMeasure,
    kappa: u32,
    base: Option<&SpaceModel>,
) -> Result<(QuadratureMeasure, f64)> {
    let ob = orthonormalize(&gram_matrix(spec, k, w, mu)?)?;
    let ke = kernel_on_measure(&ob, w, mu);
    let dens = density_measure(&ke, mu, kappa)?;
    let prob = dens.measure.normalized()?;
    let out = match base {
        Some(space) => pushforward_measure(&prob, space)?,
        None => prob,
    };
    Ok((out, dens.mass))
}

/// Weak-convergence scan of normalized Bergman densities towards `target`.
pub fn convergence_scan(
    spec: &SeriesSpec,
    w: &Weight,
    mu: &QuadratureMeasure,
    k_list: &[u32],
    kappa: u32,
    base: Option<&SpaceModel>,
    target: &QuadratureMeasure,
    order: usize,
) -> Result<Vec<ScanRow>> {
    k_list
        .par_iter()
        .map(|&k| {
            let start = Instant::now();
            let (dens, mass) = normalized_density(spec, k, w, mu, kappa, base)?;
            let discrepancy = weak_discrepancy(&dens, target, order)?;
            Ok(ScanRow { k, mass, discrepancy, runtime_ms: start.elapsed().as_secs_f64() * 1e3 })
        })
        .collect()
}
