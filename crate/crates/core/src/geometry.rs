//! Model spaces, sample clouds, quadrature measures and the moment
//! discrepancy used to test weak convergence.
//!
//! Every space here is built out of Riemann spheres. A point carries its
//! component index and one affine coordinate per sphere factor; the point at
//! infinity of a factor is explicit rather than a large float.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};

/// Coincident images closer than this (in chart coordinates) are merged by
/// [`pushforward_measure`].
pub const MERGE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    SingleSphere,
    DisjointUnion,
    ProductOfTwoSpheres,
}

/// The map `X -> Z` used to push measures down to a base sphere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseMap {
    Identity,
    CollapseComponents,
    FirstProjection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceModel {
    pub components: usize,
    pub structure: Structure,
    pub base_map: Option<BaseMap>,
}

impl SpaceModel {
    pub fn sphere() -> Self {
        Self { components: 1, structure: Structure::SingleSphere, base_map: None }
    }

    pub fn disjoint_union(components: usize) -> Result<Self> {
        if components < 1 {
            return Err(invalid("a disjoint union needs at least one component"));
        }
        Ok(Self { components, structure: Structure::DisjointUnion, base_map: None })
    }

    pub fn product() -> Self {
        Self { components: 1, structure: Structure::ProductOfTwoSpheres, base_map: None }
    }

    pub fn with_base_map(mut self, map: BaseMap) -> Result<Self> {
        match (map, self.structure) {
            (BaseMap::Identity, _)
            | (BaseMap::CollapseComponents, Structure::DisjointUnion)
            | (BaseMap::FirstProjection, Structure::ProductOfTwoSpheres) => {
                self.base_map = Some(map);
                Ok(self)
            }
            _ => Err(LabError::UnsupportedSpace(format!(
                "{map:?} is not defined on a {:?} space",
                self.structure
            ))),
        }
    }

    pub fn is_product(&self) -> bool {
        self.structure == Structure::ProductOfTwoSpheres
    }

    /// Number of sphere factors per point.
    pub fn factors(&self) -> usize {
        if self.is_product() {
            2
        } else {
            1
        }
    }

    /// The target space of `base_map`.
    pub fn base(&self) -> Result<SpaceModel> {
        match self.base_map {
            Some(BaseMap::Identity) => Ok(SpaceModel { base_map: None, ..*self }),
            Some(_) => Ok(SpaceModel::sphere()),
            None => Err(LabError::UnsupportedSpace("space has no base map".into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components < 1 {
            return Err(invalid("components must be >= 1"));
        }
        if self.structure != Structure::DisjointUnion && self.components != 1 {
            return Err(invalid("only disjoint unions have several components"));
        }
        if let Some(map) = self.base_map {
            self.with_base_map(map)?;
        }
        Ok(())
    }
}

/// One affine coordinate on a sphere factor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Coord {
    Finite(Complex64),
    Infinity,
}

impl Coord {
    pub fn real(x: f64) -> Self {
        Coord::Finite(Complex64::new(x, 0.0))
    }

    pub fn polar(r: f64, theta: f64) -> Self {
        Coord::Finite(Complex64::from_polar(r, theta))
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Coord::Infinity)
    }

    pub fn finite(&self) -> Option<Complex64> {
        match self {
            Coord::Finite(z) => Some(*z),
            Coord::Infinity => None,
        }
    }

    /// `log|z|`, with `+inf` at infinity and `-inf` at the origin.
    pub fn log_abs(&self) -> f64 {
        match self {
            Coord::Finite(z) => z.norm().ln(),
            Coord::Infinity => f64::INFINITY,
        }
    }

    /// Bounded chart used by the moment discrepancy: the identity on the
    /// closed unit disk and `1/conj(z)` outside, with infinity sent to 0.
    pub fn bounded(&self) -> Complex64 {
        match self {
            Coord::Finite(z) => {
                let n2 = z.norm_sqr();
                if n2 <= 1.0 {
                    *z
                } else {
                    z / n2
                }
            }
            Coord::Infinity => Complex64::new(0.0, 0.0),
        }
    }

    fn approx_eq(&self, other: &Coord, tol: f64) -> bool {
        match (self, other) {
            (Coord::Infinity, Coord::Infinity) => true,
            (Coord::Finite(a), Coord::Finite(b)) => (a - b).norm() <= tol,
            _ => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub component: usize,
    pub z: Coord,
    /// Second factor, present only on product spaces.
    pub w: Option<Coord>,
}

impl Point {
    pub fn new(z: Complex64) -> Self {
        Self { component: 0, z: Coord::Finite(z), w: None }
    }

    pub fn real(x: f64) -> Self {
        Self::new(Complex64::new(x, 0.0))
    }

    pub fn polar(r: f64, theta: f64) -> Self {
        Self::new(Complex64::from_polar(r, theta))
    }

    pub fn infinity() -> Self {
        Self { component: 0, z: Coord::Infinity, w: None }
    }

    pub fn on_component(mut self, component: usize) -> Self {
        self.component = component;
        self
    }

    pub fn product(z: Coord, w: Coord) -> Self {
        Self { component: 0, z, w: Some(w) }
    }

    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        std::iter::once(self.z).chain(self.w)
    }

    /// `|z|` of the first factor (infinite at the point at infinity).
    pub fn radius(&self) -> f64 {
        match self.z {
            Coord::Finite(z) => z.norm(),
            Coord::Infinity => f64::INFINITY,
        }
    }

    pub fn approx_eq(&self, other: &Point, tol: f64) -> bool {
        self.component == other.component
            && self.z.approx_eq(&other.z, tol)
            && match (self.w, other.w) {
                (None, None) => true,
                (Some(a), Some(b)) => a.approx_eq(&b, tol),
                _ => false,
            }
    }

    fn merge_key(&self) -> (usize, [i64; 3], Option<[i64; 3]>) {
        fn key(c: &Coord) -> [i64; 3] {
            match c {
                Coord::Infinity => [1, 0, 0],
                Coord::Finite(z) => [
                    0,
                    (z.re / MERGE_TOLERANCE).round() as i64,
                    (z.im / MERGE_TOLERANCE).round() as i64,
                ],
            }
        }
        (self.component, key(&self.z), self.w.as_ref().map(key))
    }
}

/// Parametric description of a sample cloud or a quadrature rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Descriptor {
    Circle { radius: f64, n: usize },
    Disk { radius: f64, n_r: usize, n_theta: usize },
    Annulus { inner: f64, outer: f64, n_r: usize, n_theta: usize },
    Interval { a: f64, b: f64, n: usize },
    /// Whole sphere: origin, infinity and `n_rings` latitude circles.
    Sphere { n_rings: usize, n_theta: usize },
    Union { parts: Vec<Descriptor> },
    Custom { label: String },
}

impl Descriptor {
    /// Angular resolution, when the descriptor has one.
    pub fn angular_count(&self) -> Option<usize> {
        match self {
            Descriptor::Circle { n, .. } => Some(*n),
            Descriptor::Disk { n_theta, .. }
            | Descriptor::Annulus { n_theta, .. }
            | Descriptor::Sphere { n_theta, .. } => Some(*n_theta),
            _ => None,
        }
    }

    /// Copy with the angular resolution raised to at least `n`.
    pub fn with_min_angular(&self, n: usize) -> Descriptor {
        let mut d = self.clone();
        match &mut d {
            Descriptor::Circle { n: m, .. } => *m = (*m).max(n),
            Descriptor::Disk { n_theta, .. }
            | Descriptor::Annulus { n_theta, .. }
            | Descriptor::Sphere { n_theta, .. } => *n_theta = (*n_theta).max(n),
            Descriptor::Union { parts } => {
                for p in parts.iter_mut() {
                    *p = p.with_min_angular(n);
                }
            }
            _ => {}
        }
        d
    }

    fn refined(&self) -> Descriptor {
        match self {
            Descriptor::Circle { radius, n } => Descriptor::Circle { radius: *radius, n: 2 * n },
            Descriptor::Disk { radius, n_r, n_theta } => {
                Descriptor::Disk { radius: *radius, n_r: 2 * n_r, n_theta: 2 * n_theta }
            }
            Descriptor::Annulus { inner, outer, n_r, n_theta } => Descriptor::Annulus {
                inner: *inner,
                outer: *outer,
                n_r: 2 * n_r,
                n_theta: 2 * n_theta,
            },
            Descriptor::Interval { a, b, n } => Descriptor::Interval { a: *a, b: *b, n: 2 * n - 1 },
            Descriptor::Sphere { n_rings, n_theta } => {
                Descriptor::Sphere { n_rings: 2 * n_rings + 1, n_theta: 2 * n_theta }
            }
            Descriptor::Union { parts } => {
                Descriptor::Union { parts: parts.iter().map(Descriptor::refined).collect() }
            }
            Descriptor::Custom { label } => Descriptor::Custom { label: label.clone() },
        }
    }
}

/// A finite cloud standing in for a compact set `K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub points: Vec<Point>,
    pub descriptor: Descriptor,
    pub refinement_level: u32,
}

impl SampleSet {
    /// Sample cloud for a parametric descriptor on one sphere.
    ///
    /// Grids are uniform in radius and angle, so one refinement doubling
    /// produces a superset of the previous cloud.
    pub fn from_descriptor(descriptor: Descriptor) -> Result<Self> {
        let points = sample_points(&descriptor)?;
        if points.is_empty() {
            return Err(invalid("sample set is empty"));
        }
        Ok(Self { points, descriptor, refinement_level: 0 })
    }

    pub fn circle(radius: f64, n: usize) -> Result<Self> {
        Self::from_descriptor(Descriptor::Circle { radius, n })
    }

    pub fn disk(radius: f64, n_r: usize, n_theta: usize) -> Result<Self> {
        Self::from_descriptor(Descriptor::Disk { radius, n_r, n_theta })
    }

    pub fn sphere(n_rings: usize, n_theta: usize) -> Result<Self> {
        Self::from_descriptor(Descriptor::Sphere { n_rings, n_theta })
    }

    pub fn custom(label: &str, points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("sample set is empty"));
        }
        Ok(Self { points, descriptor: Descriptor::Custom { label: label.into() }, refinement_level: 0 })
    }

    pub fn refine(&self) -> Result<Self> {
        if let Descriptor::Custom { .. } = self.descriptor {
            return Err(invalid("custom sample sets cannot be refined"));
        }
        let mut next = Self::from_descriptor(self.descriptor.refined())?;
        next.refinement_level = self.refinement_level + 1;
        Ok(next)
    }

    /// Same set with at least `n` angular samples per circle.
    pub fn with_min_angular(&self, n: usize) -> Result<Self> {
        if let Descriptor::Custom { .. } = self.descriptor {
            return Ok(self.clone());
        }
        let mut s = Self::from_descriptor(self.descriptor.with_min_angular(n))?;
        s.refinement_level = self.refinement_level;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn ring(radius: f64, n: usize, out: &mut Vec<Point>) {
    for j in 0..n {
        out.push(Point::polar(radius, 2.0 * PI * j as f64 / n as f64));
    }
}

fn sample_points(d: &Descriptor) -> Result<Vec<Point>> {
    let mut pts = Vec::new();
    match d {
        Descriptor::Circle { radius, n } => {
            if *radius <= 0.0 || *n < 1 {
                return Err(invalid("circle needs radius > 0 and n >= 1"));
            }
            ring(*radius, *n, &mut pts);
        }
        Descriptor::Disk { radius, n_r, n_theta } => {
            if *radius <= 0.0 || *n_r < 1 || *n_theta < 1 {
                return Err(invalid("disk needs radius > 0 and positive grid sizes"));
            }
            pts.push(Point::real(0.0));
            for i in 1..=*n_r {
                ring(radius * i as f64 / *n_r as f64, *n_theta, &mut pts);
            }
        }
        Descriptor::Annulus { inner, outer, n_r, n_theta } => {
            if !(0.0 < *inner && inner < outer) || *n_r < 1 || *n_theta < 1 {
                return Err(invalid("annulus needs 0 < inner < outer and positive grid sizes"));
            }
            for i in 0..=*n_r {
                ring(inner + (outer - inner) * i as f64 / *n_r as f64, *n_theta, &mut pts);
            }
        }
        Descriptor::Interval { a, b, n } => {
            if *n < 2 || a >= b {
                return Err(invalid("interval needs a < b and n >= 2"));
            }
            for i in 0..*n {
                pts.push(Point::real(a + (b - a) * i as f64 / (*n - 1) as f64));
            }
        }
        Descriptor::Sphere { n_rings, n_theta } => {
            if *n_rings < 1 || *n_theta < 1 {
                return Err(invalid("sphere grid needs positive sizes"));
            }
            pts.push(Point::real(0.0));
            for i in 1..=*n_rings {
                // latitude circles equally spaced in polar angle
                let polar = PI * i as f64 / (*n_rings + 1) as f64;
                ring((polar / 2.0).tan(), *n_theta, &mut pts);
            }
            pts.push(Point::infinity());
        }
        Descriptor::Union { parts } => {
            for p in parts {
                pts.extend(sample_points(p)?);
            }
        }
        Descriptor::Custom { .. } => return Err(invalid("custom descriptors carry explicit points")),
    }
    Ok(pts)
}

/// A block of nodes sharing one radius, equally spaced in angle, with equal
/// weights. Rotation-invariant integrands only need one evaluation per ring.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ring {
    pub component: usize,
    /// `None` marks the point at infinity.
    pub radius: Option<f64>,
    pub start: usize,
    pub len: usize,
}

/// A positive measure given by weighted nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureMeasure {
    pub space: SpaceModel,
    pub descriptor: Descriptor,
    pub nodes: Vec<Point>,
    pub weights: Vec<f64>,
    pub total_mass: f64,
    /// Rotational block structure, when the rule has one.
    #[serde(default)]
    pub rings: Option<Vec<Ring>>,
}

impl QuadratureMeasure {
    pub fn new(space: SpaceModel, descriptor: Descriptor, nodes: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if nodes.len() != weights.len() {
            return Err(invalid("nodes and weights differ in length"));
        }
        if nodes.is_empty() {
            return Err(invalid("measure has no nodes"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        for p in &nodes {
            if p.component >= space.components {
                return Err(invalid("node lies on a component outside the space"));
            }
            if p.w.is_some() != space.is_product() {
                return Err(invalid("node coordinates do not match the space structure"));
            }
        }
        let total_mass = ordered_sum(weights.iter().copied());
        Ok(Self { space, descriptor, nodes, weights, total_mass, rings: None })
    }

    fn with_rings(mut self, rings: Vec<Ring>) -> Self {
        self.rings = Some(rings);
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `∫ f dμ`, summed in node order.
    pub fn integrate(&self, mut f: impl FnMut(&Point) -> f64) -> f64 {
        ordered_sum(self.nodes.iter().zip(&self.weights).map(|(p, w)| w * f(p)))
    }

    pub fn integrate_complex(&self, mut f: impl FnMut(&Point) -> Complex64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (p, w) in self.nodes.iter().zip(&self.weights) {
            acc += f(p) * *w;
        }
        acc
    }

    /// Same nodes with every weight multiplied by `factor(node)`. Ring
    /// structure survives when the factor is constant on each ring.
    pub fn reweighted(&self, mut factor: impl FnMut(&Point) -> f64) -> Result<Self> {
        let weights: Vec<f64> = self.nodes.iter().zip(&self.weights).map(|(p, w)| w * factor(p)).collect();
        let mut out = QuadratureMeasure::new(self.space, self.descriptor.clone(), self.nodes.clone(), weights)?;
        if let Some(rings) = &self.rings {
            let uniform = rings.iter().all(|r| {
                let block = &out.weights[r.start..r.start + r.len];
                block.iter().all(|w| *w == block[0])
            });
            if uniform {
                out.rings = Some(rings.clone());
            }
        }
        Ok(out)
    }

    /// Scales every weight by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(invalid("scale factor must be positive"));
        }
        self.reweighted(|_| c)
    }

    /// Normalizes to a probability measure.
    pub fn normalized(&self) -> Result<Self> {
        if !(self.total_mass > 0.0) {
            return Err(invalid("cannot normalize a measure of zero mass"));
        }
        self.scaled(1.0 / self.total_mass)
    }

    /// Places the same rule on another component of a larger space.
    pub fn on_space(&self, space: SpaceModel, component: usize) -> Result<Self> {
        let nodes = self.nodes.iter().map(|p| p.on_component(component)).collect();
        let mut m = QuadratureMeasure::new(space, self.descriptor.clone(), nodes, self.weights.clone())?;
        m.rings = self.rings.as_ref().map(|rs| rs.iter().map(|r| Ring { component, ..*r }).collect());
        Ok(m)
    }

    /// Concatenates measures living on the same space.
    pub fn union(parts: &[QuadratureMeasure]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| invalid("union of no measures"))?;
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut rings = Some(Vec::new());
        for m in parts {
            if m.space != first.space {
                return Err(invalid("union of measures on different spaces"));
            }
            let offset = nodes.len();
            match (&mut rings, &m.rings) {
                (Some(acc), Some(rs)) => acc.extend(rs.iter().map(|r| Ring { start: r.start + offset, ..*r })),
                _ => rings = None,
            }
            nodes.extend_from_slice(&m.nodes);
            weights.extend_from_slice(&m.weights);
        }
        let descriptor = Descriptor::Union { parts: parts.iter().map(|m| m.descriptor.clone()).collect() };
        let mut out = QuadratureMeasure::new(first.space, descriptor, nodes, weights)?;
        out.rings = rings;
        Ok(out)
    }

    /// Moments `∫ w^a conj(w)^b dμ` per component in the bounded chart.
    fn moments(&self, order: usize) -> Vec<Vec<Complex64>> {
        let factors = self.space.factors();
        let side = order + 1;
        let per_comp = side.pow(2 * factors as u32);
        let mut out = vec![vec![Complex64::new(0.0, 0.0); per_comp]; self.space.components];
        for (p, wt) in self.nodes.iter().zip(&self.weights) {
            let coords: Vec<Complex64> = p.coords().map(|c| c.bounded()).collect();
            let powers: Vec<(Vec<Complex64>, Vec<Complex64>)> = coords
                .iter()
                .map(|c| {
                    let mut pw = Vec::with_capacity(side);
                    let mut acc = Complex64::new(1.0, 0.0);
                    for _ in 0..side {
                        pw.push(acc);
                        acc *= c;
                    }
                    let conj = pw.iter().map(|v| v.conj()).collect();
                    (pw, conj)
                })
                .collect();
            let slot = &mut out[p.component];
            for (idx, value) in slot.iter_mut().enumerate() {
                let mut rest = idx;
                let mut term = Complex64::new(*wt, 0.0);
                for (pw, conj) in &powers {
                    let a = rest % side;
                    rest /= side;
                    let b = rest % side;
                    rest /= side;
                    term *= pw[a] * conj[b];
                }
                *value += term;
            }
        }
        out
    }
}

/// Fixed-order summation keeps results reproducible bit for bit.
pub(crate) fn ordered_sum(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0, |acc, v| acc + v)
}

/// Uniform probability measure on `n` equally spaced points of `|z| = radius`.
pub fn circle_quadrature(radius: f64, n: usize) -> Result<QuadratureMeasure> {
    if !(radius > 0.0) {
        return Err(invalid("circle radius must be positive"));
    }
    if n < 4 {
        return Err(invalid("circle quadrature needs at least 4 nodes"));
    }
    let mut nodes = Vec::with_capacity(n);
    ring(radius, n, &mut nodes);
    let m = QuadratureMeasure::new(
        SpaceModel::sphere(),
        Descriptor::Circle { radius, n },
        nodes,
        vec![1.0 / n as f64; n],
    )?;
    Ok(m.with_rings(vec![Ring { component: 0, radius: Some(radius), start: 0, len: n }]))
}

/// Gauss-Legendre nodes and weights mapped to `[a, b]`.
pub(crate) fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(n).expect("n >= 1"));
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    let mut pairs: Vec<(f64, f64)> =
        rule.as_node_weight_pairs().iter().map(|&(x, w)| (mid + half * x, half * w)).collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    pairs
}

fn radial_product_rule(
    descriptor: Descriptor,
    radial: &[(f64, f64)],
    n_theta: usize,
) -> Result<QuadratureMeasure> {
    let mut nodes = Vec::with_capacity(radial.len() * n_theta);
    let mut weights = Vec::with_capacity(radial.len() * n_theta);
    let mut rings = Vec::with_capacity(radial.len());
    for &(r, w) in radial {
        rings.push(Ring { component: 0, radius: Some(r), start: nodes.len(), len: n_theta });
        ring(r, n_theta, &mut nodes);
        weights.extend(std::iter::repeat(w / n_theta as f64).take(n_theta));
    }
    Ok(QuadratureMeasure::new(SpaceModel::sphere(), descriptor, nodes, weights)?.with_rings(rings))
}

/// Normalized Lebesgue measure on the disk `|z| <= radius`: Gauss-Legendre in
/// the radius against `2r dr / R^2`, trapezoid in the angle.
pub fn disk_quadrature(radius: f64, n_r: usize, n_theta: usize) -> Result<QuadratureMeasure> {
    if !(radius > 0.0) || n_r < 2 || n_theta < 4 {
        return Err(invalid("disk quadrature needs radius > 0, n_r >= 2, n_theta >= 4"));
    }
    let radial: Vec<(f64, f64)> = gauss_legendre(n_r, 0.0, radius)
        .into_iter()
        .map(|(r, w)| (r, w * 2.0 * r / (radius * radius)))
        .collect();
    radial_product_rule(Descriptor::Disk { radius, n_r, n_theta }, &radial, n_theta)
}

/// Normalized Lebesgue measure on the annulus `inner <= |z| <= outer`.
pub fn annulus_quadrature(inner: f64, outer: f64, n_r: usize, n_theta: usize) -> Result<QuadratureMeasure> {
    if !(0.0 <= inner && inner < outer) || n_r < 2 || n_theta < 4 {
        return Err(invalid("annulus quadrature needs 0 <= inner < outer, n_r >= 2, n_theta >= 4"));
    }
    let area = outer * outer - inner * inner;
    let radial: Vec<(f64, f64)> = gauss_legendre(n_r, inner, outer)
        .into_iter()
        .map(|(r, w)| (r, w * 2.0 * r / area))
        .collect();
    radial_product_rule(Descriptor::Annulus { inner, outer, n_r, n_theta }, &radial, n_theta)
}

/// Normalized Fubini-Study area measure on the whole sphere.
///
/// Gauss-Legendre in `u = cos(polar angle)`, so `|z|^2 = (1-u)/(1+u)`; the
/// integrand `|z|^{2a} / (1+|z|^2)^k` becomes a polynomial of degree `k` in
/// `u`, integrated exactly once `2 n_u - 1 >= k`.
pub fn fs_sphere_quadrature(n_u: usize, n_theta: usize) -> Result<QuadratureMeasure> {
    if n_u < 2 || n_theta < 4 {
        return Err(invalid("sphere quadrature needs n_u >= 2 and n_theta >= 4"));
    }
    let radial: Vec<(f64, f64)> = gauss_legendre(n_u, -1.0, 1.0)
        .into_iter()
        .rev()
        .map(|(u, w)| (((1.0 - u) / (1.0 + u)).sqrt(), 0.5 * w))
        .collect();
    radial_product_rule(Descriptor::Sphere { n_rings: n_u, n_theta }, &radial, n_theta)
}

/// Pushes `mu` through the base map of `space`.
///
/// Weights are preserved; images that coincide within [`MERGE_TOLERANCE`]
/// are merged, keeping the order of first occurrence.
pub fn pushforward_measure(mu: &QuadratureMeasure, space: &SpaceModel) -> Result<QuadratureMeasure> {
    let map = space.base_map.ok_or_else(|| LabError::UnsupportedSpace("space has no base map".into()))?;
    if mu.space.structure != space.structure || mu.space.components != space.components {
        return Err(invalid("measure does not live on the given space"));
    }
    let target = space.base()?;
    let image = |p: &Point| -> Point {
        match map {
            BaseMap::Identity => *p,
            BaseMap::CollapseComponents => Point { component: 0, ..*p },
            BaseMap::FirstProjection => Point { component: 0, z: p.z, w: None },
        }
    };
    let mut index: HashMap<(usize, [i64; 3], Option<[i64; 3]>), usize> = HashMap::new();
    let mut nodes: Vec<Point> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut origin: Vec<usize> = Vec::with_capacity(mu.len());
    for (p, w) in mu.nodes.iter().zip(&mu.weights) {
        let q = image(p);
        let slot = *index.entry(q.merge_key()).or_insert_with(|| {
            nodes.push(q);
            weights.push(0.0);
            nodes.len() - 1
        });
        weights[slot] += w;
        origin.push(slot);
    }
    let mut out = QuadratureMeasure::new(target, mu.descriptor.clone(), nodes, weights)?;
    // Rings survive when every ring lands on a ring of first occurrences.
    if let Some(rings) = &mu.rings {
        let kept: Vec<Ring> = rings
            .iter()
            .filter(|r| (0..r.len).all(|j| origin[r.start + j] == origin[r.start] + j))
            .map(|r| Ring { component: 0, start: origin[r.start], ..*r })
            .fold(Vec::new(), |mut acc: Vec<Ring>, r| {
                if !acc.iter().any(|q| q.start == r.start && q.len == r.len) {
                    acc.push(r);
                }
                acc
            });
        let mut covered = vec![false; out.len()];
        let mut ok = true;
        for r in &kept {
            for j in r.start..r.start + r.len {
                ok &= !covered[j];
                covered[j] = true;
            }
        }
        if ok && covered.iter().all(|c| *c) {
            let block_uniform = kept.iter().all(|r| {
                let block = &out.weights[r.start..r.start + r.len];
                block.iter().all(|w| *w == block[0])
            });
            if block_uniform {
                out.rings = Some(kept);
            }
        }
    }
    Ok(out)
}

/// Largest moment difference `|∫ w^a conj(w)^b dμ_a - ∫ w^a conj(w)^b dμ_b|`
/// over `0 <= a, b <= order`, per component, in the bounded chart of
/// [`Coord::bounded`]. On product spaces the moments are mixed over both
/// factors.
pub fn weak_discrepancy(mu_a: &QuadratureMeasure, mu_b: &QuadratureMeasure, order: usize) -> Result<f64> {
    if order < 1 {
        return Err(invalid("moment order must be >= 1"));
    }
    if mu_a.space.components != mu_b.space.components || mu_a.space.structure != mu_b.space.structure {
        return Err(invalid("measures live on different component sets"));
    }
    let ma = mu_a.moments(order);
    let mb = mu_b.moments(order);
    let mut worst: f64 = 0.0;
    for (ca, cb) in ma.iter().zip(&mb) {
        for (x, y) in ca.iter().zip(cb) {
            worst = worst.max((x - y).norm());
        }
    }
    Ok(worst)
}

/// Degree of the Kodaira map fibration: a sheet count for coverings, or the
/// normalized fiber area for product projections.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberDegree {
    pub value: f64,
}

impl FiberDegree {
    pub fn new(value: f64) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(invalid("fiber degree must be positive"));
        }
        Ok(Self { value })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn moment(mu: &QuadratureMeasure, a: i32, b: i32) -> Complex64 {
        mu.integrate_complex(|p| {
            let z = p.z.finite().unwrap();
            z.powi(a) * z.conj().powi(b)
        })
    }

    #[test]
    fn circle_examples() {
        let mu = circle_quadrature(1.0, 8).unwrap();
        assert_abs_diff_eq!(mu.total_mass, 1.0, epsilon = 1e-15);
        assert!(moment(&mu, 1, 0).norm() < 1e-15);
        let mu = circle_quadrature(1.0, 64).unwrap();
        assert_abs_diff_eq!(moment(&mu, 1, 1).re, 1.0, epsilon = 1e-14);
        let mu = circle_quadrature(0.5, 16).unwrap();
        assert_abs_diff_eq!(moment(&mu, 2, 2).re, 0.0625, epsilon = 1e-15);
        assert!(matches!(circle_quadrature(1.0, 3), Err(LabError::InvalidArgument(_))));
    }

    #[test]
    fn circle_exactness_for_small_frequency() {
        let mu = circle_quadrature(0.7, 12).unwrap();
        for m in 0..8 {
            for l in 0..8 {
                let exact = if m == l { 0.7f64.powi(2 * m) } else { 0.0 };
                let got = moment(&mu, m, l);
                assert!((got - Complex64::new(exact, 0.0)).norm() < 1e-14, "{m} {l}");
            }
        }
    }

    #[test]
    fn disk_examples() {
        let mu = disk_quadrature(1.0, 16, 64).unwrap();
        assert_abs_diff_eq!(mu.total_mass, 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(moment(&mu, 1, 1).re, 0.5, epsilon = 1e-13);
        assert!(moment(&mu, 1, 0).norm() < 1e-14);
        assert!(disk_quadrature(1.0, 1, 64).is_err());
        assert!(disk_quadrature(-1.0, 4, 64).is_err());
    }

    #[test]
    fn disk_moments_exact_to_advertised_degree() {
        let (n_r, n_theta) = (6, 9);
        let mu = disk_quadrature(1.0, n_r, n_theta).unwrap();
        for a in 0..=10i32 {
            for b in 0..=(10 - a) {
                if (a - b).unsigned_abs() as usize >= n_theta {
                    continue;
                }
                // (1/π)∫ r^{a+b} e^{i(a-b)θ} r dr dθ
                let exact = if a == b { 2.0 / (2.0 * a as f64 + 2.0) } else { 0.0 };
                let got = moment(&mu, a, b);
                assert!((got.re - exact).abs() < 1e-12 && got.im.abs() < 1e-12, "{a} {b}");
            }
        }
    }

    #[test]
    fn sphere_measure_matches_beta_integrals() {
        let mu = fs_sphere_quadrature(20, 8).unwrap();
        assert_abs_diff_eq!(mu.total_mass, 1.0, epsilon = 1e-13);
        // ∫ |z|^2/(1+|z|^2) dFS = 1/2
        let v = mu.integrate(|p| {
            let r2 = p.z.finite().unwrap().norm_sqr();
            r2 / (1.0 + r2)
        });
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-13);
    }

    #[test]
    fn pushforward_of_union_merges_nodes() {
        let space = SpaceModel::disjoint_union(2).unwrap().with_base_map(BaseMap::CollapseComponents).unwrap();
        let lam = disk_quadrature(1.0, 6, 8).unwrap();
        let half = lam.scaled(0.5).unwrap();
        let mu = QuadratureMeasure::union(&[half.on_space(space, 0).unwrap(), half.on_space(space, 1).unwrap()])
            .unwrap();
        let pushed = pushforward_measure(&mu, &space).unwrap();
        assert_eq!(pushed.len(), lam.len());
        assert!(weak_discrepancy(&pushed, &lam, 6).unwrap() < 1e-15);
        assert_abs_diff_eq!(pushed.total_mass, mu.total_mass, epsilon = 1e-12);
        assert!(pushed.rings.is_some());
    }

    #[test]
    fn pushforward_identity_and_projection() {
        let lam = circle_quadrature(1.0, 16).unwrap();
        let space = SpaceModel::sphere().with_base_map(BaseMap::Identity).unwrap();
        let same = pushforward_measure(&lam, &space).unwrap();
        assert_eq!(same.nodes, lam.nodes);
        assert_eq!(same.weights, lam.weights);

        let prod = SpaceModel::product().with_base_map(BaseMap::FirstProjection).unwrap();
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for (p, w) in lam.nodes.iter().zip(&lam.weights) {
            for s in [Coord::real(0.0), Coord::Infinity, Coord::real(2.0)] {
                nodes.push(Point::product(p.z, s));
                weights.push(w / 3.0);
            }
        }
        let mu = QuadratureMeasure::new(prod, Descriptor::Custom { label: "circle x fiber".into() }, nodes, weights)
            .unwrap();
        let pushed = pushforward_measure(&mu, &prod).unwrap();
        assert!(weak_discrepancy(&pushed, &lam, 8).unwrap() < 1e-15);

        assert!(matches!(pushforward_measure(&lam, &SpaceModel::sphere()), Err(LabError::UnsupportedSpace(_))));
    }

    #[test]
    fn discrepancy_examples() {
        let c64 = circle_quadrature(1.0, 64).unwrap();
        let c128 = circle_quadrature(1.0, 128).unwrap();
        assert_eq!(weak_discrepancy(&c64, &c64, 5).unwrap(), 0.0);
        assert!(weak_discrepancy(&c64, &c128, 8).unwrap() <= 1e-12);
        let disk = disk_quadrature(1.0, 16, 64).unwrap();
        assert!(weak_discrepancy(&c64, &disk, 2).unwrap() >= 0.4);
        let union = SpaceModel::disjoint_union(2).unwrap();
        let other = c64.on_space(union, 1).unwrap();
        assert!(weak_discrepancy(&c64, &other, 2).is_err());
    }

    #[test]
    fn sample_sets_nest_under_refinement() {
        let k = SampleSet::disk(1.0, 3, 8).unwrap();
        let fine = k.refine().unwrap();
        assert_eq!(fine.refinement_level, 1);
        for p in &k.points {
            assert!(fine.points.iter().any(|q| q.approx_eq(p, 1e-12)));
        }
        let s = SampleSet::sphere(3, 6).unwrap();
        assert!(s.points.iter().any(|p| p.z.is_infinite()));
        let fine = s.refine().unwrap();
        for p in &s.points {
            assert!(fine.points.iter().any(|q| q.approx_eq(p, 1e-12)));
        }
    }

    #[test]
    fn space_validation() {
        assert!(SpaceModel::sphere().with_base_map(BaseMap::CollapseComponents).is_err());
        assert!(SpaceModel::product().with_base_map(BaseMap::FirstProjection).is_ok());
        assert!(SpaceModel::disjoint_union(0).is_err());
        assert_eq!(SpaceModel::product().factors(), 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn random_measure(weights: Vec<f64>) -> QuadratureMeasure {
            let n = weights.len();
            let nodes = (0..n).map(|j| Point::polar(0.3 + 0.1 * (j % 7) as f64, j as f64 * 0.37)).collect();
            QuadratureMeasure::new(SpaceModel::sphere(), Descriptor::Custom { label: "p".into() }, nodes, weights)
                .unwrap()
        }

        proptest! {
            #[test]
            fn discrepancy_is_a_pseudometric(
                wa in proptest::collection::vec(0.0f64..1.0, 12),
                wb in proptest::collection::vec(0.0f64..1.0, 12),
                wc in proptest::collection::vec(0.0f64..1.0, 12),
            ) {
                let (a, b, c) = (random_measure(wa), random_measure(wb), random_measure(wc));
                let ab = weak_discrepancy(&a, &b, 3).unwrap();
                let ba = weak_discrepancy(&b, &a, 3).unwrap();
                let bc = weak_discrepancy(&b, &c, 3).unwrap();
                let ac = weak_discrepancy(&a, &c, 3).unwrap();
                prop_assert_eq!(ab, ba);
                prop_assert!(ac <= ab + bc + 1e-15);
            }

            #[test]
            fn pushforward_preserves_mass(w in proptest::collection::vec(0.0f64..2.0, 12)) {
                let space = SpaceModel::disjoint_union(2).unwrap().with_base_map(BaseMap::CollapseComponents).unwrap();
                let m = random_measure(w);
                let mu = QuadratureMeasure::union(&[m.on_space(space, 0).unwrap(), m.on_space(space, 1).unwrap()]).unwrap();
                let pushed = pushforward_measure(&mu, &space).unwrap();
                prop_assert!((pushed.total_mass - mu.total_mass).abs() <= 1e-12 * mu.total_mass.max(1.0));
            }
        }
    }
}
