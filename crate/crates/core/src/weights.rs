//! Continuous metrics on `O(d)` written as weights in the affine chart.
//!
//! A weight `phi` stands for the metric `h = e^{-2 phi}` on the chart frame,
//! so a section `p` of the `k`-th power has length `|p(z)| e^{-k phi(z)}`.
//! At the point at infinity every weight reports the regularized limit
//! `lim (phi(z) - d log|z|)`, which is what the top coefficient of a section
//! is measured against.

use std::f64::consts::{LN_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::geometry::{Coord, Point, SpaceModel};

/// Tolerance for rotational invariance when extracting a radial profile.
pub const RADIAL_TOLERANCE: f64 = 1e-10;

/// Default number of fiber samples for [`fiber_sup_weight`].
pub const FIBER_POINTS: usize = 64;

/// Samples of `t -> phi(e^t)` with linear interpolation. Outside the grid the
/// profile is continued with slope 0 on the left and slope `d` on the right.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialProfile {
    pub t: Vec<f64>,
    pub values: Vec<f64>,
    pub degree: u32,
}

impl RadialProfile {
    pub fn new(t: Vec<f64>, values: Vec<f64>, degree: u32) -> Result<Self> {
        if t.len() < 2 || t.len() != values.len() {
            return Err(invalid("radial profile needs at least two samples"));
        }
        if t.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("radial profile grid must be strictly increasing"));
        }
        if t.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(invalid("radial profile must be finite"));
        }
        Ok(Self { t, values, degree })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.t.len();
        if t <= self.t[0] {
            return self.values[0];
        }
        if t >= self.t[n - 1] {
            return self.values[n - 1] + self.degree as f64 * (t - self.t[n - 1]);
        }
        let j = self.t.partition_point(|s| *s <= t) - 1;
        let s = (t - self.t[j]) / (self.t[j + 1] - self.t[j]);
        self.values[j] + s * (self.values[j + 1] - self.values[j])
    }

    /// `lim_{t -> inf} (phi~(t) - d t)`.
    pub fn at_infinity(&self) -> f64 {
        let n = self.t.len();
        self.values[n - 1] - self.degree as f64 * self.t[n - 1]
    }

    pub fn shifted(&self, c: f64) -> Self {
        Self { values: self.values.iter().map(|v| v + c).collect(), ..self.clone() }
    }
}

/// Samples of `phi - (d/2) log(1+|z|^2)` on a polar grid, interpolated
/// bilinearly in `(log|z|, angle)` and held constant beyond the radial range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridWeight {
    pub t: Vec<f64>,
    pub n_theta: usize,
    /// Row-major, one row of `n_theta` angles per entry of `t`.
    pub values: Vec<f64>,
    pub degree: u32,
}

impl GridWeight {
    pub fn new(t: Vec<f64>, n_theta: usize, values: Vec<f64>, degree: u32) -> Result<Self> {
        if t.len() < 2 || n_theta < 1 || values.len() != t.len() * n_theta {
            return Err(invalid("grid weight shape mismatch"));
        }
        if t.windows(2).any(|w| !(w[0] < w[1])) || values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("grid weight needs an increasing radial grid and finite values"));
        }
        Ok(Self { t, n_theta, values, degree })
    }

    /// Samples a weight on the polar grid.
    pub fn sample(w: &Weight, t: Vec<f64>, n_theta: usize) -> Result<Self> {
        let d = w.degree();
        let mut values = Vec::with_capacity(t.len() * n_theta);
        for &ti in &t {
            for j in 0..n_theta {
                let p = Point::polar(ti.exp(), 2.0 * PI * j as f64 / n_theta as f64);
                values.push(w.phi(&p) - fs_potential(d, ti));
            }
        }
        Self::new(t, n_theta, values, d)
    }

    fn correction(&self, t: f64, theta: f64) -> f64 {
        let n = self.t.len();
        let tc = t.clamp(self.t[0], self.t[n - 1]);
        let i = (self.t.partition_point(|s| *s <= tc).max(1) - 1).min(n - 2);
        let s = ((tc - self.t[i]) / (self.t[i + 1] - self.t[i])).clamp(0.0, 1.0);
        let u = theta.rem_euclid(2.0 * PI) / (2.0 * PI) * self.n_theta as f64;
        let j0 = (u.floor() as usize) % self.n_theta;
        let j1 = (j0 + 1) % self.n_theta;
        let v = u - u.floor();
        let at = |r: usize, c: usize| self.values[r * self.n_theta + c];
        let row = |r: usize| (1.0 - v) * at(r, j0) + v * at(r, j1);
        (1.0 - s) * row(i) + s * row(i + 1)
    }
}

/// `(d/2) log(1 + e^{2t})`, evaluated without overflow.
pub fn fs_potential(d: u32, t: f64) -> f64 {
    let d = d as f64;
    if t > 0.0 {
        d * t + 0.5 * d * (-2.0 * t).exp().ln_1p()
    } else {
        0.5 * d * (2.0 * t).exp().ln_1p()
    }
}

/// A bounded continuous function used to move a weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Direction {
    Constant { value: f64 },
    /// `1/(1+|z|^2)` on the first factor, 0 at infinity.
    InverseFs,
    /// `height * (1 - ((log|z| - center)/width)^2)_+`.
    Bump { center: f64, width: f64, height: f64 },
    /// `f(z) (1-|w|^2)/(1+|w|^2)` on a product: `f` over `w = 0`, `-f` over
    /// `w = infinity`.
    Oscillating { base: Box<Direction> },
    /// 1 on the given component, 0 elsewhere.
    ComponentIndicator { component: usize },
}

impl Direction {
    pub fn validate(&self) -> Result<()> {
        match self {
            Direction::Constant { value } if !value.is_finite() => Err(invalid("direction is unbounded")),
            Direction::Bump { center, width, height }
                if !(center.is_finite() && height.is_finite() && *width > 0.0 && width.is_finite()) =>
            {
                Err(invalid("bump direction needs finite center/height and positive width"))
            }
            Direction::Oscillating { base } => base.validate(),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, p: &Point) -> f64 {
        match self {
            Direction::Constant { value } => *value,
            Direction::InverseFs => match p.z {
                Coord::Finite(z) => 1.0 / (1.0 + z.norm_sqr()),
                Coord::Infinity => 0.0,
            },
            Direction::Bump { center, width, height } => match p.z {
                Coord::Finite(z) if z.norm() > 0.0 => {
                    let s = (z.norm().ln() - center) / width;
                    height * (1.0 - s * s).max(0.0)
                }
                _ => 0.0,
            },
            Direction::Oscillating { base } => {
                let f = base.eval(p);
                let g = match p.w {
                    None => 1.0,
                    Some(Coord::Infinity) => -1.0,
                    Some(Coord::Finite(w)) => {
                        let r2 = w.norm_sqr();
                        (1.0 - r2) / (1.0 + r2)
                    }
                };
                f * g
            }
            Direction::ComponentIndicator { component } => f64::from(u8::from(p.component == *component)),
        }
    }

    fn is_radial(&self) -> bool {
        matches!(
            self,
            Direction::Constant { .. } | Direction::InverseFs | Direction::Bump { .. } | Direction::ComponentIndicator { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Weight {
    /// `(d/2) log(1+|z|^2)`.
    FubiniStudy { degree: u32 },
    /// `|sigma| = (|z|+1)/2` on the closed unit disk for the constant
    /// section, i.e. `phi = -log((|z|+1)/2)`; outside the disk
    /// `phi = (1/2) log((1+|z|^2)/2)`, which agrees at `|z| = 1`.
    PaperDisk,
    /// 0 on the unit disk and `d log|z|` outside.
    Flat { degree: u32 },
    Radial { profile: RadialProfile },
    Grid { grid: GridWeight },
    Shifted { base: Box<Weight>, direction: Direction, t: f64 },
    PerComponent { parts: Vec<Weight> },
    /// Pointwise minimum over a fiber grid of a weight on the product.
    FiberInf { base: Box<Weight>, fiber: Vec<Coord> },
}

impl Weight {
    pub fn fubini_study() -> Self {
        Weight::FubiniStudy { degree: 1 }
    }

    pub fn degree(&self) -> u32 {
        match self {
            Weight::FubiniStudy { degree } | Weight::Flat { degree } => *degree,
            Weight::PaperDisk => 1,
            Weight::Radial { profile } => profile.degree,
            Weight::Grid { grid } => grid.degree,
            Weight::Shifted { base, .. } | Weight::FiberInf { base, .. } => base.degree(),
            Weight::PerComponent { parts } => parts.first().map_or(1, Weight::degree),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Weight::FubiniStudy { degree } | Weight::Flat { degree } if *degree == 0 => {
                Err(invalid("weights need a positive degree"))
            }
            Weight::Shifted { base, direction, t } => {
                if !t.is_finite() {
                    return Err(invalid("shift parameter must be finite"));
                }
                direction.validate()?;
                base.validate()
            }
            Weight::PerComponent { parts } => {
                let first = parts.first().ok_or_else(|| invalid("per-component weight has no parts"))?;
                if parts.iter().any(|p| p.degree() != first.degree()) {
                    return Err(invalid("per-component weights must share their degree"));
                }
                parts.iter().try_for_each(Weight::validate)
            }
            Weight::FiberInf { base, fiber } => {
                if fiber.is_empty() {
                    return Err(invalid("fiber grid is empty"));
                }
                base.validate()
            }
            _ => Ok(()),
        }
    }

    /// `phi(x)`; at infinity of the first factor, `lim (phi - d log|z|)`.
    pub fn phi(&self, p: &Point) -> f64 {
        match self {
            Weight::FubiniStudy { degree } => match p.z {
                Coord::Finite(z) => 0.5 * *degree as f64 * z.norm_sqr().ln_1p(),
                Coord::Infinity => 0.0,
            },
            Weight::PaperDisk => match p.z {
                Coord::Finite(z) => {
                    let r = z.norm();
                    if r <= 1.0 {
                        -((r + 1.0) / 2.0).ln()
                    } else {
                        0.5 * (r * r).ln_1p() - 0.5 * LN_2
                    }
                }
                Coord::Infinity => -0.5 * LN_2,
            },
            Weight::Flat { degree } => match p.z {
                Coord::Finite(z) => *degree as f64 * z.norm().ln().max(0.0),
                Coord::Infinity => 0.0,
            },
            Weight::Radial { profile } => match p.z {
                Coord::Finite(z) => {
                    let r = z.norm();
                    if r == 0.0 {
                        profile.values[0]
                    } else {
                        profile.eval(r.ln())
                    }
                }
                Coord::Infinity => profile.at_infinity(),
            },
            Weight::Grid { grid } => match p.z {
                Coord::Finite(z) => {
                    let r = z.norm();
                    let t = if r == 0.0 { f64::NEG_INFINITY } else { r.ln() };
                    let base = if r == 0.0 { 0.0 } else { fs_potential(grid.degree, t) };
                    base + grid.correction(t.max(grid.t[0]), z.arg())
                }
                Coord::Infinity => grid.correction(f64::INFINITY, 0.0),
            },
            Weight::Shifted { base, direction, t } => base.phi(p) + t * direction.eval(p),
            Weight::PerComponent { parts } => parts[p.component.min(parts.len() - 1)].phi(p),
            Weight::FiberInf { base, fiber } => fiber
                .iter()
                .map(|c| base.phi(&Point { w: Some(*c), ..*p }))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Rotation invariant by construction, on every component.
    pub(crate) fn known_radial(&self) -> bool {
        match self {
            Weight::FubiniStudy { .. } | Weight::PaperDisk | Weight::Flat { .. } | Weight::Radial { .. } => true,
            Weight::Shifted { base, direction, .. } => direction.is_radial() && base.known_radial(),
            Weight::PerComponent { parts } => parts.iter().all(Weight::known_radial),
            _ => false,
        }
    }
}

/// `log(|p(z)|)` for coefficients in increasing degree, stable for large `|z|`.
pub(crate) fn log_abs_poly(coeffs: &[Complex64], z: Complex64) -> f64 {
    let n = coeffs.len();
    if n == 0 {
        return f64::NEG_INFINITY;
    }
    if z.norm() <= 1.0 {
        let mut acc = Complex64::new(0.0, 0.0);
        for c in coeffs.iter().rev() {
            acc = acc * z + c;
        }
        acc.norm().ln()
    } else {
        let u = z.inv();
        let mut acc = Complex64::new(0.0, 0.0);
        for c in coeffs {
            acc = acc * u + c;
        }
        (n - 1) as f64 * z.norm().ln() + acc.norm().ln()
    }
}

/// `|p(z)| e^{-k phi(z)}` for a section of `O(k d)` given by its `k d + 1`
/// chart coefficients. At infinity the leading coefficient is measured
/// against the regularized weight.
pub fn eval_section_norm(w: &Weight, coeffs: &[Complex64], x: &Point, k: u32) -> Result<f64> {
    let n = (k * w.degree()) as usize + 1;
    if coeffs.len() != n {
        return Err(invalid(format!("expected {n} coefficients for degree {k}, got {}", coeffs.len())));
    }
    let kf = k as f64;
    let log = match x.z {
        Coord::Finite(z) => log_abs_poly(coeffs, z),
        Coord::Infinity => coeffs[n - 1].norm().ln(),
    };
    Ok((log - kf * w.phi(x)).exp())
}

/// A weight moved along a bounded direction: `phi_t = phi + t f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightFamily {
    pub base: Weight,
    pub direction: Direction,
}

impl WeightFamily {
    pub fn new(base: Weight, direction: Direction) -> Result<Self> {
        direction.validate()?;
        base.validate()?;
        Ok(Self { base, direction })
    }

    pub fn member(&self, t: f64) -> Result<Weight> {
        shift_weight(self, t)
    }
}

/// `phi + t f`. Shifting an already shifted weight along the same direction
/// adds the parameters, so repeated shifts compose exactly.
pub fn shift_weight(fam: &WeightFamily, t: f64) -> Result<Weight> {
    if !(t.abs() <= 1.0) {
        return Err(invalid("shift parameter must satisfy |t| <= 1"));
    }
    fam.direction.validate()?;
    if t == 0.0 {
        return Ok(fam.base.clone());
    }
    if let Weight::Shifted { base, direction, t: s } = &fam.base {
        if *direction == fam.direction {
            return Ok(Weight::Shifted { base: base.clone(), direction: direction.clone(), t: s + t });
        }
    }
    Ok(Weight::Shifted { base: Box::new(fam.base.clone()), direction: fam.direction.clone(), t })
}

/// Fiber grid of `n` points on the second sphere: 0, infinity and a
/// Fibonacci spiral in between, mapped by stereographic projection.
pub fn fiber_grid(n: usize) -> Result<Vec<Coord>> {
    if n < 2 {
        return Err(invalid("fiber grid needs at least two points"));
    }
    let golden = PI * (3.0 - 5f64.sqrt());
    let inner = n - 2;
    let mut out = vec![Coord::real(0.0), Coord::Infinity];
    for i in 0..inner {
        let u = 1.0 - 2.0 * (i as f64 + 0.5) / inner as f64;
        let polar = u.clamp(-1.0, 1.0).acos();
        out.push(Coord::polar((polar / 2.0).tan(), golden * i as f64));
    }
    Ok(out)
}

/// Push a weight on the product down to the first factor: the sup of the
/// fiberwise metrics, which in weight form is the inf over fiber samples.
pub fn fiber_sup_weight(w: &Weight, space: &SpaceModel, fiber_points: usize) -> Result<Weight> {
    if !space.is_product() {
        return Err(LabError::UnsupportedSpace("fiber sup needs a product space".into()));
    }
    fiber_inf_weight(w, fiber_grid(fiber_points)?)
}

/// Same as [`fiber_sup_weight`] on an explicit fiber grid.
pub fn fiber_inf_weight(w: &Weight, fiber: Vec<Coord>) -> Result<Weight> {
    if fiber.is_empty() {
        return Err(invalid("fiber grid is empty"));
    }
    Ok(Weight::FiberInf { base: Box::new(w.clone()), fiber })
}

/// Samples a rotation-invariant weight along `t = log|z|`.
///
/// Invariance is probed on 8 circles spread over the grid, 16 angles each.
pub fn radial_profile(w: &Weight, t_grid: &[f64]) -> Result<RadialProfile> {
    if t_grid.len() < 2 {
        return Err(invalid("radial grid needs at least two points"));
    }
    if !w.known_radial() {
        let (lo, hi) = (t_grid[0], t_grid[t_grid.len() - 1]);
        for i in 0..8 {
            let t = lo + (hi - lo) * i as f64 / 7.0;
            let r = t.exp();
            let reference = w.phi(&Point::polar(r, 0.0));
            for j in 1..16 {
                let v = w.phi(&Point::polar(r, 2.0 * PI * j as f64 / 16.0));
                if (v - reference).abs() > RADIAL_TOLERANCE * reference.abs().max(1.0) {
                    return Err(LabError::NotRadial(format!("phi varies by {:.3e} on |z| = {r:.4}", v - reference)));
                }
            }
        }
    }
    let values = t_grid.iter().map(|t| w.phi(&Point::real(t.exp()))).collect();
    RadialProfile::new(t_grid.to_vec(), values, w.degree())
}
