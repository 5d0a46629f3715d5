//! Norms on `W_k`: Gram matrices of Hilbert norms, sampled sup-norms and
//! orthonormal bases.
//!
//! Gram matrices are assembled in the monomial basis rescaled by
//! `sqrt((N+1) binom(N, a))`, `N = k d`, which is orthonormal for the
//! Fubini-Study weight and area. Public coefficient vectors always refer to
//! the unscaled basis `z^a D(z)^k` of [`BasisList`].

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::geometry::{Coord, Point, QuadratureMeasure, SampleSet};
use crate::series::{BasisList, SeriesSpec, Variant};
use crate::weights::Weight;

/// Relative pivot threshold of [`orthonormalize`].
pub const PIVOT_TOLERANCE: f64 = 1e-14;
/// Jitter added once, relative to the trace, before giving up. A jittered
/// factorization is accepted only if no pivot is carried by the jitter.
pub const JITTER: f64 = 1e-12;

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..=n {
        acc += (i as f64).ln();
        out.push(acc);
    }
    out
}

/// `log` of the prescaling factors of the basis.
pub(crate) fn log_scales(basis: &BasisList) -> Vec<f64> {
    let n = basis.box_degree as usize;
    let lf = ln_factorials(n);
    basis
        .exponents
        .iter()
        .map(|e| {
            let a = (e[0] as usize).min(n);
            0.5 * (((n + 1) as f64).ln() + lf[n] - lf[a] - lf[n - a])
        })
        .collect()
}

/// Frame-weighted values `c_a z^a D(z)^k e^{-k phi(x)}` of the basis at `x`,
/// with `log c_a` given by `log_scale` (zeros for the unscaled basis).
pub(crate) fn basis_values(basis: &BasisList, log_scale: &[f64], w: &Weight, x: &Point) -> Vec<Complex64> {
    let k = basis.k as f64;
    let kphi = k * w.phi(x);
    let top = basis.box_degree;
    let div_degree: u32 = basis.divisor.iter().map(|r| r.multiplicity).sum::<u32>() * basis.k;
    match x.z {
        Coord::Infinity => basis
            .exponents
            .iter()
            .zip(log_scale)
            .map(|(e, ls)| {
                if e[0] + div_degree == top {
                    Complex64::new((ls - kphi).exp(), 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect(),
        Coord::Finite(z) => {
            let (lr, arg) = if z.norm() == 0.0 { (f64::NEG_INFINITY, 0.0) } else { (z.norm().ln(), z.arg()) };
            let mut div_log = 0.0;
            let mut div_arg = 0.0;
            for r in &basis.divisor {
                let u = z - r.z;
                div_log += k * r.multiplicity as f64 * u.norm().ln();
                div_arg += k * r.multiplicity as f64 * u.arg();
            }
            basis
                .exponents
                .iter()
                .zip(log_scale)
                .map(|(e, ls)| {
                    let a = e[0] as f64;
                    let log_mod = if e[0] == 0 { 0.0 } else { a * lr };
                    let m = (ls + log_mod + div_log - kphi).exp();
                    Complex64::from_polar(m, a * arg + div_arg)
                })
                .collect()
        }
    }
}

/// Hermitian form `G_ab = sum_n w_n conj(e_a(x_n)) e_b(x_n)` in the scaled
/// basis, so `||s||^2 = c^* G c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramMatrix {
    pub k: u32,
    pub basis: BasisList,
    pub weight: Weight,
    pub entries: DMatrix<Complex64>,
    pub log_scales: Vec<f64>,
    /// True when the assembly used the rotational structure and the matrix
    /// is diagonal by exactness of the angular rule.
    pub diagonal: bool,
}

impl GramMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Coefficients of the unscaled basis expressed in the scaled one.
    pub fn to_scaled(&self, coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
        if coeffs.len() != self.dim() {
            return Err(invalid("coefficient vector has the wrong length"));
        }
        Ok(coeffs.iter().zip(&self.log_scales).map(|(c, ls)| c * (-ls).exp()).collect())
    }

    /// Hilbert norm of a section given by unscaled coefficients.
    pub fn norm(&self, coeffs: &[Complex64]) -> Result<f64> {
        let c = nalgebra::DVector::from_vec(self.to_scaled(coeffs)?);
        Ok((c.adjoint() * &self.entries * &c)[(0, 0)].re.max(0.0).sqrt())
    }

    /// `<z^a, z^b>` in the unscaled basis.
    pub fn raw_entry(&self, a: usize, b: usize) -> Complex64 {
        self.entries[(a, b)] * (-(self.log_scales[a] + self.log_scales[b])).exp()
    }
}

fn check_compatible(spec: &SeriesSpec, w: &Weight, mu: &QuadratureMeasure) -> Result<()> {
    if mu.space.structure != spec.space.structure || mu.space.components != spec.space.components {
        return Err(invalid("measure does not live on the series' space"));
    }
    if w.degree() != spec.line_degree() {
        return Err(invalid(format!("weight degree {} but series needs O({})", w.degree(), spec.line_degree())));
    }
    Ok(())
}

fn check_first_factor(basis: &BasisList) -> Result<()> {
    if basis.uses_second_factor() {
        return Err(LabError::UnsupportedSeries("Hilbert norms use sections pulled back from the first factor".into()));
    }
    Ok(())
}

/// Assembles the Gram matrix of `Hilb_k(h, mu)` on `W_k`.
pub fn gram_matrix(spec: &SeriesSpec, k: u32, w: &Weight, mu: &QuadratureMeasure) -> Result<GramMatrix> {
    check_compatible(spec, w, mu)?;
    let basis = spec.basis(k)?;
    if basis.dim() == 0 {
        return Err(LabError::EmptySeries(format!("W_{k} is zero")));
    }
    check_first_factor(&basis)?;
    let scales = log_scales(&basis);
    let m = basis.dim();
    if let Some(diag) = radial_diagonal(&basis, &scales, w, mu) {
        let entries = DMatrix::from_fn(m, m, |i, j| if i == j { Complex64::new(diag[i], 0.0) } else { Complex64::new(0.0, 0.0) });
        return Ok(GramMatrix { k, basis, weight: w.clone(), entries, log_scales: scales, diagonal: true });
    }
    let n = mu.len();
    let mut e = DMatrix::<Complex64>::zeros(n, m);
    for (row, (p, wt)) in mu.nodes.iter().zip(&mu.weights).enumerate() {
        let s = wt.sqrt();
        for (col, v) in basis_values(&basis, &scales, w, p).into_iter().enumerate() {
            e[(row, col)] = v * s;
        }
    }
    let mut entries = e.adjoint() * &e;
    for i in 0..m {
        for j in 0..i {
            let avg = (entries[(i, j)] + entries[(j, i)].conj()) * 0.5;
            entries[(i, j)] = avg;
            entries[(j, i)] = avg.conj();
        }
        entries[(i, i)].im = 0.0;
    }
    Ok(GramMatrix { k, basis, weight: w.clone(), entries, log_scales: scales, diagonal: false })
}

/// Gram matrix of the norm `N^D_k(s D^k) = N_k(s)` on a divisor shift of the
/// series of `base`, for the weight `w` of the shifted degree.
pub fn divisor_transport(base: &GramMatrix, spec: &SeriesSpec, w: &Weight) -> Result<GramMatrix> {
    if !matches!(spec.variant, Variant::DivisorShift { .. }) {
        return Err(invalid("divisor transport needs a divisor-shift series"));
    }
    if w.degree() != spec.line_degree() {
        return Err(invalid("weight degree does not match the shifted series"));
    }
    let basis = spec.basis(base.k)?;
    if basis.exponents != base.basis.exponents {
        return Err(invalid("shifted series does not extend the Gram matrix's basis"));
    }
    let scales = log_scales(&basis);
    let m = basis.dim();
    let entries = DMatrix::from_fn(m, m, |a, b| base.raw_entry(a, b) * (scales[a] + scales[b]).exp());
    Ok(GramMatrix { k: base.k, basis, weight: w.clone(), entries, log_scales: scales, diagonal: base.diagonal })
}

/// Diagonal of the Gram matrix from one evaluation per ring, when the weight
/// is radial, the basis is monomial in one variable and every ring resolves
/// the largest exponent difference.
fn radial_diagonal(basis: &BasisList, scales: &[f64], w: &Weight, mu: &QuadratureMeasure) -> Option<Vec<f64>> {
    let rings = mu.rings.as_ref()?;
    if !w.known_radial() || !basis.divisor.is_empty() || mu.space.is_product() {
        return None;
    }
    let lo = basis.exponents.first()?[0];
    let hi = basis.exponents.last()?[0];
    let spread = (hi - lo) as usize;
    if rings.iter().any(|r| r.len <= spread && basis.dim() > 1) {
        return None;
    }
    let mut diag = vec![0.0; basis.dim()];
    for r in rings {
        let p = match r.radius {
            Some(rad) => Point::polar(rad, 0.0).on_component(r.component),
            None => Point::infinity().on_component(r.component),
        };
        let mass: f64 = mu.weights[r.start..r.start + r.len].iter().sum();
        for (d, v) in diag.iter_mut().zip(basis_values(basis, scales, w, &p)) {
            *d += mass * v.norm_sqr();
        }
    }
    Some(diag)
}

/// Columns of `coeffs` express an orthonormal basis in the scaled basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthoBasis {
    pub coeffs: DMatrix<Complex64>,
    pub min_pivot: f64,
    pub max_pivot: f64,
    pub jittered: bool,
    pub diagonal: bool,
    pub permutation: Vec<usize>,
    pub basis: BasisList,
    pub log_scales: Vec<f64>,
}

/// Pivoted Cholesky `P^T H P = L L^*` of a Hermitian matrix; returns `L`,
/// the permutation and the pivots, or `None` at the first pivot below
/// `tol * max pivot`.
fn pivoted_cholesky(h: &DMatrix<Complex64>, tol: f64) -> Option<(DMatrix<Complex64>, Vec<usize>, Vec<f64>)> {
    let m = h.nrows();
    let mut a = h.clone();
    let mut perm: Vec<usize> = (0..m).collect();
    let mut pivots = Vec::with_capacity(m);
    let mut l = DMatrix::<Complex64>::zeros(m, m);
    let mut max_pivot: f64 = 0.0;
    for j in 0..m {
        let (q, best) = (j..m).map(|i| (i, a[(i, i)].re)).fold((j, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        max_pivot = max_pivot.max(best);
        if !(best > tol * max_pivot) || best <= 0.0 {
            return None;
        }
        if q != j {
            a.swap_rows(j, q);
            a.swap_columns(j, q);
            l.swap_rows(j, q);
            perm.swap(j, q);
        }
        let d = a[(j, j)].re.sqrt();
        pivots.push(a[(j, j)].re);
        l[(j, j)] = Complex64::new(d, 0.0);
        for i in j + 1..m {
            l[(i, j)] = a[(i, j)] / d;
        }
        for c in j + 1..m {
            for r in j + 1..m {
                let upd = l[(r, j)] * l[(c, j)].conj();
                a[(r, c)] -= upd;
            }
        }
    }
    Some((l, perm, pivots))
}

/// Orthonormal basis of `(W_k, Hilb)` from a Jacobi-scaled pivoted Cholesky
/// factorization: `C = D P L^{-*}` with `D = diag(G)^{-1/2}`.
pub fn orthonormalize(g: &GramMatrix) -> Result<OrthoBasis> {
    let m = g.dim();
    let diag: Vec<f64> = (0..m).map(|i| g.entries[(i, i)].re).collect();
    if diag.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return Err(LabError::DegenerateGram("a basis element has zero norm".into()));
    }
    if g.diagonal {
        let coeffs = DMatrix::from_fn(m, m, |i, j| if i == j { Complex64::new(diag[i].powf(-0.5), 0.0) } else { Complex64::new(0.0, 0.0) });
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        return Ok(OrthoBasis {
            coeffs,
            min_pivot: min,
            max_pivot: max,
            jittered: false,
            diagonal: true,
            permutation: (0..m).collect(),
            basis: g.basis.clone(),
            log_scales: g.log_scales.clone(),
        });
    }
    let dinv: Vec<f64> = diag.iter().map(|d| d.powf(-0.5)).collect();
    let mut h = DMatrix::from_fn(m, m, |i, j| g.entries[(i, j)] * (dinv[i] * dinv[j]));
    let mut jittered = false;
    let factor = match pivoted_cholesky(&h, PIVOT_TOLERANCE) {
        Some(f) => f,
        None => {
            jittered = true;
            let trace: f64 = (0..m).map(|i| h[(i, i)].re).sum();
            let shift = JITTER * trace;
            for i in 0..m {
                h[(i, i)] += Complex64::new(shift, 0.0);
            }
            pivoted_cholesky(&h, PIVOT_TOLERANCE.max(10.0 * shift / trace))
                .ok_or_else(|| LabError::DegenerateGram(format!("pivot below {PIVOT_TOLERANCE:e} of the largest")))?
        }
    };
    let (l, perm, pivots) = factor;
    let lt = l.adjoint();
    let linv_star = lt
        .solve_upper_triangular(&DMatrix::<Complex64>::identity(m, m))
        .ok_or_else(|| LabError::DegenerateGram("triangular factor is singular".into()))?;
    let mut coeffs = DMatrix::<Complex64>::zeros(m, m);
    for (j, &pj) in perm.iter().enumerate() {
        for c in 0..m {
            coeffs[(pj, c)] = linv_star[(j, c)] * dinv[pj];
        }
    }
    Ok(OrthoBasis {
        coeffs,
        min_pivot: pivots.iter().cloned().fold(f64::INFINITY, f64::min),
        max_pivot: pivots.iter().cloned().fold(0.0, f64::max),
        jittered,
        diagonal: false,
        permutation: perm,
        basis: g.basis.clone(),
        log_scales: g.log_scales.clone(),
    })
}

impl OrthoBasis {
    /// `B(x,x) = sum_i |s_i(x)|^2` for the frame-weighted values.
    pub fn kernel_at(&self, w: &Weight, x: &Point) -> f64 {
        let e = basis_values(&self.basis, &self.log_scales, w, x);
        if self.diagonal {
            return e.iter().enumerate().map(|(i, v)| v.norm_sqr() * self.coeffs[(i, i)].norm_sqr()).sum();
        }
        let m = e.len();
        let mut total = 0.0;
        for c in 0..m {
            let mut s = Complex64::new(0.0, 0.0);
            for (i, v) in e.iter().enumerate() {
                s += self.coeffs[(i, c)] * v;
            }
            total += s.norm_sqr();
        }
        total
    }

    /// Largest deviation of `C^* G C` from the identity.
    pub fn residual(&self, g: &GramMatrix) -> f64 {
        let prod = self.coeffs.adjoint() * &g.entries * &self.coeffs;
        let m = prod.nrows();
        let mut worst: f64 = 0.0;
        for i in 0..m {
            for j in 0..m {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((prod[(i, j)] - Complex64::new(target, 0.0)).norm());
            }
        }
        worst
    }
}

/// A norm on `W_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NormHandle {
    Hilb(GramMatrix),
    SupSampled { points: Vec<Point>, weight: Weight, basis: BasisList },
}

impl NormHandle {
    pub fn sup_sampled(spec: &SeriesSpec, k: u32, w: &Weight, set: &SampleSet) -> Result<Self> {
        let basis = spec.basis(k)?;
        if basis.dim() == 0 {
            return Err(LabError::EmptySeries(format!("W_{k} is zero")));
        }
        check_first_factor(&basis)?;
        if w.degree() != spec.line_degree() {
            return Err(invalid("weight degree does not match the series"));
        }
        Ok(NormHandle::SupSampled { points: set.points.clone(), weight: w.clone(), basis })
    }

    pub fn eval(&self, coeffs: &[Complex64]) -> Result<f64> {
        match self {
            NormHandle::Hilb(g) => g.norm(coeffs),
            NormHandle::SupSampled { .. } => sup_norm_eval(self, coeffs),
        }
    }
}

/// Sample maximum of `|s(x)|_h` over the handle's points.
pub fn sup_norm_eval(h: &NormHandle, coeffs: &[Complex64]) -> Result<f64> {
    let NormHandle::SupSampled { points, weight, basis } = h else {
        return Err(invalid("sup_norm_eval needs a sampled sup-norm handle"));
    };
    if coeffs.len() != basis.dim() {
        return Err(invalid("coefficient vector has the wrong length"));
    }
    let zeros = vec![0.0; basis.dim()];
    let mut best: f64 = 0.0;
    for p in points {
        let e = basis_values(basis, &zeros, weight, p);
        let v: Complex64 = e.iter().zip(coeffs).map(|(a, c)| a * c).sum();
        best = best.max(v.norm());
    }
    Ok(best)
}

/// `(k, eps_k)` with `eps_k = (1/k) log sup_K sqrt(B_k(x,x))`, the exponent
/// of the best constant in `Ban_k(K) <= C_k Hilb_k(mu)`.
pub fn distortion_profile(
    spec: &SeriesSpec,
    k_list: &[u32],
    w: &Weight,
    set: &SampleSet,
    mu: &QuadratureMeasure,
) -> Result<Vec<(u32, f64)>> {
    k_list
        .iter()
        .map(|&k| {
            let ob = orthonormalize(&gram_matrix(spec, k, w, mu)?)?;
            let sup = set.points.iter().map(|p| ob.kernel_at(w, p)).fold(0.0, f64::max);
            Ok((k, 0.5 * sup.ln() / k.max(1) as f64))
        })
        .collect()
}

/// Coefficient vector with real and imaginary parts uniform in `[-1, 1)`.
pub fn random_coeffs(m: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    (0..m).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
