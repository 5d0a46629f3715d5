//! Conic solver for discrete Chebyshev problems `min max_n |v_n(y)|` over
//! real `y` subject to linear equalities, where each node value
//! `v_n(y) = a_n . y + i b_n . y` is linear in `y`.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{LabError, Result};

/// Node values as real and imaginary parts of a linear map.
#[derive(Clone, Debug)]
pub(crate) struct NodeForm {
    pub re: DMatrix<f64>,
    pub im: DMatrix<f64>,
}

impl NodeForm {
    fn apply(&self, y: &[f64]) -> Vec<Complex64> {
        let (n, p) = self.re.shape();
        (0..n)
            .map(|r| {
                let (mut a, mut b) = (0.0, 0.0);
                for j in 0..p {
                    a += self.re[(r, j)] * y[j];
                    b += self.im[(r, j)] * y[j];
                }
                Complex64::new(a, b)
            })
            .collect()
    }
}

pub(crate) struct ChebyshevSolution {
    /// Solver optimum, within the solver tolerance of the true minimum.
    pub bound: f64,
    /// `max_n |v_n(y)|` at the returned point, an upper bound.
    pub value: f64,
}

/// One second-order cone `tau >= |v_n|` per node; `x = (y, tau)` and the
/// node rows are scaled by `sqrt(n / p)` so that `tau` is of order one.
/// The equalities are the real and imaginary parts (or just the real part)
/// of one complex condition with value 1; the reported `value` is divided
/// by the condition's attained modulus.
pub(crate) fn chebyshev(form: &NodeForm, eqs: &[(Vec<f64>, f64)]) -> Result<ChebyshevSolution> {
    let (n, p) = form.re.shape();
    if p == 0 || n == 0 || eqs.is_empty() || form.im.shape() != (n, p) || eqs.iter().any(|e| e.0.len() != p) {
        return Err(LabError::Internal("Chebyshev problem dimensions do not match".into()));
    }
    let cols = p + 1;
    let scale = (n as f64 / p as f64).sqrt();
    let r = eqs.len();
    let rows = r + 3 * n;
    let mut colptr = Vec::with_capacity(cols + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for j in 0..p {
        for (i, e) in eqs.iter().enumerate() {
            if e.0[j] != 0.0 {
                rowval.push(i);
                nzval.push(e.0[j]);
            }
        }
        for node in 0..n {
            for (off, v) in [(1, form.re[(node, j)]), (2, form.im[(node, j)])] {
                if v != 0.0 {
                    rowval.push(r + 3 * node + off);
                    nzval.push(-scale * v);
                }
            }
        }
        colptr.push(rowval.len());
    }
    for node in 0..n {
        rowval.push(r + 3 * node);
        nzval.push(-1.0);
    }
    colptr.push(rowval.len());
    let a = CscMatrix::new(rows, cols, colptr, rowval, nzval);
    let mut b = vec![0.0; rows];
    for (i, e) in eqs.iter().enumerate() {
        b[i] = e.1;
    }
    let mut q = vec![0.0; cols];
    q[p] = 1.0;
    let mut cones = vec![SupportedConeT::ZeroConeT(r)];
    cones.extend((0..n).map(|_| SupportedConeT::SecondOrderConeT(3)));
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(200)
        .tol_gap_abs(1e-10)
        .tol_gap_rel(1e-10)
        .tol_feas(1e-10)
        .build()
        .map_err(|e| LabError::Internal(format!("solver settings: {e}")))?;
    let mut solver = DefaultSolver::new(&CscMatrix::zeros((cols, cols)), &q, &a, &b, &cones, settings)
        .map_err(|e| LabError::Internal(format!("solver setup: {e:?}")))?;
    solver.solve();
    match solver.solution.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {}
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => return Err(LabError::BaseLocus),
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            return Err(LabError::Internal("Chebyshev problem is unbounded".into()))
        }
        other => return Err(LabError::Internal(format!("Chebyshev solve stopped with status {other:?}"))),
    }
    let x = &solver.solution.x;
    let dot = |row: &[f64]| row.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>();
    let attained = Complex64::new(dot(&eqs[0].0), eqs.get(1).map_or(0.0, |e| dot(&e.0))).norm();
    let value = form.apply(&x[..p]).iter().map(|c| c.norm()).fold(0.0, f64::max) / attained;
    Ok(ChebyshevSolution { bound: x[p] / scale, value })
}
