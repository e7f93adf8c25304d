//! Generic standard-form LP and a primal-dual interior-point solver.
//!
//! The solver is a Mehrotra predictor-corrector method on
//!
//! ```txt
//!     min cᵀx   s.t.  A x = b,   lb <= x <= ub
//! ```
//!
//! (±inf bounds allowed). It returns interior, strictly complementary
//! primal-dual solutions, which is what the implicit differentiation
//! downstream needs. Linear solves use an LDLᵀ factorization of the
//! regularized augmented system.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid bounds: lb > ub at index {0}")]
    Bounds(usize),
    #[error("invalid tolerance")]
    Tolerance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl LinearProgram {
    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn m(&self) -> usize {
        self.b_eq.len()
    }

    pub fn check(&self) -> Result<(), LpError> {
        let n = self.n();
        if self.a_eq.ncols() != n || self.lb.len() != n || self.ub.len() != n {
            return Err(LpError::Dimension(format!(
                "n={} but A has {} cols, lb {} entries, ub {} entries",
                n,
                self.a_eq.ncols(),
                self.lb.len(),
                self.ub.len()
            )));
        }
        if self.a_eq.nrows() != self.m() {
            return Err(LpError::Dimension(format!(
                "A has {} rows but b has {}",
                self.a_eq.nrows(),
                self.m()
            )));
        }
        for j in 0..n {
            if self.lb[j] > self.ub[j] {
                return Err(LpError::Bounds(j));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: DVector<f64>,
    pub lambda_eq: DVector<f64>,
    pub mu_lo: DVector<f64>,
    pub mu_hi: DVector<f64>,
    pub objective: f64,
    pub status: LpStatus,
    pub iterations: usize,
}

/// Max KKT residual per block.
#[derive(Debug, Clone, Copy)]
pub struct ResidualReport {
    pub primal: f64,
    pub stationarity: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        self.primal
            .max(self.stationarity)
            .max(self.dual)
            .max(self.complementarity)
    }

    pub fn pass(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

/// Evaluates the four KKT blocks of `sol` against `lp` without reference to
/// how the solution was computed.
pub fn check_kkt(lp: &LinearProgram, sol: &LpSolution, _tol: f64) -> ResidualReport {
    let n = lp.n();
    let mut primal = 0.0f64;
    let r_p = &lp.a_eq * &sol.x - &lp.b_eq;
    for v in r_p.iter() {
        primal = primal.max(v.abs());
    }
    for j in 0..n {
        if lp.lb[j].is_finite() {
            primal = primal.max(lp.lb[j] - sol.x[j]);
        }
        if lp.ub[j].is_finite() {
            primal = primal.max(sol.x[j] - lp.ub[j]);
        }
    }
    let r_d = &lp.c - lp.a_eq.transpose() * &sol.lambda_eq - &sol.mu_lo + &sol.mu_hi;
    let stationarity = r_d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut dual = 0.0f64;
    for j in 0..n {
        dual = dual.max(-sol.mu_lo[j]).max(-sol.mu_hi[j]);
    }
    let mut comp = 0.0f64;
    for j in 0..n {
        if lp.lb[j].is_finite() {
            comp = comp.max((sol.mu_lo[j] * (sol.x[j] - lp.lb[j])).abs());
        } else {
            comp = comp.max(sol.mu_lo[j].abs());
        }
        if lp.ub[j].is_finite() {
            comp = comp.max((sol.mu_hi[j] * (lp.ub[j] - sol.x[j])).abs());
        } else {
            comp = comp.max(sol.mu_hi[j].abs());
        }
    }
    ResidualReport {
        primal,
        stationarity,
        dual,
        complementarity: comp,
    }
}

/// Dual objective bᵀλ + Σ lbⱼ μ_loⱼ − Σ ubⱼ μ_hiⱼ over finite bounds.
pub fn dual_objective(lp: &LinearProgram, sol: &LpSolution) -> f64 {
    let mut obj = lp.b_eq.dot(&sol.lambda_eq);
    for j in 0..lp.n() {
        if lp.lb[j].is_finite() {
            obj += lp.lb[j] * sol.mu_lo[j];
        }
        if lp.ub[j].is_finite() {
            obj -= lp.ub[j] * sol.mu_hi[j];
        }
    }
    obj
}

pub const DEFAULT_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 200;
const REG: f64 = 1e-10;
const DIVERGENCE: f64 = 1e9;

struct Presolve {
    fixed: Vec<(usize, f64)>,
    free_cols: Vec<usize>,
    kept_rows: Vec<usize>,
    reduced: LinearProgram,
    infeasible: bool,
}

fn presolve(lp: &LinearProgram) -> Presolve {
    let n = lp.n();
    let mut fixed = Vec::new();
    let mut free_cols = Vec::new();
    for j in 0..n {
        if lp.lb[j] == lp.ub[j] {
            fixed.push((j, lp.lb[j]));
        } else {
            free_cols.push(j);
        }
    }
    let mut b = lp.b_eq.clone();
    for &(j, v) in &fixed {
        if v != 0.0 {
            b -= lp.a_eq.column(j) * v;
        }
    }
    let a_red = lp.a_eq.select_columns(free_cols.iter());
    let mut kept_rows = Vec::new();
    let mut infeasible = false;
    for i in 0..lp.m() {
        let row_norm = a_red.row(i).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if row_norm == 0.0 {
            if b[i].abs() > 1e-10 {
                infeasible = true;
            }
        } else {
            kept_rows.push(i);
        }
    }
    let reduced = LinearProgram {
        c: DVector::from_iterator(free_cols.len(), free_cols.iter().map(|&j| lp.c[j])),
        a_eq: a_red.select_rows(kept_rows.iter()),
        b_eq: DVector::from_iterator(kept_rows.len(), kept_rows.iter().map(|&i| b[i])),
        lb: DVector::from_iterator(free_cols.len(), free_cols.iter().map(|&j| lp.lb[j])),
        ub: DVector::from_iterator(free_cols.len(), free_cols.iter().map(|&j| lp.ub[j])),
    };
    Presolve {
        fixed,
        free_cols,
        kept_rows,
        reduced,
        infeasible,
    }
}

/// Solves the LP to the requested tolerance.
pub fn solve_lp(lp: &LinearProgram, tol: f64) -> Result<LpSolution, LpError> {
    lp.check()?;
    if !(tol > 0.0) {
        return Err(LpError::Tolerance);
    }
    let pre = presolve(lp);
    let failed = |status: LpStatus| LpSolution {
        x: DVector::zeros(lp.n()),
        lambda_eq: DVector::zeros(lp.m()),
        mu_lo: DVector::zeros(lp.n()),
        mu_hi: DVector::zeros(lp.n()),
        objective: f64::NAN,
        status,
        iterations: 0,
    };
    if pre.infeasible {
        return Ok(failed(LpStatus::Infeasible));
    }
    let inner = solve_core(&pre.reduced, tol);
    if inner.status != LpStatus::Optimal {
        return Ok(failed(inner.status));
    }
    // Scatter back into the original variable space.
    let n = lp.n();
    let mut x = DVector::zeros(n);
    let mut mu_lo = DVector::zeros(n);
    let mut mu_hi = DVector::zeros(n);
    for (k, &j) in pre.free_cols.iter().enumerate() {
        x[j] = inner.x[k];
        mu_lo[j] = inner.mu_lo[k];
        mu_hi[j] = inner.mu_hi[k];
    }
    let mut lambda_eq = DVector::zeros(lp.m());
    for (k, &i) in pre.kept_rows.iter().enumerate() {
        lambda_eq[i] = inner.lambda_eq[k];
    }
    // Reduced costs of fixed variables become bound multipliers; both bounds
    // are active so complementarity is free.
    for &(j, v) in &pre.fixed {
        x[j] = v;
        let rc = lp.c[j] - lp.a_eq.column(j).dot(&lambda_eq);
        if rc >= 0.0 {
            mu_lo[j] = rc;
        } else {
            mu_hi[j] = -rc;
        }
    }
    let objective = lp.c.dot(&x);
    Ok(LpSolution {
        x,
        lambda_eq,
        mu_lo,
        mu_hi,
        objective,
        status: LpStatus::Optimal,
        iterations: inner.iterations,
    })
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Mehrotra predictor-corrector on the presolved problem (no fixed
/// variables, no empty rows).
fn solve_core(lp: &LinearProgram, tol: f64) -> LpSolution {
    let n = lp.n();
    let m = lp.m();
    let has_lo: Vec<bool> = (0..n).map(|j| lp.lb[j].is_finite()).collect();
    let has_hi: Vec<bool> = (0..n).map(|j| lp.ub[j].is_finite()).collect();
    let n_compl: usize = (0..n)
        .map(|j| has_lo[j] as usize + has_hi[j] as usize)
        .sum();

    // Starting point: centered in the box where possible.
    let mut x = DVector::zeros(n);
    for j in 0..n {
        x[j] = match (has_lo[j], has_hi[j]) {
            (true, true) => 0.5 * (lp.lb[j] + lp.ub[j]),
            (true, false) => lp.lb[j] + 1.0,
            (false, true) => lp.ub[j] - 1.0,
            (false, false) => 0.0,
        };
    }
    let mut lambda = DVector::zeros(m);
    let mut zl = DVector::from_element(n, 0.0);
    let mut zh = DVector::from_element(n, 0.0);
    for j in 0..n {
        if has_lo[j] {
            zl[j] = 1.0;
        }
        if has_hi[j] {
            zh[j] = 1.0;
        }
    }
    let slack_lo = |x: &DVector<f64>, j: usize| x[j] - lp.lb[j];
    let slack_hi = |x: &DVector<f64>, j: usize| lp.ub[j] - x[j];
    // nudge strictly inside
    for j in 0..n {
        if has_lo[j] && has_hi[j] {
            let w = lp.ub[j] - lp.lb[j];
            let margin = 0.25 * w.min(2.0);
            x[j] = x[j].max(lp.lb[j] + margin).min(lp.ub[j] - margin);
        }
    }

    let at = lp.a_eq.transpose();
    let mut iterations = 0;
    for iter in 0..MAX_ITER {
        iterations = iter;
        let r_p = &lp.b_eq - &lp.a_eq * &x;
        let r_d = &lp.c - &at * &lambda - &zl + &zh;
        let mut gap = 0.0;
        for j in 0..n {
            if has_lo[j] {
                gap += slack_lo(&x, j) * zl[j];
            }
            if has_hi[j] {
                gap += slack_hi(&x, j) * zh[j];
            }
        }
        let mu = if n_compl > 0 { gap / n_compl as f64 } else { 0.0 };
        let pobj = lp.c.dot(&x);
        let dobj = dual_objective(
            lp,
            &LpSolution {
                x: x.clone(),
                lambda_eq: lambda.clone(),
                mu_lo: zl.clone(),
                mu_hi: zh.clone(),
                objective: pobj,
                status: LpStatus::Optimal,
                iterations,
            },
        );
        let converged = inf_norm(&r_p) <= tol
            && inf_norm(&r_d) <= tol
            && (pobj - dobj).abs() <= tol * (1.0 + pobj.abs());
        if converged {
            return LpSolution {
                x,
                lambda_eq: lambda,
                mu_lo: zl,
                mu_hi: zh,
                objective: pobj,
                status: LpStatus::Optimal,
                iterations,
            };
        }
        // Divergence heuristics in lieu of a homogeneous embedding.
        let dual_mag = inf_norm(&lambda).max(inf_norm(&zl)).max(inf_norm(&zh));
        let scale = 1.0 + inf_norm(&lp.c);
        if dual_mag > DIVERGENCE * scale && inf_norm(&r_p) > tol {
            return LpSolution {
                x,
                lambda_eq: lambda,
                mu_lo: zl,
                mu_hi: zh,
                objective: f64::NAN,
                status: LpStatus::Infeasible,
                iterations,
            };
        }
        if inf_norm(&x) > DIVERGENCE * (1.0 + inf_norm(&lp.b_eq)) && inf_norm(&r_p) <= 1e-4 {
            return LpSolution {
                x,
                lambda_eq: lambda,
                mu_lo: zl,
                mu_hi: zh,
                objective: f64::NEG_INFINITY,
                status: LpStatus::Unbounded,
                iterations,
            };
        }

        // Augmented system [-(D+reg) Aᵀ; A reg·I], factorized once per iteration.
        let dim = n + m;
        let mut kkt = DMatrix::zeros(dim, dim);
        for j in 0..n {
            let mut d = REG;
            if has_lo[j] {
                d += zl[j] / slack_lo(&x, j);
            }
            if has_hi[j] {
                d += zh[j] / slack_hi(&x, j);
            }
            kkt[(j, j)] = -d;
        }
        for i in 0..m {
            for j in 0..n {
                let v = lp.a_eq[(i, j)];
                if v != 0.0 {
                    kkt[(n + i, j)] = v;
                    kkt[(j, n + i)] = v;
                }
            }
            kkt[(n + i, n + i)] = REG;
        }
        let lu = kkt.clone().lu();

        // Given complementarity targets, assemble rhs, solve, recover dz.
        let solve_dir = |tl: &DVector<f64>, th: &DVector<f64>| {
            let mut rhs = DVector::zeros(dim);
            for j in 0..n {
                let mut v = r_d[j];
                if has_lo[j] {
                    v -= tl[j] / slack_lo(&x, j);
                }
                if has_hi[j] {
                    v += th[j] / slack_hi(&x, j);
                }
                rhs[j] = v;
            }
            for i in 0..m {
                rhs[n + i] = r_p[i];
            }
            let sol = lu.solve(&rhs).unwrap_or_else(|| DVector::zeros(dim));
            let dx = sol.rows(0, n).into_owned();
            let dl = sol.rows(n, m).into_owned();
            let mut dzl = DVector::zeros(n);
            let mut dzh = DVector::zeros(n);
            for j in 0..n {
                if has_lo[j] {
                    dzl[j] = (tl[j] - zl[j] * dx[j]) / slack_lo(&x, j);
                }
                if has_hi[j] {
                    dzh[j] = (th[j] + zh[j] * dx[j]) / slack_hi(&x, j);
                }
            }
            (dx, dl, dzl, dzh)
        };

        let step_len = |dx: &DVector<f64>, dzl: &DVector<f64>, dzh: &DVector<f64>| {
            let mut ap = 1.0f64;
            let mut ad = 1.0f64;
            for j in 0..n {
                if has_lo[j] {
                    if dx[j] < 0.0 {
                        ap = ap.min(-slack_lo(&x, j) / dx[j]);
                    }
                    if dzl[j] < 0.0 {
                        ad = ad.min(-zl[j] / dzl[j]);
                    }
                }
                if has_hi[j] {
                    if dx[j] > 0.0 {
                        ap = ap.min(slack_hi(&x, j) / dx[j]);
                    }
                    if dzh[j] < 0.0 {
                        ad = ad.min(-zh[j] / dzh[j]);
                    }
                }
            }
            (ap, ad)
        };

        // Predictor (affine scaling) direction.
        let mut tl = DVector::zeros(n);
        let mut th = DVector::zeros(n);
        for j in 0..n {
            if has_lo[j] {
                tl[j] = -slack_lo(&x, j) * zl[j];
            }
            if has_hi[j] {
                th[j] = -slack_hi(&x, j) * zh[j];
            }
        }
        let (dx_a, _dl_a, dzl_a, dzh_a) = solve_dir(&tl, &th);
        let (ap_a, ad_a) = step_len(&dx_a, &dzl_a, &dzh_a);
        let mut gap_aff = 0.0;
        for j in 0..n {
            if has_lo[j] {
                gap_aff += (slack_lo(&x, j) + ap_a * dx_a[j]) * (zl[j] + ad_a * dzl_a[j]);
            }
            if has_hi[j] {
                gap_aff += (slack_hi(&x, j) - ap_a * dx_a[j]) * (zh[j] + ad_a * dzh_a[j]);
            }
        }
        let mu_aff = if n_compl > 0 {
            gap_aff / n_compl as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 {
            (mu_aff / mu).powi(3).clamp(1e-8, 1.0)
        } else {
            0.0
        };

        // Corrector.
        for j in 0..n {
            if has_lo[j] {
                tl[j] = -slack_lo(&x, j) * zl[j] - dx_a[j] * dzl_a[j] + sigma * mu;
            }
            if has_hi[j] {
                th[j] = -slack_hi(&x, j) * zh[j] + dx_a[j] * dzh_a[j] + sigma * mu;
            }
        }
        let (dx, dl, dzl, dzh) = solve_dir(&tl, &th);
        let (ap, ad) = step_len(&dx, &dzl, &dzh);
        let eta = 0.99995;
        let ap = (eta * ap).min(1.0);
        let ad = (eta * ad).min(1.0);
        x += ap * &dx;
        lambda += ad * &dl;
        zl += ad * &dzl;
        zh += ad * &dzh;
        for j in 0..n {
            if has_lo[j] {
                zl[j] = zl[j].max(1e-14);
            }
            if has_hi[j] {
                zh[j] = zh[j].max(1e-14);
            }
        }
    }
    LpSolution {
        x,
        lambda_eq: lambda,
        mu_lo: zl,
        mu_hi: zh,
        objective: f64::NAN,
        status: LpStatus::IterLimit,
        iterations,
    }
}
