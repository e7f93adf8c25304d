//! Sensitivities of the DC-OPF solution with respect to (gs, b) via the
//! implicit function theorem on the KKT system, reduced by the active set.
//!
//! At a non-degenerate LP optimum the complementarity conditions reduce to
//! equalities on the active bounds, leaving a square linear system
//!
//! ```txt
//!   F(x, lambda, z; gs, b) = 0
//!   F1: c - A'lambda - sum(+-z on active bounds)   (stationarity)
//!   F2: A x - rhs                                  (equality rows)
//!   F3: x_j - bound_j for active bounds            (active set)
//! ```
//!
//! gs enters the balance right-hand side; b enters the flow-row
//! coefficients, so it shows up both in F2 (through theta differences) and
//! in the theta stationarity rows (through lambda_pf).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dcopf::{build_dcopf, DcIndexMap, DcParams, DcSolution};
use crate::grid::GridCase;
use crate::lp::check_kkt;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("solution residual {0:.3e} too large for eps_active {1:.3e}")]
    NotOptimal(f64, f64),
    #[error("KKT Jacobian factorization failed (condition estimate {0:.3e})")]
    Factorization(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Dc(#[from] crate::dcopf::DcError),
}

/// Loss gradient with respect to the adjustable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub d_gs: Vec<f64>,
    pub d_b: Vec<f64>,
}

impl ParamGradient {
    pub fn zeros(n_bus: usize, n_branch: usize) -> Self {
        ParamGradient {
            d_gs: vec![0.0; n_bus],
            d_b: vec![0.0; n_branch],
        }
    }
}

/// Directional derivative of the primal solution.
#[derive(Debug, Clone)]
pub struct PrimalDirection {
    pub d_pg: Vec<f64>,
    pub d_pf: Vec<f64>,
    pub d_va: Vec<f64>,
    pub d_phi: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BoundSide {
    Lower,
    Upper,
}

/// Factorized reduced KKT Jacobian at a DC-OPF solution.
pub struct KktLinearization {
    idx: DcIndexMap,
    n: usize,
    m: usize,
    active: Vec<(usize, BoundSide)>,
    jac: DMatrix<f64>,
    /// d F / d (gs, b), dense (n+m+k) x (n_bus + n_branch)
    dfdp: DMatrix<f64>,
    regularized: bool,
}

pub const DEFAULT_EPS_ACTIVE: f64 = 1e-6;
const TIKHONOV: f64 = 1e-8;

pub fn linearize_kkt(
    case: &GridCase,
    params: &DcParams,
    pd: &[f64],
    sol: &DcSolution,
    eps_active: f64,
) -> Result<KktLinearization, DiffError> {
    let (lp, idx) = build_dcopf(case, params, pd)?;
    let report = check_kkt(&lp, &sol.lp_solution, eps_active);
    // dual quantities (and hence complementarity products) scale with the
    // cost vector, so judge the residual relative to it
    let cost_scale = 1.0 + lp.c.amax();
    if report.max() > eps_active / 10.0 * cost_scale {
        return Err(DiffError::NotOptimal(report.max(), eps_active));
    }
    let n = idx.n_vars;
    let m = idx.n_rows;
    let x = &sol.lp_solution.x;

    let mut active = Vec::new();
    for j in 0..n {
        let lo_act = lp.lb[j].is_finite() && x[j] - lp.lb[j] <= eps_active;
        let hi_act = lp.ub[j].is_finite() && lp.ub[j] - x[j] <= eps_active;
        // a bound interval collapsed to a point contributes one row
        if lo_act {
            active.push((j, BoundSide::Lower));
        } else if hi_act {
            active.push((j, BoundSide::Upper));
        }
    }
    let k = active.len();
    let dim = n + m + k;

    let mut jac = DMatrix::zeros(dim, dim);
    for i in 0..m {
        for j in 0..n {
            let v = lp.a_eq[(i, j)];
            if v != 0.0 {
                jac[(j, n + i)] = -v; // -A' in stationarity
                jac[(n + i, j)] = v; // A in equality rows
            }
        }
    }
    for (a, &(j, side)) in active.iter().enumerate() {
        let s = match side {
            BoundSide::Lower => -1.0,
            BoundSide::Upper => 1.0,
        };
        jac[(j, n + m + a)] = s;
        jac[(n + m + a, j)] = 1.0;
    }

    let n_bus = idx.n_bus;
    let n_branch = idx.n_branch;
    let mut dfdp = DMatrix::zeros(dim, n_bus + n_branch);
    for i in 0..n_bus {
        // balance rhs carries +gs_i, F2 = A x - rhs
        dfdp[(n + idx.row_balance + i, i)] = -1.0;
    }
    for (e, br) in case.branches.iter().enumerate() {
        let col = n_bus + e;
        let dva = x[idx.va + br.from] - x[idx.va + br.to];
        dfdp[(n + idx.row_flow + e, col)] = dva;
        let lam = sol.lp_solution.lambda_eq[idx.row_flow + e];
        // stationarity rows of theta_from / theta_to
        dfdp[(idx.va + br.from, col)] -= lam;
        dfdp[(idx.va + br.to, col)] += lam;
    }

    // Probe factorization; fall back to Tikhonov when singular to working
    // precision.
    let mut regularized = false;
    let probe = DVector::from_element(dim, 1.0);
    let ok = match jac.clone().lu().solve(&probe) {
        Some(u) => {
            let res = (&jac * &u - &probe).amax();
            res.is_finite() && res <= 1e-6 * (1.0 + u.amax())
        }
        None => false,
    };
    let jac = if ok {
        jac
    } else {
        regularized = true;
        let mut j2 = jac;
        for d in 0..dim {
            j2[(d, d)] += TIKHONOV;
        }
        j2
    };

    Ok(KktLinearization {
        idx,
        n,
        m,
        active,
        jac,
        dfdp,
        regularized,
    })
}

impl KktLinearization {
    /// True when the reduced system needed Tikhonov regularization
    /// (degenerate active set); gradients are then approximate.
    pub fn regularized(&self) -> bool {
        self.regularized
    }

    pub fn active_set_size(&self) -> usize {
        self.active.len()
    }

    pub fn is_bound_active(&self, var: usize) -> bool {
        self.active.iter().any(|&(j, _)| j == var)
    }

    pub fn index_map(&self) -> &DcIndexMap {
        &self.idx
    }

    fn solve(&self, rhs: &DVector<f64>, transpose: bool) -> Result<DVector<f64>, DiffError> {
        let sys = if transpose {
            self.jac.transpose()
        } else {
            self.jac.clone()
        };
        match sys.clone().lu().solve(rhs) {
            Some(u) => {
                let res = (&sys * &u - rhs).amax();
                if res.is_finite() && res <= 1e-6 * (1.0 + u.amax()) {
                    Ok(u)
                } else {
                    // least-squares fallback for near-singular systems
                    sys.svd(true, true)
                        .solve(rhs, 1e-10)
                        .map_err(|_| DiffError::Factorization(f64::INFINITY))
                }
            }
            None => sys
                .svd(true, true)
                .solve(rhs, 1e-10)
                .map_err(|_| DiffError::Factorization(f64::INFINITY)),
        }
    }

    /// Pulls a loss gradient on the primal blocks (pg, pf, va) back to the
    /// parameters: dL/dphi = -(dF/dphi)' (dF/dx)^-T dL/dx.
    pub fn adjoint_gradient(
        &self,
        dl_pg: &[f64],
        dl_pf: &[f64],
        dl_va: &[f64],
    ) -> Result<ParamGradient, DiffError> {
        let idx = &self.idx;
        if dl_pg.len() != idx.n_gen || dl_pf.len() != idx.n_branch || dl_va.len() != idx.n_bus {
            return Err(DiffError::Dimension("cotangent blocks".into()));
        }
        let dim = self.n + self.m + self.active.len();
        let mut rhs = DVector::zeros(dim);
        for (g, v) in dl_pg.iter().enumerate() {
            rhs[idx.pg + g] = *v;
        }
        for (e, v) in dl_pf.iter().enumerate() {
            rhs[idx.pf + e] = *v;
        }
        for (i, v) in dl_va.iter().enumerate() {
            rhs[idx.va + i] = *v;
        }
        let w = self.solve(&rhs, true)?;
        let g = -(self.dfdp.transpose() * w);
        Ok(ParamGradient {
            d_gs: g.rows(0, idx.n_bus).iter().copied().collect(),
            d_b: g.rows(idx.n_bus, idx.n_branch).iter().copied().collect(),
        })
    }

    /// Directional derivative of the primal solution along `d_params`.
    pub fn forward_sensitivity(&self, d_params: &ParamGradient) -> Result<PrimalDirection, DiffError> {
        let idx = &self.idx;
        if d_params.d_gs.len() != idx.n_bus || d_params.d_b.len() != idx.n_branch {
            return Err(DiffError::Dimension("direction blocks".into()));
        }
        let d = DVector::from_iterator(
            idx.n_bus + idx.n_branch,
            d_params.d_gs.iter().chain(d_params.d_b.iter()).copied(),
        );
        let rhs = -(&self.dfdp * d);
        let u = self.solve(&rhs, false)?;
        let grab = |off: usize, len: usize| u.rows(off, len).iter().copied().collect();
        Ok(PrimalDirection {
            d_pg: grab(idx.pg, idx.n_gen),
            d_pf: grab(idx.pf, idx.n_branch),
            d_va: grab(idx.va, idx.n_bus),
            d_phi: grab(idx.phi, idx.n_bus),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dcopf::{reference_pd, solve_dcopf};
    use crate::testing::{random_case, two_bus_case};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn two_bus_lin() -> (crate::grid::GridCase, DcParams, DcSolution, KktLinearization) {
        let case = two_bus_case();
        let params = DcParams::nominal(&case);
        let sol = solve_dcopf(&case, &params, &[1.0], 1e-9).unwrap();
        let lin = linearize_kkt(&case, &params, &[1.0], &sol, 1e-6).unwrap();
        (case, params, sol, lin)
    }

    #[test]
    fn interior_solution_has_only_phi_bounds_active() {
        let (_case, _params, sol, lin) = two_bus_lin();
        let idx = *lin.index_map();
        // pg interior, pf interior, t interior; phi at its zero lower bound
        assert!(!lin.is_bound_active(idx.pg));
        assert!(!lin.is_bound_active(idx.pf));
        assert!(!lin.is_bound_active(idx.t));
        assert!(lin.is_bound_active(idx.phi));
        assert!(lin.is_bound_active(idx.phi + 1));
        assert!(!lin.regularized());
        assert!(sol.total_shed() < 1e-8);
    }

    #[test]
    fn binding_pg_bound_enters_active_set() {
        let mut case = two_bus_case();
        case.generators[0].pg_max = 0.6;
        let case = case.finalize().unwrap();
        let params = DcParams::nominal(&case);
        let sol = solve_dcopf(&case, &params, &[1.0], 1e-9).unwrap();
        let lin = linearize_kkt(&case, &params, &[1.0], &sol, 1e-6).unwrap();
        assert!(lin.is_bound_active(lin.index_map().pg));
    }

    #[test]
    fn degenerate_tie_regularizes_without_failure() {
        // two identical generators at the same bus: dispatch split is degenerate
        let mut case = two_bus_case();
        case.generators.push(case.generators[0].clone());
        let case = case.finalize().unwrap();
        let params = DcParams::nominal(&case);
        let sol = solve_dcopf(&case, &params, &[1.0], 1e-9).unwrap();
        let lin = linearize_kkt(&case, &params, &[1.0], &sol, 1e-6).unwrap();
        let g = lin.adjoint_gradient(&[1.0, 1.0], &[0.0], &[0.0, 0.0]).unwrap();
        assert!(g.d_gs.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn adjoint_gs_on_two_bus() {
        let (_c, _p, _s, lin) = two_bus_lin();
        // L = pg: balance at bus 0 gives pg = pf + gs0, pf pinned by bus 1
        let g = lin.adjoint_gradient(&[1.0], &[0.0], &[0.0, 0.0]).unwrap();
        assert_relative_eq!(g.d_gs[0], 1.0, epsilon = 1e-7);
        assert_relative_eq!(g.d_gs[1], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn adjoint_b_on_two_bus() {
        let (_c, _p, _s, lin) = two_bus_lin();
        // L = va[1]: theta1 = pf/b  =>  d theta1 / d b = -pf/b^2 = -0.01
        let g = lin.adjoint_gradient(&[0.0], &[0.0], &[0.0, 1.0]).unwrap();
        assert_relative_eq!(g.d_b[0], -0.01, epsilon = 1e-8);
    }

    #[test]
    fn zero_cotangent_zero_gradient() {
        let (_c, _p, _s, lin) = two_bus_lin();
        let g = lin.adjoint_gradient(&[0.0], &[0.0], &[0.0, 0.0]).unwrap();
        assert!(g.d_gs.iter().chain(g.d_b.iter()).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn forward_unit_directions_on_two_bus() {
        let (_c, _p, _s, lin) = two_bus_lin();
        let mut d = ParamGradient::zeros(2, 1);
        d.d_gs[0] = 1.0;
        let s = lin.forward_sensitivity(&d).unwrap();
        assert_relative_eq!(s.d_pg[0], 1.0, epsilon = 1e-8);
        assert!(s.d_pf[0].abs() < 1e-8);

        let mut d = ParamGradient::zeros(2, 1);
        d.d_b[0] = 1.0;
        let s = lin.forward_sensitivity(&d).unwrap();
        assert_relative_eq!(s.d_va[1], -0.01, epsilon = 1e-8);
    }

    #[test]
    fn adjoint_forward_transpose_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for k in 0..20 {
            let case = random_case(&mut rng, 3 + k % 10, true);
            let params = DcParams::nominal(&case);
            let pd = reference_pd(&case);
            let sol = solve_dcopf(&case, &params, &pd, 1e-9).unwrap();
            let lin = linearize_kkt(&case, &params, &pd, &sol, 1e-6).unwrap();
            let idx = *lin.index_map();
            let dl_pg: Vec<f64> = (0..idx.n_gen).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dl_pf: Vec<f64> = (0..idx.n_branch).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dl_va: Vec<f64> = (0..idx.n_bus).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dir = ParamGradient {
                d_gs: (0..idx.n_bus).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                d_b: (0..idx.n_branch).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            };
            let fwd = lin.forward_sensitivity(&dir).unwrap();
            let adj = lin.adjoint_gradient(&dl_pg, &dl_pf, &dl_va).unwrap();
            let lhs: f64 = dl_pg.iter().zip(&fwd.d_pg).map(|(a, b)| a * b).sum::<f64>()
                + dl_pf.iter().zip(&fwd.d_pf).map(|(a, b)| a * b).sum::<f64>()
                + dl_va.iter().zip(&fwd.d_va).map(|(a, b)| a * b).sum::<f64>();
            let rhs: f64 = adj.d_gs.iter().zip(&dir.d_gs).map(|(a, b)| a * b).sum::<f64>()
                + adj.d_b.iter().zip(&dir.d_b).map(|(a, b)| a * b).sum::<f64>();
            assert!(
                (lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()),
                "case {k}: {lhs} vs {rhs}"
            );
        }
    }

    /// Central finite differences of solve_dcopf, valid when the active set
    /// does not change between the two evaluations.
    fn fd_direction(
        case: &crate::grid::GridCase,
        params: &DcParams,
        pd: &[f64],
        dir: &ParamGradient,
        h: f64,
    ) -> (PrimalDirection, DcSolution, DcSolution) {
        let shift = |sign: f64| {
            let mut p = params.clone();
            for (g, d) in p.gs.iter_mut().zip(&dir.d_gs) {
                *g += sign * h * d;
            }
            for (b, d) in p.b.iter_mut().zip(&dir.d_b) {
                *b += sign * h * d;
            }
            solve_dcopf(case, &p, pd, 1e-10).unwrap()
        };
        let plus = shift(1.0);
        let minus = shift(-1.0);
        let diff = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(p, m)| (p - m) / (2.0 * h))
                .collect::<Vec<f64>>()
        };
        (
            PrimalDirection {
                d_pg: diff(&plus.pg, &minus.pg),
                d_pf: diff(&plus.pf, &minus.pf),
                d_va: diff(&plus.va, &minus.va),
                d_phi: diff(&plus.phi, &minus.phi),
            },
            plus,
            minus,
        )
    }

    fn same_active_set(a: &DcSolution, b: &DcSolution, case: &crate::grid::GridCase) -> bool {
        let eps = 1e-6;
        for (g, gen) in case.generators.iter().enumerate() {
            if ((a.pg[g] - gen.pg_min).abs() <= eps) != ((b.pg[g] - gen.pg_min).abs() <= eps) {
                return false;
            }
            if ((gen.pg_max - a.pg[g]).abs() <= eps) != ((gen.pg_max - b.pg[g]).abs() <= eps) {
                return false;
            }
        }
        for (e, br) in case.branches.iter().enumerate() {
            if ((a.pf[e].abs() - br.s_max).abs() <= eps) != ((b.pf[e].abs() - br.s_max).abs() <= eps)
            {
                return false;
            }
        }
        true
    }

    #[test]
    fn forward_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let mut checked = 0;
        let mut tried = 0;
        while checked < 15 && tried < 60 {
            tried += 1;
            let case = random_case(&mut rng, 3 + tried % 8, true);
            let params = DcParams::nominal(&case);
            let pd = reference_pd(&case);
            let sol = solve_dcopf(&case, &params, &pd, 1e-10).unwrap();
            let lin = linearize_kkt(&case, &params, &pd, &sol, 1e-6).unwrap();
            if lin.regularized() {
                continue;
            }
            let idx = *lin.index_map();
            let dir = ParamGradient {
                d_gs: (0..idx.n_bus).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                d_b: (0..idx.n_branch).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            };
            let h = 1e-5;
            let (fd, plus, minus) = fd_direction(&case, &params, &pd, &dir, h);
            if !same_active_set(&plus, &minus, &case) {
                continue;
            }
            let fwd = lin.forward_sensitivity(&dir).unwrap();
            for (name, got, want) in [
                ("pg", &fwd.d_pg, &fd.d_pg),
                ("pf", &fwd.d_pf, &fd.d_pf),
                ("va", &fwd.d_va, &fd.d_va),
            ] {
                let scale = want.iter().fold(1.0f64, |a, v| a.max(v.abs()));
                for (g, w) in got.iter().zip(want) {
                    assert!(
                        (g - w).abs() <= 1e-4 * scale,
                        "instance {tried} block {name}: {g} vs {w}"
                    );
                }
            }
            checked += 1;
        }
        assert!(checked >= 10, "only {checked} usable instances");
    }

    #[test]
    fn shed_gradient_zero_when_inactive() {
        let (_c, _p, sol, lin) = two_bus_lin();
        assert!(sol.total_shed() < 1e-8);
        let mut d = ParamGradient::zeros(2, 1);
        d.d_gs[1] = 1.0;
        let s = lin.forward_sensitivity(&d).unwrap();
        assert!(s.d_phi.iter().all(|v| v.abs() < 1e-8));
    }
}
