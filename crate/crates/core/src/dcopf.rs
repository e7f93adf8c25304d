//! DC-OPF as a standard-form LP over a `GridCase` and adjustable parameters
//! (nodal shunt conductances, branch susceptances), with the solution and
//! duals mapped back to grid elements.
//!
//! Variable layout: (pg, pf, va, phi, t) where phi is per-bus load shedding
//! and t_e = va_i - va_j is a bounded slack carrying the angle-difference
//! limits (its bound multipliers are the Δθ multipliers). Row layout:
//! per-bus balance, per-branch flow, per-branch angle link, reference-bus
//! fixing (kept as a row so its multiplier is available for implicit
//! differentiation).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::grid::GridCase;
use crate::lp::{self, LinearProgram, LpSolution, LpStatus};

#[derive(Debug, Error)]
pub enum DcError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("LP terminated with status {0:?} (shedding should keep DC-OPF feasible)")]
    NotOptimal(LpStatus),
    #[error(transparent)]
    Lp(#[from] lp::LpError),
}

/// Adjustable DC-OPF problem data.
#[derive(Debug, Clone, PartialEq)]
pub struct DcParams {
    pub gs: Vec<f64>,
    pub b: Vec<f64>,
}

impl DcParams {
    pub fn nominal(case: &GridCase) -> Self {
        DcParams {
            gs: case.nominal_gs(),
            b: case.nominal_b(),
        }
    }

    pub fn check(&self, case: &GridCase) -> Result<(), DcError> {
        if self.gs.len() != case.buses.len() || self.b.len() != case.branches.len() {
            return Err(DcError::Dimension(format!(
                "params gs={} b={} vs case buses={} branches={}",
                self.gs.len(),
                self.b.len(),
                case.buses.len(),
                case.branches.len()
            )));
        }
        if self.gs.iter().chain(self.b.iter()).any(|v| !v.is_finite()) {
            return Err(DcError::Dimension("non-finite parameter".into()));
        }
        if self.b.iter().any(|&v| v == 0.0) {
            return Err(DcError::Dimension("zero branch susceptance".into()));
        }
        Ok(())
    }
}

/// Offsets of the variable and row blocks inside the LP.
#[derive(Debug, Clone, Copy)]
pub struct DcIndexMap {
    pub n_gen: usize,
    pub n_branch: usize,
    pub n_bus: usize,
    pub pg: usize,
    pub pf: usize,
    pub va: usize,
    pub phi: usize,
    pub t: usize,
    pub n_vars: usize,
    pub row_balance: usize,
    pub row_flow: usize,
    pub row_link: usize,
    pub row_ref: usize,
    pub n_rows: usize,
}

impl DcIndexMap {
    fn new(case: &GridCase) -> Self {
        let (ng, ne, nn) = (
            case.generators.len(),
            case.branches.len(),
            case.buses.len(),
        );
        DcIndexMap {
            n_gen: ng,
            n_branch: ne,
            n_bus: nn,
            pg: 0,
            pf: ng,
            va: ng + ne,
            phi: ng + ne + nn,
            t: ng + ne + 2 * nn,
            n_vars: ng + 2 * ne + 2 * nn,
            row_balance: 0,
            row_flow: nn,
            row_link: nn + ne,
            row_ref: nn + 2 * ne,
            n_rows: nn + 2 * ne + 1,
        }
    }
}

/// DC-OPF primal and dual solution mapped to grid elements.
#[derive(Debug, Clone)]
pub struct DcSolution {
    pub pg: Vec<f64>,
    pub pf: Vec<f64>,
    pub va: Vec<f64>,
    pub phi: Vec<f64>,
    pub lambda_p: Vec<f64>,
    pub lambda_pf: Vec<f64>,
    pub mu_theta_lo: Vec<f64>,
    pub mu_theta_hi: Vec<f64>,
    pub mu_pg_lo: Vec<f64>,
    pub mu_pg_hi: Vec<f64>,
    pub mu_pf_lo: Vec<f64>,
    pub mu_pf_hi: Vec<f64>,
    pub objective: f64,
    /// Raw LP backing (needed for KKT checks and implicit differentiation).
    pub lp_solution: LpSolution,
}

impl DcSolution {
    pub fn total_shed(&self) -> f64 {
        self.phi.iter().sum()
    }
}

/// Builds the DC-OPF LP. `pd` is the per-load active demand (per-unit),
/// usually the reference loads or a sampled scenario.
pub fn build_dcopf(
    case: &GridCase,
    params: &DcParams,
    pd: &[f64],
) -> Result<(LinearProgram, DcIndexMap), DcError> {
    params.check(case)?;
    if pd.len() != case.loads.len() {
        return Err(DcError::Dimension(format!(
            "pd has {} entries for {} loads",
            pd.len(),
            case.loads.len()
        )));
    }
    let idx = DcIndexMap::new(case);
    let inf = f64::INFINITY;

    let mut c = DVector::zeros(idx.n_vars);
    let mut lb = DVector::from_element(idx.n_vars, -inf);
    let mut ub = DVector::from_element(idx.n_vars, inf);
    for (g, gen) in case.generators.iter().enumerate() {
        c[idx.pg + g] = gen.cost;
        lb[idx.pg + g] = gen.pg_min;
        ub[idx.pg + g] = gen.pg_max;
    }
    for (e, br) in case.branches.iter().enumerate() {
        lb[idx.pf + e] = -br.s_max;
        ub[idx.pf + e] = br.s_max;
        lb[idx.t + e] = br.dva_min;
        ub[idx.t + e] = br.dva_max;
    }
    for i in 0..idx.n_bus {
        c[idx.phi + i] = case.shed_cost;
        lb[idx.phi + i] = 0.0;
    }

    let mut a = DMatrix::zeros(idx.n_rows, idx.n_vars);
    let mut b = DVector::zeros(idx.n_rows);
    for (g, gen) in case.generators.iter().enumerate() {
        a[(idx.row_balance + gen.bus, idx.pg + g)] = 1.0;
    }
    for (e, br) in case.branches.iter().enumerate() {
        a[(idx.row_balance + br.from, idx.pf + e)] = -1.0;
        a[(idx.row_balance + br.to, idx.pf + e)] = 1.0;
    }
    for i in 0..idx.n_bus {
        a[(idx.row_balance + i, idx.phi + i)] = 1.0;
        b[idx.row_balance + i] = params.gs[i];
    }
    for (l, load) in case.loads.iter().enumerate() {
        b[idx.row_balance + load.bus] += pd[l];
    }
    for (e, br) in case.branches.iter().enumerate() {
        // pf_e + b_e (va_i - va_j) = 0
        a[(idx.row_flow + e, idx.pf + e)] = 1.0;
        a[(idx.row_flow + e, idx.va + br.from)] = params.b[e];
        a[(idx.row_flow + e, idx.va + br.to)] = -params.b[e];
        // va_i - va_j - t_e = 0
        a[(idx.row_link + e, idx.va + br.from)] = 1.0;
        a[(idx.row_link + e, idx.va + br.to)] = -1.0;
        a[(idx.row_link + e, idx.t + e)] = -1.0;
    }
    a[(idx.row_ref, idx.va + case.ref_bus)] = 1.0;

    Ok((
        LinearProgram {
            c,
            a_eq: a,
            b_eq: b,
            lb,
            ub,
        },
        idx,
    ))
}

fn slice(v: &DVector<f64>, off: usize, len: usize) -> Vec<f64> {
    v.rows(off, len).iter().copied().collect()
}

/// Pulls an optimal LP solution back through the index map.
pub fn map_solution(idx: &DcIndexMap, sol: LpSolution) -> DcSolution {
    DcSolution {
        pg: slice(&sol.x, idx.pg, idx.n_gen),
        pf: slice(&sol.x, idx.pf, idx.n_branch),
        va: slice(&sol.x, idx.va, idx.n_bus),
        phi: slice(&sol.x, idx.phi, idx.n_bus),
        lambda_p: slice(&sol.lambda_eq, idx.row_balance, idx.n_bus),
        lambda_pf: slice(&sol.lambda_eq, idx.row_flow, idx.n_branch),
        mu_theta_lo: slice(&sol.mu_lo, idx.t, idx.n_branch),
        mu_theta_hi: slice(&sol.mu_hi, idx.t, idx.n_branch),
        mu_pg_lo: slice(&sol.mu_lo, idx.pg, idx.n_gen),
        mu_pg_hi: slice(&sol.mu_hi, idx.pg, idx.n_gen),
        mu_pf_lo: slice(&sol.mu_lo, idx.pf, idx.n_branch),
        mu_pf_hi: slice(&sol.mu_hi, idx.pf, idx.n_branch),
        objective: sol.objective,
        lp_solution: sol,
    }
}

pub fn solve_dcopf(
    case: &GridCase,
    params: &DcParams,
    pd: &[f64],
    tol: f64,
) -> Result<DcSolution, DcError> {
    let (lp, idx) = build_dcopf(case, params, pd)?;
    let sol = lp::solve_lp(&lp, tol)?;
    if sol.status != LpStatus::Optimal {
        return Err(DcError::NotOptimal(sol.status));
    }
    Ok(map_solution(&idx, sol))
}

/// Dual objective of the built LP (strong duality: equals the primal
/// objective at the optimum).
pub fn dual_objective(
    case: &GridCase,
    params: &DcParams,
    pd: &[f64],
    sol: &DcSolution,
) -> Result<f64, DcError> {
    let (lp, _) = build_dcopf(case, params, pd)?;
    Ok(lp::dual_objective(&lp, &sol.lp_solution))
}

/// Reference demands of the case, in load order.
pub fn reference_pd(case: &GridCase) -> Vec<f64> {
    case.loads.iter().map(|l| l.pd_ref).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::check_kkt;
    use crate::testing::{random_case, two_bus_case, vertex_enumeration};
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    #[test]
    fn construction_census_two_bus() {
        let case = two_bus_case();
        let params = DcParams::nominal(&case);
        let (lp, idx) = build_dcopf(&case, &params, &reference_pd(&case)).unwrap();
        // pg, pf, va(2), phi(2), t
        assert_eq!(lp.n(), 7);
        assert_eq!(idx.n_vars, 7);
        // 2 balance + 1 flow + 1 angle link + ref fixing
        assert_eq!(lp.m(), 5);
        assert_relative_eq!(lp.a_eq[(idx.row_ref, idx.va)], 1.0);
    }

    #[test]
    fn gs_enters_balance_rhs() {
        let case = two_bus_case();
        let mut params = DcParams::nominal(&case);
        let (lp0, idx) = build_dcopf(&case, &params, &reference_pd(&case)).unwrap();
        params.gs[0] = 0.05;
        let (lp1, _) = build_dcopf(&case, &params, &reference_pd(&case)).unwrap();
        assert_relative_eq!(
            lp1.b_eq[idx.row_balance] - lp0.b_eq[idx.row_balance],
            0.05
        );
    }

    #[test]
    fn b_scales_flow_row_coefficients() {
        let case = two_bus_case();
        let mut params = DcParams::nominal(&case);
        let (lp0, idx) = build_dcopf(&case, &params, &reference_pd(&case)).unwrap();
        params.b[0] *= 2.0;
        let (lp1, _) = build_dcopf(&case, &params, &reference_pd(&case)).unwrap();
        assert_relative_eq!(
            lp1.a_eq[(idx.row_flow, idx.va)],
            2.0 * lp0.a_eq[(idx.row_flow, idx.va)]
        );
        assert_relative_eq!(
            lp1.a_eq[(idx.row_flow, idx.va + 1)],
            2.0 * lp0.a_eq[(idx.row_flow, idx.va + 1)]
        );
    }

    #[test]
    fn two_bus_hand_solution() {
        let case = two_bus_case();
        let params = DcParams::nominal(&case);
        let sol = solve_dcopf(&case, &params, &[1.0], 1e-9).unwrap();
        assert_relative_eq!(sol.pg[0], 1.0, epsilon = 1e-7);
        assert_relative_eq!(sol.pf[0], 1.0, epsilon = 1e-7);
        assert_relative_eq!(sol.va[0], 0.0, epsilon = 1e-8);
        // pf = -b (va0 - va1) with b = -10  =>  va1 = -0.1
        assert_relative_eq!(sol.va[1], -0.1, epsilon = 1e-7);
        assert!(sol.total_shed() < 1e-7);
        assert_relative_eq!(sol.objective, 1.0, epsilon = 1e-7);
    }

    #[test]
    fn two_bus_matches_vertex_oracle() {
        let case = two_bus_case();
        let params = DcParams::nominal(&case);
        let (lp, _) = build_dcopf(&case, &params, &[1.0]).unwrap();
        let oracle = vertex_enumeration(&lp).unwrap();
        assert_relative_eq!(oracle, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_load_zero_flow() {
        let case = two_bus_case();
        let params = DcParams::nominal(&case);
        let sol = solve_dcopf(&case, &params, &[0.0], 1e-9).unwrap();
        assert!(sol.pg[0].abs() < 1e-7);
        assert!(sol.pf[0].abs() < 1e-7);
        assert!(sol.va[1].abs() < 1e-7);
    }

    #[test]
    fn shedding_when_capacity_short() {
        let mut case = two_bus_case();
        case.generators[0].pg_max = 0.6;
        let case = case.finalize().unwrap();
        let params = DcParams::nominal(&case);
        let sol = solve_dcopf(&case, &params, &[1.0], 1e-9).unwrap();
        // With uniform shed cost and no congestion the split of phi across
        // buses is degenerate; total shed and objective are determined.
        assert_relative_eq!(sol.total_shed(), 0.4, epsilon = 1e-6);
        assert_relative_eq!(sol.objective, 0.6 * 1.0 + 0.4 * 100.0, epsilon = 1e-5);
    }

    #[test]
    fn strong_duality_and_marginal_price() {
        let case = two_bus_case();
        let params = DcParams::nominal(&case);
        let pd = [1.0];
        let sol = solve_dcopf(&case, &params, &pd, 1e-9).unwrap();
        let dual = dual_objective(&case, &params, &pd, &sol).unwrap();
        assert_relative_eq!(dual, sol.objective, epsilon = 1e-7);
        // interior generator: lambda_p at its bus equals its cost
        assert_relative_eq!(sol.lambda_p[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn random_cases_balance_flow_kkt() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for k in 0..20 {
            let case = random_case(&mut rng, 2 + k % 12, k % 2 == 0);
            let params = DcParams::nominal(&case);
            let pd = reference_pd(&case);
            let (lp, idx) = build_dcopf(&case, &params, &pd).unwrap();
            let sol = solve_dcopf(&case, &params, &pd, 1e-8).unwrap();
            assert!(check_kkt(&lp, &sol.lp_solution, 1e-6).pass(1e-6), "case {k}");
            // nodal balance
            for i in 0..idx.n_bus {
                let mut acc = sol.phi[i] - params.gs[i];
                for (g, gen) in case.generators.iter().enumerate() {
                    if gen.bus == i {
                        acc += sol.pg[g];
                    }
                }
                for (e, br) in case.branches.iter().enumerate() {
                    if br.from == i {
                        acc -= sol.pf[e];
                    }
                    if br.to == i {
                        acc += sol.pf[e];
                    }
                }
                for (l, load) in case.loads.iter().enumerate() {
                    if load.bus == i {
                        acc -= pd[l];
                    }
                }
                assert!(acc.abs() < 1e-6, "case {k} bus {i}: imbalance {acc}");
            }
            // flow consistency
            for (e, br) in case.branches.iter().enumerate() {
                let res = sol.pf[e] + params.b[e] * (sol.va[br.from] - sol.va[br.to]);
                assert!(res.abs() < 1e-6, "case {k} branch {e}: {res}");
            }
            let dual = dual_objective(&case, &params, &pd, &sol).unwrap();
            assert!((dual - sol.objective).abs() <= 1e-6 * (1.0 + sol.objective.abs()));
        }
    }

    #[test]
    fn objective_monotone_in_demand() {
        let case = two_bus_case();
        let params = DcParams::nominal(&case);
        let mut last = f64::NEG_INFINITY;
        for pd in [0.2, 0.5, 0.8, 1.1, 1.4] {
            let sol = solve_dcopf(&case, &params, &[pd], 1e-9).unwrap();
            assert!(sol.objective >= last - 1e-9);
            last = sol.objective;
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let case = two_bus_case();
        let params = DcParams {
            gs: vec![0.0],
            b: vec![-10.0],
        };
        assert!(build_dcopf(&case, &params, &[1.0]).is_err());
        let params = DcParams::nominal(&case);
        assert!(build_dcopf(&case, &params, &[1.0, 2.0]).is_err());
    }
}
