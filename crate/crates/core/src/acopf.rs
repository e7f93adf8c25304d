//! Desk-scale AC-OPF solver and Newton AC power flow.
//!
//! The power flow uses analytic Jacobians of the polar-coordinate mismatch
//! equations. The AC-OPF is a log-barrier interior-point method with slack
//! variables on all inequalities, Newton steps with a fraction-to-boundary
//! rule, and monotone barrier reduction; the Lagrangian Hessian is formed
//! by central differences of the analytic Lagrangian gradient.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::grid::GridCase;

#[derive(Debug, Error)]
pub enum AcError {
    #[error("power flow did not converge after {iters} iterations (last mismatch {mismatch:.3e})")]
    PfDiverged { iters: usize, mismatch: f64 },
    #[error("AC-OPF did not converge (KKT residual {residual:.3e} after {iters} iterations)")]
    OpfDiverged { iters: usize, residual: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone)]
pub struct AcSolution {
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    pub pf: Vec<f64>,
    pub qf: Vec<f64>,
    pub pt: Vec<f64>,
    pub qt: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
}

/// Branch flows and net nodal injections (network plus shunt terms).
#[derive(Debug, Clone)]
pub struct AcFlows {
    pub pf: Vec<f64>,
    pub qf: Vec<f64>,
    pub pt: Vec<f64>,
    pub qt: Vec<f64>,
    /// sum of from/to active flows at each bus plus gs vm^2
    pub p_inj: Vec<f64>,
    /// sum of from/to reactive flows at each bus minus bs vm^2
    pub q_inj: Vec<f64>,
}

/// Per-branch flow values and partial derivatives with respect to
/// (vm_from, vm_to, delta = va_from - va_to).
#[derive(Debug, Clone, Copy, Default)]
struct BranchPartials {
    pf: f64,
    qf: f64,
    pt: f64,
    qt: f64,
    dpf: [f64; 3],
    dqf: [f64; 3],
    dpt: [f64; 3],
    dqt: [f64; 3],
}

fn branch_partials(case: &GridCase, vm: &[f64], va: &[f64]) -> Vec<BranchPartials> {
    case.branches
        .iter()
        .map(|br| {
            let (i, j) = (br.from, br.to);
            let (vi, vj) = (vm[i], vm[j]);
            let d = va[i] - va[j];
            let (sn, cs) = d.sin_cos();
            let p = &br.pi;
            let vv = vi * vj;
            let pf = p.gff * vi * vi + vv * (p.gft * cs + p.bft * sn);
            let qf = -p.bff * vi * vi + vv * (-p.bft * cs + p.gft * sn);
            let pt = p.gtt * vj * vj + vv * (p.gtf * cs - p.btf * sn);
            let qt = -p.btt * vj * vj - vv * (p.btf * cs + p.gtf * sn);
            BranchPartials {
                pf,
                qf,
                pt,
                qt,
                dpf: [
                    2.0 * p.gff * vi + vj * (p.gft * cs + p.bft * sn),
                    vi * (p.gft * cs + p.bft * sn),
                    vv * (-p.gft * sn + p.bft * cs),
                ],
                dqf: [
                    -2.0 * p.bff * vi + vj * (-p.bft * cs + p.gft * sn),
                    vi * (-p.bft * cs + p.gft * sn),
                    vv * (p.bft * sn + p.gft * cs),
                ],
                dpt: [
                    vj * (p.gtf * cs - p.btf * sn),
                    2.0 * p.gtt * vj + vi * (p.gtf * cs - p.btf * sn),
                    vv * (-p.gtf * sn - p.btf * cs),
                ],
                dqt: [
                    -vj * (p.btf * cs + p.gtf * sn),
                    -2.0 * p.btt * vj - vi * (p.btf * cs + p.gtf * sn),
                    vv * (p.btf * sn - p.gtf * cs),
                ],
            }
        })
        .collect()
}

/// Evaluates the AC branch-flow equations and net nodal injections at the
/// voltage profile (vm, va).
pub fn ac_flow_equations(case: &GridCase, vm: &[f64], va: &[f64]) -> AcFlows {
    let n = case.buses.len();
    let parts = branch_partials(case, vm, va);
    let mut flows = AcFlows {
        pf: Vec::with_capacity(parts.len()),
        qf: Vec::with_capacity(parts.len()),
        pt: Vec::with_capacity(parts.len()),
        qt: Vec::with_capacity(parts.len()),
        p_inj: vec![0.0; n],
        q_inj: vec![0.0; n],
    };
    for (br, p) in case.branches.iter().zip(&parts) {
        flows.pf.push(p.pf);
        flows.qf.push(p.qf);
        flows.pt.push(p.pt);
        flows.qt.push(p.qt);
        flows.p_inj[br.from] += p.pf;
        flows.q_inj[br.from] += p.qf;
        flows.p_inj[br.to] += p.pt;
        flows.q_inj[br.to] += p.qt;
    }
    for (i, bus) in case.buses.iter().enumerate() {
        flows.p_inj[i] += bus.gs * vm[i] * vm[i];
        flows.q_inj[i] -= bus.bs * vm[i] * vm[i];
    }
    flows
}

/// Generator setpoints for the power flow: active power and voltage
/// magnitude per generator. The slack (reference-bus) generator's pg is
/// recomputed from the flow solution.
#[derive(Debug, Clone)]
pub struct Dispatch {
    pub pg: Vec<f64>,
    pub vm: Vec<f64>,
}

pub const PF_MAX_ITER: usize = 100;

/// Newton-Raphson power flow. PV buses are buses with at least one
/// generator (other than the slack); remaining buses are PQ.
pub fn solve_ac_powerflow(
    case: &GridCase,
    dispatch: &Dispatch,
    pd: &[f64],
    qd: &[f64],
    tol: f64,
) -> Result<AcSolution, AcError> {
    let n = case.buses.len();
    let ng = case.generators.len();
    if dispatch.pg.len() != ng || dispatch.vm.len() != ng {
        return Err(AcError::Dimension("dispatch".into()));
    }
    if pd.len() != case.loads.len() || qd.len() != case.loads.len() {
        return Err(AcError::Dimension("loads".into()));
    }
    let slack = case.ref_bus;
    let mut is_gen_bus = vec![false; n];
    let mut vm = vec![1.0; n];
    for (g, gen) in case.generators.iter().enumerate() {
        is_gen_bus[gen.bus] = true;
        vm[gen.bus] = dispatch.vm[g];
    }
    if !is_gen_bus[slack] {
        return Err(AcError::Dimension("no generator at the reference bus".into()));
    }
    let mut p_spec = vec![0.0; n];
    let mut q_spec = vec![0.0; n];
    for (g, gen) in case.generators.iter().enumerate() {
        if gen.bus != slack {
            p_spec[gen.bus] += dispatch.pg[g];
        }
    }
    for (l, load) in case.loads.iter().enumerate() {
        p_spec[load.bus] -= pd[l];
        q_spec[load.bus] -= qd[l];
    }

    let pq: Vec<usize> = (0..n).filter(|&i| i != slack && !is_gen_bus[i]).collect();
    let non_slack: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let n_unknown = non_slack.len() + pq.len();
    // position of each bus in the unknown/mismatch vectors
    let mut va_pos = vec![usize::MAX; n];
    for (k, &i) in non_slack.iter().enumerate() {
        va_pos[i] = k;
    }
    let mut vm_pos = vec![usize::MAX; n];
    for (k, &i) in pq.iter().enumerate() {
        vm_pos[i] = non_slack.len() + k;
    }

    let mut va = vec![0.0; n];
    let mut mismatch_norm = f64::INFINITY;
    for _iter in 0..PF_MAX_ITER {
        let flows = ac_flow_equations(case, &vm, &va);
        let mut rhs = DVector::zeros(n_unknown);
        for &i in &non_slack {
            rhs[va_pos[i]] = p_spec[i] - flows.p_inj[i];
        }
        for &i in &pq {
            rhs[vm_pos[i]] = q_spec[i] - flows.q_inj[i];
        }
        mismatch_norm = rhs.amax();
        if mismatch_norm <= tol {
            return Ok(finish_powerflow(case, dispatch, pd, qd, vm, va, mismatch_norm));
        }
        let parts = branch_partials(case, &vm, &va);
        let mut jac = DMatrix::zeros(n_unknown, n_unknown);
        let mut add = |row: usize, col: usize, v: f64| {
            if row != usize::MAX && col != usize::MAX {
                jac[(row, col)] += v;
            }
        };
        for (br, p) in case.branches.iter().zip(&parts) {
            let (i, j) = (br.from, br.to);
            // P rows (mismatch = spec - inj, so derivative is -d inj)
            let pr_i = if i == slack { usize::MAX } else { va_pos[i] };
            let pr_j = if j == slack { usize::MAX } else { va_pos[j] };
            add(pr_i, va_pos[i], -p.dpf[2]);
            add(pr_i, va_pos[j], p.dpf[2]);
            add(pr_i, vm_pos[i], -p.dpf[0]);
            add(pr_i, vm_pos[j], -p.dpf[1]);
            add(pr_j, va_pos[i], -p.dpt[2]);
            add(pr_j, va_pos[j], p.dpt[2]);
            add(pr_j, vm_pos[i], -p.dpt[0]);
            add(pr_j, vm_pos[j], -p.dpt[1]);
            // Q rows, PQ buses only
            let qr_i = vm_pos[i];
            let qr_j = vm_pos[j];
            add(qr_i, va_pos[i], -p.dqf[2]);
            add(qr_i, va_pos[j], p.dqf[2]);
            add(qr_i, vm_pos[i], -p.dqf[0]);
            add(qr_i, vm_pos[j], -p.dqf[1]);
            add(qr_j, va_pos[i], -p.dqt[2]);
            add(qr_j, va_pos[j], p.dqt[2]);
            add(qr_j, vm_pos[i], -p.dqt[0]);
            add(qr_j, vm_pos[j], -p.dqt[1]);
        }
        for (i, bus) in case.buses.iter().enumerate() {
            let pr = if i == slack { usize::MAX } else { va_pos[i] };
            add(pr, vm_pos[i], -2.0 * bus.gs * vm[i]);
            add(vm_pos[i], vm_pos[i], 2.0 * bus.bs * vm[i]);
        }
        // jac holds d(mismatch)/dx, so the Newton step solves jac * step = -mismatch
        let step = jac.lu().solve(&(-&rhs)).ok_or(AcError::PfDiverged {
            iters: PF_MAX_ITER,
            mismatch: mismatch_norm,
        })?;
        if !step.iter().all(|v| v.is_finite()) {
            return Err(AcError::PfDiverged {
                iters: PF_MAX_ITER,
                mismatch: mismatch_norm,
            });
        }
        // damped update: halve the step until the mismatch shrinks
        let mut alpha = 1.0f64;
        loop {
            let mut vm_try = vm.clone();
            let mut va_try = va.clone();
            for &i in &non_slack {
                va_try[i] += alpha * step[va_pos[i]];
            }
            for &i in &pq {
                vm_try[i] += alpha * step[vm_pos[i]];
            }
            let flows = ac_flow_equations(case, &vm_try, &va_try);
            let mut m = 0.0f64;
            for &i in &non_slack {
                m = m.max((p_spec[i] - flows.p_inj[i]).abs());
            }
            for &i in &pq {
                m = m.max((q_spec[i] - flows.q_inj[i]).abs());
            }
            if m < mismatch_norm || alpha <= 1.0 / 64.0 {
                vm = vm_try;
                va = va_try;
                break;
            }
            alpha *= 0.5;
        }
    }
    Err(AcError::PfDiverged {
        iters: PF_MAX_ITER,
        mismatch: mismatch_norm,
    })
}

fn finish_powerflow(
    case: &GridCase,
    dispatch: &Dispatch,
    pd: &[f64],
    qd: &[f64],
    vm: Vec<f64>,
    va: Vec<f64>,
    mismatch: f64,
) -> AcSolution {
    let n = case.buses.len();
    let flows = ac_flow_equations(case, &vm, &va);
    let slack = case.ref_bus;
    let mut pd_bus = vec![0.0; n];
    let mut qd_bus = vec![0.0; n];
    for (l, load) in case.loads.iter().enumerate() {
        pd_bus[load.bus] += pd[l];
        qd_bus[load.bus] += qd[l];
    }
    let mut pg = dispatch.pg.clone();
    let mut qg = vec![0.0; case.generators.len()];
    // slack pg and per-gen-bus qg absorb the residual injection; imbalance
    // lands on the first generator at each bus
    let mut first_at_bus = vec![usize::MAX; n];
    for (g, gen) in case.generators.iter().enumerate() {
        if first_at_bus[gen.bus] == usize::MAX {
            first_at_bus[gen.bus] = g;
        }
    }
    for i in 0..n {
        let g = first_at_bus[i];
        if g == usize::MAX {
            continue;
        }
        let qg_total = flows.q_inj[i] + qd_bus[i];
        qg[g] = qg_total;
        if i == slack {
            let others: f64 = case
                .generators
                .iter()
                .enumerate()
                .filter(|(k, gen)| gen.bus == i && *k != g)
                .map(|(k, _)| dispatch.pg[k])
                .sum();
            pg[g] = flows.p_inj[i] + pd_bus[i] - others;
        }
    }
    let objective = case
        .generators
        .iter()
        .zip(&pg)
        .map(|(gen, p)| gen.cost * p)
        .sum();
    AcSolution {
        pg,
        qg,
        vm,
        va,
        pf: flows.pf,
        qf: flows.qf,
        pt: flows.pt,
        qt: flows.qt,
        objective,
        kkt_residual: mismatch,
    }
}

// ---------------------------------------------------------------------------
// AC-OPF interior point
// ---------------------------------------------------------------------------

/// One inequality constraint in c(z) <= 0 form.
#[derive(Debug, Clone, Copy)]
enum Ineq {
    VmLo(usize),
    VmHi(usize),
    PgLo(usize),
    PgHi(usize),
    QgLo(usize),
    QgHi(usize),
    DvaLo(usize),
    DvaHi(usize),
    ThermalFrom(usize),
    ThermalTo(usize),
}

/// Variable layout of the OPF: z = [vm (n), va (n), pg (ng), qg (ng)].
struct OpfLayout {
    n: usize,
    ng: usize,
}

impl OpfLayout {
    fn vm(&self, i: usize) -> usize {
        i
    }
    fn va(&self, i: usize) -> usize {
        self.n + i
    }
    fn pg(&self, g: usize) -> usize {
        2 * self.n + g
    }
    fn qg(&self, g: usize) -> usize {
        2 * self.n + self.ng + g
    }
    fn nz(&self) -> usize {
        2 * self.n + 2 * self.ng
    }
}

struct OpfProblem<'a> {
    case: &'a GridCase,
    pd_bus: Vec<f64>,
    qd_bus: Vec<f64>,
    layout: OpfLayout,
    ineqs: Vec<Ineq>,
}

impl<'a> OpfProblem<'a> {
    fn new(case: &'a GridCase, pd: &[f64], qd: &[f64]) -> Self {
        let n = case.buses.len();
        let mut pd_bus = vec![0.0; n];
        let mut qd_bus = vec![0.0; n];
        for (l, load) in case.loads.iter().enumerate() {
            pd_bus[load.bus] += pd[l];
            qd_bus[load.bus] += qd[l];
        }
        let mut ineqs = Vec::new();
        for i in 0..n {
            ineqs.push(Ineq::VmLo(i));
            ineqs.push(Ineq::VmHi(i));
        }
        for g in 0..case.generators.len() {
            ineqs.push(Ineq::PgLo(g));
            ineqs.push(Ineq::PgHi(g));
            ineqs.push(Ineq::QgLo(g));
            ineqs.push(Ineq::QgHi(g));
        }
        for e in 0..case.branches.len() {
            ineqs.push(Ineq::DvaLo(e));
            ineqs.push(Ineq::DvaHi(e));
            ineqs.push(Ineq::ThermalFrom(e));
            ineqs.push(Ineq::ThermalTo(e));
        }
        OpfProblem {
            case,
            pd_bus,
            qd_bus,
            layout: OpfLayout {
                n,
                ng: case.generators.len(),
            },
            ineqs,
        }
    }

    fn n_eq(&self) -> usize {
        2 * self.layout.n + 1
    }

    /// Equality residuals: P balance, Q balance, va_ref. Also returns the
    /// flows for reuse.
    fn eval_eq(&self, z: &DVector<f64>) -> (DVector<f64>, AcFlows) {
        let l = &self.layout;
        let vm: Vec<f64> = (0..l.n).map(|i| z[l.vm(i)]).collect();
        let va: Vec<f64> = (0..l.n).map(|i| z[l.va(i)]).collect();
        let flows = ac_flow_equations(self.case, &vm, &va);
        let mut r = DVector::zeros(self.n_eq());
        for i in 0..l.n {
            r[i] = -self.pd_bus[i] - flows.p_inj[i];
            r[l.n + i] = -self.qd_bus[i] - flows.q_inj[i];
        }
        for (g, gen) in self.case.generators.iter().enumerate() {
            r[gen.bus] += z[l.pg(g)];
            r[l.n + gen.bus] += z[l.qg(g)];
        }
        r[2 * l.n] = z[l.va(self.case.ref_bus)];
        (r, flows)
    }

    fn eq_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let l = &self.layout;
        let vm: Vec<f64> = (0..l.n).map(|i| z[l.vm(i)]).collect();
        let va: Vec<f64> = (0..l.n).map(|i| z[l.va(i)]).collect();
        let parts = branch_partials(self.case, &vm, &va);
        let mut j = DMatrix::zeros(self.n_eq(), l.nz());
        for (br, p) in self.case.branches.iter().zip(&parts) {
            let (i, k) = (br.from, br.to);
            // P rows
            j[(i, l.vm(i))] -= p.dpf[0];
            j[(i, l.vm(k))] -= p.dpf[1];
            j[(i, l.va(i))] -= p.dpf[2];
            j[(i, l.va(k))] += p.dpf[2];
            j[(k, l.vm(i))] -= p.dpt[0];
            j[(k, l.vm(k))] -= p.dpt[1];
            j[(k, l.va(i))] -= p.dpt[2];
            j[(k, l.va(k))] += p.dpt[2];
            // Q rows
            j[(l.n + i, l.vm(i))] -= p.dqf[0];
            j[(l.n + i, l.vm(k))] -= p.dqf[1];
            j[(l.n + i, l.va(i))] -= p.dqf[2];
            j[(l.n + i, l.va(k))] += p.dqf[2];
            j[(l.n + k, l.vm(i))] -= p.dqt[0];
            j[(l.n + k, l.vm(k))] -= p.dqt[1];
            j[(l.n + k, l.va(i))] -= p.dqt[2];
            j[(l.n + k, l.va(k))] += p.dqt[2];
        }
        for (i, bus) in self.case.buses.iter().enumerate() {
            j[(i, l.vm(i))] -= 2.0 * bus.gs * vm[i];
            j[(l.n + i, l.vm(i))] += 2.0 * bus.bs * vm[i];
        }
        for (g, gen) in self.case.generators.iter().enumerate() {
            j[(gen.bus, l.pg(g))] = 1.0;
            j[(l.n + gen.bus, l.qg(g))] = 1.0;
        }
        j[(2 * l.n, l.va(self.case.ref_bus))] = 1.0;
        j
    }

    fn eval_ineq(&self, z: &DVector<f64>) -> DVector<f64> {
        let l = &self.layout;
        let vm: Vec<f64> = (0..l.n).map(|i| z[l.vm(i)]).collect();
        let va: Vec<f64> = (0..l.n).map(|i| z[l.va(i)]).collect();
        let flows = ac_flow_equations(self.case, &vm, &va);
        DVector::from_iterator(
            self.ineqs.len(),
            self.ineqs.iter().map(|c| match *c {
                Ineq::VmLo(i) => self.case.buses[i].vm_min - vm[i],
                Ineq::VmHi(i) => vm[i] - self.case.buses[i].vm_max,
                Ineq::PgLo(g) => self.case.generators[g].pg_min - z[l.pg(g)],
                Ineq::PgHi(g) => z[l.pg(g)] - self.case.generators[g].pg_max,
                Ineq::QgLo(g) => self.case.generators[g].qg_min - z[l.qg(g)],
                Ineq::QgHi(g) => z[l.qg(g)] - self.case.generators[g].qg_max,
                Ineq::DvaLo(e) => {
                    let br = &self.case.branches[e];
                    br.dva_min - (va[br.from] - va[br.to])
                }
                Ineq::DvaHi(e) => {
                    let br = &self.case.branches[e];
                    (va[br.from] - va[br.to]) - br.dva_max
                }
                Ineq::ThermalFrom(e) => {
                    let s = self.case.branches[e].s_max;
                    flows.pf[e] * flows.pf[e] + flows.qf[e] * flows.qf[e] - s * s
                }
                Ineq::ThermalTo(e) => {
                    let s = self.case.branches[e].s_max;
                    flows.pt[e] * flows.pt[e] + flows.qt[e] * flows.qt[e] - s * s
                }
            }),
        )
    }

    fn ineq_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let l = &self.layout;
        let vm: Vec<f64> = (0..l.n).map(|i| z[l.vm(i)]).collect();
        let va: Vec<f64> = (0..l.n).map(|i| z[l.va(i)]).collect();
        let parts = branch_partials(self.case, &vm, &va);
        let mut j = DMatrix::zeros(self.ineqs.len(), l.nz());
        for (row, c) in self.ineqs.iter().enumerate() {
            match *c {
                Ineq::VmLo(i) => j[(row, l.vm(i))] = -1.0,
                Ineq::VmHi(i) => j[(row, l.vm(i))] = 1.0,
                Ineq::PgLo(g) => j[(row, l.pg(g))] = -1.0,
                Ineq::PgHi(g) => j[(row, l.pg(g))] = 1.0,
                Ineq::QgLo(g) => j[(row, l.qg(g))] = -1.0,
                Ineq::QgHi(g) => j[(row, l.qg(g))] = 1.0,
                Ineq::DvaLo(e) => {
                    let br = &self.case.branches[e];
                    j[(row, l.va(br.from))] = -1.0;
                    j[(row, l.va(br.to))] = 1.0;
                }
                Ineq::DvaHi(e) => {
                    let br = &self.case.branches[e];
                    j[(row, l.va(br.from))] = 1.0;
                    j[(row, l.va(br.to))] = -1.0;
                }
                Ineq::ThermalFrom(e) => {
                    let br = &self.case.branches[e];
                    let p = &parts[e];
                    let (i, k) = (br.from, br.to);
                    let (f, q) = (2.0 * p.pf, 2.0 * p.qf);
                    j[(row, l.vm(i))] = f * p.dpf[0] + q * p.dqf[0];
                    j[(row, l.vm(k))] = f * p.dpf[1] + q * p.dqf[1];
                    j[(row, l.va(i))] = f * p.dpf[2] + q * p.dqf[2];
                    j[(row, l.va(k))] = -(f * p.dpf[2] + q * p.dqf[2]);
                }
                Ineq::ThermalTo(e) => {
                    let br = &self.case.branches[e];
                    let p = &parts[e];
                    let (i, k) = (br.from, br.to);
                    let (f, q) = (2.0 * p.pt, 2.0 * p.qt);
                    j[(row, l.vm(i))] = f * p.dpt[0] + q * p.dqt[0];
                    j[(row, l.vm(k))] = f * p.dpt[1] + q * p.dqt[1];
                    j[(row, l.va(i))] = f * p.dpt[2] + q * p.dqt[2];
                    j[(row, l.va(k))] = -(f * p.dpt[2] + q * p.dqt[2]);
                }
            }
        }
        j
    }

    fn obj_grad(&self) -> DVector<f64> {
        let l = &self.layout;
        let mut g = DVector::zeros(l.nz());
        for (i, gen) in self.case.generators.iter().enumerate() {
            g[l.pg(i)] = gen.cost;
        }
        g
    }

    fn lagrangian_grad(&self, z: &DVector<f64>, y: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        self.obj_grad() + self.eq_jacobian(z).transpose() * y + self.ineq_jacobian(z).transpose() * w
    }

    /// Lagrangian Hessian by central differences of the analytic gradient.
    fn lagrangian_hessian(
        &self,
        z: &DVector<f64>,
        y: &DVector<f64>,
        w: &DVector<f64>,
    ) -> DMatrix<f64> {
        let nz = self.layout.nz();
        let mut h = DMatrix::zeros(nz, nz);
        let mut zp = z.clone();
        for k in 0..nz {
            let step = 1e-6 * (1.0 + z[k].abs());
            zp[k] = z[k] + step;
            let gp = self.lagrangian_grad(&zp, y, w);
            zp[k] = z[k] - step;
            let gm = self.lagrangian_grad(&zp, y, w);
            zp[k] = z[k];
            let col = (gp - gm) / (2.0 * step);
            for r in 0..nz {
                h[(r, k)] = col[r];
            }
        }
        // symmetrize
        let ht = h.transpose();
        (h + ht) * 0.5
    }
}

pub const OPF_MAX_ITER: usize = 300;

/// Log-barrier interior-point AC-OPF. Tries a flat (midpoint) start
/// first, then a warm start from the power flow of the DC-OPF dispatch,
/// then perturbed flat starts. Returns a locally optimal solution with
/// first-order KKT residual <= tol.
pub fn solve_acopf(case: &GridCase, pd: &[f64], qd: &[f64], tol: f64) -> Result<AcSolution, AcError> {
    if pd.len() != case.loads.len() || qd.len() != case.loads.len() {
        return Err(AcError::Dimension("loads".into()));
    }
    let prob = OpfProblem::new(case, pd, qd);
    let mut starts = vec![flat_start(case, &prob, 0.5)];
    if let Some(z) = powerflow_start(case, &prob, pd, qd) {
        starts.push(z);
    }
    starts.push(flat_start(case, &prob, 0.35));
    starts.push(flat_start(case, &prob, 0.65));
    let mut last = None;
    for z0 in starts {
        match run_ipm(case, &prob, z0, tol) {
            Ok(sol) => return Ok(sol),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap())
}

fn flat_start(case: &GridCase, prob: &OpfProblem, frac: f64) -> DVector<f64> {
    let l = &prob.layout;
    let mut z = DVector::zeros(l.nz());
    for (i, bus) in case.buses.iter().enumerate() {
        z[l.vm(i)] = bus.vm_min + frac * (bus.vm_max - bus.vm_min);
    }
    for (g, gen) in case.generators.iter().enumerate() {
        z[l.pg(g)] = gen.pg_min + frac * (gen.pg_max - gen.pg_min);
        z[l.qg(g)] = gen.qg_min + frac * (gen.qg_max - gen.qg_min);
    }
    z
}

/// Start from the power flow solved at the nominal DC-OPF dispatch:
/// equalities hold there, which keeps the barrier method away from
/// infeasible corners. Box variables are pulled strictly interior.
fn powerflow_start(
    case: &GridCase,
    prob: &OpfProblem,
    pd: &[f64],
    qd: &[f64],
) -> Option<DVector<f64>> {
    let params = crate::dcopf::DcParams::nominal(case);
    let dc = crate::dcopf::solve_dcopf(case, &params, pd, 1e-8).ok()?;
    let vm_set: Vec<f64> = case
        .generators
        .iter()
        .map(|gen| 1.0f64.clamp(case.buses[gen.bus].vm_min, case.buses[gen.bus].vm_max))
        .collect();
    let dispatch = Dispatch {
        pg: dc.pg.clone(),
        vm: vm_set,
    };
    let pf = solve_ac_powerflow(case, &dispatch, pd, qd, 1e-10).ok()?;
    let l = &prob.layout;
    let mut z = DVector::zeros(l.nz());
    let inset = |v: f64, lo: f64, hi: f64| {
        let pad = 1e-3 * (hi - lo);
        v.clamp(lo + pad, hi - pad)
    };
    for (i, bus) in case.buses.iter().enumerate() {
        z[l.vm(i)] = inset(pf.vm[i], bus.vm_min, bus.vm_max);
        z[l.va(i)] = pf.va[i];
    }
    for (g, gen) in case.generators.iter().enumerate() {
        z[l.pg(g)] = inset(pf.pg[g], gen.pg_min, gen.pg_max);
        z[l.qg(g)] = inset(pf.qg[g], gen.qg_min, gen.qg_max);
    }
    Some(z)
}

fn run_ipm(
    case: &GridCase,
    prob: &OpfProblem,
    mut z: DVector<f64>,
    tol: f64,
) -> Result<AcSolution, AcError> {
    let l = &prob.layout;
    let nz = l.nz();
    let m = prob.n_eq();
    let ni = prob.ineqs.len();
    debug_assert_eq!(z.len(), nz);
    let mut y = DVector::zeros(m);
    let ci0 = prob.eval_ineq(&z);
    let mut s = DVector::from_iterator(ni, ci0.iter().map(|c| (-c).max(1e-2)));
    let mut mu = 1e-1;
    let mut w = DVector::from_iterator(ni, s.iter().map(|sv| mu / sv));

    let tau = 0.995;
    let mut best_residual = f64::INFINITY;
    let mut iters = 0;
    let mut delta = 0.0f64;
    let mut stall = 0usize;
    let mut restarts = 0usize;
    while iters < OPF_MAX_ITER {
        iters += 1;
        let (ce, _) = prob.eval_eq(&z);
        let ci = prob.eval_ineq(&z);
        let je = prob.eq_jacobian(&z);
        let ji = prob.ineq_jacobian(&z);
        let r1 = prob.obj_grad() + je.transpose() * &y + ji.transpose() * &w;
        let r3 = &ci + &s;
        let comp0 = (0..ni).fold(0.0f64, |a, j| a.max((w[j] * s[j]).abs()));
        let kkt0 = r1.amax().max(ce.amax()).max(r3.amax()).max(comp0);
        if kkt0 < 0.9 * best_residual {
            stall = 0;
        } else {
            stall += 1;
        }
        best_residual = best_residual.min(kkt0);
        if kkt0 <= tol {
            return Ok(finish_opf(case, &prob, &z, kkt0));
        }
        // a crushed slack (s ~ 0, w ~ 1/s) makes the condensed system so
        // ill-conditioned that the step cannot repair the equalities any
        // more; pull the iterate strictly interior and re-center
        if stall >= 25 && restarts < 2 {
            restarts += 1;
            stall = 0;
            let inset = 0.05;
            for (i, bus) in case.buses.iter().enumerate() {
                let pad = inset * (bus.vm_max - bus.vm_min);
                z[l.vm(i)] = z[l.vm(i)].clamp(bus.vm_min + pad, bus.vm_max - pad);
            }
            for (g, gen) in case.generators.iter().enumerate() {
                let ppad = inset * (gen.pg_max - gen.pg_min);
                z[l.pg(g)] = z[l.pg(g)].clamp(gen.pg_min + ppad, gen.pg_max - ppad);
                let qpad = inset * (gen.qg_max - gen.qg_min);
                z[l.qg(g)] = z[l.qg(g)].clamp(gen.qg_min + qpad, gen.qg_max - qpad);
            }
            let ci = prob.eval_ineq(&z);
            mu = mu.max(1e-2);
            for j in 0..ni {
                s[j] = (-ci[j]).max(1e-2);
                w[j] = mu / s[j];
            }
            y.fill(0.0);
            delta = 0.0;
            continue;
        }
        // residual of the barrier subproblem
        let comp_mu = (0..ni).fold(0.0f64, |a, j| a.max((w[j] * s[j] - mu).abs()));
        let kkt_mu = r1.amax().max(ce.amax()).max(r3.amax()).max(comp_mu);
        if kkt_mu <= 10.0 * mu {
            mu = (mu / 10.0).max(tol / 100.0);
        }
        // baseline merit at the current point under the current mu
        let comp_cur = (0..ni).fold(0.0f64, |a, j| a.max((w[j] * s[j] - mu).abs()));
        let mer0 = r1.amax().max(ce.amax()).max(r3.amax()).max(comp_cur);

        let h = prob.lagrangian_hessian(&z, &y, &w);
        // condensed system in (dz, dy)
        let mut reduced = DMatrix::zeros(nz + m, nz + m);
        let mut hc = h.clone();
        for j in 0..ni {
            let d = w[j] / s[j];
            for a in 0..nz {
                let ja = ji[(j, a)];
                if ja == 0.0 {
                    continue;
                }
                for b in 0..nz {
                    let jb = ji[(j, b)];
                    if jb != 0.0 {
                        hc[(a, b)] += d * ja * jb;
                    }
                }
            }
        }
        loop {
            for a in 0..nz {
                for b in 0..nz {
                    reduced[(a, b)] = hc[(a, b)];
                }
                reduced[(a, a)] += delta;
            }
            for i in 0..m {
                for a in 0..nz {
                    reduced[(nz + i, a)] = je[(i, a)];
                    reduced[(a, nz + i)] = je[(i, a)];
                }
                reduced[(nz + i, nz + i)] = -1e-10;
            }
            let mut rhs = DVector::zeros(nz + m);
            // -r1 + Ji' S^-1 (r4 - W r3), r4 = W s - mu e
            let mut corr = DVector::zeros(ni);
            for j in 0..ni {
                let r4 = w[j] * s[j] - mu;
                corr[j] = (r4 - w[j] * r3[j]) / s[j];
            }
            let top = -&r1 + ji.transpose() * &corr;
            for a in 0..nz {
                rhs[a] = top[a];
            }
            for i in 0..m {
                rhs[nz + i] = -ce[i];
            }
            match reduced.clone().lu().solve(&rhs) {
                Some(step) if step.iter().all(|v| v.is_finite()) => {
                    let dz = step.rows(0, nz).into_owned();
                    let dy = step.rows(nz, m).into_owned();
                    let ds = -&r3 - &ji * &dz;
                    let mut dw = DVector::zeros(ni);
                    for j in 0..ni {
                        dw[j] = -(w[j] * s[j] - mu + w[j] * ds[j]) / s[j];
                    }
                    let mut ap = 1.0f64;
                    let mut ad = 1.0f64;
                    for j in 0..ni {
                        if ds[j] < 0.0 {
                            ap = ap.min(-tau * s[j] / ds[j]);
                        }
                        if dw[j] < 0.0 {
                            ad = ad.min(-tau * w[j] / dw[j]);
                        }
                    }
                    // backtrack on the barrier KKT residual so a huge
                    // Newton step cannot fling the iterate into a corner
                    // it cannot leave
                    let merit = |z: &DVector<f64>, s: &DVector<f64>, y: &DVector<f64>, w: &DVector<f64>| {
                        let (ce, _) = prob.eval_eq(z);
                        let ci = prob.eval_ineq(z);
                        let je = prob.eq_jacobian(z);
                        let ji = prob.ineq_jacobian(z);
                        let r1 = prob.obj_grad() + je.transpose() * y + ji.transpose() * w;
                        let r3 = &ci + s;
                        let comp = (0..ni).fold(0.0f64, |a, j| a.max((w[j] * s[j] - mu).abs()));
                        r1.amax().max(ce.amax()).max(r3.amax()).max(comp)
                    };
                    let mut alpha = 1.0f64;
                    for _ in 0..6 {
                        let zn = &z + alpha * ap * &dz;
                        let sn = &s + alpha * ap * &ds;
                        let yn = &y + alpha * ad * &dy;
                        let wn = &w + alpha * ad * &dw;
                        if merit(&zn, &sn, &yn, &wn) < mer0 * (1.0 - 1e-4 * alpha) || alpha <= 0.04 {
                            z = zn;
                            s = sn;
                            y = yn;
                            w = wn;
                            break;
                        }
                        alpha *= 0.5;
                    }
                    delta = (delta / 10.0).max(0.0);
                    if delta < 1e-12 {
                        delta = 0.0;
                    }
                    break;
                }
                _ => {
                    delta = if delta == 0.0 { 1e-8 } else { delta * 100.0 };
                    if delta > 1e6 {
                        return Err(AcError::OpfDiverged {
                            iters,
                            residual: best_residual,
                        });
                    }
                }
            }
        }
    }
    Err(AcError::OpfDiverged {
        iters,
        residual: best_residual,
    })
}

fn finish_opf(case: &GridCase, prob: &OpfProblem, z: &DVector<f64>, kkt: f64) -> AcSolution {
    let l = &prob.layout;
    let vm: Vec<f64> = (0..l.n).map(|i| z[l.vm(i)]).collect();
    let va: Vec<f64> = (0..l.n).map(|i| z[l.va(i)]).collect();
    let flows = ac_flow_equations(case, &vm, &va);
    let pg: Vec<f64> = (0..l.ng).map(|g| z[l.pg(g)]).collect();
    let qg: Vec<f64> = (0..l.ng).map(|g| z[l.qg(g)]).collect();
    let objective = case
        .generators
        .iter()
        .zip(&pg)
        .map(|(gen, p)| gen.cost * p)
        .sum();
    AcSolution {
        pg,
        qg,
        vm,
        va,
        pf: flows.pf,
        qf: flows.qf,
        pt: flows.pt,
        qt: flows.qt,
        objective,
        kkt_residual: kkt,
    }
}

/// Max violation per constraint family of Model-3 feasibility.
#[derive(Debug, Clone, Copy)]
pub struct AcResidualReport {
    pub balance: f64,
    pub flow_equations: f64,
    pub thermal: f64,
    pub bounds: f64,
    pub angle: f64,
    pub reference: f64,
}

impl AcResidualReport {
    pub fn max(&self) -> f64 {
        self.balance
            .max(self.flow_equations)
            .max(self.thermal)
            .max(self.bounds)
            .max(self.angle)
            .max(self.reference)
    }

    pub fn pass(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

/// Evaluates every AC-OPF constraint at `sol` for the demands (pd, qd).
pub fn check_ac_feasibility(
    case: &GridCase,
    sol: &AcSolution,
    pd: &[f64],
    qd: &[f64],
) -> AcResidualReport {
    let n = case.buses.len();
    let flows = ac_flow_equations(case, &sol.vm, &sol.va);
    let mut flow_eq = 0.0f64;
    for e in 0..case.branches.len() {
        flow_eq = flow_eq
            .max((flows.pf[e] - sol.pf[e]).abs())
            .max((flows.qf[e] - sol.qf[e]).abs())
            .max((flows.pt[e] - sol.pt[e]).abs())
            .max((flows.qt[e] - sol.qt[e]).abs());
    }
    let mut p_bal = vec![0.0; n];
    let mut q_bal = vec![0.0; n];
    for i in 0..n {
        p_bal[i] = -flows.p_inj[i];
        q_bal[i] = -flows.q_inj[i];
    }
    for (g, gen) in case.generators.iter().enumerate() {
        p_bal[gen.bus] += sol.pg[g];
        q_bal[gen.bus] += sol.qg[g];
    }
    for (l, load) in case.loads.iter().enumerate() {
        p_bal[load.bus] -= pd[l];
        q_bal[load.bus] -= qd[l];
    }
    let balance = p_bal
        .iter()
        .chain(q_bal.iter())
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let mut thermal = 0.0f64;
    let mut bounds = 0.0f64;
    let mut angle = 0.0f64;
    for (e, br) in case.branches.iter().enumerate() {
        let s2 = br.s_max * br.s_max;
        thermal = thermal
            .max(sol.pf[e] * sol.pf[e] + sol.qf[e] * sol.qf[e] - s2)
            .max(sol.pt[e] * sol.pt[e] + sol.qt[e] * sol.qt[e] - s2);
        for v in [sol.pf[e], sol.qf[e], sol.pt[e], sol.qt[e]] {
            bounds = bounds.max(v.abs() - br.s_max);
        }
        let d = sol.va[br.from] - sol.va[br.to];
        angle = angle.max(br.dva_min - d).max(d - br.dva_max);
    }
    for (i, bus) in case.buses.iter().enumerate() {
        bounds = bounds
            .max(bus.vm_min - sol.vm[i])
            .max(sol.vm[i] - bus.vm_max);
    }
    for (g, gen) in case.generators.iter().enumerate() {
        bounds = bounds
            .max(gen.pg_min - sol.pg[g])
            .max(sol.pg[g] - gen.pg_max)
            .max(gen.qg_min - sol.qg[g])
            .max(sol.qg[g] - gen.qg_max);
    }
    AcResidualReport {
        balance,
        flow_equations: flow_eq,
        thermal: thermal.max(0.0),
        bounds: bounds.max(0.0),
        angle: angle.max(0.0),
        reference: sol.va[case.ref_bus].abs(),
    }
}
