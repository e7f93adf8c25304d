//! Test-support utilities: hand-built cases, random instance generators and
//! brute-force oracles. Used by unit and integration tests; kept independent
//! of the solver paths they are used to check.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::grid::{Branch, Bus, Generator, GridCase, Load};
use crate::lp::LinearProgram;

/// Lossless 2-bus case: generator (cost 1, pg_max 3) at bus 0, load 1.0 p.u.
/// at bus 1, single line x=0.1 (b = -10), thermal limit 2.
pub fn two_bus_case() -> GridCase {
    let mut branch = Branch::new(0, 1, 0.0, 0.1);
    branch.s_max = 2.0;
    branch.dva_min = -0.5;
    branch.dva_max = 0.5;
    GridCase {
        buses: vec![Bus::default(), Bus::default()],
        branches: vec![branch],
        generators: vec![Generator {
            bus: 0,
            pg_min: 0.0,
            pg_max: 3.0,
            qg_min: -2.0,
            qg_max: 2.0,
            cost: 1.0,
        }],
        loads: vec![Load {
            bus: 1,
            pd_ref: 1.0,
            qd_ref: 0.2,
        }],
        ref_bus: 0,
        base_mva: 100.0,
        shed_cost: 100.0,
    }
    .finalize()
    .unwrap()
}

/// Same topology with series resistance `r` on the line.
pub fn two_bus_lossy(r: f64) -> GridCase {
    let mut case = two_bus_case();
    case.branches[0].r = r;
    case.finalize().unwrap()
}

/// Random connected case with `n_buses` buses. Generators have distinct
/// costs and ample joint capacity; limits are loose enough that shedding
/// stays inactive at reference load.
pub fn random_case<R: Rng>(rng: &mut R, n_buses: usize, lossy: bool) -> GridCase {
    let mut branches = Vec::new();
    for i in 1..n_buses {
        let j = rng.gen_range(0..i);
        branches.push((j, i));
    }
    // a few chords for meshing
    if n_buses > 3 {
        let extra = n_buses / 3;
        for _ in 0..extra {
            let a = rng.gen_range(0..n_buses);
            let b = rng.gen_range(0..n_buses);
            if a != b && !branches.contains(&(a.min(b), a.max(b))) {
                branches.push((a.min(b), a.max(b)));
            }
        }
    }
    let branches: Vec<Branch> = branches
        .into_iter()
        .map(|(f, t)| {
            let x = rng.gen_range(0.05..0.3);
            let r = if lossy { rng.gen_range(0.005..0.03) } else { 0.0 };
            let mut br = Branch::new(f, t, r, x);
            br.s_max = rng.gen_range(1.5..4.0);
            br.dva_min = -0.6;
            br.dva_max = 0.6;
            br
        })
        .collect();

    let mut loads = Vec::new();
    let mut total_pd = 0.0;
    for bus in 0..n_buses {
        if bus != 0 && rng.gen_bool(0.6) {
            let pd = rng.gen_range(0.1..0.8);
            total_pd += pd;
            loads.push(Load {
                bus,
                pd_ref: pd,
                qd_ref: pd * rng.gen_range(0.1..0.4),
            });
        }
    }
    if loads.is_empty() {
        let bus = n_buses - 1;
        loads.push(Load {
            bus,
            pd_ref: 0.5,
            qd_ref: 0.1,
        });
        total_pd = 0.5;
    }

    let n_gens = 1 + n_buses / 4;
    let mut generators = Vec::new();
    for g in 0..n_gens {
        let bus = if g == 0 { 0 } else { rng.gen_range(0..n_buses) };
        generators.push(Generator {
            bus,
            pg_min: 0.0,
            pg_max: total_pd * rng.gen_range(0.8..1.5),
            qg_min: -2.0,
            qg_max: 2.0,
            // distinct costs to avoid degenerate ties
            cost: 1.0 + g as f64 + rng.gen_range(0.0..0.5),
        });
    }

    GridCase {
        buses: vec![Bus::default(); n_buses],
        branches,
        generators,
        loads,
        ref_bus: 0,
        base_mva: 100.0,
        shed_cost: 1000.0,
    }
    .finalize()
    .unwrap()
}

/// Random radial (tree) case with r=0, no shunts and loose limits, so the
/// DC and AC active-power dispatch coincide.
pub fn random_radial_lossless<R: Rng>(rng: &mut R, n_buses: usize) -> GridCase {
    let mut case = random_case(rng, n_buses, false);
    case.branches.truncate(n_buses - 1); // drop chords, keep the tree
    for br in &mut case.branches {
        br.s_max = 50.0;
        br.dva_min = -1.0;
        br.dva_max = 1.0;
        br.b_charge = 0.0;
    }
    for bus in &mut case.buses {
        bus.gs = 0.0;
        bus.bs = 0.0;
        // generous voltage box: the random load/reactance draws can need
        // vm well above nominal to carry the reactive flows
        bus.vm_min = 0.7;
        bus.vm_max = 1.4;
    }
    for g in &mut case.generators {
        g.pg_max *= 3.0;
        g.qg_min = -10.0;
        g.qg_max = 10.0;
    }
    case.finalize().unwrap()
}

/// Random feasible bounded LP: all variables boxed, b chosen so a known
/// interior point satisfies the equalities.
pub fn random_box_lp<R: Rng>(rng: &mut R, max_n: usize, max_m: usize) -> LinearProgram {
    let n = rng.gen_range(1..=max_n);
    let m = if n > 1 {
        rng.gen_range(0..=max_m.min(n - 1))
    } else {
        0
    };
    let a_eq = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let b_eq = &a_eq * &x0;
    let lb = DVector::from_fn(n, |j, _| x0[j] - rng.gen_range(0.1..2.0));
    let ub = DVector::from_fn(n, |j, _| x0[j] + rng.gen_range(0.1..2.0));
    let c = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    LinearProgram {
        c,
        a_eq,
        b_eq,
        lb,
        ub,
    }
}

/// Brute-force optimum by enumerating basic solutions: every choice of
/// n - m active bounds, solved against the equality rows. Returns the best
/// feasible objective.
pub fn vertex_enumeration(lp: &LinearProgram) -> Option<f64> {
    let n = lp.n();
    let m = lp.m();
    if m > n {
        return None;
    }
    let k = n - m;
    // candidate active bounds: (variable, value)
    let mut candidates = Vec::new();
    for j in 0..n {
        if lp.lb[j].is_finite() {
            candidates.push((j, lp.lb[j]));
        }
        if lp.ub[j].is_finite() {
            candidates.push((j, lp.ub[j]));
        }
    }
    let mut best: Option<f64> = None;
    let mut subset = vec![0usize; k];
    enumerate_subsets(candidates.len(), k, &mut subset, 0, 0, &mut |sel| {
        let dim = m + k;
        let mut mat = DMatrix::zeros(dim, n);
        let mut rhs = DVector::zeros(dim);
        for i in 0..m {
            for j in 0..n {
                mat[(i, j)] = lp.a_eq[(i, j)];
            }
            rhs[i] = lp.b_eq[i];
        }
        for (row, &ci) in sel.iter().enumerate() {
            let (j, v) = candidates[ci];
            mat[(m + row, j)] = 1.0;
            rhs[m + row] = v;
        }
        if dim != n {
            return;
        }
        if let Some(x) = mat.lu().solve(&rhs) {
            let feas = (0..n).all(|j| x[j] >= lp.lb[j] - 1e-9 && x[j] <= lp.ub[j] + 1e-9)
                && (&lp.a_eq * &x - &lp.b_eq)
                    .iter()
                    .all(|v| v.abs() <= 1e-7);
            if feas {
                let obj = lp.c.dot(&x);
                best = Some(match best {
                    Some(b) => b.min(obj),
                    None => obj,
                });
            }
        }
    });
    best
}

fn enumerate_subsets(
    n_items: usize,
    k: usize,
    subset: &mut Vec<usize>,
    depth: usize,
    start: usize,
    visit: &mut impl FnMut(&[usize]),
) {
    if depth == k {
        visit(subset);
        return;
    }
    for i in start..n_items {
        subset[depth] = i;
        enumerate_subsets(n_items, k, subset, depth + 1, i + 1, visit);
    }
}
