//! Acceptance gate: one test per criterion, each printing a single
//! pass/fail line (run with `--nocapture` to see the lines on success).

use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dc2ac::acopf::{self, Dispatch};
use dc2ac::datagen::{self, Dataset, SamplerConfig};
use dc2ac::dcopf::{self, DcParams};
use dc2ac::diffgrad::{linearize_kkt, ParamGradient};
use dc2ac::grid::GridCase;
use dc2ac::lp;
use dc2ac::testing::{random_case, random_radial_lossless, two_bus_case, two_bus_lossy};
use dc2ac::train::{self, TrainConfig};

fn report(n: usize, name: &str, result: Result<(), String>) {
    match &result {
        Ok(()) => println!("criterion {n} ({name}): PASS"),
        Err(e) => println!("criterion {n} ({name}): FAIL - {e}"),
    }
    if let Err(e) = result {
        panic!("criterion {n} ({name}) failed: {e}");
    }
}

fn mesh9() -> GridCase {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cases/mesh9.m");
    let text = std::fs::read_to_string(path).unwrap();
    let (case, _warnings) = dc2ac::grid::parse_case(&text).unwrap();
    case
}

#[test]
fn criterion_1_dcopf_kkt_and_duality() {
    report(1, "DC-OPF KKT and strong duality", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for k in 0..200usize {
            let n_buses = 2 + k % 29; // 2..=30
            let case = random_case(&mut rng, n_buses, k % 2 == 0);
            let params = DcParams::nominal(&case);
            let scale: f64 = rng.gen_range(0.6..1.2);
            let pd: Vec<f64> = case.loads.iter().map(|l| l.pd_ref * scale).collect();
            let sol = dcopf::solve_dcopf(&case, &params, &pd, 1e-10)
                .map_err(|e| format!("instance {k}: solve failed: {e}"))?;
            let (lp, _) = dcopf::build_dcopf(&case, &params, &pd).unwrap();
            let res = lp::check_kkt(&lp, &sol.lp_solution, 1e-6).max();
            if res > 1e-6 {
                return Err(format!("instance {k}: KKT residual {res:e} > 1e-6"));
            }
            let pobj = sol.objective;
            let dobj = dcopf::dual_objective(&case, &params, &pd, &sol).unwrap();
            let gap = (pobj - dobj).abs();
            if gap > 1e-6 * (1.0 + pobj.abs()) {
                return Err(format!("instance {k}: duality gap {gap:e}"));
            }
        }
        Ok(())
    })());
}

#[test]
fn criterion_2_parameter_gradients() {
    report(2, "LP-layer gradients vs finite differences", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        let mut checked = 0usize;
        let mut tried = 0usize;
        while checked < 100 {
            tried += 1;
            if tried > 600 {
                return Err(format!("only {checked} usable instances in {tried} draws"));
            }
            let case = random_case(&mut rng, 2 + tried % 29, true);
            let params = DcParams::nominal(&case);
            let pd = dcopf::reference_pd(&case);
            let Ok(sol) = dcopf::solve_dcopf(&case, &params, &pd, 1e-10) else {
                continue;
            };
            let Ok(lin) = linearize_kkt(&case, &params, &pd, &sol, 1e-6) else {
                continue;
            };
            if lin.regularized() {
                continue;
            }
            let idx = *lin.index_map();
            let dir = ParamGradient {
                d_gs: (0..idx.n_bus).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                d_b: (0..idx.n_branch).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            };
            // central finite differences of the primal solution along `dir`
            let h = 1e-5;
            let shift = |sign: f64| {
                let mut p = params.clone();
                for (g, d) in p.gs.iter_mut().zip(&dir.d_gs) {
                    *g += sign * h * d;
                }
                for (b, d) in p.b.iter_mut().zip(&dir.d_b) {
                    *b += sign * h * d;
                }
                dcopf::solve_dcopf(&case, &p, &pd, 1e-10)
            };
            let (Ok(plus), Ok(minus)) = (shift(1.0), shift(-1.0)) else {
                continue;
            };
            if !same_active_set(&plus, &minus, &case) {
                continue; // FD invalid across an active-set change
            }
            let diff = |a: &[f64], b: &[f64]| -> Vec<f64> {
                a.iter().zip(b).map(|(p, m)| (p - m) / (2.0 * h)).collect()
            };
            let fwd = lin.forward_sensitivity(&dir).unwrap();
            for (name, got, want) in [
                ("pg", &fwd.d_pg, &diff(&plus.pg, &minus.pg)),
                ("pf", &fwd.d_pf, &diff(&plus.pf, &minus.pf)),
                ("va", &fwd.d_va, &diff(&plus.va, &minus.va)),
            ] {
                let scale = want.iter().fold(1.0f64, |a, v| a.max(v.abs()));
                for (g, w) in got.iter().zip(want) {
                    if (g - w).abs() > 1e-4 * scale {
                        return Err(format!("instance {tried} block {name}: {g} vs FD {w}"));
                    }
                }
            }
            // transpose identity: <dl, J d> == <J^T dl, d>
            let dl_pg: Vec<f64> = (0..idx.n_gen).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dl_pf: Vec<f64> = (0..idx.n_branch).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dl_va: Vec<f64> = (0..idx.n_bus).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let adj = lin.adjoint_gradient(&dl_pg, &dl_pf, &dl_va).unwrap();
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            let lhs = dot(&dl_pg, &fwd.d_pg) + dot(&dl_pf, &fwd.d_pf) + dot(&dl_va, &fwd.d_va);
            let rhs = dot(&adj.d_gs, &dir.d_gs) + dot(&adj.d_b, &dir.d_b);
            if (lhs - rhs).abs() > 1e-10 * (1.0 + lhs.abs()) {
                return Err(format!("instance {tried}: transpose identity {lhs} vs {rhs}"));
            }
            checked += 1;
        }
        Ok(())
    })());
}

fn same_active_set(a: &dcopf::DcSolution, b: &dcopf::DcSolution, case: &GridCase) -> bool {
    let eps = 1e-6;
    for (g, gen) in case.generators.iter().enumerate() {
        if ((a.pg[g] - gen.pg_min).abs() <= eps) != ((b.pg[g] - gen.pg_min).abs() <= eps)
            || ((gen.pg_max - a.pg[g]).abs() <= eps) != ((gen.pg_max - b.pg[g]).abs() <= eps)
        {
            return false;
        }
    }
    for (e, br) in case.branches.iter().enumerate() {
        if ((a.pf[e].abs() - br.s_max).abs() <= eps) != ((b.pf[e].abs() - br.s_max).abs() <= eps) {
            return false;
        }
    }
    true
}

#[test]
fn criterion_3_ac_solvers_vs_closed_form_and_brute_force() {
    report(3, "AC power flow closed form + AC-OPF brute force", (|| {
        // (a) lossless two-bus power flow has the closed form
        // va2 = -asin(x pd) when vm2 is held at 1 by the matching qd.
        let case = two_bus_case();
        let x = case.branches[0].x;
        for pd in [0.2, 0.5, 1.0, 2.0, 5.0] {
            let theta = -(x * pd).asin();
            let qd = (theta.cos() - 1.0) / x;
            let dispatch = Dispatch {
                pg: vec![pd],
                vm: vec![1.0],
            };
            let sol = acopf::solve_ac_powerflow(&case, &dispatch, &[pd], &[qd], 1e-12)
                .map_err(|e| format!("power flow at pd={pd}: {e}"))?;
            if (sol.va[1] - theta).abs() > 1e-8 {
                return Err(format!("pd={pd}: va2 {} vs closed form {theta}", sol.va[1]));
            }
            if (sol.vm[1] - 1.0).abs() > 1e-8 {
                return Err(format!("pd={pd}: vm2 {} not pinned at 1", sol.vm[1]));
            }
        }
        // (b) lossy two-bus AC-OPF objective vs exhaustive grid search
        let case = two_bus_lossy(0.05);
        let pd = 1.0;
        let qd = 0.2;
        let sol = acopf::solve_acopf(&case, &[pd], &[qd], 1e-9)
            .map_err(|e| format!("AC-OPF solve: {e}"))?;
        let brute = brute_force_two_bus(&case, pd, qd)
            .ok_or("brute-force search found no feasible point")?;
        if (sol.objective - brute).abs() > 1e-4 * (1.0 + brute.abs()) {
            return Err(format!("objective {} vs brute force {brute}", sol.objective));
        }
        Ok(())
    })());
}

/// Globally minimizes cost over the two-bus AC feasible set by sweeping
/// vm1 and, for each vm1, solving the bus-2 balance for (vm2, va2) with
/// nested grid refinement. Independent of the Newton/interior-point code.
fn brute_force_two_bus(case: &GridCase, pd: f64, qd: f64) -> Option<f64> {
    let bus = &case.buses[0];
    let gen = &case.generators[0];
    let cost = gen.cost;
    let eval = |vm1: f64| -> Option<f64> {
        // inner: find (vm2, va2) zeroing the bus-2 P/Q balance
        let mut c2 = (case.buses[1].vm_min + case.buses[1].vm_max) / 2.0;
        let mut w2 = (case.buses[1].vm_max - case.buses[1].vm_min) / 2.0;
        let mut ct = -0.2f64;
        let mut wt = 0.5f64;
        let (mut best_vm2, mut best_va2, mut best_res) = (c2, ct, f64::INFINITY);
        for _ in 0..12 {
            for i in 0..33 {
                let vm2 = (c2 - w2 + 2.0 * w2 * i as f64 / 32.0)
                    .clamp(case.buses[1].vm_min, case.buses[1].vm_max);
                for j in 0..33 {
                    let va2 = ct - wt + 2.0 * wt * j as f64 / 32.0;
                    let flows = acopf::ac_flow_equations(case, &[vm1, vm2], &[0.0, va2]);
                    let rp = flows.p_inj[1] + pd;
                    let rq = flows.q_inj[1] + qd;
                    let res = rp * rp + rq * rq;
                    if res < best_res {
                        best_res = res;
                        best_vm2 = vm2;
                        best_va2 = va2;
                    }
                }
            }
            c2 = best_vm2;
            ct = best_va2;
            w2 *= 0.15;
            wt *= 0.15;
        }
        if best_res > 1e-18 {
            return None; // no balance solution at this vm1
        }
        let flows = acopf::ac_flow_equations(case, &[vm1, best_vm2], &[0.0, best_va2]);
        let pg = flows.p_inj[0];
        let qg = flows.q_inj[0];
        let slack = 1e-7;
        let within = pg >= gen.pg_min - slack
            && pg <= gen.pg_max + slack
            && qg >= gen.qg_min - slack
            && qg <= gen.qg_max + slack
            && flows.pf[0].hypot(flows.qf[0]) <= case.branches[0].s_max + slack
            && flows.pt[0].hypot(flows.qt[0]) <= case.branches[0].s_max + slack
            && (0.0 - best_va2) >= case.branches[0].dva_min - slack
            && (0.0 - best_va2) <= case.branches[0].dva_max + slack;
        within.then_some(cost * pg)
    };
    let (mut center, mut width) = ((bus.vm_min + bus.vm_max) / 2.0, (bus.vm_max - bus.vm_min) / 2.0);
    let mut best: Option<(f64, f64)> = None; // (objective, vm1)
    for _ in 0..4 {
        for i in 0..41 {
            let vm1 = (center - width + 2.0 * width * i as f64 / 40.0)
                .clamp(bus.vm_min, bus.vm_max);
            if let Some(obj) = eval(vm1) {
                if best.map_or(true, |(b, _)| obj < b) {
                    best = Some((obj, vm1));
                }
            }
        }
        center = best?.1;
        width /= 15.0;
    }
    best.map(|(obj, _)| obj)
}

#[test]
fn criterion_4_lossless_radial_dc_equals_ac() {
    report(4, "lossless radial DC dispatch equals AC dispatch", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for k in 0..20usize {
            let case = random_radial_lossless(&mut rng, 3 + k % 10);
            let pd = dcopf::reference_pd(&case);
            let qd: Vec<f64> = case.loads.iter().map(|l| l.qd_ref).collect();
            let dc = dcopf::solve_dcopf(&case, &DcParams::nominal(&case), &pd, 1e-10)
                .map_err(|e| format!("case {k}: DC solve failed: {e}"))?;
            let ac = acopf::solve_acopf(&case, &pd, &qd, 1e-9)
                .map_err(|e| format!("case {k}: AC solve failed: {e}"))?;
            for (g, (d, a)) in dc.pg.iter().zip(&ac.pg).enumerate() {
                if (d - a).abs() > 1e-5 {
                    return Err(format!("case {k} gen {g}: DC pg {d} vs AC pg {a}"));
                }
            }
        }
        Ok(())
    })());
}

struct TrainedPipeline {
    dataset: Dataset,
    outcome: train::TrainOutcome,
    initial_val_loss: f64,
    wall_seconds: f64,
}

fn trained_pipeline() -> &'static Result<TrainedPipeline, String> {
    static ONCE: OnceLock<Result<TrainedPipeline, String>> = OnceLock::new();
    ONCE.get_or_init(|| {
        let start = Instant::now();
        let case = mesh9();
        let dataset =
            datagen::generate_dataset(&case, &SamplerConfig::default(), 1000, 7, 4)
                .map_err(|e| format!("dataset generation: {e}"))?;
        let config = TrainConfig {
            epochs: 30,
            lr: 3e-3,
            batch_size: 8,
            patience: 10,
            seed: 0,
            lp_tol: 1e-8,
        };
        let fresh = train::new_dc2ac_net(&case, config.seed);
        let (initial_val_loss, _) =
            train::dc2ac_val_loss(&case, &fresh, &dataset.val, config.lp_tol);
        let outcome = train::train_dc2ac(&case, &dataset.train, &dataset.val, &config, None)
            .map_err(|e| format!("training: {e}"))?;
        Ok(TrainedPipeline {
            dataset,
            outcome,
            initial_val_loss,
            wall_seconds: start.elapsed().as_secs_f64(),
        })
    })
}

#[test]
fn criterion_5_trained_model_beats_nominal_dc() {
    report(5, "trained adjustment beats nominal DC-OPF", (|| {
        let pipe = trained_pipeline().as_ref().map_err(|e| e.clone())?;
        let case = mesh9();
        let n = pipe.dataset.train.len() + pipe.dataset.val.len();
        if n < 1000 {
            return Err(format!("only {n} samples"));
        }
        if pipe.wall_seconds > 1800.0 {
            return Err(format!("pipeline took {:.0}s > 30min", pipe.wall_seconds));
        }
        let report = train::evaluate(
            &case,
            &pipe.dataset.val,
            Some(&pipe.outcome.net),
            None,
            1e-8,
        )
        .map_err(|e| format!("evaluation: {e}"))?;
        let dc = report.dc.mean.pg;
        let adj = report
            .dc2ac
            .as_ref()
            .ok_or("no adjusted-model summary")?
            .mean
            .pg;
        if adj > 0.7 * dc {
            return Err(format!("mean L1(pg) {adj:.6} > 0.7 * DC baseline {dc:.6}"));
        }
        let win = report.dc2ac_win_rate.unwrap_or(0.0);
        if win < 0.6 {
            return Err(format!("win rate {win:.3} < 0.6"));
        }
        Ok(())
    })());
}

#[test]
fn criterion_6_training_converges_early() {
    report(6, "most of the validation improvement lands in 2 epochs", (|| {
        let pipe = trained_pipeline().as_ref().map_err(|e| e.clone())?;
        let history = &pipe.outcome.history;
        if history.len() < 2 {
            return Err("fewer than 2 epochs recorded".into());
        }
        let init = pipe.initial_val_loss;
        let after_two = history[0].val_loss.min(history[1].val_loss);
        let best = pipe.outcome.best_val_loss;
        let total = init - best;
        if total <= 0.0 {
            return Err(format!("no improvement: init {init:e}, best {best:e}"));
        }
        let frac = (init - after_two) / total;
        if frac < 0.8 {
            return Err(format!(
                "only {:.1}% of the reduction in 2 epochs (init {init:e}, 2-epoch {after_two:e}, best {best:e})",
                100.0 * frac
            ));
        }
        Ok(())
    })());
}

#[test]
fn criterion_7_pipeline_is_byte_deterministic() {
    report(7, "byte-identical artifacts across reruns and worker counts", (|| {
        let case = two_bus_case();
        let mut csvs = Vec::new();
        let mut files = Vec::new();
        for workers in [1usize, 3] {
            let ds = datagen::generate_dataset(&case, &SamplerConfig::default(), 30, 5, workers)
                .map_err(|e| format!("generation with {workers} workers: {e}"))?;
            let mut csv = Vec::new();
            ds.write_csv(&mut csv).unwrap();
            csvs.push(csv);
            let mut file = Vec::new();
            ds.write_to(&mut file).unwrap();
            files.push(file);
        }
        if csvs[0] != csvs[1] {
            return Err("CSV bytes differ across worker counts".into());
        }
        if files[0] != files[1] {
            return Err("dataset bytes differ across worker counts".into());
        }
        // identical training runs produce identical checkpoints
        let ds = Dataset::read_from(&mut &files[0][..]).unwrap();
        let config = TrainConfig {
            epochs: 2,
            lr: 1e-3,
            patience: 2,
            ..TrainConfig::default()
        };
        let mut ckpts = Vec::new();
        for _ in 0..2 {
            let out = train::train_dc2ac(&case, &ds.train, &ds.val, &config, None)
                .map_err(|e| format!("training: {e}"))?;
            let mut bytes = Vec::new();
            out.net.write_to(&mut bytes).unwrap();
            ckpts.push(bytes);
        }
        if ckpts[0] != ckpts[1] {
            return Err("checkpoint bytes differ across identical runs".into());
        }
        Ok(())
    })());
}

#[test]
fn criterion_8_sampler_moments() {
    report(8, "demand sampler moments and range", (|| {
        let case = two_bus_case();
        let config = SamplerConfig::default();
        let n = 100_000usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(0x8a7c ^ i as u64);
            let (pd, qd) = datagen::sample_loads(&case, &config, &mut rng);
            let factor = pd[0] / case.loads[0].pd_ref;
            // qd must scale by the same factor as pd
            let qfac = qd[0] / case.loads[0].qd_ref;
            if (qfac - factor).abs() > 1e-12 {
                return Err(format!("draw {i}: qd factor {qfac} != pd factor {factor}"));
            }
            sum += factor;
            sum_sq += factor * factor;
            lo = lo.min(factor);
            hi = hi.max(factor);
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let (want_mean, want_var) = (0.9, 0.0195083);
        if (mean - want_mean).abs() > 0.01 * want_mean {
            return Err(format!("mean {mean:.5} outside 1% of {want_mean}"));
        }
        if (var - want_var).abs() > 0.01 * want_var {
            return Err(format!("variance {var:.6} outside 1% of {want_var}"));
        }
        let (want_lo, want_hi) = (0.7 * 0.85, 1.1 * 1.15);
        if lo < want_lo || hi > want_hi {
            return Err(format!("range [{lo:.4}, {hi:.4}] escapes [{want_lo}, {want_hi}]"));
        }
        if lo > want_lo + 0.01 || hi < want_hi - 0.01 {
            return Err(format!("range [{lo:.4}, {hi:.4}] does not cover [{want_lo}, {want_hi}]"));
        }
        Ok(())
    })());
}
