//! Training of the demand -> adjusted-DC-parameter network. The forward
//! pass runs the network, solves the adjusted DC-OPF, and scores the LP
//! solution against the AC-OPF label; gradients flow back through the LP
//! via the implicit-function adjoint of its KKT system.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use thiserror::Error;

use crate::datagen::Sample;
use crate::dcopf::{solve_dcopf, DcParams, DcSolution};

use crate::grid::GridCase;
use crate::lp::LpStatus;
use crate::nnet::{Adam, Gradients, Mlp};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no usable training samples (all LP solves failed)")]
    NothingUsable,
    #[error("dataset and case disagree: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub lp_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            lr: 1e-4,
            batch_size: 16,
            patience: 10,
            seed: 0,
            lp_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub skipped: usize,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub net: Mlp,
    pub history: Vec<EpochStats>,
    pub best_val_loss: f64,
    pub best_epoch: usize,
}

/// Network input: demands scaled by their reference values.
pub fn normalized_input(case: &GridCase, pd: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        pd.len(),
        case.loads.iter().zip(pd).map(|(load, &p)| {
            if load.pd_ref.abs() > 1e-12 {
                p / load.pd_ref
            } else {
                p
            }
        }),
    )
}

/// Output bounds for the parameter network: adjusted shunts may move each
/// bus by up to 5% of the total reference demand, adjusted susceptances
/// stay within [2 b, b/2] of the (negative) nominal susceptance.
pub fn dc2ac_bounds(case: &GridCase) -> (Vec<f64>, Vec<f64>) {
    let total_pd: f64 = case.loads.iter().map(|l| l.pd_ref).sum();
    let width = 0.05 * total_pd.max(1e-6);
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for bus in &case.buses {
        lo.push(bus.gs - width);
        hi.push(bus.gs + width);
    }
    let nominal = DcParams::nominal(case);
    for &b in &nominal.b {
        debug_assert!(b < 0.0);
        lo.push(2.0 * b);
        hi.push(0.5 * b);
    }
    (lo, hi)
}

/// Output bounds for the direct-prediction baseline over [pg; pf; va].
pub fn proxy_bounds(case: &GridCase) -> (Vec<f64>, Vec<f64>) {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for g in &case.generators {
        lo.push(g.pg_min);
        hi.push(g.pg_max);
    }
    for br in &case.branches {
        lo.push(-br.s_max);
        hi.push(br.s_max);
    }
    for _ in &case.buses {
        lo.push(-std::f64::consts::FRAC_PI_2);
        hi.push(std::f64::consts::FRAC_PI_2);
    }
    (lo, hi)
}

pub fn new_dc2ac_net(case: &GridCase, seed: u64) -> Mlp {
    let (lo, hi) = dc2ac_bounds(case);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mlp::new(case.loads.len(), lo, hi, &mut rng)
}

pub fn new_proxy_net(case: &GridCase, seed: u64) -> Mlp {
    let (lo, hi) = proxy_bounds(case);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mlp::new(case.loads.len(), lo, hi, &mut rng)
}

/// Splits the network output into DC-OPF parameters.
pub fn params_from_output(case: &GridCase, y: &DVector<f64>) -> DcParams {
    let n = case.buses.len();
    DcParams {
        gs: y.as_slice()[..n].to_vec(),
        b: y.as_slice()[n..].to_vec(),
    }
}

/// Supervised target [pg; pf; va] from an AC-OPF-labeled sample.
fn target_of(sample: &Sample) -> DVector<f64> {
    let mut t = Vec::with_capacity(sample.pg.len() + sample.pf.len() + sample.va.len());
    t.extend_from_slice(&sample.pg);
    t.extend_from_slice(&sample.pf);
    t.extend_from_slice(&sample.va);
    DVector::from_vec(t)
}

fn stacked_of(sol: &DcSolution) -> DVector<f64> {
    let mut t = Vec::with_capacity(sol.pg.len() + sol.pf.len() + sol.va.len());
    t.extend_from_slice(&sol.pg);
    t.extend_from_slice(&sol.pf);
    t.extend_from_slice(&sol.va);
    DVector::from_vec(t)
}

pub const ACTIVE_SET_EPS: f64 = 1e-6;

/// separates the shuffle RNG stream from the weight-init stream
const SHUFFLE_SALT: u64 = 0x9e3779b97f4a7c15;

/// Loss of one sample under the current network, plus the parameter
/// gradients through the LP layer. None when the LP solve or its
/// linearization fails (the sample is skipped).
fn sample_loss_grad(
    case: &GridCase,
    net: &Mlp,
    sample: &Sample,
    lp_tol: f64,
) -> Option<(f64, Gradients)> {
    let x = normalized_input(case, &sample.pd);
    let (y, cache) = net.forward(&x);
    let params = params_from_output(case, &y);
    params.check(case).ok()?;
    let sol = solve_dcopf(case, &params, &sample.pd, lp_tol).ok()?;
    if sol.lp_solution.status != LpStatus::Optimal {
        return None;
    }
    let target = target_of(sample);
    let pred = stacked_of(&sol);
    let m = pred.len() as f64;
    let diff = &pred - &target;
    let loss = diff.norm_squared() / m;
    let dl = diff * (2.0 / m);
    let (ng, ne) = (sol.pg.len(), sol.pf.len());
    let dl_pg = dl.as_slice()[..ng].to_vec();
    let dl_pf = dl.as_slice()[ng..ng + ne].to_vec();
    let dl_va = dl.as_slice()[ng + ne..].to_vec();
    let lin = crate::diffgrad::linearize_kkt(case, &params, &sample.pd, &sol, ACTIVE_SET_EPS).ok()?;
    let pgrad = lin.adjoint_gradient(&dl_pg, &dl_pf, &dl_va).ok()?;
    // the bounding layer sits between the raw network output and the
    // parameters, so hand d loss / d y straight back to the net
    let mut dl_dy = DVector::zeros(y.len());
    let n = case.buses.len();
    for i in 0..n {
        dl_dy[i] = pgrad.d_gs[i];
    }
    for e in 0..ne {
        dl_dy[n + e] = pgrad.d_b[e];
    }
    let (grads, _) = net.backward(&cache, &dl_dy);
    Some((loss, grads))
}

/// Loss of one sample without gradients; None when the LP fails.
pub fn dc2ac_sample_loss(case: &GridCase, net: &Mlp, sample: &Sample, lp_tol: f64) -> Option<f64> {
    let x = normalized_input(case, &sample.pd);
    let (y, _) = net.forward(&x);
    let params = params_from_output(case, &y);
    params.check(case).ok()?;
    let sol = solve_dcopf(case, &params, &sample.pd, lp_tol).ok()?;
    if sol.lp_solution.status != LpStatus::Optimal {
        return None;
    }
    let diff = stacked_of(&sol) - target_of(sample);
    Some(diff.norm_squared() / diff.len() as f64)
}

/// One optimizer step on a batch: mean loss over usable samples, Adam on
/// the mean gradient. Returns (mean loss, skipped count); None if no
/// sample in the batch was usable.
pub fn dc2ac_step(
    case: &GridCase,
    net: &mut Mlp,
    opt: &mut Adam,
    batch: &[&Sample],
    lp_tol: f64,
) -> Option<(f64, usize)> {
    let mut total = Gradients::zeros_like(net);
    let mut loss_sum = 0.0;
    let mut used = 0usize;
    for sample in batch {
        match sample_loss_grad(case, net, sample, lp_tol) {
            Some((loss, grads)) => {
                total.add(&grads);
                loss_sum += loss;
                used += 1;
            }
            None => {}
        }
    }
    if used == 0 {
        return None;
    }
    total.scale(1.0 / used as f64);
    opt.step(net, &total);
    Some((loss_sum / used as f64, batch.len() - used))
}

pub fn dc2ac_val_loss(case: &GridCase, net: &Mlp, samples: &[Sample], lp_tol: f64) -> (f64, usize) {
    let mut sum = 0.0;
    let mut used = 0usize;
    for s in samples {
        if let Some(loss) = dc2ac_sample_loss(case, net, s, lp_tol) {
            sum += loss;
            used += 1;
        }
    }
    if used == 0 {
        (f64::INFINITY, samples.len())
    } else {
        (sum / used as f64, samples.len() - used)
    }
}

fn check_shapes(case: &GridCase, samples: &[Sample]) -> Result<(), TrainError> {
    for s in samples {
        if s.pd.len() != case.loads.len()
            || s.pg.len() != case.generators.len()
            || s.pf.len() != case.branches.len()
            || s.va.len() != case.buses.len()
        {
            return Err(TrainError::Shape(format!(
                "sample {} has wrong dimensions for this case",
                s.index
            )));
        }
    }
    Ok(())
}

/// Trains the parameter network with early stopping on validation loss;
/// returns the weights from the best validation epoch.
pub fn train_dc2ac(
    case: &GridCase,
    train: &[Sample],
    val: &[Sample],
    config: &TrainConfig,
    mut progress: Option<&mut dyn Write>,
) -> Result<TrainOutcome, TrainError> {
    check_shapes(case, train)?;
    check_shapes(case, val)?;
    let mut net = new_dc2ac_net(case, config.seed);
    let mut opt = Adam::new(&net, config.lr);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_SALT);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_net = net.clone();
    let mut best_epoch = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut skipped = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train[i]).collect();
            if let Some((loss, sk)) = dc2ac_step(case, &mut net, &mut opt, &batch, config.lp_tol) {
                loss_sum += loss;
                batches += 1;
                skipped += sk;
            } else {
                skipped += batch.len();
            }
        }
        if batches == 0 {
            return Err(TrainError::NothingUsable);
        }
        let (val_loss, val_skipped) = dc2ac_val_loss(case, &net, val, config.lp_tol);
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
            skipped: skipped + val_skipped,
        };
        if let Some(out) = progress.as_deref_mut() {
            let _ = writeln!(
                out,
                "epoch {:3}  train {:.6e}  val {:.6e}  skipped {}",
                stats.epoch, stats.train_loss, stats.val_loss, stats.skipped
            );
        }
        history.push(stats);
        if val_loss < best_val {
            best_val = val_loss;
            best_net = net.clone();
            best_epoch = epoch;
        } else if epoch - best_epoch >= config.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        net: best_net,
        history,
        best_val_loss: best_val,
        best_epoch,
    })
}

/// Trains the direct-prediction baseline: the same architecture mapping
/// demands straight to [pg; pf; va] with a plain MSE loss.
pub fn train_proxy(
    case: &GridCase,
    train: &[Sample],
    val: &[Sample],
    config: &TrainConfig,
    mut progress: Option<&mut dyn Write>,
) -> Result<TrainOutcome, TrainError> {
    check_shapes(case, train)?;
    check_shapes(case, val)?;
    let mut net = new_proxy_net(case, config.seed);
    let mut opt = Adam::new(&net, config.lr);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_SALT);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let val_loss_of = |net: &Mlp| -> f64 {
        if val.is_empty() {
            return f64::INFINITY;
        }
        val.iter()
            .map(|s| {
                let (y, _) = net.forward(&normalized_input(case, &s.pd));
                let diff = y - target_of(s);
                diff.norm_squared() / diff.len() as f64
            })
            .sum::<f64>()
            / val.len() as f64
    };
    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_net = net.clone();
    let mut best_epoch = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let mut total = Gradients::zeros_like(&net);
            let mut batch_loss = 0.0;
            for &i in chunk {
                let s = &train[i];
                let (y, cache) = net.forward(&normalized_input(case, &s.pd));
                let target = target_of(s);
                let m = y.len() as f64;
                let diff = &y - &target;
                batch_loss += diff.norm_squared() / m;
                let dl = diff * (2.0 / m);
                let (g, _) = net.backward(&cache, &dl);
                total.add(&g);
            }
            total.scale(1.0 / chunk.len() as f64);
            opt.step(&mut net, &total);
            loss_sum += batch_loss / chunk.len() as f64;
            batches += 1;
        }
        let val_loss = val_loss_of(&net);
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            val_loss,
            skipped: 0,
        };
        if let Some(out) = progress.as_deref_mut() {
            let _ = writeln!(
                out,
                "epoch {:3}  train {:.6e}  val {:.6e}",
                stats.epoch, stats.train_loss, stats.val_loss
            );
        }
        history.push(stats);
        if val_loss < best_val {
            best_val = val_loss;
            best_net = net.clone();
            best_epoch = epoch;
        } else if epoch - best_epoch >= config.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        net: best_net,
        history,
        best_val_loss: best_val,
        best_epoch,
    })
}

// -- evaluation -------------------------------------------------------------

/// Mean absolute error of one method against the AC-OPF labels on one
/// sample, split by quantity.
#[derive(Debug, Clone, Copy, Default)]
pub struct L1Errors {
    pub pg: f64,
    pub pf: f64,
    pub va: f64,
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / a.len() as f64
}

#[derive(Debug, Clone)]
pub struct EvalSample {
    pub index: u64,
    pub total_pd: f64,
    pub dc: Option<L1Errors>,
    pub dc2ac: Option<L1Errors>,
    pub proxy: Option<L1Errors>,
}

#[derive(Debug, Clone, Default)]
pub struct MethodSummary {
    pub samples: usize,
    pub mean: L1Errors,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_sample: Vec<EvalSample>,
    pub dc: MethodSummary,
    pub dc2ac: Option<MethodSummary>,
    pub proxy: Option<MethodSummary>,
    /// fraction of samples where the adjusted model beats nominal DC-OPF on
    /// mean |pg| error; ties count one half
    pub dc2ac_win_rate: Option<f64>,
    pub proxy_win_rate: Option<f64>,
}

/// Scores nominal DC-OPF and optionally the two learned models against the
/// AC-OPF labels.
pub fn evaluate(
    case: &GridCase,
    samples: &[Sample],
    dc2ac: Option<&Mlp>,
    proxy: Option<&Mlp>,
    lp_tol: f64,
) -> Result<EvalReport, TrainError> {
    check_shapes(case, samples)?;
    let nominal = DcParams::nominal(case);
    let mut per_sample = Vec::with_capacity(samples.len());
    for s in samples {
        let dc = solve_dcopf(case, &nominal, &s.pd, lp_tol)
            .ok()
            .filter(|sol| sol.lp_solution.status == LpStatus::Optimal)
            .map(|sol| L1Errors {
                pg: l1(&sol.pg, &s.pg),
                pf: l1(&sol.pf, &s.pf),
                va: l1(&sol.va, &s.va),
            });
        let dc2ac_err = dc2ac.and_then(|net| {
            let (y, _) = net.forward(&normalized_input(case, &s.pd));
            let params = params_from_output(case, &y);
            params.check(case).ok()?;
            let sol = solve_dcopf(case, &params, &s.pd, lp_tol).ok()?;
            if sol.lp_solution.status != LpStatus::Optimal {
                return None;
            }
            Some(L1Errors {
                pg: l1(&sol.pg, &s.pg),
                pf: l1(&sol.pf, &s.pf),
                va: l1(&sol.va, &s.va),
            })
        });
        let proxy_err = proxy.map(|net| {
            let (y, _) = net.forward(&normalized_input(case, &s.pd));
            let ng = case.generators.len();
            let ne = case.branches.len();
            L1Errors {
                pg: l1(&y.as_slice()[..ng], &s.pg),
                pf: l1(&y.as_slice()[ng..ng + ne], &s.pf),
                va: l1(&y.as_slice()[ng + ne..], &s.va),
            }
        });
        per_sample.push(EvalSample {
            index: s.index,
            total_pd: s.pd.iter().sum(),
            dc,
            dc2ac: dc2ac_err,
            proxy: proxy_err,
        });
    }

    let summarize = |pick: &dyn Fn(&EvalSample) -> Option<L1Errors>| -> MethodSummary {
        let mut sum = L1Errors::default();
        let mut count = 0usize;
        for row in &per_sample {
            if let Some(e) = pick(row) {
                sum.pg += e.pg;
                sum.pf += e.pf;
                sum.va += e.va;
                count += 1;
            }
        }
        if count > 0 {
            sum.pg /= count as f64;
            sum.pf /= count as f64;
            sum.va /= count as f64;
        }
        MethodSummary {
            samples: count,
            mean: sum,
        }
    };
    let win_rate = |pick: &dyn Fn(&EvalSample) -> Option<L1Errors>| -> Option<f64> {
        let mut wins = 0.0;
        let mut count = 0usize;
        for row in &per_sample {
            if let (Some(base), Some(e)) = (row.dc, pick(row)) {
                count += 1;
                if e.pg < base.pg {
                    wins += 1.0;
                } else if e.pg == base.pg {
                    wins += 0.5;
                }
            }
        }
        (count > 0).then(|| wins / count as f64)
    };

    let dc_summary = summarize(&|r| r.dc);
    let dc2ac_summary = dc2ac.map(|_| summarize(&|r| r.dc2ac));
    let proxy_summary = proxy.map(|_| summarize(&|r| r.proxy));
    let dc2ac_wr = dc2ac.and_then(|_| win_rate(&|r| r.dc2ac));
    let proxy_wr = proxy.and_then(|_| win_rate(&|r| r.proxy));
    Ok(EvalReport {
        per_sample,
        dc: dc_summary,
        dc2ac: dc2ac_summary,
        proxy: proxy_summary,
        dc2ac_win_rate: dc2ac_wr,
        proxy_win_rate: proxy_wr,
    })
}

impl EvalReport {
    /// Per-sample CSV: one row per sample, blank cells for failed solves.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(
            out,
            "index,total_pd,dc_l1_pg,dc_l1_pf,dc_l1_va,dc2ac_l1_pg,dc2ac_l1_pf,dc2ac_l1_va,proxy_l1_pg,proxy_l1_pf,proxy_l1_va"
        )?;
        let cell = |e: &Option<L1Errors>, f: &dyn Fn(&L1Errors) -> f64| -> String {
            e.as_ref().map(|e| format!("{}", f(e))).unwrap_or_default()
        };
        for row in &self.per_sample {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                row.index,
                row.total_pd,
                cell(&row.dc, &|e| e.pg),
                cell(&row.dc, &|e| e.pf),
                cell(&row.dc, &|e| e.va),
                cell(&row.dc2ac, &|e| e.pg),
                cell(&row.dc2ac, &|e| e.pf),
                cell(&row.dc2ac, &|e| e.va),
                cell(&row.proxy, &|e| e.pg),
                cell(&row.proxy, &|e| e.pf),
                cell(&row.proxy, &|e| e.va),
            )?;
        }
        Ok(())
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let line = |name: &str, m: &MethodSummary| {
            format!(
                "{name:8}  samples {:4}  L1 pg {:.6}  pf {:.6}  va {:.6}\n",
                m.samples, m.mean.pg, m.mean.pf, m.mean.va
            )
        };
        s.push_str(&line("dc-opf", &self.dc));
        if let Some(m) = &self.dc2ac {
            s.push_str(&line("dc2ac", m));
        }
        if let Some(m) = &self.proxy {
            s.push_str(&line("proxy", m));
        }
        if let Some(wr) = self.dc2ac_win_rate {
            s.push_str(&format!("dc2ac win rate vs dc-opf: {:.1}%\n", 100.0 * wr));
        }
        if let Some(wr) = self.proxy_win_rate {
            s.push_str(&format!("proxy win rate vs dc-opf: {:.1}%\n", 100.0 * wr));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, SamplerConfig};
    use crate::testing::{two_bus_case, two_bus_lossy};

    fn lossy_dataset(n: usize, seed: u64) -> (GridCase, crate::datagen::Dataset) {
        let case = two_bus_lossy(0.03);
        let ds = generate_dataset(&case, &SamplerConfig::default(), n, seed, 2).unwrap();
        (case, ds)
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let (case, ds) = lossy_dataset(3, 11);
        let sample = &ds.train[0];
        let net = new_dc2ac_net(&case, 5);
        let (loss0, grads) = sample_loss_grad(&case, &net, sample, 1e-10).unwrap();
        assert!(loss0.is_finite());
        let h = 1e-5;
        let mut checked = 0usize;
        // probe a spread of weights in every layer
        for k in 0..net.layers.len() {
            for idx in [0usize, 7, 23] {
                if idx >= net.layers[k].w.len() {
                    continue;
                }
                let mut plus = net.clone();
                plus.layers[k].w[idx] += h;
                let mut minus = net.clone();
                minus.layers[k].w[idx] -= h;
                let lp = dc2ac_sample_loss(&case, &plus, sample, 1e-10).unwrap();
                let lm = dc2ac_sample_loss(&case, &minus, sample, 1e-10).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let an = grads.layers[k].w[idx];
                let scale = fd.abs().max(an.abs()).max(1e-6);
                assert!(
                    (fd - an).abs() / scale <= 1e-3,
                    "layer {k} w[{idx}]: analytic {an} vs fd {fd}"
                );
                checked += 1;
            }
        }
        assert!(checked >= 6);
    }

    #[test]
    fn training_reduces_validation_loss() {
        let (case, ds) = lossy_dataset(30, 3);
        let config = TrainConfig {
            epochs: 15,
            lr: 1e-3,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let out = train_dc2ac(&case, &ds.train, &ds.val, &config, None).unwrap();
        let first = out.history.first().unwrap().val_loss;
        assert!(
            out.best_val_loss < first,
            "val loss never improved: {first} -> {}",
            out.best_val_loss
        );
    }

    #[test]
    fn training_is_seed_deterministic() {
        let (case, ds) = lossy_dataset(12, 21);
        let config = TrainConfig {
            epochs: 3,
            lr: 1e-3,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let a = train_dc2ac(&case, &ds.train, &ds.val, &config, None).unwrap();
        let b = train_dc2ac(&case, &ds.train, &ds.val, &config, None).unwrap();
        for (la, lb) in a.net.layers.iter().zip(&b.net.layers) {
            assert_eq!(la.w.as_slice(), lb.w.as_slice());
            assert_eq!(la.b.as_slice(), lb.b.as_slice());
        }
        assert_eq!(a.history.len(), b.history.len());
        for (ha, hb) in a.history.iter().zip(&b.history) {
            assert_eq!(ha.train_loss.to_bits(), hb.train_loss.to_bits());
            assert_eq!(ha.val_loss.to_bits(), hb.val_loss.to_bits());
        }
    }

    #[test]
    fn proxy_training_fits_direct_targets() {
        let (case, ds) = lossy_dataset(30, 8);
        let config = TrainConfig {
            epochs: 200,
            lr: 5e-3,
            batch_size: 8,
            patience: 200,
            ..TrainConfig::default()
        };
        let out = train_proxy(&case, &ds.train, &ds.val, &config, None).unwrap();
        let first = out.history.first().unwrap().val_loss;
        assert!(out.best_val_loss < 0.5 * first, "{first} -> {}", out.best_val_loss);
    }

    #[test]
    fn adjusted_model_beats_nominal_dc_on_lossy_case() {
        // the core claim, in miniature: after training, the adjusted DC-OPF
        // tracks AC-OPF dispatch better than the nominal DC-OPF
        let (case, ds) = lossy_dataset(60, 17);
        let config = TrainConfig {
            epochs: 30,
            lr: 2e-3,
            batch_size: 8,
            patience: 30,
            ..TrainConfig::default()
        };
        let out = train_dc2ac(&case, &ds.train, &ds.val, &config, None).unwrap();
        let report = evaluate(&case, &ds.val, Some(&out.net), None, 1e-8).unwrap();
        let dc2ac = report.dc2ac.unwrap();
        assert!(
            dc2ac.mean.pg < report.dc.mean.pg,
            "dc2ac {:.6} not better than dc {:.6}",
            dc2ac.mean.pg,
            report.dc.mean.pg
        );
        assert!(report.dc2ac_win_rate.unwrap() > 0.5);
    }

    #[test]
    fn evaluate_lossless_case_dc_is_already_exact() {
        // on a lossless radial case nominal DC-OPF dispatch matches AC-OPF
        let case = two_bus_case();
        let ds = generate_dataset(&case, &SamplerConfig::default(), 10, 4, 1).unwrap();
        let report = evaluate(&case, &ds.train, None, None, 1e-9).unwrap();
        assert!(report.dc.mean.pg < 1e-4, "dc pg error {}", report.dc.mean.pg);
    }

    #[test]
    fn eval_csv_layout() {
        let (case, ds) = lossy_dataset(6, 2);
        let report = evaluate(&case, &ds.val, None, None, 1e-8).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("index,total_pd,dc_l1_pg"));
        assert_eq!(text.lines().count(), 1 + report.per_sample.len());
    }
}
