//! Command-line interface: dataset generation, one-off AC/DC solves,
//! training, evaluation, and SVG plots. Every artifact-producing command
//! writes a manifest recording the resolved configuration and the SHA-256
//! of its inputs.
//!
//! Exit codes: 0 success, 1 solver or convergence failure, 2 bad usage or
//! unreadable/invalid input.

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::acopf::{check_ac_feasibility, solve_acopf, AcSolution};
use crate::datagen::{generate_dataset, Dataset, SamplerConfig};
use crate::dcopf::{solve_dcopf, DcParams, DcSolution};
use crate::grid::{parse_case, GridCase};
use crate::nnet::Mlp;
use crate::train::{
    evaluate, normalized_input, params_from_output, train_dc2ac,
    train_proxy, TrainConfig,
};

#[derive(Debug)]
pub enum CliError {
    /// unreadable files, malformed cases/datasets, inconsistent inputs
    Input(String),
    /// a solver failed to converge or training produced nothing usable
    Solve(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Solve(m) => write!(f, "solve error: {m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Solve(_) => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn input_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn solve_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Solve(e.to_string())
}

#[derive(Parser, Debug)]
#[command(
    name = "dc2ac",
    about = "Learning DC-OPF parameter adjustments that track AC-OPF dispatch",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample load scenarios and label them with AC-OPF solutions
    Generate(GenerateArgs),
    /// Solve the AC-OPF for one demand scenario
    SolveAc(SolveAcArgs),
    /// Solve the (optionally adjusted) DC-OPF for one demand scenario
    SolveDc(SolveDcArgs),
    /// Train the parameter-adjustment network (or the direct baseline)
    Train(TrainArgs),
    /// Score models against AC-OPF labels
    Evaluate(EvaluateArgs),
    /// Render a CSV produced by `evaluate` or `train` as an SVG
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// grid case file (native or MATPOWER subset)
    #[arg(long)]
    case: PathBuf,
    /// output dataset file
    #[arg(long)]
    out: PathBuf,
    /// number of scenarios to attempt
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// solver threads
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 0.7)]
    alpha_min: f64,
    #[arg(long, default_value_t = 1.1)]
    alpha_max: f64,
    #[arg(long, default_value_t = 0.15)]
    eps_max: f64,
    /// also export the dataset as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveAcArgs {
    #[arg(long)]
    case: PathBuf,
    /// scale all reference demands by this factor
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// write the solution as CSV here instead of a table on stdout
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveDcArgs {
    #[arg(long)]
    case: PathBuf,
    /// scale all reference demands by this factor
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// checkpoint of a trained parameter network; omitted = nominal params
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    case: PathBuf,
    /// dataset produced by `generate` for the same case
    #[arg(long)]
    data: PathBuf,
    /// checkpoint output path
    #[arg(long)]
    out: PathBuf,
    /// train the direct-prediction baseline instead of the adjustment net
    #[arg(long, default_value_t = false)]
    proxy: bool,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// tolerance of the inner DC-OPF solves
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = false)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    case: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// adjustment-network checkpoint
    #[arg(long)]
    model: Option<PathBuf>,
    /// direct-baseline checkpoint
    #[arg(long)]
    proxy_model: Option<PathBuf>,
    /// which split to score
    #[arg(long, default_value = "val")]
    split: String,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// per-sample results as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// CSV from `evaluate --csv` or a training history CSV
    #[arg(long)]
    input: PathBuf,
    /// SVG output path
    #[arg(long)]
    out: PathBuf,
}

/// Parses argv and runs; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through this path too
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("dc2ac: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::SolveAc(a) => cmd_solve_ac(a),
        Command::SolveDc(a) => cmd_solve_dc(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

fn load_case(path: &Path) -> CliResult<GridCase> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let (case, warnings) = parse_case(&text).map_err(input_err)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(case)
}

fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut hex = String::with_capacity(64);
    for b in Sha256::digest(&bytes) {
        let _ = write!(hex, "{b:02x}");
    }
    Ok(hex)
}

fn load_model(path: &Path, case: &GridCase, expect_outputs: usize) -> CliResult<Mlp> {
    let mut file = fs::File::open(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let net = Mlp::read_from(&mut file).map_err(input_err)?;
    if net.n_inputs() != case.loads.len() || net.n_outputs() != expect_outputs {
        return Err(CliError::Input(format!(
            "checkpoint {} has shape {}->{}, case needs {}->{}",
            path.display(),
            net.n_inputs(),
            net.n_outputs(),
            case.loads.len(),
            expect_outputs
        )));
    }
    Ok(net)
}

fn write_manifest(path: &Path, body: &str) -> CliResult<()> {
    fs::write(crate::datagen::manifest_path(path), body)
        .map_err(|e| CliError::Input(format!("cannot write manifest: {e}")))
}

fn cmd_generate(a: GenerateArgs) -> CliResult<()> {
    let case = load_case(&a.case)?;
    let config = SamplerConfig {
        alpha_min: a.alpha_min,
        alpha_max: a.alpha_max,
        eps_max: a.eps_max,
    };
    config.validate().map_err(input_err)?;
    let ds = generate_dataset(&case, &config, a.samples, a.seed, a.workers).map_err(solve_err)?;
    ds.save(&a.out).map_err(input_err)?;
    if let Some(csv) = &a.csv {
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).map_err(input_err)?;
        fs::write(csv, buf).map_err(input_err)?;
    }
    println!(
        "wrote {}: {} train + {} val samples ({} attempted, {} failed)",
        a.out.display(),
        ds.train.len(),
        ds.val.len(),
        ds.attempted,
        ds.failed
    );
    Ok(())
}

fn scaled_demands(case: &GridCase, scale: f64) -> (Vec<f64>, Vec<f64>) {
    (
        case.loads.iter().map(|l| scale * l.pd_ref).collect(),
        case.loads.iter().map(|l| scale * l.qd_ref).collect(),
    )
}

fn solution_rows_ac(sol: &AcSolution) -> Vec<(String, usize, f64)> {
    let mut rows = Vec::new();
    let mut push = |name: &str, values: &[f64]| {
        for (i, &v) in values.iter().enumerate() {
            rows.push((name.to_string(), i, v));
        }
    };
    push("pg", &sol.pg);
    push("qg", &sol.qg);
    push("vm", &sol.vm);
    push("va", &sol.va);
    push("pf", &sol.pf);
    push("qf", &sol.qf);
    push("pt", &sol.pt);
    push("qt", &sol.qt);
    rows.push(("objective".to_string(), 0, sol.objective));
    rows
}

fn solution_rows_dc(sol: &DcSolution) -> Vec<(String, usize, f64)> {
    let mut rows = Vec::new();
    let mut push = |name: &str, values: &[f64]| {
        for (i, &v) in values.iter().enumerate() {
            rows.push((name.to_string(), i, v));
        }
    };
    push("pg", &sol.pg);
    push("pf", &sol.pf);
    push("va", &sol.va);
    push("shed", &sol.phi);
    push("price", &sol.lambda_p);
    rows.push(("objective".to_string(), 0, sol.objective));
    rows
}

fn emit_solution(rows: &[(String, usize, f64)], csv: Option<&Path>) -> CliResult<()> {
    match csv {
        Some(path) => {
            let mut text = String::from("quantity,index,value\n");
            for (name, i, v) in rows {
                let _ = writeln!(text, "{name},{i},{v}");
            }
            fs::write(path, text).map_err(input_err)?;
        }
        None => {
            // ignore write failures (e.g. a closed pipe when paging output)
            use std::io::Write as _;
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for (name, i, v) in rows {
                if writeln!(out, "{name:10} {i:4} {v:18.10}").is_err() {
                    break;
                }
            }
        }
    }
    Ok(())
}

fn cmd_solve_ac(a: SolveAcArgs) -> CliResult<()> {
    let case = load_case(&a.case)?;
    let (pd, qd) = scaled_demands(&case, a.scale);
    let sol = solve_acopf(&case, &pd, &qd, a.tol).map_err(solve_err)?;
    let report = check_ac_feasibility(&case, &sol, &pd, &qd);
    if !report.pass(100.0 * a.tol) {
        return Err(CliError::Solve(format!(
            "solution failed the feasibility check (max violation {:.3e})",
            report.max()
        )));
    }
    emit_solution(&solution_rows_ac(&sol), a.csv.as_deref())?;
    eprintln!("kkt residual {:.3e}", sol.kkt_residual);
    Ok(())
}

fn cmd_solve_dc(a: SolveDcArgs) -> CliResult<()> {
    let case = load_case(&a.case)?;
    let (pd, _) = scaled_demands(&case, a.scale);
    let params = match &a.model {
        Some(path) => {
            let net = load_model(path, &case, case.buses.len() + case.branches.len())?;
            let (y, _) = net.forward(&normalized_input(&case, &pd));
            params_from_output(&case, &y)
        }
        None => DcParams::nominal(&case),
    };
    let sol = solve_dcopf(&case, &params, &pd, a.tol).map_err(solve_err)?;
    emit_solution(&solution_rows_dc(&sol), a.csv.as_deref())?;
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let case = load_case(&a.case)?;
    let ds = Dataset::load(&a.data, Some(&case.hash())).map_err(input_err)?;
    let config = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        patience: a.patience,
        seed: a.seed,
        lp_tol: a.tol,
    };
    let mut stderr = std::io::stderr();
    let progress: Option<&mut dyn std::io::Write> =
        if a.quiet { None } else { Some(&mut stderr) };
    let outcome = if a.proxy {
        train_proxy(&case, &ds.train, &ds.val, &config, progress)
    } else {
        train_dc2ac(&case, &ds.train, &ds.val, &config, progress)
    }
    .map_err(solve_err)?;
    let mut file = fs::File::create(&a.out)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", a.out.display())))?;
    outcome.net.write_to(&mut file).map_err(input_err)?;

    let mut history = String::from("epoch,train_loss,val_loss,skipped\n");
    for h in &outcome.history {
        let _ = writeln!(history, "{},{},{},{}", h.epoch, h.train_loss, h.val_loss, h.skipped);
    }
    let history_path = a.out.with_extension("history.csv");
    fs::write(&history_path, history).map_err(input_err)?;

    write_manifest(
        &a.out,
        &format!(
            "dc2ac training manifest\n\
             mode = {}\n\
             case = {}\n\
             case_hash = {}\n\
             dataset = {}\n\
             dataset_sha256 = {}\n\
             epochs = {}\nlr = {}\nbatch_size = {}\npatience = {}\nseed = {}\nlp_tol = {}\n\
             best_epoch = {}\nbest_val_loss = {}\n\
             history = {}\n",
            if a.proxy { "proxy" } else { "dc2ac" },
            a.case.display(),
            case.hash(),
            a.data.display(),
            file_sha256(&a.data)?,
            config.epochs,
            config.lr,
            config.batch_size,
            config.patience,
            config.seed,
            config.lp_tol,
            outcome.best_epoch,
            outcome.best_val_loss,
            history_path.display(),
        ),
    )?;
    println!(
        "wrote {} (best val loss {:.6e} at epoch {})",
        a.out.display(),
        outcome.best_val_loss,
        outcome.best_epoch
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult<()> {
    let case = load_case(&a.case)?;
    let ds = Dataset::load(&a.data, Some(&case.hash())).map_err(input_err)?;
    let samples: Vec<_> = match a.split.as_str() {
        "train" => ds.train.clone(),
        "val" => ds.val.clone(),
        "all" => ds.train.iter().chain(&ds.val).cloned().collect(),
        other => {
            return Err(CliError::Input(format!(
                "unknown split {other:?} (expected train, val, or all)"
            )))
        }
    };
    if samples.is_empty() {
        return Err(CliError::Input("selected split is empty".into()));
    }
    let n_params = case.buses.len() + case.branches.len();
    let n_direct = case.generators.len() + case.branches.len() + case.buses.len();
    let model = a
        .model
        .as_deref()
        .map(|p| load_model(p, &case, n_params))
        .transpose()?;
    let proxy = a
        .proxy_model
        .as_deref()
        .map(|p| load_model(p, &case, n_direct))
        .transpose()?;
    let report = evaluate(&case, &samples, model.as_ref(), proxy.as_ref(), a.tol).map_err(solve_err)?;
    print!("{}", report.summary_text());
    if let Some(csv) = &a.csv {
        let mut buf = Vec::new();
        report.write_csv(&mut buf).map_err(input_err)?;
        fs::write(csv, buf).map_err(input_err)?;
        write_manifest(
            csv,
            &format!(
                "dc2ac evaluation manifest\n\
                 case = {}\ncase_hash = {}\ndataset = {}\ndataset_sha256 = {}\n\
                 split = {}\nsamples = {}\ntol = {}\nmodel = {}\nproxy_model = {}\n",
                a.case.display(),
                case.hash(),
                a.data.display(),
                file_sha256(&a.data)?,
                a.split,
                samples.len(),
                a.tol,
                a.model.as_deref().map(|p| p.display().to_string()).unwrap_or_default(),
                a.proxy_model.as_deref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
        )?;
    }
    Ok(())
}

// -- plotting ---------------------------------------------------------------

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
}

fn parse_csv(text: &str) -> CliResult<(Vec<String>, Vec<Vec<Option<f64>>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| CliError::Input("empty CSV".into()))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<Option<f64>> = line
            .split(',')
            .map(|c| {
                let c = c.trim();
                if c.is_empty() || c == "train" || c == "val" {
                    None
                } else {
                    c.parse::<f64>().ok()
                }
            })
            .collect();
        if cells.len() != header.len() {
            return Err(CliError::Input(format!(
                "CSV row {} has {} cells, header has {}",
                lineno + 2,
                cells.len(),
                header.len()
            )));
        }
        rows.push(cells);
    }
    Ok((header, rows))
}

fn cmd_plot(a: PlotArgs) -> CliResult<()> {
    let text = fs::read_to_string(&a.input)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", a.input.display())))?;
    let (header, rows) = parse_csv(&text)?;
    let col = |name: &str| header.iter().position(|h| h == name);
    let mut series = Vec::new();
    let (x_label, y_label, scatter);
    if let (Some(xi), Some(t), Some(v)) = (col("epoch"), col("train_loss"), col("val_loss")) {
        for (name, yi) in [("train loss", t), ("val loss", v)] {
            series.push(Series {
                name: name.to_string(),
                points: rows
                    .iter()
                    .filter_map(|r| Some((r[xi]?, r[yi]?)))
                    .collect(),
            });
        }
        (x_label, y_label, scatter) = ("epoch", "loss", false);
    } else if let Some(xi) = col("total_pd") {
        for (name, column) in [
            ("dc-opf", "dc_l1_pg"),
            ("dc2ac", "dc2ac_l1_pg"),
            ("proxy", "proxy_l1_pg"),
        ] {
            if let Some(yi) = col(column) {
                let points: Vec<(f64, f64)> = rows
                    .iter()
                    .filter_map(|r| Some((r[xi]?, r[yi]?)))
                    .collect();
                if !points.is_empty() {
                    series.push(Series {
                        name: name.to_string(),
                        points,
                    });
                }
            }
        }
        (x_label, y_label, scatter) = ("total demand (p.u.)", "mean |pg error| (p.u.)", true);
    } else {
        return Err(CliError::Input(
            "unrecognized CSV layout: expected evaluate output (total_pd, *_l1_pg) or training history (epoch, train_loss, val_loss)".into(),
        ));
    }
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(CliError::Input("no plottable points in CSV".into()));
    }
    let svg = render_svg(&series, x_label, y_label, scatter);
    fs::write(&a.out, svg).map_err(input_err)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

const PALETTE: [&str; 4] = ["#1f6fb2", "#d1495b", "#3a7d44", "#8d6b94"];

/// Fixed-size, dependency-free SVG. All coordinates are formatted with two
/// decimals so identical data yields identical bytes.
fn render_svg(series: &[Series], x_label: &str, y_label: &str, scatter: bool) -> String {
    let (w, h) = (640.0, 480.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 20.0, 50.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    if xmin == xmax {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if ymin == ymax {
        ymin -= 0.5;
        ymax += 0.5;
    }
    let xpad = 0.03 * (xmax - xmin);
    let ypad = 0.06 * (ymax - ymin);
    let (xmin, xmax) = (xmin - xpad, xmax + xpad);
    let (ymin, ymax) = (ymin - ypad, ymax + ypad);
    let px = |x: f64| ml + (x - xmin) / (xmax - xmin) * pw;
    let py = |y: f64| mt + ph - (y - ymin) / (ymax - ymin) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    // axes
    let _ = writeln!(
        svg,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        ml,
        mt + ph,
        ml + pw,
        mt + ph
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        ml, mt, ml, mt + ph
    );
    // ticks
    for k in 0..=4 {
        let fx = xmin + (xmax - xmin) * k as f64 / 4.0;
        let fy = ymin + (ymax - ymin) * k as f64 / 4.0;
        let tx = px(fx);
        let ty = py(fy);
        let _ = writeln!(
            svg,
            r#"<line x1="{tx:.2}" y1="{:.2}" x2="{tx:.2}" y2="{:.2}" stroke="black"/>"#,
            mt + ph,
            mt + ph + 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{tx:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            mt + ph + 18.0,
            format_tick(fx)
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{ty:.2}" x2="{ml:.2}" y2="{ty:.2}" stroke="black"/>"#,
            ml - 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"#,
            ml - 8.0,
            ty + 4.0,
            format_tick(fy)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{x_label}</text>"#,
        ml + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.2})">{y_label}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0
    );
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        if scatter {
            for &(x, y) in &s.points {
                let _ = writeln!(
                    svg,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}" fill-opacity="0.7"/>"#,
                    px(x),
                    py(y)
                );
            }
        } else {
            let mut pts = s.points.clone();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let path: Vec<String> = pts
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                path.join(" ")
            );
        }
        let ly = mt + 16.0 + 16.0 * si as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{:.2}" y="{:.2}" width="10" height="10" fill="{color}"/>"#,
            ml + pw - 110.0,
            ly - 9.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{ly:.2}" font-size="12">{}</text>"#,
            ml + pw - 95.0,
            s.name
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 1000.0 || a < 0.001 {
        format!("{v:.1e}")
    } else if a >= 10.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}
