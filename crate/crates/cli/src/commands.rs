use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gwalk_core::epsnet::{TABLE_ALPHA, TABLE_GAP, TABLE_N};
use gwalk_core::graph::io::{read_coordinate_list, read_labels, read_node_ids, read_points_csv};
use gwalk_core::graph::{build_gaussian_affinity, build_knn_affinity};
use gwalk_core::json::format_real;
use gwalk_core::scan::{align_labels, report_distribution, write_scan_dump};
use gwalk_core::simlab::{monte_carlo_sweep, CircleModel, EpsChoice, TrialSettings};
use gwalk_core::spectral::{decompose_cached, lambda_below_one, save_spectra};
use gwalk_core::{
    build_operator, decompose, table_epsilon, tune_epsilon, ComponentSpectrum, DiffusionOperator, Direction, EpsGrid,
    EpsNet, LabelSet, Prior, SinkhornOptions, TestOptions, TestReport,
};
use log::{info, warn};
use serde::Serialize;

use crate::config::*;

/// Runs one subcommand on a thread pool of the configured size.
pub fn run(cfg: &RunConfig) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("starting the worker pool")?;
    pool.install(|| match &cfg.command {
        Command::BuildGraph(a) => cmd_build_graph(a).map(drop),
        Command::Test(a) => cmd_test(a).map(drop),
        Command::TuneEps(a) => cmd_tune_eps(a),
        Command::Simulate(SimulateCommand::Circle(a)) => cmd_simulate_circle(a),
        Command::Dump(DumpCommand::Distribution(a)) => cmd_dump_distribution(a),
        Command::Dump(DumpCommand::Scan(a)) => cmd_dump_scan(a),
        Command::Dump(DumpCommand::Net(a)) => cmd_dump_net(a),
    })
}

pub fn cmd_build_graph(args: &BuildGraphArgs) -> Result<DiffusionOperator> {
    let ids = args.node_ids.as_deref().map(read_node_ids).transpose()?;
    let k = if let Some(coo) = &args.coo {
        read_coordinate_list(coo, ids)?
    } else {
        let path = args.points.as_deref().expect("clap requires --coo or --points");
        let points = read_points_csv(path)?;
        let k = match (args.knn, args.gaussian) {
            (Some(k), _) => build_knn_affinity(&points, k)?,
            (None, Some(sigma)) => build_gaussian_affinity(&points, sigma, args.zero_diagonal, args.kernel_floor)?,
            (None, None) => bail!("--points needs either --knn or --gaussian"),
        };
        match ids {
            Some(ids) => k.with_node_ids(ids)?,
            None => k,
        }
    };
    info!("kernel: {} nodes, {} nonzeros", k.n(), k.nnz());
    let op = build_operator(&k, SinkhornOptions { tol: args.tol, max_iter: args.max_iter })?;
    let scaling = op.scaling();
    if !scaling.pruned_nodes.is_empty() {
        warn!("pruned {} node(s) to make the kernel scalable", scaling.pruned_nodes.len());
    }
    info!(
        "operator: {} nodes in {} component(s); Sinkhorn took {} iterations, row error {:.3e}",
        op.n(),
        op.components().len(),
        scaling.iterations,
        scaling.max_row_err
    );
    op.save(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(path) = &args.spectra {
        let spectra = decompose(&op)?;
        save_spectra(path, &op, &spectra)?;
    }
    Ok(op)
}

/// Loads an operator (or builds one from a raw coordinate list) and its
/// spectra.
pub fn load_graph(args: &GraphArgs) -> Result<(DiffusionOperator, Vec<ComponentSpectrum>)> {
    let path = &args.graph;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let op = if is_json || DiffusionOperator::is_binary_file(path) {
        DiffusionOperator::load(path)?
    } else {
        info!("{} is not an operator file; reading it as a coordinate-list kernel", path.display());
        build_operator(&read_coordinate_list(path, None)?, SinkhornOptions::default())?
    };
    let spectra = match &args.spectra {
        Some(cache) => decompose_cached(&op, cache)?,
        None => decompose(&op)?,
    };
    Ok((op, spectra))
}

/// Epsilon for a graph; `alpha` is the level that enters the threshold.
pub fn resolve_epsilon(mode: EpsilonArg, op: &DiffusionOperator, spectra: &[ComponentSpectrum], alpha: f64) -> Result<f64> {
    let n = op.n() as f64;
    let gap = 1.0 - lambda_below_one(spectra);
    let eps = match mode {
        EpsilonArg::Value(e) => e,
        EpsilonArg::Auto => tune_epsilon(n, alpha, gap, &EpsGrid::default())?.best_eps,
        EpsilonArg::Table => table_epsilon(n, alpha, gap)?,
    };
    info!("epsilon = {eps} (n = {n}, alpha = {alpha}, gap = {gap:.3e})");
    Ok(eps)
}

fn prior(arg: PriorArg) -> Prior {
    match arg {
        PriorArg::Known(p) => Prior::Known(p),
        PriorArg::Unknown => Prior::Unknown,
    }
}

fn directions(arg: DirectionArg) -> Vec<Direction> {
    match arg {
        DirectionArg::Greater => vec![Direction::Greater],
        DirectionArg::Less => vec![Direction::Less],
        DirectionArg::Both => vec![Direction::Greater, Direction::Less],
    }
}

fn direction_name(d: Direction) -> &'static str {
    match d {
        Direction::Greater => "greater",
        Direction::Less => "less",
    }
}

/// `out` itself for a single direction, `<stem>.<direction>.<ext>` for both.
pub fn direction_path(out: &Path, direction: Direction, both: bool) -> PathBuf {
    if !both {
        return out.to_path_buf();
    }
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut name = format!("{stem}.{}", direction_name(direction));
    if let Some(ext) = out.extension() {
        name.push('.');
        name.push_str(&ext.to_string_lossy());
    }
    out.with_file_name(name)
}

struct Prepared {
    op: DiffusionOperator,
    spectra: Vec<ComponentSpectrum>,
    net: EpsNet,
    labels: LabelSet,
}

fn prepare(args: &ScanArgs) -> Result<Prepared> {
    let (op, spectra) = load_graph(&args.graph)?;
    let file = read_labels(&args.labels)?;
    let z = align_labels(&op, &file)?;
    let prior = prior(args.prior);
    let labels = LabelSet::new(z, prior, Direction::Greater)?;
    let alpha_eff = match prior {
        Prior::Known(_) => args.alpha,
        Prior::Unknown => args.alpha / 2.0,
    };
    let eps = resolve_epsilon(args.epsilon, &op, &spectra, alpha_eff)?;
    let net = EpsNet::build(&op, &spectra, eps)?;
    info!("epsilon-net: {} hypotheses over {} nodes", net.total_count(), op.n());
    Ok(Prepared { op, spectra, net, labels })
}

/// Runs the test in each requested direction and writes the reports.
pub fn cmd_test(args: &TestArgs) -> Result<Vec<(PathBuf, TestReport)>> {
    let prep = prepare(&args.scan)?;
    let both = args.scan.direction == DirectionArg::Both;
    let opts = TestOptions { alpha: args.scan.alpha, max_rejections: args.max_rejections };
    let mut out = Vec::new();
    for direction in directions(args.scan.direction) {
        let labels = prep.labels.with_direction(direction);
        let report = gwalk_core::run_test_with(&prep.op, &prep.spectra, &prep.net, &labels, &opts)?;
        info!(
            "{}: threshold {:.6}, {} rejection(s), p = {}",
            direction_name(direction),
            report.threshold,
            report.total_rejections,
            report.p_used
        );
        let path = direction_path(&args.out, direction, both);
        write_json(&path, &report)?;
        if let Some(dir) = &args.dump_distributions {
            dump_rejections(dir, direction, &prep, &report, args.dump_top)?;
        }
        out.push((path, report));
    }
    Ok(out)
}

fn file_safe(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn dump_rejections(dir: &Path, direction: Direction, prep: &Prepared, report: &TestReport, top: usize) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let count = if top == 0 { report.rejections.len() } else { top.min(report.rejections.len()) };
    for (rank, r) in report.rejections[..count].iter().enumerate() {
        let name = format!("{}-{:04}-node{}-t{}.csv", direction_name(direction), rank + 1, file_safe(&r.node_id), r.t);
        write_distribution(&dir.join(name), &prep.op, &prep.spectra, r.i, r.t, 0.9)?;
    }
    Ok(())
}

fn write_distribution(
    path: &Path,
    op: &DiffusionOperator,
    spectra: &[ComponentSpectrum],
    i: usize,
    t: u64,
    mass: f64,
) -> Result<()> {
    let d = report_distribution(op, spectra, i, t, mass);
    let mut w = create(path)?;
    writeln!(w, "node_id,probability")?;
    for (&j, &pj) in d.nodes.iter().zip(&d.probabilities) {
        writeln!(w, "{},{}", op.node_ids()[j], format_real(pj))?;
    }
    w.flush()?;
    info!(
        "{}: {} of {} node(s) hold {:.4} of the mass",
        path.display(),
        d.top_nodes.len(),
        d.nodes.len(),
        d.top_mass
    );
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn cmd_tune_eps(args: &TuneEpsArgs) -> Result<()> {
    let grid = EpsGrid { lo: args.grid_lo, hi: args.grid_hi, points: args.grid_points };
    let mut cells = Vec::new();
    if args.table {
        for &alpha in &TABLE_ALPHA {
            for &n in &TABLE_N {
                cells.extend(TABLE_GAP.iter().map(|&gap| (n, alpha, gap)));
            }
        }
    } else {
        for &alpha in &args.alpha {
            for &n in &args.n {
                cells.extend(args.gap.iter().map(|&gap| (n, alpha, gap)));
            }
        }
    }
    let sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut table = csv::Writer::from_writer(sink);
    table.write_record(["n", "alpha", "gap", "epsilon", "h"])?;
    let mut curve = args.curve.as_deref().map(create).transpose()?.map(csv::Writer::from_writer);
    if let Some(c) = curve.as_mut() {
        c.write_record(["n", "alpha", "gap", "epsilon", "h"])?;
    }
    for (n, alpha, gap) in cells {
        let tuned = tune_epsilon(n, alpha, gap, &grid)?;
        table.serialize((n, alpha, gap, tuned.best_eps, tuned.best_h))?;
        if let Some(c) = curve.as_mut() {
            for (&e, &h) in tuned.grid.iter().zip(&tuned.h_values) {
                c.serialize((n, alpha, gap, e, h))?;
            }
        }
    }
    table.flush()?;
    if let Some(mut c) = curve {
        c.flush()?;
    }
    Ok(())
}

pub fn cmd_simulate_circle(args: &CircleArgs) -> Result<()> {
    let epsilon = match args.epsilon {
        EpsilonArg::Auto => EpsChoice::Tuned,
        EpsilonArg::Value(e) => EpsChoice::Fixed(e),
        EpsilonArg::Table => bail!("simulate supports --epsilon auto or a value"),
    };
    if args.b.is_empty() {
        bail!("--b needs at least one value");
    }
    let settings = TrialSettings { alpha: args.alpha, epsilon };
    let mut grid = csv::Writer::from_writer(create(&args.out)?);
    grid.write_record(["n", "b", "omega", "reject_rate", "mean_tv_error", "mean_best_statistic", "gamma_theory"])?;
    let mut summaries = Vec::new();
    for &n in &args.n {
        for &omega in &args.omega {
            let model = CircleModel { n, p: args.p, b: args.b[0], omega, sigma: args.sigma, seed: args.seed };
            info!("circle: n = {n}, omega = {omega}, {} trial(s)", args.trials);
            for s in monte_carlo_sweep(&model, &args.b, args.trials, &settings)? {
                grid.serialize((
                    n,
                    s.model.b,
                    omega,
                    s.reject_rate,
                    s.mean_tv_error,
                    s.mean_best_statistic,
                    s.gamma_theory,
                ))?;
                summaries.push(s);
            }
        }
    }
    grid.flush()?;
    if let Some(path) = &args.outcomes {
        write_json(path, &summaries)?;
    }
    Ok(())
}

pub fn cmd_dump_distribution(args: &DistributionArgs) -> Result<()> {
    let (op, spectra) = load_graph(&args.graph)?;
    let Some(i) = op.node_ids().iter().position(|id| *id == args.node) else {
        bail!("node `{}` is not in the graph (it may have been pruned)", args.node);
    };
    write_distribution(&args.out, &op, &spectra, i, args.t, args.mass)
}

pub fn cmd_dump_scan(args: &ScanDumpArgs) -> Result<()> {
    let prep = prepare(&args.scan)?;
    let both = args.scan.direction == DirectionArg::Both;
    for direction in directions(args.scan.direction) {
        let mut w = create(&direction_path(&args.out, direction, both))?;
        let labels = prep.labels.with_direction(direction);
        write_scan_dump(&mut w, &prep.op, &prep.spectra, &prep.net, &labels, args.scan.alpha)?;
        w.flush()?;
    }
    Ok(())
}

pub fn cmd_dump_net(args: &NetDumpArgs) -> Result<()> {
    let (op, spectra) = load_graph(&args.graph)?;
    let eps = resolve_epsilon(args.epsilon, &op, &spectra, args.alpha)?;
    write_json(&args.out, &EpsNet::build(&op, &spectra, eps)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_directions_get_suffixed_names() {
        let out = Path::new("/tmp/run/report.json");
        assert_eq!(direction_path(out, Direction::Less, false), out);
        assert_eq!(direction_path(out, Direction::Greater, true), Path::new("/tmp/run/report.greater.json"));
        assert_eq!(direction_path(Path::new("r"), Direction::Less, true), Path::new("r.less"));
    }

    #[test]
    fn node_ids_are_made_file_safe() {
        assert_eq!(file_safe("cell/7 a"), "cell_7_a");
    }
}
