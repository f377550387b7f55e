use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gwalk_core::graph::{DEFAULT_KERNEL_FLOOR, DEFAULT_MAX_ITER, DEFAULT_TOL};

#[derive(Debug, Clone, Parser)]
#[command(name = "gwalk", version = crate::VERSION, about = "Local two-sample testing with random-walk scan statistics")]
pub struct RunConfig {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "GWALK_THREADS")]
    pub threads: Option<usize>,

    /// Log more (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Build the diffusion operator from a kernel or a point cloud.
    BuildGraph(BuildGraphArgs),
    /// Run the local two-sample test.
    Test(TestArgs),
    /// Tabulate the penalty-minimizing epsilon.
    TuneEps(TuneEpsArgs),
    /// Monte-Carlo experiments on synthetic data.
    #[command(subcommand)]
    Simulate(SimulateCommand),
    /// Write intermediate quantities for inspection.
    #[command(subcommand)]
    Dump(DumpCommand),
}

#[derive(Debug, Clone, Args)]
pub struct BuildGraphArgs {
    /// Kernel as a 0-based `i,j,value` coordinate list.
    #[arg(long, conflicts_with = "points", required_unless_present = "points")]
    pub coo: Option<PathBuf>,

    /// Point cloud CSV, one sample per row.
    #[arg(long)]
    pub points: Option<PathBuf>,

    /// Symmetric kNN graph on the point cloud.
    #[arg(long, requires = "points", conflicts_with = "gaussian")]
    pub knn: Option<usize>,

    /// Gaussian kernel exp(-d^2 / SIGMA) on the point cloud.
    #[arg(long, requires = "points", value_parser = positive)]
    pub gaussian: Option<f64>,

    /// Zero the kernel diagonal (Gaussian kernel only).
    #[arg(long, requires = "gaussian")]
    pub zero_diagonal: bool,

    /// Gaussian kernel entries below this are dropped.
    #[arg(long, default_value_t = DEFAULT_KERNEL_FLOOR)]
    pub kernel_floor: f64,

    /// Node ids, one per line, in input order.
    #[arg(long)]
    pub node_ids: Option<PathBuf>,

    /// Sinkhorn tolerance on max |row sum - 1|.
    #[arg(long, default_value_t = DEFAULT_TOL, value_parser = positive)]
    pub tol: f64,

    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,

    /// Also decompose and write the spectrum cache here.
    #[arg(long)]
    pub spectra: Option<PathBuf>,

    /// Output operator: JSON if the name ends in `.json`, binary otherwise.
    #[arg(long)]
    pub out: PathBuf,
}

/// The operator to test on.
#[derive(Debug, Clone, Args)]
pub struct GraphArgs {
    /// Operator written by `build-graph`, or a raw coordinate-list kernel.
    #[arg(long)]
    pub graph: PathBuf,

    /// Spectrum cache; created or refreshed as needed.
    #[arg(long)]
    pub spectra: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ScanArgs {
    #[command(flatten)]
    pub graph: GraphArgs,

    /// Labels, `label` or `node_id,label` per line.
    #[arg(long)]
    pub labels: PathBuf,

    #[arg(long, default_value_t = 0.05, value_parser = unit_open)]
    pub alpha: f64,

    /// Class prior P(z = 1), or `unknown` to bound it from the labels.
    #[arg(long, default_value = "unknown")]
    pub prior: PriorArg,

    /// `auto` (minimize the penalty bound), `table` (nearest reference
    /// table cell) or a value in (0, 1).
    #[arg(long, default_value = "auto")]
    pub epsilon: EpsilonArg,

    #[arg(long, value_enum, default_value_t = DirectionArg::Greater)]
    pub direction: DirectionArg,
}

#[derive(Debug, Clone, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub scan: ScanArgs,

    /// Keep only this many of the strongest rejections in the report.
    #[arg(long)]
    pub max_rejections: Option<usize>,

    /// Write the random-walk distribution of each dumped rejection here.
    #[arg(long)]
    pub dump_distributions: Option<PathBuf>,

    /// How many of the strongest rejections to dump; 0 dumps all.
    #[arg(long, default_value_t = 10, requires = "dump_distributions")]
    pub dump_top: usize,

    /// Report file. With `--direction both`, `<stem>.greater.<ext>` and
    /// `<stem>.less.<ext>` are written instead.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TuneEpsArgs {
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',', required_unless_present = "table")]
    pub n: Vec<f64>,

    /// Significance levels, comma separated.
    #[arg(long, value_delimiter = ',', required_unless_present = "table")]
    pub alpha: Vec<f64>,

    /// Spectral gaps 1 - lambda, comma separated.
    #[arg(long, value_delimiter = ',', required_unless_present = "table")]
    pub gap: Vec<f64>,

    /// Use the reference table axes instead of --n/--alpha/--gap.
    #[arg(long, conflicts_with_all = ["n", "alpha", "gap"])]
    pub table: bool,

    #[arg(long, default_value_t = 1e-4)]
    pub grid_lo: f64,

    #[arg(long, default_value_t = 0.5)]
    pub grid_hi: f64,

    #[arg(long, default_value_t = 2000)]
    pub grid_points: usize,

    /// Also write the whole penalty curve for every cell.
    #[arg(long)]
    pub curve: Option<PathBuf>,

    /// CSV output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum SimulateCommand {
    /// Two densities on the unit circle with a cosine discrepancy.
    Circle(CircleArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CircleArgs {
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1000")]
    pub n: Vec<usize>,

    #[arg(long, default_value_t = 0.5, value_parser = unit_open)]
    pub p: f64,

    /// Signal strengths in [0, 1], comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub b: Vec<f64>,

    /// Frequencies of the discrepancy, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub omega: Vec<f64>,

    /// Gaussian kernel bandwidth.
    #[arg(long, default_value_t = 0.01, value_parser = positive)]
    pub sigma: f64,

    #[arg(long, default_value_t = 0.05, value_parser = unit_open)]
    pub alpha: f64,

    /// `auto` or a value in (0, 1).
    #[arg(long, default_value = "auto")]
    pub epsilon: EpsilonArg,

    #[arg(long, default_value_t = 20)]
    pub trials: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Per-cell summaries with every trial outcome, as JSON.
    #[arg(long)]
    pub outcomes: Option<PathBuf>,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Subcommand)]
pub enum DumpCommand {
    /// The random-walk distribution W_i^t as `node_id,probability`.
    Distribution(DistributionArgs),
    /// Every scanned pair with its statistic, rejected or not.
    Scan(ScanDumpArgs),
    /// The epsilon-net as JSON.
    Net(NetDumpArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DistributionArgs {
    #[command(flatten)]
    pub graph: GraphArgs,

    /// Starting node id.
    #[arg(long)]
    pub node: String,

    /// Walk length.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub t: u64,

    /// Log the smallest node set holding this much mass.
    #[arg(long, default_value_t = 0.9)]
    pub mass: f64,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ScanDumpArgs {
    #[command(flatten)]
    pub scan: ScanArgs,

    /// CSV output: `node_id,i,t,statistic,gamma_hat`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct NetDumpArgs {
    #[command(flatten)]
    pub graph: GraphArgs,

    /// Level used when tuning epsilon.
    #[arg(long, default_value_t = 0.05, value_parser = unit_open)]
    pub alpha: f64,

    #[arg(long, default_value = "auto")]
    pub epsilon: EpsilonArg,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorArg {
    Known(f64),
    Unknown,
}

impl FromStr for PriorArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("unknown") {
            return Ok(Self::Unknown);
        }
        unit_open(s).map(Self::Known)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonArg {
    Auto,
    Table,
    Value(f64),
}

impl FromStr for EpsilonArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(Self::Auto),
            "table" => Ok(Self::Table),
            _ => unit_open(s).map(Self::Value),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    Greater,
    Less,
    Both,
}

fn unit_open(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if x > 0.0 && x < 1.0 {
        Ok(x)
    } else {
        Err(format!("{x} is not in (0, 1)"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("{x} is not a positive number"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        RunConfig::command().debug_assert();
    }

    #[test]
    fn parses_prior_and_epsilon() {
        assert_eq!("unknown".parse::<PriorArg>().unwrap(), PriorArg::Unknown);
        assert_eq!("0.25".parse::<PriorArg>().unwrap(), PriorArg::Known(0.25));
        assert!("1".parse::<PriorArg>().is_err());
        assert_eq!("Auto".parse::<EpsilonArg>().unwrap(), EpsilonArg::Auto);
        assert_eq!("0.005".parse::<EpsilonArg>().unwrap(), EpsilonArg::Value(0.005));
        assert!("0".parse::<EpsilonArg>().is_err());
    }

    #[test]
    fn test_subcommand_defaults() {
        let cfg = RunConfig::try_parse_from(["gwalk", "test", "--graph", "g.bin", "--labels", "z.csv", "--out", "r.json"])
            .unwrap();
        let Command::Test(t) = cfg.command else { panic!("wrong subcommand") };
        assert_eq!(t.scan.alpha, 0.05);
        assert_eq!(t.scan.prior, PriorArg::Unknown);
        assert_eq!(t.scan.epsilon, EpsilonArg::Auto);
        assert_eq!(t.scan.direction, DirectionArg::Greater);
        assert!(RunConfig::try_parse_from(["gwalk", "test", "--graph", "g", "--labels", "z", "--out", "r", "--alpha", "1.5"])
            .is_err());
    }
}
