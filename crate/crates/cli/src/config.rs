use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser, Debug, Clone, Serialize)]
#[command(name = "gmt", version, about = "Multiscale geometry on weighted point clouds")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Global {
    /// Seed for generated data. `GMT_SEED` overrides it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for per-cube analyses.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Stop at the first violation.
    #[arg(long, global = true)]
    pub fail_fast: bool,
    /// Write the JSON report here instead of standard output.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Generate a cloud (with its sidecar) or a scene with its catalog.
    Gen(GenArgs),
    /// Build the dyadic cubes and validate the grid.
    Cubes(Analysis),
    /// Per-cube β-numbers as CSV.
    Beta(Analysis),
    /// Geometric lemma GLem(p, q) with the (p, q) gate.
    Glem(Analysis),
    /// Build (or read) and validate a coronization.
    Corona(Analysis),
    /// Big pieces squared certificate from a coronization.
    Bp2(Analysis),
    /// Transfer of β-numbers from big pieces, with the inherited lemmas.
    Transfer(Analysis),
    /// Parabolic graphs: good-graph check, the Lewis–Silver observation,
    /// refinement sweep and the full pipeline.
    Parabolic(ParabolicArgs),
    /// Collect the verdicts of the JSON reports in a directory.
    Report(ReportArgs),
    /// Run every stage up to `target`, writing all reports to `--out`.
    Run(RunArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenKind {
    Plane,
    Lipschitz,
    TwoPlanes,
    /// Scenes write `set` and `catalog_<i>` clouds into the `--out` directory.
    LineScene,
    TwoLinesScene,
    StaircaseScene,
    TeethScene,
    GraphScene,
    TwoGraphsScene,
    /// A smooth good parabolic graph on the unit box.
    Gpg,
    LewisSilver,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GenArgs {
    #[arg(value_enum)]
    pub kind: GenKind,
    /// Output stem (clouds) or directory (scenes).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    /// Plane dimension.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 1.0)]
    pub side: f64,
    /// Lattice spacing.
    #[arg(long, default_value_t = 1.0 / 128.0)]
    pub h: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.125)]
    pub tooth: f64,
    #[arg(long, default_value_t = 0.125)]
    pub step: f64,
    #[arg(long, default_value_t = 0.2)]
    pub sep: f64,
    /// Spatial nodes per axis of parabolic grids.
    #[arg(long, default_value_t = 16)]
    pub resolution: usize,
    /// Time nodes of parabolic time-graph scenes.
    #[arg(long, default_value_t = 4096)]
    pub nodes: usize,
    /// Modulus constant of Lewis–Silver graphs.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Analysis {
    /// Cloud stem: reads `<stem>.csv` and `<stem>.json`.
    #[arg(long)]
    pub input: PathBuf,
    /// Approximant clouds.
    #[arg(long, num_args = 1..)]
    pub catalog: Vec<PathBuf>,
    /// Directory (or file, for single artifacts) for data outputs.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub params: Params,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Params {
    /// Override the dimension `d` of the cloud.
    #[arg(long)]
    pub d: Option<f64>,
    #[arg(long)]
    pub r_min: Option<f64>,
    #[arg(long)]
    pub r_max: Option<f64>,
    /// `affine:N,K` or `parabolic:N`; inferred from the cloud when absent.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long, value_enum, default_value_t = BetaKindArg::Lq)]
    pub kind: BetaKindArg,
    #[arg(long, default_value_t = 2.0)]
    pub p: f64,
    /// `inf` selects the sup-number.
    #[arg(long, default_value_t = 2.0)]
    pub q: f64,
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
    #[arg(long = "K", default_value_t = 2.0)]
    pub big_k: f64,
    #[arg(long, default_value_t = 0.1)]
    pub theta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    /// Bound `M` for the geometric lemmas.
    #[arg(long, default_value_t = f64::INFINITY)]
    pub bound: f64,
    #[arg(long, default_value_t = 1e3)]
    pub pack_cap: f64,
    #[arg(long, default_value_t = 100.0)]
    pub constant_cap: f64,
    #[arg(long, default_value_t = 64.0)]
    pub c2: f64,
    /// Read the coronization from this file.
    #[arg(long)]
    pub corona: Option<PathBuf>,
    /// Use the single-regime coronization with this approximant.
    #[arg(long)]
    pub trivial: Option<usize>,
    /// Sampled centers for regularity checks.
    #[arg(long, default_value_t = 256)]
    pub max_centers: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaKindArg {
    Lq,
    Sup,
    Bilateral,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParabolicMode {
    Gpg,
    Observe,
    Sweep,
    Pipeline,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ParabolicArgs {
    #[arg(value_enum)]
    pub mode: ParabolicMode,
    /// Graph for `gpg`: a smooth bump, or Lewis–Silver when set.
    #[arg(long)]
    pub lewis_silver: bool,
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [16, 32, 64])]
    pub resolutions: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.2])]
    pub eps: Vec<f64>,
    #[arg(long, default_value_t = f64::INFINITY)]
    pub b1_cap: f64,
    #[arg(long, default_value_t = f64::INFINITY)]
    pub b2_cap: f64,
    /// Cloud and catalog for `pipeline`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub catalog: Vec<PathBuf>,
    /// Writes the ψ grid as CSV.
    #[arg(long)]
    pub psi: Option<PathBuf>,
    #[command(flatten)]
    pub params: Params,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ReportArgs {
    pub dir: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Cubes,
    Beta,
    Glem,
    Corona,
    Bp2,
    Transfer,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct RunArgs {
    #[arg(value_enum)]
    pub target: Target,
    #[command(flatten)]
    pub analysis: Analysis,
}

/// Everything a report needs to be reproduced.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: Option<usize>,
    pub fail_fast: bool,
    #[serde(flatten)]
    pub command: Command,
}

impl Cli {
    pub fn resolved(&self) -> Result<RunConfig, String> {
        let seed = match std::env::var("GMT_SEED") {
            Ok(s) => s.trim().parse().map_err(|_| format!("GMT_SEED = {s:?} is not an unsigned integer"))?,
            Err(_) => self.global.seed,
        };
        Ok(RunConfig {
            seed,
            jobs: self.global.jobs,
            fail_fast: self.global.fail_fast,
            command: self.command.clone(),
        })
    }
}
