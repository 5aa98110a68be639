use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "carnot", version, about = "Minimality checks, first-variation experiments and meshes for submanifolds of Carnot groups")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate an algebra definition file.
    Validate(ValidateArgs),
    /// Evaluate H + σ over a grid of a surface.
    CheckMinimality(CheckArgs),
    /// Compare the numeric derivative of the μ-measure with the analytic first variation.
    FirstVariation(VariationArgs),
    /// Write a CSV mesh of a surface or of a slice of the unit CC ball.
    Mesh(MeshArgs),
    /// Monte-Carlo estimate of the Heisenberg metric factor.
    MetricFactor(MetricFactorArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Algebra file (JSON).
    #[arg(value_name = "FILE", conflicts_with = "algebra")]
    pub file: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub algebra: Option<PathBuf>,
    /// Also write the report to this path.
    #[arg(long, value_name = "PATH")]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GaugeArg {
    Projected,
    Jr,
}

/// Which surface to work on: a builtin or a graph `t = u(x)`.
#[derive(Debug, Clone, Args)]
pub struct SurfaceArgs {
    /// Builtin surface name (tubular, ruled, paraboloid, holomorphic-cylinder, circle-cylinder, plane; `ball` for mesh).
    #[arg(long, conflicts_with = "graph")]
    pub builtin: Option<String>,
    /// Graph function u(x1..x_2n), e.g. "0.25*(x1^2+x2^2-x3^2-x4^2)".
    #[arg(long)]
    pub graph: Option<String>,
    /// Algebra file; defaults to the Heisenberg algebra of matching dimension.
    #[arg(long, value_name = "FILE")]
    pub algebra: Option<PathBuf>,
    /// Heisenberg index n (graphs, paraboloid, ball).
    #[arg(long)]
    pub n: Option<usize>,
    /// Circle radius of the tubular generator.
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    /// Angular speed of the ruled generator's frame.
    #[arg(long, default_value_t = 1.0)]
    pub omega: f64,
    /// Radius of the circle cylinder.
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// Parameter box as lo1,hi1,lo2,hi2,...
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub domain: Option<Vec<f64>>,
    /// Finite-difference step for connection forms.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long, value_enum)]
    pub gauge: Option<GaugeArg>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub surface: SurfaceArgs,
    /// Intervals per axis of the uniform evaluation grid (one value is broadcast).
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    /// Gauss-Legendre order per axis for the L2 norm (default 16 in two
    /// dimensions, fewer above).
    #[arg(long)]
    pub quad: Option<usize>,
    /// Pass iff the sup residual is below this.
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, value_name = "PATH")]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariationKind {
    /// amplitude · bump · f_α, vanishing on the boundary
    NormalBump,
    /// amplitude · bump · ∂_1φ, tangent to the surface
    Tangential,
    /// Left translation by exp(ε e_k) of the whole patch
    Translation,
}

#[derive(Debug, Args)]
pub struct VariationArgs {
    #[command(flatten)]
    pub surface: SurfaceArgs,
    #[arg(long, value_enum, default_value = "normal-bump")]
    pub variation: VariationKind,
    /// Normal index α (1-based) for normal-bump.
    #[arg(long, default_value_t = 1)]
    pub alpha: usize,
    /// Basis index k (1-based) for translation; defaults to the top coordinate.
    #[arg(long)]
    pub direction: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    /// Gauss-Legendre order per axis (default 16 in two dimensions, fewer above).
    #[arg(long)]
    pub quad: Option<usize>,
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    /// Relative tolerance for numeric vs analytic agreement.
    #[arg(long, default_value_t = 1e-2)]
    pub tol: f64,
    /// Also require |numeric| < 1e-5 · measure · |W|∞.
    #[arg(long)]
    pub expect_critical: bool,
    #[arg(long, value_name = "PATH")]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    #[command(flatten)]
    pub surface: SurfaceArgs,
    /// nt,ns intervals; the mesh has (nt+1)(ns+1) rows.
    #[arg(long, value_delimiter = ',', default_values_t = [40, 40])]
    pub grid: Vec<usize>,
    /// Coordinate plane i,j (1-based) carrying μ̄ for the ball slice.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2])]
    pub plane: Vec<usize>,
    /// Emit a single closed boundary curve of the ball slice at this μ0.
    #[arg(long, allow_negative_numbers = true)]
    pub mu0: Option<f64>,
    /// Minimum transversality and tangent conditioning for curve-generated meshes.
    #[arg(long, default_value_t = 1e-3)]
    pub margin: f64,
    /// CSV path; stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricFactorArgs {
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    /// Codimension; the subspace has dimension 2n+1-p and contains e_{2n+1}.
    #[arg(long, default_value_t = 2)]
    pub p: usize,
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: u64,
    #[arg(long)]
    pub seed: u64,
    /// Rotate the horizontal part of the subspace by a random orthogonal map drawn from this seed.
    #[arg(long)]
    pub rotation_seed: Option<u64>,
    /// Worker threads; the estimate does not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, value_name = "PATH")]
    pub json: Option<PathBuf>,
}
