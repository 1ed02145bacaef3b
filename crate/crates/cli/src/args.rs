//! Command-line flags and the optional JSON settings file.
//!
//! Every tunable is optional at this layer. Flags win over the settings file,
//! and anything still unset takes the library default when the run
//! configuration is resolved.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "fuzzywave", version, about = "Bayesian wavelet regression around a fuzzy prior guess")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a dataset y = g(x) + noise with x uniform on [0, 1].
    Simulate(SimulateCmd),
    /// Posterior mean and pointwise bands of the regression curve.
    Fit(FitCmd),
    /// Bayes factor of g = g0 against g != g0.
    Bf(BfCmd),
    /// Range of the Bayes factor over density-ratio neighbourhoods of the prior.
    Robust(RobustCmd),
    /// Resolution level with the largest marginal likelihood.
    #[command(name = "select-j")]
    SelectJ(SelectJCmd),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON settings file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateCmd {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub sim: SimArgs,
}

#[derive(Debug, Args)]
pub struct FitCmd {
    #[command(flatten)]
    pub common: Common,
    /// `x,y` CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Required when the fit runs the sampler.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub membership: MembershipArgs,
    #[command(flatten)]
    pub chain: ChainArgs,
    /// `conjugate` (Gaussian membership only), `mcmc`, or `auto`.
    #[arg(long)]
    pub method: Option<String>,
    /// Number of equispaced curve points over the domain.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Also write the kept chain states to this CSV.
    #[arg(long)]
    pub chain_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BfCmd {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct RobustCmd {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub robust: RobustArgs,
}

#[derive(Debug, Args)]
pub struct SelectJCmd {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated levels; defaults to 0 through the largest admissible.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<u32>>,
}

macro_rules! overlay {
    ($t:ty { $($f:ident),* $(,)? }) => {
        impl $t {
            /// Fill unset fields from `base`.
            pub fn over(self, base: Self) -> Self {
                Self { $($f: self.$f.or(base.$f)),* }
            }
        }
    };
}

#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ModelArgs {
    /// Prior guess: cos, vee, zero, seasonal, or an `x,g0` CSV path.
    #[arg(long)]
    pub g0: Option<String>,
    /// haar, db2, db3 or db4.
    #[arg(long)]
    pub family: Option<String>,
    /// `auto` or a resolution level J.
    #[arg(long)]
    pub level: Option<String>,
    /// Override of the family's smoothness index s.
    #[arg(long)]
    pub smoothness: Option<f64>,
    /// Cascade refinement depth.
    #[arg(long)]
    pub depth: Option<u32>,
    /// F(b, a) prior on u; defaults to 8(b + 2)/(b − 2).
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    /// Inverse-gamma prior on σ².
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub k: Option<f64>,
    /// Quadrature nodes for the u-integrals.
    #[arg(long)]
    pub nodes: Option<usize>,
    /// `textbook` or `as-printed` form of the u-posterior.
    #[arg(long)]
    pub kernel: Option<String>,
}

overlay!(ModelArgs { g0, family, level, smoothness, depth, a, b, c, k, nodes, kernel });

#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct MembershipArgs {
    /// gaussian, student-t or ellipsoid.
    #[arg(long)]
    pub membership: Option<String>,
    /// Degrees of freedom of the Student-t membership.
    #[arg(long)]
    pub q: Option<f64>,
    /// Radius of the ellipsoid membership.
    #[arg(long)]
    pub delta: Option<f64>,
}

overlay!(MembershipArgs { membership, q, delta });

#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ChainArgs {
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
}

overlay!(ChainArgs { iters, burn_in, thin });

#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RobustArgs {
    /// Constant pairs `c1:c2`, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub bands: Option<Vec<String>>,
    /// Monte-Carlo draws from the nominal prior.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Prior scale τ² of the nominal membership; defaults to E(τ² | y).
    #[arg(long)]
    pub tau2: Option<f64>,
}

overlay!(RobustArgs { bands, samples, tau2 });

#[derive(Clone, Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SimArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub noise_var: Option<f64>,
    /// True regression function: cos, vee, zero or seasonal.
    #[arg(long)]
    pub truth: Option<String>,
}

overlay!(SimArgs { n, noise_var, truth });

/// Contents of a `--config` file: any subset of the sections.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SettingsFile {
    pub model: ModelArgs,
    pub membership: MembershipArgs,
    pub chain: ChainArgs,
    pub robust: RobustArgs,
    pub simulate: SimArgs,
    pub method: Option<String>,
    pub grid: Option<usize>,
    pub levels: Option<Vec<u32>>,
}
