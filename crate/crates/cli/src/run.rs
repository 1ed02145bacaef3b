//! Command implementations. Each command resolves its configuration, does all
//! of its computation, and only then hands the rendered artifacts to
//! [`Outputs`].

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use fuzzywave::conjugate::{curve, fit_conjugate, ConjugateConfig, CurvePoint, FKernel};
use fuzzywave::harness::{fmt_f64, simulate, BuiltinGuess, Dataset, PriorGuess, SimConfig};
use fuzzywave::mcmc::{run_chain, theta_moments, write_chain_csv, ChainConfig};
use fuzzywave::membership::{HyperPrior, MembershipSpec};
use fuzzywave::model::{resolve_level, LevelChoice, ModelConfig, WaveletModel};
use fuzzywave::model_check::{bayes_factor, select_resolution};
use fuzzywave::quadrature::QuadratureConfig;
use fuzzywave::robustness::{point_log_b01, robustness_bands, MCConfig};
use fuzzywave::wavelet::{build_family, Domain, FamilyName};

use crate::args::{
    BfCmd, ChainArgs, Common, FitCmd, MembershipArgs, ModelArgs, RobustCmd, SelectJCmd, SettingsFile, SimulateCmd,
};
use crate::error::{CliError, ExitKind};
use crate::output::Outputs;

type Result<T> = std::result::Result<T, CliError>;

pub const RESULTS_FILE: &str = "results.json";
pub const CURVE_FILE: &str = "curve.csv";
pub const DATA_FILE: &str = "data.csv";
const DEFAULT_GRID: usize = 201;

fn load_settings(common: &Common) -> Result<SettingsFile> {
    let Some(path) = &common.config else {
        return Ok(SettingsFile::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::from(e).context(path.display()))?;
    serde_json::from_str(&text).map_err(|e| CliError::from(e).context(path.display()))
}

fn load_data(path: &Path) -> Result<Dataset> {
    Dataset::read_csv(path).map_err(|e| {
        let e = match e {
            fuzzywave::Error::NonFinite(m) => CliError::validation(m),
            other => CliError::from(other),
        };
        e.context(path.display())
    })
}

fn load_guess(spec: &str) -> Result<PriorGuess> {
    if let Ok(b) = spec.parse::<BuiltinGuess>() {
        return Ok(b.into());
    }
    let looks_like_path = spec.contains(['/', '\\', '.']);
    if looks_like_path {
        PriorGuess::read_csv(spec).map_err(|e| CliError::from(e).context(spec))
    } else {
        Err(fuzzywave::Error::UnknownGuess(spec.to_string()).into())
    }
}

/// Fully resolved model settings, echoed into every result file.
#[derive(Clone, Debug, Serialize)]
pub struct ModelSettings {
    pub g0: String,
    pub family: FamilyName,
    pub level: LevelChoice,
    pub smoothness: f64,
    pub depth: u32,
    pub hyper: HyperPrior,
    pub quad: QuadratureConfig,
    pub kernel: FKernel,
}

impl ModelSettings {
    fn resolve(args: ModelArgs) -> Result<Self> {
        let defaults = ModelConfig::default();
        let g0 = args
            .g0
            .ok_or_else(|| CliError::validation("a prior guess is required (--g0 NAME or --g0 FILE.csv)"))?;
        let family = match args.family {
            Some(f) => f.parse()?,
            None => defaults.family,
        };
        let level = match args.level.as_deref() {
            None | Some("auto") => LevelChoice::Auto,
            Some(s) => LevelChoice::Fixed(
                s.parse()
                    .map_err(|_| CliError::validation(format!("level must be `auto` or a non-negative integer, got `{s}`")))?,
            ),
        };
        let b = args.b.unwrap_or(3.0);
        let c = args.c.unwrap_or(2.0);
        let k = args.k.unwrap_or(1.5);
        let hyper = match args.a {
            Some(a) => HyperPrior::new(a, b, c, k)?,
            None => HyperPrior::from_b(b, c, k)?,
        };
        let quad = QuadratureConfig {
            nodes: args.nodes.unwrap_or(QuadratureConfig::default().nodes),
        };
        if quad.nodes < 8 {
            return Err(CliError::validation(format!("need at least 8 quadrature nodes, got {}", quad.nodes)));
        }
        let kernel = match args.kernel.as_deref() {
            None | Some("textbook") => FKernel::Textbook,
            Some("as-printed") => FKernel::AsPrinted,
            Some(s) => {
                return Err(CliError::validation(format!(
                    "kernel must be `textbook` or `as-printed`, got `{s}`"
                )))
            }
        };
        Ok(Self {
            g0,
            family,
            level,
            smoothness: args.smoothness.unwrap_or(build_family(family)?.smoothness),
            depth: args.depth.unwrap_or(defaults.depth),
            hyper,
            quad,
            kernel,
        })
    }

    fn model_config(&self) -> ModelConfig {
        ModelConfig {
            family: self.family,
            depth: self.depth,
            level: self.level,
            smoothness: Some(self.smoothness),
            ..ModelConfig::default()
        }
    }

    fn build(&self, data: &Dataset) -> Result<(PriorGuess, WaveletModel)> {
        let guess = load_guess(&self.g0)?;
        let model = WaveletModel::build(data, &guess, &self.model_config())?;
        Ok((guess, model))
    }
}

fn model_facts(model: &WaveletModel) -> Value {
    json!({
        "n": model.n(),
        "level": model.plan.level,
        "p": model.p(),
        "smoothness": model.smoothness,
    })
}

fn results_json(command: &str, config: &impl Serialize, results: Value) -> Result<Vec<u8>> {
    let doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "results": results,
    });
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn curve_csv(points: &[CurvePoint]) -> Vec<u8> {
    let mut s = String::from("x,fit,sd\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", fmt_f64(p.x), fmt_f64(p.fit), fmt_f64(p.sd)));
    }
    s.into_bytes()
}

fn grid(domain: Domain, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.5 * (domain.lo + domain.hi)],
        m => (0..m)
            .map(|i| domain.lo + domain.length() * i as f64 / (m - 1) as f64)
            .collect(),
    }
}

/// What a finished command reports on stdout.
pub struct Report {
    pub summary: String,
    pub outputs: Outputs,
}

#[derive(Serialize)]
struct SimulateConfig<'a> {
    out: &'a Path,
    simulation: &'a SimConfig,
}

pub fn simulate_cmd(cmd: SimulateCmd) -> Result<Report> {
    let file = load_settings(&cmd.common)?;
    let args = cmd.sim.over(file.simulate);
    let truth = match args.truth {
        Some(t) => t.parse()?,
        None => BuiltinGuess::Cos,
    };
    let sim = SimConfig {
        n: args.n.unwrap_or(20),
        noise_var: args.noise_var.unwrap_or(0.1),
        truth,
        seed: cmd.seed,
        domain: Domain::unit(),
    };
    let data = simulate(&sim)?;
    let mut csv = Vec::new();
    data.write_csv(&mut csv)?;
    let config = SimulateConfig {
        out: &cmd.common.out,
        simulation: &sim,
    };
    let mut outputs = Outputs::default();
    outputs.add(cmd.common.out.join(DATA_FILE), csv);
    outputs.add(
        cmd.common.out.join(RESULTS_FILE),
        results_json("simulate", &config, json!({ "n": data.n() }))?,
    );
    Ok(Report {
        summary: format!("simulated {} observations of {truth} (seed {})", data.n(), sim.seed),
        outputs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum Method {
    Conjugate,
    Mcmc,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum MembershipSettings {
    Gaussian,
    StudentT { q: f64 },
    Ellipsoid { delta: f64 },
}

impl MembershipSettings {
    fn resolve(args: MembershipArgs) -> Result<Self> {
        let kind = args.membership.as_deref().unwrap_or("gaussian");
        let unused = |flag: &str, v: Option<f64>| match v {
            Some(_) => Err(CliError::validation(format!("--{flag} does not apply to the {kind} membership"))),
            None => Ok(()),
        };
        match kind {
            "gaussian" => {
                unused("q", args.q)?;
                unused("delta", args.delta)?;
                Ok(Self::Gaussian)
            }
            "student-t" => {
                unused("delta", args.delta)?;
                Ok(Self::StudentT { q: args.q.unwrap_or(5.0) })
            }
            "ellipsoid" => {
                unused("q", args.q)?;
                Ok(Self::Ellipsoid {
                    delta: args.delta.unwrap_or(1.0),
                })
            }
            other => Err(CliError::validation(format!(
                "membership must be gaussian, student-t or ellipsoid, got `{other}`"
            ))),
        }
    }

    fn spec(&self, model: &WaveletModel) -> Result<MembershipSpec> {
        Ok(match *self {
            Self::Gaussian => model.gaussian_spec(),
            Self::StudentT { q } => MembershipSpec::student_t_with_gamma(model.theta0.clone(), q, &model.gamma)?,
            Self::Ellipsoid { delta } => MembershipSpec::ellipsoid(model.theta0.clone(), delta)?,
        })
    }
}

#[derive(Serialize)]
struct FitConfig<'a> {
    input: &'a Path,
    out: &'a Path,
    model: &'a ModelSettings,
    membership: &'a MembershipSettings,
    method: Method,
    grid: usize,
    seed: Option<u64>,
    chain: Option<ChainConfig>,
    chain_out: Option<&'a Path>,
}

fn chain_config(args: ChainArgs, seed: u64) -> Result<ChainConfig> {
    let d = ChainConfig::default();
    let cfg = ChainConfig {
        iters: args.iters.unwrap_or(d.iters),
        burn_in: args.burn_in.unwrap_or(d.burn_in),
        thin: args.thin.unwrap_or(d.thin),
        seed,
        ..d
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn fit_cmd(cmd: FitCmd) -> Result<Report> {
    let file = load_settings(&cmd.common)?;
    let settings = ModelSettings::resolve(cmd.model.over(file.model))?;
    let membership = MembershipSettings::resolve(cmd.membership.over(file.membership))?;
    let method = match cmd.method.or(file.method).as_deref() {
        None | Some("auto") => match membership {
            MembershipSettings::Gaussian => Method::Conjugate,
            _ => Method::Mcmc,
        },
        Some("conjugate") => Method::Conjugate,
        Some("mcmc") => Method::Mcmc,
        Some(s) => {
            return Err(CliError::validation(format!(
                "method must be auto, conjugate or mcmc, got `{s}`"
            )))
        }
    };
    if method == Method::Conjugate && !matches!(membership, MembershipSettings::Gaussian) {
        return Err(CliError::validation(
            "the conjugate fit needs the Gaussian membership; use --method mcmc",
        ));
    }
    let chain = match method {
        Method::Mcmc => {
            let seed = cmd
                .seed
                .ok_or_else(|| CliError::validation("--seed is required when the fit runs the sampler"))?;
            Some(chain_config(cmd.chain.over(file.chain), seed)?)
        }
        Method::Conjugate => None,
    };
    if method == Method::Conjugate && cmd.chain_out.is_some() {
        return Err(CliError::validation("--chain-out needs --method mcmc"));
    }
    let grid_n = cmd.grid.or(file.grid).unwrap_or(DEFAULT_GRID);

    let data = load_data(&cmd.input)?;
    let (_, model) = settings.build(&data)?;
    let spec = membership.spec(&model)?;
    let xs = grid(settings.model_config().domain, grid_n);
    let mut chain_csv = None;
    let (mean, cov, extra) = match &chain {
        None => {
            let config = ConjugateConfig {
                quad: settings.quad,
                kernel: settings.kernel,
            };
            let fit = fit_conjugate(&model, &spec, &settings.hyper, config, &[])?;
            let extra = json!({
                "e_u": fit.e_u,
                "e_sigma2": fit.e_sigma2,
                "e_tau2": fit.e_tau2,
            });
            (fit.mean, fit.cov, extra)
        }
        Some(cfg) => {
            let out = run_chain(&model, &spec, &settings.hyper, cfg)?;
            let (m, c) = theta_moments(&out.samples)?;
            if cmd.chain_out.is_some() {
                let mut buf = Vec::new();
                write_chain_csv(&out.samples, &mut buf)?;
                chain_csv = Some(buf);
            }
            let mean = model.theta0.with_values(m)?;
            (mean, c, json!({ "chain": out.summary }))
        }
    };
    let at_data = curve(&model, &mean, &cov, data.x());
    let points = curve(&model, &mean, &cov, &xs);
    if at_data.iter().chain(&points).any(|p| !p.fit.is_finite() || !p.sd.is_finite()) {
        return Err(CliError::new(ExitKind::Numerical, "fitted curve is not finite"));
    }
    let fitted: Vec<Value> = at_data
        .iter()
        .zip(data.y())
        .map(|(p, y)| json!({ "x": p.x, "y": y, "fit": p.fit, "sd": p.sd }))
        .collect();
    let mut results = json!({
        "model": model_facts(&model),
        "method": method,
        "theta_mean": mean.values().as_slice(),
        "theta_sd": cov.diagonal().map(|v| v.max(0.0).sqrt()).as_slice(),
        "fitted": fitted,
    });
    if let (Value::Object(r), Value::Object(e)) = (&mut results, extra) {
        r.extend(e);
    }
    let config = FitConfig {
        input: &cmd.input,
        out: &cmd.common.out,
        model: &settings,
        membership: &membership,
        method,
        grid: grid_n,
        seed: cmd.seed,
        chain,
        chain_out: cmd.chain_out.as_deref(),
    };
    let mut outputs = Outputs::default();
    outputs.add(cmd.common.out.join(RESULTS_FILE), results_json("fit", &config, results)?);
    outputs.add(cmd.common.out.join(CURVE_FILE), curve_csv(&points));
    if let (Some(path), Some(bytes)) = (&cmd.chain_out, chain_csv) {
        outputs.add(path.clone(), bytes);
    }
    Ok(Report {
        summary: format!(
            "fit {} observations at J = {} (p = {}) by {}",
            model.n(),
            model.plan.level,
            model.p(),
            match method {
                Method::Conjugate => "exact quadrature",
                Method::Mcmc => "MCMC",
            }
        ),
        outputs,
    })
}

#[derive(Serialize)]
struct DataConfig<'a> {
    input: &'a Path,
    out: &'a Path,
    model: &'a ModelSettings,
}

pub fn bf_cmd(cmd: BfCmd) -> Result<Report> {
    let file = load_settings(&cmd.common)?;
    let settings = ModelSettings::resolve(cmd.model.over(file.model))?;
    let data = load_data(&cmd.input)?;
    let (_, model) = settings.build(&data)?;
    let bf = bayes_factor(&model, &model.gaussian_spec(), &settings.hyper, settings.quad)?;
    if !bf.log_b01.is_finite() {
        return Err(CliError::new(ExitKind::Numerical, "Bayes factor is not finite"));
    }
    let results = json!({
        "model": model_facts(&model),
        "log_m0": bf.log_m0,
        "log_m1": bf.log_m1,
        "log_b01": bf.log_b01,
        "b01": bf.b01(),
        "evidence": bf.label,
        "label": bf.label.to_string(),
    });
    let config = DataConfig {
        input: &cmd.input,
        out: &cmd.common.out,
        model: &settings,
    };
    let mut outputs = Outputs::default();
    outputs.add(cmd.common.out.join(RESULTS_FILE), results_json("bf", &config, results)?);
    Ok(Report {
        summary: format!("B01 = {:.6e} ({})", bf.b01(), bf.label),
        outputs,
    })
}

#[derive(Serialize)]
struct RobustConfig<'a> {
    input: &'a Path,
    out: &'a Path,
    model: &'a ModelSettings,
    mc: MCConfig,
    bands: &'a [(f64, f64)],
}

fn parse_band(s: &str) -> Result<(f64, f64)> {
    let bad = || CliError::validation(format!("band `{s}` is not of the form c1:c2"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let c1: f64 = a.trim().parse().map_err(|_| bad())?;
    let c2: f64 = b.trim().parse().map_err(|_| bad())?;
    if !(c1 > 0.0 && c1 <= c2 && c2.is_finite()) {
        return Err(CliError::validation(format!("band `{s}` needs 0 < c1 <= c2 < inf")));
    }
    Ok((c1, c2))
}

pub fn robust_cmd(cmd: RobustCmd) -> Result<Report> {
    let file = load_settings(&cmd.common)?;
    let settings = ModelSettings::resolve(cmd.model.over(file.model))?;
    let args = cmd.robust.over(file.robust);
    let bands = args
        .bands
        .unwrap_or_else(|| vec!["1:1".into(), "1:2".into(), "0.5:4".into()])
        .iter()
        .map(|s| parse_band(s))
        .collect::<Result<Vec<_>>>()?;
    let mc = MCConfig {
        samples: args.samples.unwrap_or(MCConfig::default().samples),
        seed: cmd.seed,
        tau2: args.tau2,
    };
    let data = load_data(&cmd.input)?;
    let (_, model) = settings.build(&data)?;
    let spec = model.gaussian_spec();
    let (bank, found) = robustness_bands(&model, &spec, &settings.hyper, settings.quad, &mc, &bands)?;
    let point = point_log_b01(&model, &spec, &settings.hyper, settings.quad, bank.tau2)?;
    let results = json!({
        "model": model_facts(&model),
        "tau2": bank.tau2,
        "log_b01_fixed_scale": point,
        "b01_fixed_scale": point.exp(),
        "bands": found,
    });
    let config = RobustConfig {
        input: &cmd.input,
        out: &cmd.common.out,
        model: &settings,
        mc,
        bands: &bands,
    };
    let mut outputs = Outputs::default();
    outputs.add(cmd.common.out.join(RESULTS_FILE), results_json("robust", &config, results)?);
    let lines: Vec<String> = found
        .iter()
        .map(|b| format!("({}, {}): [{:.6e}, {:.6e}]", b.c1, b.c2, b.inf_b01, b.sup_b01))
        .collect();
    Ok(Report {
        summary: format!("B01 bands {}", lines.join(", ")),
        outputs,
    })
}

#[derive(Serialize)]
struct SelectConfig<'a> {
    input: &'a Path,
    out: &'a Path,
    model: &'a ModelSettings,
    levels: &'a [u32],
}

pub fn select_j_cmd(cmd: SelectJCmd) -> Result<Report> {
    let file = load_settings(&cmd.common)?;
    let settings = ModelSettings::resolve(cmd.model.over(file.model))?;
    let data = load_data(&cmd.input)?;
    let levels = match cmd.levels.or(file.levels) {
        Some(l) => l,
        None => {
            let cfg = ModelConfig {
                level: LevelChoice::Auto,
                ..settings.model_config()
            };
            (0..=resolve_level(&cfg, data.n())?).collect()
        }
    };
    let guess = load_guess(&settings.g0)?;
    let choice = select_resolution(
        &data,
        &guess,
        &settings.model_config(),
        &settings.hyper,
        settings.quad,
        &levels,
    )?;
    let config = SelectConfig {
        input: &cmd.input,
        out: &cmd.common.out,
        model: &settings,
        levels: &levels,
    };
    let mut outputs = Outputs::default();
    outputs.add(
        cmd.common.out.join(RESULTS_FILE),
        results_json("select-j", &config, serde_json::to_value(&choice)?)?,
    );
    Ok(Report {
        summary: format!("best level J = {}", choice.best),
        outputs,
    })
}
