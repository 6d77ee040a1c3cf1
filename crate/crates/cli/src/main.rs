mod io;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use survchart::assist::{parameter_assist, AssistBundle, AssistOptions, DatasetRef};
use survchart::bernoulli::{bernoulli_cusum, BernoulliParams, BernoulliSpec};
use survchart::bk::{bk_cusum, BkSpec};
use survchart::cgr::{cgr_cusum, CgrMethod, CgrSpec, DEFAULT_MAXTHETA};
use survchart::chart::Chart;
use survchart::controllimit::{control_limit, LimitChart, RunOptions, SimConfig, SimInputs};
use survchart::datagen::{generate_surgery_data, GenConfig};
use survchart::dataset::{Dataset, Schema};
use survchart::funnel::{funnel_summary, FunnelOptions, DEFAULT_CONFLEVS};
use survchart::riskadjust::{fit_coxph, fit_logistic, RiskModel};

use io::{emit, emit_text, read_chart, read_dataset, read_model, read_text, write_chart, CliResult, Failure};

#[derive(Parser)]
#[command(name = "survchart", version, about = "Risk-adjusted CUSUM charts for survival outcomes")]
struct Cli {
    /// Print machine-readable JSON results on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads for simulation and chart construction.
    #[arg(long, global = true, env = "SURVCHART_WORKERS")]
    workers: Option<usize>,
    /// Report simulation progress on stderr.
    #[arg(long, global = true)]
    progress: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit risk models and fill chart defaults from a baseline period.
    Assist(AssistArgs),
    /// Fit the logistic model used by the Bernoulli chart and funnel plot.
    FitGlm(FitArgs),
    /// Fit a Cox model with Breslow baseline hazard.
    FitCox(FitArgs),
    /// Risk-adjusted funnel plot summary.
    Funnel(FunnelArgs),
    /// Bernoulli CUSUM of one unit.
    Bernoulli(BernoulliArgs),
    /// Biswas-Kalbfleisch continuous-time CUSUM of one unit.
    Bk(BkArgs),
    /// Continuous-time generalized-likelihood-ratio CUSUM of one unit.
    Cgr(CgrArgs),
    /// Calibrate a control limit on simulated in-control units.
    ControlLimit(LimitArgs),
    /// Generate a synthetic multi-unit surgery dataset.
    Simulate(SimulateArgs),
    /// Run length of a stored chart at limit h.
    Runlength(RunlengthArgs),
    /// SVG line plot of a stored chart.
    Plot(PlotArgs),
}

/// Dataset location and column mapping.
#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Restrict to one unit.
    #[arg(long)]
    unit: Option<String>,
    #[arg(long, default_value = "entrytime")]
    entrytime_col: String,
    #[arg(long, default_value = "survtime")]
    survtime_col: String,
    #[arg(long, default_value = "censorid")]
    censorid_col: String,
    #[arg(long, default_value = "unit")]
    unit_col: String,
}

impl DataArgs {
    fn schema(&self) -> Schema {
        Schema {
            entrytime: self.entrytime_col.clone(),
            survtime: self.survtime_col.clone(),
            censorid: self.censorid_col.clone(),
            unit: self.unit_col.clone(),
            ..Schema::default()
        }
    }

    fn read(&self, path: &std::path::Path) -> CliResult<Dataset> {
        read_dataset(path, &self.schema())
    }

    /// The dataset from `--data`, else from the bundle, cut to `--unit`.
    fn load(&self, bundle: Option<&AssistBundle>) -> CliResult<Dataset> {
        let path = match (&self.data, bundle.and_then(|b| b.data.source.as_ref())) {
            (Some(p), _) => p.clone(),
            (None, Some(p)) => PathBuf::from(p),
            (None, None) => return Err(Failure::usage("--data is required")),
        };
        let data = self.read(&path)?;
        Ok(match &self.unit {
            Some(u) => {
                let d = data.unit(u);
                if d.is_empty() {
                    return Err(Failure::usage(format!("no records for unit `{u}`")));
                }
                d
            }
            None => data,
        })
    }
}

fn split_list(raw: &str) -> Vec<String> {
    raw.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn parse_floats(raw: &str) -> Result<Vec<f64>, String> {
    split_list(raw)
        .iter()
        .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: {s}")))
        .collect()
}

#[derive(Args)]
struct AssistArgs {
    /// Data used to fit the models and estimate the arrival rate.
    #[arg(long)]
    baseline: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated risk-adjustment covariates.
    #[arg(long)]
    covariates: Option<String>,
    #[arg(long)]
    followup: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    time: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    maxtheta: Option<f64>,
    /// Bundle JSON output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated covariates.
    #[arg(long, default_value = "")]
    covariates: String,
    /// Outcome window; required by fit-glm.
    #[arg(long)]
    followup: Option<f64>,
    /// Model JSON output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FunnelArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Logistic model JSON; without one every patient shares the pooled rate.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    followup: Option<f64>,
    /// Only patients with entry + followup at or before this time count.
    #[arg(long)]
    ctime: Option<f64>,
    #[arg(long)]
    p0: Option<f64>,
    /// Comma-separated confidence levels.
    #[arg(long, value_parser = parse_floats)]
    conflev: Option<std::vec::Vec<f64>>,
    #[arg(long)]
    assist: Option<PathBuf>,
    /// Summary CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write funnel-limit curves for plotting.
    #[arg(long)]
    plot_data: Option<PathBuf>,
}

#[derive(Args)]
struct ChartOut {
    /// Stop when the chart reaches this limit.
    #[arg(long, allow_negative_numbers = true)]
    h: Option<f64>,
    #[arg(long)]
    stoptime: Option<f64>,
    /// Chart output: `.json` for JSON, CSV otherwise; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parameters and models from an `assist` bundle.
    #[arg(long)]
    assist: Option<PathBuf>,
}

#[derive(Args)]
struct BernoulliArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    followup: Option<f64>,
    /// Log odds ratio under the alternative; negative for the lower chart.
    #[arg(long, allow_negative_numbers = true)]
    theta: Option<f64>,
    #[arg(long)]
    p0: Option<f64>,
    #[arg(long)]
    p1: Option<f64>,
    #[command(flatten)]
    out: ChartOut,
}

#[derive(Args)]
struct BkArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Log hazard ratio under the alternative; negative for the lower chart.
    #[arg(long, allow_negative_numbers = true)]
    theta: Option<f64>,
    #[arg(long)]
    truncation: Option<f64>,
    #[command(flatten)]
    out: ChartOut,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Matrix,
    Rescan,
}

#[derive(Args)]
struct CgrArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    maxtheta: Option<f64>,
    #[arg(long)]
    truncation: Option<f64>,
    #[arg(long, value_enum, default_value = "matrix")]
    method: Method,
    #[command(flatten)]
    out: ChartOut,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Bernoulli,
    Bk,
    Cgr,
}

#[derive(Args)]
struct LimitArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    time: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    psi: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    theta: Option<f64>,
    #[arg(long)]
    maxtheta: Option<f64>,
    #[arg(long)]
    followup: Option<f64>,
    #[arg(long)]
    p0: Option<f64>,
    #[arg(long)]
    p1: Option<f64>,
    #[arg(long)]
    truncation: Option<f64>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset whose covariate rows are resampled for simulated patients.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    n_sim: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Decimal places of h.
    #[arg(long, default_value_t = 2)]
    precision: u32,
    #[arg(long)]
    assist: Option<PathBuf>,
    /// Result JSON output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Generator settings as JSON; flags below override them.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_units: Option<usize>,
    /// Comma-separated arrival rates spread over blocks of units.
    #[arg(long, value_parser = parse_floats)]
    psi: Option<std::vec::Vec<f64>>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    baseline_rate: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    theta_mean: Option<f64>,
    #[arg(long)]
    theta_sd: Option<f64>,
    #[arg(long)]
    censor_cap: Option<f64>,
    /// Round times to whole days.
    #[arg(long)]
    integer_times: bool,
    /// Dataset CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunlengthArgs {
    #[arg(long)]
    chart: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    h: f64,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    chart: PathBuf,
    /// Limit drawn as a dashed line; the chart's stored limit when omitted.
    #[arg(long, allow_negative_numbers = true)]
    h: Option<f64>,
    #[arg(long)]
    title: Option<String>,
    /// SVG output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_bundle(path: Option<&PathBuf>) -> CliResult<Option<AssistBundle>> {
    path.map(|p| AssistBundle::from_json(&read_text(p)?).map_err(|e| Failure::Validation(format!("{}: {e}", p.display()))))
        .transpose()
}

fn pick<T>(flag: Option<T>, bundled: Option<T>, name: &str) -> CliResult<T> {
    flag.or(bundled).ok_or_else(|| Failure::usage(format!("--{name} is required")))
}

fn hazard_model(flag: Option<&PathBuf>, bundle: Option<&AssistBundle>) -> CliResult<RiskModel> {
    match (flag, bundle.and_then(|b| b.coxphmod.clone())) {
        (Some(p), _) => read_model(p),
        (None, Some(m)) => Ok(m.into()),
        (None, None) => Err(Failure::usage("--model is required (a Cox or manual model with a baseline)")),
    }
}

fn as_hazard(m: &RiskModel) -> CliResult<&dyn survchart::riskadjust::HazardModel> {
    m.as_hazard()
        .ok_or_else(|| Failure::usage(format!("a {} model has no baseline hazard", m.kind())))
}

/// Writes the chart to `--out` (or CSV on stdout); `--json` adds the JSON
/// form on stdout in place of the CSV.
fn finish_chart(chart: &Chart, out: &ChartOut, json: bool) -> CliResult<()> {
    if out.out.is_some() || !json {
        write_chart(out.out.as_ref(), chart)?;
    }
    if json {
        println!("{}", chart.to_json());
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure::usage("--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let json = cli.json;
    match cli.command {
        Command::Assist(a) => {
            let base = a.data.read(&a.baseline)?;
            let data = a.data.load(None)?;
            let opts = AssistOptions {
                covariates: a.covariates.as_deref().map(split_list),
                followup: a.followup,
                theta: a.theta,
                time: a.time,
                alpha: a.alpha,
                maxtheta: a.maxtheta,
            };
            let mut bundle = parameter_assist(&base, &data, &opts)?;
            bundle.call = std::env::args().collect();
            bundle.baseline_data = DatasetRef::of(&base, Some(a.baseline.display().to_string()));
            bundle.data = DatasetRef::of(&data, a.data.data.as_ref().map(|p| p.display().to_string()));
            emit_text(a.out.as_ref(), &bundle.to_json())?;
            if json && a.out.is_some() {
                println!("{}", bundle.to_json());
            }
        }
        Command::FitGlm(a) => {
            let data = a.data.load(None)?;
            let followup = a.followup.ok_or_else(|| Failure::usage("--followup is required"))?;
            let model: RiskModel = fit_logistic(&data, &split_list(&a.covariates), followup)?.into();
            emit_text(a.out.as_ref(), &model.to_json())?;
        }
        Command::FitCox(a) => {
            let data = a.data.load(None)?;
            let model: RiskModel = fit_coxph(&data, &split_list(&a.covariates))?.into();
            emit_text(a.out.as_ref(), &model.to_json())?;
        }
        Command::Funnel(a) => {
            let bundle = load_bundle(a.assist.as_ref())?;
            let data = a.data.load(bundle.as_ref())?;
            let model = match (&a.model, bundle.as_ref().and_then(|b| b.glmmod.clone())) {
                (Some(p), _) => Some(read_model(p)?),
                (None, m) => m.map(RiskModel::from),
            };
            let prob = match &model {
                Some(m) => Some(m.as_probability().ok_or_else(|| Failure::usage("funnel plots need a logistic model"))?),
                None => None,
            };
            let followup = match (a.followup, &bundle, model.as_ref().and_then(RiskModel::followup)) {
                (Some(f), _, _) => f,
                (None, Some(b), _) => b.require_followup()?,
                (None, None, Some(f)) => f,
                (None, None, None) => return Err(Failure::usage("--followup is required")),
            };
            let opts = FunnelOptions {
                followup,
                ctime: a.ctime,
                p0: a.p0,
                conflevs: a.conflev.unwrap_or_else(|| DEFAULT_CONFLEVS.to_vec()),
            };
            let summary = funnel_summary(&data, prob, &opts)?;
            emit(a.out.as_ref(), |w| summary.to_csv(w))?;
            if let Some(p) = &a.plot_data {
                emit(Some(p), |w| summary.plot_data_csv(w, 200))?;
            }
            if json {
                println!("{}", serde_json::to_string_pretty(&summary).expect("summaries serialize"));
            }
        }
        Command::Bernoulli(a) => {
            let bundle = load_bundle(a.out.assist.as_ref())?;
            let bundle = bundle.as_ref();
            let data = a.data.load(bundle)?;
            let model = match (&a.model, bundle.and_then(|b| b.glmmod.clone())) {
                (Some(p), _) => Some(read_model(p)?),
                (None, m) if a.p0.is_none() => m.map(RiskModel::from),
                _ => None,
            };
            let followup = match (a.followup, model.as_ref().and_then(RiskModel::followup), bundle) {
                (Some(f), _, _) => f,
                (None, Some(f), _) => f,
                (None, None, Some(b)) => b.require_followup()?,
                (None, None, None) => return Err(Failure::usage("--followup is required")),
            };
            let params = match (&model, a.p0, a.p1) {
                (Some(m), None, None) => BernoulliParams::Model {
                    model: m.as_probability().ok_or_else(|| Failure::usage("the Bernoulli chart needs a logistic model"))?,
                    theta: pick(a.theta, bundle.map(|b| b.theta), "theta")?,
                },
                (None, Some(p0), Some(p1)) if a.theta.is_none() => BernoulliParams::Probabilities { p0, p1 },
                (None, Some(p0), None) => BernoulliParams::Odds {
                    p0,
                    theta: pick(a.theta, bundle.map(|b| b.theta), "theta")?,
                },
                _ => return Err(Failure::usage("give either --model with --theta, --p0 with --theta, or --p0 with --p1")),
            };
            let spec = BernoulliSpec { params, followup };
            let chart = bernoulli_cusum(&data, &spec, a.out.stoptime, a.out.h)?;
            finish_chart(&chart, &a.out, json)?;
        }
        Command::Bk(a) => {
            let bundle = load_bundle(a.out.assist.as_ref())?;
            let data = a.data.load(bundle.as_ref())?;
            let model = hazard_model(a.model.as_ref(), bundle.as_ref())?;
            let spec = BkSpec {
                truncation: a.truncation,
                stoptime: a.out.stoptime,
                ..BkSpec::new(pick(a.theta, bundle.as_ref().map(|b| b.theta), "theta")?)
            };
            let chart = bk_cusum(&data, as_hazard(&model)?, &spec, a.out.h)?;
            finish_chart(&chart, &a.out, json)?;
        }
        Command::Cgr(a) => {
            let bundle = load_bundle(a.out.assist.as_ref())?;
            let data = a.data.load(bundle.as_ref())?;
            let model = hazard_model(a.model.as_ref(), bundle.as_ref())?;
            let spec = CgrSpec {
                maxtheta: a.maxtheta.or(bundle.as_ref().map(|b| b.maxtheta)).unwrap_or(DEFAULT_MAXTHETA),
                truncation: a.truncation,
                stoptime: a.out.stoptime,
                method: match a.method {
                    Method::Matrix => CgrMethod::Matrix,
                    Method::Rescan => CgrMethod::Rescan,
                },
                ctimes: None,
            };
            let chart = cgr_cusum(&data, as_hazard(&model)?, &spec, a.out.h)?;
            finish_chart(&chart, &a.out, json)?;
        }
        Command::ControlLimit(a) => control_limit_cmd(a, cli.progress)?,
        Command::Simulate(a) => {
            let mut cfg: GenConfig = match &a.config {
                Some(p) => serde_json::from_str(&read_text(p)?).map_err(|e| Failure::Validation(format!("{}: {e}", p.display())))?,
                None => GenConfig::default(),
            };
            if let Some(v) = a.seed {
                cfg.seed = v;
            }
            if let Some(v) = a.n_units {
                cfg.n_units = v;
            }
            if let Some(v) = a.psi {
                cfg.psi_levels = v;
            }
            if let Some(v) = a.horizon {
                cfg.entry_horizon = v;
            }
            if let Some(v) = a.baseline_rate {
                cfg.baseline_rate = v;
            }
            if let Some(v) = a.theta_mean {
                cfg.theta_mean = v;
            }
            if let Some(v) = a.theta_sd {
                cfg.theta_sd = v;
            }
            if a.censor_cap.is_some() {
                cfg.censor_cap = a.censor_cap;
            }
            cfg.integer_times |= a.integer_times;
            let data = generate_surgery_data(&cfg)?;
            emit(a.out.as_ref(), |w| data.to_csv(w))?;
            if json {
                println!("{}", json!({"n_records": data.len(), "units": data.units(), "config": cfg}));
            }
        }
        Command::Runlength(a) => {
            let chart = read_chart(&a.chart)?;
            let rl = chart.runlength(a.h)?;
            if json {
                println!("{}", json!({"h": a.h, "runlength": rl.is_finite().then_some(rl), "signalled": rl.is_finite()}));
            } else {
                println!("{rl}");
            }
        }
        Command::Plot(a) => {
            let chart = read_chart(&a.chart)?;
            let title = a.title.unwrap_or_else(|| format!("{} CUSUM", chart.kind.as_str()));
            emit_text(a.out.as_ref(), &svg::render(&chart, a.h.or(chart.h), &title))?;
        }
    }
    Ok(())
}

fn control_limit_cmd(a: LimitArgs, progress: bool) -> CliResult<()> {
    let bundle = load_bundle(a.assist.as_ref())?;
    let b = bundle.as_ref();
    let chart = match a.kind {
        Kind::Bernoulli => LimitChart::Bernoulli {
            followup: match (a.followup, b) {
                (Some(f), _) => f,
                (None, Some(b)) => b.require_followup()?,
                (None, None) => return Err(Failure::usage("--followup is required")),
            },
            theta: a.theta.or(if a.p1.is_none() { b.map(|b| b.theta) } else { None }),
            p0: a.p0,
            p1: a.p1,
        },
        Kind::Bk => LimitChart::Bk {
            theta: pick(a.theta, b.map(|b| b.theta), "theta")?,
            truncation: a.truncation,
        },
        Kind::Cgr => LimitChart::Cgr {
            maxtheta: a.maxtheta.or(b.map(|b| b.maxtheta)).unwrap_or(DEFAULT_MAXTHETA),
            truncation: a.truncation,
        },
    };
    let model: Option<RiskModel> = match (&a.model, a.kind) {
        (Some(p), _) => Some(read_model(p)?),
        (None, Kind::Bernoulli) if a.p0.is_none() => b.and_then(|b| b.glmmod.clone()).map(RiskModel::from),
        (None, Kind::Bk | Kind::Cgr) => b.and_then(|b| b.coxphmod.clone()).map(RiskModel::from),
        _ => None,
    };
    let baseline = match (&a.baseline, b.and_then(|b| b.baseline_data.source.as_ref())) {
        (Some(p), _) => Some(read_dataset(p, &Schema::default())?),
        (None, Some(p)) => Some(read_dataset(std::path::Path::new(p), &Schema::default())?),
        (None, None) => None,
    };
    let mut cfg = SimConfig::new(
        chart,
        pick(a.time, b.map(|b| b.time), "time")?,
        a.alpha.or(b.map(|b| b.alpha)).unwrap_or(0.05),
        pick(a.psi, b.map(|b| b.psi), "psi")?,
    );
    if let Some(n) = a.n_sim {
        cfg.n_sim = n;
    }
    cfg.seed = a.seed;
    cfg.h_precision = a.precision;
    if (cfg.n_sim as f64) * cfg.alpha < 5.0 {
        eprintln!(
            "warning: n_sim = {} leaves under 5 expected exceedances at alpha = {}; h will be a rough estimate",
            cfg.n_sim, cfg.alpha
        );
    }
    let report = |done: usize, total: usize| {
        eprint!("\rsimulated {done}/{total}");
        if done == total {
            eprintln!();
        }
    };
    let opts = RunOptions {
        workers: None,
        progress: if progress { Some(&report) } else { None },
    };
    let inputs = SimInputs {
        baseline_data: baseline.as_ref(),
        model: model.as_ref(),
    };
    let result = control_limit(&cfg, &inputs, &opts)?;
    let text = serde_json::to_string_pretty(&result).expect("results serialize");
    emit_text(a.out.as_ref(), &text)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
