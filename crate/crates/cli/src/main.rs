use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use advgame::best_response::{adversary_best_response, classifier_best_response};
use advgame::equilibrium::{run_best_response_dynamics_with, verify_equilibrium, DynamicsOptions, Sweep};
use advgame::game::{feasible_adversary, feasible_classifier, MetricsReport};
use advgame::model::{fit, synthetic_example, whiten, Ridge, WhitenTransform};
use advgame::montecarlo::{
    decision_boundary_points, empirical_rates, scatter_rows, write_boundary_csv, write_scatter_csv,
    DEFAULT_FIGURE_SAMPLES,
};
use advgame::{
    AdversaryPolicy, ClassifierPolicy, Error, GameConfig, GameMetrics, GaussianClassModel, Label, LabeledDataset,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "advgame", version, about = "Adversarial classification games on Gaussian data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample labeled rows from the two-dimensional illustrative model.
    GenSynthetic {
        #[arg(long, default_value_t = DEFAULT_FIGURE_SAMPLES)]
        n_per_class: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit per-class Gaussians to a labeled CSV.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Where to write the whitening transform (with --whiten).
        #[arg(long)]
        transform_out: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Best response of one player against a fixed opponent.
    BestResponse {
        #[arg(long, value_enum)]
        player: Player,
        #[command(flatten)]
        model: ModelArgs,
        /// Opponent policy JSON. Defaults to the identity adversary for the
        /// classifier and to the non-adversarial classifier for the adversary.
        #[arg(long)]
        opponent: Option<PathBuf>,
        #[command(flatten)]
        game: GameArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run averaged best-response dynamics to an equilibrium.
    Equilibrium {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        game: GameArgs,
        #[arg(long, value_enum, default_value_t = SweepArg::Jacobi)]
        sweep: SweepArg,
        /// Per-iteration trace, one JSON object per line.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form metrics of a policy pair.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        pair: PairArgs,
        #[command(flatten)]
        game: GameArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo rates of a policy pair, optionally with scatter data.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Also write `x1,x2,class,manipulated` rows (two-dimensional models).
        #[arg(long)]
        scatter: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_FIGURE_SAMPLES)]
        scatter_per_class: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Points of a planar decision boundary clipped to a box.
    Boundary {
        #[arg(long)]
        classifier: PathBuf,
        /// Lower corner, `x1,x2`.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        lo: DVector<f64>,
        /// Upper corner, `x1,x2`.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        hi: DVector<f64>,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Player {
    Adversary,
    Classifier,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    Jacobi,
    GaussSeidel,
}

#[derive(Args)]
struct DataArgs {
    /// Diagonal ridge added to each class covariance; default `1e-8 tr / n`.
    #[arg(long)]
    ridge: Option<f64>,
    /// Labels are 0/1 instead of -1/+1.
    #[arg(long)]
    labels01: bool,
    /// Whiten features with the pooled covariance before fitting.
    #[arg(long)]
    whiten: bool,
}

#[derive(Args)]
struct ModelArgs {
    /// `synthetic`, a model JSON file, or `fit:<csv>`.
    #[arg(long, default_value = "synthetic")]
    model: String,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct PairArgs {
    #[arg(long)]
    adversary: PathBuf,
    #[arg(long)]
    classifier: PathBuf,
}

#[derive(Args)]
struct GameArgs {
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    #[arg(long, default_value_t = 2.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.5)]
    varpi: f64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-5)]
    conv_tol: f64,
}

impl GameArgs {
    fn config(&self) -> Result<GameConfig, Error> {
        let c = GameConfig {
            delta: self.delta,
            epsilon: self.epsilon,
            varpi: self.varpi,
            max_iters: self.max_iters,
            conv_tol: self.conv_tol,
            ..GameConfig::default()
        };
        c.validate()?;
        Ok(c)
    }
}

fn parse_point(s: &str) -> Result<DVector<f64>, String> {
    let xs = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if xs.len() != 2 {
        return Err(format!("expected two comma-separated numbers, got {}", xs.len()));
    }
    Ok(DVector::from_vec(xs))
}

fn ridge(r: Option<f64>) -> Ridge {
    r.map_or(Ridge::Default, Ridge::Fixed)
}

fn read_dataset(path: &Path, labels01: bool) -> Result<LabeledDataset, Error> {
    LabeledDataset::from_csv_reader(File::open(path)?, labels01)
}

fn fit_dataset(path: &Path, data: &DataArgs) -> Result<(GaussianClassModel, Option<WhitenTransform>), Error> {
    let set = read_dataset(path, data.labels01)?;
    if data.whiten {
        let (white, t) = whiten(&set)?;
        Ok((fit(&white, ridge(data.ridge))?, Some(t)))
    } else {
        Ok((fit(&set, ridge(data.ridge))?, None))
    }
}

fn load_model(args: &ModelArgs) -> Result<GaussianClassModel, Error> {
    if args.model == "synthetic" {
        Ok(synthetic_example())
    } else if let Some(csv) = args.model.strip_prefix("fit:") {
        Ok(fit_dataset(Path::new(csv), &args.data)?.0)
    } else {
        Ok(serde_json::from_reader(File::open(&args.model)?)?)
    }
}

/// Reads a policy file: either the bare policy or any report written by this
/// tool that embeds one (under `key`, `policy`, `response.policy` or
/// `opponent`). The first location that parses as `T` wins.
fn load_policy<T: DeserializeOwned>(path: &Path, key: &str) -> Result<T, Error> {
    let v: Value = serde_json::from_reader(File::open(path)?)?;
    let bare = serde_json::from_value::<T>(v.clone());
    if bare.is_ok() {
        return Ok(bare?);
    }
    let pointers = [format!("/{key}"), "/policy".into(), "/response/policy".into(), "/opponent".into()];
    for p in &pointers {
        if let Some(Ok(t)) = v.pointer(p).map(|inner| serde_json::from_value::<T>(inner.clone())) {
            return Ok(t);
        }
    }
    Ok(bare?)
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn write_json<T: Serialize>(path: &Option<PathBuf>, value: &T) -> Result<(), Error> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn report(model: &GaussianClassModel, adv: &AdversaryPolicy, clf: &ClassifierPolicy, cfg: &GameConfig) -> Result<MetricsReport, Error> {
    Ok(MetricsReport {
        metrics: GameMetrics::evaluate(model, adv, clf)?,
        delta: cfg.delta,
        epsilon: cfg.epsilon,
    })
}

fn require_feasible(
    model: &GaussianClassModel,
    adv: &AdversaryPolicy,
    clf: &ClassifierPolicy,
    cfg: &GameConfig,
) -> Result<(), Error> {
    if !feasible_adversary(model, adv, cfg.epsilon * (1.0 + 1e-6)) {
        return Err(Error::InvariantViolation("computed adversary policy exceeds the budget".into()));
    }
    if !feasible_classifier(model, clf, cfg.delta + 1e-6) {
        return Err(Error::InvariantViolation("computed classifier violates the true negative constraint".into()));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenSynthetic { n_per_class, seed, out } => {
            let model = synthetic_example();
            let mut rows = Vec::with_capacity(2 * n_per_class);
            for label in [Label::Positive, Label::Negative] {
                rows.extend(model.sample(label, n_per_class, seed).into_iter().map(|x| (x, label)));
            }
            let set = LabeledDataset::new(2, rows)?;
            set.write_csv(output(&out)?)?;
        }
        Command::Fit {
            input,
            data,
            transform_out,
            out,
        } => {
            let (model, transform) = fit_dataset(&input, &data)?;
            write_json(&out, &model)?;
            if let Some(t) = transform {
                let path = transform_out.or_else(|| out.as_ref().map(|p| p.with_extension("whiten.json")));
                match path {
                    Some(p) => write_json(&Some(p), &t)?,
                    None => write_json(&None, &json!({ "whiten": t }))?,
                }
            }
        }
        Command::BestResponse {
            player,
            model,
            opponent,
            game,
            out,
        } => {
            let model = load_model(&model)?;
            let cfg = game.config()?;
            let value = match player {
                Player::Classifier => {
                    let adv = match opponent {
                        Some(p) => load_policy::<AdversaryPolicy>(&p, "adversary")?,
                        None => AdversaryPolicy::identity(model.dim()),
                    };
                    let br = classifier_best_response(&model, &adv, cfg.delta)?;
                    if !feasible_classifier(&model, &br.policy, cfg.delta + 1e-6) {
                        return Err(Error::InvariantViolation("classifier response is infeasible".into()));
                    }
                    let metrics = report(&model, &adv, &br.policy, &cfg)?;
                    json!({ "player": "classifier", "response": br, "metrics": metrics })
                }
                Player::Adversary => {
                    let clf = match opponent {
                        Some(p) => load_policy::<ClassifierPolicy>(&p, "classifier")?,
                        None => {
                            classifier_best_response(&model, &AdversaryPolicy::identity(model.dim()), cfg.delta)?.policy
                        }
                    };
                    let br = adversary_best_response(&model, &clf, cfg.epsilon)?;
                    if !feasible_adversary(&model, &br.policy, cfg.epsilon * (1.0 + 1e-6)) {
                        return Err(Error::InvariantViolation("adversary response exceeds the budget".into()));
                    }
                    let metrics = report(&model, &br.policy, &clf, &cfg)?;
                    json!({ "player": "adversary", "response": br, "metrics": metrics, "opponent": clf })
                }
            };
            write_json(&out, &value)?;
        }
        Command::Equilibrium {
            model,
            game,
            sweep,
            trace,
            out,
        } => {
            let model = load_model(&model)?;
            let cfg = game.config()?;
            let opts = DynamicsOptions {
                sweep: match sweep {
                    SweepArg::Jacobi => Sweep::Jacobi,
                    SweepArg::GaussSeidel => Sweep::GaussSeidel,
                },
                ..DynamicsOptions::from_config(&cfg)
            };
            let result = run_best_response_dynamics_with(&model, &cfg, None, &opts);
            // keep the partial trace when the dynamics fail
            if let (Err(Error::Dynamics { trace: t, .. }), Some(p)) = (&result, &trace) {
                t.write_jsonl(BufWriter::new(File::create(p)?))?;
            }
            let eq = result?;
            require_feasible(&model, &eq.adversary, &eq.classifier, &cfg)?;
            if let Some(p) = &trace {
                let mut w = BufWriter::new(File::create(p)?);
                eq.trace.write_jsonl(&mut w)?;
                w.flush()?;
            }
            let verification = verify_equilibrium(&model, &eq.adversary, &eq.classifier, &cfg, 0.01)?;
            let metrics = report(&model, &eq.adversary, &eq.classifier, &cfg)?;
            write_json(
                &out,
                &json!({
                    "adversary": eq.adversary,
                    "classifier": eq.classifier,
                    "metrics": metrics,
                    "config": cfg,
                    "sweep": opts.sweep,
                    "iterations": eq.trace.iterations.len(),
                    "converged": eq.trace.converged,
                    "stop_reason": eq.trace.stop_reason,
                    "verification": verification,
                }),
            )?;
        }
        Command::Eval { model, pair, game, out } => {
            let model = load_model(&model)?;
            let cfg = game.config()?;
            let adv: AdversaryPolicy = load_policy(&pair.adversary, "adversary")?;
            let clf: ClassifierPolicy = load_policy(&pair.classifier, "classifier")?;
            let metrics = report(&model, &adv, &clf, &cfg)?;
            write_json(
                &out,
                &json!({
                    "metrics": metrics,
                    "adversary_feasible": feasible_adversary(&model, &adv, cfg.epsilon),
                    "classifier_feasible": feasible_classifier(&model, &clf, cfg.delta),
                }),
            )?;
        }
        Command::Simulate {
            model,
            pair,
            samples,
            seed,
            scatter,
            scatter_per_class,
            out,
        } => {
            let model = load_model(&model)?;
            let adv: AdversaryPolicy = load_policy(&pair.adversary, "adversary")?;
            let clf: ClassifierPolicy = load_policy(&pair.classifier, "classifier")?;
            let rates = empirical_rates(&model, &adv, &clf, samples, seed)?;
            if let Some(p) = &scatter {
                let rows = scatter_rows(&model, &adv, scatter_per_class, seed)?;
                write_scatter_csv(BufWriter::new(File::create(p)?), &rows)?;
            }
            write_json(&out, &json!({ "rates": rates, "seed": seed }))?;
        }
        Command::Boundary {
            classifier,
            lo,
            hi,
            count,
            out,
        } => {
            let clf: ClassifierPolicy = load_policy(&classifier, "classifier")?;
            let points = decision_boundary_points(&clf, &lo, &hi, count)?;
            write_boundary_csv(output(&out)?, &points)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
