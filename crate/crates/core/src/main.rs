//! Command-line entry point: prepare, train, evaluate, predict.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numerical
//! divergence.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use candlenet::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use candlenet::dataset::{self, WindowSample, BUY};
use candlenet::error::{Error, Result};
use candlenet::market_data::{build_series, parse_csv, TickerSeries};
use candlenet::nn::model::Model;
use candlenet::trainer::{
    curves_csv, evaluate, predict, EvalMetrics, TrainConfig, TrainReport, TrainSession,
};

#[derive(Parser)]
#[command(name = "candlenet", version, about = "Stock-movement classification from OHLCV candles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a labeled window dataset from raw CSVs and write its manifest
    Prepare(PrepareArgs),
    /// Train a model from a JSON config
    Train(TrainArgs),
    /// Evaluate a checkpoint against a CSV
    Evaluate(EvaluateArgs),
    /// Emit a BUY/SELL signal for the most recent window of a CSV
    Predict(PredictArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Input OHLCV CSV file(s), one per ticker
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 256)]
    window: usize,
    #[arg(long, default_value_t = 1)]
    horizon: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory for the manifest
    #[arg(long)]
    out: PathBuf,
    /// Skip malformed rows instead of failing
    #[arg(long, default_value_t = false)]
    lenient: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON config file (TrainConfig keys plus input_csv and output_dir)
    #[arg(long)]
    config: PathBuf,
    /// Resume from a previously written checkpoint
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint file
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    horizon: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Path for the JSON report
    #[arg(long, default_value = "evaluation.json")]
    out: PathBuf,
    #[arg(long, default_value_t = false)]
    lenient: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Print the prediction as JSON instead of the one-line form
    #[arg(long, default_value_t = false)]
    json: bool,
    #[arg(long, default_value_t = false)]
    lenient: bool,
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Prepare(args) => cmd_prepare(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Predict(args) => cmd_predict(args),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn load_ticker(path: &Path, lenient: bool) -> Result<(TickerSeries, usize, usize)> {
    let content = std::fs::read(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let (bars, parse_diags) = parse_csv(&content, lenient)?;
    let symbol = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_uppercase())
        .unwrap_or_else(|| "UNKNOWN".into());
    let (series, build_diags) = build_series(&symbol, &bars, lenient)?;
    Ok((series, bars.len(), parse_diags.len() + build_diags.len()))
}

fn windows_for(
    series: &TickerSeries,
    window: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<WindowSample>> {
    let mut samples = dataset::make_windows(series, window, horizon, stride)?;
    for s in &mut samples {
        let rows = s.window_len;
        dataset::normalize_window(&mut s.matrix, rows);
    }
    Ok(samples)
}

fn cmd_prepare(args: PrepareArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out)?;
    let mut all = Vec::new();
    for path in &args.inputs {
        let (series, bars_read, rejected) = load_ticker(path, args.lenient)?;
        let samples = windows_for(&series, args.window, args.horizon, args.stride)?;
        println!(
            "{}: {bars_read} bars read, {rejected} rows rejected, {} windows",
            series.symbol,
            samples.len()
        );
        all.extend(samples);
    }
    if all.is_empty() {
        return Err(Error::Data(format!(
            "no valid windows: every series is shorter than window + horizon ({} + {})",
            args.window, args.horizon
        )));
    }
    let buys = all.iter().filter(|s| s.label == BUY).count();
    println!("total: {} windows ({} BUY / {} SELL)", all.len(), buys, all.len() - buys);

    let mut manifest = String::from("symbol,start_date,end_date,label_date,label\n");
    for s in &all {
        manifest.push_str(&format!(
            "{},{},{},{},{}\n",
            s.symbol, s.start_date, s.end_date, s.label_date, s.label
        ));
    }
    let manifest_path = args.out.join("manifest.csv");
    std::fs::write(&manifest_path, manifest)?;
    println!("manifest written to {}", manifest_path.display());
    Ok(())
}

struct RunConfig {
    input_csv: Vec<PathBuf>,
    output_dir: PathBuf,
    lenient: bool,
    train: TrainConfig,
}

fn parse_run_config(text: &str) -> Result<RunConfig> {
    let mut map: serde_json::Map<String, Value> = serde_json::from_str(text)
        .map_err(|e| Error::Config(format!("config is not a JSON object: {e}")))?;
    let input_csv: Vec<PathBuf> = match map.remove("input_csv") {
        Some(v) => serde_json::from_value(v)
            .map_err(|e| Error::Config(format!("input_csv must be a list of paths: {e}")))?,
        None => return Err(Error::Config("config key input_csv is required".into())),
    };
    let output_dir: PathBuf = match map.remove("output_dir") {
        Some(v) => serde_json::from_value(v)
            .map_err(|e| Error::Config(format!("output_dir must be a path: {e}")))?,
        None => return Err(Error::Config("config key output_dir is required".into())),
    };
    let lenient = match map.remove("lenient") {
        Some(v) => serde_json::from_value(v)
            .map_err(|e| Error::Config(format!("lenient must be a boolean: {e}")))?,
        None => false,
    };
    let train: TrainConfig = serde_json::from_value(Value::Object(map))
        .map_err(|e| Error::Config(format!("bad training config: {e}")))?;
    train.validate()?;
    if input_csv.is_empty() {
        return Err(Error::Config("input_csv must name at least one file".into()));
    }
    Ok(RunConfig {
        input_csv,
        output_dir,
        lenient,
        train,
    })
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("{}: {e}", args.config.display())))?;
    let run = parse_run_config(&text)?;
    let cfg = run.train.clone();

    let mut samples = Vec::new();
    for path in &run.input_csv {
        let (series, _, _) = load_ticker(path, run.lenient)?;
        samples.extend(windows_for(&series, cfg.window_len, cfg.horizon, cfg.stride)?);
    }
    if samples.is_empty() {
        return Err(Error::Data("no training windows: input series too short".into()));
    }
    let data = cfg.split(samples)?;

    let mut session = match &args.resume {
        Some(path) => TrainSession::resume(cfg.clone(), &load_checkpoint(path)?)?,
        None => TrainSession::new(cfg.clone())?,
    };
    let mut rows = Vec::new();
    while !session.finished() {
        let row = session.run_epoch(&data)?;
        println!(
            "epoch {:>4}  iter {:>6}  loss {:.6}  train_acc {:.4}  val_acc {:.4}",
            row.epoch, row.iteration, row.train_loss, row.train_acc, row.val_acc
        );
        rows.push(row);
    }
    let test = if data.test.is_empty() {
        None
    } else {
        Some(evaluate(&session.model, &data.test)?)
    };
    let report = TrainReport { rows, test };

    std::fs::create_dir_all(&run.output_dir)?;
    std::fs::write(run.output_dir.join("curves.csv"), curves_csv(&report.rows))?;
    save_checkpoint(&run.output_dir.join("checkpoint.json"), &session.checkpoint())?;
    let report_json = serde_json::json!({
        "config": cfg,
        "report": report,
    });
    std::fs::write(
        run.output_dir.join("report.json"),
        serde_json::to_string_pretty(&report_json).expect("report serializes"),
    )?;

    match &report.test {
        Some(m) => print_metrics("test", m),
        None => println!("test: no samples (empty test split)"),
    }
    Ok(())
}

fn print_metrics(what: &str, m: &EvalMetrics) {
    println!(
        "{what}: loss {:.6}, accuracy {:.4}, confusion TP={} FP={} TN={} FN={}",
        m.loss, m.accuracy, m.confusion.tp, m.confusion.fp, m.confusion.tn, m.confusion.fn_
    );
}

fn load_model(path: &Path) -> Result<(Model, Checkpoint)> {
    let ckpt = load_checkpoint(path)?;
    let model = ckpt.restore_model()?;
    Ok((model, ckpt))
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let (model, _) = load_model(&args.model)?;
    let window = model.spec.window_len;
    let mut samples = Vec::new();
    for path in &args.inputs {
        let (series, _, _) = load_ticker(path, args.lenient)?;
        samples.extend(windows_for(&series, window, args.horizon, args.stride)?);
    }
    if samples.is_empty() {
        return Err(Error::Data("no samples: input series shorter than window + horizon".into()));
    }
    let metrics = evaluate(&model, &samples)?;
    print_metrics("evaluation", &metrics);
    let report = serde_json::json!({
        "model": args.model.display().to_string(),
        "inputs": args.inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "horizon": args.horizon,
        "stride": args.stride,
        "samples": samples.len(),
        "metrics": metrics,
    });
    std::fs::write(&args.out, serde_json::to_string_pretty(&report).expect("report serializes"))?;
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let (model, _) = load_model(&args.model)?;
    let (series, _, _) = load_ticker(&args.input, args.lenient)?;
    let p = predict(&model, &series)?;
    if args.json {
        println!("{}", serde_json::to_string(&p).expect("prediction serializes"));
    } else {
        println!("{},{},{:.12},{:.12}", p.symbol, p.signal, p.p_bullish, p.p_bearish);
    }
    Ok(())
}
