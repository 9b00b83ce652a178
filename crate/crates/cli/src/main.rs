use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use twopoint::attack::AttackMode;
use twopoint::config::{LoadError, Scenario, ScenarioConfig};
use twopoint::forest::ForestModel;
use twopoint::pipeline::{
    self, read_dataset, run_attack, run_experiment, run_simulation, train_split_model, write_dataset,
    ExperimentOutcome, ExperimentPlan, PipelineError, AttackOutcome,
};

#[derive(Parser)]
#[command(name = "twopoint", version, about = "Two-point voltage fingerprinting simulator and IDS for CAN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML). Defaults to the built-in ten-ECU testbed.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate benign traffic and write the feature dataset.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the number of benign messages.
        #[arg(long)]
        messages: Option<usize>,
        /// Also write the two-point trace of one message to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        trace_index: usize,
    },
    /// Train a forest on the training side of the split and save it.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        train_frac: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate on a dataset; writes report.json and confusion.csv.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<EvalMode>,
        #[arg(long)]
        train_frac: Option<f64>,
        #[arg(long)]
        kfold: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured masquerade campaign against a trained model.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Benign dataset; its held-out split measures victim impact and false alerts.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<AttackArg>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarise report files; exits 4 if any misses its gate.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Minimum macro F1 (experiments) or attacker recall (attacks).
        #[arg(long)]
        gate: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMode {
    Split,
    Kfold,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackArg {
    MidOnly,
    MidVoltage,
}

enum Failure {
    Validation(String),
    Io(String),
    Gate(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Io(_) => 3,
            Failure::Gate(_) => 4,
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn load_config(common: &Common) -> Result<ScenarioConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => ScenarioConfig::from_path(path).map_err(|e| match e {
            LoadError::Io(..) => Failure::Io(e.to_string()),
            LoadError::Config(_) => Failure::Validation(e.to_string()),
        })?,
        None => ScenarioConfig::testbed(),
    };
    if let Some(seed) = common.seed {
        config.experiment.seed = seed;
    }
    Ok(config)
}

fn resolve(config: &ScenarioConfig) -> Result<Scenario, Failure> {
    config
        .resolve()
        .map_err(|e| Failure::Validation(format!("invalid config: {e}")))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| io_err(path, e))?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| io_err(path, e))
}

fn load_dataset(path: &Path) -> Result<Vec<twopoint::eval::Sample>, Failure> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let (_, samples) = read_dataset(BufReader::new(file)).map_err(|e| match e {
        PipelineError::Io(err) => io_err(path, err),
        other => Failure::Validation(format!("{}: {other}", path.display())),
    })?;
    Ok(samples)
}

#[derive(Serialize)]
struct ExperimentRecord<'a> {
    provenance: String,
    config_hash: String,
    seed: u64,
    gate_macro_f1: f64,
    config: &'a ScenarioConfig,
    outcome: &'a ExperimentOutcome,
}

#[derive(Serialize)]
struct AttackRecord<'a> {
    provenance: String,
    config_hash: String,
    seed: u64,
    model_provenance: &'a str,
    config: &'a ScenarioConfig,
    outcome: &'a AttackOutcome,
}

fn simulate(
    common: &Common,
    out: &Path,
    messages: Option<usize>,
    trace: Option<&Path>,
    trace_index: usize,
) -> Result<(), Failure> {
    let mut config = load_config(common)?;
    if let Some(m) = messages {
        config.experiment.messages = m;
    }
    let scenario = resolve(&config)?;
    let samples = run_simulation(&scenario)?;
    let provenance = config.provenance();
    let file = create(out)?;
    write_dataset(file, &samples, Some(&provenance))?;
    if let Some(path) = trace {
        pipeline::write_benign_trace(&scenario, trace_index, create(path)?)?;
    }
    println!("wrote {} samples to {} ({provenance})", samples.len(), out.display());
    Ok(())
}

fn train(common: &Common, dataset: &Path, train_frac: Option<f64>, out: &Path) -> Result<(), Failure> {
    let mut config = load_config(common)?;
    if let Some(f) = train_frac {
        config.experiment.train_fraction = f;
    }
    resolve(&config)?;
    let samples = load_dataset(dataset)?;
    let exp = &config.experiment;
    let (mut model, test) = train_split_model(&samples, exp.train_fraction, exp.stratified, &config.forest, exp.seed)?;
    model.provenance = config.provenance();
    let mut file = create(out)?;
    model.to_writer(&mut file).map_err(|e| io_err(out, e))?;
    file.flush().map_err(|e| io_err(out, e))?;
    println!(
        "trained {} trees on {} samples ({} held out); model written to {}",
        model.trees.len(),
        samples.len() - test.len(),
        test.len(),
        out.display()
    );
    Ok(())
}

fn evaluate(
    common: &Common,
    dataset: &Path,
    mode: Option<EvalMode>,
    train_frac: Option<f64>,
    kfold: Option<usize>,
    out: &Path,
) -> Result<(), Failure> {
    let mut config = load_config(common)?;
    match mode {
        Some(EvalMode::Split) => config.experiment.mode = twopoint::config::SplitMode::Split,
        Some(EvalMode::Kfold) => config.experiment.mode = twopoint::config::SplitMode::Kfold,
        None => {}
    }
    if let Some(f) = train_frac {
        config.experiment.train_fraction = f;
    }
    if let Some(k) = kfold {
        config.experiment.k = k;
        if mode.is_none() {
            config.experiment.mode = twopoint::config::SplitMode::Kfold;
        }
    }
    let scenario = resolve(&config)?;
    let samples = load_dataset(dataset)?;
    let plan = ExperimentPlan::from_scenario(&scenario);
    let outcome = run_experiment(&samples, plan, &config.forest, config.experiment.seed)?;

    let provenance = config.provenance();
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let record = ExperimentRecord {
        provenance: provenance.clone(),
        config_hash: config.hash(),
        seed: config.experiment.seed,
        gate_macro_f1: config.experiment.gate_macro_f1,
        config: &config,
        outcome: &outcome,
    };
    write_json(&out.join("report.json"), &record)?;
    let path = out.join("confusion.csv");
    outcome
        .aggregate
        .matrix
        .write_csv(create(&path)?, Some(&provenance))
        .map_err(|e| io_err(&path, e))?;
    if outcome.folds.len() > 1 {
        for (i, fold) in outcome.folds.iter().enumerate() {
            let path = out.join(format!("fold_{:02}.csv", i + 1));
            fold.matrix
                .write_csv(create(&path)?, Some(&provenance))
                .map_err(|e| io_err(&path, e))?;
        }
    }
    println!(
        "{}: macro F1 {:.6} (pooled {:.6}), worst class F1 {:.6}; report in {}",
        outcome.aggregate.split,
        outcome.mean_macro_f1,
        outcome.aggregate.macro_f1,
        outcome.aggregate.worst_f1,
        out.display()
    );
    Ok(())
}

fn attack(
    common: &Common,
    model_path: &Path,
    dataset: Option<&Path>,
    mode: Option<AttackArg>,
    out: &Path,
) -> Result<(), Failure> {
    let mut config = load_config(common)?;
    let Some(attack) = config.attack.as_mut() else {
        return Err(Failure::Validation("config has no [attack] section".into()));
    };
    match mode {
        Some(AttackArg::MidOnly) => attack.mode = AttackMode::MidOnly,
        Some(AttackArg::MidVoltage) => attack.mode = AttackMode::MidVoltage,
        None => {}
    }
    let scenario = resolve(&config)?;
    let file = File::open(model_path).map_err(|e| io_err(model_path, e))?;
    let model = ForestModel::from_reader(BufReader::new(file))
        .map_err(|e| Failure::Validation(format!("{}: {e}", model_path.display())))?;
    let held_out = match dataset {
        Some(path) => {
            let samples = load_dataset(path)?;
            let exp = &config.experiment;
            let labels: Vec<_> = samples.iter().map(|s| s.label).collect();
            let (_, test) = twopoint::eval::train_test_split(&labels, exp.train_fraction, exp.stratified, exp.seed)
                .map_err(|e| Failure::Validation(e.to_string()))?;
            Some(test.into_iter().map(|i| samples[i].clone()).collect::<Vec<_>>())
        }
        None => None,
    };
    let outcome = run_attack(&scenario, &model, held_out.as_deref())?;

    let provenance = config.provenance();
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let record = AttackRecord {
        provenance: provenance.clone(),
        config_hash: config.hash(),
        seed: config.experiment.seed,
        model_provenance: &model.provenance,
        config: &config,
        outcome: &outcome,
    };
    write_json(&out.join("attack_report.json"), &record)?;
    let path = out.join("attack_confusion.csv");
    outcome
        .campaign
        .report
        .matrix
        .write_csv(create(&path)?, Some(&provenance))
        .map_err(|e| io_err(&path, e))?;
    for (ecu, recall) in &outcome.campaign.attacker_recall {
        println!("attacker {ecu}: identified in {:.4} of {} frames", recall, outcome.injected);
    }
    println!("alert rate {:.4}; report in {}", outcome.campaign.alert_rate, out.display());
    Ok(())
}

fn report(inputs: &[PathBuf], gate: Option<f64>) -> Result<(), Failure> {
    let mut failed = Vec::new();
    for path in inputs {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
        let num = |p: &str| v.pointer(p).and_then(Value::as_f64);
        println!("{}", path.display());
        if let Some(p) = v.get("provenance").and_then(Value::as_str) {
            println!("  {p}");
        }
        if let Some(macro_f1) = num("/outcome/mean_macro_f1") {
            let threshold = gate.or(num("/gate_macro_f1")).unwrap_or(0.0);
            println!(
                "  {}: macro F1 {macro_f1:.6}, worst class F1 {:.6}",
                v.pointer("/outcome/aggregate/split").and_then(Value::as_str).unwrap_or("experiment"),
                num("/outcome/aggregate/worst_f1").unwrap_or(f64::NAN)
            );
            if let Some(Value::Array(classes)) = v.pointer("/outcome/aggregate/per_class") {
                for c in classes {
                    println!(
                        "    ECU{:<3} P {:.6}  R {:.6}  F1 {:.6}  n {}",
                        c["ecu"], c["precision"].as_f64().unwrap_or(f64::NAN),
                        c["recall"].as_f64().unwrap_or(f64::NAN),
                        c["f1"].as_f64().unwrap_or(f64::NAN),
                        c["support"]
                    );
                }
            }
            let pass = macro_f1 >= threshold;
            println!("  gate macro F1 >= {threshold}: {}", if pass { "PASS" } else { "FAIL" });
            if !pass {
                failed.push(path.display().to_string());
            }
        } else if let Some(Value::Array(recalls)) = v.pointer("/outcome/campaign/attacker_recall") {
            let threshold = gate.unwrap_or(0.99);
            println!(
                "  {} injected frames, alert rate {:.6}",
                v.pointer("/outcome/injected").unwrap_or(&Value::Null),
                num("/outcome/campaign/alert_rate").unwrap_or(f64::NAN)
            );
            let mut pass = true;
            for r in recalls {
                let recall = r[1].as_f64().unwrap_or(0.0);
                println!("    attacker ECU{} recall {recall:.6}", r[0]);
                pass &= recall >= threshold;
            }
            if let Some(Value::Array(victims)) = v.pointer("/outcome/victims") {
                for vi in victims {
                    println!(
                        "    victim ECU{} F1 {:.6} benign, {:.6} under attack",
                        vi["ecu"],
                        vi["benign_f1"].as_f64().unwrap_or(f64::NAN),
                        vi["under_attack_f1"].as_f64().unwrap_or(f64::NAN)
                    );
                }
            }
            println!("  gate attacker recall >= {threshold}: {}", if pass { "PASS" } else { "FAIL" });
            if !pass {
                failed.push(path.display().to_string());
            }
        } else {
            return Err(Failure::Validation(format!("{}: not a report file", path.display())));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Gate(format!("gate failed for {}", failed.join(", "))))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate {
            common,
            out,
            messages,
            trace,
            trace_index,
        } => simulate(&common, &out, messages, trace.as_deref(), trace_index),
        Command::Train {
            common,
            dataset,
            train_frac,
            out,
        } => train(&common, &dataset, train_frac, &out),
        Command::Evaluate {
            common,
            dataset,
            mode,
            train_frac,
            kfold,
            out,
        } => evaluate(&common, &dataset, mode, train_frac, kfold, &out),
        Command::Attack {
            common,
            model,
            dataset,
            mode,
            out,
        } => attack(&common, &model, dataset.as_deref(), mode, &out),
        Command::Report { inputs, gate } => report(&inputs, gate),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Validation(m) | Failure::Io(m) | Failure::Gate(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}
