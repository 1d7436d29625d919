use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use examagent::bench::{self, BenchOutcome};
use examagent::config::{AppConfig, ClockKind};
use examagent::report::{self, TableRow};
use examagent::service::{self, AuditEntry, Proctor, Service, Sinks};
use examagent::{checkpoint, dataset, records_csv};
use examagent_core::encoding::encode_dataset;
use examagent_core::harness::{self, Dataset, TrainConfig};
use examagent_core::models::Architecture;
use examagent_core::synth::{self, augment};

#[derive(Parser)]
#[command(name = "examagent", version, about = "Exam cheating-detection agent")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort CSV plus an `id,label` ground-truth sidecar.
    Synth {
        #[arg(long)]
        students: Option<usize>,
        #[arg(long)]
        cheater_fraction: Option<f64>,
        #[arg(long)]
        collusion_pairs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Sidecar path; defaults to the output path with `.labels` appended.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Encode an exam CSV into the feature dataset format.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network and write a checkpoint.
    Train {
        /// Exam CSV to train on.
        #[arg(long, conflicts_with = "data", required_unless_present = "data")]
        csv: Option<PathBuf>,
        /// Encoded dataset to train on.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "denselstm")]
        arch: Architecture,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Train on everything instead of holding out a validation split.
        #[arg(long)]
        no_split: bool,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "data", required_unless_present = "data")]
        csv: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Write the full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write the ROC curve as CSV.
        #[arg(long)]
        roc: Option<PathBuf>,
    },
    /// Train and compare every architecture on the synthetic term cohorts.
    Benchmark {
        /// Directory for the JSON report and per-model ROC files.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run the proctoring service, or replay a recorded event log through it.
    Serve {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        listen: Option<String>,
        /// Replay this event log instead of listening, then exit.
        #[arg(long)]
        replay: Option<PathBuf>,
        /// Record accepted requests here for later replay.
        #[arg(long)]
        event_log: Option<PathBuf>,
        #[arg(long)]
        alert_log: Option<PathBuf>,
        #[arg(long)]
        audit_log: Option<PathBuf>,
    },
    /// Print the set-assignment audit log, optionally for one address.
    IpLog {
        #[arg(long)]
        audit: Option<PathBuf>,
        #[arg(long)]
        ip: Option<std::net::Ipv4Addr>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = AppConfig::load_or_default(cli.global.config.as_deref())?;
    if let Some(seed) = cli.global.seed {
        config.synth.seed = seed;
        config.train.seed = seed;
        config.service.seed = seed;
    }
    match cli.command {
        Command::Synth {
            students,
            cheater_fraction,
            collusion_pairs,
            out,
            labels,
        } => {
            let mut cohort = config.cohort();
            if let Some(n) = students {
                cohort.student_count = n;
            }
            if let Some(f) = cheater_fraction {
                cohort.cheater_fraction = f;
            }
            if let Some(p) = collusion_pairs {
                cohort.collusion_pair_count = p;
            }
            let (records, truth) = synth::generate(&cohort)?;
            records_csv::write_csv(create(&out)?, &records)?;
            let labels = labels.unwrap_or_else(|| with_suffix(&out, ".labels"));
            records_csv::write_labels(create(&labels)?, &records, &truth)?;
            eprintln!("wrote {} records to {} and labels to {}", records.len(), out.display(), labels.display());
        }
        Command::Encode { input, out } => {
            let data = load_csv_dataset(&input, &config)?;
            dataset::write_dataset(create(&out)?, &data)?;
            eprintln!("encoded {} records into {}", data.len(), out.display());
        }
        Command::Train {
            csv,
            data,
            arch,
            epochs,
            learning_rate,
            out,
            no_split,
        } => {
            let all = load_any(csv.as_deref(), data.as_deref(), &config)?;
            let mut train = config.train;
            if let Some(e) = epochs {
                train.epochs = e;
            }
            if let Some(lr) = learning_rate {
                train.learning_rate = lr;
            }
            train_command(&all, arch, &train, &out, no_split)?;
        }
        Command::Eval {
            checkpoint: ckpt,
            csv,
            data,
            json,
            roc,
        } => {
            let data = load_any(csv.as_deref(), data.as_deref(), &config)?;
            let mut net = checkpoint::load(BufReader::new(open(&ckpt)?))
                .with_context(|| format!("loading {}", ckpt.display()))?;
            let report = harness::evaluate(&mut net, &data)?;
            print!("{}", report::render_eval(&report));
            if let Some(path) = json {
                serde_json::to_writer_pretty(create(&path)?, &report)?;
            }
            if let Some(path) = roc {
                report::write_roc_csv(create(&path)?, &report.roc)?;
            }
        }
        Command::Benchmark { out_dir, epochs } => {
            let mut train = config.train;
            if let Some(e) = epochs {
                train.epochs = e;
            }
            let terms = bench::build_terms(&config.benchmark, &config.cohort(), train.augment_count)?;
            let outcome = bench::run(&config.benchmark, &train, &terms, &mut |seed, arch, term, r, _| {
                eprintln!("seed {seed} {arch:<9} {term:<10} accuracy {:.2}%", r.accuracy);
            })?;
            print_outcome(&outcome);
            if let Some(dir) = out_dir {
                write_bench_outputs(&dir, &outcome)?;
            }
        }
        Command::Serve {
            checkpoint: ckpt,
            listen,
            replay,
            event_log,
            alert_log,
            audit_log,
        } => {
            let service_cfg = &config.service;
            let ckpt = ckpt
                .or_else(|| service_cfg.checkpoint.clone())
                .context("a checkpoint is required (--checkpoint or service.checkpoint)")?;
            let net = checkpoint::load(BufReader::new(open(&ckpt)?))
                .with_context(|| format!("loading {}", ckpt.display()))?;
            // replays must reproduce timestamps, so they always use the logical clock
            let clock = if replay.is_some() { ClockKind::Logical } else { service_cfg.clock };
            let proctor = Proctor::new(net, config.exam.clone(), config.speed_model, service_cfg.seed, clock)?;
            let sinks = Sinks {
                alerts: Some(service::append_file(&alert_log.unwrap_or_else(|| service_cfg.alert_log.clone()))?),
                audit: Some(service::append_file(&audit_log.unwrap_or_else(|| service_cfg.audit_log.clone()))?),
                events: event_log.as_deref().map(service::append_file).transpose()?,
            };
            let mut svc = Service::new(proctor, sinks);
            if let Some(path) = replay {
                let stdout = io::stdout();
                let mut out = stdout.lock();
                for line in service::replay(BufReader::new(open(&path)?), &mut svc)? {
                    writeln!(out, "{line}")?;
                }
                return Ok(());
            }
            let addr = listen.unwrap_or_else(|| service_cfg.listen.clone());
            let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
            eprintln!("listening on {}", listener.local_addr()?);
            service::run(listener, Arc::new(Mutex::new(svc)))?;
        }
        Command::IpLog { audit, ip } => {
            let path = audit.unwrap_or_else(|| config.service.audit_log.clone());
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let stdout = io::stdout();
            let mut out = stdout.lock();
            writeln!(out, "{:>8}  {:<15}  {:<10}  {:<18}  set", "ts", "ip", "session", "decision")?;
            for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let e: AuditEntry =
                    serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), n + 1))?;
                if ip.is_some_and(|ip| ip != e.ip) {
                    continue;
                }
                writeln!(
                    out,
                    "{:>8}  {:<15}  {:<10}  {:<18}  {}",
                    e.ts,
                    e.ip.to_string(),
                    e.session_id,
                    format!("{:?}", e.kind),
                    e.set_id
                )?;
            }
        }
    }
    Ok(())
}

fn train_command(all: &Dataset, arch: Architecture, train: &TrainConfig, out: &Path, no_split: bool) -> anyhow::Result<()> {
    let (train_set, validation) = if no_split {
        (all.clone(), None)
    } else {
        let split = harness::split(&all.labels, train.split_ratio, train.seed)?;
        if split.single_class {
            eprintln!("warning: the dataset holds a single class; stratification has no effect");
        }
        (all.subset(&split.train), Some(all.subset(&split.validation)))
    };
    let train_set = if train.augment_count > 0 && train_set.labels.contains(&examagent_core::encoding::BehaviorLabel::Abnormal) {
        let (f, l) = augment(&train_set.features, &train_set.labels, train.augment_count, train.seed)?;
        Dataset::new(f, l)?
    } else {
        train_set
    };
    let (mut net, report) = harness::fit::<f32>(arch, &train_set, train)?;
    if let (Some(first), Some(last)) = (report.loss_history.first(), report.loss_history.last()) {
        eprintln!("{arch}: {} steps, loss {first:.4} -> {last:.4}", report.steps);
    }
    if let Some(v) = validation.filter(|v| !v.is_empty()) {
        let r = harness::evaluate(&mut net, &v)?;
        eprintln!("validation accuracy {:.2}% on {} samples", r.accuracy, v.len());
    }
    let mut w = BufWriter::new(create(out)?);
    checkpoint::save(&mut w, &mut net)?;
    w.flush()?;
    Ok(())
}

fn print_outcome(outcome: &BenchOutcome) {
    let rows: Vec<TableRow<'_>> = outcome
        .mean
        .iter()
        .map(|r| TableRow {
            architecture: r.architecture,
            terms: &r.terms,
            overall: r.overall,
        })
        .collect();
    println!("mean over {} training seed(s)", outcome.runs.len());
    print!("{}", report::render_table(&outcome.term_names, &rows));
}

fn write_bench_outputs(dir: &Path, outcome: &BenchOutcome) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    serde_json::to_writer_pretty(create(&dir.join("benchmark.json"))?, outcome)?;
    for run in &outcome.runs {
        for row in &run.table.rows {
            for (term, report) in outcome.term_names.iter().zip(&row.terms) {
                let name = format!(
                    "roc_seed{}_{}_{}.csv",
                    run.seed,
                    row.architecture.name().to_ascii_lowercase(),
                    term.to_ascii_lowercase().replace(' ', "_")
                );
                report::write_roc_csv(create(&dir.join(name))?, &report.roc)?;
            }
        }
    }
    Ok(())
}

fn load_csv_dataset(path: &Path, config: &AppConfig) -> anyhow::Result<Dataset> {
    let records = records_csv::parse_csv(BufReader::new(open(path)?), &config.exam)
        .with_context(|| format!("parsing {}", path.display()))?;
    let (features, labels) = encode_dataset(&records, &config.exam, &config.speed_model);
    Ok(Dataset::new(features, labels)?)
}

fn load_any(csv: Option<&Path>, data: Option<&Path>, config: &AppConfig) -> anyhow::Result<Dataset> {
    match (csv, data) {
        (Some(p), _) => load_csv_dataset(p, config),
        (None, Some(p)) => Ok(dataset::read_dataset(BufReader::new(open(p)?))
            .with_context(|| format!("reading {}", p.display()))?),
        (None, None) => bail!("either --csv or --data is required"),
    }
}

fn open(path: &Path) -> anyhow::Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn create(path: &Path) -> anyhow::Result<File> {
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
