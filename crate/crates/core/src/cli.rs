//! Command-line front end. [`run`] takes parsed arguments and output streams
//! and returns the process exit code, so it can be driven from tests.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{self, CliConfig};
use crate::data::make_folds;
use crate::error::{Error, Result};
use crate::experiment::{self, FoldData, RunStatus};
use crate::loss::LossVariant;
use crate::report::{self, HISTOGRAM_BINS};
use crate::store;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING_DATA: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hybridloss", version, about = "Train MLPs with hybrid SE/CE losses and compare the variants")]
pub struct Cli {
    /// TOML config replacing the built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset root (default: $HYBRIDLOSS_DATA, else ./data).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a single run of one variant, printing per-epoch progress.
    Train(TrainArgs),
    /// Run every configured variant for `runs` runs and summarise.
    Experiment(ExperimentArgs),
    /// Build tables, bar-chart data and histograms from stored records.
    Report(ReportArgs),
    /// Weight histogram of one reactive run (switch vs final snapshot).
    Histogram(HistogramArgs),
}

#[derive(Debug, Args)]
pub struct Overrides {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Results directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: String,
    #[arg(long)]
    pub variant: String,
    #[arg(long, default_value_t = 0)]
    pub run: usize,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// One or more datasets (repeat or comma-separate).
    #[arg(long, required = true, value_delimiter = ',')]
    pub dataset: Vec<String>,
    /// Variant labels to run (default: all nine).
    #[arg(long, alias = "variants", value_delimiter = ',')]
    pub variant: Vec<String>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Datasets to report on (default: every dataset directory under --out).
    #[arg(long, value_delimiter = ',')]
    pub dataset: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HistogramArgs {
    #[arg(long)]
    pub dataset: String,
    #[arg(long)]
    pub variant: String,
    #[arg(long, default_value_t = 0)]
    pub run: usize,
    #[arg(long, default_value_t = HISTOGRAM_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::UnknownVariant(_) | Error::Config(_) => EXIT_USAGE,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING_DATA,
        _ => EXIT_FAILURE,
    }
}

pub fn run(cli: Cli, out: &mut impl Write, err: &mut impl Write) -> i32 {
    match dispatch(cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli, out: &mut impl Write) -> Result<i32> {
    let cfg = match &cli.config {
        Some(p) => CliConfig::from_file(p)?,
        None => CliConfig::default(),
    };
    let root = config::data_root(cli.data.as_deref());
    match cli.command {
        Command::Train(a) => cmd_train(&cfg, &root, a, out),
        Command::Experiment(a) => cmd_experiment(&cfg, &root, a, out),
        Command::Report(a) => cmd_report(&cfg, a, out),
        Command::Histogram(a) => cmd_histogram(&cfg, a, out),
    }
}

fn say(out: &mut impl Write, msg: std::fmt::Arguments) -> Result<()> {
    out.write_fmt(msg).and_then(|_| out.write_all(b"\n")).map_err(|e| Error::io("<stdout>", e))
}

fn apply_overrides(cfg: &mut CliConfig, o: &Overrides) {
    if let Some(e) = o.epochs {
        cfg.protocol.epochs = e;
    }
    if let Some(s) = o.seed {
        cfg.protocol.master_seed = s;
    }
    if let Some(p) = &o.out {
        cfg.protocol.out = p.clone();
    }
}

fn parse_variants(labels: &[String]) -> Result<Vec<LossVariant>> {
    labels.iter().map(|l| l.parse()).collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_train(cfg: &CliConfig, root: &Path, args: TrainArgs, out: &mut impl Write) -> Result<i32> {
    let variant: LossVariant = args.variant.parse()?;
    let mut cfg = cfg.clone();
    apply_overrides(&mut cfg, &args.overrides);
    let mut ec = cfg.experiment_config(&args.dataset)?;
    ec.variants = vec![variant];
    ec.runs = ec.runs.max(args.run + 1);
    ec.validate()?;

    let dataset = cfg.load_dataset(root, &args.dataset)?;
    let plan = make_folds(dataset.len(), ec.folds, experiment::fold_seed(ec.master_seed, &ec.dataset))?;
    let fold = args.run % ec.folds;
    let data = FoldData::new(&dataset, &plan, fold)?;
    let seed = experiment::run_seed(ec.master_seed, &ec.dataset, args.run);
    say(
        out,
        format_args!("{} {} run {} (fold {fold}, seed {seed}), {} epochs", ec.dataset, variant, args.run, ec.epochs),
    )?;
    let mut io_err = None;
    // `switched` stays true after the switch; flag only its first epoch
    let mut announced = false;
    let record = experiment::train_one_with(&ec, variant, &data, args.run, seed, |log| {
        let mark = log.switched && !announced;
        announced |= mark;
        let line = format!(
            "epoch {:3}  se {:.2} ce {:.2}  loss {:.6}  train {:.4}  test {:.4}{}",
            log.epoch,
            log.weights.se,
            log.weights.ce,
            log.train_loss,
            log.train_accuracy,
            log.test_accuracy,
            if mark { "  switched" } else { "" }
        );
        if let Err(e) = writeln!(out, "{line}") {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(Error::io("<stdout>", e));
    }
    store::upsert_record(&cfg.protocol.out, &record)?;
    let path = store::variant_dir(&cfg.protocol.out, &ec.dataset, variant).join(format!("run_{}.json", args.run));
    if let Some(e) = record.switch_epoch {
        say(out, format_args!("loss switched at epoch {e}"))?;
    }
    say(out, format_args!("final test accuracy {:.4}", record.final_test_accuracy))?;
    say(out, format_args!("record written to {}", path.display()))?;
    match &record.status {
        RunStatus::Completed => Ok(EXIT_OK),
        RunStatus::Failed { epoch, message } => {
            say(out, format_args!("run diverged at epoch {epoch}: {message}"))?;
            Ok(EXIT_FAILURE)
        }
    }
}

pub fn cmd_experiment(cfg: &CliConfig, root: &Path, args: ExperimentArgs, out: &mut impl Write) -> Result<i32> {
    let mut cfg = cfg.clone();
    apply_overrides(&mut cfg, &args.overrides);
    if let Some(r) = args.runs {
        cfg.protocol.runs = r;
    }
    if let Some(j) = args.jobs {
        cfg.protocol.jobs = j;
    }
    if !args.variant.is_empty() {
        cfg.protocol.variants = parse_variants(&args.variant)?;
    }
    let configs = args
        .dataset
        .iter()
        .map(|d| {
            let c = cfg.experiment_config(d)?;
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut failed = 0;
    for ec in configs {
        let dataset = cfg.load_dataset(root, &ec.dataset)?;
        say(
            out,
            format_args!(
                "{}: {} patterns, {} variants x {} runs, {} epochs, {} jobs",
                ec.dataset,
                dataset.len(),
                ec.variants.len(),
                ec.runs,
                ec.epochs,
                ec.jobs
            ),
        )?;
        let outcome = experiment::run_experiment(&ec, &dataset)?;
        store::write_records(&cfg.protocol.out, &outcome.records)?;
        for f in &outcome.failures {
            say(out, format_args!("FAILED {}/{} run {}: {}", f.dataset, f.variant, f.run, f.message))?;
        }
        failed += outcome.failures.len();
        say(out, format_args!("{} records written under {}", outcome.records.len(), cfg.protocol.out.display()))?;

        match report::build_report(&ec.dataset, &outcome.records) {
            Ok(rep) => {
                let dir = cfg.protocol.out.join(&ec.dataset);
                write_text(&dir.join("summary.csv"), &rep.summary_csv())?;
                write_text(&dir.join("pairwise.csv"), &rep.pairwise_csv())?;
                print_table(out, &rep)?;
            }
            Err(e) => say(out, format_args!("no summary for {}: {e}", ec.dataset))?,
        }
    }
    Ok(if failed > 0 { EXIT_FAILURE } else { EXIT_OK })
}

fn print_table(out: &mut impl Write, rep: &report::DatasetReport) -> Result<()> {
    say(out, format_args!("{:>4}  {:<9} {:>4}  {:>7}  {:>7}  flags", "", "variant", "runs", "mean", "std"))?;
    for r in &rep.rows {
        let flags = match (r.best, r.worst) {
            (true, true) => "best worst",
            (true, false) => "best",
            (false, true) => "worst",
            _ => "",
        };
        say(
            out,
            format_args!(
                "{:>4}  {:<9} {:>4}  {:.4}  {:.4}  {flags}",
                format!("({})", r.ordinal),
                r.variant.label(),
                r.runs,
                r.mean,
                r.std
            ),
        )?;
    }
    Ok(())
}

fn datasets_under(out_dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    Ok(names)
}

pub fn cmd_report(cfg: &CliConfig, args: ReportArgs, out: &mut impl Write) -> Result<i32> {
    let out_dir = args.out.unwrap_or_else(|| cfg.protocol.out.clone());
    let datasets = if args.dataset.is_empty() {
        datasets_under(&out_dir)?
    } else {
        args.dataset
    };
    let mut reported = 0;
    for ds in &datasets {
        let records = store::read_records(&out_dir, ds)?;
        if records.is_empty() {
            continue;
        }
        let rep = report::build_report(ds, &records)?;
        let dir = out_dir.join(ds).join("report");
        write_text(&dir.join("table.csv"), &rep.table_csv())?;
        write_text(&dir.join("summary.csv"), &rep.summary_csv())?;
        write_text(&dir.join("pairwise.csv"), &rep.pairwise_csv())?;
        write_text(&dir.join("bars.csv"), &rep.bars_csv())?;
        write_text(&dir.join("bars.svg"), &rep.bars_svg())?;
        let mut histograms = 0;
        for r in records.iter().filter(|r| r.switch_snapshot.is_some()) {
            let h = report::run_histogram(r, HISTOGRAM_BINS)?;
            let stem = format!("histogram_{}_run{}", r.variant, r.run);
            write_text(&dir.join(format!("{stem}.csv")), &h.csv())?;
            write_text(&dir.join(format!("{stem}.svg")), &h.svg(&format!("{ds} {} run {}", r.variant, r.run)))?;
            histograms += 1;
        }
        say(out, format_args!("{ds}: {} records", records.len()))?;
        print_table(out, &rep)?;
        say(out, format_args!("report written to {} ({histograms} histograms)", dir.display()))?;
        reported += 1;
    }
    if reported == 0 {
        return Err(Error::Report(format!("no records found under {}", out_dir.display())));
    }
    Ok(EXIT_OK)
}

pub fn cmd_histogram(cfg: &CliConfig, args: HistogramArgs, out: &mut impl Write) -> Result<i32> {
    let variant: LossVariant = args.variant.parse()?;
    if !variant.is_reactive() {
        return Err(Error::Report(format!("no switch snapshot: {variant} is not a reactive variant")));
    }
    let out_dir = args.out.unwrap_or_else(|| cfg.protocol.out.clone());
    let records = store::read_variant_records(&out_dir, &args.dataset, variant)?;
    let record = records
        .iter()
        .find(|r| r.run == args.run)
        .ok_or_else(|| Error::Report(format!("no record for {}/{variant} run {}", args.dataset, args.run)))?;
    let h = report::run_histogram(record, args.bins)?;
    let dir = store::variant_dir(&out_dir, &args.dataset, variant);
    let stem = dir.join(format!("run_{}_histogram", args.run));
    write_text(&stem.with_extension("csv"), &h.csv())?;
    write_text(
        &stem.with_extension("svg"),
        &h.svg(&format!("{} {variant} run {}", args.dataset, args.run)),
    )?;
    say(
        out,
        format_args!(
            "switch at epoch {}; skew {:.4} at switch, {:.4} at end",
            record.switch_epoch.map_or("?".into(), |e| e.to_string()),
            h.skew_at_switch,
            h.skew_at_end
        ),
    )?;
    say(out, format_args!("histogram written to {}", stem.with_extension("csv").display()))?;
    Ok(EXIT_OK)
}
