//! Command implementations behind the `ngcl` binary.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 data error
//! (including missing artifacts), 3 numeric or training failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ngcl_core::checkpoint::Checkpoint;
use ngcl_core::encoder::{self, EncoderParams};
use ngcl_core::evaluation::{self, CvReport, FoldReport, METRIC_NAMES};
use ngcl_core::gat::{self, GatParams};
use ngcl_core::signalio::load_recording;
use ngcl_core::synth::{synth_graph_dataset, SynthSpec};
use ngcl_core::{dataset, pipeline, BrainGraph, Error, ErrorClass, PipelineConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ngcl", version, about = "Seizure detection on directed brain graphs")]
pub struct Cli {
    /// Key=value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable), e.g. `--set tau=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a graph dataset from annotated recordings.
    BuildGraphs(BuildGraphsArgs),
    /// Write a synthetic two-class graph dataset.
    Synth(SynthArgs),
    /// Contrastive pretraining of the encoder.
    Pretrain(PretrainArgs),
    /// Train the attention classifier on a pretrained encoder.
    Finetune(FinetuneArgs),
    /// Cross-validate, or score a dataset with trained checkpoints.
    Evaluate(EvaluateArgs),
    /// Render a report table from an evaluation directory or report file.
    Report(ReportArgs),
    /// Print the effective configuration.
    Config,
}

#[derive(Debug, Args)]
pub struct BuildGraphsArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Recording CSV files, each with a `.meta` sidecar.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 20)]
    pub nodes: usize,
    #[arg(long, default_value_t = 4)]
    pub soz_size: usize,
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    /// Defaults to the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Encoder checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss trace CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub encoder: PathBuf,
    /// Classifier checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Where the jointly tuned encoder goes when `finetune_encoder = true`;
    /// defaults to `<out>.encoder`.
    #[arg(long)]
    pub encoder_out: Option<PathBuf>,
    /// Per-epoch loss CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Run stratified k-fold cross-validation instead of scoring checkpoints.
    #[arg(long, conflicts_with_all = ["encoder", "gat"])]
    pub cv: bool,
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    #[arg(long)]
    pub gat: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation directory or its `report.csv`.
    pub input: PathBuf,
}

/// Parses `args`, runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Usage => EXIT_USAGE,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Numeric => EXIT_NUMERIC,
    }
}

/// Default configuration, then the file, then `--set` overrides.
pub fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_overrides(&cli.overrides)?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::BuildGraphs(a) => build_graphs(a, &cfg),
        Command::Synth(a) => synth(a, &cfg),
        Command::Pretrain(a) => pretrain(a, &cfg),
        Command::Finetune(a) => finetune(a, &cfg),
        Command::Evaluate(a) => evaluate(a, &cfg),
        Command::Report(a) => {
            print!("{}", report(&a.input)?);
            Ok(())
        }
        Command::Config => {
            print!("{}", cfg.dump());
            Ok(())
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn build_graphs(a: &BuildGraphsArgs, cfg: &PipelineConfig) -> Result<(), Error> {
    let mut graphs = Vec::new();
    let mut failed = Vec::new();
    for file in &a.files {
        match load_recording(file).and_then(|rec| pipeline::graphs_from_recording(&rec, cfg)) {
            Ok(g) => {
                log::info!("{}: {} graphs", file.display(), g.len());
                graphs.extend(g);
            }
            Err(e) => {
                log::error!("{}: {e}", file.display());
                failed.push(file.display().to_string());
            }
        }
    }
    if graphs.is_empty() {
        return Err(Error::Degenerate("no recording produced any graph".into()));
    }
    dataset::save(&graphs, &a.out)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Degenerate(format!(
            "{} of {} recordings failed: {}",
            failed.len(),
            a.files.len(),
            failed.join(", ")
        )))
    }
}

fn synth(a: &SynthArgs, cfg: &PipelineConfig) -> Result<(), Error> {
    let spec = SynthSpec {
        n_per_class: a.n_per_class,
        nodes: a.nodes,
        soz_size: a.soz_size,
        noise: a.noise,
        seed: a.seed.unwrap_or(cfg.seed),
    };
    dataset::save(&synth_graph_dataset(&spec)?, &a.out)
}

fn load_encoder(path: &Path) -> Result<EncoderParams, Error> {
    EncoderParams::from_checkpoint(&Checkpoint::load(path)?)
}

fn load_gat(path: &Path) -> Result<GatParams, Error> {
    GatParams::from_checkpoint(&Checkpoint::load(path)?)
}

fn pretrain(a: &PretrainArgs, cfg: &PipelineConfig) -> Result<(), Error> {
    let graphs = dataset::load(&a.data)?;
    let mut trace = String::from("epoch,batch,l_graph,l_info,l_total\n");
    let params = if cfg.pretrain_enabled {
        let outcome = ngcl_core::pretrain(&graphs, &cfg.pretrain, &cfg.policy(), cfg.seed)?;
        for r in &outcome.trace {
            trace.push_str(&r.to_line());
            trace.push('\n');
        }
        outcome.params
    } else {
        log::info!("pretraining disabled; writing the initial encoder");
        let mut p = ngcl_core::init_encoder(graphs[0].features.n_features(), cfg.pretrain.hidden, cfg.seed)?;
        p.dropout = cfg.pretrain.dropout;
        p
    };
    params.to_checkpoint().save(&a.out)?;
    write(
        &a.trace.clone().unwrap_or_else(|| with_suffix(&a.out, ".loss.csv")),
        &trace,
    )
}

fn finetune(a: &FinetuneArgs, cfg: &PipelineConfig) -> Result<(), Error> {
    let encoder = load_encoder(&a.encoder)?;
    let graphs = dataset::load(&a.data)?;
    let outcome = ngcl_core::finetune(&graphs, &encoder, &cfg.finetune, cfg.seed)?;
    outcome.gat.to_checkpoint().save(&a.out)?;
    if cfg.finetune.finetune_encoder {
        let path = a.encoder_out.clone().unwrap_or_else(|| with_suffix(&a.out, ".encoder"));
        outcome.encoder.to_checkpoint().save(&path)?;
    }
    let mut trace = String::from("epoch,bce\n");
    for (e, l) in outcome.epoch_losses.iter().enumerate() {
        let _ = writeln!(trace, "{e},{l}");
    }
    write(
        &a.trace.clone().unwrap_or_else(|| with_suffix(&a.out, ".loss.csv")),
        &trace,
    )
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

const REPORT_HEADER: &str = "fold,n,tp,fp,tn,fn,acc,sen,spe,ppv,npv,auc";

fn fold_row(f: &FoldReport) -> String {
    let c = f.counts;
    let metrics: Vec<String> = METRIC_NAMES.iter().map(|m| fmt_opt(f.metric(m))).collect();
    format!(
        "{},{},{},{},{},{},{}",
        f.fold,
        c.total(),
        c.tp,
        c.fp,
        c.tn,
        c.fn_,
        metrics.join(",")
    )
}

/// Writes the report, ROC curves, attention maps and graph embeddings.
fn write_evaluation(dir: &Path, graphs: &[BrainGraph], report: &CvReport) -> Result<(), Error> {
    let mut table = format!("{REPORT_HEADER}\n");
    for f in &report.folds {
        table.push_str(&fold_row(f));
        table.push('\n');
    }
    write(&dir.join("report.csv"), &table)?;

    let mut embeddings = String::new();
    for f in &report.folds {
        let mut roc = String::from("fpr,tpr\n");
        for (x, y) in &f.roc {
            let _ = writeln!(roc, "{x},{y}");
        }
        write(&dir.join(format!("roc_fold{}.csv", f.fold)), &roc)?;

        let test: Vec<&BrainGraph> = f.test_indices.iter().map(|&i| &graphs[i]).collect();
        let emb = encoder::embed_graphs(&f.encoder, &test)?;
        if embeddings.is_empty() {
            let cols: Vec<String> = (0..emb.graph_embeddings.ncols()).map(|c| format!("e{c}")).collect();
            let _ = writeln!(embeddings, "graph,fold,label,score,{}", cols.join(","));
        }
        for (k, &i) in f.test_indices.iter().enumerate() {
            let values: Vec<String> = emb.graph_embeddings.row(k).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(
                embeddings,
                "{i},{},{},{},{}",
                f.fold,
                graphs[i].label.as_f64(),
                f.scores[k],
                values.join(",")
            );
            let (_, attention) = gat::predict_embedded(&f.gat, &emb.node_embeddings[k], &graphs[i].adjacency)?;
            let mut lines = String::from("layer,head,src,dst,weight\n");
            for r in attention.records() {
                lines.push_str(&r);
                lines.push('\n');
            }
            write(&dir.join("attention").join(format!("graph_{i}.csv")), &lines)?;
        }
    }
    write(&dir.join("embeddings.csv"), &embeddings)
}

fn evaluate(a: &EvaluateArgs, cfg: &PipelineConfig) -> Result<(), Error> {
    let graphs = dataset::load(&a.data)?;
    let report = if a.cv {
        evaluation::cross_validate(&graphs, &cfg.cv_config())?
    } else {
        let enc_path = a
            .encoder
            .as_ref()
            .ok_or_else(|| Error::MissingArtifact(PathBuf::from("--encoder <checkpoint>")))?;
        let gat_path = a
            .gat
            .as_ref()
            .ok_or_else(|| Error::MissingArtifact(PathBuf::from("--gat <checkpoint>")))?;
        let encoder = load_encoder(enc_path)?;
        let gat = load_gat(gat_path)?;
        CvReport {
            folds: vec![evaluation::evaluate_fold(
                &graphs,
                (0..graphs.len()).collect(),
                0,
                encoder,
                gat,
                cfg.threshold,
            )?],
        }
    };
    write_evaluation(&a.out_dir, &graphs, &report)?;
    print!("{}", render_table(&report_rows(&report)));
    Ok(())
}

type Row = (String, Vec<Option<f64>>);

fn report_rows(report: &CvReport) -> Vec<Row> {
    report
        .folds
        .iter()
        .map(|f| (f.fold.to_string(), METRIC_NAMES.iter().map(|m| f.metric(m)).collect()))
        .collect()
}

fn render_table(rows: &[Row]) -> String {
    let mut out = format!("{:<10}", "fold");
    for m in METRIC_NAMES {
        let _ = write!(out, "{m:>17}");
    }
    out.push('\n');
    let cell = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"));
    for (fold, values) in rows {
        let _ = write!(out, "{fold:<10}");
        for v in values {
            let _ = write!(out, "{:>17}", cell(*v));
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<10}", "mean±sd");
    for m in 0..METRIC_NAMES.len() {
        let s = evaluation::summarize(&rows.iter().map(|r| r.1[m]).collect::<Vec<_>>());
        let text = match (s.mean, s.sd) {
            (Some(mean), Some(sd)) => format!("{mean:.4}±{sd:.4}"),
            (Some(mean), None) => format!("{mean:.4}"),
            _ => "NA".into(),
        };
        let _ = write!(out, "{text:>17}");
    }
    out.push('\n');
    out
}

/// Table with one row per fold plus a mean±sd row.
pub fn report(input: &Path) -> Result<String, Error> {
    let path = if input.is_dir() {
        input.join("report.csv")
    } else {
        input.to_path_buf()
    };
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.clone(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == REPORT_HEADER => {}
        _ => return Err(parse_err(1, "not an evaluation report".into())),
    }
    let mut rows = Vec::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(parse_err(n + 1, format!("expected 12 fields, got {}", fields.len())));
        }
        let values = fields[6..]
            .iter()
            .map(|f| match *f {
                "NA" => Ok(None),
                v => v
                    .parse()
                    .map(Some)
                    .map_err(|_| parse_err(n + 1, format!("bad value {v:?}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((fields[0].to_string(), values));
    }
    Ok(render_table(&rows))
}
