//! Command-line verbs. Every verb returns a process exit code:
//! 0 success, 1 check failure, 2 configuration or input error,
//! 3 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{embeddings_csv, gen_blobs, gen_two_moons, write_embeddings_csv, BlobParams};
use crate::diagnostics::{class_separation, MetricsRecord};
use crate::error::{Error, Result};
use crate::gradcheck::{run_gradcheck, GradcheckOptions};
use crate::model::{evaluate, train, MixupKind, TrainRun};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const RESOLVED_CONFIG_FILE: &str = "config_resolved.txt";
pub const SUMMARY_FILE: &str = "summary.json";
pub const COMPARISON_FILE: &str = "comparison.csv";

#[derive(Debug, Parser)]
#[command(name = "coretune", version, about = "Contrastive fine-tuning with hard pair generation on small MLPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Config file (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train once and write metrics.jsonl, the resolved config and summary.json.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of all gradient paths; exit 1 if any exceeds 1e-5.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Random instances per loss path.
        #[arg(long, default_value_t = crate::gradcheck::DEFAULT_INSTANCES)]
        instances: usize,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Run the five ablation rows over several seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Number of seeds, starting at the config seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Train, then write the final encoder features of the training set as CSV.
    DumpFeatures {
        #[command(flatten)]
        common: Common,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic dataset as CSV.
    GenData {
        #[arg(long, value_enum)]
        kind: DataKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 30)]
        per_class: usize,
        #[arg(long, default_value_t = 3.0)]
        separation: f64,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        #[arg(long, default_value_t = 2)]
        dim: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    Blobs,
    Moons,
}

/// Parses arguments and runs the verb. Argument errors print clap's message
/// and map to exit code 2.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Train { common, out } => load_config(&common).and_then(|cfg| cmd_train(&cfg, &out)),
        Command::Gradcheck {
            common,
            instances,
            corrupt_gradient,
        } => load_config(&common).and_then(|cfg| {
            cmd_gradcheck(
                &cfg,
                &GradcheckOptions {
                    instances,
                    corrupt: corrupt_gradient,
                    ..Default::default()
                },
            )
        }),
        Command::Ablate { common, out, seeds } => load_config(&common).and_then(|cfg| cmd_ablate(&cfg, &out, seeds)),
        Command::DumpFeatures { common, out } => load_config(&common).and_then(|cfg| cmd_dump_features(&cfg, &out)),
        Command::GenData {
            kind,
            out,
            seed,
            classes,
            per_class,
            separation,
            noise,
            dim,
        } => cmd_gen_data(
            kind,
            &BlobParams {
                classes,
                n_per_class: per_class,
                separation,
                noise,
                dim,
            },
            seed,
            &out,
        ),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFiniteLoss { .. } | Error::NonFinite { .. } => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

pub fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub epochs: usize,
    pub seed: u64,
    pub final_train_acc: f64,
    pub final_test_acc: f64,
    pub final_loss_total: f64,
    pub first_loss_total: f64,
    pub final_tightness: f64,
    pub final_feature_entropy: f64,
    /// Minimum distance between class means of the final training features.
    pub final_class_separation: Option<f64>,
    /// Epochs in which the entropy estimate clamped coincident feature pairs.
    pub entropy_floor_hits: usize,
}

pub fn metrics_jsonl(records: &[MetricsRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("plain numeric record"));
        s.push('\n');
    }
    s
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

/// Trains once and writes the three run artifacts into `out`.
pub fn train_to_dir(cfg: &RunConfig, out: &Path) -> Result<(TrainRun, Summary)> {
    fs::create_dir_all(out)?;
    write_file(&out.join(RESOLVED_CONFIG_FILE), &cfg.to_string())?;
    let (train_ds, test_ds) = cfg.load_datasets()?;
    let run = train(cfg, &train_ds, &test_ds)?;
    write_file(&out.join(METRICS_FILE), &metrics_jsonl(&run.records))?;

    let first = run.records.first().expect("epochs >= 1");
    let last = run.records.last().expect("epochs >= 1");
    let z = evaluate(&run.params, &train_ds)?.z;
    let summary = Summary {
        epochs: run.records.len(),
        seed: cfg.seed,
        final_train_acc: last.train_acc,
        final_test_acc: last.test_acc,
        final_loss_total: last.loss_total,
        first_loss_total: first.loss_total,
        final_tightness: last.tightness,
        final_feature_entropy: last.feature_entropy,
        final_class_separation: class_separation(&z, train_ds.labels()).ok(),
        entropy_floor_hits: run.entropy_floor_hits,
    };
    let json = serde_json::to_string_pretty(&summary).expect("plain numeric summary");
    write_file(&out.join(SUMMARY_FILE), &(json + "\n"))?;
    Ok((run, summary))
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let (_, s) = train_to_dir(cfg, out)?;
    println!(
        "epochs={} train_acc={:.4} test_acc={:.4} loss={:.6} -> {}",
        s.epochs,
        s.final_train_acc,
        s.final_test_acc,
        s.final_loss_total,
        out.display()
    );
    Ok(EXIT_OK)
}

pub fn cmd_gradcheck(cfg: &RunConfig, opts: &GradcheckOptions) -> Result<i32> {
    let report = run_gradcheck(cfg, opts)?;
    println!("{report}");
    Ok(if report.passed() { EXIT_OK } else { EXIT_CHECK_FAILED })
}

/// One row of the ablation lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationRow {
    pub id: usize,
    pub name: &'static str,
    pub ours: bool,
    pub use_contrastive: bool,
    pub use_focal: bool,
    pub use_generation: bool,
    pub mixup: MixupKind,
}

impl AblationRow {
    pub fn dir_name(&self) -> String {
        format!("row{}_{}", self.id, self.name)
    }

    /// The base config with this row's switches applied.
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        RunConfig {
            use_contrastive: self.use_contrastive,
            use_focal: self.use_focal,
            use_generation: self.use_generation,
            use_mixed_ce: true,
            mixup: self.mixup,
            ..base.clone()
        }
    }
}

/// CE only; CE with the contrastive loss; CE with random mixup; contrastive
/// with hard-pair mixup; focal contrastive with hard-pair mixup.
pub const ABLATION_ROWS: [AblationRow; 5] = [
    AblationRow {
        id: 1,
        name: "ce_only",
        ours: false,
        use_contrastive: false,
        use_focal: false,
        use_generation: false,
        mixup: MixupKind::Hard,
    },
    AblationRow {
        id: 2,
        name: "ce_con",
        ours: false,
        use_contrastive: true,
        use_focal: false,
        use_generation: false,
        mixup: MixupKind::Hard,
    },
    AblationRow {
        id: 3,
        name: "ce_mix",
        ours: false,
        use_contrastive: false,
        use_focal: false,
        use_generation: true,
        mixup: MixupKind::Random,
    },
    AblationRow {
        id: 4,
        name: "con_mixh",
        ours: false,
        use_contrastive: true,
        use_focal: false,
        use_generation: true,
        mixup: MixupKind::Hard,
    },
    AblationRow {
        id: 5,
        name: "focal_mixh",
        ours: true,
        use_contrastive: true,
        use_focal: true,
        use_generation: true,
        mixup: MixupKind::Hard,
    },
];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub row: AblationRow,
    pub test_acc: Vec<f64>,
}

impl AblationResult {
    pub fn mean_test_acc(&self) -> f64 {
        self.test_acc.iter().sum::<f64>() / self.test_acc.len() as f64
    }
}

pub fn comparison_csv(results: &[AblationResult], seeds: &[u64]) -> String {
    let seed_list: Vec<String> = seeds.iter().map(u64::to_string).collect();
    let mut s = String::from("row,name,contrastive,focal,generation,mixup,ours,seeds,mean_test_acc\n");
    for r in results {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.row.id,
            r.row.name,
            r.row.use_contrastive,
            r.row.use_focal,
            r.row.use_generation,
            match r.row.mixup {
                MixupKind::Hard => "hard",
                MixupKind::Random => "random",
            },
            if r.row.ours { "ours" } else { "" },
            seed_list.join(" "),
            r.mean_test_acc()
        ));
    }
    s
}

/// Runs all rows for seeds `cfg.seed .. cfg.seed + seeds`. Rows run on their
/// own threads; each owns its seeds and output directory.
pub fn run_ablation(cfg: &RunConfig, out: &Path, seeds: u64) -> Result<Vec<AblationResult>> {
    if seeds == 0 {
        return Err(Error::config("--seeds", "must be >= 1"));
    }
    fs::create_dir_all(out)?;
    let seed_list: Vec<u64> = (0..seeds).map(|s| cfg.seed + s).collect();
    let results: Vec<Result<AblationResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = ABLATION_ROWS
            .iter()
            .map(|row| {
                let seed_list = &seed_list;
                scope.spawn(move || {
                    let mut test_acc = Vec::with_capacity(seed_list.len());
                    for &seed in seed_list {
                        let row_cfg = RunConfig { seed, ..row.apply(cfg) };
                        let dir = out.join(row.dir_name()).join(format!("seed{seed}"));
                        let (_, summary) = train_to_dir(&row_cfg, &dir)?;
                        test_acc.push(summary.final_test_acc);
                    }
                    Ok(AblationResult { row: *row, test_acc })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("ablation row panicked")).collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    write_file(&out.join(COMPARISON_FILE), &comparison_csv(&results, &seed_list))?;
    Ok(results)
}

pub fn cmd_ablate(cfg: &RunConfig, out: &Path, seeds: u64) -> Result<i32> {
    for r in run_ablation(cfg, out, seeds)? {
        println!(
            "row {} {:<11} mean_test_acc={:.4}{}",
            r.row.id,
            r.row.name,
            r.mean_test_acc(),
            if r.row.ours { "  (ours)" } else { "" }
        );
    }
    Ok(EXIT_OK)
}

pub fn cmd_dump_features(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let (train_ds, test_ds) = cfg.load_datasets()?;
    let run = train(cfg, &train_ds, &test_ds)?;
    let z = evaluate(&run.params, &train_ds)?.z;
    let classes: Vec<usize> = train_ds.classes();
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_file(out, &embeddings_csv(&z, &classes, "z"))?;
    println!("{} rows x {} features -> {}", z.rows(), z.cols(), out.display());
    Ok(EXIT_OK)
}

pub fn cmd_gen_data(kind: DataKind, params: &BlobParams, seed: u64, out: &Path) -> Result<i32> {
    let ds = match kind {
        DataKind::Blobs => gen_blobs(params, seed)?,
        DataKind::Moons => gen_two_moons(params.n_per_class, params.noise, seed)?,
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_embeddings_csv(&ds, out)?;
    println!("{} samples -> {}", ds.len(), out.display());
    Ok(EXIT_OK)
}
