//! Command-line front end for simulation, attack, end-to-end runs, plot
//! export and the oracle suites.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use propinfer::fedsim::SyntheticTask;
use propinfer::harness::{
    self, AttackOutcome, DatasetSpec, ExperimentConfig, HarnessError, PropertyKind, Selector,
    Simulation,
};
use propinfer::oracle;
use propinfer::reconstruct::{DecisionRule, Method};

#[derive(Parser)]
#[command(
    name = "propinfer",
    version,
    about = "Client property inference from securely aggregated FL updates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the federation only and archive the attacker view and ground truth.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Train detectors and run the reconstructions on an existing archive.
    Attack {
        /// Directory written by `simulate`.
        #[arg(long)]
        archive: PathBuf,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        eval_every: Option<usize>,
    },
    /// Simulate and attack in one go.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Write plot-ready CSVs from a completed run.
    Export {
        #[arg(long)]
        archive: PathBuf,
        /// `f1`, `ovl`, or `dist:<round>,<round>,...`.
        #[arg(long, value_parser = parse_selector)]
        select: Selector,
        /// Defaults to `<archive>/plots`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare PROLIN against the exhaustive oracle on planted instances.
    Oracle {
        /// Number of planted instances (seeds 0..count).
        #[arg(long, default_value_t = 10)]
        count: u64,
    },
}

#[derive(Args)]
struct OutArgs {
    /// Exact output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parent directory for `run-<unixtime>-seed<first seed>`.
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Paper,
}

/// Every flag overrides the matching field of the loaded or preset config.
#[derive(Args)]
struct ConfigArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    #[arg(long, value_parser = parse_property)]
    property: Option<PropertyKind>,
    /// Repeatable.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long)]
    min_positives: Option<usize>,
    #[arg(long)]
    samples_per_client: Option<usize>,
    #[arg(long)]
    aux_size: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    eta_global: Option<f64>,
    #[arg(long)]
    local_epochs: Option<usize>,
    #[arg(long)]
    local_batch_size: Option<usize>,
    #[arg(long)]
    eta_detector: Option<f64>,
    #[arg(long)]
    detector_epochs: Option<usize>,
    #[arg(long)]
    detector_batch_size: Option<usize>,
    #[arg(long)]
    detector_set_size: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    no_secure_aggregation: bool,
    #[arg(long)]
    scale_bits: Option<u32>,
    #[arg(long)]
    prolin_learning_rate: Option<f64>,
    #[arg(long)]
    prolin_max_iters: Option<usize>,
    /// Synthetic task input dimension.
    #[arg(long)]
    synthetic_dim: Option<usize>,
    /// IDX image file (requires --idx-labels).
    #[arg(long, requires = "idx_labels")]
    idx_images: Option<PathBuf>,
    #[arg(long, requires = "idx_images")]
    idx_labels: Option<PathBuf>,
    #[arg(long)]
    idx_limit: Option<usize>,
}

fn parse_property(s: &str) -> Result<PropertyKind, String> {
    s.parse()
}

fn parse_selector(s: &str) -> Result<Selector, String> {
    s.parse()
}

fn read_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text)
}

fn apply_decision(config: &mut ExperimentConfig, threshold: Option<f64>, top_k: Option<usize>) {
    if let Some(t) = threshold {
        config.decision = DecisionRule::Threshold(t);
    }
    if let Some(k) = top_k {
        config.decision = DecisionRule::TopK(k);
    }
}

impl ConfigArgs {
    fn build(&self) -> Result<ExperimentConfig, HarnessError> {
        let property = self.property.unwrap_or(PropertyKind::Ascent);
        let mut c = match &self.config {
            Some(path) => read_config(path)?,
            None => match self.preset {
                Preset::Desk => ExperimentConfig::desk(property),
                Preset::Paper => ExperimentConfig::paper(property),
            },
        };
        if let Some(p) = self.property {
            c.property = p;
        }
        if !self.seeds.is_empty() {
            c.seeds = self.seeds.clone();
        }
        macro_rules! set {
            ($($flag:ident => $($field:ident).+;)*) => {
                $(if let Some(v) = self.$flag.clone() {
                    c.$($field).+ = v;
                })*
            };
        }
        set! {
            rounds => rounds;
            clients => clients;
            fraction => fraction;
            phi => phi;
            min_positives => min_positives;
            samples_per_client => samples_per_client;
            aux_size => aux_size;
            hidden_dim => hidden_dim;
            eta_global => local.eta;
            local_epochs => local.epochs;
            local_batch_size => local.batch_size;
            eta_detector => detector.eta;
            detector_epochs => detector.epochs;
            detector_batch_size => detector.batch_size;
            detector_set_size => detector.set_size;
            lambda => lambda;
            methods => methods;
            eval_every => eval_every;
            scale_bits => scale_bits;
            prolin_learning_rate => prolin.learning_rate;
            prolin_max_iters => prolin.max_iters;
        }
        apply_decision(&mut c, self.threshold, self.top_k);
        if self.no_secure_aggregation {
            c.secure_aggregation = false;
        }
        if let Some(dim) = self.synthetic_dim {
            let base = match &c.dataset {
                DatasetSpec::Synthetic(task) => *task,
                DatasetSpec::Idx { .. } => SyntheticTask::default(),
            };
            c.dataset = DatasetSpec::Synthetic(SyntheticTask { dim, ..base });
        }
        if let (Some(images), Some(labels)) = (&self.idx_images, &self.idx_labels) {
            c.dataset = DatasetSpec::Idx {
                images: images.clone(),
                labels: labels.clone(),
                limit: self.idx_limit,
            };
        }
        c.validate()?;
        Ok(c)
    }
}

fn run_dir(out: &OutArgs, config: &ExperimentConfig) -> PathBuf {
    out.out.clone().unwrap_or_else(|| {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        out.runs_dir
            .join(format!("run-{ts}-seed{}", config.seeds[0]))
    })
}

fn print_summary(dir: &Path, rows: &[harness::MeanMetricRow]) {
    let last = rows.iter().map(|r| r.round).max().unwrap_or(0);
    for r in rows.iter().filter(|r| r.round == last) {
        println!(
            "{:<8} round {:>4}  F1 {:.3} ± {:.3}  (precision {:.3}, recall {:.3})",
            r.method, r.round, r.mean_f1, r.std_f1, r.mean_precision, r.mean_recall
        );
    }
    println!("archive: {}", dir.display());
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Simulate { config, out } => {
            let config = config.build()?;
            let dir = run_dir(&out, &config);
            let sims = config
                .seeds
                .iter()
                .map(|&s| harness::simulate(&config, s))
                .collect::<Result<Vec<Simulation>, _>>()?;
            harness::write_simulation(&dir, &config, &sims.iter().collect::<Vec<_>>())?;
            println!("archive: {}", dir.display());
        }
        Command::Attack {
            archive,
            methods,
            lambda,
            threshold,
            top_k,
            eval_every,
        } => {
            let (manifest, seeds) = harness::read_archive(&archive)?;
            let mut config = manifest.config.clone();
            if let Some(m) = methods {
                config.methods = m;
            }
            if let Some(l) = lambda {
                config.lambda = l;
            }
            if let Some(e) = eval_every {
                config.eval_every = e;
            }
            apply_decision(&mut config, threshold, top_k);
            config.validate()?;
            let outcomes = seeds
                .iter()
                .map(|s| {
                    let labels = manifest.labels(s.seed).ok_or_else(|| {
                        HarnessError::Data(format!("no roles for seed {}", s.seed))
                    })?;
                    harness::attack(&config, &s.view, &s.server, &labels, s.seed)
                })
                .collect::<Result<Vec<AttackOutcome>, _>>()?;
            harness::write_outcomes(&archive, &outcomes.iter().collect::<Vec<_>>())?;
            harness::write_manifest(&archive, &harness::Manifest { config, ..manifest })?;
            let rows: Vec<_> = outcomes
                .iter()
                .flat_map(|o| o.metrics.iter().cloned())
                .collect();
            print_summary(&archive, &harness::average_metrics(&rows));
        }
        Command::Run { config, out } => {
            let config = config.build()?;
            let dir = run_dir(&out, &config);
            let start = Instant::now();
            let result = harness::run_experiment(&config)?;
            harness::write_archive(&dir, &result)?;
            print_summary(&dir, &result.mean_metrics());
            println!("elapsed: {:.1} s", start.elapsed().as_secs_f64());
        }
        Command::Export {
            archive,
            select,
            out,
        } => {
            let out = out.unwrap_or_else(|| archive.join("plots"));
            for path in harness::export_plot_data(&archive, &out, &select)? {
                println!("{}", path.display());
            }
        }
        Command::Oracle { count } => {
            let seeds: Vec<u64> = (0..count).collect();
            let cases =
                oracle::brute_force_suite(&seeds).map_err(|source| HarnessError::Prolin {
                    seed: 0,
                    round: 0,
                    source,
                })?;
            let bits = |v: &[bool]| {
                v.iter()
                    .map(|b| if *b { '1' } else { '0' })
                    .collect::<String>()
            };
            for c in &cases {
                println!(
                    "seed {:>3}  truth {}  oracle {}  prolin {}  {}",
                    c.seed,
                    bits(&c.truth),
                    bits(&c.oracle),
                    bits(&c.prolin),
                    if c.agrees() { "agree" } else { "DIFFER" }
                );
            }
            let agree = cases.iter().filter(|c| c.agrees()).count();
            println!("brute-force agreement: {agree}/{}", cases.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.stage());
            ExitCode::FAILURE
        }
    }
}
