use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::parser::ValueSource;
use clap::{Arg, ArgMatches, Args, Command, FromArgMatches, Parser, Subcommand, ValueEnum};
use roiattn::ablation::{run_depth_grid, run_variants, summarize};
use roiattn::bench::{bench_attention, doubling_range};
use roiattn::checkpoint::{self, CheckpointError};
use roiattn::configfile::{self, ConfigFileError};
use roiattn::{ppm, report, selftest, Parallel};
use roiattn_core::config::{DetectionConfig, Variant, KEYS};
use roiattn_core::detector::PostProcess;
use roiattn_core::scene::{Split, CLASS_NAMES};
use roiattn_core::train::{evaluate, generate_scenes, scene_seeds, train};
use sha2::{Digest, Sha256};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_MISSING_CHECKPOINT: u8 = 3;

#[derive(Parser)]
#[command(name = "roiattn", version, about = "RoI external-attention detector on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a detector, writing metrics.csv, checkpoint.ratn and config.cfg
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        /// Also write the training scenes as PPM + annotation files here
        #[arg(long, value_name = "DIR")]
        dump_scenes: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on freshly generated scenes (CSV to stdout)
    Eval {
        /// Checkpoint written by `train`
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of scenes
        #[arg(long, default_value_t = 128)]
        scenes: usize,
        /// Base seed of the scene stream
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scene stream to draw from
        #[arg(long, value_enum, default_value_t = SplitArg::Eval)]
        split: SplitArg,
    },
    /// Run an ablation: the d × depth grid or the head-structure variants
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory
        #[arg(long, default_value = "runs/ablate")]
        out: PathBuf,
        /// Which ablation to run
        #[arg(long, value_enum, default_value_t = AblationKind::Depth)]
        kind: AblationKind,
        /// Seeds per variant (variants only; seeds are seed, seed+1, …)
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Comma-separated variants (variants only)
        #[arg(long, value_delimiter = ',', default_value = "baseline,+roi_attention,only_cls,only_reg,both,full")]
        variants: Vec<String>,
    },
    /// Time external attention against dense self-attention (CSV to stdout)
    Bench {
        /// Smallest RoI count
        #[arg(long, default_value_t = 64)]
        smin: usize,
        /// Largest RoI count (doubling from smin)
        #[arg(long, default_value_t = 2048)]
        smax: usize,
        /// Flattened RoI feature length
        #[arg(long = "L", default_value_t = 256)]
        l: usize,
        /// Memory slots
        #[arg(long, default_value_t = 10)]
        d: usize,
        /// Timed repetitions per point
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    /// Run every verification suite and print a pass/fail table
    Selftest {
        /// Seed for the randomized suites
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Reduced instance counts
        #[arg(long, default_value_t = false)]
        quick: bool,
    },
    /// Write generated scenes as PPM images plus annotation sidecars
    DumpScenes {
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes
        #[arg(long, default_value_t = 16)]
        count: usize,
        /// Base seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scene stream
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Eval,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Eval => Split::Eval,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationKind {
    Depth,
    Variants,
}

/// `--config FILE` plus one flag per configuration key. Flags given on the
/// command line override the file; the rest fall back to file, then default.
struct ConfigArgs {
    file: Option<PathBuf>,
    overrides: Vec<(&'static str, String)>,
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

impl Args for ConfigArgs {
    fn augment_args(cmd: Command) -> Command {
        let defaults = DetectionConfig::default();
        let mut cmd = cmd.arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("Flat `key = value` config file"),
        );
        for &key in KEYS {
            cmd = cmd.arg(
                Arg::new(key)
                    .long(flag_name(key))
                    .value_name("VALUE")
                    .default_value(defaults.get(key).expect("known key"))
                    .help(format!("Config key `{key}`"))
                    .help_heading("Config keys"),
            );
        }
        cmd
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

impl FromArgMatches for ConfigArgs {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let file = m.get_one::<PathBuf>("config").cloned();
        let overrides = KEYS
            .iter()
            .filter(|&&k| m.value_source(k) == Some(ValueSource::CommandLine))
            .map(|&k| (k, m.get_one::<String>(k).cloned().unwrap_or_default()))
            .collect();
        Ok(Self { file, overrides })
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        *self = Self::from_arg_matches(m)?;
        Ok(())
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Result<DetectionConfig, ConfigFileError> {
        let mut cfg = match &self.file {
            Some(path) => configfile::load(path)?,
            None => DetectionConfig::default(),
        };
        for (key, value) in &self.overrides {
            let line = format!("{key} = {value}");
            configfile::apply_text(&mut cfg, &line, &format!("--{}", flag_name(key)))?;
        }
        configfile::validate(&cfg, self.file.as_deref().map_or("config".into(), |p| p.display().to_string()).as_str())?;
        Ok(cfg)
    }
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let err = e.into();
        let code = if err.downcast_ref::<ConfigFileError>().is_some() {
            EXIT_USAGE
        } else {
            EXIT_FAILURE
        };
        Failure { code, err }
    }
}

fn usage(err: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        err: err.into(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn executor() -> Result<Parallel, Failure> {
    Parallel::from_env().map_err(usage)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Cmd::Train {
            config,
            out,
            dump_scenes,
        } => {
            let cfg = config.resolve()?;
            let exec = executor()?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            if let Some(dir) = dump_scenes {
                let scenes = generate_scenes(&exec, &scene_seeds(&cfg, Split::Train, cfg.train_scenes));
                ppm::dump_scenes(&dir, &scenes).with_context(|| format!("dumping scenes to {}", dir.display()))?;
            }
            eprintln!("training with {} worker thread(s)", exec.threads());
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{}", report::METRICS_HEADER)?;
            let outcome = train(&cfg, &exec, &mut |m| {
                let _ = writeln!(stdout, "{}", report::metrics_line(m));
                let _ = stdout.flush();
            })?;
            write_file(&out.join("metrics.csv"), report::metrics_csv(&outcome.history))?;
            write_file(&out.join("config.cfg"), cfg.to_text())?;
            let bytes = checkpoint::to_bytes(&cfg, &outcome.trainer.store);
            write_file(&out.join("checkpoint.ratn"), &bytes)?;
            let digest = Sha256::digest(&bytes);
            let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
            eprintln!("checkpoint sha256 {hex}");
            Ok(0)
        }
        Cmd::Eval {
            checkpoint: path,
            scenes,
            seed,
            split,
        } => {
            if !path.exists() {
                return Err(Failure {
                    code: EXIT_MISSING_CHECKPOINT,
                    err: anyhow::anyhow!("checkpoint {} does not exist", path.display()),
                });
            }
            let trainer = checkpoint::load(&path).map_err(|e| match e {
                CheckpointError::Config(_) | CheckpointError::Mismatch(_) => Failure::from(e),
                other => Failure::from(anyhow::Error::from(other).context(format!("reading {}", path.display()))),
            })?;
            let exec = executor()?;
            let mut cfg = trainer.cfg.clone();
            cfg.seed = seed;
            let scenes = generate_scenes(&exec, &scene_seeds(&cfg, split.into(), scenes));
            let pp = PostProcess::from(&trainer.cfg);
            let table = evaluate(&exec, &trainer.detector, &trainer.store, &pp, &scenes)?;
            let mut s = String::from("class,AP,AP50,AP75\n");
            let at = |row: &[Option<f64>], i: usize| row.get(i).copied().flatten();
            let i75 = table.thresholds.iter().position(|&t| (t - 0.75).abs() < 1e-9).unwrap_or(5);
            for (c, row) in table.per_class.iter().enumerate() {
                let vals: Vec<f64> = row.iter().flatten().copied().collect();
                if vals.len() != row.len() {
                    s.push_str(&format!("{},,,\n", CLASS_NAMES[c]));
                    continue;
                }
                let ap = vals.iter().sum::<f64>() / vals.len() as f64;
                s.push_str(&format!(
                    "{},{:.6},{:.6},{:.6}\n",
                    CLASS_NAMES[c],
                    ap,
                    at(row, 0).unwrap_or(0.0),
                    at(row, i75).unwrap_or(0.0)
                ));
            }
            s.push_str(&format!("mean,{:.6},{:.6},{:.6}\n", table.map(), table.ap50(), table.ap75()));
            print!("{s}");
            Ok(0)
        }
        Cmd::Ablate {
            config,
            out,
            kind,
            seeds,
            variants,
        } => {
            let cfg = config.resolve()?;
            let exec = executor()?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            match kind {
                AblationKind::Depth => {
                    let rows = run_depth_grid(&cfg, &exec, &mut |r| {
                        eprintln!("d={} depth={} AP={:.2}", r.d, r.depth, 100.0 * r.map)
                    })?;
                    let csv = report::depth_csv(&rows);
                    write_file(&out.join("ablation.csv"), &csv)?;
                    print!("{csv}");
                }
                AblationKind::Variants => {
                    let vs = variants
                        .iter()
                        .map(|v| v.trim().parse::<Variant>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(usage)?;
                    if vs.is_empty() || seeds == 0 {
                        return Err(usage(anyhow::anyhow!("need at least one variant and one seed")));
                    }
                    let seed_list: Vec<u64> = (0..seeds).map(|k| cfg.seed + k).collect();
                    let rows = run_variants(&cfg, &vs, &seed_list, &exec, &mut |r| {
                        eprintln!("{} seed={} AP={:.2}", r.variant.name(), r.seed, 100.0 * r.map)
                    })?;
                    let summary = summarize(&rows);
                    write_file(&out.join("variants.csv"), report::variants_csv(&rows))?;
                    let text = report::variant_summary_csv(&summary);
                    write_file(&out.join("variants_summary.csv"), &text)?;
                    print!("{text}");
                    for c in summary.inversions() {
                        eprintln!(
                            "warning: mean AP ordering inverted: {} {:.2} > {} {:.2}",
                            c.lower.name(),
                            100.0 * c.lower_ap,
                            c.upper.name(),
                            100.0 * c.upper_ap
                        );
                    }
                }
            }
            Ok(0)
        }
        Cmd::Bench {
            smin,
            smax,
            l,
            d,
            repeats,
        } => {
            let range = doubling_range(smin, smax);
            if range.is_empty() {
                return Err(usage(anyhow::anyhow!("empty range: --smin {smin} exceeds --smax {smax}")));
            }
            let rows = bench_attention(&range, l, d, repeats).map_err(usage)?;
            print!("{}", report::bench_csv(&rows));
            Ok(0)
        }
        Cmd::Selftest { seed, quick } => {
            println!("{}", selftest::table_header());
            let entries = selftest::run(seed, !quick, &mut |e| println!("{}", selftest::table_row(e)));
            let failed = entries.iter().filter(|e| !e.result.passed).count();
            println!("{} suites, {} passed, {} failed", entries.len(), entries.len() - failed, failed);
            Ok(if failed == 0 { 0 } else { EXIT_FAILURE })
        }
        Cmd::DumpScenes {
            out,
            count,
            seed,
            split,
        } => {
            let cfg = DetectionConfig {
                seed,
                ..DetectionConfig::default()
            };
            let exec = executor()?;
            let scenes = generate_scenes(&exec, &scene_seeds(&cfg, split.into(), count));
            ppm::dump_scenes(&out, &scenes).with_context(|| format!("dumping scenes to {}", out.display()))?;
            eprintln!("wrote {count} scenes to {}", out.display());
            Ok(0)
        }
    }
}
