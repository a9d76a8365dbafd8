//! `dfp`: tracking, benchmarking and loss fitting from the command line.
//!
//! Exit codes: 0 success, 1 invalid input or failed check, 2 I/O failure.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dfp_core::bench::{self, SuiteKind, Variant, BENCH_SCHEMA};
use dfp_core::config::{Config, UpdateMode};
use dfp_core::io::dfm1;
use dfp_core::lossmodel::gradcheck::gradcheck;
use dfp_core::metatrain::{
    fit_loss_params, load_episodes, synthetic_episodes, toy_scene, write_episode_dir, MetaObjective,
};
use dfp_core::numerics::Tensor3;
use dfp_core::tracking::{
    load_sequence, write_score_dump, FrameRecord, HandCrafted, Tracker, TRACK_SCHEMA,
};
use dfp_core::Error;

const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Parser, Debug)]
#[command(name = "dfp", about = "Discriminative target-model prediction tracker", disable_version_flag = true)]
struct Cli {
    /// Print the program and file-format schema versions.
    #[arg(short = 'V', long)]
    version: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Config, Failure> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        cfg.apply_overrides(&self.set)?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Track one sequence and print one JSON line per frame.
    Track {
        /// Directory with frames and gt.txt (the first annotated frame initializes).
        #[arg(long)]
        seq: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Model update strategy: ours, no-update or avg.
        #[arg(long)]
        mode: Option<String>,
        /// Write a normalized PGM score map per frame here.
        #[arg(long)]
        dump_scores: Option<PathBuf>,
    },
    /// Compare the analytic loss gradient with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run every tracker variant over a suite and print a JSON report.
    Bench {
        /// Directory of sequence directories.
        #[arg(long)]
        suite: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated variants (default: all).
        #[arg(long, value_delimiter = ',')]
        modes: Vec<String>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit loss parameters on ep_<k> episode directories.
    MetaTrain {
        #[arg(long)]
        episodes: PathBuf,
        /// Output loss-parameter file.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Track a sequence and write each frame's raw score map as DFM1.
    ExportScores {
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        mode: Option<String>,
    },
    /// Render a synthetic suite (distractor, drift, descent) or the toy
    /// episode set (toy) to disk.
    Synth {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
        /// Number of sequences or episodes.
        #[arg(long)]
        count: Option<usize>,
        /// Frames per sequence (suites only).
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn invalid(msg: impl Into<String>) -> Self {
        Failure { code: 1, msg: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_io() { 2 } else { 1 },
            msg: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::from(Error::io(path, e))
}

fn version_text() -> String {
    let mut s = String::new();
    let _ = writeln!(s, "dfp {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "feature files: {}", dfm1::SCHEMA);
    let _ = writeln!(s, "track output: {TRACK_SCHEMA}");
    let _ = writeln!(s, "bench output: {BENCH_SCHEMA}");
    s
}

fn parse_mode(cfg: &mut Config, mode: Option<&str>) -> Result<(), Failure> {
    if let Some(m) = mode {
        cfg.update_mode = UpdateMode::parse(m)
            .ok_or_else(|| Failure::invalid(format!("unknown mode '{m}' (ours, no-update, avg)")))?;
    }
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| io_failure(p, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| io_failure(Path::new("<stdout>"), e))
        }
    }
}

/// Tracks `seq`, calling `each` on every frame result in order.
fn run_tracker(
    seq_dir: &Path,
    cfg: &Config,
    mut each: impl FnMut(&dfp_core::tracking::FrameResult) -> Result<(), Failure>,
) -> Result<(), Failure> {
    let seq = load_sequence(seq_dir, cfg.feature_file_stride)?;
    let first = seq
        .frames
        .iter()
        .find(|f| seq.ground_truth(f.index).is_some())
        .ok_or_else(|| Failure::invalid(format!("{}: no annotated frame", seq_dir.display())))?;
    let start = first.index;
    let gt = seq.ground_truth(start).expect("checked above").target;
    let mut tracker = Tracker::initialize(first, gt, cfg, Box::new(HandCrafted::from_config(cfg)))?;
    each(tracker.first_result())?;
    for frame in seq.frames.iter().filter(|f| f.index > start) {
        let r = tracker.track_frame(frame)?;
        each(&r)?;
    }
    Ok(())
}

fn track(seq: &Path, cfg: &Config, dump: Option<&Path>) -> Result<(), Failure> {
    let mut stdout = std::io::stdout().lock();
    run_tracker(seq, cfg, |r| {
        if let Some(d) = dump {
            write_score_dump(d, r)?;
        }
        writeln!(stdout, "{}", FrameRecord::from(r).to_json_line())
            .map_err(|e| io_failure(Path::new("<stdout>"), e))
    })
}

fn export_scores(seq: &Path, out: &Path, cfg: &Config) -> Result<(), Failure> {
    std::fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    run_tracker(seq, cfg, |r| {
        let (h, w) = r.scores.dims();
        let t = Tensor3::from_vec(h, w, 1, r.scores.as_slice().to_vec())?;
        dfm1::write(&out.join(format!("scores_{:05}.dfm1", r.frame_index)), &t)?;
        Ok(())
    })
}

fn run_gradcheck(trials: usize, seed: u64) -> Result<(), Failure> {
    if trials == 0 {
        return Err(Failure::invalid("--trials must be at least 1"));
    }
    let r = gradcheck(trials, seed)?;
    println!(
        "trials {} max_rel_error {:.3e} worst_seed {} tolerance {:.0e}",
        r.trials, r.max_rel_error, r.worst_seed, GRADCHECK_TOLERANCE
    );
    if r.max_rel_error < GRADCHECK_TOLERANCE {
        Ok(())
    } else {
        Err(Failure::invalid("gradient check failed"))
    }
}

fn run_bench(suite: &Path, cfg: &Config, modes: &[String], out: Option<&Path>) -> Result<(), Failure> {
    let variants = if modes.is_empty() {
        Variant::ALL.to_vec()
    } else {
        modes
            .iter()
            .map(|m| {
                Variant::parse(m.trim()).ok_or_else(|| {
                    Failure::invalid(format!(
                        "unknown variant '{m}' (ours, gd, init, no_update, model_averaging)"
                    ))
                })
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    let seqs = bench::load_suite(suite, cfg.feature_file_stride)?;
    let report = bench::run_bench(&seqs, cfg, &variants)?;
    emit(out, &report.to_json())
}

fn meta_train(episodes: &Path, out: &Path, cfg: &Config) -> Result<(), Failure> {
    let extractor = HandCrafted::from_config(cfg);
    let eps = load_episodes(episodes, cfg, &extractor)?;
    let init = cfg.meta_init_params()?;
    let obj = MetaObjective::from_config(cfg);
    let report = fit_loss_params(&eps, &init, &obj, cfg.meta_budget, cfg.filter_size, cfg.seed)?;
    report.params.save(out)?;
    let reduction = 1.0 - report.final_objective / report.initial_objective;
    println!(
        "{{\"episodes\":{},\"evaluations\":{},\"initial_objective\":{},\"final_objective\":{},\"reduction\":{}}}",
        eps.len(),
        report.evaluations,
        report.initial_objective,
        report.final_objective,
        reduction
    );
    Ok(())
}

fn synth(kind: &str, out: &Path, count: Option<usize>, frames: Option<usize>, seed: u64) -> Result<(), Failure> {
    std::fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    if kind == "toy" {
        let cfg = Config::default();
        let scenes: Vec<_> = (0..count.unwrap_or(10)).map(|k| toy_scene(seed, k)).collect();
        for (k, frames) in synthetic_episodes(&cfg, &scenes)?.iter().enumerate() {
            write_episode_dir(out, k, frames)?;
        }
        return Ok(());
    }
    let kind = SuiteKind::parse(kind)
        .ok_or_else(|| Failure::invalid(format!("unknown kind '{kind}' (distractor, drift, descent, toy)")))?;
    let (n, len) = kind.default_size();
    for k in 0..count.unwrap_or(n) {
        let seq = bench::suite_sequence(kind, seed, k, frames.unwrap_or(len))?;
        bench::write_sequence(out, &seq)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.version {
        print!("{}", version_text());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Failure::invalid("no subcommand given; see --help"));
    };
    match command {
        Command::Track {
            seq,
            cfg,
            mode,
            dump_scores,
        } => {
            let mut c = cfg.load()?;
            parse_mode(&mut c, mode.as_deref())?;
            track(&seq, &c, dump_scores.as_deref())
        }
        Command::Gradcheck { trials, seed } => run_gradcheck(trials, seed),
        Command::Bench { suite, cfg, modes, out } => run_bench(&suite, &cfg.load()?, &modes, out.as_deref()),
        Command::MetaTrain { episodes, out, cfg } => meta_train(&episodes, &out, &cfg.load()?),
        Command::ExportScores { seq, out, cfg, mode } => {
            let mut c = cfg.load()?;
            parse_mode(&mut c, mode.as_deref())?;
            export_scores(&seq, &out, &c)
        }
        Command::Synth {
            kind,
            out,
            count,
            frames,
            seed,
        } => synth(&kind, &out, count, frames, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("dfp: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
