use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use qlocomp::channel::make_twirl;
use qlocomp::gen::{generate, parse_blocks, Family, Instance};
use qlocomp::io::{parse_json, read_channel, read_state, to_pretty_json, ChannelFile, StateFile, UnitaryListFile};
use qlocomp::pipeline::{analyze, analyze_channel, compressed_state, run_bounds, PipelineConfig, Report};
use qlocomp::rng::{stream_rng, streams};
use qlocomp::selftest::{self, SelftestOptions};

/// Exact local compression of bipartite quantum states.
#[derive(Parser)]
#[command(name = "qlocomp", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Relative threshold for numeric rank and support decisions
    #[arg(long, global = true, default_value_t = 1e-9)]
    rank_tol: f64,
    /// Gap separating eigenvalue clusters
    #[arg(long, global = true, default_value_t = 1e-8)]
    group_tol: f64,
    /// Eigenvalues within this of 1 count as fixed points
    #[arg(long, global = true, default_value_t = 1e-9)]
    fix_tol: f64,
    /// Optimizer restarts
    #[arg(long, global = true, default_value_t = 16)]
    restarts: usize,
    /// Iteration cap per restart
    #[arg(long, global = true, default_value_t = 2000)]
    max_iters: usize,
    /// Seed for every random choice (optimizer, oracle, generators)
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for optimizer restarts (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress and summaries on stderr
    #[arg(long, short, global = true)]
    quiet: bool,
}

impl Global {
    fn config(&self) -> PipelineConfig {
        let mut c = PipelineConfig::default();
        c.tolerances.rank_tol = self.rank_tol;
        c.tolerances.group_tol = self.group_tol;
        c.tolerances.fix_tol = self.fix_tol;
        c.optimizer.restarts = self.restarts;
        c.optimizer.max_iters = self.max_iters;
        c.optimizer.seed = self.seed;
        c
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline on a state file and print the report
    Analyze {
        input: PathBuf,
        /// Also write the report here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// rank(C) and the resulting dimension bounds, without optimization
    Bounds { input: PathBuf },
    /// Build the compression and recovery channels and the compressed state
    Compress {
        input: PathBuf,
        /// Directory for the output files
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Write files even when no nontrivial compression exists
        #[arg(long)]
        force: bool,
    },
    /// Channel compression
    #[command(subcommand)]
    Channel(ChannelCommand),
    /// Generate example states and channels
    Gen {
        #[command(subcommand)]
        family: GenFamily,
    },
    /// Run the invariant suite on generated instances
    Selftest {
        /// d_B <= 4 subset
        #[arg(long)]
        quick: bool,
    },
}

#[derive(Subcommand)]
enum ChannelCommand {
    /// Analyze a channel file through its normalized Choi state
    Analyze { input: PathBuf },
    /// Twirl over a finite group given as a list of unitaries, then analyze
    Twirl { input: PathBuf },
}

#[derive(Args)]
struct GenOut {
    /// Output file (stdout if omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ground-truth sidecar; defaults to truth.json next to --out for planted states
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Subcommand)]
enum GenFamily {
    /// Diagonal state with duplicate conditional columns
    Classical {
        #[arg(long, default_value_t = 2)]
        da: usize,
        #[arg(long, default_value_t = 4)]
        db: usize,
        /// Number of distinct conditionals p(.|b)
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[command(flatten)]
        out: GenOut,
    },
    /// Pure state with a given Schmidt rank
    Pure {
        #[arg(long)]
        da: Option<usize>,
        #[arg(long)]
        db: Option<usize>,
        #[arg(long, default_value_t = 2)]
        schmidt: usize,
        #[command(flatten)]
        out: GenOut,
    },
    /// Planted block structure, e.g. --blocks 1x1,2x1,1x2 (dL x dR)
    Planted {
        #[arg(long, default_value_t = 2)]
        da: usize,
        #[arg(long, default_value = "1x1,2x1,1x2")]
        blocks: String,
        #[command(flatten)]
        out: GenOut,
    },
    /// Product state
    Product {
        #[arg(long, default_value_t = 2)]
        da: usize,
        #[arg(long, default_value_t = 2)]
        db: usize,
        #[command(flatten)]
        out: GenOut,
    },
    /// Random state of a given rank
    Random {
        #[arg(long, default_value_t = 2)]
        da: usize,
        #[arg(long, default_value_t = 2)]
        db: usize,
        #[arg(long)]
        rank: Option<usize>,
        #[command(flatten)]
        out: GenOut,
    },
    /// Twirl over the regular representation of S3
    #[command(name = "twirl_s3", alias = "twirl-s3")]
    TwirlS3 {
        #[command(flatten)]
        out: GenOut,
    },
}

const EXIT_INPUT: u8 = 1;
const EXIT_MISMATCH: u8 = 2;
const EXIT_NO_COMPRESSION: u8 = 3;

struct Failure {
    code: u8,
    message: String,
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure { code: EXIT_INPUT, message: e.to_string() }
    }
}

type Outcome = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("warning: could not size the thread pool: {e}");
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> Outcome {
    let g = &cli.global;
    let config = g.config();
    match &cli.command {
        Command::Analyze { input, out } => {
            let (dims, rho) = read_state(&read(input)?)?;
            let a = analyze(dims, &rho, &config)?;
            let text = to_pretty_json(&a.report);
            if let Some(path) = out {
                write(path, &text)?;
            }
            print!("{text}");
            summarize(g, &a.report);
            Ok(mismatch_code(&a.report))
        }
        Command::Bounds { input } => {
            let (dims, rho) = read_state(&read(input)?)?;
            let report = run_bounds(dims, &rho, &config)?;
            print!("{}", to_pretty_json(&report));
            if !g.quiet {
                eprintln!("rank(C) = {}, {} <= d_min <= {}", report.rank_c, report.bounds.lower, report.bounds.upper);
            }
            Ok(0)
        }
        Command::Compress { input, out_dir, force } => compress(g, &config, input, out_dir, *force),
        Command::Channel(ChannelCommand::Analyze { input }) => {
            let ch = read_channel(&read(input)?)?;
            channel_report(g, &config, &ch)
        }
        Command::Channel(ChannelCommand::Twirl { input }) => {
            let list: UnitaryListFile = parse_json(&read(input)?)?;
            let ch = make_twirl(&list.matrices()?, 1e-9)?;
            channel_report(g, &config, &ch)
        }
        Command::Gen { family } => gen(g, family),
        Command::Selftest { quick } => {
            let opts = SelftestOptions { quick: *quick, seed: g.seed, config };
            let start = Instant::now();
            let checks = selftest::run(&opts, |label| {
                if !g.quiet {
                    eprintln!("  running {label}");
                }
            });
            let failed = checks.iter().filter(|c| !c.passed).count();
            for c in &checks {
                println!("{} {} ({} cases)", if c.passed { "PASS" } else { "FAIL" }, c.name, c.cases);
                for f in &c.failures {
                    println!("     {f}");
                }
            }
            println!(
                "{} of {} invariants passed in {:.1} s",
                checks.len() - failed,
                checks.len(),
                start.elapsed().as_secs_f64()
            );
            Ok(if failed == 0 { 0 } else { 1 })
        }
    }
}

fn compress(g: &Global, config: &PipelineConfig, input: &Path, out_dir: &Path, force: bool) -> Outcome {
    let (dims, rho) = read_state(&read(input)?)?;
    let a = analyze(dims, &rho, config)?;
    let d_min = a.blocks.d_min;
    if d_min >= dims.db && !force {
        return Err(Failure {
            code: EXIT_NO_COMPRESSION,
            message: format!("no nontrivial compression exists (d_min = d_B = {})", dims.db),
        });
    }
    fs::create_dir_all(out_dir).map_err(|e| format!("{}: {e}", out_dir.display()))?;
    let pair = &a.pair_original;
    let (cdims, crho) = compressed_state(&a);
    write(
        &out_dir.join("compression.json"),
        &to_pretty_json(&ChannelFile::from_kraus(dims.db, pair.d_btilde, &pair.e_kraus)),
    )?;
    write(
        &out_dir.join("recovery.json"),
        &to_pretty_json(&ChannelFile::from_kraus(pair.d_btilde, dims.db, &pair.r_kraus)),
    )?;
    write(&out_dir.join("compressed_state.json"), &to_pretty_json(&StateFile::from_matrix(cdims, &crho)))?;
    let text = to_pretty_json(&a.report);
    write(&out_dir.join("report.json"), &text)?;
    print!("{text}");
    if !g.quiet {
        eprintln!("compressed B from {} to {} dimensions; files in {}", dims.db, pair.d_btilde, out_dir.display());
    }
    summarize(g, &a.report);
    Ok(mismatch_code(&a.report))
}

fn channel_report(g: &Global, config: &PipelineConfig, ch: &qlocomp::channel::ChannelSpec) -> Outcome {
    let a = analyze_channel(ch, config)?;
    print!("{}", to_pretty_json(&a.report));
    summarize(g, &a.report);
    Ok(mismatch_code(&a.report))
}

fn gen(g: &Global, family: &GenFamily) -> Outcome {
    let (fam, out) = match family {
        GenFamily::Classical { da, db, classes, out } => {
            (Family::Classical { da: *da, db: *db, classes: *classes }, out)
        }
        GenFamily::Pure { da, db, schmidt, out } => {
            let da = da.unwrap_or(*schmidt);
            let db = db.unwrap_or(*schmidt);
            (Family::Pure { da, db, schmidt: *schmidt }, out)
        }
        GenFamily::Planted { da, blocks, out } => (Family::Planted { da: *da, blocks: parse_blocks(blocks)? }, out),
        GenFamily::Product { da, db, out } => (Family::Product { da: *da, db: *db }, out),
        GenFamily::Random { da, db, rank, out } => {
            (Family::Random { da: *da, db: *db, rank: rank.unwrap_or(da * db) }, out)
        }
        GenFamily::TwirlS3 { out } => (Family::TwirlS3, out),
    };
    let mut rng = stream_rng(g.seed, streams::GEN_BASE);
    let inst = generate(&fam, &mut rng, g.rank_tol)?;
    let (text, truth) = match &inst {
        Instance::State { dims, rho, truth, .. } => (to_pretty_json(&StateFile::from_matrix(*dims, rho)), truth),
        Instance::Channel { channel, truth } => {
            (to_pretty_json(&ChannelFile::from_kraus(channel.da_in, channel.db_out, &channel.kraus)), truth)
        }
    };
    match &out.out {
        Some(path) => write(path, &text)?,
        None => print!("{text}"),
    }
    let sidecar = out.truth.clone().or_else(|| match (&fam, &out.out) {
        (Family::Planted { .. }, Some(path)) => Some(path.with_file_name("truth.json")),
        _ => None,
    });
    if let Some(path) = sidecar {
        write(&path, &to_pretty_json(truth))?;
    }
    if !g.quiet {
        eprintln!("generated {} instance, d_min = {}", truth.family, truth.d_min);
    }
    Ok(0)
}

fn mismatch_code(report: &Report) -> u8 {
    if report.has_mismatch() {
        EXIT_MISMATCH
    } else {
        0
    }
}

fn summarize(g: &Global, r: &Report) {
    if g.quiet {
        return;
    }
    if let (Some(t1), Some(or)) = (r.d_min_theorem1, r.d_min_oracle) {
        eprintln!(
            "d_min = {t1} (oracle {or}), rank(C) = {}, bounds [{}, {}], d_B = {}",
            r.rank_c, r.bounds.lower, r.bounds.upper, r.dims.original.db
        );
    }
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()).into())
}
