//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use reef_core::metrics::{msc_of_channel, MscReport};
use reef_core::substrate::DisplayNorm;
use reef_core::{load_config, load_snapshot, save_snapshot, ExperimentConfig, Hook, SimState};

use crate::output::{write_png, FrameWriter, MetricsWriter, SnapshotWriter};
use crate::server::{self, ServeOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or input files.
    Usage(String),
    /// Failure while doing the requested work.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "reef", version, about = "Neural cellular automata ecosystem simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run headless for a number of steps.
    Run(RunArgs),
    /// Run the simulation behind the WebSocket control service.
    Serve(ServeArgs),
    /// Multi-scale structural complexity of one snapshot channel.
    Msc(MscArgs),
    /// Render a snapshot to PNG.
    Render(RenderArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Steps to run; defaults to run.steps from the config.
    #[arg(long)]
    steps: Option<u64>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from this snapshot instead of seeding a fresh population.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Final snapshot; periodic ones are written beside it when
    /// run.snapshot_every is set.
    #[arg(long)]
    snapshot_out: Option<PathBuf>,
    /// Metrics CSV, sampled every run.metrics_every steps.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    /// Directory for PNG frames.
    #[arg(long)]
    frames_out: Option<PathBuf>,
    /// Steps between PNG frames.
    #[arg(long, default_value_t = 10)]
    frame_every: u64,
    /// Worker threads (0: all cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// Experiment configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    bind: Option<String>,
    /// Serve an existing snapshot instead of a fresh population.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Where `snapshot` requests are written.
    #[arg(long, default_value = ".")]
    snapshot_dir: PathBuf,
    /// Start paused.
    #[arg(long)]
    paused: bool,
}

#[derive(Args, Debug)]
struct MscArgs {
    #[arg(long)]
    snapshot: PathBuf,
    #[arg(long, default_value = "infrastructure")]
    channel: String,
    /// Sub-channel index for channels of arity > 1.
    #[arg(long, default_value_t = 0)]
    sub: usize,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    snapshot: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Energy mapped to full red.
    #[arg(long, default_value_t = 1.0)]
    norm_energy: f32,
    /// Infrastructure mapped to full green.
    #[arg(long, default_value_t = 1.0)]
    norm_infrastructure: f32,
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Serve(a) => serve(a),
        Command::Msc(a) => msc(a),
        Command::Render(a) => render(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn read_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    load_config(path).map_err(|e| match e {
        reef_core::Error::Io(io) => usage(format!("{}: {io}", path.display())),
        other => usage(format!("{}: {other}", path.display())),
    })
}

fn read_snapshot(path: &Path) -> Result<SimState, CliError> {
    load_snapshot(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn interrupt_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = flag.clone();
    // A second handler cannot be installed; runs then just stop on the default signal.
    let _ = ctrlc::set_handler(move || f.store(true, Ordering::Relaxed));
    flag
}

fn run(a: RunArgs) -> Result<(), CliError> {
    let mut config = read_config(&a.config)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(w) = a.workers {
        config.run.workers = w;
    }
    let steps = a.steps.unwrap_or(config.run.steps);
    let mut state = match &a.resume {
        Some(path) => {
            let mut s = read_snapshot(path)?;
            if a.seed.is_some() {
                s.seed = config.seed;
            }
            if config.run.workers > 0 {
                s.set_workers(config.run.workers).map_err(runtime)?;
            }
            s
        }
        None => config.build().map_err(usage)?,
    };
    let start = state.step_counter();

    if let Some(dir) = &a.frames_out {
        std::fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    }
    let mut metrics = match &a.metrics_out {
        Some(p) => Some(MetricsWriter::create(p, &config.run.msc_channel, config.run.metrics_every, start).map_err(usage)?),
        None => None,
    };
    let mut frames = a.frames_out.as_ref().map(|dir| FrameWriter {
        dir: dir.clone(),
        every: a.frame_every,
        norm: config.display,
    });
    let mut snapshots = match (&a.snapshot_out, config.run.snapshot_every) {
        (Some(base), every) if every > 0 => Some(SnapshotWriter { base: base.clone(), every }),
        _ => None,
    };

    if let Some(m) = metrics.as_mut() {
        m.sample(&state).map_err(runtime)?;
    }
    if let Some(f) = frames.as_mut() {
        f.on_step(&state).map_err(runtime)?;
    }
    let mut hooks: Vec<&mut dyn Hook> = Vec::new();
    if let Some(m) = metrics.as_mut() {
        hooks.push(m);
    }
    if let Some(f) = frames.as_mut() {
        hooks.push(f);
    }
    if let Some(s) = snapshots.as_mut() {
        hooks.push(s);
    }
    let stop = interrupt_flag();
    let began = std::time::Instant::now();
    let report = state.run(steps, &mut hooks, Some(&stop)).map_err(runtime)?;
    let elapsed = began.elapsed().as_secs_f64();
    drop(hooks);
    if let Some(m) = metrics {
        m.finish().map_err(runtime)?;
    }
    if let Some(path) = &a.snapshot_out {
        save_snapshot(&state, path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    }

    println!(
        "steps {} (to step {}) in {:.2}s, {:.1} steps/s",
        report.steps,
        state.step_counter(),
        elapsed,
        report.steps as f64 / elapsed.max(1e-9)
    );
    println!("live genomes {}", state.pool.live_count());
    println!("digest {:016x}", state.digest());
    if report.interrupted {
        println!("interrupted");
    }
    for (step, msg) in &report.hook_errors {
        eprintln!("output failed at step {step}: {msg}");
    }
    if report.hook_errors.is_empty() {
        Ok(())
    } else {
        Err(runtime(format!("{} output writes failed", report.hook_errors.len())))
    }
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let config = match &a.config {
        Some(p) => read_config(p)?,
        None => ExperimentConfig::default(),
    };
    let state = match &a.resume {
        Some(p) => read_snapshot(p)?,
        None => config.build().map_err(usage)?,
    };
    let opts = ServeOptions {
        state,
        bind: a.bind.unwrap_or(config.serve.bind.clone()),
        port: a.port.unwrap_or(config.serve.port),
        display: config.display,
        msc_channel: config.run.msc_channel.clone(),
        snapshot_dir: a.snapshot_dir,
        start_paused: a.paused,
    };
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(async move {
        let handle = server::start(opts).await.map_err(runtime)?;
        println!("listening on ws://{}/ws", handle.local_addr());
        let state = handle
            .run_until(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(runtime)?;
        println!("stopped at step {}", state.step_counter());
        Ok(())
    })
}

pub fn format_msc(report: &MscReport) -> String {
    let mut out = format!("channel {}", report.channel);
    if let Some((x0, y0, side)) = report.crop {
        out += &format!(" (center crop {side}x{side} at {x0},{y0})");
    }
    out += &format!("\ntotal {}\n", report.total);
    for (k, c) in report.per_scale.iter().enumerate() {
        out += &format!("scale {k} {c}\n");
    }
    out
}

fn msc(a: MscArgs) -> Result<(), CliError> {
    let state = read_snapshot(&a.snapshot)?;
    let report = msc_of_channel(&state.substrate, &a.channel, a.sub).map_err(usage)?;
    if a.json {
        println!("{}", serde_json::to_string(&report).map_err(runtime)?);
    } else {
        print!("{}", format_msc(&report));
    }
    Ok(())
}

fn render(a: RenderArgs) -> Result<(), CliError> {
    for (name, v) in [("--norm-energy", a.norm_energy), ("--norm-infrastructure", a.norm_infrastructure)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(usage(format!("{name} must be > 0")));
        }
    }
    let state = read_snapshot(&a.snapshot)?;
    let norm = DisplayNorm {
        energy: a.norm_energy,
        infrastructure: a.norm_infrastructure,
    };
    write_png(&a.out, &state.substrate.render_rgb(&norm)).map_err(runtime)
}
