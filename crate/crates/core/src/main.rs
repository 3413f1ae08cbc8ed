use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use movetosee::harness::aggregate::{format_table, write_aggregate};
use movetosee::harness::plot::{footprints, trajectory_svg, PlotSeries};
use movetosee::harness::config::SweepConfig;
use movetosee::harness::sweep::{read_summary, write_summary};
use movetosee::harness::{aggregate, dump_frames, expand_sweep, run_sweep, ExperimentConfig, Method, TrialContext};
use movetosee::servo::log::LoggedTrajectory;
use movetosee::Result;

#[derive(Parser)]
#[command(name = "movetosee", version, about = "Multi-camera next-best-view servoing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the single trial described by the [trial] section.
    RunTrial {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "proposed")]
        method: String,
        /// Directory for the trajectory CSV and plot.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Also write the reference view of every step as PPM.
        #[arg(long)]
        dump_frames: bool,
    },
    /// Run both methods over the [sweep] grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = default_jobs())]
        jobs: usize,
    },
    /// Aggregate a sweep's summary.csv by one parameter.
    Compare {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "all")]
        group_by: String,
    },
    /// Plot one or more trajectory CSVs into a single SVG.
    Plot {
        #[arg(long, required = true, num_args = 1..)]
        log: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Legend labels, one per log; file stems by default.
        #[arg(long, num_args = 1..)]
        label: Vec<String>,
        /// Draw the target and occluder of this config's [trial] scene.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn run_trial(config: &Path, method: &str, out: &Path, frames: bool) -> Result<()> {
    let method: Method = method.parse()?;
    let ctx = TrialContext::new(ExperimentConfig::load(config)?)?;
    let d = expand_sweep(&ExperimentConfig {
        sweep: SweepConfig {
            base_seed: ctx.config.sweep.base_seed,
            ..Default::default()
        },
        ..ctx.config.clone()
    })?
    .remove(0);
    let log = ctx.run(&d, method)?;
    std::fs::create_dir_all(out)?;
    let csv = out.join(format!("trial_{}_{}.csv", d.id(), method));
    log.save_csv(&csv)?;
    let scene = ctx.scene_for(&d.cell)?;
    let svg = trajectory_svg(&[PlotSeries::from_log(method.as_str(), &log)], &footprints(&scene));
    std::fs::write(out.join(format!("trial_{}_{}.svg", d.id(), method)), svg)?;
    if frames {
        let intr = ctx.config.camera.intrinsics()?;
        dump_frames(&log, &scene, &intr, d.cell.sigma, d.seed, &out.join(format!("frames_{}", method)))?;
    }
    println!(
        "{method}: {} after {} steps, A_start {:.4} A_end {:.4} dA {:+.2} pt, f_N {:.4}",
        log.termination,
        log.steps.len(),
        log.a_start,
        log.a_end,
        log.delta_a(),
        log.f_n
    );
    println!("wrote {}", csv.display());
    Ok(())
}

fn sweep(config: &Path, out: &Path, jobs: usize) -> Result<()> {
    let ctx = TrialContext::new(ExperimentConfig::load(config)?)?;
    let descriptors = expand_sweep(&ctx.config)?;
    std::fs::create_dir_all(out)?;
    log::info!("{} cells, {} jobs", descriptors.len(), jobs);
    let results = run_sweep(&ctx, &descriptors, jobs, Some(out))?;
    let summary = out.join("summary.csv");
    write_summary(&results, std::fs::File::create(&summary)?)?;
    let failed = results.iter().filter(|r| !r.completed()).count();
    println!("{} trials, {} failed; wrote {}", results.len(), failed, summary.display());
    print!("{}", format_table(&aggregate(&results, "all")?));
    Ok(())
}

fn compare(results: &Path, group_by: &str) -> Result<()> {
    let path = if results.is_dir() { results.join("summary.csv") } else { results.to_owned() };
    let rows = read_summary(std::fs::File::open(&path)?, &path)?;
    let agg = aggregate(&rows, group_by)?;
    print!("{}", format_table(&agg));
    if let Some(dir) = path.parent() {
        write_aggregate(&agg, std::fs::File::create(dir.join(format!("compare_{group_by}.csv")))?)?;
    }
    Ok(())
}

fn plot(logs: &[PathBuf], labels: &[String], out: &Path, config: Option<&Path>) -> Result<()> {
    let mut series = Vec::new();
    for (i, p) in logs.iter().enumerate() {
        let log = LoggedTrajectory::load(p)?;
        let label = labels
            .get(i)
            .cloned()
            .unwrap_or_else(|| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
        series.push(PlotSeries::from_logged(label, &log));
    }
    let prints = match config {
        Some(c) => {
            let cfg = ExperimentConfig::load(c)?;
            let t = &cfg.trial;
            let scene = movetosee::scene::build_scene(
                (t.target_offset[0], t.target_offset[1]),
                (t.occluder_offset[0], t.occluder_offset[1]),
                t.theta_deg,
                &cfg.scene,
            )?;
            footprints(&scene)
        }
        None => Vec::new(),
    };
    std::fs::write(out, trajectory_svg(&series, &prints))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::RunTrial { config, method, out, dump_frames } => run_trial(config, method, out, *dump_frames),
        Command::Sweep { config, out, jobs } => sweep(config, out, *jobs),
        Command::Compare { results, group_by } => compare(results, group_by),
        Command::Plot { log, out, label, config } => plot(log, label, out, config.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
