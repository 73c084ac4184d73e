use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use dctrack::config::{TrackerConfig, TrackerMode};
use dctrack::metrics::{compare_cohorts, compute_metrics, format_value, MetricsReport, Trajectory3D, IDLE_THRESHOLD_MM_S};
use dctrack::report::{emit_report, track_summary, ReportInput};
use dctrack::selftest::run_selftest;
use dctrack::session::{parse_occlusions, synthetic_trial, SessionParams, SkillProfile, SyntheticSession, EXPERT_TRIALS, NOVICE_TRIALS};
use dctrack::tracker::run_tracking_session;

/// Dual-camera tip tracking on synthetic sessions, plus motion metrics.
#[derive(Parser)]
#[command(name = "dctrack", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Oracle,
    Seeded,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Kv,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dual-camera session file.
    Simulate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Session length in seconds.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        /// Occluded frames, e.g. `120-149,200-210` or `none`.
        #[arg(long, default_value = "none")]
        occlusion: String,
        /// Per-pixel noise amplitude.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 30.0)]
        frame_rate: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track a session and write tables and plots into a directory.
    Track {
        #[arg(long)]
        session: PathBuf,
        /// Overrides the config file's mode.
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Flat `key = value` tracker config; desk preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the seven motion metrics of one trajectory file.
    Metrics {
        #[arg(long)]
        trajectory: PathBuf,
        /// Idle speed threshold, mm/s.
        #[arg(long, default_value_t = IDLE_THRESHOLD_MM_S)]
        threshold: f64,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Mann-Whitney comparison of two directories of trajectory files.
    Compare {
        #[arg(long)]
        expert_dir: PathBuf,
        #[arg(long)]
        novice_dir: PathBuf,
        #[arg(long, default_value_t = IDLE_THRESHOLD_MM_S)]
        threshold: f64,
    },
    /// Write synthetic expert and novice trial trajectories.
    Cohort {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = EXPERT_TRIALS)]
        experts: usize,
        #[arg(long, default_value_t = NOVICE_TRIALS)]
        novices: usize,
        /// Receives `expert/` and `novice/` subdirectories.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the kernel-versus-reference equivalence checks.
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_trials(dir: &Path, threshold: f64) -> Result<Vec<(String, MetricsReport)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let traj = Trajectory3D::parse_csv(&read(p)?).with_context(|| format!("parsing {}", p.display()))?;
            let m = compute_metrics(&traj, threshold).with_context(|| format!("metrics for {}", p.display()))?;
            let name = p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
            Ok((name, m))
        })
        .collect()
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate {
            seed,
            duration,
            occlusion,
            noise,
            frame_rate,
            out,
        } => {
            let params = SessionParams {
                seed,
                duration_s: duration,
                frame_rate_hz: frame_rate,
                occlusions: parse_occlusions(&occlusion)?,
                noise,
                ..SessionParams::default()
            };
            let session = SyntheticSession::generate(&params)?;
            fs::write(&out, session.to_text()).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} frames to {}", session.frames(), out.display());
        }
        Command::Track {
            session,
            mode,
            config,
            out,
        } => {
            let session = SyntheticSession::parse(&read(&session)?).context("parsing session")?;
            let mut cfg = match config {
                Some(p) => TrackerConfig::parse(&read(&p)?).context("parsing config")?,
                None => TrackerConfig::default(),
            };
            if let Some(m) = mode {
                cfg.mode = match m {
                    Mode::Oracle => TrackerMode::Oracle,
                    Mode::Seeded => TrackerMode::Seeded,
                };
            }
            cfg.validate()?;
            let record = run_tracking_session(&session, &cfg)?;
            emit_report(ReportInput::Track(&record), &out)?;
            print!("{}", track_summary(&record));
        }
        Command::Metrics {
            trajectory,
            threshold,
            format,
        } => {
            let traj = Trajectory3D::parse_csv(&read(&trajectory)?).context("parsing trajectory")?;
            let m = compute_metrics(&traj, threshold)?;
            match format {
                Format::Table => print!("{}", m.to_table()),
                Format::Kv => print!("{}", m.to_kv()),
            }
        }
        Command::Compare {
            expert_dir,
            novice_dir,
            threshold,
        } => {
            let expert = load_trials(&expert_dir, threshold)?;
            let novice = load_trials(&novice_dir, threshold)?;
            let strip = |v: &[(String, MetricsReport)]| v.iter().map(|(_, m)| *m).collect::<Vec<_>>();
            let rows = compare_cohorts(&strip(&expert), &strip(&novice))?;
            println!("expert trials = {}, novice trials = {}", expert.len(), novice.len());
            println!(
                "{:<6} {:>14} {:>14} {:>10} {:>12} {:>5} {:>9}",
                "metric", "expert_mean", "novice_mean", "U", "p", "sig", "excluded"
            );
            for r in rows {
                let (u, p) = r
                    .test
                    .as_ref()
                    .map_or((String::from("-"), String::from("-")), |t| (format!("{}", t.u_a), format!("{:.3e}", t.p_value)));
                println!(
                    "{:<6} {:>14} {:>14} {:>10} {:>12} {:>5} {:>9}",
                    r.metric.label(),
                    format_value(r.expert_mean().map(|v| (v * 1e4).round() / 1e4)),
                    format_value(r.novice_mean().map(|v| (v * 1e4).round() / 1e4)),
                    u,
                    p,
                    if r.significant { "yes" } else { "no" },
                    format!("{}/{}", r.expert_excluded, r.novice_excluded)
                );
            }
        }
        Command::Cohort {
            seed,
            experts,
            novices,
            out,
        } => {
            if experts < 2 || novices < 2 {
                bail!("each cohort needs at least 2 trials");
            }
            for (name, profile, n, offset) in [
                ("expert", SkillProfile::EXPERT, experts, 0u64),
                ("novice", SkillProfile::NOVICE, novices, 1u64 << 32),
            ] {
                let dir = out.join(name);
                fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                for k in 0..n {
                    let traj = synthetic_trial(&profile, seed.wrapping_mul(1_000_003).wrapping_add(offset + k as u64));
                    fs::write(dir.join(format!("trial_{k:03}.csv")), traj.to_csv())?;
                }
            }
            println!("wrote {experts} expert and {novices} novice trials under {}", out.display());
        }
        Command::Selftest { seed } => {
            let checks = run_selftest(seed);
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.passed()).count();
            println!("{} checks, {failed} failed", checks.len());
            if failed > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
