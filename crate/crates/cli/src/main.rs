use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use calyx_core::assess::{
    run_assess, run_localize, run_metrics, run_register, run_simulate, AssessConfig, SimulateSpec,
};
use calyx_core::localization::FrameStatus;
use calyx_core::registration::IcpParams;

/// Scope-video localization and per-calyx exploration coverage assessment
/// for labeled cavity phantoms.
#[derive(Parser)]
#[command(name = "calyx", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom plus reference and query explorations.
    Simulate {
        /// Scenario TOML; defaults to the built-in scenario when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output directory for all artifacts.
        #[arg(long)]
        out: PathBuf,
    },
    /// ICP-register a reconstruction point cloud to a labeled mesh.
    Register {
        /// Source point cloud (PLY).
        #[arg(long)]
        source: PathBuf,
        /// Target labeled mesh (PLY); its vertices are the target cloud.
        #[arg(long)]
        target: PathBuf,
        /// Manual initial transform (JSON); identity when omitted.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Output transform JSON.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        max_iterations: u32,
        #[arg(long, default_value_t = 1e-4)]
        convergence_delta_mm: f64,
        #[arg(long, default_value_t = 10.0)]
        correspondence_cutoff_mm: f64,
    },
    /// Localize query frames against the reference model.
    Localize {
        #[arg(long)]
        config: PathBuf,
    },
    /// Full assessment: localize, ray-cast visibility, per-calyx
    /// classification.
    Assess {
        #[arg(long)]
        config: PathBuf,
    },
    /// Reconstruction-quality metrics, plus trajectory alignment against
    /// EM ground truth when configured.
    Metrics {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { spec, out } => {
            let spec = match spec {
                Some(path) => SimulateSpec::load(&path)
                    .with_context(|| format!("loading {}", path.display()))?,
                None => SimulateSpec::default(),
            };
            let summary = run_simulate(&spec, &out).context("simulate failed")?;
            println!(
                "phantom: {} vertices, {} faces, {} calyces",
                summary.vertices, summary.faces, summary.calyces
            );
            println!(
                "reference video: {} frames; query video: {} frames",
                summary.reference_frames, summary.query_frames
            );
            println!("artifacts written to {}", summary.output_dir.display());
            println!(
                "run `calyx assess --config {}` to assess the query video",
                summary.assess_config.display()
            );
        }
        Command::Register {
            source,
            target,
            init,
            out,
            max_iterations,
            convergence_delta_mm,
            correspondence_cutoff_mm,
        } => {
            let params = IcpParams {
                max_iterations,
                convergence_delta_mm,
                correspondence_cutoff_mm,
            };
            let result = run_register(&source, &target, init.as_deref(), &params, &out)
                .context("registration failed")?;
            println!(
                "registered in {} iterations, mean residual {:.4} mm",
                result.iterations_used, result.mean_residual_mm
            );
            println!("transform written to {}", out.display());
        }
        Command::Localize { config } => {
            let config = AssessConfig::load(&config).context("loading config")?;
            let frames = run_localize(&config).context("localization failed")?;
            print_status_counts(&frames);
            println!(
                "trajectory written to {}",
                config.paths.output_dir.join("trajectory.csv").display()
            );
        }
        Command::Assess { config } => {
            let config = AssessConfig::load(&config).context("loading config")?;
            let report = run_assess(&config).context("assessment failed")?;
            println!(
                "video {} against phantom {} (threshold {}):",
                report.video_id, report.phantom_id, report.visitation.threshold
            );
            for calyx in &report.visitation.calyces {
                println!(
                    "  calyx {:>2} {:<12} score {:.3}  {}",
                    calyx.calyx_id,
                    calyx.name.as_deref().unwrap_or(""),
                    calyx.score,
                    calyx.classification.as_str()
                );
            }
            let c = &report.visitation.frame_counts;
            println!(
                "frames: {} input, {} processed, {} accepted, {} rejected_spatial, \
                 {} rejected_temporal, {} unlocalized",
                c.input, c.processed, c.accepted, c.rejected_spatial, c.rejected_temporal,
                c.unlocalized
            );
            println!(
                "report written to {}",
                config.paths.output_dir.join("report.json").display()
            );
        }
        Command::Metrics { config } => {
            let config = AssessConfig::load(&config).context("loading config")?;
            let report = run_metrics(&config).context("metrics failed")?;
            println!(
                "chamfer: {:.3} +/- {:.3} mm; Hausdorff p{}: {:.3} mm",
                report.chamfer_mean_mm,
                report.chamfer_std_mm,
                report.hausdorff_percentile,
                report.hausdorff_mm
            );
            println!(
                "coverage within {} mm: {:.2} %",
                report.coverage_radius_mm, report.coverage_pct
            );
            match &report.reprojection {
                Some(r) => println!(
                    "reprojection: {:.3} px over {} observations ({} behind camera)",
                    r.mean_px, r.observations, r.excluded_behind_camera
                ),
                None => println!("reprojection: no 2D-3D links in the reference model"),
            }
            if let Some(tre) = &report.tre {
                println!(
                    "TRE: {:.3} +/- {:.3} mm on {} held-out frames ({} fiducials, scale {:.4})",
                    tre.mean_mm, tre.std_mm, tre.held_out_count, tre.fiducial_count, tre.scale
                );
            }
            println!(
                "metrics written to {}",
                config.paths.output_dir.join("metrics.json").display()
            );
        }
    }
    Ok(())
}

fn print_status_counts(frames: &[calyx_core::localization::LocalizedFrame]) {
    let count = |s: FrameStatus| frames.iter().filter(|f| f.status == s).count();
    println!(
        "{} frames: {} accepted, {} rejected_spatial, {} rejected_temporal, {} unlocalized",
        frames.len(),
        count(FrameStatus::Accepted),
        count(FrameStatus::RejectedSpatial),
        count(FrameStatus::RejectedTemporal),
        count(FrameStatus::Unlocalized),
    );
}
