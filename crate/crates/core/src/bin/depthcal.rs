use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use depthcal::calib::Frame;
use depthcal::io::{
    read_calibration, read_dataset, read_depth_pgm, read_scene, write_calibration, write_csv, write_dataset,
    write_ground_truth, write_ply, write_scene, DatasetManifest, GroundTruth,
};
use depthcal::maps::Corrector;
use depthcal::pipeline::{bench, calibrate_dataset, evaluate, evaluation_tables, worker_threads, CalibrateConfig};
use depthcal::synth::{render_all, FrameRole, SceneParams, SceneSpec};
use depthcal::{Error, Result};

/// RGB-D depth calibration: simulate datasets, calibrate, correct and
/// evaluate depth frames.
#[derive(Parser)]
#[command(name = "depthcal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset with known distortion and extrinsics.
    Simulate {
        /// Scene description; defaults apply to omitted keys.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Estimate the undistortion map, global map and extrinsics.
    Calibrate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Control pixel spacing, `WxH`.
        #[arg(long, default_value = "4x4", value_parser = parse_bin)]
        bin: (usize, usize),
        #[arg(long, default_value_t = 2)]
        degree: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Correct one depth image and write the cloud as ASCII PLY.
    Correct {
        #[arg(long)]
        calib: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a calibration on the test frames of a dataset.
    Evaluate {
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time full frame corrections.
    Bench {
        #[arg(long)]
        calib: PathBuf,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        /// Worker threads (default: all cores, capped by DEPTHCAL_THREADS).
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn parse_bin(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got `{s}`"))?;
    let parse = |t: &str| t.trim().parse::<usize>().ok().filter(|&n| n > 0);
    match (parse(a), parse(b)) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(format!("expected positive WxH, got `{s}`")),
    }
}

fn simulate(scene: Option<&Path>, out: &Path, train: Option<usize>, test: Option<usize>, seed: Option<u64>) -> Result<()> {
    let mut p = match scene {
        Some(path) => read_scene(path)?,
        None => SceneParams::default(),
    };
    p.n_train = train.unwrap_or(p.n_train);
    p.n_test = test.unwrap_or(p.n_test);
    p.seed = seed.unwrap_or(p.seed);
    if p.n_train < 10 {
        return Err(Error::InvalidInput(format!("need at least 10 training frames, got {}", p.n_train)));
    }
    let spec = SceneSpec::build(&p)?;
    let rendered = render_all(&spec)?;
    let frames: Vec<Frame> = rendered.iter().map(|f| f.frame.clone()).collect();
    let distances: Vec<Option<f64>> = rendered
        .iter()
        .map(|f| (f.role == FrameRole::Test).then_some(f.distance))
        .collect();
    let manifest = DatasetManifest {
        board: spec.board,
        intr_rgb: spec.intr_rgb,
        intr_depth: spec.intr_depth,
        extrinsic_guess: spec.extrinsic_guess,
        sigma_c: if p.sigma_c > 0.0 { p.sigma_c } else { 0.2 },
        frames: Vec::new(),
    };
    write_dataset(out, &manifest, &frames, &distances)?;
    write_ground_truth(
        out,
        &GroundTruth {
            extrinsic: spec.extrinsic,
            intr_depth: spec.intr_depth,
            bias: p.bias,
            noise: p.noise,
            walls: rendered.iter().map(|f| (f.frame.id, f.wall_plane)).collect(),
        },
    )?;
    write_scene(&out.join("scene.txt"), &p)?;
    info!("wrote {} training and {} test frames to {}", p.n_train, p.n_test, out.display());
    Ok(())
}

fn report_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or("calibration".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}_report.csv"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            scene,
            out,
            train,
            test,
            seed,
        } => simulate(scene.as_deref(), &out, train, test, seed),
        Command::Calibrate {
            dataset,
            out,
            bin,
            degree,
            seed,
        } => {
            let ds = read_dataset(&dataset)?;
            let mut cfg = CalibrateConfig::default();
            (cfg.undistort.bin_x, cfg.undistort.bin_y) = bin;
            cfg.undistort.degree = degree;
            cfg.undistort.seed = seed;
            cfg.global.degree = degree;
            let run = calibrate_dataset(&ds, &cfg)?;
            write_calibration(&out, &run.calibration)?;
            write_csv(&report_path(&out), &["stage", "metric", "value"], &run.report_rows())?;
            info!("calibration written to {}", out.display());
            Ok(())
        }
        Command::Correct { calib, input, out } => {
            let c = read_calibration(&calib)?;
            let img = read_depth_pgm(&input)?;
            let corrector = Corrector::new(c.undistortion, c.global, c.intr_depth, worker_threads(None)?)?;
            write_ply(&out, &corrector.correct_cloud(&img)?)
        }
        Command::Evaluate { calib, dataset, out } => {
            let c = read_calibration(&calib)?;
            let ds = read_dataset(&dataset)?;
            let cfg = CalibrateConfig::default();
            let evals = evaluate(&c, &ds, &cfg.global.noise, &cfg.undistort)?;
            fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            for (name, header, rows) in evaluation_tables(&evals) {
                write_csv(&out.join(name), &header, &rows)?;
            }
            info!("evaluated {} test frames into {}", evals.len(), out.display());
            Ok(())
        }
        Command::Bench { calib, frames, threads } => {
            let c = read_calibration(&calib)?;
            let r = bench(&c, frames, worker_threads(threads)?)?;
            println!("frame_size {}x{}", r.width, r.height);
            println!("threads {}", r.threads);
            println!("frames {}", r.frames);
            println!("mean_ms {:.4}", r.mean_ms);
            println!("p99_ms {:.4}", r.p99_ms);
            println!("max_ms {:.4}", r.max_ms);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // Usage errors exit with status 2 through clap.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
