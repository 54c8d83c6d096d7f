use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::json;

use detmatch::analysis::{compare_quality_measures, evaluate_3d, quality_rows};
use detmatch::detection::Detection3D;
use detmatch::exec::Exec;
use detmatch::io::config::RunConfig;
use detmatch::io::interchange::{read_frames, write_frames, FrameBundle, FramesFile};
use detmatch::io::kitti::{labels_from_sim, write_kitti_calib, write_kitti_label, KittiCalib};
use detmatch::io::report::{from_csv, pair_detections, to_csv, PairRow};
use detmatch::pseudolabel::{confidence_filter, hungarian_match, prefiltered_match};
use detmatch::simulator::simulate_corpus;
use detmatch::toytrain::{run_experiment, SslMode};

/// 2D-3D matched pseudo-labels: matching, baselines, evaluation, simulation
/// and the toy semi-supervised experiment.
///
/// Log verbosity is read from DETMATCH_LOG (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "detmatch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Hungarian-match 2D and 3D detections and write the pairs below the
    /// cost threshold as CSV.
    Match {
        #[arg(long)]
        config: PathBuf,
        /// Frames file; defaults to paths.input of the config.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// Overrides thresholds.tau_hung.
        #[arg(long, allow_hyphen_values = true)]
        tau_hung: Option<f64>,
        /// Overrides the cost weights: L1, IoU and double-focal.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        weights: Option<Vec<f64>>,
        /// Drop detections at or below tau_2d / tau_3d before matching.
        #[arg(long)]
        prefilter: bool,
    },
    /// Keep detections above a confidence threshold; writes a frames file.
    Baseline {
        #[arg(long, value_enum)]
        mode: BaselineMode,
        /// Threshold on the 3D detections' maximum class probability.
        #[arg(long)]
        tau: f64,
        /// Threshold for the 2D detections; defaults to `tau`.
        #[arg(long)]
        tau_2d: Option<f64>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Per-class 3D precision, recall and AP against ground truth.
    Eval {
        /// A pairs CSV from `match` or a frames file.
        #[arg(long)]
        pred: PathBuf,
        /// Frames file with ground truth.
        #[arg(long)]
        gt: PathBuf,
        /// 3D IoU threshold; defaults to 0.7 for cars and 0.5 otherwise.
        #[arg(long)]
        iou_thresh: Option<f64>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
        /// JSON summary destination.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Compare confidence and matching cost as predictors of 3D box quality.
    AnalyzeQuality {
        #[arg(long)]
        input: PathBuf,
        /// Supplies the cost weights; defaults apply when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
        /// JSON destination for the correlations; printed when absent.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Generate a synthetic corpus.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        frames: usize,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: PathBuf,
        /// Also write KITTI label_2/ and calib/ files under this directory.
        #[arg(long)]
        kitti_dir: Option<PathBuf>,
    },
    /// Run the toy semi-supervised experiment and write its AP table.
    SslRun {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: SslMode,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineMode {
    Confidence,
}

fn parse_mode(s: &str) -> Result<SslMode, String> {
    s.parse()
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_frames(path: &Path) -> Result<FramesFile> {
    read_frames(path).with_context(|| format!("reading frames {}", path.display()))
}

fn cmd_match(
    config: &Path,
    input: Option<PathBuf>,
    output: &Path,
    tau_hung: Option<f64>,
    weights: Option<Vec<f64>>,
    prefilter: bool,
) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let input = input
        .or(cfg.paths.input.clone())
        .context("no input: pass --input or set paths.input")?;
    let mut cost = cfg.cost;
    if let Some(w) = weights {
        ensure!(w.len() == 3, "--weights takes three values");
        (cost.lambda_l1, cost.lambda_iou, cost.lambda_d_focal) = (w[0], w[1], w[2]);
    }
    cost.validate().map_err(anyhow::Error::msg)?;
    let tau = tau_hung.unwrap_or(cfg.thresholds.tau_hung);
    let file = load_frames(&input)?;
    let exec = Exec::default();
    let t = &cfg.thresholds;
    let per_frame = exec.map(&file.frames, |f| {
        let pairs = if prefilter || t.prefilter {
            prefiltered_match(&f.dets2d, &f.dets3d, &f.camera, &cost, tau, (t.tau_2d, t.tau_3d), Exec::Sequential)
        } else {
            hungarian_match(&f.dets2d, &f.dets3d, &f.camera, &cost, tau, Exec::Sequential)
        };
        pairs
            .iter()
            .map(|p| PairRow::new(f.frame_id, p, &file.classes))
            .collect::<Vec<_>>()
    });
    let rows: Vec<PairRow> = per_frame.into_iter().flatten().collect();
    info!("{} pairs from {} frames", rows.len(), file.frames.len());
    emit(Some(output), &to_csv(&rows)?)
}

fn cmd_baseline(tau: f64, tau_2d: Option<f64>, input: &Path, output: &Path) -> Result<()> {
    let mut file = load_frames(input)?;
    let tau_2d = tau_2d.unwrap_or(tau);
    for f in &mut file.frames {
        f.dets3d = confidence_filter(&f.dets3d, tau)?;
        f.dets2d = confidence_filter(&f.dets2d, tau_2d)?;
    }
    let kept: usize = file.frames.iter().map(|f| f.dets3d.len()).sum();
    info!("{kept} 3D detections kept at tau {tau}");
    write_frames(output, &file)?;
    Ok(())
}

fn cmd_eval(pred: &Path, gt: &Path, iou: Option<f64>, output: Option<&Path>, summary: Option<&Path>) -> Result<()> {
    if let Some(t) = iou {
        ensure!(t > 0.0 && t <= 1.0, "--iou-thresh must be in (0, 1], got {t}");
    }
    let truth = load_frames(gt)?;
    ensure!(
        truth.frames.iter().all(|f| f.gt.is_some()),
        "{} has frames without ground truth",
        gt.display()
    );
    let ids: Vec<u64> = truth.frames.iter().map(|f| f.frame_id).collect();
    let preds: Vec<Vec<Detection3D>> = if pred.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let text = fs::read_to_string(pred).with_context(|| format!("reading {}", pred.display()))?;
        let rows: Vec<PairRow> = from_csv(&text)?;
        pair_detections(&rows, &ids, &truth.classes)?
    } else {
        let p = load_frames(pred)?;
        ensure!(p.classes == truth.classes, "prediction and ground-truth class lists differ");
        let mut out = vec![Vec::new(); ids.len()];
        for f in p.frames {
            let Some(slot) = ids.iter().position(|&i| i == f.frame_id) else {
                bail!("frame {} not in the ground truth", f.frame_id);
            };
            out[slot] = f.dets3d;
        }
        out
    };
    let report = evaluate_3d(&preds, &truth.frames, &truth.classes, iou);
    emit(output, &to_csv(&report)?)?;
    if let Some(path) = summary {
        let map = report.iter().map(|r| r.ap).sum::<f64>() / report.len().max(1) as f64;
        let body = json!({ "frames": ids.len(), "mean_ap": map, "classes": report });
        fs::write(path, serde_json::to_string_pretty(&body)? + "\n")?;
    }
    Ok(())
}

fn cmd_analyze(input: &Path, config: Option<&Path>, output: Option<&Path>, summary: Option<&Path>) -> Result<()> {
    let cost = match config {
        Some(c) => RunConfig::load(c)?.cost,
        None => Default::default(),
    };
    let file = load_frames(input)?;
    ensure!(
        file.frames.iter().all(|f| f.gt.is_some()),
        "{} has frames without ground truth",
        input.display()
    );
    let rows = quality_rows(&file.frames, &cost, Exec::default());
    let cmp = compare_quality_measures(&rows).map_err(|e| anyhow::anyhow!("{e}"))?;
    emit(output, &to_csv(&rows)?)?;
    let body = serde_json::to_string_pretty(&json!({
        "records": cmp.records,
        "confidence": cmp.confidence,
        "neg_cost": cmp.neg_cost,
        "spearman_gap": cmp.neg_cost.spearman - cmp.confidence.spearman,
    }))? + "\n";
    match (summary, output) {
        (Some(p), _) => fs::write(p, body)?,
        (None, Some(_)) => print!("{body}"),
        (None, None) => eprint!("{body}"),
    }
    Ok(())
}

fn cmd_simulate(config: &Path, frames: usize, seed: Option<u64>, output: &Path, kitti_dir: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let seed = seed.unwrap_or(cfg.seed);
    let sim = simulate_corpus(&cfg.simulator, frames, seed, Exec::default());
    let names = cfg.simulator.scene.class_names();
    write_frames(output, &FramesFile::new(names.clone(), sim.iter().map(FrameBundle::from_sim).collect()))?;
    if let Some(dir) = kitti_dir {
        let (labels, calib) = (dir.join("label_2"), dir.join("calib"));
        fs::create_dir_all(&labels)?;
        fs::create_dir_all(&calib)?;
        for f in &sim {
            let name = format!("{:06}.txt", f.scene.frame_id);
            fs::write(labels.join(&name), write_kitti_label(&labels_from_sim(f, &names)))?;
            fs::write(calib.join(&name), write_kitti_calib(&KittiCalib::from_camera(&f.scene.camera)))?;
        }
    }
    info!("{frames} frames written to {}", output.display());
    Ok(())
}

fn cmd_ssl(config: &Path, mode: SslMode, output: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let exec = Exec::default();
    let train = simulate_corpus(&cfg.simulator, cfg.ssl.train_frames, cfg.seed, exec);
    let eval = simulate_corpus(&cfg.simulator, cfg.ssl.eval_frames, cfg.seed.wrapping_add(1), exec);
    let mut modes = vec![SslMode::LabeledOnly];
    if mode != SslMode::LabeledOnly {
        modes.push(mode);
    }
    let table = run_experiment(&train, &eval, &cfg.simulator, &cfg.ssl_config(), &modes, &cfg.ssl.seeds, exec);
    emit(output, &table.to_csv())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Match {
            config,
            input,
            output,
            tau_hung,
            weights,
            prefilter,
        } => cmd_match(&config, input, &output, tau_hung, weights, prefilter),
        Command::Baseline {
            mode: BaselineMode::Confidence,
            tau,
            tau_2d,
            input,
            output,
        } => cmd_baseline(tau, tau_2d, &input, &output),
        Command::Eval {
            pred,
            gt,
            iou_thresh,
            output,
            summary,
        } => cmd_eval(&pred, &gt, iou_thresh, output.as_deref(), summary.as_deref()),
        Command::AnalyzeQuality {
            input,
            config,
            output,
            summary,
        } => cmd_analyze(&input, config.as_deref(), output.as_deref(), summary.as_deref()),
        Command::Simulate {
            config,
            frames,
            seed,
            output,
            kitti_dir,
        } => cmd_simulate(&config, frames, seed, &output, kitti_dir.as_deref()),
        Command::SslRun { config, mode, output } => cmd_ssl(&config, mode, output.as_deref()),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DETMATCH_LOG", "warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

