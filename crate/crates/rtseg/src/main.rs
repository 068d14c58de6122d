//! Command-line front end: `gen-data`, `train`, `eval`, `predict`.
//!
//! Exit codes: 0 success, 1 usage/config, 2 data, 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rtseg::checkpoint;
use rtseg::data::{
    self, generate_scene, load_dataset, write_dataset, LabelGrid, SceneSpec, CLASS_NAMES,
};
use rtseg::decoder::predict;
use rtseg::error::{Error, Result};
use rtseg::eval::{ConfusionMatrix, MiouRule};
use rtseg::model::{describe, maybe_zeroed, SegModel};
use rtseg::report::{self, IoUReport, ReportRow};
use rtseg::run_config::RunConfig;
use rtseg::train::{fit, loss_log_csv, TrainState};

#[derive(Parser)]
#[command(
    name = "rtseg",
    about = "RGB-thermal semantic segmentation with text-prompted token fusion",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic RGB-thermal dataset in the standard layout
    GenData {
        /// Flat key-value config file
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed override (wins over the config file)
        #[arg(long)]
        seed: Option<u64>,
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes to generate
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Fraction of scenes that go into train.txt (rest into val.txt)
        #[arg(long, default_value_t = 0.8)]
        split_ratio: f64,
    },
    /// Train a model and write a checkpoint plus a step,loss CSV
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Prompt override (wins over the config file)
        #[arg(long)]
        prompt: Option<String>,
        /// Dataset directory (must contain train.txt)
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint output path
        #[arg(long)]
        out: Option<PathBuf>,
        /// Step-count override
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate a checkpoint over a dataset split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "val")]
        split: String,
        /// Report output directory
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        prompt: Option<String>,
        /// Replace the thermal input with zeros (ablation)
        #[arg(long)]
        zero_thermal: bool,
        /// Replace the RGB input with zeros (ablation)
        #[arg(long)]
        zero_rgb: bool,
        /// Class-averaging rule: all9 or fg8
        #[arg(long, default_value = "all9")]
        miou_rule: String,
        /// Debug: force predictions equal to labels
        #[arg(long)]
        oracle_pred: bool,
        /// Include raw confusion counts in report.json
        #[arg(long)]
        counts: bool,
    },
    /// Predict a label raster for one RGB/thermal pair
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        rgb: PathBuf,
        #[arg(long)]
        thermal: PathBuf,
        #[arg(long)]
        prompt: Option<String>,
        /// Output label raster path
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            config,
            seed,
            out,
            count,
            split_ratio,
        } => {
            let cfg = load_config(config.as_deref(), seed, None)?;
            cmd_gen_data(&cfg, &out, count, split_ratio)
        }
        Command::Train {
            config,
            seed,
            prompt,
            data,
            out,
            steps,
        } => {
            let mut cfg = load_config(config.as_deref(), seed, prompt.as_deref())?;
            if let Some(steps) = steps {
                cfg.train.steps = steps;
            }
            cmd_train(&cfg, data.as_deref(), out.as_deref())
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
            prompt,
            zero_thermal,
            zero_rgb,
            miou_rule,
            oracle_pred,
            counts,
        } => cmd_eval(EvalArgs {
            checkpoint,
            data,
            split,
            out,
            prompt,
            zero_thermal,
            zero_rgb,
            miou_rule: miou_rule.parse()?,
            oracle_pred,
            counts,
        }),
        Command::Predict {
            checkpoint,
            rgb,
            thermal,
            prompt,
            out,
        } => cmd_predict(&checkpoint, &rgb, &thermal, prompt.as_deref(), &out),
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>, prompt: Option<&str>) -> Result<RunConfig> {
    let mut cfg = match path {
        None => RunConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::config(format!("cannot read config {}: {e}", p.display())))?;
            RunConfig::from_kv_text(&text)?
        }
    };
    if let Some(seed) = seed {
        cfg.override_seed(seed);
    }
    if let Some(prompt) = prompt {
        cfg.prompt = prompt.to_string();
    }
    Ok(cfg)
}

fn cmd_gen_data(cfg: &RunConfig, out: &Path, count: usize, split_ratio: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&split_ratio) {
        return Err(Error::config(format!(
            "split_ratio {split_ratio} must be in [0, 1]"
        )));
    }
    cfg.scene.validate()?;
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let spec = SceneSpec {
            seed: cfg.scene.seed.wrapping_add(i as u64),
            ..cfg.scene.clone()
        };
        samples.push(generate_scene(&spec)?);
    }
    let n_train = (((count as f64) * split_ratio).round() as usize).min(count);
    write_dataset(&samples[..n_train], out, "train")?;
    write_dataset(&samples[n_train..], out, "val")?;
    println!(
        "wrote {count} scenes to {} ({n_train} train, {} val, {}x{}, {:?})",
        out.display(),
        count - n_train,
        cfg.scene.height,
        cfg.scene.width,
        cfg.scene.illumination
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, data: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let data_dir = data
        .map(Path::to_path_buf)
        .or_else(|| cfg.data_dir.clone())
        .ok_or_else(|| Error::config("train: data_dir not set (flag --data or config key)"))?;
    let out_path = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("model.ckpt"));

    let dataset = load_dataset(&data_dir, "train")?;
    let model = SegModel::init(cfg)?;
    println!("training: {}", describe(&model));
    let prompt_ids = model.tokenize(&cfg.prompt);
    let mut state = TrainState::new(model);
    let log = fit(&mut state, &dataset, &prompt_ids, Some(&out_path))?;
    checkpoint::save(&out_path, &state)?;
    let csv_path = loss_csv_path(&out_path);
    std::fs::write(&csv_path, loss_log_csv(&log))?;
    let last = log.last().map(|&(_, l)| l).unwrap_or(f64::NAN);
    println!(
        "trained {} steps on {} samples; final loss {last:.6}",
        state.step,
        dataset.len()
    );
    println!("checkpoint: {}", out_path.display());
    println!("loss log:   {}", csv_path.display());
    Ok(())
}

fn loss_csv_path(ckpt: &Path) -> PathBuf {
    let stem = ckpt
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "model".to_string());
    ckpt.with_file_name(format!("{stem}_loss.csv"))
}

struct EvalArgs {
    checkpoint: PathBuf,
    data: Option<PathBuf>,
    split: String,
    out: Option<PathBuf>,
    prompt: Option<String>,
    zero_thermal: bool,
    zero_rgb: bool,
    miou_rule: MiouRule,
    oracle_pred: bool,
    counts: bool,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let state = checkpoint::load(&args.checkpoint)?;
    let model = state.model;
    let cfg = model.config().clone();
    let data_dir = args
        .data
        .clone()
        .or_else(|| cfg.data_dir.clone())
        .ok_or_else(|| Error::config("eval: data_dir not set (flag --data or config key)"))?;
    let prompt = args.prompt.as_deref().unwrap_or(&cfg.prompt);
    let prompt_ids = model.tokenize(prompt);
    let dataset = load_dataset(&data_dir, &args.split)?;

    let mut merged = ConfusionMatrix::new();
    for sample in &dataset {
        let preds: Vec<u8> = if args.oracle_pred {
            sample
                .labels
                .ids()
                .iter()
                .map(|&id| if id as usize >= rtseg::NUM_CLASSES { 0 } else { id })
                .collect()
        } else {
            let rgb = maybe_zeroed(&sample.rgb, args.zero_rgb);
            let thermal = maybe_zeroed(&sample.thermal, args.zero_thermal);
            model.predict_labels(&rgb, &thermal, &prompt_ids)?
        };
        let mut cm = ConfusionMatrix::new();
        cm.accumulate(sample.labels.ids(), &preds)?;
        merged = merged.merge(&cm);
    }

    let iou_report = IoUReport::from_matrix(&merged, args.miou_rule);
    let method = args
        .checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "model".to_string());
    let rows = vec![ReportRow::from_report(&method, &iou_report)];
    let table = report::format_table(&rows);
    print!("{table}");
    match iou_report.miou {
        Some(m) => println!("mIoU ({:?}) = {:.4}", args.miou_rule, m),
        None => println!("mIoU undefined: no class appears in this split"),
    }

    let out_dir = args.out.clone().unwrap_or_else(|| PathBuf::from("eval_report"));
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("report.txt"), &table)?;
    std::fs::write(out_dir.join("report.csv"), report::to_csv(&rows))?;
    let json = report::report_json(
        &method,
        &iou_report,
        if args.counts { Some(&merged) } else { None },
    );
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&json).expect("serializable report") + "\n",
    )?;
    println!("reports: {}", out_dir.display());
    Ok(())
}

fn cmd_predict(
    ckpt: &Path,
    rgb_path: &Path,
    thermal_path: &Path,
    prompt: Option<&str>,
    out: &Path,
) -> Result<()> {
    let state = checkpoint::load(ckpt)?;
    let model = state.model;
    let rgb = data::read_rgb_raster(rgb_path)?;
    let thermal = data::read_thermal_raster(thermal_path)?;
    if (rgb.height(), rgb.width()) != (thermal.height(), thermal.width()) {
        return Err(Error::data(format!(
            "rgb {}x{} and thermal {}x{} rasters disagree",
            rgb.height(),
            rgb.width(),
            thermal.height(),
            thermal.width()
        )));
    }
    let expected = model.encoder.resolution();
    if (rgb.height(), rgb.width()) != expected {
        return Err(Error::data(format!(
            "inputs are {}x{} but the checkpoint was trained at {}x{}",
            rgb.height(),
            rgb.width(),
            expected.0,
            expected.1
        )));
    }
    let prompt_text = prompt.unwrap_or(&model.config().prompt).to_string();
    let prompt_ids = model.tokenize(&prompt_text);
    let logits = model.infer_logits(&rgb, &thermal, &prompt_ids)?;
    let labels = predict(&logits);
    let grid = LabelGrid::new(rgb.height(), rgb.width(), labels)?;
    data::write_label_raster(out, &grid)?;

    let mut histogram = [0usize; rtseg::NUM_CLASSES];
    for &id in grid.ids() {
        histogram[id as usize] += 1;
    }
    println!("wrote {}", out.display());
    for (name, n) in CLASS_NAMES.iter().zip(histogram) {
        if n > 0 {
            println!("{name:>12}: {n} px");
        }
    }
    Ok(())
}
