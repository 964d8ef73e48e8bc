use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use forgeloc::data::{
    dataset_split, generate_sample, load_image, load_mask, read_dataset, read_manifest, save_mask, save_prob_map,
    write_dataset, Sample,
};
use forgeloc::gradcheck::{run_suite, Component, TOLERANCE};
use forgeloc::metrics::{confusion, evaluate, quantize_prob};
use forgeloc::network::{predict_mask, Model};
use forgeloc::persist::{Checkpoint, RunConfig};
use forgeloc::seed::derive_seed;
use forgeloc::training::{class_weights_for, StepRecord, Trainer};
use forgeloc::Tensor;
use image::{Rgb, RgbImage};
use rayon::prelude::*;

use crate::failure::Failure;
use crate::{EvalArgs, InferArgs, SplitPart};

pub const CHECKPOINT_FILE: &str = "checkpoint.fgln";
pub const LOSS_LOG_FILE: &str = "loss.jsonl";
pub const CONFIG_FILE: &str = "config.toml";

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => RunConfig::load(p).map_err(Failure::usage),
        None => Ok(RunConfig::default()),
    }
}

fn sibling_config(checkpoint: &Path, explicit: Option<&Path>) -> Result<RunConfig, Failure> {
    let fallback: PathBuf;
    let path = match explicit {
        Some(p) => p,
        None => {
            fallback = checkpoint.parent().unwrap_or(Path::new(".")).join(CONFIG_FILE);
            &fallback
        }
    };
    load_config(Some(path))
}

fn io_failure(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::data(format!("{}: {e}", path.display()))
}

pub fn gen_data(config: Option<&Path>, out: &Path, count: usize, seed: u64, force: bool) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    cfg.generator.validate().map_err(Failure::usage)?;
    if out.join("manifest.json").exists() && !force {
        return Err(Failure::usage(format!("{} already holds a dataset (use --force to overwrite)", out.display())));
    }
    let samples = (0..count as u64)
        .into_par_iter()
        .map(|i| generate_sample(derive_seed(seed, &[i]), &cfg.generator))
        .collect::<Result<Vec<_>, _>>()
        .map_err(Failure::data)?;
    write_dataset(out, &samples).map_err(Failure::data)?;
    println!("wrote {count} samples to {}", out.display());
    Ok(())
}

fn select(samples: &[Sample], idx: &[usize]) -> Vec<Sample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

/// Keeps the log lines up to and including `step`.
fn truncate_log(path: &Path, step: u64) -> Result<(), Failure> {
    if !path.exists() {
        return Ok(());
    }
    let file = File::open(path).map_err(io_failure(path))?;
    let mut kept = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_failure(path))?;
        let record: StepRecord =
            serde_json::from_str(&line).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        if record.step > step {
            break;
        }
        kept.push_str(&line);
        kept.push('\n');
    }
    fs::write(path, kept).map_err(io_failure(path))
}

pub fn train(config: Option<&Path>, data: &Path, out: &Path, resume: bool, force: bool) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    cfg.network.validate().map_err(Failure::usage)?;
    let samples = read_dataset(data).map_err(Failure::data)?;
    let split = dataset_split(samples.len(), cfg.split.fractions, cfg.split.seed).map_err(Failure::data)?;
    let (train_set, val_set) = (select(&samples, &split.train), select(&samples, &split.val));

    fs::create_dir_all(out).map_err(io_failure(out))?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let log_path = out.join(LOSS_LOG_FILE);
    if !resume && ckpt_path.exists() && !force {
        return Err(Failure::usage(format!(
            "{} exists; pass --resume to continue or --force to start over",
            ckpt_path.display()
        )));
    }
    let cfg_path = out.join(CONFIG_FILE);
    fs::write(&cfg_path, cfg.to_toml()).map_err(io_failure(&cfg_path))?;

    let weights = class_weights_for(&cfg.loss, &train_set)?;
    let model = Model::<f32>::build(&cfg.network, cfg.train.seed).map_err(Failure::usage)?;
    let mut trainer = Trainer::new(
        model,
        cfg.loss.clone(),
        cfg.optimizer.clone(),
        cfg.train.clone(),
        cfg.augment.clone(),
        weights,
    )?;
    if resume {
        let ckpt = Checkpoint::load(&ckpt_path)?;
        trainer.model = ckpt.restore_model(&cfg.network, force)?;
        let (adam, early_stop) = ckpt.restore_optimizer(&trainer.model, cfg.optimizer.clone())?;
        trainer.optimizer = adam;
        trainer.early_stop = early_stop;
        truncate_log(&log_path, trainer.optimizer.step)?;
        println!("resuming at step {}", trainer.optimizer.step);
    } else {
        fs::write(&log_path, "").map_err(io_failure(&log_path))?;
    }

    let file = fs::OpenOptions::new().append(true).open(&log_path).map_err(io_failure(&log_path))?;
    let mut log = BufWriter::new(file);
    let every = cfg.train.checkpoint_every;
    let outcome = trainer.fit(&train_set, &val_set, |t, r| {
        let line = serde_json::to_string(r).expect("step record serializes");
        let hook = |e: std::io::Error| forgeloc::training::TrainError::Hook(format!("{}: {e}", log_path.display()));
        writeln!(log, "{line}").map_err(hook)?;
        if every > 0 && r.step % every == 0 {
            log.flush().map_err(hook)?;
            Checkpoint::capture(&t.model, Some((&t.optimizer, t.early_stop)))
                .save(&ckpt_path)
                .map_err(|e| forgeloc::training::TrainError::Hook(e.to_string()))?;
        }
        Ok(())
    });
    log.flush().map_err(io_failure(&log_path))?;
    let outcome = outcome?;
    Checkpoint::capture(&trainer.model, Some((&trainer.optimizer, trainer.early_stop))).save(&ckpt_path)?;
    let last = outcome.records.last().map_or(f64::NAN, |r| r.loss);
    println!(
        "trained {} steps (total {}), last loss {last:.6}{}",
        outcome.records.len(),
        trainer.optimizer.step,
        if outcome.stopped_early { ", stopped early" } else { "" }
    );
    Ok(())
}

fn load_model(checkpoint: &Path, cfg: &RunConfig, force: bool) -> Result<Model<f32>, Failure> {
    Ok(Checkpoint::load(checkpoint)?.restore_model(&cfg.network, force)?)
}

pub fn eval(a: &EvalArgs, force: bool) -> Result<(), Failure> {
    let cfg = sibling_config(&a.checkpoint, a.config.as_deref())?;
    let model = load_model(&a.checkpoint, &cfg, force)?;
    let threshold = a.threshold.unwrap_or(cfg.eval.threshold);
    let entries = read_manifest(&a.data).map_err(Failure::data)?;
    let samples = read_dataset(&a.data).map_err(Failure::data)?;
    let idx: Vec<usize> = match a.split {
        SplitPart::All => (0..samples.len()).collect(),
        part => {
            let s = dataset_split(samples.len(), cfg.split.fractions, cfg.split.seed).map_err(Failure::data)?;
            match part {
                SplitPart::Train => s.train,
                SplitPart::Val => s.val,
                _ => s.test,
            }
        }
    };
    let chosen = select(&samples, &idx);
    let ids: Vec<String> = idx.iter().map(|&i| entries[i].id.clone()).collect();
    let report = evaluate(&model, &chosen, &ids, threshold, cfg.eval.aggregation).map_err(Failure::data)?;
    if let Some(path) = &a.out {
        fs::write(path, report.to_text()).map_err(io_failure(path))?;
    }
    let s = &report.summary;
    let auc = s.auc.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!(
        "images {} accuracy {:.4} f1 {:.4} ciou {:.4} forged_iou {:.4} auc {auc}",
        report.images, s.accuracy, s.f1, s.ciou, s.forged_iou
    );
    Ok(())
}

pub fn infer(a: &InferArgs, force: bool) -> Result<(), Failure> {
    let cfg = sibling_config(&a.checkpoint, a.config.as_deref())?;
    let model = load_model(&a.checkpoint, &cfg, force)?;
    let threshold = a.threshold.unwrap_or(cfg.eval.threshold);
    let image = load_image::<f32>(&a.image).map_err(Failure::data)?;
    let shape = image.shape().to_vec();
    let batch = image.reshape(&[1, shape[0], shape[1], 3]).map_err(Failure::data)?;
    let prob = model.predict(&batch).map_err(Failure::data)?;
    let grid: Vec<f32> = prob.data().iter().map(|&p| quantize_prob(f64::from(p)) as f32).collect();
    let prob = Tensor::new(grid, &[shape[0], shape[1], 1]).map_err(Failure::data)?;
    let mask = predict_mask(&prob, threshold).map_err(Failure::usage)?;

    fs::create_dir_all(&a.out).map_err(io_failure(&a.out))?;
    let stem = a.image.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
    let (prob_path, mask_path) = (a.out.join(format!("{stem}_prob.png")), a.out.join(format!("{stem}_mask.png")));
    save_prob_map(&prob_path, &prob).map_err(Failure::data)?;
    save_mask(&mask_path, &mask).map_err(Failure::data)?;
    println!("wrote {} and {}", prob_path.display(), mask_path.display());
    Ok(())
}

const RED: Rgb<u8> = Rgb([255, 0, 0]);
const YELLOW: Rgb<u8> = Rgb([255, 255, 0]);
const GREEN: Rgb<u8> = Rgb([0, 255, 0]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);

pub fn overlay(gt: &Path, pred: &Path, out: &Path) -> Result<(), Failure> {
    let g = load_mask::<f32>(gt).map_err(Failure::data)?;
    let p = load_mask::<f32>(pred).map_err(Failure::data)?;
    if g.shape() != p.shape() {
        return Err(Failure::data(format!(
            "mask sizes differ: {:?} for {} and {:?} for {}",
            &g.shape()[..2],
            gt.display(),
            &p.shape()[..2],
            pred.display()
        )));
    }
    let (h, w) = (g.shape()[0], g.shape()[1]);
    let mut img = RgbImage::new(w as u32, h as u32);
    for (i, px) in img.pixels_mut().enumerate() {
        *px = match (g.data()[i] > 0.5, p.data()[i] > 0.5) {
            (true, true) => GREEN,
            (true, false) => RED,
            (false, true) => YELLOW,
            (false, false) => BLACK,
        };
    }
    img.save(out).map_err(|e| Failure::data(format!("{}: {e}", out.display())))?;
    let c = confusion(&p, &g).map_err(Failure::data)?;
    println!("green {} red {} yellow {}", c.tp, c.fn_, c.fp);
    Ok(())
}

pub fn gradcheck(config: Option<&Path>, fault: Option<&str>) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let fault = fault
        .map(|name| Component::parse(name).ok_or_else(|| Failure::usage(format!("unknown component {name:?}"))))
        .transpose()?;
    let results = run_suite(cfg.train.seed, fault).map_err(Failure::numerical)?;
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!("{:<16} {:.3e} {verdict}", r.component.name(), r.max_rel_error);
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.component.name()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::numerical(format!(
            "relative error at or above {TOLERANCE:e} in: {}",
            failed.join(", ")
        )))
    }
}

pub fn print_config(config: Option<&Path>) -> Result<(), Failure> {
    print!("{}", load_config(config)?.to_toml());
    Ok(())
}
