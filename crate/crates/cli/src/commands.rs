use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use flowseg_core::metrics::ged_squared;
use flowseg_core::model::{
    evaluate_folds, load_checkpoint, mean_std_maps, predict_samples, prior_variance_score,
    save_checkpoint, train, Model,
};
use flowseg_core::synthdata::{
    generate_dataset, load_dataset, save_dataset, split_folds, Dataset, DatasetSpec,
};
use flowseg_core::{Error, Result};

use crate::config::RunConfig;

pub struct GenDataArgs {
    pub preset: String,
    pub seed: u64,
    pub out: PathBuf,
    pub num_examples: Option<usize>,
    pub side: Option<usize>,
    pub annotators: Option<usize>,
    pub boundary_jitter: Option<f64>,
    pub absence_prob: Option<f64>,
    pub ambiguous_fraction: Option<f64>,
    pub noise_level: Option<f64>,
    pub shape_variability: Option<f64>,
}

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let mut spec = match args.preset.as_str() {
        "lidc-like" => DatasetSpec::lidc_like(200, args.seed),
        "kvasir-like" => DatasetSpec::kvasir_like(200, args.seed),
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown preset `{other}` (expected lidc-like or kvasir-like)"
            )))
        }
    };
    if let Some(v) = args.num_examples {
        spec.num_examples = v;
    }
    if let Some(v) = args.side {
        spec.side = v;
    }
    if let Some(v) = args.annotators {
        spec.num_annotators = v;
    }
    if let Some(v) = args.boundary_jitter {
        spec.boundary_jitter = v;
    }
    if let Some(v) = args.absence_prob {
        spec.absence_prob = v;
    }
    if let Some(v) = args.ambiguous_fraction {
        spec.ambiguous_fraction = v;
    }
    if let Some(v) = args.noise_level {
        spec.noise_level = v;
    }
    if let Some(v) = args.shape_variability {
        spec.shape_variability = v;
    }
    let dataset = generate_dataset(&spec)?;
    save_dataset(&dataset, &args.out)?;
    println!(
        "wrote {} examples ({}x{}, {} annotators) to {}",
        dataset.len(),
        spec.side,
        spec.side,
        spec.num_annotators,
        args.out.display()
    );
    Ok(())
}

fn load_run(config_path: &Path) -> Result<(RunConfig, Dataset)> {
    let run = RunConfig::load(config_path)?;
    let dataset = load_dataset(&run.dataset_dir)?;
    Ok((run, dataset))
}

pub fn cmd_train(config_path: &Path) -> Result<()> {
    let (run, dataset) = load_run(config_path)?;
    let cfg = run.model_config(dataset.side())?;
    fs::create_dir_all(&run.out_dir)?;
    let outcome = train(&dataset, &cfg)?;
    for fold in &outcome.folds {
        let ckpt = run.out_dir.join(format!("fold_{}.ckpt", fold.fold));
        save_checkpoint(&fold.model, &ckpt)?;
        let mut csv = String::from("epoch,train_loss,val_loss,recon,kl,logdet\n");
        for row in &fold.history {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.epoch, row.train_loss, row.val_loss, row.recon, row.kl, row.log_det
            ));
        }
        fs::write(run.out_dir.join(format!("fold_{}_history.csv", fold.fold)), csv)?;
        println!(
            "fold {}: best val loss {:.4} at epoch {} ({} epochs run)",
            fold.fold,
            fold.best_val_loss,
            fold.best_epoch,
            fold.history.len()
        );
    }
    Ok(())
}

fn load_fold_models(run: &RunConfig) -> Result<Vec<Model>> {
    let mut models = Vec::new();
    for fold in 0..run.folds {
        let path = run.out_dir.join(format!("fold_{fold}.ckpt"));
        if path.exists() {
            models.push(load_checkpoint(&path)?);
        }
    }
    if models.is_empty() {
        return Err(Error::Checkpoint(format!(
            "no fold checkpoints found under {}",
            run.out_dir.display()
        )));
    }
    Ok(models)
}

pub fn cmd_eval(config_path: &Path) -> Result<()> {
    let (run, dataset) = load_run(config_path)?;
    run.model_config(dataset.side())?;
    let models = load_fold_models(&run)?;
    let split = split_folds(dataset.len(), run.folds, run.seed)?;
    let refs: Vec<&Model> = models.iter().collect();
    let report = evaluate_folds(&refs, &dataset, &split.test, run.empty_policy, run.seed)?;
    let json = serde_json::to_string_pretty(&report)?;
    fs::create_dir_all(&run.out_dir)?;
    fs::write(run.out_dir.join("metrics.json"), &json)?;
    println!("{json}");
    Ok(())
}

fn write_pgm(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(bytes);
    fs::write(path, out)?;
    Ok(())
}

pub fn cmd_sample(
    config_path: &Path,
    checkpoint: &Path,
    index: usize,
    n: usize,
    out: &Path,
) -> Result<()> {
    let (_, dataset) = load_run(config_path)?;
    let model = load_checkpoint(checkpoint)?;
    if index >= dataset.len() {
        return Err(Error::InvalidParameter(format!(
            "example index {index} out of range (dataset has {})",
            dataset.len()
        )));
    }
    let x = dataset.image_f64(index);
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed.wrapping_add(index as u64));
    let samples = predict_samples(&model, &x, n, &mut rng)?;
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed.wrapping_add(index as u64));
    let (mean, std) = mean_std_maps(&model, &x, n, &mut rng)?;

    fs::create_dir_all(out)?;
    let side = model.config.side;
    let mean_bytes: Vec<u8> = mean.iter().map(|&v| (255.0 * v).round() as u8).collect();
    // std is bounded by 0.5; scale twice so the full byte range is used
    let std_bytes: Vec<u8> = std
        .iter()
        .map(|&v| (255.0 * (2.0 * v).min(1.0)).round() as u8)
        .collect();
    write_pgm(&out.join("mean.pgm"), side, side, &mean_bytes)?;
    write_pgm(&out.join("std.pgm"), side, side, &std_bytes)?;
    let mut raw = Vec::with_capacity(n * side * side);
    for mask in &samples {
        raw.extend_from_slice(&mask.data);
    }
    fs::write(out.join("samples.u8"), raw)?;
    println!("wrote mean.pgm, std.pgm, samples.u8 to {}", out.display());
    Ok(())
}

pub fn cmd_ged_curve(
    config_path: &Path,
    checkpoint: &Path,
    sizes: &[usize],
    repeats: usize,
    out: &Path,
) -> Result<()> {
    let (run, dataset) = load_run(config_path)?;
    if sizes.iter().any(|&s| s < 2) {
        return Err(Error::InvalidParameter("every size must be at least 2".into()));
    }
    if repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be positive".into()));
    }
    let model = load_checkpoint(checkpoint)?;
    let split = split_folds(dataset.len(), run.folds, run.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut csv = String::from("size,mean,std\n");
    for &size in sizes {
        let mut values = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let mut total = 0.0;
            let mut count = 0usize;
            for &idx in &split.test {
                let x = dataset.image_f64(idx);
                let predictions = predict_samples(&model, &x, size, &mut rng)?;
                match ged_squared(&dataset.examples[idx].masks, &predictions, run.empty_policy) {
                    Ok(v) => {
                        total += v;
                        count += 1;
                    }
                    Err(Error::UndefinedMetric(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            if count == 0 {
                return Err(Error::UndefinedMetric(
                    "every test example undefined under exclude".into(),
                ));
            }
            values.push(total / count as f64);
        }
        let mean = values.iter().sum::<f64>() / repeats as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / repeats as f64;
        csv.push_str(&format!("{size},{mean},{}\n", var.sqrt()));
    }
    fs::write(out, &csv)?;
    println!("wrote {} rows to {}", sizes.len(), out.display());
    Ok(())
}

pub fn cmd_prior_variance(config_path: &Path, checkpoint: &Path, out: &Path) -> Result<()> {
    let (run, dataset) = load_run(config_path)?;
    let model = load_checkpoint(checkpoint)?;
    let split = split_folds(dataset.len(), run.folds, run.seed)?;
    let mut rows: Vec<(usize, f64)> = Vec::with_capacity(split.test.len());
    for &idx in &split.test {
        let score = prior_variance_score(&model, &dataset.image_f64(idx))?;
        rows.push((idx, score));
    }
    // most ambiguous first
    rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut csv = String::from("example_index,mu_lv\n");
    for (idx, score) in rows {
        csv.push_str(&format!("{idx},{score}\n"));
    }
    fs::write(out, &csv)?;
    println!("wrote prior-variance table to {}", out.display());
    Ok(())
}

/// Exit code taxonomy: 1 usage/config, 2 runtime/data, 3 divergence.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) => 1,
        Error::TrainingDiverged { .. } => 3,
        _ => 2,
    }
}
