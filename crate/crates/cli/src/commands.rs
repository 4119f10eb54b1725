use std::path::Path;

use hierclass_core::data::{
    generate_synthetic, DatasetManifest, ImageRef, ImageStore, LabelTaxonomy, RgbPixels, Split, SplitRatio,
    SyntheticConfig,
};
use hierclass_core::eval::{
    argmax, compare as compare_reports, evaluate as eval_level, evaluate_hierarchy, EvalLevel, EvalReport,
};
use hierclass_core::model::{load_checkpoint, save_checkpoint, CheckpointMetadata, Stage};
use hierclass_core::train::{run_hierarchical, train_flat, HierarchicalReport, StageResult, TrainConfig};
use hierclass_core::{BackboneSpec, Error, Model, Result, Tensor};
use serde::Serialize;
use serde_json::json;

use crate::args::{CompareArgs, EvaluateArgs, GenerateArgs, LevelArg, Mode, PredictArgs, SplitArg, TrainArgs};
use crate::run::{read, resolve_out_dir, Run};

fn to_text(bytes: &[u8], path: &Path) -> Result<String> {
    String::from_utf8(bytes.to_vec()).map_err(|e| Error::Validation(format!("{} is not UTF-8: {e}", path.display())))
}

fn pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    Ok((serde_json::to_string_pretty(value)? + "\n").into_bytes())
}

fn load_manifest(run: &mut Run, path: &Path) -> Result<(DatasetManifest, std::path::PathBuf)> {
    let bytes = read(path)?;
    run.input("manifest", path, &bytes);
    let manifest = DatasetManifest::from_json(&to_text(&bytes, path)?)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((manifest, base))
}

fn load_model(run: &mut Run, role: &str, path: &Path) -> Result<(Model, CheckpointMetadata)> {
    let bytes = read(path)?;
    run.input(role, path, &bytes);
    load_checkpoint(&bytes)
}

fn safe_component(name: &str) -> Result<&str> {
    if name.is_empty() || name == "." || name == ".." || name.contains(['/', '\\']) {
        return Err(Error::Parameter(format!("label name {name:?} cannot be used as a directory")));
    }
    Ok(name)
}

pub fn generate(args: GenerateArgs) -> Result<()> {
    let taxonomy = match &args.taxonomy {
        Some(path) => {
            let t: LabelTaxonomy = serde_json::from_slice(&read(path)?)?;
            t.validate()?;
            t
        }
        None => {
            let names: Vec<&str> = args.types.iter().map(String::as_str).collect();
            LabelTaxonomy::uniform(&names, args.items_per_type)?
        }
    };
    let config = SyntheticConfig {
        per_item: args.per_item,
        image_size: args.size,
        seed: args.seed,
        ratio: args.ratio.parse::<SplitRatio>()?,
        ..Default::default()
    };
    let mut manifest = generate_synthetic(&taxonomy, &config)?;
    let mut run = Run::start("generate", args.seed, json!({ "taxonomy": taxonomy, "synthetic": config }));
    if let Some(path) = &args.taxonomy {
        run.input("taxonomy", path, &read(path)?);
    }

    // Samples come ordered by item, then by index within the item.
    let mut next_index = vec![0usize; taxonomy.item_count()];
    for sample in &mut manifest.samples {
        let ImageRef::Inline { width, height, rgb } = &sample.image else {
            return Err(Error::State("generator produced a non-inline image".into()));
        };
        let png = RgbPixels::from_inline(*width, *height, rgb)?.encode_png()?;
        let item = sample.item;
        let rel = format!(
            "{}/{}/{}.png",
            safe_component(&taxonomy.type_names[taxonomy.type_of(item)])?,
            safe_component(&taxonomy.item_names[item])?,
            next_index[item]
        );
        next_index[item] += 1;
        run.output(rel.clone(), png);
        sample.image = ImageRef::Path { path: rel };
    }
    run.output("manifest.json", manifest.to_json()?.into_bytes());
    let out_dir = resolve_out_dir(args.out.out_dir, "generate");
    run.finish(&out_dir)?;
    println!(
        "wrote {} images ({} types, {} items) and {}",
        manifest.samples.len(),
        taxonomy.type_count(),
        taxonomy.item_count(),
        out_dir.join("manifest.json").display()
    );
    Ok(())
}

/// Defaults, then the config file, then flags, then `--set` pairs.
fn resolve_config(args: &TrainArgs, run: &mut Run) -> Result<TrainConfig> {
    let config_err = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
    let mut table = toml::Table::try_from(TrainConfig::default()).map_err(|e| config_err(&e))?;
    if let Some(path) = &args.config {
        let bytes = read(path)?;
        run.input("config", path, &bytes);
        let file: toml::Table = to_text(&bytes, path)?.parse().map_err(|e| config_err(&e))?;
        table.extend(file);
    }
    let int = |v: u64| {
        i64::try_from(v).map(toml::Value::from).map_err(|_| Error::Config(format!("{v} exceeds the config range")))
    };
    let flags: [(&str, Option<toml::Value>); 9] = [
        ("learning_rate", args.learning_rate.map(toml::Value::from)),
        ("epochs_per_stage", args.epochs.map(|v| toml::Value::from(v as i64))),
        ("max_iterations", args.max_iterations.map(|v| toml::Value::from(v as i64))),
        ("lr_decay_factor", args.lr_decay.map(toml::Value::from)),
        ("plateau_patience_epochs", args.plateau_patience.map(|v| toml::Value::from(v as i64))),
        ("min_learning_rate", args.min_lr.map(toml::Value::from)),
        ("early_stop_patience_epochs", args.early_stop_patience.map(|v| toml::Value::from(v as i64))),
        ("batch_size", args.batch_size.map(|v| toml::Value::from(v as i64))),
        ("seed", args.seed.map(int).transpose()?),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            table.insert(key.into(), v);
        }
    }
    for pair in &args.set {
        let parsed: toml::Table =
            pair.replacen('=', " = ", 1).parse().map_err(|e| Error::Config(format!("--set {pair:?}: {e}")))?;
        table.extend(parsed);
    }
    TrainConfig::from_kv_text(&toml::to_string(&table).map_err(|e| config_err(&e))?)
}

#[derive(Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
enum TrainReport {
    Flat {
        config: TrainConfig,
        taxonomy: LabelTaxonomy,
        stage: StageResult,
        final_checkpoint: String,
    },
    Hierarchical {
        #[serde(flatten)]
        report: HierarchicalReport,
        final_checkpoint: String,
        type_checkpoint: String,
    },
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut run = Run::start("train", 0, serde_json::Value::Null);
    let (manifest, base) = load_manifest(&mut run, &args.manifest)?;
    let config = resolve_config(&args, &mut run)?;
    let backbone = match &args.backbone {
        Some(path) => {
            let bytes = read(path)?;
            run.input("backbone", path, &bytes);
            serde_json::from_slice::<BackboneSpec>(&bytes)?
        }
        None => BackboneSpec::default(),
    };
    let initial = match &args.init_from {
        Some(path) => Some(load_model(&mut run, "init_checkpoint", path)?.0),
        None => None,
    };
    let mode = match args.mode {
        Mode::Flat => "flat",
        Mode::Hier => "hier",
    };
    run.configure(config.seed, json!({ "mode": mode, "train": config, "backbone": backbone }));
    let data: ImageStore = ImageStore::from_manifest(&manifest, &base)?;
    let taxonomy = manifest.taxonomy.clone();
    let metadata = |stage: Stage, iteration: usize, label_groups: Option<Vec<usize>>| CheckpointMetadata {
        stage,
        iteration: iteration as u32,
        taxonomy: taxonomy.clone(),
        label_groups,
        seed: config.seed,
        config_digest: config.digest(),
    };

    let report = match args.mode {
        Mode::Flat => {
            let outcome = train_flat(&data, &backbone, &config, initial.as_ref())?;
            let name = outcome.stage.checkpoint.clone();
            run.output(name.clone(), save_checkpoint(&outcome.model, &metadata(Stage::Item, 0, None))?);
            println!(
                "flat: {} epochs, best epoch {} (val loss {:.4}, val accuracy {:.4})",
                outcome.stage.epochs_run,
                outcome.stage.best_epoch,
                outcome.stage.best_val_loss,
                outcome.stage.val_accuracy[outcome.stage.best_epoch]
            );
            TrainReport::Flat {
                config: config.clone(),
                taxonomy: taxonomy.clone(),
                stage: outcome.stage,
                final_checkpoint: name,
            }
        }
        Mode::Hier => {
            let outcome = run_hierarchical(&data, &backbone, &config, initial.as_ref())?;
            for (it, models) in outcome.report.iterations.iter().zip(&outcome.models) {
                let groups = (it.stage1_groups != taxonomy.item_to_type).then(|| it.stage1_groups.clone());
                let s1 = save_checkpoint(&models.stage1, &metadata(Stage::Type, it.iteration, groups))?;
                run.output(it.stage1.checkpoint.clone(), s1);
                let s2 = save_checkpoint(&models.stage2, &metadata(Stage::Item, it.iteration, None))?;
                run.output(it.stage2.checkpoint.clone(), s2);
                println!(
                    "iteration {}: stage 1 val accuracy {:.4}, stage 2 val loss {:.4} accuracy {:.4}",
                    it.iteration,
                    it.stage1.val_accuracy[it.stage1.best_epoch],
                    it.stage2.best_val_loss,
                    it.stage2.val_accuracy[it.stage2.best_epoch]
                );
            }
            let iterations = &outcome.report.iterations;
            println!("stopped after {} iteration(s): {:?}", iterations.len(), outcome.report.stop_reason);
            TrainReport::Hierarchical {
                final_checkpoint: iterations.last().expect("one iteration").stage2.checkpoint.clone(),
                type_checkpoint: iterations[0].stage1.checkpoint.clone(),
                report: outcome.report,
            }
        }
    };
    run.output("report.json", pretty(&report)?);
    run.finish(&resolve_out_dir(args.out.out_dir, "train"))
}

fn split_of(arg: SplitArg) -> Split {
    match arg {
        SplitArg::Validation => Split::Validation,
        SplitArg::Test => Split::Test,
    }
}

fn check_taxonomy(meta: &CheckpointMetadata, manifest: &DatasetManifest, path: &Path) -> Result<()> {
    if meta.taxonomy != manifest.taxonomy {
        return Err(Error::Config(format!("{} was trained on a different taxonomy than the manifest", path.display())));
    }
    Ok(())
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let mut run = Run::start("evaluate", 0, serde_json::Value::Null);
    let (model, meta) = load_model(&mut run, "checkpoint", &args.checkpoint)?;
    let (manifest, base) = load_manifest(&mut run, &args.manifest)?;
    check_taxonomy(&meta, &manifest, &args.checkpoint)?;
    let level = match args.level {
        Some(LevelArg::Type) => EvalLevel::Type,
        Some(LevelArg::Item) => EvalLevel::Item,
        None if meta.stage == Stage::Type => EvalLevel::Type,
        None => EvalLevel::Item,
    };
    if level == EvalLevel::Type && meta.label_groups.is_some() {
        return Err(Error::Config(format!(
            "{} predicts merged item groups, not the taxonomy's types",
            args.checkpoint.display()
        )));
    }
    let type_model = match &args.type_checkpoint {
        Some(path) => {
            if level != EvalLevel::Item {
                return Err(Error::Config("--type-checkpoint needs an item-level evaluation".into()));
            }
            let (m, tm) = load_model(&mut run, "type_checkpoint", path)?;
            check_taxonomy(&tm, &manifest, path)?;
            if tm.label_groups.is_some() {
                return Err(Error::Config(format!("{} predicts merged groups, not types", path.display())));
            }
            Some(m)
        }
        None => None,
    };
    let split = split_of(args.split);
    run.configure(meta.seed, json!({ "split": split, "level": level }));
    let data: ImageStore = ImageStore::from_manifest(&manifest, &base)?;
    let report = match &type_model {
        Some(t) => evaluate_hierarchy(&model, t, &data, split)?,
        None => eval_level(&model, &data, split, level)?,
    };
    println!("{} accuracy on {}: {:.4} ({} samples)", level.name(), split.name(), report.accuracy, report.sample_count);
    run.output(format!("eval-{}-{}.json", split.name(), level.name()), pretty(&report)?);
    run.finish(&resolve_out_dir(args.out.out_dir, "evaluate"))
}

pub fn compare(args: CompareArgs) -> Result<()> {
    let load = |path: &Path| -> Result<EvalReport> { Ok(serde_json::from_slice(&read(path)?)?) };
    let table = compare_reports(&load(&args.flat)?, &load(&args.hier)?)?;
    print!("{}", table.render());
    Ok(())
}

#[derive(Serialize)]
struct Prediction {
    image: String,
    item: Option<String>,
    #[serde(rename = "type")]
    type_name: String,
    confidence: f64,
}

fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exp: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let (model, meta): (Model, _) = load_checkpoint(&read(&args.checkpoint)?)?;
    if meta.stage == Stage::Type && meta.label_groups.is_some() {
        return Err(Error::Config(format!(
            "{} predicts merged item groups, which have no names",
            args.checkpoint.display()
        )));
    }
    let tax = &meta.taxonomy;
    let channels = model.backbone_spec().in_channels();
    let mut lines = Vec::with_capacity(args.images.len());
    for path in &args.images {
        let pixels = RgbPixels::read_png(path)?;
        let shape = match args.size {
            Some(s) => [channels, s, s],
            None => [channels, pixels.height, pixels.width],
        };
        let image: Tensor = pixels.to_tensor(shape)?;
        let logits = model.logits(&Tensor::stack(&[&image])?)?;
        let probs = softmax(logits.data());
        let best = argmax(&probs);
        let (item, type_name) = match meta.stage {
            Stage::Item => (Some(tax.item_names[best].clone()), tax.type_names[tax.type_of(best)].clone()),
            Stage::Type => (None, tax.type_names[best].clone()),
        };
        let p = Prediction { image: path.display().to_string(), item, type_name, confidence: probs[best] };
        lines.push(serde_json::to_string(&p)?);
    }
    // Print only once every image has been classified.
    for line in lines {
        println!("{line}");
    }
    Ok(())
}
