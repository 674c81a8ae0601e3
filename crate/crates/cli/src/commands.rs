//! Subcommand implementations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use sagechain_core::data::schema::ColumnKind;
use sagechain_core::data::table::{encode_categoricals, extract_target, load_dataset, RawTable};
use sagechain_core::error::{Error, Result};
use sagechain_core::model::train::run_experiment_on_table;
use sagechain_core::report::ablate::{ablation_csv, ablation_timing_csv, layer_ablation};
use sagechain_core::report::render::{load_report, render_report};
use sagechain_core::DatasetSchema;

use crate::cache::{read_cache, write_cache, CACHE_SUFFIX};
use crate::settings::Settings;

fn load_table(settings: &Settings, schema: &DatasetSchema) -> Result<RawTable> {
    let path = settings.resolve_data_path()?;
    if path.to_string_lossy().ends_with(CACHE_SUFFIX) {
        let table = read_cache(&path)?;
        if table.dataset_id != schema.dataset_id {
            return Err(Error::Config(format!(
                "cache holds {} data but --dataset is {}",
                table.dataset_id, schema.dataset_id
            )));
        }
        Ok(table)
    } else {
        load_dataset(&path, schema)
    }
}

fn fnv(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h = (h ^ *b as u64).wrapping_mul(0x100000001b3);
    }
    h
}

/// Load, encode, summarize, and write the binary cache.
pub fn cmd_ingest(settings: &Settings) -> Result<()> {
    let dataset = settings.dataset()?;
    let schema = DatasetSchema::builtin(dataset);
    let path = settings.resolve_data_path()?;
    let table = load_dataset(&path, &schema)?;
    let encoded = encode_categoricals(&table, &schema)?;

    let mut s = String::new();
    let _ = writeln!(s, "dataset: {dataset}");
    let _ = writeln!(s, "rows: {} (rejected {})", encoded.row_count(), encoded.rejected_rows);
    let _ = writeln!(s, "feature columns: {}", schema.features.len());
    for col in &schema.features {
        if let ColumnKind::Categorical(levels) = &col.kind {
            let map: Vec<String> = levels
                .iter()
                .enumerate()
                .map(|(i, l)| format!("{l}={i}"))
                .collect();
            let _ = writeln!(s, "  encoding {}: {}", col.name, map.join(", "));
        }
    }
    for task in &schema.tasks {
        let labels = extract_target(&encoded, &schema, &task.task_id)?;
        let mut counts = vec![0usize; task.n_classes()];
        for &l in &labels {
            counts[l] += 1;
        }
        let detail: Vec<String> = task
            .classes
            .iter()
            .zip(&counts)
            .map(|(c, n)| format!("{c}: {n}"))
            .collect();
        let _ = writeln!(
            s,
            "task {} ({} classes): {}",
            task.task_id,
            task.n_classes(),
            detail.join(", ")
        );
    }
    print!("{s}");

    let out_dir = settings.out_dir();
    std::fs::create_dir_all(&out_dir)?;
    let cache_path = out_dir.join(format!("{}{CACHE_SUFFIX}", dataset.as_str().replace('-', "_")));
    write_cache(&encoded, &cache_path)?;
    let bytes = std::fs::read(&cache_path)?;
    println!("cache: {} ({} bytes, fnv {:016x})", cache_path.display(), bytes.len(), fnv(&bytes));
    Ok(())
}

fn append_run_log(out_dir: &Path, what: &str, start: SystemTime) -> Result<()> {
    let now = SystemTime::now();
    let stamp = |t: SystemTime| {
        t.duration_since(SystemTime::UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0)
    };
    let line = format!(
        "{what} start_unix={:.3} end_unix={:.3} wall_seconds={:.3}\n",
        stamp(start),
        stamp(now),
        now.duration_since(start).map(|d| d.as_secs_f64()).unwrap_or(0.0)
    );
    let mut existing = std::fs::read_to_string(out_dir.join("run.log")).unwrap_or_default();
    existing.push_str(&line);
    std::fs::write(out_dir.join("run.log"), existing)?;
    Ok(())
}

/// Run the experiment, write artifacts, print the aggregate table.
pub fn cmd_train(settings: &Settings) -> Result<()> {
    let start = SystemTime::now();
    let config = settings.train_config()?;
    let schema = DatasetSchema::builtin(config.dataset_id);
    let table = load_table(settings, &schema)?;
    let out_dir = settings.out_dir();

    let run = match run_experiment_on_table(&config, &schema, &table) {
        Ok(run) => run,
        Err(e) => {
            if let Error::TrainingAbort { .. } = &e {
                let failed = out_dir.join("failed");
                std::fs::create_dir_all(&failed)?;
                let diag = format!(
                    "training aborted\nerror: {e}\nconfig:\n{}\n",
                    serde_json::to_string_pretty(&config)?
                );
                std::fs::write(failed.join("diagnostic.txt"), diag)?;
            }
            return Err(e);
        }
    };

    render_report(&run.report, &out_dir)?;
    let ckpt_dir = out_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;
    for (fold, (model, adam)) in run.models.iter().zip(&run.optimizers).enumerate() {
        let mut model = model.clone();
        model.save_checkpoint(
            &ckpt_dir.join(format!("fold_{fold}")),
            Some(adam),
            serde_json::json!({
                "fold": fold,
                "task": config.task_id,
                "dataset": config.dataset_id.as_str(),
                "sage_variant": config.sage_variant,
            }),
        )?;
    }
    append_run_log(&out_dir, "train", start)?;
    print!("{}", run.report.summary_text());
    println!("artifacts: {}", out_dir.display());
    Ok(())
}

/// Layer-count ablation; accuracy table plus a timing sidecar.
pub fn cmd_ablate(settings: &Settings) -> Result<()> {
    let start = SystemTime::now();
    let config = settings.train_config()?;
    let schema = DatasetSchema::builtin(config.dataset_id);
    let table = load_table(settings, &schema)?;
    let layers = settings.layers_list.clone().unwrap_or_else(|| vec![2, 3, 4, 5]);
    let rows = layer_ablation(&config, &layers, &schema, &table)?;

    let out_dir = settings.out_dir();
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("ablation.csv"), ablation_csv(&rows))?;
    std::fs::write(out_dir.join("ablation_timing.csv"), ablation_timing_csv(&rows))?;
    append_run_log(&out_dir, "ablate", start)?;

    println!("layers  accuracy  seconds/epoch");
    for r in &rows {
        println!(
            "{:<7} {:<9.1} {:.4}",
            r.layers, r.aggregate_accuracy, r.seconds_per_epoch
        );
    }
    println!("table: {}", out_dir.join("ablation.csv").display());
    Ok(())
}

/// Print a human-readable summary of an existing report.json.
pub fn cmd_report(settings: &Settings) -> Result<()> {
    let path = match &settings.path {
        Some(p) if p.is_dir() => p.join("report.json"),
        Some(p) => p.clone(),
        None => {
            let candidate: PathBuf = settings.out_dir().join("report.json");
            candidate
        }
    };
    let report = load_report(&path)?;
    print!("{}", report.summary_text());
    Ok(())
}
