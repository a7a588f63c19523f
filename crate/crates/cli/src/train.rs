use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use binorm::data::TRAIN_FRACTION;
use binorm::models::{save_checkpoint, Model};
use binorm::runtime::export_to_file;
use binorm::train::{fit, EpochRecord};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::setup::{check_compatible, data_source, ensure_dir, load_data, resolve_config};
use crate::TrainArgs;

pub const REPORT_FILE: &str = "report.jsonl";
pub const CHECKPOINT_FILE: &str = "model.bnc";
pub const PACKED_FILE: &str = "model.bnm";

fn human_line(r: &EpochRecord) -> String {
    let mut line = format!(
        "epoch {:>4}  loss {:.4}/{:.4}  acc {:.4}/{:.4}",
        r.epoch, r.train_loss, r.val_loss, r.train_acc, r.val_acc
    );
    if let (Some(t), Some(v)) = (r.train_ppl, r.val_ppl) {
        line.push_str(&format!("  ppl {t:.3}/{v:.3}"));
    }
    line.push_str(&format!("  lr {:.3e}", r.lr));
    line
}

pub fn run(args: &TrainArgs, json: bool) -> CliResult<()> {
    let run = resolve_config(&args.config)?;
    let source = data_source(&args.data)?;
    ensure_dir(&args.out)?;

    let mut train_config = run.train.unwrap_or_default();
    train_config.seed = args.seed;
    if let Some(e) = args.epochs {
        train_config.epochs = e;
    }
    if let Some(b) = args.batch {
        train_config.batch_size = b;
    }
    if let Some(lr) = args.lr {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(CliError::Usage(format!("--lr must be positive, got {lr}")));
        }
        let s = &mut train_config.schedule;
        s.floor_lr *= lr / s.max_lr;
        s.max_lr = lr;
    }

    let data = load_data(&source, args.seed)?;
    check_compatible(&run.model, &data)?;
    let (train, val) = data.split(TRAIN_FRACTION, args.seed)?;
    log::info!("{} training / {} validation examples", train.len(), val.len());
    let mut model = Model::build(run.model, args.seed)?;

    let report_path = args.out.join(REPORT_FILE);
    let file = File::create(&report_path).map_err(CliError::io(format!("creating {}", report_path.display())))?;
    let mut report = BufWriter::new(file);
    let mut write_error = None;
    let result = fit(&mut model, &train, &val, &train_config, |r| {
        let line = serde_json::to_string(r).expect("records serialize");
        if let Err(e) = writeln!(report, "{line}").and_then(|_| report.flush()) {
            write_error.get_or_insert(e);
        }
        if json {
            println!("{line}");
        } else {
            println!("{}", human_line(r));
        }
    });
    if let Some(e) = write_error {
        return Err(CliError::io(format!("writing {}", report_path.display()))(e));
    }

    // A numerical abort leaves the last good masters in place; keep them.
    let checkpoint = args.out.join(CHECKPOINT_FILE);
    save_checkpoint(&model, &checkpoint)?;
    let report = result?;
    let packed: Option<PathBuf> = if model.config.binary {
        let path = args.out.join(PACKED_FILE);
        export_to_file(&model, &path)?;
        Some(path)
    } else {
        log::info!("standard model: no packed export");
        None
    };

    let summary = report.summary();
    if json {
        println!("{}", json!({ "summary": summary, "checkpoint": checkpoint, "packed": packed }));
    } else {
        if let Some(s) = &summary {
            println!("best validation loss {:.4}, accuracy {:.4}", s.best_val_loss, s.best_val_acc);
        }
        println!("checkpoint: {}", checkpoint.display());
        if let Some(p) = &packed {
            println!("packed model: {}", p.display());
        }
    }
    Ok(())
}
