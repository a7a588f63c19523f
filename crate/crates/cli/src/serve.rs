//! eval, export and infer.

use std::path::Path;

use binorm::data::{dataset_from_bytes, Dataset};
use binorm::models::{load_checkpoint, Input, Model};
use binorm::runtime::{export_to_file, infer, PackedModel, MAGIC};
use binorm::train::{evaluate, evaluate_with, Evaluation};
use binorm::{Error, Tensor};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::setup::{check_compatible, data_source, ensure_dir, load_data};
use crate::train::PACKED_FILE;
use crate::{EvalArgs, ExportArgs, InferArgs};

enum Loaded {
    Float(Model),
    Packed(PackedModel),
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("'{}' does not exist", path.display())));
    }
    std::fs::read(path).map_err(CliError::io(format!("reading {}", path.display())))
}

/// Packed models are told apart from checkpoints by their magic bytes.
fn load_model(path: &Path) -> CliResult<Loaded> {
    let bytes = read(path)?;
    if bytes.starts_with(MAGIC) {
        Ok(Loaded::Packed(PackedModel::from_bytes(&bytes)?))
    } else {
        Ok(Loaded::Float(load_checkpoint(path)?))
    }
}

fn print_eval(e: &Evaluation, kind: &str, json: bool) {
    if json {
        println!("{}", json!({ "model": kind, "evaluation": e }));
    } else {
        println!(
            "{kind} model on {} predictions: loss {:.4}  accuracy {:.4}  perplexity {:.4}",
            e.rows, e.loss, e.accuracy, e.perplexity
        );
    }
}

pub fn eval(args: &EvalArgs, json: bool) -> CliResult<()> {
    let source = data_source(&args.data)?;
    let loaded = load_model(&args.model)?;
    let data = load_data(&source, args.seed)?;
    let (evaluation, kind) = match &loaded {
        Loaded::Float(m) => {
            check_compatible(&m.config, &data)?;
            (evaluate(m, &data, args.batch)?, "float")
        }
        Loaded::Packed(p) => {
            check_compatible(&p.config, &data)?;
            (evaluate_with(&data, args.batch, |input| p.forward(input))?, "packed")
        }
    };
    print_eval(&evaluation, kind, json);
    Ok(())
}

pub fn export(args: &ExportArgs, json: bool) -> CliResult<()> {
    let bytes = read(&args.checkpoint)?;
    if bytes.starts_with(MAGIC) {
        return Err(CliError::Usage(format!("'{}' is already a packed model", args.checkpoint.display())));
    }
    ensure_dir(&args.out)?;
    let model = load_checkpoint(&args.checkpoint)?;
    let path = args.out.join(PACKED_FILE);
    let packed = export_to_file(&model, &path)?;
    let size = std::fs::metadata(&path).map_err(CliError::io(format!("reading {}", path.display())))?.len();
    let params = packed.param_count();
    if json {
        println!("{}", json!({ "packed": path, "bytes": size, "parameters": params }));
    } else {
        println!("wrote {} ({size} bytes for {params} parameters)", path.display());
    }
    Ok(())
}

/// One model input per example: images from a dataset file, or token
/// sequences from a dataset file or a text file of ids, one sequence per line.
enum Examples {
    Images(Tensor<f32>),
    Sequences(Vec<Vec<usize>>),
}

fn read_examples(path: &Path) -> CliResult<Examples> {
    let bytes = read(path)?;
    if bytes.is_empty() {
        return Err(Error::Data(format!("input file '{}' is empty", path.display())).into());
    }
    if bytes.starts_with(b"BND1") {
        return Ok(match dataset_from_bytes(&bytes)? {
            Dataset::Images(d) => Examples::Images(d.images),
            Dataset::Tokens(d) => Examples::Sequences((0..d.count()).map(|i| d.row(i).to_vec()).collect()),
        });
    }
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| Error::Data(format!("'{}' is neither a dataset file nor text token ids", path.display())))?;
    let mut sequences = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let ids = line
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| Error::Data(format!("line {}: expected whitespace-separated token ids", n + 1)))?;
        sequences.push(ids);
    }
    if sequences.is_empty() {
        return Err(Error::Data(format!("input file '{}' has no token ids", path.display())).into());
    }
    Ok(Examples::Sequences(sequences))
}

pub fn infer_cmd(args: &InferArgs, json: bool) -> CliResult<()> {
    let packed = match load_model(&args.model)? {
        Loaded::Packed(p) => p,
        Loaded::Float(_) => return Err(CliError::Usage("infer needs a packed model; run export first".into())),
    };
    // (probabilities of the predicted position, argmax, latency)
    let mut rows: Vec<(Vec<f32>, usize, u128)> = Vec::new();
    match read_examples(&args.input)? {
        Examples::Images(images) => {
            let out = infer(&packed, Input::Images(&images))?;
            let k = out.probabilities.last_dim();
            for (p, &a) in out.probabilities.data().chunks(k).zip(&out.argmax) {
                rows.push((p.to_vec(), a, out.latency_ns));
            }
        }
        Examples::Sequences(seqs) => {
            for ids in seqs {
                let out = infer(&packed, Input::Tokens { ids: &ids, batch: 1, len: ids.len() })?;
                let k = out.probabilities.last_dim();
                let last = out.probabilities.data().chunks(k).last().expect("non-empty sequence").to_vec();
                rows.push((last, *out.argmax.last().expect("non-empty sequence"), out.latency_ns));
            }
        }
    }
    if json {
        let predictions: Vec<_> = rows.iter().map(|(p, a, _)| json!({ "argmax": a, "probabilities": p })).collect();
        println!("{}", json!({ "predictions": predictions }));
    } else {
        for (i, (p, a, ns)) in rows.iter().enumerate() {
            let probs: Vec<String> = p.iter().map(|v| format!("{v:.4}")).collect();
            println!("{i}: argmax {a}  [{}]  ({:.3} ms)", probs.join(" "), *ns as f64 / 1e6);
        }
    }
    Ok(())
}
