//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fail.

use std::hash::Hasher;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use binorm::binarize::{quantize, quantize_ste};
use binorm::data::{gen_images, gen_tokens, Dataset};
use binorm::gradcheck;
use binorm::layers::{Attention, Builder, Conv, Dense, Embedding, Forward, TransformerBlock};
use binorm::models::{count_params, ConvNetConfig, Input, Model, ModelConfig};
use binorm::runtime::{export_packed, load_packed, save_packed, PackedModel};
use binorm::tensor::{causal_mask, Activation};
use binorm::train::{fit, OptimizerConfig, ScheduleConfig, TrainConfig, TrainReport};
use binorm::{Error, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e(err: Error) -> String {
    err.to_string()
}

fn p1_parameter_counts() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    for (preset, target) in [("blm-small", 154.4e6), ("blm-large", 332.8e6)] {
        let total = count_params(&ModelConfig::preset(preset).map_err(e)?).map_err(e)?.total;
        let rel = (total as f64 - target).abs() / target;
        ensure(rel < 0.005, || format!("{preset}: {total} is {:.3}% from {target}", rel * 100.0))?;
        lines.push(format!("{preset} {total} ({:.3}%)", rel * 100.0));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 1.0, || format!("took {secs:.2}s"))?;
    Ok(format!("{} in {secs:.3}s", lines.join(", ")))
}

/// Integer-valued tensors make the threshold exact, so `v > mean` is `v * n > sum`.
fn p2_quantizer_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ties = 0usize;
    for i in 0..10_000 {
        let len = rng.gen_range(1..=64);
        let ints: Vec<i64> = match i % 3 {
            0 => (0..len).map(|_| rng.gen_range(-3..=3)).collect(),
            1 => vec![rng.gen_range(-5..=5); len],
            _ => (0..len).map(|_| rng.gen_range(-1000..=1000)).collect(),
        };
        let sum: i64 = ints.iter().sum();
        let n = len as i64;
        let expected: Vec<f32> = ints.iter().map(|&v| if v * n > sum { 1.0 } else { 0.0 }).collect();
        ties += ints.iter().filter(|&&v| v * n == sum).count();
        let p = Tensor::new([len], ints.iter().map(|&v| v as f32).collect()).map_err(e)?;
        let got = quantize(&p).map_err(e)?;
        ensure(got.data() == &expected[..], || format!("tensor {i} {ints:?} quantized to {:?}", got.data()))?;

        let floats: Vec<f32> = (0..len).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let mean = floats.iter().map(|&v| v as f64).sum::<f64>() / len as f64;
        let expected: Vec<f32> = floats.iter().map(|&v| if v as f64 > mean { 1.0 } else { 0.0 }).collect();
        let got = quantize(&Tensor::new([len], floats).map_err(e)?).map_err(e)?;
        ensure(got.data() == &expected[..], || format!("float tensor {i} mismatched"))?;
    }
    Ok(format!("20000 tensors matched, {ties} ties mapped to 0"))
}

fn p3_ste_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..100 {
        let rank = rng.gen_range(1..=4);
        let shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..=7)).collect();
        let mut tape = Tape::<f32>::new();
        let p = tape.leaf(Tensor::from_fn(shape.clone(), |_| rng.gen_range(-2.0..2.0)), true);
        let q = quantize_ste(&mut tape, p).map_err(e)?;
        let s = tape.sum(q);
        let g = tape.backward(s).map_err(e)?;
        let grad = g.get(p).ok_or("no gradient reached the master")?;
        ensure(grad.data().iter().all(|&v| v.to_bits() == 1.0f32.to_bits()), || format!("shape {i} {shape:?}: {:?}", grad.data()))?;
    }
    Ok("100 shapes, gradient exactly 1 everywhere".into())
}

fn p4_gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut worst = (String::new(), 0.0f64);
    let mut count = 0;
    for seed in [11, 12, 13] {
        for r in gradcheck::run_all(seed).map_err(e)? {
            count += 1;
            if r.max_rel_error > worst.1 {
                worst = (r.name.clone(), r.max_rel_error);
            }
            ensure(r.passed(), || format!("seed {seed} {}: {:.3e}", r.name, r.max_rel_error))?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{count} checks, worst {} {:.2e}, {secs:.1}s", worst.0, worst.1))
}

/// Mean and population std of each row, in f64.
fn row_stats(values: &[f32], row: usize) -> Vec<(f64, f64)> {
    values
        .chunks(row)
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = r.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .collect()
}

fn p5_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = (0.0f64, 0.0f64);
    let mut kinds = 0;
    let mut low_scale_std = f64::INFINITY;
    for binary in [true, false] {
        let mut store = ParamStore::new();
        let mut b = Builder::new(&mut store, 5, binary);
        let dense = Dense::new(&mut b, "dense", 12, 16, Activation::Linear);
        let conv = Conv::new(&mut b, "conv", 3, 3, 6, Activation::Linear).map_err(e)?;
        let embed = Embedding::new(&mut b, "embed", 10, 6, 16);
        let attn = Attention::new(&mut b, "attn", 16, 4).map_err(e)?;
        let block = TransformerBlock::new(&mut b, "block", 16, 4, 24).map_err(e)?;
        let mask = causal_mask::<f32>(6);
        for scale in [0.01f32, 1.0, 100.0] {
            // At tiny input scales the variance falls toward eps and the
            // output std drops below 1 by design; it is reported, not asserted.
            let asserted = scale >= 1.0;
            let mut tape = Tape::new();
            let mut f = Forward::infer(&mut tape, &store);
            let mut outputs: Vec<(Tensor<f32>, usize)> = Vec::new();
            let x = f.tape.constant(Tensor::from_fn([4, 12], |_| scale * rng.gen_range(-1.0..1.0)));
            let y = dense.forward(&mut f, x).map_err(e)?;
            outputs.push((f.tape.value(y).clone(), 16));
            let x = f.tape.constant(Tensor::from_fn([3, 8, 8, 3], |_| scale * rng.gen_range(-1.0..1.0)));
            let y = conv.forward(&mut f, x).map_err(e)?;
            outputs.push((f.tape.value(y).clone(), 8 * 8 * 6));
            let ids: Vec<usize> = (0..12).map(|_| rng.gen_range(0..10)).collect();
            let emb = embed.forward(&mut f, &ids, 2, 6).map_err(e)?;
            let emb = f.tape.normalize_last_axis(emb).map_err(e)?;
            outputs.push((f.tape.value(emb).clone(), 16));
            let x = f.tape.constant(Tensor::from_fn([2, 6, 16], |_| scale * rng.gen_range(-1.0..1.0)));
            let y = attn.forward(&mut f, x, x, x, &mask).map_err(e)?;
            outputs.push((f.tape.value(y).clone(), 16));
            let y = block.forward(&mut f, x, &mask).map_err(e)?;
            outputs.push((f.tape.value(y).clone(), 16));
            kinds = outputs.len();
            for (k, (out, row)) in outputs.iter().enumerate() {
                for (mean, std) in row_stats(out.data(), *row) {
                    if !asserted {
                        low_scale_std = low_scale_std.min(std);
                        continue;
                    }
                    worst = (worst.0.max(mean.abs()), worst.1.max((std - 1.0).abs()));
                    ensure(mean.abs() < 1e-6 && (std - 1.0).abs() < 1e-4, || {
                        format!("layer kind {k}, binary {binary}, scale {scale}: mean {mean:.2e}, std {std:.8}")
                    })?;
                }
            }
        }
    }
    Ok(format!(
        "{kinds} layer kinds x binary/standard x input scales 1 and 100; max |mean| {:.1e}, max |std-1| {:.1e} (min std at input scale 0.01: {low_scale_std:.4})",
        worst.0, worst.1
    ))
}

fn bits_equal(a: &Tensor<f32>, b: &Tensor<f32>) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn p6_train_infer_equality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let mut b = Builder::new(&mut store, 6, true);
    let dense = Dense::new(&mut b, "dense", 12, 16, Activation::Gelu);
    let conv = Conv::new(&mut b, "conv", 3, 3, 6, Activation::Relu).map_err(e)?;
    let embed = Embedding::new(&mut b, "embed", 10, 6, 16);
    let attn = Attention::new(&mut b, "attn", 16, 4).map_err(e)?;
    let block = TransformerBlock::new(&mut b, "block", 16, 4, 24).map_err(e)?;
    let mask = causal_mask::<f32>(6);
    let dense_x = Tensor::from_fn([4, 12], |_| rng.gen_range(-1.0..1.0));
    let conv_x = Tensor::from_fn([2, 8, 8, 3], |_| rng.gen_range(-1.0..1.0));
    let seq_x = Tensor::from_fn([2, 6, 16], |_| rng.gen_range(-1.0..1.0));
    let ids: Vec<usize> = (0..12).map(|_| rng.gen_range(0..10)).collect();

    let run = |f: &mut Forward<f32>| -> binorm::Result<Vec<Tensor<f32>>> {
        let mut outs = Vec::new();
        let x = f.tape.constant(dense_x.clone());
        let y = dense.forward(f, x)?;
        outs.push(f.tape.value(y).clone());
        let x = f.tape.constant(conv_x.clone());
        let y = conv.forward(f, x)?;
        outs.push(f.tape.value(y).clone());
        let y = embed.forward(f, &ids, 2, 6)?;
        outs.push(f.tape.value(y).clone());
        let x = f.tape.constant(seq_x.clone());
        let y = attn.forward(f, x, x, x, &mask)?;
        outs.push(f.tape.value(y).clone());
        let y = block.forward(f, x, &mask)?;
        outs.push(f.tape.value(y).clone());
        Ok(outs)
    };
    let mut t1 = Tape::new();
    let trained = run(&mut Forward::train(&mut t1, &store, 1)).map_err(e)?;
    let mut t2 = Tape::new();
    let inferred = run(&mut Forward::infer(&mut t2, &store)).map_err(e)?;
    for (k, (a, b)) in trained.iter().zip(&inferred).enumerate() {
        ensure(bits_equal(a, b), || format!("layer kind {k} differs"))?;
    }

    for name in ["tiny-bcvnn", "tiny-blm"] {
        let model = Model::build(ModelConfig::preset(name).map_err(e)?, 6).map_err(e)?;
        let (images, tokens) = (Tensor::from_fn([2, 16, 16, 3], |_| rng.gen_range(0.0..1.0)), (0..32).map(|_| rng.gen_range(0..8)).collect::<Vec<_>>());
        let input = if name == "tiny-bcvnn" { Input::Images(&images) } else { Input::Tokens { ids: &tokens, batch: 2, len: 16 } };
        let mut t = Tape::new();
        let mut f = Forward::train(&mut t, &model.params, 1);
        let y = model.forward(&mut f, input).map_err(e)?;
        let trained = f.tape.value(y).clone();
        ensure(bits_equal(&trained, &model.predict(input).map_err(e)?), || format!("{name} whole-model forwards differ"))?;
    }
    Ok("5 binary layer kinds and both tiny models bit-exact".into())
}

fn p7_packed_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for name in ["tiny-bcvnn", "tiny-blm"] {
        let model = Model::build(ModelConfig::preset(name).map_err(e)?, 7).map_err(e)?;
        let packed = export_packed(&model).map_err(e)?;
        for i in 0..100 {
            let images = Tensor::from_fn([1, 16, 16, 3], |_| rng.gen_range(0.0..1.0));
            let len = rng.gen_range(1..=16);
            let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(0..8)).collect();
            let input = if name == "tiny-bcvnn" { Input::Images(&images) } else { Input::Tokens { ids: &ids, batch: 1, len } };
            let float = model.predict(input).map_err(e)?;
            let fast = packed.forward(input).map_err(e)?;
            let k = float.last_dim();
            for (a, b) in float.data().chunks(k).zip(fast.data().chunks(k)) {
                for (&x, &y) in a.iter().zip(b) {
                    let rel = (x as f64 - y as f64).abs() / (x.abs() as f64).max(1e-30);
                    worst = worst.max(rel);
                    ensure(rel <= 1e-5, || format!("{name} input {i}: {x} vs {y}"))?;
                }
                ensure(binorm::train::argmax(a) == binorm::train::argmax(b), || format!("{name} input {i}: argmax differs"))?;
            }
        }
    }
    Ok(format!("200 inputs, max relative difference {worst:.1e}, argmax agreement 100%"))
}

fn p8_memory() -> Outcome {
    let config = ModelConfig { binary: true, arch: binorm::models::Architecture::Bcvnn(ConvNetConfig::full(3, 4)) };
    let model = Model::build(config, 8).map_err(e)?;
    let packed = export_packed(&model).map_err(e)?;
    let dir = tempfile::tempdir().map_err(|x| x.to_string())?;
    let path = dir.path().join("model.bnm");
    save_packed(&packed, &path).map_err(e)?;
    let size = std::fs::metadata(&path).map_err(|x| x.to_string())?.len() as f64;
    let n = packed.param_count() as f64;
    let layers = packed.layers().len() as f64;
    let bound = n / 8.0 + 64.0 * layers + 1024.0;
    let ratio = n * 4.0 / size;
    ensure(n >= 1e5, || format!("only {n} parameters"))?;
    ensure(size < bound, || format!("{size} bytes >= bound {bound}"))?;
    ensure(ratio >= 31.0, || format!("reduction only {ratio:.2}x"))?;
    Ok(format!("N = {n}, L = {layers}, file {size} B < bound {bound:.0} B, {ratio:.2}x smaller than f32"))
}

fn check_report(report: &TrainReport, language: bool) -> Result<(), String> {
    for r in &report.records {
        let values = [r.train_loss, r.val_loss, r.train_acc, r.val_acc, r.lr];
        ensure(values.iter().all(|v| v.is_finite()), || format!("epoch {}: non-finite value", r.epoch))?;
        if language {
            for (ppl, loss) in [(r.train_ppl, r.train_loss), (r.val_ppl, r.val_loss)] {
                let ppl = ppl.ok_or("missing perplexity")?;
                let rel = (ppl - loss.exp()).abs() / loss.exp();
                ensure(rel < 1e-6, || format!("epoch {}: ppl {ppl} vs exp(loss) {}", r.epoch, loss.exp()))?;
            }
        }
    }
    Ok(())
}

fn train_until(
    name: &str,
    data: Dataset,
    config: TrainConfig,
    target: f64,
    language: bool,
) -> Result<(usize, f64, f64), String> {
    let start = Instant::now();
    let mut model = Model::build(ModelConfig::preset(name).map_err(e)?, config.seed).map_err(e)?;
    let (train, val) = data.split(binorm::data::TRAIN_FRACTION, config.seed).map_err(e)?;
    let report = fit(&mut model, &train, &val, &config, |_| {}).map_err(e)?;
    check_report(&report, language)?;
    ensure(model.params.all_finite(), || "non-finite master after training".into())?;
    let best = report.records.iter().map(|r| r.train_acc).fold(0.0, f64::max);
    let reached = report
        .records
        .iter()
        .find(|r| r.train_acc >= target)
        .ok_or_else(|| format!("{name}: best train accuracy {best:.3} < {target} in {} epochs", config.epochs))?;
    Ok((reached.epoch, best, start.elapsed().as_secs_f64()))
}

fn p9_training() -> Outcome {
    let images = Dataset::Images(gen_images(4, 256, 16, 16, 9).map_err(e)?);
    let conv_cfg = TrainConfig {
        epochs: 30,
        batch_size: 16,
        seed: 9,
        optimizer: OptimizerConfig::adam(),
        schedule: ScheduleConfig::constant(1e-3),
        record_wall_time: false,
    };
    let (ce, cb, ct) = train_until("tiny-bcvnn", images, conv_cfg, 0.95, false)?;

    let tokens = Dataset::Tokens(gen_tokens(8, 256, 17, 9).map_err(e)?);
    let lm_cfg = TrainConfig {
        epochs: 60,
        batch_size: 16,
        seed: 9,
        optimizer: OptimizerConfig::adamw(),
        schedule: ScheduleConfig::warmup_decay(3e-3, 20, 900),
        record_wall_time: false,
    };
    let (le, lb, lt) = train_until("tiny-blm", tokens, lm_cfg, 0.75, true)?;
    Ok(format!(
        "tiny-bcvnn >= 0.95 at epoch {ce} (best {cb:.3}, {ct:.0}s); tiny-blm >= 0.75 at epoch {le} (best {lb:.3}, {lt:.0}s); no NaN, ppl = exp(loss)"
    ))
}

fn run_once(name: &str, seed: u64) -> binorm::Result<(String, Vec<u8>)> {
    let data = if name == "tiny-bcvnn" {
        Dataset::Images(gen_images(4, 64, 16, 16, seed)?)
    } else {
        Dataset::Tokens(gen_tokens(8, 64, 17, seed)?)
    };
    let (train, val) = data.split(0.75, seed)?;
    let mut model = Model::build(ModelConfig::preset(name)?, seed)?;
    let config = TrainConfig { epochs: 3, batch_size: 8, seed, schedule: ScheduleConfig::constant(1e-3), ..TrainConfig::default() };
    let report = fit(&mut model, &train, &val, &config, |_| {})?;
    Ok((report.to_jsonl(), export_packed(&model)?.to_bytes()?))
}

fn p10_determinism() -> Outcome {
    for name in ["tiny-bcvnn", "tiny-blm"] {
        let a = run_once(name, 10).map_err(e)?;
        let b = run_once(name, 10).map_err(e)?;
        ensure(a.0 == b.0, || format!("{name}: reports differ"))?;
        ensure(a.1 == b.1, || format!("{name}: exports differ"))?;
        let c = run_once(name, 11).map_err(e)?;
        ensure(a.0 != c.0, || format!("{name}: a different seed gave the same report"))?;
    }
    Ok("reports and exports byte-identical for both tiny models".into())
}

fn reseal(mut bytes: Vec<u8>) -> Vec<u8> {
    bytes.truncate(bytes.len() - 8);
    let mut h = fnv::FnvHasher::default();
    h.write(&bytes);
    let sum = h.finish();
    bytes.extend_from_slice(&sum.to_le_bytes());
    bytes
}

fn p11_format_robustness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let model = Model::build(ModelConfig::preset("tiny-blm").map_err(e)?, 11).map_err(e)?;
    let packed = export_packed(&model).map_err(e)?;
    let bytes = packed.to_bytes().map_err(e)?;

    let dir = tempfile::tempdir().map_err(|x| x.to_string())?;
    let path = dir.path().join("m.bnm");
    save_packed(&packed, &path).map_err(e)?;
    let back = load_packed(&path).map_err(e)?;
    ensure(back == packed, || "roundtrip changed the model".into())?;
    ensure(back.to_bytes().map_err(e)? == bytes, || "roundtrip changed the bytes".into())?;
    let probe: Vec<usize> = (0..16).map(|i| i % 8).collect();
    let input = Input::Tokens { ids: &probe, batch: 1, len: 16 };
    ensure(bits_equal(&back.forward(input).map_err(e)?, &packed.forward(input).map_err(e)?), || "roundtrip changed outputs".into())?;

    let mut rejected = 0;
    for i in 0..2000 {
        let mut bad = bytes.clone();
        let flips = rng.gen_range(1..=4);
        for _ in 0..flips {
            let at = rng.gen_range(0..bad.len());
            bad[at] ^= 1 << rng.gen_range(0..8);
        }
        if bad == bytes {
            continue;
        }
        let result = catch_unwind(|| PackedModel::from_bytes(&bad)).map_err(|_| format!("flip case {i} panicked"))?;
        ensure(matches!(result, Err(Error::Format { .. })), || format!("flip case {i} was not a format error: {result:?}"))?;
        rejected += 1;
    }
    let mut structural = 0;
    for i in 0..2000 {
        let mut bad = bytes.clone();
        let at = rng.gen_range(0..bad.len() - 8);
        bad[at] = rng.gen();
        let bad = reseal(bad);
        let result = catch_unwind(|| PackedModel::from_bytes(&bad)).map_err(|_| format!("resealed case {i} panicked"))?;
        if result.is_err() {
            structural += 1;
        }
    }
    let truncated = (0..bytes.len()).step_by(7).all(|n| matches!(PackedModel::from_bytes(&bytes[..n]), Err(Error::Format { .. })));
    ensure(truncated, || "a truncated file was not a format error".into())?;
    Ok(format!("roundtrip bit-exact; {rejected} flipped files rejected; {structural}/2000 resealed edits rejected, none panicked"))
}

fn main() {
    let checks: [(&str, fn() -> Outcome); 11] = [
        ("P1 parameter counts", p1_parameter_counts),
        ("P2 quantizer oracle", p2_quantizer_oracle),
        ("P3 straight-through gradient", p3_ste_contract),
        ("P4 gradient checks", p4_gradient_checks),
        ("P5 normalization invariants", p5_normalization),
        ("P6 train/inference equality", p6_train_infer_equality),
        ("P7 packed runtime equivalence", p7_packed_equivalence),
        ("P8 memory bound", p8_memory),
        ("P9 training stability", p9_training),
        ("P10 determinism", p10_determinism),
        ("P11 format robustness", p11_format_robustness),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
