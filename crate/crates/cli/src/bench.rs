use std::time::Instant;

use binorm::models::{Architecture, Input, Model};
use binorm::runtime::export_packed;
use binorm::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::memory::peak_during;
use crate::setup::resolve_config;
use crate::BenchArgs;

#[derive(Serialize)]
struct PathStats {
    median_ns: u128,
    peak_bytes: usize,
    weight_bytes: usize,
}

fn measure(iters: usize, weight_bytes: usize, mut forward: impl FnMut() -> binorm::Result<Tensor<f32>>) -> CliResult<PathStats> {
    let (warm, peak_bytes) = peak_during(&mut forward);
    warm?;
    let mut times = Vec::with_capacity(iters);
    for _ in 0..iters {
        let start = Instant::now();
        forward()?;
        times.push(start.elapsed().as_nanos());
    }
    times.sort_unstable();
    Ok(PathStats { median_ns: times[times.len() / 2], peak_bytes, weight_bytes })
}

pub fn run(args: &BenchArgs, json: bool) -> CliResult<()> {
    if args.iters == 0 || args.batch == 0 {
        return Err(CliError::Usage("--iters and --batch must be at least 1".into()));
    }
    let run = resolve_config(&args.config)?;
    let model = Model::build(run.model, args.seed)?;
    let packed = export_packed(&model)?;
    let packed_bytes = packed.to_bytes()?.len();

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (images, ids, len);
    let input = match &model.config.arch {
        Architecture::Bcvnn(c) => {
            let side = 16usize.max(c.spatial_divisor());
            images = Tensor::from_fn([args.batch, side, side, c.input_channels], |_| rng.gen_range(0.0..1.0));
            Input::Images(&images)
        }
        Architecture::Blm(c) => {
            len = c.max_len;
            ids = (0..args.batch * len).map(|_| rng.gen_range(0..c.vocab_size)).collect::<Vec<_>>();
            Input::Tokens { ids: &ids, batch: args.batch, len }
        }
    };

    let float = measure(args.iters, model.params.scalar_count() * 4, || model.predict(input))?;
    let fast = measure(args.iters, packed_bytes, || packed.forward(input))?;
    if json {
        println!("{}", serde_json::json!({ "config": args.config, "batch": args.batch, "iters": args.iters, "float": float, "packed": fast }));
    } else {
        println!("{:<8} {:>14} {:>16} {:>14}", "path", "median", "peak heap", "weights");
        for (name, s) in [("float", &float), ("packed", &fast)] {
            println!(
                "{name:<8} {:>11.3} ms {:>13.1} KiB {:>11.1} KiB",
                s.median_ns as f64 / 1e6,
                s.peak_bytes as f64 / 1024.0,
                s.weight_bytes as f64 / 1024.0
            );
        }
    }
    Ok(())
}
