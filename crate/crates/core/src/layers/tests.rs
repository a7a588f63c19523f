use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::binarize::quantize;
use crate::tensor::{self, causal_mask, Activation, NORM_EPS};

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

fn randomize(params: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let t = params.get_mut(id);
        *t = rand_t(&mut rng, &t.shape().to_vec());
    }
}

fn run<T: Element>(
    params: &ParamStore,
    mode: QuantMode,
    body: impl FnOnce(&mut Forward<T>) -> Result<Var>,
) -> Tensor<T> {
    let mut tape = Tape::new();
    let mut f = Forward::with_mode(&mut tape, params, mode, false, 0);
    let out = body(&mut f).unwrap();
    tape.value(out).clone()
}

#[test]
fn dense_hand_case() {
    let mut store = ParamStore::new();
    let layer = Dense::new(&mut Builder::new(&mut store, 0, true), "fc", 2, 2, Activation::Linear);
    store.set("fc.W", Tensor::new([2, 2], vec![0.9, -0.9, 0.9, -0.9]).unwrap()).unwrap();
    let out = run::<f32>(&store, QuantMode::Infer, |f| {
        let x = f.tape.constant(Tensor::new([1, 2], vec![1.0, 2.0]).unwrap());
        layer.forward(f, x)
    });
    // z = [3, 0], normalized with population std 1.5
    let e = 1.5 / (2.25f64 + NORM_EPS).sqrt();
    assert!((out.data()[0] as f64 - e).abs() < 1e-6);
    assert!((out.data()[1] as f64 + e).abs() < 1e-6);
}

#[test]
fn dense_matches_composition_oracle() {
    let mut store = ParamStore::new();
    let layer = Dense::new(&mut Builder::new(&mut store, 1, true), "fc", 5, 4, Activation::Gelu);
    randomize(&mut store, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_t(&mut rng, &[3, 5]);
    let out = run::<f32>(&store, QuantMode::Infer, |f| {
        let x = f.tape.constant(x.clone());
        layer.forward(f, x)
    });
    let wq = quantize(store.by_name("fc.W").unwrap()).unwrap();
    let bq = quantize(store.by_name("fc.b").unwrap()).unwrap();
    let z = tensor::add_bias(&tensor::matmul(&x, &wq).unwrap(), &bq).unwrap();
    let z = tensor::normalize_features(&z, NORM_EPS as f32);
    assert_eq!(out, tensor::activation(&z, Activation::Gelu));
}

#[test]
fn dense_rejects_wrong_width() {
    let mut store = ParamStore::new();
    let layer = Dense::new(&mut Builder::new(&mut store, 1, true), "fc", 3, 2, Activation::Relu);
    let mut tape = Tape::<f32>::new();
    let mut f = Forward::infer(&mut tape, &store);
    let x = f.tape.constant(Tensor::zeros([1, 4]));
    assert!(matches!(layer.forward(&mut f, x), Err(crate::Error::Dimension { .. })));
}

#[test]
fn conv_masked_kernel_oracle() {
    let mut store = ParamStore::new();
    let layer = Conv::new(&mut Builder::new(&mut store, 0, true), "c", 3, 1, 1, Activation::Linear).unwrap();
    let mut k = vec![0.9f32; 9];
    k[4] = -0.9;
    store.set("c.W", Tensor::new([3, 3, 1, 1], k).unwrap()).unwrap();
    let x = Tensor::<f32>::ones([1, 4, 4, 1]);
    let out = run::<f32>(&store, QuantMode::Infer, |f| {
        let x = f.tape.constant(x.clone());
        layer.forward(f, x)
    });
    // Quantized kernel is ones except the centre; count in-bounds neighbours.
    let mut z = vec![0.0f32; 16];
    for y in 0..4i32 {
        for x in 0..4i32 {
            let mut s = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if (dy, dx) != (0, 0) && (0..4).contains(&(y + dy)) && (0..4).contains(&(x + dx)) {
                        s += 1.0;
                    }
                }
            }
            z[(y * 4 + x) as usize] = s;
        }
    }
    let expected = tensor::normalize_features(&Tensor::new([1, 4, 4, 1], z).unwrap(), NORM_EPS as f32);
    assert_eq!(out, expected);
}

#[test]
fn conv_constant_input_normalizes_to_zero_mean() {
    let mut store = ParamStore::new();
    let layer = Conv::new(&mut Builder::new(&mut store, 4, true), "c", 3, 2, 3, Activation::Linear).unwrap();
    let out = run::<f32>(&store, QuantMode::Infer, |f| {
        let x = f.tape.constant(Tensor::full([2, 4, 4, 2], 0.7));
        layer.forward(f, x)
    });
    for ex in out.data().chunks(48) {
        let m: f64 = ex.iter().map(|&v| v as f64).sum::<f64>() / 48.0;
        assert!(m.abs() < 1e-6);
    }
    assert!(Conv::new(&mut Builder::new(&mut ParamStore::new(), 0, true), "c", 2, 1, 1, Activation::Relu).is_err());
}

#[test]
fn train_and_infer_paths_agree_bit_exactly() {
    let mut store = ParamStore::new();
    let mut b = Builder::new(&mut store, 5, true);
    let dense = Dense::new(&mut b, "d", 6, 5, Activation::Relu);
    let conv = Conv::new(&mut b, "c", 3, 2, 4, Activation::Relu).unwrap();
    let emb = Embedding::new(&mut b, "e", 7, 6, 8);
    let block = TransformerBlock::new(&mut b, "t", 8, 2, 16).unwrap();
    randomize(&mut store, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let xd = rand_t(&mut rng, &[3, 6]);
    let xc = rand_t(&mut rng, &[2, 4, 4, 2]);
    let ids: Vec<usize> = (0..10).map(|_| rng.gen_range(0..7)).collect();
    let mask = causal_mask::<f32>(5);

    let both = |body: &dyn Fn(&mut Forward<f32>) -> Result<Var>| {
        let a = run::<f32>(&store, QuantMode::Train, |f| body(f));
        let b = run::<f32>(&store, QuantMode::Infer, |f| body(f));
        assert_eq!(a, b);
    };
    both(&|f| {
        let x = f.tape.constant(xd.clone());
        dense.forward(f, x)
    });
    both(&|f| {
        let x = f.tape.constant(xc.clone());
        conv.forward(f, x)
    });
    both(&|f| emb.forward(f, &ids, 2, 5));
    both(&|f| {
        let x = emb.forward(f, &ids, 2, 5)?;
        block.forward(f, x, &mask)
    });
}

#[test]
fn kernel_shift_leaves_output_unchanged() {
    let mut store = ParamStore::new();
    let layer = Dense::new(&mut Builder::new(&mut store, 0, true), "fc", 4, 3, Activation::Relu);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // Values on a 1/64 grid keep the shifted sums exact.
    let w = Tensor::from_fn([4, 3], |_| rng.gen_range(-64i32..64) as f32 / 64.0);
    store.set("fc.W", w.clone()).unwrap();
    let x = rand_t(&mut rng, &[2, 4]);
    let fwd = |s: &ParamStore| {
        run::<f32>(s, QuantMode::Infer, |f| {
            let x = f.tape.constant(x.clone());
            layer.forward(f, x)
        })
    };
    let before = fwd(&store);
    store.set("fc.W", w.map(|v| v + 0.75)).unwrap();
    assert_eq!(before, fwd(&store));
}

#[test]
fn embedding_selects_rows_and_matches_one_hot() {
    let mut store = ParamStore::new();
    let emb = Embedding::new(&mut Builder::new(&mut store, 9, true), "e", 5, 4, 8);
    randomize(&mut store, 10);
    let out = run::<f32>(&store, QuantMode::Infer, |f| emb.forward(f, &[0], 1, 1));
    let row = |name: &str| {
        let w = quantize(store.by_name(&format!("e.{name}.W")).unwrap()).unwrap();
        let b = quantize(store.by_name(&format!("e.{name}.b")).unwrap()).unwrap();
        let z = tensor::add_bias(&tensor::gather_rows(&w, &[0]).unwrap(), &b).unwrap();
        tensor::normalize_last_axis(&z, NORM_EPS as f32)
    };
    let expected = tensor::add(&row("token"), &row("position")).unwrap();
    assert_eq!(out.data(), expected.data());

    let ids = [1, 4, 0, 2, 3, 3, 0, 1];
    let fast = run::<f32>(&store, QuantMode::Infer, |f| emb.forward(f, &ids, 2, 4));
    let slow = run::<f32>(&store, QuantMode::Infer, |f| emb.forward_dense(f, &ids, 2, 4));
    assert_eq!(fast.shape(), &[2, 4, 8]);
    assert!(fast.max_abs_diff(&slow).unwrap() < 1e-6);

    let mut tape = Tape::<f32>::new();
    let mut f = Forward::infer(&mut tape, &store);
    assert!(matches!(emb.forward(&mut f, &[5], 1, 1), Err(crate::Error::Data(_))));
    assert!(emb.forward(&mut f, &[0; 5], 1, 5).is_err());
}

#[test]
fn attention_single_token_and_causality() {
    let mut store = ParamStore::new();
    let attn = Attention::new(&mut Builder::new(&mut store, 11, true), "a", 8, 2).unwrap();
    randomize(&mut store, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(13);

    let x1 = rand_t(&mut rng, &[1, 1, 8]);
    let mut tape = Tape::<f32>::new();
    let mut f = Forward::infer(&mut tape, &store);
    let x = f.tape.constant(x1);
    let (out, probs) = attn.forward_with_probs(&mut f, x, x, x, &causal_mask(1)).unwrap();
    assert!(f.tape.value(probs).data().iter().all(|&p| p == 1.0));
    let v = attn.value.forward(&mut f, x).unwrap();
    let expected = attn.output.forward(&mut f, v).unwrap();
    assert_eq!(tape.value(out), tape.value(expected));

    let x5 = rand_t(&mut rng, &[2, 5, 8]);
    let mut tape = Tape::<f32>::new();
    let mut f = Forward::infer(&mut tape, &store);
    let x = f.tape.constant(x5);
    let (out, probs) = attn.forward_with_probs(&mut f, x, x, x, &causal_mask(5)).unwrap();
    assert_eq!(tape.value(out).shape(), &[2, 5, 8]);
    for (r, row) in tape.value(probs).data().chunks(5).enumerate() {
        let i = r % 5;
        let total: f64 = row.iter().map(|&p| p as f64).sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert!(row[i + 1..].iter().all(|&p| p < 1e-6));
    }
    assert!(Attention::new(&mut Builder::new(&mut ParamStore::new(), 0, true), "a", 10, 3).is_err());
}

#[test]
fn transformer_block_output_is_normalized_and_reachable() {
    let mut store = ParamStore::new();
    let block = TransformerBlock::new(&mut Builder::new(&mut store, 14, true), "t", 8, 2, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x0 = rand_t(&mut rng, &[2, 4, 8]);
    let mut tape = Tape::<f32>::new();
    let mut f = Forward::train(&mut tape, &store, 0);
    let x = f.tape.constant(x0);
    let y = block.forward(&mut f, x, &causal_mask(4)).unwrap();
    assert_eq!(f.tape.value(y).shape(), &[2, 4, 8]);
    for tok in f.tape.value(y).data().chunks(8) {
        let m: f64 = tok.iter().map(|&v| v as f64).sum::<f64>() / 8.0;
        let s = (tok.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / 8.0).sqrt();
        assert!(m.abs() < 1e-5 && (s - 1.0).abs() < 1e-3, "{m} {s}");
    }
    let w = f.tape.constant(Tensor::from_fn([2, 4, 8], |i| ((i * 7919) % 13) as f32 - 6.0));
    let p = f.tape.mul(y, w).unwrap();
    let loss = f.tape.sum(p);
    let mut grads = f.tape.backward(loss).unwrap();
    let pg = f.param_grads(&mut grads);
    for (id, p) in store.iter() {
        let g = pg[id.index()].as_ref().unwrap_or_else(|| panic!("{} has no gradient", p.name));
        assert!(g.data().iter().any(|&v| v != 0.0), "{} gradient is zero", p.name);
    }
}

#[test]
fn dropout_contracts() {
    let store = ParamStore::new();
    let x0 = Tensor::<f32>::ones([100_000]);
    let drop = |rate: f32, training: bool| {
        let mut tape = Tape::<f32>::new();
        let mut f = Forward::with_mode(&mut tape, &store, QuantMode::Train, training, 42);
        let x = f.tape.constant(x0.clone());
        let y = Dropout::new(rate).unwrap().forward(&mut f, x).unwrap();
        tape.value(y).clone()
    };
    assert_eq!(drop(0.0, true), x0);
    assert_eq!(drop(0.4, false), x0);
    let y = drop(0.4, true);
    let kept = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e5;
    assert!((kept - 0.6).abs() < 0.01, "{kept}");
    assert!((y.mean() as f64 - 1.0).abs() < 0.02);
    assert!(Dropout::new(1.0).is_err());
}

#[test]
fn standard_layers_carry_affine_params() {
    let mut store = ParamStore::new();
    let mut b = Builder::new(&mut store, 0, false);
    Dense::new(&mut b, "d", 3, 2, Activation::Relu);
    Conv::new(&mut b, "c", 3, 1, 4, Activation::Relu).unwrap();
    let names: Vec<_> = store.iter().map(|(_, p)| p.name.clone()).collect();
    assert_eq!(
        names,
        ["d.W", "d.b", "d.norm.scale", "d.norm.offset", "c.W", "c.b", "c.norm.scale", "c.norm.offset"]
    );
}
