//! Analytic gradients against central finite differences, and naive-loop
//! oracles for the dense layers.

use gseal_grad::{AdamW, AdamWConfig, Parameter, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;
const REL_TOL: f64 = 1e-3;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Checks every coordinate of every input. `f` builds a scalar loss from
/// leaves on a fresh tape.
fn check_grads(inputs: &[Tensor], f: impl Fn(&Tape, &[Var]) -> Var) {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars);
    let grads = tape.backward(loss).unwrap();

    let eval = |ins: &[Tensor]| {
        let tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.constant(t.clone())).collect();
        let l = f(&tape, &vars);
        tape.value(l).item()
    };
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape()));
        for i in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
            assert!(
                rel <= REL_TOL,
                "input {k} coord {i}: analytic {a} vs numeric {numeric} (rel {rel})"
            );
        }
    }
}

/// Weighted sum so every output coordinate matters differently.
fn probe(tape: &Tape, y: Var, seed: u64) -> Var {
    let shape = tape.shape(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random(&mut rng, &shape, -1.0, 1.0));
    let prod = tape.mul(y, w).unwrap();
    tape.sum(prod)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn elementwise_ops(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[2, 3], -2.0, 2.0);
        let b = random(&mut rng, &[2, 3], -2.0, 2.0);
        check_grads(&[a.clone(), b.clone()], |t, v| {
            let s = t.add(v[0], v[1]).unwrap();
            let d = t.sub(s, v[1]).unwrap();
            let m = t.mul(d, v[1]).unwrap();
            probe(t, m, 1)
        });
        check_grads(&[a.clone()], |t, v| { let y = t.silu(v[0]); probe(t, y, 2) });
        check_grads(&[a.clone()], |t, v| { let y = t.sigmoid(v[0]); probe(t, y, 3) });
        check_grads(&[a.clone()], |t, v| { let y = t.tanh(v[0]); probe(t, y, 4) });
        let away = a.map(|x| if x.abs() < 0.1 { x + 0.3 } else { x });
        check_grads(&[away], |t, v| { let y = t.relu(v[0]); probe(t, y, 5) });
        check_grads(&[a, Tensor::scalar(0.7)], |t, v| {
            let y = t.scale_by(v[0], v[1]).unwrap();
            probe(t, y, 6)
        });
    }

    #[test]
    fn dense_layers(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[3, 4], -1.0, 1.0);
        let w = random(&mut rng, &[4, 5], -1.0, 1.0);
        let b = random(&mut rng, &[5], -1.0, 1.0);
        check_grads(&[x, w, b], |t, v| {
            let y = t.linear(v[0], v[1], v[2]).unwrap();
            probe(t, y, 7)
        });

        let x = random(&mut rng, &[2, 2, 5, 6], -1.0, 1.0);
        let k = random(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
        let b = random(&mut rng, &[3], -1.0, 1.0);
        for stride in [1, 2] {
            check_grads(&[x.clone(), k.clone(), b.clone()], |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), stride).unwrap();
                probe(t, y, 8)
            });
        }
    }

    #[test]
    fn pooling_and_layout(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[2, 3, 4, 6], -1.0, 1.0);
        check_grads(&[x.clone()], |t, v| { let y = t.avg_pool2(v[0]).unwrap(); probe(t, y, 9) });
        check_grads(&[x.clone()], |t, v| { let y = t.upsample2(v[0]).unwrap(); probe(t, y, 10) });
        check_grads(&[x.clone()], |t, v| { let y = t.global_avg_pool(v[0]).unwrap(); probe(t, y, 11) });
        check_grads(&[x.clone()], |t, v| { let y = t.resize_bilinear(v[0], 3, 5).unwrap(); probe(t, y, 12) });
        check_grads(&[x.clone()], |t, v| { let y = t.slice_channels(v[0], 1, 2).unwrap(); probe(t, y, 13) });
        check_grads(&[x.clone(), x.clone()], |t, v| {
            let y = t.concat_channels(v[0], v[1]).unwrap();
            probe(t, y, 14)
        });
        check_grads(&[x.clone()], |t, v| { let y = t.mean_axis0(v[0]).unwrap(); probe(t, y, 15) });
        check_grads(&[x.clone()], |t, v| {
            let y = t.reshape(v[0], &[6, 24]).unwrap();
            probe(t, y, 16)
        });
        check_grads(&[x.clone(), x.clone()], |t, v| {
            let y = t.stack(&[v[0], v[1]]).unwrap();
            probe(t, y, 17)
        });
    }

    #[test]
    fn normalisation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
        let g = random(&mut rng, &[2], 0.5, 1.5);
        let b = random(&mut rng, &[2], -0.5, 0.5);
        check_grads(&[x.clone(), g.clone(), b.clone()], |t, v| {
            let (y, _) = t.batch_norm_train(v[0], v[1], v[2]).unwrap();
            probe(t, y, 18)
        });
        let rm = random(&mut rng, &[2], -0.2, 0.2);
        let rv = random(&mut rng, &[2], 0.5, 1.5);
        check_grads(&[x, g, b], |t, v| {
            let y = t.batch_norm_eval(v[0], v[1], v[2], &rm, &rv).unwrap();
            probe(t, y, 19)
        });
    }

    #[test]
    fn losses(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[7], -3.0, 3.0);
        let b = random(&mut rng, &[7], -3.0, 3.0);
        check_grads(&[a.clone(), b], |t, v| t.mse(v[0], v[1]).unwrap());
        let targets = Tensor::from_vec((0..7).map(|_| f64::from(rng.random_range(0..2u8))).collect());
        check_grads(&[a.clone()], |t, v| t.bce_with_logits(v[0], &targets).unwrap());
        check_grads(&[a], |t, v| t.mean(v[0]));
    }

    #[test]
    fn bce_is_finite_on_wide_logits(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = random(&mut rng, &[16], -1e4, 1e4);
        let targets = Tensor::from_vec((0..16).map(|_| f64::from(rng.random_range(0..2u8))).collect());
        let tape = Tape::new();
        let lv = tape.leaf(l);
        let loss = tape.bce_with_logits(lv, &targets).unwrap();
        prop_assert!(tape.value(loss).item().is_finite());
        let g = tape.backward(loss).unwrap();
        prop_assert!(g.get(lv).unwrap().validate().is_ok());
    }
}

#[test]
fn silu_linear_chain_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x = random(&mut rng, &[2, 3], -1.0, 1.0);
    let w1 = random(&mut rng, &[3, 4], -1.0, 1.0);
    let b1 = random(&mut rng, &[4], -1.0, 1.0);
    let w2 = random(&mut rng, &[4, 2], -1.0, 1.0);
    let b2 = random(&mut rng, &[2], -1.0, 1.0);
    let target = random(&mut rng, &[2, 2], -1.0, 1.0);
    check_grads(&[x, w1, b1, w2, b2], |t, v| {
        let h = t.linear(v[0], v[1], v[2]).unwrap();
        let h = t.silu(h);
        let y = t.linear(h, v[3], v[4]).unwrap();
        let tv = t.constant(target.clone());
        t.mse(y, tv).unwrap()
    });
}

#[test]
fn linear_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, din, dout) = (4, 6, 5);
    let x = random(&mut rng, &[n, din], -1.0, 1.0);
    let w = random(&mut rng, &[din, dout], -1.0, 1.0);
    let b = random(&mut rng, &[dout], -1.0, 1.0);
    let tape = Tape::new();
    let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
    let y = tape.value(tape.linear(xv, wv, bv).unwrap());
    for i in 0..n {
        for j in 0..dout {
            let mut acc = b.data()[j];
            for k in 0..din {
                acc += x.data()[i * din + k] * w.data()[k * dout + j];
            }
            assert!((y.data()[i * dout + j] - acc).abs() < 1e-6);
        }
    }
}

#[test]
fn conv_matches_sliding_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&mut rng, &[1, 5, 5], -1.0, 1.0);
    let k = random(&mut rng, &[1, 1, 3, 3], -1.0, 1.0);
    let tape = Tape::new();
    let (xv, kv) = (tape.constant(x.clone()), tape.constant(k.clone()));
    let y = tape.value(tape.conv2d(xv, kv, None, 1).unwrap());
    let at = |r: isize, c: isize| {
        if (0..5).contains(&r) && (0..5).contains(&c) {
            x.data()[(r * 5 + c) as usize]
        } else {
            0.0
        }
    };
    for r in 0..5isize {
        for c in 0..5isize {
            let mut acc = 0.0;
            for dy in 0..3isize {
                for dx in 0..3isize {
                    acc += k.data()[(dy * 3 + dx) as usize] * at(r + dy - 1, c + dx - 1);
                }
            }
            assert!((y.data()[(r * 5 + c) as usize] - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn independent_parameter_gets_zero_grad() {
    let mut used = Parameter::new("used", Tensor::from_vec(vec![1.0, 2.0]));
    let mut unused = Parameter::new("unused", Tensor::from_vec(vec![3.0]));
    let tape = Tape::new();
    let u = tape.param(&used);
    let _ = tape.param(&unused);
    let loss = tape.sum(u);
    let grads = tape.backward(loss).unwrap();
    grads.accumulate_into([&mut used, &mut unused]).unwrap();
    assert_eq!(used.grad().unwrap().data(), &[1.0, 1.0]);
    assert_eq!(unused.grad().unwrap().data(), &[0.0]);
}

#[test]
fn frozen_parameters_receive_nothing() {
    let mut p = Parameter::new("w", Tensor::from_vec(vec![1.0, 2.0]));
    p.set_frozen(true);
    let tape = Tape::new();
    let v = tape.param(&p);
    assert!(!tape.requires_grad(v));
    let x = tape.leaf(Tensor::from_vec(vec![0.5, 0.5]));
    let y = tape.mul(v, x).unwrap();
    let loss = tape.sum(y);
    let grads = tape.backward(loss).unwrap();
    assert!(grads.param(&p).is_none());
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, 2.0]);
}

/// Same seeds and inputs give bit-identical losses, gradients and updates.
#[test]
fn replay_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut k = Parameter::new("k", random(&mut rng, &[4, 3, 3, 3], -0.5, 0.5));
        let mut b = Parameter::new("b", random(&mut rng, &[4], -0.5, 0.5));
        let x = random(&mut rng, &[2, 3, 8, 8], -1.0, 1.0);
        let mut opt = AdamW::new(AdamWConfig::with_lr(1e-2));
        let mut trace = Vec::new();
        for _ in 0..3 {
            let tape = Tape::new();
            let (kv, bv) = (tape.param(&k), tape.param(&b));
            let xv = tape.constant(x.clone());
            let y = tape.conv2d(xv, kv, Some(bv), 1).unwrap();
            let y = tape.silu(y);
            let loss = tape.mean(y);
            trace.push(tape.value(loss).item().to_bits());
            let grads = tape.backward(loss).unwrap();
            grads.accumulate_into([&mut k, &mut b]).unwrap();
            trace.extend(k.grad().unwrap().data().iter().map(|v| v.to_bits()));
            opt.step([&mut k, &mut b]).unwrap();
        }
        trace.extend(k.value().data().iter().map(|v| v.to_bits()));
        trace
    };
    assert_eq!(run(), run());
}
