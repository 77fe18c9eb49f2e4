use gseal_core::nets::*;
use gseal_core::seal::{loss_gradients, SealFrozen, TrainConfig};
use gseal_core::toolkit::CameraRig;
use gseal_grad::{Parameter, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_rig() -> CameraRig {
    CameraRig { size: 16, focal: 16.0, ..CameraRig::default() }
}

fn small_config() -> UNetConfig {
    UNetConfig { views: 4, widths: vec![8, 16], splat_size: 16, image_size: 16 }
}

fn small_generator(seed: u64) -> ToyUNet {
    let cams = small_rig().cameras().unwrap();
    let input: Vec<_> = [0, 2, 4, 6].iter().map(|&i| cams[i].clone()).collect();
    let mut g = ToyUNet::lifted(small_config(), &input, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    g.set_frozen(true);
    g
}

fn small_mods(init: ModulationInit, seed: u64) -> ModulationSet {
    let c = small_config();
    ModulationSet::new(16, INPUT_BLOCK_CHANNELS, c.mid_width(), c.out_width(), init, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn randomize(p: &mut Parameter, rng: &mut impl Rng, scale: f64) {
    p.value_mut().data_mut().iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
}

/// Modulation set with every weight, bias and coefficient nonzero.
fn random_mods(seed: u64) -> ModulationSet {
    let mut m = small_mods(ModulationInit::ZeroOutput, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    for p in m.net_params_mut() {
        randomize(p, &mut rng, 0.2);
    }
    m
}

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn views(seed: u64) -> Tensor {
    random_tensor(&[12, 16, 16], seed)
}

#[test]
fn zero_initialised_modulation_is_identity() {
    let g = small_generator(1);
    let x = views(2);
    let m = Message::from_hex("0xB3A5").unwrap();
    let clean = g.generate(&x, None).unwrap();
    for init in [ModulationInit::AllZero, ModulationInit::ZeroOutput] {
        let mods = small_mods(init, 3);
        for sites in SiteSet::subsets() {
            let wm = g.generate(&x, Some((&mods, &m, sites))).unwrap();
            assert_eq!(wm.tensor().data(), clean.tensor().data(), "{init:?} {sites:?}");
        }
    }
    let mods = small_mods(ModulationInit::AllZero, 3);
    assert!(mods.net_params().iter().all(|p| p.value().data().iter().all(|&v| v == 0.0)));
    assert!(mods.coeff_params().iter().all(|p| p.value().item() == COEFF_INIT));
}

#[test]
fn zero_coefficients_pass_through() {
    let g = small_generator(4);
    let x = views(5);
    let m = Message::from_hex("0x1234").unwrap();
    let mut mods = random_mods(6);
    let clean = g.generate(&x, None).unwrap();
    assert_ne!(g.generate(&x, Some((&mods, &m, SiteSet::ALL))).unwrap(), clean);
    for p in mods.coeff_params_mut() {
        *p.value_mut() = Tensor::from_vec(vec![0.0]);
    }
    assert_eq!(g.generate(&x, Some((&mods, &m, SiteSet::ALL))).unwrap(), clean);
}

/// `(z_in − z)` for features `z` and coefficient `c` at the output site.
fn perturbation(c: f64, seed: u64) -> (Vec<f64>, Tensor) {
    let mut mods = random_mods(seed);
    *mods.gamma.value_mut() = Tensor::from_vec(vec![c]);
    let tape = Tape::new();
    let z = random_tensor(&[8, 16, 16], seed ^ 7);
    let zv = tape.constant(z.clone());
    let m = tape.constant(Message::from_hex("0xC0DE").unwrap().to_tensor());
    let out = modulate(&tape, zv, m, &mods.b_out, &mods.gamma).unwrap();
    let diff = tape.value(out).data().iter().zip(z.data()).map(|(a, b)| a - b).collect();
    let block = mods.b_out.forward(&tape, m).unwrap();
    let field = tile_block(&tape.value(block), 16, 16, 8).unwrap();
    (diff, field)
}

#[test]
fn perturbation_is_linear_in_coefficient() {
    let (d1, field) = perturbation(0.1, 8);
    let (d3, _) = perturbation(0.3, 8);
    for (a, b) in d1.iter().zip(&d3) {
        assert!((3.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (dneg, _) = perturbation(-0.4, 8);
    assert!((norm(&dneg) - 0.4 * norm(field.data())).abs() <= 1e-9 * norm(field.data()));
    assert!(norm(&d1) > 0.0);
}

#[test]
fn modulation_rejects_untileable_features() {
    let mods = random_mods(9);
    let tape = Tape::new();
    let z = tape.constant(Tensor::zeros(&[8, 12, 16]));
    let m = tape.constant(Message::from_hex("0xC0DE").unwrap().to_tensor());
    assert!(modulate(&tape, z, m, &mods.b_out, &mods.gamma).is_err());
}

#[test]
fn random_decoder_is_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let dec = HiddenDecoder::new(16, 3, Some(32), &mut rng);
    let mut total = 0.0;
    for t in 0..100 {
        let img = random_tensor(&[1, 3, 32, 32], 100 + t);
        let m = Message::random(16, &mut rng).unwrap();
        let got = Message::from_logits(&decode_logits(&img, &dec).unwrap()).unwrap();
        total += got.bits().iter().zip(m.bits()).filter(|(a, b)| a == b).count() as f64 / 16.0;
    }
    let acc = total / 100.0;
    assert!((acc - 0.5).abs() <= 0.1, "accuracy {acc}");
}

#[test]
fn multi_view_logits_are_averaged() {
    let dec = HiddenDecoder::new(16, 3, Some(32), &mut ChaCha8Rng::seed_from_u64(11));
    let (a, b) = (random_tensor(&[1, 3, 32, 32], 1), random_tensor(&[1, 3, 32, 32], 2));
    let mut both = a.data().to_vec();
    both.extend_from_slice(b.data());
    let both = Tensor::new(&[2, 3, 32, 32], both).unwrap();
    let (la, lb, lab) = (decode_logits(&a, &dec).unwrap(), decode_logits(&b, &dec).unwrap(), decode_logits(&both, &dec).unwrap());
    for i in 0..16 {
        assert!((lab[i] - 0.5 * (la[i] + lb[i])).abs() <= 1e-12);
    }
    // +1 and −3 average to −1
    assert_eq!(Message::from_logits(&[(1.0 - 3.0) / 2.0, 2.0, -3.0, 0.5]).unwrap().bits(), &[0, 1, 0, 1]);
}

#[test]
fn decoder_resizes_to_its_input_side() {
    let dec = HiddenDecoder::new(16, 3, Some(32), &mut ChaCha8Rng::seed_from_u64(12));
    assert_eq!(decode_logits(&random_tensor(&[2, 3, 8, 8], 3), &dec).unwrap().len(), 16);
    assert!(decode_logits(&random_tensor(&[2, 4, 8, 8], 3), &dec).is_err());
}

#[test]
fn encoder_starts_as_identity_and_stays_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut enc = HiddenEncoder::new(16, 3, &mut rng);
    let img = random_tensor(&[2, 3, 16, 16], 4);
    let msgs = Tensor::new(&[2, 16], (0..32).map(|i| (i % 3 == 0) as u8 as f64).collect()).unwrap();
    assert_eq!(hidden_encode(&img, &msgs, &enc).unwrap(), img);
    randomize(&mut enc.head.weight, &mut rng, 5.0);
    randomize(&mut enc.head.bias, &mut rng, 5.0);
    let out = hidden_encode(&img, &msgs, &enc).unwrap();
    let max = out.data().iter().zip(img.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(max <= 0.1 + 1e-12 && max > 0.05, "max residual {max}");
    assert!(hidden_encode(&img, &Tensor::zeros(&[2, 8]), &enc).is_err());
}

#[test]
fn message_loss_reaches_every_modulation_parameter() {
    let g = small_generator(14);
    let rig = small_rig();
    let dec = {
        let mut d = HiddenDecoder::new(16, 3, Some(32), &mut ChaCha8Rng::seed_from_u64(15));
        d.set_frozen(true);
        d
    };
    let fz = SealFrozen::new(&g, &dec, &rig);
    let mods = random_mods(16);
    let cams = rig.cameras().unwrap();
    let x = views(17);
    let cfg = TrainConfig { lambda_gs: 0.0, lambda_rgb: 0.0, ..TrainConfig::default() };
    let m = Message::from_hex("0xB3A5").unwrap();
    let (_, grads) = loss_gradients(&fz, &mods, &m, &[&x], &cams[..2], &cfg).unwrap();
    for p in mods.params() {
        let gp = grads.param(p).unwrap_or_else(|| panic!("{} unreached", p.name()));
        assert!(gp.data().iter().any(|&v| v != 0.0), "{} has zero gradient", p.name());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn message_round_trips(len_idx in 0usize..4, seed in 0u64..10_000) {
        let len = MESSAGE_LENGTHS[len_idx];
        let m = Message::random(len, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(Message::from_hex(&m.to_hex()).unwrap(), m.clone());
        prop_assert_eq!(Message::from_tensor(&message_to_tensor(&m)).unwrap(), m);
    }

    #[test]
    fn watermark_off_equals_zero_coefficients(seed in 0u64..1000) {
        let g = small_generator(20);
        let x = views(seed);
        let mut mods = random_mods(seed);
        for p in mods.coeff_params_mut() {
            *p.value_mut() = Tensor::from_vec(vec![0.0]);
        }
        let m = Message::random(16, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(g.generate(&x, None).unwrap(), g.generate(&x, Some((&mods, &m, SiteSet::ALL))).unwrap());
    }
}
