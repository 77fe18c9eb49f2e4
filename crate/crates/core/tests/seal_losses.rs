use gseal_core::nets::{Message, ModulationInit, SiteSet};
use gseal_core::seal::*;
use gseal_grad::{Tape, Tensor};
use proptest::prelude::*;

fn bce_oracle(logits: &[f64], bits: &[u8]) -> f64 {
    let n = logits.len() as f64;
    logits
        .iter()
        .zip(bits)
        .map(|(&z, &y)| {
            let p = 1.0 / (1.0 + (-z).exp());
            -(y as f64 * p.ln() + (1.0 - y as f64) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}

fn msg_loss(logits: &[f64], m: &Message) -> f64 {
    let tape = Tape::new();
    let l = tape.constant(Tensor::from_vec(logits.to_vec()));
    let v = loss_msg(&tape, l, m).unwrap();
    tape.value(v).item()
}

#[test]
fn message_loss_examples() {
    let m = Message::from_hex("0xB3A5").unwrap();
    assert!((msg_loss(&[0.0; 16], &m) - std::f64::consts::LN_2).abs() < 1e-12);
    let saturated: Vec<f64> = m.bits().iter().map(|&b| if b == 1 { 40.0 } else { -40.0 }).collect();
    assert!(msg_loss(&saturated, &m) < 1e-12);
    let tape = Tape::new();
    let l = tape.constant(Tensor::from_vec(vec![0.0; 8]));
    assert!(loss_msg(&tape, l, &m).is_err());
}

#[test]
fn consistency_loss_examples() {
    let tape = Tape::new();
    let base = Tensor::new(&[2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
    let shifted = Tensor::new(&[2, 3], base.data().iter().map(|v| v + 0.01).collect()).unwrap();
    let (g, gc) = (tape.leaf(shifted.clone()), tape.constant(base.clone()));
    let (r, rc) = (tape.leaf(base.clone()), tape.constant(base.clone()));
    let (l_gs, l_rgb) = loss_consistency(&tape, g, gc, r, rc).unwrap();
    assert!((tape.value(l_gs).item() - 1e-4).abs() < 1e-15);
    assert_eq!(tape.value(l_rgb).item(), 0.0);
    let tracked = tape.leaf(base);
    assert!(loss_consistency(&tape, g, tracked, r, rc).is_err());
}

#[test]
fn total_loss_arithmetic() {
    let tape = Tape::new();
    let c = |v: f64| tape.constant(Tensor::scalar(v));
    let cfg = TrainConfig::default();
    let t = total_loss(&tape, c(0.5), c(1e-4), c(1e-3), &cfg).unwrap();
    assert!((tape.value(t).item() - 0.9).abs() < 1e-12);
    let zero = TrainConfig { lambda_gs: 0.0, lambda_rgb: 0.0, ..cfg };
    let t = total_loss(&tape, c(0.5), c(1.0), c(1.0), &zero).unwrap();
    assert_eq!(tape.value(t).item(), 0.5);
}

#[test]
fn log_rows_and_composition() {
    let cfg = TrainConfig::default();
    let row = LossBreakdown { step: 3, l_msg: 0.5, l_gs: 1e-4, l_rgb: 1e-3, total: 0.9, bit_acc: 0.75 };
    assert!(row.composition_error(&cfg) < 1e-12);
    let csv = log_to_csv(&[row]);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "step,L_msg,L_gs,L_rgb,total,bit_acc");
    let fields: Vec<f64> = lines.next().unwrap().split(',').map(|f| f.parse().unwrap()).collect();
    assert_eq!(fields, vec![3.0, 0.5, 1e-4, 1e-3, 0.9, 0.75]);
}

#[test]
fn config_text_round_trip_and_errors() {
    let cfg = TrainConfig {
        lambda_gs: 500.0,
        steps: 12,
        seed: 9,
        sites: SiteSet { input: true, mid: false, out: true },
        target: DecodeTarget::Rendered,
        init: ModulationInit::AllZero,
        ..TrainConfig::default()
    };
    assert_eq!(TrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    assert_eq!(TrainConfig::from_text("").unwrap(), TrainConfig::default());
    assert!(TrainConfig::from_text("learning_rate=0.1").is_err());
    assert!(TrainConfig::from_text("lambda_gs=-1").is_err());
    assert!(TrainConfig::from_text("message_length=15").is_err());
    assert!(TrainConfig::from_text("steps=many").is_err());
    let d = TrainConfig::default();
    assert_eq!((d.lambda_gs, d.lambda_rgb, d.lr_modulation, d.lr_coefficients, d.batch_size), (1000.0, 300.0, 1e-4, 1e-3, 2));
    assert_eq!(TrainConfig { epochs: 2, ..d }.total_steps(5), 6);
}

#[test]
fn decode_targets_parse() {
    for t in DecodeTarget::ALL {
        assert_eq!(DecodeTarget::parse(t.name()).unwrap(), t);
    }
    assert!(DecodeTarget::parse("pixels").is_err());
    assert_eq!(DecodeTarget::RawSplat.channels(), 14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn message_loss_matches_oracle(logits in prop::collection::vec(-8.0f64..8.0, 16), word in 0u32..65536) {
        let m = Message::from_hex(&format!("0x{word:04X}")).unwrap();
        prop_assert!((msg_loss(&logits, &m) - bce_oracle(&logits, m.bits())).abs() <= 1e-10);
    }

    #[test]
    fn consistency_matches_loop_mse(a in prop::collection::vec(-1.0f64..1.0, 12), b in prop::collection::vec(-1.0f64..1.0, 12)) {
        let tape = Tape::new();
        let ta = tape.leaf(Tensor::from_vec(a.clone()));
        let tb = tape.constant(Tensor::from_vec(b.clone()));
        let (l, _) = loss_consistency(&tape, ta, tb, ta, tb).unwrap();
        let oracle = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / 12.0;
        prop_assert!((tape.value(l).item() - oracle).abs() <= 1e-12);
    }
}
