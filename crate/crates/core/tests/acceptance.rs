//! Acceptance criteria 1 to 10. The fast criteria run with the normal test
//! suite; the end-to-end criteria (5 to 8) train full desk-scale systems and
//! take over an hour on one core:
//!
//! cargo test -p gseal-core --test acceptance -- --ignored --nocapture

mod common;

use std::time::Instant;

use common::{orbit_camera, random_cloud};
use gseal_core::gaussians::{Gaussian, GaussianCloud};
use gseal_core::nets::*;
use gseal_core::renderer::{project, render, render_backward, render_reference, Camera, Image, RenderConfig};
use gseal_core::robust::*;
use gseal_core::seal::*;
use gseal_core::toolkit::{synth_dataset, CameraRig, Scene, INPUT_VIEWS};
use gseal_core::wavelet::{dwt2, idwt2};
use gseal_grad::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdicts(Vec<(u32, bool)>);

impl Verdicts {
    fn record(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        println!("criterion {id:>2} {}: {name} ({detail})", if pass { "PASS" } else { "FAIL" });
        self.0.push((id, pass));
    }

    fn assert_all(&self) {
        let failed: Vec<u32> = self.0.iter().filter(|(_, p)| !p).map(|(i, _)| *i).collect();
        assert!(failed.is_empty(), "failed criteria: {failed:?}");
    }
}

fn renderer_equivalence() -> (bool, String) {
    let t = Instant::now();
    let (mut exact, mut fast) = (0.0f64, 0.0f64);
    for seed in 0..20u64 {
        let cloud = random_cloud(1000 + seed, 1 + (seed as usize * 13) % 32);
        let cam = orbit_camera(1000 + seed, 64);
        let reference = render_reference(&cloud, &cam).unwrap();
        exact = exact.max(render(&cloud, &cam, &RenderConfig::default().without_cutoffs()).unwrap().max_abs_diff(&reference));
        fast = fast.max(render(&cloud, &cam, &RenderConfig::default()).unwrap().max_abs_diff(&reference));
    }
    let secs = t.elapsed().as_secs_f64();
    (exact <= 1e-5 && fast <= 2e-3 && secs <= 60.0, format!("max diff {exact:.2e} exact, {fast:.2e} default, {secs:.1}s"))
}

fn mse(img: &Image, target: &Image) -> f64 {
    img.data.iter().zip(&target.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / img.data.len() as f64
}

fn rendering_gradients() -> (bool, String) {
    let t = Instant::now();
    let h = 1e-3;
    let cfg = RenderConfig::default();
    let cloud = random_cloud(77, 4);
    let cam = orbit_camera(77, 32);
    let target = Image::filled(32, 32, [0.3, 0.5, 0.1]);
    let img = render(&cloud, &cam, &cfg).unwrap();
    let n = img.data.len() as f64;
    let dl: Vec<f64> = img.data.iter().zip(&target.data).map(|(a, b)| 2.0 * (a - b) / n).collect();
    let g = render_backward(&cloud.gaussians, &cam, &cfg, &dl);
    let (mut checked, mut good) = (0, 0);
    for (i, gi) in g.iter().enumerate() {
        if project(&cloud.gaussians[i], i, &cam).is_none() {
            continue;
        }
        for (k, &analytic) in gi.iter().enumerate() {
            let at = |d: f64| {
                let mut c = cloud.clone();
                let mut p = c.gaussians[i].to_params();
                p[k] += d;
                c.gaussians[i] = Gaussian::from_params(&p);
                mse(&render(&c, &cam, &cfg).unwrap(), &target)
            };
            let num = (at(h) - at(-h)) / (2.0 * h);
            checked += 1;
            good += ((num - analytic).abs() / num.abs().max(analytic.abs()).max(1e-6) <= 1e-2) as usize;
        }
    }
    let frac = good as f64 / checked as f64;
    let secs = t.elapsed().as_secs_f64();
    (frac >= 0.95 && secs <= 120.0, format!("{good}/{checked} coordinates within 1e-2, {secs:.1}s"))
}

fn dwt_reconstruction() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (h, w) = (2 * rng.random_range(1..33), 2 * rng.random_range(1..33));
        let img = Image::new(h, w, (0..3 * h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        worst = worst.max(idwt2(&dwt2(&img).unwrap()).unwrap().max_abs_diff(&img));
    }
    let flat = Image::filled(16, 16, [0.25, 0.5, 0.75]);
    let s = dwt2(&flat).unwrap();
    let constant = s.ll_image() == Image::filled(8, 8, [0.25, 0.5, 0.75]) && s.lh.iter().chain(&s.hl).chain(&s.hh).all(|&v| v == 0.0);
    (worst <= 1e-6 && constant, format!("max reconstruction error {worst:.1e}, constant image exact: {constant}"))
}

fn small_rig() -> CameraRig {
    CameraRig { size: 16, focal: 16.0, ..CameraRig::default() }
}

fn small_generator(rig: &CameraRig) -> ToyUNet {
    let cams = rig.cameras().unwrap();
    let input: Vec<Camera> = INPUT_VIEWS.iter().map(|&i| cams[i].clone()).collect();
    let cfg = UNetConfig { views: 4, widths: vec![8, 16], splat_size: 16, image_size: 16 };
    let mut g = ToyUNet::lifted(cfg, &input, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    g.set_frozen(true);
    g
}

fn small_decoder() -> HiddenDecoder {
    let mut d = HiddenDecoder::new(16, 3, Some(8), &mut ChaCha8Rng::seed_from_u64(6));
    d.set_frozen(true);
    d
}

fn identity_at_init(gen: &ToyUNet, dec: &HiddenDecoder, rig: &CameraRig, scenes: &[Scene]) -> (bool, String) {
    let m = Message::from_hex("0xB3A5").unwrap();
    let mut identical = true;
    for s in scenes {
        let x = s.input_tensor(&INPUT_VIEWS).unwrap();
        let clean = gen.generate(&x, None).unwrap();
        for init in [ModulationInit::AllZero, ModulationInit::ZeroOutput] {
            let cfg = TrainConfig { init, ..TrainConfig::default() };
            let mut mods = modulation_for(gen, &cfg);
            for sites in SiteSet::subsets() {
                identical &= gen.generate(&x, Some((&mods, &m, sites))).unwrap() == clean;
            }
            for p in mods.coeff_params_mut() {
                *p.value_mut() = Tensor::from_vec(vec![0.0]);
            }
            identical &= gen.generate(&x, Some((&mods, &m, SiteSet::ALL))).unwrap() == clean;
        }
    }
    let cfg = TrainConfig::default();
    let mods = modulation_for(gen, &cfg);
    let fz = SealFrozen::new(gen, dec, rig);
    let inputs: Vec<Tensor> = scenes.iter().map(|s| s.input_tensor(&INPUT_VIEWS).unwrap()).collect();
    let cams = rig.cameras().unwrap();
    let (row, _) = loss_gradients(&fz, &mods, &m, &inputs.iter().collect::<Vec<_>>(), &cams[..2], &cfg).unwrap();
    let zero = row.l_gs == 0.0 && row.l_rgb == 0.0;
    (identical && zero, format!("bitwise identical: {identical}, step-0 L_gs {} L_rgb {}", row.l_gs, row.l_rgb))
}

fn attacks_and_metrics() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = Image::new(32, 32, (0..3 * 1024).map(|_| rng.random_range(0.1..0.9)).collect()).unwrap();
    let b = Image { data: a.data.iter().map(|v| v + 1.0 / 255.0).collect(), ..a.clone() };
    let p = psnr(&a, &b).unwrap();
    let s = ssim(&a, &a).unwrap();
    let cloud = random_cloud(9, 40);
    let bytes = |i: &Image| i.data.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>();
    let mut deterministic = true;
    for k in AttackKind::ALL {
        let spec = AttackSpec::new(k, k.default_param(), 17).unwrap();
        deterministic &= bytes(&spec.apply_image(&a).unwrap()) == bytes(&spec.apply_image(&a).unwrap());
        let (c1, c2): (GaussianCloud, GaussianCloud) = (spec.apply_cloud(&cloud).unwrap(), spec.apply_cloud(&cloud).unwrap());
        deterministic &= c1 == c2;
    }
    let pass = (p - 48.13).abs() <= 0.01 && (s - 1.0).abs() <= 1e-9 && deterministic;
    (pass, format!("psnr {p:.4} dB, ssim(x,x) {s:.12}, byte-identical attacks: {deterministic}"))
}

fn composition(log: &[LossBreakdown], cfg: &TrainConfig) -> (bool, String) {
    let worst = log.iter().map(|r| r.composition_error(cfg)).fold(0.0, f64::max);
    (!log.is_empty() && worst <= 1e-9, format!("{} steps, max |total - sum| {worst:.1e}", log.len()))
}

#[test]
fn fast_criteria() {
    let mut v = Verdicts(Vec::new());
    let (p, d) = renderer_equivalence();
    v.record(1, "renderer oracle equivalence", p, d);
    let (p, d) = rendering_gradients();
    v.record(2, "rendering gradients vs central differences", p, d);
    let (p, d) = dwt_reconstruction();
    v.record(3, "DWT reconstruction and constant image", p, d);
    let rig = small_rig();
    let scenes = synth_dataset(4, 3, 64, &rig).unwrap();
    let (gen, dec) = (small_generator(&rig), small_decoder());
    let (p, d) = identity_at_init(&gen, &dec, &rig, &scenes);
    v.record(4, "identity at initialisation", p, d);
    let (p, d) = attacks_and_metrics();
    v.record(9, "attack determinism and metrics", p, d);
    let cfg = TrainConfig { steps: 6, views_per_step: 2, ..TrainConfig::default() };
    let mut mods = modulation_for(&gen, &cfg);
    let log = train_seal(&scenes, &SealFrozen::new(&gen, &dec, &rig), &mut mods, &Message::from_hex("0xB3A5").unwrap(), &cfg).unwrap();
    let (p, d) = composition(&log, &cfg);
    v.record(10, "loss composition identity", p, d);
    v.assert_all();
}

/// Desk-scale fixtures: datasets, the pretrained generator and the
/// rendered+DWT decoder.
struct Desk {
    rig: CameraRig,
    train: Vec<Scene>,
    held: Vec<Scene>,
    gen: ToyUNet,
    decoder: HiddenDecoder,
}

fn pretrain_decoder(target: DecodeTarget, train: &[Scene], gen: &ToyUNet, rig: &CameraRig) -> HiddenDecoder {
    let images = codec_images(target, train, Some(gen), rig).unwrap();
    let mut codec = HiddenCodec::new(16, target.channels(), Some(rig.size / 2), &mut ChaCha8Rng::seed_from_u64(11));
    pretrain_hidden(&images, &mut codec, &HiddenTrainConfig::default()).unwrap();
    codec.decoder
}

fn desk() -> Desk {
    let t = Instant::now();
    let rig = CameraRig::default();
    let train = synth_dataset(1, 64, 1024, &rig).unwrap();
    let held = synth_dataset(2, 16, 1024, &rig).unwrap();
    let cams = rig.cameras().unwrap();
    let input: Vec<Camera> = INPUT_VIEWS.iter().map(|&i| cams[i].clone()).collect();
    let mut gen = ToyUNet::lifted(UNetConfig::default(), &input, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    pretrain_generator(&train, &mut gen, &rig, &GeneratorTrainConfig::default()).unwrap();
    gen.set_frozen(true);
    println!(
        "fixture: generator held-out reconstruction {:.2} dB (all-background {:.2} dB), {:.0}s",
        reconstruction_psnr(&gen, &held, &rig).unwrap(),
        background_psnr(&held).unwrap(),
        t.elapsed().as_secs_f64()
    );
    let t = Instant::now();
    let decoder = pretrain_decoder(DecodeTarget::RenderedDwt, &train, &gen, &rig);
    println!("fixture: decoder pretrained in {:.0}s", t.elapsed().as_secs_f64());
    Desk { rig, train, held, gen, decoder }
}

fn setup<'a>(d: &'a Desk, decoder: &'a HiddenDecoder, message: &'a Message, base: &'a TrainConfig) -> SealSetup<'a> {
    SealSetup { train: &d.train, held_out: &d.held, generator: &d.gen, decoder, rig: &d.rig, message, base }
}

/// Step budget of each run in the decoding-target and position harnesses.
const HARNESS_STEPS: usize = 300;

#[test]
#[ignore = "trains desk-scale systems; over an hour on one core"]
fn end_to_end_criteria() {
    let d = desk();
    let cams = d.rig.cameras().unwrap();
    let message = Message::from_hex("0xB3A5").unwrap();
    let mut v = Verdicts(Vec::new());

    let mut first = None;
    let mut runs = Vec::new();
    for seed in [0u64, 1] {
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        let t = Instant::now();
        let (system, log) = train_system(&setup(&d, &d.decoder, &message, &cfg), &d.decoder, &cfg).unwrap();
        let minutes = t.elapsed().as_secs_f64() / 60.0;
        let e = system.evaluate(&d.held, &cams).unwrap();
        let (comp, _) = composition(&log, &cfg);
        println!(
            "seed {seed}: held-out bit accuracy {:.4}, psnr {:.2} dB, ssim {:.4}, {minutes:.1} min, step-0 L_gs {}",
            e.bit_acc, e.psnr, e.ssim, log[0].l_gs
        );
        runs.push((e.bit_acc >= 0.90 && e.psnr >= 28.0 && minutes <= 30.0, comp, e, minutes));
        if first.is_none() {
            first = Some(system);
        }
    }
    let pass5 = runs.iter().all(|r| r.0);
    let detail = runs
        .iter()
        .enumerate()
        .map(|(i, r)| format!("seed {i}: acc {:.4} psnr {:.2} dB {:.1} min", r.2.bit_acc, r.2.psnr, r.3))
        .collect::<Vec<_>>()
        .join("; ");
    v.record(5, "desk-scale end to end", pass5, detail);

    let system = first.unwrap();
    let attacks: Vec<AttackSpec> = [0.05, 0.25].iter().map(|&r| AttackSpec::new(AttackKind::Prune, r, 0).unwrap()).collect();
    let rows = run_robustness(&system, &attacks, &d.held, &cams).unwrap();
    let (a5, a25) = (rows[1].bit_accuracy, rows[2].bit_accuracy);
    print!("{}", robustness_table(&rows).to_text());
    v.record(6, "pruning trend", a5 >= a25 && a25 >= 0.70, format!("5%: {a5:.4}, 25%: {a25:.4}"));

    let base = TrainConfig { steps: HARNESS_STEPS, ..TrainConfig::default() };
    let raw = pretrain_decoder(DecodeTarget::RawSplat, &d.train, &d.gen, &d.rig);
    let rendered = pretrain_decoder(DecodeTarget::Rendered, &d.train, &d.gen, &d.rig);
    let decoders = [(DecodeTarget::RawSplat, &raw), (DecodeTarget::Rendered, &rendered), (DecodeTarget::RenderedDwt, &d.decoder)];
    let rows = decoding_target_report(&setup(&d, &d.decoder, &message, &base), &decoders).unwrap();
    let table = targets_table(&rows);
    print!("{}", table.to_text());
    let acc = |t: DecodeTarget| rows.iter().find(|r| r.target == t).unwrap().bit_acc;
    let (dwt, plain) = (acc(DecodeTarget::RenderedDwt), acc(DecodeTarget::Rendered));
    let schema = table.to_csv().lines().next() == Some("target,psnr,ssim,bit_acc") && rows.len() == 3;
    v.record(7, "decoding-target trend", dwt >= plain - 0.02 && schema, format!("rendered+DWT {dwt:.4}, rendered {plain:.4}, {HARNESS_STEPS} steps each"));

    let rows = ablate_positions(&setup(&d, &d.decoder, &message, &base)).unwrap();
    print!("{}", ablation_table(&rows).to_text());
    let none = &rows[0];
    let all = rows.iter().find(|r| r.sites == SiteSet::ALL).unwrap();
    let best_single = rows.iter().filter(|r| r.sites.count() == 1).map(|r| r.bit_acc).fold(0.0, f64::max);
    let pass8 = rows.len() == 8 && none.psnr.is_infinite() && (none.bit_acc - 0.5).abs() <= 0.1 && all.bit_acc >= best_single - 0.02;
    v.record(
        8,
        "position-ablation harness",
        pass8,
        format!("no-site psnr {} acc {:.4}; all sites {:.4}, best single {best_single:.4}", none.psnr, none.bit_acc, all.bit_acc),
    );

    let (p10, d10) = {
        let cfg = TrainConfig::default();
        let mods = modulation_for(&d.gen, &cfg);
        let fz = SealFrozen::new(&d.gen, &d.decoder, &d.rig);
        let x = d.train[0].input_tensor(&INPUT_VIEWS).unwrap();
        let (row, _) = loss_gradients(&fz, &mods, &message, &[&x], &cams, &cfg).unwrap();
        let (comp, detail) = composition(&[row], &cfg);
        (comp && runs.iter().all(|r| r.1), format!("desk-scale logs of both seeds and a fresh step; {detail}"))
    };
    v.record(10, "loss composition identity (desk scale)", p10, d10);
    v.assert_all();
}
