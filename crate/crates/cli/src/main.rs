use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use gseal_core::gaussians::{splat_to_cloud, ActivationSpec, GaussianCloud};
use gseal_core::nets::{HiddenCodec, HiddenDecoder, Message, ModulationSet, ToyUNet, UNetConfig};
use gseal_core::renderer::{Image, RenderConfig};
use gseal_core::robust::{bit_accuracy, robustness_table, run_robustness, AttackKind, AttackSpec};
use gseal_core::seal::{
    ablate_positions, ablation_table, codec_images, decoding_target_report, grid_search_weights, log_to_csv,
    modulation_for, pretrain_generator, pretrain_hidden, render_views, targets_table, train_seal, weights_table,
    DecodeTarget, GeneratorTrainConfig, HiddenTrainConfig, SealFrozen, SealSetup, SealSystem, TrainConfig,
};
use gseal_core::toolkit::{read_dataset, synth_dataset, write_dataset, CameraRig, Scene, INPUT_VIEWS};
use gseal_core::wavelet::ll;
use gseal_grad::{load_into, read_checkpoint, write_checkpoint, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "gseal", version, about = "In-generation watermarking for a toy Gaussian splat generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise a dataset of scenes and their rig views.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1024)]
        budget: usize,
    },
    /// Pretrain the watermark decoder (with a throwaway encoder).
    PretrainHidden {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 16)]
        bits: usize,
        #[arg(long)]
        out: PathBuf,
        /// Generator whose reconstructions join the training images.
        #[arg(long)]
        gen: Option<PathBuf>,
        #[arg(long, default_value = "rendered-dwt")]
        target: String,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit the generator to the dataset.
    PretrainGenerator {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the modulation set for one message; writes the checkpoint, its
    /// config (`<out>.config`) and the loss log (`<out>.csv`).
    TrainSeal {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        dec: PathBuf,
        #[arg(long)]
        message: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a (watermarked) splat file for one scene directory.
    Generate {
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        seal: Option<PathBuf>,
        #[arg(long)]
        message: Option<String>,
        /// Scene view directory, e.g. `DATA/scene_0000`.
        #[arg(long)]
        input: PathBuf,
        /// Rig file; defaults to `rig.txt` next to the scene directory.
        #[arg(long)]
        rig: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a splat file from every rig camera.
    Render {
        #[arg(long)]
        splat: PathBuf,
        #[arg(long)]
        rig: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a splat file; exit code 0 iff every bit matches.
    Verify {
        #[arg(long)]
        splat: PathBuf,
        #[arg(long)]
        dec: PathBuf,
        #[arg(long)]
        message: String,
        #[arg(long)]
        rig: Option<PathBuf>,
        #[arg(long, default_value = "rendered-dwt")]
        target: String,
    },
    /// Attack a splat file (3-D attacks) or an image (2-D attacks).
    Attack {
        #[arg(long, conflicts_with = "image", required_unless_present = "image")]
        splat: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long)]
        kind: String,
        #[arg(long)]
        param: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a report suite and write its CSV (and print the text table).
    Report {
        #[arg(long, value_parser = ["robustness", "positions", "weights", "targets"])]
        suite: String,
        #[arg(long)]
        data: PathBuf,
        /// Held-out dataset; defaults to the training data.
        #[arg(long)]
        held_out: Option<PathBuf>,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        dec: PathBuf,
        #[arg(long)]
        message: String,
        /// Trained modulation set (robustness suite).
        #[arg(long)]
        seal: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Decoder pretraining steps for the extra targets (targets suite).
        #[arg(long, default_value_t = 1000)]
        hidden_steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::SynthData { out, scenes, seed, budget } => {
            let rig = CameraRig::default();
            let data = synth_dataset(seed, scenes, budget, &rig)?;
            write_dataset(&out, &data, &rig)?;
            println!("wrote {scenes} scenes to {}", out.display());
        }
        Command::PretrainHidden { data, bits, out, gen, target, steps, seed } => {
            let target = DecodeTarget::parse(&target)?;
            let (rig, scenes) = read_dataset(&data)?;
            let gen = gen.map(|p| load_generator(&p, &rig)).transpose()?;
            let images = codec_images(target, &scenes, gen.as_ref(), &rig)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut codec = HiddenCodec::new(bits, target.channels(), Some(rig.size / 2), &mut rng);
            let log = pretrain_hidden(&images, &mut codec, &HiddenTrainConfig { steps, seed, ..Default::default() })?;
            save(&out, &codec.decoder.params())?;
            println!("decoder loss {:.4} -> {:.4}", log.first().unwrap_or(&f64::NAN), log.last().unwrap_or(&f64::NAN));
        }
        Command::PretrainGenerator { data, out, steps, seed } => {
            let (rig, scenes) = read_dataset(&data)?;
            let mut gen = new_generator(&rig, seed)?;
            let cfg = GeneratorTrainConfig { steps, seed, ..Default::default() };
            let log = pretrain_generator(&scenes, &mut gen, &rig, &cfg)?;
            save(&out, &gen.params())?;
            println!("generator loss {:.5} -> {:.5}", log.first().unwrap_or(&f64::NAN), log.last().unwrap_or(&f64::NAN));
        }
        Command::TrainSeal { data, gen, dec, message, config, out } => {
            let (rig, scenes) = read_dataset(&data)?;
            let message = Message::from_hex(&message)?;
            let cfg = read_config(config.as_deref())?;
            let gen = load_generator(&gen, &rig)?;
            let decoder = load_decoder(&dec, cfg.target, &rig)?;
            let mut mods = modulation_for(&gen, &cfg);
            let fz = SealFrozen::new(&gen, &decoder, &rig);
            let log = train_seal(&scenes, &fz, &mut mods, &message, &cfg)?;
            save(&out, &mods.params())?;
            fs::write(sidecar(&out, "config"), cfg.to_text())?;
            fs::write(sidecar(&out, "csv"), log_to_csv(&log))?;
            if let Some(last) = log.last() {
                println!("step {} total {:.6} bit_acc {:.4}", last.step, last.total, last.bit_acc);
            }
        }
        Command::Generate { gen, seal, message, input, rig, out } => {
            let rig = match rig {
                Some(p) => read_rig(&p)?,
                None => read_rig(&input.parent().unwrap_or(Path::new(".")).join("rig.txt"))?,
            };
            let gen = load_generator(&gen, &rig)?;
            let views = INPUT_VIEWS
                .iter()
                .map(|v| Ok(Image::read_gsimg(open(&input.join(format!("view_{v:02}.gsimg")))?)?))
                .collect::<Result<Vec<_>>>()?;
            let x = gseal_core::toolkit::stack_views(&views)?;
            let splat = match (message, seal) {
                (None, _) => gen.generate(&x, None)?,
                (Some(m), Some(seal)) => {
                    let message = Message::from_hex(&m)?;
                    let side = sidecar(&seal, "config");
                    let cfg = read_config(Some(side.as_path()).filter(|p| p.exists()))?;
                    let mods = load_mods(&seal, &gen, &cfg)?;
                    gen.generate(&x, Some((&mods, &message, cfg.sites)))?
                }
                (Some(_), None) => bail!("--message needs --seal"),
            };
            splat_to_cloud(&splat, &ActivationSpec::default()).write_gseal(fs::File::create(&out)?)?;
            println!("wrote {}", out.display());
        }
        Command::Render { splat, rig, out } => {
            let rig = rig.map(|p| read_rig(&p)).transpose()?.unwrap_or_default();
            let cloud = read_cloud(&splat)?;
            fs::create_dir_all(&out)?;
            for (i, img) in render_views(&cloud, &rig.cameras()?, &RenderConfig::default())?.iter().enumerate() {
                img.write_gsimg(fs::File::create(out.join(format!("view_{i:02}.gsimg")))?)?;
                img.write_png(&out.join(format!("view_{i:02}.png")))?;
            }
            println!("rendered {} views to {}", rig.count, out.display());
        }
        Command::Verify { splat, dec, message, rig, target } => {
            let target = DecodeTarget::parse(&target)?;
            if target == DecodeTarget::RawSplat {
                bail!("verify decodes rendered views; the raw-splat target needs the generator's tensor");
            }
            let rig = rig.map(|p| read_rig(&p)).transpose()?.unwrap_or_default();
            let message = Message::from_hex(&message)?;
            let decoder = load_decoder(&dec, target, &rig)?;
            if decoder.bits() != message.len() {
                bail!("decoder extracts {} bits but the message has {}", decoder.bits(), message.len());
            }
            let views = render_views(&read_cloud(&splat)?, &rig.cameras()?, &RenderConfig::default())?;
            let input = match target {
                DecodeTarget::Rendered => gseal_core::seal::batch_views(views)?,
                _ => gseal_core::seal::batch_views(views.iter().map(ll).collect::<gseal_core::Result<Vec<_>>>()?)?,
            };
            let decoded = Message::from_logits(&gseal_core::nets::decode_logits(&input, &decoder)?)?;
            let acc = bit_accuracy(decoded.bits(), message.bits())?;
            println!("bit_acc {acc:.4}");
            println!("decoded {}", decoded.to_hex());
            return Ok(if acc == 1.0 { ExitCode::SUCCESS } else { ExitCode::from(1) });
        }
        Command::Attack { splat, image, kind, param, seed, out } => {
            let kind = AttackKind::parse(&kind)?;
            let spec = AttackSpec::new(kind, param.unwrap_or(kind.default_param()), seed)?;
            match (splat, image) {
                (Some(p), _) => {
                    if !kind.is_3d() {
                        bail!("{kind} is an image attack; pass --image");
                    }
                    spec.apply_cloud(&read_cloud(&p)?)?.write_gseal(fs::File::create(&out)?)?;
                }
                (None, Some(p)) => {
                    if kind.is_3d() {
                        bail!("{kind} is a splat attack; pass --splat");
                    }
                    let img = if p.extension().is_some_and(|e| e == "png") {
                        Image::read_png(&p)?
                    } else {
                        Image::read_gsimg(open(&p)?)?
                    };
                    let attacked = spec.apply_image(&img)?;
                    if out.extension().is_some_and(|e| e == "png") {
                        attacked.write_png(&out)?;
                    } else {
                        attacked.write_gsimg(fs::File::create(&out)?)?;
                    }
                }
                (None, None) => bail!("pass --splat or --image"),
            }
            println!("wrote {}", out.display());
        }
        Command::Report { suite, data, held_out, gen, dec, message, seal, config, hidden_steps, out } => {
            let (rig, train) = read_dataset(&data)?;
            let held: Vec<Scene> = match held_out {
                Some(p) => read_dataset(&p)?.1,
                None => train.clone(),
            };
            let message = Message::from_hex(&message)?;
            let cfg = read_config(config.as_deref())?;
            let gen = load_generator(&gen, &rig)?;
            let decoder = load_decoder(&dec, cfg.target, &rig)?;
            let setup = SealSetup {
                train: &train,
                held_out: &held,
                generator: &gen,
                decoder: &decoder,
                rig: &rig,
                message: &message,
                base: &cfg,
            };
            let table = match suite.as_str() {
                "robustness" => {
                    let seal = seal.ok_or_else(|| anyhow!("the robustness suite needs --seal"))?;
                    let system = SealSystem {
                        generator: gen.clone(),
                        decoder: decoder.clone(),
                        mods: load_mods(&seal, &gen, &cfg)?,
                        message: message.clone(),
                        sites: cfg.sites,
                        target: cfg.target,
                        activation: ActivationSpec::default(),
                        render: RenderConfig::default(),
                    };
                    let attacks = AttackKind::ALL
                        .iter()
                        .map(|&k| AttackSpec::new(k, k.default_param(), cfg.seed))
                        .collect::<gseal_core::Result<Vec<_>>>()?;
                    robustness_table(&run_robustness(&system, &attacks, &held, &rig.cameras()?)?)
                }
                "positions" => ablation_table(&ablate_positions(&setup)?),
                "weights" => {
                    let grid = [(100.0, 30.0), (300.0, 100.0), (1000.0, 300.0), (3000.0, 1000.0)];
                    weights_table(&grid_search_weights(&setup, &grid)?)
                }
                _ => {
                    let mut decoders = Vec::new();
                    for t in DecodeTarget::ALL {
                        if t == cfg.target {
                            decoders.push((t, decoder.clone()));
                            continue;
                        }
                        let images = codec_images(t, &train, Some(&gen), &rig)?;
                        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                        let mut codec = HiddenCodec::new(message.len(), t.channels(), Some(rig.size / 2), &mut rng);
                        let hcfg = HiddenTrainConfig { steps: hidden_steps, seed: cfg.seed, ..Default::default() };
                        pretrain_hidden(&images, &mut codec, &hcfg)?;
                        decoders.push((t, codec.decoder));
                    }
                    let refs: Vec<(DecodeTarget, &HiddenDecoder)> = decoders.iter().map(|(t, d)| (*t, d)).collect();
                    targets_table(&decoding_target_report(&setup, &refs)?)
                }
            };
            fs::write(&out, table.to_csv())?;
            print!("{}", table.to_text());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn open(p: &Path) -> Result<fs::File> {
    fs::File::open(p).with_context(|| format!("cannot open {}", p.display()))
}

/// `<path>.<ext>`, appended rather than replacing any extension.
fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(format!(".{ext}"));
    PathBuf::from(s)
}

fn read_rig(p: &Path) -> Result<CameraRig> {
    Ok(CameraRig::from_text(&fs::read_to_string(p).with_context(|| format!("cannot read rig {}", p.display()))?)?)
}

fn read_cloud(p: &Path) -> Result<GaussianCloud> {
    Ok(GaussianCloud::read_gseal(open(p)?).with_context(|| format!("reading {}", p.display()))?)
}

fn read_config(p: Option<&Path>) -> Result<TrainConfig> {
    match p {
        Some(p) => Ok(TrainConfig::from_text(&fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?)?),
        None => Ok(TrainConfig::default()),
    }
}

fn save(path: &Path, params: &[&gseal_grad::Parameter]) -> Result<()> {
    write_checkpoint(fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?, params)?;
    Ok(())
}

fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    read_checkpoint(open(path)?).with_context(|| format!("reading checkpoint {}", path.display()))
}

fn new_generator(rig: &CameraRig, seed: u64) -> Result<ToyUNet> {
    let cams = rig.cameras()?;
    let input: Vec<_> = INPUT_VIEWS.iter().map(|&i| cams[i].clone()).collect();
    let config = UNetConfig { image_size: rig.size, ..UNetConfig::default() };
    Ok(ToyUNet::lifted(config, &input, &mut ChaCha8Rng::seed_from_u64(seed))?)
}

fn load_generator(path: &Path, rig: &CameraRig) -> Result<ToyUNet> {
    let mut gen = new_generator(rig, 0)?;
    load_into(&mut gen.params_mut(), &load(path)?)?;
    gen.set_frozen(true);
    Ok(gen)
}

fn load_decoder(path: &Path, target: DecodeTarget, rig: &CameraRig) -> Result<HiddenDecoder> {
    let entries = load(path)?;
    let bits = entries
        .iter()
        .find(|(n, _)| n == "dec.head.weight")
        .map(|(_, t)| t.shape()[1])
        .ok_or_else(|| anyhow!("{} is not a decoder checkpoint", path.display()))?;
    let mut dec = HiddenDecoder::new(bits, target.channels(), Some(rig.size / 2), &mut ChaCha8Rng::seed_from_u64(0));
    load_into(&mut dec.params_mut(), &entries).with_context(|| format!("{} does not fit the {target} decoder", path.display()))?;
    dec.set_frozen(true);
    Ok(dec)
}

fn load_mods(path: &Path, gen: &ToyUNet, cfg: &TrainConfig) -> Result<ModulationSet> {
    let mut mods = modulation_for(gen, cfg);
    load_into(&mut mods.params_mut(), &load(path)?)?;
    Ok(mods)
}
