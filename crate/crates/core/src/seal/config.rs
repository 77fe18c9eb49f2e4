use std::fmt;

use crate::error::{Error, Result};
use crate::nets::{ModulationInit, SiteSet};
use crate::toolkit::parse_key_values;

/// What the frozen decoder reads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum DecodeTarget {
    /// The raw `14×S×S` splat tensor as a 14-channel image.
    RawSplat,
    /// Full-resolution rendered views.
    Rendered,
    /// LL subband of the rendered views.
    #[default]
    RenderedDwt,
}

impl DecodeTarget {
    pub const ALL: [DecodeTarget; 3] = [DecodeTarget::RawSplat, DecodeTarget::Rendered, DecodeTarget::RenderedDwt];

    pub fn name(&self) -> &'static str {
        match self {
            DecodeTarget::RawSplat => "raw-splat",
            DecodeTarget::Rendered => "rendered",
            DecodeTarget::RenderedDwt => "rendered-dwt",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        DecodeTarget::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown decoding target {s:?}")))
    }

    pub fn channels(&self) -> usize {
        match self {
            DecodeTarget::RawSplat => crate::gaussians::PARAMS_PER_GAUSSIAN,
            _ => 3,
        }
    }
}

impl fmt::Display for DecodeTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_init(v: &str) -> Result<ModulationInit> {
    match v {
        "all-zero" => Ok(ModulationInit::AllZero),
        "zero-output" => Ok(ModulationInit::ZeroOutput),
        _ => Err(Error::Config(format!("unknown modulation init {v:?}"))),
    }
}

pub fn init_name(init: ModulationInit) -> &'static str {
    match init {
        ModulationInit::AllZero => "all-zero",
        ModulationInit::ZeroOutput => "zero-output",
    }
}

/// Watermark training hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda_gs: f64,
    pub lambda_rgb: f64,
    pub lr_modulation: f64,
    pub lr_coefficients: f64,
    pub batch_size: usize,
    /// Passes over the dataset; when nonzero it overrides `steps`.
    pub epochs: usize,
    pub steps: usize,
    pub message_length: usize,
    pub views_per_step: usize,
    pub seed: u64,
    pub sites: SiteSet,
    pub target: DecodeTarget,
    pub init: ModulationInit,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_gs: 1000.0,
            lambda_rgb: 300.0,
            lr_modulation: 1e-4,
            lr_coefficients: 1e-3,
            batch_size: 2,
            epochs: 0,
            steps: 2000,
            message_length: 16,
            views_per_step: 8,
            seed: 0,
            sites: SiteSet::ALL,
            target: DecodeTarget::RenderedDwt,
            init: ModulationInit::ZeroOutput,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda_gs >= 0.0 && self.lambda_rgb >= 0.0) {
            return bad(format!("loss weights must be non-negative, got {} and {}", self.lambda_gs, self.lambda_rgb));
        }
        if !(self.lr_modulation > 0.0 && self.lr_coefficients > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.batch_size == 0 || self.views_per_step == 0 {
            return bad("batch_size and views_per_step must be positive".into());
        }
        if self.message_length == 0 || self.message_length % 4 != 0 || self.message_length > 64 {
            return bad(format!("message_length {} must be a positive multiple of 4 up to 64", self.message_length));
        }
        Ok(())
    }

    /// Optimisation steps for a dataset of `n` scenes.
    pub fn total_steps(&self, n: usize) -> usize {
        if self.epochs > 0 {
            self.epochs * n.div_ceil(self.batch_size)
        } else {
            self.steps
        }
    }

    /// Parses `key=value` lines over the defaults; unknown keys are errors.
    pub fn from_text(s: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        for (k, v) in parse_key_values(s)? {
            match k.as_str() {
                "lambda_gs" => c.lambda_gs = parse_num(&k, &v)?,
                "lambda_rgb" => c.lambda_rgb = parse_num(&k, &v)?,
                "lr_modulation" => c.lr_modulation = parse_num(&k, &v)?,
                "lr_coefficients" => c.lr_coefficients = parse_num(&k, &v)?,
                "batch_size" => c.batch_size = parse_num(&k, &v)?,
                "epochs" => c.epochs = parse_num(&k, &v)?,
                "steps" => c.steps = parse_num(&k, &v)?,
                "message_length" => c.message_length = parse_num(&k, &v)?,
                "views_per_step" => c.views_per_step = parse_num(&k, &v)?,
                "seed" => c.seed = parse_num(&k, &v)?,
                "sites" => c.sites = SiteSet::parse(&v)?,
                "target" => c.target = DecodeTarget::parse(&v)?,
                "init" => c.init = parse_init(&v)?,
                _ => return Err(Error::Config(format!("unknown config key {k:?}"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        format!(
            "lambda_gs={}\nlambda_rgb={}\nlr_modulation={}\nlr_coefficients={}\nbatch_size={}\nepochs={}\nsteps={}\n\
             message_length={}\nviews_per_step={}\nseed={}\nsites={}\ntarget={}\ninit={}\n",
            self.lambda_gs,
            self.lambda_rgb,
            self.lr_modulation,
            self.lr_coefficients,
            self.batch_size,
            self.epochs,
            self.steps,
            self.message_length,
            self.views_per_step,
            self.seed,
            self.sites.label(),
            self.target,
            init_name(self.init),
        )
    }
}

/// Generator pretraining hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Ground-truth views compared per scene and step.
    pub views_per_step: usize,
    /// Weight of the splat-tensor MSE next to the render MSE.
    pub lambda_splat: f64,
    /// Randomly permute the colour channels of each sample.
    pub permute_colors: bool,
    pub seed: u64,
}

impl Default for GeneratorTrainConfig {
    fn default() -> Self {
        GeneratorTrainConfig {
            steps: 2000,
            batch_size: 2,
            lr: 1e-3,
            views_per_step: 4,
            lambda_splat: 0.01,
            permute_colors: true,
            seed: 0,
        }
    }
}

/// Decoder pretraining hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for HiddenTrainConfig {
    fn default() -> Self {
        HiddenTrainConfig {
            steps: 1000,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
        }
    }
}
