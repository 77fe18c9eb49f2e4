//! Synthetic multi-view scenes, camera rigs, and report formatting.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use gseal_grad::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gaussians::{grid_direction, Gaussian, GaussianCloud};
use crate::math::Vec3;
use crate::renderer::{render_reference, Camera, Image};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PrimitiveKind {
    SphereShell,
    Box,
    TwoBlob,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 3] = [PrimitiveKind::SphereShell, PrimitiveKind::Box, PrimitiveKind::TwoBlob];

    pub fn name(&self) -> &'static str {
        match self {
            PrimitiveKind::SphereShell => "sphere-shell",
            PrimitiveKind::Box => "box",
            PrimitiveKind::TwoBlob => "two-blob",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown primitive {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SceneSpec {
    pub kind: PrimitiveKind,
    pub budget: usize,
    pub palette_seed: u64,
    pub pose_seed: u64,
}

pub const MIN_BUDGET: usize = 64;
pub const MAX_BUDGET: usize = 4096;

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(MIN_BUDGET..=MAX_BUDGET).contains(&self.budget) {
            return Err(Error::Validation(format!(
                "Gaussian budget {} outside [{MIN_BUDGET}, {MAX_BUDGET}]",
                self.budget
            )));
        }
        Ok(())
    }

    /// Spec of scene `index` in a dataset drawn from `seed`.
    pub fn nth(seed: u64, index: usize, budget: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index as u64);
        SceneSpec {
            kind: PrimitiveKind::ALL[index % 3],
            budget,
            palette_seed: rng.random(),
            pose_seed: rng.random(),
        }
    }
}

/// Ring of cameras around the origin, all looking at it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraRig {
    pub count: usize,
    pub radius: f64,
    /// Elevation range in radians.
    pub elevation: (f64, f64),
    /// Azimuth jitter as a fraction of the ring spacing.
    pub jitter: f64,
    pub focal: f64,
    pub size: usize,
    pub seed: u64,
}

impl Default for CameraRig {
    fn default() -> Self {
        CameraRig {
            count: 8,
            radius: 2.6,
            elevation: (-0.3, 0.3),
            jitter: 0.15,
            focal: 64.0,
            size: 64,
            seed: 7,
        }
    }
}

impl CameraRig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || !(self.radius > crate::renderer::DEFAULT_NEAR) || self.elevation.0 > self.elevation.1 {
            return Err(Error::Validation(format!("invalid camera rig {self:?}")));
        }
        if self.elevation.0.abs() >= PI / 2.0 || self.elevation.1.abs() >= PI / 2.0 {
            return Err(Error::Validation("rig elevation must stay below the poles".into()));
        }
        Ok(())
    }

    /// Evenly spaced ring with seeded azimuth jitter and elevations.
    pub fn cameras(&self) -> Result<Vec<Camera>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let step = TAU / self.count as f64;
        (0..self.count)
            .map(|i| {
                let az = i as f64 * step + self.jitter * step * rng.random_range(-0.5..0.5);
                let el = if self.elevation.0 == self.elevation.1 {
                    self.elevation.0
                } else {
                    rng.random_range(self.elevation.0..self.elevation.1)
                };
                self.camera_at(az, el)
            })
            .collect()
    }

    /// Evenly spaced ring at zero elevation, no jitter.
    pub fn even_cameras(&self, count: usize) -> Result<Vec<Camera>> {
        (0..count).map(|i| self.camera_at(i as f64 * TAU / count as f64, 0.0)).collect()
    }

    pub fn camera_at(&self, azimuth: f64, elevation: f64) -> Result<Camera> {
        let eye = [
            self.radius * elevation.cos() * azimuth.sin(),
            self.radius * elevation.sin(),
            self.radius * elevation.cos() * azimuth.cos(),
        ];
        Camera::look_at(eye, [0.0; 3], self.focal, self.size, self.size)
    }

    /// `key=value` text form.
    pub fn to_text(&self) -> String {
        format!(
            "count={}\nradius={}\nelevation_min={}\nelevation_max={}\njitter={}\nfocal={}\nsize={}\nseed={}\n",
            self.count, self.radius, self.elevation.0, self.elevation.1, self.jitter, self.focal, self.size, self.seed
        )
    }

    pub fn from_text(s: &str) -> Result<Self> {
        let mut rig = CameraRig::default();
        for (key, value) in parse_key_values(s)? {
            let num = || value.parse::<f64>().map_err(|_| Error::Config(format!("bad number for {key}: {value:?}")));
            let int = || value.parse::<u64>().map_err(|_| Error::Config(format!("bad integer for {key}: {value:?}")));
            match key.as_str() {
                "count" => rig.count = int()? as usize,
                "radius" => rig.radius = num()?,
                "elevation_min" => rig.elevation.0 = num()?,
                "elevation_max" => rig.elevation.1 = num()?,
                "jitter" => rig.jitter = num()?,
                "focal" => rig.focal = num()?,
                "size" => rig.size = int()? as usize,
                "seed" => rig.seed = int()?,
                _ => return Err(Error::Config(format!("unknown rig key {key:?}"))),
            }
        }
        rig.validate()?;
        Ok(rig)
    }
}

/// Parses UTF-8 `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(s: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in s.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Ground-truth cloud and the rig's views of it.
#[derive(Clone, Debug)]
pub struct Scene {
    pub spec: SceneSpec,
    pub cloud: GaussianCloud,
    pub views: Vec<Image>,
}

/// Views fed to the generator, by rig index.
pub const INPUT_VIEWS: [usize; 4] = [0, 2, 4, 6];

impl Scene {
    /// Generator input: the selected views stacked to `[3V, H, W]`.
    pub fn input_tensor(&self, views: &[usize]) -> Result<Tensor> {
        stack_views(views.iter().map(|&i| &self.views[i]))
    }
}

pub fn stack_views<'a>(views: impl IntoIterator<Item = &'a Image>) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut hw = None;
    let mut n = 0;
    for v in views {
        if *hw.get_or_insert((v.height, v.width)) != (v.height, v.width) {
            return Err(Error::Validation("views differ in size".into()));
        }
        data.extend_from_slice(&v.data);
        n += 1;
    }
    let (h, w) = hw.ok_or_else(|| Error::Validation("no views to stack".into()))?;
    Ok(Tensor::new(&[3 * n, h, w], data)?)
}

struct Pose {
    center: Vec3,
    size: f64,
    yaw: f64,
    tilt: f64,
}

struct Palette {
    a: Vec3,
    b: Vec3,
    axis: Vec3,
    freq: f64,
    phase: f64,
}

impl Palette {
    fn color(&self, dir: &Vec3) -> Vec3 {
        let s = dir[0] * self.axis[0] + dir[1] * self.axis[1] + dir[2] * self.axis[2];
        let t = 0.5 + 0.5 * (self.freq * s + self.phase).sin();
        std::array::from_fn(|k| (self.a[k] * (1.0 - t) + self.b[k] * t).clamp(0.03, 0.97))
    }
}

fn unit_vector(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v: Vec3 = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.2 && n <= 1.0 {
            return v.map(|x| x / n);
        }
    }
}

/// Surface parameterisation: rows sweep polar angle, columns azimuth. Square
/// budgets use a full lat-long grid; other budgets a Fibonacci spiral.
fn directions(n: usize) -> Vec<(Vec3, usize, usize)> {
    let side = (n as f64).sqrt().round() as usize;
    if side * side == n {
        let mut out = Vec::with_capacity(n);
        for r in 0..side {
            for c in 0..side {
                out.push((grid_direction(r, c, side), c, side));
            }
        }
        out
    } else {
        let golden = PI * (3.0 - 5f64.sqrt());
        (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - y * y).sqrt();
                let phi = golden * i as f64;
                ([r * phi.cos(), y, r * phi.sin()], i, n)
            })
            .collect()
    }
}

fn rotate(p: &Vec3, yaw: f64, tilt: f64) -> Vec3 {
    let (sy, cy) = yaw.sin_cos();
    let q = [cy * p[0] + sy * p[2], p[1], -sy * p[0] + cy * p[2]];
    let (st, ct) = tilt.sin_cos();
    [q[0], ct * q[1] - st * q[2], st * q[1] + ct * q[2]]
}

/// Procedural ground-truth cloud for a spec.
pub fn synth_cloud(spec: &SceneSpec) -> Result<GaussianCloud> {
    spec.validate()?;
    let mut pr = ChaCha8Rng::seed_from_u64(spec.pose_seed);
    let pose = Pose {
        center: std::array::from_fn(|_| pr.random_range(-0.06..0.06)),
        size: pr.random_range(0.45..0.55),
        yaw: pr.random_range(0.0..TAU),
        tilt: pr.random_range(-0.2..0.2),
    };
    let mut cr = ChaCha8Rng::seed_from_u64(spec.palette_seed);
    let palette = Palette {
        a: std::array::from_fn(|_| cr.random_range(0.05..0.95)),
        b: std::array::from_fn(|_| cr.random_range(0.05..0.95)),
        axis: unit_vector(&mut cr),
        freq: cr.random_range(1.0..2.0),
        phase: cr.random_range(0.0..TAU),
    };
    let dirs = directions(spec.budget);
    let spacing = pose.size * (4.0 * PI / spec.budget as f64).sqrt();
    let gaussians = dirs
        .iter()
        .map(|(d, col, cols)| {
            let (local, scale) = match spec.kind {
                PrimitiveKind::SphereShell => (d.map(|v| v * pose.size), spacing * 0.7),
                PrimitiveKind::Box => {
                    let m = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                    (d.map(|v| v / m * pose.size * 0.8), spacing * 0.8)
                }
                PrimitiveKind::TwoBlob => {
                    let first = 2 * col < *cols;
                    let (r, shift) = if first { (0.62, -0.45) } else { (0.5, 0.5) };
                    let p = d.map(|v| v * pose.size * r);
                    ([p[0] + shift * pose.size, p[1], p[2]], spacing * 0.55)
                }
            };
            let p = rotate(&local, pose.yaw, pose.tilt);
            Gaussian {
                position: std::array::from_fn(|k| (p[k] + pose.center[k]).clamp(-0.95, 0.95)),
                rotation: [1.0, 0.0, 0.0, 0.0],
                scale: [scale.clamp(0.01, 0.25); 3],
                opacity: 0.85,
                color: palette.color(d),
            }
        })
        .collect();
    Ok(GaussianCloud::new(gaussians))
}

/// Ground-truth cloud and its reference-rendered views.
pub fn synth_scene(spec: &SceneSpec, rig: &CameraRig) -> Result<Scene> {
    let cloud = synth_cloud(spec)?;
    let views = rig
        .cameras()?
        .iter()
        .map(|cam| render_reference(&cloud, cam))
        .collect::<Result<Vec<_>>>()?;
    Ok(Scene { spec: *spec, cloud, views })
}

/// `count` scenes of a dataset drawn from `seed`.
pub fn synth_dataset(seed: u64, count: usize, budget: usize, rig: &CameraRig) -> Result<Vec<Scene>> {
    (0..count).map(|i| synth_scene(&SceneSpec::nth(seed, i, budget), rig)).collect()
}

/// Writes a dataset directory: `rig.txt`, `scenes.txt` (one spec per
/// line), and per scene `scene_NNNN.gseal` plus its views as GSIMG1 and PNG
/// under `scene_NNNN/`.
pub fn write_dataset(dir: &Path, scenes: &[Scene], rig: &CameraRig) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("rig.txt"), rig.to_text())?;
    let mut specs = String::new();
    for (i, s) in scenes.iter().enumerate() {
        let _ = writeln!(specs, "{} {} {} {}", s.spec.kind.name(), s.spec.budget, s.spec.palette_seed, s.spec.pose_seed);
        s.cloud.write_gseal(fs::File::create(dir.join(format!("scene_{i:04}.gseal")))?)?;
        let vdir = dir.join(format!("scene_{i:04}"));
        fs::create_dir_all(&vdir)?;
        for (v, img) in s.views.iter().enumerate() {
            img.write_gsimg(fs::File::create(vdir.join(format!("view_{v:02}.gsimg")))?)?;
            img.write_png(&vdir.join(format!("view_{v:02}.png")))?;
        }
    }
    fs::write(dir.join("scenes.txt"), specs)?;
    Ok(())
}

/// Reads a directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<(CameraRig, Vec<Scene>)> {
    let rig = CameraRig::from_text(&fs::read_to_string(dir.join("rig.txt"))?)?;
    let specs = fs::read_to_string(dir.join("scenes.txt"))?;
    let mut scenes = Vec::new();
    for (i, line) in specs.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Format(format!("scenes.txt line {}: {line:?}", i + 1));
        if f.len() != 4 {
            return Err(bad());
        }
        let spec = SceneSpec {
            kind: PrimitiveKind::parse(f[0])?,
            budget: f[1].parse().map_err(|_| bad())?,
            palette_seed: f[2].parse().map_err(|_| bad())?,
            pose_seed: f[3].parse().map_err(|_| bad())?,
        };
        let cloud = GaussianCloud::read_gseal(fs::File::open(dir.join(format!("scene_{i:04}.gseal")))?)?;
        let vdir = dir.join(format!("scene_{i:04}"));
        let views = (0..rig.count)
            .map(|v| Image::read_gsimg(fs::File::open(vdir.join(format!("view_{v:02}.gsimg")))?))
            .collect::<Result<Vec<_>>>()?;
        scenes.push(Scene { spec, cloud, views });
    }
    if scenes.is_empty() {
        return Err(Error::Format(format!("{} holds no scenes", dir.display())));
    }
    Ok((rig, scenes))
}

/// `0.9793` → `97.93%`.
pub fn format_percent(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

/// Four decimals; infinity prints as `inf`.
pub fn format_metric(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

/// A report table: CSV text plus an aligned plain-text rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let mut s = String::new();
        let line = |s: &mut String, cells: &[String]| {
            let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            let _ = writeln!(s, "{}", parts.join("  ").trim_end());
        };
        line(&mut s, &self.header);
        for r in &self.rows {
            line(&mut s, r);
        }
        s
    }
}
