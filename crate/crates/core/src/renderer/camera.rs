use crate::error::{Error, Result};
use crate::math::{cross, det3, mat3_mul, mat3_vec, normalize, sub, transpose3, Mat3, Vec3};

/// Pinhole camera, OpenCV axes: x right, y down, z forward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    /// World-to-camera rotation block of the view matrix.
    pub rotation: Mat3,
    pub translation: Vec3,
    pub focal: f64,
    pub width: usize,
    pub height: usize,
    pub cx: f64,
    pub cy: f64,
    pub near: f64,
}

pub const DEFAULT_NEAR: f64 = 0.01;

impl Camera {
    /// Camera with the principal point at the image centre.
    pub fn new(rotation: Mat3, translation: Vec3, focal: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Camera {
            rotation,
            translation,
            focal,
            width,
            height,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            near: DEFAULT_NEAR,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, world up `+y`.
    pub fn look_at(eye: Vec3, target: Vec3, focal: f64, width: usize, height: usize) -> Result<Self> {
        let f = sub(&target, &eye);
        if f.iter().all(|v| v.abs() < 1e-12) {
            return Err(Error::Validation("eye and target coincide".into()));
        }
        let z = normalize(&f);
        let side = cross(&z, &[0.0, 1.0, 0.0]);
        if side.iter().map(|v| v * v).sum::<f64>() < 1e-20 {
            return Err(Error::Validation("view direction parallel to world up".into()));
        }
        let x = normalize(&side);
        let y = cross(&z, &x);
        let rotation = [x, y, z];
        let t = mat3_vec(&rotation, &eye);
        Self::new(rotation, [-t[0], -t[1], -t[2]], focal, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let rtr = mat3_mul(&transpose3(&self.rotation), &self.rotation);
        for (i, row) in rtr.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                if (v - e).abs() > 1e-6 {
                    return Err(Error::Validation("camera rotation is not orthonormal".into()));
                }
            }
        }
        if (det3(&self.rotation) - 1.0).abs() > 1e-6 {
            return Err(Error::Validation("camera rotation has det != 1".into()));
        }
        if !(self.focal > 0.0) || !(self.near > 0.0) || self.width == 0 || self.height == 0 {
            return Err(Error::Validation(format!(
                "invalid intrinsics f={} near={} size={}x{}",
                self.focal, self.near, self.width, self.height
            )));
        }
        Ok(())
    }

    /// 4×4 world-to-camera matrix.
    pub fn view_matrix(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            [r[0][0], r[0][1], r[0][2], t[0]],
            [r[1][0], r[1][1], r[1][2], t[1]],
            [r[2][0], r[2][1], r[2][2], t[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        let q = mat3_vec(&self.rotation, p);
        [q[0] + self.translation[0], q[1] + self.translation[1], q[2] + self.translation[2]]
    }

    /// Camera centre in world coordinates.
    pub fn eye(&self) -> Vec3 {
        let t = mat3_vec(&transpose3(&self.rotation), &self.translation);
        [-t[0], -t[1], -t[2]]
    }
}
