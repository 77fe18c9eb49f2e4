use crate::gaussians::{covariance_unchecked, rotmat_unchecked, Gaussian, OPACITY, POS, RGB, ROT, SCALE};
use crate::math::{mat3_mul, transpose3, Mat3};

use super::Camera;

/// Added to the screen-space covariance diagonal, in pixels².
pub const COV_REGULARIZATION: f64 = 0.3;
/// Squared Mahalanobis distance beyond which a Gaussian contributes nothing
/// in the cutoff-enabled rasterizer.
pub const CUTOFF_D2: f64 = 18.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected2D {
    /// Position in the source cloud.
    pub index: usize,
    pub mean: [f64; 2],
    /// Σ' as `xx, xy, yy`.
    pub cov: [f64; 3],
    /// Σ'⁻¹ as `xx, xy, yy`.
    pub conic: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    /// Three standard deviations along the major axis, pixels.
    pub radius: f64,
    /// Half-widths of the box holding the `d² ≤ 18` ellipse.
    pub extent: [f64; 2],
}

impl Projected2D {
    /// Whether the cutoff ellipse's bounding box touches the pixel rectangle
    /// `[x0, x1) × [y0, y1)` measured at pixel centres.
    pub(crate) fn touches(&self, x0: f64, x1: f64, y0: f64, y1: f64) -> bool {
        self.mean[0] + self.extent[0] >= x0 + 0.5
            && self.mean[0] - self.extent[0] <= x1 - 0.5
            && self.mean[1] + self.extent[1] >= y0 + 0.5
            && self.mean[1] - self.extent[1] <= y1 - 0.5
    }
}

/// EWA projection with depth culling only.
pub fn project_unculled(g: &Gaussian, index: usize, cam: &Camera) -> Option<Projected2D> {
    let t = cam.world_to_camera(&g.position);
    if t[2] <= cam.near {
        return None;
    }
    let f = cam.focal;
    let (z, z2) = (t[2], t[2] * t[2]);
    let j = [[f / z, 0.0, -f * t[0] / z2], [0.0, f / z, -f * t[1] / z2]];
    let sigma = covariance_unchecked(&rotmat_unchecked(&g.rotation), &g.scale);
    let w = &cam.rotation;
    let sc = mat3_mul(&mat3_mul(w, &sigma), &transpose3(w));
    let cov = screen_cov(&j, &sc);
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    let conic = [cov[2] / det, -cov[1] / det, cov[0] / det];
    let mid = 0.5 * (cov[0] + cov[2]);
    let lambda = mid + (mid * mid - det).max(0.0).sqrt();
    Some(Projected2D {
        index,
        mean: [f * t[0] / z + cam.cx, f * t[1] / z + cam.cy],
        cov,
        conic,
        depth: z,
        opacity: g.opacity,
        color: g.color,
        radius: 3.0 * lambda.sqrt(),
        extent: [(CUTOFF_D2 * cov[0]).sqrt(), (CUTOFF_D2 * cov[2]).sqrt()],
    })
}

/// EWA projection, culled when behind the near plane or when the region
/// that can receive any weight under the cutoff misses the image.
pub fn project(g: &Gaussian, index: usize, cam: &Camera) -> Option<Projected2D> {
    project_unculled(g, index, cam)
        .filter(|p| p.touches(0.0, cam.width as f64, 0.0, cam.height as f64))
}

fn screen_cov(j: &[[f64; 3]; 2], sc: &Mat3) -> [f64; 3] {
    let mut js = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            js[r][c] = (0..3).map(|k| j[r][k] * sc[k][c]).sum();
        }
    }
    let e = |a: usize, b: usize| (0..3).map(|k| js[a][k] * j[b][k]).sum::<f64>();
    [e(0, 0) + COV_REGULARIZATION, e(0, 1), e(1, 1) + COV_REGULARIZATION]
}

/// `σ = a·exp(−½ dᵀ Σ'⁻¹ d)` at pixel coordinates `p`.
pub fn pixel_weight(p: [f64; 2], pg: &Projected2D) -> f64 {
    let dx = p[0] - pg.mean[0];
    let dy = p[1] - pg.mean[1];
    let power = -0.5 * (pg.conic[0] * dx * dx + 2.0 * pg.conic[1] * dx * dy + pg.conic[2] * dy * dy);
    pg.opacity * power.exp()
}

/// Loss gradient with respect to one projected Gaussian.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Grad2D {
    pub mean: [f64; 2],
    /// With respect to `conic[0], conic[1], conic[2]`, where `conic[1]`
    /// stands for both off-diagonal entries.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
}

impl Grad2D {
    pub(crate) fn add(&mut self, o: &Grad2D) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

/// Chains a projected-space gradient back to the 14 Gaussian parameters in
/// channel-layout order. The quaternion is used as given, without
/// normalisation.
pub fn project_backward(g: &Gaussian, cam: &Camera, d: &Grad2D) -> [f64; 14] {
    let mut out = [0.0; 14];
    out[OPACITY] = d.opacity;
    out[RGB..RGB + 3].copy_from_slice(&d.color);

    let t = cam.world_to_camera(&g.position);
    let f = cam.focal;
    let (z, z2, z3) = (t[2], t[2] * t[2], t[2] * t[2] * t[2]);
    let j = [[f / z, 0.0, -f * t[0] / z2], [0.0, f / z, -f * t[1] / z2]];
    let rq = rotmat_unchecked(&g.rotation);
    let s = g.scale;
    let sigma = covariance_unchecked(&rq, &s);
    let w = &cam.rotation;
    let sc = mat3_mul(&mat3_mul(w, &sigma), &transpose3(w));
    let cov = screen_cov(&j, &sc);
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    let a = [[cov[2] / det, -cov[1] / det], [-cov[1] / det, cov[0] / det]];

    // conic gradient as a symmetric matrix, then through the inverse
    let ga = [[d.conic[0], 0.5 * d.conic[1]], [0.5 * d.conic[1], d.conic[2]]];
    let aga = mul2(&mul2(&a, &ga), &a);
    let gcov = [[-aga[0][0], -aga[0][1]], [-aga[1][0], -aga[1][1]]];

    // Σ' = J Σc Jᵀ
    let mut gsc = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            gsc[r][c] = (0..2)
                .flat_map(|p| (0..2).map(move |q| (p, q)))
                .map(|(p, q)| j[p][r] * gcov[p][q] * j[q][c])
                .sum();
        }
    }
    let mut gj = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            // 2 · G_Σ' · J · Σc
            gj[r][c] = 2.0
                * (0..2)
                    .map(|p| gcov[r][p] * (0..3).map(|k| j[p][k] * sc[k][c]).sum::<f64>())
                    .sum::<f64>();
        }
    }

    // Σc = W Σ Wᵀ, Σ = M Mᵀ with M = R diag(s)
    let gsigma = mat3_mul(&mat3_mul(&transpose3(w), &gsc), w);
    let m = [
        [rq[0][0] * s[0], rq[0][1] * s[1], rq[0][2] * s[2]],
        [rq[1][0] * s[0], rq[1][1] * s[1], rq[1][2] * s[2]],
        [rq[2][0] * s[0], rq[2][1] * s[1], rq[2][2] * s[2]],
    ];
    let gm = mat3_mul(&gsigma, &m);
    let mut grq = [[0.0; 3]; 3];
    for i in 0..3 {
        for jj in 0..3 {
            grq[i][jj] = 2.0 * gm[i][jj] * s[jj];
            out[SCALE + jj] += 2.0 * gm[i][jj] * rq[i][jj];
        }
    }
    let dq = rotmat_quat_grad(&g.rotation, &grq);
    out[ROT..ROT + 4].copy_from_slice(&dq);

    // camera-space position via the projected mean and via J
    let mut gt = [0.0; 3];
    gt[0] += d.mean[0] * f / z;
    gt[1] += d.mean[1] * f / z;
    gt[2] += -d.mean[0] * f * t[0] / z2 - d.mean[1] * f * t[1] / z2;
    gt[0] += gj[0][2] * (-f / z2);
    gt[1] += gj[1][2] * (-f / z2);
    gt[2] += (gj[0][0] + gj[1][1]) * (-f / z2) + gj[0][2] * 2.0 * f * t[0] / z3 + gj[1][2] * 2.0 * f * t[1] / z3;
    for k in 0..3 {
        out[POS + k] = (0..3).map(|r| w[r][k] * gt[r]).sum();
    }
    out
}

fn mul2(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

/// Contracts `∂L/∂R` with the partial derivatives of the rotation polynomial.
fn rotmat_quat_grad(q: &[f64; 4], gr: &Mat3) -> [f64; 4] {
    let [w, x, y, z] = *q;
    let dw = [[0.0, -2.0 * z, 2.0 * y], [2.0 * z, 0.0, -2.0 * x], [-2.0 * y, 2.0 * x, 0.0]];
    let dx = [[0.0, 2.0 * y, 2.0 * z], [2.0 * y, -4.0 * x, -2.0 * w], [2.0 * z, 2.0 * w, -4.0 * x]];
    let dy = [[-4.0 * y, 2.0 * x, 2.0 * w], [2.0 * x, 0.0, 2.0 * z], [-2.0 * w, 2.0 * z, -4.0 * y]];
    let dz = [[-4.0 * z, -2.0 * w, 2.0 * x], [2.0 * w, -4.0 * z, 2.0 * y], [2.0 * x, 2.0 * y, 0.0]];
    let dot = |d: &Mat3| (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| d[i][j] * gr[i][j]).sum();
    [dot(&dw), dot(&dx), dot(&dy), dot(&dz)]
}
