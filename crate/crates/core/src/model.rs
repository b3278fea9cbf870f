//! Domain types and geometric primitives shared by every other module.
//!
//! Conventions used throughout the crate:
//! - world frame is right-handed;
//! - camera frame has +x right, +y down and looks down +z;
//! - [`CameraPose::rotation`] maps camera coordinates to world coordinates and
//!   [`CameraPose::translation`] is the camera center in world coordinates;
//! - pixel `(i, j)` samples the image plane at `(u, v) = (i, j)`, so the principal
//!   point of a `W`-wide image sits near `(W - 1) / 2`.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{GrayImage, RgbImage};

pub type Vec3 = Vector3<f64>;
pub type Quat = UnitQuaternion<f64>;

/// Number of raw parameters of one Gaussian: position 3, scale 3, rotation 4, opacity 1, color 3.
pub const RAW_PARAMS: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GaussianKind {
    Isotropic3D,
    /// Planar splat; its local z axis is the normal and carries a zero scale.
    Flat2D,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub position: Vec3,
    /// Per-axis standard deviation in meters.
    pub scale: Vec3,
    pub rotation: Quat,
    pub opacity: f64,
    pub color: [f64; 3],
    pub kind: GaussianKind,
}

pub fn quat_from_wxyz(q: [f64; 4]) -> Quat {
    renormalized(UnitQuaternion::new_unchecked(Quaternion::new(q[0], q[1], q[2], q[3])))
}

/// Renormalizes a quaternion unless it is already unit length to within rounding, which
/// makes repeated renormalization a no-op.
pub fn renormalized(q: Quat) -> Quat {
    let n = q.quaternion().norm();
    if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
        q
    } else if n < 1e-12 || !n.is_finite() {
        Quat::identity()
    } else {
        UnitQuaternion::new_unchecked(q.into_inner() / n)
    }
}

pub fn quat_to_wxyz(q: &Quat) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

#[inline]
fn clamp01(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

impl Gaussian {
    pub fn flat(position: Vec3, in_plane: [f64; 2], rotation: Quat, opacity: f64, color: [f64; 3]) -> Self {
        Self {
            position,
            scale: Vec3::new(in_plane[0], in_plane[1], 0.0),
            rotation,
            opacity,
            color,
            kind: GaussianKind::Flat2D,
        }
        .sanitized()
    }

    pub fn isotropic(position: Vec3, scale: f64, opacity: f64, color: [f64; 3]) -> Self {
        Self {
            position,
            scale: Vec3::repeat(scale),
            rotation: Quat::identity(),
            opacity,
            color,
            kind: GaussianKind::Isotropic3D,
        }
        .sanitized()
    }

    /// Re-establishes the type invariants: unit rotation, clamped opacity and color,
    /// non-negative scales, zero normal scale for flats and equal scales for isotropic splats.
    pub fn sanitized(mut self) -> Self {
        self.rotation = renormalized(self.rotation);
        self.opacity = clamp01(self.opacity);
        for c in &mut self.color {
            *c = clamp01(*c);
        }
        for s in self.scale.iter_mut() {
            if !(*s > 0.0) {
                *s = 0.0;
            }
        }
        match self.kind {
            GaussianKind::Flat2D => self.scale.z = 0.0,
            GaussianKind::Isotropic3D => {
                let m = self.scale.max();
                self.scale = Vec3::repeat(m);
            }
        }
        self
    }

    /// Rotated local z axis; for flats this is the surface normal.
    pub fn normal(&self) -> Vec3 {
        self.rotation * Vec3::z()
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        covariance(self)
    }

    /// Raw parameters in the fixed order position, scale, rotation (w, x, y, z), opacity, color.
    pub fn to_params(&self) -> [f64; RAW_PARAMS] {
        let q = quat_to_wxyz(&self.rotation);
        [
            self.position.x,
            self.position.y,
            self.position.z,
            self.scale.x,
            self.scale.y,
            self.scale.z,
            q[0],
            q[1],
            q[2],
            q[3],
            self.opacity,
            self.color[0],
            self.color[1],
            self.color[2],
        ]
    }

    /// Inverse of [`Gaussian::to_params`]; renormalizes and clamps.
    pub fn from_params(p: &[f64; RAW_PARAMS], kind: GaussianKind) -> Self {
        Self {
            position: Vec3::new(p[0], p[1], p[2]),
            scale: Vec3::new(p[3], p[4], p[5]),
            rotation: quat_from_wxyz([p[6], p[7], p[8], p[9]]),
            opacity: p[10],
            color: [p[11], p[12], p[13]],
            kind,
        }
        .sanitized()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.rotation.quaternion().norm();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!("rotation norm {n}")));
        }
        if !(0.0..=1.0).contains(&self.opacity) || self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidInput("opacity or color outside [0,1]".into()));
        }
        if self.scale.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidInput("negative scale".into()));
        }
        match self.kind {
            GaussianKind::Flat2D if self.scale.min() != 0.0 => {
                Err(Error::InvalidInput("flat Gaussian without a zero scale axis".into()))
            }
            GaussianKind::Isotropic3D if !(self.scale.x == self.scale.y && self.scale.y == self.scale.z) => {
                Err(Error::InvalidInput("isotropic Gaussian with unequal scales".into()))
            }
            _ => Ok(()),
        }
    }
}

/// `R · diag(s²) · Rᵀ`.
pub fn covariance(g: &Gaussian) -> Matrix3<f64> {
    let r = g.rotation.to_rotation_matrix().into_inner();
    let s2 = Matrix3::from_diagonal(&g.scale.component_mul(&g.scale));
    let c = r * s2 * r.transpose();
    // exact symmetry
    (c + c.transpose()) * 0.5
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// 64×48 sensor with roughly 70° horizontal field of view.
    pub fn desk_default() -> Self {
        Self {
            fx: 45.0,
            fy: 45.0,
            cx: 31.5,
            cy: 23.5,
            width: 64,
            height: 48,
        }
    }

    /// Same field of view at `factor` times the resolution; pixel `i` here and pixel
    /// `factor·i` in the result sample the same ray.
    pub fn scaled(&self, factor: usize) -> Self {
        let f = factor as f64;
        Self {
            fx: self.fx * f,
            fy: self.fy * f,
            cx: self.cx * f,
            cy: self.cy * f,
            width: self.width * factor,
            height: self.height * factor,
        }
    }

    pub fn check(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid intrinsics {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    /// Camera → world rotation.
    pub rotation: Quat,
    /// Camera center in world coordinates (meters).
    pub translation: Vec3,
    pub intrinsics: Intrinsics,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    /// Camera-frame depth; positive in front of the camera.
    pub depth: f64,
    /// `false` when behind the camera or outside the image.
    pub in_frustum: bool,
}

impl CameraPose {
    pub fn new(rotation: Quat, translation: Vec3, intrinsics: Intrinsics) -> Self {
        Self {
            rotation,
            translation,
            intrinsics,
        }
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll (image rows run against it).
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, intrinsics: Intrinsics) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            right = forward.cross(&Vec3::x());
            if right.norm() < 1e-9 {
                right = forward.cross(&Vec3::y());
            }
        }
        let right = right.normalize();
        let down = forward.cross(&right).normalize();
        let m = Matrix3::from_columns(&[right, down, forward]);
        let rot = nalgebra::Rotation3::from_matrix_unchecked(m);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), eye, intrinsics)
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn center(&self) -> Vec3 {
        self.translation
    }

    /// Viewing direction (+z of the camera) in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation * Vec3::z()
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.inverse_transform_vector(&(p - self.translation))
    }

    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn project(&self, p: &Vec3) -> Projection {
        let pc = self.world_to_camera(p);
        let k = &self.intrinsics;
        if pc.z <= 0.0 {
            return Projection {
                u: f64::NAN,
                v: f64::NAN,
                depth: pc.z,
                in_frustum: false,
            };
        }
        let u = k.fx * pc.x / pc.z + k.cx;
        let v = k.fy * pc.y / pc.z + k.cy;
        let in_image = u >= -0.5 && u < k.width as f64 - 0.5 && v >= -0.5 && v < k.height as f64 - 0.5;
        Projection {
            u,
            v,
            depth: pc.z,
            in_frustum: in_image,
        }
    }

    /// Back-projects image coordinates at camera depth `depth` into world coordinates.
    pub fn lift_pixel(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        let k = &self.intrinsics;
        let pc = Vec3::new((u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth);
        self.camera_to_world(&pc)
    }

    pub fn check(&self) -> Result<()> {
        self.intrinsics.check()?;
        let n = self.rotation.quaternion().norm();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!("pose rotation norm {n}")));
        }
        Ok(())
    }
}

/// Rotation angle in degrees and translation distance in meters between two poses.
pub fn pose_distance(a: &CameraPose, b: &CameraPose) -> (f64, f64) {
    if a.rotation == b.rotation {
        return (0.0, (a.translation - b.translation).norm());
    }
    let qa = a.rotation.quaternion();
    let qb = b.rotation.quaternion();
    // relative rotation; atan2 form stays accurate near 0° and 180°
    let rel = qa.conjugate() * qb;
    let vec_norm = rel.imag().norm();
    let angle = 2.0 * vec_norm.atan2(rel.w.abs());
    (angle.to_degrees().clamp(0.0, 180.0), (a.translation - b.translation).norm())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRgbd {
    pub color: RgbImage,
    /// Camera-frame depth in meters; `0` marks an invalid pixel.
    pub depth: GrayImage,
    pub pose: CameraPose,
    pub contributor_id: u32,
}

impl FrameRgbd {
    pub fn check(&self) -> Result<()> {
        self.pose.check()?;
        let (w, h) = (self.pose.width(), self.pose.height());
        if self.color.width != w || self.color.height != h || !self.color.same_shape(&self.depth) {
            return Err(Error::InvalidInput("frame buffers do not match the pose resolution".into()));
        }
        if self.depth.data.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::InvalidInput("negative or NaN depth".into()));
        }
        Ok(())
    }
}

/// Global or virtual Gaussian map.
///
/// Anchor `i` owns the Gaussian slots `i·K .. (i+1)·K`. Anchor order is append-only across
/// stages, so the anchors of an earlier stage are a prefix of later ones.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMap {
    pub gaussians: Vec<Gaussian>,
    pub stage_id: u32,
    /// Integer grid cell of each anchor; the anchor position is `cell · epsilon`.
    pub anchors: Vec<[i32; 3]>,
    pub gaussians_per_anchor: usize,
    pub epsilon: f64,
}

impl GaussianMap {
    pub fn empty(gaussians_per_anchor: usize, epsilon: f64) -> Self {
        Self {
            gaussians: Vec::new(),
            stage_id: 0,
            anchors: Vec::new(),
            gaussians_per_anchor,
            epsilon,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn anchor_count(&self) -> usize {
        self.anchors.len()
    }

    pub fn anchor_position(&self, i: usize) -> Vec3 {
        let c = self.anchors[i];
        Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64) * self.epsilon
    }

    pub fn anchor_slots(&self, i: usize) -> std::ops::Range<usize> {
        let k = self.gaussians_per_anchor;
        i * k..(i + 1) * k
    }

    pub fn anchor_gaussians(&self, i: usize) -> &[Gaussian] {
        &self.gaussians[self.anchor_slots(i)]
    }

    pub fn push_anchor(&mut self, cell: [i32; 3], gaussians: Vec<Gaussian>) -> Result<()> {
        if gaussians.len() != self.gaussians_per_anchor {
            return Err(Error::DimensionMismatch {
                expected: self.gaussians_per_anchor,
                found: gaussians.len(),
            });
        }
        self.anchors.push(cell);
        self.gaussians.extend(gaussians);
        Ok(())
    }

    /// First `n` anchors with their Gaussians.
    pub fn prefix(&self, n: usize) -> GaussianMap {
        let k = self.gaussians_per_anchor;
        GaussianMap {
            gaussians: self.gaussians[..n * k].to_vec(),
            stage_id: self.stage_id,
            anchors: self.anchors[..n].to_vec(),
            gaussians_per_anchor: k,
            epsilon: self.epsilon,
        }
    }

    /// Anchors from `n` onwards.
    pub fn suffix(&self, n: usize) -> GaussianMap {
        let k = self.gaussians_per_anchor;
        GaussianMap {
            gaussians: self.gaussians[n * k..].to_vec(),
            stage_id: self.stage_id,
            anchors: self.anchors[n..].to_vec(),
            gaussians_per_anchor: k,
            epsilon: self.epsilon,
        }
    }

    pub fn append(&mut self, other: GaussianMap) -> Result<()> {
        if other.gaussians_per_anchor != self.gaussians_per_anchor {
            return Err(Error::DimensionMismatch {
                expected: self.gaussians_per_anchor,
                found: other.gaussians_per_anchor,
            });
        }
        self.anchors.extend(other.anchors);
        self.gaussians.extend(other.gaussians);
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        if self.anchors.len() * self.gaussians_per_anchor != self.gaussians.len() {
            return Err(Error::InvalidInput(format!(
                "{} anchors × {} slots != {} gaussians",
                self.anchors.len(),
                self.gaussians_per_anchor,
                self.gaussians.len()
            )));
        }
        self.gaussians.iter().try_for_each(Gaussian::check)
    }

    /// Size of the explicit float32 serialization (14 floats per Gaussian).
    pub fn explicit_size_bytes(&self) -> usize {
        self.gaussians.len() * RAW_PARAMS * 4
    }

    /// Exact little-endian dump of every field; two maps are identical iff their bytes are.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.anchors.len() * 12 + self.gaussians.len() * (RAW_PARAMS * 8 + 1));
        out.extend_from_slice(&self.stage_id.to_le_bytes());
        out.extend_from_slice(&(self.gaussians_per_anchor as u32).to_le_bytes());
        out.extend_from_slice(&self.epsilon.to_le_bytes());
        out.extend_from_slice(&(self.anchors.len() as u32).to_le_bytes());
        for c in &self.anchors {
            for v in c {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for g in &self.gaussians {
            out.push(match g.kind {
                GaussianKind::Isotropic3D => 0,
                GaussianKind::Flat2D => 1,
            });
            for v in g.to_params() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::assert_close;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    mod approx_eq {
        macro_rules! assert_close {
            ($a:expr, $b:expr, $tol:expr) => {{
                let (a, b): (f64, f64) = ($a, $b);
                assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
            }};
        }
        pub(crate) use assert_close;
    }

    fn random_quat(rng: &mut ChaCha8Rng) -> Quat {
        quat_from_wxyz([
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ])
    }

    /// Textbook unit-quaternion → matrix formula, written out by hand.
    fn oracle_rotation(q: [f64; 4]) -> [[f64; 3]; 3] {
        let [w, x, y, z] = q;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    fn iso(scale: [f64; 3]) -> Gaussian {
        Gaussian {
            position: Vec3::zeros(),
            scale: Vec3::from(scale),
            rotation: Quat::identity(),
            opacity: 1.0,
            color: [0.5; 3],
            kind: GaussianKind::Isotropic3D,
        }
    }

    #[test]
    fn covariance_identity_and_diagonal() {
        assert_eq!(covariance(&iso([1.0, 1.0, 1.0])), Matrix3::identity());
        assert_eq!(covariance(&iso([2.0, 1.0, 1.0])), Matrix3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0)));
    }

    #[test]
    fn covariance_matches_hand_written_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let q = random_quat(&mut rng);
            let s = [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)];
            let mut g = iso(s);
            g.rotation = q;
            let c = covariance(&g);
            let r = oracle_rotation(quat_to_wxyz(&q));
            for i in 0..3 {
                for j in 0..3 {
                    let expect: f64 = (0..3).map(|k| r[i][k] * s[k] * s[k] * r[j][k]).sum();
                    assert_close!(c[(i, j)], expect, 1e-12);
                }
            }
            // sign flip of the quaternion
            g.rotation = UnitQuaternion::new_unchecked(-q.into_inner());
            let c2 = covariance(&g);
            assert!((c - c2).abs().max() < 1e-12);
            assert!(c.symmetric_eigenvalues().min() > -1e-12);
        }
    }

    #[test]
    fn flat_covariance_is_rank_two() {
        let g = Gaussian::flat(Vec3::zeros(), [0.3, 0.2], quat_from_wxyz([0.3, 0.1, -0.7, 0.2]), 0.5, [0.1; 3]);
        let c = covariance(&g);
        assert!(c.determinant().abs() < 1e-15);
        let n = g.normal();
        assert!((c * n).norm() < 1e-12);
    }

    #[test]
    fn sanitize_is_idempotent() {
        let g = Gaussian {
            position: Vec3::new(1.0, 2.0, 3.0),
            scale: Vec3::new(0.1, -0.2, 0.3),
            rotation: UnitQuaternion::new_unchecked(Quaternion::new(2.0, 0.0, 1.0, 0.0)),
            opacity: 1.4,
            color: [-0.1, 0.5, 2.0],
            kind: GaussianKind::Flat2D,
        };
        let once = g.sanitized();
        let twice = once.clone().sanitized();
        assert_eq!(once, twice);
        once.check().unwrap();
        assert_eq!(once.scale.z, 0.0);
        assert_eq!(once.opacity, 1.0);
    }

    fn pose(q: Quat, t: Vec3) -> CameraPose {
        CameraPose::new(q, t, Intrinsics::desk_default())
    }

    #[test]
    fn pose_distance_basic() {
        let a = pose(Quat::identity(), Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(pose_distance(&a, &a), (0.0, 0.0));
        let b = pose(
            UnitQuaternion::from_axis_angle(&Vec3::z_axis(), std::f64::consts::FRAC_PI_2),
            a.translation,
        );
        let (ang, tr) = pose_distance(&a, &b);
        assert_close!(ang, 90.0, 1e-9);
        assert_eq!(tr, 0.0);
    }

    /// Angle from the trace of the relative rotation matrix (matrix logarithm magnitude).
    fn oracle_angle(a: &Quat, b: &Quat) -> f64 {
        let ra = oracle_rotation(quat_to_wxyz(a));
        let rb = oracle_rotation(quat_to_wxyz(b));
        let mut tr = 0.0;
        for i in 0..3 {
            for k in 0..3 {
                tr += ra[k][i] * rb[k][i];
            }
        }
        ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees()
    }

    #[test]
    fn pose_distance_matches_matrix_log_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let a = pose(random_quat(&mut rng), Vec3::new(rng.random(), rng.random(), rng.random()));
            let b = pose(random_quat(&mut rng), Vec3::new(rng.random(), rng.random(), rng.random()));
            let (ang, tr) = pose_distance(&a, &b);
            let oracle = oracle_angle(&a.rotation, &b.rotation);
            // acos loses precision near 0/180; compare where the oracle is well conditioned
            if oracle > 1.0 && oracle < 179.0 {
                assert_close!(ang, oracle, 1e-6);
            }
            let (ang2, tr2) = pose_distance(&b, &a);
            assert_close!(ang, ang2, 1e-12);
            assert_eq!(tr, tr2);
            assert!((0.0..=180.0).contains(&ang));
        }
    }

    #[test]
    fn pose_distance_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..500 {
            let p: Vec<_> = (0..3).map(|_| pose(random_quat(&mut rng), Vec3::zeros())).collect();
            let ab = pose_distance(&p[0], &p[1]).0;
            let bc = pose_distance(&p[1], &p[2]).0;
            let ac = pose_distance(&p[0], &p[2]).0;
            assert!(ac <= ab + bc + 1e-6);
        }
    }

    #[test]
    fn project_examples() {
        let k = Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
            width: 200,
            height: 100,
        };
        let cam = CameraPose::new(Quat::identity(), Vec3::zeros(), k);
        let p = cam.project(&Vec3::new(1.0, 0.0, 2.0));
        assert_eq!((p.u, p.v, p.depth), (100.0, 50.0, 2.0));
        assert!(p.in_frustum);
        let axis = cam.project(&Vec3::new(0.0, 0.0, 3.5));
        assert_eq!((axis.u, axis.v, axis.depth), (50.0, 50.0, 3.5));
        let behind = cam.project(&Vec3::new(0.0, 0.0, -1.0));
        assert!(!behind.in_frustum);
        let outside = cam.project(&Vec3::new(10.0, 0.0, 1.0));
        assert!(!outside.in_frustum && outside.depth > 0.0);
    }

    #[test]
    fn project_lift_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cam = pose(random_quat(&mut rng), Vec3::new(0.3, -1.0, 0.5));
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let pc = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.1..5.0));
            let p = cam.camera_to_world(&pc);
            let pr = cam.project(&p);
            assert!(pr.depth > 0.0);
            let back = cam.lift_pixel(pr.u, pr.v, pr.depth);
            worst = worst.max((back - p).norm());
        }
        assert!(worst < 1e-6, "round trip error {worst}");
    }

    #[test]
    fn look_at_points_forward() {
        let cam = CameraPose::look_at(
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(2.0, 0.0, 1.0),
            Vec3::z(),
            Intrinsics::desk_default(),
        );
        assert!((cam.forward() - Vec3::x()).norm() < 1e-12);
        let p = cam.project(&Vec3::new(2.0, 0.0, 1.5));
        // world up projects to smaller v
        assert!(p.v < cam.intrinsics.cy);
    }

    #[test]
    fn params_round_trip() {
        let g = Gaussian::flat(Vec3::new(0.1, 0.2, 0.3), [0.01, 0.02], quat_from_wxyz([0.2, 0.4, 0.1, 0.9]), 0.3, [0.2, 0.4, 0.6]);
        let back = Gaussian::from_params(&g.to_params(), g.kind);
        assert!((back.position - g.position).norm() < 1e-15);
        assert!(back.rotation.angle_to(&g.rotation) < 1e-9);
    }

    #[test]
    fn map_prefix_suffix_append() {
        let mut m = GaussianMap::empty(2, 0.03);
        for i in 0..3 {
            m.push_anchor([i, 0, 0], vec![iso([0.1; 3]), iso([0.2; 3])]).unwrap();
        }
        m.check().unwrap();
        let mut p = m.prefix(1);
        p.append(m.suffix(1)).unwrap();
        assert_eq!(p.canonical_bytes(), m.canonical_bytes());
        assert!(m.push_anchor([9, 9, 9], vec![iso([0.1; 3])]).is_err());
    }
}
