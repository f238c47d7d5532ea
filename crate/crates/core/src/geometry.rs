//! Camera models, rigid poses, APE weighting, and epipolar geometry.
//!
//! Poses are stored world-to-camera (the COLMAP convention); convert at
//! ingestion if your source uses camera-to-world. All math is `f64`.

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};

use crate::error::{LrfError, Result};

/// Near plane for point projection and splat culling, in world units.
pub const NEAR_PLANE: f64 = 0.01;

/// Pinhole intrinsics in pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(LrfError::InvalidValue(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(LrfError::InvalidValue(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} sensor"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Calibration matrix K.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    /// Intrinsics rescaled to a new sensor size (same field of view).
    pub fn scaled_to(&self, width: u32, height: u32) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }
}

/// Rigid world-to-camera transform as a 4x4 homogeneous matrix.
///
/// Invariants checked on construction: rotation block orthonormal with
/// determinant +1 (tolerance 1e-9), bottom row exactly `[0, 0, 0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    matrix: Matrix4<f64>,
}

const POSE_TOL: f64 = 1e-9;

impl Pose {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix4::identity(),
        }
    }

    pub fn new(matrix: Matrix4<f64>) -> Result<Self> {
        let bottom = matrix.row(3);
        if bottom[0] != 0.0 || bottom[1] != 0.0 || bottom[2] != 0.0 || bottom[3] != 1.0 {
            return Err(LrfError::InvalidValue(
                "pose bottom row must be exactly [0, 0, 0, 1]".into(),
            ));
        }
        let r = matrix.fixed_view::<3, 3>(0, 0).into_owned();
        let ortho_err = (r.transpose() * r - Matrix3::identity()).norm();
        if ortho_err > POSE_TOL {
            return Err(LrfError::InvalidValue(format!(
                "pose rotation block not orthonormal (error {ortho_err:.3e})"
            )));
        }
        if (r.determinant() - 1.0).abs() > POSE_TOL {
            return Err(LrfError::InvalidValue(format!(
                "pose rotation block determinant {} != +1",
                r.determinant()
            )));
        }
        Ok(Self { matrix })
    }

    pub fn from_rt(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self::new(m)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.matrix
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.matrix.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Inverse transform (camera-to-world). Exact for rigid transforms.
    pub fn inverse(&self) -> Matrix4<f64> {
        let r = self.rotation();
        let t = self.translation();
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r.transpose());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-r.transpose() * t));
        m
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vector3<f64> {
        -self.rotation().transpose() * self.translation()
    }

    /// Transform a world point into camera coordinates.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }
}

/// A calibrated, posed view.
#[derive(Debug, Clone)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
    pub id: String,
}

impl Camera {
    pub fn new(id: impl Into<String>, intrinsics: CameraIntrinsics, pose: Pose) -> Self {
        Self {
            intrinsics,
            pose,
            id: id.into(),
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        self.pose.center()
    }
}

/// One matched pixel pair across two views, full-resolution coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondencePair {
    pub view_i: String,
    pub view_j: String,
    pub x_i: Vector2<f64>,
    pub x_j: Vector2<f64>,
}

/// Relative transform between two world-to-camera poses, `E_ij = P_i^-1 P_j`.
///
/// The result is itself a rigid transform; identical poses give the identity.
pub fn pose_relative(p_i: &Pose, p_j: &Pose) -> Matrix4<f64> {
    p_i.inverse() * p_j.matrix()
}

/// Absolute pose error of a relative transform: `||E - I||_F`.
pub fn ape(e: &Matrix4<f64>) -> f64 {
    (e - Matrix4::identity()).norm()
}

/// Per-pair weights `lambda_k = APE_k / sum(APE)`.
///
/// All-zero batches (identical pose pairs) fall back to uniform weights so
/// downstream losses degrade to an unweighted mean instead of dividing by
/// zero.
pub fn ape_weights(pairs: &[(Pose, Pose)]) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(LrfError::EmptyPairBatch);
    }
    let errs: Vec<f64> = pairs
        .iter()
        .map(|(a, b)| ape(&pose_relative(a, b)))
        .collect();
    let sum: f64 = errs.iter().sum();
    if sum < 1e-12 {
        return Ok(vec![1.0 / pairs.len() as f64; pairs.len()]);
    }
    Ok(errs.into_iter().map(|e| e / sum).collect())
}

/// 3x3 fundamental matrix, stored rank-2 with unit Frobenius norm.
#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalMatrix {
    matrix: Matrix3<f64>,
}

impl FundamentalMatrix {
    /// Validate rank 2 (smallest singular value <= 1e-9 x largest after
    /// normalization) and store normalized to unit Frobenius norm.
    pub fn new(matrix: Matrix3<f64>) -> Result<Self> {
        let norm = matrix.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(LrfError::InvalidValue(
                "fundamental matrix must be nonzero and finite".into(),
            ));
        }
        let normalized = matrix / norm;
        let svd = normalized.svd(false, false);
        let s = svd.singular_values;
        let (s_max, s_min) = (s.max(), s.min());
        if s_min > 1e-9 * s_max {
            return Err(LrfError::InvalidValue(format!(
                "fundamental matrix not rank 2 (singular values {:.3e}, {:.3e}, {:.3e})",
                s[0], s[1], s[2]
            )));
        }
        Ok(Self { matrix: normalized })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }
}

fn cross_matrix(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -t.z, t.y, //
        t.z, 0.0, -t.x, //
        -t.y, t.x, 0.0,
    )
}

/// Fundamental matrix from two calibrated cameras.
///
/// With (R, t) the transform taking camera-i coordinates to camera-j
/// coordinates, `F = K_j^-T [t]x R K_i^-1`, so that projections of any common
/// 3D point satisfy `x_j^T F x_i = 0`.
pub fn fundamental_from_cameras(cam_i: &Camera, cam_j: &Camera) -> Result<FundamentalMatrix> {
    // cam_i -> cam_j: x_j = R x_i + t, read off P_j P_i^-1.
    let rel = cam_j.pose.matrix() * cam_i.pose.inverse();
    let r = rel.fixed_view::<3, 3>(0, 0).into_owned();
    let t = rel.fixed_view::<3, 1>(0, 3).into_owned();
    if t.norm() <= 1e-9 {
        return Err(LrfError::DegenerateBaseline { baseline: t.norm() });
    }
    let k_i_inv = cam_i
        .intrinsics
        .matrix()
        .try_inverse()
        .expect("calibration matrix is invertible by construction");
    let k_j_inv_t = cam_j
        .intrinsics
        .matrix()
        .try_inverse()
        .expect("calibration matrix is invertible by construction")
        .transpose();
    FundamentalMatrix::new(k_j_inv_t * cross_matrix(&t) * r * k_i_inv)
}

/// Epipolar residual `x~_j^T F x~_i` with homogeneous pixels (x, y, 1).
pub fn epipolar_residual(f: &FundamentalMatrix, x_i: &Vector2<f64>, x_j: &Vector2<f64>) -> f64 {
    let hi = Vector3::new(x_i.x, x_i.y, 1.0);
    let hj = Vector3::new(x_j.x, x_j.y, 1.0);
    (hj.transpose() * f.matrix() * hi)[0]
}

/// Pinhole projection of a world point: pixel coordinates and camera-space
/// depth. Fails for points at or behind the near plane.
pub fn project_point(cam: &Camera, x_world: &Vector3<f64>) -> Result<(Vector2<f64>, f64)> {
    let p = cam.pose.transform_point(x_world);
    if p.z <= NEAR_PLANE {
        return Err(LrfError::BehindCamera {
            depth: p.z,
            near: NEAR_PLANE,
        });
    }
    let k = &cam.intrinsics;
    Ok((
        Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy),
        p.z,
    ))
}

/// Inverse of [`project_point`] at a known depth.
pub fn unproject_pixel(cam: &Camera, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
    let k = &cam.intrinsics;
    let cam_point = Vector3::new(
        (pixel.x - k.cx) / k.fx * depth,
        (pixel.y - k.cy) / k.fy * depth,
        depth,
    );
    cam.pose.rotation().transpose() * (cam_point - cam.pose.translation())
}

// ---------------------------------------------------------------------------
// Text formats
// ---------------------------------------------------------------------------

fn parse_err(path: &std::path::Path, line_no: usize, message: impl Into<String>) -> LrfError {
    LrfError::Parse {
        path: path.display().to_string(),
        message: format!("line {}: {}", line_no, message.into()),
    }
}

/// Read `cameras.txt`: one view per line,
/// `id fx fy cx cy width height  r11 r12 r13 tx  r21 r22 r23 ty  r31 r32 r33 tz`
/// (world-to-camera), whitespace-separated, `#` comments.
pub fn read_cameras_txt(path: impl AsRef<std::path::Path>) -> Result<Vec<Camera>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut cameras = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 19 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 19 fields, got {}", tok.len()),
            ));
        }
        let id = tok[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(parse_err(path, line_no, format!("duplicate view id '{id}'")));
        }
        let nums: Vec<f64> = tok[1..]
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| parse_err(path, line_no, format!("bad number '{t}'")))
            })
            .collect::<Result<_>>()?;
        let intr = CameraIntrinsics::new(
            nums[0],
            nums[1],
            nums[2],
            nums[3],
            nums[4] as u32,
            nums[5] as u32,
        )
        .map_err(|e| parse_err(path, line_no, e.to_string()))?;
        let p = &nums[6..18];
        let rotation = Matrix3::new(p[0], p[1], p[2], p[4], p[5], p[6], p[8], p[9], p[10]);
        let translation = Vector3::new(p[3], p[7], p[11]);
        let pose = Pose::from_rt(rotation, translation)
            .map_err(|e| parse_err(path, line_no, e.to_string()))?;
        cameras.push(Camera::new(id, intr, pose));
    }
    Ok(cameras)
}

/// Write `cameras.txt` in the format accepted by [`read_cameras_txt`].
pub fn write_cameras_txt(path: impl AsRef<std::path::Path>, cameras: &[Camera]) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::from("# id fx fy cx cy width height  r11 r12 r13 tx  r21 r22 r23 ty  r31 r32 r33 tz\n");
    for cam in cameras {
        let k = &cam.intrinsics;
        let r = cam.pose.rotation();
        let t = cam.pose.translation();
        write!(out, "{} {} {} {} {} {} {}", cam.id, k.fx, k.fy, k.cx, k.cy, k.width, k.height)
            .unwrap();
        for row in 0..3 {
            write!(out, "  {} {} {} {}", r[(row, 0)], r[(row, 1)], r[(row, 2)], t[row]).unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read `matches.txt`: one correspondence per line,
/// `view_i view_j u_i v_i u_j v_j`, `#` comments.
pub fn read_matches_txt(path: impl AsRef<std::path::Path>) -> Result<Vec<CorrespondencePair>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 6 {
            return Err(parse_err(
                path,
                line_no,
                format!("expected 6 fields, got {}", tok.len()),
            ));
        }
        if tok[0] == tok[1] {
            return Err(parse_err(path, line_no, "correspondence relates a view to itself"));
        }
        let nums: Vec<f64> = tok[2..]
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| parse_err(path, line_no, format!("bad number '{t}'")))
            })
            .collect::<Result<_>>()?;
        pairs.push(CorrespondencePair {
            view_i: tok[0].to_string(),
            view_j: tok[1].to_string(),
            x_i: Vector2::new(nums[0], nums[1]),
            x_j: Vector2::new(nums[2], nums[3]),
        });
    }
    Ok(pairs)
}

/// Write `matches.txt` in the format accepted by [`read_matches_txt`].
pub fn write_matches_txt(
    path: impl AsRef<std::path::Path>,
    pairs: &[CorrespondencePair],
) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::from("# view_i view_j u_i v_i u_j v_j\n");
    for p in pairs {
        writeln!(
            out,
            "{} {} {} {} {} {}",
            p.view_i, p.view_j, p.x_i.x, p.x_i.y, p.x_j.x, p.x_j.y
        )
        .unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_pose(rng: &mut impl Rng) -> Pose {
        // Random rotation from a random axis-angle, random translation.
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let angle: f64 = rng.random_range(-3.0..3.0);
        let r = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        let t = Vector3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        Pose::from_rt(r.into_inner(), t).unwrap()
    }

    fn translation_pose(x: f64, y: f64, z: f64) -> Pose {
        Pose::from_rt(Matrix3::identity(), Vector3::new(x, y, z)).unwrap()
    }

    fn test_camera(id: &str, pose: Pose) -> Camera {
        Camera::new(
            id,
            CameraIntrinsics::new(100.0, 110.0, 64.0, 48.0, 128, 96).unwrap(),
            pose,
        )
    }

    #[test]
    fn pose_relative_identity() {
        let e = pose_relative(&Pose::identity(), &Pose::identity());
        assert_relative_eq!(e, Matrix4::identity(), epsilon = 1e-15);
    }

    #[test]
    fn pose_relative_translation() {
        let e = pose_relative(&Pose::identity(), &translation_pose(1.0, 0.0, 0.0));
        let mut expected = Matrix4::identity();
        expected[(0, 3)] = 1.0;
        assert_relative_eq!(e, expected, epsilon = 1e-15);
    }

    #[test]
    fn pose_relative_round_trip() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..20 {
            let p_i = random_pose(&mut rng);
            let p_j = random_pose(&mut rng);
            let e = pose_relative(&p_i, &p_j);
            // P_i * E = P_j
            let recon = p_i.matrix() * e;
            assert_relative_eq!(recon, *p_j.matrix(), epsilon = 1e-12);
            // E is itself rigid.
            Pose::new(e).unwrap();
            // pose_relative(P, P) = I for any valid pose.
            let self_rel = pose_relative(&p_i, &p_i);
            assert_relative_eq!(self_rel, Matrix4::identity(), epsilon = 1e-12);
        }
    }

    #[test]
    fn ape_zero_iff_identity() {
        assert_eq!(ape(&Matrix4::identity()), 0.0);
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..10 {
            let p = random_pose(&mut rng);
            let e = p.matrix();
            if (e - Matrix4::identity()).norm() > 0.0 {
                assert!(ape(e) > 0.0);
            }
        }
    }

    #[test]
    fn ape_translation_values() {
        let e = pose_relative(&Pose::identity(), &translation_pose(1.0, 0.0, 0.0));
        assert_relative_eq!(ape(&e), 1.0, epsilon = 1e-15);
        let e = pose_relative(&Pose::identity(), &translation_pose(3.0, 4.0, 0.0));
        assert_relative_eq!(ape(&e), 5.0, epsilon = 1e-15);
    }

    #[test]
    fn ape_weights_proportional() {
        // APE 1.0 and 3.0 -> weights 0.25, 0.75.
        let pairs = vec![
            (Pose::identity(), translation_pose(1.0, 0.0, 0.0)),
            (Pose::identity(), translation_pose(3.0, 0.0, 0.0)),
        ];
        let w = ape_weights(&pairs).unwrap();
        assert_relative_eq!(w[0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(w[1], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn ape_weights_single_and_degenerate() {
        let one = vec![(Pose::identity(), translation_pose(0.0, 2.0, 0.0))];
        assert_eq!(ape_weights(&one).unwrap(), vec![1.0]);

        let same = vec![
            (Pose::identity(), Pose::identity()),
            (Pose::identity(), Pose::identity()),
            (Pose::identity(), Pose::identity()),
        ];
        let w = ape_weights(&same).unwrap();
        for wi in w {
            assert_relative_eq!(wi, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn ape_weights_empty_errors() {
        assert!(matches!(ape_weights(&[]), Err(LrfError::EmptyPairBatch)));
    }

    #[test]
    fn ape_weights_sum_and_permutation() {
        let mut rng = StdRng::seed_from_u64(17);
        let pairs: Vec<_> = (0..8)
            .map(|_| (random_pose(&mut rng), random_pose(&mut rng)))
            .collect();
        let w = ape_weights(&pairs).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&x| x >= 0.0));

        let mut reversed = pairs.clone();
        reversed.reverse();
        let wr = ape_weights(&reversed).unwrap();
        for (a, b) in w.iter().zip(wr.iter().rev()) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn fundamental_epipolar_residual_zero_for_true_matches() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..20 {
            let cam_i = test_camera("i", random_pose(&mut rng));
            let cam_j = test_camera("j", random_pose(&mut rng));
            if (cam_i.center() - cam_j.center()).norm() <= 1e-6 {
                continue;
            }
            let f = fundamental_from_cameras(&cam_i, &cam_j).unwrap();
            // Synthesize points visible in both views.
            let mut checked = 0;
            while checked < 10 {
                let x = Vector3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                );
                let (Ok((pi, _)), Ok((pj, _))) =
                    (project_point(&cam_i, &x), project_point(&cam_j, &x))
                else {
                    continue;
                };
                let r = epipolar_residual(&f, &pi, &pj);
                assert!(r.abs() <= 1e-9, "epipolar residual {r} too large");
                checked += 1;
            }
        }
    }

    #[test]
    fn fundamental_swap_is_transpose_up_to_sign() {
        let mut rng = StdRng::seed_from_u64(6);
        let cam_i = test_camera("i", random_pose(&mut rng));
        let cam_j = test_camera("j", random_pose(&mut rng));
        let f_ij = fundamental_from_cameras(&cam_i, &cam_j).unwrap();
        let f_ji = fundamental_from_cameras(&cam_j, &cam_i).unwrap();
        let d_plus = (f_ji.matrix() - f_ij.matrix().transpose()).norm();
        let d_minus = (f_ji.matrix() + f_ij.matrix().transpose()).norm();
        assert!(d_plus.min(d_minus) < 1e-12, "{d_plus} vs {d_minus}");
    }

    #[test]
    fn fundamental_pure_rotation_degenerate() {
        let r = nalgebra::Rotation3::from_euler_angles(0.1, -0.2, 0.3).into_inner();
        let cam_i = test_camera("i", Pose::identity());
        let cam_j = test_camera("j", Pose::from_rt(r, Vector3::zeros()).unwrap());
        assert!(matches!(
            fundamental_from_cameras(&cam_i, &cam_j),
            Err(LrfError::DegenerateBaseline { .. })
        ));
    }

    #[test]
    fn fundamental_rank_two() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..10 {
            let cam_i = test_camera("i", random_pose(&mut rng));
            let cam_j = test_camera("j", random_pose(&mut rng));
            if (cam_i.center() - cam_j.center()).norm() <= 1e-6 {
                continue;
            }
            let f = fundamental_from_cameras(&cam_i, &cam_j).unwrap();
            let s = f.matrix().svd(false, false).singular_values;
            assert!(s.min() <= 1e-9 * s.max());
            assert_relative_eq!(f.matrix().norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn epipolar_residual_null_direction() {
        // diag(1, 1, 0)-like rank-2 matrix; (0, 0) homogeneous -> (0, 0, 1)
        // lies on its null direction only in the third coordinate, so pick the
        // matrix that kills it.
        let f = FundamentalMatrix::new(Matrix3::new(
            1.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0,
        ))
        .unwrap();
        let r = epipolar_residual(&f, &Vector2::new(0.0, 0.0), &Vector2::new(0.0, 0.0));
        assert_eq!(r, 0.0);
    }

    #[test]
    fn epipolar_residual_off_line_positive() {
        let mut rng = StdRng::seed_from_u64(8);
        let cam_i = test_camera("i", Pose::identity());
        let cam_j = test_camera("j", translation_pose(0.5, 0.0, 0.0));
        let f = fundamental_from_cameras(&cam_i, &cam_j).unwrap();
        let x = Vector3::new(0.3, -0.2, 2.0);
        let (pi, _) = project_point(&cam_i, &x).unwrap();
        let (pj, _) = project_point(&cam_j, &x).unwrap();
        let off = pj + Vector2::new(0.0, 1.0); // one pixel off the epipolar line
        assert!(epipolar_residual(&f, &pi, &off).abs() > 0.0);
        let _ = rng.random::<f64>();
    }

    #[test]
    fn project_point_axis_and_offset() {
        let cam = test_camera("c", Pose::identity());
        let (px, depth) = project_point(&cam, &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(px.x, 64.0, epsilon = 1e-15);
        assert_relative_eq!(px.y, 48.0, epsilon = 1e-15);
        assert_relative_eq!(depth, 1.0, epsilon = 1e-15);

        let cam = Camera::new(
            "c2",
            CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap(),
            Pose::identity(),
        );
        let (px, _) = project_point(&cam, &Vector3::new(1.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(px.x, 150.0, epsilon = 1e-12);
    }

    #[test]
    fn project_point_behind_camera() {
        let cam = test_camera("c", Pose::identity());
        assert!(matches!(
            project_point(&cam, &Vector3::new(0.0, 0.0, -1.0)),
            Err(LrfError::BehindCamera { .. })
        ));
        assert!(matches!(
            project_point(&cam, &Vector3::new(0.0, 0.0, 0.005)),
            Err(LrfError::BehindCamera { .. })
        ));
    }

    #[test]
    fn project_unproject_round_trip() {
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..20 {
            let cam = test_camera("c", random_pose(&mut rng));
            let x = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let Ok((px, depth)) = project_point(&cam, &x) else {
                continue;
            };
            let back = unproject_pixel(&cam, &px, depth);
            assert_relative_eq!(back, x, epsilon = 1e-10);
        }
    }

    #[test]
    fn cameras_txt_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cameras.txt");
        let mut rng = StdRng::seed_from_u64(21);
        let cams: Vec<Camera> = (0..4)
            .map(|i| test_camera(&format!("view{i}"), random_pose(&mut rng)))
            .collect();
        write_cameras_txt(&path, &cams).unwrap();
        let back = read_cameras_txt(&path).unwrap();
        assert_eq!(back.len(), cams.len());
        for (a, b) in cams.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.intrinsics, b.intrinsics);
            assert_eq!(a.pose, b.pose);
        }
    }

    #[test]
    fn cameras_txt_rejects_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cameras.txt");
        std::fs::write(&path, "v0 100 100 50 50 100 100 1 0 0 0\n").unwrap();
        let err = read_cameras_txt(&path).unwrap_err();
        assert!(err.to_string().contains("19 fields"), "{err}");

        std::fs::write(
            &path,
            "v0 100 100 50 50 100 100  1 0 0 0  0 1 0 0  0 0 1 0\n\
             v0 100 100 50 50 100 100  1 0 0 0  0 1 0 0  0 0 1 0\n",
        )
        .unwrap();
        let err = read_cameras_txt(&path).unwrap_err();
        assert!(err.to_string().contains("duplicate view id"), "{err}");
    }

    #[test]
    fn matches_txt_round_trip_and_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("matches.txt");
        std::fs::write(
            &path,
            "# comment line\nva vb 1.5 2.5 3.25 4.0  # trailing comment\n\nvb vc 0 0 1 1\n",
        )
        .unwrap();
        let pairs = read_matches_txt(&path).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].view_i, "va");
        assert_eq!(pairs[0].x_j, Vector2::new(3.25, 4.0));

        let path2 = dir.path().join("matches2.txt");
        write_matches_txt(&path2, &pairs).unwrap();
        assert_eq!(read_matches_txt(&path2).unwrap(), pairs);
    }

    #[test]
    fn matches_txt_rejects_self_pair() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("matches.txt");
        std::fs::write(&path, "va va 1 2 3 4\n").unwrap();
        assert!(read_matches_txt(&path).is_err());
    }
}
