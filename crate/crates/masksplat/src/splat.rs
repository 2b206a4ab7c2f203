//! Per-view geometry: 3D covariance construction, EWA projection of a
//! Gaussian onto the image plane, and per-pixel density.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3, Vector4};

use crate::camera::Camera;
use crate::cloud::GaussianCloud;
use crate::error::{Error, Result};
use crate::options::RenderOptions;
use crate::real::Real;
use crate::sh;

/// A Gaussian projected into one camera.
#[derive(Debug, Clone)]
pub struct Splat2D<T: Real> {
    /// Projected center in pixel coordinates.
    pub mean: Vector2<T>,
    /// Projected 2D covariance after the low-pass floor.
    pub cov: Matrix2<T>,
    /// Inverse of `cov`; symmetric positive-definite.
    pub cov_inv: Matrix2<T>,
    /// Camera-space depth.
    pub depth: T,
    /// View-dependent color, clamped to be non-negative.
    pub color: Vector3<T>,
    /// Activated opacity in (0, 1).
    pub opacity: T,
    /// Footprint radius in pixels (infinite in verification mode).
    pub radius: T,
    /// Index into the source [`GaussianCloud`].
    pub source: u32,
}

/// Rotation matrix of a quaternion in (w, x, y, z) order; normalizes first.
pub fn rotation_from_quaternion<T: Real>(q: &Vector4<T>) -> Matrix3<T> {
    let n = q.norm();
    let (w, x, y, z) = (q.x / n, q.y / n, q.z / n, q.w / n);
    let two = T::of(2.0);
    Matrix3::new(
        T::one() - two * (y * y + z * z),
        two * (x * y - w * z),
        two * (x * z + w * y),
        two * (x * y + w * z),
        T::one() - two * (x * x + z * z),
        two * (y * z - w * x),
        two * (x * z - w * y),
        two * (y * z + w * x),
        T::one() - two * (x * x + y * y),
    )
}

/// World-space covariance `R * diag(s^2) * R^T` with `s = exp(log_scales)`.
pub fn build_covariance<T: Real>(
    rotation: &Vector4<T>,
    log_scales: &Vector3<T>,
) -> Result<Matrix3<T>> {
    if rotation.norm() == T::zero() {
        return Err(Error::InvalidParameter("zero quaternion".into()));
    }
    let r = rotation_from_quaternion(rotation);
    let s = log_scales.map(|v| v.exp());
    // M = R * diag(s); covariance = M * M^T.
    let m = Matrix3::from_columns(&[
        r.column(0) * s.x,
        r.column(1) * s.y,
        r.column(2) * s.z,
    ]);
    Ok(m * m.transpose())
}

/// Jacobian of the pinhole projection at a camera-space point.
pub fn projection_jacobian<T: Real>(camera: &Camera<T>, t: &Vector3<T>) -> Matrix2x3<T> {
    let inv_z = T::one() / t.z;
    let inv_z2 = inv_z * inv_z;
    Matrix2x3::new(
        camera.fx * inv_z,
        T::zero(),
        -camera.fx * t.x * inv_z2,
        T::zero(),
        camera.fy * inv_z,
        -camera.fy * t.y * inv_z2,
    )
}

pub(crate) enum ProjectOutcome<T: Real> {
    Visible(Splat2D<T>),
    BehindNearClip,
    OffImage,
    /// Opacity so low that no pixel can pass the alpha cutoff.
    BelowCutoff,
    DegenerateCovariance,
}

/// Footprint radius in units of the largest covariance eigenvalue's sigma.
///
/// 3 sigma covers the bulk of the Gaussian; for high opacities the radius
/// is widened to the full support of the alpha cutoff so that culling never
/// discards a pixel the cutoff would keep.
fn footprint_sigmas(opacity: f64, opts: &RenderOptions) -> f64 {
    let o = opacity.min(opts.alpha_clamp);
    if opts.alpha_cutoff <= 0.0 {
        return f64::INFINITY;
    }
    let support = (2.0 * (o / opts.alpha_cutoff).ln()).max(0.0).sqrt();
    support.max(3.0)
}

pub(crate) fn project_one<T: Real>(
    index: usize,
    cloud: &GaussianCloud<T>,
    camera: &Camera<T>,
    opts: &RenderOptions,
) -> ProjectOutcome<T> {
    let t = camera.to_camera(&cloud.centers[index]);
    if t.z <= camera.near_clip {
        return ProjectOutcome::BehindNearClip;
    }
    let opacity = cloud.opacity(index);
    if !opts.unbounded_footprint && opacity.to_f64() <= opts.alpha_cutoff {
        return ProjectOutcome::BelowCutoff;
    }

    let mean = Vector2::new(
        camera.fx * t.x / t.z + camera.cx,
        camera.fy * t.y / t.z + camera.cy,
    );

    let sigma_world = match build_covariance(&cloud.rotations[index], &cloud.log_scales[index]) {
        Ok(m) => m,
        Err(_) => return ProjectOutcome::DegenerateCovariance,
    };
    let j = projection_jacobian(camera, &t);
    let jw = j * camera.rotation;
    let mut cov = jw * sigma_world * jw.transpose();
    let floor = T::of(opts.covariance_floor);
    cov[(0, 0)] += floor;
    cov[(1, 1)] += floor;

    let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
    if det <= T::zero() {
        return ProjectOutcome::DegenerateCovariance;
    }
    let inv_det = T::one() / det;
    let cov_inv = Matrix2::new(
        cov[(1, 1)] * inv_det,
        -cov[(0, 1)] * inv_det,
        -cov[(1, 0)] * inv_det,
        cov[(0, 0)] * inv_det,
    );

    let radius = if opts.unbounded_footprint {
        T::of(f64::INFINITY)
    } else {
        let half_trace = (cov[(0, 0)] + cov[(1, 1)]) * T::of(0.5);
        let disc = (half_trace * half_trace - det).max(T::zero());
        let lambda_max = half_trace + disc.sqrt();
        lambda_max.sqrt() * T::of(footprint_sigmas(opacity.to_f64(), opts))
    };

    if !opts.unbounded_footprint {
        let w = T::of(camera.width as f64);
        let h = T::of(camera.height as f64);
        if mean.x + radius < T::zero()
            || mean.x - radius > w
            || mean.y + radius < T::zero()
            || mean.y - radius > h
        {
            return ProjectOutcome::OffImage;
        }
    }

    let dir = sh::safe_normalize(cloud.centers[index] - camera.center());
    let color = sh::eval(cloud.sh_slice(index), &dir, cloud.sh_degree);

    ProjectOutcome::Visible(Splat2D {
        mean,
        cov,
        cov_inv,
        depth: t.z,
        color,
        opacity,
        radius,
        source: index as u32,
    })
}

/// Project one Gaussian; `None` when culled (behind the near plane, off
/// image, or with a degenerate footprint).
pub fn project_splat<T: Real>(
    index: usize,
    cloud: &GaussianCloud<T>,
    camera: &Camera<T>,
    opts: &RenderOptions,
) -> Option<Splat2D<T>> {
    match project_one(index, cloud, camera, opts) {
        ProjectOutcome::Visible(s) => Some(s),
        _ => None,
    }
}

/// Cull counters from projecting a whole cloud.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProjectionStats {
    pub visible: usize,
    pub behind_near_clip: usize,
    pub off_image: usize,
    pub below_cutoff: usize,
    pub degenerate: usize,
}

/// Project every Gaussian of the cloud for one camera.
pub fn project_cloud<T: Real>(
    cloud: &GaussianCloud<T>,
    camera: &Camera<T>,
    opts: &RenderOptions,
) -> (Vec<Splat2D<T>>, ProjectionStats) {
    let mut splats = Vec::with_capacity(cloud.len());
    let mut stats = ProjectionStats::default();
    for i in 0..cloud.len() {
        match project_one(i, cloud, camera, opts) {
            ProjectOutcome::Visible(s) => {
                stats.visible += 1;
                splats.push(s);
            }
            ProjectOutcome::BehindNearClip => stats.behind_near_clip += 1,
            ProjectOutcome::OffImage => stats.off_image += 1,
            ProjectOutcome::BelowCutoff => stats.below_cutoff += 1,
            ProjectOutcome::DegenerateCovariance => stats.degenerate += 1,
        }
    }
    (splats, stats)
}

/// The unclamped 2D Gaussian falloff at a pixel.
#[inline]
pub fn eval_falloff<T: Real>(splat: &Splat2D<T>, pixel: &Vector2<T>) -> T {
    let d = pixel - splat.mean;
    let m = d.x * (splat.cov_inv[(0, 0)] * d.x + splat.cov_inv[(0, 1)] * d.y)
        + d.y * (splat.cov_inv[(1, 0)] * d.x + splat.cov_inv[(1, 1)] * d.y);
    (-T::of(0.5) * m).exp()
}

/// Per-pixel density `alpha = min(opacity * falloff, alpha_clamp)`.
#[inline]
pub fn eval_alpha<T: Real>(splat: &Splat2D<T>, pixel: &Vector2<T>, opts: &RenderOptions) -> T {
    (splat.opacity * eval_falloff(splat, pixel)).min(T::of(opts.alpha_clamp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::logit;
    use approx::assert_relative_eq;

    fn straight_camera(fx: f64, w: u32, h: u32) -> Camera<f64> {
        Camera {
            width: w,
            height: h,
            fx,
            fy: fx,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            near_clip: 0.01,
        }
    }

    fn one_gaussian(center: Vector3<f64>, opacity: f64, log_scale: f64) -> GaussianCloud<f64> {
        GaussianCloud {
            centers: vec![center],
            opacity_logits: vec![logit(opacity)],
            log_scales: vec![Vector3::repeat(log_scale)],
            rotations: vec![Vector4::new(1.0, 0.0, 0.0, 0.0)],
            sh: vec![0.5, 0.0, -0.2],
            sh_degree: 0,
            mask_logits: vec![Vector2::new(3.0, 0.0)],
        }
    }

    #[test]
    fn covariance_identity_cases() {
        let q = Vector4::new(1.0, 0.0, 0.0, 0.0);
        let c = build_covariance(&q, &Vector3::zeros()).unwrap();
        assert_relative_eq!(c, Matrix3::identity(), epsilon = 1e-15);

        let c = build_covariance(&q, &Vector3::new(2.0_f64.ln(), 0.0, 0.0)).unwrap();
        assert_relative_eq!(c, Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)), epsilon = 1e-12);
    }

    #[test]
    fn covariance_rotated_matches_direct_multiplication() {
        // 90 degrees about z. Oracle: R S S^T R^T computed with an
        // independently constructed rotation matrix.
        let half = std::f64::consts::FRAC_PI_4;
        let q = Vector4::new(half.cos(), 0.0, 0.0, half.sin());
        let got = build_covariance(&q, &Vector3::new(2.0_f64.ln(), 0.0, 0.0)).unwrap();

        let r = nalgebra::Rotation3::from_axis_angle(
            &Vector3::z_axis(),
            std::f64::consts::FRAC_PI_2,
        );
        let s = Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0));
        let m = r.matrix() * s;
        let expect = m * m.transpose();
        assert_relative_eq!(got, expect, epsilon = 1e-12);
        assert_relative_eq!(got, Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0)), epsilon = 1e-12);
    }

    #[test]
    fn covariance_rejects_zero_quaternion() {
        let err = build_covariance(&Vector4::zeros(), &Vector3::zeros());
        assert!(matches!(err, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn covariance_eigenvalues_are_squared_scales() {
        let q = Vector4::new(0.3, -0.4, 0.8, 0.1);
        let ls = Vector3::new(-0.5, 0.2, 0.9);
        let c = build_covariance(&q, &ls).unwrap();
        let mut eig: Vec<f64> = c.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expect: Vec<f64> = ls.iter().map(|v| (2.0 * v).exp()).collect();
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in eig.iter().zip(&expect) {
            assert_relative_eq!(a, b, max_relative = 1e-10);
        }
    }

    #[test]
    fn covariance_invariant_to_quaternion_sign() {
        let q = Vector4::new(0.3, -0.4, 0.8, 0.1);
        let ls = Vector3::new(-0.5, 0.2, 0.9);
        assert_eq!(
            build_covariance(&q, &ls).unwrap(),
            build_covariance(&(-q), &ls).unwrap()
        );
    }

    #[test]
    fn projects_on_axis_point_to_principal_point() {
        let cam = straight_camera(100.0, 100, 100);
        let cloud = one_gaussian(Vector3::new(0.0, 0.0, 1.0), 0.5, -3.0);
        let opts = RenderOptions::default();
        let s = project_splat(0, &cloud, &cam, &opts).unwrap();
        assert_relative_eq!(s.mean, Vector2::new(50.0, 50.0), epsilon = 1e-12);
        assert_relative_eq!(s.depth, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn culls_behind_near_clip() {
        let cam = straight_camera(100.0, 100, 100);
        let opts = RenderOptions::default();
        for z in [0.0, -1.0, 0.005] {
            let cloud = one_gaussian(Vector3::new(0.0, 0.0, z), 0.5, -3.0);
            assert!(project_splat(0, &cloud, &cam, &opts).is_none());
        }
    }

    #[test]
    fn on_axis_isotropic_covariance_matches_finite_difference_jacobian() {
        // Oracle: differentiate the projection numerically and form
        // J Sigma J^T + floor by hand.
        let cam = straight_camera(120.0, 64, 64);
        let z = 2.5;
        let sigma = 0.07;
        let cloud = one_gaussian(Vector3::new(0.0, 0.0, z), 0.6, sigma.ln());
        let opts = RenderOptions::default();
        let s = project_splat(0, &cloud, &cam, &opts).unwrap();

        let project = |t: Vector3<f64>| {
            Vector2::new(
                cam.fx * t.x / t.z + cam.cx,
                cam.fy * t.y / t.z + cam.cy,
            )
        };
        let h = 1e-6;
        let t0 = Vector3::new(0.0, 0.0, z);
        let mut j = Matrix2x3::zeros();
        for axis in 0..3 {
            let mut tp = t0;
            let mut tm = t0;
            tp[axis] += h;
            tm[axis] -= h;
            let d = (project(tp) - project(tm)) / (2.0 * h);
            j[(0, axis)] = d.x;
            j[(1, axis)] = d.y;
        }
        let world = Matrix3::identity() * sigma * sigma;
        let mut expect = j * world * j.transpose();
        expect[(0, 0)] += opts.covariance_floor;
        expect[(1, 1)] += opts.covariance_floor;
        assert_relative_eq!(s.cov, expect, max_relative = 1e-6);

        // Closed form for the on-axis isotropic case.
        let diag = (cam.fx * sigma / z).powi(2) + opts.covariance_floor;
        assert_relative_eq!(s.cov[(0, 0)], diag, max_relative = 1e-9);
        assert_relative_eq!(s.cov[(1, 1)], diag, max_relative = 1e-9);
    }

    #[test]
    fn alpha_examples() {
        let cam = straight_camera(100.0, 100, 100);
        let opts = RenderOptions::default();

        let cloud = one_gaussian(Vector3::new(0.0, 0.0, 1.0), 0.5, -2.0);
        let s = project_splat(0, &cloud, &cam, &opts).unwrap();
        assert_relative_eq!(eval_alpha(&s, &s.mean.clone(), &opts), 0.5, epsilon = 1e-12);

        // Unit inverse covariance, offset sqrt(2 ln 2): falloff is exactly 1/2.
        let splat = Splat2D {
            mean: Vector2::new(10.0, 10.0),
            cov: Matrix2::identity(),
            cov_inv: Matrix2::identity(),
            depth: 1.0,
            color: Vector3::new(1.0, 0.0, 0.0),
            opacity: 1.0,
            radius: 5.0,
            source: 0,
        };
        let px = Vector2::new(10.0 + (2.0 * 2.0_f64.ln()).sqrt(), 10.0);
        assert_relative_eq!(eval_alpha(&splat, &px, &opts), 0.5, epsilon = 1e-12);

        // Opacity 1 at the center clamps to 0.99.
        assert_relative_eq!(eval_alpha(&splat, &splat.mean.clone(), &opts), 0.99, epsilon = 1e-15);
    }

    #[test]
    fn alpha_monotone_in_mahalanobis_distance() {
        let splat = Splat2D {
            mean: Vector2::new(3.0, 7.0),
            cov: Matrix2::new(2.0, 0.6, 0.6, 1.0),
            cov_inv: Matrix2::new(2.0, 0.6, 0.6, 1.0).try_inverse().unwrap(),
            depth: 1.0,
            color: Vector3::zeros(),
            opacity: 0.8,
            radius: 10.0,
            source: 0,
        };
        let opts = RenderOptions::default();
        let mut prev = f64::INFINITY;
        for k in 0..50 {
            let px = splat.mean + Vector2::new(0.21, -0.13) * k as f64;
            let a = eval_alpha(&splat, &px, &opts);
            assert!(a <= prev + 1e-15);
            prev = a;
        }
    }

    #[test]
    fn projected_center_alpha_is_clamped_opacity() {
        let cam = straight_camera(90.0, 64, 64);
        let opts = RenderOptions::default();
        for (o, expect) in [(0.25, 0.25), (0.999, 0.99)] {
            let cloud = one_gaussian(Vector3::new(0.05, -0.02, 1.4), o, -2.3);
            let s = project_splat(0, &cloud, &cam, &opts).unwrap();
            assert_relative_eq!(eval_alpha(&s, &s.mean.clone(), &opts), expect, epsilon = 1e-9);
        }
    }

    #[test]
    fn off_image_splat_is_culled_but_unbounded_mode_keeps_it() {
        let cam = straight_camera(100.0, 64, 64);
        let cloud = one_gaussian(Vector3::new(10.0, 0.0, 1.0), 0.9, -3.0);
        let opts = RenderOptions::default();
        assert!(project_splat(0, &cloud, &cam, &opts).is_none());
        let vopts = RenderOptions::default().for_verification();
        assert!(project_splat(0, &cloud, &cam, &vopts).is_some());
    }
}
