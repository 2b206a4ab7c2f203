//! Analytic backward pass.
//!
//! Per pixel the contributor list is replayed back to front while
//! maintaining `b`, the color composited behind the current splat. The
//! mask gradient combines the blending term `alpha * T * dL/dc . (c - b)`
//! with the background-occlusion term `-alpha * T_final / (1 - alpha * M)
//! * dL/dc . c_bg`; it is nonzero even for masked splats. Alpha-path
//! gradients are gated by the mask, so a masked splat updates only its
//! existence scores.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;

use crate::camera::Camera;
use crate::cloud::GaussianCloud;
use crate::error::{Error, Result};
use crate::options::{MaskApplication, RenderOptions};
use crate::real::Real;
use crate::sh;
use crate::splat::{
    build_covariance, eval_falloff, projection_jacobian, rotation_from_quaternion, Splat2D,
};

use super::FrameBuffer;

/// Accumulated gradients for every Gaussian parameter of one backward pass.
#[derive(Debug, Clone)]
pub struct GradientSet<T: Real> {
    pub d_centers: Vec<Vector3<T>>,
    pub d_opacity_logits: Vec<T>,
    pub d_log_scales: Vec<Vector3<T>>,
    pub d_rotations: Vec<Vector4<T>>,
    pub d_sh: Vec<T>,
    /// Gradient with respect to the soft mask relaxation; chained into the
    /// two logits by the mask engine.
    pub d_mask_soft: Vec<T>,
    /// Screen-space positional gradient per Gaussian, kept for
    /// densification statistics.
    pub d_mean2d: Vec<Vector2<T>>,
    /// Contributor records dropped by the per-pixel cap during forward.
    pub overflow_count: usize,
    /// Times the background-term denominator guard engaged.
    pub guard_events: usize,
}

impl<T: Real> GradientSet<T> {
    pub fn zeros(n: usize, sh_stride: usize) -> Self {
        GradientSet {
            d_centers: vec![Vector3::zeros(); n],
            d_opacity_logits: vec![T::zero(); n],
            d_log_scales: vec![Vector3::zeros(); n],
            d_rotations: vec![Vector4::zeros(); n],
            d_sh: vec![T::zero(); n * sh_stride],
            d_mask_soft: vec![T::zero(); n],
            d_mean2d: vec![Vector2::zeros(); n],
            overflow_count: 0,
            guard_events: 0,
        }
    }

    /// NaN or Inf anywhere in a gradient is a hard failure.
    pub fn check_finite(&self) -> Result<()> {
        let bad = |name: &str| Err(Error::NonFinite(format!("gradient class {name}")));
        if !self.d_centers.iter().all(|v| v.iter().all(|x| x.is_finite())) {
            return bad("centers");
        }
        if !self.d_opacity_logits.iter().all(|x| x.is_finite()) {
            return bad("opacity_logits");
        }
        if !self.d_log_scales.iter().all(|v| v.iter().all(|x| x.is_finite())) {
            return bad("log_scales");
        }
        if !self.d_rotations.iter().all(|v| v.iter().all(|x| x.is_finite())) {
            return bad("rotations");
        }
        if !self.d_sh.iter().all(|x| x.is_finite()) {
            return bad("sh");
        }
        if !self.d_mask_soft.iter().all(|x| x.is_finite()) {
            return bad("mask_soft");
        }
        Ok(())
    }
}

/// Self-contained state of one consumed splat for a pixel's backward pass,
/// in front-to-back order.
#[derive(Debug, Clone, Copy)]
pub struct PixelContrib<T: Real> {
    pub alpha: T,
    pub transmittance: T,
    pub mask: T,
    pub color: Vector3<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContributorGrad<T: Real> {
    pub d_mask: T,
    pub d_alpha: T,
    pub d_color: Vector3<T>,
}

#[derive(Debug, Clone)]
pub struct PixelBackward<T: Real> {
    pub per_contributor: Vec<ContributorGrad<T>>,
    pub guard_events: usize,
}

/// Backward pass over one pixel's contributor list.
///
/// Returns, per contributor, the gradients of the loss with respect to its
/// mask value, its alpha, and its color. `d_alpha` is exactly zero for a
/// masked splat; `d_mask` is not.
pub fn backward_pixel<T: Real>(
    contributors: &[PixelContrib<T>],
    final_transmittance: T,
    dl_dc: &Vector3<T>,
    background: &Vector3<T>,
) -> PixelBackward<T> {
    let mut out = vec![
        ContributorGrad {
            d_mask: T::zero(),
            d_alpha: T::zero(),
            d_color: Vector3::zeros(),
        };
        contributors.len()
    ];
    let mut guard_events = 0usize;
    let bg_dot = dl_dc.dot(background);
    let guard = T::of(1e-8);

    // Color composited behind the current splat, background excluded.
    let mut behind = Vector3::zeros();
    for (i, ct) in contributors.iter().enumerate().rev() {
        let ma = ct.mask * ct.alpha;
        let mut denom = T::one() - ma;
        if denom < guard {
            denom = guard;
            guard_events += 1;
        }
        let color_pull = dl_dc.dot(&(ct.color - behind));
        let bg_push = final_transmittance / denom * bg_dot;
        let lever = ct.transmittance * color_pull - bg_push;
        out[i] = ContributorGrad {
            d_mask: ct.alpha * lever,
            d_alpha: ct.mask * lever,
            d_color: dl_dc * (ma * ct.transmittance),
        };
        behind = ct.color * ma + behind * (T::one() - ma);
    }
    PixelBackward {
        per_contributor: out,
        guard_events,
    }
}

/// Gradients of alpha with respect to the splat's screen-space quantities,
/// chained through the opacity sigmoid. All zero where the alpha clamp is
/// active.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaChainGrad<T: Real> {
    pub d_opacity_logit: T,
    pub d_mean2d: Vector2<T>,
    pub d_cov_inv: Matrix2<T>,
}

/// Chain a gradient on alpha through `alpha = o * exp(-0.5 d^T S^-1 d)`.
pub fn backward_alpha_chain<T: Real>(
    d_alpha: T,
    splat: &Splat2D<T>,
    pixel: &Vector2<T>,
    opts: &RenderOptions,
) -> AlphaChainGrad<T> {
    let alpha = splat.opacity * eval_falloff(splat, pixel);
    if alpha >= T::of(opts.alpha_clamp) {
        return AlphaChainGrad {
            d_opacity_logit: T::zero(),
            d_mean2d: Vector2::zeros(),
            d_cov_inv: Matrix2::zeros(),
        };
    }
    let d = pixel - splat.mean;
    let sd = splat.cov_inv * d;
    let common = d_alpha * alpha;
    AlphaChainGrad {
        // dalpha/do = falloff; chained by sigmoid': o(1-o). falloff * o = alpha.
        d_opacity_logit: common * (T::one() - splat.opacity),
        d_mean2d: sd * common,
        d_cov_inv: d * d.transpose() * (-T::of(0.5) * common),
    }
}

/// Per-Gaussian parameter gradients produced by the projection chain.
#[derive(Debug, Clone)]
pub struct SplatParamGrad<T: Real> {
    pub d_center: Vector3<T>,
    pub d_log_scales: Vector3<T>,
    pub d_rotation: Vector4<T>,
    pub d_sh: Vec<T>,
}

/// Partial derivatives of the quaternion-to-rotation map at a unit
/// quaternion (w, x, y, z).
fn rotation_quat_jacobian<T: Real>(q: &Vector4<T>) -> [Matrix3<T>; 4] {
    let (w, x, y, z) = (q.x, q.y, q.z, q.w);
    let two = T::of(2.0);
    let zero = T::zero();
    [
        Matrix3::new(zero, -z, y, z, zero, -x, -y, x, zero) * two,
        Matrix3::new(zero, y, z, y, -two * x, -w, z, w, -two * x) * two,
        Matrix3::new(-two * y, x, w, x, zero, z, -w, z, -two * y) * two,
        Matrix3::new(-two * z, -w, x, w, -two * z, y, x, y, zero) * two,
    ]
}

/// Chain screen-space gradients of one splat back to its 3D parameters:
/// through the covariance inverse, the projection Jacobian, the
/// quaternion-to-rotation map, the scale exponential, and the SH basis
/// (including the view-direction path into the center).
pub fn backward_projection_chain<T: Real>(
    d_mean2d: &Vector2<T>,
    d_cov_inv: &Matrix2<T>,
    d_color: &Vector3<T>,
    splat: &Splat2D<T>,
    cloud: &GaussianCloud<T>,
    camera: &Camera<T>,
) -> SplatParamGrad<T> {
    let i = splat.source as usize;
    let stride = cloud.sh_stride();
    let mut out = SplatParamGrad {
        d_center: Vector3::zeros(),
        d_log_scales: Vector3::zeros(),
        d_rotation: Vector4::zeros(),
        d_sh: vec![T::zero(); stride],
    };

    // Color path: SH coefficients plus the view direction into the center.
    if *d_color != Vector3::zeros() {
        let raw_dir = cloud.centers[i] - camera.center();
        let norm = raw_dir.norm();
        if norm.to_f64() > 1e-12 {
            let dir = raw_dir / norm;
            let coeffs = cloud.sh_slice(i);
            let degree = cloud.sh_degree;
            let basis = sh::basis(&dir, degree);
            let grads = sh::basis_grad(&dir, degree);
            let raw = sh::eval_raw(coeffs, &dir, degree);
            let mut d_dir = Vector3::zeros();
            for (k, bk) in basis.iter().enumerate().take(sh::coeff_count(degree)) {
                for c in 0..3 {
                    // The color clamp zeroes the gradient of a clamped channel.
                    if raw[c] > T::zero() {
                        out.d_sh[3 * k + c] = *bk * d_color[c];
                        d_dir += grads[k] * (coeffs[3 * k + c] * d_color[c]);
                    }
                }
            }
            // Through normalization: (I - dir dir^T) / |raw|.
            out.d_center += (d_dir - dir * dir.dot(&d_dir)) / norm;
        }
    }

    let t = camera.to_camera(&cloud.centers[i]);
    let j = projection_jacobian(camera, &t);
    let mut d_t = j.transpose() * d_mean2d;

    if *d_cov_inv != Matrix2::zeros() {
        // d(S^-1) -> d(S) for the floored 2D covariance.
        let d_cov = -(splat.cov_inv * d_cov_inv * splat.cov_inv);

        let w = camera.rotation;
        let jw = j * w;
        let sigma_world = build_covariance(&cloud.rotations[i], &cloud.log_scales[i])
            .expect("validated cloud");
        let d_sigma_world = jw.transpose() * d_cov * jw;

        // cov = J V J^T with V the camera-space covariance.
        let v_cam = w * sigma_world * w.transpose();
        let d_j = d_cov * j * v_cam.transpose() + d_cov.transpose() * j * v_cam;

        // J's own dependence on the camera-space point.
        let inv_z = T::one() / t.z;
        let inv_z2 = inv_z * inv_z;
        let inv_z3 = inv_z2 * inv_z;
        let two = T::of(2.0);
        d_t.x += d_j[(0, 2)] * (-camera.fx * inv_z2);
        d_t.y += d_j[(1, 2)] * (-camera.fy * inv_z2);
        d_t.z += d_j[(0, 0)] * (-camera.fx * inv_z2)
            + d_j[(0, 2)] * (two * camera.fx * t.x * inv_z3)
            + d_j[(1, 1)] * (-camera.fy * inv_z2)
            + d_j[(1, 2)] * (two * camera.fy * t.y * inv_z3);

        // Sigma = M M^T with M = R diag(s).
        let q = cloud.rotations[i];
        let qn = q.norm();
        let qh = q / qn;
        let r = rotation_from_quaternion(&q);
        let s = cloud.scales(i);
        let m = Matrix3::from_columns(&[r.column(0) * s.x, r.column(1) * s.y, r.column(2) * s.z]);
        let d_m = (d_sigma_world + d_sigma_world.transpose()) * m;

        for axis in 0..3 {
            let ds = d_m.column(axis).dot(&r.column(axis));
            out.d_log_scales[axis] = ds * s[axis];
        }

        let d_r = Matrix3::from_columns(&[
            d_m.column(0) * s.x,
            d_m.column(1) * s.y,
            d_m.column(2) * s.z,
        ]);
        let jq = rotation_quat_jacobian(&qh);
        let mut d_qh = Vector4::zeros();
        for k in 0..4 {
            d_qh[k] = (jq[k].component_mul(&d_r)).sum();
        }
        // Through quaternion normalization.
        out.d_rotation = (d_qh - qh * qh.dot(&d_qh)) / qn;
    }

    out.d_center += camera.rotation.transpose() * d_t;
    out
}

#[derive(Clone)]
struct SplatAccum<T: Real> {
    d_color: Vector3<T>,
    d_opacity_logit: T,
    d_mean2d: Vector2<T>,
    d_cov_inv: Matrix2<T>,
    d_mask: T,
}

impl<T: Real> Default for SplatAccum<T> {
    fn default() -> Self {
        SplatAccum {
            d_color: Vector3::zeros(),
            d_opacity_logit: T::zero(),
            d_mean2d: Vector2::zeros(),
            d_cov_inv: Matrix2::zeros(),
            d_mask: T::zero(),
        }
    }
}

struct BandResult<T: Real> {
    accums: Vec<SplatAccum<T>>,
    guard_events: usize,
}

/// Full backward pass over a rendered frame.
///
/// `masks` are the same per-Gaussian values the forward consumed and
/// `dl_dc` the loss gradient per pixel. The frame must carry contributor
/// records. Work is parallel over pixel bands mirroring the forward tiles;
/// partial sums merge in a fixed order so results are bitwise reproducible
/// regardless of thread count.
pub fn backward<T: Real>(
    cloud: &GaussianCloud<T>,
    camera: &Camera<T>,
    splats: &[Splat2D<T>],
    frame: &FrameBuffer<T>,
    masks: &[T],
    dl_dc: &[Vector3<T>],
    background: &Vector3<T>,
    opts: &RenderOptions,
) -> Result<GradientSet<T>> {
    let records = frame.records.as_ref().ok_or_else(|| {
        Error::InvalidParameter("backward requires a frame rendered with contributor records".into())
    })?;
    if masks.len() != cloud.len() {
        return Err(Error::LengthMismatch(format!(
            "{} masks for {} Gaussians",
            masks.len(),
            cloud.len()
        )));
    }
    if dl_dc.len() != frame.n_pixels() {
        return Err(Error::LengthMismatch(format!(
            "{} pixel gradients for {} pixels",
            dl_dc.len(),
            frame.n_pixels()
        )));
    }

    let width = frame.width as usize;
    let height = frame.height as usize;
    let band = opts.tile_size.max(1);
    let bands: Vec<(usize, usize)> = (0..height)
        .step_by(band)
        .map(|y0| (y0, (y0 + band).min(height)))
        .collect();

    let run_band = |&(y0, y1): &(usize, usize)| -> BandResult<T> {
        let mut accums = vec![SplatAccum::<T>::default(); splats.len()];
        let mut guard_events = 0usize;
        let mut contribs: Vec<PixelContrib<T>> = Vec::new();
        for y in y0..y1 {
            for x in 0..width {
                let idx = y * width + x;
                let recs = &records[idx];
                if recs.is_empty() {
                    continue;
                }
                let grad_pixel = dl_dc[idx];
                contribs.clear();
                for r in recs {
                    let splat = &splats[r.splat as usize];
                    let mask = match opts.mask_application {
                        MaskApplication::Blending => masks[splat.source as usize],
                        MaskApplication::OpacityMultiply => T::one(),
                    };
                    contribs.push(PixelContrib {
                        alpha: r.alpha,
                        transmittance: r.transmittance,
                        mask,
                        color: splat.color,
                    });
                }
                let px = backward_pixel(
                    &contribs,
                    frame.final_transmittance[idx],
                    &grad_pixel,
                    background,
                );
                guard_events += px.guard_events;

                let pixel = Vector2::new(T::of(x as f64 + 0.5), T::of(y as f64 + 0.5));
                for (r, g) in recs.iter().zip(&px.per_contributor) {
                    let splat = &splats[r.splat as usize];
                    let acc = &mut accums[r.splat as usize];
                    acc.d_color += g.d_color;
                    match opts.mask_application {
                        MaskApplication::Blending => {
                            acc.d_mask += g.d_mask;
                            if g.d_alpha != T::zero() && r.alpha < T::of(opts.alpha_clamp) {
                                let d = pixel - splat.mean;
                                let common = g.d_alpha * r.alpha;
                                acc.d_opacity_logit += common * (T::one() - splat.opacity);
                                acc.d_mean2d += (splat.cov_inv * d) * common;
                                acc.d_cov_inv += d * d.transpose() * (-T::of(0.5) * common);
                            }
                        }
                        MaskApplication::OpacityMultiply => {
                            // alpha' = mask * opacity * falloff; the recorded
                            // alpha already includes the mask.
                            if g.d_alpha != T::zero() && r.alpha < T::of(opts.alpha_clamp) {
                                let d = pixel - splat.mean;
                                let falloff = eval_falloff(splat, &pixel);
                                let m = masks[splat.source as usize];
                                acc.d_mask += g.d_alpha * splat.opacity * falloff;
                                acc.d_opacity_logit +=
                                    g.d_alpha * m * falloff * splat.opacity * (T::one() - splat.opacity);
                                let common = g.d_alpha * r.alpha;
                                acc.d_mean2d += (splat.cov_inv * d) * common;
                                acc.d_cov_inv += d * d.transpose() * (-T::of(0.5) * common);
                            }
                        }
                    }
                }
            }
        }
        BandResult {
            accums,
            guard_events,
        }
    };

    let band_results: Vec<BandResult<T>> = bands.par_iter().map(run_band).collect();

    // Fixed-order reduction keeps gradients bitwise deterministic.
    let mut accums = vec![SplatAccum::<T>::default(); splats.len()];
    let mut guard_events = 0usize;
    for br in band_results {
        guard_events += br.guard_events;
        for (a, b) in accums.iter_mut().zip(br.accums) {
            a.d_color += b.d_color;
            a.d_opacity_logit += b.d_opacity_logit;
            a.d_mean2d += b.d_mean2d;
            a.d_cov_inv += b.d_cov_inv;
            a.d_mask += b.d_mask;
        }
    }

    // Per-splat chains to 3D parameters; each splat owns disjoint output
    // slots, so the scatter below is a plain loop.
    let chained: Vec<Option<SplatParamGrad<T>>> = splats
        .par_iter()
        .zip(&accums)
        .map(|(splat, acc)| {
            if acc.d_color == Vector3::zeros()
                && acc.d_mean2d == Vector2::zeros()
                && acc.d_cov_inv == Matrix2::zeros()
            {
                None
            } else {
                Some(backward_projection_chain(
                    &acc.d_mean2d,
                    &acc.d_cov_inv,
                    &acc.d_color,
                    splat,
                    cloud,
                    camera,
                ))
            }
        })
        .collect();

    let mut grads = GradientSet::zeros(cloud.len(), cloud.sh_stride());
    grads.overflow_count = frame.overflow_count;
    grads.guard_events = guard_events;
    let stride = cloud.sh_stride();
    for ((splat, acc), chain) in splats.iter().zip(&accums).zip(chained) {
        let g = splat.source as usize;
        grads.d_mask_soft[g] += acc.d_mask;
        grads.d_opacity_logits[g] += acc.d_opacity_logit;
        grads.d_mean2d[g] += acc.d_mean2d;
        if let Some(chain) = chain {
            grads.d_centers[g] += chain.d_center;
            grads.d_log_scales[g] += chain.d_log_scales;
            grads.d_rotations[g] += chain.d_rotation;
            for (k, v) in chain.d_sh.iter().enumerate() {
                grads.d_sh[g * stride + k] += *v;
            }
        }
    }
    grads.check_finite()?;
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn contrib(alpha: f64, t: f64, mask: f64, color: [f64; 3]) -> PixelContrib<f64> {
        PixelContrib {
            alpha,
            transmittance: t,
            mask,
            color: Vector3::new(color[0], color[1], color[2]),
        }
    }

    #[test]
    fn single_present_splat_mask_gradient() {
        // One splat, alpha 0.5, red, black background, dL/dc = ones.
        let c = [contrib(0.5, 1.0, 1.0, [1.0, 0.0, 0.0])];
        let px = backward_pixel(&c, 0.5, &Vector3::new(1.0, 1.0, 1.0), &Vector3::zeros());
        let g = &px.per_contributor[0];
        assert_relative_eq!(g.d_mask, 0.5, epsilon = 1e-15);
        assert_relative_eq!(g.d_alpha, 0.5, epsilon = 1e-15);
        assert_relative_eq!(g.d_color, Vector3::new(0.5, 0.5, 0.5), epsilon = 1e-15);
    }

    #[test]
    fn masked_splat_keeps_mask_gradient_only() {
        let c = [contrib(0.5, 1.0, 0.0, [1.0, 0.0, 0.0])];
        let px = backward_pixel(&c, 1.0, &Vector3::new(1.0, 1.0, 1.0), &Vector3::zeros());
        let g = &px.per_contributor[0];
        assert_relative_eq!(g.d_mask, 0.5, epsilon = 1e-15);
        assert_eq!(g.d_alpha, 0.0);
        assert_eq!(g.d_color, Vector3::zeros());
    }

    #[test]
    fn white_background_penalizes_occluding_splat() {
        // Black splat over a white background that the loss wants kept.
        let c = [contrib(0.5, 1.0, 1.0, [0.0, 0.0, 0.0])];
        let px = backward_pixel(
            &c,
            0.5,
            &Vector3::new(1.0, 1.0, 1.0),
            &Vector3::new(1.0, 1.0, 1.0),
        );
        let g = &px.per_contributor[0];
        // alpha*T*(dL.(c-b)) = 0; -alpha*T_final/(1-alpha) * dL.bg = -1.5.
        assert_relative_eq!(g.d_mask, -1.5, epsilon = 1e-14);
        assert_eq!(px.guard_events, 0);
    }

    #[test]
    fn behind_color_uses_local_recursion() {
        // Two splats; the derivative of the front mask must see the local
        // color behind it, not the globally weighted one. Closed form for
        // c = M1 a1 c1 + M2 a2 c2 (1 - M1 a1): dc/dM1 = a1 (c1 - a2 M2 c2).
        let (a1, a2) = (0.4, 0.6);
        let c1 = Vector3::new(1.0, 0.0, 0.0);
        let c2 = Vector3::new(0.0, 1.0, 0.0);
        let contribs = [
            contrib(a1, 1.0, 1.0, [1.0, 0.0, 0.0]),
            contrib(a2, 1.0 - a1, 1.0, [0.0, 1.0, 0.0]),
        ];
        let t_final = (1.0 - a1) * (1.0 - a2);
        let w = Vector3::new(0.3, -0.7, 0.2);
        let px = backward_pixel(&contribs, t_final, &w, &Vector3::zeros());
        let expect = a1 * w.dot(&(c1 - c2 * a2));
        assert_relative_eq!(px.per_contributor[0].d_mask, expect, epsilon = 1e-14);
        // Back splat: plain alpha*T*(dL . c2).
        let expect_back = a2 * (1.0 - a1) * w.dot(&c2);
        assert_relative_eq!(px.per_contributor[1].d_mask, expect_back, epsilon = 1e-14);
    }

    #[test]
    fn denominator_guard_counts_events() {
        // alpha * mask numerically at 1: denominator floored, event counted.
        let c = [contrib(1.0 - 1e-12, 1.0, 1.0, [1.0, 1.0, 1.0])];
        let px = backward_pixel(
            &c,
            1e-12,
            &Vector3::new(1.0, 1.0, 1.0),
            &Vector3::new(1.0, 1.0, 1.0),
        );
        assert_eq!(px.guard_events, 1);
        assert!(px.per_contributor[0].d_mask.is_finite());
    }

    #[test]
    fn alpha_chain_zero_offset_and_clamp() {
        let splat = Splat2D {
            mean: Vector2::new(4.0, 4.0),
            cov: Matrix2::identity(),
            cov_inv: Matrix2::identity(),
            depth: 1.0,
            color: Vector3::zeros(),
            opacity: 0.7,
            radius: 10.0,
            source: 0,
        };
        let opts = RenderOptions::default();
        // At the center the mean-gradient vanishes.
        let g = backward_alpha_chain(1.0, &splat, &Vector2::new(4.0, 4.0), &opts);
        assert_eq!(g.d_mean2d, Vector2::zeros());
        assert!(g.d_opacity_logit > 0.0);

        // Clamp active: all alpha gradients are zero.
        let clamped = Splat2D {
            opacity: 1.0,
            ..splat
        };
        let g = backward_alpha_chain(1.0, &clamped, &Vector2::new(4.0, 4.0), &opts);
        assert_eq!(g.d_opacity_logit, 0.0);
        assert_eq!(g.d_mean2d, Vector2::zeros());
        assert_eq!(g.d_cov_inv, Matrix2::zeros());
    }

    #[test]
    fn alpha_chain_matches_finite_differences() {
        let splat = Splat2D {
            mean: Vector2::new(3.2, 5.1),
            cov: Matrix2::new(2.0, 0.3, 0.3, 1.5),
            cov_inv: Matrix2::new(2.0, 0.3, 0.3, 1.5).try_inverse().unwrap(),
            depth: 1.0,
            color: Vector3::zeros(),
            opacity: 0.62,
            radius: 10.0,
            source: 0,
        };
        let opts = RenderOptions::default();
        let pixel = Vector2::new(4.0, 4.4);
        let g = backward_alpha_chain(1.0, &splat, &pixel, &opts);

        let alpha_of = |s: &Splat2D<f64>| s.opacity * eval_falloff(s, &pixel);
        let h = 1e-6;

        // Opacity logit.
        let logit0 = (splat.opacity / (1.0 - splat.opacity)).ln();
        let mut sp = splat.clone();
        sp.opacity = 1.0 / (1.0 + (-(logit0 + h)).exp());
        let mut sm = splat.clone();
        sm.opacity = 1.0 / (1.0 + (-(logit0 - h)).exp());
        let num = (alpha_of(&sp) - alpha_of(&sm)) / (2.0 * h);
        assert_relative_eq!(num, g.d_opacity_logit, max_relative = 1e-5);

        // Mean.
        for axis in 0..2 {
            let mut sp = splat.clone();
            sp.mean[axis] += h;
            let mut sm = splat.clone();
            sm.mean[axis] -= h;
            let num = (alpha_of(&sp) - alpha_of(&sm)) / (2.0 * h);
            assert_relative_eq!(num, g.d_mean2d[axis], max_relative = 1e-5);
        }

        // Inverse covariance entries.
        for r in 0..2 {
            for c in 0..2 {
                let mut sp = splat.clone();
                sp.cov_inv[(r, c)] += h;
                let mut sm = splat.clone();
                sm.cov_inv[(r, c)] -= h;
                let num = (alpha_of(&sp) - alpha_of(&sm)) / (2.0 * h);
                assert_relative_eq!(num, g.d_cov_inv[(r, c)], max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn quaternion_gradient_is_tangent_to_normalization() {
        use crate::cloud::GaussianCloud;
        let cloud = GaussianCloud::<f64> {
            centers: vec![Vector3::new(0.1, -0.2, 2.0)],
            opacity_logits: vec![0.4],
            log_scales: vec![Vector3::new(-1.0, -1.4, -0.8)],
            rotations: vec![Vector4::new(0.9, 0.3, -0.2, 0.4)],
            sh: vec![0.2, 0.3, 0.4],
            sh_degree: 0,
            mask_logits: vec![Vector2::new(3.0, 0.0)],
        };
        let camera = Camera::look_at(
            32,
            32,
            40.0,
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::zeros(),
            Vector3::new(0.0, 1.0, 0.0),
        );
        let opts = RenderOptions::default();
        let splat = crate::splat::project_splat(0, &cloud, &camera, &opts).unwrap();
        let g = backward_projection_chain(
            &Vector2::new(0.3, -0.2),
            &Matrix2::new(0.01, 0.002, 0.002, -0.02),
            &Vector3::new(0.5, 0.1, -0.3),
            &splat,
            &cloud,
            &camera,
        );
        let q = cloud.rotations[0].normalize();
        assert!(g.d_rotation.dot(&q).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_gives_zero_parameter_gradients() {
        use crate::cloud::GaussianCloud;
        let cloud = GaussianCloud::<f64> {
            centers: vec![Vector3::new(0.0, 0.0, 2.0)],
            opacity_logits: vec![0.0],
            log_scales: vec![Vector3::repeat(-1.0)],
            rotations: vec![Vector4::new(1.0, 0.0, 0.0, 0.0)],
            sh: vec![0.2, 0.3, 0.4],
            sh_degree: 0,
            mask_logits: vec![Vector2::new(3.0, 0.0)],
        };
        let camera = Camera::look_at(
            32,
            32,
            40.0,
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::zeros(),
            Vector3::new(0.0, 1.0, 0.0),
        );
        let opts = RenderOptions::default();
        let splat = crate::splat::project_splat(0, &cloud, &camera, &opts).unwrap();
        let g = backward_projection_chain(
            &Vector2::zeros(),
            &Matrix2::zeros(),
            &Vector3::zeros(),
            &splat,
            &cloud,
            &camera,
        );
        assert_eq!(g.d_center, Vector3::zeros());
        assert_eq!(g.d_log_scales, Vector3::zeros());
        assert_eq!(g.d_rotation, Vector4::zeros());
        assert!(g.d_sh.iter().all(|&v| v == 0.0));
    }
}
