//! Independent correctness machinery: a naive unoptimized renderer, a
//! finite-difference differentiator over the relaxed forward, sampler
//! statistics, and the gradcheck report generator.
//!
//! The naive renderer deliberately re-implements projection and blending
//! from scratch. It shares no compositing code with the tiled renderer;
//! agreement between the two is the flagship oracle test, so bugs cannot
//! cancel.

use nalgebra::{Matrix2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::cloud::GaussianCloud;
use crate::mask::existence_prob;
use crate::options::RenderOptions;
use crate::real::Real;
use crate::render::{backward, render_cloud, FrameBuffer, GradientSet};
use crate::sh;

struct NaiveSplat {
    mean: Vector2<f64>,
    cov_inv: Matrix2<f64>,
    depth: f64,
    color: Vector3<f64>,
    opacity: f64,
    source: usize,
}

/// Evaluate the masked blending equations literally at `f64`: per pixel,
/// loop over every projected Gaussian in depth order with no tiles, no
/// early stop, and no contributor cap. Fractional mask values are accepted
/// so finite differences can probe the relaxed forward.
pub fn naive_render<T: Real>(
    cloud: &GaussianCloud<T>,
    masks: &[f64],
    camera: &Camera<T>,
    background: &Vector3<f64>,
    opts: &RenderOptions,
) -> FrameBuffer<f64> {
    assert_eq!(masks.len(), cloud.len(), "one mask value per Gaussian");
    let cloud = cloud.cast::<f64>();
    let camera = camera.cast::<f64>();

    // Straightforward projection, written out longhand.
    let mut splats: Vec<NaiveSplat> = Vec::new();
    for i in 0..cloud.len() {
        let p = cloud.centers[i];
        let t = camera.rotation * p + camera.translation;
        if t.z <= camera.near_clip {
            continue;
        }
        let q = cloud.rotations[i];
        let qn = (q.x * q.x + q.y * q.y + q.z * q.z + q.w * q.w).sqrt();
        let (w, x, y, z) = (q.x / qn, q.y / qn, q.z / qn, q.w / qn);
        let rot = [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ];
        let s = [
            cloud.log_scales[i].x.exp(),
            cloud.log_scales[i].y.exp(),
            cloud.log_scales[i].z.exp(),
        ];
        // World covariance entries via sum_k s_k^2 R[r][k] R[c][k].
        let mut sigma = [[0.0f64; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                for (k, sk) in s.iter().enumerate() {
                    sigma[r][c] += sk * sk * rot[r][k] * rot[c][k];
                }
            }
        }
        // Rows of J * W, with J the projection Jacobian at t.
        let jrow = |fr: f64, tr_axis: usize, tz_coef: f64| -> [f64; 3] {
            let mut row = [0.0f64; 3];
            for c in 0..3 {
                row[c] = fr / t.z * camera.rotation[(tr_axis, c)]
                    + tz_coef * camera.rotation[(2, c)];
            }
            row
        };
        let row_u = jrow(camera.fx, 0, -camera.fx * t.x / (t.z * t.z));
        let row_v = jrow(camera.fy, 1, -camera.fy * t.y / (t.z * t.z));
        let quad = |a: &[f64; 3], b: &[f64; 3]| -> f64 {
            let mut acc = 0.0;
            for r in 0..3 {
                for c in 0..3 {
                    acc += a[r] * sigma[r][c] * b[c];
                }
            }
            acc
        };
        let c00 = quad(&row_u, &row_u) + opts.covariance_floor;
        let c01 = quad(&row_u, &row_v);
        let c11 = quad(&row_v, &row_v) + opts.covariance_floor;
        let det = c00 * c11 - c01 * c01;
        if det <= 0.0 {
            continue;
        }
        let cov_inv = Matrix2::new(c11 / det, -c01 / det, -c01 / det, c00 / det);

        let dir = sh::safe_normalize(p - camera.center());
        let color = sh::eval(cloud.sh_slice(i), &dir, cloud.sh_degree);
        splats.push(NaiveSplat {
            mean: Vector2::new(
                camera.fx * t.x / t.z + camera.cx,
                camera.fy * t.y / t.z + camera.cy,
            ),
            cov_inv,
            depth: t.z,
            color,
            opacity: 1.0 / (1.0 + (-cloud.opacity_logits[i]).exp()),
            source: i,
        });
    }
    splats.sort_by(|a, b| {
        a.depth
            .partial_cmp(&b.depth)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.source.cmp(&b.source))
    });

    let mut frame = FrameBuffer::<f64>::new(camera.width, camera.height, false);
    for py in 0..camera.height {
        for px in 0..camera.width {
            let pixel = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
            let mut color = Vector3::zeros();
            let mut transmittance = 1.0f64;
            let mut n = 0u32;
            for sp in &splats {
                let d = pixel - sp.mean;
                let maha = d.x * (sp.cov_inv[(0, 0)] * d.x + sp.cov_inv[(0, 1)] * d.y)
                    + d.y * (sp.cov_inv[(1, 0)] * d.x + sp.cov_inv[(1, 1)] * d.y);
                let alpha = (sp.opacity * (-0.5 * maha).exp()).min(opts.alpha_clamp);
                if alpha < opts.alpha_cutoff {
                    continue;
                }
                let m = masks[sp.source];
                color += sp.color * (m * alpha * transmittance);
                transmittance *= 1.0 - m * alpha;
                n += 1;
            }
            let idx = frame.pixel_index(px, py);
            frame.color[idx] = color + background * transmittance;
            frame.final_transmittance[idx] = transmittance;
            frame.n_contrib[idx] = n;
        }
    }
    frame
}

/// Central finite difference of a scalar function at `x`, with the step
/// scaled by the magnitude of `x`. Returns `None` when either probe is
/// non-finite.
pub fn finite_diff(x: f64, h_base: f64, mut f: impl FnMut(f64) -> f64) -> Option<f64> {
    let h = h_base * x.abs().max(1.0);
    let fp = f(x + h);
    let fm = f(x - h);
    (fp.is_finite() && fm.is_finite()).then(|| (fp - fm) / (2.0 * h))
}

/// One-sided difference stepping from `x` in `direction` (+1 or -1); used
/// at the boundary of the mask relaxation.
pub fn finite_diff_one_sided(
    x: f64,
    h_base: f64,
    direction: f64,
    mut f: impl FnMut(f64) -> f64,
) -> Option<f64> {
    let h = h_base * direction;
    let fp = f(x + h);
    let f0 = f(x);
    (fp.is_finite() && f0.is_finite()).then(|| (fp - f0) / h)
}

/// Relative error with an absolute floor so that near-zero pairs compare
/// sanely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub n_scenes: usize,
    pub max_gaussians: usize,
    pub image_size: u32,
    pub sh_degree: usize,
    /// Tolerance for every parameter class except masks.
    pub tol_params: f64,
    /// Tolerance for the mask class.
    pub tol_mask: f64,
    pub fd_step: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            seed: 7,
            n_scenes: 20,
            max_gaussians: 24,
            image_size: 32,
            sh_degree: 2,
            tol_params: 1e-4,
            tol_mask: 1e-5,
            fd_step: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorstEntry {
    pub scene: usize,
    pub gaussian: usize,
    pub component: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub checked: usize,
    pub skipped_clamp: usize,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub worst: Option<WorstEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub n_scenes: usize,
    pub scene_hash: u64,
    pub classes: Vec<ClassReport>,
    pub pass: bool,
    pub note: Option<String>,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "gradcheck seed={} scenes={} hash={:016x}",
            self.seed, self.n_scenes, self.scene_hash
        )?;
        if let Some(note) = &self.note {
            writeln!(f, "note: {note}")?;
        }
        for c in &self.classes {
            writeln!(
                f,
                "{:>5} {:<14} checked={:<6} clamp-skipped={:<4} max_rel={:<10.3e} mean_rel={:<10.3e} tol={:.0e}",
                if c.pass { "ok" } else { "FAIL" },
                c.class,
                c.checked,
                c.skipped_clamp,
                c.max_rel_err,
                c.mean_rel_err,
                c.tolerance
            )?;
            if !c.pass {
                if let Some(w) = &c.worst {
                    writeln!(
                        f,
                        "      worst: scene {} gaussian {} component {}: analytic {:.9e} vs numeric {:.9e}",
                        w.scene, w.gaussian, w.component, w.analytic, w.numeric
                    )?;
                }
            }
        }
        writeln!(f, "overall: {}", if self.pass { "PASS" } else { "FAIL" })
    }
}

struct ClassAccum {
    checked: usize,
    skipped: usize,
    sum: f64,
    max: f64,
    worst: Option<WorstEntry>,
}

impl ClassAccum {
    fn new() -> Self {
        ClassAccum {
            checked: 0,
            skipped: 0,
            sum: 0.0,
            max: 0.0,
            worst: None,
        }
    }

    fn add(&mut self, scene: usize, gaussian: usize, component: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        self.sum += err;
        if err > self.max {
            self.max = err;
            self.worst = Some(WorstEntry {
                scene,
                gaussian,
                component,
                analytic,
                numeric,
            });
        }
    }
}

/// A small random scene for verification: Gaussians in front of a ring
/// camera with opacities bounded away from the alpha clamp.
pub struct CheckScene {
    pub cloud: GaussianCloud<f64>,
    pub camera: Camera<f64>,
    pub masks: Vec<f64>,
    pub background: Vector3<f64>,
    pub weights: Vec<Vector3<f64>>,
}

/// Deterministic scene generator used by the gradcheck suite and tests.
///
/// `fractional_masks` draws mask values from {0, 0.25, 0.5, 0.75, 1}
/// instead of {0, 1}.
pub fn random_check_scene(
    seed: u64,
    max_gaussians: usize,
    image_size: u32,
    sh_degree: usize,
    fractional_masks: bool,
) -> CheckScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(4..=max_gaussians.max(4));
    let mut cloud = GaussianCloud::<f64>::with_capacity(n, sh_degree);
    for _ in 0..n {
        cloud.centers.push(Vector3::new(
            rng.gen_range(-0.8..0.8),
            rng.gen_range(-0.8..0.8),
            rng.gen_range(-0.5..0.5),
        ));
        // Opacity in (0.15, 0.85): comfortably away from the 0.99 clamp.
        let o: f64 = rng.gen_range(0.15..0.85);
        cloud.opacity_logits.push((o / (1.0 - o)).ln());
        cloud.log_scales.push(Vector3::new(
            rng.gen_range(-3.2..-1.8),
            rng.gen_range(-3.2..-1.8),
            rng.gen_range(-3.2..-1.8),
        ));
        let q = nalgebra::Vector4::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let q = if q.norm() < 1e-3 {
            nalgebra::Vector4::new(1.0, 0.0, 0.0, 0.0)
        } else {
            q
        };
        cloud.rotations.push(q);
        for k in 0..sh::coeff_count(sh_degree) {
            for _ in 0..3 {
                // Keep raw colors clear of the non-negativity clamp so the
                // rendered loss stays smooth for finite differences.
                if k == 0 {
                    cloud.sh.push(rng.gen_range(0.0..0.7));
                } else {
                    cloud.sh.push(rng.gen_range(-0.08..0.08));
                }
            }
        }
        cloud
            .mask_logits
            .push(Vector2::new(rng.gen_range(-1.0..3.0), 0.0));
    }

    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let eye = Vector3::new(2.6 * angle.cos(), rng.gen_range(-0.6..0.6), 2.6 * angle.sin());
    let camera = Camera::look_at(
        image_size,
        image_size,
        image_size as f64 * 0.9,
        eye,
        Vector3::zeros(),
        Vector3::new(0.0, 1.0, 0.0),
    );

    let masks: Vec<f64> = (0..n)
        .map(|_| {
            if fractional_masks {
                *[0.0, 0.25, 0.5, 0.75, 1.0]
                    .get(rng.gen_range(0..5))
                    .unwrap()
            } else if rng.gen_bool(0.35) {
                0.0
            } else {
                1.0
            }
        })
        .collect();
    let background = Vector3::new(
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.0..1.0),
    );
    let weights = (0..(image_size as usize * image_size as usize))
        .map(|_| {
            Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
        })
        .collect();
    CheckScene {
        cloud,
        camera,
        masks,
        background,
        weights,
    }
}

fn hash_mix(h: u64, v: u64) -> u64 {
    (h ^ v).wrapping_mul(0x100000001b3)
}

fn scene_hash(scene: &CheckScene) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for c in &scene.cloud.centers {
        for v in c.iter() {
            h = hash_mix(h, v.to_bits());
        }
    }
    for v in &scene.cloud.opacity_logits {
        h = hash_mix(h, v.to_bits());
    }
    for m in &scene.masks {
        h = hash_mix(h, m.to_bits());
    }
    h
}

/// Weighted-sum loss over the rendered image: gradients with respect to
/// the color are exactly the fixed per-pixel weights.
fn weighted_loss(frame: &FrameBuffer<f64>, weights: &[Vector3<f64>]) -> f64 {
    frame
        .color
        .iter()
        .zip(weights)
        .map(|(c, w)| c.dot(w))
        .sum()
}

/// Analytic gradients of the weighted-sum loss for one scene, computed by
/// the tiled pipeline in verification mode.
pub fn analytic_grads(scene: &CheckScene) -> (GradientSet<f64>, FrameBuffer<f64>) {
    let opts = RenderOptions::default().for_verification();
    let view = render_cloud(
        &scene.cloud,
        &scene.masks,
        &scene.camera,
        &scene.background,
        &opts,
    )
    .expect("render");
    let grads = backward(
        &scene.cloud,
        &scene.camera,
        &view.splats,
        &view.frame,
        &scene.masks,
        &scene.weights,
        &scene.background,
        &opts,
    )
    .expect("backward");
    (grads, view.frame)
}

/// Compare analytic gradients against central finite differences of the
/// relaxed naive forward for every parameter class.
pub fn gradcheck_suite(config: &GradCheckConfig) -> GradCheckReport {
    if config.n_scenes == 0 {
        return GradCheckReport {
            seed: config.seed,
            n_scenes: 0,
            scene_hash: 0,
            classes: Vec::new(),
            pass: true,
            note: Some("no scenes requested; trivially passing".into()),
        };
    }

    let opts = RenderOptions::default().for_verification();
    let class_names = [
        "centers",
        "opacity_logits",
        "log_scales",
        "rotations",
        "sh",
        "mask_soft",
    ];
    let mut accums: Vec<ClassAccum> = class_names.iter().map(|_| ClassAccum::new()).collect();
    let mut hash = 0xcbf29ce484222325u64;

    for scene_idx in 0..config.n_scenes {
        let scene = random_check_scene(
            config.seed.wrapping_add(scene_idx as u64),
            config.max_gaussians,
            config.image_size,
            config.sh_degree,
            scene_idx % 2 == 1,
        );
        hash = hash_mix(hash, scene_hash(&scene));
        let (grads, frame) = analytic_grads(&scene);

        // Gaussians whose recorded alpha sits at the clamp are excluded
        // from alpha-path checks, never silently passed.
        let n = scene.cloud.len();
        let mut clamped = vec![false; n];
        if let Some(records) = &frame.records {
            let view_opts = &opts;
            for recs in records {
                for r in recs {
                    if r.alpha >= view_opts.alpha_clamp - 1e-6 {
                        clamped[r.splat as usize] = true;
                    }
                }
            }
        }

        let loss_cloud = |cloud: &GaussianCloud<f64>, masks: &[f64]| -> f64 {
            let frame = naive_render(cloud, masks, &scene.camera, &scene.background, &opts);
            weighted_loss(&frame, &scene.weights)
        };

        for g in 0..n {
            // Class 0: centers (3 components).
            for axis in 0..3 {
                if clamped[g] {
                    accums[0].skipped += 1;
                    continue;
                }
                let x = scene.cloud.centers[g][axis];
                let numeric = finite_diff(x, config.fd_step, |v| {
                    let mut c = scene.cloud.clone();
                    c.centers[g][axis] = v;
                    loss_cloud(&c, &scene.masks)
                });
                if let Some(numeric) = numeric {
                    accums[0].add(scene_idx, g, axis, grads.d_centers[g][axis], numeric);
                }
            }
            // Class 1: opacity logits.
            if clamped[g] {
                accums[1].skipped += 1;
            } else if let Some(numeric) =
                finite_diff(scene.cloud.opacity_logits[g], config.fd_step, |v| {
                    let mut c = scene.cloud.clone();
                    c.opacity_logits[g] = v;
                    loss_cloud(&c, &scene.masks)
                })
            {
                accums[1].add(scene_idx, g, 0, grads.d_opacity_logits[g], numeric);
            }
            // Class 2: log scales.
            for axis in 0..3 {
                if clamped[g] {
                    accums[2].skipped += 1;
                    continue;
                }
                if let Some(numeric) =
                    finite_diff(scene.cloud.log_scales[g][axis], config.fd_step, |v| {
                        let mut c = scene.cloud.clone();
                        c.log_scales[g][axis] = v;
                        loss_cloud(&c, &scene.masks)
                    })
                {
                    accums[2].add(scene_idx, g, axis, grads.d_log_scales[g][axis], numeric);
                }
            }
            // Class 3: rotations.
            for axis in 0..4 {
                if clamped[g] {
                    accums[3].skipped += 1;
                    continue;
                }
                if let Some(numeric) =
                    finite_diff(scene.cloud.rotations[g][axis], config.fd_step, |v| {
                        let mut c = scene.cloud.clone();
                        c.rotations[g][axis] = v;
                        loss_cloud(&c, &scene.masks)
                    })
                {
                    accums[3].add(scene_idx, g, axis, grads.d_rotations[g][axis], numeric);
                }
            }
            // Class 4: SH coefficients.
            let stride = scene.cloud.sh_stride();
            for k in 0..stride {
                let idx = g * stride + k;
                if let Some(numeric) = finite_diff(scene.cloud.sh[idx], config.fd_step, |v| {
                    let mut c = scene.cloud.clone();
                    c.sh[idx] = v;
                    loss_cloud(&c, &scene.masks)
                }) {
                    accums[4].add(scene_idx, g, k, grads.d_sh[idx], numeric);
                }
            }
            // Class 5: the soft mask relaxation. Central differences at
            // interior values, one-sided into the feasible side at the
            // binary endpoints.
            let m = scene.masks[g];
            let probe = |v: f64| {
                let mut masks = scene.masks.clone();
                masks[g] = v;
                loss_cloud(&scene.cloud, &masks)
            };
            let numeric = if m <= 0.0 {
                finite_diff_one_sided(m, config.fd_step, 1.0, probe)
            } else if m >= 1.0 {
                finite_diff_one_sided(m, config.fd_step, -1.0, probe)
            } else {
                finite_diff(m, config.fd_step, probe)
            };
            if let Some(numeric) = numeric {
                accums[5].add(scene_idx, g, 0, grads.d_mask_soft[g], numeric);
            }
        }
    }

    let classes: Vec<ClassReport> = class_names
        .iter()
        .zip(accums)
        .map(|(name, acc)| {
            let tol = if *name == "mask_soft" {
                config.tol_mask
            } else {
                config.tol_params
            };
            ClassReport {
                class: name.to_string(),
                checked: acc.checked,
                skipped_clamp: acc.skipped,
                max_rel_err: acc.max,
                mean_rel_err: if acc.checked > 0 {
                    acc.sum / acc.checked as f64
                } else {
                    0.0
                },
                tolerance: tol,
                pass: acc.max < tol,
                worst: acc.worst,
            }
        })
        .collect();
    let pass = classes.iter().all(|c| c.pass);
    GradCheckReport {
        seed: config.seed,
        n_scenes: config.n_scenes,
        scene_hash: hash,
        classes,
        pass,
        note: None,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerStat {
    pub prob: f64,
    pub frequency: f64,
    pub z_score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerStatsReport {
    pub draws: usize,
    pub seed: u64,
    pub per_gaussian: Vec<SamplerStat>,
    pub pass: bool,
}

impl std::fmt::Display for SamplerStatsReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "sampler stats: draws={} seed={}", self.draws, self.seed)?;
        for (i, s) in self.per_gaussian.iter().enumerate() {
            writeln!(
                f,
                "  gaussian {i}: p={:.6} freq={:.6} z={:+.3}",
                s.prob, s.frequency, s.z_score
            )?;
        }
        writeln!(f, "overall: {}", if self.pass { "PASS" } else { "FAIL" })
    }
}

/// Empirical present-frequency of the Gumbel sampler versus the analytic
/// existence probability; passes iff every |z| < 4.
pub fn sampler_stats(
    logits: &[Vector2<f64>],
    temperature: f64,
    draws: usize,
    seed: u64,
) -> SamplerStatsReport {
    assert!(draws >= 1000, "need at least 1000 draws for statistics");
    let probs = existence_prob(logits);
    let mut hits = vec![0u64; logits.len()];
    for d in 0..draws {
        let sample = crate::mask::sample_masks(logits, temperature, seed.wrapping_add(d as u64));
        for (h, &present) in hits.iter_mut().zip(&sample.hard) {
            if present {
                *h += 1;
            }
        }
    }
    let per_gaussian: Vec<SamplerStat> = probs
        .iter()
        .zip(&hits)
        .map(|(&p, &h)| {
            let freq = h as f64 / draws as f64;
            let var = p * (1.0 - p);
            let z = if var == 0.0 {
                if (freq - p).abs() < 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (freq - p) / (var / draws as f64).sqrt()
            };
            SamplerStat {
                prob: p,
                frequency: freq,
                z_score: z,
            }
        })
        .collect();
    let pass = per_gaussian.iter().all(|s| s.z_score.abs() < 4.0);
    SamplerStatsReport {
        draws,
        seed,
        per_gaussian,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn finite_diff_is_exact_for_quadratics() {
        let g = finite_diff(3.0, 1e-5, |x| x * x).unwrap();
        assert_relative_eq!(g, 6.0, epsilon = 1e-9);
    }

    #[test]
    fn finite_diff_flags_non_finite() {
        assert!(finite_diff(0.0, 1e-5, |x| 1.0 / x).is_some());
        assert!(finite_diff(0.0, 1e-5, |_| f64::NAN).is_none());
    }

    #[test]
    fn naive_render_empty_cloud_is_background() {
        let cloud = GaussianCloud::<f64>::with_capacity(0, 0);
        let camera = Camera::look_at(
            8,
            8,
            10.0,
            Vector3::new(0.0, 0.0, -2.0),
            Vector3::zeros(),
            Vector3::new(0.0, 1.0, 0.0),
        );
        let fb = naive_render(
            &cloud,
            &[],
            &camera,
            &Vector3::new(0.3, 0.2, 0.1),
            &RenderOptions::default(),
        );
        assert!(fb.color.iter().all(|c| *c == Vector3::new(0.3, 0.2, 0.1)));
    }

    #[test]
    fn fractional_mask_single_splat() {
        // One splat with alpha 0.6 at its center pixel, mask 0.5: the
        // relaxed equations give 0.3 red and transmittance 0.7.
        let mut cloud = GaussianCloud::<f64>::with_capacity(1, 0);
        cloud.centers.push(Vector3::new(0.0, 0.0, 0.0));
        cloud.opacity_logits.push((0.6_f64 / 0.4).ln());
        cloud.log_scales.push(Vector3::repeat(3.0)); // huge: flat falloff
        cloud.rotations.push(nalgebra::Vector4::new(1.0, 0.0, 0.0, 0.0));
        // Raw red 1.0: dc coefficient (1.0 - 0.5) / C0.
        cloud.sh.extend_from_slice(&[(0.5) / 0.28209479177387814, -0.5 / 0.28209479177387814, -0.5 / 0.28209479177387814]);
        cloud.mask_logits.push(Vector2::new(0.0, 0.0));

        let camera = Camera::look_at(
            3,
            3,
            3.0,
            Vector3::new(0.0, 0.0, -2.0),
            Vector3::zeros(),
            Vector3::new(0.0, 1.0, 0.0),
        );
        let fb = naive_render(
            &cloud,
            &[0.5],
            &camera,
            &Vector3::zeros(),
            &RenderOptions::default(),
        );
        let center = fb.pixel_index(1, 1);
        assert_relative_eq!(fb.color[center].x, 0.3, epsilon = 1e-6);
        assert_relative_eq!(fb.color[center].y, 0.0, epsilon = 1e-9);
        assert_relative_eq!(fb.final_transmittance[center], 0.7, epsilon = 1e-6);
    }

    #[test]
    fn gradcheck_zero_scenes_passes_with_note() {
        let report = gradcheck_suite(&GradCheckConfig {
            n_scenes: 0,
            ..GradCheckConfig::default()
        });
        assert!(report.pass);
        assert!(report.note.is_some());
    }

    #[test]
    fn gradcheck_small_run_passes() {
        let report = gradcheck_suite(&GradCheckConfig {
            n_scenes: 2,
            max_gaussians: 10,
            image_size: 16,
            sh_degree: 1,
            ..GradCheckConfig::default()
        });
        assert!(report.pass, "{report}");
    }

    #[test]
    fn corrupted_mask_gradient_fails_comparison() {
        // Mutation sanity check: flipping the analytic sign must exceed
        // the tolerance for any appreciable gradient.
        let scene = random_check_scene(11, 8, 16, 1, true);
        let (grads, _) = analytic_grads(&scene);
        let opts = RenderOptions::default().for_verification();
        let mut any_checked = false;
        for g in 0..scene.cloud.len() {
            let corrupted = -grads.d_mask_soft[g];
            let m = scene.masks[g];
            let numeric = if m <= 0.0 || m >= 1.0 {
                continue;
            } else {
                finite_diff(m, 1e-5, |v| {
                    let mut masks = scene.masks.clone();
                    masks[g] = v;
                    let fb = naive_render(&scene.cloud, &masks, &scene.camera, &scene.background, &opts);
                    weighted_loss(&fb, &scene.weights)
                })
                .unwrap()
            };
            if numeric.abs() > 1e-4 {
                any_checked = true;
                assert!(relative_error(corrupted, numeric) > 1e-5);
            }
        }
        assert!(any_checked);
    }

    #[test]
    fn sampler_stats_matches_probabilities() {
        let logits = vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(3.0_f64.ln(), 0.0),
            Vector2::new(3.0, 0.0),
            Vector2::new(60.0, -60.0),
        ];
        let report = sampler_stats(&logits, 0.5, 20_000, 5);
        assert!(report.pass, "{report}");
        assert_eq!(report.per_gaussian[3].frequency, 1.0);
        // Determinism.
        let again = sampler_stats(&logits, 0.5, 20_000, 5);
        assert_eq!(
            serde_json::to_string(&report).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }
}
