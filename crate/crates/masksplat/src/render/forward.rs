use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use crate::camera::Camera;
use crate::cloud::GaussianCloud;
use crate::error::{Error, Result};
use crate::options::{MaskApplication, RenderOptions};
use crate::real::Real;
use crate::splat::{eval_falloff, project_cloud, ProjectionStats, Splat2D};

use super::binning::{bin_and_sort, TileBinning};
use super::{FrameBuffer, PixelRecord};

struct TilePixel<T: Real> {
    color: Vector3<T>,
    transmittance: T,
    n_contrib: u32,
    records: Vec<PixelRecord<T>>,
}

/// Composite one pixel front to back over a depth-sorted splat list.
///
/// In blending mode the mask gates color accumulation and transmittance
/// consumption, so a masked splat acts as pruned while still being
/// recorded for the backward pass. Masked splats never reduce the
/// transmittance, hence they can never trigger the early stop.
fn composite_pixel<T: Real>(
    pixel: &Vector2<T>,
    list: &[u32],
    splats: &[Splat2D<T>],
    masks: &[T],
    opts: &RenderOptions,
    record: bool,
) -> (TilePixel<T>, usize) {
    let cutoff = T::of(opts.alpha_cutoff);
    let clamp = T::of(opts.alpha_clamp);
    let stop = T::of(opts.early_stop);
    let mut out = TilePixel {
        color: Vector3::zeros(),
        transmittance: T::one(),
        n_contrib: 0,
        records: Vec::new(),
    };
    let mut overflow = 0usize;

    for &si in list {
        let splat = &splats[si as usize];
        let m = masks[splat.source as usize];
        let (alpha, weight) = match opts.mask_application {
            MaskApplication::Blending => {
                let a = (splat.opacity * eval_falloff(splat, pixel)).min(clamp);
                (a, m)
            }
            MaskApplication::OpacityMultiply => {
                let a = (m * splat.opacity * eval_falloff(splat, pixel)).min(clamp);
                (a, T::one())
            }
        };
        if alpha < cutoff {
            continue;
        }
        if record {
            if out.records.len() < opts.max_contributors {
                out.records.push(PixelRecord {
                    splat: si,
                    alpha,
                    transmittance: out.transmittance,
                });
            } else {
                overflow += 1;
            }
        }
        out.n_contrib += 1;
        let wa = weight * alpha;
        out.color += splat.color * (wa * out.transmittance);
        out.transmittance *= T::one() - wa;
        if opts.early_stop > 0.0 && out.transmittance < stop {
            break;
        }
    }
    (out, overflow)
}

/// Masked forward render over pre-projected, pre-binned splats.
///
/// `masks` holds one value per Gaussian of the source cloud (binary during
/// training; the verification paths probe fractional values). The returned
/// color already includes the background composited against the final
/// transmittance.
pub fn render_masked<T: Real>(
    splats: &[Splat2D<T>],
    masks: &[T],
    camera: &Camera<T>,
    background: &Vector3<T>,
    binning: &TileBinning,
    opts: &RenderOptions,
) -> Result<FrameBuffer<T>> {
    if let Some(max_source) = splats.iter().map(|s| s.source).max() {
        if max_source as usize >= masks.len() {
            return Err(Error::LengthMismatch(format!(
                "mask vector has {} entries but a splat references Gaussian {}",
                masks.len(),
                max_source
            )));
        }
    }

    let record = opts.record_contributors;
    let mut frame = FrameBuffer::new(camera.width, camera.height, record);

    let tile_ids: Vec<(usize, usize)> = (0..binning.tiles_y)
        .flat_map(|ty| (0..binning.tiles_x).map(move |tx| (tx, ty)))
        .collect();

    let tile_results: Vec<(usize, usize, Vec<TilePixel<T>>, usize)> = tile_ids
        .par_iter()
        .map(|&(tx, ty)| {
            let (x0, y0, x1, y1) = binning.tile_pixels(tx, ty, camera.width, camera.height);
            let list = &binning.tiles[binning.tile_index(tx, ty)];
            let mut pixels = Vec::with_capacity(((x1 - x0) * (y1 - y0)) as usize);
            let mut overflow = 0usize;
            for y in y0..y1 {
                for x in x0..x1 {
                    let pixel = Vector2::new(T::of(x as f64 + 0.5), T::of(y as f64 + 0.5));
                    let (px, ov) = composite_pixel(&pixel, list, splats, masks, opts, record);
                    overflow += ov;
                    pixels.push(px);
                }
            }
            (tx, ty, pixels, overflow)
        })
        .collect();

    for (tx, ty, pixels, overflow) in tile_results {
        frame.overflow_count += overflow;
        let (x0, y0, x1, _y1) = binning.tile_pixels(tx, ty, camera.width, camera.height);
        let row_len = (x1 - x0) as usize;
        for (k, px) in pixels.into_iter().enumerate() {
            let x = x0 + (k % row_len) as u32;
            let y = y0 + (k / row_len) as u32;
            let idx = frame.pixel_index(x, y);
            frame.color[idx] = px.color + background * px.transmittance;
            frame.final_transmittance[idx] = px.transmittance;
            frame.n_contrib[idx] = px.n_contrib;
            if let Some(records) = frame.records.as_mut() {
                records[idx] = px.records;
            }
        }
    }
    Ok(frame)
}

/// Standard (unmasked) forward render; identical to [`render_masked`] with
/// every mask set to one, bit for bit.
pub fn render_standard<T: Real>(
    splats: &[Splat2D<T>],
    camera: &Camera<T>,
    background: &Vector3<T>,
    binning: &TileBinning,
    opts: &RenderOptions,
) -> Result<FrameBuffer<T>> {
    let n = splats
        .iter()
        .map(|s| s.source as usize + 1)
        .max()
        .unwrap_or(0);
    let ones = vec![T::one(); n];
    render_masked(splats, &ones, camera, background, binning, opts)
}

/// A projected, binned, rendered view of a cloud.
#[derive(Debug)]
pub struct RenderedView<T: Real> {
    pub splats: Vec<Splat2D<T>>,
    pub binning: TileBinning,
    pub frame: FrameBuffer<T>,
    pub projection: ProjectionStats,
}

/// Project, bin, and render a cloud in one call.
pub fn render_cloud<T: Real>(
    cloud: &GaussianCloud<T>,
    masks: &[T],
    camera: &Camera<T>,
    background: &Vector3<T>,
    opts: &RenderOptions,
) -> Result<RenderedView<T>> {
    if masks.len() != cloud.len() {
        return Err(Error::LengthMismatch(format!(
            "{} masks for {} Gaussians",
            masks.len(),
            cloud.len()
        )));
    }
    let (splats, projection) = project_cloud(cloud, camera, opts);
    let binning = bin_and_sort(&splats, camera, opts.tile_size);
    let frame = render_masked(&splats, masks, camera, background, &binning, opts)?;
    Ok(RenderedView {
        splats,
        binning,
        frame,
        projection,
    })
}
