use crate::camera::Camera;
use crate::real::Real;
use crate::splat::Splat2D;

/// Per-tile lists of splat indices, depth-sorted front to back.
#[derive(Debug, Clone)]
pub struct TileBinning {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Indices into the splat list, sorted by (depth, source index).
    pub tiles: Vec<Vec<u32>>,
}

impl TileBinning {
    #[inline]
    pub fn tile_index(&self, tx: usize, ty: usize) -> usize {
        ty * self.tiles_x + tx
    }

    /// Pixel bounds `(x0, y0, x1, y1)` of a tile, exclusive upper.
    pub fn tile_pixels(&self, tx: usize, ty: usize, width: u32, height: u32) -> (u32, u32, u32, u32) {
        let x0 = (tx * self.tile_size) as u32;
        let y0 = (ty * self.tile_size) as u32;
        let x1 = ((tx + 1) * self.tile_size).min(width as usize) as u32;
        let y1 = ((ty + 1) * self.tile_size).min(height as usize) as u32;
        (x0, y0, x1, y1)
    }
}

/// Bin splats into the tiles their footprint touches and sort each tile's
/// list by ascending depth, ties broken by ascending source index.
pub fn bin_and_sort<T: Real>(
    splats: &[Splat2D<T>],
    camera: &Camera<T>,
    tile_size: usize,
) -> TileBinning {
    assert!(tile_size >= 1);
    let tiles_x = (camera.width as usize).div_ceil(tile_size);
    let tiles_y = (camera.height as usize).div_ceil(tile_size);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];

    for (i, s) in splats.iter().enumerate() {
        let (tx0, tx1, ty0, ty1) = if s.radius.to_f64().is_finite() {
            let lo_x = (s.mean.x - s.radius).to_f64();
            let hi_x = (s.mean.x + s.radius).to_f64();
            let lo_y = (s.mean.y - s.radius).to_f64();
            let hi_y = (s.mean.y + s.radius).to_f64();
            if hi_x < 0.0 || hi_y < 0.0 || lo_x > camera.width as f64 || lo_y > camera.height as f64 {
                continue;
            }
            let ts = tile_size as f64;
            (
                ((lo_x / ts).floor().max(0.0) as usize).min(tiles_x - 1),
                ((hi_x / ts).floor().max(0.0) as usize).min(tiles_x - 1),
                ((lo_y / ts).floor().max(0.0) as usize).min(tiles_y - 1),
                ((hi_y / ts).floor().max(0.0) as usize).min(tiles_y - 1),
            )
        } else {
            (0, tiles_x - 1, 0, tiles_y - 1)
        };
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tiles[ty * tiles_x + tx].push(i as u32);
            }
        }
    }

    for list in &mut tiles {
        list.sort_by(|&a, &b| {
            let (sa, sb) = (&splats[a as usize], &splats[b as usize]);
            sa.depth
                .partial_cmp(&sb.depth)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(sa.source.cmp(&sb.source))
        });
    }

    TileBinning {
        tile_size,
        tiles_x,
        tiles_y,
        tiles,
    }
}
