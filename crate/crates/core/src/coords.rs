//! Continuous `[-1, 1]²` coordinates over rasterized maps.
//!
//! Pixel `j` of an axis with `n` pixels has its center at
//! `-1 + (2j + 1) / n` (half-pixel convention). `x` runs along columns,
//! `y` along rows. Coordinates outside the square are clamped before any
//! lookup.

use autodiff::{Element, RowMix, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Coord {
    pub x: f64,
    pub y: f64,
}

impl Coord {
    pub fn new(x: f64, y: f64) -> Self {
        Coord { x, y }
    }

    pub fn clamped(self) -> Self {
        Coord {
            x: self.x.clamp(-1.0, 1.0),
            y: self.y.clamp(-1.0, 1.0),
        }
    }

    pub fn offset(self, dx: f64, dy: f64) -> Self {
        Coord {
            x: self.x + dx,
            y: self.y + dy,
        }
    }
}

pub fn pixel_center(index: usize, extent: usize) -> f64 {
    -1.0 + (2 * index + 1) as f64 / extent as f64
}

/// Index of the pixel whose center is nearest to `v`; exact ties go to the
/// lower index.
pub fn nearest_index(v: f64, extent: usize) -> usize {
    let v = v.clamp(-1.0, 1.0);
    let t = ((v + 1.0) * extent as f64 / 2.0).ceil() as isize - 1;
    t.clamp(0, extent as isize - 1) as usize
}

/// `(row, col)` of the nearest pixel center on an `height × width` grid.
pub fn nearest_pixel(p: Coord, height: usize, width: usize) -> (usize, usize) {
    (nearest_index(p.y, height), nearest_index(p.x, width))
}

pub fn center_of(row: usize, col: usize, height: usize, width: usize) -> Coord {
    Coord::new(pixel_center(col, width), pixel_center(row, height))
}

/// Pixel-center coordinates of an `hq × wq` query map in row-major order.
pub fn grid_coords(hq: usize, wq: usize) -> Vec<Coord> {
    (0..hq)
        .flat_map(|r| (0..wq).map(move |c| center_of(r, c, hq, wq)))
        .collect()
}

/// `[2 × hq × wq]` tensor of query coordinates; channel 0 is `x`, channel 1
/// is `y`.
pub fn coord_grid<T: Element>(hq: usize, wq: usize) -> Tensor<T> {
    let coords = grid_coords(hq, wq);
    let mut data: Vec<T> = coords.iter().map(|p| T::from_f64(p.x)).collect();
    data.extend(coords.iter().map(|p| T::from_f64(p.y)));
    Tensor::new(vec![2, hq, wq], data).expect("hq, wq >= 1")
}

/// A latent code read by nearest-neighbor lookup, with the center of the
/// pixel it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample<T> {
    pub z_star: Vec<T>,
    pub p_star: Coord,
    pub row: usize,
    pub col: usize,
}

fn chw(map: &Tensor<impl Element>) -> (usize, usize, usize) {
    assert_eq!(map.rank(), 3, "feature map must be C×H×W");
    (map.shape()[0], map.shape()[1], map.shape()[2])
}

fn column<T: Element>(map: &Tensor<T>, row: usize, col: usize) -> Vec<T> {
    let (c, h, w) = chw(map);
    (0..c).map(|ch| map.data()[(ch * h + row) * w + col]).collect()
}

pub fn nearest_sample<T: Element>(map: &Tensor<T>, p: Coord) -> LatentSample<T> {
    let (_, h, w) = chw(map);
    let (row, col) = nearest_pixel(p.clamped(), h, w);
    LatentSample {
        z_star: column(map, row, col),
        p_star: center_of(row, col, h, w),
        row,
        col,
    }
}

/// Per-axis bilinear taps `(i0, i1, t)` for align-corners-false sampling,
/// clamped to the border centers.
fn linear_taps(v: f64, extent: usize) -> (usize, usize, f64) {
    let u = ((v.clamp(-1.0, 1.0) + 1.0) * extent as f64 / 2.0 - 0.5).clamp(0.0, (extent - 1) as f64);
    let i0 = u.floor() as usize;
    let i1 = (i0 + 1).min(extent - 1);
    (i0, i1, u - i0 as f64)
}

/// Bilinear weights over flat pixel indices (`row * width + col`).
pub fn bilinear_weights(p: Coord, height: usize, width: usize) -> [(usize, f64); 4] {
    let (r0, r1, ty) = linear_taps(p.y, height);
    let (c0, c1, tx) = linear_taps(p.x, width);
    [
        (r0 * width + c0, (1.0 - ty) * (1.0 - tx)),
        (r0 * width + c1, (1.0 - ty) * tx),
        (r1 * width + c0, ty * (1.0 - tx)),
        (r1 * width + c1, ty * tx),
    ]
}

pub fn bilinear_sample<T: Element>(map: &Tensor<T>, p: Coord) -> Vec<T> {
    let (c, h, w) = chw(map);
    let mut out = vec![T::zero(); c];
    for (idx, weight) in bilinear_weights(p, h, w) {
        let weight = T::from_f64(weight);
        for (ch, o) in out.iter_mut().enumerate() {
            *o = *o + weight * map.data()[ch * h * w + idx];
        }
    }
    out
}

/// Gather plan selecting, for each coordinate, the nearest pixel row of a
/// `[H·W × C]` map; also returns the selected pixel centers.
pub fn nearest_mix<T: Element>(coords: &[Coord], height: usize, width: usize) -> (RowMix<T>, Vec<Coord>) {
    let mut indices = Vec::with_capacity(coords.len());
    let mut centers = Vec::with_capacity(coords.len());
    for &p in coords {
        let (r, c) = nearest_pixel(p.clamped(), height, width);
        indices.push(r * width + c);
        centers.push(center_of(r, c, height, width));
    }
    (RowMix::select(&indices), centers)
}

pub fn bilinear_mix<T: Element>(coords: &[Coord], height: usize, width: usize) -> RowMix<T> {
    let mut mix = RowMix::new();
    for &p in coords {
        mix.push_row(
            bilinear_weights(p, height, width)
                .into_iter()
                .map(|(i, w)| (i, T::from_f64(w))),
        );
    }
    mix
}

#[cfg(test)]
mod tests {
    use super::*;
    use autodiff::Rng;

    #[test]
    fn grid_centers() {
        let xs = |w| grid_coords(1, w).iter().map(|p| p.x).collect::<Vec<_>>();
        assert_eq!(xs(2), vec![-0.5, 0.5]);
        assert_eq!(xs(1), vec![0.0]);
        assert_eq!(xs(4), vec![-0.75, -0.25, 0.25, 0.75]);
        let g = coord_grid::<f64>(3, 2);
        assert_eq!(g.shape(), &[2, 3, 2]);
        assert_eq!(g.get(&[1, 2, 0]), pixel_center(2, 3));
    }

    #[test]
    fn grid_is_increasing_and_symmetric() {
        for n in 1..40 {
            let v: Vec<f64> = (0..n).map(|j| pixel_center(j, n)).collect();
            assert!(v.windows(2).all(|w| w[0] < w[1]));
            for j in 0..n {
                assert!((v[j] + v[n - 1 - j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn nearest_examples() {
        let map = Tensor::<f64>::from_f64(vec![1, 2, 2], &[1., 2., 3., 4.]).unwrap();
        let s = nearest_sample(&map, Coord::new(-1.0, -1.0));
        assert_eq!((s.row, s.col), (0, 0));
        let s = nearest_sample(&map, Coord::new(0.6, 0.6));
        assert_eq!((s.row, s.col), (1, 1));
        assert_eq!(s.p_star, Coord::new(0.5, 0.5));
        assert_eq!(s.z_star, vec![4.0]);
        let s = nearest_sample(&map, Coord::new(0.0, 0.0));
        assert_eq!((s.row, s.col), (0, 0));
        assert_eq!(s.p_star, Coord::new(-0.5, -0.5));
        // out of range clamps
        let s = nearest_sample(&map, Coord::new(3.0, -7.0));
        assert_eq!((s.row, s.col), (0, 1));
    }

    fn brute_nearest(v: f64, n: usize) -> usize {
        let mut best = 0;
        for j in 1..n {
            if (v - pixel_center(j, n)).abs() < (v - pixel_center(best, n)).abs() {
                best = j;
            }
        }
        best
    }

    #[test]
    fn nearest_matches_brute_force() {
        let mut rng = Rng::new(21);
        for _ in 0..20_000 {
            let n = rng.int_inclusive(1, 33);
            let v = rng.uniform_range(-1.0, 1.0);
            assert_eq!(nearest_index(v, n), brute_nearest(v, n), "v={v} n={n}");
        }
    }

    #[test]
    fn nearest_is_idempotent_at_centers() {
        let mut rng = Rng::new(22);
        let map = rng.uniform_tensor::<f64>(&[3, 7, 5], 1.0);
        for _ in 0..1000 {
            let p = Coord::new(rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0));
            let s = nearest_sample(&map, p);
            let again = nearest_sample(&map, s.p_star);
            assert_eq!(again.p_star, s.p_star);
            assert_eq!(again.z_star, s.z_star);
        }
    }

    #[test]
    fn bilinear_examples() {
        let mut rng = Rng::new(23);
        let map = rng.uniform_tensor::<f64>(&[2, 4, 3], 1.0);
        // at a center
        let p = center_of(2, 1, 4, 3);
        let v = bilinear_sample(&map, p);
        assert!((v[0] - map.get(&[0, 2, 1])).abs() < 1e-12);
        assert!((v[1] - map.get(&[1, 2, 1])).abs() < 1e-12);
        // midway on x between columns 0 and 1 of row 3
        let a = center_of(3, 0, 4, 3);
        let b = center_of(3, 1, 4, 3);
        let v = bilinear_sample(&map, Coord::new((a.x + b.x) / 2.0, a.y));
        assert!((v[0] - (map.get(&[0, 3, 0]) + map.get(&[0, 3, 1])) / 2.0).abs() < 1e-12);
        // constant map
        let c = Tensor::<f64>::full(vec![1, 5, 5], 0.75);
        for _ in 0..100 {
            let p = Coord::new(rng.uniform_range(-1.2, 1.2), rng.uniform_range(-1.2, 1.2));
            assert!((bilinear_sample(&c, p)[0] - 0.75).abs() < 1e-12);
        }
    }
}
