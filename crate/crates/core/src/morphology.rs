//! Binary-mask helpers: distance transforms, disc dilation, connected
//! components, hole filling and boundaries. Masks are row-major `u8`
//! buffers with values in {0, 1}.

use crate::datamodel::{Connectivity, Dims};

const INF: f64 = 1e20;

/// 1-D squared distance transform of a sampled function (lower envelope of
/// parabolas).
fn dt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = -INF;
    z[1] = INF;
    for q in 1..n {
        loop {
            let p = v[k];
            let s =
                ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = -INF;
                    z[1] = INF;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = INF;
                break;
            }
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest pixel
/// with `mask == 1`. Pixels in an all-zero mask get a very large value.
pub fn squared_distance_to(mask: &[u8], dims: Dims) -> Vec<f64> {
    let (w, h) = (dims.width, dims.height);
    let mut grid: Vec<f64> = mask
        .iter()
        .map(|&m| if m == 1 { 0.0 } else { INF })
        .collect();
    let n = w.max(h);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for c in 0..w {
        for r in 0..h {
            f[r] = grid[r * w + c];
        }
        dt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for r in 0..h {
            grid[r * w + c] = out[r];
        }
    }
    for r in 0..h {
        f[..w].copy_from_slice(&grid[r * w..(r + 1) * w]);
        dt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[r * w..(r + 1) * w].copy_from_slice(&out[..w]);
    }
    grid
}

/// Dilation by a closed Euclidean disc of the given radius.
pub fn dilate_disc(mask: &[u8], dims: Dims, radius: f64) -> Vec<u8> {
    let r2 = radius * radius;
    squared_distance_to(mask, dims)
        .into_iter()
        .map(|d| (d <= r2) as u8)
        .collect()
}

/// Offsets `(dr, dc)` inside a closed disc.
pub(crate) fn disc_offsets(radius: f64) -> Vec<(i64, i64)> {
    let ri = radius.floor() as i64;
    let r2 = radius * radius;
    let mut out = Vec::new();
    for dr in -ri..=ri {
        for dc in -ri..=ri {
            if (dr * dr + dc * dc) as f64 <= r2 {
                out.push((dr, dc));
            }
        }
    }
    out
}

/// Grayscale dilation (maximum over a disc) of a real-valued map.
pub fn max_filter_disc(values: &[f64], dims: Dims, radius: f64) -> Vec<f64> {
    if values.iter().all(|&v| v == 0.0 || v == 1.0) {
        let mask: Vec<u8> = values.iter().map(|&v| v as u8).collect();
        return dilate_disc(&mask, dims, radius)
            .into_iter()
            .map(f64::from)
            .collect();
    }
    max_filter_direct(values, dims, radius)
}

fn max_filter_direct(values: &[f64], dims: Dims, radius: f64) -> Vec<f64> {
    let offsets = disc_offsets(radius);
    let (w, h) = (dims.width as i64, dims.height as i64);
    let mut out = vec![0.0; values.len()];
    for r in 0..h {
        for c in 0..w {
            let mut m = f64::NEG_INFINITY;
            for &(dr, dc) in &offsets {
                let (rr, cc) = (r + dr, c + dc);
                if rr >= 0 && rr < h && cc >= 0 && cc < w {
                    m = m.max(values[(rr * w + cc) as usize]);
                }
            }
            out[(r * w + c) as usize] = m;
        }
    }
    out
}

pub(crate) fn neighbors(
    dims: Dims,
    index: usize,
    connectivity: Connectivity,
) -> impl Iterator<Item = usize> {
    const N4: [(i64, i64); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
    const N8: [(i64, i64); 8] = [
        (-1, -1),
        (-1, 0),
        (-1, 1),
        (0, -1),
        (0, 1),
        (1, -1),
        (1, 0),
        (1, 1),
    ];
    let offsets: &'static [(i64, i64)] = match connectivity {
        Connectivity::Four => &N4,
        Connectivity::Eight => &N8,
    };
    let (r, c) = dims.unflatten(index);
    offsets.iter().filter_map(move |&(dr, dc)| {
        let (rr, cc) = (r as i64 + dr, c as i64 + dc);
        dims.contains(rr, cc)
            .then(|| dims.flatten(rr as usize, cc as usize))
    })
}

/// Labels connected components of pixels where `select(i)` holds.
///
/// Returns per-pixel component ids (0 = not selected, components numbered
/// from 1 in raster order of their first pixel) and the component count.
pub fn label_components(
    dims: Dims,
    connectivity: Connectivity,
    select: impl Fn(usize) -> bool,
) -> (Vec<u32>, usize) {
    let mut labels = vec![0u32; dims.len()];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..dims.len() {
        if labels[start] != 0 || !select(start) {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            for j in neighbors(dims, i, connectivity) {
                if labels[j] == 0 && select(j) {
                    labels[j] = next;
                    stack.push(j);
                }
            }
        }
    }
    (labels, next as usize)
}

/// Sets every background pixel that is not 4-connected to the image border.
pub fn fill_holes(mask: &mut [u8], dims: Dims) {
    let (comp, count) = label_components(dims, Connectivity::Four, |i| mask[i] == 0);
    let mut touches_border = vec![false; count + 1];
    for (i, &c) in comp.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let (r, col) = dims.unflatten(i);
        if r == 0 || col == 0 || r + 1 == dims.height || col + 1 == dims.width {
            touches_border[c as usize] = true;
        }
    }
    for (i, &c) in comp.iter().enumerate() {
        if c != 0 && !touches_border[c as usize] {
            mask[i] = 1;
        }
    }
}

/// Foreground pixels with a 4-neighbor in the background or lying on the
/// image border.
pub fn boundary(mask: &[u8], dims: Dims) -> Vec<u8> {
    let mut out = vec![0u8; mask.len()];
    for i in 0..mask.len() {
        if mask[i] != 1 {
            continue;
        }
        let (r, c) = dims.unflatten(i);
        let on_border = r == 0 || c == 0 || r + 1 == dims.height || c + 1 == dims.width;
        if on_border || neighbors(dims, i, Connectivity::Four).any(|j| mask[j] == 0) {
            out[i] = 1;
        }
    }
    out
}

/// Inclusive bounding box `(row_min, col_min, row_max, col_max)`.
pub fn bounding_box(mask: &[u8], dims: Dims) -> Option<(usize, usize, usize, usize)> {
    let mut bb: Option<(usize, usize, usize, usize)> = None;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m == 1) {
        let (r, c) = dims.unflatten(i);
        bb = Some(match bb {
            None => (r, c, r, c),
            Some((r0, c0, r1, c1)) => (r0.min(r), c0.min(c), r1.max(r), c1.max(c)),
        });
    }
    bb
}

/// Keeps only the largest connected component (ties: first in raster order).
pub fn largest_component(mask: &[u8], dims: Dims, connectivity: Connectivity) -> Vec<u8> {
    let (comp, count) = label_components(dims, connectivity, |i| mask[i] == 1);
    if count == 0 {
        return vec![0; mask.len()];
    }
    let mut sizes = vec![0usize; count + 1];
    for &c in &comp {
        sizes[c as usize] += 1;
    }
    let mut best = 1;
    for c in 2..=count {
        if sizes[c] > sizes[best] {
            best = c;
        }
    }
    comp.iter().map(|&c| (c as usize == best) as u8).collect()
}
