//! Binary masks on the pixel grid of a plane: even-odd polygon fill, exact
//! Euclidean distance transform, signed distance maps, marching-squares
//! boundaries and binary PGM I/O.

use std::path::Path;

use crate::contour::Polyline;
use crate::error::{Error, Result};
use crate::mesh::Component;
use crate::plane::Slice;

/// Row-major binary image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Mask {
            rows,
            cols,
            data: vec![false; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c]
    }

    /// Out-of-range coordinates read as background.
    #[inline]
    pub fn get_signed(&self, r: isize, c: isize) -> bool {
        r >= 0 && c >= 0 && (r as usize) < self.rows && (c as usize) < self.cols && self.get(r as usize, c as usize)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn union_with(&mut self, other: &Mask) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a |= *b;
        }
    }

    /// Inside pixels with at least one 4-neighbour (within the image) outside.
    pub fn boundary_pixels(&self) -> Vec<bool> {
        let mut out = vec![false; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                if !self.get(r, c) {
                    continue;
                }
                let (ri, ci) = (r as isize, c as isize);
                let edge = [(ri - 1, ci), (ri + 1, ci), (ri, ci - 1), (ri, ci + 1)]
                    .into_iter()
                    .filter(|&(rr, cc)| rr >= 0 && cc >= 0 && (rr as usize) < self.rows && (cc as usize) < self.cols)
                    .any(|(rr, cc)| !self.get(rr as usize, cc as usize));
                out[r * self.cols + c] = edge;
            }
        }
        out
    }
}

/// Even-odd fill of closed polylines, sampled at pixel centres.
pub fn fill_even_odd(polylines: &[Polyline], rows: usize, cols: usize) -> Mask {
    let mut mask = Mask::empty(rows, cols);
    let mut xs = Vec::new();
    for r in 0..rows {
        let y = r as f64;
        xs.clear();
        for poly in polylines.iter().filter(|p| p.points.len() >= 3) {
            let n = poly.points.len();
            for i in 0..n {
                let a = poly.points[i];
                let b = poly.points[(i + 1) % n];
                if (a[0] > y) != (b[0] > y) {
                    xs.push(a[1] + (y - a[0]) * (b[1] - a[1]) / (b[0] - a[0]));
                }
            }
        }
        xs.sort_by(|a, b| a.total_cmp(b));
        // Pixel c is inside iff an odd number of crossings lie strictly right of it,
        // i.e. c ∈ [x0, x1) ∪ [x2, x3) ∪ …
        for pair in xs.chunks_exact(2) {
            let lo = pair[0].ceil().max(0.0);
            let hi = pair[1].ceil().min(cols as f64);
            let mut c = lo;
            while c < hi {
                mask.data[r * cols + c as usize] = true;
                c += 1.0;
            }
        }
    }
    mask
}

/// Binary mask of a mesh cross-section: the union of each component's
/// even-odd fill. The LV cavity is left unpainted because its boundary is the
/// myocardium's inner wall; the cavity shows up as the hole of the
/// myocardial annulus.
pub fn rasterize_slice(slice: &Slice, rows: usize, cols: usize) -> Mask {
    let mut mask = Mask::empty(rows, cols);
    for (component, polylines) in slice {
        if *component == Component::Lv {
            continue;
        }
        let closed: Vec<Polyline> = polylines.iter().filter(|p| p.closed).cloned().collect();
        mask.union_with(&fill_even_odd(&closed, rows, cols));
    }
    mask
}

/// Exact squared Euclidean distance to the nearest `true` feature pixel
/// (two separable passes of the lower-envelope transform). Pixels are `inf`
/// when there is no feature.
pub fn squared_distance_transform(features: &[bool], rows: usize, cols: usize) -> Vec<f64> {
    assert_eq!(features.len(), rows * cols);
    let mut grid: Vec<f64> = features.iter().map(|&f| if f { 0.0 } else { f64::INFINITY }).collect();
    let n = rows.max(cols);
    let mut buf_f = vec![0.0; n];
    let mut buf_d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for c in 0..cols {
        for r in 0..rows {
            buf_f[r] = grid[r * cols + c];
        }
        dt_1d(&buf_f[..rows], &mut buf_d[..rows], &mut v, &mut z);
        for r in 0..rows {
            grid[r * cols + c] = buf_d[r];
        }
    }
    for r in 0..rows {
        buf_f[..cols].copy_from_slice(&grid[r * cols..(r + 1) * cols]);
        dt_1d(&buf_f[..cols], &mut buf_d[..cols], &mut v, &mut z);
        grid[r * cols..(r + 1) * cols].copy_from_slice(&buf_d[..cols]);
    }
    grid
}

fn dt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    // Skip leading infinite samples; the envelope only holds finite parabolas.
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        d.fill(f64::INFINITY);
        return;
    };
    let mut k = 0usize;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, dq) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let diff = q as f64 - p as f64;
        *dq = diff * diff + f[p];
    }
}

/// Signed distance map (pixel units) to the mask's boundary pixels: zero on
/// boundary pixels, negative inside, positive outside. Without any boundary
/// every pixel gets the image diagonal, signed by membership.
pub fn signed_distance_map(mask: &Mask) -> Vec<f64> {
    let boundary = mask.boundary_pixels();
    let sq = squared_distance_transform(&boundary, mask.rows, mask.cols);
    let diag = ((mask.rows * mask.rows + mask.cols * mask.cols) as f64).sqrt();
    sq.iter()
        .zip(&mask.data)
        .map(|(&d2, &inside)| {
            let d = if d2.is_finite() { d2.sqrt() } else { diag };
            if inside {
                -d
            } else {
                d
            }
        })
        .collect()
}

/// Unsigned distance (pixel units) from each pixel centre to the mask's
/// boundary curve, taken as half a pixel short of the nearest pixel of the
/// opposite class. Both rings of pixels adjacent to the boundary read 0.5.
/// Without any opposite-class pixel every entry is the image diagonal.
pub fn contour_distance_map(mask: &Mask) -> Vec<f64> {
    let outside: Vec<bool> = mask.data.iter().map(|&b| !b).collect();
    let to_outside = squared_distance_transform(&outside, mask.rows, mask.cols);
    let to_inside = squared_distance_transform(&mask.data, mask.rows, mask.cols);
    let diag = ((mask.rows * mask.rows + mask.cols * mask.cols) as f64).sqrt();
    mask.data
        .iter()
        .enumerate()
        .map(|(i, &inside)| {
            let d2 = if inside { to_outside[i] } else { to_inside[i] };
            if d2.is_finite() {
                d2.sqrt() - 0.5
            } else {
                diag
            }
        })
        .collect()
}

/// Points on the iso-0.5 marching-squares boundary of a mask, spaced at most
/// 0.5 px apart: every segment endpoint (deduplicated) plus every segment
/// midpoint. The image is padded with background so regions touching the
/// border are closed.
pub fn boundary_points(mask: &Mask) -> Vec<[f64; 2]> {
    use std::collections::BTreeSet;
    // Keys are doubled coordinates, all integral.
    let mut keys: BTreeSet<(i64, i64)> = BTreeSet::new();
    let mut mids: Vec<[f64; 2]> = Vec::new();
    const T: u8 = 0;
    const R: u8 = 1;
    const B: u8 = 2;
    const L: u8 = 3;
    for i in -1..mask.rows as isize {
        for j in -1..mask.cols as isize {
            let tl = mask.get_signed(i, j) as u8;
            let tr = mask.get_signed(i, j + 1) as u8;
            let br = mask.get_signed(i + 1, j + 1) as u8;
            let bl = mask.get_signed(i + 1, j) as u8;
            let case = tl | (tr << 1) | (br << 2) | (bl << 3);
            let segs: &[(u8, u8)] = match case {
                1 | 14 => &[(L, T)],
                2 | 13 => &[(T, R)],
                3 | 12 => &[(L, R)],
                4 | 11 => &[(R, B)],
                5 => &[(L, T), (R, B)],
                6 | 9 => &[(T, B)],
                7 | 8 => &[(L, B)],
                10 => &[(T, R), (B, L)],
                _ => &[],
            };
            let (i2, j2) = (2 * i as i64, 2 * j as i64);
            let key = |e: u8| match e {
                T => (i2, j2 + 1),
                R => (i2 + 1, j2 + 2),
                B => (i2 + 2, j2 + 1),
                _ => (i2 + 1, j2),
            };
            for &(a, b) in segs {
                let (ka, kb) = (key(a), key(b));
                keys.insert(ka);
                keys.insert(kb);
                mids.push([(ka.0 + kb.0) as f64 / 4.0, (ka.1 + kb.1) as f64 / 4.0]);
            }
        }
    }
    keys.into_iter()
        .map(|(r, c)| [r as f64 / 2.0, c as f64 / 2.0])
        .chain(mids)
        .collect()
}

/// Binary PGM (P5) bytes: 0 for background, 255 for inside.
pub fn pgm_bytes(mask: &Mask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.cols, mask.rows).into_bytes();
    out.extend(mask.data.iter().map(|&b| if b { 255u8 } else { 0u8 }));
    out
}

pub fn write_pgm(mask: &Mask, path: &Path) -> Result<()> {
    std::fs::write(path, pgm_bytes(mask)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Mask> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|msg| Error::Invalid(format!("{}: {msg}", path.display())))
}

/// Parses a binary PGM whose samples are all 0 or 255.
pub fn parse_pgm(bytes: &[u8]) -> std::result::Result<Mask, String> {
    let mut pos = 0usize;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err("not a binary PGM (missing P5 magic)".into());
    }
    let cols: usize = token()?.parse().map_err(|e| format!("bad width: {e}"))?;
    let rows: usize = token()?.parse().map_err(|e| format!("bad height: {e}"))?;
    let maxval: usize = token()?.parse().map_err(|e| format!("bad maxval: {e}"))?;
    if maxval != 255 {
        return Err(format!("maxval must be 255, got {maxval}"));
    }
    // Exactly one whitespace byte separates the header from the samples.
    let data_start = pos + 1;
    let expected = rows * cols;
    if bytes.len() != data_start + expected {
        return Err(format!(
            "expected {expected} samples, found {}",
            bytes.len().saturating_sub(data_start)
        ));
    }
    let mut data = Vec::with_capacity(expected);
    for (i, &b) in bytes[data_start..].iter().enumerate() {
        match b {
            0 => data.push(false),
            255 => data.push(true),
            other => return Err(format!("sample {i} has value {other}; masks hold only 0 and 255")),
        }
    }
    Ok(Mask { rows, cols, data })
}
