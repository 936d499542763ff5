//! Raster types and the pixel-level primitives every stage builds on.
//!
//! Flood fill and connected components default to 4-connectivity. Masks are
//! row-major boolean grids; all operations return new values.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::rect::Rect;

pub const DEFAULT_BINARIZE_THRESHOLD: u8 = 128;

/// Grayscale sketch, 0 = black ink on a 255 white ground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SketchRaster {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl SketchRaster {
    pub fn white(width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        Ok(SketchRaster {
            width,
            height,
            data: vec![255; width * height],
        })
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "buffer holds {} values, expected {}",
                data.len(),
                width * height
            )));
        }
        Ok(SketchRaster {
            width,
            height,
            data,
        })
    }

    /// Render ink pixels black on white.
    pub fn from_ink(ink: &Mask) -> Self {
        let data = ink
            .bits()
            .iter()
            .map(|&b| if b { 0 } else { 255 })
            .collect();
        SketchRaster {
            width: ink.width(),
            height: ink.height(),
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidRaster(format!(
            "zero-sized raster {width}x{height}"
        )));
    }
    Ok(())
}

/// Row-major binary grid. Used both for the sketch ink set and for instance masks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

/// Ink pixels of a binarized sketch.
pub type InkMask = Mask;
/// Pixels attributed to one object instance.
pub type InstanceMask = Mask;

impl Mask {
    /// All-false mask. Panics on a zero dimension.
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "zero-sized mask {width}x{height}");
        Mask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        let mut m = Mask::new(width, height);
        m.bits.fill(true);
        m
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        check_dims(width, height)?;
        if bits.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "mask holds {} bits, expected {}",
                bits.len(),
                width * height
            )));
        }
        Ok(Mask {
            width,
            height,
            bits,
        })
    }

    /// Build from a predicate over pixel coordinates.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Mask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.bits[y * width + x] = f(x, y);
            }
        }
        m
    }

    pub fn from_rect(width: usize, height: usize, r: Rect) -> Self {
        Mask::from_fn(width, height, |x, y| r.contains(x, y))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn get_index(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set_index(&mut self, i: usize, v: bool) {
        self.bits[i] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Row-major iterator over the coordinates of set pixels.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }

    pub fn ensure_same_dims(&self, other: &Mask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Result<Mask> {
        self.ensure_same_dims(other)?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Mask {
            width: self.width,
            height: self.height,
            bits,
        })
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a && !b)
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn intersects(&self, other: &Mask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).any(|(&a, &b)| a && b)
    }

    /// Keep only the pixels inside `r`.
    pub fn clip_to(&self, r: &Rect) -> Mask {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                if !r.contains(x, y) {
                    out.bits[y * self.width + x] = false;
                }
            }
        }
        out
    }

    /// Tight bounding box of the set pixels.
    pub fn bounding_box(&self) -> Option<Rect> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for (x, y) in self.iter_set() {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        (x0 != usize::MAX).then(|| Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }
}

/// Per-pixel nonnegative real values, e.g. a distance transform.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if values.len() != width * height {
            return Err(Error::InvalidRaster("scalar field size mismatch".into()));
        }
        if values.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::InvalidRaster(
                "scalar field values must be nonnegative".into(),
            ));
        }
        Ok(ScalarField {
            width,
            height,
            values,
        })
    }

    pub fn uniform(width: usize, height: usize, v: f64) -> Self {
        ScalarField {
            width,
            height,
            values: vec![v; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    pub(crate) fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
        const EIGHT: [(isize, isize); 8] = [
            (-1, -1),
            (0, -1),
            (1, -1),
            (-1, 0),
            (1, 0),
            (-1, 1),
            (0, 1),
            (1, 1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

/// In-bounds neighbours of pixel index `i`.
pub(crate) fn neighbors(
    i: usize,
    width: usize,
    height: usize,
    conn: Connectivity,
) -> impl Iterator<Item = usize> {
    let x = (i % width) as isize;
    let y = (i / width) as isize;
    conn.offsets().iter().filter_map(move |&(dx, dy)| {
        let nx = x + dx;
        let ny = y + dy;
        (nx >= 0 && ny >= 0 && (nx as usize) < width && (ny as usize) < height)
            .then(|| ny as usize * width + nx as usize)
    })
}

/// Ink is every pixel strictly darker than `threshold`.
pub fn binarize(sketch: &SketchRaster, threshold: u8) -> InkMask {
    let bits = sketch.data.iter().map(|&v| v < threshold).collect();
    Mask {
        width: sketch.width,
        height: sketch.height,
        bits,
    }
}

/// Sliding-window pass along one axis. `need_all` selects erosion (every
/// in-bounds pixel in the window set) versus dilation (any pixel set).
fn window_pass(
    src: &[bool],
    width: usize,
    height: usize,
    radius: usize,
    horizontal: bool,
    need_all: bool,
) -> Vec<bool> {
    let mut out = vec![false; src.len()];
    let (lines, len) = if horizontal {
        (height, width)
    } else {
        (width, height)
    };
    let idx = |line: usize, k: usize| {
        if horizontal {
            line * width + k
        } else {
            k * width + line
        }
    };
    let mut prefix = vec![0usize; len + 1];
    for line in 0..lines {
        for k in 0..len {
            prefix[k + 1] = prefix[k] + usize::from(src[idx(line, k)]);
        }
        for k in 0..len {
            let lo = k.saturating_sub(radius);
            let hi = (k + radius + 1).min(len);
            let set = prefix[hi] - prefix[lo];
            out[idx(line, k)] = if need_all { set == hi - lo } else { set > 0 };
        }
    }
    out
}

/// Square-element dilation of side `2 * radius + 1`.
pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let rows = window_pass(&mask.bits, mask.width, mask.height, radius, true, false);
    let bits = window_pass(&rows, mask.width, mask.height, radius, false, false);
    Mask {
        width: mask.width,
        height: mask.height,
        bits,
    }
}

/// Square-element erosion. Pixels outside the raster do not constrain the
/// result, which keeps `erode(dilate(m))` a superset of `m` at the border.
pub fn erode(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let rows = window_pass(&mask.bits, mask.width, mask.height, radius, true, true);
    let bits = window_pass(&rows, mask.width, mask.height, radius, false, true);
    Mask {
        width: mask.width,
        height: mask.height,
        bits,
    }
}

/// Dilation followed by erosion with the same square element, evaluated as
/// if the mask sat on an unbounded false plane and then cropped back.
pub fn morphological_close(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    let (pw, ph) = (w + 2 * radius, h + 2 * radius);
    let padded = Mask::from_fn(pw, ph, |x, y| {
        x >= radius
            && y >= radius
            && x < w + radius
            && y < h + radius
            && mask.get(x - radius, y - radius)
    });
    let closed = erode(&dilate(&padded, radius), radius);
    Mask::from_fn(w, h, |x, y| closed.get(x + radius, y + radius))
}

/// Set every false region that is not 4-connected to the image border.
pub fn fill_holes(mask: &Mask) -> Mask {
    let (w, h) = mask.dims();
    let mut outside = vec![false; mask.len()];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let border = x == 0 || y == 0 || x == w - 1 || y == h - 1;
            if border && !mask.bits[i] && !outside[i] {
                outside[i] = true;
                queue.push_back(i);
            }
        }
    }
    while let Some(i) = queue.pop_front() {
        for n in neighbors(i, w, h, Connectivity::Four) {
            if !mask.bits[n] && !outside[n] {
                outside[n] = true;
                queue.push_back(n);
            }
        }
    }
    let bits = outside.iter().map(|&o| !o).collect();
    Mask {
        width: w,
        height: h,
        bits,
    }
}

/// Exact Euclidean distance from every pixel to the nearest set pixel.
///
/// Two separable passes of the lower-envelope-of-parabolas construction over
/// squared distances. With no set pixel at all every value is `+inf`.
pub fn distance_transform(mask: &Mask) -> ScalarField {
    let (w, h) = mask.dims();
    let inf = f64::INFINITY;
    let mut sq: Vec<f64> = mask
        .bits
        .iter()
        .map(|&b| if b { 0.0 } else { inf })
        .collect();

    let mut line = Vec::with_capacity(w.max(h));
    let mut out = Vec::with_capacity(w.max(h));
    let mut env = Envelope::default();
    for y in 0..h {
        line.clear();
        line.extend_from_slice(&sq[y * w..(y + 1) * w]);
        env.transform(&line, &mut out);
        sq[y * w..(y + 1) * w].copy_from_slice(&out);
    }
    for x in 0..w {
        line.clear();
        line.extend((0..h).map(|y| sq[y * w + x]));
        env.transform(&line, &mut out);
        for y in 0..h {
            sq[y * w + x] = out[y];
        }
    }
    ScalarField {
        width: w,
        height: h,
        values: sq.into_iter().map(f64::sqrt).collect(),
    }
}

#[derive(Default)]
struct Envelope {
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    /// 1-D squared distance transform: out[q] = min_p (q - p)^2 + f[p].
    fn transform(&mut self, f: &[f64], out: &mut Vec<f64>) {
        out.clear();
        self.sites.clear();
        self.bounds.clear();
        for (p, &fp) in f.iter().enumerate() {
            if !fp.is_finite() {
                continue;
            }
            loop {
                match self.sites.last() {
                    None => {
                        self.sites.push(p);
                        self.bounds.push(f64::NEG_INFINITY);
                        break;
                    }
                    Some(&v) => {
                        let s = ((fp + (p * p) as f64) - (f[v] + (v * v) as f64))
                            / (2.0 * (p - v) as f64);
                        if s <= *self.bounds.last().unwrap() {
                            self.sites.pop();
                            self.bounds.pop();
                        } else {
                            self.sites.push(p);
                            self.bounds.push(s);
                            break;
                        }
                    }
                }
            }
        }
        if self.sites.is_empty() {
            out.resize(f.len(), f64::INFINITY);
            return;
        }
        let mut k = 0;
        for q in 0..f.len() {
            while k + 1 < self.sites.len() && self.bounds[k + 1] < q as f64 {
                k += 1;
            }
            let v = self.sites[k];
            let d = q as f64 - v as f64;
            out.push(d * d + f[v]);
        }
    }
}

/// |a ∧ b| / |a ∨ b|, or 0 when both masks are empty.
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok(if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    })
}

/// Connected components of the set pixels; labels start at 1, 0 = unset.
#[derive(Debug, Clone)]
pub struct Components {
    pub labels: Vec<u32>,
    pub count: u32,
}

impl Components {
    /// Pixel indices of component `label`, row-major.
    pub fn members(&self, label: u32) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn connected_components(mask: &Mask, conn: Connectivity) -> Components {
    let (w, h) = mask.dims();
    let mut labels = vec![0u32; mask.len()];
    let mut count = 0;
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask.bits[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for n in neighbors(i, w, h, conn) {
                if mask.bits[n] && labels[n] == 0 {
                    labels[n] = count;
                    queue.push_back(n);
                }
            }
        }
    }
    Components { labels, count }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(bits: &[u8]) -> Mask {
        Mask::from_bits(bits.len(), 1, bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    fn grid(rows: &[&str]) -> Mask {
        let h = rows.len();
        let w = rows[0].len();
        Mask::from_fn(w, h, |x, y| rows[y].as_bytes()[x] == b'#')
    }

    #[test]
    fn binarize_examples() {
        let white = SketchRaster::white(4, 3).unwrap();
        assert!(binarize(&white, 128).is_empty());
        let black = SketchRaster::from_raw(4, 3, vec![0; 12]).unwrap();
        assert_eq!(binarize(&black, 128).count(), 12);
        let two = SketchRaster::from_raw(2, 1, vec![10, 200]).unwrap();
        assert_eq!(binarize(&two, 128).bits(), &[true, false]);
    }

    #[test]
    fn raster_rejects_bad_buffers() {
        assert!(SketchRaster::from_raw(2, 2, vec![0; 3]).is_err());
        assert!(SketchRaster::white(0, 2).is_err());
        assert!(Mask::from_bits(2, 0, vec![]).is_err());
    }

    #[test]
    fn close_radius_zero_is_identity() {
        let m = row(&[1, 0, 0, 1, 0]);
        assert_eq!(morphological_close(&m, 0), m);
    }

    #[test]
    fn close_bridges_one_pixel_gap() {
        let m = row(&[0, 1, 0, 1, 0]);
        assert_eq!(morphological_close(&m, 1), row(&[0, 1, 1, 1, 0]));
    }

    #[test]
    fn close_of_empty_is_empty() {
        assert!(morphological_close(&Mask::new(6, 6), 2).is_empty());
    }

    #[test]
    fn close_keeps_border_pixels() {
        let m = row(&[1, 0, 0, 0, 1]);
        let c = morphological_close(&m, 1);
        assert!(m.is_subset_of(&c));
    }

    #[test]
    fn fill_holes_examples() {
        let solid = Mask::from_rect(6, 6, Rect::new(1, 1, 3, 4));
        assert_eq!(fill_holes(&solid), solid);

        let ring = grid(&["#####", "#####", "##.##", "#####", "#####"]);
        assert_eq!(fill_holes(&ring), Mask::full(5, 5));

        let c_shape = grid(&[".....", ".###.", ".#...", ".###.", "....."]);
        assert_eq!(fill_holes(&c_shape), c_shape);
    }

    #[test]
    fn fill_holes_ignores_diagonal_leaks() {
        // The hole touches the outside only diagonally, so it is enclosed under 4-connectivity.
        let m = grid(&[".#...", "#.#..", ".#...", "....."]);
        let f = fill_holes(&m);
        assert!(f.get(1, 1));
    }

    #[test]
    fn distance_transform_examples() {
        let m = row(&[1, 0, 0, 0]);
        assert_eq!(distance_transform(&m).values(), &[0.0, 1.0, 2.0, 3.0]);

        let mut m = Mask::new(3, 3);
        m.set(1, 1, true);
        let d = distance_transform(&m);
        assert_eq!(d.get(1, 1), 0.0);
        assert_eq!(d.get(1, 0), 1.0);
        assert_eq!(d.get(0, 0), 2f64.sqrt());
    }

    #[test]
    fn distance_transform_of_empty_mask_is_infinite() {
        let d = distance_transform(&Mask::new(3, 2));
        assert!(d.values().iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn mask_iou_examples() {
        let a = Mask::from_rect(8, 8, Rect::new(0, 0, 2, 2));
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
        let b = Mask::from_rect(8, 8, Rect::new(4, 4, 2, 2));
        assert_eq!(mask_iou(&a, &b).unwrap(), 0.0);

        let mut p = Mask::new(8, 8);
        let mut q = Mask::new(8, 8);
        for x in 0..2 {
            p.set(x, 3, true);
            q.set(x, 3, true);
        }
        q.set(2, 3, true);
        assert!((mask_iou(&p, &q).unwrap() - 2.0 / 3.0).abs() < 1e-12);

        assert_eq!(mask_iou(&Mask::new(3, 3), &Mask::new(3, 3)).unwrap(), 0.0);
        assert!(matches!(
            mask_iou(&a, &Mask::new(3, 3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn components_four_vs_eight() {
        let m = grid(&["#.", ".#"]);
        assert_eq!(connected_components(&m, Connectivity::Four).count, 2);
        assert_eq!(connected_components(&m, Connectivity::Eight).count, 1);
    }

    #[test]
    fn bounding_box_is_tight() {
        let m = grid(&["....", ".#..", "...#", "...."]);
        assert_eq!(m.bounding_box(), Some(Rect::new(1, 1, 3, 2)));
        assert_eq!(Mask::new(2, 2).bounding_box(), None);
    }
}
