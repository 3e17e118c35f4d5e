//! Even-odd scanline polygon fill with the pixel-center rule.
//!
//! A pixel `(col, row)` is inside when its center `(col + 0.5, row + 0.5)`
//! is inside the polygon under the even-odd rule. Crossings use the
//! half-open convention `y0 <= yc < y1`, so pixels are never counted twice
//! along shared edges. Anything outside `[0, w) x [0, h)` is dropped.

use nalgebra::Vector2;

use crate::error::{Error, Result};

/// A run of covered pixels `[x0, x1)` in one row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub row: u32,
    pub x0: u32,
    pub x1: u32,
}

impl Span {
    pub fn len(&self) -> u64 {
        u64::from(self.x1 - self.x0)
    }

    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0
    }
}

/// Covered runs of one polygon, ordered by row then column.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpanSet {
    spans: Vec<Span>,
}

impl SpanSet {
    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn area(&self) -> u64 {
        self.spans.iter().map(Span::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    /// Number of pixels covered by both sets.
    pub fn intersection_area(&self, other: &SpanSet) -> u64 {
        let (a, b) = (&self.spans, &other.spans);
        let (mut i, mut j) = (0, 0);
        let mut total = 0;
        while i < a.len() && j < b.len() {
            let (sa, sb) = (a[i], b[j]);
            if sa.row != sb.row {
                if sa.row < sb.row {
                    i += 1;
                } else {
                    j += 1;
                }
                continue;
            }
            let lo = sa.x0.max(sb.x0);
            let hi = sa.x1.min(sb.x1);
            if hi > lo {
                total += u64::from(hi - lo);
            }
            if sa.x1 <= sb.x1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        total
    }
}

/// Rasterizes a single polygon into row spans clipped to a `width x height` image.
pub fn polygon_spans(vertices: &[Vector2<f64>], width: u32, height: u32) -> SpanSet {
    let n = vertices.len();
    if n < 3 || width == 0 || height == 0 {
        return SpanSet::default();
    }
    let (ymin, ymax) = vertices
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v.y), hi.max(v.y))
        });
    if !(ymin.is_finite() && ymax.is_finite()) {
        return SpanSet::default();
    }
    let row_lo = (ymin - 0.5).ceil().max(0.0);
    let row_hi = (ymax - 0.5).ceil().min(height as f64);
    if row_lo >= row_hi {
        return SpanSet::default();
    }

    let mut spans = Vec::new();
    let mut xs: Vec<f64> = Vec::with_capacity(8);
    for row in row_lo as u32..row_hi as u32 {
        let yc = row as f64 + 0.5;
        xs.clear();
        for k in 0..n {
            let a = vertices[k];
            let b = vertices[(k + 1) % n];
            if (a.y <= yc) != (b.y <= yc) {
                xs.push(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let c0 = (pair[0] - 0.5).ceil().max(0.0);
            let c1 = (pair[1] - 0.5).ceil().min(width as f64);
            if c1 > c0 {
                spans.push(Span {
                    row,
                    x0: c0 as u32,
                    x1: c1 as u32,
                });
            }
        }
    }
    SpanSet { spans }
}

/// An 8-bit single-channel binary image: 0 background, 255 object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

pub const MASK_ON: u8 = 255;

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; width as usize * height as usize],
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::DimensionMismatch(
                width,
                height,
                data.len() as u32,
                1,
            ));
        }
        Ok(Self {
            width,
            height,
            data: data.into_iter().map(|v| if v > 0 { MASK_ON } else { 0 }).collect(),
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize] != 0
    }

    pub fn set(&mut self, x: u32, y: u32) {
        self.data[(y * self.width + x) as usize] = MASK_ON;
    }

    pub fn fill(&mut self, spans: &SpanSet) {
        for s in spans.spans() {
            let row = (s.row * self.width) as usize;
            self.data[row + s.x0 as usize..row + s.x1 as usize].fill(MASK_ON);
        }
    }

    pub fn count(&self) -> u64 {
        self.data.iter().filter(|&&v| v != 0).count() as u64
    }

    /// Number of pixels set in exactly one of the two masks.
    pub fn symmetric_difference(&self, other: &Mask) -> Result<u64> {
        self.check_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| (**a != 0) != (**b != 0))
            .count() as u64)
    }

    pub fn check_dims(&self, other: &Mask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// Morphological dilation with a square of half-size `radius`.
    pub fn dilate(&self, radius: u32) -> Mask {
        let mut out = Mask::new(self.width, self.height);
        let r = radius as i64;
        for y in 0..self.height as i64 {
            for x in 0..self.width as i64 {
                if !self.get(x as u32, y as u32) {
                    continue;
                }
                for yy in (y - r).max(0)..=(y + r).min(self.height as i64 - 1) {
                    for xx in (x - r).max(0)..=(x + r).min(self.width as i64 - 1) {
                        out.set(xx as u32, yy as u32);
                    }
                }
            }
        }
        out
    }
}

/// Union of the even-odd fills of every polygon.
pub fn rasterize_polygons<'a>(
    polygons: impl IntoIterator<Item = &'a [Vector2<f64>]>,
    width: u32,
    height: u32,
) -> Mask {
    let mut mask = Mask::new(width, height);
    for p in polygons {
        mask.fill(&polygon_spans(p, width, height));
    }
    mask
}
