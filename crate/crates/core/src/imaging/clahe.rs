use super::{round_to_u8, GrayImage, GRAY_LEVELS};
use crate::{Error, Result};

/// Parameters of contrast limited adaptive histogram equalization.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClaheParams {
    /// Number of tile rows.
    pub tiles_m: usize,
    /// Number of tile columns.
    pub tiles_n: usize,
    /// Clip limit as a fraction of the tile's pixel count, in (0, 1].
    pub clip: f64,
    pub bins: usize,
    pub gray_levels: usize,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self {
            tiles_m: 8,
            tiles_n: 8,
            clip: 0.01,
            bins: 256,
            gray_levels: GRAY_LEVELS,
        }
    }
}

impl ClaheParams {
    pub fn total_tiles(&self) -> usize {
        self.tiles_m * self.tiles_n
    }

    pub fn validate(&self) -> Result<()> {
        if self.tiles_m == 0 || self.tiles_n == 0 {
            return Err(Error::argument("tile grid must be at least 1x1"));
        }
        if !(self.clip > 0.0 && self.clip <= 1.0) {
            return Err(Error::argument(format!(
                "clip limit must lie in (0, 1], got {}",
                self.clip
            )));
        }
        if self.bins < 2 {
            return Err(Error::argument("at least two histogram bins are required"));
        }
        if self.gray_levels != GRAY_LEVELS {
            return Err(Error::argument(format!(
                "8-bit input has {GRAY_LEVELS} gray levels, got {}",
                self.gray_levels
            )));
        }
        Ok(())
    }
}

/// Axis-aligned pixel rectangle inside an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileRect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl TileRect {
    pub fn whole(img: &GrayImage) -> Self {
        Self {
            row: 0,
            col: 0,
            height: img.height(),
            width: img.width(),
        }
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

/// Per-bin pixel counts of one tile.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Histogram {
    counts: Vec<u32>,
    total: u32,
}

impl Histogram {
    pub fn from_counts(counts: Vec<u32>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::argument("a histogram needs at least two bins"));
        }
        let total = counts
            .iter()
            .try_fold(0u32, |acc, &c| acc.checked_add(c))
            .ok_or_else(|| Error::argument("histogram total overflows"))?;
        Ok(Self { counts, total })
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }
}

/// Maps each input gray level to an output level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LookupTable {
    entries: Vec<u8>,
}

impl LookupTable {
    pub fn entries(&self) -> &[u8] {
        &self.entries
    }

    #[inline]
    pub fn map(&self, level: u8) -> u8 {
        self.entries[level as usize]
    }

    pub fn apply(&self, img: &GrayImage) -> GrayImage {
        let pixels = img.pixels().iter().map(|&p| self.map(p)).collect();
        GrayImage::from_pixels(img.height(), img.width(), pixels).expect("same dimensions")
    }
}

#[inline]
fn bin_of(level: usize, bins: usize, gray_levels: usize) -> usize {
    (level * bins / gray_levels).min(bins - 1)
}

pub fn tile_histogram(img: &GrayImage, rect: TileRect, bins: usize) -> Result<Histogram> {
    if rect.height == 0 || rect.width == 0 {
        return Err(Error::argument("tile rectangle is empty"));
    }
    if rect.row + rect.height > img.height() || rect.col + rect.width > img.width() {
        return Err(Error::argument(format!(
            "tile {rect:?} exceeds {}x{} image",
            img.height(),
            img.width()
        )));
    }
    if bins < 2 {
        return Err(Error::argument("at least two histogram bins are required"));
    }
    let mut counts = vec![0u32; bins];
    for r in rect.row..rect.row + rect.height {
        for &p in &img.row(r)[rect.col..rect.col + rect.width] {
            counts[bin_of(p as usize, bins, GRAY_LEVELS)] += 1;
        }
    }
    Ok(Histogram {
        counts,
        total: rect.area() as u32,
    })
}

/// Absolute per-bin cap for a tile of `total` pixels: `max(1, round(clip * total))`.
pub fn clip_limit(clip: f64, total: u32) -> u32 {
    ((clip * total as f64 + 0.5).floor() as u32).max(1)
}

/// Caps every bin at the clip limit and hands the excess back to the bins.
///
/// Excess is returned in one uniform pass (capped at the limit), then any
/// remainder goes one count at a time to the bins still below the limit, in
/// ascending bin order.
pub fn clip_redistribute(hist: &Histogram, clip: f64) -> Result<Histogram> {
    if !(clip > 0.0 && clip <= 1.0) {
        return Err(Error::argument(format!(
            "clip limit must lie in (0, 1], got {clip}"
        )));
    }
    let limit = clip_limit(clip, hist.total);
    let bins = hist.bins();
    if (limit as u64) * (bins as u64) < hist.total as u64 {
        return Err(Error::InfeasibleClip {
            limit,
            bins,
            total: hist.total,
        });
    }

    let mut counts = hist.counts.clone();
    let mut excess = 0u32;
    for c in counts.iter_mut() {
        if *c > limit {
            excess += *c - limit;
            *c = limit;
        }
    }

    let share = excess / bins as u32;
    if share > 0 {
        for c in counts.iter_mut() {
            let added = share.min(limit - *c);
            *c += added;
            excess -= added;
        }
    }

    while excess > 0 {
        for c in counts.iter_mut().filter(|c| **c < limit) {
            if excess == 0 {
                break;
            }
            *c += 1;
            excess -= 1;
        }
    }

    Ok(Histogram {
        counts,
        total: hist.total,
    })
}

/// Cumulative-histogram mapping `f(x) = (G - 1) * sum_{i <= bin(x)} t_i / total`,
/// rounded half-up.
pub fn build_mapping(hist: &Histogram, gray_levels: usize) -> Result<LookupTable> {
    if hist.total == 0 {
        return Err(Error::argument("cannot map an empty histogram"));
    }
    if !(2..=GRAY_LEVELS).contains(&gray_levels) {
        return Err(Error::argument(format!(
            "gray levels must lie in 2..={GRAY_LEVELS}, got {gray_levels}"
        )));
    }
    let mut cumulative = Vec::with_capacity(hist.bins());
    let mut running = 0u64;
    for &c in &hist.counts {
        running += c as u64;
        cumulative.push(running);
    }
    let total = hist.total as u64;
    let top = (gray_levels - 1) as u64;
    let entries = (0..gray_levels)
        .map(|level| {
            let cum = cumulative[bin_of(level, hist.bins(), gray_levels)];
            // exact half-up rounding of top * cum / total
            ((2 * top * cum + total) / (2 * total)) as u8
        })
        .collect();
    Ok(LookupTable { entries })
}

/// Splits `len` into `parts` spans; the last span absorbs the remainder.
fn partition(len: usize, parts: usize) -> Vec<(usize, usize)> {
    let step = len / parts;
    (0..parts)
        .map(|i| {
            let start = i * step;
            let size = if i + 1 == parts { len - start } else { step };
            (start, size)
        })
        .collect()
}

/// For each pixel index along one axis: the two neighbouring tile indices and
/// the weight of the second one. Pixels outside the outermost tile centres
/// take the nearest tile alone.
fn axis_weights(len: usize, spans: &[(usize, usize)]) -> Vec<(usize, usize, f64)> {
    let centres: Vec<f64> = spans
        .iter()
        .map(|&(start, size)| start as f64 + size as f64 / 2.0)
        .collect();
    let last = centres.len() - 1;
    (0..len)
        .map(|i| {
            let p = i as f64;
            if p <= centres[0] {
                (0, 0, 0.0)
            } else if p >= centres[last] {
                (last, last, 0.0)
            } else {
                let t = centres.partition_point(|&c| c <= p) - 1;
                let w = (p - centres[t]) / (centres[t + 1] - centres[t]);
                (t, t + 1, w)
            }
        })
        .collect()
}

/// Contrast limited adaptive histogram equalization.
///
/// Each tile gets a clipped, redistributed histogram and its cumulative
/// mapping; every output pixel blends the mappings of the four nearest tile
/// centres bilinearly.
pub fn clahe(img: &GrayImage, params: &ClaheParams) -> Result<GrayImage> {
    params.validate()?;
    if img.height() < params.tiles_m || img.width() < params.tiles_n {
        return Err(Error::argument(format!(
            "{}x{} image is smaller than the {}x{} tile grid",
            img.height(),
            img.width(),
            params.tiles_m,
            params.tiles_n
        )));
    }
    let row_spans = partition(img.height(), params.tiles_m);
    let col_spans = partition(img.width(), params.tiles_n);

    let mut luts = Vec::with_capacity(params.total_tiles());
    for &(row, height) in &row_spans {
        for &(col, width) in &col_spans {
            let rect = TileRect {
                row,
                col,
                height,
                width,
            };
            let hist = tile_histogram(img, rect, params.bins)?;
            let clipped = clip_redistribute(&hist, params.clip)?;
            luts.push(build_mapping(&clipped, params.gray_levels)?);
        }
    }
    let lut = |tr: usize, tc: usize| &luts[tr * params.tiles_n + tc];

    let rows = axis_weights(img.height(), &row_spans);
    let cols = axis_weights(img.width(), &col_spans);
    let mut out = Vec::with_capacity(img.pixels().len());
    for (r, &(t0, t1, wy)) in rows.iter().enumerate() {
        for (c, &(s0, s1, wx)) in cols.iter().enumerate() {
            let level = img.get(r, c);
            let top =
                (1.0 - wx) * lut(t0, s0).map(level) as f64 + wx * lut(t0, s1).map(level) as f64;
            let bottom =
                (1.0 - wx) * lut(t1, s0).map(level) as f64 + wx * lut(t1, s1).map(level) as f64;
            out.push(round_to_u8((1.0 - wy) * top + wy * bottom));
        }
    }
    GrayImage::from_pixels(img.height(), img.width(), out)
}
