//! Seeded augmentation, dataset expansion and stratified splitting.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{DatasetManifest, Record, Split, NUM_CLASSES};
use crate::imaging::{load_grayscale, round_to_u8, GrayImage};
use crate::{Error, Result};

/// Default per-class totals after expansion (benign 961+321, malignant
/// 3067+1023, normal 2317+772 across train and validation).
pub const PAPER_EXPANSION_TARGETS: [usize; NUM_CLASSES] = [1282, 4090, 3089];

/// Random stream for item `index` under `seed`. Streams for different
/// indices are independent, so work can be scheduled in any order.
pub fn derive_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSpec {
    pub p_flip_tb: f64,
    pub p_flip_lr: f64,
    pub p_hflip: f64,
    pub p_brightness: f64,
    pub brightness_range: (f64, f64),
    pub zoom_range: (f64, f64),
    pub rotation_deg: (f64, f64),
    pub shear_deg: (f64, f64),
    pub height_shift_frac: (f64, f64),
    /// Applied when images become tensors, never to stored pixels.
    pub rescale: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            p_flip_tb: 0.40,
            p_flip_lr: 0.30,
            p_hflip: 0.5,
            p_brightness: 0.30,
            brightness_range: (0.3, 1.2),
            zoom_range: (0.8, 1.2),
            rotation_deg: (-40.0, 40.0),
            shear_deg: (-20.0, 20.0),
            height_shift_frac: (-0.2, 0.2),
            rescale: 1.0 / 255.0,
        }
    }
}

impl AugmentationSpec {
    /// A spec that leaves every image untouched.
    pub fn identity() -> Self {
        Self {
            p_flip_tb: 0.0,
            p_flip_lr: 0.0,
            p_hflip: 0.0,
            p_brightness: 0.0,
            brightness_range: (1.0, 1.0),
            zoom_range: (1.0, 1.0),
            rotation_deg: (0.0, 0.0),
            shear_deg: (0.0, 0.0),
            height_shift_frac: (0.0, 0.0),
            rescale: 1.0 / 255.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_flip_tb", self.p_flip_tb),
            ("p_flip_lr", self.p_flip_lr),
            ("p_hflip", self.p_hflip),
            ("p_brightness", self.p_brightness),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::argument(format!(
                    "{name} must lie in [0, 1], got {p}"
                )));
            }
        }
        for (name, (lo, hi)) in [
            ("brightness_range", self.brightness_range),
            ("zoom_range", self.zoom_range),
            ("rotation_deg", self.rotation_deg),
            ("shear_deg", self.shear_deg),
            ("height_shift_frac", self.height_shift_frac),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::argument(format!(
                    "{name} must be an ordered range, got ({lo}, {hi})"
                )));
            }
        }
        if self.zoom_range.0 <= 0.0 || self.brightness_range.0 < 0.0 {
            return Err(Error::argument(
                "zoom must be positive and brightness non-negative",
            ));
        }
        if self.shear_deg.0 <= -90.0 || self.shear_deg.1 >= 90.0 {
            return Err(Error::argument(
                "shear must lie strictly within (-90, 90) degrees",
            ));
        }
        Ok(())
    }
}

/// What one call to [`apply_augmentation_traced`] drew and applied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AppliedTransforms {
    pub flip_tb: bool,
    pub flip_lr: bool,
    pub hflip: bool,
    pub rotation_deg: f64,
    pub shear_deg: f64,
    pub height_shift_frac: f64,
    pub zoom: f64,
    /// Brightness factor, when the brightness transform fired.
    pub brightness: Option<f64>,
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn bernoulli(rng: &mut impl Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

pub fn flip_top_bottom(img: &GrayImage) -> GrayImage {
    let mut pixels = Vec::with_capacity(img.pixels().len());
    for r in (0..img.height()).rev() {
        pixels.extend_from_slice(img.row(r));
    }
    GrayImage::from_pixels(img.height(), img.width(), pixels).expect("same dimensions")
}

pub fn flip_left_right(img: &GrayImage) -> GrayImage {
    let mut pixels = Vec::with_capacity(img.pixels().len());
    for r in 0..img.height() {
        pixels.extend(img.row(r).iter().rev());
    }
    GrayImage::from_pixels(img.height(), img.width(), pixels).expect("same dimensions")
}

/// Rotation, shear, vertical shift and zoom about the image centre, sampled
/// with inverse mapping, bilinear interpolation and edge-replicated fill.
fn warp(img: &GrayImage, t: &AppliedTransforms) -> GrayImage {
    let (h, w) = (img.height(), img.width());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let theta = t.rotation_deg.to_radians();
    let shear = t.shear_deg.to_radians().tan();
    let (sin, cos) = theta.sin_cos();

    // forward map on (x, y) offsets from the centre: zoom * shear * rotation
    let (a, b, c, d) = (
        t.zoom * (cos + shear * sin),
        t.zoom * (-sin + shear * cos),
        t.zoom * sin,
        t.zoom * cos,
    );
    let det = a * d - b * c;
    let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
    let shift = t.height_shift_frac * h as f64;

    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        let oy = r as f64 - cy - shift;
        for col in 0..w {
            let ox = col as f64 - cx;
            let sx = (ia * ox + ib * oy + cx).clamp(0.0, (w - 1) as f64);
            let sy = (ic * ox + id * oy + cy).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            let top = img.get(y0, x0) as f64 * (1.0 - fx) + img.get(y0, x1) as f64 * fx;
            let bottom = img.get(y1, x0) as f64 * (1.0 - fx) + img.get(y1, x1) as f64 * fx;
            out.push(round_to_u8(top * (1.0 - fy) + bottom * fy));
        }
    }
    GrayImage::from_pixels(h, w, out).expect("same dimensions")
}

fn scale_brightness(img: &GrayImage, factor: f64) -> GrayImage {
    let pixels = img
        .pixels()
        .iter()
        .map(|&p| round_to_u8(p as f64 * factor))
        .collect();
    GrayImage::from_pixels(img.height(), img.width(), pixels).expect("same dimensions")
}

/// Draws and applies every transform in a fixed order: flip top-bottom,
/// flip left-right, horizontal flip, rotation, shear, height shift, zoom,
/// brightness.
pub fn apply_augmentation_traced(
    img: &GrayImage,
    spec: &AugmentationSpec,
    rng: &mut impl Rng,
) -> (GrayImage, AppliedTransforms) {
    let flip_tb = bernoulli(rng, spec.p_flip_tb);
    let flip_lr = bernoulli(rng, spec.p_flip_lr);
    let hflip = bernoulli(rng, spec.p_hflip);
    let rotation_deg = uniform(rng, spec.rotation_deg);
    let shear_deg = uniform(rng, spec.shear_deg);
    let height_shift_frac = uniform(rng, spec.height_shift_frac);
    let zoom = uniform(rng, spec.zoom_range);
    let brightness_fires = bernoulli(rng, spec.p_brightness);
    let factor = uniform(rng, spec.brightness_range);
    let applied = AppliedTransforms {
        flip_tb,
        flip_lr,
        hflip,
        rotation_deg,
        shear_deg,
        height_shift_frac,
        zoom,
        brightness: brightness_fires.then_some(factor),
    };

    let mut out = if flip_tb {
        flip_top_bottom(img)
    } else {
        img.clone()
    };
    // two independent mirrors: an even count cancels out
    if flip_lr != hflip {
        out = flip_left_right(&out);
    }
    let is_identity_warp =
        rotation_deg == 0.0 && shear_deg == 0.0 && height_shift_frac == 0.0 && zoom == 1.0;
    if !is_identity_warp {
        out = warp(&out, &applied);
    }
    if let Some(f) = applied.brightness {
        out = scale_brightness(&out, f);
    }
    (out, applied)
}

pub fn apply_augmentation(
    img: &GrayImage,
    spec: &AugmentationSpec,
    rng: &mut impl Rng,
) -> GrayImage {
    apply_augmentation_traced(img, spec, rng).0
}

/// One augmented copy to be generated from a source image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpansionJob {
    pub source: String,
    pub output: String,
    pub label: usize,
    /// Which copy of `source` this is, starting at 0.
    pub copy: usize,
    pub seed: u64,
    /// Random stream index for this job.
    pub stream: u64,
}

impl ExpansionJob {
    pub fn render(&self, source: &GrayImage, spec: &AugmentationSpec) -> GrayImage {
        apply_augmentation(source, spec, &mut derive_rng(self.seed, self.stream))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Expansion {
    pub manifest: DatasetManifest,
    pub jobs: Vec<ExpansionJob>,
}

fn augmented_name(source: &str, copy: usize) -> String {
    let (dir, file) = match source.rfind('/') {
        Some(i) => (&source[..=i], &source[i + 1..]),
        None => ("", source),
    };
    let stem = match file.rfind('.') {
        Some(i) if i > 0 => &file[..i],
        _ => file,
    };
    format!("{dir}{stem}_aug{copy}.png")
}

/// Plans augmented copies so that each class of the records tagged `split`
/// (or of every record, when `split` is `None`) reaches its target count.
///
/// Sources are cycled in manifest order; originals and records outside the
/// selection are kept. Generated records inherit their source's split.
pub fn expand_where(
    manifest: &DatasetManifest,
    targets: &[usize],
    seed: u64,
    split: Option<Split>,
) -> Result<Expansion> {
    if targets.len() != manifest.class_names().len() {
        return Err(Error::argument(format!(
            "expected {} class targets, got {}",
            manifest.class_names().len(),
            targets.len()
        )));
    }
    let selected: Vec<&Record> = manifest
        .records()
        .iter()
        .filter(|r| split.is_none_or(|s| r.split == s))
        .collect();

    let mut taken: HashSet<String> = manifest.records().iter().map(|r| r.path.clone()).collect();
    let mut records = manifest.records().to_vec();
    let mut jobs = Vec::new();
    for (label, &target) in targets.iter().enumerate() {
        let sources: Vec<&Record> = selected
            .iter()
            .copied()
            .filter(|r| r.label == label)
            .collect();
        if target < sources.len() {
            return Err(Error::argument(format!(
                "target {target} for {} is below its existing {} images",
                manifest.class_names()[label],
                sources.len()
            )));
        }
        let missing = target - sources.len();
        if missing > 0 && sources.is_empty() {
            return Err(Error::argument(format!(
                "class {} has no images to augment",
                manifest.class_names()[label]
            )));
        }
        for i in 0..missing {
            let src = sources[i % sources.len()];
            let copy = i / sources.len();
            let output = augmented_name(&src.path, copy);
            if !taken.insert(output.clone()) {
                return Err(Error::argument(format!(
                    "augmented path {output} already exists"
                )));
            }
            jobs.push(ExpansionJob {
                source: src.path.clone(),
                output: output.clone(),
                label,
                copy,
                seed,
                stream: jobs.len() as u64,
            });
            records.push(Record::new(output, label, src.split));
        }
    }
    Ok(Expansion {
        manifest: DatasetManifest::from_records(records)?,
        jobs,
    })
}

/// [`expand_where`] over every record.
pub fn expand_dataset(
    manifest: &DatasetManifest,
    targets: &[usize],
    seed: u64,
) -> Result<Expansion> {
    expand_where(manifest, targets, seed, None)
}

/// Renders every planned job from `root/<source>` to `root/<output>` as PNG.
pub fn materialize(expansion: &Expansion, root: &Path, spec: &AugmentationSpec) -> Result<()> {
    spec.validate()?;
    expansion.jobs.par_iter().try_for_each(|job| {
        let source = load_grayscale(root.join(&job.source))?;
        job.render(&source, spec).save_png(root.join(&job.output))
    })
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&p| p.is_nan() || p <= 0.0) {
            return Err(Error::argument(format!(
                "split ratios must be positive, got {parts:?}"
            )));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::argument(format!(
                "split ratios must sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    /// Largest-remainder apportionment of `n` items; ties favour train, then val.
    pub fn apportion(&self, n: usize) -> [usize; 3] {
        let quotas = [self.train, self.val, self.test].map(|r| r * n as f64);
        let mut sizes = quotas.map(|q| (q + 1e-9).floor() as usize);
        let assigned: usize = sizes.iter().sum();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let fa = quotas[a] - sizes[a] as f64;
            let fb = quotas[b] - sizes[b] as f64;
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            sizes[i] += 1;
        }
        sizes
    }
}

/// Tags every record with a split, stratified by class. Each class is
/// shuffled with its own seeded stream and sliced by [`SplitRatios::apportion`].
pub fn assign_splits(
    manifest: &DatasetManifest,
    ratios: &SplitRatios,
    seed: u64,
) -> Result<DatasetManifest> {
    ratios.validate()?;
    let mut records = manifest.records().to_vec();
    for label in 0..manifest.class_names().len() {
        let mut members: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].label == label)
            .collect();
        if members.is_empty() {
            return Err(Error::argument(format!(
                "class {} has no images to split",
                manifest.class_names()[label]
            )));
        }
        members.shuffle(&mut derive_rng(seed, label as u64));
        let [train, val, _] = ratios.apportion(members.len());
        for (k, &i) in members.iter().enumerate() {
            records[i].split = if k < train {
                Split::Train
            } else if k < train + val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    DatasetManifest::from_records(records)
}

/// Stratified train/validation/test split; see [`assign_splits`].
pub fn split_dataset(
    manifest: &DatasetManifest,
    ratios: &SplitRatios,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest, DatasetManifest)> {
    let tagged = assign_splits(manifest, ratios, seed)?;
    Ok((
        tagged.with_split(Split::Train),
        tagged.with_split(Split::Val),
        tagged.with_split(Split::Test),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_image(h: usize, w: usize) -> GrayImage {
        GrayImage::from_fn(h, w, |r, c| ((r * 31 + c * 17) % 256) as u8).unwrap()
    }

    fn manifest_with(counts: &[usize]) -> DatasetManifest {
        let mut records = vec![];
        for (label, &n) in counts.iter().enumerate() {
            for i in 0..n {
                records.push(Record::new(
                    format!("c{label}/img{i:04}.png"),
                    label,
                    Split::Unsplit,
                ));
            }
        }
        DatasetManifest::from_records(records).unwrap()
    }

    #[test]
    fn identity_spec_is_identity() {
        let img = sample_image(24, 24);
        let mut rng = derive_rng(3, 0);
        for _ in 0..10 {
            assert_eq!(
                apply_augmentation(&img, &AugmentationSpec::identity(), &mut rng),
                img
            );
        }
    }

    #[test]
    fn forced_top_bottom_flip() {
        let img = sample_image(9, 5);
        let spec = AugmentationSpec {
            p_flip_tb: 1.0,
            ..AugmentationSpec::identity()
        };
        let out = apply_augmentation(&img, &spec, &mut derive_rng(0, 0));
        for r in 0..9 {
            assert_eq!(out.row(r), img.row(8 - r));
        }
        assert_eq!(flip_top_bottom(&flip_top_bottom(&img)), img);
        assert_eq!(flip_left_right(&flip_left_right(&img)), img);
    }

    #[test]
    fn pure_shift_moves_rows() {
        let img = sample_image(20, 6);
        let t = AppliedTransforms {
            flip_tb: false,
            flip_lr: false,
            hflip: false,
            rotation_deg: 0.0,
            shear_deg: 0.0,
            height_shift_frac: 0.1,
            zoom: 1.0,
            brightness: None,
        };
        let out = warp(&img, &t);
        // content moves down two rows, the top edge is replicated
        for r in 2..20 {
            assert_eq!(out.row(r), img.row(r - 2));
        }
        assert_eq!(out.row(0), img.row(0));
        assert_eq!(out.row(1), img.row(0));
    }

    #[test]
    fn half_turn_rotation_reverses_image() {
        let img = sample_image(7, 7);
        let t = AppliedTransforms {
            flip_tb: false,
            flip_lr: false,
            hflip: false,
            rotation_deg: 180.0,
            shear_deg: 0.0,
            height_shift_frac: 0.0,
            zoom: 1.0,
            brightness: None,
        };
        assert_eq!(warp(&img, &t), flip_left_right(&flip_top_bottom(&img)));
    }

    #[test]
    fn brightness_saturates() {
        let img = GrayImage::filled(3, 3, 250).unwrap();
        assert!(scale_brightness(&img, 1.2)
            .pixels()
            .iter()
            .all(|&p| p == 255));
        assert!(scale_brightness(&img, 0.3)
            .pixels()
            .iter()
            .all(|&p| p == 75));
    }

    #[test]
    fn flip_rates_match_probabilities() {
        let img = sample_image(4, 4);
        let spec = AugmentationSpec::default();
        let (mut tb, mut lr, mut br) = (0, 0, 0);
        for i in 0..10_000 {
            let (_, t) = apply_augmentation_traced(&img, &spec, &mut derive_rng(99, i));
            tb += t.flip_tb as usize;
            lr += t.flip_lr as usize;
            br += t.brightness.is_some() as usize;
        }
        for (count, p) in [(tb, 0.4), (lr, 0.3), (br, 0.3)] {
            let rate = count as f64 / 10_000.0;
            assert!((rate - p).abs() <= 0.02, "rate {rate} vs {p}");
        }
    }

    #[test]
    fn spec_validation() {
        assert!(AugmentationSpec::default().validate().is_ok());
        let bad = AugmentationSpec {
            p_flip_tb: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentationSpec {
            rotation_deg: (10.0, -10.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn expansion_no_op() {
        let m = manifest_with(&[3, 4, 5]);
        let e = expand_dataset(&m, &[3, 4, 5], 1).unwrap();
        assert_eq!(e.manifest, m);
        assert!(e.jobs.is_empty());
    }

    #[test]
    fn expansion_reaches_default_targets() {
        let m = manifest_with(&[120, 561, 416]);
        let e = expand_dataset(&m, &PAPER_EXPANSION_TARGETS, 5).unwrap();
        assert_eq!(e.manifest.class_counts(), PAPER_EXPANSION_TARGETS.to_vec());
        assert_eq!(e.manifest.len(), 8461);

        let benign: Vec<_> = e.jobs.iter().filter(|j| j.label == 0).collect();
        assert_eq!(benign.len(), 1162);
        let mut uses = std::collections::HashMap::new();
        for j in &benign {
            *uses.entry(&j.source).or_insert(0) += 1;
        }
        assert_eq!(uses.len(), 120);
        assert!(uses.values().all(|&n| n == 9 || n == 10));
        assert_eq!(benign[0].output, "c0/img0000_aug0.png");
        assert_eq!(benign[120].output, "c0/img0000_aug1.png");
    }

    #[test]
    fn expansion_is_deterministic_and_validated() {
        let m = manifest_with(&[4, 4, 4]);
        let a = expand_dataset(&m, &[10, 9, 4], 7).unwrap();
        let b = expand_dataset(&m, &[10, 9, 4], 7).unwrap();
        assert_eq!(a, b);
        let mut csv_a = vec![];
        let mut csv_b = vec![];
        crate::dataset::write_manifest(&a.manifest, &mut csv_a).unwrap();
        crate::dataset::write_manifest(&b.manifest, &mut csv_b).unwrap();
        assert_eq!(csv_a, csv_b);
        assert!(matches!(
            expand_dataset(&m, &[3, 4, 4], 7),
            Err(Error::Argument(_))
        ));
        let empty_class = manifest_with(&[4, 0, 4]);
        assert!(expand_dataset(&empty_class, &[4, 2, 4], 7).is_err());
    }

    #[test]
    fn expansion_of_one_split_only() {
        let m = assign_splits(&manifest_with(&[20, 20, 20]), &SplitRatios::default(), 3).unwrap();
        let e = expand_where(&m, &[30, 30, 30], 3, Some(Split::Train)).unwrap();
        assert_eq!(
            e.manifest.with_split(Split::Train).class_counts(),
            vec![30, 30, 30]
        );
        assert_eq!(e.manifest.with_split(Split::Val), m.with_split(Split::Val));
        assert!(e.jobs.iter().all(|j| j.output.contains("_aug")));
    }

    #[test]
    fn augmented_names() {
        assert_eq!(
            augmented_name("Benign cases/Bengin case (1).jpg", 3),
            "Benign cases/Bengin case (1)_aug3.png"
        );
        assert_eq!(augmented_name("plain", 0), "plain_aug0.png");
    }

    #[test]
    fn materialize_writes_identical_files_for_identical_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_with(&[2, 1, 1]);
        for r in m.records() {
            sample_image(16, 16)
                .save_png(dir.path().join(&r.path))
                .unwrap();
        }
        let e = expand_dataset(&m, &[4, 2, 1], 11).unwrap();
        materialize(&e, dir.path(), &AugmentationSpec::default()).unwrap();
        let first: Vec<Vec<u8>> = e
            .jobs
            .iter()
            .map(|j| std::fs::read(dir.path().join(&j.output)).unwrap())
            .collect();
        materialize(&e, dir.path(), &AugmentationSpec::default()).unwrap();
        for (j, bytes) in e.jobs.iter().zip(&first) {
            assert_eq!(&std::fs::read(dir.path().join(&j.output)).unwrap(), bytes);
        }
    }

    #[test]
    fn exact_split_sizes() {
        let m = manifest_with(&[100, 100, 100]);
        let (train, val, test) = split_dataset(&m, &SplitRatios::default(), 1).unwrap();
        assert_eq!(train.class_counts(), vec![70, 70, 70]);
        assert_eq!(val.class_counts(), vec![15, 15, 15]);
        assert_eq!(test.class_counts(), vec![15, 15, 15]);
    }

    #[test]
    fn paper_sized_split_is_a_partition() {
        let m = manifest_with(&[120, 561, 416]);
        let (train, val, test) = split_dataset(&m, &SplitRatios::default(), 2).unwrap();
        assert_eq!(train.len() + val.len() + test.len(), 1097);
        let mut all = HashSet::new();
        for r in train
            .records()
            .iter()
            .chain(val.records())
            .chain(test.records())
        {
            assert!(all.insert(r.path.clone()));
        }
        assert_eq!(all.len(), 1097);
        assert_eq!(train.class_counts(), vec![84, 393, 291]);
    }

    #[test]
    fn split_determinism() {
        let m = manifest_with(&[30, 30, 30]);
        let a = split_dataset(&m, &SplitRatios::default(), 1).unwrap();
        let b = split_dataset(&m, &SplitRatios::default(), 1).unwrap();
        let c = split_dataset(&m, &SplitRatios::default(), 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, c.0);
        assert_eq!(a.0.class_counts(), c.0.class_counts());
    }

    #[test]
    fn split_errors() {
        let m = manifest_with(&[3, 0, 3]);
        assert!(split_dataset(&m, &SplitRatios::default(), 1).is_err());
        let bad = SplitRatios {
            train: 0.5,
            val: 0.2,
            test: 0.2,
        };
        assert!(split_dataset(&manifest_with(&[3, 3, 3]), &bad, 1).is_err());
    }

    proptest! {
        #[test]
        fn augmentation_preserves_shape(
            h in 2usize..20,
            w in 2usize..20,
            seed: u64,
        ) {
            let img = sample_image(h, w);
            let out = apply_augmentation(&img, &AugmentationSpec::default(), &mut derive_rng(seed, 0));
            prop_assert_eq!((out.height(), out.width()), (h, w));
            let again = apply_augmentation(&img, &AugmentationSpec::default(), &mut derive_rng(seed, 0));
            prop_assert_eq!(out, again);
        }

        #[test]
        fn splits_are_stratified_partitions(
            counts in proptest::collection::vec(1usize..60, 3),
            seed: u64,
        ) {
            let m = manifest_with(&counts);
            let (train, val, test) = split_dataset(&m, &SplitRatios::default(), seed).unwrap();
            prop_assert_eq!(train.len() + val.len() + test.len(), m.len());
            for (label, &n) in counts.iter().enumerate() {
                for (part, ratio) in [(&train, 0.70), (&val, 0.15), (&test, 0.15)] {
                    let got = part.class_counts()[label] as f64;
                    prop_assert!((got - ratio * n as f64).abs() < 1.0 + 1e-9);
                }
            }
            let mut paths: Vec<_> = train.records().iter().chain(val.records()).chain(test.records()).map(|r| r.path.clone()).collect();
            paths.sort();
            paths.dedup();
            prop_assert_eq!(paths.len(), m.len());
        }
    }
}
