//! Loading, scaling, augmentation, symmetrisation and splitting of the 8x8 digit corpus.

use std::collections::BTreeSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::{apply_group, FeatureMap, GroupElement};
use crate::nn::NUM_CLASSES;
use crate::train::{shuffle, FeatureDataset};
use crate::{Error, Result};

pub const SIDE: usize = 8;
pub const PIXELS: usize = SIDE * SIDE;
/// Largest raw intensity in the corpus.
pub const RAW_MAX: u8 = 16;
/// Scaled value of an empty (raw 0) pixel.
pub const BACKGROUND: f64 = -1.0;

/// The four one-pixel shifts used for augmentation, in output order:
/// right, left, down, up.
pub const AUGMENT_SHIFTS: [(i8, i8); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrayImage {
    /// Row-major 8x8, every value in `[-1, 1]`.
    #[serde(with = "pixel_array")]
    pub pixels: [f64; PIXELS],
    pub label: usize,
    /// Index of the source image this one was derived from.
    pub origin_id: usize,
}

impl GrayImage {
    pub fn new(pixels: [f64; PIXELS], label: usize, origin_id: usize) -> Result<Self> {
        if label >= NUM_CLASSES {
            return Err(Error::Label(label));
        }
        if let Some(bad) = pixels.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("pixel {bad} outside [-1, 1]")));
        }
        Ok(Self {
            pixels,
            label,
            origin_id,
        })
    }

    pub fn inverted(&self) -> Self {
        apply_group(&GroupElement::Inversion, self)
    }
}

mod pixel_array {
    use super::PIXELS;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(px: &[f64; PIXELS], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(px.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; PIXELS], D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        v.try_into()
            .map_err(|v: Vec<f64>| D::Error::invalid_length(v.len(), &"64 pixels"))
    }
}

/// Raw integer intensities `0..=16` as read from an optdigits CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDigits {
    pub pixels: Vec<[u8; PIXELS]>,
    pub labels: Vec<usize>,
}

impl RawDigits {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Scales every pixel to `[-1, 1]`; `origin_id` is the row index.
    pub fn to_dataset(&self, name: &str) -> Dataset {
        let images = self
            .pixels
            .iter()
            .zip(&self.labels)
            .enumerate()
            .map(|(i, (px, &label))| GrayImage {
                pixels: px.map(scale_raw),
                label,
                origin_id: i,
            })
            .collect();
        Dataset {
            name: name.to_string(),
            images,
            lineage: vec!["load".into(), "scale".into()],
        }
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Count of each raw intensity `0..=16` over all pixels.
    pub fn pixel_histogram(&self) -> [usize; RAW_MAX as usize + 1] {
        let mut hist = [0; RAW_MAX as usize + 1];
        for px in &self.pixels {
            for &v in px {
                hist[v as usize] += 1;
            }
        }
        hist
    }

    /// Canonical CSV: 64 pixels then the label, one image per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (px, label) in self.pixels.iter().zip(&self.labels) {
            for v in px {
                out.push_str(&v.to_string());
                out.push(',');
            }
            out.push_str(&label.to_string());
            out.push('\n');
        }
        out
    }
}

/// Parses optdigits text: each non-blank line holds 64 integers in `0..=16` then a label.
pub fn parse_optdigits(text: &str, path: &Path) -> Result<RawDigits> {
    let mut raw = RawDigits {
        pixels: Vec::new(),
        labels: Vec::new(),
    };
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != PIXELS + 1 {
            return Err(err(
                lineno,
                format!("expected {} fields, found {}", PIXELS + 1, fields.len()),
            ));
        }
        let mut px = [0u8; PIXELS];
        for (k, f) in fields[..PIXELS].iter().enumerate() {
            let v: u8 = parse_int(f).ok_or_else(|| err(lineno, format!("pixel {k}: `{f}` is not an integer")))?;
            if v > RAW_MAX {
                return Err(err(lineno, format!("pixel {k}: {v} outside 0..={RAW_MAX}")));
            }
            px[k] = v;
        }
        let label_field = fields[PIXELS];
        let label = parse_int(label_field)
            .map(usize::from)
            .filter(|&l| l < NUM_CLASSES)
            .ok_or_else(|| err(lineno, format!("label `{label_field}` outside 0..=9")))?;
        raw.pixels.push(px);
        raw.labels.push(label);
    }
    if raw.is_empty() {
        return Err(Error::Empty(format!("{} contains no images", path.display())));
    }
    Ok(raw)
}

fn parse_int(s: &str) -> Option<u8> {
    // Some exports write integral floats such as `3.0`.
    s.parse::<u8>().ok().or_else(|| {
        let f: f64 = s.parse().ok()?;
        (f.fract() == 0.0 && (0.0..=255.0).contains(&f)).then_some(f as u8)
    })
}

pub fn load_optdigits(path: impl AsRef<Path>) -> Result<RawDigits> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_optdigits(&text, path)
}

/// `raw / 8 - 1`: 0 maps to -1, 8 to 0 and 16 to +1.
pub fn scale_to_unit(raw: u8) -> Result<f64> {
    if raw > RAW_MAX {
        return Err(Error::Config(format!("raw pixel {raw} outside 0..={RAW_MAX}")));
    }
    Ok(scale_raw(raw))
}

#[inline]
fn scale_raw(raw: u8) -> f64 {
    raw as f64 / 8.0 - 1.0
}

/// Inverse of [`scale_to_unit`] for values on the scaled grid.
pub fn unscale(x: f64) -> Option<u8> {
    let raw = (x + 1.0) * 8.0;
    (raw.fract() == 0.0 && (0.0..=RAW_MAX as f64).contains(&raw)).then_some(raw as u8)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub images: Vec<GrayImage>,
    /// Transforms applied so far, oldest first.
    pub lineage: Vec<String>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Vec<GrayImage>) -> Self {
        Self {
            name: name.into(),
            images,
            lineage: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn derive(&self, name: String, step: &str, images: Vec<GrayImage>) -> Self {
        let mut lineage = self.lineage.clone();
        lineage.push(step.to_string());
        Self {
            name,
            images,
            lineage,
        }
    }

    pub fn origin_ids(&self) -> BTreeSet<usize> {
        self.images.iter().map(|i| i.origin_id).collect()
    }

    pub fn mean_pixel(&self) -> f64 {
        let sum: f64 = self.images.iter().flat_map(|i| i.pixels.iter()).sum();
        sum / (self.images.len() * PIXELS) as f64
    }

    /// Every image with every pixel negated, labels kept.
    pub fn inverted(&self) -> Self {
        self.derive(
            format!("-{}", self.name),
            "invert",
            self.images.iter().map(GrayImage::inverted).collect(),
        )
    }

    /// Applies a feature map to every image.
    pub fn features(&self, map: &FeatureMap) -> Result<FeatureDataset> {
        let mut features = Vec::with_capacity(self.len() * PIXELS);
        for img in &self.images {
            features.extend_from_slice(&map.apply(&img.pixels));
        }
        FeatureDataset::new(
            map.output_dim(),
            features,
            self.images.iter().map(|i| i.label).collect(),
        )
    }

    pub fn manifest(&self, seed: Option<u64>) -> DatasetManifest {
        DatasetManifest {
            name: self.name.clone(),
            size: self.len(),
            origins: self.origin_ids().len(),
            lineage: self.lineage.clone(),
            seed,
        }
    }

    /// True when every image's inversion occurs in the set with the same label
    /// and the same multiplicity.
    pub fn is_inversion_closed(&self) -> bool {
        use std::collections::HashMap;
        // -0.0 and 0.0 are the same pixel value
        let key = |px: &[f64; PIXELS], label: usize| {
            let bits: Vec<u64> = px.iter().map(|v| (v + 0.0).to_bits()).collect();
            (bits, label)
        };
        let mut counts: HashMap<(Vec<u64>, usize), i64> = HashMap::new();
        for img in &self.images {
            *counts.entry(key(&img.pixels, img.label)).or_default() += 1;
        }
        self.images.iter().all(|img| {
            let neg = img.pixels.map(|v| -v);
            counts.get(&key(&img.pixels, img.label)) == counts.get(&key(&neg, img.label))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub size: usize,
    pub origins: usize,
    pub lineage: Vec<String>,
    pub seed: Option<u64>,
}

/// Five copies of each image: the original, then one-pixel shifts right, left, down and up.
pub fn augment_shifts(dataset: &Dataset) -> Dataset {
    let mut images = Vec::with_capacity(dataset.len() * 5);
    for img in &dataset.images {
        images.push(img.clone());
        for (dx, dy) in AUGMENT_SHIFTS {
            images.push(apply_group(&GroupElement::Shift { dx, dy }, img));
        }
    }
    dataset.derive(format!("{}x5", dataset.name), "augment_shifts", images)
}

/// The dataset followed by the inversion of every image.
pub fn symmetrize(dataset: &Dataset) -> Dataset {
    let mut images = dataset.images.clone();
    images.extend(dataset.images.iter().map(GrayImage::inverted));
    dataset.derive(format!("±{}", dataset.name), "symmetrize", images)
}

/// Splits by `origin_id` so every copy of a source image lands on one side.
/// The test side receives `floor(test_fraction * origins)` groups.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction {test_fraction} must lie strictly between 0 and 1"
        )));
    }
    let origins: Vec<usize> = dataset.origin_ids().into_iter().collect();
    let n_test = (test_fraction * origins.len() as f64).floor() as usize;
    if n_test == 0 || n_test == origins.len() {
        return Err(Error::Config(format!(
            "test fraction {test_fraction} leaves one side of the split empty ({} origins)",
            origins.len()
        )));
    }
    let mut order = origins;
    shuffle(&mut order, &mut ChaCha8Rng::seed_from_u64(seed));
    let test_ids: BTreeSet<usize> = order[..n_test].iter().copied().collect();
    let (test, train): (Vec<GrayImage>, Vec<GrayImage>) = dataset
        .images
        .iter()
        .cloned()
        .partition(|img| test_ids.contains(&img.origin_id));
    let step = format!("split(test_fraction={test_fraction}, seed={seed})");
    Ok((
        dataset.derive("X_train".into(), &step, train),
        dataset.derive("X_test".into(), &step, test),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(row: usize, col: usize) -> GrayImage {
        let mut px = [BACKGROUND; PIXELS];
        px[row * SIDE + col] = 1.0;
        GrayImage::new(px, 4, 0).unwrap()
    }

    #[test]
    fn scaling_endpoints() {
        assert_eq!(scale_to_unit(0).unwrap(), -1.0);
        assert_eq!(scale_to_unit(16).unwrap(), 1.0);
        assert_eq!(scale_to_unit(8).unwrap(), 0.0);
        assert_eq!(scale_to_unit(4).unwrap(), -0.5);
        assert!(scale_to_unit(17).is_err());
        for raw in 0..=16 {
            assert_eq!(unscale(scale_to_unit(raw).unwrap()), Some(raw));
        }
    }

    #[test]
    fn parse_blank_image_line() {
        let line = format!("{}3\n", "0,".repeat(64));
        let raw = parse_optdigits(&line, Path::new("t.csv")).unwrap();
        assert_eq!(raw.len(), 1);
        let ds = raw.to_dataset("t");
        assert_eq!(ds.images[0].label, 3);
        assert!(ds.images[0].pixels.iter().all(|&v| v == -1.0));
    }

    #[test]
    fn parse_errors_name_the_line() {
        let good = format!("{}1", "0,".repeat(64));
        let short = "1,2,3";
        match parse_optdigits(&format!("{good}\n{short}\n"), Path::new("d.csv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let hot = format!("17,{}1", "0,".repeat(63));
        assert!(matches!(
            parse_optdigits(&hot, Path::new("d.csv")),
            Err(Error::Parse { line: 1, .. })
        ));
        let bad_label = format!("{}10", "0,".repeat(64));
        assert!(parse_optdigits(&bad_label, Path::new("d.csv")).is_err());
        assert!(matches!(
            parse_optdigits("", Path::new("d.csv")),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn augment_one_hot_positions() {
        let ds = Dataset::new("one", vec![one_hot(3, 3)]);
        let aug = augment_shifts(&ds);
        assert_eq!(aug.len(), 5);
        let hot: Vec<(usize, usize)> = aug
            .images
            .iter()
            .map(|img| {
                let i = img.pixels.iter().position(|&v| v == 1.0).unwrap();
                (i / SIDE, i % SIDE)
            })
            .collect();
        assert_eq!(hot, vec![(3, 3), (3, 4), (3, 2), (4, 3), (2, 3)]);
        assert!(aug.images.iter().all(|i| i.origin_id == 0 && i.label == 4));
    }

    #[test]
    fn augment_blank_is_fixed() {
        let blank = GrayImage::new([BACKGROUND; PIXELS], 1, 0).unwrap();
        let aug = augment_shifts(&Dataset::new("b", vec![blank.clone()]));
        assert!(aug.images.iter().all(|i| i == &blank));
    }

    #[test]
    fn symmetrize_doubles_and_centres() {
        let ds = Dataset::new("s", vec![one_hot(0, 0), one_hot(5, 2)]);
        let sym = symmetrize(&ds);
        assert_eq!(sym.len(), 4);
        assert_eq!(&sym.images[..2], &ds.images[..]);
        assert_eq!(sym.mean_pixel(), 0.0);
        assert!(sym.is_inversion_closed());
        assert!(!ds.is_inversion_closed());
        assert_eq!(sym.lineage.last().unwrap(), "symmetrize");
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        let ds = Dataset::new("s", (0..3).map(|i| GrayImage { origin_id: i, ..one_hot(0, 0) }).collect());
        assert!(split(&ds, 0.0, 0).is_err());
        assert!(split(&ds, 0.2, 0).is_err()); // floor(0.6) = 0
        assert!(split(&ds, 1.0, 0).is_err());
        let (train, test) = split(&ds, 0.5, 0).unwrap();
        assert_eq!((train.len(), test.len()), (2, 1));
    }
}
