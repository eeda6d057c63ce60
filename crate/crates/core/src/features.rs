//! Group actions on the 8x8 pixel grid and the feature maps applied before the network.
//!
//! Every non-identity feature map is a product of two pixels, so it is exactly
//! invariant under grayscale inversion `x -> -x`.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{GrayImage, BACKGROUND, SIDE, PIXELS};
use crate::train::shuffle;
use crate::{Error, Result};

/// A bijection on the 64 pixel indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity() -> Self {
        Self((0..PIXELS).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    #[inline]
    pub fn apply(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &p) in self.0.iter().enumerate() {
            inv[p] = i;
        }
        Self(inv)
    }

    /// `(self ∘ other)(i) = self(other(i))`.
    pub fn compose(&self, other: &Self) -> Self {
        Self(other.0.iter().map(|&i| self.0[i]).collect())
    }

    /// Positions with `P(i) == i`; their product feature degenerates to `x_i^2`.
    pub fn fixed_points(&self) -> usize {
        self.0.iter().enumerate().filter(|(i, p)| i == *p).count()
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        if v.len() != PIXELS {
            return Err(Error::Shape {
                expected: PIXELS,
                actual: v.len(),
            });
        }
        let mut seen = [false; PIXELS];
        for &p in &v {
            if p >= PIXELS || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Config(format!("not a permutation of 0..{PIXELS}")));
            }
        }
        Ok(Self(v))
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.0
    }
}

/// Seeded Fisher-Yates permutation of the pixel indices. Fixed points are kept.
pub fn make_permutation(seed: u64) -> Permutation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p: Vec<usize> = (0..PIXELS).collect();
    shuffle(&mut p, &mut rng);
    Permutation(p)
}

/// A transformation of pixel space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GroupElement {
    Identity,
    /// `x -> -x` on every pixel.
    Inversion,
    /// Translate content by `dx` columns (positive = right) and `dy` rows
    /// (positive = down). Vacated cells are filled with the background value.
    Shift { dx: i8, dy: i8 },
    /// Output pixel `i` takes input pixel `perm(i)`.
    PixelPermutation(Permutation),
    /// `k` counter-clockwise quarter turns.
    Rotation90(u8),
}

impl GroupElement {
    pub fn apply_pixels(&self, pixels: &[f64; PIXELS]) -> [f64; PIXELS] {
        match self {
            Self::Identity => *pixels,
            Self::Inversion => pixels.map(|v| -v),
            Self::Shift { dx, dy } => {
                let (dx, dy) = (*dx as isize, *dy as isize);
                let mut out = [BACKGROUND; PIXELS];
                for r in 0..SIDE as isize {
                    for c in 0..SIDE as isize {
                        let (sr, sc) = (r - dy, c - dx);
                        if (0..SIDE as isize).contains(&sr) && (0..SIDE as isize).contains(&sc) {
                            out[(r as usize) * SIDE + c as usize] =
                                pixels[(sr as usize) * SIDE + sc as usize];
                        }
                    }
                }
                out
            }
            Self::PixelPermutation(p) => std::array::from_fn(|i| pixels[p.apply(i)]),
            Self::Rotation90(k) => {
                let mut out = *pixels;
                for _ in 0..(k % 4) {
                    let src = out;
                    for r in 0..SIDE {
                        for c in 0..SIDE {
                            // counter-clockwise: new(r, c) = old(c, SIDE-1-r)
                            out[r * SIDE + c] = src[c * SIDE + (SIDE - 1 - r)];
                        }
                    }
                }
                out
            }
        }
    }

    pub fn is_valid_shift(&self) -> bool {
        match self {
            Self::Shift { dx, dy } => dx.abs() <= 1 && dy.abs() <= 1,
            _ => true,
        }
    }
}

/// Applies `element` to an image, preserving label and origin.
pub fn apply_group(element: &GroupElement, image: &GrayImage) -> GrayImage {
    GrayImage {
        pixels: element.apply_pixels(&image.pixels),
        ..image.clone()
    }
}

/// Checks that `elements` is closed under composition by acting on a generic probe image.
pub fn is_closed_group(elements: &[GroupElement]) -> bool {
    // Irrational-looking, pairwise distinct values so no accidental coincidences.
    let probe: [f64; PIXELS] = std::array::from_fn(|i| ((i as f64 + 1.0) * 0.618_033_988_7).fract() - 0.5);
    let images: Vec<[f64; PIXELS]> = elements.iter().map(|g| g.apply_pixels(&probe)).collect();
    elements.iter().all(|g| {
        images.iter().all(|h_img| {
            let gh = g.apply_pixels(h_img);
            images.iter().any(|img| img == &gh)
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMapKind {
    Identity,
    Square,
    NeighborProduct,
    PermutationProduct { seed: u64 },
}

impl FeatureMapKind {
    pub fn is_inversion_invariant(&self) -> bool {
        !matches!(self, Self::Identity)
    }

    /// Short name used on the command line and in reports.
    pub fn short_name(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Square => "square",
            Self::NeighborProduct => "neighbor",
            Self::PermutationProduct { .. } => "perm",
        }
    }
}

impl fmt::Display for FeatureMapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PermutationProduct { seed } => write!(f, "perm:{seed}"),
            other => f.write_str(other.short_name()),
        }
    }
}

impl FromStr for FeatureMapKind {
    type Err = Error;

    /// Accepts `identity`, `square`, `neighbor`, `perm` and `perm:<seed>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "square" => Ok(Self::Square),
            "neighbor" => Ok(Self::NeighborProduct),
            "perm" => Ok(Self::PermutationProduct { seed: 0 }),
            _ => s
                .strip_prefix("perm:")
                .and_then(|seed| seed.parse().ok())
                .map(|seed| Self::PermutationProduct { seed })
                .ok_or_else(|| Error::Config(format!("unknown feature map `{s}`"))),
        }
    }
}

/// A feature map with any permutation already materialised.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    kind: FeatureMapKind,
    permutation: Option<Permutation>,
}

impl FeatureMap {
    pub fn new(kind: FeatureMapKind) -> Self {
        let permutation = match kind {
            FeatureMapKind::PermutationProduct { seed } => Some(make_permutation(seed)),
            _ => None,
        };
        Self { kind, permutation }
    }

    /// Rebuilds a map from a stored permutation, rejecting one that does not match its seed.
    pub fn with_stored_permutation(kind: FeatureMapKind, stored: Option<Permutation>) -> Result<Self> {
        let map = Self::new(kind);
        if map.permutation != stored {
            return Err(Error::Model(format!(
                "stored permutation does not match feature map {kind}"
            )));
        }
        Ok(map)
    }

    pub fn kind(&self) -> FeatureMapKind {
        self.kind
    }

    pub fn permutation(&self) -> Option<&Permutation> {
        self.permutation.as_ref()
    }

    pub fn output_dim(&self) -> usize {
        PIXELS
    }

    pub fn apply(&self, pixels: &[f64; PIXELS]) -> [f64; PIXELS] {
        match self.kind {
            FeatureMapKind::Identity => *pixels,
            FeatureMapKind::Square => pixels.map(|x| x * x),
            FeatureMapKind::NeighborProduct => {
                std::array::from_fn(|i| pixels[i] * pixels[right_neighbor(i)])
            }
            FeatureMapKind::PermutationProduct { .. } => {
                let p = self.permutation.as_ref().expect("permutation map without permutation");
                std::array::from_fn(|i| pixels[i] * pixels[p.apply(i)])
            }
        }
    }
}

/// Feature vector of `image` under `kind`.
pub fn apply_feature_map(kind: FeatureMapKind, image: &GrayImage) -> [f64; PIXELS] {
    FeatureMap::new(kind).apply(&image.pixels)
}

/// Index of the pixel to the right, wrapping the column within the same row.
#[inline]
pub fn right_neighbor(i: usize) -> usize {
    let (r, c) = (i / SIDE, i % SIDE);
    r * SIDE + (c + 1) % SIDE
}

/// `x_i x_j / sqrt(x_i^2 x_j^2)`: the sign of `x_i` relative to `x_j`.
/// Evaluated from the signs so the result is exactly `-1.0` or `1.0`.
pub fn relative_sign(image: &GrayImage, i: usize, j: usize) -> Result<f64> {
    let (xi, xj) = (image.pixels[i], image.pixels[j]);
    if xi == 0.0 || xj == 0.0 {
        return Err(Error::Precondition(format!(
            "relative sign undefined: pixel {} is zero",
            if xi == 0.0 { i } else { j }
        )));
    }
    Ok(xi.signum() * xj.signum())
}

/// Relative signs between pixels of the same row, reconstructed only from
/// neighbour-product features by chaining `sign(chi)` along the row.
///
/// Entry `[i][j]` is `Some(sign)` when `i` and `j` share a row and `None`
/// otherwise: the cylinder links columns but never rows, so cross-row
/// relative signs are not determined by these features.
pub fn relative_signs_from_neighbor_products(
    features: &[f64; PIXELS],
) -> Result<Vec<Vec<Option<f64>>>> {
    if features.iter().any(|&f| f == 0.0) {
        return Err(Error::Precondition("zero neighbour product".into()));
    }
    let mut out = vec![vec![None; PIXELS]; PIXELS];
    for row in 0..SIDE {
        // sign of pixel (row, c) relative to (row, 0)
        let mut rel = [1.0; SIDE];
        for c in 1..SIDE {
            rel[c] = rel[c - 1] * features[row * SIDE + c - 1].signum();
        }
        for a in 0..SIDE {
            for b in 0..SIDE {
                out[row * SIDE + a][row * SIDE + b] = Some(rel[a] * rel[b]);
            }
        }
    }
    Ok(out)
}
