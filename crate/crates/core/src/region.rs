//! Organ region extraction: binarization, disk-element morphology and
//! largest-component selection.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::GrayImage;
use crate::pseg::BBox;
use crate::unionfind::UnionFind;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || width * height != bits.len() {
            return Err(Error::InvalidParameter(format!(
                "bit count {} does not match {width}x{height}",
                bits.len()
            )));
        }
        Ok(BinaryImage {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        BinaryImage {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        BinaryImage {
            width,
            height,
            bits,
        }
    }

    /// Pixels with intensity >= 128 are set.
    pub fn from_gray(img: &GrayImage) -> Self {
        BinaryImage {
            width: img.width(),
            height: img.height(),
            bits: img.data().iter().map(|&v| v >= 128).collect(),
        }
    }

    /// 255 for set bits, 0 otherwise.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::new(
            self.width,
            self.height,
            self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        )
        .expect("dimensions already validated")
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

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Out-of-range coordinates read as clear.
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[y as usize * self.width + x as usize]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.contains(&true)
    }

    pub fn is_subset_of(&self, other: &BinaryImage) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn union_with(&mut self, other: &BinaryImage) {
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    pub fn intersection_count(&self, other: &BinaryImage) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a && b).count()
    }

    pub fn bbox(&self) -> Option<BBox> {
        let mut bbox: Option<BBox> = None;
        for (i, _) in self.bits.iter().enumerate().filter(|(_, &b)| b) {
            let (x, y) = (i % self.width, i / self.width);
            match &mut bbox {
                Some(b) => b.include(x, y),
                None => bbox = Some(BBox::point(x, y)),
            }
        }
        bbox
    }

    /// Shifts every set bit by `(dx, dy)`, dropping bits that leave the
    /// raster.
    pub fn translate(&self, dx: isize, dy: isize) -> BinaryImage {
        let mut out = BinaryImage::empty(self.width, self.height);
        for (i, _) in self.bits.iter().enumerate().filter(|(_, &b)| b) {
            let x = (i % self.width) as isize + dx;
            let y = (i / self.width) as isize + dy;
            if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
                out.bits[y as usize * self.width + x as usize] = true;
            }
        }
        out
    }
}

/// Binarization rule; written as `otsu` or `fixed:<t>` in config files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Binarize {
    Otsu,
    Fixed(u8),
}

impl fmt::Display for Binarize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Binarize::Otsu => f.write_str("otsu"),
            Binarize::Fixed(t) => write!(f, "fixed:{t}"),
        }
    }
}

impl From<Binarize> for String {
    fn from(b: Binarize) -> String {
        b.to_string()
    }
}

impl TryFrom<String> for Binarize {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for Binarize {
    type Err = Error;

    /// Accepts `otsu`, `fixed:<t>` or a bare threshold.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("otsu") {
            return Ok(Binarize::Otsu);
        }
        let t = s.strip_prefix("fixed:").unwrap_or(s);
        t.parse()
            .map(Binarize::Fixed)
            .map_err(|_| Error::InvalidParameter(format!("unknown binarization `{s}`")))
    }
}

pub fn histogram(img: &GrayImage) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &v in img.data() {
        h[v as usize] += 1;
    }
    h
}

/// Threshold `t` maximizing the between-class variance of `{<= t}` and
/// `{> t}`; the smallest maximizer wins. A constant image has no split with
/// positive variance and yields 0, so it binarizes to all-clear when its value
/// is 0 and all-set otherwise.
pub fn otsu_threshold(hist: &[u64; 256]) -> u8 {
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0u64, 0.0f64);
    let (mut best_t, mut best_var) = (0u8, -1.0f64);
    for (t, &c) in hist.iter().enumerate() {
        w0 += c;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        let var = if w0 == 0 || w1 == 0 {
            0.0
        } else {
            let m0 = sum0 / w0 as f64;
            let m1 = (sum_all - sum0) / w1 as f64;
            w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1)
        };
        if var > best_var {
            best_var = var;
            best_t = t as u8;
        }
    }
    best_t
}

/// Sets pixels strictly above the threshold.
pub fn binarize(img: &GrayImage, method: Binarize) -> BinaryImage {
    let t = match method {
        Binarize::Fixed(t) => t,
        Binarize::Otsu => otsu_threshold(&histogram(img)),
    };
    BinaryImage {
        width: img.width(),
        height: img.height(),
        bits: img.data().iter().map(|&v| v > t).collect(),
    }
}

/// Half-widths of the disk `dx^2 + dy^2 <= r^2` per row offset `dy in -r..=r`.
fn disk_rows(radius: usize) -> Vec<usize> {
    let r = radius as i64;
    (-r..=r)
        .map(|dy| {
            let mut hw = 0i64;
            while (hw + 1) * (hw + 1) + dy * dy <= r * r {
                hw += 1;
            }
            hw as usize
        })
        .collect()
}

/// Per-row prefix sums of set bits, `width + 1` entries per row.
fn row_prefix(bin: &BinaryImage) -> Vec<u32> {
    let w = bin.width;
    let mut p = vec![0u32; (w + 1) * bin.height];
    for y in 0..bin.height {
        let base = y * (w + 1);
        for x in 0..w {
            p[base + x + 1] = p[base + x] + u32::from(bin.bits[y * w + x]);
        }
    }
    p
}

/// Disk-element erosion. Positions outside the raster are ignored, so this is
/// the adjoint of [`dilate`] restricted to the raster.
pub fn erode(bin: &BinaryImage, radius: usize) -> BinaryImage {
    morph(bin, radius, true)
}

/// Disk-element dilation (pixels within Euclidean distance `radius` of a set
/// pixel become set).
pub fn dilate(bin: &BinaryImage, radius: usize) -> BinaryImage {
    morph(bin, radius, false)
}

fn morph(bin: &BinaryImage, radius: usize, erosion: bool) -> BinaryImage {
    if radius == 0 {
        return bin.clone();
    }
    let (w, h) = bin.dims();
    let rows = disk_rows(radius);
    let prefix = row_prefix(bin);
    let r = radius as isize;
    let mut out = BinaryImage::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut hit = erosion;
            for (k, &hw) in rows.iter().enumerate() {
                let sy = y as isize + k as isize - r;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let lo = x.saturating_sub(hw);
                let hi = (x + hw).min(w - 1);
                let base = sy as usize * (w + 1);
                let ones = (prefix[base + hi + 1] - prefix[base + lo]) as usize;
                if erosion && ones < hi - lo + 1 {
                    hit = false;
                    break;
                }
                if !erosion && ones > 0 {
                    hit = true;
                    break;
                }
            }
            out.bits[y * w + x] = hit;
        }
    }
    out
}

/// Erosion followed by dilation; radius 0 is the identity.
pub fn opening(bin: &BinaryImage, radius: usize) -> BinaryImage {
    dilate(&erode(bin, radius), radius)
}

/// 8-connected components of the set bits: per-pixel component id (`None`
/// for clear pixels) and each component's size, ids in scan order.
pub fn components(bin: &BinaryImage) -> (Vec<Option<u32>>, Vec<usize>) {
    let (w, h) = bin.dims();
    let mut uf = UnionFind::new(w * h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !bin.bits[i] {
                continue;
            }
            let mut join = |j: usize| {
                if bin.bits[j] {
                    uf.union(i, j);
                }
            };
            if x + 1 < w {
                join(i + 1);
            }
            if y + 1 < h {
                join(i + w);
                if x + 1 < w {
                    join(i + w + 1);
                }
                if x > 0 {
                    join(i + w - 1);
                }
            }
        }
    }
    let mut ids = vec![None; w * h];
    let mut remap = std::collections::HashMap::new();
    let mut sizes = Vec::new();
    for i in 0..w * h {
        if bin.bits[i] {
            let root = uf.find(i);
            let id = *remap.entry(root).or_insert_with(|| {
                sizes.push(0);
                sizes.len() as u32 - 1
            });
            sizes[id as usize] += 1;
            ids[i] = Some(id);
        }
    }
    (ids, sizes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionConfig {
    pub binarize: Binarize,
    pub radius: usize,
}

impl Default for RegionConfig {
    fn default() -> Self {
        RegionConfig {
            binarize: Binarize::Otsu,
            radius: 5,
        }
    }
}

/// A single 8-connected foreground area.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    mask: BinaryImage,
    bbox: BBox,
    points: Vec<u32>,
}

impl Region {
    /// Wraps a mask as-is; fails when it has no set pixel.
    pub fn from_mask(mask: BinaryImage) -> Result<Self> {
        let points: Vec<u32> = mask
            .bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i as u32)
            .collect();
        let bbox = mask.bbox().ok_or(Error::EmptyRegion)?;
        Ok(Region { mask, bbox, points })
    }

    pub fn mask(&self) -> &BinaryImage {
        &self.mask
    }

    pub fn area(&self) -> usize {
        self.points.len()
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x < self.mask.width && y < self.mask.height && self.mask.get(x, y)
    }
}

/// Largest 8-connected component of the opened binarization. Equal-area ties
/// go to the component found first in scan order.
pub fn bounded_region(img: &GrayImage, cfg: &RegionConfig) -> Result<Region> {
    let opened = opening(&binarize(img, cfg.binarize), cfg.radius);
    let (ids, sizes) = components(&opened);
    let best = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i as u32)
        .ok_or(Error::EmptyRegion)?;
    let (w, h) = opened.dims();
    let bits = ids.iter().map(|&id| id == Some(best)).collect();
    Region::from_mask(BinaryImage::new(w, h, bits)?)
}

/// Uniform draw over the region's set pixels.
pub fn sample_point_inside<R: Rng + ?Sized>(region: &Region, rng: &mut R) -> (usize, usize) {
    let p = region.points[rng.random_range(0..region.points.len())] as usize;
    (p % region.mask.width, p / region.mask.width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(bin: &BinaryImage, radius: usize, erosion: bool) -> BinaryImage {
        let r = radius as isize;
        let (w, h) = bin.dims();
        BinaryImage::from_fn(w, h, |x, y| {
            let mut hit = erosion;
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx * dx + dy * dy > r * r {
                        continue;
                    }
                    let (sx, sy) = (x as isize + dx, y as isize + dy);
                    if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                        continue;
                    }
                    let v = bin.get(sx as usize, sy as usize);
                    if erosion && !v {
                        hit = false;
                    }
                    if !erosion && v {
                        hit = true;
                    }
                }
            }
            hit
        })
    }

    #[test]
    fn fixed_threshold() {
        let img = GrayImage::new(4, 1, vec![0, 255, 100, 200]).unwrap();
        assert_eq!(binarize(&img, Binarize::Fixed(127)).bits(), &[false, true, false, true]);
        let zero = GrayImage::filled(3, 3, 0).unwrap();
        assert!(binarize(&zero, Binarize::Fixed(0)).is_empty());
    }

    fn otsu_oracle(img: &GrayImage) -> u8 {
        let px: Vec<f64> = img.data().iter().map(|&v| f64::from(v)).collect();
        let mut best = (0u8, f64::NEG_INFINITY);
        for t in 0..=255u8 {
            let (lo, hi): (Vec<f64>, Vec<f64>) = px.iter().partition(|&&v| v <= f64::from(t));
            let var = if lo.is_empty() || hi.is_empty() {
                0.0
            } else {
                let n = px.len() as f64;
                let (w0, w1) = (lo.len() as f64 / n, hi.len() as f64 / n);
                let m0 = lo.iter().sum::<f64>() / lo.len() as f64;
                let m1 = hi.iter().sum::<f64>() / hi.len() as f64;
                w0 * w1 * (m0 - m1).powi(2)
            };
            if var > best.1 + 1e-9 {
                best = (t, var);
            }
        }
        best.0
    }

    #[test]
    fn otsu_separates_bimodal() {
        let img = GrayImage::from_fn(8, 8, |x, y| if (x + y) % 3 == 0 { 255 } else { 0 }).unwrap();
        let t = otsu_threshold(&histogram(&img));
        assert_eq!(t, otsu_oracle(&img));
        assert_eq!(binarize(&img, Binarize::Otsu), binarize(&img, Binarize::Fixed(127)));
    }

    #[test]
    fn otsu_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let img = GrayImage::from_fn(9, 7, |_, _| rng.random_range(0..4u8) * 60 + rng.random_range(0..20)).unwrap();
            assert_eq!(otsu_threshold(&histogram(&img)), otsu_oracle(&img));
        }
    }

    #[test]
    fn otsu_constant_image_is_all_or_nothing() {
        assert!(binarize(&GrayImage::filled(3, 3, 0).unwrap(), Binarize::Otsu).is_empty());
        assert_eq!(binarize(&GrayImage::filled(3, 3, 9).unwrap(), Binarize::Otsu).count(), 9);
    }

    #[test]
    fn binarize_parse() {
        assert_eq!("otsu".parse::<Binarize>().unwrap(), Binarize::Otsu);
        assert_eq!("fixed:40".parse::<Binarize>().unwrap(), Binarize::Fixed(40));
        assert_eq!("12".parse::<Binarize>().unwrap(), Binarize::Fixed(12));
        assert!("gauss".parse::<Binarize>().is_err());
    }

    #[test]
    fn disk_shape() {
        assert_eq!(disk_rows(1), vec![0, 1, 0]);
        assert_eq!(disk_rows(2), vec![0, 1, 2, 1, 0]);
    }

    #[test]
    fn radius_zero_opening_is_identity() {
        let bin = BinaryImage::from_fn(5, 5, |x, y| (x * y) % 3 == 1);
        assert_eq!(opening(&bin, 0), bin);
    }

    #[test]
    fn isolated_pixel_is_removed() {
        let mut bin = BinaryImage::empty(5, 5);
        bin.set(2, 2, true);
        assert!(opening(&bin, 1).is_empty());
    }

    #[test]
    fn solid_square_survives_opening() {
        let bin = BinaryImage::from_fn(11, 11, |x, y| (2..9).contains(&x) && (2..9).contains(&y));
        let opened = opening(&bin, 1);
        assert_eq!(opened, brute(&brute(&bin, 1, true), 1, false));
        // A cross element cannot reach the square's corners.
        let mut expected = bin.clone();
        for (x, y) in [(2, 2), (8, 2), (2, 8), (8, 8)] {
            expected.set(x, y, false);
        }
        assert_eq!(opened, expected);
    }

    #[test]
    fn region_picks_largest_blob() {
        // 50-pixel blob (10x5) and 20-pixel blob (5x4)
        let img = GrayImage::from_fn(30, 20, |x, y| {
            let a = (2..12).contains(&x) && (2..7).contains(&y);
            let b = (20..25).contains(&x) && (10..14).contains(&y);
            if a || b { 200 } else { 0 }
        })
        .unwrap();
        let cfg = RegionConfig { binarize: Binarize::Otsu, radius: 0 };
        let region = bounded_region(&img, &cfg).unwrap();
        assert_eq!(region.area(), 50);
        assert_eq!(region.bbox(), BBox { min_x: 2, min_y: 2, max_x: 11, max_y: 6 });
    }

    #[test]
    fn region_of_single_blob_with_opening() {
        let img = GrayImage::from_fn(40, 40, |x, y| {
            let (dx, dy) = (x as i32 - 20, y as i32 - 20);
            if dx * dx + dy * dy <= 100 { 220 } else { 10 }
        })
        .unwrap();
        let region = bounded_region(&img, &RegionConfig { binarize: Binarize::Otsu, radius: 3 }).unwrap();
        let blob = binarize(&img, Binarize::Otsu);
        assert_eq!(region.mask(), &opening(&blob, 3));
    }

    #[test]
    fn black_image_has_no_region() {
        let img = GrayImage::filled(10, 10, 0).unwrap();
        assert!(matches!(
            bounded_region(&img, &RegionConfig::default()),
            Err(Error::EmptyRegion)
        ));
    }

    #[test]
    fn single_pixel_region_always_sampled() {
        let mut bin = BinaryImage::empty(4, 3);
        bin.set(3, 1, true);
        let region = Region::from_mask(bin).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(sample_point_inside(&region, &mut rng), (3, 1));
        }
    }

    #[test]
    fn two_pixel_region_is_uniform() {
        let mut bin = BinaryImage::empty(5, 5);
        bin.set(0, 0, true);
        bin.set(4, 4, true);
        let region = Region::from_mask(bin).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let hits = (0..n).filter(|_| sample_point_inside(&region, &mut rng) == (0, 0)).count();
        assert!((hits as f64 / n as f64 - 0.5).abs() <= 0.02);
    }

    fn arb_binary(max: usize) -> impl Strategy<Value = BinaryImage> {
        (1..=max, 1..=max, 0.2f64..0.9).prop_flat_map(|(w, h, p)| {
            proptest::collection::vec(proptest::bool::weighted(p), w * h)
                .prop_map(move |bits| BinaryImage::new(w, h, bits).unwrap())
        })
    }

    proptest! {
        #[test]
        fn morphology_matches_brute_force(bin in arb_binary(14), radius in 0usize..4) {
            prop_assert_eq!(erode(&bin, radius), brute(&bin, radius, true));
            prop_assert_eq!(dilate(&bin, radius), brute(&bin, radius, false));
        }

        #[test]
        fn opening_is_anti_extensive_and_idempotent(bin in arb_binary(20), radius in 0usize..4) {
            let once = opening(&bin, radius);
            prop_assert!(once.is_subset_of(&bin));
            prop_assert_eq!(opening(&once, radius), once);
        }

        #[test]
        fn region_is_connected_and_maximal(bin in arb_binary(16)) {
            let img = bin.to_gray();
            let cfg = RegionConfig { binarize: Binarize::Fixed(127), radius: 0 };
            match bounded_region(&img, &cfg) {
                Ok(region) => {
                    let (_, sizes) = components(region.mask());
                    prop_assert_eq!(sizes.len(), 1);
                    let (_, all) = components(&bin);
                    prop_assert_eq!(region.area(), *all.iter().max().unwrap());
                }
                Err(e) => {
                    prop_assert!(matches!(e, Error::EmptyRegion));
                    prop_assert!(bin.is_empty());
                }
            }
        }

        #[test]
        fn samples_stay_inside(bin in arb_binary(12), seed in any::<u64>()) {
            if let Ok(region) = Region::from_mask(bin) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..20 {
                    let (x, y) = sample_point_inside(&region, &mut rng);
                    prop_assert!(region.contains(x, y));
                }
            }
        }
    }
}
