//! Mask generation: weighted pseudo-segment sampling, positioning
//! (random / inside the bounded region / on the pseudo-segment), shape
//! rendering (square / irregular / pseudo-segment), perturbation and the
//! three evaluation-mask protocols.
//!
//! Every function takes its random stream explicitly; a fixed seed gives
//! bit-identical masks.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::{load_image, GrayImage};
use crate::pseg::{BBox, PseudoSegment, PseudoSegmentSet, WeightBias};
use crate::region::{dilate, erode, sample_point_inside, BinaryImage, Region};

/// `true` marks a hidden pixel.
pub type Mask = BinaryImage;

macro_rules! keyword_enum {
    ($name:ident { $($variant:ident => $kw:literal),+ $(,)? }) => {
        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $kw),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
                    $($kw => Ok($name::$variant),)+
                    other => Err(Error::InvalidParameter(format!(
                        "unknown {} `{other}`", stringify!($name)
                    ))),
                }
            }
        }
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    Random,
    Ibr,
    Ops,
}

keyword_enum!(Position { Random => "random", Ibr => "ibr", Ops => "ops" });

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    Irregular,
    Ps,
}

keyword_enum!(Shape { Square => "square", Irregular => "irregular", Ps => "ps" });

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMaskKind {
    SegmentsOps,
    SmallSquares,
    LargeSquare,
}

keyword_enum!(EvalMaskKind {
    SegmentsOps => "segments-ops",
    SmallSquares => "small-squares",
    LargeSquare => "large-square",
});

impl EvalMaskKind {
    /// Position and shape labels used in result records.
    pub fn layout(&self) -> (&'static str, &'static str) {
        match self {
            EvalMaskKind::SegmentsOps => ("ops", "ps"),
            EvalMaskKind::SmallSquares | EvalMaskKind::LargeSquare => ("random", "square"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskPolicy {
    pub position: Position,
    pub shape: Shape,
    pub m_max: usize,
    pub perturb_radius_max: usize,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        MaskPolicy {
            position: Position::Ops,
            shape: Shape::Ps,
            m_max: 8,
            perturb_radius_max: 2,
        }
    }
}

impl MaskPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.m_max < 1 {
            return Err(Error::InvalidParameter("m_max must be >= 1".into()));
        }
        Ok(())
    }
}

/// One placed shape within a generated mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    /// Source pseudo-segment, when the component was derived from one.
    pub segment_id: Option<usize>,
    /// Target center before clipping.
    pub center: (usize, usize),
    /// Bounds of the rendered (clipped) pixels.
    pub bbox: Option<BBox>,
    pub pixels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedMask {
    pub mask: Mask,
    pub components: Vec<Component>,
    /// Area the protocol aimed for: total sampled segment area, or the
    /// intended square area for a large square.
    pub target_area: usize,
}

/// Uniform on `1..=m_max`.
pub fn choose_m<R: Rng + ?Sized>(rng: &mut R, m_max: usize) -> usize {
    rng.random_range(1..=m_max.max(1))
}

/// Largest number of segments a mask may take from a set of `n`: all but
/// one, so a partition is never masked whole, except for a single segment.
pub fn max_draw(n: usize) -> usize {
    n.saturating_sub(1).max(1)
}

/// `m` distinct segments drawn sequentially, each draw proportional to the
/// probabilities of the segments not yet taken.
pub fn sample_segments<'a, R: Rng + ?Sized>(
    set: &'a PseudoSegmentSet,
    wb: &WeightBias,
    m: usize,
    rng: &mut R,
) -> Result<Vec<&'a PseudoSegment>> {
    if wb.len() != set.len() {
        return Err(Error::InvalidParameter(format!(
            "{} weights for {} segments",
            wb.len(),
            set.len()
        )));
    }
    if m > set.len() {
        return Err(Error::TooManySegments {
            requested: m,
            available: set.len(),
        });
    }
    let mut remaining: Vec<(usize, f64)> = wb
        .entries
        .iter()
        .zip(&wb.probabilities)
        .map(|(&(id, _), &p)| (id, p))
        .collect();
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let total: f64 = remaining.iter().map(|e| e.1).sum();
        let mut u = rng.random::<f64>() * total;
        // rounding can leave `u` past the last bucket; fall back to the last
        let mut pick = remaining.len() - 1;
        for (i, e) in remaining.iter().enumerate() {
            if u < e.1 {
                pick = i;
                break;
            }
            u -= e.1;
        }
        let (id, _) = remaining.remove(pick);
        out.push(&set.segments()[id]);
    }
    Ok(out)
}

/// Where a component's center goes under the given positioning policy.
pub fn position_for<R: Rng + ?Sized>(
    seg: &PseudoSegment,
    position: Position,
    region: Option<&Region>,
    dims: (usize, usize),
    rng: &mut R,
) -> Result<(usize, usize)> {
    match position {
        Position::Random => Ok((rng.random_range(0..dims.0), rng.random_range(0..dims.1))),
        Position::Ibr => {
            let region = region.ok_or(Error::MissingRegion)?;
            if region.mask().dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    actual: region.mask().dims(),
                });
            }
            Ok(sample_point_inside(region, rng))
        }
        Position::Ops => Ok(seg.bbox.center()),
    }
}

/// Side of the square standing in for `area` pixels.
pub fn square_side(area: usize) -> usize {
    ((area as f64).sqrt().round() as usize).max(1)
}

/// Paints an axis-aligned `side x side` square whose center (rounded toward
/// the top-left for even sides) is `center`; returns the clipped bbox and
/// pixel count of the painted square.
fn paint_square(mask: &mut Mask, center: (usize, usize), side: usize) -> (Option<BBox>, usize) {
    let (w, h) = mask.dims();
    let x0 = center.0 as isize - (side / 2) as isize;
    let y0 = center.1 as isize - (side / 2) as isize;
    let xs = x0.max(0)..(x0 + side as isize).min(w as isize);
    let ys = y0.max(0)..(y0 + side as isize).min(h as isize);
    let mut bbox: Option<BBox> = None;
    let mut n = 0;
    for y in ys {
        for x in xs.clone() {
            mask.set(x as usize, y as usize, true);
            n += 1;
            match &mut bbox {
                Some(b) => b.include(x as usize, y as usize),
                None => bbox = Some(BBox::point(x as usize, y as usize)),
            }
        }
    }
    (bbox, n)
}

/// Square of side `round(sqrt(area))` centered at `center`, clipped to the
/// raster.
pub fn render_square(center: (usize, usize), area: usize, dims: (usize, usize)) -> Mask {
    let mut mask = Mask::empty(dims.0, dims.1);
    paint_square(&mut mask, center, square_side(area));
    mask
}

/// The segment's own pixels translated so its bbox center lands on
/// `target`, clipped to the raster.
pub fn render_ps(seg: &PseudoSegment, target: (usize, usize), dims: (usize, usize)) -> Mask {
    let (w, h) = dims;
    let c = seg.bbox.center();
    let dx = target.0 as isize - c.0 as isize;
    let dy = target.1 as isize - c.1 as isize;
    let mut mask = Mask::empty(w, h);
    // pixel indices are relative to the segment's own raster width, which
    // equals `w` for segments of this image
    for &p in &seg.pixels {
        let x = (p as usize % w) as isize + dx;
        let y = (p as usize / w) as isize + dy;
        if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
            mask.set(x as usize, y as usize, true);
        }
    }
    mask
}

/// Applies one of {identity, dilate(r), erode(r)} with `r` uniform on
/// `1..=radius_max`, then translates so the bbox center is where it was.
/// An erosion that would empty the mask is replaced by the identity.
pub fn perturb<R: Rng + ?Sized>(mask: &Mask, rng: &mut R, radius_max: usize) -> Mask {
    let Some(before) = mask.bbox() else {
        return mask.clone();
    };
    if radius_max == 0 {
        return mask.clone();
    }
    let op = rng.random_range(0..3u8);
    let r = rng.random_range(1..=radius_max);
    let changed = match op {
        1 => dilate(mask, r),
        2 => {
            let e = erode(mask, r);
            if e.is_empty() {
                return mask.clone();
            }
            e
        }
        _ => return mask.clone(),
    };
    let after = changed.bbox().expect("dilation/erosion result is nonempty");
    let (bc, ac) = (before.center(), after.center());
    let dx = bc.0 as isize - ac.0 as isize;
    let dy = bc.1 as isize - ac.1 as isize;
    if dx == 0 && dy == 0 {
        changed
    } else {
        changed.translate(dx, dy)
    }
}

/// Directory of binary mask images for irregular shapes, listed in file-name
/// order.
#[derive(Clone, Debug)]
pub struct IrregularStore {
    root: PathBuf,
    files: Vec<PathBuf>,
}

impl IrregularStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let root = dir.as_ref().to_path_buf();
        let entries = fs::read_dir(&root).map_err(|e| Error::io(&root, e))?;
        let mut files = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&root, e))?.path();
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .map(str::to_ascii_lowercase);
            if path.is_file() && matches!(ext.as_deref(), Some("png" | "pgm")) {
                files.push(path);
            }
        }
        if files.is_empty() {
            return Err(Error::EmptyMaskStore(root));
        }
        files.sort();
        Ok(IrregularStore { root, files })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }
}

/// Nearest-neighbor resampling: destination pixel `(x, y)` reads source
/// `(floor(x * sw / dw), floor(y * sh / dh))`.
pub fn resize_nearest(img: &GrayImage, dw: usize, dh: usize) -> GrayImage {
    let (sw, sh) = img.dims();
    GrayImage::from_fn(dw, dh, |x, y| img.get(x * sw / dw, y * sh / dh))
        .expect("target dims are positive")
}

/// Uniformly picks a stored mask, resizes it to `dims` and thresholds at
/// 128.
pub fn load_irregular_mask<R: Rng + ?Sized>(
    store: &IrregularStore,
    dims: (usize, usize),
    rng: &mut R,
) -> Result<Mask> {
    let path = &store.files[rng.random_range(0..store.files.len())];
    let img = load_image(path)?;
    Ok(BinaryImage::from_gray(&resize_nearest(&img, dims.0, dims.1)))
}

/// Inputs shared by the training and evaluation generators.
#[derive(Clone, Copy, Debug)]
pub struct MaskSource<'a> {
    pub set: &'a PseudoSegmentSet,
    pub weights: &'a WeightBias,
    pub region: Option<&'a Region>,
    pub irregular: Option<&'a IrregularStore>,
}

impl<'a> MaskSource<'a> {
    pub fn new(set: &'a PseudoSegmentSet, weights: &'a WeightBias) -> Self {
        MaskSource {
            set,
            weights,
            region: None,
            irregular: None,
        }
    }

    pub fn with_region(mut self, region: Option<&'a Region>) -> Self {
        self.region = region;
        self
    }

    pub fn with_irregular(mut self, store: Option<&'a IrregularStore>) -> Self {
        self.irregular = store;
        self
    }

    fn dims(&self) -> (usize, usize) {
        self.set.dims()
    }
}

fn finish_component(
    out: &mut Mask,
    part: &Mask,
    segment_id: Option<usize>,
    center: (usize, usize),
) -> Component {
    let mut part_bbox = part.bbox();
    let mut pixels = part.count();
    out.union_with(part);
    if part_bbox.is_none() {
        // clipped away entirely: keep the in-bounds center pixel
        out.set(center.0, center.1, true);
        part_bbox = Some(BBox::point(center.0, center.1));
        pixels = 1;
    }
    Component {
        segment_id,
        center,
        bbox: part_bbox,
        pixels,
    }
}

/// Training mask: draw `m`, sample `m` segments by weight, place each by the
/// policy's position rule and render it in the policy's shape. Square
/// components take the segment's pixel count as area; pseudo-segment
/// components are perturbed; irregular components are stored masks whose
/// bbox center is moved onto the position.
pub fn generate_training_mask<R: Rng + ?Sized>(
    src: &MaskSource<'_>,
    policy: &MaskPolicy,
    rng: &mut R,
) -> Result<GeneratedMask> {
    policy.validate()?;
    let dims = src.dims();
    if policy.position == Position::Ibr && src.region.is_none() {
        return Err(Error::MissingRegion);
    }
    if policy.shape == Shape::Irregular && src.irregular.is_none() {
        return Err(Error::InvalidParameter(
            "irregular shape requires an irregular mask store".into(),
        ));
    }
    let m = choose_m(rng, policy.m_max).min(max_draw(src.set.len()));
    let segments = sample_segments(src.set, src.weights, m, rng)?;
    let mut mask = Mask::empty(dims.0, dims.1);
    let mut components = Vec::with_capacity(m);
    let mut target_area = 0;
    for seg in segments {
        target_area += seg.pixel_count;
        let center = position_for(seg, policy.position, src.region, dims, rng)?;
        let part = match policy.shape {
            Shape::Square => render_square(center, seg.pixel_count, dims),
            Shape::Ps => perturb(&render_ps(seg, center, dims), rng, policy.perturb_radius_max),
            Shape::Irregular => {
                let store = src.irregular.expect("checked above");
                let shape = load_irregular_mask(store, dims, rng)?;
                match shape.bbox() {
                    Some(b) => {
                        let c = b.center();
                        shape.translate(
                            center.0 as isize - c.0 as isize,
                            center.1 as isize - c.1 as isize,
                        )
                    }
                    None => shape,
                }
            }
        };
        components.push(finish_component(&mut mask, &part, Some(seg.id), center));
    }
    Ok(GeneratedMask {
        mask,
        components,
        target_area,
    })
}

/// Admissible side lengths for the small-squares protocol.
pub const SMALL_SQUARE_SIDES: std::ops::RangeInclusive<usize> = 3..=12;
/// Relative tolerance between `k * s^2` and the target area.
pub const SMALL_SQUARE_TOLERANCE: f64 = 0.10;
/// Area fraction range of the single large square.
pub const LARGE_SQUARE_FRACTION: (f64, f64) = (0.20, 0.60);

/// Picks `(side, count)` for the small-squares protocol. The side is uniform
/// over sides in `3..=12` whose `count = round(A / s^2) >= 1` lands within 10%
/// of `A`. When no such side exists (only for small `A`), the side in `1..=12`
/// with the smallest area error is used, preferring larger sides.
pub fn plan_small_squares<R: Rng + ?Sized>(area: usize, rng: &mut R) -> (usize, usize) {
    let count_for = |s: usize| (((area as f64) / (s * s) as f64).round() as usize).max(1);
    let err = |s: usize| (count_for(s) * s * s).abs_diff(area);
    let admissible: Vec<usize> = SMALL_SQUARE_SIDES
        .filter(|&s| err(s) as f64 <= SMALL_SQUARE_TOLERANCE * area as f64)
        .collect();
    let side = if admissible.is_empty() {
        (1..=*SMALL_SQUARE_SIDES.end())
            .rev()
            .min_by_key(|&s| err(s))
            .expect("nonempty range")
    } else {
        admissible[rng.random_range(0..admissible.len())]
    };
    (side, count_for(side))
}

/// One of the three evaluation protocols.
///
/// * `segments-ops`: `m` weighted segments at their own location, unperturbed.
/// * `small-squares`: the same sampling fixes a total area `A`, which is then
///   spent on `k` equal squares of side `s` at uniform centers.
/// * `large-square`: a single square covering a uniform 20–60% of the image,
///   placed uniformly among positions that keep it inside the raster.
pub fn eval_mask<R: Rng + ?Sized>(
    kind: EvalMaskKind,
    src: &MaskSource<'_>,
    m_max: usize,
    rng: &mut R,
) -> Result<GeneratedMask> {
    let (w, h) = src.dims();
    match kind {
        EvalMaskKind::SegmentsOps => {
            let policy = MaskPolicy {
                position: Position::Ops,
                shape: Shape::Ps,
                m_max,
                perturb_radius_max: 0,
            };
            generate_training_mask(src, &policy, rng)
        }
        EvalMaskKind::SmallSquares => {
            if m_max < 1 {
                return Err(Error::InvalidParameter("m_max must be >= 1".into()));
            }
            let m = choose_m(rng, m_max).min(max_draw(src.set.len()));
            let segments = sample_segments(src.set, src.weights, m, rng)?;
            let area: usize = segments.iter().map(|s| s.pixel_count).sum();
            let (side, count) = plan_small_squares(area, rng);
            let mut mask = Mask::empty(w, h);
            let mut components = Vec::with_capacity(count);
            for _ in 0..count {
                let center = (rng.random_range(0..w), rng.random_range(0..h));
                let (bbox, pixels) = paint_square(&mut mask, center, side);
                components.push(Component {
                    segment_id: None,
                    center,
                    bbox,
                    pixels,
                });
            }
            Ok(GeneratedMask {
                mask,
                components,
                target_area: area,
            })
        }
        EvalMaskKind::LargeSquare => {
            let (lo, hi) = LARGE_SQUARE_FRACTION;
            let f = rng.random_range(lo..=hi);
            let side = ((f * (w * h) as f64).sqrt().round() as usize).clamp(1, w.min(h));
            let x0 = rng.random_range(0..=w - side);
            let y0 = rng.random_range(0..=h - side);
            let mut mask = Mask::empty(w, h);
            for y in y0..y0 + side {
                for x in x0..x0 + side {
                    mask.set(x, y, true);
                }
            }
            let bbox = BBox {
                min_x: x0,
                min_y: y0,
                max_x: x0 + side - 1,
                max_y: y0 + side - 1,
            };
            Ok(GeneratedMask {
                mask,
                components: vec![Component {
                    segment_id: None,
                    center: bbox.center(),
                    bbox: Some(bbox),
                    pixels: side * side,
                }],
                target_area: side * side,
            })
        }
    }
}
