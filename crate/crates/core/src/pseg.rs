//! Pseudo-segments: superpixels merged by mean intensity across spatial
//! adjacency, plus the inverse-size sampling weights.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::felz::LabelMap;
use crate::imgio::GrayImage;

/// Inclusive pixel bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub min_x: usize,
    pub min_y: usize,
    pub max_x: usize,
    pub max_y: usize,
}

impl BBox {
    pub fn point(x: usize, y: usize) -> Self {
        BBox {
            min_x: x,
            min_y: y,
            max_x: x,
            max_y: y,
        }
    }

    pub fn include(&mut self, x: usize, y: usize) {
        self.min_x = self.min_x.min(x);
        self.min_y = self.min_y.min(y);
        self.max_x = self.max_x.max(x);
        self.max_y = self.max_y.max(y);
    }

    /// Integer midpoint, rounded down.
    pub fn center(&self) -> (usize, usize) {
        ((self.min_x + self.max_x) / 2, (self.min_y + self.max_y) / 2)
    }

    pub fn width(&self) -> usize {
        self.max_x - self.min_x + 1
    }

    pub fn height(&self) -> usize {
        self.max_y - self.min_y + 1
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x as f64 && x <= self.max_x as f64 && y >= self.min_y as f64 && y <= self.max_y as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoSegment {
    pub id: usize,
    pub pixel_count: usize,
    pub bbox: BBox,
    pub centroid: (f64, f64),
    pub mean_intensity: f64,
    pub intensity_sum: u64,
    /// Member pixels as ascending row-major indices.
    pub pixels: Vec<u32>,
}

impl PseudoSegment {
    fn from_pixels(id: usize, width: usize, pixels: Vec<u32>, intensity_sum: u64) -> Self {
        debug_assert!(!pixels.is_empty());
        let first = pixels[0] as usize;
        let mut bbox = BBox::point(first % width, first / width);
        let (mut sx, mut sy) = (0u64, 0u64);
        for &p in &pixels {
            let (x, y) = (p as usize % width, p as usize / width);
            bbox.include(x, y);
            sx += x as u64;
            sy += y as u64;
        }
        let n = pixels.len();
        PseudoSegment {
            id,
            pixel_count: n,
            bbox,
            centroid: (sx as f64 / n as f64, sy as f64 / n as f64),
            mean_intensity: intensity_sum as f64 / n as f64,
            intensity_sum,
            pixels,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoSegmentSet {
    width: usize,
    height: usize,
    segments: Vec<PseudoSegment>,
}

impl PseudoSegmentSet {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn segments(&self) -> &[PseudoSegment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&PseudoSegment> {
        self.segments.get(id)
    }

    pub fn total_pixels(&self) -> usize {
        self.segments.iter().map(|s| s.pixel_count).sum()
    }
}

/// One segment per label with exact counts, tight bboxes and mean centroid
/// and intensity.
pub fn compute_stats(labels: &LabelMap, img: &GrayImage) -> Result<PseudoSegmentSet> {
    if labels.dims() != img.dims() {
        return Err(Error::DimensionMismatch {
            expected: labels.dims(),
            actual: img.dims(),
        });
    }
    let n = labels.num_segments();
    let mut pixels: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut sums = vec![0u64; n];
    for (i, (&l, &v)) in labels.labels().iter().zip(img.data()).enumerate() {
        pixels[l as usize].push(i as u32);
        sums[l as usize] += u64::from(v);
    }
    let width = labels.width();
    let segments = pixels
        .into_iter()
        .zip(sums)
        .enumerate()
        .map(|(id, (px, sum))| PseudoSegment::from_pixels(id, width, px, sum))
        .collect();
    Ok(PseudoSegmentSet {
        width,
        height: labels.height(),
        segments,
    })
}

/// Pairs of distinct labels that touch under 8-connectivity, as `(lo, hi)`.
pub fn adjacency(labels: &LabelMap) -> Vec<BTreeSet<usize>> {
    let (w, h) = labels.dims();
    let l = labels.labels();
    let mut adj = vec![BTreeSet::new(); labels.num_segments()];
    let mut link = |a: u32, b: u32| {
        if a != b {
            adj[a as usize].insert(b as usize);
            adj[b as usize].insert(a as usize);
        }
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                link(l[i], l[i + 1]);
            }
            if y + 1 < h {
                link(l[i], l[i + w]);
                if x + 1 < w {
                    link(l[i], l[i + w + 1]);
                }
                if x > 0 {
                    link(l[i], l[i + w - 1]);
                }
            }
        }
    }
    adj
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate {
    diff: f64,
    lo: usize,
    hi: usize,
    lo_version: u32,
    hi_version: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.diff
            .total_cmp(&other.diff)
            .then(self.lo.cmp(&other.lo))
            .then(self.hi.cmp(&other.hi))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Greedily merges the adjacent pair with the smallest mean-intensity
/// difference while that difference is at most `tau`, recomputing means after
/// every merge. Ties go to the smaller `(min id, max id)` pair, where a merged
/// cluster is identified by its smallest original label.
pub fn merge_pseudosegments(
    set: &PseudoSegmentSet,
    labels: &LabelMap,
    tau: f64,
) -> Result<(PseudoSegmentSet, LabelMap)> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be >= 0, got {tau}")));
    }
    if labels.dims() != set.dims() || labels.num_segments() != set.len() {
        return Err(Error::InvalidParameter(
            "label map does not match the pseudo-segment set".into(),
        ));
    }
    let n = set.len();
    let mut adj = adjacency(labels);
    let mut count: Vec<u64> = set.segments.iter().map(|s| s.pixel_count as u64).collect();
    let mut sum: Vec<u64> = set.segments.iter().map(|s| s.intensity_sum).collect();
    let mut version = vec![0u32; n];
    let mut parent: Vec<usize> = (0..n).collect();
    let mean = |sum: &[u64], count: &[u64], i: usize| sum[i] as f64 / count[i] as f64;

    let mut heap = BinaryHeap::new();
    for (a, neighbors) in adj.iter().enumerate() {
        for &b in neighbors.range(a + 1..) {
            heap.push(Reverse(Candidate {
                diff: (mean(&sum, &count, a) - mean(&sum, &count, b)).abs(),
                lo: a,
                hi: b,
                lo_version: 0,
                hi_version: 0,
            }));
        }
    }

    while let Some(Reverse(c)) = heap.pop() {
        if parent[c.lo] != c.lo
            || parent[c.hi] != c.hi
            || version[c.lo] != c.lo_version
            || version[c.hi] != c.hi_version
        {
            continue;
        }
        if c.diff > tau {
            break;
        }
        let (keep, drop) = (c.lo, c.hi);
        parent[drop] = keep;
        count[keep] += count[drop];
        sum[keep] += sum[drop];
        version[keep] += 1;

        let moved = std::mem::take(&mut adj[drop]);
        for nb in moved {
            adj[nb].remove(&drop);
            if nb != keep {
                adj[nb].insert(keep);
                adj[keep].insert(nb);
            }
        }
        adj[keep].remove(&drop);

        let m = mean(&sum, &count, keep);
        for &nb in &adj[keep] {
            let (lo, hi) = (keep.min(nb), keep.max(nb));
            heap.push(Reverse(Candidate {
                diff: (m - mean(&sum, &count, nb)).abs(),
                lo,
                hi,
                lo_version: version[lo],
                hi_version: version[hi],
            }));
        }
    }

    let root = |mut i: usize| {
        while parent[i] != i {
            i = parent[i];
        }
        i
    };
    let roots: Vec<usize> = (0..n).map(root).collect();
    let (w, h) = labels.dims();
    let merged = LabelMap::from_groups(w, h, labels.labels().iter().map(|&l| roots[l as usize]));

    let m = merged.num_segments();
    let mut pixels: Vec<Vec<u32>> = vec![Vec::new(); m];
    let mut sums = vec![0u64; m];
    for (old, seg) in set.segments.iter().enumerate() {
        let first = seg.pixels[0] as usize;
        let new_id = merged.labels()[first] as usize;
        pixels[new_id].extend_from_slice(&seg.pixels);
        debug_assert_eq!(roots[old], roots[labels.labels()[first] as usize]);
        sums[new_id] += seg.intensity_sum;
    }
    let segments = pixels
        .into_iter()
        .zip(sums)
        .enumerate()
        .map(|(id, (mut px, s))| {
            px.sort_unstable();
            PseudoSegment::from_pixels(id, w, px, s)
        })
        .collect();
    Ok((
        PseudoSegmentSet {
            width: w,
            height: h,
            segments,
        },
        merged,
    ))
}

/// Inverse-size sampling weights: the `(segment, 1/pixel_count)` rows and
/// their normalized probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightBias {
    pub entries: Vec<(usize, f64)>,
    pub probabilities: Vec<f64>,
}

impl WeightBias {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Builds weights directly from pixel counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::EmptySegmentSet);
        }
        if counts.contains(&0) {
            return Err(Error::InvalidParameter("segment with zero pixels".into()));
        }
        let entries: Vec<(usize, f64)> = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| (i, 1.0 / c as f64))
            .collect();
        let total: f64 = entries.iter().map(|e| e.1).sum();
        let probabilities = entries.iter().map(|e| e.1 / total).collect();
        Ok(WeightBias {
            entries,
            probabilities,
        })
    }
}

pub fn weight_biases(set: &PseudoSegmentSet) -> Result<WeightBias> {
    let counts: Vec<usize> = set.segments.iter().map(|s| s.pixel_count).collect();
    WeightBias::from_counts(&counts)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub id: usize,
    pub pixel_count: usize,
    pub bbox: BBox,
    pub centroid: [f64; 2],
    pub mean_intensity: f64,
    pub weight: f64,
    pub probability: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SegmentManifest {
    pub width: usize,
    pub height: usize,
    pub segments: Vec<ManifestEntry>,
}

impl SegmentManifest {
    pub fn new(set: &PseudoSegmentSet, wb: &WeightBias) -> Self {
        SegmentManifest {
            width: set.width,
            height: set.height,
            segments: set
                .segments
                .iter()
                .zip(wb.entries.iter().zip(&wb.probabilities))
                .map(|(s, (&(_, weight), &probability))| ManifestEntry {
                    id: s.id,
                    pixel_count: s.pixel_count,
                    bbox: s.bbox,
                    centroid: [s.centroid.0, s.centroid.1],
                    mean_intensity: s.mean_intensity,
                    weight,
                    probability,
                })
                .collect(),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
