//! Graph-based superpixel over-segmentation.
//!
//! Pixels are vertices of an 8-connected graph whose edge weights are the
//! absolute difference of blurred intensities. Edges are processed in
//! ascending `(weight, u, v)` order; two components merge when the edge
//! weight does not exceed `min(Int(C1) + k/|C1|, Int(C2) + k/|C2|)`, where
//! `Int(C)` is the largest weight absorbed into `C` so far. A second pass in
//! the same order absorbs components smaller than `min_size` into their
//! cheapest neighbor.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::{self, gaussian_blur, FloatImage, GrayImage};
use crate::unionfind::UnionFind;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub u: u32,
    pub v: u32,
    pub w: f64,
}

#[derive(Clone, Debug)]
pub struct PixelGraph {
    pub vertex_count: usize,
    pub edges: Vec<Edge>,
}

impl PixelGraph {
    /// Number of unordered 8-neighbor pairs in a `w x h` raster.
    pub fn expected_edge_count(w: usize, h: usize) -> usize {
        // horizontal + vertical + two diagonals
        (w - 1) * h + w * (h - 1) + 2 * (w - 1) * (h - 1)
    }

    /// Sorts edges by `(weight, u, v)`; the order is total so the result is
    /// independent of the sort algorithm.
    pub fn sort_edges(&mut self) {
        self.edges.sort_unstable_by(|a, b| {
            a.w.total_cmp(&b.w)
                .then(a.u.cmp(&b.u))
                .then(a.v.cmp(&b.v))
        });
    }
}

/// Builds the 8-connected pixel graph with `u < v` on every edge.
pub fn build_graph(img: &FloatImage) -> PixelGraph {
    let (w, h) = img.dims();
    let data = img.data();
    let mut edges = Vec::with_capacity(PixelGraph::expected_edge_count(w, h));
    let mut push = |a: usize, b: usize| {
        edges.push(Edge {
            u: a as u32,
            v: b as u32,
            w: (data[a] - data[b]).abs(),
        });
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                push(i, i + 1);
            }
            if y + 1 < h {
                push(i, i + w);
                if x + 1 < w {
                    push(i, i + w + 1);
                }
                if x > 0 {
                    push(i, i + w - 1);
                }
            }
        }
    }
    PixelGraph {
        vertex_count: w * h,
        edges,
    }
}

/// Over-segmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegParams {
    /// Scale: larger values favor larger segments.
    pub k: f64,
    pub min_size: usize,
    /// Gaussian pre-filter width.
    pub sigma: f64,
}

impl Default for SegParams {
    fn default() -> Self {
        SegParams {
            k: 2.0,
            min_size: 9,
            sigma: 0.5,
        }
    }
}

impl SegParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) || !self.k.is_finite() {
            return Err(Error::InvalidParameter(format!("k must be > 0, got {}", self.k)));
        }
        if self.min_size < 1 {
            return Err(Error::InvalidParameter("min_size must be >= 1".into()));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Per-pixel segment ids, contiguous `0..S`, numbered in order of each
/// segment's first pixel in row-major scan.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    count: usize,
}

impl LabelMap {
    /// Validates that labels are contiguous from zero.
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 || width * height != labels.len() {
            return Err(Error::InvalidParameter(format!(
                "label data length {} does not match {width}x{height}",
                labels.len()
            )));
        }
        let count = labels.iter().max().map_or(0, |&m| m as usize + 1);
        let mut seen = vec![false; count];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidParameter(format!(
                "label ids are not contiguous: {missing} is unused"
            )));
        }
        Ok(LabelMap {
            width,
            height,
            labels,
            count,
        })
    }

    /// Renumbers arbitrary group keys by first occurrence in scan order.
    pub fn from_groups(width: usize, height: usize, keys: impl IntoIterator<Item = usize>) -> Self {
        let mut remap = std::collections::HashMap::new();
        let labels: Vec<u32> = keys
            .into_iter()
            .map(|k| {
                let next = remap.len() as u32;
                *remap.entry(k).or_insert(next)
            })
            .collect();
        assert_eq!(labels.len(), width * height);
        LabelMap {
            width,
            height,
            count: remap.len(),
            labels,
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

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn num_segments(&self) -> usize {
        self.count
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.count];
        for &l in &self.labels {
            c[l as usize] += 1;
        }
        c
    }

    /// Writes a 16-bit P5 PGM plus a `.json` sidecar mapping label to pixel
    /// count. Returns the sidecar path.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<PathBuf> {
        let path = path.as_ref();
        if self.count > usize::from(u16::MAX) + 1 {
            return Err(Error::UnsupportedFormat(format!(
                "{} labels exceed the 16-bit label map range",
                self.count
            )));
        }
        let samples: Vec<u16> = self.labels.iter().map(|&l| l as u16).collect();
        let bytes = imgio::encode_pgm16(self.width, self.height, &samples);
        fs::write(path, bytes).map_err(|e| Error::io(path, e))?;

        let sidecar = Self::sidecar_path(path);
        let doc = LabelCounts {
            segments: self.count,
            labels: self
                .counts()
                .into_iter()
                .enumerate()
                .map(|(label, pixel_count)| LabelCount { label, pixel_count })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&doc).expect("label counts serialize");
        fs::write(&sidecar, text + "\n").map_err(|e| Error::io(&sidecar, e))?;
        Ok(sidecar)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if !bytes.starts_with(b"P5") {
            return Err(Error::UnsupportedFormat("label map must be a P5 PGM".into()));
        }
        let pgm = imgio::decode_pgm(&bytes)?;
        Self::new(
            pgm.width,
            pgm.height,
            pgm.samples.into_iter().map(u32::from).collect(),
        )
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("json")
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelCounts {
    pub segments: usize,
    pub labels: Vec<LabelCount>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelCount {
    pub label: usize,
    pub pixel_count: usize,
}

/// Blurs with `p.sigma` and over-segments.
pub fn segment(img: &GrayImage, p: &SegParams) -> Result<LabelMap> {
    p.validate()?;
    let smooth = gaussian_blur(img, p.sigma)?;
    segment_filtered(&smooth, p)
}

/// Over-segments an already filtered image; `p.sigma` is ignored.
pub fn segment_filtered(img: &FloatImage, p: &SegParams) -> Result<LabelMap> {
    p.validate()?;
    let (w, h) = img.dims();
    let mut graph = build_graph(img);
    graph.sort_edges();

    let n = graph.vertex_count;
    let mut uf = UnionFind::new(n);
    let mut threshold = vec![p.k; n];
    for e in &graph.edges {
        let a = uf.find(e.u as usize);
        let b = uf.find(e.v as usize);
        if a != b && e.w <= threshold[a] && e.w <= threshold[b] {
            let root = uf.union(a, b);
            threshold[root] = e.w + p.k / uf.size(root) as f64;
        }
    }

    if p.min_size > 1 {
        for e in &graph.edges {
            let a = uf.find(e.u as usize);
            let b = uf.find(e.v as usize);
            if a != b && (uf.size(a) < p.min_size || uf.size(b) < p.min_size) {
                uf.union(a, b);
            }
        }
    }

    let roots: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
    Ok(LabelMap::from_groups(w, h, roots))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(k: f64, min_size: usize, sigma: f64) -> SegParams {
        SegParams { k, min_size, sigma }
    }

    #[test]
    fn graph_edge_counts() {
        let two = build_graph(&GrayImage::filled(2, 2, 0).unwrap().to_float());
        assert_eq!(two.edges.len(), 6);
        let one = build_graph(&GrayImage::filled(1, 1, 0).unwrap().to_float());
        assert!(one.edges.is_empty());
        for (w, h) in [(1, 5), (5, 1), (3, 7), (16, 9)] {
            let g = build_graph(&GrayImage::filled(w, h, 0).unwrap().to_float());
            assert_eq!(g.edges.len(), PixelGraph::expected_edge_count(w, h));
            if w >= 2 && h >= 2 {
                assert_eq!(g.edges.len(), 4 * w * h - 3 * w - 3 * h + 2);
            }
        }
    }

    #[test]
    fn graph_edges_are_canonical_and_unique() {
        let img = GrayImage::from_fn(6, 5, |x, y| (x * 31 + y * 17) as u8).unwrap();
        let g = build_graph(&img.to_float());
        let mut pairs: Vec<(u32, u32)> = g.edges.iter().map(|e| (e.u, e.v)).collect();
        assert!(pairs.iter().all(|(u, v)| u < v));
        pairs.sort_unstable();
        pairs.dedup();
        assert_eq!(pairs.len(), g.edges.len());
        for e in &g.edges {
            let (ux, uy) = (e.u as usize % 6, e.u as usize / 6);
            let (vx, vy) = (e.v as usize % 6, e.v as usize / 6);
            assert!(ux.abs_diff(vx) <= 1 && uy.abs_diff(vy) <= 1);
            assert_eq!(e.w, (f64::from(img.get(ux, uy)) - f64::from(img.get(vx, vy))).abs());
        }
    }

    #[test]
    fn constant_graph_has_zero_weights() {
        let g = build_graph(&GrayImage::filled(3, 3, 42).unwrap().to_float());
        assert!(g.edges.iter().all(|e| e.w == 0.0));
    }

    #[test]
    fn constant_image_is_one_segment() {
        for p in [params(0.5, 1, 0.0), params(2.0, 9, 0.5), params(100.0, 50, 1.0)] {
            let lm = segment(&GrayImage::filled(7, 5, 90).unwrap(), &p).unwrap();
            assert_eq!(lm.num_segments(), 1);
        }
    }

    #[test]
    fn two_pixels_far_apart_stay_split() {
        let img = GrayImage::new(2, 1, vec![0, 255]).unwrap();
        let lm = segment(&img, &params(2.0, 1, 0.0)).unwrap();
        assert_eq!(lm.labels(), &[0, 1]);
    }

    #[test]
    fn half_split_square() {
        let img = GrayImage::from_fn(4, 4, |x, _| if x < 2 { 0 } else { 255 }).unwrap();
        let lm = segment(&img, &params(2.0, 1, 0.0)).unwrap();
        assert_eq!(lm.num_segments(), 2);
        for y in 0..4 {
            assert_eq!([lm.get(0, y), lm.get(1, y), lm.get(2, y), lm.get(3, y)], [0, 0, 1, 1]);
        }
    }

    #[test]
    fn min_size_absorbs_small_components() {
        let mut data = vec![0u8; 25];
        data[12] = 255;
        let img = GrayImage::new(5, 5, data).unwrap();
        assert_eq!(segment(&img, &params(1.0, 1, 0.0)).unwrap().num_segments(), 2);
        assert_eq!(segment(&img, &params(1.0, 2, 0.0)).unwrap().num_segments(), 1);
    }

    #[test]
    fn smaller_than_min_size_image_is_single_segment() {
        let img = GrayImage::new(2, 2, vec![0, 255, 0, 255]).unwrap();
        assert_eq!(segment(&img, &params(1.0, 9, 0.0)).unwrap().num_segments(), 1);
    }

    #[test]
    fn rejects_bad_params() {
        let img = GrayImage::filled(2, 2, 0).unwrap();
        assert!(segment(&img, &params(0.0, 1, 0.0)).is_err());
        assert!(segment(&img, &params(1.0, 0, 0.0)).is_err());
        assert!(segment(&img, &params(1.0, 1, -0.5)).is_err());
    }

    #[test]
    fn label_map_rejects_gaps() {
        assert!(LabelMap::new(2, 1, vec![0, 2]).is_err());
        assert!(LabelMap::new(2, 1, vec![0]).is_err());
        assert_eq!(LabelMap::new(2, 1, vec![1, 0]).unwrap().num_segments(), 2);
    }

    #[test]
    fn label_map_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(12, 9, |x, y| ((x / 3) * 60 + (y / 4) * 30) as u8).unwrap();
        let lm = segment(&img, &params(2.0, 1, 0.0)).unwrap();
        let p = dir.path().join("labels.pgm");
        let sidecar = lm.save(&p).unwrap();
        assert_eq!(LabelMap::load(&p).unwrap(), lm);

        let counts: LabelCounts =
            serde_json::from_str(&fs::read_to_string(sidecar).unwrap()).unwrap();
        assert_eq!(counts.segments, lm.num_segments());
        let total: usize = counts.labels.iter().map(|c| c.pixel_count).sum();
        assert_eq!(total, 12 * 9);
    }
}
