//! Slow reference implementations used as test oracles. They share no code
//! with the library paths they check.
#![allow(dead_code)]

use shapemask_core::{FloatImage, GrayImage};

/// Graph segmentation written the plain way: all-pairs neighbor scan, a
/// per-pixel component array relabelled on every merge, and the same
/// `(weight, u, v)` processing order.
pub fn reference_segment(img: &FloatImage, k: f64, min_size: usize) -> Vec<u32> {
    let (w, h) = img.dims();
    let n = w * h;
    let v = img.data();
    let mut edges = Vec::new();
    for p in 0..n {
        for q in p + 1..n {
            let (px, py) = ((p % w) as i64, (p / w) as i64);
            let (qx, qy) = ((q % w) as i64, (q / w) as i64);
            if (px - qx).abs().max((py - qy).abs()) == 1 {
                edges.push((p, q, (v[p] - v[q]).abs()));
            }
        }
    }
    edges.sort_by(|a, b| {
        a.2.partial_cmp(&b.2)
            .unwrap()
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });

    let mut comp: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut internal = vec![0.0f64; n];
    let relabel = |comp: &mut Vec<usize>, from: usize, to: usize| {
        for c in comp.iter_mut() {
            if *c == from {
                *c = to;
            }
        }
    };

    for &(p, q, wt) in &edges {
        let (a, b) = (comp[p], comp[q]);
        if a == b {
            continue;
        }
        // internal difference starts at 0, so a singleton's bound is k
        let ta = if size[a] == 1 { k } else { internal[a] + k / size[a] as f64 };
        let tb = if size[b] == 1 { k } else { internal[b] + k / size[b] as f64 };
        if wt <= ta && wt <= tb {
            relabel(&mut comp, b, a);
            size[a] += size[b];
            internal[a] = wt;
        }
    }
    for &(p, q, _) in &edges {
        let (a, b) = (comp[p], comp[q]);
        if a != b && (size[a] < min_size || size[b] < min_size) {
            relabel(&mut comp, b, a);
            size[a] += size[b];
        }
    }

    let mut ids = std::collections::HashMap::new();
    comp.iter()
        .map(|c| {
            let next = ids.len() as u32;
            *ids.entry(*c).or_insert(next)
        })
        .collect()
}

fn gaussian_1d(sigma: f64, radius: i64) -> Vec<f64> {
    (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// SSIM straight from its definition: for every window center in the RoI,
/// gather the in-raster part of the 11x11 Gaussian window, normalize the
/// weights, and compute means, variances and covariance as weighted sums of
/// deviations.
pub fn reference_ssim(a: &GrayImage, b: &GrayImage, roi: &[bool]) -> f64 {
    let (w, h) = a.dims();
    let g = gaussian_1d(1.5, 5);
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for cy in 0..h as i64 {
        for cx in 0..w as i64 {
            if !roi[cy as usize * w + cx as usize] {
                continue;
            }
            let mut taps = Vec::new();
            for dy in -5..=5i64 {
                for dx in -5..=5i64 {
                    let (x, y) = (cx + dx, cy + dy);
                    if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                        continue;
                    }
                    let wt = g[(dx + 5) as usize] * g[(dy + 5) as usize];
                    let (x, y) = (x as usize, y as usize);
                    taps.push((wt, f64::from(a.get(x, y)), f64::from(b.get(x, y))));
                }
            }
            let norm: f64 = taps.iter().map(|t| t.0).sum();
            let mx: f64 = taps.iter().map(|t| t.0 * t.1).sum::<f64>() / norm;
            let my: f64 = taps.iter().map(|t| t.0 * t.2).sum::<f64>() / norm;
            let vx: f64 = taps.iter().map(|t| t.0 * (t.1 - mx).powi(2)).sum::<f64>() / norm;
            let vy: f64 = taps.iter().map(|t| t.0 * (t.2 - my).powi(2)).sum::<f64>() / norm;
            let cov: f64 = taps.iter().map(|t| t.0 * (t.1 - mx) * (t.2 - my)).sum::<f64>() / norm;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// Same partition, regardless of label numbering.
pub fn same_partition(a: &[u32], b: &[u32]) -> bool {
    use std::collections::HashMap;
    if a.len() != b.len() {
        return false;
    }
    let mut ab = HashMap::new();
    let mut ba = HashMap::new();
    a.iter().zip(b).all(|(x, y)| {
        *ab.entry(*x).or_insert(*y) == *y && *ba.entry(*y).or_insert(*x) == *x
    })
}

/// 8-connectivity check of every label's pixel set by flood fill.
pub fn labels_connected(w: usize, h: usize, labels: &[u32]) -> bool {
    let n_labels = labels.iter().max().map_or(0, |m| *m as usize + 1);
    let mut seen_label = vec![false; n_labels];
    let mut visited = vec![false; w * h];
    for start in 0..w * h {
        if visited[start] {
            continue;
        }
        let l = labels[start];
        if seen_label[l as usize] {
            return false; // second, disconnected piece of the same label
        }
        seen_label[l as usize] = true;
        let mut stack = vec![start];
        visited[start] = true;
        while let Some(p) = stack.pop() {
            let (x, y) = ((p % w) as i64, (p / w) as i64);
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if !visited[q] && labels[q] == l {
                        visited[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
    }
    true
}
