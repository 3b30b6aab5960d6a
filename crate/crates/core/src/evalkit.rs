//! Masking, a harmonic (diffusion) baseline filler, and reconstruction
//! metrics restricted to the masked region.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imgio::{gaussian_kernel, GrayImage};
use crate::maskgen::Mask;

/// PSNR reported when the region of interest is reconstructed exactly.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_RADIUS: usize = 5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_RANGE: f64 = 255.0;

fn check_same(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            actual: b,
        });
    }
    Ok(())
}

/// Replaces masked pixels with `fill`.
pub fn apply_mask(img: &GrayImage, mask: &Mask, fill: u8) -> Result<GrayImage> {
    check_same(img.dims(), mask.dims())?;
    let mut out = img.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(mask.bits()) {
        if m {
            *v = fill;
        }
    }
    Ok(out)
}

/// Outcome of a diffusion fill.
#[derive(Clone, Debug, PartialEq)]
pub struct InpaintResult {
    pub image: GrayImage,
    pub iterations: usize,
    pub converged: bool,
    /// Largest `|u - mean of 4-neighbors|` over masked pixels, before
    /// quantization.
    pub residual: f64,
}

/// Fills masked pixels with the discrete harmonic interpolant of the
/// unmasked ones.
///
/// Masked pixels start from their current values and are relaxed in place
/// (successive over-relaxation, a weighted Gauss-Seidel sweep) towards the
/// mean of their in-raster 4-neighbors until the largest update falls below
/// `tol` or `max_iters` sweeps have run. Unmasked pixels are never written.
pub fn diffusion_inpaint(
    img: &GrayImage,
    mask: &Mask,
    max_iters: usize,
    tol: f64,
) -> Result<InpaintResult> {
    check_same(img.dims(), mask.dims())?;
    if !mask.bits().contains(&false) {
        return Err(Error::FullMask);
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be > 0, got {tol}")));
    }
    let (w, h) = img.dims();
    let mut u: Vec<f64> = img.data().iter().map(|&v| f64::from(v)).collect();
    let unknowns: Vec<usize> = (0..w * h).filter(|&i| mask.bits()[i]).collect();
    if unknowns.is_empty() {
        return Ok(InpaintResult {
            image: img.clone(),
            iterations: 0,
            converged: true,
            residual: 0.0,
        });
    }

    let neighbors = |i: usize| {
        let (x, y) = (i % w, i / w);
        let mut n = [usize::MAX; 4];
        if x > 0 {
            n[0] = i - 1;
        }
        if x + 1 < w {
            n[1] = i + 1;
        }
        if y > 0 {
            n[2] = i - w;
        }
        if y + 1 < h {
            n[3] = i + w;
        }
        n
    };
    let local_mean = |u: &[f64], i: usize| {
        let (mut s, mut c) = (0.0, 0u32);
        for j in neighbors(i) {
            if j != usize::MAX {
                s += u[j];
                c += 1;
            }
        }
        s / f64::from(c)
    };

    // Relaxation factor tuned for the longest grid dimension.
    let n = w.max(h) as f64;
    let omega = 2.0 / (1.0 + (std::f64::consts::PI / n).sin());

    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        let mut max_update = 0.0f64;
        for &i in &unknowns {
            let delta = omega * (local_mean(&u, i) - u[i]);
            u[i] += delta;
            max_update = max_update.max(delta.abs());
        }
        if max_update < tol {
            converged = true;
            break;
        }
    }
    let residual = unknowns
        .iter()
        .map(|&i| (u[i] - local_mean(&u, i)).abs())
        .fold(0.0, f64::max);
    let data = u.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    Ok(InpaintResult {
        image: GrayImage::new(w, h, data)?,
        iterations,
        converged,
        residual,
    })
}

fn roi_count(roi: &Mask) -> Result<usize> {
    match roi.count() {
        0 => Err(Error::EmptyRoi),
        n => Ok(n),
    }
}

/// `10 log10(255^2 / MSE)` over RoI pixels, capped at [`PSNR_CAP_DB`].
pub fn psnr(reference: &GrayImage, rec: &GrayImage, roi: &Mask) -> Result<f64> {
    check_same(reference.dims(), rec.dims())?;
    check_same(reference.dims(), roi.dims())?;
    let n = roi_count(roi)?;
    let sse: f64 = reference
        .data()
        .iter()
        .zip(rec.data())
        .zip(roi.bits())
        .filter(|(_, &m)| m)
        .map(|((&a, &b), _)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum();
    let mse = sse / n as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (255.0 * 255.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Gaussian-weighted local moments with the window truncated to the raster
/// and re-normalized.
struct LocalStats {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    xx: Vec<f64>,
    yy: Vec<f64>,
    xy: Vec<f64>,
}

fn windowed_mean(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let r = taps.len() / 2;
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let (pos, len) = if horizontal { (x, w) } else { (y, h) };
                let lo = pos.saturating_sub(r);
                let hi = (pos + r).min(len - 1);
                let (mut acc, mut norm) = (0.0, 0.0);
                for q in lo..=hi {
                    let t = taps[q + r - pos];
                    let v = if horizontal { src[y * w + q] } else { src[q * w + x] };
                    acc += t * v;
                    norm += t;
                }
                out[y * w + x] = acc / norm;
            }
        }
        out
    };
    pass(&pass(src, true), false)
}

fn local_stats(a: &GrayImage, b: &GrayImage) -> LocalStats {
    let (w, h) = a.dims();
    let taps = gaussian_kernel(SSIM_SIGMA);
    debug_assert_eq!(taps.len(), 2 * SSIM_RADIUS + 1);
    let x: Vec<f64> = a.data().iter().map(|&v| f64::from(v)).collect();
    let y: Vec<f64> = b.data().iter().map(|&v| f64::from(v)).collect();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| a * b).collect::<Vec<_>>();
    LocalStats {
        mu_x: windowed_mean(&x, w, h, &taps),
        mu_y: windowed_mean(&y, w, h, &taps),
        xx: windowed_mean(&prod(&x, &x), w, h, &taps),
        yy: windowed_mean(&prod(&y, &y), w, h, &taps),
        xy: windowed_mean(&prod(&x, &y), w, h, &taps),
    }
}

/// SSIM of one window from its Gaussian-weighted moments.
pub fn ssim_from_moments(mu_x: f64, mu_y: f64, xx: f64, yy: f64, xy: f64) -> f64 {
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    let var_x = xx - mu_x * mu_x;
    let var_y = yy - mu_y * mu_y;
    let cov = xy - mu_x * mu_y;
    ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2))
        / ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2))
}

/// Per-pixel SSIM map: 11x11 Gaussian window (sigma 1.5) centered on each
/// pixel, truncated at the raster edge with weights re-normalized.
pub fn ssim_map(reference: &GrayImage, rec: &GrayImage) -> Result<Vec<f64>> {
    check_same(reference.dims(), rec.dims())?;
    let s = local_stats(reference, rec);
    Ok((0..s.mu_x.len())
        .map(|i| ssim_from_moments(s.mu_x[i], s.mu_y[i], s.xx[i], s.yy[i], s.xy[i]))
        .collect())
}

/// Mean of the SSIM map over window centers inside the RoI.
pub fn ssim(reference: &GrayImage, rec: &GrayImage, roi: &Mask) -> Result<f64> {
    check_same(reference.dims(), roi.dims())?;
    let n = roi_count(roi)?;
    let map = ssim_map(reference, rec)?;
    let total: f64 = map
        .iter()
        .zip(roi.bits())
        .filter(|(_, &m)| m)
        .map(|(v, _)| v)
        .sum();
    Ok((total / n as f64).clamp(-1.0, 1.0))
}

/// One scored reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub image_id: String,
    pub mask_kind: String,
    pub position: String,
    pub shape: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub roi_pixels: usize,
}

pub const RESULTS_HEADER: &str = "image_id,mask_kind,position,shape,psnr_db,ssim,roi_pixels";

impl MetricReport {
    /// Scores `rec` against `reference` on the mask.
    pub fn score(
        image_id: impl Into<String>,
        mask_kind: impl Into<String>,
        layout: (&str, &str),
        reference: &GrayImage,
        rec: &GrayImage,
        roi: &Mask,
    ) -> Result<Self> {
        Ok(MetricReport {
            image_id: image_id.into(),
            mask_kind: mask_kind.into(),
            position: layout.0.to_string(),
            shape: layout.1.to_string(),
            psnr_db: psnr(reference, rec, roi)?,
            ssim: ssim(reference, rec, roi)?,
            roi_pixels: roi.count(),
        })
    }

    /// CSV row; floats use the shortest representation that parses back
    /// exactly.
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:?},{:?},{}",
            self.image_id,
            self.mask_kind,
            self.position,
            self.shape,
            self.psnr_db,
            self.ssim,
            self.roi_pixels
        )
    }

    pub fn from_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        let bad = || Error::Malformed(format!("bad results row `{line}`"));
        if f.len() != 7 {
            return Err(bad());
        }
        Ok(MetricReport {
            image_id: f[0].to_string(),
            mask_kind: f[1].to_string(),
            position: f[2].to_string(),
            shape: f[3].to_string(),
            psnr_db: f[4].parse().map_err(|_| bad())?,
            ssim: f[5].parse().map_err(|_| bad())?,
            roi_pixels: f[6].parse().map_err(|_| bad())?,
        })
    }
}

/// Appends reports to a results CSV, writing the header when the file is new
/// or empty.
pub fn append_reports(path: impl AsRef<Path>, reports: &[MetricReport]) -> Result<()> {
    let path = path.as_ref();
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let empty = file.metadata().map_err(|e| Error::io(path, e))?.len() == 0;
    let mut text = String::new();
    if empty {
        text.push_str(RESULTS_HEADER);
        text.push('\n');
    }
    for r in reports {
        text.push_str(&r.to_csv_row());
        text.push('\n');
    }
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::BinaryImage;
    use proptest::prelude::*;

    fn full(w: usize, h: usize) -> Mask {
        BinaryImage::from_fn(w, h, |_, _| true)
    }

    #[test]
    fn apply_mask_cases() {
        let img = GrayImage::from_fn(4, 3, |x, y| (x * 20 + y * 3 + 1) as u8).unwrap();
        assert_eq!(apply_mask(&img, &Mask::empty(4, 3), 0).unwrap(), img);
        assert!(apply_mask(&img, &full(4, 3), 0).unwrap().data().iter().all(|&v| v == 0));
        let mut one = Mask::empty(4, 3);
        one.set(2, 1, true);
        let out = apply_mask(&img, &one, 0).unwrap();
        let diffs: Vec<usize> = (0..12).filter(|&i| out.data()[i] != img.data()[i]).collect();
        assert_eq!(diffs, vec![6]);
        assert!(apply_mask(&img, &Mask::empty(3, 3), 0).is_err());
    }

    #[test]
    fn diffusion_recovers_constants() {
        let img = GrayImage::filled(20, 15, 77).unwrap();
        let mask = BinaryImage::from_fn(20, 15, |x, y| (3..17).contains(&x) && (2..12).contains(&y));
        let masked = apply_mask(&img, &mask, 0).unwrap();
        let out = diffusion_inpaint(&masked, &mask, 10_000, 1e-6).unwrap();
        assert!(out.converged);
        assert_eq!(out.image, img);
    }

    #[test]
    fn diffusion_ramp_midpoint() {
        // one unknown u with u = (64 + 192) / 2
        let img = GrayImage::new(5, 1, vec![0, 64, 0, 192, 255]).unwrap();
        let mut mask = Mask::empty(5, 1);
        mask.set(2, 0, true);
        let out = diffusion_inpaint(&img, &mask, 1000, 1e-9).unwrap();
        let expected = (64.0 + 192.0) / 2.0;
        assert!((f64::from(out.image.get(2, 0)) - expected).abs() <= 1.0);
        assert_eq!(out.image.get(1, 0), 64);
        assert_eq!(out.image.get(3, 0), 192);
    }

    #[test]
    fn diffusion_respects_max_principle() {
        let img = GrayImage::from_fn(30, 30, |x, y| (40 + (x * 3 + y * 2) % 100) as u8).unwrap();
        let mask = BinaryImage::from_fn(30, 30, |x, y| (5..25).contains(&x) && (8..20).contains(&y));
        let masked = apply_mask(&img, &mask, 0).unwrap();
        let out = diffusion_inpaint(&masked, &mask, 20_000, 1e-4).unwrap();
        assert!(out.converged);
        assert!(out.residual <= 4e-4);
        let boundary: Vec<u8> = (0..900).filter(|&i| !mask.bits()[i]).map(|i| img.data()[i]).collect();
        let (lo, hi) = (*boundary.iter().min().unwrap(), *boundary.iter().max().unwrap());
        for i in (0..900).filter(|&i| mask.bits()[i]) {
            let v = out.image.data()[i];
            assert!(v >= lo && v <= hi);
        }
        for i in (0..900).filter(|&i| !mask.bits()[i]) {
            assert_eq!(out.image.data()[i], img.data()[i]);
        }
    }

    #[test]
    fn diffusion_rejects_full_mask() {
        let img = GrayImage::filled(3, 3, 1).unwrap();
        assert!(matches!(diffusion_inpaint(&img, &full(3, 3), 10, 1e-3), Err(Error::FullMask)));
    }

    #[test]
    fn psnr_cases() {
        let a = GrayImage::from_fn(8, 8, |x, y| (x * 20 + y) as u8).unwrap();
        let roi = BinaryImage::from_fn(8, 8, |x, _| x < 4);
        assert_eq!(psnr(&a, &a, &roi).unwrap(), PSNR_CAP_DB);

        let b = GrayImage::from_fn(8, 8, |x, y| (x * 20 + y + 16) as u8).unwrap();
        let expected = 10.0 * (255.0f64 * 255.0 / 256.0).log10();
        assert!((psnr(&a, &b, &roi).unwrap() - expected).abs() < 1e-9);
        assert!((expected - 24.05).abs() < 0.01);

        let mut c = b.clone();
        c.data_mut()[7] = 0; // x = 7, outside roi
        assert_eq!(psnr(&a, &c, &roi).unwrap(), psnr(&a, &b, &roi).unwrap());
        assert!(matches!(psnr(&a, &b, &Mask::empty(8, 8)), Err(Error::EmptyRoi)));
    }

    #[test]
    fn psnr_decreases_with_error() {
        let a = GrayImage::filled(6, 6, 100).unwrap();
        let roi = full(6, 6);
        let mut last = f64::INFINITY;
        for d in 1..=50u8 {
            let b = GrayImage::filled(6, 6, 100 + d).unwrap();
            let p = psnr(&a, &b, &roi).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a = GrayImage::from_fn(20, 17, |x, y| ((x * 37) ^ (y * 11)) as u8).unwrap();
        assert_eq!(ssim(&a, &a, &full(20, 17)).unwrap(), 1.0);
        let c = GrayImage::filled(9, 9, 100).unwrap();
        assert_eq!(ssim(&c, &c, &full(9, 9)).unwrap(), 1.0);
        assert!(matches!(ssim(&a, &a, &Mask::empty(20, 17)), Err(Error::EmptyRoi)));
    }

    #[test]
    fn ssim_drops_under_noise() {
        let a = GrayImage::from_fn(24, 24, |x, y| (x * 8 + y * 3) as u8).unwrap();
        let b = GrayImage::from_fn(24, 24, |x, y| ((x * 8 + y * 3) as u8).wrapping_add(((x * y) % 7 * 9) as u8)).unwrap();
        let s = ssim(&a, &b, &full(24, 24)).unwrap();
        assert!(s < 0.99 && s > -1.0);
    }

    #[test]
    fn report_csv_round_trip() {
        let r = MetricReport {
            image_id: "p01/slice_003".into(),
            mask_kind: "large-square".into(),
            position: "random".into(),
            shape: "square".into(),
            psnr_db: 21.123456789012345,
            ssim: 0.1 + 0.2,
            roi_pixels: 4096,
        };
        assert_eq!(MetricReport::from_csv_row(&r.to_csv_row()).unwrap(), r);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("results.csv");
        append_reports(&p, &[r.clone()]).unwrap();
        append_reports(&p, &[r]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().next().unwrap(), RESULTS_HEADER);
    }

    fn arb_pair(w: usize, h: usize) -> impl Strategy<Value = (GrayImage, GrayImage)> {
        (
            proptest::collection::vec(any::<u8>(), w * h),
            proptest::collection::vec(any::<u8>(), w * h),
        )
            .prop_map(move |(a, b)| (GrayImage::new(w, h, a).unwrap(), GrayImage::new(w, h, b).unwrap()))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn metrics_are_symmetric((a, b) in arb_pair(16, 12)) {
            let roi = full(16, 12);
            prop_assert!((psnr(&a, &b, &roi).unwrap() - psnr(&b, &a, &roi).unwrap()).abs() < 1e-9);
            prop_assert!((ssim(&a, &b, &roi).unwrap() - ssim(&b, &a, &roi).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn ssim_ignores_far_pixels((a, b) in arb_pair(30, 30), noise in proptest::collection::vec(any::<u8>(), 900)) {
            let roi = BinaryImage::from_fn(30, 30, |x, y| (10..16).contains(&x) && (12..18).contains(&y));
            let far = |x: usize, y: usize| x + 6 < 10 || x > 15 + 6 || y + 6 < 12 || y > 17 + 6;
            let mut c = b.clone();
            for y in 0..30 {
                for x in 0..30 {
                    if far(x, y) {
                        c.data_mut()[y * 30 + x] = noise[y * 30 + x];
                    }
                }
            }
            prop_assert_eq!(ssim(&a, &b, &roi).unwrap(), ssim(&a, &c, &roi).unwrap());
            prop_assert_eq!(psnr(&a, &b, &roi).unwrap(), psnr(&a, &c, &roi).unwrap());
        }
    }
}
