//! Synthetic test images: abdominal-slice phantoms (a bright elliptical
//! "organ" with a few flat inner structures on a dark, slightly noisy
//! background) and smooth Gaussian blob fields.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imgio::{save_image, GrayImage};

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = ((x - self.cx) / self.rx, (y - self.cy) / self.ry);
        dx * dx + dy * dy <= 1.0
    }
}

/// Draws one phantom.
pub fn phantom<R: Rng + ?Sized>(width: usize, height: usize, rng: &mut R) -> GrayImage {
    let (w, h) = (width as f64, height as f64);
    let organ = Ellipse {
        cx: w * rng.random_range(0.42..0.58),
        cy: h * rng.random_range(0.42..0.58),
        rx: w * rng.random_range(0.26..0.38),
        ry: h * rng.random_range(0.24..0.36),
        value: rng.random_range(120.0..160.0),
    };
    let inner: Vec<Ellipse> = (0..rng.random_range(2..=4))
        .map(|_| {
            let scale = rng.random_range(0.15..0.35);
            let ox = rng.random_range(-0.45..0.45) * organ.rx;
            let oy = rng.random_range(-0.45..0.45) * organ.ry;
            Ellipse {
                cx: organ.cx + ox,
                cy: organ.cy + oy,
                rx: organ.rx * scale,
                ry: organ.ry * scale * rng.random_range(0.7..1.3),
                value: if rng.random_bool(0.5) {
                    rng.random_range(50.0..90.0)
                } else {
                    rng.random_range(190.0..235.0)
                },
            }
        })
        .collect();
    let background = rng.random_range(8.0..22.0);
    GrayImage::from_fn(width, height, |x, y| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut v = background;
        if organ.contains(fx, fy) {
            v = organ.value;
            if let Some(e) = inner.iter().rev().find(|e| e.contains(fx, fy)) {
                v = e.value;
            }
        }
        (v + rng.random_range(-3.0..=3.0)).round().clamp(0.0, 255.0) as u8
    })
    .expect("positive dims")
}

/// Draws a field of 3 to 6 smooth Gaussian bumps over a dark background,
/// with the same +-3 noise as [`phantom`].
pub fn blobs<R: Rng + ?Sized>(width: usize, height: usize, rng: &mut R) -> GrayImage {
    let (w, h) = (width as f64, height as f64);
    let scale = w.min(h);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(3..=6))
        .map(|_| {
            (
                w * rng.random_range(0.15..0.85),
                h * rng.random_range(0.15..0.85),
                scale * rng.random_range(0.08..0.18),
                rng.random_range(80.0..180.0),
            )
        })
        .collect();
    let background = rng.random_range(10.0..30.0);
    GrayImage::from_fn(width, height, |x, y| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        let v = background
            + bumps
                .iter()
                .map(|&(cx, cy, s, a)| {
                    let d2 = (fx - cx).powi(2) + (fy - cy).powi(2);
                    a * (-d2 / (2.0 * s * s)).exp()
                })
                .sum::<f64>();
        (v + rng.random_range(-3.0..=3.0)).round().clamp(0.0, 255.0) as u8
    })
    .expect("positive dims")
}

/// Image family for [`write_corpus`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Style {
    #[default]
    Phantom,
    Blobs,
}

impl Style {
    pub fn draw<R: Rng + ?Sized>(&self, width: usize, height: usize, rng: &mut R) -> GrayImage {
        match self {
            Style::Phantom => phantom(width, height, rng),
            Style::Blobs => blobs(width, height, rng),
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Style::Phantom => "phantom",
            Style::Blobs => "blobs",
        })
    }
}

impl FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "phantom" => Ok(Style::Phantom),
            "blobs" => Ok(Style::Blobs),
            other => Err(Error::InvalidParameter(format!("unknown image style `{other}`"))),
        }
    }
}

/// Writes `patients x slices` images as `<root>/pNN/slice_MMM.png`.
pub fn write_corpus(
    root: impl AsRef<Path>,
    style: Style,
    patients: usize,
    slices: usize,
    size: (usize, usize),
    seed: u64,
) -> Result<()> {
    let root = root.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in 0..patients {
        let dir = root.join(format!("p{p:02}"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for s in 0..slices {
            let img = style.draw(size.0, size.1, &mut rng);
            save_image(&img, dir.join(format!("slice_{s:03}.png")))?;
        }
    }
    Ok(())
}
