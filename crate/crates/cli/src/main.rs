use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use shapemask_core::evalkit::{append_reports, InpaintResult};
use shapemask_core::maskgen::IrregularStore;
use shapemask_core::pseg::SegmentManifest;
use shapemask_core::{
    apply_mask, bounded_region, compute_stats, diffusion_inpaint, eval_mask, generate_training_mask,
    load_image, merge_pseudosegments, save_image, seeded_rng, segment, synth, weight_biases, BinaryImage,
    Binarize, EvalMaskKind, GrayImage, LabelMap, MaskPolicy, MaskSource, MetricReport, PipelineConfig,
    Position, Region, RegionConfig, SegParams, Shape,
};

#[derive(Parser)]
#[command(name = "shapemask", version, about = "Shape-aware inpainting masks from pseudo-segments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Over-segment an image into superpixels.
    Segment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        k: f64,
        #[arg(long, default_value_t = 9)]
        min_size: usize,
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
        /// Label map path (16-bit PGM); a `.json` count file is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge superpixels into pseudo-segments and write their manifest.
    Pseudoseg {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        tau: f64,
        /// Output directory for `pseudosegments.pgm` and `segments.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract the bounded region of the organ.
    Region {
        #[arg(long)]
        input: PathBuf,
        /// `otsu`, `fixed:<t>` or a bare threshold.
        #[arg(long, default_value = "otsu")]
        binarize: Binarize,
        #[arg(long, default_value_t = 5)]
        radius: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a training mask.
    Genmask {
        #[arg(long)]
        image: PathBuf,
        /// Pseudo-segment label map.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value = "ops")]
        position: Position,
        #[arg(long, default_value = "ps")]
        shape: Shape,
        #[arg(long, default_value_t = 8)]
        m_max: usize,
        #[arg(long, default_value_t = 2)]
        perturb: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory of stored masks for `--shape irregular`.
        #[arg(long)]
        irregular_dir: Option<PathBuf>,
        #[arg(long, default_value = "otsu")]
        region_binarize: Binarize,
        #[arg(long, default_value_t = 5)]
        region_radius: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate an evaluation mask.
    Evalmask {
        /// `segments` (alias of `segments-ops`), `small-squares` or `large-square`.
        #[arg(long, value_parser = parse_kind)]
        kind: EvalMaskKind,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 8)]
        m_max: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a reconstruction on a mask.
    Metrics {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        rec: PathBuf,
        #[arg(long)]
        roi: PathBuf,
        /// Append the record to this results file.
        #[arg(long)]
        results: Option<PathBuf>,
        #[arg(long, default_value = "image")]
        id: String,
        #[arg(long, default_value = "custom")]
        kind: String,
    },
    /// Fill a masked image with the harmonic diffusion baseline.
    Baseline {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5000)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-2)]
        tol: f64,
        /// Value written into masked pixels before filling.
        #[arg(long, default_value_t = 0)]
        fill: u8,
    },
    /// Run the whole pipeline over a dataset.
    Run {
        /// TOML configuration; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset root laid out as `<root>/<patient>/*.png|*.pgm`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        irregular_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic image corpus.
    Synth {
        /// `phantom` or `blobs`.
        #[arg(long, default_value = "phantom")]
        style: synth::Style,
        #[arg(long, default_value_t = 4)]
        patients: usize,
        #[arg(long, default_value_t = 3)]
        slices: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_kind(s: &str) -> Result<EvalMaskKind, String> {
    if s.eq_ignore_ascii_case("segments") {
        return Ok(EvalMaskKind::SegmentsOps);
    }
    s.parse().map_err(|e: shapemask_core::Error| e.to_string())
}

fn load(path: &Path) -> Result<GrayImage> {
    load_image(path).with_context(|| format!("reading {}", path.display()))
}

fn load_mask(path: &Path) -> Result<BinaryImage> {
    Ok(BinaryImage::from_gray(&load(path)?))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn save(img: &GrayImage, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    save_image(img, path).with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Segment { input, k, min_size, sigma, out } => {
            let img = load(&input)?;
            let labels = segment(&img, &SegParams { k, min_size, sigma })?;
            ensure_parent(&out)?;
            let sidecar = labels.save(&out)?;
            println!("{} segments -> {} ({})", labels.num_segments(), out.display(), sidecar.display());
        }
        Command::Pseudoseg { labels, image, tau, out } => {
            let img = load(&image)?;
            let superpixels = LabelMap::load(&labels)?;
            let stats = compute_stats(&superpixels, &img)?;
            let (set, merged) = merge_pseudosegments(&stats, &superpixels, tau)?;
            let wb = weight_biases(&set)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            merged.save(out.join("pseudosegments.pgm"))?;
            SegmentManifest::new(&set, &wb).write(out.join("segments.json"))?;
            println!("{} superpixels -> {} pseudo-segments", superpixels.num_segments(), set.len());
        }
        Command::Region { input, binarize, radius, out } => {
            let img = load(&input)?;
            let region = bounded_region(&img, &RegionConfig { binarize, radius })?;
            save(&region.mask().to_gray(), &out)?;
            println!("region area {} px", region.area());
        }
        Command::Genmask {
            image,
            labels,
            position,
            shape,
            m_max,
            perturb,
            seed,
            irregular_dir,
            region_binarize,
            region_radius,
            out,
        } => {
            let img = load(&image)?;
            let labels = LabelMap::load(&labels)?;
            let stats = compute_stats(&labels, &img)?;
            let wb = weight_biases(&stats)?;
            let region: Option<Region> = if position == Position::Ibr {
                let cfg = RegionConfig { binarize: region_binarize, radius: region_radius };
                Some(bounded_region(&img, &cfg)?)
            } else {
                None
            };
            let store = irregular_dir.map(IrregularStore::open).transpose()?;
            if shape == Shape::Irregular && store.is_none() {
                bail!("--shape irregular needs --irregular-dir");
            }
            let src = MaskSource::new(&stats, &wb)
                .with_region(region.as_ref())
                .with_irregular(store.as_ref());
            let policy = MaskPolicy { position, shape, m_max, perturb_radius_max: perturb };
            let generated = generate_training_mask(&src, &policy, &mut seeded_rng(seed))?;
            save(&generated.mask.to_gray(), &out)?;
            println!("{} components, {} px masked", generated.components.len(), generated.mask.count());
        }
        Command::Evalmask { kind, image, labels, m_max, seed, out } => {
            let img = load(&image)?;
            let labels = LabelMap::load(&labels)?;
            let stats = compute_stats(&labels, &img)?;
            let wb = weight_biases(&stats)?;
            let src = MaskSource::new(&stats, &wb);
            let generated = eval_mask(kind, &src, m_max, &mut seeded_rng(seed))?;
            save(&generated.mask.to_gray(), &out)?;
            println!("{kind}: {} components, {} px masked", generated.components.len(), generated.mask.count());
        }
        Command::Metrics { reference, rec, roi, results, id, kind } => {
            let reference = load(&reference)?;
            let rec = load(&rec)?;
            let roi = load_mask(&roi)?;
            let report = MetricReport::score(id, kind, ("-", "-"), &reference, &rec, &roi)?;
            println!("psnr_db={:.4} ssim={:.6} roi_pixels={}", report.psnr_db, report.ssim, report.roi_pixels);
            if let Some(path) = results {
                ensure_parent(&path)?;
                append_reports(&path, &[report])?;
            }
        }
        Command::Baseline { image, mask, out, max_iters, tol, fill } => {
            let img = load(&image)?;
            let mask = load_mask(&mask)?;
            let masked = apply_mask(&img, &mask, fill)?;
            let InpaintResult { image, iterations, converged, residual } =
                diffusion_inpaint(&masked, &mask, max_iters, tol)?;
            save(&image, &out)?;
            println!("{iterations} iterations, converged={converged}, residual={residual:.3e}");
        }
        Command::Run { config, dataset, seed, jobs, irregular_dir, out } => {
            let mut cfg = match &config {
                Some(path) => PipelineConfig::load(path)?,
                None => PipelineConfig::default(),
            };
            cfg.dataset = dataset.or(cfg.dataset);
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(jobs) = jobs {
                cfg.jobs = jobs;
            }
            cfg.irregular_dir = irregular_dir.or(cfg.irregular_dir);
            cfg.out = Some(out);
            let summary = shapemask_core::run_pipeline(&cfg)?;
            for k in &summary.kinds {
                println!(
                    "{:<14} images={:<4} mean_psnr_db={:.3} mean_ssim={:.4}",
                    k.mask_kind, k.images, k.mean_psnr_db, k.mean_ssim
                );
            }
            if !summary.failures.is_empty() {
                for (id, msg) in &summary.failures {
                    eprintln!("failed {id}: {msg}");
                }
                eprintln!("{} of {} images failed", summary.failures.len(), summary.images);
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Synth { style, patients, slices, width, height, seed, out } => {
            synth::write_corpus(&out, style, patients, slices, (width, height), seed)?;
            println!("wrote {} images under {}", patients * slices, out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}
