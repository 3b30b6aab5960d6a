//! Batch orchestration: dataset scanning, patient-level split, per-image
//! seeding, configuration, and the segment → merge → mask → fill → score run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{apply_mask, diffusion_inpaint, MetricReport, RESULTS_HEADER};
use crate::felz::{segment, SegParams};
use crate::imgio::{load_image, save_image};
use crate::maskgen::{eval_mask, generate_training_mask, EvalMaskKind, IrregularStore, MaskPolicy, MaskSource, Position, Shape};
use crate::pseg::{compute_stats, merge_pseudosegments, weight_biases, SegmentManifest};
use crate::region::{bounded_region, Binarize, RegionConfig};

/// Random stream used for every seeded step.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the id bytes, XOR the master seed, then one SplitMix64
/// finalizer round.
pub fn derive_seed(master: u64, id: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in id.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    let mut z = h ^ master;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

/// Shuffles the distinct patient ids with `seed` and assigns the first
/// `round(ratio * P)` to training.
pub fn split_patients(patients: &[String], ratio: f64, seed: u64) -> Result<BTreeMap<String, Split>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train ratio must be in (0, 1), got {ratio}"
        )));
    }
    let mut ids: Vec<String> = patients.to_vec();
    ids.sort();
    ids.dedup();
    if ids.is_empty() {
        return Err(Error::NoPatients);
    }
    ids.shuffle(&mut seeded_rng(seed));
    let n_train = (ratio * ids.len() as f64).round() as usize;
    Ok(ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, if i < n_train { Split::Train } else { Split::Eval }))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetEntry {
    pub patient_id: String,
    /// `<patient_id>/<file stem>`.
    pub image_id: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<DatasetEntry>,
    pub split: BTreeMap<String, Split>,
}

impl DatasetManifest {
    pub fn split_of(&self, entry: &DatasetEntry) -> Split {
        self.split[&entry.patient_id]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("patient_id,image_id,split\n");
        for e in &self.entries {
            s.push_str(&format!("{},{},{}\n", e.patient_id, e.image_id, self.split_of(e).as_str()));
        }
        s
    }
}

fn is_image(path: &Path) -> bool {
    path.is_file()
        && matches!(
            path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
            Some("png" | "pgm")
        )
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// Lists `<root>/<patient_id>/*.png|*.pgm` in path order.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<Vec<DatasetEntry>> {
    let root = root.as_ref();
    let mut entries = Vec::new();
    for patient_dir in sorted_dir(root)?.into_iter().filter(|p| p.is_dir()) {
        let patient_id = patient_dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Config(format!("non UTF-8 patient dir {}", patient_dir.display())))?
            .to_string();
        for path in sorted_dir(&patient_dir)?.into_iter().filter(|p| is_image(p)) {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Config(format!("non UTF-8 file name {}", path.display())))?;
            entries.push(DatasetEntry {
                image_id: format!("{patient_id}/{stem}"),
                patient_id: patient_id.clone(),
                path,
            });
        }
    }
    Ok(entries)
}

pub fn build_manifest(root: impl AsRef<Path>, ratio: f64, seed: u64) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let entries = scan_dataset(root)?;
    if entries.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }
    let patients: Vec<String> = entries.iter().map(|e| e.patient_id.clone()).collect();
    let split = split_patients(&patients, ratio, seed)?;
    Ok(DatasetManifest { entries, split })
}

/// Which images receive evaluation masks and metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalScope {
    EvalSplit,
    All,
}

/// Flat run configuration. Every key is optional in a config file; missing
/// keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(skip_serializing)]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub jobs: usize,
    #[serde(skip_serializing)]
    pub irregular_dir: Option<PathBuf>,

    pub seed: u64,
    pub k: f64,
    pub min_size: usize,
    pub sigma: f64,
    pub tau: f64,

    pub position: Position,
    pub shape: Shape,
    pub m_max: usize,
    pub perturb: usize,

    pub eval_kinds: Vec<EvalMaskKind>,
    pub eval_m_max: usize,
    pub evaluate: EvalScope,
    pub train_ratio: f64,

    pub region_binarize: Binarize,
    pub region_radius: usize,

    pub fill: u8,
    pub inpaint_max_iters: usize,
    pub inpaint_tol: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let seg = SegParams::default();
        let policy = MaskPolicy::default();
        let region = RegionConfig::default();
        PipelineConfig {
            dataset: None,
            out: None,
            jobs: 1,
            irregular_dir: None,
            seed: 0,
            k: seg.k,
            min_size: seg.min_size,
            sigma: seg.sigma,
            tau: 10.0,
            position: policy.position,
            shape: policy.shape,
            m_max: policy.m_max,
            perturb: policy.perturb_radius_max,
            eval_kinds: EvalMaskKind::ALL.to_vec(),
            eval_m_max: policy.m_max,
            evaluate: EvalScope::EvalSplit,
            train_ratio: 0.75,
            region_binarize: region.binarize,
            region_radius: region.radius,
            fill: 0,
            inpaint_max_iters: 5000,
            inpaint_tol: 1e-2,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Algorithm parameters only (paths and worker count are omitted so the
    /// text depends on nothing but the run's semantics).
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn seg_params(&self) -> SegParams {
        SegParams {
            k: self.k,
            min_size: self.min_size,
            sigma: self.sigma,
        }
    }

    pub fn policy(&self) -> MaskPolicy {
        MaskPolicy {
            position: self.position,
            shape: self.shape,
            m_max: self.m_max,
            perturb_radius_max: self.perturb,
        }
    }

    pub fn region_config(&self) -> RegionConfig {
        RegionConfig {
            binarize: self.region_binarize,
            radius: self.region_radius,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.seg_params().validate()?;
        self.policy().validate()?;
        if !(self.tau >= 0.0) {
            return Err(Error::Config(format!("tau must be >= 0, got {}", self.tau)));
        }
        if self.eval_m_max < 1 {
            return Err(Error::Config("eval_m_max must be >= 1".into()));
        }
        if self.jobs < 1 {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        if !(self.inpaint_tol > 0.0) {
            return Err(Error::Config("inpaint_tol must be > 0".into()));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(Error::Config("train_ratio must be in (0, 1)".into()));
        }
        if self.shape == Shape::Irregular && self.irregular_dir.is_none() {
            return Err(Error::Config("shape = \"irregular\" needs irregular_dir".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KindSummary {
    pub mask_kind: String,
    pub images: usize,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub images: usize,
    pub reports: Vec<MetricReport>,
    pub kinds: Vec<KindSummary>,
    pub failures: Vec<(String, String)>,
}

/// Label written next to every summary row: these scores come from the
/// harmonic filler, not a learned inpainter.
pub const FILLER_LABEL: &str = "baseline-diffusion";

pub fn summarize(reports: &[MetricReport], kinds: &[EvalMaskKind]) -> Vec<KindSummary> {
    kinds
        .iter()
        .filter_map(|k| {
            let rows: Vec<&MetricReport> = reports.iter().filter(|r| r.mask_kind == k.as_str()).collect();
            if rows.is_empty() {
                return None;
            }
            let n = rows.len() as f64;
            Some(KindSummary {
                mask_kind: k.as_str().to_string(),
                images: rows.len(),
                mean_psnr_db: rows.iter().map(|r| r.psnr_db).sum::<f64>() / n,
                mean_ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
            })
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn process_image(
    entry: &DatasetEntry,
    split: Split,
    cfg: &PipelineConfig,
    store: Option<&IrregularStore>,
    out_root: &Path,
) -> Result<Vec<MetricReport>> {
    let dir = out_root.join("images").join(&entry.image_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let image_seed = derive_seed(cfg.seed, &entry.image_id);

    let img = load_image(&entry.path)?;
    let superpixels = segment(&img, &cfg.seg_params())?;
    superpixels.save(dir.join("superpixels.pgm"))?;
    let stats = compute_stats(&superpixels, &img)?;
    let (set, labels) = merge_pseudosegments(&stats, &superpixels, cfg.tau)?;
    labels.save(dir.join("pseudosegments.pgm"))?;
    let wb = weight_biases(&set)?;
    SegmentManifest::new(&set, &wb).write(dir.join("segments.json"))?;

    let region = match bounded_region(&img, &cfg.region_config()) {
        Ok(r) => {
            save_image(&r.mask().to_gray(), dir.join("region.png"))?;
            Some(r)
        }
        Err(Error::EmptyRegion) if cfg.position != Position::Ibr => None,
        Err(e) => return Err(e),
    };
    let src = MaskSource::new(&set, &wb)
        .with_region(region.as_ref())
        .with_irregular(store);

    if split == Split::Train {
        let mut rng = seeded_rng(derive_seed(image_seed, "train"));
        let generated = generate_training_mask(&src, &cfg.policy(), &mut rng)?;
        save_image(&generated.mask.to_gray(), dir.join("train_mask.png"))?;
    }

    let mut reports = Vec::new();
    if split == Split::Eval || cfg.evaluate == EvalScope::All {
        for kind in &cfg.eval_kinds {
            let mut rng = seeded_rng(derive_seed(image_seed, kind.as_str()));
            let generated = eval_mask(*kind, &src, cfg.eval_m_max, &mut rng)?;
            let mask = generated.mask;
            save_image(&mask.to_gray(), dir.join(format!("eval_{kind}_mask.png")))?;
            let masked = apply_mask(&img, &mask, cfg.fill)?;
            let filled = diffusion_inpaint(&masked, &mask, cfg.inpaint_max_iters, cfg.inpaint_tol)?;
            save_image(&filled.image, dir.join(format!("eval_{kind}_baseline.png")))?;
            reports.push(MetricReport::score(
                entry.image_id.clone(),
                kind.as_str(),
                kind.layout(),
                &img,
                &filled.image,
                &mask,
            )?);
        }
    }
    Ok(reports)
}

/// Runs every image of the dataset and writes, under `cfg.out`:
///
/// * `params.toml`: the resolved algorithm parameters,
/// * `manifest.csv`: patient split,
/// * `images/<patient>/<stem>/…`: label maps, pseudo-segment manifest,
///   region and masks, baseline fills,
/// * `results.csv`, `summary.csv`, `failures.csv`.
///
/// Images run in parallel on `cfg.jobs` workers; results are gathered in
/// dataset order and written by this thread, so the output tree does not
/// depend on the worker count.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let dataset = cfg.dataset.as_ref().ok_or_else(|| Error::Config("dataset path not set".into()))?;
    let out = cfg.out.as_ref().ok_or_else(|| Error::Config("output directory not set".into()))?;
    let manifest = build_manifest(dataset, cfg.train_ratio, cfg.seed)?;
    let store = cfg.irregular_dir.as_ref().map(IrregularStore::open).transpose()?;

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_text(&out.join("params.toml"), &cfg.to_toml())?;
    write_text(&out.join("manifest.csv"), &manifest.to_csv())?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let outcomes: Vec<Result<Vec<MetricReport>>> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|e| process_image(e, manifest.split_of(e), cfg, store.as_ref(), out))
            .collect()
    });

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (entry, outcome) in manifest.entries.iter().zip(outcomes) {
        match outcome {
            Ok(r) => reports.extend(r),
            Err(e) => failures.push((entry.image_id.clone(), e.to_string())),
        }
    }

    let mut results = String::from(RESULTS_HEADER);
    results.push('\n');
    for r in &reports {
        results.push_str(&r.to_csv_row());
        results.push('\n');
    }
    write_text(&out.join("results.csv"), &results)?;

    let kinds = summarize(&reports, &cfg.eval_kinds);
    let mut summary = String::from("mask_kind,filler,images,mean_psnr_db,mean_ssim\n");
    for k in &kinds {
        summary.push_str(&format!(
            "{},{},{},{:?},{:?}\n",
            k.mask_kind, FILLER_LABEL, k.images, k.mean_psnr_db, k.mean_ssim
        ));
    }
    write_text(&out.join("summary.csv"), &summary)?;

    let mut fail_text = String::from("image_id,error\n");
    for (id, msg) in &failures {
        fail_text.push_str(&format!("{id},\"{}\"\n", msg.replace('"', "'")));
    }
    write_text(&out.join("failures.csv"), &fail_text)?;

    Ok(RunSummary {
        images: manifest.entries.len(),
        reports,
        kinds,
        failures,
    })
}
