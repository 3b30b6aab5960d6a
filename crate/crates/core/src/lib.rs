//! Shape-aware inpainting masks from superpixel pseudo-segments.
//!
//! The pipeline over-segments a grayscale slice ([`felz`]), merges
//! superpixels into pseudo-segments and weights them by inverse size
//! ([`pseg`]), finds the organ's bounded region ([`region`]), and samples
//! masks whose position and shape follow the pseudo-segments ([`maskgen`]).
//! [`evalkit`] fills masked images with a harmonic baseline and scores them
//! on the masked region; [`pipeline`] runs the whole thing over a dataset.

pub mod error;
pub mod evalkit;
pub mod felz;
pub mod imgio;
pub mod maskgen;
pub mod pipeline;
pub mod pseg;
pub mod region;
pub mod synth;
pub mod unionfind;

pub use error::{Error, Result};
pub use evalkit::{apply_mask, diffusion_inpaint, psnr, ssim, MetricReport};
pub use felz::{segment, LabelMap, SegParams};
pub use imgio::{gaussian_blur, load_image, save_image, FloatImage, GrayImage};
pub use maskgen::{
    eval_mask, generate_training_mask, EvalMaskKind, GeneratedMask, Mask, MaskPolicy, MaskSource,
    Position, Shape,
};
pub use pipeline::{derive_seed, run_pipeline, seeded_rng, split_patients, PipelineConfig};
pub use pseg::{compute_stats, merge_pseudosegments, weight_biases, PseudoSegment, PseudoSegmentSet, WeightBias};
pub use region::{bounded_region, BinaryImage, Binarize, Region, RegionConfig};
