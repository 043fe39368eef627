//! Full-image hallucination: translation, tiled mask interpolation, stitching
//! and compositing.

mod hallucinate;
mod tiles;

pub use hallucinate::{
    exclude_foreground, hallucinate, CompositeMode, Hallucination, InferenceConfig, MaskSource, Prepared,
    TranslatorBundle,
};
pub use tiles::{make_tile_plan, stitch_images, stitch_masks, TilePlan};
