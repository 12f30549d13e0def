//! Occlusion-aware synthesis: focus evidence, the three fusion masks,
//! refilling of occluded regions and the final blends.

mod focus;
mod fuse;
mod masks;
mod refine;

pub use focus::{focus_measure, FocusMap};
pub use fuse::{fuse_aif, fuse_multifocus, fuse_multifocus_with, MultifocusParams};
pub use masks::{compute_fusion_masks, FusionMaskTriple, MaskParams, MASK_SUM_TOLERANCE};
pub use refine::{refine_occluded, refine_occluded_with, PatchMatch, RefineParams, Refinement};
