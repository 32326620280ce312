//! Ground-truth bitrate ladders for per-title encoding.
//!
//! The pipeline probes each resolution at two constant QPs to bound the
//! useful bitrate range, runs rate-controlled encodes inside those bounds,
//! assembles an RD surface per sequence, and labels each preset bitrate with
//! the resolution of highest quality. Bjøntegaard deltas compare any ladder
//! against that per-bitrate envelope.

pub mod bd;
pub mod codec;
pub mod evaluation;
pub mod files;
pub mod hull;
pub mod model;
pub mod orchestrator;
pub mod seed;
pub mod synthetic;

pub use model::{
    surface_lookup, validate_recipe, BDResult, BitrateLadder, EncodingRecipe, LadderEntry, ModelError, RDCurve,
    RDPoint, RDSurface, RecipeReport, RecipeViolation, Resolution,
};
