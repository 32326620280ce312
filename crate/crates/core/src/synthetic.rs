//! Seeded synthetic surfaces and ladders for studies and property checks.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{MockCodec, MockCodecConfig, MockConstants, MockContentParams, SequenceSource};
use crate::model::{BitrateLadder, EncodingRecipe, RDPoint, RDSurface};
use crate::orchestrator::{assemble_surface, execute_plan, plan_jobs, probe_bounds, OrchestratorError};

/// Surface with random qualities on a half-point grid (so exact ties occur)
/// and each `(resolution, bitrate)` pair dropped with probability
/// `exclusion_prob`. Every bitrate keeps at least one point.
pub fn random_surface(seed: u64, recipe: &EncodingRecipe, exclusion_prob: f64) -> RDSurface {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nb, nr) = (recipe.num_bitrates(), recipe.num_resolutions());
    let mut points = Vec::new();
    for i in 0..nb {
        let keep_one = rng.random_range(0..nr);
        for j in 0..nr {
            let excluded = rng.random_bool(exclusion_prob);
            let quality = rng.random_range(0..=200) as f64 / 2.0;
            let jitter = rng.random_range(0.95..1.05);
            if excluded && j != keep_one {
                continue;
            }
            let target = recipe.target_bitrates_kbps[i];
            points.push(RDPoint {
                resolution: recipe.resolutions[j],
                target_bitrate_kbps: target,
                actual_bitrate_kbps: target as f64 * jitter,
                quality,
            });
        }
    }
    RDSurface::from_points(format!("random-{seed}"), "vmaf", recipe, points).expect("valid synthetic surface")
}

/// Surface from the mock model on the full `R×B` grid, no probe bounds.
pub fn mock_grid_surface(
    sequence_id: &str,
    params: &MockContentParams,
    constants: &MockConstants,
    recipe: &EncodingRecipe,
) -> RDSurface {
    let points = recipe
        .resolutions
        .iter()
        .flat_map(|&r| {
            recipe.target_bitrates_kbps.iter().map(move |&b| RDPoint {
                resolution: r,
                target_bitrate_kbps: b,
                actual_bitrate_kbps: b as f64,
                quality: crate::codec::mock_quality(params, constants, r, b as f64),
            })
        })
        .collect();
    RDSurface::from_points(sequence_id, "vmaf", recipe, points).expect("valid mock surface")
}

/// Runs the two-step pipeline (probe, plan, encode) on the mock codec.
pub fn mock_two_step_surface(
    sequence_id: &str,
    params: &MockContentParams,
    constants: &MockConstants,
    recipe: &EncodingRecipe,
) -> Result<RDSurface, OrchestratorError> {
    let mut config = MockCodecConfig { constants: *constants, ..Default::default() };
    config.sequences.insert(sequence_id.to_string(), *params);
    let codec = MockCodec::new(config);
    let source = mock_source(sequence_id);
    let bounds = probe_bounds(&source, recipe, &codec)?;
    let jobs = plan_jobs(sequence_id, &bounds, recipe)?;
    let sources = BTreeMap::from([(sequence_id.to_string(), source)]);
    let report = execute_plan(&jobs, &sources, &codec, 1, None)?;
    report.check()?;
    assemble_surface(sequence_id, "vmaf", recipe, &report.results)
}

/// Manifest entry for a mock sequence at 1080p.
pub fn mock_source(sequence_id: &str) -> SequenceSource {
    SequenceSource {
        sequence_id: sequence_id.to_string(),
        path: format!("mock://{sequence_id}").into(),
        width: 1920,
        height: 1080,
        fps: 24.0,
        frames: None,
    }
}

/// Ladder choosing, at each bitrate, a uniformly random resolution among
/// those with a point in the surface.
pub fn random_resolvable_ladder(seed: u64, surface: &RDSurface, recipe: &EncodingRecipe) -> BitrateLadder {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices: Vec<usize> = recipe
        .target_bitrates_kbps
        .iter()
        .map(|&b| {
            let options: Vec<usize> = (0..recipe.num_resolutions())
                .filter(|&j| surface.lookup(recipe.resolutions[j], b).is_some())
                .collect();
            options[rng.random_range(0..options.len())]
        })
        .collect();
    BitrateLadder::from_indices(recipe, &indices).expect("valid ladder")
}

/// Mock content drawn from the study distribution: complexity log-uniform
/// in `[0.25, 4]`, sharpness uniform in `[0, 100]`.
pub fn sample_content(rng: &mut impl Rng, noise_scale: f64) -> MockContentParams {
    let complexity = (rng.random_range(0.25f64.ln()..4.0f64.ln())).exp();
    let sharpness = rng.random_range(0.0..100.0);
    MockContentParams { complexity, sharpness, noise_scale, seed: rng.random() }
}
