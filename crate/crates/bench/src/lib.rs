//! Shared fixtures for the benchmarks.

use mvoct_core::phantom::{generate_phantom, GroundTruth, PhantomParams};
use mvoct_core::PolarPullback;

/// A small, fixed phantom segment used by every benchmark.
pub fn bench_segment() -> (PolarPullback, GroundTruth) {
    let params = PhantomParams {
        n_frames: 4,
        alines_per_frame: 64,
        samples_per_aline: 320,
        lumen_radius_mean_px: 80.0,
        vessel_count: 2,
        vessel_radius_px: (4.5, 8.5),
        vessel_min_frames: 3,
        guidewire_width_alines: 8,
        confounder_count: 2,
        ..PhantomParams::default()
    };
    generate_phantom(&params, 7).expect("bench phantom generates")
}
