//! Fixtures shared by the benchmarks.

use refocus_core::backends::sim::{SimConfig, SimSuite};
use refocus_core::scoring::Candidate;
use refocus_core::{BBox, HybridScore, Layout, ObjectSpec, PipelineConfig};

/// A layout of `n` overlapping boxes on a diagonal, so repair has work to do.
pub fn crowded_layout(n: usize) -> Layout {
    let objects = (0..n)
        .map(|i| {
            let t = i as f64 / n.max(1) as f64;
            let x0 = 0.05 + 0.5 * t;
            ObjectSpec::new(
                format!("object{i}"),
                String::new(),
                BBox::new(x0, x0, (x0 + 0.35).min(1.0), (x0 + 0.3).min(1.0)),
            )
        })
        .collect();
    Layout::new("bench", objects)
}

/// `n` scored candidates with repeating scores, so ties occur.
pub fn scored_pool(n: usize) -> Vec<Candidate> {
    let image = image::RgbImage::new(64, 64);
    (0..n)
        .map(|i| {
            let combined = ((i * 7919) % 97) as f64 / 97.0;
            Candidate::draft(image.clone(), i as u64)
                .expect("64 px is a valid side")
                .with_score(HybridScore {
                    scene: combined,
                    object: None,
                    lambda_used: 1.0,
                    combined,
                })
        })
        .collect()
}

pub fn sim_suite() -> SimSuite {
    SimSuite::new(SimConfig::default())
}

pub fn small_config(seed: u64) -> PipelineConfig {
    PipelineConfig {
        base_seed: seed,
        width: 128,
        height: 128,
        ..PipelineConfig::default()
    }
}
