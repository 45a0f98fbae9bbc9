//! Fixtures shared by the benchmarks.

use gpconv::analysis::DesignSet;
use gpconv::experiments::{builtin_figure, ModelSpec};
use gpconv::{KernelSpec, TrainingData};

/// Kernel of a built-in figure study.
pub fn figure_kernel(id: &str) -> KernelSpec {
    match builtin_figure(id).map(|c| c.kernel) {
        Some(ModelSpec::Gp(k)) => k,
        _ => panic!("no GP figure named {id}"),
    }
}

/// Uniform design on (0, 5) as point vectors.
pub fn points(n: usize) -> Vec<Vec<f64>> {
    DesignSet::uniform((0.0, 5.0), n).expect("positive n").as_vectors()
}

/// Noise-free samples of sin(2u) on a uniform design.
pub fn sine_data(n: usize) -> TrainingData {
    let d = DesignSet::uniform((0.0, 5.0), n).expect("positive n");
    let ys = d.points().iter().map(|u| (2.0 * u).sin()).collect();
    TrainingData::from_1d(d.points(), ys, 0.0).expect("valid data")
}
