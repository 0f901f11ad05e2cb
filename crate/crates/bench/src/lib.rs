//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use segfb_core::profiles::half_plane;
use segfb_core::solver::BoundaryData;
use segfb_core::{Configuration, ExtensionGrid, Mode};

pub fn unit_box(h: f64) -> Arc<ExtensionGrid> {
    Arc::new(ExtensionGrid::cube(2, 1.0, 1.0, h).expect("h divides the unit box"))
}

pub fn exact_pair(h: f64) -> Configuration {
    let fs = [|x: &[f64]| half_plane(x[1], x[2]), |x: &[f64]| half_plane(-x[1], x[2])];
    Configuration::from_fns(unit_box(h), &fs, Mode::Segregated)
}

pub fn pair_boundary(h: f64) -> BoundaryData {
    let fs = [|x: &[f64]| half_plane(x[1], x[2]), |x: &[f64]| half_plane(-x[1], x[2])];
    BoundaryData::from_fns(unit_box(h), &fs).expect("segregated boundary data")
}
