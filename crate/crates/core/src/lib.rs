//! Progressive population based augmentation (PPBA): a population search
//! over schedules of point-cloud augmentation parameters, the augmentation
//! operations it tunes, baselines, and a desk-scale benchmark harness.

pub mod augment;
pub mod engine;
pub mod geom;
pub mod harness;
pub mod protocol;
pub mod rng;
pub mod space;
