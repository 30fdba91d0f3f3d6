//! Procedural rubble piles: layered deposition with rigid-body settling,
//! ground-truth void analysis, ray-cast RGB-D rendering under fog and dust,
//! dataset export and SfM trajectory scoring.

pub mod assets;
pub mod bench;
pub mod camera;
pub mod config;
pub mod deposition;
pub mod export;
pub mod render;
pub mod voids;

pub use assets::{AssetClass, Catalog};
pub use config::SimConfig;
pub use deposition::{build_pile, Pile};
