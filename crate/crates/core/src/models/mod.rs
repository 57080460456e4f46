//! Generator, discriminator and frozen feature network, built from a small
//! layer vocabulary with explicit backward passes.

pub mod check;
mod discriminator;
mod feature;
mod generator;
pub mod layers;
mod params;

pub use discriminator::{
    build_discriminator, discriminator_forward, Discriminator, DiscriminatorConfig,
    DiscriminatorTape,
};
pub use feature::{
    build_feature_extractor, feature_forward, FeatureExtractor, FeatureExtractorConfig,
    FeatureSource, FeatureTape,
};
pub use generator::{
    build_generator, generator_forward, super_resolve, Generator, GeneratorConfig, GeneratorTape,
};
pub use layers::{BackwardOpts, Layer};
pub use params::{param_count, ModelParams};
