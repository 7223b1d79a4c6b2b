//! Conditional generator that turns brain maps into MR slices.

pub mod config;
pub mod losses;
pub mod networks;
pub mod synth;
pub mod train;

pub use config::{AugConfig, AugTrainingConfig, DiscriminatorConfig, ExtractorConfig, GeneratorConfig, LossWeights};
pub use losses::{
    adversarial_from_logits, adversarial_loss, pixel_loss, perceptual_loss, rebalance_weights, total_generator_loss,
    TermMeans,
};
pub use networks::{generate, FeatureExtractor, Generator, PatchDiscriminator, FEATURE_LAYERS};
pub use synth::{brain_masked, paired_ssim, synthesize_case, synthesize_dataset, SynthesisRequest, TransformEntry};
pub use train::{generator_terms, GeneratorTerms, train_augnet, train_pairs, training_pairs, AugCheckpoint, LossHistory, StepRecord, TrainingPair};
