//! On-disk formats, loaders and the synthetic dataset generator.

mod annotations;
mod features;
mod scores;
mod synth;

pub(crate) use annotations::OrderedEntries;
pub use annotations::{load_annotations, save_annotations, AnnotationSet, Instance, Subset, VideoAnnotation};
pub(crate) use features::{lerp_coords, resample_position};
pub use features::{load_features, rescale_features, save_features, FeatureSequence, FEATURE_MAGIC, FEATURE_VERSION};
pub use scores::{load_class_scores, save_class_scores, ClassScore, ClassScores};
pub use synth::{class_name, synth_dataset, SynthConfig, SynthDataset};
