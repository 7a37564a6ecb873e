//! Lesion correspondence across readers, image series and timepoints.

// `!(x > y)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evaluation;
pub mod io;
pub mod matching;
pub mod model;
pub mod pipeline;
pub mod registration;
pub mod synth;
pub mod track;
pub mod viz;

pub use error::{Error, Result};
pub use model::{AnnotationKey, LesionAnnotation, LesionClass, Point3, Volume};
pub use registration::{register, RegistrationConfig, RegistrationResult, RigidTransform};
pub use track::{Cluster, LesionTrack, Observation, TrackName, TrackRegistry};
