//! Daily behavioural features from phone sensor logs, significant-place
//! clustering, and weekly PHQ-9 regression with a small LSTM.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod geo;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use features::{DailyFeatures, FeatureGroup, FEATURE_NAMES, N_FEATURES};
pub use geo::{Algorithm, ClusterParams, GeoPoint, SignificantPlaces};
pub use types::{
    AppEvent, CallDirection, CallEvent, GpsFix, LockEvent, PhqObservation, SensorLog, SubjectId, Timestamp,
    UsageSession,
};
