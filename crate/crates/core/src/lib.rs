//! Massive-MIMO CSI feedback with base-station channel prediction.
//!
//! The base station trains a channel predictor, distils it into an `M x M`
//! predictor function `F`, and sends `F` to the UE. Both ends then predict
//! the channel identically and the UE only feeds back the quantized
//! prediction error. Multiuser schedulers decide which UEs get to report.

pub mod channel;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod multiuser;
pub mod predictors;
pub mod protocol;
pub mod quantizer;

pub use num_complex::Complex64;

pub use channel::{
    generate_ar_trace, load_trace, save_trace, window_trace, ArTraceConfig, ChannelTrace,
    ChannelVector, WindowedSample,
};
pub use error::{Error, Result};
pub use metrics::{cosine_similarity, nmse, precoding_gain, ChannelMatrix};
pub use predictors::{ModelSpec, PredictorModel, TrainConfig};
pub use protocol::{AcquiredChannel, PredictorFunction, Provenance, UpdateVector};
pub use quantizer::{overhead_bits, quantize, Bits, QuantizedVector, QuantizerConfig};
