pub mod channel;
pub mod codec;
pub mod error;
pub mod harness;
pub mod harq;
pub mod link;
pub mod nnkit;
pub mod ofdm;
pub mod rxdsp;
pub mod scalar;
pub mod scenegen;
pub mod seed;
pub mod simcrc;
pub mod stats;
pub mod tensors;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision instances of the generic types.
pub type Cplx = num_complex::Complex<f64>;
pub type Feature = tensors::FeatureTensor<f64>;
pub type Grid = ofdm::ResourceGrid<f64>;
pub type Net = nnkit::DenseNet<f64>;
pub type Codec = codec::SemanticCodec<f64>;
pub type Realization = channel::ChannelRealization<f64>;
pub type Estimate = rxdsp::ChannelEstimate<f64>;
