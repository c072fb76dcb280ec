//! Decoupling, simulation and model reduction of nonlinear index-1
//! descriptor systems, with a gas-network model as the main application.

pub mod decouple;
pub mod error;
pub mod gasnet;
pub mod integrate;
pub mod io;
pub mod mor;
pub mod nonlinear;
pub mod pencil;
pub mod scalar;
pub mod sparse;
pub mod system;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type CsrMatrixF64 = sparse::CsrMatrix<f64>;
pub type CsrMatrixF32 = sparse::CsrMatrix<f32>;
pub type DescriptorSystemF64 = system::DescriptorSystem<f64>;
pub type DescriptorSystemF32 = system::DescriptorSystem<f32>;
pub type DecoupledSystemF64 = decouple::DecoupledSystem<f64>;
pub type DecoupledSystemF32 = decouple::DecoupledSystem<f32>;
pub type ProjectorChainF64 = pencil::ProjectorChain<f64>;
pub type ProjectorChainF32 = pencil::ProjectorChain<f32>;
pub type TrajectoryF64 = integrate::Trajectory<f64>;
