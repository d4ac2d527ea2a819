//! Parameter containers, dense layers and the Adam optimiser.

mod adam;
mod linear;
mod params;

pub use adam::{Adam, AdamConfig};
pub use linear::{Init, Linear, SplitLinear};
pub use params::{normal_tensor, Bound, ParamId, ParamSet};
