pub mod decoder;
pub mod distance;
pub mod error;
pub mod gradsuite;
pub mod io;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod params;
pub mod synthdata;
pub mod tensor;
pub mod wsss;

pub use error::{Error, Result};
pub use labels::{LabelMap, PseudoLabel, IGNORE};
pub use params::ParamStore;
pub use tensor::{Graph, Tensor, Var};
