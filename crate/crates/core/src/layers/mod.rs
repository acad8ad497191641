//! Hand-differentiated building blocks. Each layer owns [`Slot`]s into a
//! flat parameter vector; `forward` returns whatever `backward` needs and
//! `backward` accumulates into a gradient vector of the same layout.
//!
//! [`Slot`]: crate::params::Slot

pub mod act;
pub mod conv;
pub mod dense;
pub mod lstm;

pub use conv::Conv3x3;
pub use dense::Dense;
pub use lstm::{Lstm, LstmCache};
