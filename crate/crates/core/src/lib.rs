//! Multi-frame video deblurring: an encoder-decoder network over five-frame
//! stacks, synthetic blur generation from high-framerate footage, frame
//! alignment, training and evaluation.

pub mod align;
pub mod blur;
mod error;
pub mod eval;
pub mod frame;
mod imgproc;
pub mod io;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use frame::{Frame, FrameStack};
