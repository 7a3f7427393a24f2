mod conv;
mod elementwise;
mod gather;
mod linalg;
mod shape;

pub use conv::Conv2dGeometry;
pub use elementwise::{broadcast_shape, BinaryFn, UnaryFn};
pub use gather::RowMix;
