//! Pixelwise color operators: the learned [`NeurOp`] and the analytic
//! [`StandardOpKind`] adjustments used to initialise it.

mod neurop;
mod standard;

pub use neurop::{NeurOp, NeurOpCache, PIXEL_CHUNK};
pub use standard::{standard_op_apply, StandardOpKind, BLACK_POINT_SCALE, EXPOSURE_STOPS};
