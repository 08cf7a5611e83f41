//! Image files and paired datasets.

pub mod dataset;
pub mod io;

pub use dataset::{load_pair_dataset, save_pair_dataset, Dataset, ImagePair, Split};
pub use io::{
    decode_image, encode_png, load_image, load_image_bytes, load_mask, save_image, save_mask,
    BitDepth,
};
