//! Raster images and the individual transformation policies.

mod geometry;
mod ops;
mod policy;
mod ppm;
mod raster;

pub use geometry::{
    horizontal_flip, random_resized_crop, random_resized_crop_with, resized_crop, rotate, shear_x,
    shear_y, translate_x, translate_y, CropParams, FILL,
};
pub use ops::{
    apply_named, apply_policy, auto_contrast, brightness, color, contrast, cutout, equalize,
    invert, posterize, sharpness, solarize, solarize_add,
};
pub use policy::{
    convert_amplitude, lookup_policy, policy_spec, AmplitudeMode, PolicyName, PolicySpec,
    FIXED_SCALE_MAX, POLICY_TABLE,
};
pub use ppm::{decode_ppm, encode_ppm, load_ppm, save_ppm};
pub use raster::{Raster, MIN_SIDE};
