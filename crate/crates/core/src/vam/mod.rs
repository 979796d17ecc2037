//! Visual branch: overlays, VAN backbones and the projection to the fusion
//! embedding.

mod branch;
mod overlay;
mod palette;
mod van;

pub use branch::{Vam, VamConfig, VamMode};
pub use overlay::{box_pixels, draw_overlay, render_overlay};
pub use palette::Palette;
pub use van::{BatchNorm2d, Conv2d, Lka, Van, VanBlock, VanConfig, VanVariant, VAN_STRIDE};
