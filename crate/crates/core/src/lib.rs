//! Data synthesis, text-image translation orchestration and evaluation for
//! two-stage in-image translation.

pub mod corpus;
pub mod eval;
pub mod font;
pub mod geom;
pub mod raster;
pub mod render;
pub mod stage1;
pub mod style;

pub use corpus::{ImagePair, LangPair, TextPair};
pub use geom::TextBox;
pub use raster::Raster;
pub use style::StyleSpec;
