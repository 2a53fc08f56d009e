pub mod disc;
pub mod dpnet;
pub mod feature;
pub mod render;

pub use disc::{DiscConfig, MultiScaleDiscriminator};
pub use dpnet::{decode_iuv, egodp_loss, egodp_predict, DpLoss, DpOutput, DpScore, EgoDPNet, EgoDpConfig};
pub use feature::{FeatureNetConfig, FrameFeatureNet};
pub use render::{RenderNet, RenderNetConfig};
