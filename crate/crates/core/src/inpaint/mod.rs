//! Texture-atlas inpainting with partial convolutions that ignore the atlas
//! background.

mod data;
mod loss;
mod net;
mod pconv;
mod train;

pub use data::{generic_image, random_blob_mask, AtlasCorpus, Corpus, CorpusSample, HoleSource};
pub use loss::{gram, loss_inpaint, tv_region, LossOutput, LossTerms, LossWeights};
pub use net::{atlas_to_tensor, composite, residual_black, tensor_to_atlas, unet_inpaint, NEAR_BLACK, InpaintArch, InpaintNet, MaskedImage, StyleExtractor};
pub use pconv::{partial_conv_forward, propagate_background_mask, PartialConvLayer, PconvOutput};
pub use train::{train_inpainter, InpaintTrainConfig, InpaintTrainer, IterLog, Strategy};
