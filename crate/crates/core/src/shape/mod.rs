//! Template-deformation shape completion.
//!
//! An encoder maps a point sample of the (partial) scan to a latent code, and a
//! decoder maps each template vertex together with that code to a deformed
//! position. The initial estimate is then refined by optimizing the code
//! against a directed Chamfer objective on the partial data.

mod model;
mod refine;
mod train;

pub use model::{complete_shape, ShapeArch, ShapeModel, TemplateSpec, TrainingSummary};
pub use refine::{refine_latent, Objective, RefineConfig, RefineMethod, RefineOutcome, RefineProblem};
pub use train::{
    augment_points, train_shape_model, AugmentConfig, EpochLog, ShapeDataset, ShapeTrainConfig,
    ShapeTrainer,
};
