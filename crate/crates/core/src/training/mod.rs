//! Losses, operator initialisation and joint training.

pub mod augment;
pub mod init;
pub mod joint;
pub mod losses;

pub use augment::{augment, Transform};
pub use init::{
    build_init_corpus, init_losses, init_model_operators, prepare_init_sources, strength_levels,
    train_init, InitConfig, InitCorpus, InitLosses, InitReport,
};
pub use joint::{
    pipeline_forward, pipeline_loss, pipeline_loss_and_grad, train_joint, InitMode, TrainConfig,
    TrainReport,
};
pub use losses::{
    hrp_weights, loss_color, loss_color_grad, loss_reconstruction, loss_reconstruction_grad,
    loss_total, loss_total_grad, loss_tv, loss_tv_grad, LossBreakdown, LossTerms, LossWeights,
};
