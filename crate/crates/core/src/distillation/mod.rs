//! Oracle 2D editors, triplet collection, the distillation trainers and
//! diffusion samplers over pluggable noise predictors.

mod dataset;
mod gradcheck;
mod oracle;
mod schedule;
mod toy;
mod train;

pub use dataset::{
    collect_triplets, CollectConfig, Dataset, Manifest, NoiseShape, PairRecord, SkipRecord, Triplet, TripletFilter,
    TripletRecord, MANIFEST_VERSION,
};
pub use gradcheck::{
    check_din_gradients, check_render_gradients, din_check_fixture, run_gradient_checks, DinCheckFixture, GradCheckLine,
    RENDER_CHECK_STEP,
};
pub use oracle::{
    apply_action, map_splat_colors, sigmoid, EditAction, EditorKind, FlowMode, OracleEditor, OracleRegistry, GOLD, LUMA,
};
pub use schedule::{ddim_sample, ddim_step, ddpm_edit_replay, ddpm_invert, Inversion, NoisePredictor, NoiseSchedule};
pub use toy::{toy_scene, CameraOrbit};
pub use train::{
    din_loss, din_loss_and_gradients, evaluate, predicted_render, train_din, train_sds, EpochHook, EpochRecord,
    EvalReport, ExactNoiseTeacher, LossKind, SdsConfig, SdsReport, SdsSample, SdsTeacher, TrainConfig, TrainReport,
};
