//! Layer graphs, the built-in architectures, parameters and execution.

mod exec;
mod params;
mod spec;
mod zoo;

pub use exec::{ForwardCache, ForwardOptions, Model};
pub use params::{param_slots, Gradients, Param, ParamRole, ParamSlot, ParamStore};
pub use spec::{LayerKind, LayerSpec, ModelPlan, ModelSpec, Projection, ResolvedSkip, SkipEdge};
pub use zoo::{
    build_exp2_bncnn, build_exp2_bncnn_with, build_exp3_model, build_exp3_model_with,
    build_exp4_proposed, build_exp4_proposed_with, count_parameters, exp4_min_input, Architecture,
    Crop, Exp2Options, Exp3Options, Exp3Variant, Exp4Options, DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM,
    DEFAULT_DROPOUT, DEFAULT_L2_LAMBDA,
};
