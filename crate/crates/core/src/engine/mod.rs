//! A differentiable toy denoiser and the attention-guided sampler.

mod model;
mod sampler;
mod schedule;

pub use model::{checksum, ModelDims, ToyModel};
pub use sampler::{
    guidance_step, sample, GuidanceConfig, GuidanceTrace, LatentState, SampleOutput, StepRecord,
    DEFAULT_GRAD_CLIP, DEFAULT_INTERVENTION_STEPS, DEFAULT_STEPS, DEFAULT_STEP_SIZE,
};
pub use schedule::{NoiseSchedule, BETA_END, BETA_START};
