//! Actor, critic and std-critic networks, their losses and the Adam optimizer.

mod adam;
mod checkpoint;
mod losses;
mod mlp;
mod rollout;
mod sample;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{Checkpoint, LayerRecord, NetworkRecord, OutputRecord, CHECKPOINT_FORMAT};
pub use losses::{actor_loss, critic_loss, std_critic_loss, value_targets, ActorLossOutput, Bootstrap, LossOutput};
pub use mlp::{augment, augment_batch, Activation, Gradients, Layer, MlpParams, OutputMap};
pub use rollout::{actor_rollout, actor_rollout_batch};
pub use sample::TOSample;
