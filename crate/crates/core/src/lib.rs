//! Semantic-payload traffic signal control: a cellular intersection
//! simulator, a DQN controller fed either rendered camera frames or a
//! 20-byte semantic vector, occlusion Shapley saliency over frame tiles, and
//! the payload codecs whose sizes set the communication cost.

pub mod agent;
pub mod error;
pub mod perception;
pub mod semcom;
pub mod sim;
pub mod xai;

pub use error::{Error, Result};
pub use perception::{Image, SemanticVector};
pub use semcom::ObsMode;
pub use sim::{Action, Approach, EpisodeMetrics, Phase, SimConfig, StepOutcome, World};
