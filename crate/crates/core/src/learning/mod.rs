//! Sampling of classification episodes, strategic risk, training of the
//! linear classifier and the analysis formulas that accompany it.

mod analysis;
mod population;
mod risk;
mod train;

pub use analysis::{
    estimate_externality_lipschitz, imperfect_info_check, lipschitz_constants, sample_complexity,
    ImperfectInfoReport, LipschitzConstants, LIPSCHITZ_SAFETY_FACTOR,
};
pub use population::{sample_instance, Dataset, GameTemplate, PopulationModel};
pub use risk::{empirical_risk, per_sample_loss, truthful_loss, truthful_loss_gradient};
pub use train::{train, Mode, TrainConfig, TrainTrace};
