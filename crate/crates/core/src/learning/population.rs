use rand::distributions::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::game::{
    CostModel, Externality, ExternalityModel, FeatureMatrix, GainFunction, GameInstance,
    LabelVector,
};

/// Two Gaussian blobs clipped to the unit box, and a distribution over the
/// number of participating agents.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationModel {
    mean_pos: Vec<f64>,
    mean_neg: Vec<f64>,
    stddev: f64,
    pos_fraction: f64,
    /// Weight of `k = 1, ..., k_max`, normalised to sum to one.
    k_weights: Vec<f64>,
}

impl PopulationModel {
    pub fn new(
        mean_pos: Vec<f64>,
        mean_neg: Vec<f64>,
        stddev: f64,
        pos_fraction: f64,
        k_weights: Vec<f64>,
    ) -> Result<Self> {
        if mean_pos.is_empty() || mean_pos.len() != mean_neg.len() {
            return Err(Error::Config("class means must be nonempty and of equal length".into()));
        }
        if mean_pos.iter().chain(&mean_neg).any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::Config("class means must lie in [0, 1]".into()));
        }
        if !(stddev >= 0.0) || !stddev.is_finite() {
            return Err(Error::Config(format!("stddev must be nonnegative, got {stddev}")));
        }
        if !(0.0..=1.0).contains(&pos_fraction) {
            return Err(Error::Config(format!("pos_fraction {pos_fraction} not in [0, 1]")));
        }
        let total: f64 = k_weights.iter().sum();
        if k_weights.is_empty() || k_weights.iter().any(|w| !(*w >= 0.0)) || !(total > 0.0) {
            return Err(Error::Config("k_weights must be nonnegative with positive sum".into()));
        }
        let k_weights = k_weights.iter().map(|w| w / total).collect();
        Ok(Self { mean_pos, mean_neg, stddev, pos_fraction, k_weights })
    }

    pub fn dim(&self) -> usize {
        self.mean_pos.len()
    }

    pub fn k_max(&self) -> usize {
        self.k_weights.len()
    }

    pub fn k_weights(&self) -> &[f64] {
        &self.k_weights
    }

    pub fn pos_fraction(&self) -> f64 {
        self.pos_fraction
    }

    /// One labelled feature vector.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, i8) {
        let positive = rng.gen::<f64>() < self.pos_fraction;
        let mean = if positive { &self.mean_pos } else { &self.mean_neg };
        let x = mean
            .iter()
            .map(|&m| {
                let z: f64 = if self.stddev > 0.0 {
                    Normal::new(0.0, self.stddev).expect("finite stddev").sample(rng)
                } else {
                    0.0
                };
                (m + z).clamp(0.0, 1.0)
            })
            .collect();
        (x, if positive { 1 } else { -1 })
    }
}

/// Game parameters shared by every sampled episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameTemplate {
    pub cost: CostModel,
    pub externality: Externality,
    pub beta: f64,
    pub gain: GainFunction,
}

impl GameTemplate {
    pub fn instance(
        &self,
        features: FeatureMatrix,
        labels: LabelVector,
        active_count: usize,
    ) -> Result<GameInstance> {
        GameInstance::new(
            features,
            labels,
            active_count,
            self.cost,
            ExternalityModel::new(self.externality, self.beta, active_count)?,
            self.gain,
        )
    }
}

/// Draws `k` from the participant distribution and `k_max` i.i.d. labelled
/// rows; only the first `k` rows take part in the game.
pub fn sample_instance<R: Rng + ?Sized>(
    pop: &PopulationModel,
    template: &GameTemplate,
    rng: &mut R,
) -> Result<GameInstance> {
    let k = WeightedIndex::new(&pop.k_weights)
        .map_err(|e| Error::Config(format!("k_weights: {e}")))?
        .sample(rng)
        + 1;
    let (d, k_max) = (pop.dim(), pop.k_max());
    let mut data = Vec::with_capacity(k_max * d);
    let mut labels = Vec::with_capacity(k_max);
    for _ in 0..k_max {
        let (x, y) = pop.sample_point(rng);
        data.extend(x);
        labels.push(y);
    }
    template.instance(
        FeatureMatrix::from_row_major(k_max, d, data)?,
        LabelVector::new(labels)?,
        k,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Vec<GameInstance>,
    pub seed: u64,
}

impl Dataset {
    pub fn generate(
        pop: &PopulationModel,
        template: &GameTemplate,
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let instances =
            (0..n).map(|_| sample_instance(pop, template, &mut rng)).collect::<Result<_>>()?;
        Ok(Self { instances, seed })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn template() -> GameTemplate {
        GameTemplate {
            cost: CostModel::new(1.0).unwrap(),
            externality: Externality::Proportional,
            beta: 0.5,
            gain: GainFunction::default(),
        }
    }

    fn pop(k_weights: Vec<f64>) -> PopulationModel {
        PopulationModel::new(vec![0.7, 0.3], vec![0.3, 0.7], 0.15, 0.3, k_weights).unwrap()
    }

    #[test]
    fn point_mass_participants() {
        let p = pop(vec![1.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let g = sample_instance(&p, &template(), &mut rng).unwrap();
            assert_eq!(g.active_count(), 1);
            assert_eq!(g.features().rows(), 3);
        }
    }

    #[test]
    fn replay_is_identical() {
        let p = pop(vec![0.2, 0.3, 0.5]);
        let a = Dataset::generate(&p, &template(), 20, 9).unwrap();
        let b = Dataset::generate(&p, &template(), 20, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn class_ratio_concentrates() {
        let p = pop(vec![1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let pos = (0..n).filter(|_| p.sample_point(&mut rng).1 == 1).count() as f64;
        let sd = (n as f64 * 0.3 * 0.7).sqrt();
        assert!((pos - 0.3 * n as f64).abs() <= 3.0 * sd);
    }

    #[test]
    fn rejects_bad_population() {
        assert!(PopulationModel::new(vec![1.2], vec![0.0], 0.1, 0.5, vec![1.0]).is_err());
        assert!(PopulationModel::new(vec![0.2], vec![0.0], 0.1, 0.5, vec![0.0]).is_err());
        assert!(PopulationModel::new(vec![0.2], vec![0.0, 0.1], 0.1, 0.5, vec![1.0]).is_err());
    }
}
