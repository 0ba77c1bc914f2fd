//! Seeded hyperparameter search for TIFU-KNN on a validation split.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Basket, SplitCorpus, UserRecord};
use crate::error::{Error, Result};
use crate::metrics::evaluate_against;
use crate::recommend::{HyperParams, Padding, TifuKnn};
use crate::vectors::DecayParams;

pub const DEFAULT_TRIALS: usize = 200;

/// Cutoff of the validation recall being maximized.
pub const TUNING_K: usize = 10;

/// Candidate values per hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub k: Vec<usize>,
    pub r_b: Vec<f64>,
    pub r_g: Vec<f64>,
    pub m: Vec<usize>,
    pub alpha: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        let tenths = |from: u32| (from..=10).map(|i| i as f64 / 10.0).collect::<Vec<_>>();
        Self {
            k: vec![100, 300, 500, 700, 900, 1100, 1300],
            r_b: tenths(1),
            r_g: tenths(1),
            m: (2..=23).collect(),
            alpha: tenths(0),
        }
    }
}

impl SearchSpace {
    pub fn point(hp: &HyperParams) -> Self {
        Self {
            k: vec![hp.k],
            r_b: vec![hp.decay.r_b],
            r_g: vec![hp.decay.r_g],
            m: vec![hp.decay.m],
            alpha: vec![hp.alpha],
        }
    }

    pub fn contains(&self, hp: &HyperParams) -> bool {
        self.k.contains(&hp.k)
            && self.r_b.contains(&hp.decay.r_b)
            && self.r_g.contains(&hp.decay.r_g)
            && self.m.contains(&hp.decay.m)
            && self.alpha.contains(&hp.alpha)
    }

    pub fn size(&self) -> usize {
        self.k.len() * self.r_b.len() * self.r_g.len() * self.m.len() * self.alpha.len()
    }

    fn validate(&self) -> Result<()> {
        if self.size() == 0 {
            return Err(Error::InvalidConfig("search space has an empty dimension".into()));
        }
        Ok(())
    }

    fn make(&self, basket_size: usize, idx: [usize; 5]) -> HyperParams {
        HyperParams {
            k: self.k[idx[0]],
            decay: DecayParams {
                r_b: self.r_b[idx[1]],
                r_g: self.r_g[idx[2]],
                m: self.m[idx[3]],
            },
            alpha: self.alpha[idx[4]],
            basket_size,
        }
    }

    /// Draws one value per dimension, in the order k, r_b, r_g, m, alpha.
    fn sample<R: Rng>(&self, rng: &mut R, basket_size: usize) -> HyperParams {
        let idx = [
            rng.gen_range(0..self.k.len()),
            rng.gen_range(0..self.r_b.len()),
            rng.gen_range(0..self.r_g.len()),
            rng.gen_range(0..self.m.len()),
            rng.gen_range(0..self.alpha.len()),
        ];
        self.make(basket_size, idx)
    }

    /// Every point, with alpha varying fastest.
    pub fn grid(&self, basket_size: usize) -> Vec<HyperParams> {
        let mut out = Vec::with_capacity(self.size());
        for a in 0..self.k.len() {
            for b in 0..self.r_b.len() {
                for c in 0..self.r_g.len() {
                    for d in 0..self.m.len() {
                        for e in 0..self.alpha.len() {
                            out.push(self.make(basket_size, [a, b, c, d, e]));
                        }
                    }
                }
            }
        }
        out
    }
}

/// Tuning data derived from a split corpus: each user's last history basket
/// becomes the validation truth. The source test baskets are not carried
/// over.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSplit {
    /// Earlier history as `history`, validation basket as `test_basket`.
    pub corpus: SplitCorpus,
    /// Users left out because their history has a single basket.
    pub excluded: Vec<String>,
}

pub fn make_validation_split(corpus: &SplitCorpus) -> Result<ValidationSplit> {
    let mut users = Vec::new();
    let mut excluded = Vec::new();
    for user in &corpus.users {
        if user.history.len() < 2 {
            excluded.push(user.user_id.clone());
            continue;
        }
        let (validation, history) = user.history.split_last().expect("non-empty");
        users.push(UserRecord {
            user_id: user.user_id.clone(),
            history: history.to_vec(),
            test_basket: validation.clone(),
        });
    }
    if users.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(ValidationSplit {
        corpus: SplitCorpus {
            vocab: corpus.vocab.clone(),
            users,
        },
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub hp: HyperParams,
    pub recall_at_10: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningOutcome {
    pub best: TrialResult,
    pub trials: Vec<TrialResult>,
}

impl TuningOutcome {
    /// `trial,k,r_b,r_g,m,alpha,recall_at_10,seconds`. With `timing` off the
    /// seconds column is left blank so that logs for one seed are
    /// byte-identical.
    pub fn write_csv<W: Write>(&self, writer: W, timing: bool) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["trial", "k", "r_b", "r_g", "m", "alpha", "recall_at_10", "seconds"])?;
        for t in &self.trials {
            let seconds = if timing { format!("{:.3}", t.seconds) } else { String::new() };
            wtr.write_record([
                t.trial.to_string(),
                t.hp.k.to_string(),
                t.hp.decay.r_b.to_string(),
                t.hp.decay.r_g.to_string(),
                t.hp.decay.m.to_string(),
                t.hp.alpha.to_string(),
                t.recall_at_10.to_string(),
                seconds,
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// The sequence of hyperparameters a random search with `seed` visits.
/// Longer sequences extend shorter ones.
pub fn sample_trials(space: &SearchSpace, n_trials: usize, seed: u64, basket_size: usize) -> Vec<HyperParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_trials).map(|_| space.sample(&mut rng, basket_size)).collect()
}

/// Validation Recall@10 of TIFU-KNN with the given hyperparameters.
pub fn validation_recall(split: &ValidationSplit, hp: HyperParams) -> Result<f64> {
    let model = TifuKnn::fit(&split.corpus, hp)?;
    let predictions = model.recommend_all(Padding::Popularity);
    let truths: Vec<(&str, &Basket)> = split
        .corpus
        .users
        .iter()
        .map(|u| (u.user_id.as_str(), &u.test_basket))
        .collect();
    let report = evaluate_against(&predictions, &truths, &[TUNING_K], TUNING_K)?;
    Ok(report.recall(TUNING_K).expect("recall computed"))
}

fn run_trials(split: &ValidationSplit, candidates: Vec<HyperParams>) -> Result<TuningOutcome> {
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("at least one trial is required".into()));
    }
    let trials = candidates
        .into_par_iter()
        .enumerate()
        .map(|(trial, hp)| {
            let start = Instant::now();
            let recall_at_10 = validation_recall(split, hp)?;
            Ok(TrialResult {
                trial,
                hp,
                recall_at_10,
                seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = trials
        .iter()
        .fold(None::<&TrialResult>, |best, t| match best {
            Some(b) if b.recall_at_10 >= t.recall_at_10 => Some(b),
            _ => Some(t),
        })
        .expect("non-empty")
        .clone();
    Ok(TuningOutcome { best, trials })
}

/// Uniform random search. The best trial is the earliest one reaching the
/// maximum validation recall.
pub fn random_search(split: &ValidationSplit, space: &SearchSpace, n_trials: usize, seed: u64, basket_size: usize) -> Result<TuningOutcome> {
    space.validate()?;
    run_trials(split, sample_trials(space, n_trials, seed, basket_size))
}

/// Exhaustive search in [`SearchSpace::grid`] order.
pub fn grid_search(split: &ValidationSplit, space: &SearchSpace, basket_size: usize) -> Result<TuningOutcome> {
    space.validate()?;
    run_trials(split, space.grid(basket_size))
}
