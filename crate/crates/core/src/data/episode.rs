use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClassSection;
use crate::error::{Error, Result};

/// Default number of query examples per class.
pub const DEFAULT_QUERY: usize = 15;

/// N-way K-shot task definition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub seed: u64,
}

impl EpisodeSpec {
    pub fn new(n_way: usize, k_shot: usize, q_query: usize, seed: u64) -> Result<Self> {
        let spec = EpisodeSpec {
            n_way,
            k_shot,
            q_query,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            return Err(Error::InvalidEpisodeSpec(format!(
                "n_way must be >= 2, got {}",
                self.n_way
            )));
        }
        if self.k_shot < 1 || self.q_query < 1 {
            return Err(Error::InvalidEpisodeSpec(format!(
                "k_shot and q_query must be >= 1, got {} and {}",
                self.k_shot, self.q_query
            )));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        EpisodeSpec { seed, ..self }
    }

    /// Support-set size, which is also the fine-tuning batch size.
    pub fn support_size(&self) -> usize {
        self.n_way * self.k_shot
    }

    pub fn query_size(&self) -> usize {
        self.n_way * self.q_query
    }
}

/// One labelled example inside an episode; `label` indexes `Episode::classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled<T> {
    pub item: T,
    pub label: usize,
    /// Position of the item inside its class list in the source section.
    pub source_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode<T> {
    pub classes: Vec<String>,
    pub support: Vec<Labeled<T>>,
    pub query: Vec<Labeled<T>>,
}

impl<T> Episode<T> {
    pub fn n_way(&self) -> usize {
        self.classes.len()
    }

    pub fn support_labels(&self) -> Vec<usize> {
        self.support.iter().map(|l| l.label).collect()
    }

    pub fn query_labels(&self) -> Vec<usize> {
        self.query.iter().map(|l| l.label).collect()
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Episode<U> {
        let mut conv = |xs: &[Labeled<T>]| {
            xs.iter()
                .map(|l| Labeled {
                    item: f(&l.item),
                    label: l.label,
                    source_index: l.source_index,
                })
                .collect()
        };
        Episode {
            classes: self.classes.clone(),
            support: conv(&self.support),
            query: conv(&self.query),
        }
    }
}

/// Samples N classes, then K support and Q query examples without
/// replacement inside each class. A pure function of the section and the seed.
pub fn sample_episode<T: Clone>(section: &ClassSection<T>, spec: &EpisodeSpec) -> Result<Episode<T>> {
    spec.validate()?;
    if section.len() < spec.n_way {
        return Err(Error::InsufficientClasses {
            needed: spec.n_way,
            available: section.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let names: Vec<&String> = section.keys().collect();
    let picked = index::sample(&mut rng, names.len(), spec.n_way).into_vec();
    let per_class = spec.k_shot + spec.q_query;

    let mut episode = Episode {
        classes: Vec::with_capacity(spec.n_way),
        support: Vec::with_capacity(spec.support_size()),
        query: Vec::with_capacity(spec.query_size()),
    };
    for (label, &ci) in picked.iter().enumerate() {
        let name = names[ci];
        let items = &section[name];
        if items.len() < per_class {
            return Err(Error::InsufficientExamples {
                class: name.clone(),
                needed: per_class,
                available: items.len(),
            });
        }
        let chosen = index::sample(&mut rng, items.len(), per_class).into_vec();
        episode.classes.push(name.clone());
        for (j, &idx) in chosen.iter().enumerate() {
            let entry = Labeled {
                item: items[idx].clone(),
                label,
                source_index: idx,
            };
            if j < spec.k_shot {
                episode.support.push(entry);
            } else {
                episode.query.push(entry);
            }
        }
    }
    Ok(episode)
}
