use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::taxonomy::ClusterName;

pub const HIT_SIZE: usize = 5;
pub const SENTENCES_PER_HIT: usize = 4;
pub const DEFAULT_PRICE_CENTS: u64 = 15;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "id", rename_all = "snake_case")]
pub enum Slot {
    Sentence(String),
    Control(String),
}

impl Slot {
    pub fn is_control(&self) -> bool {
        matches!(self, Slot::Control(_))
    }

    pub fn id(&self) -> &str {
        match self {
            Slot::Sentence(id) | Slot::Control(id) => id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub cluster: ClusterName,
    pub stage: usize,
    pub slots: Vec<Slot>,
    pub price_cents: u64,
}

impl Hit {
    pub fn sentence_ids(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().filter(|s| !s.is_control()).map(Slot::id)
    }

    pub fn control_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_control()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HitError {
    #[error("control pool for {0} is empty")]
    EmptyControlPool(ClusterName),
}

/// Packs `pending` into HITs of four sentences plus one control, padding the
/// last HIT with extra controls. Slot order is shuffled so the control
/// position is uniform. `next_id` names each HIT.
pub fn build_hits<R: Rng>(
    pending: &[String],
    controls: &[String],
    cluster: &ClusterName,
    stage: usize,
    rng: &mut R,
    mut next_id: impl FnMut() -> String,
) -> Result<Vec<Hit>, HitError> {
    if pending.is_empty() {
        return Ok(Vec::new());
    }
    if controls.is_empty() {
        return Err(HitError::EmptyControlPool(cluster.clone()));
    }
    let mut hits = Vec::with_capacity(pending.len().div_ceil(SENTENCES_PER_HIT));
    for chunk in pending.chunks(SENTENCES_PER_HIT) {
        let need = HIT_SIZE - chunk.len();
        let picked: Vec<&String> = if controls.len() >= need {
            controls.choose_multiple(rng, need).collect()
        } else {
            (0..need).map(|_| controls.choose(rng).expect("non-empty")).collect()
        };
        let mut slots: Vec<Slot> = chunk.iter().cloned().map(Slot::Sentence).collect();
        slots.extend(picked.into_iter().cloned().map(Slot::Control));
        slots.shuffle(rng);
        hits.push(Hit {
            id: next_id(),
            cluster: cluster.clone(),
            stage,
            slots,
            price_cents: DEFAULT_PRICE_CENTS,
        });
    }
    Ok(hits)
}
