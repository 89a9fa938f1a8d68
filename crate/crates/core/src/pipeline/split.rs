//! Stratified 60/20/20 train/validation/test splitting.

use crate::encoder::UserDocument;
use crate::error::{Error, Result};
use crate::num::Rng;

/// Strata below this size fall back to a pooled global shuffle.
const MIN_STRATUM: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn cut(ids: Vec<String>, out: &mut DatasetSplit) {
    let n = ids.len();
    let n_train = (0.6 * n as f64).round() as usize;
    let n_val = ((0.2 * n as f64).round() as usize).min(n - n_train);
    for (i, id) in ids.into_iter().enumerate() {
        if i < n_train {
            out.train.push(id);
        } else if i < n_train + n_val {
            out.validation.push(id);
        } else {
            out.test.push(id);
        }
    }
}

/// Shuffle and cut 60/20/20 within each type-index stratum. Users whose
/// stratum holds fewer than five members are pooled and split globally.
/// Deterministic given the seed and the input order.
pub fn stratified_split(users: &[UserDocument], seed: u64) -> Result<DatasetSplit> {
    if users.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    let mut strata: Vec<Vec<String>> = vec![Vec::new(); 16];
    for doc in users {
        let labels = doc.labels.ok_or_else(|| {
            Error::Data(format!(
                "user `{}` has no labels to stratify on",
                doc.user_id
            ))
        })?;
        strata[labels.type_index()].push(doc.user_id.clone());
    }

    let mut master = Rng::new(seed);
    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed,
    };
    let mut pooled: Vec<String> = Vec::new();
    for mut ids in strata {
        let mut rng = master.split();
        if ids.len() < MIN_STRATUM {
            pooled.extend(ids);
            continue;
        }
        rng.shuffle(&mut ids);
        cut(ids, &mut split);
    }
    if !pooled.is_empty() {
        let mut rng = master.split();
        rng.shuffle(&mut pooled);
        cut(pooled, &mut split);
    }
    Ok(split)
}
