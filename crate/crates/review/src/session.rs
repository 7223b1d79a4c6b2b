//! Reader-study sessions: blinded item order, judgments and the
//! misclassification report.

use std::collections::BTreeMap;

use glioaug_core::Modality;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ReviewError;

pub const MIN_SCORE: u8 = 1;
pub const MAX_SCORE: u8 = 5;

/// Misclassification rate of a reader who cannot tell the sources apart.
pub const IDEAL_MISCLASSIFICATION_PCT: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Synthetic,
}

pub(crate) mod modality_serde {
    use glioaug_core::Modality;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Modality, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(m.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Modality, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One MR sequence of a case directory, relative to the service's image root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub case: String,
    #[serde(with = "modality_serde")]
    pub modality: Modality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    #[serde(with = "modality_serde")]
    pub modality: Modality,
    pub true_origin: Origin,
    pub image: ImageRef,
    /// Voxel grid `[x, y, z]` of the image.
    pub shape: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub verdict: Origin,
    pub score: u8,
    #[serde(default)]
    pub comment: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSession {
    pub session_id: String,
    pub seed: u64,
    /// In presentation order.
    pub items: Vec<Item>,
    pub judgments: BTreeMap<String, Judgment>,
    pub finalized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityRow {
    pub modality: String,
    pub n_items: usize,
    pub n_misclassified: usize,
    pub misclassification_pct: f64,
}

/// An item with its origin revealed, after finalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealedItem {
    pub item_id: String,
    pub modality: String,
    pub true_origin: Origin,
    pub verdict: Origin,
    pub score: u8,
    pub comment: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewReport {
    pub session_id: String,
    pub rows: Vec<ModalityRow>,
    pub total: ModalityRow,
    pub ideal_misclassification_pct: f64,
    pub items: Vec<RevealedItem>,
}

/// `100 * wrong / total` rounded half-up to one decimal.
pub fn misclassification_pct(wrong: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let tenths = (2000 * wrong + total) / (2 * total);
    tenths as f64 / 10.0
}

/// Seeded permutation of `real` followed by `synthetic`; ids are assigned
/// after shuffling so they carry no origin.
pub fn shuffled_items(
    real: &[(ImageRef, [usize; 3])],
    synthetic: &[(ImageRef, [usize; 3])],
    seed: u64,
) -> Vec<Item> {
    let mut pool: Vec<(Origin, &ImageRef, [usize; 3])> = real
        .iter()
        .map(|(r, s)| (Origin::Real, r, *s))
        .chain(synthetic.iter().map(|(r, s)| (Origin::Synthetic, r, *s)))
        .collect();
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    pool.into_iter()
        .enumerate()
        .map(|(i, (origin, r, shape))| Item {
            item_id: format!("item{:03}", i + 1),
            modality: r.modality,
            true_origin: origin,
            image: r.clone(),
            shape,
        })
        .collect()
}

impl ReviewSession {
    pub fn create(
        session_id: impl Into<String>,
        real: &[(ImageRef, [usize; 3])],
        synthetic: &[(ImageRef, [usize; 3])],
        seed: u64,
    ) -> Result<Self, ReviewError> {
        if real.is_empty() {
            return Err(ReviewError::Invalid("no real images given".into()));
        }
        if synthetic.is_empty() {
            return Err(ReviewError::Invalid("no synthetic images given".into()));
        }
        Ok(ReviewSession {
            session_id: session_id.into(),
            seed,
            items: shuffled_items(real, synthetic, seed),
            judgments: BTreeMap::new(),
            finalized: false,
        })
    }

    pub fn item(&self, item_id: &str) -> Option<&Item> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    pub fn next_unjudged(&self) -> Option<(usize, &Item)> {
        self.items
            .iter()
            .enumerate()
            .find(|(_, i)| !self.judgments.contains_key(&i.item_id))
    }

    pub fn unjudged(&self) -> Vec<String> {
        self.items
            .iter()
            .filter(|i| !self.judgments.contains_key(&i.item_id))
            .map(|i| i.item_id.clone())
            .collect()
    }

    /// Checks a judgment without storing it.
    pub fn validate(&self, item_id: &str, j: &Judgment) -> Result<(), ReviewError> {
        if self.item(item_id).is_none() {
            return Err(ReviewError::UnknownItem(item_id.to_string()));
        }
        if self.judgments.contains_key(item_id) {
            return Err(ReviewError::Duplicate(item_id.to_string()));
        }
        if !(MIN_SCORE..=MAX_SCORE).contains(&j.score) {
            return Err(ReviewError::Invalid(format!(
                "score {} outside {MIN_SCORE}..={MAX_SCORE}",
                j.score
            )));
        }
        Ok(())
    }

    pub fn record(&mut self, item_id: &str, j: Judgment) -> Result<(), ReviewError> {
        self.validate(item_id, &j)?;
        self.judgments.insert(item_id.to_string(), j);
        Ok(())
    }

    /// Per-modality misclassification; every item must be judged.
    pub fn report(&self) -> Result<ReviewReport, ReviewError> {
        let unjudged = self.unjudged();
        if !unjudged.is_empty() {
            return Err(ReviewError::Incomplete(unjudged));
        }
        let mut per: BTreeMap<Modality, (usize, usize)> = BTreeMap::new();
        let mut items = Vec::with_capacity(self.items.len());
        for item in &self.items {
            let j = &self.judgments[&item.item_id];
            let correct = j.verdict == item.true_origin;
            let e = per.entry(item.modality).or_default();
            e.0 += 1;
            e.1 += usize::from(!correct);
            items.push(RevealedItem {
                item_id: item.item_id.clone(),
                modality: item.modality.to_string(),
                true_origin: item.true_origin,
                verdict: j.verdict,
                score: j.score,
                comment: j.comment.clone(),
                correct,
            });
        }
        let row = |modality: String, n: usize, wrong: usize| ModalityRow {
            modality,
            n_items: n,
            n_misclassified: wrong,
            misclassification_pct: misclassification_pct(wrong, n),
        };
        let rows: Vec<ModalityRow> = per.iter().map(|(m, &(n, w))| row(m.to_string(), n, w)).collect();
        let wrong = items.iter().filter(|i| !i.correct).count();
        Ok(ReviewReport {
            session_id: self.session_id.clone(),
            rows,
            total: row("ALL".into(), items.len(), wrong),
            ideal_misclassification_pct: IDEAL_MISCLASSIFICATION_PCT,
            items,
        })
    }

    /// Marks the session final; repeated calls return the same report.
    pub fn finalize(&mut self) -> Result<ReviewReport, ReviewError> {
        let report = self.report()?;
        self.finalized = true;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn refs(prefix: &str, n: usize) -> Vec<(ImageRef, [usize; 3])> {
        (0..n)
            .map(|i| {
                (
                    ImageRef {
                        case: format!("{prefix}{i}"),
                        modality: Modality::Flair,
                    },
                    [4, 4, 4],
                )
            })
            .collect()
    }

    #[test]
    fn percentages() {
        assert_eq!(misclassification_pct(5, 19), 26.3);
        assert_eq!(misclassification_pct(2, 19), 10.5);
        assert_eq!(misclassification_pct(0, 19), 0.0);
        assert_eq!(misclassification_pct(19, 19), 100.0);
        assert_eq!(misclassification_pct(1, 8), 12.5);
        assert_eq!(misclassification_pct(1, 3), 33.3);
        assert_eq!(misclassification_pct(2, 3), 66.7);
    }

    #[test]
    fn create_and_order() {
        let s = ReviewSession::create("s", &refs("r", 9), &refs("g", 10), 4).unwrap();
        assert_eq!(s.items.len(), 19);
        let again = ReviewSession::create("s", &refs("r", 9), &refs("g", 10), 4).unwrap();
        assert_eq!(s.items, again.items);
        let other = ReviewSession::create("s", &refs("r", 9), &refs("g", 10), 5).unwrap();
        assert_ne!(s.items, other.items);
        assert_eq!(s.items.iter().filter(|i| i.true_origin == Origin::Real).count(), 9);
        assert!(ReviewSession::create("s", &[], &refs("g", 1), 0).is_err());
        assert!(ReviewSession::create("s", &refs("r", 1), &[], 0).is_err());
    }

    #[test]
    fn judgments() {
        let mut s = ReviewSession::create("s", &refs("r", 1), &refs("g", 1), 0).unwrap();
        let j = |score| Judgment {
            verdict: Origin::Real,
            score,
            comment: String::new(),
        };
        assert!(matches!(s.record("nope", j(3)), Err(ReviewError::UnknownItem(_))));
        assert!(matches!(s.record("item001", j(7)), Err(ReviewError::Invalid(_))));
        assert!(matches!(s.record("item001", j(0)), Err(ReviewError::Invalid(_))));
        s.record("item001", j(3)).unwrap();
        assert!(matches!(s.record("item001", j(3)), Err(ReviewError::Duplicate(_))));
        assert_eq!(s.next_unjudged().unwrap().1.item_id, "item002");
        assert!(matches!(s.finalize(), Err(ReviewError::Incomplete(u)) if u == ["item002"]));
        s.record("item002", j(5)).unwrap();
        let r = s.finalize().unwrap();
        assert_eq!(r.total.n_items, 2);
        assert_eq!(r.total.n_misclassified, 1);
        assert_eq!(r.total.misclassification_pct, 50.0);
        assert_eq!(s.finalize().unwrap(), r);
    }
}
