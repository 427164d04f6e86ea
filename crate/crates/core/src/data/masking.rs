use rand::Rng;

use super::tokenizer::{MASK, NUM_SPECIALS, PAD};
use super::DataError;

pub const MASK_RATIO: f64 = 0.15;

/// Output of whole-word masking. `targets[i]` is the original id at `positions[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSequence {
    pub corrupted: Vec<usize>,
    pub targets: Vec<usize>,
    pub positions: Vec<usize>,
}

/// Selects each word with probability `ratio`; a selected word becomes
/// `MASK` 80% of the time, a random non-special id 10%, and stays as is 10%.
/// `PAD` positions are never selected.
pub fn whole_word_mask(
    ids: &[usize],
    ratio: f64,
    vocab_size: usize,
    rng: &mut impl Rng,
) -> Result<MaskedSequence, DataError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(DataError::InvalidArgument(format!(
            "mask ratio {ratio} outside [0, 1]"
        )));
    }
    if vocab_size <= NUM_SPECIALS {
        return Err(DataError::InvalidArgument(format!(
            "vocabulary of {vocab_size} has no ordinary words"
        )));
    }
    let mut out = MaskedSequence {
        corrupted: ids.to_vec(),
        targets: Vec::new(),
        positions: Vec::new(),
    };
    for (i, &id) in ids.iter().enumerate() {
        if id == PAD || !rng.random_bool(ratio) {
            continue;
        }
        out.positions.push(i);
        out.targets.push(id);
        let roll: f64 = rng.random();
        if roll < 0.8 {
            out.corrupted[i] = MASK;
        } else if roll < 0.9 {
            out.corrupted[i] = rng.random_range(NUM_SPECIALS..vocab_size);
        }
    }
    Ok(out)
}
