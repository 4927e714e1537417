pub mod eval;
pub mod localize;
pub mod simulate;
pub mod train;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent seed for sub-task `index` of stream `stream`, derived from the
/// command seed.
pub fn sub_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) * 2);
    rng.next_u64()
}

/// Splits `<name>_<suffix>.csv` file names.
pub fn split_name(file_name: &str) -> Option<(&str, &str)> {
    let stem = file_name.strip_suffix(".csv")?;
    stem.rsplit_once('_')
}
