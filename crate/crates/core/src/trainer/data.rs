//! Desk-scale datasets: the two-moons classification toy (generated from the
//! seed) and a character-level text corpus read from a UTF-8 file.

use crate::linalg::DenseMatrix;
use crate::rng::RngKey;
use crate::scalar::Scalar;

/// Labeled 2-d points.
#[derive(Debug, Clone)]
pub struct MoonsSplit<F> {
    pub x: DenseMatrix<F>,
    pub y: Vec<usize>,
}

/// Two interleaved half-circles with Gaussian jitter.
pub fn two_moons<F: Scalar>(n: usize, noise: f64, key: RngKey) -> MoonsSplit<F> {
    let mut stream = key.stream();
    let mut x = DenseMatrix::zeros(n, 2);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let t = stream.next_f64() * std::f64::consts::PI;
        let (mut px, mut py) = if class == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        px += stream.next_gaussian() * noise;
        py += stream.next_gaussian() * noise;
        x.set(i, 0, F::of(px));
        x.set(i, 1, F::of(py));
        y.push(class);
    }
    MoonsSplit { x, y }
}

/// Sample a minibatch of rows keyed by the step.
pub fn moons_batch<F: Scalar>(
    split: &MoonsSplit<F>,
    batch_size: usize,
    key: RngKey,
) -> MoonsSplit<F> {
    let n = split.y.len();
    let mut stream = key.stream();
    let mut x = DenseMatrix::zeros(batch_size, 2);
    let mut y = Vec::with_capacity(batch_size);
    for b in 0..batch_size {
        let i = stream.next_below(n);
        x.row_mut(b).copy_from_slice(split.x.row(i));
        y.push(split.y[i]);
    }
    MoonsSplit { x, y }
}

/// Byte-level text corpus with a train/validation split and a dense
/// vocabulary over the bytes that actually occur.
#[derive(Debug, Clone)]
pub struct TextData {
    ids: Vec<u16>,
    vocab: Vec<u8>,
    train_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    /// `batch x (context + 1)` windows, row-major.
    pub windows: Vec<u16>,
    pub batch: usize,
    pub context: usize,
}

impl TextData {
    /// Build from raw bytes; the last tenth is held out for validation.
    pub fn from_bytes(bytes: &[u8]) -> Self {
        let mut present = [false; 256];
        for &b in bytes {
            present[b as usize] = true;
        }
        let vocab: Vec<u8> = (0..=255u8).filter(|&b| present[b as usize]).collect();
        let mut lookup = [0u16; 256];
        for (i, &b) in vocab.iter().enumerate() {
            lookup[b as usize] = i as u16;
        }
        let ids: Vec<u16> = bytes.iter().map(|&b| lookup[b as usize]).collect();
        let train_len = ids.len() - ids.len() / 10;
        Self { ids, vocab, train_len }
    }

    pub fn load(path: &std::path::Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(Self::from_bytes(&bytes))
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Random training windows of `context + 1` tokens, keyed by the step.
    pub fn train_batch(&self, batch: usize, context: usize, key: RngKey) -> TokenBatch {
        let mut stream = key.stream();
        let span = context + 1;
        let max_start = self.train_len.saturating_sub(span);
        let mut windows = Vec::with_capacity(batch * span);
        for _ in 0..batch {
            let start = stream.next_below(max_start + 1);
            windows.extend_from_slice(&self.ids[start..start + span]);
        }
        TokenBatch { windows, batch, context }
    }

    /// Deterministic evenly spaced windows from the held-out tail.
    pub fn val_windows(&self, max_windows: usize, context: usize) -> TokenBatch {
        let span = context + 1;
        let lo = self.train_len;
        let avail = self.ids.len().saturating_sub(lo).saturating_sub(span);
        let count = max_windows.min(avail + 1).max(1);
        let mut windows = Vec::with_capacity(count * span);
        for i in 0..count {
            let start = lo + if count == 1 { 0 } else { i * avail / (count - 1) };
            windows.extend_from_slice(&self.ids[start..start + span]);
        }
        TokenBatch { windows, batch: count, context }
    }
}

const CORPUS_SUBJECTS: &[&str] = &[
    "the river", "a lantern", "the garden", "an old clock", "the harbor", "a quiet fox",
    "the library", "a copper kettle", "the mountain", "a paper boat", "the lighthouse",
    "an open window", "the orchard", "a winter storm", "the violin", "a small engine",
];
const CORPUS_VERBS: &[&str] = &[
    "keeps", "follows", "remembers", "carries", "watches", "gathers", "crosses", "repairs",
    "measures", "shelters", "wakes", "holds", "turns", "reaches", "answers", "guards",
];
const CORPUS_OBJECTS: &[&str] = &[
    "the morning light", "a worn map", "the silver tide", "a handful of seeds",
    "the long road", "a folded letter", "the evening bell", "a ring of keys",
    "the northern wind", "a bundle of rope", "the hidden path", "a jar of honey",
    "the last ember", "a broken compass", "the far shore", "a song of glass",
];
const CORPUS_TAILS: &[&str] = &[
    "before the rain begins", "while the town sleeps", "as the fog lifts",
    "until the stars return", "beside the old stone wall", "after the harvest ends",
    "when the ice breaks", "through the narrow gate",
];

/// Deterministic English-like filler corpus of roughly `target_bytes` bytes;
/// gives the character model real word and phrase structure to learn.
pub fn synthetic_corpus(seed: u64, target_bytes: usize) -> String {
    let mut stream = RngKey::from_seed(seed).child_named("corpus").stream();
    let mut out = String::with_capacity(target_bytes + 128);
    while out.len() < target_bytes {
        let s = CORPUS_SUBJECTS[stream.next_below(CORPUS_SUBJECTS.len())];
        let v = CORPUS_VERBS[stream.next_below(CORPUS_VERBS.len())];
        let o = CORPUS_OBJECTS[stream.next_below(CORPUS_OBJECTS.len())];
        out.push_str(s);
        out.push(' ');
        out.push_str(v);
        out.push(' ');
        out.push_str(o);
        if stream.next_f64() < 0.4 {
            out.push(' ');
            out.push_str(CORPUS_TAILS[stream.next_below(CORPUS_TAILS.len())]);
        }
        out.push_str(". ");
        if stream.next_f64() < 0.15 {
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moons_deterministic_and_labeled() {
        let a: MoonsSplit<f64> = two_moons(40, 0.1, RngKey::from_seed(7));
        let b: MoonsSplit<f64> = two_moons(40, 0.1, RngKey::from_seed(7));
        assert_eq!(a.x, b.x);
        assert_eq!(a.y.iter().filter(|&&c| c == 0).count(), 20);
    }

    #[test]
    fn text_windows_shapes() {
        let corpus = synthetic_corpus(1, 4000);
        let data = TextData::from_bytes(corpus.as_bytes());
        assert!(data.vocab_size() > 10 && data.vocab_size() < 64);
        let batch = data.train_batch(4, 16, RngKey::from_seed(2));
        assert_eq!(batch.windows.len(), 4 * 17);
        let val = data.val_windows(8, 16);
        assert_eq!(val.windows.len() % 17, 0);
        assert!(val.batch >= 1);
    }

    #[test]
    fn corpus_is_deterministic() {
        assert_eq!(synthetic_corpus(9, 1000), synthetic_corpus(9, 1000));
    }
}
