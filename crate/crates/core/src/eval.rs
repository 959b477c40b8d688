//! Token corpora and language-model utility scoring.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::SubModelMask;
use crate::engine::{forward, ModelBundle, ModelConfig};
use crate::error::{Error, Result};
use crate::kernels::{mean_cross_entropy, softmax_in_place};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    File(String),
    Markov { seed: u64 },
    Model { seed: u64 },
    Inline,
}

/// Token ids cut into fixed-length evaluation chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    tokens: Vec<u32>,
    chunk_len: usize,
    provenance: Provenance,
}

impl Corpus {
    pub fn new(tokens: Vec<u32>, chunk_len: usize, provenance: Provenance) -> Result<Self> {
        if chunk_len < 2 {
            return Err(Error::input("chunk length must be at least 2"));
        }
        if tokens.len() < chunk_len {
            return Err(Error::input(format!(
                "corpus of {} tokens is shorter than one chunk of {chunk_len}",
                tokens.len()
            )));
        }
        Ok(Self {
            tokens,
            chunk_len,
            provenance,
        })
    }

    /// Seeded Markov chain: every token has a handful of likely successors.
    pub fn synthesize(vocab: usize, length: usize, chunk_len: usize, seed: u64) -> Result<Self> {
        if vocab == 0 || vocab > u32::MAX as usize {
            return Err(Error::input("vocabulary size must be in 1..=u32::MAX"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let branch = vocab.min(4);
        let table: Vec<Vec<(u32, f64)>> = (0..vocab)
            .map(|_| {
                let mut succ: Vec<u32> = (0..vocab as u32).collect();
                succ.shuffle(&mut rng);
                succ.truncate(branch);
                succ.into_iter()
                    .map(|t| {
                        let w: f64 = rng.gen_range(0.05..1.0);
                        (t, w * w)
                    })
                    .collect()
            })
            .collect();
        let mut tokens = Vec::with_capacity(length);
        let mut cur = rng.gen_range(0..vocab as u32);
        for _ in 0..length {
            tokens.push(cur);
            let succ = &table[cur as usize];
            let total: f64 = succ.iter().map(|(_, w)| w).sum();
            let mut target = rng.gen::<f64>() * total;
            let mut next = succ[succ.len() - 1].0;
            for &(t, w) in succ {
                if target < w {
                    next = t;
                    break;
                }
                target -= w;
            }
            cur = next;
        }
        Self::new(tokens, chunk_len, Provenance::Markov { seed })
    }

    /// Autoregressive samples from `model` (optionally masked), one chunk at a time.
    pub fn sample_from_model(
        model: &ModelBundle,
        mask: Option<&SubModelMask>,
        chunks: usize,
        chunk_len: usize,
        temperature: f32,
        seed: u64,
    ) -> Result<Self> {
        let vocab = model.config().vocab_size;
        if chunk_len > model.config().max_seq_len {
            return Err(Error::input("chunk length exceeds max_seq_len"));
        }
        if !(temperature > 0.0) {
            return Err(Error::input("temperature must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tokens = Vec::with_capacity(chunks * chunk_len);
        for _ in 0..chunks {
            let mut seq = vec![rng.gen_range(0..vocab as u32)];
            while seq.len() < chunk_len {
                let logits = forward(model, &seq, mask)?;
                let mut probs: Vec<f32> = logits
                    .row(seq.len() - 1)
                    .iter()
                    .map(|v| v / temperature)
                    .collect();
                softmax_in_place(&mut probs);
                let mut target = rng.gen::<f32>();
                let mut next = vocab as u32 - 1;
                for (t, &p) in probs.iter().enumerate() {
                    if target < p {
                        next = t as u32;
                        break;
                    }
                    target -= p;
                }
                seq.push(next);
            }
            tokens.extend(seq);
        }
        Self::new(tokens, chunk_len, Provenance::Model { seed })
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn chunk_len(&self) -> usize {
        self.chunk_len
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn chunk_count(&self) -> usize {
        self.tokens.len() / self.chunk_len
    }

    pub fn chunk(&self, i: usize) -> &[u32] {
        &self.tokens[i * self.chunk_len..(i + 1) * self.chunk_len]
    }

    pub fn chunks(&self) -> impl Iterator<Item = &[u32]> {
        self.tokens.chunks_exact(self.chunk_len)
    }

    /// Checks ids and chunk length against a model.
    pub fn check_compatible(&self, config: &ModelConfig) -> Result<()> {
        if self.chunk_len > config.max_seq_len + 1 {
            return Err(Error::input(format!(
                "chunk length {} exceeds max_seq_len {} + 1",
                self.chunk_len, config.max_seq_len
            )));
        }
        if let Some(bad) = self.tokens.iter().find(|&&t| t as usize >= config.vocab_size) {
            return Err(Error::input(format!(
                "corpus token {bad} outside vocabulary of {}",
                config.vocab_size
            )));
        }
        Ok(())
    }
}

/// Mean token log-likelihood and its perplexity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    /// Mean log-likelihood per predicted token, in nats (higher is better).
    pub utility: f64,
    /// `exp(−utility)`
    pub perplexity: f64,
    pub tokens: u64,
    pub chunks: usize,
    /// False when the forward pass produced non-finite values.
    pub finite: bool,
}

impl UtilityReport {
    fn non_finite(tokens: u64, chunks: usize) -> Self {
        Self {
            utility: f64::NAN,
            perplexity: f64::NAN,
            tokens,
            chunks,
            finite: false,
        }
    }
}

/// Scores `chunks` with next-token prediction: each chunk of length `L`
/// contributes `L − 1` predictions.
pub fn utility_on<'a>(
    model: &ModelBundle,
    chunks: impl IntoIterator<Item = &'a [u32]>,
    mask: Option<&SubModelMask>,
) -> Result<UtilityReport> {
    let mut total = 0.0f64;
    let mut tokens = 0u64;
    let mut count = 0usize;
    let mut finite = true;
    for chunk in chunks {
        if chunk.len() < 2 {
            return Err(Error::input("evaluation chunk needs at least 2 tokens"));
        }
        let inputs = &chunk[..chunk.len() - 1];
        let targets = &chunk[1..];
        count += 1;
        tokens += targets.len() as u64;
        match forward(model, inputs, mask) {
            Ok(logits) => {
                let ce = mean_cross_entropy(&logits, targets)?;
                total += ce * targets.len() as f64;
            }
            Err(Error::Numeric { .. }) => finite = false,
            Err(e) => return Err(e),
        }
    }
    if count == 0 {
        return Err(Error::input("no chunks to evaluate"));
    }
    if !finite || !total.is_finite() {
        return Ok(UtilityReport::non_finite(tokens, count));
    }
    let utility = -total / tokens as f64;
    Ok(UtilityReport {
        utility,
        perplexity: libm::exp(-utility),
        tokens,
        chunks: count,
        finite: true,
    })
}

/// Utility over the first `chunk_budget` chunks of `corpus`.
pub fn utility(
    model: &ModelBundle,
    corpus: &Corpus,
    mask: Option<&SubModelMask>,
    chunk_budget: usize,
) -> Result<UtilityReport> {
    corpus.check_compatible(model.config())?;
    utility_on(model, corpus.chunks().take(chunk_budget.max(1)), mask)
}
