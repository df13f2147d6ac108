//! Caption tokenisation and the recurrent caption encoder.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use ndarray::{Array1, ArrayD, IxDyn};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::layers::{Embedding, GruCell, Linear};
use crate::nn::{Bound, Graph, Mode, ParamSet, Real, Var};
use crate::types::TEXT_DIM;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
/// Captions are truncated or padded to this many tokens.
pub const MAX_TOKENS: usize = 24;

/// Token table with `PAD = 0` and `UNK = 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

/// Lowercases, strips punctuation and splits on whitespace.
pub fn normalize(caption: &str) -> Vec<String> {
    caption
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

impl Vocabulary {
    /// Builds a vocabulary from the words of `captions`, in sorted order
    /// after the two special tokens.
    pub fn build<'a>(captions: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = captions.into_iter().flat_map(normalize).collect();
        let tokens = [PAD_TOKEN.to_owned(), UNK_TOKEN.to_owned()]
            .into_iter()
            .chain(words.into_iter().filter(|w| w != PAD_TOKEN && w != UNK_TOKEN))
            .collect();
        Self::from_tokens(tokens).expect("special tokens are in place")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::InvalidConfig(format!(
                "vocabulary must start with {PAD_TOKEN} and {UNK_TOKEN}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    /// One token per line; the line number is the index.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_owned).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Token ids padded with [`PAD`] to exactly [`MAX_TOKENS`].
pub fn tokenize(caption: &str, vocab: &Vocabulary) -> Result<Vec<usize>> {
    let words = normalize(caption);
    if words.is_empty() {
        return Err(Error::EmptyCaption);
    }
    let mut ids: Vec<usize> = words
        .iter()
        .take(MAX_TOKENS)
        .map(|w| vocab.index_of(w))
        .collect();
    ids.resize(MAX_TOKENS, PAD);
    Ok(ids)
}

/// Word embedding, one GRU layer over the unpadded prefix, and a linear
/// projection of the final hidden state to [`TEXT_DIM`].
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub embed: Embedding,
    pub cell: GruCell,
    pub proj: Linear,
}

pub const EMBED_DIM: usize = 64;
pub const HIDDEN_DIM: usize = 64;

impl TextEncoder {
    pub fn new(vocab_size: usize) -> Self {
        Self::with_dims(vocab_size, EMBED_DIM, HIDDEN_DIM)
    }

    pub fn with_dims(vocab_size: usize, embed: usize, hidden: usize) -> Self {
        TextEncoder {
            embed: Embedding::new("text.embed", vocab_size, embed),
            cell: GruCell::new("text.gru", embed, hidden),
            proj: Linear::new("text.proj", hidden, TEXT_DIM),
        }
    }

    pub fn init<F: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet<F> {
        let mut ps = ParamSet::new();
        self.embed.init(&mut ps, rng);
        self.cell.init(&mut ps, rng);
        self.proj.init_fan_in(&mut ps, rng);
        ps
    }

    /// Encodes a batch of padded token sequences into `[N, 40]`.
    ///
    /// Steps past a sequence's last real token leave its hidden state
    /// untouched, so trailing padding has no effect on the output.
    pub fn forward<'g, F: Real>(&self, b: &Bound<'g, F>, batch: &[Vec<usize>]) -> Var<'g, F> {
        let n = batch.len();
        let g = b.graph();
        let mut h = g.constant(ArrayD::zeros(IxDyn(&[n, self.cell.hidden])));
        let steps = batch
            .iter()
            .map(|seq| seq.iter().rposition(|&t| t != PAD).map_or(0, |p| p + 1))
            .max()
            .unwrap_or(0);
        for t in 0..steps {
            let ids: Vec<usize> = batch.iter().map(|s| s.get(t).copied().unwrap_or(PAD)).collect();
            let mask: Vec<F> = ids
                .iter()
                .map(|&id| if id == PAD { F::zero() } else { F::one() })
                .collect();
            let x = self.embed.forward(b, &ids);
            let next = self.cell.forward(b, x, h);
            h = next.blend_rows(h, &mask);
        }
        self.proj.forward(b, h)
    }
}

/// Encodes one token sequence with fixed parameters.
pub fn encode_text(tokens: &[usize], encoder: &TextEncoder, params: &ParamSet<f32>) -> Array1<f32> {
    let g = Graph::new();
    let b = Bound::new(&g, params, &ParamSet::new(), Mode::Eval, false);
    let out = encoder.forward(&b, &[tokens.to_vec()]);
    let v = out.value();
    v.iter().copied().collect()
}
