use std::collections::HashMap;

use crate::asm::NormalizedToken;

/// Token standing for everything dropped by the frequency floor.
pub const OOV_TOKEN: &str = "<unk>";

/// Ordered token list with reverse index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<NormalizedToken>,
    index: HashMap<NormalizedToken, u32>,
    oov: Option<u32>,
}

impl Vocabulary {
    /// Panics on duplicate tokens.
    pub fn new(tokens: Vec<NormalizedToken>) -> Self {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            assert!(index.insert(t.clone(), i as u32).is_none(), "duplicate token {t}");
        }
        let oov = index.get(&NormalizedToken::new(OOV_TOKEN)).copied();
        Self { tokens, index, oov }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[NormalizedToken] {
        &self.tokens
    }

    pub fn token(&self, id: u32) -> Option<&NormalizedToken> {
        self.tokens.get(id as usize)
    }

    pub fn oov(&self) -> Option<u32> {
        self.oov
    }

    /// Exact lookup without the out-of-vocabulary fallback.
    pub fn lookup(&self, token: &NormalizedToken) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id used for model input: the token's own id, else the out-of-vocabulary
    /// id, else `len()` (an id with no row, embedded as zeros).
    pub fn id(&self, token: &NormalizedToken) -> u32 {
        self.lookup(token).or(self.oov).unwrap_or(self.tokens.len() as u32)
    }
}
