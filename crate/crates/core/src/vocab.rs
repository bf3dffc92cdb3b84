//! Token vocabulary of the toy policy.

use crate::labels::{ComparisonChoice, DegradationClass, SeverityLevel};
use serde::{Deserialize, Serialize};

pub const EOS: &str = "<eos>";

const FILLERS: [&str; 11] = [
    "sharp", "soft", "grainy", "dim", "clean", "edges", "texture", "detail", "sky", "light", "color",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::standard()
    }
}

impl Vocabulary {
    /// The 48-token vocabulary: `<eos>`, the four tags, braces, the four
    /// answer keys, digits, `.`, `"`, `,`, class and severity names (the
    /// `null` token is shared), the comparison choices and think fillers.
    pub fn standard() -> Self {
        let mut tokens: Vec<String> = vec![EOS.into()];
        tokens.extend(["<think>", "</think>", "<answer>", "</answer>", "{", "}"].map(String::from));
        tokens.extend(["\"rating\":", "\"distortion_class\":", "\"severity\":", "\"choice\":"].map(String::from));
        tokens.extend((0..10).map(|d| d.to_string()));
        tokens.extend([".", "\"", ","].map(String::from));
        tokens.extend(DegradationClass::ALL.iter().map(|c| c.name().to_string()));
        tokens.extend(SeverityLevel::RANKED.iter().map(|s| s.name().to_string()));
        tokens.extend(ComparisonChoice::ALL.iter().map(|c| c.answer_text().to_string()));
        tokens.extend(FILLERS.iter().map(|f| f.to_string()));
        Self { tokens }
    }

    pub fn from_tokens(tokens: Vec<String>) -> crate::Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for t in &tokens {
            if !seen.insert(t.as_str()) {
                return Err(crate::Error::Config(format!("duplicate token {t:?}")));
            }
        }
        if !seen.contains(EOS) {
            return Err(crate::Error::Config("vocabulary lacks <eos>".into()));
        }
        Ok(Self { tokens })
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

    pub fn id(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    pub fn eos(&self) -> usize {
        self.id(EOS).expect("vocabulary always holds <eos>")
    }

    /// Surface text of a token; `<eos>` renders as nothing and filler words
    /// carry a trailing space.
    pub fn surface(&self, id: usize) -> String {
        let t = &self.tokens[id];
        if t == EOS {
            String::new()
        } else if FILLERS.contains(&t.as_str()) {
            format!("{t} ")
        } else {
            t.clone()
        }
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.surface(i)).collect()
    }

    /// Greedy longest-match tokenization of text produced by `detokenize`.
    pub fn tokenize(&self, text: &str) -> Option<Vec<usize>> {
        let mut out = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            let (id, len) = (0..self.len())
                .filter(|&i| self.tokens[i] != EOS)
                .filter_map(|i| {
                    let s = self.surface(i);
                    rest.starts_with(&s).then_some((i, s.len()))
                })
                .max_by_key(|&(_, l)| l)?;
            out.push(id);
            rest = &rest[len..];
        }
        Some(out)
    }
}
