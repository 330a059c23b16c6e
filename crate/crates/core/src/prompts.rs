//! Cloze templates for typing and for instance generation.
//!
//! Patterns use `{x}` (context), `{m}` (mention), `{mask}` (one mask, typing
//! only), `{masks}` (k masks, generation only) and `{t}` (type word,
//! generation only). When the context is empty, `{x}` and the punctuation
//! that follows it are dropped, giving the mention-only form.

use serde::{Deserialize, Serialize};

use crate::backend::{count_masks, RenderedPrompt};
use crate::error::{Error, Result};

pub const DEFAULT_MASK_TOKEN: &str = "[MASK]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateSpec {
    pub typing_pattern: String,
    pub generation_pattern: String,
    /// Sentinel inserted for each mask. Replaced by the provider's mask
    /// token before use.
    #[serde(skip)]
    pub mask_token: String,
}

impl Default for TemplateSpec {
    fn default() -> Self {
        Self {
            typing_pattern: "{x}. {m} is a {mask}.".into(),
            generation_pattern: "{x}. {m}, as well as {masks}, is a {t}.".into(),
            mask_token: DEFAULT_MASK_TOKEN.into(),
        }
    }
}

impl TemplateSpec {
    /// Named template pairs: `default`, `in-this-sentence`, `type-of`.
    pub fn preset(name: &str) -> Result<Self> {
        let mut spec = Self::default();
        match name {
            "default" => {}
            "in-this-sentence" => spec.typing_pattern = "{x}. In this sentence, {m} is a {mask}.".into(),
            "type-of" => {
                spec.typing_pattern = "{x}. {m} is a type of {mask}.".into();
                spec.generation_pattern = "{x}. {m}, as well as {masks}, is a type of {t}.".into();
            }
            other => return Err(Error::Config(format!("unknown template preset {other:?}"))),
        }
        Ok(spec)
    }

    pub fn with_mask_token(mut self, mask: &str) -> Self {
        self.mask_token = mask.to_string();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let typing = parse_pattern(&self.typing_pattern)?;
        expect_count(&typing, &self.typing_pattern, Slot::Mask, 1, 1)?;
        expect_count(&typing, &self.typing_pattern, Slot::Mention, 1, 1)?;
        expect_count(&typing, &self.typing_pattern, Slot::Context, 0, 1)?;
        expect_count(&typing, &self.typing_pattern, Slot::Masks, 0, 0)?;
        expect_count(&typing, &self.typing_pattern, Slot::TypeWord, 0, 0)?;
        let generation = parse_pattern(&self.generation_pattern)?;
        expect_count(&generation, &self.generation_pattern, Slot::Masks, 1, 1)?;
        expect_count(&generation, &self.generation_pattern, Slot::TypeWord, 1, 1)?;
        expect_count(&generation, &self.generation_pattern, Slot::Mention, 1, 1)?;
        expect_count(&generation, &self.generation_pattern, Slot::Context, 0, 1)?;
        expect_count(&generation, &self.generation_pattern, Slot::Mask, 0, 0)?;
        if self.mask_token.is_empty() {
            return Err(Error::Config("mask token is empty".into()));
        }
        Ok(())
    }

    /// Typing prompt T_c(x, m) with exactly one mask.
    pub fn render_typing(&self, x: &str, m: &str) -> Result<RenderedPrompt> {
        self.check_inputs(x, m)?;
        let pieces = parse_pattern(&self.typing_pattern)?;
        let text = self.fill(&pieces, x, m, 0, "")?;
        self.finish(text, 1)
    }

    /// Generation prompt T_g(x, m, t) with `k` contiguous masks.
    pub fn render_generation(&self, x: &str, m: &str, t: &str, k: usize) -> Result<RenderedPrompt> {
        if k < 1 {
            return Err(Error::Contract("generation needs at least one mask".into()));
        }
        self.check_inputs(x, m)?;
        if t.trim().is_empty() {
            return Err(Error::Contract("type word is empty".into()));
        }
        let pieces = parse_pattern(&self.generation_pattern)?;
        let text = self.fill(&pieces, x, m, k, t.trim())?;
        self.finish(text, k)
    }

    fn check_inputs(&self, x: &str, m: &str) -> Result<()> {
        if m.trim().is_empty() {
            return Err(Error::Contract("mention is empty".into()));
        }
        if x.contains(&self.mask_token) || m.contains(&self.mask_token) {
            return Err(Error::Contract(format!("input text contains the mask token {}", self.mask_token)));
        }
        Ok(())
    }

    fn fill(&self, pieces: &[Piece], x: &str, m: &str, k: usize, t: &str) -> Result<String> {
        let x = x.trim();
        let mut out = String::new();
        let mut skip_separator = false;
        let mut after_context = false;
        for piece in pieces {
            match piece {
                Piece::Literal(lit) => {
                    let mut lit = lit.as_str();
                    if skip_separator {
                        lit = lit.trim_start_matches(['.', ',', ';', ':', ' ']);
                        skip_separator = false;
                    } else if after_context && x.ends_with(['.', '!', '?']) {
                        // Context already closes its sentence.
                        lit = lit.strip_prefix('.').unwrap_or(lit);
                    }
                    after_context = false;
                    out.push_str(lit);
                }
                Piece::Slot(Slot::Context) => {
                    if x.is_empty() {
                        skip_separator = true;
                    } else {
                        out.push_str(x);
                        after_context = true;
                    }
                }
                Piece::Slot(Slot::Mention) => out.push_str(m.trim()),
                Piece::Slot(Slot::Mask) => out.push_str(&self.mask_token),
                Piece::Slot(Slot::Masks) => out.push_str(&vec![self.mask_token.as_str(); k].join(" ")),
                Piece::Slot(Slot::TypeWord) => out.push_str(t),
            }
        }
        Ok(out.trim().to_string())
    }

    fn finish(&self, text: String, expected: usize) -> Result<RenderedPrompt> {
        let n = count_masks(&text, &self.mask_token);
        if n != expected {
            return Err(Error::Contract(format!("rendered prompt has {n} masks, expected {expected}")));
        }
        Ok(RenderedPrompt::new(text, &self.mask_token))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Context,
    Mention,
    Mask,
    Masks,
    TypeWord,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Literal(String),
    Slot(Slot),
}

fn parse_pattern(pattern: &str) -> Result<Vec<Piece>> {
    let mut pieces = Vec::new();
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        if open > 0 {
            pieces.push(Piece::Literal(rest[..open].to_string()));
        }
        let close =
            rest[open..].find('}').ok_or_else(|| Error::Config(format!("unclosed placeholder in {pattern:?}")))? + open;
        let slot = match &rest[open + 1..close] {
            "x" => Slot::Context,
            "m" => Slot::Mention,
            "mask" => Slot::Mask,
            "masks" => Slot::Masks,
            "t" => Slot::TypeWord,
            other => return Err(Error::Config(format!("unknown placeholder {{{other}}} in {pattern:?}"))),
        };
        pieces.push(Piece::Slot(slot));
        rest = &rest[close + 1..];
    }
    if !rest.is_empty() {
        pieces.push(Piece::Literal(rest.to_string()));
    }
    Ok(pieces)
}

fn expect_count(pieces: &[Piece], pattern: &str, slot: Slot, min: usize, max: usize) -> Result<()> {
    let n = pieces.iter().filter(|p| **p == Piece::Slot(slot)).count();
    if n < min || n > max {
        let name = match slot {
            Slot::Context => "{x}",
            Slot::Mention => "{m}",
            Slot::Mask => "{mask}",
            Slot::Masks => "{masks}",
            Slot::TypeWord => "{t}",
        };
        return Err(Error::Config(format!(
            "pattern {pattern:?} has {name} {n} times, expected {}",
            if min == max { min.to_string() } else { format!("{min}..={max}") }
        )));
    }
    Ok(())
}
