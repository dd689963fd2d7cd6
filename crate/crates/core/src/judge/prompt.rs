use crate::error::{Error, Result};
use crate::spanspace::Span;

/// Instruction block sent as the system message.
pub const SYSTEM_PROMPT: &str = include_str!("system_prompt.txt");

pub const DEFAULT_CONTEXT_RADIUS: usize = 32;

/// Tokens of context kept on each side of the span.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextWindow {
    pub left: usize,
    pub right: usize,
}

impl ContextWindow {
    pub fn symmetric(radius: usize) -> Self {
        ContextWindow {
            left: radius,
            right: radius,
        }
    }
}

impl Default for ContextWindow {
    fn default() -> Self {
        Self::symmetric(DEFAULT_CONTEXT_RADIUS)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    /// Context with the span in `[[...]]`, without surrounding quotes.
    pub context: String,
    /// The user message: `context` in double quotes.
    pub user: String,
}

/// Space-joined context around `span`, marked with `[[...]]`. A leading
/// `...` or trailing ` ...` marks truncation.
pub fn marked_context(tokens: &[String], span: Span, window: ContextWindow) -> Result<String> {
    let n = tokens.len();
    if !span.fits(n) {
        return Err(Error::SpanOutOfRange {
            start: span.start,
            end: span.end,
            n_tokens: n,
        });
    }
    let lo = (span.start - 1).saturating_sub(window.left);
    let hi = (span.end + window.right).min(n);
    let mut parts: Vec<String> = tokens[lo..span.start - 1].to_vec();
    parts.push(format!(
        "[[{}]]",
        tokens[span.start - 1..span.end].join(" ")
    ));
    parts.extend_from_slice(&tokens[span.end..hi]);
    let mut text = parts.join(" ");
    if lo > 0 {
        text.insert_str(0, "...");
    }
    if hi < n {
        text.push_str(" ...");
    }
    Ok(text)
}

pub fn build_prompt(tokens: &[String], span: Span, window: ContextWindow) -> Result<Prompt> {
    let context = marked_context(tokens, span, window)?;
    Ok(Prompt {
        system: SYSTEM_PROMPT.to_owned(),
        user: format!("\"{context}\""),
        context,
    })
}
