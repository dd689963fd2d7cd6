//! Precision estimation with an LLM judge over a chat-completion endpoint.

mod client;
mod prompt;
mod verdict;

pub use client::{
    judge_items, judge_spans, read_audit, sample_spans, summarize, write_audit, CallError,
    ChatBackend, HttpChat, JudgeConfig, JudgeItem, JudgeRecord, JudgeReport, DEFAULT_SAMPLE_K,
};
pub use prompt::{
    build_prompt, marked_context, ContextWindow, Prompt, DEFAULT_CONTEXT_RADIUS, SYSTEM_PROMPT,
};
pub use verdict::{parse_verdict, Verdict};
