//! Renders the judge prompt for a span and parses a model answer. With a base
//! URL it sends the prompt to an OpenAI-compatible endpoint, reading the key
//! from `OPENAI_API_KEY`.
//!
//! `cargo run --example judge_prompt [base_url] [model]`

use tommer::judge::{
    build_prompt, judge_spans, parse_verdict, ContextWindow, HttpChat, JudgeConfig, JudgeItem,
    SYSTEM_PROMPT,
};
use tommer::Span;

fn main() -> tommer::Result<()> {
    let tokens: Vec<String> = "It was here that she met her future second husband , Gottfried Lessing , a German communist"
        .split(' ')
        .map(str::to_owned)
        .collect();
    let span = Span::new(9, 10);
    let prompt = build_prompt(&tokens, span, ContextWindow::symmetric(6))?;
    println!("[system]\n{SYSTEM_PROMPT}\n\n[user]\n{}\n", prompt.user);

    for answer in [
        "The span refers to a specific person as a distinct entity. Yes",
        "This is only part of a name. No.",
        "Hard to say",
    ] {
        println!("{answer:?} -> {:?}", parse_verdict(answer));
    }

    let mut args = std::env::args().skip(1);
    if let Some(base_url) = args.next() {
        let config = JudgeConfig {
            base_url,
            model: args.next().unwrap_or_else(|| JudgeConfig::default().model),
            api_key: std::env::var("OPENAI_API_KEY").ok(),
            ..JudgeConfig::default()
        };
        let item = JudgeItem {
            seq_id: "example".into(),
            span,
            prompt,
        };
        let record = &judge_spans(&[item], &HttpChat::new(&config), &config)[0];
        println!("\n{}", serde_json::to_string_pretty(record)?);
    }
    Ok(())
}
