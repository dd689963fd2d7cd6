mod common;

use std::time::Duration;

use common::{chat_body, mock_server};
use tommer::judge::{
    build_prompt, judge_spans, read_audit, summarize, write_audit, ContextWindow, HttpChat,
    JudgeConfig, JudgeItem, Verdict,
};
use tommer::Span;

fn items(k: usize) -> Vec<JudgeItem> {
    let tokens: Vec<String> = "the old harbour of Lisbon was busy"
        .split(' ')
        .map(str::to_owned)
        .collect();
    (0..k)
        .map(|i| {
            let span = Span::new(1 + i % 6, 1 + i % 6 + usize::from(i % 2 == 0));
            JudgeItem {
                seq_id: format!("s{i}"),
                span,
                prompt: build_prompt(&tokens, span, ContextWindow::symmetric(3)).unwrap(),
            }
        })
        .collect()
}

fn config(base_url: String, concurrency: usize) -> JudgeConfig {
    JudgeConfig {
        base_url,
        model: "mock-model".into(),
        api_key: Some("test-key".into()),
        concurrency,
        max_attempts: 3,
        backoff: Duration::from_millis(1),
        timeout: Duration::from_secs(10),
    }
}

#[test]
fn all_yes() {
    let server = mock_server(vec![(200, chat_body("A place, so it fits. Yes"))]);
    let cfg = config(server.base_url.clone(), 4);
    let its = items(12);
    let records = judge_spans(&its, &HttpChat::new(&cfg), &cfg);
    assert_eq!(records.len(), 12);
    for (r, it) in records.iter().zip(&its) {
        assert_eq!(r.verdict, Some(Verdict::True));
        assert_eq!(r.seq_id, it.seq_id);
        assert_eq!(r.requests, 1);
    }
    let report = summarize(&records);
    assert_eq!(report.precision, Some(1.0));

    let body: serde_json::Value =
        serde_json::from_str(&server.requests.lock().unwrap()[0]).unwrap();
    assert_eq!(body["model"], "mock-model");
    assert_eq!(body["messages"][0]["role"], "system");
    assert!(body["messages"][0]["content"]
        .as_str()
        .unwrap()
        .starts_with("You are an expert in entity mention annotation."));
    assert_eq!(body["messages"][1]["role"], "user");
}

#[test]
fn rate_limited_twice_then_no() {
    let server = mock_server(vec![
        (429, "{}".into()),
        (429, "{}".into()),
        (200, chat_body("It is a fragment. No.")),
    ]);
    let cfg = config(server.base_url.clone(), 1);
    let records = judge_spans(&items(1), &HttpChat::new(&cfg), &cfg);
    assert_eq!(records[0].verdict, Some(Verdict::False));
    assert_eq!(records[0].requests, 3);
}

#[test]
fn gibberish_is_retried_once_then_recorded() {
    let server = mock_server(vec![(200, chat_body("blorp zzz"))]);
    let cfg = config(server.base_url.clone(), 1);
    let records = judge_spans(&items(1), &HttpChat::new(&cfg), &cfg);
    assert_eq!(records[0].verdict, Some(Verdict::Unparsed));
    assert_eq!(records[0].requests, 2);
    assert_eq!(records[0].raw_response.as_deref(), Some("blorp zzz"));
    assert_eq!(summarize(&records).unparsed, 1);
}

#[test]
fn exhausted_retries_mark_failure_and_continue() {
    let server = mock_server(vec![
        (500, "{}".into()),
        (500, "{}".into()),
        (500, "{}".into()),
        (200, chat_body("Yes")),
    ]);
    let cfg = config(server.base_url.clone(), 1);
    let records = judge_spans(&items(2), &HttpChat::new(&cfg), &cfg);
    assert_eq!(records[0].verdict, None);
    assert!(records[0].error.is_some());
    assert_eq!(records[1].verdict, Some(Verdict::True));
    let report = summarize(&records);
    assert_eq!((report.failed, report.accepted), (1, 1));
}

#[test]
fn audit_replays_to_same_verdicts() {
    let server = mock_server(vec![
        (200, chat_body("Yes")),
        (200, chat_body("No")),
        (200, chat_body("No")),
    ]);
    let cfg = config(server.base_url.clone(), 1);
    let records = judge_spans(&items(3), &HttpChat::new(&cfg), &cfg);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.jsonl");
    write_audit(&records, &path).unwrap();
    let back = read_audit(&path).unwrap();
    assert_eq!(back, records);
    for r in &back {
        assert_eq!(r.context_window.matches("[[").count(), 1);
        assert_eq!(r.context_window.matches("]]").count(), 1);
    }
}
