//! Minimal HTTP/1.1 server speaking the objective wire protocol.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};

#[derive(Clone, Copy)]
pub enum Behavior {
    Healthy,
    /// Answer 503 to this many `/evaluate` calls first.
    FlakyFirst(usize),
    AlwaysFail,
}

pub struct MockServer {
    pub url: String,
    pub evaluate_calls: Arc<AtomicUsize>,
}

pub const EMBED_DIM: usize = 4;
pub const PROMPT_LENGTH: usize = 3;
pub const VOCAB: usize = 6;

/// Loss is `Σ (x_i - 0.5)²` plus `beta` when the CR loss is requested.
pub fn mock_loss(prompt: &[f64], beta: f64, cr: bool) -> f64 {
    prompt.iter().map(|v| (v - 0.5).powi(2)).sum::<f64>() + if cr { beta } else { 0.0 }
}

impl MockServer {
    pub fn start(behavior: Behavior) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let calls = Arc::new(AtomicUsize::new(0));
        let counter = calls.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let counter = counter.clone();
                thread::spawn(move || handle(stream, behavior, &counter));
            }
        });
        Self {
            url,
            evaluate_calls: calls,
        }
    }

    pub fn calls(&self) -> usize {
        self.evaluate_calls.load(Ordering::SeqCst)
    }
}

fn handle(stream: TcpStream, behavior: Behavior, calls: &AtomicUsize) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    loop {
        let mut request_line = String::new();
        if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
            return;
        }
        let mut length = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            if let Some((k, v)) = line.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    length = v.trim().parse().unwrap();
                }
            }
        }
        let mut body = vec![0; length];
        reader.read_exact(&mut body).unwrap();
        let (status, payload) = route(&request_line, &body, behavior, calls);
        let text = payload.to_string();
        let mut s = &stream;
        let reason = match status {
            200 => "OK",
            422 => "Unprocessable Entity",
            _ => "Service Unavailable",
        };
        write!(
            s,
            "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{text}",
            text.len()
        )
        .unwrap();
        s.flush().unwrap();
    }
}

fn route(request_line: &str, body: &[u8], behavior: Behavior, calls: &AtomicUsize) -> (u16, Value) {
    if request_line.starts_with("GET /info") {
        return (
            200,
            json!({"embed_dim": EMBED_DIM, "prompt_length": PROMPT_LENGTH, "vocab_size": VOCAB,
                   "verbalizer_ids": [1, 3], "task": "mock"}),
        );
    }
    if !request_line.starts_with("POST /evaluate") {
        return (404, json!({"error": "not found"}));
    }
    let n = calls.fetch_add(1, Ordering::SeqCst);
    match behavior {
        Behavior::AlwaysFail => return (500, json!({"error": "model failure"})),
        Behavior::FlakyFirst(k) if n < k => return (503, json!({"error": "warming up"})),
        _ => {}
    }
    let req: Value = serde_json::from_slice(body).unwrap();
    let prompt: Vec<f64> = req["prompt"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    if prompt.len() != EMBED_DIM * PROMPT_LENGTH {
        return (422, json!({"error": format!("expected {} values, got {}", EMBED_DIM * PROMPT_LENGTH, prompt.len())}));
    }
    let cr = req["loss"] == "cr";
    let loss = mock_loss(&prompt, req["beta"].as_f64().unwrap(), cr);
    let mut out = json!({"loss": loss, "n_examples": 2});
    if req["return_logits"].as_bool().unwrap() {
        out["logits"] = json!([[0.0, prompt[0], 0.5, 1.0, -1.0, 2.0], [1.0, 1.0, 1.0, 1.0, 1.0, 1.0]]);
    }
    (200, out)
}
