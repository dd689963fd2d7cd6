#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tommer::probe::{Matcher, ProbeInputs, ProbeKind, ProbeParams, ProbeShape};
use tommer::repio::TensorF32;
use tommer::spanspace::span_count;
use tommer::training::{batch_loss, loss_gradients, BatchItem};

pub fn tensor(rng: &mut impl Rng, shape: Vec<usize>, scale: f32) -> TensorF32 {
    let numel = shape.iter().product();
    let data = (0..numel)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    TensorF32::new(shape, data).unwrap()
}

/// A random small instance: inputs, parameters (theta nonzero) and labels.
pub struct Instance {
    pub inputs: ProbeInputs,
    pub params: ProbeParams,
    pub labels: Vec<u8>,
    pub window: usize,
}

pub fn random_instance(kind: ProbeKind, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=8);
    let d = rng.random_range(2..=16);
    let rank = rng.random_range(1..=4);
    let heads = rng.random_range(1..=2);
    let head_dim = rng.random_range(2..=6);
    let layers = rng.random_range(1..=2);
    let window = rng.random_range(2..=n.max(2));
    let mut inputs = ProbeInputs::from_reps(tensor(&mut rng, vec![n, d], 1.0));
    let shape = match kind {
        ProbeKind::Tom => ProbeShape::Tom { dim: d, rank },
        ProbeKind::Ltqk => {
            inputs.queries = Some(tensor(&mut rng, vec![heads, n, head_dim], 1.0));
            inputs.keys = Some(tensor(&mut rng, vec![heads, n, head_dim], 1.0));
            ProbeShape::Ltqk {
                dim: d,
                rank,
                heads,
                head_dim,
            }
        }
        ProbeKind::Lcattn => {
            inputs.attention = Some(tensor(&mut rng, vec![layers, heads, n, n], 2.0));
            ProbeShape::Lcattn {
                dim: d,
                layers,
                heads,
            }
        }
    };
    let mut params = ProbeParams::init(shape, &mut rng);
    for t in params.theta.iter_mut() {
        *t = rng.random_range(-2.0..2.0);
    }
    if let Matcher::Lcattn(l) = &mut params.matcher {
        for w in l.weights.iter_mut() {
            *w = rng.random_range(-1.0..1.0);
        }
    }
    let total = span_count(n, window);
    let mut labels: Vec<u8> = (0..total).map(|_| u8::from(rng.random_bool(0.3))).collect();
    labels[rng.random_range(0..total)] = 1;
    Instance {
        inputs,
        params,
        labels,
        window,
    }
}

/// Largest elementwise relative error between analytic gradients and central
/// differences with step `h`. Entries where both are below `floor` are
/// compared against `floor`.
pub fn max_gradient_error(inst: &Instance, h: f64, floor: f64) -> f64 {
    let batch = [BatchItem {
        inputs: &inst.inputs,
        labels: &inst.labels,
    }];
    let analytic = loss_gradients(&batch, &inst.params, inst.window)
        .unwrap()
        .grads;
    let mut worst: f64 = 0.0;
    let n_slices = inst.params.slices().len();
    for s in 0..n_slices {
        let len = inst.params.slices()[s].len();
        for k in 0..len {
            let mut plus = inst.params.clone();
            plus.slices_mut()[s][k] += h;
            let mut minus = inst.params.clone();
            minus.slices_mut()[s][k] -= h;
            let lp = batch_loss(&batch, &plus, inst.window).unwrap();
            let lm = batch_loss(&batch, &minus, inst.window).unwrap();
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic.slices()[s][k];
            let denom = a.abs().max(numeric.abs()).max(floor);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

/// Scripted HTTP endpoint: answers the i-th request with `script[i]` (status,
/// body), repeating the last entry afterwards. Records request bodies.
pub struct MockServer {
    pub base_url: String,
    pub requests: Arc<Mutex<Vec<String>>>,
}

pub fn chat_body(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
        .to_string()
}

pub fn mock_server(script: Vec<(u16, String)>) -> MockServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&requests);
    thread::spawn(move || {
        for (i, stream) in listener.incoming().enumerate() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let l = line.trim_end();
                if l.is_empty() {
                    break;
                }
                if let Some((k, v)) = l.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                }
            }
            let mut body = vec![0u8; len];
            let _ = reader.read_exact(&mut body);
            log.lock()
                .unwrap()
                .push(String::from_utf8_lossy(&body).into_owned());
            let (status, text) = script[i.min(script.len() - 1)].clone();
            let resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
            let _ = stream.write_all(resp.as_bytes());
        }
    });
    MockServer {
        base_url: format!("http://{addr}/v1"),
        requests,
    }
}
