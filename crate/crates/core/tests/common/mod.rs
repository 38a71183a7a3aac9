#![allow(dead_code)]

pub mod generate;

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::TcpListener;
use std::thread::JoinHandle;

use hlscore::lm::{NgramModel, StubBackend, StubEntry};
use hlscore::pipeline::Tokenizer;
use rand::seq::SliceRandom;
use rand::Rng;

pub const BOTCHAN: &str = include_str!("../../data/botchan_ch1-5.txt");

pub fn strings(tokens: &[&str]) -> Vec<String> {
    tokens.iter().map(|s| s.to_string()).collect()
}

/// Random probability row of length `n`, normalized, with occasional zeros and ties.
pub fn random_row<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| match rng.gen_range(0..10) {
            0 => 0.0,
            1 => 0.25,
            _ => rng.gen_range(0.01..1.0),
        })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[0] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// A stub over `|V| <= max_vocab` tokens with a handful of context-specific rows.
pub fn random_stub<R: Rng>(rng: &mut R, id: &str, max_vocab: usize) -> StubBackend {
    let n = rng.gen_range(1..=max_vocab);
    let vocab: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
    let mut table = vec![StubEntry {
        context: Vec::new(),
        probs: random_row(rng, n),
    }];
    let mut seen: Vec<Vec<String>> = vec![Vec::new()];
    for _ in 0..rng.gen_range(0..6) {
        let len = rng.gen_range(1..=3);
        let ctx: Vec<String> = (0..len)
            .map(|_| vocab.choose(rng).unwrap().clone())
            .collect();
        if seen.contains(&ctx) {
            continue;
        }
        seen.push(ctx.clone());
        table.push(StubEntry {
            context: ctx,
            probs: random_row(rng, n),
        });
    }
    StubBackend::new(id, vocab, table).unwrap()
}

/// Brute-force frac(p) straight from a stub table: longest matching suffix,
/// then observed probability over the row maximum. OOV tokens score zero.
pub fn oracle_fracs(vocab: &[String], table: &[StubEntry], tokens: &[String]) -> Vec<f64> {
    let rows: HashMap<&[String], &[f64]> = table
        .iter()
        .map(|e| (e.context.as_slice(), e.probs.as_slice()))
        .collect();
    let window = table.iter().map(|e| e.context.len()).max().unwrap_or(0);
    (0..tokens.len())
        .map(|i| {
            let ctx = &tokens[i.saturating_sub(window)..i];
            let mut row = rows[&[][..]];
            for start in (0..=ctx.len()).rev() {
                if let Some(r) = rows.get(&ctx[start..]) {
                    row = r;
                }
            }
            let max = row.iter().cloned().fold(0.0, f64::max);
            match vocab.iter().position(|v| *v == tokens[i]) {
                Some(j) => row[j] / max,
                None => 0.0,
            }
        })
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Average ranks by counting, O(n^2).
pub fn brute_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            let less = xs.iter().filter(|&&y| y < x).count() as f64;
            let equal = xs.iter().filter(|&&y| y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    brute_pearson(&brute_ranks(x), &brute_ranks(y))
}

/// Token sentences of the bundled text, split after `.`, `!` and `?`.
pub fn botchan_sentences(min_len: usize) -> Vec<Vec<String>> {
    let tokens = Tokenizer::LowerPunct.tokenize(BOTCHAN).unwrap();
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    for t in tokens {
        let end = matches!(t.as_str(), "." | "!" | "?");
        current.push(t);
        if end {
            if current.len() >= min_len {
                sentences.push(std::mem::take(&mut current));
            } else {
                current.clear();
            }
        }
    }
    sentences
}

pub struct BotchanSplit {
    pub train: Vec<Vec<String>>,
    pub calibration: Vec<Vec<String>>,
    pub test: Vec<Vec<String>>,
}

/// Deterministic split: every third sentence is held out, filling the test
/// set first and then the calibration set. Everything else is training text.
pub fn botchan_split(n_test: usize, n_calibration: usize) -> BotchanSplit {
    let mut split = BotchanSplit {
        train: Vec::new(),
        calibration: Vec::new(),
        test: Vec::new(),
    };
    for (i, s) in botchan_sentences(5).into_iter().enumerate() {
        if i % 3 == 1 {
            if split.test.len() < n_test {
                split.test.push(s);
                continue;
            }
            if split.calibration.len() < n_calibration {
                split.calibration.push(s);
                continue;
            }
        }
        split.train.push(s);
    }
    split
}

pub fn botchan_model(train: &[Vec<String>]) -> NgramModel {
    NgramModel::train(train, 3, &[], hlscore::lm::DEFAULT_FLOOR_PROB).unwrap()
}

/// Minimal HTTP/1.1 responder for misbehaving-server tests. Each connection
/// gets the body chosen by `respond(path, request_body)`. A `None` body
/// closes the connection without answering.
pub fn rogue_server<F>(respond: F) -> (String, JoinHandle<()>)
where
    F: Fn(&str, &str) -> Option<(u16, String, Option<usize>)> + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let Some((path, body)) = read_request(&mut stream) else {
                continue;
            };
            if path == "/__stop" {
                break;
            }
            if let Some((status, body, declared_len)) = respond(&path, &body) {
                let len = declared_len.unwrap_or(body.len());
                let head = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {len}\r\nConnection: close\r\n\r\n"
                );
                let _ = stream.write_all(head.as_bytes());
                let _ = stream.write_all(body.as_bytes());
            }
        }
    });
    (url, handle)
}

pub fn stop_rogue(url: &str, handle: JoinHandle<()>) {
    if let Ok(mut s) = std::net::TcpStream::connect(url.trim_start_matches("http://")) {
        let _ = s.write_all(b"GET /__stop HTTP/1.1\r\nHost: x\r\nContent-Length: 0\r\n\r\n");
    }
    let _ = handle.join();
}

fn read_request(stream: &mut std::net::TcpStream) -> Option<(String, String)> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end = loop {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            return None;
        }
        buf.extend_from_slice(&chunk[..n]);
        if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
            break pos + 4;
        }
    };
    let head = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let path = head.split_whitespace().nth(1)?.to_string();
    let content_length = head
        .lines()
        .find_map(|l| {
            let (k, v) = l.split_once(':')?;
            k.eq_ignore_ascii_case("content-length")
                .then(|| v.trim().parse::<usize>().ok())?
        })
        .unwrap_or(0);
    while buf.len() < header_end + content_length {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            break;
        }
        buf.extend_from_slice(&chunk[..n]);
    }
    Some((
        path,
        String::from_utf8_lossy(&buf[header_end..]).to_string(),
    ))
}
