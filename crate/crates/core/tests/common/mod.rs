//! Scripted HTTP stub server for exercising the chat-completions judge
//! client without a real endpoint.

// Each test binary compiles its own copy and uses a different subset.
#![allow(dead_code)]

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

/// One scripted reply, consumed per incoming request in arrival order.
/// An exhausted script answers 500.
#[derive(Clone)]
pub enum Step {
    /// 200 with a chat-completions body whose message content is this text.
    Content(String),
    /// Plain status reply with an empty JSON body.
    Status(u16),
    /// Sleep before replying 200; long enough sleeps trip the client timeout.
    Hang(u64),
}

pub struct StubServer {
    addr: std::net::SocketAddr,
    script: Arc<Mutex<VecDeque<Step>>>,
    pub hits: Arc<AtomicUsize>,
    pub bodies: Arc<Mutex<Vec<String>>>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(script: Vec<Step>) -> StubServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub server");
        let addr = listener.local_addr().unwrap();
        let script = Arc::new(Mutex::new(VecDeque::from(script)));
        let hits = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));

        let handle = {
            let script = Arc::clone(&script);
            let hits = Arc::clone(&hits);
            let bodies = Arc::clone(&bodies);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { break };
                    let step = script.lock().unwrap().pop_front();
                    hits.fetch_add(1, Ordering::SeqCst);
                    let bodies = Arc::clone(&bodies);
                    std::thread::spawn(move || handle_connection(stream, step, &bodies));
                }
            })
        };

        StubServer {
            addr,
            script,
            hits,
            bodies,
            stop,
            handle: Some(handle),
        }
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn push(&self, step: Step) {
        self.script.lock().unwrap().push_back(step);
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(mut stream: TcpStream, step: Option<Step>, bodies: &Mutex<Vec<String>>) {
    let _ = stream.set_read_timeout(Some(Duration::from_secs(10)));
    let body = read_request(&mut stream).unwrap_or_default();
    bodies.lock().unwrap().push(body);

    let (status_line, payload) = match step.unwrap_or(Step::Status(500)) {
        Step::Content(content) => {
            let payload = serde_json::json!({
                "choices": [{ "message": { "role": "assistant", "content": content } }]
            })
            .to_string();
            ("HTTP/1.1 200 OK".to_string(), payload)
        }
        Step::Status(code) => (format!("HTTP/1.1 {code} STUB"), "{}".to_string()),
        Step::Hang(ms) => {
            std::thread::sleep(Duration::from_millis(ms));
            let payload = serde_json::json!({
                "choices": [{ "message": { "role": "assistant", "content": "<verdict>A</verdict>" } }]
            })
            .to_string();
            ("HTTP/1.1 200 OK".to_string(), payload)
        }
    };

    let response = format!(
        "{status_line}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    let _ = stream.write_all(response.as_bytes());
    let _ = stream.flush();
}

/// Reads one HTTP/1.1 request and returns its body.
fn read_request(stream: &mut TcpStream) -> Option<String> {
    let mut buffer = Vec::new();
    let mut chunk = [0u8; 1024];
    let header_end;
    loop {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            return None;
        }
        buffer.extend_from_slice(&chunk[..n]);
        if let Some(pos) = find_subsequence(&buffer, b"\r\n\r\n") {
            header_end = pos + 4;
            break;
        }
        if buffer.len() > 1 << 20 {
            return None;
        }
    }
    let headers = String::from_utf8_lossy(&buffer[..header_end]).to_string();
    let content_length = headers
        .lines()
        .find_map(|line| {
            let (name, value) = line.split_once(':')?;
            name.eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse::<usize>().ok())?
        })
        .unwrap_or(0);
    while buffer.len() < header_end + content_length {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            break;
        }
        buffer.extend_from_slice(&chunk[..n]);
    }
    Some(String::from_utf8_lossy(&buffer[header_end..]).to_string())
}

fn find_subsequence(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack
        .windows(needle.len())
        .position(|window| window == needle)
}
