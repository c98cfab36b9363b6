//! Offline judge: an in-process transport and a loopback HTTP server that
//! answer according to a fixed policy.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use coevo_core::Seed;
use rand::Rng;

use crate::judge::{Criteria, JudgeResponse, Transport, Verdict};

#[derive(Clone, Debug, PartialEq)]
pub enum StubPolicy {
    /// Every criterion and the winner set to this verdict.
    Prefer(Verdict),
    /// Per-criterion verdicts drawn from the seed and the request body;
    /// the winner is their majority.
    Seeded(u64),
    /// This exact text as the reply body.
    Raw(String),
}

pub fn stub_reply(policy: &StubPolicy, request_body: &str) -> String {
    let response = match policy {
        StubPolicy::Raw(text) => return text.clone(),
        StubPolicy::Prefer(v) => JudgeResponse {
            winner: *v,
            criteria: Criteria::all(*v),
            rationale: format!("stub prefers {v}"),
        },
        StubPolicy::Seeded(seed) => {
            let mut rng = Seed(*seed).derive(request_body).rng();
            let mut pick = || [Verdict::A, Verdict::B, Verdict::Tie][rng.random_range(0..3)];
            let criteria = Criteria {
                text_asset_alignment: pick(),
                plausibility_3d: pick(),
                texture_details: pick(),
            };
            JudgeResponse {
                winner: criteria.majority(),
                criteria,
                rationale: format!("seeded stub {seed}"),
            }
        }
    };
    serde_json::to_string(&response).expect("judge response serializes")
}

#[derive(Clone, Debug)]
pub struct StubTransport {
    pub policy: StubPolicy,
}

impl StubTransport {
    pub fn new(policy: StubPolicy) -> Self {
        Self { policy }
    }
}

impl Transport for StubTransport {
    fn post(&self, body: &str) -> std::result::Result<String, String> {
        Ok(stub_reply(&self.policy, body))
    }
}

#[derive(Default)]
struct ServerState {
    requests: AtomicUsize,
    last_body: Mutex<Option<String>>,
}

/// HTTP/1.1 judge on `127.0.0.1`. The first `failures` requests get a 503.
pub struct StubServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    state: Arc<ServerState>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn spawn(policy: StubPolicy, failures: usize) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let state = Arc::new(ServerState::default());
        let (stop, st) = (shutdown.clone(), state.clone());
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(s) = stream {
                    let _ = serve(s, &policy, failures, &st);
                }
            }
        });
        Ok(Self {
            addr,
            shutdown,
            state,
            handle: Some(handle),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}/judge", self.addr)
    }

    pub fn requests(&self) -> usize {
        self.state.requests.load(Ordering::SeqCst)
    }

    pub fn last_body(&self) -> Option<String> {
        self.state.last_body.lock().expect("stub state lock").clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, policy: &StubPolicy, failures: usize, state: &ServerState) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut length = 0usize;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body)?;
    let body = String::from_utf8_lossy(&body).into_owned();
    let n = state.requests.fetch_add(1, Ordering::SeqCst);
    *state.last_body.lock().expect("stub state lock") = Some(body.clone());
    let (status, reply) = if n < failures {
        ("503 Service Unavailable", "{\"error\":\"unavailable\"}".to_string())
    } else {
        ("200 OK", stub_reply(policy, &body))
    };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    )?;
    out.flush()
}
