use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use coevo_core::image::Image;
use coevo_eval::judge::{
    instruction, parse_response, render_layout, Criteria, HttpTransport, JudgeRequest, RetryPolicy, Transport,
    INSTRUCTION_VERSION,
};
use coevo_eval::stub::{stub_reply, StubPolicy, StubServer, StubTransport};
use coevo_eval::{compose_grid, vision_judge_compare, Asset, Error, JudgeClient, Layout, TurntableConfig, Verdict};
use coevo_recon::GaussianSet;
use ndarray::Array3;

fn tiles(n: usize, size: usize) -> Vec<Image> {
    (0..n)
        .map(|i| Array3::from_shape_fn((3, size, size), |(k, y, x)| (i * 1000 + k * 100 + y * 10 + x) as f64))
        .collect()
}

#[test]
fn grids_are_exact_tile_multiples() {
    for (layout, side) in [(Layout::FourView, 2), (Layout::NineView, 3)] {
        let t = tiles(layout.views(), 5);
        let g = compose_grid(&t, layout).unwrap();
        assert_eq!(g.dim(), (3, 5 * side, 5 * side));
        for r in 0..side {
            for c in 0..side {
                for k in 0..3 {
                    for y in 0..5 {
                        for x in 0..5 {
                            assert_eq!(g[[k, r * 5 + y, c * 5 + x]], t[r * side + c][[k, y, x]]);
                        }
                    }
                }
            }
        }
    }
    assert!(compose_grid(&tiles(3, 4), Layout::FourView).is_err());
    let mut mixed = tiles(4, 4);
    mixed[2] = Array3::zeros((3, 5, 5));
    assert!(compose_grid(&mixed, Layout::FourView).is_err());
    assert_eq!("9-view".parse::<Layout>().unwrap(), Layout::NineView);
    assert!("6-view".parse::<Layout>().is_err());
}

#[test]
fn asset_grid_has_layout_shape() {
    let mut g = GaussianSet::default();
    g.push([0.2, 0.0, 0.0], [0.2; 3], [1.0, 0.0, 0.0, 0.0], 0.9, [0.1, 0.8, 0.1]);
    let cfg = TurntableConfig {
        size: 12,
        ..TurntableConfig::default()
    };
    let grid = render_layout(Asset::Gaussians(&g), Layout::NineView, &cfg).unwrap();
    assert_eq!(grid.dim(), (3, 36, 36));
}

#[test]
fn instruction_template_is_filled() {
    let text = instruction("a red ball", Layout::FourView);
    assert!(text.contains("\"a red ball\""));
    assert!(text.contains("grid of 4 renders"));
    assert!(!text.contains('{') || text.contains("\"winner\""));
    assert_eq!(INSTRUCTION_VERSION, "judge-instruction-v1");
}

fn client(policy: StubPolicy) -> JudgeClient {
    JudgeClient::new(StubTransport::new(policy)).with_sleep(|_| {})
}

#[test]
fn stub_preferring_a_always_picks_a() {
    let c = client(StubPolicy::Prefer(Verdict::A));
    for seed in 0..5 {
        let a = tiles(4, 3 + seed).iter().map(|t| t.mapv(|v| (v * 0.37).sin())).collect::<Vec<_>>();
        let b = tiles(4, 3 + seed).iter().map(|t| t.mapv(|v| (v * 0.11).cos())).collect::<Vec<_>>();
        let j = vision_judge_compare(&a, &b, "compare", Layout::FourView, &c).unwrap();
        assert_eq!(j.winner, Verdict::A);
        assert_eq!(j.criteria, Criteria::all(Verdict::A));
    }
}

#[test]
fn seeded_stub_is_deterministic_and_consistent() {
    let body = r#"{"images":["x","y"],"instruction":"i"}"#;
    for seed in 0..20 {
        let a = stub_reply(&StubPolicy::Seeded(seed), body);
        assert_eq!(a, stub_reply(&StubPolicy::Seeded(seed), body));
        let j = parse_response(&a).unwrap();
        assert_eq!(j.winner, j.criteria.majority());
    }
}

#[test]
fn malformed_reply_keeps_raw_text() {
    let raw = "I think A is nicer.";
    let err = client(StubPolicy::Raw(raw.into()))
        .judge(&JudgeRequest::new(&tiles(1, 2)[0], &tiles(1, 2)[0], "i").unwrap())
        .unwrap_err();
    match err {
        Error::Parse { raw: r, .. } => assert_eq!(r, raw),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn reply_parsing_edge_cases() {
    let inner = r#"{"winner":"B","criteria":{"text_asset_alignment":"B","plausibility_3d":"tie","texture_details":"B"},"rationale":"r"}"#;
    let wrapped = format!("Verdict:\n```json\n{inner}\n```");
    let j = parse_response(&wrapped).unwrap();
    assert_eq!(j.winner, Verdict::B);
    assert_eq!(j.raw, wrapped);
    let bad = inner.replace("\"winner\":\"B\"", "\"winner\":\"A\"");
    assert!(matches!(parse_response(&bad), Err(Error::Inconsistent { .. })));
    let tie = inner.replace("\"winner\":\"B\"", "\"winner\":\"tie\"");
    assert_eq!(parse_response(&tie).unwrap().winner, Verdict::Tie);
}

/// Fails the first `failures` calls, then answers like the A-preferring stub.
struct Flaky {
    failures: usize,
    calls: Arc<AtomicUsize>,
}

impl Transport for Flaky {
    fn post(&self, body: &str) -> Result<String, String> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n < self.failures {
            Err(format!("connection reset ({n})"))
        } else {
            Ok(stub_reply(&StubPolicy::Prefer(Verdict::A), body))
        }
    }
}

fn flaky_client(failures: usize) -> (JudgeClient, Arc<AtomicUsize>, Arc<Mutex<Vec<Duration>>>) {
    let calls = Arc::new(AtomicUsize::new(0));
    let sleeps = Arc::new(Mutex::new(Vec::new()));
    let s = sleeps.clone();
    let c = JudgeClient::new(Flaky {
        failures,
        calls: calls.clone(),
    })
    .with_retry(RetryPolicy {
        attempts: 3,
        initial_backoff: Duration::from_millis(100),
        multiplier: 2.0,
    })
    .with_sleep(move |d| s.lock().unwrap().push(d));
    (c, calls, sleeps)
}

#[test]
fn retries_back_off_exponentially() {
    let req = JudgeRequest::new(&tiles(1, 2)[0], &tiles(1, 2)[0], "i").unwrap();
    let (c, calls, sleeps) = flaky_client(2);
    assert_eq!(c.judge(&req).unwrap().winner, Verdict::A);
    assert_eq!(calls.load(Ordering::SeqCst), 3);
    assert_eq!(*sleeps.lock().unwrap(), vec![Duration::from_millis(100), Duration::from_millis(200)]);

    let (c, calls, _) = flaky_client(3);
    match c.judge(&req).unwrap_err() {
        Error::Transport { attempts, last } => {
            assert_eq!(attempts, 3);
            assert!(last.contains("(2)"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(calls.load(Ordering::SeqCst), 3);
    assert_eq!(RetryPolicy::default().attempts, 3);
}

#[test]
fn loopback_server_round_trip() {
    let server = StubServer::spawn(StubPolicy::Prefer(Verdict::B), 0).unwrap();
    let http = HttpTransport::new(server.url(), Some("token".into()), Duration::from_secs(10));
    let c = JudgeClient::new(http).with_sleep(|_| {});
    let a = tiles(9, 4);
    let j = vision_judge_compare(&a, &a, "which is better", Layout::NineView, &c).unwrap();
    assert_eq!(j.winner, Verdict::B);
    assert_eq!(server.requests(), 1);
    let sent: JudgeRequest = serde_json::from_str(&server.last_body().unwrap()).unwrap();
    assert_eq!(sent.instruction, "which is better");
    for png in sent.decode_images().unwrap() {
        assert!(png.starts_with(b"\x89PNG"));
        assert_eq!(u32::from_be_bytes(png[16..20].try_into().unwrap()), 12);
        assert_eq!(u32::from_be_bytes(png[20..24].try_into().unwrap()), 12);
    }
}

#[test]
fn loopback_server_failures_are_retried() {
    let server = StubServer::spawn(StubPolicy::Prefer(Verdict::A), 2).unwrap();
    let c = JudgeClient::new(HttpTransport::new(server.url(), None, Duration::from_secs(10))).with_sleep(|_| {});
    let req = JudgeRequest::new(&tiles(1, 2)[0], &tiles(1, 2)[0], "i").unwrap();
    assert_eq!(c.judge(&req).unwrap().winner, Verdict::A);
    assert_eq!(server.requests(), 3);

    let server = StubServer::spawn(StubPolicy::Prefer(Verdict::A), 3).unwrap();
    let c = JudgeClient::new(HttpTransport::new(server.url(), None, Duration::from_secs(10))).with_sleep(|_| {});
    assert!(matches!(c.judge(&req), Err(Error::Transport { attempts: 3, .. })));
}

#[test]
fn environment_settings() {
    std::env::remove_var(coevo_eval::judge::ENDPOINT_ENV);
    assert!(matches!(HttpTransport::from_env(), Err(Error::MissingSetting(_))));
    std::env::set_var(coevo_eval::judge::ENDPOINT_ENV, "http://127.0.0.1:9/judge");
    std::env::set_var(coevo_eval::judge::TIMEOUT_ENV, "2.5");
    assert_eq!(HttpTransport::from_env().unwrap().endpoint(), "http://127.0.0.1:9/judge");
    std::env::set_var(coevo_eval::judge::TIMEOUT_ENV, "-1");
    assert!(HttpTransport::from_env().is_err());
    std::env::remove_var(coevo_eval::judge::TIMEOUT_ENV);
    std::env::remove_var(coevo_eval::judge::ENDPOINT_ENV);
}
