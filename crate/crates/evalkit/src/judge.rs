//! Pairwise comparison of two assets by a vision-language judge.
//!
//! Each asset is rendered from four or nine viewpoints, tiled into one grid
//! image, and both grids are posted with an instruction as
//! `{"images": [png_base64, png_base64], "instruction": "..."}`. The judge
//! answers `{"winner", "criteria", "rationale"}`.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use base64::Engine as _;
use coevo_core::image::{png_bytes, Image};
use ndarray::{s, Array3};
use serde::{Deserialize, Serialize};

use crate::turntable::{render_turntable, Asset, TurntableConfig};
use crate::{Error, Result};

pub const INSTRUCTION_VERSION: &str = "judge-instruction-v1";
const INSTRUCTION_TEMPLATE: &str = include_str!("../templates/judge_instruction_v1.txt");

pub const ENDPOINT_ENV: &str = "COEVO_JUDGE_ENDPOINT";
pub const API_KEY_ENV: &str = "COEVO_JUDGE_API_KEY";
pub const TIMEOUT_ENV: &str = "COEVO_JUDGE_TIMEOUT_SECS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layout {
    #[serde(rename = "4-view")]
    FourView,
    #[serde(rename = "9-view")]
    NineView,
}

impl Layout {
    /// Tiles per grid row and column.
    pub fn side(self) -> usize {
        match self {
            Layout::FourView => 2,
            Layout::NineView => 3,
        }
    }

    pub fn views(self) -> usize {
        self.side() * self.side()
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "4" | "4-view" => Ok(Layout::FourView),
            "9" | "9-view" => Ok(Layout::NineView),
            other => Err(Error::InvalidArgument(format!("unknown judge layout `{other}`"))),
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-view", self.views())
    }
}

/// Row-major tiling of equal-sized views into a `side×side` grid.
pub fn compose_grid(tiles: &[Image], layout: Layout) -> Result<Image> {
    if tiles.len() != layout.views() {
        return Err(Error::InvalidArgument(format!(
            "{layout} grid needs {} views, got {}",
            layout.views(),
            tiles.len()
        )));
    }
    let dim = tiles[0].dim();
    if tiles.iter().any(|t| t.dim() != dim) {
        return Err(Error::InvalidArgument("grid tiles differ in shape".into()));
    }
    let (c, h, w) = dim;
    let n = layout.side();
    let mut grid = Array3::zeros((c, n * h, n * w));
    for (i, t) in tiles.iter().enumerate() {
        let (r, col) = (i / n, i % n);
        grid.slice_mut(s![.., r * h..(r + 1) * h, col * w..(col + 1) * w]).assign(t);
    }
    Ok(grid)
}

/// The grid for one asset, views evenly spaced in azimuth from the front.
pub fn render_layout(asset: Asset<'_>, layout: Layout, cfg: &TurntableConfig) -> Result<Image> {
    let cfg = TurntableConfig {
        n_azimuth: layout.views(),
        ..cfg.clone()
    };
    compose_grid(&render_turntable(asset, &cfg)?.items(), layout)
}

pub fn instruction(prompt: &str, layout: Layout) -> String {
    INSTRUCTION_TEMPLATE
        .replace("{prompt}", prompt)
        .replace("{views}", &layout.views().to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub images: [String; 2],
    pub instruction: String,
}

impl JudgeRequest {
    pub fn new(grid_a: &Image, grid_b: &Image, instruction: impl Into<String>) -> Result<Self> {
        let b64 = base64::engine::general_purpose::STANDARD;
        Ok(Self {
            images: [b64.encode(png_bytes(grid_a)?), b64.encode(png_bytes(grid_b)?)],
            instruction: instruction.into(),
        })
    }

    pub fn decode_images(&self) -> Result<[Vec<u8>; 2]> {
        let b64 = base64::engine::general_purpose::STANDARD;
        let decode = |s: &str| {
            b64.decode(s)
                .map_err(|e| Error::InvalidArgument(format!("bad base64 image: {e}")))
        };
        Ok([decode(&self.images[0])?, decode(&self.images[1])?])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "A", alias = "a")]
    A,
    #[serde(rename = "B", alias = "b")]
    B,
    #[serde(rename = "tie", alias = "Tie", alias = "TIE")]
    Tie,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::A => "A",
            Verdict::B => "B",
            Verdict::Tie => "tie",
        })
    }
}

impl FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Verdict::A),
            "B" | "b" => Ok(Verdict::B),
            "tie" | "Tie" | "TIE" => Ok(Verdict::Tie),
            other => Err(Error::InvalidArgument(format!("unknown verdict `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Criteria {
    pub text_asset_alignment: Verdict,
    pub plausibility_3d: Verdict,
    pub texture_details: Verdict,
}

impl Criteria {
    pub fn all(v: Verdict) -> Self {
        Self {
            text_asset_alignment: v,
            plausibility_3d: v,
            texture_details: v,
        }
    }

    pub fn majority(&self) -> Verdict {
        let all = [self.text_asset_alignment, self.plausibility_3d, self.texture_details];
        let a = all.iter().filter(|&&v| v == Verdict::A).count();
        let b = all.iter().filter(|&&v| v == Verdict::B).count();
        match a.cmp(&b) {
            std::cmp::Ordering::Greater => Verdict::A,
            std::cmp::Ordering::Less => Verdict::B,
            std::cmp::Ordering::Equal => Verdict::Tie,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgeResponse {
    pub winner: Verdict,
    pub criteria: Criteria,
    pub rationale: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseJudgment {
    pub winner: Verdict,
    pub criteria: Criteria,
    pub rationale: String,
    pub raw: String,
}

/// Parses a verdict, accepting a JSON object embedded in surrounding text.
pub fn parse_response(raw: &str) -> Result<PairwiseJudgment> {
    let parsed: JudgeResponse = match serde_json::from_str(raw) {
        Ok(r) => r,
        Err(first) => {
            let inner = match (raw.find('{'), raw.rfind('}')) {
                (Some(a), Some(b)) if a < b => &raw[a..=b],
                _ => "",
            };
            serde_json::from_str(inner).map_err(|_| Error::Parse {
                msg: first.to_string(),
                raw: raw.to_string(),
            })?
        }
    };
    if parsed.winner != Verdict::Tie && parsed.criteria.majority() != parsed.winner {
        return Err(Error::Inconsistent {
            winner: parsed.winner.to_string(),
            raw: raw.to_string(),
        });
    }
    Ok(PairwiseJudgment {
        winner: parsed.winner,
        criteria: parsed.criteria,
        rationale: parsed.rationale,
        raw: raw.to_string(),
    })
}

/// Carries one serialized request to the judge and returns the raw reply.
pub trait Transport: Send + Sync {
    fn post(&self, body: &str) -> std::result::Result<String, String>;
}

/// JSON over HTTP(S) POST.
pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            agent,
            endpoint: endpoint.into(),
            api_key,
        }
    }

    /// Endpoint, optional bearer key and timeout from the environment.
    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var(ENDPOINT_ENV).map_err(|_| Error::MissingSetting(ENDPOINT_ENV))?;
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        let timeout = match std::env::var(TIMEOUT_ENV) {
            Ok(v) => v
                .parse::<f64>()
                .ok()
                .filter(|t| *t > 0.0)
                .ok_or_else(|| Error::InvalidArgument(format!("{TIMEOUT_ENV} must be a positive number")))?,
            Err(_) => 60.0,
        };
        Ok(Self::new(endpoint, api_key, Duration::from_secs_f64(timeout)))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl Transport for HttpTransport {
    fn post(&self, body: &str) -> std::result::Result<String, String> {
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send(body).map_err(|e| e.to_string())?;
        resp.body_mut().read_to_string().map_err(|e| e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Wait before retry `k` (0-based).
    pub fn backoff(&self, k: u32) -> Duration {
        self.initial_backoff.mul_f64(self.multiplier.powi(k as i32))
    }
}

type Sleeper = Box<dyn Fn(Duration) + Send + Sync>;

/// Sends requests one at a time, retrying transport failures with
/// exponential backoff. Malformed replies are not retried.
pub struct JudgeClient {
    transport: Box<dyn Transport>,
    retry: RetryPolicy,
    sleep: Sleeper,
}

impl JudgeClient {
    pub fn new(transport: impl Transport + 'static) -> Self {
        Self {
            transport: Box::new(transport),
            retry: RetryPolicy::default(),
            sleep: Box::new(std::thread::sleep),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_sleep(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Box::new(sleep);
        self
    }

    pub fn judge(&self, request: &JudgeRequest) -> Result<PairwiseJudgment> {
        let body = serde_json::to_string(request).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for k in 0..attempts {
            if k > 0 {
                (self.sleep)(self.retry.backoff(k - 1));
            }
            match self.transport.post(&body) {
                Ok(raw) => return parse_response(&raw),
                Err(e) => last = e,
            }
        }
        Err(Error::Transport { attempts, last })
    }
}

/// Compares two assets given their renders in layout order.
pub fn vision_judge_compare(
    renders_a: &[Image],
    renders_b: &[Image],
    instruction: &str,
    layout: Layout,
    client: &JudgeClient,
) -> Result<PairwiseJudgment> {
    let a = compose_grid(renders_a, layout)?;
    let b = compose_grid(renders_b, layout)?;
    client.judge(&JudgeRequest::new(&a, &b, instruction)?)
}
