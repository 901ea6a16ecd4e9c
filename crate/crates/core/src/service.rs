//! Local JSON-over-HTTP API for interactive sessions.
//!
//! | method | path | purpose |
//! |---|---|---|
//! | POST | `/sessions` | create a session (`{"m": 19, "config": {...}}`, both optional) |
//! | GET | `/sessions/{id}` | session summary |
//! | GET | `/sessions/{id}/gallery?count=&round=` | gallery to score |
//! | POST | `/sessions/{id}/scores` | add scores (`{"samples": [{"params": [...], "score": 7}]}`) |
//! | POST | `/sessions/{id}/fit` | fit the preference model |
//! | GET | `/sessions/{id}/recommendations?threshold=&count=` | recommendations |
//! | POST | `/sessions/{id}/latent` | fit the latent model (`{"threshold": 5, "z": 16}`, optional) |
//! | GET | `/sessions/{id}/grids/{kind}?r=&reference=` | preference, similarity or product grid |
//! | GET | `/sessions/{id}/query?kind=&r=&x=&y=` | bilinear grid query |
//! | POST | `/sessions/{id}/preview` | decoder preview for `{"latent": [x, y]}` or `{"params": [...]}` |
//! | POST | `/sessions/{id}/decoder` | load a network (`{"network": "<base64>"}`) |
//! | POST | `/render` | reference render (`{"params": [...], "res": 32}`) |
//! | GET | `/sessions/{id}/export` | session document |
//! | POST | `/sessions/import` | load a session document |
//!
//! Errors carry `{"error": {"code": ..., "message": ...}}` with a 4xx status
//! for anything the caller can fix; 409 `not_fitted` means a model the
//! request needs does not exist yet. Fits never modify a model in place:
//! each one installs a new generation, and grid responses name the
//! generation they were computed from.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use base64::Engine as _;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::decoder::{read_network, DecoderNetwork};
use crate::error::{GmsError, Result};
use crate::gp::PreferenceModel;
use crate::gplvm::LatentPoint;
use crate::maps::{combined_product, preference_map, query_bilinear, similarity_map, GridKind, LatentGrid};
use crate::material::{MaterialParams, PreferenceSample, DEFAULT_DIM};
use crate::recommend::{recommend, RecommendationConfig};
use crate::render::{render_reference, ImageBuffer, DEFAULT_RES};
use crate::seed;
use crate::session::{fit_latent_model, fit_preference_model, high_scorers, Session, SessionConfig, SessionDocument};

#[derive(Clone, Debug, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Value,
}

impl ApiResponse {
    fn ok(body: Value) -> Self {
        Self { status: 200, body }
    }

    fn error(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({"error": {"code": code, "message": message.into()}}),
        }
    }

    /// Machine-readable error code, if this is an error response.
    pub fn error_code(&self) -> Option<&str> {
        self.body.get("error")?.get("code")?.as_str()
    }
}

impl From<GmsError> for ApiResponse {
    fn from(e: GmsError) -> Self {
        let msg = e.to_string();
        match e {
            GmsError::InvalidDimension(_) => Self::error(400, "invalid_dimension", msg),
            GmsError::DimensionMismatch { .. } => Self::error(400, "dimension_mismatch", msg),
            GmsError::OutOfRange(_) => Self::error(400, "out_of_range", msg),
            GmsError::Parse(_) | GmsError::Json(_) => Self::error(400, "bad_request", msg),
            GmsError::NotFitted(_) => Self::error(409, "not_fitted", msg),
            GmsError::InsufficientSamples { .. } => Self::error(422, "insufficient_samples", msg),
            GmsError::DegenerateData(_) => Self::error(422, "degenerate_data", msg),
            GmsError::NotPositiveDefinite { .. } => Self::error(422, "not_positive_definite", msg),
            GmsError::UndefinedDistribution(_) => Self::error(422, "undefined_distribution", msg),
            GmsError::BudgetExhausted { partial } => {
                let mut r = Self::error(422, "budget_exhausted", msg);
                r.body["error"]["accepted"] = json!(partial.items.len());
                r.body["error"]["acceptance_rate"] = json!(partial.acceptance_rate);
                r
            }
            GmsError::NonFiniteLoss { .. } | GmsError::Io(_) => Self::error(500, "internal", msg),
        }
    }
}

type GridKey = (GridKind, usize, Option<Vec<u64>>);

struct CachedGrid {
    grid: Arc<LatentGrid>,
    generation: u64,
}

struct Slot {
    state: Mutex<Session>,
    /// Serializes fits so each session has a single writer.
    fit_lock: Mutex<()>,
    grids: Mutex<HashMap<GridKey, CachedGrid>>,
}

/// Request router; holds every live session.
pub struct Api {
    sessions: Mutex<BTreeMap<String, Arc<Slot>>>,
    next_id: AtomicU64,
    defaults: SessionConfig,
    default_decoder: Option<Arc<DecoderNetwork>>,
}

fn parse_query(query: &str) -> HashMap<String, String> {
    query
        .split('&')
        .filter(|p| !p.is_empty())
        .map(|p| match p.split_once('=') {
            Some((k, v)) => (k.to_string(), v.replace("%2C", ",").replace("%2c", ",")),
            None => (p.to_string(), String::new()),
        })
        .collect()
}

fn param<T: std::str::FromStr>(q: &HashMap<String, String>, key: &str) -> Result<Option<T>> {
    q.get(key)
        .map(|v| v.parse::<T>().map_err(|_| GmsError::Parse(format!("query parameter {key}={v:?} is invalid"))))
        .transpose()
}

fn body<'a, T: Deserialize<'a>>(bytes: &'a [u8]) -> Result<T> {
    let bytes = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}" } else { bytes };
    Ok(serde_json::from_slice(bytes)?)
}

fn image_json(img: &ImageBuffer) -> Value {
    json!({
        "width": img.width,
        "height": img.height,
        "ppm_base64": base64::engine::general_purpose::STANDARD.encode(img.to_ppm()),
    })
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| GmsError::Parse(format!("bad number {t:?}"))))
        .collect()
}

#[derive(Deserialize, Default)]
struct CreateBody {
    m: Option<usize>,
    config: Option<SessionConfig>,
}

#[derive(Deserialize)]
struct ScoredItem {
    params: Vec<f64>,
    score: f64,
}

#[derive(Deserialize)]
struct ScoresBody {
    samples: Vec<ScoredItem>,
}

#[derive(Deserialize, Default)]
struct LatentBody {
    threshold: Option<f64>,
    z: Option<usize>,
}

#[derive(Deserialize, Default)]
struct PreviewBody {
    latent: Option<LatentPoint>,
    params: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct DecoderBody {
    network: String,
}

#[derive(Deserialize)]
struct RenderBody {
    params: Vec<f64>,
    res: Option<usize>,
    noise: Option<f64>,
    seed: Option<u64>,
}

impl Api {
    pub fn new(defaults: SessionConfig, default_decoder: Option<Arc<DecoderNetwork>>) -> Self {
        Self {
            sessions: Mutex::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
            defaults,
            default_decoder,
        }
    }

    /// Routes one request. `target` is the path with optional query string.
    pub fn handle(&self, method: &str, target: &str, body: &[u8]) -> ApiResponse {
        let (path, query_string) = target.split_once('?').unwrap_or((target, ""));
        let q = parse_query(query_string);
        let parts: Vec<&str> = path.trim_matches('/').split('/').filter(|s| !s.is_empty()).collect();
        let result = match (method, parts.as_slice()) {
            ("POST", ["sessions"]) => self.create(body),
            ("POST", ["sessions", "import"]) => self.import(body),
            ("POST", ["render"]) => render(body),
            (_, ["sessions", id, rest @ ..]) => match self.slot(id) {
                None => return ApiResponse::error(404, "not_found", format!("no session {id:?}")),
                Some(slot) => match (method, rest) {
                    ("GET", []) => summary(&slot),
                    ("GET", ["gallery"]) => gallery(&slot, &q),
                    ("POST", ["scores"]) => scores(&slot, body),
                    ("POST", ["fit"]) => fit(&slot),
                    ("GET", ["recommendations"]) => recommendations(&slot, &q),
                    ("POST", ["latent"]) => latent(&slot, body),
                    ("GET", ["grids", kind]) => grid(&slot, kind, &q),
                    ("GET", ["query"]) => query(&slot, &q),
                    ("POST", ["preview"]) => preview(&slot, body),
                    ("POST", ["decoder"]) => load_decoder(&slot, body),
                    ("GET", ["export"]) => Ok(ApiResponse::ok(json!(slot.state.lock().unwrap().export()))),
                    _ => return ApiResponse::error(404, "not_found", format!("no route {method} {path}")),
                },
            },
            _ => return ApiResponse::error(404, "not_found", format!("no route {method} {path}")),
        };
        result.unwrap_or_else(ApiResponse::from)
    }

    fn slot(&self, id: &str) -> Option<Arc<Slot>> {
        self.sessions.lock().unwrap().get(id).cloned()
    }

    fn insert(&self, mut session: Session) -> Result<ApiResponse> {
        if session.decoder().is_none() {
            if let Some(net) = &self.default_decoder {
                if net.input_len() == session.m() {
                    session.set_decoder(net.clone())?;
                }
            }
        }
        let id = session.id.clone();
        let m = session.m();
        let slot = Arc::new(Slot {
            state: Mutex::new(session),
            fit_lock: Mutex::new(()),
            grids: Mutex::new(HashMap::new()),
        });
        self.sessions.lock().unwrap().insert(id.clone(), slot);
        Ok(ApiResponse {
            status: 201,
            body: json!({"id": id, "m": m}),
        })
    }

    fn create(&self, bytes: &[u8]) -> Result<ApiResponse> {
        let b: CreateBody = body(bytes)?;
        let n = self.next_id.fetch_add(1, Ordering::Relaxed);
        let mut config = b.config.unwrap_or_else(|| self.defaults.clone());
        if config.seed == 0 {
            config.seed = seed::derive_indexed(self.defaults.seed, "session", n);
        }
        self.insert(Session::new(format!("s{n}"), b.m.unwrap_or(DEFAULT_DIM), config)?)
    }

    fn import(&self, bytes: &[u8]) -> Result<ApiResponse> {
        let doc: SessionDocument = body(bytes)?;
        let mut session = Session::import(&doc)?;
        if self.sessions.lock().unwrap().contains_key(&session.id) {
            session.id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        }
        self.insert(session)
    }
}

fn summary(slot: &Slot) -> Result<ApiResponse> {
    let s = slot.state.lock().unwrap();
    Ok(ApiResponse::ok(json!({
        "id": s.id,
        "m": s.m(),
        "samples": s.samples().len(),
        "sample_generation": s.sample_generation(),
        "generation": s.fit_generation(),
        "preference_fitted": s.preference().is_some(),
        "preference_current": s.preference_is_current(),
        "latent_fitted": s.latent().is_some(),
        "decoder_loaded": s.decoder().is_some(),
        "config": s.config,
    })))
}

fn gallery(slot: &Slot, q: &HashMap<String, String>) -> Result<ApiResponse> {
    let count = param(q, "count")?.unwrap_or(20usize);
    let round = param(q, "round")?.unwrap_or(0u64);
    if count == 0 || count > 100_000 {
        return Err(GmsError::OutOfRange("count must be in 1..=100000".into()));
    }
    let items = slot.state.lock().unwrap().gallery(count, round)?;
    Ok(ApiResponse::ok(json!({ "round": round, "items": items })))
}

fn scores(slot: &Slot, bytes: &[u8]) -> Result<ApiResponse> {
    let b: ScoresBody = body(bytes)?;
    let samples = b
        .samples
        .into_iter()
        .map(|s| PreferenceSample::new(MaterialParams::new(s.params)?, s.score))
        .collect::<Result<Vec<_>>>()?;
    let mut s = slot.state.lock().unwrap();
    let count = s.add_scores(samples)?;
    Ok(ApiResponse::ok(json!({"count": count, "sample_generation": s.sample_generation()})))
}

fn fit(slot: &Slot) -> Result<ApiResponse> {
    let _writer = slot.fit_lock.lock().unwrap();
    let (samples, m, config, source) = {
        let s = slot.state.lock().unwrap();
        (s.samples().to_vec(), s.m(), s.config.clone(), s.sample_generation())
    };
    let model = Arc::new(fit_preference_model(&samples, m, &config)?);
    let mut s = slot.state.lock().unwrap();
    s.install_preference(model.clone(), source);
    let k = model.kernel();
    Ok(ApiResponse::ok(json!({
        "generation": s.fit_generation(),
        "n": model.n(),
        "log_likelihood": model.log_marginal_likelihood(),
        "kernel": {
            "signal_variance": k.signal_variance(),
            "length_scales": k.length_scales(),
            "noise": k.noise(),
        },
    })))
}

fn recommendations(slot: &Slot, q: &HashMap<String, String>) -> Result<ApiResponse> {
    let (model, config, generation) = {
        let s = slot.state.lock().unwrap();
        let model = s.preference().cloned().ok_or(GmsError::NotFitted("preference model"))?;
        (model, s.config.clone(), s.fit_generation())
    };
    let threshold = param(q, "threshold")?.unwrap_or(config.threshold);
    if !(0.0..=10.0).contains(&threshold) {
        return Err(GmsError::OutOfRange(format!("threshold {threshold} is outside [0, 10]")));
    }
    let cfg = RecommendationConfig {
        threshold,
        count: param(q, "count")?.unwrap_or(config.recommendation_count),
        budget: param(q, "budget")?.unwrap_or(RecommendationConfig::default().budget),
        seed: param(q, "seed")?.unwrap_or_else(|| seed::derive(config.seed, "recommend")),
        ..Default::default()
    };
    let set = recommend(&model, &cfg)?;
    Ok(ApiResponse::ok(json!({
        "generation": generation,
        "threshold": threshold,
        "items": set.items,
        "acceptance_rate": set.acceptance_rate,
        "proposals": set.proposals,
        "hillclimb_invocations": set.hillclimb_invocations,
    })))
}

fn latent(slot: &Slot, bytes: &[u8]) -> Result<ApiResponse> {
    let b: LatentBody = body(bytes)?;
    let _writer = slot.fit_lock.lock().unwrap();
    let (samples, config, source) = {
        let s = slot.state.lock().unwrap();
        (s.samples().to_vec(), s.config.clone(), s.sample_generation())
    };
    let threshold = b.threshold.unwrap_or(config.threshold);
    let model = Arc::new(fit_latent_model(&samples, threshold, b.z.unwrap_or(config.latent_count))?);
    let mut s = slot.state.lock().unwrap();
    s.install_latent(model.clone(), source);
    Ok(ApiResponse::ok(json!({
        "generation": s.fit_generation(),
        "z": model.z(),
        "latents": model.latents(),
        "log_likelihood": model.log_likelihood(),
    })))
}

fn reference_key(reference: &MaterialParams) -> Vec<u64> {
    reference.as_slice().iter().map(|v| v.to_bits()).collect()
}

/// Returns the requested grid, computing it for the current generation if
/// it is not cached yet.
fn grid_for(slot: &Slot, kind: GridKind, q: &HashMap<String, String>) -> Result<(Arc<LatentGrid>, u64)> {
    let (pref, lat, net, config, generation, samples) = {
        let s = slot.state.lock().unwrap();
        (
            s.preference().cloned(),
            s.latent().cloned(),
            s.decoder().cloned(),
            s.config.clone(),
            s.fit_generation(),
            s.samples().to_vec(),
        )
    };
    let lat = lat.ok_or(GmsError::NotFitted("latent model"))?;
    let default_r = match kind {
        GridKind::Similarity => config.similarity_res,
        _ => config.preference_res,
    };
    let r = param(q, "r")?.unwrap_or(default_r);
    if !(2..=512).contains(&r) {
        return Err(GmsError::OutOfRange("r must be in 2..=512".into()));
    }
    let reference = match q.get("reference") {
        Some(list) => Some(MaterialParams::new(parse_list(list)?)?),
        None => high_scorers(&samples, config.threshold, 1)
            .into_iter()
            .next()
            .map(|s| s.params)
            .or_else(|| lat.observed().first().cloned()),
    };
    let key: GridKey = (
        kind,
        r,
        (kind != GridKind::Preference).then(|| reference.as_ref().map(reference_key).unwrap_or_default()),
    );
    if let Some(c) = slot.grids.lock().unwrap().get(&key) {
        if c.generation == generation {
            return Ok((c.grid.clone(), generation));
        }
    }
    let need_pref = || -> Result<Arc<PreferenceModel>> { pref.clone().ok_or(GmsError::NotFitted("preference model")) };
    let need_sim = |res: usize| -> Result<LatentGrid> {
        let net = net.clone().ok_or(GmsError::NotFitted("decoder network"))?;
        let reference = reference.clone().ok_or(GmsError::NotFitted("reference material"))?;
        similarity_map(&net, &lat, &reference, res)
    };
    let grid = match kind {
        GridKind::Preference => preference_map(&*need_pref()?, &lat, r)?,
        GridKind::Similarity => need_sim(r)?,
        GridKind::Product => combined_product(&preference_map(&*need_pref()?, &lat, r)?, &need_sim(config.similarity_res)?)?,
    };
    let grid = Arc::new(grid);
    slot.grids.lock().unwrap().insert(
        key,
        CachedGrid {
            grid: grid.clone(),
            generation,
        },
    );
    Ok((grid, generation))
}

fn grid(slot: &Slot, kind: &str, q: &HashMap<String, String>) -> Result<ApiResponse> {
    let kind: GridKind = kind.parse()?;
    let (grid, generation) = grid_for(slot, kind, q)?;
    let (min, max) = grid.min_max();
    Ok(ApiResponse::ok(json!({
        "generation": generation,
        "grid": *grid,
        "min": min,
        "max": max,
    })))
}

fn query(slot: &Slot, q: &HashMap<String, String>) -> Result<ApiResponse> {
    let kind: GridKind = q.get("kind").map(String::as_str).unwrap_or("product").parse()?;
    let x: f64 = param(q, "x")?.ok_or_else(|| GmsError::Parse("missing x".into()))?;
    let y: f64 = param(q, "y")?.ok_or_else(|| GmsError::Parse("missing y".into()))?;
    let (grid, generation) = grid_for(slot, kind, q)?;
    let r = query_bilinear(&grid, &[x, y]);
    Ok(ApiResponse::ok(json!({
        "generation": generation,
        "value": r.value,
        "clamped": r.clamped,
    })))
}

fn preview(slot: &Slot, bytes: &[u8]) -> Result<ApiResponse> {
    let b: PreviewBody = body(bytes)?;
    let (lat, net) = {
        let s = slot.state.lock().unwrap();
        (s.latent().cloned(), s.decoder().cloned())
    };
    let net = net.ok_or(GmsError::NotFitted("decoder network"))?;
    let (params, variance) = match (b.latent, b.params) {
        (Some(l), None) => {
            let lat = lat.ok_or(GmsError::NotFitted("latent model"))?;
            if l.iter().any(|v| !v.is_finite()) {
                return Err(GmsError::OutOfRange("latent point must be finite".into()));
            }
            let p = lat.project(&l);
            (p.params, Some(p.variance))
        }
        (None, Some(p)) => (MaterialParams::new(p)?, None),
        _ => return Err(GmsError::Parse("give exactly one of `latent` or `params`".into())),
    };
    let img = net.forward(&params)?;
    Ok(ApiResponse::ok(json!({
        "params": params,
        "variance": variance,
        "image": image_json(&img),
    })))
}

fn load_decoder(slot: &Slot, bytes: &[u8]) -> Result<ApiResponse> {
    let b: DecoderBody = body(bytes)?;
    let blob = base64::engine::general_purpose::STANDARD
        .decode(b.network)
        .map_err(|e| GmsError::Parse(format!("network: {e}")))?;
    let net: DecoderNetwork = read_network(&blob[..])?;
    let params = net.parameter_count();
    slot.state.lock().unwrap().set_decoder(Arc::new(net))?;
    slot.grids.lock().unwrap().clear();
    Ok(ApiResponse::ok(json!({"parameters": params})))
}

fn render(bytes: &[u8]) -> Result<ApiResponse> {
    let b: RenderBody = body(bytes)?;
    let res = b.res.unwrap_or(DEFAULT_RES);
    if res > 512 {
        return Err(GmsError::OutOfRange("res must be at most 512".into()));
    }
    let img = render_reference(&MaterialParams::new(b.params)?, res, b.noise.unwrap_or(0.0), b.seed.unwrap_or(0))?;
    Ok(ApiResponse::ok(json!({ "image": image_json(&img) })))
}

/// A running HTTP server; dropping it does not stop it, call
/// [`shutdown`](Self::shutdown).
pub struct RunningServer {
    server: Arc<tiny_http::Server>,
    workers: Vec<JoinHandle<()>>,
    addr: SocketAddr,
}

impl RunningServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers {
            let _ = w.join();
        }
    }

    /// Blocks until the workers exit.
    pub fn join(self) {
        for w in self.workers {
            let _ = w.join();
        }
    }
}

/// Serves `api` on `addr` with `workers` request threads.
pub fn start(api: Arc<Api>, addr: &str, workers: usize) -> Result<RunningServer> {
    let server = Arc::new(tiny_http::Server::http(addr).map_err(|e| GmsError::Io(std::io::Error::other(e.to_string())))?);
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| GmsError::Io(std::io::Error::other("server is not bound to an IP address")))?;
    let workers = (0..workers.max(1))
        .map(|_| {
            let server = server.clone();
            let api = api.clone();
            std::thread::spawn(move || {
                while let Ok(mut req) = server.recv() {
                    let mut body = Vec::new();
                    let resp = match req.as_reader().read_to_end(&mut body) {
                        Ok(_) => api.handle(req.method().as_str(), req.url(), &body),
                        Err(e) => ApiResponse::error(400, "bad_request", e.to_string()),
                    };
                    log::debug!("{} {} -> {}", req.method(), req.url(), resp.status);
                    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
                    let out = tiny_http::Response::from_string(resp.body.to_string())
                        .with_status_code(resp.status)
                        .with_header(header);
                    let _ = req.respond(out);
                }
            })
        })
        .collect();
    Ok(RunningServer { server, workers, addr })
}
