#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use axum::body::Body;
use axum::Router;
use crowdre_core::campaign::{self, Settings};
use crowdre_core::model::Label;
use crowdre_core::orchestrator::persist::{parse_log, read_log};
use crowdre_core::orchestrator::{Event, State};
use crowdre_core::simulator::{self, expected_answer, LabelSource, SimulationConfig, SyntheticCampaign, Truth, Worker};
use crowdre_core::ClusterName;
use crowdre_gateway::server::{build_app, ServeConfig};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

pub const ADMIN: &str = "admin-secret-token";
pub const SECRET: &str = "token-signing-secret";

/// A one-cluster campaign small enough to run over HTTP quickly.
pub fn small_config(seed: u64, sentences: usize) -> SimulationConfig {
    SimulationConfig {
        seed,
        sentences,
        workers: 8,
        labels: LabelSource::Cluster {
            name: "per2locmulti".into(),
        },
        wrong_type_fraction: 0.1,
        control_pool_size: 20,
        ..SimulationConfig::default()
    }
}

pub fn export(dir: &Path, cfg: &SimulationConfig) -> SyntheticCampaign {
    let synthetic = simulator::generate(cfg).expect("valid config");
    let settings = Settings {
        max_subset: cfg.max_subset,
        gate: cfg.gate.clone(),
        price_cents: cfg.price_cents,
    };
    campaign::write(dir, &synthetic.campaign(), &synthetic.dataset, &settings).expect("write campaign");
    synthetic
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

#[derive(Debug, Clone)]
pub struct Req {
    pub method: Method,
    pub path: String,
    pub bearer: Option<String>,
    pub body: Option<Value>,
    pub idempotency_key: Option<String>,
}

impl Req {
    pub fn get(path: impl Into<String>) -> Self {
        Req {
            method: Method::Get,
            path: path.into(),
            bearer: None,
            body: None,
            idempotency_key: None,
        }
    }

    pub fn post(path: impl Into<String>, body: Value) -> Self {
        Req {
            method: Method::Post,
            body: Some(body),
            ..Req::get(path)
        }
    }

    pub fn auth(mut self, token: &str) -> Self {
        self.bearer = Some(token.to_string());
        self
    }

    pub fn key(mut self, key: &str) -> Self {
        self.idempotency_key = Some(key.to_string());
        self
    }
}

#[derive(Debug, Clone)]
pub struct Resp {
    pub status: u16,
    pub body: String,
}

impl Resp {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.body).unwrap_or_else(|e| panic!("status {}: not JSON ({e}): {}", self.status, self.body))
    }
}

pub trait Transport {
    fn send(&mut self, req: &Req) -> Resp;
}

/// Drives the router directly, without a socket.
pub struct InProcess {
    pub rt: tokio::runtime::Runtime,
    pub router: Router,
}

pub fn serve_config(dir: &Path, seed: u64) -> ServeConfig {
    ServeConfig {
        host: "127.0.0.1".into(),
        port: 0,
        data_dir: dir.to_path_buf(),
        seed: Some(seed),
        admin_token: ADMIN.into(),
        token_secret: SECRET.into(),
        token_ttl_secs: 3600,
        logical_clock: true,
        sync: false,
        snapshot_every: 25,
    }
}

impl InProcess {
    pub fn open(cfg: &ServeConfig) -> Self {
        let app = build_app(cfg).expect("service opens");
        InProcess {
            rt: tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap(),
            router: crowdre_gateway::api::router(app),
        }
    }
}

impl Transport for InProcess {
    fn send(&mut self, req: &Req) -> Resp {
        let mut b = axum::http::Request::builder()
            .method(match req.method {
                Method::Get => "GET",
                Method::Post => "POST",
            })
            .uri(&req.path);
        if let Some(t) = &req.bearer {
            b = b.header("authorization", format!("Bearer {t}"));
        }
        if let Some(k) = &req.idempotency_key {
            b = b.header("idempotency-key", k);
        }
        let body = match &req.body {
            Some(v) => {
                b = b.header("content-type", "application/json");
                Body::from(v.to_string())
            }
            None => Body::empty(),
        };
        let request = b.body(body).unwrap();
        let router = self.router.clone();
        self.rt.block_on(async move {
            let resp = router.oneshot(request).await.unwrap();
            let status = resp.status().as_u16();
            let bytes = resp.into_body().collect().await.unwrap().to_bytes();
            Resp {
                status,
                body: String::from_utf8(bytes.to_vec()).unwrap(),
            }
        })
    }
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(20)))
        .build()
        .into()
}

pub fn remote_send(agent: &ureq::Agent, base: &str, req: &Req) -> Result<Resp, String> {
    let url = format!("{base}{}", req.path);
    let auth = req.bearer.as_ref().map(|t| format!("Bearer {t}"));
    let result = match req.method {
        Method::Get => {
            let mut r = agent.get(&url);
            if let Some(a) = &auth {
                r = r.header("authorization", a);
            }
            r.call()
        }
        Method::Post => {
            let mut r = agent.post(&url).header("content-type", "application/json");
            if let Some(a) = &auth {
                r = r.header("authorization", a);
            }
            if let Some(k) = &req.idempotency_key {
                r = r.header("idempotency-key", k);
            }
            r.send(req.body.as_ref().map(Value::to_string).unwrap_or_default())
        }
    };
    let mut resp = result.map_err(|e| e.to_string())?;
    let status = resp.status().as_u16();
    let body = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
    Ok(Resp { status, body })
}

/// The `crowdre serve` binary running on an ephemeral port.
pub struct ServerProc {
    child: Child,
    pub base: String,
}

impl ServerProc {
    pub fn spawn(dir: &Path, seed: u64, snapshot_every: u64) -> Self {
        let mut child = Command::new(env!("CARGO_BIN_EXE_crowdre"))
            .args(["serve", "--host", "127.0.0.1", "--port", "0", "--logical-clock", "true", "--sync", "true"])
            .arg("--data-dir")
            .arg(dir)
            .args(["--seed", &seed.to_string(), "--snapshot-every", &snapshot_every.to_string()])
            .env("CROWDRE_ADMIN_TOKEN", ADMIN)
            .env("CROWDRE_TOKEN_SECRET", SECRET)
            .env("CROWDRE_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn crowdre serve");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .expect("read listening line");
        let addr = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected server output: {line:?}"))
            .to_string();
        ServerProc {
            child,
            base: format!("http://{addr}"),
        }
    }

    /// SIGKILL, no chance to flush or clean up.
    pub fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for ServerProc {
    fn drop(&mut self) {
        self.kill();
    }
}

#[derive(Debug, Clone)]
pub struct KillRecord {
    pub request: usize,
    pub first_attempt_completed: bool,
    /// Events committed by the interrupted request before the kill.
    pub committed_by_victim: usize,
    pub committed_events: usize,
    pub discarded_bytes: u64,
    pub log_is_prefix: bool,
    pub recovered_digest_matches: bool,
}

/// An HTTP transport against a spawned server that, at chosen request
/// numbers, fires the request, SIGKILLs the server mid-flight, restarts it
/// and retries.
pub struct Remote {
    pub server: ServerProc,
    agent: ureq::Agent,
    dir: PathBuf,
    seed: u64,
    snapshot_every: u64,
    pub requests: usize,
    kill_at: BTreeSet<usize>,
    rng: ChaCha8Rng,
    max_delay_us: u64,
    reference: Vec<u8>,
    reference_events: Vec<Event>,
    pub kills: Vec<KillRecord>,
}

impl Remote {
    pub fn start(dir: &Path, seed: u64, snapshot_every: u64) -> Self {
        Remote {
            server: ServerProc::spawn(dir, seed, snapshot_every),
            agent: agent(),
            dir: dir.to_path_buf(),
            seed,
            snapshot_every,
            requests: 0,
            kill_at: BTreeSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            max_delay_us: 1,
            reference: Vec::new(),
            reference_events: Vec::new(),
            kills: Vec::new(),
        }
    }

    /// Kills land after a uniform delay in `[0, max_delay_us)` microseconds.
    pub fn with_kills(mut self, kill_at: BTreeSet<usize>, max_delay_us: u64, reference: Vec<u8>, rng_seed: u64) -> Self {
        self.max_delay_us = max_delay_us.max(1);
        let text = String::from_utf8(reference.clone()).unwrap();
        self.reference_events = parse_log(&text, Path::new("reference")).unwrap().events;
        self.reference = reference;
        self.kill_at = kill_at;
        self.rng = ChaCha8Rng::seed_from_u64(rng_seed);
        self
    }

    fn restart(&mut self) {
        self.server = ServerProc::spawn(&self.dir, self.seed, self.snapshot_every);
        self.agent = agent();
    }

    fn crash_and_retry(&mut self, req: &Req) -> Resp {
        let log_path = self.dir.join(campaign::LOG);
        let before = read_log(&log_path).map(|l| l.events.len()).unwrap_or(0);
        let base = self.server.base.clone();
        let r = req.clone();
        let handle = std::thread::spawn(move || remote_send(&agent(), &base, &r));
        std::thread::sleep(Duration::from_micros(self.rng.random_range(0..self.max_delay_us)));
        self.server.kill();
        let first = handle.join().unwrap();

        let loaded = read_log(&log_path).unwrap();
        let bytes = std::fs::read(&log_path).unwrap_or_default();
        let committed = &bytes[..loaded.committed_bytes as usize];
        let log_is_prefix = self.reference.starts_with(committed);

        self.restart();
        let n = loaded.events.len();
        let mut expected = State::default();
        for e in &self.reference_events[..n.min(self.reference_events.len())] {
            expected.apply(e).unwrap();
        }
        let digest = remote_send(&self.agent, &self.server.base, &Req::get("/v1/admin/digest").auth(ADMIN))
            .unwrap()
            .json();
        let recovered_digest_matches =
            digest["sha256"] == json!(expected.digest()) && digest["last_seq"] == json!(n as u64);
        self.kills.push(KillRecord {
            request: self.requests,
            first_attempt_completed: first.as_ref().is_ok_and(|r| r.status < 500),
            committed_by_victim: n - before,
            committed_events: n,
            discarded_bytes: (bytes.len() as u64).saturating_sub(loaded.committed_bytes),
            log_is_prefix,
            recovered_digest_matches,
        });
        match first {
            Ok(resp) if resp.status < 500 => resp,
            _ => remote_send(&self.agent, &self.server.base, req).expect("retry after restart"),
        }
    }
}

impl Transport for Remote {
    fn send(&mut self, req: &Req) -> Resp {
        self.requests += 1;
        if self.kill_at.contains(&self.requests) {
            return self.crash_and_retry(req);
        }
        remote_send(&self.agent, &self.server.base, req).unwrap_or_else(|e| panic!("{} {}: {e}", req.path, self.requests))
    }
}

enum Expected {
    Sentence(Truth),
    Control(Label),
}

struct SimWorker {
    id: String,
    sim: Worker,
    token: String,
    active: bool,
}

/// A simulated crowd speaking the public API. Answers depend only on the
/// HIT contents and each worker's own seeded stream, so a run is a pure
/// function of the campaign and the seed.
pub struct Driver<T> {
    pub transport: T,
    pub synthetic: SyntheticCampaign,
    oracle: HashMap<String, Expected>,
    workers: Vec<SimWorker>,
    pub hits_submitted: usize,
}

impl<T: Transport> Driver<T> {
    pub fn new(transport: T, cfg: &SimulationConfig) -> Self {
        let synthetic = simulator::generate(cfg).expect("valid config");
        let mut oracle = HashMap::new();
        for inst in &synthetic.dataset.instances {
            oracle.insert(inst.text(), Expected::Sentence(synthetic.truth[&inst.id].clone()));
        }
        for name in synthetic.plan.clusters.keys() {
            for c in synthetic.controls.for_cluster(name) {
                oracle.insert(c.instance.text(), Expected::Control(c.label.clone()));
            }
        }
        let workers = cfg
            .worker_kinds()
            .into_iter()
            .enumerate()
            .map(|(i, kind)| {
                let id = format!("w{i:02}");
                SimWorker {
                    sim: Worker::new(id.clone(), kind, cfg.seed, i as u64),
                    id,
                    token: String::new(),
                    active: true,
                }
            })
            .collect();
        Driver {
            transport,
            synthetic,
            oracle,
            workers,
            hits_submitted: 0,
        }
    }

    pub fn worker_ids(&self) -> Vec<String> {
        self.workers.iter().map(|w| w.id.clone()).collect()
    }

    pub fn token(&self, i: usize) -> String {
        self.workers[i].token.clone()
    }

    /// Registers every worker, opens sessions and passes the qualification
    /// test of every cluster that has sentences.
    pub fn setup(&mut self) {
        let clusters = self.synthetic.active_clusters();
        for i in 0..self.workers.len() {
            let id = self.workers[i].id.clone();
            let r = self.transport.send(
                &Req::post("/v1/annotators", json!({"annotator": id, "approved_count": 1000, "approval_rate": 0.99})).auth(ADMIN),
            );
            assert_eq!(r.status, 201, "{}", r.body);
            let r = self.transport.send(&Req::post("/v1/sessions", json!({ "annotator": id })));
            assert_eq!(r.status, 200, "{}", r.body);
            self.workers[i].token = r.json()["token"].as_str().unwrap().to_string();
            for c in &clusters {
                self.qualify(i, c);
            }
        }
    }

    pub fn qualify(&mut self, i: usize, cluster: &ClusterName) {
        let token = self.workers[i].token.clone();
        let r = self.transport.send(&Req::get(format!("/v1/qualifications/{cluster}")).auth(&token));
        assert_eq!(r.status, 200, "{}", r.body);
        let test = &self.synthetic.tests[cluster];
        assert_eq!(r.json()["questions"].as_array().unwrap().len(), test.questions.len());
        let answers: Vec<&str> = test.questions.iter().map(|q| q.correct.as_str()).collect();
        let r = self
            .transport
            .send(&Req::post(format!("/v1/qualifications/{cluster}"), json!({ "answers": answers })).auth(&token));
        assert_eq!(r.status, 200, "{}", r.body);
        assert_eq!(r.json()["result"], json!("passed"), "{}", r.body);
    }

    /// The worker's answers for a HIT payload.
    pub fn answers(&mut self, i: usize, view: &Value) -> Vec<String> {
        let cluster = self
            .synthetic
            .plan
            .cluster(&ClusterName::new(view["cluster"].as_str().unwrap()))
            .expect("known cluster")
            .clone();
        let stage = view["stage"].as_u64().unwrap() as usize;
        let choices: Vec<Label> = view["choices"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| Label::new(c["label"].as_str().unwrap()))
            .collect();
        view["sentences"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| {
                let expected = match &self.oracle[s["text"].as_str().unwrap()] {
                    Expected::Sentence(t) => expected_answer(&cluster, stage, t),
                    Expected::Control(l) => cluster.expected_answer(stage, l),
                };
                self.workers[i].sim.answer(&choices, &expected).as_str().to_string()
            })
            .collect()
    }

    /// One HIT for worker `i`; false when nothing was available.
    pub fn step(&mut self, i: usize) -> bool {
        let token = self.workers[i].token.clone();
        let r = self.transport.send(&Req::get("/v1/hits/next").auth(&token));
        match r.status {
            204 => return false,
            403 => {
                self.workers[i].active = false;
                return false;
            }
            200 => {}
            s => panic!("next hit: {s} {}", r.body),
        }
        let view = r.json();
        let answers = self.answers(i, &view);
        let hit = view["hit"].as_str().unwrap().to_string();
        let key = format!("{}:{hit}", self.workers[i].id);
        let r = self
            .transport
            .send(&Req::post(format!("/v1/hits/{hit}/responses"), json!({ "answers": answers })).auth(&token).key(&key));
        assert_eq!(r.status, 200, "submit {hit}: {}", r.body);
        self.hits_submitted += 1;
        if r.json()["suspended"] == json!(true) {
            self.workers[i].active = false;
        }
        true
    }

    /// Round-robin until a full pass makes no progress.
    pub fn run(&mut self) {
        loop {
            let mut progressed = false;
            for i in 0..self.workers.len() {
                if self.workers[i].active && self.step(i) {
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
    }
}
