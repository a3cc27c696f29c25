//! HTTP service hosting live games between a human in the browser and a
//! server-side agent. Finished games are appended to a JSONL dataset in the
//! same format the simulator writes.

pub mod error;
pub mod session;

use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use sarl_core::agents::{baseline, BASELINE_NAMES};
use sarl_core::episode::Demographics;
use sarl_core::harness::episode_line;
use sarl_core::{Action, AgentPolicy, Episode, GridConfig, PlannedAgent};

pub use error::ServiceError;
pub use session::{Session, Status, View};

pub const API_SCHEMA_VERSION: u32 = 1;

/// Named agents a session may be opened against.
#[derive(Clone, Default)]
pub struct AgentRegistry {
    agents: BTreeMap<String, Arc<dyn AgentPolicy>>,
}

impl AgentRegistry {
    pub fn with_baselines() -> Self {
        let mut reg = AgentRegistry::default();
        for name in BASELINE_NAMES {
            reg.insert(name, Arc::from(baseline(name).expect("built-in")));
        }
        reg
    }

    pub fn insert(&mut self, name: &str, agent: Arc<dyn AgentPolicy>) {
        self.agents.insert(name.to_string(), agent);
    }

    /// Registers a solved policy file under its stored name.
    pub fn load_policy(&mut self, path: &Path) -> sarl_core::Result<String> {
        let agent = PlannedAgent::from_json(&std::fs::read_to_string(path)?)?;
        let name = agent.name.clone();
        self.insert(&name, Arc::new(agent));
        Ok(name)
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn AgentPolicy>> {
        self.agents.get(name).cloned()
    }

    pub fn names(&self) -> Vec<String> {
        self.agents.keys().cloned().collect()
    }
}

/// Pre-game comprehension questions; part of deployment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuizQuestion {
    pub prompt: String,
    pub choices: Vec<String>,
    pub answer: usize,
}

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub grid: GridConfig,
    pub idle_timeout: Duration,
    pub dataset_path: PathBuf,
    pub static_dir: Option<PathBuf>,
    pub quiz: Vec<QuizQuestion>,
    pub seed: u64,
}

impl ServiceConfig {
    pub fn new(dataset_path: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            grid: GridConfig::default(),
            idle_timeout: Duration::from_secs(600),
            dataset_path: dataset_path.into(),
            static_dir: None,
            quiz: Vec::new(),
            seed: 0,
        }
    }
}

/// Appends episodes to the dataset file, one writer at a time.
pub struct DatasetStore {
    path: PathBuf,
    lock: Mutex<()>,
}

impl DatasetStore {
    pub fn new(path: PathBuf) -> Self {
        DatasetStore {
            path,
            lock: Mutex::new(()),
        }
    }

    pub fn append(&self, ep: &Episode) -> Result<(), ServiceError> {
        let line = episode_line(ep).map_err(|e| ServiceError::Storage(e.to_string()))?;
        let _guard = self.lock.lock().unwrap_or_else(|p| p.into_inner());
        let write = || -> std::io::Result<()> {
            let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
            f.write_all(format!("{line}\n").as_bytes())?;
            f.sync_data()
        };
        write().map_err(|e| ServiceError::Storage(e.to_string()))
    }
}

pub struct AppState {
    config: ServiceConfig,
    registry: AgentRegistry,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    store: DatasetStore,
    seeds: Mutex<ChaCha8Rng>,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl AppState {
    pub fn new(config: ServiceConfig, registry: AgentRegistry) -> Arc<AppState> {
        Arc::new(AppState {
            store: DatasetStore::new(config.dataset_path.clone()),
            seeds: Mutex::new(ChaCha8Rng::seed_from_u64(config.seed)),
            config,
            registry,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        lock(&self.sessions).get(id).cloned().ok_or(ServiceError::UnknownSession)
    }

    pub fn create(&self, opponent: &str, quiz_answers: Option<&[usize]>) -> Result<View, ServiceError> {
        if !self.config.quiz.is_empty() {
            let answers = quiz_answers.ok_or(ServiceError::QuizFailed)?;
            let expected: Vec<usize> = self.config.quiz.iter().map(|q| q.answer).collect();
            if answers != expected.as_slice() {
                return Err(ServiceError::QuizFailed);
            }
        }
        let agent = self
            .registry
            .get(opponent)
            .ok_or_else(|| ServiceError::UnknownAgent(opponent.to_string()))?;
        let seed = lock(&self.seeds).next_u64();
        // Ids come from the OS generator so they cannot be guessed from the
        // experiment seed.
        let id = format!("{:032x}", rand::rng().random::<u128>());
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let session = Session::new(
            id.clone(),
            opponent.to_string(),
            agent,
            self.config.grid,
            seed,
            created_at,
            Instant::now(),
        )?;
        let view = session.view();
        lock(&self.sessions).insert(id, Arc::new(Mutex::new(session)));
        Ok(view)
    }

    pub fn view(&self, id: &str) -> Result<View, ServiceError> {
        let session = self.session(id)?;
        let view = lock(&session).view();
        Ok(view)
    }

    pub fn act(&self, id: &str, action: Action) -> Result<View, ServiceError> {
        let session = self.session(id)?;
        let mut s = lock(&session);
        s.submit(action, Instant::now())
    }

    pub fn survey(
        &self,
        id: &str,
        responses: [u8; 5],
        demographics: Option<Demographics>,
    ) -> Result<bool, ServiceError> {
        let session = self.session(id)?;
        let mut s = lock(&session);
        s.set_survey(responses, demographics, Instant::now())?;
        self.finalize_locked(&mut s)
    }

    /// Writes the episode once. Returns false when it was already stored.
    pub fn finalize(&self, id: &str) -> Result<bool, ServiceError> {
        let session = self.session(id)?;
        let mut s = lock(&session);
        self.finalize_locked(&mut s)
    }

    fn finalize_locked(&self, s: &mut Session) -> Result<bool, ServiceError> {
        if s.is_finalized() {
            return Ok(false);
        }
        if s.status() == Status::Active {
            return Err(ServiceError::NotFinished);
        }
        self.store.append(&s.episode())?;
        s.mark_finalized();
        Ok(true)
    }

    /// Abandons idle games and stores every game that has been idle past the
    /// timeout (finished games whose survey never arrived included). Stored
    /// sessions are dropped from memory. Returns the ids stored.
    pub fn sweep(&self, now: Instant) -> Vec<String> {
        let timeout = self.config.idle_timeout;
        let all: Vec<Arc<Mutex<Session>>> = lock(&self.sessions).values().cloned().collect();
        let mut stored = Vec::new();
        let mut drop_ids = Vec::new();
        for session in all {
            let mut s = lock(&session);
            s.expire(now, timeout);
            if s.status() != Status::Active && s.idle_for(now) >= timeout {
                if !s.is_finalized() && matches!(self.finalize_locked(&mut s), Ok(true)) {
                    stored.push(s.id().to_string());
                }
                if s.is_finalized() {
                    drop_ids.push(s.id().to_string());
                }
            }
        }
        let mut map = lock(&self.sessions);
        for id in drop_ids {
            map.remove(&id);
        }
        stored
    }

    /// Abandons and stores every open game; used at shutdown.
    pub fn flush_all(&self) -> usize {
        let all: Vec<Arc<Mutex<Session>>> = lock(&self.sessions).values().cloned().collect();
        let mut n = 0;
        for session in all {
            let mut s = lock(&session);
            s.abandon();
            if matches!(self.finalize_locked(&mut s), Ok(true)) {
                n += 1;
            }
        }
        n
    }
}

#[derive(Serialize)]
struct AgentsBody {
    schema_version: u32,
    agents: Vec<String>,
}

#[derive(Serialize)]
struct QuizItem<'a> {
    prompt: &'a str,
    choices: &'a [String],
}

#[derive(Serialize)]
struct QuizBody<'a> {
    schema_version: u32,
    questions: Vec<QuizItem<'a>>,
}

#[derive(Deserialize)]
pub struct CreateRequest {
    pub opponent: String,
    #[serde(default)]
    pub quiz_answers: Option<Vec<usize>>,
}

#[derive(Deserialize)]
pub struct ActionRequest {
    pub action: Action,
}

#[derive(Deserialize)]
pub struct SurveyRequest {
    pub responses: [u8; 5],
    #[serde(default)]
    pub demographics: Option<Demographics>,
}

#[derive(Serialize)]
struct Ack {
    schema_version: u32,
    stored: bool,
}

type Shared = State<Arc<AppState>>;

async fn list_agents(State(app): Shared) -> Json<AgentsBody> {
    Json(AgentsBody {
        schema_version: API_SCHEMA_VERSION,
        agents: app.registry.names(),
    })
}

async fn get_quiz(State(app): Shared) -> axum::response::Response {
    use axum::response::IntoResponse;
    let questions = app
        .config
        .quiz
        .iter()
        .map(|q| QuizItem {
            prompt: &q.prompt,
            choices: &q.choices,
        })
        .collect();
    Json(QuizBody {
        schema_version: API_SCHEMA_VERSION,
        questions,
    })
    .into_response()
}

async fn create_session(
    State(app): Shared,
    Json(req): Json<CreateRequest>,
) -> Result<(StatusCode, Json<View>), ServiceError> {
    let view = app.create(&req.opponent, req.quiz_answers.as_deref())?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(app): Shared, UrlPath(id): UrlPath<String>) -> Result<Json<View>, ServiceError> {
    app.view(&id).map(Json)
}

async fn submit_action(
    State(app): Shared,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<ActionRequest>,
) -> Result<Json<View>, ServiceError> {
    app.act(&id, req.action).map(Json)
}

async fn submit_survey(
    State(app): Shared,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<SurveyRequest>,
) -> Result<Json<Ack>, ServiceError> {
    let stored = app.survey(&id, req.responses, req.demographics)?;
    Ok(Json(Ack {
        schema_version: API_SCHEMA_VERSION,
        stored,
    }))
}

async fn finalize_session(State(app): Shared, UrlPath(id): UrlPath<String>) -> Result<Json<Ack>, ServiceError> {
    let stored = app.finalize(&id)?;
    Ok(Json(Ack {
        schema_version: API_SCHEMA_VERSION,
        stored,
    }))
}

pub fn router(app: Arc<AppState>) -> Router {
    let static_dir = app.config.static_dir.clone();
    let api = Router::new()
        .route("/api/agents", get(list_agents))
        .route("/api/quiz", get(get_quiz))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/action", post(submit_action))
        .route("/api/sessions/{id}/survey", post(submit_survey))
        .route("/api/sessions/{id}/finalize", post(finalize_session))
        .with_state(app);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Runs the service until Ctrl-C, sweeping idle sessions in the background.
/// Open games are stored as abandoned on shutdown.
pub async fn serve(addr: SocketAddr, app: Arc<AppState>) -> std::io::Result<()> {
    serve_on(tokio::net::TcpListener::bind(addr).await?, app).await
}

/// As [`serve`], on an already bound listener.
pub async fn serve_on(listener: tokio::net::TcpListener, app: Arc<AppState>) -> std::io::Result<()> {
    let period = (app.config.idle_timeout / 4).clamp(Duration::from_secs(1), Duration::from_secs(30));
    let sweeper = {
        let app = app.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(period);
            loop {
                tick.tick().await;
                app.sweep(Instant::now());
            }
        })
    };
    let result = axum::serve(listener, router(app.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    sweeper.abort();
    app.flush_all();
    result
}
