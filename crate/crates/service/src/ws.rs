use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use sparseemg::classifiers::{train, ClassifierSpec};
use sparseemg::dataset::{load_trials, DatasetManifest};
use sparseemg::features::build_feature_matrix;
use sparseemg::selection::Scheme;
use sparseemg::sweep::{filter_gestures, run_sweep_observed, Progress, SparsityConfig, SweepOptions, SweepResult, MIN_ELECTRODES};
use sparseemg::{ElectrodeId, Error, GestureId};
use tokio::sync::{mpsc, Notify};

use crate::protocol::{decode, encode, ClientMessage, ErrorBody, ServerMessage, SweepRequest};
use crate::{AppState, ModelStore, Registry, ServiceError};

pub(crate) async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, state))
}

#[derive(Default)]
struct CancelSignal {
    flag: AtomicBool,
    notify: Notify,
}

impl CancelSignal {
    fn cancel(&self) {
        self.flag.store(true, Ordering::SeqCst);
        self.notify.notify_one();
    }
}

struct RunningJob {
    cancel: Arc<CancelSignal>,
    events: mpsc::UnboundedReceiver<ServerMessage>,
}

async fn next_event(job: &mut Option<RunningJob>) -> Option<ServerMessage> {
    match job {
        Some(j) => j.events.recv().await,
        None => std::future::pending().await,
    }
}

async fn send(socket: &mut WebSocket, message: ServerMessage) -> bool {
    socket.send(Message::Text(encode(message).into())).await.is_ok()
}

fn error(body: ErrorBody) -> ServerMessage {
    ServerMessage::Error(body)
}

async fn connection(mut socket: WebSocket, state: AppState) {
    let mut job: Option<RunningJob> = None;
    loop {
        tokio::select! {
            incoming = socket.recv() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Binary(_))) => {
                        let body = ErrorBody { code: "bad_message".into(), message: "binary frames are not supported".into(), field: None };
                        if !send(&mut socket, error(body)).await { break; }
                        continue;
                    }
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                let reply = match decode(text.as_str()) {
                    Err(body) => Some(error(body)),
                    Ok(ClientMessage::Cancel) => {
                        if let Some(j) = &job {
                            j.cancel.cancel();
                        }
                        None
                    }
                    Ok(ClientMessage::SweepRequest(_)) if job.is_some() => Some(error(ErrorBody {
                        code: "busy".into(),
                        message: "a sweep is already running on this connection".into(),
                        field: None,
                    })),
                    Ok(ClientMessage::SweepRequest(req)) => match start(&state, req) {
                        Ok(running) => {
                            job = Some(running);
                            None
                        }
                        Err(e) => Some(error(e.body())),
                    },
                };
                if let Some(reply) = reply {
                    if !send(&mut socket, reply).await { break; }
                }
            }
            event = next_event(&mut job) => {
                let event = event.unwrap_or_else(|| error(ServiceError::Internal("sweep ended without a result".into()).body()));
                let terminal = event.is_terminal();
                if terminal {
                    job = None;
                }
                if !send(&mut socket, event).await { break; }
            }
        }
    }
    if let Some(j) = job {
        j.cancel.cancel();
    }
}

/// A request checked against its dataset and ready to run.
struct Plan {
    root: PathBuf,
    manifest: DatasetManifest,
    user: String,
    sessions: Vec<u32>,
    candidates: Vec<ElectrodeId>,
    scheme: Scheme,
    spec: ClassifierSpec,
    weights: SparsityConfig,
    options: SweepOptions,
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ServiceError {
    ServiceError::Engine(Error::Invalid {
        field: field.into(),
        reason: reason.into(),
    })
}

fn unique_members<T: Copy + Eq + std::hash::Hash + std::fmt::Display>(
    field: &str,
    values: &[T],
    exists: impl Fn(T) -> bool,
) -> Result<(), ServiceError> {
    let mut seen = HashSet::new();
    for (i, &v) in values.iter().enumerate() {
        if !exists(v) {
            return Err(invalid(format!("{field}[{i}]"), format!("{v} is not in the dataset")));
        }
        if !seen.insert(v) {
            return Err(invalid(format!("{field}[{i}]"), format!("{v} is listed twice")));
        }
    }
    Ok(())
}

fn plan(registry: &Registry, req: SweepRequest, threads: usize) -> Result<Plan, ServiceError> {
    let (root, manifest) = registry.get(&req.dataset)?;
    if !manifest.users.contains(&req.user) {
        return Err(invalid("user", format!("{:?} is not a user of {}", req.user, req.dataset)));
    }
    if req.gestures.is_empty() {
        return Err(invalid("gestures", "select at least one gesture"));
    }
    unique_members("gestures", &req.gestures, |g: GestureId| manifest.gesture(g).is_some())?;
    unique_members("candidate_electrodes", &req.candidate_electrodes, |e: ElectrodeId| {
        manifest.electrode(e).is_some()
    })?;
    let candidates = if req.candidate_electrodes.is_empty() {
        manifest.electrode_ids()
    } else {
        req.candidate_electrodes
    };
    if candidates.len() < MIN_ELECTRODES {
        return Err(invalid("candidate_electrodes", "select at least 2 electrodes"));
    }
    if req.max_electrodes < MIN_ELECTRODES {
        return Err(invalid("max_electrodes", "must be at least 2"));
    }
    let weights = req.weights.unwrap_or_default();
    weights.validate()?;
    let sessions = match req.sessions {
        None => manifest.sessions(),
        Some(s) if s.is_empty() => return Err(invalid("sessions", "select at least one session")),
        Some(s) => {
            unique_members("sessions", &s, |x: u32| (1..=manifest.sessions_per_user).contains(&x))?;
            s
        }
    };
    let spec = ClassifierSpec::new(req.classifier, req.seed);
    let options = SweepOptions::new(req.max_electrodes, req.seed)
        .with_gestures(req.gestures)
        .with_workers(threads);
    Ok(Plan {
        root: root.to_path_buf(),
        manifest: manifest.clone(),
        user: req.user,
        sessions,
        candidates,
        scheme: req.scheme,
        spec,
        weights,
        options,
    })
}

fn start(state: &AppState, req: SweepRequest) -> Result<RunningJob, ServiceError> {
    let plan = plan(&state.registry, req, state.threads_per_job)?;
    let (tx, rx) = mpsc::unbounded_channel();
    let cancel = Arc::new(CancelSignal::default());
    let jobs = state.jobs.clone();
    let models = state.models.clone();
    let signal = cancel.clone();
    tokio::spawn(async move {
        let permit = tokio::select! {
            permit = jobs.acquire_owned() => permit,
            _ = signal.notify.notified() => {
                let _ = tx.send(ServerMessage::Cancelled);
                return;
            }
        };
        let Ok(_permit) = permit else {
            let _ = tx.send(error(ServiceError::Internal("worker pool closed".into()).body()));
            return;
        };
        let progress = tx.clone();
        let flag = signal.clone();
        let outcome = tokio::task::spawn_blocking(move || execute(&plan, &flag.flag, &progress, &models)).await;
        let terminal = match outcome {
            Ok(Ok((result, model_id))) => ServerMessage::Result {
                result: Box::new(result),
                model_id,
            },
            Ok(Err(ServiceError::Engine(Error::Cancelled))) => ServerMessage::Cancelled,
            Ok(Err(e)) => error(e.body()),
            Err(join) => error(ServiceError::Internal(format!("sweep failed: {join}")).body()),
        };
        let _ = tx.send(terminal);
    });
    Ok(RunningJob { cancel, events: rx })
}

fn execute(
    plan: &Plan,
    cancel: &AtomicBool,
    events: &mpsc::UnboundedSender<ServerMessage>,
    models: &ModelStore,
) -> Result<(SweepResult, String), ServiceError> {
    let trials = load_trials(&plan.manifest, &plan.root, &plan.user, &plan.sessions)?;
    let mut progress = Progress {
        on_point: |p: &sparseemg::sweep::SweepPoint| {
            let _ = events.send(ServerMessage::Progress {
                electrode_count: p.electrode_count,
                accuracy: p.accuracy,
            });
        },
        cancel: Some(cancel),
    };
    let result = run_sweep_observed(
        &trials,
        &plan.candidates,
        plan.scheme,
        &plan.spec,
        &plan.weights,
        &plan.options,
        &mut progress,
    )?;
    if cancel.load(Ordering::SeqCst) {
        return Err(Error::Cancelled.into());
    }
    let trials = filter_gestures(&trials, &plan.options.gestures)?;
    let features = build_feature_matrix(&trials, &result.chosen.electrodes)?;
    let model = train(&plan.spec, &features)?;
    let model_id = models.put(&model)?;
    Ok((result, model_id))
}
