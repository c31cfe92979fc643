use std::collections::BTreeMap;
use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use serde_json::json;
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc::{unbounded_channel, UnboundedReceiver, UnboundedSender};
use tokio::sync::oneshot;
use tokio::time::MissedTickBehavior;

use crate::clock::{Clock, SystemClock, Timestamp};
use crate::jobspec::{parse_script, NormalizeOptions};
use crate::runtime::{
    launch_job, poll_walltime, Attachment, ClientId, JobExit, RunningJob, SessionExit,
    SessionRegistry, StreamEvent,
};
use crate::sched::{ClusterState, JobId, JobState, Outcome, Policy};

use super::config::DaemonConfig;
use super::journal::{recover, Journal, JournalEvent, SESSION_LOST};
use super::protocol::{
    decode_request, encode_line, AttachInfo, Code, Frame, Request, Response, MAX_LINE,
};
use super::DaemonError;

/// A bound daemon, ready to [`run`](Daemon::run).
pub struct Daemon {
    listener: TcpListener,
    token: Arc<str>,
    tick: std::time::Duration,
    core: Core,
    events: UnboundedReceiver<Event>,
}

/// Completion notices from supervisor threads.
enum Event {
    Job(JobExit),
    Session(SessionExit),
}

struct Command {
    request: Request,
    /// Set when the request comes from a connection attached as this client.
    attached_as: Option<ClientId>,
    reply: oneshot::Sender<Reply>,
}

enum Reply {
    Response(Response),
    Attached(Response, Attachment),
}

/// Everything the command loop owns. Only this loop mutates state or
/// writes the journal.
struct Core {
    state: ClusterState,
    journal: Journal,
    sessions: SessionRegistry,
    running: BTreeMap<JobId, RunningJob>,
    clock: Arc<dyn Clock>,
    workdir: PathBuf,
    events: UnboundedSender<Event>,
}

impl Daemon {
    /// Recovers the journal, binds the listen address, then records the
    /// recovery outcome in the journal.
    pub async fn bind(config: DaemonConfig) -> Result<Self, DaemonError> {
        Self::bind_with_clock(config, None).await
    }

    /// As [`bind`](Daemon::bind), with a caller-supplied clock.
    pub async fn bind_with_clock(
        config: DaemonConfig,
        clock: Option<Arc<dyn Clock>>,
    ) -> Result<Self, DaemonError> {
        config.validate()?;
        let policy = Policy {
            backfill: config.backfill,
        };
        let recovered = recover(&config.journal, config.inventory(), policy)?;
        let listener = TcpListener::bind(&config.listen)
            .await
            .map_err(|source| DaemonError::BindFailed {
                addr: config.listen.clone(),
                source,
            })?;
        let clock =
            clock.unwrap_or_else(|| Arc::new(SystemClock::not_before(recovered.state.clock())));
        let mut journal = Journal::open(&config.journal, recovered.next_seq, recovered.valid_len)?;
        let now = clock.now();
        for id in &recovered.crashed {
            let state = recovered.state.job(*id).expect("crashed job exists").state.clone();
            journal.append(now, JournalEvent::Ended { job_id: *id, state })?;
        }
        for name in &recovered.lost_sessions {
            journal.append(
                now,
                JournalEvent::SessionEnded {
                    name: name.clone(),
                    reason: SESSION_LOST.into(),
                },
            )?;
        }
        if !recovered.crashed.is_empty() || !recovered.lost_sessions.is_empty() {
            tracing::warn!(
                jobs = recovered.crashed.len(),
                sessions = recovered.lost_sessions.len(),
                "work lost in previous daemon crash"
            );
        }
        let (events_tx, events) = unbounded_channel();
        Ok(Self {
            listener,
            token: config.token().into(),
            tick: config.tick_interval(),
            core: Core {
                state: recovered.state,
                journal,
                sessions: SessionRegistry::with_capacity(&config.workdir, config.ring_capacity),
                running: BTreeMap::new(),
                clock,
                workdir: config.workdir.clone(),
                events: events_tx,
            },
            events,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves clients until `shutdown` resolves, then stops every job and
    /// session process.
    pub async fn run(self, shutdown: impl Future<Output = ()>) -> Result<(), DaemonError> {
        let Daemon {
            listener,
            token,
            tick,
            mut core,
            mut events,
        } = self;
        tracing::info!(addr = %listener.local_addr()?, "daemon listening");
        let (commands_tx, mut commands) = unbounded_channel::<Command>();
        let acceptor = tokio::spawn(async move {
            loop {
                match listener.accept().await {
                    Ok((stream, peer)) => {
                        tracing::debug!(%peer, "connection");
                        tokio::spawn(connection(stream, token.clone(), commands_tx.clone()));
                    }
                    Err(e) => tracing::warn!("accept failed: {e}"),
                }
            }
        });

        let mut ticker = tokio::time::interval(tick);
        ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
        tokio::pin!(shutdown);
        loop {
            tokio::select! {
                _ = &mut shutdown => break,
                Some(cmd) = commands.recv() => {
                    let reply = core.handle(cmd.request, cmd.attached_as);
                    let _ = cmd.reply.send(reply);
                }
                Some(event) = events.recv() => core.on_event(event),
                _ = ticker.tick() => core.tick(),
            }
        }
        acceptor.abort();
        core.shutdown();
        tracing::info!("daemon stopped");
        Ok(())
    }
}

/// Loads `config`, binds and serves until SIGINT or SIGTERM.
pub async fn serve(config: DaemonConfig) -> Result<(), DaemonError> {
    let daemon = Daemon::bind(config).await?;
    daemon.run(shutdown_signal()).await
}

async fn shutdown_signal() {
    use tokio::signal::unix::{signal, SignalKind};
    let mut term = signal(SignalKind::terminate()).expect("install SIGTERM handler");
    tokio::select! {
        _ = tokio::signal::ctrl_c() => {}
        _ = term.recv() => {}
    }
}

impl Core {
    fn now(&self) -> Timestamp {
        self.clock.now()
    }

    fn append(&mut self, event: JournalEvent) -> Result<(), Response> {
        let now = self.now();
        self.journal.append(now, event).map(|_| ()).map_err(|e| {
            tracing::error!("journal append failed: {e}");
            Response::error(Code::Internal, e.to_string())
        })
    }

    fn handle(&mut self, request: Request, attached_as: Option<ClientId>) -> Reply {
        if let Request::Attach { name, since } = &request {
            return match self.sessions.attach(name, *since) {
                Ok(attachment) => {
                    let info = AttachInfo {
                        client: attachment.client,
                        offset: attachment.offset,
                        truncated: attachment.truncated,
                    };
                    Reply::Attached(Response::ok(json!(info)), attachment)
                }
                Err(e) => Reply::Response(Response::from(&e)),
            };
        }
        let result = match request {
            Request::Submit {
                script,
                submit_dir,
                dialect,
                default_name,
            } => self.submit(&script, submit_dir, dialect, default_name),
            Request::Status { filter } => {
                let rows = self.state.snapshot(&filter, self.now());
                Ok(Response::ok(json!({ "rows": rows })))
            }
            Request::Cancel { job_id } => self.cancel(job_id),
            Request::SessionCreate { name, command } => self.session_create(&name, &command),
            Request::SessionList => Ok(Response::ok(json!({ "sessions": self.sessions.list() }))),
            Request::SessionKill { name } => self.session_kill(&name),
            Request::Detach { name, client } => match client.or(attached_as) {
                Some(client) => self
                    .sessions
                    .detach(&name, client)
                    .map(|()| Response::ok(json!({ "client": client })))
                    .map_err(|e| Response::from(&e)),
                None => Err(Response::error(Code::BadRequest, "detach needs a client id")),
            },
            Request::Ledger => Ok(Response::ok(json!(self.state.ledger()))),
            Request::Auth { .. } => Err(Response::error(Code::BadRequest, "already authenticated")),
            Request::Attach { .. } => unreachable!("handled above"),
        };
        Reply::Response(result.unwrap_or_else(|e| e))
    }

    fn submit(
        &mut self,
        script: &str,
        submit_dir: Option<PathBuf>,
        dialect: Option<crate::jobspec::Dialect>,
        default_name: Option<String>,
    ) -> Result<Response, Response> {
        let options = NormalizeOptions {
            strict: false,
            default_name,
        };
        let normalized = parse_script(script, dialect, &options).map_err(|e| Response::from(&e))?;
        let spec = normalized.spec;
        self.state
            .check_satisfiable(&spec.resources)
            .map_err(|e| Response::from(&e))?;
        let submit_dir = match submit_dir {
            Some(dir) if dir.is_absolute() => dir,
            Some(dir) => self.workdir.join(dir),
            None => self.workdir.clone(),
        };
        let job_id = self.state.next_id();
        self.append(JournalEvent::Submitted {
            job_id,
            spec: spec.clone(),
            submit_dir: submit_dir.clone(),
        })?;
        let now = self.now();
        let id = self
            .state
            .submit(spec, submit_dir, now)
            .map_err(|e| Response::from(&e))?;
        debug_assert_eq!(id, job_id);
        tracing::info!(job = %id, "submitted");
        Ok(Response::ok(
            json!({ "job_id": id, "warnings": normalized.warnings }),
        ))
    }

    fn cancel(&mut self, id: JobId) -> Result<Response, Response> {
        let now = self.now();
        let record = self
            .state
            .transition(id, Outcome::Cancel, now)
            .map_err(|e| Response::from(&e))?;
        self.append(JournalEvent::Ended {
            job_id: id,
            state: record.state.clone(),
        })?;
        if let Some(job) = self.running.get_mut(&id) {
            job.terminate();
        }
        tracing::info!(job = %id, "cancelled");
        Ok(Response::ok(json!({ "job_id": id, "state": record.state })))
    }

    fn session_create(&mut self, name: &str, command: &[String]) -> Result<Response, Response> {
        let events = self.events.clone();
        let now = self.now();
        let row = self
            .sessions
            .create(name, command, now, move |exit| {
                let _ = events.send(Event::Session(exit));
            })
            .map_err(|e| Response::from(&e))?;
        self.append(JournalEvent::SessionCreated {
            name: name.to_string(),
        })?;
        tracing::info!(session = name, pid = row.pid, "session created");
        Ok(Response::ok(json!(row)))
    }

    fn session_kill(&mut self, name: &str) -> Result<Response, Response> {
        let row = self.sessions.kill(name).map_err(|e| Response::from(&e))?;
        if row.live {
            self.append(JournalEvent::SessionEnded {
                name: name.to_string(),
                reason: crate::runtime::END_KILLED.into(),
            })?;
        }
        Ok(Response::ok(json!(row)))
    }

    fn on_event(&mut self, event: Event) {
        match event {
            Event::Job(exit) => {
                self.running.remove(&exit.job_id);
                let still_running = self
                    .state
                    .job(exit.job_id)
                    .is_some_and(|j| j.state == JobState::Running);
                if still_running {
                    self.finish(exit.job_id, Outcome::Exit(exit.code));
                }
            }
            Event::Session(exit) => {
                if self.sessions.is_current(&exit) {
                    let _ = self.append(JournalEvent::SessionEnded {
                        name: exit.name.clone(),
                        reason: crate::runtime::END_EXITED.into(),
                    });
                    tracing::info!(session = exit.name, code = exit.code, "session ended");
                }
            }
        }
    }

    fn finish(&mut self, id: JobId, outcome: Outcome) {
        let now = self.now();
        match self.state.transition(id, outcome, now) {
            Ok(record) => {
                tracing::info!(job = %id, state = %record.state.code(), "job finished");
                let _ = self.append(JournalEvent::Ended {
                    job_id: id,
                    state: record.state,
                });
            }
            Err(e) => tracing::warn!("{e}"),
        }
    }

    fn tick(&mut self) {
        let now = self.now();
        for id in poll_walltime(self.running.values_mut(), now) {
            if self.state.job(id).is_some_and(|j| j.state == JobState::Running) {
                self.finish(id, Outcome::Timeout);
            }
        }
        for start in self.state.tick(now) {
            let id = start.job_id;
            if self
                .append(JournalEvent::Started {
                    job_id: id,
                    allocation: start.allocation.clone(),
                })
                .is_err()
            {
                continue;
            }
            let record = self.state.job(id).expect("started job exists");
            let events = self.events.clone();
            let launched = launch_job(
                &record.spec,
                &start.allocation,
                id,
                &record.submit_dir,
                start.at,
                move |exit| {
                    let _ = events.send(Event::Job(exit));
                },
            );
            match launched {
                Ok(job) => {
                    tracing::info!(job = %id, alloc = %start.allocation, backfilled = start.backfilled, "started");
                    self.running.insert(id, job);
                }
                Err(e) => {
                    tracing::warn!(job = %id, "{e}");
                    self.finish(id, Outcome::DaemonFailure(e.to_string()));
                }
            }
        }
    }

    fn shutdown(&mut self) {
        for job in self.running.values_mut() {
            job.terminate();
        }
        self.sessions.kill_all();
    }
}

/// Reads one newline-terminated line of at most [`MAX_LINE`] bytes.
/// Returns `None` at end of stream.
async fn read_line(reader: &mut BufReader<OwnedReadHalf>) -> io::Result<Option<String>> {
    let mut buf = Vec::new();
    let n = reader
        .take(MAX_LINE as u64 + 1)
        .read_until(b'\n', &mut buf)
        .await?;
    if n == 0 {
        return Ok(None);
    }
    if buf.len() > MAX_LINE {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "request line too long"));
    }
    String::from_utf8(buf)
        .map(|s| Some(s.trim_end_matches(['\r', '\n']).to_string()))
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "request is not UTF-8"))
}

async fn send<T: serde::Serialize>(writer: &mut OwnedWriteHalf, msg: &T) -> io::Result<()> {
    writer.write_all(&encode_line(msg)).await
}

async fn call(
    commands: &UnboundedSender<Command>,
    request: Request,
    attached_as: Option<ClientId>,
) -> Option<Reply> {
    let (reply, rx) = oneshot::channel();
    commands
        .send(Command {
            request,
            attached_as,
            reply,
        })
        .ok()?;
    rx.await.ok()
}

async fn connection(stream: TcpStream, token: Arc<str>, commands: UnboundedSender<Command>) {
    if let Err(e) = serve_connection(stream, token, commands).await {
        tracing::debug!("connection closed: {e}");
    }
}

async fn serve_connection(
    stream: TcpStream,
    token: Arc<str>,
    commands: UnboundedSender<Command>,
) -> io::Result<()> {
    let (read, mut writer) = stream.into_split();
    let mut reader = BufReader::new(read);

    let authenticated = match read_line(&mut reader).await? {
        None => return Ok(()),
        Some(line) => matches!(decode_request(&line), Ok(Request::Auth { token: t }) if *t == *token),
    };
    if !authenticated {
        send(&mut writer, &Response::error(Code::AuthFailed, "authentication failed")).await?;
        return Ok(());
    }
    send(&mut writer, &Response::ok(json!({}))).await?;

    loop {
        let line = match read_line(&mut reader).await {
            Ok(Some(line)) => line,
            Ok(None) => return Ok(()),
            Err(e) => {
                send(&mut writer, &Response::error(Code::BadRequest, e.to_string())).await?;
                return Ok(());
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        let request = match decode_request(&line) {
            Ok(r) => r,
            Err(response) => {
                send(&mut writer, &response).await?;
                continue;
            }
        };
        let name = match &request {
            Request::Attach { name, .. } => Some(name.clone()),
            _ => None,
        };
        match call(&commands, request, None).await {
            Some(Reply::Response(response)) => send(&mut writer, &response).await?,
            Some(Reply::Attached(response, attachment)) => {
                send(&mut writer, &response).await?;
                let name = name.expect("attach reply follows attach request");
                return stream_session(reader, writer, commands, name, attachment).await;
            }
            None => {
                send(&mut writer, &Response::error(Code::Internal, "daemon is shutting down")).await?;
                return Ok(());
            }
        }
    }
}

/// Forwards session output as frames until the stream ends. A `detach`
/// line from the client, or the client going away, detaches it.
async fn stream_session(
    mut reader: BufReader<OwnedReadHalf>,
    mut writer: OwnedWriteHalf,
    commands: UnboundedSender<Command>,
    name: String,
    mut attachment: Attachment,
) -> io::Result<()> {
    let client = attachment.client;
    let (lines_tx, mut lines) = unbounded_channel::<Option<String>>();
    let reader_task = tokio::spawn(async move {
        loop {
            let line = read_line(&mut reader).await.ok().flatten();
            let done = line.is_none();
            if lines_tx.send(line).is_err() || done {
                return;
            }
        }
    });
    let detach = |commands: &UnboundedSender<Command>| {
        let commands = commands.clone();
        let name = name.clone();
        async move {
            call(&commands, Request::Detach { name, client: None }, Some(client)).await;
        }
    };

    let replay = std::mem::take(&mut attachment.replay);
    let mut result = Ok(());
    if !replay.is_empty() {
        result = send(&mut writer, &Frame::Data { bytes: replay }).await;
    }
    while result.is_ok() {
        tokio::select! {
            event = attachment.events.recv() => match event {
                Some(StreamEvent::Data(bytes)) => {
                    result = send(&mut writer, &Frame::Data { bytes }).await;
                }
                Some(StreamEvent::End(reason)) => {
                    result = send(&mut writer, &Frame::End { reason }).await;
                    break;
                }
                None => {
                    result = send(&mut writer, &Frame::End { reason: crate::runtime::END_EXITED.into() }).await;
                    break;
                }
            },
            line = lines.recv() => match line.flatten() {
                Some(line) => {
                    if let Ok(Request::Detach { .. }) = decode_request(&line) {
                        detach(&commands).await;
                    }
                }
                None => {
                    detach(&commands).await;
                    break;
                }
            },
        }
    }
    if result.is_err() {
        detach(&commands).await;
    }
    reader_task.abort();
    let _ = writer.shutdown().await;
    result
}
