//! Fixtures shared by the integration tests: an in-process daemon, the
//! compiled binary, and the sample job scripts.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::mpsc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use miniq::cli::Client;
use miniq::daemon::{Daemon, DaemonConfig, NodeConfig, Request, Response};
use miniq::sched::{StatusFilter, StatusRow};

pub const TOKEN: &str = "test-token";

pub const PBS_SCRIPT: &str = "#!/bin/bash
#PBS -N automl_job
#PBS -l nodes=1:ppn=8
#PBS -l walltime=4:00:00
#PBS -j oe

# Load necessary modules
module load python/3.8
module load pytorch/1.9

# Navigate to the working directory
cd $PBS_O_WORKDIR

# Run the Python script
python my_automl_script.py
";

pub const SLURM_SCRIPT: &str = "#!/bin/bash
#SBATCH --job-name=automl_job
#SBATCH --nodes=1
#SBATCH --ntasks-per-node=8
#SBATCH --time=04:00:00
#SBATCH --output=output_

# Load necessary modules
module load python/3.8
module load pytorch/1.9

# Navigate to the working directory
cd $SLURM_SUBMIT_DIR

# Run the Python script
python my_automl_script.py
";

pub fn node(id: &str, slots: u32) -> NodeConfig {
    NodeConfig {
        id: id.into(),
        slots,
        features: vec![],
    }
}

pub fn config(dir: &Path, nodes: Vec<NodeConfig>, tick_ms: u64) -> DaemonConfig {
    let mut c = DaemonConfig::new(
        "127.0.0.1:0",
        TOKEN,
        nodes,
        dir.join("journal"),
        dir.join("work"),
    );
    c.tick_interval_ms = tick_ms;
    std::fs::create_dir_all(&c.workdir).unwrap();
    c
}

/// A daemon on its own runtime thread; stops when dropped.
pub struct TestDaemon {
    pub addr: String,
    pub config: DaemonConfig,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl TestDaemon {
    pub fn start(config: DaemonConfig) -> Self {
        Self::try_start(config).expect("daemon starts")
    }

    pub fn try_start(config: DaemonConfig) -> Result<Self, miniq::daemon::DaemonError> {
        let (ready_tx, ready_rx) = mpsc::channel();
        let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let cfg = config.clone();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                match Daemon::bind(cfg).await {
                    Ok(d) => {
                        ready_tx.send(Ok(d.local_addr().unwrap().to_string())).unwrap();
                        d.run(async {
                            let _ = stop_rx.await;
                        })
                        .await
                        .unwrap();
                    }
                    Err(e) => ready_tx.send(Err(e)).unwrap(),
                }
            });
        });
        let addr = ready_rx.recv().unwrap()?;
        Ok(Self {
            addr,
            config,
            shutdown: Some(stop_tx),
            thread: Some(thread),
        })
    }

    pub fn client(&self) -> Client {
        Client::connect(&self.addr, TOKEN).unwrap()
    }

    pub fn request(&self, request: Request) -> Response {
        self.client().request(&request).unwrap()
    }

    pub fn status(&self) -> Vec<StatusRow> {
        let r = self.request(Request::Status {
            filter: StatusFilter::default(),
        });
        serde_json::from_value(r.payload["rows"].clone()).unwrap()
    }

    pub fn submit(&self, script: &str, dir: &Path) -> Response {
        self.request(Request::Submit {
            script: script.into(),
            submit_dir: Some(dir.to_path_buf()),
            dialect: None,
            default_name: None,
        })
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for TestDaemon {
    fn drop(&mut self) {
        self.halt();
    }
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_miniq"))
}

/// Runs the CLI against `addr`, with the token in the environment.
pub fn cli(addr: &str, args: &[&str]) -> Output {
    cli_in(addr, args, None, b"")
}

pub fn cli_in(addr: &str, args: &[&str], cwd: Option<&Path>, stdin: &[u8]) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args)
        .env("MINIQ_SERVER", addr)
        .env("MINIQ_TOKEN", TOKEN)
        .env_remove("MINIQ_CONFIG")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    if let Some(dir) = cwd {
        cmd.current_dir(dir);
    }
    let mut child = cmd.spawn().unwrap();
    child.stdin.take().unwrap().write_all(stdin).unwrap();
    child.wait_with_output().unwrap()
}

pub fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

/// A `miniq daemon` child process, for tests that kill it outright.
pub struct DaemonProcess {
    pub child: Child,
    pub addr: String,
}

impl DaemonProcess {
    /// Starts the binary with a config file in `dir` listening on a fresh port.
    pub fn spawn(dir: &Path, nodes: &[(&str, u32)], tick_ms: u64) -> Self {
        let port = std::net::TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let addr = format!("127.0.0.1:{port}");
        let mut toml = format!(
            "listen = \"{addr}\"\ntoken = \"{TOKEN}\"\ntick_interval_ms = {tick_ms}\njournal = \"journal\"\nworkdir = \"work\"\n"
        );
        for (id, slots) in nodes {
            toml += &format!("\n[[nodes]]\nid = \"{id}\"\nslots = {slots}\n");
        }
        std::fs::create_dir_all(dir.join("work")).unwrap();
        let config = dir.join("miniq.toml");
        std::fs::write(&config, toml).unwrap();
        let child = Command::new(bin())
            .args(["daemon", "--config"])
            .arg(&config)
            .env("MINIQ_LOG", "warn")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let started = Instant::now();
        while TcpStream::connect(&addr).is_err() {
            assert!(started.elapsed() < Duration::from_secs(10), "daemon did not start");
            std::thread::sleep(Duration::from_millis(20));
        }
        Self { child, addr }
    }

    pub fn client(&self) -> Client {
        Client::connect(&self.addr, TOKEN).unwrap()
    }

    /// SIGKILL, no chance to clean up.
    pub fn crash(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }
}

impl Drop for DaemonProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Polls `f` every 10 ms until it returns `Some` or `limit` passes.
pub fn wait_for<T>(limit: Duration, mut f: impl FnMut() -> Option<T>) -> Option<T> {
    let start = Instant::now();
    loop {
        if let Some(v) = f() {
            return Some(v);
        }
        if start.elapsed() > limit {
            return None;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
}

/// Raw line-level access to the socket, for auth and framing tests.
pub struct RawConn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl RawConn {
    pub fn open(addr: &str) -> Self {
        let s = TcpStream::connect(addr).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
        Self {
            writer: s.try_clone().unwrap(),
            reader: BufReader::new(s),
        }
    }

    pub fn send(&mut self, line: &str) {
        self.writer.write_all(line.as_bytes()).unwrap();
        self.writer.write_all(b"\n").unwrap();
    }

    /// Next line as JSON, or `None` on EOF.
    pub fn recv(&mut self) -> Option<serde_json::Value> {
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) | Err(_) => None,
            Ok(_) => Some(serde_json::from_str(&line).unwrap()),
        }
    }
}
