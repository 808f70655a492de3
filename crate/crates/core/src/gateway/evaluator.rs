use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::admission::FailureClass;
use crate::protocol::{EvalRequest, EvalResult};

/// Environment variable holding a whitespace-separated worker command line
/// that overrides the configured one.
pub const WORKER_CMD_ENV: &str = "DELTANAS_WORKER_CMD";

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(600);
pub const KILL_GRACE: Duration = Duration::from_secs(5);

/// Captured stderr is cut to this many bytes.
const STDERR_LIMIT: usize = 64 * 1024;
const POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Error)]
#[error("cannot start worker {program}: {source}")]
pub struct SpawnFailure {
    pub program: String,
    pub source: std::io::Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub result: EvalResult,
    pub stderr: String,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerCommand {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl WorkerCommand {
    pub fn new(program: impl Into<PathBuf>, args: impl IntoIterator<Item = impl Into<String>>) -> Self {
        WorkerCommand {
            program: program.into(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }

    /// Splits a command line on whitespace. `None` when it is blank.
    pub fn parse(line: &str) -> Option<Self> {
        let mut parts = line.split_whitespace();
        let program = parts.next()?;
        Some(WorkerCommand::new(program, parts))
    }

    /// `DELTANAS_WORKER_CMD` if set and non-blank, else `self`.
    pub fn with_env_override(self) -> Self {
        std::env::var(WORKER_CMD_ENV)
            .ok()
            .and_then(|v| WorkerCommand::parse(&v))
            .unwrap_or(self)
    }
}

/// Runs each request in a fresh worker process.
#[derive(Debug, Clone)]
pub struct SubprocessEvaluator {
    pub command: WorkerCommand,
    pub timeout: Duration,
    pub grace: Duration,
    pub env: Vec<(String, String)>,
}

impl SubprocessEvaluator {
    pub fn new(command: WorkerCommand, timeout: Duration) -> Self {
        SubprocessEvaluator {
            command,
            timeout,
            grace: KILL_GRACE,
            env: Vec::new(),
        }
    }

    /// Exactly one result per request. Worker misbehaviour becomes a failed
    /// result; only a worker that cannot be started at all is an error.
    pub fn evaluate(&self, request: &EvalRequest) -> Result<Evaluation, SpawnFailure> {
        let start = Instant::now();
        let mut cmd = Command::new(&self.command.program);
        cmd.args(&self.command.args)
            .envs(self.env.iter().map(|(k, v)| (k, v)))
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }
        let mut child = cmd.spawn().map_err(|source| SpawnFailure {
            program: self.command.program.display().to_string(),
            source,
        })?;

        let payload = serde_json::to_vec(request).expect("request serializes");
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = thread::spawn(move || {
            // a worker that exits without reading is not an error here
            let _ = stdin.write_all(&payload).and_then(|_| stdin.write_all(b"\n"));
        });
        let stdout = drain(child.stdout.take().expect("piped stdout"));
        let stderr = drain(child.stderr.take().expect("piped stderr"));

        let status = wait_with_deadline(&mut child, start + self.timeout, self.grace);
        // reap anything the worker left behind in its group
        kill_group(&child, Signal::Kill);

        let _ = writer.join();
        let out = stdout.join().unwrap_or_default();
        let err = stderr.join().unwrap_or_default();
        let wall_seconds = start.elapsed().as_secs_f64();

        let mut result = match status {
            None => EvalResult::failed(FailureClass::Timeout),
            Some(status) => match first_valid_result(&out) {
                Some(r) => r,
                None if killed_by_signal(&status) => EvalResult::failed(FailureClass::ResourceError),
                None => EvalResult::failed(FailureClass::ShapeRuntime),
            },
        };
        result.wall_seconds = Some(wall_seconds);
        Ok(Evaluation {
            result,
            stderr: truncate_utf8(&err, STDERR_LIMIT),
            wall_seconds,
        })
    }
}

fn drain<R: Read + Send + 'static>(mut r: R) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        buf
    })
}

/// Waits for exit until `deadline`; past it the process group gets SIGTERM,
/// then SIGKILL after `grace`. `None` means the deadline was hit.
fn wait_with_deadline(child: &mut Child, deadline: Instant, grace: Duration) -> Option<ExitStatus> {
    loop {
        match child.try_wait() {
            Ok(Some(status)) => return Some(status),
            Ok(None) if Instant::now() < deadline => thread::sleep(POLL),
            _ => break,
        }
    }
    kill_group(child, Signal::Term);
    let hard = Instant::now() + grace;
    while Instant::now() < hard {
        if let Ok(Some(_)) = child.try_wait() {
            return None;
        }
        thread::sleep(POLL);
    }
    kill_group(child, Signal::Kill);
    let _ = child.kill();
    let _ = child.wait();
    None
}

enum Signal {
    Term,
    Kill,
}

#[cfg(unix)]
fn kill_group(child: &Child, sig: Signal) {
    let sig = match sig {
        Signal::Term => libc::SIGTERM,
        Signal::Kill => libc::SIGKILL,
    };
    // The child leads its own group (process_group(0)), so its pid is the pgid.
    let pgid = child.id() as libc::pid_t;
    // SAFETY: killpg has no memory-safety preconditions; a stale group id
    // only yields ESRCH.
    unsafe {
        libc::killpg(pgid, sig);
    }
}

#[cfg(not(unix))]
fn kill_group(_child: &Child, _sig: Signal) {}

#[cfg(unix)]
fn killed_by_signal(status: &ExitStatus) -> bool {
    use std::os::unix::process::ExitStatusExt;
    status.signal().is_some()
}

#[cfg(not(unix))]
fn killed_by_signal(_status: &ExitStatus) -> bool {
    false
}

/// First stdout line that parses as a result and satisfies its invariants.
fn first_valid_result(stdout: &[u8]) -> Option<EvalResult> {
    String::from_utf8_lossy(stdout).lines().find_map(|line| {
        let r: EvalResult = serde_json::from_str(line.trim()).ok()?;
        r.validate().ok()?;
        Some(r)
    })
}

fn truncate_utf8(bytes: &[u8], limit: usize) -> String {
    let s = String::from_utf8_lossy(&bytes[..bytes.len().min(limit)]);
    s.into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admission::DatasetId;
    use crate::protocol::{EvalMode, EvalStatus};

    fn req() -> EvalRequest {
        EvalRequest {
            candidate_id: "c00-000".into(),
            patched_source: "x = 1\n".into(),
            dataset: DatasetId::Mnist,
            hp: Default::default(),
            transform_ref: String::new(),
            eval_seed: 0,
            mode: EvalMode::Simulate,
        }
    }

    fn sh(script: &str, timeout: Duration) -> SubprocessEvaluator {
        SubprocessEvaluator::new(WorkerCommand::new("sh", ["-c", script]), timeout)
    }

    #[test]
    fn echo_worker() {
        let ev = sh(r#"cat >/dev/null; echo '{"status":"ok","accuracy":0.65}'"#, Duration::from_secs(10));
        let out = ev.evaluate(&req()).unwrap();
        assert_eq!(out.result.status, EvalStatus::Ok);
        assert_eq!(out.result.accuracy, Some(0.65));
    }

    #[test]
    fn first_valid_line_wins_and_stderr_is_captured() {
        let ev = sh(
            r#"echo 'loading...'; echo oops >&2; echo '{"status":"failed","failure":"NameTypeError"}'; echo '{"status":"ok","accuracy":0.1}'"#,
            Duration::from_secs(10),
        );
        let out = ev.evaluate(&req()).unwrap();
        assert_eq!(out.result.failure, Some(FailureClass::NameTypeError));
        assert_eq!(out.stderr.trim(), "oops");
    }

    #[test]
    fn crash_and_garbage_are_shape_runtime() {
        for script in ["exit 3", "echo 'not json'", r#"printf '{"status":"ok","accu'; exit 1"#] {
            let out = sh(script, Duration::from_secs(10)).evaluate(&req()).unwrap();
            assert_eq!(out.result.failure, Some(FailureClass::ShapeRuntime), "{script}");
        }
    }

    #[test]
    fn signal_death_is_resource_error() {
        let out = sh("kill -9 $$", Duration::from_secs(10)).evaluate(&req()).unwrap();
        assert_eq!(out.result.failure, Some(FailureClass::ResourceError));
    }

    #[test]
    fn hang_is_timeout_within_bound() {
        let mut ev = sh("sleep 30", Duration::from_millis(300));
        ev.grace = Duration::from_millis(500);
        let t = Instant::now();
        let out = ev.evaluate(&req()).unwrap();
        assert_eq!(out.result.failure, Some(FailureClass::Timeout));
        assert!(t.elapsed() < Duration::from_millis(300) + ev.grace + Duration::from_secs(1));
    }

    #[test]
    fn missing_program_is_spawn_failure() {
        let ev = SubprocessEvaluator::new(
            WorkerCommand::new("/nonexistent/worker", Vec::<String>::new()),
            Duration::from_secs(1),
        );
        assert!(ev.evaluate(&req()).is_err());
    }

    #[test]
    fn command_parsing() {
        assert_eq!(
            WorkerCommand::parse(" python3  worker.py --x "),
            Some(WorkerCommand::new("python3", ["worker.py", "--x"]))
        );
        assert_eq!(WorkerCommand::parse("   "), None);
    }
}
