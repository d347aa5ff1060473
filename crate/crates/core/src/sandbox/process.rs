//! Runs one command in its own process group with resource limits.

use std::io::{self, Read, Write};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

/// Captured output beyond this is dropped.
pub const MAX_OUTPUT: usize = 8 * 1024 * 1024;

#[derive(Clone, Copy, Debug)]
pub struct Limits {
    pub wall: Duration,
    /// Address-space cap in bytes.
    pub memory: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Exited(i32),
    Signaled(i32),
    TimedOut,
}

#[derive(Debug)]
pub struct RawRun {
    pub termination: Termination,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub elapsed: Duration,
}

impl RawRun {
    pub fn success(&self) -> bool {
        self.termination == Termination::Exited(0)
    }

    pub fn stderr_text(&self) -> String {
        String::from_utf8_lossy(&self.stderr).into_owned()
    }
}

fn capture<R: Read + Send + 'static>(mut r: R) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            match r.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = MAX_OUTPUT.saturating_sub(kept.len());
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        kept
    })
}

fn set_limit(resource: libc::__rlimit_resource_t, value: u64) -> io::Result<()> {
    let lim = libc::rlimit {
        rlim_cur: value as libc::rlim_t,
        rlim_max: value as libc::rlim_t,
    };
    if unsafe { libc::setrlimit(resource, &lim) } != 0 {
        return Err(io::Error::last_os_error());
    }
    Ok(())
}

fn kill_group(pid: u32) {
    unsafe {
        libc::kill(-(pid as libc::pid_t), libc::SIGKILL);
    }
}

/// Runs `argv` in `cwd`, feeding `stdin`. The child gets its own process
/// group, which is killed on timeout and again after exit so stray
/// grandchildren cannot hold the pipes open.
pub fn run(argv: &[String], cwd: &Path, stdin: &[u8], limits: Limits) -> io::Result<RawRun> {
    let (program, args) = argv
        .split_first()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "empty argv"))?;
    let mut cmd = Command::new(program);
    cmd.args(args)
        .current_dir(cwd)
        .env("TMPDIR", cwd)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    let cpu = limits.wall.as_secs().saturating_add(1);
    let memory = limits.memory;
    unsafe {
        cmd.pre_exec(move || {
            set_limit(libc::RLIMIT_CPU, cpu)?;
            set_limit(libc::RLIMIT_CORE, 0)?;
            if let Some(m) = memory {
                set_limit(libc::RLIMIT_AS, m)?;
            }
            Ok(())
        });
    }
    let start = Instant::now();
    let mut child = cmd.spawn()?;
    let pid = child.id();
    let mut input = child.stdin.take().expect("piped stdin");
    let data = stdin.to_vec();
    let feeder = thread::spawn(move || {
        // A child that exits without reading gives EPIPE; not an error here.
        let _ = input.write_all(&data);
    });
    let out = capture(child.stdout.take().expect("piped stdout"));
    let err = capture(child.stderr.take().expect("piped stderr"));

    let mut delay = Duration::from_millis(1);
    let termination = loop {
        if let Some(status) = child.try_wait()? {
            break match (status.code(), status.signal()) {
                (Some(c), _) => Termination::Exited(c),
                (None, Some(libc::SIGXCPU)) => Termination::TimedOut,
                (None, Some(s)) => Termination::Signaled(s),
                (None, None) => Termination::Signaled(0),
            };
        }
        if start.elapsed() >= limits.wall {
            kill_group(pid);
            child.wait()?;
            break Termination::TimedOut;
        }
        thread::sleep(delay);
        delay = (delay * 2).min(Duration::from_millis(20));
    };
    let elapsed = start.elapsed();
    kill_group(pid);
    let _ = feeder.join();
    let stdout = out.join().unwrap_or_default();
    let stderr = err.join().unwrap_or_default();
    Ok(RawRun {
        termination,
        stdout,
        stderr,
        elapsed,
    })
}
