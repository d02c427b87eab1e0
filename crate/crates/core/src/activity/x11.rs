//! X11 adapter built on the `xdotool` and `xprintidle` command-line tools.
//!
//! X11 offers no unprivileged way to count keystrokes globally, so input is
//! reported as activity ticks: each poll where the server's idle counter is
//! below the elapsed poll interval counts as one key.

use std::process::Command;
use std::time::Instant;

use super::live::{InputCounts, PlatformAdapter, PlatformError, WindowInfo};

pub struct X11Adapter {
    last_poll: Instant,
}

impl X11Adapter {
    /// Fails when no X display is reachable or the helper tools are missing.
    pub fn connect() -> Result<Self, PlatformError> {
        if std::env::var_os("DISPLAY").is_none() {
            return Err(PlatformError("DISPLAY is not set".into()));
        }
        run("xprintidle", &[])?;
        Ok(X11Adapter {
            last_poll: Instant::now(),
        })
    }
}

fn run(program: &str, args: &[&str]) -> Result<String, PlatformError> {
    let out = Command::new(program)
        .args(args)
        .output()
        .map_err(|e| PlatformError(format!("{program}: {e}")))?;
    if !out.status.success() {
        return Err(PlatformError(format!("{program} exited with {}", out.status)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
}

impl PlatformAdapter for X11Adapter {
    fn name(&self) -> &'static str {
        "x11"
    }

    fn active_window(&mut self) -> Result<Option<WindowInfo>, PlatformError> {
        let title = run("xdotool", &["getactivewindow", "getwindowname"])?;
        let pid = run("xdotool", &["getactivewindow", "getwindowpid"])?;
        let app_id = std::fs::read_to_string(format!("/proc/{pid}/comm"))
            .map(|s| s.trim().to_string())
            .unwrap_or_else(|_| "unknown".to_string());
        Ok(Some(WindowInfo {
            app_id,
            window_title: title,
        }))
    }

    fn take_input(&mut self) -> Result<InputCounts, PlatformError> {
        let idle_ms: u64 = run("xprintidle", &[])?
            .parse()
            .map_err(|_| PlatformError("xprintidle returned garbage".into()))?;
        let elapsed = self.last_poll.elapsed().as_millis() as u64;
        self.last_poll = Instant::now();
        Ok(if idle_ms < elapsed {
            InputCounts { keys: 1, clicks: 0 }
        } else {
            InputCounts::default()
        })
    }
}
