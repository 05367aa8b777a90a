//! `serve`: run the alarm service on a TCP address until interrupted (or for
//! a fixed duration, mainly for scripted runs).

use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, ValueEnum};

use fallwatch_core::har::DecisionPolicy;
use fallwatch_net::server::{AlarmServer, PolicyMode, ServerConfig};

use crate::error::CliError;
use crate::Ctx;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Sensors stream raw predictions; the server debounces them.
    Policy,
    /// Detectors send ready-made alarms; the server re-stamps and fans out.
    Passthrough,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:7070")]
    pub bind: String,
    /// Confidence a prediction must reach to count toward an alarm.
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
    /// Consecutive qualifying windows required to raise an alarm.
    #[arg(long, default_value_t = 3)]
    pub consecutive_k: usize,
    /// Wire class name treated as the fall class (case-insensitive).
    #[arg(long, default_value = "fall")]
    pub fall_class: String,
    #[arg(long, value_enum, default_value_t = ModeArg::Policy)]
    pub mode: ModeArg,
    /// Unacked alarms are re-sent at this interval.
    #[arg(long, default_value_t = 500)]
    pub retry_ms: u64,
    #[arg(long, default_value_t = 5000)]
    pub heartbeat_ms: u64,
    /// Append NDJSON event log entries to this file.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Stop after this many seconds instead of running until killed.
    #[arg(long)]
    pub duration_s: Option<f64>,
}

pub fn run(ctx: &Ctx, args: ServeArgs) -> Result<(), CliError> {
    if args.threshold <= 0.0 || args.threshold > 1.0 {
        return Err(CliError::Usage(format!(
            "--threshold must be in (0, 1], got {}",
            args.threshold
        )));
    }
    if args.consecutive_k == 0 {
        return Err(CliError::Usage("--consecutive-k must be at least 1".into()));
    }
    if let Some(d) = args.duration_s {
        if !d.is_finite() || d < 0.0 {
            return Err(CliError::Usage(format!(
                "--duration-s must be finite and non-negative, got {d}"
            )));
        }
    }

    let cfg = ServerConfig {
        policy: DecisionPolicy {
            fall_class: 0,
            threshold: args.threshold,
            consecutive_k: args.consecutive_k,
        },
        fall_class: args.fall_class.clone(),
        mode: match args.mode {
            ModeArg::Policy => PolicyMode::PolicyInServer,
            ModeArg::Passthrough => PolicyMode::Passthrough,
        },
        retry_interval: Duration::from_millis(args.retry_ms),
        heartbeat_interval: Duration::from_millis(args.heartbeat_ms),
        log_path: args.log.clone(),
    };

    let server = AlarmServer::bind(args.bind.as_str(), cfg)
        .map_err(|e| CliError::Network(format!("cannot bind {}: {e}", args.bind)))?;
    // The bound address goes to stdout so wrappers can pick up an ephemeral
    // port (`--bind 127.0.0.1:0`).
    println!("{}", server.local_addr());
    ctx.note(format!(
        "alarm service listening on {} (threshold {}, k {})",
        server.local_addr(),
        args.threshold,
        args.consecutive_k
    ));

    match args.duration_s {
        Some(d) => {
            std::thread::sleep(Duration::from_secs_f64(d));
            let stats = server.stats();
            server.stop();
            ctx.note(format!(
                "stopped after {d}s: {} connections, {} predictions, {} alarms, {} acks",
                stats.connections_accepted,
                stats.predictions_received,
                stats.alarms_emitted,
                stats.acks_received
            ));
        }
        None => loop {
            std::thread::park();
        },
    }
    Ok(())
}
