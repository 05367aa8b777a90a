//! `simulate`, `trial`, and `e2e`: responder campaigns — fully offline, one
//! live episode, or a live campaign wired through an in-process alarm
//! service over loopback.

use std::path::PathBuf;
use std::time::Duration;

use clap::Args;

use fallwatch_core::har::DecisionPolicy;
use fallwatch_net::server::{AlarmServer, PolicyMode, ServerConfig};
use fallwatch_sim::{
    percent_truncated, run_campaign, run_live_campaign, CampaignReport, GridMap, LiveConfig,
    Outcome, Schedule, TimingConfig,
};

use crate::error::CliError;
use crate::output::emit;
use crate::{Ctx, Format};

/// Map and timing flags shared by all campaign commands.
#[derive(Args, Debug, Clone)]
pub struct WorldArgs {
    /// Grid map file; the bundled two-room map when omitted.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Robot walking speed in metres per second.
    #[arg(long, default_value_t = 0.5)]
    pub speed_mps: f64,
    /// Seconds spent opening and passing a door.
    #[arg(long, default_value_t = 30.0)]
    pub door_time_s: f64,
    /// Seconds the whole response may take before the trial times out.
    #[arg(long, default_value_t = 300.0)]
    pub window_s: f64,
}

impl WorldArgs {
    pub fn load_map(&self) -> Result<GridMap, CliError> {
        match &self.map {
            Some(path) => Ok(GridMap::load(path)?),
            None => Ok(GridMap::bundled_two_room()),
        }
    }

    pub fn timing(&self) -> TimingConfig {
        TimingConfig {
            speed_mps: self.speed_mps,
            door_time_s: self.door_time_s,
            trial_window_s: self.window_s,
        }
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Detection pattern `<detected>of<trials>`, e.g. `7of8`.
    #[arg(long, default_value = "8of8")]
    pub schedule: String,
    #[command(flatten)]
    pub world: WorldArgs,
}

#[derive(Args, Debug)]
pub struct TrialArgs {
    /// Run the episode with the fall never detected.
    #[arg(long)]
    pub missed: bool,
    #[command(flatten)]
    pub world: WorldArgs,
    #[command(flatten)]
    pub live: LiveTuning,
}

#[derive(Args, Debug)]
pub struct E2eArgs {
    /// Number of episodes; must agree with `--schedule` when both are given.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Detection pattern `<detected>of<trials>`; all-detected when omitted.
    #[arg(long)]
    pub schedule: Option<String>,
    #[command(flatten)]
    pub world: WorldArgs,
    #[command(flatten)]
    pub live: LiveTuning,
}

/// Knobs for live runs that go through the alarm service.
#[derive(Args, Debug, Clone)]
pub struct LiveTuning {
    /// Consecutive high-confidence windows before the service raises an
    /// alarm (applied to both the service policy and the scripted sensor).
    #[arg(long, default_value_t = 3)]
    pub consecutive_k: usize,
    /// Simulated seconds covered by one analysis window.
    #[arg(long, default_value_t = 1.0)]
    pub window_period_s: f64,
}

fn parse_schedule(s: &str) -> Result<Schedule, CliError> {
    s.parse::<Schedule>()
        .map_err(|e| CliError::Usage(format!("bad --schedule: {e}")))
}

fn report_text(report: &CampaignReport) -> String {
    let n = report.trials.len();
    let successes = report
        .trials
        .iter()
        .filter(|t| t.outcome == Outcome::Success)
        .count();
    let missed = report
        .trials
        .iter()
        .filter(|t| t.outcome == Outcome::MissedDetection)
        .count();
    let timeouts = n - successes - missed;
    let mut s = format!(
        "{n} trials: {successes} succeeded ({}%), {missed} missed, {timeouts} timed out\n",
        percent_truncated(report.success_rate)
    );
    if successes > 0 {
        s.push_str(&format!(
            "mean response over successes: {:.1}s\n",
            report.mean_response_s
        ));
    }
    for t in &report.trials {
        match t.total_response_s {
            Some(total) => s.push_str(&format!(
                "  trial {}: {:?} in {total:.1}s (alarm {:.1}s + walk {:.1}s + doors {:.1}s)\n",
                t.trial,
                t.outcome,
                t.alarm_latency_s.unwrap_or(0.0),
                t.nav_time_s.unwrap_or(0.0),
                t.door_time_s.unwrap_or(0.0),
            )),
            None => s.push_str(&format!("  trial {}: {:?}\n", t.trial, t.outcome)),
        }
    }
    s.pop();
    s
}

fn emit_report(ctx: &Ctx, report: &CampaignReport) -> Result<(), CliError> {
    let text = match ctx.format {
        Format::Json => report.to_json(),
        Format::Csv => report.to_csv(),
        Format::Text => report_text(report),
    };
    emit(ctx, &text)
}

pub fn run_simulate(ctx: &Ctx, args: SimulateArgs) -> Result<(), CliError> {
    let schedule = parse_schedule(&args.schedule)?;
    let map = args.world.load_map()?;
    let report = run_campaign(&map, &args.world.timing(), &schedule, ctx.seed_or_default())?;
    emit_report(ctx, &report)
}

/// Run a live campaign against a fresh in-process alarm service bound to an
/// ephemeral loopback port.
fn live_campaign_inprocess(
    ctx: &Ctx,
    world: &WorldArgs,
    tuning: &LiveTuning,
    schedule: Schedule,
) -> Result<CampaignReport, CliError> {
    let map = world.load_map()?;
    let mut cfg = LiveConfig::new(schedule, ctx.seed_or_default());
    cfg.timing = world.timing();
    cfg.consecutive_k = tuning.consecutive_k;
    cfg.window_period_s = tuning.window_period_s;

    let server_cfg = ServerConfig {
        policy: DecisionPolicy {
            fall_class: 0,
            threshold: 0.8,
            consecutive_k: tuning.consecutive_k,
        },
        fall_class: cfg.fall_class.clone(),
        mode: PolicyMode::PolicyInServer,
        retry_interval: Duration::from_millis(100),
        heartbeat_interval: Duration::from_secs(5),
        log_path: None,
    };
    let server = AlarmServer::bind("127.0.0.1:0", server_cfg)
        .map_err(|e| CliError::Network(format!("cannot bind loopback alarm service: {e}")))?;
    let addr = server.local_addr();
    ctx.note(format!("alarm service on {addr}"));

    let result = run_live_campaign(addr, &map, &cfg);
    server.stop();
    Ok(result?)
}

pub fn run_trial_cmd(ctx: &Ctx, args: TrialArgs) -> Result<(), CliError> {
    let schedule = Schedule::new(if args.missed { 0 } else { 1 }, 1)?;
    let report = live_campaign_inprocess(ctx, &args.world, &args.live, schedule)?;
    emit_report(ctx, &report)
}

pub fn run_e2e(ctx: &Ctx, args: E2eArgs) -> Result<(), CliError> {
    let schedule = match (&args.schedule, args.trials) {
        (Some(s), trials) => {
            let schedule = parse_schedule(s)?;
            if let Some(n) = trials {
                if n != schedule.trials {
                    return Err(CliError::Usage(format!(
                        "--trials {n} disagrees with --schedule {s}"
                    )));
                }
            }
            schedule
        }
        (None, Some(n)) => Schedule::new(n, n).map_err(|e| CliError::Usage(e.to_string()))?,
        (None, None) => Schedule::new(8, 8).expect("static schedule is valid"),
    };
    let report = live_campaign_inprocess(ctx, &args.world, &args.live, schedule)?;
    emit_report(ctx, &report)
}
