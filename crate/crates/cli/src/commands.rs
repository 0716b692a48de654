use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};

use shoalguide_bridge::{summarize, BridgeConfig};
use shoalguide_core::analytics::emit_report;
use shoalguide_core::calib::{calibrate, CalibrationFile};
use shoalguide_core::config::{load_config, resolve_config_path, RewardMode};
use shoalguide_core::ppo::{evaluate, train, PolicyCheckpoint};
use shoalguide_core::session::{read_log, run_session, write_log, SessionPolicies, SimulatedSchool};
use shoalguide_core::{Exec, RunConfig};

use crate::args::{
    CalibrateArgs, Cli, Command, EvaluateArgs, LiveArgs, ProtocolArgs, ReportArgs, RewardCell,
    ServeArgs, SessionArgs, Source, SweepArgs, TrainArgs,
};
use crate::UsageError;

pub fn run(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Train(a) => train_cmd(config, a),
        Command::Sweep(a) => sweep_cmd(config, a),
        Command::Evaluate(a) => evaluate_cmd(config, a),
        Command::Session(a) => session_cmd(config, a),
        Command::Report(a) => report_cmd(config, a),
        Command::Calibrate(a) => calibrate_cmd(config, a),
        Command::Serve(a) => serve_cmd(config, a),
    }
}

/// Explicit `--config`, then the environment variable, then `fallback`
/// (a checkpoint's embedded config) or the built-in defaults.
fn resolve_config(explicit: Option<&Path>, fallback: Option<&RunConfig>) -> Result<RunConfig> {
    match resolve_config_path(explicit) {
        Some(path) => {
            if !path.is_file() {
                return Err(UsageError(format!("config file not found: {}", path.display())).into());
            }
            load_config(&path).map_err(|e| UsageError(e.to_string()).into())
        }
        None => Ok(fallback.cloned().unwrap_or_default()),
    }
}

/// Validate after flag overrides and announce the digest.
fn finalize(cfg: RunConfig) -> Result<RunConfig> {
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    eprintln!("config digest {}", cfg.digest());
    Ok(cfg)
}

fn load_checkpoint(path: &Path) -> Result<PolicyCheckpoint> {
    PolicyCheckpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn train_cmd(config: Option<&Path>, a: TrainArgs) -> Result<()> {
    let mut cfg = resolve_config(config, None)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(steps) = a.steps {
        cfg.ppo.total_steps = steps;
    }
    if let Some(target) = a.target {
        cfg.reward.target_end = target.into();
    }
    let cfg = finalize(cfg)?;
    let ck = train(&cfg)?;
    ck.save(&a.out)?;
    let curve_path = a.curve.unwrap_or_else(|| a.out.with_extension("curve.tsv"));
    let mut curve = String::from("step\tr_bar\n");
    for p in &ck.curve {
        let _ = writeln!(curve, "{}\t{}", p.step, p.r_bar);
    }
    std::fs::write(&curve_path, curve).with_context(|| format!("writing {}", curve_path.display()))?;
    println!("{}", ck.id());
    Ok(())
}

#[derive(Debug, Clone)]
struct SweepJob {
    cell: usize,
    config: RunConfig,
}

fn sweep_cmd(config: Option<&Path>, a: SweepArgs) -> Result<()> {
    let base = finalize(resolve_config(config, None)?)?;
    let t_prime = a.eval_steps.unwrap_or(base.ppo.eval_len);
    if t_prime == 0 {
        return Err(UsageError("--eval-steps must be positive".into()).into());
    }
    let mut cells = Vec::new();
    let mut jobs = Vec::new();
    for &reward in &a.betas {
        for &p in &a.ps {
            for &steps in &a.steps_grid {
                for i in 0..a.trials {
                    let mut c = base.clone();
                    c.seed = a.seed_base + i;
                    c.sim.p_ignore = p;
                    c.ppo.total_steps = steps;
                    match reward {
                        RewardCell::Beta(b) => {
                            c.reward.mode = RewardMode::Composite;
                            c.reward.beta = b;
                        }
                        RewardCell::Baseline => c.reward.mode = RewardMode::Baseline,
                    }
                    c.validate().map_err(|e| UsageError(e.to_string()))?;
                    jobs.push(SweepJob { cell: cells.len(), config: c });
                }
                cells.push((reward, p, steps));
            }
        }
    }

    let results = Exec::default().map(&jobs, |job| -> Result<f64> {
        let ck = train(&job.config)?;
        Ok(evaluate(&ck, &job.config, t_prime, job.config.seed)?)
    });
    let mut per_cell = vec![Vec::new(); cells.len()];
    for (job, r) in jobs.iter().zip(results) {
        per_cell[job.cell].push(r.with_context(|| format!("sweep seed {}", job.config.seed))?);
    }

    let mut table = String::from("reward\tp\tsteps\ttrials\tmean_r_bar");
    for i in 0..a.trials {
        let _ = write!(table, "\tr_bar_seed{}", a.seed_base + i);
    }
    table.push('\n');
    for ((reward, p, steps), values) in cells.iter().zip(&per_cell) {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let _ = write!(table, "{reward}\t{p}\t{steps}\t{}\t{mean}", values.len());
        for v in values {
            let _ = write!(table, "\t{v}");
        }
        table.push('\n');
    }
    std::fs::write(&a.out, &table).with_context(|| format!("writing {}", a.out.display()))?;
    print!("{table}");
    Ok(())
}

fn evaluate_cmd(config: Option<&Path>, a: EvaluateArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let mut cfg = resolve_config(config, Some(&ck.config))?;
    if let Some(p) = a.p {
        cfg.sim.p_ignore = p;
    }
    let cfg = finalize(cfg)?;
    let t_prime = a.eval_steps.unwrap_or(cfg.ppo.eval_len);
    let r = evaluate(&ck, &cfg, t_prime, a.seed)?;
    println!("{r}");
    Ok(())
}

/// Both checkpoints plus the session config, which defaults to the
/// right-hand checkpoint's embedded one.
fn protocol_setup(
    config: Option<&Path>,
    p: &ProtocolArgs,
    seed: Option<u64>,
) -> Result<(RunConfig, SessionPolicies)> {
    let left = load_checkpoint(&p.checkpoint_left)?;
    let right = load_checkpoint(&p.checkpoint_right)?;
    let mut cfg = resolve_config(config, Some(&right.config))?;
    if let Some(steps) = p.steps {
        cfg.protocol.total_steps = steps;
    }
    if let Some(every) = p.switch_every {
        cfg.protocol.switch_every = every;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let cfg = finalize(cfg)?;
    let policies = SessionPolicies::from_checkpoints(&left, &right)?;
    Ok((cfg, policies))
}

fn bridge_config(cfg: &RunConfig, live: &LiveArgs) -> BridgeConfig {
    BridgeConfig {
        control_period: Duration::from_secs_f64(cfg.protocol.step_duration),
        staleness_limit: Duration::from_millis(live.staleness_ms),
        lockstep: live.lockstep,
        ..BridgeConfig::default()
    }
}

fn serve_live(cfg: &RunConfig, policies: SessionPolicies, live: &LiveArgs, log: Option<PathBuf>) -> Result<()> {
    let addr: SocketAddr = format!("{}:{}", live.host, live.port)
        .parse()
        .map_err(|e| UsageError(format!("bad listen address {}:{}: {e}", live.host, live.port)))?;
    let bridge = bridge_config(cfg, live);
    let rt = tokio::runtime::Runtime::new()?;
    let session = rt.block_on(async {
        let server = shoalguide_bridge::BridgeServer::bind(addr).await?;
        eprintln!("listening on ws://{}", server.local_addr()?);
        server.run(cfg, policies, &bridge, log.as_deref()).await
    })?;
    let summary = summarize(&session, cfg.protocol.total_steps);
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn session_cmd(config: Option<&Path>, a: SessionArgs) -> Result<()> {
    let (cfg, policies) = protocol_setup(config, &a.protocol, a.seed)?;
    match a.source {
        Source::Sim => {
            let mut school = SimulatedSchool::new(&cfg.sim, cfg.seed);
            let log = run_session(&cfg, policies, &mut school)?;
            write_log(&log, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
            let summary = summarize(&log, cfg.protocol.total_steps);
            println!("{}", serde_json::to_string(&summary)?);
            Ok(())
        }
        Source::Live => serve_live(&cfg, policies, &a.live, Some(a.out)),
    }
}

fn serve_cmd(config: Option<&Path>, a: ServeArgs) -> Result<()> {
    let (cfg, policies) = protocol_setup(config, &a.protocol, None)?;
    serve_live(&cfg, policies, &a.live, a.log)
}

fn report_cmd(config: Option<&Path>, a: ReportArgs) -> Result<()> {
    finalize(resolve_config(config, None)?)?;
    if a.bins == 0 {
        return Err(UsageError("--bins must be positive".into()).into());
    }
    let mut logs = Vec::new();
    for path in &a.logs {
        let (log, warning) = read_log(path).with_context(|| format!("reading {}", path.display()))?;
        if let Some(w) = warning {
            eprintln!("warning: {}: {w}", path.display());
        }
        logs.push(log);
    }
    let report = emit_report(&[(a.condition, logs)], &a.out, a.bins)?;
    let table = std::fs::read_to_string(report.files.first().context("report wrote no files")?)?;
    print!("{table}");
    Ok(())
}

fn calibrate_cmd(config: Option<&Path>, a: CalibrateArgs) -> Result<()> {
    finalize(resolve_config(config, None)?)?;
    let file = CalibrationFile::read(&a.input)?;
    let result = calibrate(&file)?;
    let text = toml::to_string(&result)?;
    if let Some(out) = &a.out {
        std::fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
    }
    print!("{text}");
    if !result.residual_sum_sq.is_finite() {
        bail!("calibration residual is not finite");
    }
    Ok(())
}
