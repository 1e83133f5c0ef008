//! `swarmdesk`: run the scanner, inspect and evaluate its record store.
//!
//! Every configuration key is also a global flag (`KELLY_FRACTION` becomes
//! `--kelly-fraction`). Precedence is flag, then environment, then the
//! `--config` file, then the built-in default.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use chrono::{DateTime, NaiveDate, Utc};
use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches, Command};
use serde_json::json;
use swarmdesk_core::config::{Config, ConfigError, Settings, KEYS};
use swarmdesk_core::engine::{build_engine, open_store, restore_from_store, BuildError};
use swarmdesk_core::evaluation::{build_forecast_records, evaluate, BinMode, ForecastSource};
use swarmdesk_core::persistence::{
    ConsensusRecord, PredictionRecord, Query, ResolutionRecord, Store, Table,
};
use tokio::sync::watch;
use tracing::{error, info};

fn flag_name(key: &str) -> String {
    key.to_ascii_lowercase().replace('_', "-")
}

fn command() -> Command {
    let mut cmd = Command::new("swarmdesk")
        .about("Swarm-forecast prediction market scanner and paper trader")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .global(true)
                .help("KEY = value configuration file"),
        );
    for k in KEYS {
        let long: &'static str = Box::leak(flag_name(k.name).into_boxed_str());
        cmd = cmd.arg(
            Arg::new(k.name)
                .long(long)
                .value_name("VALUE")
                .global(true)
                .hide_short_help(true)
                .help(format!("{} [default: {}]", k.help, k.default)),
        );
    }
    let time_args = [
        Arg::new("from").long("from").value_name("TIME").help("inclusive start: unix millis, RFC 3339 or YYYY-MM-DD"),
        Arg::new("to").long("to").value_name("TIME").help("inclusive end: unix millis, RFC 3339 or YYYY-MM-DD"),
    ];
    cmd.subcommand(
        Command::new("run")
            .about("Run the scan loop and the REST/WebSocket control plane")
            .arg(
                Arg::new("no-server")
                    .long("no-server")
                    .action(ArgAction::SetTrue)
                    .help("do not start the control plane"),
            ),
    )
    .subcommand(
        Command::new("evaluate")
            .about("Score resolved forecasts from the record store")
            .args(time_args.clone())
            .arg(
                Arg::new("source")
                    .long("source")
                    .default_value("swarm")
                    .help("swarm, combined, market, agent or agent:<persona id>"),
            )
            .arg(Arg::new("bins").long("bins").default_value("10").value_parser(clap::value_parser!(usize)))
            .arg(
                Arg::new("bin-mode")
                    .long("bin-mode")
                    .default_value("equal_width")
                    .value_parser(["equal_width", "equal_mass"]),
            )
            .arg(Arg::new("csv").long("csv").value_name("PATH").help("also write the calibration table as CSV")),
    )
    .subcommand(
        Command::new("export")
            .about("Write every table as JSONL into a directory")
            .args(time_args)
            .arg(Arg::new("market").long("market").value_name("ID"))
            .arg(Arg::new("out").long("out").value_name("DIR").required(true)),
    )
    .subcommand(
        Command::new("replay")
            .about("Rebuild ledger and risk state from stored events")
            .arg(
                Arg::new("from-seq")
                    .long("from-seq")
                    .default_value("0")
                    .value_parser(clap::value_parser!(u64)),
            )
            .arg(
                Arg::new("into")
                    .long("into")
                    .value_name("DIR")
                    .help("copy the replayed records into a fresh store at DIR"),
            ),
    )
    .subcommand(Command::new("check-config").about("Print the effective configuration and validate it"))
    .subcommand(
        Command::new("compact")
            .about("Archive records of resolved markets older than the horizon")
            .arg(
                Arg::new("horizon-days")
                    .long("horizon-days")
                    .default_value("30")
                    .value_parser(clap::value_parser!(u32)),
            )
            .arg(Arg::new("archive").long("archive").value_name("DIR").required(true)),
    )
}

fn load_config(m: &ArgMatches) -> Result<Config, ConfigError> {
    let flags: Vec<(String, String)> = KEYS
        .iter()
        .filter(|k| m.value_source(k.name) == Some(ValueSource::CommandLine))
        .filter_map(|k| m.get_one::<String>(k.name).map(|v| (k.name.to_owned(), v.clone())))
        .collect();
    let file = m.get_one::<String>("config").map(PathBuf::from);
    Config::load(file.as_deref(), std::env::vars(), &flags)
}

fn parse_time(s: &str) -> Result<i64> {
    let s = s.trim();
    if let Ok(ms) = s.parse::<i64>() {
        return Ok(ms);
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.timestamp_millis());
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp_millis());
    }
    bail!("cannot parse time {s:?}")
}

fn time_arg(m: &ArgMatches, name: &str) -> Result<Option<i64>> {
    m.get_one::<String>(name).map(|s| parse_time(s)).transpose()
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json values serialize"));
}

async fn cmd_run(settings: Settings, m: &ArgMatches) -> Result<()> {
    let engine = build_engine(settings).await?;
    let (stop_tx, stop_rx) = watch::channel(false);
    let server = if m.get_flag("no-server") {
        None
    } else {
        let addr = engine.settings().server.listen_addr.clone();
        let mut rx = stop_rx.clone();
        let shutdown = async move {
            let _ = rx.wait_for(|s| *s).await;
        };
        let e = engine.clone();
        Some(tokio::spawn(async move {
            if let Err(err) = swarmdesk_server::serve(e, &addr, |_| {}, shutdown).await {
                error!(%err, "control plane stopped");
            }
        }))
    };
    let ctrl_c = {
        let tx = stop_tx.clone();
        tokio::spawn(async move {
            if tokio::signal::ctrl_c().await.is_ok() {
                info!("interrupt received, finishing current cycle");
                let _ = tx.send(true);
            }
        })
    };
    let cycles = engine
        .run(Some(stop_rx), |r, _| {
            info!(
                cycle = r.cycle_id,
                fetched = r.markets_fetched,
                evaluated = r.markets_evaluated,
                signals = r.signals_emitted,
                trades = r.trades_executed,
                skipped = ?r.skipped,
                "cycle done"
            );
        })
        .await;
    let _ = stop_tx.send(true);
    ctrl_c.abort();
    if let Some(s) = server {
        let _ = s.await;
    }
    print_json(&json!({ "cycles": cycles, "pnl": engine.pnl() }));
    Ok(())
}

fn load_typed(store: &Store) -> Result<(Vec<ConsensusRecord>, Vec<PredictionRecord>, Vec<ResolutionRecord>)> {
    let q = Query::all();
    Ok((store.query_typed(&q)?, store.query_typed(&q)?, store.query_typed(&q)?))
}

fn cmd_evaluate(settings: &Settings, m: &ArgMatches) -> Result<()> {
    let source: ForecastSource = m
        .get_one::<String>("source")
        .expect("defaulted")
        .parse()
        .map_err(|e| anyhow!("{e}"))?;
    let mode = match m.get_one::<String>("bin-mode").map(String::as_str) {
        Some("equal_mass") => BinMode::EqualMass,
        _ => BinMode::EqualWidth,
    };
    let bins = *m.get_one::<usize>("bins").expect("defaulted");
    let store = open_store(settings)?;
    let (consensus, predictions, resolutions) = load_typed(&store)?;
    let records = build_forecast_records(
        &source,
        &consensus,
        &predictions,
        &resolutions,
        time_arg(m, "from")?,
        time_arg(m, "to")?,
    );
    let report = evaluate(source, &records, bins, mode).context("no resolved forecasts in range")?;
    if let Some(path) = m.get_one::<String>("csv") {
        std::fs::write(path, report.calibration.to_csv()).with_context(|| format!("writing {path}"))?;
    }
    print_json(&serde_json::to_value(&report)?);
    Ok(())
}

fn cmd_export(settings: &Settings, m: &ArgMatches) -> Result<()> {
    let store = open_store(settings)?;
    let q = Query {
        from_ts: time_arg(m, "from")?,
        to_ts: time_arg(m, "to")?,
        market_id: m.get_one::<String>("market").cloned(),
        ..Query::default()
    };
    let out = Path::new(m.get_one::<String>("out").expect("required"));
    let counts = store.export(out, &q)?;
    let counts: serde_json::Map<_, _> = counts.into_iter().map(|(t, n)| (t.as_str().to_owned(), json!(n))).collect();
    print_json(&json!({ "dir": out, "rows": counts }));
    Ok(())
}

fn cmd_replay(settings: &Settings, m: &ArgMatches) -> Result<()> {
    let store = open_store(settings)?;
    let from_seq = *m.get_one::<u64>("from-seq").expect("defaulted");
    let records = store.replay(from_seq)?;
    let mut counts = serde_json::Map::new();
    for t in Table::ALL {
        let n = records.iter().filter(|r| r.table == t).count();
        counts.insert(t.as_str().to_owned(), json!(n));
    }
    let target = match m.get_one::<String>("into") {
        Some(dir) => {
            let fresh = Store::open_dir(dir)?;
            if fresh.next_seq() > 1 {
                bail!("{dir} already holds records; replay needs an empty store");
            }
            fresh.append_encoded(records.clone())?;
            Some(fresh)
        }
        None => None,
    };
    let restored = restore_from_store(target.as_ref().unwrap_or(&store), settings.risk.bankroll_usdc)?;
    print_json(&json!({
        "records": records.len(),
        "rows": counts,
        "last_cycle": restored.last_cycle,
        "resolved_markets": restored.resolved.len(),
        "ledger": restored.ledger.summary(),
        "conservation_gap": restored.ledger.conservation_gap(),
        "risk": restored.risk.map(|(state, carried)| json!({ "state": state, "carried_pnl_usdc": carried })),
    }));
    Ok(())
}

fn cmd_compact(settings: &Settings, m: &ArgMatches) -> Result<()> {
    let store = open_store(settings)?;
    let days = *m.get_one::<u32>("horizon-days").expect("defaulted");
    let horizon = Utc::now().timestamp_millis() - i64::from(days) * 86_400_000;
    let resolved = restore_from_store(&store, settings.risk.bankroll_usdc)?.resolved;
    let archive = Path::new(m.get_one::<String>("archive").expect("required"));
    let moved = store.compact(horizon, &resolved, archive)?;
    print_json(&json!({ "moved": moved, "horizon": horizon, "archive": archive }));
    Ok(())
}

async fn dispatch(m: ArgMatches) -> Result<()> {
    let cfg = load_config(&m)?;
    let settings = cfg.settings()?;
    match m.subcommand() {
        Some(("run", sub)) => cmd_run(settings, sub).await,
        Some(("evaluate", sub)) => cmd_evaluate(&settings, sub),
        Some(("export", sub)) => cmd_export(&settings, sub),
        Some(("replay", sub)) => cmd_replay(&settings, sub),
        Some(("check-config", _)) => {
            print!("{}", cfg.render());
            Ok(())
        }
        Some(("compact", sub)) => cmd_compact(&settings, sub),
        _ => unreachable!("subcommand_required"),
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    // clap exits with 2 on usage errors
    let matches = command().get_matches();
    match dispatch(matches).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else if matches!(e.downcast_ref::<BuildError>(), Some(BuildError::Personas { .. })) {
                ExitCode::from(1)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_valid() {
        command().debug_assert();
    }

    #[test]
    fn times_parse_in_three_forms() {
        assert_eq!(parse_time("1767225600000").unwrap(), 1_767_225_600_000);
        assert_eq!(parse_time("2026-01-01").unwrap(), 1_767_225_600_000);
        assert_eq!(parse_time("2026-01-01T00:00:00Z").unwrap(), 1_767_225_600_000);
        assert!(parse_time("yesterday").is_err());
    }
}
