use std::net::IpAddr;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::Context;
use clap::Parser;
use tracing_subscriber::EnvFilter;
use trustnet_server::{ServerConfig, Settings};

/// Serves the assessment, status and link-resolution API.
#[derive(Debug, Parser)]
#[command(name = "trustnet-server", version)]
struct Args {
    #[arg(long, default_value_t = 8080, env = "TRUSTNET_PORT")]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
    /// SQLite database file; created if missing.
    #[arg(long, default_value = "trustnet.db", env = "TRUSTNET_DB")]
    db_path: PathBuf,
    /// Query-parameter and host-alias rules; reloaded on SIGHUP.
    #[arg(long)]
    policy_file: Option<PathBuf>,
    /// Most fetches spent following one redirect chain.
    #[arg(long, default_value_t = trustnet_resolver::DEFAULT_MAX_DEPTH)]
    max_depth: usize,
    /// Link mappings not requested for this long are discarded (e.g. "7d", "36h").
    #[arg(long, default_value = "7d", value_parser = humantime::parse_duration)]
    mapping_ttl: Duration,
    /// How often stale mappings and sessions are purged.
    #[arg(long, default_value = "1h", value_parser = humantime::parse_duration)]
    maintenance_interval: Duration,
    /// Allow server-side resolution of loopback and private addresses.
    #[arg(long)]
    allow_private_targets: bool,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| EnvFilter::new("info,tower_http=info")),
        )
        .init();
    let args = Args::parse();
    if args.max_depth == 0 {
        anyhow::bail!("--max-depth must be at least 1");
    }
    let config = ServerConfig {
        bind: args.bind,
        port: args.port,
        db_path: Some(args.db_path),
        policy_file: args.policy_file.clone(),
        settings: Settings {
            max_depth: args.max_depth,
            mapping_ttl: chrono::Duration::from_std(args.mapping_ttl)
                .context("--mapping-ttl out of range")?,
            allow_private_targets: args.allow_private_targets,
            ..Settings::default()
        },
        maintenance_interval: args.maintenance_interval,
        ..ServerConfig::default()
    };
    let server = trustnet_server::start(config).await?;
    let stop = server.stop_handle();
    let policies = server.state.shared_policies().clone();
    let policy_file = args.policy_file;

    tokio::spawn(async move {
        shutdown_signal().await;
        tracing::info!("shutting down");
        let _ = stop.send(true);
    });
    #[cfg(unix)]
    if let Some(path) = policy_file {
        tokio::spawn(async move {
            use tokio::signal::unix::{signal, SignalKind};
            let Ok(mut hup) = signal(SignalKind::hangup()) else {
                return;
            };
            while hup.recv().await.is_some() {
                let reloaded = std::fs::read_to_string(&path)
                    .map_err(anyhow::Error::from)
                    .and_then(|text| policies.reload(&text).map_err(anyhow::Error::from));
                match reloaded {
                    Ok(()) => tracing::info!(path = %path.display(), "policy file reloaded"),
                    Err(e) => {
                        tracing::error!(error = %e, "policy reload failed; keeping previous rules")
                    }
                }
            }
        });
    }
    server.wait().await
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        if let Ok(mut s) = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate())
        {
            s.recv().await;
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
