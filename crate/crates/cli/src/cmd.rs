use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use blendmas_core::crypto::{Account, Address};
use blendmas_runtime::chain_client::ChainClient;
use blendmas_runtime::config::{self, NodeConfig, OracleConfig, ServiceKind, ServicesConfig};
use blendmas_runtime::oracle::{start_oracle, OracleClient};
use blendmas_runtime::replay::{fetch_chain, replay, TxLog};
use blendmas_runtime::util::write_atomic;
use clap::{Args, Parser, Subcommand};

use crate::bench::BenchCmd;

const DEFAULT_ORACLE_URL: &str = "http://127.0.0.1:8540";

#[derive(Parser)]
#[command(name = "blendmas", version, about = "Permissioned chain with access-control microservices")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run or administer the membership oracle.
    Oracle {
        #[command(subcommand)]
        cmd: OracleCmd,
    },
    /// Run a mining node.
    Node {
        #[command(subcommand)]
        cmd: RunCmd,
    },
    /// Run the security services.
    Services {
        #[command(subcommand)]
        cmd: ServicesCmd,
    },
    /// Provision networks and run latency experiments.
    Bench {
        #[command(subcommand)]
        cmd: BenchCmd,
    },
    /// Generate a key file and print its address.
    Keygen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-execute a chain's transactions from genesis and print the state root.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// Config file; BLENDMAS_CONFIG takes precedence when set.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn path(&self) -> Result<PathBuf> {
        std::env::var_os("BLENDMAS_CONFIG")
            .map(PathBuf::from)
            .or_else(|| self.config.clone())
            .context("no config file: pass --config or set BLENDMAS_CONFIG")
    }
}

#[derive(Subcommand)]
enum RunCmd {
    Run(ConfigArg),
}

#[derive(Subcommand)]
enum ServicesCmd {
    Run {
        #[command(flatten)]
        config: ConfigArg,
        /// Host a single service (micro mode, one process per service).
        #[arg(long)]
        only: Option<ServiceKind>,
    },
}

#[derive(Args)]
struct UrlArg {
    #[arg(long, default_value = DEFAULT_ORACLE_URL)]
    url: String,
}

#[derive(Subcommand)]
enum OracleCmd {
    Run(ConfigArg),
    /// List join requests.
    Pending(UrlArg),
    /// Approve a join request awaiting admin.
    Approve {
        id: u64,
        #[command(flatten)]
        url: UrlArg,
    },
    /// Revoke a member and publish a new roster.
    Revoke {
        address: Address,
        #[arg(long)]
        reason: String,
        #[command(flatten)]
        url: UrlArg,
    },
    /// Lift a ban so the address may rejoin.
    ClearBan {
        address: Address,
        #[command(flatten)]
        url: UrlArg,
    },
    /// Print the current signed roster.
    Roster(UrlArg),
}

#[derive(Args)]
struct ReplayArgs {
    /// Node RPC to download the chain from.
    #[arg(long, conflicts_with = "log")]
    node: Option<String>,
    /// Transaction log written by `--save-log`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    save_log: Option<PathBuf>,
    /// Number of independent replays to compare.
    #[arg(long, default_value_t = 1)]
    repeat: usize,
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

async fn wait_for_ctrl_c() -> Result<()> {
    tokio::signal::ctrl_c().await?;
    Ok(())
}

pub async fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Oracle { cmd } => oracle(cmd).await?,
        Command::Node { cmd: RunCmd::Run(c) } => {
            let cfg: NodeConfig = config::load(&c.path()?)?;
            let handle = blendmas_runtime::node::start_node(cfg).await?;
            println!("node {} rpc {}", handle.address(), handle.rpc_url());
            wait_for_ctrl_c().await?;
        }
        Command::Services {
            cmd: ServicesCmd::Run { config: c, only },
        } => {
            let cfg: ServicesConfig = config::load(&c.path()?)?;
            let handle = blendmas_runtime::services::start_services(cfg, only).await?;
            for (k, url) in &handle.urls {
                println!("{} {url}", k.as_str());
            }
            wait_for_ctrl_c().await?;
        }
        Command::Bench { cmd } => return crate::bench::run(cmd).await,
        Command::Keygen { out } => {
            let account = Account::generate();
            write_atomic(&out, account.secret_hex().as_bytes())?;
            println!("{}", account.address());
        }
        Command::Replay(args) => return replay_cmd(args).await,
    }
    Ok(ExitCode::SUCCESS)
}

async fn oracle(cmd: OracleCmd) -> Result<()> {
    match cmd {
        OracleCmd::Run(c) => {
            let cfg: OracleConfig = config::load(&c.path()?)?;
            let handle = start_oracle(cfg).await?;
            println!("oracle {} on {}", handle.public_key.address(), handle.url());
            wait_for_ctrl_c().await?;
        }
        OracleCmd::Pending(u) => print_json(&OracleClient::new(u.url).pending().await?)?,
        OracleCmd::Approve { id, url } => print_json(&OracleClient::new(url.url).approve(id).await?)?,
        OracleCmd::Revoke { address, reason, url } => {
            print_json(&OracleClient::new(url.url).revoke(address, &reason).await?)?
        }
        OracleCmd::ClearBan { address, url } => print_json(&OracleClient::new(url.url).clear_ban(address).await?)?,
        OracleCmd::Roster(u) => println!("{}", OracleClient::new(u.url).roster().await?.to_json_pretty()),
    }
    Ok(())
}

async fn load_log(args: &ReplayArgs) -> Result<(TxLog, Option<blendmas_core::crypto::Hash>)> {
    match (&args.node, &args.log) {
        (Some(url), _) => {
            let blocks = fetch_chain(&ChainClient::new(url.clone())).await?;
            let head_root = blocks.last().map(|b| b.header.state_root);
            Ok((TxLog::from_blocks(&blocks), head_root))
        }
        (None, Some(path)) => Ok((TxLog::load(path)?, None)),
        (None, None) => anyhow::bail!("pass --node or --log"),
    }
}

fn save(log: &TxLog, path: &Path) -> Result<()> {
    log.save(path)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

async fn replay_cmd(args: ReplayArgs) -> Result<ExitCode> {
    let (log, head_root) = load_log(&args).await?;
    if let Some(p) = &args.save_log {
        save(&log, p)?;
    }
    let mut roots = Vec::new();
    for i in 0..args.repeat.max(1) {
        let report = replay(&log)?;
        println!(
            "replay {i}: height {} txs {} state_root {}",
            report.height, report.transactions, report.state_root
        );
        roots.push(report.state_root);
    }
    let consistent = roots.windows(2).all(|w| w[0] == w[1]);
    let matches_head = head_root.is_none_or(|h| h == roots[0]);
    if let Some(h) = head_root {
        println!("node head state_root {h}");
    }
    if consistent && matches_head {
        println!("replays agree");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("replays disagree");
        Ok(ExitCode::FAILURE)
    }
}
