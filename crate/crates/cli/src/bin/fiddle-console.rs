//! Interactive console at layer 0 (embedded engine), 1 (node routing) or
//! 2 (hub).

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::Parser;
use fiddle::client::Client;
use fiddle::console::{Console, Outcome};
use fiddle::engine::LocalSession;
use fiddle::launcher::{ENV_HUB, ENV_NODE};
use fiddle::remote::L1Session;
use fiddle::service::Endpoint;
use fiddle::wire::{DeliveryMode, EventKind, Role};

#[derive(Parser)]
#[command(version, about = "Text console for one debugging layer")]
struct Args {
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(0..=2))]
    layer: u8,
    #[arg(long, env = ENV_HUB)]
    hub: Option<String>,
    /// Node daemons for layer 1.
    #[arg(long, env = ENV_NODE, num_args = 1..)]
    node: Vec<String>,
    /// Program directory for the layer-0 engine.
    #[arg(long)]
    programs: Option<PathBuf>,
    /// Program the layer-0 engine starts.
    #[arg(long)]
    start: Option<String>,
}

fn endpoint(args: &Args) -> anyhow::Result<Arc<dyn Endpoint>> {
    Ok(match args.layer {
        0 => {
            let engine = fiddle_cli::engine(args.programs.clone());
            if let Some(program) = &args.start {
                let tid = engine.start(program).with_context(|| format!("start {program}"))?;
                println!("started {program} as tid {tid}");
            }
            Arc::new(LocalSession::new(engine))
        }
        1 => {
            if args.node.is_empty() {
                bail!("layer 1 needs --node");
            }
            let l1 = L1Session::new();
            for n in &args.node {
                l1.register_node(n).with_context(|| format!("connect to node {n}"))?;
            }
            Arc::new(l1)
        }
        _ => {
            let hub = args.hub.as_deref().context("layer 2 needs --hub")?;
            let client = Client::connect(hub, Role::Tool, DeliveryMode::EventAsync)
                .with_context(|| format!("connect to hub {hub}"))?;
            client.set_handler(|_, rec| {
                if rec.event != EventKind::Reply {
                    println!("\n[{}] {}", event_name(rec.event), rec.body);
                }
            });
            Arc::new(client)
        }
    })
}

fn event_name(kind: EventKind) -> String {
    format!("{kind:?}").to_lowercase()
}

fn main() -> anyhow::Result<()> {
    fiddle_cli::init_logging();
    let args = Args::parse();
    let console = Console::new(endpoint(&args)?, args.layer);
    println!("{}", console.banner());
    fiddle_cli::repl(&console.prompt(), |line| match console.handle_line(line) {
        Some(Outcome::Text(t)) => {
            println!("{t}");
            true
        }
        Some(Outcome::Quit) => false,
        None => true,
    })?;
    Ok(())
}
