//! Node daemon: one local engine served over the envelope protocol.

use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use fiddle::launcher::{LauncherConfig, ENV_DEIPA, ENV_HUB};
use fiddle::remote::serve_node;
use fiddle::wire::EventKind;

#[derive(Parser)]
#[command(version, about = "Serve a local debugging engine")]
struct Args {
    /// Directory holding `<program>.mpl` files; the built-in echo programs
    /// are used when absent.
    #[arg(long)]
    programs: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:7001")]
    listen: String,
    /// Program to start, stopped at its first line.
    #[arg(long)]
    start: Option<String>,
    /// Hub the launcher registers spawned processes with.
    #[arg(long, env = ENV_HUB)]
    hub: Option<String>,
    /// Deipa instance the launcher announces spawned processes to.
    #[arg(long, env = ENV_DEIPA)]
    deipa: Option<String>,
}

fn main() -> anyhow::Result<()> {
    fiddle_cli::init_logging();
    let args = Args::parse();
    let engine = fiddle_cli::engine(args.programs);
    let server = serve_node(engine.clone(), args.listen.as_str()).with_context(|| format!("listen on {}", args.listen))?;
    // the hub knows this node by the address it was given, so keep the
    // caller's spelling unless the port was picked by the system
    let advertised = if args.listen.ends_with(":0") { server.local_addr().to_string() } else { args.listen.clone() };
    engine.set_launcher(LauncherConfig { node: Some(advertised.clone()), hub: args.hub, deipa: args.deipa, ..Default::default() });
    println!("node listening on {advertised}");
    let events = engine.subscribe();
    std::thread::spawn(move || {
        for ev in events {
            if ev.kind == EventKind::Output {
                println!("[tid {}] {}", ev.tid, ev.body["text"].as_str().unwrap_or_default());
            }
        }
    });
    if let Some(program) = args.start {
        let tid = engine.start(&program).with_context(|| format!("start {program}"))?;
        println!("started {program} as tid {tid}");
    }
    fiddle_cli::park()
}
