//! Hub daemon: routes over node daemons and serves clients, optionally with
//! the WebSocket gateway.

use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use fiddle::hub::{serve_gateway, serve_hub, Hub};
use fiddle::remote::L1Session;

#[derive(Parser)]
#[command(version, about = "Run the fiddle hub")]
struct Args {
    #[arg(long, default_value = "127.0.0.1:7000")]
    listen: String,
    /// HTTP address for the browser gateway.
    #[arg(long, env = "FIDDLE_GATEWAY")]
    gateway: Option<String>,
    /// Node daemons to route over, in tid assignment order.
    #[arg(long = "node", num_args = 1.., required = true)]
    nodes: Vec<String>,
    /// Static files served by the gateway instead of the built-in page.
    #[arg(long)]
    webui: Option<PathBuf>,
}

fn main() -> anyhow::Result<()> {
    fiddle_cli::init_logging();
    let args = Args::parse();
    let l1 = L1Session::new();
    for node in &args.nodes {
        l1.register_node(node).with_context(|| format!("register node {node}"))?;
    }
    let hub = Hub::new(l1);
    let server = serve_hub(hub.clone(), args.listen.as_str()).with_context(|| format!("listen on {}", args.listen))?;
    println!("hub listening on {}", server.local_addr());
    if let Some(addr) = &args.gateway {
        let gw = serve_gateway(hub, addr.as_str(), args.webui).with_context(|| format!("gateway on {addr}"))?;
        println!("gateway on http://{}/", gw.local_addr());
    }
    fiddle_cli::park()
}
