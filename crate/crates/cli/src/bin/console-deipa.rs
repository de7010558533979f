//! Deipa console: replays a TeSS script against the hub.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::Parser;
use fiddle::client::Client;
use fiddle::deipa::{Deipa, DeipaError};
use fiddle::launcher::{ENV_DEIPA, ENV_HUB};
use fiddle::wire::{DeliveryMode, Role};

#[derive(Parser)]
#[command(version, about = "Drive a program through a TeSS breakpoint script")]
struct Args {
    /// Script to open at startup.
    file: Option<PathBuf>,
    #[arg(long, env = ENV_HUB, default_value = "127.0.0.1:7000")]
    hub: String,
    /// Seconds each process may take to reach its breakpoint.
    #[arg(long, default_value_t = 10.0)]
    timeout: f64,
    /// Address launchers announce spawned processes to.
    #[arg(long, env = ENV_DEIPA, default_value = "127.0.0.1:7002")]
    announce: String,
}

const HELP: &str = "\
open PATH   load a TeSS script
run         start the program and reach the first global breakpoint
step        advance to the next global breakpoint
state       show where every process is
release     clear Deipa breakpoints and let everything run
quit        leave";

fn print_lines(lines: &[String]) {
    for l in lines {
        println!("{l}");
    }
}

fn report(result: Result<Vec<String>, DeipaError>) {
    match result {
        Ok(lines) => print_lines(&lines),
        Err(e) => {
            print_lines(e.output());
            println!("! {e}");
        }
    }
}

fn open(deipa: &mut Deipa, path: &Path) {
    match deipa.open(path) {
        Ok(n) => println!("{}: {n} global breakpoints", path.display()),
        Err(e) => println!("! {e}"),
    }
}

fn main() -> anyhow::Result<()> {
    fiddle_cli::init_logging();
    let args = Args::parse();
    let client = Client::connect(args.hub.as_str(), Role::Tool, DeliveryMode::Blocking)
        .with_context(|| format!("connect to hub {}", args.hub))?;
    let mut deipa = Deipa::new(Arc::new(client));
    deipa.set_timeout(Duration::from_secs_f64(args.timeout));
    let bound = deipa.listen(args.announce.as_str()).with_context(|| format!("listen on {}", args.announce))?;
    println!("announcements on {bound}");
    if let Some(path) = &args.file {
        open(&mut deipa, path);
    }
    fiddle_cli::repl("deipa> ", |line| {
        let (cmd, rest) = line.split_once(' ').map(|(c, r)| (c, r.trim())).unwrap_or((line, ""));
        match cmd {
            "" => {}
            "open" if !rest.is_empty() => open(&mut deipa, Path::new(rest)),
            "run" => report(deipa.run()),
            "step" => report(deipa.step()),
            "state" => print_lines(&deipa.state()),
            "release" => match deipa.release() {
                Ok(vids) => println!("released {vids:?}"),
                Err(e) => println!("! {}", e.code),
            },
            "help" => println!("{HELP}"),
            "quit" => return false,
            other => println!("! unknown command `{other}`"),
        }
        true
    })?;
    Ok(())
}
