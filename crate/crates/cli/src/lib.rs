//! Shared plumbing for the command-line tools.

use std::io::{self, BufRead, Write};
use std::path::PathBuf;

use fiddle::corpus;
use fiddle::engine::Engine;

pub fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
}

/// Engine over `programs`, or over the built-in echo programs when no
/// directory is given.
pub fn engine(programs: Option<PathBuf>) -> Engine {
    let builtin = programs.is_none();
    let engine = Engine::new(programs);
    if builtin {
        for p in corpus::programs() {
            engine.add_program(p);
        }
    }
    engine
}

/// Reads stdin line by line, printing `prompt` before each line, until
/// `handle` returns false or input ends.
pub fn repl(prompt: &str, mut handle: impl FnMut(&str) -> bool) -> io::Result<()> {
    let stdin = io::stdin();
    let mut lines = stdin.lock().lines();
    loop {
        print!("{prompt}");
        io::stdout().flush()?;
        let Some(line) = lines.next().transpose()? else {
            println!();
            return Ok(());
        };
        if !handle(line.trim()) {
            return Ok(());
        }
    }
}

/// Blocks the calling thread for good; daemons stop on a signal.
pub fn park() -> ! {
    loop {
        std::thread::park();
    }
}
