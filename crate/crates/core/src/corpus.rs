//! The echo client/server programs and their behavior specification,
//! embedded for tests and for writing out a fresh programs directory.

use std::io;
use std::path::Path;

use crate::minipvm::Program;

pub const ECHO_CLIENT: &str = include_str!("../corpus/echo_client.mpl");
pub const ECHO_SERVER: &str = include_str!("../corpus/echo_server.mpl");
pub const ECHO_EXAMPLE_TES: &str = include_str!("../corpus/echo_example.tes");

/// Writes `echo_client.mpl`, `echo_server.mpl` and `echo_example.tes` into `dir`.
pub fn install(dir: &Path) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("echo_client.mpl"), ECHO_CLIENT)?;
    std::fs::write(dir.join("echo_server.mpl"), ECHO_SERVER)?;
    std::fs::write(dir.join("echo_example.tes"), ECHO_EXAMPLE_TES)?;
    Ok(())
}

/// Both echo programs, parsed.
pub fn programs() -> Vec<Program> {
    [("echo_client", ECHO_CLIENT), ("echo_server", ECHO_SERVER)]
        .into_iter()
        .map(|(name, src)| Program::parse(src, name).expect("corpus programs parse"))
        .collect()
}
