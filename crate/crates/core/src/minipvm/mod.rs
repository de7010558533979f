//! Deterministic simulated message-passing runtime.
//!
//! Programs are written in MPL, a tiny line-oriented language whose
//! statements map one-to-one onto source lines, so breakpoints can address
//! them by line number. Tasks exchange integer messages through FIFO
//! mailboxes and are executed one statement at a time.

mod expr;
mod program;
mod runtime;

pub use expr::{BinOp, Expr, ExprError};
pub use program::{Line, PrintItem, Program, ProgramError, Stmt};
pub use runtime::{Message, Runtime, RuntimeError, SpawnMode, StepOutcome, Task, TaskStatus, Tid};
